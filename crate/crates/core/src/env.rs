//! The layer-walk decision process: one step per conv/fc layer.

use log::warn;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::layer::{Layer, LayerKind};
use crate::nn::model::Model;
use crate::prune::{apply_channel_prune, keep_count, lasso_channel_select, reconstruct_weights, sample_patches, SampleSpec};
use crate::quant::{quant_action_to_bits, quantize_layer};
use crate::scalar::Scalar;
use crate::train::evaluate;
use crate::vp::finetune::vp_finetune;
use crate::vp::loss::VpConfig;
use crate::vp::mask::{apply_layer_mask, extract_mask, prune_count};

pub const STATE_DIM: usize = 8;

/// Raw layer descriptor: `[index (1-based), N, C, kh, kw, stride, bound, flops]`.
pub type StateVector = [f64; STATE_DIM];

/// Dense FLOPs of one forward pass for a single item, 2 per multiply-accumulate.
pub fn flops_of_layer<T: Scalar>(layer: &Layer<T>, input_hw: (usize, usize)) -> u64 {
    match layer.kind {
        LayerKind::Conv => 2 * (layer.weight.len() as u64) * out_positions(layer, input_hw),
        LayerKind::Fc => 2 * layer.weight.len() as u64,
        LayerKind::InfoDrop => 0,
    }
}

/// FLOPs counting only nonzero weights.
pub fn effective_flops<T: Scalar>(layer: &Layer<T>, input_hw: (usize, usize)) -> u64 {
    match layer.kind {
        LayerKind::Conv => 2 * (layer.nonzero_weights() as u64) * out_positions(layer, input_hw),
        LayerKind::Fc => 2 * layer.nonzero_weights() as u64,
        LayerKind::InfoDrop => 0,
    }
}

fn out_positions<T: Scalar>(layer: &Layer<T>, (h, w): (usize, usize)) -> u64 {
    let (kh, kw) = layer.kernel;
    if h < kh || w < kw {
        return 0;
    }
    (((h - kh) / layer.stride + 1) * ((w - kw) / layer.stride + 1)) as u64
}

fn input_hw<T: Scalar>(model: &Model<T>, idx: usize) -> Result<(usize, usize)> {
    let s = model.layer_input_shapes()?[idx];
    Ok((s[1], s[2]))
}

/// Whole-model dense and nonzero-weight FLOPs.
pub fn model_flops<T: Scalar>(model: &Model<T>) -> Result<(u64, u64)> {
    let shapes = model.layer_input_shapes()?;
    Ok(model.layers.iter().zip(&shapes).fold((0, 0), |(d, e), (l, s)| {
        (d + flops_of_layer(l, (s[1], s[2])), e + effective_flops(l, (s[1], s[2])))
    }))
}

pub fn encode_state<T: Scalar>(model: &Model<T>, idx: usize, bound: f64) -> Result<StateVector> {
    let order = model.compressible_layers();
    let pos = order
        .iter()
        .position(|&i| i == idx)
        .ok_or_else(|| Error::invalid(format!("layer {idx} is not a conv/fc layer")))?;
    let l = &model.layers[idx];
    let (kh, kw) = if l.kind == LayerKind::Conv { l.kernel } else { (1, 1) };
    Ok([
        (pos + 1) as f64,
        l.out_channels as f64,
        l.in_channels as f64,
        kh as f64,
        kw as f64,
        l.stride as f64,
        bound,
        flops_of_layer(l, input_hw(model, idx)?) as f64,
    ])
}

/// Per-feature min–max scaling fixed from a set of states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateNormalizer {
    pub min: StateVector,
    pub max: StateVector,
}

impl StateNormalizer {
    pub fn fit(states: &[StateVector]) -> Self {
        let mut min = [f64::INFINITY; STATE_DIM];
        let mut max = [f64::NEG_INFINITY; STATE_DIM];
        for s in states {
            for k in 0..STATE_DIM {
                min[k] = min[k].min(s[k]);
                max[k] = max[k].max(s[k]);
            }
        }
        if states.is_empty() {
            min = [0.0; STATE_DIM];
            max = [0.0; STATE_DIM];
        }
        StateNormalizer { min, max }
    }

    /// Constant features map to 0.
    pub fn normalize(&self, s: &StateVector) -> StateVector {
        std::array::from_fn(|k| {
            let r = self.max[k] - self.min[k];
            if r > 0.0 { (s[k] - self.min[k]) / r } else { 0.0 }
        })
    }

    pub fn denormalize(&self, v: &StateVector) -> StateVector {
        std::array::from_fn(|k| self.min[k] + v[k] * (self.max[k] - self.min[k]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardKind {
    /// FLOPs reduction plus accuracy.
    R1,
    /// Accuracy only.
    R2,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardConfig {
    pub kind: RewardKind,
    pub flops_low: f64,
    pub flops_high: f64,
}

/// Returns the reward and whether `flops_t` had to be clamped into the bounds.
///
/// With `flops_low == flops_high` (nothing can be removed) the layer counts as
/// uncompressed and `r1 = p_ac`.
pub fn reward(cfg: &RewardConfig, flops_t: f64, p_ac: f64) -> (f64, bool) {
    match cfg.kind {
        RewardKind::R2 => (p_ac, false),
        RewardKind::R1 => {
            let (lo, hi) = (cfg.flops_low, cfg.flops_high);
            let clamped = flops_t < lo || flops_t > hi;
            let f = flops_t.clamp(lo.min(hi), hi.max(lo));
            let norm = if hi > lo { (f - lo) / (hi - lo) } else { 1.0 };
            (1.0 - norm + p_ac, clamped)
        }
    }
}

/// One transition of the environment.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvStep {
    /// Normalized next state (the current one when `done`).
    pub next_state: StateVector,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub layer: usize,
    pub layer_name: String,
    pub action: f64,
    pub accuracy: f64,
    pub flops: u64,
    pub keep_k: Option<usize>,
    pub recon_error: Option<f64>,
    pub bits: Option<u32>,
}

pub trait Environment {
    fn num_steps(&self) -> usize;
    /// Upper end of the action interval `[0, bound]`.
    fn bound(&self) -> f64;
    /// Normalized state of the current layer.
    fn state(&self) -> Result<StateVector>;
    fn step(&mut self, action: f64) -> Result<EnvStep>;
}

fn check_action(action: f64, bound: f64) -> Result<()> {
    if !action.is_finite() || action < 0.0 || action > bound + 1e-12 {
        return Err(Error::invalid(format!("action {action} outside [0, {bound}]")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PruneEnvConfig {
    /// Maximum prune rate `A_H`.
    pub max_rate: f64,
    pub reward: RewardKind,
    /// Element-wise prune fraction per unit of action.
    pub vp_scale: f64,
    pub lasso_images: usize,
    pub lasso_positions: usize,
    /// Images for fc layers, which contribute one sample each.
    pub lasso_fc_images: usize,
    pub calibration_images: usize,
}

impl Default for PruneEnvConfig {
    fn default() -> Self {
        PruneEnvConfig {
            max_rate: 0.5,
            reward: RewardKind::R1,
            vp_scale: 0.5,
            lasso_images: 500,
            lasso_positions: 10,
            lasso_fc_images: 3000,
            calibration_images: 500,
        }
    }
}

impl PruneEnvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.max_rate) {
            return Err(Error::Config(format!("prune.max_rate must be in [0, 1), got {}", self.max_rate)));
        }
        if !(0.0..=1.0).contains(&self.vp_scale) {
            return Err(Error::Config(format!("prune.vp_scale must be in [0, 1], got {}", self.vp_scale)));
        }
        if self.lasso_images == 0 || self.lasso_positions == 0 || self.lasso_fc_images == 0 || self.calibration_images == 0 {
            return Err(Error::Config("prune: sample counts must be positive".into()));
        }
        Ok(())
    }
}

/// Pruning stage: channel pruning then variational pruning of each layer.
pub struct PruneEnv<'a> {
    pub model: Model<f32>,
    order: Vec<usize>,
    t: usize,
    train: &'a Dataset,
    val: &'a Dataset,
    cfg: PruneEnvConfig,
    vp: VpConfig,
    eval_batch: usize,
    normalizer: StateNormalizer,
    rng: ChaCha8Rng,
    pub clamp_count: usize,
    pub warnings: Vec<String>,
}

impl<'a> PruneEnv<'a> {
    pub fn new(
        model: Model<f32>,
        train: &'a Dataset,
        val: &'a Dataset,
        cfg: PruneEnvConfig,
        vp: VpConfig,
        eval_batch: usize,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        vp.validate()?;
        let order = model.compressible_layers();
        if order.is_empty() {
            return Err(Error::invalid("model has no conv/fc layers"));
        }
        let states = order.iter().map(|&i| encode_state(&model, i, cfg.max_rate)).collect::<Result<Vec<_>>>()?;
        Ok(PruneEnv {
            normalizer: StateNormalizer::fit(&states),
            model,
            order,
            t: 0,
            train,
            val,
            cfg,
            vp,
            eval_batch: eval_batch.max(1),
            rng,
            clamp_count: 0,
            warnings: Vec::new(),
        })
    }

    pub fn normalizer(&self) -> &StateNormalizer {
        &self.normalizer
    }

    fn prune_layer(&mut self, idx: usize, action: f64, info: &mut StepInfo) -> Result<()> {
        let c = self.model.layers[idx].in_channels;
        let keep = keep_count(c, action);
        info.keep_k = Some(keep);
        if keep < c {
            let images = if self.model.layers[idx].kind == LayerKind::Fc { self.cfg.lasso_fc_images } else { self.cfg.lasso_images };
            let spec = SampleSpec { images, positions: self.cfg.lasso_positions };
            let (problem, warnings) = sample_patches(&self.model, idx, &self.train.images, spec, keep, &mut self.rng)?;
            self.warnings.extend(warnings);
            let decision = lasso_channel_select(&problem)?;
            if !decision.converged {
                self.warnings.push(format!("layer {}: coordinate descent hit the sweep limit", info.layer_name));
            }
            let refit = reconstruct_weights(&problem, &decision.kept)?;
            info.recon_error = Some(refit.error);
            apply_channel_prune(&mut self.model, idx, &decision.kept, Some(&refit.weight))?;
        }
        let fraction = self.cfg.vp_scale * action;
        if fraction > 0.0 {
            let out = vp_finetune(&mut self.model, self.train, &self.vp, &mut self.rng)?;
            if out.diverged {
                self.warnings.push(format!("layer {}: variational fine-tune diverged", info.layer_name));
            }
            let n = self.cfg.calibration_images.min(self.train.len());
            let calib = self.train.images.slice_items(0, n);
            let mask = extract_mask(&self.model, idx, &calib, fraction)?;
            apply_layer_mask(&mut self.model.layers[idx], mask)?;
        }
        Ok(())
    }
}

impl Environment for PruneEnv<'_> {
    fn num_steps(&self) -> usize {
        self.order.len()
    }

    fn bound(&self) -> f64 {
        self.cfg.max_rate
    }

    fn state(&self) -> Result<StateVector> {
        let idx = *self.order.get(self.t).ok_or_else(|| Error::invalid("episode already finished"))?;
        Ok(self.normalizer.normalize(&encode_state(&self.model, idx, self.cfg.max_rate)?))
    }

    fn step(&mut self, action: f64) -> Result<EnvStep> {
        let idx = *self.order.get(self.t).ok_or_else(|| Error::invalid("episode already finished"))?;
        check_action(action, self.cfg.max_rate).map_err(|e| e.at_layer(idx))?;
        let state = self.state()?;
        let hw = input_hw(&self.model, idx)?;
        let layer = &self.model.layers[idx];
        let f_high = effective_flops(layer, hw) as f64;
        let c = layer.in_channels;
        let keep_low = keep_count(c, self.cfg.max_rate);
        let dense_low = layer.weight.len() / c * keep_low;
        let per_weight = f_high / layer.nonzero_weights().max(1) as f64;
        let f_low = per_weight * (dense_low - prune_count(dense_low, self.cfg.vp_scale * self.cfg.max_rate).min(dense_low)) as f64;
        let mut info = StepInfo {
            layer: self.t + 1,
            layer_name: layer.name.clone(),
            action,
            accuracy: 0.0,
            flops: 0,
            keep_k: None,
            recon_error: None,
            bits: None,
        };
        if action > 0.0 {
            self.prune_layer(idx, action, &mut info).map_err(|e| e.at_layer(idx))?;
        }
        info.accuracy = evaluate(&self.model, self.val, self.eval_batch)?;
        info.flops = effective_flops(&self.model.layers[idx], hw);
        let rc = RewardConfig { kind: self.cfg.reward, flops_low: f_low.min(f_high), flops_high: f_high };
        let (r, clamped) = reward(&rc, info.flops as f64, info.accuracy);
        if clamped {
            self.clamp_count += 1;
            warn!("layer {}: FLOPs {} outside [{f_low}, {f_high}], clamped", info.layer_name, info.flops);
        }
        self.t += 1;
        let done = self.t == self.order.len();
        let next_state = if done { state } else { self.state()? };
        Ok(EnvStep { next_state, reward: r, done, info })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuantEnvConfig {
    pub b_min: u32,
    pub b_max: u32,
}

impl Default for QuantEnvConfig {
    fn default() -> Self {
        QuantEnvConfig { b_min: 2, b_max: 8 }
    }
}

/// Quantization stage: choose a bit width per layer, reward = validation accuracy.
pub struct QuantEnv<'a> {
    pub model: Model<f32>,
    pub bits: Vec<u32>,
    order: Vec<usize>,
    t: usize,
    val: &'a Dataset,
    cfg: QuantEnvConfig,
    eval_batch: usize,
    normalizer: StateNormalizer,
}

impl<'a> QuantEnv<'a> {
    pub fn new(model: Model<f32>, val: &'a Dataset, cfg: QuantEnvConfig, eval_batch: usize) -> Result<Self> {
        if cfg.b_min == 0 || cfg.b_min > cfg.b_max || cfg.b_max > crate::quant::MAX_BITS {
            return Err(Error::Config(format!("quant bit range [{}, {}] invalid", cfg.b_min, cfg.b_max)));
        }
        let order = model.compressible_layers();
        let slot = (cfg.b_max - cfg.b_min) as f64;
        let states = order.iter().map(|&i| encode_state(&model, i, slot)).collect::<Result<Vec<_>>>()?;
        Ok(QuantEnv {
            normalizer: StateNormalizer::fit(&states),
            model,
            bits: Vec::new(),
            order,
            t: 0,
            val,
            cfg,
            eval_batch: eval_batch.max(1),
        })
    }
}

impl Environment for QuantEnv<'_> {
    fn num_steps(&self) -> usize {
        self.order.len()
    }

    fn bound(&self) -> f64 {
        1.0
    }

    fn state(&self) -> Result<StateVector> {
        let idx = *self.order.get(self.t).ok_or_else(|| Error::invalid("episode already finished"))?;
        let slot = (self.cfg.b_max - self.cfg.b_min) as f64;
        Ok(self.normalizer.normalize(&encode_state(&self.model, idx, slot)?))
    }

    fn step(&mut self, action: f64) -> Result<EnvStep> {
        let idx = *self.order.get(self.t).ok_or_else(|| Error::invalid("episode already finished"))?;
        check_action(action, 1.0).map_err(|e| e.at_layer(idx))?;
        let state = self.state()?;
        let b = quant_action_to_bits(action, self.cfg.b_min, self.cfg.b_max);
        quantize_layer(&mut self.model, idx, b)?;
        self.bits.push(b);
        let accuracy = evaluate(&self.model, self.val, self.eval_batch)?;
        let hw = input_hw(&self.model, idx)?;
        let info = StepInfo {
            layer: self.t + 1,
            layer_name: self.model.layers[idx].name.clone(),
            action,
            accuracy,
            flops: flops_of_layer(&self.model.layers[idx], hw),
            keep_k: None,
            recon_error: None,
            bits: Some(b),
        };
        self.t += 1;
        let done = self.t == self.order.len();
        let next_state = if done { state } else { self.state()? };
        Ok(EnvStep { next_state, reward: accuracy, done, info })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::activation::Activation;
    use rand::SeedableRng;

    #[test]
    fn flops_formulas() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = Layer::<f32>::conv("c", 1, 1, (1, 1), 1, 1.0, &mut rng);
        assert_eq!(flops_of_layer(&c, (1, 1)), 2);
        let f = Layer::<f32>::fc("f", 10, (1, 1), 10, 1.0, &mut rng);
        assert_eq!(flops_of_layer(&f, (1, 1)), 200);
    }

    #[test]
    fn reward_boundaries() {
        let cfg = RewardConfig { kind: RewardKind::R1, flops_low: 10.0, flops_high: 30.0 };
        assert!((reward(&cfg, 10.0, 0.9).0 - 1.9).abs() < 1e-12);
        assert!((reward(&cfg, 30.0, 0.9).0 - 0.9).abs() < 1e-12);
        assert_eq!(reward(&cfg, 40.0, 0.9), (0.9, true));
        let r2 = RewardConfig { kind: RewardKind::R2, ..cfg };
        assert_eq!(reward(&r2, 12.0, 0.73).0, 0.73);
    }

    #[test]
    fn state_fields_and_indexing() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = Model::new(
            "m",
            [1, 12, 12],
            Activation::Relu,
            vec![Layer::<f32>::conv("c", 1, 6, (5, 5), 1, 2.0, &mut rng), Layer::fc("f", 6, (8, 8), 10, 1.0, &mut rng)],
        );
        let s = encode_state(&m, 0, 0.5).unwrap();
        assert_eq!(s, [1.0, 6.0, 1.0, 5.0, 5.0, 1.0, 0.5, 2.0 * 6.0 * 25.0 * 64.0]);
        assert_eq!(encode_state(&m, 1, 0.5).unwrap()[0], 2.0);
        let n = StateNormalizer::fit(&[s, encode_state(&m, 1, 0.5).unwrap()]);
        let back = n.denormalize(&n.normalize(&s));
        assert!(back.iter().zip(&s).all(|(a, b)| (a - b).abs() < 1e-9));
    }
}
