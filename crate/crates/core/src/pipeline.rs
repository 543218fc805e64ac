//! Run orchestration: data, baseline, pruning search, quantization search, reports.

use std::fs::{self, File, OpenOptions};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{run_episode, Agent, AgentConfig, EpisodeTrace};
use crate::arch::Arch;
use crate::data::{load_idx, load_raw_records, Dataset};
use crate::env::{PruneEnv, PruneEnvConfig, QuantEnv, QuantEnvConfig};
use crate::error::{Error, Result};
use crate::nn::activation::Activation;
use crate::nn::checkpoint;
use crate::nn::model::Model;
use crate::prune::{apply_channel_prune, keep_count, lasso_channel_select, reconstruct_weights, sample_patches, SampleSpec};
use crate::quant::finetune::{finetune_quantized, QuantFinetuneConfig};
use crate::quant::pack::{model_bits, save_quantized};
use crate::quant::QuantSpec;
use crate::report::{emit_report, write_csv, CompressionReport, DataSummary, EpisodeSummary, ReportFormat, StageFailure, StageReport};
use crate::train::{evaluate, train, TrainConfig};
use crate::vp::loss::VpConfig;
use crate::vp::mask::{apply_layer_mask, magnitude_scores, mask_from_scores, noise_scores};

/// Independent ChaCha8 stream `stream` of the run seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

const STREAM_INIT: u64 = 1;
const STREAM_TRAIN: u64 = 2;
const STREAM_PRUNE_AGENT: u64 = 3;
const STREAM_QUANT_AGENT: u64 = 4;
const STREAM_FINETUNE: u64 = 5;
const STREAM_QUANT_FINETUNE: u64 = 6;
const STREAM_SINGLE_LAYER: u64 = 7;
const STREAM_PRUNE_EPISODE: u64 = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    /// IDX image and label files, optionally gzipped.
    Idx,
    /// Fixed-size records of one label byte followed by pixel bytes.
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub format: DataFormat,
    pub images: PathBuf,
    pub labels: Option<PathBuf>,
    pub classes: usize,
    /// Contiguous splits taken in file order.
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            format: DataFormat::Idx,
            images: PathBuf::from("data/mnist/images-idx3-ubyte.gz"),
            labels: Some(PathBuf::from("data/mnist/labels-idx1-ubyte.gz")),
            classes: 10,
            train: 6000,
            val: 2000,
            test: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Stages {
    pub train: bool,
    pub prune: bool,
    pub quantize: bool,
}

impl Default for Stages {
    fn default() -> Self {
        Stages { train: true, prune: true, quantize: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PruneStageConfig {
    pub episodes: usize,
    #[serde(flatten)]
    pub env: PruneEnvConfig,
    /// Fine-tuning of the selected pruned model (masks stay fixed).
    pub finetune: TrainConfig,
    pub save_episode_models: bool,
}

impl Default for PruneStageConfig {
    fn default() -> Self {
        PruneStageConfig {
            episodes: 30,
            env: PruneEnvConfig::default(),
            finetune: TrainConfig {
                epochs: 5,
                lr: 0.005,
                lr_decay: 0.8,
                info_dropout: false,
                ..TrainConfig::default()
            },
            save_episode_models: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuantStageConfig {
    pub episodes: usize,
    pub b_min: u32,
    pub b_max: u32,
    pub finetune: QuantFinetuneConfig,
}

impl Default for QuantStageConfig {
    fn default() -> Self {
        let env = QuantEnvConfig::default();
        QuantStageConfig {
            episodes: 10,
            b_min: env.b_min,
            b_max: env.b_max,
            finetune: QuantFinetuneConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SingleLayerConfig {
    pub rates: Vec<f64>,
}

impl Default for SingleLayerConfig {
    fn default() -> Self {
        SingleLayerConfig { rates: (0..10).map(|i| i as f64 / 10.0).collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub arch: Arch,
    pub activation: Activation,
    pub data: DataConfig,
    pub stages: Stages,
    /// Checkpoint stem of a trained model, used when `stages.train` is off.
    pub pretrained: Option<PathBuf>,
    pub eval_batch: usize,
    pub train: TrainConfig,
    pub vp: VpConfig,
    pub prune: PruneStageConfig,
    pub agent: AgentConfig,
    pub quant: QuantStageConfig,
    pub single_layer: SingleLayerConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            arch: Arch::Lenet,
            activation: Activation::Relu,
            data: DataConfig::default(),
            stages: Stages::default(),
            pretrained: None,
            eval_batch: 500,
            train: TrainConfig::default(),
            vp: VpConfig::default(),
            prune: PruneStageConfig::default(),
            agent: AgentConfig::default(),
            quant: QuantStageConfig::default(),
            single_layer: SingleLayerConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Parse a config file; relative data and checkpoint paths are resolved
    /// against the file's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.data.images);
        if let Some(l) = cfg.data.labels.as_mut() {
            fix(l);
        }
        if let Some(p) = cfg.pretrained.as_mut() {
            fix(p);
        }
        Ok(cfg)
    }

    pub fn quant_env(&self) -> QuantEnvConfig {
        QuantEnvConfig { b_min: self.quant.b_min, b_max: self.quant.b_max }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.prune.finetune.validate()?;
        self.prune.env.validate()?;
        self.vp.validate()?;
        self.agent.validate()?;
        let q = self.quant_env();
        if q.b_min == 0 || q.b_min > q.b_max || q.b_max > crate::quant::MAX_BITS {
            return Err(Error::Config(format!("quant bit range [{}, {}] invalid", q.b_min, q.b_max)));
        }
        if self.eval_batch == 0 || self.data.classes < 2 {
            return Err(Error::Config("eval_batch must be positive and classes at least 2".into()));
        }
        if self.data.train == 0 || self.data.val == 0 || self.data.test == 0 {
            return Err(Error::Config("data splits must be nonempty".into()));
        }
        if !self.stages.train && self.pretrained.is_none() {
            return Err(Error::Config("stages.train is off and no pretrained checkpoint is given".into()));
        }
        if self.single_layer.rates.iter().any(|r| !(0.0..1.0).contains(r)) {
            return Err(Error::Config("single_layer.rates must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

pub fn load_splits(cfg: &RunConfig) -> Result<Splits> {
    let d = &cfg.data;
    let ds = match d.format {
        DataFormat::Idx => {
            let labels = d.labels.as_ref().ok_or_else(|| Error::Config("idx data needs a labels file".into()))?;
            load_idx(&d.images, labels)?
        }
        DataFormat::Raw => load_raw_records(&d.images, cfg.arch.input_shape(), d.classes)?,
    };
    cfg.arch.check_input(ds.item_shape())?;
    if let Some(&l) = ds.labels.iter().find(|&&l| l >= d.classes) {
        return Err(Error::Data(format!("label {l} outside {} classes", d.classes)));
    }
    let (train, val, test) = ds.split3(d.train, d.val, d.test)?;
    Ok(Splits { train, val, test })
}

/// Train from scratch or load the pretrained checkpoint.
pub fn baseline_model(cfg: &RunConfig, splits: &Splits) -> Result<Model<f32>> {
    if cfg.stages.train {
        let mut model = cfg.arch.build::<f32>(cfg.activation, cfg.data.classes, &mut stream_rng(cfg.seed, STREAM_INIT));
        train(&mut model, &splits.train, &cfg.train, &cfg.vp, &mut stream_rng(cfg.seed, STREAM_TRAIN))?;
        Ok(model)
    } else {
        let path = cfg.pretrained.as_ref().ok_or_else(|| Error::Config("no pretrained checkpoint".into()))?;
        let model: Model<f32> = checkpoint::load(path)?;
        if model.input_shape != cfg.arch.input_shape() {
            return Err(Error::Config(format!("checkpoint input {:?} does not match {:?}", model.input_shape, cfg.arch)));
        }
        Ok(model)
    }
}

/// A report that stopped at a failing stage, plus the cause.
#[derive(Debug)]
pub struct PartialRun {
    pub report: CompressionReport,
    pub error: Error,
}

/// Wall-clock seconds per stage; kept out of the report so reports stay reproducible.
pub type Timings = Vec<(String, f64)>;

/// Run every enabled stage, checkpointing each, and write the reports into `out`.
pub fn run_pipeline(cfg: &RunConfig, out: &Path) -> std::result::Result<CompressionReport, Box<PartialRun>> {
    let mut report = CompressionReport::new(&format!("{:?}", cfg.arch).to_lowercase(), cfg.seed);
    let mut stage = "config";
    let mut timings = Timings::new();
    let result = run_stages(cfg, out, &mut report, &mut stage, &mut timings);
    report.refresh_front();
    if let Err(e) = &result {
        report.failure = Some(StageFailure { stage: stage.to_string(), message: e.to_string() });
    }
    let written = write_outputs(&report, &timings, out);
    match (result, written) {
        (Ok(()), Ok(())) => Ok(report),
        (Err(error), _) | (Ok(()), Err(error)) => Err(Box::new(PartialRun { report, error })),
    }
}

fn write_outputs(report: &CompressionReport, timings: &Timings, out: &Path) -> Result<()> {
    emit_report(report, ReportFormat::Json, out)?;
    emit_report(report, ReportFormat::Csv, out)?;
    let path = out.join("timings.json");
    fs::write(&path, serde_json::to_vec_pretty(timings)?).map_err(|e| Error::io(&path, e))
}

fn timed<R>(timings: &mut Timings, name: &str, f: impl FnOnce() -> Result<R>) -> Result<R> {
    let t = Instant::now();
    let r = f();
    timings.push((name.to_string(), t.elapsed().as_secs_f64()));
    r
}

fn run_stages(cfg: &RunConfig, out: &Path, report: &mut CompressionReport, stage: &mut &'static str, timings: &mut Timings) -> Result<()> {
    cfg.validate()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    *stage = "data";
    let splits = load_splits(cfg)?;
    report.data = Some(DataSummary {
        source: cfg.data.images.display().to_string(),
        train: splits.train.len(),
        val: splits.val.len(),
        test: splits.test.len(),
        eval_batch: cfg.eval_batch,
        reward_split: "validation".into(),
        report_split: "test".into(),
    });
    *stage = "train";
    let baseline = timed(timings, "train", || baseline_model(cfg, &splits))?;
    checkpoint::save(&baseline, &out.join("baseline"))?;
    *stage = "baseline";
    report.stages.push(measure("baseline", &baseline, &splits, cfg.eval_batch, None, None)?);

    let mut current = baseline;
    if cfg.stages.prune {
        *stage = "prune";
        let search = timed(timings, "prune", || prune_search(cfg, &current, &splits, out))?;
        report.prune_episodes = search.episodes;
        report.selected_prune_episode = Some(search.best_episode);
        report.warnings.extend(search.warnings);
        let mut model = search.best_model;
        report.stages.push(measure("pruned", &model, &splits, cfg.eval_batch, Some(&search.best_actions), None)?);
        *stage = "finetune";
        if search.best_actions.iter().any(|&a| a > 0.0) {
            let plain = VpConfig { alpha: 0.0, ..cfg.vp.clone() };
            timed(timings, "finetune", || {
                train(&mut model, &splits.train, &cfg.prune.finetune, &plain, &mut stream_rng(cfg.seed, STREAM_FINETUNE)).map(|_| ())
            })?;
        }
        checkpoint::save(&model, &out.join("pruned"))?;
        report.stages.push(measure("finetuned", &model, &splits, cfg.eval_batch, Some(&search.best_actions), None)?);
        current = model;
    }
    if cfg.stages.quantize {
        *stage = "quantize";
        let (model, spec, episodes, best) = timed(timings, "quantize", || quant_search(cfg, &current, &splits, out))?;
        report.quant_episodes = episodes;
        report.selected_quant_episode = Some(best);
        save_quantized(&model, &spec, &out.join("quantized"))?;
        let actions: Option<Vec<f64>> = report.stage("finetuned").map(|s| s.layers.iter().filter_map(|l| l.action).collect());
        report.stages.push(measure("quantized", &model, &splits, cfg.eval_batch, actions.as_deref(), Some(&spec.bits))?);
    }
    Ok(())
}

fn measure(stage: &str, model: &Model<f32>, splits: &Splits, batch: usize, actions: Option<&[f64]>, bits: Option<&[u32]>) -> Result<StageReport> {
    let val = evaluate(model, &splits.val, batch)?;
    let test = evaluate(model, &splits.test, batch)?;
    StageReport::measure(stage, model, val, test, actions, bits)
}

/// Bits of the float conv/fc weights that are nonzero.
fn float_bits(model: &Model<f32>) -> u64 {
    model.layers.iter().filter(|l| l.is_compressible()).map(|l| 32 * l.nonzero_weights() as u64).sum()
}

fn append_trace(path: &Path, trace: &EpisodeTrace, first: bool) -> Result<()> {
    let file = if first { File::create(path) } else { OpenOptions::new().append(true).open(path) }.map_err(|e| Error::io(path, e))?;
    trace.write_csv(BufWriter::new(file), first)
}

fn push_unique(warnings: &mut Vec<String>, w: impl IntoIterator<Item = String>) {
    for s in w {
        if !warnings.contains(&s) {
            warnings.push(s);
        }
    }
}

pub struct PruneSearch {
    pub best_model: Model<f32>,
    pub best_episode: usize,
    pub best_actions: Vec<f64>,
    pub episodes: Vec<EpisodeSummary>,
    pub warnings: Vec<String>,
}

/// Agent episodes over the pruning environment, each starting from `baseline`.
/// The best episode has the highest return; ties go to fewer nonzero weights.
pub fn prune_search(cfg: &RunConfig, baseline: &Model<f32>, splits: &Splits, out: &Path) -> Result<PruneSearch> {
    if cfg.prune.episodes == 0 {
        return Err(Error::Config("prune.episodes must be positive".into()));
    }
    let mut agent_rng = stream_rng(cfg.seed, STREAM_PRUNE_AGENT);
    let mut agent = Agent::new(cfg.agent.clone(), cfg.prune.env.max_rate, &mut agent_rng)?;
    let ep_dir = out.join("episodes");
    if cfg.prune.save_episode_models {
        fs::create_dir_all(&ep_dir).map_err(|e| Error::io(&ep_dir, e))?;
    }
    let trace_path = out.join("prune_trace.csv");
    let mut best: Option<(Model<f32>, usize, Vec<f64>)> = None;
    let mut episodes = Vec::new();
    let mut warnings = Vec::new();
    let mut clamps = 0;
    for ep in 0..cfg.prune.episodes {
        let rng = stream_rng(cfg.seed, STREAM_PRUNE_EPISODE + ep as u64);
        let mut env = PruneEnv::new(baseline.clone(), &splits.train, &splits.val, cfg.prune.env.clone(), cfg.vp.clone(), cfg.eval_batch, rng)?;
        let trace = run_episode(&mut env, &mut agent, ep, &mut agent_rng)?;
        append_trace(&trace_path, &trace, ep == 0)?;
        clamps += env.clamp_count;
        push_unique(&mut warnings, env.warnings.drain(..));
        let model = env.model;
        let summary = EpisodeSummary {
            episode: ep,
            episode_return: trace.episode_return,
            rewards: trace.rows.iter().map(|r| r.reward).collect(),
            actions: trace.rows.iter().map(|r| r.action).collect(),
            bits: Vec::new(),
            val_accuracy: trace.rows.last().map_or(0.0, |r| r.accuracy),
            test_accuracy: evaluate(&model, &splits.test, cfg.eval_batch)?,
            nonzero_params: model.nonzero_params(),
            model_bits: float_bits(&model),
        };
        info!(
            "prune episode {ep}: return {:.4} val {:.4} nonzero {} actions {:?}",
            summary.episode_return, summary.val_accuracy, summary.nonzero_params, summary.actions
        );
        if cfg.prune.save_episode_models {
            checkpoint::save(&model, &ep_dir.join(format!("prune_{ep:03}")))?;
        }
        let better = match &best {
            None => true,
            Some((m, i, _)) => {
                let b: &EpisodeSummary = &episodes[*i];
                summary.episode_return > b.episode_return || (summary.episode_return == b.episode_return && summary.nonzero_params < m.nonzero_params())
            }
        };
        if better {
            best = Some((model, ep, summary.actions.clone()));
        }
        episodes.push(summary);
    }
    if clamps > 0 {
        warnings.push(format!("layer FLOPs fell outside the reward bounds {clamps} times and were clamped"));
    }
    let (best_model, best_episode, best_actions) = best.expect("at least one episode");
    Ok(PruneSearch { best_model, best_episode, best_actions, episodes, warnings })
}

/// Agent episodes choosing bit widths, then quantization-aware fine-tuning of
/// the best spec. Ties in return go to the smaller model.
pub fn quant_search(cfg: &RunConfig, model: &Model<f32>, splits: &Splits, out: &Path) -> Result<(Model<f32>, QuantSpec, Vec<EpisodeSummary>, usize)> {
    if cfg.quant.episodes == 0 {
        return Err(Error::Config("quant.episodes must be positive".into()));
    }
    let mut agent_rng = stream_rng(cfg.seed, STREAM_QUANT_AGENT);
    let mut agent = Agent::new(cfg.agent.clone(), 1.0, &mut agent_rng)?;
    let trace_path = out.join("quant_trace.csv");
    let mut episodes: Vec<EpisodeSummary> = Vec::new();
    let mut best = 0;
    for ep in 0..cfg.quant.episodes {
        let mut env = QuantEnv::new(model.clone(), &splits.val, cfg.quant_env(), cfg.eval_batch)?;
        let trace = run_episode(&mut env, &mut agent, ep, &mut agent_rng)?;
        append_trace(&trace_path, &trace, ep == 0)?;
        let spec = QuantSpec { bits: env.bits.clone() };
        let summary = EpisodeSummary {
            episode: ep,
            episode_return: trace.episode_return,
            rewards: trace.rows.iter().map(|r| r.reward).collect(),
            actions: trace.rows.iter().map(|r| r.action).collect(),
            bits: spec.bits.clone(),
            val_accuracy: trace.rows.last().map_or(0.0, |r| r.accuracy),
            test_accuracy: evaluate(&env.model, &splits.test, cfg.eval_batch)?,
            nonzero_params: env.model.nonzero_params(),
            model_bits: model_bits(&env.model, &spec),
        };
        info!("quant episode {ep}: return {:.4} bits {:?}", summary.episode_return, summary.bits);
        if ep > 0 {
            let b = &episodes[best];
            if summary.episode_return > b.episode_return || (summary.episode_return == b.episode_return && summary.model_bits < b.model_bits) {
                best = ep;
            }
        }
        episodes.push(summary);
    }
    let spec = QuantSpec { bits: episodes[best].bits.clone() };
    let mut tuned = model.clone();
    let outcome = finetune_quantized(&mut tuned, &spec, &splits.train, &cfg.quant.finetune, &mut stream_rng(cfg.seed, STREAM_QUANT_FINETUNE))?;
    if outcome.diverged {
        return Err(Error::Diverged("quantization-aware fine-tuning diverged".into()));
    }
    Ok((tuned, spec, episodes, best))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Channel,
    Magnitude,
    Variational,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Channel, Strategy::Magnitude, Strategy::Variational];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Channel => "channel",
            Strategy::Magnitude => "magnitude",
            Strategy::Variational => "variational",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub layer: usize,
    pub layer_name: String,
    pub rate: f64,
    pub accuracy: f64,
    pub error_increase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyCurve {
    pub strategy: Strategy,
    pub rows: Vec<SweepRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRanking {
    pub layer_name: String,
    /// Mean error increase over the sweep, per strategy.
    pub mean_increase: Vec<(Strategy, f64)>,
    /// Strategies from lowest to highest mean error increase.
    pub order: Vec<Strategy>,
    /// Whether variational ≤ channel ≤ magnitude held for this layer.
    pub expected_order_holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleLayerReport {
    pub schema_version: u32,
    pub model: String,
    pub seed: u64,
    pub baseline_accuracy: f64,
    pub rates: Vec<f64>,
    pub curves: Vec<StrategyCurve>,
    pub rankings: Vec<LayerRanking>,
    pub expectation: String,
    pub notes: Vec<String>,
}

/// Test accuracy of `model` with only layer `idx` compressed by `strategy` at `rate`.
pub fn prune_single_layer(
    model: &Model<f32>,
    idx: usize,
    strategy: Strategy,
    rate: f64,
    cfg: &RunConfig,
    splits: &Splits,
    rng: &mut ChaCha8Rng,
) -> Result<Model<f32>> {
    let mut m = model.clone();
    if rate <= 0.0 {
        return Ok(m);
    }
    match strategy {
        Strategy::Channel => {
            let c = m.layers[idx].in_channels;
            let keep = keep_count(c, rate);
            if keep < c {
                let fc = m.layers[idx].kind == crate::nn::layer::LayerKind::Fc;
                let spec = SampleSpec {
                    images: if fc { cfg.prune.env.lasso_fc_images } else { cfg.prune.env.lasso_images },
                    positions: cfg.prune.env.lasso_positions,
                };
                let (problem, _) = sample_patches(&m, idx, &splits.train.images, spec, keep, rng)?;
                let decision = lasso_channel_select(&problem)?;
                let refit = reconstruct_weights(&problem, &decision.kept)?;
                apply_channel_prune(&mut m, idx, &decision.kept, Some(&refit.weight))?;
            }
        }
        Strategy::Magnitude => {
            let mask = mask_from_scores(&m.layers[idx].weight, &magnitude_scores(&m.layers[idx].weight), rate)?;
            apply_layer_mask(&mut m.layers[idx], mask)?;
        }
        Strategy::Variational => {
            let n = cfg.prune.env.calibration_images.min(splits.train.len());
            let scores = noise_scores(&m, idx, &splits.train.images.slice_items(0, n))?;
            let mask = mask_from_scores(&m.layers[idx].weight, &scores, rate)?;
            apply_layer_mask(&mut m.layers[idx], mask)?;
        }
    }
    Ok(m)
}

/// Sweep every conv/fc layer over `cfg.single_layer.rates` with each strategy.
pub fn single_layer_experiment(cfg: &RunConfig, model: &Model<f32>, splits: &Splits) -> Result<SingleLayerReport> {
    let base = evaluate(model, &splits.test, cfg.eval_batch)?;
    let mut rng = stream_rng(cfg.seed, STREAM_SINGLE_LAYER);
    let order = model.compressible_layers();
    let mut curves = Vec::new();
    for strategy in Strategy::ALL {
        let mut rows = Vec::new();
        for (k, &idx) in order.iter().enumerate() {
            for &rate in &cfg.single_layer.rates {
                let m = prune_single_layer(model, idx, strategy, rate, cfg, splits, &mut rng).map_err(|e| e.at_layer(idx))?;
                let acc = evaluate(&m, &splits.test, cfg.eval_batch)?;
                rows.push(SweepRow { layer: k + 1, layer_name: model.layers[idx].name.clone(), rate, accuracy: acc, error_increase: base - acc });
            }
        }
        curves.push(StrategyCurve { strategy, rows });
    }
    let mut rankings = Vec::new();
    for (k, &idx) in order.iter().enumerate() {
        let mean_increase: Vec<(Strategy, f64)> = curves
            .iter()
            .map(|c| {
                let v: Vec<f64> = c.rows.iter().filter(|r| r.layer == k + 1).map(|r| r.error_increase).collect();
                (c.strategy, v.iter().sum::<f64>() / v.len().max(1) as f64)
            })
            .collect();
        let mut order: Vec<(Strategy, f64)> = mean_increase.clone();
        order.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        let get = |s: Strategy| mean_increase.iter().find(|(t, _)| *t == s).map_or(0.0, |x| x.1);
        rankings.push(LayerRanking {
            layer_name: model.layers[idx].name.clone(),
            expected_order_holds: get(Strategy::Variational) <= get(Strategy::Channel) && get(Strategy::Channel) <= get(Strategy::Magnitude),
            order: order.into_iter().map(|x| x.0).collect(),
            mean_increase,
        });
    }
    let mut notes = Vec::new();
    for &idx in &order {
        let l = &model.layers[idx];
        if keep_count(l.in_channels, cfg.single_layer.rates.iter().cloned().fold(0.0, f64::max)) == l.in_channels {
            notes.push(format!("{}: {} input channel(s), channel pruning removes nothing at these rates", l.name, l.in_channels));
        }
        if idx == 0 || model.layers[idx - 1].kind != crate::nn::layer::LayerKind::InfoDrop {
            notes.push(format!("{}: no information-dropout layer in front, variational scores fall back to magnitude", l.name));
        }
    }
    Ok(SingleLayerReport {
        schema_version: crate::report::REPORT_SCHEMA_VERSION,
        model: model.name.clone(),
        seed: cfg.seed,
        baseline_accuracy: base,
        rates: cfg.single_layer.rates.clone(),
        curves,
        rankings,
        expectation: "variational <= channel <= magnitude in error increase; observed, not enforced".into(),
        notes,
    })
}

/// `single_layer_<strategy>.csv` per strategy plus `single_layer.json`.
pub fn write_single_layer(report: &SingleLayerReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for c in &report.curves {
        let path = dir.join(format!("single_layer_{}.csv", c.strategy.name()));
        let mut buf = Vec::new();
        write_csv(&mut buf, &["layer", "layer_name", "rate", "accuracy", "error_increase"], &c.rows)?;
        fs::write(&path, buf).map_err(|e| Error::io(&path, e))?;
        paths.push(path);
    }
    let path = dir.join("single_layer.json");
    let mut bytes = serde_json::to_vec_pretty(report)?;
    bytes.push(b'\n');
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    paths.push(path);
    Ok(paths)
}
