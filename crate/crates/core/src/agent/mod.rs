//! Actor-critic agent with a clipped-ratio policy objective.
//!
//! The policy is Gaussian with mean `μ_θ(s) ∈ [0, 1]` (a sigmoid output) and
//! fixed std equal to the current exploration noise. The actor maximizes
//! `mean min(ρ·Q, clip(ρ, 1−c, 1+c)·Q)` where `ρ` is the density ratio against
//! a snapshot taken at the start of each episode and `Q` is the critic's value
//! held constant.

pub mod episode;
pub mod replay;

use rand::RngCore;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::env::{StateVector, STATE_DIM};
use crate::error::{Error, Result};
use crate::nn::activation::Activation;
use crate::nn::layer::{Layer, LayerGrads};
use crate::nn::model::{Model, NoiseMode};
use crate::nn::optim::Adam;
use crate::tensor::Tensor;

pub use episode::{run_episode, EpisodeTrace};
pub use replay::{ReplayBuffer, Transition};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentConfig {
    pub gamma: f64,
    pub clip: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// Polyak coefficient of the target networks.
    pub rho: f64,
    pub noise_std: f64,
    pub noise_decay: f64,
    pub noise_floor: f64,
    pub batch_size: usize,
    pub hidden: usize,
    pub buffer_capacity: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            gamma: 0.99,
            clip: 0.2,
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            rho: 0.99,
            noise_std: 0.3,
            noise_decay: 0.99,
            noise_floor: 0.01,
            batch_size: 16,
            hidden: 64,
            buffer_capacity: 10_000,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.gamma > 0.0
            && self.gamma <= 1.0
            && self.clip > 0.0
            && self.clip < 1.0
            && self.rho > 0.0
            && self.rho < 1.0
            && self.actor_lr > 0.0
            && self.critic_lr > 0.0
            && self.noise_std >= 0.0
            && self.noise_floor > 0.0
            && self.noise_decay > 0.0
            && self.batch_size > 0
            && self.hidden > 0;
        if !ok {
            return Err(Error::Config(
                "agent: need 0 < gamma <= 1, 0 < clip < 1, 0 < rho < 1, positive rates, floor, batch and hidden".into(),
            ));
        }
        Ok(())
    }
}

/// `clip(mean + N(0, std²), [0, bound])`.
pub fn select_action(mean: f64, bound: f64, noise_std: f64, rng: &mut dyn RngCore) -> f64 {
    let noise = if noise_std > 0.0 {
        Normal::new(0.0, noise_std).expect("positive std").sample(rng)
    } else {
        0.0
    };
    (mean + noise).clamp(0.0, bound)
}

/// Ratio of Gaussian densities `N(a; μ, σ²) / N(a; μ⁻, σ²)`.
pub fn gaussian_ratio(a: f64, mean: f64, prior_mean: f64, std: f64) -> f64 {
    let s2 = 2.0 * std * std;
    ((-(a - mean).powi(2) + (a - prior_mean).powi(2)) / s2).exp()
}

/// `min(ρ·Q, clip(ρ, 1−c, 1+c)·Q)`.
pub fn clipped_surrogate(ratio: f64, q: f64, c: f64) -> f64 {
    (ratio * q).min(ratio.clamp(1.0 - c, 1.0 + c) * q)
}

/// Derivative of [`clipped_surrogate`] with respect to the ratio.
pub fn clipped_surrogate_dratio(ratio: f64, q: f64, c: f64) -> f64 {
    if ratio * q <= ratio.clamp(1.0 - c, 1.0 + c) * q {
        q
    } else {
        0.0
    }
}

/// `y = r + γ·Q′` unless terminal.
pub fn td_target(r: f64, q_next: f64, gamma: f64, done: bool) -> f64 {
    if done {
        r
    } else {
        r + gamma * q_next
    }
}

/// `θ′ ← ρθ′ + (1−ρ)θ`.
pub fn polyak(target: &mut [f64], online: &[f64], rho: f64) {
    for (t, &o) in target.iter_mut().zip(online) {
        *t = rho * *t + (1.0 - rho) * o;
    }
}

fn mlp(name: &str, inputs: usize, hidden: usize, out_act: Option<Activation>, rng: &mut dyn RngCore) -> Model<f64> {
    let mut m = Model::new(
        name,
        [inputs, 1, 1],
        Activation::Sigmoid,
        vec![Layer::fc("hidden", inputs, (1, 1), hidden, 1.0, rng), Layer::fc("out", hidden, (1, 1), 1, 1.0, rng)],
    );
    m.output_activation = out_act;
    m
}

fn state_batch(states: &[StateVector]) -> Tensor<f64> {
    let data = states.iter().flat_map(|s| s.iter().copied()).collect();
    Tensor::from_vec([states.len(), STATE_DIM, 1, 1], data).expect("state batch shape")
}

fn critic_batch(states: &[StateVector], actions: &[f64]) -> Tensor<f64> {
    let data = states.iter().zip(actions).flat_map(|(s, &a)| s.iter().copied().chain(std::iter::once(a))).collect();
    Tensor::from_vec([states.len(), STATE_DIM + 1, 1, 1], data).expect("critic batch shape")
}

pub struct Agent {
    pub cfg: AgentConfig,
    /// Upper end of the action interval.
    pub bound: f64,
    pub actor: Model<f64>,
    pub actor_prior: Model<f64>,
    pub actor_target: Model<f64>,
    pub critic: Model<f64>,
    pub critic_target: Model<f64>,
    pub noise_std: f64,
    pub buffer: ReplayBuffer,
    actor_opt: Adam<f64>,
    critic_opt: Adam<f64>,
}

impl Agent {
    pub fn new(cfg: AgentConfig, bound: f64, rng: &mut dyn RngCore) -> Result<Self> {
        cfg.validate()?;
        if !(bound >= 0.0) {
            return Err(Error::invalid(format!("action bound must be non-negative, got {bound}")));
        }
        let actor = mlp("actor", STATE_DIM, cfg.hidden, Some(Activation::Sigmoid), rng);
        let critic = mlp("critic", STATE_DIM + 1, cfg.hidden, None, rng);
        Ok(Agent {
            bound,
            actor_prior: actor.clone(),
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor,
            critic,
            noise_std: cfg.noise_std,
            buffer: ReplayBuffer::new(cfg.buffer_capacity),
            actor_opt: Adam::new(cfg.actor_lr),
            critic_opt: Adam::new(cfg.critic_lr),
            cfg,
        })
    }

    fn means(net: &Model<f64>, states: &[StateVector]) -> Result<Vec<f64>> {
        Ok(net.forward(&state_batch(states))?.into_vec())
    }

    pub fn actor_mean(&self, s: &StateVector) -> Result<f64> {
        Ok(Self::means(&self.actor, std::slice::from_ref(s))?[0])
    }

    pub fn act(&self, s: &StateVector, rng: &mut dyn RngCore) -> Result<f64> {
        Ok(select_action(self.actor_mean(s)?, self.bound, self.noise_std, rng))
    }

    /// Ratio of the current policy to the episode-start snapshot at `(s, a)`.
    pub fn policy_ratio(&self, s: &StateVector, a: f64) -> Result<f64> {
        let m = self.actor_mean(s)?;
        let p = Self::means(&self.actor_prior, std::slice::from_ref(s))?[0];
        Ok(gaussian_ratio(a, m, p, self.ratio_std()))
    }

    fn ratio_std(&self) -> f64 {
        self.noise_std.max(self.cfg.noise_floor)
    }

    pub fn q_value(&self, s: &StateVector, a: f64) -> Result<f64> {
        Ok(self.critic.forward(&critic_batch(std::slice::from_ref(s), &[a]))?.data()[0])
    }

    /// TD targets from the target networks.
    pub fn td_targets(&self, batch: &[Transition]) -> Result<Vec<f64>> {
        let next: Vec<StateVector> = batch.iter().map(|t| t.s_next).collect();
        let mu = Self::means(&self.actor_target, &next)?;
        let acts: Vec<f64> = mu.iter().map(|m| m.clamp(0.0, self.bound)).collect();
        let q = self.critic_target.forward(&critic_batch(&next, &acts))?;
        Ok(batch.iter().zip(q.data()).map(|(t, &qn)| td_target(t.r, qn, self.cfg.gamma, t.done)).collect())
    }

    /// Mean squared TD error and its gradient for the online critic.
    pub fn critic_loss(&self, batch: &[Transition], targets: &[f64]) -> Result<(f64, Vec<LayerGrads<f64>>)> {
        if batch.is_empty() {
            return Err(Error::invalid("empty minibatch"));
        }
        let states: Vec<StateVector> = batch.iter().map(|t| t.s).collect();
        let acts: Vec<f64> = batch.iter().map(|t| t.a).collect();
        let trace = self.critic.forward_trace(&critic_batch(&states, &acts), NoiseMode::Off)?;
        let n = batch.len() as f64;
        let q = trace.output.data();
        let loss = q.iter().zip(targets).map(|(q, y)| (y - q).powi(2)).sum::<f64>() / n;
        let g = Tensor::from_vec(trace.output.shape(), q.iter().zip(targets).map(|(q, y)| 2.0 * (q - y) / n).collect())?;
        let (grads, _) = self.critic.backward(&trace, &g, &[])?;
        Ok((loss, grads))
    }

    /// One critic step; returns the pre-step loss.
    pub fn critic_update(&mut self, batch: &[Transition]) -> Result<f64> {
        let targets = self.td_targets(batch)?;
        let (loss, grads) = self.critic_loss(batch, &targets)?;
        self.critic_opt.step(&mut self.critic, &grads, false);
        Ok(loss)
    }

    /// Clipped surrogate and its gradient for the online actor, with `Q` fixed.
    pub fn actor_objective(&self, batch: &[Transition], q: &[f64]) -> Result<(f64, Vec<LayerGrads<f64>>)> {
        if batch.is_empty() {
            return Err(Error::invalid("empty minibatch"));
        }
        let states: Vec<StateVector> = batch.iter().map(|t| t.s).collect();
        let trace = self.actor.forward_trace(&state_batch(&states), NoiseMode::Off)?;
        let prior = Self::means(&self.actor_prior, &states)?;
        let std = self.ratio_std();
        let n = batch.len() as f64;
        let mut obj = 0.0;
        let mut g = Vec::with_capacity(batch.len());
        for ((t, &mu), (&pm, &qi)) in batch.iter().zip(trace.output.data()).zip(prior.iter().zip(q)) {
            let r = gaussian_ratio(t.a, mu, pm, std);
            obj += clipped_surrogate(r, qi, self.cfg.clip) / n;
            // dρ/dμ = ρ·(a − μ)/σ²
            g.push(clipped_surrogate_dratio(r, qi, self.cfg.clip) * r * (t.a - mu) / (std * std) / n);
        }
        let g = Tensor::from_vec(trace.output.shape(), g)?;
        let (grads, _) = self.actor.backward(&trace, &g, &[])?;
        Ok((obj, grads))
    }

    /// One ascent step on the surrogate; returns the pre-step objective.
    pub fn actor_update(&mut self, batch: &[Transition]) -> Result<f64> {
        let states: Vec<StateVector> = batch.iter().map(|t| t.s).collect();
        let acts: Vec<f64> = batch.iter().map(|t| t.a).collect();
        if batch.is_empty() {
            return Err(Error::invalid("empty minibatch"));
        }
        let q = self.critic.forward(&critic_batch(&states, &acts))?.into_vec();
        let (obj, grads) = self.actor_objective(batch, &q)?;
        self.actor_opt.step(&mut self.actor, &grads, true);
        Ok(obj)
    }

    pub fn target_update(&mut self) -> Result<()> {
        for (target, online) in [(&mut self.actor_target, &self.actor), (&mut self.critic_target, &self.critic)] {
            let mut t = target.params_flat();
            polyak(&mut t, &online.params_flat(), self.cfg.rho);
            target.set_params_flat(&t)?;
        }
        Ok(())
    }

    /// Snapshot the prior policy for this episode's updates.
    pub fn begin_episode(&mut self) {
        self.actor_prior = self.actor.clone();
    }

    /// Geometric exploration decay with a floor.
    pub fn end_episode(&mut self) {
        self.noise_std = (self.noise_std * self.cfg.noise_decay).max(self.cfg.noise_floor);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn action_clipping() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(select_action(0.7, 0.5, 0.0, &mut rng), 0.5);
        assert_eq!(select_action(0.3, 0.5, 0.0, &mut rng), 0.3);
    }

    #[test]
    fn ratio_examples() {
        assert_eq!(gaussian_ratio(0.4, 0.2, 0.2, 0.1), 1.0);
        assert!((gaussian_ratio(0.4, 0.3, 0.5, 0.1) - 1.0).abs() < 1e-12);
        assert!((gaussian_ratio(0.3, 0.3, 0.5, 0.1) - 2f64.exp()).abs() < 1e-9);
    }

    #[test]
    fn surrogate_examples() {
        assert!((clipped_surrogate(1.5, 2.0, 0.2) - 2.4).abs() < 1e-12);
        assert_eq!(clipped_surrogate_dratio(1.5, 2.0, 0.2), 0.0);
        assert_eq!(clipped_surrogate_dratio(1.0, 2.0, 0.2), 2.0);
        assert!((td_target(1.0, 2.0, 0.99, false) - 2.98).abs() < 1e-12);
        assert_eq!(td_target(0.9, 5.0, 0.99, true), 0.9);
    }

    #[test]
    fn polyak_step() {
        let mut t = [0.0];
        polyak(&mut t, &[1.0], 0.99);
        assert!((t[0] - 0.01).abs() < 1e-15);
        polyak(&mut t, &[3.0], 0.0);
        assert_eq!(t[0], 3.0);
    }
}
