//! Finite-difference checks of every differentiable operation.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::agent::{Agent, AgentConfig, Transition};
use crate::error::Result;
use crate::nn::activation::Activation;
use crate::nn::gradcheck::check_gradient;
use crate::nn::layer::{self, Layer};
use crate::nn::loss::cross_entropy;
use crate::nn::model::{grads_flat, Model, NoiseMode};
use crate::tensor::Tensor;
use crate::vp::loss::{vp_loss, KlForm, VpConfig};
use crate::vp::noise::standard_normals;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckSummary {
    pub op: String,
    pub instances: usize,
    pub max_rel_err: f64,
}

fn normals(n: usize, rng: &mut dyn RngCore) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn tensor(shape: [usize; 4], rng: &mut dyn RngCore) -> Tensor<f64> {
    Tensor::from_vec(shape, normals(shape.iter().product(), rng)).expect("shape")
}

/// Values bounded away from zero so ReLU kinks stay outside the stencil.
fn off_kink(n: usize, rng: &mut dyn RngCore) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(0.05..2.0);
            if rng.random::<bool>() { v } else { -v }
        })
        .collect()
}

/// `Σ r ⊙ layer(x)` over weight, bias and input jointly.
fn linear_layer_check(layer: &Layer<f64>, x: &Tensor<f64>, rng: &mut dyn RngCore) -> Result<f64> {
    let out_shape = layer.output_shape(x.shape())?;
    let r = tensor(out_shape, rng);
    let (wn, bn) = (layer.weight.len(), layer.bias.len());
    let (gx, lg) = layer::backward(layer, x, &r)?;
    let mut point: Vec<f64> = layer.weight.data().to_vec();
    point.extend_from_slice(&layer.bias);
    point.extend_from_slice(x.data());
    let mut analytic: Vec<f64> = lg.weight.data().to_vec();
    analytic.extend_from_slice(&lg.bias);
    analytic.extend_from_slice(gx.data());
    let f = |p: &[f64]| {
        let mut l = layer.clone();
        l.weight.data_mut().copy_from_slice(&p[..wn]);
        l.bias.copy_from_slice(&p[wn..wn + bn]);
        let xi = Tensor::from_vec(x.shape(), p[wn + bn..].to_vec()).expect("shape");
        let y = layer::forward(&l, &xi).expect("forward");
        y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum::<f64>()
    };
    Ok(check_gradient(f, &point, &analytic).max_rel_err)
}

fn conv_instance(rng: &mut ChaCha8Rng) -> Result<f64> {
    let (c, n, k, s) = (rng.random_range(1..4), rng.random_range(1..4), rng.random_range(1..4), rng.random_range(1..3));
    let l = Layer::conv("c", c, n, (k, k), s, 1.0, rng);
    let mut l = l;
    l.bias = normals(n, rng);
    let x = tensor([2, c, 6, 6], rng);
    linear_layer_check(&l, &x, rng)
}

fn fc_instance(rng: &mut ChaCha8Rng) -> Result<f64> {
    let (c, g, n) = (rng.random_range(1..4), rng.random_range(1..3), rng.random_range(1..5));
    let mut l = Layer::fc("f", c, (g, g), n, 1.0, rng);
    l.bias = normals(n, rng);
    let x = tensor([3, c, g, g], rng);
    linear_layer_check(&l, &x, rng)
}

fn activation_instance(act: Activation, rng: &mut ChaCha8Rng) -> Result<f64> {
    let shape = [2, 3, 2, 2];
    let x = Tensor::from_vec(shape, off_kink(24, rng))?;
    let r = tensor(shape, rng);
    let y = act.forward(&x);
    let g = act.backward(&x, &y, &r);
    let f = |p: &[f64]| p.iter().zip(r.data()).map(|(&v, &w)| act.apply(v) * w).sum::<f64>();
    Ok(check_gradient(f, x.data(), g.data()).max_rel_err)
}

fn cross_entropy_instance(rng: &mut ChaCha8Rng) -> Result<f64> {
    let (n, k) = (rng.random_range(1..5), rng.random_range(2..6));
    let logits = tensor([n, k, 1, 1], rng);
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    let (_, g) = cross_entropy(&logits, &labels)?;
    let f = |p: &[f64]| cross_entropy(&Tensor::from_vec([n, k, 1, 1], p.to_vec()).expect("shape"), &labels).expect("ce").0;
    Ok(check_gradient(f, logits.data(), g.data()).max_rel_err)
}

fn model_check(model: &Model<f64>, mut loss: impl FnMut(&Model<f64>) -> (f64, Vec<f64>)) -> f64 {
    let point = model.params_flat();
    let (_, analytic) = loss(model);
    let f = |p: &[f64]| {
        let mut m = model.clone();
        m.set_params_flat(p).expect("length");
        loss(&m).0
    };
    check_gradient(f, &point, &analytic).max_rel_err
}

fn vp_instance(kl: KlForm, rng: &mut ChaCha8Rng) -> Result<f64> {
    let model = Model::new(
        "vp",
        [1, 6, 6],
        Activation::Softplus,
        vec![
            Layer::conv("conv", 1, 2, (3, 3), 1, 1.0, rng),
            Layer::info_drop("drop", 2, rng),
            Layer::fc("fc", 2, (4, 4), 3, 1.0, rng),
        ],
    );
    let mut model = model;
    model.layers[1].weight = model.layers[1].weight.map(|w| w * 10.0);
    let x = tensor([2, 1, 6, 6], rng);
    let labels = vec![rng.random_range(0..3), rng.random_range(0..3)];
    let g = [standard_normals::<f64>([2, 2, 4, 4], rng)];
    let cfg = VpConfig { alpha: 0.5, kl, prior_mu: 0.1, prior_sigma: 0.8, ..VpConfig::default() };
    Ok(model_check(&model, |m| {
        let out = vp_loss(m, &x, &labels, &cfg, NoiseMode::Fixed(&g)).expect("vp loss");
        (out.loss, grads_flat(&out.grads))
    }))
}

fn batch(rng: &mut ChaCha8Rng, n: usize, bound: f64) -> Vec<Transition> {
    (0..n)
        .map(|_| Transition {
            s: std::array::from_fn(|_| rng.random_range(0.0..1.0)),
            a: rng.random_range(0.0..bound),
            r: rng.random_range(0.0..2.0),
            s_next: std::array::from_fn(|_| rng.random_range(0.0..1.0)),
            done: rng.random::<bool>(),
        })
        .collect()
}

fn small_agent(rng: &mut ChaCha8Rng) -> Result<Agent> {
    let cfg = AgentConfig { hidden: 6, noise_std: 0.3, ..AgentConfig::default() };
    Agent::new(cfg, 0.5, rng)
}

fn critic_instance(rng: &mut ChaCha8Rng) -> Result<f64> {
    let agent = small_agent(rng)?;
    let b = batch(rng, 6, 0.5);
    let targets = normals(b.len(), rng);
    let model = agent.critic.clone();
    let mut probe = agent;
    Ok(model_check(&model, |m| {
        probe.critic = m.clone();
        let (loss, g) = probe.critic_loss(&b, &targets).expect("critic loss");
        (loss, grads_flat(&g))
    }))
}

fn actor_instance(rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut agent = small_agent(rng)?;
    agent.begin_episode();
    // Move the online actor off the snapshot so the ratio differs from 1.
    let p: Vec<f64> = agent.actor.params_flat().iter().map(|v| v + 0.05 * rng.sample::<f64, _>(StandardNormal)).collect();
    agent.actor.set_params_flat(&p)?;
    let b = batch(rng, 6, 0.5);
    let q: Vec<f64> = (0..b.len()).map(|_| rng.random_range(-1.0..2.0)).collect();
    let model = agent.actor.clone();
    let mut probe = agent;
    Ok(model_check(&model, |m| {
        probe.actor = m.clone();
        let (obj, g) = probe.actor_objective(&b, &q).expect("actor objective");
        (obj, grads_flat(&g))
    }))
}

/// Worst relative error per operation over `instances` random instances each.
pub fn gradcheck_suite(seed: u64, instances: usize) -> Result<Vec<GradCheckSummary>> {
    type Case = (&'static str, fn(&mut ChaCha8Rng) -> Result<f64>);
    let cases: [Case; 10] = [
        ("conv", conv_instance),
        ("fc", fc_instance),
        ("relu", |r| activation_instance(Activation::Relu, r)),
        ("softplus", |r| activation_instance(Activation::Softplus, r)),
        ("sigmoid", |r| activation_instance(Activation::Sigmoid, r)),
        ("cross_entropy", cross_entropy_instance),
        ("vp_loss_printed_kl", |r| vp_instance(KlForm::AsPrinted, r)),
        ("vp_loss_standard_kl", |r| vp_instance(KlForm::Standard, r)),
        ("critic_loss", critic_instance),
        ("actor_objective", actor_instance),
    ];
    let mut out = Vec::new();
    for (k, (op, case)) in cases.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        let mut worst: f64 = 0.0;
        for _ in 0..instances {
            worst = worst.max(case(&mut rng)?);
        }
        out.push(GradCheckSummary { op: op.to_string(), instances, max_rel_err: worst });
    }
    Ok(out)
}
