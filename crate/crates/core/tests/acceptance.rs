//! End-to-end acceptance checks. Each test prints one `criterion N: PASS|FAIL` line
//! to stderr (bypassing the test harness capture) before asserting.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use deepcompress::agent::{clipped_surrogate, clipped_surrogate_dratio, td_target, Agent, AgentConfig, Transition};
use deepcompress::diagnostics::gradcheck_suite;
use deepcompress::env::{reward, RewardConfig, RewardKind, STATE_DIM};
use deepcompress::nn::checkpoint;
use deepcompress::nn::layer::LayerKind;
use deepcompress::nn::model::{grads_flat, Model};
use deepcompress::pipeline::{load_splits, run_pipeline, single_layer_experiment, write_single_layer, RunConfig};
use deepcompress::prune::{lasso_channel_select, reconstruct_weights, LassoProblem};
use deepcompress::quant::pack::{model_bits, save_quantized};
use deepcompress::quant::{quantize_uniform, QuantSpec};
use deepcompress::tensor::Tensor;
use deepcompress::vp::noise::noise_sample;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};
use statrs::distribution::{ContinuousCDF, LogNormal};

fn verdict(n: u32, ok: bool, detail: &str) {
    let _ = writeln!(std::io::stderr(), "criterion {n}: {} ({detail})", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {n} failed: {detail}");
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

#[test]
fn criterion_1_gradient_fidelity() {
    let t = Instant::now();
    let summary = gradcheck_suite(2024, 20).unwrap();
    let elapsed = t.elapsed();
    let worst = summary.iter().map(|s| s.max_rel_err).fold(0.0, f64::max);
    let ops: Vec<String> = summary.iter().map(|s| format!("{}={:.1e}", s.op, s.max_rel_err)).collect();
    let ok = summary.len() == 10 && summary.iter().all(|s| s.instances >= 20 && s.max_rel_err <= 1e-4) && elapsed < Duration::from_secs(60);
    verdict(1, ok, &format!("worst rel err {worst:.2e} over {} ops, {:.1}s; {}", summary.len(), elapsed.as_secs_f64(), ops.join(" ")));
}

/// Mean squared residual of the least-squares fit of `y` on the columns of `x` for `kept`.
fn oracle_error(p: &LassoProblem, kept: &[usize]) -> f64 {
    let (s, f, m) = (p.samples, p.channels * p.k, p.outputs);
    let cols: Vec<usize> = kept.iter().flat_map(|&c| c * p.k..(c + 1) * p.k).collect();
    let x = DMatrix::from_fn(s, cols.len(), |i, j| p.x[i * f + cols[j]]);
    let y = DMatrix::from_fn(s, m, |i, j| p.y[i * m + j]);
    let b = x.clone().svd(true, true).solve(&y, 1e-12).unwrap();
    (x * b - y).norm_squared() / (s * m) as f64
}

fn subsets(c: usize, k: usize) -> Vec<Vec<usize>> {
    (0u32..1 << c).filter(|m| m.count_ones() as usize == k).map(|m| (0..c).filter(|i| m >> i & 1 == 1).collect()).collect()
}

#[test]
fn criterion_2_lasso_oracle() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    for _ in 0..50 {
        let c = rng.random_range(2..=6);
        let keep_k = rng.random_range(1..c);
        let (k, m, s) = (rng.random_range(1..=4), rng.random_range(1..=3), 80);
        let f = c * k;
        // Channels share a common factor so the selection is not trivially separable.
        let mut x = vec![0.0; s * f];
        for row in x.chunks_mut(f) {
            let common = gauss(&mut rng);
            for (j, v) in row.iter_mut().enumerate() {
                *v = 0.5 * common + gauss(&mut rng) * (1.0 + (j / k) as f64 * 0.3);
            }
        }
        let weight: Vec<f64> = (0..m * f).map(|_| gauss(&mut rng)).collect();
        let mut y = vec![0.0; s * m];
        for i in 0..s {
            for o in 0..m {
                y[i * m + o] = (0..f).map(|j| x[i * f + j] * weight[o * f + j]).sum::<f64>() + 0.1 * gauss(&mut rng);
            }
        }
        let p = LassoProblem { samples: s, channels: c, k, outputs: m, x, y, weight, keep_k };
        let d = lasso_channel_select(&p).unwrap();
        let got = reconstruct_weights(&p, &d.kept).unwrap().error;
        let best = subsets(c, keep_k).iter().map(|sub| oracle_error(&p, sub)).fold(f64::INFINITY, f64::min);
        let ratio = got / best;
        worst = worst.max(ratio);
        if got > 1.1 * best + 1e-12 {
            failures += 1;
        }
    }
    let elapsed = t.elapsed();
    verdict(
        2,
        failures == 0 && elapsed < Duration::from_secs(300),
        &format!("{failures}/50 instances above 1.1x best subset, worst ratio {worst:.4}, {:.1}s", elapsed.as_secs_f64()),
    );
}

#[test]
fn criterion_3_noise_model() {
    let n = 1_000_000;
    let crit = 1.628 / (n as f64).sqrt();
    let mut lines = Vec::new();
    let mut ok = true;
    for (i, &a) in [0.2f64, 0.5, 0.8].iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + i as u64);
        let stds = Tensor::<f64>::full([1, 1, 1, n], a);
        let mut xi = noise_sample(&stds, &mut rng).unwrap().into_vec();
        let mean = xi.iter().sum::<f64>() / n as f64;
        let var = xi.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let want_var = (a * a).exp() - 1.0;
        let (em, ev) = ((mean - 1.0).abs(), (var - want_var).abs() / want_var);
        xi.sort_by(f64::total_cmp);
        let dist = LogNormal::new(-a * a / 2.0, a).unwrap();
        let d = xi
            .iter()
            .enumerate()
            .map(|(k, &v)| {
                let cdf = dist.cdf(v);
                (cdf - k as f64 / n as f64).max((k + 1) as f64 / n as f64 - cdf)
            })
            .fold(0.0, f64::max);
        ok &= em <= 0.01 && ev <= 0.02 && d < crit;
        lines.push(format!("a={a}: mean err {em:.2e}, var rel err {ev:.2e}, KS D {d:.2e} < {crit:.2e}"));
    }
    verdict(3, ok, &lines.join("; "));
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-6
}

#[test]
fn criterion_4_formulas() {
    let mut fails = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            fails.push(name.to_string());
        }
    };

    let r1 = RewardConfig { kind: RewardKind::R1, flops_low: 100.0, flops_high: 300.0 };
    check("r1 at F_low", close(reward(&r1, 100.0, 0.9).0, 1.9));
    check("r1 at F_high", close(reward(&r1, 300.0, 0.9).0, 0.9));
    check("r1 midpoint", close(reward(&r1, 200.0, 0.9).0, 1.4));
    check("r1 clamps below", reward(&r1, 50.0, 0.9) == (reward(&r1, 100.0, 0.9).0, true));
    check("r1 clamps above", reward(&r1, 500.0, 0.9) == (reward(&r1, 300.0, 0.9).0, true));
    let r2 = RewardConfig { kind: RewardKind::R2, ..r1 };
    check("r2 is accuracy", close(reward(&r2, 150.0, 0.73).0, 0.73));

    check("clip term", close(clipped_surrogate(1.5, 2.0, 0.2), 2.4));
    check("clip term below", close(clipped_surrogate(0.5, 2.0, 0.2), 1.0));
    check("clip term negative q", close(clipped_surrogate(1.5, -2.0, 0.2), -3.0));
    check("unclipped branch gradient", close(clipped_surrogate_dratio(1.1, 2.0, 0.2), 2.0));
    check("clipped branch gradient", clipped_surrogate_dratio(1.5, 2.0, 0.2) == 0.0);

    check("td target", close(td_target(1.0, 2.0, 0.99, false), 2.98));
    check("td target terminal", close(td_target(1.0, 2.0, 0.99, true), 1.0));

    // Whole-network gradient vanishes when every sample sits on the clipped branch.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = AgentConfig { noise_std: 0.05, ..AgentConfig::default() };
    let mut agent = Agent::new(cfg, 1.0, &mut rng).unwrap();
    let mut prior = agent.actor.params_flat();
    let last = prior.len() - 1;
    prior[last] -= 3.0;
    agent.actor_prior.set_params_flat(&prior).unwrap();
    let batch: Vec<Transition> = (0..8)
        .map(|i| {
            let s = [i as f64 / 8.0; STATE_DIM];
            let a = agent.actor_mean(&s).unwrap();
            Transition { s, a, r: 0.0, s_next: s, done: false }
        })
        .collect();
    let ratios: Vec<f64> = batch.iter().map(|t| agent.policy_ratio(&t.s, t.a).unwrap()).collect();
    let (_, grads) = agent.actor_objective(&batch, &[1.0; 8]).unwrap();
    check("batch is clipped", ratios.iter().all(|&r| r > 1.2));
    check("clipped actor gradient is zero", grads_flat(&grads).iter().all(|&g| g == 0.0));

    // n soft updates with a frozen online network: θ' = ρⁿθ'₀ + (1 − ρⁿ)θ.
    let mut agent = Agent::new(AgentConfig::default(), 1.0, &mut rng).unwrap();
    let t0 = agent.critic_target.params_flat();
    let online: Vec<f64> = t0.iter().map(|_| gauss(&mut rng)).collect();
    agent.critic.set_params_flat(&online).unwrap();
    for _ in 0..100 {
        agent.target_update().unwrap();
    }
    let rn = agent.cfg.rho.powi(100);
    let got = agent.critic_target.params_flat();
    check("polyak n=100", got.iter().zip(&t0).zip(&online).all(|((g, a), b)| close(*g, rn * a + (1.0 - rn) * b)));
    verdict(4, fails.is_empty(), &if fails.is_empty() { "all formula checks exact to 1e-6".into() } else { format!("failed: {}", fails.join(", ")) });
}

#[test]
fn criterion_5_quantizer() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut ok = true;
    let mut worst_ratio: f64 = 0.0;
    let mut monotone = true;
    let tensors: Vec<Vec<f64>> = vec![
        (0..2000).map(|_| gauss(&mut rng) * 0.05).collect(),
        (0..2000).map(|_| Uniform::new(-3.0, 3.0).unwrap().sample(&mut rng)).collect(),
        (0..2000).map(|_| Normal::new(0.0f64, 1.0).unwrap().sample(&mut rng).powi(3)).collect(),
        vec![0.0, 1e-3, -1e-3, 0.5, -0.25],
    ];
    for vals in &tensors {
        let w = Tensor::<f64>::from_f64([1, 1, 1, vals.len()], vals).unwrap();
        let mut last = f64::INFINITY;
        for bits in 2..=8 {
            let q = quantize_uniform(&w, bits).unwrap();
            let d: Tensor<f64> = q.dequantize();
            let inf = vals.iter().zip(d.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let half = q.scale as f64 / 2.0;
            ok &= inf <= half * (1.0 + 1e-6);
            worst_ratio = worst_ratio.max(inf / half);
            let mse = vals.iter().zip(d.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / vals.len() as f64;
            monotone &= mse <= last;
            last = mse;
        }
    }
    let model: Model<f32> = deepcompress::arch::Arch::Lenet.build(deepcompress::nn::activation::Activation::Relu, 10, &mut rng);
    let dir = tempfile::tempdir().unwrap();
    let spec = QuantSpec { bits: vec![3, 5, 8, 2] };
    let bytes = save_quantized(&model, &spec, &dir.path().join("q")).unwrap();
    let expected: u64 = model
        .compressible_layers()
        .iter()
        .zip(&spec.bits)
        .map(|(&i, &b)| model.layers[i].weight.len() as u64 * b as u64 + 32)
        .sum();
    let size = fs::metadata(dir.path().join("q.qbin")).unwrap().len();
    let size_ok = bytes == size && model_bits(&model, &spec) == expected && size == expected.div_ceil(8);
    verdict(
        5,
        ok && monotone && size_ok,
        &format!("max |w - w_hat| / (delta/2) = {worst_ratio:.9}, MSE monotone {monotone}, packed {size} bytes (reported {bytes}) for {expected} bits"),
    );
}

fn config_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/mnist_lenet.json")
}

struct Run {
    cfg: RunConfig,
    elapsed: Duration,
    report: deepcompress::CompressionReport,
    single: deepcompress::pipeline::SingleLayerReport,
}

fn full_run(out: &Path) -> Run {
    let cfg = RunConfig::from_file(&config_path()).unwrap();
    let t = Instant::now();
    let report = run_pipeline(&cfg, out).unwrap_or_else(|p| panic!("pipeline failed: {}", p.error));
    let elapsed = t.elapsed();
    let mut sl = cfg.clone();
    sl.stages.train = false;
    sl.pretrained = Some(out.join("baseline"));
    let splits = load_splits(&sl).unwrap();
    let model: Model<f32> = checkpoint::load(&out.join("baseline")).unwrap();
    let single = single_layer_experiment(&sl, &model, &splits).unwrap();
    write_single_layer(&single, &out.join("single_layer")).unwrap();
    Run { cfg, elapsed, report, single }
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().is_some_and(|n| n != "timings.json") {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn criteria_6_7_8_end_to_end() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = full_run(a.path());

    let r = &first.report;
    let acc = |s: &str| r.stage(s).unwrap().test_accuracy;
    let base = r.stage("baseline").unwrap();
    let tuned = r.stage("finetuned").unwrap();
    let reduction = 1.0 - tuned.nonzero_params as f64 / base.params as f64;
    let drop = (acc("baseline") - acc("finetuned")) * 100.0;
    let quant_extra = (acc("finetuned") - acc("quantized")) * 100.0;
    let c6 = first.cfg.prune.episodes == 30
        && first.cfg.prune.env.max_rate == 0.5
        && first.cfg.prune.env.reward == RewardKind::R1
        && base.test_accuracy >= 0.97
        && reduction >= 0.40
        && drop <= 1.0
        && quant_extra <= 0.5
        && r.stage("quantized").unwrap().layers.iter().filter(|l| l.kind != LayerKind::InfoDrop).all(|l| l.bits == Some(8))
        && first.elapsed <= Duration::from_secs(7200);
    let d6 = format!(
        "baseline test {:.2}%, nonzero params {} -> {} ({:.1}% reduction), fine-tuned drop {drop:.2} pp, 8-bit extra {quant_extra:.2} pp, {:.0}s",
        acc("baseline") * 100.0,
        base.params,
        tuned.nonzero_params,
        reduction * 100.0,
        first.elapsed.as_secs_f64()
    );

    let strategies = ["channel", "magnitude", "variational"];
    let csvs = strategies.iter().all(|s| a.path().join(format!("single_layer/single_layer_{s}.csv")).is_file());
    let layers = first.single.rankings.len();
    let held = first.single.rankings.iter().filter(|k| k.expected_order_holds).count();
    let c7 = csvs && layers == 4 && first.single.curves.len() == 3 && !first.single.expectation.is_empty();
    let d7 = format!("per-strategy CSVs written for {layers} layers, expected ordering held on {held}/{layers}");

    let second = full_run(b.path());
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    let differing: Vec<String> = ta
        .keys()
        .chain(tb.keys())
        .filter(|k| ta.get(*k) != tb.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    let c8 = differing.is_empty() && first.report == second.report && first.single == second.single;
    let d8 = format!("{} output files compared, {} differ {:?}", ta.len(), differing.len(), differing);

    let _ = writeln!(std::io::stderr(), "criterion 6: {} ({d6})", if c6 { "PASS" } else { "FAIL" });
    let _ = writeln!(std::io::stderr(), "criterion 7: {} ({d7})", if c7 { "PASS" } else { "FAIL" });
    let _ = writeln!(std::io::stderr(), "criterion 8: {} ({d8})", if c8 { "PASS" } else { "FAIL" });
    assert!(c6 && c7 && c8, "end-to-end criteria: 6={c6} 7={c7} 8={c8}");
}
