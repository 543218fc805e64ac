use deepcompress::agent::{gaussian_ratio, select_action, Agent, AgentConfig, Transition};
use deepcompress::env::STATE_DIM;
use deepcompress::nn::model::grads_flat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn batch(agent: &Agent, rng: &mut ChaCha8Rng) -> Vec<Transition> {
    (0..6)
        .map(|_| {
            let s: [f64; STATE_DIM] = std::array::from_fn(|_| rng.random::<f64>());
            let a = (agent.actor_mean(&s).unwrap() + rng.random_range(-0.05..0.05)).clamp(0.0, 1.0);
            Transition { s, a, r: 0.0, s_next: s, done: false }
        })
        .collect()
}

/// With the prior equal to the current policy the surrogate gradient is the
/// plain policy gradient mean(Q·(a − μ)/σ²·∇μ).
#[test]
fn actor_gradient_matches_policy_gradient_at_prior() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut agent = Agent::new(AgentConfig::default(), 1.0, &mut rng).unwrap();
    agent.begin_episode();
    let b = batch(&agent, &mut rng);
    let q: Vec<f64> = (0..b.len()).map(|_| rng.random_range(-1.0..2.0)).collect();
    let (_, grads) = agent.actor_objective(&b, &q).unwrap();
    let got = grads_flat(&grads);

    let sigma = agent.noise_std;
    let theta = agent.actor.params_flat();
    let mut probe = agent.actor.clone();
    let mut want = vec![0.0; theta.len()];
    for (j, w) in want.iter_mut().enumerate() {
        let h = 1e-6;
        let mut p = theta.clone();
        p[j] += h;
        probe.set_params_flat(&p).unwrap();
        let plus: Vec<f64> = b.iter().map(|t| probe.forward(&state(&t.s)).unwrap().data()[0]).collect();
        p[j] -= 2.0 * h;
        probe.set_params_flat(&p).unwrap();
        let minus: Vec<f64> = b.iter().map(|t| probe.forward(&state(&t.s)).unwrap().data()[0]).collect();
        for (i, t) in b.iter().enumerate() {
            let mu = agent.actor_mean(&t.s).unwrap();
            let dmu = (plus[i] - minus[i]) / (2.0 * h);
            *w += q[i] * (t.a - mu) / (sigma * sigma) * dmu / b.len() as f64;
        }
    }
    let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (g, w) in got.iter().zip(&want) {
        assert!((g - w).abs() <= 1e-6 * scale.max(1.0), "{g} vs {w}");
    }
}

fn state(s: &[f64; STATE_DIM]) -> deepcompress::Tensor4d {
    deepcompress::Tensor4d::from_vec([1, STATE_DIM, 1, 1], s.to_vec()).unwrap()
}

#[test]
fn ratio_is_one_at_prior_and_matches_density_quotient() {
    assert_eq!(gaussian_ratio(0.3, 0.2, 0.2, 0.1), 1.0);
    let pdf = |x: f64, m: f64, s: f64| (-(x - m).powi(2) / (2.0 * s * s)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt());
    let (a, m, p, s) = (0.4, 0.35, 0.5, 0.2);
    assert!((gaussian_ratio(a, m, p, s) - pdf(a, m, s) / pdf(a, p, s)).abs() < 1e-12);
}

#[test]
fn exploration_noise_is_centered() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = 100_000;
    let mean = (0..n).map(|_| select_action(0.25, 1.0, 0.05, &mut rng)).sum::<f64>() / n as f64;
    assert!((mean - 0.25).abs() < 0.005, "{mean}");
    assert_eq!(select_action(0.7, 0.5, 0.0, &mut rng), 0.5);
    assert_eq!(select_action(0.3, 0.5, 0.0, &mut rng), 0.3);
}

#[test]
fn noise_decays_to_floor() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = AgentConfig { noise_std: 0.3, noise_decay: 0.5, noise_floor: 0.01, ..AgentConfig::default() };
    let mut agent = Agent::new(cfg, 1.0, &mut rng).unwrap();
    agent.end_episode();
    assert!((agent.noise_std - 0.15).abs() < 1e-15);
    for _ in 0..20 {
        agent.end_episode();
    }
    assert_eq!(agent.noise_std, 0.01);
}
