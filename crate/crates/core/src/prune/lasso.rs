//! LASSO channel selection and least-squares weight reconstruction.
//!
//! For a layer with `C` input channels the sampled problem holds, per sample,
//! the `C·K` input patch features (`K = kh·kw`) and the `M` original output
//! values. Channel `i` contributes `z_i = X_i W_iᵀ`, and the selection solves
//!
//! `min_β (1/2S) ‖Y − Σ β_i z_i‖² + λ‖β‖₁`, with `S = samples·M`,
//!
//! by coordinate descent, bisecting `λ` until exactly `keep_k` channels survive.

use crate::error::{Error, Result};
use crate::prune::linalg::{cross, least_squares};
use crate::scalar::Scalar;

pub const LAMBDA_BISECTIONS: usize = 50;
pub const CD_MAX_SWEEPS: usize = 10_000;
pub const CD_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct LassoProblem {
    pub samples: usize,
    pub channels: usize,
    /// Features per channel (`kh·kw`).
    pub k: usize,
    pub outputs: usize,
    /// `samples × channels·k`, row-major.
    pub x: Vec<f64>,
    /// `samples × outputs`, bias removed.
    pub y: Vec<f64>,
    /// Current weights `outputs × channels·k`.
    pub weight: Vec<f64>,
    pub keep_k: usize,
}

/// Outcome of channel selection.
#[derive(Debug, Clone, PartialEq)]
pub struct PruneDecision {
    /// Renormalized coefficients `β_i·‖W_i‖`; zero for dropped channels.
    pub beta: Vec<f64>,
    /// Kept channel indices, ascending.
    pub kept: Vec<usize>,
    /// Realized fraction of channels removed.
    pub rate: f64,
    pub lambda: f64,
    /// The bisection found a penalty with exactly `keep_k` nonzeros.
    pub exact: bool,
    pub converged: bool,
    /// Weights with every channel block scaled to unit Frobenius norm.
    pub unit_weight: Vec<f64>,
}

/// `keep_k = max(1, round((1 − rate)·C))`.
pub fn keep_count(channels: usize, rate: f64) -> usize {
    (((1.0 - rate) * channels as f64).round() as usize).clamp(1, channels.max(1))
}

impl LassoProblem {
    pub fn validate(&self) -> Result<()> {
        let f = self.channels * self.k;
        if self.samples == 0 {
            return Err(Error::invalid("LASSO problem has no samples"));
        }
        if self.x.len() != self.samples * f || self.y.len() != self.samples * self.outputs || self.weight.len() != self.outputs * f {
            return Err(Error::shape("LASSO problem arrays disagree with its dimensions"));
        }
        if self.keep_k == 0 || self.keep_k > self.channels {
            return Err(Error::invalid(format!("keep_k {} outside [1, {}]", self.keep_k, self.channels)));
        }
        Ok(())
    }

    fn features(&self) -> usize {
        self.channels * self.k
    }

    /// Channel contributions `z_i`, stored as `channels × (samples·outputs)`.
    pub fn contributions(&self) -> Vec<f64> {
        let (s, m, k, f) = (self.samples, self.outputs, self.k, self.features());
        let mut z = vec![0.0; self.channels * s * m];
        for i in 0..self.channels {
            f64::gemm(s, k, m, &self.x[i * k..], (f, 1), &self.weight[i * k..], (1, f), 0.0, &mut z[i * s * m..(i + 1) * s * m]);
        }
        z
    }

    /// Mean squared error of `weight` (`outputs × |kept|·k`) on the kept channels.
    pub fn error(&self, kept: &[usize], weight: &[f64]) -> f64 {
        let (s, m, k) = (self.samples, self.outputs, self.k);
        let kf = kept.len() * k;
        let xk = self.gather(kept);
        let mut pred = vec![0.0; s * m];
        f64::gemm(s, kf, m, &xk, (kf, 1), weight, (1, kf), 0.0, &mut pred);
        pred.iter().zip(&self.y).map(|(p, y)| (p - y) * (p - y)).sum::<f64>() / (s * m) as f64
    }

    /// Columns of `x` belonging to `kept`, `samples × |kept|·k`.
    pub fn gather(&self, kept: &[usize]) -> Vec<f64> {
        let (k, f) = (self.k, self.features());
        let mut out = Vec::with_capacity(self.samples * kept.len() * k);
        for row in self.x.chunks(f) {
            for &c in kept {
                out.extend_from_slice(&row[c * k..(c + 1) * k]);
            }
        }
        out
    }

    /// Current weights restricted to `kept`, `outputs × |kept|·k`.
    pub fn weight_of(&self, kept: &[usize]) -> Vec<f64> {
        let (k, f) = (self.k, self.features());
        let mut out = Vec::with_capacity(self.outputs * kept.len() * k);
        for row in self.weight.chunks(f) {
            for &c in kept {
                out.extend_from_slice(&row[c * k..(c + 1) * k]);
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
struct CdResult {
    beta: Vec<f64>,
    converged: bool,
}

/// Coordinate descent on the Gram form with warm start `beta`.
fn coordinate_descent(gram: &[f64], zty: &[f64], scale: f64, lambda: f64, mut beta: Vec<f64>) -> CdResult {
    let c = zty.len();
    let thresh = scale * lambda;
    for _ in 0..CD_MAX_SWEEPS {
        let mut max_delta = 0.0f64;
        let mut max_beta = 0.0f64;
        for i in 0..c {
            let gii = gram[i * c + i];
            let mut rho = zty[i];
            for j in 0..c {
                if j != i {
                    rho -= gram[i * c + j] * beta[j];
                }
            }
            let new = if gii > 0.0 { soft_threshold(rho, thresh) / gii } else { 0.0 };
            max_delta = max_delta.max((new - beta[i]).abs() * gii.sqrt());
            max_beta = max_beta.max(new.abs() * gii.sqrt());
            beta[i] = new;
        }
        if max_delta <= CD_TOL * max_beta.max(f64::MIN_POSITIVE) {
            return CdResult { beta, converged: true };
        }
    }
    CdResult { beta, converged: false }
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

fn nnz(beta: &[f64]) -> usize {
    beta.iter().filter(|b| **b != 0.0).count()
}

/// Indices of the `k` largest `|β|`, ties to the lower index, ascending.
fn top_k(beta: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..beta.len()).collect();
    idx.sort_by(|&a, &b| beta[b].abs().total_cmp(&beta[a].abs()).then(a.cmp(&b)));
    let mut kept = idx[..k].to_vec();
    kept.sort_unstable();
    kept
}

/// Solve the selection problem for a fixed `λ`, returning raw (un-renormalized) `β`.
pub fn lasso_solve(p: &LassoProblem, lambda: f64) -> Result<(Vec<f64>, bool)> {
    p.validate()?;
    let (gram, zty, scale) = lasso_system(p);
    let r = coordinate_descent(&gram, &zty, scale, lambda, vec![0.0; p.channels]);
    Ok((r.beta, r.converged))
}

fn lasso_system(p: &LassoProblem) -> (Vec<f64>, Vec<f64>, f64) {
    let sm = p.samples * p.outputs;
    let z = p.contributions();
    // z is channels × sm row-major, i.e. the transpose of the design matrix.
    let mut gram = vec![0.0; p.channels * p.channels];
    f64::gemm(p.channels, sm, p.channels, &z, (sm, 1), &z, (1, sm), 0.0, &mut gram);
    let zty = cross(&transpose(&z, p.channels, sm), p.channels, &p.y, 1, sm);
    (gram, zty, sm as f64)
}

fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; a.len()];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = a[r * cols + c];
        }
    }
    t
}

/// Select `keep_k` channels by bisection on `λ`, then renormalize.
pub fn lasso_channel_select(p: &LassoProblem) -> Result<PruneDecision> {
    p.validate()?;
    let (gram, zty, scale) = lasso_system(p);
    let c = p.channels;
    let (beta, lambda, exact, converged) = if p.keep_k == c {
        let r = coordinate_descent(&gram, &zty, scale, 0.0, vec![0.0; c]);
        (r.beta, 0.0, true, r.converged)
    } else {
        let lambda_max = zty.iter().fold(0.0f64, |a, v| a.max(v.abs())) / scale;
        let (mut lo, mut hi) = (0.0, lambda_max);
        let mut lo_sol = coordinate_descent(&gram, &zty, scale, 0.0, vec![0.0; c]);
        let mut warm = lo_sol.beta.clone();
        let mut found = None;
        for _ in 0..LAMBDA_BISECTIONS {
            let mid = 0.5 * (lo + hi);
            let r = coordinate_descent(&gram, &zty, scale, mid, warm.clone());
            let n = nnz(&r.beta);
            warm = r.beta.clone();
            if n == p.keep_k {
                found = Some((r, mid));
                break;
            } else if n > p.keep_k {
                lo = mid;
                lo_sol = r;
            } else {
                hi = mid;
            }
        }
        match found {
            Some((r, l)) => (r.beta, l, true, r.converged),
            None => (lo_sol.beta, lo, false, lo_sol.converged),
        }
    };
    let kept = if exact && p.keep_k < c {
        (0..c).filter(|&i| beta[i] != 0.0).collect()
    } else if p.keep_k == c {
        (0..c).collect()
    } else {
        top_k(&beta, p.keep_k)
    };
    let k = p.k;
    let f = c * k;
    let mut unit_weight = p.weight.clone();
    let mut out_beta = vec![0.0; c];
    for &i in &kept {
        let norm = p.weight.chunks(f).map(|row| row[i * k..(i + 1) * k].iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt();
        out_beta[i] = beta[i] * norm;
        if norm > 0.0 {
            for row in unit_weight.chunks_mut(f) {
                for v in &mut row[i * k..(i + 1) * k] {
                    *v /= norm;
                }
            }
        }
    }
    Ok(PruneDecision {
        beta: out_beta,
        rate: 1.0 - kept.len() as f64 / c as f64,
        kept,
        lambda,
        exact,
        converged,
        unit_weight,
    })
}

/// Weights `β_i·Ŵ_i` implied by a decision, restricted to the kept channels.
pub fn scaled_weight(p: &LassoProblem, d: &PruneDecision) -> Vec<f64> {
    let (k, f) = (p.k, p.channels * p.k);
    let mut out = Vec::with_capacity(p.outputs * d.kept.len() * k);
    for row in d.unit_weight.chunks(f) {
        for &c in &d.kept {
            out.extend(row[c * k..(c + 1) * k].iter().map(|v| v * d.beta[c]));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Refit {
    /// `outputs × |kept|·k`.
    pub weight: Vec<f64>,
    /// Mean squared reconstruction error on the sampled problem.
    pub error: f64,
}

/// Ordinary least-squares refit of `Y` on the kept channel blocks.
pub fn reconstruct_weights(p: &LassoProblem, kept: &[usize]) -> Result<Refit> {
    p.validate()?;
    if kept.is_empty() || kept.iter().any(|&c| c >= p.channels) {
        return Err(Error::invalid("kept set must be a nonempty subset of the channels"));
    }
    let kf = kept.len() * p.k;
    let xk = p.gather(kept);
    let b = least_squares(&xk, &p.y, p.samples, kf, p.outputs)?;
    let weight = transpose(&b, kf, p.outputs);
    let error = p.error(kept, &weight);
    Ok(Refit { weight, error })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn problem(x: Vec<f64>, w: Vec<f64>, channels: usize, keep_k: usize) -> LassoProblem {
        let samples = x.len() / channels;
        let mut y = vec![0.0; samples];
        for s in 0..samples {
            y[s] = (0..channels).map(|c| x[s * channels + c] * w[c]).sum();
        }
        LassoProblem { samples, channels, k: 1, outputs: 1, x, y, weight: w, keep_k }
    }

    #[test]
    fn keep_count_rounds() {
        assert_eq!(keep_count(8, 0.5), 4);
        assert_eq!(keep_count(1, 0.5), 1);
        assert_eq!(keep_count(10, 0.0), 10);
        assert_eq!(keep_count(3, 0.99), 1);
    }

    #[test]
    fn silent_channel_is_dropped() {
        let x = vec![1.0, 0.0, 2.0, 0.5, 0.0, -1.0, -1.0, 0.0, 0.3, 2.0, 0.0, 1.0];
        let p = problem(x, vec![1.0, 1.0, 1.0], 3, 2);
        let d = lasso_channel_select(&p).unwrap();
        assert_eq!(d.kept, vec![0, 2]);
        assert!(d.exact);
    }

    #[test]
    fn zero_penalty_recovers_least_squares() {
        let x = vec![1.0, 0.2, 0.3, 1.0, -0.5, 0.7, 0.9, -0.1];
        let p = problem(x, vec![2.0, -3.0], 2, 2);
        // Targets are generated by the weights themselves, so the raw solution is β = 1.
        let (raw, converged) = lasso_solve(&p, 0.0).unwrap();
        assert!(converged);
        assert!((raw[0] - 1.0).abs() < 1e-9 && (raw[1] - 1.0).abs() < 1e-9);
        let d = lasso_channel_select(&p).unwrap();
        assert_eq!(d.kept, vec![0, 1]);
        // Renormalized: β_i·‖W_i‖ with the sign kept in the unit weights.
        assert!((d.beta[0] - 2.0).abs() < 1e-8 && (d.beta[1] - 3.0).abs() < 1e-8);
        assert_eq!(d.unit_weight, vec![1.0, -1.0]);
    }

    #[test]
    fn full_refit_reproduces_outputs() {
        let x = vec![1.0, 0.2, 0.3, 1.0, -0.5, 0.7, 0.9, -0.1];
        let p = problem(x, vec![2.0, -3.0], 2, 2);
        let r = reconstruct_weights(&p, &[0, 1]).unwrap();
        assert!(r.error < 1e-12);
        assert!((r.weight[0] - 2.0).abs() < 1e-6 && (r.weight[1] + 3.0).abs() < 1e-6);
    }

    #[test]
    fn orthogonal_drop_costs_channel_energy() {
        // Channels with orthogonal signals: dropping channel 1 costs its full energy.
        let x = vec![1.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0, -1.0];
        let p = problem(x, vec![1.0, 2.0], 2, 1);
        let r = reconstruct_weights(&p, &[0]).unwrap();
        let energy = (2.0f64 * 2.0 + 2.0 * 2.0) / 4.0;
        assert!((r.error - energy).abs() < 1e-12);
    }
}
