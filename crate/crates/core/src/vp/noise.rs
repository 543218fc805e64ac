//! Log-normal multiplicative noise of information dropout.
//!
//! `log ξ ~ N(u, a²)` with the mean shift `u = −a²/2`, so `E[ξ] = 1` for every
//! admissible `a`. The moment relations
//! `E[ξ] = exp(u + a²/2)` and `D[ξ] = (exp(a²) − 1)·exp(a² + 2u)` are exposed
//! in both directions for recovering `(u, a)` from sample moments.

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::scalar::{cast, to_f64, Scalar};
use crate::tensor::Tensor;

/// Hard upper bound on the per-activation log-noise standard deviation.
pub const NOISE_STD_CAP: f64 = 0.8;

/// `ξ = exp(g·a − a²/2)` for a standard normal draw `g`.
#[inline]
pub fn noise_from_normal<T: Scalar>(a: T, g: T) -> T {
    let half: T = cast(0.5);
    (g * a - half * a * a).exp()
}

/// Mean and variance of `ξ` when `log ξ ~ N(u, a²)`.
pub fn lognormal_moments(u: f64, a: f64) -> (f64, f64) {
    let a2 = a * a;
    ((u + a2 / 2.0).exp(), (a2.exp() - 1.0) * (a2 + 2.0 * u).exp())
}

/// Inverse of [`lognormal_moments`]: the `(u, a)` matching a sample mean and variance.
pub fn lognormal_params_from_moments(mean: f64, var: f64) -> Result<(f64, f64)> {
    if mean <= 0.0 || var < 0.0 {
        return Err(Error::invalid(format!("log-normal moments need mean > 0, var ≥ 0 (got {mean}, {var})")));
    }
    let a2 = (1.0 + var / (mean * mean)).ln();
    Ok((mean.ln() - a2 / 2.0, a2.sqrt()))
}

/// Draw standard normals of the given shape.
pub fn standard_normals<T: Scalar>(shape: [usize; 4], rng: &mut dyn RngCore) -> Tensor<T> {
    let len: usize = shape.iter().product();
    let data = (0..len)
        .map(|_| {
            let g: f64 = StandardNormal.sample(rng);
            cast(g)
        })
        .collect();
    Tensor::from_vec(shape, data).expect("length matches")
}

/// Sample unit-mean log-normal noise with per-element log-std `a ∈ (0, cap]`.
pub fn noise_sample<T: Scalar>(a: &Tensor<T>, rng: &mut dyn RngCore) -> Result<Tensor<T>> {
    if let Some(bad) = a.data().iter().find(|&&v| !(v > T::zero() && to_f64(v) <= NOISE_STD_CAP)) {
        return Err(Error::invalid(format!(
            "noise std {bad} outside (0, {NOISE_STD_CAP}]"
        )));
    }
    let g = standard_normals::<T>(a.shape(), rng);
    a.zip_map(&g, noise_from_normal)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn vanishing_std_gives_unit_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = Tensor::<f64>::full([1, 1, 4, 4], 1e-12);
        let xi = noise_sample(&a, &mut rng).unwrap();
        assert!(xi.data().iter().all(|&v| (v - 1.0).abs() < 1e-10));
    }

    #[test]
    fn closed_form_moments_at_unit_std() {
        let (m, v) = lognormal_moments(0.0, 1.0);
        assert!((m - 1.64872).abs() < 1e-5);
        assert!((v - 4.67077).abs() < 1e-5);
        let (u, a) = lognormal_params_from_moments(m, v).unwrap();
        assert!(u.abs() < 1e-12 && (a - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mean_shift_gives_unit_mean() {
        for a in [0.1, 0.5, 0.8] {
            let (m, _) = lognormal_moments(-a * a / 2.0, a);
            assert!((m - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn out_of_cap_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        assert!(noise_sample(&Tensor::<f32>::full([1, 1, 1, 1], 0.81), &mut rng).is_err());
        assert!(noise_sample(&Tensor::<f32>::full([1, 1, 1, 1], 0.0), &mut rng).is_err());
    }
}
