//! Central finite-difference gradient oracle.

/// Denominator floor of the relative error: derivatives smaller than this
/// are judged by absolute error instead.
pub const REL_ERR_FLOOR: f64 = 1e-3;

/// Default perturbation, scaled by `max(|x|, 1)`.
pub const FD_STEP: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }
}

pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_ERR_FLOOR)
}

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn numeric_gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = step * x[i].abs().max(1.0);
            xp[i] = x[i] + h;
            let fp = f(&xp);
            xp[i] = x[i] - h;
            let fm = f(&xp);
            xp[i] = x[i];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// Compare an analytic gradient against central differences of `f`.
pub fn check_gradient(f: impl FnMut(&[f64]) -> f64, x: &[f64], analytic: &[f64]) -> GradCheck {
    assert_eq!(x.len(), analytic.len(), "gradient length mismatch");
    let numeric = numeric_gradient(f, x, FD_STEP);
    let mut worst = GradCheck {
        max_rel_err: 0.0,
        worst_index: 0,
        analytic: analytic.first().copied().unwrap_or(0.0),
        numeric: numeric.first().copied().unwrap_or(0.0),
    };
    for (i, (&a, &n)) in analytic.iter().zip(&numeric).enumerate() {
        let e = relative_error(a, n);
        if e > worst.max_rel_err || e.is_nan() {
            worst = GradCheck {
                max_rel_err: if e.is_nan() { f64::INFINITY } else { e },
                worst_index: i,
                analytic: a,
                numeric: n,
            };
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_gradient() {
        let x = [0.5, -2.0, 3.0];
        let f = |v: &[f64]| v.iter().map(|t| t * t * t).sum::<f64>();
        let g: Vec<f64> = x.iter().map(|t| 3.0 * t * t).collect();
        assert!(check_gradient(f, &x, &g).passes(1e-5));
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let x = [1.0, 2.0];
        let f = |v: &[f64]| v[0] * v[1];
        // True gradient is (2, 1).
        let r = check_gradient(f, &x, &[2.0, 2.0]);
        assert_eq!(r.worst_index, 1);
        assert!((r.max_rel_err - 0.5).abs() < 1e-6);
    }
}
