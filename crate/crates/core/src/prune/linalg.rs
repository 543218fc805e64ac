//! Dense least squares in `f64`.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `AᵀA` for row-major `a` (`rows × cols`).
pub fn gram(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut g = vec![0.0; cols * cols];
    f64::gemm(cols, rows, cols, a, (1, cols), a, (cols, 1), 0.0, &mut g);
    g
}

/// `AᵀB` for row-major `a` (`rows × ca`) and `b` (`rows × cb`).
pub fn cross(a: &[f64], ca: usize, b: &[f64], cb: usize, rows: usize) -> Vec<f64> {
    let mut out = vec![0.0; ca * cb];
    f64::gemm(ca, rows, cb, a, (1, ca), b, (cb, 1), 0.0, &mut out);
    out
}

/// Relative eigenvalue cutoff of the pseudo-inverse.
const RCOND: f64 = 1e-12;

/// Minimum-norm solution of `min ‖X·B − Y‖_F` from the normal equations.
///
/// `gram = XᵀX` (`f × f`), `xty = XᵀY` (`f × m`). Returns `B` row-major `f × m`.
/// Columns of `X` that are identically zero get zero coefficients. The
/// remaining system is solved by Cholesky, falling back to an eigenvalue
/// pseudo-inverse when it is (numerically) singular.
pub fn solve_normal_equations(gram: &[f64], xty: &[f64], f: usize, m: usize) -> Result<Vec<f64>> {
    if gram.len() != f * f || xty.len() != f * m {
        return Err(Error::shape(format!("normal equations: gram {} / rhs {} for f={f}, m={m}", gram.len(), xty.len())));
    }
    let live: Vec<usize> = (0..f).filter(|&i| gram[i * f + i] > 0.0).collect();
    let r = live.len();
    let mut out = vec![0.0; f * m];
    if r == 0 {
        return Ok(out);
    }
    let g = DMatrix::from_fn(r, r, |i, j| gram[live[i] * f + live[j]]);
    let rhs = DMatrix::from_fn(r, m, |i, j| xty[live[i] * m + j]);
    let max_diag = (0..r).map(|i| g[(i, i)]).fold(0.0, f64::max);
    let chol = g.clone().cholesky().filter(|ch| {
        let l = ch.l();
        (0..r).all(|i| l[(i, i)].powi(2) > RCOND * max_diag)
    });
    let sol = match chol {
        Some(ch) => ch.solve(&rhs),
        None => {
            let eig = SymmetricEigen::new(g);
            let top = eig.eigenvalues.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
            let cut = top * RCOND * r as f64;
            let inv = eig.eigenvalues.map(|v| if v > cut { 1.0 / v } else { 0.0 });
            let q = &eig.eigenvectors;
            q * DMatrix::from_diagonal(&inv) * q.transpose() * rhs
        }
    };
    for (i, &li) in live.iter().enumerate() {
        for j in 0..m {
            out[li * m + j] = sol[(i, j)];
        }
    }
    Ok(out)
}

/// Minimum-norm least squares for row-major `x` (`s × f`) and `y` (`s × m`).
pub fn least_squares(x: &[f64], y: &[f64], s: usize, f: usize, m: usize) -> Result<Vec<f64>> {
    if x.len() != s * f || y.len() != s * m {
        return Err(Error::shape(format!("least squares: x {} / y {} for s={s}, f={f}, m={m}", x.len(), y.len())));
    }
    solve_normal_equations(&gram(x, s, f), &cross(x, f, y, m, s), f, m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_system() {
        // y = 2·x0 − x1
        let x = [1.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let y = [2.0, -1.0, 1.0];
        let b = least_squares(&x, &y, 3, 2, 1).unwrap();
        assert!((b[0] - 2.0).abs() < 1e-12 && (b[1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn duplicate_columns_get_minimum_norm() {
        let x = [1.0, 1.0, 2.0, 2.0];
        let y = [2.0, 4.0];
        let b = least_squares(&x, &y, 2, 2, 1).unwrap();
        assert!((b[0] - 1.0).abs() < 1e-9 && (b[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_column_is_ignored() {
        let x = [0.0, 1.0, 0.0, 2.0];
        let y = [3.0, 6.0];
        let b = least_squares(&x, &y, 2, 2, 1).unwrap();
        assert_eq!(b[0], 0.0);
        assert!((b[1] - 3.0).abs() < 1e-12);
    }
}
