//! Scalar abstraction shared by every numeric routine in the crate.
//!
//! Networks store `f32` in production and are instantiated with `f64` for
//! finite-difference gradient checks. Reductions that feed losses and
//! statistics accumulate in `f64` regardless of the storage type.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// `c ← a·b + beta·c` for row-major strided operands.
    ///
    /// `a` is `m×k`, `b` is `k×n`, `c` is `m×n`; strides are `(row, col)` in elements.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_stride: (usize, usize),
        b: &[Self],
        b_stride: (usize, usize),
        beta: Self,
        c: &mut [Self],
    );

    /// Number of bits in the storage representation.
    const BITS: u32;
}

fn check_extent(len: usize, rows: usize, cols: usize, stride: (usize, usize)) {
    if rows > 0 && cols > 0 {
        let last = (rows - 1) * stride.0 + (cols - 1) * stride.1;
        assert!(last < len, "gemm operand too small: need index {last}, have {len}");
    }
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path, $bits:expr) => {
        impl Scalar for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                a_stride: (usize, usize),
                b: &[Self],
                b_stride: (usize, usize),
                beta: Self,
                c: &mut [Self],
            ) {
                check_extent(a.len(), m, k, a_stride);
                check_extent(b.len(), k, n, b_stride);
                check_extent(c.len(), m, n, (n, 1));
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: extents were checked above; c is exclusively borrowed.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        a_stride.0 as isize,
                        a_stride.1 as isize,
                        b.as_ptr(),
                        b_stride.0 as isize,
                        b_stride.1 as isize,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }

            const BITS: u32 = $bits;
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm, 32);
impl_scalar!(f64, matrixmultiply::dgemm, 64);

/// Lossless-enough conversion from an `f64` literal or statistic.
#[inline]
pub fn cast<T: Scalar>(v: f64) -> T {
    T::from_f64(v).expect("f64 is representable in every Scalar")
}

#[inline]
pub fn to_f64<T: Scalar>(v: T) -> f64 {
    v.to_f64().expect("Scalar converts to f64")
}

/// Sum accumulated in `f64`.
pub fn sum_f64<T: Scalar>(xs: &[T]) -> f64 {
    xs.iter().map(|&x| to_f64(x)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_naive_with_transposed_operand() {
        // a: 2x3, b^T stored as 2x3 (so b is 3x2)
        let a = [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0];
        let bt = [1.0f64, 0.0, -1.0, 2.0, 1.0, 0.5];
        let mut c = [0.0f64; 4];
        f64::gemm(2, 3, 2, &a, (3, 1), &bt, (1, 3), 0.0, &mut c);
        // row0: [1*1+2*0+3*-1, 1*2+2*1+3*0.5] = [-2, 5.5]
        assert_eq!(c, [-2.0, 5.5, -2.0, 16.0]);
        f32::gemm(1, 1, 1, &[2.0], (1, 1), &[3.0], (1, 1), 1.0, &mut [1.0f32]);
    }
}
