use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Strided view of a row-major matrix operand for [`Real::gemm`].
#[derive(Clone, Copy, Debug)]
pub struct MatRef<'a, T> {
    pub data: &'a [T],
    pub row_stride: usize,
    pub col_stride: usize,
}

impl<'a, T> MatRef<'a, T> {
    /// Plain row-major matrix with `cols` columns.
    pub fn rows(data: &'a [T], cols: usize) -> Self {
        Self { data, row_stride: cols, col_stride: 1 }
    }

    /// Transposed view of a row-major matrix that has `cols` columns.
    pub fn transposed(data: &'a [T], cols: usize) -> Self {
        Self { data, row_stride: 1, col_stride: cols }
    }

    fn max_index(&self, rows: usize, cols: usize) -> usize {
        (rows - 1) * self.row_stride + (cols - 1) * self.col_stride
    }
}

/// Scalar type the engine computes in: `f32` for training, `f64` for verification.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Send
    + Sync
    + 'static
{
    const NAME: &'static str;

    /// `c = alpha * a(m×k) * b(k×n) + beta * c`, with `c` row-major `m×n`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: MatRef<'_, Self>,
        b: MatRef<'_, Self>,
        beta: Self,
        c: &mut [Self],
    );

    /// `c = a(m×k) · b(k×n)` with `b` row-major.
    fn matmul_nn(m: usize, k: usize, n: usize, a: MatRef<'_, Self>, b: &[Self], c: &mut [Self]) {
        Self::gemm(m, k, n, Self::one(), a, MatRef::rows(b, n), Self::zero(), c);
    }

    /// `c = a(m×k) · b(n×k)ᵀ` with both operands row-major.
    fn matmul_nt(m: usize, k: usize, n: usize, a: &[Self], b: &[Self], c: &mut [Self]) {
        Self::gemm(m, k, n, Self::one(), MatRef::rows(a, k), MatRef::transposed(b, k), Self::zero(), c);
    }

    /// The slice itself when `Self` is `f32`; lets hot paths pick f32 kernels.
    #[doc(hidden)]
    fn as_f32(_s: &[Self]) -> Option<&[f32]> {
        None
    }

    #[doc(hidden)]
    fn as_f32_mut(_s: &mut [Self]) -> Option<&mut [f32]> {
        None
    }

    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("representable literal")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

fn check_gemm_bounds<T>(m: usize, k: usize, n: usize, a: &MatRef<'_, T>, b: &MatRef<'_, T>, c: &[T]) {
    assert!(c.len() >= m * n, "gemm: output buffer too small");
    if m > 0 && k > 0 {
        assert!(a.max_index(m, k) < a.data.len(), "gemm: lhs out of bounds");
    }
    if k > 0 && n > 0 {
        assert!(b.max_index(k, n) < b.data.len(), "gemm: rhs out of bounds");
    }
}

macro_rules! impl_real {
    ($ty:ty, $name:literal, $kernel:path $(, $extra:item)*) => {
        impl Real for $ty {
            const NAME: &'static str = $name;
            $($extra)*

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: MatRef<'_, Self>,
                b: MatRef<'_, Self>,
                beta: Self,
                c: &mut [Self],
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                if k == 0 {
                    for v in c[..m * n].iter_mut() {
                        *v *= beta;
                    }
                    return;
                }
                check_gemm_bounds(m, k, n, &a, &b, c);
                // SAFETY: extents and strides were bounds-checked against the slices above.
                unsafe {
                    $kernel(
                        m,
                        k,
                        n,
                        alpha,
                        a.data.as_ptr(),
                        a.row_stride as isize,
                        a.col_stride as isize,
                        b.data.as_ptr(),
                        b.row_stride as isize,
                        b.col_stride as isize,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_real!(
    f32,
    "f32",
    matrixmultiply::sgemm,
    fn as_f32(s: &[Self]) -> Option<&[f32]> {
        Some(s)
    },
    fn as_f32_mut(s: &mut [Self]) -> Option<&mut [f32]> {
        Some(s)
    },
    fn matmul_nn(m: usize, k: usize, n: usize, a: MatRef<'_, Self>, b: &[Self], c: &mut [Self]) {
        if !crate::kernels::nn_f32(m, k, n, a, b, c) {
            Self::gemm(m, k, n, 1.0, a, MatRef::rows(b, n), 0.0, c);
        }
    },
    fn matmul_nt(m: usize, k: usize, n: usize, a: &[Self], b: &[Self], c: &mut [Self]) {
        if !crate::kernels::nt_f32(m, k, n, a, b, c) {
            Self::gemm(m, k, n, 1.0, MatRef::rows(a, k), MatRef::transposed(b, k), 0.0, c);
        }
    }
);
impl_real!(f64, "f64", matrixmultiply::dgemm);
