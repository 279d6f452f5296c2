use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, NumCast};

/// Strided view of a row-major-or-transposed matrix operand.
#[derive(Debug, Clone, Copy)]
pub struct MatLayout {
    pub row_stride: usize,
    pub col_stride: usize,
}

impl MatLayout {
    /// Plain row-major layout of a matrix with `cols` columns.
    pub fn row_major(cols: usize) -> Self {
        Self {
            row_stride: cols,
            col_stride: 1,
        }
    }

    /// Layout that reads a row-major `rows x cols` buffer as its transpose.
    pub fn transposed(cols: usize) -> Self {
        Self {
            row_stride: 1,
            col_stride: cols,
        }
    }

    fn extent(&self, rows: usize, cols: usize) -> usize {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * self.row_stride + (cols - 1) * self.col_stride + 1
        }
    }
}

/// Floating-point element type for tensors: `f32` for training, `f64` for
/// gradient checks and oracles.
pub trait Scalar:
    Float
    + FromPrimitive
    + NumCast
    + Default
    + Debug
    + Display
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Send
    + Sync
    + 'static
{
    const NAME: &'static str;

    /// `c = a * b + beta * c` where `c` is a contiguous row-major `m x n`
    /// buffer and `a` (`m x k`), `b` (`k x n`) are read through `layout`s.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_layout: MatLayout,
        b: &[Self],
        b_layout: MatLayout,
        beta: Self,
        c: &mut [Self],
    );

    fn from_f64_lossy(v: f64) -> Self {
        <Self as NumCast>::from(v).expect("finite f64 converts to any float")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("float converts to f64")
    }
}

fn check_gemm_bounds<T>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_layout: MatLayout,
    b: &[T],
    b_layout: MatLayout,
    c: &[T],
) {
    assert!(a_layout.extent(m, k) <= a.len(), "gemm: lhs buffer too short");
    assert!(b_layout.extent(k, n) <= b.len(), "gemm: rhs buffer too short");
    assert!(m * n <= c.len(), "gemm: output buffer too short");
}

macro_rules! impl_scalar {
    ($t:ty, $name:literal, $kernel:path) => {
        impl Scalar for $t {
            const NAME: &'static str = $name;

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                a_layout: MatLayout,
                b: &[Self],
                b_layout: MatLayout,
                beta: Self,
                c: &mut [Self],
            ) {
                check_gemm_bounds(m, k, n, a, a_layout, b, b_layout, c);
                if m == 0 || n == 0 {
                    return;
                }
                if k == 0 {
                    c[..m * n].iter_mut().for_each(|v| *v *= beta);
                    return;
                }
                // SAFETY: every strided read/write stays inside the slices,
                // checked by `check_gemm_bounds` above.
                unsafe {
                    $kernel(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        a_layout.row_stride as isize,
                        a_layout.col_stride as isize,
                        b.as_ptr(),
                        b_layout.row_stride as isize,
                        b_layout.col_stride as isize,
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

impl_scalar!(f32, "f32", matrixmultiply::sgemm);
impl_scalar!(f64, "f64", matrixmultiply::dgemm);
