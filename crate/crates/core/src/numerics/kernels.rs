//! Dense kernels with an optional rayon path.
//!
//! Every parallel kernel partitions work by output row and runs the same
//! sequential inner loop per row, so both paths produce bit-identical
//! results.

use super::Matrix;

/// Below this many multiply-adds the parallel path is not worth the
/// scheduling overhead.
pub const PARALLEL_MIN_WORK: usize = 1 << 16;

fn matmul_row(a_row: &[f64], b: &[f64], b_cols: usize, out_row: &mut [f64]) {
    for (k, &a) in a_row.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        let b_row = &b[k * b_cols..(k + 1) * b_cols];
        for (o, &bv) in out_row.iter_mut().zip(b_row) {
            *o += a * bv;
        }
    }
}

/// Sequential `a * b`. Shapes must already agree.
pub fn matmul_seq(a: &Matrix, b: &Matrix) -> Matrix {
    debug_assert_eq!(a.cols(), b.rows());
    let (n, m) = (a.rows(), b.cols());
    let mut out = vec![0.0; n * m];
    for (i, out_row) in out.chunks_mut(m).enumerate() {
        matmul_row(a.row(i), b.as_slice(), m, out_row);
    }
    Matrix::from_raw(n, m, out)
}

/// Row-parallel `a * b`. Shapes must already agree.
#[cfg(feature = "parallel")]
pub fn matmul_par(a: &Matrix, b: &Matrix) -> Matrix {
    use rayon::prelude::*;

    debug_assert_eq!(a.cols(), b.rows());
    let (n, m) = (a.rows(), b.cols());
    let mut out = vec![0.0; n * m];
    out.par_chunks_mut(m).enumerate().for_each(|(i, out_row)| {
        matmul_row(a.row(i), b.as_slice(), m, out_row);
    });
    Matrix::from_raw(n, m, out)
}

/// Dispatches to the parallel kernel for large products when the
/// `parallel` feature is enabled.
pub fn matmul(a: &Matrix, b: &Matrix) -> Matrix {
    #[cfg(feature = "parallel")]
    {
        if a.rows() * a.cols() * b.cols() >= PARALLEL_MIN_WORK && a.rows() > 1 {
            return matmul_par(a, b);
        }
    }
    matmul_seq(a, b)
}

/// Maps `f` over `items`, in parallel when the `parallel` feature is on.
/// Output order always matches input order.
pub fn map_items<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Sequential counterpart of [`map_items`], always available.
pub fn map_items_seq<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}
