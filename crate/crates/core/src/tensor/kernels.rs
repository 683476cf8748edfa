/// Strides of a matrix view over a flat buffer.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Layout {
    row_stride: isize,
    col_stride: isize,
}

impl Layout {
    pub(crate) fn row_major(cols: usize) -> Self {
        Layout {
            row_stride: cols as isize,
            col_stride: 1,
        }
    }

    /// Transposed view of a row-major matrix with `stored_cols` columns.
    pub(crate) fn transposed(stored_cols: usize) -> Self {
        Layout {
            row_stride: 1,
            col_stride: stored_cols as isize,
        }
    }
}

/// `c[m×n] = a[m×k] · b[k×n] + beta · c`, with `c` row-major.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: &[f64], la: Layout, b: &[f64], lb: Layout, c: &mut [f64], beta: f64) {
    assert!(c.len() >= m * n);
    assert!(a.len() >= m * k && b.len() >= k * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: buffer lengths are checked above and the layouts address
    // only in-bounds elements of matrices with those dimensions.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            la.row_stride,
            la.col_stride,
            b.as_ptr(),
            lb.row_stride,
            lb.col_stride,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
