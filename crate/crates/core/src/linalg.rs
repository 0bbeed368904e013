//! Dense GEMM on strided views, split across threads by output rows.

use crate::par;
use crate::real::Real;

/// Strided read-only matrix view; element `(i, j)` is `data[i * rs + j * cs]`.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a, T> {
    pub data: &'a [T],
    pub rs: usize,
    pub cs: usize,
}

impl<'a, T> MatRef<'a, T> {
    pub fn row_major(data: &'a [T], cols: usize) -> Self {
        Self { data, rs: cols, cs: 1 }
    }

    /// Transposed view of a row-major `rows x cols` matrix.
    pub fn transposed(data: &'a [T], cols: usize) -> Self {
        Self { data, rs: 1, cs: cols }
    }
}

const MIN_ROWS_PER_TASK: usize = 8;

/// `C (m x n, row-major) = A (m x k) B (k x n) [+ C if accumulate]`.
pub(crate) fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: MatRef<'_, T>,
    b: MatRef<'_, T>,
    c: &mut [T],
    accumulate: bool,
) {
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.fill(T::zero());
        }
        return;
    }
    assert!((m - 1) * a.rs + (k - 1) * a.cs < a.data.len());
    assert!((k - 1) * b.rs + (n - 1) * b.cs < b.data.len());
    let beta = if accumulate { T::one() } else { T::zero() };
    let tasks = par::threads().min(m / MIN_ROWS_PER_TASK).max(1);
    let rows = m.div_ceil(tasks);
    par::for_each_chunk_mut(c, rows * n, |chunk, cblock| {
        let r0 = chunk * rows;
        let mr = cblock.len() / n;
        // SAFETY: bounds asserted above; `cblock` is an exclusive row block.
        unsafe {
            T::gemm_raw(
                mr,
                k,
                n,
                T::one(),
                a.data.as_ptr().add(r0 * a.rs),
                a.rs as isize,
                a.cs as isize,
                b.data.as_ptr(),
                b.rs as isize,
                b.cs as isize,
                beta,
                cblock.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    });
}
