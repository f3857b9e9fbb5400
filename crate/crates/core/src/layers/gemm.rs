//! Small dense matrix product used by the convolution kernels.

use crate::tensor::Real;

const MR: usize = 4;
const NR: usize = 8;

/// `c = a * b` with `a: m x k`, `b: k x n`, all row-major. Every output is
/// accumulated from zero in increasing `k` order, so the result matches a
/// naive triple loop bit for bit.
pub(crate) fn matmul<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let mut i = 0;
    let mut panel = vec![T::zero(); k * MR];
    while i + MR <= m {
        // Interleave MR rows of `a` so the inner loop reads them contiguously.
        for (kk, dst) in panel.chunks_exact_mut(MR).enumerate() {
            for (r, d) in dst.iter_mut().enumerate() {
                *d = a[(i + r) * k + kk];
            }
        }
        let mut j = 0;
        while j + NR <= n {
            let mut acc = [[T::zero(); NR]; MR];
            for (ap, brow) in panel.chunks_exact(MR).zip(b[j..].chunks(n)) {
                let brow: &[T; NR] = brow[..NR].try_into().unwrap();
                for r in 0..MR {
                    for l in 0..NR {
                        acc[r][l] += ap[r] * brow[l];
                    }
                }
            }
            for (r, row) in acc.iter().enumerate() {
                c[(i + r) * n + j..(i + r) * n + j + NR].copy_from_slice(row);
            }
            j += NR;
        }
        if j < n {
            edge(a, b, c, i..i + MR, j..n, k, n);
        }
        i += MR;
    }
    if i < m {
        edge(a, b, c, i..m, 0..n, k, n);
    }
}

fn edge<T: Real>(
    a: &[T],
    b: &[T],
    c: &mut [T],
    rows: std::ops::Range<usize>,
    cols: std::ops::Range<usize>,
    k: usize,
    n: usize,
) {
    for i in rows {
        let out = &mut c[i * n + cols.start..i * n + cols.end];
        out.fill(T::zero());
        for kk in 0..k {
            let av = a[i * k + kk];
            for (o, &bv) in out.iter_mut().zip(&b[kk * n + cols.start..kk * n + cols.end]) {
                *o += av * bv;
            }
        }
    }
}

/// Row-major transpose of an `m x n` matrix.
pub(crate) fn transpose<T: Real>(a: &[T], m: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}
