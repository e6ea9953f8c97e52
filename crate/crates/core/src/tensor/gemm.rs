//! Small dense matrix kernels backing the convolution fast path.
//!
//! Row-major throughout. Accumulation order is fixed (k ascending), so
//! results do not depend on the thread count; parallel callers split the
//! output rows instead. The kernels process four output rows at a time to
//! reuse each B row from registers/L1.

use crate::elem::Elem;
use crate::runtime;

/// C[m x n] += A[m x k] * B[k x n]
pub fn gemm_nn<E: Elem>(m: usize, k: usize, n: usize, a: &[E], b: &[E], c: &mut [E]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let rows_per_chunk = gemm_row_chunk(m, k, n);
    runtime::par_chunks_mut(c, rows_per_chunk * n, |ci, cc| {
        let row0 = ci * rows_per_chunk;
        let rows = cc.len() / n;
        let mut r = 0;
        while r + 4 <= rows {
            let (c0, rest) = cc[r * n..].split_at_mut(n);
            let (c1, rest) = rest.split_at_mut(n);
            let (c2, rest) = rest.split_at_mut(n);
            let c3 = &mut rest[..n];
            let im = row0 + r;
            for ik in 0..k {
                let brow = &b[ik * n..(ik + 1) * n];
                let a0 = a[im * k + ik];
                let a1 = a[(im + 1) * k + ik];
                let a2 = a[(im + 2) * k + ik];
                let a3 = a[(im + 3) * k + ik];
                for (j, &bv) in brow.iter().enumerate() {
                    c0[j] = c0[j] + a0 * bv;
                    c1[j] = c1[j] + a1 * bv;
                    c2[j] = c2[j] + a2 * bv;
                    c3[j] = c3[j] + a3 * bv;
                }
            }
            r += 4;
        }
        for rr in r..rows {
            let crow = &mut cc[rr * n..(rr + 1) * n];
            let im = row0 + rr;
            let arow = &a[im * k..(im + 1) * k];
            for (ik, &av) in arow.iter().enumerate() {
                let brow = &b[ik * n..(ik + 1) * n];
                for (cv, &bv) in crow.iter_mut().zip(brow.iter()) {
                    *cv = *cv + av * bv;
                }
            }
        }
    });
}

/// C[m x n] += A[m x k] * B[n x k]^T   (dot products of rows)
pub fn gemm_nt<E: Elem>(m: usize, k: usize, n: usize, a: &[E], b: &[E], c: &mut [E]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    let rows_per_chunk = gemm_row_chunk(m, k, n);
    runtime::par_chunks_mut(c, rows_per_chunk * n, |ci, cc| {
        let row0 = ci * rows_per_chunk;
        for (ri, crow) in cc.chunks_mut(n).enumerate() {
            let im = row0 + ri;
            let arow = &a[im * k..(im + 1) * k];
            let mut jn = 0;
            while jn + 2 <= n {
                let b0 = &b[jn * k..(jn + 1) * k];
                let b1 = &b[(jn + 1) * k..(jn + 2) * k];
                let mut acc0 = E::zero();
                let mut acc1 = E::zero();
                for ((&av, &v0), &v1) in arow.iter().zip(b0.iter()).zip(b1.iter()) {
                    acc0 = acc0 + av * v0;
                    acc1 = acc1 + av * v1;
                }
                crow[jn] = crow[jn] + acc0;
                crow[jn + 1] = crow[jn + 1] + acc1;
                jn += 2;
            }
            for (j, cv) in crow.iter_mut().enumerate().skip(jn) {
                let brow = &b[j * k..(j + 1) * k];
                let mut acc = E::zero();
                for (&av, &bv) in arow.iter().zip(brow.iter()) {
                    acc = acc + av * bv;
                }
                *cv = *cv + acc;
            }
        }
    });
}

/// C[m x n] += A[k x m]^T * B[k x n]
pub fn gemm_tn<E: Elem>(m: usize, k: usize, n: usize, a: &[E], b: &[E], c: &mut [E]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let rows_per_chunk = gemm_row_chunk(m, k, n);
    runtime::par_chunks_mut(c, rows_per_chunk * n, |ci, cc| {
        let row0 = ci * rows_per_chunk;
        let rows = cc.len() / n;
        let mut r = 0;
        while r + 4 <= rows {
            let (c0, rest) = cc[r * n..].split_at_mut(n);
            let (c1, rest) = rest.split_at_mut(n);
            let (c2, rest) = rest.split_at_mut(n);
            let c3 = &mut rest[..n];
            let im = row0 + r;
            for ik in 0..k {
                let brow = &b[ik * n..(ik + 1) * n];
                let a0 = a[ik * m + im];
                let a1 = a[ik * m + im + 1];
                let a2 = a[ik * m + im + 2];
                let a3 = a[ik * m + im + 3];
                for (j, &bv) in brow.iter().enumerate() {
                    c0[j] = c0[j] + a0 * bv;
                    c1[j] = c1[j] + a1 * bv;
                    c2[j] = c2[j] + a2 * bv;
                    c3[j] = c3[j] + a3 * bv;
                }
            }
            r += 4;
        }
        for rr in r..rows {
            let crow = &mut cc[rr * n..(rr + 1) * n];
            let im = row0 + rr;
            for ik in 0..k {
                let av = a[ik * m + im];
                let brow = &b[ik * n..(ik + 1) * n];
                for (cv, &bv) in crow.iter_mut().zip(brow.iter()) {
                    *cv = *cv + av * bv;
                }
            }
        }
    });
}

fn gemm_row_chunk(m: usize, k: usize, n: usize) -> usize {
    let per_row = k * n;
    if per_row == 0 {
        return m.max(1);
    }
    let min_rows = runtime::PAR_GRAIN.div_ceil(per_row);
    let balanced = m.div_ceil(runtime::threads().max(1));
    // Keep chunks 4-row aligned for the register-blocked path.
    (balanced.max(min_rows).max(1)).next_multiple_of(4)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use alloc::vec::Vec;

    fn naive(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn nn_nt_tn_match_naive() {
        use rand::Rng;
        for &(m, k, n) in &[(5usize, 7usize, 6usize), (8, 3, 4), (9, 5, 1), (4, 1, 8), (13, 6, 5)] {
            let mut rng = crate::rng::seeded(11 + (m * k * n) as u64);
            let a: Vec<f64> = (0..m * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..k * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let want = naive(m, k, n, &a, &b);

            let mut c = vec![0.0; m * n];
            gemm_nn(m, k, n, &a, &b, &mut c);
            for (x, y) in c.iter().zip(want.iter()) {
                assert!((x - y).abs() < 1e-12);
            }

            let mut bt = vec![0.0; n * k];
            for p in 0..k {
                for j in 0..n {
                    bt[j * k + p] = b[p * n + j];
                }
            }
            let mut c = vec![0.0; m * n];
            gemm_nt(m, k, n, &a, &bt, &mut c);
            for (x, y) in c.iter().zip(want.iter()) {
                assert!((x - y).abs() < 1e-12);
            }

            let mut at = vec![0.0; k * m];
            for i in 0..m {
                for p in 0..k {
                    at[p * m + i] = a[i * k + p];
                }
            }
            let mut c = vec![0.0; m * n];
            gemm_tn(m, k, n, &at, &b, &mut c);
            for (x, y) in c.iter().zip(want.iter()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
