//! Small dense matmul kernels, k-blocked so the streamed operand stays in
//! cache. Row-parallel when the work is large enough; every output element
//! is reduced sequentially in ascending k, so results are bitwise identical
//! for any thread count.

use rayon::prelude::*;

const PAR_WORK_THRESHOLD: usize = 1 << 21;
const K_BLOCK: usize = 256;

/// c += a (m x k) * b (k x n), all row-major.
pub fn matmul_acc(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    let parallel = m * k * n >= PAR_WORK_THRESHOLD && m > 1;
    let mut k0 = 0;
    while k0 < k {
        let kb = K_BLOCK.min(k - k0);
        let block_row = |crow: &mut [f64], arow: &[f64]| {
            for kk in 0..kb {
                let av = arow[k0 + kk];
                if av != 0.0 {
                    let brow = &b[(k0 + kk) * n..(k0 + kk + 1) * n];
                    for (cv, bv) in crow.iter_mut().zip(brow) {
                        *cv += av * bv;
                    }
                }
            }
        };
        if parallel {
            c.par_chunks_mut(n)
                .zip(a.par_chunks(k))
                .for_each(|(crow, arow)| block_row(crow, arow));
        } else {
            for (crow, arow) in c.chunks_mut(n).zip(a.chunks(k)) {
                block_row(crow, arow);
            }
        }
        k0 += kb;
    }
}

pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    matmul_acc(&mut c, a, b, m, k, n);
    c
}

/// c += a (m x k) * b^T where b is (n x k) row-major.
pub fn matmul_bt_acc(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), n * k);
    assert_eq!(c.len(), m * n);
    // Block over output columns so the b panel stays cached across rows.
    const J_BLOCK: usize = 128;
    let parallel = m * k * n >= PAR_WORK_THRESHOLD && m > 1;
    let row = |crow: &mut [f64], arow: &[f64]| {
        let mut j0 = 0;
        while j0 < n {
            let jb = J_BLOCK.min(n - j0);
            for j in j0..j0 + jb {
                let brow = &b[j * k..(j + 1) * k];
                let mut acc = 0.0;
                for (av, bv) in arow.iter().zip(brow) {
                    acc += av * bv;
                }
                crow[j] += acc;
            }
            j0 += jb;
        }
    };
    if parallel {
        c.par_chunks_mut(n)
            .zip(a.par_chunks(k))
            .for_each(|(crow, arow)| row(crow, arow));
    } else {
        for (crow, arow) in c.chunks_mut(n).zip(a.chunks(k)) {
            row(crow, arow);
        }
    }
}

/// Transpose an (r x c) row-major matrix.
pub fn transpose(a: &[f64], r: usize, c: usize) -> Vec<f64> {
    assert_eq!(a.len(), r * c);
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}
