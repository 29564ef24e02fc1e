//! Tiny dense-matrix helpers for the n-by-n orthogonal factors (n is 1 or 2
//! for the built-in systems, but nothing here assumes that).
//!
//! Matrices are stored row-major in flat slices: entry (i, j) lives at
//! `m[i * n + j]`.

pub(crate) fn identity(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m
}

/// Permutation matrix that reverses coordinate order (anti-diagonal ones).
pub(crate) fn reversal(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + (n - 1 - i)] = 1.0;
    }
    m
}

/// out = a * b
pub(crate) fn matmul(n: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for k in 0..n {
                s += a[i * n + k] * b[k * n + j];
            }
            out[i * n + j] = s;
        }
    }
}

/// out = qᵀ * a * q, using `tmp` as scratch for a * q.
pub(crate) fn qt_a_q(n: usize, q: &[f64], a: &[f64], tmp: &mut [f64], out: &mut [f64]) {
    matmul(n, a, q, tmp);
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for k in 0..n {
                s += q[k * n + i] * tmp[k * n + j];
            }
            out[i * n + j] = s;
        }
    }
}

/// Frobenius norm of qᵀq − I.
pub(crate) fn orthogonality_defect(n: usize, q: &[f64]) -> f64 {
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for k in 0..n {
                s += q[k * n + i] * q[k * n + j];
            }
            if i == j {
                s -= 1.0;
            }
            sum += s * s;
        }
    }
    sum.sqrt()
}

/// In-place modified Gram-Schmidt on the columns of q. The implied
/// triangular factor has positive diagonal (column norms), which keeps the
/// projected factor continuous in time when q is already near-orthogonal.
pub(crate) fn mgs_columns(n: usize, q: &mut [f64]) {
    for j in 0..n {
        for i in 0..j {
            let mut dot = 0.0;
            for k in 0..n {
                dot += q[k * n + i] * q[k * n + j];
            }
            for k in 0..n {
                q[k * n + j] -= dot * q[k * n + i];
            }
        }
        let mut nrm = 0.0;
        for k in 0..n {
            nrm += q[k * n + j] * q[k * n + j];
        }
        let nrm = nrm.sqrt();
        debug_assert!(nrm > 0.0, "degenerate column in Gram-Schmidt projection");
        for k in 0..n {
            q[k * n + j] /= nrm;
        }
    }
}
