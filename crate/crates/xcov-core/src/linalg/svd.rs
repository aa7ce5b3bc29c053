//! Thin SVD via one-sided (Hestenes) Jacobi rotations.

use super::{dot, DenseMatrix, LinalgError};

const MAX_SWEEPS: usize = 100;
// A column pair is considered orthogonal when the normalized inner product
// falls below this threshold.
const ROT_TOL: f64 = 1e-12;
// Columns whose norm falls to rounding level relative to the matrix are
// deflated to exact zero; rank-noise columns can stay mutually parallel
// and would otherwise keep the rotation loop alive forever.
const DEFLATE_REL: f64 = 1e-13;

/// Thin singular value decomposition `a = u * diag(s) * v^T`.
///
/// `u` is rows x r and `v` is cols x r with orthonormal columns,
/// r = min(rows, cols), and `s` sorted non-increasing. Left singular
/// vectors follow a fixed sign convention: the entry of largest magnitude
/// (lowest index on ties) is non-negative.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    pub u: DenseMatrix,
    pub s: Vec<f64>,
    pub v: DenseMatrix,
}

impl SpectralDecomposition {
    pub fn rank_dim(&self) -> usize {
        self.s.len()
    }

    /// `u * diag(s_values) * v^T` for an arbitrary diagonal.
    pub fn reconstruct_with(&self, s_values: &[f64]) -> DenseMatrix {
        assert_eq!(s_values.len(), self.s.len());
        let n_x = self.u.rows();
        let n_y = self.v.rows();
        let mut out = DenseMatrix::zeros(n_x, n_y);
        for (k, &sv) in s_values.iter().enumerate() {
            if sv == 0.0 {
                continue;
            }
            for i in 0..n_x {
                let w = sv * self.u[(i, k)];
                let row = out.row_mut(i);
                for j in 0..n_y {
                    row[j] += w * self.v[(j, k)];
                }
            }
        }
        out
    }

    pub fn reconstruct(&self) -> DenseMatrix {
        self.reconstruct_with(&self.s)
    }
}

pub fn svd_thin(a: &DenseMatrix) -> Result<SpectralDecomposition, LinalgError> {
    if let Some((row, col)) = a.first_non_finite() {
        return Err(LinalgError::NonFinite { row, col });
    }
    if a.rows() < a.cols() {
        let t = svd_thin(&a.transpose())?;
        let mut d = SpectralDecomposition { u: t.v, s: t.s, v: t.u };
        apply_sign_convention(&mut d);
        return Ok(d);
    }
    let m = a.rows();
    let n = a.cols();

    // Column-major working copies: w holds the rotated columns of a,
    // v accumulates the right rotations.
    let mut w = vec![0.0f64; m * n];
    for i in 0..m {
        for j in 0..n {
            w[j * m + i] = a[(i, j)];
        }
    }
    let mut v = vec![0.0f64; n * n];
    for j in 0..n {
        v[j * n + j] = 1.0;
    }

    let frob2: f64 = w.iter().map(|v| v * v).sum();
    let deflate = DEFLATE_REL * DEFLATE_REL * frob2;
    let mut converged = false;
    for _sweep in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                let (wp, wq) = col_pair_mut(&mut w, m, p, q);
                let alpha = dot(wp, wp);
                if alpha <= deflate {
                    wp.iter_mut().for_each(|v| *v = 0.0);
                    continue;
                }
                let beta = dot(wq, wq);
                if beta <= deflate {
                    wq.iter_mut().for_each(|v| *v = 0.0);
                    continue;
                }
                let gamma = dot(wp, wq);
                if gamma.abs() <= ROT_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(wp, wq, c, s);
                let (vp, vq) = col_pair_mut(&mut v, n, p, q);
                rotate(vp, vq, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(LinalgError::SvdNonConvergence { sweeps: MAX_SWEEPS });
    }

    // Column norms are the singular values; stable sort keeps ties deterministic.
    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<f64> = (0..n).map(|j| dot(&w[j * m..(j + 1) * m], &w[j * m..(j + 1) * m]).sqrt()).collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).expect("finite norms"));

    let mut u_mat = DenseMatrix::zeros(m, n);
    let mut v_mat = DenseMatrix::zeros(n, n);
    let mut s = Vec::with_capacity(n);
    let mut zero_cols = Vec::new();
    for (k, &j) in order.iter().enumerate() {
        let norm = norms[j];
        s.push(norm);
        for i in 0..n {
            v_mat[(i, k)] = v[j * n + i];
        }
        if norm > 0.0 {
            let col = &w[j * m..(j + 1) * m];
            for i in 0..m {
                u_mat[(i, k)] = col[i] / norm;
            }
        } else {
            zero_cols.push(k);
        }
    }
    if !zero_cols.is_empty() {
        complete_zero_columns(&mut u_mat, &zero_cols);
    }

    let mut d = SpectralDecomposition { u: u_mat, s, v: v_mat };
    apply_sign_convention(&mut d);
    Ok(d)
}

#[inline]
fn rotate(x: &mut [f64], y: &mut [f64], c: f64, s: f64) {
    for (xi, yi) in x.iter_mut().zip(y.iter_mut()) {
        let a = *xi;
        let b = *yi;
        *xi = c * a - s * b;
        *yi = s * a + c * b;
    }
}

/// Two distinct columns of a column-major buffer, mutably.
fn col_pair_mut(buf: &mut [f64], len: usize, p: usize, q: usize) -> (&mut [f64], &mut [f64]) {
    debug_assert!(p < q);
    let (head, tail) = buf.split_at_mut(q * len);
    (&mut head[p * len..p * len + len], &mut tail[..len])
}

/// Fill columns with exactly zero singular value by Gram-Schmidt of
/// canonical basis vectors against the existing columns, in index order.
fn complete_zero_columns(u: &mut DenseMatrix, zero_cols: &[usize]) {
    let m = u.rows();
    let n = u.cols();
    let mut next_canonical = 0usize;
    for &k in zero_cols {
        let mut filled = false;
        while next_canonical < m && !filled {
            let mut cand = vec![0.0f64; m];
            cand[next_canonical] = 1.0;
            next_canonical += 1;
            // two Gram-Schmidt passes for orthogonality near machine precision
            for _ in 0..2 {
                for c in 0..n {
                    if c == k {
                        continue;
                    }
                    let proj: f64 = (0..m).map(|i| cand[i] * u[(i, c)]).sum();
                    if proj != 0.0 {
                        for i in 0..m {
                            cand[i] -= proj * u[(i, c)];
                        }
                    }
                }
            }
            let norm = cand.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-6 {
                for i in 0..m {
                    u[(i, k)] = cand[i] / norm;
                }
                filled = true;
            }
        }
        debug_assert!(filled, "ran out of canonical directions");
    }
}

/// Flip each (u_k, v_k) pair so that the largest-magnitude entry of u_k
/// (lowest index on ties) is non-negative.
fn apply_sign_convention(d: &mut SpectralDecomposition) {
    let m = d.u.rows();
    let n = d.v.rows();
    for k in 0..d.s.len() {
        let mut best = 0usize;
        let mut best_abs = d.u[(0, k)].abs();
        for i in 1..m {
            let a = d.u[(i, k)].abs();
            if a > best_abs {
                best_abs = a;
                best = i;
            }
        }
        if d.u[(best, k)] < 0.0 {
            for i in 0..m {
                d.u[(i, k)] = -d.u[(i, k)];
            }
            for j in 0..n {
                d.v[(j, k)] = -d.v[(j, k)];
            }
        }
    }
}
