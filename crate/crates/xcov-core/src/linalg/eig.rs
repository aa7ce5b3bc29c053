//! Symmetric eigendecomposition (cyclic Jacobi) and matrix square roots.

use super::{DenseMatrix, LinalgError};

const MAX_SWEEPS: usize = 100;

/// Eigendecomposition of a symmetric matrix: `a = vectors * diag(values) * vectors^T`
/// with `values` sorted non-increasing and orthonormal `vectors` columns.
pub fn sym_eig(a: &DenseMatrix) -> Result<(Vec<f64>, DenseMatrix), LinalgError> {
    a.check_symmetric(1e-10)?;
    if let Some((row, col)) = a.first_non_finite() {
        return Err(LinalgError::NonFinite { row, col });
    }
    let n = a.rows();
    let mut m = a.clone();
    // symmetrize exactly so rotations keep both triangles consistent
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
    let mut v = DenseMatrix::identity(n);
    let scale = m.frobenius_norm().max(f64::MIN_POSITIVE);
    let stop = 1e-14 * scale;

    let mut converged = n <= 1;
    for _sweep in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq.abs() <= stop {
                    continue;
                }
                rotated = true;
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;

                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
        if !rotated {
            converged = true;
        }
    }
    if !converged {
        return Err(LinalgError::EigNonConvergence { sweeps: MAX_SWEEPS });
    }

    let mut order: Vec<usize> = (0..n).collect();
    let diag: Vec<f64> = (0..n).map(|i| m[(i, i)]).collect();
    order.sort_by(|&i, &j| diag[j].partial_cmp(&diag[i]).expect("finite eigenvalues"));
    let values: Vec<f64> = order.iter().map(|&i| diag[i]).collect();
    let mut vectors = DenseMatrix::zeros(n, n);
    for (k, &j) in order.iter().enumerate() {
        for i in 0..n {
            vectors[(i, k)] = v[(i, j)];
        }
    }
    Ok((values, vectors))
}

fn spectral_map(
    a: &DenseMatrix,
    floor: f64,
    f: impl Fn(f64) -> f64,
) -> Result<DenseMatrix, LinalgError> {
    let (values, vectors) = sym_eig(a)?;
    if let Some(&min) = values.last() {
        if min < -1e-10 * values.first().copied().unwrap_or(1.0).abs().max(1.0) {
            return Err(LinalgError::Indefinite { value: min });
        }
    }
    let n = a.rows();
    let mapped: Vec<f64> = values.iter().map(|&l| f(l.max(floor))).collect();
    let mut out = DenseMatrix::zeros(n, n);
    for k in 0..n {
        let w = mapped[k];
        if w == 0.0 {
            continue;
        }
        for i in 0..n {
            let wi = w * vectors[(i, k)];
            for j in i..n {
                out[(i, j)] += wi * vectors[(j, k)];
            }
        }
    }
    // fill lower triangle symmetrically
    for i in 0..n {
        for j in (i + 1)..n {
            out[(j, i)] = out[(i, j)];
        }
    }
    Ok(out)
}

/// Symmetric square root with eigenvalue flooring.
pub fn sym_sqrt(a: &DenseMatrix, floor: f64) -> Result<DenseMatrix, LinalgError> {
    spectral_map(a, floor.max(0.0), f64::sqrt)
}

/// Symmetric inverse square root; eigenvalues are floored at `floor`, which
/// must be strictly positive.
pub fn sym_inv_sqrt(a: &DenseMatrix, floor: f64) -> Result<DenseMatrix, LinalgError> {
    assert!(floor > 0.0, "inverse square root needs a positive eigenvalue floor");
    spectral_map(a, floor, |l| 1.0 / l.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn equicorrelation(n: usize, m: f64) -> DenseMatrix {
        DenseMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { m })
    }

    #[test]
    fn identity_eigenvalues() {
        let (values, _) = sym_eig(&DenseMatrix::identity(2)).unwrap();
        assert_eq!(values, vec![1.0, 1.0]);
    }

    #[test]
    fn two_by_two_hand_oracle() {
        // characteristic polynomial of [[2,1],[1,2]]: (2-l)^2 - 1 = 0 -> l in {3,1}
        let a = DenseMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]);
        let (values, vectors) = sym_eig(&a).unwrap();
        assert!((values[0] - 3.0).abs() < 1e-12);
        assert!((values[1] - 1.0).abs() < 1e-12);
        let back = vectors
            .matmul(&DenseMatrix::diag_from(&values))
            .mul_t(&vectors);
        assert!(back.max_abs_diff(&a) < 1e-12);
    }

    #[test]
    fn equicorrelation_top_eigenvalue() {
        let (values, _) = sym_eig(&equicorrelation(4, 0.3)).unwrap();
        assert!((values[0] - 1.9).abs() < 1e-12);
        for v in &values[1..] {
            assert!((v - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_asymmetric_input() {
        let a = DenseMatrix::from_rows(&[vec![1.0, 0.5], vec![0.2, 1.0]]);
        assert!(matches!(sym_eig(&a), Err(LinalgError::NotSymmetric { .. })));
    }

    #[test]
    fn reconstruction_on_seeded_symmetric_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let n = rng.random_range(1..=20);
            let raw = DenseMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let a = raw.add(&raw.transpose()).scale(0.5);
            let (values, vectors) = sym_eig(&a).unwrap();
            let back = vectors
                .matmul(&DenseMatrix::diag_from(&values))
                .mul_t(&vectors);
            let scale = a.frobenius_norm().max(1.0);
            assert!(back.sub(&a).frobenius_norm() / scale < 1e-8);
            for k in 1..n {
                assert!(values[k - 1] >= values[k]);
            }
        }
    }

    #[test]
    fn sqrt_of_identity() {
        let s = sym_sqrt(&DenseMatrix::identity(3), 0.0).unwrap();
        assert!(s.max_abs_diff(&DenseMatrix::identity(3)) < 1e-14);
    }

    #[test]
    fn sqrt_of_diagonal() {
        let a = DenseMatrix::diag_from(&[4.0, 9.0]);
        let s = sym_sqrt(&a, 0.0).unwrap();
        assert!(s.max_abs_diff(&DenseMatrix::diag_from(&[2.0, 3.0])) < 1e-12);
        let inv = sym_inv_sqrt(&a, 1e-10).unwrap();
        assert!(inv.max_abs_diff(&DenseMatrix::diag_from(&[0.5, 1.0 / 3.0])) < 1e-12);
    }

    #[test]
    fn sqrt_squares_back_to_equicorrelation() {
        let a = equicorrelation(2, 0.5);
        let s = sym_sqrt(&a, 0.0).unwrap();
        assert!(s.matmul(&s).max_abs_diff(&a) < 1e-12);
    }

    #[test]
    fn inv_sqrt_whitens_seeded_spd_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let n = rng.random_range(2..=12);
            // SPD with condition number <= 1e6
            let raw = DenseMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let (_, q) = sym_eig(&raw.add(&raw.transpose()).scale(0.5)).unwrap();
            let evals: Vec<f64> = (0..n)
                .map(|k| 10f64.powf(-6.0 * k as f64 / (n - 1).max(1) as f64))
                .collect();
            let a = q.matmul(&DenseMatrix::diag_from(&evals)).mul_t(&q);
            let a = a.add(&a.transpose()).scale(0.5);
            let w = sym_inv_sqrt(&a, 1e-10).unwrap();
            let white = w.matmul(&a).matmul(&w);
            assert!(
                white.sub(&DenseMatrix::identity(n)).frobenius_norm() < 1e-7,
                "whitening residual too large"
            );
        }
    }

    #[test]
    fn indefinite_input_is_rejected() {
        let a = DenseMatrix::diag_from(&[1.0, -0.5]);
        assert!(matches!(sym_sqrt(&a, 0.0), Err(LinalgError::Indefinite { .. })));
    }
}
