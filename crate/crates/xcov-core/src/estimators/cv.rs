//! Cross-validated singular-value shrinkage: estimate singular directions
//! on training folds and score their mode strengths on held-out folds.

use super::{
    isotonic_over_spectrum, standardize_columns, CorrelationTriplet, EstimatorError, Method,
    ShrinkageResult,
};
use crate::linalg::{svd_thin, DenseMatrix, SpectralDecomposition};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// How the in-sample window is partitioned into train/test folds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitMode {
    /// Disjoint contiguous folds, each used once as the test set.
    KFold,
    /// Random test subsets of size T/folds, redrawn `num_splits` times.
    MonteCarlo { num_splits: usize, seed: u64 },
}

/// Cross-validated cleaning of the cross-correlation block.
///
/// Standardization happens once on the full window; fold matrices are raw
/// products of the standardized observations over the fold indices. Fold
/// targets are averaged by index and reconstructed in the full-sample
/// singular basis. Values are not clamped: a legitimately negative oracle
/// diagonal must stay negative.
pub fn cv_clean(
    x_window: &DenseMatrix,
    y_window: &DenseMatrix,
    folds: usize,
    split_mode: SplitMode,
    apply_isotonic: bool,
) -> Result<ShrinkageResult, EstimatorError> {
    let (trip, xs, ys) = standardized_inputs(x_window, y_window)?;
    let d = svd_thin(&trip.cxy)?;
    cv_clean_core(&xs, &ys, &d, folds, split_mode, apply_isotonic)
}

/// [`cv_clean`] reusing a precomputed full-sample triplet and decomposition.
pub fn cv_clean_from(
    x_window: &DenseMatrix,
    y_window: &DenseMatrix,
    d: &SpectralDecomposition,
    folds: usize,
    split_mode: SplitMode,
    apply_isotonic: bool,
) -> Result<ShrinkageResult, EstimatorError> {
    let (_, xs, ys) = standardized_inputs(x_window, y_window)?;
    cv_clean_core(&xs, &ys, d, folds, split_mode, apply_isotonic)
}

fn standardized_inputs(
    x_window: &DenseMatrix,
    y_window: &DenseMatrix,
) -> Result<(CorrelationTriplet, DenseMatrix, DenseMatrix), EstimatorError> {
    let trip = super::sample_cross_correlation(x_window, y_window)?;
    let (xs, _) = standardize_columns(x_window)
        .map_err(|column| EstimatorError::ZeroVariance { side: "x", column })?;
    let (ys, _) = standardize_columns(y_window)
        .map_err(|column| EstimatorError::ZeroVariance { side: "y", column })?;
    Ok((trip, xs, ys))
}

fn cv_clean_core(
    xs: &DenseMatrix,
    ys: &DenseMatrix,
    d: &SpectralDecomposition,
    folds: usize,
    split_mode: SplitMode,
    apply_isotonic: bool,
) -> Result<ShrinkageResult, EstimatorError> {
    let t = xs.rows();
    if folds < 2 {
        return Err(EstimatorError::TooFewObservationsForFolds { rows: t, folds });
    }
    if t < 2 * folds {
        return Err(EstimatorError::TooFewObservationsForFolds { rows: t, folds });
    }
    let r = d.s.len();

    // full-sample sum of outer products, reused to derive every train block
    let sum_full = xs.t_mul(ys);

    let test_sets: Vec<Vec<usize>> = match split_mode {
        SplitMode::KFold => (0..folds)
            .map(|f| {
                let start = f * t / folds;
                let end = (f + 1) * t / folds;
                (start..end).collect()
            })
            .collect(),
        SplitMode::MonteCarlo { num_splits, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let test_len = t / folds;
            (0..num_splits.max(1))
                .map(|_| {
                    let mut idx: Vec<usize> = (0..t).collect();
                    idx.shuffle(&mut rng);
                    let mut chosen: Vec<usize> = idx[..test_len].to_vec();
                    chosen.sort_unstable();
                    chosen
                })
                .collect()
        }
    };

    let mut acc = vec![0.0f64; r];
    let num_folds = test_sets.len();
    for (f, test) in test_sets.iter().enumerate() {
        let n_test = test.len();
        let n_train = t - n_test;
        if n_test < 2 || n_train < 2 {
            return Err(EstimatorError::FoldTooSmall { fold: f, size: n_test.min(n_train) });
        }
        // test-fold sum of outer products
        let mut sum_test = DenseMatrix::zeros(xs.cols(), ys.cols());
        for &row in test {
            let x_row = xs.row(row);
            let y_row = ys.row(row);
            for (i, &xi) in x_row.iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                let out_row = sum_test.row_mut(i);
                for (j, &yj) in y_row.iter().enumerate() {
                    out_row[j] += xi * yj;
                }
            }
        }
        let c_test = sum_test.scale(1.0 / n_test as f64);
        let c_train = sum_full.sub(&sum_test).scale(1.0 / n_train as f64);
        let d_train = svd_thin(&c_train)?;
        for k in 0..r {
            let vk = d_train.v.column(k);
            let tv = c_test.mul_vec(&vk);
            let uk = d_train.u.column(k);
            acc[k] += crate::linalg::dot(&uk, &tv);
        }
    }
    let mut s_cv: Vec<f64> = acc.into_iter().map(|v| v / num_folds as f64).collect();
    if apply_isotonic {
        s_cv = isotonic_over_spectrum(&d.s, &s_cv);
    }
    let cleaned = d.reconstruct_with(&s_cv);
    Ok(ShrinkageResult { method: Method::Cv, s_clean: s_cv, cleaned })
}
