//! Feasibility of a cross-correlation block under fixed marginals.
//!
//! A candidate cross block is compatible with given marginal correlation
//! matrices exactly when the assembled block correlation matrix is
//! positive semidefinite. After whitening by the marginal inverse square
//! roots this reduces to a bound on the singular values of the whitened
//! block: all canonical values must lie in [0, 1], strictly below 1 for
//! positive definiteness.

use crate::linalg::{svd_thin, sym_inv_sqrt, sym_sqrt, DenseMatrix, LinalgError};
use thiserror::Error;

/// Eigenvalue floor applied to the marginals before (inverse) square roots.
pub const MARGINAL_FLOOR: f64 = 1e-10;

/// Default tolerance on the unit-interval bound of the canonical values.
pub const DEFAULT_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum FeasibilityError {
    #[error("marginal block {block} is not usable: {source}")]
    IndefiniteMarginal { block: &'static str, source: LinalgError },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Canonical singular values of a whitened cross block and the verdicts
/// they imply.
#[derive(Debug, Clone)]
pub struct FeasibilityReport {
    pub canonical_s: Vec<f64>,
    pub max_canonical: f64,
    pub fraction_in_unit_interval: f64,
    pub feasible_psd: bool,
    pub feasible_pd: bool,
}

fn check_frames(
    cxx: &DenseMatrix,
    cyy: &DenseMatrix,
    cxy: &DenseMatrix,
) -> Result<(), FeasibilityError> {
    if cxx.rows() != cxy.rows() || cyy.rows() != cxy.cols() || !cxx.is_square() || !cyy.is_square()
    {
        return Err(FeasibilityError::ShapeMismatch(format!(
            "marginals {}x{} / {}x{} around cross block {}x{}",
            cxx.rows(),
            cxx.cols(),
            cyy.rows(),
            cyy.cols(),
            cxy.rows(),
            cxy.cols()
        )));
    }
    Ok(())
}

/// `C_xx^{-1/2} * C_xy * C_yy^{-1/2}` with symmetric inverse square roots.
pub fn whiten_cross_block(
    cxx: &DenseMatrix,
    cyy: &DenseMatrix,
    cxy: &DenseMatrix,
) -> Result<DenseMatrix, FeasibilityError> {
    check_frames(cxx, cyy, cxy)?;
    let wx = sym_inv_sqrt(cxx, MARGINAL_FLOOR)
        .map_err(|source| FeasibilityError::IndefiniteMarginal { block: "cxx", source })?;
    let wy = sym_inv_sqrt(cyy, MARGINAL_FLOOR)
        .map_err(|source| FeasibilityError::IndefiniteMarginal { block: "cyy", source })?;
    Ok(wx.matmul(cxy).matmul(&wy))
}

/// Inverse of [`whiten_cross_block`]: `C_xx^{1/2} * C^{(w)} * C_yy^{1/2}`.
pub fn unwhiten_cross_block(
    cxx: &DenseMatrix,
    cyy: &DenseMatrix,
    cw: &DenseMatrix,
) -> Result<DenseMatrix, FeasibilityError> {
    check_frames(cxx, cyy, cw)?;
    let sx = sym_sqrt(cxx, 0.0)
        .map_err(|source| FeasibilityError::IndefiniteMarginal { block: "cxx", source })?;
    let sy = sym_sqrt(cyy, 0.0)
        .map_err(|source| FeasibilityError::IndefiniteMarginal { block: "cyy", source })?;
    Ok(sx.matmul(cw).matmul(&sy))
}

/// Diagnoses whether `cxy_candidate` is a feasible cross block for the
/// given marginals by testing the canonical singular-value bound.
pub fn feasibility_report(
    cxx: &DenseMatrix,
    cyy: &DenseMatrix,
    cxy_candidate: &DenseMatrix,
    tol: f64,
) -> Result<FeasibilityReport, FeasibilityError> {
    let white = whiten_cross_block(cxx, cyy, cxy_candidate)?;
    let d = svd_thin(&white)?;
    let canonical_s = d.s;
    let max_canonical = canonical_s.first().copied().unwrap_or(0.0);
    let inside = canonical_s.iter().filter(|&&s| s <= 1.0 + tol).count();
    let fraction_in_unit_interval = inside as f64 / canonical_s.len().max(1) as f64;
    let feasible_psd = max_canonical <= 1.0 + tol;
    let feasible_pd = max_canonical < 1.0 - tol;
    Ok(FeasibilityReport {
        canonical_s,
        max_canonical,
        fraction_in_unit_interval,
        feasible_psd,
        feasible_pd,
    })
}

/// Assembles the full (n_x + n_y) block correlation matrix
/// `[[cxx, cxy], [cxy^T, cyy]]`.
pub fn assemble_block_matrix(
    cxx: &DenseMatrix,
    cyy: &DenseMatrix,
    cxy: &DenseMatrix,
) -> DenseMatrix {
    let n_x = cxx.rows();
    let n_y = cyy.rows();
    let n = n_x + n_y;
    DenseMatrix::from_fn(n, n, |i, j| match (i < n_x, j < n_x) {
        (true, true) => cxx[(i, j)],
        (true, false) => cxy[(i, j - n_x)],
        (false, true) => cxy[(j, i - n_x)],
        (false, false) => cyy[(i - n_x, j - n_x)],
    })
}

/// Projects an infeasible candidate onto the feasible set by clipping the
/// canonical singular values into `[0, 1 - margin]` and unwhitening.
pub fn clip_to_feasible(
    cxx: &DenseMatrix,
    cyy: &DenseMatrix,
    cxy_candidate: &DenseMatrix,
    margin: f64,
) -> Result<DenseMatrix, FeasibilityError> {
    let white = whiten_cross_block(cxx, cyy, cxy_candidate)?;
    let d = svd_thin(&white)?;
    let cap = 1.0 - margin;
    let clipped: Vec<f64> = d.s.iter().map(|&s| s.min(cap)).collect();
    let clipped_white = d.reconstruct_with(&clipped);
    unwhiten_cross_block(cxx, cyy, &clipped_white)
}
