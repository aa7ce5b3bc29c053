//! Cleaning estimators for the empirical cross-correlation block.
//!
//! Every estimator here is rotationally invariant: it keeps the empirical
//! singular vectors of the cross block and replaces the singular values.
//! `sample_cross_correlation` builds the empirical inputs, the projection
//! machinery extracts the sufficient statistics, and the cleaners map them
//! to cleaned spectra.

mod bbp;
mod cv;

pub use bbp::{bbp_clean, bbp_clean_from, bbp_functionals, BBPFunctionals};
pub use cv::{cv_clean, cv_clean_from, SplitMode};

use crate::linalg::{svd_thin, DenseMatrix, LinalgError, SpectralDecomposition};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("column {column} of the {side} panel has zero variance")]
    ZeroVariance { side: &'static str, column: usize },
    #[error("window too short: {rows} observations (need at least {min})")]
    WindowTooShort { rows: usize, min: usize },
    #[error("panels must share the window length: {left} vs {right}")]
    RowMismatch { left: usize, right: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid correlation triplet: {0}")]
    InvalidTriplet(String),
    #[error("need at least 2*folds observations: T={rows}, folds={folds}")]
    TooFewObservationsForFolds { rows: usize, folds: usize },
    #[error("fold {fold} has {size} observations; at least 2 are required")]
    FoldTooSmall { fold: usize, size: usize },
    #[error("spectral point eta is not finite")]
    NonFiniteEta,
    #[error("Im H vanished at index {index} with a nonzero singular value")]
    DegenerateImH { index: usize },
    #[error("completed singular basis failed the orthonormality check (deviation {dev:.3e})")]
    BasisCompletion { dev: f64 },
    #[error("cleaned spectrum has length {got}, expected rank {expected}")]
    SpectrumLength { got: usize, expected: usize },
    #[error("standard deviations must be positive (index {index})")]
    NonPositiveStd { index: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Estimator tags carried by [`ShrinkageResult`] and the result tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Mle,
    Bbp,
    Cv,
    Oracle,
    #[serde(rename = "nn", alias = "neural")]
    Neural,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Mle => "mle",
            Method::Bbp => "bbp",
            Method::Cv => "cv",
            Method::Oracle => "oracle",
            Method::Neural => "nn",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mle" | "empirical" => Ok(Method::Mle),
            "bbp" => Ok(Method::Bbp),
            "cv" => Ok(Method::Cv),
            "oracle" => Ok(Method::Oracle),
            "nn" | "neural" => Ok(Method::Neural),
            other => Err(format!("unknown estimator '{other}'")),
        }
    }
}

/// Empirical marginal correlations, cross block, and window metadata.
#[derive(Debug, Clone)]
pub struct CorrelationTriplet {
    pub cxx: DenseMatrix,
    pub cyy: DenseMatrix,
    pub cxy: DenseMatrix,
    pub std_x: Vec<f64>,
    pub std_y: Vec<f64>,
    pub dt_in: usize,
}

impl CorrelationTriplet {
    pub fn new(
        cxx: DenseMatrix,
        cyy: DenseMatrix,
        cxy: DenseMatrix,
        std_x: Vec<f64>,
        std_y: Vec<f64>,
        dt_in: usize,
    ) -> Result<Self, EstimatorError> {
        let n_x = cxy.rows();
        let n_y = cxy.cols();
        if cxx.rows() != n_x || cxx.cols() != n_x || cyy.rows() != n_y || cyy.cols() != n_y {
            return Err(EstimatorError::InvalidTriplet(format!(
                "marginals {}x{} / {}x{} do not frame the {}x{} cross block",
                cxx.rows(),
                cxx.cols(),
                cyy.rows(),
                cyy.cols(),
                n_x,
                n_y
            )));
        }
        if std_x.len() != n_x || std_y.len() != n_y {
            return Err(EstimatorError::InvalidTriplet(
                "standard deviation lengths do not match the blocks".into(),
            ));
        }
        if dt_in == 0 {
            return Err(EstimatorError::InvalidTriplet("window length must be positive".into()));
        }
        for (m, name) in [(&cxx, "cxx"), (&cyy, "cyy")] {
            m.check_symmetric(1e-10)
                .map_err(|e| EstimatorError::InvalidTriplet(format!("{name}: {e}")))?;
            for (i, d) in m.diag().iter().enumerate() {
                if (d - 1.0).abs() > 1e-10 {
                    return Err(EstimatorError::InvalidTriplet(format!(
                        "{name} diagonal entry {i} is {d}, expected 1"
                    )));
                }
            }
        }
        for m in [&cxx, &cyy, &cxy] {
            if m.max_abs() > 1.0 + 1e-12 {
                return Err(EstimatorError::InvalidTriplet(
                    "correlation entries must lie in [-1, 1]".into(),
                ));
            }
        }
        Ok(Self { cxx, cyy, cxy, std_x, std_y, dt_in })
    }

    pub fn n_x(&self) -> usize {
        self.cxy.rows()
    }

    pub fn n_y(&self) -> usize {
        self.cxy.cols()
    }

    pub fn rank_dim(&self) -> usize {
        self.n_x().min(self.n_y())
    }

    /// Aspect ratio of the X side, n_x / dt_in.
    pub fn q_x(&self) -> f64 {
        self.n_x() as f64 / self.dt_in as f64
    }

    /// Aspect ratio of the Y side, n_y / dt_in.
    pub fn q_y(&self) -> f64 {
        self.n_y() as f64 / self.dt_in as f64
    }

    /// The same triplet with the roles of X and Y exchanged.
    pub fn transposed(&self) -> CorrelationTriplet {
        CorrelationTriplet {
            cxx: self.cyy.clone(),
            cyy: self.cxx.clone(),
            cxy: self.cxy.transpose(),
            std_x: self.std_y.clone(),
            std_y: self.std_x.clone(),
            dt_in: self.dt_in,
        }
    }
}

/// Spectrum and marginal projections padded to p = max(n_x, n_y).
#[derive(Debug, Clone)]
pub struct ProjectedSpectrum {
    pub s_pad: Vec<f64>,
    pub gamma_x_pad: Vec<f64>,
    pub gamma_y_pad: Vec<f64>,
    /// Aggregate marginal energy of the Y side beyond the first r
    /// directions; zero when n_x = n_y.
    pub gamma_y_extra: f64,
    pub r: usize,
    pub n_x: usize,
    pub n_y: usize,
}

/// Cleaned spectrum together with its reconstruction in the empirical basis.
#[derive(Debug, Clone)]
pub struct ShrinkageResult {
    pub method: Method,
    pub s_clean: Vec<f64>,
    pub cleaned: DenseMatrix,
}

/// Column-wise standardization with divisor T: zero mean, unit sample
/// standard deviation. Returns the standardized panel and the raw stds.
pub(crate) fn standardize_columns(
    panel: &DenseMatrix,
) -> Result<(DenseMatrix, Vec<f64>), usize> {
    let t = panel.rows();
    let n = panel.cols();
    let tf = t as f64;
    let mut out = panel.clone();
    let mut stds = Vec::with_capacity(n);
    for j in 0..n {
        let mean = (0..t).map(|i| panel[(i, j)]).sum::<f64>() / tf;
        let var = (0..t)
            .map(|i| {
                let d = panel[(i, j)] - mean;
                d * d
            })
            .sum::<f64>()
            / tf;
        if var <= 0.0 || !var.is_finite() {
            return Err(j);
        }
        let sd = var.sqrt();
        stds.push(sd);
        for i in 0..t {
            out[(i, j)] = (panel[(i, j)] - mean) / sd;
        }
    }
    Ok((out, stds))
}

/// Empirical correlation triplet of two aligned observation windows.
///
/// Columns are de-meaned and scaled to unit sample standard deviation
/// (divisor T); the cross block is `(1/T) X^T Y` on the standardized data
/// and the marginal blocks are built identically with an exact unit
/// diagonal.
pub fn sample_cross_correlation(
    x_window: &DenseMatrix,
    y_window: &DenseMatrix,
) -> Result<CorrelationTriplet, EstimatorError> {
    let t = x_window.rows();
    if y_window.rows() != t {
        return Err(EstimatorError::RowMismatch { left: t, right: y_window.rows() });
    }
    if t < 2 {
        return Err(EstimatorError::WindowTooShort { rows: t, min: 2 });
    }
    let (xs, std_x) = standardize_columns(x_window)
        .map_err(|column| EstimatorError::ZeroVariance { side: "x", column })?;
    let (ys, std_y) = standardize_columns(y_window)
        .map_err(|column| EstimatorError::ZeroVariance { side: "y", column })?;
    let inv_t = 1.0 / t as f64;
    let cxy = xs.t_mul(&ys).scale(inv_t);
    let mut cxx = xs.t_mul(&xs).scale(inv_t);
    let mut cyy = ys.t_mul(&ys).scale(inv_t);
    for i in 0..cxx.rows() {
        cxx[(i, i)] = 1.0;
    }
    for i in 0..cyy.rows() {
        cyy[(i, i)] = 1.0;
    }
    // standardization bounds correlations by Cauchy-Schwarz; clip rounding spill
    for m in [&mut cxx, &mut cyy] {
        for v in m.data_mut() {
            *v = v.clamp(-1.0, 1.0);
        }
    }
    CorrelationTriplet::new(cxx, cyy, cxy, std_x, std_y, t)
}

/// Completes orthonormal columns `q` (n x r) to a full basis of R^n by
/// Gram-Schmidt of canonical basis vectors, in index order. Returns the
/// n x (n - r) complement.
fn complete_basis(q: &DenseMatrix) -> Result<DenseMatrix, EstimatorError> {
    let n = q.rows();
    let r = q.cols();
    let missing = n - r;
    let mut comp = DenseMatrix::zeros(n, missing.max(1));
    if missing == 0 {
        return Ok(DenseMatrix::zeros(n, 1)); // unused sentinel, callers skip when r == n
    }
    // Acceptance threshold sized so that enough canonical candidates survive.
    let accept = 0.5 / ((r + 1) as f64).sqrt();
    let mut found = 0usize;
    for cand_idx in 0..n {
        if found == missing {
            break;
        }
        let mut cand = vec![0.0f64; n];
        cand[cand_idx] = 1.0;
        for _pass in 0..2 {
            for c in 0..r {
                let proj: f64 = (0..n).map(|i| cand[i] * q[(i, c)]).sum();
                for i in 0..n {
                    cand[i] -= proj * q[(i, c)];
                }
            }
            for c in 0..found {
                let proj: f64 = (0..n).map(|i| cand[i] * comp[(i, c)]).sum();
                for i in 0..n {
                    cand[i] -= proj * comp[(i, c)];
                }
            }
        }
        let norm = cand.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > accept {
            for i in 0..n {
                comp[(i, found)] = cand[i] / norm;
            }
            found += 1;
        }
    }
    if found < missing {
        return Err(EstimatorError::BasisCompletion { dev: f64::INFINITY });
    }
    // orthonormality check of the completed block against itself and q
    let mut dev = comp.t_mul(&comp).max_abs_diff(&DenseMatrix::identity(missing));
    let cross = q.t_mul(&comp);
    dev = dev.max(cross.max_abs());
    if dev > 1e-9 {
        return Err(EstimatorError::BasisCompletion { dev });
    }
    Ok(comp)
}

/// Quadratic form `q_k^T m q_k` for every column of `q`.
fn projections(m: &DenseMatrix, q: &DenseMatrix) -> Vec<f64> {
    let n = q.rows();
    let cols = q.cols();
    let mut out = Vec::with_capacity(cols);
    let mut tmp = vec![0.0f64; n];
    for k in 0..cols {
        for (i, t) in tmp.iter_mut().enumerate() {
            *t = q[(i, k)];
        }
        let mq = m.mul_vec(&tmp);
        out.push(crate::linalg::dot(&tmp, &mq));
    }
    out
}

/// Marginal projections of the empirical singular directions, padded to
/// p = max(n_x, n_y).
///
/// `d` must be the thin SVD of `t.cxy`. On the larger side the basis is
/// completed orthonormally so the projections account for the full trace;
/// the aggregate beyond index r on the Y side is reported separately.
pub fn marginal_projections(
    t: &CorrelationTriplet,
    d: &SpectralDecomposition,
) -> Result<ProjectedSpectrum, EstimatorError> {
    let n_x = t.n_x();
    let n_y = t.n_y();
    let r = n_x.min(n_y);
    let p = n_x.max(n_y);
    if d.u.rows() != n_x || d.v.rows() != n_y || d.s.len() != r {
        return Err(EstimatorError::ShapeMismatch(format!(
            "decomposition ({}x{}, r={}) does not match the {}x{} cross block",
            d.u.rows(),
            d.v.rows(),
            d.s.len(),
            n_x,
            n_y
        )));
    }

    let mut gamma_x = projections(&t.cxx, &d.u);
    let mut gamma_y = projections(&t.cyy, &d.v);
    if n_x > r {
        let comp = complete_basis(&d.u)?;
        gamma_x.extend(projections(&t.cxx, &comp));
    }
    if n_y > r {
        let comp = complete_basis(&d.v)?;
        gamma_y.extend(projections(&t.cyy, &comp));
    }
    let gamma_y_extra: f64 = gamma_y[r..].iter().sum();

    let mut s_pad = vec![0.0; p];
    s_pad[..r].copy_from_slice(&d.s);
    let mut gamma_x_pad = vec![0.0; p];
    gamma_x_pad[..gamma_x.len()].copy_from_slice(&gamma_x);
    let mut gamma_y_pad = vec![0.0; p];
    gamma_y_pad[..gamma_y.len()].copy_from_slice(&gamma_y);

    Ok(ProjectedSpectrum { s_pad, gamma_x_pad, gamma_y_pad, gamma_y_extra, r, n_x, n_y })
}

/// Rebuilds a cross block from cleaned singular values in the empirical basis.
pub fn reconstruct_rie(
    d: &SpectralDecomposition,
    s_clean: &[f64],
) -> Result<DenseMatrix, EstimatorError> {
    if s_clean.len() != d.s.len() {
        return Err(EstimatorError::SpectrumLength { got: s_clean.len(), expected: d.s.len() });
    }
    Ok(d.reconstruct_with(s_clean))
}

/// The raw empirical estimator, reconstructed in its own singular basis.
pub fn mle_clean_from(d: &SpectralDecomposition) -> ShrinkageResult {
    ShrinkageResult { method: Method::Mle, s_clean: d.s.clone(), cleaned: d.reconstruct() }
}

/// Best rotationally invariant diagonal for a known target:
/// `s*_k = u_k^T target v_k`, sign retained.
pub fn oracle_clean(
    t: &CorrelationTriplet,
    target: &DenseMatrix,
) -> Result<ShrinkageResult, EstimatorError> {
    let d = svd_thin(&t.cxy)?;
    oracle_clean_from(&d, target)
}

/// [`oracle_clean`] with a precomputed decomposition of the cross block.
pub fn oracle_clean_from(
    d: &SpectralDecomposition,
    target: &DenseMatrix,
) -> Result<ShrinkageResult, EstimatorError> {
    if target.rows() != d.u.rows() || target.cols() != d.v.rows() {
        return Err(EstimatorError::ShapeMismatch(format!(
            "target {}x{} vs block {}x{}",
            target.rows(),
            target.cols(),
            d.u.rows(),
            d.v.rows()
        )));
    }
    let r = d.s.len();
    let mut s_star = Vec::with_capacity(r);
    for k in 0..r {
        let vk = d.v.column(k);
        let tv = target.mul_vec(&vk);
        let uk = d.u.column(k);
        s_star.push(crate::linalg::dot(&uk, &tv));
    }
    let cleaned = d.reconstruct_with(&s_star);
    Ok(ShrinkageResult { method: Method::Oracle, s_clean: s_star, cleaned })
}

/// `D_x * cleaned * D_y` with diagonal scaling by marginal standard deviations.
pub fn rescale_to_covariance(
    cleaned: &DenseMatrix,
    std_x: &[f64],
    std_y: &[f64],
) -> Result<DenseMatrix, EstimatorError> {
    if std_x.len() != cleaned.rows() || std_y.len() != cleaned.cols() {
        return Err(EstimatorError::ShapeMismatch(format!(
            "stds ({}, {}) vs block {}x{}",
            std_x.len(),
            std_y.len(),
            cleaned.rows(),
            cleaned.cols()
        )));
    }
    for (index, s) in std_x.iter().chain(std_y.iter()).enumerate() {
        if *s <= 0.0 || !s.is_finite() {
            return Err(EstimatorError::NonPositiveStd { index });
        }
    }
    let mut out = cleaned.clone();
    for i in 0..out.rows() {
        let si = std_x[i];
        let row = out.row_mut(i);
        for (j, v) in row.iter_mut().enumerate() {
            *v *= si * std_y[j];
        }
    }
    Ok(out)
}

/// Isotonic post-processing shared by the analytical and CV cleaners:
/// least-squares non-decreasing fit of `s_target` over `s_hat`, sorted
/// ascending in `s_hat`. Exact ties in `s_hat` share one fitted value;
/// replicating the tie-group mean keeps the group weight correct under
/// the plain pool-adjacent-violators fit.
pub(crate) fn isotonic_over_spectrum(s_hat: &[f64], s_target: &[f64]) -> Vec<f64> {
    let r = s_hat.len();
    debug_assert_eq!(r, s_target.len());
    if r <= 1 {
        return s_target.to_vec();
    }
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&i, &j| s_hat[i].partial_cmp(&s_hat[j]).expect("finite spectrum"));
    let mut ys = vec![0.0f64; r];
    let mut pos = 0usize;
    while pos < r {
        let mut end = pos + 1;
        while end < r && s_hat[order[end]] == s_hat[order[pos]] {
            end += 1;
        }
        let mean =
            order[pos..end].iter().map(|&i| s_target[i]).sum::<f64>() / (end - pos) as f64;
        for slot in ys[pos..end].iter_mut() {
            *slot = mean;
        }
        pos = end;
    }
    let xs: Vec<f64> = (0..r).map(|i| i as f64).collect();
    let fit = crate::linalg::pava_isotonic(&xs, &ys).expect("strictly increasing by construction");
    let mut out = vec![0.0; r];
    for (value, &idx) in fit.iter().zip(&order) {
        out[idx] = *value;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_panel(rng: &mut ChaCha8Rng, t: usize, n: usize) -> DenseMatrix {
        DenseMatrix::from_fn(t, n, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn self_correlation_is_one() {
        let x = DenseMatrix::new(5, 1, vec![0.1, -0.4, 0.3, 0.2, -0.2]);
        let t = sample_cross_correlation(&x, &x).unwrap();
        assert!((t.cxy[(0, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn anti_correlation_is_minus_one() {
        let x = DenseMatrix::new(4, 1, vec![1.0, -2.0, 0.5, 0.5]);
        let y = x.scale(-1.0);
        let t = sample_cross_correlation(&x, &y).unwrap();
        assert!((t.cxy[(0, 0)] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn matches_double_loop_covariance_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let x = random_panel(&mut rng, 50, 3);
        let y = random_panel(&mut rng, 50, 4);
        let trip = sample_cross_correlation(&x, &y).unwrap();
        // naive O(T n_x n_y) oracle on independently standardized data
        let t = 50usize;
        let stat = |m: &DenseMatrix, j: usize| {
            let mean = (0..t).map(|i| m[(i, j)]).sum::<f64>() / t as f64;
            let var = (0..t).map(|i| (m[(i, j)] - mean).powi(2)).sum::<f64>() / t as f64;
            (mean, var.sqrt())
        };
        for i in 0..3 {
            let (mx, sx) = stat(&x, i);
            for j in 0..4 {
                let (my, sy) = stat(&y, j);
                let mut acc = 0.0;
                for row in 0..t {
                    acc += (x[(row, i)] - mx) / sx * ((y[(row, j)] - my) / sy);
                }
                acc /= t as f64;
                assert!((trip.cxy[(i, j)] - acc).abs() < 1e-12);
            }
        }
        // marginals have exact unit diagonal
        for i in 0..3 {
            assert_eq!(trip.cxx[(i, i)], 1.0);
        }
    }

    #[test]
    fn zero_variance_column_is_named() {
        let mut x = DenseMatrix::zeros(5, 2);
        for i in 0..5 {
            x[(i, 0)] = i as f64;
        }
        // column 1 constant
        match sample_cross_correlation(&x, &x.clone()) {
            Err(EstimatorError::ZeroVariance { side: "x", column: 1 }) => {}
            other => panic!("expected zero-variance failure, got {other:?}"),
        }
    }

    #[test]
    fn identity_marginals_project_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cxy = DenseMatrix::from_fn(3, 3, |_, _| rng.random_range(-0.3..0.3));
        let t = CorrelationTriplet::new(
            DenseMatrix::identity(3),
            DenseMatrix::identity(3),
            cxy.clone(),
            vec![1.0; 3],
            vec![1.0; 3],
            100,
        )
        .unwrap();
        let d = svd_thin(&cxy).unwrap();
        let proj = marginal_projections(&t, &d).unwrap();
        for k in 0..3 {
            assert!((proj.gamma_x_pad[k] - 1.0).abs() < 1e-10);
            assert!((proj.gamma_y_pad[k] - 1.0).abs() < 1e-10);
        }
        assert_eq!(proj.gamma_y_extra, 0.0);
    }

    #[test]
    fn trace_conservation_on_rectangular_case() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = random_panel(&mut rng, 40, 4);
        let y = random_panel(&mut rng, 40, 6);
        let t = sample_cross_correlation(&x, &y).unwrap();
        let d = svd_thin(&t.cxy).unwrap();
        let proj = marginal_projections(&t, &d).unwrap();
        let sum_x: f64 = proj.gamma_x_pad.iter().sum();
        let sum_y_full: f64 = proj.gamma_y_pad.iter().sum();
        assert!((sum_x - 4.0).abs() < 1e-8, "x trace {sum_x}");
        assert!((sum_y_full - 6.0).abs() < 1e-10, "y trace {sum_y_full}");
        // extra term accounts for everything beyond r on the larger side
        let within: f64 = proj.gamma_y_pad[..proj.r].iter().sum();
        assert!((within + proj.gamma_y_extra - 6.0).abs() < 1e-10);
    }

    #[test]
    fn oracle_with_self_target_returns_empirical_spectrum() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = random_panel(&mut rng, 30, 3);
        let y = random_panel(&mut rng, 30, 4);
        let t = sample_cross_correlation(&x, &y).unwrap();
        let d = svd_thin(&t.cxy).unwrap();
        let res = oracle_clean(&t, &t.cxy).unwrap();
        for (a, b) in res.s_clean.iter().zip(&d.s) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!(crate::linalg::frobenius_mse(&res.cleaned, &t.cxy).unwrap() < 1e-18);
    }

    #[test]
    fn oracle_with_zero_target_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let x = random_panel(&mut rng, 30, 3);
        let y = random_panel(&mut rng, 30, 3);
        let t = sample_cross_correlation(&x, &y).unwrap();
        let res = oracle_clean(&t, &DenseMatrix::zeros(3, 3)).unwrap();
        for s in &res.s_clean {
            assert!(s.abs() < 1e-12);
        }
    }

    #[test]
    fn oracle_rejects_shape_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let x = random_panel(&mut rng, 30, 3);
        let y = random_panel(&mut rng, 30, 3);
        let t = sample_cross_correlation(&x, &y).unwrap();
        assert!(matches!(
            oracle_clean(&t, &DenseMatrix::zeros(2, 3)),
            Err(EstimatorError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn oracle_beats_random_diagonal_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let x = random_panel(&mut rng, 25, 3);
        let y = random_panel(&mut rng, 25, 3);
        let t = sample_cross_correlation(&x, &y).unwrap();
        let target = DenseMatrix::from_fn(3, 3, |_, _| rng.random_range(-0.5..0.5));
        let d = svd_thin(&t.cxy).unwrap();
        let oracle = oracle_clean(&t, &target).unwrap();
        let oracle_mse = crate::linalg::frobenius_mse(&oracle.cleaned, &target).unwrap();
        for _ in 0..10_000 {
            let cand: Vec<f64> = (0..3).map(|_| rng.random_range(-1.5..1.5)).collect();
            let rec = d.reconstruct_with(&cand);
            let mse = crate::linalg::frobenius_mse(&rec, &target).unwrap();
            assert!(mse + 1e-12 >= oracle_mse);
        }
    }

    #[test]
    fn reconstruct_rie_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let a = random_panel(&mut rng, 4, 3);
        let d = svd_thin(&a).unwrap();
        let same = reconstruct_rie(&d, &d.s.clone()).unwrap();
        assert!(same.max_abs_diff(&a) < 1e-10);
        let zero = reconstruct_rie(&d, &[0.0; 3]).unwrap();
        assert_eq!(zero.max_abs(), 0.0);
        assert!(matches!(
            reconstruct_rie(&d, &[1.0]),
            Err(EstimatorError::SpectrumLength { .. })
        ));
    }

    #[test]
    fn reconstruct_rank_one_outer_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let a = random_panel(&mut rng, 4, 3);
        let d = svd_thin(&a).unwrap();
        let rec = reconstruct_rie(&d, &[2.5, 0.0, 0.0]).unwrap();
        for i in 0..4 {
            for j in 0..3 {
                let expected = 2.5 * d.u[(i, 0)] * d.v[(j, 0)];
                assert!((rec[(i, j)] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rescale_trivial_and_scalar_cases() {
        let c = DenseMatrix::new(1, 1, vec![0.5]);
        let unit = rescale_to_covariance(&c, &[1.0], &[1.0]).unwrap();
        assert_eq!(unit[(0, 0)], 0.5);
        let scaled = rescale_to_covariance(&c, &[2.0], &[3.0]).unwrap();
        assert_eq!(scaled[(0, 0)], 3.0);
        assert!(matches!(
            rescale_to_covariance(&c, &[0.0], &[1.0]),
            Err(EstimatorError::NonPositiveStd { .. })
        ));
    }

    #[test]
    fn rescale_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let c = random_panel(&mut rng, 3, 4);
        let sx: Vec<f64> = (0..3).map(|_| rng.random_range(0.5..2.0)).collect();
        let sy: Vec<f64> = (0..4).map(|_| rng.random_range(0.5..2.0)).collect();
        let out = rescale_to_covariance(&c, &sx, &sy).unwrap();
        for i in 0..3 {
            for j in 0..4 {
                assert!((out[(i, j)] - sx[i] * c[(i, j)] * sy[j]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn isotonic_over_spectrum_handles_ties() {
        let s_hat = [2.0, 1.0, 1.0, 0.0];
        let target = [0.5, 3.0, 1.0, 0.2];
        let fit = isotonic_over_spectrum(&s_hat, &target);
        // ascending: 0.2, then the tied pair pooled at mean 2.0 (weight 2),
        // then 0.5; the violating tail pools to (2.0 + 2.0 + 0.5)/3 = 1.5
        assert!((fit[3] - 0.2).abs() < 1e-12);
        assert!((fit[1] - 1.5).abs() < 1e-12);
        assert!((fit[2] - 1.5).abs() < 1e-12);
        assert!((fit[0] - 1.5).abs() < 1e-12);
    }
}
