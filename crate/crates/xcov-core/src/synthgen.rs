//! Seeded generators for the four synthetic benchmark families and
//! Gaussian observation sampling from an assembled population covariance.

use crate::linalg::{cholesky, qr_thin, svd_thin, DenseMatrix, LinalgError};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid parameter {name} = {value}: {reason}")]
    InvalidParam { name: &'static str, value: f64, reason: &'static str },
    #[error("cross block is identically zero; white marginals are undefined")]
    DegenerateCrossBlock,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// A reproducible random stream: same (seed, stream) always replays the
/// same draws, distinct streams are statistically independent. Streams are
/// cheap to mint, which keeps parallel Monte Carlo deterministic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngStream {
    pub master_seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        Self { master_seed, stream_id }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// Entry law of the bulk-generating rectangular matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailLaw {
    Gaussian,
    /// Symmetric Student-t with this tail exponent (degrees of freedom),
    /// unit scale.
    StudentT(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchmarkKind {
    FiniteRank,
    HeavyBulk,
    WhiteHeavy,
    Mode,
}

impl BenchmarkKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            BenchmarkKind::FiniteRank => "finite_rank",
            BenchmarkKind::HeavyBulk => "heavy_bulk",
            BenchmarkKind::WhiteHeavy => "white_heavy",
            BenchmarkKind::Mode => "mode",
        }
    }
}

/// Benchmark family plus its parameters, as written in experiment configs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BenchmarkSpec {
    FiniteRank {
        xi: f64,
        #[serde(default = "default_sigma2")]
        sigma2: f64,
    },
    HeavyBulk { tail: TailLaw },
    WhiteHeavy { tail: TailLaw },
    Mode { m: f64 },
}

fn default_sigma2() -> f64 {
    0.5
}

impl BenchmarkSpec {
    pub fn kind(&self) -> BenchmarkKind {
        match self {
            BenchmarkSpec::FiniteRank { .. } => BenchmarkKind::FiniteRank,
            BenchmarkSpec::HeavyBulk { .. } => BenchmarkKind::HeavyBulk,
            BenchmarkSpec::WhiteHeavy { .. } => BenchmarkKind::WhiteHeavy,
            BenchmarkSpec::Mode { .. } => BenchmarkKind::Mode,
        }
    }

    /// Human-readable value of the varied parameter, for result tables.
    pub fn param_label(&self) -> String {
        match self {
            BenchmarkSpec::FiniteRank { xi, .. } => format!("{xi}"),
            BenchmarkSpec::HeavyBulk { tail } | BenchmarkSpec::WhiteHeavy { tail } => match tail {
                TailLaw::Gaussian => "gaussian".to_string(),
                TailLaw::StudentT(alpha) => format!("{alpha}"),
            },
            BenchmarkSpec::Mode { m } => format!("{m}"),
        }
    }

    pub fn build(
        &self,
        n_x: usize,
        n_y: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<PopulationModel, SynthError> {
        match *self {
            BenchmarkSpec::FiniteRank { xi, sigma2 } => {
                build_finite_rank(n_x, n_y, xi, sigma2, rng)
            }
            BenchmarkSpec::HeavyBulk { tail } => build_heavy_bulk(n_x, n_y, tail, rng),
            BenchmarkSpec::WhiteHeavy { tail } => build_white_heavy(n_x, n_y, tail, rng),
            BenchmarkSpec::Mode { m } => build_mode(n_x, n_y, m, rng),
        }
    }
}

/// Record of the parameters a generated population was built with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct BenchmarkParams {
    pub xi: Option<f64>,
    pub sigma2: Option<f64>,
    pub tail: Option<TailLaw>,
    pub mode: Option<f64>,
}

/// Population covariance blocks of one synthetic instance.
#[derive(Debug, Clone)]
pub struct PopulationModel {
    pub sigma_xx: DenseMatrix,
    pub sigma_xy: DenseMatrix,
    pub sigma_yy: DenseMatrix,
    pub benchmark: BenchmarkKind,
    pub params: BenchmarkParams,
}

impl PopulationModel {
    pub fn n_x(&self) -> usize {
        self.sigma_xy.rows()
    }

    pub fn n_y(&self) -> usize {
        self.sigma_xy.cols()
    }

    /// Full (n_x + n_y) block covariance matrix.
    pub fn assemble(&self) -> DenseMatrix {
        let n_x = self.n_x();
        let n = n_x + self.n_y();
        DenseMatrix::from_fn(n, n, |i, j| match (i < n_x, j < n_x) {
            (true, true) => self.sigma_xx[(i, j)],
            (true, false) => self.sigma_xy[(i, j - n_x)],
            (false, true) => self.sigma_xy[(j, i - n_x)],
            (false, false) => self.sigma_yy[(i - n_x, j - n_x)],
        })
    }

    /// Correlation form of all three blocks.
    pub fn correlation_blocks(&self) -> (DenseMatrix, DenseMatrix, DenseMatrix) {
        let dx: Vec<f64> = self.sigma_xx.diag().iter().map(|v| v.sqrt()).collect();
        let dy: Vec<f64> = self.sigma_yy.diag().iter().map(|v| v.sqrt()).collect();
        let scale = |m: &DenseMatrix, left: &[f64], right: &[f64]| {
            let mut out = m.clone();
            for i in 0..out.rows() {
                let li = left[i];
                let row = out.row_mut(i);
                for (j, v) in row.iter_mut().enumerate() {
                    *v /= li * right[j];
                }
            }
            out
        };
        let mut cxx = scale(&self.sigma_xx, &dx, &dx);
        let mut cyy = scale(&self.sigma_yy, &dy, &dy);
        let cxy = scale(&self.sigma_xy, &dx, &dy);
        for i in 0..cxx.rows() {
            cxx[(i, i)] = 1.0;
        }
        for i in 0..cyy.rows() {
            cyy[(i, i)] = 1.0;
        }
        (cxx, cyy, cxy)
    }

    /// Population cross-correlation, the scoring target for synthetic runs.
    pub fn cross_correlation(&self) -> DenseMatrix {
        self.correlation_blocks().2
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Orthogonal matrix distributed per Haar measure: QR of an i.i.d. standard
/// Gaussian matrix with the sign of each diagonal entry of R absorbed into Q.
pub fn haar_orthogonal(n: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    assert!(n >= 1);
    let g = DenseMatrix::from_fn(n, n, |_, _| gaussian(rng));
    let (mut q, r) = qr_thin(&g);
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            for i in 0..n {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    q
}

/// Finite-rank spiked cross block between isotropic X and structured Y.
///
/// A fraction `xi` of the singular values is drawn Unif[0.2, 0.5] with
/// independent Haar singular vectors; the Y marginal picks up the induced
/// structure plus isotropic noise `sigma2 * I`.
pub fn build_finite_rank(
    n_x: usize,
    n_y: usize,
    xi: f64,
    sigma2: f64,
    rng: &mut ChaCha8Rng,
) -> Result<PopulationModel, SynthError> {
    if !(0.0..=1.0).contains(&xi) || !xi.is_finite() {
        return Err(SynthError::InvalidParam {
            name: "xi",
            value: xi,
            reason: "spike fraction must lie in [0, 1]",
        });
    }
    if sigma2 < 0.0 || !sigma2.is_finite() {
        return Err(SynthError::InvalidParam {
            name: "sigma2",
            value: sigma2,
            reason: "noise variance must be non-negative",
        });
    }
    let r = n_x.min(n_y);
    let rho = (xi * r as f64).floor() as usize;
    let spikes: Vec<f64> = (0..rho).map(|_| rng.random_range(0.2..0.5)).collect();
    let u = haar_orthogonal(n_x, rng);
    let v = haar_orthogonal(n_y, rng);

    let mut sigma_xy = DenseMatrix::zeros(n_x, n_y);
    for (k, &s) in spikes.iter().enumerate() {
        for i in 0..n_x {
            let w = s * u[(i, k)];
            let row = sigma_xy.row_mut(i);
            for j in 0..n_y {
                row[j] += w * v[(j, k)];
            }
        }
    }
    let mut sigma_yy = sigma_xy.t_mul(&sigma_xy);
    for i in 0..n_y {
        sigma_yy[(i, i)] += sigma2;
    }
    Ok(PopulationModel {
        sigma_xx: DenseMatrix::identity(n_x),
        sigma_xy,
        sigma_yy,
        benchmark: BenchmarkKind::FiniteRank,
        params: BenchmarkParams { xi: Some(xi), sigma2: Some(sigma2), ..Default::default() },
    })
}

/// Wishart-type bulk: `sigma = (1/2n) W W^T` with `W` of size n x 2n,
/// n = n_x + n_y, entries Gaussian or symmetric Student-t.
pub fn build_heavy_bulk(
    n_x: usize,
    n_y: usize,
    tail: TailLaw,
    rng: &mut ChaCha8Rng,
) -> Result<PopulationModel, SynthError> {
    let n = n_x + n_y;
    let w = match tail {
        TailLaw::Gaussian => DenseMatrix::from_fn(n, 2 * n, |_, _| gaussian(rng)),
        TailLaw::StudentT(alpha) => {
            if !(alpha > 1.0) {
                return Err(SynthError::InvalidParam {
                    name: "alpha",
                    value: alpha,
                    reason: "tail exponent must exceed 1 for a defined mean",
                });
            }
            let law = StudentT::new(alpha).expect("valid degrees of freedom");
            DenseMatrix::from_fn(n, 2 * n, |_, _| law.sample(rng))
        }
    };
    let sigma = w.mul_t(&w).scale(1.0 / (2 * n) as f64);
    let take = |ri: std::ops::Range<usize>, ci: std::ops::Range<usize>| {
        DenseMatrix::from_fn(ri.len(), ci.len(), |i, j| sigma[(ri.start + i, ci.start + j)])
    };
    Ok(PopulationModel {
        sigma_xx: take(0..n_x, 0..n_x),
        sigma_xy: take(0..n_x, n_x..n),
        sigma_yy: take(n_x..n, n_x..n),
        benchmark: BenchmarkKind::HeavyBulk,
        params: BenchmarkParams { tail: Some(tail), ..Default::default() },
    })
}

/// Same cross block as [`build_heavy_bulk`] but with both marginals
/// replaced by `s_max * I`, `s_max` the cross block's largest singular
/// value, so the assembled matrix stays positive semidefinite.
pub fn build_white_heavy(
    n_x: usize,
    n_y: usize,
    tail: TailLaw,
    rng: &mut ChaCha8Rng,
) -> Result<PopulationModel, SynthError> {
    let bulk = build_heavy_bulk(n_x, n_y, tail, rng)?;
    let sigma_xy = bulk.sigma_xy;
    let d = svd_thin(&sigma_xy)?;
    let s_max = d.s.first().copied().unwrap_or(0.0);
    if s_max <= 0.0 {
        return Err(SynthError::DegenerateCrossBlock);
    }
    Ok(PopulationModel {
        sigma_xx: DenseMatrix::identity(n_x).scale(s_max),
        sigma_yy: DenseMatrix::identity(n_y).scale(s_max),
        sigma_xy,
        benchmark: BenchmarkKind::WhiteHeavy,
        params: BenchmarkParams { tail: Some(tail), ..Default::default() },
    })
}

/// Closed-form square root of the equicorrelation matrix
/// `(1-m) I + m 1 1^T`, namely `a I + b 1 1^T` with `a = sqrt(1-m)` and
/// `b = (sqrt(1 - m + m n) - sqrt(1-m)) / n`.
pub fn equicorrelation_sqrt(n: usize, m: f64) -> DenseMatrix {
    let a = (1.0 - m).sqrt();
    let b = ((1.0 - m + m * n as f64).sqrt() - a) / n as f64;
    DenseMatrix::from_fn(n, n, |i, j| if i == j { a + b } else { b })
}

/// Gaussian bulk with an equicorrelated mode injected by congruence and
/// the result rescaled to unit diagonal.
pub fn build_mode(
    n_x: usize,
    n_y: usize,
    m: f64,
    rng: &mut ChaCha8Rng,
) -> Result<PopulationModel, SynthError> {
    if !(0.0..1.0).contains(&m) || !m.is_finite() {
        return Err(SynthError::InvalidParam {
            name: "m",
            value: m,
            reason: "mode strength must lie in [0, 1)",
        });
    }
    let bulk = build_heavy_bulk(n_x, n_y, TailLaw::Gaussian, rng)?;
    let sigma_g = bulk.assemble();
    let n = n_x + n_y;
    let a = (1.0 - m).sqrt();
    let b = ((1.0 - m + m * n as f64).sqrt() - a) / n as f64;
    // (aI + b 1 1^T) S (aI + b 1 1^T) expanded through row sums, O(n^2)
    let row_sums: Vec<f64> = (0..n).map(|i| sigma_g.row(i).iter().sum()).collect();
    let total: f64 = row_sums.iter().sum();
    let mut sigma_m = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            sigma_m[(i, j)] = a * a * sigma_g[(i, j)]
                + a * b * (row_sums[i] + row_sums[j])
                + b * b * total;
        }
    }
    // normalize to unit diagonal
    let d: Vec<f64> = (0..n).map(|i| sigma_m[(i, i)].sqrt()).collect();
    let mut sigma = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            sigma[(i, j)] = sigma_m[(i, j)] / (d[i] * d[j]);
        }
    }
    for i in 0..n {
        sigma[(i, i)] = 1.0;
    }
    let take = |ri: std::ops::Range<usize>, ci: std::ops::Range<usize>| {
        DenseMatrix::from_fn(ri.len(), ci.len(), |i, j| sigma[(ri.start + i, ci.start + j)])
    };
    Ok(PopulationModel {
        sigma_xx: take(0..n_x, 0..n_x),
        sigma_xy: take(0..n_x, n_x..n),
        sigma_yy: take(n_x..n, n_x..n),
        benchmark: BenchmarkKind::Mode,
        params: BenchmarkParams { mode: Some(m), ..Default::default() },
    })
}

/// Draws `t` i.i.d. multivariate Gaussian observations with the model's
/// assembled covariance via its Cholesky factor, split into X and Y panels.
pub fn sample_observations(
    model: &PopulationModel,
    t: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(DenseMatrix, DenseMatrix), SynthError> {
    let sigma = model.assemble();
    let l = cholesky(&sigma)?;
    let n_x = model.n_x();
    let n_y = model.n_y();
    let n = n_x + n_y;
    let mut x = DenseMatrix::zeros(t, n_x);
    let mut y = DenseMatrix::zeros(t, n_y);
    let mut z = vec![0.0f64; n];
    for row in 0..t {
        for zi in z.iter_mut() {
            *zi = gaussian(rng);
        }
        for i in 0..n {
            // lower-triangular product
            let v = crate::linalg::dot(&l.row(i)[..=i], &z[..=i]);
            if i < n_x {
                x[(row, i)] = v;
            } else {
                y[(row, i - n_x)] = v;
            }
        }
    }
    Ok((x, y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feasibility::{feasibility_report, DEFAULT_TOL};
    use crate::linalg::sym_eig;

    fn rng(seed: u64) -> ChaCha8Rng {
        RngStream::new(seed, 0).rng()
    }

    #[test]
    fn haar_one_dimensional_is_sign() {
        for seed in 0..8 {
            let q = haar_orthogonal(1, &mut rng(seed));
            assert!((q[(0, 0)].abs() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn haar_is_orthogonal() {
        let q = haar_orthogonal(10, &mut rng(7));
        let qtq = q.t_mul(&q);
        assert!(qtq.max_abs_diff(&DenseMatrix::identity(10)) < 1e-12);
    }

    #[test]
    fn haar_entry_second_moment() {
        // E |Q_11|^2 = 1/n under Haar measure
        let n = 5usize;
        let draws = 100_000usize;
        let mut r = rng(123);
        let mut acc = 0.0;
        let mut acc2 = 0.0;
        for _ in 0..draws {
            let q = haar_orthogonal(n, &mut r);
            let v = q[(0, 0)] * q[(0, 0)];
            acc += v;
            acc2 += v * v;
        }
        let mean = acc / draws as f64;
        let var = acc2 / draws as f64 - mean * mean;
        let se = (var / draws as f64).sqrt();
        assert!(
            (mean - 1.0 / n as f64).abs() < 3.0 * se,
            "mean {mean} vs 1/n {} (3se {})",
            1.0 / n as f64,
            3.0 * se
        );
    }

    #[test]
    fn finite_rank_without_spikes() {
        let model = build_finite_rank(4, 6, 0.0, 0.5, &mut rng(1)).unwrap();
        assert_eq!(model.sigma_xy.max_abs(), 0.0);
        assert!(model
            .sigma_yy
            .max_abs_diff(&DenseMatrix::identity(6).scale(0.5)) < 1e-15);
    }

    #[test]
    fn finite_rank_spike_count_and_range() {
        let model = build_finite_rank(8, 12, 0.5, 0.5, &mut rng(2)).unwrap();
        let d = svd_thin(&model.sigma_xy).unwrap();
        let nonzero: Vec<f64> = d.s.iter().copied().filter(|&s| s > 1e-12).collect();
        assert_eq!(nonzero.len(), 4); // floor(0.5 * 8)
        for s in nonzero {
            assert!((0.2..=0.5).contains(&s), "spike {s} outside [0.2, 0.5]");
        }
    }

    #[test]
    fn finite_rank_assembled_is_psd() {
        for seed in 0..5 {
            let model = build_finite_rank(5, 8, 0.4, 0.5, &mut rng(seed)).unwrap();
            let (evals, _) = sym_eig(&model.assemble()).unwrap();
            assert!(*evals.last().unwrap() >= -1e-10);
        }
    }

    #[test]
    fn finite_rank_rejects_bad_fraction() {
        assert!(matches!(
            build_finite_rank(4, 4, 1.5, 0.5, &mut rng(0)),
            Err(SynthError::InvalidParam { name: "xi", .. })
        ));
    }

    #[test]
    fn heavy_bulk_diagonal_concentrates_at_one() {
        let model = build_heavy_bulk(200, 350, TailLaw::Gaussian, &mut rng(3)).unwrap();
        let n = 550.0;
        let diag: Vec<f64> = model
            .sigma_xx
            .diag()
            .into_iter()
            .chain(model.sigma_yy.diag())
            .collect();
        let mean = diag.iter().sum::<f64>() / n;
        // each diagonal entry is a chi-square mean with variance 1/(2n)
        let se = (1.0 / (2.0 * n) / n).sqrt();
        assert!((mean - 1.0).abs() < 3.0 * se, "diag mean {mean}");
    }

    #[test]
    fn heavy_bulk_is_psd_by_construction() {
        let model = build_heavy_bulk(6, 9, TailLaw::StudentT(3.0), &mut rng(4)).unwrap();
        let (evals, _) = sym_eig(&model.assemble()).unwrap();
        assert!(*evals.last().unwrap() >= -1e-10);
    }

    #[test]
    fn heavy_bulk_rejects_undefined_mean() {
        assert!(matches!(
            build_heavy_bulk(3, 3, TailLaw::StudentT(1.0), &mut rng(0)),
            Err(SynthError::InvalidParam { name: "alpha", .. })
        ));
    }

    #[test]
    fn white_heavy_marginals_are_scaled_identity() {
        let model = build_white_heavy(5, 7, TailLaw::StudentT(2.5), &mut rng(5)).unwrap();
        let d = svd_thin(&model.sigma_xy).unwrap();
        let s_max = d.s[0];
        assert!(model
            .sigma_xx
            .max_abs_diff(&DenseMatrix::identity(5).scale(s_max)) < 1e-12);
        assert!(model
            .sigma_yy
            .max_abs_diff(&DenseMatrix::identity(7).scale(s_max)) < 1e-12);
        // canonical singular values of the whitened cross block are <= 1
        let (cxx, cyy, cxy) = model.correlation_blocks();
        let rep = feasibility_report(&cxx, &cyy, &cxy, DEFAULT_TOL).unwrap();
        assert!(rep.max_canonical <= 1.0 + 1e-8);
    }

    #[test]
    fn equicorrelation_sqrt_squares_back() {
        let n = 7;
        let m = 0.3;
        let root = equicorrelation_sqrt(n, m);
        let target = DenseMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { m });
        assert!(root.matmul(&root).max_abs_diff(&target) < 1e-12);
    }

    #[test]
    fn equicorrelation_eigenvalues() {
        let n = 6;
        let m = 0.4;
        let target = DenseMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { m });
        let (evals, _) = sym_eig(&target).unwrap();
        assert!((evals[0] - (1.0 + m * (n - 1) as f64)).abs() < 1e-12);
        for v in &evals[1..] {
            assert!((v - (1.0 - m)).abs() < 1e-12);
        }
    }

    #[test]
    fn mode_zero_reduces_to_correlation_form_of_the_bulk() {
        let m0 = build_mode(4, 5, 0.0, &mut rng(6)).unwrap();
        let bulk = build_heavy_bulk(4, 5, TailLaw::Gaussian, &mut rng(6)).unwrap();
        let (cxx, cyy, cxy) = bulk.correlation_blocks();
        assert!(m0.sigma_xx.max_abs_diff(&cxx) < 1e-12);
        assert!(m0.sigma_yy.max_abs_diff(&cyy) < 1e-12);
        assert!(m0.sigma_xy.max_abs_diff(&cxy) < 1e-12);
    }

    #[test]
    fn mode_model_has_unit_diagonal() {
        let model = build_mode(5, 6, 0.5, &mut rng(7)).unwrap();
        for v in model.sigma_xx.diag().iter().chain(model.sigma_yy.diag().iter()) {
            assert_eq!(*v, 1.0);
        }
        assert!(matches!(
            build_mode(3, 3, 1.0, &mut rng(0)),
            Err(SynthError::InvalidParam { name: "m", .. })
        ));
    }

    #[test]
    fn every_benchmark_is_feasible_in_correlation_form() {
        let specs = [
            BenchmarkSpec::FiniteRank { xi: 0.3, sigma2: 0.5 },
            BenchmarkSpec::HeavyBulk { tail: TailLaw::Gaussian },
            BenchmarkSpec::WhiteHeavy { tail: TailLaw::StudentT(2.5) },
            BenchmarkSpec::Mode { m: 0.5 },
        ];
        for (i, spec) in specs.iter().enumerate() {
            let model = spec.build(5, 8, &mut rng(40 + i as u64)).unwrap();
            let (cxx, cyy, cxy) = model.correlation_blocks();
            let rep = feasibility_report(&cxx, &cyy, &cxy, DEFAULT_TOL).unwrap();
            assert!(rep.feasible_psd, "{spec:?} infeasible: max {}", rep.max_canonical);
        }
    }

    #[test]
    fn isotropic_sampling_matches_identity_covariance() {
        let model = PopulationModel {
            sigma_xx: DenseMatrix::identity(2),
            sigma_xy: DenseMatrix::zeros(2, 2),
            sigma_yy: DenseMatrix::identity(2),
            benchmark: BenchmarkKind::FiniteRank,
            params: BenchmarkParams::default(),
        };
        let t = 4000usize;
        let (x, y) = sample_observations(&model, t, &mut rng(8)).unwrap();
        let joint = DenseMatrix::from_fn(t, 4, |i, j| {
            if j < 2 { x[(i, j)] } else { y[(i, j - 2)] }
        });
        let cov = joint.t_mul(&joint).scale(1.0 / t as f64);
        let bound = 4.0 / (t as f64).sqrt();
        assert!(cov.max_abs_diff(&DenseMatrix::identity(4)) < bound);
    }

    #[test]
    fn rank_deficient_draws_stay_in_the_column_space() {
        // rank-1 population: all mass on the direction (1,1,1,1)/2
        let v = [0.5, 0.5, 0.5, 0.5];
        let full = DenseMatrix::from_fn(4, 4, |i, j| v[i] * v[j]);
        let model = PopulationModel {
            sigma_xx: DenseMatrix::from_fn(2, 2, |i, j| full[(i, j)]),
            sigma_xy: DenseMatrix::from_fn(2, 2, |i, j| full[(i, j + 2)]),
            sigma_yy: DenseMatrix::from_fn(2, 2, |i, j| full[(i + 2, j + 2)]),
            benchmark: BenchmarkKind::FiniteRank,
            params: BenchmarkParams::default(),
        };
        let (x, y) = sample_observations(&model, 200, &mut rng(9)).unwrap();
        for row in 0..200 {
            let obs = [x[(row, 0)], x[(row, 1)], y[(row, 0)], y[(row, 1)]];
            let norm = obs.iter().map(|o| o * o).sum::<f64>().sqrt();
            if norm == 0.0 {
                continue;
            }
            let along: f64 = obs.iter().zip(&v).map(|(o, vi)| o * vi).sum();
            let residual: f64 = obs
                .iter()
                .zip(&v)
                .map(|(o, vi)| (o - along * vi).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(residual / norm < 1e-6, "relative residual {}", residual / norm);
        }
    }

    #[test]
    fn identical_streams_reproduce_bit_identical_panels() {
        let spec = BenchmarkSpec::Mode { m: 0.3 };
        let make = || {
            let mut r = RngStream::new(77, 5).rng();
            let model = spec.build(4, 6, &mut r).unwrap();
            sample_observations(&model, 30, &mut r).unwrap()
        };
        let (x1, y1) = make();
        let (x2, y2) = make();
        assert_eq!(x1.data(), x2.data());
        assert_eq!(y1.data(), y2.data());
        // a different stream id produces different draws
        let mut r3 = RngStream::new(77, 6).rng();
        let model3 = spec.build(4, 6, &mut r3).unwrap();
        let (x3, _) = sample_observations(&model3, 30, &mut r3).unwrap();
        assert_ne!(x1.data(), x3.data());
    }

    #[test]
    fn heavy_tail_kurtosis_diverges_while_gaussian_stays_near_three() {
        let kurtosis = |xs: &[f64]| {
            let n = xs.len() as f64;
            let m2 = xs.iter().map(|x| x * x).sum::<f64>() / n;
            let m4 = xs.iter().map(|x| x.powi(4)).sum::<f64>() / n;
            m4 / (m2 * m2)
        };
        let mut r = rng(10);
        let law = StudentT::new(1.5).unwrap();
        let heavy: Vec<f64> = (0..1_000_000).map(|_| law.sample(&mut r)).collect();
        let k1 = kurtosis(&heavy[..10_000]);
        let k2 = kurtosis(&heavy[..100_000]);
        let k3 = kurtosis(&heavy);
        assert!(k1 < k2 && k2 < k3, "kurtosis not growing: {k1} {k2} {k3}");

        let gauss: Vec<f64> = (0..1_000_000).map(|_| gaussian(&mut r)).collect();
        for size in [10_000, 100_000, 1_000_000] {
            let k = kurtosis(&gauss[..size]);
            assert!((k - 3.0).abs() < 0.2, "gaussian kurtosis {k} at {size}");
        }
    }
}
