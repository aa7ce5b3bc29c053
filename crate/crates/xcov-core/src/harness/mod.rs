//! Monte Carlo experiment orchestration: synthetic benchmark sweeps,
//! real-panel walk-forward evaluation, bootstrap confidence intervals,
//! and plot-ready CSV output. Runs are bit-reproducible from
//! (config, master_seed) regardless of worker-thread count; only the
//! wall-time column varies between runs.

mod panel;

pub use panel::{
    apply_day_permutation, remove_market_mode, sample_window, time_permutation_shuffle,
    ReturnsPanel, WindowSample,
};

use crate::estimators::{
    bbp_clean_from, cv_clean_from, mle_clean_from, oracle_clean_from, sample_cross_correlation,
    EstimatorError, Method, SplitMode,
};
use crate::linalg::{frobenius_mse, svd_thin, DenseMatrix, LinalgError};
use crate::neural::{
    build_tokens, BatchSampler, NeuralError, NeuralModel, TrainConfig, TrainSample,
};
use crate::estimators::marginal_projections;
use crate::synthgen::{sample_observations, BenchmarkSpec, RngStream, SynthError};
use chrono::NaiveDate;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration invalid: {0}")]
    Config(String),
    #[error("bootstrap needs a non-empty sample")]
    EmptyInput,
    #[error("csv error at line {line}: {message}")]
    Csv { line: usize, message: String },
    #[error("panel invalid: {0}")]
    Panel(String),
    #[error("window sampling failed after {attempts} attempts: {reason}")]
    WindowSampling { attempts: usize, reason: String },
    #[error("no model trained strictly before {date}")]
    NoEligibleModel { date: NaiveDate },
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

/// Which fold scheme the CV estimator uses inside harness runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CvSplit {
    #[default]
    KFold,
    MonteCarlo,
}

/// Experiment description; JSON configs mirror these field names.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct ExperimentConfig {
    /// synthetic benchmark; absent for real-panel evaluation
    pub benchmark: Option<BenchmarkSpec>,
    pub estimators: Vec<Method>,
    pub n_sim: usize,
    pub n_x: usize,
    pub n_y: usize,
    pub dt_in: usize,
    pub dt_out: usize,
    pub shuffle: bool,
    pub mode_removal: bool,
    pub bootstrap_copies: usize,
    pub master_seed: u64,
    pub cv_folds: usize,
    pub cv_split: CvSplit,
    pub cv_num_splits: usize,
    pub cv_isotonic: bool,
    pub bbp_isotonic: bool,
    /// real-panel draws: ranges for total assets, relative dimension, and
    /// window length (defaults fall back to the fixed dims above)
    pub n_range: Option<(usize, usize)>,
    pub nu_range: Option<(f64, f64)>,
    pub dt_in_range: Option<(usize, usize)>,
    /// ISO dates restricting where evaluation windows may start/end
    pub eval_start: Option<String>,
    pub eval_end: Option<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            benchmark: None,
            estimators: vec![Method::Mle, Method::Bbp, Method::Cv],
            n_sim: 100,
            n_x: 200,
            n_y: 350,
            dt_in: 500,
            dt_out: 240,
            shuffle: false,
            mode_removal: false,
            bootstrap_copies: 10_000,
            master_seed: 0,
            cv_folds: 10,
            cv_split: CvSplit::KFold,
            cv_num_splits: 10,
            cv_isotonic: true,
            bbp_isotonic: false,
            n_range: None,
            nu_range: None,
            dt_in_range: None,
            eval_start: None,
            eval_end: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    fn validate_common(&self) -> Result<(), HarnessError> {
        if self.n_sim < 1 {
            return Err(HarnessError::Config("n_sim must be at least 1".into()));
        }
        if self.estimators.is_empty() {
            return Err(HarnessError::Config("estimator set is empty".into()));
        }
        if self.dt_out < 1 {
            return Err(HarnessError::Config("dt_out must be at least 1".into()));
        }
        Ok(())
    }

    fn cv_split_mode(&self, sim: u64) -> SplitMode {
        match self.cv_split {
            CvSplit::KFold => SplitMode::KFold,
            CvSplit::MonteCarlo => SplitMode::MonteCarlo {
                num_splits: self.cv_num_splits,
                seed: derive_seed(self.master_seed, CV_SALT, sim),
            },
        }
    }

    fn parse_bound(text: &Option<String>) -> Result<Option<NaiveDate>, HarnessError> {
        match text {
            None => Ok(None),
            Some(s) => NaiveDate::parse_from_str(s, "%Y-%m-%d")
                .map(Some)
                .map_err(|e| HarnessError::Config(format!("bad date '{s}': {e}"))),
        }
    }
}

/// One aggregated line of an experiment: estimator, condition, varied
/// parameter, bootstrap interval, and the accumulated wall time.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub estimator: Method,
    pub condition: String,
    pub param: String,
    pub mean_mse: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_sim: usize,
    pub seconds: f64,
}

const CV_SALT: u64 = 0x1;
const BOOTSTRAP_STREAM_BASE: u64 = 1 << 62;

/// Mixes (seed, salt, index) into an independent 64-bit seed (splitmix64).
fn derive_seed(master_seed: u64, salt: u64, index: u64) -> u64 {
    let mut z = master_seed
        .wrapping_add(salt.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Percentile bootstrap of the sample mean.
pub fn bootstrap_ci(
    samples: &[f64],
    copies: usize,
    level: f64,
    stream: RngStream,
) -> Result<(f64, f64, f64), HarnessError> {
    if samples.is_empty() {
        return Err(HarnessError::EmptyInput);
    }
    let n = samples.len();
    let mean = samples.iter().sum::<f64>() / n as f64;
    if copies == 0 || n == 1 {
        return Ok((mean, mean, mean));
    }
    let mut rng = stream.rng();
    let mut means = Vec::with_capacity(copies);
    for _ in 0..copies {
        let mut acc = 0.0;
        for _ in 0..n {
            acc += samples[rng.random_range(0..n)];
        }
        means.push(acc / n as f64);
    }
    means.sort_by(|a, b| a.partial_cmp(b).expect("finite means"));
    let q = (1.0 - level) / 2.0;
    let pick = |p: f64| {
        let idx = ((copies - 1) as f64 * p).round() as usize;
        means[idx.min(copies - 1)]
    };
    Ok((mean, pick(q), pick(1.0 - q)))
}

/// Per-simulation estimator outcomes, in estimator order.
type SimOutcome = Vec<(Method, Result<f64, String>, f64)>;

fn aggregate_rows(
    config: &ExperimentConfig,
    condition: &str,
    param: &str,
    outcomes: Vec<SimOutcome>,
) -> Result<Vec<ResultRow>, HarnessError> {
    let mut rows = Vec::with_capacity(config.estimators.len());
    for (est_idx, est) in config.estimators.iter().enumerate() {
        let mut values = Vec::new();
        let mut seconds = 0.0;
        for sim in &outcomes {
            let (method, outcome, secs) = &sim[est_idx];
            debug_assert_eq!(method, est);
            seconds += secs;
            if let Ok(v) = outcome {
                values.push(*v);
            }
        }
        let (mean, low, high) = if values.is_empty() {
            (f64::NAN, f64::NAN, f64::NAN)
        } else {
            bootstrap_ci(
                &values,
                config.bootstrap_copies,
                0.95,
                RngStream::new(config.master_seed, BOOTSTRAP_STREAM_BASE + est_idx as u64),
            )?
        };
        rows.push(ResultRow {
            estimator: *est,
            condition: condition.to_string(),
            param: param.to_string(),
            mean_mse: mean,
            ci_low: low,
            ci_high: high,
            n_sim: values.len(),
            seconds,
        });
    }
    Ok(rows)
}

/// Scores every configured estimator on one prepared draw.
#[allow(clippy::too_many_arguments)]
fn score_estimators(
    config: &ExperimentConfig,
    sim: u64,
    x_in: &DenseMatrix,
    y_in: &DenseMatrix,
    target: &DenseMatrix,
    oracle_target: &DenseMatrix,
    nn: Option<&NeuralModel>,
) -> SimOutcome {
    let mut out: SimOutcome = Vec::with_capacity(config.estimators.len());
    // shared inputs; if they fail, every estimator fails on this draw
    let prepared = (|| -> Result<_, String> {
        let trip = sample_cross_correlation(x_in, y_in).map_err(|e| e.to_string())?;
        let d = svd_thin(&trip.cxy).map_err(|e| e.to_string())?;
        Ok((trip, d))
    })();
    let (trip, d) = match prepared {
        Ok(pair) => pair,
        Err(message) => {
            for est in &config.estimators {
                out.push((*est, Err(message.clone()), 0.0));
            }
            return out;
        }
    };
    for est in &config.estimators {
        let started = Instant::now();
        let cleaned: Result<DenseMatrix, String> = match est {
            Method::Mle => Ok(mle_clean_from(&d).cleaned),
            Method::Bbp => bbp_clean_from(&trip, &d, config.bbp_isotonic)
                .map(|r| r.cleaned)
                .map_err(|e| e.to_string()),
            Method::Cv => cv_clean_from(
                x_in,
                y_in,
                &d,
                config.cv_folds,
                config.cv_split_mode(sim),
                config.cv_isotonic,
            )
            .map(|r| r.cleaned)
            .map_err(|e| e.to_string()),
            Method::Oracle => oracle_clean_from(&d, oracle_target)
                .map(|r| r.cleaned)
                .map_err(|e| e.to_string()),
            Method::Neural => match nn {
                Some(model) => model
                    .clean_from(&trip, &d)
                    .map(|r| r.cleaned)
                    .map_err(|e| e.to_string()),
                None => Err("no neural model supplied".to_string()),
            },
        };
        let mse = cleaned
            .and_then(|c| frobenius_mse(&c, target).map_err(|e| e.to_string()));
        out.push((*est, mse, started.elapsed().as_secs_f64()));
    }
    out
}

/// Synthetic Table-style sweep: per simulation, build a fresh population,
/// sample an observation window, clean it with every estimator, and score
/// the Frobenius MSE against the population cross-correlation. Simulations
/// run in parallel on per-index RNG streams; output is deterministic given
/// the master seed.
pub fn run_synthetic_benchmark(
    config: &ExperimentConfig,
    nn: Option<&NeuralModel>,
) -> Result<Vec<ResultRow>, HarnessError> {
    config.validate_common()?;
    let benchmark = config
        .benchmark
        .ok_or_else(|| HarnessError::Config("synthetic run needs a benchmark".into()))?;
    if config.n_x < 1 || config.n_y < 1 || config.dt_in < 2 {
        return Err(HarnessError::Config("dimensions must be positive, dt_in >= 2".into()));
    }
    if config.estimators.contains(&Method::Neural) && nn.is_none() {
        return Err(HarnessError::Config("estimator set includes nn but no model given".into()));
    }
    let outcomes: Result<Vec<SimOutcome>, HarnessError> = (0..config.n_sim as u64)
        .into_par_iter()
        .map(|sim| {
            let mut rng = RngStream::new(config.master_seed, sim).rng();
            let model = benchmark.build(config.n_x, config.n_y, &mut rng)?;
            let target = model.cross_correlation();
            let (x, y) = sample_observations(&model, config.dt_in, &mut rng)?;
            Ok(score_estimators(config, sim, &x, &y, &target, &target, nn))
        })
        .collect();
    aggregate_rows(config, benchmark.kind().as_str(), &benchmark.param_label(), outcomes?)
}

/// A model paired with the last date its training data may touch.
#[derive(Debug, Clone)]
pub struct PeriodModel {
    pub train_end: NaiveDate,
    pub model: NeuralModel,
}

/// Walk-forward evaluation on a returns panel: every draw samples a
/// window (optionally day-shuffled, optionally with the market mode
/// removed), cleans the in-sample cross block, and scores against the
/// realized out-of-sample cross-correlation. The oracle uses that same
/// realized target. Models must be trained strictly before the windows
/// they are applied to.
pub fn run_real_eval(
    config: &ExperimentConfig,
    panel: &ReturnsPanel,
    models: &[PeriodModel],
) -> Result<Vec<ResultRow>, HarnessError> {
    config.validate_common()?;
    if config.estimators.contains(&Method::Neural) && models.is_empty() {
        return Err(HarnessError::Config("estimator set includes nn but no models given".into()));
    }
    let n_range = config.n_range.unwrap_or((config.n_x + config.n_y, config.n_x + config.n_y));
    let nu_default = config.n_x as f64 / (config.n_x + config.n_y) as f64;
    let nu_range = config.nu_range.unwrap_or((nu_default, nu_default));
    let dt_range = config.dt_in_range.unwrap_or((config.dt_in, config.dt_in));
    let start_bound = ExperimentConfig::parse_bound(&config.eval_start)?;
    let end_bound = ExperimentConfig::parse_bound(&config.eval_end)?;

    let outcomes: Result<Vec<SimOutcome>, HarnessError> = (0..config.n_sim as u64)
        .into_par_iter()
        .map(|sim| {
            let mut rng = RngStream::new(config.master_seed, sim).rng();
            let window = sample_window(
                panel,
                &mut rng,
                n_range,
                nu_range,
                dt_range,
                config.dt_out,
                start_bound,
                end_bound,
            )?;
            let (mut in_joint, mut oos_joint) = (window.in_joint.clone(), window.oos_joint.clone());
            if config.shuffle {
                let (a, b) = time_permutation_shuffle(&in_joint, &oos_joint, &mut rng);
                in_joint = a;
                oos_joint = b;
            }
            if config.mode_removal {
                in_joint = remove_market_mode(&in_joint);
                oos_joint = remove_market_mode(&oos_joint);
            }
            let shuffled = WindowSample { in_joint, oos_joint, ..window.clone() };
            let (x_in, y_in, x_out, y_out) = shuffled.split();
            // realized OOS cross-correlation is both the score target and
            // the oracle's target
            let target = match sample_cross_correlation(&x_out, &y_out) {
                Ok(t) => t.cxy,
                Err(e) => {
                    return Ok(config
                        .estimators
                        .iter()
                        .map(|est| (*est, Err(e.to_string()), 0.0))
                        .collect());
                }
            };
            let nn_model = select_model(models, window.start_date);
            Ok(score_estimators(config, sim, &x_in, &y_in, &target, &target, nn_model))
        })
        .collect();
    let condition = match (config.shuffle, config.mode_removal) {
        (false, false) => "panel",
        (true, false) => "panel_shuffled",
        (false, true) => "panel_demoded",
        (true, true) => "panel_shuffled_demoded",
    };
    let param = format!("n={}..{}", n_range.0, n_range.1);
    aggregate_rows(config, condition, &param, outcomes?)
}

/// Latest model whose training data ends strictly before the window start.
fn select_model(models: &[PeriodModel], window_start: NaiveDate) -> Option<&NeuralModel> {
    models
        .iter()
        .filter(|pm| pm.train_end < window_start)
        .max_by_key(|pm| pm.train_end)
        .map(|pm| &pm.model)
}

/// Draws panel training batches under the walk-forward anti-leakage rule:
/// every sample's out-of-sample target window ends on or before
/// `train_end`.
pub struct PanelSampler {
    panel: ReturnsPanel,
    config: TrainConfig,
    train_end: NaiveDate,
    rng: rand_chacha::ChaCha8Rng,
}

impl PanelSampler {
    pub fn new(
        panel: ReturnsPanel,
        config: TrainConfig,
        train_end: NaiveDate,
        stream: RngStream,
    ) -> Result<Self, HarnessError> {
        let usable = panel.lower_bound(train_end.succ_opt().unwrap_or(train_end));
        if usable < config.dt_in_range.0 + config.dt_out {
            return Err(HarnessError::Config(format!(
                "only {usable} panel days precede {train_end}; need at least {}",
                config.dt_in_range.0 + config.dt_out
            )));
        }
        Ok(Self { panel, config, train_end, rng: stream.rng() })
    }
}

impl BatchSampler for PanelSampler {
    fn next_batch(&mut self, batch_size: usize) -> Result<Vec<TrainSample>, NeuralError> {
        let (n_x, n_y, dt_in) = self.config.draw_shape(&mut self.rng);
        let n = n_x + n_y;
        let mut batch = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            let window = sample_window(
                &self.panel,
                &mut self.rng,
                (n, n),
                (n_x as f64 / n as f64, n_x as f64 / n as f64),
                (dt_in, dt_in),
                self.config.dt_out,
                None,
                Some(self.train_end),
            )
            .map_err(|e| NeuralError::Sampler(e.to_string()))?;
            debug_assert!(window.oos_start_date <= self.train_end);
            let (x_in, y_in, x_out, y_out) = window.split();
            let trip = sample_cross_correlation(&x_in, &y_in)?;
            let d = svd_thin(&trip.cxy)?;
            let proj = marginal_projections(&trip, &d)?;
            let tokens = build_tokens(&proj, trip.q_x(), trip.q_y())?;
            let target = sample_cross_correlation(&x_out, &y_out)?.cxy;
            batch.push(TrainSample::new(tokens, &d, &target)?);
        }
        Ok(batch)
    }
}

/// Formats a float with 6 significant digits (round half to even).
pub fn format_sig6(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else {
        format!("{v:.5e}")
    }
}

/// Serializes result rows to the plot-ready CSV schema.
pub fn results_to_csv(rows: &[ResultRow]) -> String {
    let mut out = String::from("estimator,condition,param,mean_mse,ci_low,ci_high,n_sim,seconds\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            row.estimator.as_str(),
            row.condition,
            row.param,
            format_sig6(row.mean_mse),
            format_sig6(row.ci_low),
            format_sig6(row.ci_high),
            row.n_sim,
            format_sig6(row.seconds),
        ));
    }
    out
}

/// The CSV with the non-deterministic wall-time column blanked, for
/// byte-identity comparisons across runs and thread counts.
pub fn results_to_csv_deterministic(rows: &[ResultRow]) -> String {
    let mut out = String::from("estimator,condition,param,mean_mse,ci_low,ci_high,n_sim\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            row.estimator.as_str(),
            row.condition,
            row.param,
            format_sig6(row.mean_mse),
            format_sig6(row.ci_low),
            format_sig6(row.ci_high),
            row.n_sim,
        ));
    }
    out
}
