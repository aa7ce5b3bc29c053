//! Loss, batch gradients, samplers, and the training loop.

use super::adam::{adam_step, AdamState};
use super::backward::backprop_sample;
use super::forward::{apply_output, forward_cached};
use super::{
    build_tokens, sigmoid, ModelDims, ModelParameters, NeuralError, NeuralModel, OutputMode,
    TokenSequence,
};
use crate::estimators::{marginal_projections, sample_cross_correlation};
use crate::linalg::{DenseMatrix, SpectralDecomposition};
use crate::synthgen::{sample_observations, BenchmarkSpec, RngStream, TailLaw};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// One supervised example: tokens, the empirical spectrum, and the target
/// reduced to the rotated basis (`s_star` plus the basis-orthogonal
/// residual), which is all the Frobenius loss needs.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub tokens: TokenSequence,
    pub s_hat: Vec<f64>,
    pub s_star: Vec<f64>,
    /// `|target|_F^2 - sum s_star^2`: target energy outside the empirical basis.
    pub basis_residual: f64,
    pub n_x: usize,
    pub n_y: usize,
}

impl TrainSample {
    pub fn new(
        tokens: TokenSequence,
        d: &SpectralDecomposition,
        target: &DenseMatrix,
    ) -> Result<Self, NeuralError> {
        let n_x = d.u.rows();
        let n_y = d.v.rows();
        if target.rows() != n_x || target.cols() != n_y {
            return Err(NeuralError::ShapeMismatch(format!(
                "target {}x{} vs decomposition {}x{}",
                target.rows(),
                target.cols(),
                n_x,
                n_y
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
        let energy = target.data().iter().map(|v| v * v).sum::<f64>();
        let basis_residual = energy - s_star.iter().map(|s| s * s).sum::<f64>();
        Ok(Self { tokens, s_hat: d.s.clone(), s_star, basis_residual, n_x, n_y })
    }
}

fn sample_loss_terms(
    params: &ModelParameters,
    mode: OutputMode,
    sample: &TrainSample,
) -> Result<(f64, super::forward::ForwardCache, Vec<f64>), NeuralError> {
    let cache = forward_cached(params, &sample.tokens)?;
    let r = sample.tokens.r;
    let delta = &cache.delta[..r];
    let s_clean = apply_output(&sample.s_hat, delta, mode);
    let norm = (sample.n_x * sample.n_y) as f64;
    let mut loss = sample.basis_residual;
    for (s, t) in s_clean.iter().zip(&sample.s_star) {
        loss += (s - t) * (s - t);
    }
    Ok((loss / norm, cache, s_clean))
}

/// Mean squared Frobenius loss of the batch, computed in the rotated basis:
/// `(1/(n_x n_y)) [ sum_k (s_clean_k - s_star_k)^2 + basis residual ]`,
/// averaged over samples. Identical to the full-matrix Frobenius form.
pub fn loss(
    params: &ModelParameters,
    mode: OutputMode,
    batch: &[TrainSample],
) -> Result<f64, NeuralError> {
    let mut acc = 0.0;
    for sample in batch {
        acc += sample_loss_terms(params, mode, sample)?.0;
    }
    Ok(acc / batch.len().max(1) as f64)
}

/// Batch-mean loss and its exact gradient w.r.t. every parameter.
pub fn loss_and_gradient(
    params: &ModelParameters,
    mode: OutputMode,
    batch: &[TrainSample],
) -> Result<(f64, Vec<f64>), NeuralError> {
    let n = batch.len().max(1) as f64;
    // per-sample gradients in parallel, reduced in deterministic order
    let partials: Result<Vec<(f64, Vec<f64>)>, NeuralError> = batch
        .par_iter()
        .map(|sample| {
            let (sample_loss, cache, s_clean) = sample_loss_terms(params, mode, sample)?;
            let r = sample.tokens.r;
            let p = cache.seq_len;
            let norm = (sample.n_x * sample.n_y) as f64;
            let mut d_delta = vec![0.0f64; p];
            for k in 0..r {
                let d_s = 2.0 * (s_clean[k] - sample.s_star[k]) / norm;
                d_delta[k] = match mode {
                    OutputMode::Additive => d_s,
                    OutputMode::BoundedMultiplicative => {
                        let sig = sigmoid(cache.delta[k]);
                        d_s * sample.s_hat[k] * sig * (1.0 - sig)
                    }
                };
            }
            let mut grad = vec![0.0f64; params.data.len()];
            backprop_sample(params, &sample.tokens, &cache, &d_delta, &mut grad)?;
            Ok((sample_loss, grad))
        })
        .collect();
    let partials = partials?;
    let mut total_loss = 0.0;
    let mut grad = vec![0.0f64; params.data.len()];
    for (sample_loss, sample_grad) in partials {
        total_loss += sample_loss / n;
        for (g, s) in grad.iter_mut().zip(&sample_grad) {
            *g += s / n;
        }
    }
    Ok((total_loss, grad))
}

/// Gradient of the batch-mean loss; the flat vector mirrors the parameter
/// layout exactly.
pub fn backward(
    params: &ModelParameters,
    mode: OutputMode,
    batch: &[TrainSample],
) -> Result<Vec<f64>, NeuralError> {
    Ok(loss_and_gradient(params, mode, batch)?.1)
}

/// Source of training micro-batches. One call returns `batch_size` samples
/// sharing a single problem shape; shapes vary across calls.
pub trait BatchSampler {
    fn next_batch(&mut self, batch_size: usize) -> Result<Vec<TrainSample>, NeuralError>;
}

/// Training hyperparameters and sampling ranges.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub decay_per_epoch: f64,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    pub accumulation_steps: usize,
    /// total dimension n = n_x + n_y, drawn uniformly per batch
    pub n_range: (usize, usize),
    /// relative dimension nu = n_x / n, drawn uniformly per batch
    pub nu_range: (f64, f64),
    /// in-sample window length, drawn uniformly per batch
    pub dt_in_range: (usize, usize),
    /// out-of-sample target window length (panel training)
    pub dt_out: usize,
    pub master_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            decay_per_epoch: 0.99,
            epochs: 50,
            steps_per_epoch: 500,
            batch_size: 32,
            accumulation_steps: 4,
            n_range: (50, 500),
            nu_range: (0.05, 0.95),
            dt_in_range: (200, 1200),
            dt_out: 240,
            master_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NeuralError> {
        if self.accumulation_steps < 1 || self.batch_size < 1 {
            return Err(NeuralError::Sampler(
                "batch_size and accumulation_steps must be at least 1".into(),
            ));
        }
        if self.n_range.0 < 2 || self.n_range.0 > self.n_range.1 {
            return Err(NeuralError::Sampler(format!(
                "invalid n_range {:?}",
                self.n_range
            )));
        }
        if !(self.nu_range.0 > 0.0 && self.nu_range.1 < 1.0 && self.nu_range.0 <= self.nu_range.1)
        {
            return Err(NeuralError::Sampler(format!(
                "invalid nu_range {:?}",
                self.nu_range
            )));
        }
        if self.dt_in_range.0 < 2 || self.dt_in_range.0 > self.dt_in_range.1 {
            return Err(NeuralError::Sampler(format!(
                "invalid dt_in_range {:?}",
                self.dt_in_range
            )));
        }
        Ok(())
    }

    /// Draws (n_x, n_y, dt_in) for one micro-batch.
    pub fn draw_shape(&self, rng: &mut ChaCha8Rng) -> (usize, usize, usize) {
        let n = rng.random_range(self.n_range.0..=self.n_range.1);
        let nu = rng.random_range(self.nu_range.0..=self.nu_range.1);
        let n_x = ((nu * n as f64).ceil() as usize).clamp(1, n - 1);
        let dt = rng.random_range(self.dt_in_range.0..=self.dt_in_range.1);
        (n_x, n - n_x, dt)
    }
}

/// Benchmark family and per-instance parameter range used by the
/// synthetic sampler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTrainSpec {
    pub benchmark: SyntheticFamily,
    /// parameter drawn uniformly per instance (spike fraction, tail
    /// exponent, or mode strength)
    pub param_range: (f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticFamily {
    FiniteRank,
    HeavyBulk,
    WhiteHeavy,
    Mode,
}

/// On-the-fly generator of synthetic training batches: every sample is a
/// fresh population and observation window, so the stream never repeats.
pub struct SyntheticSampler {
    config: TrainConfig,
    spec: SyntheticTrainSpec,
    rng: ChaCha8Rng,
}

impl SyntheticSampler {
    pub fn new(config: TrainConfig, spec: SyntheticTrainSpec, stream: RngStream) -> Self {
        Self { config, spec, rng: stream.rng() }
    }
}

impl BatchSampler for SyntheticSampler {
    fn next_batch(&mut self, batch_size: usize) -> Result<Vec<TrainSample>, NeuralError> {
        let (n_x, n_y, dt) = self.config.draw_shape(&mut self.rng);
        let mut batch = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            let param = self
                .rng
                .random_range(self.spec.param_range.0..=self.spec.param_range.1);
            let bench = match self.spec.benchmark {
                SyntheticFamily::FiniteRank => BenchmarkSpec::FiniteRank { xi: param, sigma2: 0.5 },
                SyntheticFamily::HeavyBulk => {
                    BenchmarkSpec::HeavyBulk { tail: TailLaw::StudentT(param) }
                }
                SyntheticFamily::WhiteHeavy => {
                    BenchmarkSpec::WhiteHeavy { tail: TailLaw::StudentT(param) }
                }
                SyntheticFamily::Mode => BenchmarkSpec::Mode { m: param },
            };
            let model = bench
                .build(n_x, n_y, &mut self.rng)
                .map_err(|e| NeuralError::Sampler(e.to_string()))?;
            let target = model.cross_correlation();
            let (x, y) = sample_observations(&model, dt, &mut self.rng)
                .map_err(|e| NeuralError::Sampler(e.to_string()))?;
            let trip = sample_cross_correlation(&x, &y)?;
            let d = crate::linalg::svd_thin(&trip.cxy)?;
            let proj = marginal_projections(&trip, &d)?;
            let tokens = build_tokens(&proj, trip.q_x(), trip.q_y())?;
            batch.push(TrainSample::new(tokens, &d, &target)?);
        }
        Ok(batch)
    }
}

/// Per-epoch trace of the training loop.
#[derive(Debug, Clone, Default)]
pub struct TrainStats {
    pub epoch_learning_rates: Vec<f64>,
    pub epoch_mean_loss: Vec<f64>,
}

/// Trains the paper architecture with the additive output head.
pub fn train<S: BatchSampler>(
    config: &TrainConfig,
    sampler: &mut S,
) -> Result<(NeuralModel, TrainStats), NeuralError> {
    train_with(config, sampler, ModelDims::default(), OutputMode::Additive)
}

/// Training loop: `epochs x steps_per_epoch` optimizer updates, each
/// averaging gradients over `accumulation_steps` micro-batches (equal
/// weight per micro-batch, shapes may differ); the learning rate is
/// multiplied by `decay_per_epoch` after each epoch.
pub fn train_with<S: BatchSampler>(
    config: &TrainConfig,
    sampler: &mut S,
    dims: ModelDims,
    output_mode: OutputMode,
) -> Result<(NeuralModel, TrainStats), NeuralError> {
    config.validate()?;
    let mut init_rng = RngStream::new(config.master_seed, INIT_STREAM).rng();
    let mut params = ModelParameters::init(dims, &mut init_rng);
    let mut adam = AdamState::new(params.data.len());
    let mut lr = config.learning_rate;
    let mut stats = TrainStats::default();
    let accum = config.accumulation_steps;
    for _epoch in 0..config.epochs {
        let mut epoch_loss = 0.0;
        for _step in 0..config.steps_per_epoch {
            let mut grad_acc = vec![0.0f64; params.data.len()];
            let mut step_loss = 0.0;
            for _ in 0..accum {
                let batch = sampler.next_batch(config.batch_size)?;
                let (batch_loss, grad) = loss_and_gradient(&params, output_mode, &batch)?;
                for (g, b) in grad_acc.iter_mut().zip(&grad) {
                    *g += b / accum as f64;
                }
                step_loss += batch_loss / accum as f64;
            }
            adam_step(&mut params.data, &grad_acc, &mut adam, lr);
            epoch_loss += step_loss;
        }
        stats.epoch_learning_rates.push(lr);
        stats
            .epoch_mean_loss
            .push(epoch_loss / config.steps_per_epoch.max(1) as f64);
        lr *= config.decay_per_epoch;
    }
    let model = NeuralModel {
        params,
        output_mode,
        train_config: Some(config.clone()),
    };
    Ok((model, stats))
}

/// Stream id reserved for parameter initialization.
pub const INIT_STREAM: u64 = u64::MAX;
