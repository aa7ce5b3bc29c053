//! Two-stream singular-value cleaning network.
//!
//! Per-index tokens built from the padded spectrum and marginal
//! projections pass through a shared token-wise encoder, the two streams
//! are fused additively, a two-layer bidirectional LSTM attaches global
//! spectral context to every index, and a pointwise head emits one
//! residual correction per retained singular value. Backpropagation,
//! the optimizer, and the training loop are implemented here directly;
//! no external autodiff is involved.

mod adam;
mod backward;
mod forward;
mod io;
mod train;

pub use adam::{adam_step, AdamState};
pub use forward::{forward, forward_cached, ForwardCache};
pub use io::{load_model, save_model, FORMAT_VERSION, MODEL_MAGIC};
pub use train::{
    backward, loss, loss_and_gradient, train, train_with, BatchSampler, SyntheticFamily,
    SyntheticSampler, SyntheticTrainSpec, TrainConfig, TrainSample, TrainStats,
};

use crate::estimators::{
    marginal_projections, reconstruct_rie, CorrelationTriplet, EstimatorError, Method,
    ProjectedSpectrum, ShrinkageResult,
};
use crate::linalg::{svd_thin, LinalgError, SpectralDecomposition};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::ops::Range;
use thiserror::Error;

/// Width of one input token: [marginal projection, singular value, aspect ratio].
pub const TOKEN_DIM: usize = 3;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("token sequence is inconsistent: {0}")]
    TokenShape(String),
    #[error("non-finite activation in {layer}")]
    NonFiniteActivation { layer: &'static str },
    #[error("non-finite gradient in {layer}")]
    NonFiniteGradient { layer: &'static str },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("batch sampler failed: {0}")]
    Sampler(String),
    #[error("model file corrupt: {0}")]
    Format(String),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Stream-specific tokens, one row per padded index.
///
/// Row k of the X stream is `[gamma_x_pad[k], s_pad[k], q_x]`, row k of the
/// Y stream is `[gamma_y_pad[k], s_pad[k], q_y]`; the singular-value slot
/// is shared between the streams.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub tokens_x: Vec<[f64; TOKEN_DIM]>,
    pub tokens_y: Vec<[f64; TOKEN_DIM]>,
    pub r: usize,
    pub n_x: usize,
    pub n_y: usize,
}

impl TokenSequence {
    pub fn seq_len(&self) -> usize {
        self.tokens_x.len()
    }

    /// Empirical singular values, read back from the shared token slot.
    pub fn s_hat(&self) -> Vec<f64> {
        self.tokens_x[..self.r].iter().map(|t| t[1]).collect()
    }
}

/// Assembles the two token streams from a padded projected spectrum.
pub fn build_tokens(
    proj: &ProjectedSpectrum,
    q_x: f64,
    q_y: f64,
) -> Result<TokenSequence, NeuralError> {
    let p = proj.n_x.max(proj.n_y);
    if proj.s_pad.len() != p || proj.gamma_x_pad.len() != p || proj.gamma_y_pad.len() != p {
        return Err(NeuralError::TokenShape(format!(
            "padded arrays must have length {p}, got {}/{}/{}",
            proj.s_pad.len(),
            proj.gamma_x_pad.len(),
            proj.gamma_y_pad.len()
        )));
    }
    let tokens_x =
        (0..p).map(|k| [proj.gamma_x_pad[k], proj.s_pad[k], q_x]).collect();
    let tokens_y =
        (0..p).map(|k| [proj.gamma_y_pad[k], proj.s_pad[k], q_y]).collect();
    Ok(TokenSequence { tokens_x, tokens_y, r: proj.r, n_x: proj.n_x, n_y: proj.n_y })
}

/// Layer widths of the network. The same parameter tree evaluates on any
/// problem size; these only fix the learnable capacity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub encoder_hidden: usize,
    pub embed_dim: usize,
    pub lstm1_hidden: usize,
    pub lstm2_hidden: usize,
    pub head_hidden: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self { encoder_hidden: 16, embed_dim: 2, lstm1_hidden: 128, lstm2_hidden: 64, head_hidden: 252 }
    }
}

impl ModelDims {
    pub fn encoder_count(&self) -> usize {
        self.encoder_hidden * TOKEN_DIM
            + self.encoder_hidden
            + self.embed_dim * self.encoder_hidden
            + self.embed_dim
    }

    /// One bias vector per gate; gates ordered input, forget, cell, output.
    fn lstm_dir_count(input: usize, hidden: usize) -> usize {
        4 * hidden * input + 4 * hidden * hidden + 4 * hidden
    }

    pub fn lstm1_count(&self) -> usize {
        2 * Self::lstm_dir_count(self.embed_dim, self.lstm1_hidden)
    }

    pub fn lstm2_count(&self) -> usize {
        2 * Self::lstm_dir_count(2 * self.lstm1_hidden, self.lstm2_hidden)
    }

    pub fn head_count(&self) -> usize {
        self.head_hidden * 2 * self.lstm2_hidden + self.head_hidden + self.head_hidden + 1
    }

    pub fn parameter_count(&self) -> usize {
        self.encoder_count() + self.lstm1_count() + self.lstm2_count() + self.head_count()
    }

    pub(crate) fn layout(&self) -> Layout {
        Layout::new(self)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct DirLayout {
    pub w: Range<usize>,
    pub u: Range<usize>,
    pub b: Range<usize>,
}

/// Offsets of every parameter block in the flat vector; this order is also
/// the serialized order of the model file.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub enc_w1: Range<usize>,
    pub enc_b1: Range<usize>,
    pub enc_w2: Range<usize>,
    pub enc_b2: Range<usize>,
    pub lstm1: [DirLayout; 2],
    pub lstm2: [DirLayout; 2],
    pub head_w1: Range<usize>,
    pub head_b1: Range<usize>,
    pub head_w2: Range<usize>,
    pub head_b2: Range<usize>,
    pub total: usize,
}

impl Layout {
    fn new(dims: &ModelDims) -> Self {
        let mut cursor = 0usize;
        let mut take = |len: usize| {
            let r = cursor..cursor + len;
            cursor += len;
            r
        };
        let enc_w1 = take(dims.encoder_hidden * TOKEN_DIM);
        let enc_b1 = take(dims.encoder_hidden);
        let enc_w2 = take(dims.embed_dim * dims.encoder_hidden);
        let enc_b2 = take(dims.embed_dim);
        let mut lstm = |input: usize, hidden: usize| DirLayout {
            w: take(4 * hidden * input),
            u: take(4 * hidden * hidden),
            b: take(4 * hidden),
        };
        let lstm1 = [lstm(dims.embed_dim, dims.lstm1_hidden), lstm(dims.embed_dim, dims.lstm1_hidden)];
        let lstm2 = [
            lstm(2 * dims.lstm1_hidden, dims.lstm2_hidden),
            lstm(2 * dims.lstm1_hidden, dims.lstm2_hidden),
        ];
        let head_w1 = take(dims.head_hidden * 2 * dims.lstm2_hidden);
        let head_b1 = take(dims.head_hidden);
        let head_w2 = take(dims.head_hidden);
        let head_b2 = take(1);
        Layout {
            enc_w1,
            enc_b1,
            enc_w2,
            enc_b2,
            lstm1,
            lstm2,
            head_w1,
            head_b1,
            head_w2,
            head_b2,
            total: cursor,
        }
    }
}

/// How the head's residual turns into a cleaned singular value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OutputMode {
    /// `s_clean = s_hat + delta`; values may exceed the empirical ones or
    /// go negative.
    #[default]
    Additive,
    /// `s_clean = s_hat * sigmoid(delta)`, a bounded multiplicative
    /// correction confined to [0, s_hat].
    BoundedMultiplicative,
}

/// Flat parameter vector plus the layer widths that give it meaning.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    pub dims: ModelDims,
    pub data: Vec<f64>,
}

impl ModelParameters {
    pub fn zeros(dims: ModelDims) -> Self {
        assert_eq!(dims.layout().total, dims.parameter_count());
        Self { data: vec![0.0; dims.parameter_count()], dims }
    }

    /// Weights uniform in +-1/sqrt(fan_in); biases zero except the forget
    /// gate at 1.0; the head's final affine layer starts at zero so the
    /// initial network reproduces the empirical spectrum exactly.
    pub fn init(dims: ModelDims, rng: &mut ChaCha8Rng) -> Self {
        let layout = dims.layout();
        let mut p = Self::zeros(dims);
        let mut fill = |range: &Range<usize>, fan_in: usize, data: &mut Vec<f64>| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in data[range.clone()].iter_mut() {
                *v = rng.random_range(-bound..bound);
            }
        };
        fill(&layout.enc_w1, TOKEN_DIM, &mut p.data);
        fill(&layout.enc_w2, dims.encoder_hidden, &mut p.data);
        for (dir_layout, input, hidden) in [
            (&layout.lstm1[0], dims.embed_dim, dims.lstm1_hidden),
            (&layout.lstm1[1], dims.embed_dim, dims.lstm1_hidden),
            (&layout.lstm2[0], 2 * dims.lstm1_hidden, dims.lstm2_hidden),
            (&layout.lstm2[1], 2 * dims.lstm1_hidden, dims.lstm2_hidden),
        ] {
            fill(&dir_layout.w, input, &mut p.data);
            fill(&dir_layout.u, hidden, &mut p.data);
            // forget-gate bias starts at 1.0
            let b = dir_layout.b.clone();
            for v in p.data[b.start + hidden..b.start + 2 * hidden].iter_mut() {
                *v = 1.0;
            }
        }
        fill(&layout.head_w1, 2 * dims.lstm2_hidden, &mut p.data);
        // head_w2 and head_b2 stay zero
        p
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Total number of learnable scalars in the parameter tree.
pub fn count_parameters(params: &ModelParameters) -> usize {
    debug_assert_eq!(params.data.len(), params.dims.parameter_count());
    params.data.len()
}

/// A trained (or freshly initialized) cleaning network.
#[derive(Debug, Clone)]
pub struct NeuralModel {
    pub params: ModelParameters,
    pub output_mode: OutputMode,
    /// Training configuration echo, carried into the model file header.
    pub train_config: Option<train::TrainConfig>,
}

impl NeuralModel {
    pub fn new(params: ModelParameters, output_mode: OutputMode) -> Self {
        Self { params, output_mode, train_config: None }
    }

    pub fn init(dims: ModelDims, rng: &mut ChaCha8Rng) -> Self {
        Self::new(ModelParameters::init(dims, rng), OutputMode::Additive)
    }

    /// Cleans a correlation triplet: tokens from the projected spectrum,
    /// one forward pass, reconstruction in the empirical basis.
    pub fn clean(&self, trip: &CorrelationTriplet) -> Result<ShrinkageResult, NeuralError> {
        let d = svd_thin(&trip.cxy)?;
        self.clean_from(trip, &d)
    }

    /// [`NeuralModel::clean`] with a precomputed decomposition of `trip.cxy`.
    pub fn clean_from(
        &self,
        trip: &CorrelationTriplet,
        d: &SpectralDecomposition,
    ) -> Result<ShrinkageResult, NeuralError> {
        let proj = marginal_projections(trip, d)?;
        let tok = build_tokens(&proj, trip.q_x(), trip.q_y())?;
        let (_, s_clean) = forward(&self.params, self.output_mode, &tok)?;
        let cleaned = reconstruct_rie(d, &s_clean)?;
        Ok(ShrinkageResult { method: Method::Neural, s_clean, cleaned })
    }
}

#[inline]
pub(crate) fn leaky_relu(x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        0.01 * x
    }
}

#[inline]
pub(crate) fn leaky_relu_grad(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        0.01
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `out = W x + b` with row-major `w` of shape out.len() x x.len().
#[inline]
pub(crate) fn affine_into(out: &mut [f64], w: &[f64], x: &[f64], b: &[f64]) {
    debug_assert_eq!(w.len(), out.len() * x.len());
    debug_assert_eq!(b.len(), out.len());
    for (row, (o, bias)) in out.iter_mut().zip(b).enumerate() {
        *o = bias + crate::linalg::dot(&w[row * x.len()..(row + 1) * x.len()], x);
    }
}

/// `out += W x`.
#[inline]
pub(crate) fn matvec_add(out: &mut [f64], w: &[f64], x: &[f64]) {
    debug_assert_eq!(w.len(), out.len() * x.len());
    for (row, o) in out.iter_mut().enumerate() {
        *o += crate::linalg::dot(&w[row * x.len()..(row + 1) * x.len()], x);
    }
}

/// `out += W^T y` for row-major `w` of shape y.len() x out.len().
#[inline]
pub(crate) fn matvec_t_add(out: &mut [f64], w: &[f64], y: &[f64]) {
    debug_assert_eq!(w.len(), y.len() * out.len());
    for (row, &yi) in y.iter().enumerate() {
        if yi == 0.0 {
            continue;
        }
        let w_row = &w[row * out.len()..(row + 1) * out.len()];
        for (o, &wij) in out.iter_mut().zip(w_row) {
            *o += yi * wij;
        }
    }
}

/// `grad_w += y (outer) x` for row-major grad of shape y.len() x x.len().
#[inline]
pub(crate) fn outer_add(grad_w: &mut [f64], y: &[f64], x: &[f64]) {
    debug_assert_eq!(grad_w.len(), y.len() * x.len());
    for (row, &yi) in y.iter().enumerate() {
        if yi == 0.0 {
            continue;
        }
        let g_row = &mut grad_w[row * x.len()..(row + 1) * x.len()];
        for (g, &xj) in g_row.iter_mut().zip(x) {
            *g += yi * xj;
        }
    }
}
