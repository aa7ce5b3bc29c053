//! Forward evaluation with the intermediate state needed for
//! backpropagation through time.

use super::{
    affine_into, leaky_relu, matvec_add, sigmoid, DirLayout, ModelParameters, NeuralError,
    OutputMode, TokenSequence, TOKEN_DIM,
};

/// Per-direction LSTM activations, indexed by sequence position.
#[derive(Debug, Clone)]
pub(crate) struct DirCache {
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub o: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

impl DirCache {
    fn new(p: usize, hidden: usize) -> Self {
        let z = vec![0.0; p * hidden];
        Self { i: z.clone(), f: z.clone(), g: z.clone(), o: z.clone(), c: z.clone(), tanh_c: z.clone(), h: z }
    }
}

/// Everything the backward pass needs from one forward evaluation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub(crate) seq_len: usize,
    /// layer-1 pre-activations of the encoder, per stream
    pub(crate) enc_pre_x: Vec<f64>,
    pub(crate) enc_pre_y: Vec<f64>,
    /// fused embeddings z_k = e_x + e_y, p x embed_dim
    pub(crate) fused: Vec<f64>,
    pub(crate) lstm1: [DirCache; 2],
    /// concatenated layer-1 output, p x 2*H1
    pub(crate) seq1: Vec<f64>,
    pub(crate) lstm2: [DirCache; 2],
    /// concatenated layer-2 output, p x 2*H2
    pub(crate) seq2: Vec<f64>,
    /// head layer-1 pre-activations, p x head_hidden
    pub(crate) head_pre: Vec<f64>,
    pub(crate) delta: Vec<f64>,
}

/// Runs one LSTM direction over the sequence. `inputs` is seq-major
/// (p x input). `forward_dir` fixes the traversal order; the cache is
/// indexed by sequence position either way.
fn run_direction(
    params: &[f64],
    layout: &DirLayout,
    inputs: &[f64],
    input_dim: usize,
    hidden: usize,
    p: usize,
    forward_dir: bool,
    cache: &mut DirCache,
) {
    let w = &params[layout.w.clone()];
    let u = &params[layout.u.clone()];
    let b = &params[layout.b.clone()];
    let mut pre = vec![0.0f64; 4 * hidden];
    let mut h_prev = vec![0.0f64; hidden];
    let mut c_prev = vec![0.0f64; hidden];
    for step in 0..p {
        let pos = if forward_dir { step } else { p - 1 - step };
        let x = &inputs[pos * input_dim..(pos + 1) * input_dim];
        affine_into(&mut pre, w, x, b);
        matvec_add(&mut pre, u, &h_prev);
        let base = pos * hidden;
        for j in 0..hidden {
            let i_g = sigmoid(pre[j]);
            let f_g = sigmoid(pre[hidden + j]);
            let g_g = pre[2 * hidden + j].tanh();
            let o_g = sigmoid(pre[3 * hidden + j]);
            let c = f_g * c_prev[j] + i_g * g_g;
            let tc = c.tanh();
            let h = o_g * tc;
            cache.i[base + j] = i_g;
            cache.f[base + j] = f_g;
            cache.g[base + j] = g_g;
            cache.o[base + j] = o_g;
            cache.c[base + j] = c;
            cache.tanh_c[base + j] = tc;
            cache.h[base + j] = h;
            c_prev[j] = c;
            h_prev[j] = h;
        }
    }
}

fn check_finite(values: &[f64], layer: &'static str) -> Result<(), NeuralError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(NeuralError::NonFiniteActivation { layer })
    }
}

/// Forward pass returning the full activation cache.
pub fn forward_cached(
    params: &ModelParameters,
    tok: &TokenSequence,
) -> Result<ForwardCache, NeuralError> {
    let dims = &params.dims;
    let layout = dims.layout();
    let p = tok.seq_len();
    if tok.tokens_y.len() != p || tok.r > p {
        return Err(NeuralError::TokenShape(format!(
            "streams of length {} / {} with r = {}",
            p,
            tok.tokens_y.len(),
            tok.r
        )));
    }
    let eh = dims.encoder_hidden;
    let ed = dims.embed_dim;
    let h1 = dims.lstm1_hidden;
    let h2 = dims.lstm2_hidden;
    let hh = dims.head_hidden;

    // shared encoder on both streams, additive fusion
    let enc_w1 = &params.data[layout.enc_w1.clone()];
    let enc_b1 = &params.data[layout.enc_b1.clone()];
    let enc_w2 = &params.data[layout.enc_w2.clone()];
    let enc_b2 = &params.data[layout.enc_b2.clone()];
    let mut enc_pre_x = vec![0.0f64; p * eh];
    let mut enc_pre_y = vec![0.0f64; p * eh];
    let mut fused = vec![0.0f64; p * ed];
    let mut act = vec![0.0f64; eh];
    let mut emb = vec![0.0f64; ed];
    for k in 0..p {
        for (stream, (tokens, pre_buf)) in [
            (&tok.tokens_x, &mut enc_pre_x),
            (&tok.tokens_y, &mut enc_pre_y),
        ]
        .into_iter()
        .enumerate()
        {
            let token: &[f64; TOKEN_DIM] = &tokens[k];
            let pre = &mut pre_buf[k * eh..(k + 1) * eh];
            affine_into(pre, enc_w1, token, enc_b1);
            for (a, &z) in act.iter_mut().zip(pre.iter()) {
                *a = leaky_relu(z);
            }
            affine_into(&mut emb, enc_w2, &act, enc_b2);
            let out = &mut fused[k * ed..(k + 1) * ed];
            if stream == 0 {
                out.copy_from_slice(&emb);
            } else {
                for (z, &e) in out.iter_mut().zip(&emb) {
                    *z += e;
                }
            }
        }
    }
    check_finite(&fused, "encoder")?;

    // first bidirectional layer
    let mut lstm1 = [DirCache::new(p, h1), DirCache::new(p, h1)];
    run_direction(&params.data, &layout.lstm1[0], &fused, ed, h1, p, true, &mut lstm1[0]);
    run_direction(&params.data, &layout.lstm1[1], &fused, ed, h1, p, false, &mut lstm1[1]);
    let mut seq1 = vec![0.0f64; p * 2 * h1];
    for k in 0..p {
        seq1[k * 2 * h1..k * 2 * h1 + h1].copy_from_slice(&lstm1[0].h[k * h1..(k + 1) * h1]);
        seq1[k * 2 * h1 + h1..(k + 1) * 2 * h1]
            .copy_from_slice(&lstm1[1].h[k * h1..(k + 1) * h1]);
    }
    check_finite(&seq1, "lstm1")?;

    // second bidirectional layer over the concatenated directions
    let mut lstm2 = [DirCache::new(p, h2), DirCache::new(p, h2)];
    run_direction(&params.data, &layout.lstm2[0], &seq1, 2 * h1, h2, p, true, &mut lstm2[0]);
    run_direction(&params.data, &layout.lstm2[1], &seq1, 2 * h1, h2, p, false, &mut lstm2[1]);
    let mut seq2 = vec![0.0f64; p * 2 * h2];
    for k in 0..p {
        seq2[k * 2 * h2..k * 2 * h2 + h2].copy_from_slice(&lstm2[0].h[k * h2..(k + 1) * h2]);
        seq2[k * 2 * h2 + h2..(k + 1) * 2 * h2]
            .copy_from_slice(&lstm2[1].h[k * h2..(k + 1) * h2]);
    }
    check_finite(&seq2, "lstm2")?;

    // pointwise head
    let head_w1 = &params.data[layout.head_w1.clone()];
    let head_b1 = &params.data[layout.head_b1.clone()];
    let head_w2 = &params.data[layout.head_w2.clone()];
    let head_b2 = params.data[layout.head_b2.clone()][0];
    let mut head_pre = vec![0.0f64; p * hh];
    let mut delta = vec![0.0f64; p];
    let mut head_act = vec![0.0f64; hh];
    for k in 0..p {
        let pre = &mut head_pre[k * hh..(k + 1) * hh];
        affine_into(pre, head_w1, &seq2[k * 2 * h2..(k + 1) * 2 * h2], head_b1);
        for (a, &z) in head_act.iter_mut().zip(pre.iter()) {
            *a = leaky_relu(z);
        }
        delta[k] = head_b2 + crate::linalg::dot(head_w2, &head_act);
    }
    check_finite(&delta, "head")?;

    Ok(ForwardCache {
        seq_len: p,
        enc_pre_x,
        enc_pre_y,
        fused,
        lstm1,
        seq1,
        lstm2,
        seq2,
        head_pre,
        delta,
    })
}

/// Residual corrections (first r kept) and the cleaned singular values.
pub fn forward(
    params: &ModelParameters,
    output_mode: OutputMode,
    tok: &TokenSequence,
) -> Result<(Vec<f64>, Vec<f64>), NeuralError> {
    let cache = forward_cached(params, tok)?;
    let delta: Vec<f64> = cache.delta[..tok.r].to_vec();
    let s_hat = tok.s_hat();
    let s_clean = apply_output(&s_hat, &delta, output_mode);
    Ok((delta, s_clean))
}

pub(crate) fn apply_output(s_hat: &[f64], delta: &[f64], mode: OutputMode) -> Vec<f64> {
    match mode {
        OutputMode::Additive => s_hat.iter().zip(delta).map(|(s, d)| s + d).collect(),
        OutputMode::BoundedMultiplicative => {
            s_hat.iter().zip(delta).map(|(s, d)| s * sigmoid(*d)).collect()
        }
    }
}
