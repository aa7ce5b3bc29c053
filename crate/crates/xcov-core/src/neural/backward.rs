//! Exact reverse-mode gradients: head, both bidirectional LSTM layers
//! (full backpropagation through time), additive fusion, shared encoder.

use super::forward::{DirCache, ForwardCache};
use super::{
    leaky_relu, leaky_relu_grad, matvec_t_add, outer_add, DirLayout, ModelParameters,
    NeuralError, TokenSequence,
};

/// One LSTM direction, reverse pass. `d_h_out` carries the loss gradient
/// w.r.t. this direction's hidden state at every sequence position;
/// weight gradients go into `grad`, input gradients accumulate into
/// `d_inputs`.
#[allow(clippy::too_many_arguments)]
fn backprop_direction(
    params: &[f64],
    layout: &DirLayout,
    inputs: &[f64],
    input_dim: usize,
    hidden: usize,
    p: usize,
    forward_dir: bool,
    cache: &DirCache,
    d_h_out: &[f64],
    grad: &mut [f64],
    d_inputs: &mut [f64],
) {
    let w = &params[layout.w.clone()];
    let u = &params[layout.u.clone()];
    // the three parameter blocks of one direction are contiguous
    let block = &mut grad[layout.w.start..layout.b.end];
    let (gw, tail) = block.split_at_mut(layout.w.len());
    let (gu, gb) = tail.split_at_mut(layout.u.len());

    let mut d_h_carry = vec![0.0f64; hidden];
    let mut d_c_carry = vec![0.0f64; hidden];
    let mut d_pre = vec![0.0f64; 4 * hidden];
    for step in (0..p).rev() {
        let pos = if forward_dir { step } else { p - 1 - step };
        let prev_pos = if step == 0 {
            None
        } else if forward_dir {
            Some(pos - 1)
        } else {
            Some(pos + 1)
        };
        let base = pos * hidden;
        for j in 0..hidden {
            let i_g = cache.i[base + j];
            let f_g = cache.f[base + j];
            let g_g = cache.g[base + j];
            let o_g = cache.o[base + j];
            let tc = cache.tanh_c[base + j];
            let c_prev = prev_pos.map_or(0.0, |prev| cache.c[prev * hidden + j]);

            let dh = d_h_out[base + j] + d_h_carry[j];
            let dc = d_c_carry[j] + dh * o_g * (1.0 - tc * tc);
            let d_o = dh * tc;
            let d_i = dc * g_g;
            let d_g = dc * i_g;
            let d_f = dc * c_prev;

            d_pre[j] = d_i * i_g * (1.0 - i_g);
            d_pre[hidden + j] = d_f * f_g * (1.0 - f_g);
            d_pre[2 * hidden + j] = d_g * (1.0 - g_g * g_g);
            d_pre[3 * hidden + j] = d_o * o_g * (1.0 - o_g);

            d_c_carry[j] = dc * f_g;
        }
        let x = &inputs[pos * input_dim..(pos + 1) * input_dim];
        outer_add(gw, &d_pre, x);
        if let Some(prev) = prev_pos {
            outer_add(gu, &d_pre, &cache.h[prev * hidden..(prev + 1) * hidden]);
        }
        for (b, &d) in gb.iter_mut().zip(&d_pre) {
            *b += d;
        }
        matvec_t_add(&mut d_inputs[pos * input_dim..(pos + 1) * input_dim], w, &d_pre);
        d_h_carry.iter_mut().for_each(|v| *v = 0.0);
        matvec_t_add(&mut d_h_carry, u, &d_pre);
    }
}

/// Accumulates into `grad` the gradient of a scalar objective whose
/// derivative w.r.t. the per-index residuals is `d_delta` (zero beyond the
/// retained rank). `cache` must come from `forward_cached` on the same
/// parameters and tokens.
pub(crate) fn backprop_sample(
    params: &ModelParameters,
    tok: &TokenSequence,
    cache: &ForwardCache,
    d_delta: &[f64],
    grad: &mut [f64],
) -> Result<(), NeuralError> {
    let dims = &params.dims;
    let layout = dims.layout();
    let p = cache.seq_len;
    debug_assert_eq!(d_delta.len(), p);
    debug_assert_eq!(grad.len(), params.data.len());
    let eh = dims.encoder_hidden;
    let ed = dims.embed_dim;
    let h1 = dims.lstm1_hidden;
    let h2 = dims.lstm2_hidden;
    let hh = dims.head_hidden;

    // head backward
    let head_w1 = &params.data[layout.head_w1.clone()];
    let head_w2 = &params.data[layout.head_w2.clone()];
    let mut d_seq2 = vec![0.0f64; p * 2 * h2];
    {
        let mut act = vec![0.0f64; hh];
        let mut d_pre = vec![0.0f64; hh];
        for k in 0..p {
            let dd = d_delta[k];
            if dd == 0.0 {
                continue;
            }
            let pre = &cache.head_pre[k * hh..(k + 1) * hh];
            for (a, &z) in act.iter_mut().zip(pre) {
                *a = leaky_relu(z);
            }
            grad[layout.head_b2.start] += dd;
            let gw2 = &mut grad[layout.head_w2.clone()];
            for (g, &a) in gw2.iter_mut().zip(&act) {
                *g += dd * a;
            }
            for ((dp, &w2), &z) in d_pre.iter_mut().zip(head_w2).zip(pre) {
                *dp = dd * w2 * leaky_relu_grad(z);
            }
            let seq2_k = &cache.seq2[k * 2 * h2..(k + 1) * 2 * h2];
            outer_add(&mut grad[layout.head_w1.clone()], &d_pre, seq2_k);
            for (g, &d) in grad[layout.head_b1.clone()].iter_mut().zip(&d_pre) {
                *g += d;
            }
            matvec_t_add(&mut d_seq2[k * 2 * h2..(k + 1) * 2 * h2], head_w1, &d_pre);
        }
    }

    // second LSTM layer: split the concatenated gradient per direction
    let mut d_h2 = [vec![0.0f64; p * h2], vec![0.0f64; p * h2]];
    for k in 0..p {
        d_h2[0][k * h2..(k + 1) * h2]
            .copy_from_slice(&d_seq2[k * 2 * h2..k * 2 * h2 + h2]);
        d_h2[1][k * h2..(k + 1) * h2]
            .copy_from_slice(&d_seq2[k * 2 * h2 + h2..(k + 1) * 2 * h2]);
    }
    let mut d_seq1 = vec![0.0f64; p * 2 * h1];
    for (dir, forward_dir) in [(0usize, true), (1usize, false)] {
        backprop_direction(
            &params.data,
            &layout.lstm2[dir],
            &cache.seq1,
            2 * h1,
            h2,
            p,
            forward_dir,
            &cache.lstm2[dir],
            &d_h2[dir],
            grad,
            &mut d_seq1,
        );
    }

    // first LSTM layer
    let mut d_h1 = [vec![0.0f64; p * h1], vec![0.0f64; p * h1]];
    for k in 0..p {
        d_h1[0][k * h1..(k + 1) * h1]
            .copy_from_slice(&d_seq1[k * 2 * h1..k * 2 * h1 + h1]);
        d_h1[1][k * h1..(k + 1) * h1]
            .copy_from_slice(&d_seq1[k * 2 * h1 + h1..(k + 1) * 2 * h1]);
    }
    let mut d_fused = vec![0.0f64; p * ed];
    for (dir, forward_dir) in [(0usize, true), (1usize, false)] {
        backprop_direction(
            &params.data,
            &layout.lstm1[dir],
            &cache.fused,
            ed,
            h1,
            p,
            forward_dir,
            &cache.lstm1[dir],
            &d_h1[dir],
            grad,
            &mut d_fused,
        );
    }

    // shared encoder: the fused gradient flows into both streams
    let enc_w2 = &params.data[layout.enc_w2.clone()];
    {
        let mut act = vec![0.0f64; eh];
        let mut d_act = vec![0.0f64; eh];
        let mut d_pre = vec![0.0f64; eh];
        for k in 0..p {
            let d_z = &d_fused[k * ed..(k + 1) * ed];
            if d_z.iter().all(|&v| v == 0.0) {
                continue;
            }
            for (tokens, pre_buf) in [
                (&tok.tokens_x, &cache.enc_pre_x),
                (&tok.tokens_y, &cache.enc_pre_y),
            ] {
                let pre = &pre_buf[k * eh..(k + 1) * eh];
                for (a, &z) in act.iter_mut().zip(pre) {
                    *a = leaky_relu(z);
                }
                outer_add(&mut grad[layout.enc_w2.clone()], d_z, &act);
                for (g, &d) in grad[layout.enc_b2.clone()].iter_mut().zip(d_z) {
                    *g += d;
                }
                d_act.iter_mut().for_each(|v| *v = 0.0);
                matvec_t_add(&mut d_act, enc_w2, d_z);
                for ((dp, &da), &z) in d_pre.iter_mut().zip(d_act.iter()).zip(pre) {
                    *dp = da * leaky_relu_grad(z);
                }
                outer_add(&mut grad[layout.enc_w1.clone()], &d_pre, &tokens[k]);
                for (g, &d) in grad[layout.enc_b1.clone()].iter_mut().zip(&d_pre) {
                    *g += d;
                }
            }
        }
    }

    if grad.iter().any(|v| !v.is_finite()) {
        return Err(NeuralError::NonFiniteGradient { layer: "backward" });
    }
    Ok(())
}
