//! Manual reverse-mode differentiation of the encoder.

use super::{EncoderParams, LayerCache};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Computes exact parameter gradients for the scalar loss whose upstream
/// gradients are supplied.
///
/// * `grad_bottleneck` is the complete gradient at the bottleneck tap
///   (`J x D`). Callers combine the head-input gradient — routed through the
///   straight-through estimator when the quantizer is active — with the
///   commitment-regularizer gradient before calling.
/// * `grad_logits` (`J x P`) produces the head's weight and bias gradients
///   against `head_input` (`J x D`), the matrix the head actually consumed:
///   quantized frames under VQ, raw bottleneck frames otherwise.
///
/// The returned [`EncoderParams`] holds gradients in the same layout as the
/// parameters. Accumulation runs in a fixed order, so results are
/// deterministic.
pub fn backward(
    grad_bottleneck: &Matrix,
    grad_logits: &Matrix,
    head_input: &Matrix,
    cache: &LayerCache,
    params: &EncoderParams,
) -> Result<EncoderParams> {
    let out_frames = cache.output_frames();
    if cache.temporal.len() != params.temporal.len() {
        return Err(Error::CacheMismatch {
            detail: format!(
                "cache has {} temporal layers, params have {}",
                cache.temporal.len(),
                params.temporal.len()
            ),
        });
    }
    for (idx, (tc, layer)) in cache.temporal.iter().zip(&params.temporal).enumerate() {
        if tc.preact.cols() != layer.weight.rows() {
            return Err(Error::CacheMismatch {
                detail: format!("temporal layer {idx} width mismatch"),
            });
        }
    }
    let d = params.bottleneck.weight.rows();
    let p = params.head.weight.rows();
    if grad_bottleneck.rows() != out_frames || grad_bottleneck.cols() != d {
        return Err(Error::CacheMismatch {
            detail: format!(
                "grad_bottleneck is {}x{}, expected {}x{}",
                grad_bottleneck.rows(),
                grad_bottleneck.cols(),
                out_frames,
                d
            ),
        });
    }
    if grad_logits.rows() != out_frames || grad_logits.cols() != p {
        return Err(Error::CacheMismatch {
            detail: format!(
                "grad_logits is {}x{}, expected {}x{}",
                grad_logits.rows(),
                grad_logits.cols(),
                out_frames,
                p
            ),
        });
    }
    if head_input.rows() != out_frames || head_input.cols() != d {
        return Err(Error::CacheMismatch {
            detail: format!(
                "head_input is {}x{}, expected {}x{}",
                head_input.rows(),
                head_input.cols(),
                out_frames,
                d
            ),
        });
    }

    let mut grads = EncoderParams {
        temporal: params
            .temporal
            .iter()
            .map(|l| super::Affine {
                weight: Matrix::zeros(l.weight.rows(), l.weight.cols()),
                bias: vec![0.0; l.bias.len()],
            })
            .collect(),
        bottleneck: super::Affine {
            weight: Matrix::zeros(
                params.bottleneck.weight.rows(),
                params.bottleneck.weight.cols(),
            ),
            bias: vec![0.0; params.bottleneck.bias.len()],
        },
        head: super::Affine {
            weight: Matrix::zeros(params.head.weight.rows(), params.head.weight.cols()),
            bias: vec![0.0; params.head.bias.len()],
        },
    };

    // Head: dW = g_logits^T * head_input, db = column sums.
    grads.head.weight = grad_logits.transpose().matmul(head_input)?;
    for t in 0..out_frames {
        for (b, &g) in grads.head.bias.iter_mut().zip(grad_logits.row(t)) {
            *b += g;
        }
    }

    // Bottleneck projection (linear, per frame).
    grads.bottleneck.weight = grad_bottleneck.transpose().matmul(&cache.bottleneck_input)?;
    for t in 0..out_frames {
        for (b, &g) in grads.bottleneck.bias.iter_mut().zip(grad_bottleneck.row(t)) {
            *b += g;
        }
    }
    // Gradient flowing into the last temporal activation.
    let mut grad_act = grad_bottleneck.matmul(&params.bottleneck.weight)?;

    // Temporal layers in reverse.
    for idx in (0..params.temporal.len()).rev() {
        if idx == cache.subsample_after {
            // Undo the stride: scatter kept-frame gradients, zero elsewhere.
            let full = cache.temporal[idx].preact.rows();
            let mut expanded = Matrix::zeros(full, grad_act.cols());
            for (sub_row, &orig) in cache.subsample_keep.iter().enumerate() {
                expanded.set_row(orig, grad_act.row(sub_row));
            }
            grad_act = expanded;
        }
        let tc = &cache.temporal[idx];
        let layer = &params.temporal[idx];
        if grad_act.rows() != tc.preact.rows() || grad_act.cols() != tc.preact.cols() {
            return Err(Error::CacheMismatch {
                detail: format!("gradient shape drifted at temporal layer {idx}"),
            });
        }

        // ReLU: zero where the pre-activation was not positive.
        let mut grad_pre = grad_act;
        for t in 0..grad_pre.rows() {
            let pre_row = tc.preact.row(t);
            for (g, &pre) in grad_pre.row_mut(t).iter_mut().zip(pre_row) {
                if pre <= 0.0 {
                    *g = 0.0;
                }
            }
        }

        let frames = tc.input.rows();
        let in_dim = tc.input.cols();
        let context = (layer.weight.cols() / in_dim - 1) / 2;
        let g_layer = &mut grads.temporal[idx];
        let mut grad_input = Matrix::zeros(frames, in_dim);
        for t in 0..frames {
            let g_row = grad_pre.row(t);
            for (b, &g) in g_layer.bias.iter_mut().zip(g_row) {
                *b += g;
            }
            for offset in 0..=2 * context {
                let src = (t + offset).saturating_sub(context).min(frames - 1);
                let col_base = offset * in_dim;
                let x_row = tc.input.row(src);
                for (h, &g) in g_row.iter().enumerate() {
                    if g == 0.0 {
                        continue;
                    }
                    let w_row = g_layer.weight.row_mut(h);
                    for (k, &x) in x_row.iter().enumerate() {
                        w_row[col_base + k] += g * x;
                    }
                }
                let gi_row = grad_input.row_mut(src);
                for (h, &g) in g_row.iter().enumerate() {
                    if g == 0.0 {
                        continue;
                    }
                    let w_row = layer.weight.row(h);
                    for (k, gi) in gi_row.iter_mut().enumerate() {
                        *gi += g * w_row[col_base + k];
                    }
                }
            }
        }
        grad_act = grad_input;
    }

    Ok(grads)
}
