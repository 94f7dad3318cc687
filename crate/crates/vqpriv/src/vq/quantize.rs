//! Nearest-prototype quantization, the two auxiliary losses, and the
//! straight-through gradient.

use super::codebook::Codebook;
use super::BottleneckSequence;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Output of [`quantize`]: per-frame prototype assignments, the quantized
/// frames (exact prototype copies), and the two auxiliary losses.
///
/// The two losses share one formula — the mean squared distance between each
/// frame and its prototype — and differ only in where their gradient flows:
/// the codebook loss moves prototypes toward frames, the commitment loss
/// moves frames toward prototypes.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizationResult {
    pub indices: Vec<usize>,
    pub quantized: Matrix,
    pub codebook_loss: f64,
    pub commitment_loss: f64,
}

/// Replaces every frame by its nearest prototype in squared Euclidean
/// distance, ties broken by the lowest prototype index.
///
/// The argmin scan uses the expansion `|e|^2 - 2 h.e` with prototype norms
/// cached per call (the frame's own norm is constant across prototypes); the
/// full distances agree with the naive computation to well under 1e-9.
pub fn quantize(h: &BottleneckSequence, cb: &Codebook) -> Result<QuantizationResult> {
    if h.dim() != cb.dim() {
        return Err(Error::ShapeMismatch {
            op: "quantize",
            detail: format!("frame dim {} vs codebook dim {}", h.dim(), cb.dim()),
        });
    }
    let v = cb.size();
    let proto_norms: Vec<f64> = (0..v)
        .map(|i| cb.prototype(i).iter().map(|x| x * x).sum())
        .collect();

    let j = h.num_frames();
    let mut indices = Vec::with_capacity(j);
    let mut quantized = Matrix::zeros(j, h.dim());
    for row in 0..j {
        let frame = h.frame(row);
        let mut best = 0usize;
        let mut best_score = f64::INFINITY;
        for (i, &norm) in proto_norms.iter().enumerate() {
            let dot: f64 = frame
                .iter()
                .zip(cb.prototype(i))
                .map(|(a, b)| a * b)
                .sum();
            let score = norm - 2.0 * dot;
            if score < best_score {
                best_score = score;
                best = i;
            }
        }
        indices.push(best);
        quantized.set_row(row, cb.prototype(best));
    }

    let loss = mean_squared_distance(h.frames(), &quantized)?;
    Ok(QuantizationResult {
        indices,
        quantized,
        codebook_loss: loss,
        commitment_loss: loss,
    })
}

/// Full squared distances from one frame to every prototype, via the same
/// expansion `|h|^2 - 2 h.e + |e|^2` the argmin uses. Exposed so tests can
/// compare the fast kernel against a naive subtract-and-square scan.
pub fn squared_distances(frame: &[f64], cb: &Codebook) -> Vec<f64> {
    let frame_norm: f64 = frame.iter().map(|x| x * x).sum();
    (0..cb.size())
        .map(|i| {
            let proto = cb.prototype(i);
            let dot: f64 = frame.iter().zip(proto).map(|(a, b)| a * b).sum();
            let proto_norm: f64 = proto.iter().map(|x| x * x).sum();
            frame_norm - 2.0 * dot + proto_norm
        })
        .collect()
}

fn mean_squared_distance(h: &Matrix, q: &Matrix) -> Result<f64> {
    if h.rows() != q.rows() || h.cols() != q.cols() {
        return Err(Error::ShapeMismatch {
            op: "quantization loss",
            detail: format!(
                "{}x{} vs {}x{}",
                h.rows(),
                h.cols(),
                q.rows(),
                q.cols()
            ),
        });
    }
    let j = h.rows() as f64;
    let total: f64 = h
        .data()
        .iter()
        .zip(q.data().iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(total / j)
}

/// Dictionary-side loss: `(1/J) sum_j |sg[h_j] - q_j|^2`. Pulls prototypes
/// toward the frames they replace; no gradient reaches the encoder.
pub fn codebook_loss(h: &BottleneckSequence, quantized: &Matrix) -> Result<f64> {
    mean_squared_distance(h.frames(), quantized)
}

/// Encoder-side regularizer: `(1/J) sum_j |h_j - sg[q_j]|^2`. Same value as
/// [`codebook_loss`]; its gradient flows to the frames instead.
pub fn commitment_loss(h: &BottleneckSequence, quantized: &Matrix) -> Result<f64> {
    mean_squared_distance(h.frames(), quantized)
}

/// Gradient of [`commitment_loss`] with respect to the frames:
/// `(2/J) (h_j - q_j)` per frame.
pub fn commitment_grad(h: &BottleneckSequence, quantized: &Matrix) -> Result<Matrix> {
    if h.num_frames() != quantized.rows() || h.dim() != quantized.cols() {
        return Err(Error::ShapeMismatch {
            op: "commitment_grad",
            detail: format!(
                "{}x{} vs {}x{}",
                h.num_frames(),
                h.dim(),
                quantized.rows(),
                quantized.cols()
            ),
        });
    }
    let j = h.num_frames() as f64;
    let mut grad = Matrix::zeros(quantized.rows(), quantized.cols());
    for r in 0..quantized.rows() {
        let out = grad.row_mut(r);
        for ((g, &hv), &qv) in out.iter_mut().zip(h.frame(r)).zip(quantized.row(r)) {
            *g = 2.0 / j * (hv - qv);
        }
    }
    Ok(grad)
}

/// Gradient of [`codebook_loss`] with respect to each prototype:
/// `(2/J) sum_{j : idx_j = i} (e_i - h_j)`. Only used by the gradient-descent
/// ablation; the default EMA path never applies it.
pub fn codebook_grad(
    h: &BottleneckSequence,
    indices: &[usize],
    cb: &Codebook,
) -> Result<Matrix> {
    if indices.len() != h.num_frames() {
        return Err(Error::ShapeMismatch {
            op: "codebook_grad",
            detail: format!("{} indices for {} frames", indices.len(), h.num_frames()),
        });
    }
    if h.dim() != cb.dim() {
        return Err(Error::ShapeMismatch {
            op: "codebook_grad",
            detail: format!("frame dim {} vs codebook dim {}", h.dim(), cb.dim()),
        });
    }
    let j = h.num_frames() as f64;
    let mut grad = Matrix::zeros(cb.size(), cb.dim());
    for (frame_idx, &proto_idx) in indices.iter().enumerate() {
        let row = grad.row_mut(proto_idx);
        let proto = cb.prototype(proto_idx);
        for ((g, &e), &hv) in row.iter_mut().zip(proto).zip(h.frame(frame_idx)) {
            *g += 2.0 / j * (e - hv);
        }
    }
    Ok(grad)
}

/// Straight-through estimator: the quantizer's argmin has no usable
/// derivative, so the gradient at the quantizer output is copied to its
/// input unchanged.
pub fn ste_backward(grad_wrt_quantized: &Matrix) -> Matrix {
    grad_wrt_quantized.clone()
}
