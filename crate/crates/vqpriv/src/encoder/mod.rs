//! A small temporal encoder with a bottleneck tap.
//!
//! Stacked affine layers, each seeing a window of neighboring frames
//! (replicate-padded at the edges), with ReLU activations and strided
//! temporal subsampling after the second layer. The bottleneck projection is
//! linear; a per-frame linear head maps (possibly quantized) bottleneck
//! frames to content-class logits. Forward and backward are written by hand
//! — the backward pass is checked against the finite-difference oracle.

mod backward;

pub use backward::backward;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, RngStream};
use crate::vq::BottleneckSequence;

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub input_dim: usize,
    /// Widths of the temporal layers.
    pub hidden_dims: Vec<usize>,
    /// Bottleneck dimension `D`; must equal the codebook dimension.
    pub bottleneck_dim: usize,
    /// Frames of context on each side per temporal layer.
    pub context: usize,
    /// Temporal stride; the bottleneck has `ceil(T / subsample_factor)` frames.
    pub subsample_factor: usize,
    /// Number of content classes `P` predicted by the head.
    pub num_content_classes: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            input_dim: 24,
            hidden_dims: vec![32, 32, 32],
            bottleneck_dim: 16,
            context: 1,
            subsample_factor: 3,
            num_content_classes: 20,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0
            || self.bottleneck_dim == 0
            || self.subsample_factor == 0
            || self.num_content_classes == 0
        {
            return Err(Error::config("encoder dims and factors must be >= 1"));
        }
        if self.hidden_dims.is_empty() || self.hidden_dims.contains(&0) {
            return Err(Error::config("encoder needs at least one non-zero hidden layer"));
        }
        Ok(())
    }

    /// Fewest input frames the encoder accepts: one full context window, and
    /// at least two frames when subsampling (so the output is shorter than
    /// the input).
    pub fn min_input_frames(&self) -> usize {
        let window = 2 * self.context + 1;
        let floor = if self.subsample_factor > 1 { 2 } else { 1 };
        window.max(floor)
    }

    /// Temporal layer index after whose activation the stride is applied:
    /// after the second layer, or after the last one if fewer than two.
    fn subsample_after(&self) -> usize {
        1.min(self.hidden_dims.len() - 1)
    }

    /// Number of bottleneck frames produced for `input_frames` inputs.
    pub fn output_frames(&self, input_frames: usize) -> usize {
        input_frames.div_ceil(self.subsample_factor)
    }
}

/// Original-timeline indices retained by the stride.
pub fn subsample_indices(total: usize, factor: usize) -> Vec<usize> {
    (0..total).step_by(factor.max(1)).collect()
}

/// One affine map: `out = weight * in + bias`, with `weight` stored
/// row-per-output-unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Affine {
    fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Affine {
            weight: Matrix::zeros(out_dim, in_dim),
            bias: vec![0.0; out_dim],
        }
    }

    fn init(out_dim: usize, in_dim: usize, scale: f64, rng: &mut RngStream) -> Result<Self> {
        let raw = rng.gaussian(out_dim * in_dim)?;
        let std = (scale / in_dim as f64).sqrt();
        let weight = Matrix::from_vec(
            out_dim,
            in_dim,
            raw.into_iter().map(|x| x * std).collect(),
        )?;
        Ok(Affine {
            weight,
            bias: vec![0.0; out_dim],
        })
    }
}

/// All trainable weights of the encoder plus the content head. The same
/// struct doubles as the gradient container returned by [`backward`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub temporal: Vec<Affine>,
    pub bottleneck: Affine,
    pub head: Affine,
}

impl EncoderParams {
    /// Random initialization: He-scaled gaussians for the ReLU layers,
    /// fan-in-scaled for the two linear maps, zero biases.
    pub fn init(cfg: &EncoderConfig, rng: &mut RngStream) -> Result<Self> {
        cfg.validate()?;
        let window = 2 * cfg.context + 1;
        let mut temporal = Vec::with_capacity(cfg.hidden_dims.len());
        let mut prev = cfg.input_dim;
        for &h in &cfg.hidden_dims {
            temporal.push(Affine::init(h, window * prev, 2.0, rng)?);
            prev = h;
        }
        let bottleneck = Affine::init(cfg.bottleneck_dim, prev, 1.0, rng)?;
        let head = Affine::init(cfg.num_content_classes, cfg.bottleneck_dim, 1.0, rng)?;
        Ok(EncoderParams {
            temporal,
            bottleneck,
            head,
        })
    }

    /// Zero-valued parameter set with the shapes of `cfg` (gradient buffer).
    pub fn zeros_like(cfg: &EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        let window = 2 * cfg.context + 1;
        let mut temporal = Vec::with_capacity(cfg.hidden_dims.len());
        let mut prev = cfg.input_dim;
        for &h in &cfg.hidden_dims {
            temporal.push(Affine::zeros(h, window * prev));
            prev = h;
        }
        Ok(EncoderParams {
            temporal,
            bottleneck: Affine::zeros(cfg.bottleneck_dim, prev),
            head: Affine::zeros(cfg.num_content_classes, cfg.bottleneck_dim),
        })
    }

    pub fn matches_config(&self, cfg: &EncoderConfig) -> bool {
        let window = 2 * cfg.context + 1;
        if self.temporal.len() != cfg.hidden_dims.len() {
            return false;
        }
        let mut prev = cfg.input_dim;
        for (layer, &h) in self.temporal.iter().zip(&cfg.hidden_dims) {
            if layer.weight.rows() != h
                || layer.weight.cols() != window * prev
                || layer.bias.len() != h
            {
                return false;
            }
            prev = h;
        }
        self.bottleneck.weight.rows() == cfg.bottleneck_dim
            && self.bottleneck.weight.cols() == prev
            && self.head.weight.rows() == cfg.num_content_classes
            && self.head.weight.cols() == cfg.bottleneck_dim
    }

    /// `self += factor * other` over every weight and bias.
    pub fn scaled_add(&mut self, other: &EncoderParams, factor: f64) -> Result<()> {
        if self.temporal.len() != other.temporal.len() {
            return Err(Error::ShapeMismatch {
                op: "EncoderParams::scaled_add",
                detail: "layer count mismatch".into(),
            });
        }
        for (a, b) in self.temporal.iter_mut().zip(&other.temporal) {
            a.weight.scaled_add(&b.weight, factor)?;
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += factor * y;
            }
        }
        self.bottleneck.weight.scaled_add(&other.bottleneck.weight, factor)?;
        for (x, y) in self.bottleneck.bias.iter_mut().zip(&other.bottleneck.bias) {
            *x += factor * y;
        }
        self.head.weight.scaled_add(&other.head.weight, factor)?;
        for (x, y) in self.head.bias.iter_mut().zip(&other.head.bias) {
            *x += factor * y;
        }
        Ok(())
    }

    /// Flattens every parameter into one vector (weights row-major, bias
    /// after each weight, layers in order). Used by the gradient checks.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in self.temporal.iter().chain([&self.bottleneck, &self.head]) {
            out.extend_from_slice(layer.weight.data());
            out.extend_from_slice(&layer.bias);
        }
        out
    }

    /// Inverse of [`flatten`]; shapes are taken from `self`.
    pub fn assign_from_flat(&mut self, flat: &[f64]) -> Result<()> {
        let mut offset = 0;
        for layer in self
            .temporal
            .iter_mut()
            .chain([&mut self.bottleneck, &mut self.head])
        {
            let w = layer.weight.rows() * layer.weight.cols();
            let rows = layer.weight.rows();
            let cols = layer.weight.cols();
            layer.weight = Matrix::from_vec(rows, cols, flat[offset..offset + w].to_vec())?;
            offset += w;
            let blen = layer.bias.len();
            layer.bias.copy_from_slice(&flat[offset..offset + blen]);
            offset += blen;
        }
        if offset != flat.len() {
            return Err(Error::ShapeMismatch {
                op: "assign_from_flat",
                detail: format!("expected {offset} values, got {}", flat.len()),
            });
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.temporal
            .iter()
            .chain([&self.bottleneck, &self.head])
            .all(|l| l.weight.is_finite() && l.bias.iter().all(|v| v.is_finite()))
    }
}

/// Per-layer activations retained from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct LayerCache {
    input_frames: usize,
    /// For each temporal layer: the sequence it consumed and its
    /// pre-activation output.
    temporal: Vec<TemporalCache>,
    /// Timeline indices kept by the stride.
    subsample_keep: Vec<usize>,
    /// Layer index after whose output the stride was applied.
    subsample_after: usize,
    /// Input to the bottleneck projection (last temporal activation).
    bottleneck_input: Matrix,
}

#[derive(Debug, Clone)]
struct TemporalCache {
    input: Matrix,
    preact: Matrix,
}

impl LayerCache {
    pub fn input_frames(&self) -> usize {
        self.input_frames
    }

    pub fn output_frames(&self) -> usize {
        self.bottleneck_input.rows()
    }
}

/// Affine-with-context forward: each output frame `t` sees input frames
/// `t - c ..= t + c`, clamped to the sequence (replicate padding).
fn temporal_forward(input: &Matrix, layer: &Affine, context: usize) -> Matrix {
    let frames = input.rows();
    let in_dim = input.cols();
    let out_dim = layer.weight.rows();
    let mut out = Matrix::zeros(frames, out_dim);
    for t in 0..frames {
        let out_row = out.row_mut(t);
        out_row.copy_from_slice(&layer.bias);
        for offset in 0..=2 * context {
            let src = (t + offset).saturating_sub(context).min(frames - 1);
            let src_row = input.row(src);
            let col_base = offset * in_dim;
            for (h, acc) in out_row.iter_mut().enumerate() {
                let w_row = layer.weight.row(h);
                let mut dot = 0.0;
                for (k, &x) in src_row.iter().enumerate() {
                    dot += w_row[col_base + k] * x;
                }
                *acc += dot;
            }
        }
    }
    out
}

fn relu(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for r in 0..out.rows() {
        for v in out.row_mut(r) {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    }
    out
}

/// Per-frame affine map (no temporal context): `out = in * W^T + bias`.
fn affine_forward(input: &Matrix, layer: &Affine) -> Matrix {
    let mut out = Matrix::zeros(input.rows(), layer.weight.rows());
    for t in 0..input.rows() {
        let in_row = input.row(t);
        let out_row = out.row_mut(t);
        for (h, acc) in out_row.iter_mut().enumerate() {
            let w_row = layer.weight.row(h);
            let mut dot = layer.bias[h];
            for (k, &x) in in_row.iter().enumerate() {
                dot += w_row[k] * x;
            }
            *acc = dot;
        }
    }
    out
}

fn select_rows(m: &Matrix, keep: &[usize]) -> Matrix {
    let mut out = Matrix::zeros(keep.len(), m.cols());
    for (dst, &src) in keep.iter().enumerate() {
        out.set_row(dst, m.row(src));
    }
    out
}

/// Runs the encoder over `frames` (`T x input_dim`) and returns the
/// bottleneck sequence (`ceil(T / subsample_factor)` frames of dimension
/// `bottleneck_dim`) together with the cache the backward pass needs.
pub fn encode(
    frames: &Matrix,
    params: &EncoderParams,
    cfg: &EncoderConfig,
) -> Result<(BottleneckSequence, LayerCache)> {
    cfg.validate()?;
    if !params.matches_config(cfg) {
        return Err(Error::ShapeMismatch {
            op: "encode",
            detail: "parameters do not match encoder config".into(),
        });
    }
    if frames.cols() != cfg.input_dim {
        return Err(Error::ShapeMismatch {
            op: "encode",
            detail: format!("input dim {} vs config {}", frames.cols(), cfg.input_dim),
        });
    }
    if frames.rows() < cfg.min_input_frames() {
        return Err(Error::TooShortInput {
            frames: frames.rows(),
            min: cfg.min_input_frames(),
        });
    }

    let subsample_after = cfg.subsample_after();
    let mut x = frames.clone();
    let mut temporal = Vec::with_capacity(params.temporal.len());
    let mut subsample_keep = Vec::new();
    for (idx, layer) in params.temporal.iter().enumerate() {
        let preact = temporal_forward(&x, layer, cfg.context);
        let act = relu(&preact);
        temporal.push(TemporalCache {
            input: x,
            preact,
        });
        x = act;
        if idx == subsample_after {
            subsample_keep = subsample_indices(x.rows(), cfg.subsample_factor);
            x = select_rows(&x, &subsample_keep);
        }
    }

    let bottleneck_input = x;
    let bottleneck = affine_forward(&bottleneck_input, &params.bottleneck);
    let cache = LayerCache {
        input_frames: frames.rows(),
        temporal,
        subsample_keep,
        subsample_after,
        bottleneck_input,
    };
    Ok((BottleneckSequence::new(bottleneck)?, cache))
}

/// Per-frame content logits from (possibly quantized) bottleneck frames.
/// No softmax; the loss handles normalization.
pub fn head_logits(bottleneck: &Matrix, params: &EncoderParams) -> Result<Matrix> {
    if bottleneck.cols() != params.head.weight.cols() {
        return Err(Error::ShapeMismatch {
            op: "head_logits",
            detail: format!(
                "bottleneck dim {} vs head input dim {}",
                bottleneck.cols(),
                params.head.weight.cols()
            ),
        });
    }
    Ok(affine_forward(bottleneck, &params.head))
}

/// Gradient of the loss with respect to the head's input, given the gradient
/// at the logits: `g_logits * W_head`. Under quantization this is the
/// gradient at `q`, which callers route through the straight-through
/// estimator before handing it to [`backward`].
pub fn head_input_grad(grad_logits: &Matrix, params: &EncoderParams) -> Result<Matrix> {
    grad_logits.matmul(&params.head.weight)
}
