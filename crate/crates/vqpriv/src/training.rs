//! Joint optimization of encoder, head, and codebook.
//!
//! Each step encodes a batch of utterances, quantizes the bottleneck frames,
//! classifies content from the quantized frames, and minimizes
//!
//! ```text
//! L = L_utility + L_vq + lambda * L_reg
//! ```
//!
//! where `L_utility` is frame-level cross-entropy, `L_vq` is the codebook
//! loss and `L_reg` the commitment regularizer. The encoder and head follow
//! plain SGD on `L_utility + lambda * L_reg` (the quantizer's argmin is
//! bridged by the straight-through estimator); the dictionary itself is
//! maintained by EMA, independently of the optimizer, so `L_vq` contributes
//! no parameter update and is logged as a diagnostic.

use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::encoder::{
    backward, encode, head_input_grad, head_logits, subsample_indices, EncoderConfig,
    EncoderParams,
};
use crate::error::{Error, Result};
use crate::evaluation::BottleneckModel;
use crate::numerics::{Matrix, RngStream};
use crate::synthdata::{Dataset, FrameSequence};
use crate::vq::{
    codebook_grad, commitment_grad, histogram_perplexity, quantize, ste_backward,
    BottleneckSequence, Codebook, CodebookOptions, CodebookSnapshot, UsageTracker,
};

/// Snapshot format version written by [`TrainedModel::to_json`].
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// How the dictionary is maintained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CodebookUpdate {
    /// Exponential moving average of assigned frames (the default).
    Ema,
    /// Ablation: SGD on the codebook loss instead of EMA.
    Gradient,
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Weight `lambda` of the commitment regularizer.
    pub lambda_reg: f64,
    /// Codebook size `V` (ignored when `vq_enabled` is false).
    pub codebook_size: usize,
    pub learning_rate: f64,
    /// Batch size in whole utterances.
    pub batch_size: usize,
    pub epochs: usize,
    /// When false, the bottleneck passes through unquantized and only the
    /// utility loss applies (the baseline configuration).
    pub vq_enabled: bool,
    pub seed: u64,
    pub ema_decay: f64,
    pub ema_smoothing: f64,
    /// Batches a prototype may go unselected before being restarted.
    pub stale_threshold: u32,
    pub codebook_update: CodebookUpdate,
    pub encoder: EncoderConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda_reg: 0.25,
            codebook_size: 64,
            learning_rate: 0.05,
            batch_size: 8,
            epochs: 90,
            vq_enabled: true,
            seed: 0,
            ema_decay: 0.99,
            ema_smoothing: 1e-5,
            stale_threshold: 50,
            codebook_update: CodebookUpdate::Ema,
            encoder: EncoderConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.lambda_reg < 0.0 || !self.lambda_reg.is_finite() {
            return Err(Error::config("lambda_reg must be >= 0"));
        }
        if self.vq_enabled && self.codebook_size == 0 {
            return Err(Error::config("codebook_size must be >= 1 when VQ is enabled"));
        }
        if self.learning_rate < 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::config("learning_rate must be >= 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        if self.stale_threshold == 0 {
            return Err(Error::config("stale_threshold must be >= 1"));
        }
        CodebookOptions {
            decay: self.ema_decay,
            smoothing: self.ema_smoothing,
        }
        .validate()
    }

    fn codebook_options(&self) -> CodebookOptions {
        CodebookOptions {
            decay: self.ema_decay,
            smoothing: self.ema_smoothing,
        }
    }
}

/// Losses of one optimization step, averaged over the batch's utterances.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLosses {
    pub utility: f64,
    pub vq: f64,
    pub reg: f64,
    pub combined: f64,
    pub utterances: usize,
    /// Prototype usage counts for this batch (present when VQ is enabled).
    pub usage_histogram: Option<Vec<usize>>,
}

/// Per-epoch averages recorded in the training curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub utility_loss: f64,
    pub vq_loss: f64,
    pub reg_loss: f64,
    pub combined_loss: f64,
    /// Codebook usage perplexity over the epoch; absent for the baseline.
    pub perplexity: Option<f64>,
}

/// Mutable model state threaded through [`train_step`].
#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: EncoderParams,
    pub codebook: Option<Codebook>,
    usage: Option<UsageTracker>,
    restart_rng: RngStream,
}

impl TrainState {
    pub fn new(params: EncoderParams, codebook: Option<Codebook>, restart_rng: RngStream) -> Self {
        let usage = codebook.as_ref().map(|cb| UsageTracker::new(cb.size()));
        TrainState {
            params,
            codebook,
            usage,
            restart_rng,
        }
    }
}

/// Frame-averaged softmax cross-entropy and its gradient with respect to the
/// logits: `(softmax - onehot) / J`.
pub fn utility_loss(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    if logits.rows() != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "utility_loss",
            detail: format!("{} logit rows vs {} labels", logits.rows(), labels.len()),
        });
    }
    if logits.rows() == 0 {
        return Err(Error::EmptyInput { op: "utility_loss" });
    }
    let classes = logits.cols();
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange {
            label: bad,
            classes,
        });
    }
    let j = logits.rows();
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(j, classes);
    for t in 0..j {
        let row = logits.row(t);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = row.iter().map(|z| (z - max).exp()).sum();
        loss += sum_exp.ln() + max - row[labels[t]];
        let g_row = grad.row_mut(t);
        for (c, g) in g_row.iter_mut().enumerate() {
            let soft = (row[c] - max).exp() / sum_exp;
            *g = (soft - if c == labels[t] { 1.0 } else { 0.0 }) / j as f64;
        }
    }
    Ok((loss / j as f64, grad))
}

/// The combined objective: `utility + vq + lambda * reg`.
pub fn combined_loss(l_utility: f64, l_vq: f64, l_reg: f64, lambda_reg: f64) -> Result<f64> {
    if lambda_reg < 0.0 {
        return Err(Error::config("lambda_reg must be >= 0"));
    }
    let total = l_utility + l_vq + lambda_reg * l_reg;
    if !total.is_finite() || !l_utility.is_finite() || !l_vq.is_finite() || !l_reg.is_finite() {
        return Err(Error::NonFinite { op: "combined_loss" });
    }
    Ok(total)
}

/// Labels at bottleneck rate: the input labels selected with the encoder's
/// subsampling stride, aligning one-to-one with bottleneck frames.
pub fn bottleneck_labels(seq: &FrameSequence, cfg: &EncoderConfig) -> Vec<usize> {
    subsample_indices(seq.num_frames(), cfg.subsample_factor)
        .into_iter()
        .map(|i| seq.content_labels[i])
        .collect()
}

/// One SGD step over a batch of utterances.
///
/// The encoder and head receive the gradient of
/// `L_utility + lambda * L_reg`; the head-input gradient crosses the
/// quantizer through the straight-through estimator. The codebook is then
/// updated by EMA pooled over all frames of the batch (or by its gradient in
/// the ablation mode), and prototypes that stayed unselected for too many
/// batches are restarted from batch frames.
pub fn train_step(
    batch: &[&FrameSequence],
    state: &mut TrainState,
    cfg: &TrainConfig,
) -> Result<StepLosses> {
    if batch.is_empty() {
        return Err(Error::EmptyInput { op: "train_step" });
    }
    cfg.validate()?;

    let mut grads = EncoderParams::zeros_like(&cfg.encoder)?;
    let mut total_utility = 0.0;
    let mut total_vq = 0.0;
    let mut total_reg = 0.0;
    let mut batch_bottlenecks: Vec<BottleneckSequence> = Vec::new();
    let mut batch_indices: Vec<usize> = Vec::new();

    for seq in batch {
        let labels = bottleneck_labels(seq, &cfg.encoder);
        let (h, cache) = encode(&seq.frames, &state.params, &cfg.encoder)?;

        let (quantized, l_vq, l_reg, indices) = match (&state.codebook, cfg.vq_enabled) {
            (Some(cb), true) => {
                let q = quantize(&h, cb)?;
                (q.quantized, q.codebook_loss, q.commitment_loss, Some(q.indices))
            }
            _ => (h.frames().clone(), 0.0, 0.0, None),
        };

        let logits = head_logits(&quantized, &state.params)?;
        let (l_utility, grad_logits) = utility_loss(&logits, &labels)?;

        // Complete upstream gradient at the bottleneck: the head-input
        // gradient through the straight-through estimator, plus the
        // commitment pull (zero in the baseline, where q == h).
        let mut grad_bottleneck = ste_backward(&head_input_grad(&grad_logits, &state.params)?);
        if cfg.vq_enabled && state.codebook.is_some() {
            let commit = commitment_grad(&h, &quantized)?;
            grad_bottleneck.scaled_add(&commit, cfg.lambda_reg)?;
        }

        let seq_grads = backward(
            &grad_bottleneck,
            &grad_logits,
            &quantized,
            &cache,
            &state.params,
        )?;
        grads.scaled_add(&seq_grads, 1.0)?;

        total_utility += l_utility;
        total_vq += l_vq;
        total_reg += l_reg;
        if let Some(idx) = indices {
            batch_indices.extend(idx);
            batch_bottlenecks.push(h);
        }
    }

    let n = batch.len() as f64;
    state
        .params
        .scaled_add(&grads, -cfg.learning_rate / n)?;
    if !state.params.is_finite() {
        return Err(Error::NonFinite { op: "train_step" });
    }

    let mut usage_histogram = None;
    if let (Some(cb), true) = (&mut state.codebook, cfg.vq_enabled) {
        let refs: Vec<&BottleneckSequence> = batch_bottlenecks.iter().collect();
        let pooled = BottleneckSequence::concat(&refs)?;
        match cfg.codebook_update {
            CodebookUpdate::Ema => cb.ema_update(&pooled, &batch_indices)?,
            CodebookUpdate::Gradient => {
                let grad = codebook_grad(&pooled, &batch_indices, cb)?;
                cb.apply_prototype_gradient(&grad, cfg.learning_rate)?;
            }
        }
        let usage = state.usage.as_mut().expect("tracker exists with codebook");
        usage.record_batch(&batch_indices);
        cb.restart_dead_prototypes(usage, &pooled, &mut state.restart_rng, cfg.stale_threshold)?;

        let mut hist = vec![0usize; cb.size()];
        for &i in &batch_indices {
            hist[i] += 1;
        }
        usage_histogram = Some(hist);
    }

    let utility = total_utility / n;
    let vq = total_vq / n;
    let reg = total_reg / n;
    Ok(StepLosses {
        utility,
        vq,
        reg,
        combined: combined_loss(utility, vq, reg, cfg.lambda_reg)?,
        utterances: batch.len(),
        usage_histogram,
    })
}

/// Trains a model on `ds`.
///
/// All randomness derives from `cfg.seed` through named child streams:
/// `params-init` for weights, `codebook-init` for the dictionary, `shuffle`
/// for epoch ordering, `restart` for dead-prototype replacement. The
/// codebook is seeded from bottleneck frames collected with the freshly
/// initialized encoder over the first utterances (in dataset order) — at
/// least one batch, extended until `V` frames are available.
pub fn fit(ds: &Dataset, cfg: &TrainConfig) -> Result<TrainedModel> {
    cfg.validate()?;
    if ds.utterances.is_empty() {
        return Err(Error::EmptyInput { op: "fit" });
    }
    let root = RngStream::new(cfg.seed);
    let params = EncoderParams::init(&cfg.encoder, &mut root.child("params-init", 0))?;

    let codebook = if cfg.vq_enabled {
        let mut collected: Vec<Matrix> = Vec::new();
        let mut frames = 0usize;
        for (i, seq) in ds.utterances.iter().enumerate() {
            let (h, _) = encode(&seq.frames, &params, &cfg.encoder)?;
            frames += h.num_frames();
            collected.push(h.frames().clone());
            if i + 1 >= cfg.batch_size && frames >= cfg.codebook_size {
                break;
            }
        }
        if frames < cfg.codebook_size {
            return Err(Error::InsufficientSamples {
                requested: cfg.codebook_size,
                available: frames,
            });
        }
        let mut samples = Matrix::zeros(frames, cfg.encoder.bottleneck_dim);
        let mut row = 0;
        for m in &collected {
            for r in 0..m.rows() {
                samples.set_row(row, m.row(r));
                row += 1;
            }
        }
        Some(Codebook::from_samples(
            &samples,
            cfg.codebook_size,
            cfg.codebook_options(),
            &mut root.child("codebook-init", 0),
        )?)
    } else {
        None
    };

    let mut state = TrainState::new(params, codebook, root.child("restart", 0));
    let mut shuffle_rng = root.child("shuffle", 0);
    let mut curve = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..ds.utterances.len()).collect();
        shuffle_rng.shuffle(&mut order);

        let mut sums = (0.0, 0.0, 0.0, 0.0);
        let mut utterances = 0usize;
        let mut epoch_hist: Option<Vec<usize>> = None;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&FrameSequence> =
                chunk.iter().map(|&i| &ds.utterances[i]).collect();
            let step = train_step(&batch, &mut state, cfg).map_err(|e| match e {
                Error::NonFinite { .. } => Error::TrainingDiverged { epoch },
                other => other,
            })?;
            let w = step.utterances as f64;
            sums.0 += step.utility * w;
            sums.1 += step.vq * w;
            sums.2 += step.reg * w;
            sums.3 += step.combined * w;
            utterances += step.utterances;
            if let Some(hist) = step.usage_histogram {
                match &mut epoch_hist {
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(hist) {
                            *a += b;
                        }
                    }
                    None => epoch_hist = Some(hist),
                }
            }
        }
        let n = utterances as f64;
        let stats = EpochStats {
            epoch,
            utility_loss: sums.0 / n,
            vq_loss: sums.1 / n,
            reg_loss: sums.2 / n,
            combined_loss: sums.3 / n,
            perplexity: match &epoch_hist {
                Some(hist) => Some(histogram_perplexity(hist)?),
                None => None,
            },
        };
        if !stats.combined_loss.is_finite() {
            return Err(Error::TrainingDiverged { epoch });
        }
        curve.push(stats);
    }

    Ok(TrainedModel {
        encoder_config: cfg.encoder.clone(),
        params: state.params,
        codebook: state.codebook,
        curve,
    })
}

/// A trained encoder/head pair, plus the codebook when VQ was enabled, and
/// the per-epoch training curve.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub encoder_config: EncoderConfig,
    pub params: EncoderParams,
    pub codebook: Option<Codebook>,
    pub curve: Vec<EpochStats>,
}

impl TrainedModel {
    /// Prototype assignments for one utterance (None for the baseline).
    pub fn bottleneck_indices(&self, seq: &FrameSequence) -> Result<Option<Vec<usize>>> {
        match &self.codebook {
            Some(cb) => {
                let (h, _) = encode(&seq.frames, &self.params, &self.encoder_config)?;
                Ok(Some(quantize(&h, cb)?.indices))
            }
            None => Ok(None),
        }
    }

    /// Serializes the model (encoder config, weights, codebook, curve) to a
    /// versioned JSON snapshot; doubles round-trip losslessly.
    pub fn to_json(&self) -> String {
        let snap = ModelSnapshot {
            format_version: MODEL_FORMAT_VERSION,
            encoder_config: self.encoder_config.clone(),
            params: self.params.clone(),
            codebook: self.codebook.as_ref().map(|cb| {
                serde_json::from_str::<CodebookSnapshot>(&cb.to_json())
                    .expect("codebook snapshot parses")
            }),
            curve: self.curve.clone(),
        };
        serde_json::to_string(&snap).expect("model snapshot serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let snap: ModelSnapshot = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            detail: format!("model snapshot: {e}"),
        })?;
        if snap.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::config(format!(
                "unsupported model format version {}",
                snap.format_version
            )));
        }
        if !snap.params.matches_config(&snap.encoder_config) {
            return Err(Error::config(
                "model snapshot: parameters do not match encoder config",
            ));
        }
        Ok(TrainedModel {
            encoder_config: snap.encoder_config,
            params: snap.params,
            codebook: match snap.codebook {
                Some(cs) => Some(cs.into_codebook()?),
                None => None,
            },
            curve: snap.curve,
        })
    }
}

impl BottleneckModel for TrainedModel {
    fn transmitted_frames(&self, seq: &FrameSequence) -> Result<Matrix> {
        let (h, _) = encode(&seq.frames, &self.params, &self.encoder_config)?;
        match &self.codebook {
            Some(cb) => Ok(quantize(&h, cb)?.quantized),
            None => Ok(h.frames().clone()),
        }
    }

    fn content_predictions(&self, seq: &FrameSequence) -> Result<(Vec<usize>, Vec<usize>)> {
        let frames = self.transmitted_frames(seq)?;
        let logits = head_logits(&frames, &self.params)?;
        let mut predictions = Vec::with_capacity(logits.rows());
        for t in 0..logits.rows() {
            let row = logits.row(t);
            let mut best = 0;
            for (c, &z) in row.iter().enumerate() {
                if z > row[best] {
                    best = c;
                }
            }
            predictions.push(best);
        }
        Ok((predictions, bottleneck_labels(seq, &self.encoder_config)))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelSnapshot {
    format_version: u32,
    encoder_config: EncoderConfig,
    params: EncoderParams,
    codebook: Option<CodebookSnapshot>,
    curve: Vec<EpochStats>,
}

/// Writes the training curve as CSV:
/// `epoch,utility_loss,vq_loss,reg_loss,combined_loss,perplexity`.
pub fn export_curve_csv<W: Write>(curve: &[EpochStats], out: &mut W) -> Result<()> {
    writeln!(out, "epoch,utility_loss,vq_loss,reg_loss,combined_loss,perplexity")?;
    for row in curve {
        write!(
            out,
            "{},{},{},{},{}",
            row.epoch, row.utility_loss, row.vq_loss, row.reg_loss, row.combined_loss
        )?;
        match row.perplexity {
            Some(p) => writeln!(out, ",{p}")?,
            None => writeln!(out, ",")?,
        }
    }
    Ok(())
}
