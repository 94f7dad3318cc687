//! Privacy and utility probes.
//!
//! Privacy: a training-free verification attack — mean-pool the transmitted
//! bottleneck frames, length-normalize, score every (test utterance, enrolled
//! speaker) pair by cosine similarity, and report the equal error rate. A
//! *high* EER means the representation hides who is speaking.
//!
//! Utility: frame-level content classification error at bottleneck rate. A
//! *low* error means the representation still carries what was said.

mod bootstrap;
mod eer;

pub use bootstrap::{bootstrap_ci, MetricWithCI};
pub use eer::compute_eer;

use crate::error::{Error, Result};
use crate::numerics::{Matrix, RngStream};
use crate::synthdata::{Dataset, FrameSequence, Group};

/// Anything that can stand in for the trained model during evaluation.
pub trait BottleneckModel {
    /// The frames that leave the device for this utterance: quantized
    /// bottleneck frames when VQ is enabled, raw bottleneck frames otherwise.
    fn transmitted_frames(&self, seq: &FrameSequence) -> Result<Matrix>;

    /// Predicted content class per transmitted frame, paired with the
    /// reference labels at the same rate.
    fn content_predictions(&self, seq: &FrameSequence) -> Result<(Vec<usize>, Vec<usize>)>;
}

/// A mean-pooled, length-normalized utterance embedding. An all-zero frame
/// average cannot be normalized; it stays zero and is flagged.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledEmbedding {
    pub values: Vec<f64>,
    pub normalized: bool,
}

/// Frame mean followed by L2 normalization.
pub fn pool_embedding(frames: &Matrix) -> Result<PooledEmbedding> {
    if frames.rows() == 0 {
        return Err(Error::EmptyInput {
            op: "pool_embedding",
        });
    }
    let mut mean = vec![0.0; frames.cols()];
    for r in 0..frames.rows() {
        for (acc, &v) in mean.iter_mut().zip(frames.row(r)) {
            *acc += v;
        }
    }
    let n = frames.rows() as f64;
    mean.iter_mut().for_each(|v| *v /= n);
    let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Ok(PooledEmbedding {
            values: mean,
            normalized: false,
        });
    }
    mean.iter_mut().for_each(|v| *v /= norm);
    Ok(PooledEmbedding {
        values: mean,
        normalized: true,
    })
}

/// One verification trial: a test utterance claims an enrolled identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    /// Index into [`TrialSet::tests`].
    pub test_index: usize,
    pub claimed_speaker: u32,
    /// Cohort of the claimed speaker.
    pub group: Group,
    pub is_target: bool,
}

#[derive(Debug, Clone)]
pub struct TestUtterance {
    pub utterance_id: u32,
    pub true_speaker: u32,
    pub embedding: PooledEmbedding,
}

/// Enrollment embeddings plus the full target/impostor trial list.
#[derive(Debug, Clone)]
pub struct TrialSet {
    pub enrolled: Vec<(u32, Group, PooledEmbedding)>,
    pub tests: Vec<TestUtterance>,
    pub trials: Vec<Trial>,
}

impl TrialSet {
    pub fn num_targets(&self) -> usize {
        self.trials.iter().filter(|t| t.is_target).count()
    }

    pub fn num_impostors(&self) -> usize {
        self.trials.len() - self.num_targets()
    }
}

/// Builds the exhaustive trial grid: every test utterance against every
/// enrolled speaker, target iff the identities match.
///
/// Each speaker's enrollment embedding pools that speaker's concatenated
/// enrollment frames. Errors if a test utterance belongs to a speaker with
/// no enrollment data.
pub fn build_trials<M: BottleneckModel>(
    model: &M,
    enroll: &Dataset,
    test: &Dataset,
) -> Result<TrialSet> {
    let mut enrolled = Vec::new();
    for speaker in &enroll.speakers {
        let utts: Vec<&FrameSequence> = enroll.utterances_of(speaker.id).collect();
        if utts.is_empty() {
            continue;
        }
        let mut stacked: Vec<Matrix> = Vec::with_capacity(utts.len());
        for u in utts {
            stacked.push(model.transmitted_frames(u)?);
        }
        let total_rows: usize = stacked.iter().map(|m| m.rows()).sum();
        let mut all = Matrix::zeros(total_rows, stacked[0].cols());
        let mut row = 0;
        for m in &stacked {
            for r in 0..m.rows() {
                all.set_row(row, m.row(r));
                row += 1;
            }
        }
        enrolled.push((speaker.id, speaker.group, pool_embedding(&all)?));
    }
    if enrolled.is_empty() {
        return Err(Error::EmptyInput {
            op: "build_trials",
        });
    }

    let mut tests = Vec::new();
    for u in &test.utterances {
        if !enrolled.iter().any(|(id, _, _)| *id == u.speaker) {
            return Err(Error::Protocol {
                detail: format!(
                    "test utterance {} belongs to speaker {} with no enrollment",
                    u.utterance_id, u.speaker
                ),
            });
        }
        let frames = model.transmitted_frames(u)?;
        tests.push(TestUtterance {
            utterance_id: u.utterance_id,
            true_speaker: u.speaker,
            embedding: pool_embedding(&frames)?,
        });
    }

    let mut trials = Vec::with_capacity(tests.len() * enrolled.len());
    for (test_index, t) in tests.iter().enumerate() {
        for (speaker, group, _) in &enrolled {
            trials.push(Trial {
                test_index,
                claimed_speaker: *speaker,
                group: *group,
                is_target: *speaker == t.true_speaker,
            });
        }
    }
    if trials.iter().all(|t| t.is_target) || trials.iter().all(|t| !t.is_target) {
        return Err(Error::Protocol {
            detail: "trial set needs at least one target and one impostor".into(),
        });
    }
    Ok(TrialSet {
        enrolled,
        tests,
        trials,
    })
}

/// Trial scores, aligned with [`TrialSet::trials`].
#[derive(Debug, Clone)]
pub struct ScoredTrials {
    pub trials: Vec<Trial>,
    pub scores: Vec<f64>,
    /// Trials scored 0 because one side had an unnormalizable embedding.
    pub zero_embedding_warnings: usize,
}

impl ScoredTrials {
    pub fn target_scores(&self) -> Vec<f64> {
        self.split(|t| t.is_target).0
    }

    pub fn impostor_scores(&self) -> Vec<f64> {
        self.split(|t| t.is_target).1
    }

    /// (target, impostor) score split over trials matching `keep`.
    pub fn partition<F: Fn(&Trial) -> bool>(&self, keep: F) -> (Vec<f64>, Vec<f64>) {
        let mut targets = Vec::new();
        let mut impostors = Vec::new();
        for (t, &s) in self.trials.iter().zip(&self.scores) {
            if keep(t) {
                if t.is_target {
                    targets.push(s);
                } else {
                    impostors.push(s);
                }
            }
        }
        (targets, impostors)
    }

    fn split<F: Fn(&Trial) -> bool>(&self, is_target: F) -> (Vec<f64>, Vec<f64>) {
        let mut yes = Vec::new();
        let mut no = Vec::new();
        for (t, &s) in self.trials.iter().zip(&self.scores) {
            if is_target(t) {
                yes.push(s);
            } else {
                no.push(s);
            }
        }
        (yes, no)
    }
}

/// Cosine similarity per trial. Embeddings are already unit length, so the
/// score is a plain dot product in `[-1, 1]`; a trial touching an
/// unnormalizable embedding scores 0 and is counted as a warning.
pub fn score_trials(ts: &TrialSet) -> ScoredTrials {
    let mut scores = Vec::with_capacity(ts.trials.len());
    let mut warnings = 0;
    for trial in &ts.trials {
        let test = &ts.tests[trial.test_index].embedding;
        let enroll = &ts
            .enrolled
            .iter()
            .find(|(id, _, _)| *id == trial.claimed_speaker)
            .expect("trial references enrolled speaker")
            .2;
        if !test.normalized || !enroll.normalized {
            warnings += 1;
            scores.push(0.0);
            continue;
        }
        let dot: f64 = test.values.iter().zip(&enroll.values).map(|(a, b)| a * b).sum();
        scores.push(dot);
    }
    ScoredTrials {
        trials: ts.trials.clone(),
        scores,
        zero_embedding_warnings: warnings,
    }
}

/// EER with a percentile-bootstrap interval, resampling whole trials.
pub fn eer_with_ci(
    scored: &ScoredTrials,
    resamples: usize,
    alpha: f64,
    rng: &RngStream,
) -> Result<MetricWithCI> {
    let n = scored.trials.len();
    bootstrap_ci(
        n,
        |idx: &[usize]| {
            let mut targets = Vec::new();
            let mut impostors = Vec::new();
            for &i in idx {
                if scored.trials[i].is_target {
                    targets.push(scored.scores[i]);
                } else {
                    impostors.push(scored.scores[i]);
                }
            }
            compute_eer(&targets, &impostors)
        },
        resamples,
        alpha,
        rng,
    )
}

/// Per-utterance (errors, frames) counts for the utility metric.
pub fn utility_outcomes<M: BottleneckModel>(
    model: &M,
    sequences: &[FrameSequence],
) -> Result<Vec<(usize, usize)>> {
    sequences
        .iter()
        .map(|seq| {
            let (predictions, labels) = model.content_predictions(seq)?;
            if predictions.len() != labels.len() {
                return Err(Error::ShapeMismatch {
                    op: "utility_outcomes",
                    detail: format!(
                        "{} predictions vs {} labels",
                        predictions.len(),
                        labels.len()
                    ),
                });
            }
            let errors = predictions
                .iter()
                .zip(&labels)
                .filter(|(p, l)| p != l)
                .count();
            Ok((errors, predictions.len()))
        })
        .collect()
}

/// Fraction of bottleneck-rate frames whose predicted class differs from the
/// label, over all sequences.
pub fn utility_error<M: BottleneckModel>(
    model: &M,
    sequences: &[FrameSequence],
) -> Result<f64> {
    if sequences.is_empty() {
        return Err(Error::EmptyInput {
            op: "utility_error",
        });
    }
    let outcomes = utility_outcomes(model, sequences)?;
    Ok(error_rate(&outcomes))
}

fn error_rate(outcomes: &[(usize, usize)]) -> f64 {
    let errors: usize = outcomes.iter().map(|o| o.0).sum();
    let frames: usize = outcomes.iter().map(|o| o.1).sum();
    errors as f64 / frames as f64
}

/// Utility error with a percentile-bootstrap interval, resampling whole
/// utterances.
pub fn utility_error_with_ci(
    outcomes: &[(usize, usize)],
    resamples: usize,
    alpha: f64,
    rng: &RngStream,
) -> Result<MetricWithCI> {
    bootstrap_ci(
        outcomes.len(),
        |idx: &[usize]| {
            let picked: Vec<(usize, usize)> = idx.iter().map(|&i| outcomes[i]).collect();
            Ok(error_rate(&picked))
        },
        resamples,
        alpha,
        rng,
    )
}
