//! Configuration-driven experiment runner: trains a model per codebook size
//! (plus the no-VQ baseline), probes privacy and utility on a held-out
//! split, and assembles the tradeoff report.

mod config;
mod report;
mod sweep;

pub use config::{dump_config, parse_config, parse_config_file};
pub use report::{
    emit_csv, emit_json, format_sig, parse_report_csv, parse_report_json, TradeoffReport,
    TradeoffRow,
};
pub use sweep::{
    rebuild_report_from_raw, run_sweep, write_outputs, RowArtifacts, SweepOutcome,
};

use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::synthdata::DatasetSpec;
use crate::training::TrainConfig;

/// Which report files a sweep writes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
    Both,
}

impl OutputFormat {
    pub fn wants_csv(self) -> bool {
        matches!(self, OutputFormat::Csv | OutputFormat::Both)
    }

    pub fn wants_json(self) -> bool {
        matches!(self, OutputFormat::Json | OutputFormat::Both)
    }
}

/// Everything a sweep needs: dataset shape, training template, the list of
/// codebook sizes, evaluation split budgets, and bootstrap parameters.
///
/// The single `seed` is the only randomness source; the dataset, each row's
/// training run, and each bootstrap all use child streams derived from it by
/// name, so re-running any one row reproduces its slice of a full run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Dataset shape; its `seed` field is overwritten from `seed` at run time.
    pub data: DatasetSpec,
    /// Training template; `seed`, `codebook_size` and `vq_enabled` are set
    /// per row. The `train` subcommand uses it as-is.
    pub train: TrainConfig,
    pub codebook_sizes: Vec<usize>,
    pub include_no_vq_baseline: bool,
    /// Utterances per speaker kept for training; the rest feed evaluation.
    pub train_utterances_per_speaker: usize,
    /// Per-speaker enrollment budget in frames.
    pub enroll_frames_per_speaker: usize,
    pub bootstrap_resamples: usize,
    pub bootstrap_alpha: f64,
    pub output_dir: PathBuf,
    pub output_format: OutputFormat,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let data = DatasetSpec::default();
        let mut train = TrainConfig::default();
        train.encoder.input_dim = data.feature_dim;
        train.encoder.num_content_classes = data.num_content_classes;
        ExperimentConfig {
            seed: 42,
            data,
            train,
            codebook_sizes: vec![16, 32, 64, 128, 256],
            include_no_vq_baseline: true,
            train_utterances_per_speaker: 6,
            enroll_frames_per_speaker: 240,
            bootstrap_resamples: 1000,
            bootstrap_alpha: 0.05,
            output_dir: PathBuf::from("out"),
            output_format: OutputFormat::Both,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.train.validate()?;
        if self.codebook_sizes.is_empty() && !self.include_no_vq_baseline {
            return Err(Error::config(
                "sweep.codebook_sizes is empty and the baseline is disabled; nothing to run",
            ));
        }
        let mut sorted = self.codebook_sizes.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.codebook_sizes.len() {
            return Err(Error::config("sweep.codebook_sizes contains duplicates"));
        }
        if self.codebook_sizes.contains(&0) {
            return Err(Error::config("sweep.codebook_sizes entries must be >= 1"));
        }
        if self.train_utterances_per_speaker == 0
            || self.train_utterances_per_speaker >= self.data.utterances_per_speaker
        {
            return Err(Error::config(format!(
                "split.train_utterances_per_speaker must be in [1, {})",
                self.data.utterances_per_speaker
            )));
        }
        if self.enroll_frames_per_speaker == 0 {
            return Err(Error::config(
                "split.enroll_frames_per_speaker must be >= 1",
            ));
        }
        if self.bootstrap_resamples == 0 {
            return Err(Error::config("bootstrap.resamples must be >= 1"));
        }
        if !(self.bootstrap_alpha > 0.0 && self.bootstrap_alpha < 1.0) {
            return Err(Error::config("bootstrap.alpha must be in (0, 1)"));
        }
        if self.train.encoder.input_dim != self.data.feature_dim {
            return Err(Error::config(
                "encoder input dimension must equal data.feature_dim",
            ));
        }
        if self.train.encoder.num_content_classes != self.data.num_content_classes {
            return Err(Error::config(
                "encoder head classes must equal data.num_content_classes",
            ));
        }
        Ok(())
    }

    /// Sweep rows in report order: the baseline first, then ascending `V`.
    pub fn row_labels(&self) -> Vec<(String, Option<usize>)> {
        let mut rows = Vec::new();
        if self.include_no_vq_baseline {
            rows.push(("no_vq".to_string(), None));
        }
        let mut sizes = self.codebook_sizes.clone();
        sizes.sort_unstable();
        for v in sizes {
            rows.push((format!("v{v}"), Some(v)));
        }
        rows
    }
}
