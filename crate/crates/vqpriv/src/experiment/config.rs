//! The flat `section.key = value` config format.
//!
//! One assignment per line, `#` starts a comment, keys are dotted. Unknown
//! and duplicate keys are rejected by name so typos cannot silently fall
//! back to defaults.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use super::{ExperimentConfig, OutputFormat};
use crate::error::{Error, Result};
use crate::training::CodebookUpdate;

/// Parses a config file from disk. A missing or unreadable file is a config
/// error naming the path (the CLI maps it to the config exit code).
pub fn parse_config_file(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        Error::config(format!("cannot read config file {}: {e}", path.display()))
    })?;
    parse_config(&text)
}

/// Parses config text into a fully validated [`ExperimentConfig`], filling
/// unset keys with the documented defaults.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    let mut seen: BTreeSet<String> = BTreeSet::new();

    for (idx, raw_line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = match raw_line.find('#') {
            Some(pos) => &raw_line[..pos],
            None => raw_line,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: lineno,
            detail: format!("expected `key = value`, got \"{line}\""),
        })?;
        let key = key.trim();
        let value = value.trim();
        if key.is_empty() {
            return Err(Error::Parse {
                line: lineno,
                detail: "empty key".into(),
            });
        }
        if !seen.insert(key.to_string()) {
            return Err(Error::config(format!(
                "duplicate key \"{key}\" (line {lineno})"
            )));
        }
        apply_key(&mut cfg, key, value, lineno)?;
    }

    cfg.validate()?;
    Ok(cfg)
}

fn apply_key(cfg: &mut ExperimentConfig, key: &str, value: &str, line: usize) -> Result<()> {
    let bad = |what: &str| {
        Error::config(format!(
            "key \"{key}\" (line {line}): expected {what}, got \"{value}\""
        ))
    };
    let parse_usize = |what: &str| value.parse::<usize>().map_err(|_| bad(what));
    let parse_u64 = |what: &str| value.parse::<u64>().map_err(|_| bad(what));
    let parse_u32 = |what: &str| value.parse::<u32>().map_err(|_| bad(what));
    let parse_f64 = |what: &str| value.parse::<f64>().map_err(|_| bad(what));
    let parse_bool = || match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(bad("true or false")),
    };
    let parse_usize_list = || -> Result<Vec<usize>> {
        value
            .split(',')
            .map(|s| s.trim().parse::<usize>().map_err(|_| bad("a comma-separated list of integers")))
            .collect()
    };

    match key {
        "seed" => cfg.seed = parse_u64("an unsigned integer")?,
        "data.num_speakers" => cfg.data.num_speakers = parse_usize("a positive integer")?,
        "data.num_content_classes" => {
            cfg.data.num_content_classes = parse_usize("a positive integer")?;
            cfg.train.encoder.num_content_classes = cfg.data.num_content_classes;
        }
        "data.feature_dim" => {
            cfg.data.feature_dim = parse_usize("a positive integer")?;
            cfg.train.encoder.input_dim = cfg.data.feature_dim;
        }
        "data.utterances_per_speaker" => {
            cfg.data.utterances_per_speaker = parse_usize("a positive integer")?
        }
        "data.frames_per_utterance" => {
            cfg.data.frames_per_utterance = parse_usize("a positive integer")?
        }
        "data.speaker_strength" => cfg.data.speaker_strength = parse_f64("a number")?,
        "data.noise_sigma" => cfg.data.noise_sigma = parse_f64("a number")?,
        "encoder.hidden_dims" => cfg.train.encoder.hidden_dims = parse_usize_list()?,
        "encoder.bottleneck_dim" => {
            cfg.train.encoder.bottleneck_dim = parse_usize("a positive integer")?
        }
        "encoder.context" => cfg.train.encoder.context = parse_usize("an integer")?,
        "encoder.subsample_factor" => {
            cfg.train.encoder.subsample_factor = parse_usize("a positive integer")?
        }
        "train.lambda_reg" => cfg.train.lambda_reg = parse_f64("a number")?,
        "train.learning_rate" => cfg.train.learning_rate = parse_f64("a number")?,
        "train.batch_size" => cfg.train.batch_size = parse_usize("a positive integer")?,
        "train.epochs" => cfg.train.epochs = parse_usize("an integer")?,
        "train.ema_decay" => cfg.train.ema_decay = parse_f64("a number in [0, 1]")?,
        "train.ema_smoothing" => cfg.train.ema_smoothing = parse_f64("a positive number")?,
        "train.stale_threshold" => cfg.train.stale_threshold = parse_u32("a positive integer")?,
        "train.codebook_update" => {
            cfg.train.codebook_update = match value {
                "ema" => CodebookUpdate::Ema,
                "gradient" => CodebookUpdate::Gradient,
                _ => return Err(bad("\"ema\" or \"gradient\"")),
            }
        }
        "train.codebook_size" => cfg.train.codebook_size = parse_usize("a positive integer")?,
        "train.vq_enabled" => cfg.train.vq_enabled = parse_bool()?,
        "sweep.codebook_sizes" => cfg.codebook_sizes = parse_usize_list()?,
        "sweep.include_no_vq_baseline" => cfg.include_no_vq_baseline = parse_bool()?,
        "split.train_utterances_per_speaker" => {
            cfg.train_utterances_per_speaker = parse_usize("a positive integer")?
        }
        "split.enroll_frames_per_speaker" => {
            cfg.enroll_frames_per_speaker = parse_usize("a positive integer")?
        }
        "bootstrap.resamples" => cfg.bootstrap_resamples = parse_usize("a positive integer")?,
        "bootstrap.alpha" => cfg.bootstrap_alpha = parse_f64("a number in (0, 1)")?,
        "output.dir" => cfg.output_dir = PathBuf::from(value),
        "output.format" => {
            cfg.output_format = match value {
                "csv" => OutputFormat::Csv,
                "json" => OutputFormat::Json,
                "both" => OutputFormat::Both,
                _ => return Err(bad("\"csv\", \"json\" or \"both\"")),
            }
        }
        _ => {
            return Err(Error::config(format!(
                "unknown key \"{key}\" (line {line})"
            )))
        }
    }
    Ok(())
}

/// Renders a config as canonical text: every key explicit, fixed order.
/// `parse_config(dump_config(c))` reproduces `c`.
pub fn dump_config(cfg: &ExperimentConfig) -> String {
    let list = |xs: &[usize]| {
        xs.iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(",")
    };
    let mut out = String::new();
    let mut push = |k: &str, v: String| {
        out.push_str(k);
        out.push_str(" = ");
        out.push_str(&v);
        out.push('\n');
    };
    push("seed", cfg.seed.to_string());
    push("data.num_speakers", cfg.data.num_speakers.to_string());
    push(
        "data.num_content_classes",
        cfg.data.num_content_classes.to_string(),
    );
    push("data.feature_dim", cfg.data.feature_dim.to_string());
    push(
        "data.utterances_per_speaker",
        cfg.data.utterances_per_speaker.to_string(),
    );
    push(
        "data.frames_per_utterance",
        cfg.data.frames_per_utterance.to_string(),
    );
    push("data.speaker_strength", cfg.data.speaker_strength.to_string());
    push("data.noise_sigma", cfg.data.noise_sigma.to_string());
    push("encoder.hidden_dims", list(&cfg.train.encoder.hidden_dims));
    push(
        "encoder.bottleneck_dim",
        cfg.train.encoder.bottleneck_dim.to_string(),
    );
    push("encoder.context", cfg.train.encoder.context.to_string());
    push(
        "encoder.subsample_factor",
        cfg.train.encoder.subsample_factor.to_string(),
    );
    push("train.lambda_reg", cfg.train.lambda_reg.to_string());
    push("train.learning_rate", cfg.train.learning_rate.to_string());
    push("train.batch_size", cfg.train.batch_size.to_string());
    push("train.epochs", cfg.train.epochs.to_string());
    push("train.ema_decay", cfg.train.ema_decay.to_string());
    push("train.ema_smoothing", cfg.train.ema_smoothing.to_string());
    push(
        "train.stale_threshold",
        cfg.train.stale_threshold.to_string(),
    );
    push(
        "train.codebook_update",
        match cfg.train.codebook_update {
            CodebookUpdate::Ema => "ema".to_string(),
            CodebookUpdate::Gradient => "gradient".to_string(),
        },
    );
    push("train.codebook_size", cfg.train.codebook_size.to_string());
    push("train.vq_enabled", cfg.train.vq_enabled.to_string());
    push("sweep.codebook_sizes", list(&cfg.codebook_sizes));
    push(
        "sweep.include_no_vq_baseline",
        cfg.include_no_vq_baseline.to_string(),
    );
    push(
        "split.train_utterances_per_speaker",
        cfg.train_utterances_per_speaker.to_string(),
    );
    push(
        "split.enroll_frames_per_speaker",
        cfg.enroll_frames_per_speaker.to_string(),
    );
    push("bootstrap.resamples", cfg.bootstrap_resamples.to_string());
    push("bootstrap.alpha", cfg.bootstrap_alpha.to_string());
    push("output.dir", cfg.output_dir.display().to_string());
    push(
        "output.format",
        match cfg.output_format {
            OutputFormat::Csv => "csv".to_string(),
            OutputFormat::Json => "json".to_string(),
            OutputFormat::Both => "both".to_string(),
        },
    );
    out
}
