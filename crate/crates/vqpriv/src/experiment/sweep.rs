//! Running the codebook-size sweep and materializing its outputs.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::report::{emit_csv, emit_json, TradeoffReport, TradeoffRow};
use super::ExperimentConfig;
use crate::error::{Error, Result};
use crate::evaluation::{
    build_trials, compute_eer, eer_with_ci, score_trials, utility_error_with_ci,
    utility_outcomes, ScoredTrials,
};
use crate::numerics::RngStream;
use crate::synthdata::{generate, split_enroll_test, split_utterances, Dataset, DatasetSpec, Group};
use crate::training::{fit, EpochStats, TrainConfig};
use crate::vq::codebook_perplexity;

/// Raw per-row evaluation material, enough to re-derive the row's report
/// numbers without retraining: trial scores, per-utterance utility counts,
/// and the row's seed (bootstrap streams derive from it).
#[derive(Debug, Clone)]
pub struct RowArtifacts {
    pub label: String,
    pub codebook_size: Option<usize>,
    pub seed: u64,
    pub perplexity: Option<f64>,
    pub aborted: Option<String>,
    pub scored: Option<ScoredTrials>,
    /// Per test utterance: (utterance_id, frames, errors).
    pub utility: Option<Vec<(u32, usize, usize)>>,
    /// The row's training curve (not persisted; available in-process).
    pub curve: Vec<EpochStats>,
}

/// A finished sweep: the report plus the raw material behind each row.
#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub report: TradeoffReport,
    pub raw: Vec<RowArtifacts>,
}

/// Runs the full sweep: one row for the baseline (if enabled) and one per
/// codebook size, ascending. With `jobs > 1` rows run on a local thread
/// pool; each row derives all of its randomness from
/// `derive_seed(cfg.seed, label, 0)`, so parallel and serial sweeps produce
/// identical reports.
///
/// A row whose training diverges is kept in the report with an `[aborted]`
/// marker and empty metrics; any other error aborts the sweep.
pub fn run_sweep(cfg: &ExperimentConfig, jobs: usize) -> Result<SweepOutcome> {
    cfg.validate()?;
    let data_spec = DatasetSpec {
        seed: RngStream::derive_seed(cfg.seed, "dataset", 0),
        ..cfg.data.clone()
    };
    let ds = generate(&data_spec)?;
    let (train_ds, holdout) = split_utterances(&ds, cfg.train_utterances_per_speaker)?;
    let (enroll, test) = split_enroll_test(&holdout, cfg.enroll_frames_per_speaker)?;

    let rows = cfg.row_labels();
    let run = |(label, size): &(String, Option<usize>)| -> Result<RowArtifacts> {
        run_row(cfg, &train_ds, &enroll, &test, label, *size)
    };
    let artifacts: Vec<RowArtifacts> = if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::config(format!("cannot build thread pool: {e}")))?;
        pool.install(|| {
            use rayon::prelude::*;
            rows.par_iter().map(run).collect::<Result<Vec<_>>>()
        })?
    } else {
        rows.iter().map(run).collect::<Result<Vec<_>>>()?
    };

    let report = TradeoffReport {
        rows: artifacts
            .iter()
            .map(|a| row_from_artifacts(a, cfg))
            .collect::<Result<Vec<_>>>()?,
    };
    Ok(SweepOutcome {
        report,
        raw: artifacts,
    })
}

fn run_row(
    cfg: &ExperimentConfig,
    train_ds: &Dataset,
    enroll: &Dataset,
    test: &Dataset,
    label: &str,
    codebook_size: Option<usize>,
) -> Result<RowArtifacts> {
    let row_seed = RngStream::derive_seed(cfg.seed, label, 0);
    let train_cfg = TrainConfig {
        seed: row_seed,
        vq_enabled: codebook_size.is_some(),
        codebook_size: codebook_size.unwrap_or(1),
        ..cfg.train.clone()
    };
    let model = match fit(train_ds, &train_cfg) {
        Ok(m) => m,
        Err(Error::TrainingDiverged { epoch }) => {
            return Ok(RowArtifacts {
                label: label.to_string(),
                codebook_size,
                seed: row_seed,
                perplexity: None,
                aborted: Some(format!("training diverged at epoch {epoch}")),
                scored: None,
                utility: None,
                curve: Vec::new(),
            });
        }
        Err(e) => return Err(e),
    };

    let trials = build_trials(&model, enroll, test)?;
    let scored = score_trials(&trials);

    let outcomes = utility_outcomes(&model, &test.utterances)?;
    let utility: Vec<(u32, usize, usize)> = test
        .utterances
        .iter()
        .zip(&outcomes)
        .map(|(u, &(errors, frames))| (u.utterance_id, frames, errors))
        .collect();

    let perplexity = match codebook_size {
        Some(v) => {
            let mut indices = Vec::new();
            for u in &test.utterances {
                indices.extend(
                    model
                        .bottleneck_indices(u)?
                        .expect("vq model yields indices"),
                );
            }
            Some(codebook_perplexity(&indices, v)?)
        }
        None => None,
    };

    Ok(RowArtifacts {
        label: label.to_string(),
        codebook_size,
        seed: row_seed,
        perplexity,
        aborted: None,
        scored: Some(scored),
        utility: Some(utility),
        curve: model.curve,
    })
}

/// Computes a report row from raw artifacts. Shared by the sweep itself and
/// by report re-emission, so both produce identical bytes.
fn row_from_artifacts(a: &RowArtifacts, cfg: &ExperimentConfig) -> Result<TradeoffRow> {
    if let Some(_reason) = &a.aborted {
        return Ok(TradeoffRow {
            config_label: format!("{}[aborted]", a.label),
            codebook_size: a.codebook_size,
            eer: None,
            eer_ci_lo: None,
            eer_ci_hi: None,
            eer_group_a: None,
            eer_group_b: None,
            utility_err: None,
            util_ci_lo: None,
            util_ci_hi: None,
            perplexity: None,
            seed: a.seed,
        });
    }
    let scored = a.scored.as_ref().expect("non-aborted row has scores");
    let utility = a.utility.as_ref().expect("non-aborted row has utility");

    let eer_rng = RngStream::new(a.seed).child("bootstrap-eer", 0);
    let eer = eer_with_ci(scored, cfg.bootstrap_resamples, cfg.bootstrap_alpha, &eer_rng)?;

    let group_eer = |group: Group| -> Result<f64> {
        let (targets, impostors) = scored.partition(|t| t.group == group);
        compute_eer(&targets, &impostors)
    };
    let eer_a = group_eer(Group::A)?;
    let eer_b = group_eer(Group::B)?;

    let outcomes: Vec<(usize, usize)> = utility.iter().map(|&(_, f, e)| (e, f)).collect();
    let util_rng = RngStream::new(a.seed).child("bootstrap-utility", 0);
    let util = utility_error_with_ci(
        &outcomes,
        cfg.bootstrap_resamples,
        cfg.bootstrap_alpha,
        &util_rng,
    )?;

    Ok(TradeoffRow {
        config_label: a.label.clone(),
        codebook_size: a.codebook_size,
        eer: Some(eer.value),
        eer_ci_lo: Some(eer.ci_low),
        eer_ci_hi: Some(eer.ci_high),
        eer_group_a: Some(eer_a),
        eer_group_b: Some(eer_b),
        utility_err: Some(util.value),
        util_ci_lo: Some(util.ci_low),
        util_ci_hi: Some(util.ci_high),
        perplexity: a.perplexity,
        seed: a.seed,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct RawRowMeta {
    label: String,
    codebook_size: Option<usize>,
    seed: u64,
    perplexity: Option<f64>,
    aborted: Option<String>,
}

/// Writes the sweep outputs under `dir`:
///
/// ```text
/// dir/report.csv            (when the format includes csv)
/// dir/report.json           (when the format includes json)
/// dir/raw/rows.json         row metadata (label, seed, perplexity, ...)
/// dir/raw/<label>.scores.csv    trial_id,claimed_speaker,is_target,group,score
/// dir/raw/<label>.utility.csv   utterance_id,frames,errors
/// ```
///
/// Scores are written with full round-trip precision so a report rebuilt
/// from the raw files is byte-identical to the original.
pub fn write_outputs(outcome: &SweepOutcome, cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    if cfg.output_format.wants_csv() {
        fs::write(dir.join("report.csv"), emit_csv(&outcome.report))?;
    }
    if cfg.output_format.wants_json() {
        fs::write(dir.join("report.json"), emit_json(&outcome.report))?;
    }

    let raw_dir = dir.join("raw");
    fs::create_dir_all(&raw_dir)?;
    let metas: Vec<RawRowMeta> = outcome
        .raw
        .iter()
        .map(|a| RawRowMeta {
            label: a.label.clone(),
            codebook_size: a.codebook_size,
            seed: a.seed,
            perplexity: a.perplexity,
            aborted: a.aborted.clone(),
        })
        .collect();
    fs::write(
        raw_dir.join("rows.json"),
        serde_json::to_string_pretty(&metas).expect("row metadata serializes"),
    )?;

    for a in &outcome.raw {
        let Some(scored) = &a.scored else { continue };
        let mut scores = String::from("trial_id,claimed_speaker,is_target,group,score\n");
        for (i, (trial, score)) in scored.trials.iter().zip(&scored.scores).enumerate() {
            scores.push_str(&format!(
                "{i},{},{},{},{}\n",
                trial.claimed_speaker, trial.is_target, trial.group, score
            ));
        }
        fs::write(raw_dir.join(format!("{}.scores.csv", a.label)), scores)?;

        let mut utility = String::from("utterance_id,frames,errors\n");
        for &(id, frames, errors) in a.utility.as_ref().expect("scored row has utility") {
            utility.push_str(&format!("{id},{frames},{errors}\n"));
        }
        fs::write(raw_dir.join(format!("{}.utility.csv", a.label)), utility)?;
    }
    Ok(())
}

/// Rebuilds the tradeoff report from a `raw/` directory written by
/// [`write_outputs`], recomputing EER, utility, and their bootstrap
/// intervals from the stored scores. Byte-identical to the original report.
pub fn rebuild_report_from_raw(raw_dir: &Path, cfg: &ExperimentConfig) -> Result<TradeoffReport> {
    let metas: Vec<RawRowMeta> = serde_json::from_str(
        &fs::read_to_string(raw_dir.join("rows.json"))?,
    )
    .map_err(|e| Error::Parse {
        line: e.line(),
        detail: format!("rows.json: {e}"),
    })?;

    let mut rows = Vec::with_capacity(metas.len());
    for meta in metas {
        let artifacts = if meta.aborted.is_some() {
            RowArtifacts {
                label: meta.label,
                codebook_size: meta.codebook_size,
                seed: meta.seed,
                perplexity: meta.perplexity,
                aborted: meta.aborted,
                scored: None,
                utility: None,
                curve: Vec::new(),
            }
        } else {
            let scored = read_scores(&raw_dir.join(format!("{}.scores.csv", meta.label)))?;
            let utility = read_utility(&raw_dir.join(format!("{}.utility.csv", meta.label)))?;
            RowArtifacts {
                label: meta.label,
                codebook_size: meta.codebook_size,
                seed: meta.seed,
                perplexity: meta.perplexity,
                aborted: None,
                scored: Some(scored),
                utility: Some(utility),
                curve: Vec::new(),
            }
        };
        rows.push(row_from_artifacts(&artifacts, cfg)?);
    }
    Ok(TradeoffReport { rows })
}

fn read_scores(path: &Path) -> Result<ScoredTrials> {
    use crate::evaluation::Trial;
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or(Error::EmptyInput { op: "read_scores" })?;
    if header != "trial_id,claimed_speaker,is_target,group,score" {
        return Err(Error::Parse {
            line: 1,
            detail: format!("unexpected scores header in {}", path.display()),
        });
    }
    let mut trials = Vec::new();
    let mut scores = Vec::new();
    for (idx, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 2;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::Parse {
                line: lineno,
                detail: "expected 5 fields".into(),
            });
        }
        let parse_err = |what: &str| Error::Parse {
            line: lineno,
            detail: format!("bad {what}"),
        };
        let claimed: u32 = fields[1].parse().map_err(|_| parse_err("claimed_speaker"))?;
        let is_target: bool = fields[2].parse().map_err(|_| parse_err("is_target"))?;
        let group = match fields[3] {
            "A" => Group::A,
            "B" => Group::B,
            _ => return Err(parse_err("group")),
        };
        let score: f64 = fields[4].parse().map_err(|_| parse_err("score"))?;
        trials.push(Trial {
            test_index: 0, // unused when rebuilding from scores
            claimed_speaker: claimed,
            group,
            is_target,
        });
        scores.push(score);
    }
    Ok(ScoredTrials {
        trials,
        scores,
        zero_embedding_warnings: 0,
    })
}

fn read_utility(path: &Path) -> Result<Vec<(u32, usize, usize)>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or(Error::EmptyInput { op: "read_utility" })?;
    if header != "utterance_id,frames,errors" {
        return Err(Error::Parse {
            line: 1,
            detail: format!("unexpected utility header in {}", path.display()),
        });
    }
    let mut rows = Vec::new();
    for (idx, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 2;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: lineno,
                detail: "expected 3 fields".into(),
            });
        }
        let parse = |s: &str| -> Result<usize> {
            s.parse().map_err(|_| Error::Parse {
                line: lineno,
                detail: format!("bad count \"{s}\""),
            })
        };
        rows.push((parse(fields[0])? as u32, parse(fields[1])?, parse(fields[2])?));
    }
    Ok(rows)
}
