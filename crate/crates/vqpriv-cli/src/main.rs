//! `vqpriv` — experiment runner for vector-quantized bottleneck privacy.
//!
//! Exit codes: 0 success, 1 config error, 2 runtime/training error,
//! 3 I/O error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use vqpriv::error::Error;
use vqpriv::experiment::{
    dump_config, emit_csv, emit_json, parse_config_file, rebuild_report_from_raw, run_sweep,
    write_outputs, ExperimentConfig, OutputFormat, TradeoffReport,
};
use vqpriv::numerics::RngStream;
use vqpriv::synthdata::{export_csv, generate, split_enroll_test, split_utterances, DatasetSpec};
use vqpriv::training::{export_curve_csv, fit, TrainConfig, TrainedModel};

#[derive(Parser)]
#[command(
    name = "vqpriv",
    version,
    about = "Train vector-quantized bottleneck encoders and measure the privacy/utility tradeoff"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
    Both,
}

impl From<Format> for OutputFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => OutputFormat::Csv,
            Format::Json => OutputFormat::Json,
            Format::Both => OutputFormat::Both,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Export the synthetic corpus described by the config as CSV.
    GenData {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the single configuration in the config file (train.codebook_size,
    /// train.vq_enabled) and save the model snapshot and training curve.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (defaults to the config's output.dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and evaluate the baseline plus every codebook size, then emit
    /// the tradeoff report and raw score files.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Report format (defaults to the config's output.format).
        #[arg(long, value_enum)]
        format: Option<Format>,
        /// Worker threads for sweep rows (1 = serial; results are identical).
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Re-evaluate a saved model snapshot on the config's evaluation split.
    Eval {
        /// Model snapshot written by `train`.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-emit the tradeoff report from a sweep's saved raw scores.
    Report {
        /// The `raw/` directory written by `sweep`.
        #[arg(long)]
        raw: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        format: Option<Format>,
    },
    /// Parse the config, apply defaults, and print the canonical form.
    ShowConfig {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match &e {
                Error::Config { .. } | Error::Parse { .. } => 1,
                Error::Io(_) => 3,
                _ => 2,
            };
            ExitCode::from(code)
        }
    }
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig, Error> {
    let mut cfg = parse_config_file(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

/// Dataset generation shared by every subcommand: the corpus seed is derived
/// from the experiment seed under the label "dataset", so all subcommands
/// (and every sweep row) see the same corpus.
fn build_dataset(cfg: &ExperimentConfig) -> Result<vqpriv::synthdata::Dataset, Error> {
    let spec = DatasetSpec {
        seed: RngStream::derive_seed(cfg.seed, "dataset", 0),
        ..cfg.data.clone()
    };
    generate(&spec)
}

/// Label and per-row seed for a single-model configuration, matching the
/// sweep's naming so `train` + `eval` reproduce the corresponding sweep row.
fn row_identity(cfg: &ExperimentConfig) -> (String, u64) {
    let label = if cfg.train.vq_enabled {
        format!("v{}", cfg.train.codebook_size)
    } else {
        "no_vq".to_string()
    };
    let seed = RngStream::derive_seed(cfg.seed, &label, 0);
    (label, seed)
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::GenData { config, seed, out } => {
            let cfg = load_config(&config, seed)?;
            let ds = build_dataset(&cfg)?;
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            let mut buf = Vec::new();
            export_csv(&ds, &mut buf)?;
            fs::write(&out, buf)?;
            println!(
                "wrote {} utterances ({} frames) to {}",
                ds.utterances.len(),
                ds.total_frames(),
                out.display()
            );
            Ok(())
        }
        Command::Train {
            config,
            seed,
            out,
        } => {
            let cfg = load_config(&config, seed)?;
            let out = out.unwrap_or_else(|| cfg.output_dir.clone());
            let ds = build_dataset(&cfg)?;
            let (train_ds, _) = split_utterances(&ds, cfg.train_utterances_per_speaker)?;
            let (label, row_seed) = row_identity(&cfg);
            let train_cfg = TrainConfig {
                seed: row_seed,
                ..cfg.train.clone()
            };
            let model = fit(&train_ds, &train_cfg)?;
            fs::create_dir_all(&out)?;
            fs::write(out.join("model.json"), model.to_json())?;
            let mut curve = Vec::new();
            export_curve_csv(&model.curve, &mut curve)?;
            fs::write(out.join("curve.csv"), curve)?;
            println!(
                "trained {label} for {} epochs; snapshot in {}",
                model.curve.len(),
                out.display()
            );
            Ok(())
        }
        Command::Sweep {
            config,
            seed,
            out,
            format,
            jobs,
        } => {
            let mut cfg = load_config(&config, seed)?;
            if let Some(dir) = out {
                cfg.output_dir = dir;
            }
            if let Some(f) = format {
                cfg.output_format = f.into();
            }
            let outcome = run_sweep(&cfg, jobs.max(1))?;
            let dir = cfg.output_dir.clone();
            write_outputs(&outcome, &cfg, &dir)?;
            print_report(&outcome.report);
            println!("report written to {}", dir.display());
            Ok(())
        }
        Command::Eval {
            model,
            config,
            seed,
            out,
        } => {
            let cfg = load_config(&config, seed)?;
            let snapshot = fs::read_to_string(&model)?;
            let model = TrainedModel::from_json(&snapshot)?;
            let report = evaluate_model(&model, &cfg)?;
            print_report(&report);
            if let Some(dir) = out {
                fs::create_dir_all(&dir)?;
                if cfg.output_format.wants_csv() {
                    fs::write(dir.join("eval_report.csv"), emit_csv(&report))?;
                }
                if cfg.output_format.wants_json() {
                    fs::write(dir.join("eval_report.json"), emit_json(&report))?;
                }
            }
            Ok(())
        }
        Command::Report {
            raw,
            config,
            seed,
            out,
            format,
        } => {
            let mut cfg = load_config(&config, seed)?;
            if let Some(dir) = out {
                cfg.output_dir = dir;
            }
            if let Some(f) = format {
                cfg.output_format = f.into();
            }
            let report = rebuild_report_from_raw(&raw, &cfg)?;
            fs::create_dir_all(&cfg.output_dir)?;
            if cfg.output_format.wants_csv() {
                fs::write(cfg.output_dir.join("report.csv"), emit_csv(&report))?;
            }
            if cfg.output_format.wants_json() {
                fs::write(cfg.output_dir.join("report.json"), emit_json(&report))?;
            }
            print_report(&report);
            println!("report rebuilt into {}", cfg.output_dir.display());
            Ok(())
        }
        Command::ShowConfig { config, seed } => {
            let cfg = load_config(&config, seed)?;
            print!("{}", dump_config(&cfg));
            Ok(())
        }
    }
}

/// Evaluates a saved model exactly like the sweep row with the same label.
fn evaluate_model(
    model: &TrainedModel,
    cfg: &ExperimentConfig,
) -> Result<TradeoffReport, Error> {
    use vqpriv::evaluation::{
        build_trials, compute_eer, eer_with_ci, score_trials, utility_error_with_ci,
        utility_outcomes,
    };
    use vqpriv::synthdata::Group;
    use vqpriv::vq::codebook_perplexity;

    let ds = build_dataset(cfg)?;
    let (_, holdout) = split_utterances(&ds, cfg.train_utterances_per_speaker)?;
    let (enroll, test) = split_enroll_test(&holdout, cfg.enroll_frames_per_speaker)?;

    let codebook_size = model.codebook.as_ref().map(|cb| cb.size());
    let label = match codebook_size {
        Some(v) => format!("v{v}"),
        None => "no_vq".to_string(),
    };
    let row_seed = RngStream::derive_seed(cfg.seed, &label, 0);

    let trials = build_trials(model, &enroll, &test)?;
    let scored = score_trials(&trials);
    let eer_rng = RngStream::new(row_seed).child("bootstrap-eer", 0);
    let eer = eer_with_ci(&scored, cfg.bootstrap_resamples, cfg.bootstrap_alpha, &eer_rng)?;
    let (ta, ia) = scored.partition(|t| t.group == Group::A);
    let (tb, ib) = scored.partition(|t| t.group == Group::B);

    let outcomes_raw = utility_outcomes(model, &test.utterances)?;
    let outcomes: Vec<(usize, usize)> = outcomes_raw.iter().map(|&(e, f)| (e, f)).collect();
    let util_rng = RngStream::new(row_seed).child("bootstrap-utility", 0);
    let util = utility_error_with_ci(
        &outcomes,
        cfg.bootstrap_resamples,
        cfg.bootstrap_alpha,
        &util_rng,
    )?;

    let perplexity = match codebook_size {
        Some(v) => {
            let mut indices = Vec::new();
            for u in &test.utterances {
                indices.extend(model.bottleneck_indices(u)?.expect("vq model"));
            }
            Some(codebook_perplexity(&indices, v)?)
        }
        None => None,
    };

    Ok(TradeoffReport {
        rows: vec![vqpriv::experiment::TradeoffRow {
            config_label: label,
            codebook_size,
            eer: Some(eer.value),
            eer_ci_lo: Some(eer.ci_low),
            eer_ci_hi: Some(eer.ci_high),
            eer_group_a: Some(compute_eer(&ta, &ia)?),
            eer_group_b: Some(compute_eer(&tb, &ib)?),
            utility_err: Some(util.value),
            util_ci_lo: Some(util.ci_low),
            util_ci_hi: Some(util.ci_high),
            perplexity,
            seed: row_seed,
        }],
    })
}

fn print_report(report: &TradeoffReport) {
    for row in &report.rows {
        match (row.eer, row.utility_err) {
            (Some(eer), Some(util)) => println!(
                "{:>16}  EER {:.3} [{:.3}, {:.3}]  utility_err {:.3} [{:.3}, {:.3}]",
                row.config_label,
                eer,
                row.eer_ci_lo.unwrap_or(f64::NAN),
                row.eer_ci_hi.unwrap_or(f64::NAN),
                util,
                row.util_ci_lo.unwrap_or(f64::NAN),
                row.util_ci_hi.unwrap_or(f64::NAN),
            ),
            _ => println!("{:>16}  (aborted)", row.config_label),
        }
    }
}
