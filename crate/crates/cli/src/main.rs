use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use t2i_eval::artifact_io::{
    load_labels, load_matrix, load_records, CaptionRecord, MatrixRole, RecordKind,
};
use t2i_eval::calibration::{self, Temperature, TemperatureSearch};
use t2i_eval::caption_prep::{build_pa_caption_sets, filter_counting_captions, NumberLexicon};
use t2i_eval::ranking::{rank_table, AspectSpec, MetricTable};
use t2i_eval::report::{emit_report, Report};
use t2i_eval::run::{
    compute_metric, load_word_set, CellContext, Metric, Parameters, RunConfig, EXIT_CONFIG,
};
use t2i_eval::EvalError;

/// Evaluation metrics for text-to-image synthesis.
#[derive(Parser)]
#[command(name = "t2i-eval", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check matrix artifacts and record files; prints PASS/FAIL per file.
    Validate {
        paths: Vec<PathBuf>,
        /// Record kind for .jsonl files (detected from the first line otherwise).
        #[arg(long, value_parser = parse_kind)]
        kind: Option<RecordKind>,
    },
    /// Fit a softmax temperature and report NLL/ECE before and after.
    Calibrate {
        #[arg(long)]
        logits: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        t_min: f64,
        #[arg(long, default_value_t = 20.0)]
        t_max: f64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long, default_value_t = calibration::DEFAULT_ECE_BINS)]
        bins: usize,
        /// Identifier of the split the labels come from, recorded verbatim.
        #[arg(long)]
        split_id: Option<String>,
    },
    /// Inception Score of a probability matrix.
    Is {
        #[arg(long)]
        probs: PathBuf,
        #[command(flatten)]
        splits: Splits,
    },
    /// Inception Score on temperature-scaled logits.
    IsStar {
        #[arg(long)]
        logits: PathBuf,
        #[command(flatten)]
        temperature: TemperatureArgs,
        #[command(flatten)]
        splits: Splits,
    },
    /// Fréchet distance between real and generated feature sets.
    Fid {
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        gen: PathBuf,
    },
    /// Inception Score over detector crops.
    OIs {
        #[arg(long)]
        crop_probs: PathBuf,
        #[command(flatten)]
        splits: Splits,
    },
    /// FID over detector-crop features.
    OFid {
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        gen: PathBuf,
    },
    /// R-precision from retrieval similarity records.
    Rp {
        #[arg(long)]
        records: PathBuf,
    },
    /// SOA-C / SOA-I from detection records.
    Soa {
        #[arg(long)]
        records: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
    /// Positional alignment from matched/mismatched triplets.
    Pa {
        #[arg(long)]
        triplets: PathBuf,
        #[arg(long)]
        word_set: Option<PathBuf>,
    },
    /// Counting alignment from count records.
    Ca {
        #[arg(long)]
        records: PathBuf,
    },
    /// Caption preparation for PA and CA.
    #[command(subcommand)]
    Prep(PrepCommand),
    /// Rank a metric table and compute aspect scores and RS.
    Rank {
        #[arg(long)]
        table: PathBuf,
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Also write report.json / report.csv here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-render report.csv from a run directory and print it.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
    /// Execute a declarative run configuration (TOML or JSON).
    Run { config: PathBuf },
}

#[derive(Subcommand)]
enum PrepCommand {
    /// Build matched/mismatched caption pairs per positional word.
    PaSets {
        #[arg(long)]
        captions: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        word_set: Option<PathBuf>,
    },
    /// Keep captions mentioning a number word or digit.
    CountCandidates {
        #[arg(long)]
        captions: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// JSON object mapping words to values.
        #[arg(long)]
        lexicon: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Splits {
    #[arg(long, default_value_t = 10)]
    splits: usize,
}

#[derive(Args)]
struct TemperatureArgs {
    #[arg(long, conflicts_with_all = ["calibration_logits", "calibration_labels"])]
    temperature: Option<f64>,
    #[arg(long, requires = "calibration_labels")]
    calibration_logits: Option<PathBuf>,
    #[arg(long, requires = "calibration_logits")]
    calibration_labels: Option<PathBuf>,
}

fn parse_kind(s: &str) -> Result<RecordKind, String> {
    serde_json::from_value(json!(s))
        .map_err(|_| "expected one of detection, retrieval, triplet, count, caption".to_string())
}

enum Failure {
    Eval(EvalError),
    Config(String),
    Status(i32),
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        Failure::Eval(e)
    }
}

type CliResult = Result<(), Failure>;

fn print_json(value: &impl serde::Serialize) -> CliResult {
    let text =
        serde_json::to_string_pretty(value).map_err(|e| EvalError::Validation(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn metric(metric: Metric, artifacts: &[(&str, &Path)], ctx: CellContext) -> CliResult {
    let artifacts: BTreeMap<String, PathBuf> = artifacts
        .iter()
        .map(|(k, p)| (k.to_string(), p.to_path_buf()))
        .collect();
    print_json(&compute_metric(metric, &artifacts, &ctx)?)
}

fn context(n_splits: usize, temperature: Option<Temperature>) -> Result<CellContext, Failure> {
    let parameters = Parameters {
        n_splits,
        ..Parameters::default()
    };
    Ok(CellContext::from_parameters(&parameters, temperature)?)
}

fn validate(paths: &[PathBuf], kind: Option<RecordKind>) -> CliResult {
    let mut failed = 0;
    for path in paths {
        let outcome = if path.extension().is_some_and(|e| e == "jsonl") {
            let kind = match kind {
                Some(k) => Ok(k),
                None => RecordKind::detect(path).and_then(|k| {
                    k.ok_or_else(|| EvalError::Validation("cannot infer record kind".into()))
                }),
            };
            kind.and_then(|k| k.validate_file(path))
                .map(|n| format!("{n} records"))
        } else {
            load_matrix(path).map(|m| format!("{}x{} {}", m.rows(), m.cols(), m.role()))
        };
        match outcome {
            Ok(summary) => println!("PASS {} ({summary})", path.display()),
            Err(e) => {
                failed += 1;
                println!("FAIL {}: {e}", path.display());
            }
        }
    }
    if failed > 0 {
        Err(Failure::Status(3))
    } else {
        Ok(())
    }
}

fn write_jsonl<T: serde::Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> CliResult {
    let file = File::create(path).map_err(|e| EvalError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut out = BufWriter::new(file);
    for item in items {
        let line =
            serde_json::to_string(&item).map_err(|e| EvalError::Validation(e.to_string()))?;
        writeln!(out, "{line}").map_err(|e| EvalError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
    }
    out.flush().map_err(|e| {
        Failure::Eval(EvalError::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

fn execute(command: Command) -> CliResult {
    match command {
        Command::Validate { paths, kind } => validate(&paths, kind),
        Command::Calibrate {
            logits,
            labels,
            t_min,
            t_max,
            tol,
            bins,
            split_id,
        } => {
            let matrix = load_matrix(&logits)?;
            matrix.expect_role(MatrixRole::Logits)?;
            let labels = load_labels(&labels)?;
            let search = TemperatureSearch { t_min, t_max, tol };
            let summary =
                calibration::calibrate(&matrix.to_rows(), &labels, search, bins, split_id)?;
            print_json(&json!({
                "temperature": summary.temperature,
                "nll_before": summary.nll_before,
                "nll_after": summary.nll_after,
                "ece_before": summary.ece_before,
                "ece_after": summary.ece_after,
                "reliability_bins": {
                    "before": summary.reliability_before,
                    "after": summary.reliability_after,
                },
                "config": {"search": summary.search, "bins": bins, "split_id": summary.split_id},
            }))
        }
        Command::Is { probs, splits } => metric(
            Metric::Is,
            &[("probs", &probs)],
            context(splits.splits, None)?,
        ),
        Command::IsStar {
            logits,
            temperature,
            splits,
        } => {
            let t =
                match (temperature.temperature, temperature.calibration_logits) {
                    (Some(t), _) => Temperature::new(t)?,
                    (None, Some(cal_logits)) => {
                        let matrix = load_matrix(&cal_logits)?;
                        matrix.expect_role(MatrixRole::Logits)?;
                        let labels = load_labels(temperature.calibration_labels.as_ref().unwrap())?;
                        calibration::fit_temperature(
                            &matrix.to_rows(),
                            &labels,
                            TemperatureSearch::default(),
                        )?
                    }
                    (None, None) => return Err(Failure::Config(
                        "is-star needs --temperature or --calibration-logits/--calibration-labels"
                            .into(),
                    )),
                };
            metric(
                Metric::IsStar,
                &[("logits", &logits)],
                context(splits.splits, Some(t))?,
            )
        }
        Command::Fid { real, gen } => metric(
            Metric::Fid,
            &[("real_features", &real), ("gen_features", &gen)],
            context(1, None)?,
        ),
        Command::OIs { crop_probs, splits } => metric(
            Metric::OIs,
            &[("crop_probs", &crop_probs)],
            context(splits.splits, None)?,
        ),
        Command::OFid { real, gen } => metric(
            Metric::OFid,
            &[("real_crop_features", &real), ("gen_crop_features", &gen)],
            context(1, None)?,
        ),
        Command::Rp { records } => {
            metric(Metric::Rp, &[("retrieval", &records)], context(1, None)?)
        }
        Command::Soa { records, threshold } => {
            let mut ctx = context(1, None)?;
            ctx.soa_threshold = threshold;
            metric(Metric::Soa, &[("detections", &records)], ctx)
        }
        Command::Pa { triplets, word_set } => {
            let mut ctx = context(1, None)?;
            if let Some(path) = word_set {
                ctx.word_set = load_word_set(&path)?;
            }
            metric(Metric::Pa, &[("triplets", &triplets)], ctx)
        }
        Command::Ca { records } => metric(Metric::Ca, &[("counts", &records)], context(1, None)?),
        Command::Prep(PrepCommand::PaSets {
            captions,
            out,
            word_set,
        }) => {
            let config = match word_set {
                Some(path) => load_word_set(&path)?,
                None => Default::default(),
            };
            let captions: Vec<CaptionRecord> = load_records(&captions)?;
            let sets = build_pa_caption_sets(&captions, &config);
            for warning in &sets.warnings {
                log::warn!("{warning}");
            }
            write_jsonl(&out, sets.sets.values().flatten())?;
            print_json(&json!({
                "pairs": sets.total_pairs(),
                "per_word": sets.counts(),
                "warnings": sets.warnings,
                "word_set_hash": config.word_set_hash(),
            }))
        }
        Command::Prep(PrepCommand::CountCandidates {
            captions,
            out,
            lexicon,
        }) => {
            let lexicon = match lexicon {
                Some(path) => {
                    let text = std::fs::read_to_string(&path).map_err(|e| EvalError::Io {
                        path: path.clone(),
                        source: e,
                    })?;
                    serde_json::from_str(&text).map_err(|e| EvalError::Format {
                        path,
                        message: e.to_string(),
                    })?
                }
                None => NumberLexicon::default(),
            };
            let captions: Vec<CaptionRecord> = load_records(&captions)?;
            let candidates: Vec<_> = filter_counting_captions(&captions, &lexicon).collect();
            write_jsonl(&out, &candidates)?;
            print_json(&json!({"captions": captions.len(), "candidates": candidates.len()}))
        }
        Command::Rank { table, spec, out } => {
            let spec = match spec {
                Some(path) => AspectSpec::from_json_path(path)?,
                None => AspectSpec::default(),
            };
            let metric_table = MetricTable::from_csv_path(&table, &spec.effective_directions())?;
            let ranking = rank_table(&metric_table, &spec)?;
            let report = Report::from_table(
                &metric_table,
                &ranking,
                &spec,
                json!({"table": table, "rank_tie_rule": t2i_eval::report::TIE_RULE}),
            );
            if let Some(dir) = out {
                emit_report(&report, dir)?;
            }
            print_json(&report.ranking)
        }
        Command::Report { run } => {
            let report = Report::load(&run)?;
            emit_report(&report, &run)?;
            print!("{}", report.to_csv()?);
            if report.diagnostics.is_empty() {
                Ok(())
            } else {
                Err(Failure::Status(report.diagnostics[0].exit_code))
            }
        }
        Command::Run { config } => {
            let config = RunConfig::load(&config).map_err(|e| Failure::Config(e.to_string()))?;
            config
                .validate()
                .map_err(|e| Failure::Config(e.to_string()))?;
            let outcome = t2i_eval::run::run(&config)?;
            for d in &outcome.report.diagnostics {
                eprintln!(
                    "{} / {}: {}",
                    d.method.as_deref().unwrap_or("-"),
                    d.metric,
                    d.message
                );
            }
            println!("{}", config.output_dir.display());
            match outcome.exit_code {
                0 => Ok(()),
                code => Err(Failure::Status(code)),
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("T2I_EVAL_LOG", "warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Status(code)) => ExitCode::from(code as u8),
        Err(Failure::Config(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(EXIT_CONFIG as u8)
        }
        Err(Failure::Eval(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
