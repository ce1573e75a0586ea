//! Declarative benchmark runs.
//!
//! A run file (TOML or JSON) lists methods with their artifact paths, the
//! metrics to compute and the shared parameters. Every (method, metric) cell
//! is an independent job; a failing cell is recorded as a diagnostic and the
//! rest of the benchmark still completes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::alignment;
use crate::artifact_io::{
    load_labels, load_matrix, load_records, CountRecord, DetectionRecord, PositionalTriplet,
    RetrievalRecord,
};
use crate::calibration::{self, CalibrationSummary, Temperature, TemperatureSearch};
use crate::caption_prep::WordSetConfig;
use crate::error::{EvalError, Result};
use crate::fidelity;
use crate::ranking::{columns, default_directions, rank_table, AspectSpec, MetricTable};
use crate::report::{emit_report, Diagnostic, RankingSection, Report};

/// Exit status for a malformed run configuration.
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Is,
    IsStar,
    Fid,
    OIs,
    OFid,
    Rp,
    Soa,
    Pa,
    Ca,
    /// Not a cell: enables ranking and aspect scores.
    Rank,
}

impl Metric {
    pub const COMPUTED: [Metric; 9] = [
        Metric::IsStar,
        Metric::Fid,
        Metric::Rp,
        Metric::Soa,
        Metric::OIs,
        Metric::OFid,
        Metric::Ca,
        Metric::Pa,
        Metric::Is,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Is => "is",
            Metric::IsStar => "is_star",
            Metric::Fid => "fid",
            Metric::OIs => "o_is",
            Metric::OFid => "o_fid",
            Metric::Rp => "rp",
            Metric::Soa => "soa",
            Metric::Pa => "pa",
            Metric::Ca => "ca",
            Metric::Rank => "rank",
        }
    }

    /// Table columns this metric fills.
    pub fn columns(self) -> &'static [&'static str] {
        match self {
            Metric::Is => &[columns::IS],
            Metric::IsStar => &[columns::IS_STAR],
            Metric::Fid => &[columns::FID],
            Metric::OIs => &[columns::O_IS],
            Metric::OFid => &[columns::O_FID],
            Metric::Rp => &[columns::RP],
            Metric::Soa => &[columns::SOA_C, columns::SOA_I],
            Metric::Pa => &[columns::PA],
            Metric::Ca => &[columns::CA],
            Metric::Rank => &[],
        }
    }

    /// Artifact keys a method must provide for this metric.
    pub fn required_artifacts(self) -> &'static [&'static str] {
        match self {
            Metric::Is => &["probs"],
            Metric::IsStar => &["logits"],
            Metric::Fid => &["real_features", "gen_features"],
            Metric::OIs => &["crop_probs"],
            Metric::OFid => &["real_crop_features", "gen_crop_features"],
            Metric::Rp => &["retrieval"],
            Metric::Soa => &["detections"],
            Metric::Pa => &["triplets"],
            Metric::Ca => &["counts"],
            Metric::Rank => &[],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemperatureSource {
    Fixed(f64),
    Calibration {
        logits: PathBuf,
        labels: PathBuf,
        #[serde(default)]
        split_id: Option<String>,
        #[serde(default)]
        search: Option<TemperatureSearch>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Parameters {
    #[serde(default = "default_splits")]
    pub n_splits: usize,
    #[serde(default)]
    pub temperature: Option<TemperatureSource>,
    #[serde(default = "default_soa_threshold")]
    pub soa_threshold: f64,
    #[serde(default = "default_ece_bins")]
    pub ece_bins: usize,
    #[serde(default)]
    pub word_set: Option<PathBuf>,
}

fn default_splits() -> usize {
    fidelity::DEFAULT_SPLITS
}

fn default_soa_threshold() -> f64 {
    alignment::DEFAULT_SOA_THRESHOLD
}

fn default_ece_bins() -> usize {
    calibration::DEFAULT_ECE_BINS
}

impl Default for Parameters {
    fn default() -> Self {
        Parameters {
            n_splits: default_splits(),
            temperature: None,
            soa_threshold: default_soa_threshold(),
            ece_bins: default_ece_bins(),
            word_set: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    pub name: String,
    #[serde(default)]
    pub artifacts: BTreeMap<String, PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub metrics: Vec<Metric>,
    #[serde(default)]
    pub methods: Vec<MethodConfig>,
    /// Precomputed metric values (CSV); computed cells override them.
    #[serde(default)]
    pub table: Option<PathBuf>,
    #[serde(default)]
    pub aspect_spec: Option<PathBuf>,
    #[serde(default)]
    pub parameters: Parameters,
}

/// Configuration problems map to exit status 2.
#[derive(Debug, thiserror::Error)]
#[error("invalid run configuration: {0}")]
pub struct ConfigError(pub String);

impl RunConfig {
    /// Parses TOML or JSON (by extension, `.json` = JSON) and resolves
    /// relative paths against the config file's directory.
    pub fn load(path: impl AsRef<Path>) -> std::result::Result<RunConfig, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        let mut config: RunConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| ConfigError(e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| ConfigError(e.to_string()))?
        };
        let base = path.parent().unwrap_or(Path::new(""));
        config.resolve_paths(base);
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        if let Some(p) = self.table.as_mut() {
            fix(p);
        }
        if let Some(p) = self.aspect_spec.as_mut() {
            fix(p);
        }
        if let Some(p) = self.parameters.word_set.as_mut() {
            fix(p);
        }
        if let Some(TemperatureSource::Calibration { logits, labels, .. }) =
            self.parameters.temperature.as_mut()
        {
            fix(logits);
            fix(labels);
        }
        for method in &mut self.methods {
            method.artifacts.values_mut().for_each(fix);
        }
    }

    pub fn computed_metrics(&self) -> Vec<Metric> {
        Metric::COMPUTED
            .into_iter()
            .filter(|m| self.metrics.contains(m))
            .collect()
    }

    pub fn validate(&self) -> std::result::Result<(), ConfigError> {
        if self.metrics.is_empty() {
            return Err(ConfigError("no metrics enabled".into()));
        }
        if self.methods.is_empty() && self.table.is_none() {
            return Err(ConfigError("no methods configured".into()));
        }
        let p = &self.parameters;
        if p.n_splits == 0 || p.ece_bins == 0 {
            return Err(ConfigError(
                "n_splits and ece_bins must be at least 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&p.soa_threshold) {
            return Err(ConfigError(format!(
                "soa_threshold {} outside [0, 1]",
                p.soa_threshold
            )));
        }
        if self.metrics.contains(&Metric::IsStar) {
            match &p.temperature {
                None => return Err(ConfigError("is_star enabled without a temperature".into())),
                Some(TemperatureSource::Fixed(t)) if Temperature::new(*t).is_err() => {
                    return Err(ConfigError(format!("invalid fixed temperature {t}")))
                }
                _ => {}
            }
        }
        for (i, method) in self.methods.iter().enumerate() {
            if method.name.is_empty() {
                return Err(ConfigError(format!("method {i} has an empty name")));
            }
            if self.methods[..i].iter().any(|m| m.name == method.name) {
                return Err(ConfigError(format!("duplicate method {:?}", method.name)));
            }
            for metric in self.computed_metrics() {
                for key in metric.required_artifacts() {
                    if !method.artifacts.contains_key(*key) {
                        return Err(ConfigError(format!(
                            "method {:?} enables {} but has no `{key}` artifact",
                            method.name,
                            metric.name()
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Shared inputs resolved once per run.
#[derive(Debug, Clone)]
pub struct CellContext {
    pub n_splits: usize,
    pub temperature: Option<Temperature>,
    pub soa_threshold: f64,
    pub word_set: WordSetConfig,
}

impl CellContext {
    pub fn from_parameters(
        parameters: &Parameters,
        temperature: Option<Temperature>,
    ) -> Result<Self> {
        let word_set = match &parameters.word_set {
            Some(path) => load_word_set(path)?,
            None => WordSetConfig::default(),
        };
        Ok(CellContext {
            n_splits: parameters.n_splits,
            temperature,
            soa_threshold: parameters.soa_threshold,
            word_set,
        })
    }
}

pub fn load_word_set(path: &Path) -> Result<WordSetConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| EvalError::io(path, e))?;
    let config: WordSetConfig = serde_json::from_str(&text)
        .map_err(|e| EvalError::format(path, format!("bad word set: {e}")))?;
    config.validate()?;
    Ok(config)
}

/// One computed metric: its table values plus a JSON breakdown.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricOutput {
    pub metric: String,
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub std: Option<f64>,
    pub n: usize,
    pub config: Value,
    #[serde(skip_serializing_if = "Value::is_null")]
    pub detail: Value,
    /// Table column values (SOA fills two; percentages for SOA and PA).
    #[serde(skip)]
    pub columns: Vec<(String, f64)>,
}

fn artifact<'a>(artifacts: &'a BTreeMap<String, PathBuf>, key: &str) -> Result<&'a Path> {
    artifacts
        .get(key)
        .map(PathBuf::as_path)
        .ok_or_else(|| EvalError::Validation(format!("missing `{key}` artifact")))
}

/// Computes one metric from its artifact paths.
pub fn compute_metric(
    metric: Metric,
    artifacts: &BTreeMap<String, PathBuf>,
    ctx: &CellContext,
) -> Result<MetricOutput> {
    let single = |value: f64| vec![(metric.columns()[0].to_string(), value)];
    match metric {
        Metric::Is | Metric::OIs | Metric::IsStar => {
            let key = metric.required_artifacts()[0];
            let matrix = load_matrix(artifact(artifacts, key)?)?;
            let (score, config) = if metric == Metric::IsStar {
                let t = ctx
                    .temperature
                    .ok_or_else(|| EvalError::Validation("is_star needs a temperature".into()))?;
                (
                    fidelity::is_star(&matrix, t, ctx.n_splits)?,
                    json!({"n_splits": ctx.n_splits, "temperature": t.value()}),
                )
            } else {
                (
                    fidelity::inception_score(&matrix, ctx.n_splits)?,
                    json!({"n_splits": ctx.n_splits}),
                )
            };
            Ok(MetricOutput {
                metric: metric.name().into(),
                value: score.mean,
                std: Some(score.std),
                n: matrix.rows(),
                config,
                detail: json!({"classes": matrix.cols(), "source_id": matrix.source_id()}),
                columns: single(score.mean),
            })
        }
        Metric::Fid | Metric::OFid => {
            let keys = metric.required_artifacts();
            let real = load_matrix(artifact(artifacts, keys[0])?)?;
            let generated = load_matrix(artifact(artifacts, keys[1])?)?;
            let value = fidelity::fid(&real, &generated)?;
            Ok(MetricOutput {
                metric: metric.name().into(),
                value,
                std: None,
                n: generated.rows(),
                config: json!({"covariance": "unbiased", "negative_tolerance": fidelity::FRECHET_NEGATIVE_TOLERANCE}),
                detail: json!({"n_real": real.rows(), "n_gen": generated.rows(), "dim": real.cols()}),
                columns: single(value),
            })
        }
        Metric::Rp => {
            let records: Vec<RetrievalRecord> = load_records(artifact(artifacts, "retrieval")?)?;
            let mut tally = alignment::RpTally::default();
            records.iter().for_each(|r| tally.add(r));
            let value = tally.finish()?;
            Ok(MetricOutput {
                metric: metric.name().into(),
                value,
                std: None,
                n: tally.total,
                config: json!({"tie_rule": "strict"}),
                detail: serde_json::to_value(tally).unwrap_or(Value::Null),
                columns: single(value),
            })
        }
        Metric::Soa => {
            let records: Vec<DetectionRecord> = load_records(artifact(artifacts, "detections")?)?;
            let result = alignment::soa(&records, ctx.soa_threshold)?;
            Ok(MetricOutput {
                metric: metric.name().into(),
                value: result.soa_c,
                std: None,
                n: records.len(),
                config: json!({"score_threshold": ctx.soa_threshold}),
                columns: vec![
                    (columns::SOA_C.to_string(), 100.0 * result.soa_c),
                    (columns::SOA_I.to_string(), 100.0 * result.soa_i),
                ],
                detail: serde_json::to_value(&result).unwrap_or(Value::Null),
            })
        }
        Metric::Pa => {
            let triplets: Vec<PositionalTriplet> = load_records(artifact(artifacts, "triplets")?)?;
            let result = alignment::positional_alignment(&triplets, &ctx.word_set.words)?;
            Ok(MetricOutput {
                metric: metric.name().into(),
                value: result.pa,
                std: None,
                n: triplets.len(),
                config: json!({
                    "word_set": ctx.word_set.words,
                    "word_set_hash": ctx.word_set.word_set_hash(),
                    "empty_words": "excluded",
                    "tie_rule": "strict",
                }),
                columns: single(100.0 * result.pa),
                detail: serde_json::to_value(&result).unwrap_or(Value::Null),
            })
        }
        Metric::Ca => {
            let records: Vec<CountRecord> = load_records(artifact(artifacts, "counts")?)?;
            let value = alignment::counting_alignment(&records)?;
            Ok(MetricOutput {
                metric: metric.name().into(),
                value,
                std: None,
                n: records.len(),
                config: json!({"missing_prediction": 0.0}),
                detail: Value::Null,
                columns: single(value),
            })
        }
        Metric::Rank => Err(EvalError::Validation(
            "rank is not a per-method metric".into(),
        )),
    }
}

/// Result of [`run`]: the report written and the process exit status.
#[derive(Debug)]
pub struct RunOutcome {
    pub report: Report,
    pub exit_code: i32,
}

fn resolve_temperature(
    parameters: &Parameters,
    enabled: bool,
) -> Result<(Option<Temperature>, Option<CalibrationSummary>)> {
    if !enabled {
        return Ok((None, None));
    }
    match &parameters.temperature {
        None => Ok((None, None)),
        Some(TemperatureSource::Fixed(t)) => Ok((Some(Temperature::new(*t)?), None)),
        Some(TemperatureSource::Calibration {
            logits,
            labels,
            split_id,
            search,
        }) => {
            let matrix = load_matrix(logits)?;
            matrix.expect_role(crate::artifact_io::MatrixRole::Logits)?;
            let labels = load_labels(labels)?;
            let summary = calibration::calibrate(
                &matrix.to_rows(),
                &labels,
                search.unwrap_or_default(),
                parameters.ece_bins,
                split_id.clone(),
            )?;
            Ok((Some(Temperature::new(summary.temperature)?), Some(summary)))
        }
    }
}

/// Runs every enabled metric cell, ranks if requested and writes the report.
///
/// Returns `Err` only for fatal problems (calibration failure, unreadable
/// table, unwritable output); failing cells become diagnostics.
pub fn run(config: &RunConfig) -> Result<RunOutcome> {
    let computed = config.computed_metrics();
    let (temperature, calibration_summary) =
        resolve_temperature(&config.parameters, computed.contains(&Metric::IsStar))?;
    let ctx = CellContext::from_parameters(&config.parameters, temperature)?;

    let spec = match &config.aspect_spec {
        Some(path) => AspectSpec::from_json_path(path)?,
        None => AspectSpec::default(),
    };
    let mut directions = default_directions();
    directions.extend(spec.directions.iter().map(|(k, &v)| (k.clone(), v)));

    let mut values: IndexMap<String, IndexMap<String, f64>> = IndexMap::new();
    let mut details: IndexMap<String, IndexMap<String, Value>> = IndexMap::new();
    if let Some(path) = &config.table {
        let table = MetricTable::from_csv_path(path, &directions)?;
        for method in table.methods() {
            let row = table
                .metrics()
                .iter()
                .map(|m| (m.clone(), table.value(method, m).unwrap()))
                .collect();
            values.insert(method.clone(), row);
        }
    }
    for method in &config.methods {
        values.entry(method.name.clone()).or_default();
    }
    if values.is_empty() {
        return Err(EvalError::Validation("no methods to evaluate".into()));
    }

    let jobs: Vec<(&MethodConfig, Metric)> = config
        .methods
        .iter()
        .flat_map(|method| computed.iter().map(move |&metric| (method, metric)))
        .collect();
    let results: Vec<Result<MetricOutput>> = jobs
        .par_iter()
        .map(|(method, metric)| compute_metric(*metric, &method.artifacts, &ctx))
        .collect();

    let mut diagnostics = Vec::new();
    for ((method, metric), result) in jobs.iter().zip(results) {
        match result {
            Ok(output) => {
                let row = values.get_mut(&method.name).expect("method registered");
                for (column, value) in &output.columns {
                    row.insert(column.clone(), *value);
                }
                let detail = serde_json::to_value(&output).unwrap_or(Value::Null);
                details
                    .entry(method.name.clone())
                    .or_default()
                    .insert(metric.name().to_string(), detail);
            }
            Err(e) => {
                log::warn!("{} / {}: {e}", method.name, metric.name());
                diagnostics.push(Diagnostic {
                    method: Some(method.name.clone()),
                    metric: metric.name().to_string(),
                    message: e.to_string(),
                    exit_code: e.exit_code(),
                });
            }
        }
    }

    let methods: Vec<String> = values.keys().cloned().collect();
    let column_order: Vec<String> = columns::BENCHMARK
        .iter()
        .chain(&[columns::IS])
        .map(|c| c.to_string())
        .chain(values.values().flat_map(|row| row.keys().cloned()))
        .fold(Vec::new(), |mut acc, c| {
            if !acc.contains(&c) && values.values().any(|row| row.contains_key(&c)) {
                acc.push(c);
            }
            acc
        });

    let ranking = if config.metrics.contains(&Metric::Rank) {
        let complete: Vec<String> = column_order
            .iter()
            .filter(|c| values.values().all(|row| row.contains_key(*c)))
            .cloned()
            .collect();
        let table = MetricTable::new(
            methods.clone(),
            complete.clone(),
            values
                .values()
                .map(|row| complete.iter().map(|c| row[c]).collect())
                .collect(),
            directions.clone(),
        )
        .and_then(|table| rank_table(&table, &spec));
        match table {
            Ok(ranking) => Some(RankingSection::new(&ranking, &spec)),
            Err(e) => {
                diagnostics.push(Diagnostic {
                    method: None,
                    metric: Metric::Rank.name().to_string(),
                    message: format!("ranking skipped: {e}"),
                    exit_code: e.exit_code(),
                });
                None
            }
        }
    } else {
        None
    };

    let report = Report {
        parameters: run_manifest(config, &ctx, &spec),
        methods,
        directions: column_order
            .iter()
            .filter_map(|c| directions.get(c).map(|&d| (c.clone(), d)))
            .collect(),
        columns: column_order,
        values,
        details,
        calibration: calibration_summary,
        ranking,
        diagnostics,
    };
    emit_report(&report, &config.output_dir)?;
    let exit_code = report.diagnostics.first().map_or(0, |d| d.exit_code);
    Ok(RunOutcome { report, exit_code })
}

fn run_manifest(config: &RunConfig, ctx: &CellContext, spec: &AspectSpec) -> Value {
    json!({
        "engine": {"name": env!("CARGO_PKG_NAME"), "version": env!("CARGO_PKG_VERSION")},
        "metrics": config.metrics,
        "methods": config.methods,
        "table": config.table,
        "n_splits": ctx.n_splits,
        "split_protocol": "contiguous",
        "temperature_source": config.parameters.temperature,
        "temperature": ctx.temperature.map(Temperature::value),
        "soa_threshold": ctx.soa_threshold,
        "ece_bins": config.parameters.ece_bins,
        "word_set": ctx.word_set.words,
        "word_set_hash": ctx.word_set.word_set_hash(),
        "aspect_spec": spec,
        "rank_tie_rule": crate::report::TIE_RULE,
        "retrieval_tie_rule": "strict",
        "kl_zero_threshold": fidelity::KL_ZERO_THRESHOLD,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_toml_and_checks_artifacts() {
        let text = r#"
            output_dir = "out"
            metrics = ["fid", "rank"]
            [[methods]]
            name = "m"
            [methods.artifacts]
            real_features = "r"
        "#;
        let config: RunConfig = toml::from_str(text).unwrap();
        let err = config.validate().unwrap_err();
        assert!(err.0.contains("gen_features"), "{err}");
    }

    #[test]
    fn zero_methods_rejected() {
        let config: RunConfig = toml::from_str("output_dir = \"o\"\nmetrics = [\"rank\"]").unwrap();
        assert!(config.validate().is_err());
    }

    #[test]
    fn is_star_needs_temperature() {
        let text = r#"
            output_dir = "out"
            metrics = ["is_star"]
            [[methods]]
            name = "m"
            artifacts = { logits = "l" }
        "#;
        let mut config: RunConfig = toml::from_str(text).unwrap();
        assert!(config.validate().is_err());
        config.parameters.temperature = Some(TemperatureSource::Fixed(0.598));
        config.validate().unwrap();
        config.parameters.temperature = Some(TemperatureSource::Fixed(-1.0));
        assert!(config.validate().is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(
            toml::from_str::<RunConfig>("output_dir = \"o\"\nmetrics = [\"rank\"]\nbogus = 1")
                .is_err()
        );
    }

    #[test]
    fn relative_paths_resolve_against_config_dir() {
        let mut config: RunConfig = serde_json::from_str(
            r#"{"output_dir":"out","metrics":["rank"],"table":"t.csv",
                "methods":[{"name":"m","artifacts":{"counts":"c.jsonl"}}]}"#,
        )
        .unwrap();
        config.resolve_paths(Path::new("/base"));
        assert_eq!(config.output_dir, Path::new("/base/out"));
        assert_eq!(config.table.as_deref(), Some(Path::new("/base/t.csv")));
        assert_eq!(
            config.methods[0].artifacts["counts"],
            Path::new("/base/c.jsonl")
        );
    }
}
