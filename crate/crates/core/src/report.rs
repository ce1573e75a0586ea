//! Report assembly and emission.
//!
//! A report carries raw metric values, ranks, aspect scores, RS and the full
//! parameter set used to produce them. Output is deterministic: maps keep
//! insertion order and no timestamps are written.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::calibration::CalibrationSummary;
use crate::error::{EvalError, Result};
use crate::ranking::{AspectSpec, Direction, MetricTable, Ranking};

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";
pub const TIE_RULE: &str = "average";

/// A failed (method, metric) cell or a skipped stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub method: Option<String>,
    pub metric: String,
    pub message: String,
    pub exit_code: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingSection {
    pub aspect_spec: AspectSpec,
    pub tie_rule: String,
    /// method -> metric -> rank
    pub ranks: IndexMap<String, IndexMap<String, f64>>,
    /// method -> aspect -> score
    pub aspects: IndexMap<String, IndexMap<String, f64>>,
    pub rs: IndexMap<String, f64>,
}

impl RankingSection {
    pub fn new(ranking: &Ranking, spec: &AspectSpec) -> Self {
        let per_method = |table: &IndexMap<String, Vec<f64>>| {
            ranking
                .methods
                .iter()
                .enumerate()
                .map(|(i, method)| {
                    let row = table.iter().map(|(k, v)| (k.clone(), v[i])).collect();
                    (method.clone(), row)
                })
                .collect()
        };
        RankingSection {
            aspect_spec: spec.clone(),
            tie_rule: TIE_RULE.to_string(),
            ranks: per_method(&ranking.ranks),
            aspects: per_method(&ranking.aspects),
            rs: ranking
                .methods
                .iter()
                .cloned()
                .zip(ranking.rs.iter().copied())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    /// Everything needed to recompute the numbers from the artifacts.
    pub parameters: serde_json::Value,
    pub methods: Vec<String>,
    pub columns: Vec<String>,
    pub directions: BTreeMap<String, Direction>,
    /// method -> column -> value; failed cells are absent.
    pub values: IndexMap<String, IndexMap<String, f64>>,
    /// method -> metric -> breakdown (splits, per-class tallies, ...)
    #[serde(default)]
    pub details: IndexMap<String, IndexMap<String, serde_json::Value>>,
    pub calibration: Option<CalibrationSummary>,
    pub ranking: Option<RankingSection>,
    #[serde(default)]
    pub diagnostics: Vec<Diagnostic>,
}

impl Report {
    /// Report for a complete metric table, ranked under `spec`.
    pub fn from_table(
        table: &MetricTable,
        ranking: &Ranking,
        spec: &AspectSpec,
        parameters: serde_json::Value,
    ) -> Self {
        let values = table
            .methods()
            .iter()
            .map(|method| {
                let row = table
                    .metrics()
                    .iter()
                    .map(|metric| (metric.clone(), table.value(method, metric).unwrap()))
                    .collect();
                (method.clone(), row)
            })
            .collect();
        Report {
            parameters,
            methods: table.methods().to_vec(),
            columns: table.metrics().to_vec(),
            directions: table.directions().clone(),
            values,
            details: IndexMap::new(),
            calibration: None,
            ranking: Some(RankingSection::new(ranking, spec)),
            diagnostics: Vec::new(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self)
            .map_err(|e| EvalError::Validation(format!("report serialization: {e}")))?;
        text.push('\n');
        Ok(text)
    }

    /// Tabular view: raw values, ranks, aspect scores and RS (one decimal).
    pub fn to_csv(&self) -> Result<String> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["method".to_string()];
        header.extend(self.columns.iter().cloned());
        let (rank_columns, aspect_columns) = match &self.ranking {
            Some(r) => {
                let first = r.ranks.values().next();
                let ranks: Vec<String> = first
                    .map(|m| m.keys().cloned().collect())
                    .unwrap_or_default();
                let aspects: Vec<String> = r
                    .aspect_spec
                    .aspects
                    .iter()
                    .map(|a| a.name.clone())
                    .collect();
                (ranks, aspects)
            }
            None => (Vec::new(), Vec::new()),
        };
        header.extend(rank_columns.iter().map(|m| format!("rank_{m}")));
        header.extend(aspect_columns.iter().cloned());
        if self.ranking.is_some() {
            header.push("RS".to_string());
        }
        writer.write_record(&header).map_err(csv_error)?;

        for method in &self.methods {
            let mut row = vec![method.clone()];
            let values = self.values.get(method);
            row.extend(self.columns.iter().map(|c| {
                values
                    .and_then(|v| v.get(c))
                    .map(|v| v.to_string())
                    .unwrap_or_default()
            }));
            if let Some(ranking) = &self.ranking {
                let ranks = ranking.ranks.get(method);
                row.extend(rank_columns.iter().map(|m| {
                    ranks
                        .and_then(|r| r.get(m))
                        .map(|v| v.to_string())
                        .unwrap_or_default()
                }));
                let aspects = ranking.aspects.get(method);
                row.extend(aspect_columns.iter().map(|a| {
                    aspects
                        .and_then(|s| s.get(a))
                        .map(|v| format!("{v:.1}"))
                        .unwrap_or_default()
                }));
                row.push(
                    ranking
                        .rs
                        .get(method)
                        .map(|v| format!("{v:.1}"))
                        .unwrap_or_default(),
                );
            }
            writer.write_record(&row).map_err(csv_error)?;
        }
        let bytes = writer
            .into_inner()
            .map_err(|e| EvalError::Validation(format!("csv writer: {e}")))?;
        String::from_utf8(bytes).map_err(|e| EvalError::Validation(e.to_string()))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Report> {
        let path = dir.as_ref().join(REPORT_JSON);
        let text = fs::read_to_string(&path).map_err(|e| EvalError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| EvalError::format(&path, e.to_string()))
    }
}

fn csv_error(e: csv::Error) -> EvalError {
    EvalError::Validation(format!("csv writer: {e}"))
}

/// Writes `report.json` and `report.csv` into `dir`, returning both paths.
pub fn emit_report(report: &Report, dir: impl AsRef<Path>) -> Result<(PathBuf, PathBuf)> {
    if report.methods.is_empty() {
        return Err(EvalError::Validation("report has no methods".into()));
    }
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| EvalError::io(dir, e))?;
    let json_path = dir.join(REPORT_JSON);
    let csv_path = dir.join(REPORT_CSV);
    fs::write(&json_path, report.to_json()?).map_err(|e| EvalError::io(&json_path, e))?;
    fs::write(&csv_path, report.to_csv()?).map_err(|e| EvalError::io(&csv_path, e))?;
    Ok((json_path, csv_path))
}
