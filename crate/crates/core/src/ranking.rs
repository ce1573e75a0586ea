//! Rank aggregation across methods.
//!
//! Each metric column is ranked so that the best method receives rank `N`
//! and the worst rank 1; tied values share the average of the positions they
//! cover. An aspect score is the mean rank of the aspect's member metrics and
//! the ranking score (RS) is the sum of aspect scores, which gives two-metric
//! aspects a weight of one half per metric.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{EvalError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    HigherBetter,
    LowerBetter,
}

/// Column names used by metric tables and reports.
pub mod columns {
    pub const IS: &str = "IS";
    pub const IS_STAR: &str = "IS_star";
    pub const FID: &str = "FID";
    pub const RP: &str = "RP";
    pub const SOA_C: &str = "SOA_C";
    pub const SOA_I: &str = "SOA_I";
    pub const O_IS: &str = "O_IS";
    pub const O_FID: &str = "O_FID";
    pub const CA: &str = "CA";
    pub const PA: &str = "PA";

    /// Header order of the standard benchmark table.
    pub const BENCHMARK: [&str; 9] = [IS_STAR, FID, RP, SOA_C, SOA_I, O_IS, O_FID, CA, PA];
}

pub fn default_directions() -> BTreeMap<String, Direction> {
    use columns::*;
    let lower = [FID, O_FID, CA];
    [IS, IS_STAR, FID, RP, SOA_C, SOA_I, O_IS, O_FID, CA, PA]
        .into_iter()
        .map(|m| {
            let dir = if lower.contains(&m) {
                Direction::LowerBetter
            } else {
                Direction::HigherBetter
            };
            (m.to_string(), dir)
        })
        .collect()
}

/// Methods x metrics values with a direction per metric.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricTable {
    methods: Vec<String>,
    metrics: Vec<String>,
    /// `values[method][metric]`
    values: Vec<Vec<f64>>,
    directions: BTreeMap<String, Direction>,
}

impl MetricTable {
    pub fn new(
        methods: Vec<String>,
        metrics: Vec<String>,
        values: Vec<Vec<f64>>,
        directions: BTreeMap<String, Direction>,
    ) -> Result<Self> {
        if methods.is_empty() {
            return Err(EvalError::Validation("metric table has no methods".into()));
        }
        if values.len() != methods.len() || values.iter().any(|row| row.len() != metrics.len()) {
            return Err(EvalError::Validation(format!(
                "metric table must be {} x {}",
                methods.len(),
                metrics.len()
            )));
        }
        for (i, name) in methods.iter().enumerate() {
            if methods[..i].contains(name) {
                return Err(EvalError::Validation(format!("duplicate method {name:?}")));
            }
        }
        for (j, metric) in metrics.iter().enumerate() {
            if metrics[..j].contains(metric) {
                return Err(EvalError::Validation(format!(
                    "duplicate metric {metric:?}"
                )));
            }
            if !directions.contains_key(metric) {
                return Err(EvalError::Validation(format!(
                    "no direction configured for metric {metric:?}"
                )));
            }
        }
        for (i, row) in values.iter().enumerate() {
            if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                return Err(EvalError::Validation(format!(
                    "{} / {}: non-finite value",
                    methods[i], metrics[j]
                )));
            }
        }
        Ok(MetricTable {
            methods,
            metrics,
            values,
            directions,
        })
    }

    /// Parses a CSV whose first column is `method` and the rest metric values.
    pub fn from_csv_reader<R: Read>(
        reader: R,
        directions: &BTreeMap<String, Direction>,
    ) -> Result<Self> {
        let mut csv = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header = csv
            .headers()
            .map_err(|e| EvalError::Parse {
                line: 1,
                message: e.to_string(),
            })?
            .clone();
        if header.get(0) != Some("method") {
            return Err(EvalError::Parse {
                line: 1,
                message: "first column must be `method`".into(),
            });
        }
        let metrics: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut methods = Vec::new();
        let mut values = Vec::new();
        for (index, record) in csv.records().enumerate() {
            let line = index + 2;
            let record = record.map_err(|e| EvalError::Parse {
                line,
                message: e.to_string(),
            })?;
            if record.len() != header.len() {
                return Err(EvalError::Parse {
                    line,
                    message: format!("expected {} fields, found {}", header.len(), record.len()),
                });
            }
            methods.push(record[0].to_string());
            let row = record
                .iter()
                .skip(1)
                .map(|field| {
                    field.parse::<f64>().map_err(|_| EvalError::Parse {
                        line,
                        message: format!("bad number {field:?}"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            values.push(row);
        }
        let directions = metrics
            .iter()
            .filter_map(|m| directions.get(m).map(|&d| (m.clone(), d)))
            .collect();
        MetricTable::new(methods, metrics, values, directions)
    }

    pub fn from_csv_path(
        path: impl AsRef<Path>,
        directions: &BTreeMap<String, Direction>,
    ) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| EvalError::io(path, e))?;
        Self::from_csv_reader(file, directions)
    }

    pub fn methods(&self) -> &[String] {
        &self.methods
    }

    pub fn metrics(&self) -> &[String] {
        &self.metrics
    }

    pub fn directions(&self) -> &BTreeMap<String, Direction> {
        &self.directions
    }

    pub fn direction(&self, metric: &str) -> Option<Direction> {
        self.directions.get(metric).copied()
    }

    pub fn value(&self, method: &str, metric: &str) -> Option<f64> {
        let i = self.methods.iter().position(|m| m == method)?;
        let j = self.metrics.iter().position(|m| m == metric)?;
        Some(self.values[i][j])
    }

    pub fn column(&self, metric: &str) -> Option<Vec<f64>> {
        let j = self.metrics.iter().position(|m| m == metric)?;
        Some(self.values.iter().map(|row| row[j]).collect())
    }

    /// Keeps only the named methods, in the order given.
    pub fn restrict(&self, methods: &[&str]) -> Result<MetricTable> {
        let rows = methods
            .iter()
            .map(|name| {
                self.methods
                    .iter()
                    .position(|m| m == name)
                    .map(|i| self.values[i].clone())
                    .ok_or_else(|| EvalError::Validation(format!("unknown method {name:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        MetricTable::new(
            methods.iter().map(|m| m.to_string()).collect(),
            self.metrics.clone(),
            rows,
            self.directions.clone(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Aspect {
    pub name: String,
    pub metrics: Vec<String>,
}

/// Grouping of metrics into equally weighted aspects.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AspectSpec {
    pub aspects: Vec<Aspect>,
    /// Overrides for the default metric directions.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub directions: BTreeMap<String, Direction>,
}

impl Default for AspectSpec {
    fn default() -> Self {
        use columns::*;
        let aspect = |name: &str, metrics: &[&str]| Aspect {
            name: name.to_string(),
            metrics: metrics.iter().map(|m| m.to_string()).collect(),
        };
        AspectSpec {
            aspects: vec![
                aspect("Image Realism", &[IS_STAR, FID]),
                aspect("Object Fidelity", &[O_IS, O_FID]),
                aspect("Object Accuracy", &[SOA_C, SOA_I]),
                aspect("Text Relevance", &[RP]),
                aspect("Positional Alignment", &[PA]),
                aspect("Counting Alignment", &[CA]),
            ],
            directions: BTreeMap::new(),
        }
    }
}

impl AspectSpec {
    pub fn from_json_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| EvalError::io(path, e))?;
        let spec: AspectSpec = serde_json::from_str(&text)
            .map_err(|e| EvalError::format(path, format!("bad aspect spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.aspects.is_empty() {
            return Err(EvalError::Validation("aspect spec has no aspects".into()));
        }
        for aspect in &self.aspects {
            if aspect.metrics.is_empty() {
                return Err(EvalError::Validation(format!(
                    "aspect {:?} has no metrics",
                    aspect.name
                )));
            }
        }
        Ok(())
    }

    /// Default directions with this spec's overrides applied.
    pub fn effective_directions(&self) -> BTreeMap<String, Direction> {
        let mut dirs = default_directions();
        dirs.extend(self.directions.iter().map(|(k, &v)| (k.clone(), v)));
        dirs
    }

    /// Per-metric weight inside the ranking score: `1 / |aspect|`.
    pub fn weights(&self) -> IndexMap<String, f64> {
        let mut weights = IndexMap::new();
        for aspect in &self.aspects {
            let w = 1.0 / aspect.metrics.len() as f64;
            for metric in &aspect.metrics {
                *weights.entry(metric.clone()).or_insert(0.0) += w;
            }
        }
        weights
    }
}

/// Ranks `values` so the best gets `N` and the worst 1; ties share the mean position.
pub fn rank_metric(values: &[f64], direction: Direction) -> Result<Vec<f64>> {
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(EvalError::Validation(format!(
            "value {i} is not finite: {}",
            values[i]
        )));
    }
    let goodness = |v: f64| match direction {
        Direction::HigherBetter => v,
        Direction::LowerBetter => -v,
    };
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| goodness(values[a]).total_cmp(&goodness(values[b])));

    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end share their mean
        let shared = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = shared;
        }
        start = end;
    }
    Ok(ranks)
}

/// Ranks, aspect scores and ranking scores for every method of a table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub methods: Vec<String>,
    /// metric -> rank per method (table order)
    pub ranks: IndexMap<String, Vec<f64>>,
    /// aspect -> score per method (table order)
    pub aspects: IndexMap<String, Vec<f64>>,
    pub rs: Vec<f64>,
}

impl Ranking {
    pub fn rs_of(&self, method: &str) -> Option<f64> {
        let i = self.methods.iter().position(|m| m == method)?;
        Some(self.rs[i])
    }

    pub fn aspect_of(&self, method: &str, aspect: &str) -> Option<f64> {
        let i = self.methods.iter().position(|m| m == method)?;
        Some(self.aspects.get(aspect)?[i])
    }

    pub fn rank_of(&self, method: &str, metric: &str) -> Option<f64> {
        let i = self.methods.iter().position(|m| m == method)?;
        Some(self.ranks.get(metric)?[i])
    }
}

fn metric_ranks(table: &MetricTable, spec: &AspectSpec) -> Result<IndexMap<String, Vec<f64>>> {
    spec.validate()?;
    let mut ranks = IndexMap::new();
    for metric in spec.aspects.iter().flat_map(|a| &a.metrics) {
        if ranks.contains_key(metric) {
            continue;
        }
        let column = table.column(metric).ok_or_else(|| {
            EvalError::Validation(format!("metric {metric:?} missing from table"))
        })?;
        let direction = spec
            .directions
            .get(metric)
            .copied()
            .or_else(|| table.direction(metric))
            .ok_or_else(|| EvalError::Validation(format!("no direction for {metric:?}")))?;
        ranks.insert(metric.clone(), rank_metric(&column, direction)?);
    }
    Ok(ranks)
}

fn aspects_from_ranks(
    ranks: &IndexMap<String, Vec<f64>>,
    spec: &AspectSpec,
    n: usize,
) -> IndexMap<String, Vec<f64>> {
    spec.aspects
        .iter()
        .map(|aspect| {
            let scores = (0..n)
                .map(|i| {
                    aspect.metrics.iter().map(|m| ranks[m][i]).sum::<f64>()
                        / aspect.metrics.len() as f64
                })
                .collect();
            (aspect.name.clone(), scores)
        })
        .collect()
}

/// Mean member-metric rank per (aspect, method).
pub fn aspect_scores(table: &MetricTable, spec: &AspectSpec) -> Result<IndexMap<String, Vec<f64>>> {
    let ranks = metric_ranks(table, spec)?;
    Ok(aspects_from_ranks(&ranks, spec, table.methods.len()))
}

/// Full ranking: per-metric ranks, aspect scores and RS.
pub fn rank_table(table: &MetricTable, spec: &AspectSpec) -> Result<Ranking> {
    let ranks = metric_ranks(table, spec)?;
    let n = table.methods.len();
    let aspects = aspects_from_ranks(&ranks, spec, n);
    let rs = (0..n)
        .map(|i| aspects.values().map(|s| s[i]).sum())
        .collect();
    Ok(Ranking {
        methods: table.methods.clone(),
        ranks,
        aspects,
        rs,
    })
}

/// RS per method, keyed by method name in table order.
pub fn ranking_score(table: &MetricTable, spec: &AspectSpec) -> Result<IndexMap<String, f64>> {
    let ranking = rank_table(table, spec)?;
    Ok(ranking.methods.into_iter().zip(ranking.rs).collect())
}
