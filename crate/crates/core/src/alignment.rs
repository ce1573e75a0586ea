//! Text-relevance and semantic-alignment metrics computed from per-sample
//! evidence: R-precision, detector-based object accuracy (SOA-C / SOA-I),
//! positional alignment and counting alignment.
//!
//! Every metric is a fold over records into a tally that can be merged, so
//! large inputs may be sharded and combined.

use std::borrow::Borrow;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::artifact_io::{CountRecord, DetectionRecord, PositionalTriplet, RetrievalRecord};
use crate::error::{EvalError, Result};
use crate::numeric::order_independent_sum;

pub const DEFAULT_SOA_THRESHOLD: f64 = 0.5;

/// True iff the ground-truth entry is strictly greater than every other entry.
pub fn retrieval_succeeds(record: &RetrievalRecord) -> bool {
    let gt = record.similarities[record.gt_index];
    record
        .similarities
        .iter()
        .enumerate()
        .all(|(i, &s)| i == record.gt_index || gt > s)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RpTally {
    pub successes: usize,
    pub total: usize,
}

impl RpTally {
    pub fn add(&mut self, record: &RetrievalRecord) {
        self.total += 1;
        self.successes += usize::from(retrieval_succeeds(record));
    }

    pub fn merge(&mut self, other: &RpTally) {
        self.successes += other.successes;
        self.total += other.total;
    }

    /// R-precision as a percentage.
    pub fn finish(&self) -> Result<f64> {
        if self.total == 0 {
            return Err(EvalError::EmptyInput("no retrieval records".into()));
        }
        Ok(100.0 * self.successes as f64 / self.total as f64)
    }
}

/// R-precision (percent) over retrieval records; ties with the ground truth fail.
pub fn r_precision<I>(records: I) -> Result<f64>
where
    I: IntoIterator,
    I::Item: Borrow<RetrievalRecord>,
{
    let mut tally = RpTally::default();
    for record in records {
        tally.add(record.borrow());
    }
    tally.finish()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassTally {
    pub hits: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoaResult {
    pub soa_c: f64,
    pub soa_i: f64,
    pub threshold: f64,
    pub per_class: BTreeMap<String, ClassTally>,
}

/// True iff some detection matches the expected class at or above `threshold`.
pub fn object_detected(record: &DetectionRecord, threshold: f64) -> bool {
    record
        .detections
        .iter()
        .any(|d| d.class == record.expected_class && d.score >= threshold)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoaTally {
    threshold: f64,
    per_class: BTreeMap<String, ClassTally>,
}

impl SoaTally {
    pub fn new(threshold: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(EvalError::Validation(format!(
                "score threshold {threshold} outside [0, 1]"
            )));
        }
        Ok(SoaTally {
            threshold,
            per_class: BTreeMap::new(),
        })
    }

    pub fn add(&mut self, record: &DetectionRecord) {
        let hit = object_detected(record, self.threshold);
        let entry = self
            .per_class
            .entry(record.expected_class.clone())
            .or_default();
        entry.total += 1;
        entry.hits += usize::from(hit);
    }

    pub fn merge(&mut self, other: &SoaTally) {
        for (class, tally) in &other.per_class {
            let entry = self.per_class.entry(class.clone()).or_default();
            entry.hits += tally.hits;
            entry.total += tally.total;
        }
    }

    pub fn finish(self) -> Result<SoaResult> {
        if self.per_class.is_empty() {
            return Err(EvalError::EmptyInput("no detection records".into()));
        }
        let classes = self.per_class.len() as f64;
        let soa_c = self
            .per_class
            .values()
            .map(|t| t.hits as f64 / t.total as f64)
            .sum::<f64>()
            / classes;
        let (hits, total) = self
            .per_class
            .values()
            .fold((0, 0), |(h, n), t| (h + t.hits, n + t.total));
        Ok(SoaResult {
            soa_c,
            soa_i: hits as f64 / total as f64,
            threshold: self.threshold,
            per_class: self.per_class,
        })
    }
}

/// Class-averaged (SOA-C) and image-averaged (SOA-I) detection recall.
pub fn soa<I>(records: I, score_threshold: f64) -> Result<SoaResult>
where
    I: IntoIterator,
    I::Item: Borrow<DetectionRecord>,
{
    let mut tally = SoaTally::new(score_threshold)?;
    for record in records {
        tally.add(record.borrow());
    }
    tally.finish()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordTally {
    pub successes: usize,
    pub triplets: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaResult {
    pub pa: f64,
    /// Only words with at least one triplet.
    pub per_word: BTreeMap<String, WordTally>,
    /// Words of the configured set that had no triplets and were left out of the mean.
    pub missing_words: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PaTally {
    words: Vec<String>,
    per_word: BTreeMap<String, WordTally>,
}

impl PaTally {
    pub fn new(word_set: &[String]) -> Self {
        PaTally {
            words: word_set.to_vec(),
            per_word: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, triplet: &PositionalTriplet) -> Result<()> {
        if !self.words.iter().any(|w| w == &triplet.word) {
            return Err(EvalError::Validation(format!(
                "triplet {:?} uses word {:?} outside the configured word set",
                triplet.triplet_id, triplet.word
            )));
        }
        let entry = self.per_word.entry(triplet.word.clone()).or_default();
        entry.triplets += 1;
        entry.successes += usize::from(triplet.sim_matched > triplet.sim_mismatched);
        Ok(())
    }

    pub fn merge(&mut self, other: &PaTally) {
        for (word, tally) in &other.per_word {
            let entry = self.per_word.entry(word.clone()).or_default();
            entry.successes += tally.successes;
            entry.triplets += tally.triplets;
        }
    }

    pub fn finish(self) -> Result<PaResult> {
        if self.per_word.is_empty() {
            return Err(EvalError::EmptyInput("no positional triplets".into()));
        }
        let mut rates = 0.0;
        let mut missing_words = Vec::new();
        for word in &self.words {
            match self.per_word.get(word) {
                Some(t) => rates += t.successes as f64 / t.triplets as f64,
                None => missing_words.push(word.clone()),
            }
        }
        if !missing_words.is_empty() {
            log::warn!(
                "positional alignment: no triplets for {} word(s): {}",
                missing_words.len(),
                missing_words.join(", ")
            );
        }
        Ok(PaResult {
            pa: rates / self.per_word.len() as f64,
            per_word: self.per_word,
            missing_words,
        })
    }
}

/// Positional alignment: mean per-word rate of matched-over-mismatched wins.
pub fn positional_alignment<I>(triplets: I, word_set: &[String]) -> Result<PaResult>
where
    I: IntoIterator,
    I::Item: Borrow<PositionalTriplet>,
{
    let mut tally = PaTally::new(word_set);
    for triplet in triplets {
        tally.add(triplet.borrow())?;
    }
    tally.finish()
}

/// RMSE over the annotated classes of one record; absent predictions count as 0.
pub fn record_rmse(record: &CountRecord) -> f64 {
    let squared: f64 = record
        .gt_counts
        .iter()
        .map(|(class, &gt)| {
            let pred = record.pred_counts.get(class).copied().unwrap_or(0.0);
            (pred - gt).powi(2)
        })
        .sum();
    (squared / record.gt_counts.len() as f64).sqrt()
}

/// Holds per-record errors so the final mean does not depend on record order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CaTally {
    errors: Vec<f64>,
}

impl CaTally {
    pub fn add(&mut self, record: &CountRecord) {
        self.errors.push(record_rmse(record));
    }

    pub fn merge(&mut self, other: &CaTally) {
        self.errors.extend_from_slice(&other.errors);
    }

    pub fn len(&self) -> usize {
        self.errors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn finish(self) -> Result<f64> {
        if self.errors.is_empty() {
            return Err(EvalError::EmptyInput("no count records".into()));
        }
        let n = self.errors.len() as f64;
        Ok(order_independent_sum(self.errors) / n)
    }
}

/// Counting alignment: mean per-record count RMSE (lower is better).
pub fn counting_alignment<I>(records: I) -> Result<f64>
where
    I: IntoIterator,
    I::Item: Borrow<CountRecord>,
{
    let mut tally = CaTally::default();
    for record in records {
        tally.add(record.borrow());
    }
    tally.finish()
}
