//! Accuracy metrics for error-step identification and error categorization.
//!
//! Step accuracy is `100/N * Σ 1(x_i = G_step,i)`. Category accuracy is
//! reported per ground-truth category and pooled over all samples
//! ("Overall"), which equals the count-weighted mean of the per-category
//! values. Predictions that failed to parse score zero on both subtasks and
//! land in a dedicated confusion-matrix row.

mod percent;
mod report;

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::Serialize;
use thiserror::Error;

use crate::data_model::{ErrorCategory, Sample};

pub use percent::{ParsePercentError, Percent};
pub use report::{
    average_improvement, improvement_delta, render_csv, render_markdown, render_report_input,
    Column, MarkdownRow, ReportDelta, ReportInput, ReportInputError, ReportInputRow, RunReport,
    CSV_HEADER,
};

/// Anything that carries a per-sample prediction.
pub trait Prediction {
    fn sample_id(&self) -> &str;
    fn predicted_step(&self) -> Option<u32>;
    fn predicted_category(&self) -> Option<ErrorCategory>;
}

/// A bare prediction, mostly useful for tests and report tooling.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Predicted {
    pub sample_id: String,
    pub step: Option<u32>,
    pub category: Option<ErrorCategory>,
}

impl Prediction for Predicted {
    fn sample_id(&self) -> &str {
        &self.sample_id
    }
    fn predicted_step(&self) -> Option<u32> {
        self.step
    }
    fn predicted_category(&self) -> Option<ErrorCategory> {
        self.category
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AlignmentError {
    #[error("no samples to score")]
    Empty,
    #[error("no prediction for sample {0:?}")]
    Missing(String),
    #[error("prediction for unknown sample {0:?}")]
    Extra(String),
    #[error("more than one prediction for sample {0:?}")]
    Duplicate(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("category keys differ between accuracies and counts")]
pub struct KeyMismatch;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Tally {
    pub hits: u64,
    pub total: u64,
}

/// Rows are predicted categories in `ErrorCategory::ALL` order followed by
/// an "unparsed" row; columns are ground-truth categories.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub cells: [[u64; 5]; 6],
}

impl ConfusionMatrix {
    pub const UNPARSED_ROW: usize = 5;

    fn index(c: ErrorCategory) -> usize {
        ErrorCategory::ALL.iter().position(|x| *x == c).expect("known category")
    }

    pub fn get(&self, predicted: Option<ErrorCategory>, truth: ErrorCategory) -> u64 {
        let row = predicted.map_or(Self::UNPARSED_ROW, Self::index);
        self.cells[row][Self::index(truth)]
    }

    pub fn total(&self) -> u64 {
        self.cells.iter().flatten().sum()
    }

    fn add(&mut self, predicted: Option<ErrorCategory>, truth: ErrorCategory) {
        let row = predicted.map_or(Self::UNPARSED_ROW, Self::index);
        self.cells[row][Self::index(truth)] += 1;
    }
}

/// Counts accumulated over a run. Tallies merge associatively, so partial
/// runs scored on separate workers can be combined.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ScoredRun {
    pub n: u64,
    pub step_hits: u64,
    pub by_category: BTreeMap<ErrorCategory, Tally>,
    pub confusion: ConfusionMatrix,
}

impl ScoredRun {
    /// Scores one prediction against its ground-truth sample.
    pub fn record(&mut self, truth: &Sample, step: Option<u32>, category: Option<ErrorCategory>) {
        self.n += 1;
        if step == Some(truth.gt_error_step) {
            self.step_hits += 1;
        }
        let tally = self.by_category.entry(truth.gt_error_category).or_default();
        tally.total += 1;
        if category == Some(truth.gt_error_category) {
            tally.hits += 1;
        }
        self.confusion.add(category, truth.gt_error_category);
    }

    pub fn merge(&mut self, other: &ScoredRun) {
        self.n += other.n;
        self.step_hits += other.step_hits;
        for (c, t) in &other.by_category {
            let mine = self.by_category.entry(*c).or_default();
            mine.hits += t.hits;
            mine.total += t.total;
        }
        for (row, other_row) in self.confusion.cells.iter_mut().zip(other.confusion.cells.iter()) {
            for (a, b) in row.iter_mut().zip(other_row) {
                *a += b;
            }
        }
    }

    pub fn category_hits(&self) -> u64 {
        self.by_category.values().map(|t| t.hits).sum()
    }

    pub fn step_accuracy(&self) -> Percent {
        Percent::of(self.step_hits, self.n)
    }

    pub fn category_accuracy(&self) -> BTreeMap<ErrorCategory, Percent> {
        self.by_category
            .iter()
            .filter(|(_, t)| t.total > 0)
            .map(|(c, t)| (*c, Percent::of(t.hits, t.total)))
            .collect()
    }

    pub fn category_counts(&self) -> BTreeMap<ErrorCategory, u64> {
        self.by_category.iter().filter(|(_, t)| t.total > 0).map(|(c, t)| (*c, t.total)).collect()
    }

    pub fn overall_micro(&self) -> Percent {
        Percent::of(self.category_hits(), self.n)
    }
}

/// Aligns predictions with ground truth by sample id and tallies them.
pub fn score<P: Prediction>(predictions: &[P], truth: &[Sample]) -> Result<ScoredRun, AlignmentError> {
    if truth.is_empty() {
        return Err(AlignmentError::Empty);
    }
    let by_id: HashMap<&str, &Sample> = truth.iter().map(|s| (s.id.as_str(), s)).collect();
    let mut seen = HashSet::with_capacity(predictions.len());
    let mut run = ScoredRun::default();
    for p in predictions {
        let sample = by_id
            .get(p.sample_id())
            .ok_or_else(|| AlignmentError::Extra(p.sample_id().to_string()))?;
        if !seen.insert(p.sample_id()) {
            return Err(AlignmentError::Duplicate(p.sample_id().to_string()));
        }
        run.record(sample, p.predicted_step(), p.predicted_category());
    }
    if let Some(missing) = truth.iter().find(|s| !seen.contains(s.id.as_str())) {
        return Err(AlignmentError::Missing(missing.id.clone()));
    }
    Ok(run)
}

pub fn step_accuracy<P: Prediction>(predictions: &[P], truth: &[Sample]) -> Result<Percent, AlignmentError> {
    Ok(score(predictions, truth)?.step_accuracy())
}

/// Per ground-truth category; categories with no samples are absent.
pub fn category_accuracy<P: Prediction>(
    predictions: &[P],
    truth: &[Sample],
) -> Result<BTreeMap<ErrorCategory, Percent>, AlignmentError> {
    Ok(score(predictions, truth)?.category_accuracy())
}

pub fn overall_micro<P: Prediction>(predictions: &[P], truth: &[Sample]) -> Result<Percent, AlignmentError> {
    Ok(score(predictions, truth)?.overall_micro())
}

/// `Σ acc_c · n_c / Σ n_c` over matching key sets.
pub fn weighted_overall(
    per_category: &BTreeMap<ErrorCategory, Percent>,
    counts: &BTreeMap<ErrorCategory, u64>,
) -> Result<Percent, KeyMismatch> {
    if !per_category.keys().eq(counts.keys()) {
        return Err(KeyMismatch);
    }
    let total: u64 = counts.values().sum();
    if total == 0 {
        return Err(KeyMismatch);
    }
    let weighted = per_category.iter().fold(Percent::zero(), |acc, (c, pct)| {
        &acc + &pct.scale(&num_rational::BigRational::from_integer(counts[c].into()))
    });
    Ok(weighted.scale(&num_rational::BigRational::new(1.into(), total.into())))
}

/// Arithmetic mean of the step accuracy and the overall category accuracy.
pub fn average_score(step_acc: &Percent, overall_cate: &Percent) -> Percent {
    Percent::mean([step_acc, overall_cate]).expect("two values")
}
