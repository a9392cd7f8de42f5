use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use super::{ErrorCategory, QuestionType, Sample};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RangeStats {
    pub mean: f64,
    pub min: usize,
    pub max: usize,
}

impl RangeStats {
    fn over(values: impl Iterator<Item = usize>) -> Option<Self> {
        let (mut n, mut sum, mut min, mut max) = (0usize, 0u128, usize::MAX, 0usize);
        for v in values {
            n += 1;
            sum += v as u128;
            min = min.min(v);
            max = max.max(v);
        }
        (n > 0).then(|| Self { mean: sum as f64 / n as f64, min, max })
    }
}

/// Summary counts for a dataset. Samples without a question type label are
/// counted under `unlabeled_question_type`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetStats {
    pub total: usize,
    pub by_question_type: BTreeMap<QuestionType, usize>,
    pub unlabeled_question_type: usize,
    pub by_error_category: BTreeMap<ErrorCategory, usize>,
    pub step_count: RangeStats,
    pub question_length: RangeStats,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("dataset is empty")]
pub struct EmptyDataset;

pub fn dataset_stats(samples: &[Sample]) -> Result<DatasetStats, EmptyDataset> {
    let step_count = RangeStats::over(samples.iter().map(Sample::n_steps)).ok_or(EmptyDataset)?;
    let question_length =
        RangeStats::over(samples.iter().map(Sample::question_length)).ok_or(EmptyDataset)?;
    let mut by_question_type: BTreeMap<_, _> = QuestionType::ALL.iter().map(|q| (*q, 0)).collect();
    let mut by_error_category: BTreeMap<_, _> = ErrorCategory::ALL.iter().map(|c| (*c, 0)).collect();
    let mut unlabeled_question_type = 0;
    for s in samples {
        match s.question_type {
            Some(q) => *by_question_type.entry(q).or_default() += 1,
            None => unlabeled_question_type += 1,
        }
        *by_error_category.entry(s.gt_error_category).or_default() += 1;
    }
    Ok(DatasetStats {
        total: samples.len(),
        by_question_type,
        unlabeled_question_type,
        by_error_category,
        step_count,
        question_length,
    })
}

fn pct(part: usize, total: usize) -> f64 {
    100.0 * part as f64 / total as f64
}

impl fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Total questions: {}", self.total)?;
        writeln!(f, "Problem type:")?;
        for (q, n) in &self.by_question_type {
            writeln!(f, "  - {}: {} ({:.1}%)", q.display_name(), n, pct(*n, self.total))?;
        }
        if self.unlabeled_question_type > 0 {
            writeln!(f, "  - (unlabeled): {}", self.unlabeled_question_type)?;
        }
        writeln!(f, "Error category:")?;
        for (c, n) in &self.by_error_category {
            writeln!(f, "  - {}: {} ({:.1}%)", c.canonical_name(), n, pct(*n, self.total))?;
        }
        writeln!(f, "Average reasoning step: {:.1}", self.step_count.mean)?;
        writeln!(f, "Maximum reasoning step: {}", self.step_count.max)?;
        writeln!(f, "Minimum reasoning step: {}", self.step_count.min)?;
        writeln!(f, "Average question length: {:.1}", self.question_length.mean)?;
        writeln!(f, "Maximum question length: {}", self.question_length.max)?;
        write!(f, "Minimum question length: {}", self.question_length.min)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(id: &str, q: &str, steps: usize, cat: ErrorCategory) -> Sample {
        Sample {
            id: id.into(),
            question_text: q.into(),
            image: None,
            question_type: Some(QuestionType::Algebra),
            correct_answer: "1".into(),
            incorrect_answer: "2".into(),
            steps: vec!["x".into(); steps],
            gt_error_step: 1,
            gt_error_category: cat,
        }
    }

    #[test]
    fn single_sample() {
        let s = dataset_stats(&[sample("a", "abc", 3, ErrorCategory::Cal)]).unwrap();
        assert_eq!(s.step_count, RangeStats { mean: 3.0, min: 3, max: 3 });
        assert_eq!(s.total, 1);
        assert_eq!(s.by_error_category[&ErrorCategory::Cal], 1);
    }

    #[test]
    fn empty_dataset() {
        assert_eq!(dataset_stats(&[]), Err(EmptyDataset));
    }

    #[test]
    fn question_length_counts_scalar_values() {
        let s = dataset_stats(&[sample("a", "∠ABC = 45°", 1, ErrorCategory::Vis)]).unwrap();
        assert_eq!(s.question_length.min, 10);
    }
}
