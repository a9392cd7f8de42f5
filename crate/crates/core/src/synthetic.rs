//! Seeded generators for synthetic datasets.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data_model::{ErrorCategory, ImageRef, QuestionType, Sample};

/// Target marginals for a synthetic dataset.
#[derive(Debug, Clone)]
pub struct Marginals {
    pub by_question_type: Vec<(QuestionType, usize)>,
    pub by_error_category: Vec<(ErrorCategory, usize)>,
    pub steps_min: usize,
    pub steps_max: usize,
    pub steps_total: usize,
    pub length_min: usize,
    pub length_max: usize,
    pub length_total: usize,
}

impl Marginals {
    /// The 2,500-question reference distribution: 1559/191/233/288/229 by
    /// type, 395/912/951/119/123 by category, 3..20 steps averaging 7.6,
    /// 13..719 characters averaging 168.
    pub fn reference() -> Self {
        Self {
            by_question_type: vec![
                (QuestionType::PlaneGeometry, 1559),
                (QuestionType::SolidGeometry, 191),
                (QuestionType::Diagram, 233),
                (QuestionType::Algebra, 288),
                (QuestionType::MathCommonsense, 229),
            ],
            by_error_category: vec![
                (ErrorCategory::Vis, 395),
                (ErrorCategory::Cal, 912),
                (ErrorCategory::Reas, 951),
                (ErrorCategory::Know, 119),
                (ErrorCategory::Mis, 123),
            ],
            steps_min: 3,
            steps_max: 20,
            steps_total: 2500 * 76 / 10,
            length_min: 13,
            length_max: 719,
            length_total: 2500 * 168,
        }
    }

    pub fn total(&self) -> usize {
        self.by_question_type.iter().map(|(_, n)| n).sum()
    }
}

/// One value at `min`, one at `max`, the rest spread as evenly as possible
/// so that the sum is exactly `total`.
fn spread(n: usize, min: usize, max: usize, total: usize) -> Vec<usize> {
    assert!(n >= 2, "need room for both extremes");
    let rest = total - min - max;
    let base = rest / (n - 2);
    let extra = rest % (n - 2);
    assert!(base >= min && base < max, "total not reachable");
    let mut out = vec![min, max];
    out.extend((0..n - 2).map(|i| if i < extra { base + 1 } else { base }));
    out
}

fn expand<T: Copy>(counts: &[(T, usize)]) -> Vec<T> {
    counts.iter().flat_map(|(v, n)| std::iter::repeat_n(*v, *n)).collect()
}

const FILLER: &str = "In the figure, triangle ABC has AB = 5 and angle BAC = 45 degrees; find the length of BC. ";

fn question_of_length(idx: usize, len: usize) -> String {
    let mut text = format!("Q{idx}. ");
    text.extend(FILLER.chars().cycle().take(len.saturating_sub(text.chars().count())));
    text.chars().take(len).collect()
}

/// Builds a dataset whose marginals match `m` exactly. Pairings between
/// type, category, step count and length are shuffled by `seed`.
pub fn generate(m: &Marginals, seed: u64) -> Vec<Sample> {
    let n = m.total();
    assert_eq!(n, m.by_error_category.iter().map(|(_, c)| c).sum::<usize>());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut types = expand(&m.by_question_type);
    let mut cats = expand(&m.by_error_category);
    let mut steps = spread(n, m.steps_min, m.steps_max, m.steps_total);
    let mut lengths = spread(n, m.length_min, m.length_max, m.length_total);
    types.shuffle(&mut rng);
    cats.shuffle(&mut rng);
    steps.shuffle(&mut rng);
    lengths.shuffle(&mut rng);
    let image = ImageRef::inline(b"\x89PNG\r\n\x1a\n", "image/png");

    (0..n)
        .map(|i| {
            let n_steps = steps[i];
            Sample {
                id: format!("syn-{i:05}"),
                question_text: question_of_length(i, lengths[i]),
                image: Some(image.clone()),
                question_type: Some(types[i]),
                correct_answer: "5".into(),
                incorrect_answer: "7".into(),
                steps: (1..=n_steps).map(|k| format!("step {k}")).collect(),
                gt_error_step: (i % n_steps) as u32 + 1,
                gt_error_category: cats[i],
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spread_hits_extremes_and_total() {
        let v = spread(10, 3, 20, 76);
        assert_eq!(v.iter().sum::<usize>(), 76);
        assert_eq!(*v.iter().min().unwrap(), 3);
        assert_eq!(*v.iter().max().unwrap(), 20);
    }

    #[test]
    fn question_lengths_exact() {
        for len in [13, 168, 719] {
            assert_eq!(question_of_length(1234, len).chars().count(), len);
        }
    }

    #[test]
    fn same_seed_same_dataset() {
        let m = Marginals::reference();
        assert_eq!(generate(&m, 7), generate(&m, 7));
    }
}
