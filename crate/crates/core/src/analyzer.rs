//! Final agent step: text-only integration and (step, category) prediction.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::backend::{Backend, BackendError, CallLog, ModelRequest, PhaseTag};
use crate::data_model::{parse_category, ErrorCategory, Sample};
use crate::prompts::{vars, PromptId, PromptSet};
use crate::visual::VisualTranscript;

/// Visual section used when the transcription step was bypassed.
pub const BYPASS_SENTENCE: &str = "The image is fully described by the problem text.";
/// Visual section for samples that have no image at all.
pub const NO_IMAGE_SENTENCE: &str = "The problem has no image.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalyzerOutput {
    pub error_step: Option<u32>,
    pub error_category: Option<ErrorCategory>,
    pub raw_text: String,
    pub parse_ok: bool,
}

impl AnalyzerOutput {
    /// Both fields, or `None` unless parsing succeeded.
    pub fn prediction(&self) -> Option<(u32, ErrorCategory)> {
        if self.parse_ok {
            self.error_step.zip(self.error_category)
        } else {
            None
        }
    }
}

static STEP_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)error[\s_]*step[\s*_]*[:：]?[\s*_]*(?:#\s*|step\s*)?(\d+(?:\.\d+)?)").unwrap()
});

static CATEGORY_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)error[\s_]*category[\s*_]*[:：][\s*_]*([^\n,;]*)").unwrap());

fn resolve_category(raw: &str) -> Option<ErrorCategory> {
    let cleaned = raw.trim().trim_matches(|c: char| c == '*' || c == '`' || c == '"' || c.is_whitespace());
    if let Ok(c) = parse_category(cleaned) {
        return Some(c);
    }
    // "Calculation Error (CAL)" or "CAL (calculation)"
    let (head, tail) = cleaned.split_once('(')?;
    let inner = tail.split(')').next().unwrap_or("");
    parse_category(head).or_else(|_| parse_category(inner)).ok()
}

/// Total, case-insensitive parse of an analyzer reply. The first
/// `Error Step` and the first `Error Category` match are used; a step outside
/// `1..=n_steps` or written as a decimal makes the parse fail.
pub fn parse_analyzer_output(raw_text: &str, n_steps: usize) -> AnalyzerOutput {
    let error_step = STEP_RE
        .captures(raw_text)
        .and_then(|c| c[1].parse::<u32>().ok())
        .filter(|&k| k >= 1 && (k as usize) <= n_steps);
    let error_category = CATEGORY_RE.captures(raw_text).and_then(|c| resolve_category(&c[1]));
    AnalyzerOutput {
        error_step,
        error_category,
        raw_text: raw_text.to_string(),
        parse_ok: error_step.is_some() && error_category.is_some(),
    }
}

pub fn render_steps(steps: &[String]) -> String {
    steps.iter().enumerate().map(|(i, s)| format!("Step {}: {}", i + 1, s.trim())).collect::<Vec<_>>().join("\n")
}

/// Builds the analyzer prompts for one sample.
pub struct Analyzer<'a> {
    pub backend: &'a dyn Backend,
    pub prompts: &'a PromptSet,
    /// Leaves the problem text out of the prompt.
    pub omit_question_text: bool,
}

impl<'a> Analyzer<'a> {
    pub fn new(backend: &'a dyn Backend, prompts: &'a PromptSet) -> Self {
        Self { backend, prompts, omit_question_text: false }
    }

    pub fn build_prompt(&self, sample: &Sample, transcript: Option<&VisualTranscript>) -> ModelRequest {
        let visual = match (transcript, &sample.image) {
            (Some(t), _) => t.render(),
            (None, Some(_)) => BYPASS_SENTENCE.to_string(),
            (None, None) => NO_IMAGE_SENTENCE.to_string(),
        };
        let question = if self.omit_question_text { "" } else { sample.question_text.as_str() };
        let asset = self.prompts.get(PromptId::Phase3Analyzer);
        let v = vars(&[
            ("question_text", question),
            ("visual", &visual),
            ("correct_answer", &sample.correct_answer),
            ("student_answer", &sample.incorrect_answer),
            ("steps", &render_steps(&sample.steps)),
            ("n_steps", &sample.n_steps().to_string()),
        ]);
        ModelRequest::new(self.backend.model_id(), self.backend.decoding(), asset.system.render(&v))
            .text(asset.user.render(&v))
            .tagged(PhaseTag::Phase3, &sample.id)
    }

    fn reminder(&self, sample: &Sample) -> String {
        let v = vars(&[("n_steps", &sample.n_steps().to_string())]);
        self.prompts.get(PromptId::Phase3Analyzer).reminder.as_ref().map(|t| t.render(&v)).unwrap_or_default()
    }

    /// At most two calls: the prompt, then one re-ask with a format reminder.
    pub fn analyze(
        &self,
        sample: &Sample,
        transcript: Option<&VisualTranscript>,
        log: &mut CallLog,
    ) -> Result<AnalyzerOutput, BackendError> {
        let request = self.build_prompt(sample, transcript);
        let first = log.complete(self.backend, PhaseTag::Phase3, &request)?;
        let out = parse_analyzer_output(&first.text, sample.n_steps());
        if out.parse_ok {
            return Ok(out);
        }
        let retry = request.text(self.reminder(sample));
        let second = log.complete(self.backend, PhaseTag::Phase3, &retry)?;
        Ok(parse_analyzer_output(&second.text, sample.n_steps()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{Script, ScriptEntry, ScriptedBackend, Segment};
    use crate::data_model::ImageRef;

    #[test]
    fn canonical_example() {
        let out = parse_analyzer_output("Error Step: #3\nError Category: Calculation", 7);
        assert_eq!((out.error_step, out.error_category, out.parse_ok), (Some(3), Some(ErrorCategory::Cal), true));
        let out = parse_analyzer_output("error step: 1, error category: VIS", 3);
        assert_eq!(out.prediction(), Some((1, ErrorCategory::Vis)));
    }

    #[test]
    fn range_and_decimals() {
        assert!(!parse_analyzer_output("Error Step: 8\nError Category: CAL", 7).parse_ok);
        assert!(!parse_analyzer_output("Error Step: 0\nError Category: CAL", 7).parse_ok);
        assert!(!parse_analyzer_output("Error Step: 2.5\nError Category: CAL", 7).parse_ok);
        let out = parse_analyzer_output("**Error Step:** Step 2\n**Error Category:** Calculation Error (CAL)", 3);
        assert_eq!(out.prediction(), Some((2, ErrorCategory::Cal)));
    }

    fn sample() -> Sample {
        Sample {
            id: "a1".into(),
            question_text: "Compute 2 + 3 * 4.".into(),
            image: Some(ImageRef::inline(b"png", "image/png")),
            question_type: None,
            correct_answer: "14".into(),
            incorrect_answer: "20".into(),
            steps: vec!["2 + 3 = 5".into(), "5 * 4 = 20".into(), "Answer 20".into()],
            gt_error_step: 1,
            gt_error_category: ErrorCategory::Reas,
        }
    }

    #[test]
    fn prompt_is_text_only_with_bypass_sentence() {
        let b = ScriptedBackend::new(Script::default());
        let prompts = PromptSet::builtin();
        let req = Analyzer::new(&b, &prompts).build_prompt(&sample(), None);
        assert_eq!(req.image_count(), 0);
        let text = req.full_text();
        assert!(text.contains("Step 3: Answer 20"));
        assert!(text.contains(BYPASS_SENTENCE));
        assert!(text.contains("Compute 2 + 3 * 4."));

        let omit = Analyzer { omit_question_text: true, ..Analyzer::new(&b, &prompts) };
        let text = omit.build_prompt(&sample(), None).full_text();
        assert!(!text.contains("Compute 2 + 3 * 4."));
        assert!(!text.contains("Problem:"));
    }

    fn analyze_with(replies: &[&str]) -> (AnalyzerOutput, CallLog) {
        let b = ScriptedBackend::new(Script {
            entries: vec![ScriptEntry::new("phase3", "*", replies)],
            ..Script::default()
        });
        let prompts = PromptSet::builtin();
        let mut log = CallLog::default();
        let out = Analyzer::new(&b, &prompts).analyze(&sample(), None, &mut log).unwrap();
        (out, log)
    }

    #[test]
    fn reask_contract() {
        let (out, log) = analyze_with(&["Error Step: #3\nError Category: Calculation"]);
        assert_eq!(out.prediction(), Some((3, ErrorCategory::Cal)));
        assert_eq!(log.calls.len(), 1);

        let (out, log) = analyze_with(&["garbage"]);
        assert!(!out.parse_ok);
        assert_eq!(log.calls.len(), 2);

        let (out, log) = analyze_with(&["garbage", "Error Step: 1\nError Category: REAS"]);
        assert_eq!(out.prediction(), Some((1, ErrorCategory::Reas)));
        assert_eq!(log.calls.len(), 2);
        assert_ne!(log.calls[0].fingerprint, log.calls[1].fingerprint);
    }

    #[test]
    fn reask_appends_reminder_segment() {
        let b = ScriptedBackend::new(Script::default());
        let prompts = PromptSet::builtin();
        let a = Analyzer::new(&b, &prompts);
        let reminder = a.reminder(&sample());
        assert!(reminder.contains("from 1 to 3"));
        assert!(matches!(a.build_prompt(&sample(), None).text(reminder).segments.last(), Some(Segment::Text(_))));
    }
}
