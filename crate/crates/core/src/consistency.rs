//! Image/text consistency check, the first agent step.

use serde::{Deserialize, Serialize};

use crate::backend::{Backend, BackendError, CallLog, ModelRequest, PhaseTag};
use crate::data_model::Sample;
use crate::prompts::{vars, PromptId, PromptSet};

const TOKEN: &str = "consistent";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsistencyVerdict {
    pub consistent: bool,
    pub raw_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence_note: Option<String>,
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '\'' || c == '\u{2019}'
}

fn negates(word: &str) -> bool {
    word == "not" || word == "in" || word.ends_with("n't") || word.ends_with("n\u{2019}t")
}

/// True iff `raw_text` holds "consistent" (any case) at least once without
/// a negation: "in" or "not" directly before it in the same word, or a
/// previous word of "not", "in" or an "n't" contraction. Words are split on
/// anything that is not alphanumeric or an apostrophe, so `NOT_CONSISTENT`
/// reads as two words.
pub fn parse_verdict(raw_text: &str) -> bool {
    let lower = raw_text.to_lowercase();
    let mut previous: Option<&str> = None;
    for word in lower.split(|c: char| !is_word_char(c)).filter(|w| !w.is_empty()) {
        for (pos, _) in word.match_indices(TOKEN) {
            let prefix = &word[..pos];
            let negated = if prefix.is_empty() {
                previous.is_some_and(negates)
            } else {
                prefix.ends_with("in") || prefix.ends_with("not")
            };
            if !negated {
                return true;
            }
        }
        previous = Some(word);
    }
    false
}

/// Whatever follows the first verdict token, stripped of separators.
fn confidence_note(raw_text: &str) -> Option<String> {
    let lower = raw_text.to_lowercase();
    let at = lower.find(TOKEN)? + TOKEN.len();
    // Lowercasing can shift byte offsets for some scripts; fall back to none.
    let rest = raw_text.get(at..)?;
    let note = rest.trim_start_matches(|c: char| c.is_whitespace() || "-\u{2014}\u{2013}:;,.!".contains(c)).trim();
    (!note.is_empty()).then(|| note.to_string())
}

pub fn consistency_request(sample: &Sample, backend: &dyn Backend, prompts: &PromptSet) -> Option<ModelRequest> {
    let image = sample.image.clone()?;
    let asset = prompts.get(PromptId::Phase1Consistency);
    let v = vars(&[("question_text", &sample.question_text)]);
    Some(
        ModelRequest::new(backend.model_id(), backend.decoding(), asset.system.render(&v))
            .text(asset.user.render(&v))
            .image(image)
            .tagged(PhaseTag::Phase1, &sample.id),
    )
}

/// Samples without an image are consistent by definition and cost no call.
pub fn check_consistency(
    sample: &Sample,
    backend: &dyn Backend,
    prompts: &PromptSet,
    log: &mut CallLog,
) -> Result<ConsistencyVerdict, BackendError> {
    let Some(request) = consistency_request(sample, backend, prompts) else {
        return Ok(ConsistencyVerdict { consistent: true, raw_text: String::new(), confidence_note: None });
    };
    let response = log.complete(backend, PhaseTag::Phase1, &request)?;
    Ok(ConsistencyVerdict {
        consistent: parse_verdict(&response.text),
        confidence_note: confidence_note(&response.text),
        raw_text: response.text,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{Script, ScriptEntry, ScriptedBackend};
    use crate::data_model::{ErrorCategory, ImageRef};

    #[test]
    fn basic_verdicts() {
        assert!(parse_verdict("CONSISTENT \u{2014} the text fully describes the figure"));
        assert!(parse_verdict("highly consistent"));
        assert!(!parse_verdict("NOT_CONSISTENT"));
        assert!(!parse_verdict("inconsistent"));
        assert!(!parse_verdict("maybe"));
        assert!(!parse_verdict("They aren't consistent."));
        assert!(parse_verdict("Inconsistent at first glance, but on reflection consistent."));
    }

    #[test]
    fn note_extraction() {
        assert_eq!(
            confidence_note("CONSISTENT \u{2014} the text fully describes the figure").as_deref(),
            Some("the text fully describes the figure")
        );
        assert_eq!(confidence_note("NOT_CONSISTENT"), None);
        assert_eq!(confidence_note("maybe"), None);
    }

    fn sample(image: bool) -> Sample {
        Sample {
            id: "s".into(),
            question_text: "Find x.".into(),
            image: image.then(|| ImageRef::inline(b"png", "image/png")),
            question_type: None,
            correct_answer: "1".into(),
            incorrect_answer: "2".into(),
            steps: vec!["x = 2".into()],
            gt_error_step: 1,
            gt_error_category: ErrorCategory::Cal,
        }
    }

    #[test]
    fn image_free_sample_skips_backend() {
        let backend = ScriptedBackend::new(Script::default());
        let mut log = CallLog::default();
        let v = check_consistency(&sample(false), &backend, &PromptSet::builtin(), &mut log).unwrap();
        assert!(v.consistent);
        assert!(log.calls.is_empty());
        assert_eq!(backend.calls(), 0);
    }

    #[test]
    fn request_carries_text_and_image() {
        let backend = ScriptedBackend::new(Script {
            entries: vec![ScriptEntry::new("phase1", "s", &["NOT_CONSISTENT"])],
            ..Script::default()
        });
        let mut log = CallLog::default();
        let v = check_consistency(&sample(true), &backend, &PromptSet::builtin(), &mut log).unwrap();
        assert!(!v.consistent);
        assert_eq!(log.count(PhaseTag::Phase1), 1);
        let req = consistency_request(&sample(true), &backend, &PromptSet::builtin()).unwrap();
        assert_eq!(req.image_count(), 1);
        assert!(req.full_text().contains("Find x."));
    }
}
