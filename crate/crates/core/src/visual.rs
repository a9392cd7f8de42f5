//! Question-type resolution and type-driven image transcription.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, BackendError, CallLog, ModelRequest, PhaseTag};
use crate::data_model::{QuestionType, Sample};
use crate::formal_language::{
    check_latex_table, parse_facts, validate_arity, ArityTable, ArityViolation, FactList, TableReport,
};
use crate::prompts::{vars, PromptId, PromptSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TypeSource {
    DatasetLabel,
    Inferred,
    /// Inference failed twice; the transcript falls back to a caption.
    Unresolved,
    /// Type resolution was skipped on purpose (uniform captioning).
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Representation {
    FormalLanguage(FactList),
    LatexTable(String),
    Caption(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VisualFindings {
    Arity { violations: Vec<ArityViolation> },
    Table { report: TableReport },
    FactParse { offset: usize, message: String },
}

impl VisualFindings {
    pub fn is_clean(&self) -> bool {
        match self {
            VisualFindings::Arity { violations } => violations.is_empty(),
            VisualFindings::Table { report } => report.is_ok(),
            VisualFindings::FactParse { .. } => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisualTranscript {
    pub representation: Representation,
    pub question_type: Option<QuestionType>,
    pub source: TypeSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation: Option<VisualFindings>,
}

impl VisualTranscript {
    /// Text block handed to the analyzer.
    pub fn render(&self) -> String {
        match &self.representation {
            Representation::FormalLanguage(facts) => format!("Geometry facts:\n{facts}"),
            Representation::LatexTable(latex) => format!("Table (LaTeX):\n{latex}"),
            Representation::Caption(caption) => format!("Image description:\n{caption}"),
        }
    }
}

#[derive(Debug, Error)]
pub enum TypeInferenceError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("no question type found in replies {0:?}")]
    Unresolved(Vec<String>),
}

/// Per-type transcription backends.
#[derive(Clone)]
pub struct VisualRouter {
    pub plane_geometry: Arc<dyn Backend>,
    pub diagram: Arc<dyn Backend>,
    pub default: Arc<dyn Backend>,
}

impl VisualRouter {
    pub fn uniform(backend: Arc<dyn Backend>) -> Self {
        Self { plane_geometry: backend.clone(), diagram: backend.clone(), default: backend }
    }

    pub fn for_type(&self, qtype: Option<QuestionType>) -> &dyn Backend {
        match qtype {
            Some(QuestionType::PlaneGeometry) => self.plane_geometry.as_ref(),
            Some(QuestionType::Diagram) => self.diagram.as_ref(),
            _ => self.default.as_ref(),
        }
    }
}

const TYPE_SYNONYMS: &[(&str, QuestionType)] = &[
    ("plane geometry", QuestionType::PlaneGeometry),
    ("planar geometry", QuestionType::PlaneGeometry),
    ("2d geometry", QuestionType::PlaneGeometry),
    ("geometry", QuestionType::PlaneGeometry),
    ("solid geometry", QuestionType::SolidGeometry),
    ("3d geometry", QuestionType::SolidGeometry),
    ("spatial geometry", QuestionType::SolidGeometry),
    ("stereometry", QuestionType::SolidGeometry),
    ("diagram", QuestionType::Diagram),
    ("chart", QuestionType::Diagram),
    ("table", QuestionType::Diagram),
    ("algebra", QuestionType::Algebra),
    ("algebraic", QuestionType::Algebra),
    ("math commonsense", QuestionType::MathCommonsense),
    ("mathematical commonsense", QuestionType::MathCommonsense),
    ("math common sense", QuestionType::MathCommonsense),
    ("commonsense", QuestionType::MathCommonsense),
    ("common sense", QuestionType::MathCommonsense),
];

/// Lowercase words separated by single spaces; `_` and `-` split words.
fn word_string(text: &str) -> String {
    let lower = text.to_lowercase();
    let words: Vec<&str> = lower.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).collect();
    format!(" {} ", words.join(" "))
}

/// Earliest whole-word synonym in the reply; on ties the longer phrase wins.
pub fn parse_question_type(reply: &str) -> Option<QuestionType> {
    let haystack = word_string(reply);
    let mut best: Option<(usize, usize, QuestionType)> = None;
    for (phrase, qtype) in TYPE_SYNONYMS {
        let needle = format!(" {phrase} ");
        if let Some(pos) = haystack.find(&needle) {
            let better = match best {
                None => true,
                Some((p, len, _)) => pos < p || (pos == p && phrase.len() > len),
            };
            if better {
                best = Some((pos, phrase.len(), *qtype));
            }
        }
    }
    best.map(|(_, _, q)| q)
}

fn phase2_request(
    sample: &Sample,
    backend: &dyn Backend,
    prompts: &PromptSet,
    id: PromptId,
    phase: PhaseTag,
) -> ModelRequest {
    let asset = prompts.get(id);
    let v = vars(&[("question_text", &sample.question_text)]);
    let mut request =
        ModelRequest::new(backend.model_id(), backend.decoding(), asset.system.render(&v)).text(asset.user.render(&v));
    if let Some(image) = &sample.image {
        request = request.image(image.clone());
    }
    request.tagged(phase, &sample.id)
}

/// Dataset label when present; otherwise asks the backend, retrying once.
pub fn resolve_question_type(
    sample: &Sample,
    backend: &dyn Backend,
    prompts: &PromptSet,
    log: &mut CallLog,
) -> Result<(QuestionType, TypeSource), TypeInferenceError> {
    if let Some(q) = sample.question_type {
        return Ok((q, TypeSource::DatasetLabel));
    }
    let request = phase2_request(sample, backend, prompts, PromptId::Phase2Type, PhaseTag::Phase2Type);
    let mut replies = Vec::with_capacity(2);
    for _ in 0..2 {
        let reply = log.complete(backend, PhaseTag::Phase2Type, &request)?.text;
        if let Some(q) = parse_question_type(&reply) {
            return Ok((q, TypeSource::Inferred));
        }
        replies.push(reply);
    }
    Err(TypeInferenceError::Unresolved(replies))
}

/// Drops a surrounding Markdown code fence, if any.
fn strip_fence(text: &str) -> &str {
    let t = text.trim();
    let Some(inner) = t.strip_prefix("```") else { return t };
    let inner = inner.split_once('\n').map_or("", |(_, rest)| rest);
    inner.trim_end().strip_suffix("```").unwrap_or(inner).trim()
}

/// One transcription call routed by question type. `None` means the type
/// is unknown or deliberately ignored, and the caption path is used.
pub fn interpret_visual(
    sample: &Sample,
    qtype: Option<QuestionType>,
    source: TypeSource,
    router: &VisualRouter,
    prompts: &PromptSet,
    arity: &ArityTable,
    log: &mut CallLog,
) -> Result<VisualTranscript, BackendError> {
    let backend = router.for_type(qtype);
    let prompt = match qtype {
        Some(QuestionType::PlaneGeometry) => PromptId::Phase2Formal,
        Some(QuestionType::Diagram) => PromptId::Phase2Latex,
        _ => PromptId::Phase2Caption,
    };
    let request = phase2_request(sample, backend, prompts, prompt, PhaseTag::Phase2);
    let reply = log.complete(backend, PhaseTag::Phase2, &request)?.text;
    let transcript = |representation, validation| VisualTranscript {
        representation,
        question_type: qtype,
        source,
        validation,
    };
    Ok(match prompt {
        PromptId::Phase2Formal => match parse_facts(strip_fence(&reply)) {
            Ok(facts) => {
                let violations = validate_arity(&facts, arity);
                transcript(Representation::FormalLanguage(facts), Some(VisualFindings::Arity { violations }))
            }
            Err(e) => {
                tracing::debug!(sample = %sample.id, error = %e, "fact list did not parse; using caption");
                transcript(
                    Representation::Caption(reply.trim().to_string()),
                    Some(VisualFindings::FactParse { offset: e.offset, message: e.to_string() }),
                )
            }
        },
        PromptId::Phase2Latex => {
            let latex = strip_fence(&reply).to_string();
            let report = check_latex_table(&latex);
            transcript(Representation::LatexTable(latex), Some(VisualFindings::Table { report }))
        }
        _ => transcript(Representation::Caption(reply.trim().to_string()), None),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{Script, ScriptEntry, ScriptedBackend};
    use crate::data_model::{ErrorCategory, ImageRef};

    fn sample(qtype: Option<QuestionType>) -> Sample {
        Sample {
            id: "v1".into(),
            question_text: "In the figure, find angle C.".into(),
            image: Some(ImageRef::inline(b"png", "image/png")),
            question_type: qtype,
            correct_answer: "60".into(),
            incorrect_answer: "45".into(),
            steps: vec!["a".into(), "b".into()],
            gt_error_step: 2,
            gt_error_category: ErrorCategory::Cal,
        }
    }

    fn scripted(entries: Vec<ScriptEntry>) -> Arc<ScriptedBackend> {
        Arc::new(ScriptedBackend::new(Script { entries, ..Script::default() }))
    }

    #[test]
    fn label_wins_without_calls() {
        let b = scripted(vec![]);
        let mut log = CallLog::default();
        let got = resolve_question_type(&sample(Some(QuestionType::PlaneGeometry)), b.as_ref(), &PromptSet::builtin(), &mut log)
            .unwrap();
        assert_eq!(got, (QuestionType::PlaneGeometry, TypeSource::DatasetLabel));
        assert!(log.calls.is_empty());
    }

    #[test]
    fn inference_retries_once() {
        let b = scripted(vec![ScriptEntry::new("phase2_type", "*", &["hmm", "It is a diagram."])]);
        let mut log = CallLog::default();
        let got = resolve_question_type(&sample(None), b.as_ref(), &PromptSet::builtin(), &mut log).unwrap();
        assert_eq!(got, (QuestionType::Diagram, TypeSource::Inferred));
        assert_eq!(log.count(PhaseTag::Phase2Type), 2);

        let b = scripted(vec![ScriptEntry::new("phase2_type", "*", &["no idea"])]);
        let mut log = CallLog::default();
        let err = resolve_question_type(&sample(None), b.as_ref(), &PromptSet::builtin(), &mut log).unwrap_err();
        assert!(matches!(err, TypeInferenceError::Unresolved(ref r) if r.len() == 2));
        assert_eq!(log.calls.len(), 2);
    }

    #[test]
    fn type_parsing() {
        assert_eq!(parse_question_type("This is a plane geometry problem."), Some(QuestionType::PlaneGeometry));
        assert_eq!(parse_question_type("SOLID_GEOMETRY"), Some(QuestionType::SolidGeometry));
        assert_eq!(parse_question_type("a geometry problem"), Some(QuestionType::PlaneGeometry));
        assert_eq!(parse_question_type("tablet"), None);
    }

    fn run(qtype: QuestionType, reply: &str) -> (VisualTranscript, CallLog) {
        let b = scripted(vec![ScriptEntry::new("phase2", "*", &[reply])]);
        let router = VisualRouter::uniform(b);
        let mut log = CallLog::default();
        let t = interpret_visual(
            &sample(Some(qtype)),
            Some(qtype),
            TypeSource::DatasetLabel,
            &router,
            &PromptSet::builtin(),
            &ArityTable::default(),
            &mut log,
        )
        .unwrap();
        (t, log)
    }

    #[test]
    fn plane_geometry_to_facts() {
        let (t, log) = run(QuestionType::PlaneGeometry, "Triangle(A, B, C), Angle(BAC, 45), Line(AB, 5)");
        let Representation::FormalLanguage(facts) = &t.representation else { panic!("{t:?}") };
        assert_eq!(facts.facts.len(), 3);
        assert!(t.validation.as_ref().unwrap().is_clean());
        assert_eq!(log.calls.len(), 1);
    }

    #[test]
    fn unparseable_facts_fall_back_to_caption() {
        let (t, _) = run(QuestionType::PlaneGeometry, "a triangle drawn on paper");
        assert_eq!(t.representation, Representation::Caption("a triangle drawn on paper".into()));
        assert_eq!(t.question_type, Some(QuestionType::PlaneGeometry));
        assert!(matches!(t.validation, Some(VisualFindings::FactParse { offset: 2, .. })));
    }

    #[test]
    fn diagram_to_checked_table() {
        let (t, _) = run(QuestionType::Diagram, "```latex\n\\begin{tabular}{cc}\na & b \\\\\n1 & 2\n\\end{tabular}\n```");
        let Representation::LatexTable(latex) = &t.representation else { panic!("{t:?}") };
        assert!(latex.starts_with("\\begin{tabular}"));
        assert!(t.validation.as_ref().unwrap().is_clean());
    }

    #[test]
    fn other_types_caption() {
        for q in [QuestionType::SolidGeometry, QuestionType::Algebra, QuestionType::MathCommonsense] {
            let (t, _) = run(q, "A cube with edge 2.");
            assert_eq!(t.representation, Representation::Caption("A cube with edge 2.".into()));
            assert_eq!(t.validation, None);
        }
    }
}
