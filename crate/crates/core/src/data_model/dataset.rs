use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde_json::{Map, Value};
use thiserror::Error;

use super::{ErrorCategory, ImageKind, ImageRef, QuestionType, Sample, DEFAULT_MEDIA_TYPES};

/// A schema problem on one line of a dataset file. `line` is 1-based.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemaFinding {
    pub line: usize,
    pub field: String,
    pub message: String,
}

impl fmt::Display for SchemaFinding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: field `{}`: {}", self.line, self.field, self.message)
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read dataset {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("schema error at {0}")]
    Schema(SchemaFinding),
}

/// Samples that passed validation plus every finding, in line order.
#[derive(Debug, Default)]
pub struct ValidationOutcome {
    pub samples: Vec<Sample>,
    pub findings: Vec<SchemaFinding>,
}

/// Loads a JSONL dataset, failing on the first schema violation.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<Sample>, DatasetError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_dataset(&text)
}

pub fn parse_dataset(text: &str) -> Result<Vec<Sample>, DatasetError> {
    let outcome = validate_dataset(text);
    match outcome.findings.into_iter().next() {
        Some(f) => Err(DatasetError::Schema(f)),
        None => Ok(outcome.samples),
    }
}

/// Checks every line and collects all findings. Blank lines are skipped.
pub fn validate_dataset(text: &str) -> ValidationOutcome {
    let mut outcome = ValidationOutcome::default();
    let mut seen = HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let mut checker = LineChecker { line, findings: Vec::new() };
        let sample = match serde_json::from_str::<Value>(raw) {
            Ok(Value::Object(obj)) => checker.sample(&obj),
            Ok(_) => {
                checker.push("$", "line is not a JSON object");
                None
            }
            Err(e) => {
                checker.push("$", format!("invalid JSON: {e}"));
                None
            }
        };
        if let Some(sample) = sample {
            if !seen.insert(sample.id.clone()) {
                checker.push("id", format!("duplicate id {:?}", sample.id));
            } else if checker.findings.is_empty() {
                outcome.samples.push(sample);
            }
        }
        outcome.findings.extend(checker.findings);
    }
    outcome
}

/// Serializes a sample as one JSONL line (no trailing newline).
pub fn sample_to_json_line(sample: &Sample) -> String {
    serde_json::to_string(sample).expect("sample serializes")
}

struct LineChecker {
    line: usize,
    findings: Vec<SchemaFinding>,
}

impl LineChecker {
    fn push(&mut self, field: &str, message: impl Into<String>) {
        self.findings.push(SchemaFinding {
            line: self.line,
            field: field.to_string(),
            message: message.into(),
        });
    }

    fn string(&mut self, obj: &Map<String, Value>, field: &str, non_empty: bool) -> Option<String> {
        match obj.get(field) {
            None | Some(Value::Null) => {
                self.push(field, "missing required field");
                None
            }
            Some(Value::String(s)) => {
                if non_empty && s.trim().is_empty() {
                    self.push(field, "must not be empty");
                    None
                } else {
                    Some(s.clone())
                }
            }
            Some(other) => {
                self.push(field, format!("expected string, found {}", type_name(other)));
                None
            }
        }
    }

    fn sample(&mut self, obj: &Map<String, Value>) -> Option<Sample> {
        let id = self.string(obj, "id", true);
        let question_text = self.string(obj, "question_text", true);
        let correct_answer = self.string(obj, "correct_answer", false);
        let incorrect_answer = self.string(obj, "incorrect_answer", false);
        let image = self.image(obj.get("image"));
        let question_type = self.question_type(obj.get("question_type"));
        let steps = self.steps(obj.get("steps"));
        let gt_error_step = self.error_step(obj.get("gt_error_step"), steps.as_ref().map(Vec::len));
        let gt_error_category = self.category(obj.get("gt_error_category"));

        Some(Sample {
            id: id?,
            question_text: question_text?,
            image: image?,
            question_type: question_type?,
            correct_answer: correct_answer?,
            incorrect_answer: incorrect_answer?,
            steps: steps?,
            gt_error_step: gt_error_step?,
            gt_error_category: gt_error_category?,
        })
    }

    // Outer Option: None on error. Inner: the optional field itself.
    fn image(&mut self, value: Option<&Value>) -> Option<Option<ImageRef>> {
        let obj = match value {
            None | Some(Value::Null) => return Some(None),
            Some(Value::Object(obj)) => obj,
            Some(other) => {
                self.push("image", format!("expected object, found {}", type_name(other)));
                return None;
            }
        };
        let kind = match obj.get("kind") {
            Some(Value::String(k)) => match k.as_str() {
                "file_path" => Some(ImageKind::FilePath),
                "inline_base64" => Some(ImageKind::InlineBase64),
                "url" => Some(ImageKind::Url),
                other => {
                    self.push("image.kind", format!("unknown image kind {other:?}"));
                    None
                }
            },
            None | Some(Value::Null) => {
                self.push("image.kind", "missing required field");
                None
            }
            Some(other) => {
                self.push("image.kind", format!("expected string, found {}", type_name(other)));
                None
            }
        };
        let value = self.nested_string(obj, "image.value", "value");
        let media_type = self.nested_string(obj, "image.media_type", "media_type");
        let image = ImageRef { kind: kind?, value: value?, media_type: media_type? };
        match image.validate(DEFAULT_MEDIA_TYPES) {
            Ok(()) => Some(Some(image)),
            Err(e) => {
                let field = match e {
                    super::ImageRefError::MediaType(_) => "image.media_type",
                    _ => "image.value",
                };
                self.push(field, e.to_string());
                None
            }
        }
    }

    fn nested_string(&mut self, obj: &Map<String, Value>, path: &str, key: &str) -> Option<String> {
        match obj.get(key) {
            Some(Value::String(s)) => Some(s.clone()),
            None | Some(Value::Null) => {
                self.push(path, "missing required field");
                None
            }
            Some(other) => {
                self.push(path, format!("expected string, found {}", type_name(other)));
                None
            }
        }
    }

    fn question_type(&mut self, value: Option<&Value>) -> Option<Option<QuestionType>> {
        match value {
            None | Some(Value::Null) => Some(None),
            Some(Value::String(s)) => match QuestionType::from_wire(s) {
                Some(q) => Some(Some(q)),
                None => {
                    self.push("question_type", format!("unknown question type {s:?}"));
                    None
                }
            },
            Some(other) => {
                self.push("question_type", format!("expected string, found {}", type_name(other)));
                None
            }
        }
    }

    fn steps(&mut self, value: Option<&Value>) -> Option<Vec<String>> {
        let items = match value {
            Some(Value::Array(items)) => items,
            None | Some(Value::Null) => {
                self.push("steps", "missing required field");
                return None;
            }
            Some(other) => {
                self.push("steps", format!("expected array, found {}", type_name(other)));
                return None;
            }
        };
        if items.is_empty() {
            self.push("steps", "must contain at least one step");
            return None;
        }
        let mut steps = Vec::with_capacity(items.len());
        let mut ok = true;
        for (i, item) in items.iter().enumerate() {
            match item {
                Value::String(s) => steps.push(s.clone()),
                other => {
                    self.push(&format!("steps[{i}]"), format!("expected string, found {}", type_name(other)));
                    ok = false;
                }
            }
        }
        ok.then_some(steps)
    }

    fn error_step(&mut self, value: Option<&Value>, n_steps: Option<usize>) -> Option<u32> {
        let step = match value {
            Some(Value::Number(n)) => match n.as_u64().and_then(|v| u32::try_from(v).ok()) {
                Some(v) => v,
                None => {
                    self.push("gt_error_step", format!("expected positive integer, found {n}"));
                    return None;
                }
            },
            None | Some(Value::Null) => {
                self.push("gt_error_step", "missing required field");
                return None;
            }
            Some(other) => {
                self.push("gt_error_step", format!("expected integer, found {}", type_name(other)));
                return None;
            }
        };
        if step == 0 {
            self.push("gt_error_step", "step indices are 1-based; found 0");
            return None;
        }
        if let Some(n) = n_steps {
            if step as usize > n {
                self.push("gt_error_step", format!("step {step} out of range for {n} steps"));
                return None;
            }
        }
        Some(step)
    }

    fn category(&mut self, value: Option<&Value>) -> Option<ErrorCategory> {
        match value {
            Some(Value::String(s)) => match ErrorCategory::ALL.into_iter().find(|c| c.code() == s) {
                Some(c) => Some(c),
                None => {
                    self.push(
                        "gt_error_category",
                        format!("expected one of VIS, CAL, REAS, KNOW, MIS; found {s:?}"),
                    );
                    None
                }
            },
            None | Some(Value::Null) => {
                self.push("gt_error_category", "missing required field");
                None
            }
            Some(other) => {
                self.push("gt_error_category", format!("expected string, found {}", type_name(other)));
                None
            }
        }
    }
}

fn type_name(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}
