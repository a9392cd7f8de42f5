//! Domain types for evaluation samples, the error taxonomy and the JSONL
//! dataset format.

mod dataset;
mod stats;

use std::fmt;
use std::str::FromStr;

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dataset::{
    load_dataset, parse_dataset, sample_to_json_line, validate_dataset, DatasetError, SchemaFinding,
    ValidationOutcome,
};
pub use stats::{dataset_stats, DatasetStats, EmptyDataset, RangeStats};

/// Media types accepted for images unless a caller supplies its own list.
pub const DEFAULT_MEDIA_TYPES: &[&str] = &["image/png", "image/jpeg", "image/gif", "image/webp"];

/// The five error categories a student's first wrong step is classified into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ErrorCategory {
    #[serde(rename = "VIS")]
    Vis,
    #[serde(rename = "CAL")]
    Cal,
    #[serde(rename = "REAS")]
    Reas,
    #[serde(rename = "KNOW")]
    Know,
    #[serde(rename = "MIS")]
    Mis,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown error category: {0:?}")]
pub struct UnknownCategory(pub String);

impl ErrorCategory {
    pub const ALL: [ErrorCategory; 5] = [Self::Vis, Self::Cal, Self::Reas, Self::Know, Self::Mis];

    pub fn code(self) -> &'static str {
        match self {
            Self::Vis => "VIS",
            Self::Cal => "CAL",
            Self::Reas => "REAS",
            Self::Know => "KNOW",
            Self::Mis => "MIS",
        }
    }

    pub fn canonical_name(self) -> &'static str {
        match self {
            Self::Vis => "Visual Perception Error",
            Self::Cal => "Calculation Error",
            Self::Reas => "Reasoning Error",
            Self::Know => "Knowledge Error",
            Self::Mis => "Misinterpretation of the Question",
        }
    }

    /// Accepted spellings, already normalized (lowercase, single spaces).
    /// The short code and canonical name are always included.
    pub fn synonyms(self) -> &'static [&'static str] {
        match self {
            Self::Vis => &[
                "vis",
                "visual perception error",
                "visual perception errors",
                "visual perception",
                "visual error",
                "visual",
                "perception error",
                "perception",
            ],
            Self::Cal => &[
                "cal",
                "calculation error",
                "calculation errors",
                "calculation",
                "computation error",
                "computational error",
                "computation",
                "arithmetic error",
                "arithmetic",
            ],
            Self::Reas => &[
                "reas",
                "reasoning error",
                "reasoning errors",
                "reasoning",
                "logical error",
                "logic error",
                "logic",
            ],
            Self::Know => &[
                "know",
                "knowledge error",
                "knowledge errors",
                "knowledge",
                "concept error",
                "conceptual error",
            ],
            Self::Mis => &[
                "mis",
                "misinterpretation of the question",
                "misinterpretation of question",
                "misinterpretation of the qns",
                "misinterpretation error",
                "misinterpretation",
                "misunderstanding of the question",
                "misreading of the question",
                "question misinterpretation",
            ],
        }
    }
}

impl fmt::Display for ErrorCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// Lowercases, trims surrounding punctuation, and collapses runs of
/// whitespace, `_` and `-` into single spaces.
pub(crate) fn normalize_label(text: &str) -> String {
    let trimmed = text.trim_matches(|c: char| !c.is_alphanumeric());
    let mut out = String::with_capacity(trimmed.len());
    let mut pending_space = false;
    for c in trimmed.chars() {
        if c.is_whitespace() || c == '_' || c == '-' {
            pending_space = !out.is_empty();
        } else {
            if pending_space {
                out.push(' ');
                pending_space = false;
            }
            out.extend(c.to_lowercase());
        }
    }
    out
}

/// Maps a free-form category label to its variant.
///
/// Matching is case-insensitive, ignores surrounding punctuation and
/// accepts the short code, the canonical name and the synonym list.
pub fn parse_category(text: &str) -> Result<ErrorCategory, UnknownCategory> {
    let norm = normalize_label(text);
    ErrorCategory::ALL
        .into_iter()
        .find(|c| c.synonyms().contains(&norm.as_str()))
        .ok_or_else(|| UnknownCategory(text.to_string()))
}

impl FromStr for ErrorCategory {
    type Err = UnknownCategory;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_category(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionType {
    PlaneGeometry,
    SolidGeometry,
    Diagram,
    Algebra,
    MathCommonsense,
}

impl QuestionType {
    pub const ALL: [QuestionType; 5] = [
        Self::PlaneGeometry,
        Self::SolidGeometry,
        Self::Diagram,
        Self::Algebra,
        Self::MathCommonsense,
    ];

    pub fn wire_name(self) -> &'static str {
        match self {
            Self::PlaneGeometry => "plane_geometry",
            Self::SolidGeometry => "solid_geometry",
            Self::Diagram => "diagram",
            Self::Algebra => "algebra",
            Self::MathCommonsense => "math_commonsense",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Self::PlaneGeometry => "Plane Geometry",
            Self::SolidGeometry => "Solid Geometry",
            Self::Diagram => "Diagram",
            Self::Algebra => "Algebra",
            Self::MathCommonsense => "Math Commonsense",
        }
    }

    pub fn from_wire(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|q| q.wire_name() == name)
    }
}

impl fmt::Display for QuestionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.wire_name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageKind {
    FilePath,
    InlineBase64,
    Url,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageRef {
    pub kind: ImageKind,
    pub value: String,
    pub media_type: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ImageRefError {
    #[error("inline image is not valid base64: {0}")]
    BadBase64(String),
    #[error("media type {0:?} is not allowed")]
    MediaType(String),
    #[error("image value is empty")]
    Empty,
}

impl ImageRef {
    pub fn inline(bytes: &[u8], media_type: &str) -> Self {
        Self {
            kind: ImageKind::InlineBase64,
            value: base64::engine::general_purpose::STANDARD.encode(bytes),
            media_type: media_type.to_string(),
        }
    }

    /// Decoded bytes for inline images, `None` for other kinds.
    pub fn inline_bytes(&self) -> Option<Result<Vec<u8>, ImageRefError>> {
        (self.kind == ImageKind::InlineBase64).then(|| {
            base64::engine::general_purpose::STANDARD
                .decode(self.value.trim())
                .map_err(|e| ImageRefError::BadBase64(e.to_string()))
        })
    }

    pub fn validate(&self, allowed_media_types: &[&str]) -> Result<(), ImageRefError> {
        if self.value.trim().is_empty() {
            return Err(ImageRefError::Empty);
        }
        if !allowed_media_types.contains(&self.media_type.as_str()) {
            return Err(ImageRefError::MediaType(self.media_type.clone()));
        }
        if let Some(decoded) = self.inline_bytes() {
            decoded?;
        }
        Ok(())
    }
}

/// One evaluation item. `gt_error_step` is 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub question_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<ImageRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question_type: Option<QuestionType>,
    pub correct_answer: String,
    pub incorrect_answer: String,
    pub steps: Vec<String>,
    pub gt_error_step: u32,
    pub gt_error_category: ErrorCategory,
}

impl Sample {
    pub fn n_steps(&self) -> usize {
        self.steps.len()
    }

    /// Question length in Unicode scalar values.
    pub fn question_length(&self) -> usize {
        self.question_text.chars().count()
    }
}
