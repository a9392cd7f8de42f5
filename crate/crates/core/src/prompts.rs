//! Versioned prompt assets.
//!
//! An asset file starts with a `#! mathagent-prompt v1` header line and is
//! split into `[system]`, `[user]` and optional `[reminder]` sections.
//! Section bodies are templates: `{{name}}` is replaced by a variable and
//! `{{#name}}...{{/name}}` is kept only when `name` is non-empty.
//! Trailing newlines of each section are trimmed.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use thiserror::Error;

const HEADER: &str = "#! mathagent-prompt v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PromptId {
    Phase1Consistency,
    Phase2Type,
    Phase2Formal,
    Phase2Latex,
    Phase2Caption,
    Phase3Analyzer,
}

impl PromptId {
    pub const ALL: [PromptId; 6] = [
        Self::Phase1Consistency,
        Self::Phase2Type,
        Self::Phase2Formal,
        Self::Phase2Latex,
        Self::Phase2Caption,
        Self::Phase3Analyzer,
    ];

    pub fn file_name(self) -> &'static str {
        match self {
            Self::Phase1Consistency => "phase1_consistency.prompt",
            Self::Phase2Type => "phase2_type.prompt",
            Self::Phase2Formal => "phase2_formal.prompt",
            Self::Phase2Latex => "phase2_latex.prompt",
            Self::Phase2Caption => "phase2_caption.prompt",
            Self::Phase3Analyzer => "phase3_analyzer.prompt",
        }
    }

    fn builtin_text(self) -> &'static str {
        match self {
            Self::Phase1Consistency => include_str!("../prompts/phase1_consistency.prompt"),
            Self::Phase2Type => include_str!("../prompts/phase2_type.prompt"),
            Self::Phase2Formal => include_str!("../prompts/phase2_formal.prompt"),
            Self::Phase2Latex => include_str!("../prompts/phase2_latex.prompt"),
            Self::Phase2Caption => include_str!("../prompts/phase2_caption.prompt"),
            Self::Phase3Analyzer => include_str!("../prompts/phase3_analyzer.prompt"),
        }
    }

    fn variables(self) -> &'static [&'static str] {
        match self {
            Self::Phase3Analyzer => {
                &["question_text", "visual", "correct_answer", "student_answer", "steps", "n_steps"]
            }
            _ => &["question_text"],
        }
    }

    fn needs_reminder(self) -> bool {
        self == Self::Phase3Analyzer
    }
}

impl fmt::Display for PromptId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.file_name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("prompt asset {path}: {message}")]
pub struct PromptError {
    pub path: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Literal(String),
    Var(String),
    Block(String, Vec<Piece>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pieces: Vec<Piece>,
}

impl Template {
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut stack: Vec<(String, Vec<Piece>)> = vec![(String::new(), Vec::new())];
        let mut rest = text;
        while let Some(start) = rest.find("{{") {
            if start > 0 {
                stack.last_mut().unwrap().1.push(Piece::Literal(rest[..start].to_string()));
            }
            let after = &rest[start + 2..];
            let end = after.find("}}").ok_or("unterminated `{{`")?;
            let tag = after[..end].trim();
            rest = &after[end + 2..];
            if let Some(name) = tag.strip_prefix('#') {
                stack.push((name.trim().to_string(), Vec::new()));
            } else if let Some(name) = tag.strip_prefix('/') {
                let (open, body) = stack.pop().filter(|_| !stack.is_empty()).ok_or("unmatched block close")?;
                if open != name.trim() {
                    return Err(format!("block `{open}` closed by `{}`", name.trim()));
                }
                stack.last_mut().unwrap().1.push(Piece::Block(open, body));
            } else if tag.is_empty() || !tag.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Err(format!("bad placeholder `{{{{{tag}}}}}`"));
            } else {
                stack.last_mut().unwrap().1.push(Piece::Var(tag.to_string()));
            }
        }
        if !rest.is_empty() {
            stack.last_mut().unwrap().1.push(Piece::Literal(rest.to_string()));
        }
        if stack.len() != 1 {
            return Err(format!("block `{}` is never closed", stack.last().unwrap().0));
        }
        Ok(Self { pieces: stack.pop().unwrap().1 })
    }

    pub fn variables(&self) -> Vec<&str> {
        fn walk<'a>(pieces: &'a [Piece], out: &mut Vec<&'a str>) {
            for p in pieces {
                match p {
                    Piece::Literal(_) => {}
                    Piece::Var(v) => out.push(v),
                    Piece::Block(v, body) => {
                        out.push(v);
                        walk(body, out);
                    }
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.pieces, &mut out);
        out
    }

    /// Missing variables render as empty strings.
    pub fn render(&self, vars: &BTreeMap<&str, String>) -> String {
        fn walk(pieces: &[Piece], vars: &BTreeMap<&str, String>, out: &mut String) {
            for p in pieces {
                match p {
                    Piece::Literal(s) => out.push_str(s),
                    Piece::Var(v) => out.push_str(vars.get(v.as_str()).map_or("", String::as_str)),
                    Piece::Block(v, body) => {
                        if vars.get(v.as_str()).is_some_and(|s| !s.is_empty()) {
                            walk(body, vars, out);
                        }
                    }
                }
            }
        }
        let mut out = String::new();
        walk(&self.pieces, vars, &mut out);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptAsset {
    pub system: Template,
    pub user: Template,
    pub reminder: Option<Template>,
}

impl PromptAsset {
    pub fn parse(text: &str) -> Result<Self, String> {
        let text = text.strip_prefix('\u{feff}').unwrap_or(text);
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim_end() == HEADER => {}
            Some(h) if h.starts_with("#!") => return Err(format!("unsupported header `{}`", h.trim_end())),
            _ => return Err(format!("missing `{HEADER}` header")),
        }
        let mut sections: BTreeMap<String, String> = BTreeMap::new();
        let mut current: Option<String> = None;
        for line in lines {
            let trimmed = line.trim_end();
            if trimmed.starts_with('[') && trimmed.ends_with(']') && !trimmed.contains(' ') {
                let name = trimmed[1..trimmed.len() - 1].to_string();
                if !["system", "user", "reminder"].contains(&name.as_str()) {
                    return Err(format!("unknown section [{name}]"));
                }
                if sections.contains_key(&name) {
                    return Err(format!("duplicate section [{name}]"));
                }
                sections.insert(name.clone(), String::new());
                current = Some(name);
                continue;
            }
            match &current {
                Some(name) => {
                    let body = sections.get_mut(name).unwrap();
                    body.push_str(line);
                    body.push('\n');
                }
                None if trimmed.is_empty() => {}
                None => return Err("text before the first section".into()),
            }
        }
        let mut template = |name: &str| -> Result<Option<Template>, String> {
            sections
                .remove(name)
                .map(|body| Template::parse(body.trim_end_matches('\n')).map_err(|e| format!("[{name}]: {e}")))
                .transpose()
        };
        let system = template("system")?.unwrap_or(Template { pieces: Vec::new() });
        let user = template("user")?.ok_or("missing [user] section")?;
        let reminder = template("reminder")?;
        Ok(Self { system, user, reminder })
    }

    fn check(&self, id: PromptId) -> Result<(), String> {
        let allowed = id.variables();
        let mut all = self.system.variables();
        all.extend(self.user.variables());
        if let Some(r) = &self.reminder {
            all.extend(r.variables());
        }
        if let Some(bad) = all.iter().find(|v| !allowed.contains(v)) {
            return Err(format!("unknown placeholder `{bad}`"));
        }
        if id.needs_reminder() && self.reminder.is_none() {
            return Err("missing [reminder] section".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PromptSet {
    assets: BTreeMap<PromptId, PromptAsset>,
}

impl PromptSet {
    pub fn builtin() -> Self {
        let assets = PromptId::ALL
            .into_iter()
            .map(|id| {
                let asset = PromptAsset::parse(id.builtin_text()).expect("built-in prompt parses");
                asset.check(id).expect("built-in prompt is well formed");
                (id, asset)
            })
            .collect();
        Self { assets }
    }

    /// Loads every asset from `dir`; a missing or malformed file is an error
    /// naming its path.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut assets = BTreeMap::new();
        for id in PromptId::ALL {
            let path: PathBuf = dir.join(id.file_name());
            let err = |message: String| PromptError { path: path.display().to_string(), message };
            let text = std::fs::read_to_string(&path).map_err(|e| err(e.to_string()))?;
            let asset = PromptAsset::parse(&text).map_err(err)?;
            asset.check(id).map_err(err)?;
            assets.insert(id, asset);
        }
        Ok(Self { assets })
    }

    pub fn get(&self, id: PromptId) -> &PromptAsset {
        &self.assets[&id]
    }
}

impl Default for PromptSet {
    fn default() -> Self {
        Self::builtin()
    }
}

/// Convenience for building template variables.
pub fn vars<'a>(pairs: &[(&'a str, &str)]) -> BTreeMap<&'a str, String> {
    pairs.iter().map(|(k, v)| (*k, v.to_string())).collect()
}
