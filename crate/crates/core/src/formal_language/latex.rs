//! Structural checks for LaTeX table transcripts.
//!
//! The checker never fails: any input yields a [`TableReport`]. It looks at
//! brace balance, `\begin`/`\end` nesting, the presence of a tabular-like
//! environment, and whether every row of each table has the same number of
//! cells.

use std::fmt;

use serde::{Deserialize, Serialize};

const TABULAR_ENVS: &[&str] = &["tabular", "tabular*", "tabularx", "tabulary", "array", "longtable"];
const RULE_COMMANDS: &[&str] =
    &["hline", "toprule", "midrule", "bottomrule", "cline", "cmidrule", "addlinespace", "specialrule"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TableFinding {
    UnmatchedCloseBrace { offset: usize },
    UnclosedBrace { offset: usize },
    UnclosedEnvironment { name: String, offset: usize },
    UnexpectedEnd { name: String, offset: usize },
    MismatchedEnd { expected: String, found: String, offset: usize },
    MalformedEnvironment { offset: usize },
    NoTabular,
    EmptyTable { offset: usize },
    ColumnMismatch { row: usize, expected: usize, found: usize, offset: usize },
    ExceedsColumnSpec { row: usize, declared: usize, found: usize, offset: usize },
}

impl TableFinding {
    pub fn code(&self) -> &'static str {
        match self {
            TableFinding::UnmatchedCloseBrace { .. } => "unmatched_close_brace",
            TableFinding::UnclosedBrace { .. } => "unclosed_brace",
            TableFinding::UnclosedEnvironment { .. } => "unclosed_environment",
            TableFinding::UnexpectedEnd { .. } => "unexpected_end",
            TableFinding::MismatchedEnd { .. } => "mismatched_end",
            TableFinding::MalformedEnvironment { .. } => "malformed_environment",
            TableFinding::NoTabular => "no_tabular",
            TableFinding::EmptyTable { .. } => "empty_table",
            TableFinding::ColumnMismatch { .. } => "column_mismatch",
            TableFinding::ExceedsColumnSpec { .. } => "exceeds_column_spec",
        }
    }
}

impl fmt::Display for TableFinding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TableFinding::UnmatchedCloseBrace { offset } => write!(f, "unmatched '}}' at {offset}"),
            TableFinding::UnclosedBrace { offset } => write!(f, "unclosed '{{' at {offset}"),
            TableFinding::UnclosedEnvironment { name, offset } => {
                write!(f, "unclosed environment {name} begun at {offset}")
            }
            TableFinding::UnexpectedEnd { name, offset } => {
                write!(f, "\\end{{{name}}} at {offset} without matching \\begin")
            }
            TableFinding::MismatchedEnd { expected, found, offset } => {
                write!(f, "\\end{{{found}}} at {offset} closes {expected}")
            }
            TableFinding::MalformedEnvironment { offset } => {
                write!(f, "\\begin or \\end without a braced name at {offset}")
            }
            TableFinding::NoTabular => f.write_str("no tabular-like environment"),
            TableFinding::EmptyTable { offset } => write!(f, "table at {offset} has no rows"),
            TableFinding::ColumnMismatch { row, expected, found, offset } => {
                write!(f, "row {row} at {offset} has {found} cells, expected {expected}")
            }
            TableFinding::ExceedsColumnSpec { row, declared, found, offset } => {
                write!(f, "row {row} at {offset} has {found} cells but the column spec declares {declared}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableShape {
    pub environment: String,
    pub offset: usize,
    pub declared_columns: Option<usize>,
    pub row_cells: Vec<usize>,
}

impl TableShape {
    pub fn columns(&self) -> Option<usize> {
        self.row_cells.first().copied()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableReport {
    pub findings: Vec<TableFinding>,
    pub tables: Vec<TableShape>,
}

impl TableReport {
    pub fn is_ok(&self) -> bool {
        self.findings.is_empty()
    }

    /// Column count of the first table.
    pub fn columns(&self) -> Option<usize> {
        self.tables.first().and_then(TableShape::columns)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Word(String),
    Symbol(char),
    Open,
    Close,
    Amp,
    Char(char),
}

fn tokenize(src: &str) -> Vec<(usize, Tok)> {
    let mut out = Vec::new();
    let mut it = src.char_indices().peekable();
    while let Some((off, c)) = it.next() {
        match c {
            '\\' => match it.peek().copied() {
                Some((_, n)) if n.is_ascii_alphabetic() => {
                    let mut name = String::new();
                    while let Some(&(_, n)) = it.peek() {
                        if n.is_ascii_alphabetic() {
                            name.push(n);
                            it.next();
                        } else {
                            break;
                        }
                    }
                    if it.peek().is_some_and(|&(_, n)| n == '*') {
                        name.push('*');
                        it.next();
                    }
                    out.push((off, Tok::Word(name)));
                }
                Some((_, n)) => {
                    it.next();
                    out.push((off, Tok::Symbol(n)));
                }
                None => out.push((off, Tok::Char('\\'))),
            },
            '%' => {
                for (_, n) in it.by_ref() {
                    if n == '\n' {
                        break;
                    }
                }
            }
            '{' => out.push((off, Tok::Open)),
            '}' => out.push((off, Tok::Close)),
            '&' => out.push((off, Tok::Amp)),
            c => out.push((off, Tok::Char(c))),
        }
    }
    out
}

fn count_spec_columns(spec: &str) -> usize {
    let chars: Vec<char> = spec.chars().collect();
    let mut i = 0;
    let mut n = 0;
    // Skips a balanced {…} group starting at chars[i] and returns its contents.
    let group = |i: &mut usize| -> String {
        let mut depth = 0usize;
        let mut inner = String::new();
        while *i < chars.len() {
            let c = chars[*i];
            *i += 1;
            match c {
                '{' => {
                    if depth > 0 {
                        inner.push(c);
                    }
                    depth += 1;
                }
                '}' => {
                    depth = depth.saturating_sub(1);
                    if depth == 0 {
                        return inner;
                    }
                    inner.push(c);
                }
                c if depth > 0 => inner.push(c),
                c if c.is_whitespace() => {}
                _ => {
                    *i -= 1;
                    return inner;
                }
            }
        }
        inner
    };
    while i < chars.len() {
        let c = chars[i];
        i += 1;
        match c {
            'l' | 'c' | 'r' | 'X' | 'L' | 'C' | 'R' | 'J' | 'S' => n += 1,
            'p' | 'm' | 'b' => {
                group(&mut i);
                n += 1;
            }
            '@' | '!' | '>' | '<' => {
                group(&mut i);
            }
            '*' => {
                let times: usize = group(&mut i).trim().parse().unwrap_or(0);
                let inner = group(&mut i);
                n += times * count_spec_columns(&inner);
            }
            _ => {}
        }
    }
    n
}

struct TableState {
    shape: TableShape,
    env_depth: usize,
    brace_depth: usize,
    cells: usize,
    content: bool,
    row_offset: usize,
}

impl TableState {
    fn end_row(&mut self) {
        if self.content || self.cells > 1 {
            self.shape.row_cells.push(self.cells);
        }
        self.cells = 1;
        self.content = false;
    }
}

struct Checker {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    braces: Vec<usize>,
    envs: Vec<(String, usize)>,
    tables: Vec<TableState>,
    report: TableReport,
    row_offsets: Vec<Vec<usize>>,
}

impl Checker {
    fn skip_spaces(&mut self) {
        while matches!(self.toks.get(self.pos), Some((_, Tok::Char(c))) if c.is_whitespace()) {
            self.pos += 1;
        }
    }

    /// Reads `{ … }` starting at the current token, tracking nested braces.
    /// Returns the raw contents, or `None` if the next token is not `{`.
    fn braced(&mut self, src: &str) -> Option<String> {
        self.skip_spaces();
        let (start, Tok::Open) = self.toks.get(self.pos)?.clone() else {
            return None;
        };
        self.pos += 1;
        let mut depth = 1;
        while let Some((off, tok)) = self.toks.get(self.pos).cloned() {
            self.pos += 1;
            match tok {
                Tok::Open => depth += 1,
                Tok::Close => {
                    depth -= 1;
                    if depth == 0 {
                        return Some(src[start + 1..off].to_string());
                    }
                }
                _ => {}
            }
        }
        self.report.findings.push(TableFinding::UnclosedBrace { offset: start });
        Some(src[start + 1..].to_string())
    }

    fn optional_bracket(&mut self) {
        self.skip_spaces();
        if matches!(self.toks.get(self.pos), Some((_, Tok::Char('[')))) {
            while let Some((_, tok)) = self.toks.get(self.pos) {
                self.pos += 1;
                if *tok == Tok::Char(']') {
                    break;
                }
            }
        }
    }

    fn current_table(&mut self) -> Option<&mut TableState> {
        let env_depth = self.envs.len();
        let brace_depth = self.braces.len();
        self.tables
            .last_mut()
            .filter(|t| t.env_depth == env_depth && t.brace_depth == brace_depth)
    }

    fn begin(&mut self, src: &str, offset: usize) {
        let Some(name) = self.braced(src) else {
            self.report.findings.push(TableFinding::MalformedEnvironment { offset });
            return;
        };
        let name = name.trim().to_string();
        if let Some(t) = self.current_table() {
            t.content = true;
        }
        self.envs.push((name.clone(), offset));
        if TABULAR_ENVS.contains(&name.as_str()) {
            self.optional_bracket();
            if matches!(name.as_str(), "tabular*" | "tabularx" | "tabulary") {
                self.braced(src);
            }
            let declared = self.braced(src).map(|s| count_spec_columns(&s));
            self.tables.push(TableState {
                shape: TableShape {
                    environment: name,
                    offset,
                    declared_columns: declared,
                    row_cells: Vec::new(),
                },
                env_depth: self.envs.len(),
                brace_depth: self.braces.len(),
                cells: 1,
                content: false,
                row_offset: self.toks.get(self.pos).map_or(src.len(), |t| t.0),
            });
            self.row_offsets.push(Vec::new());
        }
    }

    fn end(&mut self, src: &str, offset: usize) {
        let Some(name) = self.braced(src) else {
            self.report.findings.push(TableFinding::MalformedEnvironment { offset });
            return;
        };
        let name = name.trim().to_string();
        match self.envs.last() {
            None => self.report.findings.push(TableFinding::UnexpectedEnd { name, offset }),
            Some((open, _)) if *open != name => {
                // Close the matching outer environment if there is one; otherwise leave the stack alone.
                if let Some(idx) = self.envs.iter().rposition(|(n, _)| *n == name) {
                    self.report.findings.push(TableFinding::MismatchedEnd {
                        expected: open.clone(),
                        found: name,
                        offset,
                    });
                    while self.envs.len() > idx + 1 {
                        self.close_env(false);
                    }
                    self.close_env(true);
                } else {
                    self.report.findings.push(TableFinding::UnexpectedEnd { name, offset });
                }
            }
            Some(_) => self.close_env(true),
        }
    }

    fn close_env(&mut self, clean: bool) {
        let depth = self.envs.len();
        if let Some(mut t) = self.tables.pop_if(|t| t.env_depth == depth) {
            let offsets = self.row_offsets.pop().unwrap_or_default();
            let row_offset = t.row_offset;
            let before = t.shape.row_cells.len();
            t.end_row();
            let mut offsets = offsets;
            if t.shape.row_cells.len() > before {
                offsets.push(row_offset);
            }
            if clean {
                self.finish_table(t.shape, &offsets);
            }
        }
        if let Some((name, offset)) = self.envs.pop() {
            if !clean {
                self.report.findings.push(TableFinding::UnclosedEnvironment { name, offset });
            }
        }
        if let Some(t) = self.current_table() {
            t.content = true;
        }
    }

    fn finish_table(&mut self, shape: TableShape, offsets: &[usize]) {
        match shape.row_cells.first().copied() {
            None => self.report.findings.push(TableFinding::EmptyTable { offset: shape.offset }),
            Some(expected) => {
                for (i, &found) in shape.row_cells.iter().enumerate() {
                    let offset = offsets.get(i).copied().unwrap_or(shape.offset);
                    if found != expected {
                        self.report.findings.push(TableFinding::ColumnMismatch {
                            row: i + 1,
                            expected,
                            found,
                            offset,
                        });
                    }
                    if let Some(declared) = shape.declared_columns.filter(|d| *d > 0 && found > *d) {
                        self.report.findings.push(TableFinding::ExceedsColumnSpec {
                            row: i + 1,
                            declared,
                            found,
                            offset,
                        });
                    }
                }
            }
        }
        self.report.tables.push(shape);
    }

    fn run(mut self, src: &str) -> TableReport {
        let mut saw_table = false;
        while let Some((off, tok)) = self.toks.get(self.pos).cloned() {
            self.pos += 1;
            match tok {
                Tok::Word(w) if w == "begin" => {
                    let before = self.tables.len();
                    self.begin(src, off);
                    saw_table |= self.tables.len() > before;
                }
                Tok::Word(w) if w == "end" => self.end(src, off),
                Tok::Word(w) if w == "multicolumn" => {
                    let span = self.braced(src).and_then(|s| s.trim().parse::<usize>().ok());
                    if let Some(t) = self.current_table() {
                        t.cells += span.unwrap_or(1).saturating_sub(1);
                        t.content = true;
                    }
                }
                Tok::Word(w) if w == "tabularnewline" => self.row_break(off),
                Tok::Word(w) if RULE_COMMANDS.contains(&w.as_str()) => {}
                Tok::Symbol('\\') => self.row_break(off),
                Tok::Amp => {
                    if let Some(t) = self.current_table() {
                        t.cells += 1;
                    }
                }
                Tok::Open => {
                    if let Some(t) = self.current_table() {
                        t.content = true;
                    }
                    self.braces.push(off);
                }
                Tok::Close => {
                    if self.braces.pop().is_none() {
                        self.report.findings.push(TableFinding::UnmatchedCloseBrace { offset: off });
                    }
                }
                Tok::Char(c) if c.is_whitespace() => {}
                _ => {
                    if let Some(t) = self.current_table() {
                        t.content = true;
                    }
                }
            }
        }
        while !self.envs.is_empty() {
            self.close_env(false);
        }
        for off in std::mem::take(&mut self.braces) {
            self.report.findings.push(TableFinding::UnclosedBrace { offset: off });
        }
        if !saw_table {
            self.report.findings.push(TableFinding::NoTabular);
        }
        self.report.tables.sort_by_key(|t| t.offset);
        self.report
    }

    fn row_break(&mut self, off: usize) {
        let next = self.toks.get(self.pos).map_or(off, |t| t.0);
        let idx = self.tables.len();
        if let Some(t) = self.current_table() {
            let before = t.shape.row_cells.len();
            let start = t.row_offset;
            t.end_row();
            t.row_offset = next;
            let pushed = t.shape.row_cells.len() > before;
            if pushed {
                self.row_offsets[idx - 1].push(start);
            }
        }
    }
}

pub fn check_latex_table(text: &str) -> TableReport {
    let checker = Checker {
        toks: tokenize(text),
        pos: 0,
        braces: Vec::new(),
        envs: Vec::new(),
        tables: Vec::new(),
        report: TableReport::default(),
        row_offsets: Vec::new(),
    };
    checker.run(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_table() {
        let r = check_latex_table("\\begin{tabular}{|c|c|}\\hline x & y \\\\ \\hline 1 & 2 \\\\ \\hline\\end{tabular}");
        assert!(r.is_ok(), "{:?}", r.findings);
        assert_eq!(r.columns(), Some(2));
        assert_eq!(r.tables[0].row_cells, vec![2, 2]);
        assert_eq!(r.tables[0].declared_columns, Some(2));
    }

    #[test]
    fn unclosed_environment() {
        let r = check_latex_table("\\begin{tabular}{cc} a & b \\\\");
        assert_eq!(
            r.findings,
            vec![TableFinding::UnclosedEnvironment { name: "tabular".into(), offset: 0 }]
        );
    }

    #[test]
    fn column_mismatch_reported_with_row() {
        let r = check_latex_table("\\begin{tabular}{ccc}\na & b & c \\\\\n1 & 2 \\\\\n\\end{tabular}");
        assert_eq!(r.findings.len(), 1);
        match &r.findings[0] {
            TableFinding::ColumnMismatch { row, expected, found, .. } => {
                assert_eq!((*row, *expected, *found), (2, 3, 2));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn multicolumn_and_escaped_ampersand() {
        let src = "\\begin{tabular}{lcc}\\multicolumn{2}{c}{Head} & x \\\\ a \\& b & 1 & 2 \\\\\\end{tabular}";
        let r = check_latex_table(src);
        assert!(r.is_ok(), "{:?}", r.findings);
        assert_eq!(r.columns(), Some(3));
    }

    #[test]
    fn spec_counting() {
        assert_eq!(count_spec_columns("|l|c|r|"), 3);
        assert_eq!(count_spec_columns("p{2cm}c@{\\,}r"), 3);
        assert_eq!(count_spec_columns("*{4}{c}l"), 5);
        assert_eq!(count_spec_columns(">{\\bfseries}lX"), 2);
    }

    #[test]
    fn no_table_and_braces() {
        let r = check_latex_table("just {text}}");
        let codes: Vec<_> = r.findings.iter().map(TableFinding::code).collect();
        assert_eq!(codes, ["unmatched_close_brace", "no_tabular"]);
        let r = check_latex_table("{");
        let codes: Vec<_> = r.findings.iter().map(TableFinding::code).collect();
        assert_eq!(codes, ["unclosed_brace", "no_tabular"]);
    }

    #[test]
    fn nested_table_in_cell_is_separate() {
        let src = "\\begin{tabular}{cc} a & \\begin{tabular}{c} x \\\\ y \\end{tabular} \\\\ c & d \\\\ \\end{tabular}";
        let r = check_latex_table(src);
        assert!(r.is_ok(), "{:?}", r.findings);
        assert_eq!(r.tables.len(), 2);
        assert_eq!(r.tables[0].row_cells, vec![2, 2]);
        assert_eq!(r.tables[1].row_cells, vec![1, 1]);
    }

    #[test]
    fn trailing_backslash_and_comment() {
        let r = check_latex_table("% a comment with } brace\n\\begin{tabular}{c} 1 \\\\ \\end{tabular}\\");
        assert!(r.is_ok(), "{:?}", r.findings);
    }
}
