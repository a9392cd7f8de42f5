use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Deserialize;
use thiserror::Error;

use super::{average_score, ParsePercentError, Percent, ScoredRun};
use crate::data_model::ErrorCategory;

pub const CSV_HEADER: &str = "model,step,vis,cal,reas,know,mis,overall,average";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Column {
    Step,
    Category(ErrorCategory),
    Overall,
    Average,
}

impl Column {
    pub const ALL: [Column; 8] = [
        Column::Step,
        Column::Category(ErrorCategory::Vis),
        Column::Category(ErrorCategory::Cal),
        Column::Category(ErrorCategory::Reas),
        Column::Category(ErrorCategory::Know),
        Column::Category(ErrorCategory::Mis),
        Column::Overall,
        Column::Average,
    ];

    fn title(self) -> &'static str {
        match self {
            Column::Step => "STEP",
            Column::Category(c) => c.code(),
            Column::Overall => "Overall",
            Column::Average => "Average",
        }
    }
}

/// One row of the results table. Values are exact; rounding to two decimals
/// happens when rendering.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunReport {
    pub step: Percent,
    pub categories: BTreeMap<ErrorCategory, Percent>,
    pub overall: Percent,
    pub average: Percent,
}

impl RunReport {
    pub fn from_scored(run: &ScoredRun) -> Self {
        let step = run.step_accuracy();
        let overall = run.overall_micro();
        let average = average_score(&step, &overall);
        Self { step, categories: run.category_accuracy(), overall, average }
    }

    pub fn get(&self, column: Column) -> Option<&Percent> {
        match column {
            Column::Step => Some(&self.step),
            Column::Category(c) => self.categories.get(&c),
            Column::Overall => Some(&self.overall),
            Column::Average => Some(&self.average),
        }
    }
}

/// Signed per-column differences between two reports.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReportDelta {
    pub values: BTreeMap<Column, Percent>,
}

impl ReportDelta {
    pub fn get(&self, column: Column) -> Option<&Percent> {
        self.values.get(&column)
    }
}

/// `enhanced - base` for every column present in both reports.
pub fn improvement_delta(base: &RunReport, enhanced: &RunReport) -> ReportDelta {
    let values = Column::ALL
        .into_iter()
        .filter_map(|col| Some((col, enhanced.get(col)? - base.get(col)?)))
        .collect();
    ReportDelta { values }
}

/// Column-wise mean of several deltas.
pub fn average_improvement(deltas: &[ReportDelta]) -> ReportDelta {
    let values = Column::ALL
        .into_iter()
        .filter_map(|col| Some((col, Percent::mean(deltas.iter().filter_map(|d| d.get(col)))?)))
        .collect();
    ReportDelta { values }
}

fn csv_field(text: &str) -> String {
    if text.contains([',', '"', '\n']) {
        format!("\"{}\"", text.replace('"', "\"\""))
    } else {
        text.to_string()
    }
}

/// CSV with [`CSV_HEADER`]; absent categories are empty cells.
pub fn render_csv(rows: &[(&str, &RunReport)]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for (label, report) in rows {
        out.push_str(&csv_field(label));
        for col in Column::ALL {
            out.push(',');
            if let Some(v) = report.get(col) {
                out.push_str(&v.format(2));
            }
        }
        out.push('\n');
    }
    out
}

pub enum MarkdownRow<'a> {
    Report { label: &'a str, report: &'a RunReport, delta: Option<&'a ReportDelta> },
    Delta { label: &'a str, delta: &'a ReportDelta },
}

fn delta_text(d: &Percent) -> String {
    let arrow = if d.round_half_up(1).is_negative() { '↓' } else { '↑' };
    format!("{}{arrow}", d.abs().format(1))
}

/// Markdown results table with STEP, the five categories, Overall and
/// Average. Deltas against a baseline render as superscripts.
pub fn render_markdown(rows: &[MarkdownRow<'_>]) -> String {
    let mut out = String::from("| Model |");
    for col in Column::ALL {
        let _ = write!(out, " {} |", col.title());
    }
    out.push_str("\n| :--- |");
    out.push_str(&" ---: |".repeat(Column::ALL.len()));
    out.push('\n');
    for row in rows {
        match row {
            MarkdownRow::Report { label, report, delta } => {
                let _ = write!(out, "| {label} |");
                for col in Column::ALL {
                    match report.get(col) {
                        Some(v) => {
                            out.push(' ');
                            out.push_str(&v.format(2));
                            if let Some(d) = delta.and_then(|d| d.get(col)) {
                                let _ = write!(out, "<sup>{}</sup>", delta_text(d));
                            }
                            out.push_str(" |");
                        }
                        None => out.push_str(" – |"),
                    }
                }
            }
            MarkdownRow::Delta { label, delta } => {
                let _ = write!(out, "| {label} |");
                for col in Column::ALL {
                    match delta.get(col) {
                        Some(d) => {
                            let _ = write!(out, " {} |", delta_text(d));
                        }
                        None => out.push_str(" – |"),
                    }
                }
            }
        }
        out.push('\n');
    }
    out
}

/// Pre-computed table values, e.g. transcribed from a published results
/// table. Numbers are decimal strings so that they stay exact.
#[derive(Debug, Clone, Deserialize)]
pub struct ReportInput {
    pub rows: Vec<ReportInputRow>,
    #[serde(default)]
    pub average_improvement: bool,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ReportInputRow {
    pub model: String,
    pub step: String,
    pub vis: Option<String>,
    pub cal: Option<String>,
    pub reas: Option<String>,
    pub know: Option<String>,
    pub mis: Option<String>,
    pub overall: String,
    pub average: String,
    /// Model name of an earlier row this one is compared against.
    pub baseline: Option<String>,
}

#[derive(Debug, Error)]
pub enum ReportInputError {
    #[error("row {row}: {source}")]
    Number {
        row: usize,
        #[source]
        source: ParsePercentError,
    },
    #[error("row {row}: baseline {name:?} does not name an earlier row")]
    UnknownBaseline { row: usize, name: String },
}

impl ReportInputRow {
    pub fn to_report(&self) -> Result<RunReport, ParsePercentError> {
        let mut categories = BTreeMap::new();
        for (c, v) in ErrorCategory::ALL.into_iter().zip([&self.vis, &self.cal, &self.reas, &self.know, &self.mis]) {
            if let Some(v) = v {
                categories.insert(c, Percent::from_decimal(v)?);
            }
        }
        Ok(RunReport {
            step: Percent::from_decimal(&self.step)?,
            categories,
            overall: Percent::from_decimal(&self.overall)?,
            average: Percent::from_decimal(&self.average)?,
        })
    }
}

pub fn render_report_input(input: &ReportInput) -> Result<String, ReportInputError> {
    let mut reports = Vec::with_capacity(input.rows.len());
    for (i, row) in input.rows.iter().enumerate() {
        reports.push(row.to_report().map_err(|source| ReportInputError::Number { row: i + 1, source })?);
    }
    let mut deltas: Vec<Option<ReportDelta>> = Vec::with_capacity(reports.len());
    for (i, row) in input.rows.iter().enumerate() {
        let delta = match &row.baseline {
            None => None,
            Some(name) => {
                let base = input.rows[..i]
                    .iter()
                    .rposition(|r| &r.model == name)
                    .ok_or_else(|| ReportInputError::UnknownBaseline { row: i + 1, name: name.clone() })?;
                Some(improvement_delta(&reports[base], &reports[i]))
            }
        };
        deltas.push(delta);
    }
    let summary = input
        .average_improvement
        .then(|| average_improvement(&deltas.iter().flatten().cloned().collect::<Vec<_>>()));
    let mut rows: Vec<MarkdownRow<'_>> = input
        .rows
        .iter()
        .zip(&reports)
        .zip(&deltas)
        .map(|((row, report), delta)| MarkdownRow::Report { label: &row.model, report, delta: delta.as_ref() })
        .collect();
    if let Some(summary) = &summary {
        rows.push(MarkdownRow::Delta { label: "Average Improvement", delta: summary });
    }
    Ok(render_markdown(&rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> Percent {
        Percent::from_decimal(s).unwrap()
    }

    fn report(vals: [&str; 8]) -> RunReport {
        RunReport {
            step: p(vals[0]),
            categories: ErrorCategory::ALL.into_iter().zip(vals[1..6].iter().map(|v| p(v))).collect(),
            overall: p(vals[6]),
            average: p(vals[7]),
        }
    }

    #[test]
    fn gpt4o_step_delta() {
        let base = report(["55.10", "46.30", "50.40", "64.90", "9.20", "46.30", "53.08", "54.09"]);
        let enhanced = report(["59.50", "48.40", "55.00", "63.90", "9.50", "54.00", "55.11", "57.30"]);
        let d = improvement_delta(&base, &enhanced);
        assert_eq!(d.get(Column::Step).unwrap().format(1), "4.4");
        assert_eq!(d.get(Column::Category(ErrorCategory::Reas)).unwrap().format(1), "-1.0");
    }

    #[test]
    fn identical_reports_zero_delta() {
        let r = report(["1", "2", "3", "4", "5", "6", "7", "8"]);
        let d = improvement_delta(&r, &r);
        assert_eq!(d.values.len(), 8);
        assert!(d.values.values().all(|v| v.format(1) == "0.0"));
    }

    #[test]
    fn csv_layout() {
        let mut r = report(["50", "1", "2", "3", "4", "5", "6.125", "7"]);
        r.categories.remove(&ErrorCategory::Know);
        let csv = render_csv(&[("a,b", &r)]);
        assert_eq!(csv, format!("{CSV_HEADER}\n\"a,b\",50.00,1.00,2.00,3.00,,5.00,6.13,7.00\n"));
    }

    #[test]
    fn markdown_superscripts() {
        let base = report(["10", "10", "10", "10", "10", "10", "10", "10"]);
        let up = report(["12.5", "9", "10", "10", "10", "10", "10", "10"]);
        let d = improvement_delta(&base, &up);
        let md = render_markdown(&[MarkdownRow::Report { label: "x", report: &up, delta: Some(&d) }]);
        assert!(md.contains("12.50<sup>2.5↑</sup>"), "{md}");
        assert!(md.contains("9.00<sup>1.0↓</sup>"), "{md}");
        assert!(md.contains("10.00<sup>0.0↑</sup>"), "{md}");
    }
}
