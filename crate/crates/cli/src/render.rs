//! Text views of JSON reports. Run and sweep accuracies print as percentages
//! with two decimals; diagnostic accuracies as fractions with two decimals
//! and F statistics with one.

use cane_core::{DiagnosticReport, RunReport};
use serde_json::Value;

use crate::sweep::SweepReport;
use crate::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum Report {
    Run(RunReport),
    Runs(Vec<RunReport>),
    Diagnostic(DiagnosticReport),
    Sweep(SweepReport),
}

impl Report {
    /// Recognises the report kind by its fields.
    pub fn parse(text: &str) -> CliResult<Self> {
        let v: Value = serde_json::from_str(text).map_err(|e| CliError::Data(format!("malformed report: {e}")))?;
        let fail = |e: serde_json::Error| CliError::Data(format!("malformed report: {e}"));
        let has = |k: &str| v.get(k).is_some();
        if v.is_array() {
            serde_json::from_value(v).map(Report::Runs).map_err(fail)
        } else if has("axis") {
            serde_json::from_value(v).map(Report::Sweep).map_err(fail)
        } else if has("fisher_p") {
            serde_json::from_value(v).map(Report::Diagnostic).map_err(fail)
        } else if has("mode") {
            serde_json::from_value(v).map(Report::Run).map_err(fail)
        } else {
            Err(CliError::Data("malformed report: unknown report kind".into()))
        }
    }

    pub fn render(&self) -> String {
        match self {
            Report::Run(r) => render_runs(std::slice::from_ref(r)),
            Report::Runs(rs) => render_runs(rs),
            Report::Diagnostic(d) => render_diagnostic(d),
            Report::Sweep(s) => render_sweep(s),
        }
    }
}

fn pct(x: Option<f64>) -> String {
    x.map_or_else(|| "-".into(), |a| format!("{:.2}", 100.0 * a))
}

fn sci(p: f64) -> String {
    format!("{p:.2e}")
}

/// Columns separated by two spaces; the first is left-aligned and the rest
/// right-aligned.
pub fn table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: &mut dyn Iterator<Item = &str>| {
        let mut s = String::new();
        for (i, (cell, w)) in cells.zip(&widths).enumerate() {
            let pad = w - cell.chars().count();
            if i == 0 {
                s.push_str(cell);
                s.extend(std::iter::repeat_n(' ', pad));
            } else {
                s.push_str("  ");
                s.extend(std::iter::repeat_n(' ', pad));
                s.push_str(cell);
            }
        }
        s.truncate(s.trim_end().len());
        s.push('\n');
        s
    };
    let mut out = line(&mut headers.iter().copied());
    for row in rows {
        out.push_str(&line(&mut row.iter().map(String::as_str)));
    }
    out
}

pub fn render_runs(runs: &[RunReport]) -> String {
    let rows: Vec<Vec<String>> = runs
        .iter()
        .map(|r| {
            vec![
                r.seed.to_string(),
                r.mode.to_string(),
                pct(r.accuracy),
                r.annotated.to_string(),
                r.expansion_admitted
                    .iter()
                    .map(usize::to_string)
                    .collect::<Vec<_>>()
                    .join("/"),
                r.rounds.to_string(),
                r.labels_corrected.to_string(),
                r.pct_round1.map_or_else(|| "-".into(), |p| format!("{p:.1}")),
                r.final_pool_size.to_string(),
            ]
        })
        .collect();
    table(
        &[
            "seed",
            "mode",
            "acc%",
            "annotated",
            "admitted",
            "rounds",
            "corrected",
            "round1%",
            "pool",
        ],
        &rows,
    )
}

pub fn render_diagnostic(d: &DiagnosticReport) -> String {
    let summary = table(
        &["T_ii", "delta", "F", "p", "classes"],
        &[vec![
            format!("{:.2}", d.t_ii),
            format!("{:.2}", d.delta_bar),
            format!("{:.1}", d.f_bar),
            sci(d.fisher_p),
            d.class_tests.len().to_string(),
        ]],
    );
    let rows: Vec<Vec<String>> = d
        .class_tests
        .iter()
        .map(|t| {
            vec![
                t.class.to_string(),
                d.class_accuracy
                    .get(t.class)
                    .copied()
                    .flatten()
                    .map_or_else(|| "-".into(), |a| format!("{a:.2}")),
                t.groups.to_string(),
                format!("{:.1}", t.f),
                sci(t.p),
            ]
        })
        .collect();
    let per_class = table(&["class", "T_ii", "clusters", "F", "p"], &rows);
    format!("{summary}\n{per_class}")
}

pub fn render_sweep(s: &SweepReport) -> String {
    let rows: Vec<Vec<String>> = s
        .rows
        .iter()
        .map(|r| {
            vec![
                r.value.clone(),
                r.runs.to_string(),
                r.failures.to_string(),
                pct(r.mean),
                pct(r.std),
            ]
        })
        .collect();
    table(&[s.axis.as_str(), "runs", "failed", "mean%", "std%"], &rows)
}
