//! Rendering audit reports as markdown, CSV or JSON.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{EquityReport, MetricKind, MetricResult, MetricStatus};

pub const SCHEMA_VERSION: u32 = 1;

pub const REPORT_CSV_COLUMNS: [&str; 9] = [
    "metric",
    "scenario",
    "group0_value",
    "group1_value",
    "contrast",
    "statistic",
    "df",
    "p_value",
    "flagged",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Markdown,
    Csv,
    Json,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Markdown => "md",
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub schema_version: u32,
    pub reports: Vec<EquityReport>,
}

/// p-values: two significant digits in scientific notation, floored at 1e-15.
pub fn format_p(p: f64) -> String {
    if p < 1e-15 {
        "<1e-15".to_string()
    } else {
        format!("{p:.1e}")
    }
}

fn num(x: f64) -> String {
    format!("{x:.4}")
}

fn contrast_label(kind: MetricKind) -> Option<&'static str> {
    match kind {
        MetricKind::Representativeness => Some("min I - I*"),
        MetricKind::TreatmentGap => Some("gap"),
        MetricKind::OutcomeDecomposition => Some("tau x gap"),
        MetricKind::SystemicLogistic => Some("beta_A"),
        MetricKind::SystemicCmh => None,
        _ => Some("diff"),
    }
}

fn markdown_cell(m: &MetricResult) -> String {
    let mut parts = Vec::new();
    match &m.status {
        MetricStatus::Skipped(reason) => return reason.clone(),
        MetricStatus::Untestable(reason) => return format!("untestable: {reason}"),
        MetricStatus::Computed => {}
    }
    if let (Some(g0), Some(g1)) = (m.group_values.get(&0), m.group_values.get(&1)) {
        parts.push(format!("A=1: {} / A=0: {}", num(*g1), num(*g0)));
    }
    if m.metric == MetricKind::OutcomeDecomposition {
        if let Some(tau) = m.details.get("tau") {
            parts.push(format!("tau = {}", num(*tau)));
        }
    }
    if let (Some(label), Some(c)) = (contrast_label(m.metric), m.contrast) {
        parts.push(format!("{label} = {}", num(c)));
    }
    if let Some(t) = &m.test {
        parts.push(format!("p = {}", format_p(t.p_value)));
    }
    let mut cell = parts.join("; ");
    if m.flagged {
        cell.push_str(" **[FLAG]**");
    }
    cell
}

fn escape_pipes(s: &str) -> String {
    s.replace('|', "\\|")
}

pub fn render_markdown(reports: &[EquityReport]) -> Result<String> {
    require_reports(reports)?;
    let mut out = String::from("# Data equity audit\n\n");
    let threshold = reports
        .iter()
        .filter_map(|r| r.metric(MetricKind::Representativeness))
        .find_map(|m| m.details.get("threshold"));
    if let Some(t) = threshold {
        let _ = writeln!(out, "Detection threshold I* = {}\n", num(*t));
    }
    out.push_str("| Metric | Interpretation |");
    for r in reports {
        let _ = write!(out, " {} |", escape_pipes(&r.scenario_label));
    }
    out.push_str("\n|---|---|");
    out.push_str(&"---|".repeat(reports.len()));
    out.push('\n');
    for kind in MetricKind::ALL {
        let _ = write!(out, "| {} | {} |", escape_pipes(kind.title()), escape_pipes(kind.interpretation()));
        for r in reports {
            let cell = r.metric(kind).map(markdown_cell).unwrap_or_else(|| "missing".into());
            let _ = write!(out, " {} |", escape_pipes(&cell));
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn render_csv(reports: &[EquityReport]) -> Result<String> {
    require_reports(reports)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(REPORT_CSV_COLUMNS)?;
    let opt = |x: Option<f64>| x.map(num).unwrap_or_default();
    for r in reports {
        for m in &r.metrics {
            w.write_record([
                m.metric.id().to_string(),
                r.scenario_label.clone(),
                opt(m.group_values.get(&0).copied()),
                opt(m.group_values.get(&1).copied()),
                opt(m.contrast),
                opt(m.test.map(|t| t.statistic)),
                opt(m.test.and_then(|t| t.df)),
                m.test.map(|t| format_p(t.p_value)).unwrap_or_default(),
                m.flagged.to_string(),
            ])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn render_json(reports: &[EquityReport]) -> Result<String> {
    require_reports(reports)?;
    let bundle = ReportBundle { schema_version: SCHEMA_VERSION, reports: reports.to_vec() };
    let mut text = serde_json::to_string_pretty(&bundle)?;
    text.push('\n');
    Ok(text)
}

pub fn parse_json(text: &str) -> Result<Vec<EquityReport>> {
    let bundle: ReportBundle = serde_json::from_str(text)?;
    if bundle.schema_version != SCHEMA_VERSION {
        return Err(Error::InvalidArgument(format!(
            "unsupported report schema_version {} (expected {SCHEMA_VERSION})",
            bundle.schema_version
        )));
    }
    Ok(bundle.reports)
}

pub fn render_report(reports: &[EquityReport], format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Markdown => render_markdown(reports),
        ReportFormat::Csv => render_csv(reports),
        ReportFormat::Json => render_json(reports),
    }
}

pub fn write_report(reports: &[EquityReport], format: ReportFormat, path: impl AsRef<Path>) -> Result<()> {
    let text = render_report(reports, format)?;
    fs::write(path, text)?;
    Ok(())
}

fn require_reports(reports: &[EquityReport]) -> Result<()> {
    if reports.is_empty() {
        Err(Error::InvalidArgument("no reports to write".into()))
    } else {
        Ok(())
    }
}
