use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::distribution::csv_err;
use super::metrics::{confusion_matrix, precision_recall_f1, ClassMetrics, ConfusionMatrix};
use crate::error::{Error, Result};
use crate::text::Subtask;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunMeta {
    pub config: BTreeMap<String, String>,
    pub seed: u64,
    pub checkpoint: Option<String>,
}

/// Field names are a stable interface: `report.json` is this struct.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub subtask: Subtask,
    pub examples: u64,
    pub per_class: Vec<ClassMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
    pub meta: RunMeta,
}

impl EvalReport {
    pub fn from_predictions(
        subtask: Subtask,
        preds: &[usize],
        golds: &[usize],
        labels: &[String],
        meta: RunMeta,
    ) -> Result<Self> {
        let mut cm = confusion_matrix(preds, golds, subtask.arity())?;
        if labels.len() != subtask.arity() {
            return Err(Error::Input(format!(
                "{} label names for a {}-way subtask",
                labels.len(),
                subtask.arity()
            )));
        }
        cm.labels = labels.to_vec();
        let m = precision_recall_f1(&cm);
        Ok(Self {
            subtask,
            examples: cm.total(),
            per_class: m.per_class,
            macro_precision: m.macro_precision,
            macro_recall: m.macro_recall,
            macro_f1: m.macro_f1,
            accuracy: m.accuracy,
            confusion: cm,
            meta,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
    Svg,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 3] = [ReportFormat::Json, ReportFormat::Csv, ReportFormat::Svg];

    pub fn file_name(self) -> &'static str {
        match self {
            ReportFormat::Json => "report.json",
            ReportFormat::Csv => "report.csv",
            ReportFormat::Svg => "confusion.svg",
        }
    }
}

/// Write the requested renderings into `dir`; returns the paths written.
pub fn emit_report(report: &EvalReport, dir: &Path, formats: &[ReportFormat]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for &f in formats {
        let path = dir.join(f.file_name());
        match f {
            ReportFormat::Json => {
                let mut s = serde_json::to_string_pretty(report)
                    .map_err(|e| Error::Internal(format!("report serialization: {e}")))?;
                s.push('\n');
                std::fs::write(&path, s).map_err(|e| Error::io(&path, e))?;
            }
            ReportFormat::Csv => write_csv(report, &path)?,
            ReportFormat::Svg => std::fs::write(&path, confusion_svg(&report.confusion)).map_err(|e| Error::io(&path, e))?,
        }
        written.push(path);
    }
    Ok(written)
}

pub fn read_report(path: &Path) -> Result<EvalReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Input(format!("{}: {e}", path.display())))
}

/// `class,label,precision,recall,f1,support`; the last row is the macro average.
fn write_csv(report: &EvalReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["class", "label", "precision", "recall", "f1", "support"])
        .map_err(|e| csv_err(path, e))?;
    for (i, c) in report.per_class.iter().enumerate() {
        w.write_record([
            i.to_string(),
            c.label.clone(),
            c.precision.to_string(),
            c.recall.to_string(),
            c.f1.to_string(),
            c.support.to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.write_record([
        "macro".to_string(),
        "macro".to_string(),
        report.macro_precision.to_string(),
        report.macro_recall.to_string(),
        report.macro_f1.to_string(),
        report.examples.to_string(),
    ])
    .map_err(|e| csv_err(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Heatmap with gold classes as rows and predictions as columns. Cell
/// shade is the row-normalized share.
pub fn confusion_svg(cm: &ConfusionMatrix) -> String {
    const CELL: usize = 48;
    const MARGIN: usize = 40;
    let m = cm.classes();
    let size = MARGIN + m * CELL + 10;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<text x="{MARGIN}" y="12">predicted →</text>"#);
    let _ = writeln!(s, r#"<text x="2" y="{}" transform="rotate(-90 10 {0})">gold →</text>"#, MARGIN + 30);
    for i in 0..m {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="30" text-anchor="middle"><title>{}</title>{i}</text>"#,
            MARGIN + i * CELL + CELL / 2,
            xml_escape(&cm.labels[i])
        );
        let _ = writeln!(
            s,
            r#"<text x="30" y="{}" text-anchor="end"><title>{}</title>{i}</text>"#,
            MARGIN + i * CELL + CELL / 2 + 4,
            xml_escape(&cm.labels[i])
        );
    }
    for (g, row) in cm.counts.iter().enumerate() {
        let total: u64 = row.iter().sum();
        for (p, &n) in row.iter().enumerate() {
            let share = if total == 0 { 0.0 } else { n as f64 / total as f64 };
            let shade = 255 - (share * 200.0).round() as u8;
            let (x, y) = (MARGIN + p * CELL, MARGIN + g * CELL);
            let _ = writeln!(
                s,
                r#"<rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="rgb({shade},{shade},255)" stroke="grey"/>"#
            );
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="middle">{n}</text>"#,
                x + CELL / 2,
                y + CELL / 2 + 4
            );
        }
    }
    s.push_str("</svg>\n");
    s
}
