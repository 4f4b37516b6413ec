//! Metrics CSV: fixed seven-column schema, floats at nine significant digits,
//! empty cells for inapplicable fields. Training and evaluation rows leave
//! wall_clock_ms empty so artifact files stay byte-deterministic; only bench
//! rows carry timings.

use std::path::Path;

use crate::error::{LabError, Result};
use crate::fsio::write_atomic;

pub const METRICS_COLUMNS: [&str; 7] = [
    "step",
    "split",
    "scorer",
    "loss",
    "win_rate",
    "lr",
    "wall_clock_ms",
];

#[derive(Debug, Clone)]
pub struct MetricRow {
    pub step: u64,
    pub split: String,
    pub scorer: String,
    pub loss: Option<f64>,
    pub win_rate: Option<f64>,
    pub lr: Option<f64>,
    pub wall_clock_ms: Option<f64>,
}

/// Nine significant digits, scientific notation.
pub fn format_float(x: f64) -> String {
    format!("{x:.8e}")
}

fn opt(x: Option<f64>) -> String {
    x.map(format_float).unwrap_or_default()
}

impl MetricRow {
    fn fields(&self) -> Vec<String> {
        vec![
            self.step.to_string(),
            self.split.clone(),
            self.scorer.clone(),
            opt(self.loss),
            opt(self.win_rate),
            opt(self.lr),
            opt(self.wall_clock_ms),
        ]
    }
}

/// Render rows under a header, refusing ragged rows or cells that would need
/// quoting.
pub fn render_csv(header: &[&str], rows: &[Vec<String>]) -> Result<String> {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        if row.len() != header.len() {
            return Err(LabError::InconsistentColumns {
                expected: header.len(),
                got: row.len(),
            });
        }
        for cell in row {
            if cell.contains(',') || cell.contains('"') || cell.contains('\n') {
                return Err(LabError::InvalidConfig(format!(
                    "csv cell '{cell}' needs quoting, which this schema forbids"
                )));
            }
        }
        out.push_str(&row.join(","));
        out.push('\n');
    }
    Ok(out)
}

pub fn render_metrics(rows: &[MetricRow]) -> Result<String> {
    let fields: Vec<Vec<String>> = rows.iter().map(MetricRow::fields).collect();
    render_csv(&METRICS_COLUMNS, &fields)
}

pub fn write_metrics(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let text = render_metrics(rows)?;
    write_atomic(path, text.as_bytes())
}
