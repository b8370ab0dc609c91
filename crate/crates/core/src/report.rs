//! Report emitters: best-threshold table, lossless CSV/JSON dumps and plot
//! series.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{
    best_threshold_in, Criterion, Curve, MetricKind, PixelThresholdGrid, Scope, SweepEntry,
    SweepResult,
};

/// Pixel thresholds shown as table columns when present in the grid.
pub const TABLE_EPS: [f64; 4] = [1.0, 3.0, 5.0, 10.0];

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("malformed report: {0}")]
    Parse(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Table,
    Csv,
    Json,
    Plotdata,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 4] = [
        ReportFormat::Table,
        ReportFormat::Csv,
        ReportFormat::Json,
        ReportFormat::Plotdata,
    ];

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "table" => Some(Self::Table),
            "csv" => Some(Self::Csv),
            "json" => Some(Self::Json),
            "plotdata" => Some(Self::Plotdata),
            _ => None,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    method: String,
    sweep_value: f64,
    metric: MetricKind,
    subset: Scope,
    eps: f64,
    accuracy: f64,
    mean_matches: f64,
    mean_features: Option<f64>,
}

/// One row per (sweep value, curve, eps).
pub fn to_csv(s: &SweepResult) -> Result<String, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for e in &s.entries {
        for c in &e.curves {
            for (&eps, &accuracy) in s.grid.values().iter().zip(&c.values) {
                w.serialize(CsvRow {
                    method: s.method.clone(),
                    sweep_value: e.sweep_value,
                    metric: c.metric,
                    subset: c.scope,
                    eps,
                    accuracy,
                    mean_matches: e.mean_matches,
                    mean_features: e.mean_features,
                })?;
            }
        }
    }
    let bytes = w.into_inner().map_err(|e| ReportError::Parse(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| ReportError::Parse(e.to_string()))
}

pub fn from_csv(text: &str) -> Result<SweepResult, ReportError> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let rows: Vec<CsvRow> = r.deserialize().collect::<Result<_, _>>()?;
    let Some(first) = rows.first() else {
        return Err(ReportError::Parse("no data rows".into()));
    };
    let method = first.method.clone();
    let mut entries: Vec<SweepEntry> = Vec::new();
    let mut grid: Vec<f64> = Vec::new();
    let mut eps_of_curve: Vec<f64> = Vec::new();
    for row in rows {
        if row.method != method {
            return Err(ReportError::Parse(format!("mixed methods {method:?} and {:?}", row.method)));
        }
        let new_entry = entries.last().is_none_or(|e| e.sweep_value != row.sweep_value);
        if new_entry {
            entries.push(SweepEntry {
                sweep_value: row.sweep_value,
                curves: Vec::new(),
                mean_matches: row.mean_matches,
                mean_features: row.mean_features,
            });
        }
        let entry = entries.last_mut().expect("pushed above");
        let same_curve = entry
            .curves
            .last()
            .is_some_and(|c| c.metric == row.metric && c.scope == row.subset);
        if !same_curve {
            close_curve(&mut grid, &mut eps_of_curve)?;
            entry.curves.push(Curve {
                metric: row.metric,
                scope: row.subset,
                values: Vec::new(),
            });
        }
        eps_of_curve.push(row.eps);
        entry.curves.last_mut().expect("pushed above").values.push(row.accuracy);
    }
    close_curve(&mut grid, &mut eps_of_curve)?;
    let grid = PixelThresholdGrid::new(grid).map_err(|e| ReportError::Parse(e.to_string()))?;
    Ok(SweepResult { method, grid, entries })
}

/// Checks a finished curve's eps column against the grid (or adopts it as
/// the grid for the first curve).
fn close_curve(grid: &mut Vec<f64>, eps: &mut Vec<f64>) -> Result<(), ReportError> {
    if eps.is_empty() {
        return Ok(());
    }
    if grid.is_empty() {
        *grid = std::mem::take(eps);
    } else if *grid != *eps {
        return Err(ReportError::Parse(format!("curve thresholds {eps:?} differ from {grid:?}")));
    } else {
        eps.clear();
    }
    Ok(())
}

pub fn to_json(s: &SweepResult) -> Result<String, ReportError> {
    let mut out = serde_json::to_string_pretty(s)?;
    out.push('\n');
    Ok(out)
}

pub fn from_json(text: &str) -> Result<SweepResult, ReportError> {
    Ok(serde_json::from_str(text)?)
}

fn scopes_present(s: &SweepResult) -> Vec<Scope> {
    Scope::ALL
        .into_iter()
        .filter(|&sc| s.entries.iter().any(|e| e.curves.iter().any(|c| c.scope == sc)))
        .collect()
}

/// Accuracy against sweep value for every (scope, metric, eps).
pub fn plot_sweep_csv(s: &SweepResult) -> String {
    let mut out = String::from("scope,metric,eps,sweep_value,accuracy\n");
    for scope in scopes_present(s) {
        for metric in MetricKind::ALL {
            for (i, eps) in s.grid.values().iter().enumerate() {
                for e in &s.entries {
                    if let Some(c) = e.curve(metric, scope) {
                        let _ = writeln!(out, "{},{},{},{},{}", scope.as_str(), metric.as_str(), eps, e.sweep_value, c.values[i]);
                    }
                }
            }
        }
    }
    out
}

/// Accuracy against eps at each curve's AUC-optimal sweep value.
pub fn plot_best_csv(s: &SweepResult) -> String {
    let mut out = String::from("scope,metric,sweep_value,eps,accuracy\n");
    for scope in scopes_present(s) {
        for metric in MetricKind::ALL {
            let Some((t, _)) = best_threshold_in(s, metric, scope, Criterion::Auc) else {
                continue;
            };
            let c = s.entry(t).and_then(|e| e.curve(metric, scope)).expect("best entry exists");
            for (eps, v) in s.grid.values().iter().zip(&c.values) {
                let _ = writeln!(out, "{},{},{},{},{}", scope.as_str(), metric.as_str(), t, eps, v);
            }
        }
    }
    out
}

/// Best accuracy and its threshold per pixel threshold, then best AUC with
/// its threshold, mean match count and mean feature count.
pub fn table(s: &SweepResult) -> String {
    let eps_cols: Vec<f64> = TABLE_EPS.into_iter().filter(|e| s.grid.index_of(*e).is_some()).collect();
    let mut out = String::new();
    let _ = writeln!(out, "method: {}", s.method);
    let _ = writeln!(
        out,
        "best accuracy (threshold); AUC = mean accuracy over {} px; features = mean keypoints per image",
        grid_label(&s.grid)
    );
    let mut header = format!("{:<6} {:<13}", "metric", "scope");
    for e in &eps_cols {
        let _ = write!(header, " {:>13}", format!("@{e}px"));
    }
    let _ = write!(header, " {:>15} {:>9} {:>9}", "AUC", "matches", "features");
    let _ = writeln!(out, "{header}");
    for metric in MetricKind::ALL {
        for scope in scopes_present(s) {
            let mut line = format!("{:<6} {:<13}", metric.to_string(), scope.as_str());
            for &eps in &eps_cols {
                let cell = best_threshold_in(s, metric, scope, Criterion::AtEps(eps))
                    .map_or("-".into(), |(t, v)| format!("{v:.3} ({t})"));
                let _ = write!(line, " {cell:>13}");
            }
            match best_threshold_in(s, metric, scope, Criterion::Auc) {
                Some((t, v)) => {
                    let e = s.entry(t).expect("best entry exists");
                    let features = e.mean_features.map_or("-".into(), |f| format!("{f:.1}"));
                    let auc_cell = format!("{:.2}% ({t})", v * 100.0);
                    let _ = write!(line, " {auc_cell:>15} {:>9.1} {features:>9}", e.mean_matches);
                }
                None => {
                    let _ = write!(line, " {:>15} {:>9} {:>9}", "-", "-", "-");
                }
            }
            let _ = writeln!(out, "{}", line.trim_end());
        }
    }
    out
}

fn grid_label(grid: &PixelThresholdGrid) -> String {
    match (grid.values().first(), grid.values().last()) {
        (Some(a), Some(b)) if a != b => format!("{a}..{b}"),
        (Some(a), _) => format!("{a}"),
        _ => String::new(),
    }
}

fn write_file(path: PathBuf, text: &str, written: &mut Vec<PathBuf>) -> Result<(), ReportError> {
    fs::write(&path, text).map_err(|source| ReportError::Io { path: path.clone(), source })?;
    written.push(path);
    Ok(())
}

/// Writes the requested formats as `<stem>.txt`, `<stem>.csv`,
/// `<stem>.json` and `<stem>_plot_sweep.csv` + `<stem>_plot_best.csv`.
pub fn emit_report(
    s: &SweepResult,
    formats: &[ReportFormat],
    out_dir: &Path,
    stem: &str,
) -> Result<Vec<PathBuf>, ReportError> {
    fs::create_dir_all(out_dir).map_err(|source| ReportError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let mut written = Vec::new();
    for f in formats {
        match f {
            ReportFormat::Table => write_file(out_dir.join(format!("{stem}.txt")), &table(s), &mut written)?,
            ReportFormat::Csv => write_file(out_dir.join(format!("{stem}.csv")), &to_csv(s)?, &mut written)?,
            ReportFormat::Json => write_file(out_dir.join(format!("{stem}.json")), &to_json(s)?, &mut written)?,
            ReportFormat::Plotdata => {
                write_file(out_dir.join(format!("{stem}_plot_sweep.csv")), &plot_sweep_csv(s), &mut written)?;
                write_file(out_dir.join(format!("{stem}_plot_best.csv")), &plot_best_csv(s), &mut written)?;
            }
        }
    }
    Ok(written)
}
