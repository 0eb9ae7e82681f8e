//! CSV tables, the run manifest, and atomic file writes.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::fmt_f64;
use crate::metrics::{AccuracyGrid, InterferenceGrid, MetricReport, SpectraRow};
use crate::trainer::AblationRow;

/// Writes through a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// `stage,task,accuracy`, stages and tasks 1-based, one row per cell.
pub fn grid_csv(grid: &AccuracyGrid) -> String {
    let mut s = String::from("stage,task,accuracy\n");
    for i in 0..grid.n_tasks() {
        for t in 0..grid.n_tasks() {
            let _ = writeln!(s, "{},{},{}", i + 1, t + 1, opt(grid.get(i, t)));
        }
    }
    s
}

/// `task,accuracy` for the untouched model.
pub fn zero_shot_csv(acc: &[f64]) -> String {
    let mut s = String::from("task,accuracy\n");
    for (t, a) in acc.iter().enumerate() {
        let _ = writeln!(s, "{},{}", t + 1, fmt_f64(*a));
    }
    s
}

/// `task,transfer,average,last`; the final row (`mean`) holds the aggregates.
/// Transfer is empty where undefined.
pub fn metrics_csv(report: &MetricReport) -> String {
    let mut s = String::from("task,transfer,average,last\n");
    for (t, m) in report.per_task.iter().enumerate() {
        let _ = writeln!(s, "{},{},{},{}", t + 1, opt(m.transfer), fmt_f64(m.average), fmt_f64(m.last));
    }
    let _ = writeln!(
        s,
        "mean,{},{},{}",
        opt(report.transfer),
        fmt_f64(report.average),
        fmt_f64(report.last)
    );
    s
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from(
        "variant,transfer,average,last,delta_transfer,delta_average,delta_last,backward_forgetting_derived\n",
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.variant,
            opt(r.transfer),
            fmt_f64(r.average),
            fmt_f64(r.last),
            opt(r.delta_transfer),
            fmt_f64(r.delta_average),
            fmt_f64(r.delta_last),
            opt(r.backward_forgetting),
        );
    }
    s
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlasticityRow {
    pub variant: String,
    pub task: String,
    pub isolated_acc: f64,
    pub sequential_acc: f64,
}

impl PlasticityRow {
    pub fn drop(&self) -> f64 {
        self.isolated_acc - self.sequential_acc
    }
}

pub fn plasticity_csv(rows: &[PlasticityRow]) -> String {
    let mut s = String::from("variant,task,isolated_acc,sequential_acc,drop\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.variant,
            r.task,
            fmt_f64(r.isolated_acc),
            fmt_f64(r.sequential_acc),
            fmt_f64(r.drop())
        );
    }
    s
}

pub fn spectra_csv(rows: &[SpectraRow]) -> String {
    let mut s = String::from("k,task,accuracy\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{}", r.k, r.task, fmt_f64(r.accuracy));
    }
    s
}

/// Header `task_1,…,task_n`, one row per stage, then the per-stage means.
pub fn heatmap_csv(grid: &InterferenceGrid, raw: bool) -> String {
    let m = if raw { grid.raw() } else { grid.norms.clone() };
    let n = m.cols();
    let header: Vec<String> = (1..=n).map(|j| format!("task_{j}")).collect();
    let mut s = header.join(",");
    s.push('\n');
    let line = |vals: &[f64]| vals.iter().map(|&v| fmt_f64(v)).collect::<Vec<_>>().join(",");
    for i in 0..m.rows() {
        s.push_str(&line(m.row(i)));
        s.push('\n');
    }
    let means: Vec<f64> = if raw {
        grid.column_means.iter().map(|v| v * grid.scale).collect()
    } else {
        grid.column_means.clone()
    };
    s.push_str(&line(&means));
    s.push('\n');
    s
}

#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    /// Effective config as TOML.
    pub config: String,
    pub stream_fingerprint: String,
    pub checkpoints: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub wall_clock_secs: Vec<f64>,
}

impl RunManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }
}
