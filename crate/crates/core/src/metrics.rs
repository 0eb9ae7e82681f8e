//! Continual-learning scores over an accuracy grid, cross-task adapter
//! interference, and spectral-truncation accuracy tables.

use std::fmt;

use thiserror::Error;

use crate::linalg::{svd, DenseMatrix, LinalgError};
use crate::model::{accuracy_from_logits, LinearModel, ModelError};
use crate::tasks::{Task, TaskStream};
use crate::trainer::StageSnapshot;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("accuracy grid is missing cells (stage, task): {}", fmt_cells(.0))]
    Incomplete(Vec<(usize, usize)>),
    #[error("grid is empty")]
    Empty,
    #[error("expected {expected} stage snapshots, got {got}")]
    MissingCheckpoint { expected: usize, got: usize },
    #[error("k={k} is outside [1, {max}]")]
    Rank { k: usize, max: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

fn fmt_cells(cells: &[(usize, usize)]) -> String {
    cells
        .iter()
        .map(|(i, t)| format!("({}, {})", i + 1, t + 1))
        .collect::<Vec<_>>()
        .join(", ")
}

/// `a[i][t]`: accuracy on task `t` after training stage `i` (both 0-based).
#[derive(Clone, Debug, PartialEq)]
pub struct AccuracyGrid {
    cells: Vec<Vec<Option<f64>>>,
}

impl AccuracyGrid {
    pub fn new(n_tasks: usize) -> Self {
        Self {
            cells: vec![vec![None; n_tasks]; n_tasks],
        }
    }

    /// Builds a complete grid from rows (one row per stage).
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let mut g = Self::new(n);
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(r.len(), n, "grid must be square");
            for (t, &v) in r.iter().enumerate() {
                g.set(i, t, v);
            }
        }
        g
    }

    pub fn n_tasks(&self) -> usize {
        self.cells.len()
    }

    pub fn set(&mut self, stage: usize, task: usize, acc: f64) {
        self.cells[stage][task] = Some(acc);
    }

    pub fn get(&self, stage: usize, task: usize) -> Option<f64> {
        self.cells[stage][task]
    }

    /// Accuracy, panicking on a missing cell.
    pub fn at(&self, stage: usize, task: usize) -> f64 {
        self.cells[stage][task].expect("grid cell populated")
    }

    pub fn row(&self, stage: usize) -> Vec<Option<f64>> {
        self.cells[stage].clone()
    }

    pub fn missing(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, r) in self.cells.iter().enumerate() {
            for (t, c) in r.iter().enumerate() {
                if c.is_none() {
                    out.push((i, t));
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TaskMetrics {
    /// Absent for the first task.
    pub transfer: Option<f64>,
    pub average: f64,
    pub last: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub per_task: Vec<TaskMetrics>,
    /// Mean over tasks 2..n; absent for a single task.
    pub transfer: Option<f64>,
    pub average: f64,
    pub last: f64,
}

/// Transfer_t = mean of `a_t` over stages before `t`; Average_t = mean of
/// `a_t` over all stages; Last_t = `a_t` after the final stage. Aggregates
/// are unweighted means over tasks.
pub fn compute_metrics(grid: &AccuracyGrid) -> Result<MetricReport, MetricsError> {
    let n = grid.n_tasks();
    if n == 0 {
        return Err(MetricsError::Empty);
    }
    let missing = grid.missing();
    if !missing.is_empty() {
        return Err(MetricsError::Incomplete(missing));
    }
    let per_task: Vec<TaskMetrics> = (0..n)
        .map(|t| {
            let transfer = (t > 0).then(|| (0..t).map(|i| grid.at(i, t)).sum::<f64>() / t as f64);
            TaskMetrics {
                transfer,
                average: (0..n).map(|i| grid.at(i, t)).sum::<f64>() / n as f64,
                last: grid.at(n - 1, t),
            }
        })
        .collect();
    let transfer = (n > 1).then(|| {
        per_task.iter().filter_map(|m| m.transfer).sum::<f64>() / (n - 1) as f64
    });
    Ok(MetricReport {
        transfer,
        average: per_task.iter().map(|m| m.average).sum::<f64>() / n as f64,
        last: per_task.iter().map(|m| m.last).sum::<f64>() / n as f64,
        per_task,
    })
}

/// Mean over `t < n` of `a_t^{(t)} − a_t^{(n)}`: how much each task lost by
/// the end of the sequence. Absent for a single task.
pub fn backward_forgetting(grid: &AccuracyGrid) -> Option<f64> {
    let n = grid.n_tasks();
    if n < 2 {
        return None;
    }
    let total: f64 = (0..n - 1)
        .map(|t| grid.at(t, t) - grid.at(n - 1, t))
        .sum();
    Some(total / (n - 1) as f64)
}

/// Mean per-sample L2 norm of adapter outputs, `[stage i][task j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct InterferenceGrid {
    /// Normalized by the grid maximum (all zeros stay zeros).
    pub norms: DenseMatrix,
    /// Maximum raw norm used as the normalizer.
    pub scale: f64,
    /// Per stage: mean over every evaluated task.
    pub column_means: Vec<f64>,
}

impl InterferenceGrid {
    /// Mean over cells with `i != j`, normalized units.
    pub fn mean_off_diagonal(&self) -> f64 {
        let n = self.norms.rows();
        if n < 2 {
            return 0.0;
        }
        let mut sum = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    sum += self.norms.get(i, j);
                }
            }
        }
        sum / (n * (n - 1)) as f64
    }

    pub fn raw(&self) -> DenseMatrix {
        self.norms.scale(self.scale)
    }
}

/// Cell `(i, j)`: mean over task `j`'s test samples of the adapter's net
/// output `‖(α/r)·x·(A_i·B_i − A_i⁰·B_i⁰)‖₂`, where `x` is the adapted layer's
/// input under the stage-`i` merged model and `A_i⁰, B_i⁰` are the factors at
/// initialization (absent initial factors count as zero), averaged over
/// adapted layers. Layers left without an adapter at a stage contribute zero.
pub fn interference_heatmap(
    snapshots: &[StageSnapshot],
    stream: &TaskStream,
) -> Result<InterferenceGrid, MetricsError> {
    let n = stream.len();
    if snapshots.len() != n {
        return Err(MetricsError::MissingCheckpoint {
            expected: n,
            got: snapshots.len(),
        });
    }
    let mut raw = DenseMatrix::zeros(n, n);
    for (i, snap) in snapshots.iter().enumerate() {
        let layers: Vec<usize> = snap.model.adapted_layers().collect();
        for (j, task) in stream.tasks.iter().enumerate() {
            let mut total = 0.0;
            for &l in &layers {
                let Some(ad) = snap.adapters.get(&l) else {
                    continue;
                };
                let x = snap.model.layer_inputs(task.test.inputs(), l)?;
                let mut out = x.matmul(&ad.a).matmul(&ad.b);
                if let Some(init) = snap.initial_adapters.get(&l) {
                    out = out.sub(&x.matmul(&init.a).matmul(&init.b));
                }
                let out = out.scale(ad.scale());
                let mean = (0..out.rows())
                    .map(|r| out.row(r).iter().map(|v| v * v).sum::<f64>().sqrt())
                    .sum::<f64>()
                    / out.rows() as f64;
                total += mean;
            }
            if !layers.is_empty() {
                raw.set(i, j, total / layers.len() as f64);
            }
        }
    }
    let scale = raw.max_abs();
    let norms = if scale > 0.0 { raw.scale(1.0 / scale) } else { raw };
    let column_means = (0..n)
        .map(|i| norms.row(i).iter().sum::<f64>() / n as f64)
        .collect();
    Ok(InterferenceGrid {
        norms,
        scale,
        column_means,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpectraRow {
    pub k: usize,
    pub task: String,
    pub accuracy: f64,
}

impl fmt::Display for SpectraRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "k={} {}: {:.4}", self.k, self.task, self.accuracy)
    }
}

fn check_ks(ks: &[usize], max: usize) -> Result<(), MetricsError> {
    match ks.iter().find(|&&k| k == 0 || k > max) {
        Some(&k) => Err(MetricsError::Rank { k, max }),
        None => Ok(()),
    }
}

/// Test accuracy of the linear classifier `logits = x·W_k` for each `k`,
/// where `W_k` keeps the top-`k` singular triplets of `w`.
pub fn spectra_analysis(w: &DenseMatrix, tasks: &[Task], ks: &[usize]) -> Result<Vec<SpectraRow>, MetricsError> {
    let dec = svd(w)?;
    check_ks(ks, dec.s.len())?;
    let mut rows = Vec::new();
    for &k in ks {
        let wk = dec.truncated(k);
        for t in tasks {
            let logits = t.test.inputs().matmul(&wk);
            rows.push(SpectraRow {
                k,
                task: t.name.clone(),
                accuracy: accuracy_from_logits(&logits, t.test.labels(), t.classes),
            });
        }
    }
    Ok(rows)
}

/// Same as [`spectra_analysis`] but substitutes the truncated weight into
/// one layer of a full model.
pub fn spectra_analysis_model(
    model: &LinearModel,
    layer: usize,
    tasks: &[Task],
    ks: &[usize],
) -> Result<Vec<SpectraRow>, MetricsError> {
    let w = model.effective_weight(layer).into_owned();
    let dec = svd(&w)?;
    check_ks(ks, dec.s.len())?;
    let mut rows = Vec::new();
    for &k in ks {
        let mut m = model.clone();
        m.set_weight(layer, dec.truncated(k))?;
        for t in tasks {
            rows.push(SpectraRow {
                k,
                task: t.name.clone(),
                accuracy: m.accuracy(&t.test)?,
            });
        }
    }
    Ok(rows)
}
