//! Task streams: seeded synthetic Gaussian tasks, the planted-spectrum
//! construction for truncation experiments, and CSV ingestion.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::linalg::{orthonormalize_against, DenseMatrix, OrthonormalBasis};
use crate::model::{Batch, ModelError};
use crate::seed::{gaussian_matrix, mix_index, rng_for, Rng};

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("invalid stream parameters: {0}")]
    Params(String),
    #[error("{path}:{line}: {msg}")]
    Csv { path: PathBuf, line: usize, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Task {
    pub name: String,
    pub train: Batch,
    pub test: Batch,
    pub classes: usize,
}

/// Ordered tasks; order is significant.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskStream {
    pub tasks: Vec<Task>,
    pub master_seed: u64,
}

impl TaskStream {
    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn d_in(&self) -> usize {
        self.tasks.first().map_or(0, |t| t.train.inputs().cols())
    }

    pub fn max_classes(&self) -> usize {
        self.tasks.iter().map(|t| t.classes).max().unwrap_or(0)
    }

    /// Single-task stream holding a copy of task `idx`.
    pub fn isolated(&self, idx: usize) -> TaskStream {
        TaskStream {
            tasks: vec![self.tasks[idx].clone()],
            master_seed: self.master_seed,
        }
    }

    /// SHA-256 over names, class counts, input bits and labels, hex encoded.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tasks {
            h.update(t.name.as_bytes());
            h.update((t.classes as u64).to_le_bytes());
            for b in [&t.train, &t.test] {
                h.update((b.inputs().rows() as u64).to_le_bytes());
                h.update((b.inputs().cols() as u64).to_le_bytes());
                for v in b.inputs().data() {
                    h.update(v.to_bits().to_le_bytes());
                }
                for &l in b.labels() {
                    h.update((l as u64).to_le_bytes());
                }
            }
        }
        h.finalize().iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}

/// Test rows per class: `⌈0.2·n⌉`, but at least one row stays in training.
pub fn test_count(n: usize) -> usize {
    if n < 2 {
        return 0;
    }
    n.div_ceil(5).min(n - 1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianStreamSpec {
    pub n_tasks: usize,
    pub d_in: usize,
    pub classes_per_task: usize,
    pub samples_per_class: usize,
    /// Fraction of each task's subspace shared by all tasks.
    pub subspace_overlap: f64,
    #[serde(default = "default_noise")]
    pub noise: f64,
    /// Norm of every class mean.
    #[serde(default = "default_mean_scale")]
    pub mean_scale: f64,
}

fn default_noise() -> f64 {
    0.3
}

fn default_mean_scale() -> f64 {
    2.0
}

impl Default for GaussianStreamSpec {
    fn default() -> Self {
        Self {
            n_tasks: 5,
            d_in: 32,
            classes_per_task: 4,
            samples_per_class: 60,
            subspace_overlap: 0.25,
            noise: default_noise(),
            mean_scale: default_mean_scale(),
        }
    }
}

impl GaussianStreamSpec {
    fn shared_dims(&self) -> usize {
        (self.subspace_overlap * self.classes_per_task as f64).round() as usize
    }

    fn validate(&self) -> Result<(), TaskError> {
        let p = |m: &str| Err(TaskError::Params(m.to_string()));
        if self.n_tasks == 0 || self.d_in == 0 || self.samples_per_class == 0 {
            return p("n_tasks, d_in and samples_per_class must be positive");
        }
        if self.classes_per_task < 2 {
            return p("classes_per_task must be at least 2");
        }
        if !(0.0..=1.0).contains(&self.subspace_overlap) {
            return p("subspace_overlap must lie in [0, 1]");
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return p("noise must be non-negative");
        }
        let shared = self.shared_dims();
        let needed = shared + self.n_tasks * (self.classes_per_task - shared);
        if needed > self.d_in {
            return Err(TaskError::Params(format!(
                "d_in={} cannot host {} task subspaces of dimension {} with {} shared dims (needs {})",
                self.d_in, self.n_tasks, self.classes_per_task, shared, needed
            )));
        }
        Ok(())
    }
}

/// Orthonormal `d_in × classes_per_task` basis per task: a shared block of
/// `round(overlap·k)` columns plus a private block, private blocks mutually
/// orthogonal.
pub fn task_subspaces(seed: u64, spec: &GaussianStreamSpec) -> Result<Vec<DenseMatrix>, TaskError> {
    spec.validate()?;
    let k = spec.classes_per_task;
    let shared = spec.shared_dims();
    let private = k - shared;
    let q = random_orthonormal(&mut rng_for(seed, "stream/basis"), spec.d_in, spec.d_in);
    Ok((0..spec.n_tasks)
        .map(|t| {
            let start = shared + t * private;
            q.column_range(0, shared)
                .hcat(&q.column_range(start, start + private))
        })
        .collect())
}

/// Random `d × k` orthonormal frame (Gram–Schmidt of a Gaussian matrix).
pub fn random_orthonormal(rng: &mut Rng, d: usize, k: usize) -> DenseMatrix {
    loop {
        let g = gaussian_matrix(rng, d, k, 1.0);
        let q = orthonormalize_against(&g, &OrthonormalBasis::empty(d), 1e-8)
            .expect("shapes agree");
        if q.basis.k() == k {
            return q.basis.into_matrix();
        }
    }
}

/// Draws one task inside `basis`; returns it with its class means (`classes × d_in`).
pub fn sample_task(
    name: &str,
    basis: &DenseMatrix,
    task_seed: u64,
    spec: &GaussianStreamSpec,
) -> Result<(Task, DenseMatrix), TaskError> {
    let mut rng = rng_for(task_seed, "task/sample");
    let classes = spec.classes_per_task;
    let coords = gaussian_matrix(&mut rng, classes, basis.cols(), 1.0);
    let mut means = coords.matmul_t(basis);
    for c in 0..classes {
        let norm = means.row(c).iter().map(|v| v * v).sum::<f64>().sqrt();
        means.row_mut(c).iter_mut().for_each(|v| *v *= spec.mean_scale / norm);
    }
    let task = sample_from_means(name, &means, spec.samples_per_class, spec.noise, &mut rng)?;
    Ok((task, means))
}

fn sample_from_means(
    name: &str,
    means: &DenseMatrix,
    samples_per_class: usize,
    noise: f64,
    rng: &mut Rng,
) -> Result<Task, TaskError> {
    let (classes, d) = means.shape();
    let n_test = test_count(samples_per_class);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for c in 0..classes {
        let eps = gaussian_matrix(rng, samples_per_class, d, noise);
        for i in 0..samples_per_class {
            let row: Vec<f64> = eps.row(i).iter().zip(means.row(c)).map(|(e, m)| e + m).collect();
            if i < n_test {
                test.push((row, c));
            } else {
                train.push((row, c));
            }
        }
    }
    train.shuffle(rng);
    test.shuffle(rng);
    Ok(Task {
        name: name.to_string(),
        train: to_batch(train, d, classes)?,
        test: to_batch(test, d, classes)?,
        classes,
    })
}

fn to_batch(rows: Vec<(Vec<f64>, usize)>, d: usize, classes: usize) -> Result<Batch, ModelError> {
    let n = rows.len();
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for (r, l) in rows {
        data.extend(r);
        labels.push(l);
    }
    Batch::new(DenseMatrix::new(n, d, data)?, labels, classes)
}

/// Seeded stream of Gaussian-mixture classification tasks.
pub fn gen_gaussian_tasks(seed: u64, spec: &GaussianStreamSpec) -> Result<TaskStream, TaskError> {
    let bases = task_subspaces(seed, spec)?;
    let tasks = bases
        .iter()
        .enumerate()
        .map(|(t, basis)| {
            let task_seed = mix_index(seed, t as u64);
            sample_task(&format!("task_{}", t + 1), basis, task_seed, spec).map(|(task, _)| task)
        })
        .collect::<Result<_, _>>()?;
    Ok(TaskStream {
        tasks,
        master_seed: seed,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantedSpectrumSpec {
    pub d: usize,
    pub general_energy_rank: usize,
    pub specific_direction_count: usize,
    #[serde(default = "default_general_sigma")]
    pub general_sigma: f64,
    #[serde(default = "default_specific_sigma")]
    pub specific_sigma: f64,
    #[serde(default = "default_planted_mean")]
    pub mean_scale: f64,
    #[serde(default = "default_planted_noise")]
    pub noise: f64,
    #[serde(default = "default_planted_samples")]
    pub samples_per_class: usize,
}

fn default_general_sigma() -> f64 {
    4.0
}
fn default_specific_sigma() -> f64 {
    1.0
}
fn default_planted_mean() -> f64 {
    3.0
}
fn default_planted_noise() -> f64 {
    0.1
}
fn default_planted_samples() -> usize {
    50
}

impl PlantedSpectrumSpec {
    pub fn new(d: usize, general_energy_rank: usize, specific_direction_count: usize) -> Self {
        Self {
            d,
            general_energy_rank,
            specific_direction_count,
            general_sigma: default_general_sigma(),
            specific_sigma: default_specific_sigma(),
            mean_scale: default_planted_mean(),
            noise: default_planted_noise(),
            samples_per_class: default_planted_samples(),
        }
    }
}

/// A `d × d` linear classifier whose top singular directions solve the
/// general task and whose small-σ directions solve the specific task.
#[derive(Clone, Debug, PartialEq)]
pub struct PlantedSpectrum {
    pub weight: DenseMatrix,
    pub general: Task,
    pub specific: Task,
}

/// Builds the planted construction.
///
/// Input directions `u_0 … u_{g+s−1}` are a random orthonormal frame. The
/// weight is `Σ_c σ_g u_c v_cᵀ + Σ_j σ_s u_{g+j} w_jᵀ` where the output
/// vectors are orthonormal and chosen so general class `c` peaks at logit
/// `c` and specific class `j` peaks at logit `j`: for `j < min(g, s)` the
/// pair shares unit `j` and splits on a spare unit `d−1−j`
/// (`v_j = (e_j + e_{d−1−j})/√2`, `w_j = (e_j − e_{d−1−j})/√2`).
pub fn gen_planted_spectrum_model(seed: u64, spec: &PlantedSpectrumSpec) -> Result<PlantedSpectrum, TaskError> {
    let (d, g, s) = (spec.d, spec.general_energy_rank, spec.specific_direction_count);
    if g < 2 || s < 2 {
        return Err(TaskError::Params(
            "general_energy_rank and specific_direction_count must be at least 2".into(),
        ));
    }
    if g + s > d {
        return Err(TaskError::Params(format!(
            "general_energy_rank + specific_direction_count = {} exceeds d = {d}",
            g + s
        )));
    }
    if !(spec.general_sigma > spec.specific_sigma && spec.specific_sigma > 0.0) {
        return Err(TaskError::Params("need general_sigma > specific_sigma > 0".into()));
    }
    let mut rng = rng_for(seed, "planted/frame");
    let u = random_orthonormal(&mut rng, d, g + s);
    let unit = |i: usize| DenseMatrix::from_fn(1, d, |_, j| if j == i { 1.0 } else { 0.0 });
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let paired = g.min(s);

    let mut w = DenseMatrix::zeros(d, d);
    for c in 0..g {
        let v = if c < paired {
            unit(c).scale(h).add(&unit(d - 1 - c).scale(h))
        } else {
            unit(c)
        };
        w = w.add(&u.column_range(c, c + 1).matmul(&v).scale(spec.general_sigma));
    }
    for j in 0..s {
        let v = if j < paired {
            unit(j).scale(h).sub(&unit(d - 1 - j).scale(h))
        } else {
            unit(j)
        };
        w = w.add(&u.column_range(g + j, g + j + 1).matmul(&v).scale(spec.specific_sigma));
    }

    let means = |offset: usize, count: usize| {
        u.column_range(offset, offset + count)
            .transpose()
            .scale(spec.mean_scale)
    };
    let mut rng = rng_for(seed, "planted/samples");
    let general = sample_from_means("general", &means(0, g), spec.samples_per_class, spec.noise, &mut rng)?;
    let specific = sample_from_means("specific", &means(g, s), spec.samples_per_class, spec.noise, &mut rng)?;
    Ok(PlantedSpectrum {
        weight: w,
        general,
        specific,
    })
}

/// Rows of one CSV file: features plus integer label.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvRows {
    pub inputs: DenseMatrix,
    pub labels: Vec<usize>,
    /// 1-based file line of each row, for error reporting.
    pub lines: Vec<usize>,
}

pub fn read_csv_rows(path: &Path) -> Result<CsvRows, TaskError> {
    let text = fs::read_to_string(path).map_err(|source| TaskError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let csv_err = |line: usize, msg: String| TaskError::Csv {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| csv_err(1, "empty file".into()))?;
    let width = header.split(',').count();
    if width < 2 {
        return Err(csv_err(1, "header needs at least one feature and a label column".into()));
    }
    let d = width - 1;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut line_nos = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != width {
            return Err(csv_err(
                line_no,
                format!("expected {width} cells, found {}", cells.len()),
            ));
        }
        for (col, cell) in cells[..d].iter().enumerate() {
            let v: f64 = cell
                .parse()
                .map_err(|_| csv_err(line_no, format!("column {}: `{cell}` is not a number", col + 1)))?;
            if !v.is_finite() {
                return Err(csv_err(line_no, format!("column {}: non-finite value", col + 1)));
            }
            data.push(v);
        }
        let label: usize = cells[d]
            .parse()
            .map_err(|_| csv_err(line_no, format!("label `{}` is not a non-negative integer", cells[d])))?;
        labels.push(label);
        line_nos.push(line_no);
    }
    if labels.is_empty() {
        return Err(csv_err(1, "no data rows".into()));
    }
    Ok(CsvRows {
        inputs: DenseMatrix::new(labels.len(), d, data).expect("row count checked"),
        labels,
        lines: line_nos,
    })
}

/// Writes `inputs`/`labels` with a `f1,…,fd,label` header and floats in
/// 17-significant-digit scientific notation.
pub fn write_csv_rows(path: &Path, inputs: &DenseMatrix, labels: &[usize]) -> Result<(), TaskError> {
    let mut out = String::new();
    for j in 0..inputs.cols() {
        let _ = write!(out, "f{},", j + 1);
    }
    out.push_str("label\n");
    for (i, l) in labels.iter().enumerate() {
        for v in inputs.row(i) {
            out.push_str(&crate::fmt_f64(*v));
            out.push(',');
        }
        let _ = writeln!(out, "{l}");
    }
    fs::write(path, out).map_err(|source| TaskError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// One task per file. Labels must lie in `[0, declared_classes)` when a
/// class count is declared; otherwise the count is `max label + 1`.
/// Each class is split with [`test_count`] test rows, chosen by hashing the
/// row index with `master_seed`.
pub fn load_csv_tasks(
    paths: &[PathBuf],
    master_seed: u64,
    declared_classes: Option<usize>,
) -> Result<TaskStream, TaskError> {
    let mut tasks = Vec::with_capacity(paths.len());
    let mut d_in = None;
    for path in paths {
        let rows = read_csv_rows(path)?;
        if let Some(classes) = declared_classes {
            if let Some(i) = rows.labels.iter().position(|&l| l >= classes) {
                return Err(TaskError::Csv {
                    path: path.clone(),
                    line: rows.lines[i],
                    msg: format!("label {} is outside [0, {classes})", rows.labels[i]),
                });
            }
        }
        let classes = declared_classes.unwrap_or_else(|| rows.labels.iter().max().map_or(0, |m| m + 1));
        match d_in {
            None => d_in = Some(rows.inputs.cols()),
            Some(d) if d != rows.inputs.cols() => {
                return Err(TaskError::Csv {
                    path: path.clone(),
                    line: 1,
                    msg: format!("{} features, earlier files have {d}", rows.inputs.cols()),
                })
            }
            _ => {}
        }

        let mut is_test = vec![false; rows.labels.len()];
        for c in 0..classes {
            let mut members: Vec<usize> = (0..rows.labels.len()).filter(|&i| rows.labels[i] == c).collect();
            members.sort_by_key(|&i| (mix_index(master_seed, i as u64), i));
            for &i in members.iter().take(test_count(members.len())) {
                is_test[i] = true;
            }
        }
        let (test_idx, train_idx): (Vec<usize>, Vec<usize>) =
            (0..rows.labels.len()).partition(|&i| is_test[i]);
        if train_idx.is_empty() || test_idx.is_empty() {
            return Err(TaskError::Csv {
                path: path.clone(),
                line: 1,
                msg: "too few rows to form both a train and a test split".into(),
            });
        }
        let all = Batch::new(rows.inputs, rows.labels, classes)?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| format!("task_{}", tasks.len() + 1));
        tasks.push(Task {
            name,
            train: all.select(&train_idx),
            test: all.select(&test_idx),
            classes,
        });
    }
    if tasks.is_empty() {
        return Err(TaskError::Params("no CSV files given".into()));
    }
    Ok(TaskStream { tasks, master_seed })
}
