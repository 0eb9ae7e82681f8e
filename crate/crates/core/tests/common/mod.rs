#![allow(dead_code)]

use keeplora::linalg::{orthonormalize_against, DenseMatrix, OrthonormalBasis};
use keeplora::seed::{gaussian_matrix, Rng};
use keeplora::UnifiedSubspace;
use nalgebra::DMatrix;

pub fn to_na(m: &DenseMatrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.data())
}

/// Singular values via the eigenvalues of the Gram matrix, descending.
pub fn singular_values(m: &DenseMatrix) -> Vec<f64> {
    let a = to_na(m);
    let gram = if m.rows() >= m.cols() { a.transpose() * &a } else { &a * a.transpose() };
    let mut ev: Vec<f64> = gram.symmetric_eigen().eigenvalues.iter().map(|&l| l.max(0.0).sqrt()).collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    ev
}

/// `I − Q Qᵀ` applied to `x`, computed densely.
pub fn residual_dense(x: &DenseMatrix, q: &DenseMatrix) -> DenseMatrix {
    let d = x.rows();
    let mut p = DenseMatrix::identity(d);
    if q.cols() > 0 {
        p = p.sub(&q.matmul_t(q));
    }
    p.matmul(x)
}

/// Unified subspace from `w` with `extra` random task directions appended.
pub fn subspace_with_dirs(w: &DenseMatrix, eps_w: f64, extra: usize, rng: &mut Rng) -> UnifiedSubspace {
    let mut u = UnifiedSubspace::from_weight(w, eps_w).unwrap();
    let d = w.rows();
    let room = d - u.total_columns();
    let want = extra.min(room);
    if want > 0 {
        let cand = gaussian_matrix(rng, d, want, 1.0);
        let dirs = orthonormalize_against(&cand, &u.unified_basis(), 1e-8).unwrap().basis;
        u.append_task_directions(dirs.matrix()).unwrap();
    }
    u
}

/// Random orthonormal `d × r` frame orthogonal to `avoid`.
pub fn feasible_frame(rng: &mut Rng, avoid: &OrthonormalBasis, r: usize) -> Option<DenseMatrix> {
    let d = avoid.ambient_dim();
    let cand = gaussian_matrix(rng, d, r, 1.0);
    let q = orthonormalize_against(&cand, avoid, 1e-8).unwrap().basis;
    (q.k() == r).then(|| q.into_matrix())
}

/// Worst relative error between analytic and central-difference gradients
/// over up to `per_layer` sampled weight entries and every bias of each layer.
pub fn gradcheck(model: &keeplora::LinearModel, batch: &keeplora::Batch, per_layer: usize, h: f64, rng: &mut Rng) -> f64 {
    use rand::Rng as _;
    let full = model.full_gradients(batch).unwrap();
    let mut worst: f64 = 0.0;
    for l in 0..model.num_layers() {
        let w = model.layers()[l].weight.clone();
        let (r, c) = w.shape();
        let total = r * c;
        let picks: Vec<usize> = if total <= per_layer {
            (0..total).collect()
        } else {
            (0..per_layer).map(|_| rng.random_range(0..total)).collect()
        };
        let mut num = Vec::new();
        let mut ana = Vec::new();
        for idx in picks {
            let (i, j) = (idx / c, idx % c);
            let at = |v: f64| {
                let mut m = model.clone();
                let mut w2 = w.clone();
                w2.set(i, j, v);
                m.set_weight(l, w2).unwrap();
                m.loss(batch).unwrap()
            };
            let x = w.get(i, j);
            num.push((at(x + h) - at(x - h)) / (2.0 * h));
            ana.push(full.weights[l].get(i, j));
        }
        let bias = model.layers()[l].bias.clone();
        for k in 0..bias.len() {
            let at = |v: f64| {
                let mut m = model.clone();
                let mut b2 = bias.clone();
                b2[k] = v;
                m.set_bias(l, b2).unwrap();
                m.loss(batch).unwrap()
            };
            num.push((at(bias[k] + h) - at(bias[k] - h)) / (2.0 * h));
            ana.push(full.biases[l][k]);
        }
        let diff: f64 = num.iter().zip(&ana).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale: f64 = ana.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
        worst = worst.max(diff / scale);
    }
    worst
}

/// Random batch for a model with `d_in` inputs and `classes` labels.
pub fn random_batch(rng: &mut Rng, n: usize, d_in: usize, classes: usize) -> keeplora::Batch {
    use rand::Rng as _;
    let x = gaussian_matrix(rng, n, d_in, 1.0);
    let y = (0..n).map(|_| rng.random_range(0..classes)).collect();
    keeplora::Batch::new(x, y, classes).unwrap()
}

pub fn config_path(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

pub fn fixture_path(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden").join(name)
}

/// The golden experiment config and its stream.
pub fn golden() -> (keeplora::cli::config::ExperimentConfig, keeplora::TaskStream) {
    let cfg = keeplora::cli::config::ExperimentConfig::load(&config_path("golden.toml")).unwrap();
    let stream = cfg.build_stream().unwrap();
    (cfg, stream)
}

/// Per-stage accuracies (%) of the published eleven-task image run, with the
/// published Transfer, Average and Last rows and aggregates.
pub struct PublishedRun {
    pub names: [&'static str; 11],
    pub grid: Vec<Vec<f64>>,
    pub transfer: [f64; 10],
    pub average: [f64; 11],
    pub aggregates: [f64; 3],
}

pub fn published_run() -> PublishedRun {
    let grid = vec![
        vec![59.0, 84.6, 68.4, 45.4, 52.2, 71.9, 89.0, 63.8, 91.1, 60.6, 63.6],
        vec![58.1, 97.0, 69.1, 45.4, 50.8, 71.1, 88.7, 61.8, 91.1, 60.1, 64.8],
        vec![56.0, 96.8, 87.6, 46.8, 56.3, 68.9, 87.3, 66.3, 90.1, 59.6, 64.7],
        vec![55.9, 96.7, 87.5, 75.0, 57.9, 69.6, 87.1, 64.7, 90.3, 59.5, 64.6],
        vec![55.7, 96.7, 87.0, 74.8, 98.4, 69.3, 87.0, 65.2, 90.2, 59.1, 64.6],
        vec![55.6, 97.0, 86.9, 74.4, 98.4, 93.3, 86.9, 65.0, 90.3, 59.4, 64.3],
        vec![54.7, 96.8, 86.2, 72.6, 98.3, 92.2, 91.8, 66.7, 89.8, 59.0, 63.8],
        vec![54.3, 96.7, 85.8, 72.4, 98.1, 91.8, 91.8, 99.5, 89.7, 59.3, 63.8],
        vec![54.6, 96.7, 85.7, 72.0, 98.2, 91.8, 91.8, 99.5, 94.7, 59.2, 63.8],
        vec![54.2, 96.7, 85.7, 71.9, 98.1, 91.5, 91.7, 99.5, 94.4, 84.3, 63.7],
        vec![53.2, 96.8, 85.7, 71.4, 98.1, 90.8, 91.4, 99.6, 94.5, 83.1, 82.0],
    ];
    PublishedRun {
        names: [
            "Aircraft", "Caltech101", "CIFAR100", "DTD", "EuroSAT", "Flowers", "Food", "MNIST", "OxfordPet", "Cars",
            "SUN397",
        ],
        grid,
        transfer: [84.6, 68.7, 45.9, 54.3, 70.1, 87.7, 64.8, 90.3, 59.5, 64.1],
        average: [55.6, 95.7, 83.2, 65.6, 82.2, 82.0, 89.5, 77.4, 91.5, 63.9, 65.8],
        aggregates: [69.0, 77.5, 86.1],
    }
}

/// Largest gaps between recomputed and published values:
/// `(named examples and aggregates, any published cell, worst cell label)`.
pub fn published_gaps(p: &PublishedRun) -> (f64, f64, String) {
    let r = keeplora::compute_metrics(&keeplora::AccuracyGrid::from_rows(&p.grid)).unwrap();
    let last_row = p.grid.last().unwrap();
    let mut cells: Vec<(String, f64, f64)> = Vec::new();
    for t in 1..11 {
        cells.push((format!("Transfer {}", p.names[t]), r.per_task[t].transfer.unwrap(), p.transfer[t - 1]));
    }
    for (t, &last) in last_row.iter().enumerate() {
        cells.push((format!("Average {}", p.names[t]), r.per_task[t].average, p.average[t]));
        cells.push((format!("Last {}", p.names[t]), r.per_task[t].last, last));
    }
    let named = [
        (r.per_task[1].transfer.unwrap(), 84.6),
        (r.per_task[2].transfer.unwrap(), 68.7),
        (r.per_task[0].average, 55.6),
        (r.per_task[10].last, 82.0),
        (r.transfer.unwrap(), p.aggregates[0]),
        (r.average, p.aggregates[1]),
        (r.last, p.aggregates[2]),
    ];
    let named_gap = named.iter().map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let (label, a, b) = cells
        .iter()
        .max_by(|x, y| (x.1 - x.2).abs().total_cmp(&(y.1 - y.2).abs()))
        .unwrap();
    (named_gap, (a - b).abs(), format!("{label}: {a:.3} vs {b}"))
}
