//! Export a synthetic stream to one CSV per task, load it back as a
//! CSV-backed stream, and train on it.
//!
//! `cargo run --release --example csv_stream`

use keeplora::metrics::compute_metrics;
use keeplora::tasks::{gen_gaussian_tasks, load_csv_tasks, write_csv_rows, GaussianStreamSpec};
use keeplora::trainer::{run_continual, RunConfig, RunOptions};
use keeplora::ModelSpec;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = GaussianStreamSpec {
        n_tasks: 3,
        ..GaussianStreamSpec::default()
    };
    let synthetic = gen_gaussian_tasks(9, &spec)?;
    let dir = std::env::temp_dir().join("keeplora-csv-demo");
    std::fs::create_dir_all(&dir)?;
    let mut files = Vec::new();
    for t in &synthetic.tasks {
        let path = dir.join(format!("{}.csv", t.name));
        write_csv_rows(&path, t.train.inputs(), t.train.labels())?;
        files.push(path);
    }
    let stream = load_csv_tasks(&files, 9, Some(spec.classes_per_task))?;
    for t in &stream.tasks {
        println!("{}: {} train / {} test rows", t.name, t.train.len(), t.test.len());
    }
    let config = RunConfig {
        epsilon_w: 0.2,
        epsilon_f: 0.7,
        lr: 0.1,
        epochs_per_task: 10,
        ..RunConfig::default()
    };
    let out = run_continual(&config, &stream, &ModelSpec::default(), &RunOptions::default())?;
    let m = compute_metrics(&out.grid)?;
    println!("average {:.4}  last {:.4}", m.average, m.last);
    Ok(())
}
