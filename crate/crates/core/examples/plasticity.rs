//! Isolated versus in-sequence accuracy for every task.
//!
//! `cargo run --release --example plasticity`

use keeplora::tasks::{gen_gaussian_tasks, GaussianStreamSpec};
use keeplora::trainer::{run_continual, RunConfig, RunOptions};
use keeplora::{InitVariant, ModelSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let stream = gen_gaussian_tasks(1, &GaussianStreamSpec::default())?;
    let base = RunConfig {
        epsilon_w: 0.2,
        epsilon_f: 0.7,
        lr: 0.1,
        epochs_per_task: 10,
        seed: 1,
        ..RunConfig::default()
    };
    let spec = ModelSpec::default();
    let opts = RunOptions::default();
    for v in [InitVariant::KeepLora, InitVariant::VanillaLora] {
        let cfg = base.with_variant(v);
        let seq = run_continual(&cfg, &stream, &spec, &opts)?;
        let mut drops = Vec::new();
        for (t, task) in stream.tasks.iter().enumerate() {
            let iso = run_continual(&cfg, &stream.isolated(t), &spec, &opts)?;
            let (a, b) = (iso.grid.at(0, 0), seq.grid.at(t, t));
            println!("{v:>12} {}: isolated {a:.3} sequential {b:.3}", task.name);
            drops.push(a - b);
        }
        println!("{v:>12} mean drop {:.4}", drops.iter().sum::<f64>() / drops.len() as f64);
    }
    Ok(())
}
