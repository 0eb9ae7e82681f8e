//! All six adapter initializations on the same stream and seed, with deltas
//! against vanilla LoRA.
//!
//! `cargo run --release --example ablation_ladder`

use keeplora::tasks::{gen_gaussian_tasks, GaussianStreamSpec};
use keeplora::trainer::{run_ablation_ladder, RunConfig, RunOptions};
use keeplora::ModelSpec;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let stream = gen_gaussian_tasks(2, &GaussianStreamSpec::default())?;
    let config = RunConfig {
        epsilon_w: 0.2,
        epsilon_f: 0.7,
        lr: 0.1,
        epochs_per_task: 10,
        seed: 2,
        ..RunConfig::default()
    };
    let ladder = run_ablation_ladder(&config, &stream, &ModelSpec::default(), &RunOptions::default())?;
    println!("{:<16} {:>8} {:>8} {:>8} {:>8} {:>8}", "variant", "average", "last", "Δavg", "Δlast", "forget");
    for r in ladder.rows()? {
        println!(
            "{:<16} {:>8.4} {:>8.4} {:>+8.4} {:>+8.4} {:>8.4}",
            r.variant.as_str(),
            r.average,
            r.last,
            r.delta_average,
            r.delta_last,
            r.backward_forgetting.unwrap_or(0.0)
        );
    }
    Ok(())
}
