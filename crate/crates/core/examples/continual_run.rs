//! Train keeplora over a seeded five-task Gaussian stream and print the
//! accuracy grid with Transfer/Average/Last.
//!
//! `cargo run --release --example continual_run`

use keeplora::metrics::{backward_forgetting, compute_metrics};
use keeplora::tasks::{gen_gaussian_tasks, GaussianStreamSpec};
use keeplora::trainer::{run_continual, RunConfig, RunOptions};
use keeplora::ModelSpec;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let stream = gen_gaussian_tasks(1, &GaussianStreamSpec::default())?;
    let config = RunConfig {
        epsilon_w: 0.2,
        epsilon_f: 0.7,
        lr: 0.1,
        epochs_per_task: 10,
        seed: 1,
        ..RunConfig::default()
    };
    let out = run_continual(&config, &stream, &ModelSpec::default(), &RunOptions::default())?;

    println!("zero-shot: {:?}", out.initial_eval);
    for i in 0..stream.len() {
        let row: Vec<String> = (0..stream.len()).map(|t| format!("{:.3}", out.grid.at(i, t))).collect();
        let rec = &out.records[i];
        println!(
            "after {}: [{}]  M += {:?}",
            rec.task,
            row.join(", "),
            rec.added_directions
        );
    }
    let m = compute_metrics(&out.grid)?;
    println!(
        "transfer {:.4}  average {:.4}  last {:.4}  backward forgetting {:.4}",
        m.transfer.unwrap_or(f64::NAN),
        m.average,
        m.last,
        backward_forgetting(&out.grid).unwrap_or(0.0)
    );
    Ok(())
}
