//! Cross-task adapter output norms for keeplora and vanilla LoRA under the
//! same seed.
//!
//! `cargo run --release --example interference_heatmap`

use keeplora::metrics::interference_heatmap;
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
    for v in [InitVariant::KeepLora, InitVariant::VanillaLora] {
        let out = run_continual(&base.with_variant(v), &stream, &ModelSpec::default(), &RunOptions::default())?;
        let h = interference_heatmap(&out.snapshots, &stream)?;
        println!("{v}: scale {:.4}, mean off-diagonal {:.4}", h.scale, h.mean_off_diagonal() * h.scale);
        let raw = h.raw();
        for i in 0..raw.rows() {
            let row: Vec<String> = raw.row(i).iter().map(|x| format!("{x:.3}")).collect();
            println!("  stage {}: {}", i + 1, row.join(" "));
        }
    }
    Ok(())
}
