//! Save every stage of a run as a checkpoint, load it back, and confirm the
//! bytes and the rebuilt model agree.
//!
//! `cargo run --example checkpoint_roundtrip`

use keeplora::cli::checkpoint::{snapshot_from_checkpoint, stage_checkpoint, Checkpoint};
use keeplora::tasks::{gen_gaussian_tasks, GaussianStreamSpec};
use keeplora::trainer::{run_continual, RunConfig, RunOptions};
use keeplora::ModelSpec;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = GaussianStreamSpec {
        n_tasks: 3,
        ..GaussianStreamSpec::default()
    };
    let stream = gen_gaussian_tasks(4, &spec)?;
    let config = RunConfig {
        lr: 0.1,
        epochs_per_task: 3,
        ..RunConfig::default()
    };
    let out = run_continual(&config, &stream, &ModelSpec::default(), &RunOptions::default())?;
    let dir = std::env::temp_dir().join("keeplora-checkpoint-demo");
    for (i, snap) in out.snapshots.iter().enumerate() {
        let path = dir.join(format!("stage_{}.klra", i + 1));
        let ck = stage_checkpoint(snap, &config);
        ck.save(&path)?;
        let loaded = Checkpoint::load(&path)?;
        let rebuilt = snapshot_from_checkpoint(&loaded)?;
        println!(
            "{}: {} entries, {} bytes, identical: {}",
            path.display(),
            loaded.entries().len(),
            loaded.to_bytes().len(),
            loaded == ck && rebuilt == *snap
        );
    }
    Ok(())
}
