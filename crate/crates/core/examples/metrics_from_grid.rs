//! Transfer/Average/Last for a hand-written accuracy grid.
//!
//! `cargo run --example metrics_from_grid`

use keeplora::metrics::{backward_forgetting, compute_metrics};
use keeplora::AccuracyGrid;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // rows: after stage i; columns: task t
    let grid = AccuracyGrid::from_rows(&[
        vec![0.92, 0.31, 0.27],
        vec![0.88, 0.95, 0.30],
        vec![0.85, 0.90, 0.97],
    ]);
    let r = compute_metrics(&grid)?;
    for (t, m) in r.per_task.iter().enumerate() {
        let transfer = m.transfer.map_or("-".to_string(), |v| format!("{v:.3}"));
        println!("task {}: transfer {transfer:>5}  average {:.3}  last {:.3}", t + 1, m.average, m.last);
    }
    println!(
        "mean: transfer {:.3}  average {:.3}  last {:.3}  forgetting {:.3}",
        r.transfer.unwrap_or(f64::NAN),
        r.average,
        r.last,
        backward_forgetting(&grid).unwrap_or(0.0)
    );
    Ok(())
}
