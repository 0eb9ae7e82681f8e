//! Continual learning with low-rank adapters confined to the residual of a
//! unified principal subspace.
//!
//! Each adapted weight `W` keeps the span of its principal left singular
//! vectors (`W_p`) plus the dominant input-feature directions of every task
//! learned so far (`M`). A new task's adapter takes its frozen down-projection
//! `A` from the top singular vectors of the first-step gradient after
//! removing those two subspaces, trains only `B`, and is merged back into `W`.
//! Every weight change therefore lies in directions no earlier task or the
//! principal weight structure depends on.
//!
//! Module map:
//!
//! * [`linalg`]: dense matrix, deterministic SVD, projections.
//! * [`subspace`]: principal subspace and accumulated task directions.
//! * [`adapter`]: initialization variants, base shifting, `B` updates, merge.
//! * [`model`]: small tanh/relu MLP with exact gradients.
//! * [`tasks`]: synthetic and CSV task streams.
//! * [`trainer`]: the sequential training loop and the ablation ladder.
//! * [`metrics`]: Transfer/Average/Last, interference norms, spectral truncation.
//! * [`cli`]: config files, checkpoints, CSV outputs and the command entry points.

pub mod adapter;
pub mod cli;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod seed;
pub mod subspace;
pub mod tasks;
pub mod trainer;

pub use adapter::{AdapterConfig, InitVariant, KeepLoraAdapter, LoraFactors};
pub use linalg::{DenseMatrix, OrthonormalBasis, SvdResult};
pub use metrics::{compute_metrics, AccuracyGrid, InterferenceGrid, MetricReport};
pub use model::{Activation, Batch, LinearModel, ModelSpec};
pub use subspace::{PrincipalSubspace, TaskDirections, UnifiedSubspace};
pub use tasks::{Task, TaskStream};
pub use trainer::{run_ablation_ladder, run_continual, LayerOverride, OptimizerKind, RunConfig, RunOptions, RunOutcome};

/// Renders a float with 17 significant digits (lossless for `f64`).
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}
