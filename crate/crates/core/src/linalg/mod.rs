//! Dense linear algebra used by every other module: an owned row-major
//! matrix, a deterministic SVD, energy-threshold rank selection, and
//! orthonormal-basis projection utilities.
//!
//! Everything here is a pure function of its inputs.

mod basis;
mod matrix;
mod svd;

pub use basis::{
    orthonormality_error, orthonormalize_against, project_onto, OrthonormalBasis, Orthonormalized,
    DEFAULT_DROP_TOL, ORTHONORMAL_TOL,
};
pub use matrix::DenseMatrix;
pub use svd::{energy_rank, svd, SvdResult};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("data length {len} does not match shape {rows}x{cols}")]
    DataLength { rows: usize, cols: usize, len: usize },
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("{op}: expected {expected} rows, got {got}")]
    Shape {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("empty matrix")]
    Empty,
    #[error("SVD did not converge for a {rows}x{cols} matrix")]
    NoConvergence { rows: usize, cols: usize },
    #[error("all singular values are zero; no energy to threshold")]
    NoEnergy,
    #[error("energy threshold {0} is outside (0, 1)")]
    Threshold(f64),
    #[error("basis columns are not orthonormal (max deviation {0:.3e})")]
    NotOrthonormal(f64),
    #[error("{cols} columns cannot be orthonormal in dimension {dim}")]
    TooManyColumns { dim: usize, cols: usize },
}
