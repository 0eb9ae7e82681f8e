use super::matrix::{dot, DenseMatrix};
use super::LinalgError;

/// Tolerance on `‖QᵀQ − I‖_max` accepted by [`OrthonormalBasis::new`].
pub const ORTHONORMAL_TOL: f64 = 1e-10;

/// Default norm below which a candidate direction counts as already spanned.
pub const DEFAULT_DROP_TOL: f64 = 1e-8;

/// A `d × k` matrix with orthonormal columns, `k ≤ d`.
#[derive(Clone, Debug, PartialEq)]
pub struct OrthonormalBasis {
    basis: DenseMatrix,
}

impl OrthonormalBasis {
    pub fn new(basis: DenseMatrix) -> Result<Self, LinalgError> {
        let (d, k) = basis.shape();
        if k > d {
            return Err(LinalgError::TooManyColumns { dim: d, cols: k });
        }
        let err = orthonormality_error(&basis);
        if err > ORTHONORMAL_TOL {
            return Err(LinalgError::NotOrthonormal(err));
        }
        Ok(Self { basis })
    }

    /// Skips the orthonormality check. For columns produced by an SVD or by
    /// [`orthonormalize_against`], which are orthonormal by construction.
    pub(crate) fn from_trusted(basis: DenseMatrix) -> Self {
        debug_assert!(basis.cols() <= basis.rows());
        debug_assert!(orthonormality_error(&basis) <= ORTHONORMAL_TOL);
        Self { basis }
    }

    pub fn empty(ambient_dim: usize) -> Self {
        Self {
            basis: DenseMatrix::zeros(ambient_dim, 0),
        }
    }

    pub fn ambient_dim(&self) -> usize {
        self.basis.rows()
    }

    /// Number of basis columns.
    pub fn k(&self) -> usize {
        self.basis.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.k() == 0
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.basis
    }

    pub fn into_matrix(self) -> DenseMatrix {
        self.basis
    }

    /// `[self, other]`, re-validated.
    pub fn concat(&self, other: &Self) -> Result<Self, LinalgError> {
        if self.ambient_dim() != other.ambient_dim() {
            return Err(LinalgError::Shape {
                op: "concat",
                expected: self.ambient_dim(),
                got: other.ambient_dim(),
            });
        }
        Self::new(self.basis.hcat(&other.basis))
    }
}

/// `‖QᵀQ − I‖_max`
pub fn orthonormality_error(q: &DenseMatrix) -> f64 {
    let gram = q.t_matmul(q);
    gram.max_abs_diff(&DenseMatrix::identity(q.cols()))
}

/// Orthogonal projection `Q·(Qᵀ·x)`.
pub fn project_onto(x: &DenseMatrix, q: &OrthonormalBasis) -> Result<DenseMatrix, LinalgError> {
    if x.rows() != q.ambient_dim() {
        return Err(LinalgError::Shape {
            op: "project_onto",
            expected: q.ambient_dim(),
            got: x.rows(),
        });
    }
    if q.is_empty() {
        return Ok(DenseMatrix::zeros(x.rows(), x.cols()));
    }
    let coeffs = q.matrix().t_matmul(x);
    Ok(q.matrix().matmul(&coeffs))
}

/// New orthonormal directions plus how many candidates did not survive.
#[derive(Clone, Debug, PartialEq)]
pub struct Orthonormalized {
    pub basis: OrthonormalBasis,
    pub dropped: usize,
}

/// Gram–Schmidt of `candidates` against `existing` (and against the columns
/// already accepted), with a second re-orthogonalization pass per column.
///
/// Columns whose remaining norm falls below `drop_tol` are dropped, as are
/// columns that would push the combined count past the ambient dimension.
pub fn orthonormalize_against(
    candidates: &DenseMatrix,
    existing: &OrthonormalBasis,
    drop_tol: f64,
) -> Result<Orthonormalized, LinalgError> {
    let d = existing.ambient_dim();
    if candidates.rows() != d {
        return Err(LinalgError::Shape {
            op: "orthonormalize_against",
            expected: d,
            got: candidates.rows(),
        });
    }
    let fixed = existing.matrix().columns_vec();
    let mut accepted: Vec<Vec<f64>> = Vec::new();
    let mut dropped = 0;
    for j in 0..candidates.cols() {
        if fixed.len() + accepted.len() >= d {
            dropped += candidates.cols() - j;
            break;
        }
        let mut v = candidates.column(j);
        for _ in 0..2 {
            for q in fixed.iter().chain(accepted.iter()) {
                let c = dot(&v, q);
                for (x, y) in v.iter_mut().zip(q) {
                    *x -= c * y;
                }
            }
        }
        let norm = dot(&v, &v).sqrt();
        if norm < drop_tol || norm == 0.0 {
            dropped += 1;
            continue;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        accepted.push(v);
    }
    Ok(Orthonormalized {
        basis: OrthonormalBasis::from_trusted(DenseMatrix::from_columns(d, &accepted)),
        dropped,
    })
}
