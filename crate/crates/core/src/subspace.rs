//! The unified principal subspace of one adapted layer: the principal
//! left-singular directions of the layer's original weight, followed by the
//! dominant feature directions accumulated after each learned task.
//!
//! All bases live in the layer's input space (`d_in`). Feature matrices are
//! oriented `d_in × n_samples`, so the stored task directions are *left*
//! singular vectors of the residual features.

use thiserror::Error;

use crate::linalg::{
    energy_rank, orthonormalize_against, project_onto, svd, DenseMatrix, LinalgError,
    OrthonormalBasis, DEFAULT_DROP_TOL,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SubspaceError {
    #[error("weight matrix is zero; it has no principal subspace")]
    ZeroWeight,
    #[error("feature matrix has no samples")]
    NoSamples,
    #[error("threshold {name}={value} is outside (0, 1)")]
    Threshold { name: &'static str, value: f64 },
    #[error("new directions overlap the stored subspace (max |cos| {0:.3e})")]
    NotOrthogonal(f64),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Leading left singular vectors of a weight matrix holding at least
/// `epsilon_w` of its squared-singular-value energy.
#[derive(Clone, Debug, PartialEq)]
pub struct PrincipalSubspace {
    pub basis: OrthonormalBasis,
    pub retained_energy_fraction: f64,
}

impl PrincipalSubspace {
    pub fn p(&self) -> usize {
        self.basis.k()
    }

    /// Subspace with no principal directions. Used by the variants that never
    /// consult a principal subspace.
    pub fn none(ambient_dim: usize) -> Self {
        Self {
            basis: OrthonormalBasis::empty(ambient_dim),
            retained_energy_fraction: 0.0,
        }
    }
}

pub fn extract_principal(w: &DenseMatrix, epsilon_w: f64) -> Result<PrincipalSubspace, SubspaceError> {
    check_threshold("epsilon_w", epsilon_w)?;
    let dec = svd(w)?;
    let p = match energy_rank(&dec.s, epsilon_w) {
        Ok(p) => p,
        Err(LinalgError::NoEnergy) => return Err(SubspaceError::ZeroWeight),
        Err(e) => return Err(e.into()),
    };
    let total: f64 = dec.s.iter().map(|s| s * s).sum();
    let kept: f64 = dec.s[..p].iter().map(|s| s * s).sum();
    Ok(PrincipalSubspace {
        basis: OrthonormalBasis::from_trusted(dec.u.column_range(0, p)),
        retained_energy_fraction: kept / total,
    })
}

/// Accumulated per-task feature directions `M_t`.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskDirections {
    pub basis: OrthonormalBasis,
    /// Directions contributed by each task, in task order.
    pub per_task_counts: Vec<usize>,
}

/// Candidate directions for one task, as produced by
/// [`UnifiedSubspace::extract_task_directions`].
#[derive(Clone, Debug, PartialEq)]
pub struct TaskDirectionsUpdate {
    /// `d_in × m'` orthonormal columns, orthogonal to the unified basis.
    pub directions: DenseMatrix,
    /// Count selected by the energy criterion before re-orthonormalization.
    pub selected: usize,
    /// Selected directions lost to re-orthonormalization or the `d_in` cap.
    pub dropped: usize,
    /// Energy fraction of the task features covered by principal, previous,
    /// and the selected new directions.
    pub retained_energy_fraction: f64,
}

impl TaskDirectionsUpdate {
    pub fn count(&self) -> usize {
        self.directions.cols()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AppendReport {
    pub added: usize,
    pub dropped: usize,
}

/// `M′ = [W_p, M]` for one adapted layer.
#[derive(Clone, Debug, PartialEq)]
pub struct UnifiedSubspace {
    pub principal: PrincipalSubspace,
    pub task_dirs: TaskDirections,
}

impl UnifiedSubspace {
    pub fn new(principal: PrincipalSubspace) -> Self {
        let d = principal.basis.ambient_dim();
        Self {
            principal,
            task_dirs: TaskDirections {
                basis: OrthonormalBasis::empty(d),
                per_task_counts: Vec::new(),
            },
        }
    }

    pub fn from_weight(w: &DenseMatrix, epsilon_w: f64) -> Result<Self, SubspaceError> {
        Ok(Self::new(extract_principal(w, epsilon_w)?))
    }

    pub fn ambient_dim(&self) -> usize {
        self.principal.basis.ambient_dim()
    }

    pub fn total_columns(&self) -> usize {
        self.principal.p() + self.task_dirs.basis.k()
    }

    /// `[W_p, M]` as one basis.
    pub fn unified_basis(&self) -> OrthonormalBasis {
        OrthonormalBasis::from_trusted(
            self.principal
                .basis
                .matrix()
                .hcat(self.task_dirs.basis.matrix()),
        )
    }

    /// `x − W_p W_pᵀ x − M Mᵀ x`
    pub fn residual_project(&self, x: &DenseMatrix) -> Result<DenseMatrix, SubspaceError> {
        let wp = project_onto(x, &self.principal.basis)?;
        let m = project_onto(x, &self.task_dirs.basis)?;
        Ok(x.sub(&wp).sub(&m))
    }

    /// Selects the fewest residual feature directions `m` such that principal,
    /// previous, and the top-`m` new directions together hold `epsilon_f` of
    /// the feature energy `‖x_t‖_F²`.
    pub fn extract_task_directions(
        &self,
        x_t: &DenseMatrix,
        epsilon_f: f64,
    ) -> Result<TaskDirectionsUpdate, SubspaceError> {
        check_threshold("epsilon_f", epsilon_f)?;
        if x_t.cols() == 0 {
            return Err(SubspaceError::NoSamples);
        }
        let d = self.ambient_dim();
        if x_t.rows() != d {
            return Err(LinalgError::Shape {
                op: "extract_task_directions",
                expected: d,
                got: x_t.rows(),
            }
            .into());
        }
        let total = x_t.frobenius_norm_sq();
        let wp_part = project_onto(x_t, &self.principal.basis)?;
        let m_part = project_onto(x_t, &self.task_dirs.basis)?;
        let residual = x_t.sub(&wp_part).sub(&m_part);
        let covered = wp_part.frobenius_norm_sq() + m_part.frobenius_norm_sq();

        let empty = || TaskDirectionsUpdate {
            directions: DenseMatrix::zeros(d, 0),
            selected: 0,
            dropped: 0,
            retained_energy_fraction: if total > 0.0 { covered / total } else { 1.0 },
        };
        let target = epsilon_f * total;
        if covered >= target {
            return Ok(empty());
        }
        let dec = svd(&residual)?;
        let mut m = 0;
        let mut energy = covered;
        for s in &dec.s {
            if energy >= target {
                break;
            }
            energy += s * s;
            m += 1;
        }
        let capacity = d - self.total_columns();
        let take = m.min(capacity);
        let ortho = orthonormalize_against(
            &dec.u.column_range(0, take),
            &self.unified_basis(),
            DEFAULT_DROP_TOL,
        )?;
        Ok(TaskDirectionsUpdate {
            directions: ortho.basis.into_matrix(),
            selected: m,
            dropped: ortho.dropped + (m - take),
            retained_energy_fraction: energy / total,
        })
    }

    /// Appends one task's directions to `M`, recording the per-task count.
    /// Columns past the `d_in` capacity are dropped and reported.
    pub fn append_task_directions(
        &mut self,
        new_dirs: &DenseMatrix,
    ) -> Result<AppendReport, SubspaceError> {
        let unified = self.unified_basis();
        if new_dirs.rows() != unified.ambient_dim() {
            return Err(LinalgError::Shape {
                op: "append_task_directions",
                expected: unified.ambient_dim(),
                got: new_dirs.rows(),
            }
            .into());
        }
        if new_dirs.cols() > 0 && !unified.is_empty() {
            let overlap = unified.matrix().t_matmul(new_dirs).max_abs();
            if overlap > 1e-8 {
                return Err(SubspaceError::NotOrthogonal(overlap));
            }
        }
        let ortho = orthonormalize_against(new_dirs, &unified, DEFAULT_DROP_TOL)?;
        let added = ortho.basis.k();
        let merged = self.task_dirs.basis.matrix().hcat(ortho.basis.matrix());
        self.task_dirs.basis = OrthonormalBasis::from_trusted(merged);
        self.task_dirs.per_task_counts.push(added);
        Ok(AppendReport {
            added,
            dropped: ortho.dropped,
        })
    }
}

fn check_threshold(name: &'static str, value: f64) -> Result<(), SubspaceError> {
    if value > 0.0 && value < 1.0 {
        Ok(())
    } else {
        Err(SubspaceError::Threshold { name, value })
    }
}
