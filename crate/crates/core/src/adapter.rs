//! Low-rank adapter lifecycle for one weight matrix `W` (`d_in × d_out`):
//! gradient-informed initialization in the residual of the unified subspace,
//! base shifting so the initial forward pass is unchanged, frozen-`A`
//! training of `B`, and merging back into a plain weight.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{orthonormalize_against, svd, DenseMatrix, LinalgError, OrthonormalBasis};
use crate::seed::{gaussian_matrix, Rng};
use crate::subspace::{SubspaceError, UnifiedSubspace};

/// Singular values at or below this are treated as zero when choosing `A`.
pub const SIGMA_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdapterError {
    #[error("gradient fully inside principal subspace: projected gradient is numerically zero")]
    GradientFullyProjected,
    #[error("rank must be at least 1")]
    ZeroRank,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Subspace(#[from] SubspaceError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// How the down-projection `A` (and the initial `B`) are chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum InitVariant {
    /// SVD of `G − W_pW_pᵀG − MMᵀG`.
    #[serde(rename = "keeplora")]
    KeepLora,
    /// SVD of the raw gradient `G`.
    #[serde(rename = "grad_only")]
    GradOnly,
    /// SVD of `G − W_pW_pᵀG`.
    #[serde(rename = "grad_minus_Wp")]
    GradMinusWp,
    /// SVD of `G − MMᵀG`.
    #[serde(rename = "grad_minus_M")]
    GradMinusM,
    /// Seeded random orthonormal `A`, `B = 0`, `A` frozen.
    #[serde(rename = "frozen_random_A")]
    FrozenRandomA,
    /// Gaussian `A`, `B = 0`, both trainable.
    #[serde(rename = "vanilla_lora")]
    VanillaLora,
}

impl InitVariant {
    pub const ALL: [InitVariant; 6] = [
        InitVariant::VanillaLora,
        InitVariant::FrozenRandomA,
        InitVariant::GradOnly,
        InitVariant::GradMinusWp,
        InitVariant::GradMinusM,
        InitVariant::KeepLora,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            InitVariant::KeepLora => "keeplora",
            InitVariant::GradOnly => "grad_only",
            InitVariant::GradMinusWp => "grad_minus_Wp",
            InitVariant::GradMinusM => "grad_minus_M",
            InitVariant::FrozenRandomA => "frozen_random_A",
            InitVariant::VanillaLora => "vanilla_lora",
        }
    }

    /// Whether the principal weight subspace enters the initialization.
    pub fn uses_principal(self) -> bool {
        matches!(self, InitVariant::KeepLora | InitVariant::GradMinusWp)
    }

    /// Whether accumulated task directions enter the initialization.
    pub fn uses_task_directions(self) -> bool {
        matches!(self, InitVariant::KeepLora | InitVariant::GradMinusM)
    }

    pub fn trains_a(self) -> bool {
        self == InitVariant::VanillaLora
    }
}

impl fmt::Display for InitVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InitVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        InitVariant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| format!("unknown variant `{s}`"))
    }
}

/// Hyperparameters shared by every adapter of a run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdapterConfig {
    pub rank: usize,
    pub alpha: f64,
    pub variant: InitVariant,
    /// Standard deviation of the Gaussian `A` of [`InitVariant::VanillaLora`].
    pub vanilla_std: f64,
}

/// `A` and `B` before they are attached to a base weight.
#[derive(Clone, Debug, PartialEq)]
pub struct LoraFactors {
    pub a: DenseMatrix,
    pub b: DenseMatrix,
    pub alpha: f64,
    /// Configured rank `r`; the scale is `alpha / r` even when `A` has fewer
    /// columns.
    pub rank: usize,
    pub variant: InitVariant,
}

impl LoraFactors {
    pub fn effective_rank(&self) -> usize {
        self.a.cols()
    }

    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }
}

/// Builds the factors for one layer from its task gradient `g` (`d_in × d_out`).
///
/// For the SVD-based variants `A = U[:, :r_eff]` and `B = S[:r_eff]·V[:, :r_eff]ᵀ`
/// of the variant's projected gradient, where `r_eff` counts singular values
/// above [`SIGMA_FLOOR`] (capped at `r`).
pub fn init_from_gradient(
    g: &DenseMatrix,
    u: &UnifiedSubspace,
    cfg: &AdapterConfig,
    rng: &mut Rng,
) -> Result<LoraFactors, AdapterError> {
    if cfg.rank == 0 {
        return Err(AdapterError::ZeroRank);
    }
    let (d_in, d_out) = g.shape();
    if d_in != u.ambient_dim() {
        return Err(AdapterError::Shape(format!(
            "gradient has {d_in} rows, subspace dimension is {}",
            u.ambient_dim()
        )));
    }
    let (a, b) = match cfg.variant {
        InitVariant::FrozenRandomA => {
            let r = cfg.rank.min(d_in);
            let frame = gaussian_matrix(rng, d_in, r, 1.0);
            let q = orthonormalize_against(&frame, &OrthonormalBasis::empty(d_in), 1e-8)?;
            (q.basis.into_matrix(), DenseMatrix::zeros(r, d_out))
        }
        InitVariant::VanillaLora => (
            gaussian_matrix(rng, d_in, cfg.rank, cfg.vanilla_std),
            DenseMatrix::zeros(cfg.rank, d_out),
        ),
        variant => {
            let mut projected = g.clone();
            if variant.uses_principal() {
                projected = projected.sub(&crate::linalg::project_onto(g, &u.principal.basis)?);
            }
            if variant.uses_task_directions() {
                projected = projected.sub(&crate::linalg::project_onto(g, &u.task_dirs.basis)?);
            }
            top_singular_factors(&projected, cfg.rank)?
        }
    };
    Ok(LoraFactors {
        a,
        b,
        alpha: cfg.alpha,
        rank: cfg.rank,
        variant: cfg.variant,
    })
}

fn top_singular_factors(
    m: &DenseMatrix,
    rank: usize,
) -> Result<(DenseMatrix, DenseMatrix), AdapterError> {
    let dec = svd(m)?;
    let r_eff = dec.s.iter().take(rank).filter(|&&s| s > SIGMA_FLOOR).count();
    if r_eff == 0 {
        return Err(AdapterError::GradientFullyProjected);
    }
    let a = dec.u.column_range(0, r_eff);
    let vt = dec.v.column_range(0, r_eff).transpose();
    let b = DenseMatrix::from_fn(r_eff, m.cols(), |i, j| dec.s[i] * vt.get(i, j));
    Ok((a, b))
}

/// An adapter attached to a layer: `W_eff = W′ + (α/r)·A·B` with
/// `W′ = W − (α/r)·A₀·B₀`.
///
/// Stored as the pre-shift weight `W`, the initial factors, the current `A`
/// and the trained change `D = B − B₀`, so the effective weight is evaluated
/// as `W + (α/r)·(A·D + (A − A₀)·B₀)` without cancelling `A₀·B₀` against the
/// base.
#[derive(Clone, Debug, PartialEq)]
pub struct KeepLoraAdapter {
    base: DenseMatrix,
    init: LoraFactors,
    a: DenseMatrix,
    delta_b: DenseMatrix,
}

impl KeepLoraAdapter {
    /// Attaches `factors` to `w`; the effective weight starts out exactly `w`.
    pub fn shift_base(w: &DenseMatrix, factors: LoraFactors) -> Result<Self, AdapterError> {
        let (d_in, d_out) = w.shape();
        if factors.a.rows() != d_in
            || factors.b.cols() != d_out
            || factors.a.cols() != factors.b.rows()
        {
            return Err(AdapterError::Shape(format!(
                "W is {d_in}x{d_out}, A is {}x{}, B is {}x{}",
                factors.a.rows(),
                factors.a.cols(),
                factors.b.rows(),
                factors.b.cols()
            )));
        }
        Ok(Self {
            base: w.clone(),
            a: factors.a.clone(),
            delta_b: DenseMatrix::zeros(factors.b.rows(), factors.b.cols()),
            init: factors,
        })
    }

    pub fn a(&self) -> &DenseMatrix {
        &self.a
    }

    /// Current `B = B₀ + D`.
    pub fn b(&self) -> DenseMatrix {
        self.init.b.add(&self.delta_b)
    }

    /// Trained change `D = B − B₀`.
    pub fn delta_b(&self) -> &DenseMatrix {
        &self.delta_b
    }

    pub fn initial_factors(&self) -> &LoraFactors {
        &self.init
    }

    /// Current factors.
    pub fn factors(&self) -> LoraFactors {
        LoraFactors {
            a: self.a.clone(),
            b: self.b(),
            ..self.init.clone()
        }
    }

    /// The weight the adapter was attached to.
    pub fn base(&self) -> &DenseMatrix {
        &self.base
    }

    /// `W′ = W − (α/r)·A₀·B₀`
    pub fn shifted_base(&self) -> DenseMatrix {
        self.base
            .sub(&self.init.a.matmul(&self.init.b).scale(self.scale()))
    }

    pub fn scale(&self) -> f64 {
        self.init.scale()
    }

    pub fn variant(&self) -> InitVariant {
        self.init.variant
    }

    pub fn a_trainable(&self) -> bool {
        self.init.variant.trains_a()
    }

    /// Net change of the effective weight since attachment,
    /// `(α/r)·(A·B − A₀·B₀)`.
    pub fn delta(&self) -> DenseMatrix {
        let mut d = self.a.matmul(&self.delta_b);
        if self.a_trainable() {
            d = d.add(&self.a.sub(&self.init.a).matmul(&self.init.b));
        }
        d.scale(self.scale())
    }

    pub fn effective_weight(&self) -> DenseMatrix {
        self.base.add(&self.delta())
    }

    /// Adapter output `(α/r)·x·A·B` for row-major inputs `x` (`n × d_in`).
    pub fn output(&self, x: &DenseMatrix) -> DenseMatrix {
        x.matmul(&self.a).matmul(&self.b()).scale(self.scale())
    }

    /// `∂L/∂B = (α/r)·Aᵀ·G` for the gradient `G` with respect to the
    /// effective weight.
    pub fn grad_b(&self, g_w: &DenseMatrix) -> DenseMatrix {
        self.a.t_matmul(g_w).scale(self.scale())
    }

    /// `∂L/∂A = (α/r)·G·Bᵀ`
    pub fn grad_a(&self, g_w: &DenseMatrix) -> DenseMatrix {
        g_w.matmul_t(&self.b()).scale(self.scale())
    }

    /// Plain gradient step on `B` only: `B ← B − η·(α/r)·Aᵀ·G`.
    pub fn sgd_step_b(&mut self, g_w: &DenseMatrix, eta: f64) {
        let grad = self.grad_b(g_w);
        self.delta_b.axpy(-eta, &grad);
    }

    /// Plain gradient step on every trainable factor. Both gradients are
    /// taken at the current point before either factor moves.
    pub fn sgd_step(&mut self, g_w: &DenseMatrix, eta: f64) {
        if self.a_trainable() {
            let grad_a = self.grad_a(g_w);
            self.sgd_step_b(g_w, eta);
            self.a.axpy(-eta, &grad_a);
        } else {
            self.sgd_step_b(g_w, eta);
        }
    }

    /// `(D, B₀)`
    pub(crate) fn b_parts_mut(&mut self) -> (&mut DenseMatrix, &DenseMatrix) {
        (&mut self.delta_b, &self.init.b)
    }

    /// `None` when `A` is frozen.
    pub(crate) fn a_mut(&mut self) -> Option<&mut DenseMatrix> {
        if self.a_trainable() {
            Some(&mut self.a)
        } else {
            None
        }
    }

    /// Folds the adapter into a plain weight.
    pub fn merge(&self) -> DenseMatrix {
        self.effective_weight()
    }
}
