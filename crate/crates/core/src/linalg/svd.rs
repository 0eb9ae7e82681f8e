//! Thin SVD by one-sided (Hestenes) Jacobi rotations.
//!
//! Jacobi is slower than Golub–Kahan bidiagonalization but it is simple,
//! computes small singular values to high relative accuracy, and performs
//! the same floating-point operations in the same order on every call, which
//! is what downstream adapter initialization relies on for bit-identical runs.

use super::matrix::{dot, DenseMatrix};
use super::LinalgError;

const MAX_SWEEPS: usize = 80;
const ORTHO_TOL: f64 = 1e-15;

/// `m = U · diag(S) · Vᵀ` with `k = min(rows, cols)` columns in `U` and `V`.
#[derive(Clone, Debug, PartialEq)]
pub struct SvdResult {
    /// rows × k, orthonormal columns.
    pub u: DenseMatrix,
    /// Non-negative, non-increasing.
    pub s: Vec<f64>,
    /// cols × k, orthonormal columns.
    pub v: DenseMatrix,
}

impl SvdResult {
    pub fn reconstruct(&self) -> DenseMatrix {
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            for (j, &s) in self.s.iter().enumerate() {
                let v = us.get(i, j) * s;
                us.set(i, j, v);
            }
        }
        us.matmul_t(&self.v)
    }

    /// Reconstruction from the leading `k` singular triplets.
    pub fn truncated(&self, k: usize) -> DenseMatrix {
        let k = k.min(self.s.len());
        let mut us = self.u.column_range(0, k);
        for i in 0..us.rows() {
            for j in 0..k {
                let v = us.get(i, j) * self.s[j];
                us.set(i, j, v);
            }
        }
        us.matmul_t(&self.v.column_range(0, k))
    }
}

/// Singular value decomposition.
///
/// Sign convention: in each column of `U` the entry of largest magnitude is
/// non-negative (ties go to the lowest row index); the matching column of `V`
/// is flipped with it.
pub fn svd(m: &DenseMatrix) -> Result<SvdResult, LinalgError> {
    if m.is_empty() {
        return Err(LinalgError::Empty);
    }
    if !m.is_finite() {
        return Err(LinalgError::NonFinite { row: 0, col: 0 });
    }
    let (u, s, v) = if m.rows() >= m.cols() {
        jacobi_tall(m)?
    } else {
        let (u, s, v) = jacobi_tall(&m.transpose())?;
        (v, s, u)
    };
    let mut out = SvdResult { u, s, v };
    fix_signs(&mut out);
    Ok(out)
}

/// Column-major working copy; `a.rows() >= a.cols()`.
fn jacobi_tall(a: &DenseMatrix) -> Result<(DenseMatrix, Vec<f64>, DenseMatrix), LinalgError> {
    let (rows, n) = a.shape();
    let mut cols = a.columns_vec();
    let mut vcols: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();

    let mut converged = n < 2;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                if gamma.abs() <= ORTHO_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut cols, p, q, c, s);
                rotate(&mut vcols, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
        }
    }
    if !converged {
        return Err(LinalgError::NoConvergence {
            rows: a.rows(),
            cols: a.cols(),
        });
    }

    let norms: Vec<f64> = cols.iter().map(|c| dot(c, c).sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    // stable: equal values keep their original column order
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));

    let s: Vec<f64> = order.iter().map(|&j| norms[j]).collect();
    let smax = s.first().copied().unwrap_or(0.0);
    let negligible = smax * (rows.max(n) as f64) * f64::EPSILON;

    let mut ucols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut missing = Vec::new();
    for (k, &j) in order.iter().enumerate() {
        if s[k] > negligible && s[k] > 0.0 {
            let mut u: Vec<f64> = cols[j].iter().map(|x| x / s[k]).collect();
            // columns of tiny σ carry rounding noise from the rotations
            for _ in 0..2 {
                for prev in ucols.iter().filter(|c| !c.is_empty()) {
                    let proj = dot(&u, prev);
                    for (x, y) in u.iter_mut().zip(prev) {
                        *x -= proj * y;
                    }
                }
            }
            let norm = dot(&u, &u).sqrt();
            if norm > 0.5 {
                u.iter_mut().for_each(|x| *x /= norm);
                ucols.push(u);
                continue;
            }
        }
        ucols.push(Vec::new());
        missing.push(k);
    }
    complete_orthonormal(&mut ucols, &missing, rows);

    let vsorted: Vec<Vec<f64>> = order.iter().map(|&j| vcols[j].clone()).collect();
    Ok((
        DenseMatrix::from_columns(rows, &ucols),
        s,
        DenseMatrix::from_columns(n, &vsorted),
    ))
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let cp = &mut lo[p];
    let cq = &mut hi[0];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let xp = *x;
        let xq = *y;
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Fills the columns listed in `missing` with unit vectors orthogonal to every
/// other column: each is the standard basis vector with the largest residual
/// (lowest index on ties), orthogonalized and normalized.
fn complete_orthonormal(cols: &mut [Vec<f64>], missing: &[usize], len: usize) {
    for &k in missing {
        let mut best: Option<(f64, Vec<f64>)> = None;
        for e in 0..len {
            let mut cand = vec![0.0; len];
            cand[e] = 1.0;
            for _ in 0..2 {
                for (j, c) in cols.iter().enumerate() {
                    if j == k || c.is_empty() {
                        continue;
                    }
                    let proj = dot(&cand, c);
                    for (x, y) in cand.iter_mut().zip(c) {
                        *x -= proj * y;
                    }
                }
            }
            let norm = dot(&cand, &cand).sqrt();
            if best.as_ref().is_none_or(|(b, _)| norm > *b) {
                best = Some((norm, cand));
            }
        }
        let (norm, mut cand) = best.expect("len > 0");
        assert!(norm > 1e-8, "cannot complete orthonormal set");
        cand.iter_mut().for_each(|x| *x /= norm);
        cols[k] = cand;
    }
}

fn fix_signs(res: &mut SvdResult) {
    for j in 0..res.u.cols() {
        let mut best = 0.0f64;
        let mut best_val = 0.0;
        for i in 0..res.u.rows() {
            let x = res.u.get(i, j);
            if x.abs() > best {
                best = x.abs();
                best_val = x;
            }
        }
        if best_val < 0.0 {
            for i in 0..res.u.rows() {
                let x = res.u.get(i, j);
                res.u.set(i, j, -x);
            }
            for i in 0..res.v.rows() {
                let x = res.v.get(i, j);
                res.v.set(i, j, -x);
            }
        }
    }
}

/// Minimal `p` with `Σ_{i≤p} σ_i² ≥ epsilon · Σ_i σ_i²`.
pub fn energy_rank(singular_values: &[f64], epsilon: f64) -> Result<usize, LinalgError> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(LinalgError::Threshold(epsilon));
    }
    let total: f64 = singular_values.iter().map(|s| s * s).sum();
    if total <= 0.0 {
        return Err(LinalgError::NoEnergy);
    }
    let target = epsilon * total;
    let mut cum = 0.0;
    for (i, s) in singular_values.iter().enumerate() {
        cum += s * s;
        if cum >= target {
            return Ok(i + 1);
        }
    }
    Ok(singular_values.len())
}
