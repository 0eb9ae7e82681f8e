//! Principal subspace and task-direction extraction against an independent
//! singular-value oracle.

mod common;

use common::{residual_dense, singular_values, subspace_with_dirs};
use keeplora::linalg::orthonormality_error;
use keeplora::seed::{gaussian_matrix, rng_for};
use keeplora::subspace::{extract_principal, SubspaceError};
use keeplora::DenseMatrix;
use proptest::prelude::*;

fn minimal_count(energies: &[f64], covered: f64, target: f64) -> usize {
    let mut acc = covered;
    let mut m = 0;
    for e in energies {
        if acc >= target {
            break;
        }
        acc += e;
        m += 1;
    }
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn principal_rank_is_minimal(seed in any::<u64>(), d in 2usize..16, k in 2usize..16, eps in 0.05f64..0.95) {
        let mut rng = rng_for(seed, "wp");
        let w = gaussian_matrix(&mut rng, d, k, 1.0);
        let p = extract_principal(&w, eps).unwrap();
        let s2: Vec<f64> = singular_values(&w).iter().map(|s| s * s).collect();
        let total: f64 = s2.iter().sum();
        let expected = minimal_count(&s2, 0.0, eps * total);
        prop_assert_eq!(p.p(), expected);
        prop_assert!(p.retained_energy_fraction >= eps - 1e-12);
        prop_assert!(orthonormality_error(p.basis.matrix()) < 1e-10);
    }

    #[test]
    fn task_directions_meet_energy_and_stay_orthogonal(
        seed in any::<u64>(), d in 4usize..14, n in 3usize..30, extra in 0usize..4, eps_f in 0.3f64..0.99,
    ) {
        let mut rng = rng_for(seed, "m");
        let w = gaussian_matrix(&mut rng, d, d + 2, 1.0);
        let u = subspace_with_dirs(&w, 0.3, extra, &mut rng);
        let x = gaussian_matrix(&mut rng, d, n, 1.0);
        let upd = u.extract_task_directions(&x, eps_f).unwrap();

        let basis = u.unified_basis();
        let resid = residual_dense(&x, basis.matrix());
        let total = x.frobenius_norm_sq();
        let covered = total - resid.frobenius_norm_sq();
        let s2: Vec<f64> = singular_values(&resid).iter().map(|s| s * s).collect();
        let m = minimal_count(&s2, covered, eps_f * total);
        let capacity = d - u.total_columns();
        prop_assert_eq!(upd.selected, m);
        prop_assert!(upd.count() <= m.min(capacity));
        if upd.count() > 0 {
            prop_assert!(basis.matrix().t_matmul(&upd.directions).max_abs() < 1e-10);
            prop_assert!(orthonormality_error(&upd.directions) < 1e-10);
        }
        if m <= capacity && upd.dropped == 0 {
            let kept = covered + s2[..m].iter().sum::<f64>();
            prop_assert!(kept >= eps_f * total * (1.0 - 1e-9));
        }

        let mut u2 = u.clone();
        let before = u2.total_columns();
        let rep = u2.append_task_directions(&upd.directions).unwrap();
        prop_assert_eq!(u2.total_columns(), before + rep.added);
        prop_assert!(orthonormality_error(u2.unified_basis().matrix()) < 1e-9);
        prop_assert_eq!(u2.task_dirs.per_task_counts.len(), u.task_dirs.per_task_counts.len() + 1);
    }
}

#[test]
fn larger_threshold_never_shrinks_the_subspace() {
    let mut rng = rng_for(4, "mono");
    let w = gaussian_matrix(&mut rng, 12, 20, 1.0);
    let mut prev = 0;
    for eps in [0.1, 0.3, 0.5, 0.7, 0.9, 0.99] {
        let p = extract_principal(&w, eps).unwrap().p();
        assert!(p >= prev);
        prev = p;
    }
}

#[test]
fn full_subspace_leaves_no_residual() {
    let mut rng = rng_for(5, "full");
    let w = gaussian_matrix(&mut rng, 6, 6, 1.0);
    let u = subspace_with_dirs(&w, 0.5, 6, &mut rng);
    assert_eq!(u.total_columns(), 6);
    let g = gaussian_matrix(&mut rng, 6, 4, 1.0);
    assert!(u.residual_project(&g).unwrap().max_abs() < 1e-12);
    let x = gaussian_matrix(&mut rng, 6, 10, 1.0);
    assert_eq!(u.extract_task_directions(&x, 0.9).unwrap().count(), 0);
}

#[test]
fn rejects_bad_inputs() {
    assert!(matches!(
        extract_principal(&DenseMatrix::zeros(3, 3), 0.5),
        Err(SubspaceError::ZeroWeight)
    ));
    let w = DenseMatrix::identity(3);
    assert!(matches!(extract_principal(&w, 1.0), Err(SubspaceError::Threshold { .. })));
    let u = keeplora::UnifiedSubspace::from_weight(&w, 0.5).unwrap();
    assert!(matches!(
        u.extract_task_directions(&DenseMatrix::zeros(3, 0), 0.5),
        Err(SubspaceError::NoSamples)
    ));
    // a direction inside W_p cannot be appended
    let mut u = u;
    let inside = u.principal.basis.matrix().column_range(0, 1);
    assert!(matches!(u.append_task_directions(&inside), Err(SubspaceError::NotOrthogonal(_))));
}
