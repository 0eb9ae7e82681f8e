//! Frozen-A update rule, residual-subspace optimality of the init, base-shift
//! invariance, and per-variant constraints.

mod common;

use common::{feasible_frame, singular_values, subspace_with_dirs};
use keeplora::adapter::{init_from_gradient, AdapterError};
use keeplora::linalg::orthonormality_error;
use keeplora::seed::{gaussian_matrix, rng_for};
use keeplora::{AdapterConfig, InitVariant, KeepLoraAdapter};
use proptest::prelude::*;

fn cfg(rank: usize, alpha: f64, variant: InitVariant) -> AdapterConfig {
    AdapterConfig {
        rank,
        alpha,
        variant,
        vanilla_std: 0.2,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn one_b_step_moves_weight_by_aat_g(
        seed in any::<u64>(), d_in in 2usize..=32, d_out in 1usize..=32, r in 1usize..=8,
        alpha in prop::sample::select(vec![1.0, 16.0]), eta in prop::sample::select(vec![1e-3, 1e-1]),
    ) {
        let mut rng = rng_for(seed, "p1");
        let w = gaussian_matrix(&mut rng, d_in, d_out, 1.0);
        let u = subspace_with_dirs(&w, 0.5, 1, &mut rng);
        let g0 = gaussian_matrix(&mut rng, d_in, d_out, 1.0);
        let f = match init_from_gradient(&g0, &u, &cfg(r, alpha, InitVariant::KeepLora), &mut rng) {
            Ok(f) => f,
            Err(AdapterError::GradientFullyProjected) => return Ok(()),
            Err(e) => panic!("{e}"),
        };
        let mut ad = KeepLoraAdapter::shift_base(&w, f).unwrap();
        let g = gaussian_matrix(&mut rng, d_in, d_out, 1.0);
        let before = ad.effective_weight();
        ad.sgd_step_b(&g, eta);
        let delta = ad.effective_weight().sub(&before);
        let s = alpha / r as f64;
        let expected = ad.a().matmul(&ad.a().t_matmul(&g)).scale(-eta * s * s);
        let rel = delta.sub(&expected).frobenius_norm() / expected.frobenius_norm();
        // the subtraction of two O(1) weights loses digits proportional to |W|/|ΔW|
        let cancel = before.frobenius_norm() / expected.frobenius_norm();
        prop_assert!(rel <= 1e-12 * cancel.max(1.0) * 4.0, "rel {rel:e}, cancel {cancel:e}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn keeplora_init_captures_the_most_residual_energy(
        seed in any::<u64>(), d_in in 3usize..=12, d_out in 1usize..=10, r in 1usize..=3, extra in 0usize..3,
    ) {
        let mut rng = rng_for(seed, "p2");
        let w = gaussian_matrix(&mut rng, d_in, d_out + 2, 1.0);
        let u = subspace_with_dirs(&w, 0.4, extra, &mut rng);
        let g = gaussian_matrix(&mut rng, d_in, d_out, 1.0);
        let f = match init_from_gradient(&g, &u, &cfg(r, 16.0, InitVariant::KeepLora), &mut rng) {
            Ok(f) => f,
            Err(AdapterError::GradientFullyProjected) => return Ok(()),
            Err(e) => panic!("{e}"),
        };
        prop_assert!(u.principal.basis.matrix().t_matmul(&f.a).max_abs() <= 1e-10);
        if !u.task_dirs.basis.is_empty() {
            prop_assert!(u.task_dirs.basis.matrix().t_matmul(&f.a).max_abs() <= 1e-10);
        }
        let ghat = u.residual_project(&g).unwrap();
        let captured = f.a.t_matmul(&ghat).frobenius_norm_sq();
        let sig = singular_values(&ghat);
        let optimum: f64 = sig.iter().take(f.a.cols()).map(|s| s * s).sum();
        prop_assert!((captured - optimum).abs() <= 1e-9 * optimum.max(1e-300));
        let avoid = u.unified_basis();
        for _ in 0..300 {
            if let Some(frame) = feasible_frame(&mut rng, &avoid, f.a.cols()) {
                let e = frame.t_matmul(&ghat).frobenius_norm_sq();
                prop_assert!(captured >= e * (1.0 - 1e-12));
            }
        }
    }

    #[test]
    fn shift_preserves_the_effective_weight(seed in any::<u64>(), variant in prop::sample::select(InitVariant::ALL.to_vec())) {
        let mut rng = rng_for(seed, "shift");
        let w = gaussian_matrix(&mut rng, 10, 7, 1.0);
        let u = subspace_with_dirs(&w, 0.5, 2, &mut rng);
        let g = gaussian_matrix(&mut rng, 10, 7, 1.0);
        let f = init_from_gradient(&g, &u, &cfg(3, 16.0, variant), &mut rng).unwrap();
        let ad = KeepLoraAdapter::shift_base(&w, f).unwrap();
        prop_assert!(ad.effective_weight().max_abs_diff(&w) <= 1e-12);
        prop_assert!(ad.merge().max_abs_diff(&w) <= 1e-12);
    }
}

#[test]
fn variant_constraints() {
    let mut rng = rng_for(21, "variants");
    let w = gaussian_matrix(&mut rng, 12, 9, 1.0);
    let u = subspace_with_dirs(&w, 0.5, 3, &mut rng);
    let wp = u.principal.basis.matrix();
    let m = u.task_dirs.basis.matrix();
    let g = gaussian_matrix(&mut rng, 12, 9, 1.0);
    let init = |v| init_from_gradient(&g, &u, &cfg(4, 16.0, v), &mut rng_for(1, "x")).unwrap();

    let grad_only = init(InitVariant::GradOnly);
    let dec = keeplora::linalg::svd(&g).unwrap();
    assert!(grad_only.a.max_abs_diff(&dec.u.column_range(0, 4)) < 1e-12);
    assert!(wp.t_matmul(&grad_only.a).max_abs() > 1e-3);

    let minus_wp = init(InitVariant::GradMinusWp);
    assert!(wp.t_matmul(&minus_wp.a).max_abs() < 1e-10);
    assert!(m.t_matmul(&minus_wp.a).max_abs() > 1e-3);

    let minus_m = init(InitVariant::GradMinusM);
    assert!(m.t_matmul(&minus_m.a).max_abs() < 1e-10);

    let frozen = init(InitVariant::FrozenRandomA);
    assert!(orthonormality_error(&frozen.a) < 1e-12);
    assert_eq!(frozen.b.max_abs(), 0.0);

    let vanilla = init(InitVariant::VanillaLora);
    assert_eq!(vanilla.a.shape(), (12, 4));
    assert_eq!(vanilla.b.max_abs(), 0.0);
    assert!(vanilla.variant.trains_a());

    for f in [&grad_only, &minus_wp, &minus_m] {
        // B = S·Vᵀ so that A·B reproduces the projected gradient's top part
        assert!((f.b.frobenius_norm_sq() - f.a.t_matmul(&g).frobenius_norm_sq()).abs() < 1e-9);
    }
}

#[test]
fn frozen_a_updates_stay_in_span_of_a() {
    let mut rng = rng_for(22, "span");
    let w = gaussian_matrix(&mut rng, 10, 6, 1.0);
    let u = subspace_with_dirs(&w, 0.5, 2, &mut rng);
    let f = init_from_gradient(&gaussian_matrix(&mut rng, 10, 6, 1.0), &u, &cfg(3, 8.0, InitVariant::KeepLora), &mut rng)
        .unwrap();
    let mut ad = KeepLoraAdapter::shift_base(&w, f).unwrap();
    let a0 = ad.a().clone();
    for _ in 0..20 {
        ad.sgd_step(&gaussian_matrix(&mut rng, 10, 6, 1.0), 0.05);
    }
    assert_eq!(ad.a(), &a0);
    let change = ad.merge().sub(&w);
    let outside = change.sub(&a0.matmul(&a0.t_matmul(&change)));
    assert!(outside.max_abs() < 1e-12);
    assert!(u.unified_basis().matrix().t_matmul(&change).max_abs() < 1e-12);
}

#[test]
fn vanilla_trains_both_factors() {
    let mut rng = rng_for(23, "vanilla");
    let w = gaussian_matrix(&mut rng, 8, 5, 1.0);
    let u = subspace_with_dirs(&w, 0.5, 0, &mut rng);
    let f = init_from_gradient(&w, &u, &cfg(2, 4.0, InitVariant::VanillaLora), &mut rng).unwrap();
    let mut ad = KeepLoraAdapter::shift_base(&w, f).unwrap();
    let a0 = ad.a().clone();
    let g = gaussian_matrix(&mut rng, 8, 5, 1.0);
    ad.sgd_step(&g, 0.1);
    ad.sgd_step(&g, 0.1);
    assert!(ad.a().max_abs_diff(&a0) > 0.0);
    assert!(ad.b().max_abs() > 0.0);
}

#[test]
fn empty_residual_is_reported() {
    let mut rng = rng_for(24, "empty");
    let w = gaussian_matrix(&mut rng, 5, 5, 1.0);
    let u = subspace_with_dirs(&w, 0.5, 5, &mut rng);
    let g = gaussian_matrix(&mut rng, 5, 3, 1.0);
    let err = init_from_gradient(&g, &u, &cfg(2, 1.0, InitVariant::KeepLora), &mut rng).unwrap_err();
    assert!(matches!(err, AdapterError::GradientFullyProjected));
    assert!(err.to_string().contains("principal subspace"));
}
