//! Gradient-informed init, base shift, frozen-A training and merge on a
//! single weight matrix.
//!
//! `cargo run --example adapter_lifecycle`

use keeplora::adapter::init_from_gradient;
use keeplora::seed::{gaussian_matrix, rng_for};
use keeplora::{AdapterConfig, InitVariant, KeepLoraAdapter, UnifiedSubspace};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = rng_for(3, "demo");
    let w = gaussian_matrix(&mut rng, 12, 10, 0.5);
    let u = UnifiedSubspace::from_weight(&w, 0.6)?;
    let g = gaussian_matrix(&mut rng, 12, 10, 1.0);
    let cfg = AdapterConfig {
        rank: 3,
        alpha: 16.0,
        variant: InitVariant::KeepLora,
        vanilla_std: 0.1,
    };
    let factors = init_from_gradient(&g, &u, &cfg, &mut rng)?;
    println!(
        "A is {}x{}, |W_pᵀA| = {:.1e}",
        factors.a.rows(),
        factors.a.cols(),
        u.principal.basis.matrix().t_matmul(&factors.a).max_abs()
    );

    let mut ad = KeepLoraAdapter::shift_base(&w, factors)?;
    println!("after shift |W_eff − W| = {:.1e}", ad.effective_weight().max_abs_diff(&w));

    let before = ad.effective_weight();
    let eta = 0.01;
    ad.sgd_step_b(&g, eta);
    let delta = ad.effective_weight().sub(&before);
    let s = ad.scale();
    let predicted = ad.a().matmul(&ad.a().t_matmul(&g)).scale(-eta * s * s);
    println!(
        "one step: ΔW matches −η(α/r)²AAᵀG to {:.1e} (relative)",
        delta.max_abs_diff(&predicted) / predicted.max_abs()
    );

    let merged = ad.merge();
    let change = merged.sub(&w);
    println!(
        "merged change inside W_p: {:.1e}",
        u.principal.basis.matrix().t_matmul(&change).max_abs()
    );
    Ok(())
}
