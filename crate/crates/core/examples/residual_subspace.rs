//! Principal subspace of a weight, task directions from features, and the
//! residual projection that keeps both untouched.
//!
//! `cargo run --example residual_subspace`

use keeplora::seed::{gaussian_matrix, rng_for};
use keeplora::UnifiedSubspace;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = rng_for(7, "demo");
    let w = gaussian_matrix(&mut rng, 16, 24, 0.3);
    let mut u = UnifiedSubspace::from_weight(&w, 0.5)?;
    println!(
        "W_p: {} of 16 directions hold {:.3} of the energy",
        u.principal.p(),
        u.principal.retained_energy_fraction
    );

    // features of one task: 3 dominant directions plus a little noise
    let basis = gaussian_matrix(&mut rng, 16, 3, 1.0);
    let coeffs = gaussian_matrix(&mut rng, 3, 200, 2.0);
    let x = basis.matmul(&coeffs).add(&gaussian_matrix(&mut rng, 16, 200, 0.05));
    let upd = u.extract_task_directions(&x, 0.95)?;
    println!(
        "task adds {} directions (covers {:.3})",
        upd.count(),
        upd.retained_energy_fraction
    );
    u.append_task_directions(&upd.directions)?;

    let g = gaussian_matrix(&mut rng, 16, 24, 1.0);
    let ghat = u.residual_project(&g)?;
    let leak = u.unified_basis().matrix().t_matmul(&ghat).max_abs();
    println!(
        "projected gradient keeps {:.3} of its norm, overlap with [W_p, M] = {leak:.2e}",
        ghat.frobenius_norm() / g.frobenius_norm()
    );
    Ok(())
}
