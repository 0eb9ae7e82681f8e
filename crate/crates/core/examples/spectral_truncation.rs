//! Accuracy of a planted-spectrum classifier as its weight is truncated to
//! the top-k singular triplets.
//!
//! `cargo run --example spectral_truncation`

use keeplora::metrics::spectra_analysis;
use keeplora::tasks::{gen_planted_spectrum_model, PlantedSpectrumSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = PlantedSpectrumSpec::new(32, 6, 6);
    let p = gen_planted_spectrum_model(1, &spec)?;
    let ks: Vec<usize> = (1..=14).collect();
    let rows = spectra_analysis(&p.weight, &[p.general, p.specific], &ks)?;
    println!("{:>3} {:>8} {:>8}", "k", "general", "specific");
    for pair in rows.chunks(2) {
        println!("{:>3} {:>8.3} {:>8.3}", pair[0].k, pair[0].accuracy, pair[1].accuracy);
    }
    Ok(())
}
