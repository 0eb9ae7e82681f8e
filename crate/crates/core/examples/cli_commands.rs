//! Drive the five command entry points from code against the shipped
//! golden config, writing into a temp directory.
//!
//! `cargo run --release --example cli_commands`

use keeplora::cli::{cmd_ablation, cmd_heatmap, cmd_plasticity, cmd_run, cmd_spectra, CommonArgs};

fn main() {
    let config = concat!(env!("CARGO_MANIFEST_DIR"), "/configs/golden.toml");
    let out = std::env::temp_dir().join("keeplora-cli-demo");
    let args = CommonArgs::new(config, &out);
    for (name, cmd) in [
        ("run", cmd_run as fn(&CommonArgs) -> i32),
        ("ablation", cmd_ablation),
        ("plasticity", cmd_plasticity),
        ("spectra", cmd_spectra),
        ("heatmap", cmd_heatmap),
    ] {
        println!("{name}: exit {}", cmd(&args));
    }
    let mut files: Vec<_> = std::fs::read_dir(&out)
        .map(|d| d.filter_map(|e| e.ok()).map(|e| e.file_name()).collect())
        .unwrap_or_default();
    files.sort();
    println!("{} -> {files:?}", out.display());
}
