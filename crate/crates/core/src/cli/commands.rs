use std::path::{Path, PathBuf};

use crate::adapter::InitVariant;
use crate::metrics::{compute_metrics, interference_heatmap, spectra_analysis, spectra_analysis_model};
use crate::tasks::{gen_planted_spectrum_model, TaskStream};
use crate::trainer::{init_model, run_ablation_ladder, run_continual, RunOptions, RunOutcome, StageSnapshot};

use super::checkpoint::stage_checkpoint;
use super::config::ExperimentConfig;
use super::output::{
    ablation_csv, grid_csv, heatmap_csv, metrics_csv, plasticity_csv, spectra_csv, write_atomic, zero_shot_csv,
    PlasticityRow, RunManifest,
};
use super::{CliError, CommonArgs};

struct Prepared {
    cfg: ExperimentConfig,
    stream: TaskStream,
    opts: RunOptions,
}

fn prepare(args: &CommonArgs) -> Result<Prepared, CliError> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed_override {
        cfg.run.seed = seed;
    }
    if args.threads == 0 {
        return Err(CliError::Config("--threads must be at least 1".into()));
    }
    let stream = cfg.build_stream()?;
    Ok(Prepared {
        cfg,
        stream,
        opts: RunOptions {
            threads: args.threads,
            ..RunOptions::default()
        },
    })
}

/// Files produced by a command, kept in memory until everything succeeded.
struct Outputs {
    command: &'static str,
    files: Vec<(PathBuf, Vec<u8>)>,
    checkpoints: Vec<PathBuf>,
    wall_clock_secs: Vec<f64>,
}

impl Outputs {
    fn new(command: &'static str) -> Self {
        Self {
            command,
            files: Vec::new(),
            checkpoints: Vec::new(),
            wall_clock_secs: Vec::new(),
        }
    }

    fn add(&mut self, name: impl Into<PathBuf>, bytes: impl Into<Vec<u8>>) {
        self.files.push((name.into(), bytes.into()));
    }

    fn add_checkpoints(&mut self, outcome: &RunOutcome) {
        let stage0 = StageSnapshot {
            model: outcome.initial_model.clone(),
            adapters: Default::default(),
            initial_adapters: Default::default(),
            subspaces: outcome.initial_subspaces.clone(),
        };
        for (i, snap) in std::iter::once(&stage0).chain(&outcome.snapshots).enumerate() {
            let name = PathBuf::from(format!("checkpoints/stage_{i}.klra"));
            self.add(name.clone(), stage_checkpoint(snap, &outcome.config).to_bytes());
            self.checkpoints.push(name);
        }
        self.wall_clock_secs = outcome.records.iter().map(|r| r.wall_clock.as_secs_f64()).collect();
    }

    /// Paths in the manifest are relative to `out`.
    fn commit(self, out: &Path, p: &Prepared) -> Result<(), CliError> {
        let outputs = self
            .files
            .iter()
            .map(|(n, _)| n.clone())
            .filter(|n| !self.checkpoints.contains(n))
            .collect();
        for (name, bytes) in &self.files {
            write_atomic(&out.join(name), bytes)?;
        }
        let manifest = RunManifest {
            command: self.command.to_string(),
            config: p.cfg.to_toml(),
            stream_fingerprint: p.stream.fingerprint(),
            checkpoints: self.checkpoints,
            outputs,
            wall_clock_secs: self.wall_clock_secs,
        };
        let name = if self.command == "run" {
            "manifest.json".to_string()
        } else {
            format!("{}_manifest.json", self.command)
        };
        write_atomic(&out.join(name), manifest.to_json().as_bytes())?;
        Ok(())
    }
}

fn finish(r: Result<(), CliError>) -> i32 {
    match r {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Continual run of the configured variant. Writes `grid.csv`,
/// `metrics.csv`, `zero_shot.csv`, `checkpoints/stage_{0..n}.klra` and
/// `manifest.json`.
pub fn cmd_run(args: &CommonArgs) -> i32 {
    finish(run(args))
}

fn run(args: &CommonArgs) -> Result<(), CliError> {
    let p = prepare(args)?;
    let outcome = run_continual(&p.cfg.run, &p.stream, &p.cfg.model, &p.opts)?;
    let report = compute_metrics(&outcome.grid)?;
    let mut out = Outputs::new("run");
    out.add("grid.csv", grid_csv(&outcome.grid));
    out.add("metrics.csv", metrics_csv(&report));
    out.add("zero_shot.csv", zero_shot_csv(&outcome.initial_eval));
    out.add_checkpoints(&outcome);
    out.commit(&args.out, &p)
}

/// All six variants on identical data; writes `ablation.csv`.
pub fn cmd_ablation(args: &CommonArgs) -> i32 {
    finish(ablation(args))
}

fn ablation(args: &CommonArgs) -> Result<(), CliError> {
    let p = prepare(args)?;
    let ladder = run_ablation_ladder(&p.cfg.run, &p.stream, &p.cfg.model, &p.opts)?;
    let mut out = Outputs::new("ablation");
    out.add("ablation.csv", ablation_csv(&ladder.rows()?));
    out.commit(&args.out, &p)
}

/// Isolated versus in-sequence accuracy per task for keeplora and vanilla
/// LoRA; writes `plasticity.csv`.
pub fn cmd_plasticity(args: &CommonArgs) -> i32 {
    finish(plasticity(args))
}

pub(crate) fn plasticity_rows(p_cfg: &ExperimentConfig, stream: &TaskStream, opts: &RunOptions) -> Result<Vec<PlasticityRow>, CliError> {
    let mut rows = Vec::new();
    for variant in [InitVariant::KeepLora, InitVariant::VanillaLora] {
        let cfg = p_cfg.run.with_variant(variant);
        let seq = run_continual(&cfg, stream, &p_cfg.model, opts)?;
        for (t, task) in stream.tasks.iter().enumerate() {
            let iso = run_continual(&cfg, &stream.isolated(t), &p_cfg.model, opts)?;
            rows.push(PlasticityRow {
                variant: variant.to_string(),
                task: task.name.clone(),
                isolated_acc: iso.grid.at(0, 0),
                sequential_acc: seq.grid.at(t, t),
            });
        }
    }
    Ok(rows)
}

fn plasticity(args: &CommonArgs) -> Result<(), CliError> {
    let p = prepare(args)?;
    let rows = plasticity_rows(&p.cfg, &p.stream, &p.opts)?;
    let mut out = Outputs::new("plasticity");
    out.add("plasticity.csv", plasticity_csv(&rows));
    out.commit(&args.out, &p)
}

/// Truncation accuracies; the planted construction when `[spectra.planted]`
/// is configured, otherwise one layer of the untrained run model.
pub fn cmd_spectra(args: &CommonArgs) -> i32 {
    finish(spectra(args))
}

fn spectra(args: &CommonArgs) -> Result<(), CliError> {
    let p = prepare(args)?;
    let sc = p.cfg.spectra.clone().unwrap_or(super::config::SpectraConfig {
        ks: None,
        layer: 0,
        planted: None,
        min_specific_drop: None,
        max_general_change: None,
    });
    let rows = match &sc.planted {
        Some(spec) => {
            let planted = gen_planted_spectrum_model(p.cfg.run.seed, spec)
                .map_err(|e| CliError::Config(format!("[spectra.planted]: {e}")))?;
            let ks = sc.ks.clone().unwrap_or_else(|| (1..=spec.d).collect());
            spectra_analysis(&planted.weight, &[planted.general, planted.specific], &ks)?
        }
        None => {
            let model = init_model(&p.cfg.run, &p.stream, &p.cfg.model).map_err(|e| CliError::Runtime(e.to_string()))?;
            if sc.layer >= model.num_layers() {
                return Err(CliError::Config(format!("[spectra] layer {} does not exist", sc.layer)));
            }
            let (r, c) = model.layers()[sc.layer].weight.shape();
            let ks = sc.ks.clone().unwrap_or_else(|| (1..=r.min(c)).collect());
            spectra_analysis_model(&model, sc.layer, &p.stream.tasks, &ks)?
        }
    };
    let mut out = Outputs::new("spectra");
    out.add("spectra.csv", spectra_csv(&rows));
    out.commit(&args.out, &p)
}

/// Interference norms of the configured run; writes `heatmap.csv`
/// (normalized by the grid maximum) and `heatmap_raw.csv`.
pub fn cmd_heatmap(args: &CommonArgs) -> i32 {
    finish(heatmap(args))
}

fn heatmap(args: &CommonArgs) -> Result<(), CliError> {
    let p = prepare(args)?;
    let outcome = run_continual(&p.cfg.run, &p.stream, &p.cfg.model, &p.opts)?;
    let grid = interference_heatmap(&outcome.snapshots, &p.stream)?;
    let mut out = Outputs::new("heatmap");
    out.add("heatmap.csv", heatmap_csv(&grid, false));
    out.add("heatmap_raw.csv", heatmap_csv(&grid, true));
    out.commit(&args.out, &p)
}
