//! Sequential training over a task stream: gradient-informed adapter init,
//! base shift, adapter training, merge, subspace extension, and a full
//! evaluation of every task after every stage.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapter::{init_from_gradient, AdapterConfig, AdapterError, InitVariant, LoraFactors};
use crate::linalg::DenseMatrix;
use crate::metrics::{backward_forgetting, compute_metrics, AccuracyGrid, MetricsError};
use crate::model::{Batch, LinearModel, ModelError, ModelSpec};
use crate::seed::rng_for;
use crate::subspace::{PrincipalSubspace, SubspaceError, UnifiedSubspace};
use crate::tasks::TaskStream;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const ADAM_WEIGHT_DECAY: f64 = 0.01;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid config field `{field}`: {msg}")]
    Config { field: &'static str, msg: String },
    #[error("task stream is empty")]
    EmptyStream,
    #[error("non-finite loss at stage {stage} ({task}), epoch {epoch}, step {step}")]
    NonFinite {
        stage: usize,
        task: String,
        epoch: usize,
        step: usize,
    },
    #[error("stage {stage} ({task}): {source}")]
    Stage {
        stage: usize,
        task: String,
        #[source]
        source: Box<TrainError>,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Adapter(#[from] AdapterError),
    #[error(transparent)]
    Subspace(#[from] SubspaceError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    /// Adam moments with decoupled weight decay.
    AdaptiveDecoupled,
}

impl OptimizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::AdaptiveDecoupled => "adaptive_decoupled",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Energy fraction kept by the principal subspace of each weight.
    pub epsilon_w: f64,
    /// Energy fraction of task features covered after extending `M`.
    pub epsilon_f: f64,
    pub r: usize,
    pub alpha: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs_per_task: usize,
    pub optimizer: OptimizerKind,
    pub variant: InitVariant,
    pub seed: u64,
    /// Training rows fed through the merged model to extract task directions.
    pub feature_sample_size: usize,
    /// Number of leading mini-batches averaged into the init gradient.
    pub grad_init_batches: usize,
    /// Per-layer replacements for `epsilon_w` and `r`.
    #[serde(default, rename = "layer_override", skip_serializing_if = "Vec::is_empty")]
    pub layer_overrides: Vec<LayerOverride>,
}

/// `[[layer_override]]` entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerOverride {
    pub layer: usize,
    pub epsilon_w: Option<f64>,
    pub r: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            epsilon_w: 0.5,
            epsilon_f: 0.9,
            r: 8,
            alpha: 16.0,
            lr: 1e-3,
            batch_size: 64,
            epochs_per_task: 5,
            optimizer: OptimizerKind::Sgd,
            variant: InitVariant::KeepLora,
            seed: 0,
            feature_sample_size: 512,
            grad_init_batches: 1,
            layer_overrides: Vec::new(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |field, msg: &str| {
            Err(TrainError::Config {
                field,
                msg: msg.to_string(),
            })
        };
        for (field, v) in [("epsilon_w", self.epsilon_w), ("epsilon_f", self.epsilon_f)] {
            if !(v > 0.0 && v < 1.0) {
                return bad(field, &format!("{v} is outside (0, 1)"));
            }
        }
        if self.r == 0 {
            return bad("r", "must be positive");
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return bad("alpha", "must be positive");
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad("lr", "must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive");
        }
        if self.feature_sample_size == 0 {
            return bad("feature_sample_size", "must be positive");
        }
        if self.grad_init_batches == 0 {
            return bad("grad_init_batches", "must be positive");
        }
        for (i, o) in self.layer_overrides.iter().enumerate() {
            if self.layer_overrides[..i].iter().any(|p| p.layer == o.layer) {
                return bad("layer_override", &format!("layer {} listed twice", o.layer));
            }
            if o.epsilon_w.is_some_and(|v| !(v > 0.0 && v < 1.0)) {
                return bad("layer_override", &format!("layer {}: epsilon_w outside (0, 1)", o.layer));
            }
            if o.r == Some(0) {
                return bad("layer_override", &format!("layer {}: r must be positive", o.layer));
            }
        }
        Ok(())
    }

    fn layer_override(&self, layer: usize) -> Option<&LayerOverride> {
        self.layer_overrides.iter().find(|o| o.layer == layer)
    }

    pub fn epsilon_w_for(&self, layer: usize) -> f64 {
        self.layer_override(layer).and_then(|o| o.epsilon_w).unwrap_or(self.epsilon_w)
    }

    pub fn r_for(&self, layer: usize) -> usize {
        self.layer_override(layer).and_then(|o| o.r).unwrap_or(self.r)
    }

    pub fn with_variant(&self, variant: InitVariant) -> Self {
        Self {
            variant,
            ..self.clone()
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunOptions {
    /// Evaluation threads; results do not depend on this.
    pub threads: usize,
    /// Never build `W_p` or `M` (every layer sees an empty unified subspace).
    pub disable_subspaces: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            threads: 1,
            disable_subspaces: false,
        }
    }
}

/// State after one stage.
#[derive(Clone, Debug, PartialEq)]
pub struct StageSnapshot {
    /// Merged model, no adapters attached.
    pub model: LinearModel,
    /// Trained factors per adapted layer; layers skipped this stage are absent.
    pub adapters: BTreeMap<usize, LoraFactors>,
    /// The same adapters as initialized, before any training step.
    pub initial_adapters: BTreeMap<usize, LoraFactors>,
    /// Unified subspace per adapted layer after this stage's extension.
    pub subspaces: BTreeMap<usize, UnifiedSubspace>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageRecord {
    pub task: String,
    /// Layers whose projected gradient was empty, so no adapter was trained.
    pub skipped_layers: Vec<usize>,
    /// Task directions appended per layer.
    pub added_directions: BTreeMap<usize, usize>,
    pub dropped_directions: BTreeMap<usize, usize>,
    pub steps: usize,
    /// Mean training loss over the final epoch (absent without training).
    pub final_loss: Option<f64>,
    pub wall_clock: Duration,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutcome {
    pub config: RunConfig,
    pub grid: AccuracyGrid,
    /// Test accuracy of the untouched model on every task.
    pub initial_eval: Vec<f64>,
    pub initial_model: LinearModel,
    pub initial_subspaces: BTreeMap<usize, UnifiedSubspace>,
    pub snapshots: Vec<StageSnapshot>,
    pub records: Vec<StageRecord>,
}

impl RunOutcome {
    /// Unified subspace in force before stage `stage` (0-based).
    pub fn subspaces_before(&self, stage: usize) -> &BTreeMap<usize, UnifiedSubspace> {
        if stage == 0 {
            &self.initial_subspaces
        } else {
            &self.snapshots[stage - 1].subspaces
        }
    }

    /// Merged model before stage `stage` (0-based).
    pub fn model_before(&self, stage: usize) -> &LinearModel {
        if stage == 0 {
            &self.initial_model
        } else {
            &self.snapshots[stage - 1].model
        }
    }
}

/// The untouched model a run starts from.
pub fn init_model(config: &RunConfig, stream: &TaskStream, model_spec: &ModelSpec) -> Result<LinearModel, ModelError> {
    let mut rng = rng_for(config.seed, "model");
    LinearModel::init(model_spec, stream.d_in(), stream.max_classes(), &mut rng)
}

/// Rank used by the vanilla variant so that `A` and `B` together train as
/// many parameters as a frozen-`A` adapter of rank `r`.
pub fn matched_vanilla_rank(r: usize, d_in: usize, d_out: usize) -> usize {
    let exact = (r * d_out) as f64 / (d_in + d_out) as f64;
    (exact.round() as usize).max(1)
}

/// Trainable parameters of one layer's adapter.
pub fn trainable_params(variant: InitVariant, r: usize, d_in: usize, d_out: usize) -> usize {
    if variant.trains_a() {
        matched_vanilla_rank(r, d_in, d_out) * (d_in + d_out)
    } else {
        r.min(d_in) * d_out
    }
}

struct AdamState {
    m: DenseMatrix,
    v: DenseMatrix,
}

impl AdamState {
    fn new(rows: usize, cols: usize) -> Self {
        Self {
            m: DenseMatrix::zeros(rows, cols),
            v: DenseMatrix::zeros(rows, cols),
        }
    }

    /// Decoupled decay acts on `param + offset`, the full parameter value.
    fn step(&mut self, param: &mut DenseMatrix, offset: Option<&DenseMatrix>, grad: &DenseMatrix, lr: f64, t: i32) {
        self.m = self.m.zip_map(grad, |m, g| ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * g);
        self.v = self.v.zip_map(grad, |v, g| ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * g * g);
        let c1 = 1.0 - ADAM_BETA1.powi(t);
        let c2 = 1.0 - ADAM_BETA2.powi(t);
        let update = self
            .m
            .zip_map(&self.v, |m, v| (m / c1) / ((v / c2).sqrt() + ADAM_EPS));
        let mut decayed = param.scale(1.0 - lr * ADAM_WEIGHT_DECAY);
        if let Some(o) = offset {
            decayed.axpy(-lr * ADAM_WEIGHT_DECAY, o);
        }
        *param = decayed;
        param.axpy(-lr, &update);
    }
}

struct LayerOptim {
    b: AdamState,
    a: Option<AdamState>,
}

/// Applies one optimizer step to every attached adapter given the gradients
/// with respect to the effective weights.
fn optimizer_step(
    model: &mut LinearModel,
    grads: &[DenseMatrix],
    cfg: &RunConfig,
    adam: &mut BTreeMap<usize, LayerOptim>,
    t: i32,
) {
    let layers: Vec<usize> = model.adapters().keys().copied().collect();
    for l in layers {
        let ad = model.adapter_mut(l).expect("adapter present");
        match cfg.optimizer {
            OptimizerKind::Sgd => ad.sgd_step(&grads[l], cfg.lr),
            OptimizerKind::AdaptiveDecoupled => {
                let gb = ad.grad_b(&grads[l]);
                let ga = ad.a_trainable().then(|| ad.grad_a(&grads[l]));
                let st = adam.entry(l).or_insert_with(|| LayerOptim {
                    b: AdamState::new(gb.rows(), gb.cols()),
                    a: ga.as_ref().map(|g| AdamState::new(g.rows(), g.cols())),
                });
                let (d, b0) = ad.b_parts_mut();
                st.b.step(d, Some(b0), &gb, cfg.lr, t);
                if let (Some(ga), Some(sa), Some(a)) = (ga, st.a.as_mut(), ad.a_mut()) {
                    sa.step(a, None, &ga, cfg.lr, t);
                }
            }
        }
    }
}

fn epoch_order(n: usize, rng: &mut crate::seed::Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}

fn evaluate_all(model: &LinearModel, stream: &TaskStream, pool: &rayon::ThreadPool) -> Result<Vec<f64>, ModelError> {
    pool.install(|| {
        stream
            .tasks
            .par_iter()
            .map(|t| model.accuracy(&t.test))
            .collect()
    })
}

/// Runs every task of `stream` in order and evaluates all tasks after each
/// stage. Deterministic for a given config and stream, at any thread count.
pub fn run_continual(
    config: &RunConfig,
    stream: &TaskStream,
    model_spec: &ModelSpec,
    opts: &RunOptions,
) -> Result<RunOutcome, TrainError> {
    config.validate()?;
    if stream.is_empty() {
        return Err(TrainError::EmptyStream);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.threads.max(1))
        .build()
        .map_err(|e| TrainError::ThreadPool(e.to_string()))?;

    let mut model = init_model(config, stream, model_spec)?;
    let initial_model = model.clone();
    let adapted: Vec<usize> = model.adapted_layers().collect();
    if let Some(o) = config.layer_overrides.iter().find(|o| !adapted.contains(&o.layer)) {
        return Err(TrainError::Config {
            field: "layer_override",
            msg: format!("layer {} is not adapted", o.layer),
        });
    }

    let mut subspaces = BTreeMap::new();
    for &l in &adapted {
        let w = &model.layers()[l].weight;
        let u = if opts.disable_subspaces {
            UnifiedSubspace::new(PrincipalSubspace::none(w.rows()))
        } else {
            UnifiedSubspace::from_weight(w, config.epsilon_w_for(l))?
        };
        subspaces.insert(l, u);
    }
    let initial_subspaces = subspaces.clone();
    let initial_eval = evaluate_all(&model, stream, &pool)?;

    let n = stream.len();
    let mut grid = AccuracyGrid::new(n);
    let mut snapshots = Vec::with_capacity(n);
    let mut records = Vec::with_capacity(n);
    for (stage, task) in stream.tasks.iter().enumerate() {
        let started = Instant::now();
        let wrap = |e: TrainError| TrainError::Stage {
            stage: stage + 1,
            task: task.name.clone(),
            source: Box::new(e),
        };
        let (mut record, initial_adapters) = run_stage(config, &mut model, &subspaces, stage, task)
            .map_err(|e| match e {
                e @ TrainError::NonFinite { .. } => e,
                e => wrap(e),
            })?;
        let adapters = model
            .merge_adapters()
            .into_iter()
            .map(|(l, ad)| (l, ad.factors()))
            .collect();

        if config.variant.uses_task_directions() && !opts.disable_subspaces {
            for &l in &adapted {
                let x = model
                    .collect_layer_inputs(&task.train, l, config.feature_sample_size)
                    .map_err(|e| wrap(e.into()))?;
                let u = subspaces.get_mut(&l).expect("subspace per adapted layer");
                let upd = u.extract_task_directions(&x, config.epsilon_f).map_err(|e| wrap(e.into()))?;
                let rep = u.append_task_directions(&upd.directions).map_err(|e| wrap(e.into()))?;
                record.added_directions.insert(l, rep.added);
                record.dropped_directions.insert(l, upd.dropped + rep.dropped);
            }
        }

        let row = evaluate_all(&model, stream, &pool).map_err(|e| wrap(e.into()))?;
        for (t, acc) in row.into_iter().enumerate() {
            grid.set(stage, t, acc);
        }
        record.wall_clock = started.elapsed();
        log::info!(
            "stage {}/{} {}: {} steps, acc {:.4}",
            stage + 1,
            n,
            task.name,
            record.steps,
            grid.at(stage, stage)
        );
        snapshots.push(StageSnapshot {
            model: model.clone(),
            adapters,
            initial_adapters,
            subspaces: subspaces.clone(),
        });
        records.push(record);
    }

    Ok(RunOutcome {
        config: config.clone(),
        grid,
        initial_eval,
        initial_model,
        initial_subspaces,
        snapshots,
        records,
    })
}

/// Init, shift and train for one task; leaves the adapters attached.
fn run_stage(
    config: &RunConfig,
    model: &mut LinearModel,
    subspaces: &BTreeMap<usize, UnifiedSubspace>,
    stage: usize,
    task: &crate::tasks::Task,
) -> Result<(StageRecord, BTreeMap<usize, LoraFactors>), TrainError> {
    let train = &task.train;
    let bs = config.batch_size.min(train.len());
    let mut shuffle = rng_for(config.seed, &format!("batches/{}", task.name));
    let mut order = epoch_order(train.len(), &mut shuffle);

    let batches = |order: &[usize]| -> Vec<Batch> { order.chunks(bs).map(|c| train.select(c)).collect() };

    // init gradient at the pre-task weights
    let first = batches(&order);
    let k = config.grad_init_batches.min(first.len());
    let mut g_sum: BTreeMap<usize, DenseMatrix> = BTreeMap::new();
    for b in &first[..k] {
        let lg = model.loss_and_grads(b)?;
        for (l, g) in lg.grads {
            match g_sum.get_mut(&l) {
                Some(acc) => *acc = acc.add(&g),
                None => {
                    g_sum.insert(l, g);
                }
            }
        }
    }

    let mut skipped = Vec::new();
    for (l, g) in &g_sum {
        let g = g.scale(1.0 / k as f64);
        let w = &model.layers()[*l].weight;
        let (d_in, d_out) = w.shape();
        let rank = if config.variant.trains_a() {
            matched_vanilla_rank(config.r_for(*l), d_in, d_out)
        } else {
            config.r_for(*l)
        };
        let acfg = AdapterConfig {
            rank,
            alpha: config.alpha,
            variant: config.variant,
            vanilla_std: 1.0 / (d_in as f64).sqrt(),
        };
        let mut rng = rng_for(config.seed, &format!("adapter/{}/{}", task.name, l));
        match init_from_gradient(&g, &subspaces[l], &acfg, &mut rng) {
            Ok(f) => model.attach_adapter(*l, f)?,
            Err(AdapterError::GradientFullyProjected) => skipped.push(*l),
            Err(e) => return Err(e.into()),
        }
    }

    let initial = model
        .adapters()
        .iter()
        .map(|(&l, ad)| (l, ad.factors()))
        .collect();

    let mut adam = BTreeMap::new();
    let mut steps = 0usize;
    let mut final_loss = None;
    for epoch in 0..config.epochs_per_task {
        if epoch > 0 {
            order = epoch_order(train.len(), &mut shuffle);
        }
        let mut loss_sum = 0.0;
        let mut count = 0usize;
        for (i, b) in batches(&order).iter().enumerate() {
            let full = model.full_gradients(b)?;
            if !full.loss.is_finite() {
                return Err(TrainError::NonFinite {
                    stage: stage + 1,
                    task: task.name.clone(),
                    epoch,
                    step: i,
                });
            }
            loss_sum += full.loss;
            count += 1;
            steps += 1;
            optimizer_step(model, &full.weights, config, &mut adam, steps as i32);
        }
        final_loss = Some(loss_sum / count as f64);
    }

    let record = StageRecord {
        task: task.name.clone(),
        skipped_layers: skipped,
        added_directions: BTreeMap::new(),
        dropped_directions: BTreeMap::new(),
        steps,
        final_loss,
        wall_clock: Duration::ZERO,
    };
    Ok((record, initial))
}

/// One row of the ablation table; deltas are against the vanilla row.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: InitVariant,
    pub transfer: Option<f64>,
    pub average: f64,
    pub last: f64,
    pub backward_forgetting: Option<f64>,
    pub delta_transfer: Option<f64>,
    pub delta_average: f64,
    pub delta_last: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationLadder {
    /// One run per variant, in [`InitVariant::ALL`] order.
    pub runs: Vec<(InitVariant, RunOutcome)>,
}

impl AblationLadder {
    pub fn grid(&self, variant: InitVariant) -> Option<&AccuracyGrid> {
        self.runs.iter().find(|(v, _)| *v == variant).map(|(_, r)| &r.grid)
    }

    pub fn rows(&self) -> Result<Vec<AblationRow>, MetricsError> {
        let reports = self
            .runs
            .iter()
            .map(|(v, r)| Ok((*v, compute_metrics(&r.grid)?, backward_forgetting(&r.grid))))
            .collect::<Result<Vec<_>, MetricsError>>()?;
        let base = reports
            .iter()
            .find(|(v, _, _)| *v == InitVariant::VanillaLora)
            .map(|(_, r, _)| r.clone());
        Ok(reports
            .into_iter()
            .map(|(variant, r, bf)| {
                let (dt, da, dl) = match &base {
                    Some(b) => (
                        r.transfer.zip(b.transfer).map(|(x, y)| x - y),
                        r.average - b.average,
                        r.last - b.last,
                    ),
                    None => (None, 0.0, 0.0),
                };
                AblationRow {
                    variant,
                    transfer: r.transfer,
                    average: r.average,
                    last: r.last,
                    backward_forgetting: bf,
                    delta_transfer: dt,
                    delta_average: da,
                    delta_last: dl,
                }
            })
            .collect())
    }
}

/// Runs all six variants with identical seeds and data.
pub fn run_ablation_ladder(
    config: &RunConfig,
    stream: &TaskStream,
    model_spec: &ModelSpec,
    opts: &RunOptions,
) -> Result<AblationLadder, TrainError> {
    let runs = InitVariant::ALL
        .into_iter()
        .map(|v| Ok((v, run_continual(&config.with_variant(v), stream, model_spec, opts)?)))
        .collect::<Result<Vec<_>, TrainError>>()?;
    Ok(AblationLadder { runs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::{gen_gaussian_tasks, GaussianStreamSpec};

    fn small_stream(n_tasks: usize) -> TaskStream {
        let spec = GaussianStreamSpec {
            n_tasks,
            d_in: 12,
            classes_per_task: 3,
            samples_per_class: 20,
            ..GaussianStreamSpec::default()
        };
        gen_gaussian_tasks(5, &spec).unwrap()
    }

    fn small_model() -> ModelSpec {
        ModelSpec {
            hidden: vec![16, 16],
            ..ModelSpec::default()
        }
    }

    fn cfg() -> RunConfig {
        RunConfig {
            r: 4,
            alpha: 4.0,
            lr: 0.05,
            batch_size: 16,
            epochs_per_task: 2,
            ..RunConfig::default()
        }
    }

    #[test]
    fn validation_names_the_field() {
        let mut c = cfg();
        c.epsilon_w = 1.0;
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("epsilon_w"), "{err}");
        let mut c = cfg();
        c.batch_size = 0;
        assert!(c.validate().unwrap_err().to_string().contains("batch_size"));
    }

    #[test]
    fn grid_is_full_and_deterministic() {
        let s = small_stream(3);
        let a = run_continual(&cfg(), &s, &small_model(), &RunOptions::default()).unwrap();
        let b = run_continual(&cfg(), &s, &small_model(), &RunOptions { threads: 3, ..Default::default() }).unwrap();
        assert!(a.grid.missing().is_empty());
        assert_eq!(a.grid, b.grid);
        assert_eq!(a.snapshots, b.snapshots);
    }

    #[test]
    fn zero_epochs_keep_initial_accuracy() {
        let s = small_stream(3);
        let c = RunConfig {
            epochs_per_task: 0,
            ..cfg()
        };
        let out = run_continual(&c, &s, &small_model(), &RunOptions::default()).unwrap();
        for i in 0..3 {
            assert_eq!(out.grid.row(i), out.initial_eval.iter().map(|&a| Some(a)).collect::<Vec<_>>());
        }
    }

    #[test]
    fn matched_rank() {
        assert_eq!(matched_vanilla_rank(8, 64, 64), 4);
        assert_eq!(matched_vanilla_rank(8, 32, 64), 5);
        assert_eq!(matched_vanilla_rank(1, 100, 1), 1);
    }

    #[test]
    fn adam_moves_against_gradient() {
        let mut p = DenseMatrix::from_rows(&[vec![1.0, -1.0]]);
        let g = DenseMatrix::from_rows(&[vec![0.5, -0.5]]);
        let mut st = AdamState::new(1, 2);
        st.step(&mut p, None, &g, 0.1, 1);
        assert!(p.get(0, 0) < 1.0 && p.get(0, 1) > -1.0);
    }

    #[test]
    fn adam_decay_sees_the_offset() {
        // same parameter split as 0 + offset or stored whole
        let g = DenseMatrix::from_rows(&[vec![0.5, -0.25]]);
        let b0 = DenseMatrix::from_rows(&[vec![2.0, 3.0]]);
        let mut whole = b0.clone();
        let mut d = DenseMatrix::zeros(1, 2);
        let (mut s1, mut s2) = (AdamState::new(1, 2), AdamState::new(1, 2));
        s1.step(&mut whole, None, &g, 0.1, 1);
        s2.step(&mut d, Some(&b0), &g, 0.1, 1);
        assert!(whole.max_abs_diff(&b0.add(&d)) < 1e-15);
    }
}
