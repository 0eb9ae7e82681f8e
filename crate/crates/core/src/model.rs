//! A stack of dense layers `h ↦ act(h·W + b)` with a softmax cross-entropy
//! head and hand-derived gradients.
//!
//! Inputs are row-major (`n × d_in`, one sample per row), matching the
//! `y = x·W` convention, so every weight is `d_in × d_out`.

use std::borrow::Cow;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapter::{AdapterError, KeepLoraAdapter, LoraFactors};
use crate::linalg::{DenseMatrix, LinalgError};
use crate::seed::{gaussian_matrix, Rng};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("label {label} at row {row} is outside [0, {classes})")]
    Label {
        row: usize,
        label: usize,
        classes: usize,
    },
    #[error("batch is empty")]
    EmptyBatch,
    #[error("layer {0} does not carry an adapter")]
    NotAdapted(usize),
    #[error("layer index {0} is out of range")]
    NoSuchLayer(usize),
    #[error("the final layer must have no activation")]
    FinalActivation,
    #[error(transparent)]
    Adapter(#[from] AdapterError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    None,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::None => z,
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `h`.
    fn derivative(self, z: f64, h: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - h * h,
            Activation::None => 1.0,
        }
    }

    pub fn code(self) -> f64 {
        match self {
            Activation::None => 0.0,
            Activation::Relu => 1.0,
            Activation::Tanh => 2.0,
        }
    }

    pub fn from_code(code: f64) -> Option<Self> {
        match code as i64 {
            0 => Some(Activation::None),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Tanh),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weight: DenseMatrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

/// Inputs (`n × d_in`) with labels in `[0, classes)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    inputs: DenseMatrix,
    labels: Vec<usize>,
    classes: usize,
}

impl Batch {
    pub fn new(inputs: DenseMatrix, labels: Vec<usize>, classes: usize) -> Result<Self, ModelError> {
        if inputs.rows() == 0 {
            return Err(ModelError::EmptyBatch);
        }
        if inputs.rows() != labels.len() {
            return Err(ModelError::Shape(format!(
                "{} input rows but {} labels",
                inputs.rows(),
                labels.len()
            )));
        }
        if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
            return Err(ModelError::Label {
                row,
                label,
                classes,
            });
        }
        Ok(Self {
            inputs,
            labels,
            classes,
        })
    }

    pub fn inputs(&self) -> &DenseMatrix {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Sub-batch with the listed rows, in order.
    pub fn select(&self, idx: &[usize]) -> Batch {
        Batch {
            inputs: self.inputs.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        }
    }
}

/// Loss and the gradients with respect to each adapted layer's effective weight.
#[derive(Clone, Debug)]
pub struct LossAndGrads {
    pub loss: f64,
    pub grads: BTreeMap<usize, DenseMatrix>,
}

/// Gradients of every layer's weight and bias.
#[derive(Clone, Debug)]
pub struct FullGradients {
    pub loss: f64,
    pub weights: Vec<DenseMatrix>,
    pub biases: Vec<Vec<f64>>,
}

/// Per-layer values of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    /// `inputs[l]` is the input of layer `l`; the last entry is the logits.
    pub inputs: Vec<DenseMatrix>,
    pub pre_activations: Vec<DenseMatrix>,
}

impl ForwardTrace {
    pub fn logits(&self) -> &DenseMatrix {
        self.inputs.last().expect("trace has at least the input")
    }
}

/// Architecture declaration; `d_in` and the class count come from the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub adapted_layers: Vec<usize>,
    /// Weights are drawn `N(0, init_gain² / d_in)`.
    #[serde(default = "default_gain")]
    pub init_gain: f64,
    #[serde(default = "default_bias_std")]
    pub bias_std: f64,
}

fn default_gain() -> f64 {
    1.0
}

fn default_bias_std() -> f64 {
    0.1
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            activation: Activation::Tanh,
            adapted_layers: vec![0, 1],
            init_gain: default_gain(),
            bias_std: default_bias_std(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel {
    layers: Vec<Layer>,
    adapted: BTreeSet<usize>,
    adapters: BTreeMap<usize, KeepLoraAdapter>,
}

impl LinearModel {
    pub fn new(layers: Vec<Layer>, adapted_layers: &[usize]) -> Result<Self, ModelError> {
        if layers.is_empty() {
            return Err(ModelError::Shape("model has no layers".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].weight.cols() != pair[1].weight.rows() {
                return Err(ModelError::Shape(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].weight.cols(),
                    i + 1,
                    pair[1].weight.rows()
                )));
            }
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.weight.cols() {
                return Err(ModelError::Shape(format!(
                    "layer {i} bias has {} entries, weight has {} outputs",
                    l.bias.len(),
                    l.weight.cols()
                )));
            }
        }
        if layers.last().map(|l| l.activation) != Some(Activation::None) {
            return Err(ModelError::FinalActivation);
        }
        if let Some(&bad) = adapted_layers.iter().find(|&&i| i >= layers.len()) {
            return Err(ModelError::NoSuchLayer(bad));
        }
        Ok(Self {
            layers,
            adapted: adapted_layers.iter().copied().collect(),
            adapters: BTreeMap::new(),
        })
    }

    /// Random initialization: `d_in → hidden… → classes`.
    pub fn init(spec: &ModelSpec, d_in: usize, classes: usize, rng: &mut Rng) -> Result<Self, ModelError> {
        let mut dims = vec![d_in];
        dims.extend(&spec.hidden);
        dims.push(classes);
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|l| {
                let std = spec.init_gain / (dims[l] as f64).sqrt();
                let weight = gaussian_matrix(rng, dims[l], dims[l + 1], std);
                let bias = gaussian_matrix(rng, 1, dims[l + 1], spec.bias_std).into_data();
                Layer {
                    weight,
                    bias,
                    activation: if l + 1 == n {
                        Activation::None
                    } else {
                        spec.activation
                    },
                }
            })
            .collect();
        Self::new(layers, &spec.adapted_layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weight.cols())
    }

    pub fn adapted_layers(&self) -> impl Iterator<Item = usize> + '_ {
        self.adapted.iter().copied()
    }

    pub fn is_adapted(&self, layer: usize) -> bool {
        self.adapted.contains(&layer)
    }

    /// Weight used by the forward pass: the adapter's effective weight when
    /// one is attached, otherwise the stored weight.
    pub fn effective_weight(&self, layer: usize) -> Cow<'_, DenseMatrix> {
        match self.adapters.get(&layer) {
            Some(ad) => Cow::Owned(ad.effective_weight()),
            None => Cow::Borrowed(&self.layers[layer].weight),
        }
    }

    pub fn set_weight(&mut self, layer: usize, w: DenseMatrix) -> Result<(), ModelError> {
        let cur = &self.layers.get(layer).ok_or(ModelError::NoSuchLayer(layer))?.weight;
        if cur.shape() != w.shape() {
            return Err(ModelError::Shape(format!(
                "layer {layer} weight is {:?}, got {:?}",
                cur.shape(),
                w.shape()
            )));
        }
        self.adapters.remove(&layer);
        self.layers[layer].weight = w;
        Ok(())
    }

    pub fn set_bias(&mut self, layer: usize, bias: Vec<f64>) -> Result<(), ModelError> {
        let cur = &mut self.layers.get_mut(layer).ok_or(ModelError::NoSuchLayer(layer))?.bias;
        if cur.len() != bias.len() {
            return Err(ModelError::Shape(format!("layer {layer} bias length")));
        }
        *cur = bias;
        Ok(())
    }

    pub fn adapter(&self, layer: usize) -> Option<&KeepLoraAdapter> {
        self.adapters.get(&layer)
    }

    pub fn adapter_mut(&mut self, layer: usize) -> Option<&mut KeepLoraAdapter> {
        self.adapters.get_mut(&layer)
    }

    pub fn adapters(&self) -> &BTreeMap<usize, KeepLoraAdapter> {
        &self.adapters
    }

    /// Shifts the layer's current weight and attaches the adapter.
    pub fn attach_adapter(&mut self, layer: usize, factors: LoraFactors) -> Result<(), ModelError> {
        if !self.is_adapted(layer) {
            return Err(ModelError::NotAdapted(layer));
        }
        let w = self.effective_weight(layer).into_owned();
        let ad = KeepLoraAdapter::shift_base(&w, factors)?;
        self.adapters.insert(layer, ad);
        Ok(())
    }

    /// Merges every attached adapter into its layer and returns them.
    pub fn merge_adapters(&mut self) -> BTreeMap<usize, KeepLoraAdapter> {
        let adapters = std::mem::take(&mut self.adapters);
        for (&l, ad) in &adapters {
            self.layers[l].weight = ad.merge();
        }
        adapters
    }

    fn check_input(&self, inputs: &DenseMatrix) -> Result<(), ModelError> {
        if inputs.cols() != self.input_dim() {
            return Err(ModelError::Shape(format!(
                "input width {} does not match model input {}",
                inputs.cols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub fn forward_trace(&self, inputs: &DenseMatrix) -> Result<ForwardTrace, ModelError> {
        self.check_input(inputs)?;
        let mut acts = vec![inputs.clone()];
        let mut pres = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let w = self.effective_weight(l);
            let mut z = acts[l].matmul(&w);
            for i in 0..z.rows() {
                for (v, b) in z.row_mut(i).iter_mut().zip(&layer.bias) {
                    *v += b;
                }
            }
            let h = z.map(|v| layer.activation.apply(v));
            pres.push(z);
            acts.push(h);
        }
        Ok(ForwardTrace {
            inputs: acts,
            pre_activations: pres,
        })
    }

    /// Logits, `n × output_dim`.
    pub fn forward(&self, inputs: &DenseMatrix) -> Result<DenseMatrix, ModelError> {
        let mut trace = self.forward_trace(inputs)?;
        Ok(trace.inputs.pop().expect("trace ends with the logits"))
    }

    /// Inputs of layer `layer` only (stops the pass early).
    pub fn layer_inputs(&self, inputs: &DenseMatrix, layer: usize) -> Result<DenseMatrix, ModelError> {
        if layer >= self.layers.len() {
            return Err(ModelError::NoSuchLayer(layer));
        }
        self.check_input(inputs)?;
        let mut h = inputs.clone();
        for l in 0..layer {
            let w = self.effective_weight(l);
            let layer = &self.layers[l];
            let mut z = h.matmul(&w);
            for i in 0..z.rows() {
                for (v, b) in z.row_mut(i).iter_mut().zip(&layer.bias) {
                    *v = layer.activation.apply(*v + b);
                }
            }
            h = z;
        }
        Ok(h)
    }

    /// Mean softmax cross-entropy over the first `batch.classes()` logits,
    /// with gradients for every layer (with respect to effective weights).
    pub fn full_gradients(&self, batch: &Batch) -> Result<FullGradients, ModelError> {
        if batch.classes() > self.output_dim() {
            return Err(ModelError::Shape(format!(
                "batch has {} classes, model emits {} logits",
                batch.classes(),
                self.output_dim()
            )));
        }
        let trace = self.forward_trace(batch.inputs())?;
        let n = batch.len();
        let logits = trace.logits();
        let classes = batch.classes();
        let mut delta = DenseMatrix::zeros(n, self.output_dim());
        let mut loss = 0.0;
        for i in 0..n {
            let row = &logits.row(i)[..classes];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|z| (z - max).exp()).sum();
            let log_z = max + sum.ln();
            let y = batch.labels()[i];
            loss += log_z - row[y];
            let d = delta.row_mut(i);
            for c in 0..classes {
                let p = (row[c] - log_z).exp();
                d[c] = (p - if c == y { 1.0 } else { 0.0 }) / n as f64;
            }
        }
        loss /= n as f64;

        let nl = self.layers.len();
        let mut weights = vec![DenseMatrix::zeros(0, 0); nl];
        let mut biases = vec![Vec::new(); nl];
        // delta holds ∂L/∂z for the current layer
        for l in (0..nl).rev() {
            weights[l] = trace.inputs[l].t_matmul(&delta);
            biases[l] = (0..delta.cols())
                .map(|j| (0..n).map(|i| delta.get(i, j)).sum())
                .collect();
            if l == 0 {
                break;
            }
            let w = self.effective_weight(l);
            let upstream = delta.matmul_t(&w);
            let prev = &self.layers[l - 1];
            let z = &trace.pre_activations[l - 1];
            let h = &trace.inputs[l];
            delta = DenseMatrix::from_fn(n, upstream.cols(), |i, j| {
                upstream.get(i, j) * prev.activation.derivative(z.get(i, j), h.get(i, j))
            });
        }
        Ok(FullGradients {
            loss,
            weights,
            biases,
        })
    }

    pub fn loss_and_grads(&self, batch: &Batch) -> Result<LossAndGrads, ModelError> {
        let full = self.full_gradients(batch)?;
        let grads = full
            .weights
            .into_iter()
            .enumerate()
            .filter(|(l, _)| self.adapted.contains(l))
            .collect();
        Ok(LossAndGrads {
            loss: full.loss,
            grads,
        })
    }

    pub fn loss(&self, batch: &Batch) -> Result<f64, ModelError> {
        let logits = self.forward(batch.inputs())?;
        Ok(mean_cross_entropy(&logits, batch.labels(), batch.classes()))
    }

    /// Layer inputs for the first `max_samples` rows, transposed to
    /// `d_in × n` (one column per sample).
    pub fn collect_layer_inputs(
        &self,
        dataset: &Batch,
        layer: usize,
        max_samples: usize,
    ) -> Result<DenseMatrix, ModelError> {
        if !self.is_adapted(layer) {
            return Err(ModelError::NotAdapted(layer));
        }
        if dataset.is_empty() || max_samples == 0 {
            return Err(ModelError::EmptyBatch);
        }
        let n = dataset.len().min(max_samples);
        let rows = dataset.inputs().row_range(0, n);
        Ok(self.layer_inputs(&rows, layer)?.transpose())
    }

    /// Fraction of rows whose argmax over the first `classes` logits hits
    /// the label (ties go to the lower class index).
    pub fn accuracy(&self, batch: &Batch) -> Result<f64, ModelError> {
        let logits = self.forward(batch.inputs())?;
        Ok(accuracy_from_logits(&logits, batch.labels(), batch.classes()))
    }
}

pub fn accuracy_from_logits(logits: &DenseMatrix, labels: &[usize], classes: usize) -> f64 {
    let hits = labels
        .iter()
        .enumerate()
        .filter(|(i, &y)| argmax(&logits.row(*i)[..classes]) == y)
        .count();
    hits as f64 / labels.len() as f64
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn mean_cross_entropy(logits: &DenseMatrix, labels: &[usize], classes: usize) -> f64 {
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = &logits.row(i)[..classes];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|z| (z - max).exp()).sum();
        loss += max + sum.ln() - row[y];
    }
    loss / labels.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(w: DenseMatrix, bias: Vec<f64>) -> LinearModel {
        LinearModel::new(
            vec![Layer {
                weight: w,
                bias,
                activation: Activation::None,
            }],
            &[0],
        )
        .unwrap()
    }

    #[test]
    fn identity_layer_passes_inputs_through() {
        let m = single(DenseMatrix::identity(3), vec![0.0; 3]);
        let x = DenseMatrix::from_rows(&[[1.0, -2.0, 0.5], [0.0, 3.0, 1.0]]);
        assert_eq!(m.forward(&x).unwrap(), x);
    }

    #[test]
    fn zero_input_zero_bias_gives_zero_logits() {
        let w = DenseMatrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        let m = single(w, vec![0.0; 2]);
        assert_eq!(m.forward(&DenseMatrix::zeros(4, 2)).unwrap(), DenseMatrix::zeros(4, 2));
    }

    #[test]
    fn uniform_logits_give_log_c() {
        let m = single(DenseMatrix::zeros(2, 5), vec![0.0; 5]);
        let b = Batch::new(DenseMatrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]), vec![0, 3], 5).unwrap();
        let lg = m.loss_and_grads(&b).unwrap();
        assert!((lg.loss - 5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn softmax_regression_closed_form() {
        // zero weights: p = 1/2 for both classes, grad = xᵀ(p − onehot)/n
        let m = single(DenseMatrix::zeros(2, 2), vec![0.0; 2]);
        let x = DenseMatrix::from_rows(&[[1.0, 2.0], [-1.0, 0.5]]);
        let b = Batch::new(x, vec![0, 1], 2).unwrap();
        let g = &m.loss_and_grads(&b).unwrap().grads[&0];
        let expected = DenseMatrix::from_rows(&[[-0.5, 0.5], [-0.375, 0.375]]);
        assert!(g.max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn layer_zero_inputs_are_raw_inputs_transposed() {
        let m = single(DenseMatrix::identity(2), vec![0.0; 2]);
        let x = DenseMatrix::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]);
        let b = Batch::new(x.clone(), vec![0, 1, 0], 2).unwrap();
        assert_eq!(m.collect_layer_inputs(&b, 0, 100).unwrap(), x.transpose());
        assert_eq!(m.collect_layer_inputs(&b, 0, 2).unwrap().cols(), 2);
    }

    #[test]
    fn validation_errors() {
        let bad_chain = vec![
            Layer {
                weight: DenseMatrix::zeros(2, 3),
                bias: vec![0.0; 3],
                activation: Activation::Tanh,
            },
            Layer {
                weight: DenseMatrix::zeros(4, 2),
                bias: vec![0.0; 2],
                activation: Activation::None,
            },
        ];
        assert!(matches!(LinearModel::new(bad_chain, &[]), Err(ModelError::Shape(_))));
        let bad_final = vec![Layer {
            weight: DenseMatrix::zeros(2, 2),
            bias: vec![0.0; 2],
            activation: Activation::Relu,
        }];
        assert_eq!(LinearModel::new(bad_final, &[]), Err(ModelError::FinalActivation));
        assert!(matches!(
            Batch::new(DenseMatrix::zeros(1, 2), vec![2], 2),
            Err(ModelError::Label { row: 0, label: 2, classes: 2 })
        ));
        let m = single(DenseMatrix::identity(2), vec![0.0; 2]);
        assert!(matches!(m.forward(&DenseMatrix::zeros(1, 3)), Err(ModelError::Shape(_))));
    }
}
