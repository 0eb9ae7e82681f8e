//! Binary checkpoint format.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! "KLRA"  u32 version  u32 count
//! count × { u32 name_len, name (UTF-8), u32 rows, u32 cols, rows·cols f64 }
//! ```
//!
//! Scalars are stored as 1×1 matrices.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use crate::adapter::{InitVariant, LoraFactors};
use crate::linalg::{DenseMatrix, OrthonormalBasis};
use crate::model::{Activation, Layer, LinearModel};
use crate::subspace::{PrincipalSubspace, TaskDirections, UnifiedSubspace};
use crate::trainer::{RunConfig, StageSnapshot};

pub const MAGIC: &[u8; 4] = b"KLRA";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    Magic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint truncated at byte {0}")]
    Truncated(usize),
    #[error("entry name is not UTF-8")]
    Name,
    #[error("duplicate entry `{0}`")]
    Duplicate(String),
    #[error("missing entry `{0}`")]
    Missing(String),
    #[error("entry `{name}`: {msg}")]
    Invalid { name: String, msg: String },
    #[error("{0} trailing bytes")]
    Trailing(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Named matrices in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    entries: Vec<(String, DenseMatrix)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, m: DenseMatrix) {
        self.entries.push((name.into(), m));
    }

    pub fn push_scalar(&mut self, name: impl Into<String>, v: f64) {
        self.push(name, DenseMatrix::from_rows(&[vec![v]]));
    }

    pub fn entries(&self) -> &[(String, DenseMatrix)] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&DenseMatrix> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    fn require(&self, name: &str) -> Result<&DenseMatrix, CheckpointError> {
        self.get(name).ok_or_else(|| CheckpointError::Missing(name.to_string()))
    }

    fn scalar(&self, name: &str) -> Result<f64, CheckpointError> {
        let m = self.require(name)?;
        if m.shape() != (1, 1) {
            return Err(CheckpointError::Invalid {
                name: name.to_string(),
                msg: format!("expected 1x1, found {}x{}", m.rows(), m.cols()),
            });
        }
        Ok(m.get(0, 0))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, m) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
            out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
            for v in m.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(CheckpointError::Magic);
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let count = r.u32()?;
        let mut ck = Checkpoint::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| CheckpointError::Name)?
                .to_string();
            if ck.get(&name).is_some() {
                return Err(CheckpointError::Duplicate(name));
            }
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let raw = r.take(rows * cols * 8)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            let m = DenseMatrix::new(rows, cols, data).map_err(|e| CheckpointError::Invalid {
                name: name.clone(),
                msg: e.to_string(),
            })?;
            ck.push(name, m);
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::Trailing(bytes.len() - r.pos));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        super::output::write_atomic(path, &self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(CheckpointError::Truncated(self.bytes.len()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

fn variant_code(v: InitVariant) -> f64 {
    InitVariant::ALL.iter().position(|&x| x == v).expect("listed") as f64
}

fn variant_from_code(code: f64) -> Option<InitVariant> {
    InitVariant::ALL.get(code as usize).copied().filter(|_| code.fract() == 0.0 && code >= 0.0)
}

fn row_vector(v: &[f64]) -> DenseMatrix {
    DenseMatrix::new(1, v.len(), v.to_vec()).expect("finite row")
}

/// Everything needed to rebuild a stage: every layer's weight, bias and
/// activation, plus `W_p`, `M`, `A`, `B`, `α` and `r` for adapted layers.
pub fn stage_checkpoint(snapshot: &StageSnapshot, config: &RunConfig) -> Checkpoint {
    let mut ck = Checkpoint::new();
    ck.push_scalar("epsilon_w", config.epsilon_w);
    ck.push_scalar("epsilon_f", config.epsilon_f);
    ck.push_scalar("variant", variant_code(config.variant));
    let model = &snapshot.model;
    ck.push_scalar("num_layers", model.num_layers() as f64);
    ck.push(
        "adapted_layers",
        row_vector(&model.adapted_layers().map(|l| l as f64).collect::<Vec<_>>()),
    );
    for (l, layer) in model.layers().iter().enumerate() {
        ck.push(format!("layer{l}.W"), layer.weight.clone());
        ck.push(format!("layer{l}.bias"), row_vector(&layer.bias));
        ck.push_scalar(format!("layer{l}.activation"), layer.activation.code());
    }
    for (l, u) in &snapshot.subspaces {
        ck.push(format!("layer{l}.W_p"), u.principal.basis.matrix().clone());
        ck.push_scalar(format!("layer{l}.W_p_energy"), u.principal.retained_energy_fraction);
        ck.push(format!("layer{l}.M"), u.task_dirs.basis.matrix().clone());
        let counts: Vec<f64> = u.task_dirs.per_task_counts.iter().map(|&c| c as f64).collect();
        ck.push(format!("layer{l}.M_counts"), row_vector(&counts));
    }
    for (l, f) in &snapshot.adapters {
        ck.push(format!("layer{l}.A"), f.a.clone());
        ck.push(format!("layer{l}.B"), f.b.clone());
        ck.push_scalar(format!("layer{l}.alpha"), f.alpha);
        ck.push_scalar(format!("layer{l}.r"), f.rank as f64);
    }
    for (l, f) in &snapshot.initial_adapters {
        ck.push(format!("layer{l}.A0"), f.a.clone());
        ck.push(format!("layer{l}.B0"), f.b.clone());
    }
    ck
}

fn invalid(name: &str, msg: impl Into<String>) -> CheckpointError {
    CheckpointError::Invalid {
        name: name.to_string(),
        msg: msg.into(),
    }
}

/// Inverse of [`stage_checkpoint`].
pub fn snapshot_from_checkpoint(ck: &Checkpoint) -> Result<StageSnapshot, CheckpointError> {
    let n = ck.scalar("num_layers")? as usize;
    let variant =
        variant_from_code(ck.scalar("variant")?).ok_or_else(|| invalid("variant", "unknown variant code"))?;
    let adapted: Vec<usize> = ck.require("adapted_layers")?.data().iter().map(|&v| v as usize).collect();
    let mut layers = Vec::with_capacity(n);
    for l in 0..n {
        let act_name = format!("layer{l}.activation");
        layers.push(Layer {
            weight: ck.require(&format!("layer{l}.W"))?.clone(),
            bias: ck.require(&format!("layer{l}.bias"))?.data().to_vec(),
            activation: Activation::from_code(ck.scalar(&act_name)?)
                .ok_or_else(|| invalid(&act_name, "unknown activation code"))?,
        });
    }
    let model = LinearModel::new(layers, &adapted).map_err(|e| invalid("model", e.to_string()))?;

    let mut subspaces = BTreeMap::new();
    let mut adapters = BTreeMap::new();
    let mut initial_adapters = BTreeMap::new();
    for &l in &adapted {
        let wp_name = format!("layer{l}.W_p");
        if let Some(wp) = ck.get(&wp_name) {
            let basis = |name: &str, m: &DenseMatrix| {
                OrthonormalBasis::new(m.clone()).map_err(|e| invalid(name, e.to_string()))
            };
            let m_name = format!("layer{l}.M");
            let principal = PrincipalSubspace {
                basis: basis(&wp_name, wp)?,
                retained_energy_fraction: ck.scalar(&format!("layer{l}.W_p_energy"))?,
            };
            let task_dirs = TaskDirections {
                basis: basis(&m_name, ck.require(&m_name)?)?,
                per_task_counts: ck
                    .require(&format!("layer{l}.M_counts"))?
                    .data()
                    .iter()
                    .map(|&c| c as usize)
                    .collect(),
            };
            subspaces.insert(l, UnifiedSubspace { principal, task_dirs });
        }
        if let Some(a) = ck.get(&format!("layer{l}.A")) {
            let f = LoraFactors {
                a: a.clone(),
                b: ck.require(&format!("layer{l}.B"))?.clone(),
                alpha: ck.scalar(&format!("layer{l}.alpha"))?,
                rank: ck.scalar(&format!("layer{l}.r"))? as usize,
                variant,
            };
            if let Some(a0) = ck.get(&format!("layer{l}.A0")) {
                let init = LoraFactors {
                    a: a0.clone(),
                    b: ck.require(&format!("layer{l}.B0"))?.clone(),
                    ..f.clone()
                };
                initial_adapters.insert(l, init);
            }
            adapters.insert(l, f);
        }
    }
    Ok(StageSnapshot {
        model,
        adapters,
        initial_adapters,
        subspaces,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bytes_round_trip_bit_exact() {
        let mut ck = Checkpoint::new();
        ck.push("a", DenseMatrix::from_rows(&[vec![0.1, -0.0], vec![1e-300, f64::MAX]]));
        ck.push("empty", DenseMatrix::zeros(3, 0));
        ck.push_scalar("s", std::f64::consts::PI);
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.get("a").unwrap().get(0, 1).to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn header_layout() {
        let mut ck = Checkpoint::new();
        ck.push_scalar("x", 1.0);
        let b = ck.to_bytes();
        assert_eq!(&b[..4], b"KLRA");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), VERSION);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[12..16].try_into().unwrap()), 1);
        assert_eq!(b[16], b'x');
        assert_eq!(b.len(), 12 + 4 + 1 + 8 + 8);
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let mut ck = Checkpoint::new();
        ck.push_scalar("x", 1.0);
        let b = ck.to_bytes();
        assert!(matches!(Checkpoint::from_bytes(&b[..b.len() - 1]), Err(CheckpointError::Truncated(_))));
        assert!(matches!(Checkpoint::from_bytes(b"KLRB\x01\0\0\0\0\0\0\0"), Err(CheckpointError::Magic)));
        let mut extra = b.clone();
        extra.push(0);
        assert!(matches!(Checkpoint::from_bytes(&extra), Err(CheckpointError::Trailing(1))));
    }
}
