//! `DISPCKPT1` checkpoint container.
//!
//! Layout: the 9-byte magic `DISPCKPT1`, a little-endian `u32` header length,
//! a UTF-8 JSON header, then the little-endian `f64` payload: every parameter
//! tensor, every velocity tensor and the memory bank values, in header order.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::Tensor;
use crate::data::dataset::hex;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelState};
use crate::regularizer::MemoryBank;
use crate::trainer::{write_atomic, EpochMetrics};

pub const MAGIC: &[u8; 9] = b"DISPCKPT1";

/// Training progress needed to continue a run exactly where it stopped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub epochs_done: usize,
    pub lr: f64,
    pub best_val_loss: Option<f64>,
    pub best_epoch: Option<usize>,
    pub plateau_best: Option<f64>,
    pub plateau_bad_epochs: usize,
    pub stopped: bool,
    pub metrics: Vec<EpochMetrics>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelState,
    pub velocity: Vec<Tensor>,
    pub bank: MemoryBank,
    pub progress: Progress,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct BankHeader {
    targets: usize,
    privates: usize,
    width: usize,
    beta: f64,
    steps: u64,
    initialized: Vec<bool>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    seed: u64,
    params: Vec<TensorEntry>,
    bank: BankHeader,
    progress: Progress,
}

pub fn encode(ck: &Checkpoint) -> Result<Vec<u8>> {
    let names = ck.model.config.parameter_shapes();
    let header = Header {
        config: ck.model.config.clone(),
        seed: ck.model.seed,
        params: names
            .into_iter()
            .zip(&ck.model.params)
            .map(|((name, _), t)| TensorEntry {
                name,
                shape: t.shape().to_vec(),
            })
            .collect(),
        bank: BankHeader {
            targets: ck.bank.targets(),
            privates: ck.bank.privates(),
            width: ck.bank.width(),
            beta: ck.bank.beta(),
            steps: ck.bank.steps(),
            initialized: ck.bank.initialized_mask().to_vec(),
        },
        progress: ck.progress.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    let payload = ck
        .model
        .params
        .iter()
        .chain(&ck.velocity)
        .flat_map(|t| t.data())
        .chain(ck.bank.values());
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() + 4 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::CorruptFile("missing DISPCKPT1 magic".into()));
    }
    let at = MAGIC.len();
    let hlen = u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
    let body = at + 4;
    if bytes.len() < body + hlen {
        return Err(Error::CorruptFile("truncated checkpoint header".into()));
    }
    let header: Header = serde_json::from_slice(&bytes[body..body + hlen])
        .map_err(|e| Error::CorruptFile(format!("checkpoint header: {e}")))?;
    header.config.validate()?;
    let expected: Vec<Vec<usize>> = header.config.parameter_shapes().into_iter().map(|(_, s)| s).collect();
    let stored: Vec<Vec<usize>> = header.params.iter().map(|e| e.shape.clone()).collect();
    if expected != stored {
        return Err(Error::CorruptFile("tensor directory does not match the model config".into()));
    }
    let mut floats = bytes[body + hlen..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let param_len: usize = stored.iter().map(|s| s.iter().product::<usize>()).sum();
    let b = &header.bank;
    let bank_len = b.targets * b.privates * b.width;
    if bytes.len() - body - hlen != 8 * (2 * param_len + bank_len) {
        return Err(Error::CorruptFile("checkpoint payload length mismatch".into()));
    }
    let mut take = |shape: &[usize]| {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), floats.by_ref().take(n).collect())
    };
    let params = stored.iter().map(|s| take(s)).collect::<Result<Vec<_>>>()?;
    let velocity = stored.iter().map(|s| take(s)).collect::<Result<Vec<_>>>()?;
    let values: Vec<f64> = floats.collect();
    let bank = MemoryBank::from_parts(
        b.targets,
        b.privates,
        b.width,
        b.beta,
        values,
        b.initialized.clone(),
        b.steps,
    )?;
    Ok(Checkpoint {
        model: ModelState {
            config: header.config,
            seed: header.seed,
            params,
        },
        velocity,
        bank,
        progress: header.progress,
    })
}

pub fn save(path: &Path, ck: &Checkpoint) -> Result<()> {
    write_atomic(path, &encode(ck)?)
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::CorruptFile(m) => Error::CorruptFile(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Short content hash identifying a set of model parameters.
pub fn model_id(model: &ModelState) -> String {
    let mut h = Sha256::new();
    for t in &model.params {
        for v in t.data() {
            h.update(v.to_le_bytes());
        }
    }
    hex(&h.finalize()[..8])
}
