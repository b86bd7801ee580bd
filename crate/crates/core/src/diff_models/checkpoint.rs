//! Model checkpoints: `LEVM`, a little-endian `u32` header length, a JSON
//! header, then `p` little-endian `f64` parameters.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::loss::LossKind;
use super::model::{Architecture, DiffModel, ModelMeta};
use super::train::TrainLogEntry;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"LEVM";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    version: u32,
    architecture: Architecture,
    widths: Vec<usize>,
    p: usize,
    seed: u64,
    loss: Option<LossKind>,
    l2: f64,
    grad_norm: Option<f64>,
    tolerance: Option<f64>,
}

pub fn write_checkpoint<W: Write>(model: &DiffModel, mut w: W) -> Result<()> {
    let header = Header {
        version: CHECKPOINT_VERSION,
        architecture: model.arch().clone(),
        widths: model.arch().widths(),
        p: model.p(),
        seed: model.meta.seed,
        loss: model.meta.loss,
        l2: model.meta.l2,
        grad_norm: model.meta.grad_norm,
        tolerance: model.meta.tolerance,
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    for t in model.theta() {
        w.write_all(&t.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<DiffModel> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Malformed("not a model checkpoint (bad magic)".into()));
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| Error::Malformed(format!("checkpoint header: {e}")))?;
    if header.version != CHECKPOINT_VERSION {
        return Err(Error::Malformed(format!("unsupported checkpoint version {}", header.version)));
    }
    if header.p != header.architecture.param_count() {
        return Err(Error::Malformed("checkpoint parameter count disagrees with architecture".into()));
    }
    let mut theta = Vec::with_capacity(header.p);
    let mut buf = [0u8; 8];
    for _ in 0..header.p {
        r.read_exact(&mut buf)
            .map_err(|_| Error::Malformed("checkpoint parameter blob truncated".into()))?;
        theta.push(f64::from_le_bytes(buf));
    }
    let mut model = DiffModel::from_theta(header.architecture, theta)?;
    model.meta = ModelMeta {
        seed: header.seed,
        loss: header.loss,
        l2: header.l2,
        grad_norm: header.grad_norm,
        tolerance: header.tolerance,
    };
    Ok(model)
}

pub fn save_checkpoint(model: &DiffModel, path: impl AsRef<Path>) -> Result<()> {
    write_checkpoint(model, BufWriter::new(File::create(path)?))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<DiffModel> {
    read_checkpoint(BufReader::new(File::open(path)?))
}

/// One JSON object per line.
pub fn write_train_log<W: Write>(log: &[TrainLogEntry], mut w: W) -> Result<()> {
    for e in log {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
