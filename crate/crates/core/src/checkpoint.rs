//! Single-file checkpoints: magic, little-endian header length, a JSON
//! header (architecture, config, tensor table, optimizer state) and the raw
//! little-endian `f32` payload.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::detector::{Detector, ModelKind};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::nn::{Adam, AdamSlot, Module};

const MAGIC: &[u8; 8] = b"CBRCKPT1";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct OptimizerHeader {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    /// Slot `name` stores first moments under `name.m` and second under `name.v`.
    slots: Vec<TensorEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    arch: ModelKind,
    config: ModelConfig,
    epoch: usize,
    tensors: Vec<TensorEntry>,
    optimizer: Option<OptimizerHeader>,
    meta: serde_json::Value,
}

/// A restored model with its optimizer and bookkeeping.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Detector<f32>,
    pub optimizer: Option<Adam<f32>>,
    pub epoch: usize,
    pub meta: serde_json::Value,
}

fn ckpt_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

pub fn save_checkpoint(
    path: &Path,
    model: &mut Detector<f32>,
    optimizer: Option<&Adam<f32>>,
    epoch: usize,
    meta: serde_json::Value,
) -> Result<()> {
    let mut data: Vec<f32> = Vec::new();
    let push = |a: &ArrayD<f32>, data: &mut Vec<f32>| {
        let offset = data.len();
        data.extend(a.iter().copied());
        offset
    };
    let mut tensors = Vec::new();
    model.visit_params("", &mut |name, p| {
        let offset = push(&p.value, &mut data);
        tensors.push(TensorEntry {
            name: name.to_string(),
            shape: p.value.shape().to_vec(),
            offset,
        });
    });
    let optimizer = optimizer.map(|opt| {
        let mut slots = Vec::new();
        for (name, slot) in &opt.slots {
            let m = push(&slot.m, &mut data);
            push(&slot.v, &mut data);
            slots.push(TensorEntry {
                name: name.clone(),
                shape: slot.m.shape().to_vec(),
                offset: m,
            });
        }
        OptimizerHeader {
            lr: opt.lr,
            beta1: opt.beta1,
            beta2: opt.beta2,
            eps: opt.eps,
            step: opt.step,
            slots,
        }
    });
    let header = Header {
        arch: model.kind(),
        config: *model.config(),
        epoch,
        tensors,
        optimizer,
        meta,
    };
    let json = serde_json::to_vec(&header)?;
    let mut bytes = Vec::with_capacity(16 + json.len() + 4 * data.len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&json);
    for v in &data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    fs::File::create(&tmp)?.write_all(&bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn read_tensor(path: &Path, data: &[f32], shape: &[usize], offset: usize) -> Result<ArrayD<f32>> {
    let len: usize = shape.iter().product();
    let slice = data
        .get(offset..offset + len)
        .ok_or_else(|| ckpt_err(path, format!("tensor at offset {offset} runs past the payload")))?;
    Ok(ArrayD::from_shape_vec(IxDyn(shape), slice.to_vec()).expect("length matches shape"))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| ckpt_err(path, e.to_string()))?;
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(ckpt_err(path, "not a checkpoint file"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(16..16 + hlen).ok_or_else(|| ckpt_err(path, "truncated header"))?;
    let header: Header = serde_json::from_slice(body).map_err(|e| ckpt_err(path, format!("bad header: {e}")))?;
    let payload = &bytes[16 + hlen..];
    if payload.len() % 4 != 0 {
        return Err(ckpt_err(path, "payload is not a whole number of f32 values"));
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();

    let mut model = Detector::<f32>::new(header.arch, header.config, 0)?;
    let table: BTreeMap<&str, &TensorEntry> = header.tensors.iter().map(|t| (t.name.as_str(), t)).collect();
    let mut problems = Vec::new();
    let mut seen = 0;
    model.visit_params("", &mut |name, p| match table.get(name) {
        None => problems.push(format!("missing tensor {name}")),
        Some(t) if t.shape != p.value.shape() => {
            problems.push(format!("tensor {name}: stored shape {:?}, model expects {:?}", t.shape, p.value.shape()))
        }
        Some(t) => match read_tensor(path, &data, &t.shape, t.offset) {
            Ok(v) => {
                p.value = v;
                seen += 1;
            }
            Err(e) => problems.push(e.to_string()),
        },
    });
    if seen != table.len() && problems.is_empty() {
        problems.push(format!("{} stored tensors do not belong to the model", table.len() - seen));
    }
    if !problems.is_empty() {
        return Err(ckpt_err(path, problems.join("; ")));
    }

    let optimizer = match header.optimizer {
        None => None,
        Some(h) => {
            let mut opt = Adam::new(h.lr);
            opt.beta1 = h.beta1;
            opt.beta2 = h.beta2;
            opt.eps = h.eps;
            opt.step = h.step;
            for t in &h.slots {
                let len: usize = t.shape.iter().product();
                let m = read_tensor(path, &data, &t.shape, t.offset)?;
                let v = read_tensor(path, &data, &t.shape, t.offset + len)?;
                opt.slots.insert(t.name.clone(), AdamSlot { m, v });
            }
            Some(opt)
        }
    };
    Ok(Checkpoint {
        model,
        optimizer,
        epoch: header.epoch,
        meta: header.meta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FusionKind;

    fn tiny(fusion: FusionKind) -> ModelConfig {
        ModelConfig {
            input_size: 64,
            backbone_widths: [4, 4, 8, 8],
            bottleneck_channels: 8,
            decoded_channels: 4,
            mlp_hidden: 16,
            n_classes: 1,
            fusion,
        }
    }

    fn values(m: &mut Detector<f32>) -> Vec<(String, ArrayD<f32>)> {
        let mut out = Vec::new();
        m.visit_params("", &mut |n, p| out.push((n.to_string(), p.value.clone())));
        out
    }

    #[test]
    fn round_trip_with_optimizer() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        for kind in [ModelKind::Cbr, ModelKind::Baseline] {
            let mut m = Detector::<f32>::new(kind, tiny(FusionKind::Sgf), 5).unwrap();
            let mut opt = Adam::new(1e-3);
            m.visit_params("", &mut |_, p| p.grad.fill(0.25));
            opt.step(&mut m);
            save_checkpoint(&path, &mut m, Some(&opt), 7, serde_json::json!({"note": 1})).unwrap();
            let mut back = load_checkpoint(&path).unwrap();
            assert_eq!(back.model.kind(), kind);
            assert_eq!(back.epoch, 7);
            assert_eq!(back.meta["note"], 1);
            assert_eq!(values(&mut back.model), values(&mut m));
            let o = back.optimizer.unwrap();
            assert_eq!(o.step, 1);
            assert_eq!(o.slots.len(), opt.slots.len());
            for (k, s) in &opt.slots {
                assert_eq!(o.slots[k].m, s.m);
                assert_eq!(o.slots[k].v, s.v);
            }
        }
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        fs::write(&path, b"hello").unwrap();
        assert!(load_checkpoint(&path).is_err());
        let mut m = Detector::<f32>::new(ModelKind::Cbr, tiny(FusionKind::None), 1).unwrap();
        save_checkpoint(&path, &mut m, None, 0, serde_json::Value::Null).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        let err = load_checkpoint(&path).unwrap_err().to_string();
        assert!(err.contains("payload"), "{err}");
    }
}
