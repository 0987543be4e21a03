//! Versioned checkpoint archive: JSON header (config, tensor index, training
//! metadata) followed by raw little-endian f32 tensor data, with optional
//! optimizer moments for exact resume.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::PixNavModel;
use super::{PolicyConfig, PolicyError};
use crate::nn::{Adam, AdamConfig};

const MAGIC: &[u8; 8] = b"PXNAVCK1";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub train_step: u64,
    /// Opaque trainer state (e.g. data-order rng position) for exact resume.
    #[serde(default)]
    pub extra: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    config: PolicyConfig,
    init_seed: u64,
    tensors: Vec<TensorEntry>,
    optimizer: Option<OptimizerHeader>,
    meta: CheckpointMeta,
}

#[derive(Serialize, Deserialize)]
struct OptimizerHeader {
    step: u64,
    adam: AdamConfig,
    /// Which parameter ids carry moment tensors, in id order.
    present: Vec<bool>,
}

pub struct Checkpoint {
    pub model: PixNavModel<f32>,
    pub optimizer: Option<Adam<f32>>,
    pub meta: CheckpointMeta,
}

pub fn save_checkpoint(
    path: &Path,
    model: &PixNavModel<f32>,
    optimizer: Option<&Adam<f32>>,
    meta: &CheckpointMeta,
) -> Result<(), PolicyError> {
    let mut tensors = Vec::new();
    let mut blob: Vec<f32> = Vec::new();
    model.visit_params(&mut |p| {
        tensors.push(TensorEntry { name: p.name.clone(), shape: p.value.shape().to_vec() });
        blob.extend(p.value.iter().copied());
    });
    let optimizer_header = optimizer.map(|opt| {
        let (step, m, v) = opt.state();
        let present: Vec<bool> = m.iter().map(|t| t.is_some()).collect();
        for series in [m, v] {
            for t in series.iter().flatten() {
                blob.extend(t.iter().copied());
            }
        }
        OptimizerHeader { step, adam: opt.config, present }
    });
    let header = Header {
        version: VERSION,
        config: model.config.clone(),
        init_seed: model.init_seed,
        tensors,
        optimizer: optimizer_header,
        meta: meta.clone(),
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| PolicyError::MalformedCheckpoint(e.to_string()))?;

    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    file.write_all(MAGIC)?;
    file.write_all(&(header_json.len() as u32).to_le_bytes())?;
    file.write_all(&header_json)?;
    let mut bytes = Vec::with_capacity(blob.len() * 4);
    for v in blob {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    file.write_all(&bytes)?;
    file.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, PolicyError> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    file.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(PolicyError::MalformedCheckpoint("bad magic".into()));
    }
    let mut len_bytes = [0u8; 4];
    file.read_exact(&mut len_bytes)?;
    let header_len = u32::from_le_bytes(len_bytes) as usize;
    let mut header_json = vec![0u8; header_len];
    file.read_exact(&mut header_json)?;
    let header: Header = serde_json::from_slice(&header_json)
        .map_err(|e| PolicyError::MalformedCheckpoint(e.to_string()))?;
    if header.version != VERSION {
        return Err(PolicyError::UnsupportedCheckpointVersion(header.version));
    }
    let mut rest = Vec::new();
    file.read_to_end(&mut rest)?;
    if rest.len() % 4 != 0 {
        return Err(PolicyError::MalformedCheckpoint("truncated tensor data".into()));
    }
    let values: Vec<f32> = rest
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();

    let mut model = PixNavModel::<f32>::new(header.config.clone(), header.init_seed);
    let mut cursor = 0usize;
    let mut idx = 0usize;
    let mut mismatch: Option<String> = None;
    model.visit_params_mut(&mut |p| {
        if mismatch.is_some() {
            return;
        }
        match header.tensors.get(idx) {
            Some(entry) if entry.name == p.name && entry.shape == p.value.shape() => {
                let n = p.value.len();
                if cursor + n > values.len() {
                    mismatch = Some(format!("tensor data exhausted at {}", p.name));
                    return;
                }
                for (slot, v) in p.value.iter_mut().zip(&values[cursor..cursor + n]) {
                    *slot = *v;
                }
                cursor += n;
                idx += 1;
            }
            Some(entry) => {
                mismatch = Some(format!(
                    "tensor mismatch: archive has {} {:?}, model expects {} {:?}",
                    entry.name,
                    entry.shape,
                    p.name,
                    p.value.shape()
                ));
            }
            None => mismatch = Some("archive has fewer tensors than the model".into()),
        }
    });
    if let Some(msg) = mismatch {
        return Err(PolicyError::MalformedCheckpoint(msg));
    }
    if idx != header.tensors.len() {
        return Err(PolicyError::MalformedCheckpoint(
            "archive has more tensors than the model".into(),
        ));
    }

    let optimizer = match header.optimizer {
        Some(opt_header) => {
            let mut shapes: Vec<Vec<usize>> = Vec::new();
            model.visit_params(&mut |p| shapes.push(p.value.shape().to_vec()));
            let mut read_series = |cursor: &mut usize| -> Result<Vec<Option<ndarray::ArrayD<f32>>>, PolicyError> {
                let mut series = Vec::with_capacity(shapes.len());
                for (id, shape) in shapes.iter().enumerate() {
                    if opt_header.present.get(id).copied().unwrap_or(false) {
                        let n: usize = shape.iter().product();
                        if *cursor + n > values.len() {
                            return Err(PolicyError::MalformedCheckpoint(
                                "optimizer data exhausted".into(),
                            ));
                        }
                        let arr = ndarray::ArrayD::from_shape_vec(
                            ndarray::IxDyn(shape),
                            values[*cursor..*cursor + n].to_vec(),
                        )
                        .map_err(|e| PolicyError::MalformedCheckpoint(e.to_string()))?;
                        *cursor += n;
                        series.push(Some(arr));
                    } else {
                        series.push(None);
                    }
                }
                Ok(series)
            };
            let m = read_series(&mut cursor)?;
            let v = read_series(&mut cursor)?;
            let mut adam = Adam::new(shapes.len(), opt_header.adam);
            adam.restore(opt_header.step, m, v);
            Some(adam)
        }
        None => None,
    };
    if cursor != values.len() {
        return Err(PolicyError::MalformedCheckpoint(format!(
            "{} trailing values in archive",
            values.len() - cursor
        )));
    }
    Ok(Checkpoint { model, optimizer, meta: header.meta })
}
