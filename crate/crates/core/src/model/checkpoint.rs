//! Tensor container file: a JSON header (length-prefixed) followed by the
//! named tensors as raw little-endian float32, row-major, in header order.
//! Checkpoints and post-encoder weight files share this format.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, Parameters};

const FORMAT_TAG: &str = "slu-tensors-v1";

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

/// Metadata stored alongside model checkpoints.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: ModelConfig,
    pub seed: u64,
    pub epoch: usize,
    pub metric: Option<f64>,
}

pub fn save_tensors<'a, I>(path: &Path, meta: serde_json::Value, tensors: I) -> Result<()>
where
    I: IntoIterator<Item = (&'a String, &'a Array2<f64>)>,
{
    let tensors: Vec<(&String, &Array2<f64>)> = tensors.into_iter().collect();
    let header = Header {
        format: FORMAT_TAG.to_string(),
        meta,
        tensors: tensors
            .iter()
            .map(|(name, t)| TensorEntry {
                name: (*name).clone(),
                rows: t.nrows(),
                cols: t.ncols(),
            })
            .collect(),
    };
    let header_bytes = serde_json::to_vec(&header)
        .map_err(|e| Error::Model(format!("cannot serialize tensor header: {e}")))?;
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&(header_bytes.len() as u64).to_le_bytes())
        .and_then(|_| file.write_all(&header_bytes))
        .map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::new();
    for (_, t) in &tensors {
        buf.clear();
        buf.reserve(t.nrows() * t.ncols() * 4);
        for &v in t.iter() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        file.write_all(&buf).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn load_tensors(path: &Path) -> Result<(serde_json::Value, BTreeMap<String, Array2<f64>>)> {
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut len_bytes = [0u8; 8];
    file.read_exact(&mut len_bytes)
        .map_err(|e| Error::io(path, e))?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    file.read_exact(&mut header_bytes)
        .map_err(|e| Error::io(path, e))?;
    let header: Header = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::Model(format!("bad tensor header in {}: {e}", path.display())))?;
    if header.format != FORMAT_TAG {
        return Err(Error::Model(format!(
            "unknown tensor format '{}' in {}",
            header.format,
            path.display()
        )));
    }
    let mut tensors = BTreeMap::new();
    for entry in header.tensors {
        let count = entry.rows * entry.cols;
        let mut data = vec![0u8; count * 4];
        file.read_exact(&mut data).map_err(|e| Error::io(path, e))?;
        let mut t = Array2::zeros((entry.rows, entry.cols));
        for (i, chunk) in data.chunks_exact(4).enumerate() {
            t[(i / entry.cols.max(1), i % entry.cols.max(1))] =
                f64::from(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]));
        }
        tensors.insert(entry.name, t);
    }
    Ok((header.meta, tensors))
}

pub fn save_checkpoint(
    path: &Path,
    cfg: &ModelConfig,
    params: &Parameters,
    epoch: usize,
    metric: Option<f64>,
) -> Result<()> {
    let meta = CheckpointMeta {
        config: cfg.clone(),
        seed: params.seed,
        epoch,
        metric,
    };
    let meta = serde_json::to_value(&meta)
        .map_err(|e| Error::Model(format!("cannot serialize checkpoint meta: {e}")))?;
    save_tensors(path, meta, params.iter())
}

pub fn load_checkpoint(path: &Path) -> Result<(Parameters, CheckpointMeta)> {
    let (meta, tensors) = load_tensors(path)?;
    let meta: CheckpointMeta = serde_json::from_value(meta)
        .map_err(|e| Error::Model(format!("bad checkpoint meta in {}: {e}", path.display())))?;
    let params = Parameters::from_tensors(tensors, meta.seed);
    Ok((params, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, ModelConfig, PostEncoderConfig};

    fn cfg() -> ModelConfig {
        ModelConfig {
            d_model: 8,
            heads: 2,
            encoder_blocks: 1,
            decoder_blocks: 1,
            ff_dim: 16,
            conv_kernel: 3,
            dropout: 0.0,
            vocab_size: 7,
            input_dim: 4,
            post_encoder: PostEncoderConfig {
                enabled: false,
                ..Default::default()
            },
            ..ModelConfig::default()
        }
    }

    #[test]
    fn checkpoint_roundtrip_with_f32_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.bin");
        let cfg = cfg();
        let params = init_model(&cfg, 42).unwrap();
        save_checkpoint(&path, &cfg, &params, 3, Some(0.91)).unwrap();
        let (loaded, meta) = load_checkpoint(&path).unwrap();
        assert_eq!(meta.epoch, 3);
        assert_eq!(meta.seed, 42);
        assert_eq!(meta.config, cfg);
        for (name, t) in params.iter() {
            let l = loaded.get(name);
            assert_eq!(l.dim(), t.dim());
            for (a, b) in t.iter().zip(l.iter()) {
                assert!((a - b).abs() < 1e-6, "{name}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn resave_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.bin");
        let p2 = dir.path().join("b.bin");
        let cfg = cfg();
        let params = init_model(&cfg, 7).unwrap();
        save_checkpoint(&p1, &cfg, &params, 0, None).unwrap();
        let (loaded, meta) = load_checkpoint(&p1).unwrap();
        save_checkpoint(&p2, &meta.config, &loaded, 0, None).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }
}
