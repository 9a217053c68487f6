//! Checkpoint files: one JSON header line, then for each layer the weight
//! and bias arrays as a little-endian `u64` length followed by that many
//! little-endian `f32` values.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Mlp, MlpSpec};
use crate::error::{Error, Result};
use crate::loss::{Prediction, Variant};

pub const CHECKPOINT_FORMAT: &str = "xidiff-checkpoint-1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub layer_dims: Vec<usize>,
    pub mlp: MlpSpec,
    pub variant: Variant,
    pub prediction: Prediction,
    pub schedule_hash: String,
    pub step: u64,
    pub master_seed: u64,
    /// The full run configuration, when the checkpoint came from a training run.
    #[serde(default)]
    pub config: Option<serde_json::Value>,
}

impl CheckpointHeader {
    pub fn new(
        mlp: &Mlp<f32>,
        variant: Variant,
        prediction: Prediction,
        schedule_hash: String,
        step: u64,
        master_seed: u64,
    ) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            layer_dims: mlp.layer_dims().to_vec(),
            mlp: mlp.spec().clone(),
            variant,
            prediction,
            schedule_hash,
            step,
            master_seed,
            config: None,
        }
    }
}

pub fn write_checkpoint(path: &Path, header: &CheckpointHeader, mlp: &Mlp<f32>) -> Result<()> {
    if header.layer_dims != mlp.layer_dims() {
        return Err(Error::Shape("checkpoint header does not match network".into()));
    }
    let mut buf = serde_json::to_vec(header)?;
    buf.push(b'\n');
    for l in 0..mlp.num_layers() {
        let (w, b) = mlp.layer(l);
        for arr in [w, b] {
            buf.extend_from_slice(&(arr.len() as u64).to_le_bytes());
            for v in arr {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    f.sync_all()?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<(CheckpointHeader, Mlp<f32>)> {
    let bytes = fs::read(path)?;
    let corrupt = |reason: String| Error::Corrupt {
        path: path.display().to_string(),
        reason,
    };
    let nl = bytes
        .iter()
        .position(|b| *b == b'\n')
        .ok_or_else(|| corrupt("missing header line".into()))?;
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[..nl]).map_err(|e| corrupt(format!("bad header: {e}")))?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(corrupt(format!("unknown format '{}'", header.format)));
    }
    if header.mlp.layer_dims() != header.layer_dims {
        return Err(corrupt("layer dims disagree with architecture".into()));
    }
    let mut params = Vec::with_capacity(header.mlp.num_params());
    let mut pos = nl + 1;
    for w in header.layer_dims.windows(2) {
        for expected in [w[0] * w[1], w[1]] {
            let len_bytes = bytes
                .get(pos..pos + 8)
                .ok_or_else(|| corrupt("truncated array length".into()))?;
            let len = u64::from_le_bytes(len_bytes.try_into().expect("8 bytes")) as usize;
            if len != expected {
                return Err(corrupt(format!("array of {len} values, expected {expected}")));
            }
            pos += 8;
            let data = bytes
                .get(pos..pos + 4 * len)
                .ok_or_else(|| corrupt("truncated array data".into()))?;
            params.extend(
                data.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))),
            );
            pos += 4 * len;
        }
    }
    if pos != bytes.len() {
        return Err(corrupt(format!("{} trailing bytes", bytes.len() - pos)));
    }
    if params.iter().any(|v| !v.is_finite()) {
        return Err(corrupt("non-finite parameter".into()));
    }
    let mlp = Mlp::from_params(header.mlp.clone(), params)?;
    Ok((header, mlp))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bit_exact_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mlp = Mlp::<f32>::init_params(MlpSpec::new(3, 4, vec![8, 5], 20), 11).unwrap();
        let mut header =
            CheckpointHeader::new(&mlp, Variant::Proposed, Prediction::V, "abc".into(), 42, 9);
        header.config = Some(serde_json::json!({"k": 1}));
        write_checkpoint(&path, &header, &mlp).unwrap();
        let (h2, m2) = read_checkpoint(&path).unwrap();
        assert_eq!(h2, header);
        let a: Vec<u32> = mlp.params().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = m2.params().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mlp = Mlp::<f32>::init_params(MlpSpec::new(2, 2, vec![3], 5), 1).unwrap();
        let header = CheckpointHeader::new(&mlp, Variant::Base, Prediction::Eps, "h".into(), 0, 0);
        write_checkpoint(&path, &header, &mlp).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_checkpoint(&path), Err(Error::Corrupt { .. })));
        fs::write(&path, b"not a header").unwrap();
        assert!(matches!(read_checkpoint(&path), Err(Error::Corrupt { .. })));
    }
}
