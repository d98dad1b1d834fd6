//! Single-file parameter checkpoints.
//!
//! Layout: the 8-byte magic `FSCKPT01`, a little-endian `u64` manifest
//! length, the JSON manifest, then every tensor as raw little-endian `f32`
//! in manifest order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::ModelParams;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::io::{read_file, write_atomic};

const MAGIC: &[u8; 8] = b"FSCKPT01";

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Offset in `f32` elements from the start of the payload.
    offset: usize,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    dtype: String,
    /// Run configuration in `key = value` form.
    config: String,
    tensors: Vec<TensorEntry>,
}

/// Parameters together with the configuration that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub params: ModelParams<f32>,
}

pub fn encode_checkpoint(config: &RunConfig, params: &ModelParams<f32>) -> Vec<u8> {
    let mut tensors = Vec::with_capacity(params.len());
    let mut offset = 0;
    for id in params.ids() {
        let len = params.values(id).len();
        tensors.push(TensorEntry {
            name: params.name(id).to_string(),
            shape: params.shape(id).to_vec(),
            offset,
            len,
        });
        offset += len;
    }
    let manifest = Manifest {
        dtype: "f32".into(),
        config: config.to_kv_string(),
        tensors,
    };
    let json = serde_json::to_vec(&manifest).expect("manifest serializes");
    let mut out = Vec::with_capacity(16 + json.len() + 4 * offset);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for id in params.ids() {
        for v in params.values(id) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let bad = |reason: &str| Error::format(path, reason);
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("missing checkpoint magic"));
    }
    let mlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = &bytes[16..];
    if mlen > body.len() {
        return Err(bad("manifest length exceeds file size"));
    }
    let manifest: Manifest = serde_json::from_slice(&body[..mlen])
        .map_err(|e| bad(&format!("manifest: {e}")))?;
    if manifest.dtype != "f32" {
        return Err(bad(&format!("unsupported dtype {}", manifest.dtype)));
    }
    let config = RunConfig::from_kv_str(&manifest.config)?;
    let payload = &body[mlen..];
    let total: usize = manifest.tensors.iter().map(|t| t.len).sum();
    if payload.len() != 4 * total {
        return Err(bad(&format!(
            "payload holds {} bytes, manifest describes {}",
            payload.len(),
            4 * total
        )));
    }
    let mut names = Vec::new();
    let mut shapes = Vec::new();
    let mut values = Vec::new();
    for t in manifest.tensors {
        let end = t.offset.checked_add(t.len).filter(|&e| e <= total);
        let Some(end) = end else {
            return Err(bad(&format!("tensor {} lies outside the payload", t.name)));
        };
        let v: Vec<f32> = payload[4 * t.offset..4 * end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        names.push(t.name);
        shapes.push(t.shape);
        values.push(v);
    }
    let params = ModelParams::from_parts(names, shapes, values)?;
    Ok(Checkpoint { config, params })
}

pub fn save_checkpoint(path: &Path, config: &RunConfig, params: &ModelParams<f32>) -> Result<()> {
    write_atomic(path, &encode_checkpoint(config, params))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&read_file(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Network;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let cfg = RunConfig {
            channel_widths: vec![4, 8],
            gc_scales: [0].into_iter().collect(),
            ..RunConfig::default()
        };
        let net = Network::from_config(&cfg).unwrap();
        let mut p = net.init_params::<f32, _>(&mut ChaCha8Rng::seed_from_u64(9));
        p.values_mut(crate::network::ParamId(0))[0] = f32::from_bits(0x3f80_0001);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&path, &cfg, &p).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.config, cfg);
        for id in p.ids() {
            let a: Vec<u32> = p.values(id).iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = back.params.values(id).iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b);
            assert_eq!(p.name(id), back.params.name(id));
        }
        net.check_params(&back.params).unwrap();
    }

    #[test]
    fn rejects_corruption() {
        let cfg = RunConfig::default();
        let p = ModelParams::<f32>::from_parts(vec!["a".into()], vec![vec![2]], vec![vec![1.0, 2.0]]).unwrap();
        let bytes = encode_checkpoint(&cfg, &p);
        let path = Path::new("x");
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1], path).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_checkpoint(&bad, path).is_err());
        assert!(decode_checkpoint(&bytes, path).is_ok());
    }
}
