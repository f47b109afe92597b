//! Binary checkpoint layout (all integers and floats little-endian):
//!
//! ```text
//! magic          8 bytes  "MIPDQNCK"
//! version        u32
//! n_sizes        u32
//! layer_sizes    u64 × n_sizes
//! epoch          u64
//! seed           u64
//! config_hash    u64
//! n_params       u64
//! params         f64 × n_params   (weights row-major layer by layer, then biases)
//! checksum       8 bytes          (first 8 bytes of SHA-256 over everything above)
//! ```

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::net::{param_count, DenseNet};
use super::NeuralError;

pub const MAGIC: &[u8; 8] = b"MIPDQNCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub epoch: u64,
    pub seed: u64,
    pub config_hash: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub net: DenseNet,
    pub meta: CheckpointMeta,
}

/// Stable 64-bit hash of arbitrary bytes (prefix of SHA-256).
pub fn hash64(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

pub fn encode(net: &DenseNet, meta: &CheckpointMeta) -> Vec<u8> {
    let mut buf = Vec::with_capacity(64 + 8 * net.params().len());
    buf.extend_from_slice(MAGIC);
    buf.write_u32::<LittleEndian>(FORMAT_VERSION).unwrap();
    buf.write_u32::<LittleEndian>(net.layer_sizes().len() as u32).unwrap();
    for &s in net.layer_sizes() {
        buf.write_u64::<LittleEndian>(s as u64).unwrap();
    }
    buf.write_u64::<LittleEndian>(meta.epoch).unwrap();
    buf.write_u64::<LittleEndian>(meta.seed).unwrap();
    buf.write_u64::<LittleEndian>(meta.config_hash).unwrap();
    buf.write_u64::<LittleEndian>(net.params().len() as u64).unwrap();
    for &p in net.params() {
        buf.write_f64::<LittleEndian>(p).unwrap();
    }
    let sum = Sha256::digest(&buf);
    buf.write_all(&sum[..8]).unwrap();
    buf
}

fn corrupt(msg: impl Into<String>) -> NeuralError {
    NeuralError::Corrupt(msg.into())
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint, NeuralError> {
    let mut rd = Cursor::new(bytes);
    let mut magic = [0u8; 8];
    rd.read_exact(&mut magic).map_err(|_| corrupt("file too short for header"))?;
    if &magic != MAGIC {
        return Err(corrupt("bad magic bytes"));
    }
    let version = rd.read_u32::<LittleEndian>().map_err(|_| corrupt("truncated header"))?;
    if version != FORMAT_VERSION {
        return Err(NeuralError::Version {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    let truncated = |_| corrupt("truncated file");
    let n_sizes = rd.read_u32::<LittleEndian>().map_err(truncated)? as usize;
    if n_sizes > 1024 {
        return Err(corrupt(format!("implausible layer count {n_sizes}")));
    }
    let mut sizes = Vec::with_capacity(n_sizes);
    for _ in 0..n_sizes {
        let s = rd.read_u64::<LittleEndian>().map_err(truncated)?;
        sizes.push(usize::try_from(s).map_err(|_| corrupt("layer size overflow"))?);
    }
    let meta = CheckpointMeta {
        epoch: rd.read_u64::<LittleEndian>().map_err(truncated)?,
        seed: rd.read_u64::<LittleEndian>().map_err(truncated)?,
        config_hash: rd.read_u64::<LittleEndian>().map_err(truncated)?,
    };
    let n_params = rd.read_u64::<LittleEndian>().map_err(truncated)? as usize;
    if n_params != param_count(&sizes) {
        return Err(corrupt(format!(
            "parameter count {n_params} does not match layer sizes {sizes:?}"
        )));
    }
    let body_len = rd.position() as usize + 8 * n_params;
    if bytes.len() < body_len + 8 {
        return Err(corrupt("truncated file"));
    }
    if bytes.len() > body_len + 8 {
        return Err(corrupt("trailing bytes after checksum"));
    }
    let mut params = vec![0.0; n_params];
    rd.read_f64_into::<LittleEndian>(&mut params).map_err(truncated)?;
    let sum = Sha256::digest(&bytes[..body_len]);
    if bytes[body_len..] != sum[..8] {
        return Err(corrupt("checksum mismatch"));
    }
    let net = DenseNet::from_params(&sizes, params).map_err(|e| corrupt(e.to_string()))?;
    Ok(Checkpoint { version, net, meta })
}

pub fn save(path: impl AsRef<Path>, net: &DenseNet, meta: &CheckpointMeta) -> Result<(), NeuralError> {
    fs::write(path, encode(net, meta))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint, NeuralError> {
    decode(&fs::read(path)?)
}
