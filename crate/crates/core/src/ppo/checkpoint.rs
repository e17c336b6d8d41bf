//! Binary policy checkpoints.
//!
//! Layout, little-endian: magic `GFPC`, format version (u32), header length
//! (u32) and UTF-8 TOML header, weight count (u64), the weights as f64, and a
//! CRC32 of everything before it. The header echoes the run configuration,
//! the network shapes and the training step counter.

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::network::Mlp;
use super::PolicyParams;
use crate::config::RunConfig;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"GFPC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: PolicyParams,
    pub config: RunConfig,
    pub training_steps: u64,
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint file (bad magic bytes)")]
    BadMagic,
    #[error("unsupported checkpoint format version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },
    #[error("checkpoint is truncated")]
    Truncated,
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("malformed checkpoint header: {0}")]
    Header(String),
    #[error("weight count {found} does not match the network shapes ({expected})")]
    Shape { found: u64, expected: u64 },
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    training_steps: u64,
    network: NetworkShape,
    config: RunConfig,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkShape {
    actor: Vec<usize>,
    critic: Vec<usize>,
}

pub fn write_checkpoint(checkpoint: &Checkpoint) -> Vec<u8> {
    let header = Header {
        training_steps: checkpoint.training_steps,
        network: NetworkShape {
            actor: checkpoint.params.actor.sizes().to_vec(),
            critic: checkpoint.params.critic.sizes().to_vec(),
        },
        config: checkpoint.config.clone(),
    };
    let echo = toml::to_string(&header).expect("header serializes");
    let weights = checkpoint.params.flat();
    let mut out = Vec::with_capacity(24 + echo.len() + 8 * weights.len());
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(echo.len() as u32).to_le_bytes());
    out.extend_from_slice(echo.as_bytes());
    out.extend_from_slice(&(weights.len() as u64).to_le_bytes());
    for w in &weights {
        out.extend_from_slice(&w.to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated)?;
        let slice = self.bytes.get(self.pos..end).ok_or(CheckpointError::Truncated)?;
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    if bytes.len() < 4 {
        return Err(CheckpointError::Truncated);
    }
    if bytes[..4] != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut reader = Reader { bytes, pos: 4 };
    let version = reader.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::UnsupportedVersion {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    if bytes.len() < 12 {
        return Err(CheckpointError::Truncated);
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(trailer.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(CheckpointError::Checksum { stored, computed });
    }
    let mut reader = Reader { bytes: body, pos: 8 };
    let echo_len = reader.u32()? as usize;
    let echo = std::str::from_utf8(reader.take(echo_len)?)
        .map_err(|e| CheckpointError::Header(e.to_string()))?;
    let header: Header = toml::from_str(echo).map_err(|e| CheckpointError::Header(e.to_string()))?;
    let count = reader.u64()?;
    let expected = (super::network::param_count(&header.network.actor)
        + super::network::param_count(&header.network.critic)) as u64;
    if count != expected {
        return Err(CheckpointError::Shape { found: count, expected });
    }
    let raw = reader.take(8 * count as usize)?;
    if reader.pos != body.len() {
        return Err(CheckpointError::Header("trailing bytes after the weights".into()));
    }
    let weights: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let n_actor = super::network::param_count(&header.network.actor);
    let actor = Mlp::from_parts(header.network.actor, weights[..n_actor].to_vec())
        .ok_or_else(|| CheckpointError::Header("bad actor shape".into()))?;
    let critic = Mlp::from_parts(header.network.critic, weights[n_actor..].to_vec())
        .ok_or_else(|| CheckpointError::Header("bad critic shape".into()))?;
    Ok(Checkpoint {
        params: PolicyParams { actor, critic },
        config: header.config,
        training_steps: header.training_steps,
    })
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<(), CheckpointError> {
    fs::write(path, write_checkpoint(checkpoint))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    read_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Checkpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        Checkpoint {
            params: PolicyParams::init(7, 5, 9, &mut rng),
            config: RunConfig::default(),
            training_steps: 12_345,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ckpt = sample();
        let back = read_checkpoint(&write_checkpoint(&ckpt)).unwrap();
        let bits = |p: &PolicyParams| p.flat().iter().map(|w| w.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.params), bits(&ckpt.params));
        assert_eq!(back, ckpt);
    }

    #[test]
    fn corrupted_byte_fails_checksum() {
        let mut bytes = write_checkpoint(&sample());
        let idx = bytes.len() - 20;
        bytes[idx] ^= 0x40;
        assert!(matches!(read_checkpoint(&bytes), Err(CheckpointError::Checksum { .. })));
    }

    #[test]
    fn older_version_is_unsupported() {
        let mut bytes = write_checkpoint(&sample());
        bytes[4..8].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(
            read_checkpoint(&bytes),
            Err(CheckpointError::UnsupportedVersion { found: 0, expected: 1 })
        ));
    }

    #[test]
    fn truncation_is_detected() {
        let bytes = write_checkpoint(&sample());
        assert!(read_checkpoint(&bytes[..6]).is_err());
        assert!(matches!(read_checkpoint(&bytes[..2]), Err(CheckpointError::Truncated)));
    }

    #[test]
    fn bad_magic_is_rejected() {
        let mut bytes = write_checkpoint(&sample());
        bytes[0] = b'X';
        assert!(matches!(read_checkpoint(&bytes), Err(CheckpointError::BadMagic)));
    }
}
