//! Model checkpoints.
//!
//! `params.bin` is a flat archive of named `f32` tensors:
//!
//! ```text
//! magic  b"ADNPARAM"   8 bytes
//! u32    version
//! u32    tensor count
//! per tensor:
//!   u32 name length, name (UTF-8)
//!   u32 rank, rank × u64 dims
//!   f32 × prod(dims)            (all integers and floats little-endian)
//! ```
//!
//! `checkpoint.json` carries the model and calendar configuration, the
//! location id of each embedding row and the standardizer used in training.

use std::fs;
use std::path::Path;

use adn_core::calendar::CalendarSpec;
use adn_core::data::Standardizer;
use adn_core::model::{ModelConfig, ModelParams};
use adn_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::store::sha256_hex;

const MAGIC: &[u8; 8] = b"ADNPARAM";
const VERSION: u32 = 1;
pub const PARAMS_FILE: &str = "params.bin";
pub const META_FILE: &str = "checkpoint.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationRow {
    pub id: String,
    pub row: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub calendar: CalendarSpec,
    pub num_locations: usize,
    pub locations: Vec<LocationRow>,
    pub standardizer: Standardizer,
    pub tensors: Vec<TensorEntry>,
    /// SHA-256 of `params.bin`.
    pub params_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams<f32>,
    /// External id of each location-embedding row.
    pub location_names: Vec<String>,
    pub standardizer: Standardizer,
}

impl Checkpoint {
    pub fn row_of(&self, id: &str) -> Option<usize> {
        self.location_names.iter().position(|n| n == id)
    }
}

pub fn encode_params(params: &ModelParams<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + params.num_scalars() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.tensors().len() as u32).to_le_bytes());
    for t in params.tensors() {
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.extend_from_slice(&(t.tensor.ndim() as u32).to_le_bytes());
        for &d in t.tensor.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
}

/// Decode a tensor archive into (name, tensor) pairs.
pub fn decode_params(bytes: &[u8]) -> std::result::Result<Vec<(String, Tensor<f32>)>, String> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8) != Some(MAGIC.as_slice()) {
        return Err("not a parameter archive".into());
    }
    let truncated = || "truncated archive".to_owned();
    let version = r.u32().ok_or_else(truncated)?;
    if version != VERSION {
        return Err(format!("unsupported archive version {version}"));
    }
    let count = r.u32().ok_or_else(truncated)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32().ok_or_else(truncated)? as usize;
        let name = std::str::from_utf8(r.take(len).ok_or_else(truncated)?)
            .map_err(|e| e.to_string())?
            .to_owned();
        let rank = r.u32().ok_or_else(truncated)? as usize;
        let shape = (0..rank)
            .map(|_| r.u64().map(|d| d as usize).ok_or_else(truncated))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(4).ok_or_else(truncated)?).ok_or_else(truncated)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let t = Tensor::new(&shape, data).map_err(|e| format!("{name}: {e}"))?;
        out.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - r.pos));
    }
    Ok(out)
}

pub fn save(dir: &Path, ckpt: &Checkpoint) -> Result<()> {
    let p = &ckpt.params;
    if ckpt.location_names.len() != p.num_locations {
        return Err(Error::Config(format!(
            "{} location names for {} embedding rows",
            ckpt.location_names.len(),
            p.num_locations
        )));
    }
    fs::create_dir_all(dir).at(dir)?;
    let bytes = encode_params(p);
    let bin = dir.join(PARAMS_FILE);
    fs::write(&bin, &bytes).at(&bin)?;
    let meta = CheckpointMeta {
        model: p.config.clone(),
        calendar: p.calendar,
        num_locations: p.num_locations,
        locations: ckpt
            .location_names
            .iter()
            .enumerate()
            .map(|(row, id)| LocationRow { id: id.clone(), row })
            .collect(),
        standardizer: ckpt.standardizer.clone(),
        tensors: p
            .tensors()
            .iter()
            .map(|t| TensorEntry {
                name: t.name.clone(),
                shape: t.tensor.shape().to_vec(),
            })
            .collect(),
        params_sha256: sha256_hex(&bytes),
    };
    let json = dir.join(META_FILE);
    let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::parse(&json, e))? + "\n";
    fs::write(&json, text).at(&json)
}

pub fn load(dir: &Path) -> Result<Checkpoint> {
    let json = dir.join(META_FILE);
    let meta: CheckpointMeta =
        serde_json::from_str(&fs::read_to_string(&json).at(&json)?).map_err(|e| Error::parse(&json, e))?;
    let bin = dir.join(PARAMS_FILE);
    let bytes = fs::read(&bin).at(&bin)?;
    if sha256_hex(&bytes) != meta.params_sha256 {
        return Err(Error::parse(&bin, "parameter checksum does not match checkpoint.json"));
    }
    let named = decode_params(&bytes).map_err(|m| Error::parse(&bin, m))?;
    let params = ModelParams::from_named(&meta.model, &meta.calendar, meta.num_locations, named)?;
    let mut names = vec![String::new(); meta.num_locations];
    let mut seen = vec![false; meta.num_locations];
    for l in meta.locations {
        if l.row >= names.len() || std::mem::replace(&mut seen[l.row], true) {
            return Err(Error::parse(&json, format!("bad or duplicate embedding row {} for {:?}", l.row, l.id)));
        }
        names[l.row] = l.id;
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::parse(&json, "location mapping does not cover every embedding row"));
    }
    Ok(Checkpoint {
        params,
        location_names: names,
        standardizer: meta.standardizer,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use adn_core::rng::Stream;

    fn sample() -> Checkpoint {
        let cfg = ModelConfig {
            d_model: 8,
            enc_layers: 1,
            dec_layers: 1,
            heads_temporal: 2,
            heads_spatial: 1,
            ff_dim: 16,
            ..ModelConfig::default()
        };
        Checkpoint {
            params: ModelParams::init(&cfg, &CalendarSpec::default(), 3, &mut Stream::new(9)).unwrap(),
            location_names: vec!["a".into(), "b".into(), "c".into()],
            standardizer: Standardizer {
                mean: vec![1.25],
                std: vec![0.3],
                scaled: vec![true],
            },
        }
    }

    #[test]
    fn reload_is_bit_exact() {
        let c = sample();
        let dir = tempfile::tempdir().unwrap();
        save(dir.path(), &c).unwrap();
        let back = load(dir.path()).unwrap();
        assert_eq!(back, c);
        for (a, b) in back.params.tensors().iter().zip(c.params.tensors()) {
            let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.tensor), bits(&b.tensor));
        }
        assert_eq!(back.row_of("c"), Some(2));
    }

    #[test]
    fn damaged_archives_are_rejected() {
        let c = sample();
        let bytes = encode_params(&c.params);
        assert!(decode_params(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_params(b"nonsense").is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_params(&extra).is_err());
        let dir = tempfile::tempdir().unwrap();
        save(dir.path(), &c).unwrap();
        let bin = dir.path().join(PARAMS_FILE);
        let mut b = fs::read(&bin).unwrap();
        let last = b.len() - 1;
        b[last] ^= 0x40;
        fs::write(&bin, b).unwrap();
        assert_eq!(load(dir.path()).unwrap_err().exit_code(), 3);
        assert_eq!(load(&dir.path().join("absent")).unwrap_err().exit_code(), 3);
    }
}
