//! Binary embedding checkpoints.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "KGE1" | kind: u32 | n_entities: u64 | n_relations: u64 | dim: u64
//! entity table (f32, row-major) | relation table (f32, row-major)
//! ```
//!
//! Parameters are computed in f64 and narrowed to f32 on save. A loaded
//! checkpoint is already on the f32 grid, so re-saving it reproduces the
//! file byte for byte. A `<file>.meta` text sidecar records the epoch, the
//! last mean loss and the training configuration.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{KgeError, Result};
use crate::model::{ModelKind, ModelParams};

pub const MAGIC: [u8; 4] = *b"KGE1";
pub const HEADER_LEN: usize = 4 + 4 + 3 * 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub kind: ModelKind,
    pub n_entities: usize,
    pub n_relations: usize,
    pub dim: usize,
}

impl Header {
    pub fn of(params: &ModelParams) -> Self {
        Self {
            kind: params.kind(),
            n_entities: params.n_entities(),
            n_relations: params.n_relations(),
            dim: params.dim(),
        }
    }

    /// Payload bytes implied by the header, `None` on overflow.
    pub fn payload_len(&self) -> Option<usize> {
        let e = self.n_entities.checked_mul(self.kind.entity_width(self.dim))?;
        let r = self.n_relations.checked_mul(self.kind.relation_width(self.dim))?;
        e.checked_add(r)?.checked_mul(4)
    }

    fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&self.kind.code().to_le_bytes());
        for v in [self.n_entities, self.n_relations, self.dim] {
            out.extend_from_slice(&(v as u64).to_le_bytes());
        }
    }

    fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            if bytes.len() >= 4 && bytes[..4] != MAGIC {
                return Err(KgeError::BadMagic(bytes[..4].try_into().unwrap()));
            }
            return Err(KgeError::Truncated {
                expected: HEADER_LEN,
                actual: bytes.len(),
            });
        }
        let magic: [u8; 4] = bytes[..4].try_into().unwrap();
        if magic != MAGIC {
            return Err(KgeError::BadMagic(magic));
        }
        let code = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        let kind = ModelKind::from_code(code)?;
        let field = |at: usize| -> Result<usize> {
            let v = u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
            usize::try_from(v).map_err(|_| KgeError::Mismatch(format!("header field {v} does not fit in memory")))
        };
        let header = Self {
            kind,
            n_entities: field(8)?,
            n_relations: field(16)?,
            dim: field(24)?,
        };
        if header.dim == 0 {
            return Err(KgeError::Mismatch("header dim is 0".into()));
        }
        Ok(header)
    }
}

/// Serializes `params` into the checkpoint byte format.
pub fn encode(params: &ModelParams) -> Vec<u8> {
    let header = Header::of(params);
    let mut out = Vec::with_capacity(HEADER_LEN + header.payload_len().unwrap_or(0));
    header.encode(&mut out);
    for &v in params.entity_table().iter().chain(params.relation_table()) {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

/// Parses checkpoint bytes. A payload that is not a whole number of f32
/// values is reported as truncated; a whole number of the wrong count as a
/// size mismatch.
pub fn decode(bytes: &[u8]) -> Result<ModelParams> {
    let header = Header::decode(bytes)?;
    let payload = &bytes[HEADER_LEN..];
    let expected = header.payload_len().ok_or_else(|| {
        KgeError::Mismatch(format!(
            "header sizes overflow: {} entities, {} relations, dim {}",
            header.n_entities, header.n_relations, header.dim
        ))
    })?;
    if payload.len() % 4 != 0 {
        return Err(KgeError::Truncated {
            expected,
            actual: payload.len(),
        });
    }
    if payload.len() != expected {
        return Err(KgeError::SizeMismatch {
            expected,
            actual: payload.len(),
        });
    }
    let mut values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64);
    let n_entity_values = header.n_entities * header.kind.entity_width(header.dim);
    let entity: Vec<f64> = values.by_ref().take(n_entity_values).collect();
    let relation: Vec<f64> = values.collect();
    ModelParams::from_parts(header.kind, header.dim, entity, relation)
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    write_atomic(path, &encode(params))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let bytes = fs::read(path).map_err(|e| KgeError::io(path, e))?;
    decode(&bytes).map_err(|e| e.in_file(path))
}

/// Reads only the header.
pub fn read_header(path: &Path) -> Result<Header> {
    let bytes = fs::read(path).map_err(|e| KgeError::io(path, e))?;
    Header::decode(&bytes).map_err(|e| e.in_file(path))
}

pub fn meta_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".meta");
    PathBuf::from(name)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub epoch: usize,
    pub loss: Option<f64>,
    /// Ordered `key = value` echo of the training configuration.
    pub config: Vec<(String, String)>,
}

impl CheckpointMeta {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "epoch = {}", self.epoch);
        match self.loss {
            Some(loss) => {
                let _ = writeln!(out, "loss = {loss:?}");
            }
            None => out.push_str("loss = none\n"),
        }
        for (k, v) in &self.config {
            let _ = writeln!(out, "config.{k} = {v}");
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut meta = Self {
            epoch: 0,
            loss: None,
            config: Vec::new(),
        };
        let mut saw_epoch = false;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| KgeError::Format {
                line: i + 1,
                reason: "expected `key = value`".into(),
            })?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |what: &str| KgeError::Format {
                line: i + 1,
                reason: format!("invalid {what} `{value}`"),
            };
            match key {
                "epoch" => {
                    meta.epoch = value.parse().map_err(|_| bad("epoch"))?;
                    saw_epoch = true;
                }
                "loss" if value == "none" => meta.loss = None,
                "loss" => meta.loss = Some(value.parse().map_err(|_| bad("loss"))?),
                _ => match key.strip_prefix("config.") {
                    Some(k) => meta.config.push((k.to_string(), value.to_string())),
                    None => {
                        return Err(KgeError::UnknownConfigKey {
                            key: key.to_string(),
                            line: i + 1,
                        })
                    }
                },
            }
        }
        if !saw_epoch {
            return Err(KgeError::Format {
                line: 0,
                reason: "metadata has no `epoch` entry".into(),
            });
        }
        Ok(meta)
    }

    pub fn save(&self, checkpoint: &Path) -> Result<()> {
        write_atomic(&meta_path(checkpoint), self.to_text().as_bytes())
    }

    pub fn load(checkpoint: &Path) -> Result<Self> {
        let path = meta_path(checkpoint);
        let text = fs::read_to_string(&path).map_err(|e| KgeError::io(&path, e))?;
        Self::parse(&text).map_err(|e| e.in_file(&path))
    }
}

/// Writes through a temporary sibling so an interrupted run never leaves a
/// half-written checkpoint behind.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| KgeError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| KgeError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Triple;
    use crate::model::init_params;

    #[test]
    fn round_trip_is_a_fixed_point() {
        for kind in ModelKind::ALL {
            let params = init_params(kind, 7, 3, 4, 11).unwrap();
            let first = encode(&params);
            let loaded = decode(&first).unwrap();
            assert_eq!(encode(&loaded), first);
            for h in 0..7 {
                for t in 0..7 {
                    let tr = Triple::new(h, 1, t);
                    let (a, b) = (params.score(tr), loaded.score(tr));
                    assert!((a - b).abs() <= 1e-3 * (1.0 + a.abs()), "{kind}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn header_layout() {
        let params = init_params(ModelKind::Rescal, 5, 2, 3, 0).unwrap();
        let bytes = encode(&params);
        assert_eq!(&bytes[..4], b"KGE1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), ModelKind::Rescal.code());
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 5);
        assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(bytes[24..32].try_into().unwrap()), 3);
        assert_eq!(bytes.len(), HEADER_LEN + 4 * (5 * 3 + 2 * 9));
    }

    #[test]
    fn distinct_errors() {
        let params = init_params(ModelKind::DistMult, 4, 2, 3, 0).unwrap();
        let bytes = encode(&params);

        let err = decode(&bytes[..bytes.len() - 1]).unwrap_err();
        assert!(matches!(err, KgeError::Truncated { .. }), "{err}");
        assert!(err.to_string().contains("truncated payload"));

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad).unwrap_err(), KgeError::BadMagic(_)));

        let mut relabeled = bytes.clone();
        relabeled[4..8].copy_from_slice(&ModelKind::Rescal.code().to_le_bytes());
        assert!(matches!(decode(&relabeled).unwrap_err(), KgeError::SizeMismatch { .. }));

        let mut unknown = bytes;
        unknown[4..8].copy_from_slice(&99u32.to_le_bytes());
        assert!(matches!(decode(&unknown).unwrap_err(), KgeError::UnknownKind(99)));

        assert!(matches!(decode(b"KGE1").unwrap_err(), KgeError::Truncated { .. }));
    }

    #[test]
    fn meta_round_trip() {
        let meta = CheckpointMeta {
            epoch: 12,
            loss: Some(0.1 + 0.2),
            config: vec![("model".into(), "DistMult".into()), ("dim".into(), "8".into())],
        };
        assert_eq!(CheckpointMeta::parse(&meta.to_text()).unwrap(), meta);
        let none = CheckpointMeta { loss: None, ..meta };
        assert_eq!(CheckpointMeta::parse(&none.to_text()).unwrap(), none);
    }
}
