//! Versioned binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "LSTMVCKP" | version u8 | config length u64 | config JSON
//! best epoch i64 (-1 when none)
//! tensor count u32, then per tensor: name length u16 | name | ndim u8 | dims u64...
//! tensor data as f64, in directory order
//! SHA-256 of everything above (32 bytes)
//! ```

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::config::{ExperimentConfig, Task};
use super::model::Model;
use crate::cell::{CellDims, CellParams};
use crate::data::Standardizer;
use crate::error::{Error, Result};
use crate::layers::{DenseHead, EmbeddingTable};
use crate::linalg::Matrix;
use crate::optim::RmsState;

pub const MAGIC: &[u8; 8] = b"LSTMVCKP";
pub const FORMAT_VERSION: u8 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ExperimentConfig,
    pub model: Model,
    pub optimizer: RmsState,
    pub standardizer: Option<Standardizer>,
    pub best_epoch: Option<usize>,
}

struct Entry {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Checkpoint {
    fn entries(&self) -> Vec<Entry> {
        let mut out = Vec::new();
        let params = self.model.tensors();
        for (name, shape, data) in &params {
            out.push(Entry {
                name: name.clone(),
                shape: shape.clone(),
                data: data.to_vec(),
            });
        }
        if let Some(s) = self.standardizer {
            out.push(Entry {
                name: "input.standardizer".into(),
                shape: vec![2],
                data: vec![s.mean, s.std],
            });
        }
        out.push(Entry {
            name: "optim.constants".into(),
            shape: vec![2],
            data: vec![self.optimizer.rho, self.optimizer.epsilon],
        });
        for ((name, _, _), acc) in params.iter().zip(&self.optimizer.accumulators) {
            out.push(Entry {
                name: format!("optim.{name}"),
                shape: vec![acc.len()],
                data: acc.clone(),
            });
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(FORMAT_VERSION);
        let json = self.config.to_canonical_json();
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(json.as_bytes());
        let best = self.best_epoch.map_or(-1, |e| e as i64);
        out.extend_from_slice(&best.to_le_bytes());
        let entries = self.entries();
        out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
        for e in &entries {
            out.extend_from_slice(&(e.name.len() as u16).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.push(e.shape.len() as u8);
            for &d in &e.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
        }
        for e in &entries {
            for v in &e.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() {
            return Err(Error::Corruption(format!("file is only {} bytes", bytes.len())));
        }
        if &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let Some(&version) = bytes.get(MAGIC.len()) else {
            return Err(Error::Corruption("file ends after the magic".into()));
        };
        if version != FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        if bytes.len() < MAGIC.len() + 1 + DIGEST_LEN {
            return Err(Error::Corruption("file is truncated".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Corruption("checksum mismatch".into()));
        }
        parse_body(&body[MAGIC.len() + 1..])
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

pub fn save_checkpoint(cp: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    cp.save(path)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::load(path)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("checkpoint body ends early".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
}

fn parse_body(body: &[u8]) -> Result<Checkpoint> {
    let mut c = Cursor { bytes: body, pos: 0 };
    let json_len = c.u64()? as usize;
    let json = std::str::from_utf8(c.take(json_len)?)
        .map_err(|_| Error::Format("config is not UTF-8".into()))?;
    let config: ExperimentConfig =
        serde_json::from_str(json).map_err(|e| Error::Format(format!("config: {e}")))?;
    let best = i64::from_le_bytes(c.array()?);
    let best_epoch = usize::try_from(best).ok();

    let count = u32::from_le_bytes(c.array()?) as usize;
    let mut directory = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let len = u16::from_le_bytes(c.array()?) as usize;
        let name = String::from_utf8(c.take(len)?.to_vec())
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let ndim = c.take(1)?[0] as usize;
        let shape = (0..ndim)
            .map(|_| c.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        directory.push((name, shape));
    }
    let mut entries = Vec::with_capacity(directory.len());
    for (name, shape) in directory {
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::Format(format!("tensor {name} is too large")))?;
        let data = c
            .take(n)?
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
            .collect();
        entries.push(Entry { name, shape, data });
    }
    if c.pos != body.len() {
        return Err(Error::Format("trailing bytes after tensor data".into()));
    }
    rebuild(config, best_epoch, entries)
}

fn rebuild(config: ExperimentConfig, best_epoch: Option<usize>, entries: Vec<Entry>) -> Result<Checkpoint> {
    let find = |name: &str| entries.iter().find(|e| e.name == name);
    let w_c = find("cell.W_c").ok_or_else(|| Error::Format("missing cell.W_c".into()))?;
    let [hidden, input] = w_c.shape[..] else {
        return Err(Error::Format("cell.W_c must be a matrix".into()));
    };
    let dims = CellDims::new(input, hidden).map_err(|_| Error::Format("empty cell".into()))?;
    let head_w = find("head.W").ok_or_else(|| Error::Format("missing head.W".into()))?;
    let outputs = head_w.shape.first().copied().unwrap_or(0);
    let mut model = Model {
        cell: CellParams::zeros(config.variant, dims),
        head: DenseHead::zeros(outputs, hidden),
        embedding: match config.task {
            Task::Tokens => Some(EmbeddingTable {
                table: Matrix::zeros(config.embedding_rows(), input),
            }),
            _ => None,
        },
    };

    let expected: Vec<(String, Vec<usize>)> = model
        .tensors()
        .into_iter()
        .map(|(n, s, _)| (n, s))
        .collect();
    let mut optimizer = RmsState::new(expected.iter().map(|(_, s)| s.iter().product()));
    let mut standardizer = None;
    let mut seen = 0;
    {
        let mut slots = model.tensors_mut();
        for e in &entries {
            if let Some(k) = expected.iter().position(|(n, _)| *n == e.name) {
                if expected[k].1 != e.shape {
                    return Err(Error::Format(format!(
                        "tensor {} has shape {:?}, expected {:?}",
                        e.name, e.shape, expected[k].1
                    )));
                }
                slots[k].1.copy_from_slice(&e.data);
                seen += 1;
            } else if let Some(k) = e
                .name
                .strip_prefix("optim.")
                .and_then(|p| expected.iter().position(|(n, _)| n == p))
            {
                if optimizer.accumulators[k].len() != e.data.len() {
                    return Err(Error::Format(format!("accumulator {} has the wrong size", e.name)));
                }
                optimizer.accumulators[k].copy_from_slice(&e.data);
                seen += 1;
            } else if e.name == "optim.constants" && e.data.len() == 2 {
                optimizer.rho = e.data[0];
                optimizer.epsilon = e.data[1];
            } else if e.name == "input.standardizer" && e.data.len() == 2 {
                standardizer = Some(Standardizer {
                    mean: e.data[0],
                    std: e.data[1],
                });
            } else {
                return Err(Error::Format(format!("unexpected tensor {}", e.name)));
            }
        }
    }
    if seen != 2 * expected.len() {
        return Err(Error::Format("checkpoint is missing tensors".into()));
    }
    Ok(Checkpoint {
        config,
        model,
        optimizer,
        standardizer,
        best_epoch,
    })
}
