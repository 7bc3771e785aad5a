//! Binary checkpoints: `ADNT`, a format version, the configuration text,
//! then named little-endian `f32` arrays (parameters followed by Adam
//! moments under `adam.m.` / `adam.v.`).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::kv::{self, KeyValue};
use crate::model::{ModelConfig, ModelWeights};
use crate::tensor::{AdamState, Shape, Tensor};

pub const MAGIC: [u8; 4] = *b"ADNT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Epochs completed.
    pub epoch: usize,
    pub weights: ModelWeights<f32>,
    pub adam: AdamState<f32>,
}

impl Checkpoint {
    pub fn new(model: ModelConfig, train: TrainConfig, weights: ModelWeights<f32>) -> Self {
        Checkpoint {
            model,
            train,
            epoch: 0,
            weights,
            adam: AdamState::new(),
        }
    }

    fn header(&self) -> String {
        let mut pairs = self.model.pairs();
        pairs.extend(self.train.pairs());
        pairs.push(("checkpoint.epoch".into(), self.epoch.to_string()));
        pairs.push(("checkpoint.step".into(), self.adam.step.to_string()));
        kv::render(&pairs)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let header = self.header();
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());

        let arrays: Vec<(String, &Tensor<f32>)> = self
            .weights
            .params
            .iter()
            .map(|(k, v)| (k.clone(), v))
            .chain(self.adam.first.iter().map(|(k, v)| (format!("adam.m.{k}"), v)))
            .chain(self.adam.second.iter().map(|(k, v)| (format!("adam.v.{k}"), v)))
            .collect();
        out.extend_from_slice(&(arrays.len() as u32).to_le_bytes());
        for (name, t) in arrays {
            let len = u16::try_from(name.len())
                .map_err(|_| Error::InvalidArgument(format!("array name too long: {name}")))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(4);
            for e in t.shape().0 {
                out.extend_from_slice(&(e as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().expect("4 bytes");
        if magic != MAGIC {
            return Err(Error::BadMagic(magic));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: VERSION,
            });
        }
        let header_len = r.u32("header length")? as usize;
        let header = std::str::from_utf8(r.take(header_len, "header")?).map_err(|_| Error::Format {
            format: "checkpoint",
            detail: "header is not UTF-8".into(),
        })?;
        let pairs = kv::parse(header)?;
        let mut model = ModelConfig::default();
        let mut train = TrainConfig::default();
        let (mut epoch, mut step) = (0usize, 0u64);
        for (k, v) in &pairs {
            match k.as_str() {
                "checkpoint.epoch" => epoch = kv::value(k, v)?,
                "checkpoint.step" => step = kv::value(k, v)?,
                _ => {
                    if !model.set(k, v)? && !train.set(k, v)? {
                        return Err(Error::Config(format!("unknown header key {k:?}")));
                    }
                }
            }
        }

        let count = r.u32("array count")?;
        let mut params = BTreeMap::new();
        let mut adam = AdamState::new();
        adam.step = step;
        for _ in 0..count {
            let len = u16::from_le_bytes(r.take(2, "name length")?.try_into().expect("2 bytes")) as usize;
            let name = String::from_utf8(r.take(len, "array name")?.to_vec()).map_err(|_| Error::Format {
                format: "checkpoint",
                detail: "array name is not UTF-8".into(),
            })?;
            let rank = r.take(1, "rank")?[0];
            if rank != 4 {
                return Err(Error::Format {
                    format: "checkpoint",
                    detail: format!("array {name} has rank {rank}"),
                });
            }
            let mut dims = [0usize; 4];
            for d in dims.iter_mut() {
                *d = r.u32("extent")? as usize;
            }
            let shape = Shape(dims);
            let raw = r.take(shape.numel() * 4, "array data")?;
            let data = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            let t = Tensor::from_vec(shape, data)?;
            if let Some(k) = name.strip_prefix("adam.m.") {
                adam.first.insert(k.to_string(), t);
            } else if let Some(k) = name.strip_prefix("adam.v.") {
                adam.second.insert(k.to_string(), t);
            } else {
                params.insert(name, t);
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Format {
                format: "checkpoint",
                detail: format!("{} trailing bytes", bytes.len() - r.pos),
            });
        }
        let weights = ModelWeights { params };
        weights.validate(&model)?;
        Ok(Checkpoint {
            model,
            train,
            epoch,
            weights,
            adam,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(Error::Truncated(what))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::write(path, ckpt.to_bytes()?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    Checkpoint::from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Variant;
    use crate::rng::stream;

    fn sample() -> Checkpoint {
        let cfg = ModelConfig {
            variant: Variant::DeformSingle,
            base_channels: 2,
            drdb_count: 1,
            drdb_growth: 2,
            ..Default::default()
        };
        let w = ModelWeights::init(&cfg, &mut stream(4, &[]));
        let mut c = Checkpoint::new(cfg, TrainConfig::default(), w.clone());
        c.adam.step = 7;
        c.epoch = 3;
        for (k, v) in &w.params {
            c.adam.first.insert(k.clone(), v.scale(0.5));
            c.adam.second.insert(k.clone(), v.map(|x| x * x));
        }
        c
    }

    #[test]
    fn round_trip_is_exact() {
        let c = sample();
        let bytes = c.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn damaged_files_rejected() {
        let bytes = sample().to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::BadMagic(_))));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(
            Checkpoint::from_bytes(&bad),
            Err(Error::VersionMismatch { found: 9, expected: 1 })
        ));
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::Truncated(_))
        ));
        assert!(matches!(Checkpoint::from_bytes(&bytes[..2]), Err(Error::Truncated(_))));
    }
}
