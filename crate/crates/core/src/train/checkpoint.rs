//! Binary checkpoint layout, all integers little-endian:
//!
//! ```text
//! "NOAH" | version u32 | config_len u32 | config text (UTF-8)
//! array_count u32 | { name_len u16 | name | rank u8 | extents u32×rank | f32×Π extents }*
//! SHA-256 of all preceding bytes
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Parameterized;
use crate::train::Model;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"NOAH";
pub const CHECKPOINT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;
const MAX_RANK: usize = 8;

/// A model together with the experiment that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    config: ExperimentConfig,
    model: Model<T>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Truncated(format!(
                "{what} needs {n} bytes at offset {}, {} left",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

impl<T: Scalar> Checkpoint<T> {
    pub fn new(config: ExperimentConfig, model: Model<T>) -> Result<Self> {
        if &config.model != model.config() {
            return Err(Error::Contract(
                "checkpoint config does not describe the model".into(),
            ));
        }
        Ok(Checkpoint { config, model })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn model(&self) -> &Model<T> {
        &self.model
    }

    pub fn into_parts(self) -> (ExperimentConfig, Model<T>) {
        (self.config, self.model)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let text = self.config.to_text();
        out.extend_from_slice(&(text.len() as u32).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        let mut arrays = Vec::new();
        self.model.visit_params(&mut |name, dims, values| {
            arrays.extend_from_slice(&(name.len() as u16).to_le_bytes());
            arrays.extend_from_slice(name.as_bytes());
            arrays.push(dims.len() as u8);
            for &d in dims {
                arrays.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in values {
                arrays.extend_from_slice(&(v.widen() as f32).to_le_bytes());
            }
        });
        let mut count = 0u32;
        self.model.visit_params(&mut |_, _, _| count += 1);
        out.extend_from_slice(&count.to_le_bytes());
        out.extend_from_slice(&arrays);
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::Format(format!(
                "checkpoint too short ({} bytes)",
                bytes.len()
            )));
        }
        if &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(Error::Format(format!(
                "bad checkpoint magic {:?}",
                &bytes[..4]
            )));
        }
        let mut r = Reader { bytes, pos: 4 };
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let text_len = r.u32("config length")? as usize;
        let text = std::str::from_utf8(r.take(text_len, "config text")?)
            .map_err(|e| Error::Format(format!("config text is not UTF-8: {e}")))?;
        let count = r.u32("array count")? as usize;
        let mut arrays = Vec::new();
        for k in 0..count {
            let name_len =
                u16::from_le_bytes(r.take(2, "name length")?.try_into().unwrap()) as usize;
            let name = std::str::from_utf8(r.take(name_len, "array name")?)
                .map_err(|e| Error::Format(format!("array {k} name is not UTF-8: {e}")))?
                .to_string();
            let rank = r.take(1, "rank")?[0] as usize;
            if rank > MAX_RANK {
                return Err(Error::Format(format!("array {name} has rank {rank}")));
            }
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(r.u32("extent")? as usize);
            }
            let len = dims
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| Error::Format(format!("array {name} extents overflow")))?;
            let values = r
                .take(len, "array values")?
                .chunks_exact(4)
                .map(|c| T::from_f64(f32::from_le_bytes(c.try_into().unwrap()) as f64))
                .collect();
            arrays.push((name, dims, values));
        }
        let body = r.pos;
        let trailer = r.take(DIGEST_LEN, "checksum")?;
        if r.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after checksum",
                bytes.len() - r.pos
            )));
        }
        if Sha256::digest(&bytes[..body]).as_slice() != trailer {
            return Err(Error::Checksum);
        }
        let config = ExperimentConfig::parse(text)?;
        config.model.backbone.validate()?;
        let mut model = Model::init(&config.model, 0)?;
        model.load_arrays(&arrays)?;
        Ok(Checkpoint { config, model })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heads::MergeMode;

    fn sample(head: &str) -> Checkpoint<f32> {
        let mut cfg = ExperimentConfig::default();
        cfg.set("head", head).unwrap();
        cfg.model.noah.merge = MergeMode::Mean;
        cfg.model.noah.use_bias = true;
        let model = Model::init(&cfg.model, 17).unwrap();
        Checkpoint::new(cfg, model).unwrap()
    }

    #[test]
    fn tolerates_no_byte_drift() {
        for head in ["noah", "gap"] {
            let ck = sample(head);
            let bytes = ck.to_bytes();
            let back = Checkpoint::<f32>::from_bytes(&bytes).unwrap();
            assert_eq!(back, ck);
            assert_eq!(back.to_bytes(), bytes);
        }
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        let ck = sample("noah");
        ck.save(&p).unwrap();
        assert_eq!(Checkpoint::<f32>::load(&p).unwrap(), ck);
        assert!(matches!(
            Checkpoint::<f32>::load(dir.path().join("none")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn distinct_failure_modes() {
        let bytes = sample("noah").to_bytes();
        assert!(matches!(
            Checkpoint::<f32>::from_bytes(&[]),
            Err(Error::Format(_))
        ));
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(
            Checkpoint::<f32>::from_bytes(&magic),
            Err(Error::Format(_))
        ));
        let mut version = bytes.clone();
        version[4] = 9;
        assert!(matches!(
            Checkpoint::<f32>::from_bytes(&version),
            Err(Error::Version {
                found: 9,
                expected: 1
            })
        ));
        assert!(matches!(
            Checkpoint::<f32>::from_bytes(&bytes[..bytes.len() - 5]),
            Err(Error::Truncated(_))
        ));
        assert!(matches!(
            Checkpoint::<f32>::from_bytes(&bytes[..6]),
            Err(Error::Truncated(_))
        ));
    }

    #[test]
    fn every_flipped_payload_byte_is_caught() {
        let ck = sample("gap");
        let bytes = ck.to_bytes();
        for k in (4..bytes.len()).step_by(7) {
            let mut b = bytes.clone();
            b[k] ^= 0x10;
            if let Ok(back) = Checkpoint::<f32>::from_bytes(&b) {
                panic!("flip at {k} loaded silently (equal: {})", back == ck);
            }
        }
    }

    #[test]
    fn config_must_describe_model() {
        let ck = sample("noah");
        let (mut cfg, model) = ck.into_parts();
        cfg.model.noah.groups = 2;
        assert!(Checkpoint::new(cfg, model).is_err());
    }
}
