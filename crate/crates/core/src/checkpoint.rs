//! Binary checkpoints: run configuration, vocabulary and parameters.
//!
//! Layout, all integers little-endian `u64`:
//!
//! ```text
//! "SIMILE-CKPT 1\n"
//! len, config as TOML
//! count, then per token: len, UTF-8 bytes
//! parameter seed
//! count, then per parameter (sorted by name):
//!     len, name; rank, dims...; raw little-endian f64 values
//! ```
//!
//! Values are stored bit for bit, so save followed by load is exact.

use std::collections::BTreeMap;
use std::path::Path;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::vocab::Vocab;

const MAGIC: &[u8] = b"SIMILE-CKPT 1\n";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub vocab: Vocab,
    pub params: ParamStore,
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    put_u64(out, b.len() as u64);
    out.extend_from_slice(b);
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end =
            end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn len(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v)
            .ok()
            .filter(|&n| n <= self.buf.len())
            .ok_or_else(|| {
                Error::Checkpoint(format!("implausible length {v} at byte {}", self.pos))
            })
    }

    fn string(&mut self) -> Result<String> {
        let n = self.len()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        put_bytes(&mut out, self.config.to_toml().as_bytes());
        put_u64(&mut out, self.vocab.len() as u64);
        for t in self.vocab.tokens() {
            put_bytes(&mut out, t.as_bytes());
        }
        put_u64(&mut out, self.params.seed());
        put_u64(&mut out, self.params.len() as u64);
        for (name, t) in self.params.iter() {
            put_bytes(&mut out, name.as_bytes());
            put_u64(&mut out, t.shape().len() as u64);
            for &d in t.shape() {
                put_u64(&mut out, d as u64);
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        if !buf.starts_with(MAGIC) {
            return Err(Error::Checkpoint(
                "not a checkpoint file (bad header)".into(),
            ));
        }
        let mut r = Reader {
            buf,
            pos: MAGIC.len(),
        };
        let config = RunConfig::from_toml(&r.string()?)?;
        let n_tokens = r.len()?;
        let tokens = (0..n_tokens)
            .map(|_| r.string())
            .collect::<Result<Vec<_>>>()?;
        let vocab = Vocab::from_tokens(tokens)?;
        let seed = r.u64()?;
        let n_params = r.len()?;
        let mut map = BTreeMap::new();
        for _ in 0..n_params {
            let name = r.string()?;
            let rank = r.len()?;
            let shape = (0..rank).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
            let count = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let count = count.filter(|&c| c <= buf.len() / 8).ok_or_else(|| {
                Error::Checkpoint(format!("parameter {name} has implausible shape {shape:?}"))
            })?;
            let raw = r.take(count * 8)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(e.to_string()))?;
            if map.insert(name.clone(), t).is_some() {
                return Err(Error::Checkpoint(format!("duplicate parameter {name}")));
            }
        }
        if r.pos != buf.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                buf.len() - r.pos
            )));
        }
        Ok(Self {
            config,
            vocab,
            params: ParamStore::from_map(map, seed),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CyclicModel, ModelDims};

    fn sample() -> Checkpoint {
        let vocab = Vocab::build(
            [vec!["a".to_string(), "b".to_string()]]
                .iter()
                .map(|v| v.as_slice()),
            1,
        );
        let dims = ModelDims {
            vocab: vocab.len(),
            embed: 3,
            hidden: 2,
            ffn: 4,
        };
        let (_, params) = CyclicModel::init(dims, 11).unwrap();
        Checkpoint {
            config: RunConfig::default(),
            vocab,
            params,
        }
    }

    #[test]
    fn bytes_round_trip_exactly() {
        let c = sample();
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let c = sample();
        c.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), c);
    }

    #[test]
    fn corrupt_input_is_an_error() {
        let bytes = sample().to_bytes();
        assert!(Checkpoint::from_bytes(b"garbage").is_err());
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }
}
