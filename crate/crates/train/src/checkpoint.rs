//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "MOHSACK1"  u32 version  u32 entry_count
//! entry*: u32 name_len  name (UTF-8)  u32 rank  u32 dims[rank]  u8 dtype  payload
//! u32 echo_len  echo (UTF-8)
//! ```
//!
//! `dtype` is 0 for `f32` and 1 for `f64`; the payload is the raw
//! little-endian elements. The echo holds the model config, the training
//! config and the epoch as `[model]`, `[train]` and `[state]` sections of
//! `key = value` lines.

use std::path::Path;

use mohsa_core::{ModelConfig, ModelParams, ModelWeights, Scalar, Tensor};

use crate::error::{read_file, write_file, Result, TrainError};

pub const MAGIC: &[u8; 8] = b"MOHSACK1";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T: Scalar> {
    pub model: ModelConfig,
    pub weights: ModelWeights<T>,
    /// Training config in `key = value` form (may be empty).
    pub train_echo: String,
    pub epoch: usize,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| TrainError::Checkpoint(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    put_u32(out, s.len())?;
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

impl<T: Scalar> Checkpoint<T> {
    pub fn echo(&self) -> String {
        format!(
            "[model]\n{}[train]\n{}[state]\nepoch = {}\n",
            self.model.to_kv_string(),
            self.train_echo,
            self.epoch
        )
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION as usize)?;
        let entries = self.weights.entries();
        put_u32(&mut out, entries.len())?;
        for (name, t) in entries {
            put_str(&mut out, &name)?;
            put_u32(&mut out, t.rank())?;
            for &d in t.shape() {
                put_u32(&mut out, d)?;
            }
            out.push(T::DTYPE_CODE);
            for &v in t.data() {
                v.write_le(&mut out);
            }
        }
        put_str(&mut out, &self.echo())?;
        Ok(out)
    }

    /// Decodes a checkpoint, rebuilding the model config from the echo and
    /// rejecting any array whose name or shape disagrees with it.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(TrainError::Checkpoint("bad magic, not a MOHSACK1 file".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(TrainError::Checkpoint(format!("unsupported version {version}")));
        }
        let count = r.u32()? as usize;
        let mut arrays = Vec::with_capacity(count);
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let dtype = r.take(1)?[0];
            if dtype != T::DTYPE_CODE {
                return Err(TrainError::Checkpoint(format!(
                    "{name}: dtype code {dtype}, expected {} ({})",
                    T::DTYPE_CODE,
                    T::NAME
                )));
            }
            let numel: usize = shape.iter().product();
            let payload = r.take(numel * T::BYTES)?;
            let data = payload.chunks_exact(T::BYTES).map(T::read_le).collect();
            let t = Tensor::new(shape, data).map_err(|e| TrainError::Checkpoint(format!("{name}: {e}")))?;
            arrays.push((name, t));
        }
        let echo = r.string()?;
        if r.pos != bytes.len() {
            return Err(TrainError::Checkpoint(format!(
                "{} trailing bytes after the config echo",
                bytes.len() - r.pos
            )));
        }
        let (model_text, train_echo, epoch) = split_echo(&echo)?;
        let model = ModelConfig::from_kv_str(&model_text)
            .map_err(|e| TrainError::Checkpoint(format!("model echo: {e}")))?;
        let weights = assemble(&model, arrays)?;
        Ok(Self {
            model,
            weights,
            train_echo,
            epoch,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.encode()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&read_file(path)?)
    }
}

fn assemble<T: Scalar>(cfg: &ModelConfig, arrays: Vec<(String, Tensor<T>)>) -> Result<ModelWeights<T>> {
    let shapes = ModelParams::shapes(cfg)?;
    let expected = shapes.entries();
    if expected.len() != arrays.len() {
        return Err(TrainError::Checkpoint(format!(
            "{} arrays stored, the model config needs {}",
            arrays.len(),
            expected.len()
        )));
    }
    let mut it = arrays.into_iter();
    shapes.try_map(&mut |name, shape| {
        let (stored, t) = it.next().expect("lengths checked");
        if stored != name || t.shape() != shape.as_slice() {
            return Err(TrainError::Checkpoint(format!(
                "array {stored} {:?} does not match expected {name} {shape:?}",
                t.shape()
            )));
        }
        Ok(t)
    })
}

fn split_echo(echo: &str) -> Result<(String, String, usize)> {
    let mut sections: [String; 3] = Default::default();
    let mut current = None;
    for line in echo.lines() {
        match line.trim() {
            "[model]" => current = Some(0),
            "[train]" => current = Some(1),
            "[state]" => current = Some(2),
            _ => match current {
                Some(i) => {
                    sections[i].push_str(line);
                    sections[i].push('\n');
                }
                None if line.trim().is_empty() => {}
                None => return Err(TrainError::Checkpoint("config echo lacks a [model] section".into())),
            },
        }
    }
    let mut state = mohsa_core::kv::KvReader::new(&sections[2])
        .map_err(|e| TrainError::Checkpoint(format!("state echo: {e}")))?;
    let epoch = state
        .required("epoch")
        .map_err(|e| TrainError::Checkpoint(format!("state echo: {e}")))?;
    let [model, train, _] = sections;
    Ok((model, train, epoch))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            TrainError::Checkpoint(format!("truncated file: need {n} bytes at offset {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| TrainError::Checkpoint("string is not UTF-8".into()))
    }
}

/// Loads `path` and checks that it was written for `cfg`.
pub fn load_for(path: &Path, cfg: &ModelConfig) -> Result<Checkpoint<f32>> {
    let ck = Checkpoint::<f32>::load(path)?;
    if ck.model != *cfg {
        return Err(TrainError::Checkpoint(format!(
            "{} was written for a different model config",
            path.display()
        )));
    }
    Ok(ck)
}

#[cfg(test)]
mod tests {
    use super::*;
    use mohsa_core::init_weights;

    fn sample() -> Checkpoint<f32> {
        let model = ModelConfig::tiny_test();
        Checkpoint {
            weights: init_weights(&model, 9).unwrap(),
            model,
            train_echo: "seed = 9\n".into(),
            epoch: 4,
        }
    }

    #[test]
    fn roundtrip_is_bitwise() {
        let ck = sample();
        let bytes = ck.encode().unwrap();
        assert_eq!(&bytes[..8], MAGIC);
        let back = Checkpoint::<f32>::decode(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.encode().unwrap(), bytes);
    }

    #[test]
    fn rejects_shape_mismatch() {
        let mut ck = sample();
        let wrong = ModelConfig {
            num_classes: 4,
            ..ck.model.clone()
        };
        ck.model = wrong;
        let err = Checkpoint::<f32>::decode(&ck.encode().unwrap()).unwrap_err();
        assert!(err.to_string().contains("head.w"), "{err}");
    }

    #[test]
    fn rejects_truncation_and_dtype() {
        let bytes = sample().encode().unwrap();
        assert!(Checkpoint::<f32>::decode(&bytes[..bytes.len() - 3]).is_err());
        assert!(Checkpoint::<f64>::decode(&bytes).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::<f32>::decode(&bad).is_err());
    }
}
