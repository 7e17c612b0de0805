//! Checkpoint container.
//!
//! All integers and floats are little-endian.
//!
//! | offset   | size        | field                                        |
//! |----------|-------------|----------------------------------------------|
//! | 0        | 8           | magic `PCRLCKPT`                             |
//! | 8        | 4           | `u32` format version (1)                     |
//! | 12       | 4           | `u32` length `L` of the model configuration  |
//! | 16       | L           | UTF-8 model configuration, `key = value` lines |
//! | 16+L     | 8           | `u64` optimizer step `t`                     |
//! | 24+L     | 4           | `u32` number of arrays `A`                   |
//!
//! followed by `A` arrays, each
//!
//! | size        | field                         |
//! |-------------|-------------------------------|
//! | 2           | `u16` name length `n`         |
//! | n           | UTF-8 name                    |
//! | 1           | `u8` rank `r`                 |
//! | 4·r         | `u32` dimensions              |
//! | 4·∏dims     | `f32` values, row-major       |
//!
//! Parameter arrays are named `<layer>.weight` / `<layer>.bias` (see
//! [`MetricModel::param_arrays`]). When optimizer state is present, every
//! parameter array `p` is followed later by `adam.m.p` and `adam.v.p`.

use std::collections::HashMap;
use std::path::Path;

use super::adam::AdamState;
use super::model::{Init, MetricModel, ModelConfig};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"PCRLCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: MetricModel<f32>,
    pub optimizer: Option<AdamState<f32>>,
}

impl Checkpoint {
    pub fn new(model: MetricModel<f32>, optimizer: Option<AdamState<f32>>) -> Self {
        Self { model, optimizer }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let cfg = self.model.config.to_kv();
        out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
        out.extend_from_slice(cfg.as_bytes());
        let step = self.optimizer.as_ref().map_or(0, |s| s.step);
        out.extend_from_slice(&step.to_le_bytes());

        let params = self.model.param_arrays();
        let mut arrays: Vec<(String, Vec<usize>, &Vec<f32>)> = params.clone();
        if let Some(state) = &self.optimizer {
            for (i, (name, shape, _)) in params.iter().enumerate() {
                arrays.push((format!("adam.m.{name}"), shape.clone(), &state.m[i]));
            }
            for (i, (name, shape, _)) in params.iter().enumerate() {
                arrays.push((format!("adam.v.{name}"), shape.clone(), &state.v[i]));
            }
        }
        out.extend_from_slice(&(arrays.len() as u32).to_le_bytes());
        for (name, shape, data) in arrays {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(shape.len() as u8);
            for d in &shape {
                out.extend_from_slice(&(*d as u32).to_le_bytes());
            }
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::malformed("checkpoint", 0, "bad magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::malformed(
                "checkpoint",
                8,
                format!("unsupported version {version}"),
            ));
        }
        let len = r.u32()? as usize;
        let at = r.pos;
        let text = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::malformed("checkpoint", at as u64, "config is not utf-8"))?;
        let config = ModelConfig::from_kv(text)?;
        let step = r.u64()?;
        let count = r.u32()? as usize;
        let mut arrays: HashMap<String, (u64, Vec<usize>, Vec<f32>)> = HashMap::new();
        for _ in 0..count {
            let at = r.pos as u64;
            let n = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(n)?)
                .map_err(|_| Error::malformed("checkpoint", at, "array name is not utf-8"))?
                .to_string();
            let rank = r.take(1)?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let len: usize = shape.iter().product();
            let raw = r.take(len * 4)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            arrays.insert(name, (at, shape, data));
        }
        if r.pos != bytes.len() {
            return Err(Error::malformed("checkpoint", r.pos as u64, "trailing bytes"));
        }

        let mut model = MetricModel::<f32>::new(config, 0, Init::Symmetric)?;
        let layout: Vec<(String, Vec<usize>)> =
            model.param_arrays().into_iter().map(|(n, s, _)| (n, s)).collect();
        let has_state = layout
            .first()
            .is_some_and(|(n, _)| arrays.contains_key(&format!("adam.m.{n}")));
        let mut fetch = |name: &str, shape: &[usize]| -> Result<Vec<f32>> {
            let (at, s, data) = arrays.remove(name).ok_or_else(|| {
                Error::malformed("checkpoint", r.pos as u64, format!("missing array {name}"))
            })?;
            if s != shape {
                return Err(Error::malformed(
                    "checkpoint",
                    at,
                    format!("array {name} has shape {s:?}, expected {shape:?}"),
                ));
            }
            Ok(data)
        };
        let mut values = Vec::with_capacity(layout.len());
        for (name, shape) in &layout {
            values.push(fetch(name, shape)?);
        }
        for (dst, v) in model.param_arrays_mut().into_iter().zip(values) {
            *dst = v;
        }
        let optimizer = if has_state {
            let mut m = Vec::with_capacity(layout.len());
            let mut v = Vec::with_capacity(layout.len());
            for (name, shape) in &layout {
                m.push(fetch(&format!("adam.m.{name}"), shape)?);
                v.push(fetch(&format!("adam.v.{name}"), shape)?);
            }
            Some(AdamState { step, m, v })
        } else {
            None
        };
        if let Some(extra) = arrays.keys().next() {
            return Err(Error::malformed(
                "checkpoint",
                arrays[extra].0,
                format!("unexpected array {extra}"),
            ));
        }
        Ok(Self { model, optimizer })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::malformed(
                "checkpoint",
                self.pos as u64,
                format!("truncated: needed {n} more bytes"),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::adam::{Adam, LrSchedule};

    fn small() -> MetricModel<f32> {
        let cfg = ModelConfig {
            q1: 8,
            q2: 4,
            k1: 3,
            k2: 3,
            level1_widths: vec![4],
            level2_widths: vec![5],
            head_hidden: 3,
            ..Default::default()
        };
        MetricModel::new(cfg, 1, Init::Random).unwrap()
    }

    #[test]
    fn round_trip_with_and_without_state() {
        let model = small();
        let ck = Checkpoint::new(model.clone(), None);
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back, ck);

        let mut opt = Adam::new(&model, LrSchedule::default());
        opt.state.step = 17;
        opt.state.m[0][0] = 0.5;
        let ck = Checkpoint::new(model, Some(opt.state.clone()));
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn header_layout() {
        let bytes = Checkpoint::new(small(), None).to_bytes();
        assert_eq!(&bytes[..8], b"PCRLCKPT");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
    }

    #[test]
    fn truncation_reports_offset() {
        let bytes = Checkpoint::new(small(), None).to_bytes();
        let err = Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(err, Error::Malformed { .. }), "{err}");
        let err = Checkpoint::from_bytes(b"NOTACKPT").unwrap_err();
        assert!(matches!(err, Error::Malformed { offset: 0, .. }));
    }
}
