//! Binary checkpoint container.
//!
//! ```text
//! "MCDS1"
//! u32 n, then n tensors          model parameters and running statistics
//! u32 m, then m tensors          optimiser state, names prefixed "opt."
//! u64 config hash
//! tensor := u16 name_len, name (UTF-8), u8 dtype (0 = f32, 1 = f64),
//!           u8 ndim, ndim × u32 dims, little-endian data
//! ```

use std::path::Path;

use mcd_tensor::{DType, Element, RunningStats, Tensor};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::train::{AdamW, Moments};

pub const MAGIC: &[u8; 5] = b"MCDS1";

#[derive(Debug, Clone, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl AnyTensor {
    pub fn of<T: Element>(t: &Tensor<T>) -> Self {
        match T::DTYPE {
            DType::F32 => AnyTensor::F32(t.cast()),
            DType::F64 => AnyTensor::F64(t.cast()),
        }
    }

    pub fn dtype(&self) -> DType {
        match self {
            AnyTensor::F32(_) => DType::F32,
            AnyTensor::F64(_) => DType::F64,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.shape(),
            AnyTensor::F64(t) => t.shape(),
        }
    }

    /// The tensor as `T`; fails if the stored dtype differs.
    pub fn to<T: Element>(&self) -> Result<Tensor<T>> {
        if self.dtype() != T::DTYPE {
            return Err(Error::Checkpoint(format!("stored {:?} where {:?} was expected", self.dtype(), T::DTYPE)));
        }
        Ok(match self {
            AnyTensor::F32(t) => t.cast(),
            AnyTensor::F64(t) => t.cast(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<(String, AnyTensor)>,
    pub optimizer: Vec<(String, AnyTensor)>,
    pub config_hash: u64,
}

fn running_names(buffer: &str) -> (String, String) {
    (format!("{buffer}.running_mean"), format!("{buffer}.running_var"))
}

impl Checkpoint {
    /// Captures parameters, running statistics and optionally optimiser state.
    pub fn capture<T: Element>(store: &ParamStore<T>, optimizer: Option<&AdamW<T>>, epoch: usize, config_hash: u64) -> Self {
        let mut tensors: Vec<(String, AnyTensor)> =
            store.params().iter().map(|p| (p.name.clone(), AnyTensor::of(&p.value))).collect();
        for (name, stats) in store.buffers() {
            let (m, v) = running_names(name);
            let c = stats.mean.len();
            tensors.push((m, AnyTensor::of(&Tensor::new(&[c], stats.mean.clone()).expect("width"))));
            tensors.push((v, AnyTensor::of(&Tensor::new(&[c], stats.var.clone()).expect("width"))));
        }
        let mut opt = vec![("opt.epoch".to_string(), AnyTensor::F64(Tensor::scalar(epoch as f64)))];
        if let Some(o) = optimizer {
            opt.push(("opt.step".into(), AnyTensor::F64(Tensor::scalar(o.step as f64))));
            for (name, mom) in &o.moments {
                opt.push((format!("opt.m.{name}"), AnyTensor::of(&mom.m)));
                opt.push((format!("opt.v.{name}"), AnyTensor::of(&mom.v)));
            }
        }
        Self {
            tensors,
            optimizer: opt,
            config_hash,
        }
    }

    fn find<'a>(list: &'a [(String, AnyTensor)], name: &str) -> Option<&'a AnyTensor> {
        list.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Overwrites every parameter and running statistic of `store`.
    pub fn restore<T: Element>(&self, store: &mut ParamStore<T>) -> Result<()> {
        let names: Vec<String> = store.params().iter().map(|p| p.name.clone()).collect();
        for name in names {
            let t = Self::find(&self.tensors, &name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
            store.set_value(&name, t.to()?)?;
        }
        let buffers: Vec<String> = store.buffers().keys().cloned().collect();
        for name in buffers {
            let (m, v) = running_names(&name);
            let get = |n: &str| -> Result<Vec<T>> {
                Ok(Self::find(&self.tensors, n)
                    .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{n}`")))?
                    .to::<T>()?
                    .into_data())
            };
            store.set_buffer(&name, RunningStats { mean: get(&m)?, var: get(&v)? })?;
        }
        Ok(())
    }

    pub fn epoch(&self) -> Option<usize> {
        Self::find(&self.optimizer, "opt.epoch")
            .and_then(|t| t.to::<f64>().ok())
            .and_then(|t| t.item())
            .map(|e| e as usize)
    }

    pub fn restore_optimizer<T: Element>(&self) -> Result<AdamW<T>> {
        let mut opt = AdamW::new();
        if let Some(step) = Self::find(&self.optimizer, "opt.step") {
            opt.step = step.to::<f64>()?.item().unwrap_or(0.0) as u64;
        }
        for (name, m) in &self.optimizer {
            if let Some(param) = name.strip_prefix("opt.m.") {
                let v = Self::find(&self.optimizer, &format!("opt.v.{param}"))
                    .ok_or_else(|| Error::Checkpoint(format!("missing second moment of `{param}`")))?;
                opt.moments.insert(param.to_string(), Moments { m: m.to()?, v: v.to()? });
            }
        }
        Ok(opt)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        for section in [&self.tensors, &self.optimizer] {
            out.extend_from_slice(&(section.len() as u32).to_le_bytes());
            for (name, t) in section.iter() {
                out.extend_from_slice(&(name.len() as u16).to_le_bytes());
                out.extend_from_slice(name.as_bytes());
                out.push(t.dtype().code());
                out.push(t.shape().len() as u8);
                for &d in t.shape() {
                    out.extend_from_slice(&(d as u32).to_le_bytes());
                }
                match t {
                    AnyTensor::F32(t) => t.data().iter().for_each(|&v| v.write_le(&mut out)),
                    AnyTensor::F64(t) => t.data().iter().for_each(|&v| v.write_le(&mut out)),
                }
            }
        }
        out.extend_from_slice(&self.config_hash.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Checkpoint("bad magic; not an MCDS1 checkpoint".into()));
        }
        let tensors = r.section()?;
        let optimizer = r.section()?;
        let config_hash = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self {
            tensors,
            optimizer,
            config_hash,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn data<T: Element>(&mut self, shape: &[usize]) -> Result<Tensor<T>> {
        let n: usize = shape.iter().product();
        let size = T::DTYPE.size();
        let raw = self.take(n.checked_mul(size).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
        let data = raw.chunks_exact(size).map(T::read_le).collect();
        Ok(Tensor::new(shape, data)?)
    }

    fn section(&mut self) -> Result<Vec<(String, AnyTensor)>> {
        let count = self.u32()?;
        let mut out = Vec::new();
        for _ in 0..count {
            let len = self.u16()? as usize;
            let name = std::str::from_utf8(self.take(len)?)
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
                .to_string();
            let dtype = DType::from_code(self.u8()?)
                .ok_or_else(|| Error::Checkpoint(format!("unknown dtype code for `{name}`")))?;
            let ndim = self.u8()? as usize;
            let shape = (0..ndim).map(|_| self.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let t = match dtype {
                DType::F32 => AnyTensor::F32(self.data(&shape)?),
                DType::F64 => AnyTensor::F64(self.data(&shape)?),
            };
            out.push((name, t));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Group;

    #[test]
    fn layout_of_a_single_tensor() {
        let mut store = ParamStore::<f32>::new();
        store.add("w", Group::Decoder, Tensor::from_f64(&[2], &[1.0, -2.0]).unwrap());
        let bytes = Checkpoint::capture(&store, None, 3, 0xAB).encode();
        let mut expected = b"MCDS1".to_vec();
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&1u16.to_le_bytes());
        expected.extend_from_slice(b"w");
        expected.extend_from_slice(&[0, 1]);
        expected.extend_from_slice(&2u32.to_le_bytes());
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        expected.extend_from_slice(&(-2.0f32).to_le_bytes());
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&9u16.to_le_bytes());
        expected.extend_from_slice(b"opt.epoch");
        expected.extend_from_slice(&[1, 0]);
        expected.extend_from_slice(&3.0f64.to_le_bytes());
        expected.extend_from_slice(&0xABu64.to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn rejects_corruption() {
        let mut store = ParamStore::<f64>::new();
        store.add("w", Group::Decoder, Tensor::zeros(&[3]));
        let bytes = Checkpoint::capture(&store, None, 0, 1).encode();
        assert!(Checkpoint::decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::decode(&bad).is_err());
        assert!(Checkpoint::decode(&[bytes.clone(), vec![0]].concat()).is_err());
    }
}
