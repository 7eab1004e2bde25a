//! Binary checkpoint format.
//!
//! Layout: the magic `PHCK1\n`, a little-endian `u64` header length, a UTF-8
//! JSON header, then the raw little-endian payloads of every tensor in
//! header (name) order. Offsets in the header are relative to the start of
//! the payload section.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Model, ModelConfig};
use crate::tensor::{numel, DType, Scalar, Tensor};

pub const MAGIC: &[u8; 6] = b"PHCK1\n";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct TensorEntry {
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub length: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct Header {
    pub format_version: u32,
    pub model_config: ModelConfig,
    pub tensors: BTreeMap<String, TensorEntry>,
}

impl Header {
    /// Parses the header and returns it with the payload start offset.
    pub fn parse(bytes: &[u8]) -> Result<(Header, usize)> {
        if bytes.len() < MAGIC.len() + 8 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let mut len = [0u8; 8];
        len.copy_from_slice(&bytes[MAGIC.len()..MAGIC.len() + 8]);
        let len = usize::try_from(u64::from_le_bytes(len)).map_err(|_| Error::Format("header length overflows".into()))?;
        let start = MAGIC.len() + 8;
        let end = start
            .checked_add(len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::Format("truncated checkpoint header".into()))?;
        let header: Header = serde_json::from_slice(&bytes[start..end])
            .map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
        if header.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint format-version {}",
                header.format_version
            )));
        }
        Ok((header, end))
    }

    pub fn read(path: &Path) -> Result<Header> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::parse(&bytes)?.0)
    }
}

/// Model configuration plus every named tensor, buffers included.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub config: ModelConfig,
    pub tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn from_model(model: &Model<T>) -> Self {
        let tensors = model
            .store
            .ids()
            .map(|id| (model.store.name(id).to_string(), model.store.get(id).clone()))
            .collect();
        Checkpoint {
            config: model.config.clone(),
            tensors,
        }
    }

    /// Rebuilds the model; the tensor set must match the architecture exactly.
    pub fn to_model(&self) -> Result<Model<T>> {
        let mut model = Model::build(&self.config, 0)?;
        let mut problems = Vec::new();
        for id in model.store.ids().collect::<Vec<_>>() {
            let name = model.store.name(id).to_string();
            match self.tensors.get(&name) {
                Some(t) if t.shape() == model.store.get(id).shape() => model.store.set(id, t.clone())?,
                Some(t) => problems.push(format!("{name}: shape {:?}", t.shape())),
                None => problems.push(format!("{name}: missing")),
            }
        }
        for name in self.tensors.keys() {
            if model.store.lookup(name).is_none() {
                problems.push(format!("{name}: not part of the model"));
            }
        }
        if !problems.is_empty() {
            problems.sort();
            return Err(Error::Format(format!(
                "checkpoint does not match its model config: {}",
                problems.join(", ")
            )));
        }
        Ok(model)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut offset = 0u64;
        let mut index = BTreeMap::new();
        for (name, t) in &self.tensors {
            let length = (t.len() * T::DTYPE.size()) as u64;
            index.insert(
                name.clone(),
                TensorEntry {
                    dtype: T::DTYPE,
                    shape: t.shape().to_vec(),
                    offset,
                    length,
                },
            );
            offset += length;
        }
        let header = Header {
            format_version: FORMAT_VERSION,
            model_config: self.config.clone(),
            tensors: index,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(MAGIC.len() + 8 + json.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in self.tensors.values() {
            for &v in t.data() {
                v.write_le(&mut out);
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, start) = Header::parse(bytes)?;
        let payload = &bytes[start..];
        let mut tensors = BTreeMap::new();
        for (name, e) in header.tensors {
            if e.dtype != T::DTYPE {
                return Err(Error::Format(format!(
                    "{name} is {}, expected {}",
                    e.dtype.name(),
                    T::DTYPE.name()
                )));
            }
            let count = numel(&e.shape);
            if e.shape.contains(&0) || e.length != (count * T::DTYPE.size()) as u64 {
                return Err(Error::Format(format!("{name}: length does not match shape {:?}", e.shape)));
            }
            let lo = usize::try_from(e.offset).map_err(|_| Error::Format("offset overflows".into()))?;
            let hi = lo
                .checked_add(e.length as usize)
                .filter(|&h| h <= payload.len())
                .ok_or_else(|| Error::Format(format!("{name}: truncated payload")))?;
            let data = payload[lo..hi].chunks_exact(T::DTYPE.size()).map(T::read_le).collect();
            tensors.insert(name, Tensor::new(&e.shape, data)?);
        }
        Ok(Checkpoint {
            config: header.model_config,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::PhResNetConfig;

    fn small() -> ModelConfig {
        ModelConfig::Phresnet(PhResNetConfig {
            width: 4,
            blocks: vec![1, 1],
            refiners: 1,
            ..Default::default()
        })
    }

    #[test]
    fn bytes_round_trip_exactly() {
        let m = Model::<f32>::build(&small(), 3).unwrap();
        let c = Checkpoint::from_model(&m);
        let bytes = c.to_bytes().unwrap();
        let back = Checkpoint::<f32>::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes().unwrap(), bytes);
        let rebuilt = back.to_model().unwrap();
        assert_eq!(Checkpoint::from_model(&rebuilt), c);
    }

    #[test]
    fn rejects_corruption() {
        let m = Model::<f64>::build(&small(), 3).unwrap();
        let bytes = Checkpoint::from_model(&m).to_bytes().unwrap();
        assert!(matches!(Checkpoint::<f64>::from_bytes(&bytes[..bytes.len() - 1]), Err(Error::Format(_))));
        assert!(matches!(Checkpoint::<f64>::from_bytes(b"PHCK2\nxxxxxxxx"), Err(Error::Format(_))));
        assert!(matches!(Checkpoint::<f32>::from_bytes(&bytes), Err(Error::Format(_))));
        let mut c = Checkpoint::from_model(&m);
        c.tensors.remove("head.bias");
        assert!(matches!(c.to_model(), Err(Error::Format(_))));
    }
}
