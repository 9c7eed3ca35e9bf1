//! Binary model container: magic, JSON header, tensor index, little-endian
//! `f64` payload.
//!
//! ```text
//! magic[8] | u64 header_len | header JSON | u64 n_blocks
//! | n_blocks x (u32 name_len, name, u32 ndim, ndim x u64 dim, u64 n_values)
//! | payload: every block's values in index order, f64 LE
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::data::Normalizer;
use crate::error::{Error, Result};
use crate::nn::{ParamSet, ParamTensor};

pub const MAGIC: &[u8; 8] = b"IMCKPT\0\x01";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub model_kind: String,
    pub config: serde_json::Value,
    pub normalizer: Option<Normalizer>,
    /// Headers of embedded sub-models and free-form provenance.
    #[serde(default)]
    pub meta: BTreeMap<String, serde_json::Value>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub tensors: Vec<ParamTensor>,
}

impl Checkpoint {
    pub fn new(model_kind: &str, config: &impl Serialize, normalizer: Option<&Normalizer>) -> Result<Self> {
        Ok(Self {
            header: CheckpointHeader {
                format_version: FORMAT_VERSION,
                model_kind: model_kind.to_string(),
                config: serde_json::to_value(config)?,
                normalizer: normalizer.cloned(),
                meta: BTreeMap::new(),
            },
            tensors: Vec::new(),
        })
    }

    pub fn expect_kind(&self, kinds: &[&str]) -> Result<()> {
        if kinds.contains(&self.header.model_kind.as_str()) {
            Ok(())
        } else {
            Err(Error::Checkpoint(format!(
                "expected model kind {kinds:?}, found {:?}",
                self.header.model_kind
            )))
        }
    }

    pub fn config<T: DeserializeOwned>(&self) -> Result<T> {
        serde_json::from_value(self.header.config.clone())
            .map_err(|e| Error::Checkpoint(format!("config of {}: {e}", self.header.model_kind)))
    }

    pub fn normalizer(&self) -> Result<&Normalizer> {
        self.header
            .normalizer
            .as_ref()
            .ok_or_else(|| Error::Checkpoint(format!("{} checkpoint has no normalizer", self.header.model_kind)))
    }

    pub fn push_params(&mut self, prefix: &str, params: &ParamSet) {
        for t in params.iter() {
            let mut t = t.clone();
            t.name = format!("{prefix}{}", t.name);
            self.tensors.push(t);
        }
    }

    /// Overwrites `target` with the tensors stored under `prefix`; names,
    /// order and shapes must agree.
    pub fn load_params(&self, prefix: &str, target: &mut ParamSet) -> Result<()> {
        let stored: Vec<&ParamTensor> = self.tensors.iter().filter(|t| t.name.starts_with(prefix)).collect();
        if stored.len() != target.len() {
            return Err(Error::Checkpoint(format!(
                "{}: {} tensors under {prefix:?}, model has {}",
                self.header.model_kind,
                stored.len(),
                target.len()
            )));
        }
        for (dst, src) in target.iter_mut().zip(stored) {
            if src.name[prefix.len()..] != dst.name || src.shape != dst.shape {
                return Err(Error::Checkpoint(format!(
                    "tensor {} {:?} does not match model tensor {} {:?}",
                    src.name, src.shape, dst.name, dst.shape
                )));
            }
            dst.values.clone_from(&src.values);
        }
        Ok(())
    }

    /// Nests `sub` under `name`: header into `meta`, tensors prefixed `name/`.
    pub fn embed(&mut self, name: &str, sub: &Checkpoint) -> Result<()> {
        self.header.meta.insert(name.to_string(), serde_json::to_value(&sub.header)?);
        for t in &sub.tensors {
            let mut t = t.clone();
            t.name = format!("{name}/{}", t.name);
            self.tensors.push(t);
        }
        Ok(())
    }

    pub fn extract(&self, name: &str) -> Result<Checkpoint> {
        let header = self
            .header
            .meta
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("no embedded model {name:?}")))?;
        let prefix = format!("{name}/");
        Ok(Checkpoint {
            header: serde_json::from_value(header.clone())?,
            tensors: self
                .tensors
                .iter()
                .filter_map(|t| {
                    t.name.strip_prefix(&prefix).map(|n| ParamTensor {
                        name: n.to_string(),
                        shape: t.shape.clone(),
                        values: t.values.clone(),
                    })
                })
                .collect(),
        })
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let header = serde_json::to_vec(&self.header)?;
        w.write_all(MAGIC)?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        w.write_all(&(self.tensors.len() as u64).to_le_bytes())?;
        for t in &self.tensors {
            w.write_all(&(t.name.len() as u32).to_le_bytes())?;
            w.write_all(t.name.as_bytes())?;
            w.write_all(&(t.shape.len() as u32).to_le_bytes())?;
            for d in &t.shape {
                w.write_all(&(*d as u64).to_le_bytes())?;
            }
            w.write_all(&(t.values.len() as u64).to_le_bytes())?;
        }
        for t in &self.tensors {
            let mut buf = Vec::with_capacity(8 * t.values.len());
            for v in &t.values {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.write_to(&mut out)?;
        Ok(out)
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("truncated magic"))?;
        if &magic != MAGIC {
            return Err(bad("not a checkpoint file (bad magic)"));
        }
        let header_len = read_u64(&mut r)? as usize;
        if header_len > 1 << 30 {
            return Err(bad("implausible header length"));
        }
        let mut header = vec![0u8; header_len];
        r.read_exact(&mut header).map_err(|_| bad("truncated header"))?;
        let header: CheckpointHeader = serde_json::from_slice(&header)?;
        if header.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {}", header.format_version)));
        }
        let n_blocks = read_u64(&mut r)? as usize;
        let mut index = Vec::with_capacity(n_blocks.min(1 << 16));
        for _ in 0..n_blocks {
            let name_len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name).map_err(|_| bad("truncated index"))?;
            let name = String::from_utf8(name).map_err(|_| bad("tensor name is not UTF-8"))?;
            let ndim = read_u32(&mut r)? as usize;
            let shape = (0..ndim).map(|_| read_u64(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n = read_u64(&mut r)? as usize;
            index.push((name, shape, n));
        }
        let mut tensors = Vec::with_capacity(index.len());
        for (name, shape, n) in index {
            let mut buf = vec![0u8; 8 * n];
            r.read_exact(&mut buf).map_err(|_| bad("truncated payload"))?;
            let values = buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            tensors.push(ParamTensor::new(name, shape, values).map_err(|e| Error::Checkpoint(e.to_string()))?);
        }
        Ok(Self { header, tensors })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read_from(bytes)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes)
    }
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|_| Error::Checkpoint("truncated integer".into()))?;
    Ok(u64::from_le_bytes(b))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| Error::Checkpoint("truncated integer".into()))?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::AgentKind;
    use proptest::prelude::*;

    fn sample() -> Checkpoint {
        let mut params = ParamSet::new();
        params.push(ParamTensor::new("w", vec![2, 3], vec![1.0, -0.0, f64::MIN_POSITIVE, 1e300, -2.5, 0.1]).unwrap());
        params.push(ParamTensor::new("b", vec![2], vec![std::f64::consts::PI, -1e-320]).unwrap());
        let norm = Normalizer::fit_frames(AgentKind::Human, [vec![0.1, 0.7], vec![0.35, 2.0 / 3.0]].iter()).unwrap();
        let mut c = Checkpoint::new("embedding-human", &serde_json::json!({"latent_dim": 4}), Some(&norm)).unwrap();
        c.push_params("", &params);
        c
    }

    #[test]
    fn round_trip_bit_exact() {
        let c = sample();
        let back = Checkpoint::from_bytes(&c.to_bytes().unwrap()).unwrap();
        assert_eq!(back.header, c.header);
        for (a, b) in c.tensors.iter().zip(&back.tensors) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.shape, b.shape);
            let bits = |t: &ParamTensor| t.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
        assert_eq!(back.to_bytes().unwrap(), c.to_bytes().unwrap());
    }

    #[test]
    fn corrupt_input_rejected() {
        let bytes = sample().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        assert!(Checkpoint::from_bytes(&[]).is_err());
    }

    #[test]
    fn embed_and_extract() {
        let inner = sample();
        let mut outer = Checkpoint::new("dynamics-hhi", &serde_json::json!({}), None).unwrap();
        outer.embed("embedding", &inner).unwrap();
        let back = Checkpoint::from_bytes(&outer.to_bytes().unwrap()).unwrap();
        assert_eq!(back.extract("embedding").unwrap(), inner);
        assert!(back.extract("missing").is_err());
        assert!(back.normalizer().is_err());
    }

    #[test]
    fn load_params_checks_layout() {
        let c = sample();
        let mut target = ParamSet::new();
        target.push(ParamTensor::new("w", vec![2, 3], vec![0.0; 6]).unwrap());
        target.push(ParamTensor::new("b", vec![2], vec![0.0; 2]).unwrap());
        c.load_params("", &mut target).unwrap();
        assert_eq!(target.iter().next().unwrap().values, c.tensors[0].values);
        let mut wrong = ParamSet::new();
        wrong.push(ParamTensor::new("w", vec![3, 2], vec![0.0; 6]).unwrap());
        wrong.push(ParamTensor::new("b", vec![2], vec![0.0; 2]).unwrap());
        assert!(c.load_params("", &mut wrong).is_err());
    }

    proptest! {
        #[test]
        fn arbitrary_bits_survive(bits in prop::collection::vec(any::<u64>(), 1..50)) {
            let values: Vec<f64> = bits.iter().map(|b| f64::from_bits(*b)).collect();
            prop_assume!(values.iter().all(|v| v.is_finite()));
            let mut c = Checkpoint::new("x", &serde_json::json!(null), None).unwrap();
            c.tensors.push(ParamTensor { name: "t".into(), shape: vec![values.len()], values });
            let back = Checkpoint::from_bytes(&c.to_bytes().unwrap()).unwrap();
            let got: Vec<u64> = back.tensors[0].values.iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(got, bits);
        }
    }
}
