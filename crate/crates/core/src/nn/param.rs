use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A named, shaped block of trainable values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl ParamTensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let name = name.into();
        let expected: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) || values.len() != expected {
            return Err(Error::InvalidArgument(format!(
                "param {name}: shape {shape:?} does not hold {} values",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("param {name}")));
        }
        Ok(Self {
            name,
            shape,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Index of a tensor inside a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Ordered collection of parameter tensors owned by one model.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    tensors: Vec<ParamTensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_tensors(tensors: Vec<ParamTensor>) -> Self {
        Self { tensors }
    }

    pub fn push(&mut self, t: ParamTensor) -> ParamId {
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    /// Weight matrix `out x in` drawn from uniform(±sqrt(6/(in+out))).
    pub fn add_glorot<R: Rng>(&mut self, name: &str, out: usize, inp: usize, rng: &mut R) -> ParamId {
        let bound = (6.0 / (inp + out) as f64).sqrt();
        let values = (0..out * inp).map(|_| rng.gen_range(-bound..bound)).collect();
        self.push(ParamTensor {
            name: name.to_string(),
            shape: vec![out, inp],
            values,
        })
    }

    pub fn add_zeros(&mut self, name: &str, shape: Vec<usize>) -> ParamId {
        let n = shape.iter().product();
        self.push(ParamTensor {
            name: name.to_string(),
            shape,
            values: vec![0.0; n],
        })
    }

    #[inline]
    pub fn get(&self, id: ParamId) -> &ParamTensor {
        &self.tensors[id.0]
    }

    #[inline]
    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamTensor {
        &mut self.tensors[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.tensors.iter().position(|t| t.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamTensor> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ParamTensor> {
        self.tensors.iter_mut()
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(ParamTensor::len).sum()
    }

    pub fn into_tensors(self) -> Vec<ParamTensor> {
        self.tensors
    }

    /// Checks that `other` has the same names and shapes in the same order.
    pub fn check_layout(&self, other: &ParamSet) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter blocks, found {}",
                self.len(),
                other.len()
            )));
        }
        for (a, b) in self.iter().zip(other.iter()) {
            if a.name != b.name || a.shape != b.shape {
                return Err(Error::Checkpoint(format!(
                    "parameter block mismatch: expected {} {:?}, found {} {:?}",
                    a.name, a.shape, b.name, b.shape
                )));
            }
        }
        Ok(())
    }
}
