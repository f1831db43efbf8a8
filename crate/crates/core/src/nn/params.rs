use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::autodiff::Bindings;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Named parameter table keyed by hierarchical path (`R.layer0.WQ`).
///
/// Iteration order is the lexicographic order of paths, which is also the
/// order used on disk.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, path: impl Into<String>, value: Tensor) -> Result<()> {
        let path = path.into();
        if self.tensors.contains_key(&path) {
            return Err(Error::InvalidArgument(format!("duplicate parameter `{path}`")));
        }
        self.tensors.insert(path, value);
        Ok(())
    }

    pub fn get(&self, path: &str) -> Option<&Tensor> {
        self.tensors.get(path)
    }

    pub fn get_mut(&mut self, path: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(path)
    }

    pub fn contains(&self, path: &str) -> bool {
        self.tensors.contains_key(path)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    /// Rounds every value to the nearest `f32`, so the table survives a
    /// 32-bit checkpoint unchanged.
    pub fn round_to_f32(&mut self) {
        for t in self.tensors.values_mut() {
            for v in t.data_mut() {
                *v = *v as f32 as f64;
            }
        }
    }

    pub fn as_map(&self) -> &BTreeMap<String, Tensor> {
        &self.tensors
    }
}

impl Bindings for ParamStore {
    fn lookup(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }
}

/// Glorot-uniform matrix: `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-a, a);
    let data = (0..fan_in * fan_out).map(|_| dist.sample(rng)).collect();
    Tensor::from_parts(vec![fan_in, fan_out], data)
}

pub fn normal(rng: &mut impl Rng, shape: &[usize], std: f64) -> Tensor {
    let dist = Normal::new(0.0, std).expect("positive std");
    let n = shape.iter().product();
    Tensor::from_parts(shape.to_vec(), (0..n).map(|_| dist.sample(rng)).collect())
}
