use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng;

/// Standard deviation of the truncated-normal initializer.
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Param {
    pub(crate) name: String,
    pub(crate) value: Tensor,
    pub(crate) grad: Vec<f64>,
    pub(crate) m: Vec<f64>,
    pub(crate) v: Vec<f64>,
    pub(crate) decay: bool,
}

/// Named trainable tensors plus their gradients and optimizer moments.
///
/// Every randomly initialized tensor draws from a stream named after the
/// tensor, so initialization depends only on the seed and the name.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterStore {
    pub(crate) params: Vec<Param>,
    index: BTreeMap<String, ParamId>,
    seed: u64,
    pub(crate) step: u64,
    pub(crate) has_grad: bool,
}

impl ParameterStore {
    pub fn new(seed: u64) -> Self {
        Self {
            params: Vec::new(),
            index: BTreeMap::new(),
            seed,
            step: 0,
            has_grad: false,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Adds a tensor. Weight decay applies to it when `decay` is set.
    pub fn add(&mut self, name: &str, value: Tensor, decay: bool) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::DuplicateId { id: name.into() });
        }
        let id = ParamId(self.params.len());
        let n = value.len();
        self.params.push(Param {
            name: name.to_string(),
            value,
            grad: vec![0.0; n],
            m: vec![0.0; n],
            v: vec![0.0; n],
            decay,
        });
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    /// Truncated normal (std 0.02), decayed.
    pub fn add_normal(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        let mut t = Tensor::zeros(shape);
        let mut r = rng::stream(self.seed, name);
        for x in t.data_mut() {
            *x = rng::truncated_normal(&mut r, INIT_STD);
        }
        self.add(name, t, true)
    }

    /// Zeros, not decayed (biases).
    pub fn add_zeros(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        self.add(name, Tensor::zeros(shape), false)
    }

    /// Ones, not decayed (normalization gains).
    pub fn add_ones(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        let mut t = Tensor::zeros(shape);
        t.data_mut().iter_mut().for_each(|x| *x = 1.0);
        self.add(name, t, false)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].grad
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Total scalar count.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Clears the optimizer moments and step count, keeping the values.
    /// Each training stage starts from a fresh optimizer.
    pub fn reset_optimizer(&mut self) {
        for p in &mut self.params {
            p.m.iter_mut().for_each(|x| *x = 0.0);
            p.v.iter_mut().for_each(|x| *x = 0.0);
        }
        self.step = 0;
        self.zero_grad();
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
        self.has_grad = false;
    }

    pub fn accumulate(&mut self, grads: &Gradients) {
        for (p, g) in self.params.iter_mut().zip(&grads.by_param) {
            if let Some(g) = g {
                for (a, b) in p.grad.iter_mut().zip(g) {
                    *a += b;
                }
                self.has_grad = true;
            }
        }
    }

    /// Replaces every value with the same-named tensor from `other`.
    pub fn load_values(&mut self, other: &ParameterStore) -> Result<()> {
        for p in &mut self.params {
            let src = other
                .id(&p.name)
                .map(|id| other.value(id))
                .ok_or_else(|| Error::UnknownParameter {
                    name: p.name.clone(),
                })?;
            if src.shape() != p.value.shape() {
                return Err(Error::ParameterShape {
                    name: p.name.clone(),
                });
            }
            p.value = src.clone();
        }
        Ok(())
    }

    /// `(name, tensor)` pairs in name order.
    pub fn named_tensors(&self) -> Vec<(&str, &Tensor)> {
        self.index
            .iter()
            .map(|(n, id)| (n.as_str(), &self.params[id.0].value))
            .collect()
    }

    /// Sum of every value; a cheap fingerprint for determinism checks.
    pub fn checksum(&self) -> f64 {
        self.params.iter().flat_map(|p| p.value.data()).sum()
    }
}

/// Gradients produced by one backward pass, indexed by parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub(crate) by_param: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.by_param.get(id.0).and_then(|g| g.as_deref())
    }
}
