use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::DenseArray;
use crate::error::{dim_err, GdgmError, Result};

/// A named learnable array with its gradient and adaptive-moment state.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub value: DenseArray,
    pub grad: DenseArray,
    pub first_moment: DenseArray,
    pub second_moment: DenseArray,
    /// Frozen parameters are stored and checkpointed but never updated.
    pub trainable: bool,
}

impl Parameter {
    fn new(value: DenseArray, trainable: bool) -> Self {
        let zeros = || DenseArray::new(value.shape().to_vec(), vec![0.0; value.len()]).expect("shape");
        Self {
            grad: zeros(),
            first_moment: zeros(),
            second_moment: zeros(),
            value,
            trainable,
        }
    }
}

/// Name-ordered collection of parameters. Iteration order is
/// lexicographic, which keeps checkpoints deterministic.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterStore {
    params: BTreeMap<String, Parameter>,
    step: u64,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: DenseArray) -> Result<()> {
        self.insert_with(name, value, true)
    }

    pub fn insert_frozen(&mut self, name: impl Into<String>, value: DenseArray) -> Result<()> {
        self.insert_with(name, value, false)
    }

    fn insert_with(&mut self, name: impl Into<String>, value: DenseArray, trainable: bool) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(GdgmError::InvalidArgument(format!("parameter `{name}` already exists")));
        }
        self.params.insert(name, Parameter::new(value, trainable));
        Ok(())
    }

    /// Overwrite or create `name` with a frozen value.
    pub fn set_frozen(&mut self, name: impl Into<String>, value: DenseArray) {
        self.params.insert(name.into(), Parameter::new(value, false));
    }

    /// Glorot-scaled normal initialization for a `rows x cols` weight.
    pub fn init_weight<R: Rng>(&mut self, name: &str, rows: usize, cols: usize, rng: &mut R) -> Result<()> {
        let std = (2.0 / (rows + cols) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        let data = (0..rows * cols).map(|_| normal.sample(rng)).collect();
        self.insert(name, DenseArray::from_vec(rows, cols, data))
    }

    pub fn init_zeros(&mut self, name: &str, rows: usize, cols: usize) -> Result<()> {
        self.insert(name, DenseArray::zeros(rows, cols))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Option<&Parameter> {
        self.params.get(name)
    }

    pub fn value(&self, name: &str) -> Option<&DenseArray> {
        self.params.get(name).map(|p| &p.value)
    }

    pub fn value_mut(&mut self, name: &str) -> Option<&mut DenseArray> {
        self.params.get_mut(name).map(|p| &mut p.value)
    }

    pub fn grad(&self, name: &str) -> Option<&DenseArray> {
        self.params.get(name).map(|p| &p.grad)
    }

    pub fn set_trainable(&mut self, prefix: &str, trainable: bool) {
        for (name, p) in self.params.iter_mut() {
            if name.starts_with(prefix) {
                p.trainable = trainable;
            }
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Parameter)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub(crate) fn set_step_count(&mut self, step: u64) {
        self.step = step;
    }

    pub fn accumulate_grad(&mut self, name: &str, g: &DenseArray) -> Result<()> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| GdgmError::UnknownParameter(name.to_string()))?;
        if p.grad.shape() != g.shape() {
            return Err(dim_err("accumulate_grad", format!("{:?}", p.grad.shape()), format!("{:?}", g.shape())));
        }
        p.grad.add_assign(g);
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for p in self.params.values_mut() {
            p.grad.fill(0.0);
        }
    }

    /// Number of scalar entries over all parameters under `prefix`.
    pub fn count_scalars(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, p)| p.value.len())
            .sum()
    }

    /// Copy of every parameter under `prefix`, with fresh optimizer state.
    pub fn extract(&self, prefix: &str) -> ParameterStore {
        let params = self
            .params
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(k, p)| (k.clone(), Parameter::new(p.value.clone(), p.trainable)))
            .collect();
        ParameterStore { params, step: 0 }
    }

    pub(crate) fn params_mut(&mut self) -> impl Iterator<Item = (&String, &mut Parameter)> {
        self.params.iter_mut()
    }
}
