use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Dense row-major array of 64-bit reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Self { shape: shape.to_vec(), data: vec![value; shape.iter().product()] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::Shape(format!("shape {shape:?} needs {expected} values, got {}", data.len())));
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    pub fn zeros_like(other: &Tensor) -> Self {
        Self::zeros(&other.shape)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// `(n, c, h, w)` of a rank-4 tensor.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match *self.shape.as_slice() {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::Shape(format!("expected a rank-4 tensor, got shape {:?}", self.shape))),
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::Shape(format!("cannot reshape {:?} to {shape:?}", self.shape)));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!("cannot add {:?} to {:?}", other.shape, self.shape)));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }
}

/// Named tensors: model parameters, their gradients, or running statistics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet(BTreeMap<String, Tensor>);

impl ParamSet {
    pub fn new() -> Self {
        Self(BTreeMap::new())
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.0.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.0.get(name).ok_or_else(|| Error::Shape(format!("missing parameter '{name}'")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.0.get_mut(name).ok_or_else(|| Error::Shape(format!("missing parameter '{name}'")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.0.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.0.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.0.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.0.keys()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Total number of scalar values.
    pub fn numel(&self) -> usize {
        self.0.values().map(Tensor::len).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self(self.0.iter().map(|(k, v)| (k.clone(), Tensor::zeros_like(v))).collect())
    }

    /// Adds `other` into `self`, accumulating into the named entry (created
    /// as zeros when absent).
    pub fn accumulate(&mut self, name: &str, t: &Tensor) -> Result<()> {
        match self.0.get_mut(name) {
            Some(acc) => acc.add_assign(t),
            None => {
                self.0.insert(name.to_string(), t.clone());
                Ok(())
            }
        }
    }

    /// Checks that both sets have the same names and shapes.
    pub fn same_layout(&self, other: &ParamSet) -> bool {
        self.0.len() == other.0.len()
            && self.0.iter().zip(&other.0).all(|((ka, va), (kb, vb))| ka == kb && va.shape() == vb.shape())
    }

    /// Mutable access to one value by its position in [`ParamSet::flatten`].
    pub fn flat_mut(&mut self, mut index: usize) -> Option<&mut f64> {
        for t in self.0.values_mut() {
            if index < t.len() {
                return Some(&mut t.data_mut()[index]);
            }
            index -= t.len();
        }
        None
    }

    /// Overwrites all values from a flat vector in name order.
    pub fn assign_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.numel() {
            return Err(Error::Shape(format!("expected {} values, got {}", self.numel(), values.len())));
        }
        let mut off = 0;
        for t in self.0.values_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&values[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Flat view of all values in name order.
    pub fn flatten(&self) -> Vec<f64> {
        self.0.values().flat_map(|t| t.data().iter().copied()).collect()
    }
}
