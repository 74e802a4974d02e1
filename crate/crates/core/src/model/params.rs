use std::collections::HashMap;
use std::ops::Index;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tape, Tensor, Var};

/// Declared parameter before initialization.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub is_bias: bool,
}

#[derive(Clone, Debug)]
pub struct Param<T: Real> {
    pub name: String,
    pub value: Arc<Tensor<T>>,
    pub is_bias: bool,
}

/// Ordered, uniquely named collection of learnable tensors.
#[derive(Clone, Debug)]
pub struct ParamSet<T: Real = f32> {
    entries: Vec<Param<T>>,
    by_name: HashMap<String, usize>,
}

impl<T: Real> ParamSet<T> {
    pub fn new(entries: Vec<Param<T>>) -> Result<Self> {
        let mut by_name = HashMap::with_capacity(entries.len());
        for (i, p) in entries.iter().enumerate() {
            if by_name.insert(p.name.clone(), i).is_some() {
                return Err(Error::Contract(format!("duplicate parameter name `{}`", p.name)));
            }
        }
        Ok(ParamSet { entries, by_name })
    }

    pub fn from_specs(specs: &[ParamSpec], mut fill: impl FnMut(&ParamSpec) -> Tensor<T>) -> Result<Self> {
        let entries = specs
            .iter()
            .map(|s| {
                let value = fill(s);
                if value.shape() != s.shape.as_slice() {
                    return Err(Error::dim("param init", &s.shape, value.shape()));
                }
                Ok(Param {
                    name: s.name.clone(),
                    value: Arc::new(value),
                    is_bias: s.is_bias,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(entries)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.entries.iter()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.index_of(name).map(|i| &self.entries[i])
    }

    pub fn at(&self, index: usize) -> &Param<T> {
        &self.entries[index]
    }

    /// Mutable access; clones the storage only if a tape still shares it.
    pub fn tensor_mut(&mut self, index: usize) -> &mut Tensor<T> {
        Arc::make_mut(&mut self.entries[index].value)
    }

    pub fn set(&mut self, index: usize, value: Tensor<T>) -> Result<()> {
        let slot = &mut self.entries[index];
        if slot.value.shape() != value.shape() {
            return Err(Error::dim("param set", slot.value.shape(), value.shape()));
        }
        slot.value = Arc::new(value);
        Ok(())
    }

    pub fn shapes(&self) -> Vec<&[usize]> {
        self.entries.iter().map(|p| p.value.shape()).collect()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|p| p.value.numel()).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: Arc::new(p.value.cast()),
                    is_bias: p.is_bias,
                })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }

    /// Put every parameter on `tape` as a differentiable leaf.
    pub fn register(&self, tape: &mut Tape<T>) -> ParamVars {
        ParamVars(
            self.entries
                .iter()
                .enumerate()
                .map(|(i, p)| tape.param(i, Arc::clone(&p.value)))
                .collect(),
        )
    }

    /// Bitwise equality of every value.
    pub fn bit_eq(&self, other: &ParamSet<T>) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|(a, b)| {
                    a.name == b.name
                        && a.value.shape() == b.value.shape()
                        && a.value.data().iter().zip(b.value.data()).all(|(x, y)| x.as_f64().to_bits() == y.as_f64().to_bits())
                })
    }
}

/// Tape handles for a registered [`ParamSet`], in the same order.
#[derive(Clone, Debug)]
pub struct ParamVars(Vec<Var>);

impl ParamVars {
    pub fn new(vars: Vec<Var>) -> Self {
        ParamVars(vars)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = Var> + '_ {
        self.0.iter().copied()
    }
}

impl Index<usize> for ParamVars {
    type Output = Var;

    fn index(&self, i: usize) -> &Var {
        &self.0[i]
    }
}
