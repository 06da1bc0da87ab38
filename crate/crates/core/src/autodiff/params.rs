use std::collections::HashMap;
use std::ops::Index;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::tape::{Gradients, Tape, Var};

/// A named trainable tensor with its gradient accumulator.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

/// Ordered collection of parameters with unique names.
#[derive(Clone, Debug, Default)]
pub struct ParamSet {
    params: Vec<Parameter>,
    index: HashMap<String, usize>,
}

/// Tape nodes holding a [`ParamSet`]'s values for one forward pass.
#[derive(Clone, Debug)]
pub struct Binding {
    vars: Vec<Var>,
    trainable: bool,
}

impl Binding {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn is_trainable(&self) -> bool {
        self.trainable
    }
}

impl Index<usize> for Binding {
    type Output = Var;

    fn index(&self, i: usize) -> &Var {
        &self.vars[i]
    }
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter and returns its index.
    pub fn push(&mut self, name: impl Into<String>, value: Tensor) -> Result<usize> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        let grad = Tensor::zeros(value.shape());
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Parameter { name, value, grad });
        Ok(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, i: usize) -> &Parameter {
        &self.params[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Parameter {
        &mut self.params[i]
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.position(name).map(|i| &self.params[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    /// Total number of scalar weights.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Every parameter value concatenated in registration order.
    pub fn flat_values(&self) -> Vec<f64> {
        self.params
            .iter()
            .flat_map(|p| p.value.data().iter().copied())
            .collect()
    }

    pub fn flat_grads(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.grad.data().iter().copied()).collect()
    }

    /// Places every parameter on `tape`, as variables or as constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Binding {
        let vars = self
            .params
            .iter()
            .map(|p| tape.leaf(p.value.clone(), trainable))
            .collect();
        Binding { vars, trainable }
    }

    /// Adds the gradients that reached `binding` into each `grad` field.
    pub fn accumulate(&mut self, binding: &Binding, grads: &Gradients) -> Result<()> {
        if binding.vars.len() != self.params.len() {
            return Err(Error::Contract(format!(
                "binding has {} parameters, set has {}",
                binding.vars.len(),
                self.params.len()
            )));
        }
        for (p, &v) in self.params.iter_mut().zip(&binding.vars) {
            if let Some(g) = grads.get(v) {
                p.grad.add_assign(g)?;
            }
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let mut ps = ParamSet::new();
        ps.push("a", Tensor::zeros([1, 1, 1, 1])).unwrap();
        assert!(ps.push("a", Tensor::zeros([1, 1, 1, 1])).is_err());
    }

    #[test]
    fn grad_shape_matches_value() {
        let mut ps = ParamSet::new();
        ps.push("w", Tensor::zeros([2, 3, 3, 3])).unwrap();
        let p = ps.by_name("w").unwrap();
        assert_eq!(p.grad.shape(), p.value.shape());
    }

    #[test]
    fn unreached_parameters_keep_zero_grad() {
        let mut ps = ParamSet::new();
        ps.push("used", Tensor::full([1, 1, 1, 2], 1.0)).unwrap();
        ps.push("unused", Tensor::full([1, 1, 1, 2], 1.0)).unwrap();
        let mut tape = Tape::new();
        let b = ps.bind(&mut tape, true);
        let loss = tape.sum(b[0]);
        let grads = tape.backward(loss).unwrap();
        ps.accumulate(&b, &grads).unwrap();
        assert_eq!(ps.get(0).grad.data(), &[1.0, 1.0]);
        assert_eq!(ps.get(1).grad.data(), &[0.0, 0.0]);
    }
}
