use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Learning-rate group of a parameter. Stage-2 training scales the first
/// three groups down; `Other` keeps the scheduled rate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    SourceEncoder,
    TargetEncoder,
    Extractors,
    Other,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 4] = [
        ParamGroup::SourceEncoder,
        ParamGroup::TargetEncoder,
        ParamGroup::Extractors,
        ParamGroup::Other,
    ];

    /// Whether stage 2 reduces this group's learning rate.
    pub fn is_reduced_in_stage2(self) -> bool {
        !matches!(self, ParamGroup::Other)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Parameter<T: Scalar> {
    pub name: String,
    pub group: ParamGroup,
    pub value: Tensor<T>,
    /// Gradient accumulated since the last optimizer step.
    pub grad: Option<Tensor<T>>,
}

/// Named trainable tensors in registration order.
#[derive(Clone, Debug, Default)]
pub struct ParameterStore<T: Scalar> {
    params: Vec<Parameter<T>>,
    by_name: BTreeMap<String, usize>,
}

impl<T: Scalar> ParameterStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            by_name: BTreeMap::new(),
        }
    }

    pub fn register(
        &mut self,
        name: impl Into<String>,
        group: ParamGroup,
        value: Tensor<T>,
    ) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::config(format!("parameter {name:?} registered twice")));
        }
        let id = self.params.len();
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter {
            name,
            group,
            value,
            grad: None,
        });
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar weights.
    pub fn num_elements(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    /// Records every parameter as a gradient-tracking leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.params.iter().map(|p| tape.param(p.value.clone())).collect()
    }

    /// Adds the leaf gradients found on `tape` into the stored gradients.
    pub fn accumulate_grads(&mut self, tape: &Tape<T>, bound: &[Var]) -> Result<()> {
        if bound.len() != self.params.len() {
            return Err(Error::shape("binding does not match parameter store"));
        }
        for (p, &v) in self.params.iter_mut().zip(bound) {
            let Some(g) = tape.grad(v) else { continue };
            match &mut p.grad {
                Some(acc) => {
                    for (a, &b) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += b;
                    }
                }
                None => p.grad = Some(g.clone()),
            }
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParameterStore<U> {
        ParameterStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    group: p.group,
                    value: p.value.cast(),
                    grad: p.grad.as_ref().map(|g| g.cast()),
                })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut store = ParameterStore::<f32>::new();
        store
            .register("a", ParamGroup::Other, Tensor::zeros([2]))
            .unwrap();
        assert!(store
            .register("a", ParamGroup::Extractors, Tensor::zeros([2]))
            .is_err());
    }

    #[test]
    fn grads_accumulate_across_tapes() {
        let mut store = ParameterStore::<f64>::new();
        store
            .register("w", ParamGroup::Other, Tensor::full([3], 1.0))
            .unwrap();
        for _ in 0..2 {
            let mut tape = Tape::new();
            let bound = store.bind(&mut tape);
            let s = tape.sum(bound[0]);
            tape.backward(s).unwrap();
            store.accumulate_grads(&tape, &bound).unwrap();
        }
        let g = store.get(ParamId(0)).grad.as_ref().unwrap();
        assert_eq!(g.data(), &[2.0, 2.0, 2.0]);
    }
}
