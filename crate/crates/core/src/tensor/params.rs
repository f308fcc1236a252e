use std::sync::Arc;

use super::{Graph, Gradients, Scalar, Tensor, TensorError, Var};

/// A named trainable tensor. The buffer is shared with any graph that reads it.
#[derive(Clone, Debug)]
pub struct Param<S> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Arc<Vec<S>>,
}

impl<S: Scalar> Param<S> {
    pub fn numel(&self) -> usize {
        self.value.len()
    }

    /// Mutable access; copies the buffer only if a live graph still shares it.
    pub fn data_mut(&mut self) -> &mut Vec<S> {
        Arc::make_mut(&mut self.value)
    }

    pub fn tensor(&self) -> Tensor<S> {
        Tensor::new(self.shape.clone(), self.value.as_ref().clone()).expect("param shape is consistent")
    }
}

/// Ordered collection of parameters; the index is the parameter id used by graphs.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<S> {
    params: Vec<Param<S>>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor<S>) -> usize {
        let shape = t.shape().to_vec();
        self.params.push(Param { name: name.into(), shape, value: Arc::new(t.into_data()) });
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: usize) -> &Param<S> {
        &self.params[id]
    }

    pub fn get_mut(&mut self, id: usize) -> &mut Param<S> {
        &mut self.params[id]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<S>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<S>> {
        self.params.iter_mut()
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn total_numel(&self) -> usize {
        self.params.iter().map(Param::numel).sum()
    }

    /// Registers parameter `id` as a leaf of `g`.
    pub fn bind(&self, g: &mut Graph<S>, id: usize) -> Result<Var, TensorError> {
        let p = &self.params[id];
        g.param(id, Arc::clone(&p.value), p.shape.clone())
    }

    /// Zero-initialised gradient buffers, one per parameter.
    pub fn zero_grads(&self) -> Vec<Vec<S>> {
        self.params.iter().map(|p| vec![S::zero(); p.numel()]).collect()
    }

    /// Adds the gradients of every parameter leaf of `g` into `acc`.
    pub fn accumulate(&self, g: &Graph<S>, grads: &Gradients<S>, acc: &mut [Vec<S>]) {
        for (id, v) in g.param_leaves() {
            if let Some(gr) = grads.get(v) {
                acc[id].iter_mut().zip(gr).for_each(|(o, &x)| *o = *o + x);
            }
        }
    }

    /// Same parameters converted to another precision.
    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    value: Arc::new(p.value.iter().map(|x| T::from_f64(x.as_f64())).collect()),
                })
                .collect(),
        }
    }
}
