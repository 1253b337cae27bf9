use rand::Rng as _;

use super::scalar::Scalar;
use super::tensor::Tensor;
use crate::util::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Param<S> {
    pub name: String,
    pub value: Tensor<S>,
}

/// Named parameter tensors addressed by [`ParamId`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<S> {
    params: Vec<Param<S>>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<S>) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            value,
        });
        ParamId(self.params.len() - 1)
    }

    /// Uniform Glorot initialization for a `rows x cols` weight.
    pub fn add_glorot(&mut self, name: impl Into<String>, rows: usize, cols: usize, rng: &mut Rng) -> ParamId {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let t = Tensor::from_fn(rows, cols, |_, _| S::of(rng.gen_range(-limit..limit)));
        self.add(name, t)
    }

    pub fn add_normal(&mut self, name: impl Into<String>, rows: usize, cols: usize, std: f64, rng: &mut Rng) -> ParamId {
        let t = Tensor::from_fn(rows, cols, |_, _| {
            // Box-Muller
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen();
            S::of(std * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos())
        });
        self.add(name, t)
    }

    pub fn add_const(&mut self, name: impl Into<String>, rows: usize, cols: usize, value: f64) -> ParamId {
        self.add(name, Tensor::from_fn(rows, cols, |_, _| S::of(value)))
    }

    pub fn get(&self, id: ParamId) -> &Tensor<S> {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.params[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
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

    pub fn iter(&self) -> impl Iterator<Item = &Param<S>> {
        self.params.iter()
    }

    /// Total scalar count.
    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                })
                .collect(),
        }
    }
}

/// Gradients for the parameters reached by a backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<S> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn empty(n: usize) -> Self {
        Gradients {
            grads: (0..n).map(|_| None).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor<S>> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, rows: usize, cols: usize, g: &[S]) {
        if self.grads.len() <= id.0 {
            self.grads.resize_with(id.0 + 1, || None);
        }
        match &mut self.grads[id.0] {
            Some(t) => {
                for (a, &b) in t.data_mut().iter_mut().zip(g) {
                    *a = *a + b;
                }
            }
            slot @ None => {
                *slot = Some(Tensor::new(rows, cols, g.to_vec()).expect("gradient shape"));
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor<S>)> {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|t| (ParamId(i), t)))
    }

    /// Ids with a gradient buffer holding at least one nonzero entry.
    pub fn nonzero_ids(&self) -> Vec<ParamId> {
        self.iter()
            .filter(|(_, t)| t.data().iter().any(|x| *x != S::zero()))
            .map(|(id, _)| id)
            .collect()
    }

    pub fn global_norm(&self) -> f64 {
        self.iter()
            .flat_map(|(_, t)| t.data().iter())
            .map(|x| x.as_f64() * x.as_f64())
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        let f = S::of(factor);
        for t in self.grads.iter_mut().flatten() {
            t.data_mut().iter_mut().for_each(|x| *x = *x * f);
        }
    }
}
