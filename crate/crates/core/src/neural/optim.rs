use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{Scalar, Tensor};

/// Handle to a parameter in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

/// Named parameters, each paired with a gradient of the same shape.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let grad = Tensor::zeros(value.shape());
        self.params.push(Param {
            name: name.into(),
            value,
            grad,
        });
        ParamId(self.params.len() - 1)
    }

    /// Glorot-uniform tensor, bound `sqrt(6 / (fan_in + fan_out))`.
    pub fn add_glorot<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> ParamId {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        self.add(name, Tensor::uniform(shape, bound, rng))
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].grad
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(|p| p.grad.fill_zero());
    }

    /// Zeroed gradient buffers matching every parameter.
    pub fn gradient_buffers(&self) -> Gradients<T> {
        Gradients(self.params.iter().map(|p| Tensor::zeros(p.value.shape())).collect())
    }

    /// Add `grads` (in parameter order) into the stored gradients.
    pub fn accumulate(&mut self, grads: &Gradients<T>) {
        for (p, g) in self.params.iter_mut().zip(&grads.0) {
            p.grad.add_assign(g);
        }
    }

    pub fn scale_grads(&mut self, factor: T) {
        self.params.iter_mut().for_each(|p| p.grad.scale(factor));
    }
}

/// Detached per-parameter gradient buffers, indexed like a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Gradients<T>(pub Vec<Tensor<T>>);

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.0[id.0]
    }

    pub fn add(&mut self, id: ParamId, g: &Tensor<T>) {
        self.0[id.0].add_assign(g);
    }

    pub fn add_all(&mut self, other: &Gradients<T>) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a.add_assign(b);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamHyper {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub hyper: AdamHyper,
    pub step: u64,
    pub first_moment: Vec<Tensor<T>>,
    pub second_moment: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(store: &ParamStore<T>, hyper: AdamHyper) -> Self {
        let zeros = || store.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Self {
            hyper,
            step: 0,
            first_moment: zeros(),
            second_moment: zeros(),
        }
    }

    /// Apply one update from the stored gradients, then zero them.
    pub fn step(&mut self, store: &mut ParamStore<T>) {
        self.step += 1;
        let h = self.hyper;
        let t = self.step as i32;
        let b1 = T::from_f64_lossy(h.beta1);
        let b2 = T::from_f64_lossy(h.beta2);
        let one = T::one();
        let c1 = T::from_f64_lossy(1.0 - h.beta1.powi(t));
        let c2 = T::from_f64_lossy(1.0 - h.beta2.powi(t));
        let lr = T::from_f64_lossy(h.lr);
        let eps = T::from_f64_lossy(h.eps);
        for ((p, m), v) in store
            .iter_mut()
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            let g = p.grad.data();
            let w = p.value.data_mut();
            let m = m.data_mut();
            let v = v.data_mut();
            for i in 0..w.len() {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                w[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
            p.grad.fill_zero();
        }
    }
}
