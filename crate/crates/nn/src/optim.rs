//! Named trainable parameters with Adam state.

use crate::{NnError, Real, Result, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    /// pix2pix settings: lr 2e-4, beta1 0.5, beta2 0.999.
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub m: Tensor<T>,
    pub v: Tensor<T>,
    pub step: u64,
}

impl<T: Real> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let shape = value.shape();
        Self {
            name: name.into(),
            value,
            grad: Tensor::zeros(shape),
            m: Tensor::zeros(shape),
            v: Tensor::zeros(shape),
            step: 0,
        }
    }

    /// One bias-corrected Adam update from the accumulated gradient, which
    /// is zeroed afterwards.
    pub fn adam_step(&mut self, cfg: &AdamConfig) {
        self.step += 1;
        let b1 = T::lit(cfg.beta1);
        let b2 = T::lit(cfg.beta2);
        let one = T::one();
        let t = self.step as i32;
        let correction1 = one - b1.powi(t);
        let correction2 = one - b2.powi(t);
        let lr = T::lit(cfg.lr);
        let eps = T::lit(cfg.epsilon);
        let values = self.value.data_mut();
        let m = self.m.data_mut();
        let v = self.v.data_mut();
        for (i, g) in self.grad.data_mut().iter_mut().enumerate() {
            m[i] = b1 * m[i] + (one - b1) * *g;
            v[i] = b2 * v[i] + (one - b2) * *g * *g;
            let m_hat = m[i] / correction1;
            let v_hat = v[i] / correction2;
            values[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            *g = T::zero();
        }
    }
}

/// Ordered collection of parameters belonging to one model.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    /// Appends a parameter and returns its position.
    pub fn push(&mut self, name: impl Into<String>, value: Tensor<T>) -> usize {
        self.params.push(Parameter::new(name, value));
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn get(&self, name: &str) -> Option<&Parameter<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn values(&self) -> Vec<Tensor<T>> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Records every parameter on `tape` as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.params.iter().map(|p| tape.leaf(p.value.clone())).collect()
    }

    /// Records every parameter as a constant (inference, or a frozen model).
    pub fn bind_frozen(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| tape.constant(p.value.clone()))
            .collect()
    }

    /// Adds the gradients found on `tape` for `vars` (as returned by
    /// [`bind`](Self::bind)) into the parameter gradient buffers.
    pub fn accumulate_grads(&mut self, tape: &Tape<T>, vars: &[Var]) {
        for (p, &v) in self.params.iter_mut().zip(vars) {
            if let Some(g) = tape.grad(v) {
                p.grad.add_assign(g);
            }
        }
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(|p| p.grad.fill(T::zero()));
    }

    pub fn adam_step(&mut self, cfg: &AdamConfig) {
        self.params.iter_mut().for_each(|p| p.adam_step(cfg));
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.is_finite())
    }

    /// Replaces parameter values, keeping names and optimizer state.
    pub fn set_values(&mut self, values: Vec<Tensor<T>>) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(NnError::ShapeMismatch(format!(
                "{} tensors for {} parameters",
                values.len(),
                self.params.len()
            )));
        }
        for (p, v) in self.params.iter_mut().zip(values) {
            if v.shape() != p.value.shape() {
                return Err(NnError::ShapeMismatch(format!(
                    "parameter {} has shape {:?}, got {:?}",
                    p.name,
                    p.value.shape(),
                    v.shape()
                )));
            }
            p.value = v;
        }
        Ok(())
    }

    /// Fresh store with the same names and values cast to another precision.
    /// Optimizer state is not carried over.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for p in &self.params {
            out.push(p.name.clone(), p.value.cast());
        }
        out
    }
}
