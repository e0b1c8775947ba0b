//! Named trainable parameters, their gradients, and the Adam optimizer.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub(crate) first_moment: Tensor,
    pub(crate) second_moment: Tensor,
}

impl Param {
    pub fn first_moment(&self) -> &Tensor {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &Tensor {
        &self.second_moment
    }
}

/// Ordered parameter set with parallel gradients and Adam state.
///
/// With binary32 storage enabled, values are rounded to the nearest `f32`
/// whenever they are inserted or updated, so that a checkpoint (which stores
/// `f32`) reproduces the in-memory model exactly. Arithmetic stays in `f64`.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, usize>,
    step: u64,
    binary32_storage: bool,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_binary32_storage() -> Self {
        ParamStore {
            binary32_storage: true,
            ..Self::default()
        }
    }

    pub fn binary32_storage(&self) -> bool {
        self.binary32_storage
    }

    pub fn insert(&mut self, name: &str, mut value: Tensor) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::Contract(format!("duplicate parameter name {name}")));
        }
        if self.binary32_storage {
            value.round_to_f32();
        }
        let zeros = Tensor::zeros(value.shape());
        let id = self.params.len();
        self.params.push(Param {
            name: name.to_string(),
            grad: zeros.clone(),
            first_moment: zeros.clone(),
            second_moment: zeros,
            value,
        });
        self.index.insert(name.to_string(), id);
        Ok(ParamId(id))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
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

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].grad
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.id(name).map(|id| self.param(id))
    }

    /// Overwrites a parameter's value. Shapes must match.
    pub fn set_value(&mut self, id: ParamId, mut value: Tensor) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(Error::dim(format!(
                "parameter {} has shape {:?}, got {:?}",
                p.name,
                p.value.shape(),
                value.shape()
            )));
        }
        if self.binary32_storage {
            value.round_to_f32();
        }
        p.value = value;
        Ok(())
    }

    /// Raw mutable access used by finite-difference checks; bypasses rounding.
    pub(crate) fn value_data_mut(&mut self, id: ParamId) -> &mut [f64] {
        self.params[id.0].value.data_mut()
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, grad: &[f64]) {
        for (g, &d) in self.params[id.0].grad.data_mut().iter_mut().zip(grad) {
            *g += d;
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    /// Adam step counter shared by every parameter.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub(crate) fn restore_optimizer_state(
        &mut self,
        step: u64,
        moments: Vec<(Tensor, Tensor)>,
    ) -> Result<()> {
        if moments.len() != self.params.len() {
            return Err(Error::Contract("optimizer state count mismatch".into()));
        }
        for (p, (m, v)) in self.params.iter_mut().zip(moments) {
            if m.shape() != p.value.shape() || v.shape() != p.value.shape() {
                return Err(Error::dim(format!(
                    "optimizer state shape mismatch for {}",
                    p.name
                )));
            }
            p.first_moment = m;
            p.second_moment = v;
        }
        self.step = step;
        Ok(())
    }

    pub fn total_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    /// β1 = 0.9, β2 = 0.999, ε = 1e-8.
    pub fn new(lr: f64) -> Result<Self> {
        Self::with_params(lr, 0.9, 0.999, 1e-8)
    }

    /// `lr = 0` is accepted and freezes the parameters; negative rates are not.
    pub fn with_params(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Result<Self> {
        if !lr.is_finite() || lr < 0.0 {
            return Err(Error::Config(format!("learning rate must be >= 0, got {lr}")));
        }
        for (name, b) in [("beta1", beta1), ("beta2", beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0,1), got {b}")));
            }
        }
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::Config(format!("eps must be positive, got {eps}")));
        }
        Ok(Adam {
            lr,
            beta1,
            beta2,
            eps,
        })
    }

    /// One Adam update from the accumulated gradients; clears them afterwards.
    pub fn step(&self, store: &mut ParamStore) {
        store.step += 1;
        let t = store.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let round = store.binary32_storage;
        for p in &mut store.params {
            let g = p.grad.data();
            let m = p.first_moment.data_mut();
            for (mi, &gi) in m.iter_mut().zip(g) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
            }
            let v = p.second_moment.data_mut();
            for (vi, &gi) in v.iter_mut().zip(g) {
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
            }
            let (m, v) = (p.first_moment.data(), p.second_moment.data());
            for ((x, &mi), &vi) in p.value.data_mut().iter_mut().zip(m).zip(v) {
                let m_hat = mi / c1;
                let v_hat = vi / c2;
                *x -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
                if round {
                    *x = *x as f32 as f64;
                }
            }
            p.grad.data_mut().fill(0.0);
        }
    }
}
