use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Index of a parameter inside its [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// A trainable tensor with its gradient slot and AdamW state.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<T = f32> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub moment1: Tensor<T>,
    pub moment2: Tensor<T>,
    pub step_count: u64,
}

impl<T: Real> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let shape = value.shape().to_vec();
        Self {
            name: name.into(),
            grad: Tensor::zeros(&shape),
            moment1: Tensor::zeros(&shape),
            moment2: Tensor::zeros(&shape),
            step_count: 0,
            value,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().iter_mut().for_each(|g| *g = T::zero());
    }
}

/// Ordered, name-addressable collection of parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet<T = f32> {
    params: Vec<Parameter<T>>,
    by_name: BTreeMap<String, ParamId>,
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            by_name: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name `{name}`"
        );
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter::new(name, value));
        id
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }
}

/// Zeroes every gradient slot. Backward passes accumulate; nothing else
/// clears gradients.
pub fn zero_grads<T: Real>(params: &mut ParamSet<T>) {
    params.iter_mut().for_each(Parameter::zero_grad);
}

/// AdamW hyperparameters other than the learning rate, which comes from the
/// schedule at every step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            weight_decay: 0.00032,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamW {
    pub fn validate(&self) -> Result<()> {
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::config(name, format!("{b} is outside (0, 1)")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::config("eps", "must be positive"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config("weight_decay", "must be non-negative"));
        }
        Ok(())
    }
}

/// One decoupled-weight-decay Adam update with bias correction.
pub fn adamw_step<T: Real>(param: &mut Parameter<T>, lr: f64, hp: &AdamW) -> Result<()> {
    hp.validate()?;
    if !param.grad.is_finite() {
        return Err(Error::NonFiniteGradient {
            param: param.name.clone(),
        });
    }
    param.step_count += 1;
    let t = param.step_count as i32;
    let bc1 = 1.0 - hp.beta1.powi(t);
    let bc2 = 1.0 - hp.beta2.powi(t);
    let decay = T::from_f64(1.0 - lr * hp.weight_decay);
    let (b1, b2) = (T::from_f64(hp.beta1), T::from_f64(hp.beta2));
    let (one_m_b1, one_m_b2) = (T::from_f64(1.0 - hp.beta1), T::from_f64(1.0 - hp.beta2));
    let (bc1, bc2) = (T::from_f64(bc1), T::from_f64(bc2));
    let lr_t = T::from_f64(lr);
    let eps = T::from_f64(hp.eps);

    let grad = param.grad.data();
    let m = param.moment1.data_mut();
    for (m, &g) in m.iter_mut().zip(grad) {
        *m = b1 * *m + one_m_b1 * g;
    }
    let v = param.moment2.data_mut();
    for (v, &g) in v.iter_mut().zip(grad) {
        *v = b2 * *v + one_m_b2 * g * g;
    }
    let m = param.moment1.data();
    let v = param.moment2.data();
    for ((w, &m), &v) in param.value.data_mut().iter_mut().zip(m).zip(v) {
        let m_hat = m / bc1;
        let v_hat = v / bc2;
        *w = *w * decay - lr_t * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}
