use serde::{Deserialize, Serialize};

use super::{ParamStore, Result, Scalar, TensorError};

/// Parameter update rule. Implementations must leave frozen tensors untouched.
pub trait Optimizer<T: Scalar> {
    fn step(&mut self, params: &mut ParamStore<T>, lr: f64) -> Result<()>;
}

fn check_lr(lr: f64) -> Result<()> {
    if lr > 0.0 && lr.is_finite() {
        Ok(())
    } else {
        Err(TensorError::InvalidLearningRate(lr))
    }
}

fn ensure_state<T: Scalar>(state: &mut Vec<Vec<T>>, params: &ParamStore<T>) {
    if state.len() != params.len() {
        state.resize_with(params.len(), Vec::new);
    }
    for (slot, (_, _, t)) in state.iter_mut().zip(params.iter()) {
        if slot.len() != t.len() {
            *slot = vec![T::zero(); t.len()];
        }
    }
}

/// Momentum SGD: `v ← μ·v + g`, `p ← p − lr·v`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Sgd<T> {
    pub momentum: f64,
    velocity: Vec<Vec<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(momentum: f64) -> Self {
        Self {
            momentum,
            velocity: Vec::new(),
        }
    }
}

impl<T: Scalar> Optimizer<T> for Sgd<T> {
    fn step(&mut self, params: &mut ParamStore<T>, lr: f64) -> Result<()> {
        check_lr(lr)?;
        ensure_state(&mut self.velocity, params);
        let (mu, lr) = (T::from_f64_lossy(self.momentum), T::from_f64_lossy(lr));
        for (tensor, vel) in params.tensors_mut().iter_mut().zip(&mut self.velocity) {
            if tensor.is_frozen() {
                continue;
            }
            let (values, grad) = tensor.parts_mut();
            let Some(grad) = grad else { continue };
            for ((p, v), &g) in values.iter_mut().zip(vel.iter_mut()).zip(grad) {
                *v = mu * *v + g;
                *p = *p - lr * *v;
            }
        }
        Ok(())
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    steps: Vec<u64>,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Default for Adam<T> {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            steps: Vec::new(),
            m: Vec::new(),
            v: Vec::new(),
        }
    }
}

impl<T: Scalar> Adam<T> {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            ..Self::default()
        }
    }
}

impl<T: Scalar> Optimizer<T> for Adam<T> {
    fn step(&mut self, params: &mut ParamStore<T>, lr: f64) -> Result<()> {
        check_lr(lr)?;
        ensure_state(&mut self.m, params);
        ensure_state(&mut self.v, params);
        self.steps.resize(params.len(), 0);
        let (b1, b2) = (T::from_f64_lossy(self.beta1), T::from_f64_lossy(self.beta2));
        let eps = T::from_f64_lossy(self.eps);
        let tensors = params.tensors_mut().iter_mut();
        for (((tensor, m), v), t) in tensors.zip(&mut self.m).zip(&mut self.v).zip(&mut self.steps) {
            if tensor.is_frozen() {
                continue;
            }
            let (values, grad) = tensor.parts_mut();
            let Some(grad) = grad else { continue };
            // step counts are per tensor so a tensor unfrozen late starts its
            // own bias correction from scratch
            *t += 1;
            let c1 = 1.0 - self.beta1.powi(*t as i32);
            let c2 = 1.0 - self.beta2.powi(*t as i32);
            let step = T::from_f64_lossy(lr * c2.sqrt() / c1);
            for (((p, mi), vi), &g) in values.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(grad) {
                *mi = b1 * *mi + (T::one() - b1) * g;
                *vi = b2 * *vi + (T::one() - b2) * g * g;
                *p = *p - step * *mi / (vi.sqrt() + eps);
            }
        }
        Ok(())
    }
}
