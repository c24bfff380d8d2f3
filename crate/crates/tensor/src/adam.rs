use crate::{ParamSet, Real, Result, TensorError};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(params: &ParamSet<T>, config: AdamConfig) -> Self {
        let zeros = || {
            params
                .tensors()
                .iter()
                .map(|t| vec![T::zero(); t.len()])
                .collect()
        };
        Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update in place.
    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &[Vec<T>]) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(TensorError::shape("adam_step", params.len(), grads.len()));
        }
        for ((p, g), m) in params.tensors().iter().zip(grads).zip(&self.m) {
            if p.len() != g.len() || p.len() != m.len() {
                return Err(TensorError::shape("adam_step", p.shape(), g.len()));
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let b1 = T::from_f64(c.beta1);
        let b2 = T::from_f64(c.beta2);
        let one = T::one();
        let bc1 = T::from_f64(1.0 - c.beta1.powi(t));
        let bc2 = T::from_f64(1.0 - c.beta2.powi(t));
        let lr = T::from_f64(c.lr);
        let eps = T::from_f64(c.eps);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (one - b1) * gi;
                *vi = b2 * *vi + (one - b2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
