use crate::error::{Error, Result};
use crate::tensor::{ParamGroup, ParameterStore, Scalar};

/// First and second moment estimates of one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
}

/// Adam with decoupled weight decay:
///
/// ```text
/// m ← β1·m + (1-β1)·g
/// v ← β2·v + (1-β2)·g²
/// θ ← θ - lr·(m̂ / (√v̂ + ε) + λ·θ)
/// ```
///
/// with bias-corrected `m̂ = m / (1-β1^t)`, `v̂ = v / (1-β2^t)`.
#[derive(Clone, Debug)]
pub struct AdamW<T: Scalar> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    moments: Vec<Moments<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(store: &ParameterStore<T>, beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        let moments = store
            .iter()
            .map(|p| Moments {
                m: vec![T::zero(); p.value.len()],
                v: vec![T::zero(); p.value.len()],
            })
            .collect();
        Self {
            beta1,
            beta2,
            eps,
            weight_decay,
            moments,
        }
    }

    pub fn moments(&self) -> &[Moments<T>] {
        &self.moments
    }

    pub fn set_moments(&mut self, moments: Vec<Moments<T>>) -> Result<()> {
        if moments.len() != self.moments.len()
            || moments
                .iter()
                .zip(&self.moments)
                .any(|(a, b)| a.m.len() != b.m.len() || a.v.len() != b.v.len())
        {
            return Err(Error::shape("optimizer state does not match the parameters"));
        }
        self.moments = moments;
        Ok(())
    }

    /// Applies update number `step` (1-based) using each parameter's stored
    /// gradient; a missing gradient counts as zero.
    pub fn step(
        &mut self,
        store: &mut ParameterStore<T>,
        step: u64,
        lr_for: impl Fn(ParamGroup) -> f64,
    ) -> Result<()> {
        if step == 0 {
            return Err(Error::config("optimizer steps are 1-based"));
        }
        let t = step as i32;
        let bc1 = T::from_f64(1.0 - self.beta1.powi(t));
        let bc2 = T::from_f64(1.0 - self.beta2.powi(t));
        let b1 = T::from_f64(self.beta1);
        let b2 = T::from_f64(self.beta2);
        let one = T::one();
        let eps = T::from_f64(self.eps);
        let wd = T::from_f64(self.weight_decay);
        for (p, mom) in store.iter_mut().zip(&mut self.moments) {
            let lr = T::from_f64(lr_for(p.group));
            let grad = p.grad.as_ref().map(|g| g.data());
            let theta = p.value.data_mut();
            for i in 0..theta.len() {
                let g = grad.map_or(T::zero(), |g| g[i]);
                mom.m[i] = b1 * mom.m[i] + (one - b1) * g;
                mom.v[i] = b2 * mom.v[i] + (one - b2) * g * g;
                let m_hat = mom.m[i] / bc1;
                let v_hat = mom.v[i] / bc2;
                theta[i] -= lr * (m_hat / (v_hat.sqrt() + eps) + wd * theta[i]);
            }
        }
        Ok(())
    }
}
