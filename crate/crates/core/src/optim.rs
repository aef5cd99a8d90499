//! Adam and the linear-decay learning-rate schedule.

use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{arg_err, Error, Result};
use crate::param::{ParamId, ParamStore};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.5, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment buffers of one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments<T> {
    pub id: ParamId,
    pub m: Tensor<T>,
    pub v: Tensor<T>,
}

/// Bias-corrected Adam over a fixed set of parameters sharing one step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub cfg: AdamConfig,
    pub step: u64,
    pub slots: Vec<Moments<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(cfg: AdamConfig, store: &ParamStore<T>, ids: impl IntoIterator<Item = ParamId>) -> Self {
        let slots = ids
            .into_iter()
            .map(|id| {
                let shape = store.value(id).shape();
                Moments { id, m: Tensor::zeros(shape), v: Tensor::zeros(shape) }
            })
            .collect();
        Adam { cfg, step: 0, slots }
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.slots.iter().map(|s| s.id)
    }

    /// One update with learning rate `lr` from the gradient buffers in `store`.
    /// Nothing is modified when a managed parameter has no gradient.
    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64) -> Result<()> {
        for s in &self.slots {
            let p = store.get(s.id);
            match &p.grad {
                None => return Err(Error::MissingGrad(p.name.clone())),
                Some(g) if g.shape() != p.value.shape() => {
                    return Err(arg_err!("gradient of {} has shape {:?}", p.name, g.shape()))
                }
                Some(_) => {}
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let b1 = T::from_f64(self.cfg.beta1);
        let b2 = T::from_f64(self.cfg.beta2);
        let one = T::one();
        let c1 = one - b1.powi(t);
        let c2 = one - b2.powi(t);
        let eps = T::from_f64(self.cfg.eps);
        let lr = T::from_f64(lr);
        for s in &mut self.slots {
            let p = store.get_mut(s.id);
            let g = p.grad.as_ref().expect("checked above");
            let (m, v) = (s.m.data_mut(), s.v.data_mut());
            for (i, (w, &gi)) in p.value.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[i] = b1 * m[i] + (one - b1) * gi;
                v[i] = b2 * v[i] + (one - b2) * gi * gi;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// `lr` before `decay_start`, then linear decay reaching zero at `epochs`.
pub fn lr_schedule(epoch: usize, lr: f64, epochs: usize, decay_start: usize) -> Result<f64> {
    if epoch > epochs {
        return Err(arg_err!("epoch {epoch} outside 0..={epochs}"));
    }
    if decay_start > epochs {
        return Err(arg_err!("decay start {decay_start} after the last epoch {epochs}"));
    }
    if epoch < decay_start {
        return Ok(lr);
    }
    if epochs == decay_start {
        return Ok(0.0);
    }
    Ok(lr * ((epochs - epoch) as f64 / (epochs - decay_start) as f64))
}
