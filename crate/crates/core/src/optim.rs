//! Bias-corrected Adam over a list of parameter tensors.

use crate::diffcore::{Real, RealArray};
use crate::error::{Error, Result};

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
            lr: 0.005,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("invalid Adam hyperparameters {self:?}")))
        }
    }
}

/// Optimizer state: one first/second moment tensor per parameter tensor.
///
/// All arithmetic happens in `T`, so a state restored from an `f32`
/// checkpoint continues bit-for-bit.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T = f32> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<RealArray<T>>,
    pub v: Vec<RealArray<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig, params: &[&RealArray<T>]) -> Self {
        let zeros: Vec<RealArray<T>> = params.iter().map(|p| RealArray::zeros(p.shape())).collect();
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One update. `names` label the tensors in error messages. Nothing is
    /// modified if any gradient is non-finite.
    pub fn step(
        &mut self,
        params: &mut [&mut RealArray<T>],
        grads: &[&RealArray<T>],
        names: &[&str],
    ) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::config(format!(
                "optimizer tracks {} tensors, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            let name = names.get(i).copied().unwrap_or("?");
            if p.shape() != g.shape() || p.shape() != self.m[i].shape() {
                return Err(Error::Shape {
                    op: "adam step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            g.ensure_finite(&format!("gradient of {name}"))?;
        }

        self.step += 1;
        let b1 = T::lit(self.config.beta1);
        let b2 = T::lit(self.config.beta2);
        let lr = T::lit(self.config.lr);
        let eps = T::lit(self.config.eps);
        let t = i32::try_from(self.step).unwrap_or(i32::MAX);
        let c1 = T::one() - b1.powi(t);
        let c2 = T::one() - b2.powi(t);

        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let ps = p.as_mut_slice();
            let ms = m.as_mut_slice();
            let vs = v.as_mut_slice();
            for (j, &gj) in g.as_slice().iter().enumerate() {
                ms[j] = b1 * ms[j] + (T::one() - b1) * gj;
                vs[j] = b2 * vs[j] + (T::one() - b2) * gj * gj;
                let m_hat = ms[j] / c1;
                let v_hat = vs[j] / c2;
                ps[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`. Returns the
/// norm before clipping. `max_norm <= 0` disables clipping.
pub fn clip_grad_norm<T: Real>(grads: &mut [RealArray<T>], max_norm: f64) -> T {
    let total = grads.iter().map(|g| g.sum_squares()).sum::<T>().sqrt();
    if max_norm > 0.0 && total > T::lit(max_norm) {
        let scale = T::lit(max_norm) / total;
        for g in grads.iter_mut() {
            g.as_mut_slice().iter_mut().for_each(|x| *x *= scale);
        }
    }
    total
}
