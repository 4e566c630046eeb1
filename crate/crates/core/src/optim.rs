use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{lit, Real, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global-norm clipping threshold; `None` disables clipping.
    pub grad_clip: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_clip: Some(5.0),
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let open = |v: f64| v > 0.0 && v < 1.0;
        if !(self.learning_rate > 0.0 && open(self.beta1) && open(self.beta2) && self.eps > 0.0) {
            return Err(Error::Config(
                "adam needs lr > 0, 0 < beta1, beta2 < 1, eps > 0".into(),
            ));
        }
        if matches!(self.grad_clip, Some(c) if !(c > 0.0)) {
            return Err(Error::Config("grad_clip must be positive".into()));
        }
        Ok(())
    }
}

/// Adam with bias correction, applied after optional global-norm clipping.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub cfg: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(cfg: AdamConfig, params: &[&Tensor<T>]) -> Result<Self> {
        cfg.validate()?;
        Ok(Adam {
            cfg,
            step: 0,
            m: params.iter().map(|p| Tensor::zeros(&p.shape)).collect(),
            v: params.iter().map(|p| Tensor::zeros(&p.shape)).collect(),
        })
    }

    /// Clip `grads` in place and update `params`. Returns the pre-clip
    /// global gradient norm.
    pub fn update(&mut self, params: Vec<&mut Tensor<T>>, grads: &mut [Tensor<T>]) -> Result<f64> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "{} params, {} grads, {} moment slots",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads.iter()).enumerate() {
            if p.shape != g.shape || p.shape != self.m[i].shape {
                return Err(Error::Shape(format!("gradient {i} shape mismatch")));
            }
            if !g.all_finite() {
                return Err(Error::NonFinite(format!("gradient tensor {i}")));
            }
        }
        let norm = grads.iter().map(|g| g.sum_sq()).sum::<f64>().sqrt();
        if let Some(clip) = self.cfg.grad_clip {
            if norm > clip {
                let s = lit::<T>(clip / norm);
                for g in grads.iter_mut() {
                    g.data.iter_mut().for_each(|v| *v = *v * s);
                }
            }
        }
        self.step += 1;
        let c = &self.cfg;
        let (b1, b2) = (lit::<T>(c.beta1), lit::<T>(c.beta2));
        let bc1 = lit::<T>(1.0 - c.beta1.powi(self.step as i32));
        let bc2 = lit::<T>(1.0 - c.beta2.powi(self.step as i32));
        let (lr, eps) = (lit::<T>(c.learning_rate), lit::<T>(c.eps));
        for (((p, g), m), v) in params
            .into_iter()
            .zip(grads.iter())
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = b1 * m.data[i] + (T::one() - b1) * gi;
                v.data[i] = b2 * v.data[i] + (T::one() - b2) * gi * gi;
                let mh = m.data[i] / bc1;
                let vh = v.data[i] / bc2;
                p.data[i] = p.data[i] - lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(norm)
    }
}
