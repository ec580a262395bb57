//! Batch normalization over the channel axis (axis 1) of `[batch, channels, ...]`.
//!
//! Training normalizes with the biased batch variance and updates the running
//! statistics as a bias-corrected exponential moving average: after `t` updates
//! they equal `sum_k (1 - m) m^(t-k) batch_k / (1 - m^t)`, which is computed as
//! `running += (batch - running) * (1 - m) / (1 - m^t)`. The first update copies
//! the batch statistics; later updates converge to the plain
//! `running = m * running + (1 - m) * batch` rule. Statistics are accumulated in f64.

use crate::error::{Error, Result};
use crate::nn::Phase;
use crate::tensor::{Real, Tensor};

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.9;

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub epsilon: f64,
    pub momentum: f64,
    /// Number of training-mode updates folded into the running statistics.
    pub updates: u64,
}

#[derive(Clone, Debug)]
pub struct BatchNormCache<T> {
    normalized: Vec<T>,
    inv_std: Vec<f64>,
    shape: Vec<usize>,
}

/// `(batch, channels, spatial)` view of a tensor shape.
fn layout(shape: &[usize], channels: usize) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 || shape[1] != channels {
        return Err(Error::shape(format!(
            "batch norm over {channels} channels got input {shape:?}"
        )));
    }
    Ok((shape[0], channels, shape[2..].iter().product()))
}

impl<T: Real> BatchNorm<T> {
    pub fn new(channels: usize) -> Result<Self> {
        Ok(BatchNorm {
            gamma: Tensor::full(&[channels], T::one())?,
            beta: Tensor::zeros(&[channels])?,
            running_mean: Tensor::zeros(&[channels])?,
            running_var: Tensor::full(&[channels], T::one())?,
            epsilon: DEFAULT_EPSILON,
            momentum: DEFAULT_MOMENTUM,
            updates: 0,
        })
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<(Tensor<T>, BatchNormCache<T>)> {
        let (b, c, s) = layout(x.shape(), self.channels())?;
        if b < 2 {
            return Err(Error::BatchSize(format!(
                "training-mode batch norm needs at least 2 samples, got {b}"
            )));
        }
        let n = (b * s) as f64;
        let data = x.data();
        let mut normalized = vec![T::zero(); data.len()];
        let mut out = vec![T::zero(); data.len()];
        let mut inv_std = vec![0.0f64; c];
        let m = self.momentum;
        let t = self.updates.saturating_add(1);
        let weight = (1.0 - m) / (1.0 - m.powf(t as f64));
        for ch in 0..c {
            let planes = (0..b).map(|i| (i * c + ch) * s);
            let mean = planes.clone().map(|o| data[o..o + s].iter().map(|v| v.as_f64()).sum::<f64>()).sum::<f64>() / n;
            let var = planes
                .clone()
                .map(|o| data[o..o + s].iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>())
                .sum::<f64>()
                / n;
            let istd = 1.0 / (var + self.epsilon).sqrt();
            inv_std[ch] = istd;
            let (g, be) = (self.gamma.data()[ch], self.beta.data()[ch]);
            for o in planes {
                for i in o..o + s {
                    let xh = T::from_f64_lossy((data[i].as_f64() - mean) * istd);
                    normalized[i] = xh;
                    out[i] = g * xh + be;
                }
            }
            let rm = &mut self.running_mean.data_mut()[ch];
            *rm = T::from_f64_lossy(rm.as_f64() + (mean - rm.as_f64()) * weight);
            let rv = &mut self.running_var.data_mut()[ch];
            *rv = T::from_f64_lossy(rv.as_f64() + (var - rv.as_f64()) * weight);
        }
        self.updates = t;
        let cache = BatchNormCache {
            normalized,
            inv_std,
            shape: x.shape().to_vec(),
        };
        Ok((Tensor::from_parts(x.shape().to_vec(), out), cache))
    }

    pub fn forward_eval(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (b, c, s) = layout(x.shape(), self.channels())?;
        let mut out = x.data().to_vec();
        for ch in 0..c {
            let mean = self.running_mean.data()[ch];
            let istd = T::from_f64_lossy(1.0 / (self.running_var.data()[ch].as_f64() + self.epsilon).sqrt());
            let (g, be) = (self.gamma.data()[ch], self.beta.data()[ch]);
            for i in 0..b {
                let o = (i * c + ch) * s;
                for v in &mut out[o..o + s] {
                    *v = g * ((*v - mean) * istd) + be;
                }
            }
        }
        Ok(Tensor::from_parts(x.shape().to_vec(), out))
    }

    /// Returns `(dx, dgamma, dbeta)`.
    pub fn backward(
        &self,
        cache: &BatchNormCache<T>,
        dy: &Tensor<T>,
    ) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
        if dy.shape() != cache.shape.as_slice() {
            return Err(Error::shape(format!(
                "batch norm upstream gradient {:?} vs cached {:?}",
                dy.shape(),
                cache.shape
            )));
        }
        let (b, c, s) = layout(&cache.shape, self.channels())?;
        let n = (b * s) as f64;
        let dyd = dy.data();
        let xh = &cache.normalized;
        let mut dx = vec![T::zero(); dyd.len()];
        let mut dgamma = vec![T::zero(); c];
        let mut dbeta = vec![T::zero(); c];
        for ch in 0..c {
            let planes = (0..b).map(|i| (i * c + ch) * s);
            let (mut sum_dy, mut sum_dy_xh) = (0.0f64, 0.0f64);
            for o in planes.clone() {
                for i in o..o + s {
                    sum_dy += dyd[i].as_f64();
                    sum_dy_xh += dyd[i].as_f64() * xh[i].as_f64();
                }
            }
            dgamma[ch] = T::from_f64_lossy(sum_dy_xh);
            dbeta[ch] = T::from_f64_lossy(sum_dy);
            let scale = self.gamma.data()[ch].as_f64() * cache.inv_std[ch] / n;
            for o in planes {
                for i in o..o + s {
                    let g = n * dyd[i].as_f64() - sum_dy - xh[i].as_f64() * sum_dy_xh;
                    dx[i] = T::from_f64_lossy(scale * g);
                }
            }
        }
        Ok((
            Tensor::from_parts(cache.shape.clone(), dx),
            Tensor::from_parts(vec![c], dgamma),
            Tensor::from_parts(vec![c], dbeta),
        ))
    }
}

/// Forward in either phase; training mode also updates the running statistics.
pub fn batchnorm_forward<T: Real>(layer: &mut BatchNorm<T>, x: &Tensor<T>, phase: Phase) -> Result<Tensor<T>> {
    match phase {
        Phase::Train => layer.forward_train(x).map(|(y, _)| y),
        Phase::Eval => layer.forward_eval(x),
    }
}
