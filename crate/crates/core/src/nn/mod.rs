//! Layers with hand-written forward and backward passes, and the sequential
//! model that chains them.

pub mod adam;
pub mod batchnorm;
pub mod conv;
pub mod layers;
pub mod pool;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use batchnorm::{batchnorm_forward, BatchNorm};
pub use conv::{conv2d_forward, Conv2d};
pub use layers::{activation, bce_loss, dense_forward, dropout_forward, Activation, Dense, Dropout};
pub use pool::{maxpool2d_backward, maxpool2d_forward, ArgmaxMap};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Train,
    Eval,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer<T> {
    Conv2d(Conv2d<T>),
    Activation(Activation),
    MaxPool2d,
    BatchNorm(BatchNorm<T>),
    Dropout(Dropout),
    Flatten,
    Dense(Dense<T>),
}

/// Architecture-only description of a layer, as recorded in model files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: String,
    },
    Activation {
        function: Activation,
    },
    MaxPool2d {
        window: usize,
        stride: usize,
    },
    BatchNorm {
        channels: usize,
        epsilon: f64,
        momentum: f64,
        updates: u64,
    },
    Dropout {
        rate: f64,
    },
    Flatten,
    Dense {
        in_features: usize,
        out_features: usize,
    },
}

impl<T: Real> Layer<T> {
    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Conv2d(c) => LayerSpec::Conv2d {
                in_channels: c.in_channels(),
                out_channels: c.out_channels(),
                kernel: conv::KERNEL,
                stride: 1,
                padding: "same".into(),
            },
            Layer::Activation(a) => LayerSpec::Activation { function: *a },
            Layer::MaxPool2d => LayerSpec::MaxPool2d { window: 2, stride: 2 },
            Layer::BatchNorm(b) => LayerSpec::BatchNorm {
                channels: b.channels(),
                epsilon: b.epsilon,
                momentum: b.momentum,
                updates: b.updates,
            },
            Layer::Dropout(d) => LayerSpec::Dropout { rate: d.rate() },
            Layer::Flatten => LayerSpec::Flatten,
            Layer::Dense(d) => LayerSpec::Dense {
                in_features: d.in_features(),
                out_features: d.out_features(),
            },
        }
    }

    /// Trainable tensors in a fixed order.
    pub fn params(&self) -> Vec<&Tensor<T>> {
        match self {
            Layer::Conv2d(c) => vec![&c.weight, &c.bias],
            Layer::BatchNorm(b) => vec![&b.gamma, &b.beta],
            Layer::Dense(d) => vec![&d.weight, &d.bias],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            Layer::Conv2d(c) => vec![&mut c.weight, &mut c.bias],
            Layer::BatchNorm(b) => vec![&mut b.gamma, &mut b.beta],
            Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
            _ => Vec::new(),
        }
    }

    /// Every stored tensor with its name: parameters, then running statistics.
    pub fn named_tensors(&self) -> Vec<(&'static str, &Tensor<T>)> {
        match self {
            Layer::Conv2d(c) => vec![("weight", &c.weight), ("bias", &c.bias)],
            Layer::BatchNorm(b) => vec![
                ("gamma", &b.gamma),
                ("beta", &b.beta),
                ("running_mean", &b.running_mean),
                ("running_var", &b.running_var),
            ],
            Layer::Dense(d) => vec![("weight", &d.weight), ("bias", &d.bias)],
            _ => Vec::new(),
        }
    }
}

#[derive(Clone, Debug)]
enum LayerCache<T> {
    Conv(conv::ConvCache<T>),
    Activation(Tensor<T>),
    MaxPool(ArgmaxMap),
    BatchNorm(batchnorm::BatchNormCache<T>),
    Dropout(Tensor<T>),
    Flatten(Vec<usize>),
    Dense(Tensor<T>),
}

/// Intermediates retained by a training-mode forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    layers: Vec<LayerCache<T>>,
    generation: u64,
}

/// A sequential network ending in a single sigmoid unit.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T = f32> {
    /// `[channels, height, width]` of one input sample.
    pub input_shape: [usize; 3],
    pub layers: Vec<Layer<T>>,
    pub optimizer: Option<AdamState<T>>,
    pub seed: u64,
    generation: u64,
}

impl<T: Real> Model<T> {
    pub fn new(input_shape: [usize; 3], layers: Vec<Layer<T>>, seed: u64) -> Self {
        Model {
            input_shape,
            layers,
            optimizer: None,
            seed,
            generation: 0,
        }
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.layers.iter().flat_map(Layer::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<usize> {
        let s = x.shape();
        if s.len() != 4 || s[1..] != self.input_shape {
            return Err(Error::shape(format!(
                "model expects [batch, {}, {}, {}], got {:?}",
                self.input_shape[0], self.input_shape[1], self.input_shape[2], s
            )));
        }
        Ok(s[0])
    }

    fn finish(&self, out: Tensor<T>, batch: usize) -> Result<Tensor<T>> {
        if out.shape() != [batch, 1] {
            return Err(Error::shape(format!(
                "model head produced {:?}, expected [{batch}, 1]",
                out.shape()
            )));
        }
        out.into_reshape(&[batch])
    }

    /// Eval-mode forward: returns probabilities `[batch]`. Draws no randomness.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let batch = self.check_input(x)?;
        let mut h = x.clone();
        for layer in &self.layers {
            h = match layer {
                Layer::Conv2d(c) => c.forward(&h, false)?.0,
                Layer::Activation(a) => activation(&h, *a),
                Layer::MaxPool2d => maxpool2d_forward(&h)?.0,
                Layer::BatchNorm(b) => b.forward_eval(&h)?,
                Layer::Dropout(_) => h,
                Layer::Flatten => flatten(h)?,
                Layer::Dense(d) => d.forward(&h)?,
            };
        }
        self.finish(h, batch)
    }

    /// Full forward pass. Training mode samples dropout masks from `rng`,
    /// updates batch-norm running statistics and returns a cache for
    /// [`Model::backward`]; evaluation returns `None` for the cache.
    pub fn forward(
        &mut self,
        x: &Tensor<T>,
        phase: Phase,
        rng: &mut Rng,
    ) -> Result<(Tensor<T>, Option<ForwardCache<T>>)> {
        if phase == Phase::Eval {
            return Ok((self.predict(x)?, None));
        }
        let batch = self.check_input(x)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &mut self.layers {
            let (next, cache) = match layer {
                Layer::Conv2d(c) => {
                    let (y, cache) = c.forward(&h, true)?;
                    (y, LayerCache::Conv(cache.expect("cache requested")))
                }
                Layer::Activation(a) => {
                    let y = activation(&h, *a);
                    (y.clone(), LayerCache::Activation(y))
                }
                Layer::MaxPool2d => {
                    let (y, map) = maxpool2d_forward(&h)?;
                    (y, LayerCache::MaxPool(map))
                }
                Layer::BatchNorm(b) => {
                    let (y, cache) = b.forward_train(&h)?;
                    (y, LayerCache::BatchNorm(cache))
                }
                Layer::Dropout(d) => {
                    let (y, mask) = d.forward(&h, Phase::Train, rng);
                    (y, LayerCache::Dropout(mask.expect("train mode yields a mask")))
                }
                Layer::Flatten => {
                    let shape = h.shape().to_vec();
                    (flatten(h)?, LayerCache::Flatten(shape))
                }
                Layer::Dense(d) => {
                    let y = d.forward(&h)?;
                    (y, LayerCache::Dense(h))
                }
            };
            caches.push(cache);
            h = next;
        }
        let p = self.finish(h, batch)?;
        Ok((
            p,
            Some(ForwardCache {
                layers: caches,
                generation: self.generation,
            }),
        ))
    }

    /// Gradients of the loss for every parameter, in [`Model::params`] order,
    /// given `dL/dp` for the `[batch]` output.
    pub fn backward(&self, cache: &ForwardCache<T>, dp: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        if cache.generation != self.generation || cache.layers.len() != self.layers.len() {
            return Err(Error::State(
                "forward cache is stale: parameters changed since the forward pass".into(),
            ));
        }
        let batch = dp.shape()[0];
        let mut grad = dp.reshape(&[batch, 1])?;
        let mut per_layer: Vec<Vec<Tensor<T>>> = vec![Vec::new(); self.layers.len()];
        for (i, (layer, lc)) in self.layers.iter().zip(&cache.layers).enumerate().rev() {
            let need_dx = i > 0;
            grad = match (layer, lc) {
                (Layer::Conv2d(c), LayerCache::Conv(cc)) => {
                    let (dx, dw, db) = c.backward(cc, &grad, need_dx)?;
                    per_layer[i] = vec![dw, db];
                    match dx {
                        Some(dx) => dx,
                        None => break,
                    }
                }
                (Layer::Activation(a), LayerCache::Activation(out)) => a.backward(out, &grad)?,
                (Layer::MaxPool2d, LayerCache::MaxPool(map)) => maxpool2d_backward(map, &grad)?,
                (Layer::BatchNorm(b), LayerCache::BatchNorm(bc)) => {
                    let (dx, dg, db) = b.backward(bc, &grad)?;
                    per_layer[i] = vec![dg, db];
                    dx
                }
                (Layer::Dropout(_), LayerCache::Dropout(mask)) => {
                    grad.zip_map(mask, crate::tensor::ZipOp::Mul)?
                }
                (Layer::Flatten, LayerCache::Flatten(shape)) => grad.into_reshape(shape)?,
                (Layer::Dense(d), LayerCache::Dense(x)) => {
                    let (dx, dw, db) = d.backward(x, &grad, need_dx)?;
                    per_layer[i] = vec![dw, db];
                    match dx {
                        Some(dx) => dx,
                        None => break,
                    }
                }
                _ => return Err(Error::State(format!("cache entry {i} does not match its layer"))),
            };
        }
        Ok(per_layer.into_iter().flatten().collect())
    }

    /// Attach an optimizer with fresh moments unless one is already present.
    pub fn ensure_optimizer(&mut self, config: AdamConfig) -> Result<()> {
        match &mut self.optimizer {
            Some(state) => {
                config.validate()?;
                state.config = config;
            }
            None => {
                let shapes: Vec<Vec<usize>> =
                    self.params().iter().map(|p| p.shape().to_vec()).collect();
                let refs: Vec<&[usize]> = shapes.iter().map(Vec::as_slice).collect();
                self.optimizer = Some(AdamState::new(config, &refs)?);
            }
        }
        Ok(())
    }

    /// Apply one Adam update; invalidates outstanding forward caches.
    pub fn apply_gradients(&mut self, grads: &[Tensor<T>]) -> Result<()> {
        let mut state = self
            .optimizer
            .take()
            .ok_or_else(|| Error::State("no optimizer attached".into()))?;
        let result = {
            let mut params = self.params_mut();
            state.step(&mut params, grads)
        };
        self.optimizer = Some(state);
        self.generation += 1;
        result
    }
}

fn flatten<T: Real>(h: Tensor<T>) -> Result<Tensor<T>> {
    let b = h.shape()[0];
    let rest = h.len() / b;
    h.into_reshape(&[b, rest])
}

/// Spec-level entry points.
pub fn model_forward<T: Real>(
    model: &mut Model<T>,
    x: &Tensor<T>,
    phase: Phase,
    rng: &mut Rng,
) -> Result<(Tensor<T>, Option<ForwardCache<T>>)> {
    model.forward(x, phase, rng)
}

pub fn model_backward<T: Real>(
    model: &Model<T>,
    cache: Option<&ForwardCache<T>>,
    dp: &Tensor<T>,
) -> Result<Vec<Tensor<T>>> {
    let cache = cache.ok_or_else(|| {
        Error::State("backward needs the cache of a training-mode forward pass".into())
    })?;
    model.backward(cache, dp)
}
