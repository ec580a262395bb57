//! Model assembly, the training loop, evaluation and prediction.

mod model_file;
mod report;

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::{
    load_image, make_batches, sequential_batches, DatasetIndex, Label, Mode, INPUT_SIZE,
};
use crate::error::{Error, Result};
use crate::nn::{
    bce_loss, Activation, AdamConfig, BatchNorm, Conv2d, Dense, Dropout, Layer, Model, Phase,
};
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};

pub use model_file::{load_model, model_from_bytes, model_to_bytes, save_model, MAGIC, VERSION};
pub use report::{
    compare_reports, read_report, system_descriptor, write_report, EpochMetrics,
    ExperimentReport, Totals,
};

/// Layer order inside each convolutional block.
pub const CONV_BLOCK_ORDER: &str = "conv2d>activation>maxpool2d>batch_norm>dropout";
/// Layer order inside each hidden block.
pub const HIDDEN_BLOCK_ORDER: &str = "dense>activation>batch_norm>dropout";

const EVAL_BATCH: usize = 64;
const DROPOUT_STREAM: u64 = 0xD50;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_channels: usize,
    pub input_size: usize,
    pub conv_filters: Vec<usize>,
    pub hidden_widths: Vec<usize>,
    pub conv_dropout: f64,
    pub hidden_dropout: f64,
    pub hidden_activation: Activation,
    pub seed: u64,
}

impl ModelConfig {
    /// Four conv blocks (32/64/128/256 filters) and four 512-unit hidden blocks.
    pub fn for_mode(mode: Mode) -> Self {
        ModelConfig {
            input_channels: mode.channels(),
            input_size: INPUT_SIZE,
            conv_filters: vec![32, 64, 128, 256],
            hidden_widths: vec![512; 4],
            conv_dropout: 0.2,
            hidden_dropout: 0.5,
            hidden_activation: Activation::Relu,
            seed: 42,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !matches!(self.input_channels, 1 | 3) {
            return bad(format!("input channels must be 1 or 3, got {}", self.input_channels));
        }
        if self.conv_filters.is_empty() || self.conv_filters.contains(&0) {
            return bad("conv filter counts must be a non-empty list of positive values".into());
        }
        if self.hidden_widths.contains(&0) {
            return bad("hidden widths must be positive".into());
        }
        let halvings = 1usize << self.conv_filters.len();
        if self.input_size == 0 || !self.input_size.is_multiple_of(halvings) {
            return bad(format!(
                "input size {} is not divisible by 2^{} for the pooling stages",
                self.input_size,
                self.conv_filters.len()
            ));
        }
        for rate in [self.conv_dropout, self.hidden_dropout] {
            if !(0.0..1.0).contains(&rate) {
                return bad(format!("dropout rate {rate} outside [0, 1)"));
            }
        }
        Ok(())
    }

    /// Width of the flattened feature vector after the last conv block.
    pub fn flatten_width(&self) -> usize {
        let side = self.input_size >> self.conv_filters.len();
        side * side * self.conv_filters.last().copied().unwrap_or(self.input_channels)
    }
}

/// `[Conv > act > MaxPool > BN > Dropout] x N > Flatten > [Dense > act > BN > Dropout] x M > Dense(1) > sigmoid`,
/// Glorot-initialized from `config.seed`.
pub fn build_model<T: Real>(config: &ModelConfig) -> Result<Model<T>> {
    config.validate()?;
    let mut rng = Rng::new(config.seed);
    let act = config.hidden_activation;
    let mut layers = Vec::new();
    let mut channels = config.input_channels;
    for &filters in &config.conv_filters {
        layers.push(Layer::Conv2d(Conv2d::new(channels, filters, &mut rng)?));
        layers.push(Layer::Activation(act));
        layers.push(Layer::MaxPool2d);
        layers.push(Layer::BatchNorm(BatchNorm::new(filters)?));
        layers.push(Layer::Dropout(Dropout::new(config.conv_dropout)?));
        channels = filters;
    }
    layers.push(Layer::Flatten);
    let mut width = config.flatten_width();
    for &units in &config.hidden_widths {
        layers.push(Layer::Dense(Dense::new(width, units, &mut rng)?));
        layers.push(Layer::Activation(act));
        layers.push(Layer::BatchNorm(BatchNorm::new(units)?));
        layers.push(Layer::Dropout(Dropout::new(config.hidden_dropout)?));
        width = units;
    }
    layers.push(Layer::Dense(Dense::new(width, 1, &mut rng)?));
    layers.push(Layer::Activation(Activation::Sigmoid));
    Ok(Model::new(
        [config.input_channels, config.input_size, config.input_size],
        layers,
        config.seed,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 5,
            batch_size: 32,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            test_fraction: 0.2,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config(format!(
                "test fraction must lie in (0, 1), got {}",
                self.test_fraction
            )));
        }
        self.adam().validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

fn check_mode(model: &Model<f32>, mode: Mode) -> Result<()> {
    if model.input_shape[0] != mode.channels() {
        return Err(Error::Config(format!(
            "model takes {} input channels but {mode} mode supplies {}",
            model.input_shape[0],
            mode.channels()
        )));
    }
    if model.input_shape[1..] != [INPUT_SIZE, INPUT_SIZE] {
        return Err(Error::Config(format!(
            "model input is {}x{}, images load at {INPUT_SIZE}x{INPUT_SIZE}",
            model.input_shape[1], model.input_shape[2]
        )));
    }
    Ok(())
}

pub fn train(
    model: &mut Model<f32>,
    train_index: &DatasetIndex,
    test_index: &DatasetIndex,
    cfg: &TrainConfig,
) -> Result<Vec<EpochMetrics>> {
    train_with_progress(model, train_index, test_index, cfg, |_| {})
}

/// Like [`train`], calling `on_epoch` after each epoch's metrics are recorded.
///
/// `wall_seconds` covers batch loading and the optimization steps; the per-epoch
/// test evaluation is timed separately and excluded.
pub fn train_with_progress(
    model: &mut Model<f32>,
    train_index: &DatasetIndex,
    test_index: &DatasetIndex,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<Vec<EpochMetrics>> {
    cfg.validate()?;
    if train_index.is_empty() || test_index.is_empty() {
        return Err(Error::param("training and test indices must be non-empty"));
    }
    check_mode(model, train_index.mode())?;
    check_mode(model, test_index.mode())?;
    model.ensure_optimizer(cfg.adam())?;
    let dropout_base = Rng::new(cfg.seed).fork(DROPOUT_STREAM);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let wrap = |batch: usize| {
            move |e: Error| Error::Training {
                epoch,
                batch,
                source: Box::new(e),
            }
        };
        let mut rng = dropout_base.fork(epoch as u64);
        let started = Instant::now();
        let (mut loss_sum, mut correct, mut seen) = (0.0f64, 0usize, 0usize);
        for (bi, batch) in make_batches(train_index, cfg.batch_size, cfg.seed, epoch)?.enumerate() {
            let batch = batch.map_err(wrap(bi))?;
            let step = |model: &mut Model<f32>, rng: &mut Rng| -> Result<(f64, usize)> {
                let (p, cache) = model.forward(&batch.inputs, Phase::Train, rng)?;
                let (loss, dp) = bce_loss(&p, &batch.targets)?;
                let cache = cache.expect("training forward returns a cache");
                let grads = model.backward(&cache, &dp)?;
                model.apply_gradients(&grads)?;
                Ok((loss, count_correct(&p, &batch.targets)))
            };
            let (loss, hits) = step(model, &mut rng).map_err(wrap(bi))?;
            loss_sum += loss * batch.len() as f64;
            correct += hits;
            seen += batch.len();
        }
        let wall_seconds = started.elapsed().as_secs_f64();
        let test_accuracy = evaluate(model, test_index)?;
        let metrics = EpochMetrics {
            epoch,
            train_loss: loss_sum / seen as f64,
            train_accuracy: correct as f64 / seen as f64,
            test_accuracy,
            wall_seconds,
        };
        on_epoch(&metrics);
        history.push(metrics);
    }
    Ok(history)
}

fn count_correct(p: &Tensor<f32>, targets: &Tensor<f32>) -> usize {
    p.data()
        .iter()
        .zip(targets.data())
        .filter(|(&pi, &t)| Label::from_probability(pi as f64).target() == t)
        .count()
}

/// Eval-mode probabilities for every entry, in index order.
pub fn predict_index(model: &Model<f32>, index: &DatasetIndex) -> Result<Vec<f32>> {
    check_mode(model, index.mode())?;
    let mut out = Vec::with_capacity(index.len());
    for batch in sequential_batches(index, EVAL_BATCH)? {
        out.extend_from_slice(model.predict(&batch?.inputs)?.data());
    }
    Ok(out)
}

/// Fraction of entries whose thresholded prediction (p >= 0.5 is infected) matches the label.
pub fn evaluate(model: &Model<f32>, index: &DatasetIndex) -> Result<f64> {
    if index.is_empty() {
        return Err(Error::param("cannot evaluate on an empty index"));
    }
    let probs = predict_index(model, index)?;
    let correct = probs
        .iter()
        .zip(index.entries())
        .filter(|(&p, e)| Label::from_probability(p as f64) == e.label)
        .count();
    Ok(correct as f64 / index.len() as f64)
}

pub fn predict_one(model: &Model<f32>, image_path: &Path, mode: Mode) -> Result<(f64, Label)> {
    check_mode(model, mode)?;
    let planes = load_image(image_path, mode)?;
    let x = Tensor::new(&[1, mode.channels(), INPUT_SIZE, INPUT_SIZE], planes)?;
    let p = model.predict(&x)?.data()[0] as f64;
    Ok((p, Label::from_probability(p)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Entry;

    #[test]
    fn default_model_shapes() {
        let cfg = ModelConfig::for_mode(Mode::Raw);
        assert_eq!(cfg.flatten_width(), 4096);
        let model = build_model::<f32>(&cfg).unwrap();
        match &model.layers[0] {
            Layer::Conv2d(c) => assert_eq!(c.in_channels(), 3),
            other => panic!("first layer {other:?}"),
        }
        let dense_in: Vec<usize> = model
            .layers
            .iter()
            .filter_map(|l| match l {
                Layer::Dense(d) => Some(d.in_features()),
                _ => None,
            })
            .collect();
        assert_eq!(dense_in, vec![4096, 512, 512, 512, 512]);
        assert_eq!(model.layers.len(), 4 * 5 + 1 + 4 * 4 + 2);

        let canny = build_model::<f32>(&ModelConfig::for_mode(Mode::Canny)).unwrap();
        assert_eq!(canny.input_shape, [1, 64, 64]);
    }

    #[test]
    fn same_seed_same_parameters() {
        let cfg = ModelConfig::for_mode(Mode::Canny);
        let a = build_model::<f32>(&cfg).unwrap();
        let b = build_model::<f32>(&cfg).unwrap();
        assert_eq!(a, b);
        let other = build_model::<f32>(&ModelConfig { seed: 7, ..cfg }).unwrap();
        assert_ne!(a.params()[0], other.params()[0]);
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = ModelConfig::for_mode(Mode::Raw);
        cfg.input_size = 60;
        assert!(matches!(build_model::<f32>(&cfg), Err(Error::Config(_))));
        let mut cfg = ModelConfig::for_mode(Mode::Raw);
        cfg.input_channels = 2;
        assert!(build_model::<f32>(&cfg).is_err());
        let tc = TrainConfig {
            test_fraction: 1.5,
            ..Default::default()
        };
        assert!(tc.validate().is_err());
    }

    #[test]
    fn evaluate_empty_index_is_error() {
        let model = build_model::<f32>(&ModelConfig::for_mode(Mode::Raw)).unwrap();
        let idx = DatasetIndex::new(Vec::<Entry>::new(), Mode::Raw);
        assert!(matches!(evaluate(&model, &idx), Err(Error::Parameter(_))));
    }

    #[test]
    fn full_model_output_and_gradient_shapes() {
        let mut model = build_model::<f32>(&ModelConfig::for_mode(Mode::Raw)).unwrap();
        let x = Tensor::<f32>::glorot_uniform(&mut Rng::new(3), &[2, 3, 64, 64], 1, 1).unwrap();
        let x = x.map(|v| v.abs());
        let mut rng = Rng::new(0);
        let (p, cache) = model.forward(&x, Phase::Train, &mut rng).unwrap();
        assert_eq!(p.shape(), &[2]);
        assert!(p.data().iter().all(|&v| v > 0.0 && v < 1.0));
        let grads = model
            .backward(cache.as_ref().unwrap(), &Tensor::full(&[2], 0.1).unwrap())
            .unwrap();
        let shapes: Vec<_> = model.params().iter().map(|p| p.shape().to_vec()).collect();
        let gshapes: Vec<_> = grads.iter().map(|g| g.shape().to_vec()).collect();
        assert_eq!(shapes, gshapes);

        let e1 = model.predict(&x).unwrap();
        let e2 = model.predict(&x).unwrap();
        assert_eq!(e1, e2);
    }
}
