//! Binary model files.
//!
//! ```text
//! offset 0   "MCNN"
//! offset 4   u32 LE format version (1)
//! offset 8   u64 LE header length N
//! offset 16  N bytes of UTF-8 JSON header
//! then       every tensor listed in header.tensors, in order, as raw f32 LE values
//! ```
//!
//! The header records the input shape, seed, block layout, every layer with its
//! hyperparameters (including each batch-norm layer's update count), the name
//! and shape of each stored tensor, and the optimizer hyperparameters and step
//! count. Tensors are layer parameters and batch-norm
//! running statistics in layer order, followed by the Adam first and second
//! moments when an optimizer is attached.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    Activation, AdamConfig, AdamState, BatchNorm, Conv2d, Dense, Dropout, Layer, LayerSpec, Model,
};
use crate::tensor::Tensor;

use super::{CONV_BLOCK_ORDER, HIDDEN_BLOCK_ORDER};

pub const MAGIC: &[u8; 4] = b"MCNN";
pub const VERSION: u32 = 1;
const PREAMBLE: usize = 16;

#[derive(Serialize, Deserialize)]
struct Header {
    input_shape: [usize; 3],
    seed: u64,
    conv_block: String,
    hidden_block: String,
    layers: Vec<LayerSpec>,
    tensors: Vec<TensorEntry>,
    optimizer: Option<OptimizerHeader>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct OptimizerHeader {
    #[serde(flatten)]
    config: AdamConfig,
    step: u64,
}

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        offset,
        message: message.into(),
    }
}

pub fn model_to_bytes(model: &Model<f32>) -> Vec<u8> {
    let mut named: Vec<(String, &Tensor<f32>)> = Vec::new();
    for (i, layer) in model.layers.iter().enumerate() {
        for (name, t) in layer.named_tensors() {
            named.push((format!("layers.{i}.{name}"), t));
        }
    }
    if let Some(opt) = &model.optimizer {
        for (i, m) in opt.m.iter().enumerate() {
            named.push((format!("adam.m.{i}"), m));
        }
        for (i, v) in opt.v.iter().enumerate() {
            named.push((format!("adam.v.{i}"), v));
        }
    }
    let header = Header {
        input_shape: model.input_shape,
        seed: model.seed,
        conv_block: CONV_BLOCK_ORDER.into(),
        hidden_block: HIDDEN_BLOCK_ORDER.into(),
        layers: model.specs(),
        tensors: named
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
        optimizer: model.optimizer.as_ref().map(|o| OptimizerHeader {
            config: o.config,
            step: o.t,
        }),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let payload: usize = named.iter().map(|(_, t)| t.len() * 4).sum();
    let mut out = Vec::with_capacity(PREAMBLE + json.len() + payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in &named {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn save_model(model: &Model<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, model_to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model<f32>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    model_from_bytes(&bytes)
}

struct TensorReader<'a> {
    bytes: &'a [u8],
    offset: usize,
    entries: std::slice::Iter<'a, TensorEntry>,
}

impl TensorReader<'_> {
    fn next(&mut self, expected_name: &str) -> Result<Tensor<f32>> {
        let entry = self
            .entries
            .next()
            .ok_or_else(|| format_err(self.offset, format!("header lacks tensor `{expected_name}`")))?;
        if entry.name != expected_name {
            return Err(format_err(
                self.offset,
                format!("expected tensor `{expected_name}`, header lists `{}`", entry.name),
            ));
        }
        let count: usize = entry.shape.iter().product();
        let end = self.offset + count * 4;
        if end > self.bytes.len() {
            return Err(format_err(
                self.bytes.len(),
                format!("file truncated inside tensor `{}`", entry.name),
            ));
        }
        let data = self.bytes[self.offset..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let at = self.offset;
        self.offset = end;
        Tensor::new(&entry.shape, data).map_err(|e| format_err(at, format!("tensor `{}`: {e}", entry.name)))
    }
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<Model<f32>> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(format_err(0, "missing MCNN magic"));
    }
    if bytes.len() < PREAMBLE {
        return Err(format_err(bytes.len(), "file truncated inside the preamble"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(format_err(4, format!("unsupported version {version}")));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let header_end = PREAMBLE
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| format_err(bytes.len(), "file truncated inside the header"))?;
    let header: Header = serde_json::from_slice(&bytes[PREAMBLE..header_end])
        .map_err(|e| format_err(PREAMBLE + e.column().saturating_sub(1), format!("bad header: {e}")))?;

    let mut reader = TensorReader {
        bytes,
        offset: header_end,
        entries: header.tensors.iter(),
    };
    let mut layers = Vec::with_capacity(header.layers.len());
    for (i, spec) in header.layers.iter().enumerate() {
        let mut take = |name: &str| reader.next(&format!("layers.{i}.{name}"));
        let layer = match spec {
            LayerSpec::Conv2d {
                kernel,
                stride,
                padding,
                in_channels,
                out_channels,
            } => {
                if *kernel != 3 || *stride != 1 || padding != "same" {
                    return Err(format_err(PREAMBLE, format!("layer {i}: unsupported convolution geometry")));
                }
                let conv = Conv2d::from_parts(take("weight")?, take("bias")?)
                    .map_err(|e| format_err(PREAMBLE, format!("layer {i}: {e}")))?;
                if conv.in_channels() != *in_channels || conv.out_channels() != *out_channels {
                    return Err(format_err(PREAMBLE, format!("layer {i}: tensor shapes disagree with spec")));
                }
                Layer::Conv2d(conv)
            }
            LayerSpec::Activation { function } => Layer::Activation(*function),
            LayerSpec::MaxPool2d { window, stride } => {
                if (*window, *stride) != (2, 2) {
                    return Err(format_err(PREAMBLE, format!("layer {i}: unsupported pooling geometry")));
                }
                Layer::MaxPool2d
            }
            LayerSpec::BatchNorm {
                channels,
                epsilon,
                momentum,
                updates,
            } => {
                let bn = BatchNorm {
                    gamma: take("gamma")?,
                    beta: take("beta")?,
                    running_mean: take("running_mean")?,
                    running_var: take("running_var")?,
                    epsilon: *epsilon,
                    momentum: *momentum,
                    updates: *updates,
                };
                let ok = [&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var]
                    .iter()
                    .all(|t| t.shape() == [*channels]);
                if !ok {
                    return Err(format_err(PREAMBLE, format!("layer {i}: batch-norm tensors are not [{channels}]")));
                }
                Layer::BatchNorm(bn)
            }
            LayerSpec::Dropout { rate } => Layer::Dropout(
                Dropout::new(*rate).map_err(|e| format_err(PREAMBLE, format!("layer {i}: {e}")))?,
            ),
            LayerSpec::Flatten => Layer::Flatten,
            LayerSpec::Dense {
                in_features,
                out_features,
            } => {
                let dense = Dense::from_parts(take("weight")?, take("bias")?)
                    .map_err(|e| format_err(PREAMBLE, format!("layer {i}: {e}")))?;
                if dense.in_features() != *in_features || dense.out_features() != *out_features {
                    return Err(format_err(PREAMBLE, format!("layer {i}: tensor shapes disagree with spec")));
                }
                Layer::Dense(dense)
            }
        };
        layers.push(layer);
    }
    if !matches!(layers.last(), Some(Layer::Activation(Activation::Sigmoid))) {
        return Err(format_err(PREAMBLE, "model must end in a sigmoid activation"));
    }
    let mut model = Model::new(header.input_shape, layers, header.seed);
    if let Some(opt) = &header.optimizer {
        let n = model.params().len();
        let m = (0..n).map(|i| reader.next(&format!("adam.m.{i}"))).collect::<Result<Vec<_>>>()?;
        let v = (0..n).map(|i| reader.next(&format!("adam.v.{i}"))).collect::<Result<Vec<_>>>()?;
        let shapes_match = model
            .params()
            .iter()
            .zip(m.iter().zip(&v))
            .all(|(p, (m, v))| p.shape() == m.shape() && p.shape() == v.shape());
        if !shapes_match {
            return Err(format_err(PREAMBLE, "optimizer moments do not match parameter shapes"));
        }
        model.optimizer = Some(AdamState {
            config: opt.config,
            m,
            v,
            t: opt.step,
        });
    }
    if reader.entries.next().is_some() {
        return Err(format_err(reader.offset, "header lists tensors no layer consumes"));
    }
    if reader.offset != bytes.len() {
        return Err(format_err(reader.offset, "trailing bytes after the last tensor"));
    }
    Ok(model)
}
