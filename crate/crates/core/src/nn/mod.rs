//! Encoder, projection head, and predictor built on the autodiff tape, plus
//! the optimizer, EMA target update, and checkpoint format.
//!
//! Parameters live in a [`ModelParams`] table keyed by dotted names
//! (`encoder.conv0.weight`, `projection.fc2.bias`, ...). A forward pass binds
//! the table onto a [`Tape`] and looks layers up by name.

mod checkpoint;
mod optim;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint,
};
pub use optim::{adam_step, ema_update, AdamConfig, AdamState};

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::signal::Window;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlock {
    pub out_channels: usize,
    pub kernel_size: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub n_leads: usize,
    pub conv_blocks: Vec<ConvBlock>,
    pub embedding_dim: usize,
    pub projection_dim: usize,
    pub prediction_hidden: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            n_leads: 12,
            conv_blocks: [8, 16, 16, 32, 32]
                .iter()
                .map(|&c| ConvBlock {
                    out_channels: c,
                    kernel_size: 7,
                    stride: 2,
                })
                .collect(),
            embedding_dim: 64,
            projection_dim: 32,
            prediction_hidden: 32,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_leads == 0 {
            return Err(Error::invalid("n_leads must be at least 1"));
        }
        if self.conv_blocks.is_empty() {
            return Err(Error::invalid("encoder needs at least one conv block"));
        }
        for (i, b) in self.conv_blocks.iter().enumerate() {
            if b.out_channels == 0 || b.stride == 0 {
                return Err(Error::invalid(format!(
                    "conv block {i} has zero channels or stride"
                )));
            }
            if b.kernel_size % 2 == 0 {
                return Err(Error::invalid(format!(
                    "conv block {i} kernel size {} must be odd",
                    b.kernel_size
                )));
            }
        }
        if self.projection_dim < 2 || self.embedding_dim < self.projection_dim {
            return Err(Error::invalid(format!(
                "need embedding_dim >= projection_dim >= 2, got {} and {}",
                self.embedding_dim, self.projection_dim
            )));
        }
        if self.prediction_hidden == 0 {
            return Err(Error::invalid("prediction_hidden must be positive"));
        }
        Ok(())
    }

    fn last_channels(&self) -> usize {
        self.conv_blocks
            .last()
            .map_or(self.n_leads, |b| b.out_channels)
    }
}

/// Ordered table of named parameters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelParams {
    entries: Vec<(String, Tensor)>,
}

impl ModelParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.get(&name).is_some() {
            return Err(Error::invalid(format!("duplicate parameter '{name}'")));
        }
        self.entries.push((name, tensor));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn zero_grads(&mut self) {
        self.entries.iter_mut().for_each(|(_, t)| t.zero_grad());
    }

    /// Parameters whose name starts with `prefix`.
    pub fn subset(&self, prefix: &str) -> ModelParams {
        ModelParams {
            entries: self
                .entries
                .iter()
                .filter(|(n, _)| n.starts_with(prefix))
                .cloned()
                .collect(),
        }
    }

    /// Moves every entry of `other` into `self`.
    pub fn extend(&mut self, other: ModelParams) -> Result<()> {
        for (n, t) in other.entries {
            self.insert(n, t)?;
        }
        Ok(())
    }

    /// True when both tables hold the same names, in order, with equal shapes.
    pub fn same_architecture(&self, other: &ModelParams) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|((na, ta), (nb, tb))| na == nb && ta.shape() == tb.shape())
    }

    /// FNV-1a hash over names, shapes, and value bits.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut eat = |bytes: &[u8]| {
            for b in bytes {
                h ^= u64::from(*b);
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        for (name, t) in &self.entries {
            eat(name.as_bytes());
            for d in t.shape() {
                eat(&(*d as u64).to_le_bytes());
            }
            for v in t.values() {
                eat(&v.to_bits().to_le_bytes());
            }
        }
        h
    }

    /// Places every parameter on `tape`, trainable or constant.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> ParamVars {
        ParamVars {
            names: self.entries.iter().map(|(n, _)| n.clone()).collect(),
            vars: self
                .entries
                .iter()
                .map(|(_, t)| {
                    if trainable {
                        tape.param(t)
                    } else {
                        tape.constant(t)
                    }
                })
                .collect(),
        }
    }

    /// Adds the tape gradients of bound parameters into each tensor's grad.
    pub fn accumulate_grads(&mut self, tape: &Tape, bound: &ParamVars) -> Result<()> {
        for (name, t) in self.entries.iter_mut() {
            let var = bound.get(name)?;
            let g = tape.grad(var);
            t.grad_mut().iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
        Ok(())
    }
}

/// Tape handles for a bound [`ModelParams`].
#[derive(Debug, Clone)]
pub struct ParamVars {
    names: Vec<String>,
    vars: Vec<Var>,
}

impl ParamVars {
    /// Pairs names with handles already on a tape.
    pub fn new(names: Vec<String>, vars: Vec<Var>) -> Result<Self> {
        if names.len() != vars.len() {
            return Err(Error::shape(format!(
                "{} names for {} handles",
                names.len(),
                vars.len()
            )));
        }
        Ok(Self { names, vars })
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.vars[i])
            .ok_or_else(|| Error::invalid(format!("parameter '{name}' is not bound")))
    }
}

fn uniform_tensor(shape: Vec<usize>, fan_in: usize, rng: &mut RngStream) -> Tensor {
    let bound = (3.0 / fan_in as f64).sqrt();
    let n = shape.iter().product();
    let values = (0..n).map(|_| rng.uniform(-bound, bound)).collect();
    Tensor::new(shape, values).expect("finite init")
}

fn dense_params(
    params: &mut ModelParams,
    prefix: &str,
    input: usize,
    output: usize,
    rng: &mut RngStream,
) -> Result<()> {
    params.insert(
        format!("{prefix}.weight"),
        uniform_tensor(vec![output, input], input, rng),
    )?;
    params.insert(format!("{prefix}.bias"), Tensor::zeros(vec![output]))
}

fn norm_params(params: &mut ModelParams, prefix: &str, width: usize) -> Result<()> {
    params.insert(
        format!("{prefix}.weight"),
        Tensor::new(vec![width], vec![1.0; width])?,
    )?;
    params.insert(format!("{prefix}.bias"), Tensor::zeros(vec![width]))
}

/// Fresh encoder, projection head, and predictor.
pub fn init_ssl_params(config: &EncoderConfig, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = RngStream::new(seed);
    let mut params = ModelParams::new();
    let mut channels = config.n_leads;
    for (i, b) in config.conv_blocks.iter().enumerate() {
        let fan_in = channels * b.kernel_size;
        params.insert(
            format!("encoder.conv{i}.weight"),
            uniform_tensor(
                vec![b.out_channels, channels, b.kernel_size],
                fan_in,
                &mut rng,
            ),
        )?;
        params.insert(
            format!("encoder.conv{i}.bias"),
            Tensor::zeros(vec![b.out_channels]),
        )?;
        channels = b.out_channels;
    }
    dense_params(
        &mut params,
        "encoder.fc",
        channels,
        config.embedding_dim,
        &mut rng,
    )?;
    let (e, p, h) = (
        config.embedding_dim,
        config.projection_dim,
        config.prediction_hidden,
    );
    dense_params(&mut params, "projection.fc1", e, e, &mut rng)?;
    norm_params(&mut params, "projection.bn1", e)?;
    dense_params(&mut params, "projection.fc2", e, p, &mut rng)?;
    dense_params(&mut params, "predictor.fc1", p, h, &mut rng)?;
    norm_params(&mut params, "predictor.bn1", h)?;
    dense_params(&mut params, "predictor.fc2", h, p, &mut rng)?;
    Ok(params)
}

/// `n_prototypes` random unit-norm rows of width `dim`.
pub fn init_prototypes(n_prototypes: usize, dim: usize, seed: u64) -> Result<Tensor> {
    if n_prototypes < 2 {
        return Err(Error::invalid("need at least 2 prototypes"));
    }
    let mut rng = RngStream::new(seed);
    let mut values: Vec<f64> = (0..n_prototypes * dim)
        .map(|_| rng.standard_normal())
        .collect();
    for row in values.chunks_mut(dim) {
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        row.iter_mut().for_each(|v| *v /= n);
    }
    Tensor::new(vec![n_prototypes, dim], values)
}

/// Linear classification head `embedding_dim -> n_classes`.
pub fn init_head(embedding_dim: usize, n_classes: usize, seed: u64) -> Result<ModelParams> {
    let mut rng = RngStream::new(seed);
    let mut params = ModelParams::new();
    dense_params(&mut params, "head", embedding_dim, n_classes, &mut rng)?;
    Ok(params)
}

/// Stacks windows into a `[B x n_leads x L]` tensor.
pub fn batch_tensor(windows: &[&Window]) -> Result<Tensor> {
    let first = windows
        .first()
        .ok_or_else(|| Error::invalid("empty batch"))?;
    let (c, l) = (first.n_leads(), first.len());
    let mut values = Vec::with_capacity(windows.len() * c * l);
    for w in windows {
        if w.n_leads() != c || w.len() != l {
            return Err(Error::shape(format!(
                "window {}x{} in a batch of {c}x{l}",
                w.n_leads(),
                w.len()
            )));
        }
        for lead in &w.data {
            values.extend_from_slice(lead);
        }
    }
    Tensor::new(vec![windows.len(), c, l], values)
}

/// `h = f(x)`: conv blocks (conv, bias, ReLU), global average pooling, dense.
pub fn forward_encoder(
    tape: &mut Tape,
    params: &ParamVars,
    config: &EncoderConfig,
    batch: Var,
) -> Result<Var> {
    let shape = tape.shape(batch).to_vec();
    if shape.len() != 3 || shape[1] != config.n_leads {
        return Err(Error::shape(format!(
            "encoder expects [B x {} x L], got {shape:?}",
            config.n_leads
        )));
    }
    let mut x = batch;
    for (i, b) in config.conv_blocks.iter().enumerate() {
        let w = params.get(&format!("encoder.conv{i}.weight"))?;
        let bias = params.get(&format!("encoder.conv{i}.bias"))?;
        x = tape.conv1d(x, w, b.stride, b.kernel_size / 2)?;
        x = tape.add_channel_bias(x, bias)?;
        x = tape.relu(x);
    }
    let pooled = tape.mean_time(x)?;
    debug_assert_eq!(tape.shape(pooled)[1], config.last_channels());
    dense(tape, params, "encoder.fc", pooled)
}

fn dense(tape: &mut Tape, params: &ParamVars, prefix: &str, x: Var) -> Result<Var> {
    let w = params.get(&format!("{prefix}.weight"))?;
    let b = params.get(&format!("{prefix}.bias"))?;
    tape.linear(x, w, b)
}

/// Epsilon of the batch normalization inside the MLP heads.
pub const BATCH_NORM_EPS: f64 = 1e-5;

fn mlp(tape: &mut Tape, params: &ParamVars, prefix: &str, x: Var) -> Result<Var> {
    let hidden = dense(tape, params, &format!("{prefix}.fc1"), x)?;
    let gamma = params.get(&format!("{prefix}.bn1.weight"))?;
    let beta = params.get(&format!("{prefix}.bn1.bias"))?;
    let hidden = tape.batch_norm(hidden, gamma, beta, BATCH_NORM_EPS)?;
    let hidden = tape.relu(hidden);
    dense(tape, params, &format!("{prefix}.fc2"), hidden)
}

/// `z = g(h)`, dense -> batch norm -> ReLU -> dense. Batch statistics are
/// always taken from the current batch, which must hold at least 2 rows.
pub fn forward_projection(tape: &mut Tape, params: &ParamVars, h: Var) -> Result<Var> {
    mlp(tape, params, "projection", h)
}

/// `q = q(z)`, same MLP shape as the projection head.
pub fn forward_predictor(tape: &mut Tape, params: &ParamVars, z: Var) -> Result<Var> {
    mlp(tape, params, "predictor", z)
}

/// Classification logits from embeddings.
pub fn forward_head(tape: &mut Tape, params: &ParamVars, h: Var) -> Result<Var> {
    dense(tape, params, "head", h)
}

/// Encoder outputs for `windows` without recording gradients.
pub fn embed(
    params: &ModelParams,
    config: &EncoderConfig,
    windows: &[Window],
) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::with_capacity(windows.len());
    for chunk in windows.chunks(256) {
        let refs: Vec<&Window> = chunk.iter().collect();
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, false);
        let x = tape.constant(&batch_tensor(&refs)?);
        let h = forward_encoder(&mut tape, &bound, config, x)?;
        rows.extend(tape.to_tensor(h)?.rows());
    }
    Ok(rows)
}
