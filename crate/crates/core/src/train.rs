//! Self-supervised pre-training, supervised fine-tuning, and linear
//! evaluation.
//!
//! Every random decision (shuffles, augmentation draws, initialization) is
//! derived from the configured seed, so one `(config, data, seed)` triple
//! gives the same logged numbers on every run.

use std::time::Instant;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{make_views, AugmentationSpec};
use crate::autodiff::{sigmoid, Tape, Var};
use crate::error::{Error, Result};
use crate::metrics::{macro_f1, summarize, MetricSummary, PredictionBatch};
use crate::nn::{
    adam_step, batch_tensor, ema_update, embed, forward_encoder, forward_head, forward_projection,
    init_head, init_prototypes, init_ssl_params, AdamConfig, AdamState, EncoderConfig, ModelParams,
    ParamVars,
};
use crate::objectives::{
    byol_symmetric_loss, nt_xent_loss, renormalize_prototypes, swav_loss, ByolNetworks,
    CodeNormalization, SwavParams,
};
use crate::rng::RngStream;
use crate::signal::{DatasetSplit, Window};

/// Parameter name of the SwAV prototype bank inside [`ModelParams`].
pub const PROTOTYPES: &str = "swav.prototypes";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SslMethod {
    SimCLR,
    BYOL,
    SwAV,
}

impl SslMethod {
    pub const ALL: [SslMethod; 3] = [SslMethod::SimCLR, SslMethod::BYOL, SslMethod::SwAV];

    pub fn name(self) -> &'static str {
        match self {
            SslMethod::SimCLR => "simclr",
            SslMethod::BYOL => "byol",
            SslMethod::SwAV => "swav",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub method: SslMethod,
    pub augmentation: AugmentationSpec,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// NT-Xent temperature.
    pub temperature: f64,
    pub ema_decay: f64,
    pub n_prototypes: usize,
    pub swav_temperature: f64,
    pub sinkhorn_epsilon: f64,
    pub sinkhorn_iters: usize,
    pub codes: CodeNormalization,
    pub encoder: EncoderConfig,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            method: SslMethod::SimCLR,
            augmentation: AugmentationSpec::Combination {},
            epochs: 50,
            batch_size: 64,
            lr: 5e-4,
            weight_decay: 1e-3,
            seed: 0,
            temperature: 0.5,
            ema_decay: 0.996,
            n_prototypes: 30,
            swav_temperature: 0.1,
            sinkhorn_epsilon: 0.05,
            sinkhorn_iters: 3,
            codes: CodeNormalization::RowNormalized,
            encoder: EncoderConfig::default(),
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.augmentation.validate()?;
        self.encoder.validate()?;
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        // batch norm in the heads needs two rows; NT-Xent and SwAV need
        // them anyway
        if self.batch_size < 2 {
            return Err(Error::invalid("batch size must be at least 2"));
        }
        if !(self.lr > 0.0 && self.weight_decay >= 0.0) {
            return Err(Error::invalid(
                "lr must be positive and weight_decay nonnegative",
            ));
        }
        if !(self.temperature > 0.0 && self.swav_temperature > 0.0) {
            return Err(Error::invalid("temperatures must be positive"));
        }
        if !(0.0..=1.0).contains(&self.ema_decay) {
            return Err(Error::invalid("ema_decay must lie in [0, 1]"));
        }
        if self.method == SslMethod::SwAV && self.n_prototypes < 2 {
            return Err(Error::invalid("SwAV needs at least 2 prototypes"));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }

    fn swav(&self) -> SwavParams {
        SwavParams {
            temperature: self.swav_temperature,
            epsilon: self.sinkhorn_epsilon,
            n_iters: self.sinkhorn_iters,
            codes: self.codes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_macro_f1: Option<f64>,
    pub wall_seconds: f64,
}

/// One entry per completed epoch.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainingLog {
    /// `(epoch, split, metric, value)` rows. Wall-clock time is left out so
    /// that reruns give identical rows; see [`TrainingLog::timing_rows`].
    pub fn rows(&self) -> Vec<(usize, &'static str, &'static str, f64)> {
        let mut rows = Vec::new();
        for e in &self.epochs {
            rows.push((e.epoch, "train", "loss", e.train_loss));
            if let Some(v) = e.val_loss {
                rows.push((e.epoch, "validation", "loss", v));
            }
            if let Some(v) = e.val_macro_f1 {
                rows.push((e.epoch, "validation", "macro_f1", v));
            }
        }
        rows
    }

    pub fn timing_rows(&self) -> Vec<(usize, f64)> {
        self.epochs
            .iter()
            .map(|e| (e.epoch, e.wall_seconds))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct PretrainOutput {
    /// Online network (and prototypes for SwAV) of the selected epoch.
    pub params: ModelParams,
    pub log: TrainingLog,
    pub best_epoch: usize,
}

fn pair_views(
    windows: &[&Window],
    spec: &AugmentationSpec,
    rng: &mut RngStream,
) -> Result<(Vec<Window>, Vec<Window>)> {
    // streams are assigned in sample order before the parallel map, so the
    // result does not depend on the thread count
    let streams: Vec<RngStream> = windows.iter().map(|_| rng.fork()).collect();
    let pairs: Vec<(Window, Window)> = windows
        .par_iter()
        .zip(streams)
        .map(|(w, mut r)| make_views(w, spec, &mut r))
        .collect::<Result<_>>()?;
    Ok(pairs.into_iter().unzip())
}

struct SslState<'a> {
    config: &'a PretrainConfig,
    online: ModelParams,
    target: Option<ModelParams>,
}

impl SslState<'_> {
    /// Loss of one view batch on a fresh tape, returning the tape, the bound
    /// online parameters, and the loss variable.
    fn loss(
        &self,
        vi: &[Window],
        vj: &[Window],
        trainable: bool,
    ) -> Result<(Tape, ParamVars, Var)> {
        let cfg = self.config;
        let mut tape = Tape::new();
        let online = self.online.bind(&mut tape, trainable);
        let xi = tape.constant(&batch_tensor(&vi.iter().collect::<Vec<_>>())?);
        let xj = tape.constant(&batch_tensor(&vj.iter().collect::<Vec<_>>())?);
        let loss = match cfg.method {
            SslMethod::SimCLR => {
                let hi = forward_encoder(&mut tape, &online, &cfg.encoder, xi)?;
                let hj = forward_encoder(&mut tape, &online, &cfg.encoder, xj)?;
                let zi = forward_projection(&mut tape, &online, hi)?;
                let zj = forward_projection(&mut tape, &online, hj)?;
                nt_xent_loss(&mut tape, zi, zj, cfg.temperature)?
            }
            SslMethod::BYOL => {
                let target = self.target.as_ref().expect("BYOL keeps a target network");
                let target = target.bind(&mut tape, false);
                let nets = ByolNetworks {
                    online: &online,
                    target: &target,
                    config: &cfg.encoder,
                };
                byol_symmetric_loss(&mut tape, xi, xj, &nets)?
            }
            SslMethod::SwAV => {
                let hi = forward_encoder(&mut tape, &online, &cfg.encoder, xi)?;
                let hj = forward_encoder(&mut tape, &online, &cfg.encoder, xj)?;
                let zi = forward_projection(&mut tape, &online, hi)?;
                let zj = forward_projection(&mut tape, &online, hj)?;
                let (zi, _) = tape.l2_normalize_rows(zi)?;
                let (zj, _) = tape.l2_normalize_rows(zj)?;
                let protos = online.get(PROTOTYPES)?;
                swav_loss(&mut tape, zi, zj, protos, &cfg.swav())?
            }
        };
        Ok((tape, online, loss))
    }

    fn step(&mut self, vi: &[Window], vj: &[Window], adam: &mut AdamState) -> Result<f64> {
        let (mut tape, bound, loss) = self.loss(vi, vj, true)?;
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return Err(Error::NonFinite("pre-training loss".into()));
        }
        tape.backward(loss)?;
        self.online.zero_grads();
        self.online.accumulate_grads(&tape, &bound)?;
        adam_step(adam, &mut self.online)?;
        if let Some(target) = self.target.as_mut() {
            ema_update(target, &self.online, self.config.ema_decay)?;
        }
        if let Some(p) = self.online.get_mut(PROTOTYPES) {
            renormalize_prototypes(p);
        }
        Ok(value)
    }

    /// Mean loss over fixed views, weighted by batch size.
    fn eval(&self, views: &(Vec<Window>, Vec<Window>)) -> Result<f64> {
        let bs = self.config.batch_size;
        let (mut total, mut count) = (0.0, 0usize);
        for (ci, cj) in views.0.chunks(bs).zip(views.1.chunks(bs)) {
            if ci.len() < 2 {
                continue;
            }
            let (tape, _, loss) = self.loss(ci, cj, false)?;
            total += tape.scalar(loss) * ci.len() as f64;
            count += ci.len();
        }
        if count == 0 {
            return Err(Error::invalid("validation set too small to evaluate"));
        }
        Ok(total / count as f64)
    }
}

/// Fresh parameters for `config`, including the prototype bank for SwAV.
pub fn init_pretrain_params(config: &PretrainConfig) -> Result<ModelParams> {
    init_from_stream(config, &mut RngStream::new(config.seed))
}

fn init_from_stream(config: &PretrainConfig, rng: &mut RngStream) -> Result<ModelParams> {
    let mut params = init_ssl_params(&config.encoder, rng.next_u64())?;
    let proto_seed = rng.next_u64();
    if config.method == SslMethod::SwAV {
        let c = init_prototypes(
            config.n_prototypes,
            config.encoder.projection_dim,
            proto_seed,
        )?;
        params.insert(PROTOTYPES, c)?;
    }
    Ok(params)
}

/// Runs `config.epochs` epochs over `split.train` and returns the online
/// parameters of the epoch with the lowest validation loss (training loss
/// when the validation partition is empty). Incomplete final batches are
/// dropped.
pub fn pretrain(config: &PretrainConfig, split: &DatasetSplit) -> Result<PretrainOutput> {
    config.validate()?;
    let train = &split.train;
    if train.is_empty() {
        return Err(Error::invalid("empty training partition"));
    }
    if config.batch_size > train.len() {
        return Err(Error::invalid(format!(
            "batch size {} exceeds the {} training windows",
            config.batch_size,
            train.len()
        )));
    }
    let mut rng = RngStream::new(config.seed);
    let online = init_from_stream(config, &mut rng)?;
    let target = (config.method == SslMethod::BYOL).then(|| online.clone());
    let mut state = SslState {
        config,
        online,
        target,
    };
    let mut adam = AdamState::new(&state.online, config.adam());

    let val_views = if split.validation.is_empty() {
        None
    } else {
        let refs: Vec<&Window> = split.validation.iter().collect();
        Some(pair_views(&refs, &config.augmentation, &mut rng.fork())?)
    };

    let mut log = TrainingLog::default();
    let mut best: Option<(f64, usize, ModelParams)> = None;
    for epoch in 0..config.epochs {
        let start = Instant::now();
        let mut epoch_rng = rng.fork();
        let mut order: Vec<usize> = (0..train.len()).collect();
        epoch_rng.shuffle(&mut order);
        let mut losses = Vec::new();
        for idx in order.chunks_exact(config.batch_size) {
            let refs: Vec<&Window> = idx.iter().map(|&i| &train[i]).collect();
            let (vi, vj) = pair_views(&refs, &config.augmentation, &mut epoch_rng)?;
            losses.push(state.step(&vi, &vj, &mut adam)?);
        }
        let train_loss = losses.iter().sum::<f64>() / losses.len() as f64;
        let val_loss = val_views.as_ref().map(|v| state.eval(v)).transpose()?;
        let score = val_loss.unwrap_or(train_loss);
        if best.as_ref().is_none_or(|(b, _, _)| score < *b) {
            best = Some((score, epoch, state.online.clone()));
        }
        info!(
            "{} epoch {epoch}: train {train_loss:.5} val {:?}",
            config.method.name(),
            val_loss
        );
        log.epochs.push(EpochLog {
            epoch,
            train_loss,
            val_loss,
            val_macro_f1: None,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
    }
    let (_, best_epoch, params) = best.expect("at least one epoch");
    Ok(PretrainOutput {
        params,
        log,
        best_epoch,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneConfig {
    pub lr: f64,
    pub epochs: usize,
    /// Train only the classification head (linear evaluation).
    pub freeze_encoder: bool,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub seed: u64,
    pub threshold: f64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            lr: 5e-3,
            epochs: 50,
            freeze_encoder: false,
            batch_size: 64,
            weight_decay: 1e-3,
            seed: 0,
            threshold: 0.5,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::invalid("fine-tuning lr must be positive"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch_size must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::invalid("threshold must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FinetuneOutput {
    /// Encoder (`encoder.*`) and classification head (`head.*`) of the
    /// selected epoch.
    pub params: ModelParams,
    pub log: TrainingLog,
    pub best_epoch: usize,
    pub best_val_macro_f1: f64,
    pub class_names: Vec<String>,
}

fn label_space(split: &DatasetSplit) -> Result<Vec<String>> {
    let first = split
        .train
        .first()
        .ok_or_else(|| Error::invalid("empty training partition"))?;
    let classes = first.labels.classes.clone();
    if classes.is_empty() {
        return Err(Error::invalid("training windows carry no labels"));
    }
    for w in split.partitions().into_iter().flat_map(|(_, p)| p.iter()) {
        if w.labels.classes != classes || w.labels.indicator.len() != classes.len() {
            return Err(Error::shape(format!(
                "window from '{}' has a different label space",
                w.source_subject
            )));
        }
    }
    Ok(classes)
}

fn targets(windows: &[Window]) -> Vec<Vec<u8>> {
    windows.iter().map(|w| w.labels.indicator.clone()).collect()
}

/// Classification scores (sigmoid of the head logits) for `windows`.
pub fn predict(
    params: &ModelParams,
    encoder: &EncoderConfig,
    windows: &[Window],
) -> Result<Vec<Vec<f64>>> {
    let emb = embed(params, encoder, windows)?;
    head_scores(params, &emb)
}

fn head_scores(params: &ModelParams, emb: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if emb.is_empty() {
        return Ok(Vec::new());
    }
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let h = tape.constant(&crate::autodiff::Tensor::from_rows(emb)?);
    let logits = forward_head(&mut tape, &bound, h)?;
    Ok(tape
        .to_tensor(logits)?
        .rows()
        .into_iter()
        .map(|r| r.into_iter().map(sigmoid).collect())
        .collect())
}

fn flatten_targets(rows: &[Vec<u8>]) -> Vec<f64> {
    rows.iter().flatten().map(|&t| t as f64).collect()
}

/// Mean binary cross-entropy of sigmoid scores; clamped away from 0 and 1.
fn bce_of_scores(scores: &[Vec<f64>], targets: &[Vec<u8>]) -> f64 {
    let eps = 1e-12;
    let (mut total, mut n) = (0.0, 0usize);
    for (s, t) in scores.iter().zip(targets) {
        for (p, &y) in s.iter().zip(t) {
            let p = p.clamp(eps, 1.0 - eps);
            total -= if y == 1 { p.ln() } else { (1.0 - p).ln() };
            n += 1;
        }
    }
    total / n as f64
}

/// Per-feature standardization fitted on training embeddings.
struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    fn fit(rows: &[Vec<f64>]) -> Self {
        let d = rows.first().map_or(0, Vec::len);
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            mean.iter_mut().zip(r).for_each(|(m, v)| *m += v / n);
        }
        let mut var = vec![0.0; d];
        for r in rows {
            for j in 0..d {
                var[j] += (r[j] - mean[j]).powi(2) / n;
            }
        }
        // constant features are centred but not rescaled
        let scale = var
            .iter()
            .map(|v| if *v > 1e-24 { v.sqrt() } else { 1.0 })
            .collect();
        Self { mean, scale }
    }

    fn apply(&self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        rows.iter()
            .map(|r| {
                r.iter()
                    .zip(&self.mean)
                    .zip(&self.scale)
                    .map(|((v, m), s)| (v - m) / s)
                    .collect()
            })
            .collect()
    }

    /// Head acting on raw embeddings equivalent to `head` acting on
    /// standardized ones.
    fn fold_into_head(&self, head: &ModelParams) -> Result<ModelParams> {
        let w = head
            .get("head.weight")
            .ok_or_else(|| Error::invalid("missing head.weight"))?;
        let b = head
            .get("head.bias")
            .ok_or_else(|| Error::invalid("missing head.bias"))?;
        let d = self.mean.len();
        let mut wv = w.values().to_vec();
        let mut bv = b.values().to_vec();
        for (row, bias) in wv.chunks_mut(d).zip(bv.iter_mut()) {
            for j in 0..d {
                row[j] /= self.scale[j];
                *bias -= row[j] * self.mean[j];
            }
        }
        let mut out = ModelParams::new();
        out.insert(
            "head.weight",
            crate::autodiff::Tensor::new(w.shape().to_vec(), wv)?,
        )?;
        out.insert(
            "head.bias",
            crate::autodiff::Tensor::new(b.shape().to_vec(), bv)?,
        )?;
        Ok(out)
    }
}

/// Adds a classification head to the encoder in `pretrained` and trains with
/// per-class binary cross-entropy. With `freeze_encoder`, encoder parameters
/// are never touched. The returned parameters come from the epoch with the
/// highest validation macro-F1.
pub fn finetune(
    pretrained: &ModelParams,
    encoder: &EncoderConfig,
    config: &FinetuneConfig,
    split: &DatasetSplit,
) -> Result<FinetuneOutput> {
    config.validate()?;
    encoder.validate()?;
    if split.validation.is_empty() {
        return Err(Error::invalid(
            "fine-tuning needs a validation partition for model selection",
        ));
    }
    let class_names = label_space(split)?;
    let encoder_params = pretrained.subset("encoder.");
    if encoder_params.is_empty() {
        return Err(Error::invalid("pretrained parameters contain no encoder"));
    }
    let mut rng = RngStream::new(config.seed);
    let mut params = encoder_params;
    params.extend(init_head(
        encoder.embedding_dim,
        class_names.len(),
        rng.next_u64(),
    )?)?;
    let adam_cfg = AdamConfig {
        lr: config.lr,
        weight_decay: config.weight_decay,
        ..AdamConfig::default()
    };
    let train = &split.train;
    let train_targets = targets(train);
    let val_targets = targets(&split.validation);

    // frozen encoder: embeddings never change, so compute them once and
    // standardize them with training statistics; the standardization is
    // folded into the head of every snapshot
    let frozen = if config.freeze_encoder {
        let train_emb = embed(&params, encoder, train)?;
        let scaler = Standardizer::fit(&train_emb);
        let val_emb = embed(&params, encoder, &split.validation)?;
        Some((scaler.apply(&train_emb), scaler.apply(&val_emb), scaler))
    } else {
        None
    };
    let mut head = params.subset("head.");
    let mut adam = if config.freeze_encoder {
        AdamState::new(&head, adam_cfg)
    } else {
        AdamState::new(&params, adam_cfg)
    };

    let mut log = TrainingLog::default();
    let mut best: Option<(f64, usize, ModelParams)> = None;
    for epoch in 0..config.epochs {
        let start = Instant::now();
        let mut order: Vec<usize> = (0..train.len()).collect();
        rng.shuffle(&mut order);
        let mut losses = Vec::new();
        for idx in order.chunks(config.batch_size) {
            let batch_targets: Vec<Vec<u8>> =
                idx.iter().map(|&i| train_targets[i].clone()).collect();
            let mut tape = Tape::new();
            let loss_value = if let Some((train_emb, _, _)) = &frozen {
                let rows: Vec<Vec<f64>> = idx.iter().map(|&i| train_emb[i].clone()).collect();
                let bound = head.bind(&mut tape, true);
                let h = tape.constant(&crate::autodiff::Tensor::from_rows(&rows)?);
                let logits = forward_head(&mut tape, &bound, h)?;
                let loss = tape.bce_with_logits(logits, flatten_targets(&batch_targets))?;
                tape.backward(loss)?;
                head.zero_grads();
                head.accumulate_grads(&tape, &bound)?;
                adam_step(&mut adam, &mut head)?;
                tape.scalar(loss)
            } else {
                let refs: Vec<&Window> = idx.iter().map(|&i| &train[i]).collect();
                let bound = params.bind(&mut tape, true);
                let x = tape.constant(&batch_tensor(&refs)?);
                let h = forward_encoder(&mut tape, &bound, encoder, x)?;
                let logits = forward_head(&mut tape, &bound, h)?;
                let loss = tape.bce_with_logits(logits, flatten_targets(&batch_targets))?;
                tape.backward(loss)?;
                params.zero_grads();
                params.accumulate_grads(&tape, &bound)?;
                adam_step(&mut adam, &mut params)?;
                tape.scalar(loss)
            };
            if !loss_value.is_finite() {
                return Err(Error::NonFinite("fine-tuning loss".into()));
            }
            losses.push(loss_value * idx.len() as f64);
        }
        let train_loss = losses.iter().sum::<f64>() / train.len() as f64;

        let val_scores = match &frozen {
            Some((_, val_emb, _)) => head_scores(&head, val_emb)?,
            None => predict(&params, encoder, &split.validation)?,
        };
        let val_loss = bce_of_scores(&val_scores, &val_targets);
        let val_batch = PredictionBatch::new(val_scores, val_targets.clone(), class_names.clone())?;
        let val_f1 = macro_f1(&val_batch, config.threshold)?;

        if best.as_ref().is_none_or(|(b, _, _)| val_f1 > *b) {
            let snapshot = if let Some((_, _, scaler)) = &frozen {
                let mut p = params.subset("encoder.");
                p.extend(scaler.fold_into_head(&head)?)?;
                p
            } else {
                params.clone()
            };
            best = Some((val_f1, epoch, snapshot));
        }
        log.epochs.push(EpochLog {
            epoch,
            train_loss,
            val_loss: Some(val_loss),
            val_macro_f1: Some(val_f1),
            wall_seconds: start.elapsed().as_secs_f64(),
        });
    }
    let (best_val_macro_f1, best_epoch, params) = best.expect("at least one epoch");
    Ok(FinetuneOutput {
        params,
        log,
        best_epoch,
        best_val_macro_f1,
        class_names,
    })
}

/// Metrics of a fine-tuned model on `windows`.
pub fn evaluate(
    params: &ModelParams,
    encoder: &EncoderConfig,
    windows: &[Window],
    class_names: &[String],
    threshold: f64,
) -> Result<MetricSummary> {
    if windows.is_empty() {
        return Err(Error::invalid("nothing to evaluate"));
    }
    let scores = predict(params, encoder, windows)?;
    let batch = PredictionBatch::new(scores, targets(windows), class_names.to_vec())?;
    summarize(&batch, threshold)
}

#[derive(Debug, Clone)]
pub struct EvalOutput {
    pub test_macro_f1: f64,
    pub test: MetricSummary,
    pub finetune: FinetuneOutput,
}

/// Fine-tunes and scores the selected model on the test partition.
pub fn finetune_and_test(
    pretrained: &ModelParams,
    encoder: &EncoderConfig,
    config: &FinetuneConfig,
    split: &DatasetSplit,
) -> Result<EvalOutput> {
    let ft = finetune(pretrained, encoder, config, split)?;
    let test = evaluate(
        &ft.params,
        encoder,
        &split.test,
        &ft.class_names,
        config.threshold,
    )?;
    Ok(EvalOutput {
        test_macro_f1: test.macro_f1,
        test,
        finetune: ft,
    })
}

/// Linear evaluation: frozen encoder, new head, test macro-F1 at the
/// configured threshold.
pub fn linear_eval(
    pretrained: &ModelParams,
    encoder: &EncoderConfig,
    config: &FinetuneConfig,
    split: &DatasetSplit,
) -> Result<EvalOutput> {
    let frozen = FinetuneConfig {
        freeze_encoder: true,
        ..config.clone()
    };
    finetune_and_test(pretrained, encoder, &frozen, split)
}
