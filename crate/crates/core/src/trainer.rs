//! Multi-task training: a shared encoder feeding a level-1 head, a level-2
//! head and the hierarchy contrastive term.
//!
//! The per-batch objective is `ce_l1 + ce_l2 + β · scl`. Gradients are
//! clipped to a global L2 norm and applied with Adam. Each epoch ends with a
//! dev evaluation; the best level-2 macro-F1 epoch is kept and training stops
//! after `patience` epochs without improvement.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::PathBuf;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::build_training_pool;
use crate::corpus::{expand_multilabel, RelationExample, SplitSet};
use crate::encoder::{Encoder, SentenceEncoder, DEFAULT_MAX_LEN};
use crate::error::{Error, Result};
use crate::evaluation::{gold_sets, score, EvalReport, PredictionRecord};
use crate::hierarchy::{Level, SenseHierarchy, SenseLabel};
use crate::losses::{
    cross_entropy_with_grad, hier_contrastive, hier_contrastive_with_grad, ClassifierHead,
    LossBreakdown, DEFAULT_TEMPERATURE,
};
use crate::pairing::{build_pair_selection, Strategy, StrategyName};

pub const ADAPTER_DIR_ENV: &str = "HIERCL_ADAPTER_DIR";

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const EVAL_CHUNK: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Toy,
    Adapter,
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EncoderKind::Toy => "toy",
            EncoderKind::Adapter => "adapter",
        })
    }
}

impl FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "toy" => Ok(EncoderKind::Toy),
            "adapter" | "pretrained-adapter" => Ok(EncoderKind::Adapter),
            other => Err(Error::Usage(format!(
                "unknown encoder `{other}` (expected toy or adapter)"
            ))),
        }
    }
}

/// Flat training configuration. Unset pairing weights fall back to the
/// strategy's preset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub grad_clip_l2: f64,
    pub beta: f64,
    pub temperature: f64,
    pub strategy: StrategyName,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pos_weight: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub neg_weight: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coarse_pos_weight: Option<f64>,
    pub seed: u64,
    pub encoder: EncoderKind,
    pub dim: usize,
    pub max_len: usize,
    pub augmentation: bool,
    /// `false` drops the contrastive term whatever `beta` says.
    pub contrastive: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adapter_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 3e-5,
            batch_size: 16,
            max_epochs: 25,
            patience: 10,
            grad_clip_l2: 2.0,
            beta: 1.0,
            temperature: DEFAULT_TEMPERATURE,
            strategy: StrategyName::Ours,
            pos_weight: None,
            neg_weight: None,
            coarse_pos_weight: None,
            seed: 0,
            encoder: EncoderKind::Toy,
            dim: 64,
            max_len: DEFAULT_MAX_LEN,
            augmentation: true,
            contrastive: true,
            adapter_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn strategy(&self) -> Strategy {
        let p = Strategy::preset(self.strategy);
        Strategy {
            name: self.strategy,
            pos_weight: self.pos_weight.unwrap_or(p.pos_weight),
            neg_weight: self.neg_weight.unwrap_or(p.neg_weight),
            coarse_pos_weight: self.coarse_pos_weight.unwrap_or(p.coarse_pos_weight),
        }
    }

    pub fn effective_beta(&self) -> f64 {
        if self.contrastive {
            self.beta
        } else {
            0.0
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return bad("batch_size, max_epochs and patience must be >= 1".into());
        }
        if self.patience > self.max_epochs {
            return bad(format!(
                "patience {} exceeds max_epochs {}",
                self.patience, self.max_epochs
            ));
        }
        if !(self.grad_clip_l2 > 0.0) {
            return bad(format!(
                "grad_clip_l2 must be positive, got {}",
                self.grad_clip_l2
            ));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be non-negative, got {}", self.beta));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad(format!(
                "temperature must be positive, got {}",
                self.temperature
            ));
        }
        if self.dim < 2 {
            return bad(format!("dim must be >= 2, got {}", self.dim));
        }
        if self.max_len < 3 {
            return bad(format!("max_len must be >= 3, got {}", self.max_len));
        }
        if self.encoder == EncoderKind::Adapter && self.adapter_dir.is_none() {
            return bad(format!(
                "adapter encoder needs adapter_dir (or {ADAPTER_DIR_ENV})"
            ));
        }
        self.strategy().validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text)?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    pub encoder: Encoder,
    pub head_l1: ClassifierHead,
    pub head_l2: ClassifierHead,
}

/// Gradients in parameter order: projection weight/bias, level-1 head
/// weight/bias, level-2 head weight/bias.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub projection_weight: Array2<f64>,
    pub projection_bias: Array1<f64>,
    pub l1_weight: Array2<f64>,
    pub l1_bias: Array1<f64>,
    pub l2_weight: Array2<f64>,
    pub l2_bias: Array1<f64>,
}

impl Gradients {
    fn slices(&self) -> [&[f64]; 6] {
        [
            self.projection_weight.as_slice().expect("contiguous"),
            self.projection_bias.as_slice().expect("contiguous"),
            self.l1_weight.as_slice().expect("contiguous"),
            self.l1_bias.as_slice().expect("contiguous"),
            self.l2_weight.as_slice().expect("contiguous"),
            self.l2_bias.as_slice().expect("contiguous"),
        ]
    }

    pub fn l2_norm(&self) -> f64 {
        self.slices()
            .iter()
            .flat_map(|s| s.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    fn scale(&mut self, k: f64) {
        self.projection_weight *= k;
        self.projection_bias *= k;
        self.l1_weight *= k;
        self.l1_bias *= k;
        self.l2_weight *= k;
        self.l2_bias *= k;
    }
}

impl Model {
    /// Fresh model; the projection and both heads get distinct seeds derived
    /// from `cfg.seed`.
    pub fn new(cfg: &TrainConfig, h: &SenseHierarchy) -> Result<Self> {
        let encoder = match cfg.encoder {
            EncoderKind::Toy => Encoder::toy(cfg.dim, cfg.seed)?,
            EncoderKind::Adapter => {
                let dir = cfg.adapter_dir.as_ref().ok_or_else(|| {
                    Error::Config(format!(
                        "adapter encoder needs adapter_dir (or {ADAPTER_DIR_ENV})"
                    ))
                })?;
                Encoder::adapter(dir, cfg.dim, cfg.seed)?
            }
        }
        .with_max_len(cfg.max_len);
        let d = encoder.dim();
        Ok(Model {
            head_l1: ClassifierHead::seeded(
                Level::L1,
                h.classes(Level::L1).len(),
                d,
                cfg.seed.wrapping_add(1),
            ),
            head_l2: ClassifierHead::seeded(
                Level::L2,
                h.classes(Level::L2).len(),
                d,
                cfg.seed.wrapping_add(2),
            ),
            encoder,
        })
    }

    fn params_mut(&mut self) -> [&mut [f64]; 6] {
        [
            self.encoder
                .projection
                .weight
                .as_slice_mut()
                .expect("contiguous"),
            self.encoder
                .projection
                .bias
                .as_slice_mut()
                .expect("contiguous"),
            self.head_l1.weight.as_slice_mut().expect("contiguous"),
            self.head_l1.bias.as_slice_mut().expect("contiguous"),
            self.head_l2.weight.as_slice_mut().expect("contiguous"),
            self.head_l2.bias.as_slice_mut().expect("contiguous"),
        ]
    }

    fn param_sizes(&self) -> [usize; 6] {
        [
            self.encoder.projection.weight.len(),
            self.encoder.projection.bias.len(),
            self.head_l1.weight.len(),
            self.head_l1.bias.len(),
            self.head_l2.weight.len(),
            self.head_l2.bias.len(),
        ]
    }

    /// Level-1 and level-2 label predictions per example.
    pub fn predict(
        &self,
        examples: &[RelationExample],
        h: &SenseHierarchy,
    ) -> Result<Vec<(String, String)>> {
        let mut out = Vec::with_capacity(examples.len());
        for chunk in examples.chunks(EVAL_CHUNK) {
            let v = self.encoder.encode(chunk)?.vectors;
            let p1 = self.head_l1.predict(&v);
            let p2 = self.head_l2.predict(&v);
            for (a, b) in p1.into_iter().zip(p2) {
                out.push((
                    h.classes(Level::L1)[a].clone(),
                    h.classes(Level::L2)[b].clone(),
                ));
            }
        }
        Ok(out)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let h = SenseHierarchy::builtin(ckpt.version);
        let mut m = Model::new(&ckpt.config, &h)?;
        if m.encoder.projection.weight.dim() != ckpt.projection.weight.dim() {
            return Err(Error::Config(
                "checkpoint projection does not match the configured encoder".into(),
            ));
        }
        m.encoder.projection = ckpt.projection.clone();
        m.head_l1 = ckpt.head_l1.clone();
        m.head_l2 = ckpt.head_l2.clone();
        Ok(m)
    }
}

/// Rows of a batch mapped to head targets.
#[derive(Clone, Debug)]
pub struct BatchTargets {
    pub l1: Vec<usize>,
    /// `(row, class)` for rows whose level-2 sense is in the allow-list.
    pub l2: Vec<(usize, usize)>,
    pub terminals: Vec<SenseLabel>,
}

pub fn batch_targets(batch: &[RelationExample], h: &SenseHierarchy) -> Result<BatchTargets> {
    let mut t = BatchTargets {
        l1: Vec::with_capacity(batch.len()),
        l2: Vec::new(),
        terminals: Vec::with_capacity(batch.len()),
    };
    for (row, e) in batch.iter().enumerate() {
        let s = e.primary_sense();
        let c1 = h
            .class_index(Level::L1, &s.l1)
            .ok_or_else(|| Error::UnknownLabel(s.l1.clone()))?;
        t.l1.push(c1);
        if let Some(c2) = h.class_index(Level::L2, &s.level2()) {
            t.l2.push((row, c2));
        }
        t.terminals.push(s.clone());
    }
    Ok(t)
}

/// Forward and backward pass for one batch.
#[derive(Clone, Debug)]
pub struct StepOutput {
    pub loss: LossBreakdown,
    pub grads: Gradients,
}

pub fn loss_and_grad(
    model: &Model,
    batch: &[RelationExample],
    h: &SenseHierarchy,
    cfg: &TrainConfig,
) -> Result<StepOutput> {
    let targets = batch_targets(batch, h)?;
    let (x, _) = model.encoder.featurize(batch)?;
    let v = model.encoder.projection.forward(&x);

    let z1 = model.head_l1.logits(&v);
    let (ce_l1, g1) = cross_entropy_with_grad(z1.view(), &targets.l1);
    let h1 = model.head_l1.backward(&v, &g1);

    let rows: Vec<usize> = targets.l2.iter().map(|&(r, _)| r).collect();
    let gold2: Vec<usize> = targets.l2.iter().map(|&(_, c)| c).collect();
    let v2 = v.select(ndarray::Axis(0), &rows);
    let z2 = model.head_l2.logits(&v2);
    let (ce_l2, g2) = cross_entropy_with_grad(z2.view(), &gold2);
    let h2 = model.head_l2.backward(&v2, &g2);

    let mut grad_v = h1.input;
    for (k, &r) in rows.iter().enumerate() {
        let mut row = grad_v.row_mut(r);
        row += &h2.input.row(k);
    }

    let beta = cfg.effective_beta();
    let sel = build_pair_selection(&targets.terminals, &cfg.strategy());
    let scl = if beta > 0.0 {
        let (scl, gs) = hier_contrastive_with_grad(&v, &sel, cfg.temperature);
        grad_v.scaled_add(beta, &gs);
        scl
    } else {
        hier_contrastive(&v, &sel, cfg.temperature)
    };

    let (pw, pb) = model.encoder.projection.backward(&x, &v, &grad_v);
    Ok(StepOutput {
        loss: LossBreakdown::new(ce_l1, ce_l2, scl, beta),
        grads: Gradients {
            projection_weight: pw,
            projection_bias: pb,
            l1_weight: h1.weight,
            l1_bias: h1.bias,
            l2_weight: h2.weight,
            l2_bias: h2.bias,
        },
    })
}

/// Adam with the usual moment defaults.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(model: &Model, learning_rate: f64) -> Self {
        let sizes = model.param_sizes();
        Adam {
            learning_rate,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, model: &mut Model, grads: &Gradients) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - ADAM_BETA1.powi(t);
        let c2 = 1.0 - ADAM_BETA2.powi(t);
        let lr = self.learning_rate;
        for (((p, g), m), v) in model
            .params_mut()
            .into_iter()
            .zip(grads.slices())
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            for i in 0..p.len() {
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub loss: LossBreakdown,
    pub grad_norm: f64,
    pub clipped_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub epoch: usize,
    pub split: String,
    pub metric: String,
    pub value: f64,
}

impl MetricRecord {
    fn new(epoch: usize, split: &str, metric: &str, value: f64) -> Self {
        MetricRecord {
            epoch,
            split: split.into(),
            metric: metric.into(),
            value,
        }
    }
}

pub fn write_jsonl<T: Serialize, W: Write>(records: &[T], mut out: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n").map_err(|e| Error::io("<jsonl>", e))?;
    }
    out.flush().map_err(|e| Error::io("<jsonl>", e))
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>, R: BufRead>(input: R) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line.map_err(|e| Error::io("<jsonl>", e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LevelMetrics {
    pub accuracy: f64,
    pub macro_f1: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DevMetrics {
    pub l1: LevelMetrics,
    pub l2: LevelMetrics,
}

impl DevMetrics {
    fn from_reports(l1: &EvalReport, l2: &EvalReport) -> Self {
        DevMetrics {
            l1: LevelMetrics {
                accuracy: l1.accuracy,
                macro_f1: l1.macro_f1,
            },
            l2: LevelMetrics {
                accuracy: l2.accuracy,
                macro_f1: l2.macro_f1,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: crate::hierarchy::Version,
    pub config: TrainConfig,
    pub epoch: usize,
    pub dev: DevMetrics,
    pub projection: crate::encoder::Projection,
    pub head_l1: ClassifierHead,
    pub head_l2: ClassifierHead,
}

impl Checkpoint {
    fn capture(
        model: &Model,
        h: &SenseHierarchy,
        cfg: &TrainConfig,
        epoch: usize,
        dev: DevMetrics,
    ) -> Self {
        Checkpoint {
            version: h.version,
            config: cfg.clone(),
            epoch,
            dev,
            projection: model.encoder.projection.clone(),
            head_l1: model.head_l1.clone(),
            head_l2: model.head_l2.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Level-1 and level-2 reports for `examples` (scored by rel_id).
pub fn evaluate(
    model: &Model,
    examples: &[RelationExample],
    h: &SenseHierarchy,
) -> Result<(EvalReport, EvalReport)> {
    let records = predict(model, examples, h)?;
    let gold = gold_sets(examples);
    let at = |level| crate::evaluation::predictions_at(&records, level);
    Ok((
        score(&at(Level::L1), &gold, Level::L1, h)?,
        score(&at(Level::L2), &gold, Level::L2, h)?,
    ))
}

/// One record per rel_id and level; the first occurrence of an id wins.
pub fn predict(
    model: &Model,
    examples: &[RelationExample],
    h: &SenseHierarchy,
) -> Result<Vec<PredictionRecord>> {
    let mut seen = std::collections::BTreeSet::new();
    let unique: Vec<RelationExample> = examples
        .iter()
        .filter(|e| seen.insert(e.rel_id.clone()))
        .cloned()
        .collect();
    if unique.is_empty() {
        return Ok(Vec::new());
    }
    let labels = model.predict(&unique, h)?;
    let mut out = Vec::with_capacity(unique.len() * 2);
    for (e, (l1, l2)) in unique.iter().zip(labels) {
        out.push(PredictionRecord {
            rel_id: e.rel_id.clone(),
            level: Level::L1,
            label: l1,
        });
        out.push(PredictionRecord {
            rel_id: e.rel_id.clone(),
            level: Level::L2,
            label: l2,
        });
    }
    Ok(out)
}

/// Training rows: multi-sense examples expanded, then augmented when enabled.
pub fn training_pool(
    train: &[RelationExample],
    augmentation: bool,
) -> Result<Vec<RelationExample>> {
    let expanded = expand_multilabel(train);
    if augmentation {
        build_training_pool(&expanded)
    } else {
        Ok(expanded)
    }
}

pub struct Trainer<'a> {
    pub cfg: TrainConfig,
    pub h: &'a SenseHierarchy,
    pub model: Model,
    pub optimizer: Adam,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: TrainConfig, h: &'a SenseHierarchy) -> Result<Self> {
        cfg.validate()?;
        let model = Model::new(&cfg, h)?;
        let optimizer = Adam::new(&model, cfg.learning_rate);
        Ok(Trainer {
            cfg,
            h,
            model,
            optimizer,
        })
    }

    /// One clipped optimizer step on `batch`.
    pub fn step(
        &mut self,
        batch: &[RelationExample],
        epoch: usize,
        step: usize,
    ) -> Result<StepRecord> {
        let StepOutput { loss, mut grads } = loss_and_grad(&self.model, batch, self.h, &self.cfg)?;
        let norm = grads.l2_norm();
        if !loss.total.is_finite() || !norm.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                step,
                batch_ids: batch.iter().map(RelationExample::log_id).collect(),
            });
        }
        let clipped = if norm > self.cfg.grad_clip_l2 {
            grads.scale(self.cfg.grad_clip_l2 / norm);
            grads.l2_norm()
        } else {
            norm
        };
        self.optimizer.update(&mut self.model, &grads);
        Ok(StepRecord {
            epoch,
            step,
            loss,
            grad_norm: norm,
            clipped_norm: clipped,
        })
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<MetricRecord>,
    pub steps: Vec<StepRecord>,
    /// Examples whose input was truncated to `max_len`, counted once per pass.
    pub truncated: usize,
}

pub fn train(cfg: &TrainConfig, splits: &SplitSet, h: &SenseHierarchy) -> Result<TrainOutcome> {
    let pool = training_pool(&splits.train, cfg.augmentation)?;
    if pool.is_empty() {
        return Err(Error::Usage("training split is empty".into()));
    }
    if splits.dev.is_empty() {
        return Err(Error::Usage(
            "dev split is empty; early stopping needs it".into(),
        ));
    }
    let mut trainer = Trainer::new(cfg.clone(), h)?;
    let truncated = pool
        .iter()
        .filter(|e| trainer.model.encoder.input_tokens(e).1)
        .count();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5eed);
    let mut order: Vec<usize> = (0..pool.len()).collect();
    let dev_targets = batch_targets(&splits.dev, h)?;

    let mut history = Vec::new();
    let mut steps = Vec::new();
    let mut best: Option<(f64, Checkpoint)> = None;
    let mut best_dev_loss = f64::INFINITY;
    let mut step = 0;
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut sums = [0.0; 4];
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<RelationExample> = chunk.iter().map(|&i| pool[i].clone()).collect();
            step += 1;
            let rec = trainer.step(&batch, epoch, step)?;
            for (s, v) in
                sums.iter_mut()
                    .zip([rec.loss.total, rec.loss.ce_l1, rec.loss.ce_l2, rec.loss.scl])
            {
                *s += v;
            }
            batches += 1;
            steps.push(rec);
        }
        for (name, s) in ["loss", "ce_l1", "ce_l2", "scl"].iter().zip(sums) {
            history.push(MetricRecord::new(epoch, "train", name, s / batches as f64));
        }

        let dev_loss = dev_ce(&trainer.model, &splits.dev, &dev_targets)?;
        best_dev_loss = best_dev_loss.min(dev_loss);
        let (r1, r2) = evaluate(&trainer.model, &splits.dev, h)?;
        let dev = DevMetrics::from_reports(&r1, &r2);
        history.extend([
            MetricRecord::new(epoch, "dev", "loss", dev_loss),
            MetricRecord::new(epoch, "dev", "best_loss", best_dev_loss),
            MetricRecord::new(epoch, "dev", "l1_accuracy", dev.l1.accuracy),
            MetricRecord::new(epoch, "dev", "l1_macro_f1", dev.l1.macro_f1),
            MetricRecord::new(epoch, "dev", "l2_accuracy", dev.l2.accuracy),
            MetricRecord::new(epoch, "dev", "l2_macro_f1", dev.l2.macro_f1),
        ]);

        let improved = best.as_ref().map_or(true, |(f, _)| dev.l2.macro_f1 > *f);
        if improved {
            best = Some((
                dev.l2.macro_f1,
                Checkpoint::capture(&trainer.model, h, cfg, epoch, dev),
            ));
        }
        let best_epoch = best.as_ref().map_or(epoch, |(_, c)| c.epoch);
        if epoch - best_epoch >= cfg.patience {
            break;
        }
    }
    let (_, checkpoint) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        checkpoint,
        history,
        steps,
        truncated,
    })
}

/// Mean level-1 plus level-2 cross-entropy over the dev rows (primary sense).
fn dev_ce(model: &Model, dev: &[RelationExample], t: &BatchTargets) -> Result<f64> {
    let v = model.encoder.encode(dev)?.vectors;
    let (ce1, _) = cross_entropy_with_grad(model.head_l1.logits(&v).view(), &t.l1);
    let rows: Vec<usize> = t.l2.iter().map(|&(r, _)| r).collect();
    let gold: Vec<usize> = t.l2.iter().map(|&(_, c)| c).collect();
    let v2 = v.select(ndarray::Axis(0), &rows);
    let (ce2, _) = cross_entropy_with_grad(model.head_l2.logits(&v2).view(), &gold);
    Ok(ce1 + ce2)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub beta: f64,
    pub seeds: Vec<u64>,
    pub dev: DevMetrics,
}

/// Default β grid: 0 to 2.4 in steps of 0.2.
pub fn default_beta_grid() -> Vec<f64> {
    (0..=12)
        .map(|i| (i as f64 * 0.2 * 10.0).round() / 10.0)
        .collect()
}

/// One model per β with the config's seed.
pub fn sweep_beta(
    cfg: &TrainConfig,
    splits: &SplitSet,
    h: &SenseHierarchy,
    grid: &[f64],
) -> Result<Vec<SweepRow>> {
    sweep_beta_seeds(cfg, splits, h, grid, &[cfg.seed])
}

/// Dev metrics averaged over `seeds` for each β. Runs in parallel.
pub fn sweep_beta_seeds(
    cfg: &TrainConfig,
    splits: &SplitSet,
    h: &SenseHierarchy,
    grid: &[f64],
    seeds: &[u64],
) -> Result<Vec<SweepRow>> {
    if grid.is_empty() || seeds.is_empty() {
        return Err(Error::Usage(
            "β grid and seed list must be non-empty".into(),
        ));
    }
    let jobs: Vec<(f64, u64)> = grid
        .iter()
        .flat_map(|&b| seeds.iter().map(move |&s| (b, s)))
        .collect();
    let results: Vec<DevMetrics> = jobs
        .par_iter()
        .map(|&(beta, seed)| {
            let run = TrainConfig {
                beta,
                seed,
                ..cfg.clone()
            };
            train(&run, splits, h).map(|o| o.checkpoint.dev)
        })
        .collect::<Result<_>>()?;
    Ok(grid
        .iter()
        .zip(results.chunks(seeds.len()))
        .map(|(&beta, runs)| SweepRow {
            beta,
            seeds: seeds.to_vec(),
            dev: mean_metrics(runs),
        })
        .collect())
}

fn mean_metrics(runs: &[DevMetrics]) -> DevMetrics {
    let n = runs.len() as f64;
    let avg = |f: fn(&DevMetrics) -> f64| runs.iter().map(f).sum::<f64>() / n;
    DevMetrics {
        l1: LevelMetrics {
            accuracy: avg(|m| m.l1.accuracy),
            macro_f1: avg(|m| m.l1.macro_f1),
        },
        l2: LevelMetrics {
            accuracy: avg(|m| m.l2.accuracy),
            macro_f1: avg(|m| m.l2.macro_f1),
        },
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationVariant {
    pub name: String,
    pub strategy: StrategyName,
    pub augmentation: bool,
    pub contrastive: bool,
}

impl AblationVariant {
    fn new(name: &str, strategy: StrategyName, augmentation: bool, contrastive: bool) -> Self {
        AblationVariant {
            name: name.into(),
            strategy,
            augmentation,
            contrastive,
        }
    }
}

/// Every strategy with both components on, then each component removed
/// from the default strategy.
pub fn default_variants() -> Vec<AblationVariant> {
    let mut v: Vec<_> = StrategyName::ALL
        .iter()
        .map(|&s| AblationVariant::new(&s.to_string(), s, true, true))
        .collect();
    v.push(AblationVariant::new(
        "-augmentation",
        StrategyName::Ours,
        false,
        true,
    ));
    v.push(AblationVariant::new(
        "-contrastive",
        StrategyName::Ours,
        true,
        false,
    ));
    v
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: AblationVariant,
    pub dev: DevMetrics,
    pub test: DevMetrics,
}

pub fn ablate(
    cfg: &TrainConfig,
    splits: &SplitSet,
    h: &SenseHierarchy,
    variants: &[AblationVariant],
) -> Result<Vec<AblationRow>> {
    variants
        .par_iter()
        .map(|v| {
            let run = TrainConfig {
                strategy: v.strategy,
                pos_weight: None,
                neg_weight: None,
                coarse_pos_weight: None,
                augmentation: v.augmentation,
                contrastive: v.contrastive,
                ..cfg.clone()
            };
            let out = train(&run, splits, h)?;
            let test = if splits.test.is_empty() {
                DevMetrics::default()
            } else {
                let model = Model::from_checkpoint(&out.checkpoint)?;
                let (r1, r2) = evaluate(&model, &splits.test, h)?;
                DevMetrics::from_reports(&r1, &r2)
            };
            Ok(AblationRow {
                variant: v.clone(),
                dev: out.checkpoint.dev,
                test,
            })
        })
        .collect()
}
