//! Single-hidden-layer MLP over the 19 summary-statistic features.
//!
//! `x → standardize → relu(W1·x + b1) → W2·h + b2 → softmax`, trained with
//! mean cross-entropy and Adam on shuffled mini-batches. After every epoch
//! the validation accuracy is measured; training stops after
//! `patience_epochs` consecutive epochs without an improvement larger than
//! `early_stop_tolerance`, and the weights of the best validation epoch are
//! kept.
//!
//! All randomness (initialization and batch order) comes from one ChaCha8
//! stream seeded with `MlpHyperparams::seed`; a run is bit-for-bit
//! reproducible on a given platform.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureVector, FEATURE_COUNT, FEATURE_LAYOUT_VERSION};
use crate::sentiment::{argmax3, Sentiment, SentimentDistribution};

const CLASSES: usize = 3;
const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPSILON: f64 = 1e-8;
const MIN_FEATURE_STD: f64 = 1e-8;

const MODEL_FORMAT: &str = "dcsent-mlp";
const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum MlpError {
    #[error("model was trained on feature layout v{found}, this build uses v{expected}")]
    LayoutMismatch { expected: u32, found: u32 },
    #[error("unsupported model file (format {format:?} v{version})")]
    UnsupportedFormat { format: String, version: u32 },
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
    #[error("{0} set is empty")]
    EmptySet(&'static str),
    #[error("training set contains a single class ({0}); need at least two")]
    SingleClass(Sentiment),
    #[error("training diverged at epoch {0} (non-finite loss)")]
    Diverged(usize),
    #[error("invalid grid: {0}")]
    BadGrid(String),
    #[error("every grid cell failed; first error: {0}")]
    AllCellsFailed(String),
    #[error("corrupt model file: {0}")]
    Corrupt(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlpHyperparams {
    pub hidden_size: usize,
    pub early_stop_tolerance: f64,
    pub patience_epochs: usize,
    pub learning_rate: f64,
    /// Capped at the training-set size.
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for MlpHyperparams {
    fn default() -> Self {
        Self {
            hidden_size: 128,
            early_stop_tolerance: 1e-6,
            patience_epochs: 50,
            learning_rate: 1e-3,
            batch_size: 200,
            max_epochs: 200,
            seed: 42,
        }
    }
}

impl MlpHyperparams {
    pub fn validate(&self) -> Result<(), MlpError> {
        let bad = |m: &str| Err(MlpError::InvalidHyperparams(m.to_string()));
        if self.hidden_size == 0 {
            return bad("hidden_size must be at least 1");
        }
        if !(self.early_stop_tolerance > 0.0 && self.early_stop_tolerance.is_finite()) {
            return bad("early_stop_tolerance must be positive");
        }
        if self.patience_epochs == 0 {
            return bad("patience_epochs must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub hidden_size: usize,
    /// `hidden_size × 19`, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// `3 × hidden_size`, row-major.
    pub w2: Vec<f64>,
    pub b2: [f64; CLASSES],
    pub feature_means: [f64; FEATURE_COUNT],
    pub feature_stds: [f64; FEATURE_COUNT],
    pub hyperparams: MlpHyperparams,
    pub feature_layout_version: u32,
    pub training_history: Vec<EpochRecord>,
    /// Epoch whose weights were kept, if trained.
    pub best_epoch: Option<usize>,
}

/// Gradients with the same shapes as the model weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: [f64; CLASSES],
}

impl Gradients {
    fn zeros(hidden: usize) -> Self {
        Self {
            w1: vec![0.0; hidden * FEATURE_COUNT],
            b1: vec![0.0; hidden],
            w2: vec![0.0; CLASSES * hidden],
            b2: [0.0; CLASSES],
        }
    }

    fn clear(&mut self) {
        self.w1.fill(0.0);
        self.b1.fill(0.0);
        self.w2.fill(0.0);
        self.b2 = [0.0; CLASSES];
    }

    /// All components in parameter order (w1, b1, w2, b2).
    pub fn flat(&self) -> Vec<f64> {
        self.w1
            .iter()
            .chain(&self.b1)
            .chain(&self.w2)
            .chain(&self.b2)
            .copied()
            .collect()
    }
}

type Standardized = [f64; FEATURE_COUNT];

/// Scratch buffers for one example's forward and backward pass.
struct Work {
    z1: Vec<f64>,
    h: Vec<f64>,
    dh: Vec<f64>,
}

impl Work {
    fn new(hidden: usize) -> Self {
        Self {
            z1: vec![0.0; hidden],
            h: vec![0.0; hidden],
            dh: vec![0.0; hidden],
        }
    }
}

fn log_softmax_parts(logits: &[f64; CLASSES]) -> (f64, [f64; CLASSES]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps = logits.map(|l| (l - max).exp());
    let sum: f64 = exps.iter().sum();
    (max + sum.ln(), exps.map(|e| e / sum))
}

impl MlpModel {
    /// All weights and biases zero, identity standardization.
    pub fn zeros(hyperparams: MlpHyperparams) -> Self {
        let h = hyperparams.hidden_size;
        Self {
            hidden_size: h,
            w1: vec![0.0; h * FEATURE_COUNT],
            b1: vec![0.0; h],
            w2: vec![0.0; CLASSES * h],
            b2: [0.0; CLASSES],
            feature_means: [0.0; FEATURE_COUNT],
            feature_stds: [1.0; FEATURE_COUNT],
            hyperparams,
            feature_layout_version: FEATURE_LAYOUT_VERSION,
            training_history: Vec::new(),
            best_epoch: None,
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn initialized(hyperparams: MlpHyperparams, rng: &mut impl Rng) -> Self {
        let mut model = Self::zeros(hyperparams);
        let h = model.hidden_size;
        let bound1 = (6.0 / (FEATURE_COUNT + h) as f64).sqrt();
        let bound2 = (6.0 / (h + CLASSES) as f64).sqrt();
        for w in &mut model.w1 {
            *w = rng.random_range(-bound1..bound1);
        }
        for w in &mut model.w2 {
            *w = rng.random_range(-bound2..bound2);
        }
        model
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + CLASSES
    }

    /// Mutable access to every parameter in (w1, b1, w2, b2) order.
    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.w1
            .iter_mut()
            .chain(self.b1.iter_mut())
            .chain(self.w2.iter_mut())
            .chain(self.b2.iter_mut())
    }

    fn check_layout(&self) -> Result<(), MlpError> {
        if self.feature_layout_version != FEATURE_LAYOUT_VERSION {
            return Err(MlpError::LayoutMismatch {
                expected: FEATURE_LAYOUT_VERSION,
                found: self.feature_layout_version,
            });
        }
        Ok(())
    }

    fn standardize(&self, x: &FeatureVector) -> Standardized {
        let mut out = [0.0; FEATURE_COUNT];
        for (i, o) in out.iter_mut().enumerate() {
            *o = (x.0[i] - self.feature_means[i]) / self.feature_stds[i];
        }
        out
    }

    fn logits(&self, x: &Standardized, work: &mut Work) -> [f64; CLASSES] {
        let h = self.hidden_size;
        for j in 0..h {
            let row = &self.w1[j * FEATURE_COUNT..(j + 1) * FEATURE_COUNT];
            let z = self.b1[j] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
            work.z1[j] = z;
            work.h[j] = z.max(0.0);
        }
        let mut out = self.b2;
        for (k, o) in out.iter_mut().enumerate() {
            let row = &self.w2[k * h..(k + 1) * h];
            *o += row.iter().zip(&work.h).map(|(w, v)| w * v).sum::<f64>();
        }
        out
    }

    /// Class distribution for one feature vector.
    pub fn forward(&self, features: &FeatureVector) -> Result<SentimentDistribution, MlpError> {
        self.check_layout()?;
        let mut work = Work::new(self.hidden_size);
        let logits = self.logits(&self.standardize(features), &mut work);
        let (_, probs) = log_softmax_parts(&logits);
        SentimentDistribution::from_weights(probs)
            .map_err(|_| MlpError::Corrupt("non-finite model output".into()))
    }

    pub fn predict(&self, features: &FeatureVector) -> Result<Sentiment, MlpError> {
        Ok(self.forward(features)?.label())
    }

    fn predict_standardized(&self, x: &Standardized, work: &mut Work) -> usize {
        argmax3(&self.logits(x, work))
    }

    /// Adds one example's gradient into `grads`; returns its loss.
    fn accumulate(&self, x: &Standardized, y: usize, work: &mut Work, grads: &mut Gradients) -> f64 {
        let h = self.hidden_size;
        let logits = self.logits(x, work);
        let (log_norm, probs) = log_softmax_parts(&logits);
        let loss = log_norm - logits[y];
        let mut dlogits = probs;
        dlogits[y] -= 1.0;

        work.dh.fill(0.0);
        for (k, &d) in dlogits.iter().enumerate() {
            grads.b2[k] += d;
            let w2_row = &self.w2[k * h..(k + 1) * h];
            let g_row = &mut grads.w2[k * h..(k + 1) * h];
            for j in 0..h {
                g_row[j] += d * work.h[j];
                work.dh[j] += w2_row[j] * d;
            }
        }
        for j in 0..h {
            if work.z1[j] <= 0.0 {
                continue;
            }
            let dz = work.dh[j];
            grads.b1[j] += dz;
            let g_row = &mut grads.w1[j * FEATURE_COUNT..(j + 1) * FEATURE_COUNT];
            for (g, v) in g_row.iter_mut().zip(x) {
                *g += dz * v;
            }
        }
        loss
    }

    fn batch_loss_and_grad(
        &self,
        xs: &[Standardized],
        ys: &[usize],
        idx: &[usize],
        work: &mut Work,
        grads: &mut Gradients,
    ) -> f64 {
        grads.clear();
        let mut loss = 0.0;
        for &i in idx {
            loss += self.accumulate(&xs[i], ys[i], work, grads);
        }
        let scale = 1.0 / idx.len() as f64;
        for g in grads
            .w1
            .iter_mut()
            .chain(grads.b1.iter_mut())
            .chain(grads.w2.iter_mut())
            .chain(grads.b2.iter_mut())
        {
            *g *= scale;
        }
        loss * scale
    }

    /// Validation accuracy among the recorded epochs.
    pub fn best_val_accuracy(&self) -> Option<f64> {
        let best = self.best_epoch?;
        self.training_history
            .iter()
            .find(|r| r.epoch == best)
            .map(|r| r.val_accuracy)
    }

    pub fn epochs_run(&self) -> usize {
        self.training_history.len()
    }

    fn check_shapes(&self) -> Result<(), MlpError> {
        let h = self.hidden_size;
        let shapes_ok = h > 0
            && self.w1.len() == h * FEATURE_COUNT
            && self.b1.len() == h
            && self.w2.len() == CLASSES * h
            && self.hyperparams.hidden_size == h;
        if !shapes_ok {
            return Err(MlpError::Corrupt("weight shapes do not match hidden_size".into()));
        }
        let finite = self
            .w1
            .iter()
            .chain(&self.b1)
            .chain(&self.w2)
            .chain(&self.b2)
            .chain(&self.feature_means)
            .all(|v| v.is_finite());
        if !finite {
            return Err(MlpError::Corrupt("non-finite weight".into()));
        }
        if self.feature_stds.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(MlpError::Corrupt("feature_stds must be positive".into()));
        }
        Ok(())
    }
}

/// Mean cross-entropy over `batch` and its exact gradient.
pub fn loss_and_grad(
    model: &MlpModel,
    batch: &[(FeatureVector, Sentiment)],
) -> Result<(f64, Gradients), MlpError> {
    if batch.is_empty() {
        return Err(MlpError::EmptySet("batch"));
    }
    model.check_layout()?;
    let xs: Vec<Standardized> = batch.iter().map(|(x, _)| model.standardize(x)).collect();
    let ys: Vec<usize> = batch.iter().map(|(_, y)| y.index()).collect();
    let idx: Vec<usize> = (0..batch.len()).collect();
    let mut grads = Gradients::zeros(model.hidden_size);
    let mut work = Work::new(model.hidden_size);
    let loss = model.batch_loss_and_grad(&xs, &ys, &idx, &mut work, &mut grads);
    Ok((loss, grads))
}

/// Mean-cross-entropy only; used by gradient checks.
pub fn loss(model: &MlpModel, batch: &[(FeatureVector, Sentiment)]) -> Result<f64, MlpError> {
    loss_and_grad(model, batch).map(|(l, _)| l)
}

/// Population mean and std per feature; stds below 1e-8 (constant
/// features) are replaced by 1.
fn feature_stats(set: &[(FeatureVector, Sentiment)]) -> ([f64; FEATURE_COUNT], [f64; FEATURE_COUNT]) {
    let n = set.len() as f64;
    let mut means = [0.0; FEATURE_COUNT];
    for (x, _) in set {
        for (m, v) in means.iter_mut().zip(&x.0) {
            *m += v;
        }
    }
    for m in &mut means {
        *m /= n;
    }
    let mut stds = [0.0; FEATURE_COUNT];
    for (x, _) in set {
        for i in 0..FEATURE_COUNT {
            let d = x.0[i] - means[i];
            stds[i] += d * d;
        }
    }
    for s in &mut stds {
        *s = (*s / n).sqrt();
        if s.is_nan() || *s < MIN_FEATURE_STD {
            *s = 1.0;
        }
    }
    (means, stds)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    fn new(params: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; params],
            v: vec![0.0; params],
            t: 0,
            lr,
        }
    }

    fn step(&mut self, model: &mut MlpModel, grads: &Gradients) {
        self.t += 1;
        let step = self.lr * (1.0 - ADAM_BETA2.powi(self.t)).sqrt() / (1.0 - ADAM_BETA1.powi(self.t));
        let g_iter = grads.w1.iter().chain(&grads.b1).chain(&grads.w2).chain(&grads.b2);
        for (((p, g), m), v) in model
            .params_mut()
            .zip(g_iter)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            *p -= step * *m / (v.sqrt() + ADAM_EPSILON);
        }
    }
}

fn check_sets(
    train_set: &[(FeatureVector, Sentiment)],
    val_set: &[(FeatureVector, Sentiment)],
) -> Result<(), MlpError> {
    if train_set.is_empty() {
        return Err(MlpError::EmptySet("training"));
    }
    if val_set.is_empty() {
        return Err(MlpError::EmptySet("validation"));
    }
    let first = train_set[0].1;
    if train_set.iter().all(|(_, y)| *y == first) {
        return Err(MlpError::SingleClass(first));
    }
    Ok(())
}

/// Trains one model with early stopping on validation accuracy.
pub fn train(
    train_set: &[(FeatureVector, Sentiment)],
    val_set: &[(FeatureVector, Sentiment)],
    hp: &MlpHyperparams,
) -> Result<MlpModel, MlpError> {
    hp.validate()?;
    check_sets(train_set, val_set)?;

    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut model = MlpModel::initialized(*hp, &mut rng);
    let (means, stds) = feature_stats(train_set);
    model.feature_means = means;
    model.feature_stds = stds;

    let xs: Vec<Standardized> = train_set.iter().map(|(x, _)| model.standardize(x)).collect();
    let ys: Vec<usize> = train_set.iter().map(|(_, y)| y.index()).collect();
    let val_xs: Vec<Standardized> = val_set.iter().map(|(x, _)| model.standardize(x)).collect();
    let val_ys: Vec<usize> = val_set.iter().map(|(_, y)| y.index()).collect();

    let batch_size = hp.batch_size.min(train_set.len());
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut adam = Adam::new(model.param_count(), hp.learning_rate);
    let mut grads = Gradients::zeros(model.hidden_size);
    let mut work = Work::new(model.hidden_size);

    let mut history = Vec::new();
    let mut best: Option<(f64, usize, MlpModel)> = None;
    let mut stale_epochs = 0;

    for epoch in 1..=hp.max_epochs {
        order.shuffle(&mut rng);
        let mut total_loss = 0.0;
        for chunk in order.chunks(batch_size) {
            let loss = model.batch_loss_and_grad(&xs, &ys, chunk, &mut work, &mut grads);
            total_loss += loss * chunk.len() as f64;
            adam.step(&mut model, &grads);
        }
        let train_loss = total_loss / train_set.len() as f64;
        if !train_loss.is_finite() {
            return Err(MlpError::Diverged(epoch));
        }
        let correct = val_xs
            .iter()
            .zip(&val_ys)
            .filter(|(x, y)| model.predict_standardized(x, &mut work) == **y)
            .count();
        let val_accuracy = correct as f64 / val_set.len() as f64;
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_accuracy,
        });

        let best_acc = best.as_ref().map_or(f64::NEG_INFINITY, |b| b.0);
        if val_accuracy > best_acc + hp.early_stop_tolerance {
            stale_epochs = 0;
        } else {
            stale_epochs += 1;
        }
        if val_accuracy > best_acc {
            best = Some((val_accuracy, epoch, model.clone()));
        }
        if stale_epochs >= hp.patience_epochs {
            break;
        }
    }

    let (_, best_epoch, mut best_model) = best.expect("at least one epoch runs");
    best_model.training_history = history;
    best_model.best_epoch = Some(best_epoch);
    Ok(best_model)
}

/// Share of `set` the model labels correctly.
pub fn accuracy(model: &MlpModel, set: &[(FeatureVector, Sentiment)]) -> Result<f64, MlpError> {
    if set.is_empty() {
        return Err(MlpError::EmptySet("evaluation"));
    }
    let mut correct = 0;
    for (x, y) in set {
        if model.predict(x)? == *y {
            correct += 1;
        }
    }
    Ok(correct as f64 / set.len() as f64)
}

/// Axes of the exhaustive hyperparameter search.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperparamGrid {
    pub hidden_sizes: Vec<usize>,
    pub tolerances: Vec<f64>,
    pub patiences: Vec<usize>,
}

impl HyperparamGrid {
    /// 5 × 5 × 5 grid: hidden sizes 16..256, tolerances 1e-2..1e-6,
    /// patience 10..50.
    pub fn standard() -> Self {
        Self {
            hidden_sizes: vec![16, 32, 64, 128, 256],
            tolerances: vec![1e-2, 1e-3, 1e-4, 1e-5, 1e-6],
            patiences: vec![10, 20, 30, 40, 50],
        }
    }

    pub fn len(&self) -> usize {
        self.hidden_sizes.len() * self.tolerances.len() * self.patiences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<(), MlpError> {
        if self.hidden_sizes.is_empty() || self.tolerances.is_empty() || self.patiences.is_empty() {
            return Err(MlpError::BadGrid("every axis needs at least one value".into()));
        }
        if self.hidden_sizes.contains(&0) || self.patiences.contains(&0) {
            return Err(MlpError::BadGrid("hidden sizes and patiences must be positive".into()));
        }
        if self.tolerances.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return Err(MlpError::BadGrid("tolerances must be positive".into()));
        }
        Ok(())
    }

    /// Cells in search order: hidden size outermost, patience innermost.
    pub fn cells(&self) -> Vec<(usize, f64, usize)> {
        let mut out = Vec::with_capacity(self.len());
        for &h in &self.hidden_sizes {
            for &t in &self.tolerances {
                for &p in &self.patiences {
                    out.push((h, t, p));
                }
            }
        }
        out
    }

    /// Parses `h=16,32;tol=1e-2..1e-4;patience=10..50`.
    ///
    /// Each axis takes a comma list or a range. Integer ranges `a..b` step by
    /// `a` (or by `s` with `a..b:s`); tolerance ranges step by decades.
    /// Missing axes keep the default 5 × 5 × 5 values.
    pub fn parse(spec: &str) -> Result<Self, MlpError> {
        let mut grid = Self::standard();
        let bad = |m: String| MlpError::BadGrid(m);
        for part in spec.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| bad(format!("expected key=value, got {part:?}")))?;
            let value = value.trim();
            match key.trim() {
                "h" | "hidden" | "hidden_size" => grid.hidden_sizes = parse_int_axis(value)?,
                "tol" | "tolerance" => grid.tolerances = parse_tol_axis(value)?,
                "patience" | "p" => grid.patiences = parse_int_axis(value)?,
                other => return Err(bad(format!("unknown grid axis {other:?}"))),
            }
        }
        grid.validate()?;
        Ok(grid)
    }
}

fn parse_int_axis(value: &str) -> Result<Vec<usize>, MlpError> {
    let bad = || MlpError::BadGrid(format!("cannot parse integer axis {value:?}"));
    if let Some((lo, rest)) = value.split_once("..") {
        let (hi, step) = match rest.split_once(':') {
            Some((hi, step)) => (hi, Some(step)),
            None => (rest, None),
        };
        let lo: usize = lo.trim().parse().map_err(|_| bad())?;
        let hi: usize = hi.trim().parse().map_err(|_| bad())?;
        let step: usize = match step {
            Some(s) => s.trim().parse().map_err(|_| bad())?,
            None => lo,
        };
        if lo == 0 || step == 0 || hi < lo {
            return Err(bad());
        }
        return Ok((lo..=hi).step_by(step).collect());
    }
    value
        .split(',')
        .map(|v| v.trim().parse().map_err(|_| bad()))
        .collect()
}

fn parse_tol_axis(value: &str) -> Result<Vec<f64>, MlpError> {
    let bad = || MlpError::BadGrid(format!("cannot parse tolerance axis {value:?}"));
    if let Some((a, b)) = value.split_once("..") {
        let a: f64 = a.trim().parse().map_err(|_| bad())?;
        let b: f64 = b.trim().parse().map_err(|_| bad())?;
        if !(a > 0.0 && b > 0.0) {
            return Err(bad());
        }
        let (ea, eb) = (a.log10().round() as i32, b.log10().round() as i32);
        let exps: Vec<i32> = if ea >= eb {
            (eb..=ea).rev().collect()
        } else {
            (ea..=eb).collect()
        };
        return Ok(exps.into_iter().map(|e| 10f64.powi(e)).collect());
    }
    value
        .split(',')
        .map(|v| v.trim().parse().map_err(|_| bad()))
        .collect()
}

/// One trained grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub hyperparams: MlpHyperparams,
    /// Best validation accuracy, or -1 if the cell failed.
    pub val_accuracy: f64,
    pub epochs_run: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct GridSearchResult {
    pub best: MlpHyperparams,
    pub model: MlpModel,
    /// One entry per cell, in [`HyperparamGrid::cells`] order.
    pub table: Vec<GridCell>,
}

/// `a` is preferred over `b`: higher accuracy, then smaller hidden size,
/// larger tolerance, smaller patience.
fn preferred(a: &GridCell, b: &GridCell) -> bool {
    let (ha, hb) = (&a.hyperparams, &b.hyperparams);
    if a.val_accuracy != b.val_accuracy {
        return a.val_accuracy > b.val_accuracy;
    }
    if ha.hidden_size != hb.hidden_size {
        return ha.hidden_size < hb.hidden_size;
    }
    if ha.early_stop_tolerance != hb.early_stop_tolerance {
        return ha.early_stop_tolerance > hb.early_stop_tolerance;
    }
    ha.patience_epochs < hb.patience_epochs
}

/// Trains every grid cell and keeps the best by validation accuracy.
///
/// Cell `i` trains with `base.seed + i`; the other fields of `base`
/// (learning rate, batch size, epoch cap) are shared by every cell. Cells run
/// on `jobs` threads (`None` uses the global rayon pool); the result does not
/// depend on the thread count.
pub fn grid_search(
    train_set: &[(FeatureVector, Sentiment)],
    val_set: &[(FeatureVector, Sentiment)],
    grid: &HyperparamGrid,
    base: &MlpHyperparams,
    jobs: Option<usize>,
) -> Result<GridSearchResult, MlpError> {
    grid.validate()?;
    let cells = grid.cells();
    let run = || -> Vec<(GridCell, Option<MlpModel>)> {
        cells
            .par_iter()
            .enumerate()
            .map(|(i, &(hidden_size, tol, patience))| {
                let hp = MlpHyperparams {
                    hidden_size,
                    early_stop_tolerance: tol,
                    patience_epochs: patience,
                    seed: base.seed.wrapping_add(i as u64),
                    ..*base
                };
                match train(train_set, val_set, &hp) {
                    Ok(model) => (
                        GridCell {
                            hyperparams: hp,
                            val_accuracy: model.best_val_accuracy().unwrap_or(-1.0),
                            epochs_run: model.epochs_run(),
                            error: None,
                        },
                        Some(model),
                    ),
                    Err(e) => (
                        GridCell {
                            hyperparams: hp,
                            val_accuracy: -1.0,
                            epochs_run: 0,
                            error: Some(e.to_string()),
                        },
                        None,
                    ),
                }
            })
            .collect()
    };
    let results = match jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| MlpError::InvalidHyperparams(format!("thread pool: {e}")))?
            .install(run),
        None => run(),
    };

    let mut best_idx: Option<usize> = None;
    for (i, (cell, model)) in results.iter().enumerate() {
        if model.is_none() {
            continue;
        }
        if best_idx.is_none_or(|b| preferred(cell, &results[b].0)) {
            best_idx = Some(i);
        }
    }
    let Some(best_idx) = best_idx else {
        let first = results
            .iter()
            .find_map(|(c, _)| c.error.clone())
            .unwrap_or_default();
        return Err(MlpError::AllCellsFailed(first));
    };
    let mut table = Vec::with_capacity(results.len());
    let mut best_model = None;
    for (i, (cell, model)) in results.into_iter().enumerate() {
        if i == best_idx {
            best_model = model;
        }
        table.push(cell);
    }
    let model = best_model.expect("best cell has a model");
    Ok(GridSearchResult {
        best: model.hyperparams,
        model,
        table,
    })
}

/// Writes `hidden_size,tolerance,patience,val_accuracy,epochs_run`.
pub fn write_grid_report(path: &Path, table: &[GridCell]) -> Result<(), MlpError> {
    let io_err = |source| MlpError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    writeln!(w, "hidden_size,tolerance,patience,val_accuracy,epochs_run").map_err(io_err)?;
    for c in table {
        writeln!(
            w,
            "{},{:e},{},{},{}",
            c.hyperparams.hidden_size,
            c.hyperparams.early_stop_tolerance,
            c.hyperparams.patience_epochs,
            c.val_accuracy,
            c.epochs_run
        )
        .map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

#[derive(Serialize)]
struct ModelFileRef<'a> {
    format: &'a str,
    format_version: u32,
    model: &'a MlpModel,
}

#[derive(Deserialize)]
struct ModelFile {
    format: String,
    format_version: u32,
    model: serde_json::Value,
}

/// Writes the model as versioned JSON with 17-significant-digit floats.
pub fn save_model(model: &MlpModel, path: &Path) -> Result<(), MlpError> {
    let io_err = |source| MlpError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    let doc = ModelFileRef {
        format: MODEL_FORMAT,
        format_version: MODEL_FORMAT_VERSION,
        model,
    };
    crate::jsonfmt::to_writer(&mut w, &doc).map_err(|e| io_err(e.into()))?;
    w.write_all(b"\n").map_err(io_err)?;
    w.flush().map_err(io_err)
}

pub fn load_model(path: &Path) -> Result<MlpModel, MlpError> {
    let file = File::open(path).map_err(|source| MlpError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let doc: ModelFile =
        serde_json::from_reader(BufReader::new(file)).map_err(|e| MlpError::Corrupt(e.to_string()))?;
    if doc.format != MODEL_FORMAT || doc.format_version != MODEL_FORMAT_VERSION {
        return Err(MlpError::UnsupportedFormat {
            format: doc.format,
            version: doc.format_version,
        });
    }
    let found = doc
        .model
        .get("feature_layout_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| MlpError::Corrupt("missing feature_layout_version".into()))?;
    if found != FEATURE_LAYOUT_VERSION as u64 {
        return Err(MlpError::LayoutMismatch {
            expected: FEATURE_LAYOUT_VERSION,
            found: found as u32,
        });
    }
    let model: MlpModel =
        serde_json::from_value(doc.model).map_err(|e| MlpError::Corrupt(e.to_string()))?;
    model.check_shapes()?;
    Ok(model)
}
