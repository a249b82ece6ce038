//! Optimization: Adam with two learning-rate groups, length-bucketed
//! batches, per-epoch validation with best-macro-F1 checkpointing, and
//! checkpoint persistence.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::analysis::{confusion, macro_f1};
use crate::data::{io_err, DataError, Example, ManifestHeader};
use crate::fusion::cross_entropy;
use crate::model::{Model, ModelSpec};
use crate::params::{load_params, save_params, ParamEntry, ParamGroup, ParamStore};
use crate::tensor::{argmax, seeded_rng, Tensor, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("non-finite gradient {value} in {param}[{index}] at optimizer step {step}")]
    NonFiniteGradient {
        param: String,
        index: usize,
        value: f64,
        step: u64,
    },
    #[error("training diverged in epoch {epoch}: {reason}")]
    Diverged {
        epoch: usize,
        reason: String,
        /// Best checkpoint reached before the failure.
        last_good: Box<Checkpoint>,
    },
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },
}

macro_rules! defaults {
    ($($name:ident: $ty:ty = $value:expr;)*) => {
        $(fn $name() -> $ty { $value })*
    };
}

defaults! {
    d_epochs: usize = 10;
    d_batch: usize = 16;
    d_max_seq: usize = 510;
    d_lr: f64 = 3e-4;
    d_mult: f64 = 0.01;
    d_beta1: f64 = 0.9;
    d_beta2: f64 = 0.999;
    d_eps: f64 = 1e-8;
}

/// Optimization settings plus the architecture under `model`. Every field
/// has a default, so `{}` is a valid config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_max_seq")]
    pub max_seq_len: usize,
    #[serde(default = "d_lr")]
    pub base_lr: f64,
    /// Learning-rate factor for the adapter group (image adapter and layer mix).
    #[serde(default = "d_mult")]
    pub base_lr_multiplier: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default = "d_beta1")]
    pub beta1: f64,
    #[serde(default = "d_beta2")]
    pub beta2: f64,
    #[serde(default = "d_eps")]
    pub eps: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub model: ModelSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad(format!("base_lr must be positive, got {}", self.base_lr));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.max_seq_len == 0 {
            return bad("max_seq_len must be >= 1".into());
        }
        if !(self.base_lr_multiplier >= 0.0 && self.base_lr_multiplier.is_finite()) {
            return bad(format!("base_lr_multiplier must be >= 0, got {}", self.base_lr_multiplier));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("adam betas must lie in [0, 1)".into());
        }
        if !(self.eps > 0.0) {
            return bad("eps must be positive".into());
        }
        self.model.validate().map_err(TrainError::Config)
    }

    pub fn adam(&self) -> AdamHyper {
        AdamHyper {
            lr: self.base_lr,
            adapter_multiplier: self.base_lr_multiplier,
            weight_decay: self.weight_decay,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub adapter_multiplier: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamHyper {
    pub fn with_lr(lr: f64) -> Self {
        AdamHyper {
            lr,
            adapter_multiplier: 0.01,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments per parameter, in store order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|p| vec![0.0; p.value.len()]).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// One bias-corrected Adam step. Weight decay is decoupled and applied
/// first: `θ ← θ − lr·wd·θ`. Adapter-group parameters use
/// `lr · adapter_multiplier`. Nothing is modified if any gradient is
/// non-finite.
pub fn adam_step(store: &mut ParamStore, grads: &[Vec<f64>], state: &mut AdamState, h: &AdamHyper) -> Result<(), TrainError> {
    for (p, g) in store.iter().zip(grads) {
        if let Some((index, value)) = g.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(TrainError::NonFiniteGradient {
                param: p.name.clone(),
                index,
                value: *value,
                step: state.t + 1,
            });
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - h.beta1.powi(t);
    let c2 = 1.0 - h.beta2.powi(t);
    for (((p, g), m), v) in store.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        let lr = match p.group {
            ParamGroup::Base => h.lr,
            ParamGroup::Adapter => h.lr * h.adapter_multiplier,
        };
        for (((theta, &gi), mi), vi) in p.value.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *theta -= lr * h.weight_decay * *theta;
            *mi = h.beta1 * *mi + (1.0 - h.beta1) * gi;
            *vi = h.beta2 * *vi + (1.0 - h.beta2) * gi * gi;
            *theta -= lr * (*mi / c1) / ((*vi / c2).sqrt() + h.eps);
        }
    }
    Ok(())
}

/// Sorts by `(length, key)`, cuts consecutive batches of `batch_size`,
/// then shuffles the batch order with `seed`. Returns item indices.
pub fn bucket_batches<K: Ord>(keys: &[(usize, K)], batch_size: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by(|&a, &b| keys[a].0.cmp(&keys[b].0).then_with(|| keys[a].1.cmp(&keys[b].1)));
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect();
    batches.shuffle(&mut seeded_rng(seed));
    batches
}

/// Keeps the first `max_seq_len` tokens of an `L × n × d_t` stack.
pub fn truncate_seq(stack: &Tensor, max_seq_len: usize) -> Result<Tensor, TensorError> {
    let shape = stack.shape();
    if shape.len() != 3 {
        return Err(TensorError::Rank {
            op: "truncate_seq",
            expected: 3,
            shape: shape.to_vec(),
        });
    }
    let (l, n, d) = (shape[0], shape[1], shape[2]);
    if n <= max_seq_len {
        return Ok(stack.clone());
    }
    let mut data = Vec::with_capacity(l * max_seq_len * d);
    for layer in 0..l {
        let start = layer * n * d;
        data.extend_from_slice(&stack.data()[start..start + max_seq_len * d]);
    }
    Tensor::new(vec![l, max_seq_len, d], data)
}

fn truncated(items: &[Example], max_seq_len: usize) -> Result<Vec<Example>, TensorError> {
    items
        .iter()
        .map(|ex| {
            let text = truncate_seq(&ex.text, max_seq_len)?;
            let mut record = ex.record.clone();
            record.text_len = text.shape()[1];
            Ok(Example {
                record,
                text,
                image: ex.image.clone(),
            })
        })
        .collect()
}

/// Forward-only results over a set of items, in input order.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub macro_f1: f64,
    pub probs: Vec<Vec<f64>>,
    /// Per-item cross-entropy.
    pub losses: Vec<f64>,
    pub predictions: Vec<usize>,
    pub labels: Vec<usize>,
}

impl Evaluation {
    pub fn mean_loss(&self) -> f64 {
        self.losses.iter().sum::<f64>() / self.losses.len().max(1) as f64
    }

    pub fn confusion(&self, k: usize) -> crate::analysis::ConfusionMatrix {
        confusion(&self.labels, &self.predictions, k).expect("labels validated by evaluate")
    }
}

/// Predictions use argmax with ties to the lowest class index.
pub fn evaluate(model: &Model, items: &[Example], max_seq_len: usize) -> Result<Evaluation, TrainError> {
    let k = model.num_classes();
    let mut out = Evaluation {
        macro_f1: 0.0,
        probs: Vec::with_capacity(items.len()),
        losses: Vec::with_capacity(items.len()),
        predictions: Vec::with_capacity(items.len()),
        labels: Vec::with_capacity(items.len()),
    };
    for ex in items {
        if ex.label() >= k {
            return Err(TrainError::Config(format!("item {} has label {} but k = {k}", ex.record.id, ex.label())));
        }
        let text = truncate_seq(&ex.text, max_seq_len)?;
        let view = Example {
            record: ex.record.clone(),
            text,
            image: ex.image.clone(),
        };
        let p = model.predict(&view)?;
        out.losses.push(cross_entropy(&p, ex.label())?);
        out.predictions.push(argmax(&p));
        out.labels.push(ex.label());
        out.probs.push(p);
    }
    out.macro_f1 = macro_f1(&out.labels, &out.predictions, k).expect("labels checked above");
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_macro_f1: f64,
    /// Wall-clock time; the only non-deterministic field.
    pub seconds: f64,
}

/// A trained (or initial) model with the metadata needed to rebuild it.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub header: ManifestHeader,
    pub epoch: usize,
    pub val_macro_f1: f64,
    pub model: Model,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Highest validation macro-F1; ties go to the earlier epoch.
    pub best: Checkpoint,
    pub log: Vec<EpochLog>,
}

fn check_items(items: &[Example], header: &ManifestHeader, what: &str) -> Result<(), TrainError> {
    if items.is_empty() {
        return Err(TrainError::Config(format!("{what} set is empty")));
    }
    if let Some(ex) = items.iter().find(|ex| ex.label() >= header.k) {
        return Err(TrainError::Config(format!(
            "{what} item {} has label {} outside 0..{}",
            ex.record.id,
            ex.label(),
            header.k
        )));
    }
    Ok(())
}

/// Trains from a fresh initialization. Epoch 0 of the log is the untrained
/// model (mean train loss at initialization, validation F1).
pub fn train(config: &TrainConfig, header: ManifestHeader, train_set: &[Example], val_set: &[Example]) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    check_items(train_set, &header, "train")?;
    check_items(val_set, &header, "validation")?;
    if config.weight_decay > 0.5 {
        log::warn!(
            "weight_decay = {} with decoupled decay shrinks every parameter by lr·wd per step",
            config.weight_decay
        );
    }
    let mut model = Model::new(config.model.clone(), header, config.seed).map_err(TrainError::Config)?;
    let train_items = truncated(train_set, config.max_seq_len)?;
    let keys: Vec<(usize, &str)> = train_items.iter().map(|e| (e.record.text_len, e.record.id.as_str())).collect();
    let hyper = config.adam();
    let mut adam = AdamState::new(&model.store);

    let started = Instant::now();
    let init_train = evaluate(&model, &train_items, config.max_seq_len)?;
    let init_val = evaluate(&model, val_set, config.max_seq_len)?;
    let mut log = vec![EpochLog {
        epoch: 0,
        train_loss: init_train.mean_loss(),
        val_macro_f1: init_val.macro_f1,
        seconds: started.elapsed().as_secs_f64(),
    }];
    let mut best = Checkpoint {
        config: config.clone(),
        header,
        epoch: 0,
        val_macro_f1: init_val.macro_f1,
        model: model.clone(),
    };

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        let mut loss_sum = 0.0;
        let diverged = |reason: String, best: &Checkpoint| TrainError::Diverged {
            epoch,
            reason,
            last_good: Box::new(best.clone()),
        };
        for batch in bucket_batches(&keys, config.batch_size, config.seed.wrapping_add(epoch as u64)) {
            let mut acc: Vec<Vec<f64>> = model.store.iter().map(|p| vec![0.0; p.value.len()]).collect();
            for &i in &batch {
                let (loss, grads) = model.loss_and_grads(&train_items[i])?;
                if !loss.is_finite() {
                    return Err(diverged(format!("loss {loss} on item {}", train_items[i].record.id), &best));
                }
                loss_sum += loss;
                for (a, g) in acc.iter_mut().zip(&grads) {
                    a.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
            }
            let scale = 1.0 / batch.len() as f64;
            acc.iter_mut().flatten().for_each(|x| *x *= scale);
            match adam_step(&mut model.store, &acc, &mut adam, &hyper) {
                Ok(()) => {}
                Err(e @ TrainError::NonFiniteGradient { .. }) => return Err(diverged(e.to_string(), &best)),
                Err(e) => return Err(e),
            }
        }
        let val = evaluate(&model, val_set, config.max_seq_len)?;
        let entry = EpochLog {
            epoch,
            train_loss: loss_sum / train_items.len() as f64,
            val_macro_f1: val.macro_f1,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: train_loss {:.6} val_macro_f1 {:.4} ({:.1}s)",
            entry.train_loss,
            entry.val_macro_f1,
            entry.seconds
        );
        if val.macro_f1 > best.val_macro_f1 {
            best = Checkpoint {
                config: config.clone(),
                header,
                epoch,
                val_macro_f1: val.macro_f1,
                model: model.clone(),
            };
        }
        log.push(entry);
    }
    Ok(TrainOutcome { best, log })
}

/// Writes the training log as JSON lines.
pub fn write_log(path: &Path, log: &[EpochLog]) -> Result<(), DataError> {
    let mut out = Vec::new();
    for entry in log {
        serde_json::to_writer(&mut out, entry).expect("log entry serializes");
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(&out).map_err(io_err(path))
}

pub fn read_log(path: &Path) -> Result<Vec<EpochLog>, DataError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|source| DataError::Json {
                path: path.to_path_buf(),
                line: i + 1,
                source,
            })
        })
        .collect()
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointIndex {
    format_version: u32,
    config: TrainConfig,
    header: ManifestHeader,
    epoch: usize,
    val_macro_f1: f64,
    params: Vec<ParamEntry>,
}

impl Checkpoint {
    /// `dir/checkpoint.json` plus one 64-bit blob per parameter under
    /// `dir/params/`.
    pub fn save(&self, dir: &Path) -> Result<(), TrainError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let params = save_params(&self.model.store, dir)?;
        let index = CheckpointIndex {
            format_version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            header: self.header,
            epoch: self.epoch,
            val_macro_f1: self.val_macro_f1,
            params,
        };
        let path = dir.join("checkpoint.json");
        let json = serde_json::to_string_pretty(&index).expect("index serializes");
        fs::write(&path, json).map_err(io_err(&path))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, TrainError> {
        let path = dir.join("checkpoint.json");
        let fail = |reason: String| TrainError::Checkpoint {
            path: path.clone(),
            reason,
        };
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let index: CheckpointIndex = serde_json::from_str(&text).map_err(|e| fail(e.to_string()))?;
        if index.format_version != CHECKPOINT_VERSION {
            return Err(fail(format!("unsupported format_version {}", index.format_version)));
        }
        let mut model = Model::new(index.config.model.clone(), index.header, index.config.seed).map_err(fail)?;
        load_params(&mut model.store, dir, &index.params).map_err(|e| fail(e.to_string()))?;
        Ok(Checkpoint {
            config: index.config,
            header: index.header,
            epoch: index.epoch,
            val_macro_f1: index.val_macro_f1,
            model,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SyntheticConfig};

    #[test]
    fn config_defaults_and_validation() {
        let c = TrainConfig::default();
        assert_eq!((c.epochs, c.batch_size, c.max_seq_len), (10, 16, 510));
        assert_eq!((c.base_lr, c.base_lr_multiplier, c.weight_decay), (3e-4, 0.01, 0.0));
        assert_eq!((c.beta1, c.beta2, c.eps), (0.9, 0.999, 1e-8));
        assert!(c.validate().is_ok());
        for bad in [
            TrainConfig { base_lr: 0.0, ..c.clone() },
            TrainConfig { batch_size: 0, ..c.clone() },
            TrainConfig { beta2: 1.0, ..c.clone() },
        ] {
            assert!(matches!(bad.validate(), Err(TrainError::Config(_))));
        }
        assert!(serde_json::from_str::<TrainConfig>(r#"{"epoch": 3}"#).is_err());
    }

    fn one_param(value: f64, group: ParamGroup) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("x", group, Tensor::vector(vec![value]));
        s
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = one_param(0.7, ParamGroup::Base);
        let mut st = AdamState::new(&s);
        adam_step(&mut s, &[vec![0.0]], &mut st, &AdamHyper::with_lr(3e-4)).unwrap();
        assert_eq!(s.iter().next().unwrap().value.data(), &[0.7]);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn single_step_closed_form() {
        let mut s = one_param(0.0, ParamGroup::Base);
        let mut st = AdamState::new(&s);
        adam_step(&mut s, &[vec![1.0]], &mut st, &AdamHyper::with_lr(3e-4)).unwrap();
        let theta = s.iter().next().unwrap().value.data()[0];
        assert!((theta - -0.0003 / (1.0 + 1e-8)).abs() < 1e-18);
    }

    #[test]
    fn adapter_group_steps_are_one_hundredth() {
        let mut base = one_param(0.0, ParamGroup::Base);
        let mut adapter = one_param(0.0, ParamGroup::Adapter);
        let (mut sb, mut sa) = (AdamState::new(&base), AdamState::new(&adapter));
        let h = AdamHyper::with_lr(3e-4);
        for g in [0.5, -1.0, 2.0] {
            adam_step(&mut base, &[vec![g]], &mut sb, &h).unwrap();
            adam_step(&mut adapter, &[vec![g]], &mut sa, &h).unwrap();
        }
        let b = base.iter().next().unwrap().value.data()[0];
        let a = adapter.iter().next().unwrap().value.data()[0];
        assert!((b / a - 100.0).abs() < 1e-9, "{b} {a}");
    }

    #[test]
    fn decoupled_weight_decay_applies_before_update() {
        let mut s = one_param(2.0, ParamGroup::Base);
        let mut st = AdamState::new(&s);
        let h = AdamHyper {
            weight_decay: 0.5,
            ..AdamHyper::with_lr(0.1)
        };
        adam_step(&mut s, &[vec![0.0]], &mut st, &h).unwrap();
        assert!((s.iter().next().unwrap().value.data()[0] - 2.0 * (1.0 - 0.05)).abs() < 1e-15);
    }

    #[test]
    fn nan_gradient_is_reported_without_update() {
        let mut s = one_param(1.0, ParamGroup::Base);
        let mut st = AdamState::new(&s);
        let err = adam_step(&mut s, &[vec![f64::NAN]], &mut st, &AdamHyper::with_lr(0.1)).unwrap_err();
        assert!(matches!(err, TrainError::NonFiniteGradient { ref param, index: 0, step: 1, .. } if param == "x"));
        assert_eq!(st.t, 0);
        assert_eq!(s.iter().next().unwrap().value.data(), &[1.0]);
    }

    #[test]
    fn bucket_example() {
        let keys = [(9, "a"), (2, "b"), (5, "c"), (7, "d")];
        let mut batches = bucket_batches(&keys, 2, 0);
        assert_eq!(batches, bucket_batches(&keys, 2, 0));
        batches.sort();
        assert_eq!(batches, vec![vec![1, 2], vec![3, 0]]);
        // ties broken by key
        let keys = [(3, "z"), (3, "a"), (3, "m")];
        let mut b = bucket_batches(&keys, 3, 1);
        assert_eq!(b.pop().unwrap(), vec![1, 2, 0]);
    }

    #[test]
    fn bucketing_minimizes_spread() {
        use rand::seq::SliceRandom;
        let mut rng = seeded_rng(9);
        let lengths: Vec<usize> = (0..64).map(|i| (i * 37) % 50 + 1).collect();
        let keys: Vec<(usize, usize)> = lengths.iter().copied().zip(0..).collect();
        let spread = |batches: &[Vec<usize>]| {
            batches
                .iter()
                .map(|b| {
                    let l: Vec<usize> = b.iter().map(|&i| lengths[i]).collect();
                    l.iter().max().unwrap() - l.iter().min().unwrap()
                })
                .max()
                .unwrap()
        };
        let ours = spread(&bucket_batches(&keys, 8, 3));
        for _ in 0..100 {
            let mut order: Vec<usize> = (0..64).collect();
            order.shuffle(&mut rng);
            let random: Vec<Vec<usize>> = order.chunks(8).map(<[usize]>::to_vec).collect();
            assert!(ours <= spread(&random));
        }
    }

    #[test]
    fn truncation() {
        let t = Tensor::new(vec![2, 3, 2], (0..12).map(f64::from).collect()).unwrap();
        assert_eq!(truncate_seq(&t, 3).unwrap(), t);
        let cut = truncate_seq(&t, 2).unwrap();
        assert_eq!(cut.shape(), &[2, 2, 2]);
        assert_eq!(cut.data(), &[0.0, 1.0, 2.0, 3.0, 6.0, 7.0, 8.0, 9.0]);
        assert!(truncate_seq(&Tensor::zeros(&[2, 2]), 1).is_err());
    }

    fn tiny() -> (ManifestHeader, Vec<Example>, Vec<Example>) {
        let cfg = SyntheticConfig {
            k: 3,
            d_t: 8,
            d_img: 8,
            n_regions: 4,
            n_range: [3, 6],
            ..Default::default()
        };
        let d = synth_generate(&cfg, 30).unwrap();
        let (tr, va) = d.examples.split_at(21);
        (d.header, tr.to_vec(), va.to_vec())
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            batch_size: 4,
            base_lr: 1e-2,
            model: ModelSpec {
                hidden: 4,
                d: 4,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let (h, tr, va) = tiny();
        let cfg = TrainConfig {
            epochs: 0,
            ..small_config()
        };
        let out = train(&cfg, h, &tr, &va).unwrap();
        assert_eq!(out.log.len(), 1);
        assert_eq!(out.best.epoch, 0);
        let fresh = Model::new(cfg.model.clone(), h, cfg.seed).unwrap();
        assert_eq!(out.best.model.store, fresh.store);
        assert_eq!(out.best.val_macro_f1, evaluate(&fresh, &va, 510).unwrap().macro_f1);
    }

    #[test]
    fn deterministic_and_checkpoint_round_trip() {
        let (h, tr, va) = tiny();
        let cfg = small_config();
        let a = train(&cfg, h, &tr, &va).unwrap();
        let b = train(&cfg, h, &tr, &va).unwrap();
        for (x, y) in a.log.iter().zip(&b.log) {
            assert_eq!((x.train_loss, x.val_macro_f1), (y.train_loss, y.val_macro_f1));
        }
        assert_eq!(a.best.model.store, b.best.model.store);

        let dir = tempfile::tempdir().unwrap();
        a.best.save(dir.path()).unwrap();
        let loaded = Checkpoint::load(dir.path()).unwrap();
        assert_eq!(loaded.model.store, a.best.model.store);
        let e1 = evaluate(&a.best.model, &va, 510).unwrap();
        let e2 = evaluate(&loaded.model, &va, 510).unwrap();
        assert_eq!(e1, e2);
        assert_eq!(loaded.val_macro_f1.to_bits(), a.best.val_macro_f1.to_bits());

        let log_path = dir.path().join("log.jsonl");
        write_log(&log_path, &a.log).unwrap();
        assert_eq!(read_log(&log_path).unwrap(), a.log);
    }

    #[test]
    fn rejects_bad_inputs() {
        let (h, tr, mut va) = tiny();
        assert!(matches!(train(&small_config(), h, &tr, &[]), Err(TrainError::Config(_))));
        va[0].record.label = 7;
        assert!(matches!(train(&small_config(), h, &tr, &va), Err(TrainError::Config(_))));
    }

    #[test]
    fn divergence_keeps_last_good_checkpoint() {
        let (h, tr, va) = tiny();
        let cfg = TrainConfig {
            epochs: 3,
            base_lr: 1e300,
            ..small_config()
        };
        match train(&cfg, h, &tr, &va) {
            Err(TrainError::Diverged { last_good, .. }) => {
                assert_eq!(last_good.epoch, 0);
                assert!(last_good.model.store.iter().all(|p| p.value.all_finite()));
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
