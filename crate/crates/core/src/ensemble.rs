//! Stacking ensemble: base-model class probabilities are concatenated per
//! item and a small feed-forward meta-network learns the final label.
//!
//! The meta-network only ever sees base-model outputs on the validation
//! split, divided internally into meta-train and meta-test halves.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::analysis::macro_f1;
use crate::data::{io_err, read_blob, split_indices, write_blob, DataError, Dtype, Example};
use crate::fusion::{cross_entropy_logits, ClassifierHead};
use crate::params::{load_params, save_params, ParamEntry, ParamStore};
use crate::tensor::{argmax, seeded_rng, Graph, Tensor, TensorError};
use crate::train::{adam_step, evaluate, AdamHyper, AdamState, Checkpoint, EpochLog, TrainError};

#[derive(Debug, thiserror::Error)]
pub enum EnsembleError {
    #[error("base model {index} has {got} classes, expected {expected}")]
    ClassMismatch { index: usize, expected: usize, got: usize },
    #[error("stacked width {got} does not match the meta-network input {expected}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, EnsembleError>;

/// Per-item concatenation of `m` base models' `k`-probability vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackedInput {
    pub m: usize,
    pub k: usize,
    pub ids: Vec<String>,
    pub labels: Vec<usize>,
    /// `len × (m·k)`; segment `j` is base model `j`.
    pub features: Vec<Vec<f64>>,
}

impl StackedInput {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn width(&self) -> usize {
        self.m * self.k
    }

    /// Rows `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> StackedInput {
        StackedInput {
            m: self.m,
            k: self.k,
            ids: idx.iter().map(|&i| self.ids[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            features: idx.iter().map(|&i| self.features[i].clone()).collect(),
        }
    }

    /// Predictions of base model `j` alone (argmax of its segment).
    pub fn base_predictions(&self, j: usize) -> Vec<usize> {
        self.features.iter().map(|f| argmax(&f[j * self.k..(j + 1) * self.k])).collect()
    }

    pub fn base_macro_f1(&self, j: usize) -> f64 {
        macro_f1(&self.labels, &self.base_predictions(j), self.k).expect("labels within k")
    }
}

/// Assembles stacked inputs from already computed probability sets, one
/// per base model, each `items × k`.
pub fn stack_probs(prob_sets: &[Vec<Vec<f64>>], ids: &[String], labels: &[usize], k: usize) -> Result<StackedInput> {
    if prob_sets.is_empty() {
        return Err(EnsembleError::Invalid("no base models".into()));
    }
    for (index, set) in prob_sets.iter().enumerate() {
        if set.len() != ids.len() {
            return Err(EnsembleError::Invalid(format!(
                "base model {index} scored {} items, expected {}",
                set.len(),
                ids.len()
            )));
        }
        if let Some(row) = set.iter().find(|r| r.len() != k) {
            return Err(EnsembleError::ClassMismatch {
                index,
                expected: k,
                got: row.len(),
            });
        }
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= k) {
        return Err(EnsembleError::Invalid(format!("label {l} outside 0..{k}")));
    }
    let features = (0..ids.len())
        .map(|i| prob_sets.iter().flat_map(|set| set[i].iter().copied()).collect())
        .collect();
    Ok(StackedInput {
        m: prob_sets.len(),
        k,
        ids: ids.to_vec(),
        labels: labels.to_vec(),
        features,
    })
}

/// Scores `items` with every checkpoint, in list order.
pub fn collect_probs(checkpoints: &[Checkpoint], items: &[Example]) -> Result<StackedInput> {
    let k = checkpoints
        .first()
        .ok_or_else(|| EnsembleError::Invalid("no base models".into()))?
        .header
        .k;
    let mut sets = Vec::with_capacity(checkpoints.len());
    for (index, c) in checkpoints.iter().enumerate() {
        if c.header.k != k {
            return Err(EnsembleError::ClassMismatch {
                index,
                expected: k,
                got: c.header.k,
            });
        }
        sets.push(evaluate(&c.model, items, c.config.max_seq_len)?.probs);
    }
    let ids: Vec<String> = items.iter().map(|e| e.record.id.clone()).collect();
    let labels: Vec<usize> = items.iter().map(Example::label).collect();
    stack_probs(&sets, &ids, &labels, k)
}

/// Stratified split of stacked items into meta-train and meta-test.
pub fn split_meta(stacked: &StackedInput, test_fraction: f64, seed: u64) -> Result<(StackedInput, StackedInput)> {
    let s = split_indices(&stacked.labels, test_fraction, seed)?;
    Ok((stacked.subset(&s.train), stacked.subset(&s.val)))
}

/// Fails if any item id appears in both sets.
pub fn assert_disjoint(a: &StackedInput, b: &StackedInput) -> Result<()> {
    let ids: HashSet<&str> = a.ids.iter().map(String::as_str).collect();
    match b.ids.iter().find(|id| ids.contains(id.as_str())) {
        Some(id) => Err(EnsembleError::Invalid(format!("item {id} appears in both sets"))),
        None => Ok(()),
    }
}

fn d_epochs() -> usize {
    100
}
fn d_batch() -> usize {
    16
}
fn d_lr() -> f64 {
    1e-2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaConfig {
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_lr")]
    pub lr: f64,
    /// Hidden width; defaults to `m·k`.
    #[serde(default)]
    pub hidden: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl Default for MetaConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

/// Trained meta-network.
#[derive(Debug, Clone)]
pub struct MetaModel {
    pub config: MetaConfig,
    pub m: usize,
    pub k: usize,
    pub store: ParamStore,
    head: ClassifierHead,
    /// Epoch the parameters come from and its meta-validation F1.
    pub epoch: usize,
    pub val_macro_f1: f64,
}

impl MetaModel {
    pub fn new(config: MetaConfig, m: usize, k: usize) -> Self {
        let mut store = ParamStore::new();
        let width = m * k;
        let head = ClassifierHead::new(&mut store, width, config.hidden.unwrap_or(width), k, &mut seeded_rng(config.seed));
        MetaModel {
            config,
            m,
            k,
            store,
            head,
            epoch: 0,
            val_macro_f1: 0.0,
        }
    }

    pub fn width(&self) -> usize {
        self.m * self.k
    }

    pub fn predict_one(&self, feature: &[f64]) -> Result<Vec<f64>> {
        if feature.len() != self.width() {
            return Err(EnsembleError::WidthMismatch {
                expected: self.width(),
                got: feature.len(),
            });
        }
        let mut g = Graph::new();
        let p = self.store.bind(&mut g, false);
        let x = g.constant(&Tensor::row(feature.to_vec()));
        let probs = self.head.classify(&mut g, &p, x)?;
        Ok(g.value(probs).data().to_vec())
    }

    fn loss_and_grads(&self, feature: &[f64], label: usize) -> Result<(f64, Vec<Vec<f64>>)> {
        let mut g = Graph::new();
        let p = self.store.bind(&mut g, true);
        let x = g.constant(&Tensor::row(feature.to_vec()));
        let z = self.head.logits(&mut g, &p, x)?;
        let loss = cross_entropy_logits(&mut g, z, label)?;
        let value = g.value(loss).data()[0];
        g.backward(loss)?;
        Ok((value, self.store.collect_grads(&g, &p)))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let params = save_params(&self.store, dir)?;
        let index = MetaIndex {
            config: self.config.clone(),
            m: self.m,
            k: self.k,
            epoch: self.epoch,
            val_macro_f1: self.val_macro_f1,
            params,
        };
        let path = dir.join("meta.json");
        fs::write(&path, serde_json::to_string_pretty(&index).expect("index serializes")).map_err(io_err(&path))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("meta.json");
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let index: MetaIndex = serde_json::from_str(&text).map_err(|source| DataError::Json {
            path: path.clone(),
            line: 0,
            source,
        })?;
        let mut meta = MetaModel::new(index.config, index.m, index.k);
        load_params(&mut meta.store, dir, &index.params)?;
        meta.epoch = index.epoch;
        meta.val_macro_f1 = index.val_macro_f1;
        Ok(meta)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct MetaIndex {
    config: MetaConfig,
    m: usize,
    k: usize,
    epoch: usize,
    val_macro_f1: f64,
    params: Vec<ParamEntry>,
}

/// Labels (argmax, ties to the lowest class) and probabilities.
pub fn predict_ensemble(meta: &MetaModel, stacked: &StackedInput) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
    if stacked.width() != meta.width() {
        return Err(EnsembleError::WidthMismatch {
            expected: meta.width(),
            got: stacked.width(),
        });
    }
    let probs = stacked
        .features
        .iter()
        .map(|f| meta.predict_one(f))
        .collect::<Result<Vec<_>>>()?;
    Ok((probs.iter().map(|p| argmax(p)).collect(), probs))
}

#[derive(Debug, Clone)]
pub struct MetaOutcome {
    pub meta: MetaModel,
    pub log: Vec<EpochLog>,
}

/// Adam + cross-entropy on `train`, keeping the epoch with the best
/// macro-F1 on `val` (ties to the earlier epoch).
pub fn train_meta(train: &StackedInput, val: &StackedInput, config: &MetaConfig) -> Result<MetaOutcome> {
    if train.is_empty() || val.is_empty() {
        return Err(EnsembleError::Invalid("meta train and validation sets must be nonempty".into()));
    }
    if train.width() != val.width() || train.k != val.k {
        return Err(EnsembleError::WidthMismatch {
            expected: train.width(),
            got: val.width(),
        });
    }
    if config.batch_size == 0 || !(config.lr > 0.0) {
        return Err(EnsembleError::Invalid("meta batch_size and lr must be positive".into()));
    }
    let mut meta = MetaModel::new(config.clone(), train.m, train.k);
    let hyper = AdamHyper::with_lr(config.lr);
    let mut adam = AdamState::new(&meta.store);
    let val_f1 = |meta: &MetaModel| -> Result<f64> {
        let (pred, _) = predict_ensemble(meta, val)?;
        Ok(macro_f1(&val.labels, &pred, val.k).expect("labels within k"))
    };
    let mean_loss = |meta: &MetaModel| -> Result<f64> {
        let mut total = 0.0;
        for (f, &l) in train.features.iter().zip(&train.labels) {
            total += crate::fusion::cross_entropy(&meta.predict_one(f)?, l)?;
        }
        Ok(total / train.len() as f64)
    };

    meta.val_macro_f1 = val_f1(&meta)?;
    let mut log = vec![EpochLog {
        epoch: 0,
        train_loss: mean_loss(&meta)?,
        val_macro_f1: meta.val_macro_f1,
        seconds: 0.0,
    }];
    let mut best = meta.clone();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=config.epochs {
        let started = std::time::Instant::now();
        order.shuffle(&mut seeded_rng(config.seed.wrapping_add(epoch as u64)));
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut acc: Vec<Vec<f64>> = meta.store.iter().map(|p| vec![0.0; p.value.len()]).collect();
            for &i in batch {
                let (loss, grads) = meta.loss_and_grads(&train.features[i], train.labels[i])?;
                loss_sum += loss;
                for (a, g) in acc.iter_mut().zip(&grads) {
                    a.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
            }
            let scale = 1.0 / batch.len() as f64;
            acc.iter_mut().flatten().for_each(|x| *x *= scale);
            adam_step(&mut meta.store, &acc, &mut adam, &hyper)?;
        }
        let f1 = val_f1(&meta)?;
        log.push(EpochLog {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_macro_f1: f1,
            seconds: started.elapsed().as_secs_f64(),
        });
        if f1 > best.val_macro_f1 {
            best = meta.clone();
            best.epoch = epoch;
            best.val_macro_f1 = f1;
        }
    }
    Ok(MetaOutcome { meta: best, log })
}

/// Stacked features as one `items × (m·k)` 64-bit blob plus a JSON index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackedIndex {
    /// Base model names in segment order.
    pub models: Vec<String>,
    pub m: usize,
    pub k: usize,
    pub ids: Vec<String>,
    pub labels: Vec<usize>,
    pub blob: String,
}

pub fn write_stacked(dir: &Path, name: &str, stacked: &StackedInput, models: &[String]) -> Result<()> {
    if models.len() != stacked.m {
        return Err(EnsembleError::Invalid(format!("{} model names for {} segments", models.len(), stacked.m)));
    }
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let data: Vec<f64> = stacked.features.iter().flatten().copied().collect();
    let t = Tensor::new(vec![stacked.len(), stacked.width()], data)?;
    let blob = format!("{name}.mmeb");
    let bpath = dir.join(&blob);
    fs::write(&bpath, write_blob(&t, Dtype::F64)?).map_err(io_err(&bpath))?;
    let index = StackedIndex {
        models: models.to_vec(),
        m: stacked.m,
        k: stacked.k,
        ids: stacked.ids.clone(),
        labels: stacked.labels.clone(),
        blob,
    };
    let ipath = dir.join(format!("{name}.json"));
    fs::write(&ipath, serde_json::to_string_pretty(&index).expect("index serializes")).map_err(io_err(&ipath))?;
    Ok(())
}

pub fn read_stacked(dir: &Path, name: &str) -> Result<(StackedInput, Vec<String>)> {
    let ipath = dir.join(format!("{name}.json"));
    let text = fs::read_to_string(&ipath).map_err(io_err(&ipath))?;
    let index: StackedIndex = serde_json::from_str(&text).map_err(|source| DataError::Json {
        path: ipath.clone(),
        line: 0,
        source,
    })?;
    let bpath = dir.join(&index.blob);
    let t = read_blob(&fs::read(&bpath).map_err(io_err(&bpath))?)?;
    let width = index.m * index.k;
    if t.shape() != [index.ids.len(), width] {
        return Err(EnsembleError::WidthMismatch {
            expected: width,
            got: t.shape().get(1).copied().unwrap_or(0),
        });
    }
    let features = t.data().chunks(width.max(1)).map(<[f64]>::to_vec).collect();
    Ok((
        StackedInput {
            m: index.m,
            k: index.k,
            ids: index.ids,
            labels: index.labels,
            features,
        },
        index.models,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_hot(k: usize, at: usize, confidence: f64) -> Vec<f64> {
        let rest = (1.0 - confidence) / (k - 1) as f64;
        (0..k).map(|c| if c == at { confidence } else { rest }).collect()
    }

    fn labels(n: usize, k: usize) -> Vec<usize> {
        (0..n).map(|i| i % k).collect()
    }

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("item-{i}")).collect()
    }

    #[test]
    fn stacking_shapes() {
        let p = vec![vec![0.2, 0.3, 0.5], vec![1.0, 0.0, 0.0]];
        let s = stack_probs(&[p.clone(), p.clone()], &ids(2), &[2, 0], 3).unwrap();
        assert_eq!(s.width(), 6);
        assert_eq!(s.features[0], vec![0.2, 0.3, 0.5, 0.2, 0.3, 0.5]);
        for f in &s.features {
            for seg in f.chunks(3) {
                assert!((seg.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }
        let bad = vec![vec![0.5, 0.5], vec![0.5, 0.5]];
        assert!(matches!(
            stack_probs(&[p, bad], &ids(2), &[0, 0], 3),
            Err(EnsembleError::ClassMismatch { index: 1, .. })
        ));
    }

    #[test]
    fn perfect_plus_adversarial() {
        let k = 4;
        let y = labels(160, k);
        let perfect: Vec<Vec<f64>> = y.iter().map(|&l| one_hot(k, l, 0.9)).collect();
        // confidently wrong: mass on a permuted label
        let adversarial: Vec<Vec<f64>> = y.iter().map(|&l| one_hot(k, (l + 1) % k, 0.9)).collect();
        let s = stack_probs(&[perfect, adversarial], &ids(160), &y, k).unwrap();
        let (tr, te) = split_meta(&s, 0.5, 0).unwrap();
        assert_disjoint(&tr, &te).unwrap();
        let out = train_meta(&tr, &te, &MetaConfig::default()).unwrap();
        let (pred, probs) = predict_ensemble(&out.meta, &te).unwrap();
        let f1 = macro_f1(&te.labels, &pred, k).unwrap();
        assert!(f1 >= te.base_macro_f1(0) - 0.02, "{f1}");
        assert_eq!(te.base_macro_f1(1), 0.0);
        assert!(probs.iter().all(|p| (p.iter().sum::<f64>() - 1.0).abs() < 1e-12));
        assert_eq!(f1, out.meta.val_macro_f1);
    }

    #[test]
    fn single_base_is_representable() {
        let k = 3;
        let y = labels(90, k);
        let mut rng = seeded_rng(5);
        // a noisy base: right 70% of the time
        let base: Vec<Vec<f64>> = y
            .iter()
            .map(|&l| {
                use rand::Rng as _;
                let guess = if rng.random::<f64>() < 0.7 { l } else { rng.random_range(0..k) };
                one_hot(k, guess, 0.6)
            })
            .collect();
        let s = stack_probs(&[base], &ids(90), &y, k).unwrap();
        let (tr, te) = split_meta(&s, 0.5, 1).unwrap();
        let out = train_meta(&tr, &te, &MetaConfig::default()).unwrap();
        assert!(out.meta.val_macro_f1 >= te.base_macro_f1(0) - 1e-12);
    }

    #[test]
    fn deterministic_and_persistent() {
        let k = 3;
        let y = labels(60, k);
        let base: Vec<Vec<f64>> = y.iter().map(|&l| one_hot(k, l, 0.5)).collect();
        let s = stack_probs(&[base.clone(), base], &ids(60), &y, k).unwrap();
        let (tr, te) = split_meta(&s, 0.5, 2).unwrap();
        let cfg = MetaConfig {
            epochs: 5,
            ..Default::default()
        };
        let a = train_meta(&tr, &te, &cfg).unwrap();
        let b = train_meta(&tr, &te, &cfg).unwrap();
        assert_eq!(a.meta.store, b.meta.store);

        let dir = tempfile::tempdir().unwrap();
        a.meta.save(dir.path()).unwrap();
        let loaded = MetaModel::load(dir.path()).unwrap();
        assert_eq!(predict_ensemble(&loaded, &te).unwrap(), predict_ensemble(&a.meta, &te).unwrap());

        write_stacked(dir.path(), "stacked", &s, &["a".into(), "b".into()]).unwrap();
        let (back, names) = read_stacked(dir.path(), "stacked").unwrap();
        assert_eq!(back, s);
        assert_eq!(names, ["a", "b"]);

        let narrow = stack_probs(&[vec![vec![1.0, 0.0, 0.0]]], &ids(1), &[0], 3).unwrap();
        assert!(matches!(predict_ensemble(&a.meta, &narrow), Err(EnsembleError::WidthMismatch { .. })));
    }
}
