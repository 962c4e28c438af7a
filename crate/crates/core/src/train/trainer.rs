//! Fold training, evaluation and the cross-validated run.

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::save_checkpoint;
use crate::data::{
    generate_volume, label_of, load_volume, make_folds, normalize_volume, read_manifest, FoldPlan, SynthSpec, VolumeRecord,
};
use crate::error::{Error, Result};
use crate::model::{SFNet, SFNetConfig};
use crate::ops::softmax_rows;
use crate::tensor::Tensor;

use super::metrics::{auc, metrics, summarize, ConfusionCounts, Metrics, Summary};
use super::optim::{cosine_lr, AdamW, AdamWParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Final learning rate of the cosine schedule; `lr / 100` when absent.
    pub lr_min: Option<f64>,
    pub seed: u64,
    /// Batch size used for evaluation-mode passes.
    pub eval_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            epochs: 30,
            batch_size: 8,
            lr_min: None,
            seed: 0,
            eval_batch_size: 16,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be finite and non-negative", self.lr)));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.eval_batch_size == 0 {
            return Err(Error::Config("epochs and batch sizes must be at least 1".into()));
        }
        Ok(())
    }

    pub fn lr_min(&self) -> f64 {
        self.lr_min.unwrap_or(self.lr / 100.0)
    }

    pub fn adamw(&self) -> AdamWParams {
        AdamWParams { beta1: self.beta1, beta2: self.beta2, eps: self.eps, weight_decay: self.weight_decay }
    }
}

/// Normalized `[1, nx, ny, nz]` volumes with their labels.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub volumes: Vec<Tensor<f32>>,
    pub labels: Vec<u8>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn load(records: &[VolumeRecord], root: &Path) -> Result<Self> {
        let volumes = records
            .par_iter()
            .map(|r| {
                let (v, constant) = normalize_volume(&load_volume(r, root)?);
                if constant {
                    warn!("{}: constant volume normalized to zeros", r.subject_id);
                }
                Ok(v)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { volumes, labels: records.iter().map(|r| r.label).collect() })
    }

    /// Generate subjects `indices` in memory, labelled and normalized exactly
    /// as they would be after a write and [`Dataset::load`].
    pub fn synthetic(spec: &SynthSpec, indices: std::ops::Range<usize>) -> Result<Self> {
        spec.validate()?;
        let (volumes, labels): (Vec<_>, Vec<_>) = indices
            .into_par_iter()
            .map(|i| {
                let label = label_of(i);
                let v = generate_volume(spec, label, i as u64);
                let [nx, ny, nz] = spec.extent;
                let (v, _) = normalize_volume(&v);
                (v.reshape(&[1, nx, ny, nz]).expect("volume extent"), label)
            })
            .unzip();
        Ok(Self { volumes, labels })
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            volumes: indices.iter().map(|&i| self.volumes[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Stack the given samples into a `[B, 1, nx, ny, nz]` batch.
    pub fn batch(&self, indices: &[usize]) -> Result<Tensor<f32>> {
        let first = self.volumes[*indices.first().ok_or_else(|| Error::Invalid("empty batch".into()))?].shape();
        let mut data = Vec::with_capacity(indices.len() * first.iter().product::<usize>());
        for &i in indices {
            let v = &self.volumes[i];
            if v.shape() != first {
                return Err(Error::Shape(format!("cannot batch {:?} with {first:?}", v.shape())));
            }
            data.extend_from_slice(v.data());
        }
        let shape: Vec<usize> = std::iter::once(indices.len()).chain(first.iter().copied()).collect();
        Tensor::new(&shape, data)
    }
}

/// Decisions and class-1 probabilities for a dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub counts: ConfusionCounts,
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
}

impl Evaluation {
    pub fn metrics(&self) -> Metrics {
        metrics(&self.counts)
    }

    /// `None` when only one class is present.
    pub fn auc(&self) -> Option<f64> {
        auc(&self.scores, &self.labels).ok()
    }
}

/// Evaluation-mode pass; argmax decides the class.
pub fn evaluate(model: &SFNet<f32>, data: &Dataset, batch_size: usize) -> Result<Evaluation> {
    let mut scores = Vec::with_capacity(data.len());
    let mut predicted = Vec::with_capacity(data.len());
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let logits = model.logits(&data.batch(chunk)?)?;
        let k = logits.shape()[1];
        let probs = softmax_rows(&logits);
        for (row, lrow) in probs.chunks(k).zip(logits.data().chunks(k)) {
            scores.push(row[1] as f64);
            let arg = (0..k).fold(0, |best, j| if lrow[j] > lrow[best] { j } else { best });
            predicted.push(arg as u8);
        }
    }
    Ok(Evaluation {
        counts: ConfusionCounts::from_predictions(&predicted, &data.labels),
        scores,
        labels: data.labels.clone(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_acc: Option<f64>,
    pub val_sen: Option<f64>,
    pub val_spe: Option<f64>,
    pub val_f1: Option<f64>,
    pub val_auc: Option<f64>,
}

pub struct FoldOutcome {
    pub best: SFNet<f32>,
    pub last: SFNet<f32>,
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub skipped_steps: u64,
}

/// Train a fresh model. The best epoch is the first with maximal validation
/// accuracy; with no validation data it is the final epoch. When `out` is
/// given, the epoch CSV and both checkpoints are written there as
/// `{prefix}_epochs.csv`, `{prefix}_best/` and `{prefix}_final/`.
pub fn train_fold(
    model_cfg: &SFNetConfig,
    train: &Dataset,
    val: &Dataset,
    tc: &TrainConfig,
    out: Option<(&Path, &str)>,
) -> Result<FoldOutcome> {
    tc.validate()?;
    if train.is_empty() {
        return Err(Error::Invalid("training set is empty".into()));
    }
    let mut model = SFNet::<f32>::new(model_cfg.clone(), tc.seed)?;
    let mut opt = AdamW::new(model.store(), tc.adamw());
    let mut shuffle = ChaCha8Rng::seed_from_u64(tc.seed);
    shuffle.set_stream(1);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epochs = Vec::with_capacity(tc.epochs);
    let mut best: Option<(f64, usize, SFNet<f32>)> = None;

    for epoch in 0..tc.epochs {
        let lr = cosine_lr(epoch, tc.epochs, tc.lr, tc.lr_min());
        order.shuffle(&mut shuffle);
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(tc.batch_size).enumerate() {
            let labels: Vec<usize> = chunk.iter().map(|&i| train.labels[i] as usize).collect();
            let x = train.batch(chunk)?;
            let (loss, grads, updates) = {
                let mut tape = model.tape();
                let xv = tape.input(x);
                let logits = model.forward(&mut tape, xv, true)?;
                let loss = tape.cross_entropy(logits, &labels)?;
                let l = tape.value(loss).data()[0] as f64;
                if !l.is_finite() {
                    return Err(Error::Diverged { epoch, batch: b, loss: l });
                }
                (l, tape.backward(loss)?, tape.take_bn_updates())
            };
            grads.write_into(model.store_mut());
            model.apply_bn_updates(&updates);
            opt.step(model.store_mut(), lr);
            loss_sum += loss * chunk.len() as f64;
        }
        let train_loss = loss_sum / train.len() as f64;
        let (m, val_auc) = if val.is_empty() {
            (Metrics::default(), None)
        } else {
            let e = evaluate(&model, val, tc.eval_batch_size)?;
            (e.metrics(), e.auc())
        };
        info!("epoch {epoch}: lr {lr:.3e} loss {train_loss:.5} val_acc {:?}", m.acc);
        epochs.push(EpochLog {
            epoch,
            lr,
            train_loss,
            val_acc: m.acc,
            val_sen: m.sen,
            val_spe: m.spe,
            val_f1: m.f1,
            val_auc,
        });
        let score = m.acc.unwrap_or(f64::NEG_INFINITY);
        let improves = match &best {
            None => true,
            Some((s, _, _)) => score > *s || (val.is_empty() && epoch + 1 == tc.epochs),
        };
        if improves {
            best = Some((score, epoch, model.clone()));
        }
    }
    let (_, best_epoch, best) = best.expect("at least one epoch");
    if opt.skipped > 0 {
        warn!("{} optimizer steps skipped on non-finite gradients", opt.skipped);
    }
    if let Some((dir, prefix)) = out {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_epoch_csv(&dir.join(format!("{prefix}_epochs.csv")), &epochs)?;
        save_checkpoint(&best, &dir.join(format!("{prefix}_best")))?;
        save_checkpoint(&model, &dir.join(format!("{prefix}_final")))?;
    }
    Ok(FoldOutcome { best, last: model, epochs, best_epoch, skipped_steps: opt.skipped })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x}"))
}

/// `epoch,lr,train_loss,val_acc,val_sen,val_spe,val_f1,val_auc`; undefined
/// metrics are written as `NA`.
pub fn write_epoch_csv(path: &Path, epochs: &[EpochLog]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "lr", "train_loss", "val_acc", "val_sen", "val_spe", "val_f1", "val_auc"])?;
    for e in epochs {
        w.write_record([
            e.epoch.to_string(),
            format!("{}", e.lr),
            format!("{}", e.train_loss),
            fmt_opt(e.val_acc),
            fmt_opt(e.val_sen),
            fmt_opt(e.val_spe),
            fmt_opt(e.val_f1),
            fmt_opt(e.val_auc),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestMetrics {
    pub counts: ConfusionCounts,
    pub acc: Option<f64>,
    pub sen: Option<f64>,
    pub spe: Option<f64>,
    pub f1: Option<f64>,
    pub auc: Option<f64>,
}

impl From<&Evaluation> for TestMetrics {
    fn from(e: &Evaluation) -> Self {
        let m = e.metrics();
        Self { counts: e.counts, acc: m.acc, sen: m.sen, spe: m.spe, f1: m.f1, auc: e.auc() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub best_epoch: usize,
    pub skipped_steps: u64,
    pub epochs: Vec<EpochLog>,
    pub test_best: TestMetrics,
    pub test_final: TestMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub acc: Summary,
    pub sen: Summary,
    pub spe: Summary,
    pub f1: Summary,
    pub auc: Summary,
}

pub fn aggregate_folds(tests: &[&TestMetrics]) -> Aggregate {
    let pick = |f: fn(&TestMetrics) -> Option<f64>| summarize(&tests.iter().map(|t| f(t)).collect::<Vec<_>>());
    Aggregate {
        acc: pick(|t| t.acc),
        sen: pick(|t| t.sen),
        spe: pick(|t| t.spe),
        f1: pick(|t| t.f1),
        auc: pick(|t| t.auc),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub model: SFNetConfig,
    pub train: TrainConfig,
    pub plan: FoldPlan,
    pub folds: Vec<FoldReport>,
    pub aggregate_best: Aggregate,
    pub aggregate_final: Aggregate,
}

/// Hold out the test split, train each fold, evaluate both checkpoints on the
/// test split and write `report.json`, `folds.json` and per-fold artifacts.
pub fn run_cross_validation(
    model_cfg: &SFNetConfig,
    tc: &TrainConfig,
    data_dir: &Path,
    out: &Path,
    parallel_folds: usize,
) -> Result<RunReport> {
    model_cfg.validate()?;
    tc.validate()?;
    let records = read_manifest(data_dir)?;
    if let Some(r) = records.iter().find(|r| r.extent() != model_cfg.input_extent) {
        return Err(Error::Config(format!(
            "{} has extent {:?}, model expects {:?}",
            r.subject_id,
            r.extent(),
            model_cfg.input_extent
        )));
    }
    let labels: Vec<u8> = records.iter().map(|r| r.label).collect();
    let plan = make_folds(&labels, tc.seed)?;
    let data = Dataset::load(&records, data_dir)?;
    let test = data.subset(&plan.test);
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_json(&out.join("folds.json"), &plan)?;

    let run_fold = |k: usize| -> Result<FoldReport> {
        let fold = &plan.folds[k];
        let fold_tc = TrainConfig { seed: tc.seed.wrapping_add(k as u64), ..tc.clone() };
        let o = train_fold(
            model_cfg,
            &data.subset(&fold.train),
            &data.subset(&fold.val),
            &fold_tc,
            Some((out, &format!("fold{k}"))),
        )?;
        let tb = evaluate(&o.best, &test, tc.eval_batch_size)?;
        let tf = evaluate(&o.last, &test, tc.eval_batch_size)?;
        Ok(FoldReport {
            fold: k,
            best_epoch: o.best_epoch,
            skipped_steps: o.skipped_steps,
            epochs: o.epochs,
            test_best: (&tb).into(),
            test_final: (&tf).into(),
        })
    };
    let folds: Vec<FoldReport> = if parallel_folds > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallel_folds)
            .build()
            .map_err(|e| Error::Invalid(format!("thread pool: {e}")))?;
        pool.install(|| (0..plan.folds.len()).into_par_iter().map(run_fold).collect::<Result<_>>())?
    } else {
        (0..plan.folds.len()).map(run_fold).collect::<Result<_>>()?
    };
    let report = RunReport {
        model: model_cfg.clone(),
        train: tc.clone(),
        aggregate_best: aggregate_folds(&folds.iter().map(|f| &f.test_best).collect::<Vec<_>>()),
        aggregate_final: aggregate_folds(&folds.iter().map(|f| &f.test_final).collect::<Vec<_>>()),
        plan,
        folds,
    };
    write_json(&out.join("report.json"), &report)?;
    Ok(report)
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Convenience for callers holding a checkpoint path string.
pub fn checkpoint_dir(out: &Path, fold: usize, which: &str) -> PathBuf {
    out.join(format!("fold{fold}_{which}"))
}
