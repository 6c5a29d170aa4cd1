//! Optimization loop: adaptive-moment updates with bias correction,
//! per-epoch validation metrics, best-checkpoint retention, early
//! stopping, and hyperparameter sweeps.

use cdnet_tensor::{ParamStore, Real, Tape, Tensor};
use serde::Serialize;

use crate::config::TrainConfig;
use crate::data::{batches, temporal_split, PadMode, Sample, SampleSet};
use crate::error::{CdnetError, Result};
use crate::metrics::{auc, gauc, logloss, EvalRecord};
use crate::model::CdnetModel;

/// Adaptive-moment optimizer with bias correction. Rows frozen by the
/// parameter (embedding padding) are never updated and keep zero moments.
pub struct Adam<F: Real> {
    pub beta1: F,
    pub beta2: F,
    pub epsilon: F,
    pub t: u64,
    pub m: Vec<Tensor<F>>,
    pub v: Vec<Tensor<F>>,
}

impl<F: Real> Adam<F> {
    pub fn new(store: &ParamStore<F>, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Adam {
            beta1: F::from_f64(beta1),
            beta2: F::from_f64(beta2),
            epsilon: F::from_f64(epsilon),
            t: 0,
            m: store.entries().iter().map(|e| Tensor::zeros(e.value.shape())).collect(),
            v: store.entries().iter().map(|e| Tensor::zeros(e.value.shape())).collect(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore<F>, lr: F) {
        self.t += 1;
        let t = self.t as i32;
        let bc1 = F::ONE - self.beta1.powi(t);
        let bc2 = F::ONE - self.beta2.powi(t);
        for (idx, entry) in store.entries_mut().iter_mut().enumerate() {
            if !entry.trainable {
                continue;
            }
            let frozen_prefix = if entry.freeze_row0 { entry.value.cols() } else { 0 };
            let m = self.m[idx].data_mut();
            let v = self.v[idx].data_mut();
            let g = entry.grad.data();
            let w = entry.value.data_mut();
            for i in frozen_prefix..w.len() {
                let gi = g[i];
                m[i] = self.beta1 * m[i] + (F::ONE - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (F::ONE - self.beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                w[i] -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}

/// One line of the metric trace.
#[derive(Clone, Debug, Serialize)]
pub struct TraceRecord {
    pub epoch: usize,
    pub split: String,
    pub auc: f64,
    pub gauc: Option<f64>,
    pub logloss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<F: Real> {
    pub trace: Vec<TraceRecord>,
    /// Mean loss of every training batch, in order.
    pub batch_losses: Vec<F>,
    /// Parameter snapshot at the best validation AUC.
    pub best_params: Vec<Tensor<F>>,
    pub best_epoch: usize,
    pub best_auc: f64,
    pub stopped_early: bool,
}

/// Scores plus the standard metric triple for a sample list.
pub fn evaluate<F: Real>(
    model: &CdnetModel<F>,
    samples: &[Sample],
) -> Result<(Vec<EvalRecord>, f64, Option<f64>, f64)> {
    let mut records = Vec::with_capacity(samples.len());
    for sample in samples {
        let score = model.predict_score(sample)?.to_f64();
        records.push(EvalRecord::new(sample.user, score, sample.label));
    }
    let a = auc(&records)?;
    let g = gauc(&records).ok();
    let ll = logloss(&records)?;
    Ok((records, a, g, ll))
}

/// Train in place. Deterministic for a fixed (config, data) pair: the
/// shuffle is seeded per epoch from the config seed, and every
/// accumulation runs in a fixed order.
pub fn train<F: Real>(
    model: &mut CdnetModel<F>,
    train_samples: &[Sample],
    valid_samples: &[Sample],
) -> Result<(TrainOutcome<F>, Adam<F>)> {
    if train_samples.is_empty() {
        return Err(CdnetError::Config("empty training set".into()));
    }
    let cfg = model.config.clone();
    let mut adam = Adam::new(&model.store, cfg.beta1, cfg.beta2, cfg.epsilon);
    let lr = F::from_f64(cfg.lr);
    let pad = if cfg.pad_to_l_max { PadMode::ToLMax } else { PadMode::BatchMax };

    let mut outcome = TrainOutcome {
        trace: Vec::new(),
        batch_losses: Vec::new(),
        best_params: model.store.entries().iter().map(|e| e.value.clone()).collect(),
        best_epoch: 0,
        best_auc: f64::NEG_INFINITY,
        stopped_early: false,
    };
    let mut epochs_since_best = 0usize;

    for epoch in 1..=cfg.epochs {
        let shuffle_seed = cfg.seed.wrapping_add(epoch as u64);
        let epoch_batches = batches(train_samples, cfg.batch_size, shuffle_seed, pad, cfg.l_max);
        let mut epoch_loss_sum = 0.0f64;
        for (batch_idx, batch) in epoch_batches.iter().enumerate() {
            let mut tape = Tape::new();
            let mut preds = Vec::with_capacity(batch.len());
            for sample in &batch.samples {
                let trace = model.forward(&mut tape, sample)?;
                preds.push(trace.yhat);
            }
            let stacked = tape.concat_rows(&preds)?;
            let labels: Vec<F> = batch.labels();
            let loss = tape.bce_loss(stacked, &labels)?;
            let loss_value = tape.scalar(loss)?;
            if !loss_value.is_finite() {
                return Err(CdnetError::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                });
            }
            outcome.batch_losses.push(loss_value);
            epoch_loss_sum += loss_value.to_f64() * batch.len() as f64;
            tape.backward(loss, &mut model.store)?;
            adam.step(&mut model.store, lr);
        }
        let train_loss = epoch_loss_sum / train_samples.len() as f64;

        if valid_samples.is_empty() {
            // No validation: the final parameters are the retained ones.
            outcome.trace.push(TraceRecord {
                epoch,
                split: "train".into(),
                auc: f64::NAN,
                gauc: None,
                logloss: f64::NAN,
                loss: Some(train_loss),
            });
            outcome.best_epoch = epoch;
            outcome.best_params = model.store.entries().iter().map(|e| e.value.clone()).collect();
            continue;
        }
        let (_, va, vg, vll) = evaluate(model, valid_samples)?;
        outcome.trace.push(TraceRecord {
            epoch,
            split: "valid".into(),
            auc: va,
            gauc: vg,
            logloss: vll,
            loss: Some(train_loss),
        });
        if va > outcome.best_auc {
            outcome.best_auc = va;
            outcome.best_epoch = epoch;
            outcome.best_params = model.store.entries().iter().map(|e| e.value.clone()).collect();
            epochs_since_best = 0;
        } else {
            epochs_since_best += 1;
            if epochs_since_best >= cfg.patience {
                outcome.stopped_early = true;
                break;
            }
        }
    }
    Ok((outcome, adam))
}

/// Overwrite model parameters with a snapshot taken by [`train`].
pub fn restore_params<F: Real>(model: &mut CdnetModel<F>, params: &[Tensor<F>]) {
    assert_eq!(model.store.len(), params.len());
    for (entry, snap) in model.store.entries_mut().iter_mut().zip(params) {
        entry.value = snap.clone();
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    /// Core-selection ratio k/L: each value scales `l_max` into a k.
    KRatio,
    /// Number of similarity bins n.
    N,
}

impl std::str::FromStr for SweepAxis {
    type Err = CdnetError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "k_ratio" => Ok(SweepAxis::KRatio),
            "n" => Ok(SweepAxis::N),
            other => Err(CdnetError::Config(format!(
                "unknown sweep axis {other:?} (expected k_ratio or n)"
            ))),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub k: usize,
    pub n: usize,
    pub auc: Option<f64>,
    pub gauc: Option<f64>,
    pub logloss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Train one model per axis value on identical data and seed; cells that
/// fail carry their error and the sweep continues.
pub fn sweep(
    axis: SweepAxis,
    values: &[f64],
    base: &TrainConfig,
    data: &SampleSet,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(CdnetError::Config("sweep needs at least one value".into()));
    }
    let split = temporal_split(data);
    let mut rows = Vec::with_capacity(values.len());
    for &value in values {
        let mut cfg = base.clone();
        match axis {
            SweepAxis::KRatio => {
                cfg.k = ((value * cfg.l_max as f64).round() as usize).clamp(1, cfg.l_max);
            }
            SweepAxis::N => {
                cfg.n = value.round() as usize;
            }
        }
        let cell = run_cell(&cfg, data, &split.train, &split.valid, &split.test);
        rows.push(match cell {
            Ok((a, g, ll)) => SweepRow {
                value,
                k: cfg.k,
                n: cfg.n,
                auc: Some(a),
                gauc: g,
                logloss: Some(ll),
                error: None,
            },
            Err(e) => SweepRow {
                value,
                k: cfg.k,
                n: cfg.n,
                auc: None,
                gauc: None,
                logloss: None,
                error: Some(e.to_string()),
            },
        });
    }
    Ok(rows)
}

fn run_cell(
    cfg: &TrainConfig,
    data: &SampleSet,
    train_samples: &[Sample],
    valid_samples: &[Sample],
    test_samples: &[Sample],
) -> Result<(f64, Option<f64>, f64)> {
    let mut model = CdnetModel::<f32>::new(cfg.clone(), data.meta.clone())?;
    let (outcome, _) = train(&mut model, train_samples, valid_samples)?;
    restore_params(&mut model, &outcome.best_params);
    let (_, a, g, ll) = evaluate(&model, test_samples)?;
    Ok((a, g, ll))
}
