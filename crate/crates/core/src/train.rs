//! Optimiser, learning-rate schedule, training and evaluation loops.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use mcd_tensor::{Element, Mode, Rng, Tape, Tensor};

use crate::config::{Config, TrainConfig};
use crate::data::{augment, batch_tensors, AugmentationConfig, BiTemporalSample};
use crate::error::{Error, Result};
use crate::losses::composite_loss;
use crate::metrics::{ConfusionMatrix, Report};
use crate::model::Model;
use crate::params::{Forward, Group, ParamStore};

/// Cosine annealing with warm restarts: cycle `i` lasts `t0·t_mult^i` epochs
/// and within it `lr = η_min + ½(base − η_min)(1 + cos(π·t/T_i))`.
pub fn lr_at(epoch: f64, cfg: &TrainConfig) -> f64 {
    let mut t = epoch.max(0.0);
    let mut period = cfg.t0;
    while t >= period {
        t -= period;
        period *= cfg.t_mult;
    }
    cfg.eta_min + 0.5 * (cfg.base_lr - cfg.eta_min) * (1.0 + (std::f64::consts::PI * t / period).cos())
}

pub fn group_multiplier(group: Group, cfg: &TrainConfig) -> f64 {
    let m = &cfg.lr_mult;
    match group {
        Group::Frozen => m.frozen,
        Group::Adapter | Group::Prompt => m.adapter,
        Group::Lora => m.lora,
        Group::Mscad => m.mscad,
        Group::Decoder => m.decoder,
    }
}

/// First and second moments of one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments<T> {
    pub m: Tensor<T>,
    pub v: Tensor<T>,
}

/// AdamW with decoupled weight decay and bias-corrected moments.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamW<T> {
    pub step: u64,
    pub moments: BTreeMap<String, Moments<T>>,
}

impl<T: Element> AdamW<T> {
    pub fn new() -> Self {
        Self {
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    /// One update of every trainable parameter with a nonzero group rate.
    /// `lr` is the scheduled base rate; each group scales it by its multiplier.
    pub fn step(
        &mut self,
        store: &mut ParamStore<T>,
        grads: &HashMap<String, Tensor<T>>,
        lr: f64,
        cfg: &TrainConfig,
    ) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let names: Vec<(String, Group)> = store.params().iter().map(|p| (p.name.clone(), p.group)).collect();
        for (name, group) in names {
            let rate = lr * group_multiplier(group, cfg);
            if !group.trainable() || rate == 0.0 {
                continue;
            }
            let g = grads.get(&name).ok_or_else(|| Error::MissingGradient(name.clone()))?;
            let p = store.get_mut(&name).expect("listed above");
            if g.shape() != p.value.shape() {
                return Err(Error::Invalid(format!("gradient of `{name}` has the wrong shape")));
            }
            let mom = self.moments.entry(name).or_insert_with(|| Moments {
                m: Tensor::zeros(g.shape()),
                v: Tensor::zeros(g.shape()),
            });
            let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
            let (one, eps) = (T::one(), T::of(cfg.adam_eps));
            let decay = T::of(1.0 - rate * cfg.weight_decay);
            let (rate, bc1, bc2) = (T::of(rate), T::of(bc1), T::of(bc2));
            let m = mom.m.data_mut();
            let v = mom.v.data_mut();
            for (i, w) in p.value.data_mut().iter_mut().enumerate() {
                let gi = g.data()[i];
                m[i] = b1 * m[i] + (one - b1) * gi;
                v[i] = b2 * v[i] + (one - b2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *w = *w * decay - rate * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_miou: f64,
    pub lr: f64,
    /// Optimiser steps completed by the end of the epoch.
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

impl History {
    /// CSV with header `epoch,train_loss,val_miou,lr`; floats in shortest round-trip form.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_miou,lr\n");
        for r in &self.records {
            let _ = writeln!(s, "{},{:?},{:?},{:?}", r.epoch, r.train_loss, r.val_miou, r.lr);
        }
        s
    }

    pub fn best(&self) -> Option<&EpochRecord> {
        self.records
            .iter()
            .fold(None, |best: Option<&EpochRecord>, r| match best {
                Some(b) if b.val_miou >= r.val_miou => Some(b),
                _ => Some(r),
            })
    }
}

/// Parameters and optimiser state of the best validation epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot<T> {
    pub epoch: usize,
    pub val_miou: f64,
    pub store: ParamStore<T>,
    pub optimizer: AdamW<T>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub history: History,
    pub best: Option<Snapshot<T>>,
    pub optimizer: AdamW<T>,
    pub steps: usize,
}

/// Trains `model` in place. Validation uses `val`, or the training split when
/// `val` is empty; `on_epoch` sees each record as it is produced.
pub fn train<T: Element>(
    model: &mut Model<T>,
    train_set: &[BiTemporalSample],
    val: &[BiTemporalSample],
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome<T>> {
    let cfg: Config = model.config.clone();
    let tc = &cfg.train;
    let mut history = History::default();
    let mut optimizer = AdamW::new();
    let mut best: Option<Snapshot<T>> = None;
    let mut steps = 0usize;
    if tc.epochs == 0 {
        return Ok(TrainOutcome {
            history,
            best,
            optimizer,
            steps,
        });
    }
    if train_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let val = if val.is_empty() { train_set } else { val };
    let aug = AugmentationConfig {
        flip: tc.augment_flip,
        rotate: tc.augment_rotate,
    };
    let mut master = Rng::new(tc.seed);
    let mut shuffle_rng = master.fork(1);
    let mut aug_rng = master.fork(2);
    let mut dropout_rng = master.fork(3);

    'epochs: for epoch in 0..tc.epochs {
        let lr = lr_at(epoch as f64, tc);
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        shuffle_rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(tc.batch).enumerate() {
            let samples: Vec<BiTemporalSample> = chunk.iter().map(|&i| augment(&train_set[i], aug, &mut aug_rng)).collect();
            let refs: Vec<&BiTemporalSample> = samples.iter().collect();
            let (t1, t2, target) = batch_tensors::<T>(&refs)?;

            let tape = Tape::new();
            let fx = Forward::new(&tape, &model.store, Mode::Train, true, dropout_rng.fork(steps as u64));
            let logits = model.forward(&fx, &tape.constant(t1), &tape.constant(t2))?;
            let (loss, _) = composite_loss(&logits, &target, &cfg.loss)?;
            let value = loss.item().expect("scalar loss").as_f64();
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    ids: samples.iter().map(|s| s.id.clone()).collect(),
                    loss: value,
                });
            }
            let mut grads = tape.backward(loss)?;
            let leaves = fx.leaves();
            let updates = fx.take_bn_updates();
            drop(fx);
            let grads: HashMap<String, Tensor<T>> = leaves
                .into_iter()
                .filter_map(|(name, var)| grads.take(var).map(|g| (name, g)))
                .collect();
            optimizer.step(&mut model.store, &grads, lr, tc)?;
            model.apply_bn_updates(updates)?;

            loss_sum += value;
            batches += 1;
            steps += 1;
            if tc.max_steps > 0 && steps >= tc.max_steps {
                finish_epoch(model, val, epoch, loss_sum, batches, lr, steps, &mut history, &mut best, &optimizer, on_epoch)?;
                break 'epochs;
            }
        }
        finish_epoch(model, val, epoch, loss_sum, batches, lr, steps, &mut history, &mut best, &optimizer, on_epoch)?;
    }
    Ok(TrainOutcome {
        history,
        best,
        optimizer,
        steps,
    })
}

#[allow(clippy::too_many_arguments)]
fn finish_epoch<T: Element>(
    model: &Model<T>,
    val: &[BiTemporalSample],
    epoch: usize,
    loss_sum: f64,
    batches: usize,
    lr: f64,
    steps: usize,
    history: &mut History,
    best: &mut Option<Snapshot<T>>,
    optimizer: &AdamW<T>,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<()> {
    let (_, report) = evaluate(model, val, model.config.train.batch)?;
    let record = EpochRecord {
        epoch,
        train_loss: loss_sum / batches.max(1) as f64,
        val_miou: report.changed.miou,
        lr,
        steps,
    };
    if best.as_ref().is_none_or(|b| record.val_miou > b.val_miou) {
        *best = Some(Snapshot {
            epoch,
            val_miou: record.val_miou,
            store: model.store.clone(),
            optimizer: optimizer.clone(),
        });
    }
    on_epoch(&record);
    history.records.push(record);
    Ok(())
}

/// Per-pixel argmax over the class axis of `[N, C, H, W]` logits.
pub fn argmax_classes<T: Element>(logits: &Tensor<T>) -> Vec<u8> {
    let s = logits.shape();
    let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
    let d = logits.data();
    let mut out = Vec::with_capacity(n * hw);
    for b in 0..n {
        for p in 0..hw {
            let mut best = 0;
            for k in 1..c {
                if d[(b * c + k) * hw + p] > d[(b * c + best) * hw + p] {
                    best = k;
                }
            }
            out.push(best as u8);
        }
    }
    out
}

/// Predicted label maps, one per sample, in eval mode.
pub fn predict<T: Element>(model: &Model<T>, samples: &[BiTemporalSample], batch: usize) -> Result<Vec<Vec<u8>>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch.max(1)) {
        let refs: Vec<&BiTemporalSample> = chunk.iter().collect();
        let (t1, t2, _) = batch_tensors::<T>(&refs)?;
        let tape = Tape::new();
        let fx = Forward::eval(&tape, &model.store);
        let logits = model.forward(&fx, &tape.constant(t1), &tape.constant(t2))?;
        let classes = argmax_classes(&logits.value());
        let px = chunk[0].width * chunk[0].height;
        out.extend(classes.chunks(px).map(<[u8]>::to_vec));
    }
    Ok(out)
}

/// Confusion matrix and report of `model` on `samples`.
pub fn evaluate<T: Element>(
    model: &Model<T>,
    samples: &[BiTemporalSample],
    batch: usize,
) -> Result<(ConfusionMatrix, Report)> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut cm = ConfusionMatrix::new(model.classes());
    for (s, pred) in samples.iter().zip(predict(model, samples, batch)?) {
        cm.update(&pred, &s.label)?;
    }
    let report = Report::new(&cm)?;
    Ok((cm, report))
}

/// Fails unless the model's class count matches a dataset with `k` change classes.
pub fn check_classes<T: Element>(model: &Model<T>, k: usize) -> Result<()> {
    if model.classes() != k + 1 {
        return Err(Error::ClassMismatch {
            model: model.classes(),
            data: k + 1,
        });
    }
    Ok(())
}
