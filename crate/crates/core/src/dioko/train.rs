use std::path::Path;
use std::time::Instant;

use log::info;
use ndarray::{s, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{training_loss, WindowBatch};
use super::{DIOKOModel, Dataset, Split, WindowRef};
use crate::error::{Error, Result};
use crate::nn::{adam_step, AdamConfig, AdamState, Grads, Tape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Shuffling seed.
    pub seed: u64,
    /// Minibatch shards evaluated in parallel; gradients are summed.
    pub threads: usize,
    /// Per-epoch multiplicative learning-rate factor (1 keeps it constant).
    pub lr_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 400,
            batch_size: 128,
            adam: AdamConfig::default(),
            seed: 0,
            threads: 1,
            lr_decay: 1.0,
        }
    }
}

/// Per-epoch mean per-window losses; epoch 0 is the untrained model.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LossCurve {
    pub epoch: Vec<usize>,
    pub train: Vec<f64>,
    pub val: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub curve: LossCurve,
    pub best_epoch: usize,
    pub best_val: f64,
    pub initial_val: f64,
    pub final_val: f64,
    pub seconds: f64,
}

fn batch_grads(
    model: &DIOKOModel,
    ds: &Dataset,
    windows: &[WindowRef],
    l2_weight: f64,
) -> Result<(f64, Grads)> {
    let batch = WindowBatch::gather(ds, windows, ds.horizon)?;
    let mut tape = Tape::new();
    let loss = training_loss(model, &batch, &mut tape, l2_weight)?;
    let data = tape.scalar(loss.data);
    let grads = tape.backward(loss.total, &model.params)?;
    Ok((data, grads))
}

fn sharded_grads(
    model: &DIOKOModel,
    ds: &Dataset,
    windows: &[WindowRef],
    l2_weight: f64,
    threads: usize,
) -> Result<(f64, Grads)> {
    if threads <= 1 || windows.len() < 2 * threads {
        return batch_grads(model, ds, windows, l2_weight);
    }
    let chunk = windows.len().div_ceil(threads);
    let results: Vec<Result<(f64, Grads)>> = std::thread::scope(|scope| {
        let handles: Vec<_> = windows
            .chunks(chunk)
            .enumerate()
            .map(|(i, w)| {
                // the penalty is counted once per batch
                let weight = if i == 0 { l2_weight } else { 0.0 };
                scope.spawn(move || batch_grads(model, ds, w, weight))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("gradient worker panicked"))
            .collect()
    });
    let mut data = 0.0;
    let mut total: Option<Grads> = None;
    for r in results {
        let (d, g) = r?;
        data += d;
        match &mut total {
            Some(t) => t.add_assign(&g),
            None => total = Some(g),
        }
    }
    Ok((data, total.expect("at least one shard")))
}

/// Mean per-window data loss (no penalty) over `split` of a standardized
/// dataset.
pub fn validation_loss(model: &DIOKOModel, std_ds: &Dataset, split: Split) -> Result<f64> {
    let windows = std_ds.windows(split);
    if windows.is_empty() {
        return Err(Error::EmptySplit(split.as_str().into()));
    }
    let mut sum = 0.0;
    for chunk in windows.chunks(256) {
        let batch = WindowBatch::gather(std_ds, chunk, std_ds.horizon)?;
        let mut tape = Tape::new();
        let loss = training_loss(model, &batch, &mut tape, 0.0)?;
        sum += tape.scalar(loss.data);
    }
    Ok(sum / windows.len() as f64)
}

/// Minibatch Adam on the training windows of `dataset` (raw units; the
/// model's scaling is applied here). Each epoch traverses every training
/// window once in shuffled order. The parameters with the lowest validation
/// loss are kept.
pub fn train(model: &mut DIOKOModel, dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainReport> {
    let start = Instant::now();
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be >= 1".into()));
    }
    if dataset.horizon != model.config.horizon {
        return Err(Error::Config(format!(
            "dataset windows span {} steps, model trains on {}",
            dataset.horizon, model.config.horizon
        )));
    }
    let ds = dataset.standardized(&model.scaling);
    let mut train_windows = ds.windows(Split::Train);
    if train_windows.is_empty() {
        return Err(Error::EmptySplit("train".into()));
    }
    let n_train = train_windows.len() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(&model.params, cfg.adam);

    let initial_val = validation_loss(model, &ds, Split::Val)?;
    let initial_train = validation_loss(model, &ds, Split::Train)?;
    let mut curve = LossCurve {
        epoch: vec![0],
        train: vec![initial_train],
        val: vec![initial_val],
    };
    let mut best = (0, initial_val, model.params.clone());
    info!("epoch 0: train {initial_train:.4e} val {initial_val:.4e}");

    for epoch in 1..=cfg.epochs {
        adam.config.lr = cfg.adam.lr * cfg.lr_decay.powi(epoch as i32 - 1);
        train_windows.shuffle(&mut rng);
        let mut epoch_sum = 0.0;
        for (bi, batch) in train_windows.chunks(cfg.batch_size).enumerate() {
            let l2_weight = batch.len() as f64 / n_train;
            let (data, grads) = sharded_grads(model, &ds, batch, l2_weight, cfg.threads)?;
            if !data.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: bi });
            }
            epoch_sum += data;
            adam_step(&mut adam, &mut model.params, &grads)?;
        }
        let train_loss = epoch_sum / n_train;
        let val = validation_loss(model, &ds, Split::Val)?;
        if !val.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch: 0 });
        }
        curve.epoch.push(epoch);
        curve.train.push(train_loss);
        curve.val.push(val);
        if val < best.1 {
            best = (epoch, val, model.params.clone());
        }
        info!("epoch {epoch}: train {train_loss:.4e} val {val:.4e}");
    }
    let final_val = *curve.val.last().expect("non-empty");
    model.params = best.2;
    Ok(TrainReport {
        curve,
        best_epoch: best.0,
        best_val: best.1,
        initial_val,
        final_val,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Mean over the windows of `split` of the summed squared standardized
/// cost-prediction error over the `horizon` predicted instants after each
/// window start, with the recorded inputs applied.
pub fn evaluate_prediction(
    model: &DIOKOModel,
    dataset: &Dataset,
    split: Split,
    horizon: usize,
) -> Result<f64> {
    if horizon > dataset.horizon {
        return Err(Error::Config(format!(
            "evaluation horizon {horizon} exceeds window length {}",
            dataset.horizon
        )));
    }
    let ds = dataset.standardized(&model.scaling);
    let windows = ds.windows(split);
    if windows.is_empty() {
        return Err(Error::EmptySplit(split.as_str().into()));
    }
    let q = model.q_diag();
    let p = model.p_row();
    let mut sum = 0.0;
    for chunk in windows.chunks(512) {
        let batch = WindowBatch::gather(&ds, chunk, horizon)?;
        let b = batch.size;
        let mut psi: Array2<f64> =
            model.encode_standardized(&batch.z.slice(s![..b, ..]).to_owned())?;
        for j in 1..=horizon {
            psi = psi.dot(&model.a().t()) + batch.u[j - 1].dot(&model.b().t());
            let quad = (psi.mapv(|v| v * v) * &q).sum_axis(Axis(1));
            let c_hat = quad + psi.dot(&p) + model.bias();
            sum += (&batch.c[j].column(0) - &c_hat).mapv(|e| e * e).sum();
        }
    }
    Ok(sum / windows.len() as f64)
}

pub fn write_loss_curve(path: &Path, curve: &LossCurve) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "train", "val"])?;
    for i in 0..curve.epoch.len() {
        w.write_record([
            curve.epoch[i].to_string(),
            format!("{:e}", curve.train[i]),
            format!("{:e}", curve.val[i]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_loss_curve(path: &Path) -> Result<LossCurve> {
    let mut r = csv::Reader::from_path(path)?;
    let mut curve = LossCurve::default();
    for rec in r.deserialize() {
        let (e, t, v): (usize, f64, f64) = rec?;
        curve.epoch.push(e);
        curve.train.push(t);
        curve.val.push(v);
    }
    Ok(curve)
}
