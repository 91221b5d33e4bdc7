//! The Adam training loop: seeded shuffling, per-sample dropout
//! streams, a best-validation checkpoint, and early stopping.

use std::time::Instant;

use crate::numerics::{adam_step, AdamState, SeededRng};
use crate::seqmodels::AnyModel;

use super::bptt::{batch_grads, mean_loss_impl, TrainableSeq};
use super::{Dataset, EpochStats, LossReport, Sample, TrainConfig, TrainError};

/// Trains `model` in place and returns the per-epoch record. The
/// returned weights are the best-validation checkpoint, which may be
/// the initial weights if no epoch improved on them. Training stops
/// early once `early_stop_patience` consecutive epochs fail to improve
/// validation loss.
pub fn train(
    model: &mut AnyModel,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<LossReport, TrainError> {
    cfg.validate()?;
    match model {
        AnyModel::Seq2Pwd(m) => train_impl(m.as_mut(), data, cfg),
        AnyModel::Seq2Dgt(m) => train_impl(m.as_mut(), data, cfg),
    }
}

fn train_impl<M: TrainableSeq>(
    model: &mut M,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<LossReport, TrainError> {
    if data.train.is_empty() {
        return Err(TrainError::Empty("training set"));
    }
    if data.val.is_empty() {
        return Err(TrainError::Empty("validation set"));
    }
    for sample in data.train.iter().chain(&data.val) {
        model.check_target(&sample.target)?;
    }

    let mut rng = SeededRng::new(cfg.seed);
    let mut adam = AdamState::new(cfg.lr);
    adam.beta1 = cfg.beta1;
    adam.beta2 = cfg.beta2;
    adam.epsilon = cfg.epsilon;

    let mut best = model.clone();
    let mut best_val = mean_loss_impl(model, &data.val)?.max(0.0);
    let mut best_epoch = 0;
    let mut stale = 0;
    let mut epochs = Vec::new();

    let n = data.train.len();
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &data.train[i]).collect();
            let seeds = (cfg.dropout_p > 0.0)
                .then(|| batch.iter().map(|_| rng.next_u64()).collect::<Vec<u64>>());
            let dropout = seeds.as_ref().map(|s| (cfg.dropout_p, &s[..]));
            let (grads, mean) = batch_grads(model, &batch, cfg.grad_clip_norm, dropout)?;
            loss_sum += mean * batch.len() as f64;
            adam_step(&mut model.params_mut(), &M::grad_tensors(&grads), &mut adam)?;
        }
        let train_loss = (loss_sum / n as f64).max(0.0);
        let val_loss = mean_loss_impl(model, &data.val)?.max(0.0);
        epochs.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
            seconds: started.elapsed().as_secs_f64(),
        });
        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = epoch;
            best = model.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.early_stop_patience {
                break;
            }
        }
    }
    *model = best;
    Ok(LossReport {
        epochs,
        best_epoch,
        best_val,
    })
}
