use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{ClassifierModel, LabeledDoc};
use crate::error::{Error, Result};
use crate::langmodel::{argmax, Mode};
use crate::numcore::{clip_gradients, log_softmax_row, softmax_row, stream, Optimizer, ParamSet, RngState, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClfEpoch {
    pub epoch: usize,
    /// Layer groups trainable during this epoch.
    pub groups: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub valid_loss: f64,
    pub valid_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClfEval {
    pub loss: f64,
    pub accuracy: f64,
    /// `[n, K]` class probabilities.
    pub probs: Array2<f64>,
    pub preds: Vec<usize>,
}

fn check_labels(docs: &[LabeledDoc], k: usize) -> Result<()> {
    match docs.iter().find(|d| d.label >= k) {
        Some(d) => Err(Error::Data(format!("label {} outside {k} classes", d.label))),
        None => Ok(()),
    }
}

/// Gradual-unfreezing training. Epoch `e` trains the groups given by the
/// unfreeze schedule, with `lr_last` on the head and `lr_other` (decayed
/// per depth) below it. Examples are reshuffled every epoch.
pub fn train_classifier<T: Scalar>(
    model: &mut ClassifierModel<T>,
    train: &[LabeledDoc],
    valid: &[LabeledDoc],
) -> Result<Vec<ClfEpoch>> {
    let cfg = model.config.clone();
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Data("classifier training set is empty".into()));
    }
    check_labels(train, cfg.num_classes)?;
    check_labels(valid, cfg.num_classes)?;
    let lrs: Vec<f64> = model
        .param_groups()
        .into_iter()
        .map(|g| cfg.optim.lr_for_depth(g))
        .collect();
    let mut opt = Optimizer::new(cfg.optim.optimizer, cfg.optim.momentum);
    let mut drop_rng = RngState::new(cfg.seed, stream::DROPOUT);
    let mut shuffle_rng = RngState::new(cfg.seed, stream::SHUFFLE);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let groups = cfg.groups_trainable(epoch, model.num_groups());
        model.set_trainable_groups(groups);
        order.shuffle(shuffle_rng.rng());
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let docs: Vec<&[usize]> = chunk.iter().map(|&i| train[i].ids.as_slice()).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| train[i].label).collect();
            model.zero_grads();
            let (loss, ok) = model.loss_and_grad(&docs, &labels, Mode::Train, &mut drop_rng)?;
            let loss = loss.to_f64_lossy();
            if !loss.is_finite() {
                return Err(Error::Data(format!("classifier loss diverged in epoch {epoch}")));
            }
            let mut params = model.params_mut();
            if let Some(max) = cfg.optim.clip_norm {
                clip_gradients(&mut params, max);
            }
            opt.step(&mut params, &lrs);
            loss_sum += loss * chunk.len() as f64;
            correct += ok;
        }
        let (valid_loss, valid_accuracy) = if valid.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let e = evaluate(model, valid)?;
            (e.loss, e.accuracy)
        };
        let record = ClfEpoch {
            epoch,
            groups,
            train_loss: loss_sum / train.len() as f64,
            train_accuracy: correct as f64 / train.len() as f64,
            valid_loss,
            valid_accuracy,
        };
        log::info!(
            "classifier epoch {epoch} ({groups} groups): train loss {:.4} acc {:.3}, valid loss {:.4} acc {:.3}",
            record.train_loss,
            record.train_accuracy,
            valid_loss,
            valid_accuracy
        );
        history.push(record);
    }
    model.set_trainable_groups(model.num_groups());
    Ok(history)
}

/// Evaluation-mode logits `[n, K]`. Batches are spread over worker
/// threads; results do not depend on the thread count.
fn eval_logits<T: Scalar>(model: &ClassifierModel<T>, docs: &[&[usize]]) -> Result<Array2<f64>> {
    let k = model.num_classes();
    let chunks: Vec<&[&[usize]]> = docs.chunks(model.config.batch_size).collect();
    if chunks.is_empty() {
        return Ok(Array2::zeros((0, k)));
    }
    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(chunks.len());
    let per_worker = chunks.len().div_ceil(workers);
    let parts: Vec<Result<Vec<Array2<f64>>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = chunks
            .chunks(per_worker)
            .map(|group| {
                scope.spawn(move || {
                    let mut rng = RngState::new(0, stream::DROPOUT);
                    group
                        .iter()
                        .map(|batch| Ok(model.logits(batch, Mode::Eval, &mut rng)?.mapv(|v| v.to_f64_lossy())))
                        .collect()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("prediction worker panicked"))
            .collect()
    });
    let mut blocks = Vec::with_capacity(chunks.len());
    for part in parts {
        blocks.extend(part?);
    }
    let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
    Ok(ndarray::concatenate(Axis(0), &views).expect("matching class counts"))
}

fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut probs = logits.clone();
    for mut row in probs.outer_iter_mut() {
        let p = softmax_row(row.view());
        row.assign(&p);
    }
    probs
}

/// Evaluation-mode class probabilities `[n, K]`.
pub fn predict_proba<T: Scalar>(model: &ClassifierModel<T>, docs: &[&[usize]]) -> Result<Array2<f64>> {
    Ok(softmax_rows(&eval_logits(model, docs)?))
}

/// Most probable class (smallest index on ties) and the probabilities.
pub fn predict<T: Scalar>(model: &ClassifierModel<T>, doc: &[usize]) -> Result<(usize, Array1<f64>)> {
    let probs = predict_proba(model, &[doc])?.row(0).to_owned();
    Ok((argmax(probs.view()), probs))
}

/// Mean cross-entropy, accuracy and predictions over labeled documents.
pub fn evaluate<T: Scalar>(model: &ClassifierModel<T>, docs: &[LabeledDoc]) -> Result<ClfEval> {
    check_labels(docs, model.num_classes())?;
    let refs: Vec<&[usize]> = docs.iter().map(|d| d.ids.as_slice()).collect();
    let logits = eval_logits(model, &refs)?;
    let probs = softmax_rows(&logits);
    let preds: Vec<usize> = probs.outer_iter().map(argmax).collect();
    let n = docs.len().max(1) as f64;
    let loss: f64 = logits
        .outer_iter()
        .zip(docs)
        .map(|(row, d)| -log_softmax_row(row)[d.label])
        .sum();
    let correct = preds.iter().zip(docs).filter(|(p, d)| **p == d.label).count();
    Ok(ClfEval {
        loss: loss / n,
        accuracy: correct as f64 / n,
        probs,
        preds,
    })
}
