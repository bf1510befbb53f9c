use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{argmax, make_lm_batches, LanguageModel, Mode};
use crate::error::{Error, Result};
use crate::numcore::{clip_gradients, log_softmax_row, stream, Optimizer, OptimizerKind, ParamSet, RngState, Scalar};

/// Optimizer settings shared by language-model and classifier training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub optimizer: OptimizerKind,
    /// SGD momentum, or Adam's first-moment decay.
    pub momentum: f64,
    /// Learning rate of the top layer group.
    pub lr_last: f64,
    /// Learning rate of every other group (before `lr_decay`).
    pub lr_other: f64,
    /// Each group below the second is divided by this once more.
    pub lr_decay: f64,
    pub clip_norm: Option<f64>,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            optimizer: OptimizerKind::Adam,
            momentum: 0.8,
            lr_last: 0.01,
            lr_other: 0.001,
            lr_decay: 1.0,
            clip_norm: Some(0.25),
        }
    }
}

impl OptimConfig {
    pub fn lr_for_depth(&self, depth: usize) -> f64 {
        match depth {
            0 => self.lr_last,
            d => self.lr_other / self.lr_decay.powi(d as i32 - 1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lrs_ok = self.lr_last > 0.0 && self.lr_other > 0.0 && self.lr_decay > 0.0;
        if !lrs_ok || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(
                "learning rates and decay must be positive and momentum in [0, 1)".into(),
            ));
        }
        if matches!(self.clip_norm, Some(c) if c <= 0.0) {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LmTrainConfig {
    pub epochs: usize,
    /// Leading epochs in which only the decoder (and tied embedding) train.
    pub frozen_epochs: usize,
    pub optim: OptimConfig,
    /// Visit BPTT blocks in a shuffled order. Breaks hidden-state
    /// continuity; off for normal training.
    pub shuffle_blocks: bool,
}

impl Default for LmTrainConfig {
    fn default() -> Self {
        LmTrainConfig {
            epochs: 3,
            frozen_epochs: 1,
            optim: OptimConfig::default(),
            shuffle_blocks: false,
        }
    }
}

impl LmTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        self.optim.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmEval {
    /// Mean next-token cross-entropy.
    pub loss: f64,
    /// Top-1 next-token accuracy.
    pub accuracy: f64,
    pub tokens: usize,
}

impl LmEval {
    pub fn perplexity(&self) -> f64 {
        self.loss.exp()
    }
}

/// Two-stage training: `frozen_epochs` with only the decoder trainable,
/// then the full model. Hidden state is carried across consecutive blocks
/// (detached) and reset at each epoch.
pub fn train_lm<T: Scalar>(
    model: &mut LanguageModel<T>,
    train: &[usize],
    valid: &[usize],
    cfg: &LmTrainConfig,
) -> Result<Vec<EpochLoss>> {
    cfg.validate()?;
    if train.is_empty() || valid.is_empty() {
        return Err(Error::Data("language model streams must not be empty".into()));
    }
    let batches = make_lm_batches(train, model.config.batch_size, model.config.bptt_len)?;
    let lrs: Vec<f64> = model
        .param_depths()
        .into_iter()
        .map(|d| cfg.optim.lr_for_depth(d))
        .collect();
    let mut opt = Optimizer::new(cfg.optim.optimizer, cfg.optim.momentum);
    let mut drop_rng = RngState::new(model.config.seed, stream::DROPOUT);
    let mut shuffle_rng = RngState::new(model.config.seed, stream::SHUFFLE);

    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        if epoch < cfg.frozen_epochs {
            model.freeze_to_decoder();
        } else {
            model.unfreeze();
        }
        let mut order: Vec<usize> = (0..batches.len()).collect();
        if cfg.shuffle_blocks {
            order.shuffle(shuffle_rng.rng());
        }
        let mut state = None;
        let (mut loss_sum, mut tokens) = (0.0, 0usize);
        for &k in &order {
            let batch = &batches[k];
            model.zero_grads();
            let (loss, next) = model.loss_and_grad(
                &batch.inputs,
                &batch.targets,
                state.as_deref(),
                Mode::Train,
                &mut drop_rng,
            )?;
            let loss = loss.to_f64_lossy();
            if !loss.is_finite() {
                return Err(Error::Data(format!("training loss diverged in epoch {}", epoch + 1)));
            }
            state = Some(next);
            let mut params = model.params_mut();
            if let Some(max) = cfg.optim.clip_norm {
                clip_gradients(&mut params, max);
            }
            opt.step(&mut params, &lrs);
            let n = batch.inputs.len();
            loss_sum += loss * n as f64;
            tokens += n;
        }
        let valid_eval = evaluate_stream(model, valid, 1)?;
        log::info!(
            "lm epoch {}: train loss {:.4}, valid loss {:.4}, valid ppl {:.2}",
            epoch + 1,
            loss_sum / tokens as f64,
            valid_eval.loss,
            valid_eval.perplexity()
        );
        history.push(EpochLoss {
            epoch: epoch + 1,
            train_loss: loss_sum / tokens as f64,
            valid_loss: valid_eval.loss,
        });
    }
    model.unfreeze();
    Ok(history)
}

/// Evaluation-mode next-token loss and accuracy over a stream, read as
/// `batch_size` parallel continuous streams.
pub fn evaluate_stream<T: Scalar>(model: &LanguageModel<T>, stream: &[usize], batch_size: usize) -> Result<LmEval> {
    let batch_size = batch_size.min(stream.len() / 2).max(1);
    let batches = make_lm_batches(stream, batch_size, model.config.bptt_len)?;
    let mut rng = RngState::new(0, stream::DROPOUT);
    let mut state = None;
    let (mut nll, mut correct, mut tokens) = (0.0f64, 0usize, 0usize);
    for batch in &batches {
        let tm: Array2<usize> = batch.inputs.t().to_owned();
        let targets: Vec<usize> = batch.targets.t().iter().copied().collect();
        let (logits, out) = model.forward_time_major(&tm, state.as_deref(), Mode::Eval, &mut rng)?;
        for (row, &t) in logits.outer_iter().zip(&targets) {
            nll -= log_softmax_row(row)[t].to_f64_lossy();
            correct += usize::from(argmax(row) == t);
        }
        tokens += targets.len();
        state = Some(out.state);
    }
    Ok(LmEval {
        loss: nll / tokens as f64,
        accuracy: correct as f64 / tokens as f64,
        tokens,
    })
}

/// `exp` of the mean next-token cross-entropy over `stream` read as one
/// continuous sequence, in evaluation mode.
pub fn perplexity<T: Scalar>(model: &LanguageModel<T>, stream: &[usize]) -> Result<f64> {
    Ok(evaluate_stream(model, stream, 1)?.perplexity())
}
