//! Document classifier on top of a pretrained [`Encoder`].
//!
//! Each document runs through the encoder from a zero state, its hidden
//! states are concat-pooled and fed to a two-layer head
//! (`linear → ReLU → dropout → linear → softmax`). Training unfreezes
//! layer groups from the top down, one step of the schedule at a time.

mod pool;
mod snapshot;
mod train;

use ndarray::{Array2, Array3};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use pool::concat_pool;
pub use snapshot::{load_classifier, save_classifier, CLASSIFIER_KIND};
pub use train::{evaluate, predict, predict_proba, train_classifier, ClfEpoch, ClfEval};

use crate::error::{Error, Result};
use crate::langmodel::{Encoder, EncoderCache, LmConfig, Mode, OptimConfig};
use crate::numcore::{
    dropout_mask, linear_bwd, relu_bwd, relu_fwd, softmax_row, softmax_xent_batch, stream, DropoutSpec, ParamSet,
    Parameter, RngState, Scalar,
};
use crate::textprep::Vocabulary;

/// A numericalized document with its class index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledDoc {
    pub ids: Vec<usize>,
    pub label: usize,
}

/// From `epoch` (1-based) on, layer groups `0..=group` are trainable.
/// Group 0 is the head, group `l` the `l`-th LSTM layer from the top and
/// group `num_layers + 1` the embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnfreezeStep {
    pub epoch: usize,
    pub group: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    /// Filled from the label map when a model is built.
    pub num_classes: usize,
    pub head_hidden: usize,
    pub dropout: DropoutSpec,
    /// Documents longer than this keep only their last tokens.
    pub max_doc_len: usize,
    pub batch_size: usize,
    pub epochs: usize,
    /// `None` unfreezes one more group per epoch.
    pub unfreeze_schedule: Option<Vec<UnfreezeStep>>,
    pub optim: OptimConfig,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            num_classes: 0,
            head_hidden: 50,
            dropout: DropoutSpec {
                encoder: 0.02,
                input: 0.1,
                weight: 0.1,
                hidden: 0.1,
                output: 0.1,
                classifier: 0.5,
            },
            max_doc_len: 1000,
            batch_size: 16,
            epochs: 10,
            unfreeze_schedule: None,
            optim: OptimConfig::default(),
            seed: 42,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config(format!(
                "num_classes must be >= 2, got {}",
                self.num_classes
            )));
        }
        if self.head_hidden == 0 || self.max_doc_len == 0 || self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config(
                "head_hidden, max_doc_len, batch_size and epochs must be >= 1".into(),
            ));
        }
        if let Some(steps) = &self.unfreeze_schedule {
            if steps.iter().any(|s| s.epoch == 0) {
                return Err(Error::Config("unfreeze epochs are 1-based".into()));
            }
        }
        self.dropout.validate()?;
        self.optim.validate()
    }

    /// Number of trainable groups during `epoch` (1-based).
    pub fn groups_trainable(&self, epoch: usize, num_groups: usize) -> usize {
        let top = match &self.unfreeze_schedule {
            Some(steps) => steps
                .iter()
                .filter(|s| s.epoch <= epoch)
                .map(|s| s.group)
                .max()
                .unwrap_or(0),
            None => epoch - 1,
        };
        (top + 1).min(num_groups)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel<T> {
    pub config: ClassifierConfig,
    /// Architecture of the encoder.
    pub lm_config: LmConfig,
    pub encoder: Encoder<T>,
    pub w1: Parameter<T>,
    pub b1: Parameter<T>,
    pub w2: Parameter<T>,
    pub b2: Parameter<T>,
}

pub(crate) struct ForwardCache<T> {
    enc: EncoderCache<T>,
    steps: usize,
    lens: Vec<usize>,
    arg: Array2<usize>,
    feat: Array2<T>,
    z1: Array2<T>,
    hidden: Array2<T>,
    drop: Option<Array2<T>>,
}

/// Left-padded time-major ids `[T, B]`, the matching 0/1 step mask and the
/// per-document lengths after truncation. Empty documents become `[UNK]`.
pub(crate) fn pad_batch<T: Scalar>(docs: &[&[usize]], max_len: usize) -> (Array2<usize>, Array2<T>, Vec<usize>) {
    let tails: Vec<&[usize]> = docs
        .iter()
        .map(|d| if d.len() > max_len { &d[d.len() - max_len..] } else { d })
        .collect();
    let lens: Vec<usize> = tails.iter().map(|d| d.len().max(1)).collect();
    let steps = lens.iter().copied().max().unwrap_or(1);
    let mut ids = Array2::from_elem((steps, docs.len()), Vocabulary::PAD);
    let mut mask = Array2::zeros((steps, docs.len()));
    for (b, tail) in tails.iter().enumerate() {
        let start = steps - lens[b];
        if tail.is_empty() {
            ids[(start, b)] = Vocabulary::UNK;
        }
        for (k, &id) in tail.iter().enumerate() {
            ids[(start + k, b)] = id;
        }
        for t in start..steps {
            mask[(t, b)] = T::one();
        }
    }
    (ids, mask, lens)
}

impl<T: Scalar> ClassifierModel<T> {
    /// Wraps `encoder` with a freshly initialized head (uniform in
    /// ±1/sqrt(fan_in), zero biases).
    pub fn new(encoder: Encoder<T>, lm_config: LmConfig, config: ClassifierConfig) -> Result<Self> {
        config.validate()?;
        let lm_config = LmConfig {
            vocab_size: encoder.vocab_size(),
            ..lm_config
        };
        lm_config.validate()?;
        if encoder.layers.len() != lm_config.num_layers || encoder.output_dim() != lm_config.encoder_output_dim() {
            return Err(Error::Config("encoder does not match its configuration".into()));
        }
        let mut rng = RngState::new(config.seed, stream::INIT);
        let d = encoder.output_dim();
        let mut uniform = |name: &str, rows: usize, cols: usize| {
            let k = 1.0 / (cols as f64).sqrt();
            let r = rng.rng();
            Parameter::new(
                name,
                Array2::from_shape_simple_fn((rows, cols), || T::from_f64_lossy(r.gen_range(-k..k))),
            )
        };
        let w1 = uniform("head.linear1.w", config.head_hidden, 3 * d);
        let w2 = uniform("head.linear2.w", config.num_classes, config.head_hidden);
        Ok(ClassifierModel {
            b1: Parameter::zeros("head.linear1.b", 1, config.head_hidden),
            b2: Parameter::zeros("head.linear2.b", 1, config.num_classes),
            config,
            lm_config,
            encoder,
            w1,
            w2,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    /// Layer groups: head, each LSTM layer, embedding.
    pub fn num_groups(&self) -> usize {
        self.encoder.layers.len() + 2
    }

    /// Group of each parameter, in `params()` order.
    pub fn param_groups(&self) -> Vec<usize> {
        let l = self.encoder.layers.len();
        let mut g = vec![l + 1];
        for layer in 0..l {
            g.extend([l - layer; 3]);
        }
        g.extend([0; 4]);
        g
    }

    /// Makes groups `0..n` trainable and freezes the rest.
    pub fn set_trainable_groups(&mut self, n: usize) {
        let groups = self.param_groups();
        for (p, g) in self.params_mut().into_iter().zip(groups) {
            p.frozen = g >= n;
        }
    }

    pub(crate) fn forward_batch(
        &self,
        docs: &[&[usize]],
        mode: Mode,
        rng: &mut RngState,
    ) -> Result<(Array2<T>, ForwardCache<T>)> {
        let (ids, mask, lens) = pad_batch::<T>(docs, self.config.max_doc_len);
        let out = self
            .encoder
            .forward(&ids, None, &self.config.dropout, mode, rng, Some(&mask))?;
        let (feat, arg) = pool::pool_batch(&out.output, &lens);
        let z1 = feat.dot(&self.w1.value.t()) + &self.b1.value;
        let mut hidden = relu_fwd(&z1);
        let drop = match mode {
            Mode::Train if self.config.dropout.classifier > 0.0 => {
                Some(dropout_mask(hidden.dim(), self.config.dropout.classifier, rng)?)
            }
            _ => None,
        };
        if let Some(m) = &drop {
            hidden *= m;
        }
        let logits = hidden.dot(&self.w2.value.t()) + &self.b2.value;
        let cache = ForwardCache {
            enc: out.cache,
            steps: ids.nrows(),
            lens,
            arg,
            feat,
            z1,
            hidden,
            drop,
        };
        Ok((logits, cache))
    }

    /// Logits `[B, K]` for a batch of documents.
    pub fn logits(&self, docs: &[&[usize]], mode: Mode, rng: &mut RngState) -> Result<Array2<T>> {
        Ok(self.forward_batch(docs, mode, rng)?.0)
    }

    /// Class probabilities for one document.
    pub fn classify_forward(&self, doc: &[usize], mode: Mode, rng: &mut RngState) -> Result<ndarray::Array1<T>> {
        let logits = self.logits(&[doc], mode, rng)?;
        Ok(softmax_row(logits.row(0)))
    }

    /// Mean cross-entropy over the batch, accumulating gradients into every
    /// non-frozen parameter. Returns the loss and the number of correct
    /// argmax predictions.
    pub fn loss_and_grad(
        &mut self,
        docs: &[&[usize]],
        labels: &[usize],
        mode: Mode,
        rng: &mut RngState,
    ) -> Result<(T, usize)> {
        let k = self.num_classes();
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::Data(format!("label {bad} outside {k} classes")));
        }
        let (logits, cache) = self.forward_batch(docs, mode, rng)?;
        let correct = logits
            .outer_iter()
            .zip(labels)
            .filter(|(row, &y)| crate::langmodel::argmax(*row) == y)
            .count();
        let (loss, dlogits) = softmax_xent_batch(logits.view(), labels)?;

        let g2 = linear_bwd(cache.hidden.view(), &self.w2.value, dlogits.view());
        accumulate(&mut self.w2, &g2.dw);
        accumulate(&mut self.b2, &g2.db);
        let mut dhidden = g2.dx;
        if let Some(m) = &cache.drop {
            dhidden *= m;
        }
        let dz1 = relu_bwd(&cache.z1, &dhidden);
        let g1 = linear_bwd(cache.feat.view(), &self.w1.value, dz1.view());
        accumulate(&mut self.w1, &g1.dw);
        accumulate(&mut self.b1, &g1.db);
        if self.encoder.any_trainable() {
            let d_out: Array3<T> = pool::pool_batch_bwd(&g1.dx, &cache.lens, &cache.arg, cache.steps);
            self.encoder.backward(&cache.enc, d_out);
        }
        Ok((loss, correct))
    }

    pub fn cast<U: Scalar>(&self) -> ClassifierModel<U> {
        ClassifierModel {
            config: self.config.clone(),
            lm_config: self.lm_config.clone(),
            encoder: self.encoder.cast(),
            w1: self.w1.cast(),
            b1: self.b1.cast(),
            w2: self.w2.cast(),
            b2: self.b2.cast(),
        }
    }
}

fn accumulate<T: Scalar>(p: &mut Parameter<T>, g: &Array2<T>) {
    if !p.frozen {
        p.grad += g;
    }
}

impl<T: Scalar> ParamSet<T> for ClassifierModel<T> {
    fn params(&self) -> Vec<&Parameter<T>> {
        let mut v = self.encoder.params();
        v.extend([&self.w1, &self.b1, &self.w2, &self.b2]);
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut v = self.encoder.params_mut();
        v.extend([&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]);
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn padding_is_left_and_truncation_keeps_tail() {
        let docs: Vec<Vec<usize>> = vec![vec![5, 6, 7, 8], vec![9], vec![]];
        let refs: Vec<&[usize]> = docs.iter().map(Vec::as_slice).collect();
        let (ids, mask, lens) = pad_batch::<f64>(&refs, 3);
        assert_eq!(lens, [3, 1, 1]);
        assert_eq!(ids.column(0).to_vec(), [6, 7, 8]);
        assert_eq!(ids.column(1).to_vec(), [1, 1, 9]);
        assert_eq!(ids.column(2).to_vec(), [1, 1, 0]);
        assert_eq!(mask.column(1).to_vec(), [0.0, 0.0, 1.0]);
    }

    #[test]
    fn default_schedule_adds_one_group_per_epoch() {
        let cfg = ClassifierConfig {
            num_classes: 3,
            ..Default::default()
        };
        let got: Vec<usize> = (1..=7).map(|e| cfg.groups_trainable(e, 5)).collect();
        assert_eq!(got, [1, 2, 3, 4, 5, 5, 5]);
        let custom = ClassifierConfig {
            unfreeze_schedule: Some(vec![UnfreezeStep { epoch: 3, group: 4 }]),
            ..cfg
        };
        assert_eq!(custom.groups_trainable(2, 5), 1);
        assert_eq!(custom.groups_trainable(3, 5), 5);
    }

    #[test]
    fn config_rejects_bad_values() {
        let ok = ClassifierConfig {
            num_classes: 2,
            ..Default::default()
        };
        assert!(ok.validate().is_ok());
        assert!(ClassifierConfig {
            num_classes: 1,
            ..ok.clone()
        }
        .validate()
        .is_err());
        let mut bad = ok.clone();
        bad.dropout.classifier = 1.0;
        assert!(bad.validate().is_err());
        assert!(ClassifierConfig {
            unfreeze_schedule: Some(vec![UnfreezeStep { epoch: 0, group: 1 }]),
            ..ok
        }
        .validate()
        .is_err());
    }
}
