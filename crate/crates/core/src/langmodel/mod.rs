//! AWD-LSTM next-token language model.
//!
//! The [`Encoder`] (embedding plus LSTM stack with the five dropout sites)
//! is shared with the document classifier; the [`LanguageModel`] adds a
//! decoder that is tied to the embedding by default.

mod batches;
mod encoder;
mod snapshot;
mod train;
mod transfer;

use ndarray::{Array2, Array3};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use batches::{make_lm_batches, LmBatch};
pub use encoder::{Encoder, EncoderCache, EncoderOutput, Mode};
pub(crate) use snapshot::{blank_encoder, check_fingerprint, restore_params};
pub use snapshot::{load_encoder, load_lm, save_encoder, save_lm, EncoderSnapshot, ENCODER_KIND, LM_KIND};
pub use train::{evaluate_stream, perplexity, train_lm, EpochLoss, LmEval, LmTrainConfig, OptimConfig};
pub use transfer::transfer_remap;

use crate::error::{Error, Result};
use crate::numcore::{
    linear_bwd, softmax_xent_batch, stream, DropoutSpec, LstmState, ParamSet, Parameter, RngState, Scalar,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LmConfig {
    /// Filled from the vocabulary when a model is built.
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub bptt_len: usize,
    pub batch_size: usize,
    pub dropout: DropoutSpec,
    pub tie_weights: bool,
    pub seed: u64,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            vocab_size: 0,
            embed_dim: 48,
            hidden_dim: 96,
            num_layers: 3,
            bptt_len: 35,
            batch_size: 16,
            dropout: DropoutSpec {
                encoder: 0.02,
                input: 0.1,
                weight: 0.1,
                hidden: 0.1,
                output: 0.1,
                classifier: 0.0,
            },
            tie_weights: true,
            seed: 42,
        }
    }
}

impl LmConfig {
    /// Full-size AWD-LSTM dimensions (400/1150/3, bptt 70).
    pub fn canonical() -> Self {
        LmConfig {
            embed_dim: 400,
            hidden_dim: 1150,
            num_layers: 3,
            bptt_len: 70,
            batch_size: 64,
            dropout: DropoutSpec {
                encoder: 0.02,
                input: 0.25,
                weight: 0.2,
                hidden: 0.15,
                output: 0.1,
                classifier: 0.0,
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 3 {
            return Err(Error::Config(format!(
                "vocab_size must be >= 3, got {}",
                self.vocab_size
            )));
        }
        if self.num_layers < 1 || self.embed_dim < 1 || self.hidden_dim < 1 {
            return Err(Error::Config("layer count and dimensions must be >= 1".into()));
        }
        if self.bptt_len < 2 {
            return Err(Error::Config(format!("bptt_len must be >= 2, got {}", self.bptt_len)));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        self.dropout.validate()
    }

    /// Output width of layer `l`.
    pub fn layer_output_dim(&self, l: usize) -> usize {
        if l + 1 == self.num_layers && self.tie_weights {
            self.embed_dim
        } else {
            self.hidden_dim
        }
    }

    pub fn layer_input_dim(&self, l: usize) -> usize {
        if l == 0 {
            self.embed_dim
        } else {
            self.layer_output_dim(l - 1)
        }
    }

    /// Width of the encoder's final output.
    pub fn encoder_output_dim(&self) -> usize {
        self.layer_output_dim(self.num_layers - 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LanguageModel<T> {
    pub config: LmConfig,
    pub encoder: Encoder<T>,
    /// Separate decoder weight, `None` when tied to the embedding.
    pub decoder: Option<Parameter<T>>,
    pub decoder_bias: Parameter<T>,
}

impl<T: Scalar> LanguageModel<T> {
    /// Uniform ±0.1 embedding and decoder, zero decoder bias; LSTM layers
    /// as in [`LstmParams::init`](crate::numcore::LstmParams::init).
    pub fn init(config: LmConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = RngState::new(config.seed, stream::INIT);
        let encoder = Encoder::init(&config, &mut rng);
        let decoder = (!config.tie_weights).then(|| {
            let r = rng.rng();
            Parameter::new(
                "decoder.weight",
                Array2::from_shape_simple_fn((config.vocab_size, config.encoder_output_dim()), || {
                    T::from_f64_lossy(r.gen_range(-0.1..0.1))
                }),
            )
        });
        let decoder_bias = Parameter::zeros("decoder.bias", 1, config.vocab_size);
        Ok(LanguageModel {
            config,
            encoder,
            decoder,
            decoder_bias,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    pub fn decoder_weight(&self) -> &Array2<T> {
        self.decoder
            .as_ref()
            .map_or(&self.encoder.embedding.value, |d| &d.value)
    }

    pub fn zero_state(&self, batch: usize) -> Vec<LstmState<T>> {
        self.encoder.zero_state(batch)
    }

    /// Time-major logits `[T * B, V]` (row `t * B + b`) for time-major ids
    /// `[T, B]`, with the carried state and the encoder cache.
    pub fn forward_time_major(
        &self,
        ids: &Array2<usize>,
        state: Option<&[LstmState<T>]>,
        mode: Mode,
        rng: &mut RngState,
    ) -> Result<(Array2<T>, EncoderOutput<T>)> {
        let out = self
            .encoder
            .forward(ids, state, &self.config.dropout, mode, rng, None)?;
        let (steps, batch, d) = out.output.dim();
        let flat = out
            .output
            .view()
            .into_shape_with_order((steps * batch, d))
            .expect("contiguous encoder output");
        let logits = flat.dot(&self.decoder_weight().t()) + &self.decoder_bias.value;
        Ok((logits, out))
    }

    /// Logits `[B, T, V]` for a batch-major id block `[B, T]`, from a zero
    /// initial state.
    pub fn lm_forward(&self, ids: &Array2<usize>, mode: Mode, rng: &mut RngState) -> Result<Array3<T>> {
        let (batch, steps) = ids.dim();
        let tm = ids.t().to_owned();
        let (logits, _) = self.forward_time_major(&tm, None, mode, rng)?;
        let v = logits.ncols();
        let logits = logits
            .into_shape_with_order((steps, batch, v))
            .expect("contiguous logits");
        Ok(logits.permuted_axes([1, 0, 2]).as_standard_layout().to_owned())
    }

    /// Mean next-token cross-entropy for one block, accumulating gradients.
    /// Inputs and targets are batch-major `[B, T]`. Returns the loss and the
    /// detached final state.
    pub fn loss_and_grad(
        &mut self,
        inputs: &Array2<usize>,
        targets: &Array2<usize>,
        state: Option<&[LstmState<T>]>,
        mode: Mode,
        rng: &mut RngState,
    ) -> Result<(T, Vec<LstmState<T>>)> {
        if inputs.dim() != targets.dim() {
            return Err(Error::Shape(format!(
                "inputs {:?} vs targets {:?}",
                inputs.dim(),
                targets.dim()
            )));
        }
        let tm_inputs = inputs.t().to_owned();
        let tm_targets: Vec<usize> = targets.t().iter().copied().collect();
        let (logits, out) = self.forward_time_major(&tm_inputs, state, mode, rng)?;
        let (loss, dlogits) = softmax_xent_batch(logits.view(), &tm_targets)?;

        let (steps, batch, d) = out.output.dim();
        let flat = out
            .output
            .view()
            .into_shape_with_order((steps * batch, d))
            .expect("contiguous encoder output");
        let g = linear_bwd(flat, self.decoder_weight(), dlogits.view());
        if !self.decoder_bias.frozen {
            self.decoder_bias.grad += &g.db;
        }
        match &mut self.decoder {
            Some(dec) if !dec.frozen => dec.grad += &g.dw,
            Some(_) => {}
            None if !self.encoder.embedding.frozen => self.encoder.embedding.grad += &g.dw,
            None => {}
        }
        let d_out =
            g.dx.into_shape_with_order((steps, batch, d))
                .expect("contiguous gradient");
        self.encoder.backward(&out.cache, d_out);
        Ok((loss, out.state))
    }

    /// Freezes everything except the decoder (and the embedding when tied).
    pub fn freeze_to_decoder(&mut self) {
        for p in self.params_mut() {
            p.frozen = true;
        }
        self.decoder_bias.frozen = false;
        match &mut self.decoder {
            Some(d) => d.frozen = false,
            None => self.encoder.embedding.frozen = false,
        }
    }

    pub fn unfreeze(&mut self) {
        for p in self.params_mut() {
            p.frozen = false;
        }
    }

    /// Layer-group depth of each parameter (0 = decoder, counting down the
    /// stack), in `params()` order.
    pub fn param_depths(&self) -> Vec<usize> {
        let l = self.config.num_layers;
        let mut depths = vec![if self.config.tie_weights { 0 } else { l + 1 }];
        for layer in 0..l {
            depths.extend([l - layer; 3]);
        }
        if self.decoder.is_some() {
            depths.push(0);
        }
        depths.push(0);
        depths
    }

    pub fn cast<U: Scalar>(&self) -> LanguageModel<U> {
        LanguageModel {
            config: self.config.clone(),
            encoder: self.encoder.cast(),
            decoder: self.decoder.as_ref().map(Parameter::cast),
            decoder_bias: self.decoder_bias.cast(),
        }
    }
}

impl<T: Scalar> ParamSet<T> for LanguageModel<T> {
    fn params(&self) -> Vec<&Parameter<T>> {
        let mut v = self.encoder.params();
        if let Some(d) = &self.decoder {
            v.push(d);
        }
        v.push(&self.decoder_bias);
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut v = self.encoder.params_mut();
        if let Some(d) = &mut self.decoder {
            v.push(d);
        }
        v.push(&mut self.decoder_bias);
        v
    }
}

/// Index of the largest entry, first on ties.
pub(crate) fn argmax<T: Scalar>(row: ndarray::ArrayView1<T>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
