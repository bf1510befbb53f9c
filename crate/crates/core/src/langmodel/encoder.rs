use ndarray::{Array1, Array2, Array3};
use rand::Rng;

use super::LmConfig;
use crate::error::Result;
use crate::numcore::{
    apply_step_mask, dropout_mask, embedding_bwd, embedding_fwd, lstm_layer_bwd, lstm_layer_fwd, row_drop_mask,
    DropoutSpec, LayerCache, LstmParams, LstmState, Parameter, RngState, Scalar,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout masks are drawn from the supplied generator.
    Train,
    /// Deterministic; no dropout, no draws.
    Eval,
}

/// Embedding followed by a stack of LSTM layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder<T> {
    pub embedding: Parameter<T>,
    pub layers: Vec<LstmParams<T>>,
}

#[derive(Debug, Clone)]
pub struct EncoderCache<T> {
    ids: Vec<usize>,
    steps: usize,
    batch: usize,
    row_mask: Option<Array1<T>>,
    input_mask: Option<Array2<T>>,
    layers: Vec<LayerCache<T>>,
    /// Mask applied to the output of layer `l` (hidden dropout between
    /// layers, output dropout after the last one).
    after_masks: Vec<Option<Array2<T>>>,
}

#[derive(Debug, Clone)]
pub struct EncoderOutput<T> {
    /// Final layer output, [T, B, d_out], after output dropout.
    pub output: Array3<T>,
    /// State after the last step of every layer.
    pub state: Vec<LstmState<T>>,
    pub cache: EncoderCache<T>,
}

fn maybe_mask<T: Scalar>(mode: Mode, shape: (usize, usize), p: f64, rng: &mut RngState) -> Result<Option<Array2<T>>> {
    if mode == Mode::Eval || p == 0.0 {
        return Ok(None);
    }
    dropout_mask(shape, p, rng).map(Some)
}

impl<T: Scalar> Encoder<T> {
    pub fn init(config: &LmConfig, rng: &mut RngState) -> Self {
        let r = rng.rng();
        let embedding = Parameter::new(
            "encoder.embedding",
            Array2::from_shape_simple_fn((config.vocab_size, config.embed_dim), || {
                T::from_f64_lossy(r.gen_range(-0.1..0.1))
            }),
        );
        let layers = (0..config.num_layers)
            .map(|l| {
                LstmParams::init(
                    &format!("encoder.lstm{l}"),
                    config.layer_input_dim(l),
                    config.layer_output_dim(l),
                    rng,
                )
            })
            .collect();
        Encoder { embedding, layers }
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding.value.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers
            .last()
            .map_or(self.embedding.value.ncols(), |l| l.hidden_dim())
    }

    pub fn zero_state(&self, batch: usize) -> Vec<LstmState<T>> {
        self.layers
            .iter()
            .map(|l| LstmState::zeros(batch, l.hidden_dim()))
            .collect()
    }

    pub fn params(&self) -> Vec<&Parameter<T>> {
        let mut v = vec![&self.embedding];
        for l in &self.layers {
            v.extend(l.params());
        }
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut v = vec![&mut self.embedding];
        for l in &mut self.layers {
            v.extend(l.params_mut());
        }
        v
    }

    pub fn cast<U: Scalar>(&self) -> Encoder<U> {
        Encoder {
            embedding: self.embedding.cast(),
            layers: self.layers.iter().map(LstmParams::cast).collect(),
        }
    }

    /// Runs time-major ids `[T, B]` through the stack. `step_mask` (`[T, B]`
    /// of 0/1) marks real tokens for left-padded batches.
    pub fn forward(
        &self,
        ids: &Array2<usize>,
        initial: Option<&[LstmState<T>]>,
        dropout: &DropoutSpec,
        mode: Mode,
        rng: &mut RngState,
        step_mask: Option<&Array2<T>>,
    ) -> Result<EncoderOutput<T>> {
        let (steps, batch) = ids.dim();
        let flat_ids: Vec<usize> = ids.iter().copied().collect();
        let d_e = self.embedding.value.ncols();

        let mut emb = embedding_fwd(&flat_ids, &self.embedding.value)?;
        let row_mask = if mode == Mode::Train && dropout.encoder > 0.0 {
            Some(row_drop_mask::<T>(self.vocab_size(), dropout.encoder, rng)?)
        } else {
            None
        };
        if let Some(m) = &row_mask {
            for (mut row, &id) in emb.outer_iter_mut().zip(&flat_ids) {
                row *= m[id];
            }
        }
        let mut x = emb
            .into_shape_with_order((steps, batch, d_e))
            .expect("contiguous embedding");
        let input_mask = maybe_mask(mode, (batch, d_e), dropout.input, rng)?;
        if let Some(m) = &input_mask {
            apply_step_mask(&mut x, m);
        }

        let zero;
        let initial = match initial {
            Some(s) => s,
            None => {
                zero = self.zero_state(batch);
                &zero
            }
        };
        let n = self.layers.len();
        let mut caches = Vec::with_capacity(n);
        let mut after_masks = Vec::with_capacity(n);
        let mut state = Vec::with_capacity(n);
        for (l, layer) in self.layers.iter().enumerate() {
            let wmask = maybe_mask(mode, layer.u.value.dim(), dropout.weight, rng)?;
            let (mut out, fin, cache) = lstm_layer_fwd(&x, &initial[l], layer, wmask.as_ref(), step_mask)?;
            let p = if l + 1 == n { dropout.output } else { dropout.hidden };
            let mask = maybe_mask(mode, (batch, layer.hidden_dim()), p, rng)?;
            if let Some(m) = &mask {
                apply_step_mask(&mut out, m);
            }
            caches.push(cache);
            after_masks.push(mask);
            state.push(fin);
            x = out;
        }
        Ok(EncoderOutput {
            output: x,
            state,
            cache: EncoderCache {
                ids: flat_ids,
                steps,
                batch,
                row_mask,
                input_mask,
                layers: caches,
                after_masks,
            },
        })
    }

    /// True when some encoder parameter will receive gradients.
    pub fn any_trainable(&self) -> bool {
        self.params().iter().any(|p| !p.frozen)
    }

    /// Backpropagates `d_out` ([T, B, d_out]) into the parameter gradients,
    /// stopping below the lowest trainable layer.
    pub fn backward(&mut self, cache: &EncoderCache<T>, d_out: Array3<T>) {
        let lowest = if !self.embedding.frozen {
            Some(0)
        } else {
            self.layers.iter().position(|l| !l.is_frozen())
        };
        let Some(lowest) = lowest else {
            return;
        };
        let mut d = d_out;
        for l in (lowest..self.layers.len()).rev() {
            if let Some(m) = &cache.after_masks[l] {
                apply_step_mask(&mut d, m);
            }
            d = lstm_layer_bwd(&cache.layers[l], &d, None, &mut self.layers[l]).dx;
        }
        if self.embedding.frozen {
            return;
        }
        if let Some(m) = &cache.input_mask {
            apply_step_mask(&mut d, m);
        }
        let d_e = self.embedding.value.ncols();
        let mut flat = d
            .into_shape_with_order((cache.steps * cache.batch, d_e))
            .expect("contiguous gradient");
        if let Some(m) = &cache.row_mask {
            for (mut row, &id) in flat.outer_iter_mut().zip(&cache.ids) {
                row *= m[id];
            }
        }
        embedding_bwd(&cache.ids, flat.view(), &mut self.embedding.grad);
    }
}

impl<T: Scalar> EncoderCache<T> {
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Number of LSTM layer caches held.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }
}
