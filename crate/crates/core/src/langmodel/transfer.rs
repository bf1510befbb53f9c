use ndarray::Array2;

use super::{LanguageModel, LmConfig};
use crate::error::{Error, Result};
use crate::numcore::{Parameter, Scalar};
use crate::textprep::Vocabulary;

fn remap_rows<T: Scalar>(src: &Array2<T>, old: &Vocabulary, new: &Vocabulary) -> Array2<T> {
    let mut out = Array2::zeros((new.len(), src.ncols()));
    for (i, token) in new.itos().iter().enumerate() {
        if let Some(j) = old.get(token) {
            out.row_mut(i).assign(&src.row(j));
        }
    }
    out
}

/// Re-indexes a pretrained model onto a new vocabulary. Rows of tokens
/// known to `old_vocab` are copied, every other row (embedding, decoder and
/// decoder bias) starts at zero. The LSTM stack is copied verbatim.
///
/// `target` supplies the layout the caller expects; its dimensions must
/// match the pretrained model.
pub fn transfer_remap<T: Scalar>(
    pretrained: &LanguageModel<T>,
    old_vocab: &Vocabulary,
    new_vocab: &Vocabulary,
    target: &LmConfig,
) -> Result<LanguageModel<T>> {
    let src = &pretrained.config;
    if old_vocab.len() != src.vocab_size {
        return Err(Error::Config(format!(
            "pretrained vocabulary has {} tokens but the model has {} rows",
            old_vocab.len(),
            src.vocab_size
        )));
    }
    let same = src.embed_dim == target.embed_dim
        && src.hidden_dim == target.hidden_dim
        && src.num_layers == target.num_layers
        && src.tie_weights == target.tie_weights;
    if !same {
        return Err(Error::Config(format!(
            "pretrained layout {}x{}x{} (tied: {}) differs from target {}x{}x{} (tied: {})",
            src.embed_dim,
            src.hidden_dim,
            src.num_layers,
            src.tie_weights,
            target.embed_dim,
            target.hidden_dim,
            target.num_layers,
            target.tie_weights
        )));
    }
    let config = LmConfig {
        vocab_size: new_vocab.len(),
        ..target.clone()
    };
    config.validate()?;

    let mut model = pretrained.clone();
    model.config = config;
    let emb = &pretrained.encoder.embedding;
    model.encoder.embedding = Parameter::new(emb.name.clone(), remap_rows(&emb.value, old_vocab, new_vocab));
    if let Some(dec) = &pretrained.decoder {
        model.decoder = Some(Parameter::new(
            dec.name.clone(),
            remap_rows(&dec.value, old_vocab, new_vocab),
        ));
    }
    let bias = remap_rows(&pretrained.decoder_bias.value.t().to_owned(), old_vocab, new_vocab);
    model.decoder_bias = Parameter::new(pretrained.decoder_bias.name.clone(), bias.t().to_owned());
    for p in model.encoder.params_mut() {
        p.zero_grad();
        p.frozen = false;
    }
    Ok(model)
}
