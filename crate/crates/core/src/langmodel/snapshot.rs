use std::path::Path;

use super::{Encoder, LanguageModel, LmConfig};
use crate::error::{Error, Result};
use crate::numcore::{stream, Parameter, RngState};
use crate::pipeline::checkpoint::Checkpoint;
use crate::textprep::Vocabulary;

pub const ENCODER_KIND: &str = "encoder";
pub const LM_KIND: &str = "lm";

/// Encoder weights with the configuration they were trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderSnapshot {
    pub config: LmConfig,
    pub encoder: Encoder<f32>,
    pub vocab_fingerprint: String,
}

/// Overwrites each parameter with the same-named tensor in `ck`.
pub(crate) fn restore_params(ck: &Checkpoint, params: Vec<&mut Parameter<f32>>) -> Result<()> {
    for p in params {
        let loaded = ck.param(&p.name, p.shape())?;
        p.value = loaded.value;
    }
    Ok(())
}

pub(crate) fn check_fingerprint(ck: &Checkpoint, vocab: &Vocabulary) -> Result<()> {
    let found = vocab.fingerprint();
    if ck.vocab_fingerprint != found {
        return Err(Error::Fingerprint {
            expected: ck.vocab_fingerprint.clone(),
            found,
        });
    }
    Ok(())
}

fn config_of(ck: &Checkpoint) -> Result<LmConfig> {
    let config: LmConfig = serde_json::from_value(ck.config.clone())?;
    config.validate()?;
    Ok(config)
}

pub(crate) fn blank_encoder(config: &LmConfig) -> Encoder<f32> {
    Encoder::init(config, &mut RngState::new(0, stream::INIT))
}

/// Writes the encoder of `model` (embedding and LSTM stack only).
pub fn save_encoder(model: &LanguageModel<f32>, vocab: &Vocabulary, path: impl AsRef<Path>) -> Result<()> {
    let mut ck = Checkpoint::new(ENCODER_KIND, serde_json::to_value(&model.config)?, vocab.fingerprint());
    for p in model.encoder.params() {
        ck.push_param(p);
    }
    ck.save(path)
}

/// Loads an encoder, refusing it unless it was saved against `vocab`.
pub fn load_encoder(path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<EncoderSnapshot> {
    let ck = Checkpoint::load(path)?;
    ck.expect_kind(ENCODER_KIND)?;
    check_fingerprint(&ck, vocab)?;
    let config = config_of(&ck)?;
    let mut encoder = blank_encoder(&config);
    restore_params(&ck, encoder.params_mut())?;
    Ok(EncoderSnapshot {
        config,
        encoder,
        vocab_fingerprint: ck.vocab_fingerprint,
    })
}

pub fn save_lm(model: &LanguageModel<f32>, vocab: &Vocabulary, path: impl AsRef<Path>) -> Result<()> {
    use crate::numcore::ParamSet;
    let mut ck = Checkpoint::new(LM_KIND, serde_json::to_value(&model.config)?, vocab.fingerprint());
    for p in model.params() {
        ck.push_param(p);
    }
    ck.save(path)
}

pub fn load_lm(path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<LanguageModel<f32>> {
    use crate::numcore::ParamSet;
    let ck = Checkpoint::load(path)?;
    ck.expect_kind(LM_KIND)?;
    check_fingerprint(&ck, vocab)?;
    let mut model = LanguageModel::init(config_of(&ck)?)?;
    restore_params(&ck, model.params_mut())?;
    Ok(model)
}
