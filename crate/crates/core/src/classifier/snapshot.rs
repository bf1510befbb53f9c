use std::path::Path;

use serde_json::{json, Value};

use super::{ClassifierConfig, ClassifierModel};
use crate::error::Result;
use crate::langmodel::{blank_encoder, check_fingerprint, restore_params, LmConfig};
use crate::numcore::ParamSet;
use crate::pipeline::checkpoint::Checkpoint;
use crate::textprep::Vocabulary;

pub const CLASSIFIER_KIND: &str = "classifier";

/// Writes the full classifier; `meta` travels with it unchanged.
pub fn save_classifier(
    model: &ClassifierModel<f32>,
    vocab: &Vocabulary,
    meta: Value,
    path: impl AsRef<Path>,
) -> Result<()> {
    let config = json!({ "lm": model.lm_config, "classifier": model.config });
    let mut ck = Checkpoint::new(CLASSIFIER_KIND, config, vocab.fingerprint());
    ck.meta = meta;
    for p in model.params() {
        ck.push_param(p);
    }
    ck.save(path)
}

/// Loads a classifier saved against `vocab`, with its metadata.
pub fn load_classifier(path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<(ClassifierModel<f32>, Value)> {
    let ck = Checkpoint::load(path)?;
    ck.expect_kind(CLASSIFIER_KIND)?;
    check_fingerprint(&ck, vocab)?;
    let lm: LmConfig = serde_json::from_value(ck.config["lm"].clone())?;
    let clf: ClassifierConfig = serde_json::from_value(ck.config["classifier"].clone())?;
    lm.validate()?;
    let mut model = ClassifierModel::new(blank_encoder(&lm), lm, clf)?;
    restore_params(&ck, model.params_mut())?;
    Ok((model, ck.meta))
}
