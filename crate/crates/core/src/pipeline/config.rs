use std::path::Path;

use serde::{Deserialize, Serialize};

use super::synth::SyntheticSpec;
use crate::classifier::ClassifierConfig;
use crate::error::{Error, Result};
use crate::ingest::CodeKind;
use crate::langmodel::{LmConfig, LmTrainConfig};

/// The two label-set sizes used for the four reference datasets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopKPreset {
    Top10,
    Top50,
}

impl TopKPreset {
    pub const ALL: [TopKPreset; 2] = [TopKPreset::Top10, TopKPreset::Top50];

    pub fn k(self) -> usize {
        match self {
            TopKPreset::Top10 => 10,
            TopKPreset::Top50 => 50,
        }
    }
}

impl std::str::FromStr for TopKPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "top10" | "10" => Ok(TopKPreset::Top10),
            "top50" | "50" => Ok(TopKPreset::Top50),
            other => Err(Error::Config(format!(
                "unknown preset {other:?} (expected top10 or top50)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrepareConfig {
    pub kind: CodeKind,
    pub top_k: usize,
    /// Held-out share of the labeled corpus.
    pub test_fraction: f64,
}

impl Default for PrepareConfig {
    fn default() -> Self {
        PrepareConfig {
            kind: CodeKind::Diagnosis,
            top_k: TopKPreset::Top10.k(),
            test_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VocabConfig {
    /// Real tokens kept; the two specials come on top.
    pub max_size: usize,
    pub min_freq: usize,
    pub remove_stop_words: bool,
}

impl Default for VocabConfig {
    fn default() -> Self {
        VocabConfig {
            max_size: 60_000,
            min_freq: 2,
            remove_stop_words: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Seed for corpus splits.
    pub seed: u64,
    pub prepare: PrepareConfig,
    pub vocab: VocabConfig,
    pub lm: LmConfig,
    pub lm_train: LmTrainConfig,
    /// Tail share of each language-model stream held out for validation.
    pub lm_valid_fraction: f64,
    pub classifier: ClassifierConfig,
    /// Share of the training corpus held out when no validation corpus is given.
    pub classifier_valid_fraction: f64,
    pub synth: SyntheticSpec,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 42,
            prepare: PrepareConfig::default(),
            vocab: VocabConfig::default(),
            lm: LmConfig::default(),
            lm_train: LmTrainConfig::default(),
            lm_valid_fraction: 0.1,
            classifier: ClassifierConfig::default(),
            classifier_valid_fraction: 0.1,
            synth: SyntheticSpec::default(),
        }
    }
}

fn fraction(name: &str, f: f64) -> Result<()> {
    if f > 0.0 && f < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must lie in (0, 1), got {f}")))
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Uses `seed` for the splits, both models and the synthetic corpus.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.lm.seed = seed;
        self.classifier.seed = seed;
        self.synth.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        if self.prepare.top_k < 1 {
            return Err(Error::Config("top_k must be >= 1".into()));
        }
        fraction("prepare.test_fraction", self.prepare.test_fraction)?;
        fraction("lm_valid_fraction", self.lm_valid_fraction)?;
        fraction("classifier_valid_fraction", self.classifier_valid_fraction)?;
        if self.vocab.min_freq < 1 {
            return Err(Error::Config("vocab.min_freq must be >= 1".into()));
        }
        // vocab_size is filled in from the vocabulary later
        LmConfig {
            vocab_size: self.lm.vocab_size.max(3),
            ..self.lm.clone()
        }
        .validate()?;
        self.lm_train.validate()?;
        ClassifierConfig {
            num_classes: self.classifier.num_classes.max(2),
            ..self.classifier.clone()
        }
        .validate()?;
        self.synth.validate()
    }
}
