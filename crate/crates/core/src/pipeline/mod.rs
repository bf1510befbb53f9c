//! Configuration, checkpoint files, the synthetic corpus generator and the
//! stage commands that connect the other modules through files.

pub mod checkpoint;
pub mod commands;
mod config;
pub mod synth;

pub use checkpoint::Checkpoint;
pub use config::{PipelineConfig, PrepareConfig, TopKPreset, VocabConfig};
pub use synth::{generate, write_synthetic, SyntheticCorpus, SyntheticSpec};
