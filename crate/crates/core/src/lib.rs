//! Free-text clinical note classification into diagnosis and procedure codes.
//!
//! The crate is organised as a staged pipeline:
//!
//! * [`ingest`] parses note and code tables, keeps primary codes, selects the
//!   top-K labels and produces seeded splits.
//! * [`textprep`] cleans and tokenizes text, builds the vocabulary and
//!   exports TF-IDF features.
//! * [`numcore`] holds the dense kernels with hand-written gradients.
//! * [`langmodel`] is the AWD-LSTM language model with transfer remapping.
//! * [`classifier`] is the concat-pooling document classifier trained with
//!   gradual unfreezing.
//! * [`evalmetrics`] computes confusion matrices, P/R/F1, ROC curves and AUC.
//! * [`pipeline`] wires the stages to files: configuration, checkpoints,
//!   a synthetic corpus generator and the command implementations.

pub mod classifier;
pub mod error;
pub mod evalmetrics;
pub mod ingest;
pub mod langmodel;
pub mod numcore;
pub mod pipeline;
pub mod textprep;

pub use error::{Error, Result};
