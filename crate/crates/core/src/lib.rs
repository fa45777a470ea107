//! Neural Chinese word segmentation with dictionary knowledge.
//!
//! The model is a character CNN feeding a linear-chain CRF over BMES tags.
//! Two ways of folding a word list into training are provided: pseudo
//! sentences assembled from dictionary words ([`dictgen::gen_pseudo_corpus`])
//! and an auxiliary word/non-word classifier sharing the encoder
//! ([`wordclf`]). Every layer has a hand-written backward pass; the test
//! suites check them against brute-force enumeration and finite differences.

pub mod crf;
pub mod dictgen;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod model;
pub mod modelfile;
pub mod numkit;
pub mod tagcodec;
#[cfg(feature = "testkit")]
pub mod testkit;
pub mod trainer;
pub mod wordclf;

pub use error::{Error, Result};
pub use model::{Model, ModelConfig, ModelParams};
pub use tagcodec::{LabeledSentence, Tag};
