//! Multilingual word sense disambiguation from one annotated source
//! corpus: annotation projection through word alignment, and a gloss
//! bi-encoder trained across languages.
//!
//! The pipeline stages live in their own modules: [`inventory`] and
//! [`corpus`] for data, [`transfer`] for translation, alignment and
//! projection, [`encoder`] and [`model`] for the bi-encoder, [`train`] for
//! optimization and [`eval`] for scoring.

pub mod corpus;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod inventory;
pub mod manifest;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod synth;
pub mod train;
pub mod transfer;

pub use corpus::{Corpus, CorpusStats, Instance};
pub use encoder::{Encoder, EncoderConfig, EncoderOutput, ReferenceEncoder};
pub use error::{Error, Result};
pub use eval::{EvalResult, SplitResult};
pub use inventory::{Gloss, Inventory, LexicalEntry, Pos, SenseKey};
pub use manifest::RunManifest;
pub use model::{BiEncoderModel, LinearSenseClassifier, PredictionRecord, ScoreVector};
pub use train::{TrainConfig, TrainReport};
pub use transfer::{Alignment, LexicalTranslationModel, ParallelPair, TranslationProvider};
