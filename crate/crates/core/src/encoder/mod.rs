//! Sequence encoders shared by the context and gloss sides.
//!
//! # Plugging in a pretrained encoder
//!
//! Any encoder can be used for inference and frozen-feature extraction by
//! implementing [`Encoder`]. The implementation must expose, for every input
//! token, the row range its subwords occupy in the output
//! ([`EncoderOutput::token_rows`]), put the sentence-level summary state at
//! row 0, and return the hidden states of each layer it wants to make
//! available for feature extraction. Fine-tuning through the bi-encoder
//! loss is only provided for [`ReferenceEncoder`].

mod reference;
mod subword;

use std::ops::Range;

pub use reference::{EncoderConfig, ReferenceEncoder};
pub use subword::{tokenize, HashVocab, SubwordSequence, FIRST_ID};

use crate::error::{Error, Result};
use crate::inventory::Gloss;
use crate::nn::Matrix;

/// Per-layer token states of one encoded sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    layers: Vec<Matrix>,
    token_rows: Vec<Option<Range<usize>>>,
}

impl EncoderOutput {
    pub fn new(layers: Vec<Matrix>, token_rows: Vec<Option<Range<usize>>>) -> Self {
        assert!(!layers.is_empty(), "encoder output needs at least one layer");
        EncoderOutput { layers, token_rows }
    }

    /// Final-layer states, one row per subword (row 0 reserved).
    pub fn token_vectors(&self) -> &Matrix {
        self.layers.last().expect("non-empty")
    }

    /// Final-layer state at the reserved first position.
    pub fn pooled_first(&self) -> &[f64] {
        self.token_vectors().row(0)
    }

    pub fn layers(&self) -> &[Matrix] {
        &self.layers
    }

    /// Subword rows of each input token; `None` when truncated away.
    pub fn token_rows(&self) -> &[Option<Range<usize>>] {
        &self.token_rows
    }

    pub fn dim(&self) -> usize {
        self.token_vectors().cols()
    }
}

/// Encoder contract. Evaluation-mode encoding must be deterministic.
pub trait Encoder {
    fn dim(&self) -> usize;

    fn num_layers(&self) -> usize;

    /// Encodes a token sequence, truncating at the tail if needed.
    fn encode(&self, tokens: &[String], language: &str) -> Result<EncoderOutput>;

    /// Encodes a context, keeping the target span when truncating.
    fn encode_context(
        &self,
        tokens: &[String],
        language: &str,
        span: (usize, usize),
    ) -> Result<EncoderOutput> {
        let _ = span;
        self.encode(tokens, language)
    }
}

/// Subword row range covered by an inclusive token span.
pub fn span_rows(token_rows: &[Option<Range<usize>>], span: (usize, usize)) -> Result<Range<usize>> {
    let (start, end) = span;
    if start > end || end >= token_rows.len() {
        return Err(Error::Argument(format!(
            "span ({start}, {end}) out of range for {} tokens",
            token_rows.len()
        )));
    }
    let mut rows: Option<Range<usize>> = None;
    for r in token_rows[start..=end].iter() {
        let r = r
            .as_ref()
            .ok_or_else(|| Error::Argument("target span was truncated away".into()))?;
        rows = Some(match rows {
            None => r.clone(),
            Some(acc) => acc.start.min(r.start)..acc.end.max(r.end),
        });
    }
    match rows {
        Some(r) if !r.is_empty() => Ok(r),
        _ => Err(Error::Argument("target span covers no subwords".into())),
    }
}

/// Mean of the rows of `states` in `rows`.
pub fn mean_rows(states: &Matrix, rows: Range<usize>) -> Vec<f64> {
    let n = rows.len() as f64;
    let mut v = vec![0.0; states.cols()];
    for r in rows {
        for (acc, x) in v.iter_mut().zip(states.row(r)) {
            *acc += x;
        }
    }
    v.iter_mut().for_each(|x| *x /= n);
    v
}

/// Average of the final-layer vectors of every subword in `span`.
pub fn pool_target_span(out: &EncoderOutput, span: (usize, usize)) -> Result<Vec<f64>> {
    let rows = span_rows(out.token_rows(), span)?;
    Ok(mean_rows(out.token_vectors(), rows))
}

/// Whitespace tokens of a gloss definition.
pub fn gloss_tokens(gloss: &Gloss) -> Vec<String> {
    gloss.text.split_whitespace().map(String::from).collect()
}

/// Sense embedding: the first-position state of the encoded gloss text.
/// Depends only on the gloss text and the encoder parameters.
pub fn encode_gloss(encoder: &dyn Encoder, gloss: &Gloss) -> Result<Vec<f64>> {
    let tokens = gloss_tokens(gloss);
    if tokens.is_empty() {
        return Err(Error::Argument(format!("gloss of {} is empty", gloss.sense)));
    }
    Ok(encoder.encode(&tokens, &gloss.language)?.pooled_first().to_vec())
}

/// Indices of the last `count` layers of an `available`-layer encoder.
/// When fewer layers exist, indices wrap around cyclically, so a 2-layer
/// encoder asked for four yields `[0, 1, 0, 1]`.
pub fn last_layers(available: usize, count: usize) -> Vec<usize> {
    assert!(available > 0, "encoder without layers");
    let first = available as isize - count as isize;
    (0..count as isize)
        .map(|k| (first + k).rem_euclid(available as isize) as usize)
        .collect()
}
