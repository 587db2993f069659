//! Linear sense classifier over frozen encoder features, with
//! most-common-sense back-off for senses never seen in training.

use std::collections::HashSet;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::PredictionRecord;
use crate::corpus::Instance;
use crate::encoder::{last_layers, mean_rows, span_rows, Encoder, ReferenceEncoder};
use crate::error::{Error, Result};
use crate::inventory::{Inventory, SenseKey};
use crate::nn::{dot, Matrix};

/// Number of trailing layers concatenated into a feature vector.
pub const FROZEN_LAYERS: usize = 4;

const CHECKPOINT_FORMAT: &str = "glosslink.cls";
const CHECKPOINT_VERSION: u32 = 1;

/// Concatenation of the target-span mean over the last four layers. Encoders
/// with fewer layers repeat theirs cyclically (see
/// [`last_layers`](crate::encoder::last_layers)).
pub fn extract_frozen_features(encoder: &dyn Encoder, inst: &Instance) -> Result<Vec<f64>> {
    let out = encoder.encode_context(&inst.tokens, &inst.language, inst.span)?;
    let rows = span_rows(out.token_rows(), inst.span)?;
    let mut features = Vec::with_capacity(FROZEN_LAYERS * out.dim());
    for layer in last_layers(out.layers().len(), FROZEN_LAYERS) {
        features.extend(mean_rows(&out.layers()[layer], rows.clone()));
    }
    Ok(features)
}

/// One weight row per sense key over a global sense vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSenseClassifier {
    senses: IndexMap<SenseKey, usize>,
    weights: Matrix,
    bias: Vec<f64>,
    seen: HashSet<SenseKey>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    encoder: ReferenceEncoder,
    classifier: LinearSenseClassifier,
}

impl LinearSenseClassifier {
    /// Zero-initialized classifier over `senses` with `feature_dim` inputs.
    /// No sense counts as seen until training marks it.
    pub fn new(senses: impl IntoIterator<Item = SenseKey>, feature_dim: usize) -> Self {
        let mut index = IndexMap::new();
        for s in senses {
            let next = index.len();
            index.entry(s).or_insert(next);
        }
        let n = index.len();
        LinearSenseClassifier {
            senses: index,
            weights: Matrix::zeros(n, feature_dim),
            bias: vec![0.0; n],
            seen: HashSet::new(),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn num_senses(&self) -> usize {
        self.senses.len()
    }

    pub fn sense_index(&self, sense: &SenseKey) -> Option<usize> {
        self.senses.get(sense).copied()
    }

    pub fn sense_at(&self, index: usize) -> &SenseKey {
        self.senses.get_index(index).expect("valid sense index").0
    }

    pub fn mark_seen(&mut self, sense: &SenseKey) {
        if self.senses.contains_key(sense) {
            self.seen.insert(sense.clone());
        }
    }

    pub fn is_seen(&self, sense: &SenseKey) -> bool {
        self.seen.contains(sense)
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> (&mut Matrix, &mut Vec<f64>) {
        (&mut self.weights, &mut self.bias)
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    /// Logits over the full sense vocabulary.
    pub fn logits(&self, features: &[f64]) -> Vec<f64> {
        (0..self.num_senses())
            .map(|r| dot(self.weights.row(r), features) + self.bias[r])
            .collect()
    }

    /// Restricted argmax over the instance's seen candidates, or the most
    /// common sense when none of them was seen.
    pub fn classify_with_backoff(
        &self,
        features: &[f64],
        inst: &Instance,
        inv: &Inventory,
    ) -> PredictionRecord {
        let candidates = inv.candidates(&inst.lemma, inst.pos, &inst.language);
        let mut best: Option<(&SenseKey, f64)> = None;
        for s in candidates {
            if !self.seen.contains(s) {
                continue;
            }
            let Some(r) = self.sense_index(s) else { continue };
            let score = dot(self.weights.row(r), features) + self.bias[r];
            if best.is_none_or(|(_, b)| score > b) {
                best = Some((s, score));
            }
        }
        match best {
            Some((s, _)) => PredictionRecord {
                id: inst.id.clone(),
                predicted: Some(s.clone()),
                scores: None,
                backoff_used: false,
            },
            None => PredictionRecord::backoff(inst, inv),
        }
    }

    pub fn save_with_encoder(&self, encoder: &ReferenceEncoder, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let ckpt = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            encoder: encoder.clone(),
            classifier: self.clone(),
        };
        let text = serde_json::to_string(&ckpt)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_with_encoder(path: impl AsRef<Path>) -> Result<(Self, ReferenceEncoder)> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "not a v{CHECKPOINT_VERSION} classifier checkpoint: {} v{}",
                ckpt.format, ckpt.version
            )));
        }
        let encoder =
            ReferenceEncoder::from_parts(*ckpt.encoder.config(), ckpt.encoder.params().clone())?;
        if ckpt.classifier.feature_dim() != FROZEN_LAYERS * encoder.dim() {
            return Err(Error::Config("classifier width does not match encoder".into()));
        }
        Ok((ckpt.classifier, encoder))
    }
}
