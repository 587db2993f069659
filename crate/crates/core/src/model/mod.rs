//! Bi-encoder scoring head and the frozen-feature linear baseline.
//!
//! A target word's context embedding is the mean of its subword states in
//! the context encoder; a sense embedding is the first-position state of the
//! gloss encoder over the gloss text. Scores are raw dot products, turned
//! into a distribution over the candidate set with a softmax and trained
//! with cross-entropy against the gold candidate.

mod classifier;

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use classifier::{extract_frozen_features, LinearSenseClassifier, FROZEN_LAYERS};

use crate::corpus::Instance;
use crate::encoder::{
    encode_gloss, gloss_tokens, pool_target_span, span_rows, Encoder, EncoderConfig,
    ReferenceEncoder,
};
use crate::error::{Error, Result};
use crate::inventory::{Gloss, GlossTable, Inventory, SenseKey, DEFAULT_SOURCE_PREFERENCE};
use crate::nn::{dot, log_sum_exp, softmax, Graph, NodeId, StoreId};

const CHECKPOINT_FORMAT: &str = "glosslink.biencoder";
const CHECKPOINT_VERSION: u32 = 1;

/// Per-candidate scores and their softmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    pub senses: Vec<SenseKey>,
    pub scores: Vec<f64>,
    pub probs: Vec<f64>,
}

impl ScoreVector {
    pub fn new(senses: Vec<SenseKey>, scores: Vec<f64>) -> Self {
        assert_eq!(senses.len(), scores.len(), "one score per sense");
        let probs = softmax(&scores);
        ScoreVector {
            senses,
            scores,
            probs,
        }
    }

    /// Scores `context . gloss_i` for each gloss embedding.
    pub fn from_embeddings(
        senses: Vec<SenseKey>,
        context: &[f64],
        glosses: &[&[f64]],
    ) -> Result<Self> {
        let mut scores = Vec::with_capacity(glosses.len());
        for g in glosses {
            if g.len() != context.len() {
                return Err(Error::Config(format!(
                    "context dimension {} does not match gloss dimension {}",
                    context.len(),
                    g.len()
                )));
            }
            scores.push(dot(context, g));
        }
        Ok(ScoreVector::new(senses, scores))
    }

    /// Index of the best score; ties go to the earliest (highest-ranked)
    /// candidate.
    pub fn argmax(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, s) in self.scores.iter().enumerate() {
            if best.is_none_or(|b| *s > self.scores[b]) {
                best = Some(i);
            }
        }
        best
    }

    /// `-log p[gold]`, computed from the scores directly.
    pub fn loss(&self, gold: usize) -> f64 {
        log_sum_exp(&self.scores) - self.scores[gold]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    /// `None` when nothing could be assigned (no candidates, no back-off).
    pub predicted: Option<SenseKey>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scores: Option<ScoreVector>,
    pub backoff_used: bool,
}

impl PredictionRecord {
    fn backoff(inst: &Instance, inv: &Inventory) -> Self {
        PredictionRecord {
            id: inst.id.clone(),
            predicted: inv
                .most_common_sense(&inst.lemma, inst.pos, &inst.language)
                .cloned(),
            scores: None,
            backoff_used: true,
        }
    }
}

/// A training example: an instance, its candidate senses in rank order and
/// the index of the gold candidate.
#[derive(Debug, Clone)]
pub struct Example<'a> {
    pub instance: &'a Instance,
    pub senses: Vec<SenseKey>,
    pub glosses: Vec<&'a Gloss>,
    pub gold_index: usize,
}

/// Why instances were left out of training.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipCounts {
    pub no_candidates: usize,
    pub gold_not_candidate: usize,
}

impl SkipCounts {
    pub fn total(&self) -> usize {
        self.no_candidates + self.gold_not_candidate
    }
}

/// Pairs instances with their candidate glosses. The gold index is the
/// first candidate found in the gold set.
pub fn prepare_examples<'a>(
    instances: impl IntoIterator<Item = &'a Instance>,
    inv: &Inventory,
    glosses: &'a GlossTable,
) -> (Vec<Example<'a>>, SkipCounts) {
    let mut skipped = SkipCounts::default();
    let mut out = Vec::new();
    for inst in instances {
        let senses = inv.candidates(&inst.lemma, inst.pos, &inst.language);
        if senses.is_empty() {
            skipped.no_candidates += 1;
            continue;
        }
        let Some(gold_index) = senses.iter().position(|s| inst.is_gold(s)) else {
            skipped.gold_not_candidate += 1;
            continue;
        };
        let glosses: Option<Vec<&Gloss>> = senses.iter().map(|s| glosses.get(s)).collect();
        let Some(glosses) = glosses else {
            skipped.no_candidates += 1;
            continue;
        };
        out.push(Example {
            instance: inst,
            senses: senses.to_vec(),
            glosses,
            gold_index,
        });
    }
    if skipped.total() > 0 {
        log::info!(
            "skipped {} instance(s): {} without candidates, {} with gold outside candidates",
            skipped.total(),
            skipped.no_candidates,
            skipped.gold_not_candidate
        );
    }
    (out, skipped)
}

/// Sense embeddings computed once per evaluation run.
#[derive(Debug, Clone, Default)]
pub struct GlossCache {
    vectors: HashMap<SenseKey, Vec<f64>>,
}

impl GlossCache {
    pub fn get(&self, sense: &SenseKey) -> Option<&[f64]> {
        self.vectors.get(sense).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiEncoderModel {
    context: ReferenceEncoder,
    gloss: ReferenceEncoder,
    gloss_preference: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    gloss_preference: Vec<String>,
    context_encoder: ReferenceEncoder,
    gloss_encoder: ReferenceEncoder,
}

impl BiEncoderModel {
    pub fn new(context: ReferenceEncoder, gloss: ReferenceEncoder) -> Result<Self> {
        if context.dim() != gloss.dim() {
            return Err(Error::Config(format!(
                "context encoder dimension {} != gloss encoder dimension {}",
                context.dim(),
                gloss.dim()
            )));
        }
        Ok(BiEncoderModel {
            context,
            gloss,
            gloss_preference: DEFAULT_SOURCE_PREFERENCE
                .iter()
                .map(|s| s.to_string())
                .collect(),
        })
    }

    /// Two independently initialized encoders sharing one configuration.
    pub fn from_config(config: EncoderConfig) -> Result<Self> {
        let context = ReferenceEncoder::new(config)?;
        let gloss = ReferenceEncoder::new(EncoderConfig {
            init_seed: config.init_seed.wrapping_add(1),
            ..config
        })?;
        BiEncoderModel::new(context, gloss)
    }

    pub fn with_gloss_preference(mut self, preference: Vec<String>) -> Self {
        self.gloss_preference = preference;
        self
    }

    pub fn gloss_preference(&self) -> &[String] {
        &self.gloss_preference
    }

    pub fn context_encoder(&self) -> &ReferenceEncoder {
        &self.context
    }

    pub fn gloss_encoder(&self) -> &ReferenceEncoder {
        &self.gloss
    }

    pub fn encoders_mut(&mut self) -> (&mut ReferenceEncoder, &mut ReferenceEncoder) {
        (&mut self.context, &mut self.gloss)
    }

    pub fn dim(&self) -> usize {
        self.context.dim()
    }

    /// Context embedding of the instance's target span.
    pub fn embed_target(&self, inst: &Instance) -> Result<Vec<f64>> {
        let out = self
            .context
            .encode_context(&inst.tokens, &inst.language, inst.span)?;
        pool_target_span(&out, inst.span)
    }

    pub fn embed_gloss(&self, gloss: &Gloss) -> Result<Vec<f64>> {
        encode_gloss(&self.gloss, gloss)
    }

    pub fn score_candidates(&self, inst: &Instance, glosses: &[&Gloss]) -> Result<ScoreVector> {
        if glosses.is_empty() {
            return Err(Error::Argument(format!("instance {} has no glosses to score", inst.id)));
        }
        let context = self.embed_target(inst)?;
        let vectors = glosses
            .iter()
            .map(|g| self.embed_gloss(g))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&[f64]> = vectors.iter().map(Vec::as_slice).collect();
        ScoreVector::from_embeddings(glosses.iter().map(|g| g.sense.clone()).collect(), &context, &refs)
    }

    pub fn loss(&self, inst: &Instance, glosses: &[&Gloss], gold_index: usize) -> Result<f64> {
        if gold_index >= glosses.len() {
            return Err(Error::Argument(format!(
                "gold index {gold_index} outside {} candidates",
                glosses.len()
            )));
        }
        Ok(self.score_candidates(inst, glosses)?.loss(gold_index))
    }

    pub fn build_gloss_cache<'a>(
        &self,
        senses: impl IntoIterator<Item = (&'a SenseKey, &'a Gloss)>,
    ) -> Result<GlossCache> {
        let mut vectors = HashMap::new();
        for (sense, gloss) in senses {
            if !vectors.contains_key(sense) {
                vectors.insert(sense.clone(), self.embed_gloss(gloss)?);
            }
        }
        Ok(GlossCache { vectors })
    }

    /// Gloss cache over every sense of an inventory, under this model's
    /// source preference.
    pub fn cache_inventory(&self, inv: &Inventory) -> Result<GlossCache> {
        let table = inv.resolve_glosses(&self.gloss_preference);
        self.build_gloss_cache(table.iter())
    }

    /// Argmax over the inventory candidates, backing off to the most common
    /// sense when the entry is unknown.
    pub fn predict(
        &self,
        inst: &Instance,
        inv: &Inventory,
        cache: Option<&GlossCache>,
    ) -> Result<PredictionRecord> {
        let senses = inv.candidates(&inst.lemma, inst.pos, &inst.language);
        if senses.is_empty() {
            return Ok(PredictionRecord::backoff(inst, inv));
        }
        let context = self.embed_target(inst)?;
        let mut owned = Vec::new();
        let mut vectors: Vec<&[f64]> = Vec::with_capacity(senses.len());
        match cache {
            Some(cache) => {
                for s in senses {
                    vectors.push(cache.get(s).ok_or_else(|| {
                        Error::Lookup(format!("sense {s} missing from gloss cache"))
                    })?);
                }
            }
            None => {
                for s in senses {
                    let g = inv.gloss_of(s, &self.gloss_preference)?;
                    owned.push(self.embed_gloss(g)?);
                }
                vectors.extend(owned.iter().map(Vec::as_slice));
            }
        }
        let scores = ScoreVector::from_embeddings(senses.to_vec(), &context, &vectors)?;
        let best = scores.argmax().expect("non-empty candidates");
        Ok(PredictionRecord {
            id: inst.id.clone(),
            predicted: Some(scores.senses[best].clone()),
            scores: Some(scores),
            backoff_used: false,
        })
    }

    pub fn predict_all(
        &self,
        instances: &[Instance],
        inv: &Inventory,
        use_cache: bool,
    ) -> Result<Vec<PredictionRecord>> {
        let cache = if use_cache {
            Some(self.cache_inventory(inv)?)
        } else {
            None
        };
        instances
            .iter()
            .map(|i| self.predict(i, inv, cache.as_ref()))
            .collect()
    }

    /// Records the mean cross-entropy of `batch` in `g`. Each distinct sense
    /// in the batch is encoded once.
    pub fn batch_graph(
        &self,
        g: &mut Graph<'_>,
        stores: (StoreId, StoreId),
        batch: &[Example<'_>],
    ) -> Result<NodeId> {
        if batch.is_empty() {
            return Err(Error::Argument("empty batch".into()));
        }
        let (ctx_store, gloss_store) = stores;
        let mut sense_nodes: HashMap<&SenseKey, NodeId> = HashMap::new();
        let mut losses = Vec::with_capacity(batch.len());
        for ex in batch {
            let inst = ex.instance;
            let seq = self.context.tokenize(&inst.tokens, Some(inst.span))?;
            let rows = span_rows(&seq.token_rows, inst.span)?;
            let states = self.context.forward(g, ctx_store, &seq);
            let last = *states.last().expect("at least one layer");
            let target = g.mean_rows(last, rows.start, rows.end);

            let mut gloss_nodes = Vec::with_capacity(ex.glosses.len());
            for (sense, gloss) in ex.senses.iter().zip(&ex.glosses) {
                let node = match sense_nodes.get(sense) {
                    Some(&n) => n,
                    None => {
                        let seq = self.gloss.tokenize(&gloss_tokens(gloss), None)?;
                        let states = self.gloss.forward(g, gloss_store, &seq);
                        let first = g.row(*states.last().expect("layers"), 0);
                        sense_nodes.insert(sense, first);
                        first
                    }
                };
                gloss_nodes.push(node);
            }
            let glosses = g.concat_rows(&gloss_nodes);
            let scores = g.matmul_t(target, glosses);
            losses.push(g.cross_entropy(scores, ex.gold_index));
        }
        Ok(g.mean_scalars(&losses))
    }

    /// Mean loss of `batch` via the differentiable path.
    pub fn batch_loss(&self, batch: &[Example<'_>]) -> Result<f64> {
        let mut g = Graph::new();
        let c = g.register(self.context.params());
        let s = g.register(self.gloss.params());
        let root = self.batch_graph(&mut g, (c, s), batch)?;
        Ok(g.scalar(root))
    }

    pub fn to_json(&self) -> Result<String> {
        let ckpt = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            gloss_preference: self.gloss_preference.clone(),
            context_encoder: self.context.clone(),
            gloss_encoder: self.gloss.clone(),
        };
        Ok(serde_json::to_string(&ckpt)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(text)?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::Config(format!("not a bi-encoder checkpoint: {}", ckpt.format)));
        }
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint version {}",
                ckpt.version
            )));
        }
        let context = ReferenceEncoder::from_parts(
            *ckpt.context_encoder.config(),
            ckpt.context_encoder.params().clone(),
        )?;
        let gloss = ReferenceEncoder::from_parts(
            *ckpt.gloss_encoder.config(),
            ckpt.gloss_encoder.params().clone(),
        )?;
        Ok(BiEncoderModel::new(context, gloss)?.with_gloss_preference(ckpt.gloss_preference))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(self.to_json()?.as_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// SHA-256 of the serialized checkpoint.
    pub fn digest(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_json()?.as_bytes())))
    }
}

/// Reads the `format` field of a checkpoint file.
pub fn checkpoint_format(path: impl AsRef<Path>) -> Result<String> {
    #[derive(Deserialize)]
    struct Header {
        format: String,
    }
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let header: Header = serde_json::from_reader(BufReader::new(file))?;
    Ok(header.format)
}
