//! Small trainable self-attention encoder.
//!
//! Each layer is single-head scaled dot-product attention with a residual
//! connection, followed by a tanh feed-forward block with a residual
//! connection. Input rows are hashed-subword embeddings plus learned
//! position embeddings; row 0 is the reserved first position.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::subword::{tokenize, HashVocab, SubwordSequence};
use super::{Encoder, EncoderOutput};
use crate::error::{Error, Result};
use crate::nn::{Graph, Matrix, NodeId, ParamStore, StoreId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub dim: usize,
    pub layers: usize,
    pub ff_dim: usize,
    pub vocab: HashVocab,
    pub max_len: usize,
    pub init_seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            dim: 32,
            layers: 2,
            ff_dim: 64,
            vocab: HashVocab {
                buckets: 8192,
                seed: 0,
                max_piece: 4,
            },
            max_len: 128,
            init_seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.layers == 0 || self.ff_dim == 0 {
            return Err(Error::Config("encoder sizes must be positive".into()));
        }
        if self.vocab.buckets == 0 || self.vocab.max_piece == 0 {
            return Err(Error::Config("hash vocabulary must be non-empty".into()));
        }
        if self.max_len < 2 {
            return Err(Error::Config("max_len must leave room for one subword".into()));
        }
        Ok(())
    }
}

const EMBED: usize = 0;
const POSITION: usize = 1;
const PER_LAYER: usize = 8;

#[derive(Debug, Clone, Copy)]
struct LayerParams {
    wq: usize,
    wk: usize,
    wv: usize,
    wo: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

fn layer(l: usize) -> LayerParams {
    let base = 2 + l * PER_LAYER;
    LayerParams {
        wq: base,
        wk: base + 1,
        wv: base + 2,
        wo: base + 3,
        w1: base + 4,
        b1: base + 5,
        w2: base + 6,
        b2: base + 7,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceEncoder {
    config: EncoderConfig,
    params: ParamStore,
}

impl ReferenceEncoder {
    pub fn new(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let d = config.dim;
        let f = config.ff_dim;
        let mut params = ParamStore::default();
        params.push(
            "embed",
            Matrix::random_normal(config.vocab.size(), d, 0.5, &mut rng),
        );
        params.push("position", Matrix::random_normal(config.max_len, d, 0.1, &mut rng));
        let proj = 1.0 / (d as f64).sqrt();
        for l in 0..config.layers {
            for name in ["wq", "wk", "wv", "wo"] {
                params.push(format!("layer{l}.{name}"), Matrix::random_normal(d, d, proj, &mut rng));
            }
            params.push(format!("layer{l}.w1"), Matrix::random_normal(d, f, proj, &mut rng));
            params.push(format!("layer{l}.b1"), Matrix::zeros(1, f));
            params.push(
                format!("layer{l}.w2"),
                Matrix::random_normal(f, d, 1.0 / (f as f64).sqrt(), &mut rng),
            );
            params.push(format!("layer{l}.b2"), Matrix::zeros(1, d));
        }
        Ok(ReferenceEncoder { config, params })
    }

    /// Rebuilds an encoder from stored parameters, checking their shapes.
    pub fn from_parts(config: EncoderConfig, params: ParamStore) -> Result<Self> {
        let expected = ReferenceEncoder::new(EncoderConfig {
            layers: config.layers,
            ..config
        })?;
        if expected.params.len() != params.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, found {}",
                expected.params.len(),
                params.len()
            )));
        }
        for (idx, t) in params.tensors().iter().enumerate() {
            if t.shape() != expected.params.get(idx).shape() || !t.all_finite() {
                return Err(Error::Config(format!(
                    "parameter {} has shape {:?} or non-finite values",
                    params.name(idx),
                    t.shape()
                )));
            }
        }
        Ok(ReferenceEncoder { config, params })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count()
    }

    pub fn tokenize(
        &self,
        tokens: &[String],
        span: Option<(usize, usize)>,
    ) -> Result<SubwordSequence> {
        tokenize(&self.config.vocab, tokens, span, self.config.max_len)
    }

    /// Records the forward pass in `g`; returns the hidden states of every
    /// layer (last entry is the encoder output).
    pub fn forward(&self, g: &mut Graph<'_>, store: StoreId, seq: &SubwordSequence) -> Vec<NodeId> {
        let n = seq.len();
        let positions: Vec<usize> = (0..n).collect();
        let tok = g.gather(store, EMBED, &seq.ids);
        let pos = g.gather(store, POSITION, &positions);
        let mut x = g.add(tok, pos);
        let scale = 1.0 / (self.config.dim as f64).sqrt();
        let mut states = Vec::with_capacity(self.config.layers);
        for l in 0..self.config.layers {
            let p = layer(l);
            let wq = g.param(store, p.wq);
            let wk = g.param(store, p.wk);
            let wv = g.param(store, p.wv);
            let wo = g.param(store, p.wo);
            let q = g.matmul(x, wq);
            let k = g.matmul(x, wk);
            let v = g.matmul(x, wv);
            let att = g.matmul_t(q, k);
            let att = g.scale(att, scale);
            let att = g.softmax_rows(att);
            let mixed = g.matmul(att, v);
            let mixed = g.matmul(mixed, wo);
            let h = g.add(x, mixed);

            let w1 = g.param(store, p.w1);
            let b1 = g.param(store, p.b1);
            let w2 = g.param(store, p.w2);
            let b2 = g.param(store, p.b2);
            let ff = g.matmul(h, w1);
            let ff = g.add_row(ff, b1);
            let ff = g.tanh(ff);
            let ff = g.matmul(ff, w2);
            let ff = g.add_row(ff, b2);
            x = g.add(h, ff);
            states.push(x);
        }
        states
    }

    fn run(&self, seq: SubwordSequence) -> EncoderOutput {
        let mut g = Graph::new();
        let store = g.register(&self.params);
        let states = self.forward(&mut g, store, &seq);
        let layers: Vec<Matrix> = states.iter().map(|&s| g.value(s).clone()).collect();
        EncoderOutput::new(layers, seq.token_rows)
    }
}

impl Encoder for ReferenceEncoder {
    fn dim(&self) -> usize {
        self.config.dim
    }

    fn num_layers(&self) -> usize {
        self.config.layers
    }

    fn encode(&self, tokens: &[String], _language: &str) -> Result<EncoderOutput> {
        Ok(self.run(self.tokenize(tokens, None)?))
    }

    fn encode_context(
        &self,
        tokens: &[String],
        _language: &str,
        span: (usize, usize),
    ) -> Result<EncoderOutput> {
        Ok(self.run(self.tokenize(tokens, Some(span))?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> ReferenceEncoder {
        ReferenceEncoder::new(EncoderConfig {
            dim: 16,
            layers: 2,
            ff_dim: 32,
            init_seed: seed,
            ..EncoderConfig::default()
        })
        .unwrap()
    }

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn one_token_shape() {
        let out = small(1).encode(&toks("dog"), "en").unwrap();
        assert_eq!(out.token_vectors().shape(), (2, 16));
        assert_eq!(out.layers().len(), 2);
    }

    #[test]
    fn eval_is_deterministic_and_finite() {
        let enc = small(3);
        let a = enc.encode(&toks("the quick brown foxes jumped"), "en").unwrap();
        let b = enc.encode(&toks("the quick brown foxes jumped"), "en").unwrap();
        assert_eq!(a, b);
        assert!(a.token_vectors().all_finite());
        assert_eq!(a.pooled_first(), a.token_vectors().row(0));
    }

    #[test]
    fn parameter_count_is_reported() {
        let enc = small(0);
        let d = 16;
        let per_layer = 4 * d * d + d * 32 + 32 + 32 * d + d;
        assert_eq!(enc.parameter_count(), 8193 * d + 128 * d + 2 * per_layer);
    }

    #[test]
    fn from_parts_checks_shapes() {
        let enc = small(0);
        let ok = ReferenceEncoder::from_parts(*enc.config(), enc.params().clone());
        assert!(ok.is_ok());
        let mut cfg = *enc.config();
        cfg.dim = 8;
        assert!(ReferenceEncoder::from_parts(cfg, enc.params().clone()).is_err());
    }
}
