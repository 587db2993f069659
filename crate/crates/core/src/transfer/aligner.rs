//! EM-trained lexical translation model (IBM Model 1 with a null source
//! word) and greedy per-source-token decoding.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use indexmap::IndexSet;

use super::ParallelPair;
use crate::error::{Error, Result};

const NULL: usize = 0;

/// A set of `(source index, target index)` links.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Alignment {
    links: BTreeSet<(usize, usize)>,
}

impl Alignment {
    pub fn new(links: impl IntoIterator<Item = (usize, usize)>) -> Self {
        Alignment {
            links: links.into_iter().collect(),
        }
    }

    /// Diagonal alignment over `n` tokens.
    pub fn identity(n: usize) -> Self {
        Alignment::new((0..n).map(|i| (i, i)))
    }

    pub fn links(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.links.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    pub fn contains(&self, src: usize, tgt: usize) -> bool {
        self.links.contains(&(src, tgt))
    }

    /// Target positions linked to `src`, ascending.
    pub fn targets_of(&self, src: usize) -> impl Iterator<Item = usize> + '_ {
        self.links.range((src, 0)..=(src, usize::MAX)).map(|&(_, j)| j)
    }

    pub fn check_bounds(&self, src_len: usize, tgt_len: usize) -> Result<()> {
        match self.links.iter().find(|&&(i, j)| i >= src_len || j >= tgt_len) {
            Some((i, j)) => Err(Error::Argument(format!(
                "link {i}-{j} out of range for {src_len}x{tgt_len} pair"
            ))),
            None => Ok(()),
        }
    }
}

/// Pharaoh format: space-separated `i-j` links.
impl fmt::Display for Alignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (i, j) in &self.links {
            if !first {
                f.write_str(" ")?;
            }
            write!(f, "{i}-{j}")?;
            first = false;
        }
        Ok(())
    }
}

impl FromStr for Alignment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut links = BTreeSet::new();
        for item in s.split_whitespace() {
            let (i, j) = item
                .split_once('-')
                .ok_or_else(|| Error::Argument(format!("bad link {item:?}")))?;
            let parse = |x: &str| {
                x.parse::<usize>()
                    .map_err(|_| Error::Argument(format!("bad link {item:?}")))
            };
            links.insert((parse(i)?, parse(j)?));
        }
        Ok(Alignment { links })
    }
}

/// Sparse translation table `t(target | source)`. Row 0 is the null word.
#[derive(Debug, Clone)]
pub struct LexicalTranslationModel {
    source_vocab: IndexSet<String>,
    target_vocab: IndexSet<String>,
    /// Per source id: `(target id, probability)` sorted by target id.
    rows: Vec<Vec<(usize, f64)>>,
    iterations: usize,
    /// Corpus log-likelihood after 0, 1, ..., `iterations` EM steps.
    log_likelihood: Vec<f64>,
}

struct EncodedPair {
    src: Vec<usize>,
    tgt: Vec<usize>,
    /// `slots[i][j]`: position of `tgt[j]` in the row of `src[i]`
    /// (`i = 0` is the null word).
    slots: Vec<Vec<usize>>,
}

impl LexicalTranslationModel {
    /// Trains with `iterations` EM steps from a uniform start over observed
    /// co-occurrences.
    pub fn train(pairs: &[ParallelPair], iterations: usize) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Argument("cannot train an aligner on no pairs".into()));
        }
        if iterations == 0 {
            return Err(Error::Argument("aligner needs at least one EM iteration".into()));
        }
        let mut source_vocab = IndexSet::new();
        source_vocab.insert(String::new());
        let mut target_vocab = IndexSet::new();
        let mut cooc: Vec<BTreeSet<usize>> = vec![BTreeSet::new()];
        let mut ids = Vec::with_capacity(pairs.len());
        for pair in pairs {
            let src: Vec<usize> = pair
                .src_tokens
                .iter()
                .map(|w| source_vocab.insert_full(normalize(w)).0)
                .collect();
            let tgt: Vec<usize> = pair
                .tgt_tokens
                .iter()
                .map(|w| target_vocab.insert_full(normalize(w)).0)
                .collect();
            cooc.resize_with(source_vocab.len(), BTreeSet::new);
            for &s in std::iter::once(&NULL).chain(&src) {
                cooc[s].extend(tgt.iter().copied());
            }
            ids.push((src, tgt));
        }
        let rows: Vec<Vec<(usize, f64)>> = cooc
            .into_iter()
            .map(|targets| {
                let uniform = 1.0 / targets.len().max(1) as f64;
                targets.into_iter().map(|t| (t, uniform)).collect()
            })
            .collect();
        let encoded: Vec<EncodedPair> = ids
            .into_iter()
            .map(|(src, tgt)| {
                let slots = std::iter::once(NULL)
                    .chain(src.iter().copied())
                    .map(|s| {
                        tgt.iter()
                            .map(|t| {
                                rows[s]
                                    .binary_search_by_key(t, |&(id, _)| id)
                                    .expect("co-occurrence recorded")
                            })
                            .collect()
                    })
                    .collect();
                EncodedPair { src, tgt, slots }
            })
            .collect();

        let mut model = LexicalTranslationModel {
            source_vocab,
            target_vocab,
            rows,
            iterations: 0,
            log_likelihood: Vec::new(),
        };
        for _ in 0..iterations {
            let ll = model.em_step(&encoded);
            model.log_likelihood.push(ll);
            model.iterations += 1;
        }
        let final_ll = model.corpus_log_likelihood(&encoded);
        model.log_likelihood.push(final_ll);
        Ok(model)
    }

    /// One E+M step. Returns the log-likelihood under the parameters the
    /// step started from.
    fn em_step(&mut self, pairs: &[EncodedPair]) -> f64 {
        let mut counts: Vec<Vec<f64>> = self.rows.iter().map(|r| vec![0.0; r.len()]).collect();
        let mut ll = 0.0;
        for pair in pairs {
            let sources: Vec<usize> = std::iter::once(NULL).chain(pair.src.iter().copied()).collect();
            let norm = (sources.len() as f64).ln();
            for j in 0..pair.tgt.len() {
                let probs: Vec<f64> = sources
                    .iter()
                    .enumerate()
                    .map(|(i, &s)| self.rows[s][pair.slots[i][j]].1)
                    .collect();
                let total: f64 = probs.iter().sum();
                ll += total.ln() - norm;
                for (i, (&s, p)) in sources.iter().zip(&probs).enumerate() {
                    counts[s][pair.slots[i][j]] += p / total;
                }
            }
        }
        for (row, c) in self.rows.iter_mut().zip(counts) {
            let z: f64 = c.iter().sum();
            if z > 0.0 {
                for (entry, n) in row.iter_mut().zip(c) {
                    entry.1 = n / z;
                }
            }
        }
        ll
    }

    fn corpus_log_likelihood(&self, pairs: &[EncodedPair]) -> f64 {
        let mut ll = 0.0;
        for pair in pairs {
            let n = pair.src.len() + 1;
            for j in 0..pair.tgt.len() {
                let total: f64 = std::iter::once(NULL)
                    .chain(pair.src.iter().copied())
                    .enumerate()
                    .map(|(i, s)| self.rows[s][pair.slots[i][j]].1)
                    .sum();
                ll += total.ln() - (n as f64).ln();
            }
        }
        ll
    }

    /// `t(target | source)`; zero for unseen words or pairs.
    pub fn prob(&self, target: &str, source: &str) -> f64 {
        match (
            self.source_vocab.get_index_of(normalize(source).as_str()),
            self.target_vocab.get_index_of(normalize(target).as_str()),
        ) {
            (Some(s), Some(t)) => self.prob_ids(t, s),
            _ => 0.0,
        }
    }

    fn prob_ids(&self, target: usize, source: usize) -> f64 {
        let row = &self.rows[source];
        row.binary_search_by_key(&target, |&(id, _)| id)
            .map_or(0.0, |k| row[k].1)
    }

    /// Sum of `t(. | source)` over the target vocabulary.
    pub fn row_sum(&self, source: &str) -> Option<f64> {
        let s = self.source_vocab.get_index_of(normalize(source).as_str())?;
        Some(self.rows[s].iter().map(|&(_, p)| p).sum())
    }

    pub fn source_words(&self) -> impl Iterator<Item = &str> {
        self.source_vocab.iter().skip(1).map(String::as_str)
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn log_likelihood_history(&self) -> &[f64] {
        &self.log_likelihood
    }

    /// Links every source token to its most probable target token. Sources
    /// whose best probability is zero or below `null_threshold` stay
    /// unaligned; ties go to the smallest target index.
    pub fn align(&self, pair: &ParallelPair, null_threshold: f64) -> Alignment {
        let tgt_ids: Vec<Option<usize>> = pair
            .tgt_tokens
            .iter()
            .map(|w| self.target_vocab.get_index_of(normalize(w).as_str()))
            .collect();
        let mut links = BTreeSet::new();
        for (i, word) in pair.src_tokens.iter().enumerate() {
            let Some(s) = self.source_vocab.get_index_of(normalize(word).as_str()) else {
                continue;
            };
            let mut best: Option<(usize, f64)> = None;
            for (j, t) in tgt_ids.iter().enumerate() {
                let p = t.map_or(0.0, |t| self.prob_ids(t, s));
                if best.is_none_or(|(_, b)| p > b) {
                    best = Some((j, p));
                }
            }
            if let Some((j, p)) = best {
                if p > 0.0 && p >= null_threshold {
                    links.insert((i, j));
                }
            }
        }
        Alignment { links }
    }
}

fn normalize(word: &str) -> String {
    word.to_lowercase()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(src: &str, tgt: &str) -> ParallelPair {
        ParallelPair::unannotated(
            src.split_whitespace().map(String::from).collect(),
            tgt.split_whitespace().map(String::from).collect(),
        )
    }

    #[test]
    fn single_pair_gets_all_mass() {
        let m = LexicalTranslationModel::train(&[pair("a", "x")], 3).unwrap();
        assert_eq!(m.prob("x", "a"), 1.0);
    }

    #[test]
    fn em_breaks_symmetry() {
        let pairs = [pair("a b", "x y"), pair("a", "x")];
        let m = LexicalTranslationModel::train(&pairs, 5).unwrap();
        assert!(m.prob("x", "a") > m.prob("y", "a"));
    }

    /// Hand-run first iteration for {("a b","x y"), ("a","x")}.
    ///
    /// Start: NULL row {x,y} = 1/2 each; a: {x,y} = 1/2; b: {x,y} = 1/2.
    /// Pair 1, target x: sources (NULL, a, b) each 1/2, posterior 1/3 each;
    /// same for y. Pair 2, target x: sources (NULL, a), posterior 1/2 each.
    /// Counts for a: x = 1/3 + 1/2 = 5/6, y = 1/3, so t(x|a) = 5/7.
    #[test]
    fn first_iteration_matches_hand_computation() {
        let pairs = [pair("a b", "x y"), pair("a", "x")];
        let m = LexicalTranslationModel::train(&pairs, 1).unwrap();
        assert!((m.prob("x", "a") - 5.0 / 7.0).abs() < 1e-12);
        assert!((m.prob("y", "a") - 2.0 / 7.0).abs() < 1e-12);
        assert!((m.prob("x", "b") - 0.5).abs() < 1e-12);
        // initial log-likelihood: pair 1 has 2 targets each with
        // p = (1/3)(3/2) = 1/2; pair 2 one target with p = (1/2)(2/2) = 1/2
        let ll0 = 3.0 * 0.5f64.ln();
        assert!((m.log_likelihood_history()[0] - ll0).abs() < 1e-12);
    }

    #[test]
    fn argmax_decoding_and_threshold() {
        let pairs = [pair("a", "x"), pair("a", "x"), pair("a b", "x y")];
        let m = LexicalTranslationModel::train(&pairs, 5).unwrap();
        assert!(m.prob("x", "a") > m.prob("y", "a"));
        let al = m.align(&pair("a", "x y"), 0.0);
        assert_eq!(al, Alignment::new([(0, 0)]));
        // never-seen source word
        let al = m.align(&pair("a zzz", "x y"), 0.01);
        assert_eq!(al, Alignment::new([(0, 0)]));
    }

    #[test]
    fn ties_go_to_smallest_target_index() {
        let m = LexicalTranslationModel::train(&[pair("a", "x y")], 1).unwrap();
        assert_eq!(m.prob("x", "a"), m.prob("y", "a"));
        assert_eq!(m.align(&pair("a", "y x"), 0.0), Alignment::new([(0, 0)]));
    }

    #[test]
    fn pharaoh_round_trip() {
        let al: Alignment = "0-0 2-1 1-2".parse().unwrap();
        assert_eq!(al.to_string(), "0-0 1-2 2-1");
        assert_eq!(al.to_string().parse::<Alignment>().unwrap(), al);
        assert!("0-x".parse::<Alignment>().is_err());
        assert_eq!("".parse::<Alignment>().unwrap(), Alignment::default());
    }

    #[test]
    fn argument_errors() {
        assert!(LexicalTranslationModel::train(&[], 3).is_err());
        assert!(LexicalTranslationModel::train(&[pair("a", "x")], 0).is_err());
    }
}
