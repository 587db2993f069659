//! Building annotated corpora for new languages: translate annotated source
//! sentences, align words with an EM lexical model, then carry each sense
//! annotation across the alignment link of its head token.

mod aligner;
mod provider;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use aligner::{Alignment, LexicalTranslationModel};
pub use provider::{
    DictionaryProvider, HttpProvider, HttpRequest, HttpResponse, IdentityProvider,
    TranslationProvider, API_KEY_ENV, ENDPOINT_ENV,
};

use crate::corpus::{Corpus, Instance};
use crate::error::{Error, Result};
use crate::inventory::{Pos, SenseKey};

/// One sense annotation on the source side of a pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    /// Inclusive source token range.
    pub span: (usize, usize),
    pub senses: Vec<SenseKey>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pos: Option<Pos>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParallelPair {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub id: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub src_lang: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub tgt_lang: String,
    pub src_tokens: Vec<String>,
    pub tgt_tokens: Vec<String>,
    #[serde(default)]
    pub annotations: Vec<Annotation>,
}

impl ParallelPair {
    pub fn unannotated(src_tokens: Vec<String>, tgt_tokens: Vec<String>) -> Self {
        ParallelPair {
            id: String::new(),
            src_lang: String::new(),
            tgt_lang: String::new(),
            src_tokens,
            tgt_tokens,
            annotations: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.src_tokens.is_empty() || self.tgt_tokens.is_empty() {
            return Err(Error::Argument(format!("pair {:?} has an empty side", self.id)));
        }
        for a in &self.annotations {
            if a.span.0 > a.span.1 || a.span.1 >= self.src_tokens.len() {
                return Err(Error::Argument(format!(
                    "pair {:?}: annotation span {:?} out of range",
                    self.id, a.span
                )));
            }
        }
        Ok(())
    }
}

pub fn read_pairs(reader: impl BufRead) -> Result<Vec<ParallelPair>> {
    let mut pairs = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::parse(idx + 1, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let pair: ParallelPair =
            serde_json::from_str(&line).map_err(|e| Error::parse(idx + 1, e.to_string()))?;
        pair.validate()
            .map_err(|e| Error::parse(idx + 1, e.to_string()))?;
        pairs.push(pair);
    }
    Ok(pairs)
}

pub fn load_pairs(path: impl AsRef<Path>) -> Result<Vec<ParallelPair>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_pairs(BufReader::new(file))
}

pub fn write_pairs(pairs: &[ParallelPair], w: &mut impl Write) -> std::io::Result<()> {
    for p in pairs {
        writeln!(w, "{}", serde_json::to_string(p)?)?;
    }
    Ok(())
}

/// One Pharaoh line per alignment.
pub fn write_pharaoh(alignments: &[Alignment], w: &mut impl Write) -> std::io::Result<()> {
    for a in alignments {
        writeln!(w, "{a}")?;
    }
    Ok(())
}

pub fn read_pharaoh(reader: impl BufRead) -> Result<Vec<Alignment>> {
    reader
        .lines()
        .enumerate()
        .map(|(idx, line)| {
            let line = line.map_err(|e| Error::parse(idx + 1, e.to_string()))?;
            line.parse()
                .map_err(|e: Error| Error::parse(idx + 1, e.to_string()))
        })
        .collect()
}

/// Counts of what happened to each source annotation.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferReport {
    pub pairs: usize,
    pub source_annotations: usize,
    pub projected: usize,
    pub dropped_unaligned: usize,
    pub dropped_collision: usize,
    pub dropped_missing_pos: usize,
    /// Sentence ids the provider failed on.
    pub failed_sentences: Vec<String>,
}

impl TransferReport {
    pub fn dropped(&self) -> usize {
        self.dropped_unaligned + self.dropped_collision + self.dropped_missing_pos
    }

    fn absorb(&mut self, other: &TransferReport) {
        self.pairs += other.pairs;
        self.source_annotations += other.source_annotations;
        self.projected += other.projected;
        self.dropped_unaligned += other.dropped_unaligned;
        self.dropped_collision += other.dropped_collision;
        self.dropped_missing_pos += other.dropped_missing_pos;
        self.failed_sentences
            .extend(other.failed_sentences.iter().cloned());
    }
}

/// Groups instances into sentences (same language and token sequence, in
/// order of first appearance) and translates each sentence once.
pub fn translate_corpus(
    corpus: &Corpus,
    provider: &dyn TranslationProvider,
    target_lang: &str,
) -> (Vec<ParallelPair>, TransferReport) {
    let mut order: Vec<(&str, &[String])> = Vec::new();
    let mut groups: HashMap<(&str, &[String]), Vec<&Instance>> = HashMap::new();
    for inst in corpus.instances() {
        let key = (inst.language.as_str(), inst.tokens.as_slice());
        groups
            .entry(key)
            .or_insert_with(|| {
                order.push(key);
                Vec::new()
            })
            .push(inst);
    }

    let mut report = TransferReport::default();
    let mut pairs = Vec::with_capacity(order.len());
    for (idx, key) in order.into_iter().enumerate() {
        let members = &groups[&key];
        let (src_lang, tokens) = key;
        let id = format!("s{idx:05}");
        match provider.translate(tokens, src_lang, target_lang) {
            Ok(tgt_tokens) if !tgt_tokens.is_empty() => {
                let annotations = members
                    .iter()
                    .filter(|i| !i.gold.is_empty())
                    .map(|i| Annotation {
                        span: i.span,
                        senses: i.gold.clone(),
                        id: Some(i.id.clone()),
                        pos: Some(i.pos),
                    })
                    .collect();
                pairs.push(ParallelPair {
                    id,
                    src_lang: src_lang.to_string(),
                    tgt_lang: target_lang.to_string(),
                    src_tokens: tokens.to_vec(),
                    tgt_tokens,
                    annotations,
                });
            }
            Ok(_) => {
                log::warn!("provider {} returned nothing for {id}", provider.name());
                report.failed_sentences.push(id);
            }
            Err(e) => {
                log::warn!("provider {} failed on {id}: {e}", provider.name());
                report.failed_sentences.push(id);
            }
        }
    }
    report.pairs = pairs.len();
    (pairs, report)
}

/// Carries each annotation to the target token linked to its head (last
/// span token). Unaligned heads and target tokens already claimed by an
/// earlier annotation are dropped and counted.
pub fn project_annotations(
    pair: &ParallelPair,
    alignment: &Alignment,
) -> Result<(Vec<Instance>, TransferReport)> {
    alignment.check_bounds(pair.src_tokens.len(), pair.tgt_tokens.len())?;
    let mut report = TransferReport {
        pairs: 1,
        source_annotations: pair.annotations.len(),
        ..Default::default()
    };
    let mut annotations: Vec<(usize, &Annotation)> = pair.annotations.iter().enumerate().collect();
    annotations.sort_by_key(|(k, a)| (a.span, *k));

    let mut claimed = HashSet::new();
    let mut out = Vec::new();
    for (k, ann) in annotations {
        let head = ann.span.1;
        let Some(j) = alignment.targets_of(head).next() else {
            report.dropped_unaligned += 1;
            continue;
        };
        let Some(pos) = ann.pos else {
            report.dropped_missing_pos += 1;
            continue;
        };
        if !claimed.insert(j) {
            report.dropped_collision += 1;
            continue;
        }
        let source_id = ann
            .id
            .clone()
            .unwrap_or_else(|| format!("{}.a{k}", pair.id));
        out.push(Instance {
            id: format!("{source_id}:{}", pair.tgt_lang),
            language: pair.tgt_lang.clone(),
            tokens: pair.tgt_tokens.clone(),
            span: (j, j),
            lemma: pair.tgt_tokens[j].to_lowercase(),
            pos,
            gold: ann.senses.clone(),
        });
    }
    report.projected = out.len();
    Ok((out, report))
}

#[derive(Debug, Clone, Copy)]
pub struct TransferOptions {
    pub em_iterations: usize,
    pub null_threshold: f64,
}

impl Default for TransferOptions {
    fn default() -> Self {
        TransferOptions {
            em_iterations: 5,
            null_threshold: 0.0,
        }
    }
}

pub struct TransferOutput {
    pub pairs: Vec<ParallelPair>,
    pub alignments: Vec<Alignment>,
    pub model: LexicalTranslationModel,
    pub projected: Corpus,
    pub report: TransferReport,
}

/// Translate, align and project a whole corpus.
pub fn run_transfer(
    corpus: &Corpus,
    provider: &dyn TranslationProvider,
    target_lang: &str,
    opts: TransferOptions,
) -> Result<TransferOutput> {
    let (pairs, mut report) = translate_corpus(corpus, provider, target_lang);
    report.pairs = 0;
    let model = LexicalTranslationModel::train(&pairs, opts.em_iterations)?;
    let mut alignments = Vec::with_capacity(pairs.len());
    let mut instances = Vec::new();
    for pair in &pairs {
        let alignment = model.align(pair, opts.null_threshold);
        let (projected, r) = project_annotations(pair, &alignment)?;
        report.absorb(&r);
        instances.extend(projected);
        alignments.push(alignment);
    }
    log::info!(
        "projected {}/{} annotations into {target_lang} ({} unaligned, {} collisions)",
        report.projected,
        report.source_annotations,
        report.dropped_unaligned,
        report.dropped_collision
    );
    Ok(TransferOutput {
        pairs,
        alignments,
        model,
        projected: Corpus::new(instances)?,
        report,
    })
}

/// Fraction of links in `predicted` that appear in `reference`.
pub fn link_precision(predicted: &Alignment, reference: &Alignment) -> f64 {
    if predicted.is_empty() {
        return 0.0;
    }
    let hits = predicted
        .links()
        .filter(|&(i, j)| reference.contains(i, j))
        .count();
    hits as f64 / predicted.len() as f64
}

/// Per-reason drop counts keyed by name; handy for reports.
pub fn drop_reasons(report: &TransferReport) -> BTreeMap<&'static str, usize> {
    BTreeMap::from([
        ("unaligned", report.dropped_unaligned),
        ("collision", report.dropped_collision),
        ("missing_pos", report.dropped_missing_pos),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn key(s: &str) -> SenseKey {
        SenseKey::new(s).unwrap()
    }

    fn annotated(src: &str, tgt: &str, anns: &[((usize, usize), &str)]) -> ParallelPair {
        ParallelPair {
            id: "p0".into(),
            src_lang: "en".into(),
            tgt_lang: "fr".into(),
            src_tokens: toks(src),
            tgt_tokens: toks(tgt),
            annotations: anns
                .iter()
                .enumerate()
                .map(|(k, (span, s))| Annotation {
                    span: *span,
                    senses: vec![key(s)],
                    id: Some(format!("i{k}")),
                    pos: Some(Pos::Noun),
                })
                .collect(),
        }
    }

    fn instance(id: &str, tokens: &str, idx: usize, gold: &str) -> Instance {
        Instance {
            id: id.into(),
            language: "en".into(),
            tokens: toks(tokens),
            span: (idx, idx),
            lemma: toks(tokens)[idx].clone(),
            pos: Pos::Noun,
            gold: vec![key(gold)],
        }
    }

    #[test]
    fn identity_projection_copies_gold() {
        let pair = annotated("a b c", "a b c", &[((2, 2), "s1")]);
        let (out, report) = project_annotations(&pair, &Alignment::identity(3)).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].span, (2, 2));
        assert_eq!(out[0].gold, vec![key("s1")]);
        assert_eq!(out[0].language, "fr");
        assert_eq!(out[0].id, "i0:fr");
        assert_eq!(report.projected, 1);
    }

    #[test]
    fn unaligned_annotation_is_dropped() {
        let pair = annotated("a b c", "x y z", &[((1, 1), "s1")]);
        let al = Alignment::new([(0, 0), (2, 2)]);
        let (out, report) = project_annotations(&pair, &al).unwrap();
        assert!(out.is_empty());
        assert_eq!(report.dropped_unaligned, 1);
    }

    #[test]
    fn multi_token_span_projects_via_last_token() {
        let pair = annotated("new york city", "ville de new-york", &[((0, 1), "s1")]);
        let al = Alignment::new([(0, 2), (1, 2), (2, 0)]);
        let (out, _) = project_annotations(&pair, &al).unwrap();
        assert_eq!(out[0].span, (2, 2));
        assert_eq!(out[0].lemma, "new-york");
    }

    #[test]
    fn collisions_keep_first_by_source_order() {
        let pair = annotated("a b", "x", &[((1, 1), "s2"), ((0, 0), "s1")]);
        let al = Alignment::new([(0, 0), (1, 0)]);
        let (out, report) = project_annotations(&pair, &al).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].gold, vec![key("s1")]);
        assert_eq!(report.dropped_collision, 1);
    }

    #[test]
    fn out_of_range_alignment_is_rejected() {
        let pair = annotated("a", "x", &[((0, 0), "s1")]);
        assert!(project_annotations(&pair, &Alignment::new([(0, 3)])).is_err());
    }

    #[test]
    fn translate_groups_sentences_and_carries_annotations() {
        let corpus = Corpus::new(vec![
            instance("d0.t0", "the bank closed", 1, "bank.1"),
            instance("d0.t1", "the bank closed", 2, "close.2"),
            instance("d1.t0", "a river bank", 2, "bank.2"),
        ])
        .unwrap();
        let (pairs, report) = translate_corpus(&corpus, &IdentityProvider, "fr");
        assert_eq!(pairs.len(), 2);
        assert!(report.failed_sentences.is_empty());
        assert_eq!(pairs[0].annotations.len(), 2);
        assert_eq!(pairs[0].tgt_tokens, pairs[0].src_tokens);

        let dict = DictionaryProvider::new([
            ("the".to_string(), "la".to_string()),
            ("bank".to_string(), "banque".to_string()),
        ]);
        let (pairs, _) = translate_corpus(&corpus, &dict, "fr");
        assert_eq!(pairs[0].tgt_tokens, toks("la banque closed"));
    }

    struct Flaky;
    impl TranslationProvider for Flaky {
        fn name(&self) -> &str {
            "flaky"
        }
        fn translate(&self, tokens: &[String], _: &str, _: &str) -> Result<Vec<String>> {
            if tokens.iter().any(|t| t == "river") {
                Err(Error::Provider("boom".into()))
            } else {
                Ok(tokens.to_vec())
            }
        }
    }

    #[test]
    fn provider_failure_skips_sentence() {
        let corpus = Corpus::new(vec![
            instance("a", "the bank", 1, "s1"),
            instance("b", "river bank", 1, "s2"),
        ])
        .unwrap();
        let (pairs, report) = translate_corpus(&corpus, &Flaky, "fr");
        assert_eq!(pairs.len(), 1);
        assert_eq!(report.failed_sentences, vec!["s00001".to_string()]);
    }

    #[test]
    fn pair_jsonl_round_trip() {
        let pairs = vec![annotated("a b", "x y", &[((0, 1), "s1")])];
        let mut buf = Vec::new();
        write_pairs(&pairs, &mut buf).unwrap();
        assert_eq!(read_pairs(buf.as_slice()).unwrap(), pairs);
        // the minimal documented shape parses too
        let minimal = r#"{"src_tokens":["a"],"tgt_tokens":["x"],"annotations":[{"span":[0,0],"senses":["s1"]}]}"#;
        let parsed = read_pairs(minimal.as_bytes()).unwrap();
        assert_eq!(parsed[0].annotations[0].senses, vec![key("s1")]);
    }
}
