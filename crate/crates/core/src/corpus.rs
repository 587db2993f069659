//! Sense-annotated corpora: data model, I/O, statistics and dev sampling.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inventory::{EntryKey, Inventory, Pos, SenseKey};

pub const DEFAULT_DEV_FRACTION: f64 = 0.1;
pub const DEFAULT_DEV_SEED: u64 = 42;

/// One disambiguation problem.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    #[serde(rename = "lang")]
    pub language: String,
    pub tokens: Vec<String>,
    /// Inclusive token range of the target word.
    pub span: (usize, usize),
    pub lemma: String,
    pub pos: Pos,
    /// Gold senses; empty at prediction time.
    #[serde(default)]
    pub gold: Vec<SenseKey>,
}

impl Instance {
    pub fn validate(&self) -> Result<()> {
        let (start, end) = self.span;
        if start > end || end >= self.tokens.len() {
            return Err(Error::Argument(format!(
                "instance {}: span ({start}, {end}) out of range for {} tokens",
                self.id,
                self.tokens.len()
            )));
        }
        if self.id.is_empty() {
            return Err(Error::Argument("instance with empty id".into()));
        }
        Ok(())
    }

    pub fn entry_key(&self) -> EntryKey {
        EntryKey::new(self.lemma.clone(), self.pos, self.language.clone())
    }

    pub fn is_gold(&self, sense: &SenseKey) -> bool {
        self.gold.contains(sense)
    }

    /// Head token of the target span (last token).
    pub fn head(&self) -> usize {
        self.span.1
    }
}

/// Ordered collection of instances with unique ids.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    instances: Vec<Instance>,
}

#[derive(Debug, Clone)]
pub enum CorpusFormat<'a> {
    Jsonl,
    /// SemEval-style XML with an optional gold keyfile.
    Xml { keyfile: Option<&'a Path> },
}

impl Corpus {
    pub fn new(instances: Vec<Instance>) -> Result<Self> {
        let mut ids = HashSet::new();
        for inst in &instances {
            inst.validate()?;
            if !ids.insert(inst.id.as_str()) {
                return Err(Error::Integrity(format!("duplicate instance id {}", inst.id)));
            }
        }
        Ok(Corpus { instances })
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn into_instances(self) -> Vec<Instance> {
        self.instances
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Instance> {
        self.instances.iter().find(|i| i.id == id)
    }

    pub fn languages(&self) -> BTreeSet<&str> {
        self.instances.iter().map(|i| i.language.as_str()).collect()
    }

    pub fn read(path: impl AsRef<Path>, format: CorpusFormat<'_>) -> Result<Self> {
        let path = path.as_ref();
        match format {
            CorpusFormat::Jsonl => {
                let file = File::open(path).map_err(|e| Error::io(path, e))?;
                Self::read_jsonl(BufReader::new(file))
            }
            CorpusFormat::Xml { keyfile } => {
                let xml = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                let keys = match keyfile {
                    Some(k) => {
                        let file = File::open(k).map_err(|e| Error::io(k, e))?;
                        Some(read_keyfile(BufReader::new(file))?)
                    }
                    None => None,
                };
                Self::from_semeval_xml(&xml, keys)
            }
        }
    }

    pub fn read_jsonl(reader: impl BufRead) -> Result<Self> {
        let mut instances = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let lineno = idx + 1;
            let line = line.map_err(|e| Error::parse(lineno, e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let inst: Instance =
                serde_json::from_str(&line).map_err(|e| Error::parse(lineno, e.to_string()))?;
            inst.validate()
                .map_err(|e| Error::parse(lineno, e.to_string()))?;
            instances.push(inst);
        }
        Corpus::new(instances)
    }

    pub fn write_jsonl(&self, w: &mut impl Write) -> std::io::Result<()> {
        for inst in &self.instances {
            writeln!(w, "{}", serde_json::to_string(inst)?)?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_jsonl(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Writes the gold senses as a keyfile (`id key [key ...]`).
    pub fn write_keyfile(&self, w: &mut impl Write) -> std::io::Result<()> {
        for inst in &self.instances {
            if inst.gold.is_empty() {
                continue;
            }
            let keys: Vec<&str> = inst.gold.iter().map(SenseKey::as_str).collect();
            writeln!(w, "{} {}", inst.id, keys.join(" "))?;
        }
        Ok(())
    }

    /// Parses the SemEval/Raganato XML layout: `corpus > text > sentence >
    /// (wf | instance)*`. Every `instance` element becomes one single-token
    /// target over its sentence.
    pub fn from_semeval_xml(
        xml: &str,
        keys: Option<HashMap<String, Vec<SenseKey>>>,
    ) -> Result<Self> {
        let doc = roxmltree::Document::parse(xml)
            .map_err(|e| Error::parse(e.pos().row as usize, e.to_string()))?;
        let root = doc.root_element();
        let language = root.attribute("lang").unwrap_or("en").to_lowercase();
        let mut instances = Vec::new();
        for sentence in root.descendants().filter(|n| n.has_tag_name("sentence")) {
            let mut tokens = Vec::new();
            let mut targets = Vec::new();
            for node in sentence.children().filter(|n| n.is_element()) {
                let text = node.text().unwrap_or("").trim().to_string();
                if node.has_tag_name("instance") {
                    let line = doc.text_pos_at(node.range().start).row as usize;
                    let id = node
                        .attribute("id")
                        .ok_or_else(|| Error::parse(line, "instance without id"))?;
                    let lemma = node
                        .attribute("lemma")
                        .ok_or_else(|| Error::parse(line, format!("{id}: missing lemma")))?;
                    let pos: Pos = node
                        .attribute("pos")
                        .ok_or_else(|| Error::parse(line, format!("{id}: missing pos")))?
                        .parse()
                        .map_err(|e: Error| Error::parse(line, format!("{id}: {e}")))?;
                    targets.push((id.to_string(), lemma.to_string(), pos, tokens.len()));
                }
                if node.has_tag_name("instance") || node.has_tag_name("wf") {
                    tokens.push(text);
                }
            }
            for (id, lemma, pos, index) in targets {
                instances.push(Instance {
                    id,
                    language: language.clone(),
                    tokens: tokens.clone(),
                    span: (index, index),
                    lemma,
                    pos,
                    gold: Vec::new(),
                });
            }
        }
        let corpus = Corpus::new(instances)?;
        match keys {
            Some(keys) => corpus.with_gold(keys),
            None => Ok(corpus),
        }
    }

    /// Attaches keyfile senses to the matching instances.
    pub fn with_gold(mut self, mut keys: HashMap<String, Vec<SenseKey>>) -> Result<Self> {
        for inst in &mut self.instances {
            if let Some(gold) = keys.remove(&inst.id) {
                inst.gold = gold;
            }
        }
        match keys.keys().min() {
            Some(id) => Err(Error::Integrity(format!(
                "keyfile references unknown instance {id}"
            ))),
            None => Ok(self),
        }
    }

    /// Concatenates corpora, keeping instance order.
    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a Corpus>) -> Result<Corpus> {
        Corpus::new(
            parts
                .into_iter()
                .flat_map(|c| c.instances.iter().cloned())
                .collect(),
        )
    }
}

/// Reads `id key [key ...]` lines into a map. Duplicate ids are an error.
pub fn read_keyfile(reader: impl BufRead) -> Result<HashMap<String, Vec<SenseKey>>> {
    let mut keys = HashMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::parse(lineno, e.to_string()))?;
        let mut fields = line.split_whitespace();
        let Some(id) = fields.next() else { continue };
        let senses = fields
            .map(SenseKey::new)
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::parse(lineno, e.to_string()))?;
        if senses.is_empty() {
            return Err(Error::parse(lineno, format!("{id}: no sense keys")));
        }
        if keys.insert(id.to_string(), senses).is_some() {
            return Err(Error::parse(lineno, format!("duplicate id {id}")));
        }
    }
    Ok(keys)
}

pub fn load_keyfile(path: impl AsRef<Path>) -> Result<HashMap<String, Vec<SenseKey>>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_keyfile(BufReader::new(file))
}

/// Dataset statistics in the shape of the usual WSD test-set table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub instance_count: usize,
    /// Mean candidate-set size over distinct `(lemma, pos, language)` types.
    pub word_avg_senses: f64,
    /// Mean candidate-set size over instances.
    pub instance_avg_senses: f64,
    /// Ids of instances with no inventory entry; excluded from the averages.
    pub missing: Vec<String>,
}

pub fn compute_stats(corpus: &Corpus, inv: &Inventory) -> CorpusStats {
    let mut missing = Vec::new();
    let mut types: HashMap<EntryKey, usize> = HashMap::new();
    let mut instance_total = 0usize;
    let mut counted = 0usize;
    for inst in corpus.instances() {
        let k = inv.candidates(&inst.lemma, inst.pos, &inst.language).len();
        if k == 0 {
            missing.push(inst.id.clone());
            continue;
        }
        instance_total += k;
        counted += 1;
        types.insert(inst.entry_key(), k);
    }
    if !missing.is_empty() {
        log::warn!(
            "{} instance(s) have no inventory entry and were excluded from averages",
            missing.len()
        );
    }
    let mean = |sum: usize, n: usize| if n == 0 { 0.0 } else { sum as f64 / n as f64 };
    CorpusStats {
        instance_count: corpus.len(),
        word_avg_senses: mean(types.values().sum(), types.len()),
        instance_avg_senses: mean(instance_total, counted),
        missing,
    }
}

/// Randomly partitions `corpus` into `(dev, test)` with
/// `|dev| = round(fraction * |corpus|)`. Both parts keep corpus order.
pub fn sample_dev_split(corpus: &Corpus, fraction: f64, seed: u64) -> Result<(Corpus, Corpus)> {
    if corpus.is_empty() {
        return Err(Error::Argument("cannot split an empty corpus".into()));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Argument(format!("dev fraction {fraction} not in (0, 1)")));
    }
    let n = corpus.len();
    if fraction * (n as f64) < 1.0 {
        return Err(Error::Argument(format!(
            "dev fraction {fraction} of {n} instances selects nothing"
        )));
    }
    let dev_size = ((fraction * n as f64).round() as usize).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_dev = vec![false; n];
    for &i in &order[..dev_size] {
        is_dev[i] = true;
    }
    let (dev, test): (Vec<_>, Vec<_>) = corpus
        .instances
        .iter()
        .cloned()
        .zip(is_dev)
        .partition(|(_, d)| *d);
    Ok((
        Corpus {
            instances: dev.into_iter().map(|(i, _)| i).collect(),
        },
        Corpus {
            instances: test.into_iter().map(|(i, _)| i).collect(),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inventory::{Gloss, LexicalEntry};

    fn inst(id: &str, lemma: &str) -> Instance {
        Instance {
            id: id.into(),
            language: "en".into(),
            tokens: vec!["the".into(), lemma.into(), "barked".into()],
            span: (1, 1),
            lemma: lemma.into(),
            pos: Pos::Noun,
            gold: vec![SenseKey::new("s1").unwrap()],
        }
    }

    fn inventory(words: &[(&str, usize)]) -> Inventory {
        let mut entries = Vec::new();
        let mut glosses = Vec::new();
        for (lemma, k) in words {
            let senses: Vec<SenseKey> = (0..*k)
                .map(|j| SenseKey::new(format!("{lemma}.{j}")).unwrap())
                .collect();
            for s in &senses {
                glosses.push(Gloss {
                    sense: s.clone(),
                    text: format!("gloss of {s}"),
                    source: "wordnet".into(),
                    language: "en".into(),
                });
            }
            entries.push(LexicalEntry {
                lemma: lemma.to_string(),
                pos: Pos::Noun,
                language: "en".into(),
                senses,
            });
        }
        Inventory::from_parts(entries, glosses).unwrap()
    }

    #[test]
    fn reads_two_instance_jsonl() {
        let text = r#"{"id":"a","lang":"en","tokens":["the","dog"],"span":[1,1],"lemma":"dog","pos":"NOUN","gold":["s1"]}
{"id":"b","lang":"it","tokens":["il","cane"],"span":[1,1],"lemma":"cane","pos":"NOUN","gold":[]}
"#;
        let c = Corpus::read_jsonl(text.as_bytes()).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.languages().into_iter().collect::<Vec<_>>(), vec!["en", "it"]);
    }

    #[test]
    fn span_out_of_range_is_parse_error() {
        let text = r#"{"id":"a","lang":"en","tokens":["dog"],"span":[0,1],"lemma":"dog","pos":"NOUN"}"#;
        assert!(matches!(
            Corpus::read_jsonl(text.as_bytes()),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn duplicate_id_is_integrity_error() {
        let err = Corpus::new(vec![inst("a", "dog"), inst("a", "cat")]).unwrap_err();
        assert!(matches!(err, Error::Integrity(_)));
    }

    #[test]
    fn jsonl_write_read_round_trip() {
        let c = Corpus::new(vec![inst("a", "dog"), inst("b", "cat")]).unwrap();
        let mut buf = Vec::new();
        c.write_jsonl(&mut buf).unwrap();
        let back = Corpus::read_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back, c);
        let mut again = Vec::new();
        back.write_jsonl(&mut again).unwrap();
        assert_eq!(buf, again);
    }

    const XML: &str = r#"<?xml version="1.0" encoding="UTF-8"?>
<corpus lang="de" source="toy">
<text id="d000">
<sentence id="d000.s000">
<wf lemma="der" pos="DET">Der</wf>
<instance id="d000.s000.t000" lemma="hund" pos="NOUN">Hund</instance>
<wf lemma="bellen" pos="VERB">bellt</wf>
</sentence>
</text>
</corpus>"#;

    #[test]
    fn reads_semeval_xml_with_keys() {
        let keys = read_keyfile("d000.s000.t000 bn:1n bn:2n\n".as_bytes()).unwrap();
        let c = Corpus::from_semeval_xml(XML, Some(keys)).unwrap();
        assert_eq!(c.len(), 1);
        let i = &c.instances()[0];
        assert_eq!(i.language, "de");
        assert_eq!(i.tokens, vec!["Der", "Hund", "bellt"]);
        assert_eq!(i.span, (1, 1));
        assert_eq!(i.gold.len(), 2);
    }

    #[test]
    fn keyfile_with_unknown_id_is_integrity_error() {
        let keys = read_keyfile("d000.s000.t999 bn:1n\n".as_bytes()).unwrap();
        assert!(matches!(
            Corpus::from_semeval_xml(XML, Some(keys)),
            Err(Error::Integrity(_))
        ));
    }

    #[test]
    fn stats_single_word() {
        let inv = inventory(&[("dog", 3)]);
        let c = Corpus::new(vec![inst("a", "dog"), inst("b", "dog")]).unwrap();
        let s = compute_stats(&c, &inv);
        assert_eq!(
            (s.instance_count, s.word_avg_senses, s.instance_avg_senses),
            (2, 3.0, 3.0)
        );
    }

    #[test]
    fn stats_two_words_hand_computed() {
        // A: 2 senses, 1 instance; B: 4 senses, 3 instances.
        // word avg = (2 + 4) / 2, instance avg = (2 + 3 * 4) / 4
        let inv = inventory(&[("a", 2), ("b", 4)]);
        let c = Corpus::new(vec![
            inst("1", "a"),
            inst("2", "b"),
            inst("3", "b"),
            inst("4", "b"),
        ])
        .unwrap();
        let s = compute_stats(&c, &inv);
        assert_eq!(s.instance_count, 4);
        assert_eq!(s.word_avg_senses, 3.0);
        assert_eq!(s.instance_avg_senses, 3.5);
        assert!(s.missing.is_empty());
    }

    #[test]
    fn stats_exclude_missing_entries() {
        let inv = inventory(&[("a", 2)]);
        let c = Corpus::new(vec![inst("1", "a"), inst("2", "zzz")]).unwrap();
        let s = compute_stats(&c, &inv);
        assert_eq!(s.instance_count, 2);
        assert_eq!(s.instance_avg_senses, 2.0);
        assert_eq!(s.missing, vec!["2".to_string()]);
    }

    fn hundred() -> Corpus {
        Corpus::new((0..100).map(|i| inst(&format!("i{i}"), "dog")).collect()).unwrap()
    }

    #[test]
    fn dev_split_sizes_and_disjointness() {
        let c = hundred();
        let (dev, test) = sample_dev_split(&c, 0.1, 42).unwrap();
        assert_eq!((dev.len(), test.len()), (10, 90));
        let dev_ids: HashSet<_> = dev.instances().iter().map(|i| &i.id).collect();
        assert!(test.instances().iter().all(|i| !dev_ids.contains(&i.id)));
    }

    #[test]
    fn dev_split_is_seeded() {
        let c = hundred();
        assert_eq!(
            sample_dev_split(&c, 0.1, 42).unwrap(),
            sample_dev_split(&c, 0.1, 42).unwrap()
        );
        let (a, _) = sample_dev_split(&c, 0.1, 1).unwrap();
        let (b, _) = sample_dev_split(&c, 0.1, 2).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn dev_split_golden_ids() {
        let (dev, _) = sample_dev_split(&hundred(), 0.1, 42).unwrap();
        let ids: Vec<&str> = dev.instances().iter().map(|i| i.id.as_str()).collect();
        let golden = include_str!("../tests/fixtures/dev_split_seed42.txt");
        assert_eq!(ids.join("\n"), golden.trim());
    }

    #[test]
    fn dev_split_argument_errors() {
        assert!(sample_dev_split(&Corpus::default(), 0.1, 0).is_err());
        assert!(sample_dev_split(&hundred(), 0.001, 0).is_err());
        assert!(sample_dev_split(&hundred(), 1.0, 0).is_err());
    }
}
