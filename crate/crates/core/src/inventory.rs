//! Multilingual sense inventory.
//!
//! An inventory maps `(lemma, pos, language)` to a ranked list of
//! language-independent sense keys, and each sense key to one or more
//! glosses collected from labeled sources. Rank order is whatever the
//! inventory file says; index 0 is the most common sense.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default gloss source preference: WordNet definitions first.
pub const DEFAULT_SOURCE_PREFERENCE: &[&str] = &["wordnet"];

/// Opaque sense identifier (WordNet sense key, BabelNet synset id, ...).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SenseKey(String);

impl SenseKey {
    pub fn new(id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if id.trim().is_empty() || id.chars().any(char::is_whitespace) {
            return Err(Error::Argument(format!("invalid sense key {id:?}")));
        }
        Ok(SenseKey(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SenseKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Open-class part of speech tags used by the SemEval WSD data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Pos {
    #[serde(rename = "NOUN")]
    Noun,
    #[serde(rename = "VERB")]
    Verb,
    #[serde(rename = "ADJ")]
    Adj,
    #[serde(rename = "ADV")]
    Adv,
}

impl Pos {
    pub fn as_str(self) -> &'static str {
        match self {
            Pos::Noun => "NOUN",
            Pos::Verb => "VERB",
            Pos::Adj => "ADJ",
            Pos::Adv => "ADV",
        }
    }
}

impl FromStr for Pos {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "NOUN" => Ok(Pos::Noun),
            "VERB" => Ok(Pos::Verb),
            "ADJ" => Ok(Pos::Adj),
            "ADV" => Ok(Pos::Adv),
            other => Err(Error::Argument(format!("unsupported POS tag {other:?}"))),
        }
    }
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A definition of one sense, from one source, in one language.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gloss {
    pub sense: SenseKey,
    pub text: String,
    pub source: String,
    pub language: String,
}

/// Lookup key for an inventory entry.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EntryKey {
    pub lemma: String,
    pub pos: Pos,
    pub language: String,
}

impl EntryKey {
    pub fn new(lemma: impl Into<String>, pos: Pos, language: impl Into<String>) -> Self {
        EntryKey {
            lemma: lemma.into(),
            pos,
            language: language.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexicalEntry {
    pub lemma: String,
    pub pos: Pos,
    pub language: String,
    /// Rank order: index 0 is the most common sense.
    pub senses: Vec<SenseKey>,
}

impl LexicalEntry {
    pub fn key(&self) -> EntryKey {
        EntryKey::new(self.lemma.clone(), self.pos, self.language.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InventoryFormat {
    Tsv,
    JsonLines,
}

impl FromStr for InventoryFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tsv" => Ok(InventoryFormat::Tsv),
            "jsonl" | "json-lines" => Ok(InventoryFormat::JsonLines),
            other => Err(Error::Argument(format!("unknown inventory format {other:?}"))),
        }
    }
}

impl InventoryFormat {
    /// Guess from the file extension, defaulting to json-lines.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("tsv") => InventoryFormat::Tsv,
            _ => InventoryFormat::JsonLines,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Record {
    Entry {
        lemma: String,
        pos: Pos,
        lang: String,
        senses: Vec<SenseKey>,
    },
    Gloss {
        sense: SenseKey,
        source: String,
        lang: String,
        text: String,
    },
}

/// Immutable sense inventory.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Inventory {
    entries: IndexMap<EntryKey, LexicalEntry>,
    glosses: IndexMap<SenseKey, Vec<Gloss>>,
}

impl Inventory {
    /// Builds an inventory and checks its integrity: every referenced sense
    /// must carry at least one gloss.
    pub fn from_parts(
        entries: impl IntoIterator<Item = LexicalEntry>,
        glosses: impl IntoIterator<Item = Gloss>,
    ) -> Result<Self> {
        let mut inv = Inventory::default();
        for entry in entries {
            inv.insert_entry(entry, None)?;
        }
        for gloss in glosses {
            inv.insert_gloss(gloss, None)?;
        }
        inv.check_integrity()?;
        Ok(inv)
    }

    fn insert_entry(&mut self, entry: LexicalEntry, line: Option<usize>) -> Result<()> {
        let fail = |msg: String| match line {
            Some(line) => Error::parse(line, msg),
            None => Error::Integrity(msg),
        };
        if entry.lemma.is_empty() {
            return Err(fail("empty lemma".into()));
        }
        if entry.senses.is_empty() {
            return Err(fail(format!("entry {:?} has no senses", entry.lemma)));
        }
        let mut seen = HashSet::new();
        for s in &entry.senses {
            if !seen.insert(s) {
                return Err(fail(format!("entry {:?} repeats sense {s}", entry.lemma)));
            }
        }
        let key = entry.key();
        if self.entries.contains_key(&key) {
            return Err(fail(format!(
                "duplicate entry {}|{}|{}",
                key.lemma, key.pos, key.language
            )));
        }
        self.entries.insert(key, entry);
        Ok(())
    }

    fn insert_gloss(&mut self, gloss: Gloss, line: Option<usize>) -> Result<()> {
        if gloss.text.trim().is_empty() {
            let msg = format!("empty gloss text for {}", gloss.sense);
            return Err(match line {
                Some(line) => Error::parse(line, msg),
                None => Error::Integrity(msg),
            });
        }
        self.glosses.entry(gloss.sense.clone()).or_default().push(gloss);
        Ok(())
    }

    fn check_integrity(&self) -> Result<()> {
        for entry in self.entries.values() {
            for s in &entry.senses {
                if !self.glosses.contains_key(s) {
                    return Err(Error::Integrity(format!(
                        "sense {s} referenced by {}|{}|{} has no gloss",
                        entry.lemma, entry.pos, entry.language
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, format: InventoryFormat) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(BufReader::new(file), format)
    }

    pub fn read(reader: impl BufRead, format: InventoryFormat) -> Result<Self> {
        let mut inv = Inventory::default();
        for (idx, line) in reader.lines().enumerate() {
            let lineno = idx + 1;
            let line = line.map_err(|e| Error::parse(lineno, e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let record = match format {
                InventoryFormat::JsonLines => serde_json::from_str::<Record>(&line)
                    .map_err(|e| Error::parse(lineno, e.to_string()))?,
                InventoryFormat::Tsv => parse_tsv_record(&line)
                    .map_err(|e| Error::parse(lineno, e.to_string()))?,
            };
            match record {
                Record::Entry {
                    lemma,
                    pos,
                    lang,
                    senses,
                } => inv.insert_entry(
                    LexicalEntry {
                        lemma,
                        pos,
                        language: lang,
                        senses,
                    },
                    Some(lineno),
                )?,
                Record::Gloss {
                    sense,
                    source,
                    lang,
                    text,
                } => inv.insert_gloss(
                    Gloss {
                        sense,
                        text,
                        source,
                        language: lang,
                    },
                    Some(lineno),
                )?,
            }
        }
        inv.check_integrity()?;
        Ok(inv)
    }

    pub fn save(&self, path: impl AsRef<Path>, format: InventoryFormat) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write(&mut w, format).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Writes all entries, then all glosses, each group in insertion order.
    pub fn write(&self, w: &mut impl Write, format: InventoryFormat) -> std::io::Result<()> {
        for e in self.entries.values() {
            match format {
                InventoryFormat::JsonLines => {
                    let rec = Record::Entry {
                        lemma: e.lemma.clone(),
                        pos: e.pos,
                        lang: e.language.clone(),
                        senses: e.senses.clone(),
                    };
                    writeln!(w, "{}", serde_json::to_string(&rec)?)?;
                }
                InventoryFormat::Tsv => {
                    let senses: Vec<&str> = e.senses.iter().map(SenseKey::as_str).collect();
                    writeln!(
                        w,
                        "entry\t{}\t{}\t{}\t{}",
                        e.lemma,
                        e.pos,
                        e.language,
                        senses.join(",")
                    )?;
                }
            }
        }
        for g in self.glosses.values().flatten() {
            match format {
                InventoryFormat::JsonLines => {
                    let rec = Record::Gloss {
                        sense: g.sense.clone(),
                        source: g.source.clone(),
                        lang: g.language.clone(),
                        text: g.text.clone(),
                    };
                    writeln!(w, "{}", serde_json::to_string(&rec)?)?;
                }
                InventoryFormat::Tsv => {
                    writeln!(
                        w,
                        "gloss\t{}\t{}\t{}\t{}",
                        g.sense, g.source, g.language, g.text
                    )?;
                }
            }
        }
        Ok(())
    }

    /// Candidate senses in rank order; empty when the entry is unknown.
    pub fn candidates(&self, lemma: &str, pos: Pos, language: &str) -> &[SenseKey] {
        self.entry(lemma, pos, language)
            .map(|e| e.senses.as_slice())
            .unwrap_or(&[])
    }

    pub fn entry(&self, lemma: &str, pos: Pos, language: &str) -> Option<&LexicalEntry> {
        self.entries.get(&EntryKey::new(lemma, pos, language))
    }

    pub fn most_common_sense(&self, lemma: &str, pos: Pos, language: &str) -> Option<&SenseKey> {
        self.candidates(lemma, pos, language).first()
    }

    /// Gloss of `sense` from the earliest source in `source_preference`.
    /// Falls back to the first gloss in file order when no preferred source
    /// is available.
    pub fn gloss_of<S: AsRef<str>>(
        &self,
        sense: &SenseKey,
        source_preference: &[S],
    ) -> Result<&Gloss> {
        let glosses = self
            .glosses
            .get(sense)
            .filter(|g| !g.is_empty())
            .ok_or_else(|| Error::Lookup(format!("unknown sense {sense}")))?;
        for src in source_preference {
            if let Some(g) = glosses.iter().find(|g| g.source == src.as_ref()) {
                return Ok(g);
            }
        }
        Ok(&glosses[0])
    }

    /// Resolves one gloss for every sense under the given preference.
    pub fn resolve_glosses<S: AsRef<str>>(&self, source_preference: &[S]) -> GlossTable {
        let selected = self
            .glosses
            .keys()
            .map(|k| {
                let g = self
                    .gloss_of(k, source_preference)
                    .expect("every stored sense has a gloss");
                (k.clone(), g.clone())
            })
            .collect();
        GlossTable { selected }
    }

    pub fn entries(&self) -> impl Iterator<Item = &LexicalEntry> {
        self.entries.values()
    }

    pub fn glosses(&self, sense: &SenseKey) -> &[Gloss] {
        self.glosses.get(sense).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn senses(&self) -> impl Iterator<Item = &SenseKey> {
        self.glosses.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn parse_tsv_record(line: &str) -> Result<Record> {
    let fields: Vec<&str> = line.split('\t').collect();
    match fields.first().copied() {
        Some("entry") => {
            if fields.len() != 5 {
                return Err(Error::Argument(format!(
                    "entry line needs 5 fields, got {}",
                    fields.len()
                )));
            }
            let senses = fields[4]
                .split(',')
                .map(|s| SenseKey::new(s.trim()))
                .collect::<Result<Vec<_>>>()?;
            Ok(Record::Entry {
                lemma: fields[1].to_string(),
                pos: fields[2].parse()?,
                lang: fields[3].to_string(),
                senses,
            })
        }
        Some("gloss") => {
            if fields.len() != 5 {
                return Err(Error::Argument(format!(
                    "gloss line needs 5 fields, got {}",
                    fields.len()
                )));
            }
            Ok(Record::Gloss {
                sense: SenseKey::new(fields[1])?,
                source: fields[2].to_string(),
                lang: fields[3].to_string(),
                text: fields[4].to_string(),
            })
        }
        other => Err(Error::Argument(format!("unknown record kind {other:?}"))),
    }
}

/// One selected gloss per sense, after source-preference resolution.
#[derive(Debug, Clone, Default)]
pub struct GlossTable {
    selected: IndexMap<SenseKey, Gloss>,
}

impl GlossTable {
    pub fn get(&self, sense: &SenseKey) -> Option<&Gloss> {
        self.selected.get(sense)
    }

    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&SenseKey, &Gloss)> {
        self.selected.iter()
    }
}
