//! Seeded synthetic WSD task with a source language, a cipher "target"
//! language reached through a word dictionary, and cue-word glosses.
//!
//! Every sense owns two cue words. A context holds the target lemma, both
//! cues of its sense and a few filler words in random order, so the sense
//! is recoverable from context but not from the lemma alone.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::corpus::{sample_dev_split, Corpus, Instance};
use crate::error::{Error, Result};
use crate::inventory::{Gloss, Inventory, InventoryFormat, LexicalEntry, Pos, SenseKey};
use crate::transfer::DictionaryProvider;

const LEMMAS: [&str; 20] = [
    "bank", "plant", "bass", "crane", "spring", "match", "bat", "bark", "seal", "pitch", "ring",
    "club", "court", "date", "fan", "jam", "key", "mole", "nail", "palm",
];

const FILLERS: [&str; 16] = [
    "the", "a", "of", "it", "was", "on", "with", "we", "saw", "near", "that", "old", "big", "then",
    "there", "today",
];

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

#[derive(Debug, Clone, Serialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub source_lang: String,
    pub target_lang: String,
    pub train_instances: usize,
    pub eval_pool: usize,
    pub dev_instances: usize,
    /// Probability of the first sense; the rest share the remainder.
    pub first_sense_weight: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 13,
            source_lang: "en".into(),
            target_lang: "xx".into(),
            train_instances: 200,
            eval_pool: 70,
            dev_instances: 20,
            first_sense_weight: 0.45,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthTask {
    pub config: SynthConfig,
    pub inventory: Inventory,
    /// Sense-annotated source-language training corpus.
    pub train: Corpus,
    /// Source-to-target word dictionary.
    pub dictionary: Vec<(String, String)>,
    /// Target-language model-selection split.
    pub dev: Corpus,
    /// Target-language held-out split.
    pub test: Corpus,
}

struct Sense {
    key: SenseKey,
    cues: [String; 2],
}

/// Letter rotation by 13: a bijective spelling change, so every source
/// word has a distinct target counterpart.
pub fn cipher(word: &str) -> String {
    word.chars()
        .map(|c| match c {
            'a'..='z' => (((c as u8 - b'a' + 13) % 26) + b'a') as char,
            other => other,
        })
        .collect()
}

fn pseudo_word(rng: &mut ChaCha8Rng) -> String {
    let mut w = String::with_capacity(6);
    for _ in 0..3 {
        w.push(*CONSONANTS.choose(rng).expect("non-empty") as char);
        w.push(*VOWELS.choose(rng).expect("non-empty") as char);
    }
    w
}

impl SynthTask {
    pub fn generate(config: SynthConfig) -> Result<Self> {
        if config.dev_instances == 0 || config.dev_instances >= config.eval_pool {
            return Err(Error::Config("dev split must be a proper part of the eval pool".into()));
        }
        if !(config.first_sense_weight > 0.0 && config.first_sense_weight < 1.0) {
            return Err(Error::Config("first_sense_weight must be in (0, 1)".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut used: std::collections::HashSet<String> =
            LEMMAS.iter().chain(FILLERS.iter()).map(|s| s.to_string()).collect();
        let mut senses: Vec<Vec<Sense>> = Vec::with_capacity(LEMMAS.len());
        for (l, lemma) in LEMMAS.iter().enumerate() {
            let count = 2 + l % 3;
            let mut own = Vec::with_capacity(count);
            for j in 0..count {
                let mut cue = || loop {
                    let w = pseudo_word(&mut rng);
                    if used.insert(w.clone()) {
                        break w;
                    }
                };
                let cues = [cue(), cue()];
                own.push(Sense {
                    key: SenseKey::new(format!("{lemma}.n.{:02}", j + 1))?,
                    cues,
                });
            }
            senses.push(own);
        }

        let mut entries = Vec::new();
        let mut glosses = Vec::new();
        for (lemma, own) in LEMMAS.iter().zip(&senses) {
            let keys: Vec<SenseKey> = own.iter().map(|s| s.key.clone()).collect();
            for (lang, form) in [
                (config.source_lang.as_str(), lemma.to_string()),
                (config.target_lang.as_str(), cipher(lemma)),
            ] {
                entries.push(LexicalEntry {
                    lemma: form,
                    pos: Pos::Noun,
                    language: lang.to_string(),
                    senses: keys.clone(),
                });
            }
            for s in own {
                glosses.push(Gloss {
                    sense: s.key.clone(),
                    text: format!("a {} {} kind of {lemma}", s.cues[0], s.cues[1]),
                    source: "wordnet".into(),
                    language: config.source_lang.clone(),
                });
            }
        }
        let inventory = Inventory::from_parts(entries, glosses)?;

        let mut vocabulary: Vec<String> = used.into_iter().collect();
        vocabulary.sort();
        let dictionary: Vec<(String, String)> =
            vocabulary.iter().map(|w| (w.clone(), cipher(w))).collect();

        let train = Corpus::new(
            (0..config.train_instances)
                .map(|k| sample(&mut rng, &senses, &config, &format!("{}.d{k:03}", config.source_lang), false))
                .collect(),
        )?;
        let pool = Corpus::new(
            (0..config.eval_pool)
                .map(|k| sample(&mut rng, &senses, &config, &format!("{}.t{k:03}", config.target_lang), true))
                .collect(),
        )?;
        let fraction = config.dev_instances as f64 / config.eval_pool as f64;
        let (dev, test) = sample_dev_split(&pool, fraction, config.seed)?;
        Ok(SynthTask {
            config,
            inventory,
            train,
            dictionary,
            dev,
            test,
        })
    }

    pub fn provider(&self) -> DictionaryProvider {
        DictionaryProvider::new(self.dictionary.iter().cloned())
    }

    /// Writes `inventory.tsv`, `train.jsonl`, `dict.tsv`, `dev.jsonl` and
    /// `test.jsonl` into `dir`.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.inventory.save(dir.join("inventory.tsv"), InventoryFormat::Tsv)?;
        self.train.save(dir.join("train.jsonl"))?;
        self.dev.save(dir.join("dev.jsonl"))?;
        self.test.save(dir.join("test.jsonl"))?;
        let dict: String = self
            .dictionary
            .iter()
            .map(|(s, t)| format!("{s}\t{t}\n"))
            .collect();
        let path = dir.join("dict.tsv");
        fs::write(&path, dict).map_err(|e| Error::io(&path, e))
    }
}

fn sample(
    rng: &mut ChaCha8Rng,
    senses: &[Vec<Sense>],
    config: &SynthConfig,
    id: &str,
    target: bool,
) -> Instance {
    let l = rng.gen_range(0..LEMMAS.len());
    let own = &senses[l];
    let j = if rng.gen::<f64>() < config.first_sense_weight {
        0
    } else {
        rng.gen_range(1..own.len())
    };
    let mut tokens: Vec<String> = (0..rng.gen_range(3..=5))
        .map(|_| FILLERS.choose(rng).expect("non-empty").to_string())
        .collect();
    tokens.extend(own[j].cues.iter().cloned());
    tokens.push(LEMMAS[l].to_string());
    tokens.shuffle(rng);
    let position = tokens.iter().position(|t| t == LEMMAS[l]).expect("lemma inserted");
    let (language, tokens, lemma) = if target {
        (
            config.target_lang.clone(),
            tokens.iter().map(|t| cipher(t)).collect(),
            cipher(LEMMAS[l]),
        )
    } else {
        (config.source_lang.clone(), tokens, LEMMAS[l].to_string())
    };
    Instance {
        id: id.to_string(),
        language,
        tokens,
        span: (position, position),
        lemma,
        pos: Pos::Noun,
        gold: vec![own[j].key.clone()],
    }
}
