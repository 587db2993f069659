//! WSD scoring: precision/recall/F1 over keyed predictions, the
//! most-common-sense baseline, and the MCS/LCS split analysis.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Instance};
use crate::error::{Error, Result};
use crate::inventory::{Inventory, SenseKey};
use crate::model::PredictionRecord;

/// Scores in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub attempted: usize,
    pub correct: usize,
    pub total: usize,
}

impl EvalResult {
    pub fn from_counts(correct: usize, attempted: usize, total: usize) -> Self {
        let pct = |num: usize, den: usize| {
            if den == 0 {
                0.0
            } else {
                100.0 * num as f64 / den as f64
            }
        };
        let precision = pct(correct, attempted);
        let recall = pct(correct, total);
        let f1 = if precision == recall {
            precision
        } else if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        EvalResult {
            precision,
            recall,
            f1,
            attempted,
            correct,
            total,
        }
    }
}

/// Scores of the most-common-sense and least-common-sense parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitResult {
    pub mcs: EvalResult,
    pub lcs: EvalResult,
}

impl SplitResult {
    pub fn total(&self) -> usize {
        self.mcs.total + self.lcs.total
    }
}

/// `(instance id, predicted sense)` pairs.
pub type Predictions = Vec<(String, SenseKey)>;

/// Assignable predictions of a prediction run; unassignable ones are left
/// out and so count as unattempted.
pub fn predictions_from_records(records: &[PredictionRecord]) -> Predictions {
    records
        .iter()
        .filter_map(|r| r.predicted.clone().map(|p| (r.id.clone(), p)))
        .collect()
}

/// Reads a prediction keyfile; only the first key on each line is used.
pub fn read_predictions(reader: impl BufRead) -> Result<Predictions> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::parse(idx + 1, e.to_string()))?;
        let mut fields = line.split_whitespace();
        let Some(id) = fields.next() else { continue };
        let key = fields
            .next()
            .ok_or_else(|| Error::parse(idx + 1, format!("{id}: no sense key")))?;
        let key = SenseKey::new(key).map_err(|e| Error::parse(idx + 1, e.to_string()))?;
        out.push((id.to_string(), key));
    }
    Ok(out)
}

pub fn write_predictions(preds: &Predictions, w: &mut impl Write) -> std::io::Result<()> {
    for (id, key) in preds {
        writeln!(w, "{id} {key}")?;
    }
    Ok(())
}

/// An instance is correct when its predicted sense is in its gold set.
pub fn score_f1(gold: &Corpus, predictions: &[(String, SenseKey)]) -> Result<EvalResult> {
    let by_id: HashMap<&str, &Instance> =
        gold.instances().iter().map(|i| (i.id.as_str(), i)).collect();
    let mut seen = HashSet::new();
    let mut correct = 0;
    for (id, sense) in predictions {
        let inst = by_id
            .get(id.as_str())
            .ok_or_else(|| Error::Lookup(format!("prediction for unknown instance {id}")))?;
        if !seen.insert(id.as_str()) {
            return Err(Error::Integrity(format!("duplicate prediction for {id}")));
        }
        if inst.is_gold(sense) {
            correct += 1;
        }
    }
    Ok(EvalResult::from_counts(correct, seen.len(), gold.len()))
}

/// Most-common-sense predictions; instances without an entry are skipped.
pub fn mcs_predictions(gold: &Corpus, inv: &Inventory) -> Predictions {
    gold.instances()
        .iter()
        .filter_map(|i| {
            inv.most_common_sense(&i.lemma, i.pos, &i.language)
                .map(|s| (i.id.clone(), s.clone()))
        })
        .collect()
}

pub fn baseline_mcs(gold: &Corpus, inv: &Inventory) -> Result<EvalResult> {
    score_f1(gold, &mcs_predictions(gold, inv))
}

/// Instances whose gold set contains the rank-0 sense go to the MCS part;
/// everything else, including instances missing from the inventory, goes
/// to the LCS part.
pub fn split_mcs_lcs(gold: &Corpus, inv: &Inventory) -> Result<(Corpus, Corpus)> {
    let mut mcs = Vec::new();
    let mut lcs = Vec::new();
    let mut missing = 0;
    for inst in gold.instances() {
        match inv.most_common_sense(&inst.lemma, inst.pos, &inst.language) {
            Some(first) if inst.is_gold(first) => mcs.push(inst.clone()),
            Some(_) => lcs.push(inst.clone()),
            None => {
                missing += 1;
                lcs.push(inst.clone());
            }
        }
    }
    if missing > 0 {
        log::warn!("{missing} instance(s) missing from the inventory placed in the LCS part");
    }
    Ok((Corpus::new(mcs)?, Corpus::new(lcs)?))
}

pub fn evaluate_by_split(
    gold: &Corpus,
    predictions: &[(String, SenseKey)],
    inv: &Inventory,
) -> Result<SplitResult> {
    // unknown ids are an error for the whole run, not silently dropped
    score_f1(gold, predictions)?;
    let (mcs, lcs) = split_mcs_lcs(gold, inv)?;
    let restrict = |part: &Corpus| -> Predictions {
        let ids: HashSet<&str> = part.instances().iter().map(|i| i.id.as_str()).collect();
        predictions
            .iter()
            .filter(|(id, _)| ids.contains(id.as_str()))
            .cloned()
            .collect()
    };
    Ok(SplitResult {
        mcs: score_f1(&mcs, &restrict(&mcs))?,
        lcs: score_f1(&lcs, &restrict(&lcs))?,
    })
}

/// One row of a results report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ReportEntry {
    Overall(EvalResult),
    Split(SplitResult),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Jsonl,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "markdown" | "md" | "markdown-table" => Ok(ReportFormat::Markdown),
            "jsonl" => Ok(ReportFormat::Jsonl),
            other => Err(Error::Argument(format!("unknown report format {other:?}"))),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ReportLine {
    run: String,
    #[serde(flatten)]
    entry: ReportEntry,
}

/// Serializes results in insertion order. Markdown output holds one table
/// for overall results and one for split results, whichever are present.
pub fn emit_report(results: &IndexMap<String, ReportEntry>, format: ReportFormat) -> Result<String> {
    if results.is_empty() {
        return Err(Error::Argument("no results to report".into()));
    }
    let mut out = String::new();
    match format {
        ReportFormat::Jsonl => {
            for (run, entry) in results {
                let line = ReportLine {
                    run: run.clone(),
                    entry: *entry,
                };
                out.push_str(&serde_json::to_string(&line)?);
                out.push('\n');
            }
        }
        ReportFormat::Markdown => {
            let overall: Vec<_> = results
                .iter()
                .filter_map(|(r, e)| match e {
                    ReportEntry::Overall(x) => Some((r, x)),
                    ReportEntry::Split(_) => None,
                })
                .collect();
            let split: Vec<_> = results
                .iter()
                .filter_map(|(r, e)| match e {
                    ReportEntry::Split(x) => Some((r, x)),
                    ReportEntry::Overall(_) => None,
                })
                .collect();
            if !overall.is_empty() {
                out.push_str("| Run | P | R | F1 | Attempted | Correct | Total |\n");
                out.push_str("|---|---:|---:|---:|---:|---:|---:|\n");
                for (run, r) in overall {
                    let _ = writeln!(
                        out,
                        "| {run} | {:.2} | {:.2} | {:.2} | {} | {} | {} |",
                        r.precision, r.recall, r.f1, r.attempted, r.correct, r.total
                    );
                }
            }
            if !split.is_empty() {
                if !out.is_empty() {
                    out.push('\n');
                }
                out.push_str("| Run | MCS F1 | LCS F1 | MCS n | LCS n |\n");
                out.push_str("|---|---:|---:|---:|---:|\n");
                for (run, s) in split {
                    let _ = writeln!(
                        out,
                        "| {run} | {:.2} | {:.2} | {} | {} |",
                        s.mcs.f1, s.lcs.f1, s.mcs.total, s.lcs.total
                    );
                }
            }
        }
    }
    Ok(out)
}

pub fn read_report_jsonl(text: &str) -> Result<IndexMap<String, ReportEntry>> {
    let mut out = IndexMap::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ReportLine =
            serde_json::from_str(line).map_err(|e| Error::parse(idx + 1, e.to_string()))?;
        out.insert(parsed.run, parsed.entry);
    }
    Ok(out)
}
