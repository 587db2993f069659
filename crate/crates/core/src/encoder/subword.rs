use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Id of the reserved first position (the sentence-level summary slot).
pub const FIRST_ID: usize = 0;

/// Hash vocabulary over character chunks of at most `max_piece` characters.
/// Ids `1..=buckets` are hash buckets; id 0 is reserved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashVocab {
    pub buckets: usize,
    pub seed: u64,
    pub max_piece: usize,
}

impl HashVocab {
    pub fn size(&self) -> usize {
        self.buckets + 1
    }

    /// Subword ids of one whitespace token (lowercased, chunked left to
    /// right). Word-initial chunks hash differently from continuations.
    pub fn pieces(&self, token: &str) -> Vec<usize> {
        let chars: Vec<char> = token.to_lowercase().chars().collect();
        if chars.is_empty() {
            return vec![self.bucket("^", "")];
        }
        chars
            .chunks(self.max_piece.max(1))
            .enumerate()
            .map(|(k, chunk)| {
                let piece: String = chunk.iter().collect();
                self.bucket(if k == 0 { "^" } else { "#" }, &piece)
            })
            .collect()
    }

    fn bucket(&self, marker: &str, piece: &str) -> usize {
        // FNV-1a, seeded
        let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ self.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        for b in marker.bytes().chain(piece.bytes()) {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        1 + (h % self.buckets as u64) as usize
    }
}

/// Subword ids of a sequence (reserved first position included) and, per
/// input token, the rows its subwords occupy. Tokens cut by truncation map
/// to `None`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubwordSequence {
    pub ids: Vec<usize>,
    pub token_rows: Vec<Option<Range<usize>>>,
}

impl SubwordSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Builds the subword sequence for `tokens`, truncated to `max_len` rows.
///
/// Without a span the tail is cut. With a span, whole tokens are kept
/// around the span, growing outwards alternately right then left, until
/// the budget is spent; if the span alone does not fit, that is an error.
pub fn tokenize(
    vocab: &HashVocab,
    tokens: &[String],
    span: Option<(usize, usize)>,
    max_len: usize,
) -> Result<SubwordSequence> {
    if tokens.is_empty() {
        return Err(Error::Argument("cannot encode an empty token list".into()));
    }
    let budget = max_len.saturating_sub(1);
    let pieces: Vec<Vec<usize>> = tokens.iter().map(|t| vocab.pieces(t)).collect();
    let total: usize = pieces.iter().map(Vec::len).sum();

    let keep: Vec<bool> = if total <= budget {
        vec![true; tokens.len()]
    } else if let Some((start, end)) = span {
        let span_len: usize = pieces[start..=end].iter().map(Vec::len).sum();
        if span_len > budget {
            return Err(Error::Argument(format!(
                "target span needs {span_len} subwords, more than the limit of {budget}"
            )));
        }
        let mut keep = vec![false; tokens.len()];
        keep[start..=end].iter_mut().for_each(|k| *k = true);
        let mut used = span_len;
        let (mut left, mut right) = (start, end + 1);
        let mut grow_right = true;
        loop {
            let candidate = if grow_right && right < tokens.len() {
                Some(right)
            } else if left > 0 {
                Some(left - 1)
            } else if right < tokens.len() {
                Some(right)
            } else {
                None
            };
            let Some(c) = candidate else { break };
            if used + pieces[c].len() > budget {
                break;
            }
            used += pieces[c].len();
            keep[c] = true;
            if c == right {
                right += 1;
            } else {
                left -= 1;
            }
            grow_right = !grow_right;
        }
        log::warn!("context of {total} subwords truncated to {used} around the target");
        keep
    } else {
        log::warn!("sequence of {total} subwords truncated to {budget}");
        let mut used = 0;
        pieces
            .iter()
            .map(|p| {
                let fits = used + p.len() <= budget;
                if fits {
                    used += p.len();
                } else {
                    used = budget;
                }
                fits
            })
            .collect()
    };

    let mut ids = vec![FIRST_ID];
    let mut token_rows = Vec::with_capacity(tokens.len());
    for (p, k) in pieces.iter().zip(&keep) {
        if *k {
            let start = ids.len();
            ids.extend_from_slice(p);
            token_rows.push(Some(start..ids.len()));
        } else {
            token_rows.push(None);
        }
    }
    if ids.len() == 1 {
        // a single over-long token with no span: keep its leading chunks
        let p = &pieces[0];
        ids.extend_from_slice(&p[..budget.min(p.len())]);
        token_rows[0] = Some(1..ids.len());
    }
    Ok(SubwordSequence { ids, token_rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> HashVocab {
        HashVocab {
            buckets: 8192,
            seed: 7,
            max_piece: 4,
        }
    }

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn chunks_of_four_and_case_folding() {
        let v = vocab();
        assert_eq!(v.pieces("running").len(), 2);
        assert_eq!(v.pieces("dog").len(), 1);
        assert_eq!(v.pieces("Dog"), v.pieces("dog"));
        assert!(v.pieces("antidisestablishment").iter().all(|&id| (1..=8192).contains(&id)));
        // word-initial and continuation chunks differ
        assert_ne!(v.pieces("abcdabcd")[0], v.pieces("abcdabcd")[1]);
    }

    #[test]
    fn rows_follow_the_reserved_position() {
        let seq = tokenize(&vocab(), &toks("the running dog"), None, 128).unwrap();
        assert_eq!(seq.ids[0], FIRST_ID);
        assert_eq!(seq.len(), 1 + 1 + 2 + 1);
        assert_eq!(seq.token_rows, vec![Some(1..2), Some(2..4), Some(4..5)]);
    }

    #[test]
    fn tail_truncation_without_span() {
        let seq = tokenize(&vocab(), &toks("a b c d e"), None, 4).unwrap();
        assert_eq!(seq.len(), 4);
        assert_eq!(seq.token_rows[3], None);
        assert_eq!(seq.token_rows[2], Some(3..4));
    }

    #[test]
    fn centered_truncation_keeps_target() {
        let seq = tokenize(&vocab(), &toks("a b c d e f g"), Some((5, 5)), 4).unwrap();
        assert_eq!(seq.len(), 4);
        assert!(seq.token_rows[5].is_some());
        let kept: Vec<usize> = (0..7).filter(|&i| seq.token_rows[i].is_some()).collect();
        assert_eq!(kept, vec![4, 5, 6]);
    }

    #[test]
    fn span_that_cannot_fit_is_an_error() {
        let err = tokenize(&vocab(), &toks("a abcdefghijkl b"), Some((1, 1)), 3);
        assert!(err.is_err());
        assert!(tokenize(&vocab(), &[], None, 8).is_err());
    }
}
