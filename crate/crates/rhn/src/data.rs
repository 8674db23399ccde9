//! Corpus ingestion: PTB-style whitespace tokenization, vocabulary
//! construction, contiguous batching for truncated BPTT, and the synthetic
//! copy task used as a desk-scale long-range-dependency benchmark.

use crate::error::{Error, Result};
use crate::rng::Rng;
use std::collections::HashMap;

pub const EOS: &str = "<eos>";
pub const UNK: &str = "<unk>";

/// Whitespace tokenization with each newline mapped to an `<eos>` token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for line in text.split('\n') {
        let words: Vec<&str> = line.split_whitespace().collect();
        if words.is_empty() && line.is_empty() {
            // Trailing empty segment after the final newline, or a blank line.
            continue;
        }
        out.extend(words.iter().map(|w| w.to_string()));
        out.push(EOS.to_string());
    }
    out
}

/// Inverse of `tokenize` for canonical text (single-space separated tokens,
/// newline-terminated lines).
pub fn detokenize(tokens: &[String]) -> String {
    let mut out = String::new();
    let mut at_line_start = true;
    for tok in tokens {
        if tok == EOS {
            out.push('\n');
            at_line_start = true;
        } else {
            if !at_line_start {
                out.push(' ');
            }
            out.push_str(tok);
            at_line_start = false;
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct Vocab {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
    unk_id: usize,
}

impl Vocab {
    /// Build from training tokens. With `cap = None` the vocabulary is the
    /// set of distinct tokens (PTB files are pre-tokenized against a fixed
    /// vocabulary). With `cap = Some(v)` the most frequent v−1 tokens are
    /// kept — ties broken lexicographically — plus `<unk>`.
    ///
    /// Ids are assigned in frequency-then-lexicographic order; `<unk>` takes
    /// its earned position if it appears in the data, else the last id.
    pub fn build(tokens: &[String], cap: Option<usize>) -> Result<Vocab> {
        if tokens.is_empty() {
            return Err(Error::contract("Vocab::build", "empty token stream"));
        }
        let mut counts: HashMap<&str, u64> = HashMap::new();
        for t in tokens {
            *counts.entry(t.as_str()).or_insert(0) += 1;
        }
        let mut ranked: Vec<(&str, u64)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));

        let mut kept: Vec<String> = match cap {
            None => ranked.iter().map(|(t, _)| t.to_string()).collect(),
            Some(v) => {
                if v < 2 {
                    return Err(Error::contract("Vocab::build", "cap must be at least 2"));
                }
                ranked
                    .iter()
                    .filter(|(t, _)| *t != UNK)
                    .take(v - 1)
                    .map(|(t, _)| t.to_string())
                    .collect()
            }
        };
        if !kept.iter().any(|t| t == UNK) {
            kept.push(UNK.to_string());
        }
        let token_to_id: HashMap<String, usize> =
            kept.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        let unk_id = token_to_id[UNK];
        Ok(Vocab { token_to_id, id_to_token: kept, unk_id })
    }

    pub fn size(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn unk_id(&self) -> usize {
        self.unk_id
    }

    pub fn id(&self, token: &str) -> usize {
        *self.token_to_id.get(token).unwrap_or(&self.unk_id)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(|s| s.as_str())
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.id_to_token[i].clone()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

#[derive(Debug, Clone)]
pub struct TokenCorpus {
    pub ids: Vec<usize>,
    pub split: Split,
}

impl TokenCorpus {
    pub fn from_text(text: &str, vocab: &Vocab, split: Split) -> TokenCorpus {
        TokenCorpus { ids: vocab.encode(&tokenize(text)), split }
    }
}

/// One truncated-BPTT step: `batch_size` parallel (input, target) windows.
/// Targets are inputs shifted by one corpus position.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBatch {
    pub inputs: Vec<Vec<usize>>,
    pub targets: Vec<Vec<usize>>,
}

/// Split the corpus into `batch_size` contiguous streams and cut each stream
/// into consecutive windows. Tail tokens that do not fill a window are
/// dropped. Deterministic; no token appears in two streams.
pub fn batchify(ids: &[usize], batch_size: usize, window: usize) -> Result<Vec<SequenceBatch>> {
    if batch_size == 0 || window == 0 {
        return Err(Error::contract("batchify", "batch_size and window must be positive"));
    }
    if ids.len() < batch_size * (window + 1) {
        return Err(Error::contract(
            "batchify",
            format!(
                "corpus of {} tokens is too small for batch {} and window {}",
                ids.len(),
                batch_size,
                window
            ),
        ));
    }
    let chunk = ids.len() / batch_size;
    let n_windows = (chunk - 1) / window;
    let mut batches = Vec::with_capacity(n_windows);
    for w in 0..n_windows {
        let mut inputs = Vec::with_capacity(batch_size);
        let mut targets = Vec::with_capacity(batch_size);
        for b in 0..batch_size {
            let start = b * chunk + w * window;
            inputs.push(ids[start..start + window].to_vec());
            targets.push(ids[start + 1..start + window + 1].to_vec());
        }
        batches.push(SequenceBatch { inputs, targets });
    }
    Ok(batches)
}

/// Alphabet token names for the copy task.
pub fn copy_task_symbol(i: usize) -> String {
    format!("a{i}")
}

pub const COPY_MARK: &str = "<mark>";
pub const COPY_QUERY: &str = "<query>";

/// Long-range dependency generator. Each sequence is one line:
/// `<mark> payload filler×lag <query> payload`. Payload and filler are drawn
/// uniformly from the alphabet, so the only learnable structure at the query
/// position is remembering the payload across the lag.
pub fn gen_copy_task(
    n_sequences: usize,
    lag: usize,
    alphabet: usize,
    seed: u64,
) -> Result<(String, String)> {
    if lag == 0 || alphabet < 2 || n_sequences == 0 {
        return Err(Error::contract(
            "gen_copy_task",
            "need lag >= 1, alphabet >= 2, n_sequences >= 1",
        ));
    }
    let root = Rng::new(seed);
    let gen = |n: usize, rng: &mut Rng| {
        let mut text = String::new();
        for _ in 0..n {
            let payload = copy_task_symbol(rng.below(alphabet as u64) as usize);
            text.push_str(COPY_MARK);
            text.push(' ');
            text.push_str(&payload);
            for _ in 0..lag {
                text.push(' ');
                text.push_str(&copy_task_symbol(rng.below(alphabet as u64) as usize));
            }
            text.push(' ');
            text.push_str(COPY_QUERY);
            text.push(' ');
            text.push_str(&payload);
            text.push('\n');
        }
        text
    };
    let train = gen(n_sequences, &mut root.stream(1));
    let valid = gen((n_sequences / 10).max(1), &mut root.stream(2));
    Ok((train, valid))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_round_trip() {
        let text = "a b c\nd e\n";
        let toks = tokenize(text);
        assert_eq!(toks, vec!["a", "b", "c", EOS, "d", "e", EOS]);
        assert_eq!(detokenize(&toks), text);
    }

    #[test]
    fn vocab_tiny_hand_case() {
        // "a b a c", cap 3: keep a (freq 2) and b (tie with c, lexicographic),
        // then <unk>.
        let toks = tokenize("a b a c");
        let toks: Vec<String> = toks.into_iter().filter(|t| t != EOS).collect();
        let v = Vocab::build(&toks, Some(3)).unwrap();
        assert_eq!(v.size(), 3);
        assert_eq!(v.id("a"), 0);
        assert_eq!(v.id("b"), 1);
        assert_eq!(v.id(UNK), 2);
        assert_eq!(v.id("c"), v.unk_id());
        assert_eq!(v.id("never-seen"), v.unk_id());
    }

    #[test]
    fn vocab_empty_rejected() {
        assert!(Vocab::build(&[], None).is_err());
    }

    #[test]
    fn vocab_ids_dense_and_bijective() {
        let toks = tokenize("x y z x y x\nw\n");
        let v = Vocab::build(&toks, None).unwrap();
        for i in 0..v.size() {
            let t = v.token(i).unwrap();
            assert_eq!(v.id(t), i);
        }
    }

    #[test]
    fn batchify_hand_enumeration() {
        let ids: Vec<usize> = (0..10).collect();
        let batches = batchify(&ids, 1, 3).unwrap();
        assert_eq!(batches.len(), 3);
        assert_eq!(batches[0].inputs[0], vec![0, 1, 2]);
        assert_eq!(batches[0].targets[0], vec![1, 2, 3]);
        assert_eq!(batches[1].inputs[0], vec![3, 4, 5]);
        assert_eq!(batches[1].targets[0], vec![4, 5, 6]);
        assert_eq!(batches[2].inputs[0], vec![6, 7, 8]);
        assert_eq!(batches[2].targets[0], vec![7, 8, 9]);
    }

    #[test]
    fn batchify_second_stream_offset() {
        let ids: Vec<usize> = (0..20).collect();
        let batches = batchify(&ids, 2, 4).unwrap();
        assert_eq!(batches[0].inputs[1][0], 10);
    }

    #[test]
    fn batchify_coverage_formula() {
        // target-token count == batch * floor((len/batch - 1)/window) * window,
        // checked by enumeration over a grid of shapes.
        for len in [10usize, 23, 40, 97] {
            for batch in [1usize, 2, 3] {
                for window in [2usize, 5] {
                    let ids: Vec<usize> = (0..len).collect();
                    match batchify(&ids, batch, window) {
                        Ok(batches) => {
                            let total: usize = batches
                                .iter()
                                .flat_map(|b| b.targets.iter())
                                .map(|t| t.len())
                                .sum();
                            let expect = batch * (((len / batch) - 1) / window) * window;
                            assert_eq!(total, expect, "len={len} batch={batch} window={window}");
                            // no token in two streams
                            for b in &batches {
                                for (i, row) in b.inputs.iter().enumerate() {
                                    for (j, other) in b.inputs.iter().enumerate() {
                                        if i != j {
                                            assert!(row.iter().all(|t| !other.contains(t)));
                                        }
                                    }
                                }
                            }
                        }
                        Err(_) => assert!(len < batch * (window + 1)),
                    }
                }
            }
        }
    }

    #[test]
    fn batchify_too_small() {
        assert!(batchify(&[1, 2, 3], 2, 3).is_err());
    }

    #[test]
    fn copy_task_structure() {
        let (train, valid) = gen_copy_task(20, 5, 4, 99).unwrap();
        assert!(!valid.is_empty());
        for line in train.lines() {
            let toks: Vec<&str> = line.split_whitespace().collect();
            assert_eq!(toks.len(), 5 + 4); // mark, payload, 5 filler, query, payload
            assert_eq!(toks[0], COPY_MARK);
            assert_eq!(toks[toks.len() - 2], COPY_QUERY);
            assert_eq!(toks[1], toks[toks.len() - 1], "payload must repeat after query");
        }
    }

    #[test]
    fn copy_task_payload_uniformity_chi_square() {
        let alphabet = 16;
        let n = 10_000;
        let (train, _) = gen_copy_task(n, 3, alphabet, 7).unwrap();
        let mut counts = vec![0u64; alphabet];
        for line in train.lines() {
            let payload = line.split_whitespace().nth(1).unwrap();
            let idx: usize = payload[1..].parse().unwrap();
            counts[idx] += 1;
        }
        let expected = n as f64 / alphabet as f64;
        let chi2: f64 =
            counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // df = 15; p = 0.001 critical value is 37.70
        assert!(chi2 < 37.70, "chi-square {chi2:.2} too large for uniform payloads");
    }

    #[test]
    fn copy_task_determinism() {
        let a = gen_copy_task(50, 10, 8, 1).unwrap();
        let b = gen_copy_task(50, 10, 8, 1).unwrap();
        assert_eq!(a, b);
    }
}
