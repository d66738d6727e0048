//! Text ingestion, the shared vocabulary and fixed-length padded batches.
//!
//! The vocabulary is the public background knowledge: Alice, Bob and Eve all
//! hold the same one. Ids 0..4 are reserved for the special tokens.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const START: usize = 1;
pub const END: usize = 2;
pub const UNK: usize = 3;

const SPECIALS: [&str; 4] = ["<pad>", "<start>", "<end>", "<unk>"];

/// Lowercases, drops punctuation and collapses whitespace.
pub fn normalize(text: &str) -> String {
    text.chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect::<String>()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Reads one sentence per line and keeps those whose normalized word count
/// lies in `min_len..=max_len`.
pub fn load_corpus(path: impl AsRef<Path>, min_len: usize, max_len: usize) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    filter_sentences(text.lines(), min_len, max_len)
}

/// Normalizes and length-filters an in-memory list of lines.
pub fn filter_sentences<'a>(
    lines: impl IntoIterator<Item = &'a str>,
    min_len: usize,
    max_len: usize,
) -> Result<Vec<String>> {
    let kept: Vec<String> = lines
        .into_iter()
        .map(normalize)
        .filter(|s| {
            let n = s.split_whitespace().count();
            n >= min_len && n <= max_len
        })
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptyCorpus { min_len, max_len });
    }
    Ok(kept)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
}

impl Vocabulary {
    /// Keeps the `max_vocab - 4` most frequent tokens; ties go to the
    /// lexicographically smaller token.
    pub fn build<S: AsRef<str>>(sentences: &[S], max_vocab: usize) -> Result<Self> {
        if max_vocab < 5 {
            return Err(Error::Config(format!(
                "max_vocab must be at least 5, got {max_vocab}"
            )));
        }
        if sentences.is_empty() {
            return Err(Error::Empty("cannot build a vocabulary from no sentences".into()));
        }
        let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
        for s in sentences {
            for w in s.as_ref().split_whitespace() {
                *freq.entry(w).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = freq
            .into_iter()
            .filter(|(w, _)| !SPECIALS.contains(w))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(max_vocab - SPECIALS.len());

        let id_to_token: Vec<String> = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(ranked.into_iter().map(|(w, _)| w.to_string()))
            .collect();
        Ok(Self::from_tokens(id_to_token))
    }

    fn from_tokens(id_to_token: Vec<String>) -> Self {
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self {
            token_to_id,
            id_to_token,
        }
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }

    /// Non-special tokens in id order.
    pub fn words(&self) -> &[String] {
        &self.id_to_token[SPECIALS.len()..]
    }

    /// Writes `token<TAB>id` lines, specials first.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        for (id, tok) in self.id_to_token.iter().enumerate() {
            writeln!(out, "{tok}\t{id}").map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut tokens = Vec::new();
        for (line_no, line) in text.lines().enumerate() {
            let (tok, id) = line
                .split_once('\t')
                .ok_or_else(|| Error::Config(format!("vocabulary line {}: missing tab", line_no + 1)))?;
            let id: usize = id
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("vocabulary line {}: bad id", line_no + 1)))?;
            if id != tokens.len() {
                return Err(Error::Config(format!(
                    "vocabulary line {}: expected id {}, found {id}",
                    line_no + 1,
                    tokens.len()
                )));
            }
            tokens.push(tok.to_string());
        }
        if tokens.len() < SPECIALS.len() || tokens[..SPECIALS.len()] != SPECIALS {
            return Err(Error::Config("vocabulary file must start with the four specials".into()));
        }
        Ok(Self::from_tokens(tokens))
    }
}

/// A sentence as `[start, w.., end, pad..]` in exactly `L` slots.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
    /// Number of non-pad slots, start and end markers included.
    pub length: usize,
}

impl TokenSequence {
    /// Builds a sequence from decoded ids that already begin with `START`.
    /// Everything after the first `END` (or `PAD`) becomes padding.
    pub fn from_decoded(raw: &[usize], slots: usize) -> Self {
        let mut ids = vec![PAD; slots];
        let mut length = 0;
        for (i, &id) in raw.iter().take(slots).enumerate() {
            if i > 0 && id == PAD {
                break;
            }
            ids[i] = id;
            length = i + 1;
            if i > 0 && id == END {
                break;
            }
        }
        Self { ids, length }
    }

    /// Word ids with all special markers stripped; stops at the first end or pad.
    pub fn word_ids(&self) -> Vec<usize> {
        self.ids
            .iter()
            .skip(1)
            .take_while(|&&id| id != END && id != PAD)
            .copied()
            .filter(|&id| id != START)
            .collect()
    }

    pub fn words<'v>(&self, vocab: &'v Vocabulary) -> Vec<&'v str> {
        self.word_ids()
            .into_iter()
            .map(|id| vocab.token(id).unwrap_or("<unk>"))
            .collect()
    }
}

/// Maps a sentence to `[start, ids.., end, pad..]`, truncating to `slots - 2` words.
pub fn encode_sentence(text: &str, vocab: &Vocabulary, slots: usize) -> TokenSequence {
    assert!(slots >= 3, "a sequence needs at least 3 slots, got {slots}");
    let normalized = normalize(text);
    let mut ids = Vec::with_capacity(slots);
    ids.push(START);
    ids.extend(
        normalized
            .split_whitespace()
            .take(slots - 2)
            .map(|w| vocab.id(w).unwrap_or(UNK)),
    );
    ids.push(END);
    let length = ids.len();
    ids.resize(slots, PAD);
    TokenSequence { ids, length }
}

pub fn decode_sentence(seq: &TokenSequence, vocab: &Vocabulary) -> String {
    seq.words(vocab).join(" ")
}

/// `B` sequences stacked into a `[B, L]` id matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentenceBatch {
    pub ids: Array2<usize>,
}

impl SentenceBatch {
    pub fn from_sequences(seqs: &[&TokenSequence]) -> Result<Self> {
        let Some(first) = seqs.first() else {
            return Err(Error::Shape("a batch needs at least one sentence".into()));
        };
        let slots = first.ids.len();
        if let Some(bad) = seqs.iter().find(|s| s.ids.len() != slots) {
            return Err(Error::Shape(format!(
                "sequence of {} slots in a batch of {slots}-slot sequences",
                bad.ids.len()
            )));
        }
        let flat: Vec<usize> = seqs.iter().flat_map(|s| s.ids.iter().copied()).collect();
        let ids = Array2::from_shape_vec((seqs.len(), slots), flat)
            .map_err(|e| Error::Shape(e.to_string()))?;
        Ok(Self { ids })
    }

    pub fn batch_size(&self) -> usize {
        self.ids.nrows()
    }

    pub fn slots(&self) -> usize {
        self.ids.ncols()
    }

    pub fn sequence(&self, row: usize) -> TokenSequence {
        TokenSequence::from_decoded(&self.ids.row(row).to_vec(), self.slots())
    }

    /// Row-major flattened ids.
    pub fn flat_ids(&self) -> Vec<usize> {
        self.ids.iter().copied().collect()
    }

    /// Next-token targets: slot t predicts slot t+1; the final slot predicts
    /// nothing. `None` marks pad targets excluded from the loss.
    pub fn next_token_targets(&self) -> Vec<Option<usize>> {
        let (b, l) = self.ids.dim();
        let mut out = Vec::with_capacity(b * l);
        for row in self.ids.rows() {
            for t in 0..l {
                let next = if t + 1 < l { row[t + 1] } else { PAD };
                out.push((next != PAD).then_some(next));
            }
        }
        out
    }
}

/// One epoch of shuffled full batches; the trailing partial batch is dropped.
pub struct BatchIter<'a> {
    dataset: &'a [TokenSequence],
    order: Vec<usize>,
    batch_size: usize,
    cursor: usize,
}

pub fn batch_iterator(dataset: &[TokenSequence], batch_size: usize, seed: u64) -> Result<BatchIter<'_>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    if dataset.len() < batch_size {
        return Err(Error::Config(format!(
            "dataset of {} sentences is smaller than the batch size {batch_size}",
            dataset.len()
        )));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(BatchIter {
        dataset,
        order,
        batch_size,
        cursor: 0,
    })
}

impl BatchIter<'_> {
    pub fn batches_per_epoch(&self) -> usize {
        self.order.len() / self.batch_size
    }
}

impl Iterator for BatchIter<'_> {
    type Item = SentenceBatch;

    fn next(&mut self) -> Option<SentenceBatch> {
        if self.cursor + self.batch_size > self.order.len() {
            return None;
        }
        let picked: Vec<&TokenSequence> = self.order[self.cursor..self.cursor + self.batch_size]
            .iter()
            .map(|&i| &self.dataset[i])
            .collect();
        self.cursor += self.batch_size;
        Some(SentenceBatch::from_sequences(&picked).expect("dataset sequences share one slot count"))
    }
}
