//! A small probabilistic grammar standing in for a parallel-corpus dump.

use std::collections::HashSet;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const DETERMINERS: [&str; 5] = ["the", "a", "every", "some", "this"];
const ADJECTIVES: [&str; 7] = ["small", "big", "red", "old", "quiet", "bright", "happy"];
const NOUNS: [&str; 11] = [
    "cat", "dog", "bird", "child", "teacher", "river", "house", "tree", "car", "city", "garden",
];
const TRANSITIVE: [&str; 7] = ["sees", "likes", "follows", "finds", "watches", "helps", "carries"];
const INTRANSITIVE: [&str; 3] = ["sleeps", "runs", "sings"];
const PREPOSITIONS: [&str; 4] = ["near", "in", "under", "behind"];
const ADVERBS: [&str; 6] = ["quickly", "slowly", "often", "quietly", "today", "again"];
const CONJUNCTIONS: [&str; 2] = ["and", "but"];
const INTENSIFIER: &str = "very";

/// Every word the grammar can emit.
pub fn lexicon() -> Vec<&'static str> {
    let mut words = Vec::new();
    for group in [
        &DETERMINERS[..],
        &ADJECTIVES,
        &NOUNS,
        &TRANSITIVE,
        &INTRANSITIVE,
        &PREPOSITIONS,
        &ADVERBS,
        &CONJUNCTIONS,
        &[INTENSIFIER],
    ] {
        words.extend_from_slice(group);
    }
    words
}

fn pick<R: Rng>(words: &[&'static str], rng: &mut R) -> &'static str {
    words.choose(rng).expect("word lists are non-empty")
}

fn noun_phrase<R: Rng>(out: &mut Vec<&'static str>, rng: &mut R, allow_pp: bool) {
    out.push(pick(&DETERMINERS, rng));
    if rng.random_bool(0.5) {
        if rng.random_bool(0.2) {
            out.push(INTENSIFIER);
        }
        out.push(pick(&ADJECTIVES, rng));
    }
    out.push(pick(&NOUNS, rng));
    if allow_pp && rng.random_bool(0.25) {
        out.push(pick(&PREPOSITIONS, rng));
        noun_phrase(out, rng, false);
    }
}

fn clause<R: Rng>(out: &mut Vec<&'static str>, rng: &mut R) {
    noun_phrase(out, rng, true);
    if rng.random_bool(0.7) {
        out.push(pick(&TRANSITIVE, rng));
        noun_phrase(out, rng, true);
    } else {
        out.push(pick(&INTRANSITIVE, rng));
    }
    if rng.random_bool(0.3) {
        out.push(pick(&ADVERBS, rng));
    }
}

fn sentence<R: Rng>(rng: &mut R) -> Vec<&'static str> {
    let mut out = Vec::new();
    clause(&mut out, rng);
    if rng.random_bool(0.2) {
        out.push(pick(&CONJUNCTIONS, rng));
        clause(&mut out, rng);
    }
    out
}

/// Draws `train + test` distinct sentences of `min_words..=max_words` words
/// and splits them; the two splits never share a sentence.
pub fn synthetic_corpus(train: usize, test: usize, min_words: usize, max_words: usize, seed: u64) -> Result<(Vec<String>, Vec<String>)> {
    if min_words > max_words || max_words < 3 {
        return Err(Error::Config(format!("sentence length range {min_words}..={max_words} is unusable")));
    }
    let total = train + test;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::with_capacity(total);
    let mut sentences = Vec::with_capacity(total);
    let mut attempts = 0usize;
    while sentences.len() < total {
        attempts += 1;
        if attempts > total * 1000 {
            return Err(Error::EmptyCorpus {
                min_len: min_words,
                max_len: max_words,
            });
        }
        let words = sentence(&mut rng);
        if words.len() < min_words || words.len() > max_words {
            continue;
        }
        let text = words.join(" ");
        if seen.insert(text.clone()) {
            sentences.push(text);
        }
    }
    let test_split = sentences.split_off(train);
    Ok((sentences, test_split))
}
