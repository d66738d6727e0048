//! Reliability (BLEU) and security (S-BLEU) scores.
//!
//! Both scores share the brevity term `min(1 - l_ref / l_cand, 0)` and a
//! weighted sum of log n-gram precisions. S-BLEU credits only the n-grams
//! Bob recovered that Eve did not.

use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NgramProfile<T: Hash + Eq> {
    pub n: usize,
    pub counts: HashMap<Vec<T>, usize>,
}

impl<T: Hash + Eq> NgramProfile<T> {
    pub fn get(&self, gram: &[T]) -> usize
    where
        T: Clone,
    {
        self.counts.get(gram).copied().unwrap_or(0)
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }
}

/// Sliding-window n-gram counts; empty when the sequence is shorter than `n`.
pub fn ngram_counts<T: Hash + Eq + Clone>(tokens: &[T], n: usize) -> Result<NgramProfile<T>> {
    if n < 1 {
        return Err(Error::Config("n-gram order must be at least 1".into()));
    }
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w.to_vec()).or_insert(0) += 1;
        }
    }
    Ok(NgramProfile { n, counts })
}

/// Per-order weights `u_n`, stored with `u_1` first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NgramWeights(Vec<f64>);

impl NgramWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.iter().any(|&u| !(u >= 0.0) || !u.is_finite()) {
            return Err(Error::Config(format!("invalid n-gram weights {weights:?}")));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("n-gram weights sum to {sum}, expected 1")));
        }
        Ok(Self(weights))
    }

    /// `u_n = 1` for the given order, zero elsewhere.
    pub fn single(order: usize) -> Self {
        assert!(order >= 1);
        let mut w = vec![0.0; order];
        w[order - 1] = 1.0;
        Self(w)
    }

    pub fn unigram() -> Self {
        Self::single(1)
    }

    pub fn trigram() -> Self {
        Self::single(3)
    }

    /// `(n, u_n)` for every order with a positive weight.
    pub fn active(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &u)| u > 0.0)
            .map(|(i, &u)| (i + 1, u))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub score: f64,
    /// Modified (or secure) precision per active order.
    pub per_n: BTreeMap<usize, f64>,
    pub penalty: f64,
    pub weights: NgramWeights,
    /// Set when the candidate was empty and the score forced to zero.
    pub empty_candidate: bool,
}

fn brevity(ref_len: usize, cand_len: usize) -> f64 {
    (1.0 - ref_len as f64 / cand_len as f64).min(0.0)
}

fn combine(penalty: f64, per_n: &BTreeMap<usize, f64>, weights: &NgramWeights) -> f64 {
    let mut log_score = penalty;
    for (n, u) in weights.active() {
        let f = per_n[&n];
        if f <= 0.0 {
            return 0.0;
        }
        log_score += u * f.ln();
    }
    log_score.exp()
}

fn empty_report(weights: &NgramWeights) -> ScoreReport {
    ScoreReport {
        score: 0.0,
        per_n: weights.active().map(|(n, _)| (n, 0.0)).collect(),
        penalty: 0.0,
        weights: weights.clone(),
        empty_candidate: true,
    }
}

/// Sentence BLEU of candidate `s_hat` against reference `s`.
pub fn bleu<T: Hash + Eq + Clone>(s: &[T], s_hat: &[T], weights: &NgramWeights) -> ScoreReport {
    secure_score(s, s_hat, None, weights)
}

/// Sentence S-BLEU: Bob's n-gram counts are reduced by Eve's before clipping.
pub fn sbleu<T: Hash + Eq + Clone>(
    s: &[T],
    s_hat_bob: &[T],
    s_hat_eve: &[T],
    weights: &NgramWeights,
) -> ScoreReport {
    secure_score(s, s_hat_bob, Some(s_hat_eve), weights)
}

fn secure_score<T: Hash + Eq + Clone>(
    s: &[T],
    cand: &[T],
    eve: Option<&[T]>,
    weights: &NgramWeights,
) -> ScoreReport {
    if cand.is_empty() {
        return empty_report(weights);
    }
    let mut per_n = BTreeMap::new();
    for (n, _) in weights.active() {
        let cand_counts = ngram_counts(cand, n).expect("active orders are >= 1");
        let ref_counts = ngram_counts(s, n).expect("active orders are >= 1");
        let eve_counts = eve.map(|e| ngram_counts(e, n).expect("active orders are >= 1"));
        let denom = cand_counts.total();
        let numer: usize = cand_counts
            .counts
            .iter()
            .map(|(gram, &c)| {
                let heard = eve_counts.as_ref().map_or(0, |e| e.get(gram));
                c.saturating_sub(heard).min(ref_counts.get(gram))
            })
            .sum();
        let f = if denom == 0 {
            0.0
        } else {
            numer as f64 / denom as f64
        };
        per_n.insert(n, f);
    }
    let penalty = brevity(s.len(), cand.len());
    ScoreReport {
        score: combine(penalty, &per_n, weights),
        per_n,
        penalty,
        weights: weights.clone(),
        empty_candidate: false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    Bleu,
    Sbleu,
}

/// Arithmetic mean of sentence-level scores over `(s, s_hat_bob, s_hat_eve)` triples.
pub fn corpus_score<T: Hash + Eq + Clone>(
    triples: &[(Vec<T>, Vec<T>, Vec<T>)],
    weights: &NgramWeights,
    metric: Metric,
) -> Result<ScoreReport> {
    if triples.is_empty() {
        return Err(Error::Empty("corpus score over no sentences".into()));
    }
    let n = triples.len() as f64;
    let mut score = 0.0;
    let mut penalty = 0.0;
    let mut per_n: BTreeMap<usize, f64> = weights.active().map(|(k, _)| (k, 0.0)).collect();
    let mut any_empty = false;
    for (s, bob, eve) in triples {
        let r = match metric {
            Metric::Bleu => bleu(s, bob, weights),
            Metric::Sbleu => sbleu(s, bob, eve, weights),
        };
        score += r.score;
        penalty += r.penalty;
        any_empty |= r.empty_candidate;
        for (k, f) in r.per_n {
            *per_n.get_mut(&k).expect("same active orders") += f;
        }
    }
    per_n.values_mut().for_each(|f| *f /= n);
    Ok(ScoreReport {
        score: score / n,
        per_n,
        penalty: penalty / n,
        weights: weights.clone(),
        empty_candidate: any_empty,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn w(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn unigram_and_bigram_counts() {
        let toks = w("a b a");
        let one = ngram_counts(&toks, 1).unwrap();
        assert_eq!(one.get(&["a"]), 2);
        assert_eq!(one.get(&["b"]), 1);
        assert_eq!(one.counts.len(), 2);
        let two = ngram_counts(&toks, 2).unwrap();
        assert_eq!(two.get(&["a", "b"]), 1);
        assert_eq!(two.get(&["b", "a"]), 1);
        assert_eq!(two.counts.len(), 2);
        assert!(ngram_counts(&w("a"), 3).unwrap().counts.is_empty());
        assert!(ngram_counts(&toks, 0).is_err());
    }

    #[test]
    fn weather_example() {
        let s = w("weather is good today");
        let bob = w("weather is nice today");
        let eve = w("weather good");
        let b = bleu(&s, &bob, &NgramWeights::unigram());
        let sb = sbleu(&s, &bob, &eve, &NgramWeights::unigram());
        assert!((b.score - 0.75).abs() < 1e-12);
        assert!((sb.score - 0.5).abs() < 1e-12);
        assert_eq!(b.penalty, 0.0);
    }

    #[test]
    fn identity_and_disjoint() {
        let s = w("a b c d e");
        for order in 1..=4 {
            let r = bleu(&s, &s, &NgramWeights::single(order));
            assert!((r.score - 1.0).abs() < 1e-12);
        }
        let mixed = NgramWeights::new(vec![0.25; 4]).unwrap();
        assert!((bleu(&s, &s, &mixed).score - 1.0).abs() < 1e-12);
        assert_eq!(bleu(&w("a b c d"), &w("x y z w"), &NgramWeights::unigram()).score, 0.0);
    }

    #[test]
    fn empty_candidate_is_flagged() {
        let empty: Vec<&str> = vec![];
        let r = bleu(&w("a b"), &empty, &NgramWeights::unigram());
        assert_eq!(r.score, 0.0);
        assert!(r.empty_candidate);
    }

    #[test]
    fn sbleu_limits() {
        let s = w("the cat sat on the mat");
        let bob = w("the cat sat on a mat");
        let empty: Vec<&str> = vec![];
        let u1 = NgramWeights::unigram();
        assert_eq!(sbleu(&s, &bob, &empty, &u1), bleu(&s, &bob, &u1));
        assert_eq!(sbleu(&s, &bob, &bob, &u1).score, 0.0);
    }

    #[test]
    fn penalty_uses_reference_over_candidate() {
        // short candidate: 1 - 4/2 = -1
        let r = bleu(&w("a b c d"), &w("a b"), &NgramWeights::unigram());
        assert!((r.penalty + 1.0).abs() < 1e-15);
        assert!((r.score - (-1.0f64).exp()).abs() < 1e-12);
        // long candidate: no penalty, precision 2/4
        let r = bleu(&w("a b"), &w("a b c d"), &NgramWeights::unigram());
        assert_eq!(r.penalty, 0.0);
        assert!((r.score - 0.5).abs() < 1e-12);
    }

    #[test]
    fn clipping_limits_repeats() {
        let r = bleu(&w("the cat"), &w("the the"), &NgramWeights::unigram());
        assert!((r.score - 0.5).abs() < 1e-12);
    }

    #[test]
    fn corpus_mean() {
        let t = (w("weather is good today"), w("weather is nice today"), w("weather good"));
        let one = corpus_score(&[t.clone()], &NgramWeights::unigram(), Metric::Bleu).unwrap();
        assert!((one.score - 0.75).abs() < 1e-12);
        let ten = vec![t; 10];
        let b = corpus_score(&ten, &NgramWeights::unigram(), Metric::Bleu).unwrap();
        let sb = corpus_score(&ten, &NgramWeights::unigram(), Metric::Sbleu).unwrap();
        assert!((b.score - 0.75).abs() < 1e-12);
        assert!((sb.score - 0.5).abs() < 1e-12);
        let perfect = vec![(w("a b c"), w("a b c"), vec![]); 4];
        let p = corpus_score(&perfect, &NgramWeights::trigram(), Metric::Bleu).unwrap();
        assert!((p.score - 1.0).abs() < 1e-12);
        let none: Vec<(Vec<&str>, Vec<&str>, Vec<&str>)> = vec![];
        assert!(corpus_score(&none, &NgramWeights::unigram(), Metric::Bleu).is_err());
    }

    #[test]
    fn weight_validation() {
        assert!(NgramWeights::new(vec![0.5, 0.4]).is_err());
        assert!(NgramWeights::new(vec![]).is_err());
        assert!(NgramWeights::new(vec![-0.5, 1.5]).is_err());
        assert_eq!(NgramWeights::trigram().active().collect::<Vec<_>>(), vec![(3, 1.0)]);
    }

    fn sentence() -> impl Strategy<Value = Vec<u8>> {
        prop::collection::vec(0u8..6, 0..10)
    }

    proptest! {
        #[test]
        fn adding_to_eve_never_raises_sbleu(s in sentence(), bob in sentence(), eve in sentence(), extra in sentence()) {
            // appending keeps every existing n-gram occurrence of eve
            let mut more = eve.clone();
            more.extend_from_slice(&extra);
            for weights in [NgramWeights::unigram(), NgramWeights::trigram()] {
                let before = sbleu(&s, &bob, &eve, &weights).score;
                let after = sbleu(&s, &bob, &more, &weights).score;
                prop_assert!(after <= before + 1e-15);
            }
        }

        #[test]
        fn scores_bounded_and_dominated(s in sentence(), bob in sentence(), eve in sentence()) {
            for weights in [NgramWeights::unigram(), NgramWeights::trigram()] {
                let b = bleu(&s, &bob, &weights).score;
                let sb = sbleu(&s, &bob, &eve, &weights).score;
                prop_assert!((0.0..=1.0).contains(&b));
                prop_assert!((0.0..=1.0).contains(&sb));
                prop_assert!(sb <= b + 1e-15);
            }
        }
    }
}
