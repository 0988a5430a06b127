//! Pieces shared by both decoders: prepared training examples, accuracy
//! tallies, search options and beam bookkeeping.

use std::fmt;

use thiserror::Error;

use crate::amr::{AmrGraph, ConceptId};
use crate::corpus::{reserved, AlignedExample};
use crate::model::{DecoderParams, Model, Net};
use crate::neural::{NeuralError, Tape, Var};
use crate::oracle::{extract_trace, OracleError, OracleTrace};
use crate::transition::{Action, TransitionError};
use crate::{conditioned, joint};

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("beam search finished without a complete hypothesis")]
    NoCompleteHypothesis,
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Transition(#[from] TransitionError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

/// An aligned example with its gold trace.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub graph: AmrGraph,
    pub tokens: Vec<String>,
    pub trace: OracleTrace,
}

impl Prepared {
    pub fn new(example: &AlignedExample, k: usize) -> Result<Self, OracleError> {
        Ok(Prepared {
            graph: example.graph.clone(),
            tokens: example.tokens.clone(),
            trace: extract_trace(example, k)?,
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Tally {
    pub correct: usize,
    pub total: usize,
}

impl Tally {
    pub fn record(&mut self, ok: bool) {
        self.total += 1;
        if ok {
            self.correct += 1;
        }
    }

    /// Fraction correct; `None` when nothing was predicted.
    pub fn rate(&self) -> Option<f64> {
        (self.total > 0).then(|| self.correct as f64 / self.total as f64)
    }

    fn add(&mut self, other: Tally) {
        self.correct += other.correct;
        self.total += other.total;
    }
}

/// Teacher-forced per-step accuracies by sequence type.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Accuracy {
    pub w: Tally,
    pub a: Tally,
    pub i_beta: Tally,
    pub i_eta: Tally,
    pub r: Tally,
}

impl Accuracy {
    pub fn add(&mut self, other: &Accuracy) {
        self.w.add(other.w);
        self.a.add(other.a);
        self.i_beta.add(other.i_beta);
        self.i_eta.add(other.i_eta);
        self.r.add(other.r);
    }

    pub fn columns(&self) -> [(&'static str, Tally); 5] {
        [
            ("w", self.w),
            ("a", self.a),
            ("i_beta", self.i_beta),
            ("i_eta", self.i_eta),
            ("r", self.r),
        ]
    }

    /// Lowest rate over the sequence types that were predicted.
    pub fn min_rate(&self) -> f64 {
        self.columns()
            .iter()
            .filter_map(|(_, t)| t.rate())
            .fold(1.0, f64::min)
    }
}

impl fmt::Display for Accuracy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .columns()
            .iter()
            .map(|(name, t)| match t.rate() {
                Some(r) => format!("{name}={r:.4}"),
                None => format!("{name}=-"),
            })
            .collect();
        f.write_str(&parts.join(" "))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GenerateOptions {
    pub beam: usize,
    /// Added to a hypothesis score per English word.
    pub len_reward: f64,
    /// Word limit for a whole sentence (conditioned) or one span (joint).
    pub max_words: usize,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        GenerateOptions {
            beam: 5,
            len_reward: 0.0,
            max_words: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generated {
    pub words: Vec<String>,
    pub actions: Vec<Action>,
    /// Concepts in the order they were pushed.
    pub order: Vec<ConceptId>,
    /// Words generated for each pushed concept, in push order. Empty for
    /// the conditioned decoder.
    pub spans: Vec<Vec<String>>,
    /// Total log-probability of the chosen hypothesis.
    pub log_prob: f64,
}

impl Generated {
    pub fn sentence(&self) -> String {
        self.words.join(" ")
    }
}

/// Teacher-forced loss node and accuracies for the model's decoder.
pub fn loss(tape: &mut Tape, net: &Net, ex: &Prepared) -> Result<(Var, Accuracy), DecodeError> {
    match &net.decoder {
        DecoderParams::Conditioned(p) => conditioned::loss(tape, net, p, ex),
        DecoderParams::Joint(p) => joint::loss(tape, net, p, ex),
    }
}

/// Loss value and accuracies without a backward pass.
pub fn evaluate(model: &Model, ex: &Prepared) -> Result<(f64, Accuracy), DecodeError> {
    let mut tape = Tape::new(&model.store);
    let (l, acc) = loss(&mut tape, &model.net, ex)?;
    Ok((tape.value(l)[0], acc))
}

pub fn generate(model: &Model, g: &AmrGraph, opts: &GenerateOptions) -> Result<Generated, DecodeError> {
    let mut tape = Tape::new(&model.store);
    match &model.net.decoder {
        DecoderParams::Conditioned(p) => conditioned::generate(&mut tape, &model.net, p, g, opts),
        DecoderParams::Joint(p) => joint::generate(&mut tape, &model.net, p, g, opts),
    }
}

/// Output mask over the vocabulary: reserved symbols are excluded except
/// `allowed`.
pub(crate) fn output_mask(vocab_len: usize, allowed: usize) -> Vec<bool> {
    (0..vocab_len)
        .map(|id| id >= reserved::ALL.len() || id == allowed)
        .collect()
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Sum of loss terms as one scalar node.
pub(crate) fn total(tape: &mut Tape, terms: &[Var]) -> Result<Var, NeuralError> {
    if terms.is_empty() {
        Ok(tape.zeros(1))
    } else {
        tape.add(terms)
    }
}

/// Keeps the `beam` best items by `key`, highest first. Ties keep
/// insertion order.
pub(crate) fn cut<T>(mut items: Vec<T>, beam: usize, key: impl Fn(&T) -> f64) -> Vec<T> {
    items.sort_by(|a, b| key(b).total_cmp(&key(a)));
    items.truncate(beam);
    items
}

/// Indices of the `n` largest finite entries, highest first.
pub(crate) fn top_n(xs: &[f64], n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..xs.len()).filter(|&i| xs[i].is_finite()).collect();
    idx.sort_by(|&a, &b| xs[b].total_cmp(&xs[a]));
    idx.truncate(n);
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cut_is_stable_on_ties() {
        let kept = cut(vec![(0, 1.0), (1, 2.0), (2, 1.0), (3, 1.0)], 3, |x| x.1);
        assert_eq!(kept, [(1, 2.0), (0, 1.0), (2, 1.0)]);
    }

    #[test]
    fn top_n_skips_masked_entries() {
        assert_eq!(top_n(&[0.1, f64::NEG_INFINITY, 0.5, 0.3], 5), [2, 3, 0]);
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }

    #[test]
    fn accuracy_rates() {
        let mut a = Accuracy::default();
        a.w.record(true);
        a.w.record(false);
        a.a.record(true);
        assert_eq!(a.w.rate(), Some(0.5));
        assert_eq!(a.r.rate(), None);
        assert_eq!(a.min_rate(), 0.5);
        assert_eq!(a.to_string(), "w=0.5000 a=1.0000 i_beta=- i_eta=- r=-");
    }
}
