//! Corpus BLEU, BLEU by graph size, and counts over the action space.

use std::collections::HashMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::amr::ConceptId;
use crate::decode::Accuracy;
use crate::transition::{ParserConfiguration, System};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("{candidates} candidates but {references} references")]
    LengthMismatch { candidates: usize, references: usize },
    #[error("value for n = {n} does not fit in 64 bits")]
    Overflow { n: u32 },
}

pub const MAX_ORDER: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct BleuScore {
    pub bleu: f64,
    /// Clipped n-gram matches and candidate n-gram totals, n = 1..=4.
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
    pub brevity_penalty: f64,
    pub candidate_len: usize,
    pub reference_len: usize,
}

impl BleuScore {
    /// Modified n-gram precision for `n` in 1..=4.
    pub fn precision(&self, n: usize) -> f64 {
        let (m, t) = (self.matches[n - 1], self.totals[n - 1]);
        if t == 0 {
            0.0
        } else {
            m as f64 / t as f64
        }
    }
}

fn ngrams(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut out = HashMap::new();
    if tokens.len() >= n {
        for g in tokens.windows(n) {
            *out.entry(g).or_insert(0) += 1;
        }
    }
    out
}

/// Corpus-level BLEU-4 with one reference per candidate: clipped n-gram
/// precisions pooled over the corpus, uniform weights, brevity penalty and
/// no smoothing. Tokens are compared case-sensitively.
pub fn bleu(candidates: &[Vec<String>], references: &[Vec<String>]) -> Result<BleuScore, EvalError> {
    if candidates.len() != references.len() {
        return Err(EvalError::LengthMismatch {
            candidates: candidates.len(),
            references: references.len(),
        });
    }
    if candidates.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    let mut matches = [0; MAX_ORDER];
    let mut totals = [0; MAX_ORDER];
    let mut c_len = 0;
    let mut r_len = 0;
    for (cand, refr) in candidates.iter().zip(references) {
        c_len += cand.len();
        r_len += refr.len();
        for n in 1..=MAX_ORDER {
            let rc = ngrams(refr, n);
            for (g, count) in ngrams(cand, n) {
                matches[n - 1] += count.min(rc.get(g).copied().unwrap_or(0));
                totals[n - 1] += count;
            }
        }
    }
    let brevity_penalty = if c_len == 0 {
        0.0
    } else if c_len > r_len {
        1.0
    } else {
        (1.0 - r_len as f64 / c_len as f64).exp()
    };
    let bleu = if matches.contains(&0) {
        0.0
    } else {
        let log_p: f64 = (0..MAX_ORDER)
            .map(|i| (matches[i] as f64 / totals[i] as f64).ln())
            .sum::<f64>()
            / MAX_ORDER as f64;
        brevity_penalty * log_p.exp()
    };
    Ok(BleuScore {
        bleu,
        matches,
        totals,
        brevity_penalty,
        candidate_len: c_len,
        reference_len: r_len,
    })
}

/// `C_n = (2n choose n) / (n + 1)`.
pub fn catalan(n: u32) -> Result<u64, EvalError> {
    let mut c: u64 = 1;
    for i in 0..u64::from(n) {
        // C_{i+1} = C_i * 2(2i+1) / (i+2), exact at every step.
        let next = u128::from(c) * u128::from(2 * (2 * i + 1)) / u128::from(i + 2);
        c = u64::try_from(next).map_err(|_| EvalError::Overflow { n })?;
    }
    Ok(c)
}

/// Number of complete Push/Pop sequences for an `n`-vertex buffer,
/// enumerated with a single-slot cache so that index choices vanish.
pub fn count_action_skeletons(n: usize) -> u64 {
    fn walk(cfg: &ParserConfiguration) -> u64 {
        if cfg.is_terminal() {
            return 1;
        }
        cfg.legal_actions()
            .iter()
            .map(|a| walk(&cfg.apply(a).expect("legal action applies")))
            .sum()
    }
    let order: Vec<ConceptId> = (0..n).map(ConceptId).collect();
    let cfg = ParserConfiguration::new(n, Vec::new(), &order, 1, System::Simplified).expect("valid permutation");
    walk(&cfg)
}

/// A generated sentence with its reference and the size of its graph.
#[derive(Clone, Debug, PartialEq)]
pub struct SizedResult {
    pub concepts: usize,
    pub candidate: Vec<String>,
    pub reference: Vec<String>,
}

pub const BIN_WIDTH: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct SizeBin {
    /// Concept counts in `[lo, lo + BIN_WIDTH)`.
    pub lo: usize,
    pub count: usize,
    pub bleu: f64,
}

/// Corpus BLEU within each nonempty bin of graph sizes, ascending.
pub fn bin_by_size(results: &[SizedResult]) -> Vec<SizeBin> {
    let mut bins: Vec<(usize, Vec<&SizedResult>)> = Vec::new();
    for r in results {
        let lo = r.concepts / BIN_WIDTH * BIN_WIDTH;
        match bins.iter_mut().find(|(l, _)| *l == lo) {
            Some((_, v)) => v.push(r),
            None => bins.push((lo, vec![r])),
        }
    }
    bins.sort_by_key(|(lo, _)| *lo);
    bins.into_iter()
        .map(|(lo, rs)| {
            let cands: Vec<Vec<String>> = rs.iter().map(|r| r.candidate.clone()).collect();
            let refs: Vec<Vec<String>> = rs.iter().map(|r| r.reference.clone()).collect();
            SizeBin {
                lo,
                count: rs.len(),
                bleu: bleu(&cands, &refs).map_or(0.0, |s| s.bleu),
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub score: BleuScore,
    pub bins: Vec<SizeBin>,
    pub accuracy: Option<Accuracy>,
}

impl EvalReport {
    pub fn text(&self) -> String {
        let s = &self.score;
        let mut out = String::new();
        let _ = writeln!(out, "BLEU = {:.2}", 100.0 * s.bleu);
        for n in 1..=MAX_ORDER {
            let _ = writeln!(out, "p{n} = {:.4} ({}/{})", s.precision(n), s.matches[n - 1], s.totals[n - 1]);
        }
        let _ = writeln!(
            out,
            "BP = {:.4} (candidate {} / reference {})",
            s.brevity_penalty, s.candidate_len, s.reference_len
        );
        for b in &self.bins {
            let _ = writeln!(out, "size {}-{}: {} sentences, BLEU = {:.2}", b.lo, b.lo + BIN_WIDTH - 1, b.count, 100.0 * b.bleu);
        }
        if let Some(a) = &self.accuracy {
            let _ = writeln!(out, "accuracy {a}");
        }
        out
    }

    pub fn bins_csv(&self) -> String {
        let mut out = String::from("bin,count,bleu\n");
        for b in &self.bins {
            let _ = writeln!(out, "{}-{},{},{:.6}", b.lo, b.lo + BIN_WIDTH - 1, b.count, b.bleu);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn identical_corpus_scores_one() {
        let c = vec![toks("a b c d e"), toks("the cat sat on the mat")];
        let s = bleu(&c, &c).unwrap();
        assert!((s.bleu - 1.0).abs() < 1e-12);
        assert_eq!(s.brevity_penalty, 1.0);
    }

    #[test]
    fn clipping_by_hand() {
        let s = bleu(&[toks("the the the the")], &[toks("the cat sat")]).unwrap();
        // "the" appears once in the reference: 1 of 4 unigrams match.
        assert_eq!((s.matches[0], s.totals[0]), (1, 4));
        assert_eq!((s.matches[1], s.totals[1]), (0, 3));
        assert_eq!(s.bleu, 0.0);
    }

    #[test]
    fn brevity_penalty_by_hand() {
        let s = bleu(&[toks("a b c d")], &[toks("a b c d e f g h")]).unwrap();
        assert!((s.brevity_penalty - (-1.0f64).exp()).abs() < 1e-15);
        assert!((s.bleu - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        assert_eq!(bleu(&[], &[]), Err(EvalError::EmptyCorpus));
        assert!(matches!(bleu(&[toks("a")], &[]), Err(EvalError::LengthMismatch { .. })));
        assert_eq!(catalan(40), Err(EvalError::Overflow { n: 40 }));
    }

    #[test]
    fn catalan_values() {
        assert_eq!(catalan(0), Ok(1));
        assert_eq!(catalan(5), Ok(42));
        // (70 choose 35) / 36
        assert_eq!(catalan(35), Ok(3_116_285_494_907_301_262));
    }

    #[test]
    fn skeleton_counts_small() {
        assert_eq!(count_action_skeletons(1), 1);
        assert_eq!(count_action_skeletons(3), 5);
    }

    #[test]
    fn bins_partition_results() {
        let r = |n: usize| SizedResult {
            concepts: n,
            candidate: toks("a b c d"),
            reference: toks("a b c d"),
        };
        let bins = bin_by_size(&[r(5), r(5), r(12), r(3)]);
        assert_eq!(bins.iter().map(|b| (b.lo, b.count)).collect::<Vec<_>>(), [(0, 3), (10, 1)]);
        assert_eq!(bin_by_size(&[r(5), r(5)]).len(), 1);
    }
}
