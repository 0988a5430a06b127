//! Aligned sentence/graph corpora, vocabularies and pretrained embeddings.
//!
//! Corpus blocks are separated by blank lines. The first line of a block
//! holds the space-separated sentence tokens, the following lines hold one
//! PENMAN graph, and trailing lines of the form `ALIGN <start> <end> <concept>`
//! attach half-open token spans to concept ids.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::amr::{self, AmrError, AmrGraph, ConceptId};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("block {block}: bad span {start}..{end}: {reason}")]
    BadSpan {
        block: usize,
        start: usize,
        end: usize,
        reason: String,
    },
    #[error("block {block}: alignment refers to unknown concept {concept}")]
    UnknownConcept { block: usize, concept: usize },
    #[error("block {block}: empty sentence")]
    EmptySentence { block: usize },
    #[error("block {block}: {source}")]
    Graph { block: usize, source: AmrError },
    #[error("block {block}: {reason}")]
    Malformed { block: usize, reason: String },
    #[error("no concept carries an alignment")]
    NoAlignedConcept,
    #[error("embedding line {line}: expected {expected} values, found {found}")]
    DimensionMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("embedding line {line}: {reason}")]
    BadEmbedding { line: usize, reason: String },
}

/// Half-open token range `[start, end)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlignedExample {
    pub tokens: Vec<String>,
    pub graph: AmrGraph,
    /// Indexed by concept id; `None` for unaligned concepts.
    pub spans: Vec<Option<Span>>,
}

impl AlignedExample {
    /// Validates spans against the token count, concept ids and each other.
    pub fn new(tokens: Vec<String>, graph: AmrGraph, aligns: &[(usize, usize, usize)]) -> Result<Self, CorpusError> {
        Self::build(0, tokens, graph, aligns)
    }

    fn build(block: usize, tokens: Vec<String>, graph: AmrGraph, aligns: &[(usize, usize, usize)]) -> Result<Self, CorpusError> {
        if tokens.is_empty() {
            return Err(CorpusError::EmptySentence { block });
        }
        let m = tokens.len();
        let mut spans: Vec<Option<Span>> = vec![None; graph.len()];
        for &(start, end, concept) in aligns {
            let bad = |reason: &str| CorpusError::BadSpan {
                block,
                start,
                end,
                reason: reason.to_string(),
            };
            if start >= end {
                return Err(bad("empty or reversed range"));
            }
            if end > m {
                return Err(bad(&format!("sentence has {m} tokens")));
            }
            if concept >= graph.len() {
                return Err(CorpusError::UnknownConcept { block, concept });
            }
            let span = Span::new(start, end);
            if spans[concept].is_some() {
                return Err(bad("concept already aligned"));
            }
            if spans.iter().flatten().any(|s| s.overlaps(&span)) {
                return Err(bad("overlaps another span"));
            }
            spans[concept] = Some(span);
        }
        Ok(AlignedExample {
            tokens,
            graph,
            spans,
        })
    }

    pub fn span(&self, c: ConceptId) -> Option<Span> {
        self.spans[c.index()]
    }

    pub fn sentence(&self) -> String {
        self.tokens.join(" ")
    }

    /// Renders the block in the corpus file format.
    pub fn to_block(&self) -> String {
        let mut out = self.sentence();
        out.push('\n');
        out.push_str(&amr::serialize(&self.graph));
        out.push('\n');
        for (c, span) in self.spans.iter().enumerate() {
            if let Some(s) = span {
                out.push_str(&format!("ALIGN {} {} {}\n", s.start, s.end, c));
            }
        }
        out
    }
}

/// Parses corpus text. Graphs are label-preprocessed on load.
pub fn parse_corpus(text: &str) -> Result<Vec<AlignedExample>, CorpusError> {
    amr::split_blocks(text)
        .iter()
        .enumerate()
        .map(|(block, raw)| parse_block(block, raw))
        .collect()
}

fn parse_block(block: usize, raw: &str) -> Result<AlignedExample, CorpusError> {
    let mut lines = raw.lines();
    let tokens: Vec<String> = lines
        .next()
        .unwrap_or("")
        .split_whitespace()
        .map(str::to_string)
        .collect();
    if tokens.is_empty() {
        return Err(CorpusError::EmptySentence { block });
    }
    let mut penman = String::new();
    let mut aligns = Vec::new();
    for line in lines {
        let trimmed = line.trim();
        if let Some(rest) = trimmed.strip_prefix("ALIGN") {
            let fields: Vec<&str> = rest.split_whitespace().collect();
            let nums: Result<Vec<usize>, _> = fields.iter().map(|f| f.parse::<usize>()).collect();
            match nums {
                Ok(v) if v.len() == 3 => aligns.push((v[0], v[1], v[2])),
                _ => {
                    return Err(CorpusError::Malformed {
                        block,
                        reason: format!("bad alignment line '{trimmed}'"),
                    })
                }
            }
        } else if !aligns.is_empty() {
            return Err(CorpusError::Malformed {
                block,
                reason: "graph text after alignment lines".into(),
            });
        } else {
            penman.push_str(line);
            penman.push('\n');
        }
    }
    let graph = amr::parse_penman(&penman).map_err(|source| CorpusError::Graph { block, source })?;
    let graph = amr::preprocess_labels(&graph);
    AlignedExample::build(block, tokens, graph, &aligns)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<AlignedExample>, CorpusError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_corpus(&text)
}

/// Assigns every token to exactly one concept. Unaligned tokens join the
/// last concept in `order` whose span starts at or before them; tokens
/// ahead of every span join the first aligned concept in `order`.
///
/// Returns the token list of each concept, indexed by concept id.
pub fn attach_unaligned(example: &AlignedExample, order: &[ConceptId]) -> Result<Vec<Vec<String>>, CorpusError> {
    let aligned: Vec<(ConceptId, Span)> = order
        .iter()
        .filter_map(|&c| example.span(c).map(|s| (c, s)))
        .collect();
    let first = aligned.first().ok_or(CorpusError::NoAlignedConcept)?.0;
    let mut owner = vec![None; example.tokens.len()];
    for &(c, s) in &aligned {
        for slot in &mut owner[s.start..s.end] {
            *slot = Some(c);
        }
    }
    let mut out = vec![Vec::new(); example.graph.len()];
    for (t, token) in example.tokens.iter().enumerate() {
        let c = owner[t].unwrap_or_else(|| {
            aligned
                .iter()
                .rev()
                .find(|(_, s)| s.start <= t)
                .map_or(first, |(c, _)| *c)
        });
        out[c.index()].push(token.clone());
    }
    Ok(out)
}

/// Reserved vocabulary entries. Ids are fixed: the first seven ids of every
/// vocabulary, in this order.
pub mod reserved {
    pub const PAD: &str = "<pad>";
    pub const UNK: &str = "<unk>";
    pub const END_PHRASE: &str = "</ph>";
    pub const PUSH: &str = "<push>";
    pub const POP: &str = "<pop>";
    pub const BOS: &str = "<s>";
    pub const EOS: &str = "</s>";

    pub const PAD_ID: usize = 0;
    pub const UNK_ID: usize = 1;
    pub const END_PHRASE_ID: usize = 2;
    pub const PUSH_ID: usize = 3;
    pub const POP_ID: usize = 4;
    pub const BOS_ID: usize = 5;
    pub const EOS_ID: usize = 6;

    pub const ALL: [&str; 7] = [PAD, UNK, END_PHRASE, PUSH, POP, BOS, EOS];
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    ids: HashMap<String, usize>,
    tokens: Vec<String>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    pub fn new() -> Self {
        let mut v = Vocabulary {
            ids: HashMap::new(),
            tokens: Vec::new(),
        };
        for tok in reserved::ALL {
            v.insert(tok);
        }
        v
    }

    /// Rebuilds a vocabulary from its id-ordered token list.
    pub fn from_tokens(tokens: Vec<String>) -> Option<Self> {
        if tokens.len() < reserved::ALL.len() || tokens[..reserved::ALL.len()] != reserved::ALL {
            return None;
        }
        let mut v = Vocabulary {
            ids: HashMap::new(),
            tokens: Vec::new(),
        };
        for t in tokens {
            if v.ids.contains_key(&t) {
                return None;
            }
            v.insert(&t);
        }
        Some(v)
    }

    pub fn insert(&mut self, token: &str) -> usize {
        if let Some(&id) = self.ids.get(token) {
            return id;
        }
        let id = self.tokens.len();
        self.tokens.push(token.to_string());
        self.ids.insert(token.to_string(), id);
        id
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    /// Id of `token`, or the UNK id.
    pub fn id(&self, token: &str) -> usize {
        self.get(token).unwrap_or(reserved::UNK_ID)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Shared vocabulary over sentence tokens and concept labels.
    pub fn from_corpus(examples: &[AlignedExample]) -> Self {
        let mut v = Vocabulary::new();
        for ex in examples {
            for t in &ex.tokens {
                v.insert(t);
            }
            for label in ex.graph.concepts() {
                v.insert(label);
            }
        }
        v
    }

    /// Vocabulary over edge labels.
    pub fn relations_from_corpus(examples: &[AlignedExample]) -> Self {
        let mut v = Vocabulary::new();
        for ex in examples {
            for e in ex.graph.edges() {
                v.insert(&e.label);
            }
        }
        v
    }
}

/// Pretrained vectors aligned to a vocabulary. Rows loaded from the file
/// are frozen during training.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    rows: Vec<Option<Vec<f64>>>,
    unk: Vec<f64>,
}

impl EmbeddingTable {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Vector for a vocabulary id; ids without a pretrained row get the UNK vector.
    pub fn vector(&self, id: usize) -> &[f64] {
        self.rows.get(id).and_then(|r| r.as_deref()).unwrap_or(&self.unk)
    }

    pub fn lookup<'a>(&'a self, vocab: &Vocabulary, token: &str) -> &'a [f64] {
        match vocab.get(token) {
            Some(id) => self.vector(id),
            None => &self.unk,
        }
    }

    pub fn is_frozen(&self, id: usize) -> bool {
        matches!(self.rows.get(id), Some(Some(_)))
    }

    pub fn frozen_count(&self) -> usize {
        self.rows.iter().filter(|r| r.is_some()).count()
    }

    pub fn rows(&self) -> &[Option<Vec<f64>>] {
        &self.rows
    }
}

/// Parses `token v1 .. vD` lines. The dimension is fixed by the first line.
/// A line for the UNK token supplies the UNK vector; otherwise it is zero.
pub fn parse_embeddings(text: &str, vocab: &Vocabulary) -> Result<EmbeddingTable, CorpusError> {
    let mut dim = None;
    let mut rows = vec![None; vocab.len()];
    let mut unk = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let token = fields.next().unwrap_or_default();
        let values: Result<Vec<f64>, _> = fields.map(str::parse::<f64>).collect();
        let values = values.map_err(|e| CorpusError::BadEmbedding {
            line: lineno + 1,
            reason: e.to_string(),
        })?;
        let expected = *dim.get_or_insert(values.len());
        if values.len() != expected || expected == 0 {
            return Err(CorpusError::DimensionMismatch {
                line: lineno + 1,
                expected,
                found: values.len(),
            });
        }
        if token == reserved::UNK {
            unk = Some(values);
        } else if let Some(id) = vocab.get(token) {
            rows[id] = Some(values);
        }
    }
    let dim = dim.unwrap_or(0);
    Ok(EmbeddingTable {
        dim,
        rows,
        unk: unk.unwrap_or_else(|| vec![0.0; dim]),
    })
}

pub fn load_embeddings(path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<EmbeddingTable, CorpusError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_embeddings(&text, vocab)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub const SAMPLE_BLOCK: &str = "the center will formally open in 2009 .
(o / open-01 :ARG1 (c / center) :time (d / date-entity :year (y2 / 2009)) :manner (f / formal))
ALIGN 0 3 1
ALIGN 3 4 4
ALIGN 4 6 0
ALIGN 6 8 3
";

    fn ids(v: &[usize]) -> Vec<ConceptId> {
        v.iter().map(|&i| ConceptId(i)).collect()
    }

    #[test]
    fn loads_sample_block() {
        let exs = parse_corpus(SAMPLE_BLOCK).unwrap();
        assert_eq!(exs.len(), 1);
        let ex = &exs[0];
        assert_eq!(ex.tokens.len(), 8);
        assert_eq!(ex.graph.label(ConceptId(0)), "open");
        assert_eq!(ex.span(ConceptId(2)), None);
        assert_eq!(ex.span(ConceptId(1)), Some(Span::new(0, 3)));
    }

    #[test]
    fn single_token_block() {
        let exs = parse_corpus("hi\n(a / hello)\nALIGN 0 1 0\n").unwrap();
        assert_eq!(exs[0].span(ConceptId(0)), Some(Span::new(0, 1)));
    }

    #[test]
    fn span_errors() {
        let text = "a b c d e f\n(a / x :mod (b / y))\nALIGN 5 9 0\n";
        assert!(matches!(parse_corpus(text), Err(CorpusError::BadSpan { .. })));
        let text = "a b\n(a / x :mod (b / y))\nALIGN 0 1 7\n";
        assert!(matches!(parse_corpus(text), Err(CorpusError::UnknownConcept { concept: 7, .. })));
        let text = "a b\n(a / x :mod (b / y))\nALIGN 0 2 0\nALIGN 1 2 1\n";
        assert!(matches!(parse_corpus(text), Err(CorpusError::BadSpan { .. })));
        let text = "a b\n(a / x :mod (b / y))\nALIGN 0 1 0\nALIGN 1 2 0\n";
        assert!(matches!(parse_corpus(text), Err(CorpusError::BadSpan { .. })));
        let tokens = Vec::new();
        let g = amr::parse_penman("(a / x)").unwrap();
        assert!(matches!(AlignedExample::new(tokens, g, &[]), Err(CorpusError::EmptySentence { .. })));
    }

    #[test]
    fn attach_sample_spans() {
        let ex = &parse_corpus(SAMPLE_BLOCK).unwrap()[0];
        let spans = attach_unaligned(ex, &ids(&[1, 4, 0, 2, 3])).unwrap();
        assert_eq!(spans[1].join(" "), "the center will");
        assert_eq!(spans[4].join(" "), "formally");
        assert_eq!(spans[0].join(" "), "open in");
        assert!(spans[2].is_empty());
        assert_eq!(spans[3].join(" "), "2009 .");
    }

    #[test]
    fn attach_moves_unaligned_tokens() {
        let text = "w0 w1 w2 w3 w4\n(a / x :mod (b / y) :mod (c / z))\nALIGN 1 2 0\nALIGN 3 4 2\n";
        let ex = &parse_corpus(text).unwrap()[0];
        let spans = attach_unaligned(ex, &ids(&[0, 1, 2])).unwrap();
        assert_eq!(spans[0], ["w0", "w1", "w2"]);
        assert!(spans[1].is_empty());
        assert_eq!(spans[2], ["w3", "w4"]);
    }

    #[test]
    fn attach_single_aligned_owns_all() {
        let text = "w0 w1 w2 w3\n(a / x :mod (b / y) :mod (c / z))\nALIGN 2 3 1\n";
        let ex = &parse_corpus(text).unwrap()[0];
        let spans = attach_unaligned(ex, &ids(&[0, 1, 2])).unwrap();
        assert_eq!(spans[1], ["w0", "w1", "w2", "w3"]);
        let none = "w0\n(a / x)\n";
        let ex = &parse_corpus(none).unwrap()[0];
        assert!(matches!(attach_unaligned(ex, &ids(&[0])), Err(CorpusError::NoAlignedConcept)));
    }

    #[test]
    fn vocabulary_reserved_ids() {
        let v = Vocabulary::new();
        assert_eq!(v.id(reserved::PUSH), reserved::PUSH_ID);
        assert_eq!(v.id(reserved::END_PHRASE), reserved::END_PHRASE_ID);
        assert_eq!(v.id("nothing"), reserved::UNK_ID);
        let exs = parse_corpus(SAMPLE_BLOCK).unwrap();
        let v = Vocabulary::from_corpus(&exs);
        for (i, t) in v.tokens().iter().enumerate() {
            assert_eq!(v.id(t), i);
        }
        assert_eq!(Vocabulary::from_tokens(v.tokens().to_vec()).unwrap(), v);
    }

    #[test]
    fn embeddings_load_and_freeze() {
        let exs = parse_corpus(SAMPLE_BLOCK).unwrap();
        let vocab = Vocabulary::from_corpus(&exs);
        let text = "open 0.1 0.2 0.3 0.4\ncenter 1 2 3 4\nformally -1 -2 -3 -4\n";
        let table = parse_embeddings(text, &vocab).unwrap();
        assert_eq!(table.dim(), 4);
        assert_eq!(table.frozen_count(), 3);
        assert_eq!(table.lookup(&vocab, "center"), [1.0, 2.0, 3.0, 4.0]);
        assert_eq!(table.lookup(&vocab, "open").len(), 4);
        assert!(table.is_frozen(vocab.id("open")));
        assert_eq!(table.lookup(&vocab, "zebra"), [0.0; 4]);
        assert!(matches!(
            parse_embeddings("open 1 2 3 4\ncenter 1 2 3\n", &vocab),
            Err(CorpusError::DimensionMismatch { expected: 4, found: 3, .. })
        ));
    }
}
