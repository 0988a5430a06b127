//! Small synthetic aligned corpora with a deterministic graph-to-sentence
//! mapping, for smoke tests and overfitting checks.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::amr::{parse_penman, serialize, AmrGraph, ConceptId, Edge};
use crate::corpus::AlignedExample;
use crate::oracle::extract_trace;

const LEXICON: [(&str, &[&str]); 20] = [
    ("boy", &["the", "boy"]),
    ("girl", &["the", "girl"]),
    ("dog", &["a", "dog"]),
    ("cat", &["a", "cat"]),
    ("tree", &["the", "tree"]),
    ("house", &["the", "house"]),
    ("river", &["the", "river"]),
    ("city", &["the", "city"]),
    ("book", &["a", "book"]),
    ("car", &["the", "car"]),
    ("eat", &["eats"]),
    ("see", &["sees"]),
    ("want", &["wants"]),
    ("give", &["gives"]),
    ("run", &["runs"]),
    ("big", &["big"]),
    ("small", &["small"]),
    ("red", &["red"]),
    ("happy", &["happy"]),
    ("old", &["old"]),
];

const RELATIONS: [&str; 4] = ["ARG0", "ARG1", "location", "mod"];

#[derive(Clone, Debug, PartialEq)]
pub struct SynthOptions {
    pub pairs: usize,
    pub min_concepts: usize,
    pub max_concepts: usize,
    /// Chance of one extra edge closing a cycle.
    pub reentrancy: f64,
    /// Every graph must admit an oracle run with this cache size.
    pub k: usize,
    pub seed: u64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            pairs: 50,
            min_concepts: 2,
            max_concepts: 8,
            reentrancy: 0.2,
            k: 3,
            seed: 1,
        }
    }
}

/// Words realizing a synthetic concept label.
pub fn realize(label: &str) -> Option<&'static [&'static str]> {
    LEXICON.iter().find(|(l, _)| *l == label).map(|(_, w)| *w)
}

/// Generates `pairs` examples. Labels within a graph are distinct; the
/// sentence is the preorder of the tree, children sorted by relation then
/// label, and each concept is aligned to its words.
pub fn synthesize(opts: &SynthOptions) -> Vec<AlignedExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut out = Vec::with_capacity(opts.pairs);
    while out.len() < opts.pairs {
        let ex = sample(&mut rng, opts);
        if extract_trace(&ex, opts.k).is_ok() {
            out.push(ex);
        }
    }
    out
}

fn sample(rng: &mut ChaCha8Rng, opts: &SynthOptions) -> AlignedExample {
    let n = rng.gen_range(opts.min_concepts.max(1)..=opts.max_concepts.max(opts.min_concepts.max(1)));
    let labels: Vec<&str> = LEXICON
        .choose_multiple(rng, n.min(LEXICON.len()))
        .map(|(l, _)| *l)
        .collect();
    let n = labels.len();
    // Random tree over creation order: node i hangs under an earlier node.
    let mut children: Vec<Vec<(usize, &str)>> = vec![Vec::new(); n];
    for i in 1..n {
        let parent = rng.gen_range(0..i);
        let rel = *RELATIONS.choose(rng).expect("nonempty");
        children[parent].push((i, rel));
    }
    for c in &mut children {
        c.sort_by(|a, b| (a.1, labels[a.0]).cmp(&(b.1, labels[b.0])));
    }

    // Renumber in preorder so ids survive a serialize/parse round trip.
    let mut pre = Vec::with_capacity(n);
    let mut parent_of = vec![None; n];
    let mut stack = vec![0];
    while let Some(v) = stack.pop() {
        pre.push(v);
        for &(c, _) in children[v].iter().rev() {
            parent_of[c] = Some(v);
            stack.push(c);
        }
    }
    let mut id = vec![0; n];
    for (i, &v) in pre.iter().enumerate() {
        id[v] = i;
    }
    let concepts: Vec<String> = pre.iter().map(|&v| labels[v].to_string()).collect();
    let mut edges = Vec::new();
    for &v in &pre {
        for &(c, rel) in &children[v] {
            edges.push(Edge {
                src: ConceptId(id[v]),
                dst: ConceptId(id[c]),
                label: rel.to_string(),
            });
        }
    }
    if n >= 3 && rng.gen_bool(opts.reentrancy) {
        // From a later vertex to an earlier non-ancestor, non-adjacent one.
        let a = rng.gen_range(1..n);
        let ancestors: Vec<usize> = std::iter::successors(parent_of[pre[a]], |&p| parent_of[p])
            .map(|p| id[p])
            .collect();
        let targets: Vec<usize> = (0..a)
            .filter(|b| !ancestors.contains(b))
            .filter(|&b| {
                !edges
                    .iter()
                    .any(|e| (e.src.0, e.dst.0) == (a, b) || (e.src.0, e.dst.0) == (b, a))
            })
            .collect();
        if let Some(&b) = targets.choose(rng) {
            edges.push(Edge {
                src: ConceptId(a),
                dst: ConceptId(b),
                label: RELATIONS.choose(rng).expect("nonempty").to_string(),
            });
        }
    }
    let graph = AmrGraph::new(concepts, edges, ConceptId(0)).expect("tree plus one edge is a valid graph");
    // Reparse to get edges in textual order; preorder ids are unchanged.
    let graph = parse_penman(&serialize(&graph)).expect("serializer output parses");

    let mut tokens = Vec::new();
    let mut aligns = Vec::new();
    for c in 0..n {
        let words = realize(graph.label(ConceptId(c))).expect("label from lexicon");
        aligns.push((tokens.len(), tokens.len() + words.len(), c));
        tokens.extend(words.iter().map(|w| w.to_string()));
    }
    AlignedExample::new(tokens, graph, &aligns).expect("spans partition the sentence")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_corpus, Vocabulary};

    #[test]
    fn corpus_is_deterministic_and_small() {
        let opts = SynthOptions::default();
        let a = synthesize(&opts);
        let b = synthesize(&opts);
        assert_eq!(a.len(), 50);
        assert_eq!(
            a.iter().map(|e| e.to_block()).collect::<Vec<_>>(),
            b.iter().map(|e| e.to_block()).collect::<Vec<_>>()
        );
        assert!(Vocabulary::from_corpus(&a).len() <= 100);
        assert!(a.iter().all(|e| (2..=8).contains(&e.graph.len())));
        assert!(a.iter().any(|e| e.graph.edges().len() == e.graph.len()));
    }

    #[test]
    fn blocks_round_trip_through_the_parser() {
        let exs = synthesize(&SynthOptions {
            pairs: 30,
            reentrancy: 0.5,
            ..SynthOptions::default()
        });
        let text: String = exs.iter().map(|e| e.to_block() + "\n").collect();
        let parsed = parse_corpus(&text).unwrap();
        for (p, e) in parsed.iter().zip(&exs) {
            assert_eq!(p, e, "{}\n{}", p.to_block(), e.to_block());
        }
    }
}
