use proptest::prelude::*;

use cachenlg::amr::{parse_penman, preprocess_labels, serialize, AmrGraph, ConceptId, Edge};
use cachenlg::corpus::{attach_unaligned, AlignedExample};
use cachenlg::oracle::{buffer_order, build_interleaved_target, extract_trace, split_interleaved, verify_trace};

const LABELS: [&str; 8] = ["want-01", "boy", "book", "open-01", "city", "2009", "red", "date-entity"];
const RELATIONS: [&str; 4] = ["ARG0", "ARG1", "mod", "time"];

/// Connected graph: a random tree plus up to two extra edges.
fn graph() -> impl Strategy<Value = AmrGraph> {
    (1usize..8)
        .prop_flat_map(|n| {
            (
                Just(n),
                proptest::collection::vec(0usize..100, n),
                proptest::collection::vec(0usize..100, n),
                proptest::collection::vec((0usize..n, 0usize..n, 0usize..4), 0..3),
            )
        })
        .prop_map(|(n, labels, parents, extra)| {
            let concepts = labels.iter().map(|&l| LABELS[l % LABELS.len()].to_string()).collect();
            let mut edges: Vec<Edge> = (1..n)
                .map(|v| Edge {
                    src: ConceptId(parents[v] % v),
                    dst: ConceptId(v),
                    label: RELATIONS[parents[v] % 4].to_string(),
                })
                .collect();
            for (a, b, r) in extra {
                let dup = edges.iter().any(|e| (e.src.0, e.dst.0) == (a, b) || (e.src.0, e.dst.0) == (b, a));
                if a != b && !dup {
                    edges.push(Edge {
                        src: ConceptId(a),
                        dst: ConceptId(b),
                        label: RELATIONS[r].to_string(),
                    });
                }
            }
            AmrGraph::new(concepts, edges, ConceptId(0)).expect("tree plus edges is connected")
        })
}

/// A graph with a sentence cut into segments, some of them aligned.
fn example() -> impl Strategy<Value = AlignedExample> {
    graph()
        .prop_flat_map(|g| {
            let n = g.len();
            (
                Just(g),
                proptest::collection::vec(1usize..4, n),
                Just((0..n).collect::<Vec<usize>>()).prop_shuffle(),
                proptest::collection::vec(any::<bool>(), n),
            )
        })
        .prop_map(|(g, lengths, owners, aligned)| {
            let total: usize = lengths.iter().sum();
            let tokens = (0..total).map(|i| format!("t{i}")).collect();
            let mut aligns = Vec::new();
            let mut start = 0;
            for (i, len) in lengths.iter().enumerate() {
                // The first segment is always aligned so that some concept owns words.
                if i == 0 || aligned[i] {
                    aligns.push((start, start + len, owners[i]));
                }
                start += len;
            }
            AlignedExample::new(tokens, g, &aligns).expect("disjoint spans")
        })
}

proptest! {
    #[test]
    fn serialize_then_parse_is_stable(g in graph()) {
        let once = parse_penman(&serialize(&g)).unwrap();
        prop_assert_eq!(once.len(), g.len());
        prop_assert_eq!(once.edges().len(), g.edges().len());
        let twice = parse_penman(&serialize(&once)).unwrap();
        prop_assert_eq!(twice, once);
    }

    #[test]
    fn preprocessing_is_idempotent(g in graph()) {
        let once = preprocess_labels(&g);
        prop_assert_eq!(preprocess_labels(&once), once);
    }

    #[test]
    fn attached_spans_concatenate_to_sentence(ex in example()) {
        let order = buffer_order(&ex);
        let mut sorted: Vec<usize> = order.iter().map(|c| c.index()).collect();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..ex.graph.len()).collect::<Vec<_>>());
        let spans = attach_unaligned(&ex, &order).unwrap();
        let joined: Vec<String> = order.iter().flat_map(|c| spans[c.index()].clone()).collect();
        prop_assert_eq!(joined, ex.tokens.clone());
    }

    #[test]
    fn oracle_traces_verify_and_interleave(ex in example(), k in 1usize..5) {
        if let Ok(t) = extract_trace(&ex, k) {
            prop_assert!(verify_trace(&ex.graph, &t, k));
            let (kinds, spans) = split_interleaved(&build_interleaved_target(&t)).unwrap();
            prop_assert_eq!(kinds.len(), t.actions.len());
            prop_assert_eq!(spans.concat(), ex.tokens.clone());
        }
    }

    #[test]
    fn larger_caches_never_lose_runs(ex in example(), k in 1usize..4) {
        if extract_trace(&ex, k).is_ok() {
            prop_assert!(extract_trace(&ex, k + 1).is_ok());
        }
    }
}
