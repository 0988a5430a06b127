//! Gold traces from aligned examples: buffer order, Push/Pop actions with
//! eviction indices, interleaved action/word targets and pointer
//! increments.

use std::collections::HashSet;
use std::fmt;

use thiserror::Error;

use crate::amr::{AmrGraph, ConceptId};
use crate::corpus::{attach_unaligned, AlignedExample, CorpusError};
use crate::transition::{init_config, Action, ActionKind, CacheSlot, ParserConfiguration, System, TransitionError};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("no run with cache size {k} covers every edge for this buffer order")]
    TreewidthExceeded { k: usize },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Transition(#[from] TransitionError),
    #[error("malformed interleaved sequence at position {pos}: {reason}")]
    BadInterleaving { pos: usize, reason: String },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OracleTrace {
    /// `Push(i)`/`Pop` actions, `2n` of them.
    pub actions: Vec<Action>,
    /// Order in which concepts leave the buffer.
    pub buffer_order: Vec<ConceptId>,
    /// Evicted cache index (1-based) of each Push.
    pub evict_indices: Vec<usize>,
    /// Tokens owned by each concept, indexed by concept id.
    pub spans: Vec<Vec<String>>,
    /// One flag per word of the concatenated spans.
    pub increments: Vec<bool>,
}

impl OracleTrace {
    /// Concepts with nonempty spans, in buffer order. The English pointer
    /// walks this sequence.
    pub fn pointer_concepts(&self) -> Vec<ConceptId> {
        self.buffer_order
            .iter()
            .copied()
            .filter(|c| !self.spans[c.index()].is_empty())
            .collect()
    }

    /// Words of all spans in buffer order.
    pub fn words(&self) -> Vec<String> {
        self.buffer_order
            .iter()
            .flat_map(|c| self.spans[c.index()].iter().cloned())
            .collect()
    }

    /// Pointer position (0-based into `pointer_concepts`) at each word.
    pub fn pointer_positions(&self) -> Vec<usize> {
        let mut p = 0;
        self.increments
            .iter()
            .map(|&r| {
                if r {
                    p += 1;
                }
                p
            })
            .collect()
    }
}

/// Buffer order: aligned concepts by span start; each unaligned concept
/// goes right before the first aligned concept in its depth-first subtree,
/// or else right after its depth-first parent.
pub fn buffer_order(example: &AlignedExample) -> Vec<ConceptId> {
    let g = &example.graph;
    let mut order: Vec<ConceptId> = g.concept_ids().filter(|&c| example.span(c).is_some()).collect();
    order.sort_by_key(|&c| example.span(c).map(|s| s.start));

    let (pre, parent, size) = dfs_tree(g);
    let mut pos_in_pre = vec![0; g.len()];
    for (i, c) in pre.iter().enumerate() {
        pos_in_pre[c.index()] = i;
    }
    let is_descendant = |u: ConceptId, anc: ConceptId| {
        let a = pos_in_pre[anc.index()];
        let p = pos_in_pre[u.index()];
        p > a && p < a + size[anc.index()]
    };
    for &u in &pre {
        if example.span(u).is_some() {
            continue;
        }
        let start = pos_in_pre[u.index()];
        let first_aligned = pre[start + 1..start + size[u.index()]]
            .iter()
            .copied()
            .find(|&w| example.span(w).is_some());
        let at = match (first_aligned, parent[u.index()]) {
            (Some(a), _) => order.iter().position(|&c| c == a).expect("aligned concept placed"),
            (None, Some(p)) => {
                let mut at = order.iter().position(|&c| c == p).expect("parent placed first") + 1;
                while at < order.len() && example.span(order[at]).is_none() && is_descendant(order[at], p) {
                    at += 1;
                }
                at
            }
            (None, None) => 0,
        };
        order.insert(at, u);
    }
    order
}

/// Depth-first preorder from the root over undirected edges (in edge list
/// order), with tree parents and subtree sizes.
fn dfs_tree(g: &AmrGraph) -> (Vec<ConceptId>, Vec<Option<ConceptId>>, Vec<usize>) {
    let n = g.len();
    let mut pre = Vec::with_capacity(n);
    let mut parent = vec![None; n];
    let mut size = vec![1; n];
    let mut seen = vec![false; n];
    fn visit(
        g: &AmrGraph,
        u: ConceptId,
        seen: &mut [bool],
        pre: &mut Vec<ConceptId>,
        parent: &mut [Option<ConceptId>],
        size: &mut [usize],
    ) {
        seen[u.index()] = true;
        pre.push(u);
        for e in g.edges() {
            let w = if e.src == u {
                e.dst
            } else if e.dst == u {
                e.src
            } else {
                continue;
            };
            if !seen[w.index()] {
                parent[w.index()] = Some(u);
                visit(g, w, seen, pre, parent, size);
                size[u.index()] += size[w.index()];
            }
        }
    }
    visit(g, g.root(), &mut seen, &mut pre, &mut parent, &mut size);
    (pre, parent, size)
}

/// Finds a Push/Pop run over `order` with cache size `k` that covers every
/// edge. Decisions follow the preferred policy first: pop while a stacked
/// vertex still needs an edge to the incoming vertex, otherwise push and
/// evict the slot whose next pending neighbour is furthest away (sentinels
/// and finished vertices first, ties to the smallest index). When the
/// preferred choice dead-ends the search backtracks through the remaining
/// choices, so failure means no covering run exists.
pub fn oracle_actions(g: &AmrGraph, order: &[ConceptId], k: usize) -> Result<Vec<Action>, OracleError> {
    let init = init_config(g, order, k, System::Simplified)?;
    let mut search = Search {
        failed: HashSet::new(),
        actions: Vec::with_capacity(2 * g.len()),
    };
    if search.run(&init) {
        Ok(search.actions)
    } else {
        Err(OracleError::TreewidthExceeded { k })
    }
}

struct Search {
    failed: HashSet<ParserConfiguration>,
    actions: Vec<Action>,
}

impl Search {
    fn run(&mut self, cfg: &ParserConfiguration) -> bool {
        if cfg.is_terminal() {
            return cfg.all_covered();
        }
        if self.failed.contains(cfg) {
            return false;
        }
        for action in ranked_actions(cfg) {
            let next = cfg.apply(&action).expect("ranked actions are legal");
            if lost_edge(&next) || next_push_blocked(&next) {
                continue;
            }
            self.actions.push(action);
            if self.run(&next) {
                return true;
            }
            self.actions.pop();
        }
        self.failed.insert(cfg.clone());
        false
    }
}

/// An edge can only be covered when its later endpoint is pushed: every
/// cache state after that descends from the push and never regains an
/// earlier vertex that was missing. So an uncovered edge whose endpoints
/// have both left the buffer is lost for good.
fn lost_edge(cfg: &ParserConfiguration) -> bool {
    let buffered = |c: ConceptId| cfg.buffer().contains(&c);
    cfg.edge_endpoints()
        .iter()
        .zip(cfg.covered())
        .any(|(&(a, b), &done)| !done && !buffered(a) && !buffered(b))
}

/// The next buffer vertex is pushed from the current cache or one that Pops
/// can restore; one of them must hold all its pushed neighbours and still
/// leave a slot to evict.
fn next_push_blocked(cfg: &ParserConfiguration) -> bool {
    let Some(&v) = cfg.buffer().first() else {
        return false;
    };
    let buffered = |c: ConceptId| cfg.buffer().contains(&c);
    let needed: Vec<ConceptId> = cfg
        .edge_endpoints()
        .iter()
        .filter_map(|&(a, b)| match (a == v, b == v) {
            (true, _) if !buffered(b) => Some(b),
            (_, true) if !buffered(a) => Some(a),
            _ => None,
        })
        .collect();
    if needed.len() >= cfg.cache_size() {
        return true;
    }
    let holds = |cache: &[CacheSlot]| needed.iter().all(|&u| cache.contains(&CacheSlot::Concept(u)));
    let mut cache = cfg.cache().to_vec();
    if holds(&cache) {
        return false;
    }
    for &(i, u) in cfg.stack().iter().rev() {
        cache.pop();
        cache.insert(i - 1, u);
        if holds(&cache) {
            return false;
        }
    }
    true
}

/// Legal actions, most preferred first.
fn ranked_actions(cfg: &ParserConfiguration) -> Vec<Action> {
    let Some(&incoming) = cfg.buffer().first() else {
        return vec![Action::Pop];
    };
    let pending = |u: ConceptId, w: ConceptId| {
        cfg.edge_endpoints()
            .iter()
            .zip(cfg.covered())
            .any(|(&(a, b), &done)| !done && ((a == u && b == w) || (a == w && b == u)))
    };
    let stack_needs_incoming = cfg.stack_members().any(|u| pending(u, incoming));

    // Distance to the next use of each slot; larger is a better eviction.
    let distance = |slot: CacheSlot| -> usize {
        let Some(u) = slot.concept() else {
            return usize::MAX;
        };
        if pending(u, incoming) {
            return 0;
        }
        let buffer_use = cfg
            .buffer()
            .iter()
            .position(|&w| pending(u, w))
            .map(|p| p + 1);
        let stack_use = cfg.stack_members().any(|w| pending(u, w)).then_some(cfg.buffer().len() + 1);
        match (buffer_use, stack_use) {
            (Some(a), Some(b)) => a.min(b),
            (Some(a), None) | (None, Some(a)) => a,
            (None, None) => usize::MAX - 1,
        }
    };
    let mut slots: Vec<(usize, usize)> = cfg
        .cache()
        .iter()
        .enumerate()
        .map(|(i, &s)| (i + 1, distance(s)))
        .collect();
    slots.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut pushes: Vec<Action> = slots.into_iter().map(|(i, _)| Action::Push(i)).collect();

    if cfg.stack().is_empty() {
        return pushes;
    }
    if stack_needs_incoming {
        pushes.insert(0, Action::Pop);
    } else {
        pushes.push(Action::Pop);
    }
    pushes
}

/// Derives the full gold trace for an example at cache size `k`.
pub fn extract_trace(example: &AlignedExample, k: usize) -> Result<OracleTrace, OracleError> {
    let order = buffer_order(example);
    let spans = attach_unaligned(example, &order)?;
    let actions = oracle_actions(&example.graph, &order, k)?;
    let evict_indices = actions
        .iter()
        .filter_map(|a| match a {
            Action::Push(i) => Some(*i),
            _ => None,
        })
        .collect();
    let mut trace = OracleTrace {
        actions,
        buffer_order: order,
        evict_indices,
        spans,
        increments: Vec::new(),
    };
    trace.increments = build_increment_sequence(&trace);
    Ok(trace)
}

/// True iff the trace replays legally from its buffer order to a terminal
/// configuration covering every edge, with one eviction index per Push.
pub fn verify_trace(g: &AmrGraph, t: &OracleTrace, k: usize) -> bool {
    let Ok(mut cfg) = init_config(g, &t.buffer_order, k, System::Simplified) else {
        return false;
    };
    let mut evictions = t.evict_indices.iter();
    for action in &t.actions {
        match action {
            Action::Push(i) => {
                if evictions.next() != Some(i) {
                    return false;
                }
            }
            Action::Pop => {}
            _ => return false,
        }
        if cfg.apply_in_place(action).is_err() {
            return false;
        }
    }
    evictions.next().is_none() && t.evict_indices.len() == g.len() && cfg.is_terminal() && cfg.all_covered()
}

/// Token of the interleaved action/word sequence.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum YToken {
    Push,
    Pop,
    EndPhrase,
    Word(String),
}

impl fmt::Display for YToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            YToken::Push => write!(f, "Push"),
            YToken::Pop => write!(f, "Pop"),
            YToken::EndPhrase => write!(f, "</ph>"),
            YToken::Word(w) => write!(f, "{w}"),
        }
    }
}

/// Each Push is followed by its concept's span and `</ph>` when the span is
/// nonempty; Pops stay in place.
pub fn build_interleaved_target(t: &OracleTrace) -> Vec<YToken> {
    let mut out = Vec::new();
    let mut next = t.buffer_order.iter();
    for action in &t.actions {
        match action.kind() {
            Some(ActionKind::Push) => {
                out.push(YToken::Push);
                let c = next.next().expect("one buffer entry per push");
                let span = &t.spans[c.index()];
                if !span.is_empty() {
                    out.extend(span.iter().cloned().map(YToken::Word));
                    out.push(YToken::EndPhrase);
                }
            }
            Some(ActionKind::Pop) => out.push(YToken::Pop),
            None => {}
        }
    }
    out
}

/// Inverse of [`build_interleaved_target`]: the action skeleton and the
/// span of each Push in push order.
pub fn split_interleaved(y: &[YToken]) -> Result<(Vec<ActionKind>, Vec<Vec<String>>), OracleError> {
    let mut actions = Vec::new();
    let mut spans: Vec<Vec<String>> = Vec::new();
    let mut in_span = false;
    for (pos, tok) in y.iter().enumerate() {
        let bad = |reason: &str| OracleError::BadInterleaving {
            pos,
            reason: reason.to_string(),
        };
        match tok {
            YToken::Push => {
                if in_span && !spans.last().is_some_and(|s| s.is_empty()) {
                    return Err(bad("Push inside an open span"));
                }
                actions.push(ActionKind::Push);
                spans.push(Vec::new());
                in_span = true;
            }
            YToken::Pop => {
                if in_span && !spans.last().is_some_and(|s| s.is_empty()) {
                    return Err(bad("Pop inside an open span"));
                }
                in_span = false;
                actions.push(ActionKind::Pop);
            }
            YToken::Word(w) => {
                if !in_span {
                    return Err(bad("word outside a span"));
                }
                spans.last_mut().expect("span opened by Push").push(w.clone());
            }
            YToken::EndPhrase => {
                if !in_span || spans.last().is_none_or(|s| s.is_empty()) {
                    return Err(bad("</ph> without words"));
                }
                in_span = false;
            }
        }
    }
    if in_span && !spans.last().is_some_and(|s| s.is_empty()) {
        return Err(OracleError::BadInterleaving {
            pos: y.len(),
            reason: "unterminated span".into(),
        });
    }
    Ok((actions, spans))
}

/// `true` at each word that opens a new span in pointer order, except the
/// very first word.
pub fn build_increment_sequence(t: &OracleTrace) -> Vec<bool> {
    let mut out = Vec::new();
    for c in t.pointer_concepts() {
        for j in 0..t.spans[c.index()].len() {
            out.push(j == 0 && !out.is_empty());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::parse_corpus;

    const SAMPLE_BLOCK: &str = "the center will formally open in 2009 .
(o / open-01 :ARG1 (c / center) :time (d / date-entity :year (y2 / 2009)) :manner (f / formal))
ALIGN 0 3 1
ALIGN 3 4 4
ALIGN 4 6 0
ALIGN 6 8 3
";

    fn sample() -> AlignedExample {
        parse_corpus(SAMPLE_BLOCK).unwrap().remove(0)
    }

    fn ids(v: &[usize]) -> Vec<ConceptId> {
        v.iter().map(|&i| ConceptId(i)).collect()
    }

    fn y_string(y: &[YToken]) -> String {
        y.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(" ")
    }

    #[test]
    fn sample_trace() {
        let t = extract_trace(&sample(), 3).unwrap();
        assert_eq!(t.buffer_order, ids(&[1, 4, 0, 2, 3]));
        let mut want = vec![Action::Push(1); 5];
        want.extend(vec![Action::Pop; 5]);
        assert_eq!(t.actions, want);
        assert_eq!(t.evict_indices, vec![1; 5]);
        assert!(verify_trace(&sample().graph, &t, 3));
    }

    #[test]
    fn sample_at_cache_size_one_fails() {
        assert!(matches!(extract_trace(&sample(), 1), Err(OracleError::TreewidthExceeded { k: 1 })));
    }

    #[test]
    fn single_concept() {
        let ex = parse_corpus("hi\n(a / hello)\nALIGN 0 1 0\n").unwrap().remove(0);
        let t = extract_trace(&ex, 3).unwrap();
        assert_eq!(t.actions, vec![Action::Push(1), Action::Pop]);
        assert_eq!(y_string(&build_interleaved_target(&t)), "Push hi </ph> Pop");
        assert_eq!(t.increments, vec![false]);
    }

    #[test]
    fn clique_needs_cache_of_four() {
        let text = "a b c d
(a / x :r (b / y :r (c / z :r (d / w :r a)) :r d) :r c)
ALIGN 0 1 0
ALIGN 1 2 1
ALIGN 2 3 2
ALIGN 3 4 3
";
        let ex = parse_corpus(text).unwrap().remove(0);
        assert_eq!(ex.graph.edges().len(), 6);
        assert!(matches!(extract_trace(&ex, 3), Err(OracleError::TreewidthExceeded { k: 3 })));
        let t = extract_trace(&ex, 4).unwrap();
        assert!(verify_trace(&ex.graph, &t, 4));
    }

    #[test]
    fn verify_rejects_damaged_traces() {
        let ex = sample();
        let t = extract_trace(&ex, 3).unwrap();
        let mut short = t.clone();
        short.actions.pop();
        assert!(!verify_trace(&ex.graph, &short, 3));
        let mut wrong_index = t.clone();
        wrong_index.evict_indices[0] = 2;
        assert!(!verify_trace(&ex.graph, &wrong_index, 3));
        // Evicting the centre before `open` arrives loses the ARG1 edge.
        let mut lossy = t.clone();
        lossy.actions[2] = Action::Push(3);
        lossy.evict_indices[2] = 3;
        assert!(!verify_trace(&ex.graph, &lossy, 3));
    }

    #[test]
    fn interleaved_sample_target() {
        let t = extract_trace(&sample(), 3).unwrap();
        let y = build_interleaved_target(&t);
        assert_eq!(
            y_string(&y),
            "Push the center will </ph> Push formally </ph> Push open in </ph> Push Push 2009 . </ph> Pop Pop Pop Pop Pop"
        );
        assert_eq!(y.len(), 2 * 5 + 8 + 4);
        let (actions, spans) = split_interleaved(&y).unwrap();
        let kinds: Vec<ActionKind> = t.actions.iter().filter_map(Action::kind).collect();
        assert_eq!(actions, kinds);
        let want: Vec<Vec<String>> = t.buffer_order.iter().map(|c| t.spans[c.index()].clone()).collect();
        assert_eq!(spans, want);
    }

    #[test]
    fn split_rejects_malformed() {
        let w = |s: &str| YToken::Word(s.into());
        assert!(split_interleaved(&[w("x")]).is_err());
        assert!(split_interleaved(&[YToken::Push, YToken::EndPhrase]).is_err());
        assert!(split_interleaved(&[YToken::Push, w("x"), YToken::Pop]).is_err());
        assert!(split_interleaved(&[YToken::Push, w("x")]).is_err());
        assert!(split_interleaved(&[YToken::Push, YToken::Push, w("x"), YToken::EndPhrase, YToken::Pop, YToken::Pop]).is_ok());
    }

    #[test]
    fn sample_increments() {
        let t = extract_trace(&sample(), 3).unwrap();
        let r: Vec<u8> = t.increments.iter().map(|&b| b as u8).collect();
        assert_eq!(r, vec![0, 0, 0, 1, 1, 0, 1, 0]);
        assert_eq!(t.pointer_concepts(), ids(&[1, 4, 0, 3]));
        assert_eq!(t.pointer_positions(), vec![0, 0, 0, 1, 2, 2, 3, 3]);
    }

    #[test]
    fn unaligned_leaf_follows_parent() {
        // b and c unaligned leaves of a; d aligned under c's sibling.
        let text = "w0 w1\n(a / x :r (b / y) :r (c / z) :r (d / v))\nALIGN 0 1 0\nALIGN 1 2 3\n";
        let ex = parse_corpus(text).unwrap().remove(0);
        assert_eq!(buffer_order(&ex), ids(&[0, 1, 2, 3]));
        let text = "w0 w1\n(a / x :r (b / y :r (c / z)) :r (d / v))\nALIGN 0 1 3\nALIGN 1 2 0\n";
        let ex = parse_corpus(text).unwrap().remove(0);
        assert_eq!(buffer_order(&ex), ids(&[3, 0, 1, 2]));
    }

    #[test]
    fn unaligned_before_aligned_descendant() {
        let text = "w0 w1\n(a / x :r (b / y :r (c / z)))\nALIGN 0 1 2\nALIGN 1 2 0\n";
        let ex = parse_corpus(text).unwrap().remove(0);
        assert_eq!(buffer_order(&ex), ids(&[1, 2, 0]));
    }
}
