//! Cache transition system: configurations, the full action set
//! (Shift, PushIndex, Arc, Pop) and the merged Push/Pop set used for
//! generation, plus tree-decomposition extraction from runs.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::amr::{AmrGraph, ConceptId};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TransitionError {
    #[error("buffer order is not a permutation of the graph's concepts")]
    BadPermutation,
    #[error("cache size must be at least 1")]
    ZeroCache,
    #[error("illegal action {action} in configuration {config}")]
    IllegalAction { action: String, config: String },
    #[error("illegal trace at step {step}: {reason}")]
    IllegalTrace { step: usize, reason: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CacheSlot {
    Sentinel,
    Concept(ConceptId),
}

impl CacheSlot {
    pub fn concept(self) -> Option<ConceptId> {
        match self {
            CacheSlot::Sentinel => None,
            CacheSlot::Concept(c) => Some(c),
        }
    }
}

/// Direction of an `Arc` relative to the rightmost cache vertex.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    /// `η[k] -> η[i]`
    Outgoing,
    /// `η[i] -> η[k]`
    Incoming,
}

/// Parser actions. Indices are 1-based cache positions.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Action {
    Shift,
    PushIndex(usize),
    Arc {
        index: usize,
        dir: Direction,
        label: String,
    },
    Pop,
    /// Shift and PushIndex merged into one step.
    Push(usize),
}

impl Action {
    pub fn is_push(&self) -> bool {
        matches!(self, Action::Push(_))
    }

    /// Push/Pop skeleton of a simplified action; `None` for full-system actions.
    pub fn kind(&self) -> Option<ActionKind> {
        match self {
            Action::Push(_) => Some(ActionKind::Push),
            Action::Pop => Some(ActionKind::Pop),
            _ => None,
        }
    }
}

/// An action with its indices stripped.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ActionKind {
    Push,
    Pop,
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Shift => write!(f, "Shift"),
            Action::PushIndex(i) => write!(f, "PushIndex({i})"),
            Action::Arc { index, dir, label } => {
                let d = match dir {
                    Direction::Outgoing => "out",
                    Direction::Incoming => "in",
                };
                write!(f, "Arc({index},{d},{label})")
            }
            Action::Pop => write!(f, "Pop"),
            Action::Push(i) => write!(f, "Push({i})"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum System {
    /// Shift, PushIndex, Arc, Pop.
    Full,
    /// Push, Pop.
    Simplified,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ParserConfiguration {
    system: System,
    k: usize,
    buffer: Vec<ConceptId>,
    cache: Vec<CacheSlot>,
    stack: Vec<(usize, CacheSlot)>,
    covered: Vec<bool>,
    retired: Vec<bool>,
    edges: Arc<[(ConceptId, ConceptId)]>,
    /// Full system: a Shift is waiting for its PushIndex.
    shifted: bool,
    /// Full system: partial graph built by Arc actions.
    arcs: Vec<(ConceptId, ConceptId, String)>,
}

/// Initial configuration for `g` with buffer `order` and cache size `k`.
pub fn init_config(g: &AmrGraph, order: &[ConceptId], k: usize, system: System) -> Result<ParserConfiguration, TransitionError> {
    let edges = g.edges().iter().map(|e| (e.src, e.dst)).collect();
    ParserConfiguration::new(g.len(), edges, order, k, system)
}

impl ParserConfiguration {
    pub fn new(
        num_concepts: usize,
        edges: Vec<(ConceptId, ConceptId)>,
        order: &[ConceptId],
        k: usize,
        system: System,
    ) -> Result<Self, TransitionError> {
        if k == 0 {
            return Err(TransitionError::ZeroCache);
        }
        let mut seen = vec![false; num_concepts];
        for c in order {
            if c.index() >= num_concepts || seen[c.index()] {
                return Err(TransitionError::BadPermutation);
            }
            seen[c.index()] = true;
        }
        if order.len() != num_concepts {
            return Err(TransitionError::BadPermutation);
        }
        Ok(ParserConfiguration {
            system,
            k,
            buffer: order.to_vec(),
            cache: vec![CacheSlot::Sentinel; k],
            stack: Vec::new(),
            covered: vec![false; edges.len()],
            retired: vec![false; num_concepts],
            edges: edges.into(),
            shifted: false,
            arcs: Vec::new(),
        })
    }

    pub fn system(&self) -> System {
        self.system
    }

    pub fn cache_size(&self) -> usize {
        self.k
    }

    pub fn buffer(&self) -> &[ConceptId] {
        &self.buffer
    }

    pub fn cache(&self) -> &[CacheSlot] {
        &self.cache
    }

    pub fn stack(&self) -> &[(usize, CacheSlot)] {
        &self.stack
    }

    /// Coverage flag per graph edge, in edge-list order.
    pub fn covered(&self) -> &[bool] {
        &self.covered
    }

    pub fn all_covered(&self) -> bool {
        self.covered.iter().all(|&c| c)
    }

    pub fn uncovered_edges(&self) -> impl Iterator<Item = usize> + '_ {
        self.covered.iter().enumerate().filter(|(_, &c)| !c).map(|(i, _)| i)
    }

    pub fn edge_endpoints(&self) -> &[(ConceptId, ConceptId)] {
        &self.edges
    }

    pub fn arcs(&self) -> &[(ConceptId, ConceptId, String)] {
        &self.arcs
    }

    pub fn is_retired(&self, c: ConceptId) -> bool {
        self.retired[c.index()]
    }

    pub fn num_concepts(&self) -> usize {
        self.retired.len()
    }

    /// Rightmost cache slot `η[k]`.
    pub fn rightmost(&self) -> CacheSlot {
        self.cache[self.k - 1]
    }

    pub fn stack_top(&self) -> Option<(usize, CacheSlot)> {
        self.stack.last().copied()
    }

    pub fn is_terminal(&self) -> bool {
        self.buffer.is_empty() && self.stack.is_empty() && !self.shifted
    }

    pub fn cache_members(&self) -> impl Iterator<Item = ConceptId> + '_ {
        self.cache.iter().filter_map(|s| s.concept())
    }

    pub fn stack_members(&self) -> impl Iterator<Item = ConceptId> + '_ {
        self.stack.iter().filter_map(|(_, s)| s.concept())
    }

    /// Every concept sits in exactly one of buffer, cache, stack or the
    /// retired set.
    pub fn conservation_holds(&self) -> bool {
        let mut count = vec![0u32; self.num_concepts()];
        for c in self
            .buffer
            .iter()
            .copied()
            .chain(self.cache_members())
            .chain(self.stack_members())
        {
            count[c.index()] += 1;
        }
        for (c, &r) in self.retired.iter().enumerate() {
            if r {
                count[c] += 1;
            }
        }
        count.iter().all(|&n| n == 1)
    }

    pub fn legal_actions(&self) -> Vec<Action> {
        let mut out = Vec::new();
        match self.system {
            System::Simplified => {
                if !self.buffer.is_empty() {
                    out.extend((1..=self.k).map(Action::Push));
                }
                if !self.stack.is_empty() {
                    out.push(Action::Pop);
                }
            }
            System::Full => {
                if self.shifted {
                    out.extend((1..=self.k).map(Action::PushIndex));
                    return out;
                }
                if !self.buffer.is_empty() {
                    out.push(Action::Shift);
                }
                if self.rightmost().concept().is_some() {
                    for i in 1..self.k {
                        if self.cache[i - 1].concept().is_some() {
                            for dir in [Direction::Outgoing, Direction::Incoming] {
                                out.push(Action::Arc {
                                    index: i,
                                    dir,
                                    label: String::new(),
                                });
                            }
                        }
                    }
                }
                if !self.stack.is_empty() {
                    out.push(Action::Pop);
                }
            }
        }
        out
    }

    /// Legality check. Arc labels are free, so only the index and
    /// direction of an Arc are checked.
    pub fn is_legal(&self, action: &Action) -> bool {
        let index_ok = |i: usize| (1..=self.k).contains(&i);
        match (self.system, action) {
            (System::Simplified, Action::Push(i)) => !self.buffer.is_empty() && index_ok(*i),
            (System::Simplified, Action::Pop) => !self.stack.is_empty(),
            (System::Full, Action::Shift) => !self.shifted && !self.buffer.is_empty(),
            (System::Full, Action::PushIndex(i)) => self.shifted && index_ok(*i),
            (System::Full, Action::Pop) => !self.shifted && !self.stack.is_empty(),
            (System::Full, Action::Arc { index, .. }) => {
                !self.shifted
                    && *index >= 1
                    && *index < self.k
                    && self.cache[index - 1].concept().is_some()
                    && self.rightmost().concept().is_some()
            }
            _ => false,
        }
    }

    pub fn apply(&self, action: &Action) -> Result<Self, TransitionError> {
        let mut next = self.clone();
        next.apply_in_place(action)?;
        Ok(next)
    }

    /// Push of the buffer element at `pos` rather than the front. Generation
    /// treats the buffer as an unordered set and picks its next concept.
    pub fn push_buffer_element(&self, pos: usize, index: usize) -> Result<Self, TransitionError> {
        if self.system != System::Simplified || pos >= self.buffer.len() || !(1..=self.k).contains(&index) {
            return Err(self.illegal(&Action::Push(index)));
        }
        let mut next = self.clone();
        let v = next.buffer.remove(pos);
        next.push_vertex(v, index);
        Ok(next)
    }

    pub fn apply_in_place(&mut self, action: &Action) -> Result<(), TransitionError> {
        if !self.is_legal(action) {
            return Err(self.illegal(action));
        }
        match action {
            Action::Push(i) => {
                let v = self.buffer.remove(0);
                self.push_vertex(v, *i);
            }
            Action::Shift => self.shifted = true,
            Action::PushIndex(i) => {
                self.shifted = false;
                let v = self.buffer.remove(0);
                self.displace(v, *i);
            }
            Action::Arc { index, dir, label } => {
                let top = self.rightmost().concept().expect("checked by is_legal");
                let other = self.cache[index - 1].concept().expect("checked by is_legal");
                let (src, dst) = match dir {
                    Direction::Outgoing => (top, other),
                    Direction::Incoming => (other, top),
                };
                for (e, &(a, b)) in self.edges.iter().enumerate() {
                    if a == src && b == dst {
                        self.covered[e] = true;
                    }
                }
                self.arcs.push((src, dst, label.clone()));
            }
            Action::Pop => {
                let (i, u) = self.stack.pop().expect("checked by is_legal");
                let evicted = self.cache.pop().expect("cache has k slots");
                if let Some(v) = evicted.concept() {
                    self.retired[v.index()] = true;
                }
                self.cache.insert(i - 1, u);
                if self.system == System::Simplified {
                    if let Some(u) = u.concept() {
                        self.cover_with_cache(u);
                    }
                }
            }
        }
        Ok(())
    }

    fn push_vertex(&mut self, v: ConceptId, i: usize) {
        self.displace(v, i);
        self.cover_with_cache(v);
    }

    /// Moves `η[i]` to the stack, compacts the cache leftwards and places
    /// `v` at `η[k]`.
    fn displace(&mut self, v: ConceptId, i: usize) {
        let u = self.cache.remove(i - 1);
        self.stack.push((i, u));
        self.cache.push(CacheSlot::Concept(v));
    }

    fn cover_with_cache(&mut self, v: ConceptId) {
        let members: Vec<ConceptId> = self.cache_members().filter(|&w| w != v).collect();
        for (e, &(a, b)) in self.edges.iter().enumerate() {
            if (a == v && members.contains(&b)) || (b == v && members.contains(&a)) {
                self.covered[e] = true;
            }
        }
    }

    fn illegal(&self, action: &Action) -> TransitionError {
        TransitionError::IllegalAction {
            action: action.to_string(),
            config: format!("{self}"),
        }
    }
}

impl fmt::Display for ParserConfiguration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let slot = |s: &CacheSlot| match s {
            CacheSlot::Sentinel => "$".to_string(),
            CacheSlot::Concept(c) => c.to_string(),
        };
        let stack: Vec<String> = self.stack.iter().map(|(i, s)| format!("({i},{})", slot(s))).collect();
        let cache: Vec<String> = self.cache.iter().map(slot).collect();
        let buffer: Vec<String> = self.buffer.iter().map(|c| c.to_string()).collect();
        write!(
            f,
            "stack=[{}] cache=[{}] buffer=[{}]",
            stack.join(" "),
            cache.join(" "),
            buffer.join(" ")
        )
    }
}

/// Bags with parent links; bag 0 is the root when any bag exists.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TreeDecomposition {
    pub bags: Vec<BTreeSet<ConceptId>>,
    pub parent: Vec<Option<usize>>,
}

impl TreeDecomposition {
    /// Largest bag size minus one; 0 for an empty decomposition.
    pub fn width(&self) -> usize {
        self.bags.iter().map(|b| b.len()).max().unwrap_or(1).saturating_sub(1)
    }

    /// Checks the three decomposition properties for the given vertex and
    /// edge sets: vertex coverage, edge coverage and connected occurrence.
    pub fn check_axioms(&self, vertices: &[ConceptId], edges: &[(ConceptId, ConceptId)]) -> Result<(), String> {
        let n = self.bags.len();
        // Tree shape: parent links acyclic, single root.
        let roots = self.parent.iter().filter(|p| p.is_none()).count();
        if n > 0 && roots != 1 {
            return Err(format!("expected one root, found {roots}"));
        }
        for start in 0..n {
            let mut steps = 0;
            let mut cur = start;
            while let Some(p) = self.parent[cur] {
                if p >= n {
                    return Err(format!("bag {cur} has dangling parent {p}"));
                }
                cur = p;
                steps += 1;
                if steps > n {
                    return Err("parent links contain a cycle".into());
                }
            }
        }
        for v in vertices {
            if !self.bags.iter().any(|b| b.contains(v)) {
                return Err(format!("vertex {v} is in no bag"));
            }
        }
        for (a, b) in edges {
            if !self.bags.iter().any(|bag| bag.contains(a) && bag.contains(b)) {
                return Err(format!("edge {a}-{b} is in no bag"));
            }
        }
        // Occurrence sets are connected iff exactly one bag holding v has a
        // parent that does not hold v.
        let all: BTreeSet<ConceptId> = self.bags.iter().flatten().copied().collect();
        for v in all {
            let tops = (0..n)
                .filter(|&b| self.bags[b].contains(&v))
                .filter(|&b| self.parent[b].is_none_or(|p| !self.bags[p].contains(&v)))
                .count();
            if tops != 1 {
                return Err(format!("bags containing {v} form {tops} components"));
            }
        }
        Ok(())
    }
}

/// Replays `trace` from `init` and collects one bag per cache state created
/// by a Push (or PushIndex). Each bag's parent is the cache state the push
/// started from; pushes from the empty cache chain onto the previous root.
pub fn tree_decomposition(trace: &[Action], init: &ParserConfiguration) -> Result<TreeDecomposition, TransitionError> {
    let mut cfg = init.clone();
    let mut bags: Vec<BTreeSet<ConceptId>> = Vec::new();
    let mut parent = Vec::new();
    let mut open: Vec<Option<usize>> = Vec::new();
    let mut last_root: Option<usize> = None;
    for (step, action) in trace.iter().enumerate() {
        cfg.apply_in_place(action).map_err(|e| TransitionError::IllegalTrace {
            step,
            reason: e.to_string(),
        })?;
        match action {
            Action::Push(_) | Action::PushIndex(_) => {
                let current = open.last().copied().flatten();
                let id = bags.len();
                bags.push(cfg.cache_members().collect());
                let p = current.or(last_root);
                if current.is_none() {
                    last_root = Some(id);
                }
                parent.push(p);
                open.push(Some(id));
            }
            Action::Pop => {
                open.pop();
            }
            _ => {}
        }
    }
    if !cfg.is_terminal() {
        return Err(TransitionError::IllegalTrace {
            step: trace.len(),
            reason: "run does not end in a terminal configuration".into(),
        });
    }
    Ok(TreeDecomposition { bags, parent })
}

/// Renders a run as a fixed-width table with columns stack, cache,
/// buffer, edges, word span and preceding action. Concepts and edges are
/// abbreviated by the first character of their labels; buffer and edge
/// sets are listed in breadth-first discovery order from the root.
pub fn render_table(g: &AmrGraph, init: &ParserConfiguration, trace: &[Action], spans: &[Vec<String>]) -> Result<String, TransitionError> {
    let abbrev = |label: &str| label.chars().next().map(String::from).unwrap_or_default();
    let concept = |c: ConceptId| abbrev(g.label(c));
    let slot = |s: &CacheSlot| match s {
        CacheSlot::Sentinel => "$".to_string(),
        CacheSlot::Concept(c) => concept(*c),
    };
    let bfs = g.undirected_order(g.root());
    let edge_order = g.edge_discovery_order();

    let row = |cfg: &ParserConfiguration, span: &str, action: &str| -> [String; 6] {
        let stack: Vec<String> = cfg
            .stack()
            .iter()
            .flat_map(|(i, s)| [i.to_string(), slot(s)])
            .collect();
        let cache: Vec<String> = cfg.cache().iter().map(slot).collect();
        let buffer: Vec<String> = bfs
            .iter()
            .filter(|c| cfg.buffer().contains(c))
            .map(|&c| concept(c))
            .collect();
        let edges: Vec<String> = edge_order
            .iter()
            .filter(|&&e| !cfg.covered()[e])
            .map(|&e| abbrev(&g.edges()[e].label))
            .collect();
        [
            format!("[{}]", stack.join(", ")),
            format!("[{}]", cache.join(", ")),
            format!("{{{}}}", buffer.join(", ")),
            format!("{{{}}}", edges.join(", ")),
            span.to_string(),
            action.to_string(),
        ]
    };

    let mut rows = vec![[
        "stack".to_string(),
        "cache".to_string(),
        "buffer".to_string(),
        "edges".to_string(),
        "word span".to_string(),
        "preceding action".to_string(),
    ]];
    rows.push(row(init, "---", "---"));
    let mut cfg = init.clone();
    for (step, action) in trace.iter().enumerate() {
        let pushed = match action {
            Action::Push(_) | Action::PushIndex(_) => cfg.buffer().first().copied(),
            _ => None,
        };
        cfg.apply_in_place(action).map_err(|e| TransitionError::IllegalTrace {
            step,
            reason: e.to_string(),
        })?;
        let (span, label) = match (pushed, action) {
            (Some(v), Action::Push(i)) | (Some(v), Action::PushIndex(i)) => {
                let words = spans.get(v.index()).map(|s| s.join(" ")).unwrap_or_default();
                let span = if words.is_empty() { "---".to_string() } else { words };
                (span, format!("Push({}, {i})", concept(v)))
            }
            _ => ("---".to_string(), action.to_string()),
        };
        rows.push(row(&cfg, &span, &label));
    }

    let mut widths = [0usize; 6];
    for r in &rows {
        for (w, cell) in widths.iter_mut().zip(r) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    for r in &rows {
        let cells: Vec<String> = r
            .iter()
            .zip(widths)
            .map(|(cell, w)| format!("{cell:<w$}"))
            .collect();
        out.push_str(cells.join(" | ").trim_end());
        out.push('\n');
    }
    Ok(out)
}
