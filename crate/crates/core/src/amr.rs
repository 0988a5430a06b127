//! AMR graphs: PENMAN reading and writing, label preprocessing.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use thiserror::Error;

/// Positional identity of a concept within one graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ConceptId(pub usize);

impl ConceptId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for ConceptId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Edge {
    pub src: ConceptId,
    pub dst: ConceptId,
    pub label: String,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AmrError {
    #[error("malformed PENMAN at byte {offset}: {reason}")]
    MalformedPenman { offset: usize, reason: String },
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
}

fn malformed(offset: usize, reason: impl Into<String>) -> AmrError {
    AmrError::MalformedPenman {
        offset,
        reason: reason.into(),
    }
}

/// Rooted, directed, edge-labelled concept graph.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AmrGraph {
    concepts: Vec<String>,
    edges: Vec<Edge>,
    root: ConceptId,
}

impl AmrGraph {
    /// Builds a graph, checking that it is connected, loop-free and rooted
    /// at an existing concept.
    pub fn new(concepts: Vec<String>, edges: Vec<Edge>, root: ConceptId) -> Result<Self, AmrError> {
        let n = concepts.len();
        if n == 0 {
            return Err(AmrError::InvalidGraph("graph has no concepts".into()));
        }
        if root.0 >= n {
            return Err(AmrError::InvalidGraph(format!("root {root} out of range")));
        }
        for e in &edges {
            if e.src.0 >= n || e.dst.0 >= n {
                return Err(AmrError::InvalidGraph(format!(
                    "edge {} -> {} out of range",
                    e.src, e.dst
                )));
            }
            if e.src == e.dst {
                return Err(AmrError::InvalidGraph(format!("self-loop on {}", e.src)));
            }
        }
        let graph = AmrGraph {
            concepts,
            edges,
            root,
        };
        if graph.undirected_order(root).len() != n {
            return Err(AmrError::InvalidGraph("graph is not connected".into()));
        }
        Ok(graph)
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn root(&self) -> ConceptId {
        self.root
    }

    pub fn concepts(&self) -> &[String] {
        &self.concepts
    }

    pub fn label(&self, c: ConceptId) -> &str {
        &self.concepts[c.0]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn concept_ids(&self) -> impl Iterator<Item = ConceptId> {
        (0..self.concepts.len()).map(ConceptId)
    }

    /// Edges leaving `c`, in edge-list order.
    pub fn outgoing(&self, c: ConceptId) -> impl Iterator<Item = (usize, &Edge)> {
        self.edges.iter().enumerate().filter(move |(_, e)| e.src == c)
    }

    /// Edges entering `c`, in edge-list order.
    pub fn incoming(&self, c: ConceptId) -> impl Iterator<Item = (usize, &Edge)> {
        self.edges.iter().enumerate().filter(move |(_, e)| e.dst == c)
    }

    /// Breadth-first order over the underlying undirected graph, following
    /// edges in list order.
    pub fn undirected_order(&self, start: ConceptId) -> Vec<ConceptId> {
        let mut seen = vec![false; self.len()];
        let mut order = Vec::with_capacity(self.len());
        let mut queue = VecDeque::new();
        seen[start.0] = true;
        queue.push_back(start);
        while let Some(u) = queue.pop_front() {
            order.push(u);
            for e in &self.edges {
                let next = if e.src == u {
                    e.dst
                } else if e.dst == u {
                    e.src
                } else {
                    continue;
                };
                if !seen[next.0] {
                    seen[next.0] = true;
                    queue.push_back(next);
                }
            }
        }
        order
    }

    /// Edge indices in the order a breadth-first walk from the root
    /// discovers them.
    pub fn edge_discovery_order(&self) -> Vec<usize> {
        let order = self.undirected_order(self.root);
        let mut taken = vec![false; self.edges.len()];
        let mut out = Vec::with_capacity(self.edges.len());
        for u in order {
            for (i, e) in self.edges.iter().enumerate() {
                if !taken[i] && (e.src == u || e.dst == u) {
                    taken[i] = true;
                    out.push(i);
                }
            }
        }
        out
    }

    fn with_labels(&self, concepts: Vec<String>) -> AmrGraph {
        AmrGraph {
            concepts,
            edges: self.edges.clone(),
            root: self.root,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok<'a> {
    Open,
    Close,
    Slash,
    Role(&'a str),
    Symbol(&'a str),
    Quoted(&'a str),
}

fn tokenize(text: &str) -> Result<Vec<(usize, Tok<'_>)>, AmrError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    let is_delim = |b: u8| b.is_ascii_whitespace() || matches!(b, b'(' | b')' | b'/' | b':' | b'"');
    while i < bytes.len() {
        let b = bytes[i];
        match b {
            _ if b.is_ascii_whitespace() => i += 1,
            b'(' => {
                out.push((i, Tok::Open));
                i += 1;
            }
            b')' => {
                out.push((i, Tok::Close));
                i += 1;
            }
            b'/' => {
                out.push((i, Tok::Slash));
                i += 1;
            }
            b'"' => {
                let start = i + 1;
                let end = text[start..]
                    .find('"')
                    .map(|p| start + p)
                    .ok_or_else(|| malformed(i, "unterminated string"))?;
                out.push((i, Tok::Quoted(&text[start..end])));
                i = end + 1;
            }
            b':' => {
                let start = i + 1;
                let mut j = start;
                while j < bytes.len() && !is_delim(bytes[j]) {
                    j += 1;
                }
                if j == start {
                    return Err(malformed(i, "empty role"));
                }
                out.push((i, Tok::Role(&text[start..j])));
                i = j;
            }
            _ => {
                let start = i;
                while i < bytes.len() && !is_delim(bytes[i]) {
                    i += 1;
                }
                out.push((start, Tok::Symbol(&text[start..i])));
            }
        }
    }
    Ok(out)
}

enum Target {
    Node(usize),
    Symbol { offset: usize, text: String },
    Constant(String),
}

struct RawNode {
    var: String,
    label: String,
    children: Vec<(String, Target)>,
}

struct Reader<'a> {
    toks: Vec<(usize, Tok<'a>)>,
    pos: usize,
    end: usize,
    nodes: Vec<RawNode>,
}

impl<'a> Reader<'a> {
    fn peek(&self) -> Option<&Tok<'a>> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |(o, _)| *o)
    }

    fn next(&mut self) -> Option<Tok<'a>> {
        let t = self.toks.get(self.pos).map(|(_, t)| t.clone());
        self.pos += 1;
        t
    }

    fn node(&mut self) -> Result<usize, AmrError> {
        let at = self.offset();
        if self.next() != Some(Tok::Open) {
            return Err(malformed(at, "expected '('"));
        }
        let at = self.offset();
        let var = match self.next() {
            Some(Tok::Symbol(s)) => s.to_string(),
            _ => return Err(malformed(at, "expected variable")),
        };
        let at = self.offset();
        if self.next() != Some(Tok::Slash) {
            return Err(malformed(at, "expected '/'"));
        }
        let at = self.offset();
        let label = match self.next() {
            Some(Tok::Symbol(s)) | Some(Tok::Quoted(s)) => s.to_string(),
            _ => return Err(malformed(at, "expected concept label")),
        };
        let id = self.nodes.len();
        self.nodes.push(RawNode {
            var,
            label,
            children: Vec::new(),
        });
        loop {
            let at = self.offset();
            match self.next() {
                Some(Tok::Close) => break,
                Some(Tok::Role(role)) => {
                    let role = role.to_string();
                    let at = self.offset();
                    let target = match self.peek() {
                        Some(Tok::Open) => Target::Node(self.node()?),
                        Some(Tok::Symbol(s)) => {
                            let text = s.to_string();
                            self.pos += 1;
                            Target::Symbol { offset: at, text }
                        }
                        Some(Tok::Quoted(s)) => {
                            let text = s.to_string();
                            self.pos += 1;
                            Target::Constant(text)
                        }
                        _ => return Err(malformed(at, format!("missing target for :{role}"))),
                    };
                    self.nodes[id].children.push((role, target));
                }
                None => return Err(malformed(at, "unbalanced parentheses")),
                _ => return Err(malformed(at, "expected role or ')'")),
            }
        }
        Ok(id)
    }
}

/// Symbols shaped like AMR variables (`a`, `y2`); anything else is a constant.
fn looks_like_variable(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_lowercase()) && chars.all(|c| c.is_ascii_digit())
}

/// Inverse roles are written `:rel-of`; `consist-of` is a genuine role.
fn inverse_role(role: &str) -> Option<&str> {
    if role.eq_ignore_ascii_case("consist-of") {
        return None;
    }
    role.strip_suffix("-of").filter(|r| !r.is_empty())
}

/// Parses one PENMAN graph. Constants become concept vertices; repeated
/// variables add edges, not vertices; the first variable is the root.
pub fn parse_penman(text: &str) -> Result<AmrGraph, AmrError> {
    let toks = tokenize(text)?;
    let mut reader = Reader {
        toks,
        pos: 0,
        end: text.len(),
        nodes: Vec::new(),
    };
    if reader.peek().is_none() {
        return Err(malformed(0, "empty input"));
    }
    reader.node()?;
    if reader.pos < reader.toks.len() {
        return Err(malformed(reader.offset(), "trailing content after graph"));
    }

    let mut concepts: Vec<String> = Vec::new();
    let mut vars: BTreeMap<String, ConceptId> = BTreeMap::new();
    for node in &reader.nodes {
        if vars.insert(node.var.clone(), ConceptId(usize::MAX)).is_some() {
            return Err(malformed(0, format!("variable '{}' defined twice", node.var)));
        }
    }
    let mut edges = Vec::new();
    fn walk(
        idx: usize,
        nodes: &[RawNode],
        concepts: &mut Vec<String>,
        vars: &mut BTreeMap<String, ConceptId>,
        edges: &mut Vec<Edge>,
        pending: &mut Vec<(ConceptId, String, String, usize)>,
    ) -> ConceptId {
        let id = ConceptId(concepts.len());
        concepts.push(nodes[idx].label.clone());
        vars.insert(nodes[idx].var.clone(), id);
        for (role, target) in &nodes[idx].children {
            match target {
                Target::Node(child) => {
                    // Reserve the slot so edges keep their textual order.
                    let slot = edges.len();
                    edges.push(oriented(id, id, role));
                    let cid = walk(*child, nodes, concepts, vars, edges, pending);
                    edges[slot] = oriented(id, cid, role);
                }
                Target::Constant(text) => {
                    let cid = ConceptId(concepts.len());
                    concepts.push(text.clone());
                    edges.push(oriented(id, cid, role));
                }
                Target::Symbol { offset, text } => {
                    // Resolved after the walk: the variable may be defined later.
                    edges.push(Edge {
                        src: id,
                        dst: ConceptId(usize::MAX),
                        label: String::new(),
                    });
                    pending.push((id, role.clone(), text.clone(), *offset));
                }
            }
        }
        id
    }
    fn oriented(src: ConceptId, dst: ConceptId, role: &str) -> Edge {
        match inverse_role(role) {
            Some(base) => Edge {
                src: dst,
                dst: src,
                label: base.to_string(),
            },
            None => Edge {
                src,
                dst,
                label: role.to_string(),
            },
        }
    }
    let mut pending = Vec::new();
    walk(
        0,
        &reader.nodes,
        &mut concepts,
        &mut vars,
        &mut edges,
        &mut pending,
    );

    // Fill placeholder edges in order.
    let mut pending = pending.into_iter();
    for slot in edges.iter_mut().filter(|e| e.dst.0 == usize::MAX) {
        let (src, role, text, offset) = pending.next().expect("placeholder without pending symbol");
        let dst = match vars.get(&text) {
            Some(&id) => id,
            None if looks_like_variable(&text) => {
                return Err(malformed(offset, format!("undefined variable '{text}'")));
            }
            None => {
                let id = ConceptId(concepts.len());
                concepts.push(text.clone());
                id
            }
        };
        if dst == src {
            return Err(malformed(offset, format!("self-loop through '{text}'")));
        }
        *slot = oriented(src, dst, &role);
    }

    AmrGraph::new(concepts, edges, ConceptId(0)).map_err(|e| malformed(0, e.to_string()))
}

/// Splits text into blank-line separated blocks and parses each as a graph.
pub fn parse_penman_blocks(text: &str) -> Result<Vec<AmrGraph>, AmrError> {
    split_blocks(text)
        .into_iter()
        .map(|block| parse_penman(&block))
        .collect()
}

pub(crate) fn split_blocks(text: &str) -> Vec<String> {
    let mut blocks = Vec::new();
    let mut current = String::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !current.trim().is_empty() {
                blocks.push(std::mem::take(&mut current));
            }
            current.clear();
        } else {
            current.push_str(line);
            current.push('\n');
        }
    }
    if !current.trim().is_empty() {
        blocks.push(current);
    }
    blocks
}

/// Strips trailing `-NN` sense suffixes (exactly two digits).
fn strip_sense(label: &str) -> &str {
    let mut out = label;
    loop {
        let b = out.as_bytes();
        let n = b.len();
        if n > 3 && b[n - 3] == b'-' && b[n - 2].is_ascii_digit() && b[n - 1].is_ascii_digit() {
            out = &out[..n - 3];
        } else {
            return out;
        }
    }
}

/// Lowercases labels and removes sense suffixes (`run-02` becomes `run`).
pub fn preprocess_labels(g: &AmrGraph) -> AmrGraph {
    let concepts = g
        .concepts
        .iter()
        .map(|label| strip_sense(&label.to_lowercase()).to_string())
        .collect();
    g.with_labels(concepts)
}

fn needs_quotes(label: &str) -> bool {
    label.is_empty()
        || label
            .bytes()
            .any(|b| b.is_ascii_whitespace() || matches!(b, b'(' | b')' | b'/' | b':' | b'"'))
}

fn write_label(out: &mut String, label: &str) {
    if needs_quotes(label) {
        out.push('"');
        out.push_str(label);
        out.push('"');
    } else {
        out.push_str(label);
    }
}

/// Canonical PENMAN text with variables `c0..c{n-1}` named by concept id.
/// Vertices only reachable against edge direction are written through
/// `-of` roles.
pub fn serialize(g: &AmrGraph) -> String {
    let mut visited = vec![false; g.len()];
    let mut used = vec![false; g.edges.len()];
    let mut out = String::new();
    write_node(g, g.root, &mut visited, &mut used, &mut out);
    out
}

fn write_node(g: &AmrGraph, c: ConceptId, visited: &mut [bool], used: &mut [bool], out: &mut String) {
    visited[c.0] = true;
    out.push_str(&format!("(c{} / ", c.0));
    write_label(out, &g.concepts[c.0]);
    // Children first along edge direction, then inverse edges.
    for (i, e) in g.edges.iter().enumerate() {
        if used[i] {
            continue;
        }
        let (other, role) = if e.src == c {
            (e.dst, e.label.clone())
        } else if e.dst == c {
            // Only traverse inversely to reach vertices no forward path reaches.
            if visited[e.src.0] || forward_reachable(g, e.src, visited) {
                continue;
            }
            (e.src, format!("{}-of", e.label))
        } else {
            continue;
        };
        used[i] = true;
        out.push_str(" :");
        out.push_str(&role);
        out.push(' ');
        if visited[other.0] {
            out.push_str(&format!("c{}", other.0));
        } else {
            write_node(g, other, visited, used, out);
        }
    }
    out.push(')');
}

/// True if `target` can still be reached forward from some visited vertex
/// without passing through other visited vertices. Keeps inverse roles for
/// vertices that ordinary traversal will never see.
fn forward_reachable(g: &AmrGraph, target: ConceptId, visited: &[bool]) -> bool {
    let mut seen = vec![false; g.len()];
    let mut stack: Vec<ConceptId> = g.concept_ids().filter(|c| visited[c.0]).collect();
    for c in &stack {
        seen[c.0] = true;
    }
    while let Some(u) = stack.pop() {
        for e in &g.edges {
            if e.src == u && !seen[e.dst.0] {
                if e.dst == target {
                    return true;
                }
                seen[e.dst.0] = true;
                stack.push(e.dst);
            }
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const SAMPLE: &str = "(o / open-01 :ARG1 (c / center) :time (d / date-entity :year (y2 / 2009)) :manner (f / formal))";

    #[test]
    fn parses_sample_graph() {
        let g = parse_penman(SAMPLE).unwrap();
        assert_eq!(g.len(), 5);
        assert_eq!(g.edges().len(), 4);
        assert_eq!(g.root(), ConceptId(0));
        assert_eq!(g.label(ConceptId(0)), "open-01");
        assert_eq!(g.concepts(), ["open-01", "center", "date-entity", "2009", "formal"]);
        assert_eq!(g.edges()[2].label, "year");
    }

    #[test]
    fn single_node() {
        let g = parse_penman("(a / alpha)").unwrap();
        assert_eq!(g.len(), 1);
        assert!(g.edges().is_empty());
        assert_eq!(serialize(&g), "(c0 / alpha)");
    }

    #[test]
    fn reentrancy_adds_edge_not_vertex() {
        let g = parse_penman("(a / alpha :mod (b / beta) :mod b)").unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g.edges().len(), 2);
        assert!(g.edges().iter().all(|e| e.src == ConceptId(0) && e.dst == ConceptId(1)));
    }

    #[test]
    fn forward_reference_resolves() {
        let g = parse_penman("(a / x :ARG0 b :ARG1 (b / y))").unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g.edges().len(), 2);
    }

    #[test]
    fn inverse_roles_flip() {
        let g = parse_penman("(a / x :ARG0-of (b / y))").unwrap();
        assert_eq!(g.edges()[0].src, ConceptId(1));
        assert_eq!(g.edges()[0].label, "ARG0");
        let g = parse_penman("(a / x :consist-of (b / y))").unwrap();
        assert_eq!(g.edges()[0].src, ConceptId(0));
    }

    #[test]
    fn malformed_inputs() {
        for bad in [
            "(a / alpha",
            "(a / alpha))",
            "(a / alpha :mod (a / beta))",
            "(a / alpha :mod b)",
            "(a / alpha :mod a)",
            "",
            "(a alpha)",
        ] {
            assert!(
                matches!(parse_penman(bad), Err(AmrError::MalformedPenman { .. })),
                "{bad:?} should be rejected"
            );
        }
    }

    #[test]
    fn quoted_and_constant_targets() {
        let g = parse_penman("(p / person :name (n / name :op1 \"Obama\") :polarity -)").unwrap();
        assert_eq!(g.concepts(), ["person", "name", "Obama", "-"]);
        let again = parse_penman(&serialize(&g)).unwrap();
        assert_eq!(again.concepts(), g.concepts());
    }

    #[test]
    fn preprocess_examples() {
        let g = AmrGraph::new(
            vec!["run-02".into(), "center".into(), "Open-01".into(), "2009".into()],
            vec![
                Edge { src: ConceptId(0), dst: ConceptId(1), label: "ARG0".into() },
                Edge { src: ConceptId(0), dst: ConceptId(2), label: "ARG1".into() },
                Edge { src: ConceptId(2), dst: ConceptId(3), label: "time".into() },
            ],
            ConceptId(0),
        )
        .unwrap();
        let p = preprocess_labels(&g);
        assert_eq!(p.concepts(), ["run", "center", "open", "2009"]);
        assert_eq!(p.edges(), g.edges());
        assert_eq!(preprocess_labels(&p), p);
    }

    #[test]
    fn sense_stripping_needs_two_digits() {
        assert_eq!(strip_sense("have-rel-role-91"), "have-rel-role");
        assert_eq!(strip_sense("thing-1"), "thing-1");
        assert_eq!(strip_sense("x-123"), "x-123");
        assert_eq!(strip_sense("-01"), "-01");
    }

    #[test]
    fn serialize_round_trips_sample() {
        let g = parse_penman(SAMPLE).unwrap();
        let text = serialize(&g);
        let back = parse_penman(&text).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn serialize_uses_inverse_roles_when_needed() {
        // b only reachable against the edge direction.
        let g = AmrGraph::new(
            vec!["x".into(), "y".into()],
            vec![Edge { src: ConceptId(1), dst: ConceptId(0), label: "ARG0".into() }],
            ConceptId(0),
        )
        .unwrap();
        let text = serialize(&g);
        assert_eq!(text, "(c0 / x :ARG0-of (c1 / y))");
        assert_eq!(parse_penman(&text).unwrap(), g);
    }

    #[test]
    fn rejects_disconnected() {
        let err = AmrGraph::new(vec!["a".into(), "b".into()], vec![], ConceptId(0));
        assert!(err.is_err());
    }

    #[test]
    fn blocks() {
        let text = format!("{SAMPLE}\n\n(a / alpha)\n\n\n(b / beta\n  :mod (c / gamma))\n");
        let gs = parse_penman_blocks(&text).unwrap();
        assert_eq!(gs.len(), 3);
        assert_eq!(gs[2].len(), 2);
    }
}
