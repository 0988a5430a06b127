use super::params::{Gradients, ParamId, ParamStore};
use super::NeuralError;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Input,
    Param(ParamId),
    Row(ParamId, usize),
    MatVec(ParamId, Var),
    Add(Vec<Var>),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Dots(Vec<Var>, Var),
    Xent { logits: Var, probs: Vec<f64>, target: usize },
}

#[derive(Clone, Debug)]
struct Node {
    value: Vec<f64>,
    op: Op,
}

/// Append-only record of a forward computation over a parameter snapshot.
pub struct Tape<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Softmax over unmasked entries; masked entries get probability 0.
pub(crate) fn masked_softmax(logits: &[f64], mask: Option<&[bool]>) -> Vec<f64> {
    let allowed = |i: usize| mask.is_none_or(|m| m[i]);
    let max = logits
        .iter()
        .enumerate()
        .filter(|&(i, _)| allowed(i))
        .map(|(_, &x)| x)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits
        .iter()
        .enumerate()
        .map(|(i, &x)| if allowed(i) { (x - max).exp() } else { 0.0 })
        .collect();
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= z);
    out
}

/// Log-probabilities over unmasked entries; masked entries get `-inf`.
pub(crate) fn masked_log_softmax(logits: &[f64], mask: Option<&[bool]>) -> Vec<f64> {
    let allowed = |i: usize| mask.is_none_or(|m| m[i]);
    let max = logits
        .iter()
        .enumerate()
        .filter(|&(i, _)| allowed(i))
        .map(|(_, &x)| x)
        .fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits
        .iter()
        .enumerate()
        .filter(|&(i, _)| allowed(i))
        .map(|(_, &x)| (x - max).exp())
        .sum();
    let lz = max + z.ln();
    logits
        .iter()
        .enumerate()
        .map(|(i, &x)| if allowed(i) { x - lz } else { f64::NEG_INFINITY })
        .collect()
}

impl<'s> Tape<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Tape {
            store,
            nodes: Vec::new(),
        }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn dim(&self, v: Var) -> usize {
        self.nodes[v.0].value.len()
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn same_dims(&self, op: &'static str, a: Var, b: Var) -> Result<(), NeuralError> {
        if self.dim(a) != self.dim(b) {
            return Err(NeuralError::ShapeMismatch {
                op,
                expected: self.dim(a),
                found: self.dim(b),
            });
        }
        Ok(())
    }

    pub fn input(&mut self, value: Vec<f64>) -> Var {
        self.push(value, Op::Input)
    }

    pub fn zeros(&mut self, n: usize) -> Var {
        self.input(vec![0.0; n])
    }

    /// The whole parameter, flattened.
    pub fn param(&mut self, id: ParamId) -> Var {
        let value = self.store.value(id).data().to_vec();
        self.push(value, Op::Param(id))
    }

    /// Row `r` of a matrix parameter.
    pub fn row(&mut self, id: ParamId, r: usize) -> Result<Var, NeuralError> {
        let t = self.store.value(id);
        let (rows, _) = t.dims2();
        if r >= rows {
            return Err(NeuralError::IndexOutOfRange {
                op: "row",
                index: r,
                len: rows,
            });
        }
        let value = t.row(r).to_vec();
        Ok(self.push(value, Op::Row(id, r)))
    }

    /// `W x` for a matrix parameter `W`.
    pub fn matvec(&mut self, w: ParamId, x: Var) -> Result<Var, NeuralError> {
        let t = self.store.value(w);
        let (rows, cols) = t.dims2();
        let xv = &self.nodes[x.0].value;
        if xv.len() != cols {
            return Err(NeuralError::ShapeMismatch {
                op: "matvec",
                expected: cols,
                found: xv.len(),
            });
        }
        let data = t.data();
        let value = (0..rows)
            .map(|r| {
                data[r * cols..(r + 1) * cols]
                    .iter()
                    .zip(xv)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect();
        Ok(self.push(value, Op::MatVec(w, x)))
    }

    /// `W x + b`.
    pub fn affine(&mut self, w: ParamId, b: ParamId, x: Var) -> Result<Var, NeuralError> {
        let wx = self.matvec(w, x)?;
        let bv = self.param(b);
        self.add(&[wx, bv])
    }

    /// `W [x_1; ...; x_n] + b`.
    pub fn concat_affine(&mut self, w: ParamId, b: ParamId, xs: &[Var]) -> Result<Var, NeuralError> {
        let x = self.concat(xs);
        self.affine(w, b, x)
    }

    pub fn add(&mut self, xs: &[Var]) -> Result<Var, NeuralError> {
        let first = *xs.first().ok_or(NeuralError::ShapeMismatch {
            op: "add",
            expected: 1,
            found: 0,
        })?;
        let mut value = self.value(first).to_vec();
        for &x in &xs[1..] {
            self.same_dims("add", first, x)?;
            for (a, b) in value.iter_mut().zip(&self.nodes[x.0].value) {
                *a += b;
            }
        }
        Ok(self.push(value, Op::Add(xs.to_vec())))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NeuralError> {
        self.same_dims("mul", a, b)?;
        let value = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x * y)
            .collect();
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).iter().map(|x| x * c).collect();
        self.push(value, Op::Scale(a, c))
    }

    /// Elementwise mean of equally sized vectors.
    pub fn mean(&mut self, xs: &[Var]) -> Result<Var, NeuralError> {
        let s = self.add(xs)?;
        Ok(self.scale(s, 1.0 / xs.len() as f64))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).iter().map(|x| x.tanh()).collect();
        self.push(value, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).iter().map(|&x| sigmoid(x)).collect();
        self.push(value, Op::Sigmoid(a))
    }

    pub fn concat(&mut self, xs: &[Var]) -> Var {
        let value = xs.iter().flat_map(|&x| self.value(x).iter().copied()).collect();
        self.push(value, Op::Concat(xs.to_vec()))
    }

    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var, NeuralError> {
        let n = self.dim(a);
        if start + len > n {
            return Err(NeuralError::IndexOutOfRange {
                op: "slice",
                index: start + len,
                len: n,
            });
        }
        let value = self.value(a)[start..start + len].to_vec();
        Ok(self.push(value, Op::Slice(a, start)))
    }

    /// Dot product of each row with `u`, one score per row.
    pub fn dots(&mut self, rows: &[Var], u: Var) -> Result<Var, NeuralError> {
        for &r in rows {
            self.same_dims("dots", u, r)?;
        }
        let uv = self.value(u);
        let value = rows
            .iter()
            .map(|&r| self.value(r).iter().zip(uv).map(|(a, b)| a * b).sum())
            .collect();
        Ok(self.push(value, Op::Dots(rows.to_vec(), u)))
    }

    /// Probabilities of a logit node (not recorded).
    pub fn softmax(&self, logits: Var, mask: Option<&[bool]>) -> Vec<f64> {
        masked_softmax(self.value(logits), mask)
    }

    /// Log-probabilities of a logit node (not recorded).
    pub fn log_softmax(&self, logits: Var, mask: Option<&[bool]>) -> Vec<f64> {
        masked_log_softmax(self.value(logits), mask)
    }

    /// `-log softmax(logits)[target]`, with masked entries excluded from
    /// the normalization.
    pub fn xent(&mut self, logits: Var, target: usize, mask: Option<&[bool]>) -> Result<Var, NeuralError> {
        let n = self.dim(logits);
        if target >= n || mask.is_some_and(|m| !m[target]) {
            return Err(NeuralError::IndexOutOfRange {
                op: "xent",
                index: target,
                len: n,
            });
        }
        if let Some(m) = mask {
            if m.len() != n {
                return Err(NeuralError::ShapeMismatch {
                    op: "xent mask",
                    expected: n,
                    found: m.len(),
                });
            }
        }
        let logp = masked_log_softmax(self.value(logits), mask);
        let probs = logp.iter().map(|l| l.exp()).collect();
        Ok(self.push(vec![-logp[target]], Op::Xent { logits, probs, target }))
    }

    /// Reverse sweep from a scalar node; returns parameter gradients.
    pub fn backward(&self, root: Var) -> Result<Gradients, NeuralError> {
        if self.dim(root) != 1 {
            return Err(NeuralError::ShapeMismatch {
                op: "backward",
                expected: 1,
                found: self.dim(root),
            });
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        adj[root.0] = Some(vec![1.0]);
        let mut grads = Gradients::new(self.store.len());

        fn acc(adj: &mut [Option<Vec<f64>>], v: Var, n: usize) -> &mut Vec<f64> {
            adj[v.0].get_or_insert_with(|| vec![0.0; n])
        }

        for idx in (0..=root.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param(id) => {
                    let buf = grads.buffer(*id, g.len());
                    for (a, b) in buf.iter_mut().zip(&g) {
                        *a += b;
                    }
                }
                Op::Row(id, r) => {
                    let t = self.store.value(*id);
                    let (_, cols) = t.dims2();
                    let buf = grads.buffer(*id, t.len());
                    for (a, b) in buf[r * cols..(r + 1) * cols].iter_mut().zip(&g) {
                        *a += b;
                    }
                }
                Op::MatVec(id, x) => {
                    let t = self.store.value(*id);
                    let (rows, cols) = t.dims2();
                    let xv = &self.nodes[x.0].value;
                    let buf = grads.buffer(*id, t.len());
                    for r in 0..rows {
                        if g[r] == 0.0 {
                            continue;
                        }
                        for (a, xc) in buf[r * cols..(r + 1) * cols].iter_mut().zip(xv) {
                            *a += g[r] * xc;
                        }
                    }
                    let data = t.data();
                    let gx = acc(&mut adj, *x, cols);
                    for r in 0..rows {
                        if g[r] == 0.0 {
                            continue;
                        }
                        for (a, w) in gx.iter_mut().zip(&data[r * cols..(r + 1) * cols]) {
                            *a += g[r] * w;
                        }
                    }
                }
                Op::Add(xs) => {
                    for &x in xs {
                        let gx = acc(&mut adj, x, g.len());
                        for (a, b) in gx.iter_mut().zip(&g) {
                            *a += b;
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let ga: Vec<f64> = g.iter().zip(bv).map(|(x, y)| x * y).collect();
                    let gb: Vec<f64> = g.iter().zip(av).map(|(x, y)| x * y).collect();
                    for (t, d) in acc(&mut adj, *a, g.len()).iter_mut().zip(ga) {
                        *t += d;
                    }
                    for (t, d) in acc(&mut adj, *b, g.len()).iter_mut().zip(gb) {
                        *t += d;
                    }
                }
                Op::Scale(a, c) => {
                    for (t, d) in acc(&mut adj, *a, g.len()).iter_mut().zip(&g) {
                        *t += c * d;
                    }
                }
                Op::Tanh(a) => {
                    for ((t, d), y) in acc(&mut adj, *a, g.len()).iter_mut().zip(&g).zip(&node.value) {
                        *t += d * (1.0 - y * y);
                    }
                }
                Op::Sigmoid(a) => {
                    for ((t, d), y) in acc(&mut adj, *a, g.len()).iter_mut().zip(&g).zip(&node.value) {
                        *t += d * y * (1.0 - y);
                    }
                }
                Op::Concat(xs) => {
                    let mut off = 0;
                    for &x in xs {
                        let n = self.dim(x);
                        for (t, d) in acc(&mut adj, x, n).iter_mut().zip(&g[off..off + n]) {
                            *t += d;
                        }
                        off += n;
                    }
                }
                Op::Slice(a, start) => {
                    let n = self.dim(*a);
                    for (t, d) in acc(&mut adj, *a, n)[*start..].iter_mut().zip(&g) {
                        *t += d;
                    }
                }
                Op::Dots(rows, u) => {
                    let uv = self.nodes[u.0].value.clone();
                    let n = uv.len();
                    let mut gu = vec![0.0; n];
                    for (&r, &gr) in rows.iter().zip(&g) {
                        if gr == 0.0 {
                            continue;
                        }
                        let rv = &self.nodes[r.0].value;
                        for (t, x) in gu.iter_mut().zip(rv) {
                            *t += gr * x;
                        }
                        for (t, x) in acc(&mut adj, r, n).iter_mut().zip(&uv) {
                            *t += gr * x;
                        }
                    }
                    for (t, d) in acc(&mut adj, *u, n).iter_mut().zip(gu) {
                        *t += d;
                    }
                }
                Op::Xent { logits, probs, target } => {
                    let n = probs.len();
                    let gl = acc(&mut adj, *logits, n);
                    for (i, (t, p)) in gl.iter_mut().zip(probs).enumerate() {
                        let onehot = if i == *target { 1.0 } else { 0.0 };
                        *t += g[0] * (p - onehot);
                    }
                }
            }
        }
        Ok(grads)
    }
}
