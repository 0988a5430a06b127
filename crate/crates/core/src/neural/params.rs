use std::collections::BTreeMap;
use std::io::{self, Read, Write};

use rand::Rng;

use super::NeuralError;

/// Dense row-major tensor of 64-bit reals.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self, NeuralError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(NeuralError::ShapeMismatch {
                op: "tensor",
                expected,
                found: data.len(),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rows and columns, treating vectors as a single column.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [] => (1, 1),
            [n] => (*n, 1),
            [r, c] => (*r, *c),
            [r, rest @ ..] => (*r, rest.iter().product()),
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let (_, c) = self.dims2();
        &self.data[r * c..(r + 1) * c]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct ParamEntry {
    pub name: String,
    pub value: Tensor,
    pub grad: Vec<f64>,
    pub frozen: bool,
    /// Per-row freeze flags; empty when no row is individually frozen.
    pub frozen_rows: Vec<bool>,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl ParamEntry {
    fn is_frozen_at(&self, i: usize) -> bool {
        if self.frozen {
            return true;
        }
        if self.frozen_rows.is_empty() {
            return false;
        }
        let (_, c) = self.value.dims2();
        self.frozen_rows[i / c]
    }
}

/// Gradient buffers indexed by parameter, filled by the tape's backward pass.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn new(num_params: usize) -> Self {
        Gradients {
            grads: vec![None; num_params],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    pub(crate) fn buffer(&mut self, id: ParamId, len: usize) -> &mut Vec<f64> {
        if self.grads.len() <= id.0 {
            self.grads.resize(id.0 + 1, None);
        }
        self.grads[id.0].get_or_insert_with(|| vec![0.0; len])
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_deref().map(|g| (ParamId(i), g)))
    }

    pub fn add(&mut self, other: &Gradients) {
        for (id, g) in other.iter() {
            let buf = self.buffer(id, g.len());
            for (a, b) in buf.iter_mut().zip(g) {
                *a += b;
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Named parameter tensors with gradients and Adam moments.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    index: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> ParamId {
        assert!(!self.index.contains_key(name), "duplicate parameter {name}");
        let id = ParamId(self.entries.len());
        let n = value.len();
        self.entries.push(ParamEntry {
            name: name.to_string(),
            value,
            grad: vec![0.0; n],
            frozen: false,
            frozen_rows: Vec::new(),
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        });
        self.index.insert(name.to_string(), id);
        id
    }

    /// Adds a tensor drawn from uniform(-scale, scale).
    pub fn add_uniform<R: Rng>(&mut self, name: &str, shape: &[usize], scale: f64, rng: &mut R) -> ParamId {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
        self.add(name, Tensor::from_vec(shape, data).expect("sized from shape"))
    }

    pub fn add_zeros(&mut self, name: &str, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn id(&self, name: &str) -> Result<ParamId, NeuralError> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| NeuralError::UnknownParam(name.to_string()))
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn set_frozen(&mut self, id: ParamId, frozen: bool) {
        self.entries[id.0].frozen = frozen;
    }

    pub fn set_frozen_rows(&mut self, id: ParamId, rows: Vec<bool>) {
        let e = &mut self.entries[id.0];
        assert_eq!(rows.len(), e.value.dims2().0, "one flag per row");
        e.frozen_rows = rows;
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// Adds tape gradients into the stored gradient buffers.
    pub fn accumulate(&mut self, grads: &Gradients) {
        for (id, g) in grads.iter() {
            for (a, b) in self.entries[id.0].grad.iter_mut().zip(g) {
                *a += b;
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// One Adam update on every non-frozen scalar, then zeroes gradients.
    pub fn adam_step(&mut self, cfg: &AdamConfig) {
        for e in &mut self.entries {
            e.t += 1;
            if e.frozen {
                e.grad.iter_mut().for_each(|g| *g = 0.0);
                continue;
            }
            let bc1 = 1.0 - cfg.beta1.powi(e.t as i32);
            let bc2 = 1.0 - cfg.beta2.powi(e.t as i32);
            for i in 0..e.value.len() {
                let g = e.grad[i];
                e.grad[i] = 0.0;
                if e.is_frozen_at(i) {
                    continue;
                }
                e.m[i] = cfg.beta1 * e.m[i] + (1.0 - cfg.beta1) * g;
                e.v[i] = cfg.beta2 * e.v[i] + (1.0 - cfg.beta2) * g * g;
                let m_hat = e.m[i] / bc1;
                let v_hat = e.v[i] / bc2;
                e.value.data[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
    }

    /// Writes every tensor as (name, dims, little-endian f64 data).
    pub fn write_tensors<W: Write>(&self, out: &mut W) -> io::Result<()> {
        out.write_all(b"CNLGTENS")?;
        out.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for e in &self.entries {
            out.write_all(&(e.name.len() as u32).to_le_bytes())?;
            out.write_all(e.name.as_bytes())?;
            out.write_all(&(e.value.shape.len() as u32).to_le_bytes())?;
            for &d in &e.value.shape {
                out.write_all(&(d as u64).to_le_bytes())?;
            }
            for &x in &e.value.data {
                out.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Reads tensors written by [`ParamStore::write_tensors`].
    pub fn read_tensors<R: Read>(input: &mut R) -> Result<Vec<(String, Tensor)>, NeuralError> {
        fn u32_of<R: Read>(r: &mut R) -> io::Result<u32> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            Ok(u32::from_le_bytes(b))
        }
        fn u64_of<R: Read>(r: &mut R) -> io::Result<u64> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            Ok(u64::from_le_bytes(b))
        }
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != b"CNLGTENS" {
            return Err(NeuralError::Checkpoint("bad magic".into()));
        }
        let count = u32_of(input)?;
        let mut out = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let len = u32_of(input)? as usize;
            let mut name = vec![0u8; len];
            input.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|e| NeuralError::Checkpoint(e.to_string()))?;
            let ndims = u32_of(input)? as usize;
            let shape = (0..ndims)
                .map(|_| u64_of(input).map(|d| d as usize))
                .collect::<io::Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                data.push(f64::from_bits(u64_of(input)?));
            }
            out.push((name, Tensor::from_vec(&shape, data)?));
        }
        Ok(out)
    }

    /// Overwrites values by name; every stored tensor must be present with
    /// a matching shape.
    pub fn load_values(&mut self, tensors: Vec<(String, Tensor)>) -> Result<(), NeuralError> {
        let mut by_name: BTreeMap<String, Tensor> = tensors.into_iter().collect();
        for e in &mut self.entries {
            let t = by_name
                .remove(&e.name)
                .ok_or_else(|| NeuralError::Checkpoint(format!("missing tensor {}", e.name)))?;
            if t.shape != e.value.shape {
                return Err(NeuralError::Checkpoint(format!(
                    "tensor {} has shape {:?}, expected {:?}",
                    e.name, t.shape, e.value.shape
                )));
            }
            e.value = t;
        }
        if let Some(name) = by_name.keys().next() {
            return Err(NeuralError::Checkpoint(format!("unexpected tensor {name}")));
        }
        Ok(())
    }
}
