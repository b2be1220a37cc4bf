use super::{matmul_raw, Tensor};
use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Clamp applied to probabilities inside the binary cross-entropy.
const BCE_EPS: f64 = 1e-12;

/// Epsilon added to the variance in layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Pointwise activations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Act {
    Relu,
    Sigmoid,
    Tanh,
}

impl Act {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Act::Relu => x.max(0.0),
            Act::Sigmoid => sigmoid(x),
            Act::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the output value.
    fn grad_from_output(self, y: f64) -> f64 {
        match self {
            // subgradient 0 at 0
            Act::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Act::Sigmoid => y * (1.0 - y),
            Act::Tanh => 1.0 - y * y,
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    /// Second operand broadcast into the first; `map` sends output index to operand index.
    Add(Var, Var, Option<Vec<usize>>),
    Mul(Var, Var, Option<Vec<usize>>),
    Scale(Var, f64),
    Unary(Act, Var),
    Softmax {
        input: Var,
        axis: usize,
    },
    LayerNorm {
        input: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    Dropout {
        input: Var,
        scale: Vec<f64>,
    },
    Sum(Var),
    Mean(Var),
    SliceCols {
        input: Var,
        start: usize,
    },
    ConcatCols(Var, Var),
    StackRows(Vec<Var>),
    Row {
        input: Var,
        index: usize,
    },
    Bce {
        input: Var,
        targets: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Computation tape. Nodes are appended in topological order, so the
/// reverse sweep in [`Graph::backward`] needs no explicit sort.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    backward_done: bool,
    total_muls: u64,
    head_muls: u64,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never accumulates gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Gradient accumulated by the last [`Graph::backward`], if any reached `v`.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        self.grads[v.0].as_ref().map(|g| Tensor {
            shape: self.nodes[v.0].value.shape().to_vec(),
            data: g.clone(),
        })
    }

    /// Clears gradients so that `backward` may run again.
    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
        self.backward_done = false;
    }

    /// Multiplications performed by every matrix product on this graph.
    pub fn mul_count(&self) -> u64 {
        self.total_muls
    }

    /// Multiplications performed by products flagged as attention-head products.
    pub fn head_mul_count(&self) -> u64 {
        self.head_muls
    }

    pub fn reset_counters(&mut self) {
        self.total_muls = 0;
        self.head_muls = 0;
    }

    fn matmul_impl(&mut self, a: Var, b: Var, head: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape(format!("matmul of {sa:?} and {sb:?}")));
        }
        let (p, q, r) = (sa[0], sa[1], sb[1]);
        let data = matmul_raw(self.value(a).data(), self.value(b).data(), p, q, r);
        let muls = (p * q * r) as u64;
        self.total_muls += muls;
        if head {
            self.head_muls += muls;
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            Tensor {
                shape: vec![p, r],
                data,
            },
            Op::MatMul(a, b),
            rg,
        ))
    }

    /// `a[p×q] · b[q×r]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// Matrix product that also counts toward [`Graph::head_mul_count`].
    pub fn head_matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.rank() != 2 {
            return Err(Error::Shape(format!("transpose of {:?}", t.shape())));
        }
        let (p, q) = (t.shape()[0], t.shape()[1]);
        let src = t.data();
        let mut data = vec![0.0; p * q];
        for i in 0..p {
            for j in 0..q {
                data[j * p + i] = src[i * q + j];
            }
        }
        let rg = self.rg(a);
        Ok(self.push(
            Tensor {
                shape: vec![q, p],
                data,
            },
            Op::Transpose(a),
            rg,
        ))
    }

    /// Orders operands so the second broadcasts into the first.
    fn broadcast_pair(&self, a: Var, b: Var) -> Result<(Var, Var, Option<Vec<usize>>)> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb {
            return Ok((a, b, None));
        }
        if let Some(map) = broadcast_map(sa, sb) {
            return Ok((a, b, Some(map)));
        }
        if let Some(map) = broadcast_map(sb, sa) {
            return Ok((b, a, Some(map)));
        }
        Err(Error::Shape(format!(
            "shapes {sa:?} and {sb:?} are not broadcast-compatible"
        )))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b, map) = self.broadcast_pair(a, b)?;
        let av = self.value(a);
        let bv = self.value(b).data();
        let data = match &map {
            None => av.data().iter().zip(bv).map(|(x, y)| x + y).collect(),
            Some(m) => av.data().iter().zip(m).map(|(x, &j)| x + bv[j]).collect(),
        };
        let shape = av.shape().to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor { shape, data }, Op::Add(a, b, map), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b, map) = self.broadcast_pair(a, b)?;
        let av = self.value(a);
        let bv = self.value(b).data();
        let data = match &map {
            None => av.data().iter().zip(bv).map(|(x, y)| x * y).collect(),
            Some(m) => av.data().iter().zip(m).map(|(x, &j)| x * bv[j]).collect(),
        };
        let shape = av.shape().to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor { shape, data }, Op::Mul(a, b, map), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a);
        let data = t.data().iter().map(|x| x * c).collect();
        let shape = t.shape().to_vec();
        let rg = self.rg(a);
        self.push(Tensor { shape, data }, Op::Scale(a, c), rg)
    }

    pub fn act(&mut self, kind: Act, a: Var) -> Var {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| kind.apply(x)).collect();
        let shape = t.shape().to_vec();
        let rg = self.rg(a);
        self.push(Tensor { shape, data }, Op::Unary(kind, a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.act(Act::Relu, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.act(Act::Sigmoid, a)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.act(Act::Tanh, a)
    }

    /// Softmax along `axis`. Positions where `mask` is false (indexed along
    /// `axis`) get probability 0 in every slice.
    pub fn softmax(&mut self, a: Var, axis: usize, mask: Option<&[bool]>) -> Result<Var> {
        let t = self.value(a);
        let shape = t.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::Shape(format!(
                "softmax axis {axis} for shape {shape:?}"
            )));
        }
        let n = shape[axis];
        if let Some(m) = mask {
            if m.len() != n {
                return Err(Error::Shape(format!(
                    "mask of length {} for softmax axis of extent {n}",
                    m.len()
                )));
            }
            if !m.iter().any(|&x| x) {
                return Err(Error::EmptySupport);
            }
        }
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let src = t.data();
        let mut data = vec![0.0; src.len()];
        let live = |k: usize| mask.is_none_or(|m| m[k]);
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| o * n * inner + k * inner + i;
                let max = (0..n)
                    .filter(|&k| live(k))
                    .map(|k| src[at(k)])
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for k in (0..n).filter(|&k| live(k)) {
                    let e = (src[at(k)] - max).exp();
                    data[at(k)] = e;
                    total += e;
                }
                for k in (0..n).filter(|&k| live(k)) {
                    data[at(k)] /= total;
                }
            }
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor { shape, data }, Op::Softmax { input: a, axis }, rg))
    }

    /// Normalizes each row over the last axis, then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let t = self.value(x);
        let d = *t.shape().last().unwrap_or(&0);
        if d == 0 {
            return Err(Error::Shape("layer norm over empty axis".into()));
        }
        let (gv, bv) = (self.value(gain).data(), self.value(bias).data());
        if gv.len() != d || bv.len() != d {
            return Err(Error::Shape(format!(
                "layer norm width {d} with gain {:?} and bias {:?}",
                self.shape(gain),
                self.shape(bias)
            )));
        }
        let rows = t.len() / d;
        let mut xhat = vec![0.0; t.len()];
        let mut inv_std = vec![0.0; rows];
        let mut data = vec![0.0; t.len()];
        for r in 0..rows {
            let row = &t.data()[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = is;
            for c in 0..d {
                let xh = (row[c] - mean) * is;
                xhat[r * d + c] = xh;
                data[r * d + c] = xh * gv[c] + bv[c];
            }
        }
        let shape = t.shape().to_vec();
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(
            Tensor { shape, data },
            Op::LayerNorm {
                input: x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Row lookup `table[ids]`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if t.rank() != 2 {
            return Err(Error::Shape(format!("gather from {:?}", t.shape())));
        }
        let (v, d) = (t.shape()[0], t.shape()[1]);
        if ids.is_empty() {
            return Err(Error::Shape("gather with no ids".into()));
        }
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::Index(format!("id {id} out of range for {v} rows")));
            }
            data.extend_from_slice(&t.data()[id * d..(id + 1) * d]);
        }
        let rg = self.rg(table);
        Ok(self.push(
            Tensor {
                shape: vec![ids.len(), d],
                data,
            },
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Inverted dropout. Identity when `train` is false or `rate` is 0.
    pub fn dropout(&mut self, a: Var, rate: f64, seed: u64, train: bool) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Param(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !train || rate == 0.0 {
            return Ok(a);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keep = 1.0 / (1.0 - rate);
        let t = self.value(a);
        let scale: Vec<f64> = (0..t.len())
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let data = t.data().iter().zip(&scale).map(|(x, s)| x * s).collect();
        let shape = t.shape().to_vec();
        let rg = self.rg(a);
        Ok(self.push(Tensor { shape, data }, Op::Dropout { input: a, scale }, rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(total), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let m = t.data().iter().sum::<f64>() / t.len() as f64;
        let rg = self.rg(a);
        self.push(Tensor::scalar(m), Op::Mean(a), rg)
    }

    /// Columns `start..start+len` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        if t.rank() != 2 || start + len > t.shape()[1] || len == 0 {
            return Err(Error::Shape(format!(
                "columns {start}..{} of {:?}",
                start + len,
                t.shape()
            )));
        }
        let (rows, cols) = (t.shape()[0], t.shape()[1]);
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&t.data()[r * cols + start..r * cols + start + len]);
        }
        let rg = self.rg(a);
        Ok(self.push(
            Tensor {
                shape: vec![rows, len],
                data,
            },
            Op::SliceCols { input: a, start },
            rg,
        ))
    }

    /// Row `index` of a matrix as a `1×cols` matrix.
    pub fn row(&mut self, a: Var, index: usize) -> Result<Var> {
        let t = self.value(a);
        if t.rank() != 2 || index >= t.shape()[0] {
            return Err(Error::Index(format!("row {index} of {:?}", t.shape())));
        }
        let cols = t.shape()[1];
        let data = t.data()[index * cols..(index + 1) * cols].to_vec();
        let rg = self.rg(a);
        Ok(self.push(
            Tensor {
                shape: vec![1, cols],
                data,
            },
            Op::Row { input: a, index },
            rg,
        ))
    }

    /// `[a | b]` for matrices with equal row counts.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[0] != tb.shape()[0] {
            return Err(Error::Shape(format!(
                "concat of {:?} and {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let (rows, ca, cb) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut data = Vec::with_capacity(rows * (ca + cb));
        for r in 0..rows {
            data.extend_from_slice(ta.row(r));
            data.extend_from_slice(tb.row(r));
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            Tensor {
                shape: vec![rows, ca + cb],
                data,
            },
            Op::ConcatCols(a, b),
            rg,
        ))
    }

    /// Stacks equally sized row vectors into a matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        let first = rows
            .first()
            .ok_or_else(|| Error::Shape("stack of no rows".into()))?;
        let cols = self.value(*first).len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            let t = self.value(r);
            if t.len() != cols {
                return Err(Error::Shape(format!(
                    "stack of rows with {} and {cols} values",
                    t.len()
                )));
            }
            data.extend_from_slice(t.data());
        }
        let rg = rows.iter().any(|&r| self.rg(r));
        Ok(self.push(
            Tensor {
                shape: vec![rows.len(), cols],
                data,
            },
            Op::StackRows(rows.to_vec()),
            rg,
        ))
    }

    /// Summed binary cross-entropy `-Σ y ln s + (1-y) ln(1-s)` against 0/1 targets.
    pub fn bce(&mut self, s: Var, targets: &[f64]) -> Result<Var> {
        let t = self.value(s);
        if t.len() != targets.len() {
            return Err(Error::Shape(format!(
                "bce over {} scores and {} targets",
                t.len(),
                targets.len()
            )));
        }
        if let Some(bad) = targets.iter().find(|&&y| y != 0.0 && y != 1.0) {
            return Err(Error::Input(format!("target {bad} is not 0 or 1")));
        }
        let loss: f64 = t
            .data()
            .iter()
            .zip(targets)
            .map(|(&p, &y)| {
                let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
                -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
            })
            .sum();
        let rg = self.rg(s);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Bce {
                input: s,
                targets: targets.to_vec(),
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar `loss`. Fails if called twice without
    /// [`Graph::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Contract(
                "backward already ran on this graph; call zero_grad first".into(),
            ));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.backward_done = true;
        if !self.rg(loss) {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }
        // only leaves keep gradients, interior buffers are dropped
        for (node, grad) in self.nodes.iter().zip(self.grads.iter_mut()) {
            if !matches!(node.op, Op::Leaf) {
                *grad = None;
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, contrib: Vec<f64>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(g) => g.iter_mut().zip(&contrib).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(contrib),
        }
    }

    fn accumulate_with(&mut self, v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let len = self.nodes[v.0].value.len();
        let g = self.grads[v.0].get_or_insert_with(|| vec![0.0; len]);
        f(g);
    }

    fn propagate(&mut self, i: usize, g: &[f64]) {
        let out = &self.nodes[i].value;
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let (p, q, r) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                let da = if self.rg(a) {
                    let mut da = vec![0.0; p * q];
                    for ii in 0..p {
                        for k in 0..q {
                            let brow = &tb.data()[k * r..(k + 1) * r];
                            let grow = &g[ii * r..(ii + 1) * r];
                            da[ii * q + k] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                        }
                    }
                    Some(da)
                } else {
                    None
                };
                let db = if self.rg(b) {
                    let mut db = vec![0.0; q * r];
                    for ii in 0..p {
                        let grow = &g[ii * r..(ii + 1) * r];
                        for k in 0..q {
                            let av = ta.data()[ii * q + k];
                            let drow = &mut db[k * r..(k + 1) * r];
                            drow.iter_mut().zip(grow).for_each(|(d, gv)| *d += av * gv);
                        }
                    }
                    Some(db)
                } else {
                    None
                };
                if let Some(da) = da {
                    self.accumulate(a, da);
                }
                if let Some(db) = db {
                    self.accumulate(b, db);
                }
            }
            Op::Transpose(a) => {
                let a = *a;
                let (q, p) = (out.shape()[0], out.shape()[1]);
                let mut da = vec![0.0; p * q];
                for ii in 0..p {
                    for j in 0..q {
                        da[ii * q + j] = g[j * p + ii];
                    }
                }
                self.accumulate(a, da);
            }
            Op::Add(a, b, map) => {
                let (a, b) = (*a, *b);
                let db = reduce_broadcast(g, map.as_deref(), self.nodes[b.0].value.len());
                self.accumulate(a, g.to_vec());
                self.accumulate(b, db);
            }
            Op::Mul(a, b, map) => {
                let (a, b) = (*a, *b);
                let map = map.clone();
                let (av, bv) = (self.nodes[a.0].value.data(), self.nodes[b.0].value.data());
                let da: Vec<f64> = match &map {
                    None => g.iter().zip(bv).map(|(x, y)| x * y).collect(),
                    Some(m) => g.iter().zip(m).map(|(x, &j)| x * bv[j]).collect(),
                };
                let prod: Vec<f64> = g.iter().zip(av).map(|(x, y)| x * y).collect();
                let db = reduce_broadcast(&prod, map.as_deref(), bv.len());
                self.accumulate(a, da);
                self.accumulate(b, db);
            }
            Op::Scale(a, c) => {
                let (a, c) = (*a, *c);
                self.accumulate(a, g.iter().map(|x| x * c).collect());
            }
            Op::Unary(kind, a) => {
                let (kind, a) = (*kind, *a);
                let da = g
                    .iter()
                    .zip(out.data())
                    .map(|(gv, &y)| gv * kind.grad_from_output(y))
                    .collect();
                self.accumulate(a, da);
            }
            Op::Softmax { input, axis } => {
                let (input, axis) = (*input, *axis);
                let shape = out.shape();
                let n = shape[axis];
                let inner: usize = shape[axis + 1..].iter().product();
                let outer: usize = shape[..axis].iter().product();
                let y = out.data();
                let mut da = vec![0.0; y.len()];
                for o in 0..outer {
                    for ii in 0..inner {
                        let at = |k: usize| o * n * inner + k * inner + ii;
                        let dot: f64 = (0..n).map(|k| g[at(k)] * y[at(k)]).sum();
                        for k in 0..n {
                            da[at(k)] = y[at(k)] * (g[at(k)] - dot);
                        }
                    }
                }
                self.accumulate(input, da);
            }
            Op::LayerNorm {
                input,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let (input, gain, bias) = (*input, *gain, *bias);
                let gv = self.nodes[gain.0].value.data();
                let d = gv.len();
                let rows = inv_std.len();
                let mut dx = vec![0.0; xhat.len()];
                let mut dgain = vec![0.0; d];
                let mut dbias = vec![0.0; d];
                for r in 0..rows {
                    let base = r * d;
                    let mut mean_dxh = 0.0;
                    let mut mean_dxh_xh = 0.0;
                    for c in 0..d {
                        let dxh = g[base + c] * gv[c];
                        mean_dxh += dxh;
                        mean_dxh_xh += dxh * xhat[base + c];
                        dgain[c] += g[base + c] * xhat[base + c];
                        dbias[c] += g[base + c];
                    }
                    mean_dxh /= d as f64;
                    mean_dxh_xh /= d as f64;
                    for c in 0..d {
                        let dxh = g[base + c] * gv[c];
                        dx[base + c] =
                            inv_std[r] * (dxh - mean_dxh - xhat[base + c] * mean_dxh_xh);
                    }
                }
                self.accumulate(input, dx);
                self.accumulate(gain, dgain);
                self.accumulate(bias, dbias);
            }
            Op::Gather { table, ids } => {
                let table = *table;
                let d = out.shape()[1];
                let ids = ids.clone();
                self.accumulate_with(table, |dt| {
                    for (row, &id) in ids.iter().enumerate() {
                        let src = &g[row * d..(row + 1) * d];
                        dt[id * d..(id + 1) * d]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(t, s)| *t += s);
                    }
                });
            }
            Op::Dropout { input, scale } => {
                let input = *input;
                let da = g.iter().zip(scale).map(|(x, s)| x * s).collect();
                self.accumulate(input, da);
            }
            Op::Sum(a) => {
                let a = *a;
                let len = self.nodes[a.0].value.len();
                self.accumulate(a, vec![g[0]; len]);
            }
            Op::Mean(a) => {
                let a = *a;
                let len = self.nodes[a.0].value.len();
                self.accumulate(a, vec![g[0] / len as f64; len]);
            }
            Op::SliceCols { input, start } => {
                let (input, start) = (*input, *start);
                let (rows, len) = (out.shape()[0], out.shape()[1]);
                let cols = self.nodes[input.0].value.shape()[1];
                self.accumulate_with(input, |da| {
                    for r in 0..rows {
                        da[r * cols + start..r * cols + start + len]
                            .iter_mut()
                            .zip(&g[r * len..(r + 1) * len])
                            .for_each(|(d, s)| *d += s);
                    }
                });
            }
            Op::Row { input, index } => {
                let (input, index) = (*input, *index);
                let cols = out.len();
                self.accumulate_with(input, |da| {
                    da[index * cols..(index + 1) * cols]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(d, s)| *d += s);
                });
            }
            Op::ConcatCols(a, b) => {
                let (a, b) = (*a, *b);
                let ca = self.nodes[a.0].value.shape()[1];
                let cb = self.nodes[b.0].value.shape()[1];
                let rows = out.shape()[0];
                let mut da = Vec::with_capacity(rows * ca);
                let mut db = Vec::with_capacity(rows * cb);
                for r in 0..rows {
                    let row = &g[r * (ca + cb)..(r + 1) * (ca + cb)];
                    da.extend_from_slice(&row[..ca]);
                    db.extend_from_slice(&row[ca..]);
                }
                self.accumulate(a, da);
                self.accumulate(b, db);
            }
            Op::StackRows(rows) => {
                let rows = rows.clone();
                let cols = out.shape()[1];
                for (r, v) in rows.into_iter().enumerate() {
                    let slice = &g[r * cols..(r + 1) * cols];
                    self.accumulate_with(v, |d| {
                        d.iter_mut().zip(slice).for_each(|(x, s)| *x += s)
                    });
                }
            }
            Op::Bce { input, targets } => {
                let input = *input;
                let s = self.nodes[input.0].value.data();
                let da = s
                    .iter()
                    .zip(targets)
                    .map(|(&p, &y)| {
                        let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
                        g[0] * (p - y) / (p * (1.0 - p))
                    })
                    .collect();
                self.accumulate(input, da);
            }
        }
    }
}

/// Index map for broadcasting `small` into `big` by trailing-dimension
/// alignment; `None` when incompatible.
fn broadcast_map(big: &[usize], small: &[usize]) -> Option<Vec<usize>> {
    if small.len() > big.len() {
        return None;
    }
    let offset = big.len() - small.len();
    let mut strides = vec![0usize; big.len()];
    let mut stride = 1;
    for k in (0..small.len()).rev() {
        let (bd, sd) = (big[k + offset], small[k]);
        if sd == bd {
            strides[k + offset] = stride;
        } else if sd != 1 {
            return None;
        }
        stride *= sd;
    }
    let total: usize = big.iter().product();
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0usize; big.len()];
    for _ in 0..total {
        map.push(idx.iter().zip(&strides).map(|(i, s)| i * s).sum());
        for k in (0..big.len()).rev() {
            idx[k] += 1;
            if idx[k] < big[k] {
                break;
            }
            idx[k] = 0;
        }
    }
    Some(map)
}

fn reduce_broadcast(g: &[f64], map: Option<&[usize]>, len: usize) -> Vec<f64> {
    match map {
        None => g.to_vec(),
        Some(m) => {
            let mut out = vec![0.0; len];
            for (gv, &j) in g.iter().zip(m) {
                out[j] += gv;
            }
            out
        }
    }
}
