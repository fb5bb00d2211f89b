//! Reverse-mode differentiation over a linear record of executed ops.
//!
//! Every forward op appends one node holding its output value. `backward`
//! walks the nodes once, newest to oldest, pushing the upstream gradient into
//! each input. Leaves bound from named parameters expose their gradients by
//! name so they can be handed back to the owning modules.

use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::ndiff::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReduceKind {
    Sum,
    Mean,
    Max,
}

impl ReduceKind {
    pub fn name(self) -> &'static str {
        match self {
            ReduceKind::Sum => "sum",
            ReduceKind::Mean => "mean",
            ReduceKind::Max => "max",
        }
    }
}

impl std::str::FromStr for ReduceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(ReduceKind::Sum),
            "mean" => Ok(ReduceKind::Mean),
            "max" => Ok(ReduceKind::Max),
            other => Err(Error::arg(format!("unknown reduction `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Matmul(Var, Var),
    Binary(BinaryKind, Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Reduce {
        input: Var,
        axis: usize,
        kind: ReduceKind,
        // flat input index feeding each output element (max only)
        argmax: Vec<usize>,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        target: usize,
        probs: Vec<f64>,
    },
    Mse(Var, Var),
    Reshape(Var),
    SelectRow(Var, usize),
    Slice {
        input: Var,
        start: usize,
    },
    Stack(Vec<Var>),
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// Record of executed operations, replayed backwards by [`Tape::backward`].
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
    param_order: Vec<(String, Var)>,
    grads: Option<Vec<Option<Vec<f64>>>>,
}

fn check_finite(op: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(op.to_string()))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    /// Copies a recorded value out as a detached tensor.
    pub fn tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::new(n.shape.clone(), n.value.clone()).expect("tape nodes are shape-consistent")
    }

    /// Records a value that never receives gradient.
    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, false)
    }

    pub fn constant_vec(&mut self, values: &[f64]) -> Var {
        self.push(vec![values.len()], values.to_vec(), Op::Leaf, false)
    }

    /// Records an anonymous leaf that follows the tensor's `requires_grad` flag.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, t.requires_grad())
    }

    /// Binds a named parameter. Binding the same name twice on one tape
    /// returns the first handle, so shared weights accumulate one gradient.
    pub fn param(&mut self, name: &str, t: &Tensor) -> Var {
        if let Some(&v) = self.params.get(name) {
            return v;
        }
        let v = self.leaf(t);
        if t.requires_grad() {
            self.params.insert(name.to_string(), v);
            self.param_order.push((name.to_string(), v));
        }
        v
    }

    /// A gradient-free copy of `v`.
    pub fn detach(&mut self, v: Var) -> Var {
        let n = self.node(v);
        let (shape, value) = (n.shape.clone(), n.value.clone());
        self.push(shape, value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim(format!("matmul of {sa:?} by {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = av[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                for (o, &bpj) in row.iter_mut().zip(&bv[p * n..(p + 1) * n]) {
                    *o += aip * bpj;
                }
            }
        }
        check_finite("matmul", &out)?;
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(vec![m, n], out, Op::Matmul(a, b), rg))
    }

    pub fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(format!(
                "{kind:?} of {:?} and {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let f: fn(f64, f64) -> f64 = match kind {
            BinaryKind::Add => |x, y| x + y,
            BinaryKind::Sub => |x, y| x - y,
            BinaryKind::Mul => |x, y| x * y,
        };
        let out: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        check_finite("elementwise op", &out)?;
        let rg = self.requires_grad(a) || self.requires_grad(b);
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, Op::Binary(kind, a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    /// `x + bias` where `bias` is added to every row of `x` (the only broadcast).
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        let cols = *sx.last().unwrap_or(&0);
        if sx.len() > 2 || sb.len() != 1 || sb[0] != cols {
            return Err(Error::dim(format!("bias {sb:?} against {sx:?}")));
        }
        let bv = self.value(bias);
        let out: Vec<f64> = self
            .value(x)
            .chunks(cols)
            .flat_map(|row| row.iter().zip(bv).map(|(a, b)| a + b))
            .collect();
        check_finite("add_bias", &out)?;
        let rg = self.requires_grad(x) || self.requires_grad(bias);
        let shape = sx.to_vec();
        Ok(self.push(shape, out, Op::AddBias(x, bias), rg))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let out: Vec<f64> = self.value(x).iter().map(|v| v * c).collect();
        check_finite("scale", &out)?;
        let (shape, rg) = (self.shape(x).to_vec(), self.requires_grad(x));
        Ok(self.push(shape, out, Op::Scale(x, c), rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out: Vec<f64> = self.value(x).iter().map(|&v| v.max(0.0)).collect();
        let (shape, rg) = (self.shape(x).to_vec(), self.requires_grad(x));
        self.push(shape, out, Op::Relu(x), rg)
    }

    /// Reduces along `axis`, dropping it. A rank-1 input reduces to shape `[1]`.
    pub fn reduce(&mut self, x: Var, axis: usize, kind: ReduceKind) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::dim(format!("axis {axis} for shape {shape:?}")));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let xv = self.value(x);
        let mut out = Vec::with_capacity(outer * inner);
        let mut argmax = Vec::new();
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * len + j) * inner + i;
                match kind {
                    ReduceKind::Sum | ReduceKind::Mean => {
                        let s: f64 = (0..len).map(|j| xv[idx(j)]).sum();
                        out.push(if kind == ReduceKind::Mean { s / len as f64 } else { s });
                    }
                    ReduceKind::Max => {
                        let mut best = idx(0);
                        for j in 1..len {
                            // strict comparison keeps the first index on ties
                            if xv[idx(j)] > xv[best] {
                                best = idx(j);
                            }
                        }
                        out.push(xv[best]);
                        argmax.push(best);
                    }
                }
            }
        }
        check_finite("reduce", &out)?;
        let mut out_shape: Vec<usize> = shape
            .iter()
            .enumerate()
            .filter(|&(a, _)| a != axis)
            .map(|(_, &s)| s)
            .collect();
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let rg = self.requires_grad(x);
        Ok(self.push(
            out_shape,
            out,
            Op::Reduce {
                input: x,
                axis,
                kind,
                argmax,
            },
            rg,
        ))
    }

    /// Sum of every element, as a scalar.
    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        let flat = self.reshape(x, &[n])?;
        self.reduce(flat, 0, ReduceKind::Sum)
    }

    /// Log-sum-exp cross-entropy of a logit vector against a class index.
    pub fn softmax_cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let lv = self.value(logits);
        let c = lv.len();
        if target >= c {
            return Err(Error::arg(format!("class {target} out of range for {c} logits")));
        }
        check_finite("softmax_cross_entropy input", lv)?;
        let max = lv.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = lv.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let lse = max + total.ln();
        let loss = (lse - lv[target]).max(0.0);
        let probs: Vec<f64> = exps.iter().map(|e| e / total).collect();
        let rg = self.requires_grad(logits);
        Ok(self.push(
            vec![1],
            vec![loss],
            Op::SoftmaxCrossEntropy { logits, target, probs },
            rg,
        ))
    }

    /// Mean squared difference.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(format!(
                "mse of {:?} and {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let n = self.value(a).len() as f64;
        let s: f64 = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        let out = s / n;
        check_finite("mse", &[out])?;
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(vec![1], vec![out], Op::Mse(a, b), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.value(x).len() || shape.contains(&0) {
            return Err(Error::dim(format!("reshape {:?} to {shape:?}", self.shape(x))));
        }
        let value = self.value(x).to_vec();
        let rg = self.requires_grad(x);
        Ok(self.push(shape.to_vec(), value, Op::Reshape(x), rg))
    }

    /// Row `row` of a matrix, as a vector.
    pub fn select_row(&mut self, m: Var, row: usize) -> Result<Var> {
        let s = self.shape(m);
        if s.len() != 2 || row >= s[0] {
            return Err(Error::arg(format!("row {row} of matrix {s:?}")));
        }
        let cols = s[1];
        let value = self.value(m)[row * cols..(row + 1) * cols].to_vec();
        let rg = self.requires_grad(m);
        Ok(self.push(vec![cols], value, Op::SelectRow(m, row), rg))
    }

    /// Contiguous sub-range `[start, start + len)` of a vector.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 1 || len == 0 || start + len > s[0] {
            return Err(Error::dim(format!("slice {start}..{} of {s:?}", start + len)));
        }
        let value = self.value(x)[start..start + len].to_vec();
        let rg = self.requires_grad(x);
        Ok(self.push(vec![len], value, Op::Slice { input: x, start }, rg))
    }

    /// Stacks equal-shape values along a new leading axis.
    pub fn stack(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs.first().ok_or_else(|| Error::arg("stack of an empty list"))?;
        let shape = self.shape(*first).to_vec();
        let mut value = Vec::with_capacity(shape.iter().product::<usize>() * xs.len());
        for &x in xs {
            if self.shape(x) != shape.as_slice() {
                return Err(Error::dim(format!("stack of {shape:?} with {:?}", self.shape(x))));
            }
            value.extend_from_slice(self.value(x));
        }
        let rg = xs.iter().any(|&x| self.requires_grad(x));
        let mut out_shape = vec![xs.len()];
        out_shape.extend(shape);
        Ok(self.push(out_shape, value, Op::Stack(xs.to_vec()), rg))
    }

    /// Runs reverse accumulation from a scalar loss.
    ///
    /// A second call fails until [`Tape::reset_grads`] is invoked.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.grads.is_some() {
            return Err(Error::contract(
                "backward already ran on this tape; call reset_grads first",
            ));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        self.grads = Some(grads);
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let n = self.nodes[v.0].value.len();
        let slot = grads[v.0].get_or_insert_with(|| vec![0.0; n]);
        f(slot);
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (av, bv) = (self.value(*a), self.value(*b));
                // dA = dC · Bᵀ
                self.accumulate(grads, *a, |ga| {
                    for i in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += g[i * n + j] * bv[p * n + j];
                            }
                            ga[i * k + p] += s;
                        }
                    }
                });
                // dB = Aᵀ · dC
                self.accumulate(grads, *b, |gb| {
                    for i in 0..m {
                        for p in 0..k {
                            let aip = av[i * k + p];
                            if aip == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                gb[p * n + j] += aip * g[i * n + j];
                            }
                        }
                    }
                });
            }
            Op::Binary(kind, a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                match kind {
                    BinaryKind::Add => {
                        self.accumulate(grads, *a, |ga| add_into(ga, g));
                        self.accumulate(grads, *b, |gb| add_into(gb, g));
                    }
                    BinaryKind::Sub => {
                        self.accumulate(grads, *a, |ga| add_into(ga, g));
                        self.accumulate(grads, *b, |gb| gb.iter_mut().zip(g).for_each(|(o, gi)| *o -= gi));
                    }
                    BinaryKind::Mul => {
                        self.accumulate(grads, *a, |ga| {
                            for ((o, gi), y) in ga.iter_mut().zip(g).zip(bv) {
                                *o += gi * y;
                            }
                        });
                        self.accumulate(grads, *b, |gb| {
                            for ((o, gi), x) in gb.iter_mut().zip(g).zip(av) {
                                *o += gi * x;
                            }
                        });
                    }
                }
            }
            Op::AddBias(x, bias) => {
                self.accumulate(grads, *x, |gx| add_into(gx, g));
                let cols = self.value(*bias).len();
                self.accumulate(grads, *bias, |gb| {
                    for row in g.chunks(cols) {
                        add_into(gb, row);
                    }
                });
            }
            Op::Scale(x, c) => {
                self.accumulate(grads, *x, |gx| gx.iter_mut().zip(g).for_each(|(o, gi)| *o += gi * c));
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                self.accumulate(grads, *x, |gx| {
                    for ((o, gi), &v) in gx.iter_mut().zip(g).zip(xv) {
                        if v > 0.0 {
                            *o += gi;
                        }
                    }
                });
            }
            Op::Reduce {
                input,
                axis,
                kind,
                argmax,
            } => {
                let shape = self.shape(*input);
                let len = shape[*axis];
                let inner: usize = shape[axis + 1..].iter().product();
                let outer: usize = shape[..*axis].iter().product();
                self.accumulate(grads, *input, |gx| match kind {
                    ReduceKind::Max => {
                        for (gi, &src) in g.iter().zip(argmax) {
                            gx[src] += gi;
                        }
                    }
                    ReduceKind::Sum | ReduceKind::Mean => {
                        let w = if *kind == ReduceKind::Mean {
                            1.0 / len as f64
                        } else {
                            1.0
                        };
                        for o in 0..outer {
                            for j in 0..len {
                                for i in 0..inner {
                                    gx[(o * len + j) * inner + i] += w * g[o * inner + i];
                                }
                            }
                        }
                    }
                });
            }
            Op::SoftmaxCrossEntropy { logits, target, probs } => {
                self.accumulate(grads, *logits, |gl| {
                    for (k, (o, p)) in gl.iter_mut().zip(probs).enumerate() {
                        let onehot = if k == *target { 1.0 } else { 0.0 };
                        *o += g[0] * (p - onehot);
                    }
                });
            }
            Op::Mse(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let scale = 2.0 * g[0] / av.len() as f64;
                self.accumulate(grads, *a, |ga| {
                    for ((o, x), y) in ga.iter_mut().zip(av).zip(bv) {
                        *o += scale * (x - y);
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for ((o, x), y) in gb.iter_mut().zip(av).zip(bv) {
                        *o -= scale * (x - y);
                    }
                });
            }
            Op::Reshape(x) => self.accumulate(grads, *x, |gx| add_into(gx, g)),
            Op::SelectRow(m, row) => {
                let cols = g.len();
                self.accumulate(grads, *m, |gm| add_into(&mut gm[row * cols..(row + 1) * cols], g));
            }
            Op::Slice { input, start } => {
                self.accumulate(grads, *input, |gx| add_into(&mut gx[*start..start + g.len()], g));
            }
            Op::Stack(xs) => {
                let each = g.len() / xs.len();
                for (k, x) in xs.iter().enumerate() {
                    self.accumulate(grads, *x, |gx| add_into(gx, &g[k * each..(k + 1) * each]));
                }
            }
        }
    }

    /// Clears gradients so `backward` may run again.
    pub fn reset_grads(&mut self) {
        self.grads = None;
    }

    /// Gradient of the last backward pass w.r.t. `v`; `None` if `v` was not
    /// reached or does not require grad.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.as_ref()?.get(v.0)?.as_deref()
    }

    /// Gradients of every bound parameter reached by the last backward pass.
    pub fn param_grads(&self) -> BTreeMap<String, Vec<f64>> {
        self.param_order
            .iter()
            .filter_map(|(name, v)| self.grad(*v).map(|g| (name.clone(), g.to_vec())))
            .collect()
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}
