use std::f64::consts::PI;
use std::rc::Rc;

use crate::tensor::{matmul_nt, matmul_raw, matmul_tn};
use crate::{AdError, Result, Tensor};

/// Handle to a node on a [`Tape`]. Only meaningful for the tape that issued it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Constant,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    Affine(Var, Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    Log(Var),
    Exp(Var),
    Sqrt(Var),
    Square(Var),
    Sin(Var),
    Cos(Var),
    ClampMin(Var, f64),
    ClampMax(Var, f64),
    Sum(Var),
    Mean(Var),
    SumAxis(Var, usize),
    Concat(Vec<Var>, usize),
    Slice(Var, usize, usize),
    Reshape(Var),
    L1Norm(Var),
    MinReduce(Var, usize),
    SmoothMin(Var, f64),
    GatherRows(Var, Rc<[usize]>),
    ScatterAddRows(Var, Rc<[usize]>),
    DiskOverlap(Var),
    HazardChain(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Constant => "constant",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Neg(..) => "neg",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::MatMul(..) => "matmul",
            Op::Affine(..) => "affine",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::Softplus(..) => "softplus",
            Op::Log(..) => "log",
            Op::Exp(..) => "exp",
            Op::Sqrt(..) => "sqrt",
            Op::Square(..) => "square",
            Op::Sin(..) => "sin",
            Op::Cos(..) => "cos",
            Op::ClampMin(..) => "clamp_min",
            Op::ClampMax(..) => "clamp_max",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::SumAxis(..) => "sum_axis",
            Op::Concat(..) => "concat",
            Op::Slice(..) => "slice",
            Op::Reshape(..) => "reshape",
            Op::L1Norm(..) => "l1_norm",
            Op::MinReduce(..) => "min_reduce",
            Op::SmoothMin(..) => "smooth_min",
            Op::GatherRows(..) => "gather_rows",
            Op::ScatterAddRows(..) => "scatter_add_rows",
            Op::DiskOverlap(..) => "disk_overlap",
            Op::HazardChain(..) => "hazard_chain",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the root with respect to `v`; zeros if `v` is not on any path.
    pub fn wrt(&self, v: Var) -> Tensor {
        match self.grads.get(v.0).and_then(Option::as_ref) {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }
}

/// Append-only record of a forward computation.
///
/// Node ids increase strictly in creation order and every op only refers to
/// earlier nodes, so the tape is acyclic by construction.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp()
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Fraction of a disk's area covered by an equal disk whose center lies at
/// `t` diameters away.
pub fn disk_overlap_fraction(t: f64) -> f64 {
    if t <= 0.0 {
        1.0
    } else if t >= 1.0 {
        0.0
    } else {
        (2.0 / PI) * (t.acos() - t * (1.0 - t * t).sqrt())
    }
}

fn disk_overlap_slope(t: f64) -> f64 {
    if t <= 0.0 || t >= 1.0 {
        0.0
    } else {
        -(4.0 / PI) * (1.0 - t * t).sqrt()
    }
}

/// Row-wise recurrence `z_k = l_k − s_{k−1}`, `s_k = s_{k−1} − softplus(z_k)`, `s_0 = 0`.
/// Bound on the magnitude of conditional hit logits produced by the chain.
pub const HAZARD_LOGIT_CAP: f64 = 20.0;

fn cap_logit(y: f64) -> f64 {
    if y <= 0.0 {
        y
    } else {
        HAZARD_LOGIT_CAP * (y / HAZARD_LOGIT_CAP).tanh()
    }
}

fn hazard_chain_forward(l: &Tensor) -> Tensor {
    let (rows, cols) = l.dims2();
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        let mut s = 0.0;
        for k in 0..cols {
            let z = cap_logit(l.data()[r * cols + k] - s);
            out[r * cols + k] = z;
            s -= softplus(z);
        }
    }
    Tensor::new(l.shape(), out).expect("same shape")
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    /// A non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Constant, false)
    }

    fn push_raw(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        if !value.all_finite() {
            return Err(AdError::NonFinite { op: op.name() });
        }
        let needs_grad = self.inputs(&op).iter().any(|v| self.nodes[v.0].needs_grad);
        Ok(self.push_raw(value, op, needs_grad))
    }

    fn inputs(&self, op: &Op) -> Vec<Var> {
        match op {
            Op::Leaf | Op::Constant => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) | Op::MatMul(a, b) => {
                vec![*a, *b]
            }
            Op::Affine(x, w, b) => vec![*x, *w, *b],
            Op::Concat(vs, _) => vs.clone(),
            Op::Neg(a)
            | Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Softplus(a)
            | Op::Log(a)
            | Op::Exp(a)
            | Op::Sqrt(a)
            | Op::Square(a)
            | Op::Sin(a)
            | Op::Cos(a)
            | Op::ClampMin(a, _)
            | Op::ClampMax(a, _)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::SumAxis(a, _)
            | Op::Slice(a, _, _)
            | Op::Reshape(a)
            | Op::L1Norm(a)
            | Op::MinReduce(a, _)
            | Op::SmoothMin(a, _)
            | Op::GatherRows(a, _)
            | Op::ScatterAddRows(a, _)
            | Op::DiskOverlap(a)
            | Op::HazardChain(a) => vec![*a],
        }
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(AdError::Shape {
                op,
                detail: format!("{:?} vs {:?}", sa, sb),
            });
        }
        Ok(())
    }

    fn rank2(&self, op: &'static str, a: Var) -> Result<(usize, usize)> {
        let s = self.value(a).shape();
        if s.len() != 2 {
            return Err(AdError::Shape {
                op,
                detail: format!("expected rank 2, got {:?}", s),
            });
        }
        Ok((s[0], s[1]))
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(op.name(), a, b)?;
        let value = self.value(a).zip_map(self.value(b), f);
        self.push(value, op)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let value = self.value(a).map(f);
        self.push(value, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Elementwise quotient.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Div(a, b), |x, y| x / y)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Neg(a), |x| -x)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(a, Op::Scale(a, c), |x| x * c)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(a, Op::AddScalar(a), |x| x + c)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.rank2("matmul", a)?;
        let (k2, n) = self.rank2("matmul", b)?;
        if k != k2 {
            return Err(AdError::Shape {
                op: "matmul",
                detail: format!("[{m},{k}] x [{k2},{n}]"),
            });
        }
        let data = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let value = Tensor::new(&[m, n], data)?;
        self.push(value, Op::MatMul(a, b))
    }

    /// `x·w + b` with `b` broadcast over rows.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (m, k) = self.rank2("affine", x)?;
        let (k2, n) = self.rank2("affine", w)?;
        if k != k2 || self.value(b).len() != n {
            return Err(AdError::Shape {
                op: "affine",
                detail: format!(
                    "x [{m},{k}], w [{k2},{n}], b {:?}",
                    self.value(b).shape()
                ),
            });
        }
        let mut data = matmul_raw(self.value(x).data(), self.value(w).data(), m, k, n);
        let bias = self.value(b).data();
        for row in data.chunks_mut(n) {
            for (v, bv) in row.iter_mut().zip(bias) {
                *v += bv;
            }
        }
        let value = Tensor::new(&[m, n], data)?;
        self.push(value, Op::Affine(x, w, b))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    /// `log(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Softplus(a), softplus)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Log(a), f64::ln)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Sqrt(a), f64::sqrt)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    pub fn sin(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Sin(a), f64::sin)
    }

    pub fn cos(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Cos(a), f64::cos)
    }

    /// `max(x, lo)`; the gradient passes only where `x > lo`.
    pub fn clamp_min(&mut self, a: Var, lo: f64) -> Result<Var> {
        self.unary(a, Op::ClampMin(a, lo), |x| x.max(lo))
    }

    /// `min(x, hi)`; the gradient passes only where `x < hi`.
    pub fn clamp_max(&mut self, a: Var, hi: f64) -> Result<Var> {
        self.unary(a, Op::ClampMax(a, hi), |x| x.min(hi))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(AdError::Shape {
                op: "mean",
                detail: "empty tensor".into(),
            });
        }
        let value = Tensor::scalar(t.sum() / t.len() as f64);
        self.push(value, Op::Mean(a))
    }

    /// Sum of a rank-2 tensor along `axis`, keeping the reduced axis with length 1.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (m, n) = self.rank2("sum_axis", a)?;
        let d = self.value(a).data();
        let value = match axis {
            0 => {
                let mut out = vec![0.0; n];
                for row in d.chunks(n) {
                    for (o, v) in out.iter_mut().zip(row) {
                        *o += v;
                    }
                }
                Tensor::new(&[1, n], out)?
            }
            1 => Tensor::new(&[m, 1], d.chunks(n).map(|r| r.iter().sum()).collect())?,
            _ => {
                return Err(AdError::Shape {
                    op: "sum_axis",
                    detail: format!("axis {axis} out of range"),
                })
            }
        };
        self.push(value, Op::SumAxis(a, axis))
    }

    /// Concatenation of rank-2 tensors along `axis`.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() || axis > 1 {
            return Err(AdError::Shape {
                op: "concat",
                detail: format!("{} parts along axis {axis}", parts.len()),
            });
        }
        let dims: Vec<(usize, usize)> = parts
            .iter()
            .map(|&p| self.rank2("concat", p))
            .collect::<Result<_>>()?;
        let value = if axis == 0 {
            let n = dims[0].1;
            if dims.iter().any(|d| d.1 != n) {
                return Err(AdError::Shape {
                    op: "concat",
                    detail: format!("column mismatch {:?}", dims),
                });
            }
            let data: Vec<f64> = parts
                .iter()
                .flat_map(|&p| self.value(p).data().iter().copied())
                .collect();
            Tensor::new(&[dims.iter().map(|d| d.0).sum(), n], data)?
        } else {
            let m = dims[0].0;
            if dims.iter().any(|d| d.0 != m) {
                return Err(AdError::Shape {
                    op: "concat",
                    detail: format!("row mismatch {:?}", dims),
                });
            }
            let n: usize = dims.iter().map(|d| d.1).sum();
            let mut data = Vec::with_capacity(m * n);
            for r in 0..m {
                for (&p, d) in parts.iter().zip(&dims) {
                    data.extend_from_slice(&self.value(p).data()[r * d.1..(r + 1) * d.1]);
                }
            }
            Tensor::new(&[m, n], data)?
        };
        self.push(value, Op::Concat(parts.to_vec(), axis))
    }

    /// `len` consecutive rows (`axis = 0`) or columns (`axis = 1`) starting at `start`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.rank2("slice", a)?;
        let extent = if axis == 0 { m } else { n };
        if axis > 1 || start + len > extent || len == 0 {
            return Err(AdError::Shape {
                op: "slice",
                detail: format!("[{start}, {}) of axis {axis} in [{m},{n}]", start + len),
            });
        }
        let d = self.value(a).data();
        let value = if axis == 0 {
            Tensor::new(&[len, n], d[start * n..(start + len) * n].to_vec())?
        } else {
            let mut out = Vec::with_capacity(m * len);
            for r in 0..m {
                out.extend_from_slice(&d[r * n + start..r * n + start + len]);
            }
            Tensor::new(&[m, len], out)?
        };
        self.push(value, Op::Slice(a, axis, start))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshaped(shape)?;
        self.push(value, Op::Reshape(a))
    }

    /// `Σ|x|`, with subgradient 0 at exact zeros.
    pub fn l1_norm(&mut self, a: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(a).data().iter().map(|v| v.abs()).sum());
        self.push(value, Op::L1Norm(a))
    }

    /// Exact minimum over all elements. The gradient goes to the lowest-index argmin.
    pub fn min_reduce(&mut self, a: Var) -> Result<Var> {
        let d = self.value(a).data();
        if d.is_empty() {
            return Err(AdError::Shape {
                op: "min_reduce",
                detail: "empty tensor".into(),
            });
        }
        let mut arg = 0;
        for (i, &v) in d.iter().enumerate() {
            if v < d[arg] {
                arg = i;
            }
        }
        let value = Tensor::scalar(d[arg]);
        self.push(value, Op::MinReduce(a, arg))
    }

    /// `−τ·log Σ exp(−x/τ)`: a lower bound on `min(x)` within `τ·log(len)`.
    pub fn smooth_min(&mut self, a: Var, tau: f64) -> Result<Var> {
        let d = self.value(a).data();
        if d.is_empty() || tau <= 0.0 {
            return Err(AdError::Shape {
                op: "smooth_min",
                detail: format!("len {} tau {tau}", d.len()),
            });
        }
        let m = d.iter().copied().fold(f64::INFINITY, f64::min);
        let s: f64 = d.iter().map(|&v| (-(v - m) / tau).exp()).sum();
        let value = Tensor::scalar(m - tau * s.ln());
        self.push(value, Op::SmoothMin(a, tau))
    }

    /// Rows of a rank-2 tensor picked by `index` (repeats allowed).
    pub fn gather_rows(&mut self, a: Var, index: Rc<[usize]>) -> Result<Var> {
        let (m, n) = self.rank2("gather_rows", a)?;
        if index.iter().any(|&i| i >= m) {
            return Err(AdError::Shape {
                op: "gather_rows",
                detail: format!("index out of range for {m} rows"),
            });
        }
        let d = self.value(a).data();
        let mut out = Vec::with_capacity(index.len() * n);
        for &i in index.iter() {
            out.extend_from_slice(&d[i * n..(i + 1) * n]);
        }
        let value = Tensor::new(&[index.len(), n], out)?;
        self.push(value, Op::GatherRows(a, index))
    }

    /// Adds row `r` of `a` into output row `index[r]`; the adjoint of [`Tape::gather_rows`].
    pub fn scatter_add_rows(&mut self, a: Var, index: Rc<[usize]>, rows_out: usize) -> Result<Var> {
        let (m, n) = self.rank2("scatter_add_rows", a)?;
        if index.len() != m || index.iter().any(|&i| i >= rows_out) {
            return Err(AdError::Shape {
                op: "scatter_add_rows",
                detail: format!("{} indices for {m} rows into {rows_out}", index.len()),
            });
        }
        let d = self.value(a).data();
        let mut out = vec![0.0; rows_out * n];
        for (r, &i) in index.iter().enumerate() {
            for c in 0..n {
                out[i * n + c] += d[r * n + c];
            }
        }
        let value = Tensor::new(&[rows_out, n], out)?;
        self.push(value, Op::ScatterAddRows(a, index))
    }

    /// Elementwise [`disk_overlap_fraction`] of center distances given in diameters.
    pub fn disk_overlap(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::DiskOverlap(a), disk_overlap_fraction)
    }

    /// Turns per-step log-masses into conditional hit logits along each row.
    ///
    /// With `s_{k−1}` the log-probability that steps `1..k−1` all missed,
    /// `z_k = l_k − s_{k−1}` so that `sigmoid(z_k) ≈ exp(l_k) / exp(s_{k−1})`
    /// when the step mass is small, and `s_k = s_{k−1} + log(1 − sigmoid(z_k))`.
    /// Positive logits pass through `C·tanh(z/C)` with `C =` [`HAZARD_LOGIT_CAP`]: once
    /// the masses exceed the remaining survival, `s` would otherwise fall
    /// geometrically along the row.
    pub fn hazard_chain(&mut self, a: Var) -> Result<Var> {
        self.rank2("hazard_chain", a)?;
        let value = hazard_chain_forward(self.value(a));
        self.push(value, Op::HazardChain(a))
    }

    /// Reverse sweep from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_value = self.value(root);
        if root_value.len() != 1 {
            return Err(AdError::NonScalarRoot(root_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::ones(root_value.shape()));

        for id in (0..=root.0).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
            grads[id] = Some(g);
        }

        for g in grads.iter().flatten() {
            if !g.all_finite() {
                return Err(AdError::NonFinite { op: "backward" });
            }
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        grads.resize(self.nodes.len(), None);
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let out = &node.value;
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                self.accumulate(grads, *a, g.zip_map(vb, |x, y| x * y));
                self.accumulate(grads, *b, g.zip_map(va, |x, y| x * y));
            }
            Op::Div(a, b) => {
                let vb = self.value(*b);
                self.accumulate(grads, *a, g.zip_map(vb, |x, y| x / y));
                let t = g.zip_map(out, |x, o| x * o);
                self.accumulate(grads, *b, t.zip_map(vb, |x, y| -x / y));
            }
            Op::Neg(a) => self.accumulate(grads, *a, g.map(|v| -v)),
            Op::Scale(a, c) => self.accumulate(grads, *a, g.map(|v| v * c)),
            Op::AddScalar(a) | Op::Reshape(a) => {
                let shape = self.value(*a).shape().to_vec();
                self.accumulate(grads, *a, g.clone().reshaped(&shape)?);
            }
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2();
                let n = out.dims2().1;
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if self.nodes[a.0].needs_grad {
                    let ga = Tensor::new(&[m, k], matmul_nt(g.data(), vb, m, n, k))?;
                    self.accumulate(grads, *a, ga);
                }
                if self.nodes[b.0].needs_grad {
                    let gb = Tensor::new(&[k, n], matmul_tn(va, g.data(), m, k, n))?;
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Affine(x, w, b) => {
                let (m, k) = self.value(*x).dims2();
                let n = out.dims2().1;
                if self.nodes[x.0].needs_grad {
                    let gx = matmul_nt(g.data(), self.value(*w).data(), m, n, k);
                    self.accumulate(grads, *x, Tensor::new(&[m, k], gx)?);
                }
                if self.nodes[w.0].needs_grad {
                    let gw = matmul_tn(self.value(*x).data(), g.data(), m, k, n);
                    self.accumulate(grads, *w, Tensor::new(&[k, n], gw)?);
                }
                if self.nodes[b.0].needs_grad {
                    let mut gb = vec![0.0; n];
                    for row in g.data().chunks(n) {
                        for (o, v) in gb.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                    let shape = self.value(*b).shape().to_vec();
                    self.accumulate(grads, *b, Tensor::new(&shape, gb)?);
                }
            }
            Op::Tanh(a) => self.accumulate(grads, *a, g.zip_map(out, |x, y| x * (1.0 - y * y))),
            Op::Sigmoid(a) => {
                self.accumulate(grads, *a, g.zip_map(out, |x, y| x * y * (1.0 - y)))
            }
            Op::Softplus(a) => {
                let va = self.value(*a);
                self.accumulate(grads, *a, g.zip_map(va, |x, v| x * sigmoid(v)));
            }
            Op::Log(a) => {
                let va = self.value(*a);
                self.accumulate(grads, *a, g.zip_map(va, |x, v| x / v));
            }
            Op::Exp(a) => self.accumulate(grads, *a, g.zip_map(out, |x, y| x * y)),
            Op::Sqrt(a) => self.accumulate(grads, *a, g.zip_map(out, |x, y| 0.5 * x / y)),
            Op::Square(a) => {
                let va = self.value(*a);
                self.accumulate(grads, *a, g.zip_map(va, |x, v| 2.0 * x * v));
            }
            Op::Sin(a) => {
                let va = self.value(*a);
                self.accumulate(grads, *a, g.zip_map(va, |x, v| x * v.cos()));
            }
            Op::Cos(a) => {
                let va = self.value(*a);
                self.accumulate(grads, *a, g.zip_map(va, |x, v| -x * v.sin()));
            }
            Op::ClampMin(a, lo) => {
                let va = self.value(*a);
                self.accumulate(grads, *a, g.zip_map(va, |x, v| if v > *lo { x } else { 0.0 }));
            }
            Op::ClampMax(a, hi) => {
                let va = self.value(*a);
                self.accumulate(grads, *a, g.zip_map(va, |x, v| if v < *hi { x } else { 0.0 }));
            }
            Op::Sum(a) => {
                let shape = self.value(*a).shape().to_vec();
                self.accumulate(grads, *a, Tensor::full(&shape, g.item()));
            }
            Op::Mean(a) => {
                let va = self.value(*a);
                let gv = g.item() / va.len() as f64;
                self.accumulate(grads, *a, Tensor::full(va.shape(), gv));
            }
            Op::SumAxis(a, axis) => {
                let (m, n) = self.value(*a).dims2();
                let mut ga = vec![0.0; m * n];
                for r in 0..m {
                    for c in 0..n {
                        ga[r * n + c] = if *axis == 0 { g.data()[c] } else { g.data()[r] };
                    }
                }
                self.accumulate(grads, *a, Tensor::new(&[m, n], ga)?);
            }
            Op::Concat(parts, axis) => {
                let (m, n) = out.dims2();
                let mut offset = 0;
                for &p in parts {
                    let (pm, pn) = self.value(p).dims2();
                    let gp = if *axis == 0 {
                        g.data()[offset * n..(offset + pm) * n].to_vec()
                    } else {
                        let mut v = Vec::with_capacity(pm * pn);
                        for r in 0..m {
                            v.extend_from_slice(&g.data()[r * n + offset..r * n + offset + pn]);
                        }
                        v
                    };
                    offset += if *axis == 0 { pm } else { pn };
                    self.accumulate(grads, p, Tensor::new(&[pm, pn], gp)?);
                }
            }
            Op::Slice(a, axis, start) => {
                let (m, n) = self.value(*a).dims2();
                let (om, on) = out.dims2();
                let mut ga = vec![0.0; m * n];
                for r in 0..om {
                    for c in 0..on {
                        let (sr, sc) = if *axis == 0 { (r + start, c) } else { (r, c + start) };
                        ga[sr * n + sc] = g.data()[r * on + c];
                    }
                }
                self.accumulate(grads, *a, Tensor::new(&[m, n], ga)?);
            }
            Op::L1Norm(a) => {
                let va = self.value(*a);
                let gv = g.item();
                self.accumulate(grads, *a, va.map(|v| gv * if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 }));
            }
            Op::MinReduce(a, arg) => {
                let mut ga = Tensor::zeros(self.value(*a).shape());
                ga.data_mut()[*arg] = g.item();
                self.accumulate(grads, *a, ga);
            }
            Op::SmoothMin(a, tau) => {
                let o = out.item();
                let gv = g.item();
                let va = self.value(*a);
                self.accumulate(grads, *a, va.map(|v| gv * ((o - v) / tau).exp()));
            }
            Op::GatherRows(a, index) => {
                let (m, n) = self.value(*a).dims2();
                let mut ga = vec![0.0; m * n];
                for (r, &i) in index.iter().enumerate() {
                    for c in 0..n {
                        ga[i * n + c] += g.data()[r * n + c];
                    }
                }
                self.accumulate(grads, *a, Tensor::new(&[m, n], ga)?);
            }
            Op::ScatterAddRows(a, index) => {
                let n = out.dims2().1;
                let mut ga = Vec::with_capacity(index.len() * n);
                for &i in index.iter() {
                    ga.extend_from_slice(&g.data()[i * n..(i + 1) * n]);
                }
                self.accumulate(grads, *a, Tensor::new(&[index.len(), n], ga)?);
            }
            Op::DiskOverlap(a) => {
                let va = self.value(*a);
                self.accumulate(grads, *a, g.zip_map(va, |x, v| x * disk_overlap_slope(v)));
            }
            Op::HazardChain(a) => {
                // Reverse recurrence: carry = ∂L/∂s_k accumulated from later steps.
                let (rows, cols) = out.dims2();
                let mut ga = vec![0.0; rows * cols];
                for r in 0..rows {
                    let mut carry = 0.0;
                    for k in (0..cols).rev() {
                        let z = out.data()[r * cols + k];
                        let c = z.max(0.0) / HAZARD_LOGIT_CAP;
                        let gy = (g.data()[r * cols + k] - carry * sigmoid(z)) * (1.0 - c * c);
                        ga[r * cols + k] = gy;
                        carry -= gy;
                    }
                }
                self.accumulate(grads, *a, Tensor::new(out.shape(), ga)?);
            }
        }
        Ok(())
    }
}
