//! Reverse-mode differentiation over a linear tape of matrix ops.
//!
//! Every value on the tape is a 2-D tensor (scalars are 1x1). Nodes are
//! appended in evaluation order, so the tape is always topologically sorted
//! and backward is a single reverse sweep.

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Rows = 0,
    Cols = 1,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Softplus(Var),
    Clamp(Var),
    Concat(Vec<Var>, Axis),
    Slice(Var, Axis, usize),
    Sum(Var, Option<Axis>),
    Mean(Var, Option<Axis>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Square(_) => "square",
            Op::Softplus(_) => "softplus",
            Op::Clamp(_) => "clamp",
            Op::Concat(..) => "concat",
            Op::Slice(..) => "slice",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Hook for corrupting one op's backward rule. Only used to prove that the
/// gradient checker catches a broken rule.
#[derive(Debug, Clone, Copy, Default)]
pub struct Corruption {
    pub op: Option<&'static str>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    nonfinite: Option<&'static str>,
    corruption: Corruption,
}

pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `c = a * b` for row-major `a: m x k`, `b: k x n`, with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    c: &mut [f64],
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.iter_mut().for_each(|v| *v = 0.0);
        }
        return;
    }
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: slice lengths cover every strided index for the given dims.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Index into a possibly row/column-broadcast operand.
#[inline]
fn bcast_index(r: usize, c: usize, br: usize, bc: usize) -> usize {
    let rr = if br == 1 { 0 } else { r };
    let cc = if bc == 1 { 0 } else { c };
    rr * bc + cc
}

fn check_broadcast(op: &str, a: (usize, usize), b: (usize, usize)) {
    let ok_r = b.0 == a.0 || b.0 == 1;
    let ok_c = b.1 == a.1 || b.1 == 1;
    assert!(ok_r && ok_c, "{op}: cannot broadcast {b:?} onto {a:?}");
}

/// Reduce `g` (shape of the full operand) onto a broadcast shape.
fn reduce_to(g: &Tensor, br: usize, bc: usize) -> Tensor {
    let (r, c) = g.dims2();
    if (br, bc) == (r, c) {
        return g.clone();
    }
    let mut out = vec![0.0; br * bc];
    let gd = g.data();
    for i in 0..r {
        for j in 0..c {
            out[bcast_index(i, j, br, bc)] += gd[i * c + j];
        }
    }
    Tensor::matrix(br, bc, out)
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn with_corruption(corruption: Corruption) -> Self {
        Tape {
            corruption,
            ..Tape::default()
        }
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

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dims2()
    }

    /// First op whose output contained NaN or infinity, if any.
    pub fn nonfinite_op(&self) -> Option<&'static str> {
        self.nonfinite
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.nonfinite {
            Some(op) => Err(Error::NonFinite { op: op.to_string() }),
            None => Ok(()),
        }
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        if self.nonfinite.is_none() && !value.is_finite() {
            self.nonfinite = Some(op.name());
        }
        let value = match value.shape().len() {
            2 => value,
            _ => {
                let (r, c) = value.dims2();
                Tensor::matrix(r, c, value.into_data())
            }
        };
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Differentiable input (parameter).
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    /// Copy of `v`'s value with the gradient path cut.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.nodes[v.0].value.clone();
        self.constant(t)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        assert_eq!(k, k2, "matmul: inner dims {m}x{k} * {k2}x{n}");
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), (k, 1), self.value(b).data(), (n, 1), &mut out, false);
        let ng = self.ng(a) || self.ng(b);
        self.push(Tensor::matrix(m, n, out), Op::MatMul(a, b), ng)
    }

    fn binary(&mut self, a: Var, b: Var, mul: bool) -> Var {
        let (r, c) = self.shape(a);
        let (br, bc) = self.shape(b);
        check_broadcast(if mul { "mul" } else { "add" }, (r, c), (br, bc));
        let ad = self.value(a).data();
        let bd = self.value(b).data();
        let mut out = Vec::with_capacity(r * c);
        if (br, bc) == (r, c) {
            if mul {
                out.extend(ad.iter().zip(bd).map(|(x, y)| x * y));
            } else {
                out.extend(ad.iter().zip(bd).map(|(x, y)| x + y));
            }
        } else {
            for i in 0..r {
                for j in 0..c {
                    let x = ad[i * c + j];
                    let y = bd[bcast_index(i, j, br, bc)];
                    out.push(if mul { x * y } else { x + y });
                }
            }
        }
        let ng = self.ng(a) || self.ng(b);
        let op = if mul { Op::Mul(a, b) } else { Op::Add(a, b) };
        self.push(Tensor::matrix(r, c, out), op, ng)
    }

    /// Elementwise sum; `b` may be a row `[1, c]`, a column `[r, 1]` or a scalar.
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, false)
    }

    /// Elementwise product with the same broadcasting rules as [`Tape::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, true)
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let t = self.value(x).map(f);
        let ng = self.ng(x);
        self.push(t, op, ng)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), f64::tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Op::Exp(x), f64::exp)
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, Op::Log(x), f64::ln)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, Op::Square(x), |v| v * v)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, Op::Softplus(x), softplus)
    }

    /// Clamp to `[lo, hi]`; clamped entries get zero gradient.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, Op::Clamp(x), move |v| v.clamp(lo, hi))
    }

    pub fn concat(&mut self, parts: &[Var], axis: Axis) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let shapes: Vec<_> = parts.iter().map(|p| self.shape(*p)).collect();
        let ng = parts.iter().any(|p| self.ng(*p));
        let out = match axis {
            Axis::Rows => {
                let c = shapes[0].1;
                assert!(shapes.iter().all(|s| s.1 == c), "concat rows: column mismatch {shapes:?}");
                let r: usize = shapes.iter().map(|s| s.0).sum();
                let mut d = Vec::with_capacity(r * c);
                for p in parts {
                    d.extend_from_slice(self.value(*p).data());
                }
                Tensor::matrix(r, c, d)
            }
            Axis::Cols => {
                let r = shapes[0].0;
                assert!(shapes.iter().all(|s| s.0 == r), "concat cols: row mismatch {shapes:?}");
                let c: usize = shapes.iter().map(|s| s.1).sum();
                let mut d = Vec::with_capacity(r * c);
                for i in 0..r {
                    for p in parts {
                        d.extend_from_slice(self.value(*p).row_slice(i));
                    }
                }
                Tensor::matrix(r, c, d)
            }
        };
        self.push(out, Op::Concat(parts.to_vec(), axis), ng)
    }

    pub fn slice(&mut self, x: Var, axis: Axis, start: usize, len: usize) -> Var {
        let (r, c) = self.shape(x);
        let src = self.value(x).data();
        let out = match axis {
            Axis::Rows => {
                assert!(start + len <= r, "slice rows {start}+{len} of {r}");
                Tensor::matrix(len, c, src[start * c..(start + len) * c].to_vec())
            }
            Axis::Cols => {
                assert!(start + len <= c, "slice cols {start}+{len} of {c}");
                let mut d = Vec::with_capacity(r * len);
                for i in 0..r {
                    d.extend_from_slice(&src[i * c + start..i * c + start + len]);
                }
                Tensor::matrix(r, len, d)
            }
        };
        let ng = self.ng(x);
        self.push(out, Op::Slice(x, axis, start), ng)
    }

    fn reduce(&mut self, x: Var, axis: Option<Axis>, mean: bool) -> Var {
        let (r, c) = self.shape(x);
        let d = self.value(x).data();
        let out = match axis {
            None => {
                let s: f64 = d.iter().sum();
                Tensor::scalar(if mean { s / (r * c).max(1) as f64 } else { s })
            }
            Some(Axis::Cols) => {
                let v = (0..r)
                    .map(|i| {
                        let s: f64 = d[i * c..(i + 1) * c].iter().sum();
                        if mean {
                            s / c.max(1) as f64
                        } else {
                            s
                        }
                    })
                    .collect();
                Tensor::matrix(r, 1, v)
            }
            Some(Axis::Rows) => {
                let mut v = vec![0.0; c];
                for i in 0..r {
                    for (acc, x) in v.iter_mut().zip(&d[i * c..(i + 1) * c]) {
                        *acc += x;
                    }
                }
                if mean {
                    v.iter_mut().for_each(|s| *s /= r.max(1) as f64);
                }
                Tensor::matrix(1, c, v)
            }
        };
        let ng = self.ng(x);
        let op = if mean { Op::Mean(x, axis) } else { Op::Sum(x, axis) };
        self.push(out, op, ng)
    }

    /// Sum over everything (`None`) or collapsing one axis.
    pub fn sum(&mut self, x: Var, axis: Option<Axis>) -> Var {
        self.reduce(x, axis, false)
    }

    pub fn mean(&mut self, x: Var, axis: Option<Axis>) -> Var {
        self.reduce(x, axis, true)
    }

    // Compositions of the primitives above.

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let s = self.scalar(c);
        self.mul(x, s)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let s = self.scalar(c);
        self.add(x, s)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let nb = self.scale(b, -1.0);
        self.add(a, nb)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    /// `x @ w + b` with `b` a `[1, out]` row.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Var {
        let h = self.matmul(x, w);
        self.add(h, b)
    }

    /// Reverse sweep from a scalar output. Gradients are accumulated in tape
    /// order, so identical tapes give bit-identical results.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out_shape = self.nodes[output.0].value.shape().to_vec();
        if self.nodes[output.0].value.len() != 1 {
            return Err(Error::NonScalarOutput(out_shape));
        }
        self.check_finite()?;
        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let corrupt = self.corruption.op == Some(node.op.name());
            self.propagate(node, &g, &mut grads, corrupt)?;
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor, op: &'static str) -> Result<()> {
        if !self.nodes[v.0].needs_grad {
            return Ok(());
        }
        if !g.is_finite() {
            return Err(Error::NonFinite {
                op: format!("{op} (backward)"),
            });
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
        Ok(())
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>], corrupt: bool) -> Result<()> {
        let y = &node.value;
        let name = node.op.name();
        let elementwise = |x: Var, f: &dyn Fn(f64, f64, f64) -> f64, grads: &mut [Option<Tensor>]| -> Result<()> {
            let xv = self.value(x).data();
            let (r, c) = y.dims2();
            let d: Vec<f64> = g
                .data()
                .iter()
                .zip(xv)
                .zip(y.data())
                .map(|((&gi, &xi), &yi)| f(gi, xi, yi))
                .collect();
            let mut t = Tensor::matrix(r, c, d);
            if corrupt {
                t = t.map(|v| v * 1.5);
            }
            self.accumulate(grads, x, t, name)
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.shape(*a);
                let n = self.shape(*b).1;
                if self.ng(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, g.data(), (n, 1), self.value(*b).data(), (1, n), &mut da, false);
                    let mut t = Tensor::matrix(m, k, da);
                    if corrupt {
                        t = t.map(|v| v * 1.5);
                    }
                    self.accumulate(grads, *a, t, name)?;
                }
                if self.ng(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, self.value(*a).data(), (1, k), g.data(), (n, 1), &mut db, false);
                    self.accumulate(grads, *b, Tensor::matrix(k, n, db), name)?;
                }
            }
            Op::Add(a, b) => {
                let (br, bc) = self.shape(*b);
                if self.ng(*a) {
                    self.accumulate(grads, *a, g.clone(), name)?;
                }
                if self.ng(*b) {
                    let mut t = reduce_to(g, br, bc);
                    if corrupt {
                        t = t.map(|v| v * 1.5);
                    }
                    self.accumulate(grads, *b, t, name)?;
                }
            }
            Op::Mul(a, b) => {
                let (r, c) = y.dims2();
                let (br, bc) = self.shape(*b);
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let gd = g.data();
                if self.ng(*a) {
                    let d: Vec<f64> = (0..r * c).map(|i| gd[i] * bv[bcast_index(i / c, i % c, br, bc)]).collect();
                    let mut t = Tensor::matrix(r, c, d);
                    if corrupt {
                        t = t.map(|v| v * 1.5);
                    }
                    self.accumulate(grads, *a, t, name)?;
                }
                if self.ng(*b) {
                    let full: Vec<f64> = gd.iter().zip(av).map(|(g, a)| g * a).collect();
                    let t = reduce_to(&Tensor::matrix(r, c, full), br, bc);
                    self.accumulate(grads, *b, t, name)?;
                }
            }
            Op::Tanh(x) => elementwise(*x, &|g, _, y| g * (1.0 - y * y), grads)?,
            Op::Sigmoid(x) => elementwise(*x, &|g, _, y| g * y * (1.0 - y), grads)?,
            Op::Exp(x) => elementwise(*x, &|g, _, y| g * y, grads)?,
            Op::Log(x) => elementwise(*x, &|g, x, _| g / x, grads)?,
            Op::Square(x) => elementwise(*x, &|g, x, _| 2.0 * g * x, grads)?,
            Op::Softplus(x) => elementwise(*x, &|g, x, _| g * sigmoid(x), grads)?,
            Op::Clamp(x) => elementwise(*x, &|g, x, y| if x == y { g } else { 0.0 }, grads)?,
            Op::Concat(parts, axis) => {
                let (_, c) = y.dims2();
                let gd = g.data();
                let mut offset = 0;
                for p in parts {
                    let (pr, pc) = self.shape(*p);
                    if self.ng(*p) {
                        let t = match axis {
                            Axis::Rows => Tensor::matrix(pr, pc, gd[offset * c..(offset + pr) * c].to_vec()),
                            Axis::Cols => {
                                let mut d = Vec::with_capacity(pr * pc);
                                for i in 0..pr {
                                    d.extend_from_slice(&gd[i * c + offset..i * c + offset + pc]);
                                }
                                Tensor::matrix(pr, pc, d)
                            }
                        };
                        let t = if corrupt { t.map(|v| v * 1.5) } else { t };
                        self.accumulate(grads, *p, t, name)?;
                    }
                    offset += match axis {
                        Axis::Rows => pr,
                        Axis::Cols => pc,
                    };
                }
            }
            Op::Slice(x, axis, start) => {
                let (r, c) = self.shape(*x);
                let (sr, sc) = y.dims2();
                let mut d = vec![0.0; r * c];
                let gd = g.data();
                match axis {
                    Axis::Rows => d[start * c..(start + sr) * c].copy_from_slice(gd),
                    Axis::Cols => {
                        for i in 0..r {
                            d[i * c + start..i * c + start + sc].copy_from_slice(&gd[i * sc..(i + 1) * sc]);
                        }
                    }
                }
                let t = Tensor::matrix(r, c, d);
                let t = if corrupt { t.map(|v| v * 1.5) } else { t };
                self.accumulate(grads, *x, t, name)?;
            }
            Op::Sum(x, axis) | Op::Mean(x, axis) => {
                let is_mean = matches!(node.op, Op::Mean(..));
                let (r, c) = self.shape(*x);
                let gd = g.data();
                let d: Vec<f64> = match axis {
                    None => {
                        let s = if is_mean { gd[0] / (r * c).max(1) as f64 } else { gd[0] };
                        vec![s; r * c]
                    }
                    Some(Axis::Cols) => {
                        let div = if is_mean { c.max(1) as f64 } else { 1.0 };
                        (0..r * c).map(|i| gd[i / c] / div).collect()
                    }
                    Some(Axis::Rows) => {
                        let div = if is_mean { r.max(1) as f64 } else { 1.0 };
                        (0..r * c).map(|i| gd[i % c] / div).collect()
                    }
                };
                let t = Tensor::matrix(r, c, d);
                let t = if corrupt { t.map(|v| v * 1.5) } else { t };
                self.accumulate(grads, *x, t, name)?;
            }
        }
        Ok(())
    }
}

/// Names of every primitive op, as reported in errors.
pub const PRIMITIVE_OPS: [&str; 14] = [
    "matmul", "add", "mul", "tanh", "sigmoid", "exp", "log", "square", "softplus", "clamp", "concat", "slice", "sum", "mean",
];
