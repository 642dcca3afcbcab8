//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! Values are computed eagerly when an operation is recorded. A [`Tape`] is
//! built for a single loss evaluation and can be differentiated any number
//! of times from different scalar roots; [`Tape::backward`] never mutates
//! the recorded graph.
//!
//! Subgradient conventions: `abs'(0) = 0`, `relu'(0) = 0`. For `min4`/`max4`
//! (and the fused interval products built on the same rule) the gradient of
//! each output element flows to exactly one argument, the first one in
//! argument order that attains the extremum.

use ndarray::{s, Array2, Axis, Zip};

use crate::error::{Error, Result};
use crate::interval::sigmoid;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Which bound of an interval matrix product a fused node computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bound {
    Lower,
    Upper,
}

/// The operations a tape can record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OpKind {
    MatMul,
    Add,
    Sub,
    Hadamard,
    Div,
    /// `a + b` with `b` a column vector broadcast across the columns of `a`.
    AddColumn,
    Sigmoid,
    Tanh,
    Abs,
    Relu,
    Softplus,
    Square,
    Exp,
    Ln,
    Min4,
    Max4,
    Mean,
    Sum,
    ScalarMul(f64),
    AddScalar(f64),
    /// `select(cond, pos, neg)`: `pos` where `cond >= 0`, else `neg`.
    SelectBranch,
    ConcatRows,
    /// Rows `start..start + len` of the input.
    SliceRows { start: usize, len: usize },
    /// One bound of `[a_lo, a_hi] * [b_lo, b_hi]` (matrix product).
    IntervalMatMul(Bound),
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Unary(OpKind, Var),
    Binary(OpKind, Var, Var),
    Quad(OpKind, [Var; 4]),
    Select { cond: Var, pos: Var, neg: Var },
    Concat(Vec<Var>),
    Slice { input: Var, start: usize },
}

#[derive(Debug, Clone)]
struct Node {
    value: Array2<f64>,
    op: Op,
    needs_grad: bool,
}

/// An append-only record of a computation.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<Var>,
}

/// Gradients of one scalar root with respect to every node on the tape.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
    params: Vec<Var>,
}

impl Gradients {
    /// Gradient for `v`, or `None` if `v` does not influence the root and is
    /// not a registered parameter.
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of a registered parameter. Always has the parameter's shape.
    pub fn param(&self, v: Var) -> &Array2<f64> {
        self.get(v).expect("gradient requested for a node that is not a registered parameter")
    }

    /// Parameter gradients in registration order.
    pub fn params(&self) -> Vec<&Array2<f64>> {
        self.params.iter().map(|&p| self.param(p)).collect()
    }
}

fn dim_str(a: &Array2<f64>) -> String {
    format!("{}x{}", a.nrows(), a.ncols())
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

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.dim(), (1, 1));
        m[[0, 0]]
    }

    /// A constant leaf; gradients are not propagated into it.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A differentiable leaf registered as a parameter.
    pub fn param(&mut self, value: Array2<f64>) -> Var {
        let v = self.push(value, Op::Leaf, true);
        self.params.push(v);
        v
    }

    pub fn params(&self) -> &[Var] {
        &self.params
    }

    fn push(&mut self, value: Array2<f64>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Records `op` applied to `inputs`, validating arity and shapes.
    pub fn record(&mut self, op: OpKind, inputs: &[Var]) -> Result<Var> {
        use OpKind::*;
        let arity_err = |want: &str| Error::shape("record", format!("{op:?} expects {want} inputs, got {}", inputs.len()));
        match op {
            Sigmoid | Tanh | Abs | Relu | Softplus | Square | Exp | Ln | Mean | Sum | ScalarMul(_)
            | AddScalar(_) | SliceRows { .. } => {
                let [a] = inputs else { return Err(arity_err("1")) };
                let a = *a;
                let value = {
                    let x = self.value(a);
                    match op {
                        Sigmoid => x.mapv(sigmoid),
                        Tanh => x.mapv(f64::tanh),
                        Abs => x.mapv(f64::abs),
                        Relu => x.mapv(|v| v.max(0.0)),
                        Softplus => x.mapv(softplus),
                        Square => x.mapv(|v| v * v),
                        Exp => x.mapv(f64::exp),
                        Ln => x.mapv(f64::ln),
                        Mean => {
                            if x.is_empty() {
                                return Err(Error::shape("mean", "empty input"));
                            }
                            Array2::from_elem((1, 1), x.sum() / x.len() as f64)
                        }
                        Sum => Array2::from_elem((1, 1), x.sum()),
                        ScalarMul(c) => x.mapv(|v| v * c),
                        AddScalar(c) => x.mapv(|v| v + c),
                        SliceRows { start, len } => {
                            if start + len > x.nrows() {
                                return Err(Error::shape(
                                    "slice_rows",
                                    format!("rows {start}..{} of a {} node", start + len, dim_str(x)),
                                ));
                            }
                            x.slice(s![start..start + len, ..]).to_owned()
                        }
                        _ => unreachable!(),
                    }
                };
                let ng = self.ng(a);
                let node_op = match op {
                    SliceRows { start, .. } => Op::Slice { input: a, start },
                    _ => Op::Unary(op, a),
                };
                Ok(self.push(value, node_op, ng))
            }
            MatMul | Add | Sub | Hadamard | Div | AddColumn => {
                let [a, b] = inputs else { return Err(arity_err("2")) };
                let (a, b) = (*a, *b);
                let (x, y) = (self.value(a), self.value(b));
                let value = match op {
                    MatMul => {
                        if x.ncols() != y.nrows() {
                            return Err(Error::shape("matmul", format!("{} times {}", dim_str(x), dim_str(y))));
                        }
                        x.dot(y)
                    }
                    AddColumn => {
                        if y.ncols() != 1 || y.nrows() != x.nrows() {
                            return Err(Error::shape("add_column", format!("{} plus column {}", dim_str(x), dim_str(y))));
                        }
                        x + y
                    }
                    _ => {
                        if x.dim() != y.dim() {
                            return Err(Error::shape("elementwise", format!("{op:?} on {} and {}", dim_str(x), dim_str(y))));
                        }
                        match op {
                            Add => x + y,
                            Sub => x - y,
                            Hadamard => x * y,
                            Div => x / y,
                            _ => unreachable!(),
                        }
                    }
                };
                let ng = self.ng(a) || self.ng(b);
                Ok(self.push(value, Op::Binary(op, a, b), ng))
            }
            Min4 | Max4 | IntervalMatMul(_) => {
                let [a, b, c, d] = inputs else { return Err(arity_err("4")) };
                let args = [*a, *b, *c, *d];
                let value = match op {
                    Min4 | Max4 => {
                        let d0 = self.value(args[0]).dim();
                        if args.iter().any(|&v| self.value(v).dim() != d0) {
                            return Err(Error::shape("min4/max4", "arguments differ in shape"));
                        }
                        let (p, q, r, t) = (
                            self.value(args[0]),
                            self.value(args[1]),
                            self.value(args[2]),
                            self.value(args[3]),
                        );
                        let mut out = Array2::zeros(d0);
                        let is_min = op == Min4;
                        Zip::from(&mut out).and(p).and(q).and(r).and(t).for_each(|o, &p, &q, &r, &t| {
                            *o = if is_min { p.min(q).min(r).min(t) } else { p.max(q).max(r).max(t) };
                        });
                        out
                    }
                    IntervalMatMul(bound) => {
                        let (al, ah, bl, bh) = (
                            self.value(args[0]),
                            self.value(args[1]),
                            self.value(args[2]),
                            self.value(args[3]),
                        );
                        if al.dim() != ah.dim() || bl.dim() != bh.dim() || al.ncols() != bl.nrows() {
                            return Err(Error::shape(
                                "interval_matmul",
                                format!("[{}, {}] times [{}, {}]", dim_str(al), dim_str(ah), dim_str(bl), dim_str(bh)),
                            ));
                        }
                        if args[2] == args[3] && ordered(al, ah) {
                            point_rhs_bound(al, ah, bl, bound)
                        } else {
                            interval_matmul_bound(al, ah, bl, bh, bound)
                        }
                    }
                    _ => unreachable!(),
                };
                let ng = args.iter().any(|&v| self.ng(v));
                Ok(self.push(value, Op::Quad(op, args), ng))
            }
            SelectBranch => {
                let [cond, pos, neg] = inputs else { return Err(arity_err("3")) };
                let (cond, pos, neg) = (*cond, *pos, *neg);
                let (c, p, n) = (self.value(cond), self.value(pos), self.value(neg));
                if c.dim() != p.dim() || p.dim() != n.dim() {
                    return Err(Error::shape("select", "arguments differ in shape"));
                }
                let mut out = Array2::zeros(c.dim());
                Zip::from(&mut out).and(c).and(p).and(n).for_each(|o, &c, &p, &n| {
                    *o = if c >= 0.0 { p } else { n };
                });
                let ng = self.ng(pos) || self.ng(neg);
                Ok(self.push(out, Op::Select { cond, pos, neg }, ng))
            }
            ConcatRows => {
                if inputs.is_empty() {
                    return Err(arity_err("at least 1"));
                }
                let cols = self.value(inputs[0]).ncols();
                if inputs.iter().any(|&v| self.value(v).ncols() != cols) {
                    return Err(Error::shape("concat_rows", "inputs differ in column count"));
                }
                let rows: usize = inputs.iter().map(|&v| self.value(v).nrows()).sum();
                let mut out = Array2::zeros((rows, cols));
                let mut r = 0;
                for &v in inputs {
                    let x = self.value(v);
                    out.slice_mut(s![r..r + x.nrows(), ..]).assign(x);
                    r += x.nrows();
                }
                let ng = inputs.iter().any(|&v| self.ng(v));
                Ok(self.push(out, Op::Concat(inputs.to_vec()), ng))
            }
        }
    }

    fn rec(&mut self, op: OpKind, inputs: &[Var]) -> Var {
        match self.record(op, inputs) {
            Ok(v) => v,
            Err(e) => panic!("{e}"),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.rec(OpKind::MatMul, &[a, b])
    }
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.rec(OpKind::Add, &[a, b])
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.rec(OpKind::Sub, &[a, b])
    }
    pub fn hadamard(&mut self, a: Var, b: Var) -> Var {
        self.rec(OpKind::Hadamard, &[a, b])
    }
    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.rec(OpKind::Div, &[a, b])
    }
    pub fn add_column(&mut self, a: Var, col: Var) -> Var {
        self.rec(OpKind::AddColumn, &[a, col])
    }
    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.rec(OpKind::Sigmoid, &[a])
    }
    pub fn tanh(&mut self, a: Var) -> Var {
        self.rec(OpKind::Tanh, &[a])
    }
    pub fn abs(&mut self, a: Var) -> Var {
        self.rec(OpKind::Abs, &[a])
    }
    pub fn relu(&mut self, a: Var) -> Var {
        self.rec(OpKind::Relu, &[a])
    }
    pub fn softplus(&mut self, a: Var) -> Var {
        self.rec(OpKind::Softplus, &[a])
    }
    pub fn square(&mut self, a: Var) -> Var {
        self.rec(OpKind::Square, &[a])
    }
    pub fn exp(&mut self, a: Var) -> Var {
        self.rec(OpKind::Exp, &[a])
    }
    pub fn ln(&mut self, a: Var) -> Var {
        self.rec(OpKind::Ln, &[a])
    }
    pub fn min4(&mut self, a: [Var; 4]) -> Var {
        self.rec(OpKind::Min4, &a)
    }
    pub fn max4(&mut self, a: [Var; 4]) -> Var {
        self.rec(OpKind::Max4, &a)
    }
    pub fn mean(&mut self, a: Var) -> Var {
        self.rec(OpKind::Mean, &[a])
    }
    pub fn sum(&mut self, a: Var) -> Var {
        self.rec(OpKind::Sum, &[a])
    }
    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.rec(OpKind::ScalarMul(c), &[a])
    }
    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.rec(OpKind::AddScalar(c), &[a])
    }
    pub fn select(&mut self, cond: Var, pos: Var, neg: Var) -> Var {
        self.rec(OpKind::SelectBranch, &[cond, pos, neg])
    }
    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        self.rec(OpKind::ConcatRows, parts)
    }
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        self.rec(OpKind::SliceRows { start, len }, &[a])
    }
    pub fn interval_matmul(&mut self, bound: Bound, a_lo: Var, a_hi: Var, b_lo: Var, b_hi: Var) -> Var {
        self.rec(OpKind::IntervalMatMul(bound), &[a_lo, a_hi, b_lo, b_hi])
    }

    /// Reverse sweep from a 1x1 `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let rv = self.value(root);
        if rv.dim() != (1, 1) {
            return Err(Error::NonScalarRoot { rows: rv.nrows(), cols: rv.ncols() });
        }
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Array2::ones((1, 1)));

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        grads.resize(self.nodes.len(), None);
        for &p in &self.params {
            if grads[p.0].is_none() {
                grads[p.0] = Some(Array2::zeros(self.value(p).dim()));
            }
        }
        Ok(Gradients { grads, params: self.params.clone() })
    }

    fn propagate(&self, node: &Node, g: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        use OpKind::*;
        let acc = |grads: &mut [Option<Array2<f64>>], v: Var, d: Array2<f64>| {
            if !self.ng(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => *existing += &d,
                slot @ None => *slot = Some(d),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Unary(kind, a) => {
                let a = *a;
                if !self.ng(a) {
                    return;
                }
                let x = self.value(a);
                let y = &node.value;
                let d = match kind {
                    Sigmoid => g * &y.mapv(|s| s * (1.0 - s)),
                    Tanh => g * &y.mapv(|t| 1.0 - t * t),
                    Abs => g * &x.mapv(|v| if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 }),
                    Relu => g * &x.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 }),
                    Softplus => g * &x.mapv(sigmoid),
                    Square => g * &x.mapv(|v| 2.0 * v),
                    Exp => g * y,
                    Ln => g / x,
                    Mean => Array2::from_elem(x.dim(), g[[0, 0]] / x.len() as f64),
                    Sum => Array2::from_elem(x.dim(), g[[0, 0]]),
                    ScalarMul(c) => g.mapv(|v| v * c),
                    AddScalar(_) => g.clone(),
                    _ => unreachable!("unary node with {kind:?}"),
                };
                acc(grads, a, d);
            }
            Op::Binary(kind, a, b) => {
                let (a, b) = (*a, *b);
                let (x, y) = (self.value(a), self.value(b));
                match kind {
                    MatMul => {
                        if self.ng(a) {
                            acc(grads, a, g.dot(&y.t()));
                        }
                        if self.ng(b) {
                            acc(grads, b, x.t().dot(g));
                        }
                    }
                    Add => {
                        acc(grads, a, g.clone());
                        acc(grads, b, g.clone());
                    }
                    Sub => {
                        acc(grads, a, g.clone());
                        acc(grads, b, -g);
                    }
                    Hadamard => {
                        if self.ng(a) {
                            acc(grads, a, g * y);
                        }
                        if self.ng(b) {
                            acc(grads, b, g * x);
                        }
                    }
                    Div => {
                        if self.ng(a) {
                            acc(grads, a, g / y);
                        }
                        if self.ng(b) {
                            let mut d = Array2::zeros(y.dim());
                            Zip::from(&mut d).and(g).and(x).and(y).for_each(|d, &g, &x, &y| *d = -g * x / (y * y));
                            acc(grads, b, d);
                        }
                    }
                    AddColumn => {
                        acc(grads, a, g.clone());
                        if self.ng(b) {
                            acc(grads, b, g.sum_axis(Axis(1)).insert_axis(Axis(1)));
                        }
                    }
                    _ => unreachable!("binary node with {kind:?}"),
                }
            }
            Op::Quad(kind, args) => match kind {
                Min4 | Max4 => {
                    let vals: Vec<&Array2<f64>> = args.iter().map(|&v| self.value(v)).collect();
                    let mut ds: Vec<Array2<f64>> = (0..4).map(|_| Array2::zeros(g.dim())).collect();
                    let is_min = *kind == Min4;
                    for ((r, c), &gv) in g.indexed_iter() {
                        let mut best = 0;
                        for k in 1..4 {
                            let better = if is_min {
                                vals[k][[r, c]] < vals[best][[r, c]]
                            } else {
                                vals[k][[r, c]] > vals[best][[r, c]]
                            };
                            if better {
                                best = k;
                            }
                        }
                        ds[best][[r, c]] += gv;
                    }
                    for (k, d) in ds.into_iter().enumerate() {
                        acc(grads, args[k], d);
                    }
                }
                IntervalMatMul(bound) => {
                    let [al, ah, bl, bh] = *args;
                    let (va, vb) = (self.value(al), self.value(ah));
                    let (dal, dah, dbl, dbh) = if bl == bh && ordered(va, vb) {
                        point_rhs_backward(va, vb, self.value(bl), g, *bound)
                    } else {
                        interval_matmul_backward(va, vb, self.value(bl), self.value(bh), g, *bound)
                    };
                    acc(grads, al, dal);
                    acc(grads, ah, dah);
                    acc(grads, bl, dbl);
                    acc(grads, bh, dbh);
                }
                _ => unreachable!("quad node with {kind:?}"),
            },
            Op::Select { cond, pos, neg } => {
                let c = self.value(*cond);
                let mut dp = Array2::zeros(g.dim());
                let mut dn = Array2::zeros(g.dim());
                Zip::from(&mut dp).and(&mut dn).and(g).and(c).for_each(|p, n, &g, &c| {
                    if c >= 0.0 {
                        *p = g;
                    } else {
                        *n = g;
                    }
                });
                acc(grads, *pos, dp);
                acc(grads, *neg, dn);
            }
            Op::Concat(parts) => {
                let mut r = 0;
                for &v in parts {
                    let rows = self.value(v).nrows();
                    if self.ng(v) {
                        acc(grads, v, g.slice(s![r..r + rows, ..]).to_owned());
                    }
                    r += rows;
                }
            }
            Op::Slice { input, start } => {
                if self.ng(*input) {
                    let mut d = Array2::zeros(self.value(*input).dim());
                    d.slice_mut(s![*start..*start + g.nrows(), ..]).assign(g);
                    acc(grads, *input, d);
                }
            }
        }
    }
}

/// Numerically safe `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
fn corners(al: f64, ah: f64, bl: f64, bh: f64) -> [f64; 4] {
    [al * bl, al * bh, ah * bl, ah * bh]
}

#[inline]
fn pick(c: &[f64; 4], bound: Bound) -> usize {
    let mut best = 0;
    for k in 1..4 {
        let better = match bound {
            Bound::Lower => c[k] < c[best],
            Bound::Upper => c[k] > c[best],
        };
        if better {
            best = k;
        }
    }
    best
}

fn interval_matmul_bound(al: &Array2<f64>, ah: &Array2<f64>, bl: &Array2<f64>, bh: &Array2<f64>, bound: Bound) -> Array2<f64> {
    let (m, p) = al.dim();
    let n = bl.ncols();
    let al = al.as_standard_layout();
    let ah = ah.as_standard_layout();
    // Transposed copies give contiguous access along the shared index.
    let blt = bl.t().as_standard_layout().to_owned();
    let bht = bh.t().as_standard_layout().to_owned();
    let (al, ah, blt, bht) = (
        al.as_slice().unwrap(),
        ah.as_slice().unwrap(),
        blt.as_slice().unwrap(),
        bht.as_slice().unwrap(),
    );
    let mut out = Array2::zeros((m, n));
    for i in 0..m {
        let (ar_l, ar_h) = (&al[i * p..(i + 1) * p], &ah[i * p..(i + 1) * p]);
        for j in 0..n {
            let (bc_l, bc_h) = (&blt[j * p..(j + 1) * p], &bht[j * p..(j + 1) * p]);
            let mut acc = 0.0;
            for k in 0..p {
                let c = corners(ar_l[k], ar_h[k], bc_l[k], bc_h[k]);
                acc += c[pick(&c, bound)];
            }
            out[[i, j]] = acc;
        }
    }
    out
}

type QuadGrads = (Array2<f64>, Array2<f64>, Array2<f64>, Array2<f64>);

fn ordered(lo: &Array2<f64>, hi: &Array2<f64>) -> bool {
    Zip::from(lo).and(hi).all(|&l, &h| l <= h)
}

/// `[a_lo, a_hi] * b` for a crisp right operand, as two real products.
///
/// With `a_lo <= a_hi` the extremal corner of every term is fixed by the sign
/// of `b`, which gives the same corner selection as the general kernel.
fn point_rhs_bound(al: &Array2<f64>, ah: &Array2<f64>, b: &Array2<f64>, bound: Bound) -> Array2<f64> {
    let bp = b.mapv(|v| v.max(0.0));
    let bn = b.mapv(|v| v.min(0.0));
    match bound {
        Bound::Lower => al.dot(&bp) + ah.dot(&bn),
        Bound::Upper => ah.dot(&bp) + al.dot(&bn),
    }
}

fn point_rhs_backward(al: &Array2<f64>, ah: &Array2<f64>, b: &Array2<f64>, g: &Array2<f64>, bound: Bound) -> QuadGrads {
    let bp = b.mapv(|v| v.max(0.0));
    let bn = b.mapv(|v| v.min(0.0));
    let full = g.dot(&b.t());
    // Lower bound: a_lo pairs with b >= 0, a_hi with b < 0.
    // Upper bound: a_hi pairs with b > 0, a_lo with b <= 0.
    let (mut d_lo, mut d_hi, use_hi) = match bound {
        Bound::Lower => (g.dot(&bp.t()), g.dot(&bn.t()), b.mapv(|v| v < 0.0)),
        Bound::Upper => (g.dot(&bn.t()), g.dot(&bp.t()), b.mapv(|v| v > 0.0)),
    };
    // Where a_lo == a_hi all corners tie and the first one (a_lo) wins.
    Zip::from(&mut d_lo).and(&mut d_hi).and(&full).and(al).and(ah).for_each(|n, f, &full, &l, &h| {
        if l == h {
            *n = full;
            *f = 0.0;
        }
    });
    let from_lo = al.t().dot(g);
    let from_hi = ah.t().dot(g);
    let mut db = Array2::zeros(b.dim());
    Zip::from(&mut db).and(&from_lo).and(&from_hi).and(&use_hi).for_each(|d, &l, &h, &u| {
        *d = if u { h } else { l };
    });
    (d_lo, d_hi, db, Array2::zeros(b.dim()))
}

fn interval_matmul_backward(
    al: &Array2<f64>,
    ah: &Array2<f64>,
    bl: &Array2<f64>,
    bh: &Array2<f64>,
    g: &Array2<f64>,
    bound: Bound,
) -> QuadGrads {
    let (m, p) = al.dim();
    let n = bl.ncols();
    let mut dal = Array2::zeros((m, p));
    let mut dah = Array2::zeros((m, p));
    let mut dbl = Array2::zeros((p, n));
    let mut dbh = Array2::zeros((p, n));
    for i in 0..m {
        for j in 0..n {
            let gv = g[[i, j]];
            if gv == 0.0 {
                continue;
            }
            for k in 0..p {
                let (a_l, a_h, b_l, b_h) = (al[[i, k]], ah[[i, k]], bl[[k, j]], bh[[k, j]]);
                let c = corners(a_l, a_h, b_l, b_h);
                match pick(&c, bound) {
                    0 => {
                        dal[[i, k]] += gv * b_l;
                        dbl[[k, j]] += gv * a_l;
                    }
                    1 => {
                        dal[[i, k]] += gv * b_h;
                        dbh[[k, j]] += gv * a_l;
                    }
                    2 => {
                        dah[[i, k]] += gv * b_l;
                        dbl[[k, j]] += gv * a_h;
                    }
                    _ => {
                        dah[[i, k]] += gv * b_h;
                        dbh[[k, j]] += gv * a_h;
                    }
                }
            }
        }
    }
    (dal, dah, dbl, dbh)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize, lo: f64, hi: f64) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.random_range(lo..hi))
    }

    /// Central differences of `f` around `x0` for every entry.
    fn numeric_grad(x0: &Array2<f64>, h: f64, f: &dyn Fn(&Array2<f64>) -> f64) -> Array2<f64> {
        let mut out = Array2::zeros(x0.dim());
        for idx in 0..x0.len() {
            let (r, c) = (idx / x0.ncols(), idx % x0.ncols());
            let mut xp = x0.clone();
            let mut xm = x0.clone();
            xp[[r, c]] += h;
            xm[[r, c]] -= h;
            out[[r, c]] = (f(&xp) - f(&xm)) / (2.0 * h);
        }
        out
    }

    fn assert_close(analytic: &Array2<f64>, numeric: &Array2<f64>) {
        for (a, n) in analytic.iter().zip(numeric.iter()) {
            if n.abs() < 1e-6 && a.abs() < 1e-6 {
                assert!((a - n).abs() < 1e-6, "analytic {a} numeric {n}");
            } else {
                let rel = (a - n).abs() / a.abs().max(n.abs());
                assert!(rel <= 1e-4, "analytic {a} numeric {n} rel {rel}");
            }
        }
    }

    /// Checks d/dx of `build(tape, x)` for a scalar-valued graph.
    fn check_unary_graph(x0: Array2<f64>, build: fn(&mut Tape, Var) -> Var) {
        let mut tape = Tape::new();
        let x = tape.param(x0.clone());
        let root = build(&mut tape, x);
        let g = tape.backward(root).unwrap();
        let f = |x: &Array2<f64>| {
            let mut t = Tape::new();
            let v = t.constant(x.clone());
            let r = build(&mut t, v);
            t.scalar(r)
        };
        assert_close(g.param(x), &numeric_grad(&x0, 1e-5, &f));
    }

    #[test]
    fn record_contracts() {
        let mut t = Tape::new();
        let x = t.constant(array![[1.0, 2.0]]);
        let y = t.constant(array![[3.0, -1.0]]);
        let s = t.record(OpKind::Add, &[x, y]).unwrap();
        assert_eq!(t.value(s), &array![[4.0, 1.0]]);
        let m = t.min4([x, x, x, x]);
        assert_eq!(t.value(m), t.value(x));
        let a = t.constant(Array2::ones((2, 3)));
        let b = t.constant(Array2::ones((3, 1)));
        let p = t.matmul(a, b);
        assert_eq!(t.value(p).dim(), (2, 1));
        assert!(t.record(OpKind::MatMul, &[b, a]).is_err());
        assert!(matches!(t.record(OpKind::MatMul, &[a, a]), Err(Error::Shape { .. })));
        assert!(t.record(OpKind::Add, &[a, b]).is_err());
        assert!(t.record(OpKind::Tanh, &[a, b]).is_err());
    }

    #[test]
    fn square_derivative() {
        let mut t = Tape::new();
        let x = t.param(array![[3.0]]);
        let y = t.square(x);
        let g = t.backward(y).unwrap();
        assert_eq!(g.param(x)[[0, 0]], 6.0);
    }

    #[test]
    fn relu_and_abs_subgradients() {
        for (x0, want_relu, want_abs) in [(-1.0, 0.0, -1.0), (1.0, 1.0, 1.0), (0.0, 0.0, 0.0)] {
            let mut t = Tape::new();
            let x = t.param(array![[x0]]);
            let r = t.relu(x);
            let a = t.abs(x);
            assert_eq!(t.backward(r).unwrap().param(x)[[0, 0]], want_relu);
            assert_eq!(t.backward(a).unwrap().param(x)[[0, 0]], want_abs);
        }
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let mut t = Tape::new();
        let x = t.param(array![[1.0, 2.0]]);
        let y = t.tanh(x);
        assert!(matches!(t.backward(y), Err(Error::NonScalarRoot { rows: 1, cols: 2 })));
    }

    #[test]
    fn unreachable_params_get_zero_gradients() {
        let mut t = Tape::new();
        let x = t.param(array![[1.0, 2.0]]);
        let unused = t.param(array![[5.0], [6.0]]);
        let y = t.sum(x);
        let g = t.backward(y).unwrap();
        assert_eq!(g.param(unused), &Array2::<f64>::zeros((2, 1)));
        assert_eq!(g.params().len(), 2);
    }

    #[test]
    fn min_max_route_to_first_extremal_corner() {
        let mut t = Tape::new();
        let a = t.param(array![[1.0, 2.0]]);
        let b = t.param(array![[1.0, 0.0]]);
        let c = t.param(array![[3.0, 0.0]]);
        let d = t.param(array![[1.0, 5.0]]);
        let m = t.min4([a, b, c, d]);
        let root = t.sum(m);
        let g = t.backward(root).unwrap();
        // Column 0: a, b and d tie at 1; a wins. Column 1: b and c tie at 0; b wins.
        assert_eq!(g.param(a), &array![[1.0, 0.0]]);
        assert_eq!(g.param(b), &array![[0.0, 1.0]]);
        assert_eq!(g.param(c), &array![[0.0, 0.0]]);
        assert_eq!(g.param(d), &array![[0.0, 0.0]]);

        let mx = t.max4([a, b, c, d]);
        let root = t.sum(mx);
        let g = t.backward(root).unwrap();
        let total: f64 = [a, b, c, d].iter().map(|&v| g.param(v).sum()).sum();
        assert_eq!(total, 2.0);
        assert_eq!(g.param(c), &array![[1.0, 0.0]]);
        assert_eq!(g.param(d), &array![[0.0, 1.0]]);
    }

    #[test]
    fn every_elementwise_op_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x0 = rand_mat(&mut rng, 3, 2, -2.0, 2.0);
        let pos0 = rand_mat(&mut rng, 3, 2, 0.5, 3.0);
        check_unary_graph(x0.clone(), |t, x| {
            let y = t.sigmoid(x);
            t.sum(y)
        });
        check_unary_graph(x0.clone(), |t, x| {
            let y = t.tanh(x);
            t.sum(y)
        });
        check_unary_graph(x0.clone(), |t, x| {
            let y = t.softplus(x);
            t.mean(y)
        });
        check_unary_graph(x0.clone(), |t, x| {
            let y = t.abs(x);
            t.sum(y)
        });
        check_unary_graph(x0.clone(), |t, x| {
            let y = t.relu(x);
            t.sum(y)
        });
        check_unary_graph(x0.clone(), |t, x| {
            let y = t.exp(x);
            let z = t.scale(y, 0.3);
            let w = t.add_scalar(z, 2.0);
            t.mean(w)
        });
        check_unary_graph(pos0.clone(), |t, x| {
            let y = t.ln(x);
            t.sum(y)
        });
        check_unary_graph(pos0, |t, x| {
            let sq = t.square(x);
            let q = t.div(sq, x);
            let r = t.div(x, sq);
            let s = t.add(q, r);
            t.sum(s)
        });
        check_unary_graph(x0.clone(), |t, x| {
            let a = t.slice_rows(x, 1, 2);
            let b = t.slice_rows(x, 0, 1);
            let c = t.concat_rows(&[b, a]);
            let d = t.hadamard(c, x);
            t.sum(d)
        });
        check_unary_graph(x0.clone(), |t, x| {
            let neg = t.scale(x, -0.5);
            let sq = t.square(x);
            let s = t.select(x, sq, neg);
            t.sum(s)
        });
        check_unary_graph(x0, |t, x| {
            let a = t.scale(x, 2.0);
            let b = t.add_scalar(x, 0.5);
            let c = t.square(x);
            let d = t.tanh(x);
            let lo = t.min4([a, b, c, d]);
            let hi = t.max4([a, b, c, d]);
            let w = t.sub(hi, lo);
            t.sum(w)
        });
    }

    #[test]
    fn two_layer_net_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w1 = rand_mat(&mut rng, 4, 3, -1.0, 1.0);
        let b1 = rand_mat(&mut rng, 4, 1, -1.0, 1.0);
        let w2 = rand_mat(&mut rng, 1, 4, -1.0, 1.0);
        let b2 = rand_mat(&mut rng, 1, 1, -1.0, 1.0);
        let x = rand_mat(&mut rng, 3, 5, -1.0, 1.0);
        let target = rand_mat(&mut rng, 1, 5, -1.0, 1.0);

        let loss = |ps: &[Array2<f64>]| -> (Tape, Var, Vec<Var>) {
            let mut t = Tape::new();
            let vs: Vec<Var> = ps.iter().map(|p| t.param(p.clone())).collect();
            let xv = t.constant(x.clone());
            let tv = t.constant(target.clone());
            let h = t.matmul(vs[0], xv);
            let h = t.add_column(h, vs[1]);
            let h = t.tanh(h);
            let o = t.matmul(vs[2], h);
            let o = t.add_column(o, vs[3]);
            let e = t.sub(o, tv);
            let e = t.square(e);
            let l = t.mean(e);
            (t, l, vs)
        };
        let ps = vec![w1, b1, w2, b2];
        let (tape, root, vars) = loss(&ps);
        let g = tape.backward(root).unwrap();
        for (i, &v) in vars.iter().enumerate() {
            let f = |p: &Array2<f64>| {
                let mut ps2 = ps.clone();
                ps2[i] = p.clone();
                let (t, r, _) = loss(&ps2);
                t.scalar(r)
            };
            assert_close(g.param(v), &numeric_grad(&ps[i], 1e-5, &f));
        }
    }

    #[test]
    fn interval_matmul_matches_composed_ops_and_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let al0 = rand_mat(&mut rng, 3, 4, -1.0, 1.0);
        let ah0 = al0.mapv(|v| v + 0.3);
        let bl0 = rand_mat(&mut rng, 4, 2, -1.0, 1.0);
        let bh0 = bl0.mapv(|v| v + 0.2);
        let weights = rand_mat(&mut rng, 3, 2, -1.0, 1.0);

        let build = |al: &Array2<f64>, ah: &Array2<f64>, bl: &Array2<f64>, bh: &Array2<f64>| {
            let mut t = Tape::new();
            let vs = [t.param(al.clone()), t.param(ah.clone()), t.param(bl.clone()), t.param(bh.clone())];
            let lo = t.interval_matmul(Bound::Lower, vs[0], vs[1], vs[2], vs[3]);
            let hi = t.interval_matmul(Bound::Upper, vs[0], vs[1], vs[2], vs[3]);
            let w = t.constant(weights.clone());
            let a = t.hadamard(lo, w);
            let b = t.square(hi);
            let c = t.add(a, b);
            let r = t.sum(c);
            (t, r, vs)
        };
        let (tape, root, vs) = build(&al0, &ah0, &bl0, &bh0);
        let reference = crate::interval::IntervalMatrix::new(al0.clone(), ah0.clone())
            .unwrap()
            .matmul(&crate::interval::IntervalMatrix::new(bl0.clone(), bh0.clone()).unwrap())
            .unwrap();
        let lo_node = Var(vs[3].0 + 1);
        assert_eq!(tape.value(lo_node), reference.lo());

        let g = tape.backward(root).unwrap();
        let bases = [al0.clone(), ah0.clone(), bl0.clone(), bh0.clone()];
        for i in 0..4 {
            let f = |p: &Array2<f64>| {
                let mut b = bases.clone();
                b[i] = p.clone();
                let (t, r, _) = build(&b[0], &b[1], &b[2], &b[3]);
                t.scalar(r)
            };
            assert_close(g.param(vs[i]), &numeric_grad(&bases[i], 1e-6, &f));
        }
    }

    #[test]
    fn crisp_rhs_fast_path_matches_general_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let al0 = rand_mat(&mut rng, 4, 5, -1.0, 1.0);
        let mut ah0 = al0.mapv(|v| v + 0.25);
        ah0.row_mut(1).assign(&al0.row(1));
        let mut b0 = rand_mat(&mut rng, 5, 3, -1.0, 1.0);
        b0[[2, 1]] = 0.0;
        let w = rand_mat(&mut rng, 4, 3, -1.0, 1.0);
        for bound in [Bound::Lower, Bound::Upper] {
            let mut t = Tape::new();
            let (al, ah, b) = (t.param(al0.clone()), t.param(ah0.clone()), t.param(b0.clone()));
            let b_copy = t.param(b0.clone());
            let fast = t.interval_matmul(bound, al, ah, b, b);
            let general = t.interval_matmul(bound, al, ah, b, b_copy);
            for (x, y) in t.value(fast).iter().zip(t.value(general).iter()) {
                assert!((x - y).abs() < 1e-12);
            }
            let wv = t.constant(w.clone());
            let lf = t.hadamard(fast, wv);
            let lf = t.sum(lf);
            let lg = t.hadamard(general, wv);
            let lg = t.sum(lg);
            let (gf, gg) = (t.backward(lf).unwrap(), t.backward(lg).unwrap());
            for (x, y) in gf.param(al).iter().zip(gg.param(al).iter()) {
                assert!((x - y).abs() < 1e-12);
            }
            for (x, y) in gf.param(ah).iter().zip(gg.param(ah).iter()) {
                assert!((x - y).abs() < 1e-12);
            }
            let combined = gg.param(b) + gg.param(b_copy);
            for (x, y) in gf.param(b).iter().zip(combined.iter()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradient_is_linear_in_the_root() {
        let mut t = Tape::new();
        let x = t.param(array![[0.4, -1.3], [2.0, 0.1]]);
        let a = t.tanh(x);
        let la = t.sum(a);
        let b = t.square(x);
        let lb = t.mean(b);
        let both = t.add(la, lb);
        let (ga, gb, gs) = (t.backward(la).unwrap(), t.backward(lb).unwrap(), t.backward(both).unwrap());
        let sum = ga.param(x) + gb.param(x);
        for (s, w) in sum.iter().zip(gs.param(x).iter()) {
            assert!((s - w).abs() < 1e-14);
        }
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t = Tape::new();
        let c = t.constant(array![[2.0]]);
        let x = t.param(array![[3.0]]);
        let y = t.hadamard(c, x);
        let g = t.backward(y).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.param(x)[[0, 0]], 2.0);
    }
}
