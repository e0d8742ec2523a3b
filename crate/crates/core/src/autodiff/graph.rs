//! Tape-based reverse-mode differentiation over rank-2 arrays.
//!
//! Nodes are evaluated eagerly as they are recorded, so a graph built for one
//! input doubles as the forward pass. [`Graph::evaluate`] replays the recorded
//! operations against substituted input values without touching the tape.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use super::array::{gemm, gemm_strided};
use super::{AdError, Array};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Index list shared between a node and its replays.
pub type Indices = Arc<[usize]>;

#[derive(Clone, Debug)]
pub enum Op {
    Input(String),
    Constant,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    MatMul(Var, Var),
    Sum(Var),
    Mean(Var),
    /// `[m, n] -> [1, n]`
    SumRows(Var),
    /// `[m, n] -> [m, 1]`
    SumCols(Var),
    /// `[1, n] -> [m, n]`
    BroadcastRows(Var, usize),
    /// `[m, 1] -> [m, n]`
    BroadcastCols(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Indices),
    ScatterAddRows(Var, Indices, usize),
    SelectCols(Var, Indices),
    Reshape(Var, usize, usize),
    Transpose(Var),
    Scale(Var, f64),
    AddScalar(Var, f64),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Ln(Var),
    Softplus(Var),
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Input(_) => "input",
            Op::Constant => "constant",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::MatMul(..) => "matmul",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::SumRows(_) => "sum_rows",
            Op::SumCols(_) => "sum_cols",
            Op::BroadcastRows(..) => "broadcast_rows",
            Op::BroadcastCols(..) => "broadcast_cols",
            Op::ConcatCols(_) => "concat_cols",
            Op::ConcatRows(_) => "concat_rows",
            Op::GatherRows(..) => "gather_rows",
            Op::ScatterAddRows(..) => "scatter_add_rows",
            Op::SelectCols(..) => "select_cols",
            Op::Reshape(..) => "reshape",
            Op::Transpose(_) => "transpose",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Relu(_) => "relu",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::Exp(_) => "exp",
            Op::Ln(_) => "ln",
            Op::Softplus(_) => "softplus",
        }
    }

    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Input(_) | Op::Constant => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) | Op::MatMul(a, b) => {
                vec![*a, *b]
            }
            Op::ConcatCols(vs) | Op::ConcatRows(vs) => vs.clone(),
            Op::Sum(a)
            | Op::Mean(a)
            | Op::SumRows(a)
            | Op::SumCols(a)
            | Op::BroadcastRows(a, _)
            | Op::BroadcastCols(a, _)
            | Op::GatherRows(a, _)
            | Op::ScatterAddRows(a, _, _)
            | Op::SelectCols(a, _)
            | Op::Reshape(a, _, _)
            | Op::Transpose(a)
            | Op::Scale(a, _)
            | Op::AddScalar(a, _)
            | Op::Relu(a)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Exp(a)
            | Op::Ln(a)
            | Op::Softplus(a) => vec![*a],
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Array,
}

/// A recorded differentiable computation.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    inputs: HashMap<String, Var>,
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
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

fn require_rank2(op: &'static str, a: &Array) -> Result<(), AdError> {
    if a.rank() == 2 {
        Ok(())
    } else {
        Err(AdError::ShapeMismatch {
            op,
            left: a.shape().to_vec(),
            right: vec![0, 0],
        })
    }
}

fn same_shape(op: &'static str, a: &Array, b: &Array) -> Result<(), AdError> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(AdError::ShapeMismatch {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        })
    }
}

fn check_indices(op: &'static str, idx: &[usize], bound: usize) -> Result<(), AdError> {
    match idx.iter().find(|&&i| i >= bound) {
        Some(&index) => Err(AdError::IndexOutOfRange { op, index, bound }),
        None => Ok(()),
    }
}

/// Computes the value of a non-leaf op from its parents' values.
fn forward<'a>(op: &Op, val: impl Fn(Var) -> &'a Array) -> Result<Array, AdError> {
    let out = match op {
        Op::Input(_) | Op::Constant => unreachable!("leaf nodes carry their own values"),
        Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => {
            let (x, y) = (val(*a), val(*b));
            same_shape(op.name(), x, y)?;
            match op {
                Op::Add(..) => x.zip_map(y, |p, q| p + q),
                Op::Sub(..) => x.zip_map(y, |p, q| p - q),
                Op::Mul(..) => x.zip_map(y, |p, q| p * q),
                _ => {
                    if y.data().contains(&0.0) {
                        return Err(AdError::DivisionByZero);
                    }
                    x.zip_map(y, |p, q| p / q)
                }
            }
        }
        Op::MatMul(a, b) => {
            let (x, y) = (val(*a), val(*b));
            require_rank2("matmul", x)?;
            require_rank2("matmul", y)?;
            if x.cols() != y.rows() {
                return Err(AdError::ShapeMismatch {
                    op: "matmul",
                    left: x.shape().to_vec(),
                    right: y.shape().to_vec(),
                });
            }
            let (m, k, n) = (x.rows(), x.cols(), y.cols());
            let mut out = vec![0.0; m * n];
            gemm(x.data(), y.data(), m, k, n, &mut out);
            Array::matrix(m, n, out)
        }
        Op::Sum(a) => Array::scalar(val(*a).data().iter().sum()),
        Op::Mean(a) => {
            let x = val(*a);
            Array::scalar(x.data().iter().sum::<f64>() / x.len() as f64)
        }
        Op::SumRows(a) => {
            let x = val(*a);
            require_rank2("sum_rows", x)?;
            let mut out = vec![0.0; x.cols()];
            for r in 0..x.rows() {
                for (o, v) in out.iter_mut().zip(x.row(r)) {
                    *o += v;
                }
            }
            Array::matrix(1, x.cols(), out)
        }
        Op::SumCols(a) => {
            let x = val(*a);
            require_rank2("sum_cols", x)?;
            let out = (0..x.rows()).map(|r| x.row(r).iter().sum()).collect();
            Array::matrix(x.rows(), 1, out)
        }
        Op::BroadcastRows(a, m) => {
            let x = val(*a);
            require_rank2("broadcast_rows", x)?;
            if x.rows() != 1 || *m == 0 {
                return Err(AdError::ShapeMismatch {
                    op: "broadcast_rows",
                    left: x.shape().to_vec(),
                    right: vec![*m, x.cols()],
                });
            }
            let mut out = Vec::with_capacity(m * x.cols());
            for _ in 0..*m {
                out.extend_from_slice(x.data());
            }
            Array::matrix(*m, x.cols(), out)
        }
        Op::BroadcastCols(a, n) => {
            let x = val(*a);
            require_rank2("broadcast_cols", x)?;
            if x.cols() != 1 || *n == 0 {
                return Err(AdError::ShapeMismatch {
                    op: "broadcast_cols",
                    left: x.shape().to_vec(),
                    right: vec![x.rows(), *n],
                });
            }
            let out = x
                .data()
                .iter()
                .flat_map(|&v| std::iter::repeat_n(v, *n))
                .collect();
            Array::matrix(x.rows(), *n, out)
        }
        Op::ConcatCols(vs) => {
            let parts: Vec<&Array> = vs.iter().map(|v| val(*v)).collect();
            let rows = parts[0].rows();
            for p in &parts {
                require_rank2("concat_cols", p)?;
                if p.rows() != rows {
                    return Err(AdError::ShapeMismatch {
                        op: "concat_cols",
                        left: parts[0].shape().to_vec(),
                        right: p.shape().to_vec(),
                    });
                }
            }
            let cols: usize = parts.iter().map(|p| p.cols()).sum();
            let mut out = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                for p in &parts {
                    out.extend_from_slice(p.row(r));
                }
            }
            Array::matrix(rows, cols, out)
        }
        Op::ConcatRows(vs) => {
            let parts: Vec<&Array> = vs.iter().map(|v| val(*v)).collect();
            let cols = parts[0].cols();
            for p in &parts {
                require_rank2("concat_rows", p)?;
                if p.cols() != cols {
                    return Err(AdError::ShapeMismatch {
                        op: "concat_rows",
                        left: parts[0].shape().to_vec(),
                        right: p.shape().to_vec(),
                    });
                }
            }
            let rows: usize = parts.iter().map(|p| p.rows()).sum();
            let data = parts
                .iter()
                .flat_map(|p| p.data().iter().copied())
                .collect();
            Array::matrix(rows, cols, data)
        }
        Op::GatherRows(a, idx) => {
            let x = val(*a);
            require_rank2("gather_rows", x)?;
            check_indices("gather_rows", idx, x.rows())?;
            if idx.is_empty() {
                return Err(AdError::InvalidShape(vec![0, x.cols()]));
            }
            let mut out = Vec::with_capacity(idx.len() * x.cols());
            for &i in idx.iter() {
                out.extend_from_slice(x.row(i));
            }
            Array::matrix(idx.len(), x.cols(), out)
        }
        Op::ScatterAddRows(a, idx, m) => {
            let x = val(*a);
            require_rank2("scatter_add_rows", x)?;
            if idx.len() != x.rows() {
                return Err(AdError::ShapeMismatch {
                    op: "scatter_add_rows",
                    left: x.shape().to_vec(),
                    right: vec![idx.len()],
                });
            }
            check_indices("scatter_add_rows", idx, *m)?;
            let c = x.cols();
            let mut out = vec![0.0; m * c];
            for (r, &i) in idx.iter().enumerate() {
                for (o, v) in out[i * c..(i + 1) * c].iter_mut().zip(x.row(r)) {
                    *o += v;
                }
            }
            Array::matrix(*m, c, out)
        }
        Op::SelectCols(a, cols) => {
            let x = val(*a);
            require_rank2("select_cols", x)?;
            check_indices("select_cols", cols, x.cols())?;
            let mut out = Vec::with_capacity(x.rows() * cols.len());
            for r in 0..x.rows() {
                let row = x.row(r);
                out.extend(cols.iter().map(|&c| row[c]));
            }
            Array::matrix(x.rows(), cols.len(), out)
        }
        Op::Reshape(a, r, c) => val(*a).clone().reshaped(&[*r, *c])?,
        Op::Transpose(a) => {
            let x = val(*a);
            require_rank2("transpose", x)?;
            x.transpose()
        }
        Op::Scale(a, s) => val(*a).map(|v| v * s),
        Op::AddScalar(a, s) => val(*a).map(|v| v + s),
        Op::Relu(a) => val(*a).map(|v| v.max(0.0)),
        Op::Tanh(a) => val(*a).map(f64::tanh),
        Op::Sigmoid(a) => val(*a).map(sigmoid),
        Op::Exp(a) => val(*a).map(f64::exp),
        Op::Ln(a) => {
            let x = val(*a);
            if x.data().iter().any(|&v| v <= 0.0) {
                return Err(AdError::NonPositiveLog);
            }
            x.map(f64::ln)
        }
        Op::Softplus(a) => val(*a).map(softplus),
    };
    Ok(out)
}

fn accumulate(adj: &mut [Option<Array>], v: Var, contribution: Array) {
    match &mut adj[v.0] {
        Some(existing) => existing.add_assign(&contribution),
        slot @ None => *slot = Some(contribution),
    }
}

/// Pushes the adjoint `g` of a node back to its parents.
fn backward_op(op: &Op, value: &Array, g: &Array, values: &[&Array], adj: &mut [Option<Array>]) {
    let get = |v: Var| values[v.0];
    match op {
        Op::Input(_) | Op::Constant => {}
        Op::Add(a, b) => {
            accumulate(adj, *a, g.clone());
            accumulate(adj, *b, g.clone());
        }
        Op::Sub(a, b) => {
            accumulate(adj, *a, g.clone());
            accumulate(adj, *b, g.map(|v| -v));
        }
        Op::Mul(a, b) => {
            let (x, y) = (get(*a), get(*b));
            accumulate(adj, *a, g.zip_map(y, |p, q| p * q));
            accumulate(adj, *b, g.zip_map(x, |p, q| p * q));
        }
        Op::Div(a, b) => {
            let y = get(*b);
            accumulate(adj, *a, g.zip_map(y, |p, q| p / q));
            // d(x/y)/dy = -(x/y)/y
            let gy = g.zip_map(value, |p, q| p * q).zip_map(y, |p, q| -p / q);
            accumulate(adj, *b, gy);
        }
        Op::MatMul(a, b) => {
            let (x, y) = (get(*a), get(*b));
            let (m, k, n) = (x.rows(), x.cols(), y.cols());
            // dA = G * B^T
            let mut da = vec![0.0; m * k];
            gemm_strided(
                g.data(),
                (n as isize, 1),
                y.data(),
                (1, n as isize),
                m,
                n,
                k,
                &mut da,
                0.0,
            );
            accumulate(adj, *a, Array::matrix(m, k, da));
            // dB = A^T * G
            let mut db = vec![0.0; k * n];
            gemm_strided(
                x.data(),
                (1, k as isize),
                g.data(),
                (n as isize, 1),
                k,
                m,
                n,
                &mut db,
                0.0,
            );
            accumulate(adj, *b, Array::matrix(k, n, db));
        }
        Op::Sum(a) => {
            let x = get(*a);
            accumulate(adj, *a, Array::full(x.shape(), g.data()[0]));
        }
        Op::Mean(a) => {
            let x = get(*a);
            accumulate(
                adj,
                *a,
                Array::full(x.shape(), g.data()[0] / x.len() as f64),
            );
        }
        Op::SumRows(a) => {
            let x = get(*a);
            let mut out = Vec::with_capacity(x.len());
            for _ in 0..x.rows() {
                out.extend_from_slice(g.data());
            }
            accumulate(adj, *a, Array::matrix(x.rows(), x.cols(), out));
        }
        Op::SumCols(a) => {
            let x = get(*a);
            let out = g
                .data()
                .iter()
                .flat_map(|&v| std::iter::repeat_n(v, x.cols()))
                .collect();
            accumulate(adj, *a, Array::matrix(x.rows(), x.cols(), out));
        }
        Op::BroadcastRows(a, _) => {
            let mut out = vec![0.0; g.cols()];
            for r in 0..g.rows() {
                for (o, v) in out.iter_mut().zip(g.row(r)) {
                    *o += v;
                }
            }
            accumulate(adj, *a, Array::matrix(1, g.cols(), out));
        }
        Op::BroadcastCols(a, _) => {
            let out = (0..g.rows()).map(|r| g.row(r).iter().sum()).collect();
            accumulate(adj, *a, Array::matrix(g.rows(), 1, out));
        }
        Op::ConcatCols(vs) => {
            let mut offset = 0;
            for v in vs {
                let c = get(*v).cols();
                let mut out = Vec::with_capacity(g.rows() * c);
                for r in 0..g.rows() {
                    out.extend_from_slice(&g.row(r)[offset..offset + c]);
                }
                accumulate(adj, *v, Array::matrix(g.rows(), c, out));
                offset += c;
            }
        }
        Op::ConcatRows(vs) => {
            let mut offset = 0;
            let c = g.cols();
            for v in vs {
                let r = get(*v).rows();
                let out = g.data()[offset * c..(offset + r) * c].to_vec();
                accumulate(adj, *v, Array::matrix(r, c, out));
                offset += r;
            }
        }
        Op::GatherRows(a, idx) => {
            let x = get(*a);
            let c = x.cols();
            let mut out = vec![0.0; x.len()];
            for (r, &i) in idx.iter().enumerate() {
                for (o, v) in out[i * c..(i + 1) * c].iter_mut().zip(g.row(r)) {
                    *o += v;
                }
            }
            accumulate(adj, *a, Array::matrix(x.rows(), c, out));
        }
        Op::ScatterAddRows(a, idx, _) => {
            let c = g.cols();
            let mut out = Vec::with_capacity(idx.len() * c);
            for &i in idx.iter() {
                out.extend_from_slice(g.row(i));
            }
            accumulate(adj, *a, Array::matrix(idx.len(), c, out));
        }
        Op::SelectCols(a, cols) => {
            let x = get(*a);
            let xc = x.cols();
            let mut out = vec![0.0; x.len()];
            for r in 0..x.rows() {
                for (k, &c) in cols.iter().enumerate() {
                    out[r * xc + c] += g.get(r, k);
                }
            }
            accumulate(adj, *a, Array::matrix(x.rows(), xc, out));
        }
        Op::Reshape(a, _, _) => {
            let x = get(*a);
            let back = g.clone().reshaped(x.shape()).expect("reshape adjoint");
            accumulate(adj, *a, back);
        }
        Op::Transpose(a) => accumulate(adj, *a, g.transpose()),
        Op::Scale(a, s) => accumulate(adj, *a, g.map(|v| v * s)),
        Op::AddScalar(a, _) => accumulate(adj, *a, g.clone()),
        Op::Relu(a) => {
            let x = get(*a);
            accumulate(adj, *a, g.zip_map(x, |p, q| if q > 0.0 { p } else { 0.0 }));
        }
        Op::Tanh(a) => accumulate(adj, *a, g.zip_map(value, |p, y| p * (1.0 - y * y))),
        Op::Sigmoid(a) => accumulate(adj, *a, g.zip_map(value, |p, y| p * y * (1.0 - y))),
        Op::Exp(a) => accumulate(adj, *a, g.zip_map(value, |p, y| p * y)),
        Op::Ln(a) => {
            let x = get(*a);
            accumulate(adj, *a, g.zip_map(x, |p, q| p / q));
        }
        Op::Softplus(a) => {
            let x = get(*a);
            accumulate(adj, *a, g.zip_map(x, |p, q| p * sigmoid(q)));
        }
    }
}

/// Adjoints produced by a backward sweep.
#[derive(Clone, Debug)]
pub struct Gradients {
    adjoints: Vec<Option<Array>>,
    inputs: Vec<(String, Var)>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Adjoint of a leaf node, or of the seed. Interior adjoints are released during the sweep.
    pub fn wrt(&self, v: Var) -> Option<&Array> {
        self.adjoints.get(v.0).and_then(Option::as_ref)
    }

    /// Gradients of every named input; inputs the seed does not depend on get zeros.
    pub fn named(&self) -> BTreeMap<String, Array> {
        self.inputs
            .iter()
            .map(|(name, v)| {
                let g = self.adjoints[v.0]
                    .clone()
                    .unwrap_or_else(|| Array::zeros(&self.shapes[v.0]));
                (name.clone(), g)
            })
            .collect()
    }

    pub fn into_named(mut self) -> BTreeMap<String, Array> {
        let mut out = BTreeMap::new();
        for (name, v) in std::mem::take(&mut self.inputs) {
            let g = self.adjoints[v.0]
                .take()
                .unwrap_or_else(|| Array::zeros(&self.shapes[v.0]));
            out.insert(name, g);
        }
        out
    }
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

    pub fn value(&self, v: Var) -> &Array {
        &self.nodes[v.0].value
    }

    pub fn op(&self, v: Var) -> &Op {
        &self.nodes[v.0].op
    }

    /// Parent nodes of `v`; always earlier in the tape.
    pub fn parents(&self, v: Var) -> Vec<Var> {
        self.nodes[v.0].op.parents()
    }

    pub fn input_var(&self, name: &str) -> Option<Var> {
        self.inputs.get(name).copied()
    }

    fn push_leaf(&mut self, op: Op, value: Array) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op) -> Result<Var, AdError> {
        let value = forward(&op, |v| &self.nodes[v.0].value)?;
        Ok(self.push_leaf(op, value))
    }

    /// Registers a named, differentiable input.
    pub fn input(&mut self, name: impl Into<String>, value: Array) -> Result<Var, AdError> {
        let name = name.into();
        if self.inputs.contains_key(&name) {
            return Err(AdError::DuplicateInput(name));
        }
        let v = self.push_leaf(Op::Input(name.clone()), value);
        self.inputs.insert(name, v);
        Ok(v)
    }

    pub fn constant(&mut self, value: Array) -> Var {
        self.push_leaf(Op::Constant, value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.push(Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.push(Op::Div(a, b))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.push(Op::MatMul(a, b))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, AdError> {
        self.push(Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, AdError> {
        self.push(Op::Mean(a))
    }

    pub fn sum_rows(&mut self, a: Var) -> Result<Var, AdError> {
        self.push(Op::SumRows(a))
    }

    pub fn sum_cols(&mut self, a: Var) -> Result<Var, AdError> {
        self.push(Op::SumCols(a))
    }

    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Result<Var, AdError> {
        self.push(Op::BroadcastRows(a, rows))
    }

    pub fn broadcast_cols(&mut self, a: Var, cols: usize) -> Result<Var, AdError> {
        self.push(Op::BroadcastCols(a, cols))
    }

    /// Adds a `[1, n]` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, AdError> {
        let rows = self.value(a).rows();
        let b = self.broadcast_rows(row, rows)?;
        self.add(a, b)
    }

    /// Multiplies every column of `a` by the `[m, 1]` column `col`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var, AdError> {
        let cols = self.value(a).cols();
        let b = self.broadcast_cols(col, cols)?;
        self.mul(a, b)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, AdError> {
        if parts.is_empty() {
            return Err(AdError::InvalidShape(vec![]));
        }
        self.push(Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, AdError> {
        if parts.is_empty() {
            return Err(AdError::InvalidShape(vec![]));
        }
        self.push(Op::ConcatRows(parts.to_vec()))
    }

    pub fn gather_rows(&mut self, a: Var, idx: Indices) -> Result<Var, AdError> {
        self.push(Op::GatherRows(a, idx))
    }

    pub fn scatter_add_rows(&mut self, a: Var, idx: Indices, rows: usize) -> Result<Var, AdError> {
        self.push(Op::ScatterAddRows(a, idx, rows))
    }

    pub fn select_cols(&mut self, a: Var, cols: Indices) -> Result<Var, AdError> {
        self.push(Op::SelectCols(a, cols))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var, AdError> {
        self.push(Op::Reshape(a, rows, cols))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, AdError> {
        self.push(Op::Transpose(a))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var, AdError> {
        self.push(Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var, AdError> {
        self.push(Op::AddScalar(a, s))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, AdError> {
        self.push(Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, AdError> {
        self.push(Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, AdError> {
        self.push(Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, AdError> {
        self.push(Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Result<Var, AdError> {
        self.push(Op::Ln(a))
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var, AdError> {
        self.push(Op::Softplus(a))
    }

    /// Replays the tape with substituted input values and returns the requested node values.
    ///
    /// Inputs not named in `inputs` keep their recorded values.
    pub fn evaluate(
        &self,
        inputs: &HashMap<String, Array>,
        outputs: &[Var],
    ) -> Result<Vec<Array>, AdError> {
        let values = self.replay(inputs)?;
        Ok(outputs.iter().map(|v| values[v.0].clone()).collect())
    }

    fn replay(&self, inputs: &HashMap<String, Array>) -> Result<Vec<Array>, AdError> {
        if let Some(unknown) = inputs.keys().find(|k| !self.inputs.contains_key(*k)) {
            return Err(AdError::UnknownInput(unknown.clone()));
        }
        let mut values: Vec<Array> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let value = match &node.op {
                Op::Input(name) => match inputs.get(name) {
                    Some(v) => v.clone(),
                    None => node.value.clone(),
                },
                Op::Constant => node.value.clone(),
                op => forward(op, |v| &values[v.0])?,
            };
            values.push(value);
        }
        Ok(values)
    }

    /// Gradients of a scalar node with respect to every named input, after substituting `inputs`.
    pub fn gradients(
        &self,
        inputs: &HashMap<String, Array>,
        seed: Var,
    ) -> Result<BTreeMap<String, Array>, AdError> {
        let values = self.replay(inputs)?;
        Ok(self.sweep(&values, seed)?.into_named())
    }

    /// Reverse sweep over the recorded values.
    pub fn backward(&self, seed: Var) -> Result<Gradients, AdError> {
        let values: Vec<&Array> = self.nodes.iter().map(|n| &n.value).collect();
        self.sweep_refs(&values, seed)
    }

    fn sweep(&self, values: &[Array], seed: Var) -> Result<Gradients, AdError> {
        let refs: Vec<&Array> = values.iter().collect();
        self.sweep_refs(&refs, seed)
    }

    fn sweep_refs(&self, values: &[&Array], seed: Var) -> Result<Gradients, AdError> {
        let seed_value = values[seed.0];
        if seed_value.len() != 1 {
            return Err(AdError::NonScalarSeed(seed_value.shape().to_vec()));
        }
        let mut adj: Vec<Option<Array>> = vec![None; self.nodes.len()];
        adj[seed.0] = Some(Array::full(seed_value.shape(), 1.0));
        for idx in (0..=seed.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Input(_) | Op::Constant) {
                continue;
            }
            let Some(g) = adj[idx].take() else { continue };
            backward_op(&node.op, values[idx], &g, values, &mut adj);
            if idx == seed.0 {
                adj[idx] = Some(g);
            }
        }
        let shapes = self
            .nodes
            .iter()
            .map(|n| n.value.shape().to_vec())
            .collect();
        let mut inputs: Vec<(String, Var)> =
            self.inputs.iter().map(|(k, v)| (k.clone(), *v)).collect();
        inputs.sort();
        Ok(Gradients {
            adjoints: adj,
            inputs,
            shapes,
        })
    }
}
