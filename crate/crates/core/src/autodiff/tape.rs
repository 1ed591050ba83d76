//! Wengert tape with a taped backward pass.
//!
//! Every primitive records its value eagerly. [`Tape::gradients`] walks the
//! recorded nodes in reverse and expresses each adjoint with the same
//! primitives, appending them to the tape, so the gradient nodes can be
//! differentiated again. Hessian-vector products and mixed second partials
//! are gradients of inner products with those nodes.

use std::collections::HashSet;

use super::params::ParamVector;
use super::tensor::numel;
use super::{AutodiffError, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Constant,
    /// Gradient value recorded without history; differentiating through it
    /// is an error. `origin` holds the nodes the value was derived from.
    Detached { origin: Vec<Var> },
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    /// `[m, n] + [n]`, bias broadcast over rows.
    AddBias(Var, Var),
    /// `[m, n] -> [n]`
    SumRows(Var),
    /// `[n] -> [m, n]`
    BroadcastRows(Var, usize),
    Sum(Var),
    Mean(Var),
    /// scalar -> shape
    Expand(Var, Vec<usize>),
    Relu(Var),
    /// Indicator of `x > 0`; derivative zero everywhere.
    Step(Var),
    Square(Var),
    Log(Var),
    Exp(Var),
    Sigmoid(Var),
    /// `ln(1 + e^x)`, evaluated stably.
    Softplus(Var),
    /// Concatenate along axis 0.
    Concat(Vec<Var>),
    /// Axis-0 rows `[start, end)`.
    Slice(Var, usize, usize),
    /// Axis-0 zero padding: input rows placed at `offset` in `total` rows.
    Pad(Var, usize, usize),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Constant => "constant",
            Op::Detached { .. } => "detached",
            Op::MatMul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Neg(_) => "neg",
            Op::Scale(..) => "scale",
            Op::AddBias(..) => "add_bias",
            Op::SumRows(_) => "sum_rows",
            Op::BroadcastRows(..) => "broadcast_rows",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Expand(..) => "expand",
            Op::Relu(_) => "relu",
            Op::Step(_) => "step",
            Op::Square(_) => "square",
            Op::Log(_) => "log",
            Op::Exp(_) => "exp",
            Op::Sigmoid(_) => "sigmoid",
            Op::Softplus(_) => "softplus",
            Op::Concat(_) => "concat",
            Op::Slice(..) => "slice",
            Op::Pad(..) => "pad",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf | Op::Constant => Vec::new(),
            Op::Detached { origin } => origin.clone(),
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Div(a, b)
            | Op::AddBias(a, b) => vec![*a, *b],
            Op::Transpose(a)
            | Op::Neg(a)
            | Op::Scale(a, _)
            | Op::SumRows(a)
            | Op::BroadcastRows(a, _)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Expand(a, _)
            | Op::Relu(a)
            | Op::Step(a)
            | Op::Square(a)
            | Op::Log(a)
            | Op::Exp(a)
            | Op::Sigmoid(a)
            | Op::Softplus(a)
            | Op::Slice(a, ..)
            | Op::Pad(a, ..) => vec![*a],
            Op::Concat(parts) => parts.clone(),
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Recording of primitive operations in topological order.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    node_limit: Option<usize>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn shape_err(node: usize, op: &'static str, detail: String) -> AutodiffError {
    AutodiffError::Shape {
        node: Some(node),
        op,
        detail,
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Fail any recording that would grow the tape past `limit` nodes.
    pub fn with_node_limit(limit: usize) -> Self {
        Self {
            nodes: Vec::new(),
            node_limit: Some(limit),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drop every node recorded at or after position `len`.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    // --- leaves ---

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_unchecked(Op::Leaf, value)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_unchecked(Op::Constant, value)
    }

    /// One leaf per layout block, in layout order.
    pub fn leaves(&mut self, params: &ParamVector) -> Vec<Var> {
        params
            .block_tensors()
            .into_iter()
            .map(|t| self.leaf(t))
            .collect()
    }

    /// One constant per layout block, in layout order.
    pub fn constants(&mut self, params: &ParamVector) -> Vec<Var> {
        params
            .block_tensors()
            .into_iter()
            .map(|t| self.constant(t))
            .collect()
    }

    /// Flatten per-block tensors back into `like`'s layout.
    pub fn collect(&self, like: &ParamVector, vars: &[Var]) -> Result<ParamVector, AutodiffError> {
        let mut values = Vec::with_capacity(like.len());
        for (entry, &v) in like.layout().entries().iter().zip(vars) {
            let t = self.value(v);
            if t.len() != entry.len() {
                return Err(AutodiffError::Layout(format!(
                    "block `{}` expects {} values, node {} holds {}",
                    entry.name,
                    entry.len(),
                    v.0,
                    t.len()
                )));
            }
            values.extend_from_slice(t.data());
        }
        like.with_values(values)
    }

    fn push_unchecked(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op) -> Result<Var, AutodiffError> {
        let id = self.nodes.len();
        if let Some(limit) = self.node_limit {
            if id >= limit {
                return Err(AutodiffError::Budget { limit });
            }
        }
        let value = self.evaluate(id, &op)?;
        if let Some(index) = value.first_non_finite() {
            return Err(AutodiffError::NonFinite {
                node: id,
                op: op.name(),
                index,
            });
        }
        Ok(self.push_unchecked(op, value))
    }

    fn evaluate(&self, id: usize, op: &Op) -> Result<Tensor, AutodiffError> {
        let v = |x: &Var| &self.nodes[x.0].value;
        let name = op.name();
        let same = |a: &Var, b: &Var| -> Result<(), AutodiffError> {
            if v(a).shape() != v(b).shape() {
                return Err(shape_err(
                    id,
                    name,
                    format!("operands have shapes {:?} and {:?}", v(a).shape(), v(b).shape()),
                ));
            }
            Ok(())
        };
        let matrix = |a: &Var| -> Result<(), AutodiffError> {
            if v(a).shape().len() != 2 {
                return Err(shape_err(
                    id,
                    name,
                    format!("expected a matrix, got shape {:?}", v(a).shape()),
                ));
            }
            Ok(())
        };
        Ok(match op {
            Op::Leaf | Op::Constant | Op::Detached { .. } => {
                unreachable!("leaf values are supplied, not evaluated")
            }
            Op::MatMul(a, b) => {
                matrix(a)?;
                matrix(b)?;
                if v(a).shape()[1] != v(b).shape()[0] {
                    return Err(shape_err(
                        id,
                        name,
                        format!("cannot multiply {:?} by {:?}", v(a).shape(), v(b).shape()),
                    ));
                }
                v(a).matmul(v(b))
            }
            Op::Transpose(a) => {
                matrix(a)?;
                v(a).transpose()
            }
            Op::Add(a, b) => {
                same(a, b)?;
                v(a).zip(v(b), |x, y| x + y)
            }
            Op::Sub(a, b) => {
                same(a, b)?;
                v(a).zip(v(b), |x, y| x - y)
            }
            Op::Mul(a, b) => {
                same(a, b)?;
                v(a).zip(v(b), |x, y| x * y)
            }
            Op::Div(a, b) => {
                same(a, b)?;
                v(a).zip(v(b), |x, y| x / y)
            }
            Op::Neg(a) => v(a).map(|x| -x),
            Op::Scale(a, c) => {
                let c = *c;
                v(a).map(|x| c * x)
            }
            Op::AddBias(a, b) => {
                matrix(a)?;
                let n = v(a).shape()[1];
                if v(b).shape() != [n] {
                    return Err(shape_err(
                        id,
                        name,
                        format!("bias shape {:?} does not match {} columns", v(b).shape(), n),
                    ));
                }
                let bias = v(b).data();
                let mut out = v(a).clone();
                for row in out.data_mut().chunks_mut(n.max(1)) {
                    for (o, &bb) in row.iter_mut().zip(bias) {
                        *o += bb;
                    }
                }
                out
            }
            Op::SumRows(a) => {
                matrix(a)?;
                let n = v(a).shape()[1];
                let mut out = vec![0.0; n];
                for row in v(a).data().chunks(n.max(1)) {
                    for (o, &x) in out.iter_mut().zip(row) {
                        *o += x;
                    }
                }
                Tensor::new(vec![n], out)?
            }
            Op::BroadcastRows(a, m) => {
                if v(a).shape().len() != 1 {
                    return Err(shape_err(
                        id,
                        name,
                        format!("expected a vector, got {:?}", v(a).shape()),
                    ));
                }
                let n = v(a).len();
                let mut out = Vec::with_capacity(m * n);
                for _ in 0..*m {
                    out.extend_from_slice(v(a).data());
                }
                Tensor::new(vec![*m, n], out)?
            }
            Op::Sum(a) => Tensor::scalar(v(a).data().iter().sum()),
            Op::Mean(a) => {
                let t = v(a);
                if t.is_empty() {
                    return Err(shape_err(id, name, "mean of an empty tensor".into()));
                }
                Tensor::scalar(t.data().iter().sum::<f64>() / t.len() as f64)
            }
            Op::Expand(a, shape) => {
                if !v(a).shape().is_empty() {
                    return Err(shape_err(
                        id,
                        name,
                        format!("only scalars expand, got {:?}", v(a).shape()),
                    ));
                }
                Tensor::full(shape, v(a).data()[0])
            }
            Op::Relu(a) => v(a).map(|x| if x > 0.0 { x } else { 0.0 }),
            Op::Step(a) => v(a).map(|x| if x > 0.0 { 1.0 } else { 0.0 }),
            Op::Square(a) => v(a).map(|x| x * x),
            Op::Log(a) => v(a).map(f64::ln),
            Op::Exp(a) => v(a).map(f64::exp),
            Op::Sigmoid(a) => v(a).map(sigmoid),
            Op::Softplus(a) => v(a).map(softplus),
            Op::Concat(parts) => {
                let first = parts
                    .first()
                    .ok_or_else(|| shape_err(id, name, "nothing to concatenate".into()))?;
                let tail = v(first).shape().get(1..).unwrap_or(&[]).to_vec();
                let mut rows = 0;
                let mut data = Vec::new();
                for p in parts {
                    let s = v(p).shape();
                    if s.is_empty() || s[1..] != tail[..] {
                        return Err(shape_err(
                            id,
                            name,
                            format!("part shape {:?} incompatible with trailing dims {:?}", s, tail),
                        ));
                    }
                    rows += s[0];
                    data.extend_from_slice(v(p).data());
                }
                let mut shape = vec![rows];
                shape.extend(tail);
                Tensor::new(shape, data)?
            }
            Op::Slice(a, start, end) => {
                let t = v(a);
                if t.shape().is_empty() || start > end || *end > t.shape()[0] {
                    return Err(shape_err(
                        id,
                        name,
                        format!("rows {start}..{end} out of range for {:?}", t.shape()),
                    ));
                }
                let w = t.row_width();
                let mut shape = t.shape().to_vec();
                shape[0] = end - start;
                Tensor::new(shape, t.data()[start * w..end * w].to_vec())?
            }
            Op::Pad(a, offset, total) => {
                let t = v(a);
                if t.shape().is_empty() || offset + t.shape()[0] > *total {
                    return Err(shape_err(
                        id,
                        name,
                        format!("cannot place {:?} at row {offset} of {total}", t.shape()),
                    ));
                }
                let w = t.row_width();
                let mut shape = t.shape().to_vec();
                shape[0] = *total;
                let mut data = vec![0.0; total * w];
                data[offset * w..offset * w + t.len()].copy_from_slice(t.data());
                Tensor::new(shape, data)?
            }
        })
    }

    // --- primitives ---

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.push(Op::MatMul(a, b))
    }
    pub fn transpose(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.push(Op::Transpose(a))
    }
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.push(Op::Add(a, b))
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.push(Op::Sub(a, b))
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.push(Op::Mul(a, b))
    }
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.push(Op::Div(a, b))
    }
    pub fn neg(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.push(Op::Neg(a))
    }
    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, AutodiffError> {
        self.push(Op::Scale(a, c))
    }
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var, AutodiffError> {
        self.push(Op::AddBias(a, bias))
    }
    pub fn sum_rows(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.push(Op::SumRows(a))
    }
    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Result<Var, AutodiffError> {
        self.push(Op::BroadcastRows(a, rows))
    }
    pub fn sum(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.push(Op::Sum(a))
    }
    pub fn mean(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.push(Op::Mean(a))
    }
    pub fn expand(&mut self, a: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        self.push(Op::Expand(a, shape.to_vec()))
    }
    pub fn relu(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.push(Op::Relu(a))
    }
    pub fn step(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.push(Op::Step(a))
    }
    pub fn square(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.push(Op::Square(a))
    }
    pub fn log(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.push(Op::Log(a))
    }
    pub fn exp(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.push(Op::Exp(a))
    }
    pub fn sigmoid(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.push(Op::Sigmoid(a))
    }
    pub fn softplus(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.push(Op::Softplus(a))
    }
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        self.push(Op::Concat(parts.to_vec()))
    }
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var, AutodiffError> {
        self.push(Op::Slice(a, start, end))
    }
    pub fn pad_rows(&mut self, a: Var, offset: usize, total: usize) -> Result<Var, AutodiffError> {
        self.push(Op::Pad(a, offset, total))
    }

    /// Elementwise logistic loss `ln(1 + exp(-y * s))` for labels in {-1, +1}.
    pub fn logistic_loss(&mut self, scores: Var, labels: Var) -> Result<Var, AutodiffError> {
        let margin = self.mul(labels, scores)?;
        let neg = self.neg(margin)?;
        self.softplus(neg)
    }

    /// `sum(a * b)`
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let p = self.mul(a, b)?;
        self.sum(p)
    }

    // --- replay ---

    /// Re-evaluate every recorded node after rebinding leaf or constant
    /// values. New values must keep the recorded shapes.
    pub fn replay(&mut self, bindings: &[(Var, Tensor)]) -> Result<(), AutodiffError> {
        for (var, value) in bindings {
            let node = self
                .nodes
                .get(var.0)
                .ok_or(AutodiffError::UnknownNode(var.0))?;
            match node.op {
                Op::Leaf | Op::Constant => {}
                _ => {
                    return Err(shape_err(
                        var.0,
                        node.op.name(),
                        "only leaves and constants can be rebound".into(),
                    ))
                }
            }
            if node.value.shape() != value.shape() {
                return Err(shape_err(
                    var.0,
                    node.op.name(),
                    format!(
                        "input signature expects {:?}, got {:?}",
                        node.value.shape(),
                        value.shape()
                    ),
                ));
            }
        }
        for (var, value) in bindings {
            self.nodes[var.0].value = value.clone();
        }
        for id in 0..self.nodes.len() {
            let op = self.nodes[id].op.clone();
            match op {
                Op::Leaf | Op::Constant => continue,
                Op::Detached { .. } => return Err(AutodiffError::NotReentrant { node: id }),
                _ => {}
            }
            let value = self.evaluate(id, &op)?;
            if let Some(index) = value.first_non_finite() {
                return Err(AutodiffError::NonFinite {
                    node: id,
                    op: op.name(),
                    index,
                });
            }
            self.nodes[id].value = value;
        }
        Ok(())
    }

    // --- reverse mode ---

    /// Gradients of scalar `output` with respect to each of `wrt`, recorded
    /// on the tape so they can be differentiated again. Variables `output`
    /// does not depend on get a zero constant.
    pub fn gradients(&mut self, output: Var, wrt: &[Var]) -> Result<Vec<Var>, AutodiffError> {
        let out_len = self.value(output).len();
        if out_len != 1 {
            return Err(AutodiffError::NotScalar {
                node: output.0,
                shape: self.shape(output).to_vec(),
            });
        }
        let n = output.0 + 1;
        let targets: HashSet<usize> = wrt.iter().map(|v| v.0).collect();
        let mut relevant = vec![false; n];
        for i in 0..n {
            relevant[i] = targets.contains(&i)
                || self.nodes[i].op.inputs().iter().any(|x| x.0 < n && relevant[x.0]);
        }

        let mut adjoint: Vec<Option<Var>> = vec![None; n];
        if relevant[output.0] {
            let seed = Tensor::full(self.shape(output), 1.0);
            adjoint[output.0] = Some(self.constant(seed));
        }

        for i in (0..n).rev() {
            let Some(g) = adjoint[i] else { continue };
            if !relevant[i] {
                continue;
            }
            let op = self.nodes[i].op.clone();
            let out = Var(i);
            let need = |x: &Var| relevant[x.0];
            let mut contribs: Vec<(Var, Var)> = Vec::with_capacity(2);
            match &op {
                Op::Leaf | Op::Constant | Op::Step(_) => {}
                Op::Detached { .. } => return Err(AutodiffError::NotReentrant { node: i }),
                Op::MatMul(a, b) => {
                    if need(a) {
                        let bt = self.transpose(*b)?;
                        contribs.push((*a, self.matmul(g, bt)?));
                    }
                    if need(b) {
                        let at = self.transpose(*a)?;
                        contribs.push((*b, self.matmul(at, g)?));
                    }
                }
                Op::Transpose(a) => contribs.push((*a, self.transpose(g)?)),
                Op::Add(a, b) => {
                    if need(a) {
                        contribs.push((*a, g));
                    }
                    if need(b) {
                        contribs.push((*b, g));
                    }
                }
                Op::Sub(a, b) => {
                    if need(a) {
                        contribs.push((*a, g));
                    }
                    if need(b) {
                        contribs.push((*b, self.neg(g)?));
                    }
                }
                Op::Mul(a, b) => {
                    if need(a) {
                        contribs.push((*a, self.mul(g, *b)?));
                    }
                    if need(b) {
                        contribs.push((*b, self.mul(g, *a)?));
                    }
                }
                Op::Div(a, b) => {
                    if need(a) {
                        contribs.push((*a, self.div(g, *b)?));
                    }
                    if need(b) {
                        let go = self.mul(g, out)?;
                        let q = self.div(go, *b)?;
                        contribs.push((*b, self.neg(q)?));
                    }
                }
                Op::Neg(a) => contribs.push((*a, self.neg(g)?)),
                Op::Scale(a, c) => contribs.push((*a, self.scale(g, *c)?)),
                Op::AddBias(a, b) => {
                    if need(a) {
                        contribs.push((*a, g));
                    }
                    if need(b) {
                        contribs.push((*b, self.sum_rows(g)?));
                    }
                }
                Op::SumRows(a) => {
                    let m = self.shape(*a)[0];
                    contribs.push((*a, self.broadcast_rows(g, m)?));
                }
                Op::BroadcastRows(a, _) => contribs.push((*a, self.sum_rows(g)?)),
                Op::Sum(a) => {
                    let shape = self.shape(*a).to_vec();
                    contribs.push((*a, self.expand(g, &shape)?));
                }
                Op::Mean(a) => {
                    let shape = self.shape(*a).to_vec();
                    let inv = 1.0 / numel(&shape) as f64;
                    let e = self.expand(g, &shape)?;
                    contribs.push((*a, self.scale(e, inv)?));
                }
                Op::Expand(a, _) => contribs.push((*a, self.sum(g)?)),
                Op::Relu(a) => {
                    let mask = self.step(*a)?;
                    contribs.push((*a, self.mul(g, mask)?));
                }
                Op::Square(a) => {
                    let two_a = self.scale(*a, 2.0)?;
                    contribs.push((*a, self.mul(g, two_a)?));
                }
                Op::Log(a) => contribs.push((*a, self.div(g, *a)?)),
                Op::Exp(a) => contribs.push((*a, self.mul(g, out)?)),
                Op::Sigmoid(a) => {
                    let sq = self.square(out)?;
                    let d = self.sub(out, sq)?;
                    contribs.push((*a, self.mul(g, d)?));
                }
                Op::Softplus(a) => {
                    let s = self.sigmoid(*a)?;
                    contribs.push((*a, self.mul(g, s)?));
                }
                Op::Concat(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let rows = self.shape(*p)[0];
                        if need(p) {
                            contribs.push((*p, self.slice_rows(g, start, start + rows)?));
                        }
                        start += rows;
                    }
                }
                Op::Slice(a, start, _) => {
                    let total = self.shape(*a)[0];
                    contribs.push((*a, self.pad_rows(g, *start, total)?));
                }
                Op::Pad(a, offset, _) => {
                    let rows = self.shape(*a)[0];
                    contribs.push((*a, self.slice_rows(g, *offset, offset + rows)?));
                }
            }
            for (target, c) in contribs {
                if !relevant[target.0] {
                    continue;
                }
                adjoint[target.0] = Some(match adjoint[target.0] {
                    Some(prev) => self.add(prev, c)?,
                    None => c,
                });
            }
        }

        Ok(wrt
            .iter()
            .map(|w| match adjoint.get(w.0).copied().flatten() {
                Some(g) => g,
                None => {
                    let zero = Tensor::zeros(self.shape(*w));
                    self.constant(zero)
                }
            })
            .collect())
    }

    /// First-order gradients without history. The intermediate backward
    /// nodes are discarded; the results sit on the tape as detached nodes
    /// that refuse further differentiation.
    pub fn gradients_detached(
        &mut self,
        output: Var,
        wrt: &[Var],
    ) -> Result<Vec<Var>, AutodiffError> {
        let mark = self.nodes.len();
        let grads = self.gradients(output, wrt)?;
        let values: Vec<Tensor> = grads.iter().map(|g| self.value(*g).clone()).collect();
        self.truncate(mark);
        let mut origin = wrt.to_vec();
        origin.push(output);
        Ok(values
            .into_iter()
            .map(|value| {
                self.push_unchecked(
                    Op::Detached {
                        origin: origin.clone(),
                    },
                    value,
                )
            })
            .collect())
    }
}
