// Define-by-run reverse-mode differentiation.
//
// Every primitive application appends a node holding its output value; the
// tape is therefore topologically ordered by construction. `backward` walks
// the nodes once in reverse and accumulates parameter gradients into the
// owning `ParamStore`.

use std::collections::HashMap;

use rand::Rng;

use super::{NumericsError, ParamId, ParamStore, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Primitive catalog. Shapes are interpreted as matrices `[rows, cols]`
/// (see [`Tensor::rows`] / [`Tensor::cols`]) unless stated otherwise.
#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    /// `[m,k] x [k,n] -> [m,n]`
    MatMul,
    /// Same shape, or rhs `[n]`/`[1,n]` broadcast over the rows of lhs.
    Add,
    /// Same shape only.
    Sub,
    /// Same shape, or rhs `[m,1]` broadcast over the columns of lhs.
    Mul,
    Scale(f64),
    /// Concatenation of 2-D inputs along axis 0 (rows) or 1 (columns).
    Concat { axis: usize },
    Slice { axis: usize, start: usize, len: usize },
    Tanh,
    Sigmoid,
    Relu,
    Exp,
    /// Row-wise.
    LogSoftmax,
    /// Row-wise, `[m,n] -> [m,1]`.
    LogSumExp,
    /// Elementwise `ln(e^a + e^b)` on same-shape inputs.
    LogAddExp,
    /// Row lookup: table `[V,d]` -> `[ids.len(), d]`.
    Embedding { ids: Vec<usize> },
    /// Multiplies by a fixed, already scaled keep-mask.
    Dropout { mask: Vec<f64> },
    /// Sum of all entries to a scalar.
    Sum,
    Mean,
    /// `[m,n] -> [1,n]`
    SumRows,
    /// Flat-index gather: `out[k] = in[indices[k]]`, reshaped to `shape`.
    Gather { indices: Vec<usize>, shape: Vec<usize> },
    Reshape { shape: Vec<usize> },
    /// 2-D transpose.
    Transpose,
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::MatMul => "matmul",
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::Scale(_) => "scale",
            Primitive::Concat { .. } => "concat",
            Primitive::Slice { .. } => "slice",
            Primitive::Tanh => "tanh",
            Primitive::Sigmoid => "sigmoid",
            Primitive::Relu => "relu",
            Primitive::Exp => "exp",
            Primitive::LogSoftmax => "log_softmax",
            Primitive::LogSumExp => "logsumexp",
            Primitive::LogAddExp => "logaddexp",
            Primitive::Embedding { .. } => "embedding",
            Primitive::Dropout { .. } => "dropout",
            Primitive::Sum => "sum",
            Primitive::Mean => "mean",
            Primitive::SumRows => "sum_rows",
            Primitive::Gather { .. } => "gather",
            Primitive::Reshape { .. } => "reshape",
            Primitive::Transpose => "transpose",
        }
    }

    /// Parses the attribute-free primitives by name.
    pub fn from_name(name: &str) -> Result<Self, NumericsError> {
        Ok(match name {
            "matmul" => Primitive::MatMul,
            "add" => Primitive::Add,
            "sub" => Primitive::Sub,
            "mul" => Primitive::Mul,
            "tanh" => Primitive::Tanh,
            "sigmoid" => Primitive::Sigmoid,
            "relu" => Primitive::Relu,
            "exp" => Primitive::Exp,
            "log_softmax" => Primitive::LogSoftmax,
            "logsumexp" => Primitive::LogSumExp,
            "logaddexp" => Primitive::LogAddExp,
            "sum" => Primitive::Sum,
            "mean" => Primitive::Mean,
            "sum_rows" => Primitive::SumRows,
            "transpose" => Primitive::Transpose,
            other => return Err(NumericsError::UnknownPrimitive(other.to_string())),
        })
    }
}

#[derive(Clone, Debug)]
enum NodeKind {
    Constant,
    Param(ParamId),
    Op(Primitive),
}

#[derive(Clone, Debug)]
struct Node {
    kind: NodeKind,
    inputs: Vec<Var>,
    value: Tensor,
    requires_grad: bool,
}

/// Append-only record of primitive applications.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

fn mismatch(primitive: &'static str, detail: String) -> NumericsError {
    NumericsError::ShapeMismatch { primitive, detail }
}

fn matrix_dims(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
}

/// `c = op(a) * op(b) (+ c when accumulate)` on row-major buffers.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    let beta = if accumulate { 1.0 } else { 0.0 };
    if k == 0 {
        if !accumulate {
            c.fill(0.0);
        }
        return;
    }
    // op(a) is [m,k]; stored as [m,k] or, when transposed, as [k,m].
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slice lengths cover the strided extents computed above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn logaddexp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

fn row_logsumexp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = row.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(NodeKind::Constant, Vec::new(), value, false)
    }

    /// Records (once per tape) the current value of a parameter.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let v = self.push(NodeKind::Param(id), Vec::new(), store.value(id).clone(), true);
        self.param_vars.insert(id, v);
        v
    }

    fn push(&mut self, kind: NodeKind, inputs: Vec<Var>, value: Tensor, requires_grad: bool) -> Var {
        let id = Var(self.nodes.len());
        self.nodes.push(Node {
            kind,
            inputs,
            value,
            requires_grad,
        });
        id
    }

    /// Applies a primitive to tape values and records the result.
    pub fn apply(&mut self, prim: Primitive, inputs: &[Var]) -> Result<Var, NumericsError> {
        let value = self.forward(&prim, inputs)?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push(NodeKind::Op(prim), inputs.to_vec(), value, requires_grad))
    }

    fn arity(prim: &Primitive, inputs: &[Var], expected: usize) -> Result<(), NumericsError> {
        if inputs.len() != expected {
            return Err(mismatch(
                prim.name(),
                format!("expected {expected} inputs, got {}", inputs.len()),
            ));
        }
        Ok(())
    }

    fn forward(&self, prim: &Primitive, inputs: &[Var]) -> Result<Tensor, NumericsError> {
        let name = prim.name();
        match prim {
            Primitive::MatMul => {
                Self::arity(prim, inputs, 2)?;
                let a = self.value(inputs[0]);
                let b = self.value(inputs[1]);
                let (m, k) = matrix_dims(a);
                let (k2, n) = matrix_dims(b);
                if a.shape().len() != 2 || b.shape().len() != 2 || k != k2 {
                    return Err(mismatch(name, format!("{:?} x {:?}", a.shape(), b.shape())));
                }
                let mut out = vec![0.0; m * n];
                gemm(m, k, n, a.data(), false, b.data(), false, &mut out, false);
                Ok(Tensor::from_parts(vec![m, n], out))
            }
            Primitive::Add | Primitive::Sub => {
                Self::arity(prim, inputs, 2)?;
                let a = self.value(inputs[0]);
                let b = self.value(inputs[1]);
                let sign = if matches!(prim, Primitive::Sub) { -1.0 } else { 1.0 };
                if a.shape() == b.shape() {
                    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + sign * y).collect();
                    return Ok(Tensor::from_parts(a.shape().to_vec(), data));
                }
                let row_broadcast = matches!(prim, Primitive::Add)
                    && a.shape().len() == 2
                    && b.rows() == 1
                    && b.numel() == a.cols();
                if !row_broadcast {
                    return Err(mismatch(name, format!("{:?} vs {:?}", a.shape(), b.shape())));
                }
                let n = a.cols();
                let mut data = a.data().to_vec();
                for row in data.chunks_mut(n) {
                    for (x, y) in row.iter_mut().zip(b.data()) {
                        *x += y;
                    }
                }
                Ok(Tensor::from_parts(a.shape().to_vec(), data))
            }
            Primitive::Mul => {
                Self::arity(prim, inputs, 2)?;
                let a = self.value(inputs[0]);
                let b = self.value(inputs[1]);
                if a.shape() == b.shape() {
                    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
                    return Ok(Tensor::from_parts(a.shape().to_vec(), data));
                }
                if a.shape().len() != 2 || b.numel() != a.rows() || b.cols() != 1 {
                    return Err(mismatch(name, format!("{:?} vs {:?}", a.shape(), b.shape())));
                }
                let n = a.cols();
                let mut data = a.data().to_vec();
                for (row, &s) in data.chunks_mut(n).zip(b.data()) {
                    row.iter_mut().for_each(|x| *x *= s);
                }
                Ok(Tensor::from_parts(a.shape().to_vec(), data))
            }
            Primitive::Scale(s) => {
                Self::arity(prim, inputs, 1)?;
                let a = self.value(inputs[0]);
                Ok(Tensor::from_parts(a.shape().to_vec(), a.data().iter().map(|x| x * s).collect()))
            }
            Primitive::Concat { axis } => {
                if inputs.is_empty() {
                    return Err(mismatch(name, "no inputs".into()));
                }
                let first = self.value(inputs[0]);
                match axis {
                    0 => {
                        let cols = first.cols();
                        let mut data = Vec::new();
                        let mut rows = 0;
                        for &v in inputs {
                            let t = self.value(v);
                            if t.cols() != cols {
                                return Err(mismatch(
                                    name,
                                    format!("axis 0: {:?} vs {:?}", first.shape(), t.shape()),
                                ));
                            }
                            rows += t.rows();
                            data.extend_from_slice(t.data());
                        }
                        Ok(Tensor::from_parts(vec![rows, cols], data))
                    }
                    1 => {
                        let rows = first.rows();
                        let mut total = 0;
                        for &v in inputs {
                            let t = self.value(v);
                            if t.rows() != rows {
                                return Err(mismatch(
                                    name,
                                    format!("axis 1: {:?} vs {:?}", first.shape(), t.shape()),
                                ));
                            }
                            total += t.cols();
                        }
                        let mut data = Vec::with_capacity(rows * total);
                        for r in 0..rows {
                            for &v in inputs {
                                data.extend_from_slice(self.value(v).row(r));
                            }
                        }
                        Ok(Tensor::from_parts(vec![rows, total], data))
                    }
                    _ => Err(mismatch(name, format!("unsupported axis {axis}"))),
                }
            }
            Primitive::Slice { axis, start, len } => {
                Self::arity(prim, inputs, 1)?;
                let a = self.value(inputs[0]);
                let (rows, cols) = matrix_dims(a);
                match axis {
                    0 if start + len <= rows => Ok(Tensor::from_parts(
                        vec![*len, cols],
                        a.data()[start * cols..(start + len) * cols].to_vec(),
                    )),
                    1 if start + len <= cols => {
                        let mut data = Vec::with_capacity(rows * len);
                        for r in 0..rows {
                            data.extend_from_slice(&a.row(r)[*start..start + len]);
                        }
                        Ok(Tensor::from_parts(vec![rows, *len], data))
                    }
                    _ => Err(mismatch(
                        name,
                        format!("axis {axis} range {start}..{} of {:?}", start + len, a.shape()),
                    )),
                }
            }
            Primitive::Tanh | Primitive::Sigmoid | Primitive::Relu | Primitive::Exp => {
                Self::arity(prim, inputs, 1)?;
                let a = self.value(inputs[0]);
                let f: fn(f64) -> f64 = match prim {
                    Primitive::Tanh => f64::tanh,
                    Primitive::Sigmoid => |x| 1.0 / (1.0 + (-x).exp()),
                    Primitive::Relu => |x| x.max(0.0),
                    _ => f64::exp,
                };
                Ok(Tensor::from_parts(a.shape().to_vec(), a.data().iter().map(|&x| f(x)).collect()))
            }
            Primitive::LogSoftmax => {
                Self::arity(prim, inputs, 1)?;
                let a = self.value(inputs[0]);
                let n = a.cols();
                if n == 0 {
                    return Err(mismatch(name, format!("empty rows in {:?}", a.shape())));
                }
                let mut data = a.data().to_vec();
                for row in data.chunks_mut(n) {
                    let lse = row_logsumexp(row);
                    row.iter_mut().for_each(|x| *x -= lse);
                }
                Ok(Tensor::from_parts(a.shape().to_vec(), data))
            }
            Primitive::LogSumExp => {
                Self::arity(prim, inputs, 1)?;
                let a = self.value(inputs[0]);
                let n = a.cols();
                if n == 0 {
                    return Err(mismatch(name, format!("empty rows in {:?}", a.shape())));
                }
                let data: Vec<f64> = a.data().chunks(n).map(row_logsumexp).collect();
                Ok(Tensor::from_parts(vec![a.rows(), 1], data))
            }
            Primitive::LogAddExp => {
                Self::arity(prim, inputs, 2)?;
                let a = self.value(inputs[0]);
                let b = self.value(inputs[1]);
                if a.shape() != b.shape() {
                    return Err(mismatch(name, format!("{:?} vs {:?}", a.shape(), b.shape())));
                }
                let data = a.data().iter().zip(b.data()).map(|(&x, &y)| logaddexp(x, y)).collect();
                Ok(Tensor::from_parts(a.shape().to_vec(), data))
            }
            Primitive::Embedding { ids } => {
                Self::arity(prim, inputs, 1)?;
                let table = self.value(inputs[0]);
                let (vocab, dim) = matrix_dims(table);
                let mut data = Vec::with_capacity(ids.len() * dim);
                for &id in ids {
                    if id >= vocab {
                        return Err(mismatch(name, format!("id {id} out of range for table {:?}", table.shape())));
                    }
                    data.extend_from_slice(table.row(id));
                }
                Ok(Tensor::from_parts(vec![ids.len(), dim], data))
            }
            Primitive::Dropout { mask } => {
                Self::arity(prim, inputs, 1)?;
                let a = self.value(inputs[0]);
                if mask.len() != a.numel() {
                    return Err(mismatch(name, format!("mask of {} for {:?}", mask.len(), a.shape())));
                }
                let data = a.data().iter().zip(mask).map(|(x, m)| x * m).collect();
                Ok(Tensor::from_parts(a.shape().to_vec(), data))
            }
            Primitive::Sum | Primitive::Mean => {
                Self::arity(prim, inputs, 1)?;
                let a = self.value(inputs[0]);
                let s: f64 = a.data().iter().sum();
                if matches!(prim, Primitive::Mean) {
                    if a.numel() == 0 {
                        return Err(mismatch(name, "mean of empty tensor".into()));
                    }
                    Ok(Tensor::scalar(s / a.numel() as f64))
                } else {
                    Ok(Tensor::scalar(s))
                }
            }
            Primitive::SumRows => {
                Self::arity(prim, inputs, 1)?;
                let a = self.value(inputs[0]);
                let n = a.cols();
                let mut out = vec![0.0; n];
                for row in a.data().chunks(n.max(1)) {
                    for (o, x) in out.iter_mut().zip(row) {
                        *o += x;
                    }
                }
                Ok(Tensor::from_parts(vec![1, n], out))
            }
            Primitive::Gather { indices, shape } => {
                Self::arity(prim, inputs, 1)?;
                let a = self.value(inputs[0]);
                if shape.iter().product::<usize>() != indices.len() {
                    return Err(mismatch(name, format!("{} indices for shape {shape:?}", indices.len())));
                }
                let src = a.data();
                let mut data = Vec::with_capacity(indices.len());
                for &i in indices {
                    match src.get(i) {
                        Some(&x) => data.push(x),
                        None => {
                            return Err(mismatch(name, format!("index {i} out of range for {:?}", a.shape())))
                        }
                    }
                }
                Ok(Tensor::from_parts(shape.clone(), data))
            }
            Primitive::Reshape { shape } => {
                Self::arity(prim, inputs, 1)?;
                let a = self.value(inputs[0]);
                if shape.iter().product::<usize>() != a.numel() {
                    return Err(mismatch(name, format!("{:?} -> {shape:?}", a.shape())));
                }
                Ok(Tensor::from_parts(shape.clone(), a.data().to_vec()))
            }
            Primitive::Transpose => {
                Self::arity(prim, inputs, 1)?;
                let a = self.value(inputs[0]);
                let (rows, cols) = matrix_dims(a);
                Ok(Tensor::from_parts(vec![cols, rows], transpose(a.data(), rows, cols)))
            }
        }
    }

    // Convenience wrappers.

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.apply(Primitive::MatMul, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.apply(Primitive::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.apply(Primitive::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.apply(Primitive::Mul, &[a, b])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var, NumericsError> {
        self.apply(Primitive::Scale(s), &[a])
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var, NumericsError> {
        if inputs.len() == 1 {
            return Ok(inputs[0]);
        }
        self.apply(Primitive::Concat { axis }, inputs)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var, NumericsError> {
        self.apply(Primitive::Slice { axis: 0, start, len }, &[a])
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, NumericsError> {
        self.apply(Primitive::Slice { axis: 1, start, len }, &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.apply(Primitive::Tanh, &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.apply(Primitive::Sigmoid, &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.apply(Primitive::Relu, &[a])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.apply(Primitive::Exp, &[a])
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.apply(Primitive::LogSoftmax, &[a])
    }

    pub fn logsumexp(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.apply(Primitive::LogSumExp, &[a])
    }

    pub fn logaddexp(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.apply(Primitive::LogAddExp, &[a, b])
    }

    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var, NumericsError> {
        self.apply(Primitive::Embedding { ids: ids.to_vec() }, &[table])
    }

    /// Inverted dropout: keeps each entry with probability `1 - p` and scales
    /// kept entries by `1 / (1 - p)`. Identity when `train` is false or `p == 0`.
    pub fn dropout<R: Rng>(&mut self, a: Var, p: f64, train: bool, rng: &mut R) -> Result<Var, NumericsError> {
        if !train || p <= 0.0 {
            return Ok(a);
        }
        if p >= 1.0 {
            return Err(mismatch("dropout", format!("rate {p} must be below 1")));
        }
        let scale = 1.0 / (1.0 - p);
        let mask = (0..self.value(a).numel())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { scale })
            .collect();
        self.apply(Primitive::Dropout { mask }, &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.apply(Primitive::Sum, &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.apply(Primitive::Mean, &[a])
    }

    pub fn sum_rows(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.apply(Primitive::SumRows, &[a])
    }

    pub fn gather(&mut self, a: Var, indices: Vec<usize>, shape: Vec<usize>) -> Result<Var, NumericsError> {
        self.apply(Primitive::Gather { indices, shape }, &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, NumericsError> {
        self.apply(Primitive::Reshape { shape: shape.to_vec() }, &[a])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.apply(Primitive::Transpose, &[a])
    }

    /// Accumulates `d loss / d parameter` into every parameter reachable from `loss`.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<(), NumericsError> {
        let root = &self.nodes[loss.0];
        if !root.value.is_scalar() {
            return Err(NumericsError::NonScalarLoss(root.value.shape().to_vec()));
        }
        if !root.requires_grad {
            return Err(NumericsError::DetachedLoss);
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(root.value.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(grad) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            match &node.kind {
                NodeKind::Constant => {}
                NodeKind::Param(pid) => {
                    let target = &mut store.get_mut(*pid).grad;
                    for (g, d) in target.data_mut().iter_mut().zip(grad.data()) {
                        *g += d;
                    }
                }
                NodeKind::Op(prim) => self.backprop(prim, node, &grad, &mut grads),
            }
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn slot<'a>(&self, grads: &'a mut [Option<Tensor>], v: Var) -> &'a mut Tensor {
        grads[v.0].get_or_insert_with(|| Tensor::zeros(self.nodes[v.0].value.shape()))
    }

    fn accumulate_with(&self, grads: &mut [Option<Tensor>], v: Var, f: impl Fn(usize, f64) -> f64, g: &Tensor) {
        if !self.wants(v) {
            return;
        }
        let slot = self.slot(grads, v);
        for (i, (s, &d)) in slot.data_mut().iter_mut().zip(g.data()).enumerate() {
            *s += f(i, d);
        }
    }

    fn backprop(&self, prim: &Primitive, node: &Node, grad: &Tensor, grads: &mut [Option<Tensor>]) {
        let ins = &node.inputs;
        let out = &node.value;
        match prim {
            Primitive::MatMul => {
                let (a, b) = (ins[0], ins[1]);
                let av = self.value(a);
                let bv = self.value(b);
                let (m, k) = matrix_dims(av);
                let n = bv.cols();
                if self.wants(a) {
                    let slot = self.slot(grads, a);
                    gemm(m, n, k, grad.data(), false, bv.data(), true, slot.data_mut(), true);
                }
                if self.wants(b) {
                    let slot = self.slot(grads, b);
                    gemm(k, m, n, av.data(), true, grad.data(), false, slot.data_mut(), true);
                }
            }
            Primitive::Add | Primitive::Sub => {
                let (a, b) = (ins[0], ins[1]);
                self.accumulate_with(grads, a, |_, d| d, grad);
                if self.wants(b) {
                    let sign = if matches!(prim, Primitive::Sub) { -1.0 } else { 1.0 };
                    let bshape_same = self.shape(a) == self.shape(b);
                    let slot = self.slot(grads, b);
                    if bshape_same {
                        for (s, d) in slot.data_mut().iter_mut().zip(grad.data()) {
                            *s += sign * d;
                        }
                    } else {
                        let n = slot.numel();
                        for row in grad.data().chunks(n) {
                            for (s, d) in slot.data_mut().iter_mut().zip(row) {
                                *s += d;
                            }
                        }
                    }
                }
            }
            Primitive::Mul => {
                let (a, b) = (ins[0], ins[1]);
                let av = self.value(a);
                let bv = self.value(b);
                if av.shape() == bv.shape() {
                    self.accumulate_with(grads, a, |i, d| d * bv.data()[i], grad);
                    self.accumulate_with(grads, b, |i, d| d * av.data()[i], grad);
                } else {
                    let n = av.cols();
                    self.accumulate_with(grads, a, |i, d| d * bv.data()[i / n], grad);
                    if self.wants(b) {
                        let slot = self.slot(grads, b);
                        for (r, s) in slot.data_mut().iter_mut().enumerate() {
                            let g = &grad.data()[r * n..(r + 1) * n];
                            let x = &av.data()[r * n..(r + 1) * n];
                            *s += g.iter().zip(x).map(|(g, x)| g * x).sum::<f64>();
                        }
                    }
                }
            }
            Primitive::Scale(s) => self.accumulate_with(grads, ins[0], |_, d| d * s, grad),
            Primitive::Concat { axis } => {
                let total_cols = out.cols();
                let mut offset = 0;
                for &v in ins {
                    let (rows, cols) = matrix_dims(self.value(v));
                    if self.wants(v) {
                        let slot = self.slot(grads, v);
                        let dst = slot.data_mut();
                        if *axis == 0 {
                            let src = &grad.data()[offset * cols..(offset + rows) * cols];
                            dst.iter_mut().zip(src).for_each(|(s, d)| *s += d);
                        } else {
                            for r in 0..rows {
                                let src = &grad.data()[r * total_cols + offset..r * total_cols + offset + cols];
                                dst[r * cols..(r + 1) * cols].iter_mut().zip(src).for_each(|(s, d)| *s += d);
                            }
                        }
                    }
                    offset += if *axis == 0 { rows } else { cols };
                }
            }
            Primitive::Slice { axis, start, len } => {
                let a = ins[0];
                if !self.wants(a) {
                    return;
                }
                let (rows, cols) = matrix_dims(self.value(a));
                let slot = self.slot(grads, a);
                let dst = slot.data_mut();
                if *axis == 0 {
                    dst[start * cols..(start + len) * cols]
                        .iter_mut()
                        .zip(grad.data())
                        .for_each(|(s, d)| *s += d);
                } else {
                    for r in 0..rows {
                        let src = &grad.data()[r * len..(r + 1) * len];
                        dst[r * cols + start..r * cols + start + len]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(s, d)| *s += d);
                    }
                }
            }
            Primitive::Tanh => {
                let y = out.data();
                self.accumulate_with(grads, ins[0], |i, d| d * (1.0 - y[i] * y[i]), grad);
            }
            Primitive::Sigmoid => {
                let y = out.data();
                self.accumulate_with(grads, ins[0], |i, d| d * y[i] * (1.0 - y[i]), grad);
            }
            Primitive::Relu => {
                let x = self.value(ins[0]).data();
                self.accumulate_with(grads, ins[0], |i, d| if x[i] > 0.0 { d } else { 0.0 }, grad);
            }
            Primitive::Exp => {
                let y = out.data();
                self.accumulate_with(grads, ins[0], |i, d| d * y[i], grad);
            }
            Primitive::LogSoftmax => {
                let a = ins[0];
                if !self.wants(a) {
                    return;
                }
                let n = out.cols();
                let row_sums: Vec<f64> = grad.data().chunks(n).map(|r| r.iter().sum()).collect();
                let y = out.data();
                self.accumulate_with(grads, a, |i, d| d - y[i].exp() * row_sums[i / n], grad);
            }
            Primitive::LogSumExp => {
                let a = ins[0];
                let x = self.value(a).data();
                let n = self.value(a).cols();
                let lse = out.data();
                let g = grad.data();
                if self.wants(a) {
                    let slot = self.slot(grads, a);
                    for (i, s) in slot.data_mut().iter_mut().enumerate() {
                        let r = i / n;
                        *s += g[r] * (x[i] - lse[r]).exp();
                    }
                }
            }
            Primitive::LogAddExp => {
                let (a, b) = (ins[0], ins[1]);
                let av = self.value(a).data();
                let bv = self.value(b).data();
                let y = out.data();
                self.accumulate_with(grads, a, |i, d| d * (av[i] - y[i]).exp(), grad);
                self.accumulate_with(grads, b, |i, d| d * (bv[i] - y[i]).exp(), grad);
            }
            Primitive::Embedding { ids } => {
                let table = ins[0];
                if !self.wants(table) {
                    return;
                }
                let dim = self.value(table).cols();
                let slot = self.slot(grads, table);
                let dst = slot.data_mut();
                for (k, &id) in ids.iter().enumerate() {
                    let src = &grad.data()[k * dim..(k + 1) * dim];
                    dst[id * dim..(id + 1) * dim].iter_mut().zip(src).for_each(|(s, d)| *s += d);
                }
            }
            Primitive::Dropout { mask } => self.accumulate_with(grads, ins[0], |i, d| d * mask[i], grad),
            Primitive::Sum => {
                let g = grad.item();
                self.accumulate_with_const(grads, ins[0], g);
            }
            Primitive::Mean => {
                let n = self.value(ins[0]).numel() as f64;
                self.accumulate_with_const(grads, ins[0], grad.item() / n);
            }
            Primitive::SumRows => {
                let a = ins[0];
                let n = out.cols();
                self.accumulate_with_broadcast_row(grads, a, grad.data(), n);
            }
            Primitive::Gather { indices, .. } => {
                let a = ins[0];
                if !self.wants(a) {
                    return;
                }
                let slot = self.slot(grads, a);
                let dst = slot.data_mut();
                for (&i, d) in indices.iter().zip(grad.data()) {
                    dst[i] += d;
                }
            }
            Primitive::Reshape { .. } => self.accumulate_with(grads, ins[0], |_, d| d, grad),
            Primitive::Transpose => {
                let a = ins[0];
                if !self.wants(a) {
                    return;
                }
                let (rows, cols) = matrix_dims(out);
                let t = transpose(grad.data(), rows, cols);
                let slot = self.slot(grads, a);
                slot.data_mut().iter_mut().zip(&t).for_each(|(s, d)| *s += d);
            }
        }
    }

    fn accumulate_with_const(&self, grads: &mut [Option<Tensor>], v: Var, g: f64) {
        if !self.wants(v) {
            return;
        }
        self.slot(grads, v).data_mut().iter_mut().for_each(|s| *s += g);
    }

    fn accumulate_with_broadcast_row(&self, grads: &mut [Option<Tensor>], v: Var, row: &[f64], n: usize) {
        if !self.wants(v) {
            return;
        }
        for chunk in self.slot(grads, v).data_mut().chunks_mut(n.max(1)) {
            chunk.iter_mut().zip(row).for_each(|(s, d)| *s += d);
        }
    }
}

fn transpose(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = data[r * cols + c];
        }
    }
    out
}
