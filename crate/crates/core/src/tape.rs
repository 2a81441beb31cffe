//! Reverse-mode differentiation over a linear operation tape.
//!
//! Forward calls record one node per operation; `backward` replays the tape
//! in exact reverse order and accumulates gradients into the participating
//! parameters. Results are checked for finiteness after every operation, so
//! a finite forward pass can never silently propagate NaN/Inf.

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// The operation vocabulary of the numeric core.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    MatMul,
    Add,
    Multiply,
    ConcatLastAxis,
    Scale,
    Relu,
    Sigmoid,
    Tanh,
    SoftmaxLastAxis,
    EmbeddingGather,
    ReduceSum,
    Transpose,
    LogSumExp,
}

impl std::fmt::Display for OpKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::Multiply => "multiply",
            OpKind::ConcatLastAxis => "concat-last-axis",
            OpKind::Scale => "scale",
            OpKind::Relu => "relu",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Tanh => "tanh",
            OpKind::SoftmaxLastAxis => "softmax-last-axis",
            OpKind::EmbeddingGather => "embedding-gather",
            OpKind::ReduceSum => "reduce-sum",
            OpKind::Transpose => "transpose",
            OpKind::LogSumExp => "log-sum-exp",
        };
        f.write_str(name)
    }
}

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Node<S> {
    Constant,
    /// Full copy of a parameter value.
    Param(ParamId),
    /// Selected rows of a parameter; backward scatter-adds into the dense
    /// gradient of the full table.
    ParamRows(ParamId, Vec<usize>),
    MatMul(usize, usize),
    Add(usize, usize),
    /// rhs is a single row broadcast over the rows of lhs.
    AddBroadcastRow(usize, usize),
    Multiply(usize, usize),
    /// One operand is scalar-shaped and broadcast over the other.
    MultiplyScalar { scalar: usize, dense: usize },
    Concat(Vec<usize>),
    Scale(usize, S),
    Relu(usize),
    Sigmoid(usize),
    Tanh(usize),
    Softmax(usize),
    Gather(usize, Vec<usize>),
    ReduceSum(usize),
    Transpose(usize),
    LogSumExp(usize),
}

pub struct Tape<S: Scalar> {
    nodes: Vec<Node<S>>,
    values: Vec<Tensor<S>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.values[v.0]
    }

    fn push(&mut self, node: Node<S>, value: Tensor<S>, kind: OpKind) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite { kind });
        }
        self.nodes.push(node);
        self.values.push(value);
        Ok(Var(self.nodes.len() - 1))
    }

    // ---- leaves ----

    pub fn constant(&mut self, value: Tensor<S>) -> Result<Var> {
        // Report leaf problems under the op that consumes constants most often.
        self.push(Node::Constant, value, OpKind::Add)
    }

    pub fn param(&mut self, store: &ParamStore<S>, id: ParamId) -> Result<Var> {
        let value = store.value(id).clone();
        self.push(Node::Param(id), value, OpKind::Add)
    }

    /// Leaf holding `rows` of a parameter table; avoids copying large
    /// embedding tables onto the tape.
    pub fn param_rows(&mut self, store: &ParamStore<S>, id: ParamId, rows: &[usize]) -> Result<Var> {
        let table = store.value(id);
        let value = gather_rows(table, rows)?;
        self.push(Node::ParamRows(id, rows.to_vec()), value, OpKind::EmbeddingGather)
    }

    // ---- operations ----

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.values[a.0], &self.values[b.0]);
        let value = matmul_vals(ta, tb)?;
        self.push(Node::MatMul(a.0, b.0), value, OpKind::MatMul)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.values[a.0], &self.values[b.0]);
        if ta.shape() == tb.shape() {
            let mut value = ta.clone();
            value.add_assign(tb);
            return self.push(Node::Add(a.0, b.0), value, OpKind::Add);
        }
        // Row broadcast: [m, n] + row of n.
        if ta.rank() == 2 && tb.numel() == ta.last_axis() && tb.rows() == 1 {
            let n = ta.last_axis();
            let mut data = Vec::with_capacity(ta.numel());
            for r in 0..ta.rows() {
                for (x, y) in ta.row_slice(r).iter().zip(tb.data()) {
                    data.push(*x + *y);
                }
            }
            debug_assert_eq!(n, tb.numel());
            let value = Tensor::new(ta.shape().to_vec(), data)?;
            return self.push(Node::AddBroadcastRow(a.0, b.0), value, OpKind::Add);
        }
        Err(Error::ShapeMismatch {
            kind: OpKind::Add,
            lhs: ta.shape().to_vec(),
            rhs: tb.shape().to_vec(),
        })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.values[a.0], &self.values[b.0]);
        if ta.shape() == tb.shape() {
            let data = ta
                .data()
                .iter()
                .zip(tb.data())
                .map(|(x, y)| *x * *y)
                .collect();
            let value = Tensor::new(ta.shape().to_vec(), data)?;
            return self.push(Node::Multiply(a.0, b.0), value, OpKind::Multiply);
        }
        if ta.is_scalar() || tb.is_scalar() {
            let scalar_is_lhs = ta.is_scalar();
            let (s, d) = if scalar_is_lhs { (ta, tb) } else { (tb, ta) };
            let c = s.scalar_value();
            let value = d.map(|v| v * c);
            return self.push(
                Node::MultiplyScalar {
                    scalar: if scalar_is_lhs { a.0 } else { b.0 },
                    dense: if scalar_is_lhs { b.0 } else { a.0 },
                },
                value,
                OpKind::Multiply,
            );
        }
        Err(Error::ShapeMismatch {
            kind: OpKind::Multiply,
            lhs: ta.shape().to_vec(),
            rhs: tb.shape().to_vec(),
        })
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::EmptyInput("concat-last-axis of zero tensors".into()));
        }
        let first = &self.values[parts[0].0];
        let lead: Vec<usize> = first.shape()[..first.rank() - 1].to_vec();
        let rows = first.numel() / first.last_axis().max(1);
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let t = &self.values[p.0];
            if t.shape()[..t.rank() - 1] != lead[..] {
                return Err(Error::ShapeMismatch {
                    kind: OpKind::ConcatLastAxis,
                    lhs: first.shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            widths.push(t.last_axis());
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.values[p.0].row_slice(r));
            }
        }
        let mut shape = lead;
        shape.push(total);
        let value = Tensor::new(shape, data)?;
        self.push(
            Node::Concat(parts.iter().map(|p| p.0).collect()),
            value,
            OpKind::ConcatLastAxis,
        )
    }

    pub fn scale(&mut self, a: Var, c: S) -> Result<Var> {
        let value = self.values[a.0].map(|v| v * c);
        self.push(Node::Scale(a.0, c), value, OpKind::Scale)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let value = self.values[a.0].map(|v| if v > S::zero() { v } else { S::zero() });
        self.push(Node::Relu(a.0), value, OpKind::Relu)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let one = S::one();
        let value = self.values[a.0].map(|v| one / (one + (-v).exp()));
        self.push(Node::Sigmoid(a.0), value, OpKind::Sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let value = self.values[a.0].map(|v| v.tanh());
        self.push(Node::Tanh(a.0), value, OpKind::Tanh)
    }

    /// Row-wise softmax with max subtraction for overflow safety.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let t = &self.values[a.0];
        let n = t.last_axis();
        if n == 0 {
            return Err(Error::InvalidShape {
                kind: OpKind::SoftmaxLastAxis,
                shape: t.shape().to_vec(),
                reason: "empty last axis".into(),
            });
        }
        let rows = t.numel() / n;
        let mut data = Vec::with_capacity(t.numel());
        for r in 0..rows {
            let row = t.row_slice(r);
            let max = row.iter().cloned().fold(S::neg_infinity(), S::max);
            let exps: Vec<S> = row.iter().map(|&v| (v - max).exp()).collect();
            let sum: S = exps.iter().cloned().sum();
            data.extend(exps.into_iter().map(|e| e / sum));
        }
        let value = Tensor::new(t.shape().to_vec(), data)?;
        self.push(Node::Softmax(a.0), value, OpKind::SoftmaxLastAxis)
    }

    /// Rows of `table` selected by index, in order; duplicates allowed.
    pub fn gather(&mut self, table: Var, rows: &[usize]) -> Result<Var> {
        let value = gather_rows(&self.values[table.0], rows)?;
        self.push(Node::Gather(table.0, rows.to_vec()), value, OpKind::EmbeddingGather)
    }

    /// Full reduction to a scalar.
    pub fn reduce_sum(&mut self, a: Var) -> Result<Var> {
        let sum: S = self.values[a.0].data().iter().cloned().sum();
        self.push(Node::ReduceSum(a.0), Tensor::scalar(sum), OpKind::ReduceSum)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = &self.values[a.0];
        if t.rank() != 2 {
            return Err(Error::InvalidShape {
                kind: OpKind::Transpose,
                shape: t.shape().to_vec(),
                reason: "transpose expects rank 2".into(),
            });
        }
        let (m, n) = (t.shape()[0], t.shape()[1]);
        let mut data = vec![S::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = t.data()[i * n + j];
            }
        }
        let value = Tensor::new(vec![n, m], data)?;
        self.push(Node::Transpose(a.0), value, OpKind::Transpose)
    }

    /// Numerically stable log(sum(exp(x))) over all entries, as a scalar.
    pub fn log_sum_exp(&mut self, a: Var) -> Result<Var> {
        let t = &self.values[a.0];
        if t.numel() == 0 {
            return Err(Error::EmptyInput("log-sum-exp of empty tensor".into()));
        }
        let max = t.data().iter().cloned().fold(S::neg_infinity(), S::max);
        let sum: S = t.data().iter().map(|&v| (v - max).exp()).sum();
        let value = Tensor::scalar(max + sum.ln());
        self.push(Node::LogSumExp(a.0), value, OpKind::LogSumExp)
    }

    /// Kind-dispatched entry point. `scale` takes its factor as a second,
    /// scalar-shaped operand; `embedding-gather` takes an index tensor whose
    /// entries must be non-negative integers.
    pub fn apply(&mut self, kind: OpKind, operands: &[Var]) -> Result<Var> {
        let want = |n: usize| -> Result<()> {
            if operands.len() != n {
                return Err(Error::InvalidArgument(format!(
                    "{kind} expects {n} operand(s), got {}",
                    operands.len()
                )));
            }
            Ok(())
        };
        match kind {
            OpKind::MatMul => {
                want(2)?;
                self.matmul(operands[0], operands[1])
            }
            OpKind::Add => {
                want(2)?;
                self.add(operands[0], operands[1])
            }
            OpKind::Multiply => {
                want(2)?;
                self.mul(operands[0], operands[1])
            }
            OpKind::ConcatLastAxis => self.concat(operands),
            OpKind::Scale => {
                want(2)?;
                let c = &self.values[operands[1].0];
                if !c.is_scalar() {
                    return Err(Error::InvalidShape {
                        kind,
                        shape: c.shape().to_vec(),
                        reason: "scale factor must be scalar-shaped".into(),
                    });
                }
                self.mul(operands[0], operands[1])
            }
            OpKind::Relu => {
                want(1)?;
                self.relu(operands[0])
            }
            OpKind::Sigmoid => {
                want(1)?;
                self.sigmoid(operands[0])
            }
            OpKind::Tanh => {
                want(1)?;
                self.tanh(operands[0])
            }
            OpKind::SoftmaxLastAxis => {
                want(1)?;
                self.softmax(operands[0])
            }
            OpKind::EmbeddingGather => {
                want(2)?;
                let idx = &self.values[operands[1].0];
                let mut rows = Vec::with_capacity(idx.numel());
                for &v in idx.data() {
                    let f = v.as_f64();
                    if f < 0.0 || f.fract() != 0.0 {
                        return Err(Error::InvalidArgument(format!(
                            "embedding-gather index {f} is not a non-negative integer"
                        )));
                    }
                    rows.push(f as usize);
                }
                self.gather(operands[0], &rows)
            }
            OpKind::ReduceSum => {
                want(1)?;
                self.reduce_sum(operands[0])
            }
            OpKind::Transpose => {
                want(1)?;
                self.transpose(operands[0])
            }
            OpKind::LogSumExp => {
                want(1)?;
                self.log_sum_exp(operands[0])
            }
        }
    }

    /// Accumulates d(loss)/d(param) into every participating parameter's
    /// gradient; non-participating parameters are untouched.
    pub fn backward(&self, loss: Var, store: &mut ParamStore<S>) -> Result<()> {
        let lt = &self.values[loss.0];
        if !lt.is_scalar() {
            return Err(Error::LossNotScalar {
                shape: lt.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor<S>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::new(lt.shape().to_vec(), vec![S::one()])?);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.nodes[i] {
                Node::Constant => {}
                Node::Param(id) => store.grad_mut(*id).add_assign(&g),
                Node::ParamRows(id, rows) => {
                    let d = g.last_axis();
                    let grad = store.grad_mut(*id);
                    let gd = grad.data_mut();
                    for (k, &r) in rows.iter().enumerate() {
                        let src = g.row_slice(k);
                        for (x, y) in gd[r * d..(r + 1) * d].iter_mut().zip(src) {
                            *x += *y;
                        }
                    }
                }
                Node::MatMul(a, b) => {
                    let (ta, tb) = (&self.values[*a], &self.values[*b]);
                    acc(&mut grads, *a, matmul_nt(&g, tb));
                    acc(&mut grads, *b, matmul_tn(ta, &g));
                }
                Node::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Node::AddBroadcastRow(a, b) => {
                    let tb_shape = self.values[*b].shape().to_vec();
                    let n = g.last_axis();
                    let mut col = vec![S::zero(); n];
                    for r in 0..g.rows() {
                        for (c, v) in col.iter_mut().zip(g.row_slice(r)) {
                            *c += *v;
                        }
                    }
                    acc(
                        &mut grads,
                        *b,
                        Tensor::new(tb_shape, col).expect("row shape"),
                    );
                    acc(&mut grads, *a, g);
                }
                Node::Multiply(a, b) => {
                    let (ta, tb) = (&self.values[*a], &self.values[*b]);
                    acc(&mut grads, *a, hadamard(&g, tb));
                    acc(&mut grads, *b, hadamard(&g, ta));
                }
                Node::MultiplyScalar { scalar, dense } => {
                    let c = self.values[*scalar].scalar_value();
                    let td = &self.values[*dense];
                    let ds: S = g
                        .data()
                        .iter()
                        .zip(td.data())
                        .map(|(x, y)| *x * *y)
                        .sum();
                    let sshape = self.values[*scalar].shape().to_vec();
                    acc(
                        &mut grads,
                        *scalar,
                        Tensor::new(sshape, vec![ds]).expect("scalar shape"),
                    );
                    acc(&mut grads, *dense, g.map(|v| v * c));
                }
                Node::Concat(parts) => {
                    let widths: Vec<usize> =
                        parts.iter().map(|p| self.values[*p].last_axis()).collect();
                    let slices = g.split_last_axis(&widths).expect("concat widths");
                    for (p, s) in parts.iter().zip(slices) {
                        acc(&mut grads, *p, s);
                    }
                }
                Node::Scale(a, c) => {
                    let c = *c;
                    acc(&mut grads, *a, g.map(|v| v * c));
                }
                Node::Relu(a) => {
                    let ta = &self.values[*a];
                    let data = g
                        .data()
                        .iter()
                        .zip(ta.data())
                        .map(|(gv, xv)| if *xv > S::zero() { *gv } else { S::zero() })
                        .collect();
                    acc(
                        &mut grads,
                        *a,
                        Tensor::new(ta.shape().to_vec(), data).expect("relu shape"),
                    );
                }
                Node::Sigmoid(a) => {
                    let out = &self.values[i];
                    let one = S::one();
                    let data = g
                        .data()
                        .iter()
                        .zip(out.data())
                        .map(|(gv, s)| *gv * *s * (one - *s))
                        .collect();
                    acc(
                        &mut grads,
                        *a,
                        Tensor::new(out.shape().to_vec(), data).expect("sigmoid shape"),
                    );
                }
                Node::Tanh(a) => {
                    let out = &self.values[i];
                    let one = S::one();
                    let data = g
                        .data()
                        .iter()
                        .zip(out.data())
                        .map(|(gv, t)| *gv * (one - *t * *t))
                        .collect();
                    acc(
                        &mut grads,
                        *a,
                        Tensor::new(out.shape().to_vec(), data).expect("tanh shape"),
                    );
                }
                Node::Softmax(a) => {
                    let out = &self.values[i];
                    let n = out.last_axis();
                    let rows = out.numel() / n;
                    let mut data = Vec::with_capacity(out.numel());
                    for r in 0..rows {
                        let s = out.row_slice(r);
                        let gr = g.row_slice(r);
                        let dot: S = s.iter().zip(gr).map(|(x, y)| *x * *y).sum();
                        data.extend(s.iter().zip(gr).map(|(sv, gv)| *sv * (*gv - dot)));
                    }
                    acc(
                        &mut grads,
                        *a,
                        Tensor::new(out.shape().to_vec(), data).expect("softmax shape"),
                    );
                }
                Node::Gather(table, rows) => {
                    let tt = &self.values[*table];
                    let d = tt.last_axis();
                    let mut data = vec![S::zero(); tt.numel()];
                    for (k, &r) in rows.iter().enumerate() {
                        let src = g.row_slice(k);
                        for (x, y) in data[r * d..(r + 1) * d].iter_mut().zip(src) {
                            *x += *y;
                        }
                    }
                    acc(
                        &mut grads,
                        *table,
                        Tensor::new(tt.shape().to_vec(), data).expect("gather shape"),
                    );
                }
                Node::ReduceSum(a) => {
                    let gv = g.scalar_value();
                    let ta = &self.values[*a];
                    acc(
                        &mut grads,
                        *a,
                        Tensor::new(ta.shape().to_vec(), vec![gv; ta.numel()])
                            .expect("sum shape"),
                    );
                }
                Node::Transpose(a) => {
                    let (m, n) = (g.shape()[0], g.shape()[1]);
                    let mut data = vec![S::zero(); m * n];
                    for r in 0..m {
                        for c in 0..n {
                            data[c * m + r] = g.data()[r * n + c];
                        }
                    }
                    acc(
                        &mut grads,
                        *a,
                        Tensor::new(vec![n, m], data).expect("transpose shape"),
                    );
                }
                Node::LogSumExp(a) => {
                    let gv = g.scalar_value();
                    let ta = &self.values[*a];
                    let lse = self.values[i].scalar_value();
                    let data = ta.data().iter().map(|&v| gv * (v - lse).exp()).collect();
                    acc(
                        &mut grads,
                        *a,
                        Tensor::new(ta.shape().to_vec(), data).expect("lse shape"),
                    );
                }
            }
        }
        Ok(())
    }
}

fn acc<S: Scalar>(grads: &mut [Option<Tensor<S>>], idx: usize, delta: Tensor<S>) {
    match &mut grads[idx] {
        Some(t) => t.add_assign(&delta),
        slot @ None => *slot = Some(delta),
    }
}

fn gather_rows<S: Scalar>(table: &Tensor<S>, rows: &[usize]) -> Result<Tensor<S>> {
    if table.rank() != 2 {
        return Err(Error::InvalidShape {
            kind: OpKind::EmbeddingGather,
            shape: table.shape().to_vec(),
            reason: "gather expects a rank-2 table".into(),
        });
    }
    let n = table.shape()[0];
    let d = table.shape()[1];
    let mut data = Vec::with_capacity(rows.len() * d);
    for &r in rows {
        if r >= n {
            return Err(Error::RowOutOfBounds { index: r, rows: n });
        }
        data.extend_from_slice(table.row_slice(r));
    }
    Tensor::new(vec![rows.len(), d], data)
}

fn matmul_vals<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(Error::ShapeMismatch {
            kind: OpKind::MatMul,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut data = vec![S::zero(); m * n];
    for i in 0..m {
        let arow = a.row_slice(i);
        for (kk, &av) in arow.iter().enumerate().take(k) {
            let brow = b.row_slice(kk);
            let out = &mut data[i * n..(i + 1) * n];
            for (o, &bv) in out.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(vec![m, n], data)
}

/// g · bᵀ without materializing the transpose.
fn matmul_nt<S: Scalar>(g: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
    let (m, n) = (g.shape()[0], g.shape()[1]);
    let k = b.shape()[0];
    let mut data = vec![S::zero(); m * k];
    for i in 0..m {
        let grow = g.row_slice(i);
        for kk in 0..k {
            let brow = b.row_slice(kk);
            let mut s = S::zero();
            for (gv, bv) in grow.iter().zip(brow) {
                s += *gv * *bv;
            }
            data[i * k + kk] = s;
        }
    }
    debug_assert_eq!(b.shape()[1], n);
    Tensor::new(vec![m, k], data).expect("matmul_nt shape")
}

/// aᵀ · g without materializing the transpose.
fn matmul_tn<S: Scalar>(a: &Tensor<S>, g: &Tensor<S>) -> Tensor<S> {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = g.shape()[1];
    let mut data = vec![S::zero(); k * n];
    for i in 0..m {
        let arow = a.row_slice(i);
        let grow = g.row_slice(i);
        for (kk, &av) in arow.iter().enumerate().take(k) {
            let out = &mut data[kk * n..(kk + 1) * n];
            for (o, &gv) in out.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
    Tensor::new(vec![k, n], data).expect("matmul_tn shape")
}

fn hadamard<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| *x * *y)
        .collect();
    Tensor::new(a.shape().to_vec(), data).expect("hadamard shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t2(rows: &[Vec<f64>]) -> Tensor<f64> {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::new();
        let a = tape.constant(t2(&[vec![1.0, 2.0], vec![3.0, 4.0]])).unwrap();
        let i = tape.constant(t2(&[vec![1.0, 0.0], vec![0.0, 1.0]])).unwrap();
        let c = tape.matmul(a, i).unwrap();
        assert_eq!(tape.value(c).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_hand_case() {
        let mut tape = Tape::new();
        let a = tape.constant(t2(&[vec![1.0, 2.0]])).unwrap();
        let b = tape.constant(t2(&[vec![3.0], vec![5.0]])).unwrap();
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[13.0]);
    }

    #[test]
    fn relu_definition() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::row(vec![-1.0, 0.0, 2.5])).unwrap();
        let y = tape.relu(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.5]);
    }

    #[test]
    fn softmax_symmetry() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::row(vec![0.0, 0.0])).unwrap();
        let y = tape.softmax(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut tape = Tape::<f64>::new();
        let x = tape
            .constant(t2(&[vec![500.0, 499.0, -3.0], vec![-1e4, 0.0, 1.0]]))
            .unwrap();
        let y = tape.softmax(x).unwrap();
        for r in 0..2 {
            let s: f64 = tape.value(y).row_slice(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
            assert!(tape.value(y).row_slice(r).iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn shape_mismatch_names_kind_and_shapes() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(t2(&[vec![1.0, 2.0]])).unwrap();
        let b = tape.constant(t2(&[vec![1.0, 2.0, 3.0]])).unwrap();
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("matmul"), "{err}");
        assert!(err.contains("[1, 2]") && err.contains("[1, 3]"), "{err}");
    }

    #[test]
    fn non_finite_rejected() {
        let mut tape = Tape::<f64>::new();
        assert!(tape.constant(Tensor::row(vec![f64::NAN])).is_err());
        let big = tape.constant(Tensor::row(vec![1e308])).unwrap();
        assert!(tape.mul(big, big).is_err());
    }

    #[test]
    fn backward_square() {
        // d(x·x)/dx = 2x at x = 3
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::row(vec![3.0]));
        let mut tape = Tape::new();
        let xv = tape.param(&store, x).unwrap();
        let sq = tape.mul(xv, xv).unwrap();
        let loss = tape.reduce_sum(sq).unwrap();
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad(x).data(), &[6.0]);
    }

    #[test]
    fn backward_zero_scale() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::row(vec![1.0, -2.0, 3.0]));
        let mut tape = Tape::new();
        let xv = tape.param(&store, x).unwrap();
        let s = tape.scale(xv, 0.0).unwrap();
        let loss = tape.reduce_sum(s).unwrap();
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad(x).data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn backward_sigmoid_at_zero() {
        let mut store = ParamStore::<f64>::new();
        let x = store.add("x", Tensor::row(vec![0.0]));
        let mut tape = Tape::new();
        let xv = tape.param(&store, x).unwrap();
        let s = tape.sigmoid(xv).unwrap();
        let loss = tape.reduce_sum(s).unwrap();
        tape.backward(loss, &mut store).unwrap();
        assert!((store.grad(x).data()[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::row(vec![1.0, 2.0]));
        let mut tape = Tape::new();
        let xv = tape.param(&store, x).unwrap();
        assert!(matches!(
            tape.backward(xv, &mut store),
            Err(Error::LossNotScalar { .. })
        ));
    }

    #[test]
    fn gather_duplicates_accumulate() {
        let mut store = ParamStore::new();
        let t = store.add("t", t2(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let mut tape = Tape::new();
        let rows = tape.param_rows(&store, t, &[0, 0]).unwrap();
        let loss_in = tape.reduce_sum(rows).unwrap();
        tape.backward(loss_in, &mut store).unwrap();
        assert_eq!(store.grad(t).data(), &[2.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn gather_out_of_bounds_rejected() {
        let mut tape = Tape::<f64>::new();
        let t = tape.constant(t2(&[vec![1.0, 2.0]])).unwrap();
        assert!(matches!(
            tape.gather(t, &[1]),
            Err(Error::RowOutOfBounds { index: 1, rows: 1 })
        ));
    }

    #[test]
    fn concat_then_split_recovers_operands() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(t2(&[vec![1.0], vec![2.0]])).unwrap();
        let b = tape.constant(t2(&[vec![3.0, 4.0], vec![5.0, 6.0]])).unwrap();
        let c = tape.concat(&[a, b]).unwrap();
        let parts = tape.value(c).split_last_axis(&[1, 2]).unwrap();
        assert_eq!(&parts[0], tape.value(a));
        assert_eq!(&parts[1], tape.value(b));
    }

    #[test]
    fn apply_dispatches_all_kinds() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(t2(&[vec![1.0, -2.0], vec![3.0, 4.0]])).unwrap();
        let b = tape.constant(t2(&[vec![1.0, 0.0], vec![0.0, 1.0]])).unwrap();
        let idx = tape.constant(Tensor::row(vec![1.0, 0.0])).unwrap();
        let c = tape.constant(Tensor::scalar(2.0)).unwrap();
        for (kind, ops) in [
            (OpKind::MatMul, vec![a, b]),
            (OpKind::Add, vec![a, b]),
            (OpKind::Multiply, vec![a, b]),
            (OpKind::ConcatLastAxis, vec![a, b]),
            (OpKind::Scale, vec![a, c]),
            (OpKind::Relu, vec![a]),
            (OpKind::Sigmoid, vec![a]),
            (OpKind::Tanh, vec![a]),
            (OpKind::SoftmaxLastAxis, vec![a]),
            (OpKind::EmbeddingGather, vec![a, idx]),
            (OpKind::ReduceSum, vec![a]),
            (OpKind::Transpose, vec![a]),
            (OpKind::LogSumExp, vec![a]),
        ] {
            tape.apply(kind, &ops).unwrap_or_else(|e| panic!("{kind}: {e}"));
        }
    }

    #[test]
    fn apply_gather_rejects_fractional_index() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(t2(&[vec![1.0, 2.0]])).unwrap();
        let idx = tape.constant(Tensor::row(vec![0.5])).unwrap();
        assert!(tape.apply(OpKind::EmbeddingGather, &[a, idx]).is_err());
    }

    #[test]
    fn add_broadcast_row_backward() {
        let mut store = ParamStore::new();
        let b = store.add("b", Tensor::row(vec![1.0, 2.0]));
        let mut tape = Tape::new();
        let x = tape.constant(t2(&[vec![1.0, 1.0], vec![2.0, 2.0], vec![3.0, 3.0]])).unwrap();
        let bv = tape.param(&store, b).unwrap();
        let y = tape.add(x, bv).unwrap();
        assert_eq!(tape.value(y).data(), &[2.0, 3.0, 3.0, 4.0, 4.0, 5.0]);
        let loss = tape.reduce_sum(y).unwrap();
        tape.backward(loss, &mut store).unwrap();
        // each bias entry feeds 3 rows
        assert_eq!(store.grad(b).data(), &[3.0, 3.0]);
    }
}
