//! Reverse-mode differentiation over dense matrices.
//!
//! Every operation evaluates eagerly and appends a record to the [`Tape`].
//! Records are stored in creation order, which is a topological order, so
//! [`Tape::backward`] walks them once from the end.

use super::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// The dimension an operation normalises or reduces over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Over the row index: softmax columns sum to one, mean yields `1 x cols`.
    Rows,
    /// Over the column index: softmax rows sum to one, mean yields `rows x 1`.
    Cols,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    AddCol(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Affine(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softmax(Var, Axis),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    Mean(Var, Axis),
    Sum(Var),
    GatherRows(Var, Vec<usize>),
    Cosine {
        a: Var,
        b: Var,
        norm_a: f64,
        norm_b: f64,
    },
    CrossEntropy {
        logits: Var,
        label: usize,
        probs: Vec<f64>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::AddCol(..) => "add_col",
            Op::MulRow(..) => "mul_row",
            Op::MulCol(..) => "mul_col",
            Op::Affine(..) => "affine",
            Op::Relu(..) => "relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Tanh(..) => "tanh",
            Op::Softmax(..) => "softmax",
            Op::ConcatRows(..) => "concat_rows",
            Op::ConcatCols(..) => "concat_cols",
            Op::Mean(..) => "mean",
            Op::Sum(..) => "sum",
            Op::GatherRows(..) => "gather_rows",
            Op::Cosine { .. } => "cosine",
            Op::CrossEntropy { .. } => "cross_entropy",
        }
    }
}

#[derive(Debug, Clone)]
struct Record {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    records: Vec<Record>,
    zero_norm_cosines: usize,
    relu_fault: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
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

fn softmax_groups(x: &Tensor, axis: Axis) -> Tensor {
    let mut out = x.clone();
    let (r, c) = (x.rows(), x.cols());
    let (groups, len) = match axis {
        Axis::Rows => (c, r),
        Axis::Cols => (r, c),
    };
    let idx = |g: usize, k: usize| match axis {
        Axis::Rows => k * c + g,
        Axis::Cols => g * c + k,
    };
    let data = out.data_mut();
    for g in 0..groups {
        let mut max = f64::NEG_INFINITY;
        for k in 0..len {
            max = max.max(data[idx(g, k)]);
        }
        let mut total = 0.0;
        for k in 0..len {
            let e = (data[idx(g, k)] - max).exp();
            data[idx(g, k)] = e;
            total += e;
        }
        for k in 0..len {
            data[idx(g, k)] /= total;
        }
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.records[v.0].value
    }

    /// Every variable on the tape, in creation order.
    pub fn vars(&self) -> impl Iterator<Item = Var> {
        (0..self.records.len()).map(Var)
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.records[v.0].op.name()
    }

    /// Makes ReLU pass gradients through unchanged everywhere. Only useful
    /// for checking that [`super::gradient_check`] detects a wrong backward rule.
    #[doc(hidden)]
    pub fn inject_relu_fault(&mut self) {
        self.relu_fault = true;
    }

    /// Number of cosine evaluations that hit a zero-norm input.
    pub fn zero_norm_cosines(&self) -> usize {
        self.zero_norm_cosines
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.records[v.0].requires_grad);
        self.records.push(Record {
            value,
            op,
            requires_grad,
        });
        Var(self.records.len() - 1)
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.records.push(Record {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.records.len() - 1)
    }

    /// A non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.records.push(Record {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.records.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        self.push(value, Op::MatMul(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a), &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip(self.value(b), |x, y| x + y);
        self.push(value, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip(self.value(b), |x, y| x - y);
        self.push(value, Op::Sub(a, b), &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip(self.value(b), |x, y| x * y);
        self.push(value, Op::Mul(a, b), &[a, b])
    }

    /// `x + 1 r` for an `n x d` matrix and a `1 x d` row.
    pub fn add_row(&mut self, x: Var, r: Var) -> Var {
        let value = self.broadcast(x, r, true, |a, b| a + b);
        self.push(value, Op::AddRow(x, r), &[x, r])
    }

    /// `x + c 1^T` for an `n x d` matrix and an `n x 1` column.
    pub fn add_col(&mut self, x: Var, c: Var) -> Var {
        let value = self.broadcast(x, c, false, |a, b| a + b);
        self.push(value, Op::AddCol(x, c), &[x, c])
    }

    /// Scales every row of `x` elementwise by the `1 x d` row `r`.
    pub fn mul_row(&mut self, x: Var, r: Var) -> Var {
        let value = self.broadcast(x, r, true, |a, b| a * b);
        self.push(value, Op::MulRow(x, r), &[x, r])
    }

    /// Scales row `i` of `x` by `c[i]` for an `n x 1` column `c`.
    pub fn mul_col(&mut self, x: Var, c: Var) -> Var {
        let value = self.broadcast(x, c, false, |a, b| a * b);
        self.push(value, Op::MulCol(x, c), &[x, c])
    }

    fn broadcast(&self, x: Var, y: Var, by_row: bool, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (xv, yv) = (self.value(x), self.value(y));
        let (n, d) = (xv.rows(), xv.cols());
        if by_row {
            assert_eq!(
                yv.shape(),
                [1, d],
                "row broadcast needs 1x{d}, got {:?}",
                yv.shape()
            );
        } else {
            assert_eq!(
                yv.shape(),
                [n, 1],
                "column broadcast needs {n}x1, got {:?}",
                yv.shape()
            );
        }
        let mut out = xv.clone();
        for i in 0..n {
            for j in 0..d {
                let b = if by_row { yv.get(0, j) } else { yv.get(i, 0) };
                out.set(i, j, f(xv.get(i, j), b));
            }
        }
        out
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let value = self.value(x).map(|v| scale * v + shift);
        self.push(value, Op::Affine(x, scale), &[x])
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.affine(x, s, 0.0)
    }

    /// `1 - x`.
    pub fn one_minus(&mut self, x: Var) -> Var {
        self.affine(x, -1.0, 1.0)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        self.push(value, Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid);
        self.push(value, Op::Sigmoid(x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::tanh);
        self.push(value, Op::Tanh(x), &[x])
    }

    /// Max-shifted softmax over `axis`.
    pub fn softmax(&mut self, x: Var, axis: Axis) -> Var {
        let value = softmax_groups(self.value(x), axis);
        self.push(value, Op::Softmax(x, axis), &[x])
    }

    /// Stacks matrices with equal column counts vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let v = self.value(*p);
            assert_eq!(v.cols(), cols, "concat_rows column mismatch");
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        self.push(
            Tensor::new(rows, cols, data),
            Op::ConcatRows(parts.to_vec()),
            parts,
        )
    }

    /// Joins matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut out = Tensor::zeros(rows, cols);
        let mut offset = 0;
        for p in parts {
            let v = self.value(*p);
            assert_eq!(v.rows(), rows, "concat_cols row mismatch");
            for i in 0..rows {
                for j in 0..v.cols() {
                    out.set(i, offset + j, v.get(i, j));
                }
            }
            offset += v.cols();
        }
        self.push(out, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn mean(&mut self, x: Var, axis: Axis) -> Var {
        let v = self.value(x);
        let (r, c) = (v.rows(), v.cols());
        let value = match axis {
            Axis::Rows => {
                assert!(r > 0, "mean over zero rows");
                let mut out = Tensor::zeros(1, c);
                for i in 0..r {
                    for j in 0..c {
                        out.data_mut()[j] += v.get(i, j);
                    }
                }
                out.scale(1.0 / r as f64)
            }
            Axis::Cols => {
                assert!(c > 0, "mean over zero columns");
                Tensor::column(
                    (0..r)
                        .map(|i| v.row_slice(i).iter().sum::<f64>() / c as f64)
                        .collect(),
                )
            }
        };
        self.push(value, Op::Mean(x, axis), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        self.push(value, Op::Sum(x), &[x])
    }

    /// Selects rows by index; indices may repeat.
    pub fn gather_rows(&mut self, x: Var, indices: &[usize]) -> Var {
        let v = self.value(x);
        let c = v.cols();
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            assert!(
                i < v.rows(),
                "gather index {i} out of range for {} rows",
                v.rows()
            );
            data.extend_from_slice(v.row_slice(i));
        }
        let value = Tensor::new(indices.len(), c, data);
        self.push(value, Op::GatherRows(x, indices.to_vec()), &[x])
    }

    /// Cosine similarity of two equally shaped tensors, read as flat vectors.
    /// A zero-norm input yields 0 with zero gradient and bumps
    /// [`Tape::zero_norm_cosines`].
    pub fn cosine(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "cosine shape mismatch");
        let norm_a = av.norm();
        let norm_b = bv.norm();
        let value = if norm_a == 0.0 || norm_b == 0.0 {
            self.zero_norm_cosines += 1;
            0.0
        } else {
            let dot: f64 = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).sum();
            (dot / (norm_a * norm_b)).clamp(-1.0, 1.0)
        };
        self.push(
            Tensor::scalar(value),
            Op::Cosine {
                a,
                b,
                norm_a,
                norm_b,
            },
            &[a, b],
        )
    }

    /// `-log softmax(logits)[label]` for a vector of logits (any orientation).
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Var {
        let z = self.value(logits);
        assert!(
            label < z.len(),
            "label {label} out of range for {} logits",
            z.len()
        );
        let max = z.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = z.data().iter().map(|v| (v - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let loss = total.ln() + max - z.data()[label];
        let probs = exps.iter().map(|e| e / total).collect();
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                label,
                probs,
            },
            &[logits],
        )
    }

    /// Back-propagates from the scalar `root`.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(
            self.value(root).shape(),
            [1, 1],
            "backward root must be a scalar"
        );
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=root.0).rev() {
            let record = &self.records[idx];
            if !record.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let out = &record.value;
            let mut acc = |v: Var, delta: Tensor| {
                if !self.records[v.0].requires_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(existing) => existing.add_assign(&delta),
                    slot @ None => *slot = Some(delta),
                }
            };
            match &record.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    acc(*a, g.matmul(&bv.transpose()));
                    acc(*b, av.transpose().matmul(&g));
                }
                Op::Transpose(a) => acc(*a, g.transpose()),
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
                Op::Sub(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g.scale(-1.0));
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    acc(*a, g.zip(bv, |x, y| x * y));
                    acc(*b, g.zip(av, |x, y| x * y));
                }
                Op::AddRow(x, r) => {
                    let mut dr = Tensor::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for j in 0..g.cols() {
                            dr.data_mut()[j] += g.get(i, j);
                        }
                    }
                    acc(*r, dr);
                    acc(*x, g);
                }
                Op::AddCol(x, c) => {
                    let dc = Tensor::column(
                        (0..g.rows()).map(|i| g.row_slice(i).iter().sum()).collect(),
                    );
                    acc(*c, dc);
                    acc(*x, g);
                }
                Op::MulRow(x, r) => {
                    let (xv, rv) = (self.value(*x), self.value(*r));
                    let mut dx = g.clone();
                    let mut dr = Tensor::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for j in 0..g.cols() {
                            dx.set(i, j, g.get(i, j) * rv.get(0, j));
                            dr.data_mut()[j] += g.get(i, j) * xv.get(i, j);
                        }
                    }
                    acc(*x, dx);
                    acc(*r, dr);
                }
                Op::MulCol(x, c) => {
                    let (xv, cv) = (self.value(*x), self.value(*c));
                    let mut dx = g.clone();
                    let mut dc = Tensor::zeros(g.rows(), 1);
                    for i in 0..g.rows() {
                        for j in 0..g.cols() {
                            dx.set(i, j, g.get(i, j) * cv.get(i, 0));
                            dc.data_mut()[i] += g.get(i, j) * xv.get(i, j);
                        }
                    }
                    acc(*x, dx);
                    acc(*c, dc);
                }
                Op::Affine(x, s) => acc(*x, g.scale(*s)),
                Op::Relu(x) => {
                    let xv = self.value(*x);
                    let corrupt = self.relu_fault;
                    let dx = g.zip(xv, |gi, xi| if xi > 0.0 || corrupt { gi } else { 0.0 });
                    acc(*x, dx);
                }
                Op::Sigmoid(x) => acc(*x, g.zip(out, |gi, y| gi * y * (1.0 - y))),
                Op::Tanh(x) => acc(*x, g.zip(out, |gi, y| gi * (1.0 - y * y))),
                Op::Softmax(x, axis) => {
                    let (r, c) = (out.rows(), out.cols());
                    let mut dx = Tensor::zeros(r, c);
                    match axis {
                        Axis::Rows => {
                            for j in 0..c {
                                let dot: f64 = (0..r).map(|i| g.get(i, j) * out.get(i, j)).sum();
                                for i in 0..r {
                                    dx.set(i, j, out.get(i, j) * (g.get(i, j) - dot));
                                }
                            }
                        }
                        Axis::Cols => {
                            for i in 0..r {
                                let dot: f64 = (0..c).map(|j| g.get(i, j) * out.get(i, j)).sum();
                                for j in 0..c {
                                    dx.set(i, j, out.get(i, j) * (g.get(i, j) - dot));
                                }
                            }
                        }
                    }
                    acc(*x, dx);
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let pv = self.value(*p);
                        let n = pv.len();
                        let slice = g.data()[offset..offset + n].to_vec();
                        acc(*p, Tensor::new(pv.rows(), pv.cols(), slice));
                        offset += n;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let pv = self.value(*p);
                        let mut dp = Tensor::zeros(pv.rows(), pv.cols());
                        for i in 0..pv.rows() {
                            for j in 0..pv.cols() {
                                dp.set(i, j, g.get(i, offset + j));
                            }
                        }
                        acc(*p, dp);
                        offset += pv.cols();
                    }
                }
                Op::Mean(x, axis) => {
                    let xv = self.value(*x);
                    let (r, c) = (xv.rows(), xv.cols());
                    let mut dx = Tensor::zeros(r, c);
                    for i in 0..r {
                        for j in 0..c {
                            let v = match axis {
                                Axis::Rows => g.get(0, j) / r as f64,
                                Axis::Cols => g.get(i, 0) / c as f64,
                            };
                            dx.set(i, j, v);
                        }
                    }
                    acc(*x, dx);
                }
                Op::Sum(x) => {
                    let xv = self.value(*x);
                    acc(*x, Tensor::filled(xv.rows(), xv.cols(), g.item()));
                }
                Op::GatherRows(x, indices) => {
                    let xv = self.value(*x);
                    let c = xv.cols();
                    let mut dx = Tensor::zeros(xv.rows(), c);
                    for (k, &i) in indices.iter().enumerate() {
                        for j in 0..c {
                            dx.data_mut()[i * c + j] += g.get(k, j);
                        }
                    }
                    acc(*x, dx);
                }
                Op::Cosine {
                    a,
                    b,
                    norm_a,
                    norm_b,
                } => {
                    if *norm_a == 0.0 || *norm_b == 0.0 {
                        continue;
                    }
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let cos = out.item();
                    let gs = g.item();
                    let denom = norm_a * norm_b;
                    let da = bv.zip(av, |bi, ai| {
                        gs * (bi / denom - cos * ai / (norm_a * norm_a))
                    });
                    let db = av.zip(bv, |ai, bi| {
                        gs * (ai / denom - cos * bi / (norm_b * norm_b))
                    });
                    acc(*a, da);
                    acc(*b, db);
                }
                Op::CrossEntropy {
                    logits,
                    label,
                    probs,
                } => {
                    let zv = self.value(*logits);
                    let gs = g.item();
                    let mut dz = Tensor::new(zv.rows(), zv.cols(), probs.clone());
                    dz.data_mut()[*label] -= 1.0;
                    acc(*logits, dz.scale(gs));
                }
            }
        }
        Gradients { grads }
    }
}
