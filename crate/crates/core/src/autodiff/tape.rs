use std::collections::HashMap;
use std::sync::Arc;

use crate::autodiff::array::gemm_acc;
use crate::autodiff::sparse::{Segments, SparseMatrix};
use crate::autodiff::{DenseArray, ParameterStore};
use crate::error::{dim_err, GdgmError, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Which primitive produced a node.
#[derive(Clone, Debug)]
pub enum Op {
    Leaf,
    Param(String),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, f64, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Log(Var, f64),
    Concat(Vec<Var>, usize),
    Slice(Var, usize, usize, usize),
    Sum(Var),
    Mean(Var),
    SumAxis(Var, usize),
    Softmax(Var, usize),
    GatherRows(Var, Arc<Vec<usize>>),
    SparseMul(Arc<SparseMatrix>, Var),
    SegmentMean(Var, Arc<Segments>),
    SegmentAttention {
        center: Var,
        member: Var,
        values: Var,
        segments: Arc<Segments>,
        slope: f64,
    },
}

impl Op {
    pub fn tag(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Affine(..) => "affine",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Relu(_) => "relu",
            Op::LeakyRelu(..) => "leakyrelu",
            Op::Log(..) => "log",
            Op::Concat(..) => "concat",
            Op::Slice(..) => "slice",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::SumAxis(..) => "sum_axis",
            Op::Softmax(..) => "softmax",
            Op::GatherRows(..) => "gather_rows",
            Op::SparseMul(..) => "sparse_mul",
            Op::SegmentMean(..) => "segment_mean",
            Op::SegmentAttention { .. } => "segment_attention",
        }
    }
}

/// One recorded value with the primitive that produced it.
#[derive(Debug)]
pub struct CompNode {
    pub value: DenseArray,
    pub grad: Option<DenseArray>,
    pub op: Op,
}

/// Elementwise kinds accepted by [`Tape::elementwise`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Elementwise {
    Sigmoid,
    Tanh,
    Relu,
    LeakyRelu(f64),
    Add,
    Mul,
    Concat(usize),
    Mean,
    Sum,
}

/// Append-only record of a forward pass. Nodes only ever reference earlier
/// nodes, so index order is a topological order.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<CompNode>,
    params: HashMap<String, Var>,
}

fn broadcast_shape(op: &'static str, a: &DenseArray, b: &DenseArray) -> Result<(usize, usize)> {
    if !a.is_matrix() || !b.is_matrix() {
        return Err(dim_err(op, "rank-2 operands", format!("{:?} and {:?}", a.shape(), b.shape())));
    }
    let dim = |x: usize, y: usize| -> Option<usize> {
        if x == y {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else if y == 1 {
            Some(x)
        } else {
            None
        }
    };
    match (dim(a.rows(), b.rows()), dim(a.cols(), b.cols())) {
        (Some(r), Some(c)) => Ok((r, c)),
        _ => Err(dim_err(
            op,
            "broadcast-compatible shapes",
            format!("{:?} and {:?}", a.shape(), b.shape()),
        )),
    }
}

#[inline]
fn bidx(a: &DenseArray, i: usize, j: usize) -> usize {
    let r = if a.rows() == 1 { 0 } else { i };
    let c = if a.cols() == 1 { 0 } else { j };
    r * a.cols() + c
}

fn binary_broadcast(a: &DenseArray, b: &DenseArray, rows: usize, cols: usize, f: impl Fn(f64, f64) -> f64) -> DenseArray {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return DenseArray::from_vec(rows, cols, data);
    }
    let mut out = DenseArray::zeros(rows, cols);
    let (ad, bd) = (a.data(), b.data());
    let od = out.data_mut();
    for i in 0..rows {
        for j in 0..cols {
            od[i * cols + j] = f(ad[bidx(a, i, j)], bd[bidx(b, i, j)]);
        }
    }
    out
}

/// Sum a gradient of the broadcast shape back to `target`'s shape.
fn reduce_to(g: &DenseArray, target: &DenseArray) -> DenseArray {
    if g.shape() == target.shape() {
        return g.clone();
    }
    let mut out = DenseArray::zeros(target.rows(), target.cols());
    let (rows, cols) = (g.rows(), g.cols());
    let gd = g.data();
    for i in 0..rows {
        for j in 0..cols {
            let k = bidx(target, i, j);
            out.data_mut()[k] += gd[i * cols + j];
        }
    }
    out
}

fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
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

/// Per-segment attention weights; empty segments yield an empty vector.
pub(crate) fn attention_weights(center: &[f64], member: &[f64], segs: &Segments, slope: f64, s: usize) -> Vec<f64> {
    let c = segs.center(s);
    let members = segs.members(s);
    if members.is_empty() {
        return Vec::new();
    }
    let scores: Vec<f64> = members.iter().map(|&u| leaky(center[c] + member[u], slope)).collect();
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|&e| (e - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
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

    fn push(&mut self, value: DenseArray, op: Op) -> Var {
        self.nodes.push(CompNode { value, grad: None, op });
        Var(self.nodes.len() - 1)
    }

    pub fn node(&self, v: Var) -> &CompNode {
        &self.nodes[v.0]
    }

    pub fn value(&self, v: Var) -> &DenseArray {
        &self.nodes[v.0].value
    }

    /// Gradient from the most recent backward pass, if `v` was reached.
    pub fn grad(&self, v: Var) -> Option<&DenseArray> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Constant or input node.
    pub fn leaf(&mut self, value: DenseArray) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn constant(&mut self, value: DenseArray) -> Var {
        self.leaf(value)
    }

    /// Register a parameter from `store` on this tape; repeated requests for
    /// one name return the same node.
    pub fn param(&mut self, store: &ParameterStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let value = store
            .value(name)
            .ok_or_else(|| GdgmError::UnknownParameter(name.to_string()))?
            .clone();
        let v = self.push(value, Op::Param(name.to_string()));
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let (r, c) = broadcast_shape("add", va, vb)?;
        let value = binary_broadcast(va, vb, r, c, |x, y| x + y);
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let (r, c) = broadcast_shape("sub", va, vb)?;
        let value = binary_broadcast(va, vb, r, c, |x, y| x - y);
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let (r, c) = broadcast_shape("mul", va, vb)?;
        let value = binary_broadcast(va, vb, r, c, |x, y| x * y);
        Ok(self.push(value, Op::Mul(a, b)))
    }

    /// `scale * a + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let value = self.value(a).map(|x| scale * x + shift);
        self.push(value, Op::Affine(a, scale, shift))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.affine(a, s, 0.0)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        self.push(value, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        self.push(value, Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let value = self.value(a).map(|x| leaky(x, slope));
        self.push(value, Op::LeakyRelu(a, slope))
    }

    /// Natural log with the argument clamped from below at `floor`.
    pub fn log(&mut self, a: Var, floor: f64) -> Var {
        let value = self.value(a).map(|x| x.max(floor).ln());
        self.push(value, Op::Log(a, floor))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(GdgmError::Empty("concat"));
        }
        if axis > 1 {
            return Err(GdgmError::InvalidArgument(format!("concat axis {axis}")));
        }
        let first = self.value(parts[0]);
        let (r0, c0) = (first.rows(), first.cols());
        for &p in parts {
            let v = self.value(p);
            let ok = if axis == 0 { v.cols() == c0 } else { v.rows() == r0 };
            if !ok {
                return Err(dim_err("concat", format!("matching extents off axis {axis}"), format!("{:?}", v.shape())));
            }
        }
        let value = if axis == 0 {
            let rows: usize = parts.iter().map(|&p| self.value(p).rows()).sum();
            let mut data = Vec::with_capacity(rows * c0);
            for &p in parts {
                data.extend_from_slice(self.value(p).data());
            }
            DenseArray::from_vec(rows, c0, data)
        } else {
            let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
            let mut data = Vec::with_capacity(r0 * cols);
            for i in 0..r0 {
                for &p in parts {
                    data.extend_from_slice(self.value(p).row_slice(i));
                }
            }
            DenseArray::from_vec(r0, cols, data)
        };
        Ok(self.push(value, Op::Concat(parts.to_vec(), axis)))
    }

    /// Half-open range `[start, end)` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let v = self.value(a);
        let extent = if axis == 0 { v.rows() } else { v.cols() };
        if axis > 1 || start > end || end > extent {
            return Err(dim_err("slice", format!("range within {extent} on axis {axis}"), format!("{start}..{end}")));
        }
        let value = if axis == 0 {
            let c = v.cols();
            DenseArray::from_vec(end - start, c, v.data()[start * c..end * c].to_vec())
        } else {
            let mut data = Vec::with_capacity(v.rows() * (end - start));
            for i in 0..v.rows() {
                data.extend_from_slice(&v.row_slice(i)[start..end]);
            }
            DenseArray::from_vec(v.rows(), end - start, data)
        };
        Ok(self.push(value, Op::Slice(a, axis, start, end)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = DenseArray::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        if v.is_empty() {
            return Err(GdgmError::Empty("mean"));
        }
        let value = DenseArray::scalar(v.sum() / v.len() as f64);
        Ok(self.push(value, Op::Mean(a)))
    }

    /// Sum along `axis`, keeping it as an extent of 1.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let v = self.value(a);
        let (r, c) = (v.rows(), v.cols());
        let value = match axis {
            0 => {
                let mut out = DenseArray::zeros(1, c);
                for i in 0..r {
                    for (o, x) in out.data_mut().iter_mut().zip(v.row_slice(i)) {
                        *o += x;
                    }
                }
                out
            }
            1 => DenseArray::from_vec(r, 1, (0..r).map(|i| v.row_slice(i).iter().sum()).collect()),
            _ => return Err(GdgmError::InvalidArgument(format!("sum axis {axis}"))),
        };
        Ok(self.push(value, Op::SumAxis(a, axis)))
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let v = self.value(a);
        if v.is_empty() {
            return Err(GdgmError::Empty("softmax"));
        }
        let value = match axis {
            1 => {
                let mut out = v.clone();
                for i in 0..out.rows() {
                    softmax_in_place(out.row_slice_mut(i));
                }
                out
            }
            0 => {
                let mut t = v.transpose();
                for i in 0..t.rows() {
                    softmax_in_place(t.row_slice_mut(i));
                }
                t.transpose()
            }
            _ => return Err(GdgmError::InvalidArgument(format!("softmax axis {axis}"))),
        };
        Ok(self.push(value, Op::Softmax(a, axis)))
    }

    pub fn gather_rows(&mut self, a: Var, idx: Arc<Vec<usize>>) -> Result<Var> {
        let v = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= v.rows()) {
            return Err(dim_err("gather_rows", format!("row index < {}", v.rows()), bad.to_string()));
        }
        let value = v.gather_rows(&idx);
        Ok(self.push(value, Op::GatherRows(a, idx)))
    }

    pub fn sparse_mul(&mut self, m: Arc<SparseMatrix>, x: Var) -> Result<Var> {
        let v = self.value(x);
        if v.rows() != m.n_cols() {
            return Err(dim_err("sparse_mul", format!("{} rows", m.n_cols()), format!("{}", v.rows())));
        }
        let value = m.mul_dense(v);
        Ok(self.push(value, Op::SparseMul(m, x)))
    }

    /// Row `s` of the output is the mean of `values` over `members(s)`
    /// (zero for an empty segment).
    pub fn segment_mean(&mut self, values: Var, segments: Arc<Segments>) -> Result<Var> {
        let v = self.value(values);
        check_segments("segment_mean", &segments, v.rows())?;
        let d = v.cols();
        let mut out = DenseArray::zeros(segments.len(), d);
        for s in 0..segments.len() {
            let m = segments.members(s);
            if m.is_empty() {
                continue;
            }
            let inv = 1.0 / m.len() as f64;
            let dst = out.row_slice_mut(s);
            for &u in m {
                for (o, x) in dst.iter_mut().zip(v.row_slice(u)) {
                    *o += x;
                }
            }
            dst.iter_mut().for_each(|o| *o *= inv);
        }
        Ok(self.push(out, Op::SegmentMean(values, segments)))
    }

    /// Additive attention over segment members.
    ///
    /// For segment `s` with center `c`, member `u` scores
    /// `leaky(center[c] + member[u])`; the scores are softmax-normalized
    /// within the segment and used to average rows of `values`.
    pub fn segment_attention(
        &mut self,
        center: Var,
        member: Var,
        values: Var,
        segments: Arc<Segments>,
        slope: f64,
    ) -> Result<Var> {
        let (vc, vm, vv) = (self.value(center), self.value(member), self.value(values));
        if vc.cols() != 1 || vm.cols() != 1 || vm.rows() != vv.rows() {
            return Err(dim_err(
                "segment_attention",
                "n x 1 score columns matching value rows",
                format!("{:?}, {:?}, {:?}", vc.shape(), vm.shape(), vv.shape()),
            ));
        }
        check_segments("segment_attention", &segments, vv.rows().min(vc.rows()))?;
        let d = vv.cols();
        let mut out = DenseArray::zeros(segments.len(), d);
        for s in 0..segments.len() {
            let alpha = attention_weights(vc.data(), vm.data(), &segments, slope, s);
            let dst = out.row_slice_mut(s);
            for (&u, a) in segments.members(s).iter().zip(alpha) {
                for (o, x) in dst.iter_mut().zip(vv.row_slice(u)) {
                    *o += a * x;
                }
            }
        }
        Ok(self.push(
            out,
            Op::SegmentAttention {
                center,
                member,
                values,
                segments,
                slope,
            },
        ))
    }

    /// Dispatch by [`Elementwise`] kind.
    pub fn elementwise(&mut self, kind: Elementwise, args: &[Var]) -> Result<Var> {
        let arity = |n: usize| -> Result<()> {
            if args.len() == n {
                Ok(())
            } else {
                Err(GdgmError::InvalidArgument(format!("{kind:?} takes {n} argument(s), got {}", args.len())))
            }
        };
        match kind {
            Elementwise::Sigmoid => arity(1).map(|_| self.sigmoid(args[0])),
            Elementwise::Tanh => arity(1).map(|_| self.tanh(args[0])),
            Elementwise::Relu => arity(1).map(|_| self.relu(args[0])),
            Elementwise::LeakyRelu(s) => arity(1).map(|_| self.leaky_relu(args[0], s)),
            Elementwise::Add => {
                arity(2)?;
                self.add(args[0], args[1])
            }
            Elementwise::Mul => {
                arity(2)?;
                self.mul(args[0], args[1])
            }
            Elementwise::Concat(axis) => self.concat(args, axis),
            Elementwise::Mean => {
                arity(1)?;
                self.mean(args[0])
            }
            Elementwise::Sum => arity(1).map(|_| self.sum(args[0])),
        }
    }

    /// Reverse pass from a scalar `loss`. Gradients of earlier calls are
    /// discarded; only leaves and parameters keep theirs afterwards.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(dim_err("backward", "scalar loss", format!("{:?}", lv.shape())));
        }
        let (r, c) = (lv.rows(), lv.cols());
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.nodes[loss.0].grad = Some(DenseArray::full(r, c, 1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            self.propagate(i, &g);
            if matches!(self.nodes[i].op, Op::Leaf | Op::Param(_)) {
                self.nodes[i].grad = Some(g);
            }
        }
        Ok(())
    }

    /// Backward pass followed by accumulating parameter gradients into
    /// `store`. Calling twice without clearing the store doubles them.
    pub fn backward_into(&mut self, loss: Var, store: &mut ParameterStore) -> Result<()> {
        self.backward(loss)?;
        for (name, &v) in &self.params {
            if let Some(g) = &self.nodes[v.0].grad {
                store.accumulate_grad(name, g)?;
            }
        }
        Ok(())
    }

    fn acc(&mut self, v: Var, g: DenseArray) {
        let slot = &mut self.nodes[v.0].grad;
        match slot {
            Some(existing) => existing.add_assign(&g),
            None => *slot = Some(g),
        }
    }

    fn acc_with(&mut self, v: Var, f: impl FnOnce(&mut DenseArray)) {
        let node = &mut self.nodes[v.0];
        if node.grad.is_none() {
            node.grad = Some(DenseArray::zeros(node.value.rows(), node.value.cols()));
        }
        f(node.grad.as_mut().unwrap());
    }

    fn propagate(&mut self, i: usize, g: &DenseArray) {
        let op = self.nodes[i].op.clone();
        match op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(a).clone(), self.value(b).clone());
                self.acc_with(a, |ga| gemm_acc(g, false, &vb, true, ga));
                self.acc_with(b, |gb| gemm_acc(&va, true, g, false, gb));
            }
            Op::Add(a, b) => {
                let ga = reduce_to(g, self.value(a));
                let gb = reduce_to(g, self.value(b));
                self.acc(a, ga);
                self.acc(b, gb);
            }
            Op::Sub(a, b) => {
                let ga = reduce_to(g, self.value(a));
                let mut gb = reduce_to(g, self.value(b));
                gb.scale_in_place(-1.0);
                self.acc(a, ga);
                self.acc(b, gb);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(a), self.value(b));
                let (r, c) = (g.rows(), g.cols());
                let ga_full = binary_broadcast(g, vb, r, c, |x, y| x * y);
                let gb_full = binary_broadcast(g, va, r, c, |x, y| x * y);
                let ga = reduce_to(&ga_full, va);
                let gb = reduce_to(&gb_full, vb);
                self.acc(a, ga);
                self.acc(b, gb);
            }
            Op::Affine(a, s, _) => self.acc(a, g.map(|x| x * s)),
            Op::Sigmoid(a) => {
                let y = &self.nodes[i].value;
                let ga = DenseArray::from_vec(g.rows(), g.cols(), g.data().iter().zip(y.data()).map(|(g, y)| g * y * (1.0 - y)).collect());
                self.acc(a, ga);
            }
            Op::Tanh(a) => {
                let y = &self.nodes[i].value;
                let ga = DenseArray::from_vec(g.rows(), g.cols(), g.data().iter().zip(y.data()).map(|(g, y)| g * (1.0 - y * y)).collect());
                self.acc(a, ga);
            }
            Op::Relu(a) => {
                let x = self.value(a);
                let ga = DenseArray::from_vec(g.rows(), g.cols(), g.data().iter().zip(x.data()).map(|(g, x)| if *x > 0.0 { *g } else { 0.0 }).collect());
                self.acc(a, ga);
            }
            Op::LeakyRelu(a, slope) => {
                let x = self.value(a);
                let ga = DenseArray::from_vec(g.rows(), g.cols(), g.data().iter().zip(x.data()).map(|(g, x)| if *x > 0.0 { *g } else { slope * g }).collect());
                self.acc(a, ga);
            }
            Op::Log(a, floor) => {
                let x = self.value(a);
                let ga = DenseArray::from_vec(g.rows(), g.cols(), g.data().iter().zip(x.data()).map(|(g, x)| if *x > floor { g / x } else { 0.0 }).collect());
                self.acc(a, ga);
            }
            Op::Concat(parts, axis) => {
                let mut offset = 0;
                for p in parts {
                    let pv = self.value(p);
                    let (pr, pc) = (pv.rows(), pv.cols());
                    let gp = if axis == 0 {
                        DenseArray::from_vec(pr, pc, g.data()[offset * pc..(offset + pr) * pc].to_vec())
                    } else {
                        let mut data = Vec::with_capacity(pr * pc);
                        for r in 0..pr {
                            data.extend_from_slice(&g.row_slice(r)[offset..offset + pc]);
                        }
                        DenseArray::from_vec(pr, pc, data)
                    };
                    offset += if axis == 0 { pr } else { pc };
                    self.acc(p, gp);
                }
            }
            Op::Slice(a, axis, start, end) => {
                self.acc_with(a, |ga| {
                    if axis == 0 {
                        let c = ga.cols();
                        for (dst, src) in ga.data_mut()[start * c..end * c].iter_mut().zip(g.data()) {
                            *dst += src;
                        }
                    } else {
                        for r in 0..ga.rows() {
                            let dst = &mut ga.row_slice_mut(r)[start..end];
                            for (d, s) in dst.iter_mut().zip(g.row_slice(r)) {
                                *d += s;
                            }
                        }
                    }
                });
            }
            Op::Sum(a) => {
                let s = g.item();
                let v = self.value(a);
                self.acc(a, DenseArray::full(v.rows(), v.cols(), s));
            }
            Op::Mean(a) => {
                let v = self.value(a);
                let s = g.item() / v.len() as f64;
                self.acc(a, DenseArray::full(v.rows(), v.cols(), s));
            }
            Op::SumAxis(a, _) => {
                let ga = reduce_to_broadcast(g, self.value(a));
                self.acc(a, ga);
            }
            Op::Softmax(a, axis) => {
                let y = &self.nodes[i].value;
                let ga = if axis == 1 {
                    softmax_vjp_rows(y, g)
                } else {
                    softmax_vjp_rows(&y.transpose(), &g.transpose()).transpose()
                };
                self.acc(a, ga);
            }
            Op::GatherRows(a, idx) => {
                self.acc_with(a, |ga| {
                    for (k, &r) in idx.iter().enumerate() {
                        for (d, s) in ga.row_slice_mut(r).iter_mut().zip(g.row_slice(k)) {
                            *d += s;
                        }
                    }
                });
            }
            Op::SparseMul(m, x) => {
                self.acc_with(x, |gx| m.mul_dense_transposed_acc(g, gx));
            }
            Op::SegmentMean(values, segs) => {
                self.acc_with(values, |gv| {
                    for s in 0..segs.len() {
                        let m = segs.members(s);
                        if m.is_empty() {
                            continue;
                        }
                        let inv = 1.0 / m.len() as f64;
                        for &u in m {
                            for (d, x) in gv.row_slice_mut(u).iter_mut().zip(g.row_slice(s)) {
                                *d += inv * x;
                            }
                        }
                    }
                });
            }
            Op::SegmentAttention {
                center,
                member,
                values,
                segments,
                slope,
            } => {
                let vc = self.value(center).clone();
                let vm = self.value(member).clone();
                let vv = self.value(values).clone();
                let mut gc = DenseArray::zeros(vc.rows(), 1);
                let mut gm = DenseArray::zeros(vm.rows(), 1);
                let mut gv = DenseArray::zeros(vv.rows(), vv.cols());
                for s in 0..segments.len() {
                    let members = segments.members(s);
                    if members.is_empty() {
                        continue;
                    }
                    let c = segments.center(s);
                    let alpha = attention_weights(vc.data(), vm.data(), &segments, slope, s);
                    let gs = g.row_slice(s);
                    let dalpha: Vec<f64> = members
                        .iter()
                        .map(|&u| vv.row_slice(u).iter().zip(gs).map(|(x, y)| x * y).sum())
                        .collect();
                    let weighted: f64 = alpha.iter().zip(&dalpha).map(|(a, d)| a * d).sum();
                    for (k, &u) in members.iter().enumerate() {
                        for (d, x) in gv.row_slice_mut(u).iter_mut().zip(gs) {
                            *d += alpha[k] * x;
                        }
                        let de = alpha[k] * (dalpha[k] - weighted);
                        let pre = vc.data()[c] + vm.data()[u];
                        let dpre = if pre > 0.0 { de } else { slope * de };
                        gc.data_mut()[c] += dpre;
                        gm.data_mut()[u] += dpre;
                    }
                }
                self.acc(center, gc);
                self.acc(member, gm);
                self.acc(values, gv);
            }
        }
    }
}

fn check_segments(op: &'static str, segs: &Segments, rows: usize) -> Result<()> {
    match segs.max_index() {
        Some(m) if m >= rows => Err(dim_err(op, format!("indices < {rows}"), m.to_string())),
        _ => Ok(()),
    }
}

/// Broadcast a reduced gradient (extent 1 on some axis) back to `target`.
fn reduce_to_broadcast(g: &DenseArray, target: &DenseArray) -> DenseArray {
    let (r, c) = (target.rows(), target.cols());
    let mut out = DenseArray::zeros(r, c);
    for i in 0..r {
        for j in 0..c {
            out.data_mut()[i * c + j] = g.data()[bidx(g, i, j)];
        }
    }
    out
}

pub(crate) fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in xs.iter_mut() {
        *x /= total;
    }
}

fn softmax_vjp_rows(y: &DenseArray, g: &DenseArray) -> DenseArray {
    let mut out = DenseArray::zeros(y.rows(), y.cols());
    for i in 0..y.rows() {
        let (yr, gr) = (y.row_slice(i), g.row_slice(i));
        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for (o, (yv, gv)) in out.row_slice_mut(i).iter_mut().zip(yr.iter().zip(gr)) {
            *o = yv * (gv - dot);
        }
    }
    out
}
