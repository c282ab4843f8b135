use std::borrow::Cow;
use std::rc::Rc;

use super::tensor::matmul_into;
use super::{Gradients, NumericsError, ParamId, ParamStore, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Reduction axis for [`Graph::logsumexp`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Reduce over rows: `m x n -> 1 x n`.
    Rows,
    /// Reduce over columns: `m x n -> m x 1`.
    Cols,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Max2(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    LeakyRelu(Var, f64),
    MaskedSoftmax(Var),
    LogSumExp(Var, Axis),
    MaxPoolRows(Var, Vec<usize>),
    MeanPoolRows(Var),
    GatherRows(Var, Rc<[usize]>),
    SliceCols(Var, usize),
    SumAll(Var),
    RowSum(Var),
    Transpose(Var),
    Reshape(Var),
    SegmentSum(Var, usize),
}

struct Node<'s> {
    // Parameters are borrowed from the store rather than copied.
    value: Cow<'s, Tensor>,
    op: Op,
}

/// A computation graph over dense matrices with reverse-mode gradients.
///
/// Every operation evaluates eagerly and, when recording, remembers enough to
/// run [`Graph::backward`]. A non-recording graph (see [`Graph::inference`])
/// computes the same values but refuses to differentiate. Parameters are read
/// from a shared [`ParamStore`]; graphs never mutate it, so any number of
/// inference graphs may run over one store at the same time.
pub struct Graph<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node<'s>>,
    param_nodes: Vec<Option<Var>>,
    record: bool,
}

fn bcast_dims(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(usize, usize), NumericsError> {
    let (ar, ac) = a.dims();
    let (br, bc) = b.dims();
    let pick = |x: usize, y: usize| -> Option<usize> {
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
    match (pick(ar, br), pick(ac, bc)) {
        (Some(r), Some(c)) => Ok((r, c)),
        _ => Err(NumericsError::shape(op, a, b)),
    }
}

#[inline]
fn bidx(t: &Tensor, i: usize, j: usize) -> usize {
    let (r, c) = t.dims();
    (if r == 1 { 0 } else { i }) * c + if c == 1 { 0 } else { j }
}

fn binary_map(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor, NumericsError> {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect();
        return Ok(a.with_data(data));
    }
    let (r, c) = bcast_dims(op, a, b)?;
    let mut data = Vec::with_capacity(r * c);
    for i in 0..r {
        for j in 0..c {
            data.push(f(a.data()[bidx(a, i, j)], b.data()[bidx(b, i, j)]));
        }
    }
    Tensor::matrix(r, c, data)
}

/// Sums `grad` (shape of the broadcast output) back down to `target`'s shape.
fn reduce_to(grad: &Tensor, target: &Tensor, scale: impl Fn(usize, usize, f64) -> f64) -> Tensor {
    let mut out = Tensor::zeros_like(target);
    let (r, c) = grad.dims();
    let g = grad.data();
    let o = out.data_mut();
    if target.len() == grad.len() {
        for i in 0..r {
            for j in 0..c {
                o[i * c + j] += scale(i, j, g[i * c + j]);
            }
        }
        return out;
    }
    for i in 0..r {
        for j in 0..c {
            o[bidx(target, i, j)] += scale(i, j, g[i * c + j]);
        }
    }
    out
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        slope * x
    }
}

/// `log(sum(exp(v)))`, stable; `-inf` for an empty slice.
pub fn logsumexp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl<'s> Graph<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_nodes: vec![None; store.len()],
            record: true,
        }
    }

    /// A graph that evaluates values only.
    pub fn inference(store: &'s ParamStore) -> Self {
        Self {
            record: false,
            ..Self::new(store)
        }
    }

    pub fn is_recording(&self) -> bool {
        self.record
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.push_cow(Cow::Owned(value), op)
    }

    fn push_cow(&mut self, value: Cow<'s, Tensor>, op: Op) -> Var {
        let op = if self.record { op } else { Op::Leaf };
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dims()
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// The node holding parameter `id`, created on first use.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes[id.0] {
            return v;
        }
        let value = Cow::Borrowed(self.store.tensor(id));
        let v = self.push_cow(value, Op::Param(id));
        self.param_nodes[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    /// `x * w + b` with `b` broadcast over rows.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var, NumericsError> {
        let xw = self.matmul(x, w)?;
        self.add(xw, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let value = binary_map("add", self.value(a), self.value(b), |x, y| x + y)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let value = binary_map("sub", self.value(a), self.value(b), |x, y| x - y)?;
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let value = binary_map("mul", self.value(a), self.value(b), |x, y| x * y)?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a).map(|x| x * k);
        self.push(value, Op::Scale(a, k))
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a).map(|x| x + k);
        self.push(value, Op::Shift(a))
    }

    /// `1 - a`, elementwise.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.add_scalar(neg, 1.0)
    }

    /// Concatenation along the last axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let rows = self.value(parts[0]).rows();
        let mut total = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rows() != rows {
                return Err(NumericsError::shape("concat_cols", self.value(parts[0]), t));
            }
            total += t.cols();
        }
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let value = Tensor::matrix(rows, total, data)?;
        Ok(self.push(value, Op::ConcatCols(parts.to_vec())))
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(NumericsError::shape("concat_rows", self.value(parts[0]), t));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let value = Tensor::matrix(rows, cols, data)?;
        Ok(self.push(value, Op::ConcatRows(parts.to_vec())))
    }

    pub fn max2(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(NumericsError::shape("max2", ta, tb));
        }
        let value = binary_map("max2", ta, tb, f64::max)?;
        Ok(self.push(value, Op::Max2(a, b)))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        self.push(value, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let value = self.value(a).map(|x| leaky_relu(x, slope));
        self.push(value, Op::LeakyRelu(a, slope))
    }

    /// Row-wise softmax restricted to slots where `mask` is true. Masked
    /// slots get exactly zero weight; a row with no active slot is an error.
    pub fn masked_softmax(&mut self, a: Var, mask: &[bool]) -> Result<Var, NumericsError> {
        let t = self.value(a);
        if mask.len() != t.len() {
            return Err(NumericsError::Contract(format!(
                "mask of length {} for shape {:?}",
                mask.len(),
                t.shape()
            )));
        }
        let (r, c) = t.dims();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &t.data()[i * c..(i + 1) * c];
            let m = &mask[i * c..(i + 1) * c];
            let mx = row
                .iter()
                .zip(m)
                .filter(|(_, k)| **k)
                .map(|(v, _)| *v)
                .fold(f64::NEG_INFINITY, f64::max);
            if mx == f64::NEG_INFINITY {
                return Err(NumericsError::Contract(format!("softmax row {i} has no unmasked slot")));
            }
            let o = &mut out[i * c..(i + 1) * c];
            let mut sum = 0.0;
            for j in 0..c {
                if m[j] {
                    o[j] = (row[j] - mx).exp();
                    sum += o[j];
                }
            }
            o.iter_mut().for_each(|v| *v /= sum);
        }
        let value = t.with_data(out);
        Ok(self.push(value, Op::MaskedSoftmax(a)))
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var, NumericsError> {
        let mask = vec![true; self.value(a).len()];
        self.masked_softmax(a, &mask)
    }

    pub fn logsumexp(&mut self, a: Var, axis: Axis) -> Var {
        let t = self.value(a);
        let (r, c) = t.dims();
        let value = match axis {
            Axis::Cols => {
                let data = (0..r).map(|i| logsumexp(t.row_slice(i))).collect();
                Tensor::matrix(r, 1, data).expect("sized")
            }
            Axis::Rows => {
                let mut col = vec![0.0; r];
                let data = (0..c)
                    .map(|j| {
                        for (i, v) in col.iter_mut().enumerate() {
                            *v = t.get(i, j);
                        }
                        logsumexp(&col)
                    })
                    .collect();
                Tensor::matrix(1, c, data).expect("sized")
            }
        };
        self.push(value, Op::LogSumExp(a, axis))
    }

    /// Column-wise maximum over rows: `m x n -> 1 x n`. Ties go to the
    /// lowest row.
    pub fn max_pool_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (r, c) = t.dims();
        let mut arg = vec![0usize; c];
        let mut data = t.row_slice(0).to_vec();
        for i in 1..r {
            for j in 0..c {
                let v = t.get(i, j);
                if v > data[j] {
                    data[j] = v;
                    arg[j] = i;
                }
            }
        }
        let value = Tensor::matrix(1, c, data).expect("sized");
        self.push(value, Op::MaxPoolRows(a, arg))
    }

    pub fn mean_pool_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (r, c) = t.dims();
        let mut data = vec![0.0; c];
        for i in 0..r {
            for (d, v) in data.iter_mut().zip(t.row_slice(i)) {
                *d += v;
            }
        }
        data.iter_mut().for_each(|d| *d /= r as f64);
        let value = Tensor::matrix(1, c, data).expect("sized");
        self.push(value, Op::MeanPoolRows(a))
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var, NumericsError> {
        let t = self.value(a);
        let (r, c) = t.dims();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= r {
                return Err(NumericsError::Contract(format!("row index {i} out of range for {r} rows")));
            }
            data.extend_from_slice(t.row_slice(i));
        }
        let value = Tensor::matrix(idx.len(), c, data)?;
        Ok(self.push(value, Op::GatherRows(a, idx.into())))
    }

    pub fn row(&mut self, a: Var, i: usize) -> Result<Var, NumericsError> {
        self.gather_rows(a, &[i])
    }

    /// Columns `start .. start + width`.
    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Result<Var, NumericsError> {
        let t = self.value(a);
        let (r, c) = t.dims();
        if start + width > c {
            return Err(NumericsError::Contract(format!(
                "column slice {start}..{} of {c} columns",
                start + width
            )));
        }
        let mut data = Vec::with_capacity(r * width);
        for i in 0..r {
            data.extend_from_slice(&t.row_slice(i)[start..start + width]);
        }
        let value = Tensor::matrix(r, width, data)?;
        Ok(self.push(value, Op::SliceCols(a, start)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a))
    }

    /// Per-row sum: `m x n -> m x 1`.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let data = (0..t.rows()).map(|i| t.row_slice(i).iter().sum()).collect();
        let value = Tensor::matrix(t.rows(), 1, data).expect("sized");
        self.push(value, Op::RowSum(a))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var, NumericsError> {
        let t = self.value(a);
        if rows * cols != t.len() {
            return Err(NumericsError::Contract(format!(
                "cannot reshape {:?} to [{rows}, {cols}]",
                t.shape()
            )));
        }
        let value = t.clone().reshaped(rows, cols);
        Ok(self.push(value, Op::Reshape(a)))
    }

    /// Sums consecutive blocks of `group` rows: `(n*group) x h -> n x h`.
    pub fn segment_sum(&mut self, a: Var, group: usize) -> Result<Var, NumericsError> {
        let t = self.value(a);
        let (r, c) = t.dims();
        if group == 0 || r % group != 0 {
            return Err(NumericsError::Contract(format!("{r} rows do not split into groups of {group}")));
        }
        let n = r / group;
        let mut data = vec![0.0; n * c];
        for i in 0..r {
            let o = &mut data[(i / group) * c..(i / group + 1) * c];
            for (d, v) in o.iter_mut().zip(t.row_slice(i)) {
                *d += v;
            }
        }
        let value = Tensor::matrix(n, c, data)?;
        Ok(self.push(value, Op::SegmentSum(a, group)))
    }

    /// Reverse sweep from a scalar `loss`. Parameters the loss does not reach
    /// get zero gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumericsError> {
        if !self.record {
            return Err(NumericsError::Contract("backward on a non-recording graph".into()));
        }
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(NumericsError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lt.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(lt.with_data(vec![1.0]));
        let mut out = Gradients::zeros_for(self.store);

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            let mut acc = |v: Var, t: Tensor| match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => *slot = Some(t),
            };
            match &node.op {
                Op::Leaf => {}
                Op::Param(pid) => out.get_mut(*pid).add_assign(&g),
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (m, k) = ta.dims();
                    let n = tb.cols();
                    let mut ga = vec![0.0; m * k];
                    let bt = tb.transpose();
                    matmul_into(g.data(), bt.data(), &mut ga, m, n, k);
                    let mut gb = vec![0.0; k * n];
                    let at = ta.transpose();
                    matmul_into(at.data(), g.data(), &mut gb, k, m, n);
                    acc(*a, ta.with_data(ga));
                    acc(*b, tb.with_data(gb));
                }
                Op::Add(a, b) => {
                    acc(*a, reduce_to(&g, self.value(*a), |_, _, x| x));
                    acc(*b, reduce_to(&g, self.value(*b), |_, _, x| x));
                }
                Op::Sub(a, b) => {
                    acc(*a, reduce_to(&g, self.value(*a), |_, _, x| x));
                    acc(*b, reduce_to(&g, self.value(*b), |_, _, x| -x));
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    acc(*a, reduce_to(&g, ta, |i, j, x| x * tb.data()[bidx(tb, i, j)]));
                    acc(*b, reduce_to(&g, tb, |i, j, x| x * ta.data()[bidx(ta, i, j)]));
                }
                Op::Scale(a, k) => acc(*a, g.map(|x| x * k)),
                Op::Shift(a) => acc(*a, g),
                Op::ConcatCols(parts) => {
                    let rows = g.rows();
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        let mut data = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            data.extend_from_slice(&g.row_slice(r)[offset..offset + w]);
                        }
                        offset += w;
                        acc(p, self.value(p).with_data(data));
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.value(p).len();
                        let data = g.data()[offset..offset + n].to_vec();
                        offset += n;
                        acc(p, self.value(p).with_data(data));
                    }
                }
                Op::Max2(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let mut ga = Tensor::zeros_like(ta);
                    let mut gb = Tensor::zeros_like(tb);
                    for (i, gv) in g.data().iter().enumerate() {
                        if ta.data()[i] >= tb.data()[i] {
                            ga.data_mut()[i] = *gv;
                        } else {
                            gb.data_mut()[i] = *gv;
                        }
                    }
                    acc(*a, ga);
                    acc(*b, gb);
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    let data = g.data().iter().zip(y.data()).map(|(gv, s)| gv * s * (1.0 - s)).collect();
                    acc(*a, y.with_data(data));
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    let data = g.data().iter().zip(y.data()).map(|(gv, t)| gv * (1.0 - t * t)).collect();
                    acc(*a, y.with_data(data));
                }
                Op::LeakyRelu(a, slope) => {
                    let x = self.value(*a);
                    let data = g
                        .data()
                        .iter()
                        .zip(x.data())
                        .map(|(gv, xv)| if *xv >= 0.0 { *gv } else { gv * slope })
                        .collect();
                    acc(*a, x.with_data(data));
                }
                Op::MaskedSoftmax(a) => {
                    let y = &node.value;
                    let (r, c) = y.dims();
                    let mut data = vec![0.0; r * c];
                    for i in 0..r {
                        let yr = y.row_slice(i);
                        let gr = g.row_slice(i);
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            data[i * c + j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    acc(*a, y.with_data(data));
                }
                Op::LogSumExp(a, axis) => {
                    let x = self.value(*a);
                    let (r, c) = x.dims();
                    let y = &node.value;
                    let mut data = vec![0.0; r * c];
                    for i in 0..r {
                        for j in 0..c {
                            let k = match axis {
                                Axis::Cols => i,
                                Axis::Rows => j,
                            };
                            data[i * c + j] = g.data()[k] * (x.get(i, j) - y.data()[k]).exp();
                        }
                    }
                    acc(*a, x.with_data(data));
                }
                Op::MaxPoolRows(a, arg) => {
                    let x = self.value(*a);
                    let mut gx = Tensor::zeros_like(x);
                    for (j, &i) in arg.iter().enumerate() {
                        gx.set(i, j, g.data()[j]);
                    }
                    acc(*a, gx);
                }
                Op::MeanPoolRows(a) => {
                    let x = self.value(*a);
                    let (r, c) = x.dims();
                    let mut data = vec![0.0; r * c];
                    for i in 0..r {
                        for j in 0..c {
                            data[i * c + j] = g.data()[j] / r as f64;
                        }
                    }
                    acc(*a, x.with_data(data));
                }
                Op::GatherRows(a, idx) => {
                    let x = self.value(*a);
                    let c = x.cols();
                    let mut gx = Tensor::zeros_like(x);
                    let d = gx.data_mut();
                    for (k, &i) in idx.iter().enumerate() {
                        for (o, v) in d[i * c..(i + 1) * c].iter_mut().zip(g.row_slice(k)) {
                            *o += v;
                        }
                    }
                    acc(*a, gx);
                }
                Op::SliceCols(a, start) => {
                    let x = self.value(*a);
                    let w = g.cols();
                    let mut gx = Tensor::zeros_like(x);
                    for i in 0..x.rows() {
                        for j in 0..w {
                            gx.set(i, start + j, g.get(i, j));
                        }
                    }
                    acc(*a, gx);
                }
                Op::SumAll(a) => {
                    let x = self.value(*a);
                    acc(*a, x.with_data(vec![g.data()[0]; x.len()]));
                }
                Op::RowSum(a) => {
                    let x = self.value(*a);
                    let (r, c) = x.dims();
                    let data = (0..r * c).map(|k| g.data()[k / c]).collect();
                    acc(*a, x.with_data(data));
                }
                Op::Transpose(a) => acc(*a, g.transpose()),
                Op::Reshape(a) => {
                    let x = self.value(*a);
                    acc(*a, x.with_data(g.into_data()));
                }
                Op::SegmentSum(a, group) => {
                    let x = self.value(*a);
                    let (r, c) = x.dims();
                    let mut data = Vec::with_capacity(r * c);
                    for i in 0..r {
                        data.extend_from_slice(g.row_slice(i / group));
                    }
                    acc(*a, x.with_data(data));
                }
            }
        }
        Ok(out)
    }
}
