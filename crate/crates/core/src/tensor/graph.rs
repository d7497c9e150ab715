use super::kernels;
use super::{Tensor, TensorError, TensorResult};

/// Handle to a node on a [`Graph`]. Only meaningful for the graph that made it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Broadcast {
    Same,
    /// Right operand is a single row expanded over the left operand's rows.
    Rows,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var, Broadcast),
    Sub(Var, Var, Broadcast),
    Mul(Var, Var, Broadcast),
    Scale(Var, f64),
    Offset(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    LogClamped(Var, f64),
    Map(Var, fn(f64) -> f64),
    SoftmaxRows(Var),
    Transpose(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    GatherRows(Var, Vec<usize>),
    Sum(Var),
    Element(Var, usize),
    MaxOverRows(Var, Vec<usize>),
    Unfold(Var, usize),
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Append-only tape of operations.
///
/// Nodes are stored in creation order, which is a topological order of the
/// computation, so the backward pass is a single reverse sweep.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

fn dim_err(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::Dimension {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
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

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Gradient accumulated by the last [`backward`](Self::backward) call.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> TensorResult<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape().len() > 2 || bv.shape().len() > 2 || av.cols() != bv.rows() {
            return Err(dim_err("matmul", av, bv));
        }
        let (m, k, n) = (av.rows(), av.cols(), bv.cols());
        let out = Tensor::new(vec![m, n], kernels::gemm(av.data(), bv.data(), m, k, n))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, rg, Op::MatMul(a, b)))
    }

    fn broadcast_kind(&self, op: &'static str, a: Var, b: Var) -> TensorResult<Broadcast> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() == bv.shape() {
            return Ok(Broadcast::Same);
        }
        let row_like = match bv.shape() {
            [c] => *c == av.cols(),
            [1, c] => *c == av.cols(),
            _ => false,
        };
        if row_like && av.shape().len() <= 2 {
            Ok(Broadcast::Rows)
        } else {
            Err(dim_err(op, av, bv))
        }
    }

    fn binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        make: fn(Var, Var, Broadcast) -> Op,
    ) -> TensorResult<Var> {
        let kind = self.broadcast_kind(op, a, b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let cols = av.cols().max(1);
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let y = match kind {
                    Broadcast::Same => bv.data()[i],
                    Broadcast::Rows => bv.data()[i % cols],
                };
                f(x, y)
            })
            .collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, rg, make(a, b, kind)))
    }

    /// Elementwise sum; `b` may be a single row broadcast over `a`'s rows.
    pub fn add(&mut self, a: Var, b: Var) -> TensorResult<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> TensorResult<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    /// Elementwise (Hadamard) product with the same broadcasting as [`add`](Self::add).
    pub fn mul(&mut self, a: Var, b: Var) -> TensorResult<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x * c);
        let rg = self.rg(a);
        self.push(out, rg, Op::Scale(a, c))
    }

    /// `1 - a`, the complement used by gated merges.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| 1.0 - x);
        let rg = self.rg(a);
        self.push(out, rg, Op::Offset(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        let rg = self.rg(a);
        self.push(out, rg, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        let rg = self.rg(a);
        self.push(out, rg, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        let rg = self.rg(a);
        self.push(out, rg, Op::Relu(a))
    }

    /// `ln(max(a, floor))`; the gradient is zero where the floor is active.
    pub fn log_clamped(&mut self, a: Var, floor: f64) -> Var {
        let out = self.value(a).map(|x| x.max(floor).ln());
        let rg = self.rg(a);
        self.push(out, rg, Op::LogClamped(a, floor))
    }

    /// Pointwise function with a caller-supplied derivative `df(x)`.
    pub fn map(&mut self, a: Var, f: fn(f64) -> f64, df: fn(f64) -> f64) -> Var {
        let out = self.value(a).map(f);
        let rg = self.rg(a);
        self.push(out, rg, Op::Map(a, df))
    }

    /// Row-wise softmax. Masked entries (`false`) come out exactly zero.
    pub fn softmax_rows(&mut self, a: Var, mask: Option<&[bool]>) -> TensorResult<Var> {
        let av = self.value(a);
        let (r, c) = (av.rows(), av.cols());
        if c == 0 {
            return Err(TensorError::Invalid {
                op: "softmax_rows",
                reason: "zero columns".into(),
            });
        }
        if let Some(m) = mask {
            if m.len() != r * c {
                return Err(TensorError::Dimension {
                    op: "softmax_rows mask",
                    left: av.shape().to_vec(),
                    right: vec![m.len()],
                });
            }
        }
        let data =
            kernels::softmax_rows(av.data(), r, c, mask).map_err(|row| TensorError::DegenerateRow { row })?;
        let out = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.rg(a);
        Ok(self.push(out, rg, Op::SoftmaxRows(a)))
    }

    pub fn transpose(&mut self, a: Var) -> TensorResult<Var> {
        let av = self.value(a);
        if av.shape().len() > 2 {
            return Err(TensorError::Invalid {
                op: "transpose",
                reason: format!("rank {} tensor", av.shape().len()),
            });
        }
        let out = av.transpose();
        let rg = self.rg(a);
        Ok(self.push(out, rg, Op::Transpose(a)))
    }

    /// Concatenates matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> TensorResult<Var> {
        let first = parts.first().ok_or(TensorError::Invalid {
            op: "concat_cols",
            reason: "no inputs".into(),
        })?;
        let rows = self.value(*first).rows();
        for p in parts {
            if self.value(*p).rows() != rows {
                return Err(dim_err("concat_cols", self.value(*first), self.value(*p)));
            }
        }
        let total: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(r));
            }
        }
        let out = Tensor::new(vec![rows, total], data)?;
        let rg = parts.iter().any(|p| self.rg(*p));
        Ok(self.push(out, rg, Op::ConcatCols(parts.to_vec())))
    }

    /// Stacks matrices with equal column counts vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> TensorResult<Var> {
        let first = parts.first().ok_or(TensorError::Invalid {
            op: "concat_rows",
            reason: "no inputs".into(),
        })?;
        let cols = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let pv = self.value(*p);
            if pv.cols() != cols {
                return Err(dim_err("concat_rows", self.value(*first), pv));
            }
            rows += pv.rows();
            data.extend_from_slice(pv.data());
        }
        let out = Tensor::new(vec![rows, cols], data)?;
        let rg = parts.iter().any(|p| self.rg(*p));
        Ok(self.push(out, rg, Op::ConcatRows(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> TensorResult<Var> {
        let av = self.value(a);
        let c = av.cols();
        if start > end || end > c {
            return Err(TensorError::Invalid {
                op: "slice_cols",
                reason: format!("range {start}..{end} outside {c} columns"),
            });
        }
        let mut data = Vec::with_capacity(av.rows() * (end - start));
        for r in 0..av.rows() {
            data.extend_from_slice(&av.row(r)[start..end]);
        }
        let out = Tensor::new(vec![av.rows(), end - start], data)?;
        let rg = self.rg(a);
        Ok(self.push(out, rg, Op::SliceCols(a, start)))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> TensorResult<Var> {
        let av = self.value(a);
        let (r, c) = (av.rows(), av.cols());
        if start > end || end > r {
            return Err(TensorError::Invalid {
                op: "slice_rows",
                reason: format!("range {start}..{end} outside {r} rows"),
            });
        }
        let out = Tensor::new(vec![end - start, c], av.data()[start * c..end * c].to_vec())?;
        let rg = self.rg(a);
        Ok(self.push(out, rg, Op::SliceRows(a, start)))
    }

    pub fn row(&mut self, a: Var, i: usize) -> TensorResult<Var> {
        self.slice_rows(a, i, i + 1)
    }

    /// Row lookup (embedding gather). Repeated indices accumulate gradient.
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> TensorResult<Var> {
        let av = self.value(a);
        let (r, c) = (av.rows(), av.cols());
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            if i >= r {
                return Err(TensorError::Invalid {
                    op: "gather_rows",
                    reason: format!("index {i} outside {r} rows"),
                });
            }
            data.extend_from_slice(av.row(i));
        }
        let out = Tensor::new(vec![indices.len(), c], data)?;
        let rg = self.rg(a);
        Ok(self.push(out, rg, Op::GatherRows(a, indices.to_vec())))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(out, rg, Op::Sum(a))
    }

    /// Picks one entry (flat row-major index) as a scalar.
    pub fn element(&mut self, a: Var, index: usize) -> TensorResult<Var> {
        let av = self.value(a);
        let v = *av.data().get(index).ok_or_else(|| TensorError::Invalid {
            op: "element",
            reason: format!("index {index} outside {} entries", av.numel()),
        })?;
        let rg = self.rg(a);
        Ok(self.push(Tensor::scalar(v), rg, Op::Element(a, index)))
    }

    /// Column-wise maximum over rows: `[r×c] -> [1×c]`. Ties pick the first row.
    pub fn max_over_rows(&mut self, a: Var) -> TensorResult<Var> {
        let av = self.value(a);
        let (r, c) = (av.rows(), av.cols());
        if r == 0 {
            return Err(TensorError::Invalid {
                op: "max_over_rows",
                reason: "zero rows".into(),
            });
        }
        let mut arg = vec![0usize; c];
        let mut best = av.row(0).to_vec();
        for i in 1..r {
            for (j, &v) in av.row(i).iter().enumerate() {
                if v > best[j] {
                    best[j] = v;
                    arg[j] = i;
                }
            }
        }
        let out = Tensor::new(vec![1, c], best)?;
        let rg = self.rg(a);
        Ok(self.push(out, rg, Op::MaxOverRows(a, arg)))
    }

    /// Sliding windows of `width` consecutive rows, each flattened into one row:
    /// `[L×c] -> [(L-width+1) × width·c]`.
    pub fn unfold_rows(&mut self, a: Var, width: usize) -> TensorResult<Var> {
        let av = self.value(a);
        let (l, c) = (av.rows(), av.cols());
        if width == 0 || l < width {
            return Err(TensorError::Invalid {
                op: "unfold_rows",
                reason: format!("window {width} over {l} rows"),
            });
        }
        let windows = l - width + 1;
        let mut data = Vec::with_capacity(windows * width * c);
        for p in 0..windows {
            data.extend_from_slice(&av.data()[p * c..(p + width) * c]);
        }
        let out = Tensor::new(vec![windows, width * c], data)?;
        let rg = self.rg(a);
        Ok(self.push(out, rg, Op::Unfold(a, width)))
    }

    /// Reverse sweep from a scalar loss. Gradients of earlier calls are discarded.
    pub fn backward(&mut self, loss: Var) -> TensorResult<()> {
        let shape = self.value(loss).shape().to_vec();
        if self.value(loss).numel() != 1 {
            return Err(TensorError::NonScalarLoss { shape });
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        if !self.rg(loss) {
            return Ok(());
        }
        self.grads[loss.0] = Some(Tensor::full(&shape, 1.0));
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = self.grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g);
            self.grads[idx] = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, g: Tensor) {
        if !self.rg(v) {
            return;
        }
        match &mut self.grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn reduce_broadcast(&self, target: Var, g: &Tensor, kind: Broadcast, sign: f64) -> Tensor {
        let tv = self.value(target);
        match kind {
            Broadcast::Same => {
                if sign == 1.0 {
                    g.clone()
                } else {
                    g.map(|x| x * sign)
                }
            }
            Broadcast::Rows => {
                let c = tv.numel();
                let mut out = vec![0.0; c];
                for (i, &x) in g.data().iter().enumerate() {
                    out[i % c] += sign * x;
                }
                Tensor::new(tv.shape().to_vec(), out).expect("broadcast shape")
            }
        }
    }

    fn propagate(&mut self, idx: usize, g: &Tensor) {
        let op = self.nodes[idx].op.clone();
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if self.rg(a) {
                    let da = kernels::gemm_nt(g.data(), bv.data(), m, n, k);
                    let t = Tensor::new(av.shape().to_vec(), da).expect("matmul grad");
                    self.accumulate(a, t);
                }
                if self.rg(b) {
                    let (av, bv) = (self.value(a), self.value(b));
                    let db = kernels::gemm_tn(av.data(), g.data(), m, k, n);
                    let t = Tensor::new(bv.shape().to_vec(), db).expect("matmul grad");
                    self.accumulate(b, t);
                }
            }
            Op::Add(a, b, kind) => {
                self.accumulate(a, g.clone());
                if self.rg(b) {
                    let t = self.reduce_broadcast(b, g, kind, 1.0);
                    self.accumulate(b, t);
                }
            }
            Op::Sub(a, b, kind) => {
                self.accumulate(a, g.clone());
                if self.rg(b) {
                    let t = self.reduce_broadcast(b, g, kind, -1.0);
                    self.accumulate(b, t);
                }
            }
            Op::Mul(a, b, kind) => {
                let (av, bv) = (self.value(a), self.value(b));
                let cols = av.cols().max(1);
                let bval = |i: usize| match kind {
                    Broadcast::Same => bv.data()[i],
                    Broadcast::Rows => bv.data()[i % cols],
                };
                let da: Vec<f64> = g.data().iter().enumerate().map(|(i, x)| x * bval(i)).collect();
                let da = Tensor::new(av.shape().to_vec(), da).expect("mul grad");
                let db_full: Vec<f64> = g.data().iter().zip(av.data()).map(|(x, y)| x * y).collect();
                let db_full = Tensor::new(av.shape().to_vec(), db_full).expect("mul grad");
                self.accumulate(a, da);
                if self.rg(b) {
                    let t = self.reduce_broadcast(b, &db_full, kind, 1.0);
                    self.accumulate(b, t);
                }
            }
            Op::Scale(a, c) => self.accumulate(a, g.map(|x| x * c)),
            Op::Offset(a) => self.accumulate(a, g.map(|x| -x)),
            Op::Sigmoid(a) => {
                let y = &self.nodes[idx].value;
                let t = zip_map(g, y, |gx, yx| gx * yx * (1.0 - yx));
                self.accumulate(a, t);
            }
            Op::Tanh(a) => {
                let y = &self.nodes[idx].value;
                let t = zip_map(g, y, |gx, yx| gx * (1.0 - yx * yx));
                self.accumulate(a, t);
            }
            Op::Relu(a) => {
                let t = zip_map(g, self.value(a), |gx, x| if x > 0.0 { gx } else { 0.0 });
                self.accumulate(a, t);
            }
            Op::LogClamped(a, floor) => {
                let t = zip_map(g, self.value(a), |gx, x| if x > floor { gx / x } else { 0.0 });
                self.accumulate(a, t);
            }
            Op::Map(a, df) => {
                let t = zip_map(g, self.value(a), |gx, x| gx * df(x));
                self.accumulate(a, t);
            }
            Op::SoftmaxRows(a) => {
                let y = &self.nodes[idx].value;
                let (r, c) = (y.rows(), y.cols());
                let mut out = vec![0.0; r * c];
                for i in 0..r {
                    let yr = y.row(i);
                    let gr = g.row(i);
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for j in 0..c {
                        out[i * c + j] = yr[j] * (gr[j] - dot);
                    }
                }
                let t = Tensor::new(y.shape().to_vec(), out).expect("softmax grad");
                self.accumulate(a, t);
            }
            Op::Transpose(a) => {
                let t = g.transpose();
                let shape = self.value(a).shape().to_vec();
                self.accumulate(a, t.reshape(shape).expect("transpose grad"));
            }
            Op::ConcatCols(parts) => {
                let rows = g.rows();
                let mut offset = 0;
                for p in parts {
                    let pc = self.value(p).cols();
                    if self.rg(p) {
                        let mut data = Vec::with_capacity(rows * pc);
                        for r in 0..rows {
                            data.extend_from_slice(&g.row(r)[offset..offset + pc]);
                        }
                        let shape = self.value(p).shape().to_vec();
                        self.accumulate(p, Tensor::new(shape, data).expect("concat grad"));
                    }
                    offset += pc;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = self.value(p).numel();
                    if self.rg(p) {
                        let shape = self.value(p).shape().to_vec();
                        let data = g.data()[offset..offset + n].to_vec();
                        self.accumulate(p, Tensor::new(shape, data).expect("concat grad"));
                    }
                    offset += n;
                }
            }
            Op::SliceCols(a, start) => {
                let av = self.value(a);
                let (r, c) = (av.rows(), av.cols());
                let w = g.cols();
                let mut out = vec![0.0; r * c];
                for i in 0..r {
                    out[i * c + start..i * c + start + w].copy_from_slice(g.row(i));
                }
                let t = Tensor::new(av.shape().to_vec(), out).expect("slice grad");
                self.accumulate(a, t);
            }
            Op::SliceRows(a, start) => {
                let av = self.value(a);
                let c = av.cols();
                let mut out = vec![0.0; av.numel()];
                out[start * c..start * c + g.numel()].copy_from_slice(g.data());
                let t = Tensor::new(av.shape().to_vec(), out).expect("slice grad");
                self.accumulate(a, t);
            }
            Op::GatherRows(a, indices) => {
                let av = self.value(a);
                let c = av.cols();
                let mut out = vec![0.0; av.numel()];
                for (k, &i) in indices.iter().enumerate() {
                    for j in 0..c {
                        out[i * c + j] += g.data()[k * c + j];
                    }
                }
                let t = Tensor::new(av.shape().to_vec(), out).expect("gather grad");
                self.accumulate(a, t);
            }
            Op::Sum(a) => {
                let gv = g.item();
                let t = Tensor::full(self.value(a).shape(), gv);
                self.accumulate(a, t);
            }
            Op::Element(a, index) => {
                let mut t = Tensor::zeros(self.value(a).shape());
                t.data_mut()[index] = g.item();
                self.accumulate(a, t);
            }
            Op::MaxOverRows(a, arg) => {
                let av = self.value(a);
                let c = av.cols();
                let mut t = Tensor::zeros(av.shape());
                for (j, &i) in arg.iter().enumerate() {
                    t.data_mut()[i * c + j] += g.data()[j];
                }
                self.accumulate(a, t);
            }
            Op::Unfold(a, width) => {
                let av = self.value(a);
                let c = av.cols();
                let mut t = Tensor::zeros(av.shape());
                let span = width * c;
                for p in 0..g.rows() {
                    let src = &g.data()[p * span..(p + 1) * span];
                    for (dst, s) in t.data_mut()[p * c..p * c + span].iter_mut().zip(src) {
                        *dst += s;
                    }
                }
                self.accumulate(a, t);
            }
        }
    }
}

fn zip_map(g: &Tensor, x: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = g.data().iter().zip(x.data()).map(|(a, b)| f(*a, *b)).collect();
    Tensor::new(x.shape().to_vec(), data).expect("zip shape")
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
