use crate::scalar::Scalar;

use super::params::{ParameterVector, SlotId};
use super::tensor::Tensor;
use super::AutodiffError;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Param(SlotId),
    Dense { x: NodeId, w: SlotId, b: SlotId },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    MulCol { x: NodeId, col: NodeId },
    Affine { x: NodeId, scale: T },
    Tanh(NodeId),
    Sigmoid(NodeId),
    Exp(NodeId),
    Square(NodeId),
    Softmax(NodeId),
    LogSoftmax(NodeId),
    Concat(NodeId, NodeId),
    Slice { x: NodeId, start: usize },
    Pick { x: NodeId, idx: Vec<usize> },
    Clamp { x: NodeId, lo: T, hi: T },
    Minimum(NodeId, NodeId),
    RowSum(NodeId),
    Sum(NodeId),
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Define-by-run computation graph over batched row vectors.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order and `backward` is a single reverse sweep. Parameter slots
/// are read in place from the borrowed [`ParameterVector`]; their gradients land
/// in a buffer with the same layout.
pub struct Graph<'p, T> {
    params: &'p ParameterVector<T>,
    nodes: Vec<Node<T>>,
    grads: Option<Vec<Option<Tensor<T>>>>,
}

fn shape_err(op: &'static str, expected: (usize, usize), found: (usize, usize)) -> AutodiffError {
    AutodiffError::Shape {
        op,
        expected,
        found,
    }
}

/// Logistic function, evaluated without overflow for large `|x|`.
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Softmax with max subtraction.
pub fn softmax<T: Scalar>(v: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); v.len()];
    softmax_into(v, &mut out);
    out
}

fn softmax_into<T: Scalar>(v: &[T], out: &mut [T]) {
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for (o, &x) in out.iter_mut().zip(v) {
        *o = (x - max).exp();
        total = total + *o;
    }
    for o in out.iter_mut() {
        *o = *o / total;
    }
}

fn log_softmax_into<T: Scalar>(v: &[T], out: &mut [T]) {
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = v.iter().map(|&x| (x - max).exp()).sum::<T>().ln() + max;
    for (o, &x) in out.iter_mut().zip(v) {
        *o = x - lse;
    }
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new(params: &'p ParameterVector<T>) -> Self {
        Self {
            params,
            nodes: Vec::with_capacity(64),
            grads: None,
        }
    }

    pub fn params(&self) -> &'p ParameterVector<T> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    /// Gradient of the last differentiated loss with respect to a node.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads.as_ref()?.get(id.0)?.as_ref()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    /// Constant input; receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf)
    }

    /// A whole parameter slot as a node.
    pub fn param(&mut self, slot: SlotId) -> NodeId {
        let info = self.params.layout().slot(slot);
        let value = Tensor::from_vec(
            info.shape[0],
            info.shape[1],
            self.params.slot(slot).to_vec(),
        )
        .expect("slot length matches its shape");
        self.push(value, Op::Param(slot))
    }

    /// `x · Wᵀ + b` for each row of `x`, with `W` of shape `m × n` and `b` holding `m` values.
    pub fn dense(&mut self, x: NodeId, w: SlotId, b: SlotId) -> Result<NodeId, AutodiffError> {
        let layout = self.params.layout();
        let [m, n] = layout.slot(w).shape;
        let bias_len = layout.slot(b).len();
        let xv = &self.nodes[x.0].value;
        if xv.cols() != n {
            return Err(shape_err("dense", (xv.rows(), n), xv.shape()));
        }
        if bias_len != m {
            return Err(shape_err("dense bias", (1, m), (1, bias_len)));
        }
        let wv = self.params.slot(w);
        let bv = self.params.slot(b);
        let rows = xv.rows();
        let mut out = Tensor::zeros(rows, m);
        for r in 0..rows {
            let xr = xv.row_slice(r);
            let or = &mut out.data_mut()[r * m..(r + 1) * m];
            for (i, o) in or.iter_mut().enumerate() {
                let wr = &wv[i * n..(i + 1) * n];
                let mut acc = T::zero();
                for (&a, &b) in wr.iter().zip(xr) {
                    acc = acc + a * b;
                }
                *o = acc + bv[i];
            }
        }
        Ok(self.push(out, Op::Dense { x, w, b }))
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<(), AutodiffError> {
        let (sa, sb) = (self.nodes[a.0].value.shape(), self.nodes[b.0].value.shape());
        if sa != sb {
            return Err(shape_err(op, sa, sb));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.same_shape("add", a, b)?;
        let v = self.nodes[a.0].value.zip(&self.nodes[b.0].value, |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.same_shape("sub", a, b)?;
        let v = self.nodes[a.0].value.zip(&self.nodes[b.0].value, |x, y| x - y);
        Ok(self.push(v, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.same_shape("mul", a, b)?;
        let v = self.nodes[a.0].value.zip(&self.nodes[b.0].value, |x, y| x * y);
        Ok(self.push(v, Op::Mul(a, b)))
    }

    /// Scales each row of `x` by the matching entry of the `rows × 1` column `col`.
    pub fn mul_col(&mut self, x: NodeId, col: NodeId) -> Result<NodeId, AutodiffError> {
        let xv = &self.nodes[x.0].value;
        let cv = &self.nodes[col.0].value;
        if cv.shape() != (xv.rows(), 1) {
            return Err(shape_err("mul_col", (xv.rows(), 1), cv.shape()));
        }
        let cols = xv.cols();
        let mut out = xv.clone();
        for r in 0..xv.rows() {
            let s = cv.data()[r];
            for v in &mut out.data_mut()[r * cols..(r + 1) * cols] {
                *v = *v * s;
            }
        }
        Ok(self.push(out, Op::MulCol { x, col }))
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: NodeId, scale: T, shift: T) -> NodeId {
        let v = self.nodes[x.0].value.map(|a| scale * a + shift);
        self.push(v, Op::Affine { x, scale })
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let v = self.nodes[x.0].value.map(T::tanh);
        self.push(v, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let v = self.nodes[x.0].value.map(sigmoid);
        self.push(v, Op::Sigmoid(x))
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        let v = self.nodes[x.0].value.map(T::exp);
        self.push(v, Op::Exp(x))
    }

    pub fn square(&mut self, x: NodeId) -> NodeId {
        let v = self.nodes[x.0].value.map(|a| a * a);
        self.push(v, Op::Square(x))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, x: NodeId) -> NodeId {
        let xv = &self.nodes[x.0].value;
        let cols = xv.cols();
        let mut out = Tensor::zeros(xv.rows(), cols);
        for r in 0..xv.rows() {
            softmax_into(xv.row_slice(r), &mut out.data_mut()[r * cols..(r + 1) * cols]);
        }
        self.push(out, Op::Softmax(x))
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, x: NodeId) -> NodeId {
        let xv = &self.nodes[x.0].value;
        let cols = xv.cols();
        let mut out = Tensor::zeros(xv.rows(), cols);
        for r in 0..xv.rows() {
            log_softmax_into(xv.row_slice(r), &mut out.data_mut()[r * cols..(r + 1) * cols]);
        }
        self.push(out, Op::LogSoftmax(x))
    }

    /// Column-wise concatenation `[a | b]`.
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if av.rows() != bv.rows() {
            return Err(shape_err("concat", (av.rows(), bv.cols()), bv.shape()));
        }
        let cols = av.cols() + bv.cols();
        let mut data = Vec::with_capacity(av.rows() * cols);
        for r in 0..av.rows() {
            data.extend_from_slice(av.row_slice(r));
            data.extend_from_slice(bv.row_slice(r));
        }
        let out = Tensor::from_vec(av.rows(), cols, data)?;
        Ok(self.push(out, Op::Concat(a, b)))
    }

    /// Columns `start..start + len` of `x`.
    pub fn slice(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId, AutodiffError> {
        let xv = &self.nodes[x.0].value;
        if start + len > xv.cols() {
            return Err(shape_err("slice", (xv.rows(), start + len), xv.shape()));
        }
        let mut data = Vec::with_capacity(xv.rows() * len);
        for r in 0..xv.rows() {
            data.extend_from_slice(&xv.row_slice(r)[start..start + len]);
        }
        let out = Tensor::from_vec(xv.rows(), len, data)?;
        Ok(self.push(out, Op::Slice { x, start }))
    }

    /// Selects `x[r, idx[r]]` for each row, giving a `rows × 1` column.
    pub fn pick(&mut self, x: NodeId, idx: &[usize]) -> Result<NodeId, AutodiffError> {
        let xv = &self.nodes[x.0].value;
        if idx.len() != xv.rows() {
            return Err(shape_err("pick", (xv.rows(), 1), (idx.len(), 1)));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= xv.cols()) {
            return Err(AutodiffError::Index {
                index: bad,
                cols: xv.cols(),
            });
        }
        let data = idx.iter().enumerate().map(|(r, &i)| xv.get(r, i)).collect();
        let out = Tensor::from_vec(xv.rows(), 1, data)?;
        Ok(self.push(out, Op::Pick { x, idx: idx.to_vec() }))
    }

    /// Clamp to `[lo, hi]`; gradient passes only where the input lies inside the interval.
    pub fn clamp(&mut self, x: NodeId, lo: T, hi: T) -> NodeId {
        let v = self.nodes[x.0].value.map(|a| a.max(lo).min(hi));
        self.push(v, Op::Clamp { x, lo, hi })
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn minimum(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.same_shape("minimum", a, b)?;
        let v = self.nodes[a.0].value.zip(&self.nodes[b.0].value, |x, y| {
            if x <= y {
                x
            } else {
                y
            }
        });
        Ok(self.push(v, Op::Minimum(a, b)))
    }

    /// Sum of each row, giving a `rows × 1` column.
    pub fn row_sum(&mut self, x: NodeId) -> NodeId {
        let xv = &self.nodes[x.0].value;
        let data = (0..xv.rows())
            .map(|r| xv.row_slice(r).iter().copied().sum())
            .collect();
        let out = Tensor::from_vec(xv.rows(), 1, data).expect("rows × 1");
        self.push(out, Op::RowSum(x))
    }

    /// Sum of all entries, giving a `1 × 1` tensor.
    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let total = self.nodes[x.0].value.data().iter().copied().sum();
        self.push(Tensor::scalar(total), Op::Sum(x))
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Returns `∂loss/∂param` for every slot of the borrowed parameters; slots
    /// that the loss does not reach are zero. A graph can be differentiated once.
    pub fn backward(&mut self, loss: NodeId) -> Result<ParameterVector<T>, AutodiffError> {
        if self.grads.is_some() {
            return Err(AutodiffError::BackwardTwice);
        }
        let shape = self.nodes[loss.0].value.shape();
        if shape != (1, 1) {
            return Err(AutodiffError::NonScalarLoss {
                rows: shape.0,
                cols: shape.1,
            });
        }
        let mut param_grads = self.params.zeros_like();
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(T::one()));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads, &mut param_grads);
            grads[i] = Some(g);
        }
        self.grads = Some(grads);
        Ok(param_grads)
    }

    fn backprop_node(
        &self,
        i: usize,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
        param_grads: &mut ParameterVector<T>,
    ) {
        let node = &self.nodes[i];
        let y = &node.value;
        let nodes = &self.nodes;
        let val = |id: NodeId| &nodes[id.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::Param(slot) => {
                for (p, &d) in param_grads.slot_mut(*slot).iter_mut().zip(g.data()) {
                    *p = *p + d;
                }
            }
            Op::Dense { x, w, b } => {
                let xv = val(*x);
                let [m, n] = self.params.layout().slot(*w).shape;
                let wv = self.params.slot(*w);
                {
                    let gw = param_grads.slot_mut(*w);
                    for r in 0..xv.rows() {
                        let xr = xv.row_slice(r);
                        for (i_out, &go) in g.row_slice(r).iter().enumerate() {
                            if go == T::zero() {
                                continue;
                            }
                            for (p, &xj) in gw[i_out * n..(i_out + 1) * n].iter_mut().zip(xr) {
                                *p = *p + go * xj;
                            }
                        }
                    }
                }
                {
                    let gb = param_grads.slot_mut(*b);
                    for r in 0..xv.rows() {
                        for (p, &go) in gb.iter_mut().zip(g.row_slice(r)) {
                            *p = *p + go;
                        }
                    }
                }
                let mut gx = Tensor::zeros(xv.rows(), n);
                for r in 0..xv.rows() {
                    let gr = g.row_slice(r);
                    let out = &mut gx.data_mut()[r * n..(r + 1) * n];
                    for (i_out, &go) in gr.iter().enumerate().take(m) {
                        if go == T::zero() {
                            continue;
                        }
                        for (o, &wij) in out.iter_mut().zip(&wv[i_out * n..(i_out + 1) * n]) {
                            *o = *o + go * wij;
                        }
                    }
                }
                accumulate(grads, *x, gx);
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                accumulate(grads, *a, g.zip(val(*b), |d, v| d * v));
                accumulate(grads, *b, g.zip(val(*a), |d, v| d * v));
            }
            Op::MulCol { x, col } => {
                let xv = val(*x);
                let cv = val(*col);
                let cols = xv.cols();
                let mut gx = g.clone();
                let mut gc = Tensor::zeros(xv.rows(), 1);
                for r in 0..xv.rows() {
                    let s = cv.data()[r];
                    let mut acc = T::zero();
                    for (j, v) in gx.data_mut()[r * cols..(r + 1) * cols].iter_mut().enumerate() {
                        acc = acc + *v * xv.get(r, j);
                        *v = *v * s;
                    }
                    gc.data_mut()[r] = acc;
                }
                accumulate(grads, *x, gx);
                accumulate(grads, *col, gc);
            }
            Op::Affine { x, scale } => {
                let s = *scale;
                accumulate(grads, *x, g.map(|d| d * s));
            }
            Op::Tanh(x) => {
                accumulate(grads, *x, g.zip(y, |d, t| d * (T::one() - t * t)));
            }
            Op::Sigmoid(x) => {
                accumulate(grads, *x, g.zip(y, |d, s| d * s * (T::one() - s)));
            }
            Op::Exp(x) => {
                accumulate(grads, *x, g.zip(y, |d, e| d * e));
            }
            Op::Square(x) => {
                let two = T::one() + T::one();
                accumulate(grads, *x, g.zip(val(*x), |d, v| d * two * v));
            }
            Op::Softmax(x) => {
                let cols = y.cols();
                let mut gx = Tensor::zeros(y.rows(), cols);
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row_slice(r), g.row_slice(r));
                    let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for (j, o) in gx.data_mut()[r * cols..(r + 1) * cols].iter_mut().enumerate() {
                        *o = yr[j] * (gr[j] - dot);
                    }
                }
                accumulate(grads, *x, gx);
            }
            Op::LogSoftmax(x) => {
                let cols = y.cols();
                let mut gx = Tensor::zeros(y.rows(), cols);
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row_slice(r), g.row_slice(r));
                    let total: T = gr.iter().copied().sum();
                    for (j, o) in gx.data_mut()[r * cols..(r + 1) * cols].iter_mut().enumerate() {
                        *o = gr[j] - yr[j].exp() * total;
                    }
                }
                accumulate(grads, *x, gx);
            }
            Op::Concat(a, b) => {
                let ca = val(*a).cols();
                let cb = val(*b).cols();
                let rows = g.rows();
                let mut ga = Vec::with_capacity(rows * ca);
                let mut gb = Vec::with_capacity(rows * cb);
                for r in 0..rows {
                    let gr = g.row_slice(r);
                    ga.extend_from_slice(&gr[..ca]);
                    gb.extend_from_slice(&gr[ca..]);
                }
                accumulate(grads, *a, Tensor::from_vec(rows, ca, ga).expect("concat split"));
                accumulate(grads, *b, Tensor::from_vec(rows, cb, gb).expect("concat split"));
            }
            Op::Slice { x, start } => {
                let xv = val(*x);
                let len = g.cols();
                let mut gx = Tensor::zeros(xv.rows(), xv.cols());
                let cols = xv.cols();
                for r in 0..xv.rows() {
                    gx.data_mut()[r * cols + start..r * cols + start + len]
                        .copy_from_slice(g.row_slice(r));
                }
                accumulate(grads, *x, gx);
            }
            Op::Pick { x, idx } => {
                let xv = val(*x);
                let cols = xv.cols();
                let mut gx = Tensor::zeros(xv.rows(), cols);
                for (r, &j) in idx.iter().enumerate() {
                    gx.data_mut()[r * cols + j] = g.data()[r];
                }
                accumulate(grads, *x, gx);
            }
            Op::Clamp { x, lo, hi } => {
                let (lo, hi) = (*lo, *hi);
                let gx = g.zip(val(*x), |d, v| {
                    if v >= lo && v <= hi {
                        d
                    } else {
                        T::zero()
                    }
                });
                accumulate(grads, *x, gx);
            }
            Op::Minimum(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let mut ga = Tensor::zeros(g.rows(), g.cols());
                let mut gb = Tensor::zeros(g.rows(), g.cols());
                for k in 0..g.data().len() {
                    if av.data()[k] <= bv.data()[k] {
                        ga.data_mut()[k] = g.data()[k];
                    } else {
                        gb.data_mut()[k] = g.data()[k];
                    }
                }
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
            Op::RowSum(x) => {
                let xv = val(*x);
                let cols = xv.cols();
                let mut gx = Tensor::zeros(xv.rows(), cols);
                for r in 0..xv.rows() {
                    let d = g.data()[r];
                    for v in &mut gx.data_mut()[r * cols..(r + 1) * cols] {
                        *v = d;
                    }
                }
                accumulate(grads, *x, gx);
            }
            Op::Sum(x) => {
                let d = g.item();
                let xv = val(*x);
                accumulate(grads, *x, xv.map(|_| d));
            }
        }
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], id: NodeId, g: Tensor<T>) {
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}
