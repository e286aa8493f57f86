use std::sync::Arc;

use super::tensor::{matmul, matmul_nt, matmul_tn, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Recorded primitive. Everything a backward rule or a replay needs is
/// kept here, so the tape can be re-executed from its leaves.
#[derive(Clone, Debug)]
enum Op<S> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulCol(Var, Var),
    Scale(Var, S),
    ScaleRows(Var, Arc<[S]>),
    LeakyRelu(Var, S),
    Elu(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize, usize),
    GatherRows(Var, Arc<[u32]>),
    ScatterAddRows(Var, Arc<[u32]>, usize),
    SegmentSoftmax(Var, Arc<[usize]>),
    CrossEntropy {
        logits: Var,
        targets: Arc<[u32]>,
        mask: Arc<[u32]>,
    },
    LifIntegrate {
        u_prev: Var,
        spikes_prev: Option<Var>,
        input: Var,
        leak: S,
        rest: S,
    },
    LifFire {
        u_pre: Var,
        threshold: S,
        width: S,
    },
    LifReset {
        u_pre: Var,
        spikes: Var,
        rest: S,
    },
    Dropout(Var, Arc<[S]>),
    MeanRows(Var),
    Sum(Var),
}

impl<S> Op<S> {
    fn operands(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            MatMul(a, b) | Add(a, b) | AddRow(a, b) | Mul(a, b) | MulCol(a, b) => vec![*a, *b],
            Scale(a, _)
            | ScaleRows(a, _)
            | LeakyRelu(a, _)
            | Elu(a)
            | SliceCols(a, ..)
            | GatherRows(a, _)
            | ScatterAddRows(a, ..)
            | SegmentSoftmax(a, _)
            | Dropout(a, _)
            | MeanRows(a)
            | Sum(a) => vec![*a],
            ConcatCols(vs) => vs.clone(),
            CrossEntropy { logits, .. } => vec![*logits],
            LifIntegrate {
                u_prev,
                spikes_prev,
                input,
                ..
            } => {
                let mut v = vec![*u_prev, *input];
                v.extend(spikes_prev.iter().copied());
                v
            }
            LifFire { u_pre, .. } => vec![*u_pre],
            LifReset { u_pre, spikes, .. } => vec![*u_pre, *spikes],
        }
    }
}

#[derive(Clone, Debug)]
struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    requires_grad: bool,
}

/// Eager reverse-mode tape: every primitive is executed immediately and
/// recorded in order, so operands always precede the values they feed.
#[derive(Clone, Debug, Default)]
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
    faulty_backward: bool,
}

/// Surrogate derivative of the Heaviside spike: a rectangular window of
/// height `1/width` centred on the threshold.
pub(crate) fn rect_surrogate<S: Scalar>(u_pre: S, threshold: S, width: S) -> S {
    if (u_pre - threshold).abs() < width / S::of(2.0) {
        S::one() / width
    } else {
        S::zero()
    }
}

fn leaky<S: Scalar>(x: S, slope: S) -> S {
    if x >= S::zero() {
        x
    } else {
        slope * x
    }
}

fn elu<S: Scalar>(x: S) -> S {
    if x > S::zero() {
        x
    } else {
        x.exp() - S::one()
    }
}

fn log_softmax_row<S: Scalar>(row: &[S]) -> (S, S) {
    let max = row.iter().copied().fold(S::neg_infinity(), S::max);
    let sum: S = row.iter().map(|&x| (x - max).exp()).sum();
    (max, sum.ln())
}

fn eval<'a, S: Scalar>(op: &Op<S>, v: &dyn Fn(Var) -> &'a Tensor<S>) -> Tensor<S> {
    match op {
        Op::Leaf => unreachable!(),
        Op::MatMul(a, b) => matmul(v(*a), v(*b)),
        Op::Add(a, b) => v(*a).zip_map(v(*b), |x, y| x + y),
        Op::AddRow(a, row) => {
            let mut out = v(*a).clone();
            let row = v(*row);
            for r in 0..out.rows() {
                for (o, &b) in out.row_mut(r).iter_mut().zip(row.data()) {
                    *o = *o + b;
                }
            }
            out
        }
        Op::Mul(a, b) => v(*a).zip_map(v(*b), |x, y| x * y),
        Op::MulCol(a, col) => {
            let mut out = v(*a).clone();
            let col = v(*col);
            for r in 0..out.rows() {
                let c = col.data()[r];
                for o in out.row_mut(r) {
                    *o = *o * c;
                }
            }
            out
        }
        Op::Scale(a, s) => v(*a).map(|x| x * *s),
        Op::ScaleRows(a, f) => {
            let mut out = v(*a).clone();
            for (r, &fr) in f.iter().enumerate() {
                for o in out.row_mut(r) {
                    *o = *o * fr;
                }
            }
            out
        }
        Op::LeakyRelu(a, slope) => v(*a).map(|x| leaky(x, *slope)),
        Op::Elu(a) => v(*a).map(elu),
        Op::ConcatCols(vs) => {
            let parts: Vec<&Tensor<S>> = vs.iter().map(|&p| v(p)).collect();
            let rows = parts[0].rows();
            let cols: usize = parts.iter().map(|p| p.cols()).sum();
            let mut data = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                for p in &parts {
                    data.extend_from_slice(p.row(r));
                }
            }
            Tensor::from_vec(rows, cols, data).expect("concat shape")
        }
        Op::SliceCols(a, start, len) => {
            let a = v(*a);
            Tensor::from_fn(a.rows(), *len, |r, c| a.get(r, start + c))
        }
        Op::GatherRows(a, idx) => {
            let a = v(*a);
            let mut data = Vec::with_capacity(idx.len() * a.cols());
            for &i in idx.iter() {
                data.extend_from_slice(a.row(i as usize));
            }
            Tensor::from_vec(idx.len(), a.cols(), data).expect("gather shape")
        }
        Op::ScatterAddRows(a, idx, n) => {
            let a = v(*a);
            let mut out = Tensor::zeros(*n, a.cols());
            for (src, &dst) in idx.iter().enumerate() {
                for (o, &x) in out.row_mut(dst as usize).iter_mut().zip(a.row(src)) {
                    *o = *o + x;
                }
            }
            out
        }
        Op::SegmentSoftmax(a, offsets) => {
            let a = v(*a);
            let mut out = Tensor::zeros(a.rows(), a.cols());
            for seg in offsets.windows(2) {
                let (lo, hi) = (seg[0], seg[1]);
                if lo == hi {
                    continue;
                }
                for c in 0..a.cols() {
                    let max = (lo..hi).map(|e| a.get(e, c)).fold(S::neg_infinity(), S::max);
                    let mut total = S::zero();
                    for e in lo..hi {
                        let ex = (a.get(e, c) - max).exp();
                        out.set(e, c, ex);
                        total = total + ex;
                    }
                    for e in lo..hi {
                        out.set(e, c, out.get(e, c) / total);
                    }
                }
            }
            out
        }
        Op::CrossEntropy {
            logits,
            targets,
            mask,
        } => {
            let logits = v(*logits);
            let mut total = S::zero();
            for &i in mask.iter() {
                let row = logits.row(i as usize);
                let (max, lse) = log_softmax_row(row);
                total = total + (max + lse - row[targets[i as usize] as usize]);
            }
            Tensor::scalar(total / S::of(mask.len() as f64))
        }
        Op::LifIntegrate {
            u_prev,
            spikes_prev,
            input,
            leak,
            rest,
        } => {
            let u = v(*u_prev);
            let x = v(*input);
            let o = spikes_prev.map(|o| v(o));
            let bias = (S::one() - *leak) * *rest;
            let data = (0..u.len())
                .map(|k| {
                    let keep = o.as_ref().map_or(S::one(), |o| S::one() - o.data()[k]);
                    *leak * u.data()[k] * keep + x.data()[k] + bias
                })
                .collect();
            Tensor::from_vec(u.rows(), u.cols(), data).expect("lif shape")
        }
        Op::LifFire {
            u_pre, threshold, ..
        } => v(*u_pre).map(|u| if u >= *threshold { S::one() } else { S::zero() }),
        Op::LifReset {
            u_pre,
            spikes,
            rest,
        } => v(*u_pre).zip_map(v(*spikes), |u, o| if o == S::one() { *rest } else { u }),
        Op::Dropout(a, mask) => {
            let mut out = v(*a).clone();
            for (o, &m) in out.data_mut().iter_mut().zip(mask.iter()) {
                *o = *o * m;
            }
            out
        }
        Op::MeanRows(a) => {
            let a = v(*a);
            let inv = S::one() / S::of(a.rows() as f64);
            Tensor::from_fn(1, a.cols(), |_, c| {
                (0..a.rows()).map(|r| a.get(r, c)).sum::<S>() * inv
            })
        }
        Op::Sum(a) => Tensor::scalar(v(*a).sum()),
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            faulty_backward: false,
        }
    }

    /// Makes the matmul backward rule deliberately wrong. Used as a
    /// negative control for gradient checking.
    #[doc(hidden)]
    pub fn inject_backward_fault(&mut self) {
        self.faulty_backward = true;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, value: Tensor<S>) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push_raw(&mut self, value: Tensor<S>, op: Op<S>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op<S>) -> Var {
        let requires_grad = op.operands().iter().any(|&o| self.nodes[o.0].requires_grad);
        let nodes = &self.nodes;
        let value = eval(&op, &|v: Var| &nodes[v.0].value);
        self.push_raw(value, op, requires_grad)
    }

    fn check_same(&self, what: &str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(Error::Shape(format!("matmul {sa:?} x {sb:?}")));
        }
        // Direct kernel call avoids cloning large operands such as the
        // input feature matrix.
        let value = matmul(self.value(a), self.value(b));
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push_raw(value, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("add", a, b)?;
        Ok(self.push(Op::Add(a, b)))
    }

    /// Adds a `1×c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        if self.shape(row) != (1, self.shape(a).1) {
            return Err(Error::Shape(format!(
                "add_row {:?} + {:?}",
                self.shape(a),
                self.shape(row)
            )));
        }
        Ok(self.push(Op::AddRow(a, row)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("mul", a, b)?;
        Ok(self.push(Op::Mul(a, b)))
    }

    /// Multiplies row `r` of `a` by `col[r]` for an `r×1` column.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        if self.shape(col) != (self.shape(a).0, 1) {
            return Err(Error::Shape(format!(
                "mul_col {:?} * {:?}",
                self.shape(a),
                self.shape(col)
            )));
        }
        Ok(self.push(Op::MulCol(a, col)))
    }

    pub fn scale(&mut self, a: Var, s: S) -> Var {
        self.push(Op::Scale(a, s))
    }

    /// Multiplies each row by a constant factor.
    pub fn scale_rows(&mut self, a: Var, factors: Arc<[S]>) -> Result<Var> {
        if factors.len() != self.shape(a).0 {
            return Err(Error::mismatch("scale_rows factors", self.shape(a).0, factors.len()));
        }
        Ok(self.push(Op::ScaleRows(a, factors)))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: S) -> Var {
        self.push(Op::LeakyRelu(a, slope))
    }

    pub fn elu(&mut self, a: Var) -> Var {
        self.push(Op::Elu(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Empty("concat_cols operand list"));
        };
        let rows = self.shape(first).0;
        if parts.iter().any(|&p| self.shape(p).0 != rows) {
            return Err(Error::Shape("concat_cols row counts differ".into()));
        }
        if parts.len() == 1 {
            return Ok(first);
        }
        Ok(self.push(Op::ConcatCols(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let cols = self.shape(a).1;
        if start + len > cols {
            return Err(Error::Shape(format!("slice_cols {start}+{len} > {cols}")));
        }
        if start == 0 && len == cols {
            return Ok(a);
        }
        Ok(self.push(Op::SliceCols(a, start, len)))
    }

    pub fn gather_rows(&mut self, a: Var, idx: Arc<[u32]>) -> Result<Var> {
        let rows = self.shape(a).0;
        if let Some(&bad) = idx.iter().find(|&&i| i as usize >= rows) {
            return Err(Error::IndexOutOfRange {
                what: "gather_rows source",
                index: bad as usize,
                len: rows,
            });
        }
        Ok(self.push(Op::GatherRows(a, idx)))
    }

    /// Row `k` of `a` is added into row `idx[k]` of an `n`-row output.
    pub fn scatter_add_rows(&mut self, a: Var, idx: Arc<[u32]>, n: usize) -> Result<Var> {
        if idx.len() != self.shape(a).0 {
            return Err(Error::mismatch("scatter_add_rows index", self.shape(a).0, idx.len()));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i as usize >= n) {
            return Err(Error::IndexOutOfRange {
                what: "scatter_add_rows target",
                index: bad as usize,
                len: n,
            });
        }
        Ok(self.push(Op::ScatterAddRows(a, idx, n)))
    }

    /// Column-wise softmax within each segment `offsets[i]..offsets[i+1]`
    /// of rows.
    pub fn segment_softmax(&mut self, a: Var, offsets: Arc<[usize]>) -> Result<Var> {
        let rows = self.shape(a).0;
        if offsets.first() != Some(&0)
            || offsets.last() != Some(&rows)
            || offsets.windows(2).any(|w| w[0] > w[1])
        {
            return Err(Error::Shape("segment offsets do not partition rows".into()));
        }
        Ok(self.push(Op::SegmentSoftmax(a, offsets)))
    }

    /// Mean negative log-likelihood over the rows listed in `mask`.
    /// `targets` holds one class index per row of `logits`.
    pub fn cross_entropy_with_logits(
        &mut self,
        logits: Var,
        targets: Arc<[u32]>,
        mask: Arc<[u32]>,
    ) -> Result<Var> {
        let (rows, classes) = self.shape(logits);
        if mask.is_empty() {
            return Err(Error::Empty("cross-entropy mask"));
        }
        if targets.len() != rows {
            return Err(Error::mismatch("cross-entropy targets", rows, targets.len()));
        }
        for &i in mask.iter() {
            let i = i as usize;
            if i >= rows {
                return Err(Error::IndexOutOfRange {
                    what: "cross-entropy mask",
                    index: i,
                    len: rows,
                });
            }
            if targets[i] as usize >= classes {
                return Err(Error::LabelOutOfRange {
                    label: targets[i] as usize,
                    position: i,
                    num_classes: classes,
                });
            }
        }
        Ok(self.push(Op::CrossEntropy {
            logits,
            targets,
            mask,
        }))
    }

    /// `leak·u_prev·(1 − o_prev) + input + (1 − leak)·rest`. The reset
    /// factor `(1 − o_prev)` is treated as a constant in backward.
    pub fn lif_integrate(
        &mut self,
        u_prev: Var,
        spikes_prev: Option<Var>,
        input: Var,
        leak: S,
        rest: S,
    ) -> Result<Var> {
        self.check_same("lif membrane/input", u_prev, input)?;
        if let Some(o) = spikes_prev {
            self.check_same("lif membrane/spikes", u_prev, o)?;
        }
        if !self.value(input).is_finite() {
            return Err(Error::NonFinite("LIF input current".into()));
        }
        Ok(self.push(Op::LifIntegrate {
            u_prev,
            spikes_prev,
            input,
            leak,
            rest,
        }))
    }

    /// Heaviside spike `u_pre ≥ threshold` with a rectangular surrogate
    /// derivative of the given width.
    pub fn lif_fire(&mut self, u_pre: Var, threshold: S, width: S) -> Var {
        self.push(Op::LifFire {
            u_pre,
            threshold,
            width,
        })
    }

    /// Hard reset to `rest` where a spike fired; gradient flows only
    /// through the non-spiking entries.
    pub fn lif_reset(&mut self, u_pre: Var, spikes: Var, rest: S) -> Result<Var> {
        self.check_same("lif reset", u_pre, spikes)?;
        Ok(self.push(Op::LifReset {
            u_pre,
            spikes,
            rest,
        }))
    }

    /// Elementwise product with a fixed, pre-scaled keep mask.
    pub fn dropout(&mut self, a: Var, mask: Arc<[S]>) -> Result<Var> {
        if mask.len() != self.value(a).len() {
            return Err(Error::mismatch("dropout mask", self.value(a).len(), mask.len()));
        }
        Ok(self.push(Op::Dropout(a, mask)))
    }

    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        if self.shape(a).0 == 0 {
            return Err(Error::Empty("mean over rows"));
        }
        Ok(self.push(Op::MeanRows(a)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        self.push(Op::Sum(a))
    }

    /// Reverse-mode accumulation from a scalar output.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::IndexOutOfRange {
                what: "tape",
                index: loss.0,
                len: self.nodes.len(),
            });
        }
        if self.shape(loss) != (1, 1) {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor<S>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(S::one()));

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            self.backward_node(node, &g, &mut grads);
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn backward_node(&self, node: &Node<S>, g: &Tensor<S>, grads: &mut [Option<Tensor<S>>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let mut acc = |v: Var, t: Tensor<S>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if wants(*a) {
                    acc(*a, matmul_nt(g, val(*b)));
                }
                if wants(*b) {
                    let mut gb = matmul_tn(val(*a), g);
                    if self.faulty_backward {
                        gb = gb.map(|x| x * S::of(2.0));
                    }
                    acc(*b, gb);
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::AddRow(a, row) => {
                acc(*a, g.clone());
                if wants(*row) {
                    let sums = Tensor::from_fn(1, g.cols(), |_, c| {
                        (0..g.rows()).map(|r| g.get(r, c)).sum::<S>()
                    });
                    acc(*row, sums);
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    acc(*a, g.zip_map(val(*b), |x, y| x * y));
                }
                if wants(*b) {
                    acc(*b, g.zip_map(val(*a), |x, y| x * y));
                }
            }
            Op::MulCol(a, col) => {
                let (av, cv) = (val(*a), val(*col));
                if wants(*a) {
                    let mut ga = g.clone();
                    for r in 0..ga.rows() {
                        let c = cv.data()[r];
                        for x in ga.row_mut(r) {
                            *x = *x * c;
                        }
                    }
                    acc(*a, ga);
                }
                if wants(*col) {
                    let gc = Tensor::from_fn(g.rows(), 1, |r, _| {
                        g.row(r).iter().zip(av.row(r)).map(|(&x, &y)| x * y).sum()
                    });
                    acc(*col, gc);
                }
            }
            Op::Scale(a, s) => acc(*a, g.map(|x| x * *s)),
            Op::ScaleRows(a, f) => {
                let mut ga = g.clone();
                for (r, &fr) in f.iter().enumerate() {
                    for x in ga.row_mut(r) {
                        *x = *x * fr;
                    }
                }
                acc(*a, ga);
            }
            Op::LeakyRelu(a, slope) => {
                acc(
                    *a,
                    g.zip_map(val(*a), |gx, x| if x >= S::zero() { gx } else { gx * *slope }),
                );
            }
            Op::Elu(a) => {
                acc(
                    *a,
                    g.zip_map(val(*a), |gx, x| if x > S::zero() { gx } else { gx * x.exp() }),
                );
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let w = val(p).cols();
                    if wants(p) {
                        acc(p, Tensor::from_fn(g.rows(), w, |r, c| g.get(r, start + c)));
                    }
                    start += w;
                }
            }
            Op::SliceCols(a, start, len) => {
                let (rows, cols) = val(*a).shape();
                let mut ga = Tensor::zeros(rows, cols);
                for r in 0..rows {
                    ga.row_mut(r)[*start..start + len].copy_from_slice(g.row(r));
                }
                acc(*a, ga);
            }
            Op::GatherRows(a, idx) => {
                let (rows, cols) = val(*a).shape();
                let mut ga = Tensor::zeros(rows, cols);
                for (k, &i) in idx.iter().enumerate() {
                    for (o, &x) in ga.row_mut(i as usize).iter_mut().zip(g.row(k)) {
                        *o = *o + x;
                    }
                }
                acc(*a, ga);
            }
            Op::ScatterAddRows(a, idx, _) => {
                let cols = g.cols();
                let mut data = Vec::with_capacity(idx.len() * cols);
                for &i in idx.iter() {
                    data.extend_from_slice(g.row(i as usize));
                }
                acc(*a, Tensor::from_vec(idx.len(), cols, data).expect("scatter grad"));
            }
            Op::SegmentSoftmax(a, offsets) => {
                let alpha = &node.value;
                let mut ga = Tensor::zeros(alpha.rows(), alpha.cols());
                for seg in offsets.windows(2) {
                    for c in 0..alpha.cols() {
                        let dot: S = (seg[0]..seg[1]).map(|e| alpha.get(e, c) * g.get(e, c)).sum();
                        for e in seg[0]..seg[1] {
                            ga.set(e, c, alpha.get(e, c) * (g.get(e, c) - dot));
                        }
                    }
                }
                acc(*a, ga);
            }
            Op::CrossEntropy {
                logits,
                targets,
                mask,
            } => {
                let lv = val(*logits);
                let up = g.item() / S::of(mask.len() as f64);
                let mut gl = Tensor::zeros(lv.rows(), lv.cols());
                for &i in mask.iter() {
                    let i = i as usize;
                    let row = lv.row(i);
                    let (max, lse) = log_softmax_row(row);
                    let target = targets[i] as usize;
                    for (c, (o, &x)) in gl.row_mut(i).iter_mut().zip(row).enumerate() {
                        let p = (x - max - lse).exp();
                        let y = if c == target { S::one() } else { S::zero() };
                        *o = *o + up * (p - y);
                    }
                }
                acc(*logits, gl);
            }
            Op::LifIntegrate {
                u_prev,
                spikes_prev,
                input,
                leak,
                ..
            } => {
                if wants(*u_prev) {
                    let gu = match spikes_prev {
                        Some(o) => g.zip_map(val(*o), |gx, o| gx * *leak * (S::one() - o)),
                        None => g.map(|gx| gx * *leak),
                    };
                    acc(*u_prev, gu);
                }
                acc(*input, g.clone());
            }
            Op::LifFire {
                u_pre,
                threshold,
                width,
            } => {
                acc(
                    *u_pre,
                    g.zip_map(val(*u_pre), |gx, u| {
                        gx * rect_surrogate(u, *threshold, *width)
                    }),
                );
            }
            Op::LifReset { u_pre, spikes, .. } => {
                acc(*u_pre, g.zip_map(val(*spikes), |gx, o| gx * (S::one() - o)));
            }
            Op::Dropout(a, mask) => {
                let mut ga = g.clone();
                for (x, &m) in ga.data_mut().iter_mut().zip(mask.iter()) {
                    *x = *x * m;
                }
                acc(*a, ga);
            }
            Op::MeanRows(a) => {
                let rows = val(*a).rows();
                let inv = S::one() / S::of(rows as f64);
                acc(*a, Tensor::from_fn(rows, g.cols(), |_, c| g.get(0, c) * inv));
            }
            Op::Sum(a) => {
                let (rows, cols) = val(*a).shape();
                acc(*a, Tensor::full(rows, cols, g.item()));
            }
        }
    }

    /// Re-executes every recorded primitive from the stored leaves and
    /// returns the recomputed values in tape order.
    pub fn replay(&self) -> Vec<Tensor<S>> {
        let mut values: Vec<Tensor<S>> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match &node.op {
                Op::Leaf => node.value.clone(),
                op => eval(op, &|v: Var| &values[v.0]),
            };
            values.push(v);
        }
        values
    }

    /// Stored forward values in tape order.
    pub fn values(&self) -> impl Iterator<Item = &Tensor<S>> {
        self.nodes.iter().map(|n| &n.value)
    }
}

/// Gradients of one backward pass, indexed by [`Var`].
#[derive(Clone, Debug)]
pub struct Gradients<S> {
    grads: Vec<Option<Tensor<S>>>,
    shapes: Vec<(usize, usize)>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, v: Var) -> Option<&Tensor<S>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient with respect to `v`; zero when `v` did not influence the
    /// loss.
    pub fn wrt(&self, v: Var) -> Tensor<S> {
        match self.get(v) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Tensor::zeros(r, c)
            }
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor<S> {
        match self.grads[v.0].take() {
            Some(g) => g,
            None => {
                let (r, c) = self.shapes[v.0];
                Tensor::zeros(r, c)
            }
        }
    }
}
