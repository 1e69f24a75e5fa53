use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use super::{AutodiffError, ParamId, ParameterSet, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Identity,
    Elu,
    LeakyRelu(f64),
    Sigmoid,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Concat(Vec<Var>),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Elu(Var),
    GatherRows(Var, Rc<[usize]>),
    ScatterAddRows(Var, Rc<[usize]>),
    SegmentSoftmax(Var, Rc<[usize]>),
    MulRows(Var, Var),
    Mean(Vec<Var>),
    Sum(Var),
    Reshape(Var),
    WeightedSum(Vec<(Var, f64)>),
    BceWithLogits {
        logits: Var,
        target: Rc<Tensor>,
        mask: Rc<[f64]>,
        denom: f64,
    },
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
}

/// Records forward operations so gradients can be replayed in reverse.
///
/// Nodes are appended in evaluation order, so index order is a topological
/// order and the backward pass is a single reverse sweep.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    params: RefCell<HashMap<ParamId, Var>>,
}

/// Gradients for every node that the loss depends on.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: HashMap<ParamId, Var>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient of a registered parameter; `None` if it never reached the loss.
    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(&id).and_then(|v| self.get(*v))
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.params.keys().copied()
    }
}

fn shape_err(op: &'static str, detail: String) -> AutodiffError {
    AutodiffError::Shape { op, detail }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// Drops all recorded nodes so the tape can be reused.
    pub fn clear(&self) {
        self.nodes.borrow_mut().clear();
        self.params.borrow_mut().clear();
    }

    fn push(&self, value: Tensor, op: Op) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
        });
        Var(nodes.len() - 1)
    }

    pub fn value(&self, var: Var) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[var.0].value)
    }

    pub fn shape(&self, var: Var) -> Vec<usize> {
        self.nodes.borrow()[var.0].value.shape().to_vec()
    }

    /// Records a constant input.
    pub fn constant(&self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Records a parameter; repeated calls for the same id return the same node.
    pub fn param(&self, params: &ParameterSet, id: ParamId) -> Var {
        if let Some(v) = self.params.borrow().get(&id) {
            return *v;
        }
        let var = self.push(params.value(id).clone(), Op::Leaf);
        self.params.borrow_mut().insert(id, var);
        var
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape().len() != 2 || bv.shape().len() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(shape_err(
                "matmul",
                format!("{:?} x {:?}", av.shape(), bv.shape()),
            ));
        }
        Ok(self.push(av.matmul_t(false, &bv, false), Op::MatMul(a, b)))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err(
                "add",
                format!("{:?} + {:?}", av.shape(), bv.shape()),
            ));
        }
        let mut out = (*av).clone();
        out.add_assign(&bv);
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// Adds a bias vector `[n]` to every row of `x[m, n]`.
    pub fn add_bias(&self, x: Var, bias: Var) -> Result<Var, AutodiffError> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if xv.shape().len() != 2 || bv.shape() != [xv.shape()[1]] {
            return Err(shape_err(
                "add_bias",
                format!("{:?} + {:?}", xv.shape(), bv.shape()),
            ));
        }
        let n = xv.cols();
        let mut out = (*xv).clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v += bv.data()[i % n];
        }
        Ok(self.push(out, Op::AddBias(x, bias)))
    }

    /// Elementwise product of equal-shaped tensors.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err(
                "mul",
                format!("{:?} * {:?}", av.shape(), bv.shape()),
            ));
        }
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| x * y)
            .collect();
        Ok(self.push(Tensor::raw(av.shape().to_vec(), data), Op::Mul(a, b)))
    }

    pub fn scale(&self, x: Var, factor: f64) -> Var {
        let out = self.value(x).map(|v| v * factor);
        self.push(out, Op::Scale(x, factor))
    }

    /// Concatenates 2-D tensors with equal row counts along the last dimension.
    pub fn concat_last_dim(&self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let values: Vec<_> = parts.iter().map(|&p| self.value(p)).collect();
        let Some(first) = values.first() else {
            return Err(shape_err("concat_last_dim", "no inputs".into()));
        };
        let rows = first.rows();
        if values
            .iter()
            .any(|v| v.shape().len() != 2 || v.rows() != rows)
        {
            let shapes: Vec<_> = values.iter().map(|v| v.shape().to_vec()).collect();
            return Err(shape_err("concat_last_dim", format!("{shapes:?}")));
        }
        let total: usize = values.iter().map(|v| v.cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for v in &values {
                data.extend_from_slice(v.row(r));
            }
        }
        Ok(self.push(
            Tensor::raw(vec![rows, total], data),
            Op::Concat(parts.to_vec()),
        ))
    }

    pub fn leaky_relu(&self, x: Var, slope: f64) -> Var {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { slope * v });
        self.push(out, Op::LeakyRelu(x, slope))
    }

    pub fn sigmoid(&self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        self.push(out, Op::Sigmoid(x))
    }

    /// ELU with unit scale.
    pub fn elu(&self, x: Var) -> Var {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { v.exp_m1() });
        self.push(out, Op::Elu(x))
    }

    pub fn activate(&self, x: Var, act: Activation) -> Var {
        match act {
            Activation::Identity => x,
            Activation::Elu => self.elu(x),
            Activation::LeakyRelu(s) => self.leaky_relu(x, s),
            Activation::Sigmoid => self.sigmoid(x),
        }
    }

    /// Selects rows `x[index[e]]` into an `[E, f]` tensor.
    pub fn gather_rows(&self, x: Var, index: Rc<[usize]>) -> Result<Var, AutodiffError> {
        let xv = self.value(x);
        if xv.shape().len() != 2 || index.iter().any(|&i| i >= xv.rows()) {
            return Err(shape_err(
                "gather_rows",
                format!("{:?} with index beyond rows", xv.shape()),
            ));
        }
        let f = xv.cols();
        let mut data = Vec::with_capacity(index.len() * f);
        for &i in index.iter() {
            data.extend_from_slice(xv.row(i));
        }
        Ok(self.push(
            Tensor::raw(vec![index.len(), f], data),
            Op::GatherRows(x, index),
        ))
    }

    /// Sums rows of `x[E, f]` into `rows` output rows by `index[e]`.
    pub fn scatter_add_rows(
        &self,
        x: Var,
        index: Rc<[usize]>,
        rows: usize,
    ) -> Result<Var, AutodiffError> {
        let xv = self.value(x);
        if xv.shape().len() != 2 || xv.rows() != index.len() || index.iter().any(|&i| i >= rows) {
            return Err(shape_err(
                "scatter_add_rows",
                format!(
                    "{:?} with {} indices into {rows} rows",
                    xv.shape(),
                    index.len()
                ),
            ));
        }
        let f = xv.cols();
        let mut data = vec![0.0; rows * f];
        for (e, &i) in index.iter().enumerate() {
            for (o, v) in data[i * f..(i + 1) * f].iter_mut().zip(xv.row(e)) {
                *o += v;
            }
        }
        Ok(self.push(
            Tensor::raw(vec![rows, f], data),
            Op::ScatterAddRows(x, index),
        ))
    }

    /// Softmax of a `[E]` vector within runs of equal, sorted segment ids.
    pub fn segment_softmax(
        &self,
        logits: Var,
        segments: Rc<[usize]>,
    ) -> Result<Var, AutodiffError> {
        let lv = self.value(logits);
        if lv.shape().len() != 1 || lv.len() != segments.len() {
            return Err(shape_err(
                "segment_softmax",
                format!("{:?} with {} segment ids", lv.shape(), segments.len()),
            ));
        }
        if segments.windows(2).any(|w| w[0] > w[1]) {
            return Err(shape_err(
                "segment_softmax",
                "segment ids not sorted".into(),
            ));
        }
        let mut out = vec![0.0; lv.len()];
        for range in segment_ranges(&segments) {
            let xs = &lv.data()[range.clone()];
            let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            for (o, e) in out[range].iter_mut().zip(exps) {
                *o = e / z;
            }
        }
        Ok(self.push(
            Tensor::raw(vec![lv.len()], out),
            Op::SegmentSoftmax(logits, segments),
        ))
    }

    /// Scales each row of `x[E, f]` by `w[E]`.
    pub fn mul_rows(&self, x: Var, w: Var) -> Result<Var, AutodiffError> {
        let (xv, wv) = (self.value(x), self.value(w));
        if xv.shape().len() != 2 || wv.shape() != [xv.rows()] {
            return Err(shape_err(
                "mul_rows",
                format!("{:?} by {:?}", xv.shape(), wv.shape()),
            ));
        }
        let f = xv.cols();
        let data = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v * wv.data()[i / f])
            .collect();
        Ok(self.push(Tensor::raw(xv.shape().to_vec(), data), Op::MulRows(x, w)))
    }

    /// Elementwise mean of equal-shaped tensors (used to average attention heads).
    pub fn mean_over_heads(&self, heads: &[Var]) -> Result<Var, AutodiffError> {
        let Some(&first) = heads.first() else {
            return Err(shape_err("mean_over_heads", "no inputs".into()));
        };
        let mut acc = (*self.value(first)).clone();
        for &h in &heads[1..] {
            let hv = self.value(h);
            if hv.shape() != acc.shape() {
                return Err(shape_err(
                    "mean_over_heads",
                    format!("{:?} vs {:?}", acc.shape(), hv.shape()),
                ));
            }
            acc.add_assign(&hv);
        }
        let k = heads.len() as f64;
        let out = acc.map(|v| v / k);
        Ok(self.push(out, Op::Mean(heads.to_vec())))
    }

    pub fn sum(&self, x: Var) -> Var {
        let total = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(total), Op::Sum(x))
    }

    pub fn reshape(&self, x: Var, shape: Vec<usize>) -> Result<Var, AutodiffError> {
        let xv = self.value(x);
        if shape.iter().product::<usize>() != xv.len() {
            return Err(shape_err(
                "reshape",
                format!("{:?} -> {shape:?}", xv.shape()),
            ));
        }
        Ok(self.push(xv.reshaped(shape), Op::Reshape(x)))
    }

    /// `Σ w_i · s_i` over scalar inputs.
    pub fn weighted_sum(&self, terms: &[(Var, f64)]) -> Result<Var, AutodiffError> {
        let mut total = 0.0;
        for &(v, w) in terms {
            let value = self.value(v);
            if !value.is_scalar() {
                return Err(shape_err(
                    "weighted_sum",
                    format!("non-scalar term {:?}", value.shape()),
                ));
            }
            total += w * value.item();
        }
        Ok(self.push(Tensor::scalar(total), Op::WeightedSum(terms.to_vec())))
    }

    /// Mean binary cross-entropy over unmasked rows of `logits[n, c]`.
    ///
    /// `mask[r]` weights row `r` (0 or 1); the mean runs over `Σ mask · c` entries.
    pub fn bce_with_logits(
        &self,
        logits: Var,
        target: &Tensor,
        mask: &[f64],
    ) -> Result<Var, AutodiffError> {
        let lv = self.value(logits);
        if lv.shape() != target.shape() || lv.shape().len() != 2 || mask.len() != lv.rows() {
            return Err(shape_err(
                "bce_with_logits",
                format!(
                    "logits {:?}, target {:?}, mask [{}]",
                    lv.shape(),
                    target.shape(),
                    mask.len()
                ),
            ));
        }
        let c = lv.cols();
        let denom = mask.iter().sum::<f64>() * c as f64;
        if denom <= 0.0 {
            return Err(AutodiffError::EmptyMask);
        }
        let mut total = 0.0;
        for (r, &m) in mask.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            for (x, t) in lv.row(r).iter().zip(target.row(r)) {
                total += m * (x.max(0.0) - x * t + (-x.abs()).exp().ln_1p());
            }
        }
        Ok(self.push(
            Tensor::scalar(total / denom),
            Op::BceWithLogits {
                logits,
                target: Rc::new(target.clone()),
                mask: mask.into(),
                denom,
            },
        ))
    }

    /// Reverse sweep from a scalar loss; gradients accumulate over shared subexpressions.
    ///
    /// With `retain` false the tape is cleared afterwards.
    pub fn backward(&self, loss: Var, retain: bool) -> Result<Gradients, AutodiffError> {
        let grads = {
            let nodes = self.nodes.borrow();
            let loss_value = &nodes[loss.0].value;
            if !loss_value.is_scalar() {
                return Err(AutodiffError::NonScalarLoss(loss_value.shape().to_vec()));
            }
            let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
            grads[loss.0] = Some(Tensor::full(loss_value.shape(), 1.0));
            for idx in (0..=loss.0).rev() {
                let Some(g) = grads[idx].take() else { continue };
                let node = &nodes[idx];
                propagate(&nodes, node, &g, &mut grads);
                grads[idx] = Some(g);
            }
            grads
        };
        let params = self.params.borrow().clone();
        if !retain {
            self.clear();
        }
        Ok(Gradients { grads, params })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], var: Var, g: Tensor) {
    match &mut grads[var.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn propagate(nodes: &[Node], node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let val = |v: Var| -> &Tensor { &nodes[v.0].value };
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            accumulate(grads, *a, g.matmul_t(false, val(*b), true));
            accumulate(grads, *b, val(*a).matmul_t(true, g, false));
        }
        Op::Add(a, b) => {
            accumulate(grads, *a, g.clone());
            accumulate(grads, *b, g.clone());
        }
        Op::AddBias(x, b) => {
            accumulate(grads, *x, g.clone());
            let n = g.cols();
            let mut db = vec![0.0; n];
            for (i, v) in g.data().iter().enumerate() {
                db[i % n] += v;
            }
            accumulate(grads, *b, Tensor::vector(db));
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let da = g.data().iter().zip(bv.data()).map(|(g, y)| g * y).collect();
            let db = g.data().iter().zip(av.data()).map(|(g, x)| g * x).collect();
            accumulate(grads, *a, Tensor::raw(g.shape().to_vec(), da));
            accumulate(grads, *b, Tensor::raw(g.shape().to_vec(), db));
        }
        Op::Scale(x, factor) => accumulate(grads, *x, g.map(|v| v * factor)),
        Op::Concat(parts) => {
            let rows = g.rows();
            let total = g.cols();
            let mut offset = 0;
            for &p in parts {
                let w = val(p).cols();
                let mut data = Vec::with_capacity(rows * w);
                for r in 0..rows {
                    data.extend_from_slice(&g.data()[r * total + offset..r * total + offset + w]);
                }
                accumulate(grads, p, Tensor::raw(vec![rows, w], data));
                offset += w;
            }
        }
        Op::LeakyRelu(x, slope) => {
            let xv = val(*x);
            let d = g
                .data()
                .iter()
                .zip(xv.data())
                .map(|(g, &x)| if x > 0.0 { *g } else { slope * g })
                .collect();
            accumulate(grads, *x, Tensor::raw(g.shape().to_vec(), d));
        }
        Op::Sigmoid(x) => {
            let y = &node.value;
            let d = g
                .data()
                .iter()
                .zip(y.data())
                .map(|(g, y)| g * y * (1.0 - y))
                .collect();
            accumulate(grads, *x, Tensor::raw(g.shape().to_vec(), d));
        }
        Op::Elu(x) => {
            let y = &node.value;
            let d = g
                .data()
                .iter()
                .zip(y.data())
                .zip(val(*x).data())
                .map(|((g, y), &x)| if x > 0.0 { *g } else { g * (y + 1.0) })
                .collect();
            accumulate(grads, *x, Tensor::raw(g.shape().to_vec(), d));
        }
        Op::GatherRows(x, index) => {
            let xv = val(*x);
            let f = xv.cols();
            let mut d = vec![0.0; xv.len()];
            for (e, &i) in index.iter().enumerate() {
                for (o, v) in d[i * f..(i + 1) * f].iter_mut().zip(g.row(e)) {
                    *o += v;
                }
            }
            accumulate(grads, *x, Tensor::raw(xv.shape().to_vec(), d));
        }
        Op::ScatterAddRows(x, index) => {
            let f = g.cols();
            let mut d = Vec::with_capacity(index.len() * f);
            for &i in index.iter() {
                d.extend_from_slice(g.row(i));
            }
            accumulate(grads, *x, Tensor::raw(vec![index.len(), f], d));
        }
        Op::SegmentSoftmax(x, segments) => {
            let y = node.value.data();
            let mut d = vec![0.0; y.len()];
            for range in segment_ranges(segments) {
                let dot: f64 = range.clone().map(|i| y[i] * g.data()[i]).sum();
                for i in range {
                    d[i] = y[i] * (g.data()[i] - dot);
                }
            }
            accumulate(grads, *x, Tensor::raw(vec![y.len()], d));
        }
        Op::MulRows(x, w) => {
            let (xv, wv) = (val(*x), val(*w));
            let f = xv.cols();
            let dx = g
                .data()
                .iter()
                .enumerate()
                .map(|(i, g)| g * wv.data()[i / f])
                .collect();
            let dw = (0..xv.rows())
                .map(|r| g.row(r).iter().zip(xv.row(r)).map(|(g, x)| g * x).sum())
                .collect();
            accumulate(grads, *x, Tensor::raw(xv.shape().to_vec(), dx));
            accumulate(grads, *w, Tensor::raw(wv.shape().to_vec(), dw));
        }
        Op::Mean(heads) => {
            let k = heads.len() as f64;
            for &h in heads {
                accumulate(grads, h, g.map(|v| v / k));
            }
        }
        Op::Sum(x) => {
            let xv = val(*x);
            accumulate(grads, *x, Tensor::full(xv.shape(), g.item()));
        }
        Op::Reshape(x) => accumulate(grads, *x, g.reshaped(val(*x).shape().to_vec())),
        Op::WeightedSum(terms) => {
            for &(v, w) in terms {
                accumulate(grads, v, Tensor::full(val(v).shape(), g.item() * w));
            }
        }
        Op::BceWithLogits {
            logits,
            target,
            mask,
            denom,
        } => {
            let lv = val(*logits);
            let c = lv.cols();
            let scale = g.item() / denom;
            let d = lv
                .data()
                .iter()
                .zip(target.data())
                .enumerate()
                .map(|(i, (x, t))| mask[i / c] * scale * (sigmoid(*x) - t))
                .collect();
            accumulate(grads, *logits, Tensor::raw(lv.shape().to_vec(), d));
        }
    }
}

pub(crate) fn segment_ranges(segments: &[usize]) -> Vec<std::ops::Range<usize>> {
    let mut ranges = Vec::new();
    let mut start = 0;
    for i in 1..=segments.len() {
        if i == segments.len() || segments[i] != segments[start] {
            ranges.push(start..i);
            start = i;
        }
    }
    ranges
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
