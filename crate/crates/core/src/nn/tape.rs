//! Reverse-mode differentiation over a linear tape of matrix operations.

use std::sync::Arc;

use ndarray::{Array2, Axis};

use super::ops::{self, LEAKY_RELU_SLOPE};
use super::{NnError, ParamSet, Tensor2};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Row-normalised sparse averaging operator: `out[i] = mean(x[j] for j in rows[i])`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanOperator {
    rows: Vec<Vec<usize>>,
    n_cols: usize,
}

impl MeanOperator {
    /// Every row must be nonempty and index into `0..n_cols`.
    pub fn new(rows: Vec<Vec<usize>>, n_cols: usize) -> Result<Self, NnError> {
        for (i, r) in rows.iter().enumerate() {
            if r.is_empty() || r.iter().any(|&j| j >= n_cols) {
                return Err(NnError::Shape {
                    op: "mean_operator",
                    detail: format!("row {i} is empty or out of range"),
                });
            }
        }
        Ok(Self { rows, n_cols })
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.rows[i]
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(String),
    Linear(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddScalar(Var),
    Scale(Var, f64),
    Concat(Var, Var),
    GatherRows(Var, Arc<Vec<usize>>),
    ScatterAddRows(Var, Arc<Vec<usize>>),
    SegmentSoftmax(Var, Arc<Vec<usize>>),
    ScaleRows(Var, Var),
    MeanAggregate(Var, Arc<MeanOperator>),
    Relu(Var),
    Elu(Var),
    LeakyRelu(Var, f64),
    SelectRows(Var, Var, Arc<Vec<bool>>),
    MeanRows(Var),
    Softmax(Var),
    PairCosine(Var, Var, Arc<Vec<(usize, usize)>>),
    Sum(Var),
}

/// Records a forward computation so that [`Tape::backward`] can replay it in
/// reverse.
#[derive(Debug, Default)]
pub struct Tape {
    values: Vec<Tensor2>,
    ops: Vec<Op>,
}

/// Norms below this are clamped when differentiating cosine similarity.
const COSINE_EPS: f64 = 1e-12;

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn push(&mut self, value: Tensor2, op: Op) -> Var {
        self.values.push(value);
        self.ops.push(op);
        Var(self.values.len() - 1)
    }

    fn check(&self, v: Var) -> Result<(), NnError> {
        if v.0 < self.values.len() {
            Ok(())
        } else {
            Err(NnError::Usage(format!("variable {} is not on this tape", v.0)))
        }
    }

    pub fn value(&self, v: Var) -> &Tensor2 {
        &self.values[v.0]
    }

    /// Records a constant input.
    pub fn constant(&mut self, t: Tensor2) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Records a parameter. Frozen parameters are recorded as constants.
    pub fn param(&mut self, params: &ParamSet, name: &str) -> Result<Var, NnError> {
        let p = params
            .get(name)
            .ok_or_else(|| NnError::UnknownParam(name.to_owned()))?;
        let op = if p.trainable {
            Op::Param(name.to_owned())
        } else {
            Op::Leaf
        };
        Ok(self.push(p.value.clone(), op))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), NnError> {
        self.check(a)?;
        self.check(b)?;
        let (sa, sb) = (self.values[a.0].shape(), self.values[b.0].shape());
        if sa != sb {
            return Err(NnError::Shape {
                op,
                detail: format!("{sa:?} and {sb:?}"),
            });
        }
        Ok(())
    }

    /// `x · wᵀ`.
    pub fn linear(&mut self, x: Var, w: Var) -> Result<Var, NnError> {
        self.check(x)?;
        self.check(w)?;
        let y = ops::linear(&self.values[x.0], &self.values[w.0])?;
        Ok(self.push(y, Op::Linear(x, w)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.same_shape("add", a, b)?;
        let y = Tensor2::from_array(self.values[a.0].array() + self.values[b.0].array());
        Ok(self.push(y, Op::Add(a, b)))
    }

    /// Residual connection; identical to [`Tape::add`].
    pub fn residual_add(&mut self, x: Var, y: Var) -> Result<Var, NnError> {
        self.same_shape("residual_add", x, y)?;
        self.add(x, y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.same_shape("sub", a, b)?;
        let y = Tensor2::from_array(self.values[a.0].array() - self.values[b.0].array());
        Ok(self.push(y, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.same_shape("mul", a, b)?;
        let y = Tensor2::from_array(self.values[a.0].array() * self.values[b.0].array());
        Ok(self.push(y, Op::Mul(a, b)))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var, NnError> {
        self.check(a)?;
        let y = Tensor2::from_array(self.values[a.0].array() + c);
        Ok(self.push(y, Op::AddScalar(a)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, NnError> {
        self.check(a)?;
        let y = Tensor2::from_array(self.values[a.0].array() * c);
        Ok(self.push(y, Op::Scale(a, c)))
    }

    /// Column-wise concatenation `[a; b]` of row vectors.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.check(a)?;
        self.check(b)?;
        let y = ops::concat(&self.values[a.0], &self.values[b.0])?;
        Ok(self.push(y, Op::Concat(a, b)))
    }

    pub fn gather_rows(&mut self, x: Var, idx: Arc<Vec<usize>>) -> Result<Var, NnError> {
        self.check(x)?;
        let xv = &self.values[x.0];
        if let Some(&bad) = idx.iter().find(|&&i| i >= xv.rows()) {
            return Err(NnError::Shape {
                op: "gather_rows",
                detail: format!("row {bad} of a {}-row tensor", xv.rows()),
            });
        }
        let y = xv.select_rows(&idx);
        Ok(self.push(y, Op::GatherRows(x, idx)))
    }

    /// Sums row `k` of `x` into output row `idx[k]`; the output has `n` rows.
    pub fn scatter_add_rows(
        &mut self,
        x: Var,
        idx: Arc<Vec<usize>>,
        n: usize,
    ) -> Result<Var, NnError> {
        self.check(x)?;
        let xv = &self.values[x.0];
        if idx.len() != xv.rows() || idx.iter().any(|&i| i >= n) {
            return Err(NnError::Shape {
                op: "scatter_add_rows",
                detail: format!("{} indices for {} rows into {n}", idx.len(), xv.rows()),
            });
        }
        let mut y = Tensor2::zeros(n, xv.cols());
        for (k, &i) in idx.iter().enumerate() {
            for (o, v) in y.row_mut(i).iter_mut().zip(xv.row(k)) {
                *o += v;
            }
        }
        Ok(self.push(y, Op::ScatterAddRows(x, idx)))
    }

    /// Softmax of a column vector within groups of rows sharing a segment id.
    pub fn segment_softmax(&mut self, x: Var, segments: Arc<Vec<usize>>) -> Result<Var, NnError> {
        self.check(x)?;
        let xv = &self.values[x.0];
        if xv.cols() != 1 || segments.len() != xv.rows() {
            return Err(NnError::Shape {
                op: "segment_softmax",
                detail: format!("{:?} with {} segment ids", xv.shape(), segments.len()),
            });
        }
        let mut y = xv.clone();
        for group in segment_groups(&segments) {
            let mut vals: Vec<f64> = group.iter().map(|&k| y.get(k, 0)).collect();
            ops::softmax_in_place(&mut vals);
            for (&k, v) in group.iter().zip(vals) {
                y.set(k, 0, v);
            }
        }
        Ok(self.push(y, Op::SegmentSoftmax(x, segments)))
    }

    /// Multiplies row `k` of `x` by the scalar `w[k]` (`w` is a column vector).
    pub fn scale_rows(&mut self, x: Var, w: Var) -> Result<Var, NnError> {
        self.check(x)?;
        self.check(w)?;
        let (xv, wv) = (&self.values[x.0], &self.values[w.0]);
        if wv.cols() != 1 || wv.rows() != xv.rows() {
            return Err(NnError::Shape {
                op: "scale_rows",
                detail: format!("{:?} by {:?}", xv.shape(), wv.shape()),
            });
        }
        let y = Tensor2::from_array(xv.array() * wv.array());
        Ok(self.push(y, Op::ScaleRows(x, w)))
    }

    pub fn mean_aggregate(&mut self, x: Var, op: Arc<MeanOperator>) -> Result<Var, NnError> {
        self.check(x)?;
        let xv = &self.values[x.0];
        if op.n_cols() != xv.rows() {
            return Err(NnError::Shape {
                op: "mean_aggregate",
                detail: format!("operator over {} rows, input has {}", op.n_cols(), xv.rows()),
            });
        }
        let mut y = Tensor2::zeros(op.n_rows(), xv.cols());
        for i in 0..op.n_rows() {
            let members = op.row(i);
            let inv = 1.0 / members.len() as f64;
            let out = y.row_mut(i);
            for &j in members {
                for (o, v) in out.iter_mut().zip(xv.row(j)) {
                    *o += v * inv;
                }
            }
        }
        Ok(self.push(y, Op::MeanAggregate(x, op)))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, NnError> {
        self.check(x)?;
        let y = ops::relu(&self.values[x.0]);
        Ok(self.push(y, Op::Relu(x)))
    }

    pub fn elu(&mut self, x: Var) -> Result<Var, NnError> {
        self.check(x)?;
        let y = ops::elu(&self.values[x.0]);
        Ok(self.push(y, Op::Elu(x)))
    }

    pub fn leaky_relu(&mut self, x: Var) -> Result<Var, NnError> {
        self.leaky_relu_with_slope(x, LEAKY_RELU_SLOPE)
    }

    pub fn leaky_relu_with_slope(&mut self, x: Var, slope: f64) -> Result<Var, NnError> {
        self.check(x)?;
        let y = ops::leaky_relu(&self.values[x.0], slope);
        Ok(self.push(y, Op::LeakyRelu(x, slope)))
    }

    /// Row `i` of the output is row `i` of `a` where `mask[i]`, else of `b`.
    pub fn select_rows(&mut self, a: Var, b: Var, mask: Arc<Vec<bool>>) -> Result<Var, NnError> {
        self.same_shape("select_rows", a, b)?;
        if mask.len() != self.values[a.0].rows() {
            return Err(NnError::Shape {
                op: "select_rows",
                detail: format!("mask of {} for {} rows", mask.len(), self.values[a.0].rows()),
            });
        }
        let mut y = self.values[b.0].clone();
        for (i, &m) in mask.iter().enumerate() {
            if m {
                y.row_mut(i).copy_from_slice(self.values[a.0].row(i));
            }
        }
        Ok(self.push(y, Op::SelectRows(a, b, mask)))
    }

    pub fn mean_rows(&mut self, x: Var) -> Result<Var, NnError> {
        self.check(x)?;
        let y = ops::mean_rows(&self.values[x.0])?;
        Ok(self.push(y, Op::MeanRows(x)))
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var, NnError> {
        self.check(x)?;
        let y = ops::softmax(&self.values[x.0]);
        Ok(self.push(y, Op::Softmax(x)))
    }

    /// Column vector of `cos(a[i], b[j])` for each `(i, j)` in `pairs`.
    pub fn pair_cosine(
        &mut self,
        a: Var,
        b: Var,
        pairs: Arc<Vec<(usize, usize)>>,
    ) -> Result<Var, NnError> {
        self.check(a)?;
        self.check(b)?;
        let (av, bv) = (&self.values[a.0], &self.values[b.0]);
        if av.cols() != bv.cols()
            || pairs.iter().any(|&(i, j)| i >= av.rows() || j >= bv.rows())
        {
            return Err(NnError::Shape {
                op: "pair_cosine",
                detail: format!("{:?} against {:?}", av.shape(), bv.shape()),
            });
        }
        let mut y = Tensor2::zeros(pairs.len(), 1);
        for (k, &(i, j)) in pairs.iter().enumerate() {
            let (x, z) = (av.row(i), bv.row(j));
            let denom = ops::norm(x).max(COSINE_EPS) * ops::norm(z).max(COSINE_EPS);
            y.set(k, 0, ops::dot(x, z) / denom);
        }
        Ok(self.push(y, Op::PairCosine(a, b, pairs)))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, NnError> {
        self.check(x)?;
        let y = Tensor2::scalar(self.values[x.0].array().sum());
        Ok(self.push(y, Op::Sum(x)))
    }

    /// Back-propagates from the scalar `loss` and adds the resulting gradients
    /// into the accumulators of `params`. Returns the loss value.
    pub fn backward(&self, loss: Var, params: &mut ParamSet) -> Result<f64, NnError> {
        if self.is_empty() {
            return Err(NnError::Usage("backward called before any forward op".into()));
        }
        self.check(loss)?;
        let loss_value = self.values[loss.0].item().ok_or_else(|| {
            NnError::Usage(format!(
                "backward needs a scalar loss, got {:?}",
                self.values[loss.0].shape()
            ))
        })?;
        if !loss_value.is_finite() {
            return Err(NnError::NonFinite("loss".into()));
        }

        let mut grads: Vec<Option<Array2<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Array2::ones((1, 1)));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            match &self.ops[idx] {
                Op::Leaf => {}
                Op::Param(name) => {
                    let p = params
                        .get_mut(name)
                        .ok_or_else(|| NnError::UnknownParam(name.clone()))?;
                    p.grad.0 += &g;
                }
                Op::Linear(x, w) => {
                    let (xv, wv) = (self.values[x.0].array(), self.values[w.0].array());
                    accumulate(&mut grads, *x, g.dot(wv));
                    accumulate(&mut grads, *w, g.t().dot(xv));
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, -&g);
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.values[a.0].array(), self.values[b.0].array());
                    accumulate(&mut grads, *a, &g * bv);
                    accumulate(&mut grads, *b, &g * av);
                }
                Op::AddScalar(a) => accumulate(&mut grads, *a, g),
                Op::Scale(a, c) => accumulate(&mut grads, *a, g * *c),
                Op::Concat(a, b) => {
                    let ca = self.values[a.0].cols();
                    let ga = g.slice(ndarray::s![.., ..ca]).to_owned();
                    let gb = g.slice(ndarray::s![.., ca..]).to_owned();
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::GatherRows(x, idx) => {
                    let xv = &self.values[x.0];
                    let mut gx = Array2::zeros(xv.shape());
                    for (k, &i) in idx.iter().enumerate() {
                        let mut row = gx.row_mut(i);
                        row += &g.row(k);
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::ScatterAddRows(x, idx) => {
                    let gx = g.select(Axis(0), idx);
                    accumulate(&mut grads, *x, gx);
                }
                Op::SegmentSoftmax(x, segments) => {
                    let y = &self.values[idx];
                    let mut gx = Array2::zeros((y.rows(), 1));
                    for group in segment_groups(segments) {
                        let inner: f64 = group.iter().map(|&k| y.get(k, 0) * g[(k, 0)]).sum();
                        for &k in &group {
                            gx[(k, 0)] = y.get(k, 0) * (g[(k, 0)] - inner);
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::ScaleRows(x, w) => {
                    let (xv, wv) = (self.values[x.0].array(), self.values[w.0].array());
                    let gw = (&g * xv).sum_axis(Axis(1)).insert_axis(Axis(1));
                    accumulate(&mut grads, *x, &g * wv);
                    accumulate(&mut grads, *w, gw);
                }
                Op::MeanAggregate(x, op) => {
                    let cols = g.ncols();
                    let mut gx = Array2::zeros((op.n_cols(), cols));
                    for i in 0..op.n_rows() {
                        let members = op.row(i);
                        let inv = 1.0 / members.len() as f64;
                        let gi = g.row(i);
                        for &j in members {
                            gx.row_mut(j).scaled_add(inv, &gi);
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Relu(x) => {
                    let xv = self.values[x.0].array();
                    let mut gx = g;
                    gx.zip_mut_with(xv, |gi, &xi| {
                        if xi <= 0.0 {
                            *gi = 0.0
                        }
                    });
                    accumulate(&mut grads, *x, gx);
                }
                Op::Elu(x) => {
                    let xv = self.values[x.0].array();
                    let mut gx = g;
                    gx.zip_mut_with(xv, |gi, &xi| {
                        if xi <= 0.0 {
                            *gi *= ops::ELU_ALPHA * xi.exp()
                        }
                    });
                    accumulate(&mut grads, *x, gx);
                }
                Op::LeakyRelu(x, slope) => {
                    let xv = self.values[x.0].array();
                    let mut gx = g;
                    gx.zip_mut_with(xv, |gi, &xi| {
                        if xi <= 0.0 {
                            *gi *= slope
                        }
                    });
                    accumulate(&mut grads, *x, gx);
                }
                Op::SelectRows(a, b, mask) => {
                    let mut ga = g.clone();
                    let mut gb = g;
                    for (i, &m) in mask.iter().enumerate() {
                        if m {
                            gb.row_mut(i).fill(0.0);
                        } else {
                            ga.row_mut(i).fill(0.0);
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::MeanRows(x) => {
                    let n = self.values[x.0].rows();
                    let gx = g.broadcast((n, g.ncols())).expect("1 x c").to_owned() / n as f64;
                    accumulate(&mut grads, *x, gx);
                }
                Op::Softmax(x) => {
                    let y = self.values[idx].array();
                    let inner = (&g * y).sum_axis(Axis(1)).insert_axis(Axis(1));
                    let gx = y * &(&g - &inner);
                    accumulate(&mut grads, *x, gx);
                }
                Op::PairCosine(a, b, pairs) => {
                    let (av, bv) = (&self.values[a.0], &self.values[b.0]);
                    let mut ga = Array2::zeros(av.shape());
                    let mut gb = Array2::zeros(bv.shape());
                    for (k, &(i, j)) in pairs.iter().enumerate() {
                        let gk = g[(k, 0)];
                        if gk == 0.0 {
                            continue;
                        }
                        let (x, z) = (av.row_view(i), bv.row_view(j));
                        let nx = ops::norm(av.row(i)).max(COSINE_EPS);
                        let nz = ops::norm(bv.row(j)).max(COSINE_EPS);
                        let c = ops::dot(av.row(i), bv.row(j)) / (nx * nz);
                        // d cos / dx = z / (|x||z|) - c x / |x|^2
                        let mut gai = ga.row_mut(i);
                        gai.scaled_add(gk / (nx * nz), &z);
                        gai.scaled_add(-gk * c / (nx * nx), &x);
                        let mut gbj = gb.row_mut(j);
                        gbj.scaled_add(gk / (nx * nz), &x);
                        gbj.scaled_add(-gk * c / (nz * nz), &z);
                    }
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Sum(x) => {
                    let gx = Array2::from_elem(self.values[x.0].shape(), g[(0, 0)]);
                    accumulate(&mut grads, *x, gx);
                }
            }
        }
        Ok(loss_value)
    }
}

fn accumulate(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

/// Row indices grouped by segment id, groups in order of first appearance.
fn segment_groups(segments: &[usize]) -> Vec<Vec<usize>> {
    let mut slot = std::collections::HashMap::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (k, &s) in segments.iter().enumerate() {
        let g = *slot.entry(s).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(k);
    }
    groups
}
