//! Pure forward definitions of the operations the tape records.

use super::{NnError, Tensor2};

pub const LEAKY_RELU_SLOPE: f64 = 0.2;
pub const ELU_ALPHA: f64 = 1.0;

fn shape_err(op: &'static str, detail: String) -> NnError {
    NnError::Shape { op, detail }
}

/// `x · wᵀ`: each row of `x` is an input vector, `w` is `out × in`.
pub fn linear(x: &Tensor2, w: &Tensor2) -> Result<Tensor2, NnError> {
    if x.cols() != w.cols() {
        return Err(shape_err(
            "linear",
            format!("input {:?} against weight {:?}", x.shape(), w.shape()),
        ));
    }
    Ok(Tensor2::from_array(x.array().dot(&w.array().t())))
}

pub fn concat(a: &Tensor2, b: &Tensor2) -> Result<Tensor2, NnError> {
    if a.rows() != b.rows() {
        return Err(shape_err(
            "concat",
            format!("{:?} and {:?}", a.shape(), b.shape()),
        ));
    }
    let mut out = Tensor2::zeros(a.rows(), a.cols() + b.cols());
    for r in 0..a.rows() {
        let row = out.row_mut(r);
        row[..a.cols()].copy_from_slice(a.row(r));
        row[a.cols()..].copy_from_slice(b.row(r));
    }
    Ok(out)
}

pub fn mean_rows(m: &Tensor2) -> Result<Tensor2, NnError> {
    if m.rows() == 0 {
        return Err(shape_err("mean_rows", "no rows".into()));
    }
    let mean = m.array().mean_axis(ndarray::Axis(0)).expect("nonempty");
    Ok(Tensor2::row_vector(mean.as_slice().expect("contiguous")))
}

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &Tensor2) -> Tensor2 {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    out
}

pub(crate) fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x /= sum;
    }
}

pub fn relu(x: &Tensor2) -> Tensor2 {
    Tensor2::from_array(x.array().mapv(|v| v.max(0.0)))
}

pub fn elu(x: &Tensor2) -> Tensor2 {
    Tensor2::from_array(x.array().mapv(elu_scalar))
}

pub(crate) fn elu_scalar(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        ELU_ALPHA * v.exp_m1()
    }
}

pub fn leaky_relu(x: &Tensor2, slope: f64) -> Tensor2 {
    Tensor2::from_array(x.array().mapv(|v| if v > 0.0 { v } else { slope * v }))
}

pub fn residual_add(x: &Tensor2, y: &Tensor2) -> Result<Tensor2, NnError> {
    if x.shape() != y.shape() {
        return Err(shape_err(
            "residual_add",
            format!("{:?} and {:?}", x.shape(), y.shape()),
        ));
    }
    Ok(Tensor2::from_array(x.array() + y.array()))
}

pub(crate) fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

/// Cosine similarity. A zero vector against a nonzero one scores 0; two
/// zero vectors have no defined angle.
pub fn cosine(x: &[f64], y: &[f64]) -> Result<f64, NnError> {
    if x.len() != y.len() {
        return Err(shape_err(
            "cosine",
            format!("lengths {} and {}", x.len(), y.len()),
        ));
    }
    let (nx, ny) = (norm(x), norm(y));
    match (nx == 0.0, ny == 0.0) {
        (true, true) => Err(NnError::Degenerate("cosine of two zero vectors".into())),
        (true, false) | (false, true) => Ok(0.0),
        _ => Ok(dot(x, y) / (nx * ny)),
    }
}
