//! Minimal differentiable kernel: dense matrices, the handful of activations
//! the channels need, a reverse-mode tape and a finite-difference checker.

mod ops;
mod tape;
mod tensor;

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use thiserror::Error;

pub use ops::{
    concat, cosine, elu, leaky_relu, linear, mean_rows, relu, residual_add, softmax, ELU_ALPHA,
    LEAKY_RELU_SLOPE,
};
pub use tape::{MeanOperator, Tape, Var};
pub use tensor::Tensor2;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("{0}")]
    Usage(String),
    #[error("unknown parameter {0:?}")]
    UnknownParam(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("checkpoint line {line}: {msg}")]
    Checkpoint { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A learnable matrix and its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor2,
    pub grad: Tensor2,
    /// Frozen parameters are carried along (and checkpointed) but never updated.
    pub trainable: bool,
}

impl Param {
    pub fn new(value: Tensor2, trainable: bool) -> Self {
        let (r, c) = value.shape();
        Self {
            value,
            grad: Tensor2::zeros(r, c),
            trainable,
        }
    }
}

/// Named parameters, iterated in name order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    params: BTreeMap<String, Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor2, trainable: bool) {
        self.params.insert(name.to_owned(), Param::new(value, trainable));
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.get_mut(name)
    }

    pub fn value(&self, name: &str) -> Result<&Tensor2, NnError> {
        self.get(name)
            .map(|p| &p.value)
            .ok_or_else(|| NnError::UnknownParam(name.to_owned()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params.values_mut() {
            p.grad.as_slice_mut().fill(0.0);
        }
    }

    /// Writes every parameter as a `#param <name> <rows> <cols>` header
    /// followed by one line of space-separated floats per row. Floats use the
    /// shortest representation that parses back to the same bits.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<(), NnError> {
        for (name, p) in &self.params {
            let (rows, cols) = p.value.shape();
            writeln!(w, "#param {name} {rows} {cols}")?;
            for r in 0..rows {
                let line: Vec<String> = p.value.row(r).iter().map(|x| format!("{x:?}")).collect();
                writeln!(w, "{}", line.join(" "))?;
            }
        }
        Ok(())
    }

    /// Reads a checkpoint written by [`ParamSet::write_checkpoint`]. Every
    /// parameter comes back trainable.
    pub fn read_checkpoint<R: BufRead>(r: R) -> Result<Self, NnError> {
        let mut set = ParamSet::new();
        let mut lines = r.lines().enumerate();
        while let Some((idx, line)) = lines.next() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |msg: String| NnError::Checkpoint { line: idx + 1, msg };
            let header: Vec<&str> = line.split_whitespace().collect();
            if header.len() != 4 || header[0] != "#param" {
                return Err(bad(format!("expected `#param <name> <rows> <cols>`, got {line:?}")));
            }
            let rows: usize = header[2].parse().map_err(|_| bad("bad row count".into()))?;
            let cols: usize = header[3].parse().map_err(|_| bad("bad column count".into()))?;
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let (ridx, row) = lines
                    .next()
                    .ok_or_else(|| bad(format!("parameter {} truncated", header[1])))?;
                let row = row?;
                let before = data.len();
                for tok in row.split_whitespace() {
                    data.push(tok.parse::<f64>().map_err(|_| NnError::Checkpoint {
                        line: ridx + 1,
                        msg: format!("bad float {tok:?}"),
                    })?);
                }
                if data.len() - before != cols {
                    return Err(NnError::Checkpoint {
                        line: ridx + 1,
                        msg: format!("expected {cols} values"),
                    });
                }
            }
            if set.contains(header[1]) {
                return Err(bad(format!("duplicate parameter {}", header[1])));
            }
            set.insert(header[1], Tensor2::from_vec(rows, cols, data)?, true);
        }
        Ok(set)
    }
}

/// Compares reverse-mode gradients of `f` against central finite differences
/// and returns `max |analytic - numeric| / max(1, |numeric|)` over every
/// trainable parameter entry.
pub fn grad_check<F>(f: F, params: &ParamSet, step: f64) -> Result<f64, NnError>
where
    F: Fn(&mut Tape, &ParamSet) -> Result<Var, NnError>,
{
    if !(step > 0.0) {
        return Err(NnError::Usage(format!("finite-difference step must be positive, got {step}")));
    }
    let eval = |p: &ParamSet| -> Result<f64, NnError> {
        let mut tape = Tape::new();
        let out = f(&mut tape, p)?;
        let v = tape
            .value(out)
            .item()
            .ok_or_else(|| NnError::Usage("grad_check needs a scalar function".into()))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(NnError::NonFinite("function value".into()))
        }
    };

    let mut analytic = params.clone();
    analytic.zero_grad();
    let mut tape = Tape::new();
    let out = f(&mut tape, &analytic)?;
    tape.backward(out, &mut analytic)?;

    let mut probe = params.clone();
    let mut worst = 0.0f64;
    let names: Vec<String> = params
        .iter()
        .filter(|(_, p)| p.trainable)
        .map(|(n, _)| n.to_owned())
        .collect();
    for name in names {
        let n = params.value(&name)?.as_slice().len();
        for k in 0..n {
            let original = params.value(&name)?.as_slice()[k];
            probe.get_mut(&name).expect("cloned").value.as_slice_mut()[k] = original + step;
            let plus = eval(&probe)?;
            probe.get_mut(&name).expect("cloned").value.as_slice_mut()[k] = original - step;
            let minus = eval(&probe)?;
            probe.get_mut(&name).expect("cloned").value.as_slice_mut()[k] = original;

            let numeric = (plus - minus) / (2.0 * step);
            let exact = analytic.get(&name).expect("cloned").grad.as_slice()[k];
            worst = worst.max((exact - numeric).abs() / numeric.abs().max(1.0));
        }
    }
    Ok(worst)
}
