//! Similarity matrices and the two ways of merging channels: standardized
//! average pooling and a linear SVM over per-channel scores.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::EntityId;
use crate::nn::Tensor2;

/// Default number of SVM negatives drawn per positive pair.
pub const NEGATIVES_PER_POSITIVE: usize = 16;
/// Iteration budget of the SVM solver.
pub const SVM_ITERATIONS: usize = 1000;
/// Default regularization grid for the SVM.
pub const C_GRID: [f64; 6] = [1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1];

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("zero embedding for {side} entity {entity}")]
    ZeroEmbedding { side: &'static str, entity: EntityId },
    #[error("constant similarity matrix: the channel carries no signal")]
    ConstantMatrix,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("entity {0} is not a candidate")]
    UnknownEntity(EntityId),
    #[error("invalid ensemble configuration: {0}")]
    Config(String),
    #[error("{path}:{line}: {msg}")]
    Format { path: PathBuf, line: usize, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Scores between KG1 candidates (rows) and KG2 candidates (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub rows: Vec<EntityId>,
    pub cols: Vec<EntityId>,
    pub scores: Tensor2,
}

impl SimilarityMatrix {
    pub fn new(rows: Vec<EntityId>, cols: Vec<EntityId>, scores: Tensor2) -> Result<Self, EnsembleError> {
        if scores.shape() != (rows.len(), cols.len()) {
            return Err(EnsembleError::Shape(format!(
                "{} rows and {} cols for a {:?} score matrix",
                rows.len(),
                cols.len(),
                scores.shape()
            )));
        }
        check_unique(&rows)?;
        check_unique(&cols)?;
        Ok(Self { rows, cols, scores })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.scores.shape()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.scores.get(i, j)
    }

    pub fn row_index(&self, e: EntityId) -> Option<usize> {
        self.rows.iter().position(|&r| r == e)
    }

    pub fn col_index(&self, e: EntityId) -> Option<usize> {
        self.cols.iter().position(|&c| c == e)
    }

    /// The matrix seen from KG2: rows and columns swapped.
    pub fn transpose(&self) -> Self {
        Self {
            rows: self.cols.clone(),
            cols: self.rows.clone(),
            scores: Tensor2::from_array(self.scores.array().t().to_owned()),
        }
    }

    fn same_layout(&self, other: &Self) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    /// `#sim <rows> <cols>`, a line of row ids, a line of column ids, then
    /// one line of scores per row.
    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let ids = |v: &[EntityId]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
        writeln!(w, "#sim {} {}", self.rows.len(), self.cols.len())?;
        writeln!(w, "{}", ids(&self.rows))?;
        writeln!(w, "{}", ids(&self.cols))?;
        for i in 0..self.rows.len() {
            let line: Vec<String> = self.scores.row(i).iter().map(|x| format!("{x:?}")).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), EnsembleError> {
        let io = |source| EnsembleError::Io {
            path: path.to_owned(),
            source,
        };
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        self.write(&mut w).map_err(io)?;
        w.flush().map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, EnsembleError> {
        let io = |source| EnsembleError::Io {
            path: path.to_owned(),
            source,
        };
        let bad = |line: usize, msg: String| EnsembleError::Format {
            path: path.to_owned(),
            line,
            msg,
        };
        let file = File::open(path).map_err(io)?;
        let mut lines = BufReader::new(file).lines();
        let mut next = |n: usize| -> Result<String, EnsembleError> {
            lines
                .next()
                .ok_or_else(|| bad(n, "unexpected end of file".into()))?
                .map_err(io)
        };
        let header = next(1)?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        let (r, c) = match parts.as_slice() {
            ["#sim", r, c] => (
                r.parse::<usize>().map_err(|_| bad(1, "bad row count".into()))?,
                c.parse::<usize>().map_err(|_| bad(1, "bad column count".into()))?,
            ),
            _ => return Err(bad(1, format!("expected `#sim <rows> <cols>`, got {header:?}"))),
        };
        let parse_ids = |line: &str, n: usize, want: usize| -> Result<Vec<EntityId>, EnsembleError> {
            let ids = line
                .split_whitespace()
                .map(|t| t.parse::<EntityId>().map_err(|_| bad(n, format!("bad id {t:?}"))))
                .collect::<Result<Vec<_>, _>>()?;
            if ids.len() != want {
                return Err(bad(n, format!("expected {want} ids, found {}", ids.len())));
            }
            Ok(ids)
        };
        let rows = parse_ids(&next(2)?, 2, r)?;
        let cols = parse_ids(&next(3)?, 3, c)?;
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            let n = i + 4;
            let line = next(n)?;
            let before = data.len();
            for t in line.split_whitespace() {
                data.push(t.parse::<f64>().map_err(|_| bad(n, format!("bad score {t:?}")))?);
            }
            if data.len() - before != c {
                return Err(bad(n, format!("expected {c} scores")));
            }
        }
        let scores = Tensor2::from_vec(r, c, data).map_err(|e| bad(0, e.to_string()))?;
        Self::new(rows, cols, scores)
    }
}

fn unit_rows(
    emb: &Tensor2,
    ids: &[EntityId],
    side: &'static str,
) -> Result<Vec<Vec<f64>>, EnsembleError> {
    ids.iter()
        .map(|&e| {
            if e >= emb.rows() {
                return Err(EnsembleError::UnknownEntity(e));
            }
            let row = emb.row(e);
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(EnsembleError::ZeroEmbedding { side, entity: e });
            }
            Ok(row.iter().map(|x| x / norm).collect())
        })
        .collect()
}

/// Cosine similarity between every row candidate of `emb1` and every column
/// candidate of `emb2`.
pub fn similarity_matrix(
    emb1: &Tensor2,
    emb2: &Tensor2,
    rows: &[EntityId],
    cols: &[EntityId],
) -> Result<SimilarityMatrix, EnsembleError> {
    if emb1.cols() != emb2.cols() {
        return Err(EnsembleError::Shape(format!(
            "embedding dims {} and {}",
            emb1.cols(),
            emb2.cols()
        )));
    }
    let left = unit_rows(emb1, rows, "left")?;
    let right = unit_rows(emb2, cols, "right")?;
    let data: Vec<f64> = left
        .par_iter()
        .flat_map_iter(|a| {
            right
                .iter()
                .map(move |b| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>())
        })
        .collect();
    let scores = Tensor2::from_vec(rows.len(), cols.len(), data).expect("sized");
    SimilarityMatrix::new(rows.to_vec(), cols.to_vec(), scores)
}

/// `(S - mean) / std` over all entries, with the population std.
pub fn standardize(s: &SimilarityMatrix) -> Result<SimilarityMatrix, EnsembleError> {
    let v = s.scores.as_slice();
    if v.is_empty() {
        return Err(EnsembleError::Shape("empty similarity matrix".into()));
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if !(std > 0.0) || !std.is_finite() {
        return Err(EnsembleError::ConstantMatrix);
    }
    let mut out = s.clone();
    for x in out.scores.as_slice_mut() {
        *x = (*x - mean) / std;
    }
    Ok(out)
}

fn check_layouts(mats: &[SimilarityMatrix]) -> Result<&SimilarityMatrix, EnsembleError> {
    let first = mats
        .first()
        .ok_or_else(|| EnsembleError::Shape("no matrices to combine".into()))?;
    if let Some(k) = mats.iter().position(|m| !m.same_layout(first)) {
        return Err(EnsembleError::Shape(format!(
            "matrix {k} has different candidates than matrix 0"
        )));
    }
    Ok(first)
}

/// Elementwise mean of already standardized matrices.
pub fn average_pool(standardized: &[SimilarityMatrix]) -> Result<SimilarityMatrix, EnsembleError> {
    let weight = 1.0 / standardized.len().max(1) as f64;
    combine(standardized, &vec![weight; standardized.len()])
}

/// Weighted elementwise sum `Σ w_k S_k`.
pub fn combine(mats: &[SimilarityMatrix], w: &[f64]) -> Result<SimilarityMatrix, EnsembleError> {
    let first = check_layouts(mats)?;
    if w.len() != mats.len() {
        return Err(EnsembleError::Shape(format!(
            "{} weights for {} matrices",
            w.len(),
            mats.len()
        )));
    }
    let mut out = first.clone();
    out.scores.as_slice_mut().fill(0.0);
    for (m, &wk) in mats.iter().zip(w) {
        for (o, x) in out.scores.as_slice_mut().iter_mut().zip(m.scores.as_slice()) {
            *o += wk * x;
        }
    }
    Ok(out)
}

/// Training data for the channel-weighting SVM.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmSamples {
    /// One score per channel for each sampled cell.
    pub x: Vec<Vec<f64>>,
    /// 1 for aligned cells, 0 otherwise.
    pub y: Vec<u8>,
}

/// One positive per seed pair plus `negatives_per_positive` cells from the
/// same row whose column is not the seed's counterpart, drawn uniformly with
/// replacement.
pub fn build_svm_samples(
    mats: &[SimilarityMatrix],
    seeds: &[(EntityId, EntityId)],
    negatives_per_positive: usize,
    seed: u64,
) -> Result<SvmSamples, EnsembleError> {
    let first = check_layouts(mats)?;
    if seeds.is_empty() {
        return Err(EnsembleError::Config("no seed pairs for the SVM".into()));
    }
    let ncols = first.cols.len();
    if negatives_per_positive > 0 && ncols < 2 {
        return Err(EnsembleError::Config(
            "need at least two column candidates to sample negatives".into(),
        ));
    }
    let cell = |i: usize, j: usize| mats.iter().map(|m| m.get(i, j)).collect::<Vec<f64>>();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = SvmSamples {
        x: Vec::with_capacity(seeds.len() * (negatives_per_positive + 1)),
        y: Vec::with_capacity(seeds.len() * (negatives_per_positive + 1)),
    };
    for &(e, e2) in seeds {
        let i = first.row_index(e).ok_or(EnsembleError::UnknownEntity(e))?;
        let j = first.col_index(e2).ok_or(EnsembleError::UnknownEntity(e2))?;
        samples.x.push(cell(i, j));
        samples.y.push(1);
        for _ in 0..negatives_per_positive {
            // Uniform over the other ncols - 1 columns.
            let mut k = rng.random_range(0..ncols - 1);
            if k >= j {
                k += 1;
            }
            samples.x.push(cell(i, k));
            samples.y.push(0);
        }
    }
    Ok(samples)
}

/// Channel weights and the regularization constant that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleWeights {
    pub w: Vec<f64>,
    #[serde(rename = "C")]
    pub c: f64,
}

/// Result of an SVM fit: the weights plus the objective of the returned
/// iterate after every step.
#[derive(Debug, Clone)]
pub struct SvmFit {
    pub weights: EnsembleWeights,
    pub objective: Vec<f64>,
}

/// `C Σ [y max(0, 1 - wᵀx) + (1 - y) max(0, 1 + wᵀx)] + ½‖w‖²`.
pub fn svm_objective(samples: &SvmSamples, w: &[f64], c: f64) -> f64 {
    let hinge: f64 = samples
        .x
        .iter()
        .zip(&samples.y)
        .map(|(x, &y)| {
            let s: f64 = x.iter().zip(w).map(|(a, b)| a * b).sum();
            if y == 1 {
                (1.0 - s).max(0.0)
            } else {
                (1.0 + s).max(0.0)
            }
        })
        .sum();
    c * hinge + 0.5 * w.iter().map(|x| x * x).sum::<f64>()
}

/// Full-batch subgradient descent from `w = 0` with step `1/t` for
/// [`SVM_ITERATIONS`] steps. The best iterate seen so far is kept, so the
/// recorded objective never increases.
pub fn train_svm(samples: &SvmSamples, c: f64) -> Result<SvmFit, EnsembleError> {
    if !(c > 0.0) || !c.is_finite() {
        return Err(EnsembleError::Config(format!("C must be positive, got {c}")));
    }
    let has = |label| samples.y.contains(&label);
    if !has(0) || !has(1) {
        return Err(EnsembleError::Config("SVM samples need both classes".into()));
    }
    let dim = samples.x[0].len();
    if samples.x.iter().any(|x| x.len() != dim) {
        return Err(EnsembleError::Shape("SVM samples of differing widths".into()));
    }
    let mut w = vec![0.0; dim];
    let mut best = w.clone();
    let mut best_obj = svm_objective(samples, &w, c);
    let mut trace = Vec::with_capacity(SVM_ITERATIONS);
    for t in 1..=SVM_ITERATIONS {
        let mut g = w.clone();
        for (x, &y) in samples.x.iter().zip(&samples.y) {
            let s: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum();
            let sign = if y == 1 {
                if s < 1.0 {
                    -1.0
                } else {
                    continue;
                }
            } else if s > -1.0 {
                1.0
            } else {
                continue;
            };
            for (gk, xk) in g.iter_mut().zip(x) {
                *gk += c * sign * xk;
            }
        }
        let step = 1.0 / t as f64;
        for (wk, gk) in w.iter_mut().zip(&g) {
            *wk -= step * gk;
        }
        let obj = svm_objective(samples, &w, c);
        if obj < best_obj {
            best_obj = obj;
            best.clone_from(&w);
        }
        trace.push(best_obj);
    }
    Ok(SvmFit {
        weights: EnsembleWeights { w: best, c },
        objective: trace,
    })
}

impl EnsembleWeights {
    pub fn save(&self, path: &Path) -> Result<(), EnsembleError> {
        let json = serde_json::to_string_pretty(self).expect("serializable");
        std::fs::write(path, json + "\n").map_err(|source| EnsembleError::Io {
            path: path.to_owned(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, EnsembleError> {
        let text = std::fs::read_to_string(path).map_err(|source| EnsembleError::Io {
            path: path.to_owned(),
            source,
        })?;
        let w: Self = serde_json::from_str(&text).map_err(|e| EnsembleError::Format {
            path: path.to_owned(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        if w.w.iter().any(|x| !x.is_finite()) {
            return Err(EnsembleError::Config("non-finite ensemble weight".into()));
        }
        Ok(w)
    }
}

/// Restricts a matrix to the given candidates, keeping their order.
pub fn submatrix(
    s: &SimilarityMatrix,
    rows: &[EntityId],
    cols: &[EntityId],
) -> Result<SimilarityMatrix, EnsembleError> {
    let ri = rows
        .iter()
        .map(|&e| s.row_index(e).ok_or(EnsembleError::UnknownEntity(e)))
        .collect::<Result<Vec<_>, _>>()?;
    let ci = cols
        .iter()
        .map(|&e| s.col_index(e).ok_or(EnsembleError::UnknownEntity(e)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut scores = Tensor2::zeros(rows.len(), cols.len());
    for (a, &i) in ri.iter().enumerate() {
        for (b, &j) in ci.iter().enumerate() {
            scores.set(a, b, s.get(i, j));
        }
    }
    SimilarityMatrix::new(rows.to_vec(), cols.to_vec(), scores)
}

fn check_unique(ids: &[EntityId]) -> Result<(), EnsembleError> {
    let mut seen = HashSet::new();
    match ids.iter().find(|e| !seen.insert(**e)) {
        Some(e) => Err(EnsembleError::Config(format!("candidate {e} listed twice"))),
        None => Ok(()),
    }
}
