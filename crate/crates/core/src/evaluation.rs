//! Hits@N and MRR over a similarity matrix.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ensemble::SimilarityMatrix;
use crate::kg::EntityId;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("entity {0} is not among the row candidates")]
    UnknownRow(EntityId),
    #[error("entity {0} is not among the column candidates")]
    UnknownCol(EntityId),
    #[error("empty test set")]
    EmptyTestSet,
    #[error("hits cut-offs must be positive")]
    BadCutoff,
}

/// Which way the gold counterpart is searched for.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    #[default]
    LeftToRight,
    RightToLeft,
    MeanOfBoth,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::LeftToRight => "left-to-right",
            Direction::RightToLeft => "right-to-left",
            Direction::MeanOfBoth => "mean-of-both",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Fraction of test pairs ranked within the top N, keyed by N.
    pub hits: BTreeMap<usize, f64>,
    pub mrr: f64,
    pub direction: Direction,
    pub n_test: usize,
}

impl EvalReport {
    pub fn hits_at(&self, n: usize) -> Option<f64> {
        self.hits.get(&n).copied()
    }

    /// Aligned text table with Hits@N as percentages, followed by a
    /// `key=value` summary line.
    pub fn to_table(&self) -> String {
        let mut header = String::new();
        let mut values = String::new();
        let mut summary = Vec::new();
        for (n, h) in &self.hits {
            let name = format!("H@{n}");
            let _ = write!(header, "{name:>8}");
            let _ = write!(values, "{:>8.2}", 100.0 * h);
            summary.push(format!("{name}={:.2}", 100.0 * h));
        }
        let _ = write!(header, "{:>8}", "MRR");
        let _ = write!(values, "{:>8.3}", self.mrr);
        summary.push(format!("MRR={:.3}", self.mrr));
        format!(
            "direction: {}  test pairs: {}\n{header}\n{values}\n{}\n",
            self.direction.as_str(),
            self.n_test,
            summary.join(" ")
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable") + "\n"
    }
}

/// 1-based rank of column `gold` in row `e`: one plus the columns scoring
/// strictly higher, plus tied columns with a smaller entity id.
pub fn rank_of(s: &SimilarityMatrix, e: EntityId, gold: EntityId) -> Result<usize, EvalError> {
    let i = s.row_index(e).ok_or(EvalError::UnknownRow(e))?;
    let j = s.col_index(gold).ok_or(EvalError::UnknownCol(gold))?;
    Ok(rank_in_row(s, i, j))
}

fn rank_in_row(s: &SimilarityMatrix, i: usize, j: usize) -> usize {
    let row = s.scores.row(i);
    let g = row[j];
    let gold_id = s.cols[j];
    1 + row
        .iter()
        .zip(&s.cols)
        .filter(|&(&x, &c)| x > g || (x == g && c < gold_id))
        .count()
}

fn one_direction(
    s: &SimilarityMatrix,
    pairs: &[(EntityId, EntityId)],
    ns: &[usize],
    direction: Direction,
) -> Result<EvalReport, EvalError> {
    let rows: HashMap<EntityId, usize> = s.rows.iter().enumerate().map(|(i, &e)| (e, i)).collect();
    let cols: HashMap<EntityId, usize> = s.cols.iter().enumerate().map(|(i, &e)| (e, i)).collect();
    let mut ranks = Vec::with_capacity(pairs.len());
    for &(e, g) in pairs {
        let i = *rows.get(&e).ok_or(EvalError::UnknownRow(e))?;
        let j = *cols.get(&g).ok_or(EvalError::UnknownCol(g))?;
        ranks.push(rank_in_row(s, i, j));
    }
    let n = ranks.len() as f64;
    let hits = ns
        .iter()
        .map(|&k| (k, ranks.iter().filter(|&&r| r <= k).count() as f64 / n))
        .collect();
    let mrr = ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n;
    Ok(EvalReport {
        hits,
        mrr,
        direction,
        n_test: pairs.len(),
    })
}

/// Scores `test` pairs `(KG1 entity, KG2 entity)` against `s`.
pub fn evaluate(
    s: &SimilarityMatrix,
    test: &[(EntityId, EntityId)],
    ns: &[usize],
    direction: Direction,
) -> Result<EvalReport, EvalError> {
    if test.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    if ns.contains(&0) {
        return Err(EvalError::BadCutoff);
    }
    let swapped = || test.iter().map(|&(a, b)| (b, a)).collect::<Vec<_>>();
    match direction {
        Direction::LeftToRight => one_direction(s, test, ns, direction),
        Direction::RightToLeft => one_direction(&s.transpose(), &swapped(), ns, direction),
        Direction::MeanOfBoth => {
            let a = one_direction(s, test, ns, direction)?;
            let b = one_direction(&s.transpose(), &swapped(), ns, direction)?;
            Ok(EvalReport {
                hits: a
                    .hits
                    .iter()
                    .map(|(k, h)| (*k, (h + b.hits[k]) / 2.0))
                    .collect(),
                mrr: (a.mrr + b.mrr) / 2.0,
                direction,
                n_test: test.len(),
            })
        }
    }
}
