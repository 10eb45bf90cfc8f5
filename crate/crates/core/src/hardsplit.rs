//! Name-debiased splits: the gold pairs whose names agree least become the
//! test set, the rest is shuffled into train and valid.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::featurize::{FeatureError, Featurizer};
use crate::kg::{AlignmentSet, EntityId, KgError, KnowledgeGraph};
use crate::partition::Subgraph;

#[derive(Debug, Error)]
pub enum SplitError {
    #[error("invalid split configuration: {0}")]
    Config(String),
    #[error("{side} entity {label:?} has no name")]
    MissingName { side: &'static str, label: String },
    #[error("{0} scores for {1} gold pairs")]
    ScoreCount(usize, usize),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Kg(#[from] KgError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// Fractions of the gold set assigned to train, valid and test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.3,
            valid: 0.1,
            test: 0.6,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<(), SplitError> {
        let parts = [self.train, self.valid, self.test];
        if parts.iter().any(|&r| !(0.0..=1.0).contains(&r)) {
            return Err(SplitError::Config(format!("ratios must lie in [0, 1]: {parts:?}")));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(SplitError::Config(format!("ratios sum to {sum}, not 1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentSplit {
    pub train: AlignmentSet,
    pub valid: AlignmentSet,
    pub test: AlignmentSet,
    pub ratios: SplitRatios,
    pub seed: u64,
    /// Name similarity of every gold pair, in gold order.
    pub scores: Vec<((EntityId, EntityId), f64)>,
}

fn names<'a>(sub: &'a Subgraph<'_>, ids: &[EntityId], side: &'static str) -> Result<Vec<&'a str>, SplitError> {
    let all = sub.entity_names();
    ids.iter()
        .map(|&e| {
            all.get(e).copied().flatten().ok_or_else(|| SplitError::MissingName {
                side,
                label: sub.entity_label(e).to_owned(),
            })
        })
        .collect()
}

/// Cosine between the featurized names of each gold pair. Pairs where a
/// name featurizes to the zero vector score 0.
pub fn name_scores(
    names1: &Subgraph<'_>,
    names2: &Subgraph<'_>,
    gold: &AlignmentSet,
    featurizer: &Featurizer,
) -> Result<Vec<f64>, SplitError> {
    let n1 = names(names1, &gold.lefts(), "left")?;
    let n2 = names(names2, &gold.rights(), "right")?;
    let f1 = featurizer.featurize(&n1)?;
    let f2 = featurizer.featurize(&n2)?;
    Ok((0..gold.len())
        .map(|i| crate::nn::cosine(f1.vector(i), f2.vector(i)).unwrap_or(0.0))
        .collect())
}

fn rounded(ratio: f64, n: usize) -> usize {
    (ratio * n as f64 + 0.5).floor() as usize
}

/// Sorts pairs by ascending score (ties by KG1 id), takes the lowest
/// `test` share as the test set and shuffles the rest into train and valid.
pub fn build_hard_split(
    gold: &AlignmentSet,
    scores: &[f64],
    ratios: SplitRatios,
    seed: u64,
) -> Result<AlignmentSplit, SplitError> {
    ratios.validate()?;
    let n = gold.len();
    if n < 10 {
        return Err(SplitError::Config(format!("need at least 10 gold pairs, got {n}")));
    }
    if scores.len() != n {
        return Err(SplitError::ScoreCount(scores.len(), n));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(SplitError::Config("non-finite name score".into()));
    }
    let pairs = gold.pairs();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(pairs[a].0.cmp(&pairs[b].0)));

    let n_test = rounded(ratios.test, n).min(n);
    let n_train = rounded(ratios.train, n).min(n - n_test);
    let mut rest = order[n_test..].to_vec();
    rest.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(AlignmentSplit {
        test: gold.subset(&order[..n_test]),
        train: gold.subset(&rest[..n_train]),
        valid: gold.subset(&rest[n_train..]),
        ratios,
        seed,
        scores: pairs.iter().copied().zip(scores.iter().copied()).collect(),
    })
}

impl AlignmentSplit {
    /// Writes `train.tsv`, `valid.tsv`, `test.tsv` and `scores.tsv` into `dir`.
    pub fn save(&self, dir: &Path, kg1: &KnowledgeGraph, kg2: &KnowledgeGraph) -> Result<(), SplitError> {
        let io = |path: &Path| {
            let path = path.to_owned();
            move |source| SplitError::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        self.train.save(&dir.join("train.tsv"), kg1, kg2)?;
        self.valid.save(&dir.join("valid.tsv"), kg1, kg2)?;
        self.test.save(&dir.join("test.tsv"), kg1, kg2)?;
        let mut text = String::new();
        for ((a, b), s) in &self.scores {
            text.push_str(&format!("{}\t{}\t{s:?}\n", kg1.entity_label(*a), kg2.entity_label(*b)));
        }
        let path = dir.join("scores.tsv");
        std::fs::write(&path, text).map_err(io(&path))
    }
}
