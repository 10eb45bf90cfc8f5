//! Per-channel alignment training: nearest-neighbour negatives, a margin
//! ranking loss over cosine distance, and Adagrad.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channels::{ChannelError, ChannelGraph, ChannelModel};
use crate::ensemble::{similarity_matrix, EnsembleError};
use crate::evaluation::{evaluate, Direction, EvalError};
use crate::kg::EntityId;
use crate::nn::{NnError, ParamSet, Tape, Tensor2, Var};

const ADAGRAD_EPS: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("entity {entity} is outside the {side} embeddings ({rows} rows)")]
    Lookup {
        side: &'static str,
        entity: EntityId,
        rows: usize,
    },
    #[error("non-finite gradient for parameter {0:?}; training aborted")]
    NonFiniteGradient(String),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub gamma: f64,
    pub negatives_per_entity: usize,
    pub epochs: usize,
    /// Candidate learning rates, searched in order.
    pub learning_rate: Vec<f64>,
    /// Candidate L2 coefficients, searched in order.
    pub l2: Vec<f64>,
    pub neg_refresh_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            negatives_per_entity: 25,
            epochs: 100,
            learning_rate: vec![0.001, 0.004, 0.007],
            l2: vec![1e-4, 1e-3, 0.0],
            neg_refresh_epochs: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_owned()));
        if !(self.gamma >= 0.0) {
            return bad("gamma must be non-negative");
        }
        if self.negatives_per_entity == 0 {
            return bad("negatives_per_entity must be at least 1");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.neg_refresh_epochs == 0 {
            return bad("neg_refresh_epochs must be at least 1");
        }
        if self.learning_rate.is_empty() || self.learning_rate.iter().any(|&x| !(x > 0.0)) {
            return bad("learning_rate needs at least one positive value");
        }
        if self.l2.is_empty() || self.l2.iter().any(|&x| !(x >= 0.0)) {
            return bad("l2 needs at least one non-negative value");
        }
        Ok(())
    }

    /// Every (learning rate, l2) pair in grid order.
    pub fn grid(&self) -> Vec<Hyper> {
        self.learning_rate
            .iter()
            .flat_map(|&lr| self.l2.iter().map(move |&l2| Hyper { lr, l2 }))
            .collect()
    }
}

/// One point of the hyperparameter grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub lr: f64,
    pub l2: f64,
}

fn unit_rows(emb: &Tensor2) -> Vec<Vec<f64>> {
    (0..emb.rows())
        .map(|i| {
            let r = emb.row(i);
            let n = r.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n == 0.0 {
                vec![0.0; r.len()]
            } else {
                r.iter().map(|x| x / n).collect()
            }
        })
        .collect()
}

/// For each anchor, the `k` nearest other entities of the same graph by
/// cosine distance, closest first, ties broken by smaller id. A zero
/// embedding counts as cosine 0 to everything.
pub fn sample_negatives(
    embeddings: &Tensor2,
    anchors: &[EntityId],
    k: usize,
) -> Result<BTreeMap<EntityId, Vec<EntityId>>, TrainError> {
    let n = embeddings.rows();
    if k >= n {
        return Err(TrainError::Config(format!(
            "{k} negatives requested from a graph of {n} entities"
        )));
    }
    if let Some(&e) = anchors.iter().find(|&&e| e >= n) {
        return Err(TrainError::Lookup {
            side: "anchor",
            entity: e,
            rows: n,
        });
    }
    let unit = unit_rows(embeddings);
    let out = anchors
        .par_iter()
        .map(|&e| {
            let mut cand: Vec<(f64, EntityId)> = (0..n)
                .filter(|&j| j != e)
                .map(|j| {
                    let c: f64 = unit[e].iter().zip(&unit[j]).map(|(a, b)| a * b).sum();
                    (1.0 - c, j)
                })
                .collect();
            let key = |a: &(f64, EntityId), b: &(f64, EntityId)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            cand.select_nth_unstable_by(k - 1, key);
            cand.truncate(k);
            cand.sort_by(key);
            (e, cand.into_iter().map(|(_, j)| j).collect())
        })
        .collect();
    Ok(out)
}

/// Negatives for every seed pair: `left[i]` from KG1 replaces the KG1
/// entity of pair `i`, `right[i]` from KG2 replaces its KG2 entity.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedNegatives {
    pub left: Vec<Vec<EntityId>>,
    pub right: Vec<Vec<EntityId>>,
}

impl SeedNegatives {
    pub fn sample(
        emb1: &Tensor2,
        emb2: &Tensor2,
        seeds: &[(EntityId, EntityId)],
        k: usize,
    ) -> Result<Self, TrainError> {
        let lefts: Vec<_> = seeds.iter().map(|p| p.0).collect();
        let rights: Vec<_> = seeds.iter().map(|p| p.1).collect();
        let l = sample_negatives(emb1, &lefts, k)?;
        let r = sample_negatives(emb2, &rights, k)?;
        Ok(Self {
            left: lefts.iter().map(|e| l[e].clone()).collect(),
            right: rights.iter().map(|e| r[e].clone()).collect(),
        })
    }

    fn check(&self, seeds: usize) -> Result<(), TrainError> {
        if self.left.len() != seeds || self.right.len() != seeds {
            return Err(TrainError::Config(format!(
                "negatives for {}/{} pairs, {seeds} seeds",
                self.left.len(),
                self.right.len()
            )));
        }
        Ok(())
    }
}

fn check_ids(
    side: &'static str,
    rows: usize,
    ids: impl IntoIterator<Item = EntityId>,
) -> Result<(), TrainError> {
    for entity in ids {
        if entity >= rows {
            return Err(TrainError::Lookup { side, entity, rows });
        }
    }
    Ok(())
}

fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    1.0 - dot / (na * nb)
}

/// Margin ranking loss evaluated directly on embedding matrices.
pub fn alignment_loss(
    emb1: &Tensor2,
    emb2: &Tensor2,
    seeds: &[(EntityId, EntityId)],
    negatives: &SeedNegatives,
    gamma: f64,
) -> Result<f64, TrainError> {
    negatives.check(seeds.len())?;
    check_ids("left", emb1.rows(), seeds.iter().map(|p| p.0).chain(negatives.left.iter().flatten().copied()))?;
    check_ids("right", emb2.rows(), seeds.iter().map(|p| p.1).chain(negatives.right.iter().flatten().copied()))?;
    let mut loss = 0.0;
    for (i, &(e, e2)) in seeds.iter().enumerate() {
        let pos = cosine_distance(emb1.row(e), emb2.row(e2));
        for &n in &negatives.left[i] {
            loss += (pos - cosine_distance(emb1.row(n), emb2.row(e2)) + gamma).max(0.0);
        }
        for &n in &negatives.right[i] {
            loss += (pos - cosine_distance(emb1.row(e), emb2.row(n)) + gamma).max(0.0);
        }
    }
    Ok(loss)
}

/// The same loss recorded on a tape over embedding variables.
pub fn alignment_loss_on_tape(
    tape: &mut Tape,
    emb1: Var,
    emb2: Var,
    seeds: &[(EntityId, EntityId)],
    negatives: &SeedNegatives,
    gamma: f64,
) -> Result<Var, TrainError> {
    negatives.check(seeds.len())?;
    let (r1, r2) = (tape.value(emb1).rows(), tape.value(emb2).rows());
    check_ids("left", r1, seeds.iter().map(|p| p.0).chain(negatives.left.iter().flatten().copied()))?;
    check_ids("right", r2, seeds.iter().map(|p| p.1).chain(negatives.right.iter().flatten().copied()))?;

    let pos = tape.pair_cosine(emb1, emb2, Arc::new(seeds.to_vec()))?;
    let mut total: Option<Var> = None;
    for (negs, left) in [(&negatives.left, true), (&negatives.right, false)] {
        let mut pairs = Vec::new();
        let mut owner = Vec::new();
        for (i, &(e, e2)) in seeds.iter().enumerate() {
            for &n in &negs[i] {
                pairs.push(if left { (n, e2) } else { (e, n) });
                owner.push(i);
            }
        }
        if pairs.is_empty() {
            continue;
        }
        // d(pos) - d(neg) + γ = cos(neg) - cos(pos) + γ
        let neg = tape.pair_cosine(emb1, emb2, Arc::new(pairs))?;
        let anchor = tape.gather_rows(pos, Arc::new(owner))?;
        let diff = tape.sub(neg, anchor)?;
        let shifted = tape.add_scalar(diff, gamma)?;
        let hinge = tape.relu(shifted)?;
        let s = tape.sum(hinge)?;
        total = Some(match total {
            Some(t) => tape.add(t, s)?,
            None => s,
        });
    }
    match total {
        Some(t) => Ok(t),
        None => {
            let zero = tape.constant(Tensor2::scalar(0.0));
            Ok(zero)
        }
    }
}

/// Squared-gradient accumulators, one per trainable parameter.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdagradState {
    accumulators: BTreeMap<String, Tensor2>,
}

impl AdagradState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn accumulator(&self, name: &str) -> Option<&Tensor2> {
        self.accumulators.get(name)
    }
}

/// One Adagrad update of every trainable parameter from its accumulated
/// gradient, with `l2 · param` added to the gradient first. Gradients are
/// left untouched; callers zero them between steps.
pub fn adagrad_step(params: &mut ParamSet, state: &mut AdagradState, lr: f64, l2: f64) -> Result<(), TrainError> {
    for (name, p) in params.iter() {
        if p.trainable && !p.grad.is_finite() {
            return Err(TrainError::NonFiniteGradient(name.to_owned()));
        }
    }
    for (name, p) in params.iter_mut() {
        if !p.trainable {
            continue;
        }
        let acc = state
            .accumulators
            .entry(name.to_owned())
            .or_insert_with(|| Tensor2::zeros(p.value.rows(), p.value.cols()));
        let grad = p.grad.as_slice();
        for ((w, &g), a) in p
            .value
            .as_slice_mut()
            .iter_mut()
            .zip(grad)
            .zip(acc.as_slice_mut())
        {
            let g = g + l2 * *w;
            *a += g * g;
            *w -= lr * g / (a.sqrt() + ADAGRAD_EPS);
        }
    }
    Ok(())
}

/// Settings for a single training run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSettings {
    pub hyper: Hyper,
    pub gamma: f64,
    pub negatives_per_entity: usize,
    pub epochs: usize,
    pub neg_refresh_epochs: usize,
}

impl RunSettings {
    pub fn from_config(cfg: &TrainConfig, hyper: Hyper) -> Self {
        Self {
            hyper,
            gamma: cfg.gamma,
            negatives_per_entity: cfg.negatives_per_entity,
            epochs: cfg.epochs,
            neg_refresh_epochs: cfg.neg_refresh_epochs,
        }
    }
}

/// Full-batch training of one channel on both graphs. Returns the loss of
/// every epoch, measured before that epoch's update.
pub fn train_channel(
    model: &mut ChannelModel,
    graphs: [&ChannelGraph; 2],
    seeds: &[(EntityId, EntityId)],
    settings: &RunSettings,
) -> Result<Vec<f64>, TrainError> {
    if seeds.is_empty() {
        return Err(TrainError::Config("no seed pairs to train on".into()));
    }
    let mut state = AdagradState::new();
    let mut negatives = None;
    let mut history = Vec::with_capacity(settings.epochs);
    for epoch in 0..settings.epochs {
        if epoch % settings.neg_refresh_epochs == 0 {
            let e1 = model.embed(graphs[0])?;
            let e2 = model.embed(graphs[1])?;
            negatives = Some(SeedNegatives::sample(&e1, &e2, seeds, settings.negatives_per_entity)?);
        }
        let negs = negatives.as_ref().expect("sampled at epoch 0");
        let mut tape = Tape::new();
        let e1 = model.forward_with(&model.params, &mut tape, graphs[0])?;
        let e2 = model.forward_with(&model.params, &mut tape, graphs[1])?;
        let loss = alignment_loss_on_tape(&mut tape, e1, e2, seeds, negs, settings.gamma)?;
        model.params.zero_grad();
        let value = tape.backward(loss, &mut model.params)?;
        history.push(value);
        adagrad_step(&mut model.params, &mut state, settings.hyper.lr, settings.hyper.l2)?;
    }
    model.params.zero_grad();
    Ok(history)
}

/// Writes `epoch,loss` rows, epochs counted from 1.
pub fn write_loss_history<W: Write>(mut w: W, history: &[f64]) -> std::io::Result<()> {
    writeln!(w, "epoch,loss")?;
    for (i, l) in history.iter().enumerate() {
        writeln!(w, "{},{l:?}", i + 1)?;
    }
    Ok(())
}

/// Outcome of one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub lr: f64,
    pub l2: f64,
    pub valid_hits1: Option<f64>,
    pub final_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ChannelModel,
    pub history: Vec<f64>,
    pub chosen: Hyper,
    pub grid: Vec<GridPoint>,
}

/// Hits@1 of a model on held-out pairs, candidates restricted to them.
pub fn pair_hits1(
    model: &ChannelModel,
    graphs: [&ChannelGraph; 2],
    pairs: &[(EntityId, EntityId)],
) -> Result<f64, TrainError> {
    let e1 = model.embed(graphs[0])?;
    let e2 = model.embed(graphs[1])?;
    let rows: Vec<_> = pairs.iter().map(|p| p.0).collect();
    let cols: Vec<_> = pairs.iter().map(|p| p.1).collect();
    let s = similarity_matrix(&e1, &e2, &rows, &cols)?;
    let r = evaluate(&s, pairs, &[1], Direction::LeftToRight)?;
    Ok(r.hits[&1])
}

/// Trains one model per grid point from the same initialisation and keeps
/// the best by Hits@1 on `valid` (first wins ties). Without valid pairs the
/// grid is cut to its first point.
pub fn grid_search<F>(
    init: F,
    graphs: [&ChannelGraph; 2],
    train: &[(EntityId, EntityId)],
    valid: &[(EntityId, EntityId)],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError>
where
    F: Fn() -> Result<ChannelModel, TrainError>,
{
    cfg.validate()?;
    let mut grid = cfg.grid();
    if valid.is_empty() {
        grid.truncate(1);
    }
    let mut best: Option<(f64, TrainOutcome)> = None;
    let mut points = Vec::with_capacity(grid.len());
    for hyper in grid {
        let mut model = init()?;
        let history = train_channel(&mut model, graphs, train, &RunSettings::from_config(cfg, hyper))?;
        let score = if valid.is_empty() {
            None
        } else {
            Some(pair_hits1(&model, graphs, valid)?)
        };
        points.push(GridPoint {
            lr: hyper.lr,
            l2: hyper.l2,
            valid_hits1: score,
            final_loss: *history.last().expect("epochs >= 1"),
        });
        let s = score.unwrap_or(0.0);
        if best.as_ref().is_none_or(|(b, _)| s > *b) {
            best = Some((
                s,
                TrainOutcome {
                    model,
                    history,
                    chosen: hyper,
                    grid: Vec::new(),
                },
            ));
        }
    }
    let (_, mut outcome) = best.expect("grid is non-empty");
    outcome.grid = points;
    Ok(outcome)
}

#[cfg(test)]
mod tests;
