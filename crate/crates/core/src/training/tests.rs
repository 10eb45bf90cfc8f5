use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::channels::{ChannelConfig, Side};
use crate::featurize::ngram_table;
use crate::kg::{KgBuilder, KnowledgeGraph};
use crate::nn::grad_check;
use crate::partition::{partition, ChannelKind, NameSource};

fn t2(rows: &[&[f64]]) -> Tensor2 {
    Tensor2::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
}

fn random_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor2 {
    Tensor2::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn negatives_of_a_three_entity_graph() {
    let emb = t2(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 0.1]]);
    let n = sample_negatives(&emb, &[0], 2).unwrap();
    assert_eq!(n[&0], vec![2, 1]);
    assert!(matches!(sample_negatives(&emb, &[0], 3), Err(TrainError::Config(_))));
    assert!(sample_negatives(&emb, &[3], 1).is_err());
}

#[test]
fn tied_negatives_prefer_small_ids() {
    let emb = Tensor2::from_vec(6, 2, vec![0.5; 12]).unwrap();
    let n = sample_negatives(&emb, &[0, 3], 3).unwrap();
    assert_eq!(n[&0], vec![1, 2, 3]);
    assert_eq!(n[&3], vec![0, 1, 2]);
}

#[test]
fn planted_near_duplicate_is_nearest() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut emb = random_tensor(&mut rng, 30, 8);
    for (a, b) in [(4, 17), (9, 22), (0, 29)] {
        let row: Vec<f64> = emb.row(a).iter().map(|x| x * 2.0 + 1e-3).collect();
        emb.row_mut(b).copy_from_slice(&row);
    }
    let n = sample_negatives(&emb, &[4, 9, 29], 5).unwrap();
    assert_eq!(n[&4][0], 17);
    assert_eq!(n[&9][0], 22);
    assert_eq!(n[&29][0], 0);
    // Exhaustive scan oracle for the full ordering.
    let cos = |a: &[f64], b: &[f64]| {
        let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        d / (a.iter().map(|x| x * x).sum::<f64>().sqrt() * b.iter().map(|x| x * x).sum::<f64>().sqrt())
    };
    let mut all: Vec<(f64, usize)> = (0..30).filter(|&j| j != 9).map(|j| (1.0 - cos(emb.row(9), emb.row(j)), j)).collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    assert_eq!(n[&9], all[..5].iter().map(|p| p.1).collect::<Vec<_>>());
}

proptest! {
    #[test]
    fn negatives_exclude_anchor_and_repeats(seed in 0u64..1000, k in 1usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Few distinct rows, so ties are common.
        let mut emb = Tensor2::zeros(10, 3);
        for i in 0..10 {
            let v = f64::from(rng.random_range(0..3u8)) - 1.0;
            emb.row_mut(i).copy_from_slice(&[v, 1.0, -v]);
        }
        let anchors: Vec<usize> = (0..10).collect();
        let n = sample_negatives(&emb, &anchors, k).unwrap();
        for (e, negs) in &n {
            prop_assert_eq!(negs.len(), k);
            prop_assert!(!negs.contains(e));
            let mut s = negs.clone();
            s.sort_unstable();
            s.dedup();
            prop_assert_eq!(s.len(), k);
        }
    }
}

fn all_negs(seeds: usize, k: usize, n: usize) -> SeedNegatives {
    let pick = |i: usize| (0..k).map(|j| (i + j + 1) % n).collect::<Vec<_>>();
    SeedNegatives {
        left: (0..seeds).map(pick).collect(),
        right: (0..seeds).map(pick).collect(),
    }
}

#[test]
fn identical_embeddings_hit_every_margin() {
    let emb = Tensor2::from_vec(6, 3, vec![0.2; 18]).unwrap();
    let seeds = [(0, 0), (1, 1), (2, 2)];
    let negs = all_negs(3, 2, 6);
    let loss = alignment_loss(&emb, &emb, &seeds, &negs, 0.7).unwrap();
    assert!((loss - 2.0 * 3.0 * 2.0 * 0.7).abs() < 1e-12);
}

#[test]
fn coincident_pairs_with_far_negatives_cost_nothing() {
    let emb1 = t2(&[&[1.0, 0.0], &[-1.0, 0.0]]);
    let emb2 = t2(&[&[1.0, 0.0], &[0.0, -1.0]]);
    let negs = SeedNegatives {
        left: vec![vec![1]],
        right: vec![vec![1]],
    };
    assert_eq!(alignment_loss(&emb1, &emb2, &[(0, 0)], &negs, 1.0).unwrap(), 0.0);
}

#[test]
fn two_seed_toy_matches_hand_evaluation() {
    let emb1 = t2(&[&[1.0, 0.0], &[0.0, 1.0]]);
    let emb2 = t2(&[&[1.0, 0.0], &[1.0, 1.0]]);
    let seeds = [(0, 0), (1, 1)];
    let negs = SeedNegatives {
        left: vec![vec![1], vec![0]],
        right: vec![vec![1], vec![0]],
    };
    // Terms: 0, 1/√2, 1, 1 - 1/√2.
    let loss = alignment_loss(&emb1, &emb2, &seeds, &negs, 1.0).unwrap();
    assert!((loss - 2.0).abs() < 1e-12, "{loss}");

    let mut tape = Tape::new();
    let a = tape.constant(emb1.clone());
    let b = tape.constant(emb2.clone());
    let l = alignment_loss_on_tape(&mut tape, a, b, &seeds, &negs, 1.0).unwrap();
    assert!((tape.value(l).item().unwrap() - 2.0).abs() < 1e-12);
}

#[test]
fn missing_seed_entity_is_a_lookup_error() {
    let emb = t2(&[&[1.0, 0.0], &[0.0, 1.0]]);
    let negs = SeedNegatives {
        left: vec![vec![1]],
        right: vec![vec![0]],
    };
    assert!(matches!(
        alignment_loss(&emb, &emb, &[(0, 4)], &negs, 1.0),
        Err(TrainError::Lookup { side: "right", entity: 4, .. })
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn tape_loss_matches_direct_loss(seed in 0u64..1000, gamma in 0.0f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e1 = random_tensor(&mut rng, 7, 4);
        let e2 = random_tensor(&mut rng, 6, 4);
        let seeds = [(0, 1), (3, 0), (6, 5)];
        let negs = SeedNegatives::sample(&e1, &e2, &seeds, 2).unwrap();
        let direct = alignment_loss(&e1, &e2, &seeds, &negs, gamma).unwrap();
        prop_assert!(direct >= 0.0);
        let mut tape = Tape::new();
        let a = tape.constant(e1.clone());
        let b = tape.constant(e2.clone());
        let l = alignment_loss_on_tape(&mut tape, a, b, &seeds, &negs, gamma).unwrap();
        prop_assert!((tape.value(l).item().unwrap() - direct).abs() < 1e-12);
    }
}

#[test]
fn loss_gradient_passes_grad_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut params = ParamSet::new();
    params.insert("e1", random_tensor(&mut rng, 8, 5), true);
    params.insert("e2", random_tensor(&mut rng, 8, 5), true);
    let seeds = [(0, 0), (2, 5), (7, 3)];
    let negs = SeedNegatives::sample(params.value("e1").unwrap(), params.value("e2").unwrap(), &seeds, 3).unwrap();
    let err = grad_check(
        |tape, p| {
            let a = tape.param(p, "e1")?;
            let b = tape.param(p, "e2")?;
            alignment_loss_on_tape(tape, a, b, &seeds, &negs, 1.0).map_err(|e| NnError::Usage(e.to_string()))
        },
        &params,
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn adagrad_first_step_moves_by_lr() {
    let mut params = ParamSet::new();
    params.insert("w", Tensor2::row_vector(&[1.0, -2.0, 0.5]), true);
    params.get_mut("w").unwrap().grad = Tensor2::row_vector(&[3.0, -0.01, 0.0]);
    let mut state = AdagradState::new();
    adagrad_step(&mut params, &mut state, 0.1, 0.0).unwrap();
    let w = params.value("w").unwrap().row(0).to_vec();
    assert!((w[0] - 0.9).abs() < 1e-8);
    assert!((w[1] + 1.9).abs() < 1e-6);
    assert_eq!(w[2], 0.5);
    assert_eq!(state.accumulator("w").unwrap().row(0), &[9.0, 1e-4, 0.0]);
}

#[test]
fn adagrad_zero_gradient_is_a_no_op() {
    let mut params = ParamSet::new();
    params.insert("w", Tensor2::row_vector(&[1.0, -2.0]), true);
    let mut state = AdagradState::new();
    adagrad_step(&mut params, &mut state, 0.5, 0.0).unwrap();
    assert_eq!(params.value("w").unwrap().row(0), &[1.0, -2.0]);
    assert_eq!(state.accumulator("w").unwrap().row(0), &[0.0, 0.0]);
}

#[test]
fn adagrad_descends_a_parabola() {
    // f(w) = w²/2, so the gradient is w. Hand simulation:
    // step 1: acc = 1, w = 1 - 0.1 = 0.9
    // step 2: acc = 1.81, w = 0.9 - 0.1·0.9/√1.81
    let mut params = ParamSet::new();
    params.insert("w", Tensor2::row_vector(&[1.0]), true);
    let mut state = AdagradState::new();
    let mut trace = vec![1.0];
    for _ in 0..2 {
        let w = params.value("w").unwrap().get(0, 0);
        params.get_mut("w").unwrap().grad = Tensor2::row_vector(&[w]);
        adagrad_step(&mut params, &mut state, 0.1, 0.0).unwrap();
        trace.push(params.value("w").unwrap().get(0, 0));
    }
    assert!(trace[1] < trace[0] && trace[2] < trace[1]);
    assert!((trace[2] - (0.9 - 0.09 / 1.81f64.sqrt())).abs() < 1e-8);
}

#[test]
fn adagrad_applies_l2_and_skips_frozen() {
    let mut params = ParamSet::new();
    params.insert("w", Tensor2::row_vector(&[2.0]), true);
    params.insert("f", Tensor2::row_vector(&[2.0]), false);
    let mut state = AdagradState::new();
    adagrad_step(&mut params, &mut state, 0.1, 0.5).unwrap();
    // Gradient becomes 0 + 0.5·2 = 1.
    assert!((params.value("w").unwrap().get(0, 0) - 1.9).abs() < 1e-8);
    assert_eq!(params.value("f").unwrap().get(0, 0), 2.0);
    assert!(state.accumulator("f").is_none());
}

#[test]
fn adagrad_rejects_non_finite_gradient() {
    let mut params = ParamSet::new();
    params.insert("encoder.w", Tensor2::row_vector(&[1.0]), true);
    params.get_mut("encoder.w").unwrap().grad = Tensor2::row_vector(&[f64::NAN]);
    match adagrad_step(&mut params, &mut AdagradState::new(), 0.1, 0.0) {
        Err(TrainError::NonFiniteGradient(name)) => assert_eq!(name, "encoder.w"),
        other => panic!("{other:?}"),
    }
    assert_eq!(params.value("encoder.w").unwrap().get(0, 0), 1.0);
}

#[test]
fn config_defaults_and_validation() {
    let c = TrainConfig::default();
    assert_eq!((c.gamma, c.negatives_per_entity, c.epochs, c.neg_refresh_epochs), (1.0, 25, 100, 10));
    assert_eq!(c.grid().len(), 9);
    assert_eq!(c.grid()[0], Hyper { lr: 0.001, l2: 1e-4 });
    c.validate().unwrap();
    let parsed: TrainConfig = serde_json::from_str(r#"{"epochs": 5, "learning_rate": [0.01]}"#).unwrap();
    assert_eq!(parsed.epochs, 5);
    assert_eq!(parsed.l2, c.l2);
    for bad in [r#"{"gamma": -1}"#, r#"{"negatives_per_entity": 0}"#, r#"{"epochs": 0}"#, r#"{"l2": []}"#] {
        let c: TrainConfig = serde_json::from_str(bad).unwrap();
        assert!(c.validate().is_err(), "{bad}");
    }
    assert!(serde_json::from_str::<TrainConfig>(r#"{"epoch": 3}"#).is_err());
}

fn ring(prefix: &str, n: usize) -> KnowledgeGraph {
    let mut b = KgBuilder::new();
    for i in 0..n {
        let e = format!("{prefix}{i}");
        b.add_relation(&e, "next", &format!("{prefix}{}", (i + 1) % n));
        if i % 3 == 0 {
            b.add_relation(&e, "skip", &format!("{prefix}{}", (i + 5) % n));
        }
        b.add_attribute(&e, "label", &format!("item number {i}"));
        b.add_attribute(&e, "group", ["north", "south", "east"][i % 3]);
    }
    b.build()
}

struct Fixture {
    kg1: KnowledgeGraph,
    kg2: KnowledgeGraph,
}

impl Fixture {
    fn new(n: usize) -> Self {
        Self {
            kg1: ring("a", n),
            kg2: ring("b", n),
        }
    }

    fn run(&self, kind: ChannelKind, settings: &RunSettings, seeds: &[(usize, usize)], seed: u64) -> (ChannelModel, Vec<f64>) {
        let p1 = partition(&self.kg1, &NameSource::FromLabel).unwrap();
        let p2 = partition(&self.kg2, &NameSource::FromLabel).unwrap();
        let (s1, s2) = (p1.get(kind), p2.get(kind));
        let values = |kg: &KnowledgeGraph| ngram_table(kg.values().labels(), 16).unwrap();
        let (v1, v2) = (values(&self.kg1), values(&self.kg2));
        let mut model = ChannelModel::new(ChannelConfig::for_kind(kind).with_dim(16), [s1, s2], 16, None, seed).unwrap();
        let g1 = ChannelGraph::prepare(&model, s1, Side::Left, Some(&v1)).unwrap();
        let g2 = ChannelGraph::prepare(&model, s2, Side::Right, Some(&v2)).unwrap();
        let h = train_channel(&mut model, [&g1, &g2], seeds, settings).unwrap();
        (model, h)
    }
}

fn settings(lr: f64, gamma: f64, epochs: usize) -> RunSettings {
    RunSettings {
        hyper: Hyper { lr, l2: 0.0 },
        gamma,
        negatives_per_entity: 3,
        epochs,
        neg_refresh_epochs: 10,
    }
}

#[test]
fn training_reduces_loss_and_is_deterministic() {
    let fx = Fixture::new(12);
    let seeds: Vec<_> = (0..6).map(|i| (i, i)).collect();
    let s = settings(0.05, 1.0, 12);
    for kind in [ChannelKind::Literal, ChannelKind::Structure] {
        let (_, h) = fx.run(kind, &s, &seeds, 4);
        assert!(h.iter().all(|x| x.is_finite()));
        assert!(h[9] < h[0], "{kind}: {h:?}");
        let (_, again) = fx.run(kind, &s, &seeds, 4);
        assert_eq!(h, again);
    }
}

#[test]
fn zero_margin_loss_reaches_zero() {
    let fx = Fixture::new(10);
    let seeds: Vec<_> = (0..10).map(|i| (i, i)).collect();
    let (model, h) = fx.run(ChannelKind::Literal, &settings(0.05, 0.0, 30), &seeds, 1);
    assert_eq!(*h.last().unwrap(), 0.0, "{h:?}");
    assert!(model.params.iter().all(|(_, p)| p.grad.as_slice().iter().all(|&g| g == 0.0)));
}

#[test]
fn full_channel_loss_passes_grad_check() {
    let fx = Fixture::new(10);
    let kind = ChannelKind::Literal;
    let p1 = partition(&fx.kg1, &NameSource::FromLabel).unwrap();
    let p2 = partition(&fx.kg2, &NameSource::FromLabel).unwrap();
    let v1 = ngram_table(fx.kg1.values().labels(), 4).unwrap();
    let v2 = ngram_table(fx.kg2.values().labels(), 4).unwrap();
    let model = ChannelModel::new(ChannelConfig::for_kind(kind).with_dim(4), [p1.get(kind), p2.get(kind)], 4, None, 3).unwrap();
    let g1 = ChannelGraph::prepare(&model, p1.get(kind), Side::Left, Some(&v1)).unwrap();
    let g2 = ChannelGraph::prepare(&model, p2.get(kind), Side::Right, Some(&v2)).unwrap();
    let seeds = [(0, 0), (3, 3), (7, 7)];
    let negs = SeedNegatives::sample(&model.embed(&g1).unwrap(), &model.embed(&g2).unwrap(), &seeds, 3).unwrap();
    let err = grad_check(
        |tape, p| {
            let wrap = |e: TrainError| NnError::Usage(e.to_string());
            let a = model.forward_with(p, tape, &g1).map_err(|e| wrap(e.into()))?;
            let b = model.forward_with(p, tape, &g2).map_err(|e| wrap(e.into()))?;
            alignment_loss_on_tape(tape, a, b, &seeds, &negs, 1.0).map_err(wrap)
        },
        &model.params,
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn grid_search_picks_by_valid_hits() {
    let fx = Fixture::new(12);
    let kind = ChannelKind::Literal;
    let p1 = partition(&fx.kg1, &NameSource::FromLabel).unwrap();
    let p2 = partition(&fx.kg2, &NameSource::FromLabel).unwrap();
    let v1 = ngram_table(fx.kg1.values().labels(), 16).unwrap();
    let v2 = ngram_table(fx.kg2.values().labels(), 16).unwrap();
    let init = || {
        ChannelModel::new(ChannelConfig::for_kind(kind).with_dim(16), [p1.get(kind), p2.get(kind)], 16, None, 2)
            .map_err(TrainError::from)
    };
    let m0 = init().unwrap();
    let g1 = ChannelGraph::prepare(&m0, p1.get(kind), Side::Left, Some(&v1)).unwrap();
    let g2 = ChannelGraph::prepare(&m0, p2.get(kind), Side::Right, Some(&v2)).unwrap();
    let cfg = TrainConfig {
        epochs: 5,
        negatives_per_entity: 3,
        learning_rate: vec![0.001, 0.05],
        l2: vec![0.0],
        ..TrainConfig::default()
    };
    let train: Vec<_> = (0..6).map(|i| (i, i)).collect();
    let valid: Vec<_> = (6..12).map(|i| (i, i)).collect();
    let out = grid_search(init, [&g1, &g2], &train, &valid, &cfg).unwrap();
    assert_eq!(out.grid.len(), 2);
    let best = out.grid.iter().map(|g| g.valid_hits1.unwrap()).fold(f64::MIN, f64::max);
    let chosen = out.grid.iter().find(|g| g.lr == out.chosen.lr).unwrap();
    assert_eq!(chosen.valid_hits1, Some(best));
    assert_eq!(pair_hits1(&out.model, [&g1, &g2], &valid).unwrap(), best);

    let no_valid = grid_search(init, [&g1, &g2], &train, &[], &cfg).unwrap();
    assert_eq!(no_valid.grid.len(), 1);
}

#[test]
fn loss_history_csv() {
    let mut buf = Vec::new();
    write_loss_history(&mut buf, &[3.5, 1.25]).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap(), "epoch,loss\n1,3.5\n2,1.25\n");
}
