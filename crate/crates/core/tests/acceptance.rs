//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.
//!
//! Run with `cargo test --release --test acceptance`. Set
//! `ATTR_ALIGN_DBP_SAMPLE` to a directory holding `rel_triples_1`,
//! `attr_triples_1`, `rel_triples_2` and `attr_triples_2` to add a real
//! sample to the partition check.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use attr_align::channels::{ChannelConfig, ChannelGraph, ChannelModel, Side};
use attr_align::ensemble::{average_pool, standardize, train_svm, SimilarityMatrix, SvmSamples};
use attr_align::evaluation::{evaluate, Direction};
use attr_align::featurize::ngram_table;
use attr_align::hardsplit::{build_hard_split, SplitRatios};
use attr_align::kg::{load_kg, AlignmentSet, AttributeTriple, KgBuilder, KnowledgeGraph};
use attr_align::nn::{grad_check, NnError, Tensor2};
use attr_align::partition::{classify_value, partition, ChannelKind, NameSource, Partition, ValueKind};
use attr_align::pipeline::{self, RunConfig, RunReports};
use attr_align::synth::{generate, SynthConfig, KEY_LITERAL, NAME_ATTRIBUTE};
use attr_align::training::{alignment_loss_on_tape, SeedNegatives};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Outcome of one criterion.
struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

fn within(limit: Duration, t: Duration) -> (bool, String) {
    (t <= limit, format!("{:.2}s (limit {}s)", t.as_secs_f64(), limit.as_secs()))
}

// ---------------------------------------------------------------- gradients

fn gradient_correctness() -> Verdict {
    let start = Instant::now();
    let data = generate(&SynthConfig {
        n_entities: 10,
        seed: 11,
        ..SynthConfig::default()
    })
    .expect("fixture");
    let names = NameSource::Attributes(vec![NAME_ATTRIBUTE.to_owned()]);
    let p1 = partition(&data.kg1, &names).expect("partition");
    let p2 = partition(&data.kg2, &names).expect("partition");
    let dim = 4;
    let v1 = ngram_table(data.kg1.values().labels(), dim).expect("features");
    let v2 = ngram_table(data.kg2.values().labels(), dim).expect("features");
    let seeds: Vec<_> = data.gold.pairs()[..4].to_vec();

    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for kind in ChannelKind::ALL {
        let subs = [p1.get(kind), p2.get(kind)];
        let (model, values) = match kind {
            ChannelKind::Name => {
                let f = |s: &attr_align::partition::Subgraph<'_>| {
                    let n: Vec<&str> = s.entity_names().into_iter().map(|x| x.unwrap_or("")).collect();
                    ngram_table(&n, dim).expect("features")
                };
                let t = [f(subs[0]), f(subs[1])];
                let m = ChannelModel::new(ChannelConfig::for_kind(kind).with_dim(dim), subs, 0, Some([&t[0], &t[1]]), 1);
                (m.expect("model"), None)
            }
            ChannelKind::Literal | ChannelKind::Digital => {
                let m = ChannelModel::new(ChannelConfig::for_kind(kind).with_dim(dim), subs, dim, None, 1);
                (m.expect("model"), Some([&v1, &v2]))
            }
            ChannelKind::Structure => {
                let m = ChannelModel::new(ChannelConfig::for_kind(kind).with_dim(dim), subs, 0, None, 1);
                (m.expect("model"), None)
            }
        };
        let g1 = ChannelGraph::prepare(&model, subs[0], Side::Left, values.map(|v| v[0])).expect("graph");
        let g2 = ChannelGraph::prepare(&model, subs[1], Side::Right, values.map(|v| v[1])).expect("graph");
        let negs = SeedNegatives::sample(
            &model.embed(&g1).expect("embed"),
            &model.embed(&g2).expect("embed"),
            &seeds,
            3,
        )
        .expect("negatives");
        let err = grad_check(
            |tape, p| {
                let wrap = |e: String| NnError::Usage(e);
                let a = model.forward_with(p, tape, &g1).map_err(|e| wrap(e.to_string()))?;
                let b = model.forward_with(p, tape, &g2).map_err(|e| wrap(e.to_string()))?;
                alignment_loss_on_tape(tape, a, b, &seeds, &negs, 1.0).map_err(|e| wrap(e.to_string()))
            },
            &model.params,
            1e-6,
        )
        .expect("grad check");
        worst = worst.max(err);
        parts.push(format!("{kind} {err:.1e}"));
    }
    let (fast, time) = within(Duration::from_secs(5), start.elapsed());
    Verdict::new(
        worst < 1e-4 && fast,
        format!("max relative error {worst:.2e} < 1e-4 [{}]; {time}", parts.join(", ")),
    )
}

// ------------------------------------------------------------------ metrics

/// Rank by fully sorting the row: score descending, then column id ascending.
fn sorted_rank(s: &SimilarityMatrix, i: usize, gold_col: usize) -> usize {
    let mut order: Vec<usize> = (0..s.cols.len()).collect();
    order.sort_by(|&a, &b| s.get(i, b).total_cmp(&s.get(i, a)).then(s.cols[a].cmp(&s.cols[b])));
    order.iter().position(|&j| j == gold_col).expect("present") + 1
}

fn metric_oracle() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let ns = [1, 5, 10, 50];
    let n = 50;
    let mut mismatches = 0;
    for m in 0..100 {
        // Every other matrix uses a coarse score grid so ties are common.
        let coarse = m % 2 == 0;
        let data: Vec<f64> = (0..n * n)
            .map(|_| {
                if coarse {
                    f64::from(rng.random_range(0..5u8)) / 4.0
                } else {
                    rng.random_range(-1.0..1.0)
                }
            })
            .collect();
        let mut rows: Vec<usize> = (0..n).map(|i| i * 3 + 1).collect();
        let mut cols: Vec<usize> = (0..n).map(|i| i * 2 + 5).collect();
        rows.shuffle(&mut rng);
        cols.shuffle(&mut rng);
        let s = SimilarityMatrix::new(rows.clone(), cols.clone(), Tensor2::from_vec(n, n, data).expect("sized"))
            .expect("matrix");
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let test: Vec<(usize, usize)> = (0..n).map(|i| (rows[i], cols[perm[i]])).collect();

        let ranks: Vec<usize> = (0..n).map(|i| sorted_rank(&s, i, perm[i])).collect();
        let count = ranks.len() as f64;
        let mrr = ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / count;
        let report = evaluate(&s, &test, &ns, Direction::LeftToRight).expect("evaluate");
        let hits_ok = ns
            .iter()
            .all(|&k| report.hits[&k] == ranks.iter().filter(|&&r| r <= k).count() as f64 / count);
        if !hits_ok || report.mrr != mrr {
            mismatches += 1;
        }
    }
    let (fast, time) = within(Duration::from_secs(5), start.elapsed());
    Verdict::new(
        mismatches == 0 && fast,
        format!("{mismatches}/100 matrices differ from the sorting oracle (Hits@1,5,10,50 and MRR compared exactly); {time}"),
    )
}

// ---------------------------------------------------------------- partition

fn random_kg(rng: &mut ChaCha8Rng) -> KnowledgeGraph {
    let n = rng.random_range(1..40);
    let mut b = KgBuilder::new();
    for i in 0..n {
        b.add_entity(&format!("http://kg/e_{i}"));
    }
    for _ in 0..rng.random_range(0..3 * n) {
        let (h, t) = (rng.random_range(0..n), rng.random_range(0..n));
        b.add_relation(&format!("http://kg/e_{h}"), &format!("r{}", rng.random_range(0..4)), &format!("http://kg/e_{t}"));
    }
    let attrs = ["name", "label", "area", "founded", "motto"];
    for _ in 0..rng.random_range(0..4 * n) {
        let e = rng.random_range(0..n);
        let a = attrs[rng.random_range(0..attrs.len())];
        let v = match rng.random_range(0..4) {
            0 => format!("{}", rng.random_range(-5000..5000)),
            1 => format!("{:.3}", rng.random_range(-10.0..10.0)),
            2 => format!("word{}", rng.random_range(0..30)),
            _ => format!("{},{:03}", rng.random_range(1..99), rng.random_range(0..1000)),
        };
        b.add_attribute(&format!("http://kg/e_{e}"), a, &v);
    }
    b.build()
}

/// Checks every partition invariant and returns the first violation.
fn partition_violation(kg: &KnowledgeGraph, source: &NameSource, p: &Partition<'_>) -> Option<String> {
    let name_attrs: HashSet<usize> = match source {
        NameSource::Attributes(labels) => labels.iter().filter_map(|l| kg.attributes().get(l)).collect(),
        NameSource::FromLabel => HashSet::new(),
    };
    for kind in ChannelKind::ALL {
        let sub = p.get(kind);
        if sub.num_entities() != kg.num_entities() {
            return Some(format!("{kind} entity count differs"));
        }
        if !std::ptr::eq(sub.relation_triples(), kg.relation_triples()) {
            return Some(format!("{kind} does not share the relation triples"));
        }
    }
    if !p.structure.attribute_triples().is_empty() {
        return Some("structure holds attribute triples".into());
    }
    let synthetic = kg.num_attributes();
    for t in p.name.attribute_triples() {
        let ok = match source {
            NameSource::FromLabel => t.attribute == synthetic,
            NameSource::Attributes(_) => name_attrs.contains(&t.attribute),
        };
        if !ok {
            return Some(format!("non-name triple {t:?} in name subgraph"));
        }
    }
    for (kind, want) in [(ChannelKind::Literal, ValueKind::Literal), (ChannelKind::Digital, ValueKind::Digital)] {
        for t in p.get(kind).attribute_triples() {
            if name_attrs.contains(&t.attribute) || classify_value(kg.value_label(t.value)) != want {
                return Some(format!("misplaced triple {t:?} in {kind}"));
            }
        }
    }
    // Disjointness and coverage, as multisets of parent triples.
    let mut seen: Vec<AttributeTriple> = Vec::new();
    let mut synthesized = 0;
    for kind in ChannelKind::ALL {
        for t in p.get(kind).attribute_triples() {
            if t.attribute == synthetic {
                synthesized += 1;
            } else {
                seen.push(*t);
            }
        }
    }
    let mut parent = kg.attribute_triples().to_vec();
    let key = |t: &AttributeTriple| (t.entity, t.attribute, t.value);
    seen.sort_by_key(key);
    parent.sort_by_key(key);
    if seen != parent {
        return Some("subgraphs do not partition the parent's attribute triples".into());
    }
    let expected = if *source == NameSource::FromLabel { kg.num_entities() } else { 0 };
    if synthesized != expected {
        return Some(format!("{synthesized} synthesized name triples, expected {expected}"));
    }
    None
}

fn partition_invariants() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut failures = Vec::new();
    for i in 0..100 {
        let kg = random_kg(&mut rng);
        let source = if i % 2 == 0 || kg.attributes().get("name").is_none() {
            NameSource::FromLabel
        } else {
            NameSource::Attributes(vec!["name".into()])
        };
        let p = partition(&kg, &source).expect("partition");
        if let Some(v) = partition_violation(&kg, &source, &p) {
            failures.push(format!("kg {i}: {v}"));
        }
    }
    let sample = match std::env::var_os("ATTR_ALIGN_DBP_SAMPLE") {
        None => "no DBP15k sample given".to_owned(),
        Some(dir) => {
            let dir = PathBuf::from(dir);
            let mut checked = 0;
            for k in 1..=2 {
                let kg = load_kg(&dir.join(format!("rel_triples_{k}")), &dir.join(format!("attr_triples_{k}")));
                match kg {
                    Ok(kg) => {
                        let p = partition(&kg, &NameSource::FromLabel).expect("partition");
                        if let Some(v) = partition_violation(&kg, &NameSource::FromLabel, &p) {
                            failures.push(format!("sample kg{k}: {v}"));
                        }
                        checked += 1;
                    }
                    Err(e) => failures.push(format!("sample kg{k}: {e}")),
                }
            }
            format!("{checked} DBP15k sample graphs")
        }
    };
    let (fast, time) = within(Duration::from_secs(10), start.elapsed());
    Verdict::new(
        failures.is_empty() && fast,
        format!(
            "100 random KGs + {sample}: {}; {time}",
            if failures.is_empty() { "no violations".to_owned() } else { failures.join("; ") }
        ),
    )
}

// --------------------------------------------------------------- hard split

fn hard_split_invariants() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut failures = Vec::new();
    for g in 0..50 {
        let n = rng.random_range(10..400);
        let mut rights: Vec<usize> = (0..n).collect();
        rights.shuffle(&mut rng);
        let gold = AlignmentSet::new((0..n).zip(rights).collect(), n, n).expect("gold");
        let scores: Vec<f64> = (0..n)
            .map(|_| if g % 3 == 0 { f64::from(rng.random_range(0..4u8)) / 4.0 } else { rng.random_range(0.0..1.0) })
            .collect();
        let seed = rng.random();
        let split = build_hard_split(&gold, &scores, SplitRatios::default(), seed).expect("split");
        let again = build_hard_split(&gold, &scores, SplitRatios::default(), seed).expect("split");
        if split != again {
            failures.push(format!("set {g}: not deterministic"));
        }
        let score_of = |set: &AlignmentSet| -> Vec<f64> {
            set.pairs().iter().map(|p| scores[p.0]).collect()
        };
        let max_test = score_of(&split.test).into_iter().fold(f64::NEG_INFINITY, f64::max);
        let rest: Vec<f64> = [score_of(&split.train), score_of(&split.valid)].concat();
        let min_rest = rest.into_iter().fold(f64::INFINITY, f64::min);
        if max_test > min_rest {
            failures.push(format!("set {g}: test score {max_test} above non-test {min_rest}"));
        }
        let target = |r: f64| r * n as f64;
        for (name, len, r) in [
            ("test", split.test.len(), 0.6),
            ("train", split.train.len(), 0.3),
            ("valid", split.valid.len(), 0.1),
        ] {
            if (len as f64 - target(r)).abs() > 1.0 {
                failures.push(format!("set {g}: {name} has {len} of {n}"));
            }
        }
        let mut all: Vec<(usize, usize)> = [split.train.pairs(), split.valid.pairs(), split.test.pairs()].concat();
        all.sort_unstable();
        let mut want = gold.pairs().to_vec();
        want.sort_unstable();
        if all != want {
            failures.push(format!("set {g}: splits do not partition the gold set"));
        }
    }
    let (fast, time) = within(Duration::from_secs(5), start.elapsed());
    Verdict::new(
        failures.is_empty() && fast,
        format!(
            "50 gold sets: {}; {time}",
            if failures.is_empty() { "boundary, sizes and determinism hold".to_owned() } else { failures.join("; ") }
        ),
    )
}

// ------------------------------------------------------------ ensemble math

fn ensemble_math() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut failures = Vec::new();
    let random_matrix = |rng: &mut ChaCha8Rng, r: usize, c: usize| {
        let data = (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect();
        SimilarityMatrix::new((0..r).collect(), (0..c).collect(), Tensor2::from_vec(r, c, data).expect("sized"))
            .expect("matrix")
    };

    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let (r, c) = (rng.random_range(2..40), rng.random_range(2..40));
        let z = standardize(&random_matrix(&mut rng, r, c)).expect("standardize");
        let v = z.scores.as_slice();
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        worst = worst.max(mean.abs()).max((std - 1.0).abs());
    }
    if worst > 1e-6 {
        failures.push(format!("standardized moments off by {worst:.1e}"));
    }

    let m = standardize(&random_matrix(&mut rng, 9, 7)).expect("standardize");
    let pooled = average_pool(&[m.clone(), m.clone(), m.clone(), m.clone()]).expect("pool");
    let pool_err = pooled
        .scores
        .as_slice()
        .iter()
        .zip(m.scores.as_slice())
        .fold(0.0f64, |e, (a, b)| e.max((a - b).abs()));
    if pool_err > 1e-12 {
        failures.push(format!("average of equal inputs off by {pool_err:.1e}"));
    }

    let mut increases = 0;
    for _ in 0..5 {
        let x: Vec<Vec<f64>> = (0..60).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let y: Vec<u8> = (0..60).map(|i| u8::from(i % 5 == 0)).collect();
        let fit = train_svm(&SvmSamples { x, y }, 0.1).expect("svm");
        increases += fit.objective.windows(2).filter(|w| w[1] > w[0]).count();
    }
    if increases > 0 {
        failures.push(format!("svm objective increased {increases} times"));
    }

    let x: Vec<Vec<f64>> = (0..40)
        .map(|i| {
            let s = if i % 2 == 0 { 0.5 + i as f64 / 80.0 } else { -0.5 - i as f64 / 80.0 };
            vec![s, 0.0, 0.0, 0.0]
        })
        .collect();
    let y: Vec<u8> = (0..40).map(|i| u8::from(i % 2 == 0)).collect();
    let w = train_svm(&SvmSamples { x, y }, 0.1).expect("svm").weights.w;
    if !(w[0] > 0.0) {
        failures.push(format!("separable fixture gave w = {w:?}"));
    }

    let (fast, time) = within(Duration::from_secs(5), start.elapsed());
    Verdict::new(
        failures.is_empty() && fast,
        format!(
            "{}; w[0] = {:.3} on the separable fixture; {time}",
            if failures.is_empty() {
                format!("moments within {worst:.1e}, pooling identity exact, objective never increased")
            } else {
                failures.join("; ")
            },
            w[0]
        ),
    )
}

// --------------------------------------------------------------- end to end

fn write_config(dir: &Path) -> PathBuf {
    let cfg = serde_json::json!({
        "kg1": {"relations": "data/kg1_rel_triples.tsv", "attributes": "data/kg1_attr_triples.tsv"},
        "kg2": {"relations": "data/kg2_rel_triples.tsv", "attributes": "data/kg2_attr_triples.tsv"},
        "name_source": {"name_attributes": [NAME_ATTRIBUTE]},
        "split": {"hard": {"gold": "data/gold.tsv", "ratios": {"train": 0.3, "valid": 0.1, "test": 0.6}}},
        "synth": {"n_entities": 200, "avg_degree": 4.0, "p_hard_name": 0.6, "literal_noise": 0.1},
        "seed": 0
    });
    let path = dir.join("run.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).expect("json")).expect("write config");
    path
}

struct Run {
    cfg: RunConfig,
    reports: RunReports,
    elapsed: Duration,
}

fn full_run(dir: &Path) -> Run {
    let start = Instant::now();
    let cfg = RunConfig::load(&write_config(dir)).expect("config");
    pipeline::run_synth(&cfg).expect("synth");
    let reports = pipeline::run_all(&cfg).expect("pipeline");
    Run {
        cfg,
        reports,
        elapsed: start.elapsed(),
    }
}

fn end_to_end(run: &Run) -> Verdict {
    let h1 = |k: ChannelKind| run.reports.channels[&k].hits[&1];
    let best = ChannelKind::ALL.iter().map(|&k| h1(k)).fold(0.0, f64::max);
    let ens = run.reports.ensemble.hits[&1];
    let literal = h1(ChannelKind::Literal);
    let structure = h1(ChannelKind::Structure);
    let checks = [
        (literal >= 0.70, format!("Literal {literal:.3} >= 0.70")),
        (structure >= 0.70, format!("Structure {structure:.3} >= 0.70")),
        (ens >= best - 0.02, format!("avg ensemble {ens:.3} >= best channel {best:.3} - 0.02")),
    ];
    let (fast, time) = within(Duration::from_secs(300), run.elapsed);
    let detail: Vec<String> = checks
        .iter()
        .map(|(ok, s)| format!("{s} {}", if *ok { "ok" } else { "MISSED" }))
        .collect();
    let others: Vec<String> = [ChannelKind::Name, ChannelKind::Digital]
        .iter()
        .map(|&k| format!("{k} {:.3}", h1(k)))
        .collect();
    Verdict::new(
        checks.iter().all(|c| c.0) && fast,
        format!("Hits@1 on {} hard test pairs: {}; ({}); {time}", run.reports.ensemble.n_test, detail.join(", "), others.join(", ")),
    )
}

/// Share of KG1 entities whose top-attended Literal attribute is the planted
/// unique one.
fn planted_attention(run: &Run) -> Verdict {
    let cfg = &run.cfg;
    let g = pipeline::Graphs::load(cfg).expect("graphs");
    let mut top = 0;
    let mut total = 0;
    for e in 0..g.kg1.num_entities() {
        let label = g.kg1.entity_label(e).to_owned();
        let rows = pipeline::run_explain(cfg, ChannelKind::Literal, Side::Left, &label).expect("explain");
        if rows.iter().any(|r| r.0 == KEY_LITERAL) {
            total += 1;
            if rows[0].0 == KEY_LITERAL {
                top += 1;
            }
        }
    }
    let share = f64::from(top) / f64::from(total.max(1));
    Verdict::new(
        share >= 0.8,
        format!("`{KEY_LITERAL}` gets the highest attention for {top}/{total} entities ({share:.3} >= 0.80)"),
    )
}

fn training_progress(run: &Run) -> Verdict {
    let mut bad = Vec::new();
    for kind in ChannelKind::ALL {
        let text = std::fs::read_to_string(run.cfg.channel_dir(kind).join("loss.csv")).expect("loss history");
        let losses: Vec<f64> = text
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(1).expect("two columns").parse().expect("number"))
            .collect();
        if losses.iter().any(|l| !l.is_finite()) || losses[9] >= losses[0] {
            bad.push(kind.to_string());
        }
    }
    Verdict::new(
        bad.is_empty(),
        if bad.is_empty() {
            "every channel's loss is finite and lower at epoch 10 than at epoch 1".to_owned()
        } else {
            format!("loss did not fall by epoch 10 for {}", bad.join(", "))
        },
    )
}

fn determinism(first: &Run, second: &Run) -> Verdict {
    let files = ["report.json", "report.txt", "sim/ensemble.test.sim"];
    let differing: Vec<&str> = files
        .iter()
        .copied()
        .filter(|f| {
            let a = std::fs::read(first.cfg.out_dir.join(f)).expect("artifact");
            let b = std::fs::read(second.cfg.out_dir.join(f)).expect("artifact");
            a != b
        })
        .collect();
    Verdict::new(
        differing.is_empty(),
        if differing.is_empty() {
            format!("two runs with seed 0 produced byte-identical {}", files.join(", "))
        } else {
            format!("artifacts differ between runs: {}", differing.join(", "))
        },
    )
}

fn main() {
    // `cargo test` passes harness flags such as `--nocapture`; none apply.
    let mut results: Vec<(&str, Verdict)> = vec![
        ("gradient correctness", gradient_correctness()),
        ("metric oracle", metric_oracle()),
        ("partition invariants", partition_invariants()),
        ("hard-split invariants", hard_split_invariants()),
        ("ensemble math", ensemble_math()),
    ];

    let dirs = [tempfile::tempdir().expect("tempdir"), tempfile::tempdir().expect("tempdir")];
    let first = full_run(dirs[0].path());
    results.push(("end-to-end synthetic alignment", end_to_end(&first)));
    results.push(("planted attribute attention", planted_attention(&first)));
    results.push(("training progress", training_progress(&first)));
    let second = full_run(dirs[1].path());
    results.push(("determinism", determinism(&first, &second)));

    let mut failed = 0;
    println!();
    for (name, v) in &results {
        println!("{} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        failed += usize::from(!v.pass);
    }
    println!("\nacceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
