//! Run configuration and the pipeline stages, each reading and writing
//! plain-text artifacts under the output directory.
//!
//! Layout of the output directory:
//!
//! ```text
//! partition/kg{1,2}/<channel>.tsv   attribute triples per channel
//! partition/summary.json
//! split/{train,valid,test,scores}.tsv
//! channels/<channel>/{params.ckpt,config.json,loss.csv,grid.json}
//! embeddings/<channel>/kg{1,2}.emb
//! sim/<channel>.{valid,test}.sim, sim/ensemble.test.sim
//! weights.json                      svm mode only
//! report.json, report.txt
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channels::{ChannelConfig, ChannelGraph, ChannelModel, Side};
use crate::ensemble::{
    self, average_pool, build_svm_samples, combine, similarity_matrix, standardize, train_svm, EnsembleWeights,
    SimilarityMatrix,
};
use crate::evaluation::{evaluate, Direction, EvalReport};
use crate::featurize::{FeatureTable, Featurizer, DEFAULT_DIM};
use crate::hardsplit::{build_hard_split, name_scores, SplitRatios};
use crate::kg::{load_alignment, load_kg, AlignmentSet, EntityId, KnowledgeGraph};
use crate::partition::{partition, ChannelKind, NameSource, Partition, Subgraph};
use crate::synth::{generate, SynthConfig, SynthPaths};
use crate::training::{grid_search, write_loss_history, TrainConfig, TrainError};
use crate::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KgPaths {
    pub relations: PathBuf,
    pub attributes: PathBuf,
}

/// Where the train/valid/test pairs come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum SplitSpec {
    /// Ready-made alignment files.
    Files {
        train: PathBuf,
        #[serde(default)]
        valid: Option<PathBuf>,
        test: PathBuf,
    },
    /// A name-debiased split computed from a gold file by `hardsplit`.
    Hard {
        gold: PathBuf,
        #[serde(default)]
        ratios: SplitRatios,
        #[serde(default)]
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    /// Features of attribute values, for the Literal and Digital channels.
    pub values: Featurizer,
    /// Features of entity names, for the Name channel and hard splits.
    pub names: Featurizer,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            values: Featurizer::default(),
            names: Featurizer::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelSettings {
    /// Width of entity, attribute and hidden features (the Name channel
    /// uses the name feature width instead).
    pub dim: usize,
    pub max_attr_triples: usize,
}

impl Default for ChannelSettings {
    fn default() -> Self {
        Self {
            dim: DEFAULT_DIM,
            max_attr_triples: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerChannel<T> {
    pub name: T,
    pub literal: T,
    pub digital: T,
    pub structure: T,
}

impl<T> PerChannel<T> {
    pub fn get(&self, kind: ChannelKind) -> &T {
        match kind {
            ChannelKind::Name => &self.name,
            ChannelKind::Literal => &self.literal,
            ChannelKind::Digital => &self.digital,
            ChannelKind::Structure => &self.structure,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnsembleMode {
    #[default]
    Avg,
    Svm,
}

/// Which entities similarity matrices range over.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Candidates {
    /// Only the entities of the split being scored.
    #[default]
    Split,
    /// Every entity of each graph.
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub mode: EnsembleMode,
    pub negatives_per_positive: usize,
    pub c_grid: Vec<f64>,
    pub candidates: Candidates,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            mode: EnsembleMode::Avg,
            negatives_per_positive: ensemble::NEGATIVES_PER_POSITIVE,
            c_grid: ensemble::C_GRID.to_vec(),
            candidates: Candidates::Split,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub hits: Vec<usize>,
    pub direction: Direction,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            hits: vec![1, 10],
            direction: Direction::LeftToRight,
        }
    }
}

/// Everything a pipeline run needs. Relative paths are resolved against
/// the directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub kg1: KgPaths,
    pub kg2: KgPaths,
    #[serde(default)]
    pub name_source: NameSource,
    pub split: SplitSpec,
    #[serde(default)]
    pub features: FeatureConfig,
    #[serde(default)]
    pub channels: ChannelSettings,
    #[serde(default)]
    pub train: PerChannel<TrainConfig>,
    #[serde(default)]
    pub ensemble: EnsembleConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    /// Generator settings used by the `synth` stage.
    #[serde(default)]
    pub synth: Option<SynthConfig>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, text: &str) -> Result<(), Error> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    std::fs::write(path, text).map_err(io_err(path))
}

impl RunConfig {
    pub fn from_json(text: &str, base: &Path) -> Result<Self, Error> {
        let mut cfg: RunConfig = serde_json::from_str(text).map_err(|e| config_err(format!("run config: {e}")))?;
        cfg.resolve(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_json(&text, base)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for kg in [&mut self.kg1, &mut self.kg2] {
            fix(&mut kg.relations);
            fix(&mut kg.attributes);
        }
        match &mut self.split {
            SplitSpec::Files { train, valid, test } => {
                fix(train);
                fix(test);
                if let Some(v) = valid {
                    fix(v);
                }
            }
            SplitSpec::Hard { gold, .. } => fix(gold),
        }
        for f in [&mut self.features.values, &mut self.features.names] {
            if let Featurizer::File { path } = f {
                fix(path);
            }
        }
        fix(&mut self.out_dir);
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.channels.dim == 0 {
            return Err(config_err("channels.dim must be positive"));
        }
        if self.channels.max_attr_triples == 0 {
            return Err(config_err("channels.max_attr_triples must be positive"));
        }
        for kind in ChannelKind::ALL {
            self.train.get(kind).validate()?;
        }
        if self.eval.hits.is_empty() || self.eval.hits.contains(&0) {
            return Err(config_err("eval.hits needs positive cut-offs"));
        }
        if self.ensemble.c_grid.is_empty() || self.ensemble.c_grid.iter().any(|&c| !(c > 0.0)) {
            return Err(config_err("ensemble.c_grid needs positive values"));
        }
        if let SplitSpec::Hard { ratios, .. } = &self.split {
            ratios.validate()?;
        }
        if let Some(s) = &self.synth {
            s.validate()?;
        }
        Ok(())
    }

    /// Checks that every input file exists.
    pub fn check_inputs(&self) -> Result<(), Error> {
        let mut files = vec![&self.kg1.relations, &self.kg1.attributes, &self.kg2.relations, &self.kg2.attributes];
        match &self.split {
            SplitSpec::Files { train, valid, test } => {
                files.push(train);
                files.push(test);
                files.extend(valid.iter());
            }
            SplitSpec::Hard { gold, .. } => files.push(gold),
        }
        for f in [&self.features.values, &self.features.names] {
            if let Featurizer::File { path } = f {
                files.push(path);
            }
        }
        match files.into_iter().find(|p| !p.is_file()) {
            Some(p) => Err(config_err(format!("input file {} does not exist", p.display()))),
            None => Ok(()),
        }
    }

    /// Seed for one channel, mixed from the global seed and the channel's
    /// own training seed.
    pub fn channel_seed(&self, kind: ChannelKind) -> u64 {
        let idx = ChannelKind::ALL.iter().position(|&k| k == kind).expect("listed") as u64;
        splitmix64(splitmix64(self.seed ^ self.train.get(kind).seed.rotate_left(32)).wrapping_add(idx))
    }

    pub fn split_dir(&self) -> PathBuf {
        self.out_dir.join("split")
    }

    pub fn channel_dir(&self, kind: ChannelKind) -> PathBuf {
        self.out_dir.join("channels").join(kind.as_str())
    }

    pub fn sim_path(&self, name: &str, split: &str) -> PathBuf {
        self.out_dir.join("sim").join(format!("{name}.{split}.sim"))
    }
}

/// The SplitMix64 finaliser.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Both graphs of a run, loaded once.
pub struct Graphs {
    pub kg1: KnowledgeGraph,
    pub kg2: KnowledgeGraph,
}

impl Graphs {
    pub fn load(cfg: &RunConfig) -> Result<Self, Error> {
        Ok(Self {
            kg1: load_kg(&cfg.kg1.relations, &cfg.kg1.attributes)?,
            kg2: load_kg(&cfg.kg2.relations, &cfg.kg2.attributes)?,
        })
    }

    pub fn partitions(&self, cfg: &RunConfig) -> Result<[Partition<'_>; 2], Error> {
        Ok([partition(&self.kg1, &cfg.name_source)?, partition(&self.kg2, &cfg.name_source)?])
    }
}

/// Train, valid and test pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: AlignmentSet,
    pub valid: AlignmentSet,
    pub test: AlignmentSet,
}

impl Split {
    pub fn get(&self, name: &str) -> Option<&AlignmentSet> {
        match name {
            "train" => Some(&self.train),
            "valid" => Some(&self.valid),
            "test" => Some(&self.test),
            _ => None,
        }
    }
}

pub fn load_split(cfg: &RunConfig, g: &Graphs) -> Result<Split, Error> {
    let (train, valid, test) = match &cfg.split {
        SplitSpec::Files { train, valid, test } => (train.clone(), valid.clone(), test.clone()),
        SplitSpec::Hard { .. } => {
            let dir = cfg.split_dir();
            if !dir.join("test.tsv").is_file() {
                return Err(config_err(format!(
                    "no split in {}; run the hardsplit command first",
                    dir.display()
                )));
            }
            (dir.join("train.tsv"), Some(dir.join("valid.tsv")), dir.join("test.tsv"))
        }
    };
    let load = |p: &Path| load_alignment(p, &g.kg1, &g.kg2);
    Ok(Split {
        train: load(&train)?,
        valid: match valid {
            Some(v) => load(&v)?,
            None => AlignmentSet::default(),
        },
        test: load(&test)?,
    })
}

/// Generates the synthetic fixture into the configured input paths.
pub fn run_synth(cfg: &RunConfig) -> Result<PathBuf, Error> {
    let synth = cfg
        .synth
        .as_ref()
        .ok_or_else(|| config_err("the synth command needs a `synth` block in the run config"))?;
    let SplitSpec::Hard { gold, .. } = &cfg.split else {
        return Err(config_err("the synth command writes a gold file; use a `hard` split"));
    };
    let data = generate(synth)?;
    let config = cfg.out_dir.join("synth.json");
    data.save(
        synth,
        &SynthPaths {
            kg1: (&cfg.kg1.relations, &cfg.kg1.attributes),
            kg2: (&cfg.kg2.relations, &cfg.kg2.attributes),
            gold,
            config: &config,
        },
    )?;
    Ok(config)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartitionSummary {
    pub kg1: BTreeMap<ChannelKind, usize>,
    pub kg2: BTreeMap<ChannelKind, usize>,
}

/// Writes each channel's triples as `entity<TAB>attribute<TAB>value` (or
/// relation triples for the Structure channel) and a count summary.
pub fn run_partition(cfg: &RunConfig) -> Result<PartitionSummary, Error> {
    cfg.check_inputs()?;
    let g = Graphs::load(cfg)?;
    let parts = g.partitions(cfg)?;
    let mut counts = [BTreeMap::new(), BTreeMap::new()];
    for (k, p) in parts.iter().enumerate() {
        let dir = cfg.out_dir.join("partition").join(format!("kg{}", k + 1));
        for kind in ChannelKind::ALL {
            let sub = p.get(kind);
            let mut text = String::new();
            if kind == ChannelKind::Structure {
                let kg = sub.base();
                for t in sub.relation_triples() {
                    text += &format!(
                        "{}\t{}\t{}\n",
                        kg.entity_label(t.head),
                        kg.relations().label(t.relation).unwrap_or_default(),
                        kg.entity_label(t.tail)
                    );
                }
                counts[k].insert(kind, sub.relation_triples().len());
            } else {
                for t in sub.attribute_triples() {
                    text += &format!(
                        "{}\t{}\t{}\n",
                        sub.entity_label(t.entity),
                        sub.attribute_label(t.attribute),
                        sub.value_label(t.value)
                    );
                }
                counts[k].insert(kind, sub.attribute_triples().len());
            }
            write_file(&dir.join(format!("{kind}.tsv")), &text)?;
        }
    }
    let [kg1, kg2] = counts;
    let summary = PartitionSummary { kg1, kg2 };
    let json = serde_json::to_string_pretty(&summary).expect("serializable") + "\n";
    write_file(&cfg.out_dir.join("partition").join("summary.json"), &json)?;
    Ok(summary)
}

/// Scores gold pairs by name similarity and writes the hard split.
pub fn run_hardsplit(cfg: &RunConfig) -> Result<Split, Error> {
    let SplitSpec::Hard { gold, ratios, seed } = &cfg.split else {
        return Err(config_err("the hardsplit command needs a `hard` split in the run config"));
    };
    cfg.check_inputs()?;
    let g = Graphs::load(cfg)?;
    let [p1, p2] = g.partitions(cfg)?;
    let gold = load_alignment(gold, &g.kg1, &g.kg2)?;
    let scores = name_scores(&p1.name, &p2.name, &gold, &cfg.features.names)?;
    let split = build_hard_split(&gold, &scores, *ratios, *seed)?;
    split.save(&cfg.split_dir(), &g.kg1, &g.kg2)?;
    Ok(Split {
        train: split.train,
        valid: split.valid,
        test: split.test,
    })
}

/// Name features for every entity of a subgraph; unnamed entities get the
/// zero vector.
fn name_features(sub: &Subgraph<'_>, featurizer: &Featurizer) -> Result<FeatureTable, Error> {
    let names: Vec<&str> = sub.entity_names().into_iter().map(|n| n.unwrap_or("")).collect();
    Ok(featurizer.featurize(&names)?)
}

/// Value features for every value id of a graph.
fn value_features(kg: &KnowledgeGraph, featurizer: &Featurizer) -> Result<FeatureTable, Error> {
    Ok(featurizer.featurize(kg.values().labels())?)
}

/// A channel's inputs for both sides.
pub struct Prepared {
    pub graphs: [ChannelGraph; 2],
}

fn channel_config(cfg: &RunConfig, kind: ChannelKind, name_dim: usize) -> ChannelConfig {
    let dim = if kind == ChannelKind::Name { name_dim } else { cfg.channels.dim };
    let mut c = ChannelConfig::for_kind(kind).with_dim(dim);
    c.max_attr_triples = cfg.channels.max_attr_triples;
    c
}

/// Builds a fresh model and its graph inputs.
fn init_channel(
    cfg: &RunConfig,
    kind: ChannelKind,
    parts: &[Partition<'_>; 2],
    graphs: &Graphs,
) -> Result<(ChannelModel, Option<[FeatureTable; 2]>), Error> {
    let subs = [parts[0].get(kind), parts[1].get(kind)];
    let seed = cfg.channel_seed(kind);
    match kind {
        ChannelKind::Name => {
            let t = [name_features(subs[0], &cfg.features.names)?, name_features(subs[1], &cfg.features.names)?];
            let model = ChannelModel::new(channel_config(cfg, kind, t[0].dim()), subs, 0, Some([&t[0], &t[1]]), seed)?;
            Ok((model, None))
        }
        ChannelKind::Literal | ChannelKind::Digital => {
            let v = [value_features(&graphs.kg1, &cfg.features.values)?, value_features(&graphs.kg2, &cfg.features.values)?];
            let model = ChannelModel::new(channel_config(cfg, kind, 0), subs, v[0].dim(), None, seed)?;
            Ok((model, Some(v)))
        }
        ChannelKind::Structure => Ok((ChannelModel::new(channel_config(cfg, kind, 0), subs, 0, None, seed)?, None)),
    }
}

fn prepare(
    model: &ChannelModel,
    kind: ChannelKind,
    parts: &[Partition<'_>; 2],
    values: Option<&[FeatureTable; 2]>,
) -> Result<Prepared, Error> {
    let g = |side: Side| {
        ChannelGraph::prepare(model, parts[side.index()].get(kind), side, values.map(|v| &v[side.index()]))
    };
    Ok(Prepared {
        graphs: [g(Side::Left)?, g(Side::Right)?],
    })
}

/// Summary of one channel's training.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSummary {
    pub channel: ChannelKind,
    pub seed: u64,
    pub chosen_lr: f64,
    pub chosen_l2: f64,
    pub grid: Vec<crate::training::GridPoint>,
    pub final_loss: f64,
}

/// Grid-searches and trains one channel, writing its checkpoint, loss
/// history and grid results.
pub fn run_train(cfg: &RunConfig, kind: ChannelKind) -> Result<TrainSummary, Error> {
    cfg.check_inputs()?;
    let g = Graphs::load(cfg)?;
    let split = load_split(cfg, &g)?;
    let parts = g.partitions(cfg)?;
    let (model, values) = init_channel(cfg, kind, &parts, &g)?;
    let prepared = prepare(&model, kind, &parts, values.as_ref())?;
    let tcfg = cfg.train.get(kind);
    let outcome = grid_search(
        || Ok::<_, TrainError>(model.clone()),
        [&prepared.graphs[0], &prepared.graphs[1]],
        split.train.pairs(),
        split.valid.pairs(),
        tcfg,
    )?;

    let dir = cfg.channel_dir(kind);
    outcome.model.save(&dir)?;
    let mut csv = Vec::new();
    write_loss_history(&mut csv, &outcome.history).map_err(io_err(&dir))?;
    write_file(&dir.join("loss.csv"), &String::from_utf8(csv).expect("ascii"))?;
    let summary = TrainSummary {
        channel: kind,
        seed: cfg.channel_seed(kind),
        chosen_lr: outcome.chosen.lr,
        chosen_l2: outcome.chosen.l2,
        final_loss: *outcome.history.last().expect("epochs >= 1"),
        grid: outcome.grid,
    };
    write_file(
        &dir.join("grid.json"),
        &(serde_json::to_string_pretty(&summary).expect("serializable") + "\n"),
    )?;
    Ok(summary)
}

fn candidates(cfg: &RunConfig, g: &Graphs, pairs: &AlignmentSet) -> (Vec<EntityId>, Vec<EntityId>) {
    match cfg.ensemble.candidates {
        Candidates::Split => (pairs.lefts(), pairs.rights()),
        Candidates::All => ((0..g.kg1.num_entities()).collect(), (0..g.kg2.num_entities()).collect()),
    }
}

fn write_embeddings(path: &Path, kg: &KnowledgeGraph, emb: &crate::nn::Tensor2) -> Result<(), Error> {
    let mut text = format!("#dim {}\n", emb.cols());
    for e in 0..emb.rows() {
        let row: Vec<String> = emb.row(e).iter().map(|x| format!("{x:?}")).collect();
        text += &format!("{}\t{}\n", kg.entity_label(e), row.join(" "));
    }
    write_file(path, &text)
}

/// Embeds both graphs with a trained channel and writes the embeddings and
/// the valid/test similarity matrices.
pub fn run_infer(cfg: &RunConfig, kind: ChannelKind) -> Result<(), Error> {
    cfg.check_inputs()?;
    let g = Graphs::load(cfg)?;
    let split = load_split(cfg, &g)?;
    let parts = g.partitions(cfg)?;
    let model = ChannelModel::load(&cfg.channel_dir(kind))?;
    if model.kind() != kind {
        return Err(config_err(format!("checkpoint holds a {} channel", model.kind())));
    }
    let values = match kind {
        ChannelKind::Literal | ChannelKind::Digital => Some([
            value_features(&g.kg1, &cfg.features.values)?,
            value_features(&g.kg2, &cfg.features.values)?,
        ]),
        _ => None,
    };
    let prepared = prepare(&model, kind, &parts, values.as_ref())?;
    let e1 = model.embed(&prepared.graphs[0])?;
    let e2 = model.embed(&prepared.graphs[1])?;
    let dir = cfg.out_dir.join("embeddings").join(kind.as_str());
    write_embeddings(&dir.join("kg1.emb"), &g.kg1, &e1)?;
    write_embeddings(&dir.join("kg2.emb"), &g.kg2, &e2)?;
    for name in ["valid", "test"] {
        let pairs = split.get(name).expect("known split");
        if pairs.is_empty() {
            continue;
        }
        let (rows, cols) = candidates(cfg, &g, pairs);
        let s = similarity_matrix(&e1, &e2, &rows, &cols)?;
        let path = cfg.sim_path(kind.as_str(), name);
        write_file(&path, "")?;
        s.save(&path)?;
    }
    Ok(())
}

fn load_channel_sims(cfg: &RunConfig, split: &str) -> Result<Vec<SimilarityMatrix>, Error> {
    ChannelKind::ALL
        .iter()
        .map(|k| Ok(SimilarityMatrix::load(&cfg.sim_path(k.as_str(), split))?))
        .collect()
}

/// Outcome of the ensemble stage.
#[derive(Debug, Clone)]
pub struct EnsembleSummary {
    pub mode: EnsembleMode,
    pub weights: Option<EnsembleWeights>,
}

/// Merges the four channel matrices of the test split into
/// `sim/ensemble.test.sim`.
pub fn run_ensemble(cfg: &RunConfig) -> Result<EnsembleSummary, Error> {
    let test = load_channel_sims(cfg, "test")?;
    let (merged, weights) = match cfg.ensemble.mode {
        EnsembleMode::Avg => {
            let z = test.iter().map(standardize).collect::<Result<Vec<_>, _>>()?;
            (average_pool(&z)?, None)
        }
        EnsembleMode::Svm => {
            cfg.check_inputs()?;
            let g = Graphs::load(cfg)?;
            let split = load_split(cfg, &g)?;
            if split.valid.is_empty() {
                return Err(config_err("svm ensembling needs a non-empty valid split"));
            }
            let valid = load_channel_sims(cfg, "valid")?;
            let samples = build_svm_samples(
                &valid,
                split.valid.pairs(),
                cfg.ensemble.negatives_per_positive,
                splitmix64(cfg.seed ^ 0x5f3),
            )?;
            let mut best: Option<(f64, EnsembleWeights)> = None;
            for &c in &cfg.ensemble.c_grid {
                let fit = train_svm(&samples, c)?;
                let merged = combine(&valid, &fit.weights.w)?;
                let h1 = evaluate(&merged, split.valid.pairs(), &[1], Direction::LeftToRight)?.hits[&1];
                if best.as_ref().is_none_or(|(b, _)| h1 > *b) {
                    best = Some((h1, fit.weights));
                }
            }
            let (_, w) = best.expect("non-empty grid");
            w.save(&cfg.out_dir.join("weights.json"))?;
            (combine(&test, &w.w)?, Some(w))
        }
    };
    merged.save(&cfg.sim_path("ensemble", "test"))?;
    Ok(EnsembleSummary {
        mode: cfg.ensemble.mode,
        weights,
    })
}

/// Evaluates a similarity matrix against the test pairs and writes
/// `report.json` and `report.txt` (suffixed with `name` unless it is the
/// ensemble).
pub fn run_eval(cfg: &RunConfig, sim: &Path, name: &str) -> Result<EvalReport, Error> {
    cfg.check_inputs()?;
    let g = Graphs::load(cfg)?;
    let split = load_split(cfg, &g)?;
    let s = SimilarityMatrix::load(sim)?;
    let report = evaluate(&s, split.test.pairs(), &cfg.eval.hits, cfg.eval.direction)?;
    let stem = if name == "ensemble" { "report".to_owned() } else { format!("report.{name}") };
    write_file(&cfg.out_dir.join(format!("{stem}.json")), &report.to_json())?;
    write_file(&cfg.out_dir.join(format!("{stem}.txt")), &report.to_table())?;
    Ok(report)
}

/// Attention table of a trained encoder channel for one entity.
pub fn run_explain(
    cfg: &RunConfig,
    kind: ChannelKind,
    side: Side,
    entity: &str,
) -> Result<Vec<(String, String, f64)>, Error> {
    cfg.check_inputs()?;
    let g = Graphs::load(cfg)?;
    let parts = g.partitions(cfg)?;
    let model = ChannelModel::load(&cfg.channel_dir(kind))?;
    if !model.config.use_encoder {
        return Err(config_err(format!("the {kind} channel has no attention to explain")));
    }
    let kg = if side == Side::Left { &g.kg1 } else { &g.kg2 };
    let e = kg
        .entity_id(entity)
        .ok_or_else(|| config_err(format!("unknown entity {entity:?}")))?;
    let values = value_features(kg, &cfg.features.values)?;
    let sub = parts[side.index()].get(kind);
    let graph = ChannelGraph::prepare(&model, sub, side, Some(&values))?;
    Ok(model.explain_entity(&graph, sub, e)?)
}

/// Formats an attention table, one `weight<TAB>attribute<TAB>value` row per
/// triple.
pub fn format_explanation(rows: &[(String, String, f64)]) -> String {
    let mut out = String::from("attention\tattribute\tvalue\n");
    for (a, v, w) in rows {
        out += &format!("{w:.4}\t{a}\t{v}\n");
    }
    out
}

/// Test-split reports of one full pipeline run.
#[derive(Debug, Clone)]
pub struct RunReports {
    pub channels: BTreeMap<ChannelKind, EvalReport>,
    pub ensemble: EvalReport,
}

/// Runs every stage after data preparation: partition, hard split (when
/// configured), training, inference, ensembling and evaluation of each
/// channel and of the ensemble.
pub fn run_all(cfg: &RunConfig) -> Result<RunReports, Error> {
    run_partition(cfg)?;
    if matches!(cfg.split, SplitSpec::Hard { .. }) {
        run_hardsplit(cfg)?;
    }
    let mut channels = BTreeMap::new();
    for kind in ChannelKind::ALL {
        run_train(cfg, kind)?;
        run_infer(cfg, kind)?;
        let report = run_eval(cfg, &cfg.sim_path(kind.as_str(), "test"), kind.as_str())?;
        channels.insert(kind, report);
    }
    run_ensemble(cfg)?;
    let ensemble = run_eval(cfg, &cfg.sim_path("ensemble", "test"), "ensemble")?;
    Ok(RunReports { channels, ensemble })
}
