//! GNN channels: an attention encoder over (attribute, value) pairs followed
//! by mean aggregation over relation neighbours.
//!
//! One [`ChannelModel`] embeds both graphs of an alignment task. The weight
//! matrices are shared across the two sides; each side keeps its own entity
//! feature table. Attribute features are shared by attribute label.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::featurize::{self, FeatureError, FeatureTable, DEFAULT_DIM};
use crate::kg::{AttributeTriple, EntityId};
use crate::nn::{self, MeanOperator, NnError, ParamSet, Tape, Tensor2, Var};
use crate::partition::{ChannelKind, Subgraph};

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("invalid channel configuration: {0}")]
    Config(String),
    #[error("no value feature for {0:?}")]
    MissingValueFeature(String),
    #[error("entity {0:?} has no attribute triples to explain")]
    EmptyExplanation(String),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

/// Which graph of the pair a tensor belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Left, Side::Right];

    pub fn index(self) -> usize {
        match self {
            Side::Left => 0,
            Side::Right => 1,
        }
    }
}

/// Nonlinearity of the mean aggregator layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    /// LeakyReLU with slope 0.2. Keeps channels without residuals from
    /// collapsing whole rows to zero.
    LeakyRelu,
}

/// Default range multiplier for random entity features.
pub const ENTITY_INIT_SCALE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub kind: ChannelKind,
    pub layers: usize,
    /// Output dimension of each layer.
    pub hidden_dims: Vec<usize>,
    /// Dimension of the initial entity features.
    pub entity_dim: usize,
    /// Dimension of the learnable attribute features (encoder channels).
    pub attribute_dim: usize,
    pub use_encoder: bool,
    pub use_residual: bool,
    pub max_attr_triples: usize,
    pub aggregate_activation: Activation,
    /// Random entity features are drawn from `±scale/sqrt(entity_dim)`.
    /// Ignored by the Name channel.
    pub entity_init_scale: f64,
}

impl ChannelConfig {
    pub fn for_kind(kind: ChannelKind) -> Self {
        let encoder = matches!(kind, ChannelKind::Literal | ChannelKind::Digital);
        Self {
            kind,
            layers: 2,
            hidden_dims: vec![DEFAULT_DIM; 2],
            entity_dim: DEFAULT_DIM,
            attribute_dim: DEFAULT_DIM,
            use_encoder: encoder,
            use_residual: kind != ChannelKind::Structure,
            max_attr_triples: 20,
            aggregate_activation: if kind == ChannelKind::Structure {
                Activation::LeakyRelu
            } else {
                Activation::Relu
            },
            entity_init_scale: ENTITY_INIT_SCALE,
        }
    }

    /// Same architecture with every dimension set to `dim`.
    pub fn with_dim(mut self, dim: usize) -> Self {
        self.hidden_dims = vec![dim; self.layers];
        self.entity_dim = dim;
        self.attribute_dim = dim;
        self
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        let bad = |m: String| Err(ChannelError::Config(m));
        if self.layers != 2 || self.hidden_dims.len() != 2 {
            return bad(format!("channels have exactly two layers, got {}", self.layers));
        }
        if self.entity_dim == 0 || self.hidden_dims.contains(&0) {
            return bad("dimensions must be positive".into());
        }
        if self.use_encoder && (self.attribute_dim == 0 || self.max_attr_triples == 0) {
            return bad("encoder needs positive attribute_dim and max_attr_triples".into());
        }
        if !(self.entity_init_scale > 0.0 && self.entity_init_scale.is_finite()) {
            return bad("entity_init_scale must be positive".into());
        }
        if self.use_encoder != matches!(self.kind, ChannelKind::Literal | ChannelKind::Digital) {
            return bad(format!("{} channel encoder flag is inconsistent", self.kind));
        }
        if self.use_residual {
            let ins = [self.entity_dim, self.hidden_dims[0]];
            for (l, (&i, &o)) in ins.iter().zip(&self.hidden_dims).enumerate() {
                if i != o {
                    return bad(format!(
                        "residual at layer {} needs equal input/output dims, got {i} -> {o}",
                        l + 1
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Parameter names.
pub mod param {
    use super::Side;

    pub const ATTRIBUTES: &str = "attribute_features";
    pub const ENCODER_W: &str = "encoder.w";
    pub const ENCODER_U: &str = "encoder.u";
    pub const ENCODER_FALLBACK: &str = "encoder.fallback";
    pub const AGGREGATE: [&str; 2] = ["aggregate.1", "aggregate.2"];

    pub fn entity(side: Side) -> &'static str {
        match side {
            Side::Left => "entity.left",
            Side::Right => "entity.right",
        }
    }
}

/// Learnable state of one channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelModel {
    pub config: ChannelConfig,
    pub params: ParamSet,
    /// Attribute labels, row `i` of the attribute feature table.
    pub attribute_vocab: Vec<String>,
    /// Dimension of the value features the encoder consumes.
    pub value_dim: usize,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    config: ChannelConfig,
    attribute_vocab: Vec<String>,
    value_dim: usize,
    frozen: Vec<String>,
}

fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor2 {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor2::from_vec(rows, cols, data).expect("sized")
}

impl ChannelModel {
    /// Initialises a model for a pair of subgraphs of the config's kind.
    ///
    /// `name_features` supplies frozen entity features (one table per side,
    /// rows by entity id) and is required for the Name channel; every other
    /// channel starts from seeded random entity features.
    pub fn new(
        config: ChannelConfig,
        subgraphs: [&Subgraph<'_>; 2],
        value_dim: usize,
        name_features: Option<[&FeatureTable; 2]>,
        seed: u64,
    ) -> Result<Self, ChannelError> {
        config.validate()?;
        for s in subgraphs {
            if s.kind() != config.kind {
                return Err(ChannelError::Config(format!(
                    "{} subgraph given to a {} channel",
                    s.kind(),
                    config.kind
                )));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();

        match (config.kind, name_features) {
            (ChannelKind::Name, Some(tables)) => {
                for (side, (table, sub)) in Side::BOTH.iter().zip(tables.iter().zip(subgraphs)) {
                    if table.dim() != config.entity_dim || table.len() != sub.num_entities() {
                        return Err(ChannelError::Config(format!(
                            "name features are {}x{}, expected {}x{}",
                            table.len(),
                            table.dim(),
                            sub.num_entities(),
                            config.entity_dim
                        )));
                    }
                    params.insert(param::entity(*side), table.vectors().clone(), false);
                }
            }
            (ChannelKind::Name, None) => {
                return Err(ChannelError::Config("the name channel needs name features".into()))
            }
            _ => {
                for (side, sub) in Side::BOTH.iter().zip(subgraphs) {
                    let labels = sub.base().entities().labels();
                    let init = featurize::init_random_keyed(labels, config.entity_dim, rng.random())?;
                    let mut init = init.into_vectors();
                    init.as_slice_mut().iter_mut().for_each(|x| *x *= config.entity_init_scale);
                    params.insert(param::entity(*side), init, true);
                }
            }
        }

        let mut attribute_vocab = Vec::new();
        if config.use_encoder {
            if value_dim == 0 {
                return Err(ChannelError::Config("value features need a positive dim".into()));
            }
            let mut labels: Vec<&str> = subgraphs
                .iter()
                .flat_map(|sub| {
                    sub.attribute_triples()
                        .iter()
                        .map(|t| sub.attribute_label(t.attribute))
                })
                .collect();
            labels.sort_unstable();
            labels.dedup();
            attribute_vocab = labels.into_iter().map(str::to_owned).collect();
            let (de, da, dh) = (config.entity_dim, config.attribute_dim, config.hidden_dims[0]);
            let attrs = featurize::init_random_keyed(&attribute_vocab, da, rng.random())?;
            params.insert(param::ATTRIBUTES, attrs.into_vectors(), true);
            params.insert(param::ENCODER_W, glorot(&mut rng, dh, da + value_dim), true);
            params.insert(param::ENCODER_U, glorot(&mut rng, 1, de + da), true);
            params.insert(param::ENCODER_FALLBACK, glorot(&mut rng, dh, de), true);
        } else {
            let w = glorot(&mut rng, config.hidden_dims[0], config.entity_dim);
            params.insert(param::AGGREGATE[0], w, true);
        }
        let w = glorot(&mut rng, config.hidden_dims[1], config.hidden_dims[0]);
        params.insert(param::AGGREGATE[1], w, true);

        let value_dim = if config.use_encoder { value_dim } else { 0 };
        Ok(Self {
            config,
            params,
            attribute_vocab,
            value_dim,
        })
    }

    pub fn kind(&self) -> ChannelKind {
        self.config.kind
    }

    /// Writes `params.ckpt` and `config.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), ChannelError> {
        let io = |e: std::io::Error| ChannelError::Io(format!("{}: {e}", dir.display()));
        fs::create_dir_all(dir).map_err(io)?;
        let mut w = BufWriter::new(File::create(dir.join("params.ckpt")).map_err(io)?);
        self.params.write_checkpoint(&mut w)?;
        w.flush().map_err(io)?;
        let sidecar = Sidecar {
            config: self.config.clone(),
            attribute_vocab: self.attribute_vocab.clone(),
            value_dim: self.value_dim,
            frozen: self
                .params
                .iter()
                .filter(|(_, p)| !p.trainable)
                .map(|(n, _)| n.to_owned())
                .collect(),
        };
        let json = serde_json::to_string_pretty(&sidecar).expect("plain data");
        fs::write(dir.join("config.json"), json + "\n").map_err(io)
    }

    pub fn load(dir: &Path) -> Result<Self, ChannelError> {
        let io = |e: std::io::Error| ChannelError::Io(format!("{}: {e}", dir.display()));
        let f = File::open(dir.join("config.json")).map_err(io)?;
        let sidecar: Sidecar = serde_json::from_reader(BufReader::new(f))
            .map_err(|e| ChannelError::Io(format!("{}/config.json: {e}", dir.display())))?;
        sidecar.config.validate()?;
        let f = File::open(dir.join("params.ckpt")).map_err(io)?;
        let mut params = ParamSet::read_checkpoint(BufReader::new(f))?;
        for name in &sidecar.frozen {
            params
                .get_mut(name)
                .ok_or_else(|| NnError::UnknownParam(name.clone()))?
                .trainable = false;
        }
        Ok(Self {
            config: sidecar.config,
            params,
            attribute_vocab: sidecar.attribute_vocab,
            value_dim: sidecar.value_dim,
        })
    }

    /// Records the channel's forward pass for one side on `tape`, reading
    /// weights from `params` (normally `self.params`).
    pub fn forward_with(
        &self,
        params: &ParamSet,
        tape: &mut Tape,
        graph: &ChannelGraph,
    ) -> Result<Var, ChannelError> {
        let h0 = tape.param(params, param::entity(graph.side))?;
        let mut h = if self.config.use_encoder {
            let enc = &graph.encoder;
            let attrs = tape.param(params, param::ATTRIBUTES)?;
            let u = tape.param(params, param::ENCODER_U)?;
            let w = tape.param(params, param::ENCODER_W)?;
            let fallback_w = tape.param(params, param::ENCODER_FALLBACK)?;

            let a = tape.gather_rows(attrs, enc.attribute_rows.clone())?;
            let e = tape.gather_rows(h0, enc.entities.clone())?;
            let v = tape.constant(enc.values.clone());
            let ea = tape.concat(e, a)?;
            let logits = tape.linear(ea, u)?;
            let logits = tape.leaky_relu(logits)?;
            let alpha = tape.segment_softmax(logits, enc.entities.clone())?;
            let av = tape.concat(a, v)?;
            let messages = tape.linear(av, w)?;
            let weighted = tape.scale_rows(messages, alpha)?;
            let pooled = tape.scatter_add_rows(weighted, enc.entities.clone(), graph.n_entities)?;
            let encoded = tape.elu(pooled)?;

            let fallback = tape.linear(h0, fallback_w)?;
            let fallback = tape.relu(fallback)?;
            tape.select_rows(encoded, fallback, enc.has_triples.clone())?
        } else {
            self.aggregate(params, tape, graph, h0, 0)?
        };
        if self.config.use_residual {
            h = tape.residual_add(h, h0)?;
        }
        let mut out = self.aggregate(params, tape, graph, h, 1)?;
        if self.config.use_residual {
            out = tape.residual_add(out, h)?;
        }
        Ok(out)
    }

    fn aggregate(
        &self,
        params: &ParamSet,
        tape: &mut Tape,
        graph: &ChannelGraph,
        x: Var,
        layer: usize,
    ) -> Result<Var, ChannelError> {
        let w = tape.param(params, param::AGGREGATE[layer])?;
        let mean = tape.mean_aggregate(x, graph.neighborhood.clone())?;
        let h = tape.linear(mean, w)?;
        Ok(match self.config.aggregate_activation {
            Activation::Relu => tape.relu(h)?,
            Activation::LeakyRelu => tape.leaky_relu(h)?,
        })
    }

    /// Final entity embeddings for one side, rows by entity id.
    pub fn embed(&self, graph: &ChannelGraph) -> Result<Tensor2, ChannelError> {
        let mut tape = Tape::new();
        let out = self.forward_with(&self.params, &mut tape, graph)?;
        Ok(tape.value(out).clone())
    }

    /// Attention weights over an entity's (capped) attribute triples, sorted
    /// by descending weight with ties broken by attribute id.
    pub fn explain_entity(
        &self,
        graph: &ChannelGraph,
        subgraph: &Subgraph<'_>,
        e: EntityId,
    ) -> Result<Vec<(String, String, f64)>, ChannelError> {
        if !self.config.use_encoder {
            return Err(ChannelError::Config(format!(
                "the {} channel has no attention to explain",
                self.config.kind
            )));
        }
        let enc = &graph.encoder;
        let rows: Vec<usize> = (0..enc.triples.len()).filter(|&k| enc.entities[k] == e).collect();
        if rows.is_empty() {
            return Err(ChannelError::EmptyExplanation(subgraph.entity_label(e).to_owned()));
        }
        let h0 = self.params.value(param::entity(graph.side))?.row(e);
        let attrs = self.params.value(param::ATTRIBUTES)?;
        let u = self.params.value(param::ENCODER_U)?;
        let logits: Vec<f64> = rows
            .iter()
            .map(|&k| attention_logit(u.row(0), h0, attrs.row(enc.attribute_rows[k])))
            .collect();
        let weights = nn::softmax(&Tensor2::row_vector(&logits));

        let mut out: Vec<(AttributeTriple, f64)> = rows
            .iter()
            .zip(weights.row(0))
            .map(|(&k, &w)| (enc.triples[k], w))
            .collect();
        out.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then(a.0.attribute.cmp(&b.0.attribute))
                .then(a.0.value.cmp(&b.0.value))
        });
        Ok(out
            .into_iter()
            .map(|(t, w)| {
                (
                    subgraph.attribute_label(t.attribute).to_owned(),
                    subgraph.value_label(t.value).to_owned(),
                    w,
                )
            })
            .collect())
    }
}

fn attention_logit(u: &[f64], h0: &[f64], a: &[f64]) -> f64 {
    let (ue, ua) = u.split_at(h0.len());
    let o: f64 = ue.iter().zip(h0).map(|(x, y)| x * y).sum::<f64>()
        + ua.iter().zip(a).map(|(x, y)| x * y).sum::<f64>();
    if o > 0.0 {
        o
    } else {
        nn::LEAKY_RELU_SLOPE * o
    }
}

/// Gathered encoder inputs for every kept attribute triple of one side.
#[derive(Debug, Clone)]
pub struct EncoderInputs {
    /// Owning entity of each kept triple; also the softmax segment id.
    pub entities: Arc<Vec<usize>>,
    /// Row of each triple's attribute in the model's attribute table.
    pub attribute_rows: Arc<Vec<usize>>,
    /// Value feature of each triple.
    pub values: Tensor2,
    pub has_triples: Arc<Vec<bool>>,
    pub triples: Vec<AttributeTriple>,
}

/// Graph-side inputs to a channel's forward pass, precomputed once.
#[derive(Debug, Clone)]
pub struct ChannelGraph {
    pub side: Side,
    pub n_entities: usize,
    /// Mean over `{e} ∪ N(e)` for every entity.
    pub neighborhood: Arc<MeanOperator>,
    pub encoder: EncoderInputs,
}

impl ChannelGraph {
    /// `value_features` must hold a row per value id used by the subgraph
    /// (encoder channels only).
    pub fn prepare(
        model: &ChannelModel,
        subgraph: &Subgraph<'_>,
        side: Side,
        value_features: Option<&FeatureTable>,
    ) -> Result<Self, ChannelError> {
        if subgraph.kind() != model.config.kind {
            return Err(ChannelError::Config(format!(
                "{} subgraph given to a {} channel",
                subgraph.kind(),
                model.config.kind
            )));
        }
        let kg = subgraph.base();
        let n = kg.num_entities();
        let mut rows = Vec::with_capacity(n);
        for e in 0..n {
            let neighbors = kg.neighbors(e).expect("entity in range");
            let mut members = Vec::with_capacity(neighbors.len() + 1);
            members.push(e);
            members.extend(neighbors.iter().copied().filter(|&j| j != e));
            rows.push(members);
        }
        let neighborhood = Arc::new(MeanOperator::new(rows, n)?);
        let n_params = model.params.value(param::entity(side))?.rows();
        if n_params != n {
            return Err(ChannelError::Config(format!(
                "model has {n_params} {side:?} entities, graph has {n}"
            )));
        }

        let mut encoder = EncoderInputs {
            entities: Arc::new(Vec::new()),
            attribute_rows: Arc::new(Vec::new()),
            values: Tensor2::zeros(0, model.value_dim),
            has_triples: Arc::new(vec![false; n]),
            triples: Vec::new(),
        };
        if model.config.use_encoder {
            let features = value_features.ok_or_else(|| {
                ChannelError::Config(format!("the {} channel needs value features", model.kind()))
            })?;
            if features.dim() != model.value_dim {
                return Err(ChannelError::Config(format!(
                    "value features have dim {}, model expects {}",
                    features.dim(),
                    model.value_dim
                )));
            }
            let vocab: HashMap<&str, usize> = model
                .attribute_vocab
                .iter()
                .enumerate()
                .map(|(i, l)| (l.as_str(), i))
                .collect();
            let triples = capped_triples(subgraph, model.config.max_attr_triples);
            let mut entities = Vec::with_capacity(triples.len());
            let mut attribute_rows = Vec::with_capacity(triples.len());
            let mut values = Tensor2::zeros(triples.len(), model.value_dim);
            let mut has = vec![false; n];
            for (k, t) in triples.iter().enumerate() {
                let label = subgraph.attribute_label(t.attribute);
                let row = *vocab.get(label).ok_or_else(|| {
                    ChannelError::Config(format!("attribute {label:?} unknown to the model"))
                })?;
                if t.value >= features.len() {
                    return Err(ChannelError::MissingValueFeature(
                        subgraph.value_label(t.value).to_owned(),
                    ));
                }
                values.row_mut(k).copy_from_slice(features.vector(t.value));
                entities.push(t.entity);
                attribute_rows.push(row);
                has[t.entity] = true;
            }
            encoder = EncoderInputs {
                entities: Arc::new(entities),
                attribute_rows: Arc::new(attribute_rows),
                values,
                has_triples: Arc::new(has),
                triples,
            };
        }
        Ok(Self {
            side,
            n_entities: n,
            neighborhood,
            encoder,
        })
    }
}

/// Each entity's attribute triples sorted by (attribute label, value label)
/// and truncated to `cap`, grouped by entity id. Sorting by surface string
/// keeps the selection independent of input file order.
pub fn capped_triples(subgraph: &Subgraph<'_>, cap: usize) -> Vec<AttributeTriple> {
    let mut out = Vec::new();
    for mut ts in subgraph.triples_by_entity() {
        ts.sort_by(|a, b| {
            subgraph
                .attribute_label(a.attribute)
                .cmp(subgraph.attribute_label(b.attribute))
                .then_with(|| subgraph.value_label(a.value).cmp(subgraph.value_label(b.value)))
        });
        ts.truncate(cap);
        out.extend(ts);
    }
    out
}

/// Prepares and runs a channel over one subgraph.
pub fn run_channel(
    model: &ChannelModel,
    subgraph: &Subgraph<'_>,
    side: Side,
    value_features: Option<&FeatureTable>,
) -> Result<Tensor2, ChannelError> {
    let graph = ChannelGraph::prepare(model, subgraph, side, value_features)?;
    model.embed(&graph)
}

/// Attention encoder for a single entity: scores each attribute against the
/// entity, softmaxes the scores and returns `ELU(Σ α_j W [a_j; v_j])` with
/// the attention weights. `u` is a `1 × (De + Da)` row.
pub fn encode_attributes(
    h0: &[f64],
    attrs: &[Vec<f64>],
    vals: &[Vec<f64>],
    w: &Tensor2,
    u: &Tensor2,
) -> Result<(Vec<f64>, Vec<f64>), ChannelError> {
    if attrs.is_empty() || attrs.len() != vals.len() {
        return Err(NnError::Shape {
            op: "encode_attributes",
            detail: format!("{} attributes and {} values", attrs.len(), vals.len()),
        }
        .into());
    }
    let n = attrs.len();
    let h0s = Tensor2::from_rows(&vec![h0.to_vec(); n])?;
    let a = Tensor2::from_rows(attrs)?;
    let v = Tensor2::from_rows(vals)?;
    let logits = nn::linear(&nn::concat(&h0s, &a)?, u)?;
    let logits = nn::leaky_relu(&logits, nn::LEAKY_RELU_SLOPE);
    let alpha = nn::softmax(&Tensor2::row_vector(logits.as_slice()));
    let messages = nn::linear(&nn::concat(&a, &v)?, w)?;
    let mut pooled = vec![0.0; messages.cols()];
    for (j, &aj) in alpha.row(0).iter().enumerate() {
        for (p, m) in pooled.iter_mut().zip(messages.row(j)) {
            *p += aj * m;
        }
    }
    let h1 = nn::elu(&Tensor2::row_vector(&pooled));
    Ok((h1.row(0).to_vec(), alpha.row(0).to_vec()))
}

/// `ReLU(W · mean({h_self} ∪ h_neighbors))`.
pub fn mean_aggregate(
    h_self: &[f64],
    h_neighbors: &[Vec<f64>],
    w: &Tensor2,
) -> Result<Vec<f64>, ChannelError> {
    let mut rows = Vec::with_capacity(h_neighbors.len() + 1);
    rows.push(h_self.to_vec());
    rows.extend(h_neighbors.iter().cloned());
    let mean = nn::mean_rows(&Tensor2::from_rows(&rows)?)?;
    Ok(nn::relu(&nn::linear(&mean, w)?).row(0).to_vec())
}
