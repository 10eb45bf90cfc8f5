//! Paired synthetic graphs with a planted alignment.
//!
//! KG2 is a relabelled copy of KG1. A chosen fraction of KG2 entities get an
//! unrelated name, literal values are character-corrupted and numbers are
//! scaled, so each channel sees a different kind of noise.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::{AlignmentSet, EntityId, KgBuilder, KgError, KnowledgeGraph};

/// Attribute carrying entity names in generated graphs.
pub const NAME_ATTRIBUTE: &str = "name";
/// The literal attribute whose values identify an entity.
pub const KEY_LITERAL: &str = "description";

const N_RELATION_TYPES: usize = 3;
const SHARED_VOCAB: usize = 6;
const OPTIONAL_ATTR_PROB: f64 = 0.7;
const CONSONANTS: &[u8] = b"bcdfghjklmnprstvwz";
const VOWELS: &[u8] = b"aeiou";

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Kg(#[from] KgError),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_entities: usize,
    pub avg_degree: f64,
    pub n_literal_attrs: usize,
    pub n_digital_attrs: usize,
    pub p_hard_name: f64,
    pub literal_noise: f64,
    pub digital_jitter: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_entities: 200,
            avg_degree: 4.0,
            n_literal_attrs: 3,
            n_digital_attrs: 2,
            p_hard_name: 0.6,
            literal_noise: 0.1,
            digital_jitter: 0.01,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Config(m));
        if self.n_entities < 10 {
            return bad(format!("n_entities must be at least 10, got {}", self.n_entities));
        }
        if !(self.avg_degree > 0.0 && self.avg_degree.is_finite()) {
            return bad(format!("avg_degree must be positive, got {}", self.avg_degree));
        }
        for (name, p) in [
            ("p_hard_name", self.p_hard_name),
            ("literal_noise", self.literal_noise),
            ("digital_jitter", self.digital_jitter),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        if self.n_literal_attrs == 0 {
            return bad("n_literal_attrs must be at least 1".into());
        }
        Ok(())
    }
}

/// A generated pair of graphs and its planted alignment.
#[derive(Debug, Clone)]
pub struct SynthData {
    pub kg1: KnowledgeGraph,
    pub kg2: KnowledgeGraph,
    pub gold: AlignmentSet,
    /// KG1 entities whose KG2 counterpart was renamed, ascending.
    pub renamed: Vec<EntityId>,
}

fn pseudo_word(rng: &mut ChaCha8Rng, syllables: usize) -> String {
    let mut w = String::with_capacity(syllables * 2);
    for _ in 0..syllables {
        w.push(CONSONANTS[rng.random_range(0..CONSONANTS.len())] as char);
        w.push(VOWELS[rng.random_range(0..VOWELS.len())] as char);
    }
    w
}

fn phrase(rng: &mut ChaCha8Rng, words: usize) -> String {
    (0..words)
        .map(|_| {
            let syl = rng.random_range(2..=4);
            pseudo_word(rng, syl)
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn trigrams(s: &str) -> HashSet<Vec<char>> {
    let chars: Vec<char> = s.to_lowercase().chars().collect();
    chars.windows(3).map(<[char]>::to_vec).collect()
}

/// A fresh alphabetic token sharing no character 3-gram with `original`
/// and not already in `taken`.
fn unrelated_name(rng: &mut ChaCha8Rng, original: &str, taken: &HashSet<String>) -> String {
    let banned = trigrams(original);
    loop {
        let candidate = phrase(rng, 2);
        if !taken.contains(&candidate) && trigrams(&candidate).is_disjoint(&banned) {
            return candidate;
        }
    }
}

fn corrupt(rng: &mut ChaCha8Rng, text: &str, p: f64) -> String {
    text.chars()
        .map(|c| {
            if c.is_alphabetic() && rng.random_bool(p) {
                (b'a' + rng.random_range(0..26u8)) as char
            } else {
                c
            }
        })
        .collect()
}

struct Profile {
    name: String,
    literals: Vec<(String, String)>,
    digitals: Vec<(String, f64, usize)>,
}

/// Generates `(kg1, kg2, gold)`; the output depends only on `cfg`.
pub fn generate(cfg: &SynthConfig) -> Result<SynthData, SynthError> {
    cfg.validate()?;
    let n = cfg.n_entities;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut names = HashSet::new();
    let mut keys = HashSet::new();
    let vocab: Vec<Vec<String>> = (1..cfg.n_literal_attrs)
        .map(|_| (0..SHARED_VOCAB).map(|_| pseudo_word(&mut rng, 2)).collect())
        .collect();
    let mut profiles = Vec::with_capacity(n);
    for _ in 0..n {
        let name = loop {
            let s = phrase(&mut rng, 2);
            if names.insert(s.clone()) {
                break s;
            }
        };
        let key = loop {
            let s = phrase(&mut rng, 3);
            if keys.insert(s.clone()) {
                break s;
            }
        };
        let mut literals = vec![(KEY_LITERAL.to_owned(), key)];
        for (k, words) in vocab.iter().enumerate() {
            if rng.random_bool(OPTIONAL_ATTR_PROB) {
                literals.push((format!("lit{}", k + 1), words[rng.random_range(0..words.len())].clone()));
            }
        }
        let mut digitals = Vec::new();
        for k in 0..cfg.n_digital_attrs {
            if k == 0 {
                let v = f64::from(rng.random_range(100_000..10_000_000u32)) / 100.0;
                digitals.push((format!("dig{k}"), v, 2));
            } else if rng.random_bool(OPTIONAL_ATTR_PROB) {
                digitals.push((format!("dig{k}"), f64::from(rng.random_range(1800..2021u32)), 0));
            }
        }
        profiles.push(Profile {
            name,
            literals,
            digitals,
        });
    }

    let poisson = Poisson::new(cfg.avg_degree).map_err(|e| SynthError::Config(e.to_string()))?;
    let mut edges = Vec::new();
    for h in 0..n {
        let d = (poisson.sample(&mut rng) as usize).clamp(1, n - 1);
        let mut others: Vec<usize> = (0..n).filter(|&t| t != h).collect();
        let (picked, _) = others.partial_shuffle(&mut rng, d);
        let mut picked = picked.to_vec();
        picked.sort_unstable();
        for t in picked {
            edges.push((h, rng.random_range(0..N_RELATION_TYPES), t));
        }
    }

    let label1 = |i: usize| format!("kg1/e{i}");
    let label2 = |j: usize| format!("kg2/e{j}");
    let mut b1 = KgBuilder::new();
    for i in 0..n {
        b1.add_entity(&label1(i));
    }
    for &(h, r, t) in &edges {
        b1.add_relation(&label1(h), &format!("rel{r}"), &label1(t));
    }
    for (i, p) in profiles.iter().enumerate() {
        b1.add_attribute(&label1(i), NAME_ATTRIBUTE, &p.name);
        for (a, v) in &p.literals {
            b1.add_attribute(&label1(i), a, v);
        }
        for (a, v, dec) in &p.digitals {
            b1.add_attribute(&label1(i), a, &format!("{v:.dec$}"));
        }
    }

    // perm[i] is the KG2 index of KG1 entity i.
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let n_hard = (cfg.p_hard_name * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut renamed: Vec<usize> = order[..n_hard].to_vec();
    renamed.sort_unstable();
    let renamed_set: HashSet<usize> = renamed.iter().copied().collect();

    let mut taken = names.clone();
    let mut names2 = Vec::with_capacity(n);
    for (i, p) in profiles.iter().enumerate() {
        if renamed_set.contains(&i) {
            let fresh = unrelated_name(&mut rng, &p.name, &taken);
            taken.insert(fresh.clone());
            names2.push(fresh);
        } else {
            names2.push(p.name.clone());
        }
    }

    let mut inverse = vec![0; n];
    for (i, &j) in perm.iter().enumerate() {
        inverse[j] = i;
    }
    let mut b2 = KgBuilder::new();
    for j in 0..n {
        b2.add_entity(&label2(j));
    }
    let mut edges2: Vec<_> = edges.iter().map(|&(h, r, t)| (perm[h], r, perm[t])).collect();
    edges2.sort_unstable();
    for (h, r, t) in edges2 {
        b2.add_relation(&label2(h), &format!("rel{r}"), &label2(t));
    }
    for (j, &i) in inverse.iter().enumerate() {
        let p = &profiles[i];
        b2.add_attribute(&label2(j), NAME_ATTRIBUTE, &names2[i]);
        for (a, v) in &p.literals {
            let noisy = if cfg.literal_noise > 0.0 {
                corrupt(&mut rng, v, cfg.literal_noise)
            } else {
                v.clone()
            };
            b2.add_attribute(&label2(j), a, &noisy);
        }
        for (a, v, dec) in &p.digitals {
            let factor = if rng.random_bool(0.5) {
                1.0 + cfg.digital_jitter
            } else {
                1.0 - cfg.digital_jitter
            };
            b2.add_attribute(&label2(j), a, &format!("{:.dec$}", v * factor));
        }
    }

    let kg1 = b1.build();
    let kg2 = b2.build();
    let pairs = (0..n)
        .map(|i| {
            let e1 = kg1.entity_id(&label1(i)).expect("added");
            let e2 = kg2.entity_id(&label2(perm[i])).expect("added");
            (e1, e2)
        })
        .collect();
    let gold = AlignmentSet::new(pairs, kg1.num_entities(), kg2.num_entities())?;
    Ok(SynthData {
        kg1,
        kg2,
        gold,
        renamed,
    })
}

/// Output locations for a generated fixture.
#[derive(Debug, Clone)]
pub struct SynthPaths<'a> {
    pub kg1: (&'a Path, &'a Path),
    pub kg2: (&'a Path, &'a Path),
    pub gold: &'a Path,
    pub config: &'a Path,
}

impl SynthData {
    /// Writes both graphs in the triple file format, the gold alignment and
    /// the generating config as JSON. Parent directories are created.
    pub fn save(&self, cfg: &SynthConfig, paths: &SynthPaths<'_>) -> Result<(), SynthError> {
        let all = [paths.kg1.0, paths.kg1.1, paths.kg2.0, paths.kg2.1, paths.gold, paths.config];
        for p in all {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|source| SynthError::Io {
                    path: dir.to_owned(),
                    source,
                })?;
            }
        }
        self.kg1.save(paths.kg1.0, paths.kg1.1)?;
        self.kg2.save(paths.kg2.0, paths.kg2.1)?;
        self.gold.save(paths.gold, &self.kg1, &self.kg2)?;
        let json = serde_json::to_string_pretty(cfg).expect("serializable") + "\n";
        std::fs::write(paths.config, json).map_err(|source| SynthError::Io {
            path: paths.config.to_owned(),
            source,
        })
    }
}
