//! Initial feature vectors for values, names, attributes and entities.
//!
//! Text is featurised with signed character n-gram hashing by default; a
//! precomputed embedding file (e.g. frozen language-model features) can be
//! dropped in instead. Entity and attribute features start random.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::Tensor2;

pub const DEFAULT_DIM: usize = 128;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Format {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("{path}: embedding dimension {found} does not match the expected {expected}")]
    DimMismatch {
        path: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("no feature vector for {0:?}")]
    MissingKey(String),
    #[error("feature dimension must be positive")]
    ZeroDim,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSource {
    Ngram,
    File,
    Random { seed: u64 },
}

/// Fixed-length vectors indexed by dense id, optionally keyed by surface string.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    source: FeatureSource,
    vectors: Tensor2,
    keys: Vec<String>,
    index: HashMap<String, usize>,
}

impl FeatureTable {
    fn keyed(source: FeatureSource, vectors: Tensor2, keys: Vec<String>) -> Self {
        let index = keys.iter().enumerate().map(|(i, k)| (k.clone(), i)).collect();
        Self {
            source,
            vectors,
            keys,
            index,
        }
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn len(&self) -> usize {
        self.vectors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn source(&self) -> FeatureSource {
        self.source
    }

    pub fn vector(&self, id: usize) -> &[f64] {
        self.vectors.row(id)
    }

    pub fn vectors(&self) -> &Tensor2 {
        &self.vectors
    }

    pub fn into_vectors(self) -> Tensor2 {
        self.vectors
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn lookup(&self, key: &str) -> Option<&[f64]> {
        self.index.get(key).map(|&i| self.vectors.row(i))
    }

    /// Re-indexes the table so that row `i` holds the vector for `keys[i]`.
    pub fn resolve<S: AsRef<str>>(&self, keys: &[S]) -> Result<FeatureTable, FeatureError> {
        let mut out = Tensor2::zeros(keys.len(), self.dim());
        for (i, k) in keys.iter().enumerate() {
            let v = self
                .lookup(k.as_ref())
                .ok_or_else(|| FeatureError::MissingKey(k.as_ref().to_owned()))?;
            out.row_mut(i).copy_from_slice(v);
        }
        Ok(Self::keyed(
            self.source,
            out,
            keys.iter().map(|k| k.as_ref().to_owned()).collect(),
        ))
    }

    /// Writes the table in the embedding file format. Tables without keys use
    /// their row index as key.
    pub fn write_embeddings<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "#dim {}", self.dim())?;
        for i in 0..self.len() {
            let vals: Vec<String> = self.vector(i).iter().map(|x| format!("{x:?}")).collect();
            match self.keys.get(i) {
                Some(k) => writeln!(w, "{k}\t{}", vals.join(" "))?,
                None => writeln!(w, "{i}\t{}", vals.join(" "))?,
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), FeatureError> {
        let io = |source| FeatureError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        self.write_embeddings(&mut w)
            .and_then(|_| w.flush())
            .map_err(io)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Signed hashing of the character 1-, 2- and 3-grams of the lowercased
/// text into `dim` buckets, L2-normalised. Empty text maps to the zero vector.
pub fn ngram_feature(text: &str, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    if dim == 0 {
        return v;
    }
    let chars: Vec<char> = text.to_lowercase().chars().collect();
    let mut buf = String::new();
    for n in 1..=3 {
        for gram in chars.windows(n) {
            buf.clear();
            buf.extend(gram);
            let h = fnv1a(buf.as_bytes());
            let bucket = (h % dim as u64) as usize;
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            v[bucket] += sign;
        }
    }
    normalize(&mut v);
    v
}

/// n-gram features for each key, row `i` for `keys[i]`.
pub fn ngram_table<S: AsRef<str>>(keys: &[S], dim: usize) -> Result<FeatureTable, FeatureError> {
    if dim == 0 {
        return Err(FeatureError::ZeroDim);
    }
    let mut vectors = Tensor2::zeros(keys.len(), dim);
    for (i, k) in keys.iter().enumerate() {
        vectors.row_mut(i).copy_from_slice(&ngram_feature(k.as_ref(), dim));
    }
    Ok(FeatureTable::keyed(
        FeatureSource::Ngram,
        vectors,
        keys.iter().map(|k| k.as_ref().to_owned()).collect(),
    ))
}

/// `count` vectors drawn uniformly from `[-1/sqrt(dim), 1/sqrt(dim)]`.
pub fn init_random(count: usize, dim: usize, seed: u64) -> Result<FeatureTable, FeatureError> {
    if dim == 0 {
        return Err(FeatureError::ZeroDim);
    }
    let bound = 1.0 / (dim as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..count * dim)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    Ok(FeatureTable {
        source: FeatureSource::Random { seed },
        vectors: Tensor2::from_vec(count, dim, data).expect("sized"),
        keys: Vec::new(),
        index: HashMap::new(),
    })
}

/// One random vector per key, each drawn from an RNG seeded by `seed` and
/// the key itself, so a key's vector does not depend on its position.
pub fn init_random_keyed<S: AsRef<str>>(
    keys: &[S],
    dim: usize,
    seed: u64,
) -> Result<FeatureTable, FeatureError> {
    if dim == 0 {
        return Err(FeatureError::ZeroDim);
    }
    let bound = 1.0 / (dim as f64).sqrt();
    let mut data = Vec::with_capacity(keys.len() * dim);
    for k in keys {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(k.as_ref().as_bytes()));
        data.extend((0..dim).map(|_| rng.random_range(-bound..=bound)));
    }
    Ok(FeatureTable::keyed(
        FeatureSource::Random { seed },
        Tensor2::from_vec(keys.len(), dim, data).expect("sized"),
        keys.iter().map(|k| k.as_ref().to_owned()).collect(),
    ))
}

/// Reads an embedding file: a `#dim <D>` header, then `key<TAB>f1 ... fD`
/// rows. Vectors are kept exactly as written.
pub fn load_embeddings(path: &Path, expected_dim: Option<usize>) -> Result<FeatureTable, FeatureError> {
    let file = File::open(path).map_err(|source| FeatureError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let fmt = |line: usize, msg: String| FeatureError::Format {
        path: path.to_path_buf(),
        line,
        msg,
    };

    let mut lines = BufReader::new(file).lines().enumerate();
    let dim = loop {
        let Some((i, line)) = lines.next() else {
            return Err(fmt(1, "missing `#dim <D>` header".into()));
        };
        let line = line.map_err(|source| FeatureError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let dim = line
            .strip_prefix("#dim ")
            .and_then(|d| d.trim().parse::<usize>().ok())
            .filter(|&d| d > 0)
            .ok_or_else(|| fmt(i + 1, format!("expected `#dim <D>` header, got {line:?}")))?;
        break dim;
    };
    if let Some(expected) = expected_dim {
        if expected != dim {
            return Err(FeatureError::DimMismatch {
                path: path.to_path_buf(),
                expected,
                found: dim,
            });
        }
    }

    let mut keys = Vec::new();
    let mut seen = HashMap::new();
    let mut data = Vec::new();
    for (i, line) in lines {
        let line = line.map_err(|source| FeatureError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.is_empty() {
            continue;
        }
        let (key, rest) = line
            .split_once('\t')
            .ok_or_else(|| fmt(i + 1, "expected `key<TAB>values`".into()))?;
        if seen.insert(key.to_owned(), i + 1).is_some() {
            return Err(fmt(i + 1, format!("duplicate key {key:?}")));
        }
        let start = data.len();
        for tok in rest.split_whitespace() {
            data.push(
                tok.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| fmt(i + 1, format!("bad float {tok:?}")))?,
            );
        }
        let found = data.len() - start;
        if found != dim {
            return Err(fmt(i + 1, format!("{found} values under a dim={dim} header")));
        }
        keys.push(key.to_owned());
    }
    let vectors = Tensor2::from_vec(keys.len(), dim, data).expect("sized");
    Ok(FeatureTable::keyed(FeatureSource::File, vectors, keys))
}

/// How text features are produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Featurizer {
    Ngram { dim: usize },
    File { path: PathBuf },
}

impl Default for Featurizer {
    fn default() -> Self {
        Featurizer::Ngram { dim: DEFAULT_DIM }
    }
}

impl Featurizer {
    /// Features for `keys`, row `i` for `keys[i]`.
    pub fn featurize<S: AsRef<str>>(&self, keys: &[S]) -> Result<FeatureTable, FeatureError> {
        match self {
            Featurizer::Ngram { dim } => ngram_table(keys, *dim),
            Featurizer::File { path } => load_embeddings(path, None)?.resolve(keys),
        }
    }
}
