//! Knowledge graph data model and TSV ingestion.
//!
//! A [`KnowledgeGraph`] interns every surface string (entity URI, relation,
//! attribute, literal value) into a dense id space assigned in first-appearance
//! order, so loading the same files twice always yields the same ids.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

pub type EntityId = usize;
pub type RelationId = usize;
pub type AttributeId = usize;
pub type ValueId = usize;

#[derive(Debug, Error)]
pub enum KgError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}: {msg}")]
    Parse {
        file: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("{file}:{line}: unknown entity label {label:?}")]
    UnknownLabel {
        file: PathBuf,
        line: usize,
        label: String,
    },
    #[error("{file}:{line}: entity {label:?} already aligned (alignment must be 1-to-1)")]
    DuplicateAlignment {
        file: PathBuf,
        line: usize,
        label: String,
    },
    #[error("alignment pair ({0}, {1}) references an entity outside its graph")]
    PairOutOfRange(EntityId, EntityId),
    #[error("entity {0} used twice in alignment")]
    DuplicatePair(EntityId),
    #[error("unknown entity id {0}")]
    UnknownEntity(EntityId),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> KgError + '_ {
    move |source| KgError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Bidirectional string <-> dense id table.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Interner {
    labels: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Interner {
    pub fn intern(&mut self, label: &str) -> usize {
        if let Some(&id) = self.ids.get(label) {
            return id;
        }
        let id = self.labels.len();
        self.labels.push(label.to_owned());
        self.ids.insert(label.to_owned(), id);
        id
    }

    pub fn get(&self, label: &str) -> Option<usize> {
        self.ids.get(label).copied()
    }

    pub fn label(&self, id: usize) -> Option<&str> {
        self.labels.get(id).map(String::as_str)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RelationTriple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AttributeTriple {
    pub entity: EntityId,
    pub attribute: AttributeId,
    pub value: ValueId,
}

/// An immutable knowledge graph: entities, relations, attributes and values
/// plus the relation and attribute triples over them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnowledgeGraph {
    entities: Interner,
    relations: Interner,
    attributes: Interner,
    values: Interner,
    relation_triples: Vec<RelationTriple>,
    attribute_triples: Vec<AttributeTriple>,
    adjacency: Vec<Vec<EntityId>>,
}

impl KnowledgeGraph {
    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn num_attributes(&self) -> usize {
        self.attributes.len()
    }

    pub fn num_values(&self) -> usize {
        self.values.len()
    }

    pub fn entities(&self) -> &Interner {
        &self.entities
    }

    pub fn relations(&self) -> &Interner {
        &self.relations
    }

    pub fn attributes(&self) -> &Interner {
        &self.attributes
    }

    pub fn values(&self) -> &Interner {
        &self.values
    }

    pub fn relation_triples(&self) -> &[RelationTriple] {
        &self.relation_triples
    }

    pub fn attribute_triples(&self) -> &[AttributeTriple] {
        &self.attribute_triples
    }

    pub fn entity_label(&self, e: EntityId) -> &str {
        &self.entities.labels()[e]
    }

    pub fn attribute_label(&self, a: AttributeId) -> &str {
        &self.attributes.labels()[a]
    }

    pub fn value_label(&self, v: ValueId) -> &str {
        &self.values.labels()[v]
    }

    pub fn entity_id(&self, label: &str) -> Option<EntityId> {
        self.entities.get(label)
    }

    /// Undirected relation neighbours of `e`, sorted and without duplicates.
    pub fn neighbors(&self, e: EntityId) -> Result<&[EntityId], KgError> {
        self.adjacency
            .get(e)
            .map(Vec::as_slice)
            .ok_or(KgError::UnknownEntity(e))
    }

    /// Writes the relation triples back out in the TSV ingestion format.
    pub fn write_relation_triples<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for t in &self.relation_triples {
            writeln!(
                w,
                "{}\t{}\t{}",
                self.entity_label(t.head),
                self.relations.labels()[t.relation],
                self.entity_label(t.tail)
            )?;
        }
        Ok(())
    }

    pub fn write_attribute_triples<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for t in &self.attribute_triples {
            writeln!(
                w,
                "{}\t{}\t{}",
                self.entity_label(t.entity),
                self.attribute_label(t.attribute),
                self.value_label(t.value)
            )?;
        }
        Ok(())
    }

    pub fn save(&self, relation_path: &Path, attribute_path: &Path) -> Result<(), KgError> {
        let f = File::create(relation_path).map_err(io_err(relation_path))?;
        let mut w = BufWriter::new(f);
        self.write_relation_triples(&mut w)
            .and_then(|_| w.flush())
            .map_err(io_err(relation_path))?;
        let f = File::create(attribute_path).map_err(io_err(attribute_path))?;
        let mut w = BufWriter::new(f);
        self.write_attribute_triples(&mut w)
            .and_then(|_| w.flush())
            .map_err(io_err(attribute_path))?;
        Ok(())
    }
}

/// Incrementally assembles a [`KnowledgeGraph`] from labelled triples,
/// interning labels and collapsing duplicate triples.
#[derive(Debug, Default)]
pub struct KgBuilder {
    entities: Interner,
    relations: Interner,
    attributes: Interner,
    values: Interner,
    relation_triples: Vec<RelationTriple>,
    attribute_triples: Vec<AttributeTriple>,
    seen_rel: std::collections::HashSet<RelationTriple>,
    seen_attr: std::collections::HashSet<AttributeTriple>,
}

impl KgBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_entity(&mut self, label: &str) -> EntityId {
        self.entities.intern(label)
    }

    pub fn add_relation(&mut self, head: &str, relation: &str, tail: &str) {
        let t = RelationTriple {
            head: self.entities.intern(head),
            relation: self.relations.intern(relation),
            tail: self.entities.intern(tail),
        };
        if self.seen_rel.insert(t) {
            self.relation_triples.push(t);
        }
    }

    pub fn add_attribute(&mut self, entity: &str, attribute: &str, value: &str) {
        let t = AttributeTriple {
            entity: self.entities.intern(entity),
            attribute: self.attributes.intern(attribute),
            value: self.values.intern(value),
        };
        if self.seen_attr.insert(t) {
            self.attribute_triples.push(t);
        }
    }

    pub fn build(self) -> KnowledgeGraph {
        let mut adjacency = vec![Vec::new(); self.entities.len()];
        for t in &self.relation_triples {
            adjacency[t.head].push(t.tail);
            if t.head != t.tail {
                adjacency[t.tail].push(t.head);
            }
        }
        for list in &mut adjacency {
            list.sort_unstable();
            list.dedup();
        }
        KnowledgeGraph {
            entities: self.entities,
            relations: self.relations,
            attributes: self.attributes,
            values: self.values,
            relation_triples: self.relation_triples,
            attribute_triples: self.attribute_triples,
            adjacency,
        }
    }
}

/// Iterates the data lines of a TSV file as `(line_number, fields)`,
/// skipping blank lines and `#` comments.
fn for_each_record(
    path: &Path,
    arity: usize,
    mut f: impl FnMut(usize, &[&str]) -> Result<(), KgError>,
) -> Result<(), KgError> {
    let file = File::open(path).map_err(io_err(path))?;
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != arity {
            return Err(KgError::Parse {
                file: path.to_path_buf(),
                line: idx + 1,
                msg: format!(
                    "expected {arity} tab-separated fields, found {}",
                    fields.len()
                ),
            });
        }
        f(idx + 1, &fields)?;
    }
    Ok(())
}

/// Loads a knowledge graph from a relation-triple file and an attribute-triple file.
pub fn load_kg(relation_path: &Path, attribute_path: &Path) -> Result<KnowledgeGraph, KgError> {
    let mut b = KgBuilder::new();
    for_each_record(relation_path, 3, |line, f| {
        if let Some(pos) = f.iter().position(|s| s.is_empty()) {
            let which = ["head", "relation", "tail"][pos];
            return Err(KgError::Parse {
                file: relation_path.to_path_buf(),
                line,
                msg: format!("empty {which} field"),
            });
        }
        b.add_relation(f[0], f[1], f[2]);
        Ok(())
    })?;
    for_each_record(attribute_path, 3, |line, f| {
        if f[0].is_empty() || f[1].is_empty() {
            let which = if f[0].is_empty() { "entity" } else { "attribute" };
            return Err(KgError::Parse {
                file: attribute_path.to_path_buf(),
                line,
                msg: format!("empty {which} field"),
            });
        }
        b.add_attribute(f[0], f[1], f[2]);
        Ok(())
    })?;
    Ok(b.build())
}

/// A 1-to-1 set of aligned entity pairs `(kg1 entity, kg2 entity)`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AlignmentSet {
    pairs: Vec<(EntityId, EntityId)>,
}

impl AlignmentSet {
    /// Builds a set after checking the 1-to-1 and range invariants.
    pub fn new(
        pairs: Vec<(EntityId, EntityId)>,
        n_left: usize,
        n_right: usize,
    ) -> Result<Self, KgError> {
        let mut left = vec![false; n_left];
        let mut right = vec![false; n_right];
        for &(a, b) in &pairs {
            if a >= n_left || b >= n_right {
                return Err(KgError::PairOutOfRange(a, b));
            }
            if std::mem::replace(&mut left[a], true) {
                return Err(KgError::DuplicatePair(a));
            }
            if std::mem::replace(&mut right[b], true) {
                return Err(KgError::DuplicatePair(b));
            }
        }
        Ok(Self { pairs })
    }

    pub fn pairs(&self) -> &[(EntityId, EntityId)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// The pairs at `indices`, in that order. Panics on an out-of-range
    /// index; repeated indices are dropped.
    pub fn subset(&self, indices: &[usize]) -> AlignmentSet {
        let mut seen = vec![false; self.pairs.len()];
        let pairs = indices
            .iter()
            .filter(|&&i| !std::mem::replace(&mut seen[i], true))
            .map(|&i| self.pairs[i])
            .collect();
        AlignmentSet { pairs }
    }

    pub fn lefts(&self) -> Vec<EntityId> {
        self.pairs.iter().map(|p| p.0).collect()
    }

    pub fn rights(&self) -> Vec<EntityId> {
        self.pairs.iter().map(|p| p.1).collect()
    }

    pub fn save(
        &self,
        path: &Path,
        kg1: &KnowledgeGraph,
        kg2: &KnowledgeGraph,
    ) -> Result<(), KgError> {
        let f = File::create(path).map_err(io_err(path))?;
        let mut w = BufWriter::new(f);
        (|| {
            for &(a, b) in &self.pairs {
                writeln!(w, "{}\t{}", kg1.entity_label(a), kg2.entity_label(b))?;
            }
            w.flush()
        })()
        .map_err(io_err(path))
    }
}

/// Loads an `entity1<TAB>entity2` alignment file, resolving labels against both graphs.
pub fn load_alignment(
    path: &Path,
    kg1: &KnowledgeGraph,
    kg2: &KnowledgeGraph,
) -> Result<AlignmentSet, KgError> {
    let mut pairs = Vec::new();
    let mut left = vec![false; kg1.num_entities()];
    let mut right = vec![false; kg2.num_entities()];
    for_each_record(path, 2, |line, f| {
        let resolve = |kg: &KnowledgeGraph, label: &str| {
            kg.entity_id(label).ok_or_else(|| KgError::UnknownLabel {
                file: path.to_path_buf(),
                line,
                label: label.to_owned(),
            })
        };
        let a = resolve(kg1, f[0])?;
        let b = resolve(kg2, f[1])?;
        for (seen, id, label) in [(&mut left, a, f[0]), (&mut right, b, f[1])] {
            if std::mem::replace(&mut seen[id], true) {
                return Err(KgError::DuplicateAlignment {
                    file: path.to_path_buf(),
                    line,
                    label: label.to_owned(),
                });
            }
        }
        pairs.push((a, b));
        Ok(())
    })?;
    Ok(AlignmentSet { pairs })
}
