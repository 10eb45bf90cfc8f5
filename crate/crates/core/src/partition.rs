//! Splits a knowledge graph into four attribute-typed views that share the
//! relation triples: names, literal strings, numbers, and bare structure.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::{AttributeId, AttributeTriple, EntityId, KnowledgeGraph, RelationTriple, ValueId};

/// Attribute label used for name triples synthesized from entity labels.
pub const SYNTHETIC_NAME_ATTRIBUTE: &str = "__name__";

#[derive(Debug, Error)]
pub enum PartitionError {
    #[error("name attribute {0:?} does not occur in the graph")]
    UnknownNameAttribute(String),
    #[error("invalid name source: {0}")]
    InvalidNameSource(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ValueKind {
    Digital,
    Literal,
}

/// Kind of a subgraph, and of the channel that encodes it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelKind {
    Name,
    Literal,
    Digital,
    Structure,
}

impl ChannelKind {
    pub const ALL: [ChannelKind; 4] = [
        ChannelKind::Name,
        ChannelKind::Literal,
        ChannelKind::Digital,
        ChannelKind::Structure,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ChannelKind::Name => "name",
            ChannelKind::Literal => "literal",
            ChannelKind::Digital => "digital",
            ChannelKind::Structure => "structure",
        }
    }
}

impl fmt::Display for ChannelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ChannelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "name" => Ok(ChannelKind::Name),
            "literal" => Ok(ChannelKind::Literal),
            "digital" => Ok(ChannelKind::Digital),
            "structure" => Ok(ChannelKind::Structure),
            other => Err(format!("unknown channel {other:?}")),
        }
    }
}

/// Digital iff the trimmed string is an optionally signed decimal number:
/// digits (optionally grouped with commas in threes), an optional fraction
/// and an optional exponent.
pub fn classify_value(raw: &str) -> ValueKind {
    if is_decimal_number(raw.trim()) {
        ValueKind::Digital
    } else {
        ValueKind::Literal
    }
}

fn is_decimal_number(s: &str) -> bool {
    let b = s.as_bytes();
    let mut i = 0;
    if i < b.len() && (b[i] == b'+' || b[i] == b'-') {
        i += 1;
    }

    // Integer part, either plain digits or comma-grouped thousands.
    let int_start = i;
    while i < b.len() && b[i].is_ascii_digit() {
        i += 1;
    }
    let mut int_digits = i - int_start;
    if int_digits > 0 && i < b.len() && b[i] == b',' {
        if int_digits > 3 {
            return false;
        }
        while i < b.len() && b[i] == b',' {
            let group = &b[i + 1..];
            if group.len() < 3 || !group[..3].iter().all(u8::is_ascii_digit) {
                return false;
            }
            i += 4;
            int_digits += 3;
        }
        if i < b.len() && b[i].is_ascii_digit() {
            return false;
        }
    }

    let mut frac_digits = 0;
    if i < b.len() && b[i] == b'.' {
        i += 1;
        while i < b.len() && b[i].is_ascii_digit() {
            i += 1;
            frac_digits += 1;
        }
    }
    if int_digits + frac_digits == 0 {
        return false;
    }

    if i < b.len() && (b[i] == b'e' || b[i] == b'E') {
        i += 1;
        if i < b.len() && (b[i] == b'+' || b[i] == b'-') {
            i += 1;
        }
        let exp_start = i;
        while i < b.len() && b[i].is_ascii_digit() {
            i += 1;
        }
        if i == exp_start {
            return false;
        }
    }
    i == b.len()
}

/// Where name triples come from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "NameSourceRepr", into = "NameSourceRepr")]
pub enum NameSource {
    /// Attribute labels whose triples are treated as names.
    Attributes(Vec<String>),
    /// One name per entity, derived from the entity's own label.
    FromLabel,
}

impl Default for NameSource {
    fn default() -> Self {
        NameSource::FromLabel
    }
}

#[derive(Serialize, Deserialize)]
struct NameSourceRepr {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name_attributes: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name_from_label: Option<bool>,
}

impl TryFrom<NameSourceRepr> for NameSource {
    type Error = PartitionError;

    fn try_from(r: NameSourceRepr) -> Result<Self, Self::Error> {
        match (r.name_attributes, r.name_from_label) {
            (Some(attrs), None | Some(false)) => Ok(NameSource::Attributes(attrs)),
            (None, Some(true)) => Ok(NameSource::FromLabel),
            (Some(_), Some(true)) => Err(PartitionError::InvalidNameSource(
                "name_attributes and name_from_label are mutually exclusive".into(),
            )),
            (None, _) => Err(PartitionError::InvalidNameSource(
                "expected name_attributes or name_from_label: true".into(),
            )),
        }
    }
}

impl From<NameSource> for NameSourceRepr {
    fn from(n: NameSource) -> Self {
        match n {
            NameSource::Attributes(a) => NameSourceRepr {
                name_attributes: Some(a),
                name_from_label: None,
            },
            NameSource::FromLabel => NameSourceRepr {
                name_attributes: None,
                name_from_label: Some(true),
            },
        }
    }
}

/// Turns an entity URI into a readable name: everything up to the last `/`
/// or `#` is dropped and underscores become spaces.
pub fn name_from_label(label: &str) -> String {
    let tail = label.rsplit(['/', '#']).next().unwrap_or(label);
    tail.replace('_', " ")
}

/// One attribute-filtered view of a knowledge graph.
#[derive(Debug, Clone)]
pub struct Subgraph<'a> {
    kind: ChannelKind,
    base: &'a KnowledgeGraph,
    attribute_triples: Vec<AttributeTriple>,
    /// Name values synthesized from entity labels; value id `base.num_values() + i`.
    synthetic_values: Vec<String>,
}

impl<'a> Subgraph<'a> {
    pub fn kind(&self) -> ChannelKind {
        self.kind
    }

    pub fn base(&self) -> &'a KnowledgeGraph {
        self.base
    }

    pub fn num_entities(&self) -> usize {
        self.base.num_entities()
    }

    pub fn attribute_triples(&self) -> &[AttributeTriple] {
        &self.attribute_triples
    }

    pub fn relation_triples(&self) -> &'a [RelationTriple] {
        self.base.relation_triples()
    }

    fn synthetic_attribute(&self) -> AttributeId {
        self.base.num_attributes()
    }

    pub fn attribute_label(&self, a: AttributeId) -> &str {
        if a == self.synthetic_attribute() && !self.synthetic_values.is_empty() {
            SYNTHETIC_NAME_ATTRIBUTE
        } else {
            self.base.attribute_label(a)
        }
    }

    pub fn value_label(&self, v: ValueId) -> &str {
        let n = self.base.num_values();
        if v >= n {
            &self.synthetic_values[v - n]
        } else {
            self.base.value_label(v)
        }
    }

    /// First name per entity (Name subgraph), in triple order.
    pub fn entity_names(&self) -> Vec<Option<&str>> {
        let mut names = vec![None; self.num_entities()];
        for t in &self.attribute_triples {
            if names[t.entity].is_none() {
                names[t.entity] = Some(self.value_label(t.value));
            }
        }
        names
    }

    /// Attribute triples grouped per entity.
    pub fn triples_by_entity(&self) -> Vec<Vec<AttributeTriple>> {
        let mut out = vec![Vec::new(); self.num_entities()];
        for t in &self.attribute_triples {
            out[t.entity].push(*t);
        }
        out
    }

    pub fn entity_label(&self, e: EntityId) -> &str {
        self.base.entity_label(e)
    }
}

/// The four views of one graph.
#[derive(Debug, Clone)]
pub struct Partition<'a> {
    pub name: Subgraph<'a>,
    pub literal: Subgraph<'a>,
    pub digital: Subgraph<'a>,
    pub structure: Subgraph<'a>,
}

impl<'a> Partition<'a> {
    pub fn get(&self, kind: ChannelKind) -> &Subgraph<'a> {
        match kind {
            ChannelKind::Name => &self.name,
            ChannelKind::Literal => &self.literal,
            ChannelKind::Digital => &self.digital,
            ChannelKind::Structure => &self.structure,
        }
    }
}

pub fn partition<'a>(
    kg: &'a KnowledgeGraph,
    name_source: &NameSource,
) -> Result<Partition<'a>, PartitionError> {
    let mut name_attrs = vec![false; kg.num_attributes()];
    if let NameSource::Attributes(labels) = name_source {
        for label in labels {
            let id = kg
                .attributes()
                .get(label)
                .ok_or_else(|| PartitionError::UnknownNameAttribute(label.clone()))?;
            name_attrs[id] = true;
        }
    }

    let value_kinds: Vec<ValueKind> = kg.values().labels().iter().map(|v| classify_value(v)).collect();

    let mut name = Vec::new();
    let mut literal = Vec::new();
    let mut digital = Vec::new();
    for &t in kg.attribute_triples() {
        if name_attrs[t.attribute] {
            name.push(t);
        } else {
            match value_kinds[t.value] {
                ValueKind::Literal => literal.push(t),
                ValueKind::Digital => digital.push(t),
            }
        }
    }

    let mut synthetic_values = Vec::new();
    if *name_source == NameSource::FromLabel {
        let attribute = kg.num_attributes();
        for (e, label) in kg.entities().labels().iter().enumerate() {
            name.push(AttributeTriple {
                entity: e,
                attribute,
                value: kg.num_values() + e,
            });
            synthetic_values.push(name_from_label(label));
        }
    }

    let view = |kind, attribute_triples, synthetic_values| Subgraph {
        kind,
        base: kg,
        attribute_triples,
        synthetic_values,
    };
    Ok(Partition {
        name: view(ChannelKind::Name, name, synthetic_values),
        literal: view(ChannelKind::Literal, literal, Vec::new()),
        digital: view(ChannelKind::Digital, digital, Vec::new()),
        structure: view(ChannelKind::Structure, Vec::new(), Vec::new()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::KgBuilder;

    #[test]
    fn classify_examples() {
        assert_eq!(classify_value("154077"), ValueKind::Digital);
        assert_eq!(classify_value("1788"), ValueKind::Digital);
        assert_eq!(classify_value("GA"), ValueKind::Literal);
        assert_eq!(classify_value(""), ValueKind::Literal);
    }

    #[test]
    fn classify_grammar() {
        for s in [
            "-3", "+4.5", "0.25", ".5", "5.", "1,234", "12,345,678.9", "1e10", "-2.5E-3", " 42 ",
        ] {
            assert_eq!(classify_value(s), ValueKind::Digital, "{s:?}");
        }
        for s in [
            "1788-07-26", "154,077 km", "1,23", "1234,567", "e5", "1e", ".", "-", "+.", "12a",
            "1,2345", "abc", "--1",
        ] {
            assert_eq!(classify_value(s), ValueKind::Literal, "{s:?}");
        }
    }

    fn sample_kg() -> KnowledgeGraph {
        let mut b = KgBuilder::new();
        b.add_relation("http://x/e", "r", "http://x/f");
        b.add_attribute("http://x/e", "name", "X");
        b.add_attribute("http://x/e", "area", "150");
        b.add_attribute("http://x/e", "motto", "hello");
        b.build()
    }

    #[test]
    fn partition_by_kind() {
        let kg = sample_kg();
        let p = partition(&kg, &NameSource::Attributes(vec!["name".into()])).unwrap();
        let vals = |s: &Subgraph| {
            s.attribute_triples()
                .iter()
                .map(|t| s.value_label(t.value).to_owned())
                .collect::<Vec<_>>()
        };
        assert_eq!(vals(&p.name), ["X"]);
        assert_eq!(vals(&p.digital), ["150"]);
        assert_eq!(vals(&p.literal), ["hello"]);
        assert!(p.structure.attribute_triples().is_empty());
        for k in ChannelKind::ALL {
            assert!(std::ptr::eq(
                p.get(k).relation_triples(),
                kg.relation_triples()
            ));
        }
    }

    #[test]
    fn names_from_labels_without_attributes() {
        let mut b = KgBuilder::new();
        b.add_relation("http://dbpedia.org/resource/Georgia_(U.S._state)", "r", "http://x#Atlanta");
        let kg = b.build();
        let p = partition(&kg, &NameSource::FromLabel).unwrap();
        assert_eq!(p.name.attribute_triples().len(), 2);
        assert!(p.literal.attribute_triples().is_empty());
        assert!(p.digital.attribute_triples().is_empty());
        assert_eq!(
            p.name.entity_names(),
            [Some("Georgia (U.S. state)"), Some("Atlanta")]
        );
        let t = p.name.attribute_triples()[0];
        assert_eq!(p.name.attribute_label(t.attribute), SYNTHETIC_NAME_ATTRIBUTE);
    }

    #[test]
    fn all_numeric_leaves_literal_empty() {
        let mut b = KgBuilder::new();
        b.add_attribute("e", "a", "1");
        b.add_attribute("e", "b", "2.5");
        let kg = b.build();
        let p = partition(&kg, &NameSource::FromLabel).unwrap();
        assert!(p.literal.attribute_triples().is_empty());
        assert_eq!(p.digital.attribute_triples().len(), 2);
    }

    #[test]
    fn unknown_name_attribute_is_config_error() {
        let kg = sample_kg();
        assert!(matches!(
            partition(&kg, &NameSource::Attributes(vec!["label".into()])),
            Err(PartitionError::UnknownNameAttribute(_))
        ));
    }

    #[test]
    fn name_source_json() {
        let n: NameSource = serde_json::from_str(r#"{"name_attributes": ["a", "b"]}"#).unwrap();
        assert_eq!(n, NameSource::Attributes(vec!["a".into(), "b".into()]));
        let n: NameSource = serde_json::from_str(r#"{"name_from_label": true}"#).unwrap();
        assert_eq!(n, NameSource::FromLabel);
        assert!(serde_json::from_str::<NameSource>("{}").is_err());
        assert_eq!(
            serde_json::to_string(&NameSource::FromLabel).unwrap(),
            r#"{"name_from_label":true}"#
        );
    }
}
