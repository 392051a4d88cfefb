//! Typed provenance graph vocabulary.
//!
//! A fixed subset of the W3C PROV data model: three node kinds, seven edge
//! kinds, flat attribute maps, and a canonical byte encoding that the store's
//! hash chain is computed over.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Logical simulation tick.
pub type Tick = u64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("invalid identifier {0:?}: parts must be non-empty and free of ':' and whitespace")]
    InvalidIdentifier(String),
    #[error("{edge} expects {expected_source:?} -> {expected_target:?}, got {source_kind:?} -> {target_kind:?}")]
    KindConstraintViolation {
        edge: EdgeKind,
        expected_source: NodeKind,
        expected_target: NodeKind,
        source_kind: NodeKind,
        target_kind: NodeKind,
    },
    #[error("reserved attribute {key:?} on {id}: {reason}")]
    ReservedAttribute {
        id: String,
        key: String,
        reason: String,
    },
}

fn valid_part(s: &str) -> bool {
    !s.is_empty() && !s.chars().any(|c| c == ':' || c.is_whitespace())
}

/// A domain-qualified identifier, rendered as `domain:local`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct QualifiedId {
    domain: String,
    local: String,
}

impl QualifiedId {
    pub fn new(domain: &str, local: &str) -> Result<Self, ModelError> {
        if !valid_part(domain) {
            return Err(ModelError::InvalidIdentifier(domain.to_string()));
        }
        if !valid_part(local) {
            return Err(ModelError::InvalidIdentifier(local.to_string()));
        }
        Ok(Self {
            domain: domain.to_string(),
            local: local.to_string(),
        })
    }

    pub fn domain(&self) -> &str {
        &self.domain
    }

    pub fn local(&self) -> &str {
        &self.local
    }
}

/// Builds a qualified id from its two parts.
pub fn mint_id(domain: &str, local: &str) -> Result<QualifiedId, ModelError> {
    QualifiedId::new(domain, local)
}

/// Checks that `domain` could be the domain half of a qualified id.
pub fn validate_domain(domain: &str) -> Result<(), ModelError> {
    if valid_part(domain) {
        Ok(())
    } else {
        Err(ModelError::InvalidIdentifier(domain.to_string()))
    }
}

impl fmt::Display for QualifiedId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.domain, self.local)
    }
}

impl FromStr for QualifiedId {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            Some((domain, local)) => Self::new(domain, local),
            None => Err(ModelError::InvalidIdentifier(s.to_string())),
        }
    }
}

impl Serialize for QualifiedId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for QualifiedId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeKind {
    Entity,
    Activity,
    Agent,
}

impl NodeKind {
    pub const ALL: [NodeKind; 3] = [NodeKind::Entity, NodeKind::Activity, NodeKind::Agent];

    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::Entity => "Entity",
            NodeKind::Activity => "Activity",
            NodeKind::Agent => "Agent",
        }
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum EdgeKind {
    Used,
    WasGeneratedBy,
    WasDerivedFrom,
    WasAssociatedWith,
    ActedOnBehalfOf,
    WasAttributedTo,
    WasInformedBy,
}

impl EdgeKind {
    pub const ALL: [EdgeKind; 7] = [
        EdgeKind::Used,
        EdgeKind::WasGeneratedBy,
        EdgeKind::WasDerivedFrom,
        EdgeKind::WasAssociatedWith,
        EdgeKind::ActedOnBehalfOf,
        EdgeKind::WasAttributedTo,
        EdgeKind::WasInformedBy,
    ];

    /// The (source, target) node kinds this relation connects.
    pub fn endpoints(self) -> (NodeKind, NodeKind) {
        use NodeKind::*;
        match self {
            EdgeKind::Used => (Activity, Entity),
            EdgeKind::WasGeneratedBy => (Entity, Activity),
            EdgeKind::WasDerivedFrom => (Entity, Entity),
            EdgeKind::WasAssociatedWith => (Activity, Agent),
            EdgeKind::ActedOnBehalfOf => (Agent, Agent),
            EdgeKind::WasAttributedTo => (Entity, Agent),
            EdgeKind::WasInformedBy => (Activity, Activity),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EdgeKind::Used => "used",
            EdgeKind::WasGeneratedBy => "wasGeneratedBy",
            EdgeKind::WasDerivedFrom => "wasDerivedFrom",
            EdgeKind::WasAssociatedWith => "wasAssociatedWith",
            EdgeKind::ActedOnBehalfOf => "actedOnBehalfOf",
            EdgeKind::WasAttributedTo => "wasAttributedTo",
            EdgeKind::WasInformedBy => "wasInformedBy",
        }
    }
}

impl fmt::Display for EdgeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Attribute values. The tagged JSON form keeps integers and timestamps
/// distinguishable in the canonical encoding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum AttrValue {
    Str(String),
    Bool(bool),
    Int(i64),
    Time(Tick),
    Set(BTreeSet<String>),
}

impl AttrValue {
    pub fn type_name(&self) -> &'static str {
        match self {
            AttrValue::Str(_) => "string",
            AttrValue::Bool(_) => "boolean",
            AttrValue::Int(_) => "integer",
            AttrValue::Time(_) => "timestamp",
            AttrValue::Set(_) => "string-set",
        }
    }

    pub fn set<I, S>(items: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        AttrValue::Set(items.into_iter().map(Into::into).collect())
    }

    /// Plain JSON rendering used in reports (untagged).
    pub fn to_plain_json(&self) -> serde_json::Value {
        match self {
            AttrValue::Str(s) => serde_json::Value::from(s.as_str()),
            AttrValue::Bool(b) => serde_json::Value::from(*b),
            AttrValue::Int(i) => serde_json::Value::from(*i),
            AttrValue::Time(t) => serde_json::Value::from(*t),
            AttrValue::Set(s) => serde_json::Value::from(s.iter().cloned().collect::<Vec<_>>()),
        }
    }
}

impl fmt::Display for AttrValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttrValue::Str(s) => f.write_str(s),
            AttrValue::Bool(b) => write!(f, "{b}"),
            AttrValue::Int(i) => write!(f, "{i}"),
            AttrValue::Time(t) => write!(f, "@{t}"),
            AttrValue::Set(s) => {
                f.write_str("{")?;
                for (i, item) in s.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    f.write_str(item)?;
                }
                f.write_str("}")
            }
        }
    }
}

impl From<&str> for AttrValue {
    fn from(s: &str) -> Self {
        AttrValue::Str(s.to_string())
    }
}

impl From<String> for AttrValue {
    fn from(s: String) -> Self {
        AttrValue::Str(s)
    }
}

impl From<bool> for AttrValue {
    fn from(b: bool) -> Self {
        AttrValue::Bool(b)
    }
}

impl From<i64> for AttrValue {
    fn from(i: i64) -> Self {
        AttrValue::Int(i)
    }
}

/// Attribute map. Keys iterate in byte-wise ascending order.
pub type Attributes = BTreeMap<String, AttrValue>;

/// Reserved attribute keys with fixed meaning and type.
pub mod keys {
    pub const PERSONAL_DATA: &str = "personal_data";
    pub const DATA_SUBJECT: &str = "data_subject";
    pub const PURPOSE: &str = "purpose";
    pub const CONSENTED_PURPOSES: &str = "consented_purposes";
    pub const EXPIRY: &str = "expiry";
    pub const AUTOMATED_DECISION: &str = "automated_decision";
    pub const ACCEPTED_SOURCES: &str = "accepted_sources";
    pub const ALIAS_OF: &str = "alias_of";
    pub const FAULTY: &str = "faulty";

    /// Keys copied from a source entity onto its cross-domain alias.
    pub const ALIAS_COPIED: [&str; 5] = [PURPOSE, CONSENTED_PURPOSES, DATA_SUBJECT, PERSONAL_DATA, EXPIRY];
}

/// The declared type of a reserved key, or `None` for free-form keys.
pub fn reserved_type(key: &str) -> Option<&'static str> {
    Some(match key {
        keys::PERSONAL_DATA | keys::AUTOMATED_DECISION | keys::FAULTY => "boolean",
        keys::DATA_SUBJECT | keys::ALIAS_OF => "string",
        keys::PURPOSE | keys::CONSENTED_PURPOSES | keys::ACCEPTED_SOURCES => "string-set",
        keys::EXPIRY => "timestamp",
        _ => return None,
    })
}

/// Converts a plain JSON value into an attribute value, honouring the
/// declared type of reserved keys (so `"expiry": 10` becomes a timestamp).
pub fn attr_from_plain_json(key: &str, value: &serde_json::Value) -> Option<AttrValue> {
    use serde_json::Value;
    let declared = reserved_type(key);
    match value {
        Value::String(s) => Some(AttrValue::Str(s.clone())),
        Value::Bool(b) => Some(AttrValue::Bool(*b)),
        Value::Number(n) => match declared {
            Some("timestamp") => n.as_u64().map(AttrValue::Time),
            _ => n.as_i64().map(AttrValue::Int),
        },
        Value::Array(items) => items
            .iter()
            .map(|v| v.as_str().map(str::to_string))
            .collect::<Option<BTreeSet<_>>>()
            .map(AttrValue::Set),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProvNode {
    pub id: QualifiedId,
    pub kind: NodeKind,
    pub node_type: String,
    pub attributes: Attributes,
    pub created_at: Tick,
}

impl ProvNode {
    pub fn new(id: QualifiedId, kind: NodeKind, node_type: impl Into<String>, created_at: Tick) -> Self {
        Self {
            id,
            kind,
            node_type: node_type.into(),
            attributes: Attributes::new(),
            created_at,
        }
    }

    pub fn with_attr(mut self, key: impl Into<String>, value: impl Into<AttrValue>) -> Self {
        self.attributes.insert(key.into(), value.into());
        self
    }

    pub fn with_attrs(mut self, attrs: Attributes) -> Self {
        self.attributes.extend(attrs);
        self
    }

    pub fn attr(&self, key: &str) -> Option<&AttrValue> {
        self.attributes.get(key)
    }

    pub fn bool_attr(&self, key: &str) -> Option<bool> {
        match self.attr(key) {
            Some(AttrValue::Bool(b)) => Some(*b),
            _ => None,
        }
    }

    pub fn str_attr(&self, key: &str) -> Option<&str> {
        match self.attr(key) {
            Some(AttrValue::Str(s)) => Some(s),
            _ => None,
        }
    }

    pub fn set_attr(&self, key: &str) -> Option<&BTreeSet<String>> {
        match self.attr(key) {
            Some(AttrValue::Set(s)) => Some(s),
            _ => None,
        }
    }

    pub fn time_attr(&self, key: &str) -> Option<Tick> {
        match self.attr(key) {
            Some(AttrValue::Time(t)) => Some(*t),
            _ => None,
        }
    }

    /// The foreign entity this node is a received copy of, if any.
    pub fn alias_of(&self) -> Option<QualifiedId> {
        self.str_attr(keys::ALIAS_OF).and_then(|s| s.parse().ok())
    }

    /// Checks reserved-key typing and placement rules.
    pub fn validate(&self) -> Result<(), ModelError> {
        for (key, value) in &self.attributes {
            let Some(expected) = reserved_type(key) else {
                continue;
            };
            let fail = |reason: String| ModelError::ReservedAttribute {
                id: self.id.to_string(),
                key: key.clone(),
                reason,
            };
            if value.type_name() != expected {
                return Err(fail(format!("expected {expected}, found {}", value.type_name())));
            }
            match key.as_str() {
                keys::AUTOMATED_DECISION if self.kind != NodeKind::Activity => {
                    return Err(fail("only valid on Activities".into()));
                }
                keys::ACCEPTED_SOURCES if self.kind != NodeKind::Entity => {
                    return Err(fail("only valid on Entities".into()));
                }
                keys::ALIAS_OF => {
                    let AttrValue::Str(text) = value else { unreachable!() };
                    let target: QualifiedId = text.parse().map_err(|e: ModelError| fail(e.to_string()))?;
                    if target.domain() == self.id.domain() {
                        return Err(fail("must reference a different domain".into()));
                    }
                    if self.kind != NodeKind::Entity {
                        return Err(fail("only valid on Entities".into()));
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProvEdge {
    pub source: QualifiedId,
    pub target: QualifiedId,
    pub kind: EdgeKind,
    pub attributes: Attributes,
}

impl ProvEdge {
    pub fn new(source: QualifiedId, target: QualifiedId, kind: EdgeKind) -> Self {
        Self {
            source,
            target,
            kind,
            attributes: Attributes::new(),
        }
    }

    pub fn with_attr(mut self, key: impl Into<String>, value: impl Into<AttrValue>) -> Self {
        self.attributes.insert(key.into(), value.into());
        self
    }
}

/// Accepts the edge iff its endpoint kinds match the relation's constraint.
pub fn validate_edge(edge: &ProvEdge, source_kind: NodeKind, target_kind: NodeKind) -> Result<(), ModelError> {
    check_endpoints(edge.kind, source_kind, target_kind)
}

pub fn check_endpoints(kind: EdgeKind, source_kind: NodeKind, target_kind: NodeKind) -> Result<(), ModelError> {
    let (expected_source, expected_target) = kind.endpoints();
    if (source_kind, target_kind) == (expected_source, expected_target) {
        Ok(())
    } else {
        Err(ModelError::KindConstraintViolation {
            edge: kind,
            expected_source,
            expected_target,
            source_kind,
            target_kind,
        })
    }
}

/// A log record: either a node or an edge.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Record {
    Node(ProvNode),
    Edge(ProvEdge),
}

impl Record {
    pub fn as_node(&self) -> Option<&ProvNode> {
        match self {
            Record::Node(n) => Some(n),
            Record::Edge(_) => None,
        }
    }

    pub fn as_edge(&self) -> Option<&ProvEdge> {
        match self {
            Record::Edge(e) => Some(e),
            Record::Node(_) => None,
        }
    }

    /// Short human-readable description, used in alert payloads.
    pub fn summary(&self) -> String {
        match self {
            Record::Node(n) => format!("{} {} ({})", n.kind, n.id, n.node_type),
            Record::Edge(e) => format!("{} {} {}", e.source, e.kind, e.target),
        }
    }
}

impl From<ProvNode> for Record {
    fn from(n: ProvNode) -> Self {
        Record::Node(n)
    }
}

impl From<ProvEdge> for Record {
    fn from(e: ProvEdge) -> Self {
        Record::Edge(e)
    }
}

// Wire mirrors. Field declaration order is the canonical field order.

#[derive(Serialize, Deserialize)]
#[serde(tag = "rectype", rename_all = "lowercase")]
enum WireRecord {
    Node {
        id: QualifiedId,
        kind: NodeKind,
        node_type: String,
        created_at: Tick,
        attributes: Attributes,
    },
    Edge {
        source: QualifiedId,
        target: QualifiedId,
        kind: EdgeKind,
        attributes: Attributes,
    },
}

#[derive(Serialize)]
#[serde(tag = "rectype", rename_all = "lowercase")]
enum WireRef<'a> {
    Node {
        id: &'a QualifiedId,
        kind: NodeKind,
        node_type: &'a str,
        created_at: Tick,
        attributes: &'a Attributes,
    },
    Edge {
        source: &'a QualifiedId,
        target: &'a QualifiedId,
        kind: EdgeKind,
        attributes: &'a Attributes,
    },
}

impl Serialize for Record {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let wire = match self {
            Record::Node(n) => WireRef::Node {
                id: &n.id,
                kind: n.kind,
                node_type: &n.node_type,
                created_at: n.created_at,
                attributes: &n.attributes,
            },
            Record::Edge(e) => WireRef::Edge {
                source: &e.source,
                target: &e.target,
                kind: e.kind,
                attributes: &e.attributes,
            },
        };
        wire.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Record {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        Ok(match WireRecord::deserialize(deserializer)? {
            WireRecord::Node {
                id,
                kind,
                node_type,
                created_at,
                attributes,
            } => Record::Node(ProvNode {
                id,
                kind,
                node_type,
                attributes,
                created_at,
            }),
            WireRecord::Edge {
                source,
                target,
                kind,
                attributes,
            } => Record::Edge(ProvEdge {
                source,
                target,
                kind,
                attributes,
            }),
        })
    }
}

/// Deterministic byte encoding of a record: compact JSON, fixed field order,
/// attributes and string-sets sorted byte-wise, UTF-8 text.
pub fn canonical_serialize(record: &Record) -> Vec<u8> {
    serde_json::to_vec(record).expect("records always serialize")
}
