//! Accountability queries over a federation.
//!
//! Backward lineage walks every recorded relation from its source to its
//! target, plus the `alias_of` hop from a received copy to the original.
//! Forward impact walks the same relations in reverse, so for any two nodes
//! `b ∈ lineage(a)` exactly when `a ∈ impact(b)`. Traversal always sees the
//! whole graph; visibility only decides how each returned node is rendered.

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{keys, Attributes, EdgeKind, NodeKind, ProvNode, QualifiedId, Record, Tick};
use crate::store::{Federation, Resolution, REGULATOR};

/// Depth sentinel meaning "no limit".
pub const UNBOUNDED: usize = usize::MAX;
pub const DEFAULT_DEPTH: usize = 64;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum QueryError {
    #[error("unknown root {0}")]
    UnknownRoot(QualifiedId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Backward,
    Forward,
}

/// A traversed relation: a recorded edge, or the alias link of a received copy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Relation {
    Edge(EdgeKind),
    AliasOf,
}

impl Relation {
    pub fn as_str(self) -> &'static str {
        match self {
            Relation::Edge(k) => k.as_str(),
            Relation::AliasOf => keys::ALIAS_OF,
        }
    }
}

impl Serialize for Relation {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

/// An edge in a pipeline, in its recorded orientation (alias → original for
/// alias links).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct PipelineEdge {
    pub source: QualifiedId,
    pub target: QualifiedId,
    pub relation: Relation,
}

/// How a node is shown to the requester. Serializes as a `view` tag plus
/// either the full node record or the redacted kind.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NodeView {
    Full(ProvNode),
    Redacted(NodeKind),
    Unresolvable,
}

impl Serialize for NodeView {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut map = s.serialize_map(None)?;
        match self {
            NodeView::Full(node) => {
                map.serialize_entry("view", "full")?;
                map.serialize_entry("record", &Record::Node(node.clone()))?;
            }
            NodeView::Redacted(kind) => {
                map.serialize_entry("view", "redacted")?;
                map.serialize_entry("kind", kind)?;
            }
            NodeView::Unresolvable => map.serialize_entry("view", "unresolvable")?,
        }
        map.end()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PipelineNode {
    pub id: QualifiedId,
    pub depth: usize,
    #[serde(flatten)]
    pub view: NodeView,
}

impl PipelineNode {
    pub fn kind(&self) -> Option<NodeKind> {
        match &self.view {
            NodeView::Full(n) => Some(n.kind),
            NodeView::Redacted(k) => Some(*k),
            NodeView::Unresolvable => None,
        }
    }

    pub fn node_type(&self) -> Option<&str> {
        match &self.view {
            NodeView::Full(n) => Some(&n.node_type),
            _ => None,
        }
    }

    pub fn is_redacted(&self) -> bool {
        matches!(self.view, NodeView::Redacted(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AgentEntry {
    pub id: QualifiedId,
    pub domain: String,
    pub depth: usize,
    pub node_type: String,
    #[serde(serialize_with = "plain_attributes")]
    pub attributes: Attributes,
}

pub(crate) fn plain_attributes<S: serde::Serializer>(attrs: &Attributes, s: S) -> Result<S::Ok, S::Error> {
    use serde::ser::SerializeMap;
    let mut map = s.serialize_map(Some(attrs.len()))?;
    for (k, v) in attrs {
        map.serialize_entry(k, &v.to_plain_json())?;
    }
    map.end()
}

/// The subgraph answering a lineage or impact query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DecisionPipeline {
    pub root: QualifiedId,
    pub direction: Direction,
    pub requesting_domain: String,
    /// Sorted by depth, then id text.
    pub nodes: Vec<PipelineNode>,
    /// Sorted by source, target, relation.
    pub edges: Vec<PipelineEdge>,
    /// Agent nodes by ascending depth, ties by id text.
    pub agents: Vec<AgentEntry>,
    pub truncated: bool,
}

impl DecisionPipeline {
    pub fn node_ids(&self) -> BTreeSet<QualifiedId> {
        self.nodes.iter().map(|n| n.id.clone()).collect()
    }

    pub fn get(&self, id: &QualifiedId) -> Option<&PipelineNode> {
        self.nodes.iter().find(|n| &n.id == id)
    }

    pub fn domains(&self) -> BTreeSet<&str> {
        self.nodes.iter().map(|n| n.id.domain()).collect()
    }
}

/// Neighbours of `id` one hop away in the given direction, with the edge
/// connecting them.
pub fn neighbors(federation: &Federation, id: &QualifiedId, direction: Direction) -> Vec<(QualifiedId, PipelineEdge)> {
    let mut out = Vec::new();
    match direction {
        Direction::Backward => {
            for e in federation.out_edges(id) {
                out.push((
                    e.target.clone(),
                    PipelineEdge {
                        source: id.clone(),
                        target: e.target.clone(),
                        relation: Relation::Edge(e.kind),
                    },
                ));
            }
            if let Some(original) = federation.node(id).and_then(ProvNode::alias_of) {
                out.push((
                    original.clone(),
                    PipelineEdge {
                        source: id.clone(),
                        target: original,
                        relation: Relation::AliasOf,
                    },
                ));
            }
        }
        Direction::Forward => {
            for e in federation.in_edges(id) {
                out.push((
                    e.source.clone(),
                    PipelineEdge {
                        source: e.source.clone(),
                        target: id.clone(),
                        relation: Relation::Edge(e.kind),
                    },
                ));
            }
            for alias in federation.aliases_of(id) {
                out.push((
                    alias.id.clone(),
                    PipelineEdge {
                        source: alias.id.clone(),
                        target: id.clone(),
                        relation: Relation::AliasOf,
                    },
                ));
            }
        }
    }
    out
}

/// Breadth-first traversal from `root`, recording each reached node's
/// shortest-path depth.
pub fn traverse(
    federation: &Federation,
    root: &QualifiedId,
    direction: Direction,
    max_depth: usize,
    requesting_domain: &str,
) -> Result<DecisionPipeline, QueryError> {
    if federation.node(root).is_none() {
        return Err(QueryError::UnknownRoot(root.clone()));
    }
    let mut depth_of: HashMap<QualifiedId, usize> = HashMap::new();
    let mut order = vec![root.clone()];
    let mut queue = VecDeque::new();
    let mut edges = HashSet::new();
    let mut truncated = false;
    depth_of.insert(root.clone(), 0);
    queue.push_back((root.clone(), 0usize));

    while let Some((id, depth)) = queue.pop_front() {
        let next = neighbors(federation, &id, direction);
        if depth >= max_depth {
            truncated |= !next.is_empty();
            continue;
        }
        for (n, edge) in next {
            edges.insert(edge);
            if !depth_of.contains_key(&n) {
                depth_of.insert(n.clone(), depth + 1);
                order.push(n.clone());
                queue.push_back((n, depth + 1));
            }
        }
    }

    let mut nodes: Vec<PipelineNode> = order
        .into_iter()
        .map(|id| {
            let depth = depth_of[&id];
            let view = match federation.resolve(&id, requesting_domain) {
                Resolution::Full(n) => NodeView::Full(n.clone()),
                Resolution::Redacted { kind, .. } => NodeView::Redacted(kind),
                Resolution::Unresolvable(_) => NodeView::Unresolvable,
            };
            PipelineNode { id, depth, view }
        })
        .collect();
    truncated |= nodes.iter().any(|n| n.view == NodeView::Unresolvable);
    nodes.sort_by_cached_key(|n| (n.depth, n.id.to_string()));

    let mut edges: Vec<PipelineEdge> = edges.into_iter().collect();
    edges.sort();

    let agents = nodes
        .iter()
        .filter_map(|n| match &n.view {
            NodeView::Full(node) if node.kind == NodeKind::Agent => Some(AgentEntry {
                id: n.id.clone(),
                domain: n.id.domain().to_string(),
                depth: n.depth,
                node_type: node.node_type.clone(),
                attributes: node.attributes.clone(),
            }),
            _ => None,
        })
        .collect();

    Ok(DecisionPipeline {
        root: root.clone(),
        direction,
        requesting_domain: requesting_domain.to_string(),
        nodes,
        edges,
        agents,
        truncated,
    })
}

/// The decision pipeline leading up to `root`.
pub fn lineage(
    federation: &Federation,
    root: &QualifiedId,
    max_depth: usize,
    requesting_domain: &str,
) -> Result<DecisionPipeline, QueryError> {
    traverse(federation, root, Direction::Backward, max_depth, requesting_domain)
}

/// Everything downstream of `source`.
pub fn impact(
    federation: &Federation,
    source: &QualifiedId,
    max_depth: usize,
    requesting_domain: &str,
) -> Result<DecisionPipeline, QueryError> {
    traverse(federation, source, Direction::Forward, max_depth, requesting_domain)
}

/// Agents of a pipeline, nearest first.
pub fn involved_agents(pipeline: &DecisionPipeline) -> &[AgentEntry] {
    &pipeline.agents
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InventoryEntry {
    pub id: QualifiedId,
    pub domain: String,
    pub node_type: String,
    pub purpose: BTreeSet<String>,
    /// Originals this entity is a copy of, nearest first.
    pub alias_ancestors: Vec<QualifiedId>,
    /// Copies of this entity in other domains, transitively, sorted.
    pub alias_descendants: Vec<QualifiedId>,
}

/// Every visible entity about `data_subject`, ordered by domain then id.
pub fn data_inventory(federation: &Federation, data_subject: &str, requesting_domain: &str) -> Vec<InventoryEntry> {
    let mut out = Vec::new();
    for store in federation.stores() {
        for node in store.nodes() {
            if node.kind != NodeKind::Entity || node.str_attr(keys::DATA_SUBJECT) != Some(data_subject) {
                continue;
            }
            if !matches!(federation.resolve(&node.id, requesting_domain), Resolution::Full(_)) {
                continue;
            }
            out.push(InventoryEntry {
                id: node.id.clone(),
                domain: store.domain().to_string(),
                node_type: node.node_type.clone(),
                purpose: node.set_attr(keys::PURPOSE).cloned().unwrap_or_default(),
                alias_ancestors: alias_ancestors(federation, node),
                alias_descendants: alias_descendants(federation, &node.id),
            });
        }
    }
    out.sort_by_cached_key(|e| (e.domain.clone(), e.id.to_string()));
    out
}

fn alias_ancestors(federation: &Federation, node: &ProvNode) -> Vec<QualifiedId> {
    let mut chain = Vec::new();
    let mut seen = HashSet::from([node.id.clone()]);
    let mut next = node.alias_of();
    while let Some(id) = next {
        if !seen.insert(id.clone()) {
            break;
        }
        next = federation.node(&id).and_then(ProvNode::alias_of);
        chain.push(id);
    }
    chain
}

fn alias_descendants(federation: &Federation, id: &QualifiedId) -> Vec<QualifiedId> {
    let mut seen = BTreeSet::new();
    let mut stack = vec![id.clone()];
    while let Some(cur) = stack.pop() {
        for alias in federation.aliases_of(&cur) {
            if alias.id != *id && seen.insert(alias.id.clone()) {
                stack.push(alias.id.clone());
            }
        }
    }
    seen.into_iter().collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ErasureReport {
    pub data_subject: String,
    /// Entities to erase, sorted by id text.
    pub targets: Vec<QualifiedId>,
    /// Activities that used a target: leads for investigation, not erasure.
    pub frontier: Vec<QualifiedId>,
}

impl ErasureReport {
    pub fn domains(&self) -> BTreeSet<&str> {
        self.targets.iter().map(QualifiedId::domain).collect()
    }
}

/// Entities about `data_subject` plus everything derived from or copied
/// from them, across all domains.
pub fn erasure_set(federation: &Federation, data_subject: &str) -> ErasureReport {
    let mut members: HashSet<QualifiedId> = HashSet::new();
    let mut stack: Vec<QualifiedId> = data_inventory(federation, data_subject, REGULATOR)
        .into_iter()
        .map(|e| e.id)
        .collect();
    while let Some(id) = stack.pop() {
        if !members.insert(id.clone()) {
            continue;
        }
        for e in federation.in_edges(&id) {
            if e.kind == EdgeKind::WasDerivedFrom && !members.contains(&e.source) {
                stack.push(e.source.clone());
            }
        }
        for alias in federation.aliases_of(&id) {
            if !members.contains(&alias.id) {
                stack.push(alias.id.clone());
            }
        }
    }
    let mut frontier: BTreeSet<QualifiedId> = BTreeSet::new();
    for id in &members {
        for e in federation.in_edges(id) {
            if e.kind == EdgeKind::Used {
                frontier.insert(e.source.clone());
            }
        }
    }
    let mut targets: Vec<QualifiedId> = members.into_iter().collect();
    targets.sort_by_cached_key(|id| id.to_string());
    let mut frontier: Vec<QualifiedId> = frontier.into_iter().collect();
    frontier.sort_by_cached_key(|id| id.to_string());
    ErasureReport {
        data_subject: data_subject.to_string(),
        targets,
        frontier,
    }
}

/// An expected kind of cross-domain transfer.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeclaredFlow {
    pub from: String,
    pub to: String,
    pub node_type: String,
}

/// The set of transfers a deployment expects to see.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FlowDeclaration {
    flows: BTreeSet<DeclaredFlow>,
}

impl FlowDeclaration {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn declare(&mut self, from: &str, to: &str, node_type: &str) {
        self.flows.insert(DeclaredFlow {
            from: from.to_string(),
            to: to.to_string(),
            node_type: node_type.to_string(),
        });
    }

    pub fn contains(&self, from: &str, to: &str, node_type: &str) -> bool {
        self.flows.iter().any(|f| f.from == from && f.to == to && f.node_type == node_type)
    }

    pub fn len(&self) -> usize {
        self.flows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flows.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &DeclaredFlow> {
        self.flows.iter()
    }
}

impl FromIterator<DeclaredFlow> for FlowDeclaration {
    fn from_iter<I: IntoIterator<Item = DeclaredFlow>>(iter: I) -> Self {
        Self {
            flows: iter.into_iter().collect(),
        }
    }
}

/// An observed cross-domain transfer, reconstructed from an alias node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FlowFinding {
    pub alias: QualifiedId,
    pub source: QualifiedId,
    pub transfer_activity: Option<QualifiedId>,
    pub from_domain: String,
    pub to_domain: String,
    pub node_type: String,
    pub at: Tick,
}

/// Every transfer in the federation, ordered by time then ids.
pub fn observed_transfers(federation: &Federation) -> Vec<FlowFinding> {
    let mut out = Vec::new();
    for store in federation.stores() {
        for node in store.nodes() {
            let Some(source) = node.alias_of() else { continue };
            let transfer_activity = store
                .out_edges(&node.id)
                .find(|e| e.kind == EdgeKind::WasGeneratedBy)
                .map(|e| e.target.clone());
            out.push(FlowFinding {
                alias: node.id.clone(),
                from_domain: source.domain().to_string(),
                source,
                transfer_activity,
                to_domain: store.domain().to_string(),
                node_type: node.node_type.clone(),
                at: node.created_at,
            });
        }
    }
    out.sort_by_cached_key(|f| (f.at, f.alias.to_string(), f.source.to_string()));
    out
}

/// Transfers whose (from, to, node_type) is not declared.
pub fn unexpected_flows(federation: &Federation, declaration: &FlowDeclaration) -> Vec<FlowFinding> {
    observed_transfers(federation)
        .into_iter()
        .filter(|f| !declaration.contains(&f.from_domain, &f.to_domain, &f.node_type))
        .collect()
}
