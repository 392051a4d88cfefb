//! Brute-force reference implementations used as test oracles.
//!
//! Everything here works from a flat scan of the raw records in every
//! store, never from the indexes the library maintains.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use decprov_core::model::keys;
use decprov_core::{EdgeKind, Federation, NodeKind, ProvNode, QualifiedId, Record};

/// A flat copy of a federation's records.
pub struct Snapshot {
    pub nodes: BTreeMap<QualifiedId, ProvNode>,
    /// (source, target, kind) for every edge record.
    pub edges: Vec<(QualifiedId, QualifiedId, EdgeKind)>,
}

impl Snapshot {
    pub fn of(fed: &Federation) -> Self {
        let mut nodes = BTreeMap::new();
        let mut edges = Vec::new();
        for store in fed.stores() {
            for record in store.records() {
                match record {
                    Record::Node(n) => {
                        nodes.insert(n.id.clone(), n.clone());
                    }
                    Record::Edge(e) => edges.push((e.source.clone(), e.target.clone(), e.kind)),
                }
            }
        }
        Self { nodes, edges }
    }

    /// Backward relation pairs: every edge as (source, target), plus
    /// (alias, original) for every alias entity.
    pub fn backward_pairs(&self) -> Vec<(QualifiedId, QualifiedId)> {
        let mut pairs: Vec<_> = self.edges.iter().map(|(s, t, _)| (s.clone(), t.clone())).collect();
        for n in self.nodes.values() {
            if let Some(orig) = n.str_attr(keys::ALIAS_OF) {
                pairs.push((n.id.clone(), orig.parse().expect("alias_of is a qualified id")));
            }
        }
        pairs
    }

    pub fn entities(&self) -> impl Iterator<Item = &ProvNode> {
        self.nodes.values().filter(|n| n.kind == NodeKind::Entity)
    }
}

/// Shortest hop distance from `root` to every node within `max_depth`,
/// following pairs forwards (lineage) or reversed (impact). Computed by
/// rescanning the full pair list once per level.
pub fn reach(
    pairs: &[(QualifiedId, QualifiedId)],
    root: &QualifiedId,
    max_depth: usize,
    reversed: bool,
) -> BTreeMap<QualifiedId, usize> {
    let mut dist = BTreeMap::from([(root.clone(), 0usize)]);
    let mut frontier = BTreeSet::from([root.clone()]);
    let mut level = 0;
    while level < max_depth && !frontier.is_empty() {
        level += 1;
        let mut next = BTreeSet::new();
        for (a, b) in pairs {
            let (from, to) = if reversed { (b, a) } else { (a, b) };
            if frontier.contains(from) && !dist.contains_key(to) {
                next.insert(to.clone());
            }
        }
        for n in &next {
            dist.insert(n.clone(), level);
        }
        frontier = next;
    }
    dist
}

/// Whether a traversal bounded at `max_depth` left something out.
pub fn truncated(
    snap: &Snapshot,
    pairs: &[(QualifiedId, QualifiedId)],
    dist: &BTreeMap<QualifiedId, usize>,
    max_depth: usize,
    reversed: bool,
) -> bool {
    let cut = dist.iter().any(|(id, d)| {
        *d == max_depth
            && pairs.iter().any(|(a, b)| if reversed { b == id } else { a == id })
    });
    cut || dist.keys().any(|id| !snap.nodes.contains_key(id))
}

/// Entities about `subject`, closed under reverse derivation and aliasing,
/// by fixpoint iteration.
pub fn erasure_closure(snap: &Snapshot, subject: &str) -> BTreeSet<QualifiedId> {
    let mut set: BTreeSet<QualifiedId> = snap
        .entities()
        .filter(|n| n.str_attr(keys::DATA_SUBJECT) == Some(subject))
        .map(|n| n.id.clone())
        .collect();
    loop {
        let before = set.len();
        for (s, t, k) in &snap.edges {
            if *k == EdgeKind::WasDerivedFrom && set.contains(t) {
                set.insert(s.clone());
            }
        }
        for n in snap.nodes.values() {
            if let Some(orig) = n.str_attr(keys::ALIAS_OF) {
                if set.contains(&orig.parse::<QualifiedId>().unwrap()) {
                    set.insert(n.id.clone());
                }
            }
        }
        if set.len() == before {
            return set;
        }
    }
}

/// Activities with a `used` edge into any member of `targets`.
pub fn erasure_frontier(snap: &Snapshot, targets: &BTreeSet<QualifiedId>) -> BTreeSet<QualifiedId> {
    snap.edges
        .iter()
        .filter(|(_, t, k)| *k == EdgeKind::Used && targets.contains(t))
        .map(|(s, _, _)| s.clone())
        .collect()
}

fn is_model(n: &ProvNode) -> bool {
    n.node_type == "model" || n.attributes.contains_key(keys::ACCEPTED_SOURCES)
}

fn is_data(n: &ProvNode) -> bool {
    n.kind == NodeKind::Entity && !is_model(n)
}

/// Data entities in the lineage of `input` with no other data entity in
/// their own lineage.
pub fn lineage_roots(snap: &Snapshot, pairs: &[(QualifiedId, QualifiedId)], input: &QualifiedId) -> BTreeSet<QualifiedId> {
    let mut roots = BTreeSet::new();
    for id in reach(pairs, input, usize::MAX, false).keys() {
        let Some(n) = snap.nodes.get(id) else { continue };
        if !is_data(n) {
            continue;
        }
        let behind = reach(pairs, id, usize::MAX, false);
        let other_data = behind
            .keys()
            .any(|b| b != id && snap.nodes.get(b).is_some_and(is_data));
        if !other_data {
            roots.insert(id.clone());
        }
    }
    roots
}

/// Whether some lineage root of `input` has a type the model does not accept.
pub fn admission_violation(snap: &Snapshot, pairs: &[(QualifiedId, QualifiedId)], input: &QualifiedId, model: &ProvNode) -> bool {
    let Some(accepted) = model.set_attr(keys::ACCEPTED_SOURCES) else {
        return false;
    };
    lineage_roots(snap, pairs, input)
        .iter()
        .any(|r| !accepted.contains(&snap.nodes[r].node_type))
}

/// First blacklisted id (by id text) reachable backwards from `entity`.
pub fn untrusted(pairs: &[(QualifiedId, QualifiedId)], entity: &QualifiedId, blacklist: &BTreeSet<QualifiedId>) -> Option<QualifiedId> {
    reach(pairs, entity, usize::MAX, false)
        .into_keys()
        .filter(|id| blacklist.contains(id))
        .min_by_key(|id| id.to_string())
}

pub fn qid(text: &str) -> QualifiedId {
    text.parse().expect("valid qualified id")
}

pub fn scenario_path(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

pub const BUNDLED: [&str; 5] = [
    "fig2.scenario",
    "faulty-sensor.scenario",
    "purpose-violation.scenario",
    "new-advertiser.scenario",
    "consent-gate.scenario",
];

/// The final actuation of the fig2 scenario.
pub const FIG2_ACTION: &str = "orgB:ent-6";

/// Every node in the lineage of the fig2 actuation, with its role.
pub const FIG2_LINEAGE: [(&str, &str); 28] = [
    ("orgB:ent-6", "actuation (the action)"),
    ("orgB:act-4", "actuator activity"),
    ("orgB:ent-5", "model B output: control command"),
    ("orgB:act-3", "model B activity"),
    ("orgB:ent-4", "model B entity"),
    ("orgB:ent-2", "query result"),
    ("orgB:act-1", "query activity"),
    ("orgB:ent-3", "other input: occupancy schedule"),
    ("orgB:act-2", "activity producing the other input"),
    ("orgB:ent-1", "datastore record, received copy"),
    ("orgA:act-5", "transfer activity"),
    ("orgA:ent-5", "datastore record"),
    ("orgA:act-4", "datastore storage activity"),
    ("orgA:ent-4", "model A inference"),
    ("orgA:act-3", "model A activity"),
    ("orgA:ent-3", "model A entity"),
    ("orgA:ent-1", "sensor reading"),
    ("orgA:ent-2", "sensor reading"),
    ("orgA:act-1", "sensing activity"),
    ("orgA:act-2", "sensing activity"),
    ("orgB:hvac-actuator", "agent"),
    ("orgB:control-model", "agent"),
    ("orgB:forecast-query", "agent"),
    ("orgB:building-ops", "agent"),
    ("orgA:forecast-db", "agent"),
    ("orgA:forecast-model", "agent"),
    ("orgA:temp-sensor", "agent"),
    ("orgA:acme-forecasting", "agent"),
];

pub fn fig2_lineage_ids() -> BTreeSet<QualifiedId> {
    FIG2_LINEAGE.iter().map(|(id, _)| qid(id)).collect()
}
