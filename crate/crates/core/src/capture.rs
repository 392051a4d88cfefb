//! Disclosed provenance capture.
//!
//! Application code holds one [`Recorder`] per organizational domain and
//! calls it at every data-exchange point. Each call builds the full set of
//! records it needs, validates them, runs the rule engine, and then appends
//! everything or nothing. A blocked call appends a single `policy-alert`
//! entity instead, so enforcement leaves its own trace in the log.

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::model::{
    self, keys, AttrValue, Attributes, EdgeKind, ModelError, NodeKind, ProvEdge, ProvNode, QualifiedId, Record, Tick,
};
use crate::policy::{self, Outcome, PolicyEvent, PolicyVerdict, RuleSet, Trigger};
use crate::query::{self, Direction};
use crate::store::{Federation, StoreError};

/// Node type of the entity appended when a rule blocks or alerts.
pub const ALERT_NODE_TYPE: &str = "policy-alert";
pub const TRANSFER_NODE_TYPE: &str = "transfer";
/// Agent attribute declaring what a receiver will process data for.
pub const PROCESSING_PURPOSES: &str = "processing_purposes";

#[derive(Debug, Error)]
pub enum CaptureError {
    #[error("unknown node {0}")]
    UnknownNode(QualifiedId),
    #[error("blocked by rule {rule}: {explanation} (alert {alert})")]
    PolicyBlocked {
        rule: String,
        explanation: String,
        alert: QualifiedId,
    },
    #[error("temporal violation: {0}")]
    TemporalViolation(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Store(StoreError),
    #[error("no store for domain {0:?}")]
    UnknownDomain(String),
    #[error("transfer must cross a domain boundary ({0} -> {0})")]
    SameDomainTransfer(String),
}

impl From<StoreError> for CaptureError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::ValidationFailed(m) => CaptureError::Model(m),
            StoreError::DanglingReference(id) => CaptureError::UnknownNode(id),
            other => CaptureError::Store(other),
        }
    }
}

impl CaptureError {
    /// Short stable name for reports.
    pub fn kind_name(&self) -> &'static str {
        match self {
            CaptureError::UnknownNode(_) => "UnknownNode",
            CaptureError::PolicyBlocked { .. } => "PolicyBlocked",
            CaptureError::TemporalViolation(_) => "TemporalViolation",
            CaptureError::Model(ModelError::KindConstraintViolation { .. }) => "KindConstraintViolation",
            CaptureError::Model(ModelError::InvalidIdentifier(_)) => "InvalidIdentifier",
            CaptureError::Model(ModelError::ReservedAttribute { .. }) => "ReservedAttribute",
            CaptureError::Store(_) => "StoreError",
            CaptureError::UnknownDomain(_) => "UnknownDomain",
            CaptureError::SameDomainTransfer(_) => "SameDomainTransfer",
        }
    }
}

/// Evidence of a cross-domain transfer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TransferReceipt {
    pub source_entity: QualifiedId,
    pub alias_entity: QualifiedId,
    pub transfer_activity: QualifiedId,
    pub sender_agent: QualifiedId,
    pub receiver_agent: QualifiedId,
    pub at: Tick,
}

/// Capture handle for one domain. Single writer: calls on one recorder are
/// serialized by `&mut self`.
#[derive(Debug, Clone)]
pub struct Recorder {
    domain: String,
    rules: Arc<RuleSet>,
    counters: BTreeMap<&'static str, u64>,
    now: Tick,
    verdicts: Vec<PolicyVerdict>,
    alerts: Vec<QualifiedId>,
}

/// Records about to be committed, plus the rule events they raise.
struct Batch {
    records: Vec<Record>,
    events: Vec<PolicyEvent>,
    /// Indexes of records that receive annotations.
    annotate: Vec<usize>,
}

impl Recorder {
    pub fn new(domain: &str, rules: Arc<RuleSet>) -> Result<Self, CaptureError> {
        model::validate_domain(domain)?;
        Ok(Self {
            domain: domain.to_string(),
            rules,
            counters: BTreeMap::new(),
            now: 0,
            verdicts: Vec::new(),
            alerts: Vec::new(),
        })
    }

    pub fn domain(&self) -> &str {
        &self.domain
    }

    pub fn now(&self) -> Tick {
        self.now
    }

    /// Moves the logical clock forward. The clock never goes back.
    pub fn advance_to(&mut self, tick: Tick) -> Result<(), CaptureError> {
        if tick < self.now {
            return Err(CaptureError::TemporalViolation(format!(
                "clock of {} is at {}, cannot move back to {tick}",
                self.domain, self.now
            )));
        }
        self.now = tick;
        Ok(())
    }

    /// Verdicts produced since the last call.
    pub fn take_verdicts(&mut self) -> Vec<PolicyVerdict> {
        std::mem::take(&mut self.verdicts)
    }

    /// Alert nodes appended since the last call.
    pub fn take_alerts(&mut self) -> Vec<QualifiedId> {
        std::mem::take(&mut self.alerts)
    }

    fn mint(&mut self, prefix: &'static str) -> QualifiedId {
        let n = self.counters.entry(prefix).or_insert(0);
        *n += 1;
        QualifiedId::new(&self.domain, &format!("{prefix}-{n}")).expect("minted parts are valid")
    }

    fn local_node<'a>(&self, fed: &'a Federation, id: &QualifiedId, kind: NodeKind) -> Result<&'a ProvNode, CaptureError> {
        if id.domain() != self.domain {
            return Err(CaptureError::UnknownNode(id.clone()));
        }
        let node = fed.node(id).ok_or_else(|| CaptureError::UnknownNode(id.clone()))?;
        if node.kind != kind {
            return Err(kind_error(kind, node.kind));
        }
        Ok(node)
    }

    /// Adds an Agent with an explicit local id.
    pub fn register_agent(
        &mut self,
        fed: &mut Federation,
        local: &str,
        node_type: &str,
        attributes: Attributes,
    ) -> Result<QualifiedId, CaptureError> {
        let id = QualifiedId::new(&self.domain, local)?;
        let node = ProvNode::new(id.clone(), NodeKind::Agent, node_type, self.now).with_attrs(attributes);
        let batch = Batch {
            events: vec![node_append_event(&node, self.now, None)],
            records: vec![node.into()],
            annotate: vec![0],
        };
        self.commit(fed, batch)?;
        Ok(id)
    }

    /// Records that `agent` acts on behalf of `principal` (which may be foreign).
    pub fn delegate(&mut self, fed: &mut Federation, agent: &QualifiedId, principal: &QualifiedId) -> Result<ProvEdge, CaptureError> {
        self.local_node(fed, agent, NodeKind::Agent)?;
        let edge = ProvEdge::new(agent.clone(), principal.clone(), EdgeKind::ActedOnBehalfOf);
        check_target_kind(fed, &edge)?;
        self.commit(
            fed,
            Batch {
                records: vec![edge.clone().into()],
                events: vec![],
                annotate: vec![],
            },
        )?;
        Ok(edge)
    }

    /// Adds a free-standing Entity (one with no generating activity, such as
    /// a model artifact), optionally attributed to an agent.
    pub fn declare_entity(
        &mut self,
        fed: &mut Federation,
        node_type: &str,
        attributes: Attributes,
        attributed_to: Option<&QualifiedId>,
    ) -> Result<QualifiedId, CaptureError> {
        let id = self.mint("ent");
        let node = ProvNode::new(id.clone(), NodeKind::Entity, node_type, self.now).with_attrs(attributes);
        let mut records: Vec<Record> = vec![node.clone().into()];
        if let Some(agent) = attributed_to {
            let edge = ProvEdge::new(id.clone(), agent.clone(), EdgeKind::WasAttributedTo);
            check_target_kind(fed, &edge)?;
            records.push(edge.into());
        }
        let batch = Batch {
            events: vec![node_append_event(&node, self.now, None)],
            records,
            annotate: vec![0],
        };
        self.commit(fed, batch)?;
        Ok(id)
    }

    /// Starts an Activity associated with `agent`.
    pub fn begin_activity(
        &mut self,
        fed: &mut Federation,
        agent: &QualifiedId,
        node_type: &str,
        attributes: Attributes,
    ) -> Result<QualifiedId, CaptureError> {
        if agent.domain() == self.domain && fed.node(agent).is_none() {
            return Err(CaptureError::UnknownNode(agent.clone()));
        }
        let id = self.mint("act");
        let node = ProvNode::new(id.clone(), NodeKind::Activity, node_type, self.now).with_attrs(attributes);
        let edge = ProvEdge::new(id.clone(), agent.clone(), EdgeKind::WasAssociatedWith);
        check_target_kind(fed, &edge)?;
        let batch = Batch {
            events: vec![node_append_event(&node, self.now, Some(id.clone()))],
            records: vec![node.into(), edge.into()],
            annotate: vec![0],
        };
        self.commit(fed, batch)?;
        Ok(id)
    }

    /// Records an Entity generated by `activity`.
    pub fn record_generation(
        &mut self,
        fed: &mut Federation,
        activity: &QualifiedId,
        node_type: &str,
        attributes: Attributes,
    ) -> Result<QualifiedId, CaptureError> {
        let act = self.local_node(fed, activity, NodeKind::Activity)?;
        let processing = act.set_attr(PROCESSING_PURPOSES).cloned();
        let inputs: Vec<QualifiedId> = fed
            .out_edges(activity)
            .filter(|e| e.kind == EdgeKind::Used)
            .map(|e| e.target.clone())
            .collect();
        let id = self.mint("ent");
        let node = ProvNode::new(id.clone(), NodeKind::Entity, node_type, self.now).with_attrs(attributes);
        let edge = ProvEdge::new(id.clone(), activity.clone(), EdgeKind::WasGeneratedBy);

        let mut generation = PolicyEvent::new(Trigger::Generation, self.now, Record::Node(node.clone()).summary());
        generation.entities = inputs;
        generation.activity = Some(activity.clone());
        generation.processing_purposes = processing;
        generation.pending = vec![node.clone()];
        let batch = Batch {
            events: vec![generation, node_append_event(&node, self.now, Some(activity.clone()))],
            records: vec![node.into(), edge.into()],
            annotate: vec![0],
        };
        self.commit(fed, batch)?;
        Ok(id)
    }

    /// Records that `activity` used `entity` (local or foreign).
    pub fn record_use(&mut self, fed: &mut Federation, activity: &QualifiedId, entity: &QualifiedId) -> Result<ProvEdge, CaptureError> {
        let act = self.local_node(fed, activity, NodeKind::Activity)?;
        let processing = act.set_attr(PROCESSING_PURPOSES).cloned();
        if entity.domain() == self.domain && fed.node(entity).is_none() {
            return Err(CaptureError::UnknownNode(entity.clone()));
        }
        let edge = ProvEdge::new(activity.clone(), entity.clone(), EdgeKind::Used);
        check_target_kind(fed, &edge)?;
        check_temporal(fed, activity, entity)?;
        let mut event = PolicyEvent::new(Trigger::Use, self.now, Record::Edge(edge.clone()).summary());
        event.entities = vec![entity.clone()];
        event.activity = Some(activity.clone());
        event.processing_purposes = processing;
        let batch = Batch {
            records: vec![edge.clone().into()],
            events: vec![event],
            annotate: vec![0],
        };
        let committed = self.commit(fed, batch)?;
        Ok(committed.into_iter().next().and_then(|r| r.as_edge().cloned()).unwrap_or(edge))
    }

    /// Records that `derived` was derived from each of `sources`.
    pub fn record_derivation(
        &mut self,
        fed: &mut Federation,
        derived: &QualifiedId,
        sources: &[QualifiedId],
    ) -> Result<Vec<ProvEdge>, CaptureError> {
        self.local_node(fed, derived, NodeKind::Entity)?;
        if sources.is_empty() {
            return Ok(Vec::new());
        }
        let mut records = Vec::new();
        for source in sources {
            if source.domain() == self.domain && fed.node(source).is_none() {
                return Err(CaptureError::UnknownNode(source.clone()));
            }
            let edge = ProvEdge::new(derived.clone(), source.clone(), EdgeKind::WasDerivedFrom);
            check_target_kind(fed, &edge)?;
            check_temporal(fed, derived, source)?;
            records.push(Record::Edge(edge));
        }
        let mut event = PolicyEvent::new(
            Trigger::Derivation,
            self.now,
            format!("{derived} wasDerivedFrom {} source(s)", sources.len()),
        );
        event.entities = sources.to_vec();
        let annotate = (0..records.len()).collect();
        let committed = self.commit(
            fed,
            Batch {
                records,
                events: vec![event],
                annotate,
            },
        )?;
        Ok(committed.into_iter().filter_map(|r| r.as_edge().cloned()).collect())
    }

    /// Records that activity `informed` was informed by activity `informant`.
    pub fn record_communication(
        &mut self,
        fed: &mut Federation,
        informed: &QualifiedId,
        informant: &QualifiedId,
    ) -> Result<ProvEdge, CaptureError> {
        self.local_node(fed, informed, NodeKind::Activity)?;
        let edge = ProvEdge::new(informed.clone(), informant.clone(), EdgeKind::WasInformedBy);
        check_target_kind(fed, &edge)?;
        self.commit(
            fed,
            Batch {
                records: vec![edge.clone().into()],
                events: vec![],
                annotate: vec![],
            },
        )?;
        Ok(edge)
    }

    /// Runs the rules, then appends the batch (or an alert if blocked).
    fn commit(&mut self, fed: &mut Federation, mut batch: Batch) -> Result<Vec<Record>, CaptureError> {
        fed.store(&self.domain)
            .ok_or_else(|| CaptureError::UnknownDomain(self.domain.clone()))?
            .check_all(&batch.records)?;

        let verdicts = self.run_rules(fed, &batch.events)?;
        apply_annotations(&verdicts, &mut batch.records, &batch.annotate);
        let store = fed.store_mut(&self.domain).expect("checked above");
        store.append_all(batch.records.clone())?;
        self.append_alerts(fed, &verdicts, &batch.events);
        Ok(batch.records)
    }

    /// Evaluates every event; on a block, appends the alert and fails.
    fn run_rules(&mut self, fed: &mut Federation, events: &[PolicyEvent]) -> Result<Vec<PolicyVerdict>, CaptureError> {
        let mut all = Vec::new();
        for event in events {
            let verdicts = self.rules.evaluate(event, fed);
            let block = policy::blocked(&verdicts).cloned();
            all.extend(verdicts);
            if let Some(block) = block {
                let alert = self.append_alert(fed, &block, event)?;
                self.verdicts.extend(all);
                return Err(CaptureError::PolicyBlocked {
                    rule: block.rule_id,
                    explanation: block.explanation,
                    alert,
                });
            }
        }
        Ok(all)
    }

    fn append_alerts(&mut self, fed: &mut Federation, verdicts: &[PolicyVerdict], events: &[PolicyEvent]) {
        for v in verdicts.iter().filter(|v| v.outcome == Outcome::Alerted) {
            let event = events
                .iter()
                .find(|e| self.rules.rules().iter().any(|r| r.id == v.rule_id && r.triggers.contains(&e.trigger)))
                .unwrap_or(&events[0]);
            // Alert nodes carry only free-form attributes and cannot fail validation.
            self.append_alert(fed, v, event).expect("alert append");
        }
        self.verdicts.extend_from_slice(verdicts);
    }

    fn append_alert(&mut self, fed: &mut Federation, verdict: &PolicyVerdict, event: &PolicyEvent) -> Result<QualifiedId, CaptureError> {
        let id = self.mint("alert");
        let mut node = ProvNode::new(id.clone(), NodeKind::Entity, ALERT_NODE_TYPE, self.now)
            .with_attr("rule", verdict.rule_id.as_str())
            .with_attr("outcome", if verdict.outcome == Outcome::Blocked { "blocked" } else { "alerted" })
            .with_attr("explanation", verdict.explanation.as_str())
            .with_attr("event", event.trigger.to_string())
            .with_attr("record", event.summary.as_str());
        if let Some(message) = &verdict.message {
            node = node.with_attr("message", message.as_str());
        }
        fed.store_mut(&self.domain)
            .ok_or_else(|| CaptureError::UnknownDomain(self.domain.clone()))?
            .append(node.into())?;
        self.alerts.push(id.clone());
        Ok(id)
    }
}

fn node_append_event(node: &ProvNode, now: Tick, activity: Option<QualifiedId>) -> PolicyEvent {
    let mut event = PolicyEvent::new(Trigger::NodeAppend, now, Record::Node(node.clone()).summary());
    if node.kind == NodeKind::Entity {
        event.entities = vec![node.id.clone()];
    }
    event.activity = activity;
    event.pending = vec![node.clone()];
    event
}

fn apply_annotations(verdicts: &[PolicyVerdict], records: &mut [Record], targets: &[usize]) {
    for (key, value) in verdicts.iter().filter_map(|v| v.annotation.as_ref()) {
        for &i in targets {
            let attrs = match &mut records[i] {
                Record::Node(n) => &mut n.attributes,
                Record::Edge(e) => &mut e.attributes,
            };
            attrs.insert(key.clone(), AttrValue::Str(value.clone()));
        }
    }
}

fn kind_error(expected: NodeKind, found: NodeKind) -> CaptureError {
    // Reuse the edge-constraint error shape: the caller named a node of the wrong kind.
    let edge = match expected {
        NodeKind::Activity => EdgeKind::Used,
        NodeKind::Entity => EdgeKind::WasDerivedFrom,
        NodeKind::Agent => EdgeKind::ActedOnBehalfOf,
    };
    let (s, t) = edge.endpoints();
    CaptureError::Model(ModelError::KindConstraintViolation {
        edge,
        expected_source: s,
        expected_target: t,
        source_kind: found,
        target_kind: t,
    })
}

/// Checks the target kind of an edge whose target lives anywhere in the
/// federation; unresolvable foreign targets are accepted as lazy references.
fn check_target_kind(fed: &Federation, edge: &ProvEdge) -> Result<(), CaptureError> {
    if let Some(target) = fed.node(&edge.target) {
        let source_kind = fed.node(&edge.source).map_or(edge.kind.endpoints().0, |n| n.kind);
        model::validate_edge(edge, source_kind, target.kind)?;
    }
    Ok(())
}

/// `used` and `wasDerivedFrom` must point back in time. Equal ticks are
/// allowed unless the new edge would close a cycle.
fn check_temporal(fed: &Federation, from: &QualifiedId, to: &QualifiedId) -> Result<(), CaptureError> {
    if from == to {
        return Err(CaptureError::TemporalViolation(format!("{from} cannot refer to itself")));
    }
    let (Some(a), Some(b)) = (fed.node(from), fed.node(to)) else {
        return Ok(());
    };
    if a.created_at < b.created_at {
        return Err(CaptureError::TemporalViolation(format!(
            "{from} (t={}) cannot refer forward to {to} (t={})",
            a.created_at, b.created_at
        )));
    }
    if a.created_at == b.created_at && reaches_within_tick(fed, to, from, a.created_at) {
        return Err(CaptureError::TemporalViolation(format!(
            "{from} -> {to} would close a cycle at t={}",
            a.created_at
        )));
    }
    Ok(())
}

/// Whether `goal` is in the backward closure of `start` through nodes
/// created at `tick`. Only such nodes can sit on a cycle through a new
/// same-tick edge, since every causal edge points back in time.
fn reaches_within_tick(fed: &Federation, start: &QualifiedId, goal: &QualifiedId, tick: Tick) -> bool {
    let mut seen = HashSet::from([start.clone()]);
    let mut queue = VecDeque::from([start.clone()]);
    while let Some(id) = queue.pop_front() {
        if &id == goal {
            return true;
        }
        for (next, _) in query::neighbors(fed, &id, Direction::Backward) {
            if fed.node(&next).is_some_and(|n| n.created_at == tick) && seen.insert(next.clone()) {
                queue.push_back(next);
            }
        }
    }
    false
}

/// Moves `entity` from the sender's domain to the receiver's.
///
/// The sender store gains a `transfer` Activity that used the entity and is
/// associated with `sender_agent`. The receiver store gains an alias Entity
/// carrying `alias_of` and copies of the source's reserved attributes,
/// generated by the (foreign) transfer activity and attributed to
/// `receiver_agent`. Rules run once, with the sender's rule set, before
/// either side is written; a block leaves an alert in the sender store.
pub fn record_transfer(
    fed: &mut Federation,
    sender: &mut Recorder,
    receiver: &mut Recorder,
    entity: &QualifiedId,
    sender_agent: &QualifiedId,
    receiver_agent: &QualifiedId,
) -> Result<TransferReceipt, CaptureError> {
    if sender.domain == receiver.domain {
        return Err(CaptureError::SameDomainTransfer(sender.domain.clone()));
    }
    if fed.store(&receiver.domain).is_none() {
        return Err(CaptureError::UnknownDomain(receiver.domain.clone()));
    }
    let source = sender.local_node(fed, entity, NodeKind::Entity)?.clone();
    sender.local_node(fed, sender_agent, NodeKind::Agent)?;
    let receiving = receiver.local_node(fed, receiver_agent, NodeKind::Agent)?;
    let processing = receiving.set_attr(PROCESSING_PURPOSES).cloned();

    let at = sender.now.max(receiver.now);
    sender.now = at;
    receiver.now = at;

    let activity_id = sender.mint("act");
    let activity = ProvNode::new(activity_id.clone(), NodeKind::Activity, TRANSFER_NODE_TYPE, at)
        .with_attr("to_domain", receiver.domain.as_str());
    let sender_records: Vec<Record> = vec![
        activity.clone().into(),
        ProvEdge::new(activity_id.clone(), entity.clone(), EdgeKind::Used).into(),
        ProvEdge::new(activity_id.clone(), sender_agent.clone(), EdgeKind::WasAssociatedWith).into(),
    ];

    let alias_id = receiver.mint("ent");
    let mut alias = ProvNode::new(alias_id.clone(), NodeKind::Entity, source.node_type.clone(), at)
        .with_attr(keys::ALIAS_OF, entity.to_string());
    for key in keys::ALIAS_COPIED {
        if let Some(v) = source.attr(key) {
            alias.attributes.insert(key.to_string(), v.clone());
        }
    }
    let mut receiver_records: Vec<Record> = vec![
        alias.clone().into(),
        ProvEdge::new(alias_id.clone(), activity_id.clone(), EdgeKind::WasGeneratedBy).into(),
        ProvEdge::new(alias_id.clone(), receiver_agent.clone(), EdgeKind::WasAttributedTo).into(),
    ];

    fed.store(&sender.domain)
        .ok_or_else(|| CaptureError::UnknownDomain(sender.domain.clone()))?
        .check_all(&sender_records)?;
    fed.store(&receiver.domain).expect("checked above").check_all(&receiver_records)?;

    let mut transfer = PolicyEvent::new(
        Trigger::Transfer,
        at,
        format!("transfer of {entity} to {}", receiver.domain),
    );
    transfer.entities = vec![entity.clone()];
    transfer.processing_purposes = processing;
    transfer.pending = vec![activity.clone(), alias.clone()];
    let events = vec![
        transfer,
        node_append_event(&activity, at, Some(activity_id.clone())),
        node_append_event(&alias, at, Some(activity_id.clone())),
    ];
    let verdicts = sender.run_rules(fed, &events)?;
    apply_annotations(&verdicts, &mut receiver_records, &[0]);

    fed.store_mut(&sender.domain).expect("checked above").append_all(sender_records)?;
    fed.store_mut(&receiver.domain).expect("checked above").append_all(receiver_records)?;
    sender.append_alerts(fed, &verdicts, &events);

    Ok(TransferReceipt {
        source_entity: entity.clone(),
        alias_entity: alias_id,
        transfer_activity: activity_id,
        sender_agent: sender_agent.clone(),
        receiver_agent: receiver_agent.clone(),
        at,
    })
}

/// Convenience for building attribute maps in code.
pub fn attrs<I, K, V>(pairs: I) -> Attributes
where
    I: IntoIterator<Item = (K, V)>,
    K: Into<String>,
    V: Into<AttrValue>,
{
    pairs.into_iter().map(|(k, v)| (k.into(), v.into())).collect()
}

/// String-set attribute value.
pub fn string_set<I: IntoIterator<Item = S>, S: Into<String>>(items: I) -> AttrValue {
    AttrValue::Set(items.into_iter().map(Into::into).collect::<BTreeSet<_>>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{Action, Condition, PolicyRule};
    use crate::store::{ChainStatus, ProvStore, Visibility};

    fn qid(s: &str) -> QualifiedId {
        s.parse().unwrap()
    }

    fn setup(rules: RuleSet) -> (Federation, Recorder, Recorder, QualifiedId, QualifiedId) {
        let rules = Arc::new(rules);
        let mut fed = Federation::new();
        fed.add_store(ProvStore::new("orgA").unwrap(), Visibility::Full);
        fed.add_store(ProvStore::new("orgB").unwrap(), Visibility::Full);
        let mut a = Recorder::new("orgA", rules.clone()).unwrap();
        let mut b = Recorder::new("orgB", rules).unwrap();
        let acme = a.register_agent(&mut fed, "acme-corp", "organization", Attributes::new()).unwrap();
        let beta = b
            .register_agent(
                &mut fed,
                "beta-ads",
                "organization",
                attrs([(PROCESSING_PURPOSES, string_set(["advertising"]))]),
            )
            .unwrap();
        (fed, a, b, acme, beta)
    }

    #[test]
    fn begin_activity_mints_sequential_ids() {
        let (mut fed, mut a, _, acme, _) = setup(RuleSet::empty());
        let act = a
            .begin_activity(&mut fed, &acme, "inference", attrs([(keys::AUTOMATED_DECISION, true)]))
            .unwrap();
        assert_eq!(act.to_string(), "orgA:act-1");
        let edges: Vec<_> = fed.out_edges(&act).collect();
        assert_eq!(edges.len(), 1);
        assert_eq!(edges[0].kind, EdgeKind::WasAssociatedWith);
        assert_eq!(edges[0].target, acme);
        let act2 = a.begin_activity(&mut fed, &acme, "inference", Attributes::new()).unwrap();
        assert_eq!(act2.to_string(), "orgA:act-2");
    }

    #[test]
    fn begin_activity_needs_an_agent() {
        let (mut fed, mut a, _, acme, _) = setup(RuleSet::empty());
        let act = a.begin_activity(&mut fed, &acme, "emit", Attributes::new()).unwrap();
        let ent = a.record_generation(&mut fed, &act, "reading", Attributes::new()).unwrap();
        let err = a.begin_activity(&mut fed, &ent, "x", Attributes::new()).unwrap_err();
        assert_eq!(err.kind_name(), "KindConstraintViolation");
        let err = a.begin_activity(&mut fed, &qid("orgA:ghost"), "x", Attributes::new()).unwrap_err();
        assert!(matches!(err, CaptureError::UnknownNode(_)));
    }

    #[test]
    fn generation_and_use() {
        let (mut fed, mut a, _, acme, _) = setup(RuleSet::empty());
        let act = a.begin_activity(&mut fed, &acme, "inference", Attributes::new()).unwrap();
        let ent = a
            .record_generation(&mut fed, &act, "inference", attrs([(keys::PERSONAL_DATA, false)]))
            .unwrap();
        assert_eq!(ent.to_string(), "orgA:ent-1");
        assert!(matches!(
            a.record_generation(&mut fed, &qid("orgA:act-99"), "x", Attributes::new()),
            Err(CaptureError::UnknownNode(_))
        ));
        a.advance_to(1).unwrap();
        let act2 = a.begin_activity(&mut fed, &acme, "consume", Attributes::new()).unwrap();
        let edge = a.record_use(&mut fed, &act2, &ent).unwrap();
        assert_eq!(edge.kind, EdgeKind::Used);
        // An activity using its own output closes a cycle.
        let err = a.record_use(&mut fed, &act, &ent).unwrap_err();
        assert_eq!(err.kind_name(), "TemporalViolation");
        let err = a.record_use(&mut fed, &ent, &ent).unwrap_err();
        assert_eq!(err.kind_name(), "KindConstraintViolation");
    }

    #[test]
    fn derivation_rules() {
        let (mut fed, mut a, _, acme, _) = setup(RuleSet::empty());
        let s1 = a.declare_entity(&mut fed, "raw", Attributes::new(), Some(&acme)).unwrap();
        let s2 = a.declare_entity(&mut fed, "raw", Attributes::new(), None).unwrap();
        a.advance_to(2).unwrap();
        let d = a.declare_entity(&mut fed, "derived", Attributes::new(), None).unwrap();
        assert_eq!(a.record_derivation(&mut fed, &d, &[s1.clone(), s2.clone()]).unwrap().len(), 2);
        assert!(a.record_derivation(&mut fed, &d, &[]).unwrap().is_empty());
        // s1 (t=0) derived from d (t=2) points forward in time.
        let err = a.record_derivation(&mut fed, &s1, std::slice::from_ref(&d)).unwrap_err();
        assert_eq!(err.kind_name(), "TemporalViolation");
        assert!(matches!(
            a.record_derivation(&mut fed, &d, &[qid("orgA:nope")]),
            Err(CaptureError::UnknownNode(_))
        ));
        // Foreign, unresolvable sources are lazy references.
        a.record_derivation(&mut fed, &d, &[qid("orgZ:elsewhere")]).unwrap();
        // Same tick: allowed one way, not both.
        let e1 = a.declare_entity(&mut fed, "x", Attributes::new(), None).unwrap();
        a.record_derivation(&mut fed, &e1, std::slice::from_ref(&d)).unwrap();
        assert_eq!(
            a.record_derivation(&mut fed, &d, &[e1]).unwrap_err().kind_name(),
            "TemporalViolation"
        );
    }

    #[test]
    fn transfer_creates_alias() {
        let (mut fed, mut a, mut b, acme, _) = setup(RuleSet::empty());
        let partner = b.register_agent(&mut fed, "partner", "organization", Attributes::new()).unwrap();
        let act = a.begin_activity(&mut fed, &acme, "collect", Attributes::new()).unwrap();
        let ent = a
            .record_generation(
                &mut fed,
                &act,
                "profile",
                attrs([
                    (keys::PURPOSE, string_set(["analytics", "billing"])),
                    (keys::DATA_SUBJECT, AttrValue::from("alice")),
                    (keys::PERSONAL_DATA, AttrValue::from(true)),
                    ("colour", AttrValue::from("blue")),
                ]),
            )
            .unwrap();
        let r1 = record_transfer(&mut fed, &mut a, &mut b, &ent, &acme, &partner).unwrap();
        assert_eq!(r1.alias_entity.domain(), "orgB");
        let alias = fed.node(&r1.alias_entity).unwrap();
        assert_eq!(alias.alias_of(), Some(ent.clone()));
        let source = fed.node(&ent).unwrap();
        for key in keys::ALIAS_COPIED {
            assert_eq!(alias.attr(key), source.attr(key), "{key}");
        }
        assert!(alias.attr("colour").is_none());
        let r2 = record_transfer(&mut fed, &mut a, &mut b, &ent, &acme, &partner).unwrap();
        assert_ne!(r1.alias_entity, r2.alias_entity);
        assert_eq!(fed.aliases_of(&ent).count(), 2);
        assert!(fed.dangling_references().is_empty());
        assert!(matches!(
            record_transfer(&mut fed, &mut a, &mut b, &qid("orgA:ent-77"), &acme, &partner),
            Err(CaptureError::UnknownNode(_))
        ));
    }

    fn purpose_rule() -> RuleSet {
        RuleSet::new(vec![PolicyRule::new(
            "purpose-limitation",
            &[Trigger::Transfer],
            Condition::PurposeIncompatible,
            Action::Block,
        )])
        .unwrap()
    }

    #[test]
    fn purpose_limited_transfer_is_blocked() {
        let (mut fed, mut a, mut b, acme, beta) = setup(purpose_rule());
        let act = a.begin_activity(&mut fed, &acme, "collect", Attributes::new()).unwrap();
        let ent = a
            .record_generation(&mut fed, &act, "profile", attrs([(keys::PURPOSE, string_set(["analytics"]))]))
            .unwrap();
        let before_a = fed.store("orgA").unwrap().len();
        let before_b = fed.store("orgB").unwrap().head_hash();
        let err = record_transfer(&mut fed, &mut a, &mut b, &ent, &acme, &beta).unwrap_err();
        let CaptureError::PolicyBlocked { rule, alert, explanation } = err else {
            panic!("expected block")
        };
        assert_eq!(rule, "purpose-limitation");
        assert!(explanation.contains("advertising"));
        assert_eq!(fed.store("orgA").unwrap().len(), before_a + 1);
        assert_eq!(fed.node(&alert).unwrap().node_type, ALERT_NODE_TYPE);
        assert_eq!(fed.store("orgB").unwrap().head_hash(), before_b);
        assert_eq!(fed.store("orgA").unwrap().verify_chain(), ChainStatus::Ok);
        assert_eq!(a.take_alerts(), vec![alert]);
    }

    #[test]
    fn consent_gated_use_is_blocked() {
        let rules = RuleSet::new(vec![PolicyRule::new(
            "consent-gate",
            &[Trigger::Use],
            Condition::ConsentMissingForAutomatedDecision,
            Action::Block,
        )])
        .unwrap();
        let (mut fed, mut a, _, acme, _) = setup(rules);
        let collect = a.begin_activity(&mut fed, &acme, "collect", Attributes::new()).unwrap();
        let personal = a
            .record_generation(&mut fed, &collect, "profile", attrs([(keys::PERSONAL_DATA, true)]))
            .unwrap();
        let decide = a
            .begin_activity(&mut fed, &acme, "inference", attrs([(keys::AUTOMATED_DECISION, true)]))
            .unwrap();
        let len = fed.store("orgA").unwrap().len();
        let err = a.record_use(&mut fed, &decide, &personal).unwrap_err();
        assert_eq!(err.kind_name(), "PolicyBlocked");
        assert_eq!(fed.store("orgA").unwrap().len(), len + 1);
        assert_eq!(fed.out_edges(&decide).filter(|e| e.kind == EdgeKind::Used).count(), 0);
    }

    #[test]
    fn expiry_screen_blocks_generation() {
        let rules = RuleSet::new(vec![PolicyRule::new(
            "expiry-screen",
            &[Trigger::Generation],
            Condition::Expired,
            Action::Block,
        )])
        .unwrap();
        let (mut fed, mut a, _, acme, _) = setup(rules);
        let old = a
            .declare_entity(&mut fed, "reading", attrs([(keys::EXPIRY, AttrValue::Time(3))]), None)
            .unwrap();
        a.advance_to(5).unwrap();
        let act = a.begin_activity(&mut fed, &acme, "inference", Attributes::new()).unwrap();
        a.record_use(&mut fed, &act, &old).unwrap();
        let len = fed.store("orgA").unwrap().len();
        let err = a.record_generation(&mut fed, &act, "out", Attributes::new()).unwrap_err();
        assert_eq!(err.kind_name(), "PolicyBlocked");
        let store = fed.store("orgA").unwrap();
        assert_eq!(store.len(), len + 1);
        assert_eq!(store.verify_chain(), ChainStatus::Ok);
        assert!(store.nodes().all(|n| n.node_type != "out"));
    }

    #[test]
    fn alerts_and_annotations_do_not_block() {
        let rules = RuleSet::new(vec![
            PolicyRule::new(
                "note",
                &[Trigger::NodeAppend],
                Condition::Expired,
                Action::Annotate {
                    key: "screened".into(),
                    value: "stale".into(),
                },
            ),
            PolicyRule::new(
                "warn",
                &[Trigger::NodeAppend],
                Condition::Expired,
                Action::Alert {
                    message: "stale {record}".into(),
                },
            ),
        ])
        .unwrap();
        let (mut fed, mut a, _, _, _) = setup(rules);
        a.advance_to(10).unwrap();
        let e = a
            .declare_entity(&mut fed, "reading", attrs([(keys::EXPIRY, AttrValue::Time(3))]), None)
            .unwrap();
        assert_eq!(fed.node(&e).unwrap().str_attr("screened"), Some("stale"));
        let alerts = a.take_alerts();
        assert_eq!(alerts.len(), 1);
        assert_eq!(fed.node(&alerts[0]).unwrap().str_attr("outcome"), Some("alerted"));
        let verdicts = a.take_verdicts();
        assert!(verdicts.iter().any(|v| v.outcome == Outcome::Annotated));
    }

    #[test]
    fn clock_never_moves_back() {
        let (_, mut a, _, _, _) = setup(RuleSet::empty());
        a.advance_to(4).unwrap();
        assert!(a.advance_to(3).is_err());
        assert_eq!(a.now(), 4);
    }
}
