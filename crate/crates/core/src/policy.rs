//! Event-condition-action rules evaluated synchronously before each capture
//! append.
//!
//! A rule names the capture events it listens to, one built-in condition and
//! one action. Rules run in ascending id order; the first `Block` stops
//! evaluation and rejects the append, while `Alert` and `Annotate` verdicts
//! accumulate.
//!
//! Conditions look at the event's *scope*: the entities the event is about.
//! For `use` that is the used entity, for `transfer` the transferred entity,
//! for `derivation` the sources, for `generation` the inputs already used by
//! the generating activity, and for `node-append` the new node itself when it
//! is an Entity. A condition holds if it holds for any entity in scope.

use std::collections::{BTreeSet, HashSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{keys, reserved_type, EdgeKind, NodeKind, ProvNode, QualifiedId, Tick};
use crate::query::{self, Direction, NodeView, UNBOUNDED};
use crate::store::{Federation, REGULATOR};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PolicyError {
    #[error("rule file: {0}")]
    Parse(String),
    #[error("unknown condition {name:?} in rule {rule:?}")]
    UnknownCondition { rule: String, name: String },
    #[error("duplicate rule id {0:?}")]
    DuplicateRuleId(String),
    #[error("rule {rule:?}: {reason}")]
    InvalidRule { rule: String, reason: String },
}

/// Capture events a rule can listen to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Trigger {
    NodeAppend,
    Use,
    Derivation,
    Transfer,
    Generation,
}

impl fmt::Display for Trigger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Trigger::NodeAppend => "node-append",
            Trigger::Use => "use",
            Trigger::Derivation => "derivation",
            Trigger::Transfer => "transfer",
            Trigger::Generation => "generation",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Condition {
    PurposeIncompatible,
    Expired,
    UntrustedLineage { blacklist: BTreeSet<QualifiedId> },
    ConsentMissingForAutomatedDecision,
    ModelAdmissionViolation,
}

impl Condition {
    pub fn name(&self) -> &'static str {
        match self {
            Condition::PurposeIncompatible => "purpose_incompatible",
            Condition::Expired => "expired",
            Condition::UntrustedLineage { .. } => "untrusted_lineage",
            Condition::ConsentMissingForAutomatedDecision => "consent_missing_for_automated_decision",
            Condition::ModelAdmissionViolation => "model_admission_violation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Block,
    Alert { message: String },
    Annotate { key: String, value: String },
}

/// What a rule does when its condition cannot be evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FailMode {
    Open,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyRule {
    pub id: String,
    pub triggers: BTreeSet<Trigger>,
    pub condition: Condition,
    pub action: Action,
    pub fail: FailMode,
}

impl PolicyRule {
    pub fn new(id: &str, triggers: &[Trigger], condition: Condition, action: Action) -> Self {
        let fail = match action {
            Action::Block => FailMode::Closed,
            _ => FailMode::Open,
        };
        Self {
            id: id.to_string(),
            triggers: triggers.iter().copied().collect(),
            condition,
            action,
            fail,
        }
    }

    pub fn with_fail(mut self, fail: FailMode) -> Self {
        self.fail = fail;
        self
    }
}

// Rule file wire format.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleSpec {
    id: String,
    trigger: Vec<Trigger>,
    condition: ConditionSpec,
    action: ActionSpec,
    #[serde(default)]
    fail: Option<FailMode>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConditionSpec {
    name: String,
    #[serde(default)]
    params: serde_json::Map<String, serde_json::Value>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ActionSpec {
    kind: String,
    #[serde(default)]
    params: serde_json::Map<String, serde_json::Value>,
}

impl RuleSpec {
    fn into_rule(self) -> Result<PolicyRule, PolicyError> {
        let invalid = |reason: String| PolicyError::InvalidRule {
            rule: self.id.clone(),
            reason,
        };
        if self.id.is_empty() {
            return Err(invalid("empty id".into()));
        }
        if self.trigger.is_empty() {
            return Err(invalid("no triggers".into()));
        }
        let condition = match self.condition.name.as_str() {
            "purpose_incompatible" => Condition::PurposeIncompatible,
            "expired" => Condition::Expired,
            "consent_missing_for_automated_decision" => Condition::ConsentMissingForAutomatedDecision,
            "model_admission_violation" => Condition::ModelAdmissionViolation,
            "untrusted_lineage" => {
                let list = match self.condition.params.get("blacklist") {
                    None => Vec::new(),
                    Some(v) => serde_json::from_value::<Vec<QualifiedId>>(v.clone())
                        .map_err(|e| invalid(format!("blacklist: {e}")))?,
                };
                Condition::UntrustedLineage {
                    blacklist: list.into_iter().collect(),
                }
            }
            other => {
                return Err(PolicyError::UnknownCondition {
                    rule: self.id.clone(),
                    name: other.to_string(),
                })
            }
        };
        let param = |name: &str| -> Result<String, PolicyError> {
            self.action
                .params
                .get(name)
                .and_then(|v| v.as_str())
                .map(str::to_string)
                .ok_or_else(|| invalid(format!("action needs string param {name:?}")))
        };
        let action = match self.action.kind.as_str() {
            "block" => Action::Block,
            "alert" => Action::Alert {
                message: param("message")?,
            },
            "annotate" => {
                let key = param("key")?;
                if reserved_type(&key).is_some() {
                    return Err(invalid(format!("cannot annotate reserved key {key:?}")));
                }
                Action::Annotate {
                    key,
                    value: param("value")?,
                }
            }
            other => return Err(invalid(format!("unknown action kind {other:?}"))),
        };
        let mut rule = PolicyRule::new(&self.id, &self.trigger, condition, action);
        if let Some(fail) = self.fail {
            rule.fail = fail;
        }
        Ok(rule)
    }
}

/// An immutable, id-ordered set of rules.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RuleSet {
    rules: Vec<PolicyRule>,
}

impl RuleSet {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn new(mut rules: Vec<PolicyRule>) -> Result<Self, PolicyError> {
        rules.sort_by(|a, b| a.id.cmp(&b.id));
        for pair in rules.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(PolicyError::DuplicateRuleId(pair[0].id.clone()));
            }
        }
        Ok(Self { rules })
    }

    /// Parses a JSON rule file (a list of rule objects).
    pub fn from_json(text: &str) -> Result<Self, PolicyError> {
        let specs: Vec<RuleSpec> = serde_json::from_str(text).map_err(|e| PolicyError::Parse(e.to_string()))?;
        Self::from_json_value(specs)
    }

    pub fn from_value(value: serde_json::Value) -> Result<Self, PolicyError> {
        let specs: Vec<RuleSpec> = serde_json::from_value(value).map_err(|e| PolicyError::Parse(e.to_string()))?;
        Self::from_json_value(specs)
    }

    fn from_json_value(specs: Vec<RuleSpec>) -> Result<Self, PolicyError> {
        let rules = specs.into_iter().map(RuleSpec::into_rule).collect::<Result<Vec<_>, _>>()?;
        Self::new(rules)
    }

    pub fn rules(&self) -> &[PolicyRule] {
        &self.rules
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// Evaluates every rule listening to `event.trigger`, in id order.
    pub fn evaluate(&self, event: &PolicyEvent, context: &Federation) -> Vec<PolicyVerdict> {
        evaluate(self, event, context)
    }
}

/// A capture event presented to the rule engine.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyEvent {
    pub trigger: Trigger,
    pub now: Tick,
    /// Entities the event is about.
    pub entities: Vec<QualifiedId>,
    /// The activity consuming or producing data, if any.
    pub activity: Option<QualifiedId>,
    /// Purposes the receiving side declares it will process for.
    pub processing_purposes: Option<BTreeSet<String>>,
    /// Nodes about to be appended, visible to conditions before they exist.
    pub pending: Vec<ProvNode>,
    /// Human-readable description of the record under evaluation.
    pub summary: String,
}

impl PolicyEvent {
    pub fn new(trigger: Trigger, now: Tick, summary: impl Into<String>) -> Self {
        Self {
            trigger,
            now,
            entities: Vec::new(),
            activity: None,
            processing_purposes: None,
            pending: Vec::new(),
            summary: summary.into(),
        }
    }

    fn lookup<'a>(&'a self, context: &'a Federation, id: &QualifiedId) -> Option<&'a ProvNode> {
        self.pending.iter().find(|n| &n.id == id).or_else(|| context.node(id))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Pass,
    Blocked,
    Alerted,
    Annotated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PolicyVerdict {
    pub rule_id: String,
    pub outcome: Outcome,
    pub explanation: String,
    /// Rendered alert message, for `Alerted`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    /// Attribute to attach, for `Annotated`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub annotation: Option<(String, String)>,
}

/// The blocking verdict in a list, if any.
pub fn blocked(verdicts: &[PolicyVerdict]) -> Option<&PolicyVerdict> {
    verdicts.iter().find(|v| v.outcome == Outcome::Blocked)
}

/// Result of evaluating one condition: holds (with witness), does not hold,
/// or cannot be decided from the available context.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Finding {
    Holds(String),
    Clear,
    Unresolvable(String),
}

pub fn evaluate(rules: &RuleSet, event: &PolicyEvent, context: &Federation) -> Vec<PolicyVerdict> {
    let mut verdicts = Vec::new();
    for rule in rules.rules.iter().filter(|r| r.triggers.contains(&event.trigger)) {
        let (fired, explanation) = match check_condition(&rule.condition, event, context) {
            Finding::Holds(witness) => (true, witness),
            Finding::Clear => (false, format!("{} not met", rule.condition.name())),
            Finding::Unresolvable(why) => match rule.fail {
                FailMode::Closed => (true, format!("unresolvable context, failing closed: {why}")),
                FailMode::Open => (false, format!("unresolvable context, failing open: {why}")),
            },
        };
        if !fired {
            verdicts.push(PolicyVerdict {
                rule_id: rule.id.clone(),
                outcome: Outcome::Pass,
                explanation,
                message: None,
                annotation: None,
            });
            continue;
        }
        match &rule.action {
            Action::Block => {
                verdicts.push(PolicyVerdict {
                    rule_id: rule.id.clone(),
                    outcome: Outcome::Blocked,
                    explanation,
                    message: None,
                    annotation: None,
                });
                break;
            }
            Action::Alert { message } => {
                let rendered = message
                    .replace("{rule}", &rule.id)
                    .replace("{event}", &event.trigger.to_string())
                    .replace("{record}", &event.summary)
                    .replace("{witness}", &explanation);
                verdicts.push(PolicyVerdict {
                    rule_id: rule.id.clone(),
                    outcome: Outcome::Alerted,
                    explanation,
                    message: Some(rendered),
                    annotation: None,
                });
            }
            Action::Annotate { key, value } => verdicts.push(PolicyVerdict {
                rule_id: rule.id.clone(),
                outcome: Outcome::Annotated,
                explanation,
                message: None,
                annotation: Some((key.clone(), value.clone())),
            }),
        }
    }
    verdicts
}

fn check_condition(condition: &Condition, event: &PolicyEvent, context: &Federation) -> Finding {
    let mut unresolved = None;
    let mut record = |finding: Finding| -> Option<Finding> {
        match finding {
            Finding::Holds(_) => Some(finding),
            Finding::Unresolvable(why) => {
                unresolved.get_or_insert(why);
                None
            }
            Finding::Clear => None,
        }
    };

    if *condition == Condition::ModelAdmissionViolation {
        if let Some(hit) = check_admission(event, context, &mut record) {
            return hit;
        }
        return unresolved.map_or(Finding::Clear, Finding::Unresolvable);
    }

    for id in &event.entities {
        let Some(entity) = event.lookup(context, id) else {
            record(Finding::Unresolvable(format!("entity {id} not found")));
            continue;
        };
        let finding = match condition {
            Condition::PurposeIncompatible => {
                match purpose_incompatible(entity.set_attr(keys::PURPOSE), event.processing_purposes.as_ref()) {
                    Ok(true) => Finding::Holds(format!(
                        "processing purposes {} not within purposes {} of {id}",
                        fmt_set(event.processing_purposes.as_ref()),
                        fmt_set(entity.set_attr(keys::PURPOSE)),
                    )),
                    Ok(false) => Finding::Clear,
                    Err(missing) => Finding::Unresolvable(format!("{missing} for {id}")),
                }
            }
            Condition::Expired => {
                if expired(entity, event.now) {
                    Finding::Holds(format!(
                        "{id} expired at {} (now {})",
                        entity.time_attr(keys::EXPIRY).unwrap_or_default(),
                        event.now
                    ))
                } else {
                    Finding::Clear
                }
            }
            Condition::ConsentMissingForAutomatedDecision => {
                match event.activity.as_ref().map(|a| (a, event.lookup(context, a))) {
                    None => Finding::Clear,
                    Some((a, None)) => Finding::Unresolvable(format!("activity {a} not found")),
                    Some((a, Some(activity))) => {
                        if consent_missing_for_automated_decision(entity, activity) {
                            Finding::Holds(format!(
                                "{a} makes automated decisions on personal data {id} without \"automated-decision\" consent"
                            ))
                        } else {
                            Finding::Clear
                        }
                    }
                }
            }
            Condition::UntrustedLineage { blacklist } => {
                if event.pending.iter().any(|n| &n.id == id) {
                    // No edges yet: the lineage is the node itself.
                    Finding::Clear
                } else {
                    match untrusted_lineage(context, id, blacklist) {
                        Ok(Some(agent)) => Finding::Holds(format!("lineage of {id} passes through untrusted agent {agent}")),
                        Ok(None) => Finding::Clear,
                        Err(why) => Finding::Unresolvable(why),
                    }
                }
            }
            Condition::ModelAdmissionViolation => unreachable!(),
        };
        if let Some(hit) = record(finding) {
            return hit;
        }
    }
    unresolved.map_or(Finding::Clear, Finding::Unresolvable)
}

fn check_admission(
    event: &PolicyEvent,
    context: &Federation,
    record: &mut impl FnMut(Finding) -> Option<Finding>,
) -> Option<Finding> {
    let mut models = Vec::new();
    let mut inputs = Vec::new();
    let mut scope_has_model = false;
    for id in &event.entities {
        match event.lookup(context, id) {
            Some(n) if n.set_attr(keys::ACCEPTED_SOURCES).is_some() => {
                scope_has_model = true;
                models.push(n);
            }
            Some(_) => inputs.push(id.clone()),
            None => {
                if let Some(hit) = record(Finding::Unresolvable(format!("entity {id} not found"))) {
                    return Some(hit);
                }
            }
        }
    }
    if let Some(activity) = &event.activity {
        for e in context.out_edges(activity).filter(|e| e.kind == EdgeKind::Used) {
            match context.node(&e.target) {
                Some(n) if n.set_attr(keys::ACCEPTED_SOURCES).is_some() => models.push(n),
                Some(n) if scope_has_model && !is_model(n) => inputs.push(n.id.clone()),
                _ => {}
            }
        }
    }
    for model in &models {
        for input in &inputs {
            let finding = match admission_offenders(context, input, model) {
                Ok(bad) if bad.is_empty() => Finding::Clear,
                Ok(bad) => Finding::Holds(format!(
                    "input {input} has lineage roots of type {} not accepted by model {} (accepts {})",
                    fmt_set(Some(&bad)),
                    model.id,
                    fmt_set(model.set_attr(keys::ACCEPTED_SOURCES)),
                )),
                Err(why) => Finding::Unresolvable(why),
            };
            if let Some(hit) = record(finding) {
                return Some(hit);
            }
        }
    }
    None
}

fn fmt_set(set: Option<&BTreeSet<String>>) -> String {
    match set {
        None => "(undeclared)".into(),
        Some(s) => format!("{{{}}}", s.iter().cloned().collect::<Vec<_>>().join(", ")),
    }
}

/// Names the attribute a purpose check needed but did not find.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MissingPurpose {
    EntityPurpose,
    ProcessingPurpose,
}

impl fmt::Display for MissingPurpose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MissingPurpose::EntityPurpose => "entity declares no purpose",
            MissingPurpose::ProcessingPurpose => "receiver declares no processing purpose",
        })
    }
}

/// True iff the declared processing purposes are not a subset of the
/// entity's collection purposes. Declaring no processing at all is
/// compatible; a missing declaration on either side is reported so the
/// rule's fail mode can decide.
pub fn purpose_incompatible(
    entity_purposes: Option<&BTreeSet<String>>,
    processing: Option<&BTreeSet<String>>,
) -> Result<bool, MissingPurpose> {
    let processing = processing.ok_or(MissingPurpose::ProcessingPurpose)?;
    if processing.is_empty() {
        return Ok(false);
    }
    let entity_purposes = entity_purposes.ok_or(MissingPurpose::EntityPurpose)?;
    Ok(!processing.is_subset(entity_purposes))
}

/// True iff the entity carries an expiry and `now` is past it.
pub fn expired(entity: &ProvNode, now: Tick) -> bool {
    entity.time_attr(keys::EXPIRY).is_some_and(|expiry| now > expiry)
}

/// Consent label that permits solely automated decisions.
pub const AUTOMATED_DECISION_CONSENT: &str = "automated-decision";

pub fn consent_missing_for_automated_decision(entity: &ProvNode, activity: &ProvNode) -> bool {
    activity.bool_attr(keys::AUTOMATED_DECISION) == Some(true)
        && entity.bool_attr(keys::PERSONAL_DATA) == Some(true)
        && !entity
            .set_attr(keys::CONSENTED_PURPOSES)
            .is_some_and(|c| c.contains(AUTOMATED_DECISION_CONSENT))
}

/// The first blacklisted agent (by id text) in the full lineage of `entity`.
/// Errors when no blacklisted agent is found but the lineage could not be
/// fully resolved.
pub fn untrusted_lineage(
    context: &Federation,
    entity: &QualifiedId,
    blacklist: &BTreeSet<QualifiedId>,
) -> Result<Option<QualifiedId>, String> {
    if blacklist.is_empty() {
        return Ok(None);
    }
    let pipeline = query::lineage(context, entity, UNBOUNDED, REGULATOR).map_err(|e| e.to_string())?;
    let mut hits: Vec<&QualifiedId> = pipeline
        .nodes
        .iter()
        .map(|n| &n.id)
        .filter(|id| blacklist.contains(id))
        .collect();
    hits.sort_by_key(|id| id.to_string());
    if let Some(hit) = hits.first() {
        return Ok(Some((*hit).clone()));
    }
    match pipeline.nodes.iter().find(|n| n.view == NodeView::Unresolvable) {
        Some(n) => Err(format!("lineage of {entity} reaches unresolvable {}", n.id)),
        None => Ok(None),
    }
}

/// Model artifacts are not data sources: they carry `accepted_sources` or
/// have node type `model`.
pub fn is_model(node: &ProvNode) -> bool {
    node.node_type == "model" || node.set_attr(keys::ACCEPTED_SOURCES).is_some()
}

fn is_data_entity(node: &ProvNode) -> bool {
    node.kind == NodeKind::Entity && !is_model(node)
}

/// Data entities in the lineage of `input` whose own lineage holds no other
/// data entity: the original sources the input was built from.
pub fn lineage_roots(context: &Federation, input: &QualifiedId) -> Result<Vec<QualifiedId>, String> {
    let pipeline = query::lineage(context, input, UNBOUNDED, REGULATOR).map_err(|e| e.to_string())?;
    if let Some(n) = pipeline.nodes.iter().find(|n| n.view == NodeView::Unresolvable) {
        return Err(format!("lineage of {input} reaches unresolvable {}", n.id));
    }
    let mut roots = Vec::new();
    for candidate in &pipeline.nodes {
        let Some(node) = context.node(&candidate.id) else { continue };
        if is_data_entity(node) && !reaches_other_data_entity(context, &node.id) {
            roots.push(node.id.clone());
        }
    }
    roots.sort_by_key(|id| id.to_string());
    Ok(roots)
}

fn reaches_other_data_entity(context: &Federation, start: &QualifiedId) -> bool {
    let mut seen = HashSet::from([start.clone()]);
    let mut queue = VecDeque::from([start.clone()]);
    while let Some(id) = queue.pop_front() {
        for (next, _) in query::neighbors(context, &id, Direction::Backward) {
            if !seen.insert(next.clone()) {
                continue;
            }
            if context.node(&next).is_some_and(is_data_entity) {
                return true;
            }
            queue.push_back(next);
        }
    }
    false
}

/// Node types of the input's lineage roots that the model does not accept.
/// A model without `accepted_sources` accepts everything.
pub fn admission_offenders(context: &Federation, input: &QualifiedId, model: &ProvNode) -> Result<BTreeSet<String>, String> {
    let Some(accepted) = model.set_attr(keys::ACCEPTED_SOURCES) else {
        return Ok(BTreeSet::new());
    };
    let mut bad = BTreeSet::new();
    for root in lineage_roots(context, input)? {
        let node_type = &context.node(&root).expect("roots are resolved").node_type;
        if !accepted.contains(node_type) {
            bad.insert(node_type.clone());
        }
    }
    Ok(bad)
}

/// True iff some lineage root of `input` has a node type outside the model's
/// accepted sources.
pub fn model_admission_violation(context: &Federation, input: &QualifiedId, model: &ProvNode) -> Result<bool, String> {
    admission_offenders(context, input, model).map(|bad| !bad.is_empty())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AttrValue, ProvEdge, Record};
    use crate::store::{ProvStore, Visibility};

    fn qid(s: &str) -> QualifiedId {
        s.parse().unwrap()
    }

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn purpose_examples() {
        assert_eq!(purpose_incompatible(Some(&set(&["analytics", "billing"])), Some(&set(&["billing"]))), Ok(false));
        assert_eq!(purpose_incompatible(Some(&set(&["analytics"])), Some(&set(&["advertising"]))), Ok(true));
        assert_eq!(purpose_incompatible(Some(&set(&["analytics"])), Some(&set(&[]))), Ok(false));
        assert_eq!(purpose_incompatible(None, Some(&set(&[]))), Ok(false));
        assert_eq!(
            purpose_incompatible(None, Some(&set(&["x"]))),
            Err(MissingPurpose::EntityPurpose)
        );
        assert_eq!(
            purpose_incompatible(Some(&set(&["x"])), None),
            Err(MissingPurpose::ProcessingPurpose)
        );
    }

    #[test]
    fn expiry_examples() {
        let e = ProvNode::new(qid("a:e"), NodeKind::Entity, "t", 0).with_attr(keys::EXPIRY, AttrValue::Time(10));
        assert!(expired(&e, 11));
        assert!(!expired(&e, 10));
        assert!(!expired(&ProvNode::new(qid("a:e"), NodeKind::Entity, "t", 0), 1_000));
    }

    #[test]
    fn consent_examples() {
        let act = ProvNode::new(qid("a:act"), NodeKind::Activity, "inference", 0).with_attr(keys::AUTOMATED_DECISION, true);
        let personal = ProvNode::new(qid("a:e"), NodeKind::Entity, "t", 0).with_attr(keys::PERSONAL_DATA, true);
        assert!(consent_missing_for_automated_decision(&personal, &act));
        let not_personal = ProvNode::new(qid("a:e"), NodeKind::Entity, "t", 0).with_attr(keys::PERSONAL_DATA, false);
        assert!(!consent_missing_for_automated_decision(&not_personal, &act));
        let consented = personal
            .clone()
            .with_attr(keys::CONSENTED_PURPOSES, AttrValue::set(["automated-decision"]));
        assert!(!consent_missing_for_automated_decision(&consented, &act));
        let manual = ProvNode::new(qid("a:act"), NodeKind::Activity, "review", 0);
        assert!(!consent_missing_for_automated_decision(&personal, &manual));
    }

    // bad-agent <-attributed- e0 <-derived- e1 <-derived- e2 ; model accepts sensor-reading
    fn chain_fed() -> Federation {
        let mut s = ProvStore::new("a").unwrap();
        let n = |id: &str, kind, ty: &str| Record::Node(ProvNode::new(qid(id), kind, ty, 0));
        let e = |a: &str, b: &str, k| Record::Edge(ProvEdge::new(qid(a), qid(b), k));
        s.append_all(vec![
            n("a:bad", NodeKind::Agent, "organization"),
            n("a:e0", NodeKind::Entity, "web-form"),
            e("a:e0", "a:bad", EdgeKind::WasAttributedTo),
            n("a:e1", NodeKind::Entity, "cleaned"),
            e("a:e1", "a:e0", EdgeKind::WasDerivedFrom),
            n("a:e2", NodeKind::Entity, "feature"),
            e("a:e2", "a:e1", EdgeKind::WasDerivedFrom),
            n("a:s0", NodeKind::Entity, "sensor-reading"),
            n("a:mix", NodeKind::Entity, "feature"),
            e("a:mix", "a:s0", EdgeKind::WasDerivedFrom),
            e("a:mix", "a:e1", EdgeKind::WasDerivedFrom),
            Record::Node(
                ProvNode::new(qid("a:model"), NodeKind::Entity, "model", 0)
                    .with_attr(keys::ACCEPTED_SOURCES, AttrValue::set(["sensor-reading"])),
            ),
        ])
        .unwrap();
        let mut fed = Federation::new();
        fed.add_store(s, Visibility::Full);
        fed
    }

    #[test]
    fn untrusted_lineage_examples() {
        let fed = chain_fed();
        let bad: BTreeSet<_> = [qid("a:bad")].into();
        assert_eq!(untrusted_lineage(&fed, &qid("a:e2"), &bad), Ok(Some(qid("a:bad"))));
        assert_eq!(untrusted_lineage(&fed, &qid("a:e2"), &BTreeSet::new()), Ok(None));
        assert_eq!(untrusted_lineage(&fed, &qid("a:s0"), &bad), Ok(None));
    }

    #[test]
    fn admission_examples() {
        let fed = chain_fed();
        let model = fed.node(&qid("a:model")).unwrap().clone();
        assert_eq!(model_admission_violation(&fed, &qid("a:s0"), &model), Ok(false));
        assert_eq!(model_admission_violation(&fed, &qid("a:mix"), &model), Ok(true));
        assert_eq!(
            admission_offenders(&fed, &qid("a:mix"), &model).unwrap(),
            set(&["web-form"])
        );
        assert_eq!(lineage_roots(&fed, &qid("a:mix")).unwrap(), vec![qid("a:e0"), qid("a:s0")]);
        let open_model = ProvNode::new(qid("a:m2"), NodeKind::Entity, "model", 0);
        assert_eq!(model_admission_violation(&fed, &qid("a:mix"), &open_model), Ok(false));
    }

    fn alert_rule(id: &str) -> PolicyRule {
        PolicyRule::new(
            id,
            &[Trigger::Use],
            Condition::Expired,
            Action::Alert {
                message: "{rule}: {witness}".into(),
            },
        )
    }

    fn expired_event(fed_entity: &str) -> PolicyEvent {
        let mut ev = PolicyEvent::new(Trigger::Use, 20, "use");
        ev.entities.push(qid(fed_entity));
        ev
    }

    fn expiring_fed() -> Federation {
        let mut s = ProvStore::new("a").unwrap();
        s.append(Record::Node(
            ProvNode::new(qid("a:old"), NodeKind::Entity, "t", 0).with_attr(keys::EXPIRY, AttrValue::Time(5)),
        ))
        .unwrap();
        let mut fed = Federation::new();
        fed.add_store(s, Visibility::Full);
        fed
    }

    #[test]
    fn evaluation_order_and_short_circuit() {
        let fed = expiring_fed();
        let ev = expired_event("a:old");
        assert!(RuleSet::empty().evaluate(&ev, &fed).is_empty());

        let two_alerts = RuleSet::new(vec![alert_rule("r2"), alert_rule("r1")]).unwrap();
        let v = two_alerts.evaluate(&ev, &fed);
        assert_eq!(v.len(), 2);
        assert_eq!(v[0].rule_id, "r1");
        assert!(v.iter().all(|v| v.outcome == Outcome::Alerted));
        assert_eq!(v[0].message.as_deref(), Some("r1: a:old expired at 5 (now 20)"));

        let block = PolicyRule::new("a-block", &[Trigger::Use], Condition::Expired, Action::Block);
        let rs = RuleSet::new(vec![alert_rule("b-alert"), block]).unwrap();
        let v = rs.evaluate(&ev, &fed);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].outcome, Outcome::Blocked);
        assert!(!v[0].explanation.is_empty());
        assert!(blocked(&v).is_some());

        // Trigger filtering.
        let mut other = ev.clone();
        other.trigger = Trigger::Transfer;
        assert!(rs.evaluate(&other, &fed).is_empty());
    }

    #[test]
    fn fail_modes_on_unresolvable_context() {
        let fed = expiring_fed();
        let ev = expired_event("z:missing");
        let closed = RuleSet::new(vec![PolicyRule::new("r", &[Trigger::Use], Condition::Expired, Action::Block)]).unwrap();
        assert_eq!(closed.evaluate(&ev, &fed)[0].outcome, Outcome::Blocked);
        let open = RuleSet::new(vec![
            PolicyRule::new("r", &[Trigger::Use], Condition::Expired, Action::Block).with_fail(FailMode::Open),
        ])
        .unwrap();
        assert_eq!(open.evaluate(&ev, &fed)[0].outcome, Outcome::Pass);
    }

    #[test]
    fn rule_file_parsing() {
        let text = r#"[
          {"id":"purpose","trigger":["transfer"],"condition":{"name":"purpose_incompatible"},"action":{"kind":"block"}},
          {"id":"lineage","trigger":["use","derivation"],"condition":{"name":"untrusted_lineage","params":{"blacklist":["a:bad"]}},
           "action":{"kind":"alert","params":{"message":"untrusted: {witness}"}},"fail":"closed"},
          {"id":"tag","trigger":["node-append"],"condition":{"name":"expired"},"action":{"kind":"annotate","params":{"key":"screened","value":"expired"}}}
        ]"#;
        let rs = RuleSet::from_json(text).unwrap();
        let ids: Vec<&str> = rs.rules().iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, vec!["lineage", "purpose", "tag"]);
        assert_eq!(rs.rules()[0].fail, FailMode::Closed);
        assert_eq!(rs.rules()[1].fail, FailMode::Closed);
        assert_eq!(rs.rules()[2].fail, FailMode::Open);

        let unknown = r#"[{"id":"x","trigger":["use"],"condition":{"name":"vibes"},"action":{"kind":"block"}}]"#;
        assert!(matches!(RuleSet::from_json(unknown), Err(PolicyError::UnknownCondition { .. })));
        let dup = r#"[{"id":"x","trigger":["use"],"condition":{"name":"expired"},"action":{"kind":"block"}},
                      {"id":"x","trigger":["use"],"condition":{"name":"expired"},"action":{"kind":"block"}}]"#;
        assert!(matches!(RuleSet::from_json(dup), Err(PolicyError::DuplicateRuleId(_))));
        let reserved = r#"[{"id":"x","trigger":["use"],"condition":{"name":"expired"},"action":{"kind":"annotate","params":{"key":"faulty","value":"y"}}}]"#;
        assert!(matches!(RuleSet::from_json(reserved), Err(PolicyError::InvalidRule { .. })));
    }
}
