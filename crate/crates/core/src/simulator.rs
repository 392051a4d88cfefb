//! Deterministic scenario runner.
//!
//! A scenario declares domains, the components each domain operates, the
//! expected cross-domain flows, a rule set, and a timestamped script. The
//! runner drives the script through the public [`Recorder`] API only, one
//! event at a time, and records one log entry per event.
//!
//! Scenario files are JSON:
//!
//! ```json
//! {
//!   "seed": 0,
//!   "domains": [{"name": "orgA", "visibility": "full",
//!                "agents": [{"id": "acme", "node_type": "organization"}]}],
//!   "components": [{"id": "sensor", "domain": "orgA", "kind": "sensor", "operator": "acme"}],
//!   "flows": [{"from": "orgA", "to": "orgB", "node_type": "sensor-reading"}],
//!   "rules": "rules/standard.json",
//!   "script": [
//!     {"tick": 0, "op": "emit", "component": "sensor", "node_type": "sensor-reading"},
//!     {"tick": 1, "op": "process", "component": "model", "inputs": [{"component": "sensor"}],
//!      "node_type": "inference"},
//!     {"tick": 2, "op": "transfer", "entity": {"component": "model"}, "from": "model", "to": "db"},
//!     {"tick": 3, "op": "inject_fault", "component": "sensor"}
//!   ]
//! }
//! ```
//!
//! `rules` is either an inline rule list or a path to a rule file, relative
//! to the scenario file. Input selectors name a component's most recent
//! output (highest `created_at`, ties by id text), optionally `offset`
//! outputs further back, or an explicit `entity` id. A component's outputs
//! include aliases it received by transfer.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::capture::{self, CaptureError, Recorder};
use crate::model::{attr_from_plain_json, keys, AttrValue, Attributes, QualifiedId, Tick};
use crate::policy::{PolicyError, PolicyVerdict, RuleSet};
use crate::query::FlowDeclaration;
use crate::store::{Federation, ProvStore, Visibility};

/// Largest tick representable exactly in every JSON implementation.
pub const MAX_TICK: Tick = (1 << 53) - 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("parse error at line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("unknown component {0:?}")]
    UnknownComponent(String),
    #[error("unknown domain {0:?}")]
    UnknownDomain(String),
    #[error("unknown agent {0:?}")]
    UnknownAgent(String),
    #[error("script event {index} at tick {tick} precedes tick {previous}")]
    NonMonotoneTimestamps { index: usize, tick: Tick, previous: Tick },
    #[error("tick {0} is out of range")]
    TickOutOfRange(Tick),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("rules: {0}")]
    Rules(#[from] PolicyError),
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

fn plain_attributes<'de, D: Deserializer<'de>>(d: D) -> Result<Attributes, D::Error> {
    let raw = serde_json::Map::<String, serde_json::Value>::deserialize(d)?;
    raw.iter()
        .map(|(k, v)| {
            attr_from_plain_json(k, v)
                .map(|a| (k.clone(), a))
                .ok_or_else(|| serde::de::Error::custom(format!("unsupported value for attribute {k:?}")))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub id: String,
    #[serde(default = "default_agent_type")]
    pub node_type: String,
    #[serde(default, deserialize_with = "plain_attributes")]
    pub attributes: Attributes,
    /// Local agent id, or a qualified id in another domain.
    #[serde(default)]
    pub on_behalf_of: Option<String>,
}

fn default_agent_type() -> String {
    "organization".into()
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub name: String,
    #[serde(default)]
    pub visibility: Visibility,
    #[serde(default)]
    pub agents: Vec<AgentSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ComponentKind {
    Sensor,
    Model,
    Datastore,
    Process,
    Actuator,
    HumanInput,
}

impl ComponentKind {
    /// Node type of the activities this kind of component performs.
    pub fn activity_type(self) -> &'static str {
        match self {
            ComponentKind::Sensor => "sensing",
            ComponentKind::Model => "inference",
            ComponentKind::Datastore => "storage",
            ComponentKind::Process => "query",
            ComponentKind::Actuator => "actuation",
            ComponentKind::HumanInput => "data-entry",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ComponentKind::Sensor => "sensor",
            ComponentKind::Model => "model",
            ComponentKind::Datastore => "datastore",
            ComponentKind::Process => "process",
            ComponentKind::Actuator => "actuator",
            ComponentKind::HumanInput => "human-input",
        }
    }

    fn agent_type(self) -> &'static str {
        match self {
            ComponentKind::HumanInput => "person",
            _ => "software-process",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentSpec {
    pub id: String,
    pub domain: String,
    pub kind: ComponentKind,
    /// Agent the component acts on behalf of (local id or qualified id).
    #[serde(default)]
    pub operator: Option<String>,
    /// Attributes of the component's Agent node.
    #[serde(default, deserialize_with = "plain_attributes")]
    pub attributes: Attributes,
    /// Attributes stamped on every Activity the component performs.
    #[serde(default, deserialize_with = "plain_attributes")]
    pub activity_attributes: Attributes,
    /// Attributes of the model artifact Entity, for `model` components.
    #[serde(default, deserialize_with = "plain_attributes")]
    pub model: Attributes,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum Selector {
    Entity {
        entity: QualifiedId,
    },
    Component {
        component: String,
        #[serde(default)]
        offset: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum EventOp {
    Emit {
        component: String,
        node_type: String,
        #[serde(default, deserialize_with = "plain_attributes")]
        attributes: Attributes,
    },
    Process {
        component: String,
        inputs: Vec<Selector>,
        node_type: String,
        #[serde(default, deserialize_with = "plain_attributes")]
        attributes: Attributes,
    },
    Transfer {
        entity: Selector,
        from: String,
        to: String,
    },
    InjectFault {
        component: String,
    },
}

impl EventOp {
    pub fn name(&self) -> &'static str {
        match self {
            EventOp::Emit { .. } => "emit",
            EventOp::Process { .. } => "process",
            EventOp::Transfer { .. } => "transfer",
            EventOp::InjectFault { .. } => "inject_fault",
        }
    }

    /// The component performing the event.
    pub fn component(&self) -> &str {
        match self {
            EventOp::Emit { component, .. } | EventOp::Process { component, .. } | EventOp::InjectFault { component } => component,
            EventOp::Transfer { from, .. } => from,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct ScriptEvent {
    pub tick: Tick,
    #[serde(flatten)]
    pub op: EventOp,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    #[serde(default)]
    seed: u64,
    domains: Vec<DomainSpec>,
    #[serde(default)]
    components: Vec<ComponentSpec>,
    #[serde(default)]
    flows: FlowDeclaration,
    #[serde(default)]
    rules: Option<serde_json::Value>,
    #[serde(default)]
    script: Vec<ScriptEvent>,
}

/// A validated scenario.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scenario {
    pub seed: u64,
    pub domains: Vec<DomainSpec>,
    pub components: Vec<ComponentSpec>,
    pub flows: FlowDeclaration,
    pub rules: RuleSet,
    pub script: Vec<ScriptEvent>,
}

/// Parses and validates a scenario; a rule-file reference is resolved
/// relative to the current directory.
pub fn load_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    load_scenario_with_base(text, Path::new("."))
}

pub fn load_scenario_file(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_scenario_with_base(&text, path.parent().unwrap_or(Path::new(".")))
}

pub fn load_scenario_with_base(text: &str, base: &Path) -> Result<Scenario, ScenarioError> {
    let file: ScenarioFile = serde_json::from_str(text).map_err(|e| ScenarioError::ParseError {
        line: e.line(),
        message: e.to_string(),
    })?;
    let rules = match file.rules {
        None => RuleSet::empty(),
        Some(serde_json::Value::String(rel)) => {
            let path = base.join(&rel);
            let text = std::fs::read_to_string(&path).map_err(|source| ScenarioError::Io {
                path: path.display().to_string(),
                source,
            })?;
            RuleSet::from_json(&text)?
        }
        Some(inline) => RuleSet::from_value(inline)?,
    };
    let scenario = Scenario {
        seed: file.seed,
        domains: file.domains,
        components: file.components,
        flows: file.flows,
        rules,
        script: file.script,
    };
    scenario.validate()?;
    Ok(scenario)
}

impl Scenario {
    pub fn component(&self, id: &str) -> Option<&ComponentSpec> {
        self.components.iter().find(|c| c.id == id)
    }

    pub fn domain(&self, name: &str) -> Option<&DomainSpec> {
        self.domains.iter().find(|d| d.name == name)
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        let mut names = BTreeSet::new();
        for d in &self.domains {
            QualifiedId::new(&d.name, "x").map_err(|e| ScenarioError::Invalid(e.to_string()))?;
            if !names.insert(d.name.as_str()) {
                return Err(ScenarioError::Invalid(format!("duplicate domain {:?}", d.name)));
            }
            let mut local = BTreeSet::new();
            for a in &d.agents {
                QualifiedId::new(&d.name, &a.id).map_err(|e| ScenarioError::Invalid(e.to_string()))?;
                if !local.insert(a.id.as_str()) {
                    return Err(ScenarioError::Invalid(format!("duplicate agent {:?} in {}", a.id, d.name)));
                }
            }
            for a in &d.agents {
                if let Some(p) = &a.on_behalf_of {
                    self.check_agent_ref(&d.name, p)?;
                }
            }
        }
        let mut ids = BTreeSet::new();
        for c in &self.components {
            let domain = self.domain(&c.domain).ok_or_else(|| ScenarioError::UnknownDomain(c.domain.clone()))?;
            QualifiedId::new(&c.domain, &c.id).map_err(|e| ScenarioError::Invalid(e.to_string()))?;
            if !ids.insert(c.id.as_str()) || domain.agents.iter().any(|a| a.id == c.id) {
                return Err(ScenarioError::Invalid(format!("duplicate component id {:?}", c.id)));
            }
            if let Some(op) = &c.operator {
                self.check_agent_ref(&c.domain, op)?;
            }
        }
        let known = |id: &str| -> Result<(), ScenarioError> {
            if self.component(id).is_some() {
                Ok(())
            } else {
                Err(ScenarioError::UnknownComponent(id.to_string()))
            }
        };
        let check_selector = |s: &Selector| match s {
            Selector::Component { component, .. } => known(component),
            Selector::Entity { .. } => Ok(()),
        };
        let mut previous = 0;
        for (index, event) in self.script.iter().enumerate() {
            if event.tick < previous {
                return Err(ScenarioError::NonMonotoneTimestamps {
                    index,
                    tick: event.tick,
                    previous,
                });
            }
            if event.tick > MAX_TICK {
                return Err(ScenarioError::TickOutOfRange(event.tick));
            }
            previous = event.tick;
            match &event.op {
                EventOp::Emit { component, .. } | EventOp::InjectFault { component } => known(component)?,
                EventOp::Process { component, inputs, .. } => {
                    known(component)?;
                    inputs.iter().try_for_each(check_selector)?;
                }
                EventOp::Transfer { entity, from, to } => {
                    known(from)?;
                    known(to)?;
                    check_selector(entity)?;
                }
            }
        }
        Ok(())
    }

    fn check_agent_ref(&self, domain: &str, reference: &str) -> Result<(), ScenarioError> {
        let (d, local) = reference.split_once(':').unwrap_or((domain, reference));
        let dom = self.domain(d).ok_or_else(|| ScenarioError::UnknownDomain(d.to_string()))?;
        if dom.agents.iter().any(|a| a.id == local) {
            Ok(())
        } else {
            Err(ScenarioError::UnknownAgent(reference.to_string()))
        }
    }
}

/// Returns a copy of the scenario in which every entity the component
/// outputs at or after `tick` is marked `faulty`.
pub fn inject_fault(scenario: &Scenario, component: &str, tick: Tick) -> Result<Scenario, ScenarioError> {
    if scenario.component(component).is_none() {
        return Err(ScenarioError::UnknownComponent(component.to_string()));
    }
    if tick > MAX_TICK {
        return Err(ScenarioError::TickOutOfRange(tick));
    }
    let mut out = scenario.clone();
    let at = out.script.iter().position(|e| e.tick >= tick).unwrap_or(out.script.len());
    out.script.insert(
        at,
        ScriptEvent {
            tick,
            op: EventOp::InjectFault {
                component: component.to_string(),
            },
        },
    );
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum EventOutcome {
    Ok,
    Blocked { rule: String, alert: QualifiedId },
    Error { kind: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EventRecord {
    pub index: usize,
    pub tick: Tick,
    pub op: String,
    pub component: String,
    pub outcome: EventOutcome,
    /// Nodes created by the event, in creation order.
    pub produced: Vec<QualifiedId>,
    pub verdicts: Vec<PolicyVerdict>,
    pub alerts: Vec<QualifiedId>,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub federation: Federation,
    pub events: Vec<EventRecord>,
    pub alerts: Vec<QualifiedId>,
    pub flows: FlowDeclaration,
}

/// Serialized form of a run, written next to the exported logs.
#[derive(Debug, Serialize)]
pub struct RunReport<'a> {
    pub format: &'static str,
    pub seed: u64,
    pub visibility: BTreeMap<&'a str, Visibility>,
    pub heads: BTreeMap<&'a str, String>,
    pub flows: &'a FlowDeclaration,
    pub events: &'a [EventRecord],
    pub alerts: &'a [QualifiedId],
}

pub const RUN_REPORT_FORMAT: &str = "decprov-run-report";

impl RunResult {
    pub fn report(&self, seed: u64) -> RunReport<'_> {
        RunReport {
            format: RUN_REPORT_FORMAT,
            seed,
            visibility: self
                .federation
                .domains()
                .map(|d| (d, self.federation.visibility(d).unwrap_or_default()))
                .collect(),
            heads: self
                .federation
                .stores()
                .map(|s| (s.domain(), hex::encode(s.head_hash())))
                .collect(),
            flows: &self.flows,
            events: &self.events,
            alerts: &self.alerts,
        }
    }

    /// Output entities of `op` events, in script order.
    pub fn produced_by(&self, index: usize) -> &[QualifiedId] {
        &self.events[index].produced
    }
}

struct Runner<'s> {
    scenario: &'s Scenario,
    federation: Federation,
    recorders: BTreeMap<String, Recorder>,
    agents: HashMap<String, QualifiedId>,
    models: HashMap<String, QualifiedId>,
    outputs: HashMap<String, Vec<(Tick, QualifiedId)>>,
    faulty: BTreeSet<String>,
}

/// Executes the scenario script. Capture failures become event outcomes;
/// the run itself only fails if setup (agent rosters) cannot be recorded.
pub fn run(scenario: &Scenario) -> Result<RunResult, CaptureError> {
    let mut runner = Runner::new(scenario)?;
    let mut events = Vec::with_capacity(scenario.script.len());
    let mut alerts = Vec::new();
    for (index, event) in scenario.script.iter().enumerate() {
        let mut produced = Vec::new();
        let result = runner.step(event, &mut produced);
        let mut verdicts = Vec::new();
        let mut event_alerts = Vec::new();
        for rec in runner.recorders.values_mut() {
            verdicts.extend(rec.take_verdicts());
            event_alerts.extend(rec.take_alerts());
        }
        let outcome = match result {
            Ok(()) => EventOutcome::Ok,
            Err(CaptureError::PolicyBlocked { rule, alert, .. }) => EventOutcome::Blocked { rule, alert },
            Err(e) => EventOutcome::Error {
                kind: e.kind_name().to_string(),
                message: e.to_string(),
            },
        };
        alerts.extend(event_alerts.iter().cloned());
        events.push(EventRecord {
            index,
            tick: event.tick,
            op: event.op.name().to_string(),
            component: event.op.component().to_string(),
            outcome,
            produced,
            verdicts,
            alerts: event_alerts,
        });
    }
    Ok(RunResult {
        federation: runner.federation,
        events,
        alerts,
        flows: scenario.flows.clone(),
    })
}

impl<'s> Runner<'s> {
    fn new(scenario: &'s Scenario) -> Result<Self, CaptureError> {
        let rules = Arc::new(scenario.rules.clone());
        let mut federation = Federation::new();
        let mut recorders = BTreeMap::new();
        for d in &scenario.domains {
            federation.add_store(ProvStore::new(&d.name)?, d.visibility);
            recorders.insert(d.name.clone(), Recorder::new(&d.name, rules.clone())?);
        }
        let mut runner = Self {
            scenario,
            federation,
            recorders,
            agents: HashMap::new(),
            models: HashMap::new(),
            outputs: HashMap::new(),
            faulty: BTreeSet::new(),
        };
        runner.register_rosters()?;
        for rec in runner.recorders.values_mut() {
            rec.take_verdicts();
            rec.take_alerts();
        }
        Ok(runner)
    }

    fn agent_ref(domain: &str, reference: &str) -> Result<QualifiedId, CaptureError> {
        Ok(match reference.split_once(':') {
            Some(_) => reference.parse()?,
            None => QualifiedId::new(domain, reference)?,
        })
    }

    fn register_rosters(&mut self) -> Result<(), CaptureError> {
        let scenario = self.scenario;
        for d in &scenario.domains {
            let rec = self.recorders.get_mut(&d.name).expect("recorder per domain");
            for a in &d.agents {
                rec.register_agent(&mut self.federation, &a.id, &a.node_type, a.attributes.clone())?;
            }
        }
        for c in &scenario.components {
            let rec = self.recorders.get_mut(&c.domain).expect("recorder per domain");
            let mut attributes = c.attributes.clone();
            attributes.insert("component_kind".into(), AttrValue::from(c.kind.as_str()));
            let id = rec.register_agent(&mut self.federation, &c.id, c.kind.agent_type(), attributes)?;
            self.agents.insert(c.id.clone(), id);
        }
        // Delegations once every agent exists, so cross-domain principals resolve.
        for d in &scenario.domains {
            let rec = self.recorders.get_mut(&d.name).expect("recorder per domain");
            for a in &d.agents {
                if let Some(p) = &a.on_behalf_of {
                    let agent = QualifiedId::new(&d.name, &a.id)?;
                    rec.delegate(&mut self.federation, &agent, &Self::agent_ref(&d.name, p)?)?;
                }
            }
        }
        for c in &scenario.components {
            if let Some(op) = &c.operator {
                let rec = self.recorders.get_mut(&c.domain).expect("recorder per domain");
                rec.delegate(&mut self.federation, &self.agents[&c.id], &Self::agent_ref(&c.domain, op)?)?;
            }
        }
        Ok(())
    }

    fn step(&mut self, event: &ScriptEvent, produced: &mut Vec<QualifiedId>) -> Result<(), CaptureError> {
        for rec in self.recorders.values_mut() {
            rec.advance_to(event.tick)?;
        }
        let scenario = self.scenario;
        match &event.op {
            EventOp::InjectFault { component } => {
                self.faulty.insert(component.clone());
                Ok(())
            }
            EventOp::Emit {
                component,
                node_type,
                attributes,
            } => {
                let spec = scenario.component(component).expect("validated");
                let agent = self.agents[component].clone();
                let rec = self.recorders.get_mut(&spec.domain).expect("validated");
                let act = rec.begin_activity(
                    &mut self.federation,
                    &agent,
                    spec.kind.activity_type(),
                    spec.activity_attributes.clone(),
                )?;
                produced.push(act.clone());
                let attrs = self.output_attributes(component, attributes);
                let rec = self.recorders.get_mut(&spec.domain).expect("validated");
                let ent = rec.record_generation(&mut self.federation, &act, node_type, attrs)?;
                produced.push(ent.clone());
                self.outputs.entry(component.clone()).or_default().push((event.tick, ent));
                Ok(())
            }
            EventOp::Process {
                component,
                inputs,
                node_type,
                attributes,
            } => {
                let spec = scenario.component(component).expect("validated");
                let resolved = inputs.iter().map(|s| self.select(s)).collect::<Result<Vec<_>, _>>()?;
                let agent = self.agents[component].clone();
                let model = if spec.kind == ComponentKind::Model {
                    Some(self.model_entity(spec, produced)?)
                } else {
                    None
                };
                let attrs = self.output_attributes(component, attributes);
                let fed = &mut self.federation;
                let rec = self.recorders.get_mut(&spec.domain).expect("validated");
                let act = rec.begin_activity(fed, &agent, spec.kind.activity_type(), spec.activity_attributes.clone())?;
                produced.push(act.clone());
                if let Some(model) = &model {
                    rec.record_use(fed, &act, model)?;
                }
                for input in &resolved {
                    rec.record_use(fed, &act, input)?;
                }
                let ent = rec.record_generation(fed, &act, node_type, attrs)?;
                produced.push(ent.clone());
                rec.record_derivation(fed, &ent, &resolved)?;
                self.outputs.entry(component.clone()).or_default().push((event.tick, ent));
                Ok(())
            }
            EventOp::Transfer { entity, from, to } => {
                let entity = self.select(entity)?;
                let from_spec = scenario.component(from).expect("validated");
                let to_spec = scenario.component(to).expect("validated");
                if from_spec.domain == to_spec.domain {
                    return Err(CaptureError::SameDomainTransfer(from_spec.domain.clone()));
                }
                let mut sender = self.recorders.remove(&from_spec.domain).expect("validated");
                let receiver = self.recorders.get_mut(&to_spec.domain).expect("validated");
                let result = capture::record_transfer(
                    &mut self.federation,
                    &mut sender,
                    receiver,
                    &entity,
                    &self.agents[from],
                    &self.agents[to],
                );
                self.recorders.insert(from_spec.domain.clone(), sender);
                let receipt = result?;
                produced.push(receipt.transfer_activity.clone());
                produced.push(receipt.alias_entity.clone());
                self.outputs.entry(to.clone()).or_default().push((event.tick, receipt.alias_entity));
                Ok(())
            }
        }
    }

    fn output_attributes(&self, component: &str, attributes: &Attributes) -> Attributes {
        let mut attrs = attributes.clone();
        if self.faulty.contains(component) {
            attrs.insert(keys::FAULTY.into(), AttrValue::Bool(true));
        }
        attrs
    }

    /// The model artifact of a model component, declared on first use.
    fn model_entity(&mut self, spec: &ComponentSpec, produced: &mut Vec<QualifiedId>) -> Result<QualifiedId, CaptureError> {
        if let Some(id) = self.models.get(&spec.id) {
            return Ok(id.clone());
        }
        let rec = self.recorders.get_mut(&spec.domain).expect("validated");
        let id = rec.declare_entity(&mut self.federation, "model", spec.model.clone(), Some(&self.agents[&spec.id]))?;
        produced.push(id.clone());
        self.models.insert(spec.id.clone(), id.clone());
        Ok(id)
    }

    fn select(&self, selector: &Selector) -> Result<QualifiedId, CaptureError> {
        match selector {
            Selector::Entity { entity } => {
                if self.federation.node(entity).is_some() {
                    Ok(entity.clone())
                } else {
                    Err(CaptureError::UnknownNode(entity.clone()))
                }
            }
            Selector::Component { component, offset } => {
                let mut outputs: Vec<(Tick, String, &QualifiedId)> = self
                    .outputs
                    .get(component)
                    .into_iter()
                    .flatten()
                    .map(|(t, id)| (*t, id.to_string(), id))
                    .collect();
                outputs.sort_by(|a, b| (b.0, &b.1).cmp(&(a.0, &a.1)));
                outputs.get(*offset).map(|(_, _, id)| (*id).clone()).ok_or_else(|| {
                    let domain = &self.scenario.component(component).expect("validated").domain;
                    let missing = QualifiedId::new(domain, &format!("{component}.output-{offset}"))
                        .unwrap_or_else(|_| QualifiedId::new(domain, "unknown").expect("valid"));
                    CaptureError::UnknownNode(missing)
                })
            }
        }
    }
}
