mod common;

use std::collections::BTreeSet;

use common::{qid, scenario_path, BUNDLED, FIG2_ACTION};
use decprov_core::capture::ALERT_NODE_TYPE;
use decprov_core::model::keys;
use decprov_core::query::{self, UNBOUNDED};
use decprov_core::simulator::{self, inject_fault, load_scenario_file, ComponentKind, EventOutcome, RunResult, Scenario};
use decprov_core::store::REGULATOR;
use decprov_core::{NodeKind, ProvStore, QualifiedId};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn load(name: &str) -> Scenario {
    load_scenario_file(&scenario_path(name)).unwrap()
}

fn run(s: &Scenario) -> RunResult {
    simulator::run(s).unwrap()
}

#[test]
fn fig2_declares_the_figure_topology() {
    let s = load("fig2.scenario");
    assert_eq!(s.domains.len(), 2);
    let kinds: Vec<ComponentKind> = s.components.iter().map(|c| c.kind).collect();
    assert_eq!(
        kinds,
        [
            ComponentKind::Sensor,
            ComponentKind::Model,
            ComponentKind::Datastore,
            ComponentKind::Process,
            ComponentKind::Model,
            ComponentKind::Actuator
        ]
    );
}

#[test]
fn fig2_lineage_is_the_golden_set() {
    let r = run(&load("fig2.scenario"));
    assert!(r.events.iter().all(|e| e.outcome == EventOutcome::Ok), "{:#?}", r.events);
    let action = qid(FIG2_ACTION);
    assert_eq!(r.events.last().unwrap().produced.last(), Some(&action));
    assert_eq!(r.federation.node(&action).unwrap().node_type, "actuation");
    let p = query::lineage(&r.federation, &action, 64, REGULATOR).unwrap();
    assert_eq!(p.node_ids(), common::fig2_lineage_ids());
    assert!(!p.truncated);
    let agent_domains: BTreeSet<&str> = p.agents.iter().map(|a| a.domain.as_str()).collect();
    assert_eq!(agent_domains, BTreeSet::from(["orgA", "orgB"]));
    for (id, role) in common::FIG2_LINEAGE {
        let node = r.federation.node(&qid(id)).unwrap();
        if role.starts_with("sensor reading") {
            assert_eq!(node.node_type, "sensor-reading");
        }
        if role.starts_with("model") && role.ends_with("entity") {
            assert_eq!(node.node_type, "model");
        }
    }
}

#[test]
fn fig2_as_owner_redacts_the_other_organisation() {
    let r = run(&load("fig2.scenario"));
    let action = qid(FIG2_ACTION);
    let as_b = query::lineage(&r.federation, &action, 64, "orgB").unwrap();
    assert_eq!(as_b.node_ids(), common::fig2_lineage_ids());
    for n in &as_b.nodes {
        let is_agent = r.federation.node(&n.id).unwrap().kind == NodeKind::Agent;
        assert_eq!(n.is_redacted(), n.id.domain() == "orgA" && !is_agent, "{}", n.id);
    }
}

#[test]
fn faulty_first_reading_reaches_the_action() {
    let s = inject_fault(&load("fig2.scenario"), "temp-sensor", 0).unwrap();
    let r = run(&s);
    let first = qid("orgA:ent-1");
    assert_eq!(r.federation.node(&first).unwrap().bool_attr(keys::FAULTY), Some(true));
    let impact = query::impact(&r.federation, &first, UNBOUNDED, REGULATOR).unwrap().node_ids();
    for id in ["orgA:ent-4", "orgA:ent-5", "orgB:ent-1", "orgB:ent-2", "orgB:act-3", "orgB:ent-5", FIG2_ACTION] {
        assert!(impact.contains(&qid(id)), "{id}");
    }
    assert!(!impact.contains(&qid("orgB:ent-3")), "the other input is not downstream");
}

#[test]
fn faulty_actuator_affects_only_its_actuation() {
    let s = inject_fault(&load("fig2.scenario"), "hvac-actuator", 0).unwrap();
    let r = run(&s);
    let faulty: Vec<QualifiedId> = r
        .federation
        .stores()
        .flat_map(|s| s.nodes())
        .filter(|n| n.bool_attr(keys::FAULTY) == Some(true))
        .map(|n| n.id.clone())
        .collect();
    assert_eq!(faulty, vec![qid(FIG2_ACTION)]);
    let impact = query::impact(&r.federation, &faulty[0], UNBOUNDED, REGULATOR).unwrap();
    assert_eq!(impact.node_ids(), BTreeSet::from([qid(FIG2_ACTION)]));
}

#[test]
fn late_fault_changes_nothing() {
    let s = load("fig2.scenario");
    let base = run(&s);
    let late = run(&inject_fault(&s, "temp-sensor", 1_000).unwrap());
    for (a, b) in base.federation.stores().zip(late.federation.stores()) {
        assert_eq!(a.export_to_vec(), b.export_to_vec());
    }
}

/// Nodes with a faulty entity in their lineage equal the impact of the
/// faulty entities, restricted to nodes created at or after the fault.
fn check_fault_closure(r: &RunResult, fault_tick: u64) {
    let nodes: Vec<_> = r.federation.stores().flat_map(|s| s.nodes()).collect();
    let faulty: BTreeSet<QualifiedId> = nodes
        .iter()
        .filter(|n| n.bool_attr(keys::FAULTY) == Some(true))
        .map(|n| n.id.clone())
        .collect();
    let tainted: BTreeSet<QualifiedId> = nodes
        .iter()
        .filter(|n| {
            let lin = query::lineage(&r.federation, &n.id, UNBOUNDED, REGULATOR).unwrap();
            lin.nodes.iter().any(|m| faulty.contains(&m.id))
        })
        .map(|n| n.id.clone())
        .collect();
    let mut impacted = BTreeSet::new();
    for f in &faulty {
        for n in query::impact(&r.federation, f, UNBOUNDED, REGULATOR).unwrap().nodes {
            if r.federation.node(&n.id).unwrap().created_at >= fault_tick {
                impacted.insert(n.id);
            }
        }
    }
    assert_eq!(tainted, impacted);
}

#[test]
fn fault_closure_on_bundled_scenario() {
    let r = run(&load("faulty-sensor.scenario"));
    check_fault_closure(&r, 1);
    assert!(r.federation.node(&qid(FIG2_ACTION)).unwrap().bool_attr(keys::FAULTY).is_none());
    let faulty_reading = qid("orgA:ent-2");
    let impact = query::impact(&r.federation, &faulty_reading, UNBOUNDED, REGULATOR).unwrap();
    assert!(impact.node_ids().contains(&qid(FIG2_ACTION)));
}

#[test]
fn fault_closure_on_random_injections() {
    let s = load("fig2.scenario");
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let ids: Vec<String> = s.components.iter().map(|c| c.id.clone()).collect();
    for _ in 0..30 {
        let component = ids.choose(&mut rng).unwrap();
        let tick = rng.gen_range(0..9);
        let r = run(&inject_fault(&s, component, tick).unwrap());
        check_fault_closure(&r, tick);
    }
}

#[test]
fn purpose_violation_cascades() {
    let r = run(&load("purpose-violation.scenario"));
    assert_eq!(r.events.len(), 3);
    assert_eq!(r.events[0].outcome, EventOutcome::Ok);
    let EventOutcome::Blocked { rule, alert } = &r.events[1].outcome else {
        panic!("transfer not blocked: {:?}", r.events[1].outcome);
    };
    assert_eq!(rule, "purpose-limitation");
    assert_eq!(r.alerts, vec![alert.clone()]);
    assert_eq!(r.federation.node(alert).unwrap().node_type, ALERT_NODE_TYPE);
    assert!(matches!(&r.events[2].outcome, EventOutcome::Error { kind, .. } if kind == "UnknownNode"));
    // Nothing crossed the boundary.
    let insurer = r.federation.store("insurer").unwrap();
    assert!(insurer.nodes().all(|n| n.kind == NodeKind::Agent));
}

#[test]
fn consent_gate_blocks_the_use() {
    let r = run(&load("consent-gate.scenario"));
    let event = &r.events[1];
    assert!(matches!(&event.outcome, EventOutcome::Blocked { rule, .. } if rule == "automated-decision-consent"));
    let store = r.federation.store("lender").unwrap();
    let alerts: Vec<_> = store.nodes().filter(|n| n.node_type == ALERT_NODE_TYPE).collect();
    assert_eq!(alerts.len(), 1);
    assert_eq!(alerts[0].str_attr("event"), Some("use"));
    let application = qid("lender:ent-1");
    assert!(store.in_edges(&application).all(|e| e.kind != decprov_core::EdgeKind::Used));
    assert!(store.nodes().all(|n| n.node_type != "credit-decision"));
}

#[test]
fn new_advertiser_is_the_only_unexpected_flow() {
    let r = run(&load("new-advertiser.scenario"));
    let found = query::unexpected_flows(&r.federation, &r.flows);
    assert_eq!(found.len(), 1);
    assert_eq!((found[0].from_domain.as_str(), found[0].to_domain.as_str()), ("orgA", "orgC"));
    assert_eq!(query::observed_transfers(&r.federation).len(), 3);
    for name in ["fig2.scenario", "faulty-sensor.scenario"] {
        let r = run(&load(name));
        assert!(!query::observed_transfers(&r.federation).is_empty());
        assert!(query::unexpected_flows(&r.federation, &r.flows).is_empty(), "{name}");
    }
}

#[test]
fn bundled_scenarios_are_deterministic_and_round_trip() {
    for name in BUNDLED {
        let s = load(name);
        let a = run(&s);
        let b = run(&s);
        assert_eq!(a.events.len(), s.script.len(), "{name}");
        assert_eq!(a.events, b.events);
        for (x, y) in a.federation.stores().zip(b.federation.stores()) {
            let bytes = x.export_to_vec();
            assert_eq!(bytes, y.export_to_vec(), "{name}/{}", x.domain());
            assert_eq!(ProvStore::import(&bytes[..]).unwrap().head_hash(), x.head_hash());
        }
        for e in &a.events {
            if let EventOutcome::Blocked { alert, .. } = &e.outcome {
                assert_eq!(a.federation.node(alert).unwrap().node_type, ALERT_NODE_TYPE);
                assert!(e.alerts.contains(alert));
            }
        }
        let report = serde_json::to_string(&a.report(s.seed)).unwrap();
        assert_eq!(report, serde_json::to_string(&b.report(s.seed)).unwrap());
    }
}
