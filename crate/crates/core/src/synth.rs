//! Seeded synthetic workloads.
//!
//! Generates multi-domain federations by driving the capture API with a
//! random mix of emits, processing steps, cross-domain transfers and
//! activity communication. Used for property tests and performance runs.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::capture::{self, string_set, Recorder};
use crate::model::{keys, AttrValue, Attributes, QualifiedId, Tick};
use crate::policy::RuleSet;
use crate::store::{Federation, ProvStore, Visibility};

const PURPOSES: [&str; 4] = ["analytics", "billing", "research", "service"];
const ENTITY_TYPES: [&str; 4] = ["sensor-reading", "record", "inference", "report"];

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub seed: u64,
    pub domains: usize,
    /// Upper bound on the total number of records across all stores.
    pub records: usize,
    /// Number of distinct data subjects; 0 disables personal data.
    pub subjects: usize,
    /// Processing steps draw inputs from this many most recent entities.
    pub window: usize,
    pub max_inputs: usize,
    /// Probability that a step is a cross-domain transfer.
    pub transfer_rate: f64,
    /// Probability that a step advances the clock.
    pub tick_rate: f64,
    pub visibility: Visibility,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            domains: 3,
            records: 500,
            subjects: 10,
            window: 12,
            max_inputs: 3,
            transfer_rate: 0.15,
            tick_rate: 0.7,
            visibility: Visibility::Full,
        }
    }
}

/// Largest number of records a single step can append.
const STEP_BOUND: usize = 4 + 2 * 8;

struct Domain {
    recorder: Recorder,
    agents: Vec<QualifiedId>,
    entities: Vec<QualifiedId>,
    activities: Vec<QualifiedId>,
}

/// Builds a federation from `config`. Identical configs give identical
/// federations. Capture calls that are rejected (for example by the
/// temporal checks) are skipped.
pub fn generate(config: &SynthConfig) -> Federation {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut fed = Federation::new();
    let rules = Arc::new(RuleSet::empty());
    let mut domains: Vec<Domain> = (0..config.domains.max(1))
        .map(|i| {
            let name = format!("d{i}");
            fed.add_store(ProvStore::new(&name).expect("valid domain"), config.visibility);
            let mut recorder = Recorder::new(&name, rules.clone()).expect("valid domain");
            let org = recorder
                .register_agent(&mut fed, "org", "organization", Attributes::new())
                .expect("fresh agent");
            let mut agents = Vec::new();
            for p in 0..2 {
                let a = recorder
                    .register_agent(&mut fed, &format!("proc-{p}"), "software-process", Attributes::new())
                    .expect("fresh agent");
                recorder.delegate(&mut fed, &a, &org).expect("local delegation");
                agents.push(a);
            }
            Domain {
                recorder,
                agents,
                entities: Vec::new(),
                activities: Vec::new(),
            }
        })
        .collect();
    let mut now: Tick = 0;
    let max_inputs = config.max_inputs.clamp(1, 8);

    while fed.record_count() + STEP_BOUND <= config.records {
        if rng.gen_bool(config.tick_rate) {
            now += 1;
        }
        for d in &mut domains {
            d.recorder.advance_to(now).expect("clock moves forward");
        }
        let di = rng.gen_range(0..domains.len());
        let roll: f64 = rng.gen();
        let empty = domains[di].entities.is_empty();
        if empty || roll < 0.2 {
            emit(&mut fed, &mut domains[di], config, &mut rng);
        } else if roll < 0.2 + config.transfer_rate && domains.len() > 1 {
            let mut ri = rng.gen_range(0..domains.len() - 1);
            if ri >= di {
                ri += 1;
            }
            transfer(&mut fed, &mut domains, di, ri, config, &mut rng);
        } else if roll > 0.96 && domains[di].activities.len() > 1 {
            let d = &mut domains[di];
            let informed = d.activities[d.activities.len() - 1].clone();
            let informant = d.activities.choose(&mut rng).expect("non-empty").clone();
            if informed != informant {
                let _ = d.recorder.record_communication(&mut fed, &informed, &informant);
            }
        } else {
            process(&mut fed, &mut domains, di, config, max_inputs, &mut rng);
        }
    }
    fed
}

fn entity_attributes(config: &SynthConfig, rng: &mut ChaCha8Rng) -> Attributes {
    let mut a = Attributes::new();
    if config.subjects > 0 && rng.gen_bool(0.3) {
        a.insert(keys::PERSONAL_DATA.into(), AttrValue::Bool(true));
        a.insert(
            keys::DATA_SUBJECT.into(),
            AttrValue::from(format!("subject-{}", rng.gen_range(0..config.subjects))),
        );
    }
    let n = rng.gen_range(0..=2);
    if n > 0 {
        let purposes: Vec<&str> = PURPOSES.choose_multiple(rng, n).copied().collect();
        a.insert(keys::PURPOSE.into(), string_set(purposes));
    }
    a
}

fn emit(fed: &mut Federation, d: &mut Domain, config: &SynthConfig, rng: &mut ChaCha8Rng) {
    let agent = d.agents.choose(rng).expect("agents").clone();
    let Ok(act) = d.recorder.begin_activity(fed, &agent, "sensing", Attributes::new()) else {
        return;
    };
    d.activities.push(act.clone());
    let node_type = ENTITY_TYPES[0];
    if let Ok(e) = d.recorder.record_generation(fed, &act, node_type, entity_attributes(config, rng)) {
        d.entities.push(e);
    }
}

fn process(fed: &mut Federation, domains: &mut [Domain], di: usize, config: &SynthConfig, max_inputs: usize, rng: &mut ChaCha8Rng) {
    // Occasionally read directly from another domain's recent entities.
    let source = if domains.len() > 1 && rng.gen_bool(0.05) {
        rng.gen_range(0..domains.len())
    } else {
        di
    };
    let pool = &domains[source].entities;
    if pool.is_empty() {
        return;
    }
    let window = &pool[pool.len().saturating_sub(config.window.max(1))..];
    let k = rng.gen_range(1..=max_inputs.min(window.len()));
    let inputs: Vec<QualifiedId> = window.choose_multiple(rng, k).cloned().collect();
    let d = &mut domains[di];
    let agent = d.agents.choose(rng).expect("agents").clone();
    let Ok(act) = d.recorder.begin_activity(fed, &agent, "processing", Attributes::new()) else {
        return;
    };
    d.activities.push(act.clone());
    let mut used = Vec::new();
    for input in &inputs {
        if d.recorder.record_use(fed, &act, input).is_ok() {
            used.push(input.clone());
        }
    }
    let node_type = ENTITY_TYPES.choose(rng).expect("types");
    let Ok(out) = d.recorder.record_generation(fed, &act, node_type, entity_attributes(config, rng)) else {
        return;
    };
    d.entities.push(out.clone());
    let _ = d.recorder.record_derivation(fed, &out, &used);
}

fn transfer(fed: &mut Federation, domains: &mut [Domain], si: usize, ri: usize, config: &SynthConfig, rng: &mut ChaCha8Rng) {
    let pool = &domains[si].entities;
    let window = &pool[pool.len().saturating_sub(config.window.max(1))..];
    let entity = window.choose(rng).expect("non-empty").clone();
    let sender_agent = domains[si].agents[0].clone();
    let receiver_agent = domains[ri].agents[1].clone();
    let (sender, receiver) = pair_mut(domains, si, ri);
    if let Ok(receipt) = capture::record_transfer(
        fed,
        &mut sender.recorder,
        &mut receiver.recorder,
        &entity,
        &sender_agent,
        &receiver_agent,
    ) {
        sender.activities.push(receipt.transfer_activity);
        receiver.entities.push(receipt.alias_entity);
    }
}

fn pair_mut<T>(items: &mut [T], a: usize, b: usize) -> (&mut T, &mut T) {
    assert_ne!(a, b);
    if a < b {
        let (lo, hi) = items.split_at_mut(b);
        (&mut lo[a], &mut hi[0])
    } else {
        let (lo, hi) = items.split_at_mut(a);
        (&mut hi[0], &mut lo[b])
    }
}

/// A federation of about `records` records across four stores, for
/// performance runs.
pub fn desk_scale(records: usize, seed: u64) -> Federation {
    generate(&SynthConfig {
        seed,
        domains: 4,
        records,
        subjects: 50,
        window: 64,
        max_inputs: 3,
        transfer_rate: 0.05,
        tick_rate: 1.0,
        visibility: Visibility::Full,
    })
}
