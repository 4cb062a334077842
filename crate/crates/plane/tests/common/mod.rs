#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;

use chrono::{DateTime, TimeZone, Utc};
use rand::seq::IndexedRandom;
use rand::Rng;
use serde_json::json;

use iip_core::clock::FixedClock;
use iip_core::directory::{DeviceDirectory, DeviceRecord};
use iip_core::engine::{Alert, Change, Effect, FiredPolicy, PolicyEngine};
use iip_core::expr::{FunctionRegistry, Value};
use iip_core::model::{PolicySpec, ResponseType};
use iip_core::store::PolicyStore;
use iip_testkit::fixtures::Fixture;

pub const HEATER_POLICY: &str = r#"{
    "id": "bldg-0001",
    "description": "Double Check: turn on heater when AC is on for the same zone.",
    "type": "energy",
    "action": "turn on",
    "objectDevice": {"type": "heater", "matchingAttribute": {"type": "wot.type", "feeds": "brick.links.feeds"}},
    "affectedDevice": {
      "ac": {"type": "ac", "matchingAttribute": {"type": "wot.type", "feeds": "brick.links.feeds", "on": "wot.property.on.status"}}},
    "relationship": "set(objectDevice.feeds) & set(affectedDevice.ac.feeds)",
    "assertion": "affectedDevice.ac.on == True",
    "response": "Double Check",
    "alert": "AC is on. Confirm to proceed."
}"#;

pub const ALERT: &str = "AC is on. Confirm to proceed.";

pub fn device_json(id: &str, ty: &str, feeds: &[&str], on: bool) -> serde_json::Value {
    json!({
        "id": id,
        "document": {"wot": {"type": ty, "property": {"on": {"status": on}}}, "brick": {"links": {"feeds": feeds}}}
    })
}

pub fn device(id: &str, ty: &str, feeds: &[&str], on: bool) -> DeviceRecord {
    serde_json::from_value(device_json(id, ty, feeds, on)).unwrap()
}

pub fn heater_policy() -> PolicySpec {
    PolicySpec::from_json(HEATER_POLICY).unwrap()
}

pub fn fixed_clock() -> Arc<FixedClock> {
    Arc::new(FixedClock::new(Utc.with_ymd_and_hms(2025, 6, 1, 0, 0, 0).unwrap()))
}

pub fn empty_engine(clock: Arc<FixedClock>) -> PolicyEngine {
    let store = Arc::new(PolicyStore::new(FunctionRegistry::with_builtins(clock.clone()), clock.clone()));
    let directory = Arc::new(DeviceDirectory::new(clock));
    PolicyEngine::new(store, directory).with_token_secret(b"plane-tests")
}

pub fn load_fixture(fx: &Fixture, clock: Arc<FixedClock>) -> PolicyEngine {
    let engine = empty_engine(clock);
    for p in &fx.policies {
        engine.store().add(p.clone()).unwrap();
    }
    for d in &fx.devices {
        engine.directory().upsert(d.clone()).unwrap();
    }
    engine
}

fn word<R: Rng>(rng: &mut R) -> String {
    const ALPHABET: &[char] = &['a', 'Z', '0', '-', '_', ' ', '"', '\\', 'é', '\u{1F525}', '\n', '/'];
    let len = rng.random_range(0..12);
    (0..len).map(|_| *ALPHABET.choose(rng).unwrap()).collect()
}

fn number<R: Rng>(rng: &mut R) -> f64 {
    match rng.random_range(0..4) {
        0 => rng.random_range(-1000..1000) as f64,
        1 => rng.random::<f64>() * 1e-300,
        2 => f64::from_bits(rng.random::<u64>() & !(0x7ffu64 << 52) | ((rng.random_range(1..2046u64)) << 52)),
        _ => rng.random_range(-1e6..1e6),
    }
}

fn value<R: Rng>(rng: &mut R, depth: usize) -> Value {
    match rng.random_range(0..if depth == 0 { 4 } else { 5 }) {
        0 => Value::Null,
        1 => Value::Bool(rng.random()),
        2 => Value::Number(number(rng)),
        3 => Value::Str(word(rng)),
        _ => Value::List((0..rng.random_range(0..4)).map(|_| value(rng, depth - 1)).collect()),
    }
}

fn timestamp<R: Rng>(rng: &mut R) -> DateTime<Utc> {
    Utc.timestamp_opt(rng.random_range(0..4_000_000_000), rng.random_range(0..1_000_000_000)).unwrap()
}

pub fn random_change<R: Rng>(rng: &mut R) -> Change {
    let subject = rng.random_bool(0.5).then(|| word(rng));
    let mut change = Change::new(&format!("c-{}", rng.random::<u64>()), subject.as_deref(), &word(rng), &word(rng));
    let params: BTreeMap<String, Value> = (0..rng.random_range(0..4)).map(|_| (word(rng), value(rng, 2))).collect();
    change.parameters = params;
    change.timestamp = timestamp(rng);
    change
}

pub fn random_effect<R: Rng>(rng: &mut R) -> Effect {
    Effect {
        change_id: word(rng),
        decision: *ResponseType::ALL.choose(rng).unwrap(),
        fired: (0..rng.random_range(0..4))
            .map(|_| FiredPolicy {
                policy_id: word(rng),
                response: *ResponseType::ALL.choose(rng).unwrap(),
                priority: rng.random_range(1..=9),
            })
            .collect(),
        alerts: (0..rng.random_range(0..4))
            .map(|_| Alert {
                target: word(rng),
                message: word(rng),
            })
            .collect(),
        confirmation_token: rng.random_bool(0.3).then(|| format!("{:032x}", rng.random::<u128>())),
        timestamp: timestamp(rng),
    }
}
