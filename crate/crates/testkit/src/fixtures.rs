//! Random building directories, policy stores and changes.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde_json::{json, Value as Json};

use iip_core::directory::DeviceRecord;
use iip_core::engine::{Alert, Change, Effect};
use iip_core::model::{PolicySpec, ResponseType};

pub const DEVICE_TYPES: &[&str] = &["heater", "ac", "light", "window", "thermostat", "oven", "appliance", "sensor"];
pub const ACTIONS: &[&str] = &["turn on", "turn off", "set temperature", "open"];
pub const ZONES: &[&str] = &["zone1", "zone2", "zone3", "zone4"];

/// A Brick/WoT-flavoured device document. Some devices also carry a legacy `meta.kind` label that
/// differs from their WoT type, so policies keyed on either path see different types.
pub fn device_document<R: Rng>(rng: &mut R, ty: &str) -> Json {
    let n = rng.random_range(1..=2);
    let feeds: Vec<&str> = ZONES.choose_multiple(rng, n).copied().collect();
    let mut property = json!({"on": {"status": rng.random_bool(0.5)}});
    if !matches!(ty, "window" | "thermostat" | "sensor") {
        property["power"] = json!({"value": rng.random_range(1..=30) * 100});
    }
    let mut doc = json!({
        "wot": {"type": ty, "property": property},
        "brick": {"links": {"feeds": feeds}},
    });
    if rng.random_bool(0.3) {
        let kind = if rng.random_bool(0.5) { ty } else { DEVICE_TYPES.choose(rng).unwrap() };
        doc["meta"] = json!({"kind": kind});
    }
    doc
}

pub fn random_device<R: Rng>(rng: &mut R, id: &str) -> DeviceRecord {
    let ty = DEVICE_TYPES.choose(rng).unwrap();
    DeviceRecord::new(id, device_document(rng, ty))
}

fn selector<R: Rng>(rng: &mut R, ty: &str, with_power: bool) -> Json {
    let type_path = if rng.random_bool(0.15) { "meta.kind" } else { "wot.type" };
    let mut attrs = json!({"type": type_path, "feeds": "brick.links.feeds", "on": "wot.property.on.status"});
    if with_power {
        attrs["power"] = "wot.property.power.value".into();
    }
    json!({"type": ty, "matchingAttribute": attrs})
}

/// A random policy that passes validation. Selectors only name types, attributes and
/// relationships; no device ids appear anywhere.
pub fn random_policy<R: Rng>(rng: &mut R, id: &str) -> PolicySpec {
    let object_type = if rng.random_bool(0.1) { "*" } else { DEVICE_TYPES.choose(rng).unwrap() };
    let use_power = rng.random_bool(0.3);
    let mut p = json!({
        "id": id,
        "action": ACTIONS.choose(rng).unwrap(),
        "objectDevice": selector(rng, object_type, use_power),
        "priority": rng.random_range(1..=9),
    });
    let subject = match rng.random_range(0..4) {
        0 => Some(selector(rng, "thermostat", false)),
        1 => Some(json!({"type": "app", "matchingAttribute": {"type": "wot.type"}})),
        2 if rng.random_bool(0.3) => Some(selector(rng, "*", false)),
        _ => None,
    };
    let has_subject = subject.is_some();
    if let Some(s) = subject {
        p["subjectDevice"] = s;
    }

    let mut relationship: String;
    let mut assertion: Option<String> = None;
    let mut targets = vec![];
    match rng.random_range(0..5) {
        // Existential over a zone-sharing device.
        0 | 1 => {
            let ty = DEVICE_TYPES.choose(rng).unwrap();
            p["affectedDevice"] = json!({"k": selector(rng, ty, false)});
            relationship = "set(objectDevice.feeds) & set(affectedDevice.k.feeds)".into();
            assertion = Some(if rng.random_bool(0.7) { "affectedDevice.k.on == True" } else { "not affectedDevice.k.on" }.into());
            if rng.random_bool(0.5) {
                targets.push("affectedDevice.k".to_string());
            }
        }
        // Aggregate over every powered device sharing a zone.
        2 => {
            let ty = *["heater", "ac", "oven", "appliance", "light"].choose(rng).unwrap();
            let mut sel = selector(rng, ty, true);
            sel["quantifier"] = "SET".into();
            p["affectedDevice"] = json!({"loads": sel});
            relationship = "len(set(objectDevice.feeds) & set(affectedDevice.loads.feeds)) > 0".into();
            let limit = rng.random_range(5..40) * 100;
            assertion = Some(format!("sum(affectedDevice.loads.power) > {limit}"));
        }
        // Two affected keys.
        3 => {
            let a = DEVICE_TYPES.choose(rng).unwrap();
            let b = DEVICE_TYPES.choose(rng).unwrap();
            p["affectedDevice"] = json!({"a": selector(rng, a, false), "b": selector(rng, b, false)});
            relationship = "affectedDevice.a.on or affectedDevice.b.on".into();
            assertion = Some("set(affectedDevice.a.feeds) & set(affectedDevice.b.feeds)".into());
        }
        // Object-only condition.
        _ => {
            relationship = if use_power {
                format!("objectDevice.power >= {}", rng.random_range(1..30) * 100)
            } else {
                "objectDevice.on == False".into()
            };
        }
    }
    if has_subject && rng.random_bool(0.3) {
        relationship = format!("({relationship}) and subjectDevice.type != 'sensor'");
    }
    p["relationship"] = relationship.into();
    if let Some(a) = assertion {
        p["assertion"] = a.into();
    }
    let response = *ResponseType::ALL.choose(rng).unwrap();
    p["response"] = json!(response);
    p["description"] = format!("{}: generated {id}", response.as_str()).into();
    if response != ResponseType::Approve && rng.random_bool(0.7) {
        p["alert"] = format!("{id} fired").into();
        if rng.random_bool(0.3) {
            targets.push("objectDevice".into());
        }
        if !targets.is_empty() {
            targets.insert(0, "subjectDevice".into());
            p["alertTargets"] = json!(targets);
        }
    }
    serde_json::from_value(p).expect("generated policy deserializes")
}

pub fn random_change<R: Rng>(rng: &mut R, change_id: &str, device_ids: &[String]) -> Change {
    let subject = if rng.random_bool(0.4) { None } else { device_ids.choose(rng).map(String::as_str) };
    let object = device_ids.choose(rng).expect("directory is not empty");
    let mut change = Change::new(change_id, subject, ACTIONS.choose(rng).unwrap(), object);
    change.timestamp = chrono::DateTime::UNIX_EPOCH;
    change
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub devices: Vec<DeviceRecord>,
    pub policies: Vec<PolicySpec>,
    pub changes: Vec<Change>,
}

impl Fixture {
    pub fn generate<R: Rng>(rng: &mut R, devices: usize, policies: usize, changes: usize) -> Self {
        let devices: Vec<DeviceRecord> = (0..devices).map(|i| random_device(rng, &format!("dev-{i:03}"))).collect();
        let policies = (0..policies).map(|i| random_policy(rng, &format!("p-{i:03}"))).collect();
        let ids: Vec<String> = devices.iter().map(|d| d.id.clone()).collect();
        let changes = (0..changes).map(|i| random_change(rng, &format!("c-{i:04}"), &ids)).collect();
        Self {
            devices,
            policies,
            changes,
        }
    }

    /// A random bijection from the fixture's device ids onto fresh ids.
    pub fn random_renaming<R: Rng>(&self, rng: &mut R) -> BTreeMap<String, String> {
        let mut fresh: Vec<String> = (0..self.devices.len())
            .map(|i| format!("{:08x}-{i}", rng.random::<u32>()))
            .collect();
        fresh.shuffle(rng);
        self.devices.iter().map(|d| d.id.clone()).zip(fresh).collect()
    }

    /// The same fixture with every device id replaced through `map`. Policies are untouched.
    pub fn renamed(&self, map: &BTreeMap<String, String>) -> Self {
        let rename = |id: &String| map.get(id).cloned().unwrap_or_else(|| id.clone());
        Self {
            devices: self
                .devices
                .iter()
                .map(|d| {
                    let mut d = d.clone();
                    d.id = rename(&d.id);
                    d
                })
                .collect(),
            policies: self.policies.clone(),
            changes: self
                .changes
                .iter()
                .map(|c| {
                    let mut c = c.clone();
                    c.subject_id = c.subject_id.as_ref().map(rename);
                    c.object_id = rename(&c.object_id);
                    c
                })
                .collect(),
        }
    }
}

/// `effect` with alert targets passed through `map` and alerts sorted, for comparison up to renaming.
pub fn effect_renamed(effect: &Effect, map: &BTreeMap<String, String>) -> Effect {
    let mut e = effect.clone();
    e.alerts = e
        .alerts
        .iter()
        .map(|a| Alert {
            target: map.get(&a.target).cloned().unwrap_or_else(|| a.target.clone()),
            message: a.message.clone(),
        })
        .collect();
    e.alerts.sort();
    e
}
