//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and exits non-zero if any fail.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use chrono::Duration as Span;
use http_body_util::BodyExt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value as Json};
use tokio::runtime::Runtime;
use tower::ServiceExt;

use common::{
    device, device_json, empty_engine, fixed_clock, heater_policy, load_fixture, random_change as random_wire_change, random_effect, ALERT,
    HEATER_POLICY,
};
use hazard_sim::{fit_models, majority, run_vote_sweep, ScenarioSpec};
use iip_core::clock::Clock;
use iip_core::directory::DeviceRecord;
use iip_core::engine::{Change, Effect, EngineConfig, CONFIRMATION_TOKEN_PARAM};
use iip_core::expr::Value;
use iip_core::model::ResponseType;
use iip_core::store::StoreSnapshot;
use iip_plane::service::{publish_change, publish_confirmation, EFFECTS_FILTER};
use iip_plane::{effect_targets, http, InProcessBroker, Message, PlaneService, PubSub, Subscription};
use iip_testkit::exprgen::check_many;
use iip_testkit::fixtures::{effect_renamed, random_change, random_policy, Fixture};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if let false = $cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("heater double check end-to-end", heater_double_check_end_to_end),
        ("identity independence", identity_independence),
        ("forward compatibility", forward_compatibility),
        ("retrieval superset", retrieval_superset),
        ("expression oracle", expression_oracle),
        ("voting monotonicity", voting_monotonicity),
        ("transport interchangeability", transport_interchangeability),
        ("throughput smoke", throughput_smoke),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS [{}] {name} ({elapsed:.2}s): {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL [{}] {name} ({elapsed:.2}s): {detail}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

async fn post(app: &axum::Router, uri: &str, body: Json) -> (StatusCode, Json) {
    let req = Request::post(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Json::Null))
}

fn heater_double_check_end_to_end() -> Outcome {
    let start = Instant::now();
    let rt = Runtime::new().unwrap();
    rt.block_on(async {
        let app = http::router(Arc::new(empty_engine(fixed_clock())));
        let (s, _) = post(&app, "/v1/policies", serde_json::from_str(HEATER_POLICY).unwrap()).await;
        ensure!(s == StatusCode::CREATED, "policy POST returned {s}");
        for d in [device_json("heater-1", "heater", &["zone1"], false), device_json("ac-1", "ac", &["zone1"], true)] {
            let (s, _) = post(&app, "/v1/devices", d).await;
            ensure!(s == StatusCode::CREATED, "device POST returned {s}");
        }
        let change = json!({"change_id": "c1", "action": "turn on", "object_id": "heater-1"});
        let (s, effect) = post(&app, "/v1/changes", change.clone()).await;
        ensure!(s == StatusCode::OK, "change POST returned {s}");
        ensure!(effect["decision"] == "DOUBLE_CHECK", "AC on: decision {}", effect["decision"]);
        let alerts = effect["alerts"].as_array().cloned().unwrap_or_default();
        ensure!(
            alerts.len() == 1 && alerts[0]["message"] == ALERT,
            "alerts {alerts:?}"
        );
        post(&app, "/v1/devices", device_json("ac-1", "ac", &["zone1"], false)).await;
        let (_, effect) = post(&app, "/v1/changes", json!({"change_id": "c2", "action": "turn on", "object_id": "heater-1"})).await;
        ensure!(effect["decision"] == "APPROVE", "AC off: decision {}", effect["decision"]);
        Ok(())
    })?;
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    Ok(format!("DOUBLE_CHECK with the expected alert, then APPROVE, in {} ms", elapsed.as_millis()))
}

fn identity_independence() -> Outcome {
    let (mut changes, mut fired, mut alerts) = (0, 0, 0);
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fx = Fixture::generate(&mut rng, 12, 25, 30);
        let map = fx.random_renaming(&mut rng);
        let renamed = fx.renamed(&map);
        let a = load_fixture(&fx, fixed_clock());
        let b = load_fixture(&renamed, fixed_clock());
        for (c1, c2) in fx.changes.iter().zip(&renamed.changes) {
            let e1 = a.evaluate_change(c1).map_err(|e| e.to_string())?;
            let e2 = b.evaluate_change(c2).map_err(|e| e.to_string())?;
            ensure!(
                effect_renamed(&e1, &map) == effect_renamed(&e2, &BTreeMap::new()),
                "fixture {seed}, change {}: {e1:?} vs {e2:?}",
                c1.change_id
            );
            changes += 1;
            fired += e1.fired.len();
            alerts += e1.alerts.len();
        }
    }
    ensure!(fired > 0 && alerts > 0, "fixtures never fired a policy");
    Ok(format!("100 fixtures, {changes} changes, {fired} firings and {alerts} alerts equal up to renaming"))
}

fn forward_compatibility() -> Outcome {
    let engine = empty_engine(fixed_clock());
    engine.store().add(heater_policy()).map_err(|e| e.to_string())?;
    let before = engine.store().get("bldg-0001").unwrap().spec.clone();
    engine.directory().upsert(device("ac-1", "ac", &["zone1"], true)).unwrap();
    engine.directory().upsert(device("ac-2", "ac", &["zone2"], false)).unwrap();

    // Devices registered after the policy exists.
    engine.directory().upsert(device("heater-new", "heater", &["zone1"], false)).unwrap();
    engine.directory().upsert(device("heater-other", "heater", &["zone2"], false)).unwrap();
    let e = engine
        .evaluate_change(&Change::new("c1", None, "turn on", "heater-new"))
        .map_err(|e| e.to_string())?;
    ensure!(e.decision == ResponseType::DoubleCheck, "new heater in zone1: {:?}", e.decision);
    ensure!(e.fired.iter().any(|f| f.policy_id == "bldg-0001"), "policy did not fire");
    let e = engine
        .evaluate_change(&Change::new("c2", None, "turn on", "heater-other"))
        .map_err(|e| e.to_string())?;
    ensure!(e.decision == ResponseType::Approve, "new heater in zone2: {:?}", e.decision);

    ensure!(engine.store().len() == 1, "store changed");
    ensure!(engine.store().get("bldg-0001").unwrap().spec == before, "policy was edited");
    Ok("heaters registered after the policy are governed by it unchanged".into())
}

fn projected_types(record: &DeviceRecord, paths: &BTreeSet<String>) -> BTreeSet<String> {
    let mut out: BTreeSet<String> = paths
        .iter()
        .filter_map(|p| match record.resolve_path(p) {
            Some(Value::Str(t)) => Some(t.trim().to_lowercase()),
            _ => None,
        })
        .collect();
    if out.is_empty() {
        out.insert(String::new());
    }
    out
}

/// Linear scan over every stored policy for one (subject type, action, object type) query.
fn brute_force(store: &StoreSnapshot, s: &str, a: &str, o: &str, at: chrono::DateTime<chrono::Utc>) -> Vec<String> {
    let mut hits: Vec<(u8, String)> = store
        .policies()
        .filter(|p| {
            let spec = &p.spec;
            let obj = spec.object_device.device_type.trim().to_lowercase();
            let subj = spec
                .subject_device
                .as_ref()
                .map(|d| d.device_type.trim().to_lowercase())
                .unwrap_or_else(|| "*".into());
            spec.action.trim().to_lowercase() == a.trim().to_lowercase()
                && (obj == "*" || obj == o)
                && (subj == "*" || subj == s)
                && spec.expiration.is_none_or(|e| e > at)
        })
        .map(|p| (p.spec.priority, p.id().to_string()))
        .collect();
    hits.sort();
    hits.into_iter().map(|(_, id)| id).collect()
}

fn retrieval_superset() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let (mut changes, mut fired, mut queries, mut retrieved, mut largest) = (0, 0, 0, 0, 0);
    while changes < 1000 {
        let n_policies = if changes == 0 { 200 } else { rng.random_range(1..=200) };
        largest = largest.max(n_policies);
        let clock = fixed_clock();
        let mut fx = Fixture::generate(&mut rng, 25, 0, 0);
        fx.policies = (0..n_policies)
            .map(|i| {
                let mut p = random_policy(&mut rng, &format!("p-{i:03}"));
                if rng.random_bool(0.15) {
                    p.expiration = Some(clock.now() + Span::days(rng.random_range(-5..5)));
                }
                p
            })
            .collect();
        let indexed = load_fixture(&fx, clock.clone());
        let full_engine = load_fixture(&fx, clock.clone()).with_config(EngineConfig {
            use_index: false,
            ..EngineConfig::default()
        });
        let store = indexed.store().snapshot();
        let dir = indexed.directory().snapshot();
        let obj_paths: BTreeSet<String> = store
            .policies()
            .filter_map(|p| p.spec.object_device.type_path().map(str::to_string))
            .collect();
        let subj_paths: BTreeSet<String> = store
            .policies()
            .filter_map(|p| p.spec.subject_device.as_ref()?.type_path().map(str::to_string))
            .collect();
        let ids: Vec<String> = fx.devices.iter().map(|d| d.id.clone()).collect();
        for _ in 0..100 {
            let c = random_change(&mut rng, &format!("c-{changes:04}"), &ids);
            changes += 1;
            let full = full_engine.evaluate_change(&c).map_err(|e| e.to_string())?;
            let fast = indexed.evaluate_change(&c).map_err(|e| e.to_string())?;
            ensure!(full == fast, "indexed and full evaluation differ on {}", c.change_id);
            fired += full.fired.len();

            let subject = c.subject_id.as_ref().map(|id| dir.get(id).unwrap().as_ref());
            let object = dir.get(&c.object_id).unwrap();
            let at = clock.now();
            let got: BTreeSet<String> = indexed
                .retrieve(&store, subject, &c.action, object, at)
                .iter()
                .map(|p| p.id().to_string())
                .collect();
            retrieved += got.len();
            for f in &full.fired {
                ensure!(got.contains(&f.policy_id), "{} fired on {} but was not retrieved", f.policy_id, c.change_id);
            }

            let subject_types = match subject {
                None => BTreeSet::from(["app".to_string()]),
                Some(r) => projected_types(r, &subj_paths),
            };
            let mut union = BTreeSet::new();
            for s in &subject_types {
                for o in &projected_types(object, &obj_paths) {
                    let want = brute_force(&store, s, &c.action, o, at);
                    let have: Vec<String> = store.relevant_policies(s, &c.action, o, at).iter().map(|p| p.id().to_string()).collect();
                    ensure!(have == want, "relevant_policies({s}, {}, {o}) = {have:?}, scan = {want:?}", c.action);
                    queries += 1;
                    union.extend(want);
                }
            }
            ensure!(got == union, "retrieval for {} differs from the scan union", c.change_id);
        }
    }
    ensure!(fired > 0, "no policy ever fired");
    Ok(format!(
        "{changes} changes over stores of up to {largest} policies: {fired} firings all retrieved, {queries} index queries equal to the scan ({retrieved} candidates)"
    ))
}

fn expression_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2025);
    let stats = check_many(&mut rng, 10_000, 5)?;
    Ok(format!("10000 expressions agree and round-trip: {stats:?}"))
}

fn voting_monotonicity() -> Outcome {
    let start = Instant::now();
    let spec = ScenarioSpec::overlap_1sigma();
    let ks = [1, 3, majority(8), 8];
    ensure!(majority(8) == 5, "majority of 8 is {}", majority(8));
    let mut detected = [0usize; 4];
    let mut latency = [0f64; 4];
    let mut episodes = 0;
    for seed in 0..20u64 {
        let (train, test) = spec.traces(seed).map_err(|e| e.to_string())?;
        let models = fit_models(&train).map_err(|e| e.to_string())?;
        let r = run_vote_sweep(&models, &test, &ks).map_err(|e| e.to_string())?;
        for w in r.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            ensure!(b.detection_rate <= a.detection_rate, "seed {seed}: detection rate rises from k={} to k={}", a.k, b.k);
            ensure!(b.total_alerts <= a.total_alerts, "seed {seed}: alerts rise from k={} to k={}", a.k, b.k);
            ensure!(b.false_positives <= a.false_positives, "seed {seed}: false positives rise from k={} to k={}", a.k, b.k);
            ensure!(
                b.mean_detection_latency >= a.mean_detection_latency,
                "seed {seed}: latency falls from k={} to k={}",
                a.k,
                b.k
            );
        }
        for (i, m) in r.iter().enumerate() {
            detected[i] += m.detected;
            latency[i] += m.mean_detection_latency;
        }
        episodes += r[0].episodes;
    }
    let rate = |i: usize| detected[i] as f64 / episodes as f64;
    let spread = rate(0) - rate(2);
    ensure!(spread >= 0.10, "k=1 vs majority spread {:.1} pp < 10 pp", spread * 100.0);
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
    Ok(format!(
        "pooled detection over {episodes} episodes: k=1 {:.2}%, k=3 {:.2}%, k=5 {:.2}%, k=8 {:.2}%; spread {:.1} pp; mean latency k=1 {:.3}, k=3 {:.3}, k=5 {:.3}, k=8 {:.3}",
        rate(0) * 100.0,
        rate(1) * 100.0,
        rate(2) * 100.0,
        rate(3) * 100.0,
        spread * 100.0,
        latency[0] / 20.0,
        latency[1] / 20.0,
        latency[2] / 20.0,
        latency[3] / 20.0
    ))
}

async fn drain(sub: &mut Subscription, n: usize) -> Result<Vec<(String, Effect)>, String> {
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let d = tokio::time::timeout(Duration::from_secs(5), sub.recv())
            .await
            .map_err(|_| format!("timed out after {} of {n} effects", out.len()))?
            .ok_or("subscription closed")?;
        match Message::decode(&d.payload).map_err(|e| e.to_string())? {
            Message::Effect(e) => out.push((d.topic, e)),
            other => return Err(format!("unexpected {:?} on {}", other.kind(), d.topic)),
        }
    }
    Ok(out)
}

async fn engine_suite_over_broker() -> Result<usize, String> {
    let mut delivered = 0;
    // Fixture changes: effects over the broker equal direct evaluation.
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fx = Fixture::generate(&mut rng, 20, 60, 100);
        let direct = load_fixture(&fx, fixed_clock());
        let bus = InProcessBroker::default();
        let service = Arc::new(PlaneService::new(Arc::new(load_fixture(&fx, fixed_clock())), bus.clone()));
        let mut effects = bus.subscribe(EFFECTS_FILTER).await.map_err(|e| e.to_string())?;
        let sub = service.subscribe().await.map_err(|e| e.to_string())?;
        tokio::spawn(service.clone().run(sub));
        for c in &fx.changes {
            publish_change(&bus, c).await.map_err(|e| e.to_string())?;
            let want = direct.evaluate_change(c).map_err(|e| e.to_string())?;
            let targets = effect_targets(c, &want);
            let got = drain(&mut effects, targets.len()).await?;
            for ((topic, effect), target) in got.iter().zip(&targets) {
                ensure!(topic == &format!("mgmt/v1/effects/{target}"), "{} went to {topic}, expected {target}", c.change_id);
                ensure!(effect == &want, "{}: broker effect differs from direct evaluation", c.change_id);
            }
            delivered += got.len();
        }
    }

    // Double check and confirmation round trip.
    let engine = empty_engine(fixed_clock());
    engine.store().add(heater_policy()).unwrap();
    engine.directory().upsert(device("heater-1", "heater", &["zone1"], false)).unwrap();
    engine.directory().upsert(device("ac-1", "ac", &["zone1"], true)).unwrap();
    let bus = InProcessBroker::default();
    let service = Arc::new(PlaneService::new(Arc::new(engine), bus.clone()));
    let mut effects = bus.subscribe(EFFECTS_FILTER).await.map_err(|e| e.to_string())?;
    tokio::spawn(service.clone().run(service.subscribe().await.map_err(|e| e.to_string())?));
    publish_change(&bus, &Change::new("c1", None, "turn on", "heater-1")).await.map_err(|e| e.to_string())?;
    let (_, first) = drain(&mut effects, 1).await?.remove(0);
    ensure!(first.decision == ResponseType::DoubleCheck, "broker decision {:?}", first.decision);
    ensure!(first.alerts.len() == 1 && first.alerts[0].message == ALERT, "alerts {:?}", first.alerts);
    let mut confirm = Change::new("c2", None, "turn on", "heater-1");
    confirm
        .parameters
        .insert(CONFIRMATION_TOKEN_PARAM.into(), Value::Str(first.confirmation_token.clone().ok_or("no token")?));
    publish_confirmation(&bus, &confirm).await.map_err(|e| e.to_string())?;
    let (_, second) = drain(&mut effects, 1).await?.remove(0);
    ensure!(second.decision == ResponseType::Approve, "confirmed decision {:?}", second.decision);

    // The token is spent; replaying it under a new id does not approve again.
    confirm.change_id = "c3".into();
    publish_confirmation(&bus, &confirm).await.map_err(|e| e.to_string())?;
    let (_, third) = drain(&mut effects, 1).await?.remove(0);
    ensure!(third.decision == ResponseType::DoubleCheck, "replayed token gave {:?}", third.decision);
    Ok(delivered + 3)
}

async fn duplicates_evaluated_once() -> Result<(), String> {
    let engine = empty_engine(fixed_clock());
    engine.store().add(heater_policy()).unwrap();
    engine.directory().upsert(device("heater-1", "heater", &["zone1"], false)).unwrap();
    engine.directory().upsert(device("ac-1", "ac", &["zone1"], true)).unwrap();
    let bus = InProcessBroker::default();
    let service = Arc::new(PlaneService::new(Arc::new(engine), bus.clone()));
    let mut effects = bus.subscribe(EFFECTS_FILTER).await.map_err(|e| e.to_string())?;
    tokio::spawn(service.clone().run(service.subscribe().await.map_err(|e| e.to_string())?));
    let change = Change::new("dup-1", None, "turn on", "heater-1");
    for _ in 0..5 {
        publish_change(&bus, &change).await.map_err(|e| e.to_string())?;
    }
    // A distinct change after the duplicates marks the end of processing.
    publish_change(&bus, &Change::new("marker", None, "turn off", "heater-1"))
        .await
        .map_err(|e| e.to_string())?;
    let got = drain(&mut effects, 2).await?;
    ensure!(got[0].1.change_id == "dup-1" && got[1].1.change_id == "marker", "effects {:?}", got);
    ensure!(effects.try_recv().is_none(), "extra effect delivered");
    let stats = service.stats();
    ensure!(stats.evaluated == 2 && stats.duplicates == 4, "stats {stats:?}");
    ensure!(service.engine().metrics().changes_total == 2, "engine evaluated {} changes", service.engine().metrics().changes_total);
    Ok(())
}

fn transport_interchangeability() -> Outcome {
    let rt = Runtime::new().unwrap();
    let delivered = rt.block_on(engine_suite_over_broker())?;
    rt.block_on(duplicates_evaluated_once())?;

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for i in 0..1000 {
        let msg = if i % 2 == 0 {
            Message::Change(random_wire_change(&mut rng))
        } else {
            Message::Effect(random_effect(&mut rng))
        };
        let back = Message::decode(&msg.encode()).map_err(|e| format!("value {i}: {e}"))?;
        ensure!(back == msg, "value {i} did not round-trip: {msg:?}");
    }
    Ok(format!(
        "{delivered} effects over the in-process broker match direct evaluation; 1000 wire round-trips; 5 duplicate publishes evaluated once"
    ))
}

fn throughput_smoke() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let fx = Fixture::generate(&mut rng, 50, 100, 1000);
    let engine = Arc::new(load_fixture(&fx, fixed_clock()));
    let rt = Runtime::new().unwrap();
    let start = Instant::now();
    let evaluated = rt.block_on(async {
        let service = PlaneService::new(engine.clone(), InProcessBroker::default());
        let mut n = 0;
        for c in &fx.changes {
            if service.handle_payload(&Message::Change(c.clone()).encode()).await.is_ok() {
                n += 1;
            }
        }
        n
    });
    let elapsed = start.elapsed();
    ensure!(evaluated == 1000, "only {evaluated} of 1000 changes evaluated");
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    Ok(format!(
        "1000 changes, 100 policies, 50 devices in {:.0} ms ({:.0} changes/s)",
        elapsed.as_secs_f64() * 1e3,
        1000.0 / elapsed.as_secs_f64()
    ))
}
