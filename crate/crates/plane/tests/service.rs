mod common;

use std::sync::Arc;
use std::time::Duration;

use tokio::time::timeout;

use common::*;
use iip_core::engine::{Change, CONFIRMATION_TOKEN_PARAM};
use iip_core::expr::Value;
use iip_core::model::ResponseType;
use iip_plane::service::{publish_change, publish_confirmation, CHANGES_TOPIC, EFFECTS_FILTER};
use iip_plane::{Handled, InProcessBroker, Message, PlaneService, PubSub, ServiceError, Subscription};

fn heater_engine(ac_on: bool) -> Arc<iip_core::engine::PolicyEngine> {
    let engine = empty_engine(fixed_clock());
    engine.store().add(heater_policy()).unwrap();
    engine.directory().upsert(device("heater-7", "heater", &["zone1"], false)).unwrap();
    engine.directory().upsert(device("ac-3", "ac", &["zone1"], ac_on)).unwrap();
    Arc::new(engine)
}

async fn next_effect(sub: &mut Subscription) -> (String, iip_core::engine::Effect) {
    let d = timeout(Duration::from_secs(5), sub.recv()).await.expect("effect arrives").unwrap();
    match Message::decode(&d.payload).unwrap() {
        Message::Effect(e) => (d.topic, e),
        other => panic!("unexpected {:?}", other.kind()),
    }
}

#[tokio::test]
async fn duplicates_are_evaluated_once() {
    let bus = InProcessBroker::default();
    let service = Arc::new(PlaneService::new(heater_engine(true), bus.clone()));
    let change = Change::new("c1", None, "turn on", "heater-7");
    let payload = Message::Change(change).encode();
    assert!(matches!(service.handle_payload(&payload).await.unwrap(), Handled::Evaluated { .. }));
    for _ in 0..3 {
        assert_eq!(service.handle_payload(&payload).await.unwrap(), Handled::Duplicate("c1".into()));
    }
    let stats = service.stats();
    assert_eq!((stats.received, stats.evaluated, stats.duplicates), (4, 1, 3));
    assert_eq!(service.engine().metrics().changes_total, 1);
}

#[tokio::test]
async fn dedup_window_is_bounded() {
    let service = PlaneService::with_window(heater_engine(false), InProcessBroker::default(), 2);
    let enc = |id: &str| Message::Change(Change::new(id, None, "turn on", "heater-7")).encode();
    for id in ["a", "b", "c"] {
        service.handle_payload(&enc(id)).await.unwrap();
    }
    // `a` fell out of the window, `c` did not.
    assert!(matches!(service.handle_payload(&enc("a")).await.unwrap(), Handled::Evaluated { .. }));
    assert!(matches!(service.handle_payload(&enc("c")).await.unwrap(), Handled::Duplicate(_)));
}

#[tokio::test]
async fn malformed_payloads_are_rejected_without_evaluation() {
    let service = PlaneService::new(heater_engine(true), InProcessBroker::default());
    assert!(matches!(service.handle_payload(b"{oops").await, Err(ServiceError::Wire(_))));
    assert!(matches!(
        service.handle_payload(br#"{"kind":"CHANGE","payload":{}}"#).await,
        Err(ServiceError::Wire(_))
    ));
    let effect = service.engine().evaluate_change(&Change::new("e", None, "turn on", "heater-7")).unwrap();
    assert!(matches!(
        service.handle_payload(&Message::Effect(effect).encode()).await,
        Err(ServiceError::UnexpectedKind(_))
    ));
    let unknown = Message::Change(Change::new("u", None, "turn on", "ghost")).encode();
    assert!(matches!(service.handle_payload(&unknown).await, Err(ServiceError::Engine(_))));
    assert_eq!(service.stats().rejected, 4);
    assert_eq!(service.stats().evaluated, 0);
}

#[tokio::test]
async fn effects_reach_every_target_and_confirmation_works() {
    let bus = InProcessBroker::default();
    let engine = heater_engine(true);
    let mut policy = heater_policy();
    policy.id = "bldg-0002".into();
    policy.response = ResponseType::Notify;
    policy.alert = Some("heater starting".into());
    policy.alert_targets = vec!["objectDevice".into(), "affectedDevice.ac".into()];
    engine.store().add(policy).unwrap();
    let service = Arc::new(PlaneService::new(engine, bus.clone()));
    let mut effects = bus.subscribe(EFFECTS_FILTER).await.unwrap();
    let sub = service.subscribe().await.unwrap();
    tokio::spawn(service.clone().run(sub));

    publish_change(&bus, &Change::new("c1", Some("ac-3"), "turn on", "heater-7")).await.unwrap();
    let mut topics = Vec::new();
    let mut token = None;
    for _ in 0..2 {
        let (topic, effect) = next_effect(&mut effects).await;
        assert_eq!(effect.decision, ResponseType::DoubleCheck);
        token = effect.confirmation_token.clone();
        topics.push(topic);
    }
    assert_eq!(topics, ["mgmt/v1/effects/ac-3", "mgmt/v1/effects/heater-7"]);

    let mut confirm = Change::new("c2", Some("ac-3"), "turn on", "heater-7");
    confirm.parameters.insert(CONFIRMATION_TOKEN_PARAM.into(), Value::Str(token.unwrap()));
    publish_confirmation(&bus, &confirm).await.unwrap();
    // The double check is satisfied; the notification policy still fires.
    for _ in 0..2 {
        let (_, effect) = next_effect(&mut effects).await;
        assert_eq!(effect.change_id, "c2");
        assert_eq!(effect.decision, ResponseType::Notify);
        assert!(effect.confirmation_token.is_none());
        assert!(effect.alerts.iter().all(|a| a.message == "heater starting"));
    }
}

#[tokio::test]
async fn effects_keep_change_order() {
    let bus = InProcessBroker::new(4);
    let service = Arc::new(PlaneService::new(heater_engine(false), bus.clone()));
    let mut effects = bus.subscribe("mgmt/v1/effects/app").await.unwrap();
    let sub = service.subscribe().await.unwrap();
    tokio::spawn(service.clone().run(sub));
    let publisher = {
        let bus = bus.clone();
        tokio::spawn(async move {
            for i in 0..200 {
                publish_change(&bus, &Change::new(&format!("c{i:03}"), None, "turn on", "heater-7")).await.unwrap();
            }
        })
    };
    for i in 0..200 {
        let (_, effect) = next_effect(&mut effects).await;
        assert_eq!(effect.change_id, format!("c{i:03}"));
    }
    publisher.await.unwrap();
    assert_eq!(bus.subscriber_count(), 2);
    let _ = CHANGES_TOPIC;
}
