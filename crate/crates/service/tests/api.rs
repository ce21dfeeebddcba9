use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use surveil_core::config::FileConfig;
use surveil_core::policy::OPEN_LOOP_ROUNDS;
use surveil_core::session::{replay_events, EventKind, FLAG_WEAKLY_IDENTIFIED};
use surveil_core::Treatment;
use surveil_service::{router, AppState};
use tower::ServiceExt;

const ANSWERS: [f64; 4] = [2.0, 400.0, 8.0, 120.0];

fn settings(scripted: bool) -> FileConfig {
    let mut cfg = FileConfig::default();
    cfg.service.seed = Some(20240611);
    cfg.service.allow_scripted_outcomes = scripted;
    cfg
}

struct Harness {
    state: AppState,
    app: Router,
}

impl Harness {
    fn new(scripted: bool) -> Self {
        Self::with(settings(scripted))
    }

    fn with(cfg: FileConfig) -> Self {
        let state = AppState::new(cfg).unwrap();
        Self { app: router(state.clone()), state }
    }

    async fn call(&self, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
        let req = Request::builder().method(method).uri(uri);
        let req = match body {
            Some(b) => req
                .header("content-type", "application/json")
                .body(Body::from(serde_json::to_vec(&b).unwrap())),
            None => req.body(Body::empty()),
        }
        .unwrap();
        let resp = self.app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap_or(Value::Null) };
        (status, value)
    }

    async fn ok(&self, method: &str, uri: &str, body: Option<Value>) -> Value {
        let (status, v) = self.call(method, uri, body).await;
        assert!(status.is_success(), "{method} {uri}: {status} {v}");
        v
    }

    /// Creates a session and walks it to the flying phase.
    async fn flying(&self, body: Value) -> String {
        let v = self.ok("POST", "/api/sessions", Some(body)).await;
        let id = v["session_id"].as_str().unwrap().to_string();
        assert_eq!(v["phase"], "instructions");
        self.ok("POST", &format!("/api/sessions/{id}/instructions/ack"), None).await;
        let q = self.ok("POST", &format!("/api/sessions/{id}/quiz"), Some(json!({"answers": ANSWERS}))).await;
        assert_eq!(q["phase"], "flying");
        id
    }

    async fn finish(&self, id: &str, mpl: Value) -> Value {
        self.ok("GET", &format!("/api/sessions/{id}/result"), None).await;
        self.ok(
            "POST",
            &format!("/api/sessions/{id}/questionnaire"),
            Some(json!({"age": 24, "gender": "d", "difficulty": 4, "strategy": "stop early"})),
        )
        .await;
        self.ok("POST", &format!("/api/sessions/{id}/mpl"), Some(mpl)).await
    }
}

fn neutral_sheet() -> Value {
    let mut choices = vec!["B"; 16];
    choices.extend(["A"; 4]);
    json!({ "choices": choices })
}

const OUTCOME_KEYS: &[&str] = &[
    "sigma",
    "sigma_after",
    "increased",
    "crashed",
    "intact",
    "banked",
    "banked_now",
    "junction_infos",
    "total_info",
    "total_value",
    "flights",
    "junctions",
    "last_increased",
];

fn outcome_keys(v: &Value, found: &mut Vec<String>) {
    match v {
        Value::Object(map) => {
            for (k, inner) in map {
                if OUTCOME_KEYS.contains(&k.as_str()) {
                    found.push(k.clone());
                }
                outcome_keys(inner, found);
            }
        }
        Value::Array(items) => items.iter().for_each(|i| outcome_keys(i, found)),
        _ => {}
    }
}

/// Plays a closed session with the myopic rule using only what the
/// responses reveal.
async fn play_closed(h: &Harness, id: &str) {
    loop {
        let v = h.ok("GET", &format!("/api/sessions/{id}"), None).await;
        if v["phase"] != "flying" {
            return;
        }
        let c = &v["closed"];
        let fly = c["can_fly"].as_bool().unwrap() && c["sigma"].as_u64().unwrap() < 70;
        h.ok("POST", &format!("/api/sessions/{id}/decision"), Some(json!({ "fly": fly }))).await;
    }
}

#[tokio::test]
async fn open_sessions_reveal_nothing_before_the_result_screen() {
    let h = Harness::new(true);
    let plans = [vec![OPEN_LOOP_ROUNDS; 10], vec![8; 10], vec![0; 10], (0..10).map(|j| j % 9).collect()];
    for (n, plan) in plans.iter().enumerate() {
        for scripted in [false, true] {
            let mut responses = Vec::new();
            let v = h.ok("POST", "/api/sessions", Some(json!({"treatment": "open", "scripted": scripted}))).await;
            let id = v["session_id"].as_str().unwrap().to_string();
            responses.push(v);
            responses.push(h.ok("GET", &format!("/api/sessions/{id}/instructions"), None).await);
            responses.push(h.ok("POST", &format!("/api/sessions/{id}/instructions/ack"), None).await);
            responses.push(h.ok("POST", &format!("/api/sessions/{id}/quiz"), Some(json!({"answers": ANSWERS}))).await);
            let mut body = json!({ "planned_rounds": plan });
            if scripted {
                body["scripted"] = json!({ "increases": vec![true; 40], "crashes": (0..80).map(|k| k == 7 * n + 3).collect::<Vec<_>>() });
            }
            let ack = h.ok("POST", &format!("/api/sessions/{id}/plan"), Some(body)).await;
            assert_eq!(ack["planned_rounds"], json!(plan));
            responses.push(ack);
            responses.push(h.ok("GET", &format!("/api/sessions/{id}"), None).await);
            for r in &responses {
                let mut found = Vec::new();
                outcome_keys(r, &mut found);
                assert!(found.is_empty(), "outcome fields {found:?} leaked in {r}");
            }
            let result = h.ok("GET", &format!("/api/sessions/{id}/result"), None).await;
            assert!(result.get("total_value").is_some());
        }
    }
    // The plan itself produced the full trace.
    let outcomes = h.state.events().iter().filter(|e| e.kind == EventKind::FlightOutcome).count();
    assert!(outcomes > 0);
}

#[tokio::test]
async fn closed_responses_only_show_flown_rounds() {
    let h = Harness::new(false);
    let id = h.flying(json!({"treatment": "closed"})).await;
    let mut flown = 0;
    loop {
        let v = h.ok("GET", &format!("/api/sessions/{id}"), None).await;
        if v["phase"] != "flying" {
            break;
        }
        let c = v["closed"].clone();
        let fly = c["can_fly"].as_bool().unwrap() && c["sigma"].as_u64().unwrap() < 70;
        let r = h.ok("POST", &format!("/api/sessions/{id}/decision"), Some(json!({ "fly": fly }))).await;
        let outcomes: Vec<_> = h
            .state
            .events()
            .into_iter()
            .filter(|e| e.session_id == id && e.kind == EventKind::FlightOutcome)
            .collect();
        if fly {
            flown += 1;
            let last = &outcomes.last().unwrap().payload;
            assert_eq!(r["increased"], last["increased"]);
            assert_eq!(r["view"]["sigma"], last["sigma_after"]);
            assert_eq!(r["view"]["rounds_here"], last["round"]);
        } else {
            assert!(r["increased"].is_null());
        }
        assert_eq!(outcomes.len(), flown);
    }
}

#[tokio::test]
async fn out_of_phase_requests_change_nothing() {
    let h = Harness::new(false);
    let v = h.ok("POST", "/api/sessions", Some(json!({"treatment": "closed"}))).await;
    let id = v["session_id"].as_str().unwrap().to_string();
    let probes: Vec<(&str, String, Option<Value>)> = vec![
        ("POST", format!("/api/sessions/{id}/instructions/ack"), None),
        ("POST", format!("/api/sessions/{id}/quiz"), Some(json!({"answers": ANSWERS}))),
        ("POST", format!("/api/sessions/{id}/decision"), Some(json!({"fly": true}))),
        ("POST", format!("/api/sessions/{id}/plan"), Some(json!({"planned_rounds": vec![5; 10]}))),
        (
            "POST",
            format!("/api/sessions/{id}/questionnaire"),
            Some(json!({"age": 30, "gender": "m", "difficulty": 2, "strategy": ""})),
        ),
        ("POST", format!("/api/sessions/{id}/mpl"), Some(neutral_sheet())),
        ("GET", format!("/api/sessions/{id}/result"), None),
        ("GET", format!("/api/sessions/{id}/payoff"), None),
    ];
    // Legal probe for each phase in order; everything else must bounce.
    let legal_at = |phase: &str| -> Option<usize> {
        match phase {
            "instructions" => Some(0),
            "quiz" => Some(1),
            "flying" => Some(2),
            "questionnaire" => Some(4),
            "mpl" => Some(5),
            _ => None,
        }
    };
    loop {
        let before = h.ok("GET", &format!("/api/sessions/{id}"), None).await;
        let phase = before["phase"].as_str().unwrap().to_string();
        let events_before = h.state.events().len();
        for (i, (m, uri, body)) in probes.iter().enumerate() {
            let allowed = Some(i) == legal_at(&phase)
                || (i == 6 && ["questionnaire", "mpl", "done"].contains(&phase.as_str()))
                || (i == 7 && phase == "done");
            if allowed {
                continue;
            }
            let (status, err) = h.call(m, uri, body.clone()).await;
            assert_eq!(status, StatusCode::CONFLICT, "{m} {uri} in {phase}: {err}");
            assert!(["out_of_phase", "crashed"].contains(&err["code"].as_str().unwrap()), "{err}");
            assert_eq!(h.ok("GET", &format!("/api/sessions/{id}"), None).await, before);
            assert_eq!(h.state.events().len(), events_before);
        }
        let Some(i) = legal_at(&phase) else { break };
        if phase == "flying" {
            play_closed(&h, &id).await;
        } else {
            let (m, uri, body) = &probes[i];
            h.ok(m, uri, body.clone()).await;
        }
    }
    let done = h.ok("GET", &format!("/api/sessions/{id}"), None).await;
    assert_eq!(done["phase"], "done");
}

#[tokio::test]
async fn invalid_input_is_a_validation_error() {
    let h = Harness::new(false);
    let id = h.flying(json!({"treatment": "open"})).await;
    for body in [
        json!({"planned_rounds": vec![5; 9]}),
        json!({"planned_rounds": vec![9; 10]}),
        json!({"planned_rounds": vec![5; 10], "scripted": {"increases": [], "crashes": []}}),
        json!({"rounds": vec![5; 10]}),
    ] {
        let (status, err) = h.call("POST", &format!("/api/sessions/{id}/plan"), Some(body)).await;
        assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
        assert_eq!(err["code"], "validation");
    }
    let (status, err) = h.call("POST", &format!("/api/sessions/{id}/decision"), Some(json!({"fly": true}))).await;
    assert_eq!((status, err["code"].as_str()), (StatusCode::CONFLICT, Some("out_of_phase")));
    let (status, err) = h.call("GET", "/api/sessions/nope", None).await;
    assert_eq!((status, err["code"].as_str()), (StatusCode::NOT_FOUND, Some("not_found")));
    let (status, _) = h.call("POST", "/api/sessions", Some(json!({"scripted": true}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = h.call("POST", "/api/sessions", Some(json!({"participant_code": "short"}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    h.ok("POST", "/api/sessions", Some(json!({"participant_code": "AB12CD34"}))).await;
    let (status, err) = h.call("POST", "/api/sessions", Some(json!({"participant_code": "AB12CD34"}))).await;
    assert_eq!((status, err["code"].as_str()), (StatusCode::CONFLICT, Some("conflict")));
}

#[tokio::test]
async fn failed_quiz_items_can_be_retried() {
    let h = Harness::new(false);
    let v = h.ok("POST", "/api/sessions", Some(json!({}))).await;
    let id = v["session_id"].as_str().unwrap();
    let ins = h.ok("GET", &format!("/api/sessions/{id}/instructions"), None).await;
    assert_eq!(ins["quiz"].as_array().unwrap().len(), 4);
    assert!(ins.to_string().find("120").is_some());
    h.ok("POST", &format!("/api/sessions/{id}/instructions/ack"), None).await;
    let q = h.ok("POST", &format!("/api/sessions/{id}/quiz"), Some(json!({"answers": [2, 400, 10, 100]}))).await;
    assert_eq!(q, json!({"passed": false, "wrong": [2, 3], "phase": "quiz"}));
    let q = h.ok("POST", &format!("/api/sessions/{id}/quiz"), Some(json!({"answers": ANSWERS}))).await;
    assert_eq!(q["phase"], "flying");
}

#[tokio::test]
async fn random_assignment_is_balanced() {
    let h = Harness::new(false);
    let mut counts = vec![0; 2];
    let mut streams = std::collections::HashSet::new();
    for _ in 0..500 {
        let v = h.ok("POST", "/api/sessions", Some(json!({}))).await;
        counts[usize::from(v["treatment"] == "open")] += 1;
        let code = v["participant_code"].as_str().unwrap();
        assert_eq!(code.len(), 8);
        streams.insert(v["session_id"].as_str().unwrap().to_string());
    }
    assert_eq!(counts, [250, 250]);
    assert_eq!(streams.len(), 500);
    let forced = h.ok("POST", "/api/sessions", Some(json!({"treatment": "closed"}))).await;
    assert_eq!(forced["treatment"], "closed");
}

#[tokio::test]
async fn same_seed_sessions_get_distinct_streams() {
    let h = Harness::new(false);
    let a = h.flying(json!({"treatment": "open"})).await;
    let b = h.flying(json!({"treatment": "open"})).await;
    for id in [&a, &b] {
        h.ok("POST", &format!("/api/sessions/{id}/plan"), Some(json!({"planned_rounds": vec![8; 10]}))).await;
    }
    let ra = h.ok("GET", &format!("/api/sessions/{a}/result"), None).await;
    let rb = h.ok("GET", &format!("/api/sessions/{b}/result"), None).await;
    let created: Vec<_> = h.state.events().into_iter().filter(|e| e.kind == EventKind::Created).collect();
    assert_ne!(created[0].payload["stream"], created[1].payload["stream"]);
    assert_eq!(created[0].payload["seed"], created[1].payload["seed"]);
    let trace = |id: &str| -> Vec<Value> {
        h.state
            .events()
            .into_iter()
            .filter(|e| e.session_id == id && e.kind == EventKind::FlightOutcome)
            .map(|e| e.payload)
            .collect()
    };
    assert!(trace(&a) != trace(&b) || ra != rb);
}

#[tokio::test]
async fn replaying_the_event_log_reproduces_every_session() {
    let h = Harness::new(false);
    for k in 0..40u32 {
        let treatment = if k % 2 == 0 { "closed" } else { "open" };
        let id = h.flying(json!({ "treatment": treatment })).await;
        if treatment == "closed" {
            play_closed(&h, &id).await;
        } else {
            let plan: Vec<u32> = (0..10).map(|j| (k + j) % 9).collect();
            h.ok("POST", &format!("/api/sessions/{id}/plan"), Some(json!({ "planned_rounds": plan }))).await;
        }
        let pay = h.finish(&id, neutral_sheet()).await;
        assert_eq!(pay["participant_index"], k + 1);
    }
    // An abandoned session does not disturb the replay.
    h.flying(json!({"treatment": "closed"})).await;

    let events = h.state.events();
    let replayed = replay_events(&events).unwrap();
    let stored = h.state.completed_sessions();
    assert_eq!(replayed.len(), 40);
    assert_eq!(replayed, stored);
    for s in &stored {
        s.verify().unwrap();
    }
    // Every accepted fly decision has its outcome right after it.
    for pair in events.windows(2) {
        if pair[0].kind == EventKind::Decision && pair[0].payload["fly"] == true {
            assert_eq!(pair[1].kind, EventKind::FlightOutcome);
            assert_eq!(pair[1].session_id, pair[0].session_id);
            assert_eq!(pair[1].seq, pair[0].seq + 1);
        }
    }
}

#[tokio::test]
async fn scripted_closed_mission_pays_out() {
    let h = Harness::new(true);
    let id = h.flying(json!({"treatment": "closed", "scripted": true})).await;
    for j in 1..=10 {
        for expected in [25, 50, 70] {
            let r = h
                .ok(
                    "POST",
                    &format!("/api/sessions/{id}/decision"),
                    Some(json!({"fly": true, "scripted": {"increased": true, "crashed": false}})),
                )
                .await;
            assert_eq!(r["view"]["sigma"], expected);
            assert_eq!(r["view"]["junction"], j);
        }
        let r = h.ok("POST", &format!("/api/sessions/{id}/decision"), Some(json!({"fly": false}))).await;
        assert_eq!(r["banked_now"], 70);
    }
    let result = h.ok("GET", &format!("/api/sessions/{id}/result"), None).await;
    assert_eq!(result["total_value"], 1100);
    assert_eq!(result["total_info"], 700);
    assert_eq!(result["mission_euros"], 917);
    let pay = h.finish(&id, neutral_sheet()).await;
    assert_eq!(pay["payoff"], 917);
    assert_eq!(pay["risk_attitude"], "risk_neutral");
    assert!(pay["paid_row"].is_null());
    let replayed = replay_events(&h.state.events()).unwrap();
    assert!(replayed[0].scripted);
    assert_eq!(replayed[0].total_value, 1100);
}

#[tokio::test]
async fn degenerate_plan_keeps_the_drone() {
    let h = Harness::new(false);
    let id = h.flying(json!({"treatment": "open"})).await;
    h.ok("POST", &format!("/api/sessions/{id}/plan"), Some(json!({"planned_rounds": vec![0; 10]}))).await;
    let r = h.ok("GET", &format!("/api/sessions/{id}/result"), None).await;
    assert_eq!((r["total_value"].as_u64(), r["intact"].as_bool()), (Some(400), Some(true)));
    h.finish(&id, neutral_sheet()).await;
    let snap = &h.state.completed_sessions()[0];
    assert!(snap.flags.iter().any(|f| f == FLAG_WEAKLY_IDENTIFIED));
    assert_eq!(snap.treatment, Treatment::Open);
}

#[tokio::test]
async fn every_fifteenth_participant_plays_a_row() {
    let h = Harness::new(true);
    let mut sheet = neutral_sheet();
    for k in 1..=15u32 {
        let id = h.flying(json!({"treatment": "open", "scripted": true})).await;
        h.ok("POST", &format!("/api/sessions/{id}/plan"), Some(json!({"planned_rounds": vec![0; 10]}))).await;
        if k == 15 {
            sheet["scripted"] = json!({"row": 16, "lottery_won": true});
            let mut choices = vec!["B"; 15];
            choices.extend(["A"; 5]);
            sheet["choices"] = json!(choices);
        }
        let pay = h.finish(&id, sheet.clone()).await;
        assert_eq!(pay["participant_index"], k);
        if k == 7 {
            assert!(pay["mpl_outcome"].is_null());
            assert_eq!(pay["payoff"], 333);
        }
        if k == 15 {
            assert_eq!(pay["paid_row"], 16);
            assert_eq!(pay["paid_choice"], "A");
            assert_eq!(pay["mpl_outcome"], 1500);
            assert_eq!(pay["payoff"], 333 + 1500);
        }
    }
    for s in h.state.completed_sessions() {
        s.verify().unwrap();
    }
}

#[tokio::test]
async fn concurrent_requests_on_one_session_are_serialized() {
    let h = Harness::new(false);
    let id = h.flying(json!({"treatment": "closed"})).await;
    let mut tasks = Vec::new();
    for _ in 0..12 {
        let app = h.app.clone();
        let uri = format!("/api/sessions/{id}/decision");
        tasks.push(tokio::spawn(async move {
            let req = Request::builder()
                .method("POST")
                .uri(uri)
                .header("content-type", "application/json")
                .body(Body::from(r#"{"fly":true}"#))
                .unwrap();
            app.oneshot(req).await.unwrap().status()
        }));
    }
    let mut accepted = 0;
    for t in tasks {
        let status = t.await.unwrap();
        assert!(status == StatusCode::OK || status == StatusCode::CONFLICT);
        accepted += usize::from(status == StatusCode::OK);
    }
    let ours: Vec<_> = h.state.events().into_iter().filter(|e| e.session_id == id).collect();
    assert!(ours.windows(2).all(|w| w[1].seq == w[0].seq + 1));
    let flights = ours.iter().filter(|e| e.kind == EventKind::FlightOutcome).count();
    assert_eq!(flights, accepted);
    assert!((1..=8).contains(&accepted));
}

#[tokio::test]
async fn restart_resumes_from_the_data_directory() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = settings(false);
    cfg.service.data_dir = Some(dir.path().to_path_buf());
    {
        let h = Harness::with(cfg.clone());
        for _ in 0..3 {
            let id = h.flying(json!({"treatment": "open"})).await;
            h.ok("POST", &format!("/api/sessions/{id}/plan"), Some(json!({"planned_rounds": vec![5; 10]}))).await;
            h.finish(&id, neutral_sheet()).await;
        }
    }
    let text = std::fs::read_to_string(dir.path().join(surveil_service::EVENTS_FILE)).unwrap();
    assert!(text.lines().all(|l| serde_json::from_str::<Value>(l).is_ok()));
    let h = Harness::with(cfg);
    assert_eq!(h.state.completed_sessions().len(), 3);
    let id = h.flying(json!({"treatment": "open"})).await;
    assert!(id.starts_with("000003-"));
    h.ok("POST", &format!("/api/sessions/{id}/plan"), Some(json!({"planned_rounds": vec![5; 10]}))).await;
    let pay = h.finish(&id, neutral_sheet()).await;
    assert_eq!(pay["participant_index"], 4);
    assert_eq!(replay_events(&h.state.events()).unwrap().len(), 4);
}

#[tokio::test]
async fn compute_endpoints() {
    let h = Harness::new(false);
    let solved = h.ok("POST", "/api/solve", Some(json!({}))).await;
    assert!(solved["expected_value"].as_f64().unwrap() >= solved["heuristic_expected_value"].as_f64().unwrap());
    assert!(solved["bellman_residual"].as_f64().unwrap() < 1e-9);

    let ev = h.ok("POST", "/api/evaluate", Some(json!({"policy": "fixed:8"}))).await;
    assert!((ev["survival_prob"].as_f64().unwrap() - 0.98f64.powi(80)).abs() < 1e-12);
    let (status, err) = h.call("POST", "/api/evaluate", Some(json!({"policy": "bogus"}))).await;
    assert_eq!((status, err["code"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("validation")));

    let sim = h
        .ok("POST", "/api/simulate", Some(json!({"policy": "closed-heuristic", "seed": 1, "n_missions": 2000})))
        .await;
    assert_eq!(sim["n_missions"], 2000);

    let pop = json!({"seed": 3, "group": [{"profile": {"kind": "optimizer"}, "count": 20, "treatment": "closed"}]});
    let sessions = h.ok("POST", "/api/synth", Some(json!({ "population": pop }))).await;
    assert_eq!(sessions.as_array().unwrap().len(), 20);
    let report = h.ok("POST", "/api/analyze", Some(json!({ "sessions": sessions }))).await;
    let closed = report["treatments"].as_array().unwrap().iter().find(|t| t["treatment"] == "closed").unwrap();
    let cats = closed["categories"].as_object().unwrap();
    let optimal = cats.get("optimal").and_then(Value::as_u64).unwrap_or(0);
    let excluded = cats.get("excluded").and_then(Value::as_u64).unwrap_or(0);
    assert_eq!(optimal + excluded, 20, "{closed}");
    assert!(optimal >= 18);
}
