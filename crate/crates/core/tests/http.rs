use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use docflow::engine::Engine;
use docflow::fixture;
use docflow::service::http::{router, AppState, USER_HEADER};
use docflow::service::{replay, Config, Event, Service};

const STANDARD: &str = include_str!("../fixtures/standard.fixture");
const DEMO: &str = include_str!("../fixtures/demo.fixture");

struct Api {
    app: Router,
    state: Arc<AppState>,
    _dir: tempfile::TempDir,
}

fn api() -> Api {
    let dir = tempfile::tempdir().unwrap();
    let service = Service::open(&Config {
        data_dir: dir.path().join("data"),
        snapshot_every: 0,
    })
    .unwrap();
    fixture::init(&mut &service).unwrap();
    fixture::load_text(STANDARD, &mut &service).unwrap();
    fixture::load_text(DEMO, &mut &service).unwrap();
    let ui = dir.path().join("ui");
    std::fs::create_dir(&ui).unwrap();
    std::fs::write(ui.join("index.html"), "<h1>inbox</h1>").unwrap();
    let state = Arc::new(AppState {
        service,
        ui_dir: Some(ui),
    });
    Api {
        app: router(Arc::clone(&state)),
        state,
        _dir: dir,
    }
}

impl Api {
    async fn raw(&self, method: &str, uri: &str, user: Option<&str>, body: Option<Value>) -> (StatusCode, Vec<u8>) {
        let mut req = Request::builder().method(method).uri(uri);
        if let Some(u) = user {
            req = req.header(USER_HEADER, u);
        }
        let req = match body {
            Some(b) => req
                .header("content-type", "application/json")
                .body(Body::from(b.to_string()))
                .unwrap(),
            None => req.body(Body::empty()).unwrap(),
        };
        let resp = self.app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
        (status, bytes)
    }

    async fn call(&self, method: &str, uri: &str, user: Option<&str>, body: Option<Value>) -> (StatusCode, Value) {
        let (status, bytes) = self.raw(method, uri, user, body).await;
        (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
    }
}

const DECREE: u64 = 4;

#[tokio::test]
async fn secretary_inbox_has_exactly_one_step() {
    let api = api();
    let (s, v) = api.call("POST", "/documents/4/submit", Some("alice"), None).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let (s, v) = api.call("GET", "/inbox?user=alice", None, None).await;
    assert_eq!(s, StatusCode::OK);
    let items = v["data"].as_array().unwrap();
    assert_eq!(items.len(), 1);
    assert_eq!(items[0]["doc"], DECREE);
    assert_eq!(items[0]["required_action"], "Route");
    assert_eq!(items[0]["decision"]["verdict"], "Allow");
    let (_, v) = api.call("GET", "/inbox", Some("dana"), None).await;
    assert!(v["data"].as_array().unwrap().is_empty());
}

#[tokio::test]
async fn non_candidate_gets_reason_code_verbatim() {
    let api = api();
    api.call("POST", "/documents/4/submit", Some("alice"), None).await;
    let (s, v) = api
        .call("POST", "/actions/advance", Some("dana"), Some(json!({"doc": DECREE, "action": "Route"})))
        .await;
    assert_eq!(s, StatusCode::FORBIDDEN);
    assert_eq!(v["reason"], "NotACandidate");
    assert!(v["seq"].as_u64().unwrap() > 0);
}

#[tokio::test]
async fn preview_verdicts_equal_commit_outcomes() {
    let api = api();
    api.call("POST", "/documents/4/submit", Some("alice"), None).await;
    for (user, action) in [("alice", "Sign"), ("dana", "Route"), ("bob", "Read"), ("alice", "Route"), ("dana", "Route")] {
        let body = json!({"doc": DECREE, "action": action});
        let (_, p) = api.call("POST", "/actions/preview", Some(user), Some(body.clone())).await;
        let (s, c) = api.call("POST", "/actions/advance", Some(user), Some(body)).await;
        let committed = if s == StatusCode::OK { "Allow" } else { c["reason"].as_str().unwrap() };
        assert_eq!(p["data"]["verdict"], committed, "{user} {action}");
        assert_eq!(p["data"]["deny"], if s == StatusCode::OK { Value::Null } else { c["deny"].clone() });
    }
    let (_, p) = api
        .call("POST", "/actions/preview", Some("alice"), Some(json!({"doc": DECREE, "action": "Sign"})))
        .await;
    assert_eq!(p["data"]["verdict"], "PolicyViolation");
    assert_eq!(p["data"]["deny"], "NoSignRight");
}

#[tokio::test]
async fn reads_are_byte_identical_at_the_same_seq() {
    let api = api();
    for uri in ["/documents/2", "/nodes", "/routes", "/classes/document", "/search?title=o"] {
        let a = api.raw("GET", uri, Some("alice"), None).await;
        let b = api.raw("GET", uri, Some("alice"), None).await;
        assert_eq!(a.0, StatusCode::OK, "{uri}");
        assert_eq!(a, b, "{uri}");
    }
}

#[tokio::test]
async fn mutations_append_one_event_and_denials_none() {
    let api = api();
    let before = api.state.service.seq();
    let (s, v) = api
        .call("POST", "/workgroups", Some("carol"), Some(json!({"name": "legal"})))
        .await;
    assert_eq!(s, StatusCode::FORBIDDEN);
    assert_eq!(v["reason"], "AdminOnly");
    assert_eq!(api.state.service.seq(), before);
    let (_, d) = api.call("GET", &format!("/denials?from_seq={before}"), None, None).await;
    assert_eq!(d["data"].as_array().unwrap().len(), 1);

    let (s, v) = api
        .call("POST", "/workgroups", Some("system"), Some(json!({"name": "legal"})))
        .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["seq"], before + 1);
    let (_, a) = api.call("GET", &format!("/audit?from_seq={}", before + 1), None, None).await;
    let events = a["data"].as_array().unwrap();
    assert_eq!(events.len(), 1);
    assert_eq!(events[0]["op"], "add_workgroup");
}

#[tokio::test]
async fn replaying_the_audit_log_reproduces_the_live_digest() {
    let api = api();
    api.call("POST", "/documents/4/submit", Some("alice"), None).await;
    api.call("POST", "/actions/advance", Some("alice"), Some(json!({"doc": DECREE, "action": "Route"})))
        .await;
    api.call("POST", "/documents/2/checkin", Some("alice"), Some(json!({"content": "v2"})))
        .await;
    let (_, a) = api.call("GET", "/audit?from_seq=1", None, None).await;
    let events: Vec<Event> = serde_json::from_value(a["data"].clone()).unwrap();
    let replayed = replay(Engine::new(), &events).unwrap();
    let (_, d) = api.call("GET", "/digest", None, None).await;
    assert_eq!(d["data"]["digest"], replayed.digest());
    assert_eq!(d["seq"], events.len() as u64);
}

#[tokio::test]
async fn documents_and_content() {
    let api = api();
    let body = json!({
        "folder": "/Corp/Finance/Accounting", "title": "Memo | draft", "class": "OutgoingCorrespondence",
        "stype": "Private", "owner": "accounting", "content": "hello"
    });
    let (s, v) = api.call("POST", "/documents", Some("alice"), Some(body)).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let id = v["data"]["id"].as_u64().unwrap();
    let (s, bytes) = api.raw("GET", &format!("/documents/{id}/content"), Some("alice"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(bytes, b"hello");
    let (s, v) = api.call("GET", &format!("/documents/{id}"), Some("bob"), None).await;
    assert_eq!(s, StatusCode::FORBIDDEN);
    assert_eq!(v["deny"], "NotInWorkgroup");
    let (_, v) = api.call("GET", &format!("/documents/{id}"), Some("alice"), None).await;
    assert_eq!(v["data"]["label_text"], "Chief_Accounting/Private/{accounting}");
    assert_eq!(v["data"]["path"], format!("/Corp/Finance/Accounting/#{id}"));

    let (s, v) = api.call("POST", "/documents/2/archive", Some("alice"), None).await;
    assert_eq!((s, v["reason"].as_str()), (StatusCode::FORBIDDEN, Some("AdminOnly")));
    let (s, _) = api.call("POST", "/documents/2/archive", Some("system"), None).await;
    assert_eq!(s, StatusCode::OK);
    let (s, v) = api
        .call("POST", "/documents/2/checkin", Some("alice"), Some(json!({"content": "late"})))
        .await;
    assert_eq!((s, v["reason"].as_str()), (StatusCode::CONFLICT, Some("ArchivedDocument")));
}

#[tokio::test]
async fn tree_and_class_endpoints() {
    let api = api();
    let (_, v) = api.call("GET", "/nodes", None, None).await;
    let nodes = v["data"].as_array().unwrap();
    assert_eq!(nodes[0]["handle"], 1);
    assert_eq!(nodes[0]["parent"], 0);
    assert_eq!(nodes[0]["preorder"], 1);
    let (s, v) = api
        .call("POST", "/nodes", Some("alice"), Some(json!({"parent": "/Corp/Finance/Accounting", "name": "Drafts"})))
        .await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let h = v["data"]["handle"].as_u64().unwrap();
    let (s, v) = api.call("DELETE", &format!("/nodes/{h}"), Some("bob"), None).await;
    assert_eq!(s, StatusCode::FORBIDDEN, "{v}");
    let (s, v) = api.call("DELETE", &format!("/nodes/{h}"), Some("system"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["data"]["handles"], json!([h]));
    let (s, v) = api.call("DELETE", "/nodes/999", Some("system"), None).await;
    assert_eq!((s, v["reason"].as_str()), (StatusCode::NOT_FOUND, Some("UnknownHandle")));

    let (s, v) = api
        .call("POST", "/classes/role", Some("system"), Some(json!({"name": "Auditor", "parent": "User"})))
        .await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let (s, v) = api.call("GET", "/classes/bogus", None, None).await;
    assert_eq!((s, v["reason"].as_str()), (StatusCode::BAD_REQUEST, Some("MalformedInput")));
    let (s, v) = api
        .call("POST", "/classes/document", Some("system"), Some(json!({"name": "X", "parent": "Nope"})))
        .await;
    assert_eq!((s, v["reason"].as_str()), (StatusCode::NOT_FOUND, Some("UnknownParent")));
}

#[tokio::test]
async fn routes_accept_text_bodies() {
    let api = api();
    let req = Request::builder()
        .method("POST")
        .uri("/routes")
        .header(USER_HEADER, "system")
        .body(Body::from("route memo-fyi applies=OutgoingCorrespondence\nstep 1: role=User action=Read\n"))
        .unwrap();
    let resp = api.app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    let (_, v) = api.call("GET", "/routes", None, None).await;
    let texts: Vec<&str> = v["data"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["name"].as_str().unwrap())
        .collect();
    assert!(texts.contains(&"memo-fyi"));
    let (s, v) = api
        .call("POST", "/routes", Some("system"), Some(json!({"text": "route broken\n"})))
        .await;
    assert_eq!((s, v["reason"].as_str()), (StatusCode::BAD_REQUEST, Some("InvalidRoute")));
}

#[tokio::test]
async fn identity_is_required_for_mutations() {
    let api = api();
    let (s, v) = api.call("POST", "/workgroups", None, Some(json!({"name": "x"}))).await;
    assert_eq!((s, v["reason"].as_str()), (StatusCode::BAD_REQUEST, Some("MalformedInput")));
    let (s, v) = api.call("POST", "/workgroups", Some("mallory"), Some(json!({"name": "x"}))).await;
    assert_eq!((s, v["reason"].as_str()), (StatusCode::NOT_FOUND, Some("UnknownUser")));
}

#[tokio::test]
async fn static_ui_is_served() {
    let api = api();
    let (s, body) = api.raw("GET", "/ui", None, None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(body, b"<h1>inbox</h1>");
    let (s, _) = api.raw("GET", "/ui/index.html", None, None).await;
    assert_eq!(s, StatusCode::OK);
    let (s, _) = api.raw("GET", "/ui/missing.js", None, None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn trace_and_matrix() {
    let api = api();
    api.call("POST", "/documents/4/submit", Some("alice"), None).await;
    let (s, v) = api.call("GET", "/documents/4/route", Some("victor"), None).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["data"]["state"]["status"], "Active");
    assert_eq!(v["data"]["next"]["required_action"], "Route");
    let (_, v) = api.call("GET", "/matrix?action=Read,Sign", None, None).await;
    assert_eq!(v["data"].as_array().unwrap().len(), 6 * 4 * 2);
}
