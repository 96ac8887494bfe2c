//! JSON-over-HTTP front end.
//!
//! The caller names itself in the `x-gw-user` header (user name, numeric id,
//! or `system`). Every body is `{"seq": n, "data": ...}` on success and
//! `{"seq": n, "reason": "...", "deny": ..., "message": "..."}` on failure,
//! where `seq` is the state the answer was computed against.

use std::path::{Component, Path, PathBuf};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query as UrlQuery, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use super::{Receipt, Refusal, Service};
use crate::access::{Action, DenyReason, Target, UserId};
use crate::engine::{AclEntry, Command, Engine, EngineError, ErrorCategory, Ref};
use crate::isa::HierarchyKind;
use crate::lattice::SecurityType;
use crate::routing::{RouteState, StepDecision};
use crate::store::{DocId, Document, Query, TreeNode};

pub const USER_HEADER: &str = "x-gw-user";

pub struct AppState {
    pub service: Service,
    pub ui_dir: Option<PathBuf>,
}

#[derive(Serialize)]
struct Envelope<T: Serialize> {
    seq: u64,
    data: T,
}

fn ok<T: Serialize>(seq: u64, data: T) -> Response {
    Json(Envelope { seq, data }).into_response()
}

#[derive(Debug, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    status: StatusCode,
    seq: u64,
    reason: String,
    deny: Option<DenyReason>,
    message: String,
}

impl ApiError {
    fn engine(seq: u64, e: &EngineError) -> Self {
        let status = match e.category() {
            ErrorCategory::Policy => StatusCode::FORBIDDEN,
            ErrorCategory::NotFound => StatusCode::NOT_FOUND,
            ErrorCategory::Malformed => StatusCode::BAD_REQUEST,
            ErrorCategory::Conflict => StatusCode::CONFLICT,
            ErrorCategory::Storage => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError {
            status,
            seq,
            reason: e.code().to_string(),
            deny: e.deny_reason(),
            message: e.to_string(),
        }
    }

    fn malformed(seq: u64, message: impl Into<String>) -> Self {
        Self::engine(seq, &EngineError::Malformed(message.into()))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(&self)).into_response()
    }
}

impl From<Refusal> for ApiError {
    fn from(r: Refusal) -> Self {
        ApiError::engine(r.seq, &r.error)
    }
}

type ApiResult = Result<Response, ApiError>;
type Shared = Arc<AppState>;

fn parse_ref(s: &str) -> Ref {
    match s.parse::<u64>() {
        Ok(n) => Ref::Id(n),
        Err(_) => Ref::Name(s.to_string()),
    }
}

fn identity(headers: &HeaderMap, e: &Engine, seq: u64) -> Result<UserId, ApiError> {
    let raw = headers
        .get(USER_HEADER)
        .and_then(|v| v.to_str().ok())
        .ok_or_else(|| ApiError::malformed(seq, format!("missing {USER_HEADER} header")))?;
    if raw == "system" {
        return Ok(UserId::SYSTEM);
    }
    e.resolve_user(&parse_ref(raw)).map_err(|err| ApiError::engine(seq, &err))
}

async fn mutate(st: Shared, headers: HeaderMap, cmd: Command) -> ApiResult {
    let (seq, engine) = st.service.view();
    let actor = identity(&headers, &engine, seq)?;
    let receipt: Result<Receipt, Refusal> = tokio::task::spawn_blocking(move || st.service.submit(actor, cmd))
        .await
        .map_err(|e| ApiError::engine(seq, &EngineError::Storage(e.to_string())))?;
    let r = receipt?;
    Ok(ok(r.seq, r.result))
}

fn kind_of(seq: u64, s: &str) -> Result<HierarchyKind, ApiError> {
    s.parse().map_err(|_| ApiError::malformed(seq, format!("unknown hierarchy `{s}`")))
}

async fn get_classes(State(st): State<Shared>, UrlPath(kind): UrlPath<String>) -> ApiResult {
    let (seq, e) = st.service.view();
    let kind = kind_of(seq, &kind)?;
    Ok(ok(seq, e.hierarchy(kind).nodes().collect::<Vec<_>>()))
}

#[derive(Deserialize)]
struct NewClass {
    name: String,
    parent: Ref,
}

async fn post_class(
    State(st): State<Shared>,
    headers: HeaderMap,
    UrlPath(kind): UrlPath<String>,
    Json(body): Json<NewClass>,
) -> ApiResult {
    let kind = kind_of(st.service.seq(), &kind)?;
    mutate(
        st,
        headers,
        Command::AddClass {
            kind,
            name: body.name,
            parent: body.parent,
        },
    )
    .await
}

async fn get_users(State(st): State<Shared>) -> ApiResult {
    let (seq, e) = st.service.view();
    Ok(ok(seq, e.users().collect::<Vec<_>>()))
}

#[derive(Deserialize)]
struct NewUser {
    name: String,
    role: Ref,
    level: Ref,
    stype: SecurityType,
    #[serde(default)]
    workgroups: Vec<Ref>,
    #[serde(default)]
    home: Option<Ref>,
}

async fn post_user(State(st): State<Shared>, headers: HeaderMap, Json(b): Json<NewUser>) -> ApiResult {
    mutate(
        st,
        headers,
        Command::AddUser {
            name: b.name,
            role: b.role,
            level: b.level,
            stype: b.stype,
            workgroups: b.workgroups,
            home: b.home,
        },
    )
    .await
}

async fn get_workgroups(State(st): State<Shared>) -> ApiResult {
    let (seq, e) = st.service.view();
    Ok(ok(seq, e.workgroups().collect::<Vec<_>>()))
}

#[derive(Deserialize)]
struct NewWorkgroup {
    name: String,
}

async fn post_workgroup(State(st): State<Shared>, headers: HeaderMap, Json(b): Json<NewWorkgroup>) -> ApiResult {
    mutate(st, headers, Command::AddWorkgroup { name: b.name }).await
}

#[derive(Serialize)]
struct NodeView<'a> {
    #[serde(flatten)]
    node: &'a TreeNode,
    preorder: u64,
    path: String,
}

async fn get_nodes(State(st): State<Shared>) -> ApiResult {
    let (seq, e) = st.service.view();
    let store = e.store();
    let mut out = Vec::new();
    for (i, h) in store.preorder().into_iter().enumerate() {
        let node = store.node(h).map_err(|err| ApiError::engine(seq, &err.into()))?;
        let path = store.path_of(h).map_err(|err| ApiError::engine(seq, &err.into()))?;
        out.push(NodeView {
            node,
            preorder: i as u64 + 1,
            path,
        });
    }
    Ok(ok(seq, out))
}

#[derive(Deserialize)]
struct NewFolder {
    #[serde(default)]
    parent: Option<Ref>,
    name: String,
    #[serde(default)]
    workgroups: Vec<Ref>,
}

async fn post_node(State(st): State<Shared>, headers: HeaderMap, Json(b): Json<NewFolder>) -> ApiResult {
    mutate(
        st,
        headers,
        Command::CreateFolder {
            parent: b.parent,
            name: b.name,
            workgroups: b.workgroups,
        },
    )
    .await
}

async fn delete_node(State(st): State<Shared>, headers: HeaderMap, UrlPath(h): UrlPath<u64>) -> ApiResult {
    mutate(st, headers, Command::DeleteNode { node: Ref::Id(h) }).await
}

#[derive(Deserialize)]
struct NewDocument {
    folder: Ref,
    title: String,
    class: Ref,
    stype: SecurityType,
    owner: Ref,
    /// Plain-text body; stored as a blob.
    content: String,
    #[serde(default)]
    acl: Vec<AclEntry>,
    #[serde(default)]
    level: Option<Ref>,
    #[serde(default)]
    author: Option<Ref>,
}

async fn post_document(State(st): State<Shared>, headers: HeaderMap, Json(b): Json<NewDocument>) -> ApiResult {
    let content = st
        .service
        .put_blob(b.content.as_bytes())
        .map_err(|e| ApiError::engine(st.service.seq(), &e))?;
    mutate(
        st,
        headers,
        Command::CreateDocument {
            folder: b.folder,
            title: b.title,
            class: b.class,
            stype: b.stype,
            owner: b.owner,
            content,
            acl: b.acl,
            level: b.level,
            author: b.author,
        },
    )
    .await
}

#[derive(Serialize)]
struct DocView<'a> {
    #[serde(flatten)]
    doc: &'a Document,
    path: String,
    label_text: String,
}

/// Resolves the caller and checks `action` on the document.
fn readable<'e>(
    headers: &HeaderMap,
    e: &'e Engine,
    seq: u64,
    id: DocId,
    action: Action,
) -> Result<&'e Document, ApiError> {
    let user = identity(headers, e, seq)?;
    let doc = e.document(id).map_err(|err| ApiError::engine(seq, &err))?;
    if user != UserId::SYSTEM {
        let d = e
            .check_access(user, Target::Document(id), action)
            .map_err(|err| ApiError::engine(seq, &err))?;
        if let crate::access::Decision::Deny(r) = d {
            return Err(ApiError::engine(seq, &EngineError::Denied(r)));
        }
    }
    Ok(doc)
}

async fn get_document(State(st): State<Shared>, headers: HeaderMap, UrlPath(id): UrlPath<u64>) -> ApiResult {
    let (seq, e) = st.service.view();
    let doc = readable(&headers, &e, seq, DocId(id), Action::Read)?;
    let path = e.store().path_of(doc.node).map_err(|err| ApiError::engine(seq, &err.into()))?;
    Ok(ok(
        seq,
        DocView {
            doc,
            path,
            label_text: e.render_label(&doc.profile.label),
        },
    ))
}

async fn get_content(State(st): State<Shared>, headers: HeaderMap, UrlPath(id): UrlPath<u64>) -> ApiResult {
    let (seq, e) = st.service.view();
    let doc = readable(&headers, &e, seq, DocId(id), Action::Read)?;
    let bytes = st
        .service
        .blob(&doc.current().digest)
        .map_err(|err| ApiError::engine(seq, &err))?;
    Ok(([(header::CONTENT_TYPE, "application/octet-stream")], bytes).into_response())
}

#[derive(Deserialize)]
struct Checkin {
    content: String,
}

async fn post_checkin(
    State(st): State<Shared>,
    headers: HeaderMap,
    UrlPath(id): UrlPath<u64>,
    Json(b): Json<Checkin>,
) -> ApiResult {
    let content = st
        .service
        .put_blob(b.content.as_bytes())
        .map_err(|e| ApiError::engine(st.service.seq(), &e))?;
    mutate(st, headers, Command::Checkin { doc: DocId(id), content }).await
}

async fn post_archive(State(st): State<Shared>, headers: HeaderMap, UrlPath(id): UrlPath<u64>) -> ApiResult {
    mutate(st, headers, Command::Archive { doc: DocId(id) }).await
}

#[derive(Deserialize, Default)]
struct Submit {
    #[serde(default)]
    route: Option<crate::routing::RouteId>,
}

async fn post_submit(
    State(st): State<Shared>,
    headers: HeaderMap,
    UrlPath(id): UrlPath<u64>,
    body: Bytes,
) -> ApiResult {
    let b: Submit = if body.is_empty() {
        Submit::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError::malformed(st.service.seq(), e.to_string()))?
    };
    mutate(
        st,
        headers,
        Command::Submit {
            doc: DocId(id),
            route: b.route,
        },
    )
    .await
}

#[derive(Serialize)]
struct Trace<'a> {
    state: &'a RouteState,
    next: Option<StepDecision>,
}

async fn get_trace(State(st): State<Shared>, headers: HeaderMap, UrlPath(id): UrlPath<u64>) -> ApiResult {
    let (seq, e) = st.service.view();
    readable(&headers, &e, seq, DocId(id), Action::Read)?;
    let state = e
        .route_state(DocId(id))
        .ok_or_else(|| ApiError::engine(seq, &EngineError::NotInRoute(DocId(id))))?;
    Ok(ok(
        seq,
        Trace {
            state,
            next: e.next_candidates(DocId(id)).ok(),
        },
    ))
}

#[derive(Deserialize)]
struct SearchParams {
    class: Option<String>,
    title: Option<String>,
    author: Option<String>,
    #[serde(default)]
    archived: bool,
}

async fn get_search(State(st): State<Shared>, headers: HeaderMap, UrlQuery(p): UrlQuery<SearchParams>) -> ApiResult {
    let (seq, e) = st.service.view();
    let user = identity(&headers, &e, seq)?;
    let fail = |err: EngineError| ApiError::engine(seq, &err);
    let q = Query {
        class: p
            .class
            .map(|c| e.resolve_class(HierarchyKind::DocumentClass, &parse_ref(&c)))
            .transpose()
            .map_err(fail)?,
        title: p.title,
        author: p.author.map(|a| e.resolve_user(&parse_ref(&a))).transpose().map_err(fail)?,
        include_archived: p.archived,
    };
    let ids = e.search(user, &q).map_err(fail)?;
    let docs: Vec<&Document> = ids.iter().filter_map(|id| e.document(*id).ok()).collect();
    Ok(ok(seq, docs))
}

#[derive(Serialize)]
struct RouteView<'a> {
    #[serde(flatten)]
    spec: &'a crate::routing::RouteSpec,
    text: String,
}

async fn get_routes(State(st): State<Shared>) -> ApiResult {
    let (seq, e) = st.service.view();
    let out: Vec<RouteView> = e
        .routes()
        .values()
        .map(|spec| RouteView {
            spec,
            text: e.route_text(spec.id).unwrap_or_default(),
        })
        .collect();
    Ok(ok(seq, out))
}

#[derive(Deserialize)]
struct NewRoute {
    text: String,
}

/// Accepts `{"text": "..."}` or the route text itself.
async fn post_route(State(st): State<Shared>, headers: HeaderMap, body: Bytes) -> ApiResult {
    let raw = String::from_utf8(body.to_vec()).map_err(|_| ApiError::malformed(st.service.seq(), "body is not UTF-8"))?;
    let text = match serde_json::from_str::<NewRoute>(&raw) {
        Ok(r) => r.text,
        Err(_) => raw,
    };
    mutate(st, headers, Command::AddRoute { text }).await
}

#[derive(Deserialize)]
struct InboxParams {
    user: Option<String>,
}

async fn get_inbox(State(st): State<Shared>, headers: HeaderMap, UrlQuery(p): UrlQuery<InboxParams>) -> ApiResult {
    let (seq, e) = st.service.view();
    let user = match p.user {
        Some(u) => e.resolve_user(&parse_ref(&u)).map_err(|err| ApiError::engine(seq, &err))?,
        None => identity(&headers, &e, seq)?,
    };
    let items = e.inbox(user).map_err(|err| ApiError::engine(seq, &err))?;
    Ok(ok(seq, items))
}

#[derive(Deserialize)]
struct AdvanceBody {
    doc: DocId,
    action: Action,
}

#[derive(Deserialize)]
struct RejectBody {
    doc: DocId,
    reason: String,
}

async fn post_advance(State(st): State<Shared>, headers: HeaderMap, Json(b): Json<AdvanceBody>) -> ApiResult {
    mutate(
        st,
        headers,
        Command::Advance {
            doc: b.doc,
            action: b.action,
        },
    )
    .await
}

async fn post_reject(State(st): State<Shared>, headers: HeaderMap, Json(b): Json<RejectBody>) -> ApiResult {
    mutate(
        st,
        headers,
        Command::Reject {
            doc: b.doc,
            reason: b.reason,
        },
    )
    .await
}

#[derive(Serialize)]
struct PreviewView {
    step: Option<StepDecision>,
    /// `Allow`, or the reason code the commit would fail with.
    verdict: String,
    deny: Option<DenyReason>,
    outcome: Option<RouteState>,
}

async fn post_preview(State(st): State<Shared>, headers: HeaderMap, Json(b): Json<AdvanceBody>) -> ApiResult {
    let (seq, e) = st.service.view();
    let actor = identity(&headers, &e, seq)?;
    let p = e
        .preview(b.doc, actor, b.action, seq + 1)
        .map_err(|err| ApiError::engine(seq, &err))?;
    let (verdict, deny, outcome) = match p.outcome {
        Ok(rs) => ("Allow".to_string(), None, Some(rs)),
        Err(err) => {
            let err = EngineError::from(err);
            (err.code().to_string(), err.deny_reason(), None)
        }
    };
    Ok(ok(
        seq,
        PreviewView {
            step: p.step.ok(),
            verdict,
            deny,
            outcome,
        },
    ))
}

#[derive(Deserialize)]
struct FromSeq {
    #[serde(default)]
    from_seq: u64,
}

async fn get_audit(State(st): State<Shared>, UrlQuery(p): UrlQuery<FromSeq>) -> ApiResult {
    let seq = st.service.seq();
    let events = st
        .service
        .audit(p.from_seq)
        .map_err(|e| ApiError::engine(seq, &EngineError::Storage(e.to_string())))?;
    Ok(ok(seq, events))
}

async fn get_denials(State(st): State<Shared>, UrlQuery(p): UrlQuery<FromSeq>) -> ApiResult {
    let seq = st.service.seq();
    let d = st
        .service
        .denials(p.from_seq)
        .map_err(|e| ApiError::engine(seq, &EngineError::Storage(e.to_string())))?;
    Ok(ok(seq, d))
}

#[derive(Deserialize)]
struct MatrixParams {
    action: Option<String>,
}

async fn get_matrix(State(st): State<Shared>, UrlQuery(p): UrlQuery<MatrixParams>) -> ApiResult {
    let (seq, e) = st.service.view();
    let actions = match p.action {
        None => vec![Action::Read],
        Some(list) => list
            .split(',')
            .map(|a| a.parse::<Action>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|err| ApiError::malformed(seq, err.to_string()))?,
    };
    let m = e.decision_matrix(&actions).map_err(|err| ApiError::engine(seq, &err))?;
    Ok(ok(seq, m.cells))
}

#[derive(Serialize)]
struct DigestView {
    digest: String,
}

async fn get_digest(State(st): State<Shared>) -> ApiResult {
    let (seq, e) = st.service.view();
    Ok(ok(seq, DigestView { digest: e.digest() }))
}

async fn post_snapshot(State(st): State<Shared>, headers: HeaderMap) -> ApiResult {
    let (seq, e) = st.service.view();
    let actor = identity(&headers, &e, seq)?;
    if actor != UserId::SYSTEM {
        let u = e.user(actor).map_err(|err| ApiError::engine(seq, &err))?;
        if !e.policy().is_system_adm(u) {
            return Err(ApiError::engine(seq, &EngineError::Denied(DenyReason::AdminOnly)));
        }
    }
    let st2 = Arc::clone(&st);
    let snap = tokio::task::spawn_blocking(move || st2.service.snapshot_and_compact())
        .await
        .map_err(|err| ApiError::engine(seq, &EngineError::Storage(err.to_string())))?
        .map_err(|err| ApiError::engine(seq, &EngineError::Storage(err.to_string())))?;
    Ok(ok(snap.seq, DigestView { digest: snap.digest }))
}

fn content_type(p: &Path) -> &'static str {
    match p.extension().and_then(|e| e.to_str()) {
        Some("html") => "text/html; charset=utf-8",
        Some("js") => "text/javascript",
        Some("css") => "text/css",
        Some("json") => "application/json",
        Some("svg") => "image/svg+xml",
        Some("png") => "image/png",
        _ => "application/octet-stream",
    }
}

fn serve_ui(st: &AppState, rel: &str) -> ApiResult {
    let seq = st.service.seq();
    let missing = || ApiError::engine(seq, &EngineError::UnknownTarget(format!("/ui/{rel}")));
    let root = st.ui_dir.as_ref().ok_or_else(missing)?;
    let rel = Path::new(if rel.is_empty() { "index.html" } else { rel });
    if rel.components().any(|c| !matches!(c, Component::Normal(_))) {
        return Err(missing());
    }
    let path = root.join(rel);
    let bytes = std::fs::read(&path).map_err(|_| missing())?;
    Ok(([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response())
}

async fn ui_index(State(st): State<Shared>) -> ApiResult {
    serve_ui(&st, "")
}

async fn ui_file(State(st): State<Shared>, UrlPath(rel): UrlPath<String>) -> ApiResult {
    serve_ui(&st, &rel)
}

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/classes/{kind}", get(get_classes).post(post_class))
        .route("/users", get(get_users).post(post_user))
        .route("/workgroups", get(get_workgroups).post(post_workgroup))
        .route("/nodes", get(get_nodes).post(post_node))
        .route("/nodes/{h}", axum::routing::delete(delete_node))
        .route("/documents", post(post_document))
        .route("/documents/{id}", get(get_document))
        .route("/documents/{id}/content", get(get_content))
        .route("/documents/{id}/checkin", post(post_checkin))
        .route("/documents/{id}/archive", post(post_archive))
        .route("/documents/{id}/submit", post(post_submit))
        .route("/documents/{id}/route", get(get_trace))
        .route("/search", get(get_search))
        .route("/routes", get(get_routes).post(post_route))
        .route("/inbox", get(get_inbox))
        .route("/actions/advance", post(post_advance))
        .route("/actions/reject", post(post_reject))
        .route("/actions/preview", post(post_preview))
        .route("/audit", get(get_audit))
        .route("/denials", get(get_denials))
        .route("/matrix", get(get_matrix))
        .route("/digest", get(get_digest))
        .route("/snapshot", post(post_snapshot))
        .route("/ui", get(ui_index))
        .route("/ui/", get(ui_index))
        .route("/ui/{*path}", get(ui_file))
        .with_state(state)
}

/// Serves on `listener` until ctrl-c.
pub async fn serve(state: Shared, listener: tokio::net::TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
