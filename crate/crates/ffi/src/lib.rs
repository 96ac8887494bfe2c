//! C ABI over a persistent docflow service.
//!
//! Every function returns a [`DfStatus`]. Strings handed out through `out`
//! parameters are owned by the caller and released with [`df_string_free`].
//! After a failure, [`df_last_error`] describes it until the next call on the
//! same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use docflow::access::{Action, UserId};
use docflow::engine::{Command, Engine, EngineError, ErrorCategory, Ref};
use docflow::fixture::{self, FixtureError, LoadReport};
use docflow::isa::HierarchyKind;
use docflow::service::{Config, Service, ServiceError};
use docflow::store::{DocId, Query};

/// An open data directory. Opaque to C.
pub struct DfEngine {
    service: Service,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DfStatus {
    Ok = 0,
    Conflict = 1,
    Policy = 2,
    NotFound = 3,
    Malformed = 4,
    Storage = 5,
    Panic = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(DfStatus, String);

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        let status = match e.category() {
            ErrorCategory::Policy => DfStatus::Policy,
            ErrorCategory::NotFound => DfStatus::NotFound,
            ErrorCategory::Malformed => DfStatus::Malformed,
            ErrorCategory::Conflict => DfStatus::Conflict,
            ErrorCategory::Storage => DfStatus::Storage,
        };
        Failure(status, format!("{}: {e}", e.label()))
    }
}

impl From<ServiceError> for Failure {
    fn from(e: ServiceError) -> Self {
        Failure(DfStatus::Storage, e.to_string())
    }
}

impl From<FixtureError> for Failure {
    fn from(e: FixtureError) -> Self {
        let message = e.to_string();
        match e {
            FixtureError::Apply { source, .. } => Failure(Failure::from(source).0, message),
            FixtureError::Parse { .. } => Failure(DfStatus::Malformed, message),
        }
    }
}

fn malformed(message: impl Into<String>) -> Failure {
    Failure(DfStatus::Malformed, message.into())
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("nul bytes replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DfStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DfStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("panic inside docflow".into());
            DfStatus::Panic
        }
    }
}

/// # Safety
/// `p` is null or a NUL-terminated string valid for the call.
unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(malformed(format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| malformed(format!("{what} is not UTF-8")))
}

/// # Safety
/// `e` is null or a handle from [`df_open`] that has not been closed.
unsafe fn engine<'a>(e: *const DfEngine) -> Result<&'a DfEngine, Failure> {
    e.as_ref().ok_or_else(|| malformed("engine handle is null"))
}

/// # Safety
/// `out` is null or valid for a pointer write.
unsafe fn hand_out(out: *mut *mut c_char, s: String) -> Result<(), Failure> {
    if out.is_null() {
        return Err(malformed("output pointer is null"));
    }
    let c = CString::new(s).map_err(|_| malformed("output holds a NUL byte"))?;
    *out = c.into_raw();
    Ok(())
}

fn parse_ref(s: &str) -> Ref {
    s.parse::<u64>().map_or_else(|_| Ref::Name(s.to_string()), Ref::Id)
}

fn actor(e: &Engine, name: &str) -> Result<UserId, Failure> {
    if name == "system" {
        return Ok(UserId::SYSTEM);
    }
    Ok(e.resolve_user(&parse_ref(name))?)
}

/// # Safety
/// Both counters are null or valid for writes.
unsafe fn report(r: LoadReport, applied: *mut u64, skipped: *mut u64) {
    if let Some(a) = applied.as_mut() {
        *a = r.applied as u64;
    }
    if let Some(s) = skipped.as_mut() {
        *s = r.skipped as u64;
    }
}

/// Opens (or creates) a data directory. `snapshot_every` of 0 disables
/// automatic snapshots.
///
/// # Safety
/// `data_dir` is a NUL-terminated path; `out` is valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn df_open(data_dir: *const c_char, snapshot_every: u64, out: *mut *mut DfEngine) -> DfStatus {
    guard(|| {
        let dir = text(data_dir, "data_dir")?;
        if out.is_null() {
            return Err(malformed("output pointer is null"));
        }
        let service = Service::open(&Config {
            data_dir: dir.into(),
            snapshot_every,
        })?;
        *out = Box::into_raw(Box::new(DfEngine { service }));
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `e` is null or a live handle from [`df_open`]; it must not be used again.
#[no_mangle]
pub unsafe extern "C" fn df_close(e: *mut DfEngine) {
    if !e.is_null() {
        drop(Box::from_raw(e));
    }
}

/// Installs the default hierarchies and routes.
///
/// # Safety
/// `e` is a live handle; the counters are null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn df_init(e: *const DfEngine, applied: *mut u64, skipped: *mut u64) -> DfStatus {
    guard(|| {
        let r = fixture::init(&mut &engine(e)?.service)?;
        report(r, applied, skipped);
        Ok(())
    })
}

/// Loads fixture text; entities that already exist are skipped.
///
/// # Safety
/// `e` is a live handle, `fixture_text` a NUL-terminated string, the
/// counters null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn df_load_fixture(
    e: *const DfEngine,
    fixture_text: *const c_char,
    applied: *mut u64,
    skipped: *mut u64,
) -> DfStatus {
    guard(|| {
        let t = text(fixture_text, "fixture_text")?;
        let r = fixture::load_text(t, &mut &engine(e)?.service)?;
        report(r, applied, skipped);
        Ok(())
    })
}

/// Stores content and returns its hex digest for use in commands.
///
/// # Safety
/// `bytes` points to `len` readable bytes (or is null with `len` 0);
/// `out_digest` is valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn df_put_blob(
    e: *const DfEngine,
    bytes: *const u8,
    len: usize,
    out_digest: *mut *mut c_char,
) -> DfStatus {
    guard(|| {
        let data = match (bytes.is_null(), len) {
            (true, 0) => &[][..],
            (true, _) => return Err(malformed("bytes is null")),
            (false, _) => std::slice::from_raw_parts(bytes, len),
        };
        let d = engine(e)?.service.put_blob(data)?;
        hand_out(out_digest, d.to_hex())
    })
}

/// Submits one command, given as the JSON object the HTTP audit log shows
/// under `payload`. `actor` is a user name, id, or `system`.
///
/// On success `out_json` receives `{"seq":..,"data":..}`; on a refusal it
/// receives `{"seq":..,"reason":..,"deny":..,"message":..}`.
///
/// # Safety
/// `e` is a live handle; `actor` and `command_json` are NUL-terminated;
/// `out_json` is null or valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn df_submit(
    e: *const DfEngine,
    actor_name: *const c_char,
    command_json: *const c_char,
    out_json: *mut *mut c_char,
) -> DfStatus {
    guard(|| {
        let svc = &engine(e)?.service;
        let cmd: Command = serde_json::from_str(text(command_json, "command_json")?)
            .map_err(|err| malformed(format!("bad command: {err}")))?;
        let (_, state) = svc.view();
        let who = actor(&state, text(actor_name, "actor")?)?;
        let (body, result) = match svc.submit(who, cmd) {
            Ok(r) => (serde_json::json!({"seq": r.seq, "data": r.result}), Ok(())),
            Err(refusal) => {
                let err = &refusal.error;
                let body = serde_json::json!({
                    "seq": refusal.seq,
                    "reason": err.code(),
                    "deny": err.deny_reason(),
                    "message": err.to_string(),
                });
                (body, Err(Failure::from(refusal.error)))
            }
        };
        if !out_json.is_null() {
            hand_out(out_json, body.to_string())?;
        }
        result
    })
}

/// Decides `action` for `actor` on a document; `out_decision` receives
/// `Allow` or `Deny(<reason>)`.
///
/// # Safety
/// `e` is a live handle; strings are NUL-terminated; `out_decision` is valid
/// for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn df_check_access(
    e: *const DfEngine,
    actor_name: *const c_char,
    doc: u64,
    action: *const c_char,
    out_decision: *mut *mut c_char,
) -> DfStatus {
    guard(|| {
        let (_, state) = engine(e)?.service.view();
        let who = actor(&state, text(actor_name, "actor")?)?;
        let action: Action = text(action, "action")?
            .parse()
            .map_err(|err: docflow::access::UnknownAction| malformed(err.to_string()))?;
        let d = state.check_access(who, docflow::access::Target::Document(DocId(doc)), action)?;
        hand_out(out_decision, d.to_string())
    })
}

/// Searches documents readable by `actor`. `query_json` may be null or an
/// object with optional `class`, `title`, `author` and `archived` keys;
/// `out_json` receives an array of document ids.
///
/// # Safety
/// `e` is a live handle; strings are NUL-terminated or (for the query) null;
/// `out_json` is valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn df_search(
    e: *const DfEngine,
    actor_name: *const c_char,
    query_json: *const c_char,
    out_json: *mut *mut c_char,
) -> DfStatus {
    guard(|| {
        let (_, state) = engine(e)?.service.view();
        let who = actor(&state, text(actor_name, "actor")?)?;
        let q: serde_json::Value = if query_json.is_null() {
            serde_json::Value::Null
        } else {
            serde_json::from_str(text(query_json, "query_json")?).map_err(|err| malformed(format!("bad query: {err}")))?
        };
        let field = |k: &str| -> Option<String> {
            match &q[k] {
                serde_json::Value::String(s) => Some(s.clone()),
                serde_json::Value::Number(n) => Some(n.to_string()),
                _ => None,
            }
        };
        let query = Query {
            class: field("class")
                .map(|c| state.resolve_class(HierarchyKind::DocumentClass, &parse_ref(&c)))
                .transpose()?,
            title: field("title"),
            author: field("author").map(|a| state.resolve_user(&parse_ref(&a))).transpose()?,
            include_archived: q["archived"].as_bool().unwrap_or(false),
        };
        let ids: Vec<u64> = state.search(who, &query)?.into_iter().map(|d| d.0).collect();
        hand_out(out_json, serde_json::to_string(&ids).expect("ids serialize"))
    })
}

/// Current sequence number and state digest.
///
/// # Safety
/// `e` is a live handle; `out_seq` is null or writable; `out_digest` is valid
/// for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn df_digest(e: *const DfEngine, out_seq: *mut u64, out_digest: *mut *mut c_char) -> DfStatus {
    guard(|| {
        let (seq, state) = engine(e)?.service.view();
        if let Some(s) = out_seq.as_mut() {
            *s = seq;
        }
        hand_out(out_digest, state.digest())
    })
}

/// Writes a snapshot of the current state.
///
/// # Safety
/// `e` is a live handle.
#[no_mangle]
pub unsafe extern "C" fn df_snapshot(e: *const DfEngine) -> DfStatus {
    guard(|| {
        engine(e)?.service.snapshot_and_compact()?;
        Ok(())
    })
}

/// Message for the last failure on this thread, or null. Valid until the
/// next `df_` call on the same thread; do not free.
#[no_mangle]
pub extern "C" fn df_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Frees a string returned through an `out` parameter. Null is ignored.
///
/// # Safety
/// `s` is null or came from this library and has not been freed.
#[no_mangle]
pub unsafe extern "C" fn df_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
