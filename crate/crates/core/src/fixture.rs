//! Declarative fixture files.
//!
//! One directive per line, `#` starts a comment, values with spaces are
//! double-quoted (`\"` and `\\` escape inside quotes):
//!
//! ```text
//! class document Memo parent=Correspondence
//! workgroup accounting
//! folder /Corp/Finance groups=finance
//! user alice role=Secretary level=Chief_Accounting clearance=Private groups=accounting home=/Corp/Finance
//! document "Budget" folder=/Corp/Finance class=Contract stype=Private owner=accounting author=alice content="..." acl=carol:Read+Modify
//! grant workgroup=finance subtree=/Corp/Finance actions=Read,Create levels=2..4
//! signature Contract
//! route
//!   route approve applies=Contract
//!   step 1: role=Secretary action=Route
//! end
//! ```
//!
//! Loading skips anything that already exists, so loading the same fixture
//! twice leaves the state unchanged.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use thiserror::Error;

use crate::access::{Action, Grantee, UserId};
use crate::blob::{BlobStore, ContentDigest};
use crate::engine::{AclEntry, Command, Engine, EngineError, GranteeRef, Outcome, Ref};
use crate::isa::HierarchyKind;
use crate::lattice::SecurityType;
use crate::routing::RouteText;

/// Default hierarchies and routes installed by `init`.
pub const INIT: &str = include_str!("../fixtures/init.fixture");

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("fixture line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("fixture line {line}: {source}")]
    Apply {
        line: usize,
        #[source]
        source: EngineError,
    },
}

impl FixtureError {
    pub fn engine_error(&self) -> Option<&EngineError> {
        match self {
            FixtureError::Apply { source, .. } => Some(source),
            FixtureError::Parse { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Directive {
    Class {
        kind: HierarchyKind,
        name: String,
        parent: String,
    },
    Workgroup(String),
    Folder {
        path: String,
        groups: Vec<String>,
    },
    User {
        name: String,
        role: String,
        level: String,
        clearance: SecurityType,
        groups: Vec<String>,
        home: Option<String>,
    },
    Document {
        title: String,
        folder: String,
        class: String,
        stype: SecurityType,
        owner: String,
        author: String,
        content: String,
        level: Option<String>,
        acl: Vec<(String, BTreeSet<Action>)>,
    },
    Grant {
        grantee: GranteeRef,
        subtree: String,
        actions: BTreeSet<Action>,
        levels: Option<(u32, u32)>,
    },
    Signature(String),
    Route {
        name: String,
        text: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fixture {
    /// Directives with the line they start on.
    pub directives: Vec<(usize, Directive)>,
}

/// Splits a line into words, honouring double quotes.
fn tokenize(line: &str) -> Result<Vec<String>, String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut in_word = false;
    let mut chars = line.chars();
    while let Some(c) = chars.next() {
        match c {
            '"' => {
                in_word = true;
                loop {
                    match chars.next() {
                        Some('"') => break,
                        Some('\\') => match chars.next() {
                            Some(e @ ('"' | '\\')) => cur.push(e),
                            Some('n') => cur.push('\n'),
                            _ => return Err("bad escape in quoted value".into()),
                        },
                        Some(c) => cur.push(c),
                        None => return Err("unterminated quote".into()),
                    }
                }
            }
            c if c.is_whitespace() => {
                if in_word {
                    out.push(std::mem::take(&mut cur));
                    in_word = false;
                }
            }
            c => {
                in_word = true;
                cur.push(c);
            }
        }
    }
    if in_word {
        out.push(cur);
    }
    Ok(out)
}

struct Args {
    positional: Vec<String>,
    keys: BTreeMap<String, String>,
}

impl Args {
    fn parse(words: Vec<String>) -> Result<Self, String> {
        let mut positional = Vec::new();
        let mut keys = BTreeMap::new();
        for w in words {
            match w.split_once('=') {
                Some((k, v)) if !k.is_empty() && k.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') => {
                    if keys.insert(k.to_string(), v.to_string()).is_some() {
                        return Err(format!("`{k}` given twice"));
                    }
                }
                _ => positional.push(w),
            }
        }
        Ok(Args { positional, keys })
    }

    fn take(&mut self, k: &str) -> Result<String, String> {
        self.keys.remove(k).ok_or_else(|| format!("{k}=... missing"))
    }

    fn take_opt(&mut self, k: &str) -> Option<String> {
        self.keys.remove(k)
    }

    fn list(&mut self, k: &str) -> Vec<String> {
        self.keys
            .remove(k)
            .map(|v| v.split(',').filter(|s| !s.is_empty()).map(str::to_string).collect())
            .unwrap_or_default()
    }

    fn finish(self, expected_positional: usize) -> Result<Vec<String>, String> {
        if let Some(k) = self.keys.keys().next() {
            return Err(format!("unknown key `{k}`"));
        }
        if self.positional.len() != expected_positional {
            return Err(format!(
                "expected {expected_positional} positional value(s), found {}",
                self.positional.len()
            ));
        }
        Ok(self.positional)
    }
}

fn parse_actions(s: &str, sep: char) -> Result<BTreeSet<Action>, String> {
    s.split(sep)
        .map(|a| a.parse::<Action>().map_err(|e| e.to_string()))
        .collect()
}

fn parse_levels(s: &str) -> Result<(u32, u32), String> {
    let bad = || format!("bad level range `{s}`");
    let (lo, hi) = s.split_once("..").ok_or_else(bad)?;
    Ok((lo.parse().map_err(|_| bad())?, hi.parse().map_err(|_| bad())?))
}

fn parse_directive(words: Vec<String>) -> Result<Directive, String> {
    let mut words = words.into_iter();
    let head = words.next().unwrap_or_default();
    let mut a = Args::parse(words.collect())?;
    let d = match head.as_str() {
        "class" => {
            let parent = a.take("parent")?;
            let [kind, name] = <[String; 2]>::try_from(a.finish(2)?).expect("arity checked");
            let kind = kind.parse::<HierarchyKind>().map_err(|e| e.to_string())?;
            Directive::Class { kind, name, parent }
        }
        "workgroup" => {
            let [name] = <[String; 1]>::try_from(a.finish(1)?).expect("arity checked");
            Directive::Workgroup(name)
        }
        "folder" => {
            let groups = a.list("groups");
            let [path] = <[String; 1]>::try_from(a.finish(1)?).expect("arity checked");
            if !path.starts_with('/') || path.len() < 2 {
                return Err(format!("folder path `{path}` must be absolute"));
            }
            Directive::Folder { path, groups }
        }
        "user" => {
            let role = a.take("role")?;
            let level = a.take("level")?;
            let clearance = a.take("clearance")?.parse().map_err(|e: crate::lattice::LatticeError| e.to_string())?;
            let groups = a.list("groups");
            let home = a.take_opt("home");
            let [name] = <[String; 1]>::try_from(a.finish(1)?).expect("arity checked");
            Directive::User {
                name,
                role,
                level,
                clearance,
                groups,
                home,
            }
        }
        "document" => {
            let folder = a.take("folder")?;
            let class = a.take("class")?;
            let stype = a.take("stype")?.parse().map_err(|e: crate::lattice::LatticeError| e.to_string())?;
            let owner = a.take("owner")?;
            let author = a.take("author")?;
            let content = a.take("content")?;
            let level = a.take_opt("level");
            let mut acl = Vec::new();
            for entry in a.list("acl") {
                let (user, actions) = entry
                    .split_once(':')
                    .ok_or_else(|| format!("acl entry `{entry}` is not user:Action+Action"))?;
                acl.push((user.to_string(), parse_actions(actions, '+')?));
            }
            let [title] = <[String; 1]>::try_from(a.finish(1)?).expect("arity checked");
            Directive::Document {
                title,
                folder,
                class,
                stype,
                owner,
                author,
                content,
                level,
                acl,
            }
        }
        "grant" => {
            let grantee = match (a.take_opt("user"), a.take_opt("workgroup")) {
                (Some(u), None) => GranteeRef::User(Ref::Name(u)),
                (None, Some(w)) => GranteeRef::Workgroup(Ref::Name(w)),
                _ => return Err("grant needs exactly one of user= or workgroup=".into()),
            };
            let subtree = a.take("subtree")?;
            let actions = parse_actions(&a.take("actions")?, ',')?;
            let levels = a.take_opt("levels").map(|l| parse_levels(&l)).transpose()?;
            a.finish(0)?;
            Directive::Grant {
                grantee,
                subtree,
                actions,
                levels,
            }
        }
        "signature" => {
            let [class] = <[String; 1]>::try_from(a.finish(1)?).expect("arity checked");
            Directive::Signature(class)
        }
        other => return Err(format!("unknown directive `{other}`")),
    };
    Ok(d)
}

impl Fixture {
    pub fn parse(text: &str) -> Result<Self, FixtureError> {
        let mut directives = Vec::new();
        let mut route: Option<(usize, String)> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let err = |message: String| FixtureError::Parse { line, message };
            let t = raw.trim();
            if let Some((start, body)) = route.as_mut() {
                if t == "end" {
                    let parsed = RouteText::parse(body).map_err(|e| FixtureError::Parse {
                        line: *start,
                        message: e.to_string(),
                    })?;
                    directives.push((
                        *start,
                        Directive::Route {
                            name: parsed.name,
                            text: std::mem::take(body),
                        },
                    ));
                    route = None;
                } else {
                    body.push_str(t);
                    body.push('\n');
                }
                continue;
            }
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            if t == "route" {
                route = Some((line, String::new()));
                continue;
            }
            let words = tokenize(t).map_err(err)?;
            directives.push((line, parse_directive(words).map_err(err)?));
        }
        if let Some((start, _)) = route {
            return Err(FixtureError::Parse {
                line: start,
                message: "route block without `end`".into(),
            });
        }
        Ok(Fixture { directives })
    }
}

/// Where fixture commands go: a bare engine or the logging service.
pub trait CommandSink {
    fn state(&self) -> Arc<Engine>;
    fn submit(&mut self, actor: UserId, cmd: Command) -> Result<Outcome, EngineError>;
    fn put_blob(&mut self, bytes: &[u8]) -> Result<ContentDigest, EngineError>;
}

/// An engine with an in-memory sequence counter and blob store.
pub struct LocalEngine<B: BlobStore> {
    pub engine: Arc<Engine>,
    pub seq: u64,
    pub blobs: B,
}

impl<B: BlobStore> LocalEngine<B> {
    pub fn new(blobs: B) -> Self {
        LocalEngine {
            engine: Arc::new(Engine::new()),
            seq: 0,
            blobs,
        }
    }
}

impl<B: BlobStore> CommandSink for LocalEngine<B> {
    fn state(&self) -> Arc<Engine> {
        Arc::clone(&self.engine)
    }

    fn submit(&mut self, actor: UserId, cmd: Command) -> Result<Outcome, EngineError> {
        let mut next = (*self.engine).clone();
        let out = next.apply(actor, &cmd, self.seq + 1)?;
        self.seq += 1;
        self.engine = Arc::new(next);
        Ok(out)
    }

    fn put_blob(&mut self, bytes: &[u8]) -> Result<ContentDigest, EngineError> {
        self.blobs.put(bytes).map_err(|e| EngineError::Storage(e.to_string()))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub applied: usize,
    pub skipped: usize,
}

/// Translates one directive into a command, or `None` when its entity is
/// already present.
fn command_for(e: &Engine, d: &Directive, sink_blob: &mut dyn FnMut(&[u8]) -> Result<ContentDigest, EngineError>) -> Result<Option<Command>, EngineError> {
    let cmd = match d {
        Directive::Class { kind, name, parent } => {
            let h = e.hierarchy(*kind);
            let parent_id = e.resolve_class(*kind, &Ref::Name(parent.clone())).ok();
            let exists = parent_id.is_some_and(|p| {
                h.children(p)
                    .map(|mut c| c.any(|c| h.name(c).is_ok_and(|n| n == name)))
                    .unwrap_or(false)
            });
            if exists {
                return Ok(None);
            }
            Command::AddClass {
                kind: *kind,
                name: name.clone(),
                parent: Ref::Name(parent.clone()),
            }
        }
        Directive::Workgroup(name) => {
            if e.workgroups().any(|w| &w.name == name) {
                return Ok(None);
            }
            Command::AddWorkgroup { name: name.clone() }
        }
        Directive::Folder { path, groups } => {
            if e.store().resolve_path(path).is_some() {
                return Ok(None);
            }
            let (parent, name) = path.rsplit_once('/').expect("absolute path");
            Command::CreateFolder {
                parent: if parent.is_empty() { None } else { Some(Ref::Name(parent.to_string())) },
                name: name.to_string(),
                workgroups: groups.iter().map(|g| Ref::Name(g.clone())).collect(),
            }
        }
        Directive::User {
            name,
            role,
            level,
            clearance,
            groups,
            home,
        } => {
            if e.users().any(|u| &u.name == name) {
                return Ok(None);
            }
            Command::AddUser {
                name: name.clone(),
                role: Ref::Name(role.clone()),
                level: Ref::Name(level.clone()),
                stype: *clearance,
                workgroups: groups.iter().map(|g| Ref::Name(g.clone())).collect(),
                home: home.clone().map(Ref::Name),
            }
        }
        Directive::Document {
            title,
            folder,
            class,
            stype,
            owner,
            author,
            content,
            level,
            acl,
        } => {
            let folder_ref = Ref::Name(folder.clone());
            if let Ok(h) = e.resolve_node(&folder_ref) {
                let exists = e.store().children(h).is_ok_and(|mut c| {
                    c.any(|n| {
                        e.store()
                            .node(n)
                            .ok()
                            .and_then(|n| n.document())
                            .and_then(|d| e.store().document(d).ok())
                            .is_some_and(|d| &d.profile.title == title)
                    })
                });
                if exists {
                    return Ok(None);
                }
            }
            Command::CreateDocument {
                folder: folder_ref,
                title: title.clone(),
                class: Ref::Name(class.clone()),
                stype: *stype,
                owner: Ref::Name(owner.clone()),
                content: sink_blob(content.as_bytes())?,
                acl: acl
                    .iter()
                    .map(|(u, actions)| AclEntry {
                        user: Ref::Name(u.clone()),
                        actions: actions.clone(),
                    })
                    .collect(),
                level: level.clone().map(Ref::Name),
                author: Some(Ref::Name(author.clone())),
            }
        }
        Directive::Grant {
            grantee,
            subtree,
            actions,
            levels,
        } => {
            let resolved = match grantee {
                GranteeRef::User(u) => e.resolve_user(u).map(Grantee::User),
                GranteeRef::Workgroup(w) => e.resolve_workgroup(w).map(Grantee::Workgroup),
            };
            let node = e.resolve_node(&Ref::Name(subtree.clone()));
            if let (Ok(g), Ok(n)) = (resolved, node) {
                if e.grants()
                    .iter()
                    .any(|x| x.grantee == g && x.subtree == n && &x.actions == actions && &x.levels == levels)
                {
                    return Ok(None);
                }
            }
            Command::Grant {
                grantee: grantee.clone(),
                subtree: Ref::Name(subtree.clone()),
                actions: actions.clone(),
                levels: *levels,
            }
        }
        Directive::Signature(class) => {
            let id = e.resolve_class(HierarchyKind::DocumentClass, &Ref::Name(class.clone()));
            if id.is_ok_and(|c| e.signature_classes().contains(&c)) {
                return Ok(None);
            }
            Command::RequireSignature {
                class: Ref::Name(class.clone()),
            }
        }
        Directive::Route { name, text } => {
            if e.routes().values().any(|r| &r.name == name) {
                return Ok(None);
            }
            Command::AddRoute { text: text.clone() }
        }
    };
    Ok(Some(cmd))
}

/// Applies `fx` as the system principal, skipping entities that exist.
pub fn load<S: CommandSink>(fx: &Fixture, sink: &mut S) -> Result<LoadReport, FixtureError> {
    let mut report = LoadReport::default();
    for (line, d) in &fx.directives {
        let line = *line;
        let state = sink.state();
        let mut blobs = Vec::new();
        let cmd = command_for(&state, d, &mut |bytes| {
            blobs.push(bytes.to_vec());
            Ok(ContentDigest::of(bytes))
        })
        .map_err(|source| FixtureError::Apply { line, source })?;
        let Some(cmd) = cmd else {
            report.skipped += 1;
            continue;
        };
        for b in &blobs {
            sink.put_blob(b).map_err(|source| FixtureError::Apply { line, source })?;
        }
        sink.submit(UserId::SYSTEM, cmd)
            .map_err(|source| FixtureError::Apply { line, source })?;
        report.applied += 1;
    }
    Ok(report)
}

pub fn load_text<S: CommandSink>(text: &str, sink: &mut S) -> Result<LoadReport, FixtureError> {
    load(&Fixture::parse(text)?, sink)
}

/// Installs the default hierarchies and routes.
pub fn init<S: CommandSink>(sink: &mut S) -> Result<LoadReport, FixtureError> {
    load_text(INIT, sink)
}
