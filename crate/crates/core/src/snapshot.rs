//! Line-oriented snapshot of the whole engine state.
//!
//! The body is one record per line, fields separated by `|`, using the same
//! `id|kind|parent|name` shape as hierarchy dumps for class records. Free
//! text is escaped (`\\`, `\p` for a pipe, `\n`, `\r`) so every record stays
//! on one line. Sets are comma-separated ids, absent values are `-`. Route
//! bodies and route histories are nested, so those records carry a JSON field.
//!
//! The header line `snapshot|<seq>|<sha256 of body>` precedes the body. The
//! digest covers only the body, so it identifies the state independently of
//! where it came from.

use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::access::{Acl, Action, Grantee, TreeGrant, User, UserId};
use crate::blob::ContentDigest;
use crate::engine::{Engine, Workgroup};
use crate::isa::{ClassId, Hierarchy, HierarchyKind};
use crate::lattice::{Label, Level, SecurityType, WorkgroupId};
use crate::routing::{RouteId, RouteSpec, RouteState};
use crate::store::{DocId, DocStatus, DocStore, Document, DocumentProfile, Folder, NodeHandle, Payload, TreeNode, VersionRecord};

const HEADER: &str = "snapshot";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SnapshotError {
    #[error("snapshot line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("snapshot digest mismatch: header says {expected}, body hashes to {actual}")]
    DigestMismatch { expected: String, actual: String },
    #[error("snapshot state is inconsistent: {0}")]
    Inconsistent(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Snapshot {
    pub seq: u64,
    pub digest: String,
    pub body: String,
}

impl Snapshot {
    pub fn capture(engine: &Engine, seq: u64) -> Self {
        let body = encode(engine);
        Snapshot {
            seq,
            digest: digest_of(&body),
            body,
        }
    }

    pub fn to_text(&self) -> String {
        format!("{HEADER}|{}|{}\n{}", self.seq, self.digest, self.body)
    }

    /// Parses and verifies a snapshot file, returning it with the rebuilt state.
    pub fn parse(text: &str) -> Result<(Snapshot, Engine), SnapshotError> {
        let (header, body) = text.split_once('\n').unwrap_or((text, ""));
        let malformed = |message: &str| SnapshotError::Malformed {
            line: 1,
            message: message.to_string(),
        };
        let mut h = header.split('|');
        if h.next() != Some(HEADER) {
            return Err(malformed("missing snapshot header"));
        }
        let seq = h
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| malformed("bad sequence number"))?;
        let expected = h.next().ok_or_else(|| malformed("missing digest"))?.to_string();
        let actual = digest_of(body);
        if expected != actual {
            return Err(SnapshotError::DigestMismatch { expected, actual });
        }
        let engine = decode(body)?;
        Ok((
            Snapshot {
                seq,
                digest: actual,
                body: body.to_string(),
            },
            engine,
        ))
    }
}

pub fn digest_of(body: &str) -> String {
    hex::encode(Sha256::digest(body.as_bytes()))
}

/// Digest of the canonical serialization of `engine`.
pub fn state_digest(engine: &Engine) -> String {
    digest_of(&encode(engine))
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '|' => out.push_str("\\p"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(s: &str) -> Result<String, String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('p') => out.push('|'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            other => return Err(format!("bad escape `\\{}`", other.map(String::from).unwrap_or_default())),
        }
    }
    Ok(out)
}

fn ids<T>(items: impl IntoIterator<Item = T>, f: impl Fn(T) -> u64) -> String {
    let v: Vec<String> = items.into_iter().map(|x| f(x).to_string()).collect();
    if v.is_empty() {
        "-".into()
    } else {
        v.join(",")
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| "-".into(), |v| v.to_string())
}

fn level_str(l: Level) -> String {
    match l {
        Level::Bottom => "B".into(),
        Level::Class(c) => c.to_string(),
    }
}

fn actions_str(a: &BTreeSet<Action>) -> String {
    if a.is_empty() {
        "-".into()
    } else {
        a.iter().map(|a| a.as_str()).collect::<Vec<_>>().join(",")
    }
}

pub fn encode(e: &Engine) -> String {
    let mut out = String::new();
    let mut line = |fields: &[String]| {
        out.push_str(&fields.join("|"));
        out.push('\n');
    };
    for kind in [HierarchyKind::DocumentClass, HierarchyKind::RoleClass, HierarchyKind::AccessLevel] {
        let h = e.hierarchy(kind);
        for l in h.to_text().lines() {
            line(&[format!("class|{l}")]);
        }
        line(&["next".into(), format!("class-{kind}"), h.next_id().to_string()]);
    }
    line(&["next".into(), "workgroup".into(), e.next_workgroup.to_string()]);
    line(&["next".into(), "user".into(), e.next_user.to_string()]);
    line(&["next".into(), "route".into(), e.next_route.to_string()]);
    line(&["next".into(), "node".into(), e.store.next_handle().to_string()]);
    line(&["next".into(), "doc".into(), e.store.next_doc().to_string()]);
    for w in e.workgroups.values() {
        line(&["workgroup".into(), w.id.0.to_string(), escape(&w.name)]);
    }
    for u in e.users.values() {
        line(&[
            "user".into(),
            u.id.to_string(),
            escape(&u.name),
            u.role.to_string(),
            level_str(u.clearance.level),
            u.clearance.stype.as_str().into(),
            ids(&u.workgroups, |w| w.0),
            opt(u.home),
        ]);
    }
    for n in e.store.nodes() {
        let mut f = vec!["node".into(), n.handle.to_string(), n.parent.to_string(), n.level.to_string()];
        match &n.payload {
            Payload::Folder(folder) => {
                f.extend(["folder".into(), escape(&folder.name), ids(&folder.workgroups, |w| w.0)]);
            }
            Payload::Document { doc } => f.extend(["document".into(), doc.to_string()]),
        }
        line(&f);
    }
    for d in e.store.documents() {
        let p = &d.profile;
        line(&[
            "doc".into(),
            d.id.to_string(),
            d.node.to_string(),
            d.status.as_str().into(),
            escape(&p.title),
            p.author.to_string(),
            p.class.to_string(),
            p.security_type.as_str().into(),
            level_str(p.label.level),
            p.label.stype.as_str().into(),
            ids(&p.label.groups, |w| w.0),
            p.owning_workgroup.0.to_string(),
            opt(p.route),
            p.created_seq.to_string(),
            opt(p.archived_seq),
        ]);
        for v in &d.versions {
            line(&[
                "version".into(),
                d.id.to_string(),
                v.version.to_string(),
                v.author.to_string(),
                v.digest.to_hex(),
                v.seq.to_string(),
            ]);
        }
        for (u, actions) in &d.acl.entries {
            line(&["acl".into(), d.id.to_string(), u.to_string(), actions_str(actions)]);
        }
    }
    for g in &e.grants {
        let (kind, id) = match g.grantee {
            Grantee::User(u) => ("user", u.0),
            Grantee::Workgroup(w) => ("workgroup", w.0),
        };
        line(&[
            "grant".into(),
            kind.into(),
            id.to_string(),
            g.subtree.to_string(),
            actions_str(&g.actions),
            g.levels.map_or_else(|| "-".into(), |(lo, hi)| format!("{lo}..{hi}")),
        ]);
    }
    for c in &e.signature_classes {
        line(&["signature".into(), c.to_string()]);
    }
    for r in e.routes.values() {
        let json = serde_json::to_string(r).expect("route specs serialize");
        line(&["route".into(), r.id.to_string(), escape(&json)]);
    }
    for rs in e.route_states.values() {
        let json = serde_json::to_string(rs).expect("route states serialize");
        line(&["routestate".into(), rs.doc.to_string(), escape(&json)]);
    }
    out
}

struct Fields<'a> {
    line: usize,
    parts: Vec<&'a str>,
    pos: usize,
}

impl<'a> Fields<'a> {
    fn err(&self, message: impl Into<String>) -> SnapshotError {
        SnapshotError::Malformed {
            line: self.line,
            message: message.into(),
        }
    }

    fn raw(&mut self) -> Result<&'a str, SnapshotError> {
        let v = self.parts.get(self.pos).copied().ok_or_else(|| self.err("too few fields"))?;
        self.pos += 1;
        Ok(v)
    }

    fn text(&mut self) -> Result<String, SnapshotError> {
        let raw = self.raw()?;
        unescape(raw).map_err(|m| self.err(m))
    }

    fn num<T: FromStr>(&mut self) -> Result<T, SnapshotError> {
        let raw = self.raw()?;
        raw.parse().map_err(|_| self.err(format!("bad number `{raw}`")))
    }

    fn opt_num<T: FromStr>(&mut self) -> Result<Option<T>, SnapshotError> {
        if self.parts.get(self.pos) == Some(&"-") {
            self.pos += 1;
            Ok(None)
        } else {
            self.num().map(Some)
        }
    }

    fn id_set(&mut self) -> Result<BTreeSet<u64>, SnapshotError> {
        let raw = self.raw()?;
        if raw == "-" {
            return Ok(BTreeSet::new());
        }
        raw.split(',')
            .map(|s| s.parse().map_err(|_| self.err(format!("bad id `{s}`"))))
            .collect()
    }

    fn actions(&mut self) -> Result<BTreeSet<Action>, SnapshotError> {
        let raw = self.raw()?;
        if raw == "-" {
            return Ok(BTreeSet::new());
        }
        raw.split(',')
            .map(|s| s.parse().map_err(|_| self.err(format!("bad action `{s}`"))))
            .collect()
    }

    fn level(&mut self) -> Result<Level, SnapshotError> {
        let raw = self.raw()?;
        if raw == "B" {
            return Ok(Level::Bottom);
        }
        raw.parse()
            .map(|n| Level::Class(ClassId(n)))
            .map_err(|_| self.err(format!("bad level `{raw}`")))
    }

    fn stype(&mut self) -> Result<SecurityType, SnapshotError> {
        let raw = self.raw()?;
        raw.parse().map_err(|_| self.err(format!("bad security type `{raw}`")))
    }

    fn json<T: serde::de::DeserializeOwned>(&mut self) -> Result<T, SnapshotError> {
        let text = self.text()?;
        serde_json::from_str(&text).map_err(|e| self.err(e.to_string()))
    }

    fn done(&self) -> Result<(), SnapshotError> {
        if self.pos == self.parts.len() {
            Ok(())
        } else {
            Err(self.err("trailing fields"))
        }
    }
}

fn parse_status(s: &str) -> Option<DocStatus> {
    [DocStatus::Draft, DocStatus::InRoute, DocStatus::Signed, DocStatus::Archived]
        .into_iter()
        .find(|st| st.as_str() == s)
}

pub fn decode(body: &str) -> Result<Engine, SnapshotError> {
    let inconsistent = |m: String| SnapshotError::Inconsistent(m);
    let mut class_text: BTreeMap<HierarchyKind, String> = BTreeMap::new();
    let mut class_next: BTreeMap<HierarchyKind, u64> = BTreeMap::new();
    let mut counters: BTreeMap<String, u64> = BTreeMap::new();
    let mut workgroups = BTreeMap::new();
    let mut users = BTreeMap::new();
    let mut nodes = Vec::new();
    let mut docs: BTreeMap<DocId, Document> = BTreeMap::new();
    let mut grants = Vec::new();
    let mut signature_classes = BTreeSet::new();
    let mut routes = BTreeMap::new();
    let mut route_states = BTreeMap::new();

    for (i, raw) in body.lines().enumerate() {
        if raw.is_empty() {
            continue;
        }
        let mut f = Fields {
            line: i + 2,
            parts: raw.split('|').collect(),
            pos: 0,
        };
        match f.raw()? {
            "class" => {
                let rest = &raw["class|".len()..];
                let kind = rest
                    .split('|')
                    .nth(1)
                    .and_then(|k| HierarchyKind::from_str(k).ok())
                    .ok_or_else(|| f.err("bad class record"))?;
                let text = class_text.entry(kind).or_default();
                text.push_str(rest);
                text.push('\n');
            }
            "next" => {
                let what = f.raw()?.to_string();
                let n: u64 = f.num()?;
                f.done()?;
                match what.strip_prefix("class-") {
                    Some(k) => {
                        let kind = HierarchyKind::from_str(k).map_err(|_| f.err("bad hierarchy kind"))?;
                        class_next.insert(kind, n);
                    }
                    None => {
                        counters.insert(what, n);
                    }
                }
            }
            "workgroup" => {
                let id = WorkgroupId(f.num()?);
                let name = f.text()?;
                f.done()?;
                workgroups.insert(id, Workgroup { id, name });
            }
            "user" => {
                let id = UserId(f.num()?);
                let name = f.text()?;
                let role = ClassId(f.num()?);
                let level = f.level()?;
                let stype = f.stype()?;
                let groups: BTreeSet<_> = f.id_set()?.into_iter().map(WorkgroupId).collect();
                let home = f.opt_num()?.map(NodeHandle);
                f.done()?;
                let clearance = Label {
                    level,
                    stype,
                    groups: BTreeSet::new(),
                };
                users.insert(id, User::new(id, &name, role, clearance, groups, home));
            }
            "node" => {
                let handle = NodeHandle(f.num()?);
                let parent = NodeHandle(f.num()?);
                let level = f.num()?;
                let payload = match f.raw()? {
                    "folder" => {
                        let name = f.text()?;
                        let workgroups = f.id_set()?.into_iter().map(WorkgroupId).collect();
                        Payload::Folder(Folder { name, workgroups })
                    }
                    "document" => Payload::Document { doc: DocId(f.num()?) },
                    other => return Err(f.err(format!("unknown node payload `{other}`"))),
                };
                f.done()?;
                nodes.push(TreeNode {
                    handle,
                    parent,
                    level,
                    payload,
                });
            }
            "doc" => {
                let id = DocId(f.num()?);
                let node = NodeHandle(f.num()?);
                let status_raw = f.raw()?;
                let status = parse_status(status_raw).ok_or_else(|| f.err(format!("bad status `{status_raw}`")))?;
                let title = f.text()?;
                let author = UserId(f.num()?);
                let class = ClassId(f.num()?);
                let security_type = f.stype()?;
                let label = Label {
                    level: f.level()?,
                    stype: f.stype()?,
                    groups: f.id_set()?.into_iter().map(WorkgroupId).collect(),
                };
                let owning_workgroup = WorkgroupId(f.num()?);
                let route = f.opt_num()?.map(RouteId);
                let created_seq = f.num()?;
                let archived_seq = f.opt_num()?;
                f.done()?;
                docs.insert(
                    id,
                    Document {
                        id,
                        node,
                        profile: DocumentProfile {
                            title,
                            author,
                            class,
                            security_type,
                            label,
                            owning_workgroup,
                            route,
                            created_seq,
                            archived_seq,
                        },
                        versions: Vec::new(),
                        status,
                        acl: Acl::default(),
                    },
                );
            }
            "version" => {
                let doc = DocId(f.num()?);
                let version = f.num()?;
                let author = UserId(f.num()?);
                let raw_digest = f.raw()?;
                let digest = ContentDigest::from_str(raw_digest).map_err(|e| f.err(e.to_string()))?;
                let seq = f.num()?;
                f.done()?;
                let d = docs.get_mut(&doc).ok_or_else(|| f.err(format!("version for unknown document {doc}")))?;
                d.versions.push(VersionRecord {
                    version,
                    author,
                    digest,
                    seq,
                });
            }
            "acl" => {
                let doc = DocId(f.num()?);
                let user = UserId(f.num()?);
                let actions = f.actions()?;
                f.done()?;
                let d = docs.get_mut(&doc).ok_or_else(|| f.err(format!("acl for unknown document {doc}")))?;
                d.acl.entries.insert(user, actions);
            }
            "grant" => {
                let grantee = match f.raw()? {
                    "user" => Grantee::User(UserId(f.num()?)),
                    "workgroup" => Grantee::Workgroup(WorkgroupId(f.num()?)),
                    other => return Err(f.err(format!("bad grantee kind `{other}`"))),
                };
                let subtree = NodeHandle(f.num()?);
                let actions = f.actions()?;
                let levels_raw = f.raw()?;
                let levels = match levels_raw {
                    "-" => None,
                    r => {
                        let (lo, hi) = r.split_once("..").ok_or_else(|| f.err("bad level range"))?;
                        Some((
                            lo.parse().map_err(|_| f.err("bad level range"))?,
                            hi.parse().map_err(|_| f.err("bad level range"))?,
                        ))
                    }
                };
                f.done()?;
                grants.push(TreeGrant {
                    grantee,
                    subtree,
                    actions,
                    levels,
                });
            }
            "signature" => {
                signature_classes.insert(ClassId(f.num()?));
                f.done()?;
            }
            "route" => {
                let id = RouteId(f.num()?);
                let spec: RouteSpec = f.json()?;
                f.done()?;
                if spec.id != id {
                    return Err(f.err("route id does not match its body"));
                }
                routes.insert(id, spec);
            }
            "routestate" => {
                let doc = DocId(f.num()?);
                let rs: RouteState = f.json()?;
                f.done()?;
                if rs.doc != doc {
                    return Err(f.err("route state document does not match"));
                }
                route_states.insert(doc, rs);
            }
            other => return Err(f.err(format!("unknown record `{other}`"))),
        }
    }

    let hierarchy = |kind: HierarchyKind| -> Result<Hierarchy, SnapshotError> {
        let text = class_text
            .get(&kind)
            .ok_or_else(|| inconsistent(format!("no {kind} hierarchy")))?;
        let mut h = Hierarchy::from_text(text).map_err(|e| inconsistent(e.to_string()))?;
        if h.kind() != kind {
            return Err(inconsistent(format!("hierarchy kind mismatch for {kind}")));
        }
        if let Some(n) = class_next.get(&kind) {
            h.reserve_ids_below(ClassId(*n));
        }
        Ok(h)
    };
    let counter = |name: &str| -> Result<u64, SnapshotError> {
        counters
            .get(name)
            .copied()
            .ok_or_else(|| inconsistent(format!("missing `{name}` counter")))
    };

    let store = DocStore::restore(
        nodes,
        docs.into_values().collect(),
        NodeHandle(counter("node")?),
        DocId(counter("doc")?),
    )
    .map_err(inconsistent)?;

    for rs in route_states.values() {
        if !routes.contains_key(&rs.route) {
            return Err(inconsistent(format!("route state for unknown route {}", rs.route)));
        }
    }

    let mut engine = Engine::new();
    engine.classes = hierarchy(HierarchyKind::DocumentClass)?;
    engine.roles = hierarchy(HierarchyKind::RoleClass)?;
    engine.access = hierarchy(HierarchyKind::AccessLevel)?;
    engine.workgroups = workgroups;
    engine.next_workgroup = counter("workgroup")?;
    engine.users = users;
    engine.next_user = counter("user")?;
    engine.store = store;
    engine.routes = routes;
    engine.next_route = counter("route")?;
    engine.route_states = route_states;
    engine.grants = grants;
    engine.signature_classes = signature_classes;
    Ok(engine)
}

/// Human-oriented one-line summary, handy in logs.
pub fn summary(e: &Engine) -> String {
    format!(
        "{} classes, {} users, {} nodes, {} documents, {} routes",
        e.hierarchy(HierarchyKind::DocumentClass).len(),
        e.users.len(),
        e.store.len(),
        e.store.documents().count(),
        e.routes.len()
    )
}
