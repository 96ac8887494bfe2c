//! The engine state and the commands that mutate it.
//!
//! Every mutation is a [`Command`] applied by a principal at a log sequence
//! number. `apply` either performs the whole command or leaves the state
//! untouched, so the accepted commands replayed in order rebuild the state
//! exactly.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::access::{
    validate_grant, AccessError, Acl, Action, Decision, DecisionMatrix, DenyReason, Grantee, PolicyContext,
    Target, TreeGrant, User, UserId,
};
use crate::blob::ContentDigest;
use crate::isa::{valid_name, ClassId, Hierarchy, HierarchyKind, IsaError};
use crate::lattice::{FlowLattice, Label, LatticeError, Level, SecurityType, WorkgroupId};
use crate::routing::{
    route_for, Preview, RouteError, RouteId, RouteSpec, RouteState, RouteStatus, RouteText, Router, Names,
    RouteBody, StepDecision,
};
use crate::store::{DocId, DocStatus, DocStore, Document, DocumentProfile, Folder, NodeHandle, Query, StoreError, VersionRecord};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Workgroup {
    pub id: WorkgroupId,
    pub name: String,
}

/// A reference by numeric id or by name (for nodes: a `/A/B` folder path).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Ref {
    Id(u64),
    Name(String),
}

impl From<&str> for Ref {
    fn from(s: &str) -> Self {
        Ref::Name(s.to_string())
    }
}

impl From<u64> for Ref {
    fn from(n: u64) -> Self {
        Ref::Id(n)
    }
}

impl std::fmt::Display for Ref {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Ref::Id(n) => write!(f, "{n}"),
            Ref::Name(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AclEntry {
    pub user: Ref,
    pub actions: BTreeSet<Action>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "ref", rename_all = "lowercase")]
pub enum GranteeRef {
    User(Ref),
    Workgroup(Ref),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Command {
    AddClass {
        kind: HierarchyKind,
        name: String,
        parent: Ref,
    },
    RemoveClass {
        kind: HierarchyKind,
        class: Ref,
    },
    AddWorkgroup {
        name: String,
    },
    AddUser {
        name: String,
        role: Ref,
        level: Ref,
        stype: SecurityType,
        #[serde(default)]
        workgroups: Vec<Ref>,
        #[serde(default)]
        home: Option<Ref>,
    },
    CreateFolder {
        /// `None` creates the root.
        #[serde(default)]
        parent: Option<Ref>,
        name: String,
        #[serde(default)]
        workgroups: Vec<Ref>,
    },
    CreateDocument {
        folder: Ref,
        title: String,
        class: Ref,
        stype: SecurityType,
        owner: Ref,
        content: ContentDigest,
        #[serde(default)]
        acl: Vec<AclEntry>,
        /// Access level of the document label; defaults to the author's.
        #[serde(default)]
        level: Option<Ref>,
        /// Only honoured for the system principal.
        #[serde(default)]
        author: Option<Ref>,
    },
    Checkin {
        doc: DocId,
        content: ContentDigest,
    },
    Archive {
        doc: DocId,
    },
    DeleteNode {
        node: Ref,
    },
    SetAcl {
        doc: DocId,
        acl: Vec<AclEntry>,
    },
    Grant {
        grantee: GranteeRef,
        subtree: Ref,
        actions: BTreeSet<Action>,
        #[serde(default)]
        levels: Option<(u32, u32)>,
    },
    AddRoute {
        text: String,
    },
    RequireSignature {
        class: Ref,
    },
    Submit {
        doc: DocId,
        #[serde(default)]
        route: Option<RouteId>,
    },
    Advance {
        doc: DocId,
        action: Action,
    },
    Reject {
        doc: DocId,
        reason: String,
    },
}

impl Command {
    pub fn op_name(&self) -> &'static str {
        match self {
            Command::AddClass { .. } => "add_class",
            Command::RemoveClass { .. } => "remove_class",
            Command::AddWorkgroup { .. } => "add_workgroup",
            Command::AddUser { .. } => "add_user",
            Command::CreateFolder { .. } => "create_folder",
            Command::CreateDocument { .. } => "create_document",
            Command::Checkin { .. } => "checkin",
            Command::Archive { .. } => "archive",
            Command::DeleteNode { .. } => "delete_node",
            Command::SetAcl { .. } => "set_acl",
            Command::Grant { .. } => "grant",
            Command::AddRoute { .. } => "add_route",
            Command::RequireSignature { .. } => "require_signature",
            Command::Submit { .. } => "submit",
            Command::Advance { .. } => "advance",
            Command::Reject { .. } => "reject",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Outcome {
    Class { id: ClassId },
    RemovedClasses { ids: BTreeSet<ClassId> },
    Workgroup { id: WorkgroupId },
    User { id: UserId },
    Node { handle: NodeHandle },
    Document { id: DocId, node: NodeHandle },
    Version { record: VersionRecord },
    Archived { doc: DocId },
    RemovedNodes { handles: BTreeSet<NodeHandle>, documents: BTreeSet<DocId> },
    Acl { doc: DocId },
    Granted { index: usize },
    Route { id: RouteId },
    SignatureRequired { class: ClassId },
    RouteState { state: RouteState },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ErrorCategory {
    Policy,
    NotFound,
    Malformed,
    Conflict,
    Storage,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error(transparent)]
    Class(#[from] IsaError),
    #[error(transparent)]
    Label(#[from] LatticeError),
    #[error(transparent)]
    Access(#[from] AccessError),
    #[error(transparent)]
    Route(#[from] RouteError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("access denied: {0}")]
    Denied(DenyReason),
    #[error("unknown parent class `{0}`")]
    UnknownParent(String),
    #[error("unknown user `{0}`")]
    UnknownUser(String),
    #[error("unknown workgroup `{0}`")]
    UnknownWorkgroup(String),
    #[error("unknown target `{0}`")]
    UnknownTarget(String),
    #[error("`{0}` already exists")]
    DuplicateName(String),
    #[error("malformed input: {0}")]
    Malformed(String),
    #[error("document {0} is already in a route")]
    AlreadyInRoute(DocId),
    #[error("document {0} has no active route")]
    NotInRoute(DocId),
    #[error("storage failure: {0}")]
    Storage(String),
}

impl EngineError {
    /// Stable machine-readable code carried verbatim on the wire.
    pub fn code(&self) -> &'static str {
        use EngineError as E;
        match self {
            E::Class(e) => match e {
                IsaError::UnknownParent(_) => "UnknownParent",
                IsaError::DuplicateSibling(_) => "DuplicateSibling",
                IsaError::UnknownClass(_) | IsaError::UnknownName(_) => "UnknownClass",
                IsaError::AmbiguousName(_) => "AmbiguousName",
                IsaError::InvalidName(_) => "InvalidName",
                IsaError::RootRemoval => "RootRemoval",
                IsaError::OtherRemoval => "OtherRemoval",
                IsaError::InUse(_) => "InUse",
                IsaError::Parse { .. } => "MalformedInput",
            },
            E::Label(_) => "MalformedLabel",
            E::Access(e) => match e {
                AccessError::UnknownUser(_) => "UnknownUser",
                AccessError::UnknownTarget(_) => "UnknownTarget",
                AccessError::AdminOnly => "AdminOnly",
                AccessError::BadGrant(_) => "MalformedInput",
            },
            E::Route(e) => match e {
                RouteError::NoRouteRegistry => "NoRouteRegistry",
                RouteError::RouteExhausted => "RouteExhausted",
                RouteError::NotACandidate => "NotACandidate",
                RouteError::PolicyViolation(_) => "PolicyViolation",
                RouteError::WrongAction { .. } => "WrongAction",
                RouteError::InvalidSpec(_) | RouteError::Parse { .. } => "InvalidRoute",
                RouteError::UnknownTarget(_) => "UnknownTarget",
            },
            E::Store(e) => match e {
                StoreError::UnknownParent(_) => "UnknownParent",
                StoreError::ParentNotFolder(_) => "ParentNotFolder",
                StoreError::RootExists => "RootExists",
                StoreError::UnknownHandle(_) => "UnknownHandle",
                StoreError::UnknownDocument(_) => "UnknownTarget",
                StoreError::DuplicateName(_) => "DuplicateName",
                StoreError::InvalidName(_) => "InvalidName",
                StoreError::ArchivedDocument(_) => "ArchivedDocument",
                StoreError::BadProfile(_) => "MalformedInput",
                StoreError::Class(_) => "UnknownClass",
            },
            E::Denied(DenyReason::AdminOnly) => "AdminOnly",
            E::Denied(_) => "AccessDenied",
            E::UnknownParent(_) => "UnknownParent",
            E::UnknownUser(_) => "UnknownUser",
            E::UnknownWorkgroup(_) => "UnknownWorkgroup",
            E::UnknownTarget(_) => "UnknownTarget",
            E::DuplicateName(_) => "DuplicateName",
            E::Malformed(_) => "MalformedInput",
            E::AlreadyInRoute(_) => "AlreadyInRoute",
            E::NotInRoute(_) => "NotInRoute",
            E::Storage(_) => "StorageFailure",
        }
    }

    /// The policy reason behind a denial, when there is one.
    pub fn deny_reason(&self) -> Option<DenyReason> {
        match self {
            EngineError::Denied(r) | EngineError::Route(RouteError::PolicyViolation(r)) => Some(*r),
            EngineError::Access(AccessError::AdminOnly) => Some(DenyReason::AdminOnly),
            _ => None,
        }
    }

    pub fn category(&self) -> ErrorCategory {
        match self.code() {
            "AdminOnly" | "AccessDenied" | "PolicyViolation" | "NotACandidate" => ErrorCategory::Policy,
            "UnknownParent" | "UnknownClass" | "UnknownUser" | "UnknownTarget" | "UnknownHandle"
            | "UnknownWorkgroup" | "NoRouteRegistry" => ErrorCategory::NotFound,
            "MalformedInput" | "MalformedLabel" | "InvalidName" | "AmbiguousName" | "InvalidRoute" => {
                ErrorCategory::Malformed
            }
            "StorageFailure" => ErrorCategory::Storage,
            _ => ErrorCategory::Conflict,
        }
    }

    /// `Code` or `Code(Reason)` as printed by the CLI.
    pub fn label(&self) -> String {
        match self.deny_reason() {
            Some(r) if self.code() != r.as_str() => format!("{}({r})", self.code()),
            _ => self.code().to_string(),
        }
    }
}

enum Actor<'a> {
    System,
    User(&'a User),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InboxItem {
    pub doc: DocId,
    pub title: String,
    pub route: RouteId,
    pub route_name: String,
    pub cursor: usize,
    pub required_action: Action,
    pub decision: Decision,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Engine {
    pub(crate) classes: Hierarchy,
    pub(crate) roles: Hierarchy,
    pub(crate) access: Hierarchy,
    pub(crate) workgroups: BTreeMap<WorkgroupId, Workgroup>,
    pub(crate) next_workgroup: u64,
    pub(crate) users: BTreeMap<UserId, User>,
    pub(crate) next_user: u64,
    pub(crate) store: DocStore,
    pub(crate) routes: BTreeMap<RouteId, RouteSpec>,
    pub(crate) next_route: u64,
    pub(crate) route_states: BTreeMap<DocId, RouteState>,
    pub(crate) grants: Vec<TreeGrant>,
    pub(crate) signature_classes: BTreeSet<ClassId>,
}

impl Default for Engine {
    fn default() -> Self {
        Self::new()
    }
}

impl Engine {
    /// Empty state: the three hierarchies hold only their root and `Other`.
    pub fn new() -> Self {
        Engine {
            classes: Hierarchy::new(HierarchyKind::DocumentClass),
            roles: Hierarchy::new(HierarchyKind::RoleClass),
            access: Hierarchy::new(HierarchyKind::AccessLevel),
            workgroups: BTreeMap::new(),
            next_workgroup: 1,
            users: BTreeMap::new(),
            next_user: 1,
            store: DocStore::new(),
            routes: BTreeMap::new(),
            next_route: 1,
            route_states: BTreeMap::new(),
            grants: Vec::new(),
            signature_classes: BTreeSet::new(),
        }
    }

    pub fn hierarchy(&self, kind: HierarchyKind) -> &Hierarchy {
        match kind {
            HierarchyKind::DocumentClass => &self.classes,
            HierarchyKind::RoleClass => &self.roles,
            HierarchyKind::AccessLevel => &self.access,
        }
    }

    fn hierarchy_mut(&mut self, kind: HierarchyKind) -> &mut Hierarchy {
        match kind {
            HierarchyKind::DocumentClass => &mut self.classes,
            HierarchyKind::RoleClass => &mut self.roles,
            HierarchyKind::AccessLevel => &mut self.access,
        }
    }

    pub fn store(&self) -> &DocStore {
        &self.store
    }

    pub fn users(&self) -> impl Iterator<Item = &User> {
        self.users.values()
    }

    pub fn user(&self, id: UserId) -> Result<&User, EngineError> {
        self.users
            .get(&id)
            .ok_or_else(|| EngineError::UnknownUser(id.to_string()))
    }

    pub fn workgroups(&self) -> impl Iterator<Item = &Workgroup> {
        self.workgroups.values()
    }

    pub fn workgroup_names(&self) -> BTreeMap<WorkgroupId, String> {
        self.workgroups.values().map(|w| (w.id, w.name.clone())).collect()
    }

    pub fn routes(&self) -> &BTreeMap<RouteId, RouteSpec> {
        &self.routes
    }

    pub fn route_state(&self, doc: DocId) -> Option<&RouteState> {
        self.route_states.get(&doc)
    }

    pub fn route_states(&self) -> impl Iterator<Item = &RouteState> {
        self.route_states.values()
    }

    pub fn grants(&self) -> &[TreeGrant] {
        &self.grants
    }

    pub fn signature_classes(&self) -> &BTreeSet<ClassId> {
        &self.signature_classes
    }

    pub fn document(&self, id: DocId) -> Result<&Document, EngineError> {
        self.store
            .document(id)
            .map_err(|_| EngineError::UnknownTarget(format!("document {id}")))
    }

    pub fn lattice(&self) -> FlowLattice<'_> {
        FlowLattice::new(&self.access, &self.workgroups)
    }

    pub fn policy(&self) -> PolicyContext<'_> {
        PolicyContext::new(&self.roles, self.lattice(), &self.store, &self.grants)
    }

    pub fn names(&self) -> Names<'_> {
        Names {
            classes: &self.classes,
            roles: &self.roles,
            access: &self.access,
            users: &self.users,
        }
    }

    pub fn render_label(&self, l: &Label) -> String {
        l.render(&self.access, &self.workgroup_names())
    }

    pub fn route_text(&self, id: RouteId) -> Option<String> {
        self.routes
            .get(&id)
            .map(|spec| RouteText::from_spec(spec, &self.names()).render())
    }

    /// Digest of the canonical snapshot serialization of this state.
    pub fn digest(&self) -> String {
        crate::snapshot::state_digest(self)
    }

    // -- reference resolution ------------------------------------------------

    pub fn resolve_class(&self, kind: HierarchyKind, r: &Ref) -> Result<ClassId, EngineError> {
        let h = self.hierarchy(kind);
        match r {
            Ref::Id(n) => h.get(ClassId(*n)).map(|c| c.id).map_err(Into::into),
            Ref::Name(name) => h.lookup(name).map_err(Into::into),
        }
    }

    pub fn resolve_user(&self, r: &Ref) -> Result<UserId, EngineError> {
        let found = match r {
            Ref::Id(n) => self.users.get(&UserId(*n)),
            Ref::Name(name) => self.users.values().find(|u| &u.name == name),
        };
        found.map(|u| u.id).ok_or_else(|| EngineError::UnknownUser(r.to_string()))
    }

    pub fn resolve_workgroup(&self, r: &Ref) -> Result<WorkgroupId, EngineError> {
        let found = match r {
            Ref::Id(n) => self.workgroups.get(&WorkgroupId(*n)),
            Ref::Name(name) => self.workgroups.values().find(|w| &w.name == name),
        };
        found
            .map(|w| w.id)
            .ok_or_else(|| EngineError::UnknownWorkgroup(r.to_string()))
    }

    pub fn resolve_node(&self, r: &Ref) -> Result<NodeHandle, EngineError> {
        match r {
            Ref::Id(n) => self.store.node(NodeHandle(*n)).map(|n| n.handle).map_err(Into::into),
            Ref::Name(path) => self
                .store
                .resolve_path(path)
                .ok_or_else(|| EngineError::UnknownTarget(path.clone())),
        }
    }

    fn resolve_acl(&self, entries: &[AclEntry]) -> Result<Acl, EngineError> {
        let mut acl = Acl::default();
        for e in entries {
            acl = acl.allow(self.resolve_user(&e.user)?, e.actions.iter().copied());
        }
        Ok(acl)
    }

    fn actor(&self, id: UserId) -> Result<Actor<'_>, EngineError> {
        if id == UserId::SYSTEM {
            Ok(Actor::System)
        } else {
            self.user(id).map(Actor::User)
        }
    }

    fn real_user(&self, id: UserId) -> Result<&User, EngineError> {
        match self.actor(id)? {
            Actor::User(u) => Ok(u),
            Actor::System => Err(EngineError::UnknownUser("system".into())),
        }
    }

    /// Administrative gate: the system principal always passes.
    fn require_admin(&self, actor: UserId, action: Action) -> Result<(), EngineError> {
        match self.actor(actor)? {
            Actor::System => Ok(()),
            Actor::User(u) => {
                let p = self.policy();
                let ok = match action {
                    Action::ManageUsers => p.is_security_adm(u),
                    _ => p.is_system_adm(u),
                };
                if ok {
                    Ok(())
                } else {
                    Err(EngineError::Denied(DenyReason::AdminOnly))
                }
            }
        }
    }

    fn require(&self, actor: UserId, target: Target, action: Action) -> Result<(), EngineError> {
        match self.actor(actor)? {
            Actor::System => Ok(()),
            Actor::User(u) => match self.policy().check_access(u, target, action)? {
                Decision::Allow => Ok(()),
                Decision::Deny(r) => Err(EngineError::Denied(r)),
            },
        }
    }

    fn requires_signature(&self, class: ClassId) -> bool {
        self.classes
            .ancestors(class)
            .map(|chain| chain.iter().any(|c| self.signature_classes.contains(c)))
            .unwrap_or(false)
    }

    // -- queries ------------------------------------------------------------

    pub fn check_access(&self, user: UserId, target: Target, action: Action) -> Result<Decision, EngineError> {
        let u = self.real_user(user)?;
        Ok(self.policy().check_access(u, target, action)?)
    }

    /// Documents matching `q` that `asking` may read, in id order. The
    /// system principal sees everything.
    pub fn search(&self, asking: UserId, q: &Query) -> Result<Vec<DocId>, EngineError> {
        if asking == UserId::SYSTEM {
            return Ok(self.store.search(q, &self.classes, |_| true)?);
        }
        let policy = self.policy();
        let u = self.real_user(asking)?;
        Ok(self.store.search(q, &self.classes, |d| {
            policy
                .check_access(u, Target::Document(d.id), Action::Read)
                .is_ok_and(Decision::is_allow)
        })?)
    }

    pub fn decision_matrix(&self, actions: &[Action]) -> Result<DecisionMatrix, EngineError> {
        let users: Vec<&User> = self.users.values().collect();
        let docs: Vec<DocId> = self.store.documents().map(|d| d.id).collect();
        Ok(self.policy().decision_matrix(&users, &docs, actions)?)
    }

    fn active_route(&self, doc: DocId) -> Result<(&RouteState, &RouteSpec), EngineError> {
        self.document(doc)?;
        let rs = self.route_states.get(&doc).ok_or(EngineError::NotInRoute(doc))?;
        let spec = self.routes.get(&rs.route).expect("route states point at known routes");
        Ok((rs, spec))
    }

    pub fn next_candidates(&self, doc: DocId) -> Result<StepDecision, EngineError> {
        let (rs, spec) = self.active_route(doc)?;
        let policy = self.policy();
        let router = Router {
            policy: &policy,
            users: &self.users,
        };
        Ok(router.next_candidates(rs, spec)?)
    }

    /// Pending steps on which `user` is a candidate.
    pub fn inbox(&self, user: UserId) -> Result<Vec<InboxItem>, EngineError> {
        self.real_user(user)?;
        let policy = self.policy();
        let router = Router {
            policy: &policy,
            users: &self.users,
        };
        let mut out = Vec::new();
        for rs in self.route_states.values().filter(|rs| rs.status == RouteStatus::Active) {
            let spec = &self.routes[&rs.route];
            let Ok(step) = router.next_candidates(rs, spec) else {
                continue;
            };
            if let Some(c) = step.candidates.iter().find(|c| c.user == user) {
                out.push(InboxItem {
                    doc: rs.doc,
                    title: self.store.document(rs.doc)?.profile.title.clone(),
                    route: spec.id,
                    route_name: spec.name.clone(),
                    cursor: rs.cursor,
                    required_action: step.required_action,
                    decision: c.decision,
                });
            }
        }
        Ok(out)
    }

    pub fn preview(&self, doc: DocId, actor: UserId, action: Action, seq: u64) -> Result<Preview, EngineError> {
        let u = self.real_user(actor)?;
        let (rs, spec) = self.active_route(doc)?;
        let policy = self.policy();
        let router = Router {
            policy: &policy,
            users: &self.users,
        };
        Ok(router.preview(rs, spec, u, action, seq))
    }

    /// Route for a document class: nearest ancestor, then `Other`.
    pub fn route_for(&self, class: ClassId) -> Result<&RouteSpec, EngineError> {
        Ok(route_for(class, &self.routes, &self.classes)?)
    }

    // -- mutation -----------------------------------------------------------

    pub fn apply(&mut self, actor: UserId, cmd: &Command, seq: u64) -> Result<Outcome, EngineError> {
        match cmd {
            Command::AddClass { kind, name, parent } => {
                self.require_admin(actor, class_admin(*kind))?;
                let parent = self.resolve_class(*kind, parent).map_err(|e| match e {
                    EngineError::Class(IsaError::UnknownClass(_) | IsaError::UnknownName(_)) => {
                        EngineError::UnknownParent(parent.to_string())
                    }
                    e => e,
                })?;
                let id = self.hierarchy_mut(*kind).add_class(name, parent)?;
                Ok(Outcome::Class { id })
            }
            Command::RemoveClass { kind, class } => {
                self.require_admin(actor, class_admin(*kind))?;
                let id = self.resolve_class(*kind, class)?;
                let used = self.classes_in_use(*kind);
                let ids = self.hierarchy_mut(*kind).remove_class(id, |c| used.contains(&c))?;
                Ok(Outcome::RemovedClasses { ids })
            }
            Command::AddWorkgroup { name } => {
                self.require_admin(actor, Action::ManageUsers)?;
                if !valid_name(name) {
                    return Err(EngineError::Malformed(format!("invalid workgroup name `{name}`")));
                }
                if self.workgroups.values().any(|w| &w.name == name) {
                    return Err(EngineError::DuplicateName(name.clone()));
                }
                let id = WorkgroupId(self.next_workgroup);
                self.next_workgroup += 1;
                self.workgroups.insert(id, Workgroup { id, name: name.clone() });
                Ok(Outcome::Workgroup { id })
            }
            Command::AddUser {
                name,
                role,
                level,
                stype,
                workgroups,
                home,
            } => {
                self.require_admin(actor, Action::ManageUsers)?;
                if !valid_name(name) || name == "system" {
                    return Err(EngineError::Malformed(format!("invalid user name `{name}`")));
                }
                if self.users.values().any(|u| &u.name == name) {
                    return Err(EngineError::DuplicateName(name.clone()));
                }
                let role = self.resolve_class(HierarchyKind::RoleClass, role)?;
                let level = self.resolve_class(HierarchyKind::AccessLevel, level)?;
                let groups = workgroups
                    .iter()
                    .map(|w| self.resolve_workgroup(w))
                    .collect::<Result<BTreeSet<_>, _>>()?;
                let home = home.as_ref().map(|h| self.resolve_node(h)).transpose()?;
                if let Some(h) = home {
                    if !self.store.node(h)?.is_folder() {
                        return Err(StoreError::ParentNotFolder(h).into());
                    }
                }
                let id = UserId(self.next_user);
                self.next_user += 1;
                let user = User::new(id, name, role, Label::new(level, *stype, []), groups, home);
                self.users.insert(id, user);
                Ok(Outcome::User { id })
            }
            Command::CreateFolder {
                parent,
                name,
                workgroups,
            } => {
                let groups = workgroups
                    .iter()
                    .map(|w| self.resolve_workgroup(w))
                    .collect::<Result<BTreeSet<_>, _>>()?;
                let parent = match parent {
                    None => {
                        self.require_admin(actor, Action::ManageStore)?;
                        NodeHandle::SENTINEL
                    }
                    Some(p) => {
                        let p = self.resolve_node(p)?;
                        self.require(actor, Target::Node(p), Action::Create)?;
                        p
                    }
                };
                let handle = self.store.create_node(
                    parent,
                    Folder {
                        name: name.clone(),
                        workgroups: groups,
                    },
                )?;
                Ok(Outcome::Node { handle })
            }
            Command::CreateDocument {
                folder,
                title,
                class,
                stype,
                owner,
                content,
                acl,
                level,
                author,
            } => {
                let folder = self.resolve_node(folder)?;
                let class = self.resolve_class(HierarchyKind::DocumentClass, class)?;
                let owner = self.resolve_workgroup(owner)?;
                let acl = self.resolve_acl(acl)?;
                let author = match self.actor(actor)? {
                    Actor::System => {
                        let a = author
                            .as_ref()
                            .ok_or_else(|| EngineError::Malformed("author required".into()))?;
                        self.user(self.resolve_user(a)?)?
                    }
                    Actor::User(u) => {
                        self.require(actor, Target::Node(folder), Action::Create)?;
                        u
                    }
                };
                let level = match level {
                    Some(l) => self.resolve_class(HierarchyKind::AccessLevel, l)?,
                    None => match author.clearance.level {
                        Level::Class(c) => c,
                        Level::Bottom => self.access.root(),
                    },
                };
                let groups: Vec<_> = if *stype == SecurityType::Private { vec![owner] } else { vec![] };
                let label = Label::new(level, *stype, groups);
                if !self.lattice().can_flow(&label, &author.clearance)? {
                    return Err(EngineError::Denied(DenyReason::FlowViolation));
                }
                let profile = DocumentProfile {
                    title: title.clone(),
                    author: author.id,
                    class,
                    security_type: *stype,
                    label,
                    owning_workgroup: owner,
                    route: None,
                    created_seq: seq,
                    archived_seq: None,
                };
                let id = self.store.create_document(folder, profile, acl, *content)?;
                let node = self.store.document(id)?.node;
                Ok(Outcome::Document { id, node })
            }
            Command::Checkin { doc, content } => {
                let d = self.document(*doc)?;
                if d.status == DocStatus::Archived {
                    return Err(StoreError::ArchivedDocument(*doc).into());
                }
                self.require(actor, Target::Document(*doc), Action::Modify)?;
                let record = self.store.add_version(*doc, actor, *content, seq)?;
                Ok(Outcome::Version { record })
            }
            Command::Archive { doc } => {
                self.document(*doc)?;
                self.require_admin(actor, Action::Archive)?;
                self.store.archive(*doc, seq)?;
                Ok(Outcome::Archived { doc: *doc })
            }
            Command::DeleteNode { node } => {
                let h = self.resolve_node(node)?;
                self.require(actor, Target::Node(h), Action::Delete)?;
                let documents = self.store.documents_under(h)?;
                let handles = self.store.delete_node(h)?;
                for d in &documents {
                    self.route_states.remove(d);
                }
                self.grants.retain(|g| !handles.contains(&g.subtree));
                for u in self.users.values_mut() {
                    if u.home.is_some_and(|h| handles.contains(&h)) {
                        u.home = None;
                    }
                }
                Ok(Outcome::RemovedNodes { handles, documents })
            }
            Command::SetAcl { doc, acl } => {
                let author = self.document(*doc)?.profile.author;
                if actor != author {
                    self.require_admin(actor, Action::ManageUsers)?;
                }
                let acl = self.resolve_acl(acl)?;
                self.store.document_mut(*doc)?.acl = acl;
                Ok(Outcome::Acl { doc: *doc })
            }
            Command::Grant {
                grantee,
                subtree,
                actions,
                levels,
            } => {
                let grantee = match grantee {
                    GranteeRef::User(u) => Grantee::User(self.resolve_user(u)?),
                    GranteeRef::Workgroup(w) => Grantee::Workgroup(self.resolve_workgroup(w)?),
                };
                let g = TreeGrant {
                    grantee,
                    subtree: self.resolve_node(subtree)?,
                    actions: actions.clone(),
                    levels: *levels,
                };
                match self.actor(actor)? {
                    Actor::System => validate_grant(&self.store, &g)?,
                    Actor::User(admin) => {
                        let mut staged = Vec::new();
                        self.policy().grant_subtree(&mut staged, admin, g.clone())?;
                    }
                }
                self.grants.push(g);
                Ok(Outcome::Granted {
                    index: self.grants.len() - 1,
                })
            }
            Command::AddRoute { text } => {
                self.require_admin(actor, Action::ManageStore)?;
                let parsed = RouteText::parse(text)?;
                if self.routes.values().any(|r| r.name == parsed.name) {
                    return Err(EngineError::DuplicateName(parsed.name));
                }
                let id = RouteId(self.next_route);
                let spec = parsed.resolve(id, &self.names())?;
                if let RouteBody::Spectrum { stages, .. } = &spec.body {
                    for s in stages {
                        self.store.node(s.scope)?;
                    }
                }
                spec.validate(self.requires_signature(spec.applies_to))?;
                self.next_route += 1;
                self.routes.insert(id, spec);
                Ok(Outcome::Route { id })
            }
            Command::RequireSignature { class } => {
                self.require_admin(actor, Action::ManageStore)?;
                let class = self.resolve_class(HierarchyKind::DocumentClass, class)?;
                self.signature_classes.insert(class);
                Ok(Outcome::SignatureRequired { class })
            }
            Command::Submit { doc, route } => {
                let d = self.document(*doc)?;
                match d.status {
                    DocStatus::Draft => {}
                    DocStatus::InRoute => return Err(EngineError::AlreadyInRoute(*doc)),
                    DocStatus::Archived => return Err(StoreError::ArchivedDocument(*doc).into()),
                    DocStatus::Signed => {
                        return Err(EngineError::Malformed(format!("document {doc} is already signed")))
                    }
                }
                let class = d.profile.class;
                self.require(actor, Target::Document(*doc), Action::Route)?;
                let spec = match route {
                    Some(r) => self
                        .routes
                        .get(r)
                        .ok_or_else(|| EngineError::UnknownTarget(format!("route {r}")))?,
                    None => self.route_for(class)?,
                };
                if self.requires_signature(class) && spec.terminal_action() != Action::Sign {
                    return Err(RouteError::InvalidSpec(format!(
                        "route `{}` does not end with Sign but the document requires a signature",
                        spec.name
                    ))
                    .into());
                }
                let state = RouteState::start(*doc, spec);
                let route_id = spec.id;
                let d = self.store.document_mut(*doc)?;
                d.status = DocStatus::InRoute;
                d.profile.route = Some(route_id);
                self.route_states.insert(*doc, state.clone());
                Ok(Outcome::RouteState { state })
            }
            Command::Advance { doc, action } => {
                if self.document(*doc)?.status == DocStatus::Archived {
                    return Err(StoreError::ArchivedDocument(*doc).into());
                }
                let u = self.real_user(actor)?;
                let (rs, spec) = self.active_route(*doc)?;
                let policy = self.policy();
                let router = Router {
                    policy: &policy,
                    users: &self.users,
                };
                let next = router.advance(rs, spec, u, *action, seq)?;
                self.finish_transition(next)
            }
            Command::Reject { doc, reason } => {
                let u = self.real_user(actor)?;
                let (rs, spec) = self.active_route(*doc)?;
                let policy = self.policy();
                let router = Router {
                    policy: &policy,
                    users: &self.users,
                };
                let next = router.reject(rs, spec, u, reason, seq)?;
                self.finish_transition(next)
            }
        }
    }

    fn finish_transition(&mut self, next: RouteState) -> Result<Outcome, EngineError> {
        let status = match next.status {
            RouteStatus::Active => DocStatus::InRoute,
            RouteStatus::Completed if next.signed() => DocStatus::Signed,
            RouteStatus::Completed | RouteStatus::Rejected => DocStatus::Draft,
        };
        self.store.document_mut(next.doc)?.status = status;
        self.route_states.insert(next.doc, next.clone());
        Ok(Outcome::RouteState { state: next })
    }

    /// Classes of `kind` that live instances still refer to.
    fn classes_in_use(&self, kind: HierarchyKind) -> BTreeSet<ClassId> {
        let mut used = BTreeSet::new();
        match kind {
            HierarchyKind::DocumentClass => {
                used.extend(self.store.documents().map(|d| d.profile.class));
                used.extend(self.routes.values().map(|r| r.applies_to));
                used.extend(self.signature_classes.iter().copied());
            }
            HierarchyKind::RoleClass => {
                used.extend(self.users.values().map(|u| u.role));
                for r in self.routes.values() {
                    match &r.body {
                        RouteBody::Explicit { steps } => used.extend(steps.iter().filter_map(|s| s.selector.role)),
                        RouteBody::Spectrum { stages, .. } => used.extend(stages.iter().map(|s| s.role)),
                    }
                }
            }
            HierarchyKind::AccessLevel => {
                let levels = self
                    .users
                    .values()
                    .map(|u| u.clearance.level)
                    .chain(self.store.documents().map(|d| d.profile.label.level));
                used.extend(levels.filter_map(|l| match l {
                    Level::Class(c) => Some(c),
                    Level::Bottom => None,
                }));
                for r in self.routes.values() {
                    if let RouteBody::Explicit { steps } = &r.body {
                        used.extend(steps.iter().filter_map(|s| s.selector.level));
                    }
                }
            }
        }
        used
    }
}

fn class_admin(kind: HierarchyKind) -> Action {
    match kind {
        HierarchyKind::DocumentClass => Action::ManageStore,
        HierarchyKind::RoleClass | HierarchyKind::AccessLevel => Action::ManageUsers,
    }
}
