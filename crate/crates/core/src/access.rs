//! Access decisions combining role rights, security types, access lists,
//! tree-scoped grants and the flow lattice.
//!
//! Rule precedence for a document: the access list decides Confidential
//! documents, the owning workgroup decides Private ones, and Public documents
//! are open to members of any workgroup attached along the folder chain, with
//! tree grants as the only way in for everybody else. Anything not allowed is
//! denied. Reads (and the actions that imply reading) are finally checked
//! against the lattice: the document label must flow to the user's clearance.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::isa::{ClassId, Hierarchy};
use crate::lattice::{FlowLattice, Label, WorkgroupId};
use crate::store::{DocId, DocStore, Document, NodeHandle, Payload};

pub const ROLE_USER: &str = "User";
pub const ROLE_BOSS: &str = "Boss";
pub const ROLE_SECRETARY: &str = "Secretary";
pub const ROLE_ADMINISTRATOR: &str = "Administrator";
pub const ROLE_SECURITY_ADM: &str = "Security_adm";
pub const ROLE_SYSTEM_ADM: &str = "System_adm";
pub const ROLE_GUEST: &str = "Guest";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UserId(pub u64);

impl UserId {
    /// The built-in system principal used for bootstrap and fixture loading.
    /// It holds both administrative rights and nothing else.
    pub const SYSTEM: UserId = UserId(0);
}

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct User {
    pub id: UserId,
    pub name: String,
    pub role: ClassId,
    pub clearance: Label,
    pub workgroups: BTreeSet<WorkgroupId>,
    /// Folder the user sits in; spectrum stages scope candidates by it.
    pub home: Option<NodeHandle>,
}

impl User {
    /// Builds a user whose clearance carries exactly their workgroups.
    pub fn new(
        id: UserId,
        name: &str,
        role: ClassId,
        mut clearance: Label,
        workgroups: BTreeSet<WorkgroupId>,
        home: Option<NodeHandle>,
    ) -> Self {
        clearance.groups = workgroups.clone();
        User {
            id,
            name: name.to_string(),
            role,
            clearance,
            workgroups,
            home,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Action {
    Read,
    Create,
    Modify,
    Sign,
    Route,
    Archive,
    Delete,
    ManageUsers,
    ManageStore,
}

impl Action {
    pub const ALL: [Action; 9] = [
        Action::Read,
        Action::Create,
        Action::Modify,
        Action::Sign,
        Action::Route,
        Action::Archive,
        Action::Delete,
        Action::ManageUsers,
        Action::ManageStore,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Action::Read => "Read",
            Action::Create => "Create",
            Action::Modify => "Modify",
            Action::Sign => "Sign",
            Action::Route => "Route",
            Action::Archive => "Archive",
            Action::Delete => "Delete",
            Action::ManageUsers => "ManageUsers",
            Action::ManageStore => "ManageStore",
        }
    }

    /// Actions that expose document content to the actor.
    fn reads_content(self) -> bool {
        matches!(self, Action::Read | Action::Modify | Action::Sign | Action::Route)
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown action `{0}`")]
pub struct UnknownAction(pub String);

impl FromStr for Action {
    type Err = UnknownAction;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Action::ALL
            .into_iter()
            .find(|a| a.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| UnknownAction(s.to_string()))
    }
}

/// Explicit per-user allowances; decides Confidential documents.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Acl {
    pub entries: BTreeMap<UserId, BTreeSet<Action>>,
}

impl Acl {
    pub fn allow(mut self, user: UserId, actions: impl IntoIterator<Item = Action>) -> Self {
        self.entries.entry(user).or_default().extend(actions);
        self
    }

    pub fn permits(&self, user: UserId, action: Action) -> bool {
        self.entries.get(&user).is_some_and(|a| a.contains(&action))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "id", rename_all = "lowercase")]
pub enum Grantee {
    User(UserId),
    Workgroup(WorkgroupId),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeGrant {
    pub grantee: Grantee,
    pub subtree: NodeHandle,
    pub actions: BTreeSet<Action>,
    /// Inclusive range of tree levels the grant reaches.
    pub levels: Option<(u32, u32)>,
}

impl TreeGrant {
    fn applies_to(&self, u: &User) -> bool {
        match self.grantee {
            Grantee::User(id) => id == u.id,
            Grantee::Workgroup(g) => u.workgroups.contains(&g),
        }
    }

    fn level_ok(&self, level: u32) -> bool {
        self.levels.is_none_or(|(lo, hi)| (lo..=hi).contains(&level))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DenyReason {
    NotInWorkgroup,
    NotOnAcl,
    NoSignRight,
    FlowViolation,
    AdminOnly,
    OutsideGrant,
    /// The role carries no right to the action (e.g. a Guest modifying).
    NoRoleRight,
}

impl DenyReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DenyReason::NotInWorkgroup => "NotInWorkgroup",
            DenyReason::NotOnAcl => "NotOnAcl",
            DenyReason::NoSignRight => "NoSignRight",
            DenyReason::FlowViolation => "FlowViolation",
            DenyReason::AdminOnly => "AdminOnly",
            DenyReason::OutsideGrant => "OutsideGrant",
            DenyReason::NoRoleRight => "NoRoleRight",
        }
    }
}

impl fmt::Display for DenyReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "verdict", content = "reason")]
pub enum Decision {
    Allow,
    Deny(DenyReason),
}

impl Decision {
    pub fn is_allow(self) -> bool {
        self == Decision::Allow
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Decision::Allow => f.write_str("Allow"),
            Decision::Deny(r) => write!(f, "Deny({r})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "id", rename_all = "lowercase")]
pub enum Target {
    Document(DocId),
    Node(NodeHandle),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AccessError {
    #[error("unknown user {0}")]
    UnknownUser(UserId),
    #[error("unknown target {0:?}")]
    UnknownTarget(Target),
    #[error("administrative right required")]
    AdminOnly,
    #[error("bad grant: {0}")]
    BadGrant(String),
}

/// The well-known role classes the rules refer to, resolved by name.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RoleBook {
    pub user: Option<ClassId>,
    pub boss: Option<ClassId>,
    pub security_adm: Option<ClassId>,
    pub system_adm: Option<ClassId>,
}

impl RoleBook {
    pub fn resolve(roles: &Hierarchy) -> Self {
        let find = |n| roles.lookup(n).ok();
        RoleBook {
            user: find(ROLE_USER),
            boss: find(ROLE_BOSS),
            security_adm: find(ROLE_SECURITY_ADM),
            system_adm: find(ROLE_SYSTEM_ADM),
        }
    }
}

pub struct PolicyContext<'a> {
    pub roles: &'a Hierarchy,
    pub book: RoleBook,
    pub lattice: FlowLattice<'a>,
    pub store: &'a DocStore,
    pub grants: &'a [TreeGrant],
}

impl<'a> PolicyContext<'a> {
    pub fn new(
        roles: &'a Hierarchy,
        lattice: FlowLattice<'a>,
        store: &'a DocStore,
        grants: &'a [TreeGrant],
    ) -> Self {
        PolicyContext {
            roles,
            book: RoleBook::resolve(roles),
            lattice,
            store,
            grants,
        }
    }

    fn has_role(&self, u: &User, role: Option<ClassId>) -> bool {
        role.is_some_and(|r| self.roles.is_subtype(u.role, r).unwrap_or(false))
    }

    pub fn is_boss(&self, u: &User) -> bool {
        self.has_role(u, self.book.boss)
    }

    pub fn is_user(&self, u: &User) -> bool {
        self.has_role(u, self.book.user)
    }

    pub fn is_security_adm(&self, u: &User) -> bool {
        self.has_role(u, self.book.security_adm)
    }

    pub fn is_system_adm(&self, u: &User) -> bool {
        self.has_role(u, self.book.system_adm)
    }

    pub fn check_access(&self, u: &User, target: Target, action: Action) -> Result<Decision, AccessError> {
        let unknown = || AccessError::UnknownTarget(target);
        let (node, doc) = match target {
            Target::Document(id) => {
                let d = self.store.document(id).map_err(|_| unknown())?;
                (d.node, Some(d))
            }
            Target::Node(h) => match &self.store.node(h).map_err(|_| unknown())?.payload {
                Payload::Document { doc } => (h, Some(self.store.document(*doc).map_err(|_| unknown())?)),
                Payload::Folder(_) => (h, None),
            },
        };

        match action {
            Action::ManageUsers => return Ok(self.admin_gate(self.is_security_adm(u))),
            Action::ManageStore | Action::Archive => return Ok(self.admin_gate(self.is_system_adm(u))),
            Action::Delete if self.is_system_adm(u) => return Ok(Decision::Allow),
            Action::Sign if !self.is_boss(u) => return Ok(Decision::Deny(DenyReason::NoSignRight)),
            _ => {}
        }

        let decision = match doc {
            Some(doc) => self.document_rule(u, doc, action)?,
            None => self.folder_rule(u, node, action)?,
        };
        if let (Decision::Allow, Some(doc)) = (decision, doc) {
            if action.reads_content() {
                let flows = self
                    .lattice
                    .can_flow(&doc.profile.label, &u.clearance)
                    .unwrap_or(false);
                if !flows {
                    return Ok(Decision::Deny(DenyReason::FlowViolation));
                }
            }
        }
        Ok(decision)
    }

    fn admin_gate(&self, ok: bool) -> Decision {
        if ok {
            Decision::Allow
        } else {
            Decision::Deny(DenyReason::AdminOnly)
        }
    }

    fn document_rule(&self, u: &User, doc: &Document, action: Action) -> Result<Decision, AccessError> {
        use crate::lattice::SecurityType::*;
        Ok(match doc.profile.security_type {
            Confidential => {
                if doc.acl.permits(u.id, action) {
                    Decision::Allow
                } else {
                    Decision::Deny(DenyReason::NotOnAcl)
                }
            }
            Private => {
                if u.workgroups.contains(&doc.profile.owning_workgroup) {
                    self.role_rule(u, action, Some(doc))
                } else {
                    Decision::Deny(DenyReason::NotInWorkgroup)
                }
            }
            Public => {
                if self.is_member_at(u, doc.node)? {
                    self.role_rule(u, action, Some(doc))
                } else {
                    self.grant_rule(u, doc.node, action)?
                }
            }
        })
    }

    fn folder_rule(&self, u: &User, node: NodeHandle, action: Action) -> Result<Decision, AccessError> {
        if self.is_system_adm(u) && matches!(action, Action::Read | Action::Create | Action::Modify) {
            return Ok(Decision::Allow);
        }
        if self.is_member_at(u, node)? && action != Action::Delete {
            return Ok(self.role_rule(u, action, None));
        }
        self.grant_rule(u, node, action)
    }

    fn is_member_at(&self, u: &User, node: NodeHandle) -> Result<bool, AccessError> {
        let attached = self
            .store
            .attached_workgroups(node)
            .map_err(|_| AccessError::UnknownTarget(Target::Node(node)))?;
        Ok(!attached.is_disjoint(&u.workgroups))
    }

    /// What membership alone lets a role do.
    fn role_rule(&self, u: &User, action: Action, doc: Option<&Document>) -> Decision {
        match action {
            Action::Read => Decision::Allow,
            Action::Create | Action::Modify | Action::Route | Action::Sign if self.is_user(u) => Decision::Allow,
            Action::Delete if self.is_user(u) && doc.is_some_and(|d| d.profile.author == u.id) => {
                Decision::Allow
            }
            Action::Delete => Decision::Deny(DenyReason::AdminOnly),
            _ => Decision::Deny(DenyReason::NoRoleRight),
        }
    }

    fn grant_rule(&self, u: &User, node: NodeHandle, action: Action) -> Result<Decision, AccessError> {
        let level = self
            .store
            .node(node)
            .map_err(|_| AccessError::UnknownTarget(Target::Node(node)))?
            .level;
        let mut covered = false;
        for g in self.grants.iter().filter(|g| g.applies_to(u)) {
            if !self.store.is_within(node, g.subtree).unwrap_or(false) {
                continue;
            }
            covered = true;
            if g.actions.contains(&action) && g.level_ok(level) {
                return Ok(Decision::Allow);
            }
        }
        Ok(Decision::Deny(if covered {
            DenyReason::OutsideGrant
        } else {
            DenyReason::NotInWorkgroup
        }))
    }

    /// Records a tree-scoped grant on behalf of a security administrator.
    pub fn grant_subtree(&self, grants: &mut Vec<TreeGrant>, admin: &User, g: TreeGrant) -> Result<(), AccessError> {
        if !self.is_security_adm(admin) {
            return Err(AccessError::AdminOnly);
        }
        validate_grant(self.store, &g)?;
        grants.push(g);
        Ok(())
    }

    /// Cross product of `check_access` in user-major order.
    pub fn decision_matrix(
        &self,
        users: &[&User],
        docs: &[DocId],
        actions: &[Action],
    ) -> Result<DecisionMatrix, AccessError> {
        let mut cells = Vec::with_capacity(users.len() * docs.len() * actions.len());
        for u in users {
            for &d in docs {
                for &a in actions {
                    cells.push(MatrixCell {
                        user: u.id,
                        user_name: u.name.clone(),
                        doc: d,
                        action: a,
                        decision: self.check_access(u, Target::Document(d), a)?,
                    });
                }
            }
        }
        Ok(DecisionMatrix { cells })
    }
}

pub(crate) fn validate_grant(store: &DocStore, g: &TreeGrant) -> Result<(), AccessError> {
    store
        .node(g.subtree)
        .map_err(|_| AccessError::UnknownTarget(Target::Node(g.subtree)))?;
    if let Some((lo, hi)) = g.levels {
        if lo == 0 || lo > hi {
            return Err(AccessError::BadGrant(format!("level range {lo}..{hi}")));
        }
    }
    if g.actions.is_empty() {
        return Err(AccessError::BadGrant("no actions".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixCell {
    pub user: UserId,
    pub user_name: String,
    pub doc: DocId,
    pub action: Action,
    pub decision: Decision,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionMatrix {
    pub cells: Vec<MatrixCell>,
}

impl DecisionMatrix {
    /// One `user|doc|action|decision` line per cell.
    pub fn to_text(&self) -> String {
        self.cells
            .iter()
            .map(|c| format!("{}|{}|{}|{}\n", c.user_name, c.doc, c.action, c.decision))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blob::ContentDigest;
    use crate::isa::HierarchyKind;
    use crate::lattice::SecurityType;
    use crate::store::{DocumentProfile, Folder};

    const ACCOUNTING: WorkgroupId = WorkgroupId(1);
    const FINANCE: WorkgroupId = WorkgroupId(2);
    const VISITORS: WorkgroupId = WorkgroupId(3);

    struct World {
        roles: Hierarchy,
        access: Hierarchy,
        groups: BTreeSet<WorkgroupId>,
        store: DocStore,
        grants: Vec<TreeGrant>,
        users: BTreeMap<&'static str, User>,
        public: DocId,
        private: DocId,
        confidential: DocId,
        deep: DocId,
        finance: NodeHandle,
        nested: NodeHandle,
    }

    impl World {
        fn ctx(&self) -> PolicyContext<'_> {
            PolicyContext::new(
                &self.roles,
                FlowLattice::new(&self.access, &self.groups),
                &self.store,
                &self.grants,
            )
        }

        fn check(&self, who: &str, d: DocId, a: Action) -> Decision {
            self.ctx().check_access(&self.users[who], Target::Document(d), a).unwrap()
        }
    }

    fn world() -> World {
        let mut roles = Hierarchy::new(HierarchyKind::RoleClass);
        let user = roles.add_class(ROLE_USER, roles.root()).unwrap();
        let adm = roles.add_class(ROLE_ADMINISTRATOR, roles.root()).unwrap();
        let guest = roles.add_class(ROLE_GUEST, roles.root()).unwrap();
        let boss = roles.add_class(ROLE_BOSS, user).unwrap();
        let secretary = roles.add_class(ROLE_SECRETARY, user).unwrap();
        let sec_adm = roles.add_class(ROLE_SECURITY_ADM, adm).unwrap();
        let sys_adm = roles.add_class(ROLE_SYSTEM_ADM, adm).unwrap();

        let mut access = Hierarchy::new(HierarchyKind::AccessLevel);
        let vp = access.add_class("VP_Finance", access.root()).unwrap();
        let chief = access.add_class("Chief_Accounting", vp).unwrap();
        let top = access.root();

        let mut store = DocStore::new();
        let corp = store
            .create_node(NodeHandle::SENTINEL, Folder { name: "Corp".into(), workgroups: BTreeSet::new() })
            .unwrap();
        let finance = store
            .create_node(corp, Folder { name: "Finance".into(), workgroups: [FINANCE].into() })
            .unwrap();
        let accounting = store
            .create_node(finance, Folder { name: "Accounting".into(), workgroups: [ACCOUNTING].into() })
            .unwrap();
        let nested = store
            .create_node(accounting, Folder { name: "Ledgers".into(), workgroups: BTreeSet::new() })
            .unwrap();

        let mut users = BTreeMap::new();
        let mut add = |name: &'static str, id, role, level, stype, groups: &[WorkgroupId]| {
            users.insert(
                name,
                User::new(
                    UserId(id),
                    name,
                    role,
                    Label::new(level, stype, []),
                    groups.iter().copied().collect(),
                    None,
                ),
            );
        };
        add("carol", 1, boss, vp, SecurityType::Confidential, &[]);
        add("alice", 2, secretary, chief, SecurityType::Private, &[ACCOUNTING]);
        add("bob", 3, boss, vp, SecurityType::Private, &[FINANCE]);
        add("guest", 4, guest, chief, SecurityType::Public, &[]);
        add("visitor", 5, guest, chief, SecurityType::Public, &[VISITORS]);
        add("sec", 6, sec_adm, top, SecurityType::Confidential, &[]);
        add("sys", 7, sys_adm, top, SecurityType::Confidential, &[]);
        add("dave", 8, boss, chief, SecurityType::Private, &[ACCOUNTING]);

        let mut mk = |folder, stype, acl: Acl, title: &str| {
            let groups = if stype == SecurityType::Private { vec![ACCOUNTING] } else { vec![] };
            store
                .create_document(
                    folder,
                    DocumentProfile {
                        title: title.into(),
                        author: UserId(2),
                        class: ClassId(1),
                        security_type: stype,
                        label: Label::new(chief, stype, groups),
                        owning_workgroup: ACCOUNTING,
                        route: None,
                        created_seq: 1,
                        archived_seq: None,
                    },
                    acl,
                    ContentDigest::of(title.as_bytes()),
                )
                .unwrap()
        };
        let confidential = mk(accounting, SecurityType::Confidential, Acl::default().allow(UserId(1), [Action::Read]), "salaries");
        let private = mk(accounting, SecurityType::Private, Acl::default(), "budget");
        let public = mk(accounting, SecurityType::Public, Acl::default(), "newsletter");
        let deep = mk(nested, SecurityType::Public, Acl::default(), "ledger");

        World {
            roles,
            access,
            groups: [ACCOUNTING, FINANCE, VISITORS].into(),
            store,
            grants: Vec::new(),
            users,
            public,
            private,
            confidential,
            deep,
            finance,
            nested,
        }
    }

    #[test]
    fn read_matrix_follows_security_types() {
        let w = world();
        let allow = Decision::Allow;
        let deny = Decision::Deny;
        use DenyReason::*;
        let expected = [
            ("carol", [allow, deny(NotInWorkgroup), deny(NotInWorkgroup)]),
            ("alice", [deny(NotOnAcl), allow, allow]),
            ("bob", [deny(NotOnAcl), deny(NotInWorkgroup), allow]),
            ("guest", [deny(NotOnAcl), deny(NotInWorkgroup), deny(NotInWorkgroup)]),
        ];
        for (who, row) in expected {
            let got = [w.confidential, w.private, w.public].map(|d| w.check(who, d, Action::Read));
            assert_eq!(got, row, "{who}");
        }
    }

    #[test]
    fn sign_needs_boss() {
        let w = world();
        assert_eq!(w.check("alice", w.public, Action::Sign), Decision::Deny(DenyReason::NoSignRight));
        assert_eq!(w.check("dave", w.public, Action::Sign), Decision::Allow);
        assert_eq!(w.check("dave", w.private, Action::Sign), Decision::Allow);
        assert_eq!(w.check("sec", w.public, Action::Sign), Decision::Deny(DenyReason::NoSignRight));
        // Carol is a boss but the ACL only lists Read.
        assert_eq!(w.check("carol", w.confidential, Action::Sign), Decision::Deny(DenyReason::NotOnAcl));
    }

    #[test]
    fn admin_separation() {
        let w = world();
        for (who, users, store) in [
            ("sec", Decision::Allow, Decision::Deny(DenyReason::AdminOnly)),
            ("sys", Decision::Deny(DenyReason::AdminOnly), Decision::Allow),
            ("carol", Decision::Deny(DenyReason::AdminOnly), Decision::Deny(DenyReason::AdminOnly)),
        ] {
            assert_eq!(w.check(who, w.public, Action::ManageUsers), users);
            assert_eq!(w.check(who, w.public, Action::ManageStore), store);
            assert_eq!(w.check(who, w.public, Action::Archive), store);
        }
    }

    #[test]
    fn guests_cannot_modify_and_flow_is_enforced() {
        let mut w = world();
        assert_eq!(w.check("alice", w.public, Action::Modify), Decision::Allow);
        // A Private-cleared reader is refused a Confidential document even
        // when listed on its access list.
        let d = w.confidential;
        w.store.document_mut(d).unwrap().acl = Acl::default().allow(UserId(2), [Action::Read]);
        assert_eq!(w.check("alice", d, Action::Read), Decision::Deny(DenyReason::FlowViolation));
        w.users.get_mut("guest").unwrap().workgroups.insert(ACCOUNTING);
        w.users.get_mut("guest").unwrap().clearance.groups.insert(ACCOUNTING);
        assert_eq!(w.check("guest", w.public, Action::Read), Decision::Allow);
        assert_eq!(w.check("guest", w.public, Action::Modify), Decision::Deny(DenyReason::NoRoleRight));
    }

    #[test]
    fn grants_open_public_subtrees_to_outsiders() {
        let mut w = world();
        let grant = TreeGrant {
            grantee: Grantee::Workgroup(VISITORS),
            subtree: w.finance,
            actions: [Action::Read].into(),
            levels: None,
        };
        let boss = w.users["bob"].clone();
        assert_eq!(
            w.ctx().grant_subtree(&mut w.grants.clone(), &boss, grant.clone()),
            Err(AccessError::AdminOnly)
        );
        let sec = w.users["sec"].clone();
        let mut grants = Vec::new();
        w.ctx().grant_subtree(&mut grants, &sec, grant).unwrap();
        w.grants = grants;
        assert_eq!(w.check("visitor", w.deep, Action::Read), Decision::Allow);
        assert_eq!(w.check("visitor", w.public, Action::Read), Decision::Allow);
        // Private and Confidential documents ignore grants.
        assert_eq!(w.check("visitor", w.private, Action::Read), Decision::Deny(DenyReason::NotInWorkgroup));
        assert_eq!(w.check("visitor", w.public, Action::Modify), Decision::Deny(DenyReason::OutsideGrant));
        assert_eq!(w.check("guest", w.deep, Action::Read), Decision::Deny(DenyReason::NotInWorkgroup));
        let bogus = TreeGrant {
            grantee: Grantee::User(UserId(4)),
            subtree: NodeHandle(999),
            actions: [Action::Read].into(),
            levels: None,
        };
        assert!(matches!(
            w.ctx().grant_subtree(&mut Vec::new(), &sec, bogus),
            Err(AccessError::UnknownTarget(_))
        ));
    }

    #[test]
    fn level_ranged_grant_stops_at_its_bounds() {
        let mut w = world();
        // Corp=1, Finance=2, Accounting=3, Ledgers=4; the ledger document sits at level 5.
        assert_eq!(w.store.node(w.nested).unwrap().level, 4);
        let doc_level = w.store.node(w.store.document(w.deep).unwrap().node).unwrap().level;
        assert_eq!(doc_level, 5);
        w.grants.push(TreeGrant {
            grantee: Grantee::User(UserId(4)),
            subtree: w.finance,
            actions: [Action::Read].into(),
            levels: Some((2, 4)),
        });
        assert_eq!(w.check("guest", w.public, Action::Read), Decision::Allow);
        assert_eq!(w.check("guest", w.deep, Action::Read), Decision::Deny(DenyReason::OutsideGrant));
        let folder = w.ctx().check_access(&w.users["guest"], Target::Node(w.nested), Action::Read).unwrap();
        assert_eq!(folder, Decision::Allow);
    }

    #[test]
    fn unknown_targets_error() {
        let w = world();
        let err = w.ctx().check_access(&w.users["alice"], Target::Document(DocId(99)), Action::Read);
        assert_eq!(err, Err(AccessError::UnknownTarget(Target::Document(DocId(99)))));
    }

    #[test]
    fn matrix_is_deterministic_and_ordered() {
        let w = world();
        let users: Vec<&User> = ["carol", "alice"].iter().map(|n| &w.users[n]).collect();
        let ctx = w.ctx();
        let m = ctx.decision_matrix(&users, &[w.confidential, w.private], &[Action::Read]).unwrap();
        assert_eq!(m, ctx.decision_matrix(&users, &[w.confidential, w.private], &[Action::Read]).unwrap());
        assert_eq!(
            m.to_text(),
            "carol|1|Read|Allow\ncarol|2|Read|Deny(NotInWorkgroup)\nalice|1|Read|Deny(NotOnAcl)\nalice|2|Read|Allow\n"
        );
        assert!(ctx.decision_matrix(&[], &[w.public], &[Action::Read]).unwrap().cells.is_empty());
    }

    #[test]
    fn decision_wire_format() {
        assert_eq!(serde_json::to_string(&Decision::Allow).unwrap(), r#"{"verdict":"Allow"}"#);
        assert_eq!(
            serde_json::to_string(&Decision::Deny(DenyReason::NoSignRight)).unwrap(),
            r#"{"verdict":"Deny","reason":"NoSignRight"}"#
        );
        assert_eq!(Decision::Deny(DenyReason::NotOnAcl).to_string(), "Deny(NotOnAcl)");
        assert_eq!("manageusers".parse::<Action>().unwrap(), Action::ManageUsers);
    }
}
