//! ISA (subtype) hierarchies for document classes, role classes and access levels.
//!
//! Every hierarchy is a strict tree with a single root and a designated `Other`
//! class directly under the root that absorbs exceptions. Class ids are handed
//! out from a monotonically increasing counter and are never reused.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Name of the exception class every hierarchy carries under its root.
pub const OTHER: &str = "Other";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassId(pub u64);

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HierarchyKind {
    #[serde(rename = "document")]
    DocumentClass,
    #[serde(rename = "role")]
    RoleClass,
    #[serde(rename = "access")]
    AccessLevel,
}

impl HierarchyKind {
    pub const ALL: [HierarchyKind; 3] = [
        HierarchyKind::DocumentClass,
        HierarchyKind::RoleClass,
        HierarchyKind::AccessLevel,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            HierarchyKind::DocumentClass => "document",
            HierarchyKind::RoleClass => "role",
            HierarchyKind::AccessLevel => "access",
        }
    }

    /// Name given to the root class when a hierarchy is constructed.
    pub fn root_name(self) -> &'static str {
        match self {
            HierarchyKind::DocumentClass => "Document",
            HierarchyKind::RoleClass => "Role",
            HierarchyKind::AccessLevel => "Corporation",
        }
    }
}

impl fmt::Display for HierarchyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for HierarchyKind {
    type Err = IsaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "document" => Ok(HierarchyKind::DocumentClass),
            "role" => Ok(HierarchyKind::RoleClass),
            "access" => Ok(HierarchyKind::AccessLevel),
            other => Err(IsaError::Parse {
                line: 0,
                message: format!("unknown hierarchy kind `{other}`"),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassNode {
    pub id: ClassId,
    pub name: String,
    /// `None` marks the root.
    pub parent: Option<ClassId>,
    pub kind: HierarchyKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IsaError {
    #[error("unknown parent class {0}")]
    UnknownParent(ClassId),
    #[error("a sibling named `{0}` already exists")]
    DuplicateSibling(String),
    #[error("unknown class {0}")]
    UnknownClass(ClassId),
    #[error("no class named `{0}`")]
    UnknownName(String),
    #[error("class name `{0}` is ambiguous")]
    AmbiguousName(String),
    #[error("invalid class name `{0}`")]
    InvalidName(String),
    #[error("the root class cannot be removed")]
    RootRemoval,
    #[error("the Other class cannot be removed")]
    OtherRemoval,
    #[error("class {0} is still used by a live instance")]
    InUse(ClassId),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Names travel through `|`-separated records and whitespace-separated
/// directives, so they are restricted to a conservative character set.
pub fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hierarchy {
    kind: HierarchyKind,
    nodes: BTreeMap<ClassId, ClassNode>,
    children: BTreeMap<ClassId, BTreeSet<ClassId>>,
    root: ClassId,
    other: ClassId,
    next_id: u64,
}

impl Hierarchy {
    /// Creates a hierarchy holding only its root and the `Other` class.
    pub fn new(kind: HierarchyKind) -> Self {
        Self::with_root(kind, kind.root_name())
    }

    pub fn with_root(kind: HierarchyKind, root_name: &str) -> Self {
        let root = ClassId(1);
        let other = ClassId(2);
        let mut h = Hierarchy {
            kind,
            nodes: BTreeMap::new(),
            children: BTreeMap::new(),
            root,
            other,
            next_id: 3,
        };
        h.insert(ClassNode {
            id: root,
            name: root_name.to_string(),
            parent: None,
            kind,
        });
        h.insert(ClassNode {
            id: other,
            name: OTHER.to_string(),
            parent: Some(root),
            kind,
        });
        h
    }

    fn insert(&mut self, node: ClassNode) {
        if let Some(p) = node.parent {
            self.children.entry(p).or_default().insert(node.id);
        }
        self.children.entry(node.id).or_default();
        self.nodes.insert(node.id, node);
    }

    pub fn kind(&self) -> HierarchyKind {
        self.kind
    }

    pub fn root(&self) -> ClassId {
        self.root
    }

    pub fn other(&self) -> ClassId {
        self.other
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// First id that will be handed out by the next `add_class`.
    pub fn next_id(&self) -> ClassId {
        ClassId(self.next_id)
    }

    /// Raises the id high-water mark, e.g. when restoring a snapshot taken
    /// after removals.
    pub fn reserve_ids_below(&mut self, next: ClassId) {
        self.next_id = self.next_id.max(next.0);
    }

    pub fn contains(&self, id: ClassId) -> bool {
        self.nodes.contains_key(&id)
    }

    pub fn get(&self, id: ClassId) -> Result<&ClassNode, IsaError> {
        self.nodes.get(&id).ok_or(IsaError::UnknownClass(id))
    }

    pub fn name(&self, id: ClassId) -> Result<&str, IsaError> {
        self.get(id).map(|n| n.name.as_str())
    }

    pub fn nodes(&self) -> impl Iterator<Item = &ClassNode> {
        self.nodes.values()
    }

    pub fn ids(&self) -> impl Iterator<Item = ClassId> + '_ {
        self.nodes.keys().copied()
    }

    pub fn parent(&self, id: ClassId) -> Result<Option<ClassId>, IsaError> {
        self.get(id).map(|n| n.parent)
    }

    pub fn children(&self, id: ClassId) -> Result<impl Iterator<Item = ClassId> + '_, IsaError> {
        self.get(id)?;
        Ok(self.children[&id].iter().copied())
    }

    /// Looks a class up by name anywhere in the hierarchy.
    pub fn lookup(&self, name: &str) -> Result<ClassId, IsaError> {
        let mut hits = self.nodes.values().filter(|n| n.name == name);
        match (hits.next(), hits.next()) {
            (Some(n), None) => Ok(n.id),
            (None, _) => Err(IsaError::UnknownName(name.to_string())),
            (Some(_), Some(_)) => Err(IsaError::AmbiguousName(name.to_string())),
        }
    }

    /// Distance from the root; the root has depth 0.
    pub fn depth(&self, id: ClassId) -> Result<usize, IsaError> {
        Ok(self.ancestors(id)?.len() - 1)
    }

    /// The parent chain from `id` (inclusive) up to the root (inclusive).
    pub fn ancestors(&self, id: ClassId) -> Result<Vec<ClassId>, IsaError> {
        let mut chain = vec![id];
        let mut cur = self.get(id)?;
        while let Some(p) = cur.parent {
            chain.push(p);
            cur = &self.nodes[&p];
        }
        Ok(chain)
    }

    pub fn add_class(&mut self, name: &str, parent: ClassId) -> Result<ClassId, IsaError> {
        if !valid_name(name) {
            return Err(IsaError::InvalidName(name.to_string()));
        }
        if !self.nodes.contains_key(&parent) {
            return Err(IsaError::UnknownParent(parent));
        }
        if self.children[&parent]
            .iter()
            .any(|c| self.nodes[c].name == name)
        {
            return Err(IsaError::DuplicateSibling(name.to_string()));
        }
        let id = ClassId(self.next_id);
        self.next_id += 1;
        self.insert(ClassNode {
            id,
            name: name.to_string(),
            parent: Some(parent),
            kind: self.kind,
        });
        Ok(id)
    }

    /// Reflexive: true iff `b` lies on the parent chain from `a` to the root.
    pub fn is_subtype(&self, a: ClassId, b: ClassId) -> Result<bool, IsaError> {
        self.get(b)?;
        let mut cur = Some(a);
        self.get(a)?;
        while let Some(id) = cur {
            if id == b {
                return Ok(true);
            }
            cur = self.nodes[&id].parent;
        }
        Ok(false)
    }

    pub fn least_common_ancestor(&self, a: ClassId, b: ClassId) -> Result<ClassId, IsaError> {
        let mut left = self.ancestors(a)?;
        let mut right = self.ancestors(b)?;
        // Both chains end in the root; walk them from the top down.
        let mut lca = self.root;
        while let (Some(x), Some(y)) = (left.pop(), right.pop()) {
            if x != y {
                break;
            }
            lca = x;
        }
        Ok(lca)
    }

    /// All classes subsumed by `a`, including `a`.
    pub fn descendants(&self, a: ClassId) -> Result<BTreeSet<ClassId>, IsaError> {
        self.get(a)?;
        let mut out = BTreeSet::new();
        let mut stack = vec![a];
        while let Some(id) = stack.pop() {
            out.insert(id);
            stack.extend(self.children[&id].iter().copied());
        }
        Ok(out)
    }

    /// Removes `a` together with its whole subtree. `in_use` is asked about
    /// every class that would disappear; any hit aborts the removal.
    pub fn remove_class(
        &mut self,
        a: ClassId,
        in_use: impl Fn(ClassId) -> bool,
    ) -> Result<BTreeSet<ClassId>, IsaError> {
        let parent = self.parent(a)?;
        if a == self.root {
            return Err(IsaError::RootRemoval);
        }
        if a == self.other {
            return Err(IsaError::OtherRemoval);
        }
        let doomed = self.descendants(a)?;
        if let Some(&busy) = doomed.iter().find(|&&id| in_use(id)) {
            return Err(IsaError::InUse(busy));
        }
        if let Some(p) = parent {
            self.children.get_mut(&p).expect("parent present").remove(&a);
        }
        for id in &doomed {
            self.nodes.remove(id);
            self.children.remove(id);
        }
        Ok(doomed)
    }

    /// Line-oriented dump: `id|kind|parent|name`, sorted by id, root parent
    /// written as `ROOT`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for n in self.nodes.values() {
            let parent = n.parent.map_or_else(|| "ROOT".to_string(), |p| p.0.to_string());
            out.push_str(&format!("{}|{}|{}|{}\n", n.id, n.kind, parent, n.name));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, IsaError> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            records.push(parse_record(i + 1, line)?);
        }
        Self::from_nodes(records)
    }

    /// Rebuilds a hierarchy from its node records, validating the tree shape.
    pub fn from_nodes(records: Vec<ClassNode>) -> Result<Self, IsaError> {
        let bad = |message: String| IsaError::Parse { line: 0, message };
        let kind = records
            .first()
            .map(|n| n.kind)
            .ok_or_else(|| bad("empty hierarchy".into()))?;
        let roots: Vec<_> = records.iter().filter(|n| n.parent.is_none()).collect();
        let [root] = roots.as_slice() else {
            return Err(bad(format!("expected one root, found {}", roots.len())));
        };
        let root = root.id;
        let other = records
            .iter()
            .find(|n| n.parent == Some(root) && n.name == OTHER)
            .map(|n| n.id)
            .ok_or_else(|| bad("missing Other class under root".into()))?;
        let mut h = Hierarchy {
            kind,
            nodes: BTreeMap::new(),
            children: BTreeMap::new(),
            root,
            other,
            next_id: records.iter().map(|n| n.id.0).max().unwrap_or(0) + 1,
        };
        for n in &records {
            if n.kind != kind {
                return Err(bad(format!("class {} has kind {}, expected {}", n.id, n.kind, kind)));
            }
            if h.nodes.contains_key(&n.id) {
                return Err(bad(format!("duplicate class id {}", n.id)));
            }
            if !valid_name(&n.name) {
                return Err(IsaError::InvalidName(n.name.clone()));
            }
            h.nodes.insert(n.id, n.clone());
            h.children.entry(n.id).or_default();
        }
        for n in &records {
            if let Some(p) = n.parent {
                if !h.nodes.contains_key(&p) {
                    return Err(IsaError::UnknownParent(p));
                }
                let siblings = h.children.entry(p).or_default();
                if siblings.iter().any(|s| h.nodes[s].name == n.name) {
                    return Err(IsaError::DuplicateSibling(n.name.clone()));
                }
                siblings.insert(n.id);
            }
        }
        // Every node must reach the root; anything else is a detached cycle.
        let reachable = h.descendants(root)?;
        if reachable.len() != h.nodes.len() {
            return Err(bad("parent links contain a cycle".into()));
        }
        Ok(h)
    }
}

fn parse_record(line: usize, text: &str) -> Result<ClassNode, IsaError> {
    let bad = |message: String| IsaError::Parse { line, message };
    let fields: Vec<&str> = text.splitn(4, '|').collect();
    let [id, kind, parent, name] = fields.as_slice() else {
        return Err(bad(format!("expected 4 fields, got {}", fields.len())));
    };
    let id = id
        .parse::<u64>()
        .map_err(|e| bad(format!("bad id `{id}`: {e}")))?;
    let kind = kind.parse::<HierarchyKind>().map_err(|_| bad(format!("bad kind `{kind}`")))?;
    let parent = match *parent {
        "ROOT" => None,
        p => Some(ClassId(
            p.parse::<u64>().map_err(|e| bad(format!("bad parent `{p}`: {e}")))?,
        )),
    };
    Ok(ClassNode {
        id: ClassId(id),
        name: name.to_string(),
        parent,
        kind,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    struct Docs {
        h: Hierarchy,
        contract: ClassId,
        directive: ClassId,
        protocol: ClassId,
        board: ClassId,
        protocols: Vec<ClassId>,
    }

    fn documents() -> Docs {
        let mut h = Hierarchy::new(HierarchyKind::DocumentClass);
        let root = h.root();
        let contract = h.add_class("Contract", root).unwrap();
        let directive = h.add_class("Directive", root).unwrap();
        let protocol = h.add_class("Protocol", root).unwrap();
        let corr = h.add_class("Correspondence", root).unwrap();
        h.add_class("Order", directive).unwrap();
        h.add_class("Decree", directive).unwrap();
        let protocols: Vec<_> = [
            "FrontOfficeProtocol",
            "BoardOfDirectorsProtocol",
            "OperationalMeetingProtocol",
            "CoordinationProtocol",
        ]
        .iter()
        .map(|n| h.add_class(n, protocol).unwrap())
        .collect();
        h.add_class("IncomingCorrespondence", corr).unwrap();
        h.add_class("OutgoingCorrespondence", corr).unwrap();
        Docs {
            board: protocols[1],
            h,
            contract,
            directive,
            protocol,
            protocols,
        }
    }

    /// Oracle: walk the parent chain using only raw node records.
    fn chain_contains(h: &Hierarchy, a: ClassId, b: ClassId) -> bool {
        let mut cur = Some(a);
        let mut steps = 0;
        while let Some(id) = cur {
            if id == b {
                return true;
            }
            cur = h.nodes().find(|n| n.id == id).unwrap().parent;
            steps += 1;
            assert!(steps <= h.len(), "cycle");
        }
        false
    }

    /// Oracle: enumerate common ancestors and pick the deepest.
    fn lca_oracle(h: &Hierarchy, a: ClassId, b: ClassId) -> ClassId {
        h.ids()
            .filter(|&c| chain_contains(h, a, c) && chain_contains(h, b, c))
            .max_by_key(|&c| h.ids().filter(|&x| chain_contains(h, c, x)).count())
            .unwrap()
    }

    #[test]
    fn construction_creates_root_and_other() {
        let h = Hierarchy::new(HierarchyKind::RoleClass);
        assert_eq!(h.len(), 2);
        assert_eq!(h.name(h.root()).unwrap(), "Role");
        assert_eq!(h.parent(h.other()).unwrap(), Some(h.root()));
    }

    #[test]
    fn add_contract_under_document() {
        let d = documents();
        assert!(d.h.is_subtype(d.contract, d.h.root()).unwrap());
    }

    #[test]
    fn boss_and_secretary_are_users() {
        let mut h = Hierarchy::new(HierarchyKind::RoleClass);
        let user = h.add_class("User", h.root()).unwrap();
        let boss = h.add_class("Boss", user).unwrap();
        let secretary = h.add_class("Secretary", user).unwrap();
        assert!(h.is_subtype(boss, user).unwrap());
        assert!(h.is_subtype(secretary, user).unwrap());
        assert!(!h.is_subtype(secretary, boss).unwrap());
        assert_eq!(h.least_common_ancestor(boss, secretary).unwrap(), user);
    }

    #[test]
    fn add_errors() {
        let mut d = documents();
        assert_eq!(
            d.h.add_class("X", ClassId(999)),
            Err(IsaError::UnknownParent(ClassId(999)))
        );
        assert_eq!(
            d.h.add_class("Contract", d.h.root()),
            Err(IsaError::DuplicateSibling("Contract".into()))
        );
        // Same name under a different parent is fine.
        assert!(d.h.add_class("Contract", d.directive).is_ok());
        assert!(matches!(d.h.add_class("a|b", d.h.root()), Err(IsaError::InvalidName(_))));
    }

    #[test]
    fn subtype_examples() {
        let d = documents();
        assert!(d.h.is_subtype(d.board, d.board).unwrap());
        assert!(!d.h.is_subtype(d.contract, d.protocol).unwrap());
        assert!(!chain_contains(&d.h, d.contract, d.protocol));
        assert_eq!(
            d.h.is_subtype(ClassId(77), d.contract),
            Err(IsaError::UnknownClass(ClassId(77)))
        );
    }

    #[test]
    fn lca_examples() {
        let d = documents();
        assert_eq!(d.h.least_common_ancestor(d.board, d.board).unwrap(), d.board);
        assert_eq!(
            d.h.least_common_ancestor(d.contract, d.h.other()).unwrap(),
            d.h.root()
        );
        assert_eq!(lca_oracle(&d.h, d.contract, d.h.other()), d.h.root());
    }

    #[test]
    fn descendants_examples() {
        let d = documents();
        assert_eq!(d.h.descendants(d.board).unwrap(), BTreeSet::from([d.board]));
        let under = d.h.descendants(d.protocol).unwrap();
        assert!(d.protocols.iter().all(|p| under.contains(p)));
        assert_eq!(under.len(), 5);
        assert_eq!(d.h.descendants(d.h.root()).unwrap().len(), d.h.len());
    }

    #[test]
    fn remove_examples() {
        let mut d = documents();
        let before = d.h.len();
        assert_eq!(
            d.h.remove_class(d.contract, |_| false).unwrap(),
            BTreeSet::from([d.contract])
        );
        let removed = d.h.remove_class(d.protocol, |_| false).unwrap();
        assert_eq!(removed.len(), 5);
        assert_eq!(d.h.len(), before - 6);
        assert_eq!(d.h.remove_class(d.h.root(), |_| false), Err(IsaError::RootRemoval));
        assert_eq!(d.h.remove_class(d.h.other(), |_| false), Err(IsaError::OtherRemoval));
        let order = d.h.lookup("Order").unwrap();
        assert_eq!(
            d.h.remove_class(d.directive, |c| c == order),
            Err(IsaError::InUse(order))
        );
        // Removed ids are never handed out again.
        let fresh = d.h.add_class("Fresh", d.h.root()).unwrap();
        assert!(fresh > d.protocols[3]);
    }

    #[test]
    fn lookup_by_name() {
        let mut d = documents();
        assert_eq!(d.h.lookup("Protocol").unwrap(), d.protocol);
        assert!(matches!(d.h.lookup("Nope"), Err(IsaError::UnknownName(_))));
        d.h.add_class("Order", d.protocol).unwrap();
        assert!(matches!(d.h.lookup("Order"), Err(IsaError::AmbiguousName(_))));
    }

    #[test]
    fn text_round_trip_is_bit_exact() {
        let d = documents();
        let text = d.h.to_text();
        assert!(text.starts_with("1|document|ROOT|Document\n2|document|1|Other\n"));
        let back = Hierarchy::from_text(&text).unwrap();
        assert_eq!(back.to_text(), text);
        assert_eq!(back, d.h);
    }

    #[test]
    fn text_rejects_cycles_and_bad_shapes() {
        let cyclic = "1|role|ROOT|Role\n2|role|1|Other\n3|role|4|A\n4|role|3|B\n";
        assert!(Hierarchy::from_text(cyclic).is_err());
        let two_roots = "1|role|ROOT|Role\n2|role|1|Other\n3|role|ROOT|B\n";
        assert!(Hierarchy::from_text(two_roots).is_err());
        let no_other = "1|role|ROOT|Role\n";
        assert!(Hierarchy::from_text(no_other).is_err());
        assert!(Hierarchy::from_text("1|role|ROOT\n").is_err());
    }

    /// Builds a random tree of `n` extra nodes; `parents[i]` picks among the
    /// nodes created so far.
    fn random_tree(parents: &[usize]) -> Hierarchy {
        let mut h = Hierarchy::new(HierarchyKind::AccessLevel);
        let mut ids = vec![h.root(), h.other()];
        for (i, p) in parents.iter().enumerate() {
            let parent = ids[p % ids.len()];
            ids.push(h.add_class(&format!("n{i}"), parent).unwrap());
        }
        h
    }

    proptest! {
        #[test]
        fn subtype_is_a_partial_order(parents in prop::collection::vec(0usize..64, 0..18)) {
            let h = random_tree(&parents);
            let ids: Vec<_> = h.ids().collect();
            for &a in &ids {
                prop_assert!(h.is_subtype(a, a).unwrap());
                prop_assert!(h.ancestors(a).unwrap().len() <= h.len());
                for &b in &ids {
                    let ab = h.is_subtype(a, b).unwrap();
                    prop_assert_eq!(ab, chain_contains(&h, a, b));
                    if ab && h.is_subtype(b, a).unwrap() {
                        prop_assert_eq!(a, b);
                    }
                    for &c in &ids {
                        if ab && h.is_subtype(b, c).unwrap() {
                            prop_assert!(h.is_subtype(a, c).unwrap());
                        }
                    }
                }
            }
        }

        #[test]
        fn lca_matches_oracle(parents in prop::collection::vec(0usize..64, 0..18)) {
            let h = random_tree(&parents);
            let ids: Vec<_> = h.ids().collect();
            for &a in &ids {
                for &b in &ids {
                    let l = h.least_common_ancestor(a, b).unwrap();
                    prop_assert_eq!(l, h.least_common_ancestor(b, a).unwrap());
                    prop_assert!(h.is_subtype(a, l).unwrap() && h.is_subtype(b, l).unwrap());
                    prop_assert_eq!(l, lca_oracle(&h, a, b));
                }
            }
        }

        #[test]
        fn removal_leaves_no_orphans(parents in prop::collection::vec(0usize..64, 1..18), pick in 0usize..64) {
            let mut h = random_tree(&parents);
            let candidates: Vec<_> = h.ids().filter(|&id| id != h.root() && id != h.other()).collect();
            let victim = candidates[pick % candidates.len()];
            let removed = h.remove_class(victim, |_| false).unwrap();
            for n in h.nodes() {
                for anc in h.ancestors(n.id).unwrap() {
                    prop_assert!(!removed.contains(&anc));
                }
            }
            prop_assert_eq!(Hierarchy::from_text(&h.to_text()).unwrap().to_text(), h.to_text());
        }
    }
}
