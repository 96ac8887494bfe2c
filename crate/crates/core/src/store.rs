//! Tree-structured store of folders and documents.
//!
//! Nodes keep a stable handle for their whole life. The pre-order position of
//! a node (its "identifier", root = 1, root parent = 0) is a derived view that
//! shifts as the tree changes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::access::{Acl, UserId};
use crate::blob::ContentDigest;
use crate::isa::{ClassId, Hierarchy, IsaError};
use crate::lattice::{Label, SecurityType, WorkgroupId};
use crate::routing::RouteId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeHandle(pub u64);

impl NodeHandle {
    /// Parent recorded for the root element.
    pub const SENTINEL: NodeHandle = NodeHandle(0);
}

impl fmt::Display for NodeHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DocId(pub u64);

impl fmt::Display for DocId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Folder {
    pub name: String,
    /// Workgroups attached to this folder; inherited by everything below it.
    pub workgroups: BTreeSet<WorkgroupId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Payload {
    Folder(Folder),
    Document { doc: DocId },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeNode {
    pub handle: NodeHandle,
    pub parent: NodeHandle,
    /// Depth with the root at level 1.
    pub level: u32,
    pub payload: Payload,
}

impl TreeNode {
    pub fn is_folder(&self) -> bool {
        matches!(self.payload, Payload::Folder(_))
    }

    pub fn document(&self) -> Option<DocId> {
        match self.payload {
            Payload::Document { doc } => Some(doc),
            Payload::Folder(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentProfile {
    pub title: String,
    pub author: UserId,
    pub class: ClassId,
    pub security_type: SecurityType,
    pub label: Label,
    pub owning_workgroup: WorkgroupId,
    pub route: Option<RouteId>,
    pub created_seq: u64,
    pub archived_seq: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VersionRecord {
    pub version: u32,
    pub author: UserId,
    pub digest: ContentDigest,
    pub seq: u64,
}

impl VersionRecord {
    /// Where the body lives in the blob store.
    pub fn blob_ref(&self) -> String {
        format!("blobs/{}", self.digest)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DocStatus {
    Draft,
    InRoute,
    Signed,
    Archived,
}

impl DocStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            DocStatus::Draft => "Draft",
            DocStatus::InRoute => "InRoute",
            DocStatus::Signed => "Signed",
            DocStatus::Archived => "Archived",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: DocId,
    pub node: NodeHandle,
    pub profile: DocumentProfile,
    pub versions: Vec<VersionRecord>,
    pub status: DocStatus,
    pub acl: Acl,
}

impl Document {
    pub fn current(&self) -> &VersionRecord {
        self.versions.last().expect("documents always carry a version")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub class: Option<ClassId>,
    pub title: Option<String>,
    pub author: Option<UserId>,
    #[serde(default)]
    pub include_archived: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StoreError {
    #[error("unknown parent node {0}")]
    UnknownParent(NodeHandle),
    #[error("node {0} is not a folder")]
    ParentNotFolder(NodeHandle),
    #[error("the store already has a root")]
    RootExists,
    #[error("unknown node {0}")]
    UnknownHandle(NodeHandle),
    #[error("unknown document {0}")]
    UnknownDocument(DocId),
    #[error("a folder named `{0}` already exists here")]
    DuplicateName(String),
    #[error("invalid folder name `{0}`")]
    InvalidName(String),
    #[error("document {0} is archived")]
    ArchivedDocument(DocId),
    #[error("document profile is inconsistent: {0}")]
    BadProfile(String),
    #[error(transparent)]
    Class(#[from] IsaError),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DocStore {
    nodes: BTreeMap<NodeHandle, TreeNode>,
    children: BTreeMap<NodeHandle, BTreeSet<NodeHandle>>,
    root: Option<NodeHandle>,
    next_handle: u64,
    docs: BTreeMap<DocId, Document>,
    next_doc: u64,
}

impl DocStore {
    pub fn new() -> Self {
        DocStore {
            next_handle: 1,
            next_doc: 1,
            ..Default::default()
        }
    }

    pub fn root(&self) -> Option<NodeHandle> {
        self.root
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn next_handle(&self) -> NodeHandle {
        NodeHandle(self.next_handle)
    }

    pub fn next_doc(&self) -> DocId {
        DocId(self.next_doc)
    }

    pub fn node(&self, h: NodeHandle) -> Result<&TreeNode, StoreError> {
        self.nodes.get(&h).ok_or(StoreError::UnknownHandle(h))
    }

    pub fn nodes(&self) -> impl Iterator<Item = &TreeNode> {
        self.nodes.values()
    }

    pub fn children(&self, h: NodeHandle) -> Result<impl Iterator<Item = NodeHandle> + '_, StoreError> {
        self.node(h)?;
        Ok(self.children[&h].iter().copied())
    }

    pub fn document(&self, id: DocId) -> Result<&Document, StoreError> {
        self.docs.get(&id).ok_or(StoreError::UnknownDocument(id))
    }

    pub(crate) fn document_mut(&mut self, id: DocId) -> Result<&mut Document, StoreError> {
        self.docs.get_mut(&id).ok_or(StoreError::UnknownDocument(id))
    }

    pub fn documents(&self) -> impl Iterator<Item = &Document> {
        self.docs.values()
    }

    fn insert_node(&mut self, parent: NodeHandle, payload: Payload) -> Result<NodeHandle, StoreError> {
        let level = if parent == NodeHandle::SENTINEL {
            if self.root.is_some() {
                return Err(StoreError::RootExists);
            }
            if !matches!(payload, Payload::Folder(_)) {
                return Err(StoreError::ParentNotFolder(parent));
            }
            1
        } else {
            let p = self.nodes.get(&parent).ok_or(StoreError::UnknownParent(parent))?;
            let Payload::Folder(_) = &p.payload else {
                return Err(StoreError::ParentNotFolder(parent));
            };
            if let Payload::Folder(f) = &payload {
                let clash = self.children[&parent].iter().any(|c| {
                    matches!(&self.nodes[c].payload, Payload::Folder(g) if g.name == f.name)
                });
                if clash {
                    return Err(StoreError::DuplicateName(f.name.clone()));
                }
            }
            p.level + 1
        };
        let handle = NodeHandle(self.next_handle);
        self.next_handle += 1;
        if parent == NodeHandle::SENTINEL {
            self.root = Some(handle);
        } else {
            self.children.get_mut(&parent).expect("parent present").insert(handle);
        }
        self.children.insert(handle, BTreeSet::new());
        self.nodes.insert(
            handle,
            TreeNode {
                handle,
                parent,
                level,
                payload,
            },
        );
        Ok(handle)
    }

    /// Creates a folder. Pass [`NodeHandle::SENTINEL`] as parent to create the
    /// root of an empty store.
    pub fn create_node(&mut self, parent: NodeHandle, folder: Folder) -> Result<NodeHandle, StoreError> {
        if !crate::isa::valid_name(&folder.name) {
            return Err(StoreError::InvalidName(folder.name));
        }
        self.insert_node(parent, Payload::Folder(folder))
    }

    /// Files a new document under `folder` with its first version.
    pub fn create_document(
        &mut self,
        folder: NodeHandle,
        profile: DocumentProfile,
        acl: Acl,
        digest: ContentDigest,
    ) -> Result<DocId, StoreError> {
        if profile.security_type != profile.label.stype {
            return Err(StoreError::BadProfile(format!(
                "security type {} differs from label type {}",
                profile.security_type, profile.label.stype
            )));
        }
        if folder == NodeHandle::SENTINEL {
            return Err(StoreError::UnknownParent(folder));
        }
        let id = DocId(self.next_doc);
        let node = self.insert_node(folder, Payload::Document { doc: id })?;
        self.next_doc += 1;
        let first = VersionRecord {
            version: 1,
            author: profile.author,
            digest,
            seq: profile.created_seq,
        };
        self.docs.insert(
            id,
            Document {
                id,
                node,
                profile,
                versions: vec![first],
                status: DocStatus::Draft,
                acl,
            },
        );
        Ok(id)
    }

    /// The handle together with every node below it.
    pub fn subtree(&self, h: NodeHandle) -> Result<BTreeSet<NodeHandle>, StoreError> {
        self.node(h)?;
        let mut out = BTreeSet::new();
        let mut stack = vec![h];
        while let Some(n) = stack.pop() {
            out.insert(n);
            stack.extend(self.children[&n].iter().copied());
        }
        Ok(out)
    }

    /// Documents filed anywhere inside the subtree rooted at `h`.
    pub fn documents_under(&self, h: NodeHandle) -> Result<BTreeSet<DocId>, StoreError> {
        Ok(self
            .subtree(h)?
            .into_iter()
            .filter_map(|n| match self.nodes[&n].payload {
                Payload::Document { doc } => Some(doc),
                Payload::Folder(_) => None,
            })
            .collect())
    }

    /// Removes a node and all of its sublevels, including the documents
    /// filed there. Returns every removed handle.
    pub fn delete_node(&mut self, h: NodeHandle) -> Result<BTreeSet<NodeHandle>, StoreError> {
        let removed = self.subtree(h)?;
        let parent = self.nodes[&h].parent;
        if parent == NodeHandle::SENTINEL {
            self.root = None;
        } else {
            self.children.get_mut(&parent).expect("parent present").remove(&h);
        }
        for n in &removed {
            if let Some(TreeNode {
                payload: Payload::Document { doc },
                ..
            }) = self.nodes.remove(n)
            {
                self.docs.remove(&doc);
            }
            self.children.remove(n);
        }
        Ok(removed)
    }

    /// `h` followed by its parents up to the root.
    pub fn ancestors(&self, h: NodeHandle) -> Result<Vec<NodeHandle>, StoreError> {
        let mut chain = vec![h];
        let mut cur = self.node(h)?;
        while cur.parent != NodeHandle::SENTINEL {
            chain.push(cur.parent);
            cur = &self.nodes[&cur.parent];
        }
        Ok(chain)
    }

    /// True iff `h` is `root` or lies below it.
    pub fn is_within(&self, h: NodeHandle, root: NodeHandle) -> Result<bool, StoreError> {
        self.node(root)?;
        Ok(self.ancestors(h)?.contains(&root))
    }

    /// Union of the workgroups attached to every folder from `h` up to the root.
    pub fn attached_workgroups(&self, h: NodeHandle) -> Result<BTreeSet<WorkgroupId>, StoreError> {
        let mut out = BTreeSet::new();
        for n in self.ancestors(h)? {
            if let Payload::Folder(f) = &self.nodes[&n].payload {
                out.extend(f.workgroups.iter().copied());
            }
        }
        Ok(out)
    }

    /// 1-based position of `h` in depth-first pre-order; children are
    /// visited in creation order.
    pub fn preorder_index(&self, h: NodeHandle) -> Result<u64, StoreError> {
        self.node(h)?;
        let root = self.root.expect("a node exists, so a root does");
        let mut count = 0;
        let mut stack = vec![root];
        while let Some(n) = stack.pop() {
            count += 1;
            if n == h {
                return Ok(count);
            }
            stack.extend(self.children[&n].iter().rev().copied());
        }
        unreachable!("every node is reachable from the root")
    }

    /// Every node in pre-order.
    pub fn preorder(&self) -> Vec<NodeHandle> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack: Vec<_> = self.root.into_iter().collect();
        while let Some(n) = stack.pop() {
            out.push(n);
            stack.extend(self.children[&n].iter().rev().copied());
        }
        out
    }

    pub fn find_folder(&self, parent: NodeHandle, name: &str) -> Option<NodeHandle> {
        self.children.get(&parent)?.iter().copied().find(|c| {
            matches!(&self.nodes[c].payload, Payload::Folder(f) if f.name == name)
        })
    }

    /// Resolves `/A/B/C` by folder names, starting at the root folder `A`.
    pub fn resolve_path(&self, path: &str) -> Option<NodeHandle> {
        let mut parts = path.trim_start_matches('/').split('/').filter(|p| !p.is_empty());
        let root = self.root?;
        match (&self.nodes[&root].payload, parts.next()) {
            (Payload::Folder(f), Some(first)) if f.name == first => {}
            _ => return None,
        }
        parts.try_fold(root, |at, name| self.find_folder(at, name))
    }

    pub fn path_of(&self, h: NodeHandle) -> Result<String, StoreError> {
        let mut names = Vec::new();
        for n in self.ancestors(h)?.into_iter().rev() {
            match &self.nodes[&n].payload {
                Payload::Folder(f) => names.push(f.name.clone()),
                Payload::Document { doc } => names.push(format!("#{doc}")),
            }
        }
        Ok(format!("/{}", names.join("/")))
    }

    pub fn add_version(
        &mut self,
        id: DocId,
        author: UserId,
        digest: ContentDigest,
        seq: u64,
    ) -> Result<VersionRecord, StoreError> {
        let doc = self.document_mut(id)?;
        if doc.status == DocStatus::Archived {
            return Err(StoreError::ArchivedDocument(id));
        }
        let record = VersionRecord {
            version: doc.current().version + 1,
            author,
            digest,
            seq,
        };
        doc.versions.push(record.clone());
        Ok(record)
    }

    pub fn archive(&mut self, id: DocId, seq: u64) -> Result<(), StoreError> {
        let doc = self.document_mut(id)?;
        if doc.status == DocStatus::Archived {
            return Err(StoreError::ArchivedDocument(id));
        }
        doc.status = DocStatus::Archived;
        doc.profile.archived_seq = Some(seq);
        Ok(())
    }

    /// Linear scan with predicate filters. The class filter is subsumptive;
    /// `can_read` drops whatever the asking principal may not see.
    pub fn search(
        &self,
        q: &Query,
        classes: &Hierarchy,
        can_read: impl Fn(&Document) -> bool,
    ) -> Result<Vec<DocId>, StoreError> {
        let wanted = q.class.map(|c| classes.descendants(c)).transpose()?;
        let needle = q.title.as_ref().map(|t| t.to_lowercase());
        Ok(self
            .docs
            .values()
            .filter(|d| q.include_archived || d.status != DocStatus::Archived)
            .filter(|d| wanted.as_ref().is_none_or(|w| w.contains(&d.profile.class)))
            .filter(|d| {
                needle
                    .as_ref()
                    .is_none_or(|n| d.profile.title.to_lowercase().contains(n))
            })
            .filter(|d| q.author.is_none_or(|a| d.profile.author == a))
            .filter(|d| can_read(d))
            .map(|d| d.id)
            .collect())
    }

    /// Checks the structural invariants; returns a description of the first
    /// violation found.
    pub fn validate(&self) -> Result<(), String> {
        let Some(root) = self.root else {
            return if self.nodes.is_empty() && self.docs.is_empty() {
                Ok(())
            } else {
                Err("nodes without a root".into())
            };
        };
        let roots: Vec<_> = self
            .nodes
            .values()
            .filter(|n| n.parent == NodeHandle::SENTINEL)
            .collect();
        if roots.len() != 1 || roots[0].handle != root || roots[0].level != 1 {
            return Err("root malformed".into());
        }
        for n in self.nodes.values() {
            if n.handle.0 >= self.next_handle || n.handle == NodeHandle::SENTINEL {
                return Err(format!("handle {} out of range", n.handle));
            }
            if n.parent != NodeHandle::SENTINEL {
                let Some(p) = self.nodes.get(&n.parent) else {
                    return Err(format!("node {} has dangling parent {}", n.handle, n.parent));
                };
                if !p.is_folder() {
                    return Err(format!("node {} hangs under a document", n.handle));
                }
                if n.level != p.level + 1 {
                    return Err(format!("node {} has level {}", n.handle, n.level));
                }
                if !self.children[&n.parent].contains(&n.handle) {
                    return Err(format!("child index misses {}", n.handle));
                }
            }
        }
        if self.preorder().len() != self.nodes.len() {
            return Err("unreachable nodes".into());
        }
        for d in self.docs.values() {
            match self.nodes.get(&d.node).map(|n| &n.payload) {
                Some(Payload::Document { doc }) if *doc == d.id => {}
                _ => return Err(format!("document {} lost its node", d.id)),
            }
            let gap_free = d
                .versions
                .iter()
                .enumerate()
                .all(|(i, v)| v.version as usize == i + 1);
            if !gap_free || d.versions.is_empty() {
                return Err(format!("document {} has a broken version chain", d.id));
            }
        }
        Ok(())
    }

    /// Reassembles a store from persisted parts, checking the invariants.
    pub(crate) fn restore(
        nodes: Vec<TreeNode>,
        docs: Vec<Document>,
        next_handle: NodeHandle,
        next_doc: DocId,
    ) -> Result<Self, String> {
        let mut store = DocStore {
            next_handle: next_handle.0,
            next_doc: next_doc.0,
            ..DocStore::new()
        };
        for n in &nodes {
            store.children.insert(n.handle, BTreeSet::new());
        }
        for n in nodes {
            if n.parent == NodeHandle::SENTINEL {
                if store.root.replace(n.handle).is_some() {
                    return Err("two roots".into());
                }
            } else {
                store
                    .children
                    .get_mut(&n.parent)
                    .ok_or_else(|| format!("dangling parent {}", n.parent))?
                    .insert(n.handle);
            }
            store.nodes.insert(n.handle, n);
        }
        for d in docs {
            store.docs.insert(d.id, d);
        }
        store.validate()?;
        Ok(store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::HierarchyKind;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn folder(name: &str) -> Folder {
        Folder {
            name: name.to_string(),
            workgroups: BTreeSet::new(),
        }
    }

    fn profile(class: ClassId, stype: SecurityType, title: &str) -> DocumentProfile {
        DocumentProfile {
            title: title.to_string(),
            author: UserId(1),
            class,
            security_type: stype,
            label: Label::new(ClassId(1), stype, []),
            owning_workgroup: WorkgroupId(1),
            route: None,
            created_seq: 1,
            archived_seq: None,
        }
    }

    #[test]
    fn root_has_identifier_one_and_parent_zero() {
        let mut s = DocStore::new();
        let root = s.create_node(NodeHandle::SENTINEL, folder("Corp")).unwrap();
        let n = s.node(root).unwrap();
        assert_eq!(n.level, 1);
        assert_eq!(n.parent, NodeHandle(0));
        assert_eq!(s.preorder_index(root).unwrap(), 1);
        let child = s.create_node(root, folder("Finance")).unwrap();
        assert_eq!(s.node(child).unwrap().level, 2);
        assert_eq!(s.children(child).unwrap().count(), 0);
        assert_eq!(
            s.create_node(NodeHandle::SENTINEL, folder("Again")),
            Err(StoreError::RootExists)
        );
    }

    #[test]
    fn create_errors() {
        let mut s = DocStore::new();
        let root = s.create_node(NodeHandle::SENTINEL, folder("Corp")).unwrap();
        assert_eq!(
            s.create_node(NodeHandle(42), folder("x")),
            Err(StoreError::UnknownParent(NodeHandle(42)))
        );
        assert_eq!(
            s.create_node(root, folder("Corp2")).and_then(|_| s.create_node(root, folder("Corp2"))),
            Err(StoreError::DuplicateName("Corp2".into()))
        );
        let d = s
            .create_document(root, profile(ClassId(1), SecurityType::Public, "memo"), Acl::default(), ContentDigest::of(b"m"))
            .unwrap();
        let node = s.document(d).unwrap().node;
        assert_eq!(
            s.create_node(node, folder("inside")),
            Err(StoreError::ParentNotFolder(node))
        );
        let mut bad = profile(ClassId(1), SecurityType::Public, "x");
        bad.label.stype = SecurityType::Private;
        assert!(matches!(
            s.create_document(root, bad, Acl::default(), ContentDigest::of(b"")),
            Err(StoreError::BadProfile(_))
        ));
    }

    #[test]
    fn versions_are_gap_free_and_archive_freezes() {
        let mut s = DocStore::new();
        let root = s.create_node(NodeHandle::SENTINEL, folder("Corp")).unwrap();
        let d = s
            .create_document(root, profile(ClassId(1), SecurityType::Public, "memo"), Acl::default(), ContentDigest::of(b"v1"))
            .unwrap();
        assert_eq!(s.document(d).unwrap().current().version, 1);
        let v2 = s.add_version(d, UserId(2), ContentDigest::of(b"v2"), 5).unwrap();
        assert_eq!(v2.version, 2);
        assert_eq!(v2.blob_ref(), format!("blobs/{}", ContentDigest::of(b"v2")));
        s.archive(d, 6).unwrap();
        assert_eq!(
            s.add_version(d, UserId(2), ContentDigest::of(b"v3"), 7),
            Err(StoreError::ArchivedDocument(d))
        );
        assert_eq!(s.document(d).unwrap().versions.len(), 2);
        assert_eq!(s.document(d).unwrap().profile.archived_seq, Some(6));
    }

    #[test]
    fn search_uses_subsumption_and_hides_archived() {
        let mut classes = Hierarchy::new(HierarchyKind::DocumentClass);
        let protocol = classes.add_class("Protocol", classes.root()).unwrap();
        let board = classes.add_class("BoardOfDirectorsProtocol", protocol).unwrap();
        let contract = classes.add_class("Contract", classes.root()).unwrap();
        let mut s = DocStore::new();
        let root = s.create_node(NodeHandle::SENTINEL, folder("Corp")).unwrap();
        let mk = |s: &mut DocStore, c, t: &str| {
            s.create_document(root, profile(c, SecurityType::Public, t), Acl::default(), ContentDigest::of(t.as_bytes()))
                .unwrap()
        };
        let minutes = mk(&mut s, board, "Board minutes");
        let deal = mk(&mut s, contract, "Supply deal");
        let old = mk(&mut s, board, "Old minutes");
        s.archive(old, 9).unwrap();
        let q = Query {
            class: Some(protocol),
            ..Default::default()
        };
        assert_eq!(s.search(&q, &classes, |_| true).unwrap(), vec![minutes]);
        let all = Query {
            include_archived: true,
            ..Default::default()
        };
        assert_eq!(s.search(&all, &classes, |_| true).unwrap(), vec![minutes, deal, old]);
        let titled = Query {
            title: Some("MINUTES".into()),
            include_archived: true,
            ..Default::default()
        };
        assert_eq!(s.search(&titled, &classes, |_| true).unwrap(), vec![minutes, old]);
        assert_eq!(s.search(&Query::default(), &classes, |d| d.id != deal).unwrap(), vec![minutes]);
        let bogus = Query {
            class: Some(ClassId(99)),
            ..Default::default()
        };
        assert!(matches!(s.search(&bogus, &classes, |_| true), Err(StoreError::Class(_))));
    }

    #[test]
    fn paths_resolve() {
        let mut s = DocStore::new();
        let root = s.create_node(NodeHandle::SENTINEL, folder("Corp")).unwrap();
        let fin = s.create_node(root, folder("Finance")).unwrap();
        let acc = s.create_node(fin, folder("Accounting")).unwrap();
        assert_eq!(s.resolve_path("/Corp/Finance/Accounting"), Some(acc));
        assert_eq!(s.resolve_path("/Corp"), Some(root));
        assert_eq!(s.resolve_path("/Other"), None);
        assert_eq!(s.path_of(acc).unwrap(), "/Corp/Finance/Accounting");
        assert!(s.is_within(acc, fin).unwrap());
        assert!(!s.is_within(fin, acc).unwrap());
    }

    /// Independent recursive traversal.
    fn preorder_oracle(s: &DocStore, h: NodeHandle, out: &mut Vec<NodeHandle>) {
        out.push(h);
        let mut kids: Vec<_> = s.nodes().filter(|n| n.parent == h).map(|n| n.handle).collect();
        kids.sort();
        for k in kids {
            preorder_oracle(s, k, out);
        }
    }

    /// Independent DFS reachability over raw parent links.
    fn reach_oracle(s: &DocStore, h: NodeHandle) -> BTreeSet<NodeHandle> {
        let mut seen = BTreeSet::from([h]);
        loop {
            let more: Vec<_> = s
                .nodes()
                .filter(|n| !seen.contains(&n.handle) && seen.contains(&n.parent))
                .map(|n| n.handle)
                .collect();
            if more.is_empty() {
                return seen;
            }
            seen.extend(more);
        }
    }

    fn random_store(rng: &mut ChaCha8Rng, n: usize) -> DocStore {
        let mut s = DocStore::new();
        let mut folders = vec![s.create_node(NodeHandle::SENTINEL, folder("r")).unwrap()];
        for i in 1..n {
            let parent = folders[rng.gen_range(0..folders.len())];
            if rng.gen_bool(0.3) {
                s.create_document(
                    parent,
                    profile(ClassId(1), SecurityType::Public, &format!("d{i}")),
                    Acl::default(),
                    ContentDigest::of(&[i as u8]),
                )
                .unwrap();
            } else {
                folders.push(s.create_node(parent, folder(&format!("f{i}"))).unwrap());
            }
        }
        s
    }

    #[test]
    fn preorder_matches_recursive_traversal() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let s = random_store(&mut rng, 50);
            let mut expected = Vec::new();
            preorder_oracle(&s, s.root().unwrap(), &mut expected);
            assert_eq!(s.preorder(), expected);
            let mut indices: Vec<_> = s.nodes().map(|n| s.preorder_index(n.handle).unwrap()).collect();
            indices.sort();
            assert_eq!(indices, (1..=50).collect::<Vec<_>>());
            for (i, h) in expected.iter().enumerate() {
                assert_eq!(s.preorder_index(*h).unwrap(), i as u64 + 1);
            }
        }
    }

    #[test]
    fn cascade_delete_matches_reachability() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let mut s = random_store(&mut rng, 50);
            let handles: Vec<_> = s.nodes().map(|n| n.handle).collect();
            let victim = handles[rng.gen_range(1..handles.len())];
            let expected = reach_oracle(&s, victim);
            let before = s.len();
            let docs_before = s.documents_under(victim).unwrap();
            let removed = s.delete_node(victim).unwrap();
            assert_eq!(removed, expected);
            assert_eq!(s.len(), before - removed.len());
            assert!(docs_before.iter().all(|d| s.document(*d).is_err()));
            s.validate().unwrap();
        }
        let mut s = DocStore::new();
        let root = s.create_node(NodeHandle::SENTINEL, folder("r")).unwrap();
        let leaf = s.create_node(root, folder("leaf")).unwrap();
        assert_eq!(s.delete_node(leaf).unwrap(), BTreeSet::from([leaf]));
        assert_eq!(s.delete_node(leaf), Err(StoreError::UnknownHandle(leaf)));
        assert_eq!(s.preorder_index(leaf), Err(StoreError::UnknownHandle(leaf)));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn random_operation_sequences_keep_tree_well_formed(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut s = DocStore::new();
            let mut survivors: BTreeMap<NodeHandle, u32> = BTreeMap::new();
            for step in 0..500 {
                let live: Vec<_> = s.nodes().map(|n| n.handle).collect();
                if live.is_empty() {
                    let r = s.create_node(NodeHandle::SENTINEL, folder("root")).unwrap();
                    survivors.insert(r, 1);
                    continue;
                }
                let pick = live[rng.gen_range(0..live.len())];
                match rng.gen_range(0..10) {
                    0 => {
                        for h in s.delete_node(pick).unwrap() {
                            survivors.remove(&h);
                        }
                    }
                    1..=3 => {
                        let _ = s.create_document(
                            pick,
                            profile(ClassId(1), SecurityType::Public, "d"),
                            Acl::default(),
                            ContentDigest::of(b"d"),
                        );
                    }
                    _ => {
                        if let Ok(h) = s.create_node(pick, folder(&format!("f{step}"))) {
                            survivors.insert(h, s.node(h).unwrap().level);
                        }
                    }
                }
                prop_assert!(s.validate().is_ok(), "{:?}", s.validate());
            }
            // Handles of surviving nodes never change.
            for (h, level) in survivors {
                prop_assert_eq!(s.node(h).unwrap().level, level);
            }
        }
    }
}
