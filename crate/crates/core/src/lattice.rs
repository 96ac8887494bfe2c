//! The information-flow lattice.
//!
//! A label is the product of three orders: the access-level tree (a
//! subordinate level sits below its superior) completed with an explicit
//! bottom level, the security-type chain `Public < Private < Confidential`,
//! and workgroup sets ordered by inclusion. Information may only flow upward.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::isa::{ClassId, Hierarchy, HierarchyKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WorkgroupId(pub u64);

impl fmt::Display for WorkgroupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Declaration order is the flow order.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub enum SecurityType {
    Public,
    Private,
    Confidential,
}

impl SecurityType {
    pub const ALL: [SecurityType; 3] = [
        SecurityType::Public,
        SecurityType::Private,
        SecurityType::Confidential,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SecurityType::Public => "Public",
            SecurityType::Private => "Private",
            SecurityType::Confidential => "Confidential",
        }
    }
}

impl fmt::Display for SecurityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SecurityType {
    type Err = LatticeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SecurityType::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| LatticeError::MalformedLabel(format!("unknown security type `{s}`")))
    }
}

/// A point of the access-level order; `Bottom` is the adjoined "no access"
/// level that sits below every class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Level {
    Bottom,
    Class(ClassId),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Label {
    pub level: Level,
    pub stype: SecurityType,
    pub groups: BTreeSet<WorkgroupId>,
}

impl Label {
    pub fn new(level: ClassId, stype: SecurityType, groups: impl IntoIterator<Item = WorkgroupId>) -> Self {
        Label {
            level: Level::Class(level),
            stype,
            groups: groups.into_iter().collect(),
        }
    }

    /// The least label: no access level, Public, no workgroups.
    pub fn bottom() -> Self {
        Label {
            level: Level::Bottom,
            stype: SecurityType::Public,
            groups: BTreeSet::new(),
        }
    }

    pub fn is_bottom(&self) -> bool {
        *self == Self::bottom()
    }

    /// Renders as `level-name/stype/{g,...}`; workgroups fall back to their
    /// numeric id when `names` does not know them.
    pub fn render(&self, access: &Hierarchy, names: &BTreeMap<WorkgroupId, String>) -> String {
        let level = match self.level {
            Level::Bottom => "BOTTOM".to_string(),
            Level::Class(id) => access
                .name(id)
                .map_or_else(|_| format!("#{id}"), str::to_string),
        };
        let groups: Vec<String> = self
            .groups
            .iter()
            .map(|g| names.get(g).cloned().unwrap_or_else(|| g.to_string()))
            .collect();
        format!("{level}/{}/{{{}}}", self.stype, groups.join(","))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LatticeError {
    #[error("malformed label: {0}")]
    MalformedLabel(String),
}

/// The set of workgroups labels may mention.
pub trait WorkgroupUniverse {
    fn contains_group(&self, id: WorkgroupId) -> bool;
}

impl WorkgroupUniverse for BTreeSet<WorkgroupId> {
    fn contains_group(&self, id: WorkgroupId) -> bool {
        self.contains(&id)
    }
}

impl<V> WorkgroupUniverse for BTreeMap<WorkgroupId, V> {
    fn contains_group(&self, id: WorkgroupId) -> bool {
        self.contains_key(&id)
    }
}

/// Lattice operations over a snapshot of the access-level hierarchy.
#[derive(Clone, Copy)]
pub struct FlowLattice<'a> {
    access: &'a Hierarchy,
    workgroups: &'a dyn WorkgroupUniverse,
}

impl fmt::Debug for FlowLattice<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FlowLattice")
            .field("levels", &self.access.len())
            .finish_non_exhaustive()
    }
}

impl<'a> FlowLattice<'a> {
    pub fn new(access: &'a Hierarchy, workgroups: &'a dyn WorkgroupUniverse) -> Self {
        debug_assert_eq!(access.kind(), HierarchyKind::AccessLevel);
        FlowLattice { access, workgroups }
    }

    pub fn access(&self) -> &'a Hierarchy {
        self.access
    }

    pub fn check(&self, l: &Label) -> Result<(), LatticeError> {
        if let Level::Class(id) = l.level {
            if !self.access.contains(id) {
                return Err(LatticeError::MalformedLabel(format!("unknown access level {id}")));
            }
        }
        if let Some(g) = l.groups.iter().find(|g| !self.workgroups.contains_group(**g)) {
            return Err(LatticeError::MalformedLabel(format!("unknown workgroup {g}")));
        }
        Ok(())
    }

    fn level_leq(&self, a: Level, b: Level) -> bool {
        match (a, b) {
            (Level::Bottom, _) => true,
            (Level::Class(_), Level::Bottom) => false,
            (Level::Class(x), Level::Class(y)) => {
                self.access.is_subtype(x, y).expect("levels validated")
            }
        }
    }

    pub fn leq(&self, a: &Label, b: &Label) -> Result<bool, LatticeError> {
        self.check(a)?;
        self.check(b)?;
        Ok(self.level_leq(a.level, b.level) && a.stype <= b.stype && a.groups.is_subset(&b.groups))
    }

    pub fn join(&self, a: &Label, b: &Label) -> Result<Label, LatticeError> {
        self.check(a)?;
        self.check(b)?;
        let level = match (a.level, b.level) {
            (Level::Bottom, l) | (l, Level::Bottom) => l,
            (Level::Class(x), Level::Class(y)) => Level::Class(
                self.access
                    .least_common_ancestor(x, y)
                    .expect("levels validated"),
            ),
        };
        Ok(Label {
            level,
            stype: a.stype.max(b.stype),
            groups: a.groups.union(&b.groups).copied().collect(),
        })
    }

    pub fn meet(&self, a: &Label, b: &Label) -> Result<Label, LatticeError> {
        self.check(a)?;
        self.check(b)?;
        // In a tree, two incomparable levels share no lower bound except Bottom.
        let level = if self.level_leq(a.level, b.level) {
            a.level
        } else if self.level_leq(b.level, a.level) {
            b.level
        } else {
            Level::Bottom
        };
        Ok(Label {
            level,
            stype: a.stype.min(b.stype),
            groups: a.groups.intersection(&b.groups).copied().collect(),
        })
    }

    pub fn can_flow(&self, from: &Label, to: &Label) -> Result<bool, LatticeError> {
        self.leq(from, to)
    }

    /// Every label over the hierarchy and the given workgroups, Bottom level
    /// included. Exponential in the number of workgroups; meant for tests
    /// and small audits.
    pub fn enumerate(&self, groups: &[WorkgroupId]) -> Vec<Label> {
        let levels = std::iter::once(Level::Bottom)
            .chain(self.access.ids().map(Level::Class))
            .collect::<Vec<_>>();
        let subsets = (0u32..1 << groups.len())
            .map(|mask| {
                groups
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| mask & (1 << i) != 0)
                    .map(|(_, g)| *g)
                    .collect::<BTreeSet<_>>()
            })
            .collect::<Vec<_>>();
        let mut out = Vec::with_capacity(levels.len() * 3 * subsets.len());
        for &level in &levels {
            for stype in SecurityType::ALL {
                for groups in &subsets {
                    out.push(Label {
                        level,
                        stype,
                        groups: groups.clone(),
                    });
                }
            }
        }
        out
    }
}
