//! Hybrid document routing.
//!
//! A route is either an explicit list of steps, each naming who must act and
//! how, or a spectrum: a sequence of stages that only constrain which roles
//! inside which subtree may handle the document and how many times. Within a
//! spectrum stage every handling counts as a visit; the stage is left when a
//! candidate forwards (`Route`) after the minimum number of visits, and the
//! last stage closes with the route's terminal action.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::access::{Action, Decision, DenyReason, PolicyContext, Target, User, UserId};
use crate::isa::{ClassId, Hierarchy};
use crate::lattice::Level;
use crate::store::{DocId, NodeHandle};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RouteId(pub u64);

impl fmt::Display for RouteId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Who may take an explicit step. Every present criterion must hold.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selector {
    pub role: Option<ClassId>,
    /// Access level the user's clearance must sit at or below.
    pub level: Option<ClassId>,
    pub user: Option<UserId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub selector: Selector,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage {
    pub role: ClassId,
    pub scope: NodeHandle,
    pub min_visits: u32,
    pub max_visits: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RouteBody {
    Explicit { steps: Vec<Step> },
    Spectrum { stages: Vec<Stage>, terminal: Action },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouteSpec {
    pub id: RouteId,
    pub name: String,
    pub applies_to: ClassId,
    pub body: RouteBody,
}

impl RouteSpec {
    /// The action that completes the route.
    pub fn terminal_action(&self) -> Action {
        match &self.body {
            RouteBody::Explicit { steps } => steps.last().map_or(Action::Route, |s| s.action),
            RouteBody::Spectrum { terminal, .. } => *terminal,
        }
    }

    fn positions(&self) -> usize {
        match &self.body {
            RouteBody::Explicit { steps } => steps.len(),
            RouteBody::Spectrum { stages, .. } => stages.len(),
        }
    }

    pub fn validate(&self, requires_signature: bool) -> Result<(), RouteError> {
        let invalid = |m: String| Err(RouteError::InvalidSpec(m));
        match &self.body {
            RouteBody::Explicit { steps } if steps.is_empty() => {
                return invalid("an explicit route needs at least one step".into())
            }
            RouteBody::Explicit { steps } => {
                if let Some(i) = steps.iter().position(|s| {
                    s.selector.role.is_none() && s.selector.user.is_none() && s.selector.level.is_none()
                }) {
                    return invalid(format!("step {} selects nobody", i + 1));
                }
            }
            RouteBody::Spectrum { stages, .. } => {
                if stages.is_empty() {
                    return invalid("a spectrum route needs at least one stage".into());
                }
                for (i, s) in stages.iter().enumerate() {
                    if s.min_visits > s.max_visits || s.max_visits == 0 {
                        return invalid(format!(
                            "stage {} has visits {}..{}",
                            i + 1,
                            s.min_visits,
                            s.max_visits
                        ));
                    }
                }
            }
        }
        if requires_signature && self.terminal_action() != Action::Sign {
            return invalid(format!("route `{}` must end with Sign", self.name));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RouteStatus {
    Active,
    Completed,
    Rejected,
}

impl RouteStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RouteStatus::Active => "Active",
            RouteStatus::Completed => "Completed",
            RouteStatus::Rejected => "Rejected",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Entry {
    Act { action: Action },
    Reject { reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub user: UserId,
    #[serde(flatten)]
    pub entry: Entry,
    /// Logical timestamp: the event-log sequence number.
    pub seq: u64,
}

impl HistoryEntry {
    pub fn action(&self) -> Option<Action> {
        match self.entry {
            Entry::Act { action } => Some(action),
            Entry::Reject { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouteState {
    pub doc: DocId,
    pub route: RouteId,
    pub cursor: usize,
    /// Visits per spectrum stage; empty for explicit routes.
    pub visits: Vec<u32>,
    pub history: Vec<HistoryEntry>,
    pub status: RouteStatus,
}

impl RouteState {
    pub fn start(doc: DocId, spec: &RouteSpec) -> Self {
        let visits = match &spec.body {
            RouteBody::Explicit { .. } => Vec::new(),
            RouteBody::Spectrum { stages, .. } => vec![0; stages.len()],
        };
        RouteState {
            doc,
            route: spec.id,
            cursor: 0,
            visits,
            history: Vec::new(),
            status: RouteStatus::Active,
        }
    }

    pub fn signed(&self) -> bool {
        self.history.iter().any(|h| h.action() == Some(Action::Sign))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub user: UserId,
    pub name: String,
    pub decision: Decision,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepDecision {
    pub doc: DocId,
    pub route: RouteId,
    pub cursor: usize,
    pub required_action: Action,
    pub candidates: Vec<Candidate>,
}

impl StepDecision {
    pub fn includes(&self, user: UserId) -> bool {
        self.candidates.iter().any(|c| c.user == user)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RouteError {
    #[error("no route registered for the Other document class")]
    NoRouteRegistry,
    #[error("the route has no further steps")]
    RouteExhausted,
    #[error("user is not a candidate for the current step")]
    NotACandidate,
    #[error("policy violation: {0}")]
    PolicyViolation(DenyReason),
    #[error("action {got} does not fit the current step (expected {expected})")]
    WrongAction { expected: Action, got: Action },
    #[error("invalid route: {0}")]
    InvalidSpec(String),
    #[error("route text line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unknown document {0}")]
    UnknownTarget(DocId),
}

/// Picks the route whose class is the nearest ancestor-or-self of
/// `doc_class`, falling back to the route registered for `Other`. Unknown
/// classes land on the `Other` route too.
pub fn route_for<'r>(
    doc_class: ClassId,
    registry: &'r BTreeMap<RouteId, RouteSpec>,
    classes: &Hierarchy,
) -> Result<&'r RouteSpec, RouteError> {
    let by_class = |c: ClassId| registry.values().find(|r| r.applies_to == c);
    let fallback = by_class(classes.other()).ok_or(RouteError::NoRouteRegistry)?;
    let chain = classes.ancestors(doc_class).unwrap_or_default();
    Ok(chain.into_iter().find_map(by_class).unwrap_or(fallback))
}

type Picker<'a> = Box<dyn Fn(&User) -> bool + 'a>;

/// Everything routing needs to resolve candidates and check policy.
pub struct Router<'a> {
    pub policy: &'a PolicyContext<'a>,
    pub users: &'a BTreeMap<UserId, User>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Preview {
    pub step: Result<StepDecision, RouteError>,
    pub outcome: Result<RouteState, RouteError>,
}

impl<'a> Router<'a> {
    fn matches(&self, sel: &Selector, u: &User) -> bool {
        let roles = self.policy.roles;
        let levels = self.policy.lattice.access();
        sel.user.is_none_or(|id| id == u.id)
            && sel
                .role
                .is_none_or(|r| roles.is_subtype(u.role, r).unwrap_or(false))
            && sel.level.is_none_or(|l| match u.clearance.level {
                Level::Class(c) => levels.is_subtype(c, l).unwrap_or(false),
                Level::Bottom => false,
            })
    }

    fn in_stage(&self, stage: &Stage, u: &User) -> bool {
        self.policy
            .roles
            .is_subtype(u.role, stage.role)
            .unwrap_or(false)
            && u
                .home
                .is_some_and(|h| self.policy.store.is_within(h, stage.scope).unwrap_or(false))
    }

    pub fn next_candidates(&self, rs: &RouteState, spec: &RouteSpec) -> Result<StepDecision, RouteError> {
        if rs.status != RouteStatus::Active || rs.cursor >= spec.positions() {
            return Err(RouteError::RouteExhausted);
        }
        let (required, pick): (Action, Picker<'_>) = match &spec.body {
            RouteBody::Explicit { steps } => {
                let step = &steps[rs.cursor];
                (step.action, Box::new(move |u| self.matches(&step.selector, u)))
            }
            RouteBody::Spectrum { stages, terminal } => {
                let stage = &stages[rs.cursor];
                let required = if rs.cursor + 1 == stages.len() { *terminal } else { Action::Route };
                (required, Box::new(move |u| self.in_stage(stage, u)))
            }
        };
        let mut candidates = Vec::new();
        for u in self.users.values().filter(|u| pick(u)) {
            let decision = self
                .policy
                .check_access(u, Target::Document(rs.doc), required)
                .map_err(|_| RouteError::UnknownTarget(rs.doc))?;
            candidates.push(Candidate {
                user: u.id,
                name: u.name.clone(),
                decision,
            });
        }
        Ok(StepDecision {
            doc: rs.doc,
            route: rs.route,
            cursor: rs.cursor,
            required_action: required,
            candidates,
        })
    }

    /// Checks the actor against policy and the flow lattice, then against the
    /// current step.
    pub fn advance(
        &self,
        rs: &RouteState,
        spec: &RouteSpec,
        actor: &User,
        action: Action,
        seq: u64,
    ) -> Result<RouteState, RouteError> {
        if rs.status != RouteStatus::Active || rs.cursor >= spec.positions() {
            return Err(RouteError::RouteExhausted);
        }
        let doc = self
            .policy
            .store
            .document(rs.doc)
            .map_err(|_| RouteError::UnknownTarget(rs.doc))?;
        match self.policy.check_access(actor, Target::Document(rs.doc), action) {
            Ok(Decision::Allow) => {}
            Ok(Decision::Deny(r)) => return Err(RouteError::PolicyViolation(r)),
            Err(_) => return Err(RouteError::UnknownTarget(rs.doc)),
        }
        if !self
            .policy
            .lattice
            .can_flow(&doc.profile.label, &actor.clearance)
            .unwrap_or(false)
        {
            return Err(RouteError::PolicyViolation(DenyReason::FlowViolation));
        }
        let step = self.next_candidates(rs, spec)?;
        if !step.includes(actor.id) {
            return Err(RouteError::NotACandidate);
        }

        let mut next = rs.clone();
        let wrong = Err(RouteError::WrongAction {
            expected: step.required_action,
            got: action,
        });
        match &spec.body {
            RouteBody::Explicit { steps } => {
                if action != steps[rs.cursor].action {
                    return wrong;
                }
                next.cursor += 1;
                if next.cursor == steps.len() {
                    next.status = RouteStatus::Completed;
                }
            }
            RouteBody::Spectrum { stages, terminal } => {
                let stage = &stages[rs.cursor];
                let visits = rs.visits[rs.cursor] + 1;
                let last = rs.cursor + 1 == stages.len();
                if visits > stage.max_visits {
                    return wrong;
                }
                if last && action == *terminal {
                    if visits < stage.min_visits {
                        return wrong;
                    }
                    next.status = RouteStatus::Completed;
                } else if !last && action == Action::Route {
                    if visits < stage.min_visits {
                        return wrong;
                    }
                    next.cursor += 1;
                } else if matches!(action, Action::Read | Action::Modify) {
                    // A working visit must leave room for the forwarding one.
                    if visits >= stage.max_visits {
                        return wrong;
                    }
                } else {
                    return wrong;
                }
                next.visits[rs.cursor] = visits;
            }
        }
        next.history.push(HistoryEntry {
            user: actor.id,
            entry: Entry::Act { action },
            seq,
        });
        Ok(next)
    }

    pub fn reject(
        &self,
        rs: &RouteState,
        spec: &RouteSpec,
        actor: &User,
        reason: &str,
        seq: u64,
    ) -> Result<RouteState, RouteError> {
        let step = self.next_candidates(rs, spec)?;
        if !step.includes(actor.id) {
            return Err(RouteError::NotACandidate);
        }
        let mut next = rs.clone();
        next.status = RouteStatus::Rejected;
        next.history.push(HistoryEntry {
            user: actor.id,
            entry: Entry::Reject {
                reason: reason.to_string(),
            },
            seq,
        });
        Ok(next)
    }

    /// What `advance` would do, without touching `rs`.
    pub fn preview(&self, rs: &RouteState, spec: &RouteSpec, actor: &User, action: Action, seq: u64) -> Preview {
        Preview {
            step: self.next_candidates(rs, spec),
            outcome: self.advance(rs, spec, actor, action, seq),
        }
    }
}

// ---------------------------------------------------------------------------
// Text form

/// Parsed route text with names still unresolved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RouteText {
    pub name: String,
    pub applies: String,
    pub body: TextBody,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TextBody {
    Explicit(Vec<TextStep>),
    Spectrum { stages: Vec<TextStage>, terminal: Action },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextStep {
    pub role: Option<String>,
    pub level: Option<String>,
    pub user: Option<String>,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextStage {
    pub role: String,
    pub scope: u64,
    pub min: u32,
    pub max: u32,
}

fn key_values(line: usize, text: &str) -> Result<BTreeMap<&str, &str>, RouteError> {
    let mut out = BTreeMap::new();
    for tok in text.split_whitespace() {
        let (k, v) = tok.split_once('=').ok_or_else(|| RouteError::Parse {
            line,
            message: format!("expected key=value, got `{tok}`"),
        })?;
        if out.insert(k, v).is_some() {
            return Err(RouteError::Parse {
                line,
                message: format!("duplicate key `{k}`"),
            });
        }
    }
    Ok(out)
}

impl RouteText {
    /// Parses
    ///
    /// ```text
    /// route <name> applies=<class>
    /// step 1: role=<role> [level=<level>] [user=<user>] action=<action>
    /// stage 1: role=<role> scope=<node-handle> visits=<min>..<max>
    /// terminal: action=<action>
    /// ```
    ///
    /// Step and stage lines are numbered from 1 and may not be mixed.
    pub fn parse(text: &str) -> Result<Self, RouteError> {
        let mut header = None;
        let mut steps = Vec::new();
        let mut stages = Vec::new();
        let mut terminal = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let err = |message: String| RouteError::Parse { line, message };
            let t = raw.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            if let Some(rest) = t.strip_prefix("route ") {
                if header.is_some() {
                    return Err(err("second route header".into()));
                }
                let mut parts = rest.split_whitespace();
                let name = parts.next().ok_or_else(|| err("route name missing".into()))?;
                let tail = parts.collect::<Vec<_>>().join(" ");
                let kv = key_values(line, &tail)?;
                let applies = kv.get("applies").ok_or_else(|| err("applies=<class> missing".into()))?;
                header = Some((name.to_string(), applies.to_string()));
                continue;
            }
            let (head, rest) = t.split_once(':').ok_or_else(|| err(format!("cannot parse `{t}`")))?;
            let kv = key_values(line, rest)?;
            let action = |kv: &BTreeMap<&str, &str>| -> Result<Action, RouteError> {
                let a = kv.get("action").ok_or_else(|| err("action=<name> missing".into()))?;
                a.parse().map_err(|e: crate::access::UnknownAction| err(e.to_string()))
            };
            let mut words = head.split_whitespace();
            match (words.next(), words.next(), words.next()) {
                (Some("step"), Some(n), None) => {
                    expect_number(line, n, steps.len() + 1)?;
                    let allowed = ["role", "level", "user", "action"];
                    reject_unknown_keys(line, &kv, &allowed)?;
                    steps.push(TextStep {
                        role: kv.get("role").map(|s| s.to_string()),
                        level: kv.get("level").map(|s| s.to_string()),
                        user: kv.get("user").map(|s| s.to_string()),
                        action: action(&kv)?,
                    });
                }
                (Some("stage"), Some(n), None) => {
                    expect_number(line, n, stages.len() + 1)?;
                    reject_unknown_keys(line, &kv, &["role", "scope", "visits"])?;
                    let role = kv.get("role").ok_or_else(|| err("role=<name> missing".into()))?;
                    let scope = kv
                        .get("scope")
                        .ok_or_else(|| err("scope=<node-handle> missing".into()))?
                        .parse::<u64>()
                        .map_err(|e| err(format!("bad scope: {e}")))?;
                    let visits = kv.get("visits").ok_or_else(|| err("visits=<min>..<max> missing".into()))?;
                    let (lo, hi) = visits
                        .split_once("..")
                        .ok_or_else(|| err(format!("bad visits `{visits}`")))?;
                    let num = |s: &str| s.parse::<u32>().map_err(|e| err(format!("bad visits `{visits}`: {e}")));
                    stages.push(TextStage {
                        role: role.to_string(),
                        scope,
                        min: num(lo)?,
                        max: num(hi)?,
                    });
                }
                (Some("terminal"), None, None) => {
                    reject_unknown_keys(line, &kv, &["action"])?;
                    if terminal.replace(action(&kv)?).is_some() {
                        return Err(err("second terminal line".into()));
                    }
                }
                _ => return Err(err(format!("unknown line `{t}`"))),
            }
        }
        let (name, applies) = header.ok_or(RouteError::Parse {
            line: 0,
            message: "missing `route <name> applies=<class>` header".into(),
        })?;
        let body = match (steps.is_empty(), stages.is_empty(), terminal) {
            (false, true, None) => TextBody::Explicit(steps),
            (true, false, Some(terminal)) => TextBody::Spectrum { stages, terminal },
            (true, false, None) => {
                return Err(RouteError::Parse {
                    line: 0,
                    message: "spectrum route needs a terminal line".into(),
                })
            }
            (false, false, _) => {
                return Err(RouteError::Parse {
                    line: 0,
                    message: "steps and stages cannot be mixed".into(),
                })
            }
            (false, true, Some(_)) => {
                return Err(RouteError::Parse {
                    line: 0,
                    message: "explicit routes end with their last step; drop the terminal line".into(),
                })
            }
            (true, true, _) => {
                return Err(RouteError::InvalidSpec("route has no steps or stages".into()))
            }
        };
        Ok(RouteText { name, applies, body })
    }

    pub fn render(&self) -> String {
        let mut out = format!("route {} applies={}\n", self.name, self.applies);
        match &self.body {
            TextBody::Explicit(steps) => {
                for (i, s) in steps.iter().enumerate() {
                    out.push_str(&format!("step {}:", i + 1));
                    for (k, v) in [("role", &s.role), ("level", &s.level), ("user", &s.user)] {
                        if let Some(v) = v {
                            out.push_str(&format!(" {k}={v}"));
                        }
                    }
                    out.push_str(&format!(" action={}\n", s.action));
                }
            }
            TextBody::Spectrum { stages, terminal } => {
                for (i, s) in stages.iter().enumerate() {
                    out.push_str(&format!(
                        "stage {}: role={} scope={} visits={}..{}\n",
                        i + 1,
                        s.role,
                        s.scope,
                        s.min,
                        s.max
                    ));
                }
                out.push_str(&format!("terminal: action={terminal}\n"));
            }
        }
        out
    }

    /// Resolves names against the live hierarchies and user registry.
    pub fn resolve(&self, id: RouteId, names: &Names<'_>) -> Result<RouteSpec, RouteError> {
        let bad = |e: String| RouteError::InvalidSpec(e);
        let applies_to = names.classes.lookup(&self.applies).map_err(|e| bad(e.to_string()))?;
        let role = |n: &str| names.roles.lookup(n).map_err(|e| bad(e.to_string()));
        let body = match &self.body {
            TextBody::Explicit(steps) => RouteBody::Explicit {
                steps: steps
                    .iter()
                    .map(|s| {
                        Ok(Step {
                            selector: Selector {
                                role: s.role.as_deref().map(role).transpose()?,
                                level: s
                                    .level
                                    .as_deref()
                                    .map(|l| names.access.lookup(l).map_err(|e| bad(e.to_string())))
                                    .transpose()?,
                                user: s
                                    .user
                                    .as_deref()
                                    .map(|u| names.user(u).ok_or_else(|| bad(format!("no user named `{u}`"))))
                                    .transpose()?,
                            },
                            action: s.action,
                        })
                    })
                    .collect::<Result<_, RouteError>>()?,
            },
            TextBody::Spectrum { stages, terminal } => RouteBody::Spectrum {
                stages: stages
                    .iter()
                    .map(|s| {
                        Ok(Stage {
                            role: role(&s.role)?,
                            scope: NodeHandle(s.scope),
                            min_visits: s.min,
                            max_visits: s.max,
                        })
                    })
                    .collect::<Result<_, RouteError>>()?,
                terminal: *terminal,
            },
        };
        Ok(RouteSpec {
            id,
            name: self.name.clone(),
            applies_to,
            body,
        })
    }

    /// Inverse of [`RouteText::resolve`].
    pub fn from_spec(spec: &RouteSpec, names: &Names<'_>) -> Self {
        let class = |h: &Hierarchy, c: ClassId| h.name(c).map_or_else(|_| format!("#{c}"), str::to_string);
        let body = match &spec.body {
            RouteBody::Explicit { steps } => TextBody::Explicit(
                steps
                    .iter()
                    .map(|s| TextStep {
                        role: s.selector.role.map(|r| class(names.roles, r)),
                        level: s.selector.level.map(|l| class(names.access, l)),
                        user: s
                            .selector
                            .user
                            .map(|u| names.users.get(&u).map_or_else(|| format!("#{u}"), |u| u.name.clone())),
                        action: s.action,
                    })
                    .collect(),
            ),
            RouteBody::Spectrum { stages, terminal } => TextBody::Spectrum {
                stages: stages
                    .iter()
                    .map(|s| TextStage {
                        role: class(names.roles, s.role),
                        scope: s.scope.0,
                        min: s.min_visits,
                        max: s.max_visits,
                    })
                    .collect(),
                terminal: *terminal,
            },
        };
        RouteText {
            name: spec.name.clone(),
            applies: class(names.classes, spec.applies_to),
            body,
        }
    }
}

fn expect_number(line: usize, got: &str, want: usize) -> Result<(), RouteError> {
    match got.parse::<usize>() {
        Ok(n) if n == want => Ok(()),
        _ => Err(RouteError::Parse {
            line,
            message: format!("expected number {want}, got `{got}`"),
        }),
    }
}

fn reject_unknown_keys(line: usize, kv: &BTreeMap<&str, &str>, allowed: &[&str]) -> Result<(), RouteError> {
    match kv.keys().find(|k| !allowed.contains(k)) {
        Some(k) => Err(RouteError::Parse {
            line,
            message: format!("unknown key `{k}`"),
        }),
        None => Ok(()),
    }
}

/// Name lookups for the route text form.
pub struct Names<'a> {
    pub classes: &'a Hierarchy,
    pub roles: &'a Hierarchy,
    pub access: &'a Hierarchy,
    pub users: &'a BTreeMap<UserId, User>,
}

impl Names<'_> {
    pub fn user(&self, name: &str) -> Option<UserId> {
        self.users.values().find(|u| u.name == name).map(|u| u.id)
    }
}
