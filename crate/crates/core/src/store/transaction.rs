//! Transactions: checking, id assignment and the resulting commit record.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt;
use std::sync::Arc;

use chrono::{DateTime, Utc};

use crate::acl::{Permission, Principal, Ruleset};
use crate::datamodel::{self, Entity, EntityId, EntityView, Issue, IssueKind, ValidationReport};
use crate::UnitRegistry;

use super::snapshot::Snapshot;

#[derive(Debug, Clone, PartialEq)]
pub enum Instruction {
    /// Draft with a temporary (negative) id.
    Insert(Entity),
    /// Whole replacement of a stored entity.
    Update(Entity),
    Delete(EntityId),
}

impl Instruction {
    pub fn target(&self) -> EntityId {
        match self {
            Instruction::Insert(e) | Instruction::Update(e) => e.id,
            Instruction::Delete(id) => *id,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transaction {
    pub instructions: Vec<Instruction>,
    pub principal: Principal,
}

impl Transaction {
    pub fn new(principal: Principal) -> Self {
        Transaction {
            instructions: Vec::new(),
            principal,
        }
    }

    pub fn insert(mut self, draft: Entity) -> Self {
        self.instructions.push(Instruction::Insert(draft));
        self
    }

    pub fn update(mut self, entity: Entity) -> Self {
        self.instructions.push(Instruction::Update(entity));
        self
    }

    pub fn delete(mut self, id: EntityId) -> Self {
        self.instructions.push(Instruction::Delete(id));
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Rejection {
    /// The report carries at least one error.
    Invalid,
    Forbidden {
        permission: Permission,
        target: Option<EntityId>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Committed { log_seq: u64 },
    Rejected(Rejection),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransactionResult {
    pub outcome: Outcome,
    /// Temporary id to assigned id; empty unless committed.
    pub id_map: BTreeMap<EntityId, EntityId>,
    pub report: ValidationReport,
}

impl TransactionResult {
    pub fn is_committed(&self) -> bool {
        matches!(self.outcome, Outcome::Committed { .. })
    }

    pub fn log_seq(&self) -> Option<u64> {
        match self.outcome {
            Outcome::Committed { log_seq } => Some(log_seq),
            Outcome::Rejected(_) => None,
        }
    }

    fn rejected(rejection: Rejection, report: ValidationReport) -> Self {
        TransactionResult {
            outcome: Outcome::Rejected(rejection),
            id_map: BTreeMap::new(),
            report,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChangeOp {
    Insert,
    Update,
    Delete,
}

impl ChangeOp {
    pub fn as_str(self) -> &'static str {
        match self {
            ChangeOp::Insert => "insert",
            ChangeOp::Update => "update",
            ChangeOp::Delete => "delete",
        }
    }
}

impl fmt::Display for ChangeOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ChangeOp {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "insert" => Ok(ChangeOp::Insert),
            "update" => Ok(ChangeOp::Update),
            "delete" => Ok(ChangeOp::Delete),
            _ => Err(format!("unknown change `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Change {
    pub op: ChangeOp,
    pub id: EntityId,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogEntry {
    pub seq: u64,
    pub timestamp: DateTime<Utc>,
    pub principal: String,
    pub changes: Vec<Change>,
}

/// One applied change inside a commit record.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Applied {
    Put(ChangeOp, Arc<Entity>),
    Delete(EntityId, String),
}

/// Everything needed to replay a commit without re-checking it.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct CommitRecord {
    pub seq: u64,
    pub timestamp: DateTime<Utc>,
    pub principal: String,
    pub next_id: i64,
    pub changes: Vec<Applied>,
}

impl CommitRecord {
    pub fn apply(&self, snapshot: &mut Snapshot) {
        for change in &self.changes {
            match change {
                Applied::Put(_, e) => {
                    snapshot.put(e.clone());
                }
                Applied::Delete(id, _) => {
                    snapshot.remove(*id);
                }
            }
        }
        snapshot.set_position(self.seq, self.next_id);
    }

    pub fn log_entry(&self) -> LogEntry {
        LogEntry {
            seq: self.seq,
            timestamp: self.timestamp,
            principal: self.principal.clone(),
            changes: self
                .changes
                .iter()
                .map(|c| match c {
                    Applied::Put(op, e) => Change {
                        op: *op,
                        id: e.id,
                        name: e.name.clone(),
                    },
                    Applied::Delete(id, name) => Change {
                        op: ChangeOp::Delete,
                        id: *id,
                        name: name.clone(),
                    },
                })
                .collect(),
        }
    }
}

pub(crate) enum Prepared {
    Commit {
        next: Snapshot,
        record: CommitRecord,
        result: TransactionResult,
    },
    Reject(TransactionResult),
}

fn issue(entity: EntityId, subject: impl Into<String>, kind: IssueKind, message: impl Into<String>) -> Issue {
    Issue::new(entity, subject, kind, message)
}

/// Checks `tx` against `base` and builds the state it would commit.
pub(crate) fn prepare(
    base: &Snapshot,
    tx: Transaction,
    ruleset: &Ruleset,
    units: &UnitRegistry,
    now: DateTime<Utc>,
) -> Prepared {
    let principal = tx.principal;
    for ins in &tx.instructions {
        let (permission, target) = match ins {
            Instruction::Insert(_) => (Permission::Insert, None),
            Instruction::Update(e) => (Permission::Update, Some(e.id)),
            Instruction::Delete(id) => (Permission::Delete, Some(*id)),
        };
        if !ruleset.allows(&principal, permission, target) {
            return Prepared::Reject(TransactionResult::rejected(
                Rejection::Forbidden { permission, target },
                ValidationReport::default(),
            ));
        }
    }

    let mut report = ValidationReport::default();
    let mut seen = HashSet::new();
    let mut id_map = BTreeMap::new();
    let mut next_id = base.next_id();
    for ins in &tx.instructions {
        let target = ins.target();
        if !seen.insert(target) {
            report.error(issue(target, target.to_string(), IssueKind::Conflict, format!("id {target} appears in more than one instruction")));
            continue;
        }
        match ins {
            Instruction::Insert(e) => {
                if !e.id.is_temporary() {
                    report.error(issue(e.id, &e.name, IssueKind::Structure, "inserted entities need a temporary (negative) id"));
                    continue;
                }
                let assigned = EntityId::new(next_id).expect("ids stay positive");
                next_id += 1;
                id_map.insert(e.id, assigned);
            }
            Instruction::Update(_) | Instruction::Delete(_) => match base.get(target) {
                None => report.error(issue(target, target.to_string(), IssueKind::Dangling, format!("entity {target} does not exist"))),
                Some(old) => {
                    if let Instruction::Update(e) = ins {
                        if e.kind != old.kind {
                            report.error(issue(target, &e.name, IssueKind::Structure, format!("kind cannot change from {} to {}", old.kind, e.kind)));
                        }
                    }
                }
            },
        }
    }
    if !report.is_valid() {
        return Prepared::Reject(TransactionResult::rejected(Rejection::Invalid, report));
    }

    let remap = |id: EntityId| if id.is_temporary() { id_map.get(&id).copied().unwrap_or(id) } else { id };
    let mut drafts: Vec<(ChangeOp, Entity)> = Vec::new();
    let mut deletes = Vec::new();
    for ins in tx.instructions {
        match ins {
            Instruction::Insert(mut e) => {
                e.remap_ids(remap);
                drafts.push((ChangeOp::Insert, e));
            }
            Instruction::Update(mut e) => {
                e.remap_ids(remap);
                drafts.push((ChangeOp::Update, e));
            }
            Instruction::Delete(id) => deletes.push(id),
        }
    }

    // defaults fill triples supplied with Null
    let by_id: HashMap<EntityId, usize> = drafts.iter().enumerate().map(|(i, (_, e))| (e.id, i)).collect();
    let defaults: Vec<Vec<(usize, crate::Value)>> = drafts
        .iter()
        .map(|(_, e)| {
            e.properties
                .iter()
                .enumerate()
                .filter(|(_, p)| p.value.is_none())
                .filter_map(|(i, p)| {
                    let prop = match by_id.get(&p.property) {
                        Some(&j) => Some(&drafts[j].1),
                        None => base.get(p.property).map(Arc::as_ref),
                    }?;
                    let default = prop.datatype.as_ref()?.default.clone()?;
                    Some((i, default))
                })
                .collect()
        })
        .collect();
    for ((_, e), fills) in drafts.iter_mut().zip(defaults) {
        for (i, value) in fills {
            e.properties[i].value = Some(value);
        }
    }

    let mut next = base.clone();
    let mut changes = Vec::new();
    let mut changed = BTreeSet::new();
    let mut deleted_names = HashMap::new();
    for id in &deletes {
        if let Some(old) = next.remove(*id) {
            deleted_names.insert(*id, old.name.clone());
        }
    }
    for (op, e) in drafts {
        if let Err(msg) = e.check_structure() {
            report.error(issue(e.id, &e.name, IssueKind::Structure, msg));
        }
        let e = Arc::new(e);
        if let Some(other) = next.put(e.clone()) {
            let path = e.file.as_ref().map_or("", |f| f.path.as_str());
            report.error(issue(e.id, path, IssueKind::Conflict, format!("path `{path}` is already used by entity {other}")));
        }
        changed.insert(e.id);
        changes.push(Applied::Put(op, e));
    }
    for id in deletes {
        let name = deleted_names.remove(&id).unwrap_or_default();
        changes.push(Applied::Delete(id, name));
    }

    // every edge of a changed entity resolves
    for id in &changed {
        let e = next.get(*id).expect("just inserted");
        for target in e.outgoing() {
            if next.get(target).is_none() {
                report.error(issue(*id, target.to_string(), IssueKind::Dangling, format!("{} refers to missing entity {target}", e.name)));
            }
        }
    }
    // deleted entities are no longer used
    for change in &changes {
        let Applied::Delete(id, name) = change else { continue };
        let holders: BTreeSet<EntityId> = next
            .children(*id)
            .iter()
            .chain(next.referrers(*id))
            .chain(next.users(*id))
            .copied()
            .collect();
        if !holders.is_empty() {
            let list: Vec<String> = holders.iter().map(ToString::to_string).collect();
            report.error(issue(*id, name.as_str(), IssueKind::Dangling, format!("`{name}` is still used by {}", list.join(", "))));
        }
    }
    let mut cyclic = false;
    for id in &changed {
        if reaches_itself(&next, *id) {
            cyclic = true;
            let name = next.get(*id).map_or(String::new(), |e| e.name.clone());
            report.error(issue(*id, name, IssueKind::Cycle, format!("entity {id} would be its own ancestor")));
        }
    }

    if report.is_valid() && !cyclic {
        let closure = next.with_descendants(changed.iter().copied());
        let mut affected = closure.clone();
        for id in &closure {
            affected.extend(next.users(*id).iter().copied());
        }
        for id in affected {
            let Some(e) = next.get(id) else { continue };
            let r = datamodel::validate(e, &next, units);
            if changed.contains(&id) {
                report.merge(r);
            } else {
                report.errors.extend(r.errors);
            }
        }
    }

    if !report.is_valid() {
        // issues name the ids the client sent
        let back: HashMap<EntityId, EntityId> = id_map.iter().map(|(t, a)| (*a, *t)).collect();
        for list in [&mut report.errors, &mut report.warnings, &mut report.notes] {
            for i in list.iter_mut() {
                if let Some(t) = back.get(&i.entity) {
                    i.entity = *t;
                }
            }
        }
        return Prepared::Reject(TransactionResult::rejected(Rejection::Invalid, report));
    }

    let seq = base.seq() + 1;
    next.set_position(seq, next_id);
    let record = CommitRecord {
        seq,
        timestamp: now,
        principal: principal.name,
        next_id,
        changes,
    };
    Prepared::Commit {
        next,
        record,
        result: TransactionResult {
            outcome: Outcome::Committed { log_seq: seq },
            id_map,
            report,
        },
    }
}

fn reaches_itself(view: &Snapshot, id: EntityId) -> bool {
    let Some(start) = view.entity(id) else { return false };
    let mut seen = HashSet::new();
    let mut queue: VecDeque<EntityId> = start.parents.iter().copied().collect();
    while let Some(cur) = queue.pop_front() {
        if cur == id {
            return true;
        }
        if seen.insert(cur) {
            if let Some(e) = view.entity(cur) {
                queue.extend(e.parents.iter().copied());
            }
        }
    }
    false
}
