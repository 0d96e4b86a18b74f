//! Immutable committed state plus the reverse indices queries need.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::sync::Arc;

use crate::datamodel::{Entity, EntityId, EntityView};

/// One committed state of the store. Cheap to share; writers clone it.
#[derive(Debug, Clone)]
pub struct Snapshot {
    seq: u64,
    next_id: i64,
    entities: BTreeMap<EntityId, Arc<Entity>>,
    by_name: HashMap<String, BTreeSet<EntityId>>,
    children: HashMap<EntityId, BTreeSet<EntityId>>,
    referrers: HashMap<EntityId, BTreeSet<EntityId>>,
    users: HashMap<EntityId, BTreeSet<EntityId>>,
    files: HashMap<String, EntityId>,
}

impl Default for Snapshot {
    fn default() -> Self {
        Snapshot {
            seq: 0,
            next_id: 1,
            entities: BTreeMap::new(),
            by_name: HashMap::new(),
            children: HashMap::new(),
            referrers: HashMap::new(),
            users: HashMap::new(),
            files: HashMap::new(),
        }
    }
}

/// Key used for case-insensitive name lookup.
pub fn name_key(name: &str) -> String {
    name.to_lowercase()
}

fn link(index: &mut HashMap<EntityId, BTreeSet<EntityId>>, key: EntityId, holder: EntityId) {
    index.entry(key).or_default().insert(holder);
}

fn unlink(index: &mut HashMap<EntityId, BTreeSet<EntityId>>, key: EntityId, holder: EntityId) {
    if let Some(set) = index.get_mut(&key) {
        set.remove(&holder);
        if set.is_empty() {
            index.remove(&key);
        }
    }
}

static EMPTY: BTreeSet<EntityId> = BTreeSet::new();

impl Snapshot {
    /// Unvalidated in-memory state over `entities`, for evaluating queries
    /// without a store. Later entities replace earlier ones with the same id.
    pub fn from_entities(entities: impl IntoIterator<Item = Entity>) -> Snapshot {
        let mut snap = Snapshot::default();
        let mut max = 0;
        for e in entities {
            max = max.max(e.id.get());
            snap.put(Arc::new(e));
        }
        snap.next_id = max + 1;
        snap
    }

    /// Sequence number of the last committed transaction.
    pub fn seq(&self) -> u64 {
        self.seq
    }

    pub fn next_id(&self) -> i64 {
        self.next_id
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn get(&self, id: EntityId) -> Option<&Arc<Entity>> {
        self.entities.get(&id)
    }

    /// All entities in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = &Arc<Entity>> {
        self.entities.values()
    }

    pub fn named(&self, name: &str) -> &BTreeSet<EntityId> {
        self.by_name.get(&name_key(name)).unwrap_or(&EMPTY)
    }

    /// Direct is-a children.
    pub fn children(&self, id: EntityId) -> &BTreeSet<EntityId> {
        self.children.get(&id).unwrap_or(&EMPTY)
    }

    /// Entities holding a reference value that points at `id`.
    pub fn referrers(&self, id: EntityId) -> &BTreeSet<EntityId> {
        self.referrers.get(&id).unwrap_or(&EMPTY)
    }

    /// Entities carrying a triple on the abstract property `id`.
    pub fn users(&self, id: EntityId) -> &BTreeSet<EntityId> {
        self.users.get(&id).unwrap_or(&EMPTY)
    }

    pub fn file_by_path(&self, path: &str) -> Option<EntityId> {
        self.files.get(path).copied()
    }

    /// `id` and every transitive is-a descendant of it.
    pub fn with_descendants(&self, roots: impl IntoIterator<Item = EntityId>) -> BTreeSet<EntityId> {
        let mut out = BTreeSet::new();
        let mut queue: VecDeque<EntityId> = roots.into_iter().collect();
        while let Some(id) = queue.pop_front() {
            if out.insert(id) {
                queue.extend(self.children(id).iter().copied());
            }
        }
        out
    }

    pub(crate) fn set_position(&mut self, seq: u64, next_id: i64) {
        self.seq = seq;
        self.next_id = next_id;
    }

    /// Inserts or replaces an entity. Returns the id of another File entity
    /// already registered under the same path, if any; the index keeps it.
    pub(crate) fn put(&mut self, entity: Arc<Entity>) -> Option<EntityId> {
        let id = entity.id;
        self.remove(id);
        self.by_name.entry(name_key(&entity.name)).or_default().insert(id);
        for parent in &entity.parents {
            link(&mut self.children, *parent, id);
        }
        for prop in &entity.properties {
            link(&mut self.users, prop.property, id);
            if let Some(value) = &prop.value {
                for target in value.references() {
                    link(&mut self.referrers, target, id);
                }
            }
        }
        let mut clash = None;
        if let Some(file) = &entity.file {
            match self.files.get(&file.path) {
                Some(other) if *other != id => clash = Some(*other),
                _ => {
                    self.files.insert(file.path.clone(), id);
                }
            }
        }
        self.entities.insert(id, entity);
        clash
    }

    pub(crate) fn remove(&mut self, id: EntityId) -> Option<Arc<Entity>> {
        let entity = self.entities.remove(&id)?;
        let key = name_key(&entity.name);
        if let Some(set) = self.by_name.get_mut(&key) {
            set.remove(&id);
            if set.is_empty() {
                self.by_name.remove(&key);
            }
        }
        for parent in &entity.parents {
            unlink(&mut self.children, *parent, id);
        }
        for prop in &entity.properties {
            unlink(&mut self.users, prop.property, id);
            if let Some(value) = &prop.value {
                for target in value.references() {
                    unlink(&mut self.referrers, target, id);
                }
            }
        }
        if let Some(file) = &entity.file {
            if self.files.get(&file.path) == Some(&id) {
                self.files.remove(&file.path);
            }
        }
        Some(entity)
    }
}

impl EntityView for Snapshot {
    fn entity(&self, id: EntityId) -> Option<&Entity> {
        self.entities.get(&id).map(Arc::as_ref)
    }
}
