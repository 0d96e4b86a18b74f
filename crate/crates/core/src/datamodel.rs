//! Entity graph types and the inheritance/validation rules built on them.
//!
//! Every stored object is an [`Entity`]. Entities are linked by directed,
//! transitive is-a edges (`parents`) and carry [`EntityProperty`] triples. A
//! child inherits its ancestors' property obligations according to their
//! [`Importance`]; [`validate`] turns missing obligations into errors,
//! warnings or notes.

use std::collections::{BTreeMap, HashSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use chrono::{NaiveDate, NaiveDateTime};
use thiserror::Error;

use crate::units::{self, Dimension, UnitRegistry};
use crate::Quantity;

/// Identifier of an entity.
///
/// Ids assigned by the store are strictly positive. Negative ids are
/// client-side placeholders inside a transaction and are replaced on commit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EntityId(i64);

impl EntityId {
    /// A persistent id; `None` unless `value > 0`.
    pub fn new(value: i64) -> Option<Self> {
        (value > 0).then_some(EntityId(value))
    }

    /// A transaction-local placeholder; `None` unless `value < 0`.
    pub fn temporary(value: i64) -> Option<Self> {
        (value < 0).then_some(EntityId(value))
    }

    pub fn get(self) -> i64 {
        self.0
    }

    pub fn is_temporary(self) -> bool {
        self.0 < 0
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid entity id `{0}`")]
pub struct InvalidId(pub String);

impl FromStr for EntityId {
    type Err = InvalidId;

    /// Accepts positive and negative (temporary) ids; zero is rejected.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().parse::<i64>() {
            Ok(v) if v != 0 => Ok(EntityId(v)),
            _ => Err(InvalidId(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EntityKind {
    RecordType,
    Record,
    AbstractProperty,
    File,
}

impl EntityKind {
    pub const ALL: [EntityKind; 4] = [
        EntityKind::RecordType,
        EntityKind::Record,
        EntityKind::AbstractProperty,
        EntityKind::File,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EntityKind::RecordType => "RecordType",
            EntityKind::Record => "Record",
            EntityKind::AbstractProperty => "Property",
            EntityKind::File => "File",
        }
    }
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EntityKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "recordtype" => Ok(EntityKind::RecordType),
            "record" => Ok(EntityKind::Record),
            "property" | "abstractproperty" => Ok(EntityKind::AbstractProperty),
            "file" => Ok(EntityKind::File),
            _ => Err(format!("unknown entity kind `{s}`")),
        }
    }
}

/// Deontic strength of a property triple as seen by children.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Importance {
    Obligatory,
    Recommended,
    Suggested,
    /// Applies to the entity itself only; never inherited.
    Fix,
}

impl Importance {
    pub const ALL: [Importance; 4] = [
        Importance::Obligatory,
        Importance::Recommended,
        Importance::Suggested,
        Importance::Fix,
    ];

    /// Inheritance strength, `None` for [`Importance::Fix`].
    pub fn strength(self) -> Option<u8> {
        match self {
            Importance::Obligatory => Some(3),
            Importance::Recommended => Some(2),
            Importance::Suggested => Some(1),
            Importance::Fix => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Importance::Obligatory => "OBLIGATORY",
            Importance::Recommended => "RECOMMENDED",
            Importance::Suggested => "SUGGESTED",
            Importance::Fix => "FIX",
        }
    }
}

impl fmt::Display for Importance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Importance {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "OBLIGATORY" => Ok(Importance::Obligatory),
            "RECOMMENDED" => Ok(Importance::Recommended),
            "SUGGESTED" => Ok(Importance::Suggested),
            "FIX" => Ok(Importance::Fix),
            _ => Err(format!("unknown importance `{s}`")),
        }
    }
}

/// Type tag of a single (non-list) value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScalarType {
    Integer,
    Double,
    Quantity,
    Text,
    Boolean,
    Datetime,
    Date,
    Reference,
}

impl ScalarType {
    pub const ALL: [ScalarType; 8] = [
        ScalarType::Integer,
        ScalarType::Double,
        ScalarType::Quantity,
        ScalarType::Text,
        ScalarType::Boolean,
        ScalarType::Datetime,
        ScalarType::Date,
        ScalarType::Reference,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScalarType::Integer => "INTEGER",
            ScalarType::Double => "DOUBLE",
            ScalarType::Quantity => "QUANTITY",
            ScalarType::Text => "TEXT",
            ScalarType::Boolean => "BOOLEAN",
            ScalarType::Datetime => "DATETIME",
            ScalarType::Date => "DATE",
            ScalarType::Reference => "REFERENCE",
        }
    }
}

/// Type tag of a value, including homogeneous lists of scalars.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ValueType {
    Scalar(ScalarType),
    List(ScalarType),
}

impl fmt::Display for ValueType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValueType::Scalar(s) => f.write_str(s.as_str()),
            ValueType::List(s) => write!(f, "LIST({})", s.as_str()),
        }
    }
}

impl FromStr for ValueType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let upper = s.trim().to_ascii_uppercase();
        let scalar = |name: &str| {
            ScalarType::ALL
                .into_iter()
                .find(|t| t.as_str() == name)
                .ok_or_else(|| format!("unknown value type `{s}`"))
        };
        match upper.strip_prefix("LIST(").and_then(|r| r.strip_suffix(')')) {
            Some(inner) => Ok(ValueType::List(scalar(inner.trim())?)),
            None => Ok(ValueType::Scalar(scalar(&upper)?)),
        }
    }
}

/// Homogeneous list of scalar values. The element type is kept explicitly so
/// that empty lists stay typed.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueList {
    element: ScalarType,
    items: Vec<Value>,
}

impl ValueList {
    /// Fails if an item is itself a list or does not have type `element`.
    pub fn new(element: ScalarType, items: Vec<Value>) -> Result<Self, String> {
        for item in &items {
            match item.value_type() {
                ValueType::Scalar(t) if t == element => {}
                other => {
                    return Err(format!(
                        "list of {} cannot hold a {} element",
                        element.as_str(),
                        other
                    ))
                }
            }
        }
        Ok(ValueList { element, items })
    }

    pub fn element_type(&self) -> ScalarType {
        self.element
    }

    pub fn items(&self) -> &[Value] {
        &self.items
    }

    pub(crate) fn items_mut(&mut self) -> &mut [Value] {
        &mut self.items
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Integer(i64),
    Double(f64),
    Quantity(Quantity),
    Text(String),
    Boolean(bool),
    Datetime(NaiveDateTime),
    Date(NaiveDate),
    Reference(EntityId),
    List(ValueList),
}

impl Value {
    pub fn value_type(&self) -> ValueType {
        let s = match self {
            Value::Integer(_) => ScalarType::Integer,
            Value::Double(_) => ScalarType::Double,
            Value::Quantity(_) => ScalarType::Quantity,
            Value::Text(_) => ScalarType::Text,
            Value::Boolean(_) => ScalarType::Boolean,
            Value::Datetime(_) => ScalarType::Datetime,
            Value::Date(_) => ScalarType::Date,
            Value::Reference(_) => ScalarType::Reference,
            Value::List(l) => return ValueType::List(l.element),
        };
        ValueType::Scalar(s)
    }

    /// The value itself, or each element for lists.
    pub fn scalars(&self) -> &[Value] {
        match self {
            Value::List(l) => &l.items,
            other => std::slice::from_ref(other),
        }
    }

    /// Every entity referenced by this value.
    pub fn references(&self) -> impl Iterator<Item = EntityId> + '_ {
        self.scalars().iter().filter_map(|v| match v {
            Value::Reference(id) => Some(*id),
            _ => None,
        })
    }

    pub(crate) fn for_each_reference_mut(&mut self, f: &mut impl FnMut(&mut EntityId)) {
        match self {
            Value::Reference(id) => f(id),
            Value::List(l) => {
                for item in l.items_mut() {
                    item.for_each_reference_mut(f);
                }
            }
            _ => {}
        }
    }
}

/// The triple attaching a value to an entity under an abstract property.
#[derive(Debug, Clone, PartialEq)]
pub struct EntityProperty {
    pub property: EntityId,
    pub value: Option<Value>,
    pub importance: Importance,
    /// Unit for a property without a quantity value. Must be `None` when
    /// `value` is a [`Value::Quantity`], which carries its own unit.
    pub unit: Option<String>,
}

impl EntityProperty {
    pub fn new(property: EntityId, value: Option<Value>, importance: Importance) -> Self {
        EntityProperty {
            property,
            value,
            importance,
            unit: None,
        }
    }
}

/// Value constraints declared by an abstract property.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Datatype {
    pub value_type: Option<ValueType>,
    pub unit: Option<String>,
    pub default: Option<Value>,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileMeta {
    pub path: String,
    pub size: u64,
    /// Lower-case hex SHA-256 of the content.
    pub checksum: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entity {
    pub id: EntityId,
    pub kind: EntityKind,
    pub name: String,
    pub description: Option<String>,
    pub parents: Vec<EntityId>,
    pub properties: Vec<EntityProperty>,
    pub datatype: Option<Datatype>,
    pub file: Option<FileMeta>,
}

impl Entity {
    pub fn new(id: EntityId, kind: EntityKind, name: impl Into<String>) -> Self {
        Entity {
            id,
            kind,
            name: name.into(),
            description: None,
            parents: Vec::new(),
            properties: Vec::new(),
            datatype: None,
            file: None,
        }
    }

    pub fn with_parent(mut self, parent: EntityId) -> Self {
        self.parents.push(parent);
        self
    }

    pub fn with_property(mut self, property: EntityProperty) -> Self {
        self.properties.push(property);
        self
    }

    pub fn with_datatype(mut self, datatype: Datatype) -> Self {
        self.datatype = Some(datatype);
        self
    }

    pub fn with_description(mut self, description: impl Into<String>) -> Self {
        self.description = Some(description.into());
        self
    }

    /// Checks the invariants that do not need the rest of the store.
    pub fn check_structure(&self) -> Result<(), String> {
        if self.name.trim().is_empty() {
            return Err("entity name must not be empty".into());
        }
        if (self.kind == EntityKind::File) != self.file.is_some() {
            return Err("file metadata is required for, and only allowed on, File entities".into());
        }
        if self.datatype.is_some() && self.kind != EntityKind::AbstractProperty {
            return Err("only abstract properties may declare a datatype".into());
        }
        if self.parents.contains(&self.id) {
            return Err("an entity cannot be its own parent".into());
        }
        for prop in &self.properties {
            if matches!(prop.value, Some(Value::Quantity(_))) && prop.unit.is_some() {
                return Err("a quantity value carries its own unit".into());
            }
        }
        Ok(())
    }

    /// Every id this entity points at: parents, abstract properties and
    /// reference values.
    pub fn outgoing(&self) -> impl Iterator<Item = EntityId> + '_ {
        self.parents.iter().copied().chain(self.properties.iter().flat_map(|p| {
            std::iter::once(p.property).chain(p.value.iter().flat_map(|v| v.references()))
        }))
    }

    /// Rewrites every id this entity mentions (its own id included).
    pub fn remap_ids(&mut self, mut f: impl FnMut(EntityId) -> EntityId) {
        self.id = f(self.id);
        for p in &mut self.parents {
            *p = f(*p);
        }
        for prop in &mut self.properties {
            prop.property = f(prop.property);
            if let Some(v) = &mut prop.value {
                v.for_each_reference_mut(&mut |id| *id = f(*id));
            }
        }
        if let Some(Some(v)) = self.datatype.as_mut().map(|d| d.default.as_mut()) {
            v.for_each_reference_mut(&mut |id| *id = f(*id));
        }
    }
}

/// Read access to a consistent set of entities.
pub trait EntityView {
    fn entity(&self, id: EntityId) -> Option<&Entity>;
}

impl EntityView for BTreeMap<EntityId, Entity> {
    fn entity(&self, id: EntityId) -> Option<&Entity> {
        self.get(&id)
    }
}

impl EntityView for std::collections::HashMap<EntityId, Entity> {
    fn entity(&self, id: EntityId) -> Option<&Entity> {
        self.get(&id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("entity {0} does not exist")]
pub struct LookupError(pub EntityId);

fn lookup<V: EntityView + ?Sized>(view: &V, id: EntityId) -> Result<&Entity, LookupError> {
    view.entity(id).ok_or(LookupError(id))
}

/// Whether `b` is a proper ancestor of `a`. Irreflexive.
pub fn is_descendant<V: EntityView + ?Sized>(
    a: EntityId,
    b: EntityId,
    view: &V,
) -> Result<bool, LookupError> {
    let start = lookup(view, a)?;
    lookup(view, b)?;
    let mut seen = HashSet::new();
    let mut queue: VecDeque<EntityId> = start.parents.iter().copied().collect();
    while let Some(id) = queue.pop_front() {
        if id == b {
            return Ok(true);
        }
        if !seen.insert(id) {
            continue;
        }
        queue.extend(lookup(view, id)?.parents.iter().copied());
    }
    Ok(false)
}

/// All proper ancestors of `e`, in breadth-first order without duplicates.
pub fn ancestors<V: EntityView + ?Sized>(e: &Entity, view: &V) -> Result<Vec<EntityId>, LookupError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    let mut queue: VecDeque<EntityId> = e.parents.iter().copied().collect();
    while let Some(id) = queue.pop_front() {
        if id == e.id || !seen.insert(id) {
            continue;
        }
        out.push(id);
        queue.extend(lookup(view, id)?.parents.iter().copied());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Obligation {
    pub property: EntityId,
    pub importance: Importance,
    /// Ancestor that declared the strongest version of this obligation.
    pub source: EntityId,
}

/// Non-fix properties of every ancestor, keeping the strongest importance
/// per abstract property. Sorted by property id.
pub fn effective_obligations<V: EntityView + ?Sized>(
    e: &Entity,
    view: &V,
) -> Result<Vec<Obligation>, LookupError> {
    let mut best: BTreeMap<EntityId, Obligation> = BTreeMap::new();
    for ancestor_id in ancestors(e, view)? {
        let ancestor = lookup(view, ancestor_id)?;
        for prop in &ancestor.properties {
            let Some(strength) = prop.importance.strength() else {
                continue;
            };
            let candidate = Obligation {
                property: prop.property,
                importance: prop.importance,
                source: ancestor_id,
            };
            match best.get(&prop.property) {
                Some(existing) => {
                    let current = existing.importance.strength().unwrap_or(0);
                    // ties keep the lower source id so reordering parents is harmless
                    if strength > current || (strength == current && ancestor_id < existing.source) {
                        best.insert(prop.property, candidate);
                    }
                }
                None => {
                    best.insert(prop.property, candidate);
                }
            }
        }
    }
    Ok(best.into_values().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IssueKind {
    MissingProperty,
    OutOfRange,
    DimensionMismatch,
    TypeMismatch,
    UnknownUnit,
    Dangling,
    Cycle,
    Structure,
    Conflict,
}

impl IssueKind {
    pub fn as_str(self) -> &'static str {
        match self {
            IssueKind::MissingProperty => "missing-property",
            IssueKind::OutOfRange => "out-of-range",
            IssueKind::DimensionMismatch => "dimension-mismatch",
            IssueKind::TypeMismatch => "type-mismatch",
            IssueKind::UnknownUnit => "unknown-unit",
            IssueKind::Dangling => "dangling",
            IssueKind::Cycle => "cycle",
            IssueKind::Structure => "structure",
            IssueKind::Conflict => "conflict",
        }
    }
}

impl FromStr for IssueKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [
            IssueKind::MissingProperty,
            IssueKind::OutOfRange,
            IssueKind::DimensionMismatch,
            IssueKind::TypeMismatch,
            IssueKind::UnknownUnit,
            IssueKind::Dangling,
            IssueKind::Cycle,
            IssueKind::Structure,
            IssueKind::Conflict,
        ]
        .into_iter()
        .find(|k| k.as_str() == s)
        .ok_or_else(|| format!("unknown issue kind `{s}`"))
    }
}

/// One finding about one entity. `subject` is usually an abstract property
/// name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Issue {
    pub entity: EntityId,
    pub subject: String,
    pub kind: IssueKind,
    pub message: String,
}

impl Issue {
    pub fn new(entity: EntityId, subject: impl Into<String>, kind: IssueKind, message: impl Into<String>) -> Self {
        Issue {
            entity,
            subject: subject.into(),
            kind,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ValidationReport {
    pub errors: Vec<Issue>,
    pub warnings: Vec<Issue>,
    pub notes: Vec<Issue>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn merge(&mut self, other: ValidationReport) {
        self.errors.extend(other.errors);
        self.warnings.extend(other.warnings);
        self.notes.extend(other.notes);
    }

    pub fn error(&mut self, issue: Issue) {
        self.errors.push(issue);
    }
}

fn name_of<V: EntityView + ?Sized>(view: &V, id: EntityId) -> String {
    view.entity(id).map(|e| e.name.clone()).unwrap_or_else(|| id.to_string())
}

/// Whether the triple `prop` satisfies an obligation on `wanted`: same
/// abstract property or any descendant of it.
fn satisfies<V: EntityView + ?Sized>(prop: &EntityProperty, wanted: EntityId, view: &V) -> bool {
    prop.property == wanted || is_descendant(prop.property, wanted, view).unwrap_or(false)
}

/// Checks `e` against its inherited obligations and the datatypes of the
/// abstract properties it uses.
///
/// A triple with a `Null` value counts as present.
pub fn validate<V: EntityView + ?Sized>(e: &Entity, view: &V, units: &UnitRegistry<f64>) -> ValidationReport {
    let mut report = ValidationReport::default();
    match effective_obligations(e, view) {
        Ok(obligations) => {
            for ob in obligations {
                if e.properties.iter().any(|p| satisfies(p, ob.property, view)) {
                    continue;
                }
                let name = name_of(view, ob.property);
                let source = name_of(view, ob.source);
                let issue = Issue::new(
                    e.id,
                    name.clone(),
                    IssueKind::MissingProperty,
                    format!("{} property `{name}` inherited from `{source}` is missing", ob.importance.as_str().to_lowercase()),
                );
                match ob.importance {
                    Importance::Obligatory => report.errors.push(issue),
                    Importance::Recommended => report.warnings.push(issue),
                    Importance::Suggested => report.notes.push(issue),
                    Importance::Fix => {}
                }
            }
        }
        Err(LookupError(id)) => report.error(Issue::new(
            e.id,
            id.to_string(),
            IssueKind::Dangling,
            format!("parent {id} does not exist"),
        )),
    }
    for prop in &e.properties {
        check_property(e, prop, view, units, &mut report);
    }
    report
}

fn type_accepts(declared: ScalarType, actual: ScalarType) -> bool {
    declared == actual
        || matches!(
            (declared, actual),
            (ScalarType::Double, ScalarType::Integer)
                | (ScalarType::Double, ScalarType::Quantity)
                | (ScalarType::Datetime, ScalarType::Date)
        )
}

fn check_property<V: EntityView + ?Sized>(
    e: &Entity,
    prop: &EntityProperty,
    view: &V,
    units: &UnitRegistry<f64>,
    report: &mut ValidationReport,
) {
    let Some(abstract_prop) = view.entity(prop.property) else {
        report.error(Issue::new(
            e.id,
            prop.property.to_string(),
            IssueKind::Dangling,
            format!("abstract property {} does not exist", prop.property),
        ));
        return;
    };
    let pname = abstract_prop.name.clone();
    if abstract_prop.kind != EntityKind::AbstractProperty {
        report.error(Issue::new(
            e.id,
            pname,
            IssueKind::Structure,
            format!("entity {} is a {}, not an abstract property", prop.property, abstract_prop.kind),
        ));
        return;
    }
    let datatype = abstract_prop.datatype.clone().unwrap_or_default();
    let default_unit = match datatype.unit.as_deref().map(|s| units.resolve(s)) {
        Some(Ok(u)) => Some(u),
        Some(Err(err)) => {
            report.error(Issue::new(e.id, pname.clone(), IssueKind::UnknownUnit, err.to_string()));
            None
        }
        None => None,
    };
    if let Some(symbol) = &prop.unit {
        match units.resolve(symbol) {
            Ok(u) => {
                if let Some(du) = &default_unit {
                    if du.dimension() != u.dimension() {
                        report.error(Issue::new(
                            e.id,
                            pname.clone(),
                            IssueKind::DimensionMismatch,
                            format!("unit `{symbol}` is incompatible with `{}`", du.symbol()),
                        ));
                    }
                }
            }
            Err(err) => report.error(Issue::new(e.id, pname.clone(), IssueKind::UnknownUnit, err.to_string())),
        }
    }
    let Some(value) = &prop.value else { return };
    if let Some(declared) = datatype.value_type {
        let ok = match (declared, value.value_type()) {
            (ValueType::Scalar(d), ValueType::Scalar(a)) => type_accepts(d, a),
            (ValueType::List(d), ValueType::List(a)) => type_accepts(d, a),
            _ => false,
        };
        if !ok {
            report.error(Issue::new(
                e.id,
                pname.clone(),
                IssueKind::TypeMismatch,
                format!("expected {declared}, found {}", value.value_type()),
            ));
            return;
        }
    }
    for item in value.scalars() {
        let magnitude = match item {
            Value::Integer(i) => Some(*i as f64),
            Value::Double(d) => Some(*d),
            Value::Quantity(q) => match &default_unit {
                Some(du) => match units::convert(q, du) {
                    Ok(c) => Some(c.magnitude()),
                    Err(_) => {
                        report.error(Issue::new(
                            e.id,
                            pname.clone(),
                            IssueKind::DimensionMismatch,
                            format!("`{}` is incompatible with `{}`", q.unit().symbol(), du.symbol()),
                        ));
                        None
                    }
                },
                None => Some(q.magnitude()),
            },
            _ => None,
        };
        let Some(m) = magnitude else { continue };
        let below = datatype.min.is_some_and(|min| m < min);
        let above = datatype.max.is_some_and(|max| m > max);
        if below || above {
            report.error(Issue::new(
                e.id,
                pname.clone(),
                IssueKind::OutOfRange,
                format!(
                    "value {m} outside permitted range [{}, {}]",
                    datatype.min.map_or("-inf".into(), |v| v.to_string()),
                    datatype.max.map_or("inf".into(), |v| v.to_string())
                ),
            ));
        }
    }
}

/// Dimension declared by an abstract property's default unit, if any.
pub fn declared_dimension(datatype: &Datatype, units: &UnitRegistry<f64>) -> Option<Dimension> {
    datatype
        .unit
        .as_deref()
        .and_then(|s| units.resolve(s).ok())
        .map(|u| u.dimension())
}
