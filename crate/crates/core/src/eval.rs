//! Query execution over a committed snapshot.
//!
//! Names resolve to the entities carrying them plus all their is-a
//! descendants. A filter on property `p` looks at the entity's own triples
//! whose abstract property is named `p` or descends from something named
//! `p`; the pseudo-property `name` also matches the entity's own name.
//! Sub-queries of reference filters and the outer filter see the whole
//! snapshot; retrieve permission only hides entities from the final result.

use std::borrow::Cow;
use std::cell::RefCell;
use std::collections::{BTreeSet, HashMap, HashSet};
use std::rc::Rc;
use std::sync::Arc;

use chrono::Datelike;

use crate::acl::{Permission, Principal, Ruleset};
use crate::cql::{self, FilterNode, KindRestriction, Literal, Operator, ParseError, Prefix, QueryAst, SubQuery, Target};
use crate::datamodel::{Entity, EntityId, EntityProperty, Value};
use crate::store::{name_key, Snapshot};
use crate::units::{self, CompareOp, Comparison};
use crate::wire::{format_double, DATETIME_FORMAT, DATE_FORMAT};
use crate::{Quantity, Unit, UnitRegistry};

/// Property name that also matches an entity's own name.
pub const NAME_PSEUDO_PROPERTY: &str = "name";

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    /// Starts with `id`.
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ResultBody {
    Count(u64),
    Entities(Vec<Arc<Entity>>),
    Table(Table),
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    pub body: ResultBody,
    /// Sorted, without duplicates.
    pub warnings: Vec<String>,
}

/// Entities named `name` (case-insensitively) and all their descendants,
/// restricted to `kind`.
pub fn resolve_name(name: &str, kind: Option<KindRestriction>, snap: &Snapshot) -> BTreeSet<EntityId> {
    let mut ids = snap.with_descendants(snap.named(name).iter().copied());
    if let Some(k) = kind {
        ids.retain(|id| snap.get(*id).is_some_and(|e| k.admits(e.kind)));
    }
    ids
}

enum Verdict {
    Yes,
    No,
    Incomparable(String),
}

impl From<bool> for Verdict {
    fn from(b: bool) -> Self {
        if b {
            Verdict::Yes
        } else {
            Verdict::No
        }
    }
}

/// Per-query caches and collected warnings. Sub-query results are cached
/// by node address, so an evaluator must not outlive the query it serves.
pub struct Evaluator<'a> {
    snap: &'a Snapshot,
    units: &'a UnitRegistry,
    properties: RefCell<HashMap<String, Rc<HashSet<EntityId>>>>,
    subqueries: RefCell<HashMap<usize, Rc<HashSet<EntityId>>>>,
    declared_units: RefCell<HashMap<EntityId, Option<Unit>>>,
    literals: RefCell<HashMap<usize, Rc<Result<Quantity, String>>>>,
    warnings: RefCell<BTreeSet<String>>,
}

impl<'a> Evaluator<'a> {
    pub fn new(snap: &'a Snapshot, units: &'a UnitRegistry) -> Self {
        Evaluator {
            snap,
            units,
            properties: RefCell::default(),
            subqueries: RefCell::default(),
            declared_units: RefCell::default(),
            literals: RefCell::default(),
            warnings: RefCell::default(),
        }
    }

    pub fn into_warnings(self) -> Vec<String> {
        self.warnings.into_inner().into_iter().collect()
    }

    /// Abstract properties a filter name stands for.
    fn property_set(&self, name: &str) -> Rc<HashSet<EntityId>> {
        if let Some(set) = self.properties.borrow().get(name) {
            return set.clone();
        }
        let set: Rc<HashSet<EntityId>> =
            Rc::new(resolve_name(name, Some(KindRestriction::Property), self.snap).into_iter().collect());
        self.properties.borrow_mut().insert(name.to_string(), set.clone());
        set
    }

    fn warn(&self, message: String) {
        self.warnings.borrow_mut().insert(message);
    }

    /// Triples of `e` matching the filter property name.
    fn matching<'e>(&self, e: &'e Entity, name: &str) -> impl Iterator<Item = &'e EntityProperty> + use<'e> {
        let set = self.property_set(name);
        e.properties.iter().filter(move |p| set.contains(&p.property))
    }

    /// Unit in which a plain number stored under `prop` is expressed.
    fn stored_unit(&self, prop: &EntityProperty) -> Option<Unit> {
        if let Some(symbol) = &prop.unit {
            return self.units.resolve(symbol).ok();
        }
        if let Some(unit) = self.declared_units.borrow().get(&prop.property) {
            return unit.clone();
        }
        let unit = self
            .snap
            .get(prop.property)
            .and_then(|p| p.datatype.as_ref())
            .and_then(|d| d.unit.as_deref())
            .and_then(|symbol| self.units.resolve(symbol).ok());
        self.declared_units.borrow_mut().insert(prop.property, unit.clone());
        unit
    }

    /// Quantity a literal stands for, resolved once per literal node.
    fn literal_quantity(&self, lit: &Literal, magnitude: f64, unit: &str) -> Rc<Result<Quantity, String>> {
        let key = lit as *const Literal as usize;
        if let Some(q) = self.literals.borrow().get(&key) {
            return q.clone();
        }
        let q = Rc::new(
            self.units
                .resolve(unit)
                .map_err(|e| e.to_string())
                .and_then(|u| Quantity::new(magnitude, u).map_err(|e| e.to_string())),
        );
        self.literals.borrow_mut().insert(key, q.clone());
        q
    }

    pub fn matches(&self, e: &Entity, f: &FilterNode) -> bool {
        match f {
            FilterNode::And(items) => items.iter().all(|c| self.matches(e, c)),
            FilterNode::Or(items) => items.iter().any(|c| self.matches(e, c)),
            FilterNode::Not(inner) => !self.matches(e, inner),
            FilterNode::InYear { property, year } => {
                let in_year = |v: &Value| match v {
                    Value::Date(d) => d.year() == *year,
                    Value::Datetime(dt) => dt.year() == *year,
                    _ => false,
                };
                self.matching(e, property)
                    .filter_map(|p| p.value.as_ref())
                    .any(|v| v.scalars().iter().any(in_year))
            }
            FilterNode::Comparison { property, op, literal } => {
                let mut hit = self.matching(e, property).any(|p| {
                    let Some(value) = &p.value else { return false };
                    let unit = self.stored_unit(p);
                    value.scalars().iter().any(|s| match self.compare(s, unit.as_ref(), *op, literal) {
                        Verdict::Yes => true,
                        Verdict::No => false,
                        Verdict::Incomparable(why) => {
                            self.warn(format!("`{property}`: {why}"));
                            false
                        }
                    })
                });
                if !hit && property.eq_ignore_ascii_case(NAME_PSEUDO_PROPERTY) {
                    hit = matches!(self.compare_text(&e.name, *op, literal), Verdict::Yes);
                }
                hit
            }
            FilterNode::Reference { role, target } => {
                let targets = self.subquery(target);
                let roles = role.as_deref().map(|r| self.property_set(r));
                e.properties
                    .iter()
                    .filter(|p| roles.as_ref().is_none_or(|set| set.contains(&p.property)))
                    .filter_map(|p| p.value.as_ref())
                    .any(|v| v.references().any(|t| targets.contains(&t)))
            }
            FilterNode::BackReference { role, source } => {
                let sources = self.subquery(source);
                let roles = role.as_deref().map(|r| self.property_set(r));
                self.snap.referrers(e.id).iter().any(|holder| {
                    sources.contains(holder)
                        && self.snap.get(*holder).is_some_and(|h| {
                            h.properties
                                .iter()
                                .filter(|p| roles.as_ref().is_none_or(|set| set.contains(&p.property)))
                                .filter_map(|p| p.value.as_ref())
                                .any(|v| v.references().any(|t| t == e.id))
                        })
                })
            }
        }
    }

    fn subquery(&self, sub: &SubQuery) -> Rc<HashSet<EntityId>> {
        let key = sub as *const SubQuery as usize;
        if let Some(set) = self.subqueries.borrow().get(&key) {
            return set.clone();
        }
        let candidates: Vec<EntityId> = match &sub.target {
            Target::Name(n) => resolve_name(n, None, self.snap).into_iter().collect(),
            Target::Id(id) => self.snap.get(*id).map(|e| e.id).into_iter().collect(),
        };
        let set: HashSet<EntityId> = candidates
            .into_iter()
            .filter(|id| match (&sub.filter, self.snap.get(*id)) {
                (_, None) => false,
                (None, Some(_)) => true,
                (Some(f), Some(e)) => self.matches(e, f),
            })
            .collect();
        let set = Rc::new(set);
        self.subqueries.borrow_mut().insert(key, set.clone());
        set
    }

    fn compare(&self, stored: &Value, unit: Option<&Unit>, op: Operator, lit: &Literal) -> Verdict {
        let Operator::Compare(op) = op else {
            let pattern = match lit {
                Literal::Pattern(p) | Literal::Text(p) => p.as_str(),
                _ => return Verdict::No,
            };
            return match stored {
                Value::Text(t) => like(t, pattern).into(),
                Value::Reference(id) => self.snap.get(*id).is_some_and(|r| like(&r.name, pattern)).into(),
                _ => Verdict::No,
            };
        };
        match stored {
            Value::Integer(_) | Value::Double(_) | Value::Quantity(_) => self.compare_number(stored, unit, op, lit),
            Value::Text(t) => self.compare_text(t, Operator::Compare(op), lit),
            Value::Boolean(b) => match lit {
                Literal::Boolean(l) => op.holds(b.cmp(l)).into(),
                _ => Verdict::No,
            },
            Value::Date(d) => match lit {
                Literal::Date(l) => op.holds(d.cmp(l)).into(),
                Literal::Datetime(l) => op.holds(d.and_time(chrono::NaiveTime::MIN).cmp(l)).into(),
                Literal::Integer(y) => op.holds(i64::from(d.year()).cmp(y)).into(),
                _ => Verdict::No,
            },
            Value::Datetime(dt) => match lit {
                Literal::Datetime(l) => op.holds(dt.cmp(l)).into(),
                Literal::Date(l) => op.holds(dt.date().cmp(l)).into(),
                Literal::Integer(y) => op.holds(i64::from(dt.year()).cmp(y)).into(),
                _ => Verdict::No,
            },
            Value::Reference(id) => match lit {
                Literal::Integer(l) => op.holds(id.get().cmp(l)).into(),
                Literal::Text(_) => match self.snap.get(*id) {
                    Some(target) => self.compare_text(&target.name, Operator::Compare(op), lit),
                    None => Verdict::No,
                },
                _ => Verdict::No,
            },
            Value::List(_) => Verdict::No,
        }
    }

    fn compare_text(&self, text: &str, op: Operator, lit: &Literal) -> Verdict {
        match op {
            Operator::Like => match lit {
                Literal::Pattern(p) | Literal::Text(p) => like(text, p).into(),
                _ => Verdict::No,
            },
            Operator::Compare(op) => op.holds(text.cmp(literal_text(lit).as_str())).into(),
        }
    }

    fn compare_number(&self, stored: &Value, unit: Option<&Unit>, op: CompareOp, lit: &Literal) -> Verdict {
        if let (Value::Integer(a), Literal::Integer(b), None) = (stored, lit, unit) {
            return op.holds(a.cmp(b)).into();
        }
        let lhs = match stored {
            Value::Quantity(q) => Cow::Borrowed(q),
            Value::Integer(i) => Cow::Owned(as_quantity(*i as f64, unit)),
            Value::Double(d) => Cow::Owned(as_quantity(*d, unit)),
            _ => return Verdict::No,
        };
        let resolved;
        let rhs = match lit {
            Literal::Integer(i) => Cow::Owned(as_quantity(*i as f64, None)),
            Literal::Double(d) => Cow::Owned(as_quantity(*d, None)),
            Literal::Quantity { magnitude, unit } => {
                resolved = self.literal_quantity(lit, *magnitude, unit);
                match resolved.as_ref() {
                    Ok(q) => Cow::Borrowed(q),
                    Err(e) => return Verdict::Incomparable(e.clone()),
                }
            }
            _ => return Verdict::No,
        };
        match units::compare(&lhs, op, &rhs) {
            Comparison::True => Verdict::Yes,
            Comparison::False => Verdict::No,
            Comparison::Incomparable => Verdict::Incomparable(format!(
                "cannot compare {} with {} (dimensions {} and {})",
                describe(&lhs),
                describe(&rhs),
                lhs.dimension(),
                rhs.dimension()
            )),
        }
    }
}

fn as_quantity(m: f64, unit: Option<&Unit>) -> Quantity {
    let unit = unit.cloned().unwrap_or_else(Unit::dimensionless);
    Quantity::new(m, unit.clone()).unwrap_or_else(|_| Quantity::new(0.0, unit).expect("zero is finite"))
}

fn describe(q: &Quantity) -> String {
    if q.unit().symbol().is_empty() {
        format_double(q.magnitude())
    } else {
        q.to_string()
    }
}

/// Text a literal stands for when compared with a text value.
pub fn literal_text(lit: &Literal) -> String {
    match lit {
        Literal::Quantity { magnitude, unit } => format!("{} {unit}", format_double(*magnitude)),
        Literal::Text(t) | Literal::Pattern(t) => t.clone(),
        Literal::Date(d) => d.format(DATE_FORMAT).to_string(),
        Literal::Datetime(dt) => dt.format(DATETIME_FORMAT).to_string(),
        Literal::Boolean(b) => if *b { "TRUE" } else { "FALSE" }.to_string(),
        Literal::Integer(i) => i.to_string(),
        Literal::Double(d) => format_double(*d),
    }
}

/// Case-insensitive match where `*` stands for any run of characters.
pub fn like(text: &str, pattern: &str) -> bool {
    let text: Vec<char> = text.to_lowercase().chars().collect();
    let pattern: Vec<char> = pattern.to_lowercase().chars().collect();
    let (mut t, mut p) = (0, 0);
    let mut star: Option<(usize, usize)> = None;
    while t < text.len() {
        if p < pattern.len() && pattern[p] == '*' {
            star = Some((p, t));
            p += 1;
        } else if p < pattern.len() && pattern[p] == text[t] {
            p += 1;
            t += 1;
        } else if let Some((sp, st)) = star {
            p = sp + 1;
            t = st + 1;
            star = Some((sp, st + 1));
        } else {
            return false;
        }
    }
    pattern[p..].iter().all(|c| *c == '*')
}

/// Whether `e` passes `f`, with any warnings raised on the way.
pub fn eval_filter(e: &Entity, f: &FilterNode, snap: &Snapshot, units: &UnitRegistry) -> (bool, Vec<String>) {
    let ev = Evaluator::new(snap, units);
    let hit = ev.matches(e, f);
    (hit, ev.into_warnings())
}

/// Text of one scalar or list value in a table cell.
pub fn render_value(value: &Value, unit: Option<&str>) -> String {
    match value {
        Value::Integer(i) => with_unit(i.to_string(), unit),
        Value::Double(d) => with_unit(format_double(*d), unit),
        Value::Quantity(q) => with_unit(format_double(q.magnitude()), Some(q.unit().symbol())),
        Value::Text(t) => t.clone(),
        Value::Boolean(b) => if *b { "TRUE" } else { "FALSE" }.to_string(),
        Value::Datetime(dt) => dt.format(DATETIME_FORMAT).to_string(),
        Value::Date(d) => d.format(DATE_FORMAT).to_string(),
        Value::Reference(id) => id.to_string(),
        Value::List(list) => list
            .items()
            .iter()
            .map(|v| render_value(v, unit))
            .collect::<Vec<_>>()
            .join(", "),
    }
}

fn with_unit(number: String, unit: Option<&str>) -> String {
    match unit {
        Some(u) if !u.is_empty() => format!("{number} {u}"),
        _ => number,
    }
}

impl Evaluator<'_> {
    fn cell(&self, e: &Entity, field: &str) -> String {
        if let Some(p) = self.matching(e, field).next() {
            return match &p.value {
                Some(v) => {
                    let unit = self.stored_unit(p);
                    render_value(v, unit.as_ref().map(|u| u.symbol()))
                }
                None => String::new(),
            };
        }
        if name_key(field) == NAME_PSEUDO_PROPERTY {
            return e.name.clone();
        }
        String::new()
    }
}

/// Runs `q`. Entities the principal may not retrieve are left out of
/// every result shape, counts included.
pub fn execute(
    q: &QueryAst,
    snap: &Snapshot,
    principal: &Principal,
    ruleset: &Ruleset,
    units: &UnitRegistry,
) -> QueryResult {
    let ev = Evaluator::new(snap, units);
    let candidates: Box<dyn Iterator<Item = &Arc<Entity>>> = match &q.name {
        Some(name) => Box::new(
            resolve_name(name, q.kind, snap)
                .into_iter()
                .filter_map(|id| snap.get(id))
                .collect::<Vec<_>>()
                .into_iter(),
        ),
        None => {
            let kind = q.kind.unwrap_or(KindRestriction::Entity);
            Box::new(snap.iter().filter(move |e| kind.admits(e.kind)))
        }
    };
    let access = ruleset.access(principal, Permission::Retrieve);
    let matched: Vec<&Arc<Entity>> = candidates
        .filter(|e| q.filter.as_ref().is_none_or(|f| ev.matches(e, f)))
        .filter(|e| access.allows(e.id))
        .collect();
    let body = match &q.prefix {
        Prefix::Count => ResultBody::Count(matched.len() as u64),
        Prefix::Find => ResultBody::Entities(matched.into_iter().cloned().collect()),
        Prefix::Select(fields) => {
            let mut columns = vec!["id".to_string()];
            columns.extend(fields.iter().cloned());
            let rows = matched
                .iter()
                .map(|e| {
                    let mut row = vec![e.id.to_string()];
                    row.extend(fields.iter().map(|f| ev.cell(e, f)));
                    row
                })
                .collect();
            ResultBody::Table(Table { columns, rows })
        }
    };
    QueryResult {
        body,
        warnings: ev.into_warnings(),
    }
}

/// Parses and runs a query.
pub fn execute_text(
    text: &str,
    snap: &Snapshot,
    principal: &Principal,
    ruleset: &Ruleset,
    units: &UnitRegistry,
) -> Result<QueryResult, ParseError> {
    let ast = cql::parse(text)?;
    Ok(execute(&ast, snap, principal, ruleset, units))
}

fn escape_tsv(cell: &str) -> String {
    let mut out = String::with_capacity(cell.len());
    for c in cell.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            _ => out.push(c),
        }
    }
    out
}

/// Header line plus one line per row; tabs between cells, `\n` after each
/// line. Backslash, tab, newline and carriage return inside cells are
/// written as `\\`, `\t`, `\n` and `\r`.
pub fn render_tsv(table: &Table) -> String {
    let mut out = String::new();
    for line in std::iter::once(&table.columns).chain(&table.rows) {
        let cells: Vec<String> = line.iter().map(|c| escape_tsv(c)).collect();
        out.push_str(&cells.join("\t"));
        out.push('\n');
    }
    out
}

/// Query output for terminals: the bare count, one `id<TAB>kind<TAB>name`
/// line per entity, or the TSV table.
pub fn render_plain(result: &QueryResult) -> String {
    match &result.body {
        ResultBody::Count(n) => format!("{n}\n"),
        ResultBody::Entities(list) => list
            .iter()
            .map(|e| format!("{}\t{}\t{}\n", e.id, e.kind, escape_tsv(&e.name)))
            .collect(),
        ResultBody::Table(t) => render_tsv(t),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wildcards() {
        assert!(like("On terminating ventricular fibrillation fast", "*terminating ventricular fibrillation*"));
        assert!(like("ABC", "abc"));
        assert!(like("abc", "*"));
        assert!(like("", "*"));
        assert!(like("abcbd", "a*b*d"));
        assert!(!like("abc", "a*d"));
        assert!(!like("abc", "ab"));
        assert!(like("a*c", "a*c"));
    }

    #[test]
    fn tsv_escaping() {
        let t = Table {
            columns: vec!["id".into(), "note".into()],
            rows: vec![vec!["1".into(), "a\tb\nc\\d\r".into()]],
        };
        assert_eq!(render_tsv(&t), "id\tnote\n1\ta\\tb\\nc\\\\d\\r\n");
    }
}
