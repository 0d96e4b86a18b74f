//! Fixtures, random generators and a reference query interpreter shared by
//! the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use caos_core::acl::{Permission, Principal, Ruleset};
use caos_core::cql::{FilterNode, KindRestriction, Literal, Operator, Prefix, QueryAst, SubQuery, Target};
use caos_core::datamodel::{Datatype, FileMeta, ValueList};
use caos_core::store::{Snapshot, Store, StoreOptions, Transaction, TransactionResult};
use caos_core::units::CompareOp;
use caos_core::wire::{decode_model, SnapshotNames};
use caos_core::{Entity, EntityId, EntityKind, EntityProperty, Importance, Quantity, ScalarType, UnitRegistry, Value, ValueType};
use chrono::{Datelike, NaiveDate, NaiveDateTime};
use rand::seq::IndexedRandom;
use rand::Rng;

pub const DESK: &str = include_str!("../fixtures/desk.xml");

pub fn id(v: i64) -> EntityId {
    EntityId::new(v).unwrap()
}

pub fn open(dir: &Path) -> Store {
    Store::open(dir, StoreOptions::default()).unwrap()
}

/// Commits the desk fixture as one transaction.
pub fn load_desk(store: &Store) -> TransactionResult {
    let snap = store.snapshot();
    let drafts = decode_model(DESK, store.units(), &SnapshotNames(&snap)).unwrap();
    let tx = drafts.into_iter().fold(Transaction::new(Principal::admin()), Transaction::insert);
    let r = store.execute_transaction(tx).unwrap();
    assert!(r.is_committed(), "desk fixture rejected: {:?}", r.report);
    r
}

pub fn desk_store(dir: &Path) -> Store {
    let store = open(dir);
    load_desk(&store);
    store
}

pub fn ids_named(snap: &Snapshot, names: &[&str]) -> Vec<EntityId> {
    let mut out: Vec<EntityId> = names
        .iter()
        .map(|n| {
            let set = snap.named(n);
            assert_eq!(set.len(), 1, "{n}");
            *set.iter().next().unwrap()
        })
        .collect();
    out.sort();
    out
}

// ---------------------------------------------------------------------------
// random query ASTs over an awkward vocabulary

const AWKWARD_NAMES: &[&str] = &[
    "Experiment",
    "exp",
    "first name",
    "date of birth",
    "x",
    "AND",
    "which",
    "Zeta 9",
    "has\"quote",
    "back\\slash",
    "Ünïcode name",
    "RECORD",
    "record type",
    "12",
    "3rd",
    "a-b",
    "x_y.z",
    "FROM",
    "with care",
    "*star*",
    "ENTITY thing",
    "room_temperature",
    "a, b",
    "(paren)",
    "2017-01-01",
    "true",
    "26C",
];

const AWKWARD_TEXT: &[&str] = &[
    "ice cream",
    "",
    "AND",
    "say \"hi\"",
    "tab\there",
    "line\nbreak",
    "\\",
    "26 C",
    "which has a",
    "ü",
    "*",
];

const ANY_UNITS: &[&str] = &["K", "°C", "C", "°F", "mm", "m", "km", "s", "kg", "Hz", "µs"];

pub fn pick<'a, R: Rng, T>(rng: &mut R, items: &'a [T]) -> &'a T {
    items.choose(rng).unwrap()
}

fn random_op<R: Rng>(rng: &mut R) -> CompareOp {
    *pick(rng, &[CompareOp::Eq, CompareOp::Ne, CompareOp::Lt, CompareOp::Le, CompareOp::Gt, CompareOp::Ge])
}

fn random_f64<R: Rng>(rng: &mut R) -> f64 {
    match rng.random_range(0..4) {
        0 => rng.random_range(-100i32..100) as f64,
        1 => rng.random_range(-1e6..1e6),
        2 => rng.random_range(-1.0..1.0) * 10f64.powi(rng.random_range(-12..12)),
        _ => f64::from_bits(rng.random::<u64>()),
    }
}

fn finite_f64<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let d = random_f64(rng);
        if d.is_finite() {
            return d;
        }
    }
}

fn random_date<R: Rng>(rng: &mut R, years: std::ops::RangeInclusive<i32>) -> NaiveDate {
    NaiveDate::from_ymd_opt(rng.random_range(years), rng.random_range(1..=12), rng.random_range(1..=28)).unwrap()
}

fn random_datetime<R: Rng>(rng: &mut R, years: std::ops::RangeInclusive<i32>) -> NaiveDateTime {
    random_date(rng, years)
        .and_hms_opt(rng.random_range(0..24), rng.random_range(0..60), rng.random_range(0..60))
        .unwrap()
}

fn awkward_literal<R: Rng>(rng: &mut R) -> Literal {
    match rng.random_range(0..7) {
        0 => Literal::Quantity {
            magnitude: finite_f64(rng),
            unit: pick(rng, ANY_UNITS).to_string(),
        },
        1 => Literal::Text(pick(rng, AWKWARD_TEXT).to_string()),
        2 => Literal::Date(random_date(rng, 1000..=9999)),
        3 => Literal::Datetime(random_datetime(rng, 1000..=9999)),
        4 => Literal::Boolean(rng.random()),
        5 => Literal::Integer(if rng.random_bool(0.2) { rng.random() } else { rng.random_range(-3000..3000) }),
        _ => Literal::Double(finite_f64(rng)),
    }
}

fn awkward_name<R: Rng>(rng: &mut R) -> String {
    pick(rng, AWKWARD_NAMES).to_string()
}

fn awkward_subquery<R: Rng>(rng: &mut R, depth: usize) -> SubQuery {
    SubQuery {
        target: if rng.random_bool(0.2) {
            Target::Id(id(rng.random_range(1..100_000)))
        } else {
            Target::Name(awkward_name(rng))
        },
        filter: (depth > 1 && rng.random_bool(0.5)).then(|| Box::new(awkward_filter(rng, depth - 1))),
    }
}

fn awkward_filter<R: Rng>(rng: &mut R, depth: usize) -> FilterNode {
    let leaf = depth <= 1 || rng.random_bool(0.35);
    if leaf {
        return match rng.random_range(0..3) {
            0 => FilterNode::Comparison {
                property: awkward_name(rng),
                op: Operator::Like,
                literal: Literal::Pattern(pick(rng, AWKWARD_TEXT).to_string()),
            },
            1 => FilterNode::InYear {
                property: awkward_name(rng),
                year: rng.random_range(1..=9999),
            },
            _ => FilterNode::Comparison {
                property: awkward_name(rng),
                op: Operator::Compare(random_op(rng)),
                literal: awkward_literal(rng),
            },
        };
    }
    let children = |rng: &mut R| (0..rng.random_range(2..=3)).map(|_| awkward_filter(rng, depth - 1)).collect();
    match rng.random_range(0..5) {
        0 => FilterNode::And(children(rng)),
        1 => FilterNode::Or(children(rng)),
        2 => FilterNode::Not(Box::new(awkward_filter(rng, depth - 1))),
        3 => FilterNode::Reference {
            role: rng.random_bool(0.5).then(|| awkward_name(rng)),
            target: awkward_subquery(rng, depth),
        },
        _ => FilterNode::BackReference {
            role: rng.random_bool(0.5).then(|| awkward_name(rng)),
            source: awkward_subquery(rng, depth),
        },
    }
}

/// Any query the parser can produce, with names and literals chosen to
/// stress quoting.
pub fn random_ast<R: Rng>(rng: &mut R) -> QueryAst {
    let prefix = match rng.random_range(0..3) {
        0 => Prefix::Find,
        1 => Prefix::Count,
        _ => Prefix::Select((0..rng.random_range(1..=3)).map(|_| awkward_name(rng)).collect()),
    };
    let kind = rng.random_bool(0.4).then(|| *pick(rng, &KindRestriction::ALL));
    let name = if kind.is_some() && rng.random_bool(0.3) { None } else { Some(awkward_name(rng)) };
    let depth = rng.random_range(1..=4);
    let filter = rng.random_bool(0.8).then(|| awkward_filter(rng, depth));
    QueryAst { prefix, kind, name, filter }
}

// ---------------------------------------------------------------------------
// random small stores and queries over them

/// Abstract properties of every trial store: name, declared type, unit and
/// parent (index into this table).
const TRIAL_PROPERTIES: &[(&str, &str, Option<&str>, Option<usize>)] = &[
    ("temp", "QUANTITY", Some("K"), None),
    ("subtemp", "QUANTITY", Some("°C"), Some(0)),
    ("len", "INTEGER", Some("m"), None),
    ("score", "INTEGER", None, None),
    ("ratio", "DOUBLE", None, None),
    ("label", "TEXT", None, None),
    ("when", "DATE", None, None),
    ("ref", "REFERENCE", None, None),
    ("refs", "LIST(REFERENCE)", None, None),
    ("tags", "LIST(TEXT)", None, None),
    ("flag", "BOOLEAN", None, None),
];
const TYPE_NAMES: &[&str] = &["Alpha", "Beta", "Gamma", "alpha", "Delta"];
const RECORD_NAMES: &[&str] = &["r1", "r2", "Beta", "gamma ray", "sample", "Sample", "x"];
const LABELS: &[&str] = &["alpha", "Beta", "gamma ray", "delta", "", "Alpha beta"];
const PATTERNS: &[&str] = &["*a*", "b*", "*ray", "alpha", "*", "g*y", "r?", "*1"];
const TEMP_UNITS: &[&str] = &["K", "°C", "°F", "C"];
const LENGTH_UNITS: &[&str] = &["mm", "m", "km"];

/// Celsius grid for temperatures, so that equal values stay equal after
/// conversion.
fn celsius<R: Rng>(rng: &mut R) -> f64 {
    f64::from(rng.random_range(36..=64)) / 2.0
}

pub fn celsius_in(c: f64, unit: &str) -> f64 {
    match unit {
        "K" => c + 273.15,
        "°F" => c * 9.0 / 5.0 + 32.0,
        _ => c,
    }
}

fn temperature<R: Rng>(rng: &mut R, units: &UnitRegistry) -> Quantity {
    let unit = *pick(rng, TEMP_UNITS);
    Quantity::new(celsius_in(celsius(rng), unit), units.resolve(unit).unwrap()).unwrap()
}

fn trial_value<R: Rng>(rng: &mut R, prop: usize, n: i64, units: &UnitRegistry) -> (Option<Value>, Option<String>) {
    if rng.random_bool(0.1) {
        return (None, None);
    }
    let reference = |rng: &mut R| Value::Reference(id(rng.random_range(1..=n)));
    match TRIAL_PROPERTIES[prop].0 {
        "temp" | "subtemp" => {
            if rng.random_bool(0.25) {
                let unit = *pick(rng, TEMP_UNITS);
                (Some(Value::Double(celsius_in(celsius(rng), unit))), Some(unit.to_string()))
            } else {
                (Some(Value::Quantity(temperature(rng, units))), None)
            }
        }
        "len" => {
            let unit = rng.random_bool(0.3).then(|| pick(rng, LENGTH_UNITS).to_string());
            (Some(Value::Integer(rng.random_range(0..5) * 500)), unit)
        }
        "score" => (Some(Value::Integer(rng.random_range(0..10))), None),
        "ratio" => (Some(Value::Double(f64::from(rng.random_range(0..8)) / 4.0)), None),
        "label" => (Some(Value::Text(pick(rng, LABELS).to_string())), None),
        "when" => {
            if rng.random_bool(0.2) {
                (Some(Value::Datetime(random_datetime(rng, 2015..=2018))), None)
            } else {
                (Some(Value::Date(random_date(rng, 2015..=2018))), None)
            }
        }
        "ref" => (Some(reference(rng)), None),
        "refs" => {
            let items = (0..rng.random_range(0..=3)).map(|_| reference(rng)).collect();
            (Some(Value::List(ValueList::new(ScalarType::Reference, items).unwrap())), None)
        }
        "tags" => {
            let items = (0..rng.random_range(0..=3)).map(|_| Value::Text(pick(rng, LABELS).to_string())).collect();
            (Some(Value::List(ValueList::new(ScalarType::Text, items).unwrap())), None)
        }
        _ => (Some(Value::Boolean(rng.random())), None),
    }
}

/// A store of at most 50 entities with at most 4 properties each. Ids are
/// dense from 1; the abstract properties come first.
pub fn random_entities<R: Rng>(rng: &mut R, units: &UnitRegistry) -> Vec<Entity> {
    let mut out = Vec::new();
    for (i, (name, ty, unit, parent)) in TRIAL_PROPERTIES.iter().enumerate() {
        let mut p = Entity::new(id(i as i64 + 1), EntityKind::AbstractProperty, *name).with_datatype(Datatype {
            value_type: Some(ty.parse::<ValueType>().unwrap()),
            unit: unit.map(String::from),
            ..Datatype::default()
        });
        if let Some(parent) = parent {
            p = p.with_parent(id(*parent as i64 + 1));
        }
        out.push(p);
    }
    let total = rng.random_range(out.len() as i64 + 4..=50);
    let first_type = out.len() as i64 + 1;
    let types = rng.random_range(2..=5);
    for i in 0..types {
        let this = first_type + i;
        let mut t = Entity::new(id(this), EntityKind::RecordType, *pick(rng, TYPE_NAMES));
        for _ in 0..rng.random_range(0..=2) {
            if this > first_type {
                let parent = id(rng.random_range(first_type..this));
                if !t.parents.contains(&parent) {
                    t.parents.push(parent);
                }
            }
        }
        for _ in 0..rng.random_range(0..=2) {
            let prop = rng.random_range(0..TRIAL_PROPERTIES.len());
            t.properties.push(EntityProperty::new(id(prop as i64 + 1), None, Importance::Recommended));
        }
        out.push(t);
    }
    let last_type = first_type + types - 1;
    for this in last_type + 1..=total {
        if rng.random_bool(0.08) {
            let mut f = Entity::new(id(this), EntityKind::File, format!("f{this}.dat"));
            f.file = Some(FileMeta {
                path: format!("/trial/f{this}.dat"),
                size: 1,
                checksum: "0".repeat(64),
            });
            out.push(f);
            continue;
        }
        let mut r = Entity::new(id(this), EntityKind::Record, *pick(rng, RECORD_NAMES));
        for _ in 0..rng.random_range(0..=2) {
            let parent = id(rng.random_range(first_type..=last_type));
            if !r.parents.contains(&parent) {
                r.parents.push(parent);
            }
        }
        for _ in 0..rng.random_range(0..=4) {
            let prop = rng.random_range(0..TRIAL_PROPERTIES.len());
            let (value, unit) = trial_value(rng, prop, total, units);
            r.properties.push(EntityProperty {
                property: id(prop as i64 + 1),
                value,
                importance: Importance::Fix,
                unit,
            });
        }
        out.push(r);
    }
    out
}

fn trial_literal<R: Rng>(rng: &mut R, property: &str) -> (Operator, Literal) {
    let op = Operator::Compare(random_op(rng));
    let quantity = |rng: &mut R, units: &[&str], magnitude: f64| Literal::Quantity {
        magnitude,
        unit: pick(rng, units).to_string(),
    };
    let lit = match (property, rng.random_range(0..10)) {
        (_, 0) => return (Operator::Like, Literal::Pattern(pick(rng, PATTERNS).to_string())),
        (_, 1) => match rng.random_range(0..4) {
            0 => Literal::Integer(rng.random_range(0..12)),
            1 => Literal::Double(f64::from(rng.random_range(0..8)) / 4.0),
            2 => Literal::Text(pick(rng, LABELS).to_string()),
            _ => Literal::Boolean(rng.random()),
        },
        ("temp" | "subtemp", _) => {
            let unit = *pick(rng, TEMP_UNITS);
            let magnitude = celsius_in(celsius(rng), unit);
            if rng.random_bool(0.1) {
                quantity(rng, &["s", "m"], magnitude)
            } else {
                Literal::Quantity {
                    magnitude,
                    unit: unit.to_string(),
                }
            }
        }
        ("len", _) => {
            let magnitude = f64::from(rng.random_range(0..5) * 500);
            quantity(rng, LENGTH_UNITS, magnitude)
        }
        ("score" | "ref", _) => Literal::Integer(rng.random_range(0..12)),
        ("ratio", _) => Literal::Double(f64::from(rng.random_range(0..8)) / 4.0),
        ("when", _) => match rng.random_range(0..3) {
            0 => Literal::Date(random_date(rng, 2015..=2018)),
            1 => Literal::Datetime(random_datetime(rng, 2015..=2018)),
            _ => Literal::Integer(rng.random_range(2014..=2019)),
        },
        ("flag", _) => Literal::Boolean(rng.random()),
        _ => Literal::Text(pick(rng, LABELS).to_string()),
    };
    (op, lit)
}

const FILTER_PROPERTIES: &[&str] = &[
    "temp", "subtemp", "len", "score", "ratio", "label", "when", "ref", "refs", "tags", "flag", "name", "NAME", "nothing",
];

fn trial_subquery<R: Rng>(rng: &mut R, depth: usize, max_id: i64) -> SubQuery {
    SubQuery {
        target: if rng.random_bool(0.2) {
            Target::Id(id(rng.random_range(1..=max_id + 2)))
        } else {
            Target::Name(trial_name(rng))
        },
        filter: (depth > 1 && rng.random_bool(0.5)).then(|| Box::new(trial_filter(rng, depth - 1, max_id))),
    }
}

fn trial_name<R: Rng>(rng: &mut R) -> String {
    match rng.random_range(0..10) {
        0..=4 => pick(rng, TYPE_NAMES).to_string(),
        5..=7 => pick(rng, RECORD_NAMES).to_string(),
        8 => TRIAL_PROPERTIES[rng.random_range(0..TRIAL_PROPERTIES.len())].0.to_string(),
        _ => "nothing".to_string(),
    }
}

fn trial_role<R: Rng>(rng: &mut R) -> Option<String> {
    rng.random_bool(0.5).then(|| pick(rng, &["ref", "refs", "temp", "REF"]).to_string())
}

/// Filter of depth at most `depth` over the trial vocabulary.
pub fn trial_filter<R: Rng>(rng: &mut R, depth: usize, max_id: i64) -> FilterNode {
    if depth <= 1 || rng.random_bool(0.4) {
        let property = pick(rng, FILTER_PROPERTIES).to_string();
        if rng.random_bool(0.1) {
            return FilterNode::InYear {
                property,
                year: rng.random_range(2014..=2019),
            };
        }
        let (op, literal) = trial_literal(rng, &property);
        return FilterNode::Comparison { property, op, literal };
    }
    let children = |rng: &mut R| (0..rng.random_range(2..=3)).map(|_| trial_filter(rng, depth - 1, max_id)).collect();
    match rng.random_range(0..5) {
        0 => FilterNode::And(children(rng)),
        1 => FilterNode::Or(children(rng)),
        2 => FilterNode::Not(Box::new(trial_filter(rng, depth - 1, max_id))),
        3 => FilterNode::Reference {
            role: trial_role(rng),
            target: trial_subquery(rng, depth - 1, max_id),
        },
        _ => FilterNode::BackReference {
            role: trial_role(rng),
            source: trial_subquery(rng, depth - 1, max_id),
        },
    }
}

/// FIND or COUNT with a filter of depth at most 3.
pub fn trial_query<R: Rng>(rng: &mut R, max_id: i64) -> QueryAst {
    let kind = rng.random_bool(0.3).then(|| *pick(rng, &KindRestriction::ALL));
    let name = if rng.random_bool(0.15) {
        None
    } else {
        Some(trial_name(rng))
    };
    let kind = if name.is_none() { Some(kind.unwrap_or(KindRestriction::Entity)) } else { kind };
    let prefix = if rng.random_bool(0.5) { Prefix::Find } else { Prefix::Count };
    let depth = rng.random_range(1..=3);
    let filter = rng.random_bool(0.9).then(|| trial_filter(rng, depth, max_id));
    QueryAst { prefix, kind, name, filter }
}

/// Rewrites every temperature or length literal into another compatible
/// unit, using conversions written out independently of the library.
pub fn rewrite_units<R: Rng>(rng: &mut R, f: &FilterNode) -> FilterNode {
    match f {
        FilterNode::Comparison {
            property,
            op,
            literal: Literal::Quantity { magnitude, unit },
        } => {
            let (si, family) = to_reference(*magnitude, unit);
            let literal = match family {
                Some(family) => {
                    let target = *pick(rng, family);
                    Literal::Quantity {
                        magnitude: from_reference(si, target),
                        unit: target.to_string(),
                    }
                }
                None => Literal::Quantity {
                    magnitude: *magnitude,
                    unit: unit.clone(),
                },
            };
            FilterNode::Comparison {
                property: property.clone(),
                op: *op,
                literal,
            }
        }
        FilterNode::And(items) => FilterNode::And(items.iter().map(|c| rewrite_units(rng, c)).collect()),
        FilterNode::Or(items) => FilterNode::Or(items.iter().map(|c| rewrite_units(rng, c)).collect()),
        FilterNode::Not(inner) => FilterNode::Not(Box::new(rewrite_units(rng, inner))),
        FilterNode::Reference { role, target } => FilterNode::Reference {
            role: role.clone(),
            target: SubQuery {
                target: target.target.clone(),
                filter: target.filter.as_ref().map(|x| Box::new(rewrite_units(rng, x))),
            },
        },
        FilterNode::BackReference { role, source } => FilterNode::BackReference {
            role: role.clone(),
            source: SubQuery {
                target: source.target.clone(),
                filter: source.filter.as_ref().map(|x| Box::new(rewrite_units(rng, x))),
            },
        },
        other => other.clone(),
    }
}

const TEMPERATURE_FAMILY: &[&str] = &["K", "°C", "°F"];
const LENGTH_FAMILY: &[&str] = &["mm", "m", "km"];

/// Kelvin for temperatures, metres for lengths.
fn to_reference(m: f64, unit: &str) -> (f64, Option<&'static [&'static str]>) {
    match unit {
        "K" => (m, Some(TEMPERATURE_FAMILY)),
        "°C" | "C" => (m + 273.15, Some(TEMPERATURE_FAMILY)),
        "°F" => ((m + 459.67) * 5.0 / 9.0, Some(TEMPERATURE_FAMILY)),
        "mm" => (m / 1000.0, Some(LENGTH_FAMILY)),
        "m" => (m, Some(LENGTH_FAMILY)),
        "km" => (m * 1000.0, Some(LENGTH_FAMILY)),
        _ => (m, None),
    }
}

fn from_reference(v: f64, unit: &str) -> f64 {
    match unit {
        "K" => v,
        "°C" => v - 273.15,
        "°F" => v * 9.0 / 5.0 - 459.67,
        "mm" => v * 1000.0,
        "m" => v,
        "km" => v / 1000.0,
        _ => unreachable!(),
    }
}

// ---------------------------------------------------------------------------
// reference interpreter

/// Answers queries by enumerating every entity and checking each filter
/// straight from its definition. Shares nothing with the evaluator but the
/// syntax tree and the entity types.
pub struct Oracle<'a> {
    entities: BTreeMap<EntityId, &'a Entity>,
}

fn same_name(a: &str, b: &str) -> bool {
    a.to_lowercase() == b.to_lowercase()
}

/// Dimension tag, scale and offset to the reference unit.
fn oracle_unit(symbol: &str) -> Option<(&'static str, f64, f64)> {
    Some(match symbol {
        "" => ("1", 1.0, 0.0),
        "K" => ("Θ", 1.0, 0.0),
        "°C" | "C" => ("Θ", 1.0, 273.15),
        "°F" => ("Θ", 5.0 / 9.0, 459.67 * 5.0 / 9.0),
        "m" => ("L", 1.0, 0.0),
        "mm" => ("L", 0.001, 0.0),
        "km" => ("L", 1000.0, 0.0),
        "s" => ("T", 1.0, 0.0),
        _ => return None,
    })
}

fn holds(op: CompareOp, ord: std::cmp::Ordering) -> bool {
    use std::cmp::Ordering::*;
    match op {
        CompareOp::Eq => ord == Equal,
        CompareOp::Ne => ord != Equal,
        CompareOp::Lt => ord == Less,
        CompareOp::Le => ord != Greater,
        CompareOp::Gt => ord == Greater,
        CompareOp::Ge => ord != Less,
    }
}

fn loose_cmp(a: f64, b: f64) -> std::cmp::Ordering {
    if (a - b).abs() <= 1e-9 * a.abs().max(b.abs()) {
        std::cmp::Ordering::Equal
    } else {
        a.partial_cmp(&b).unwrap()
    }
}

/// `*` matches any run of characters, case is ignored.
pub fn wildcard(text: &str, pattern: &str) -> bool {
    fn go(t: &[char], p: &[char]) -> bool {
        match p.split_first() {
            None => t.is_empty(),
            Some(('*', rest)) => (0..=t.len()).any(|i| go(&t[i..], rest)),
            Some((c, rest)) => t.first() == Some(c) && go(&t[1..], rest),
        }
    }
    let t: Vec<char> = text.to_lowercase().chars().collect();
    let p: Vec<char> = pattern.to_lowercase().chars().collect();
    go(&t, &p)
}

fn shortest(d: f64) -> String {
    format!("{d}")
}

fn literal_as_text(lit: &Literal) -> String {
    match lit {
        Literal::Quantity { magnitude, unit } => format!("{} {unit}", shortest(*magnitude)),
        Literal::Text(t) | Literal::Pattern(t) => t.clone(),
        Literal::Date(d) => d.format("%Y-%m-%d").to_string(),
        Literal::Datetime(dt) => dt.format("%Y-%m-%dT%H:%M:%S%.f").to_string(),
        Literal::Boolean(true) => "TRUE".into(),
        Literal::Boolean(false) => "FALSE".into(),
        Literal::Integer(i) => i.to_string(),
        Literal::Double(d) => shortest(*d),
    }
}

impl<'a> Oracle<'a> {
    pub fn new(entities: impl IntoIterator<Item = &'a Entity>) -> Self {
        Oracle {
            entities: entities.into_iter().map(|e| (e.id, e)).collect(),
        }
    }

    /// `e` carries `name` itself or through some is-a ancestor.
    fn is_a(&self, e: &Entity, name: &str) -> bool {
        let mut seen = BTreeSet::new();
        let mut stack = vec![e];
        while let Some(x) = stack.pop() {
            if !seen.insert(x.id) {
                continue;
            }
            if same_name(&x.name, name) {
                return true;
            }
            stack.extend(x.parents.iter().filter_map(|p| self.entities.get(p).copied()));
        }
        false
    }

    fn triple_named(&self, t: &EntityProperty, name: &str) -> bool {
        self.entities
            .get(&t.property)
            .is_some_and(|p| p.kind == EntityKind::AbstractProperty && self.is_a(p, name))
    }

    fn admits(kind: Option<KindRestriction>, e: &Entity) -> bool {
        match kind {
            None | Some(KindRestriction::Entity) => true,
            Some(KindRestriction::RecordType) => e.kind == EntityKind::RecordType,
            Some(KindRestriction::Record) => e.kind == EntityKind::Record,
            Some(KindRestriction::Property) => e.kind == EntityKind::AbstractProperty,
            Some(KindRestriction::File) => e.kind == EntityKind::File,
        }
    }

    /// Ids matched by `q`, ascending, visible to `principal`.
    pub fn run(&self, q: &QueryAst, principal: &Principal, ruleset: &Ruleset) -> Vec<EntityId> {
        self.entities
            .values()
            .filter(|e| Self::admits(q.kind, e))
            .filter(|e| q.name.as_ref().is_none_or(|n| self.is_a(e, n)))
            .filter(|e| q.filter.as_ref().is_none_or(|f| self.matches(e, f)))
            .filter(|e| ruleset.allows(principal, Permission::Retrieve, Some(e.id)))
            .map(|e| e.id)
            .collect()
    }

    fn sub(&self, s: &SubQuery) -> Vec<&Entity> {
        self.entities
            .values()
            .copied()
            .filter(|e| match &s.target {
                Target::Name(n) => self.is_a(e, n),
                Target::Id(i) => e.id == *i,
            })
            .filter(|e| s.filter.as_ref().is_none_or(|f| self.matches(e, f)))
            .collect()
    }

    fn refers(&self, holder: &Entity, role: &Option<String>, target: EntityId) -> bool {
        holder
            .properties
            .iter()
            .filter(|t| role.as_ref().is_none_or(|r| self.triple_named(t, r)))
            .filter_map(|t| t.value.as_ref())
            .any(|v| scalars(v).iter().any(|s| matches!(s, Value::Reference(r) if *r == target)))
    }

    pub fn matches(&self, e: &Entity, f: &FilterNode) -> bool {
        match f {
            FilterNode::And(items) => items.iter().all(|c| self.matches(e, c)),
            FilterNode::Or(items) => items.iter().any(|c| self.matches(e, c)),
            FilterNode::Not(inner) => !self.matches(e, inner),
            FilterNode::InYear { property, year } => e
                .properties
                .iter()
                .filter(|t| self.triple_named(t, property))
                .filter_map(|t| t.value.as_ref())
                .flat_map(scalars)
                .any(|s| match s {
                    Value::Date(d) => d.year() == *year,
                    Value::Datetime(d) => d.year() == *year,
                    _ => false,
                }),
            FilterNode::Comparison { property, op, literal } => {
                let via_triple = e
                    .properties
                    .iter()
                    .filter(|t| self.triple_named(t, property))
                    .any(|t| match &t.value {
                        None => false,
                        Some(v) => scalars(v).iter().any(|s| self.compare(t, s, *op, literal)),
                    });
                via_triple || (same_name(property, "name") && text_holds(&e.name, *op, literal))
            }
            FilterNode::Reference { role, target } => {
                let targets = self.sub(target);
                targets.iter().any(|t| self.refers(e, role, t.id))
            }
            FilterNode::BackReference { role, source } => {
                self.sub(source).iter().any(|holder| self.refers(holder, role, e.id))
            }
        }
    }

    fn stored_symbol(&self, t: &EntityProperty) -> String {
        t.unit
            .clone()
            .or_else(|| {
                self.entities
                    .get(&t.property)
                    .and_then(|p| p.datatype.as_ref())
                    .and_then(|d| d.unit.clone())
            })
            .filter(|s| oracle_unit(s).is_some())
            .unwrap_or_default()
    }

    fn compare(&self, t: &EntityProperty, s: &Value, op: Operator, lit: &Literal) -> bool {
        let Operator::Compare(cmp) = op else {
            let pattern = match lit {
                Literal::Pattern(p) | Literal::Text(p) => p,
                _ => return false,
            };
            return match s {
                Value::Text(x) => wildcard(x, pattern),
                Value::Reference(r) => self.entities.get(r).is_some_and(|x| wildcard(&x.name, pattern)),
                _ => false,
            };
        };
        let number = |m: f64, symbol: &str| -> Option<(&'static str, f64)> {
            let (dim, scale, offset) = oracle_unit(symbol)?;
            Some((dim, m * scale + offset))
        };
        match s {
            Value::Integer(_) | Value::Double(_) | Value::Quantity(_) => {
                let symbol = self.stored_symbol(t);
                if let (Value::Integer(a), Literal::Integer(b), "") = (s, lit, symbol.as_str()) {
                    return holds(cmp, a.cmp(b));
                }
                let lhs = match s {
                    Value::Integer(i) => number(*i as f64, &symbol),
                    Value::Double(d) => number(*d, &symbol),
                    Value::Quantity(q) => number(q.magnitude(), q.unit().symbol()),
                    _ => unreachable!(),
                };
                let rhs = match lit {
                    Literal::Integer(i) => number(*i as f64, ""),
                    Literal::Double(d) => number(*d, ""),
                    Literal::Quantity { magnitude, unit } => number(*magnitude, unit),
                    _ => None,
                };
                match (lhs, rhs) {
                    (Some((da, a)), Some((db, b))) if da == db => holds(cmp, loose_cmp(a, b)),
                    _ => false,
                }
            }
            Value::Text(x) => holds(cmp, x.as_str().cmp(literal_as_text(lit).as_str())),
            Value::Boolean(b) => matches!(lit, Literal::Boolean(l) if holds(cmp, b.cmp(l))),
            Value::Date(d) => match lit {
                Literal::Date(l) => holds(cmp, d.cmp(l)),
                Literal::Datetime(l) => holds(cmp, d.and_hms_opt(0, 0, 0).unwrap().cmp(l)),
                Literal::Integer(y) => holds(cmp, i64::from(d.year()).cmp(y)),
                _ => false,
            },
            Value::Datetime(d) => match lit {
                Literal::Datetime(l) => holds(cmp, d.cmp(l)),
                Literal::Date(l) => holds(cmp, d.date().cmp(l)),
                Literal::Integer(y) => holds(cmp, i64::from(d.year()).cmp(y)),
                _ => false,
            },
            Value::Reference(r) => match lit {
                Literal::Integer(l) => holds(cmp, r.get().cmp(l)),
                Literal::Text(_) => self
                    .entities
                    .get(r)
                    .is_some_and(|x| holds(cmp, x.name.as_str().cmp(literal_as_text(lit).as_str()))),
                _ => false,
            },
            Value::List(_) => false,
        }
    }
}

fn text_holds(text: &str, op: Operator, lit: &Literal) -> bool {
    match op {
        Operator::Like => match lit {
            Literal::Pattern(p) | Literal::Text(p) => wildcard(text, p),
            _ => false,
        },
        Operator::Compare(cmp) => holds(cmp, text.cmp(literal_as_text(lit).as_str())),
    }
}

fn scalars(v: &Value) -> Vec<Value> {
    match v {
        Value::List(l) => l.items().to_vec(),
        other => vec![other.clone()],
    }
}

// ---------------------------------------------------------------------------
// random entities for the wire format

const WIRE_TEXT: &[&str] = &[
    "plain",
    "with space",
    "<tag> & \"quotes\" 'single'",
    "multi\nline\r\nand\ttab",
    "  padded  ",
    "Ünïcödé 温度 🧪",
    "]]> <!-- -->",
    "&amp; literal",
];

fn wire_text<R: Rng>(rng: &mut R) -> String {
    if rng.random_bool(0.3) {
        let len = rng.random_range(1..12);
        (0..len)
            .map(|_| match rng.random_range(0..4) {
                0 => rng.random_range('a'..='z'),
                1 => *pick(rng, &['<', '>', '&', '"', '\'', '\n', '\t', '\r', ' ', '=']),
                2 => rng.random_range('\u{a0}'..='\u{2fff}'),
                _ => rng.random_range('0'..='9'),
            })
            .collect()
    } else {
        pick(rng, WIRE_TEXT).to_string()
    }
}

fn wire_name<R: Rng>(rng: &mut R) -> String {
    loop {
        let s = wire_text(rng);
        if !s.trim().is_empty() {
            return s;
        }
    }
}

fn wire_scalar<R: Rng>(rng: &mut R, ty: ScalarType, units: &UnitRegistry) -> Value {
    match ty {
        ScalarType::Integer => Value::Integer(rng.random()),
        ScalarType::Double => Value::Double(finite_f64(rng)),
        ScalarType::Quantity => {
            let symbols: Vec<String> = units.units().iter().map(|u| u.symbol().to_string()).collect();
            let unit = units.resolve(pick(rng, &symbols)).unwrap();
            Value::Quantity(Quantity::new(finite_f64(rng), unit).unwrap())
        }
        ScalarType::Text => Value::Text(if rng.random_bool(0.1) { String::new() } else { wire_text(rng) }),
        ScalarType::Boolean => Value::Boolean(rng.random()),
        ScalarType::Datetime => {
            let dt = random_datetime(rng, 1..=9999);
            let nanos = if rng.random_bool(0.5) { rng.random_range(0..1_000_000_000) } else { 0 };
            Value::Datetime(dt.with_nanosecond_checked(nanos))
        }
        ScalarType::Date => Value::Date(random_date(rng, 1..=9999)),
        ScalarType::Reference => Value::Reference(id(rng.random_range(1..i64::MAX))),
    }
}

trait WithNanos {
    fn with_nanosecond_checked(self, n: u32) -> Self;
}

impl WithNanos for NaiveDateTime {
    fn with_nanosecond_checked(self, n: u32) -> Self {
        chrono::Timelike::with_nanosecond(&self, n).unwrap()
    }
}

pub fn wire_value<R: Rng>(rng: &mut R, units: &UnitRegistry) -> Value {
    let ty = *pick(rng, &ScalarType::ALL);
    if rng.random_bool(0.25) {
        let items = (0..rng.random_range(0..4)).map(|_| wire_scalar(rng, ty, units)).collect();
        Value::List(ValueList::new(ty, items).unwrap())
    } else {
        wire_scalar(rng, ty, units)
    }
}

/// A structurally valid entity with every optional part exercised.
pub fn random_entity<R: Rng>(rng: &mut R, units: &UnitRegistry) -> Entity {
    let kind = *pick(rng, &[EntityKind::RecordType, EntityKind::Record, EntityKind::AbstractProperty, EntityKind::File]);
    let this = rng.random_range(1..1_000_000);
    let mut e = Entity::new(id(this), kind, wire_name(rng));
    if rng.random_bool(0.4) {
        e.description = Some(wire_text(rng));
    }
    for _ in 0..rng.random_range(0..3) {
        let p = rng.random_range(1..1_000_000);
        if p != this {
            e.parents.push(id(p));
        }
    }
    let symbols: Vec<String> = units.units().iter().map(|u| u.symbol().to_string()).collect();
    for _ in 0..rng.random_range(0..5) {
        let value = rng.random_bool(0.8).then(|| wire_value(rng, units));
        let unit = match &value {
            Some(Value::Quantity(_)) => None,
            _ => rng.random_bool(0.2).then(|| pick(rng, &symbols).clone()),
        };
        e.properties.push(EntityProperty {
            property: id(rng.random_range(1..1_000_000)),
            value,
            importance: *pick(
                rng,
                &[Importance::Obligatory, Importance::Recommended, Importance::Suggested, Importance::Fix],
            ),
            unit,
        });
    }
    match kind {
        EntityKind::AbstractProperty if rng.random_bool(0.8) => {
            let default = rng.random_bool(0.3).then(|| wire_value(rng, units));
            e.datatype = Some(Datatype {
                value_type: rng.random_bool(0.8).then(|| default.as_ref().map_or_else(
                    || wire_value(rng, units).value_type(),
                    Value::value_type,
                )),
                unit: rng.random_bool(0.3).then(|| pick(rng, &symbols).clone()),
                default,
                min: rng.random_bool(0.3).then(|| finite_f64(rng)),
                max: rng.random_bool(0.3).then(|| finite_f64(rng)),
            });
        }
        EntityKind::File => {
            e.file = Some(FileMeta {
                path: format!("/{}", wire_name(rng)),
                size: rng.random(),
                checksum: (0..64).map(|_| *pick(rng, &['0', '7', 'a', 'f'])).collect(),
            });
        }
        _ => {}
    }
    assert!(e.check_structure().is_ok());
    e
}

pub fn snapshot_of(entities: &[Entity]) -> Arc<Snapshot> {
    Arc::new(Snapshot::from_entities(entities.iter().cloned()))
}
