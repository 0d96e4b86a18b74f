//! Request and response documents.
//!
//! ```xml
//! <Transaction>
//!   <Insert><Entity id="-1" kind="RecordType" name="Experiment"/></Insert>
//!   <Update><Entity id="12" .../></Update>
//!   <Delete id="13"/>
//! </Transaction>
//!
//! <Response><Committed seq="4"/><IdMapping temp="-1" id="20"/></Response>
//! <Response><Rejected reason="invalid"/><Error entity="-2" property="date" kind="missing-property">...</Error></Response>
//! <Response><Count>3</Count></Response>
//! <Response><Entities count="1"><Entity .../></Entities></Response>
//! <Response><Table><Header><Column>id</Column>...</Header><Row><Cell>5</Cell>...</Row></Table></Response>
//! <Response><Error kind="syntax" offset="5" line="1" column="6" expected="...">...</Error></Response>
//! ```
//!
//! Query responses may carry `<Warning>` elements before the result.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use super::{read_entity, write_entity, DecodeContext, Element, ElementWriter, NameResolver, WireError};
use crate::acl::{Permission, Principal};
use crate::cql::ParseError;
use crate::datamodel::{Entity, EntityId, EntityKind, Issue, IssueKind, ValidationReport};
use crate::eval::{QueryResult, ResultBody, Table};
use crate::store::{name_key, Instruction, Outcome, Rejection, Snapshot, Transaction, TransactionResult};
use crate::UnitRegistry;

fn unexpected(found: &str, expected: &str) -> WireError {
    WireError::UnexpectedElement {
        found: found.to_string(),
        expected: expected.to_string(),
    }
}

fn invalid(attribute: &str, value: &str, reason: impl Into<String>) -> WireError {
    WireError::InvalidValue {
        attribute: attribute.to_string(),
        value: value.to_string(),
        reason: reason.into(),
    }
}

fn id_attr(el: &Element, key: &str) -> Result<EntityId, WireError> {
    let v = el.required(key)?;
    v.parse().map_err(|_| invalid(key, v, "not an entity id"))
}

/// Resolves names against committed entities; a name must be unique
/// (among abstract properties, when a property is wanted).
pub struct SnapshotNames<'a>(pub &'a Snapshot);

impl NameResolver for SnapshotNames<'_> {
    fn resolve(&self, name: &str, property: bool) -> Result<EntityId, String> {
        let ids: Vec<EntityId> = self
            .0
            .named(name)
            .iter()
            .copied()
            .filter(|id| !property || self.0.get(*id).is_some_and(|e| e.kind == EntityKind::AbstractProperty))
            .collect();
        pick(name, &ids)
    }
}

fn pick(name: &str, ids: &[EntityId]) -> Result<EntityId, String> {
    match ids {
        [one] => Ok(*one),
        [] => Err(format!("no entity named `{name}`")),
        many => {
            let list: Vec<String> = many.iter().map(ToString::to_string).collect();
            Err(format!("name `{name}` is ambiguous (ids {})", list.join(", ")))
        }
    }
}

/// Names declared in the same document win over stored ones.
struct DocumentNames<'a> {
    local: HashMap<String, Vec<(EntityId, EntityKind)>>,
    existing: &'a dyn NameResolver,
}

impl NameResolver for DocumentNames<'_> {
    fn resolve(&self, name: &str, property: bool) -> Result<EntityId, String> {
        let ids: Vec<EntityId> = self
            .local
            .get(&name_key(name))
            .into_iter()
            .flatten()
            .filter(|(_, kind)| !property || *kind == EntityKind::AbstractProperty)
            .map(|(id, _)| *id)
            .collect();
        if ids.is_empty() {
            self.existing.resolve(name, property)
        } else {
            pick(name, &ids)
        }
    }
}

/// Decodes new entities whose `Parent`/`Property` children may name each
/// other or stored entities. Entities without an id get fresh temporary ids.
pub fn decode_drafts(
    elements: &[&Element],
    units: &UnitRegistry,
    existing: &dyn NameResolver,
) -> Result<Vec<Entity>, WireError> {
    let mut explicit = Vec::new();
    for el in elements {
        if el.name != "Entity" {
            return Err(unexpected(&el.name, "Entity"));
        }
        if let Some(v) = el.attr("id") {
            let id: EntityId = v.parse().map_err(|_| invalid("id", v, "not an entity id"))?;
            if !id.is_temporary() {
                return Err(invalid("id", v, "new entities take a negative temporary id"));
            }
            explicit.push(id.get());
        }
    }
    let mut next = explicit.iter().copied().min().unwrap_or(0).min(0) - 1;
    let mut ids = Vec::with_capacity(elements.len());
    let mut local: HashMap<String, Vec<(EntityId, EntityKind)>> = HashMap::new();
    for el in elements {
        let id = match el.attr("id") {
            Some(v) => v.parse::<EntityId>().expect("checked above"),
            None => {
                let id = EntityId::temporary(next).expect("negative");
                next -= 1;
                id
            }
        };
        let kind_text = el.required("kind")?;
        let kind: EntityKind = kind_text.parse().map_err(|e: String| invalid("kind", kind_text, e))?;
        local.entry(name_key(el.required("name")?)).or_default().push((id, kind));
        ids.push(id);
    }
    let names = DocumentNames { local, existing };
    let ctx = DecodeContext::with_names(units, &names);
    elements
        .iter()
        .zip(ids)
        .map(|(el, id)| read_entity(el, &ctx, Some(id)))
        .collect()
}

/// A data-model file: `<Entity>` elements, optionally wrapped in `<Model>`.
pub fn decode_model(text: &str, units: &UnitRegistry, existing: &dyn NameResolver) -> Result<Vec<Entity>, WireError> {
    let roots = super::parse_elements(text)?;
    let elements: Vec<&Element> = match roots.as_slice() {
        [model] if model.name == "Model" => model.children.iter().collect(),
        _ => roots.iter().collect(),
    };
    decode_drafts(&elements, units, existing)
}

/// Wraps the entities of a model file into an insert-only transaction
/// document, leaving name resolution to whoever executes it.
pub fn model_transaction(text: &str) -> Result<String, WireError> {
    let roots = super::parse_elements(text)?;
    let elements: Vec<&Element> = match roots.as_slice() {
        [model] if model.name == "Model" => model.children.iter().collect(),
        _ => roots.iter().collect(),
    };
    let mut out = String::from("<Transaction><Insert>");
    for el in elements {
        if el.name != "Entity" {
            return Err(unexpected(&el.name, "Entity"));
        }
        el.write(&mut out);
    }
    out.push_str("</Insert></Transaction>");
    Ok(out)
}

pub fn decode_transaction(
    text: &str,
    units: &UnitRegistry,
    existing: &dyn NameResolver,
    principal: Principal,
) -> Result<Transaction, WireError> {
    let root = super::parse_document(text)?;
    if root.name != "Transaction" {
        return Err(unexpected(&root.name, "Transaction"));
    }
    root.check_attrs(&[])?;
    let mut inserts = Vec::new();
    for child in &root.children {
        match child.name.as_str() {
            "Insert" => {
                child.check_attrs(&[])?;
                inserts.extend(child.children.iter());
            }
            "Update" | "Delete" => {}
            other => return Err(unexpected(other, "Insert, Update or Delete")),
        }
    }
    let mut drafts = decode_drafts(&inserts, units, existing)?.into_iter();
    let local = DocumentNames {
        local: HashMap::new(),
        existing,
    };
    let ctx = DecodeContext::with_names(units, &local);
    let mut tx = Transaction::new(principal);
    for child in &root.children {
        match child.name.as_str() {
            "Insert" => {
                for _ in &child.children {
                    tx.instructions.push(Instruction::Insert(drafts.next().expect("one draft per element")));
                }
            }
            "Update" => {
                child.check_attrs(&[])?;
                for el in &child.children {
                    let e = read_entity(el, &ctx, None)?;
                    if e.id.is_temporary() {
                        return Err(invalid("id", &e.id.to_string(), "updates need a stored id"));
                    }
                    tx.instructions.push(Instruction::Update(e));
                }
            }
            "Delete" => {
                child.check_attrs(&["id"])?;
                if let Some(c) = child.children.first() {
                    return Err(unexpected(&c.name, "no children"));
                }
                tx.instructions.push(Instruction::Delete(id_attr(child, "id")?));
            }
            _ => unreachable!(),
        }
    }
    Ok(tx)
}

pub fn encode_transaction(tx: &Transaction) -> String {
    let mut out = String::new();
    let mut w = ElementWriter::start(&mut out, "Transaction").body();
    for ins in &tx.instructions {
        match ins {
            Instruction::Insert(e) | Instruction::Update(e) => {
                let tag = if matches!(ins, Instruction::Insert(_)) { "Insert" } else { "Update" };
                let mut iw = ElementWriter::start(w.out(), tag).body();
                write_entity(iw.out(), e, &|_| None);
                iw.end();
            }
            Instruction::Delete(id) => ElementWriter::start(w.out(), "Delete").attr("id", &id.to_string()).end(),
        }
    }
    w.end();
    out
}

fn write_issue(out: &mut String, tag: &'static str, issue: &Issue) {
    let mut w = ElementWriter::start(out, tag)
        .attr("entity", &issue.entity.to_string())
        .attr("property", &issue.subject)
        .attr("kind", issue.kind.as_str())
        .body();
    w.out().push_str(&super::xml::escape_text(&issue.message));
    w.end();
}

fn read_issue(el: &Element) -> Result<Issue, WireError> {
    el.check_attrs(&["entity", "property", "kind"])?;
    let kind = el.required("kind")?;
    Ok(Issue::new(
        id_attr(el, "entity")?,
        el.attr("property").unwrap_or_default(),
        kind.parse::<IssueKind>().map_err(|e| invalid("kind", kind, e))?,
        el.text.clone(),
    ))
}

pub fn encode_transaction_result(r: &TransactionResult) -> String {
    let mut out = String::new();
    let mut w = ElementWriter::start(&mut out, "Response").body();
    match &r.outcome {
        Outcome::Committed { log_seq } => ElementWriter::start(w.out(), "Committed").attr("seq", &log_seq.to_string()).end(),
        Outcome::Rejected(Rejection::Invalid) => ElementWriter::start(w.out(), "Rejected").attr("reason", "invalid").end(),
        Outcome::Rejected(Rejection::Forbidden { permission, target }) => ElementWriter::start(w.out(), "Rejected")
            .attr("reason", "forbidden")
            .attr("permission", permission.as_str())
            .attr_opt("target", target.map(|t| t.to_string()).as_deref())
            .end(),
    }
    for (temp, id) in &r.id_map {
        ElementWriter::start(w.out(), "IdMapping")
            .attr("temp", &temp.to_string())
            .attr("id", &id.to_string())
            .end();
    }
    for i in &r.report.errors {
        write_issue(w.out(), "Error", i);
    }
    for i in &r.report.warnings {
        write_issue(w.out(), "Warning", i);
    }
    for i in &r.report.notes {
        write_issue(w.out(), "Note", i);
    }
    w.end();
    out
}

pub fn decode_transaction_result(text: &str) -> Result<TransactionResult, WireError> {
    let root = super::parse_document(text)?;
    if root.name != "Response" {
        return Err(unexpected(&root.name, "Response"));
    }
    let mut outcome = None;
    let mut id_map = BTreeMap::new();
    let mut report = ValidationReport::default();
    for c in &root.children {
        match c.name.as_str() {
            "Committed" => {
                let seq = c.required("seq")?;
                outcome = Some(Outcome::Committed {
                    log_seq: seq.parse().map_err(|_| invalid("seq", seq, "not a number"))?,
                });
            }
            "Rejected" => {
                let rejection = match c.required("reason")? {
                    "invalid" => Rejection::Invalid,
                    "forbidden" => {
                        let p = c.required("permission")?;
                        Rejection::Forbidden {
                            permission: p.parse::<Permission>().map_err(|e| invalid("permission", p, e))?,
                            target: c.attr("target").map(|_| id_attr(c, "target")).transpose()?,
                        }
                    }
                    other => return Err(invalid("reason", other, "unknown rejection")),
                };
                outcome = Some(Outcome::Rejected(rejection));
            }
            "IdMapping" => {
                id_map.insert(id_attr(c, "temp")?, id_attr(c, "id")?);
            }
            "Error" => report.errors.push(read_issue(c)?),
            "Warning" => report.warnings.push(read_issue(c)?),
            "Note" => report.notes.push(read_issue(c)?),
            other => return Err(unexpected(other, "transaction result element")),
        }
    }
    Ok(TransactionResult {
        outcome: outcome.ok_or_else(|| unexpected("Response", "Committed or Rejected"))?,
        id_map,
        report,
    })
}

/// Writes an entity with the names of its parents and properties.
pub fn write_named_entity(out: &mut String, e: &Entity, snap: &Snapshot) {
    write_entity(out, e, &|id| snap.get(id).map(|x| x.name.clone()));
}

pub fn encode_entity(e: &Entity, snap: &Snapshot) -> String {
    let mut out = String::new();
    write_named_entity(&mut out, e, snap);
    out
}

fn text_element(out: &mut String, tag: &'static str, text: &str) {
    let mut w = ElementWriter::start(out, tag).body();
    w.out().push_str(&super::xml::escape_text(text));
    w.end();
}

pub fn encode_query_result(result: &QueryResult, snap: &Snapshot) -> String {
    let mut out = String::new();
    let mut w = ElementWriter::start(&mut out, "Response").body();
    for warning in &result.warnings {
        text_element(w.out(), "Warning", warning);
    }
    match &result.body {
        ResultBody::Count(n) => text_element(w.out(), "Count", &n.to_string()),
        ResultBody::Entities(list) => {
            let mut ew = ElementWriter::start(w.out(), "Entities").attr("count", &list.len().to_string()).body();
            for e in list {
                write_named_entity(ew.out(), e, snap);
            }
            ew.end();
        }
        ResultBody::Table(t) => {
            let mut tw = ElementWriter::start(w.out(), "Table").body();
            let mut hw = ElementWriter::start(tw.out(), "Header").body();
            for c in &t.columns {
                text_element(hw.out(), "Column", c);
            }
            hw.end();
            for row in &t.rows {
                let mut rw = ElementWriter::start(tw.out(), "Row").body();
                for cell in row {
                    text_element(rw.out(), "Cell", cell);
                }
                rw.end();
            }
            tw.end();
        }
    }
    w.end();
    out
}

pub fn decode_query_result(text: &str, units: &UnitRegistry) -> Result<QueryResult, WireError> {
    let root = super::parse_document(text)?;
    if root.name != "Response" {
        return Err(unexpected(&root.name, "Response"));
    }
    let mut warnings = Vec::new();
    let mut body = None;
    let ctx = DecodeContext::new(units);
    for c in &root.children {
        match c.name.as_str() {
            "Warning" => warnings.push(c.text.clone()),
            "Count" => {
                let n = c.text.trim();
                body = Some(ResultBody::Count(n.parse().map_err(|_| invalid("Count", n, "not a count"))?));
            }
            "Entities" => {
                let list = c
                    .children
                    .iter()
                    .map(|e| read_entity(e, &ctx, None).map(Arc::new))
                    .collect::<Result<Vec<_>, _>>()?;
                body = Some(ResultBody::Entities(list));
            }
            "Table" => {
                let mut columns = Vec::new();
                let mut rows = Vec::new();
                for part in &c.children {
                    let cells: Vec<String> = part.children.iter().map(|x| x.text.clone()).collect();
                    match part.name.as_str() {
                        "Header" => columns = cells,
                        "Row" => rows.push(cells),
                        other => return Err(unexpected(other, "Header or Row")),
                    }
                }
                body = Some(ResultBody::Table(Table { columns, rows }));
            }
            "Error" => return Err(invalid("Response", "", c.text.clone())),
            other => return Err(unexpected(other, "query result element")),
        }
    }
    Ok(QueryResult {
        body: body.ok_or_else(|| unexpected("Response", "Count, Entities or Table"))?,
        warnings,
    })
}

/// Error document. `attrs` are extra attributes of the `<Error>` element.
pub fn encode_error(kind: &str, message: &str, attrs: &[(&str, String)]) -> String {
    let mut out = String::new();
    let mut w = ElementWriter::start(&mut out, "Response").body();
    let mut ew = ElementWriter::start(w.out(), "Error").attr("kind", kind);
    for (k, v) in attrs {
        ew = ew.attr(k, v);
    }
    let mut ew = ew.body();
    ew.out().push_str(&super::xml::escape_text(message));
    ew.end();
    w.end();
    out
}

pub fn encode_parse_error(e: &ParseError) -> String {
    encode_error(
        "syntax",
        &e.to_string(),
        &[
            ("offset", e.offset.to_string()),
            ("line", e.line.to_string()),
            ("column", e.column.to_string()),
            ("expected", e.expected.join(" | ")),
        ],
    )
}

/// The `<Error>` element of an error document: kind, attributes, message.
pub fn decode_error(text: &str) -> Option<(String, Vec<(String, String)>, String)> {
    let root = super::parse_document(text).ok()?;
    let err = root.children_named("Error").next()?;
    Some((err.attr("kind")?.to_string(), err.attrs.clone(), err.text.clone()))
}
