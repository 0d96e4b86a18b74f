//! Text forms of commit records, log entries and snapshot files.

use std::sync::Arc;

use chrono::{DateTime, Utc};

use crate::datamodel::{Entity, EntityId};
use crate::wire::{self, DecodeContext, Element, ElementWriter, WireError};
use crate::UnitRegistry;

use super::transaction::{Applied, Change, ChangeOp, CommitRecord, LogEntry};

const TIME_FORMAT: &str = "%Y-%m-%dT%H:%M:%S%.fZ";

pub(crate) fn format_time(t: &DateTime<Utc>) -> String {
    t.format(TIME_FORMAT).to_string()
}

fn parse_time(s: &str) -> Result<DateTime<Utc>, WireError> {
    DateTime::parse_from_rfc3339(s)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| bad("time", s, e.to_string()))
}

fn bad(attribute: &str, value: &str, reason: impl Into<String>) -> WireError {
    WireError::InvalidValue {
        attribute: attribute.into(),
        value: value.into(),
        reason: reason.into(),
    }
}

fn expect(el: &Element, name: &str) -> Result<(), WireError> {
    if el.name == name {
        Ok(())
    } else {
        Err(WireError::UnexpectedElement {
            found: el.name.clone(),
            expected: name.into(),
        })
    }
}

fn num<T: std::str::FromStr>(el: &Element, key: &str) -> Result<T, WireError> {
    let v = el.required(key)?;
    v.parse().map_err(|_| bad(key, v, "not a number"))
}

fn id_attr(el: &Element, key: &str) -> Result<EntityId, WireError> {
    let v = el.required(key)?;
    v.parse().map_err(|_| bad(key, v, "not an entity id"))
}

pub(crate) fn encode_commit(rec: &CommitRecord) -> String {
    let mut out = String::new();
    let mut w = ElementWriter::start(&mut out, "Commit")
        .attr("seq", &rec.seq.to_string())
        .attr("time", &format_time(&rec.timestamp))
        .attr("principal", &rec.principal)
        .attr("next-id", &rec.next_id.to_string())
        .body();
    for change in &rec.changes {
        match change {
            Applied::Put(op, e) => {
                let tag = if *op == ChangeOp::Insert { "Insert" } else { "Update" };
                let mut cw = ElementWriter::start(w.out(), tag).body();
                wire::write_entity(cw.out(), e, &|_| None);
                cw.end();
            }
            Applied::Delete(id, name) => ElementWriter::start(w.out(), "Delete")
                .attr("id", &id.to_string())
                .attr("name", name)
                .end(),
        }
    }
    w.end();
    out
}

pub(crate) fn decode_commit(text: &str, units: &UnitRegistry) -> Result<CommitRecord, WireError> {
    let root = wire::parse_document(text)?;
    expect(&root, "Commit")?;
    let ctx = DecodeContext::new(units);
    let mut changes = Vec::new();
    for child in &root.children {
        match child.name.as_str() {
            "Insert" | "Update" => {
                let op = if child.name == "Insert" { ChangeOp::Insert } else { ChangeOp::Update };
                let [entity] = &child.children[..] else {
                    return Err(bad(&child.name, "", "expected exactly one entity"));
                };
                changes.push(Applied::Put(op, Arc::new(wire::read_entity(entity, &ctx, None)?)));
            }
            "Delete" => changes.push(Applied::Delete(
                id_attr(child, "id")?,
                child.attr("name").unwrap_or_default().to_string(),
            )),
            other => {
                return Err(WireError::UnexpectedElement {
                    found: other.into(),
                    expected: "Insert, Update or Delete".into(),
                })
            }
        }
    }
    Ok(CommitRecord {
        seq: num(&root, "seq")?,
        timestamp: parse_time(root.required("time")?)?,
        principal: root.required("principal")?.to_string(),
        next_id: num(&root, "next-id")?,
        changes,
    })
}

pub fn write_log_entry(out: &mut String, entry: &LogEntry) {
    let mut w = ElementWriter::start(out, "LogEntry")
        .attr("seq", &entry.seq.to_string())
        .attr("time", &format_time(&entry.timestamp))
        .attr("principal", &entry.principal)
        .body();
    for c in &entry.changes {
        ElementWriter::start(w.out(), "Change")
            .attr("op", c.op.as_str())
            .attr("id", &c.id.to_string())
            .attr("name", &c.name)
            .end();
    }
    w.end();
}

pub fn read_log_entry(el: &Element) -> Result<LogEntry, WireError> {
    expect(el, "LogEntry")?;
    let mut changes = Vec::new();
    for c in &el.children {
        expect(c, "Change")?;
        let op = c.required("op")?;
        changes.push(Change {
            op: op.parse().map_err(|e: String| bad("op", op, e))?,
            id: id_attr(c, "id")?,
            name: c.attr("name").unwrap_or_default().to_string(),
        });
    }
    Ok(LogEntry {
        seq: num(el, "seq")?,
        timestamp: parse_time(el.required("time")?)?,
        principal: el.required("principal")?.to_string(),
        changes,
    })
}

/// Snapshot file: a header line, then one log entry or entity per line.
pub(crate) fn encode_snapshot<'a>(
    seq: u64,
    next_id: i64,
    log: &[LogEntry],
    entities: impl Iterator<Item = &'a Arc<Entity>>,
) -> String {
    let mut out = String::new();
    ElementWriter::start(&mut out, "Snapshot")
        .attr("seq", &seq.to_string())
        .attr("next-id", &next_id.to_string())
        .end();
    out.push('\n');
    for entry in log {
        write_log_entry(&mut out, entry);
        out.push('\n');
    }
    for e in entities {
        wire::write_entity(&mut out, e, &|_| None);
        out.push('\n');
    }
    out
}

pub(crate) struct SnapshotFile {
    pub seq: u64,
    pub next_id: i64,
    pub log: Vec<LogEntry>,
    pub entities: Vec<Entity>,
}

pub(crate) fn decode_snapshot(text: &str, units: &UnitRegistry) -> Result<SnapshotFile, WireError> {
    let elements = wire::parse_elements(text)?;
    let mut iter = elements.iter();
    let header = iter.next().ok_or_else(|| bad("Snapshot", "", "empty snapshot file"))?;
    expect(header, "Snapshot")?;
    let ctx = DecodeContext::new(units);
    let mut file = SnapshotFile {
        seq: num(header, "seq")?,
        next_id: num(header, "next-id")?,
        log: Vec::new(),
        entities: Vec::new(),
    };
    for el in iter {
        match el.name.as_str() {
            "LogEntry" => file.log.push(read_log_entry(el)?),
            _ => file.entities.push(wire::read_entity(el, &ctx, None)?),
        }
    }
    Ok(file)
}
