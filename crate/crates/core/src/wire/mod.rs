//! XML representation of entities and of the request/response documents.
//!
//! ```xml
//! <Entity id="12" kind="Record" name="exp1" description="...">
//!   <Parent id="3" name="Experiment"/>
//!   <Property id="5" name="date" importance="FIX" type="DATE" value="2017-03-01"/>
//!   <Property id="6" name="room_temperature" importance="FIX" type="QUANTITY" value="26" unit="°C"/>
//!   <Property id="7" name="tags" importance="FIX" type="LIST(TEXT)"><Value value="a"/></Property>
//! </Entity>
//! ```
//!
//! `Parent` and `Property` may name their target instead of giving an id;
//! the decoder resolves such names through a [`NameResolver`]. Abstract
//! properties carry a `<Datatype>` child, files a `<File>` child. Every
//! element is written on a single line so that snapshot files can store one
//! entity per line.

mod documents;
pub mod xml;

use chrono::{NaiveDate, NaiveDateTime};
use thiserror::Error;

use crate::datamodel::{
    Datatype, Entity, EntityId, EntityKind, EntityProperty, FileMeta, Importance, ScalarType, Value, ValueList,
    ValueType,
};
use crate::UnitRegistry;

pub use documents::*;
pub use xml::{parse_document, parse_elements, Element, ElementWriter};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WireError {
    #[error("malformed XML at byte {offset}: {message}")]
    Xml { offset: usize, message: String },
    #[error("unexpected element `{found}` (expected {expected})")]
    UnexpectedElement { found: String, expected: String },
    #[error("element `{element}` does not allow attribute `{attribute}`")]
    UnknownAttribute { element: String, attribute: String },
    #[error("element `{element}` requires attribute `{attribute}`")]
    MissingAttribute { element: String, attribute: String },
    #[error("invalid value `{value}` for `{attribute}`: {reason}")]
    InvalidValue {
        attribute: String,
        value: String,
        reason: String,
    },
    #[error("cannot resolve `{0}`")]
    Unresolved(String),
}

fn invalid(attribute: &str, value: &str, reason: impl Into<String>) -> WireError {
    WireError::InvalidValue {
        attribute: attribute.to_string(),
        value: value.to_string(),
        reason: reason.into(),
    }
}

/// Turns names in `Parent`/`Property` elements into ids.
pub trait NameResolver {
    /// `property` is true when the name must denote an abstract property.
    fn resolve(&self, name: &str, property: bool) -> Result<EntityId, String>;
}

/// Resolver for documents that must carry explicit ids.
pub struct IdsOnly;

impl NameResolver for IdsOnly {
    fn resolve(&self, name: &str, _property: bool) -> Result<EntityId, String> {
        Err(format!("`{name}` has no id"))
    }
}

pub struct DecodeContext<'a> {
    pub units: &'a UnitRegistry,
    pub names: &'a dyn NameResolver,
}

impl<'a> DecodeContext<'a> {
    pub fn new(units: &'a UnitRegistry) -> Self {
        DecodeContext { units, names: &IdsOnly }
    }

    pub fn with_names(units: &'a UnitRegistry, names: &'a dyn NameResolver) -> Self {
        DecodeContext { units, names }
    }
}

pub const DATETIME_FORMAT: &str = "%Y-%m-%dT%H:%M:%S%.f";
pub const DATE_FORMAT: &str = "%Y-%m-%d";

/// Shortest decimal text that parses back to the same double.
pub fn format_double(d: f64) -> String {
    d.to_string()
}

/// Text form of one scalar value (without its unit).
pub fn scalar_text(v: &Value) -> String {
    match v {
        Value::Integer(i) => i.to_string(),
        Value::Double(d) => format_double(*d),
        Value::Quantity(q) => format_double(q.magnitude()),
        Value::Text(t) => t.clone(),
        Value::Boolean(b) => if *b { "TRUE" } else { "FALSE" }.to_string(),
        Value::Datetime(dt) => dt.format(DATETIME_FORMAT).to_string(),
        Value::Date(d) => d.format(DATE_FORMAT).to_string(),
        Value::Reference(id) => id.to_string(),
        Value::List(l) => l.items().iter().map(scalar_text).collect::<Vec<_>>().join(", "),
    }
}

fn quantity_unit(v: &Value) -> Option<&str> {
    match v {
        Value::Quantity(q) => Some(q.unit().symbol()),
        _ => None,
    }
}

pub fn parse_scalar(
    ty: ScalarType,
    text: &str,
    unit: Option<&str>,
    units: &UnitRegistry,
) -> Result<Value, WireError> {
    let bad = |reason: &str| invalid("value", text, reason);
    Ok(match ty {
        ScalarType::Integer => Value::Integer(text.trim().parse().map_err(|_| bad("not an integer"))?),
        ScalarType::Double => {
            let d: f64 = text.trim().parse().map_err(|_| bad("not a number"))?;
            if !d.is_finite() {
                return Err(bad("not finite"));
            }
            Value::Double(d)
        }
        ScalarType::Quantity => {
            let magnitude: f64 = text.trim().parse().map_err(|_| bad("not a number"))?;
            let unit = units
                .resolve(unit.unwrap_or(""))
                .map_err(|e| invalid("unit", unit.unwrap_or(""), e.to_string()))?;
            Value::Quantity(crate::Quantity::new(magnitude, unit).map_err(|e| bad(&e.to_string()))?)
        }
        ScalarType::Text => Value::Text(text.to_string()),
        ScalarType::Boolean => match text.trim().to_ascii_uppercase().as_str() {
            "TRUE" => Value::Boolean(true),
            "FALSE" => Value::Boolean(false),
            _ => return Err(bad("not a boolean")),
        },
        ScalarType::Datetime => {
            let t = text.trim();
            let t = t.strip_suffix('Z').unwrap_or(t);
            Value::Datetime(NaiveDateTime::parse_from_str(t, DATETIME_FORMAT).map_err(|e| bad(&e.to_string()))?)
        }
        ScalarType::Date => {
            Value::Date(NaiveDate::parse_from_str(text.trim(), DATE_FORMAT).map_err(|e| bad(&e.to_string()))?)
        }
        ScalarType::Reference => {
            let id: EntityId = text.trim().parse().map_err(|_| bad("not an entity id"))?;
            Value::Reference(id)
        }
    })
}

/// Writes `type`, `value`/`unit` attributes and, for lists, `<Value>` children.
fn write_value<'a>(w: ElementWriter<'a>, value: &Value) -> ElementWriter<'a> {
    let w = w.attr("type", &value.value_type().to_string());
    match value {
        Value::List(list) => {
            let mut w = w.body();
            for item in list.items() {
                ElementWriter::start(w.out(), "Value")
                    .attr("value", &scalar_text(item))
                    .attr_opt("unit", quantity_unit(item))
                    .end();
            }
            w
        }
        other => w
            .attr("value", &scalar_text(other))
            .attr_opt("unit", quantity_unit(other)),
    }
}

fn read_value(el: &Element, units: &UnitRegistry) -> Result<Option<Value>, WireError> {
    let Some(ty) = el.attr("type") else {
        if el.attr("value").is_some() {
            return Err(WireError::MissingAttribute {
                element: el.name.clone(),
                attribute: "type".into(),
            });
        }
        return Ok(None);
    };
    let ty: ValueType = ty.parse().map_err(|e: String| invalid("type", ty, e))?;
    match ty {
        ValueType::Scalar(s) => {
            if let Some(c) = el.children.first() {
                return Err(WireError::UnexpectedElement {
                    found: c.name.clone(),
                    expected: "no children for a scalar value".into(),
                });
            }
            let text = el.required("value")?;
            let unit = if s == ScalarType::Quantity { el.attr("unit") } else { None };
            parse_scalar(s, text, unit, units).map(Some)
        }
        ValueType::List(s) => {
            if el.attr("value").is_some() {
                return Err(invalid("value", el.attr("value").unwrap_or(""), "list values use <Value> children"));
            }
            let mut items = Vec::new();
            for child in &el.children {
                if child.name != "Value" {
                    return Err(WireError::UnexpectedElement {
                        found: child.name.clone(),
                        expected: "Value".into(),
                    });
                }
                child.check_attrs(&["value", "unit"])?;
                let unit = if s == ScalarType::Quantity { child.attr("unit") } else { None };
                items.push(parse_scalar(s, child.required("value")?, unit, units)?);
            }
            let list = ValueList::new(s, items).map_err(|e| invalid("type", &ty.to_string(), e))?;
            Ok(Some(Value::List(list)))
        }
    }
}

/// Encodes an entity. `names` supplies the informational `name` attributes of
/// `Parent` and `Property` children; pass `|_| None` to omit them.
pub fn write_entity(out: &mut String, e: &Entity, names: &dyn Fn(EntityId) -> Option<String>) {
    let mut w = ElementWriter::start(out, "Entity")
        .attr("id", &e.id.to_string())
        .attr("kind", e.kind.as_str())
        .attr("name", &e.name)
        .attr_opt("description", e.description.as_deref())
        .body();
    for parent in &e.parents {
        ElementWriter::start(w.out(), "Parent")
            .attr("id", &parent.to_string())
            .attr_opt("name", names(*parent).as_deref())
            .end();
    }
    for prop in &e.properties {
        let pw = ElementWriter::start(w.out(), "Property")
            .attr("id", &prop.property.to_string())
            .attr_opt("name", names(prop.property).as_deref())
            .attr("importance", prop.importance.as_str())
            .attr_opt("unit", prop.unit.as_deref());
        let pw = match &prop.value {
            Some(v) => write_value(pw, v),
            None => pw,
        };
        pw.end();
    }
    if let Some(dt) = &e.datatype {
        let value_type = dt.value_type.map(|t| t.to_string());
        let mut dw = ElementWriter::start(w.out(), "Datatype")
            .attr_opt("type", value_type.as_deref())
            .attr_opt("unit", dt.unit.as_deref())
            .attr_opt("min", dt.min.map(format_double).as_deref())
            .attr_opt("max", dt.max.map(format_double).as_deref());
        if let Some(default) = &dt.default {
            dw = dw.body();
            write_value(ElementWriter::start(dw.out(), "Default"), default).end();
        }
        dw.end();
    }
    if let Some(f) = &e.file {
        ElementWriter::start(w.out(), "File")
            .attr("path", &f.path)
            .attr("size", &f.size.to_string())
            .attr("checksum", &f.checksum)
            .end();
    }
    w.end();
}

pub fn entity_to_xml(e: &Entity) -> String {
    let mut s = String::new();
    write_entity(&mut s, e, &|_| None);
    s
}

fn resolve_ref(el: &Element, ctx: &DecodeContext<'_>, property: bool) -> Result<EntityId, WireError> {
    if let Some(id) = el.attr("id") {
        return id.parse().map_err(|_| invalid("id", id, "not an entity id"));
    }
    match el.attr("name") {
        Some(name) => ctx
            .names
            .resolve(name, property)
            .map_err(WireError::Unresolved),
        None => Err(WireError::MissingAttribute {
            element: el.name.clone(),
            attribute: "id".into(),
        }),
    }
}

fn parse_f64_attr(el: &Element, key: &str) -> Result<Option<f64>, WireError> {
    el.attr(key)
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .ok()
                .filter(|d| d.is_finite())
                .ok_or_else(|| invalid(key, v, "not a finite number"))
        })
        .transpose()
}

/// Decodes an `<Entity>` element. A missing `id` yields `fallback_id`.
pub fn read_entity(el: &Element, ctx: &DecodeContext<'_>, fallback_id: Option<EntityId>) -> Result<Entity, WireError> {
    if el.name != "Entity" {
        return Err(WireError::UnexpectedElement {
            found: el.name.clone(),
            expected: "Entity".into(),
        });
    }
    el.check_attrs(&["id", "kind", "name", "description"])?;
    let id = match (el.attr("id"), fallback_id) {
        (Some(id), _) => id.parse().map_err(|_| invalid("id", id, "not an entity id"))?,
        (None, Some(id)) => id,
        (None, None) => return Err(WireError::MissingAttribute { element: "Entity".into(), attribute: "id".into() }),
    };
    let kind_text = el.required("kind")?;
    let kind: EntityKind = kind_text.parse().map_err(|e: String| invalid("kind", kind_text, e))?;
    let mut entity = Entity::new(id, kind, el.required("name")?);
    entity.description = el.attr("description").map(String::from);
    for child in &el.children {
        match child.name.as_str() {
            "Parent" => {
                child.check_attrs(&["id", "name"])?;
                entity.parents.push(resolve_ref(child, ctx, false)?);
            }
            "Property" => {
                child.check_attrs(&["id", "name", "importance", "type", "value", "unit"])?;
                let property = resolve_ref(child, ctx, true)?;
                let importance = match child.attr("importance") {
                    Some(s) => s.parse::<Importance>().map_err(|e| invalid("importance", s, e))?,
                    None => Importance::Fix,
                };
                let value = read_value(child, ctx.units)?;
                let unit = match value {
                    Some(Value::Quantity(_)) => None,
                    _ => child.attr("unit").map(String::from),
                };
                entity.properties.push(EntityProperty {
                    property,
                    value,
                    importance,
                    unit,
                });
            }
            "Datatype" => {
                child.check_attrs(&["type", "unit", "min", "max"])?;
                let value_type = child
                    .attr("type")
                    .map(|t| t.parse::<ValueType>().map_err(|e| invalid("type", t, e)))
                    .transpose()?;
                let mut default = None;
                for d in &child.children {
                    if d.name != "Default" || default.is_some() {
                        return Err(WireError::UnexpectedElement {
                            found: d.name.clone(),
                            expected: "at most one Default".into(),
                        });
                    }
                    d.check_attrs(&["type", "value", "unit"])?;
                    default = read_value(d, ctx.units)?;
                }
                entity.datatype = Some(Datatype {
                    value_type,
                    unit: child.attr("unit").map(String::from),
                    default,
                    min: parse_f64_attr(child, "min")?,
                    max: parse_f64_attr(child, "max")?,
                });
            }
            "File" => {
                child.check_attrs(&["path", "size", "checksum"])?;
                let size = child.required("size")?;
                entity.file = Some(FileMeta {
                    path: child.required("path")?.to_string(),
                    size: size.parse().map_err(|_| invalid("size", size, "not a byte count"))?,
                    checksum: child.required("checksum")?.to_string(),
                });
            }
            other => {
                return Err(WireError::UnexpectedElement {
                    found: other.to_string(),
                    expected: "Parent, Property, Datatype or File".into(),
                })
            }
        }
    }
    Ok(entity)
}

pub fn entity_from_xml(text: &str, units: &UnitRegistry) -> Result<Entity, WireError> {
    read_entity(&parse_document(text)?, &DecodeContext::new(units), None)
}
