//! Core of the caos research data store.
//!
//! An entity graph with inherited property obligations, a unit-aware query
//! language, an ACID embedded store and role-based access control.

pub mod acl;
pub mod cql;
pub mod datamodel;
pub mod eval;
pub mod store;
pub mod units;
pub mod wire;

/// Unit over `f64` magnitudes, the precision used by stored values.
pub type Unit = units::Unit<f64>;
/// Quantity over `f64` magnitudes.
pub type Quantity = units::Quantity<f64>;
/// Unit registry over `f64` magnitudes.
pub type UnitRegistry = units::UnitRegistry<f64>;

pub use datamodel::{
    Datatype, Entity, EntityId, EntityKind, EntityProperty, Importance, ScalarType, ValidationReport, Value,
    ValueList, ValueType,
};
