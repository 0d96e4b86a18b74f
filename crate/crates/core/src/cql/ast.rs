use chrono::{NaiveDate, NaiveDateTime};

use crate::datamodel::{EntityId, EntityKind};
use crate::units::CompareOp;

#[derive(Debug, Clone, PartialEq)]
pub enum Prefix {
    Find,
    Count,
    /// Non-empty list of property names to project.
    Select(Vec<String>),
}

/// Kind keyword following the prefix. `Entity` matches every kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KindRestriction {
    Entity,
    RecordType,
    Record,
    Property,
    File,
}

impl KindRestriction {
    pub const ALL: [KindRestriction; 5] = [
        KindRestriction::Entity,
        KindRestriction::RecordType,
        KindRestriction::Record,
        KindRestriction::Property,
        KindRestriction::File,
    ];

    pub fn keyword(self) -> &'static str {
        match self {
            KindRestriction::Entity => "ENTITY",
            KindRestriction::RecordType => "RECORDTYPE",
            KindRestriction::Record => "RECORD",
            KindRestriction::Property => "PROPERTY",
            KindRestriction::File => "FILE",
        }
    }

    pub fn from_keyword(word: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.keyword().eq_ignore_ascii_case(word))
    }

    pub fn admits(self, kind: EntityKind) -> bool {
        match self {
            KindRestriction::Entity => true,
            KindRestriction::RecordType => kind == EntityKind::RecordType,
            KindRestriction::Record => kind == EntityKind::Record,
            KindRestriction::Property => kind == EntityKind::AbstractProperty,
            KindRestriction::File => kind == EntityKind::File,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryAst {
    pub prefix: Prefix,
    pub kind: Option<KindRestriction>,
    /// `None` only together with a kind restriction (`FIND RECORD`).
    pub name: Option<String>,
    pub filter: Option<FilterNode>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Operator {
    Compare(CompareOp),
    Like,
}

impl Operator {
    pub fn symbol(self) -> &'static str {
        match self {
            Operator::Compare(op) => op.symbol(),
            Operator::Like => "LIKE",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    /// Magnitude plus an unresolved unit symbol.
    Quantity { magnitude: f64, unit: String },
    Text(String),
    /// `*` is the only wildcard.
    Pattern(String),
    Date(NaiveDate),
    Datetime(NaiveDateTime),
    Boolean(bool),
    Integer(i64),
    Double(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Name(String),
    Id(EntityId),
}

/// Nested name + optional filter used by (back-)reference filters.
#[derive(Debug, Clone, PartialEq)]
pub struct SubQuery {
    pub target: Target,
    pub filter: Option<Box<FilterNode>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FilterNode {
    Comparison {
        property: String,
        op: Operator,
        literal: Literal,
    },
    InYear {
        property: String,
        year: i32,
    },
    /// At least two children.
    And(Vec<FilterNode>),
    /// At least two children.
    Or(Vec<FilterNode>),
    Not(Box<FilterNode>),
    /// The entity references something matching `target`, optionally through
    /// a property named `role`.
    Reference {
        role: Option<String>,
        target: SubQuery,
    },
    /// Something matching `source` references the entity, optionally through
    /// a property named `role`.
    BackReference {
        role: Option<String>,
        source: SubQuery,
    },
}

impl FilterNode {
    pub fn depth(&self) -> usize {
        match self {
            FilterNode::Comparison { .. } | FilterNode::InYear { .. } => 1,
            FilterNode::And(c) | FilterNode::Or(c) => 1 + c.iter().map(Self::depth).max().unwrap_or(0),
            FilterNode::Not(c) => 1 + c.depth(),
            FilterNode::Reference { target: s, .. } | FilterNode::BackReference { source: s, .. } => {
                1 + s.filter.as_ref().map_or(0, |f| f.depth())
            }
        }
    }
}
