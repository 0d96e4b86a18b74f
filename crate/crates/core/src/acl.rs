//! Role-based access control: principals, rules, the user registry and
//! network-derived roles.
//!
//! Rule resolution: among the rules that apply to any of the principal's
//! roles, per-entity rules beat global ones, and within one scope a deny
//! beats an allow. Without an applicable rule the answer is deny.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::net::IpAddr;
use std::str::FromStr;
use std::sync::OnceLock;

use argon2::password_hash::{PasswordHash, PasswordHasher, PasswordVerifier, SaltString};
use argon2::Argon2;
use ipnet::IpNet;
use thiserror::Error;

use crate::datamodel::EntityId;

pub const ANONYMOUS_ROLE: &str = "anonymous";
pub const ADMIN_ROLE: &str = "admin";

const USERS_HEADER: &str = "# caos-users 1";
const RULES_HEADER: &str = "# caos-rules 1";
const NETWORKS_HEADER: &str = "# caos-networks 1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Principal {
    pub name: String,
    pub roles: BTreeSet<String>,
    pub authenticated: bool,
}

impl Principal {
    pub fn anonymous() -> Self {
        Principal {
            name: ANONYMOUS_ROLE.to_string(),
            roles: BTreeSet::from([ANONYMOUS_ROLE.to_string()]),
            authenticated: false,
        }
    }

    pub fn user<I, S>(name: impl Into<String>, roles: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Principal {
            name: name.into(),
            roles: roles.into_iter().map(Into::into).collect(),
            authenticated: true,
        }
    }

    /// The operator acting through local tools.
    pub fn admin() -> Self {
        Principal::user(ADMIN_ROLE, [ADMIN_ROLE])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Permission {
    Insert,
    Update,
    Retrieve,
    Delete,
    ReadLog,
    Admin,
}

impl Permission {
    pub const ALL: [Permission; 6] = [
        Permission::Insert,
        Permission::Update,
        Permission::Retrieve,
        Permission::Delete,
        Permission::ReadLog,
        Permission::Admin,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Permission::Insert => "insert",
            Permission::Update => "update",
            Permission::Retrieve => "retrieve",
            Permission::Delete => "delete",
            Permission::ReadLog => "read-log",
            Permission::Admin => "admin",
        }
    }
}

impl fmt::Display for Permission {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Permission {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Permission::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| format!("unknown permission `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scope {
    Global,
    Entity(EntityId),
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scope::Global => f.write_str("global"),
            Scope::Entity(id) => write!(f, "{id}"),
        }
    }
}

impl FromStr for Scope {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "global" {
            return Ok(Scope::Global);
        }
        s.parse::<EntityId>()
            .ok()
            .filter(|id| !id.is_temporary())
            .map(Scope::Entity)
            .ok_or_else(|| format!("scope must be `global` or an entity id, got `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Effect {
    Allow,
    Deny,
}

impl Effect {
    fn combine(a: Option<Effect>, b: Effect) -> Effect {
        match a {
            Some(Effect::Deny) => Effect::Deny,
            _ => b,
        }
    }
}

impl fmt::Display for Effect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Effect::Allow => "allow",
            Effect::Deny => "deny",
        })
    }
}

impl FromStr for Effect {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "allow" => Ok(Effect::Allow),
            "deny" => Ok(Effect::Deny),
            _ => Err(format!("effect must be `allow` or `deny`, got `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AclRule {
    pub role: String,
    pub permission: Permission,
    pub scope: Scope,
    pub effect: Effect,
}

impl AclRule {
    pub fn new(role: impl Into<String>, permission: Permission, scope: Scope, effect: Effect) -> Self {
        AclRule {
            role: role.into(),
            permission,
            scope,
            effect,
        }
    }
}

#[derive(Debug, Clone, Default)]
struct Grants {
    global: Option<Effect>,
    entities: HashMap<EntityId, Effect>,
}

/// Precomputed answer of a ruleset for one principal and permission.
#[derive(Debug)]
pub struct Access<'a> {
    global: Effect,
    entities: Vec<&'a HashMap<EntityId, Effect>>,
}

impl Access<'_> {
    pub fn check(&self, target: EntityId) -> Effect {
        let mut specific = None;
        for map in &self.entities {
            if let Some(effect) = map.get(&target) {
                specific = Some(Effect::combine(specific, *effect));
            }
        }
        specific.unwrap_or(self.global)
    }

    pub fn allows(&self, target: EntityId) -> bool {
        self.check(target) == Effect::Allow
    }
}

/// An ordered list of rules with a lookup index.
#[derive(Debug, Clone, Default)]
pub struct Ruleset {
    rules: Vec<AclRule>,
    index: HashMap<Permission, HashMap<String, Grants>>,
}

impl PartialEq for Ruleset {
    fn eq(&self, other: &Self) -> bool {
        self.rules == other.rules
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AclError {
    #[error("line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error("invalid name `{0}`")]
    InvalidName(String),
    #[error("user `{0}` already exists")]
    DuplicateUser(String),
    #[error("no such user `{0}`")]
    UnknownUser(String),
    #[error("password hashing failed: {0}")]
    Hash(String),
}

fn format_err(line: usize, reason: impl Into<String>) -> AclError {
    AclError::Format {
        line,
        reason: reason.into(),
    }
}

/// Role and user names: non-empty, no whitespace, no commas.
pub fn valid_name(s: &str) -> bool {
    !s.is_empty() && !s.chars().any(|c| c.is_whitespace() || c == ',' || c.is_control())
}

impl Ruleset {
    pub fn new(rules: impl IntoIterator<Item = AclRule>) -> Self {
        let mut set = Ruleset::default();
        for rule in rules {
            set.push(rule);
        }
        set
    }

    /// Every permission, globally, for the `admin` role.
    pub fn admin_only() -> Self {
        Ruleset::new(
            Permission::ALL
                .into_iter()
                .map(|p| AclRule::new(ADMIN_ROLE, p, Scope::Global, Effect::Allow)),
        )
    }

    pub fn push(&mut self, rule: AclRule) {
        let grants = self
            .index
            .entry(rule.permission)
            .or_default()
            .entry(rule.role.clone())
            .or_default();
        match rule.scope {
            Scope::Global => grants.global = Some(Effect::combine(grants.global, rule.effect)),
            Scope::Entity(id) => {
                let current = grants.entities.get(&id).copied();
                grants.entities.insert(id, Effect::combine(current, rule.effect));
            }
        }
        self.rules.push(rule);
    }

    pub fn rules(&self) -> &[AclRule] {
        &self.rules
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// Removes every rule equal to `rule`; returns how many were removed.
    pub fn remove(&mut self, rule: &AclRule) -> usize {
        let before = self.rules.len();
        let kept: Vec<AclRule> = self.rules.drain(..).filter(|r| r != rule).collect();
        *self = Ruleset::new(kept);
        before - self.rules.len()
    }

    pub fn check(&self, p: &Principal, permission: Permission, target: Option<EntityId>) -> Effect {
        let Some(by_role) = self.index.get(&permission) else {
            return Effect::Deny;
        };
        let mut specific = None;
        let mut global = None;
        for role in &p.roles {
            let Some(grants) = by_role.get(role.as_str()) else {
                continue;
            };
            if let Some(effect) = target.and_then(|t| grants.entities.get(&t)) {
                specific = Some(Effect::combine(specific, *effect));
            }
            if let Some(effect) = grants.global {
                global = Some(Effect::combine(global, effect));
            }
        }
        specific.or(global).unwrap_or(Effect::Deny)
    }

    pub fn allows(&self, p: &Principal, permission: Permission, target: Option<EntityId>) -> bool {
        self.check(p, permission, target) == Effect::Allow
    }

    /// `check` with principal and permission fixed, for testing many targets.
    pub fn access(&self, p: &Principal, permission: Permission) -> Access<'_> {
        let mut access = Access {
            global: Effect::Deny,
            entities: Vec::new(),
        };
        let Some(by_role) = self.index.get(&permission) else {
            return access;
        };
        let mut global = None;
        for grants in p.roles.iter().filter_map(|r| by_role.get(r.as_str())) {
            if !grants.entities.is_empty() {
                access.entities.push(&grants.entities);
            }
            if let Some(effect) = grants.global {
                global = Some(Effect::combine(global, effect));
            }
        }
        access.global = global.unwrap_or(Effect::Deny);
        access
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{RULES_HEADER}\n# role\tpermission\tscope\teffect\n");
        for r in &self.rules {
            out.push_str(&format!("{}\t{}\t{}\t{}\n", r.role, r.permission, r.scope, r.effect));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, AclError> {
        let mut set = Ruleset::default();
        for (n, line) in records(text, RULES_HEADER)? {
            let fields: Vec<&str> = line.split('\t').collect();
            let [role, permission, scope, effect] = fields[..] else {
                return Err(format_err(n, format!("expected 4 tab-separated fields, found {}", fields.len())));
            };
            if !valid_name(role) {
                return Err(format_err(n, format!("invalid role `{role}`")));
            }
            set.push(AclRule {
                role: role.to_string(),
                permission: permission.parse().map_err(|e| format_err(n, e))?,
                scope: scope.parse().map_err(|e| format_err(n, e))?,
                effect: effect.parse().map_err(|e| format_err(n, e))?,
            });
        }
        Ok(set)
    }
}

/// Non-comment lines with their 1-based numbers, after checking the header.
fn records<'a>(text: &'a str, header: &str) -> Result<Vec<(usize, &'a str)>, AclError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, first)) if first.trim_end() == header => {}
        _ => return Err(format_err(1, format!("missing header `{header}`"))),
    }
    Ok(lines
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserRecord {
    pub name: String,
    /// PHC string; carries algorithm, parameters and salt.
    pub password_hash: String,
    pub roles: BTreeSet<String>,
}

/// Result of a login attempt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AuthOutcome {
    Authenticated(Principal),
    /// Carries the anonymous principal.
    Failed(Principal),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct UserRegistry {
    users: BTreeMap<String, UserRecord>,
}

pub fn hash_password(password: &str) -> Result<String, AclError> {
    let bytes: [u8; 16] = rand::random();
    let salt = SaltString::encode_b64(&bytes).map_err(|e| AclError::Hash(e.to_string()))?;
    Argon2::default()
        .hash_password(password.as_bytes(), &salt)
        .map(|h| h.to_string())
        .map_err(|e| AclError::Hash(e.to_string()))
}

fn verify_password(password: &str, phc: &str) -> bool {
    match PasswordHash::new(phc) {
        Ok(parsed) => Argon2::default().verify_password(password.as_bytes(), &parsed).is_ok(),
        Err(_) => false,
    }
}

/// Hash checked for unknown users so that their rejection costs the same.
fn dummy_hash() -> &'static str {
    static DUMMY: OnceLock<String> = OnceLock::new();
    DUMMY.get_or_init(|| hash_password("\u{0}unused\u{0}").expect("hashing a constant"))
}

impl UserRegistry {
    pub fn users(&self) -> impl Iterator<Item = &UserRecord> {
        self.users.values()
    }

    pub fn get(&self, name: &str) -> Option<&UserRecord> {
        self.users.get(name)
    }

    pub fn add_user<I, S>(&mut self, name: &str, password: &str, roles: I) -> Result<(), AclError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        if !valid_name(name) {
            return Err(AclError::InvalidName(name.to_string()));
        }
        if self.users.contains_key(name) {
            return Err(AclError::DuplicateUser(name.to_string()));
        }
        let roles: BTreeSet<String> = roles.into_iter().map(Into::into).collect();
        if let Some(bad) = roles.iter().find(|r| !valid_name(r)) {
            return Err(AclError::InvalidName(bad.clone()));
        }
        let record = UserRecord {
            name: name.to_string(),
            password_hash: hash_password(password)?,
            roles,
        };
        self.users.insert(name.to_string(), record);
        Ok(())
    }

    pub fn set_password(&mut self, name: &str, password: &str) -> Result<(), AclError> {
        let hash = hash_password(password)?;
        let user = self
            .users
            .get_mut(name)
            .ok_or_else(|| AclError::UnknownUser(name.to_string()))?;
        user.password_hash = hash;
        Ok(())
    }

    pub fn set_roles<I, S>(&mut self, name: &str, roles: I) -> Result<(), AclError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let roles: BTreeSet<String> = roles.into_iter().map(Into::into).collect();
        if let Some(bad) = roles.iter().find(|r| !valid_name(r)) {
            return Err(AclError::InvalidName(bad.clone()));
        }
        let user = self
            .users
            .get_mut(name)
            .ok_or_else(|| AclError::UnknownUser(name.to_string()))?;
        user.roles = roles;
        Ok(())
    }

    pub fn remove_user(&mut self, name: &str) -> Result<(), AclError> {
        self.users
            .remove(name)
            .map(|_| ())
            .ok_or_else(|| AclError::UnknownUser(name.to_string()))
    }

    /// Unknown users and wrong passwords fail identically, after the same
    /// amount of hashing work.
    pub fn authenticate(&self, name: &str, password: &str) -> AuthOutcome {
        match self.users.get(name) {
            Some(user) if verify_password(password, &user.password_hash) => {
                AuthOutcome::Authenticated(Principal::user(&user.name, user.roles.iter().cloned()))
            }
            Some(_) => AuthOutcome::Failed(Principal::anonymous()),
            None => {
                verify_password(password, dummy_hash());
                AuthOutcome::Failed(Principal::anonymous())
            }
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{USERS_HEADER}\n# name\tpassword hash\troles\n");
        for u in self.users.values() {
            let roles: Vec<&str> = u.roles.iter().map(String::as_str).collect();
            out.push_str(&format!("{}\t{}\t{}\n", u.name, u.password_hash, roles.join(",")));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, AclError> {
        let mut reg = UserRegistry::default();
        for (n, line) in records(text, USERS_HEADER)? {
            let fields: Vec<&str> = line.split('\t').collect();
            let [name, hash, roles] = fields[..] else {
                return Err(format_err(n, format!("expected 3 tab-separated fields, found {}", fields.len())));
            };
            if !valid_name(name) {
                return Err(format_err(n, format!("invalid user name `{name}`")));
            }
            PasswordHash::new(hash).map_err(|e| format_err(n, format!("bad password hash: {e}")))?;
            let roles: BTreeSet<String> = roles.split(',').filter(|r| !r.is_empty()).map(String::from).collect();
            if let Some(bad) = roles.iter().find(|r| !valid_name(r)) {
                return Err(format_err(n, format!("invalid role `{bad}`")));
            }
            if reg.users.contains_key(name) {
                return Err(format_err(n, format!("duplicate user `{name}`")));
            }
            reg.users.insert(
                name.to_string(),
                UserRecord {
                    name: name.to_string(),
                    password_hash: hash.to_string(),
                    roles,
                },
            );
        }
        Ok(reg)
    }
}

/// Static mapping from address ranges to extra roles, applied at login.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NetworkRoles {
    entries: Vec<(IpNet, BTreeSet<String>)>,
}

impl NetworkRoles {
    pub fn roles_for(&self, addr: IpAddr) -> BTreeSet<String> {
        let addr = match addr {
            IpAddr::V6(v6) => v6.to_ipv4_mapped().map_or(addr, IpAddr::V4),
            v4 => v4,
        };
        self.entries
            .iter()
            .filter(|(net, _)| net.contains(&addr))
            .flat_map(|(_, roles)| roles.iter().cloned())
            .collect()
    }

    pub fn from_text(text: &str) -> Result<Self, AclError> {
        let mut entries = Vec::new();
        for (n, line) in records(text, NETWORKS_HEADER)? {
            let fields: Vec<&str> = line.split('\t').collect();
            let [net, roles] = fields[..] else {
                return Err(format_err(n, format!("expected 2 tab-separated fields, found {}", fields.len())));
            };
            let net: IpNet = net.parse().map_err(|e| format_err(n, format!("`{net}`: {e}")))?;
            let roles: BTreeSet<String> = roles.split(',').filter(|r| !r.is_empty()).map(String::from).collect();
            if let Some(bad) = roles.iter().find(|r| !valid_name(r)) {
                return Err(format_err(n, format!("invalid role `{bad}`")));
            }
            entries.push((net, roles));
        }
        Ok(NetworkRoles { entries })
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{NETWORKS_HEADER}\n# cidr\troles\n");
        for (net, roles) in &self.entries {
            let roles: Vec<&str> = roles.iter().map(String::as_str).collect();
            out.push_str(&format!("{net}\t{}\n", roles.join(",")));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn id(v: i64) -> EntityId {
        EntityId::new(v).unwrap()
    }

    fn role(r: &str) -> Principal {
        Principal::user("u", [r])
    }

    #[test]
    fn empty_ruleset_denies() {
        let set = Ruleset::default();
        for p in Permission::ALL {
            assert_eq!(set.check(&Principal::admin(), p, None), Effect::Deny);
            assert_eq!(set.check(&Principal::anonymous(), p, Some(id(1))), Effect::Deny);
        }
    }

    #[test]
    fn entity_scope_beats_global() {
        let set = Ruleset::new([
            AclRule::new("R", Permission::Retrieve, Scope::Global, Effect::Allow),
            AclRule::new("R", Permission::Retrieve, Scope::Entity(id(1)), Effect::Deny),
        ]);
        assert_eq!(set.check(&role("R"), Permission::Retrieve, Some(id(1))), Effect::Deny);
        assert_eq!(set.check(&role("R"), Permission::Retrieve, Some(id(2))), Effect::Allow);
        assert_eq!(set.check(&role("R"), Permission::Update, Some(id(2))), Effect::Deny);
    }

    #[test]
    fn deny_overrides_across_roles() {
        let set = Ruleset::new([
            AclRule::new("R", Permission::Retrieve, Scope::Global, Effect::Deny),
            AclRule::new("S", Permission::Retrieve, Scope::Global, Effect::Allow),
        ]);
        let p = Principal::user("u", ["R", "S"]);
        assert_eq!(set.check(&p, Permission::Retrieve, None), Effect::Deny);
        assert_eq!(set.check(&role("S"), Permission::Retrieve, None), Effect::Allow);
    }

    #[test]
    fn rules_text_round_trip() {
        let set = Ruleset::new([
            AclRule::new("R", Permission::ReadLog, Scope::Global, Effect::Allow),
            AclRule::new("S", Permission::Delete, Scope::Entity(id(42)), Effect::Deny),
        ]);
        let text = set.to_text();
        assert!(text.starts_with("# caos-rules 1\n"));
        assert_eq!(Ruleset::from_text(&text).unwrap(), set);
        assert!(Ruleset::from_text("R\tinsert\tglobal\tallow\n").is_err());
        assert!(Ruleset::from_text("# caos-rules 1\nR\tinsert\tglobal\n").is_err());
        assert!(Ruleset::from_text("# caos-rules 1\nR\tfly\tglobal\tallow\n").is_err());
        assert!(Ruleset::from_text("# caos-rules 1\nR\tinsert\t0\tallow\n").is_err());
    }

    #[test]
    fn authentication() {
        let mut reg = UserRegistry::default();
        reg.add_user("ada", "secret", ["curator"]).unwrap();
        match reg.authenticate("ada", "secret") {
            AuthOutcome::Authenticated(p) => {
                assert!(p.authenticated);
                assert!(p.roles.contains("curator"));
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(reg.authenticate("ada", "wrong"), AuthOutcome::Failed(Principal::anonymous()));
        assert_eq!(reg.authenticate("ada", ""), AuthOutcome::Failed(Principal::anonymous()));
        assert_eq!(reg.authenticate("bob", "secret"), AuthOutcome::Failed(Principal::anonymous()));
        let text = reg.to_text();
        assert!(!text.contains("secret"));
        let back = UserRegistry::from_text(&text).unwrap();
        assert_eq!(back, reg);
        assert!(matches!(back.authenticate("ada", "secret"), AuthOutcome::Authenticated(_)));
        assert!(reg.add_user("ada", "x", ["r"]).is_err());
        assert!(reg.add_user("a b", "x", ["r"]).is_err());
    }

    #[test]
    fn network_roles() {
        let nets = NetworkRoles::from_text("# caos-networks 1\n10.0.0.0/8\tlab,staff\n::1/128\tlocal\n").unwrap();
        assert_eq!(nets.roles_for("10.1.2.3".parse().unwrap()), BTreeSet::from(["lab".into(), "staff".into()]));
        assert!(nets.roles_for("192.168.0.1".parse().unwrap()).is_empty());
        assert_eq!(nets.roles_for("::ffff:10.0.0.1".parse().unwrap()).len(), 2);
        assert_eq!(nets.roles_for("::1".parse().unwrap()), BTreeSet::from(["local".into()]));
        assert_eq!(NetworkRoles::from_text(&nets.to_text()).unwrap(), nets);
    }

    const ROLES: [&str; 4] = ["r0", "r1", "r2", "r3"];

    fn arb_rule() -> impl Strategy<Value = AclRule> {
        (0..4usize, 0..6usize, 0..3i64, any::<bool>()).prop_map(|(r, p, s, allow)| AclRule {
            role: ROLES[r].to_string(),
            permission: Permission::ALL[p],
            scope: if s == 0 { Scope::Global } else { Scope::Entity(EntityId::new(s).unwrap()) },
            effect: if allow { Effect::Allow } else { Effect::Deny },
        })
    }

    fn arb_principal() -> impl Strategy<Value = Principal> {
        proptest::sample::subsequence(ROLES.to_vec(), 0..=4).prop_map(|roles| Principal::user("p", roles))
    }

    /// Definitional reading of the resolution rule.
    fn oracle(rules: &[AclRule], p: &Principal, perm: Permission, target: Option<EntityId>) -> Effect {
        let applicable: Vec<&AclRule> = rules
            .iter()
            .filter(|r| r.permission == perm && p.roles.contains(&r.role))
            .collect();
        let specific: Vec<&&AclRule> = applicable
            .iter()
            .filter(|r| matches!(r.scope, Scope::Entity(e) if Some(e) == target))
            .collect();
        let chosen: Vec<Effect> = if specific.is_empty() {
            applicable.iter().filter(|r| r.scope == Scope::Global).map(|r| r.effect).collect()
        } else {
            specific.iter().map(|r| r.effect).collect()
        };
        if chosen.contains(&Effect::Deny) || chosen.is_empty() {
            Effect::Deny
        } else {
            Effect::Allow
        }
    }

    proptest! {
        #[test]
        fn check_matches_oracle_and_survives_reload(
            rules in proptest::collection::vec(arb_rule(), 0..24),
            p in arb_principal(),
        ) {
            let set = Ruleset::new(rules.clone());
            let reloaded = Ruleset::from_text(&set.to_text()).unwrap();
            for perm in Permission::ALL {
                for target in [None, Some(id(1)), Some(id(2)), Some(id(3))] {
                    let expected = oracle(&rules, &p, perm, target);
                    prop_assert_eq!(set.check(&p, perm, target), expected);
                    prop_assert_eq!(reloaded.check(&p, perm, target), expected);
                    if let Some(t) = target {
                        prop_assert_eq!(set.access(&p, perm).check(t), expected);
                    }
                }
            }
        }

        #[test]
        fn removing_an_allow_never_grants(
            rules in proptest::collection::vec(arb_rule(), 1..24),
            p in arb_principal(),
            pick in any::<proptest::sample::Index>(),
        ) {
            let victim = rules[pick.index(rules.len())].clone();
            prop_assume!(victim.effect == Effect::Allow);
            let mut reduced = Ruleset::new(rules.clone());
            reduced.remove(&victim);
            let full = Ruleset::new(rules);
            for perm in Permission::ALL {
                for target in [None, Some(id(1)), Some(id(2))] {
                    if full.check(&p, perm, target) == Effect::Deny {
                        prop_assert_eq!(reduced.check(&p, perm, target), Effect::Deny);
                    }
                }
            }
        }

        #[test]
        fn check_ignores_rule_order(
            mut rules in proptest::collection::vec(arb_rule(), 0..16),
            p in arb_principal(),
        ) {
            let a = Ruleset::new(rules.clone());
            rules.reverse();
            let b = Ruleset::new(rules);
            for perm in Permission::ALL {
                for target in [None, Some(id(1)), Some(id(2))] {
                    prop_assert_eq!(a.check(&p, perm, target), b.check(&p, perm, target));
                }
            }
        }
    }
}
