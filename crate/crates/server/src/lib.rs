//! HTTP service over a caos store.
//!
//! | request | answer |
//! |---|---|
//! | `GET /Entity/{id}` | `<Response><Entity .../></Response>`, 400, 403 or 404 |
//! | `GET /Entity/?query=...` | `<Count>`, `<Entities>` or `<Table>` inside `<Response>`; TSV on `Accept: text/tab-separated-values` |
//! | `POST /Transaction` | `<Response><Committed/>...` (200), `<Rejected reason="invalid">` (422), `<Rejected reason="forbidden">` (403) |
//! | `POST /login` | form fields `username`, `password`; `<Response><Session token user expires/></Response>` plus cookie |
//! | `GET /webui/...` | static files of the web console |
//!
//! Failures carry `<Response><Error kind="...">message</Error></Response>`.
//! A session token is accepted from the `caos_session` cookie or an
//! `Authorization: Bearer` header.

mod config;

use std::collections::HashMap;
use std::future::Future;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant, SystemTime};

use axum::body::Bytes;
use axum::extract::{ConnectInfo, DefaultBodyLimit, FromRequest, Query, Request, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode, Uri};
use axum::response::{IntoResponse, Redirect, Response};
use axum::routing::{get, post};
use axum::{Form, Router};
use caos_core::acl::{AclError, AuthOutcome, NetworkRoles, Principal, Ruleset, UserRegistry};
use caos_core::cql;
use caos_core::eval::{execute, render_plain, render_tsv, ResultBody};
use caos_core::store::{AccessError, Outcome, Rejection, Store, StoreError, StoreOptions};
use caos_core::wire::{
    decode_transaction, encode_entity, encode_error, encode_parse_error, encode_query_result, encode_transaction_result,
    ElementWriter, SnapshotNames,
};
use caos_core::EntityId;
use parking_lot::Mutex;
use serde::Deserialize;
use thiserror::Error;
use tower_http::services::ServeDir;

pub use config::{Config, ConfigError};

pub const SESSION_COOKIE: &str = "caos_session";
pub const SESSION_TTL: Duration = Duration::from_secs(24 * 3600);
/// Longest accepted query string, in bytes.
pub const MAX_QUERY_BYTES: usize = 64 * 1024;
pub const XML: &str = "application/xml; charset=utf-8";
pub const TSV: &str = "text/tab-separated-values; charset=utf-8";
const BODY_LIMIT: usize = 256 * 1024 * 1024;

#[derive(Debug, Error)]
pub enum ServerError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: AclError,
    },
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A text file parsed again whenever its size or modification time changes.
/// A missing file stands for the default value; a broken edit keeps the
/// previous value.
struct Watched<T> {
    path: Option<PathBuf>,
    parse: fn(&str) -> Result<T, AclError>,
    state: Mutex<(Option<(SystemTime, u64)>, Arc<T>)>,
}

impl<T: Default> Watched<T> {
    fn fixed(value: T) -> Self {
        Watched {
            path: None,
            parse: |_| Ok(T::default()),
            state: Mutex::new((None, Arc::new(value))),
        }
    }

    fn load(path: PathBuf, parse: fn(&str) -> Result<T, AclError>, missing: T) -> Result<Self, ServerError> {
        let w = Watched {
            path: Some(path),
            parse,
            state: Mutex::new((None, Arc::new(missing))),
        };
        w.refresh()?;
        Ok(w)
    }

    fn stamp(path: &Path) -> Option<(SystemTime, u64)> {
        let meta = std::fs::metadata(path).ok()?;
        Some((meta.modified().ok()?, meta.len()))
    }

    /// Reparses the file if it changed; `Ok(true)` when the value changed.
    fn refresh(&self) -> Result<bool, ServerError> {
        let Some(path) = &self.path else { return Ok(false) };
        let stamp = Self::stamp(path);
        let mut state = self.state.lock();
        if stamp.is_none() || stamp == state.0 {
            return Ok(false);
        }
        let text = std::fs::read_to_string(path).map_err(|source| ServerError::Read {
            path: path.clone(),
            source,
        })?;
        let value = (self.parse)(&text).map_err(|source| ServerError::File {
            path: path.clone(),
            source,
        })?;
        *state = (stamp, Arc::new(value));
        Ok(true)
    }

    fn get(&self) -> Arc<T> {
        if let Err(e) = self.refresh() {
            eprintln!("caos-server: keeping previous contents: {e}");
        }
        self.state.lock().1.clone()
    }
}

#[derive(Debug, Clone)]
struct Session {
    principal: Principal,
    expires: Instant,
}

/// Store plus authentication state shared by all requests.
pub struct Service {
    store: Arc<Store>,
    users: Watched<UserRegistry>,
    rules: Watched<Ruleset>,
    networks: NetworkRoles,
    sessions: Mutex<HashMap<String, Session>>,
    anonymous: bool,
    session_ttl: Duration,
}

impl Service {
    /// Opens (and recovers) the store and loads users, rules and network
    /// roles as configured.
    pub fn open(config: &Config) -> Result<Service, ServerError> {
        let users = Watched::load(config.users_path(), UserRegistry::from_text, UserRegistry::default())?;
        let rules = Watched::load(config.rules_path(), Ruleset::from_text, Ruleset::admin_only())?;
        let networks_path = config.networks_path();
        let networks = match std::fs::read_to_string(&networks_path) {
            Ok(text) => NetworkRoles::from_text(&text).map_err(|source| ServerError::File {
                path: networks_path,
                source,
            })?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => NetworkRoles::default(),
            Err(source) => return Err(ServerError::Read { path: networks_path, source }),
        };
        let options = StoreOptions {
            ruleset: rules.get().as_ref().clone(),
            snapshot_interval: config.snapshot_interval,
            ..StoreOptions::default()
        };
        let store = Arc::new(Store::open(&config.data_dir, options)?);
        Ok(Service {
            store,
            users,
            rules,
            networks,
            sessions: Mutex::default(),
            anonymous: config.anonymous,
            session_ttl: SESSION_TTL,
        })
    }

    /// Service over an open store; the store keeps its own ruleset.
    pub fn new(store: Arc<Store>, users: UserRegistry) -> Service {
        Service {
            store,
            users: Watched::fixed(users),
            rules: Watched::fixed(Ruleset::default()),
            networks: NetworkRoles::default(),
            sessions: Mutex::default(),
            anonymous: true,
            session_ttl: SESSION_TTL,
        }
    }

    pub fn with_anonymous(mut self, allowed: bool) -> Self {
        self.anonymous = allowed;
        self
    }

    pub fn with_networks(mut self, networks: NetworkRoles) -> Self {
        self.networks = networks;
        self
    }

    pub fn with_session_ttl(mut self, ttl: Duration) -> Self {
        self.session_ttl = ttl;
        self
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    fn refresh_rules(&self) {
        match self.rules.refresh() {
            Ok(true) => self.store.set_ruleset(self.rules.get().as_ref().clone()),
            Ok(false) => {}
            Err(e) => eprintln!("caos-server: keeping previous rules: {e}"),
        }
    }

    /// Checks credentials and opens a session. Roles of matching network
    /// ranges are added to the user's own.
    pub fn login(&self, user: &str, password: &str, addr: Option<IpAddr>) -> Option<(String, Principal)> {
        let AuthOutcome::Authenticated(mut principal) = self.users.get().authenticate(user, password) else {
            return None;
        };
        if let Some(addr) = addr {
            principal.roles.extend(self.networks.roles_for(addr));
        }
        let token = hex::encode(rand::random::<[u8; 32]>());
        let now = Instant::now();
        let mut sessions = self.sessions.lock();
        sessions.retain(|_, s| s.expires > now);
        sessions.insert(
            token.clone(),
            Session {
                principal: principal.clone(),
                expires: now + self.session_ttl,
            },
        );
        Some((token, principal))
    }

    /// Principal of a live session token.
    pub fn session(&self, token: &str) -> Option<Principal> {
        let mut sessions = self.sessions.lock();
        match sessions.get(token) {
            Some(s) if s.expires > Instant::now() => Some(s.principal.clone()),
            Some(_) => {
                sessions.remove(token);
                None
            }
            None => None,
        }
    }

    fn principal(&self, headers: &HeaderMap) -> Result<Principal, Response> {
        self.refresh_rules();
        if let Some(p) = token(headers).and_then(|t| self.session(&t)) {
            return Ok(p);
        }
        if self.anonymous {
            Ok(Principal::anonymous())
        } else {
            Err(error(StatusCode::UNAUTHORIZED, "unauthorized", "login required", &[]))
        }
    }
}

fn token(headers: &HeaderMap) -> Option<String> {
    if let Some(auth) = headers.get(header::AUTHORIZATION).and_then(|v| v.to_str().ok()) {
        if let Some(t) = auth.strip_prefix("Bearer ") {
            return Some(t.trim().to_string());
        }
    }
    headers
        .get_all(header::COOKIE)
        .iter()
        .filter_map(|v| v.to_str().ok())
        .flat_map(|v| v.split(';'))
        .filter_map(|pair| pair.trim().split_once('='))
        .find(|(k, _)| *k == SESSION_COOKIE)
        .map(|(_, v)| v.to_string())
}

fn xml(status: StatusCode, body: String) -> Response {
    (status, [(header::CONTENT_TYPE, XML)], body).into_response()
}

fn error(status: StatusCode, kind: &str, message: &str, attrs: &[(&str, String)]) -> Response {
    xml(status, encode_error(kind, message, attrs))
}

fn internal(e: impl std::fmt::Display) -> Response {
    error(StatusCode::INTERNAL_SERVER_ERROR, "internal", &e.to_string(), &[])
}

type Shared = State<Arc<Service>>;

async fn retrieve(State(s): Shared, axum::extract::Path(raw): axum::extract::Path<String>, headers: HeaderMap) -> Response {
    let principal = match s.principal(&headers) {
        Ok(p) => p,
        Err(r) => return r,
    };
    let id = match raw.parse::<i64>().ok().filter(|v| *v > 0).and_then(EntityId::new) {
        Some(id) => id,
        None => {
            return error(
                StatusCode::BAD_REQUEST,
                "bad-request",
                &format!("`{raw}` is not an entity id; ids are positive integers"),
                &[],
            )
        }
    };
    let snap = s.store.snapshot();
    match s.store.retrieve(id, &principal) {
        Ok(e) => xml(StatusCode::OK, encode_entity(&e, &snap)),
        Err(e @ AccessError::NotFound(_)) => error(StatusCode::NOT_FOUND, "not-found", &e.to_string(), &[("id", id.to_string())]),
        Err(e @ AccessError::Forbidden { permission }) => error(
            StatusCode::FORBIDDEN,
            "forbidden",
            &e.to_string(),
            &[("permission", permission.as_str().to_string())],
        ),
    }
}

#[derive(Deserialize)]
struct QueryParams {
    query: Option<String>,
}

fn wants_tsv(headers: &HeaderMap) -> bool {
    headers
        .get_all(header::ACCEPT)
        .iter()
        .filter_map(|v| v.to_str().ok())
        .any(|v| v.contains("text/tab-separated-values"))
}

async fn query(State(s): Shared, uri: Uri, headers: HeaderMap) -> Response {
    let principal = match s.principal(&headers) {
        Ok(p) => p,
        Err(r) => return r,
    };
    let raw_len = uri.query().map_or(0, str::len);
    if raw_len > MAX_QUERY_BYTES {
        return error(
            StatusCode::URI_TOO_LONG,
            "too-long",
            &format!("query string of {raw_len} bytes exceeds {MAX_QUERY_BYTES}"),
            &[],
        );
    }
    let text = match Query::<QueryParams>::try_from_uri(&uri) {
        Ok(Query(QueryParams { query: Some(q) })) => q,
        Ok(_) => return error(StatusCode::BAD_REQUEST, "bad-request", "missing `query` parameter", &[]),
        Err(e) => return error(StatusCode::BAD_REQUEST, "bad-request", &e.body_text(), &[]),
    };
    let ast = match cql::parse(&text) {
        Ok(ast) => ast,
        Err(e) => return xml(StatusCode::BAD_REQUEST, encode_parse_error(&e)),
    };
    let tsv = wants_tsv(&headers);
    let store = s.store.clone();
    let rendered = tokio::task::spawn_blocking(move || {
        let snap = store.snapshot();
        let result = execute(&ast, &snap, &principal, &store.ruleset(), store.units());
        if !tsv {
            return encode_query_result(&result, &snap);
        }
        match &result.body {
            ResultBody::Table(t) => render_tsv(t),
            _ => render_plain(&result),
        }
    })
    .await;
    match rendered {
        Ok(body) if tsv => (StatusCode::OK, [(header::CONTENT_TYPE, TSV)], body).into_response(),
        Ok(body) => xml(StatusCode::OK, body),
        Err(e) => internal(e),
    }
}

async fn transaction(State(s): Shared, headers: HeaderMap, body: Bytes) -> Response {
    let principal = match s.principal(&headers) {
        Ok(p) => p,
        Err(r) => return r,
    };
    let Ok(text) = std::str::from_utf8(&body) else {
        return error(StatusCode::BAD_REQUEST, "malformed", "request body is not UTF-8", &[]);
    };
    let tx = {
        let snap = s.store.snapshot();
        match decode_transaction(text, s.store.units(), &SnapshotNames(&snap), principal) {
            Ok(tx) => tx,
            Err(e) => return error(StatusCode::BAD_REQUEST, "malformed", &e.to_string(), &[]),
        }
    };
    let store = s.store.clone();
    let result = match tokio::task::spawn_blocking(move || store.execute_transaction(tx)).await {
        Ok(Ok(r)) => r,
        Ok(Err(e)) => return internal(e),
        Err(e) => return internal(e),
    };
    let status = match &result.outcome {
        Outcome::Committed { .. } => StatusCode::OK,
        Outcome::Rejected(Rejection::Invalid) => StatusCode::UNPROCESSABLE_ENTITY,
        Outcome::Rejected(Rejection::Forbidden { .. }) => StatusCode::FORBIDDEN,
    };
    xml(status, encode_transaction_result(&result))
}

#[derive(Deserialize)]
struct LoginForm {
    username: String,
    password: String,
}

async fn login(State(s): Shared, request: Request) -> Response {
    let addr = request.extensions().get::<ConnectInfo<SocketAddr>>().map(|c| c.0.ip());
    let form = match Form::<LoginForm>::from_request(request, &()).await {
        Ok(Form(f)) => f,
        Err(e) => return error(StatusCode::BAD_REQUEST, "bad-request", &e.body_text(), &[]),
    };
    let service = s.clone();
    let user = form.username.clone();
    let outcome = tokio::task::spawn_blocking(move || service.login(&form.username, &form.password, addr)).await;
    let (token, _) = match outcome {
        Ok(Some(session)) => session,
        Ok(None) => return error(StatusCode::UNAUTHORIZED, "unauthorized", "invalid user name or password", &[]),
        Err(e) => return internal(e),
    };
    let ttl = s.session_ttl.as_secs();
    let mut body = String::new();
    let mut w = ElementWriter::start(&mut body, "Response").body();
    ElementWriter::start(w.out(), "Session")
        .attr("token", &token)
        .attr("user", &user)
        .attr("expires", &ttl.to_string())
        .end();
    w.end();
    let cookie = format!("{SESSION_COOKIE}={token}; HttpOnly; SameSite=Strict; Path=/; Max-Age={ttl}");
    let mut response = xml(StatusCode::OK, body);
    response
        .headers_mut()
        .insert(header::SET_COOKIE, HeaderValue::from_str(&cookie).expect("token is hex"));
    response
}

async fn not_found(uri: Uri) -> Response {
    error(StatusCode::NOT_FOUND, "not-found", &format!("no resource at {}", uri.path()), &[])
}

/// All endpoints; the web console is served from `static_dir` if given.
pub fn router(service: Arc<Service>, static_dir: Option<&Path>) -> Router {
    let mut app = Router::new()
        .route("/Entity/{id}", get(retrieve))
        .route("/Entity/", get(query))
        .route("/Entity", get(query))
        .route("/Transaction", post(transaction))
        .route("/login", post(login));
    if let Some(dir) = static_dir {
        app = app
            .route("/webui", get(|| async { Redirect::permanent("/webui/") }))
            .nest_service("/webui/", ServeDir::new(dir));
    }
    app.fallback(not_found)
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(service)
}

/// Serves until `shutdown` resolves.
pub async fn run(
    listener: tokio::net::TcpListener,
    service: Arc<Service>,
    static_dir: Option<&Path>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let app = router(service, static_dir).into_make_service_with_connect_info::<SocketAddr>();
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await
}

/// Opens the store (running recovery), then listens on the configured
/// address until `shutdown` resolves.
pub async fn serve(config: Config, shutdown: impl Future<Output = ()> + Send + 'static) -> Result<(), ServerError> {
    let service = Arc::new(Service::open(&config)?);
    let listener = tokio::net::TcpListener::bind(config.listen).await?;
    eprintln!("caos-server: listening on {}", listener.local_addr()?);
    run(listener, service, config.static_dir.as_deref(), shutdown).await?;
    Ok(())
}
