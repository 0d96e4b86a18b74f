//! Where commands run: against a data directory in this process, or
//! against a running server.

use std::sync::Arc;

use caos_core::acl::Principal;
use caos_core::cql;
use caos_core::eval::{execute, render_plain, render_tsv, QueryResult, ResultBody};
use caos_core::store::{Outcome, Rejection, TransactionResult};
use caos_core::wire::{
    decode_error, decode_query_result, decode_transaction, decode_transaction_result, encode_query_result, SnapshotNames,
};
use caos_core::{Entity, UnitRegistry};
use caos_server::{Config, ServerError, Service};
use clap::ValueEnum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Xml,
    Tsv,
    Plain,
}

/// A failed command and its exit code.
#[derive(Debug)]
pub enum Failure {
    Other(String),
    Config(String),
    Syntax(String),
    Auth(String),
    Rejected(String),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Other(_) => 1,
            Failure::Config(_) => 2,
            Failure::Syntax(_) => 3,
            Failure::Auth(_) => 4,
            Failure::Rejected(_) => 5,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Other(m) | Failure::Config(m) | Failure::Syntax(m) | Failure::Auth(m) | Failure::Rejected(m) => m,
        }
    }
}

impl From<ServerError> for Failure {
    fn from(e: ServerError) -> Self {
        match e {
            ServerError::Config(_) | ServerError::File { .. } => Failure::Config(e.to_string()),
            other => Failure::Other(other.to_string()),
        }
    }
}

fn other(e: impl std::fmt::Display) -> Failure {
    Failure::Other(e.to_string())
}

/// Query output in the requested format plus the warnings to report.
pub struct Rendered {
    pub text: String,
    pub warnings: Vec<String>,
}

fn render(result: &QueryResult, format: Format, xml: impl FnOnce() -> String) -> Rendered {
    let text = match (format, &result.body) {
        (Format::Xml, _) => xml(),
        (Format::Tsv, ResultBody::Table(t)) => render_tsv(t),
        _ => render_plain(result),
    };
    Rendered {
        text,
        warnings: result.warnings.clone(),
    }
}

pub enum Backend {
    Embedded {
        service: Service,
        principal: Principal,
    },
    Remote {
        client: reqwest::blocking::Client,
        base: String,
        cookie: Option<String>,
        units: UnitRegistry,
    },
}

impl Backend {
    /// Opens the data directory. Without a user the caller acts as
    /// administrator, since it can read the files anyway.
    pub fn embedded(config: &Config, login: Option<(&str, &str)>) -> Result<Backend, Failure> {
        let service = Service::open(config)?;
        let principal = match login {
            Some((user, password)) => match service.login(user, password, None) {
                Some((_, p)) => p,
                None => return Err(Failure::Auth("invalid user name or password".into())),
            },
            None => Principal::admin(),
        };
        Ok(Backend::Embedded { service, principal })
    }

    pub fn remote(url: &str, login: Option<(&str, &str)>) -> Result<Backend, Failure> {
        let client = reqwest::blocking::Client::builder().build().map_err(other)?;
        let base = url.trim_end_matches('/').to_string();
        let cookie = match login {
            Some((user, password)) => {
                let res = client
                    .post(format!("{base}/login"))
                    .form(&[("username", user), ("password", password)])
                    .send()
                    .map_err(|e| Failure::Other(format!("cannot reach {base}: {e}")))?;
                if res.status() == reqwest::StatusCode::UNAUTHORIZED {
                    return Err(Failure::Auth("invalid user name or password".into()));
                }
                let res = res.error_for_status().map_err(other)?;
                let cookie = res
                    .headers()
                    .get(reqwest::header::SET_COOKIE)
                    .and_then(|v| v.to_str().ok())
                    .and_then(|v| v.split(';').next())
                    .ok_or_else(|| Failure::Other("login answer carries no session cookie".into()))?;
                Some(cookie.to_string())
            }
            None => None,
        };
        Ok(Backend::Remote {
            client,
            base,
            cookie,
            units: UnitRegistry::seeded(),
        })
    }

    fn request(&self, builder: reqwest::blocking::RequestBuilder) -> Result<(reqwest::StatusCode, String), Failure> {
        let Backend::Remote { base, cookie, .. } = self else {
            unreachable!("requests are remote only")
        };
        let builder = match cookie {
            Some(c) => builder.header(reqwest::header::COOKIE, c),
            None => builder,
        };
        let res = builder.send().map_err(|e| Failure::Other(format!("cannot reach {base}: {e}")))?;
        let status = res.status();
        let body = res.text().map_err(other)?;
        if status == reqwest::StatusCode::UNAUTHORIZED {
            return Err(Failure::Auth(describe_error(&body)));
        }
        Ok((status, body))
    }

    pub fn query(&self, text: &str, format: Format) -> Result<Rendered, Failure> {
        match self {
            Backend::Embedded { service, principal } => {
                let ast = cql::parse(text).map_err(|e| Failure::Syntax(e.to_string()))?;
                let store = service.store();
                let snap = store.snapshot();
                let result = execute(&ast, &snap, principal, &store.ruleset(), store.units());
                Ok(render(&result, format, || encode_query_result(&result, &snap)))
            }
            Backend::Remote { client, base, units, .. } => {
                let mut req = client.get(format!("{base}/Entity/")).query(&[("query", text)]);
                if format == Format::Tsv {
                    req = req.header(reqwest::header::ACCEPT, "text/tab-separated-values");
                }
                let (status, body) = self.request(req)?;
                if status == reqwest::StatusCode::BAD_REQUEST {
                    return Err(match decode_error(&body) {
                        Some((kind, _, message)) if kind == "syntax" => Failure::Syntax(message),
                        _ => Failure::Other(describe_error(&body)),
                    });
                }
                if !status.is_success() {
                    return Err(Failure::Other(format!("server answered {status}: {}", describe_error(&body))));
                }
                if format == Format::Tsv {
                    return Ok(Rendered {
                        text: body,
                        warnings: Vec::new(),
                    });
                }
                let result = decode_query_result(&body, units).map_err(other)?;
                Ok(render(&result, format, || body.clone()))
            }
        }
    }

    /// Entities matched by `query`, as the current principal sees them.
    pub fn find(&self, query: &str) -> Result<Vec<Arc<Entity>>, Failure> {
        let result = match self {
            Backend::Embedded { service, principal } => {
                let store = service.store();
                let ast = cql::parse(query).map_err(|e| Failure::Syntax(e.to_string()))?;
                execute(&ast, &store.snapshot(), principal, &store.ruleset(), store.units())
            }
            Backend::Remote { client, base, units, .. } => {
                let (status, body) = self.request(client.get(format!("{base}/Entity/")).query(&[("query", query)]))?;
                if !status.is_success() {
                    return Err(Failure::Other(format!("server answered {status}: {}", describe_error(&body))));
                }
                decode_query_result(&body, units).map_err(other)?
            }
        };
        match result.body {
            ResultBody::Entities(list) => Ok(list),
            _ => Err(Failure::Other("expected a list of entities".into())),
        }
    }

    /// Runs a transaction document. A rejection is an error carrying the
    /// report.
    pub fn transact(&self, document: &str) -> Result<TransactionResult, Failure> {
        let result = match self {
            Backend::Embedded { service, principal } => {
                let store = service.store();
                let tx = {
                    let snap = store.snapshot();
                    decode_transaction(document, store.units(), &SnapshotNames(&snap), principal.clone()).map_err(other)?
                };
                store.execute_transaction(tx).map_err(other)?
            }
            Backend::Remote { client, base, .. } => {
                let req = client
                    .post(format!("{base}/Transaction"))
                    .header(reqwest::header::CONTENT_TYPE, caos_server::XML)
                    .body(document.to_string());
                let (status, body) = self.request(req)?;
                match decode_transaction_result(&body) {
                    Ok(r) => r,
                    Err(_) => return Err(Failure::Other(format!("server answered {status}: {}", describe_error(&body)))),
                }
            }
        };
        match &result.outcome {
            Outcome::Committed { .. } => Ok(result),
            Outcome::Rejected(Rejection::Invalid) => {
                let lines: Vec<String> = result.report.errors.iter().map(|i| format!("error: {}", i.message)).collect();
                Err(Failure::Rejected(format!("transaction rejected\n{}", lines.join("\n"))))
            }
            Outcome::Rejected(Rejection::Forbidden { permission, target }) => Err(Failure::Rejected(match target {
                Some(t) => format!("transaction rejected: permission `{}` denied on entity {t}", permission.as_str()),
                None => format!("transaction rejected: permission `{}` denied", permission.as_str()),
            })),
        }
    }
}

fn describe_error(body: &str) -> String {
    match decode_error(body) {
        Some((_, _, message)) => message,
        None => body.trim().to_string(),
    }
}
