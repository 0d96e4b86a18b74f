//! `caos`: serve a store, ingest file trees, load data models, run queries
//! and manage users and access rules.
//!
//! Exit codes: 0 success, 1 other failure, 2 configuration, 3 query
//! syntax, 4 authentication, 5 transaction rejected.

mod backend;

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use backend::{Backend, Failure, Format};
use caos_core::acl::{valid_name, AclRule, Effect, Permission, Ruleset, Scope, UserRegistry};
use caos_core::datamodel::FileMeta;
use caos_core::store::{hash_file, Transaction};
use caos_core::wire::{encode_transaction, model_transaction};
use caos_core::{Entity, EntityId, EntityKind};
use caos_server::Config;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "caos", version, about = "Research data store: queries, ingestion and administration")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Server configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Data directory; overrides the one in the configuration.
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    /// Talk to a running server instead of opening the data directory.
    #[arg(long, global = true)]
    server_url: Option<String>,
    /// Output format of query results.
    #[arg(long, global = true, value_enum, default_value = "plain")]
    format: Format,
    /// Act as this user.
    #[arg(long, global = true)]
    user: Option<String>,
    /// File whose first line is the password; read from stdin otherwise.
    #[arg(long, global = true)]
    password_file: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP server until interrupted.
    Serve {
        /// Listen address; overrides the configuration.
        #[arg(long)]
        listen: Option<std::net::SocketAddr>,
    },
    /// Run a query, or one query per input line when none is given.
    Query { text: Option<String> },
    /// Register every regular file below a directory as a File entity.
    Ingest {
        root: PathBuf,
        /// Store path the directory maps to.
        #[arg(long, default_value = "/")]
        prefix: String,
    },
    /// Insert the entities of a model file.
    LoadModel { file: PathBuf },
    /// Manage the user registry.
    #[command(subcommand)]
    User(UserCommand),
    /// Manage access rules.
    #[command(subcommand)]
    Rule(RuleCommand),
}

#[derive(Subcommand)]
enum UserCommand {
    Add {
        name: String,
        #[arg(long = "role")]
        roles: Vec<String>,
    },
    Passwd {
        name: String,
    },
    Roles {
        name: String,
        #[arg(long = "role")]
        roles: Vec<String>,
    },
    Remove {
        name: String,
    },
    List,
}

#[derive(Args)]
struct RuleArgs {
    role: String,
    /// insert, update, retrieve, delete, read-log or admin
    permission: Permission,
    /// `global` or an entity id
    scope: Scope,
    /// allow or deny
    effect: Effect,
}

#[derive(Subcommand)]
enum RuleCommand {
    Add(RuleArgs),
    Remove(RuleArgs),
    List,
}

impl Global {
    fn config(&self) -> Result<Config, Failure> {
        let mut config = match &self.config {
            Some(path) => Config::load(path).map_err(|e| Failure::Config(e.to_string()))?,
            None => match &self.data_dir {
                Some(dir) => Config::new(dir),
                None => return Err(Failure::Config("no data directory: pass --data-dir or --config".into())),
            },
        };
        if let Some(dir) = &self.data_dir {
            config.data_dir = dir.clone();
        }
        Ok(config)
    }

    fn password(&self) -> Result<String, Failure> {
        let text = match &self.password_file {
            Some(path) => std::fs::read_to_string(path)
                .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?,
            None => {
                let mut line = String::new();
                std::io::stdin().lock().read_line(&mut line).map_err(|e| Failure::Other(e.to_string()))?;
                line
            }
        };
        Ok(text.lines().next().unwrap_or_default().to_string())
    }

    fn backend(&self) -> Result<Backend, Failure> {
        let password = match &self.user {
            Some(_) => Some(self.password()?),
            None => None,
        };
        let login = self.user.as_deref().zip(password.as_deref());
        match &self.server_url {
            Some(url) => Backend::remote(url, login),
            None => Backend::embedded(&self.config()?, login),
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(f) = run(cli) {
        eprintln!("caos: {}", f.message());
        std::process::exit(f.code());
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let g = &cli.global;
    match cli.command {
        Command::Serve { listen } => serve(g, listen),
        Command::Query { text: Some(text) } => query(&g.backend()?, &text, g.format),
        Command::Query { text: None } => repl(&g.backend()?, g.format),
        Command::Ingest { root, prefix } => ingest(&g.backend()?, &root, &prefix),
        Command::LoadModel { file } => load_model(&g.backend()?, &file),
        Command::User(cmd) => users(g, cmd),
        Command::Rule(cmd) => rules(g, cmd),
    }
}

fn serve(g: &Global, listen: Option<std::net::SocketAddr>) -> Result<(), Failure> {
    let mut config = g.config()?;
    if let Some(addr) = listen {
        config.listen = addr;
    }
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Failure::Other(e.to_string()))?;
    runtime.block_on(caos_server::serve(config, shutdown_signal()))?;
    Ok(())
}

async fn shutdown_signal() {
    let interrupt = tokio::signal::ctrl_c();
    #[cfg(unix)]
    {
        let mut term = tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()).expect("signal handler");
        tokio::select! {
            _ = interrupt => {}
            _ = term.recv() => {}
        }
    }
    #[cfg(not(unix))]
    interrupt.await.ok();
}

fn query(backend: &Backend, text: &str, format: Format) -> Result<(), Failure> {
    let out = backend.query(text, format)?;
    for w in &out.warnings {
        eprintln!("warning: {w}");
    }
    let mut stdout = std::io::stdout().lock();
    stdout.write_all(out.text.as_bytes()).map_err(|e| Failure::Other(e.to_string()))?;
    if format == Format::Xml && !out.text.ends_with('\n') {
        stdout.write_all(b"\n").map_err(|e| Failure::Other(e.to_string()))?;
    }
    Ok(())
}

/// One query per line; failures are reported and the loop goes on.
fn repl(backend: &Backend, format: Format) -> Result<(), Failure> {
    for line in std::io::stdin().lock().lines() {
        let line = line.map_err(|e| Failure::Other(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        if let Err(f) = query(backend, &line, format) {
            eprintln!("caos: {}", f.message());
        }
    }
    Ok(())
}

fn load_model(backend: &Backend, file: &Path) -> Result<(), Failure> {
    let text = std::fs::read_to_string(file).map_err(|e| Failure::Other(format!("cannot read {}: {e}", file.display())))?;
    let document = model_transaction(&text).map_err(|e| Failure::Other(format!("{}: {e}", file.display())))?;
    let result = backend.transact(&document)?;
    for w in &result.report.warnings {
        eprintln!("warning: {}", w.message);
    }
    println!("{} entities inserted", result.id_map.len());
    Ok(())
}

/// Store path of `rel` below `prefix`, always with `/` separators.
fn store_path(prefix: &str, rel: &Path) -> String {
    let mut out = prefix.trim_end_matches('/').to_string();
    for part in rel.components() {
        out.push('/');
        out.push_str(&part.as_os_str().to_string_lossy());
    }
    out
}

fn ingest(backend: &Backend, root: &Path, prefix: &str) -> Result<(), Failure> {
    if !root.is_dir() {
        return Err(Failure::Other(format!("{} is not a directory", root.display())));
    }
    let known: BTreeMap<String, Entity> = backend
        .find("FIND FILE")?
        .into_iter()
        .filter_map(|e| e.file.clone().map(|f| (f.path, e.as_ref().clone())))
        .collect();
    let mut tx = Transaction::new(caos_core::acl::Principal::anonymous());
    let (mut inserted, mut updated, mut unchanged, mut bytes) = (0u64, 0u64, 0u64, 0u64);
    let walk = walkdir::WalkDir::new(root).follow_links(false).sort_by_file_name();
    for entry in walk {
        let entry = entry.map_err(|e| Failure::Other(e.to_string()))?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry.path().strip_prefix(root).expect("walk stays below root");
        let path = store_path(prefix, rel);
        let (size, checksum) =
            hash_file(entry.path()).map_err(|e| Failure::Other(format!("cannot read {}: {e}", entry.path().display())))?;
        let meta = FileMeta { path: path.clone(), size, checksum };
        match known.get(&path) {
            Some(e) if e.file.as_ref() == Some(&meta) => unchanged += 1,
            Some(e) => {
                let mut e = e.clone();
                e.file = Some(meta);
                tx = tx.update(e);
                updated += 1;
                bytes += size;
            }
            None => {
                inserted += 1;
                let id = EntityId::temporary(-(inserted as i64)).expect("negative");
                let name = entry.file_name().to_string_lossy().into_owned();
                let mut e = Entity::new(id, EntityKind::File, name);
                e.file = Some(meta);
                tx = tx.insert(e);
                bytes += size;
            }
        }
    }
    if !tx.instructions.is_empty() {
        backend.transact(&encode_transaction(&tx))?;
    }
    println!("{inserted} files ingested, {updated} updated, {unchanged} unchanged ({bytes} bytes)");
    Ok(())
}

/// Replaces `path` by writing a sibling file and renaming it.
fn write_atomically(path: &Path, text: &str) -> Result<(), Failure> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, text)
        .and_then(|_| std::fs::rename(&tmp, path))
        .map_err(|e| Failure::Other(format!("cannot write {}: {e}", path.display())))
}

fn read_optional(path: &Path) -> Result<Option<String>, Failure> {
    match std::fs::read_to_string(path) {
        Ok(text) => Ok(Some(text)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(Failure::Other(format!("cannot read {}: {e}", path.display()))),
    }
}

fn users(g: &Global, cmd: UserCommand) -> Result<(), Failure> {
    let path = g.config()?.users_path();
    let mut reg = match read_optional(&path)? {
        Some(text) => UserRegistry::from_text(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?,
        None => UserRegistry::default(),
    };
    let fail = |e: caos_core::acl::AclError| Failure::Other(e.to_string());
    match cmd {
        UserCommand::List => {
            for u in reg.users() {
                let roles: Vec<&str> = u.roles.iter().map(String::as_str).collect();
                println!("{}\t{}", u.name, roles.join(","));
            }
            return Ok(());
        }
        UserCommand::Add { name, roles } => reg.add_user(&name, &g.password()?, roles).map_err(fail)?,
        UserCommand::Passwd { name } => reg.set_password(&name, &g.password()?).map_err(fail)?,
        UserCommand::Roles { name, roles } => reg.set_roles(&name, roles).map_err(fail)?,
        UserCommand::Remove { name } => reg.remove_user(&name).map_err(fail)?,
    }
    write_atomically(&path, &reg.to_text())
}

fn rules(g: &Global, cmd: RuleCommand) -> Result<(), Failure> {
    let path = g.config()?.rules_path();
    let mut set = match read_optional(&path)? {
        Some(text) => Ruleset::from_text(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?,
        None => Ruleset::admin_only(),
    };
    match cmd {
        RuleCommand::List => {
            for r in set.rules() {
                println!("{}\t{}\t{}\t{}", r.role, r.permission, r.scope, r.effect);
            }
            return Ok(());
        }
        RuleCommand::Add(a) => {
            if !valid_name(&a.role) {
                return Err(Failure::Other(format!("invalid role `{}`", a.role)));
            }
            set.push(AclRule::new(a.role, a.permission, a.scope, a.effect))
        }
        RuleCommand::Remove(a) => {
            if set.remove(&AclRule::new(a.role, a.permission, a.scope, a.effect)) == 0 {
                return Err(Failure::Other("no such rule".into()));
            }
        }
    }
    write_atomically(&path, &set.to_text())
}
