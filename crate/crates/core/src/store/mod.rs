//! Embedded, crash-safe entity store.
//!
//! A data directory holds:
//!
//! * `wal.caos`: committed transactions, each framed as a 4-byte big-endian
//!   length, the payload and a 4-byte CRC32 of the payload;
//! * `snapshot-<seq>.caos`: the full entity set and transaction log as of
//!   commit `<seq>`, one XML element per line;
//! * `meta`: the sequence number of the current snapshot and the next id.
//!
//! A commit is durable once its WAL record is synced. Every so many commits
//! the state is written to a new snapshot and the WAL is emptied. Recovery
//! loads the snapshot named in `meta` and replays the WAL records after it;
//! a torn final record is discarded.

mod codec;
mod snapshot;
mod transaction;

use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::Utc;
use parking_lot::{Mutex, RwLock};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::acl::{Permission, Principal, Ruleset};
use crate::datamodel::{Entity, EntityId, EntityKind, FileMeta};
use crate::UnitRegistry;

pub use codec::{read_log_entry, write_log_entry};
pub use snapshot::{name_key, Snapshot};
pub use transaction::{Change, ChangeOp, Instruction, LogEntry, Outcome, Rejection, Transaction, TransactionResult};

use transaction::Prepared;

const WAL: &str = "wal.caos";
const META: &str = "meta";
const LOCK: &str = "lock";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
    #[error("corrupt {file} at byte {offset}: {reason}")]
    Corrupt { file: String, offset: u64, reason: String },
    #[error("data directory {0} is in use by another process")]
    Locked(PathBuf),
    #[error("store stopped accepting writes after an earlier I/O failure; reopen it")]
    Poisoned,
}

fn io_err(context: impl Into<String>) -> impl FnOnce(io::Error) -> StoreError {
    let context = context.into();
    move |source| StoreError::Io { context, source }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AccessError {
    #[error("entity {0} does not exist")]
    NotFound(EntityId),
    #[error("permission `{permission}` denied")]
    Forbidden { permission: Permission },
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("path `{path}` is already used by entity {existing}")]
    Conflict { path: String, existing: EntityId },
    #[error("permission `insert` denied")]
    Forbidden,
}

#[derive(Debug, Clone)]
pub struct StoreOptions {
    pub units: Arc<UnitRegistry>,
    pub ruleset: Ruleset,
    /// Commits between two snapshots.
    pub snapshot_interval: u64,
}

impl Default for StoreOptions {
    fn default() -> Self {
        StoreOptions {
            units: Arc::new(UnitRegistry::seeded()),
            ruleset: Ruleset::admin_only(),
            snapshot_interval: 1000,
        }
    }
}

/// Simulated process death at the `step`-th durable write step of the next
/// operations. With `torn`, a write step first writes half of its bytes.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CrashPlan {
    pub step: usize,
    pub torn: bool,
}

#[derive(Default)]
struct Faults {
    plan: Option<CrashPlan>,
    count: usize,
}

impl Faults {
    fn hit(&mut self) -> Option<bool> {
        let k = self.count;
        self.count += 1;
        self.plan.filter(|p| p.step == k).map(|p| p.torn)
    }

    fn crash() -> io::Error {
        io::Error::other("injected crash")
    }

    fn write(&mut self, f: &mut File, bytes: &[u8]) -> io::Result<()> {
        if let Some(torn) = self.hit() {
            if torn {
                f.write_all(&bytes[..bytes.len() / 2])?;
            }
            return Err(Self::crash());
        }
        f.write_all(bytes)
    }

    fn step(&mut self) -> io::Result<()> {
        match self.hit() {
            Some(_) => Err(Self::crash()),
            None => Ok(()),
        }
    }
}

struct Writer {
    wal: File,
    since_snapshot: u64,
    snapshot_seq: u64,
    faults: Faults,
    poisoned: bool,
}

pub struct Store {
    dir: PathBuf,
    units: Arc<UnitRegistry>,
    snapshot_interval: u64,
    current: RwLock<Arc<Snapshot>>,
    log: RwLock<Vec<LogEntry>>,
    ruleset: RwLock<Arc<Ruleset>>,
    writer: Mutex<Writer>,
    _lock: File,
}

fn snapshot_path(dir: &Path, seq: u64) -> PathBuf {
    dir.join(format!("snapshot-{seq}.caos"))
}

fn sync_dir(dir: &Path) -> io::Result<()> {
    File::open(dir)?.sync_all()
}

fn read_meta(dir: &Path) -> Result<Option<(u64, i64)>, StoreError> {
    let path = dir.join(META);
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(io_err("reading meta")(e)),
    };
    let corrupt = |reason: &str| StoreError::Corrupt {
        file: META.into(),
        offset: 0,
        reason: reason.into(),
    };
    let mut seq = None;
    let mut next = None;
    for line in text.lines() {
        match line.split_once(' ') {
            Some(("snapshot", v)) => seq = Some(v.parse().map_err(|_| corrupt("bad snapshot number"))?),
            Some(("next-id", v)) => next = Some(v.parse().map_err(|_| corrupt("bad next id"))?),
            _ if line.trim().is_empty() => {}
            _ => return Err(corrupt("unknown line")),
        }
    }
    match (seq, next) {
        (Some(s), Some(n)) => Ok(Some((s, n))),
        _ => Err(corrupt("incomplete")),
    }
}

/// Splits WAL bytes into payloads. Returns the payloads with their offsets
/// and the length of the valid prefix.
fn scan_wal(data: &[u8]) -> Result<(Vec<(u64, &[u8])>, usize), StoreError> {
    let mut records = Vec::new();
    let mut pos = 0usize;
    while pos < data.len() {
        let rest = &data[pos..];
        if rest.len() < 4 {
            break;
        }
        let len = u32::from_be_bytes(rest[..4].try_into().unwrap()) as usize;
        if rest.len() < 8 + len {
            break;
        }
        let payload = &rest[4..4 + len];
        let crc = u32::from_be_bytes(rest[4 + len..8 + len].try_into().unwrap());
        if crc32fast::hash(payload) != crc {
            if pos + 8 + len == data.len() {
                break;
            }
            return Err(StoreError::Corrupt {
                file: WAL.into(),
                offset: pos as u64,
                reason: "checksum mismatch".into(),
            });
        }
        records.push((pos as u64, payload));
        pos += 8 + len;
    }
    Ok((records, pos))
}

impl Store {
    /// Opens `dir`, creating it if needed, and recovers the last committed state.
    pub fn open(dir: impl AsRef<Path>, options: StoreOptions) -> Result<Store, StoreError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir).map_err(io_err(format!("creating {}", dir.display())))?;
        let lock = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(dir.join(LOCK))
            .map_err(io_err("opening lock file"))?;
        if lock.try_lock().is_err() {
            return Err(StoreError::Locked(dir));
        }
        let units = options.units.clone();

        let mut snap = Snapshot::default();
        let mut log = Vec::new();
        let meta = read_meta(&dir)?;
        if let Some((seq, next_id)) = meta {
            if seq > 0 {
                let path = snapshot_path(&dir, seq);
                let text = fs::read_to_string(&path).map_err(io_err(format!("reading {}", path.display())))?;
                let file = codec::decode_snapshot(&text, &units).map_err(|e| StoreError::Corrupt {
                    file: path.display().to_string(),
                    offset: 0,
                    reason: e.to_string(),
                })?;
                if file.seq != seq || file.next_id != next_id {
                    return Err(StoreError::Corrupt {
                        file: path.display().to_string(),
                        offset: 0,
                        reason: "header disagrees with meta".into(),
                    });
                }
                for e in file.entities {
                    snap.put(Arc::new(e));
                }
                log = file.log;
            }
            snap.set_position(seq, next_id);
        }
        let snapshot_seq = snap.seq();

        let wal_path = dir.join(WAL);
        let mut wal = OpenOptions::new()
            .create(true)
            .truncate(false)
            .read(true)
            .write(true)
            .open(&wal_path)
            .map_err(io_err("opening wal"))?;
        let mut data = Vec::new();
        wal.read_to_end(&mut data).map_err(io_err("reading wal"))?;
        let (records, valid) = scan_wal(&data)?;
        let mut replayed = 0;
        for (offset, payload) in records {
            let corrupt = |reason: String| StoreError::Corrupt {
                file: WAL.into(),
                offset,
                reason,
            };
            let text = std::str::from_utf8(payload).map_err(|e| corrupt(e.to_string()))?;
            let rec = codec::decode_commit(text, &units).map_err(|e| corrupt(e.to_string()))?;
            if rec.seq <= snap.seq() {
                continue;
            }
            if rec.seq != snap.seq() + 1 {
                return Err(corrupt(format!("expected commit {}, found {}", snap.seq() + 1, rec.seq)));
            }
            rec.apply(&mut snap);
            log.push(rec.log_entry());
            replayed += 1;
        }
        if valid < data.len() {
            wal.set_len(valid as u64).map_err(io_err("truncating torn wal record"))?;
            wal.sync_all().map_err(io_err("syncing wal"))?;
        }
        wal.seek(SeekFrom::End(0)).map_err(io_err("seeking wal"))?;
        Self::remove_stale_files(&dir, snapshot_seq);

        Ok(Store {
            dir,
            units,
            snapshot_interval: options.snapshot_interval.max(1),
            current: RwLock::new(Arc::new(snap)),
            log: RwLock::new(log),
            ruleset: RwLock::new(Arc::new(options.ruleset)),
            writer: Mutex::new(Writer {
                wal,
                since_snapshot: replayed,
                snapshot_seq,
                faults: Faults::default(),
                poisoned: false,
            }),
            _lock: lock,
        })
    }

    fn remove_stale_files(dir: &Path, keep: u64) {
        let Ok(entries) = fs::read_dir(dir) else { return };
        let keep_name = format!("snapshot-{keep}.caos");
        for entry in entries.flatten() {
            let name = entry.file_name().to_string_lossy().into_owned();
            let stale_snapshot = name.starts_with("snapshot-") && name.ends_with(".caos") && name != keep_name;
            if stale_snapshot || name.ends_with(".tmp") {
                let _ = fs::remove_file(entry.path());
            }
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn units(&self) -> &Arc<UnitRegistry> {
        &self.units
    }

    /// The latest committed state.
    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.current.read().clone()
    }

    pub fn ruleset(&self) -> Arc<Ruleset> {
        self.ruleset.read().clone()
    }

    pub fn set_ruleset(&self, ruleset: Ruleset) {
        *self.ruleset.write() = Arc::new(ruleset);
    }

    #[doc(hidden)]
    pub fn inject_crash(&self, plan: Option<CrashPlan>) {
        let mut w = self.writer.lock();
        w.faults = Faults { plan, count: 0 };
    }

    /// Durable write steps taken since the last [`Self::inject_crash`].
    #[doc(hidden)]
    pub fn crash_steps(&self) -> usize {
        self.writer.lock().faults.count
    }

    /// Runs `tx` atomically. Rejections are results; errors mean the
    /// commit could not be made durable.
    pub fn execute_transaction(&self, tx: Transaction) -> Result<TransactionResult, StoreError> {
        let mut w = self.writer.lock();
        if w.poisoned {
            return Err(StoreError::Poisoned);
        }
        let base = self.snapshot();
        let ruleset = self.ruleset();
        let (next, record, result) = match transaction::prepare(&base, tx, &ruleset, &self.units, Utc::now()) {
            Prepared::Reject(result) => return Ok(result),
            Prepared::Commit { next, record, result } => (next, record, result),
        };
        let payload = codec::encode_commit(&record);
        if let Err(e) = Self::append(&mut w, payload.as_bytes()) {
            w.poisoned = true;
            return Err(io_err("appending to wal")(e));
        }
        let next = Arc::new(next);
        *self.current.write() = next.clone();
        self.log.write().push(record.log_entry());
        w.since_snapshot += 1;
        if w.since_snapshot >= self.snapshot_interval {
            if let Err(e) = self.compact(&mut w, &next) {
                w.poisoned = true;
                return Err(e);
            }
        }
        Ok(result)
    }

    fn append(w: &mut Writer, payload: &[u8]) -> io::Result<()> {
        let len = u32::try_from(payload.len()).map_err(|_| io::Error::other("transaction too large"))?;
        let Writer { wal, faults, .. } = w;
        faults.write(wal, &len.to_be_bytes())?;
        faults.write(wal, payload)?;
        faults.write(wal, &crc32fast::hash(payload).to_be_bytes())?;
        faults.step()?;
        wal.sync_data()
    }

    /// Writes a snapshot of `snap`, points `meta` at it and empties the WAL.
    fn compact(&self, w: &mut Writer, snap: &Snapshot) -> Result<(), StoreError> {
        let seq = snap.seq();
        let text = {
            let log = self.log.read();
            codec::encode_snapshot(seq, snap.next_id(), &log, snap.iter())
        };
        let final_path = snapshot_path(&self.dir, seq);
        let tmp = final_path.with_extension("caos.tmp");
        let io = |what: &str| io_err(format!("writing snapshot: {what}"));
        {
            let mut f = File::create(&tmp).map_err(io("create"))?;
            w.faults.write(&mut f, text.as_bytes()).map_err(io("write"))?;
            f.sync_all().map_err(io("sync"))?;
        }
        w.faults.step().map_err(io("rename"))?;
        fs::rename(&tmp, &final_path).map_err(io("rename"))?;
        sync_dir(&self.dir).map_err(io("sync dir"))?;

        let meta = format!("snapshot {seq}\nnext-id {}\n", snap.next_id());
        let meta_tmp = self.dir.join("meta.tmp");
        {
            let mut f = File::create(&meta_tmp).map_err(io("create meta"))?;
            w.faults.write(&mut f, meta.as_bytes()).map_err(io("write meta"))?;
            f.sync_all().map_err(io("sync meta"))?;
        }
        w.faults.step().map_err(io("rename meta"))?;
        fs::rename(&meta_tmp, self.dir.join(META)).map_err(io("rename meta"))?;
        sync_dir(&self.dir).map_err(io("sync dir"))?;

        w.faults.step().map_err(io("reset wal"))?;
        w.wal.set_len(0).map_err(io("reset wal"))?;
        w.wal.seek(SeekFrom::Start(0)).map_err(io("reset wal"))?;
        w.wal.sync_all().map_err(io("reset wal"))?;
        let old = w.snapshot_seq;
        w.snapshot_seq = seq;
        w.since_snapshot = 0;
        if old > 0 && old != seq {
            w.faults.step().map_err(io("remove old snapshot"))?;
            let _ = fs::remove_file(snapshot_path(&self.dir, old));
        }
        Ok(())
    }

    /// Writes a snapshot now, e.g. before a clean shutdown.
    pub fn checkpoint(&self) -> Result<(), StoreError> {
        let mut w = self.writer.lock();
        if w.poisoned {
            return Err(StoreError::Poisoned);
        }
        let snap = self.snapshot();
        if snap.seq() == w.snapshot_seq {
            return Ok(());
        }
        let r = self.compact(&mut w, &snap);
        if r.is_err() {
            w.poisoned = true;
        }
        r
    }

    pub fn retrieve(&self, id: EntityId, principal: &Principal) -> Result<Arc<Entity>, AccessError> {
        let snap = self.snapshot();
        let entity = snap.get(id).cloned().ok_or(AccessError::NotFound(id))?;
        if !self.ruleset().allows(principal, Permission::Retrieve, Some(id)) {
            return Err(AccessError::Forbidden {
                permission: Permission::Retrieve,
            });
        }
        Ok(entity)
    }

    /// Log entries with `from <= seq <= to`.
    pub fn read_log(&self, from: u64, to: u64, principal: &Principal) -> Result<Vec<LogEntry>, AccessError> {
        if !self.ruleset().allows(principal, Permission::ReadLog, None) {
            return Err(AccessError::Forbidden {
                permission: Permission::ReadLog,
            });
        }
        Ok(self
            .log
            .read()
            .iter()
            .filter(|e| e.seq >= from && e.seq <= to)
            .cloned()
            .collect())
    }

    /// Builds the insert instruction for a file left in place on the host.
    /// `temp_id` must be a temporary id.
    pub fn ingest_file(
        &self,
        fs_path: &Path,
        target_path: &str,
        temp_id: EntityId,
        principal: &Principal,
    ) -> Result<Instruction, IngestError> {
        if !self.ruleset().allows(principal, Permission::Insert, None) {
            return Err(IngestError::Forbidden);
        }
        if let Some(existing) = self.snapshot().file_by_path(target_path) {
            return Err(IngestError::Conflict {
                path: target_path.to_string(),
                existing,
            });
        }
        let (size, checksum) = hash_file(fs_path).map_err(|source| IngestError::Io {
            path: fs_path.to_path_buf(),
            source,
        })?;
        let name = target_path
            .rsplit('/')
            .find(|s| !s.is_empty())
            .unwrap_or(target_path)
            .to_string();
        let mut e = Entity::new(temp_id, EntityKind::File, if name.is_empty() { "/".into() } else { name });
        e.file = Some(FileMeta {
            path: target_path.to_string(),
            size,
            checksum,
        });
        Ok(Instruction::Insert(e))
    }
}

/// Size and lower-case hex SHA-256 of a file, read in chunks.
pub fn hash_file(path: &Path) -> io::Result<(u64, String)> {
    let mut f = File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 64 * 1024];
    let mut size = 0u64;
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        size += n as u64;
        hasher.update(&buf[..n]);
    }
    Ok((size, hex::encode(hasher.finalize())))
}
