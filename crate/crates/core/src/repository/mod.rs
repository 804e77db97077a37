//! Durable store for process definitions, users, subject instances, tasks,
//! messages, snapshots and events.
//!
//! Backed by an embedded SQLite database. All access goes through
//! [`Repository::read`] or [`Repository::write`], which hand out a [`Tx`]
//! scoped to one transaction: everything written inside a `write` closure is
//! committed together or not at all. Events emitted inside a transaction are
//! persisted with it and published to the commit listener only after the
//! commit succeeded.

mod queries;
mod schema;

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::{Mutex, RwLock};

use rusqlite::{params, Connection, ErrorCode, OptionalExtension, TransactionBehavior};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event::{EventKind, SchedulerEvent};
use crate::model::{Bindings, ProcessDefinition};
use crate::model_io::{parse_definition, serialize_definition, DefinitionDocument};
use crate::task::{Mid, Piid, Siid, TaskKind, TaskParam, Tid};

pub use queries::StartableProcess;

#[derive(Debug, Error)]
pub enum RepoError {
    #[error("unknown user {0:?}")]
    UnknownUser(String),
    #[error("unknown subject instance {0}")]
    UnknownInstance(Siid),
    #[error("process {pid:?} has no subject named {name:?}")]
    UnknownSubjectName { pid: String, name: String },
    #[error("unknown process {0:?}")]
    UnknownProcess(String),
    #[error("process {0:?} already exists")]
    DuplicateProcess(String),
    #[error("integrity violation: {0}")]
    IntegrityViolation(String),
    #[error("corrupt record: {0}")]
    Corrupt(String),
    #[error("storage error: {0}")]
    Storage(rusqlite::Error),
}

impl From<rusqlite::Error> for RepoError {
    fn from(e: rusqlite::Error) -> Self {
        match e.sqlite_error_code() {
            Some(ErrorCode::ConstraintViolation) => RepoError::IntegrityViolation(e.to_string()),
            _ => RepoError::Storage(e),
        }
    }
}

pub type Result<T, E = RepoError> = std::result::Result<T, E>;

/// Execution state of a sleeping subject instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snapshot {
    pub current_state: String,
    pub variables: Bindings,
    pub pending_task: Option<Tid>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectInstanceRecord {
    pub siid: Siid,
    pub sid: String,
    pub piid: Piid,
    pub owner: Option<String>,
    pub is_in_end_state: bool,
    pub terminated: bool,
    pub snapshot: Option<Snapshot>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcessInstanceRecord {
    pub piid: Piid,
    pub pid: String,
    pub terminated: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageRecord {
    pub mid: Mid,
    pub mtype: String,
    pub from_siid: Siid,
    pub to_subject: String,
    pub to_siid: Siid,
    pub received: bool,
    pub params: Bindings,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub tid: Tid,
    pub name: String,
    pub siid: Siid,
    pub state_id: String,
    pub done: bool,
    #[serde(flatten)]
    pub kind: TaskKind,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RoleAssignment {
    pub pid: String,
    pub subject_name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserRecord {
    pub username: String,
    pub roles: BTreeSet<RoleAssignment>,
}

type CommitListener = Box<dyn Fn(&[SchedulerEvent]) + Send + Sync>;

pub struct Repository {
    conn: Mutex<Connection>,
    listener: RwLock<Option<CommitListener>>,
}

impl Repository {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let conn = Connection::open(path)?;
        conn.pragma_update(None, "journal_mode", "WAL")?;
        conn.pragma_update(None, "synchronous", "FULL")?;
        Self::init(conn)
    }

    pub fn in_memory() -> Result<Self> {
        Self::init(Connection::open_in_memory()?)
    }

    fn init(conn: Connection) -> Result<Self> {
        conn.pragma_update(None, "foreign_keys", "ON")?;
        conn.busy_timeout(std::time::Duration::from_secs(5))?;
        conn.execute_batch(schema::SCHEMA)?;
        Ok(Repository { conn: Mutex::new(conn), listener: RwLock::new(None) })
    }

    /// Installs the callback that receives events after each successful commit.
    pub fn set_commit_listener(&self, listener: impl Fn(&[SchedulerEvent]) + Send + Sync + 'static) {
        *self.listener.write().expect("listener lock poisoned") = Some(Box::new(listener));
    }

    /// Runs `f` in a write transaction. An `Err` from `f` rolls everything back.
    pub fn write<T, E>(&self, f: impl FnOnce(&mut Tx<'_>) -> Result<T, E>) -> Result<T, E>
    where
        E: From<RepoError>,
    {
        let mut conn = self.conn.lock().unwrap_or_else(|p| p.into_inner());
        let tx = conn.transaction_with_behavior(TransactionBehavior::Immediate).map_err(RepoError::from)?;
        let mut tx = Tx { tx, events: Vec::new() };
        let value = f(&mut tx)?;
        let Tx { tx, events } = tx;
        tx.commit().map_err(RepoError::from)?;
        // Published while the connection is still held so listeners see commit order.
        if !events.is_empty() {
            if let Some(listener) = self.listener.read().expect("listener lock poisoned").as_ref() {
                listener(&events);
            }
        }
        Ok(value)
    }

    /// Runs `f` against a consistent read view. Writes made by `f` are discarded.
    pub fn read<T, E>(&self, f: impl FnOnce(&mut Tx<'_>) -> Result<T, E>) -> Result<T, E>
    where
        E: From<RepoError>,
    {
        let mut conn = self.conn.lock().unwrap_or_else(|p| p.into_inner());
        let tx = conn.transaction_with_behavior(TransactionBehavior::Deferred).map_err(RepoError::from)?;
        let mut tx = Tx { tx, events: Vec::new() };
        f(&mut tx)
    }
}

/// One open transaction.
pub struct Tx<'c> {
    tx: rusqlite::Transaction<'c>,
    events: Vec<SchedulerEvent>,
}

fn flag(b: bool) -> i64 {
    b as i64
}

impl Tx<'_> {
    fn conn(&self) -> &Connection {
        &self.tx
    }

    // --- processes --------------------------------------------------------

    pub fn insert_process(&mut self, def: &ProcessDefinition) -> Result<()> {
        if self.process_exists(&def.pid)? {
            return Err(RepoError::DuplicateProcess(def.pid.clone()));
        }
        let document = serialize_definition(&DefinitionDocument::new(def.clone()));
        let document = String::from_utf8(document).expect("canonical JSON is UTF-8");
        self.conn().execute(
            "INSERT INTO processes (pid, name, document) VALUES (?1, ?2, ?3)",
            params![def.pid, def.name, document],
        )?;
        for (position, s) in def.subjects.iter().enumerate() {
            self.conn().execute(
                "INSERT INTO subjects (sid, pid, name, can_be_started, position) VALUES (?1, ?2, ?3, ?4, ?5)",
                params![s.sid, def.pid, s.name, flag(s.can_be_started), position as i64],
            )?;
        }
        Ok(())
    }

    pub fn process_exists(&self, pid: &str) -> Result<bool> {
        Ok(self.conn().query_row("SELECT 1 FROM processes WHERE pid = ?1", [pid], |_| Ok(())).optional()?.is_some())
    }

    pub fn process_definition(&self, pid: &str) -> Result<Option<ProcessDefinition>> {
        let doc: Option<String> =
            self.conn().query_row("SELECT document FROM processes WHERE pid = ?1", [pid], |r| r.get(0)).optional()?;
        doc.map(|d| {
            parse_definition(d.as_bytes())
                .map(|doc| doc.process)
                .map_err(|e| RepoError::Corrupt(format!("stored definition {pid:?}: {e}")))
        })
        .transpose()
    }

    /// The process that defines subject `sid`.
    pub fn pid_of_subject(&self, sid: &str) -> Result<Option<String>> {
        Ok(self.conn().query_row("SELECT pid FROM subjects WHERE sid = ?1", [sid], |r| r.get(0)).optional()?)
    }

    pub fn subject_name(&self, sid: &str) -> Result<Option<String>> {
        Ok(self.conn().query_row("SELECT name FROM subjects WHERE sid = ?1", [sid], |r| r.get(0)).optional()?)
    }

    pub fn list_processes(&self) -> Result<Vec<(String, String)>> {
        let mut stmt = self.conn().prepare("SELECT pid, name FROM processes ORDER BY pid")?;
        let rows = stmt.query_map([], |r| Ok((r.get(0)?, r.get(1)?)))?;
        Ok(rows.collect::<rusqlite::Result<_>>()?)
    }

    // --- users ------------------------------------------------------------

    /// Creates or replaces a user and its role assignments.
    pub fn put_user(&mut self, user: &UserRecord) -> Result<()> {
        if user.username.is_empty() {
            return Err(RepoError::IntegrityViolation("username must not be empty".into()));
        }
        for role in &user.roles {
            let known: Option<i64> = self
                .conn()
                .query_row(
                    "SELECT 1 FROM subjects WHERE pid = ?1 AND name = ?2",
                    params![role.pid, role.subject_name],
                    |r| r.get(0),
                )
                .optional()?;
            if known.is_none() {
                return Err(RepoError::IntegrityViolation(format!(
                    "role ({}, {}) does not name a defined subject",
                    role.pid, role.subject_name
                )));
            }
        }
        self.conn().execute("INSERT OR IGNORE INTO users (username) VALUES (?1)", [&user.username])?;
        self.conn().execute("DELETE FROM user_roles WHERE username = ?1", [&user.username])?;
        for role in &user.roles {
            self.conn().execute(
                "INSERT INTO user_roles (username, pid, subject_name) VALUES (?1, ?2, ?3)",
                params![user.username, role.pid, role.subject_name],
            )?;
        }
        Ok(())
    }

    pub fn user(&self, username: &str) -> Result<Option<UserRecord>> {
        let exists =
            self.conn().query_row("SELECT 1 FROM users WHERE username = ?1", [username], |_| Ok(())).optional()?;
        if exists.is_none() {
            return Ok(None);
        }
        let mut stmt = self
            .conn()
            .prepare("SELECT pid, subject_name FROM user_roles WHERE username = ?1 ORDER BY pid, subject_name")?;
        let roles = stmt
            .query_map([username], |r| Ok(RoleAssignment { pid: r.get(0)?, subject_name: r.get(1)? }))?
            .collect::<rusqlite::Result<_>>()?;
        Ok(Some(UserRecord { username: username.to_string(), roles }))
    }

    pub(crate) fn require_user(&self, username: &str) -> Result<()> {
        match self.user(username)? {
            Some(_) => Ok(()),
            None => Err(RepoError::UnknownUser(username.to_string())),
        }
    }

    // --- process instances ------------------------------------------------

    pub fn insert_process_instance(&mut self, piid: &Piid, pid: &str) -> Result<()> {
        self.conn()
            .execute("INSERT INTO process_instances (piid, pid) VALUES (?1, ?2)", params![piid.as_str(), pid])?;
        Ok(())
    }

    pub fn process_instance(&self, piid: &Piid) -> Result<Option<ProcessInstanceRecord>> {
        Ok(self
            .conn()
            .query_row("SELECT piid, pid, terminated FROM process_instances WHERE piid = ?1", [piid.as_str()], |r| {
                Ok(ProcessInstanceRecord {
                    piid: Piid::new(r.get::<_, String>(0)?),
                    pid: r.get(1)?,
                    terminated: r.get(2)?,
                })
            })
            .optional()?)
    }

    pub fn mark_process_terminated(&mut self, piid: &Piid) -> Result<()> {
        self.conn().execute("UPDATE process_instances SET terminated = 1 WHERE piid = ?1", [piid.as_str()])?;
        Ok(())
    }

    // --- subject instances ------------------------------------------------

    pub fn insert_instance(&mut self, rec: &SubjectInstanceRecord) -> Result<()> {
        let snapshot = rec.snapshot.as_ref().map(encode_snapshot);
        self.conn().execute(
            "INSERT INTO subject_instances (siid, sid, piid, owner, is_in_end_state, terminated, snapshot)
             VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7)",
            params![
                rec.siid.as_str(),
                rec.sid,
                rec.piid.as_str(),
                rec.owner,
                flag(rec.is_in_end_state),
                flag(rec.terminated),
                snapshot
            ],
        )?;
        Ok(())
    }

    pub fn instance(&self, siid: &Siid) -> Result<Option<SubjectInstanceRecord>> {
        self.conn()
            .query_row(
                "SELECT siid, sid, piid, owner, is_in_end_state, terminated, snapshot
                 FROM subject_instances WHERE siid = ?1",
                [siid.as_str()],
                instance_from_row,
            )
            .optional()?
            .transpose()
    }

    pub(crate) fn require_instance(&self, siid: &Siid) -> Result<SubjectInstanceRecord> {
        self.instance(siid)?.ok_or_else(|| RepoError::UnknownInstance(siid.clone()))
    }

    /// Claims an unowned instance. Fails if it already has an owner.
    pub fn set_owner(&mut self, siid: &Siid, username: &str) -> Result<()> {
        let changed = self.conn().execute(
            "UPDATE subject_instances SET owner = ?2 WHERE siid = ?1 AND owner IS NULL",
            params![siid.as_str(), username],
        )?;
        if changed == 0 {
            self.require_instance(siid)?;
            return Err(RepoError::IntegrityViolation(format!("instance {siid} is already owned")));
        }
        Ok(())
    }

    pub fn set_in_end_state(&mut self, siid: &Siid) -> Result<()> {
        self.conn().execute("UPDATE subject_instances SET is_in_end_state = 1 WHERE siid = ?1", [siid.as_str()])?;
        Ok(())
    }

    pub fn mark_instance_terminated(&mut self, siid: &Siid) -> Result<()> {
        self.conn().execute("UPDATE subject_instances SET terminated = 1 WHERE siid = ?1", [siid.as_str()])?;
        Ok(())
    }

    pub fn save_snapshot(&mut self, siid: &Siid, snapshot: Option<&Snapshot>) -> Result<()> {
        let changed = self.conn().execute(
            "UPDATE subject_instances SET snapshot = ?2 WHERE siid = ?1",
            params![siid.as_str(), snapshot.map(encode_snapshot)],
        )?;
        if changed == 0 {
            return Err(RepoError::UnknownInstance(siid.clone()));
        }
        Ok(())
    }

    // --- tasks ------------------------------------------------------------

    pub fn insert_task(&mut self, task: &TaskRecord) -> Result<()> {
        let (to_subject, mtype) = match &task.kind {
            TaskKind::Send { to_subject, mtype, .. } => (Some(to_subject.as_str()), Some(mtype.as_str())),
            _ => (None, None),
        };
        self.conn().execute(
            "INSERT INTO tasks (tid, siid, kind, name, state_id, done, to_subject, mtype)
             VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8)",
            params![
                task.tid.as_str(),
                task.siid.as_str(),
                task.kind.tag().as_str(),
                task.name,
                task.state_id,
                flag(task.done),
                to_subject,
                mtype
            ],
        )?;
        let tid = task.tid.as_str();
        match &task.kind {
            TaskKind::Function { transitions, params } => {
                for (i, label) in transitions.iter().enumerate() {
                    self.conn().execute(
                        "INSERT INTO task_transitions (tid, position, label) VALUES (?1, ?2, ?3)",
                        params![tid, i as i64, label],
                    )?;
                }
                self.insert_task_params(tid, params)?;
            }
            TaskKind::Send { params, .. } => self.insert_task_params(tid, params)?,
            TaskKind::Receive { mtypes } => {
                for (i, mtype) in mtypes.iter().enumerate() {
                    self.conn().execute(
                        "INSERT INTO task_mtypes (tid, position, mtype) VALUES (?1, ?2, ?3)",
                        params![tid, i as i64, mtype],
                    )?;
                }
            }
        }
        Ok(())
    }

    fn insert_task_params(&self, tid: &str, task_params: &[TaskParam]) -> Result<()> {
        for (i, p) in task_params.iter().enumerate() {
            self.conn().execute(
                "INSERT INTO task_params (tid, position, name, value, writable) VALUES (?1, ?2, ?3, ?4, ?5)",
                params![tid, i as i64, p.name, p.value, flag(p.writable)],
            )?;
        }
        Ok(())
    }

    pub fn task(&self, tid: &Tid) -> Result<Option<TaskRecord>> {
        let row = self
            .conn()
            .query_row(
                "SELECT tid, siid, kind, name, state_id, done, to_subject, mtype FROM tasks WHERE tid = ?1",
                [tid.as_str()],
                |r| {
                    Ok((
                        r.get::<_, String>(0)?,
                        r.get::<_, String>(1)?,
                        r.get::<_, String>(2)?,
                        r.get::<_, String>(3)?,
                        r.get::<_, String>(4)?,
                        r.get::<_, bool>(5)?,
                        r.get::<_, Option<String>>(6)?,
                        r.get::<_, Option<String>>(7)?,
                    ))
                },
            )
            .optional()?;
        let Some((tid, siid, kind, name, state_id, done, to_subject, mtype)) = row else { return Ok(None) };
        let kind = match kind.as_str() {
            "function" => {
                TaskKind::Function { transitions: self.task_transitions(&tid)?, params: self.task_params(&tid)? }
            }
            "send" => TaskKind::Send {
                to_subject: to_subject.unwrap_or_default(),
                mtype: mtype.unwrap_or_default(),
                params: self.task_params(&tid)?,
            },
            "receive" => TaskKind::Receive { mtypes: self.task_mtypes(&tid)? },
            other => return Err(RepoError::Corrupt(format!("task {tid} has kind {other:?}"))),
        };
        Ok(Some(TaskRecord { tid: Tid::new(tid), name, siid: Siid::new(siid), state_id, done, kind }))
    }

    pub(crate) fn tasks_by_id(&self, tids: Vec<String>) -> Result<Vec<TaskRecord>> {
        tids.into_iter()
            .map(|tid| {
                let tid = Tid::new(tid);
                self.task(&tid)?.ok_or_else(|| RepoError::Corrupt(format!("task {tid} vanished")))
            })
            .collect()
    }

    fn task_transitions(&self, tid: &str) -> Result<Vec<String>> {
        let mut stmt = self.conn().prepare("SELECT label FROM task_transitions WHERE tid = ?1 ORDER BY position")?;
        let rows = stmt.query_map([tid], |r| r.get(0))?;
        Ok(rows.collect::<rusqlite::Result<_>>()?)
    }

    fn task_params(&self, tid: &str) -> Result<Vec<TaskParam>> {
        let mut stmt =
            self.conn().prepare("SELECT name, value, writable FROM task_params WHERE tid = ?1 ORDER BY position")?;
        let rows =
            stmt.query_map([tid], |r| Ok(TaskParam { name: r.get(0)?, value: r.get(1)?, writable: r.get(2)? }))?;
        Ok(rows.collect::<rusqlite::Result<_>>()?)
    }

    fn task_mtypes(&self, tid: &str) -> Result<Vec<String>> {
        let mut stmt = self.conn().prepare("SELECT mtype FROM task_mtypes WHERE tid = ?1 ORDER BY position")?;
        let rows = stmt.query_map([tid], |r| r.get(0))?;
        Ok(rows.collect::<rusqlite::Result<_>>()?)
    }

    /// Marks an open task done. Fails if it was already done.
    pub fn mark_task_done(&mut self, tid: &Tid) -> Result<()> {
        let changed = self.conn().execute("UPDATE tasks SET done = 1 WHERE tid = ?1 AND done = 0", [tid.as_str()])?;
        if changed == 0 {
            return Err(RepoError::IntegrityViolation(format!("task {tid} is unknown or already done")));
        }
        Ok(())
    }

    pub fn tasks_of(&self, siid: &Siid) -> Result<Vec<TaskRecord>> {
        let mut stmt = self.conn().prepare("SELECT tid FROM tasks WHERE siid = ?1 ORDER BY rowid")?;
        let tids = stmt.query_map([siid.as_str()], |r| r.get(0))?.collect::<rusqlite::Result<_>>()?;
        self.tasks_by_id(tids)
    }

    pub fn open_task_of(&self, siid: &Siid) -> Result<Option<TaskRecord>> {
        let tid: Option<String> = self
            .conn()
            .query_row("SELECT tid FROM tasks WHERE siid = ?1 AND done = 0", [siid.as_str()], |r| r.get(0))
            .optional()?;
        match tid {
            Some(tid) => self.task(&Tid::new(tid)),
            None => Ok(None),
        }
    }

    // --- messages ---------------------------------------------------------

    pub fn insert_message(&mut self, msg: &MessageRecord) -> Result<()> {
        self.conn().execute(
            "INSERT INTO messages (mid, mtype, from_siid, to_subject, to_siid, received) VALUES (?1, ?2, ?3, ?4, ?5, ?6)",
            params![
                msg.mid.as_str(),
                msg.mtype,
                msg.from_siid.as_str(),
                msg.to_subject,
                msg.to_siid.as_str(),
                flag(msg.received)
            ],
        )?;
        for (name, value) in msg.params.iter() {
            self.conn().execute(
                "INSERT INTO message_params (mid, name, value) VALUES (?1, ?2, ?3)",
                params![msg.mid.as_str(), name, value],
            )?;
        }
        Ok(())
    }

    pub fn message(&self, mid: &Mid) -> Result<Option<MessageRecord>> {
        let row = self
            .conn()
            .query_row(
                "SELECT mid, mtype, from_siid, to_subject, to_siid, received FROM messages WHERE mid = ?1",
                [mid.as_str()],
                |r| {
                    Ok(MessageRecord {
                        mid: Mid::new(r.get::<_, String>(0)?),
                        mtype: r.get(1)?,
                        from_siid: Siid::new(r.get::<_, String>(2)?),
                        to_subject: r.get(3)?,
                        to_siid: Siid::new(r.get::<_, String>(4)?),
                        received: r.get(5)?,
                        params: Bindings::new(),
                    })
                },
            )
            .optional()?;
        let Some(mut msg) = row else { return Ok(None) };
        let mut stmt = self.conn().prepare("SELECT name, value FROM message_params WHERE mid = ?1")?;
        msg.params = stmt
            .query_map([mid.as_str()], |r| Ok((r.get::<_, String>(0)?, r.get::<_, String>(1)?)))?
            .collect::<rusqlite::Result<_>>()?;
        Ok(Some(msg))
    }

    pub(crate) fn messages_by_id(&self, mids: Vec<String>) -> Result<Vec<MessageRecord>> {
        mids.into_iter()
            .map(|mid| {
                let mid = Mid::new(mid);
                self.message(&mid)?.ok_or_else(|| RepoError::Corrupt(format!("message {mid} vanished")))
            })
            .collect()
    }

    /// Marks a pooled message as consumed. Fails if it was already received.
    pub fn mark_received(&mut self, mid: &Mid) -> Result<()> {
        let changed =
            self.conn().execute("UPDATE messages SET received = 1 WHERE mid = ?1 AND received = 0", [mid.as_str()])?;
        if changed == 0 {
            return Err(RepoError::IntegrityViolation(format!("message {mid} is unknown or already received")));
        }
        Ok(())
    }

    /// Every message addressed to `siid`, received or not.
    pub fn messages_to(&self, siid: &Siid) -> Result<Vec<MessageRecord>> {
        let mut stmt = self.conn().prepare("SELECT mid FROM messages WHERE to_siid = ?1 ORDER BY rowid")?;
        let mids = stmt.query_map([siid.as_str()], |r| r.get(0))?.collect::<rusqlite::Result<_>>()?;
        self.messages_by_id(mids)
    }

    // --- events -----------------------------------------------------------

    /// Persists an event with this transaction and returns its sequence number.
    pub fn emit(&mut self, mut event: SchedulerEvent) -> Result<u64> {
        self.conn().execute(
            "INSERT INTO events (kind, pid, piid, siid, tid, mid, mtype, username, timestamp_ms)
             VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8, ?9)",
            params![
                event.kind.as_str(),
                event.pid,
                event.piid.as_ref().map(Piid::as_str),
                event.siid.as_ref().map(Siid::as_str),
                event.tid.as_ref().map(Tid::as_str),
                event.mid.as_ref().map(Mid::as_str),
                event.mtype,
                event.username,
                event.timestamp_ms as i64
            ],
        )?;
        event.seq = self.conn().last_insert_rowid() as u64;
        let seq = event.seq;
        self.events.push(event);
        Ok(seq)
    }

    /// Events with `seq > after`, oldest first.
    pub fn events_after(&self, after: u64) -> Result<Vec<SchedulerEvent>> {
        self.select_events("WHERE seq > ?1 ORDER BY seq", [after as i64])
    }

    pub fn events_of_process(&self, piid: &Piid) -> Result<Vec<SchedulerEvent>> {
        self.select_events("WHERE piid = ?1 ORDER BY seq", [piid.as_str()])
    }

    fn select_events<P: rusqlite::Params>(&self, clause: &str, p: P) -> Result<Vec<SchedulerEvent>> {
        let sql =
            format!("SELECT seq, kind, pid, piid, siid, tid, mid, mtype, username, timestamp_ms FROM events {clause}");
        let mut stmt = self.conn().prepare(&sql)?;
        let rows = stmt.query_map(p, |r| {
            let kind: String = r.get(1)?;
            Ok((
                kind,
                SchedulerEvent {
                    seq: r.get::<_, i64>(0)? as u64,
                    kind: EventKind::ProcessStarted,
                    pid: r.get(2)?,
                    piid: r.get::<_, Option<String>>(3)?.map(Piid::new),
                    siid: r.get::<_, Option<String>>(4)?.map(Siid::new),
                    tid: r.get::<_, Option<String>>(5)?.map(Tid::new),
                    mid: r.get::<_, Option<String>>(6)?.map(Mid::new),
                    mtype: r.get(7)?,
                    username: r.get(8)?,
                    timestamp_ms: r.get::<_, i64>(9)? as u64,
                },
            ))
        })?;
        rows.map(|row| {
            let (kind, mut event) = row?;
            event.kind = EventKind::parse(&kind).ok_or_else(|| RepoError::Corrupt(format!("event kind {kind:?}")))?;
            Ok(event)
        })
        .collect()
    }
}

fn encode_snapshot(s: &Snapshot) -> String {
    serde_json::to_string(s).expect("snapshots always serialize")
}

fn instance_from_row(r: &rusqlite::Row<'_>) -> rusqlite::Result<Result<SubjectInstanceRecord>> {
    let siid: String = r.get(0)?;
    let snapshot: Option<String> = r.get(6)?;
    let snapshot = match snapshot.map(|s| serde_json::from_str::<Snapshot>(&s)).transpose() {
        Ok(s) => s,
        Err(e) => return Ok(Err(RepoError::Corrupt(format!("snapshot of {siid}: {e}")))),
    };
    Ok(Ok(SubjectInstanceRecord {
        siid: Siid::new(siid),
        sid: r.get(1)?,
        piid: Piid::new(r.get::<_, String>(2)?),
        owner: r.get(3)?,
        is_in_end_state: r.get(4)?,
        terminated: r.get(5)?,
        snapshot,
    }))
}
