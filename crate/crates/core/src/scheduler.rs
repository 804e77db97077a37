//! The scheduler hosts subject instances: it starts processes, routes
//! messages into input pools (creating recipients on first contact), resumes
//! sleeping instances from their snapshots when a task is answered, and
//! terminates a process instance once every instantiated subject is in an end
//! state.
//!
//! No engine instance outlives a call. Every operation restores what it needs
//! from the repository and writes the resulting snapshot back in the same
//! transaction that records tasks, messages and events.
//!
//! Operations on one subject instance are serialized by a per-instance lock;
//! the refinement call (which may block on the network) happens under that
//! lock but outside any repository transaction.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::broadcast;

use crate::engine::{self, Effect, EngineError, EngineInstance, RefinementHost};
use crate::event::{EventKind, SchedulerEvent};
use crate::model::{validate, BehaviorGraph, Bindings, ProcessDefinition, ValidationReport, Violation};
use crate::model_io::{parse_definition, ParseError};
use crate::refinement::{RefinementContext, RefinementRegistry};
use crate::repository::{
    MessageRecord, RepoError, Repository, RoleAssignment, StartableProcess, SubjectInstanceRecord, TaskRecord, Tx,
    UserRecord,
};
use crate::task::{Mid, Piid, Siid, TaskKind, Tid};

#[derive(Debug, Error)]
pub enum SchedulerError {
    #[error("user {username:?} may not start subject {sid:?}")]
    NotAuthorized { sid: String, username: String },
    #[error("unknown user {0:?}")]
    UnknownUser(String),
    #[error("unknown subject {0:?}")]
    UnknownSubject(String),
    #[error("unknown task {0}")]
    UnknownTask(Tid),
    #[error("unknown subject instance {0}")]
    UnknownInstance(Siid),
    #[error("unknown process {0:?}")]
    UnknownProcess(String),
    #[error("unknown process instance {0}")]
    UnknownProcessInstance(Piid),
    #[error("process {pid:?} has no subject named {name:?}")]
    UnknownToSubject { pid: String, name: String },
    #[error("task {0} is already done")]
    TaskAlreadyDone(Tid),
    #[error("task {tid} is not visible to {username:?}")]
    NotVisible { tid: Tid, username: String },
    #[error("invalid answer: {0}")]
    InvalidAnswer(String),
    #[error("refinement {name:?} failed: {message}")]
    Refinement { name: String, message: String },
    #[error("process instance {0} is terminated")]
    ProcessTerminated(Piid),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("definition is invalid:\n{0}")]
    Invalid(ValidationReport),
    #[error("process {0:?} already exists")]
    DuplicateProcess(String),
    #[error("integrity violation: {0}")]
    Integrity(String),
    #[error("storage error: {0}")]
    Storage(String),
}

impl From<RepoError> for SchedulerError {
    fn from(e: RepoError) -> Self {
        match e {
            RepoError::UnknownUser(u) => SchedulerError::UnknownUser(u),
            RepoError::UnknownInstance(s) => SchedulerError::UnknownInstance(s),
            RepoError::UnknownSubjectName { pid, name } => SchedulerError::UnknownToSubject { pid, name },
            RepoError::UnknownProcess(p) => SchedulerError::UnknownProcess(p),
            RepoError::DuplicateProcess(p) => SchedulerError::DuplicateProcess(p),
            RepoError::IntegrityViolation(m) => SchedulerError::Integrity(m),
            e @ (RepoError::Corrupt(_) | RepoError::Storage(_)) => SchedulerError::Storage(e.to_string()),
        }
    }
}

impl From<EngineError> for SchedulerError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Refinement { name, message } => SchedulerError::Refinement { name, message },
            other => SchedulerError::InvalidAnswer(other.to_string()),
        }
    }
}

pub type Result<T, E = SchedulerError> = std::result::Result<T, E>;

/// Answer payload for a task, discriminated by task kind.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskAnswer {
    Function {
        transition: String,
        #[serde(default)]
        params: Bindings,
    },
    Send {
        #[serde(default)]
        params: Bindings,
    },
    /// `mid` may be omitted when exactly one message is receivable.
    Receive {
        #[serde(default)]
        mid: Option<Mid>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StartedProcess {
    pub pid: String,
    pub piid: Piid,
    pub siid: Siid,
    pub first_task: Option<TaskRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerOutcome {
    pub tid: Tid,
    pub siid: Siid,
    pub piid: Piid,
    pub claimed: bool,
    pub received: Option<Mid>,
    pub sent: Vec<Mid>,
    pub next_task: Option<TaskRecord>,
    pub entered_end_state: bool,
    pub process_terminated: bool,
}

/// A task together with the context a client needs to present it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskView {
    #[serde(flatten)]
    pub task: TaskRecord,
    pub pid: String,
    pub process_name: String,
    pub piid: Piid,
    pub sid: String,
    pub subject_name: String,
    pub owner: Option<String>,
    /// Receivable messages; empty for function and send tasks.
    pub messages: Vec<MessageRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UploadOutcome {
    pub pid: String,
    pub name: String,
    pub warnings: Vec<Violation>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceStatus {
    #[serde(flatten)]
    pub record: SubjectInstanceRecord,
    pub subject_name: String,
    pub tasks: Vec<TaskRecord>,
    pub messages: Vec<MessageRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcessInstanceStatus {
    pub piid: Piid,
    pub pid: String,
    pub process_name: String,
    pub terminated: bool,
    pub instances: Vec<InstanceStatus>,
    pub events: Vec<SchedulerEvent>,
}

struct CachedProcess {
    def: ProcessDefinition,
    behaviors: HashMap<String, Arc<BehaviorGraph>>,
}

impl CachedProcess {
    fn new(def: ProcessDefinition) -> Self {
        let behaviors = def.subjects.iter().map(|s| (s.sid.clone(), Arc::new(s.behavior.clone()))).collect();
        CachedProcess { def, behaviors }
    }

    fn behavior(&self, sid: &str) -> Result<Arc<BehaviorGraph>> {
        self.behaviors.get(sid).cloned().ok_or_else(|| SchedulerError::UnknownSubject(sid.to_string()))
    }

    fn subject_name(&self, sid: &str) -> Result<&str> {
        self.def.subject(sid).map(|s| s.name.as_str()).ok_or_else(|| SchedulerError::UnknownSubject(sid.to_string()))
    }
}

/// Identity of the subject instance an effect batch belongs to.
struct InstanceCtx {
    pid: String,
    piid: Piid,
    siid: Siid,
}

#[derive(Default)]
struct EffectOutcome {
    sent: Vec<Mid>,
    next_task: Option<TaskRecord>,
    entered_end_state: bool,
    process_terminated: bool,
}

struct Registered<'a> {
    registry: &'a RefinementRegistry,
    pid: &'a str,
    piid: &'a Piid,
    siid: &'a Siid,
}

impl RefinementHost for Registered<'_> {
    fn invoke(&mut self, name: &str, state_id: &str, variables: &Bindings) -> Result<Bindings, String> {
        let handler = self.registry.resolve(name).ok_or_else(|| format!("no refinement registered for {name:?}"))?;
        handler.invoke(&RefinementContext {
            name,
            pid: self.pid,
            piid: self.piid,
            siid: self.siid,
            state_id,
            variables,
        })
    }
}

const EVENT_BUFFER: usize = 4096;

pub struct Scheduler {
    repo: Arc<Repository>,
    processes: RwLock<HashMap<String, Arc<CachedProcess>>>,
    instance_locks: Mutex<HashMap<Siid, Arc<Mutex<()>>>>,
    refinements: RefinementRegistry,
    events: broadcast::Sender<SchedulerEvent>,
}

impl Scheduler {
    pub fn new(repo: Arc<Repository>, refinements: RefinementRegistry) -> Self {
        let (events, _) = broadcast::channel(EVENT_BUFFER);
        let sender = events.clone();
        repo.set_commit_listener(move |batch| {
            for e in batch {
                // No subscribers is fine.
                let _ = sender.send(e.clone());
            }
        });
        Scheduler {
            repo,
            processes: RwLock::new(HashMap::new()),
            instance_locks: Mutex::new(HashMap::new()),
            refinements,
            events,
        }
    }

    pub fn repository(&self) -> &Arc<Repository> {
        &self.repo
    }

    /// Live events committed after this call.
    pub fn subscribe(&self) -> broadcast::Receiver<SchedulerEvent> {
        self.events.subscribe()
    }

    /// Persisted events with `seq > after`.
    pub fn events_after(&self, after: u64) -> Result<Vec<SchedulerEvent>> {
        Ok(self.repo.read(|tx| tx.events_after(after))?)
    }

    fn process(&self, tx: &Tx<'_>, pid: &str) -> Result<Arc<CachedProcess>> {
        if let Some(p) = self.processes.read().expect("process cache poisoned").get(pid) {
            return Ok(p.clone());
        }
        let def = tx.process_definition(pid)?.ok_or_else(|| SchedulerError::UnknownProcess(pid.to_string()))?;
        let cached = Arc::new(CachedProcess::new(def));
        self.processes.write().expect("process cache poisoned").insert(pid.to_string(), cached.clone());
        Ok(cached)
    }

    fn instance_lock(&self, siid: &Siid) -> Arc<Mutex<()>> {
        let mut locks = self.instance_locks.lock().unwrap_or_else(|p| p.into_inner());
        locks.entry(siid.clone()).or_default().clone()
    }

    // --- administration ---------------------------------------------------

    /// Parses, validates and stores a definition document.
    pub fn upload_definition(&self, bytes: &[u8]) -> Result<UploadOutcome> {
        let doc = parse_definition(bytes)?;
        self.register_definition(doc.process)
    }

    pub fn register_definition(&self, def: ProcessDefinition) -> Result<UploadOutcome> {
        let report = validate(&def);
        if !report.is_valid() {
            return Err(SchedulerError::Invalid(report));
        }
        self.repo.write(|tx| -> Result<()> {
            tx.insert_process(&def)?;
            let mut event = SchedulerEvent::new(EventKind::DefinitionUploaded);
            event.pid = Some(def.pid.clone());
            tx.emit(event)?;
            Ok(())
        })?;
        let outcome = UploadOutcome { pid: def.pid.clone(), name: def.name.clone(), warnings: report.warnings };
        self.processes
            .write()
            .expect("process cache poisoned")
            .insert(def.pid.clone(), Arc::new(CachedProcess::new(def)));
        Ok(outcome)
    }

    pub fn put_user(&self, username: &str, roles: impl IntoIterator<Item = RoleAssignment>) -> Result<UserRecord> {
        let user = UserRecord { username: username.to_string(), roles: roles.into_iter().collect() };
        self.repo.write(|tx| -> Result<()> {
            tx.put_user(&user)?;
            tx.emit(SchedulerEvent::new(EventKind::UserUpdated).with_user(username))?;
            Ok(())
        })?;
        Ok(user)
    }

    pub fn user(&self, username: &str) -> Result<UserRecord> {
        self.repo.read(|tx| tx.user(username))?.ok_or_else(|| SchedulerError::UnknownUser(username.to_string()))
    }

    // --- task service -----------------------------------------------------

    pub fn startable(&self, username: &str) -> Result<Vec<StartableProcess>> {
        Ok(self.repo.read(|tx| tx.q1_startable_processes(username))?)
    }

    /// Starts a new process instance with `sid` owned by `username`.
    pub fn start_process(&self, sid: &str, username: &str) -> Result<StartedProcess> {
        self.repo.write(|tx| {
            tx.require_user(username)?;
            let pid = tx.pid_of_subject(sid)?.ok_or_else(|| SchedulerError::UnknownSubject(sid.to_string()))?;
            if !tx.q1_startable_processes(username)?.iter().any(|p| p.sid == sid) {
                return Err(SchedulerError::NotAuthorized { sid: sid.to_string(), username: username.to_string() });
            }
            let process = self.process(tx, &pid)?;
            let ctx = InstanceCtx { pid: pid.clone(), piid: Piid::generate(), siid: Siid::generate() };
            tx.insert_process_instance(&ctx.piid, &pid)?;
            tx.insert_instance(&SubjectInstanceRecord {
                siid: ctx.siid.clone(),
                sid: sid.to_string(),
                piid: ctx.piid.clone(),
                owner: Some(username.to_string()),
                is_in_end_state: false,
                terminated: false,
                snapshot: None,
            })?;
            tx.emit(
                SchedulerEvent::instance(EventKind::ProcessStarted, &pid, &ctx.piid, &ctx.siid).with_user(username),
            )?;

            let (engine, effects) = engine::instantiate(process.behavior(sid)?, ctx.siid.clone())
                .map_err(|e| SchedulerError::Integrity(e.to_string()))?;
            let outcome = self.apply_effects(tx, &ctx, &engine, effects)?;
            Ok(StartedProcess { pid, piid: ctx.piid, siid: ctx.siid, first_task: outcome.next_task })
        })
    }

    /// Union of open function, send and receive tasks visible to `username`.
    pub fn open_tasks(&self, username: &str) -> Result<Vec<TaskView>> {
        self.repo.read(|tx| {
            let mut views = Vec::new();
            for task in tx.q2_open_function_tasks(username)?.into_iter().chain(tx.q3_open_send_tasks(username)?) {
                views.push(self.view(tx, task, Vec::new())?);
            }
            for (task, messages) in tx.q4_open_receive_tasks(username)? {
                views.push(self.view(tx, task, messages)?);
            }
            views.sort_by(|a, b| a.task.tid.cmp(&b.task.tid));
            Ok(views)
        })
    }

    /// Full task detail, subject to the same visibility rules as the task list.
    pub fn task_detail(&self, tid: &Tid, username: &str) -> Result<TaskView> {
        self.repo.read(|tx| {
            tx.require_user(username)?;
            let task = tx.task(tid)?.ok_or_else(|| SchedulerError::UnknownTask(tid.clone()))?;
            let inst = tx.require_instance(&task.siid)?;
            let (pid, _) = tx.q5_process_of_instance(&inst.siid)?;
            if !self.visible(tx, &inst, &pid, username)? {
                return Err(SchedulerError::NotVisible { tid: tid.clone(), username: username.to_string() });
            }
            let messages = match &task.kind {
                TaskKind::Receive { mtypes } if !task.done => {
                    let mids = tx.q8_receivable_messages(&task.siid, mtypes)?;
                    tx.messages_by_id(mids.into_iter().map(|m| m.as_str().to_string()).collect())?
                }
                _ => Vec::new(),
            };
            self.view(tx, task, messages)
        })
    }

    fn view(&self, tx: &Tx<'_>, task: TaskRecord, messages: Vec<MessageRecord>) -> Result<TaskView> {
        let inst = tx.require_instance(&task.siid)?;
        let (pid, piid) = tx.q5_process_of_instance(&inst.siid)?;
        let process = self.process(tx, &pid)?;
        Ok(TaskView {
            subject_name: process.subject_name(&inst.sid)?.to_string(),
            process_name: process.def.name.clone(),
            pid,
            piid,
            sid: inst.sid,
            owner: inst.owner,
            messages,
            task,
        })
    }

    fn visible(&self, tx: &Tx<'_>, inst: &SubjectInstanceRecord, pid: &str, username: &str) -> Result<bool> {
        match &inst.owner {
            Some(owner) => Ok(owner == username),
            None => {
                let process = self.process(tx, pid)?;
                let role =
                    RoleAssignment { pid: pid.to_string(), subject_name: process.subject_name(&inst.sid)?.to_string() };
                let user = tx.user(username)?.ok_or_else(|| SchedulerError::UnknownUser(username.to_string()))?;
                Ok(user.roles.contains(&role))
            }
        }
    }

    /// Resumes the task's subject instance with `answer`.
    ///
    /// The first successful answer on an unowned instance claims it for
    /// `username`. A rejected answer leaves the task open and the instance
    /// unchanged.
    pub fn answer_task(&self, tid: &Tid, username: &str, answer: TaskAnswer) -> Result<AnswerOutcome> {
        let siid = self.repo.read(|tx| tx.task(tid))?.ok_or_else(|| SchedulerError::UnknownTask(tid.clone()))?.siid;
        let lock = self.instance_lock(&siid);
        let _guard = lock.lock().unwrap_or_else(|p| p.into_inner());

        // Wake the instance.
        let (inst, ctx, mut engine, message) = self.repo.read(|tx| {
            let task = tx.task(tid)?.ok_or_else(|| SchedulerError::UnknownTask(tid.clone()))?;
            let inst = tx.require_instance(&siid)?;
            if task.done || inst.terminated {
                return Err(SchedulerError::TaskAlreadyDone(tid.clone()));
            }
            tx.require_user(username)?;
            let (pid, piid) = tx.q5_process_of_instance(&siid)?;
            if !self.visible(tx, &inst, &pid, username)? {
                return Err(SchedulerError::NotVisible { tid: tid.clone(), username: username.to_string() });
            }
            let snapshot = inst
                .snapshot
                .clone()
                .ok_or_else(|| SchedulerError::Storage(format!("instance {siid} has no snapshot")))?;
            if snapshot.pending_task.as_ref() != Some(tid) {
                return Err(SchedulerError::Storage(format!("snapshot of {siid} is not waiting on task {tid}")));
            }
            let process = self.process(tx, &pid)?;
            let engine = engine::restore(process.behavior(&inst.sid)?, &snapshot, siid.clone())
                .map_err(|e| SchedulerError::Storage(e.to_string()))?;

            let message = match (&task.kind, &answer) {
                (TaskKind::Receive { mtypes }, TaskAnswer::Receive { mid }) => {
                    let candidates = tx.q8_receivable_messages(&siid, mtypes)?;
                    let chosen = match (mid, candidates.as_slice()) {
                        (Some(mid), _) if candidates.contains(mid) => mid.clone(),
                        (Some(mid), _) => {
                            return Err(SchedulerError::InvalidAnswer(format!("message {mid} cannot be received here")))
                        }
                        (None, [only]) => only.clone(),
                        (None, []) => return Err(SchedulerError::InvalidAnswer("no message to receive".into())),
                        (None, many) => {
                            return Err(SchedulerError::InvalidAnswer(format!(
                                "{} messages are receivable, select one by mid",
                                many.len()
                            )))
                        }
                    };
                    tx.message(&chosen)?
                }
                (TaskKind::Function { .. }, TaskAnswer::Function { .. })
                | (TaskKind::Send { .. }, TaskAnswer::Send { .. }) => None,
                (kind, _) => {
                    return Err(SchedulerError::InvalidAnswer(format!("task {tid} is a {} task", kind.tag())));
                }
            };
            Ok((inst, InstanceCtx { pid, piid, siid: siid.clone() }, engine, message))
        })?;

        // Step the engine. Refinements run here, outside any transaction.
        let effects = match &answer {
            TaskAnswer::Function { transition, params } => {
                let mut host =
                    Registered { registry: &self.refinements, pid: &ctx.pid, piid: &ctx.piid, siid: &ctx.siid };
                engine.apply_function_answer(transition, params, &mut host)?
            }
            TaskAnswer::Send { params } => engine.apply_send_answer(params)?,
            TaskAnswer::Receive { .. } => {
                let msg = message.as_ref().expect("receive answers resolve a message");
                engine.apply_receive(&msg.mtype, &msg.params)?
            }
        };

        // Persist the step and put the instance back to sleep.
        self.repo.write(|tx| {
            let claimed = inst.owner.is_none();
            if claimed {
                tx.set_owner(&siid, username)?;
                tx.emit(
                    SchedulerEvent::instance(EventKind::InstanceClaimed, &ctx.pid, &ctx.piid, &siid)
                        .with_tid(tid)
                        .with_user(username),
                )?;
            }
            if let Some(msg) = &message {
                tx.mark_received(&msg.mid)?;
            }
            tx.mark_task_done(tid)?;
            let outcome = self.apply_effects(tx, &ctx, &engine, effects)?;
            Ok(AnswerOutcome {
                tid: tid.clone(),
                siid: siid.clone(),
                piid: ctx.piid.clone(),
                claimed,
                received: message.as_ref().map(|m| m.mid.clone()),
                sent: outcome.sent,
                next_task: outcome.next_task,
                entered_end_state: outcome.entered_end_state,
                process_terminated: outcome.process_terminated,
            })
        })
    }

    /// Carries out one engine step's effects and stores the new snapshot.
    fn apply_effects(
        &self,
        tx: &mut Tx<'_>,
        ctx: &InstanceCtx,
        engine: &EngineInstance,
        effects: Vec<Effect>,
    ) -> Result<EffectOutcome> {
        let mut out = EffectOutcome::default();
        for effect in effects {
            match effect {
                Effect::CreateTask(proto) => {
                    let task = TaskRecord {
                        tid: Tid::generate(),
                        name: proto.name,
                        siid: ctx.siid.clone(),
                        state_id: proto.state_id,
                        done: false,
                        kind: proto.kind,
                    };
                    tx.insert_task(&task)?;
                    tx.emit(
                        SchedulerEvent::instance(EventKind::TaskCreated, &ctx.pid, &ctx.piid, &ctx.siid)
                            .with_tid(&task.tid),
                    )?;
                    out.next_task = Some(task);
                }
                Effect::SendMessage { mtype, to_subject, params } => {
                    out.sent.push(self.deliver(tx, &ctx.siid, &mtype, &to_subject, params)?);
                }
                Effect::InvokeRefinement { name, state_id, .. } => {
                    tracing::debug!(siid = %ctx.siid, %name, %state_id, "refinement invoked");
                }
                Effect::EnteredEndState => out.entered_end_state = true,
                Effect::Halted => {}
            }
        }
        let mut snapshot = engine.snapshot();
        snapshot.pending_task = out.next_task.as_ref().map(|t| t.tid.clone());
        tx.save_snapshot(&ctx.siid, Some(&snapshot))?;
        if out.entered_end_state {
            out.process_terminated = self.end_state_entered_in(tx, ctx)?;
        }
        Ok(out)
    }

    /// Routes a message into the recipient's pool, instantiating the
    /// recipient subject in the sender's process instance if needed.
    fn deliver(&self, tx: &mut Tx<'_>, from: &Siid, mtype: &str, to_subject: &str, params: Bindings) -> Result<Mid> {
        let (pid, piid) = tx.q5_process_of_instance(from)?;
        if tx.process_instance(&piid)?.is_some_and(|p| p.terminated) {
            return Err(SchedulerError::ProcessTerminated(piid));
        }
        let to_sid = tx.q6_subject_by_name(&pid, to_subject)?;
        let (to_siid, created) = match tx.q7_instance_of(&to_sid, &piid)? {
            Some(siid) => (siid, false),
            None => {
                let siid = Siid::generate();
                tx.insert_instance(&SubjectInstanceRecord {
                    siid: siid.clone(),
                    sid: to_sid.clone(),
                    piid: piid.clone(),
                    owner: None,
                    is_in_end_state: false,
                    terminated: false,
                    snapshot: None,
                })?;
                (siid, true)
            }
        };

        let msg = MessageRecord {
            mid: Mid::generate(),
            mtype: mtype.to_string(),
            from_siid: from.clone(),
            to_subject: to_subject.to_string(),
            to_siid: to_siid.clone(),
            received: false,
            params,
        };
        tx.insert_message(&msg)?;
        tx.emit(
            SchedulerEvent::instance(EventKind::MessageDelivered, &pid, &piid, &to_siid).with_message(&msg.mid, mtype),
        )?;

        if created {
            let process = self.process(tx, &pid)?;
            let (engine, effects) = engine::instantiate(process.behavior(&to_sid)?, to_siid.clone())
                .map_err(|e| SchedulerError::Integrity(e.to_string()))?;
            self.apply_effects(tx, &InstanceCtx { pid, piid, siid: to_siid }, &engine, effects)?;
        }
        Ok(msg.mid)
    }

    /// Delivers a message on behalf of `from` in its own transaction.
    ///
    /// Deliveries into a terminated process instance are refused and recorded
    /// as a `DeliveryRejected` event.
    pub fn deliver_message(&self, from: &Siid, mtype: &str, to_subject: &str, params: Bindings) -> Result<Mid> {
        let result = self.repo.write(|tx| self.deliver(tx, from, mtype, to_subject, params));
        if let Err(SchedulerError::ProcessTerminated(piid)) = &result {
            tracing::warn!(%piid, %mtype, %to_subject, "delivery into terminated process rejected");
            self.repo.write(|tx| -> Result<()> {
                let (pid, _) = tx.q5_process_of_instance(from)?;
                let mut event = SchedulerEvent::instance(EventKind::DeliveryRejected, &pid, piid, from);
                event.mtype = Some(mtype.to_string());
                tx.emit(event)?;
                Ok(())
            })?;
        }
        result
    }

    /// Records that an instance entered an end state and terminates the
    /// process instance if no instantiated subject is still running.
    pub fn end_state_entered(&self, siid: &Siid) -> Result<bool> {
        self.repo.write(|tx| {
            let (pid, piid) = tx.q5_process_of_instance(siid)?;
            self.end_state_entered_in(tx, &InstanceCtx { pid, piid, siid: siid.clone() })
        })
    }

    fn end_state_entered_in(&self, tx: &mut Tx<'_>, ctx: &InstanceCtx) -> Result<bool> {
        tx.set_in_end_state(&ctx.siid)?;
        tx.emit(SchedulerEvent::instance(EventKind::EnteredEndState, &ctx.pid, &ctx.piid, &ctx.siid))?;
        if tx.q9_count_not_ended(&ctx.piid)? != 0 {
            return Ok(false);
        }
        if tx.process_instance(&ctx.piid)?.is_some_and(|p| p.terminated) {
            return Ok(false);
        }
        for inst in tx.q10_instances_of(&ctx.piid)? {
            if let Some(open) = tx.open_task_of(&inst.siid)? {
                tx.mark_task_done(&open.tid)?;
            }
            tx.mark_instance_terminated(&inst.siid)?;
        }
        tx.mark_process_terminated(&ctx.piid)?;
        tx.emit(SchedulerEvent::instance(EventKind::ProcessTerminated, &ctx.pid, &ctx.piid, &ctx.siid))?;
        Ok(true)
    }

    // --- audit ------------------------------------------------------------

    pub fn instance_status(&self, piid: &Piid) -> Result<ProcessInstanceStatus> {
        self.repo.read(|tx| {
            let pi = tx.process_instance(piid)?.ok_or_else(|| SchedulerError::UnknownProcessInstance(piid.clone()))?;
            let process = self.process(tx, &pi.pid)?;
            let events = tx.events_of_process(piid)?;
            let first_seen = |siid: &Siid| events.iter().position(|e| e.siid.as_ref() == Some(siid));
            let mut records = tx.q10_instances_of(piid)?;
            records.sort_by_key(|r| first_seen(&r.siid));
            let instances = records
                .into_iter()
                .map(|record| {
                    Ok(InstanceStatus {
                        subject_name: process.subject_name(&record.sid)?.to_string(),
                        tasks: tx.tasks_of(&record.siid)?,
                        messages: tx.messages_to(&record.siid)?,
                        record,
                    })
                })
                .collect::<Result<_>>()?;
            Ok(ProcessInstanceStatus {
                piid: piid.clone(),
                process_name: process.def.name.clone(),
                pid: pi.pid,
                terminated: pi.terminated,
                instances,
                events,
            })
        })
    }
}
