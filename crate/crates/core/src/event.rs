//! Scheduler notifications. Events are persisted with the transaction that
//! caused them and carry a global, strictly increasing sequence number.

use std::fmt;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::task::{Mid, Piid, Siid, Tid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    ProcessStarted,
    TaskCreated,
    MessageDelivered,
    InstanceClaimed,
    EnteredEndState,
    ProcessTerminated,
    /// A message addressed to an already terminated process instance.
    DeliveryRejected,
    DefinitionUploaded,
    UserUpdated,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::ProcessStarted => "ProcessStarted",
            EventKind::TaskCreated => "TaskCreated",
            EventKind::MessageDelivered => "MessageDelivered",
            EventKind::InstanceClaimed => "InstanceClaimed",
            EventKind::EnteredEndState => "EnteredEndState",
            EventKind::ProcessTerminated => "ProcessTerminated",
            EventKind::DeliveryRejected => "DeliveryRejected",
            EventKind::DefinitionUploaded => "DefinitionUploaded",
            EventKind::UserUpdated => "UserUpdated",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            EventKind::ProcessStarted,
            EventKind::TaskCreated,
            EventKind::MessageDelivered,
            EventKind::InstanceClaimed,
            EventKind::EnteredEndState,
            EventKind::ProcessTerminated,
            EventKind::DeliveryRejected,
            EventKind::DefinitionUploaded,
            EventKind::UserUpdated,
        ]
        .into_iter()
        .find(|k| k.as_str() == s)
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchedulerEvent {
    /// Assigned on persist; zero until then.
    pub seq: u64,
    pub kind: EventKind,
    pub pid: Option<String>,
    pub piid: Option<Piid>,
    pub siid: Option<Siid>,
    pub tid: Option<Tid>,
    pub mid: Option<Mid>,
    pub mtype: Option<String>,
    pub username: Option<String>,
    pub timestamp_ms: u64,
}

impl SchedulerEvent {
    pub fn new(kind: EventKind) -> Self {
        let timestamp_ms = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0);
        SchedulerEvent {
            seq: 0,
            kind,
            pid: None,
            piid: None,
            siid: None,
            tid: None,
            mid: None,
            mtype: None,
            username: None,
            timestamp_ms,
        }
    }

    pub fn instance(kind: EventKind, pid: &str, piid: &Piid, siid: &Siid) -> Self {
        let mut e = Self::new(kind);
        e.pid = Some(pid.to_string());
        e.piid = Some(piid.clone());
        e.siid = Some(siid.clone());
        e
    }

    pub fn with_tid(mut self, tid: &Tid) -> Self {
        self.tid = Some(tid.clone());
        self
    }

    pub fn with_message(mut self, mid: &Mid, mtype: &str) -> Self {
        self.mid = Some(mid.clone());
        self.mtype = Some(mtype.to_string());
        self
    }

    pub fn with_user(mut self, username: &str) -> Self {
        self.username = Some(username.to_string());
        self
    }
}
