//! The ten repository queries the scheduler and task service are built on.
//!
//! Role assignments are scoped per process: a user holding the role
//! "Supervisor" in one process gains nothing in another process that happens
//! to use the same subject name. Results are ordered by id.

use rusqlite::{params, params_from_iter, OptionalExtension};
use serde::{Deserialize, Serialize};

use super::{MessageRecord, RepoError, Result, SubjectInstanceRecord, TaskRecord, Tx};
use crate::task::{Piid, Siid};

/// Row of query 1: a subject the user may start, and its process name.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StartableProcess {
    pub sid: String,
    pub pid: String,
    pub process_name: String,
}

// Instance `i` of subject `s` is visible to ?1 if owned by ?1, or unowned and
// ?1 holds the subject's role.
const VISIBLE: &str = "(i.owner = ?1 OR (i.owner IS NULL AND EXISTS (
        SELECT 1 FROM user_roles u
        WHERE u.username = ?1 AND u.pid = s.pid AND u.subject_name = s.name)))";

impl Tx<'_> {
    /// Query 1: subjects the user may start a process with.
    pub fn q1_startable_processes(&self, username: &str) -> Result<Vec<StartableProcess>> {
        self.require_user(username)?;
        let mut stmt = self.conn().prepare(
            "SELECT s.sid, p.pid, p.name
             FROM subjects s
             JOIN user_roles u ON u.subject_name = s.name AND u.pid = s.pid
             JOIN processes p ON p.pid = s.pid
             WHERE s.can_be_started = 1 AND u.username = ?1
             ORDER BY s.sid",
        )?;
        let rows = stmt.query_map([username], |r| {
            Ok(StartableProcess { sid: r.get(0)?, pid: r.get(1)?, process_name: r.get(2)? })
        })?;
        Ok(rows.collect::<rusqlite::Result<_>>()?)
    }

    fn open_tasks_of_kind(&self, username: &str, kind: &str) -> Result<Vec<TaskRecord>> {
        self.require_user(username)?;
        let sql = format!(
            "SELECT t.tid
             FROM tasks t
             JOIN subject_instances i ON t.siid = i.siid
             JOIN subjects s ON i.sid = s.sid
             WHERE t.kind = ?2 AND t.done = 0 AND {VISIBLE}
             ORDER BY t.tid"
        );
        let mut stmt = self.conn().prepare(&sql)?;
        let tids = stmt.query_map(params![username, kind], |r| r.get(0))?.collect::<rusqlite::Result<_>>()?;
        self.tasks_by_id(tids)
    }

    /// Query 2: open function tasks the user may act on.
    pub fn q2_open_function_tasks(&self, username: &str) -> Result<Vec<TaskRecord>> {
        self.open_tasks_of_kind(username, "function")
    }

    /// Query 3: open send tasks the user may act on.
    pub fn q3_open_send_tasks(&self, username: &str) -> Result<Vec<TaskRecord>> {
        self.open_tasks_of_kind(username, "send")
    }

    /// Query 4: open receive tasks with at least one matching pooled message,
    /// each paired with all of its matching messages.
    pub fn q4_open_receive_tasks(&self, username: &str) -> Result<Vec<(TaskRecord, Vec<MessageRecord>)>> {
        self.require_user(username)?;
        let sql = format!(
            "SELECT t.tid, m.mid
             FROM tasks t
             JOIN subject_instances i ON t.siid = i.siid
             JOIN messages m ON t.siid = m.to_siid
             JOIN subjects s ON i.sid = s.sid
             WHERE t.kind = 'receive' AND t.done = 0 AND m.received = 0
               AND {VISIBLE}
               AND m.mtype IN (SELECT tm.mtype FROM task_mtypes tm WHERE tm.tid = t.tid)
             ORDER BY t.tid, m.mid"
        );
        let mut stmt = self.conn().prepare(&sql)?;
        let pairs: Vec<(String, String)> =
            stmt.query_map([username], |r| Ok((r.get(0)?, r.get(1)?)))?.collect::<rusqlite::Result<_>>()?;

        let mut grouped: Vec<(String, Vec<String>)> = Vec::new();
        for (tid, mid) in pairs {
            match grouped.last_mut() {
                Some((last, mids)) if *last == tid => mids.push(mid),
                _ => grouped.push((tid, vec![mid])),
            }
        }
        grouped
            .into_iter()
            .map(|(tid, mids)| {
                let task = self.tasks_by_id(vec![tid])?.remove(0);
                Ok((task, self.messages_by_id(mids)?))
            })
            .collect()
    }

    /// Query 5: process id and process instance id of a subject instance.
    pub fn q5_process_of_instance(&self, siid: &Siid) -> Result<(String, Piid)> {
        self.conn()
            .query_row(
                "SELECT s.pid, i.piid FROM subjects s JOIN subject_instances i ON i.sid = s.sid WHERE i.siid = ?1",
                [siid.as_str()],
                |r| Ok((r.get(0)?, Piid::new(r.get::<_, String>(1)?))),
            )
            .optional()?
            .ok_or_else(|| RepoError::UnknownInstance(siid.clone()))
    }

    /// Query 6: subject id by name within a process.
    pub fn q6_subject_by_name(&self, pid: &str, name: &str) -> Result<String> {
        self.conn()
            .query_row("SELECT sid FROM subjects s WHERE s.pid = ?1 AND s.name = ?2", params![pid, name], |r| r.get(0))
            .optional()?
            .ok_or_else(|| RepoError::UnknownSubjectName { pid: pid.to_string(), name: name.to_string() })
    }

    /// Query 7: the instance of subject `sid` inside process instance `piid`, if any.
    pub fn q7_instance_of(&self, sid: &str, piid: &Piid) -> Result<Option<Siid>> {
        Ok(self
            .conn()
            .query_row(
                "SELECT siid FROM subject_instances i WHERE i.sid = ?1 AND i.piid = ?2",
                params![sid, piid.as_str()],
                |r| r.get::<_, String>(0),
            )
            .optional()?
            .map(Siid::new))
    }

    /// Query 8: unreceived messages for `siid` whose type is one of `mtypes`.
    pub fn q8_receivable_messages(&self, siid: &Siid, mtypes: &[String]) -> Result<Vec<crate::task::Mid>> {
        self.require_instance(siid)?;
        if mtypes.is_empty() {
            return Ok(Vec::new());
        }
        let placeholders = (0..mtypes.len()).map(|i| format!("?{}", i + 2)).collect::<Vec<_>>().join(", ");
        let sql = format!(
            "SELECT mid FROM messages m
             WHERE m.received = 0 AND m.to_siid = ?1 AND m.mtype IN ({placeholders})
             ORDER BY mid"
        );
        let mut stmt = self.conn().prepare(&sql)?;
        let args = std::iter::once(siid.as_str()).chain(mtypes.iter().map(String::as_str));
        let rows = stmt.query_map(params_from_iter(args), |r| r.get::<_, String>(0))?;
        Ok(rows.map(|r| r.map(crate::task::Mid::new)).collect::<rusqlite::Result<_>>()?)
    }

    /// Query 9: number of instantiated subjects of `piid` not in an end state.
    pub fn q9_count_not_ended(&self, piid: &Piid) -> Result<u64> {
        let n: i64 = self.conn().query_row(
            "SELECT count(*) FROM subject_instances i WHERE i.is_in_end_state = 0 AND i.piid = ?1",
            [piid.as_str()],
            |r| r.get(0),
        )?;
        Ok(n as u64)
    }

    /// Query 10: all subject instances of `piid`.
    pub fn q10_instances_of(&self, piid: &Piid) -> Result<Vec<SubjectInstanceRecord>> {
        let mut stmt = self.conn().prepare(
            "SELECT siid, sid, piid, owner, is_in_end_state, terminated, snapshot
             FROM subject_instances i WHERE i.piid = ?1 ORDER BY siid",
        )?;
        let rows = stmt.query_map([piid.as_str()], super::instance_from_row)?;
        rows.map(|r| r.map_err(RepoError::from).and_then(|rec| rec)).collect()
    }
}
