//! Blocking HTTP client for the task service.

use std::io::{BufRead, BufReader};

use serde::de::DeserializeOwned;
use serde_json::Value;

use subjekt_api::{ErrorBody, ProcessList, TaskList, UserRoles};
use subjekt_core::repository::StartableProcess;
use subjekt_core::scheduler::{AnswerOutcome, StartedProcess, TaskView, UploadOutcome};
use subjekt_core::{RoleAssignment, SchedulerEvent, UserRecord};

use crate::CliError;

pub struct Client {
    base: String,
    agent: ureq::Agent,
}

/// A successful response: the raw body for `--json` output and its typed form.
pub struct Reply<T> {
    pub raw: Value,
    pub value: T,
}

impl Client {
    pub fn new(base: &str) -> Self {
        let agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
        Client { base: base.trim_end_matches('/').to_string(), agent }
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    fn unreachable(&self, e: impl std::fmt::Display) -> CliError {
        CliError::Unreachable { url: self.base.clone(), reason: e.to_string() }
    }

    fn call<T: DeserializeOwned>(
        &self,
        method: &str,
        path: &str,
        user: &str,
        body: Option<&str>,
    ) -> Result<Reply<T>, CliError> {
        let url = self.url(path);
        let sent = match (method, body) {
            ("GET", _) => self.agent.get(&url).header("X-User", user).call(),
            ("PUT", b) => {
                self.agent.put(&url).header("X-User", user).content_type("application/json").send(b.unwrap_or(""))
            }
            (_, b) => {
                self.agent.post(&url).header("X-User", user).content_type("application/json").send(b.unwrap_or("{}"))
            }
        };
        let mut resp = sent.map_err(|e| self.unreachable(e))?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| self.unreachable(e))?;
        let raw: Value = serde_json::from_str(&text).unwrap_or(Value::String(text));
        if !(200..300).contains(&status) {
            let body = serde_json::from_value::<ErrorBody>(raw.clone()).unwrap_or_else(|_| ErrorBody {
                error: "unexpected_response".into(),
                message: raw.to_string(),
                path: None,
                violations: Vec::new(),
            });
            return Err(CliError::Server { status, body });
        }
        let value = serde_json::from_value(raw.clone())
            .map_err(|e| self.unreachable(format!("unexpected response to {method} {path}: {e}")))?;
        Ok(Reply { raw, value })
    }

    pub fn processes(&self, user: &str) -> Result<Reply<Vec<StartableProcess>>, CliError> {
        let r: Reply<ProcessList> = self.call("GET", "/api/processes", user, None)?;
        Ok(Reply { raw: r.raw, value: r.value.processes })
    }

    pub fn start(&self, sid: &str, user: &str) -> Result<Reply<StartedProcess>, CliError> {
        self.call("POST", &format!("/api/processes/{sid}/start"), user, None)
    }

    pub fn tasks(&self, user: &str) -> Result<Reply<Vec<TaskView>>, CliError> {
        let r: Reply<TaskList> = self.call("GET", "/api/tasks", user, None)?;
        Ok(Reply { raw: r.raw, value: r.value.tasks })
    }

    pub fn task(&self, tid: &str, user: &str) -> Result<Reply<TaskView>, CliError> {
        self.call("GET", &format!("/api/tasks/{tid}"), user, None)
    }

    /// `body` is sent verbatim so that the server judges it.
    pub fn answer(&self, tid: &str, user: &str, body: &str) -> Result<Reply<AnswerOutcome>, CliError> {
        self.call("POST", &format!("/api/tasks/{tid}/answer"), user, Some(body))
    }

    pub fn upload(&self, document: &str, user: &str) -> Result<Reply<UploadOutcome>, CliError> {
        self.call("POST", "/api/admin/definitions", user, Some(document))
    }

    pub fn put_user(
        &self,
        username: &str,
        roles: Vec<RoleAssignment>,
        user: &str,
    ) -> Result<Reply<UserRecord>, CliError> {
        let body = serde_json::to_string(&UserRoles { roles }).expect("roles serialize");
        self.call("PUT", &format!("/api/admin/users/{username}"), user, Some(&body))
    }

    pub fn instance(&self, piid: &str, user: &str) -> Result<Reply<Value>, CliError> {
        self.call("GET", &format!("/api/admin/instances/{piid}"), user, None)
    }

    /// Follows the event stream, calling `each` with every raw line and its
    /// parsed event until it returns false or the server closes the stream.
    pub fn watch(
        &self,
        after: Option<u64>,
        user: &str,
        mut each: impl FnMut(&str, SchedulerEvent) -> bool,
    ) -> Result<(), CliError> {
        let path = match after {
            Some(a) => format!("/api/events?after={a}"),
            None => "/api/events".to_string(),
        };
        let agent: ureq::Agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
        let resp = agent.get(&self.url(&path)).header("X-User", user).call().map_err(|e| self.unreachable(e))?;
        let status = resp.status().as_u16();
        if status != 200 {
            let text = resp.into_body().read_to_string().unwrap_or_default();
            let body = serde_json::from_str(&text).unwrap_or_else(|_| ErrorBody {
                error: "unexpected_response".into(),
                message: text,
                path: None,
                violations: Vec::new(),
            });
            return Err(CliError::Server { status, body });
        }
        for line in BufReader::new(resp.into_body().into_reader()).lines() {
            let line = line.map_err(|e| self.unreachable(e))?;
            if line.trim().is_empty() {
                continue;
            }
            let event = serde_json::from_str(&line).map_err(|e| self.unreachable(format!("bad event line: {e}")))?;
            if !each(&line, event) {
                break;
            }
        }
        Ok(())
    }
}
