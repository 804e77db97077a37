//! Agent scripts: a machine agent that works through a fixed list of steps
//! as one user, polling the task list until each step's task appears.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use subjekt_core::scheduler::{TaskAnswer, TaskView};
use subjekt_core::task::{TaskKind, TaskKindTag, TaskParam};
use subjekt_core::{Mid, Piid, Tid};

use crate::client::Client;
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentScript {
    pub username: String,
    pub steps: Vec<Step>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Step {
    Start(StartStep),
    Answer(AnswerStep),
}

/// Starts a process instance through the given startable subject.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartStep {
    pub start: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnswerStep {
    #[serde(rename = "match")]
    pub selector: Selector,
    pub action: TaskAnswer,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected: Option<Expected>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Selector {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
    /// State id or task name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<TaskKindTag>,
}

impl Selector {
    fn matches(&self, t: &TaskView) -> bool {
        self.subject.as_ref().is_none_or(|s| *s == t.subject_name)
            && self.state.as_ref().is_none_or(|s| *s == t.task.state_id || *s == t.task.name)
            && self.kind.is_none_or(|k| k == t.task.kind.tag())
    }
}

impl fmt::Display for Selector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let any = "*".to_string();
        let kind = self.kind.map(|k| k.as_str()).unwrap_or("*");
        write!(f, "{}/{} ({kind})", self.subject.as_ref().unwrap_or(&any), self.state.as_ref().unwrap_or(&any))
    }
}

/// Assertions on what the task shows before it is answered. For receive
/// tasks they select the message to consume.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expected {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mtype: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, String>,
}

fn answer_tag(a: &TaskAnswer) -> TaskKindTag {
    match a {
        TaskAnswer::Function { .. } => TaskKindTag::Function,
        TaskAnswer::Send { .. } => TaskKindTag::Send,
        TaskAnswer::Receive { .. } => TaskKindTag::Receive,
    }
}

impl AgentScript {
    pub fn parse(text: &str) -> Result<Self, String> {
        let script: AgentScript = serde_json::from_str(text).map_err(|e| e.to_string())?;
        script.check()?;
        Ok(script)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    fn check(&self) -> Result<(), String> {
        if self.username.trim().is_empty() {
            return Err("username is empty".into());
        }
        for (i, step) in self.steps.iter().enumerate() {
            let Step::Answer(a) = step else { continue };
            let tag = answer_tag(&a.action);
            if a.selector.kind.is_some_and(|k| k != tag) {
                return Err(format!("step {i}: selector kind disagrees with {tag} action"));
            }
            if a.expected.as_ref().is_some_and(|e| e.mtype.is_some()) && tag != TaskKindTag::Receive {
                return Err(format!("step {i}: expected mtype on a {tag} step"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    pub poll: Duration,
    pub timeout: Duration,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { poll: Duration::from_millis(200), timeout: Duration::from_secs(30) }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepReport {
    pub index: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub started: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub state_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tid: Option<Tid>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub received: Option<Mid>,
    pub piid: Piid,
    pub process_terminated: bool,
}

fn visible(params: &[TaskParam]) -> BTreeMap<&str, &str> {
    params.iter().map(|p| (p.name.as_str(), p.value.as_str())).collect()
}

fn params_match(expected: &BTreeMap<String, String>, got: &BTreeMap<&str, &str>) -> bool {
    expected.iter().all(|(k, v)| got.get(k.as_str()) == Some(&v.as_str()))
}

/// Turns the step's action into the answer for `task`, or `None` if the
/// task cannot be answered yet because its pool is empty.
fn prepare(index: usize, step: &AnswerStep, task: &TaskView) -> Result<Option<TaskAnswer>, CliError> {
    let fail = |m: String| Err(CliError::Script(format!("step {index} ({}): {m}", task.task.state_id)));
    let tag = task.task.kind.tag();
    if tag != answer_tag(&step.action) {
        return fail(format!("task is a {tag} task"));
    }
    let expected = step.expected.clone().unwrap_or_default();
    match (&task.task.kind, &step.action) {
        (TaskKind::Function { params, .. } | TaskKind::Send { params, .. }, _) => {
            let got = visible(params);
            if !params_match(&expected.params, &got) {
                return fail(format!("expected {:?}, task shows {got:?}", expected.params));
            }
            Ok(Some(step.action.clone()))
        }
        (TaskKind::Receive { mtypes }, TaskAnswer::Receive { mid }) => {
            let pool: Vec<_> = task.messages.iter().filter(|m| !m.received && mtypes.contains(&m.mtype)).collect();
            if pool.is_empty() {
                return Ok(None);
            }
            let hits: Vec<_> = pool
                .iter()
                .filter(|m| mid.as_ref().is_none_or(|want| *want == m.mid))
                .filter(|m| expected.mtype.as_ref().is_none_or(|t| *t == m.mtype))
                .filter(|m| params_match(&expected.params, &m.params.iter().collect()))
                .collect();
            match hits.as_slice() {
                [one] => Ok(Some(TaskAnswer::Receive { mid: Some(one.mid.clone()) })),
                [] => {
                    let shown: Vec<String> = pool.iter().map(|m| format!("{} {:?}", m.mtype, m.params)).collect();
                    fail(format!("no message matches {expected:?}; pool has {}", shown.join(", ")))
                }
                many => fail(format!("{} messages match; add expectations to choose one", many.len())),
            }
        }
        _ => unreachable!("kinds agree"),
    }
}

/// Executes `script` step by step. `log` receives one line per step.
pub fn run(
    client: &Client,
    script: &AgentScript,
    opts: RunOptions,
    mut log: impl FnMut(String),
) -> Result<Vec<StepReport>, CliError> {
    let user = script.username.as_str();
    let mut piid: Option<Piid> = None;
    let mut reports = Vec::new();
    for (index, step) in script.steps.iter().enumerate() {
        let report = match step {
            Step::Start(s) => {
                let started = client.start(&s.start, user)?.value;
                log(format!("{user}: step {index} started {} as {}", started.pid, s.start));
                piid = Some(started.piid.clone());
                StepReport {
                    index,
                    started: Some(s.start.clone()),
                    state_id: None,
                    tid: None,
                    received: None,
                    piid: started.piid,
                    process_terminated: false,
                }
            }
            Step::Answer(a) => {
                let (task, answer) = await_task(client, user, index, a, piid.as_ref(), opts)?;
                let body = serde_json::to_string(&answer).expect("answers serialize");
                let outcome = client.answer(task.task.tid.as_str(), user, &body)?.value;
                log(format!(
                    "{user}: step {index} answered {} ({}){}",
                    task.task.state_id,
                    task.task.kind.tag(),
                    if outcome.process_terminated { ", process terminated" } else { "" }
                ));
                piid = Some(outcome.piid.clone());
                StepReport {
                    index,
                    started: None,
                    state_id: Some(task.task.state_id),
                    tid: Some(outcome.tid),
                    received: outcome.received,
                    piid: outcome.piid,
                    process_terminated: outcome.process_terminated,
                }
            }
        };
        reports.push(report);
    }
    Ok(reports)
}

/// Polls until exactly one task matches, backing off from 25 ms up to the
/// poll interval. Once the script has touched a process instance, only
/// tasks of that instance are considered.
fn await_task(
    client: &Client,
    user: &str,
    index: usize,
    step: &AnswerStep,
    piid: Option<&Piid>,
    opts: RunOptions,
) -> Result<(TaskView, TaskAnswer), CliError> {
    let deadline = Instant::now() + opts.timeout;
    let mut delay = opts.poll.min(Duration::from_millis(25));
    loop {
        let tasks = client.tasks(user)?.value;
        let mut hits: Vec<TaskView> =
            tasks.into_iter().filter(|t| step.selector.matches(t) && piid.is_none_or(|p| *p == t.piid)).collect();
        match hits.len() {
            0 => {}
            1 => {
                let task = hits.pop().expect("one hit");
                if let Some(answer) = prepare(index, step, &task)? {
                    return Ok((task, answer));
                }
            }
            n => return Err(CliError::Script(format!("step {index}: {} matches {n} tasks", step.selector))),
        }
        let now = Instant::now();
        if now >= deadline {
            return Err(CliError::Script(format!(
                "step {index}: no answerable task for {} after {:?}",
                step.selector, opts.timeout
            )));
        }
        std::thread::sleep(delay.min(deadline - now));
        delay = (delay * 2).min(opts.poll);
    }
}
