//! Process definitions: subjects, their behavior graphs and structural validation.
//!
//! A [`ProcessDefinition`] is the interaction view of a process (which subjects
//! exist and what they may send to each other); each [`SubjectDefinition`]
//! carries the behavior graph that an engine instance interprets at runtime.
//! All types here are immutable once built and can be shared freely.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProcessDefinition {
    pub pid: String,
    pub name: String,
    pub subjects: Vec<SubjectDefinition>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubjectDefinition {
    pub sid: String,
    pub name: String,
    pub can_be_started: bool,
    pub behavior: BehaviorGraph,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BehaviorGraph {
    pub start_state: String,
    pub states: Vec<State>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct State {
    pub id: String,
    pub name: String,
    pub is_end: bool,
    pub kind: StateKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StateKind {
    Function(FunctionState),
    Send(SendState),
    Receive(ReceiveState),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunctionState {
    pub read_params: Vec<String>,
    pub write_params: Vec<String>,
    pub transitions: Vec<Transition>,
    pub refinement: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transition {
    pub label: String,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SendState {
    pub read_params: Vec<String>,
    pub write_params: Vec<String>,
    pub to_subject: String,
    pub message_type: String,
    pub sent_params: Vec<String>,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReceiveState {
    pub message_types: Vec<String>,
    pub target: String,
}

impl ProcessDefinition {
    pub fn subject(&self, sid: &str) -> Option<&SubjectDefinition> {
        self.subjects.iter().find(|s| s.sid == sid)
    }

    pub fn subject_by_name(&self, name: &str) -> Option<&SubjectDefinition> {
        self.subjects.iter().find(|s| s.name == name)
    }
}

impl BehaviorGraph {
    pub fn state(&self, id: &str) -> Option<&State> {
        self.states.iter().find(|s| s.id == id)
    }
}

impl State {
    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            StateKind::Function(_) => "function",
            StateKind::Send(_) => "send",
            StateKind::Receive(_) => "receive",
        }
    }

    /// Outgoing edges in declaration order.
    pub fn targets(&self) -> Vec<&str> {
        match &self.kind {
            StateKind::Function(f) => f.transitions.iter().map(|t| t.target.as_str()).collect(),
            StateKind::Send(s) => vec![s.target.as_str()],
            StateKind::Receive(r) => vec![r.target.as_str()],
        }
    }

    fn params(&self) -> (&[String], &[String]) {
        match &self.kind {
            StateKind::Function(f) => (&f.read_params, &f.write_params),
            StateKind::Send(s) => (&s.read_params, &s.write_params),
            StateKind::Receive(_) => (&[], &[]),
        }
    }
}

/// A single `name = value` pair carried by tasks and messages.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParameterBinding {
    pub name: String,
    pub value: String,
}

/// A set of parameter bindings with unique names. Values are opaque UTF-8.
///
/// Serialized as a JSON object `{ "name": "value", ... }`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Bindings(BTreeMap<String, String>);

impl Bindings {
    pub fn new() -> Self {
        Self::default()
    }

    /// Unwritten names read as the empty string.
    pub fn get(&self, name: &str) -> &str {
        self.0.get(name).map(String::as_str).unwrap_or("")
    }

    pub fn contains(&self, name: &str) -> bool {
        self.0.contains_key(name)
    }

    pub fn set(&mut self, name: impl Into<String>, value: impl Into<String>) {
        self.0.insert(name.into(), value.into());
    }

    /// Overwrites same-named entries with the values from `other`.
    pub fn merge(&mut self, other: &Bindings) {
        for (k, v) in &other.0 {
            self.0.insert(k.clone(), v.clone());
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn to_list(&self) -> Vec<ParameterBinding> {
        self.iter().map(|(name, value)| ParameterBinding { name: name.into(), value: value.into() }).collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl<K: Into<String>, V: Into<String>> FromIterator<(K, V)> for Bindings {
    fn from_iter<I: IntoIterator<Item = (K, V)>>(iter: I) -> Self {
        Bindings(iter.into_iter().map(|(k, v)| (k.into(), v.into())).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationCode {
    EmptyPid,
    EmptyProcessName,
    NoSubjects,
    NoStartableSubject,
    DuplicateSubjectId,
    DuplicateSubjectName,
    DuplicateStateId,
    UnknownStartState,
    DanglingTransition,
    NoEndState,
    UnreachableEnd,
    FunctionWithoutTransitions,
    EndStateWithTransitions,
    DuplicateTransitionLabel,
    ReceiveWithoutMessageTypes,
    ReadWriteOverlap,
    UnknownToSubject,
    UnacceptedMessageType,
    /// Warning only: a receivable message type that no other subject sends.
    OrphanReceive,
}

impl ViolationCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ViolationCode::EmptyPid => "empty_pid",
            ViolationCode::EmptyProcessName => "empty_process_name",
            ViolationCode::NoSubjects => "no_subjects",
            ViolationCode::NoStartableSubject => "no_startable_subject",
            ViolationCode::DuplicateSubjectId => "duplicate_subject_id",
            ViolationCode::DuplicateSubjectName => "duplicate_subject_name",
            ViolationCode::DuplicateStateId => "duplicate_state_id",
            ViolationCode::UnknownStartState => "unknown_start_state",
            ViolationCode::DanglingTransition => "dangling_transition",
            ViolationCode::NoEndState => "no_end_state",
            ViolationCode::UnreachableEnd => "unreachable_end",
            ViolationCode::FunctionWithoutTransitions => "function_without_transitions",
            ViolationCode::EndStateWithTransitions => "end_state_with_transitions",
            ViolationCode::DuplicateTransitionLabel => "duplicate_transition_label",
            ViolationCode::ReceiveWithoutMessageTypes => "receive_without_message_types",
            ViolationCode::ReadWriteOverlap => "read_write_overlap",
            ViolationCode::UnknownToSubject => "unknown_to_subject",
            ViolationCode::UnacceptedMessageType => "unaccepted_message_type",
            ViolationCode::OrphanReceive => "orphan_receive",
        }
    }
}

impl fmt::Display for ViolationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One structural problem. `path` is a JSON pointer into the canonical document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    pub path: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub warnings: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, code: ViolationCode) -> bool {
        self.violations.iter().any(|v| v.code == code)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "error[{}] {}: {}", v.code, v.path, v.message)?;
        }
        for v in &self.warnings {
            writeln!(f, "warning[{}] {}: {}", v.code, v.path, v.message)?;
        }
        Ok(())
    }
}

// Sort key: process-level findings first, then by subject position, then state id.
type FindingKey = (Option<usize>, Option<String>);

struct Collector {
    violations: Vec<(FindingKey, Violation)>,
    warnings: Vec<(FindingKey, Violation)>,
}

impl Collector {
    fn push(&mut self, key: FindingKey, code: ViolationCode, path: String, message: String) {
        let v = Violation { code, path, message };
        if code == ViolationCode::OrphanReceive {
            self.warnings.push((key, v));
        } else {
            self.violations.push((key, v));
        }
    }

    fn finish(mut self) -> ValidationReport {
        self.violations.sort_by(|a, b| a.0.cmp(&b.0));
        self.warnings.sort_by(|a, b| a.0.cmp(&b.0));
        ValidationReport {
            violations: self.violations.into_iter().map(|(_, v)| v).collect(),
            warnings: self.warnings.into_iter().map(|(_, v)| v).collect(),
        }
    }
}

/// Checks every structural invariant of a process definition.
///
/// Violations are data: an empty `violations` list means the model is
/// executable. The result is deterministic and ordered by subject position,
/// then state id.
pub fn validate(def: &ProcessDefinition) -> ValidationReport {
    let mut out = Collector { violations: Vec::new(), warnings: Vec::new() };
    let root: FindingKey = (None, None);

    if def.pid.is_empty() {
        out.push(root.clone(), ViolationCode::EmptyPid, "/process/pid".into(), "process id is empty".into());
    }
    if def.name.is_empty() {
        out.push(root.clone(), ViolationCode::EmptyProcessName, "/process/name".into(), "process name is empty".into());
    }
    if def.subjects.is_empty() {
        out.push(root.clone(), ViolationCode::NoSubjects, "/process/subjects".into(), "no subjects".into());
    } else if !def.subjects.iter().any(|s| s.can_be_started) {
        out.push(
            root.clone(),
            ViolationCode::NoStartableSubject,
            "/process/subjects".into(),
            "no subject can be started".into(),
        );
    }

    let mut seen_sids = HashSet::new();
    let mut seen_names = HashSet::new();
    for (i, subject) in def.subjects.iter().enumerate() {
        let path = format!("/process/subjects/{i}");
        if !seen_sids.insert(subject.sid.as_str()) {
            out.push(
                (Some(i), None),
                ViolationCode::DuplicateSubjectId,
                format!("{path}/sid"),
                format!("subject id {:?} is used more than once", subject.sid),
            );
        }
        if !seen_names.insert(subject.name.as_str()) {
            out.push(
                (Some(i), None),
                ViolationCode::DuplicateSubjectName,
                format!("{path}/name"),
                format!("subject name {:?} is used more than once", subject.name),
            );
        }
        validate_behavior(i, &subject.behavior, &mut out);
    }

    validate_message_closure(def, &mut out);
    out.finish()
}

fn validate_behavior(subject_idx: usize, graph: &BehaviorGraph, out: &mut Collector) {
    let base = format!("/process/subjects/{subject_idx}/behavior");
    let key = |state: &str| (Some(subject_idx), Some(state.to_string()));

    let mut index: HashMap<&str, usize> = HashMap::new();
    for (j, state) in graph.states.iter().enumerate() {
        if index.insert(state.id.as_str(), j).is_some() {
            out.push(
                key(&state.id),
                ViolationCode::DuplicateStateId,
                format!("{base}/states/{j}/id"),
                format!("state id {:?} is used more than once", state.id),
            );
        }
    }

    if !index.contains_key(graph.start_state.as_str()) {
        out.push(
            (Some(subject_idx), None),
            ViolationCode::UnknownStartState,
            format!("{base}/start_state"),
            format!("start state {:?} does not exist", graph.start_state),
        );
    }

    for (j, state) in graph.states.iter().enumerate() {
        let path = format!("{base}/states/{j}");
        match &state.kind {
            StateKind::Function(f) => {
                if state.is_end && !f.transitions.is_empty() {
                    out.push(
                        key(&state.id),
                        ViolationCode::EndStateWithTransitions,
                        format!("{path}/transitions"),
                        "end state has outgoing transitions".into(),
                    );
                }
                if !state.is_end && f.transitions.is_empty() {
                    out.push(
                        key(&state.id),
                        ViolationCode::FunctionWithoutTransitions,
                        format!("{path}/transitions"),
                        "function state has no transitions and is not an end state".into(),
                    );
                }
                let mut labels = HashSet::new();
                for (k, t) in f.transitions.iter().enumerate() {
                    if !labels.insert(t.label.as_str()) {
                        out.push(
                            key(&state.id),
                            ViolationCode::DuplicateTransitionLabel,
                            format!("{path}/transitions/{k}/label"),
                            format!("transition label {:?} is used more than once", t.label),
                        );
                    }
                    if !index.contains_key(t.target.as_str()) {
                        out.push(
                            key(&state.id),
                            ViolationCode::DanglingTransition,
                            format!("{path}/transitions/{k}/target"),
                            format!("transition target {:?} does not exist", t.target),
                        );
                    }
                }
            }
            StateKind::Send(s) => {
                if state.is_end {
                    out.push(
                        key(&state.id),
                        ViolationCode::EndStateWithTransitions,
                        format!("{path}/target"),
                        "send state cannot be an end state".into(),
                    );
                }
                if !index.contains_key(s.target.as_str()) {
                    out.push(
                        key(&state.id),
                        ViolationCode::DanglingTransition,
                        format!("{path}/target"),
                        format!("target {:?} does not exist", s.target),
                    );
                }
            }
            StateKind::Receive(r) => {
                if state.is_end {
                    out.push(
                        key(&state.id),
                        ViolationCode::EndStateWithTransitions,
                        format!("{path}/target"),
                        "receive state cannot be an end state".into(),
                    );
                }
                if r.message_types.is_empty() {
                    out.push(
                        key(&state.id),
                        ViolationCode::ReceiveWithoutMessageTypes,
                        format!("{path}/message_types"),
                        "receive state accepts no message types".into(),
                    );
                }
                if !index.contains_key(r.target.as_str()) {
                    out.push(
                        key(&state.id),
                        ViolationCode::DanglingTransition,
                        format!("{path}/target"),
                        format!("target {:?} does not exist", r.target),
                    );
                }
            }
        }

        let (read, write) = state.params();
        let read: HashSet<&str> = read.iter().map(String::as_str).collect();
        if let Some(both) = write.iter().find(|w| read.contains(w.as_str())) {
            out.push(
                key(&state.id),
                ViolationCode::ReadWriteOverlap,
                format!("{path}/write_params"),
                format!("parameter {both:?} is both read-only and writable"),
            );
        }
    }

    if !graph.states.iter().any(|s| s.is_end) {
        out.push(
            (Some(subject_idx), None),
            ViolationCode::NoEndState,
            format!("{base}/states"),
            "behavior has no end state".into(),
        );
        return;
    }

    // Reverse search from the end states over known edges.
    let mut incoming: HashMap<&str, Vec<&str>> = HashMap::new();
    for state in &graph.states {
        for target in state.targets() {
            if index.contains_key(target) {
                incoming.entry(target).or_default().push(state.id.as_str());
            }
        }
    }
    let mut reaches_end: HashSet<&str> = HashSet::new();
    let mut queue: VecDeque<&str> = graph.states.iter().filter(|s| s.is_end).map(|s| s.id.as_str()).collect();
    while let Some(id) = queue.pop_front() {
        if !reaches_end.insert(id) {
            continue;
        }
        for &pred in incoming.get(id).map(Vec::as_slice).unwrap_or_default() {
            if !reaches_end.contains(pred) {
                queue.push_back(pred);
            }
        }
    }
    for (j, state) in graph.states.iter().enumerate() {
        if !reaches_end.contains(state.id.as_str()) {
            out.push(
                key(&state.id),
                ViolationCode::UnreachableEnd,
                format!("{base}/states/{j}"),
                format!("no end state is reachable from {:?}", state.id),
            );
        }
    }
}

fn validate_message_closure(def: &ProcessDefinition, out: &mut Collector) {
    for (i, subject) in def.subjects.iter().enumerate() {
        for (j, state) in subject.behavior.states.iter().enumerate() {
            let StateKind::Send(send) = &state.kind else { continue };
            let path = format!("/process/subjects/{i}/behavior/states/{j}");
            let key = (Some(i), Some(state.id.clone()));
            match def.subject_by_name(&send.to_subject) {
                None => out.push(
                    key,
                    ViolationCode::UnknownToSubject,
                    format!("{path}/to_subject"),
                    format!("unknown to_subject {:?}", send.to_subject),
                ),
                Some(recipient) => {
                    let accepted = recipient.behavior.states.iter().any(|s| match &s.kind {
                        StateKind::Receive(r) => r.message_types.contains(&send.message_type),
                        _ => false,
                    });
                    if !accepted {
                        out.push(
                            key,
                            ViolationCode::UnacceptedMessageType,
                            format!("{path}/message_type"),
                            format!("subject {:?} never receives message type {:?}", recipient.name, send.message_type),
                        );
                    }
                }
            }
        }
    }

    for (i, subject) in def.subjects.iter().enumerate() {
        for (j, state) in subject.behavior.states.iter().enumerate() {
            let StateKind::Receive(recv) = &state.kind else { continue };
            for (k, mtype) in recv.message_types.iter().enumerate() {
                let sent = def.subjects.iter().filter(|other| other.sid != subject.sid).any(|other| {
                    other.behavior.states.iter().any(|s| match &s.kind {
                        StateKind::Send(send) => send.to_subject == subject.name && &send.message_type == mtype,
                        _ => false,
                    })
                });
                if !sent {
                    out.push(
                        (Some(i), Some(state.id.clone())),
                        ViolationCode::OrphanReceive,
                        format!("/process/subjects/{i}/behavior/states/{j}/message_types/{k}"),
                        format!("no other subject sends {mtype:?} to {:?}", subject.name),
                    );
                }
            }
        }
    }
}

/// Subjects a user may start a process with, in model order.
pub fn startable_subjects(def: &ProcessDefinition) -> Vec<&SubjectDefinition> {
    def.subjects.iter().filter(|s| s.can_be_started).collect()
}
