//! Interpreter for one subject's behavior graph.
//!
//! An [`EngineInstance`] sits in exactly one state and advances by exactly
//! one transition per stimulus (a function answer, a send confirmation or a
//! received message). Each step returns the [`Effect`]s the host must carry
//! out. Between stimuli the whole execution state is the current state id plus
//! the variable bindings, which is what [`EngineInstance::snapshot`] captures.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{BehaviorGraph, Bindings, State, StateKind};
use crate::repository::Snapshot;
use crate::task::{Siid, TaskKind, TaskParam, TaskProto};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    AwaitingTask,
    AwaitingMessage,
    InEndState,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Phase::AwaitingTask => "awaiting task",
            Phase::AwaitingMessage => "awaiting message",
            Phase::InEndState => "in end state",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Effect {
    CreateTask(TaskProto),
    SendMessage { mtype: String, to_subject: String, params: Bindings },
    InvokeRefinement { name: String, state_id: String, variables: Bindings },
    EnteredEndState,
    Halted,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("state {state:?} is {phase}, cannot accept a {stimulus}")]
    WrongPhase { state: String, phase: Phase, stimulus: &'static str },
    #[error("state {state:?} has no transition labelled {label:?}")]
    InvalidTransition { state: String, label: String },
    #[error("parameter {0:?} is not writable in this state")]
    IllegalWrite(String),
    #[error("message type {mtype:?} is not accepted by state {state:?}")]
    TypeMismatch { state: String, mtype: String },
    #[error("state {0:?} does not exist in the behavior graph")]
    StateNotInGraph(String),
    #[error("refinement {name:?} failed: {message}")]
    Refinement { name: String, message: String },
}

/// Runs named refinements on behalf of the engine. The returned bindings are
/// merged into the subject's variables before the transition is taken.
pub trait RefinementHost {
    fn invoke(&mut self, name: &str, state_id: &str, variables: &Bindings) -> Result<Bindings, String>;
}

/// Host that accepts every refinement and writes nothing.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoRefinements;

impl RefinementHost for NoRefinements {
    fn invoke(&mut self, _: &str, _: &str, _: &Bindings) -> Result<Bindings, String> {
        Ok(Bindings::new())
    }
}

#[derive(Debug, Clone)]
pub struct EngineInstance {
    siid: Siid,
    behavior: Arc<BehaviorGraph>,
    current_state: String,
    variables: Bindings,
    phase: Phase,
}

/// Creates an instance positioned at the start state and enters it.
pub fn instantiate(behavior: Arc<BehaviorGraph>, siid: Siid) -> Result<(EngineInstance, Vec<Effect>), EngineError> {
    let start = behavior.start_state.clone();
    let phase = phase_of(behavior.state(&start).ok_or_else(|| EngineError::StateNotInGraph(start.clone()))?);
    let mut inst = EngineInstance { siid, behavior, current_state: start.clone(), variables: Bindings::new(), phase };
    let effects = inst.enter(&start)?;
    Ok((inst, effects))
}

/// Rebuilds an instance from a snapshot taken between stimuli.
pub fn restore(behavior: Arc<BehaviorGraph>, snapshot: &Snapshot, siid: Siid) -> Result<EngineInstance, EngineError> {
    let state = behavior
        .state(&snapshot.current_state)
        .ok_or_else(|| EngineError::StateNotInGraph(snapshot.current_state.clone()))?;
    let phase = phase_of(state);
    Ok(EngineInstance {
        siid,
        current_state: snapshot.current_state.clone(),
        variables: snapshot.variables.clone(),
        phase,
        behavior,
    })
}

fn phase_of(state: &State) -> Phase {
    match (&state.kind, state.is_end) {
        (_, true) => Phase::InEndState,
        (StateKind::Receive(_), false) => Phase::AwaitingMessage,
        _ => Phase::AwaitingTask,
    }
}

fn task_params(read: &[String], write: &[String], vars: &Bindings) -> Vec<TaskParam> {
    let read = read.iter().map(|n| (n, false));
    let write = write.iter().map(|n| (n, true));
    read.chain(write)
        .map(|(name, writable)| TaskParam { name: name.clone(), value: vars.get(name).to_string(), writable })
        .collect()
}

impl EngineInstance {
    pub fn siid(&self) -> &Siid {
        &self.siid
    }

    pub fn current_state(&self) -> &str {
        &self.current_state
    }

    pub fn variables(&self) -> &Bindings {
        &self.variables
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn behavior(&self) -> &Arc<BehaviorGraph> {
        &self.behavior
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot { current_state: self.current_state.clone(), variables: self.variables.clone(), pending_task: None }
    }

    fn state(&self) -> &State {
        // Every state id the instance holds was checked against the graph.
        self.behavior.state(&self.current_state).expect("current state is in graph")
    }

    fn require_phase(&self, phase: Phase, stimulus: &'static str) -> Result<(), EngineError> {
        if self.phase != phase {
            return Err(EngineError::WrongPhase { state: self.current_state.clone(), phase: self.phase, stimulus });
        }
        Ok(())
    }

    fn check_writes(allowed: &[String], written: &Bindings) -> Result<(), EngineError> {
        match written.names().find(|n| !allowed.iter().any(|a| a == n)) {
            Some(name) => Err(EngineError::IllegalWrite(name.to_string())),
            None => Ok(()),
        }
    }

    /// Moves into `state_id` and returns the effects of arriving there.
    fn enter(&mut self, state_id: &str) -> Result<Vec<Effect>, EngineError> {
        let state = self.behavior.state(state_id).ok_or_else(|| EngineError::StateNotInGraph(state_id.to_string()))?;
        let phase = phase_of(state);
        let effect = if state.is_end {
            Effect::EnteredEndState
        } else {
            let kind = match &state.kind {
                StateKind::Function(f) => TaskKind::Function {
                    transitions: f.transitions.iter().map(|t| t.label.clone()).collect(),
                    params: task_params(&f.read_params, &f.write_params, &self.variables),
                },
                StateKind::Send(s) => TaskKind::Send {
                    to_subject: s.to_subject.clone(),
                    mtype: s.message_type.clone(),
                    params: task_params(&s.read_params, &s.write_params, &self.variables),
                },
                StateKind::Receive(r) => TaskKind::Receive { mtypes: r.message_types.clone() },
            };
            Effect::CreateTask(TaskProto { name: state.name.clone(), state_id: state.id.clone(), kind })
        };
        self.current_state = state_id.to_string();
        self.phase = phase;
        Ok(vec![effect])
    }

    /// Answers a function state's task by choosing a transition.
    ///
    /// A refinement attached to the state runs after the written parameters
    /// are applied and before the transition is taken. On error the instance
    /// is left unchanged.
    pub fn apply_function_answer(
        &mut self,
        label: &str,
        written: &Bindings,
        host: &mut dyn RefinementHost,
    ) -> Result<Vec<Effect>, EngineError> {
        self.require_phase(Phase::AwaitingTask, "function answer")?;
        let state = self.state();
        let StateKind::Function(func) = &state.kind else {
            return Err(EngineError::WrongPhase {
                state: state.id.clone(),
                phase: self.phase,
                stimulus: "function answer",
            });
        };
        let target = func
            .transitions
            .iter()
            .find(|t| t.label == label)
            .map(|t| t.target.clone())
            .ok_or_else(|| EngineError::InvalidTransition { state: state.id.clone(), label: label.to_string() })?;
        Self::check_writes(&func.write_params, written)?;

        let mut variables = self.variables.clone();
        variables.merge(written);
        let mut effects = Vec::new();
        if let Some(name) = func.refinement.clone() {
            let state_id = state.id.clone();
            effects.push(Effect::InvokeRefinement {
                name: name.clone(),
                state_id: state_id.clone(),
                variables: variables.clone(),
            });
            let writes = host
                .invoke(&name, &state_id, &variables)
                .map_err(|message| EngineError::Refinement { name, message })?;
            variables.merge(&writes);
        }
        if self.behavior.state(&target).is_none() {
            return Err(EngineError::StateNotInGraph(target));
        }
        self.variables = variables;
        effects.extend(self.enter(&target)?);
        Ok(effects)
    }

    /// Confirms a send state's task; the message carries only `sent_params`.
    pub fn apply_send_answer(&mut self, written: &Bindings) -> Result<Vec<Effect>, EngineError> {
        self.require_phase(Phase::AwaitingTask, "send answer")?;
        let state = self.state();
        let StateKind::Send(send) = &state.kind else {
            return Err(EngineError::WrongPhase {
                state: state.id.clone(),
                phase: self.phase,
                stimulus: "send answer",
            });
        };
        Self::check_writes(&send.write_params, written)?;
        let send = send.clone();
        if self.behavior.state(&send.target).is_none() {
            return Err(EngineError::StateNotInGraph(send.target));
        }

        self.variables.merge(written);
        let params: Bindings =
            send.sent_params.iter().map(|n| (n.clone(), self.variables.get(n).to_string())).collect();
        let mut effects =
            vec![Effect::SendMessage { mtype: send.message_type.clone(), to_subject: send.to_subject.clone(), params }];
        effects.extend(self.enter(&send.target)?);
        Ok(effects)
    }

    /// Consumes a message; its parameters overwrite same-named variables.
    pub fn apply_receive(&mut self, mtype: &str, params: &Bindings) -> Result<Vec<Effect>, EngineError> {
        self.require_phase(Phase::AwaitingMessage, "message")?;
        let state = self.state();
        let StateKind::Receive(recv) = &state.kind else { unreachable!("awaiting message outside a receive state") };
        if !recv.message_types.iter().any(|m| m == mtype) {
            return Err(EngineError::TypeMismatch { state: state.id.clone(), mtype: mtype.to_string() });
        }
        let target = recv.target.clone();
        if self.behavior.state(&target).is_none() {
            return Err(EngineError::StateNotInGraph(target));
        }
        self.variables.merge(params);
        self.enter(&target)
    }

    /// Stops an instance that has reached its end state.
    pub fn terminate(&mut self) -> Result<Vec<Effect>, EngineError> {
        self.require_phase(Phase::InEndState, "termination")?;
        Ok(vec![Effect::Halted])
    }
}
