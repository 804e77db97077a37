//! Seeded generators for valid process models, engine stimuli and small
//! repository populations.

use std::collections::BTreeSet;

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

use subjekt_core::engine::{EngineInstance, Phase};
use subjekt_core::model::{
    BehaviorGraph, FunctionState, ReceiveState, SendState, State, StateKind, SubjectDefinition, Transition,
};
use subjekt_core::repository::{MessageRecord, RoleAssignment, SubjectInstanceRecord, TaskRecord, UserRecord};
use subjekt_core::task::{TaskKind, TaskParam};
use subjekt_core::{Bindings, Mid, Piid, ProcessDefinition, Siid, Tid};

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

const VARS: [&str; 4] = ["a", "b", "c", "d"];
const MTYPES: [&str; 4] = ["M0", "M1", "M2", "M3"];
const NAMES: [&str; 3] = ["Alpha", "Beta", "Gamma"];

fn subset<'a>(rng: &mut StdRng, pool: &[&'a str], p: f64) -> Vec<&'a str> {
    pool.iter().copied().filter(|_| rng.gen_bool(p)).collect()
}

fn strings(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

fn function(
    id: String,
    read: Vec<String>,
    write: Vec<String>,
    transitions: Vec<Transition>,
    refinement: Option<String>,
) -> State {
    State {
        name: format!("state {id}"),
        is_end: transitions.is_empty(),
        id,
        kind: StateKind::Function(FunctionState { read_params: read, write_params: write, transitions, refinement }),
    }
}

/// A valid model with 1..=3 subjects of 2..=8 states each.
///
/// Every non-end state has an edge to a later state, so every state reaches
/// the final end state. Sends only target (subject, type) pairs some receive
/// state accepts.
pub fn valid_model(rng: &mut StdRng, pid: &str) -> ProcessDefinition {
    let n_subjects = rng.gen_range(1..=3);
    let names = &NAMES[..n_subjects];

    // Receive vocabularies first so sends can respect message closure.
    let sizes: Vec<usize> = (0..n_subjects).map(|_| rng.gen_range(2..=8)).collect();
    let mut kinds: Vec<Vec<u8>> = Vec::new();
    let mut accepts: Vec<Vec<Vec<&str>>> = Vec::new();
    for &n in &sizes {
        let mut k = Vec::new();
        let mut acc = Vec::new();
        for i in 0..n {
            // 0 function, 1 send, 2 receive; the last state is always an end function.
            let kind = if i == n - 1 { 0 } else { rng.gen_range(0..3u8) };
            let mut mts = if kind == 2 { subset(rng, &MTYPES, 0.5) } else { vec![] };
            if kind == 2 && mts.is_empty() {
                mts.push(MTYPES[rng.gen_range(0..MTYPES.len())]);
            }
            k.push(kind);
            acc.push(mts);
        }
        kinds.push(k);
        accepts.push(acc);
    }

    let mut subjects = Vec::new();
    for (si, &n) in sizes.iter().enumerate() {
        let id = |i: usize| format!("s{i}");
        let mut states = Vec::new();
        for i in 0..n {
            let forward = |rng: &mut StdRng| id(rng.gen_range(i + 1..n));
            let anywhere = |rng: &mut StdRng| id(rng.gen_range(0..n));
            let write = subset(rng, &VARS, 0.3);
            let read: Vec<&str> = VARS.iter().copied().filter(|v| !write.contains(v) && rng.gen_bool(0.3)).collect();
            let state = match kinds[si][i] {
                _ if i == n - 1 => function(id(i), strings(&read), vec![], vec![], None),
                1 => {
                    let targets: Vec<(usize, &str)> = (0..n_subjects)
                        .filter(|&o| o != si)
                        .flat_map(|o| accepts[o].iter().flatten().map(move |m| (o, *m)))
                        .collect();
                    match targets.choose(rng) {
                        Some(&(o, mtype)) => State {
                            id: id(i),
                            name: format!("state {}", id(i)),
                            is_end: false,
                            kind: StateKind::Send(SendState {
                                read_params: strings(&read),
                                write_params: strings(&write),
                                to_subject: names[o].to_string(),
                                message_type: mtype.to_string(),
                                sent_params: strings(&subset(rng, &VARS, 0.5)),
                                target: forward(rng),
                            }),
                        },
                        None => function(
                            id(i),
                            strings(&read),
                            strings(&write),
                            vec![Transition { label: "next".into(), target: forward(rng) }],
                            None,
                        ),
                    }
                }
                2 => State {
                    id: id(i),
                    name: format!("state {}", id(i)),
                    is_end: false,
                    kind: StateKind::Receive(ReceiveState {
                        message_types: strings(&accepts[si][i]),
                        target: forward(rng),
                    }),
                },
                _ => {
                    let mut transitions = vec![Transition { label: "t0".into(), target: forward(rng) }];
                    for k in 1..rng.gen_range(1..=3) {
                        transitions.push(Transition { label: format!("t{k}"), target: anywhere(rng) });
                    }
                    let refinement = rng.gen_bool(0.2).then(|| "calc".to_string());
                    function(id(i), strings(&read), strings(&write), transitions, refinement)
                }
            };
            states.push(state);
        }
        subjects.push(SubjectDefinition {
            sid: format!("{pid}.{}", names[si].to_lowercase()),
            name: names[si].to_string(),
            can_be_started: si == 0 || rng.gen_bool(0.3),
            behavior: BehaviorGraph { start_state: "s0".into(), states },
        });
    }
    ProcessDefinition { pid: pid.to_string(), name: format!("Process {pid}"), subjects }
}

/// One input to an engine instance.
#[derive(Debug, Clone, PartialEq)]
pub enum Stimulus {
    Function { label: String, writes: Bindings },
    Send { writes: Bindings },
    Receive { mtype: String, params: Bindings },
}

fn random_bindings(rng: &mut StdRng, names: &[String]) -> Bindings {
    let mut out = Bindings::new();
    for n in names {
        if rng.gen_bool(0.6) {
            out.set(n.clone(), format!("v{}", rng.gen_range(0..100)));
        }
    }
    out
}

/// A stimulus appropriate for the instance's current state. With small
/// probability the stimulus is deliberately wrong so error paths are part
/// of the compared logs.
pub fn stimulus_for(rng: &mut StdRng, inst: &EngineInstance) -> Stimulus {
    let state = inst.behavior().state(inst.current_state()).expect("current state exists");
    let wrong = rng.gen_bool(0.1);
    match (&state.kind, inst.phase()) {
        (_, Phase::InEndState) => Stimulus::Send { writes: Bindings::new() },
        (StateKind::Function(f), _) => {
            let label = if wrong || f.transitions.is_empty() {
                "nowhere".to_string()
            } else {
                f.transitions.choose(rng).expect("non-empty").label.clone()
            };
            let mut writes = random_bindings(rng, &f.write_params);
            if rng.gen_bool(0.05) {
                writes.set("zz", "illegal");
            }
            Stimulus::Function { label, writes }
        }
        (StateKind::Send(s), _) => Stimulus::Send { writes: random_bindings(rng, &s.write_params) },
        (StateKind::Receive(r), _) => {
            let mtype =
                if wrong { "Unexpected".to_string() } else { r.message_types.choose(rng).expect("non-empty").clone() };
            Stimulus::Receive { mtype, params: random_bindings(rng, &strings(&VARS)) }
        }
    }
}

/// A small repository population, kept in memory for the oracle.
#[derive(Debug, Clone, Default)]
pub struct World {
    pub processes: Vec<ProcessDefinition>,
    pub users: Vec<UserRecord>,
    pub process_instances: Vec<(Piid, String)>,
    pub instances: Vec<SubjectInstanceRecord>,
    pub tasks: Vec<TaskRecord>,
    pub messages: Vec<MessageRecord>,
}

fn trivial_subject(sid: String, name: &str, can_be_started: bool) -> SubjectDefinition {
    SubjectDefinition {
        sid,
        name: name.to_string(),
        can_be_started,
        behavior: BehaviorGraph {
            start_state: "end".into(),
            states: vec![function("end".into(), vec![], vec![], vec![], None)],
        },
    }
}

/// ≤3 processes sharing subject names, ≤10 users, ≤5 process instances,
/// ≤50 tasks and ≤50 messages.
pub fn world(rng: &mut StdRng) -> World {
    let mut w = World::default();
    for p in 0..rng.gen_range(1..=3) {
        let pid = format!("p{p}");
        let mut subjects = Vec::new();
        for name in NAMES {
            if rng.gen_bool(0.7) {
                subjects.push(trivial_subject(format!("{pid}.{}", name.to_lowercase()), name, rng.gen_bool(0.5)));
            }
        }
        w.processes.push(ProcessDefinition { pid: pid.clone(), name: format!("Process {p}"), subjects });
    }

    let roles: Vec<RoleAssignment> = w
        .processes
        .iter()
        .flat_map(|p| p.subjects.iter().map(|s| RoleAssignment { pid: p.pid.clone(), subject_name: s.name.clone() }))
        .collect();
    for u in 0..rng.gen_range(0..=10) {
        let roles: BTreeSet<RoleAssignment> = roles.iter().filter(|_| rng.gen_bool(0.35)).cloned().collect();
        w.users.push(UserRecord { username: format!("u{u}"), roles });
    }
    let usernames: Vec<String> = w.users.iter().map(|u| u.username.clone()).collect();

    for _ in 0..rng.gen_range(0..=5) {
        let p = w.processes.choose(rng).expect("at least one process").clone();
        let piid = Piid::generate();
        for s in &p.subjects {
            if rng.gen_bool(0.6) {
                w.instances.push(SubjectInstanceRecord {
                    siid: Siid::generate(),
                    sid: s.sid.clone(),
                    piid: piid.clone(),
                    owner: if rng.gen_bool(0.5) { usernames.choose(rng).cloned() } else { None },
                    is_in_end_state: rng.gen_bool(0.3),
                    terminated: false,
                    snapshot: None,
                });
            }
        }
        w.process_instances.push((piid, p.pid.clone()));
    }
    if w.instances.is_empty() {
        return w;
    }

    let mut open: BTreeSet<Siid> = BTreeSet::new();
    for _ in 0..rng.gen_range(0..=50) {
        let siid = w.instances.choose(rng).expect("non-empty").siid.clone();
        let done = open.contains(&siid) || rng.gen_bool(0.3);
        if !done {
            open.insert(siid.clone());
        }
        let params = |rng: &mut StdRng| {
            let mut out = Vec::new();
            for v in VARS {
                if rng.gen_bool(0.3) {
                    out.push(TaskParam { name: v.to_string(), value: "x".into(), writable: rng.gen_bool(0.5) });
                }
            }
            out
        };
        let kind = match rng.gen_range(0..3) {
            0 => TaskKind::Function { transitions: vec!["go".into()], params: params(rng) },
            1 => TaskKind::Send { to_subject: "Alpha".into(), mtype: "M0".into(), params: params(rng) },
            _ => TaskKind::Receive { mtypes: strings(&subset(rng, &MTYPES, 0.5)) },
        };
        w.tasks.push(TaskRecord {
            tid: Tid::generate(),
            name: "task".into(),
            siid,
            state_id: "end".into(),
            done,
            kind,
        });
    }

    for _ in 0..rng.gen_range(0..=50) {
        let to = w.instances.choose(rng).expect("non-empty").clone();
        let from = w.instances.choose(rng).expect("non-empty").siid.clone();
        let to_subject = w
            .processes
            .iter()
            .flat_map(|p| &p.subjects)
            .find(|s| s.sid == to.sid)
            .map(|s| s.name.clone())
            .expect("instance subject exists");
        w.messages.push(MessageRecord {
            mid: Mid::generate(),
            mtype: MTYPES.choose(rng).expect("non-empty").to_string(),
            from_siid: from,
            to_subject,
            to_siid: to.siid,
            received: rng.gen_bool(0.3),
            params: random_bindings(rng, &strings(&VARS)),
        });
    }
    w
}
