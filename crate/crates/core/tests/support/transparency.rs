//! Differential harness for snapshot/restore: an uninterrupted run against
//! replays that persist and restore the instance at a chosen step.

use std::sync::Arc;

use rand::Rng;

use subjekt_core::engine::{self, Effect, EngineError, EngineInstance, RefinementHost};
use subjekt_core::model::BehaviorGraph;
use subjekt_core::repository::{Repository, Snapshot, SubjectInstanceRecord};
use subjekt_core::{Bindings, Piid, ProcessDefinition, Siid};

use super::gen::{self, Stimulus};

/// Deterministic refinement: records how many variables it saw.
pub struct Counting;

impl RefinementHost for Counting {
    fn invoke(&mut self, name: &str, state_id: &str, variables: &Bindings) -> Result<Bindings, String> {
        Ok([("refined", format!("{name}@{state_id}:{}", variables.len()))].into_iter().collect())
    }
}

pub type Log = Vec<Result<Vec<Effect>, EngineError>>;

pub fn apply(inst: &mut EngineInstance, s: &Stimulus) -> Result<Vec<Effect>, EngineError> {
    match s {
        Stimulus::Function { label, writes } => inst.apply_function_answer(label, writes, &mut Counting),
        Stimulus::Send { writes } => inst.apply_send_answer(writes),
        Stimulus::Receive { mtype, params } => inst.apply_receive(mtype, params),
    }
}

pub struct Recording {
    pub def: ProcessDefinition,
    pub sid: String,
    pub behavior: Arc<BehaviorGraph>,
    pub stimuli: Vec<Stimulus>,
    pub log: Log,
}

/// Generates a stimulus sequence against an uninterrupted run and returns
/// it with the run's log.
pub fn record(seed: u64) -> Recording {
    let mut rng = gen::rng(seed);
    let def = gen::valid_model(&mut rng, "p");
    let subject = &def.subjects[rng.gen_range(0..def.subjects.len())];
    let sid = subject.sid.clone();
    let behavior = Arc::new(subject.behavior.clone());
    let (mut inst, first) = engine::instantiate(behavior.clone(), Siid::new("si")).unwrap();
    let mut log = vec![Ok(first)];
    let mut stimuli = Vec::new();
    for _ in 0..rng.gen_range(1..=20) {
        // One stimulus past the end state is enough to cover absorption.
        if stimuli.last().is_some() && inst.phase() == engine::Phase::InEndState && rng.gen_bool(0.5) {
            break;
        }
        let s = gen::stimulus_for(&mut rng, &inst);
        log.push(apply(&mut inst, &s));
        stimuli.push(s);
    }
    Recording { def, sid, behavior, stimuli, log }
}

/// Replays the recording, passing the snapshot through `persist` after
/// `split` steps and continuing from whatever comes back.
pub fn replay_with_split(rec: &Recording, split: usize, mut persist: impl FnMut(Snapshot) -> Snapshot) -> Log {
    let (mut inst, first) = engine::instantiate(rec.behavior.clone(), Siid::new("si")).unwrap();
    let mut log = vec![Ok(first)];
    for (i, s) in rec.stimuli.iter().enumerate() {
        if i == split {
            let restored = persist(inst.snapshot());
            inst = engine::restore(rec.behavior.clone(), &restored, Siid::new("si")).unwrap();
        }
        log.push(apply(&mut inst, s));
    }
    log
}

pub fn via_json(s: Snapshot) -> Snapshot {
    serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap()
}

/// A store holding the recording's process with one subject instance whose
/// snapshot row is overwritten and read back on every call.
pub struct StoreRoundTrip {
    repo: Repository,
    siid: Siid,
}

impl StoreRoundTrip {
    pub fn new(rec: &Recording) -> Self {
        let repo = Repository::in_memory().unwrap();
        let siid = Siid::new("si");
        repo.write(|tx| {
            tx.insert_process(&rec.def)?;
            let piid = Piid::new("pi");
            tx.insert_process_instance(&piid, &rec.def.pid)?;
            tx.insert_instance(&SubjectInstanceRecord {
                siid: siid.clone(),
                sid: rec.sid.clone(),
                piid,
                owner: None,
                is_in_end_state: false,
                terminated: false,
                snapshot: None,
            })
        })
        .unwrap();
        StoreRoundTrip { repo, siid }
    }

    pub fn persist(&self, s: Snapshot) -> Snapshot {
        self.repo.write(|tx| tx.save_snapshot(&self.siid, Some(&s))).unwrap();
        self.repo.read(|tx| tx.instance(&self.siid)).unwrap().unwrap().snapshot.unwrap()
    }
}

/// Checks every split point of `seed` through both JSON and the store.
pub fn check_seed(seed: u64) -> Result<(), String> {
    let rec = record(seed);
    let store = StoreRoundTrip::new(&rec);
    for split in 0..=rec.stimuli.len() {
        if replay_with_split(&rec, split, via_json) != rec.log {
            return Err(format!("seed {seed}: json round trip diverges at split {split}"));
        }
        if replay_with_split(&rec, split, |s| store.persist(s)) != rec.log {
            return Err(format!("seed {seed}: store round trip diverges at split {split}"));
        }
    }
    Ok(())
}
