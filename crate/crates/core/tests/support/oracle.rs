//! The ten repository queries evaluated as naive nested loops over a
//! [`World`], independent of the SQL implementation.

use subjekt_core::repository::{MessageRecord, Repository, StartableProcess, SubjectInstanceRecord, TaskRecord};
use subjekt_core::task::TaskKindTag;
use subjekt_core::{Mid, Piid, Siid};

use super::gen::World;

impl World {
    pub fn load(&self, repo: &Repository) {
        repo.write(|tx| {
            for p in &self.processes {
                tx.insert_process(p)?;
            }
            for u in &self.users {
                tx.put_user(u)?;
            }
            for (piid, pid) in &self.process_instances {
                tx.insert_process_instance(piid, pid)?;
            }
            for i in &self.instances {
                tx.insert_instance(i)?;
            }
            for t in &self.tasks {
                tx.insert_task(t)?;
            }
            for m in &self.messages {
                tx.insert_message(m)?;
            }
            Ok::<_, subjekt_core::RepoError>(())
        })
        .expect("world loads");
    }

    pub fn user_exists(&self, username: &str) -> bool {
        self.users.iter().any(|u| u.username == username)
    }

    fn subject(&self, sid: &str) -> Option<(&str, &str)> {
        for p in &self.processes {
            for s in &p.subjects {
                if s.sid == sid {
                    return Some((&p.pid, &s.name));
                }
            }
        }
        None
    }

    fn visible(&self, inst: &SubjectInstanceRecord, username: &str) -> bool {
        if let Some(owner) = &inst.owner {
            return owner == username;
        }
        let (pid, name) = self.subject(&inst.sid).expect("instance subject exists");
        self.users
            .iter()
            .filter(|u| u.username == username)
            .flat_map(|u| &u.roles)
            .any(|r| r.pid == pid && r.subject_name == name)
    }

    fn instance(&self, siid: &Siid) -> Option<&SubjectInstanceRecord> {
        self.instances.iter().find(|i| &i.siid == siid)
    }

    pub fn q1(&self, username: &str) -> Vec<StartableProcess> {
        let mut out = Vec::new();
        for p in &self.processes {
            for s in &p.subjects {
                for u in &self.users {
                    for r in &u.roles {
                        if s.can_be_started && u.username == username && r.pid == p.pid && r.subject_name == s.name {
                            out.push(StartableProcess {
                                sid: s.sid.clone(),
                                pid: p.pid.clone(),
                                process_name: p.name.clone(),
                            });
                        }
                    }
                }
            }
        }
        out.sort_by(|a, b| a.sid.cmp(&b.sid));
        out
    }

    fn open_of_kind(&self, username: &str, tag: TaskKindTag) -> Vec<TaskRecord> {
        let mut out = Vec::new();
        for t in &self.tasks {
            for i in &self.instances {
                if t.siid == i.siid && !t.done && t.kind.tag() == tag && self.visible(i, username) {
                    out.push(t.clone());
                }
            }
        }
        out.sort_by(|a, b| a.tid.cmp(&b.tid));
        out
    }

    pub fn q2(&self, username: &str) -> Vec<TaskRecord> {
        self.open_of_kind(username, TaskKindTag::Function)
    }

    pub fn q3(&self, username: &str) -> Vec<TaskRecord> {
        self.open_of_kind(username, TaskKindTag::Send)
    }

    pub fn q4(&self, username: &str) -> Vec<(TaskRecord, Vec<MessageRecord>)> {
        let mut out = Vec::new();
        for t in self.open_of_kind(username, TaskKindTag::Receive) {
            let subjekt_core::task::TaskKind::Receive { mtypes } = &t.kind else { unreachable!() };
            let mut msgs: Vec<MessageRecord> = Vec::new();
            for m in &self.messages {
                if m.to_siid == t.siid && !m.received && mtypes.contains(&m.mtype) {
                    msgs.push(m.clone());
                }
            }
            msgs.sort_by(|a, b| a.mid.cmp(&b.mid));
            if !msgs.is_empty() {
                out.push((t, msgs));
            }
        }
        out
    }

    pub fn q5(&self, siid: &Siid) -> Option<(String, Piid)> {
        let i = self.instance(siid)?;
        let (pid, _) = self.subject(&i.sid)?;
        Some((pid.to_string(), i.piid.clone()))
    }

    pub fn q6(&self, pid: &str, name: &str) -> Option<String> {
        self.processes
            .iter()
            .filter(|p| p.pid == pid)
            .flat_map(|p| &p.subjects)
            .find(|s| s.name == name)
            .map(|s| s.sid.clone())
    }

    pub fn q7(&self, sid: &str, piid: &Piid) -> Option<Siid> {
        self.instances.iter().find(|i| i.sid == sid && &i.piid == piid).map(|i| i.siid.clone())
    }

    pub fn q8(&self, siid: &Siid, mtypes: &[String]) -> Vec<Mid> {
        let mut out: Vec<Mid> = self
            .messages
            .iter()
            .filter(|m| &m.to_siid == siid && !m.received && mtypes.contains(&m.mtype))
            .map(|m| m.mid.clone())
            .collect();
        out.sort();
        out
    }

    pub fn q9(&self, piid: &Piid) -> u64 {
        self.instances.iter().filter(|i| &i.piid == piid && !i.is_in_end_state).count() as u64
    }

    pub fn q10(&self, piid: &Piid) -> Vec<SubjectInstanceRecord> {
        let mut out: Vec<SubjectInstanceRecord> = self.instances.iter().filter(|i| &i.piid == piid).cloned().collect();
        out.sort_by(|a, b| a.siid.cmp(&b.siid));
        out
    }
}

/// Runs every query against `repo` and the oracle for every relevant
/// argument. Returns a description of the first mismatch.
pub fn check_all(world: &World, repo: &Repository) -> Result<(), String> {
    let mut usernames: Vec<String> = world.users.iter().map(|u| u.username.clone()).collect();
    usernames.push("nobody".into());
    let mtype_sets: Vec<Vec<String>> = vec![
        vec![],
        vec!["M0".into()],
        vec!["M1".into(), "M2".into()],
        vec!["M0".into(), "M1".into(), "M2".into(), "M3".into()],
    ];

    repo.read(|tx| {
        for u in &usernames {
            let known = world.user_exists(u);
            macro_rules! compare {
                ($name:literal, $sql:expr, $oracle:expr) => {
                    match ($sql, known) {
                        (Ok(got), true) => {
                            let want = $oracle;
                            if got != want {
                                return Ok(Err(format!("{} for {u}: got {got:?}, want {want:?}", $name)));
                            }
                        }
                        (Err(subjekt_core::RepoError::UnknownUser(_)), false) => {}
                        (other, _) => return Ok(Err(format!("{} for {u} (known={known}): {other:?}", $name))),
                    }
                };
            }
            compare!("q1", tx.q1_startable_processes(u), world.q1(u));
            compare!("q2", tx.q2_open_function_tasks(u), world.q2(u));
            compare!("q3", tx.q3_open_send_tasks(u), world.q3(u));
            compare!("q4", tx.q4_open_receive_tasks(u), world.q4(u));
        }

        let mut siids: Vec<Siid> = world.instances.iter().map(|i| i.siid.clone()).collect();
        siids.push(Siid::new("missing"));
        for siid in &siids {
            match (tx.q5_process_of_instance(siid), world.q5(siid)) {
                (Ok(got), Some(want)) if got == want => {}
                (Err(subjekt_core::RepoError::UnknownInstance(_)), None) => {}
                (got, want) => return Ok(Err(format!("q5 for {siid}: got {got:?}, want {want:?}"))),
            }
            for mtypes in &mtype_sets {
                match (tx.q8_receivable_messages(siid, mtypes), world.instance(siid)) {
                    (Ok(got), Some(_)) if got == world.q8(siid, mtypes) => {}
                    (Err(subjekt_core::RepoError::UnknownInstance(_)), None) => {}
                    (got, _) => {
                        return Ok(Err(format!(
                            "q8 for {siid} {mtypes:?}: got {got:?}, want {:?}",
                            world.q8(siid, mtypes)
                        )))
                    }
                }
            }
        }

        let mut piids: Vec<Piid> = world.process_instances.iter().map(|(p, _)| p.clone()).collect();
        piids.push(Piid::new("missing"));
        for p in &world.processes {
            for name in ["Alpha", "Beta", "Gamma", "Ghost"] {
                match (tx.q6_subject_by_name(&p.pid, name), world.q6(&p.pid, name)) {
                    (Ok(got), Some(want)) if got == want => {}
                    (Err(subjekt_core::RepoError::UnknownSubjectName { .. }), None) => {}
                    (got, want) => return Ok(Err(format!("q6 {} {name}: got {got:?}, want {want:?}", p.pid))),
                }
            }
            for s in &p.subjects {
                for piid in &piids {
                    let got = tx.q7_instance_of(&s.sid, piid)?;
                    if got != world.q7(&s.sid, piid) {
                        return Ok(Err(format!("q7 {} {piid}: got {got:?}", s.sid)));
                    }
                }
            }
        }
        for piid in &piids {
            let got = tx.q9_count_not_ended(piid)?;
            if got != world.q9(piid) {
                return Ok(Err(format!("q9 {piid}: got {got}, want {}", world.q9(piid))));
            }
            let got = tx.q10_instances_of(piid)?;
            if got != world.q10(piid) {
                return Ok(Err(format!("q10 {piid}: got {got:?}, want {:?}", world.q10(piid))));
            }
        }
        Ok::<_, subjekt_core::RepoError>(Ok(()))
    })
    .map_err(|e| e.to_string())?
}
