//! Broken variants of the Internal Order fixture, each with the rejection it
//! must produce.

use serde_json::{json, Value};

use subjekt_core::model_io::parse_definition;
use subjekt_core::{validate, ParseError, ViolationCode};

use super::INTERNAL_ORDER;

#[derive(Debug, Clone, PartialEq)]
pub enum Expect {
    Code(ViolationCode),
    /// Rejected by the parser with a schema error at this path.
    Schema(&'static str),
}

pub struct Mutant {
    pub name: &'static str,
    pub document: Value,
    pub expect: Expect,
}

const EMP: &str = "/process/subjects/0";
const SUP: &str = "/process/subjects/1";

fn mutate(name: &'static str, expect: Expect, f: impl FnOnce(&mut Value)) -> Mutant {
    let mut document: Value = serde_json::from_str(INTERNAL_ORDER).expect("fixture is JSON");
    f(&mut document);
    Mutant { name, document, expect }
}

fn at<'a>(doc: &'a mut Value, pointer: &str) -> &'a mut Value {
    doc.pointer_mut(pointer).unwrap_or_else(|| panic!("{pointer} resolves in fixture"))
}

fn state(subject: &str, i: usize) -> String {
    format!("{subject}/behavior/states/{i}")
}

pub fn all() -> Vec<Mutant> {
    use Expect::*;
    use ViolationCode::*;
    vec![
        mutate("dangling function transition", Code(DanglingTransition), |d| {
            *at(d, &format!("{}/transitions/0/target", state(EMP, 0))) = json!("nowhere");
        }),
        mutate("dangling send target", Code(DanglingTransition), |d| {
            *at(d, &format!("{}/target", state(EMP, 1))) = json!("nowhere");
        }),
        mutate("dangling receive target", Code(DanglingTransition), |d| {
            *at(d, &format!("{}/target", state(SUP, 0))) = json!("ghost");
        }),
        mutate("duplicate subject name", Code(DuplicateSubjectName), |d| {
            *at(d, &format!("{SUP}/name")) = json!("Employee");
        }),
        mutate("duplicate subject id", Code(DuplicateSubjectId), |d| {
            *at(d, &format!("{SUP}/sid")) = json!("io-employee");
        }),
        mutate("employee without end state", Code(NoEndState), |d| {
            *at(d, &format!("{}/is_end", state(EMP, 4))) = json!(false);
            *at(d, &format!("{}/is_end", state(EMP, 5))) = json!(false);
        }),
        mutate("supervisor without end state", Code(NoEndState), |d| {
            *at(d, &format!("{}/is_end", state(SUP, 6))) = json!(false);
        }),
        mutate("cycle cannot reach end", Code(UnreachableEnd), |d| {
            *at(d, &format!("{}/transitions/0/target", state(SUP, 1))) = json!("receive_order");
        }),
        mutate("receive with two targets", Schema("/process/subjects/1/behavior/states/0/target"), |d| {
            *at(d, &format!("{}/target", state(SUP, 0))) = json!(["review", "decide"]);
        }),
        mutate("end state with outgoing transition", Code(EndStateWithTransitions), |d| {
            *at(d, &format!("{}/transitions", state(EMP, 4))) = json!([{"label": "again", "target": "create_order"}]);
        }),
        mutate("send state marked as end", Code(EndStateWithTransitions), |d| {
            *at(d, &format!("{}/is_end", state(EMP, 1))) = json!(true);
        }),
        mutate("receive state marked as end", Code(EndStateWithTransitions), |d| {
            *at(d, &format!("{}/is_end", state(SUP, 0))) = json!(true);
        }),
        mutate("no subjects", Code(NoSubjects), |d| {
            *at(d, "/process/subjects") = json!([]);
        }),
        mutate("no startable subject", Code(NoStartableSubject), |d| {
            *at(d, &format!("{EMP}/can_be_started")) = json!(false);
        }),
        mutate("send to unknown subject", Code(UnknownToSubject), |d| {
            *at(d, &format!("{}/to_subject", state(EMP, 1))) = json!("Ghost");
        }),
        mutate("message type nobody receives", Code(UnacceptedMessageType), |d| {
            *at(d, &format!("{}/message_type", state(EMP, 1))) = json!("Invoice");
        }),
        mutate("unknown start state", Code(UnknownStartState), |d| {
            *at(d, &format!("{EMP}/behavior/start_state")) = json!("nowhere");
        }),
        mutate("duplicate state id", Code(DuplicateStateId), |d| {
            *at(d, &format!("{}/id", state(SUP, 6))) = json!("review");
        }),
        mutate("function state without transitions", Code(FunctionWithoutTransitions), |d| {
            *at(d, &format!("{}/transitions", state(EMP, 3))) = json!([]);
        }),
        mutate("duplicate transition label", Code(DuplicateTransitionLabel), |d| {
            *at(d, &format!("{}/transitions/1/label", state(SUP, 2))) = json!("approve");
        }),
        mutate("receive without message types", Code(ReceiveWithoutMessageTypes), |d| {
            *at(d, &format!("{}/message_types", state(EMP, 2))) = json!([]);
        }),
        mutate("parameter both read and written", Code(ReadWriteOverlap), |d| {
            *at(d, &format!("{}/write_params", state(SUP, 2))) = json!(["comment", "product"]);
        }),
        mutate("empty process name", Code(EmptyProcessName), |d| {
            *at(d, "/process/name") = json!("");
        }),
        mutate("empty pid", Code(EmptyPid), |d| {
            *at(d, "/process/pid") = json!("");
        }),
        mutate("self loop cannot reach end", Code(UnreachableEnd), |d| {
            at(d, &format!("{EMP}/behavior/states")).as_array_mut().expect("states array").push(json!({
                "id": "limbo", "kind": "function", "name": "Limbo", "is_end": false,
                "read_params": [], "write_params": [],
                "transitions": [{"label": "again", "target": "limbo"}], "refinement": null
            }));
        }),
    ]
}

/// Parses and validates the mutant; `Ok` if it is rejected as expected.
pub fn check(m: &Mutant) -> Result<(), String> {
    let bytes = serde_json::to_vec(&m.document).expect("serializes");
    match (parse_definition(&bytes), &m.expect) {
        (Ok(doc), Expect::Code(code)) => {
            let report = validate(&doc.process);
            if report.has(*code) {
                Ok(())
            } else {
                Err(format!("expected {}, report was:\n{report}", code.as_str()))
            }
        }
        (Err(ParseError::Schema { path, .. }), Expect::Schema(want)) if path == *want => Ok(()),
        (Ok(_), Expect::Schema(want)) => Err(format!("expected schema error at {want}, document parsed")),
        (Err(e), _) => Err(format!("unexpected parse error: {e}")),
    }
}
