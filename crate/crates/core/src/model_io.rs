//! On-disk process definition format.
//!
//! Documents are JSON with a `format_version` and a `process`. Parsing is
//! strict (unknown fields are rejected) and reports JSON pointer paths for
//! schema problems. Serialization is canonical: sorted keys, two-space
//! indentation and a trailing newline.

use serde_json::{Map, Value};
use thiserror::Error;

use crate::model::{
    BehaviorGraph, FunctionState, ProcessDefinition, ReceiveState, SendState, State, StateKind, SubjectDefinition,
    Transition,
};

pub const FORMAT_VERSION: i64 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DefinitionDocument {
    pub format_version: i64,
    pub process: ProcessDefinition,
}

impl DefinitionDocument {
    pub fn new(process: ProcessDefinition) -> Self {
        DefinitionDocument { format_version: FORMAT_VERSION, process }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("unsupported format_version {found}")]
    Version { found: i64 },
}

impl ParseError {
    fn schema(path: &str, message: impl Into<String>) -> Self {
        ParseError::Schema { path: path.to_string(), message: message.into() }
    }
}

type Result<T> = std::result::Result<T, ParseError>;

pub fn parse_definition(bytes: &[u8]) -> Result<DefinitionDocument> {
    let value: Value = serde_json::from_slice(bytes)
        .map_err(|e| ParseError::Syntax { offset: byte_offset(bytes, e.line(), e.column()), message: e.to_string() })?;

    let root = object(&value, "", &["format_version", "process"])?;
    let version_path = "/format_version";
    let format_version = match root.get("format_version") {
        None => return Err(ParseError::schema(version_path, "missing field")),
        Some(v) => v.as_i64().ok_or_else(|| ParseError::schema(version_path, "expected integer"))?,
    };
    if format_version != FORMAT_VERSION {
        return Err(ParseError::Version { found: format_version });
    }
    let process = parse_process(required(root, "", "process")?, "/process")?;
    Ok(DefinitionDocument { format_version, process })
}

pub fn serialize_definition(doc: &DefinitionDocument) -> Vec<u8> {
    let value = serde_json::json!({
        "format_version": doc.format_version,
        "process": process_value(&doc.process),
    });
    canonical_bytes(&value)
}

/// Canonical JSON rendering: keys sorted, two-space indent, trailing newline.
pub fn canonical_bytes(value: &Value) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(&sorted(value)).expect("JSON values always serialize");
    out.push(b'\n');
    out
}

fn sorted(value: &Value) -> Value {
    match value {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            let mut out = Map::new();
            for k in keys {
                out.insert(k.clone(), sorted(&map[k]));
            }
            Value::Object(out)
        }
        Value::Array(items) => Value::Array(items.iter().map(sorted).collect()),
        other => other.clone(),
    }
}

fn byte_offset(bytes: &[u8], line: usize, column: usize) -> usize {
    let mut offset = 0;
    for _ in 1..line {
        match bytes[offset..].iter().position(|&b| b == b'\n') {
            Some(nl) => offset += nl + 1,
            None => return bytes.len(),
        }
    }
    (offset + column.saturating_sub(1)).min(bytes.len())
}

// --- decoding helpers -------------------------------------------------------

fn object<'a>(value: &'a Value, path: &str, allowed: &[&str]) -> Result<&'a Map<String, Value>> {
    let map = value.as_object().ok_or_else(|| ParseError::schema(path_or_root(path), "expected object"))?;
    // Report unknown keys in sorted order so the error is stable.
    let mut unknown: Vec<&String> = map.keys().filter(|k| !allowed.contains(&k.as_str())).collect();
    unknown.sort();
    if let Some(key) = unknown.first() {
        return Err(ParseError::schema(&format!("{path}/{key}"), "unknown field"));
    }
    Ok(map)
}

fn path_or_root(path: &str) -> &str {
    if path.is_empty() {
        "/"
    } else {
        path
    }
}

fn required<'a>(map: &'a Map<String, Value>, path: &str, key: &str) -> Result<&'a Value> {
    map.get(key).ok_or_else(|| ParseError::schema(&format!("{path}/{key}"), "missing field"))
}

fn string(map: &Map<String, Value>, path: &str, key: &str) -> Result<String> {
    required(map, path, key)?
        .as_str()
        .map(str::to_owned)
        .ok_or_else(|| ParseError::schema(&format!("{path}/{key}"), "expected string"))
}

fn boolean(map: &Map<String, Value>, path: &str, key: &str) -> Result<bool> {
    required(map, path, key)?.as_bool().ok_or_else(|| ParseError::schema(&format!("{path}/{key}"), "expected boolean"))
}

fn array<'a>(map: &'a Map<String, Value>, path: &str, key: &str) -> Result<&'a Vec<Value>> {
    required(map, path, key)?.as_array().ok_or_else(|| ParseError::schema(&format!("{path}/{key}"), "expected array"))
}

fn strings(map: &Map<String, Value>, path: &str, key: &str) -> Result<Vec<String>> {
    array(map, path, key)?
        .iter()
        .enumerate()
        .map(|(i, v)| {
            v.as_str()
                .map(str::to_owned)
                .ok_or_else(|| ParseError::schema(&format!("{path}/{key}/{i}"), "expected string"))
        })
        .collect()
}

fn parse_process(value: &Value, path: &str) -> Result<ProcessDefinition> {
    let map = object(value, path, &["pid", "name", "subjects"])?;
    let subjects = array(map, path, "subjects")?
        .iter()
        .enumerate()
        .map(|(i, v)| parse_subject(v, &format!("{path}/subjects/{i}")))
        .collect::<Result<_>>()?;
    Ok(ProcessDefinition { pid: string(map, path, "pid")?, name: string(map, path, "name")?, subjects })
}

fn parse_subject(value: &Value, path: &str) -> Result<SubjectDefinition> {
    let map = object(value, path, &["sid", "name", "can_be_started", "behavior"])?;
    let behavior_path = format!("{path}/behavior");
    let behavior = object(required(map, path, "behavior")?, &behavior_path, &["start_state", "states"])?;
    let states = array(behavior, &behavior_path, "states")?
        .iter()
        .enumerate()
        .map(|(j, v)| parse_state(v, &format!("{behavior_path}/states/{j}")))
        .collect::<Result<_>>()?;
    Ok(SubjectDefinition {
        sid: string(map, path, "sid")?,
        name: string(map, path, "name")?,
        can_be_started: boolean(map, path, "can_be_started")?,
        behavior: BehaviorGraph { start_state: string(behavior, &behavior_path, "start_state")?, states },
    })
}

const COMMON: [&str; 4] = ["id", "kind", "name", "is_end"];

fn parse_state(value: &Value, path: &str) -> Result<State> {
    let raw = value.as_object().ok_or_else(|| ParseError::schema(path, "expected object"))?;
    let kind = string(raw, path, "kind")?;
    let kind = match kind.as_str() {
        "function" => {
            let map = object(
                value,
                path,
                &[&COMMON[..], &["read_params", "write_params", "transitions", "refinement"]].concat(),
            )?;
            let transitions = array(map, path, "transitions")?
                .iter()
                .enumerate()
                .map(|(k, v)| {
                    let tpath = format!("{path}/transitions/{k}");
                    let t = object(v, &tpath, &["label", "target"])?;
                    Ok(Transition { label: string(t, &tpath, "label")?, target: string(t, &tpath, "target")? })
                })
                .collect::<Result<_>>()?;
            let refinement = match map.get("refinement") {
                None | Some(Value::Null) => None,
                Some(Value::String(s)) => Some(s.clone()),
                Some(_) => return Err(ParseError::schema(&format!("{path}/refinement"), "expected string or null")),
            };
            StateKind::Function(FunctionState {
                read_params: strings(map, path, "read_params")?,
                write_params: strings(map, path, "write_params")?,
                transitions,
                refinement,
            })
        }
        "send" => {
            let map = object(
                value,
                path,
                &[&COMMON[..], &["read_params", "write_params", "to_subject", "message_type", "sent_params", "target"]]
                    .concat(),
            )?;
            StateKind::Send(SendState {
                read_params: strings(map, path, "read_params")?,
                write_params: strings(map, path, "write_params")?,
                to_subject: string(map, path, "to_subject")?,
                message_type: string(map, path, "message_type")?,
                sent_params: strings(map, path, "sent_params")?,
                target: single_target(map, path)?,
            })
        }
        "receive" => {
            let map = object(value, path, &[&COMMON[..], &["message_types", "target"]].concat())?;
            StateKind::Receive(ReceiveState {
                message_types: strings(map, path, "message_types")?,
                target: single_target(map, path)?,
            })
        }
        other => {
            return Err(ParseError::schema(
                &format!("{path}/kind"),
                format!("unknown state kind {other:?}, expected \"function\", \"send\" or \"receive\""),
            ))
        }
    };
    Ok(State {
        id: string(raw, path, "id")?,
        name: string(raw, path, "name")?,
        is_end: boolean(raw, path, "is_end")?,
        kind,
    })
}

fn single_target(map: &Map<String, Value>, path: &str) -> Result<String> {
    match required(map, path, "target")? {
        Value::String(s) => Ok(s.clone()),
        Value::Array(items) => Err(ParseError::schema(
            &format!("{path}/target"),
            format!("state must have exactly one target, found {}", items.len()),
        )),
        _ => Err(ParseError::schema(&format!("{path}/target"), "expected string")),
    }
}

// --- encoding ---------------------------------------------------------------

fn process_value(p: &ProcessDefinition) -> Value {
    serde_json::json!({
        "pid": p.pid,
        "name": p.name,
        "subjects": p.subjects.iter().map(subject_value).collect::<Vec<_>>(),
    })
}

fn subject_value(s: &SubjectDefinition) -> Value {
    serde_json::json!({
        "sid": s.sid,
        "name": s.name,
        "can_be_started": s.can_be_started,
        "behavior": {
            "start_state": s.behavior.start_state,
            "states": s.behavior.states.iter().map(state_value).collect::<Vec<_>>(),
        },
    })
}

fn state_value(s: &State) -> Value {
    let mut map = Map::new();
    map.insert("id".into(), s.id.clone().into());
    map.insert("kind".into(), s.kind_name().into());
    map.insert("name".into(), s.name.clone().into());
    map.insert("is_end".into(), s.is_end.into());
    match &s.kind {
        StateKind::Function(f) => {
            map.insert("read_params".into(), f.read_params.clone().into());
            map.insert("write_params".into(), f.write_params.clone().into());
            map.insert(
                "transitions".into(),
                f.transitions
                    .iter()
                    .map(|t| serde_json::json!({ "label": t.label, "target": t.target }))
                    .collect::<Vec<_>>()
                    .into(),
            );
            map.insert("refinement".into(), f.refinement.clone().map_or(Value::Null, Value::String));
        }
        StateKind::Send(snd) => {
            map.insert("read_params".into(), snd.read_params.clone().into());
            map.insert("write_params".into(), snd.write_params.clone().into());
            map.insert("to_subject".into(), snd.to_subject.clone().into());
            map.insert("message_type".into(), snd.message_type.clone().into());
            map.insert("sent_params".into(), snd.sent_params.clone().into());
            map.insert("target".into(), snd.target.clone().into());
        }
        StateKind::Receive(r) => {
            map.insert("message_types".into(), r.message_types.clone().into());
            map.insert("target".into(), r.target.clone().into());
        }
    }
    Value::Object(map)
}
