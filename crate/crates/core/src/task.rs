//! Identifiers and task payloads shared by the engine, repository and scheduler.

use std::fmt;

use serde::{Deserialize, Serialize};

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                $name(id.into())
            }

            pub fn generate() -> Self {
                $name(uuid::Uuid::new_v4().to_string())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                $name(s.to_string())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                $name(s)
            }
        }
    };
}

id_type!(
    /// Process instance id.
    Piid
);
id_type!(
    /// Subject instance id.
    Siid
);
id_type!(
    /// Task id.
    Tid
);
id_type!(
    /// Message id.
    Mid
);

/// A parameter shown on a task, with its current value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskParam {
    pub name: String,
    pub value: String,
    pub writable: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKindTag {
    Function,
    Send,
    Receive,
}

impl TaskKindTag {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKindTag::Function => "function",
            TaskKindTag::Send => "send",
            TaskKindTag::Receive => "receive",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "function" => Some(TaskKindTag::Function),
            "send" => Some(TaskKindTag::Send),
            "receive" => Some(TaskKindTag::Receive),
            _ => None,
        }
    }
}

impl fmt::Display for TaskKindTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Kind-specific part of a task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskKind {
    Function { transitions: Vec<String>, params: Vec<TaskParam> },
    Send { to_subject: String, mtype: String, params: Vec<TaskParam> },
    Receive { mtypes: Vec<String> },
}

impl TaskKind {
    pub fn tag(&self) -> TaskKindTag {
        match self {
            TaskKind::Function { .. } => TaskKindTag::Function,
            TaskKind::Send { .. } => TaskKindTag::Send,
            TaskKind::Receive { .. } => TaskKindTag::Receive,
        }
    }
}

/// A task as produced by the engine, before the repository assigns an id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskProto {
    pub name: String,
    pub state_id: String,
    #[serde(flatten)]
    pub kind: TaskKind,
}
