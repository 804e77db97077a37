//! Subject-oriented process engine: process model, definition documents,
//! durable repository, subject behavior interpreter and the scheduler that
//! hosts subject instances.

pub mod engine;
pub mod event;
pub mod model;
pub mod model_io;
pub mod refinement;
pub mod repository;
pub mod scheduler;
pub mod task;

pub use event::{EventKind, SchedulerEvent};
pub use model::{validate, Bindings, ProcessDefinition, ValidationReport, Violation, ViolationCode};
pub use model_io::{parse_definition, serialize_definition, DefinitionDocument, ParseError};
pub use refinement::{Refinement, RefinementContext, RefinementRegistry};
pub use repository::{RepoError, Repository, RoleAssignment, UserRecord};
pub use scheduler::{Scheduler, SchedulerError, TaskAnswer};
pub use task::{Mid, Piid, Siid, Tid};
