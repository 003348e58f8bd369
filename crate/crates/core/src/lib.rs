//! Core of the chainanno annotation platform.
//!
//! - [`protocol`]: parse, validate and compile annotation protocols.
//! - [`machine`]: the compiled, executable state machine.
//! - [`engine`]: per-session execution and server-side trace replay.
//! - [`registry`]: named API functions reachable from `callAPI` states.
//! - [`store`]: persistent tables, assignment policy, import and export.

pub mod engine;
pub mod machine;
pub mod protocol;
pub mod registry;
pub mod store;

pub use engine::{
    AnnotationBundle, Answer, InstanceRef, SavedAnswer, SessionState, SessionStatus, TraceStep,
};
pub use machine::MachineDefinition;
pub use protocol::{compile, parse_protocol, validate, AnnotationProtocol, ValidationReport};
pub use registry::ApiRegistry;
pub use store::Datastore;
