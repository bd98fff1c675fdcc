//! Annotation backend: serves triplet tasks, records human judgments durably,
//! and exports them as triplet JSONL.

mod http;
mod store;

pub use http::{router, serve, system_clock, AppState, Clock};
pub use store::{
    parse_tasks, read_tasks, Ack, JudgmentRecord, Leased, NextTask, Progress, ServiceError, Store, Task, Undone,
};

/// Lease length when none is configured.
pub const DEFAULT_LEASE_MINUTES: i64 = 10;
