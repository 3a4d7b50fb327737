//! Experiment service for live serial-reproduction chains: an
//! event-sourced [`store`] of chains and participant sessions, the HTTP
//! [`api`] in front of it, and the [`cli`] that launches, exports and
//! analyses batches.

pub mod api;
pub mod cli;
pub mod config;
pub mod store;

pub use config::{Config, ServiceConfig};
pub use store::{
    Assignment, BatchSpec, Clock, Lease, ManualClock, Policy, Receipt, ServiceState, Session,
    SessionEvent, Store, StoreError, StoreEvent, SystemClock, TrialKind,
};
