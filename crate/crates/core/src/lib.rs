#![cfg_attr(not(test), no_std)]
//! GraphFlow core: the GFL workflow language, the diagram model, contract
//! predicates and the verifier, the durable event-sourced runtime, cohort
//! queries, metrics and triggers, and the pilot simulation.
//!
//! Everything here needs only `alloc`. File storage, the CLI and the HTTP
//! service live in the `graphflow` crate.

extern crate alloc;

pub mod cohort;
pub mod diagram;
pub mod gfl;
pub mod pilot;
pub mod predicate;
pub mod runtime;
pub mod verifier;
pub mod store;
pub mod value;
pub mod workspace;

pub use value::{Path, State, Value};
