//! File-backed event store, workspace persistence, CLI and HTTP service.

pub mod cli;
pub mod file_store;
pub mod http;
pub mod ops;
pub mod site;

pub use file_store::{Durability, FileStore};
pub use site::{Clock, Site, SiteError};
