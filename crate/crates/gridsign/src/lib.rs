//! Firmware signing service, device-side verifier CLI and size benchmarks
//! built on [`gridsign_core`].

pub mod bench;
pub mod cli;
pub mod config;
pub mod files;
pub mod http;
pub mod policy;
pub mod service;
pub mod store;

pub use gridsign_core as core;
