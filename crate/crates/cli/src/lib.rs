//! Configuration, provider wiring and the HTTP service behind the `bird`
//! binary.

pub mod config;
pub mod server;

pub use config::AppConfig;
