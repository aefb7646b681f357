//! HTTP service and command-line front end for [`quandary`].

pub mod api;
pub mod commands;
pub mod config;
pub mod wiring;

pub use config::Config;
pub use wiring::Backends;
