//! Network boundary for the simulated-student dialogue system: JSON over
//! HTTP, server-sent event streams, append-only session logs and the
//! post-session survey.

#![allow(clippy::result_large_err)]

pub mod http;
pub mod hub;
pub mod log;
pub mod replay;
pub mod survey;

pub use hub::{Hub, HubError, HubOptions, Resolution, SessionCreated, Transcript, TurnResult};
