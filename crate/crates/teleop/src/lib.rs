//! Live teleoperation of a trained policy.
//!
//! An operator (human or script) watches the agent through a telemetry
//! stream and re-tasks it with new waypoints while it runs. Commands travel
//! over a simulated link with a configurable one-way delay.
//!
//! [`session`] holds the simulation logic and is usable on its own;
//! [`server`] exposes it over a WebSocket at `/ws`.

pub mod protocol;
pub mod server;
pub mod session;

use thiserror::Error;

pub use protocol::{Command, ServerMessage, Telemetry};
pub use server::{serve, Server, ServerConfig};
pub use session::{Session, SessionConfig};

#[derive(Debug, Error)]
pub enum TeleopError {
    #[error("bad command: {0}")]
    BadCommand(String),
    #[error("invalid session config: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] wayfarer::Error),
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(std::io::Error),
}
