//! Wire messages. Every message is one JSON object on its own line.

use serde::{Deserialize, Serialize};

use crate::TeleopError;

/// Operator command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Command {
    SetWaypoints { waypoints: Vec<[f64; 2]> },
    Reset,
    Pause,
    Resume,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::SetWaypoints { .. } => "set_waypoints",
            Command::Reset => "reset",
            Command::Pause => "pause",
            Command::Resume => "resume",
        }
    }

    pub fn validate(&self) -> Result<(), TeleopError> {
        if let Command::SetWaypoints { waypoints } = self {
            if waypoints.is_empty() {
                return Err(TeleopError::BadCommand(
                    "set_waypoints needs at least one waypoint".into(),
                ));
            }
            if let Some(i) = waypoints.iter().position(|w| !w.iter().all(|v| v.is_finite())) {
                return Err(TeleopError::BadCommand(format!(
                    "waypoint {i} has a non-finite coordinate"
                )));
            }
        }
        Ok(())
    }

    /// Parses and validates one line.
    pub fn parse(line: &str) -> Result<Command, TeleopError> {
        let cmd: Command = serde_json::from_str(line.trim())
            .map_err(|e| TeleopError::BadCommand(e.to_string()))?;
        cmd.validate()?;
        Ok(cmd)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoalQueueView {
    pub waypoints: Vec<[f64; 2]>,
    pub current_index: usize,
}

/// Snapshot of the session after a simulation step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Telemetry {
    pub tick: u64,
    /// Episode time in seconds.
    pub t: f64,
    pub pose: Pose,
    /// Ant proxy only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joint_angles: Option<Vec<f64>>,
    pub goal_queue: GoalQueueView,
    pub waypoints_reached: usize,
    pub done: bool,
}

/// Everything the server sends.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    State(Telemetry),
    /// Command accepted; it takes effect before the step at `applies_at_tick`.
    Ack { command: String, applies_at_tick: u64 },
    Error { message: String },
}

impl ServerMessage {
    /// Serialized form including the trailing newline.
    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("server messages always serialize");
        s.push('\n');
        s
    }
}
