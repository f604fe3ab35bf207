//! Goal-conditioned locomotion training and evaluation.
//!
//! An agent (an eight-joint legged surrogate or a point mass) learns to walk
//! to waypoints. Training draws fresh random waypoints every episode and ties
//! the reward to whichever waypoint is currently active; the policy sees the
//! current and next waypoint in its observation.
//!
//! * [`sim`]: surrogate dynamics
//! * [`env`]: episode mechanics, reward, observation layout
//! * [`nn`]: MLP with backprop and a Gaussian action head
//! * [`trainer`]: advantage policy gradient over the five policy variants
//! * [`eval`]: test cases, success ratios, trajectory export
//! * [`checkpoint`], [`run`]: persisted documents

pub mod checkpoint;
pub mod env;
pub mod error;
pub mod eval;
pub mod nn;
pub mod optim;
pub mod par;
pub mod rng;
pub mod run;
pub mod sim;
pub mod trainer;

pub use checkpoint::Checkpoint;
pub use env::{Env, Episode, EpisodeConfig, InfoStyle, Task, TrainingStyle};
pub use error::{Error, Result};
pub use sim::AgentKind;
pub use trainer::{train, PolicyVariant, TrainConfig};
