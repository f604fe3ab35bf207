//! The simulation side of a teleop session, free of any I/O.
//!
//! Time is counted in simulation ticks (one policy step each). Link delay
//! is converted to ticks, so "delay" always means simulated time: a paused
//! session also freezes commands that are in flight.

use std::collections::VecDeque;
use std::sync::Arc;

use wayfarer::env::{Env, Episode};
use wayfarer::rng::{derive_seed, seeded, stream, Rng};
use wayfarer::Checkpoint;

use crate::protocol::{Command, GoalQueueView, Pose, ServerMessage, Telemetry};
use crate::TeleopError;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SessionConfig {
    /// One-way link delay applied to `set_waypoints` and `reset`.
    pub command_delay_ms: u64,
    /// Telemetry is produced on every k-th tick.
    pub telemetry_every: u64,
    /// Keep the episode deadline after an operator retask.
    pub strict_clock: bool,
    pub seed: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            command_delay_ms: 0,
            telemetry_every: 2,
            strict_clock: false,
            seed: 0,
        }
    }
}

/// Ticks needed to cover `delay_ms` at timestep `dt`.
pub fn delay_in_ticks(delay_ms: u64, dt: f64) -> u64 {
    let ticks = (delay_ms as f64 / 1000.0 / dt - 1e-9).ceil();
    ticks.max(0.0) as u64
}

pub struct Session {
    checkpoint: Arc<Checkpoint>,
    config: SessionConfig,
    delay_ticks: u64,
    env: Env,
    rng: Rng,
    tick: u64,
    paused: bool,
    /// Commands in flight, with the tick at which they land.
    pending: VecDeque<(u64, Command)>,
    /// Set once an operator has given waypoints; episodes then stop being
    /// drawn from the training perimeter.
    operator_waypoints: Option<Vec<[f64; 2]>>,
}

impl Session {
    pub fn new(checkpoint: Arc<Checkpoint>, config: SessionConfig) -> Result<Self, TeleopError> {
        checkpoint.validate()?;
        if config.telemetry_every == 0 {
            return Err(TeleopError::Config("telemetry_every must be at least 1".into()));
        }
        let mut rng = seeded(derive_seed(config.seed, stream::SERVE));
        let env = Env::reset(&checkpoint.episode, &mut rng).map_err(wayfarer::Error::from)?;
        Ok(Session {
            delay_ticks: delay_in_ticks(config.command_delay_ms, checkpoint.episode.dynamics.dt),
            checkpoint,
            config,
            env,
            rng,
            tick: 0,
            paused: false,
            pending: VecDeque::new(),
            operator_waypoints: None,
        })
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn is_paused(&self) -> bool {
        self.paused
    }

    pub fn env(&self) -> &Env {
        &self.env
    }

    pub fn delay_ticks(&self) -> u64 {
        self.delay_ticks
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    pub fn checkpoint(&self) -> &Checkpoint {
        &self.checkpoint
    }

    /// Accepts a command from the link. Pause and resume act at once; the
    /// others are queued for `delay_ticks`.
    pub fn submit(&mut self, command: Command) -> Result<ServerMessage, TeleopError> {
        command.validate()?;
        let name = command.name().to_string();
        let applies_at_tick = match command {
            Command::Pause => {
                self.paused = true;
                self.tick
            }
            Command::Resume => {
                self.paused = false;
                self.tick
            }
            other => {
                let due = self.tick + self.delay_ticks;
                self.pending.push_back((due, other));
                due
            }
        };
        Ok(ServerMessage::Ack {
            command: name,
            applies_at_tick,
        })
    }

    /// Advances one tick unless paused. Returns telemetry on the ticks that
    /// carry it.
    pub fn advance(&mut self) -> Result<Option<Telemetry>, TeleopError> {
        if self.paused {
            return Ok(None);
        }
        while self.pending.front().is_some_and(|(due, _)| *due <= self.tick) {
            let (_, cmd) = self.pending.pop_front().expect("front checked");
            self.apply(cmd)?;
        }
        if self.env.is_done() && self.operator_waypoints.is_none() {
            self.restart()?;
        }
        // an operator session that is done idles until the next command
        if !self.env.is_done() {
            let obs = self.env.observation().map_err(wayfarer::Error::from)?;
            let action = self.checkpoint.model.act_mean(&obs)?;
            self.env.step(&action).map_err(wayfarer::Error::from)?;
        }
        self.tick += 1;
        Ok(self.tick.is_multiple_of(self.config.telemetry_every).then(|| self.snapshot()))
    }

    fn apply(&mut self, cmd: Command) -> Result<(), TeleopError> {
        match cmd {
            Command::SetWaypoints { waypoints } => {
                self.env
                    .retask(waypoints.clone())
                    .map_err(wayfarer::Error::from)?;
                self.env.set_enforce_deadline(self.config.strict_clock);
                self.operator_waypoints = Some(waypoints);
            }
            Command::Reset => self.restart()?,
            Command::Pause | Command::Resume => unreachable!("handled on receipt"),
        }
        Ok(())
    }

    /// New episode from the zero state: over the operator's waypoints if
    /// there are any, otherwise over freshly drawn training waypoints.
    pub fn restart(&mut self) -> Result<(), TeleopError> {
        let episode = &self.checkpoint.episode;
        self.env = match &self.operator_waypoints {
            Some(w) => {
                let mut env = Env::with_waypoints(episode, w.clone(), &mut self.rng)
                    .map_err(wayfarer::Error::from)?;
                env.set_enforce_deadline(self.config.strict_clock);
                env
            }
            None => Env::reset(episode, &mut self.rng).map_err(wayfarer::Error::from)?,
        };
        Ok(())
    }

    pub fn snapshot(&self) -> Telemetry {
        let state = self.env.state();
        let goals = self.env.goals();
        Telemetry {
            tick: self.tick,
            t: self.env.clock().t,
            pose: Pose {
                x: state.body.x,
                y: state.body.y,
                yaw: state.body.yaw,
            },
            joint_angles: state.joints.map(|j| j.q.to_vec()),
            goal_queue: GoalQueueView {
                waypoints: goals.waypoints.clone(),
                current_index: goals.current_index,
            },
            waypoints_reached: self.env.reached(),
            done: self.env.is_done(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use wayfarer::env::EpisodeConfig;
    use wayfarer::sim::{zero_state, AgentKind};
    use wayfarer::trainer::{checkpoint_of, trainer_for};
    use wayfarer::TrainConfig;

    fn checkpoint(agent: AgentKind) -> Arc<Checkpoint> {
        let cfg = TrainConfig {
            episode: EpisodeConfig {
                agent_kind: agent,
                ..EpisodeConfig::default()
            },
            policy_hidden: vec![8],
            value_hidden: vec![4],
            ..TrainConfig::default()
        };
        Arc::new(checkpoint_of(&cfg, &trainer_for(&cfg).unwrap()))
    }

    fn session(delay_ms: u64) -> Session {
        let cfg = SessionConfig {
            command_delay_ms: delay_ms,
            ..SessionConfig::default()
        };
        Session::new(checkpoint(AgentKind::PointMass), cfg).unwrap()
    }

    fn run(s: &mut Session, ticks: usize) -> Vec<Telemetry> {
        (0..ticks).filter_map(|_| s.advance().unwrap()).collect()
    }

    #[test]
    fn delay_conversion() {
        assert_eq!(delay_in_ticks(0, 0.05), 0);
        assert_eq!(delay_in_ticks(2500, 0.05), 50);
        assert_eq!(delay_in_ticks(2501, 0.05), 51);
        assert_eq!(delay_in_ticks(1, 0.05), 1);
        assert_eq!(delay_in_ticks(1000, 0.02), 50);
    }

    #[test]
    fn telemetry_cadence() {
        let mut s = session(0);
        let msgs = run(&mut s, 10);
        let ticks: Vec<u64> = msgs.iter().map(|m| m.tick).collect();
        assert_eq!(ticks, vec![2, 4, 6, 8, 10]);
        assert!(msgs.iter().all(|m| m.joint_angles.is_none()));
    }

    #[test]
    fn ant_telemetry_has_joint_angles() {
        let mut s = Session::new(checkpoint(AgentKind::AntProxy), SessionConfig::default()).unwrap();
        let m = run(&mut s, 2).pop().unwrap();
        assert_eq!(m.joint_angles.unwrap().len(), 8);
    }

    #[test]
    fn retask_rebases_the_deadline() {
        let mut s = session(0);
        run(&mut s, 40);
        let t = s.env().clock().t;
        s.submit(Command::SetWaypoints {
            waypoints: vec![[12.0, 9.0]],
        })
        .unwrap();
        s.advance().unwrap();
        assert_eq!(s.env().goals().waypoints, vec![[12.0, 9.0]]);
        assert_eq!(s.env().goals().current_index, 0);
        assert_eq!(s.env().clock().deadline, t + 10.0);
    }

    #[test]
    fn operator_session_never_times_out() {
        let mut s = session(0);
        s.submit(Command::SetWaypoints {
            waypoints: vec![[500.0, 500.0]],
        })
        .unwrap();
        run(&mut s, 600);
        assert!(!s.env().is_done());
        assert!(s.env().clock().t > 25.0);
    }

    #[test]
    fn strict_clock_keeps_the_deadline() {
        let cfg = SessionConfig {
            strict_clock: true,
            ..SessionConfig::default()
        };
        let mut s = Session::new(checkpoint(AgentKind::PointMass), cfg).unwrap();
        s.submit(Command::SetWaypoints {
            waypoints: vec![[500.0, 500.0]],
        })
        .unwrap();
        let msgs = run(&mut s, 400);
        assert!(msgs.iter().any(|m| m.done));
        // done operator sessions hold still
        let last = msgs.last().unwrap();
        assert!(last.done);
        assert_eq!(last.t, msgs[msgs.len() - 2].t);
    }

    #[test]
    fn commands_wait_for_the_link() {
        let mut s = session(1000);
        run(&mut s, 5);
        let ack = s
            .submit(Command::SetWaypoints {
                waypoints: vec![[3.0, 3.0]],
            })
            .unwrap();
        assert_eq!(
            ack,
            ServerMessage::Ack {
                command: "set_waypoints".into(),
                applies_at_tick: 25
            }
        );
        for _ in 0..=20 {
            assert_ne!(s.env().goals().waypoints, vec![[3.0, 3.0]]);
            s.advance().unwrap();
        }
        // landed before the step at tick 25, a full second of sim time later
        assert_eq!(s.env().goals().waypoints, vec![[3.0, 3.0]]);
    }

    #[test]
    fn last_writer_wins() {
        let mut s = session(500);
        for w in [[1.0, 1.0], [2.0, 2.0]] {
            s.submit(Command::SetWaypoints { waypoints: vec![w] }).unwrap();
        }
        run(&mut s, 11);
        assert_eq!(s.env().goals().waypoints, vec![[2.0, 2.0]]);
        assert_eq!(s.pending(), 0);
    }

    #[test]
    fn pause_freezes_time_and_commands() {
        let mut s = session(100);
        let before = run(&mut s, 6);
        s.submit(Command::Pause).unwrap();
        s.submit(Command::SetWaypoints {
            waypoints: vec![[4.0, 4.0]],
        })
        .unwrap();
        let frozen = s.snapshot();
        assert!(run(&mut s, 50).is_empty());
        assert_eq!(s.snapshot(), frozen);
        s.submit(Command::Resume).unwrap();
        let after = run(&mut s, 6);
        // no gaps in the tick numbering
        let ticks: Vec<u64> = before.iter().chain(&after).map(|m| m.tick).collect();
        assert_eq!(ticks, (1..=6).map(|i| 2 * i).collect::<Vec<_>>());
        assert_eq!(after.last().unwrap().goal_queue.waypoints, vec![[4.0, 4.0]]);
    }

    #[test]
    fn reset_returns_to_zero_state() {
        let mut s = session(0);
        run(&mut s, 30);
        assert_ne!(s.env().state(), &zero_state(AgentKind::PointMass));
        s.submit(Command::Reset).unwrap();
        s.advance().unwrap();
        // applied before this tick's step
        assert_eq!(s.env().clock().t, 0.05);
        s.restart().unwrap();
        assert_eq!(s.env().state(), &zero_state(AgentKind::PointMass));
    }

    #[test]
    fn autonomous_episodes_restart() {
        let mut s = session(0);
        let msgs = run(&mut s, 500);
        // the untrained policy times out at 201 steps and starts over
        assert!(msgs.iter().any(|m| m.t < 1.0 && m.tick > 200));
        assert!(msgs.windows(2).all(|w| w[1].tick > w[0].tick));
    }

    #[test]
    fn serving_leaves_the_checkpoint_alone() {
        let ckpt = checkpoint(AgentKind::AntProxy);
        let before = ckpt.to_json().unwrap();
        let mut s = Session::new(ckpt.clone(), SessionConfig::default()).unwrap();
        run(&mut s, 100);
        assert_eq!(s.checkpoint().to_json().unwrap(), before);
    }

    #[test]
    fn rejects_empty_waypoints() {
        let mut s = session(0);
        assert!(s
            .submit(Command::SetWaypoints { waypoints: vec![] })
            .is_err());
        assert_eq!(s.pending(), 0);
    }
}
