//! Episode mechanics for waypoint following.
//!
//! An episode owns an agent, an ordered goal queue and a clock. The reward is
//! the agent's closing speed toward whichever waypoint is current, minus a
//! small energy penalty. Reaching a waypoint (per-axis box test) advances the
//! queue and extends the deadline by `t_inc`; the episode ends when the clock
//! passes the deadline or the last waypoint is reached.

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::Rng;
use crate::sim::{self, AgentKind, AgentState, DynamicsParams, SimError};

/// Goal used by single-point training.
pub const SINGLE_POINT_GOAL: [f64; 2] = [10.0, 10.0];

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("waypoint count must be at least 1")]
    NoWaypoints,
    #[error("episode already finished ({0:?})")]
    EpisodeDone(DoneReason),
    #[error("non-finite observation entry at index {0}")]
    NonFiniteObservation(usize),
    #[error("noise block must be supplied exactly when the info style is state+noise")]
    NoiseMismatch,
    #[error("invalid episode config: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingPerimeter {
    pub center: [f64; 2],
    pub half_extent: f64,
}

impl Default for TrainingPerimeter {
    fn default() -> Self {
        TrainingPerimeter {
            center: [10.0, 10.0],
            half_extent: 2.5,
        }
    }
}

impl TrainingPerimeter {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        (p[0] - self.center[0]).abs() <= self.half_extent
            && (p[1] - self.center[1]).abs() <= self.half_extent
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoalQueue {
    pub waypoints: Vec<[f64; 2]>,
    pub current_index: usize,
}

impl GoalQueue {
    pub fn new(waypoints: Vec<[f64; 2]>) -> Result<Self, EnvError> {
        if waypoints.is_empty() {
            return Err(EnvError::NoWaypoints);
        }
        Ok(GoalQueue {
            waypoints,
            current_index: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }

    pub fn is_exhausted(&self) -> bool {
        self.current_index >= self.waypoints.len()
    }

    /// The active waypoint; once the queue is exhausted this is the last one.
    pub fn current(&self) -> [f64; 2] {
        let last = self.waypoints.len() - 1;
        self.waypoints[self.current_index.min(last)]
    }

    pub fn next(&self) -> [f64; 2] {
        let last = self.waypoints.len() - 1;
        self.waypoints[(self.current_index + 1).min(last)]
    }

    /// Current and next waypoint, unscaled. The last waypoint is repeated.
    pub fn goal_block(&self) -> [f64; 4] {
        let c = self.current();
        let n = self.next();
        [c[0], c[1], n[0], n[1]]
    }
}

/// Uniform waypoints over the perimeter square.
pub fn sample_waypoints(
    perimeter: &TrainingPerimeter,
    m: usize,
    rng: &mut Rng,
) -> Result<GoalQueue, EnvError> {
    if m == 0 {
        return Err(EnvError::NoWaypoints);
    }
    let [cx, cy] = perimeter.center;
    let h = perimeter.half_extent;
    let waypoints = (0..m)
        .map(|_| {
            [
                rng.random_range(cx - h..=cx + h),
                rng.random_range(cy - h..=cy + h),
            ]
        })
        .collect();
    GoalQueue::new(waypoints)
}

pub fn single_point_queue(m: usize) -> Result<GoalQueue, EnvError> {
    if m == 0 {
        return Err(EnvError::NoWaypoints);
    }
    GoalQueue::new(vec![SINGLE_POINT_GOAL; m])
}

/// Per-axis box test with strict inequalities.
pub fn check_waypoint_hit(pos: [f64; 2], goal: [f64; 2], bx: f64, by: f64) -> bool {
    (pos[0] - goal[0]).abs() < bx && (pos[1] - goal[1]).abs() < by
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    pub w_energy: f64,
    pub hit_bonus: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            w_energy: 0.005,
            hit_bonus: 0.0,
        }
    }
}

/// Closing speed toward `goal` minus the energy penalty, plus the hit bonus.
pub fn reward(
    prev: &AgentState,
    next: &AgentState,
    action: &[f64],
    goal: [f64; 2],
    weights: &RewardWeights,
    dt: f64,
    hit: bool,
) -> f64 {
    let closing = (prev.body.distance_to(goal) - next.body.distance_to(goal)) / dt;
    let energy = weights.w_energy * action.iter().map(|a| a * a).sum::<f64>();
    let bonus = if hit { weights.hit_bonus } else { 0.0 };
    closing - energy + bonus
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InfoStyle {
    StateOnly,
    StateNoise,
    StateGoal,
}

impl InfoStyle {
    pub fn extra_dim(self) -> usize {
        match self {
            InfoStyle::StateOnly => 0,
            InfoStyle::StateNoise | InfoStyle::StateGoal => 4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainingStyle {
    SinglePoint,
    RandomWaypoints,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObservationScale {
    pub pos_scale: f64,
    pub vel_scale: f64,
}

impl Default for ObservationScale {
    fn default() -> Self {
        ObservationScale {
            pos_scale: 0.1,
            vel_scale: 0.3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClockConfig {
    /// Initial allowance (s).
    pub t_ep: f64,
    /// Extension granted per reached waypoint (s).
    pub t_inc: f64,
}

impl Default for ClockConfig {
    fn default() -> Self {
        ClockConfig {
            t_ep: 10.0,
            t_inc: 10.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeConfig {
    pub agent_kind: AgentKind,
    pub training_style: TrainingStyle,
    pub info_style: InfoStyle,
    pub m_waypoints: usize,
    /// Per-axis half-widths of the acceptance box (BX, BY).
    pub boundary: [f64; 2],
    pub perimeter: TrainingPerimeter,
    pub reward: RewardWeights,
    pub clock: ClockConfig,
    pub scale: ObservationScale,
    pub dynamics: DynamicsParams,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            agent_kind: AgentKind::AntProxy,
            training_style: TrainingStyle::RandomWaypoints,
            info_style: InfoStyle::StateGoal,
            m_waypoints: 4,
            boundary: [1.0, 1.0],
            perimeter: TrainingPerimeter::default(),
            reward: RewardWeights::default(),
            clock: ClockConfig::default(),
            scale: ObservationScale::default(),
            dynamics: DynamicsParams::default(),
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |msg: String| Err(EnvError::InvalidConfig(msg));
        if !(self.boundary.iter().all(|b| b.is_finite() && *b > 0.0)) {
            return bad(format!("boundary must be positive, got {:?}", self.boundary));
        }
        if self.m_waypoints == 0 {
            return bad("m_waypoints must be at least 1".into());
        }
        // negated so that NaN is rejected too
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(self.perimeter.half_extent > 0.0) || !self.perimeter.center.iter().all(|c| c.is_finite()) {
            return bad(format!("invalid perimeter {:?}", self.perimeter));
        }
        if !(self.reward.w_energy >= 0.0 && self.reward.hit_bonus >= 0.0) {
            return bad(format!("reward weights must be non-negative, got {:?}", self.reward));
        }
        if !(self.clock.t_ep > 0.0 && self.clock.t_inc >= 0.0) {
            return bad(format!("invalid clock {:?}", self.clock));
        }
        if !(self.scale.pos_scale > 0.0 && self.scale.vel_scale > 0.0) {
            return bad(format!("invalid observation scale {:?}", self.scale));
        }
        self.dynamics.validate()?;
        Ok(())
    }

    pub fn obs_dim(&self) -> usize {
        self.agent_kind.state_obs_dim() + self.info_style.extra_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.agent_kind.action_dim()
    }

    /// Longest possible episode in control steps.
    pub fn max_steps(&self) -> usize {
        let horizon = self.clock.t_ep + self.m_waypoints as f64 * self.clock.t_inc;
        (horizon / self.dynamics.dt).round() as usize
    }
}

/// Observation vector for `state` under `style`. See the crate README for
/// the layout.
pub fn build_observation(
    state: &AgentState,
    goals: &GoalQueue,
    style: InfoStyle,
    noise: Option<&[f64; 4]>,
    scale: &ObservationScale,
) -> Result<Vec<f64>, EnvError> {
    if noise.is_some() != (style == InfoStyle::StateNoise) {
        return Err(EnvError::NoiseMismatch);
    }
    let b = &state.body;
    let (ps, vs) = (scale.pos_scale, scale.vel_scale);
    let mut obs = Vec::with_capacity(state.kind.state_obs_dim() + style.extra_dim());
    match state.kind {
        AgentKind::AntProxy => {
            let j = state
                .joints
                .as_ref()
                .ok_or(SimError::KindMismatch(state.kind))?;
            obs.extend_from_slice(&j.q);
            obs.extend(j.qdot.iter().map(|v| v * vs));
            obs.extend([b.x * ps, b.y * ps, b.z * ps]);
            obs.extend([b.vx * vs, b.vy * vs, b.vz * vs]);
            obs.extend([b.roll, b.pitch, b.yaw]);
        }
        AgentKind::PointMass => {
            obs.extend([b.x * ps, b.y * ps, b.vx * vs, b.vy * vs]);
            obs.extend([b.yaw, b.yaw_rate, 0.0, 0.0, 0.0, 0.0]);
        }
    }
    match style {
        InfoStyle::StateOnly => {}
        InfoStyle::StateNoise => obs.extend_from_slice(noise.expect("checked above")),
        InfoStyle::StateGoal => obs.extend(goals.goal_block().iter().map(|g| g * ps)),
    }
    if let Some(i) = obs.iter().position(|v| !v.is_finite()) {
        return Err(EnvError::NonFiniteObservation(i));
    }
    Ok(obs)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeClock {
    pub t: f64,
    pub deadline: f64,
    pub t_ep: f64,
    pub t_inc: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DoneReason {
    Timeout,
    AllWaypointsReached,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub hit: bool,
    pub done: bool,
    pub done_reason: Option<DoneReason>,
}

/// Gym-style episodic interface used by the trainer.
pub trait Episode {
    fn observation(&self) -> Result<Vec<f64>, EnvError>;
    fn step(&mut self, action: &[f64]) -> Result<StepResult, EnvError>;
    fn waypoints_reached(&self) -> usize {
        0
    }
}

/// Produces fresh episodes. Implemented by [`EpisodeConfig`]; tests plug in
/// toy tasks.
pub trait Task: Sync {
    type Env: Episode;
    fn obs_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn reset(&self, rng: &mut Rng) -> Result<Self::Env, EnvError>;
}

/// One running episode.
#[derive(Clone, Debug)]
pub struct Env {
    config: EpisodeConfig,
    state: AgentState,
    goals: GoalQueue,
    clock: EpisodeClock,
    steps: u64,
    /// Time at which `t` was last re-based (operator retasking).
    t_base: f64,
    noise: Option<[f64; 4]>,
    done: Option<DoneReason>,
    enforce_deadline: bool,
}

impl Env {
    pub fn reset(config: &EpisodeConfig, rng: &mut Rng) -> Result<Env, EnvError> {
        let goals = match config.training_style {
            TrainingStyle::RandomWaypoints => {
                sample_waypoints(&config.perimeter, config.m_waypoints, rng)?
            }
            TrainingStyle::SinglePoint => single_point_queue(config.m_waypoints)?,
        };
        let noise = match config.info_style {
            InfoStyle::StateNoise => Some(std::array::from_fn(|_| rng.random_range(-1.0..=1.0))),
            _ => None,
        };
        Env::build(config, goals, noise)
    }

    /// Episode over a fixed waypoint sequence, as used by evaluation. Noise
    /// for the state+noise style is still drawn from `rng`.
    pub fn with_waypoints(
        config: &EpisodeConfig,
        waypoints: Vec<[f64; 2]>,
        rng: &mut Rng,
    ) -> Result<Env, EnvError> {
        let goals = GoalQueue::new(waypoints)?;
        let noise = match config.info_style {
            InfoStyle::StateNoise => Some(std::array::from_fn(|_| rng.random_range(-1.0..=1.0))),
            _ => None,
        };
        Env::build(config, goals, noise)
    }

    fn build(
        config: &EpisodeConfig,
        goals: GoalQueue,
        noise: Option<[f64; 4]>,
    ) -> Result<Env, EnvError> {
        config.validate()?;
        Ok(Env {
            config: config.clone(),
            state: sim::zero_state(config.agent_kind),
            goals,
            clock: EpisodeClock {
                t: 0.0,
                deadline: config.clock.t_ep,
                t_ep: config.clock.t_ep,
                t_inc: config.clock.t_inc,
            },
            steps: 0,
            t_base: 0.0,
            noise,
            done: None,
            enforce_deadline: true,
        })
    }

    pub fn config(&self) -> &EpisodeConfig {
        &self.config
    }

    pub fn state(&self) -> &AgentState {
        &self.state
    }

    pub fn goals(&self) -> &GoalQueue {
        &self.goals
    }

    pub fn clock(&self) -> &EpisodeClock {
        &self.clock
    }

    pub fn noise(&self) -> Option<&[f64; 4]> {
        self.noise.as_ref()
    }

    pub fn done_reason(&self) -> Option<DoneReason> {
        self.done
    }

    pub fn is_done(&self) -> bool {
        self.done.is_some()
    }

    /// Replaces the goal queue mid-episode. The deadline becomes `t + t_ep`
    /// and the queue restarts at its first waypoint.
    pub fn retask(&mut self, waypoints: Vec<[f64; 2]>) -> Result<(), EnvError> {
        self.goals = GoalQueue::new(waypoints)?;
        self.clock.deadline = self.clock.t + self.clock.t_ep;
        self.t_base = self.clock.t;
        self.done = None;
        Ok(())
    }

    /// When disabled, the episode only ends by reaching every waypoint.
    pub fn set_enforce_deadline(&mut self, enforce: bool) {
        self.enforce_deadline = enforce;
    }

    /// Waypoints reached since the start or the last retask.
    pub fn reached(&self) -> usize {
        self.goals.current_index
    }
}

impl Episode for Env {
    fn observation(&self) -> Result<Vec<f64>, EnvError> {
        build_observation(
            &self.state,
            &self.goals,
            self.config.info_style,
            self.noise.as_ref(),
            &self.config.scale,
        )
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult, EnvError> {
        if let Some(reason) = self.done {
            return Err(EnvError::EpisodeDone(reason));
        }
        let dyn_params = &self.config.dynamics;
        let next = sim::step_dynamics(&self.state, action, dyn_params)?;
        let goal = self.goals.current();
        let [bx, by] = self.config.boundary;
        let hit = check_waypoint_hit(next.body.position(), goal, bx, by);
        let applied: Vec<f64> = action.iter().map(|a| a.clamp(-1.0, 1.0)).collect();
        let r = reward(
            &self.state,
            &next,
            &applied,
            goal,
            &self.config.reward,
            dyn_params.dt,
            hit,
        );

        self.state = next;
        self.steps += 1;
        // step count times dt, so the clock never drifts
        self.clock.t = self.steps as f64 * dyn_params.dt;
        if hit {
            self.goals.current_index += 1;
            self.clock.deadline += self.clock.t_inc;
        }
        if self.goals.is_exhausted() {
            self.done = Some(DoneReason::AllWaypointsReached);
        } else if self.enforce_deadline && self.clock.t > self.clock.deadline {
            self.done = Some(DoneReason::Timeout);
        }

        Ok(StepResult {
            observation: self.observation()?,
            reward: r,
            hit,
            done: self.done.is_some(),
            done_reason: self.done,
        })
    }

    fn waypoints_reached(&self) -> usize {
        self.goals.current_index
    }
}

impl Env {
    /// Time since the last retask (or since reset).
    pub fn segment_time(&self) -> f64 {
        self.clock.t - self.t_base
    }
}

impl Task for EpisodeConfig {
    type Env = Env;

    fn obs_dim(&self) -> usize {
        EpisodeConfig::obs_dim(self)
    }

    fn action_dim(&self) -> usize {
        EpisodeConfig::action_dim(self)
    }

    fn reset(&self, rng: &mut Rng) -> Result<Env, EnvError> {
        Env::reset(self, rng)
    }
}
