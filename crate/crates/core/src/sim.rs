//! Engine-free surrogate dynamics.
//!
//! Two agent kinds share one body model:
//!
//! * `AntProxy`: eight hinge joints (four legs, hip + knee). A leg produces
//!   thrust only while its hip sweeps backwards with the knee planted, so
//!   forward motion needs a coordinated oscillating gait and turning needs
//!   the left and right legs to work unevenly.
//! * `PointMass`: a reference agent pushed directly by a 2-D acceleration.
//!
//! The body is planar. Height, roll and pitch never change but are carried in
//! the state so the observation keeps its full layout.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Body height held by the planar model.
pub const BODY_HEIGHT: f64 = 0.75;
/// Joint count of the ant proxy.
pub const NUM_JOINTS: usize = 8;
/// Symmetric joint range in radians.
pub const JOINT_LIMIT: f64 = 1.0;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("action has {got} components, {kind:?} expects {expected}")]
    ActionDim {
        kind: AgentKind,
        expected: usize,
        got: usize,
    },
    #[error("non-finite {what} component at index {index}")]
    NonFinite { what: &'static str, index: usize },
    #[error("agent state does not match its kind ({0:?})")]
    KindMismatch(AgentKind),
    #[error("invalid dynamics parameter `{name}` = {value}")]
    InvalidParam { name: &'static str, value: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AgentKind {
    AntProxy,
    PointMass,
}

impl AgentKind {
    pub fn action_dim(self) -> usize {
        match self {
            AgentKind::AntProxy => NUM_JOINTS,
            AgentKind::PointMass => 2,
        }
    }

    /// Length of the proprioceptive + pose block of the observation.
    pub fn state_obs_dim(self) -> usize {
        match self {
            AgentKind::AntProxy => 25,
            AgentKind::PointMass => 10,
        }
    }
}

impl std::str::FromStr for AgentKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ant-proxy" | "ant" => Ok(AgentKind::AntProxy),
            "point-mass" | "point" => Ok(AgentKind::PointMass),
            other => Err(format!(
                "unknown agent kind `{other}` (expected `ant-proxy` or `point-mass`)"
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BodyState {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
    pub yaw_rate: f64,
}

impl BodyState {
    fn at_rest() -> Self {
        BodyState {
            x: 0.0,
            y: 0.0,
            z: BODY_HEIGHT,
            vx: 0.0,
            vy: 0.0,
            vz: 0.0,
            roll: 0.0,
            pitch: 0.0,
            yaw: 0.0,
            yaw_rate: 0.0,
        }
    }

    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    pub fn speed(&self) -> f64 {
        self.vx.hypot(self.vy)
    }

    /// Planar distance to `goal`.
    pub fn distance_to(&self, goal: [f64; 2]) -> f64 {
        (self.x - goal[0]).hypot(self.y - goal[1])
    }

    fn components(&self) -> [f64; 10] {
        [
            self.x,
            self.y,
            self.z,
            self.vx,
            self.vy,
            self.vz,
            self.roll,
            self.pitch,
            self.yaw,
            self.yaw_rate,
        ]
    }
}

/// Joint angles and rates. Leg `i` owns hip `q[2i]` and knee `q[2i + 1]`;
/// legs 0 and 1 are on the left, legs 2 and 3 on the right.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    pub q: [f64; NUM_JOINTS],
    pub qdot: [f64; NUM_JOINTS],
}

impl JointState {
    /// Swaps left and right legs (0 <-> 2, 1 <-> 3).
    pub fn mirrored(&self) -> JointState {
        let mut out = *self;
        for leg in 0..4 {
            let other = (leg + 2) % 4;
            out.q[2 * leg] = self.q[2 * other];
            out.q[2 * leg + 1] = self.q[2 * other + 1];
            out.qdot[2 * leg] = self.qdot[2 * other];
            out.qdot[2 * leg + 1] = self.qdot[2 * other + 1];
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub kind: AgentKind,
    pub body: BodyState,
    /// Present for the ant proxy only.
    pub joints: Option<JointState>,
}

impl AgentState {
    fn check_finite(&self) -> Result<(), SimError> {
        let body = self.body.components();
        if let Some(index) = body.iter().position(|v| !v.is_finite()) {
            return Err(SimError::NonFinite {
                what: "body state",
                index,
            });
        }
        if let Some(joints) = &self.joints {
            let all = joints.q.iter().chain(joints.qdot.iter());
            if let Some(index) = all.clone().position(|v| !v.is_finite()) {
                return Err(SimError::NonFinite {
                    what: "joint state",
                    index,
                });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicsParams {
    /// Control timestep (s).
    pub dt: f64,
    /// Joint drive gain (rad/s^2 per unit action).
    pub tau_max: f64,
    /// Joint damping (1/s).
    pub k_d: f64,
    /// Stroke thrust gain (N per rad/s).
    pub c_f: f64,
    /// Differential yaw gain (N*m per N).
    pub c_t: f64,
    pub m: f64,
    pub inertia: f64,
    pub k_drag: f64,
    pub k_rot: f64,
    /// Point-mass acceleration gain (m/s^2 per unit action).
    pub a_max: f64,
    /// Width of the knee stance sigmoid (rad).
    pub sigma_stance: f64,
}

impl Default for DynamicsParams {
    fn default() -> Self {
        DynamicsParams {
            dt: 0.05,
            tau_max: 20.0,
            k_d: 4.0,
            c_f: 0.3,
            c_t: 0.2,
            m: 1.0,
            inertia: 0.2,
            k_drag: 0.5,
            k_rot: 0.4,
            a_max: 2.0,
            sigma_stance: 0.2,
        }
    }
}

impl DynamicsParams {
    pub fn validate(&self) -> Result<(), SimError> {
        let fields = [
            ("dt", self.dt),
            ("tau_max", self.tau_max),
            ("k_d", self.k_d),
            ("c_f", self.c_f),
            ("c_t", self.c_t),
            ("m", self.m),
            ("inertia", self.inertia),
            ("k_drag", self.k_drag),
            ("k_rot", self.k_rot),
            ("a_max", self.a_max),
            ("sigma_stance", self.sigma_stance),
        ];
        for (name, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(SimError::InvalidParam { name, value });
            }
        }
        if self.dt > 0.1 {
            return Err(SimError::InvalidParam {
                name: "dt",
                value: self.dt,
            });
        }
        Ok(())
    }
}

pub fn zero_state(kind: AgentKind) -> AgentState {
    AgentState {
        kind,
        body: BodyState::at_rest(),
        joints: match kind {
            AgentKind::AntProxy => Some(JointState::default()),
            AgentKind::PointMass => None,
        },
    }
}

/// Forward thrust and yaw torque produced by the legs.
pub fn stroke_forces(joints: &JointState, params: &DynamicsParams) -> (f64, f64) {
    let mut thrust = [0.0; 4];
    for (leg, t) in thrust.iter_mut().enumerate() {
        let hip_rate = joints.qdot[2 * leg];
        let knee = joints.q[2 * leg + 1];
        let stance = 1.0 / (1.0 + (knee / params.sigma_stance).exp());
        *t = params.c_f * (-hip_rate).max(0.0) * stance;
    }
    let forward = thrust.iter().sum();
    let yaw = params.c_t * ((thrust[2] + thrust[3]) - (thrust[0] + thrust[1]));
    (forward, yaw)
}

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a % (2.0 * PI);
    if w <= -PI {
        w += 2.0 * PI;
    } else if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// Advances `state` by one control step. Actions are clamped to [-1, 1].
pub fn step_dynamics(
    state: &AgentState,
    action: &[f64],
    params: &DynamicsParams,
) -> Result<AgentState, SimError> {
    let expected = state.kind.action_dim();
    if action.len() != expected {
        return Err(SimError::ActionDim {
            kind: state.kind,
            expected,
            got: action.len(),
        });
    }
    if let Some(index) = action.iter().position(|a| !a.is_finite()) {
        return Err(SimError::NonFinite {
            what: "action",
            index,
        });
    }
    state.check_finite()?;

    let dt = params.dt;
    let mut next = *state;
    let body = &mut next.body;

    match state.kind {
        AgentKind::AntProxy => {
            let joints = next
                .joints
                .as_mut()
                .ok_or(SimError::KindMismatch(state.kind))?;
            for (i, a) in action.iter().enumerate() {
                let a = a.clamp(-1.0, 1.0);
                let qddot = params.tau_max * a - params.k_d * joints.qdot[i];
                joints.qdot[i] += qddot * dt;
                joints.q[i] += joints.qdot[i] * dt;
                if joints.q[i].abs() > JOINT_LIMIT {
                    joints.q[i] = joints.q[i].clamp(-JOINT_LIMIT, JOINT_LIMIT);
                    joints.qdot[i] = 0.0;
                }
            }
            let (force, torque) = stroke_forces(joints, params);
            let (sin, cos) = body.yaw.sin_cos();
            let ax = (force * cos - params.k_drag * body.vx) / params.m;
            let ay = (force * sin - params.k_drag * body.vy) / params.m;
            let alpha = (torque - params.k_rot * body.yaw_rate) / params.inertia;
            body.vx += ax * dt;
            body.vy += ay * dt;
            body.yaw_rate += alpha * dt;
            body.x += body.vx * dt;
            body.y += body.vy * dt;
            body.yaw = wrap_angle(body.yaw + body.yaw_rate * dt);
        }
        AgentKind::PointMass => {
            if next.joints.is_some() {
                return Err(SimError::KindMismatch(state.kind));
            }
            let ax = params.a_max * action[0].clamp(-1.0, 1.0) - params.k_drag * body.vx;
            let ay = params.a_max * action[1].clamp(-1.0, 1.0) - params.k_drag * body.vy;
            body.vx += ax * dt;
            body.vy += ay * dt;
            body.x += body.vx * dt;
            body.y += body.vy * dt;
        }
    }
    Ok(next)
}
