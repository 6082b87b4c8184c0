//! Analytic continuous-control environments. Task families share the
//! dynamics and differ only in reward parameter, so one learned dynamics
//! model can serve every task; dynamics variants (drag halved, actuator
//! disabled) exercise transfer under shifted physics.

use rand::Rng;

use crate::error::{Error, Result};

/// Physical system being controlled.
///
/// Point mass: state `(x, y, vx, vy)`, 2-D force action in `[-1, 1]^2`.
/// Pendulum: state `(cos th, sin th, thdot)`, torque action in `[-2, 2]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Body {
    PointMass,
    Pendulum,
}

impl Body {
    pub fn state_dim(self) -> usize {
        match self {
            Body::PointMass => 4,
            Body::Pendulum => 3,
        }
    }

    pub fn action_dim(self) -> usize {
        match self {
            Body::PointMass => 2,
            Body::Pendulum => 1,
        }
    }

    /// Symmetric per-coordinate action bound.
    pub fn action_limit(self) -> f64 {
        match self {
            Body::PointMass => 1.0,
            Body::Pendulum => 2.0,
        }
    }

    /// Dimension of the initial-state parameter space: raw state for the
    /// point mass, `(theta, thdot)` for the pendulum.
    pub fn natural_dim(self) -> usize {
        match self {
            Body::PointMass => 4,
            Body::Pendulum => 2,
        }
    }

    /// Velocity coordinate the reward functions read: `vx` for the point
    /// mass, angular velocity for the pendulum.
    pub fn longitudinal_velocity(self, state: &[f64]) -> f64 {
        match self {
            Body::PointMass => state[2],
            Body::Pendulum => state[2],
        }
    }

    pub fn control_cost_coef(self) -> f64 {
        match self {
            Body::PointMass => 0.05,
            Body::Pendulum => 0.01,
        }
    }

    fn default_p0(self) -> (Vec<f64>, Vec<f64>) {
        match self {
            Body::PointMass => (
                vec![0.0, 0.0, -0.05, -0.05],
                vec![0.0, 0.0, 0.05, 0.05],
            ),
            Body::Pendulum => (
                vec![-std::f64::consts::PI, -0.5],
                vec![std::f64::consts::PI, 0.5],
            ),
        }
    }
}

/// Concrete physics parameters. The named constructors cover the variants
/// used in experiments; tests may build arbitrary ones directly.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsVariant {
    pub drag: f64,
    pub gains: Vec<f64>,
    pub dt: f64,
}

impl DynamicsVariant {
    pub fn nominal(body: Body) -> Self {
        let drag = match body {
            Body::PointMass => 0.1,
            Body::Pendulum => 0.05,
        };
        Self {
            drag,
            gains: vec![1.0; body.action_dim()],
            dt: 0.05,
        }
    }

    /// Drag coefficient halved.
    pub fn low_friction(body: Body) -> Self {
        let mut v = Self::nominal(body);
        v.drag *= 0.5;
        v
    }

    /// First actuator produces no force.
    pub fn crippled(body: Body) -> Self {
        let mut v = Self::nominal(body);
        v.gains[0] = 0.0;
        v
    }
}

/// Named variant selector, for configs and dataset records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariantKind {
    Nominal,
    LowFriction,
    Crippled,
}

impl VariantKind {
    pub fn build(self, body: Body) -> DynamicsVariant {
        match self {
            VariantKind::Nominal => DynamicsVariant::nominal(body),
            VariantKind::LowFriction => DynamicsVariant::low_friction(body),
            VariantKind::Crippled => DynamicsVariant::crippled(body),
        }
    }

    pub fn id(self) -> u64 {
        match self {
            VariantKind::Nominal => 0,
            VariantKind::LowFriction => 1,
            VariantKind::Crippled => 2,
        }
    }
}

/// Reward family. All families share dynamics; the reward parameter psi is
/// the only thing that distinguishes tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyKind {
    /// r = -|v_long - psi| - coef * |a|^2, psi from an interval.
    GoalVelocity1d,
    /// r = -|v - psi|_1 - coef * |a|^2, psi from a box (point mass only).
    GoalVelocity2d,
    /// r = psi * v_long - coef * |a|^2, psi in {-1, +1}.
    ForwardBackward,
}

impl FamilyKind {
    pub fn psi_dim(self) -> usize {
        match self {
            FamilyKind::GoalVelocity2d => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskFamily {
    pub body: Body,
    pub kind: FamilyKind,
    psi_lo: Vec<f64>,
    psi_hi: Vec<f64>,
}

/// A task is a reward parameter drawn from its family.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub psi: Vec<f64>,
}

impl TaskFamily {
    /// For `ForwardBackward` the bounds are fixed to `{-1, +1}` and the
    /// given interval is ignored.
    pub fn new(body: Body, kind: FamilyKind, psi_lo: Vec<f64>, psi_hi: Vec<f64>) -> Result<Self> {
        if kind == FamilyKind::GoalVelocity2d && body != Body::PointMass {
            return Err(Error::InvalidConfig(
                "goal-velocity-2d requires the point-mass body".into(),
            ));
        }
        let (psi_lo, psi_hi) = if kind == FamilyKind::ForwardBackward {
            (vec![-1.0], vec![1.0])
        } else {
            (psi_lo, psi_hi)
        };
        let dim = kind.psi_dim();
        if psi_lo.len() != dim || psi_hi.len() != dim {
            return Err(Error::InvalidConfig(format!(
                "psi bounds must have dimension {dim}, got {} and {}",
                psi_lo.len(),
                psi_hi.len()
            )));
        }
        if psi_lo.iter().zip(&psi_hi).any(|(l, h)| l > h) {
            return Err(Error::InvalidConfig("psi bounds must satisfy lo <= hi".into()));
        }
        Ok(Self {
            body,
            kind,
            psi_lo,
            psi_hi,
        })
    }

    pub fn psi_bounds(&self) -> (&[f64], &[f64]) {
        (&self.psi_lo, &self.psi_hi)
    }

    pub fn sample_task<R: Rng + ?Sized>(&self, rng: &mut R) -> Task {
        let psi = match self.kind {
            FamilyKind::ForwardBackward => {
                vec![if rng.random_range(0..2) == 0 { -1.0 } else { 1.0 }]
            }
            _ => self
                .psi_lo
                .iter()
                .zip(&self.psi_hi)
                .map(|(&l, &h)| if l == h { l } else { rng.random_range(l..h) })
                .collect(),
        };
        Task { psi }
    }

    pub fn contains(&self, psi: &[f64]) -> bool {
        match self.kind {
            FamilyKind::ForwardBackward => psi.len() == 1 && (psi[0] == -1.0 || psi[0] == 1.0),
            _ => {
                psi.len() == self.psi_lo.len()
                    && psi
                        .iter()
                        .zip(self.psi_lo.iter().zip(&self.psi_hi))
                        .all(|(v, (l, h))| *v >= *l && *v <= *h)
            }
        }
    }
}

/// MDP instance: body, physics, episode length, discount, and the
/// (configurable) uniform initial-state box in natural coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct MdpSpec {
    pub body: Body,
    pub variant: DynamicsVariant,
    pub horizon: usize,
    pub discount: f64,
    p0_lo: Vec<f64>,
    p0_hi: Vec<f64>,
}

impl MdpSpec {
    pub fn new(body: Body, variant: DynamicsVariant, horizon: usize, discount: f64) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidConfig("horizon must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&discount) {
            return Err(Error::InvalidConfig(format!(
                "discount must be in [0, 1), got {discount}"
            )));
        }
        if variant.gains.len() != body.action_dim() {
            return Err(Error::InvalidConfig(format!(
                "variant has {} gains but the body has {} actuators",
                variant.gains.len(),
                body.action_dim()
            )));
        }
        if variant.drag < 0.0 || variant.dt <= 0.0 || variant.gains.iter().any(|&g| !(0.0..=1.0).contains(&g)) {
            return Err(Error::InvalidConfig(
                "variant needs drag >= 0, dt > 0, gains in [0, 1]".into(),
            ));
        }
        let (p0_lo, p0_hi) = body.default_p0();
        Ok(Self {
            body,
            variant,
            horizon,
            discount,
            p0_lo,
            p0_hi,
        })
    }

    /// Overrides the initial-state box; `lo == hi` pins a coordinate, which
    /// tests use to fix starting states exactly.
    pub fn with_p0(mut self, lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let dim = self.body.natural_dim();
        if lo.len() != dim || hi.len() != dim || lo.iter().zip(&hi).any(|(l, h)| l > h) {
            return Err(Error::InvalidConfig(format!(
                "initial-state bounds must be {dim} well-ordered pairs"
            )));
        }
        self.p0_lo = lo;
        self.p0_hi = hi;
        Ok(self)
    }

    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let natural: Vec<f64> = self
            .p0_lo
            .iter()
            .zip(&self.p0_hi)
            .map(|(&l, &h)| if l == h { l } else { rng.random_range(l..h) })
            .collect();
        match self.body {
            Body::PointMass => natural,
            Body::Pendulum => vec![natural[0].cos(), natural[0].sin(), natural[1]],
        }
    }

    /// One deterministic integrator step. The action must already be clipped
    /// to the body's bounds.
    pub fn step(&self, state: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        if state.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "step_dynamics state",
            });
        }
        let v = &self.variant;
        Ok(match self.body {
            Body::PointMass => {
                let vx = state[2] + v.dt * (v.gains[0] * action[0] - v.drag * state[2]);
                let vy = state[3] + v.dt * (v.gains[1] * action[1] - v.drag * state[3]);
                vec![state[0] + v.dt * vx, state[1] + v.dt * vy, vx, vy]
            }
            Body::Pendulum => {
                let theta = state[1].atan2(state[0]);
                let thdot = state[2];
                let acc = -9.8 * theta.sin() - v.drag * thdot + v.gains[0] * action[0];
                let thdot_new = (thdot + v.dt * acc).clamp(-8.0, 8.0);
                let theta_new = theta + v.dt * thdot_new;
                vec![theta_new.cos(), theta_new.sin(), thdot_new]
            }
        })
    }
}

pub fn clip_action(body: Body, action: &[f64]) -> Vec<f64> {
    let lim = body.action_limit();
    action.iter().map(|a| a.clamp(-lim, lim)).collect()
}

/// Reward for taking `action` in `state` under task parameter `psi`.
/// Depends only on observables, so it is computed identically on real and
/// model-generated states.
pub fn reward(family: &TaskFamily, psi: &[f64], state: &[f64], action: &[f64]) -> f64 {
    let coef = family.body.control_cost_coef();
    let cost = coef * action.iter().map(|a| a * a).sum::<f64>();
    match family.kind {
        FamilyKind::GoalVelocity1d => {
            -(family.body.longitudinal_velocity(state) - psi[0]).abs() - cost
        }
        FamilyKind::GoalVelocity2d => {
            -((state[2] - psi[0]).abs() + (state[3] - psi[1]).abs()) - cost
        }
        FamilyKind::ForwardBackward => psi[0] * family.body.longitudinal_velocity(state) - cost,
    }
}

/// One environment step as recorded in datasets.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub t: usize,
}
