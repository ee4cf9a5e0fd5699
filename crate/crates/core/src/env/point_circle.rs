use rand::Rng;

use super::{check_finite, double_integrator, CmdpEnv, EnvSpec, PointState, StepOutcome};
use crate::rng::stream;
use crate::Result;

const RESET_STREAM: u64 = 0x706f696e745f6369; // "point_ci"

/// Circle-following task: reward is tangential speed around a target circle,
/// cost fires when |x| crosses the side boundary.
#[derive(Debug, Clone)]
pub struct PointCircleConfig {
    pub circle_radius: f64,
    pub x_limit: f64,
    pub start_half_width: f64,
    pub v_max: f64,
    pub arena_half: f64,
    pub horizon: usize,
    pub discount: f64,
}

impl Default for PointCircleConfig {
    fn default() -> Self {
        PointCircleConfig {
            circle_radius: 1.0,
            x_limit: 1.2,
            start_half_width: 0.2,
            v_max: 1.0,
            arena_half: 2.0,
            horizon: 400,
            discount: 0.99,
        }
    }
}

pub struct PointCircle {
    cfg: PointCircleConfig,
    spec: EnvSpec,
    state: PointState,
    steps: usize,
}

impl PointCircle {
    pub fn new(cfg: PointCircleConfig) -> PointCircle {
        assert!(cfg.discount > 0.0 && cfg.discount < 1.0);
        assert!(cfg.x_limit < cfg.arena_half);
        let spec = EnvSpec {
            name: "point-circle",
            n_s: 6,
            n_a: 2,
            action_low: vec![-1.0, -1.0],
            action_high: vec![1.0, 1.0],
            horizon: cfg.horizon,
            discount: cfg.discount,
        };
        PointCircle {
            cfg,
            spec,
            state: PointState {
                pos: [0.0, 0.0],
                vel: [0.0, 0.0],
            },
            steps: 0,
        }
    }

    fn reward_of(&self, next: &PointState) -> f64 {
        // Counterclockwise tangential speed, discounted by distance from
        // the target circle.
        let [x, y] = next.pos;
        let [vx, vy] = next.vel;
        let radial = (x * x + y * y).sqrt();
        let tangential = x * vy - y * vx;
        tangential / (self.cfg.circle_radius * (1.0 + (radial - self.cfg.circle_radius).abs()))
    }
}

impl CmdpEnv for PointCircle {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = stream(seed, RESET_STREAM);
        let w = self.cfg.start_half_width;
        self.state = PointState {
            pos: [rng.random_range(-w..=w), rng.random_range(-w..=w)],
            vel: [0.0, 0.0],
        };
        self.steps = 0;
        self.observe_state(&self.state)
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        check_finite("action", action)?;
        check_finite("state", &self.state.pos)?;
        check_finite("state", &self.state.vel)?;
        let (clamped_action, clamped) = self.spec.clamp_action(action);
        let cost = self.cost_of(&self.state, &clamped_action);
        let next = self.transition(&self.state, &clamped_action);
        let reward = self.reward_of(&next);
        self.state = next;
        self.steps += 1;
        Ok(StepOutcome {
            obs: self.observe_state(&self.state),
            reward,
            cost,
            done: self.steps >= self.cfg.horizon,
            clamped,
        })
    }

    fn state(&self) -> PointState {
        self.state
    }

    fn set_state(&mut self, state: PointState) {
        self.state = state;
    }

    fn transition(&self, state: &PointState, action: &[f64]) -> PointState {
        double_integrator(state, action, self.cfg.v_max, self.cfg.arena_half)
    }

    fn cost_of(&self, state: &PointState, _action: &[f64]) -> f64 {
        if state.pos[0].abs() > self.cfg.x_limit {
            1.0
        } else {
            0.0
        }
    }

    fn observe_state(&self, state: &PointState) -> Vec<f64> {
        vec![
            state.pos[0],
            state.pos[1],
            state.vel[0],
            state.vel[1],
            self.cfg.x_limit - state.pos[0],
            self.cfg.x_limit + state.pos[0],
        ]
    }
}
