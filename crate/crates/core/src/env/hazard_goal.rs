use rand::Rng;

use super::{check_finite, double_integrator, CmdpEnv, EnvSpec, PointState, StepOutcome};
use crate::rng::stream;
use crate::Result;

const RESET_STREAM: u64 = 0x68617a5f72657365; // "haz_rese"
const LAYOUT_STREAM: u64 = 0x68617a5f6c61796f; // "haz_layo"

pub const LIDAR_BEAMS: usize = 16;

/// Goal-reaching task with hazard disks: reward is progress toward the goal
/// plus a terminal bonus, cost fires while the agent stands inside a hazard.
#[derive(Debug, Clone)]
pub struct HazardGoalConfig {
    pub hazard_count: usize,
    pub hazard_radius: f64,
    /// Seed for the deterministic hazard layout.
    pub layout_seed: u64,
    pub goal_pos: [f64; 2],
    pub goal_radius: f64,
    pub goal_bonus: f64,
    pub start_low: [f64; 2],
    pub start_high: [f64; 2],
    pub lidar_range: f64,
    pub v_max: f64,
    pub arena_half: f64,
    pub horizon: usize,
    pub discount: f64,
}

impl Default for HazardGoalConfig {
    fn default() -> Self {
        HazardGoalConfig {
            hazard_count: 3,
            hazard_radius: 0.4,
            layout_seed: 0,
            goal_pos: [1.5, 1.5],
            goal_radius: 0.3,
            goal_bonus: 10.0,
            start_low: [-1.8, -1.8],
            start_high: [-1.2, -1.2],
            lidar_range: 3.0,
            v_max: 1.0,
            arena_half: 2.0,
            horizon: 500,
            discount: 0.99,
        }
    }
}

pub struct HazardGoal {
    cfg: HazardGoalConfig,
    hazards: Vec<[f64; 2]>,
    spec: EnvSpec,
    state: PointState,
    steps: usize,
}

impl HazardGoal {
    pub fn new(cfg: HazardGoalConfig) -> HazardGoal {
        let hazards = layout_hazards(&cfg);
        HazardGoal::with_hazards(cfg, hazards)
    }

    /// Explicit hazard placement; used by tests and custom layouts.
    pub fn with_hazards(cfg: HazardGoalConfig, hazards: Vec<[f64; 2]>) -> HazardGoal {
        assert!(cfg.discount > 0.0 && cfg.discount < 1.0);
        let spec = EnvSpec {
            name: "hazard-goal",
            n_s: 6 + LIDAR_BEAMS,
            n_a: 2,
            action_low: vec![-1.0, -1.0],
            action_high: vec![1.0, 1.0],
            horizon: cfg.horizon,
            discount: cfg.discount,
        };
        HazardGoal {
            cfg,
            hazards,
            spec,
            state: PointState {
                pos: [0.0, 0.0],
                vel: [0.0, 0.0],
            },
            steps: 0,
        }
    }

    pub fn hazards(&self) -> &[[f64; 2]] {
        &self.hazards
    }

    pub fn config(&self) -> &HazardGoalConfig {
        &self.cfg
    }

    fn goal_distance(&self, pos: &[f64; 2]) -> f64 {
        let dx = pos[0] - self.cfg.goal_pos[0];
        let dy = pos[1] - self.cfg.goal_pos[1];
        (dx * dx + dy * dy).sqrt()
    }

    fn at_goal(&self, pos: &[f64; 2]) -> bool {
        self.goal_distance(pos) <= self.cfg.goal_radius
    }

    fn lidar(&self, pos: &[f64; 2]) -> Vec<f64> {
        let mut readings = Vec::with_capacity(LIDAR_BEAMS);
        for k in 0..LIDAR_BEAMS {
            let theta = 2.0 * std::f64::consts::PI * k as f64 / LIDAR_BEAMS as f64;
            let dir = [theta.cos(), theta.sin()];
            let mut best = self.cfg.lidar_range;
            for h in &self.hazards {
                if let Some(t) = ray_circle_hit(pos, &dir, h, self.cfg.hazard_radius) {
                    if t < best {
                        best = t;
                    }
                }
            }
            readings.push(best);
        }
        readings
    }
}

/// First non-negative intersection of the ray `p + t d` with a circle.
fn ray_circle_hit(p: &[f64; 2], d: &[f64; 2], center: &[f64; 2], radius: f64) -> Option<f64> {
    let ox = p[0] - center[0];
    let oy = p[1] - center[1];
    // |d| = 1, so a = 1
    let b = 2.0 * (ox * d[0] + oy * d[1]);
    let c = ox * ox + oy * oy - radius * radius;
    let disc = b * b - 4.0 * c;
    if disc < 0.0 {
        return None;
    }
    let sqrt_disc = disc.sqrt();
    let t1 = (-b - sqrt_disc) / 2.0;
    let t2 = (-b + sqrt_disc) / 2.0;
    if t2 < 0.0 {
        None
    } else {
        Some(t1.max(0.0))
    }
}

fn layout_hazards(cfg: &HazardGoalConfig) -> Vec<[f64; 2]> {
    let mut rng = stream(cfg.layout_seed, LAYOUT_STREAM);
    let mut hazards: Vec<[f64; 2]> = Vec::new();
    let start_center = [
        0.5 * (cfg.start_low[0] + cfg.start_high[0]),
        0.5 * (cfg.start_low[1] + cfg.start_high[1]),
    ];
    let start_clear = cfg.hazard_radius
        + 0.5 * (cfg.start_high[0] - cfg.start_low[0]).hypot(cfg.start_high[1] - cfg.start_low[1])
        + 0.1;
    let goal_clear = cfg.hazard_radius + cfg.goal_radius + 0.1;
    let mut guard = 0;
    while hazards.len() < cfg.hazard_count {
        guard += 1;
        assert!(guard < 100_000, "hazard layout failed; relax parameters");
        let cand = [rng.random_range(-1.0..1.2), rng.random_range(-1.0..1.2)];
        let d_start = (cand[0] - start_center[0]).hypot(cand[1] - start_center[1]);
        let d_goal = (cand[0] - cfg.goal_pos[0]).hypot(cand[1] - cfg.goal_pos[1]);
        let d_others = hazards
            .iter()
            .map(|h| (cand[0] - h[0]).hypot(cand[1] - h[1]))
            .fold(f64::INFINITY, f64::min);
        if d_start >= start_clear && d_goal >= goal_clear && d_others >= 0.2 {
            hazards.push(cand);
        }
    }
    hazards
}

impl CmdpEnv for HazardGoal {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = stream(seed, RESET_STREAM);
        self.state = PointState {
            pos: [
                rng.random_range(self.cfg.start_low[0]..=self.cfg.start_high[0]),
                rng.random_range(self.cfg.start_low[1]..=self.cfg.start_high[1]),
            ],
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
        let prev_goal_dist = self.goal_distance(&self.state.pos);
        let next = self.transition(&self.state, &clamped_action);
        let new_goal_dist = self.goal_distance(&next.pos);
        let reached = self.at_goal(&next.pos);
        let reward =
            (prev_goal_dist - new_goal_dist) + if reached { self.cfg.goal_bonus } else { 0.0 };
        self.state = next;
        self.steps += 1;
        Ok(StepOutcome {
            obs: self.observe_state(&self.state),
            reward,
            cost,
            done: reached || self.steps >= self.cfg.horizon,
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
        let r2 = self.cfg.hazard_radius * self.cfg.hazard_radius;
        for h in &self.hazards {
            let dx = state.pos[0] - h[0];
            let dy = state.pos[1] - h[1];
            if dx * dx + dy * dy <= r2 {
                return 1.0;
            }
        }
        0.0
    }

    fn observe_state(&self, state: &PointState) -> Vec<f64> {
        let mut obs = Vec::with_capacity(self.spec.n_s);
        obs.extend_from_slice(&state.pos);
        obs.extend_from_slice(&state.vel);
        let gd = self.goal_distance(&state.pos);
        if gd > 1e-12 {
            obs.push((self.cfg.goal_pos[0] - state.pos[0]) / gd);
            obs.push((self.cfg.goal_pos[1] - state.pos[1]) / gd);
        } else {
            obs.push(0.0);
            obs.push(0.0);
        }
        obs.extend(self.lidar(&state.pos));
        obs
    }
}
