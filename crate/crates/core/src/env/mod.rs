//! Continuous-state, continuous-action environments with binary safety
//! costs, plus the rollout data model shared by every abstraction stage.
//!
//! Both environments drive a planar double-integrator point mass with
//! explicit Euler at a fixed timestep, so every quantity is analytically
//! checkable. Costs are indicators in {0, 1}: crossing a boundary
//! (`point-circle`) or standing inside a hazard disk (`hazard-goal`).

mod hazard_goal;
mod point_circle;

pub use hazard_goal::{HazardGoal, HazardGoalConfig};
pub use point_circle::{PointCircle, PointCircleConfig};

use std::collections::VecDeque;

use crate::{Error, Result};

pub const DT: f64 = 0.1;

/// One observed timestep: (state, action, next state, reward, cost).
#[derive(Debug, Clone, PartialEq)]
pub struct DataSample {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub cost: f64,
}

impl DataSample {
    pub fn new(
        state: Vec<f64>,
        action: Vec<f64>,
        next_state: Vec<f64>,
        reward: f64,
        cost: f64,
    ) -> DataSample {
        assert!(cost >= 0.0, "cost must be non-negative");
        DataSample {
            state,
            action,
            next_state,
            reward,
            cost,
        }
    }
}

/// Bounded FIFO sample store; eviction removes the oldest entry first.
#[derive(Debug, Clone)]
pub struct Dataset {
    samples: VecDeque<DataSample>,
    capacity: usize,
}

impl Dataset {
    pub fn new(capacity: usize) -> Dataset {
        assert!(capacity > 0, "capacity must be positive");
        Dataset {
            samples: VecDeque::new(),
            capacity,
        }
    }

    pub fn push(&mut self, sample: DataSample) {
        if self.samples.len() == self.capacity {
            self.samples.pop_front();
        }
        self.samples.push_back(sample);
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &DataSample> {
        self.samples.iter()
    }

    pub fn get(&self, i: usize) -> &DataSample {
        &self.samples[i]
    }
}

/// Static description of an environment.
#[derive(Debug, Clone)]
pub struct EnvSpec {
    pub name: &'static str,
    pub n_s: usize,
    pub n_a: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    pub horizon: usize,
    pub discount: f64,
}

impl EnvSpec {
    pub fn clamp_action(&self, action: &[f64]) -> (Vec<f64>, bool) {
        let mut clamped = false;
        let out = action
            .iter()
            .enumerate()
            .map(|(i, &a)| {
                let c = a.clamp(self.action_low[i], self.action_high[i]);
                if c != a {
                    clamped = true;
                }
                c
            })
            .collect();
        (out, clamped)
    }
}

/// Physical state of the planar point mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointState {
    pub pos: [f64; 2],
    pub vel: [f64; 2],
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub cost: f64,
    pub done: bool,
    /// The action was outside bounds and got clamped.
    pub clamped: bool,
}

/// Constrained environment: deterministic dynamics, indicator cost.
///
/// `step` mutates the internal state machine; the pure `transition`,
/// `cost_of` and `observe_state` functions expose the same math for
/// replay-style checks.
pub trait CmdpEnv: Send {
    fn spec(&self) -> &EnvSpec;

    /// Draw the initial state; identical seeds give identical states.
    fn reset(&mut self, seed: u64) -> Vec<f64>;

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome>;

    fn state(&self) -> PointState;

    fn set_state(&mut self, state: PointState);

    /// Deterministic dynamics for an already-clamped action.
    fn transition(&self, state: &PointState, action: &[f64]) -> PointState;

    /// Single-stage cost of executing `action` in `state`.
    fn cost_of(&self, state: &PointState, action: &[f64]) -> f64;

    fn observe_state(&self, state: &PointState) -> Vec<f64>;
}

pub(crate) fn check_finite(what: &'static str, values: &[f64]) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what });
    }
    Ok(())
}

/// Explicit Euler double-integrator step with velocity clamp and arena
/// walls; a wall contact zeroes the velocity component that hit it.
pub(crate) fn double_integrator(
    state: &PointState,
    accel: &[f64],
    v_max: f64,
    arena_half: f64,
) -> PointState {
    let mut pos = [0.0; 2];
    let mut vel = [0.0; 2];
    for i in 0..2 {
        pos[i] = state.pos[i] + DT * state.vel[i];
        vel[i] = (state.vel[i] + DT * accel[i]).clamp(-v_max, v_max);
        if pos[i] > arena_half {
            pos[i] = arena_half;
            vel[i] = 0.0;
        } else if pos[i] < -arena_half {
            pos[i] = -arena_half;
            vel[i] = 0.0;
        }
    }
    PointState { pos, vel }
}

/// Build an environment by name with default parameters.
pub fn make_env(name: &str) -> Result<Box<dyn CmdpEnv>> {
    match name {
        "point-circle" => Ok(Box::new(PointCircle::new(PointCircleConfig::default()))),
        "hazard-goal" => Ok(Box::new(HazardGoal::new(HazardGoalConfig::default()))),
        other => Err(Error::Config(format!("unknown environment '{other}'"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(i: usize) -> DataSample {
        DataSample::new(vec![i as f64], vec![0.0], vec![i as f64 + 1.0], 0.0, 0.0)
    }

    #[test]
    fn dataset_evicts_oldest_first() {
        let mut d = Dataset::new(3);
        for i in 0..4 {
            d.push(sample(i));
        }
        assert_eq!(d.len(), 3);
        let kept: Vec<f64> = d.iter().map(|s| s.state[0]).collect();
        assert_eq!(kept, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn dataset_len_never_exceeds_capacity() {
        let mut d = Dataset::new(10);
        for i in 0..1000 {
            d.push(sample(i));
            assert!(d.len() <= 10);
        }
    }

    #[test]
    #[should_panic]
    fn negative_cost_rejected() {
        let _ = DataSample::new(vec![0.0], vec![0.0], vec![0.0], 0.0, -1.0);
    }
}
