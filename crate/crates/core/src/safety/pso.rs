//! Particle swarm minimization over a box. Small and allocation-light: the
//! action-correction path calls this at every corrected timestep.

use rand::Rng;

#[derive(Debug, Clone)]
pub struct PsoConfig {
    pub particles: usize,
    pub iterations: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
}

impl Default for PsoConfig {
    fn default() -> Self {
        PsoConfig {
            particles: 40,
            iterations: 60,
            inertia: 0.7,
            cognitive: 1.5,
            social: 1.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PsoResult {
    pub best_position: Vec<f64>,
    pub best_value: f64,
    /// Best objective among the initial swarm, before any update.
    pub initial_best_value: f64,
    /// Global best value after every iteration; non-increasing.
    pub best_value_history: Vec<f64>,
    /// Final personal-best position of every particle.
    pub personal_best_positions: Vec<Vec<f64>>,
}

/// Minimize `objective` over the box `[low, high]`. The swarm starts at the
/// anchor point plus uniform jitter spanning the box (particle 0 sits on the
/// anchor exactly); velocities clamp to half the box width per dimension.
pub fn minimize<F, R>(
    objective: F,
    low: &[f64],
    high: &[f64],
    anchor: &[f64],
    cfg: &PsoConfig,
    rng: &mut R,
) -> PsoResult
where
    F: Fn(&[f64]) -> f64,
    R: Rng + ?Sized,
{
    let dims = low.len();
    let n = cfg.particles.max(1);
    let v_max: Vec<f64> = (0..dims).map(|d| 0.5 * (high[d] - low[d])).collect();

    let mut positions: Vec<Vec<f64>> = Vec::with_capacity(n);
    for p in 0..n {
        if p == 0 {
            positions.push(
                anchor
                    .iter()
                    .enumerate()
                    .map(|(d, &a)| a.clamp(low[d], high[d]))
                    .collect(),
            );
        } else {
            positions.push(
                (0..dims)
                    .map(|d| {
                        let w = high[d] - low[d];
                        (anchor[d] + rng.random_range(-w..w)).clamp(low[d], high[d])
                    })
                    .collect(),
            );
        }
    }
    let mut velocities = vec![vec![0.0f64; dims]; n];
    let mut pbest = positions.clone();
    let mut pbest_val: Vec<f64> = positions.iter().map(|p| objective(p)).collect();

    let mut gbest_idx = 0;
    for p in 1..n {
        if pbest_val[p] < pbest_val[gbest_idx] {
            gbest_idx = p;
        }
    }
    let mut gbest = pbest[gbest_idx].clone();
    let mut gbest_val = pbest_val[gbest_idx];
    let initial_best_value = gbest_val;

    let mut history = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        for p in 0..n {
            for d in 0..dims {
                let r1: f64 = rng.random();
                let r2: f64 = rng.random();
                let v = cfg.inertia * velocities[p][d]
                    + cfg.cognitive * r1 * (pbest[p][d] - positions[p][d])
                    + cfg.social * r2 * (gbest[d] - positions[p][d]);
                velocities[p][d] = v.clamp(-v_max[d], v_max[d]);
                positions[p][d] = (positions[p][d] + velocities[p][d]).clamp(low[d], high[d]);
            }
            let val = objective(&positions[p]);
            if val < pbest_val[p] {
                pbest_val[p] = val;
                pbest[p].copy_from_slice(&positions[p]);
                if val < gbest_val {
                    gbest_val = val;
                    gbest.copy_from_slice(&positions[p]);
                }
            }
        }
        history.push(gbest_val);
    }

    PsoResult {
        best_position: gbest,
        best_value: gbest_val,
        initial_best_value,
        best_value_history: history,
        personal_best_positions: pbest,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn quadratic(center: &[f64]) -> impl Fn(&[f64]) -> f64 + '_ {
        move |x: &[f64]| {
            x.iter()
                .zip(center.iter())
                .map(|(a, c)| (a - c) * (a - c))
                .sum()
        }
    }

    #[test]
    fn finds_quadratic_minimum_inside_box() {
        let center = [0.4, -0.3];
        let mut rng = stream(1, 0);
        let res = minimize(
            quadratic(&center),
            &[-1.0, -1.0],
            &[1.0, 1.0],
            &[0.9, 0.9],
            &PsoConfig::default(),
            &mut rng,
        );
        assert!(res.best_value < 1e-4, "best {}", res.best_value);
    }

    #[test]
    fn never_worse_than_initial_swarm_and_monotone() {
        let mut rng = stream(2, 0);
        for trial in 0..20u64 {
            let center = [
                (trial as f64 * 0.37).sin(),
                (trial as f64 * 0.73).cos() * 0.5,
            ];
            let res = minimize(
                quadratic(&center),
                &[-1.0, -1.0],
                &[1.0, 1.0],
                &[0.0, 0.0],
                &PsoConfig::default(),
                &mut rng,
            );
            assert!(res.best_value <= res.initial_best_value);
            for w in res.best_value_history.windows(2) {
                assert!(w[1] <= w[0], "history not monotone: {w:?}");
            }
        }
    }

    #[test]
    fn solution_respects_bounds() {
        let mut rng = stream(3, 0);
        // minimum outside the box pulls toward the edge
        let res = minimize(
            quadratic(&[5.0, 5.0]),
            &[-1.0, -1.0],
            &[1.0, 1.0],
            &[0.0, 0.0],
            &PsoConfig::default(),
            &mut rng,
        );
        for (d, &x) in res.best_position.iter().enumerate() {
            assert!((-1.0..=1.0).contains(&x), "dim {d}: {x}");
        }
        assert!((res.best_position[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn deterministic_under_fixed_seed() {
        let run = |seed| {
            let mut rng = stream(seed, 7);
            minimize(
                quadratic(&[0.1, 0.2]),
                &[-1.0, -1.0],
                &[1.0, 1.0],
                &[0.5, -0.5],
                &PsoConfig::default(),
                &mut rng,
            )
        };
        let a = run(11);
        let b = run(11);
        assert_eq!(a.best_position, b.best_position);
        assert_eq!(a.best_value, b.best_value);
    }
}
