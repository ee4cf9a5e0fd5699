//! Averaged value iteration on the reduced model: the backup weighs each
//! reduced action by the empirical behavior policy instead of maximizing,
//! so the result estimates cost-to-go under the current behavior.

use crate::romdp::RomdpModel;
use crate::{Error, Result};

/// Cost-to-go per reduced state under the reduced behavior policy.
#[derive(Debug, Clone)]
pub struct ReducedValueFunction {
    pub values: Vec<f64>,
    pub iterations_run: usize,
    pub final_delta: f64,
}

/// In-place (Gauss-Seidel) sweeps in ascending state order; terminates when
/// the largest per-state change in one sweep drops below `tolerance`.
pub fn value_iteration(
    model: &RomdpModel,
    tolerance: f64,
    max_iters: usize,
) -> Result<ReducedValueFunction> {
    let k_s = model.k_s;
    let n_a = model.n_actions();
    let gamma = model.discount;
    let mut values = vec![0.0f64; k_s];

    let mut sweeps = 0;
    loop {
        let mut delta: f64 = 0.0;
        for s in 0..k_s {
            let current = values[s];
            let mut v = 0.0;
            for a in 0..n_a {
                let p = model.policy[s][a];
                if p == 0.0 {
                    continue;
                }
                let row = &model.transition[s][a];
                let mut future = 0.0;
                for (j, &t) in row.iter().enumerate() {
                    future += t * values[j];
                }
                v += p * (model.cost[s][a] + gamma * future);
            }
            values[s] = v;
            delta = delta.max((current - v).abs());
        }
        sweeps += 1;
        if delta < tolerance {
            return Ok(ReducedValueFunction {
                values,
                iterations_run: sweeps,
                final_delta: delta,
            });
        }
        if sweeps >= max_iters {
            return Err(Error::NotConverged {
                iterations: sweeps,
                last_delta: delta,
                last_values: values,
            });
        }
    }
}
