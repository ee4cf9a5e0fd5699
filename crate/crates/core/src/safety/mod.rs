//! The safety layer proper: proximity-constrained action correction under
//! the reduced-model cost constraints, dataset lifecycle, and the
//! hysteresis rule that turns the layer off once the learned cost critic
//! is accurate.
//!
//! Both constraints depend on a candidate action only through its grid
//! cell, so the correction precomputes the per-cell constraint values once
//! per query, runs the swarm search on the penalized objective, and then
//! refines the answer with exact box projections of the proposal onto the
//! candidate cells.

mod pso;

pub use pso::{minimize as pso_minimize, PsoConfig, PsoResult};

use crate::env::{DataSample, Dataset};
use crate::planner::ReducedValueFunction;
use crate::rng::stream;
use crate::romdp::RomdpModel;
use crate::{Error, Result};

/// Penalty weight for constraint violations in the infeasible fallback.
pub const VIOLATION_PENALTY: f64 = 1e3;

/// One action-correction query against a built model.
pub struct CorrectionProblem<'a> {
    pub model: &'a RomdpModel,
    pub values: &'a ReducedValueFunction,
    /// Reduced index of the current state, computed once per timestep.
    pub reduced_state: usize,
    /// The policy's proposed action, already inside the action bounds.
    pub proposed: Vec<f64>,
    /// Immediate single-stage cost limit.
    pub immediate_limit: f64,
    /// Future (cost-to-go) limit.
    pub future_limit: f64,
    pub discount: f64,
}

impl<'a> CorrectionProblem<'a> {
    pub fn new(
        model: &'a RomdpModel,
        values: &'a ReducedValueFunction,
        reduced_state: usize,
        proposed: Vec<f64>,
        immediate_limit: f64,
        future_limit: f64,
    ) -> CorrectionProblem<'a> {
        CorrectionProblem {
            model,
            values,
            reduced_state,
            proposed,
            immediate_limit,
            future_limit,
            discount: model.discount,
        }
    }

    /// Both constraint left-hand sides for every reduced action of the
    /// current state.
    fn cell_constraints(&self) -> Vec<ConstraintEval> {
        let s = self.reduced_state;
        let n_a = self.model.n_actions();
        let mut out = Vec::with_capacity(n_a);
        for a in 0..n_a {
            let immediate = self.model.cost[s][a];
            let mut tail = 0.0;
            for (j, &t) in self.model.transition[s][a].iter().enumerate() {
                tail += t * self.values.values[j];
            }
            out.push(ConstraintEval {
                immediate,
                future: immediate + self.discount * tail,
            });
        }
        out
    }
}

/// Left-hand sides of the two safety constraints for one candidate action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintEval {
    /// Estimated single-stage cost of the (state, action) cell.
    pub immediate: f64,
    /// Estimated cost-to-go: immediate plus discounted expected value of
    /// the successor reduced state.
    pub future: f64,
}

impl ConstraintEval {
    pub fn feasible(&self, immediate_limit: f64, future_limit: f64) -> bool {
        self.immediate <= immediate_limit && self.future <= future_limit
    }

    fn violation(&self, immediate_limit: f64, future_limit: f64) -> f64 {
        (self.immediate - immediate_limit).max(0.0) + (self.future - future_limit).max(0.0)
    }
}

/// Evaluate both constraints for a candidate action.
pub fn constraint_eval(problem: &CorrectionProblem, action: &[f64]) -> Result<ConstraintEval> {
    let cell = problem.model.abstract_action(action)?;
    Ok(problem.cell_constraints()[cell])
}

/// The corrected action and how it relates to the proposal.
#[derive(Debug, Clone)]
pub struct CorrectionOutcome {
    pub action: Vec<f64>,
    /// Whether the returned action satisfies both constraints.
    pub feasible: bool,
    /// Whether the proposal was replaced.
    pub changed: bool,
    /// Euclidean distance from the proposal to the returned action.
    pub distance: f64,
    pub eval: ConstraintEval,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Find the feasible action nearest to the proposal.
///
/// A feasible proposal is returned unchanged (bit-exact). Otherwise the
/// swarm search runs on `||a - a_t||^2` plus the weighted constraint
/// violation, and a cell-aware refinement replaces the swarm answer with
/// the exact box projection of the proposal onto the best candidate cell;
/// within one cell the constraints are constant, so that projection is the
/// true per-cell optimum. If no cell is feasible, the least-violating
/// action is returned with the `feasible` flag cleared.
pub fn correct_action(
    problem: &CorrectionProblem,
    pso_cfg: &PsoConfig,
    seed: u64,
) -> Result<CorrectionOutcome> {
    if problem.proposed.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "proposed action",
        });
    }
    let grid = &problem.model.action_grid;
    let (low, high) = grid.bounds();
    let proposed: Vec<f64> = problem
        .proposed
        .iter()
        .enumerate()
        .map(|(d, &a)| a.clamp(low[d], high[d]))
        .collect();

    let cells = problem.cell_constraints();
    let (d_s, d) = (problem.immediate_limit, problem.future_limit);

    // Short-circuit: keep a feasible proposal exactly.
    let own_cell = grid.cell_index(&proposed)?;
    if cells[own_cell].feasible(d_s, d) {
        return Ok(CorrectionOutcome {
            action: problem.proposed.clone(),
            feasible: true,
            changed: false,
            distance: 0.0,
            eval: cells[own_cell],
        });
    }

    let penalized = |a: &[f64]| -> f64 {
        let cell = grid
            .cell_index(a)
            .expect("swarm candidates stay inside bounds");
        sq_dist(a, &proposed) + VIOLATION_PENALTY * cells[cell].violation(d_s, d)
    };
    let mut rng = stream(seed, 0x70736f5f636f7272); // "pso_corr"
    let swarm = pso_minimize(&penalized, low, high, &proposed, pso_cfg, &mut rng);

    // Cell-aware refinement: project the proposal onto every cell the swarm
    // identified, plus every cell outright (the grid is small by
    // construction), and keep the best feasible projection.
    let mut best_feasible: Option<(f64, usize, Vec<f64>)> = None;
    let mut best_penalized = (swarm.best_value, swarm.best_position.clone());
    for (cell, eval) in cells.iter().enumerate() {
        let proj = grid.project_into_cell(cell, &proposed);
        let dist2 = sq_dist(&proj, &proposed);
        if eval.feasible(d_s, d) {
            if best_feasible.as_ref().map_or(true, |(b, _, _)| dist2 < *b) {
                best_feasible = Some((dist2, cell, proj.clone()));
            }
        }
        let pen = dist2 + VIOLATION_PENALTY * eval.violation(d_s, d);
        if pen < best_penalized.0 {
            best_penalized = (pen, proj);
        }
    }

    let (action, feasible) = match best_feasible {
        Some((_, _, proj)) => (proj, true),
        None => (best_penalized.1, false),
    };
    let eval = constraint_eval(problem, &action)?;
    let distance = sq_dist(&action, &proposed).sqrt();
    Ok(CorrectionOutcome {
        action,
        feasible,
        changed: true,
        distance,
        eval,
    })
}

/// Append a fresh sample to both the persistent dataset and the epoch
/// subset. The persistent store evicts its oldest entry at capacity.
pub fn record_sample(data: &mut Dataset, epoch_data: &mut Vec<DataSample>, sample: DataSample) {
    epoch_data.push(sample.clone());
    data.push(sample);
}

/// Epoch rollover: only the epoch subset is dropped.
pub fn end_epoch(epoch_data: &mut Vec<DataSample>) {
    epoch_data.clear();
}

/// Hysteresis switch for the safety layer, driven by the cost critic's
/// fitting loss. Deactivates below the lower threshold, reactivates above
/// the upper one; the gap between them is the redundancy buffer.
#[derive(Debug, Clone)]
pub struct ActivationState {
    pub active: bool,
    pub deactivate_threshold: f64,
    pub reactivate_threshold: f64,
    pub last_loss: Option<f64>,
    pub deactivations: u64,
    pub reactivations: u64,
}

impl ActivationState {
    pub fn new(deactivate_threshold: f64, reactivate_threshold: f64) -> Result<ActivationState> {
        if !(reactivate_threshold > deactivate_threshold) {
            return Err(Error::Config(format!(
                "reactivate threshold {reactivate_threshold} must exceed deactivate threshold {deactivate_threshold}"
            )));
        }
        Ok(ActivationState {
            active: true,
            deactivate_threshold,
            reactivate_threshold,
            last_loss: None,
            deactivations: 0,
            reactivations: 0,
        })
    }

    /// Start (and stay) inactive regardless of losses; the transparent
    /// wrapper mode.
    pub fn forced_inactive(mut self) -> ActivationState {
        self.active = false;
        self.deactivate_threshold = f64::NEG_INFINITY;
        self.reactivate_threshold = f64::INFINITY;
        self
    }

    pub fn update(&mut self, vc_loss: f64) -> Result<()> {
        if !vc_loss.is_finite() {
            return Err(Error::NonFinite {
                what: "cost critic loss",
            });
        }
        if self.active && vc_loss < self.deactivate_threshold {
            self.active = false;
            self.deactivations += 1;
        } else if !self.active && vc_loss > self.reactivate_threshold {
            self.active = true;
            self.reactivations += 1;
        }
        self.last_loss = Some(vc_loss);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::test_support::random_romdp;
    use crate::planner::value_iteration;
    use crate::rng::stream as rng_stream;
    use crate::romdp::{model_from_reduced, ActionGrid, RomdpModel};
    use rand::Rng;

    /// The worked five-sample fixture over 3 states x 2 actions, with a
    /// 1-D two-cell action grid standing in for the reduced action space.
    fn fixture_model() -> RomdpModel {
        let pairs = vec![(0, 0), (0, 0), (1, 0), (1, 1), (2, 1)];
        let triples = vec![(0, 0, 0), (0, 0, 1), (1, 0, 1), (1, 1, 2), (2, 1, 0)];
        let costs = vec![0.25, 0.75, 1.0, 0.0, 0.5];
        let grid = ActionGrid::new(vec![0.0], vec![1.0], 2).unwrap();
        model_from_reduced(&pairs, &triples, &costs, &pairs, 3, grid, 0.5, 0.99).unwrap()
    }

    #[test]
    fn constraint_eval_matches_hand_assembly_on_fixture() {
        let model = fixture_model();
        let vf = value_iteration(&model, 1e-10, 1_000_000).unwrap();
        let problem = CorrectionProblem::new(&model, &vf, 1, vec![0.1], 0.2, 5.0);
        // action 0.1 falls in the first grid cell: reduced action 0
        let eval = constraint_eval(&problem, &[0.1]).unwrap();
        let c3 = 1.0;
        assert_eq!(eval.immediate, c3);
        // the fixture's transition row for (state 1, action 0) is a point
        // mass on state 1, so the tail is V(1)
        let expected_future = c3 + 0.99 * vf.values[1];
        assert!((eval.future - expected_future).abs() < 1e-12);
    }

    #[test]
    fn unobserved_pair_evaluates_to_default_cost() {
        let model = fixture_model();
        let vf = value_iteration(&model, 1e-10, 1_000_000).unwrap();
        let problem = CorrectionProblem::new(&model, &vf, 2, vec![0.1], 0.2, 5.0);
        // (state 2, action 0) never appears in the fixture
        let eval = constraint_eval(&problem, &[0.1]).unwrap();
        assert_eq!(eval.immediate, model.default_cost);
    }

    #[test]
    fn zero_discount_collapses_future_to_immediate() {
        let model = fixture_model();
        let vf = value_iteration(&model, 1e-10, 1_000_000).unwrap();
        let mut problem = CorrectionProblem::new(&model, &vf, 0, vec![0.9], 0.2, 5.0);
        problem.discount = 0.0;
        let eval = constraint_eval(&problem, &[0.9]).unwrap();
        assert_eq!(eval.future, eval.immediate);
    }

    #[test]
    fn feasible_proposal_returned_bit_exactly() {
        let model = fixture_model();
        let vf = value_iteration(&model, 1e-10, 1_000_000).unwrap();
        // generous limits make everything feasible
        let proposed = vec![0.37219847];
        let problem = CorrectionProblem::new(&model, &vf, 0, proposed.clone(), 10.0, 1000.0);
        let out = correct_action(&problem, &PsoConfig::default(), 0).unwrap();
        assert!(out.feasible);
        assert!(!out.changed);
        assert_eq!(out.action, proposed);
        assert_eq!(out.distance, 0.0);
    }

    /// Dense grid search over the action box; the oracle for correction.
    fn dense_oracle(problem: &CorrectionProblem, resolution: usize) -> (bool, f64, Vec<f64>) {
        let grid = &problem.model.action_grid;
        let (low, high) = grid.bounds();
        let dims = low.len();
        let mut best_feasible: Option<(f64, Vec<f64>)> = None;
        let mut best_penalized: Option<(f64, Vec<f64>)> = None;
        let mut point = vec![0.0f64; dims];
        let mut counter = vec![0usize; dims];
        loop {
            for d in 0..dims {
                point[d] =
                    low[d] + (high[d] - low[d]) * counter[d] as f64 / (resolution - 1) as f64;
            }
            let eval = constraint_eval(problem, &point).unwrap();
            let dist2 = sq_dist(&point, &problem.proposed);
            if eval.feasible(problem.immediate_limit, problem.future_limit)
                && best_feasible.as_ref().map_or(true, |(b, _)| dist2 < *b)
            {
                best_feasible = Some((dist2, point.clone()));
            }
            let pen = dist2
                + VIOLATION_PENALTY * eval.violation(problem.immediate_limit, problem.future_limit);
            if best_penalized.as_ref().map_or(true, |(b, _)| pen < *b) {
                best_penalized = Some((pen, point.clone()));
            }
            // odometer increment
            let mut d = 0;
            loop {
                counter[d] += 1;
                if counter[d] < resolution {
                    break;
                }
                counter[d] = 0;
                d += 1;
                if d == dims {
                    return match best_feasible {
                        Some((v, p)) => (true, v, p),
                        None => {
                            let (v, p) = best_penalized.unwrap();
                            (false, v, p)
                        }
                    };
                }
            }
        }
    }

    #[test]
    fn single_feasible_cell_matches_dense_oracle() {
        // Immediate costs: only cell 4 (center) is cheap.
        let mut model = random_romdp(5, 3, 2, 0.99, &mut rng_stream(8, 0));
        for s in 0..5 {
            for a in 0..9 {
                model.cost[s][a] = if a == 4 { 0.0 } else { 1.0 };
            }
        }
        let vf = value_iteration(&model, 1e-10, 1_000_000).unwrap();
        let problem = CorrectionProblem::new(&model, &vf, 2, vec![-0.9, 0.8], 0.5, 1e9);
        let out = correct_action(&problem, &PsoConfig::default(), 3).unwrap();
        assert!(out.feasible);
        assert_eq!(model.abstract_action(&out.action).unwrap(), 4);
        let (oracle_feasible, oracle_val, _) = dense_oracle(&problem, 200);
        assert!(oracle_feasible);
        let got = sq_dist(&out.action, &problem.proposed);
        assert!(got <= oracle_val + 1e-3, "{got} vs oracle {oracle_val}");
    }

    #[test]
    fn all_infeasible_flags_and_matches_penalty_oracle_cell() {
        let mut model = random_romdp(4, 3, 2, 0.99, &mut rng_stream(9, 0));
        for s in 0..4 {
            for a in 0..9 {
                model.cost[s][a] = 0.3 + 0.1 * (a as f64);
            }
        }
        let vf = value_iteration(&model, 1e-10, 1_000_000).unwrap();
        // immediate limit below every cell cost
        let problem = CorrectionProblem::new(&model, &vf, 1, vec![0.2, -0.1], 0.05, 1e9);
        let out = correct_action(&problem, &PsoConfig::default(), 5).unwrap();
        assert!(!out.feasible);
        assert!(out.changed);
        let (oracle_feasible, _, oracle_point) = dense_oracle(&problem, 200);
        assert!(!oracle_feasible);
        assert_eq!(
            model.abstract_action(&out.action).unwrap(),
            model.abstract_action(&oracle_point).unwrap()
        );
    }

    #[test]
    fn corrected_action_always_within_bounds_and_cell_consistent() {
        let mut rng = rng_stream(10, 0);
        for trial in 0..50u64 {
            let model = random_romdp(6, 3, 2, 0.99, &mut rng);
            let vf = value_iteration(&model, 1e-8, 1_000_000).unwrap();
            let proposed = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let problem = CorrectionProblem::new(
                &model,
                &vf,
                (trial % 6) as usize,
                proposed,
                rng.random_range(0.1..0.9),
                rng.random_range(1.0..50.0),
            );
            let out = correct_action(&problem, &PsoConfig::default(), trial).unwrap();
            let (low, high) = model.action_grid.bounds();
            for d in 0..2 {
                assert!(out.action[d] >= low[d] && out.action[d] <= high[d]);
            }
            // piecewise constancy: the cell center evaluates identically
            let cell = model.abstract_action(&out.action).unwrap();
            let center_eval = constraint_eval(&problem, &model.action_grid.center(cell)).unwrap();
            assert_eq!(center_eval, out.eval);
            assert_eq!(
                out.feasible,
                out.eval
                    .feasible(problem.immediate_limit, problem.future_limit)
            );
        }
    }

    #[test]
    fn fifo_lifecycle_matches_suffix_oracle() {
        let mut data = Dataset::new(10_000);
        let mut epoch = Vec::new();
        let total = 100_000usize;
        for i in 0..total {
            let s = DataSample::new(vec![i as f64], vec![0.0], vec![0.0], 0.0, 0.0);
            record_sample(&mut data, &mut epoch, s);
        }
        assert_eq!(data.len(), 10_000);
        assert_eq!(epoch.len(), total);
        for (k, sample) in data.iter().enumerate() {
            assert_eq!(sample.state[0], (total - 10_000 + k) as f64);
        }
        let before = data.len();
        end_epoch(&mut epoch);
        assert!(epoch.is_empty());
        assert_eq!(data.len(), before);
    }

    #[test]
    fn activation_rules_and_hysteresis_band() {
        let mut st = ActivationState::new(0.05, 0.15).unwrap();
        assert!(st.active);
        st.update(0.025).unwrap(); // half the deactivate threshold
        assert!(!st.active);
        st.update(0.30).unwrap(); // twice the reactivate threshold
        assert!(st.active);
        // inside the band nothing moves, in either direction
        st.update(0.10).unwrap();
        assert!(st.active);
        let mut off = ActivationState::new(0.05, 0.15).unwrap();
        off.update(0.01).unwrap();
        assert!(!off.active);
        off.update(0.10).unwrap();
        assert!(!off.active);
    }

    #[test]
    fn no_single_loss_can_toggle_twice() {
        let mut st = ActivationState::new(0.05, 0.15).unwrap();
        let losses = [0.2, 0.04, 0.06, 0.14, 0.16, 0.01];
        for loss in losses {
            let before = (st.deactivations, st.reactivations);
            st.update(loss).unwrap();
            let after = (st.deactivations, st.reactivations);
            assert!(
                (after.0 - before.0) + (after.1 - before.1) <= 1,
                "loss {loss} toggled twice"
            );
        }
    }

    #[test]
    fn invalid_thresholds_and_losses_rejected() {
        assert!(ActivationState::new(0.15, 0.05).is_err());
        assert!(ActivationState::new(0.1, 0.1).is_err());
        let mut st = ActivationState::new(0.05, 0.15).unwrap();
        assert!(st.update(f64::NAN).is_err());
    }
}
