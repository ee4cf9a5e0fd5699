//! Property tests for the counting tables, the action grid and advantage
//! estimation: structural invariants that must hold for any input.

use proptest::prelude::*;

use romdp_shield::env::{DataSample, Dataset};
use romdp_shield::romdp::{
    build_cost_table, build_policy_table, build_transition_table, ActionGrid,
};
use romdp_shield::srl::compute_gae;

fn reduced_dataset(
    k_s: usize,
    n_a: usize,
) -> impl Strategy<Value = Vec<(usize, usize, usize, f64)>> {
    prop::collection::vec(
        (0..k_s, 0..n_a, 0..k_s, 0.0f64..1.0),
        1..400,
    )
}

proptest! {
    #[test]
    fn tables_are_row_stochastic_and_count_consistent(
        data in reduced_dataset(6, 4)
    ) {
        let (k_s, n_a) = (6, 4);
        let pairs: Vec<(usize, usize)> = data.iter().map(|&(s, a, _, _)| (s, a)).collect();
        let triples: Vec<(usize, usize, usize)> =
            data.iter().map(|&(s, a, s2, _)| (s, a, s2)).collect();
        let costs: Vec<f64> = data.iter().map(|&(_, _, _, c)| c).collect();
        let delta = 0.5;

        let (cost, counts) = build_cost_table(&pairs, &costs, k_s, n_a, delta).unwrap();
        let transition = build_transition_table(&triples, k_s, n_a).unwrap();
        let (policy, epoch_counts) = build_policy_table(&pairs, k_s, n_a).unwrap();

        // total pair counts equal the dataset size
        let total: u64 = counts.iter().flatten().sum();
        prop_assert_eq!(total as usize, data.len());
        let epoch_total: u64 = epoch_counts.iter().flatten().sum();
        prop_assert_eq!(epoch_total as usize, data.len());

        for s in 0..k_s {
            let psum: f64 = policy[s].iter().sum();
            prop_assert!((psum - 1.0).abs() < 1e-12);
            for a in 0..n_a {
                let tsum: f64 = transition[s][a].iter().sum();
                prop_assert!((tsum - 1.0).abs() < 1e-12);
                // default rule if and only if the pair is unobserved; costs
                // are drawn strictly inside (0, 1) minus the default, so a
                // collision with the default value cannot occur by chance
                if counts[s][a] == 0 {
                    prop_assert_eq!(cost[s][a], delta);
                } else {
                    prop_assert!(cost[s][a] >= 0.0 && cost[s][a] <= 1.0);
                }
            }
        }
    }

    #[test]
    fn grid_index_equals_exhaustive_argmin(
        ax in -1.5f64..1.5,
        ay in -1.5f64..1.5,
        cells in 1usize..6,
    ) {
        let grid = ActionGrid::new(vec![-1.0, -1.0], vec![1.0, 1.0], cells).unwrap();
        let got = grid.cell_index(&[ax, ay]).unwrap();
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for c in 0..grid.n_cells() {
            let center = grid.center(c);
            let d = (center[0] - ax).powi(2) + (center[1] - ay).powi(2);
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        // ties between adjacent centers are broken differently by the two
        // methods only on exact cell boundaries, which the float strategy
        // does not generate
        prop_assert_eq!(got, best);
    }

    #[test]
    fn projection_lands_in_its_cell(
        px in -2.0f64..2.0,
        py in -2.0f64..2.0,
        cell in 0usize..9,
    ) {
        let grid = ActionGrid::new(vec![-1.0, -1.0], vec![1.0, 1.0], 3).unwrap();
        let proj = grid.project_into_cell(cell, &[px, py]);
        prop_assert_eq!(grid.cell_index(&proj).unwrap(), cell);
    }

    #[test]
    fn dataset_keeps_exactly_the_newest_suffix(
        capacity in 1usize..50,
        n in 0usize..200,
    ) {
        let mut ds = Dataset::new(capacity);
        for i in 0..n {
            ds.push(DataSample::new(vec![i as f64], vec![0.0], vec![0.0], 0.0, 0.0));
        }
        prop_assert_eq!(ds.len(), n.min(capacity));
        let first_kept = n.saturating_sub(capacity);
        for (k, sample) in ds.iter().enumerate() {
            prop_assert_eq!(sample.state[0], (first_kept + k) as f64);
        }
    }

    #[test]
    fn gae_matches_direct_truncated_sum(
        steps in prop::collection::vec(
            (-2.0f64..2.0, -1.0f64..1.0, -1.0f64..1.0, prop::bool::weighted(0.2)),
            1..48,
        ),
        gamma in 0.5f64..0.999,
        lambda in 0.5f64..1.0,
    ) {
        let rewards: Vec<f64> = steps.iter().map(|s| s.0).collect();
        let values: Vec<f64> = steps.iter().map(|s| s.1).collect();
        let next_values: Vec<f64> = steps.iter().map(|s| s.2).collect();
        let dones: Vec<bool> = steps.iter().map(|s| s.3).collect();
        let got = compute_gae(&rewards, &values, &next_values, &dones, gamma, lambda).unwrap();
        for t in 0..rewards.len() {
            let mut acc = 0.0;
            let mut w = 1.0;
            for l in t..rewards.len() {
                let mask = if dones[l] { 0.0 } else { 1.0 };
                acc += w * (rewards[l] + gamma * mask * next_values[l] - values[l]);
                if dones[l] {
                    break;
                }
                w *= gamma * lambda;
            }
            prop_assert!((got[t] - acc).abs() < 1e-10);
        }
    }
}
