//! Count-based reduced tables. Every builder takes already-reduced index
//! sequences, so the counting logic is testable independently of the
//! embedding pipeline.

use crate::{Error, Result};

fn check_pair(s: usize, a: usize, k_s: usize, n_actions: usize) -> Result<()> {
    if s >= k_s || a >= n_actions {
        return Err(Error::Config(format!(
            "reduced index ({s}, {a}) outside ({k_s}, {n_actions})"
        )));
    }
    Ok(())
}

/// Mean observed cost per (reduced state, reduced action); pairs with no
/// observations get the default cost. Also returns the pair counts.
pub fn build_cost_table(
    reduced_pairs: &[(usize, usize)],
    costs: &[f64],
    k_s: usize,
    n_actions: usize,
    default_cost: f64,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<u64>>)> {
    if reduced_pairs.len() != costs.len() {
        return Err(Error::LengthMismatch {
            left_name: "reduced pairs",
            left: reduced_pairs.len(),
            right_name: "costs",
            right: costs.len(),
        });
    }
    let mut sums = vec![vec![0.0f64; n_actions]; k_s];
    let mut counts = vec![vec![0u64; n_actions]; k_s];
    for (&(s, a), &c) in reduced_pairs.iter().zip(costs.iter()) {
        check_pair(s, a, k_s, n_actions)?;
        sums[s][a] += c;
        counts[s][a] += 1;
    }
    let mut table = vec![vec![0.0f64; n_actions]; k_s];
    for s in 0..k_s {
        for a in 0..n_actions {
            table[s][a] = if counts[s][a] > 0 {
                sums[s][a] / counts[s][a] as f64
            } else {
                default_cost
            };
        }
    }
    Ok((table, counts))
}

/// Empirical transition frequencies per (reduced state, reduced action);
/// unobserved pairs get the uniform row 1/k_s.
pub fn build_transition_table(
    reduced_triples: &[(usize, usize, usize)],
    k_s: usize,
    n_actions: usize,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let mut counts = vec![vec![vec![0u64; k_s]; n_actions]; k_s];
    let mut pair_counts = vec![vec![0u64; n_actions]; k_s];
    for &(s, a, s_next) in reduced_triples {
        check_pair(s, a, k_s, n_actions)?;
        check_pair(s_next, 0, k_s, n_actions.max(1))?;
        counts[s][a][s_next] += 1;
        pair_counts[s][a] += 1;
    }
    let uniform = 1.0 / k_s as f64;
    let mut table = vec![vec![vec![0.0f64; k_s]; n_actions]; k_s];
    for s in 0..k_s {
        for a in 0..n_actions {
            if pair_counts[s][a] > 0 {
                let total = pair_counts[s][a] as f64;
                for j in 0..k_s {
                    table[s][a][j] = counts[s][a][j] as f64 / total;
                }
            } else {
                for j in 0..k_s {
                    table[s][a][j] = uniform;
                }
            }
        }
    }
    Ok(table)
}

/// Empirical action frequencies per reduced state over the last epoch;
/// unvisited states get the uniform row 1/n_actions. Also returns the
/// per-pair epoch counts.
pub fn build_policy_table(
    reduced_pairs: &[(usize, usize)],
    k_s: usize,
    n_actions: usize,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<u64>>)> {
    let mut counts = vec![vec![0u64; n_actions]; k_s];
    for &(s, a) in reduced_pairs {
        check_pair(s, a, k_s, n_actions)?;
        counts[s][a] += 1;
    }
    let uniform = 1.0 / n_actions as f64;
    let mut table = vec![vec![0.0f64; n_actions]; k_s];
    for s in 0..k_s {
        let visits: u64 = counts[s].iter().sum();
        if visits > 0 {
            for a in 0..n_actions {
                table[s][a] = counts[s][a] as f64 / visits as f64;
            }
        } else {
            for a in 0..n_actions {
                table[s][a] = uniform;
            }
        }
    }
    Ok((table, counts))
}
