//! Exact O(n^2) t-SNE to two dimensions.
//!
//! Per-point Gaussian bandwidths come from a binary search that matches the
//! conditional-distribution entropy to log2(perplexity); the embedding is
//! optimized by gradient descent on the KL divergence with momentum,
//! per-coordinate gains and an early exaggeration phase.

use crate::rng::{fill_standard_normal, stream};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct TsneOptions {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub momentum_switch_iter: usize,
    pub seed: u64,
}

impl Default for TsneOptions {
    fn default() -> Self {
        TsneOptions {
            perplexity: 30.0,
            iterations: 500,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iters: 100,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch_iter: 250,
            seed: 0,
        }
    }
}

/// Result of a t-SNE run over one batch of states.
#[derive(Debug, Clone)]
pub struct Embedding {
    pub points: Vec<[f64; 2]>,
    /// KL divergence at the last iteration (plain affinities, nats).
    pub final_kl: f64,
    /// KL divergence per iteration, always against the un-exaggerated P.
    pub kl_history: Vec<f64>,
    /// Achieved conditional entropy per point, in bits.
    pub entropy_bits: Vec<f64>,
}

const ENTROPY_TOL_BITS: f64 = 1e-3;
const SEARCH_MAX_ITERS: usize = 200;

pub fn pairwise_squared_distances(states: &[Vec<f64>]) -> Vec<f64> {
    let n = states.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let mut s = 0.0;
            for (a, b) in states[i].iter().zip(states[j].iter()) {
                let diff = a - b;
                s += diff * diff;
            }
            d[i * n + j] = s;
            d[j * n + i] = s;
        }
    }
    d
}

/// Row-stochastic conditional affinities `p(j|i)` whose entropy matches
/// log2(perplexity) within tolerance, plus the achieved entropies.
///
/// Rows where every positive distance is identical have an entropy that does
/// not depend on the bandwidth; those are accepted as-is.
pub fn gaussian_affinities(
    distances: &[f64],
    n: usize,
    perplexity: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let target_bits = perplexity.log2();
    let mut p = vec![0.0; n * n];
    let mut entropies = Vec::with_capacity(n);
    let mut row = vec![0.0; n];

    for i in 0..n {
        let dist_row = &distances[i * n..(i + 1) * n];
        // Shift by the nearest-neighbor distance before exponentiating; the
        // factor cancels after normalization and prevents underflow when the
        // search pushes beta high.
        let d_shift = dist_row
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, &d)| d)
            .fold(f64::INFINITY, f64::min);
        let mut beta = 1.0;
        let mut beta_min = f64::NEG_INFINITY;
        let mut beta_max = f64::INFINITY;
        let mut entropy_bits = 0.0;

        for _ in 0..SEARCH_MAX_ITERS {
            let mut sum = 0.0;
            for j in 0..n {
                row[j] = if j == i {
                    0.0
                } else {
                    (-beta * (dist_row[j] - d_shift)).exp()
                };
                sum += row[j];
            }
            // Shannon entropy in bits of the normalized row. The guard is
            // on the normalized value: a subnormal weight can divide to an
            // exact zero, and 0 * log2(0) would poison the sum.
            let mut h = 0.0;
            if sum > 0.0 {
                for j in 0..n {
                    if j != i {
                        let q = row[j] / sum;
                        if q > 0.0 {
                            h -= q * q.log2();
                        }
                    }
                }
            }
            entropy_bits = h;
            let diff = h - target_bits;
            if diff.abs() < ENTROPY_TOL_BITS {
                break;
            }
            if diff > 0.0 {
                beta_min = beta;
                beta = if beta_max.is_infinite() {
                    beta * 2.0
                } else {
                    0.5 * (beta + beta_max)
                };
            } else {
                beta_max = beta;
                beta = if beta_min.is_infinite() {
                    beta * 0.5
                } else {
                    0.5 * (beta + beta_min)
                };
            }
            // Duplicated points put a floor of log2(#ties) under the row
            // entropy; once beta has raced past any finite bracket the row
            // is already at its limiting tie-uniform distribution.
            if beta_max.is_infinite() && beta > 1e100 {
                break;
            }
        }

        // A row can miss the target legitimately in two ways: every positive
        // distance is identical (entropy constant in beta), or tied nearest
        // neighbors floor the entropy above the target (the bracket never
        // closed from above). Anything else is a genuine search failure.
        let unreachable_floor = entropy_bits > target_bits && beta_max.is_infinite();
        if (entropy_bits - target_bits).abs() >= ENTROPY_TOL_BITS
            && !unreachable_floor
            && !row_is_beta_invariant(dist_row, i)
        {
            return Err(Error::Degenerate {
                why: format!(
                    "bandwidth search failed for point {i}: entropy {entropy_bits} bits vs target {target_bits}"
                ),
            });
        }

        let sum: f64 = row.iter().sum();
        if sum > 0.0 {
            for j in 0..n {
                p[i * n + j] = row[j] / sum;
            }
        }
        entropies.push(entropy_bits);
    }
    Ok((p, entropies))
}

/// Entropy is constant in beta when all positive distances in the row agree.
fn row_is_beta_invariant(dist_row: &[f64], own: usize) -> bool {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (j, &d) in dist_row.iter().enumerate() {
        if j != own {
            lo = lo.min(d);
            hi = hi.max(d);
        }
    }
    hi - lo <= 1e-12 * hi.max(1.0)
}

/// Joint affinities `(p(j|i) + p(i|j)) / 2n`; all entries sum to 1.
pub fn symmetrize(conditional: &mut [f64], n: usize) {
    let scale = 1.0 / (2.0 * n as f64);
    for i in 0..n {
        for j in i + 1..n {
            let s = (conditional[i * n + j] + conditional[j * n + i]) * scale;
            conditional[i * n + j] = s;
            conditional[j * n + i] = s;
        }
        conditional[i * n + i] = 0.0;
    }
}

pub fn tsne(states: &[Vec<f64>], opts: &TsneOptions) -> Result<Embedding> {
    let n = states.len();
    let min_points = (4.0 * opts.perplexity).ceil() as usize;
    if n < min_points.max(2) {
        return Err(Error::PerplexityRange {
            perplexity: opts.perplexity,
            count: n,
        });
    }
    for s in states {
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "tsne input" });
        }
    }

    let mut p = pairwise_squared_distances(states);
    if p.iter().all(|&d| d == 0.0) {
        return Err(Error::Degenerate {
            why: "all pairwise distances are zero".into(),
        });
    }
    let (mut cond, entropies) = gaussian_affinities(&p, n, opts.perplexity)?;
    std::mem::swap(&mut p, &mut cond);
    drop(cond);
    symmetrize(&mut p, n);

    // Embedding state.
    let mut rng = stream(opts.seed, 0x74736e655f696e69); // "tsne_ini"
    let mut y = vec![0.0; n * 2];
    fill_standard_normal(&mut rng, &mut y);
    for v in y.iter_mut() {
        *v *= 1e-4;
    }
    let mut velocity = vec![0.0; n * 2];
    let mut gains = vec![1.0; n * 2];
    let mut grad = vec![0.0; n * 2];
    let mut num = vec![0.0; n * n];
    let mut kl_history = Vec::with_capacity(opts.iterations);

    for iter in 0..opts.iterations {
        let exaggeration = if iter < opts.exaggeration_iters {
            opts.early_exaggeration
        } else {
            1.0
        };

        // Student-t kernel numerators and their total.
        let mut sum_num = 0.0;
        for i in 0..n {
            let (yi0, yi1) = (y[2 * i], y[2 * i + 1]);
            for j in i + 1..n {
                let d0 = yi0 - y[2 * j];
                let d1 = yi1 - y[2 * j + 1];
                let v = 1.0 / (1.0 + d0 * d0 + d1 * d1);
                num[i * n + j] = v;
                num[j * n + i] = v;
                sum_num += 2.0 * v;
            }
            num[i * n + i] = 0.0;
        }
        let inv_sum = 1.0 / sum_num.max(f64::MIN_POSITIVE);

        // KL against the plain affinities, and the gradient.
        let mut kl = 0.0;
        grad.fill(0.0);
        for i in 0..n {
            for j in i + 1..n {
                let pij = p[i * n + j];
                let nu = num[i * n + j];
                let qij = (nu * inv_sum).max(1e-12);
                if pij > 0.0 {
                    kl += 2.0 * pij * (pij / qij).ln();
                }
                let f = 4.0 * (exaggeration * pij - qij) * nu;
                let d0 = y[2 * i] - y[2 * j];
                let d1 = y[2 * i + 1] - y[2 * j + 1];
                grad[2 * i] += f * d0;
                grad[2 * i + 1] += f * d1;
                grad[2 * j] -= f * d0;
                grad[2 * j + 1] -= f * d1;
            }
        }
        kl_history.push(kl);

        let momentum = if iter < opts.momentum_switch_iter {
            opts.initial_momentum
        } else {
            opts.final_momentum
        };
        for k in 0..2 * n {
            gains[k] = if (grad[k] > 0.0) != (velocity[k] > 0.0) {
                gains[k] + 0.2
            } else {
                (gains[k] * 0.8f64).max(0.01)
            };
            velocity[k] = momentum * velocity[k] - opts.learning_rate * gains[k] * grad[k];
            y[k] += velocity[k];
        }
        // Keep the embedding centered.
        let (mut m0, mut m1) = (0.0, 0.0);
        for i in 0..n {
            m0 += y[2 * i];
            m1 += y[2 * i + 1];
        }
        m0 /= n as f64;
        m1 /= n as f64;
        for i in 0..n {
            y[2 * i] -= m0;
            y[2 * i + 1] -= m1;
        }
    }

    let points: Vec<[f64; 2]> = (0..n).map(|i| [y[2 * i], y[2 * i + 1]]).collect();
    if points
        .iter()
        .any(|p| !p[0].is_finite() || !p[1].is_finite())
    {
        return Err(Error::NonFinite { what: "embedding" });
    }
    Ok(Embedding {
        points,
        final_kl: kl_history.last().copied().unwrap_or(0.0),
        kl_history,
        entropy_bits: entropies,
    })
}
