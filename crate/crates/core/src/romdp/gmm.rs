//! Full-covariance Gaussian mixture over the 2-D embedding, fit by EM with
//! k-means++ seeding. Classification is the MAP component index.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::stream;
use crate::{Error, Result};

const RIDGE: f64 = 1e-6;
const WEIGHT_FLOOR: f64 = 1e-8;
const EM_TOL: f64 = 1e-4;
const EM_MAX_ITERS: usize = 200;
const LN_2PI: f64 = 1.8378770664093453;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GmmComponent {
    pub mean: [f64; 2],
    /// Symmetric 2x2 covariance, ridge-regularized.
    pub cov: [[f64; 2]; 2],
    pub weight: f64,
}

impl GmmComponent {
    fn log_pdf(&self, p: [f64; 2]) -> f64 {
        let [[a, b], [_, c]] = self.cov;
        let det = a * c - b * b;
        let dx = p[0] - self.mean[0];
        let dy = p[1] - self.mean[1];
        // inverse of [[a, b], [b, c]] scaled by 1/det
        let quad = (c * dx * dx - 2.0 * b * dx * dy + a * dy * dy) / det;
        -LN_2PI - 0.5 * det.ln() - 0.5 * quad
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GmmClassifier {
    components: Vec<GmmComponent>,
    /// Mean log-likelihood after every EM iteration.
    pub log_likelihood_history: Vec<f64>,
    /// Whether any empty component had to be re-seeded during the fit
    /// (re-seeding restarts the likelihood ascent).
    pub reseeded: bool,
}

impl GmmClassifier {
    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[GmmComponent] {
        &self.components
    }

    /// MAP component index in `0..k`.
    pub fn classify(&self, point: [f64; 2]) -> usize {
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for (j, comp) in self.components.iter().enumerate() {
            let score = comp.weight.ln() + comp.log_pdf(point);
            if score > best_score {
                best_score = score;
                best = j;
            }
        }
        best
    }
}

fn kmeans_pp_means<R: Rng + ?Sized>(points: &[[f64; 2]], k: usize, rng: &mut R) -> Vec<[f64; 2]> {
    let n = points.len();
    let mut means = Vec::with_capacity(k);
    means.push(points[rng.random_range(0..n)]);
    let mut d2 = vec![0.0f64; n];
    while means.len() < k {
        let last = *means.last().unwrap();
        let mut total = 0.0;
        for (i, p) in points.iter().enumerate() {
            let d = (p[0] - last[0]).powi(2) + (p[1] - last[1]).powi(2);
            if means.len() == 1 || d < d2[i] {
                d2[i] = d;
            }
            total += d2[i];
        }
        if total <= 0.0 {
            // all remaining mass sits on chosen points; duplicate one
            means.push(points[rng.random_range(0..n)]);
            continue;
        }
        let mut target = rng.random::<f64>() * total;
        let mut chosen = n - 1;
        for (i, &d) in d2.iter().enumerate() {
            target -= d;
            if target <= 0.0 {
                chosen = i;
                break;
            }
        }
        means.push(points[chosen]);
    }
    means
}

fn data_covariance(points: &[[f64; 2]]) -> [[f64; 2]; 2] {
    let n = points.len() as f64;
    let mut mean = [0.0f64; 2];
    for p in points {
        mean[0] += p[0];
        mean[1] += p[1];
    }
    mean[0] /= n;
    mean[1] /= n;
    let mut cov = [[0.0f64; 2]; 2];
    for p in points {
        let dx = p[0] - mean[0];
        let dy = p[1] - mean[1];
        cov[0][0] += dx * dx;
        cov[0][1] += dx * dy;
        cov[1][1] += dy * dy;
    }
    cov[0][0] = cov[0][0] / n + RIDGE;
    cov[0][1] /= n;
    cov[1][0] = cov[0][1];
    cov[1][1] = cov[1][1] / n + RIDGE;
    cov
}

/// EM fit with `k` components; converges on the mean log-likelihood or stops
/// after 200 iterations. Singular covariances are ridge-regularized, never a
/// silent failure; empty components are re-seeded once at the point farthest
/// from every mean.
pub fn fit_gmm(points: &[[f64; 2]], k: usize, seed: u64) -> Result<GmmClassifier> {
    if k == 0 {
        return Err(Error::Config("k_s must be positive".into()));
    }
    if points.len() < k {
        return Err(Error::TooFew {
            what: "gmm points",
            need: k,
            got: points.len(),
        });
    }
    let n = points.len();
    let mut rng = stream(seed, 0x676d6d5f666974); // "gmm_fit"

    let init_cov = data_covariance(points);
    let mut components: Vec<GmmComponent> = kmeans_pp_means(points, k, &mut rng)
        .into_iter()
        .map(|mean| GmmComponent {
            mean,
            cov: init_cov,
            weight: 1.0 / k as f64,
        })
        .collect();

    let mut resp = vec![0.0f64; n * k];
    let mut logs = vec![0.0f64; k];
    let mut history = Vec::new();
    let mut reseeded_components = vec![false; k];
    let mut reseeded_any = false;
    let mut prev_ll = f64::NEG_INFINITY;
    let mut rounds_left = 3;

    'em: loop {
        for _ in 0..EM_MAX_ITERS {
            // E-step with log-sum-exp.
            let mut ll_sum = 0.0;
            for (i, p) in points.iter().enumerate() {
                let mut max = f64::NEG_INFINITY;
                for (j, comp) in components.iter().enumerate() {
                    logs[j] = comp.weight.ln() + comp.log_pdf(*p);
                    max = max.max(logs[j]);
                }
                let mut sum = 0.0;
                for l in logs.iter() {
                    sum += (l - max).exp();
                }
                let lse = max + sum.ln();
                ll_sum += lse;
                for j in 0..k {
                    resp[i * k + j] = (logs[j] - lse).exp();
                }
            }
            let ll = ll_sum / n as f64;
            history.push(ll);

            // M-step.
            let mut empties = Vec::new();
            for j in 0..k {
                let nk: f64 = (0..n).map(|i| resp[i * k + j]).sum();
                if nk < 1e-10 {
                    empties.push(j);
                    continue;
                }
                let mut mean = [0.0f64; 2];
                for (i, p) in points.iter().enumerate() {
                    mean[0] += resp[i * k + j] * p[0];
                    mean[1] += resp[i * k + j] * p[1];
                }
                mean[0] /= nk;
                mean[1] /= nk;
                let mut cov = [[0.0f64; 2]; 2];
                for (i, p) in points.iter().enumerate() {
                    let r = resp[i * k + j];
                    let dx = p[0] - mean[0];
                    let dy = p[1] - mean[1];
                    cov[0][0] += r * dx * dx;
                    cov[0][1] += r * dx * dy;
                    cov[1][1] += r * dy * dy;
                }
                cov[0][0] = cov[0][0] / nk + RIDGE;
                cov[0][1] /= nk;
                cov[1][0] = cov[0][1];
                cov[1][1] = cov[1][1] / nk + RIDGE;
                components[j] = GmmComponent {
                    mean,
                    cov,
                    weight: nk / n as f64,
                };
            }

            if !empties.is_empty() {
                for &j in &empties {
                    if !reseeded_components[j] {
                        reseeded_components[j] = true;
                        reseeded_any = true;
                        // farthest point from all current means
                        let far = points
                            .iter()
                            .enumerate()
                            .max_by(|(_, a), (_, b)| {
                                let da = nearest_mean_d2(&components, **a);
                                let db = nearest_mean_d2(&components, **b);
                                da.total_cmp(&db)
                            })
                            .map(|(i, _)| i)
                            .unwrap();
                        components[j] = GmmComponent {
                            mean: points[far],
                            cov: init_cov,
                            weight: 1.0 / n as f64,
                        };
                    } else {
                        components[j].weight = components[j].weight.max(WEIGHT_FLOOR);
                    }
                }
                normalize_weights(&mut components);
                prev_ll = f64::NEG_INFINITY;
                continue;
            }
            normalize_weights(&mut components);

            if (ll - prev_ll).abs() < EM_TOL {
                break;
            }
            prev_ll = ll;
        }

        // A component can keep soft mass yet never win the MAP argmax; such
        // classification-empty components get the same one-shot re-seed at
        // the farthest point, then the ascent restarts.
        rounds_left -= 1;
        if rounds_left == 0 {
            break 'em;
        }
        let mut map_counts = vec![0usize; k];
        for p in points {
            let mut best = 0;
            let mut best_score = f64::NEG_INFINITY;
            for (j, comp) in components.iter().enumerate() {
                let score = comp.weight.ln() + comp.log_pdf(*p);
                if score > best_score {
                    best_score = score;
                    best = j;
                }
            }
            map_counts[best] += 1;
        }
        let mut fixed_any = false;
        for j in 0..k {
            if map_counts[j] == 0 && !reseeded_components[j] {
                reseeded_components[j] = true;
                reseeded_any = true;
                fixed_any = true;
                let far = points
                    .iter()
                    .enumerate()
                    .max_by(|(_, a), (_, b)| {
                        let da = nearest_mean_d2(&components, **a);
                        let db = nearest_mean_d2(&components, **b);
                        da.total_cmp(&db)
                    })
                    .map(|(i, _)| i)
                    .unwrap();
                // a tight local component so the new seed actually claims
                // its neighborhood under MAP
                let mut cov = init_cov;
                cov[0][0] = cov[0][0] / k as f64 + RIDGE;
                cov[0][1] /= k as f64;
                cov[1][0] = cov[1][0] / k as f64;
                cov[1][1] = cov[1][1] / k as f64 + RIDGE;
                components[j] = GmmComponent {
                    mean: points[far],
                    cov,
                    weight: 1.0 / k as f64,
                };
            }
        }
        if !fixed_any {
            break 'em;
        }
        normalize_weights(&mut components);
        prev_ll = f64::NEG_INFINITY;
    }

    for comp in components.iter_mut() {
        comp.weight = comp.weight.max(WEIGHT_FLOOR);
    }
    normalize_weights(&mut components);

    Ok(GmmClassifier {
        components,
        log_likelihood_history: history,
        reseeded: reseeded_any,
    })
}

fn nearest_mean_d2(components: &[GmmComponent], p: [f64; 2]) -> f64 {
    components
        .iter()
        .map(|c| (p[0] - c.mean[0]).powi(2) + (p[1] - c.mean[1]).powi(2))
        .fold(f64::INFINITY, f64::min)
}

fn normalize_weights(components: &mut [GmmComponent]) {
    let total: f64 = components.iter().map(|c| c.weight).sum();
    for c in components.iter_mut() {
        c.weight /= total;
    }
}
