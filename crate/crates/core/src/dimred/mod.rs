//! State-space order reduction: feature normalization, exact t-SNE to 2-D,
//! and a small network that learns the state -> embedding map so states not
//! present in the t-SNE batch can be embedded too.

mod tsne;

pub use tsne::{
    gaussian_affinities, pairwise_squared_distances, symmetrize, tsne, Embedding, TsneOptions,
};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::net::{Adam, Mlp};
use crate::rng::stream;
use crate::{Error, Result};

/// Per-feature min-max scaler onto [-1, 1]; constant features map to 0.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Normalizer {
    mins: Vec<f64>,
    maxs: Vec<f64>,
}

pub fn fit_normalizer(states: &[Vec<f64>]) -> Result<Normalizer> {
    if states.is_empty() {
        return Err(Error::Empty {
            what: "normalizer input",
        });
    }
    if states.len() < 2 {
        return Err(Error::TooFew {
            what: "normalizer input",
            need: 2,
            got: states.len(),
        });
    }
    let dim = states[0].len();
    let mut mins = vec![f64::INFINITY; dim];
    let mut maxs = vec![f64::NEG_INFINITY; dim];
    for s in states {
        if s.len() != dim {
            return Err(Error::ShapeMismatch {
                expected: dim,
                got: s.len(),
            });
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "normalizer input",
            });
        }
        for (d, &v) in s.iter().enumerate() {
            mins[d] = mins[d].min(v);
            maxs[d] = maxs[d].max(v);
        }
    }
    Ok(Normalizer { mins, maxs })
}

impl Normalizer {
    pub fn dim(&self) -> usize {
        self.mins.len()
    }

    pub fn transform(&self, state: &[f64]) -> Vec<f64> {
        state
            .iter()
            .enumerate()
            .map(|(d, &v)| {
                let range = self.maxs[d] - self.mins[d];
                if range > 0.0 {
                    2.0 * (v - self.mins[d]) / range - 1.0
                } else {
                    0.0
                }
            })
            .collect()
    }

    pub fn transform_all(&self, states: &[Vec<f64>]) -> Vec<Vec<f64>> {
        states.iter().map(|s| self.transform(s)).collect()
    }
}

/// Learned approximation of the t-SNE map, from normalized states to the
/// 2-D embedding. Targets are standardized internally for conditioning; the
/// affine correction is folded back in at prediction time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MapperNet {
    net: Mlp,
    target_mean: [f64; 2],
    target_std: [f64; 2],
    /// Mean squared training error per epoch, in embedding units.
    pub loss_history: Vec<f64>,
    /// Error on the held-out split (10%), when one exists.
    pub holdout_mse: Option<f64>,
}

impl MapperNet {
    pub fn predict(&self, normalized_state: &[f64]) -> Result<[f64; 2]> {
        let out = self.net.forward(normalized_state)?;
        Ok([
            out[0] * self.target_std[0] + self.target_mean[0],
            out[1] * self.target_std[1] + self.target_mean[1],
        ])
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }
}

pub const MAPPER_HIDDEN: usize = 64;
pub const MAPPER_BATCH: usize = 256;
pub const MAPPER_LR: f64 = 1e-3;

/// Fit the mapper by minibatch Adam on squared error.
pub fn train_mapper(
    states: &[Vec<f64>],
    embedding: &[[f64; 2]],
    epochs: usize,
    seed: u64,
) -> Result<MapperNet> {
    if states.len() != embedding.len() {
        return Err(Error::LengthMismatch {
            left_name: "states",
            left: states.len(),
            right_name: "embedding",
            right: embedding.len(),
        });
    }
    if states.is_empty() {
        return Err(Error::Empty {
            what: "mapper input",
        });
    }
    let n = states.len();
    let dim = states[0].len();
    let mut rng = stream(seed, 0x6d61705f74726e); // "map_trn"

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let holdout = n / 10;
    let train_idx = &order[..n - holdout];
    let hold_idx = &order[n - holdout..];

    // Standardize targets over the training split.
    let mut target_mean = [0.0f64; 2];
    for &i in train_idx {
        target_mean[0] += embedding[i][0];
        target_mean[1] += embedding[i][1];
    }
    target_mean[0] /= train_idx.len() as f64;
    target_mean[1] /= train_idx.len() as f64;
    let mut target_std = [0.0f64; 2];
    for &i in train_idx {
        target_std[0] += (embedding[i][0] - target_mean[0]).powi(2);
        target_std[1] += (embedding[i][1] - target_mean[1]).powi(2);
    }
    for s in target_std.iter_mut() {
        *s = (*s / train_idx.len() as f64).sqrt();
        if *s < 1e-8 {
            *s = 1.0;
        }
    }

    let mut net = Mlp::two_hidden(dim, MAPPER_HIDDEN, 2, &mut rng);
    let mut adam = Adam::new(net.num_params());
    let mut grads = vec![0.0; net.num_params()];
    let mut loss_history = Vec::with_capacity(epochs);
    let mut shuffled = train_idx.to_vec();

    for _ in 0..epochs {
        shuffled.shuffle(&mut rng);
        let mut epoch_sq_err = 0.0;
        let mut epoch_count = 0usize;
        for batch in shuffled.chunks(MAPPER_BATCH) {
            grads.fill(0.0);
            for &i in batch {
                let trace = net.forward_traced(&states[i])?;
                let out = net.traced_output(&trace);
                let mut out_grad = [0.0f64; 2];
                for d in 0..2 {
                    let target_std_space = (embedding[i][d] - target_mean[d]) / target_std[d];
                    let err = out[d] - target_std_space;
                    // d(mse)/d(out); mse averaged over batch and both dims
                    out_grad[d] = 2.0 * err / (batch.len() as f64 * 2.0);
                    let err_orig = err * target_std[d];
                    epoch_sq_err += err_orig * err_orig;
                }
                epoch_count += 1;
                net.backward(&trace, &out_grad, &mut grads)?;
            }
            adam.step(net.params_mut(), &grads, MAPPER_LR);
        }
        loss_history.push(epoch_sq_err / (epoch_count as f64 * 2.0));
    }

    let mapper = MapperNet {
        net,
        target_mean,
        target_std,
        loss_history,
        holdout_mse: None,
    };
    let holdout_mse = if hold_idx.is_empty() {
        None
    } else {
        let mut sq = 0.0;
        for &i in hold_idx {
            let pred = mapper.predict(&states[i])?;
            sq += (pred[0] - embedding[i][0]).powi(2) + (pred[1] - embedding[i][1]).powi(2);
        }
        Some(sq / (hold_idx.len() as f64 * 2.0))
    };
    Ok(MapperNet {
        holdout_mse,
        ..mapper
    })
}

/// Write an embedding with per-point costs as `x,y,cost` CSV.
pub fn export_embedding_csv(
    path: &std::path::Path,
    embedding: &Embedding,
    costs: &[f64],
) -> Result<()> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "x,y,cost")?;
    for (p, c) in embedding.points.iter().zip(costs.iter()) {
        writeln!(f, "{},{},{}", p[0], p[1], c)?;
    }
    Ok(())
}
