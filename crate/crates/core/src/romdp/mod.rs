//! The reduced-order model: state abstraction (normalize, embed, cluster),
//! action abstraction (grid cell), and the count-based reduced cost,
//! transition and policy tables built from rollout data.

mod gmm;
mod grid;
mod tables;

pub use gmm::{fit_gmm, GmmClassifier, GmmComponent};
pub use grid::ActionGrid;
pub use tables::{build_cost_table, build_policy_table, build_transition_table};

use rand::seq::index::sample as index_sample;
use serde::{Deserialize, Serialize};

use crate::dimred::{
    fit_normalizer, train_mapper, tsne, Embedding, MapperNet, Normalizer, TsneOptions,
};
use crate::env::Dataset;
use crate::rng::{derive_seed, stream};
use crate::{Error, Result};

pub const MODEL_SCHEMA: &str = "romdp-model-v1";

/// Composition of the fitted normalizer, mapper network and GMM classifier:
/// raw state -> reduced state index.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StateAbstraction {
    pub normalizer: Normalizer,
    pub mapper: MapperNet,
    pub gmm: GmmClassifier,
}

impl StateAbstraction {
    pub fn reduce(&self, state: &[f64]) -> Result<usize> {
        if state.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "state" });
        }
        let normalized = self.normalizer.transform(state);
        let embedded = self.mapper.predict(&normalized)?;
        Ok(self.gmm.classify(embedded))
    }
}

/// The reduced model over `k_s` clustered states and the action-grid cells.
/// Indices are 0-based throughout.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RomdpModel {
    pub k_s: usize,
    pub action_grid: ActionGrid,
    /// Mean observed cost per (reduced state, reduced action).
    pub cost: Vec<Vec<f64>>,
    /// Transition frequencies [state][action][next state].
    pub transition: Vec<Vec<Vec<f64>>>,
    /// Behavior policy frequencies from the last epoch.
    pub policy: Vec<Vec<f64>>,
    pub pair_counts: Vec<Vec<u64>>,
    pub epoch_pair_counts: Vec<Vec<u64>>,
    /// Default cost for unobserved pairs.
    pub default_cost: f64,
    pub discount: f64,
    /// Absent on fixture models assembled from pre-reduced sequences.
    pub state_abstraction: Option<StateAbstraction>,
}

impl RomdpModel {
    pub fn n_actions(&self) -> usize {
        self.action_grid.n_cells()
    }

    pub fn abstract_state(&self, state: &[f64]) -> Result<usize> {
        match &self.state_abstraction {
            Some(abs) => abs.reduce(state),
            None => Err(Error::Config(
                "model has no fitted state abstraction".into(),
            )),
        }
    }

    pub fn abstract_action(&self, action: &[f64]) -> Result<usize> {
        self.action_grid.cell_index(action)
    }

    /// Check every structural invariant; used after building and by the
    /// model inspector.
    pub fn validate(&self) -> Result<()> {
        let n_a = self.n_actions();
        let shape_err = |what: &str| Error::Config(format!("invalid model shape: {what}"));
        if self.cost.len() != self.k_s
            || self.transition.len() != self.k_s
            || self.policy.len() != self.k_s
            || self.pair_counts.len() != self.k_s
            || self.epoch_pair_counts.len() != self.k_s
        {
            return Err(shape_err("state dimension"));
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return Err(Error::Config(format!(
                "discount {} not in (0,1)",
                self.discount
            )));
        }
        if !(self.default_cost >= 0.0) {
            return Err(Error::Config("default cost must be non-negative".into()));
        }
        for s in 0..self.k_s {
            if self.cost[s].len() != n_a
                || self.transition[s].len() != n_a
                || self.policy[s].len() != n_a
                || self.pair_counts[s].len() != n_a
                || self.epoch_pair_counts[s].len() != n_a
            {
                return Err(shape_err("action dimension"));
            }
            let policy_sum: f64 = self.policy[s].iter().sum();
            if (policy_sum - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "policy row {s} sums to {policy_sum}"
                )));
            }
            for a in 0..n_a {
                if self.transition[s][a].len() != self.k_s {
                    return Err(shape_err("transition destination dimension"));
                }
                let row_sum: f64 = self.transition[s][a].iter().sum();
                if (row_sum - 1.0).abs() > 1e-9 {
                    return Err(Error::Config(format!(
                        "transition row ({s}, {a}) sums to {row_sum}"
                    )));
                }
                if !(self.cost[s][a] >= 0.0) || !self.cost[s][a].is_finite() {
                    return Err(Error::Config(format!(
                        "cost ({s}, {a}) = {} invalid",
                        self.cost[s][a]
                    )));
                }
                if self.pair_counts[s][a] == 0 && self.cost[s][a] != self.default_cost {
                    return Err(Error::Config(format!(
                        "unobserved pair ({s}, {a}) must carry the default cost"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn save_json(&self, path: &std::path::Path) -> Result<()> {
        #[derive(Serialize)]
        struct Versioned<'a> {
            schema: &'a str,
            model: &'a RomdpModel,
        }
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(
            file,
            &Versioned {
                schema: MODEL_SCHEMA,
                model: self,
            },
        )?;
        Ok(())
    }

    pub fn load_json(path: &std::path::Path) -> Result<RomdpModel> {
        #[derive(Deserialize)]
        struct Versioned {
            schema: String,
            model: RomdpModel,
        }
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let v: Versioned = serde_json::from_reader(file)?;
        if v.schema != MODEL_SCHEMA {
            return Err(Error::SchemaVersion {
                expected: MODEL_SCHEMA.into(),
                got: v.schema,
            });
        }
        Ok(v.model)
    }
}

/// Everything the reduced-model build needs beyond the data itself.
#[derive(Debug, Clone)]
pub struct BuildOptions {
    pub k_s: usize,
    pub cells_per_dim: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    pub default_cost: f64,
    pub discount: f64,
    pub min_build_size: usize,
    /// Largest sample count handed to t-SNE; bigger datasets are subsampled.
    pub tsne_max_samples: usize,
    pub tsne: TsneOptions,
    pub mapper_epochs: usize,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            k_s: 50,
            cells_per_dim: 3,
            action_low: vec![-1.0, -1.0],
            action_high: vec![1.0, 1.0],
            default_cost: 0.5,
            discount: 0.99,
            min_build_size: 2000,
            tsne_max_samples: 5000,
            tsne: TsneOptions::default(),
            mapper_epochs: 200,
        }
    }
}

/// A finished build: the model plus the embedding artifacts, kept so the
/// caller can export them.
pub struct RomdpBuild {
    pub model: RomdpModel,
    pub embedding: Embedding,
    /// Dataset indices of the samples that went into t-SNE.
    pub subsample_indices: Vec<usize>,
}

/// Full pipeline: subsample, normalize, embed, fit the mapper and GMM,
/// discretize actions, then count up the three tables over all data.
pub fn build_romdp(
    data: &Dataset,
    epoch_data: &[crate::env::DataSample],
    opts: &BuildOptions,
    seed: u64,
) -> Result<RomdpBuild> {
    if data.len() < opts.min_build_size {
        return Err(Error::TooFew {
            what: "dataset for model build",
            need: opts.min_build_size,
            got: data.len(),
        });
    }

    // Subsample for the embedding; all data still feeds the tables.
    let mut rng = stream(seed, 0x73756273616d70); // "subsamp"
    let n = data.len();
    let subsample_indices: Vec<usize> = if n > opts.tsne_max_samples {
        let mut idx: Vec<usize> = index_sample(&mut rng, n, opts.tsne_max_samples).into_vec();
        idx.sort_unstable();
        idx
    } else {
        (0..n).collect()
    };
    let sub_states: Vec<Vec<f64>> = subsample_indices
        .iter()
        .map(|&i| data.get(i).state.clone())
        .collect();

    let normalizer = fit_normalizer(&sub_states).map_err(|e| e.at_stage("normalize"))?;
    let normalized = normalizer.transform_all(&sub_states);

    let mut tsne_opts = opts.tsne.clone();
    tsne_opts.seed = derive_seed(seed, 0x74736e65); // "tsne"
    let embedding = tsne(&normalized, &tsne_opts).map_err(|e| e.at_stage("tsne"))?;

    let mapper = train_mapper(
        &normalized,
        &embedding.points,
        opts.mapper_epochs,
        derive_seed(seed, 0x6d617070), // "mapp"
    )
    .map_err(|e| e.at_stage("mapper"))?;

    let gmm = fit_gmm(&embedding.points, opts.k_s, derive_seed(seed, 0x676d6d)) // "gmm"
        .map_err(|e| e.at_stage("gmm"))?;

    let abstraction = StateAbstraction {
        normalizer,
        mapper,
        gmm,
    };
    let action_grid = ActionGrid::new(
        opts.action_low.clone(),
        opts.action_high.clone(),
        opts.cells_per_dim,
    )
    .map_err(|e| e.at_stage("action grid"))?;
    let n_actions = action_grid.n_cells();

    // Reduce every sample in the full dataset.
    let mut pairs = Vec::with_capacity(n);
    let mut triples = Vec::with_capacity(n);
    let mut costs = Vec::with_capacity(n);
    for sample in data.iter() {
        let s = abstraction
            .reduce(&sample.state)
            .map_err(|e| e.at_stage("state abstraction"))?;
        let a = action_grid
            .cell_index(&sample.action)
            .map_err(|e| e.at_stage("action abstraction"))?;
        let s_next = abstraction
            .reduce(&sample.next_state)
            .map_err(|e| e.at_stage("state abstraction"))?;
        pairs.push((s, a));
        triples.push((s, a, s_next));
        costs.push(sample.cost);
    }
    let mut epoch_pairs = Vec::with_capacity(epoch_data.len());
    for sample in epoch_data {
        let s = abstraction
            .reduce(&sample.state)
            .map_err(|e| e.at_stage("state abstraction"))?;
        let a = action_grid
            .cell_index(&sample.action)
            .map_err(|e| e.at_stage("action abstraction"))?;
        epoch_pairs.push((s, a));
    }

    let (cost, pair_counts) =
        build_cost_table(&pairs, &costs, opts.k_s, n_actions, opts.default_cost)
            .map_err(|e| e.at_stage("cost table"))?;
    let transition = build_transition_table(&triples, opts.k_s, n_actions)
        .map_err(|e| e.at_stage("transition table"))?;
    let (policy, epoch_pair_counts) = build_policy_table(&epoch_pairs, opts.k_s, n_actions)
        .map_err(|e| e.at_stage("policy table"))?;

    let model = RomdpModel {
        k_s: opts.k_s,
        action_grid,
        cost,
        transition,
        policy,
        pair_counts,
        epoch_pair_counts,
        default_cost: opts.default_cost,
        discount: opts.discount,
        state_abstraction: Some(abstraction),
    };
    model.validate().map_err(|e| e.at_stage("validation"))?;

    Ok(RomdpBuild {
        model,
        embedding,
        subsample_indices,
    })
}

/// Assemble a model directly from reduced sequences, bypassing the learned
/// abstraction. Unit tests and the inspector fixture use this seam.
pub fn model_from_reduced(
    pairs: &[(usize, usize)],
    triples: &[(usize, usize, usize)],
    costs: &[f64],
    epoch_pairs: &[(usize, usize)],
    k_s: usize,
    action_grid: ActionGrid,
    default_cost: f64,
    discount: f64,
) -> Result<RomdpModel> {
    let n_actions = action_grid.n_cells();
    let (cost, pair_counts) = build_cost_table(pairs, costs, k_s, n_actions, default_cost)?;
    let transition = build_transition_table(triples, k_s, n_actions)?;
    let (policy, epoch_pair_counts) = build_policy_table(epoch_pairs, k_s, n_actions)?;
    let model = RomdpModel {
        k_s,
        action_grid,
        cost,
        transition,
        policy,
        pair_counts,
        epoch_pair_counts,
        default_cost,
        discount,
        state_abstraction: None,
    };
    model.validate()?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{DataSample, Dataset};
    use crate::rng::{standard_normal, stream as rng_stream};
    use rand::Rng;

    fn tiny_grid() -> ActionGrid {
        // 2 cells over one dimension: reduced actions {0, 1}
        ActionGrid::new(vec![0.0], vec![1.0], 2).unwrap()
    }

    #[test]
    fn fixture_model_assembles_and_validates() {
        let pairs = vec![(0, 0), (0, 0), (1, 0), (1, 1), (2, 1)];
        let triples = vec![(0, 0, 0), (0, 0, 1), (1, 0, 1), (1, 1, 2), (2, 1, 0)];
        let costs = vec![0.25, 0.75, 1.0, 0.0, 0.5];
        let model = model_from_reduced(&pairs, &triples, &costs, &pairs, 3, tiny_grid(), 0.5, 0.99)
            .unwrap();
        assert_eq!(model.cost[0][0], 0.5);
        assert_eq!(model.transition[1][0][1], 1.0);
        assert_eq!(model.policy[1], vec![0.5, 0.5]);
        assert!(model.abstract_state(&[0.0]).is_err());
    }

    #[test]
    fn validation_catches_corrupted_rows() {
        let pairs = vec![(0, 0)];
        let triples = vec![(0, 0, 0)];
        let mut model =
            model_from_reduced(&pairs, &triples, &[1.0], &pairs, 2, tiny_grid(), 0.5, 0.9).unwrap();
        model.transition[0][0][0] = 0.7;
        assert!(model.validate().is_err());
    }

    #[test]
    fn default_rule_matches_counts() {
        let mut rng = rng_stream(9, 0);
        let n = 500;
        let k_s = 6;
        let mut pairs = Vec::new();
        let mut triples = Vec::new();
        let mut costs = Vec::new();
        for _ in 0..n {
            let s = rng.random_range(0..k_s);
            let a = rng.random_range(0..2); // leave actions 2, 3 unobserved
            pairs.push((s, a));
            triples.push((s, a, rng.random_range(0..k_s)));
            costs.push(rng.random::<f64>() + 0.25); // keep means away from delta
        }
        let delta = 0.123456;
        let grid = ActionGrid::new(vec![0.0, 0.0], vec![1.0, 1.0], 2).unwrap();
        let model =
            model_from_reduced(&pairs, &triples, &costs, &pairs, k_s, grid, delta, 0.99).unwrap();
        for s in 0..k_s {
            for a in 0..4 {
                let is_default = model.cost[s][a] == delta;
                let unobserved = model.pair_counts[s][a] == 0;
                assert_eq!(is_default, unobserved, "pair ({s}, {a})");
            }
        }
    }

    #[test]
    fn build_requires_minimum_dataset() {
        let mut data = Dataset::new(100);
        for i in 0..10 {
            data.push(DataSample::new(
                vec![i as f64, 0.0],
                vec![0.0, 0.0],
                vec![i as f64 + 1.0, 0.0],
                0.0,
                0.0,
            ));
        }
        let opts = BuildOptions {
            min_build_size: 2000,
            ..Default::default()
        };
        match build_romdp(&data, &[], &opts, 0) {
            Err(Error::TooFew { .. }) => {}
            other => panic!("expected minimum-size error, got {:?}", other.map(|_| ())),
        }
    }

    /// End-to-end pipeline on synthetic three-blob data, checking that the
    /// learned abstraction agrees with direct classification of the stored
    /// embedding points wherever the mapper is accurate.
    #[test]
    fn pipeline_abstraction_agrees_with_stored_embedding() {
        let mut rng = rng_stream(33, 0);
        let mut data = Dataset::new(10_000);
        let n = 360;
        for i in 0..n {
            let blob = i % 3;
            let center = [6.0 * blob as f64, -5.0 * blob as f64];
            let mut state = vec![0.0; 8];
            for (d, s) in state.iter_mut().enumerate() {
                *s = center[d % 2] + 0.3 * standard_normal(&mut rng);
            }
            let action = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let next_state = state.iter().map(|v| v + 0.01).collect();
            data.push(DataSample::new(
                state,
                action,
                next_state,
                0.0,
                (blob == 2) as u64 as f64,
            ));
        }
        let opts = BuildOptions {
            k_s: 3,
            min_build_size: 100,
            tsne_max_samples: n,
            tsne: crate::dimred::TsneOptions {
                perplexity: 20.0,
                iterations: 300,
                ..Default::default()
            },
            mapper_epochs: 300,
            ..Default::default()
        };
        let built = build_romdp(&data, &[], &opts, 12).unwrap();
        let model = built.model;
        model.validate().unwrap();

        let abs = model.state_abstraction.as_ref().unwrap();
        // Margin: half the smallest distance between cluster centroids.
        let gmm = &abs.gmm;
        let mut min_gap = f64::INFINITY;
        for i in 0..gmm.k() {
            for j in i + 1..gmm.k() {
                let a = gmm.components()[i].mean;
                let b = gmm.components()[j].mean;
                min_gap = min_gap.min((a[0] - b[0]).hypot(a[1] - b[1]));
            }
        }
        let margin = 0.5 * min_gap;

        let mut checked = 0;
        for (row, &i) in built.subsample_indices.iter().enumerate() {
            let stored = built.embedding.points[row];
            let direct = gmm.classify(stored);
            let normalized = abs.normalizer.transform(&data.get(i).state);
            let predicted = abs.mapper.predict(&normalized).unwrap();
            let mapper_err = (predicted[0] - stored[0]).hypot(predicted[1] - stored[1]);
            if mapper_err < margin {
                checked += 1;
                assert_eq!(
                    model.abstract_state(&data.get(i).state).unwrap(),
                    direct,
                    "sample {i}: mapper error {mapper_err} < margin {margin}"
                );
            }
        }
        assert!(checked > n / 2, "only {checked} points inside the margin");

        // Same state twice gives the same index; nearby states from one blob
        // share their region.
        let s0 = data.get(0).state.clone();
        assert_eq!(
            model.abstract_state(&s0).unwrap(),
            model.abstract_state(&s0).unwrap()
        );
        let s3 = data.get(3).state.clone(); // same blob as sample 0
        assert_eq!(
            model.abstract_state(&s0).unwrap(),
            model.abstract_state(&s3).unwrap()
        );
    }

    #[test]
    fn model_json_round_trip_and_version_check() {
        let pairs = vec![(0, 0), (1, 1)];
        let triples = vec![(0, 0, 1), (1, 1, 0)];
        let model = model_from_reduced(
            &pairs,
            &triples,
            &[0.0, 1.0],
            &pairs,
            2,
            tiny_grid(),
            0.5,
            0.99,
        )
        .unwrap();
        let dir = std::env::temp_dir().join("romdp_shield_model_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.json");
        model.save_json(&path).unwrap();
        let loaded = RomdpModel::load_json(&path).unwrap();
        assert_eq!(loaded.cost, model.cost);
        assert_eq!(loaded.transition, model.transition);

        // corrupt the schema tag
        let text = std::fs::read_to_string(&path).unwrap();
        let bad = text.replace(MODEL_SCHEMA, "romdp-model-v0");
        std::fs::write(&path, bad).unwrap();
        match RomdpModel::load_json(&path) {
            Err(Error::SchemaVersion { .. }) => {}
            other => panic!("expected schema error, got {:?}", other.map(|_| ())),
        }
    }
}
