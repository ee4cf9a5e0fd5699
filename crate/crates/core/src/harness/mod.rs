//! Experiment orchestration: the outer training loop (collect, rebuild the
//! reduced model, update the policy, run the activation rule, clear the
//! epoch subset), per-seed metrics files, checkpoints, the model inspector
//! and the curve aggregator.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::config::ExperimentConfig;
use crate::env::DataSample;
use crate::env::Dataset;
use crate::net::TensorEntry;
use crate::planner::{value_iteration, ReducedValueFunction};
use crate::rng::{derive_seed, stream};
use crate::romdp::{build_romdp, BuildOptions, RomdpModel};
use crate::safety::{
    correct_action, end_epoch, record_sample, ActivationState, CorrectionProblem, PsoConfig,
};
use crate::srl::{episode_stats, LagrangeState, Learner, RolloutBuffer, SrlConfig};
use crate::{Error, Result};

pub const METRICS_SCHEMA: &str = "romdp-shield-metrics-v1";

// Stream tags for the independent rng streams of one run.
const TAG_NET_INIT: u64 = 1;
const TAG_POLICY: u64 = 2;
const TAG_UPDATE: u64 = 3;
const TAG_EPISODE_BASE: u64 = 1 << 20;
const TAG_BUILD_BASE: u64 = 1 << 40;
const TAG_PSO_BASE: u64 = 1 << 41;

/// One metrics row per epoch; the CSV schema is fixed and versioned.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub mean_episode_reward: f64,
    pub mean_episode_cost: f64,
    /// Unsafe steps (cost events) in the epoch.
    pub violations: u64,
    pub lambda: f64,
    /// Cost-critic fitting loss, normalized by the cost-target variance.
    pub vc_loss: f64,
    pub shield_active: bool,
    /// Steps where the correction replaced the proposal.
    pub corrections: u64,
    pub mean_correction_distance: f64,
}

impl MetricsRow {
    pub fn csv_header() -> &'static str {
        "epoch,mean_ep_reward,mean_ep_cost,violations,lambda,vc_loss,shield_active,corrections,mean_correction_distance"
    }

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.mean_episode_reward,
            self.mean_episode_cost,
            self.violations,
            self.lambda,
            self.vc_loss,
            if self.shield_active { 1 } else { 0 },
            self.corrections,
            self.mean_correction_distance,
        )
    }
}

/// Everything a finished seed run leaves behind.
pub struct RunResult {
    pub seed: u64,
    pub rows: Vec<MetricsRow>,
    pub run_dir: PathBuf,
    pub metrics_path: PathBuf,
}

/// Run every seed of the experiment sequentially; returns per-seed results.
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path) -> Result<Vec<RunResult>> {
    config.validate()?;
    let mut results = Vec::new();
    for &seed in &config.seeds {
        results.push(run_seed(config, seed, out_dir)?);
    }
    Ok(results)
}

/// Aggregate (mean, population std) of a per-seed statistic.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Human-readable exit summary across seeds.
pub fn summarize(results: &[RunResult]) -> String {
    let rewards: Vec<f64> = results
        .iter()
        .map(|r| {
            r.rows
                .iter()
                .map(|row| row.mean_episode_reward)
                .sum::<f64>()
                / r.rows.len() as f64
        })
        .collect();
    let costs: Vec<f64> = results
        .iter()
        .map(|r| r.rows.iter().map(|row| row.mean_episode_cost).sum::<f64>() / r.rows.len() as f64)
        .collect();
    let violations: Vec<f64> = results
        .iter()
        .map(|r| r.rows.iter().map(|row| row.violations as f64).sum::<f64>() / r.rows.len() as f64)
        .collect();
    let (rm, rs) = mean_std(&rewards);
    let (cm, cs) = mean_std(&costs);
    let (vm, vs) = mean_std(&violations);
    format!(
        "seeds: {}\nmean episode reward: {rm:.4} +/- {rs:.4}\nmean episode cost: {cm:.4} +/- {cs:.4}\nmean violations/epoch: {vm:.2} +/- {vs:.2}\n",
        results.len()
    )
}

fn rebuild_due(epoch: usize, interval: usize) -> bool {
    if interval == 0 {
        return false;
    }
    // early epochs change fastest: rebuild each of the first ten, then
    // every `interval`
    if epoch < 10 {
        true
    } else {
        (epoch - 10) % interval == 0
    }
}

/// Train one seed; writes metrics, corrections log, run log, checkpoints
/// and (optionally) the latest built model under `out_dir/<algo>-seed<seed>/`.
pub fn run_seed(config: &ExperimentConfig, seed: u64, out_dir: &Path) -> Result<RunResult> {
    let run_dir = out_dir.join(format!("{}-seed{}", config.algorithm.name(), seed));
    std::fs::create_dir_all(&run_dir)?;
    let mut run_log = std::io::BufWriter::new(std::fs::File::create(run_dir.join("run.log"))?);
    let mut corrections_log =
        std::io::BufWriter::new(std::fs::File::create(run_dir.join("corrections.csv"))?);
    writeln!(corrections_log, "step,feasible,distance,immediate,future")?;

    let mut env = config.build_env()?;
    let spec = env.spec().clone();
    let horizon = spec.horizon;
    let d_s = config.immediate_limit(horizon);
    // Correction thresholds; the multiplier budget below stays on the
    // episode-cost scale.
    let d_future = config.future_limit();

    let srl_cfg = SrlConfig {
        gamma: config.srl.gamma,
        gae_lambda: config.srl.gae_lambda,
        clip: config.srl.clip,
        policy_lr: config.srl.policy_lr,
        value_lr: config.srl.value_lr,
        update_epochs: config.srl.update_epochs,
        minibatch_size: config.srl.minibatch_size,
        hidden: config.srl.hidden,
        init_log_std: config.srl.init_log_std,
    };
    let mut init_rng = stream(seed, TAG_NET_INIT);
    let mut learner = if config.algorithm.uses_lagrangian() {
        Learner::new_ppo_lagrangian(
            spec.n_s,
            spec.n_a,
            srl_cfg,
            LagrangeState::new(config.srl.lambda_lr, config.safety.cost_limit),
            &mut init_rng,
        )
    } else {
        Learner::new_ppo(spec.n_s, spec.n_a, srl_cfg, &mut init_rng)
    };

    let mut policy_rng = stream(seed, TAG_POLICY);
    let mut update_rng = stream(seed, TAG_UPDATE);

    let mut data = Dataset::new(config.romdp.dataset_capacity);
    let mut epoch_data: Vec<DataSample> = Vec::new();
    let mut model: Option<(RomdpModel, ReducedValueFunction)> = None;
    let mut activation = ActivationState::new(
        config.safety.deactivate_threshold,
        config.safety.reactivate_threshold,
    )?;
    if config.safety.force_inactive {
        activation = activation.forced_inactive();
    }
    let use_shield = config.algorithm.uses_safety_layer();
    let pso_cfg = PsoConfig {
        particles: config.pso.particles,
        iterations: config.pso.iterations,
        inertia: config.pso.inertia,
        cognitive: config.pso.cognitive,
        social: config.pso.social,
    };

    let mut episode_index: u64 = 0;
    let mut obs = env.reset(derive_seed(seed, TAG_EPISODE_BASE));
    let mut buffer = RolloutBuffer::with_capacity(config.steps_per_epoch);
    let mut rows = Vec::with_capacity(config.epochs);
    let mut global_step: u64 = 0;

    for epoch in 0..config.epochs {
        writeln!(run_log, "epoch {epoch} collect")?;
        let mut corrections: u64 = 0;
        let mut correction_distance_sum = 0.0;
        for _ in 0..config.steps_per_epoch {
            let (raw_action, _) = learner.policy.sample(&obs, &mut policy_rng)?;
            let (mut action, _clamped) = spec.clamp_action(&raw_action);

            if use_shield && activation.active {
                if let Some((romdp, values)) = &model {
                    let reduced_state = romdp.abstract_state(&obs)?;
                    let problem = CorrectionProblem::new(
                        romdp,
                        values,
                        reduced_state,
                        action.clone(),
                        d_s,
                        d_future,
                    );
                    let outcome = correct_action(
                        &problem,
                        &pso_cfg,
                        derive_seed(seed, TAG_PSO_BASE ^ global_step),
                    )?;
                    writeln!(
                        corrections_log,
                        "{},{},{},{},{}",
                        global_step,
                        if outcome.feasible { 1 } else { 0 },
                        outcome.distance,
                        outcome.eval.immediate,
                        outcome.eval.future
                    )?;
                    if outcome.changed {
                        corrections += 1;
                        correction_distance_sum += outcome.distance;
                        action = outcome.action;
                    }
                }
            }

            let log_prob = learner.policy.log_prob(&obs, &action)?;
            let outcome = env.step(&action)?;
            record_sample(
                &mut data,
                &mut epoch_data,
                DataSample::new(
                    obs.clone(),
                    action.clone(),
                    outcome.obs.clone(),
                    outcome.reward,
                    outcome.cost,
                ),
            );
            buffer.push(
                obs,
                action,
                log_prob,
                outcome.reward,
                outcome.cost,
                outcome.done,
                outcome.obs.clone(),
            );
            obs = if outcome.done {
                episode_index += 1;
                env.reset(derive_seed(seed, TAG_EPISODE_BASE + episode_index))
            } else {
                outcome.obs
            };
            global_step += 1;
        }

        writeln!(run_log, "epoch {epoch} build")?;
        if use_shield
            && rebuild_due(epoch, config.romdp.rebuild_interval)
            && data.len() >= config.romdp.min_build_size
        {
            let opts = BuildOptions {
                k_s: config.romdp.k_s,
                cells_per_dim: config.romdp.cells_per_dim,
                action_low: spec.action_low.clone(),
                action_high: spec.action_high.clone(),
                default_cost: config.romdp.default_cost,
                discount: config.srl.gamma,
                min_build_size: config.romdp.min_build_size,
                tsne_max_samples: config.romdp.tsne_max_samples,
                tsne: crate::dimred::TsneOptions {
                    perplexity: config.romdp.perplexity,
                    iterations: config.romdp.tsne_iterations,
                    ..Default::default()
                },
                mapper_epochs: config.romdp.mapper_epochs,
            };
            let built = build_romdp(
                &data,
                &epoch_data,
                &opts,
                derive_seed(seed, TAG_BUILD_BASE + epoch as u64),
            )?;
            assert!(data.len() <= config.romdp.dataset_capacity);
            assert!(built.subsample_indices.len() <= config.romdp.tsne_max_samples);
            let values = value_iteration(
                &built.model,
                config.romdp.value_iteration_tolerance,
                config.romdp.value_iteration_max_iters,
            )?;
            if config.output.export_embeddings {
                let costs: Vec<f64> = built
                    .subsample_indices
                    .iter()
                    .map(|&i| data.get(i).cost)
                    .collect();
                crate::dimred::export_embedding_csv(
                    &run_dir.join(format!("embedding_epoch{epoch}.csv")),
                    &built.embedding,
                    &costs,
                )?;
            }
            if config.output.save_model {
                built.model.save_json(&run_dir.join("romdp_latest.json"))?;
            }
            model = Some((built.model, values));
            writeln!(run_log, "epoch {epoch} build done")?;
        }

        writeln!(run_log, "epoch {epoch} update")?;
        let stats = episode_stats(&buffer.rewards, &buffer.costs, &buffer.dones);
        let violations = buffer.costs.iter().sum::<f64>() as u64;
        learner.prepare_buffer(&mut buffer)?;
        let report = learner.update(&buffer, stats.mean_cost, &mut update_rng)?;
        // loss on cost-normalized targets: scale-free accuracy measure
        let (_, target_std) = mean_std(&buffer.cost_targets);
        let vc_loss = report.cost_value_loss / (target_std * target_std).max(1e-8);

        writeln!(run_log, "epoch {epoch} activation")?;
        if use_shield {
            activation.update(vc_loss)?;
        }

        rows.push(MetricsRow {
            epoch,
            mean_episode_reward: stats.mean_reward,
            mean_episode_cost: stats.mean_cost,
            violations,
            lambda: report.lambda,
            vc_loss,
            shield_active: use_shield && activation.active,
            corrections,
            mean_correction_distance: if corrections > 0 {
                correction_distance_sum / corrections as f64
            } else {
                0.0
            },
        });

        writeln!(run_log, "epoch {epoch} clear")?;
        end_epoch(&mut epoch_data);
        buffer.clear();

        let last = epoch + 1 == config.epochs;
        if last
            || (config.output.checkpoint_interval > 0
                && (epoch + 1) % config.output.checkpoint_interval == 0)
        {
            let name = if last {
                "checkpoint_final.bin".to_string()
            } else {
                format!("checkpoint_epoch{epoch}.bin")
            };
            save_learner_checkpoint(&learner, &run_dir.join(name))?;
        }
    }

    let metrics_path = run_dir.join("metrics.csv");
    let mut f = std::io::BufWriter::new(std::fs::File::create(&metrics_path)?);
    writeln!(f, "# {METRICS_SCHEMA}")?;
    writeln!(f, "{}", MetricsRow::csv_header())?;
    for row in &rows {
        writeln!(f, "{}", row.to_csv())?;
    }
    f.flush()?;

    Ok(RunResult {
        seed,
        rows,
        run_dir,
        metrics_path,
    })
}

fn save_learner_checkpoint(learner: &Learner, path: &Path) -> Result<()> {
    let mut entries = vec![
        TensorEntry::new(
            "policy_mean",
            &[learner.policy.mean_net.num_params()],
            learner.policy.mean_net.params(),
        ),
        TensorEntry::new(
            "policy_log_std",
            &[learner.policy.log_std.len()],
            &learner.policy.log_std,
        ),
        TensorEntry::new(
            "reward_value",
            &[learner.reward_value.num_params()],
            learner.reward_value.params(),
        ),
    ];
    if let Some(cost_net) = &learner.cost_value {
        entries.push(TensorEntry::new(
            "cost_value",
            &[cost_net.num_params()],
            cost_net.params(),
        ));
    }
    crate::net::save_checkpoint(path, &entries)
}

/// Structural report for a serialized model: shapes, row-sum checks, count
/// totals, default-cost coverage and the costliest reduced states. Returns
/// PASS/FAIL lines rather than erroring on a corrupt table.
pub fn inspect_model(model: &RomdpModel) -> String {
    let mut out = String::new();
    let n_a = model.n_actions();
    let _ = writeln!(
        out,
        "reduced states: {}, reduced actions: {} ({}^{} grid)",
        model.k_s,
        n_a,
        model.action_grid.cells_per_dim(),
        model.action_grid.n_dims()
    );

    let mut transition_ok = true;
    for s in 0..model.k_s {
        for a in 0..n_a {
            let sum: f64 = model.transition[s][a].iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                transition_ok = false;
                let _ = writeln!(
                    out,
                    "FAIL transition row (state {s}, action {a}) sums to {sum}"
                );
            }
        }
    }
    if transition_ok {
        let _ = writeln!(out, "PASS transition rows stochastic");
    }
    let mut policy_ok = true;
    for s in 0..model.k_s {
        let sum: f64 = model.policy[s].iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            policy_ok = false;
            let _ = writeln!(out, "FAIL policy row (state {s}) sums to {sum}");
        }
    }
    if policy_ok {
        let _ = writeln!(out, "PASS policy rows stochastic");
    }

    let total_pairs: u64 = model.pair_counts.iter().flatten().sum();
    let total_epoch: u64 = model.epoch_pair_counts.iter().flatten().sum();
    let _ = writeln!(
        out,
        "pair count total: {total_pairs} (epoch subset: {total_epoch})"
    );

    let unobserved = model
        .pair_counts
        .iter()
        .flatten()
        .filter(|&&c| c == 0)
        .count();
    let cells = model.k_s * n_a;
    let mut default_ok = true;
    for s in 0..model.k_s {
        for a in 0..n_a {
            if model.pair_counts[s][a] == 0 && model.cost[s][a] != model.default_cost {
                default_ok = false;
                let _ = writeln!(
                    out,
                    "FAIL unobserved pair (state {s}, action {a}) has cost {} instead of the default {}",
                    model.cost[s][a], model.default_cost
                );
            }
        }
    }
    if default_ok {
        let _ = writeln!(
            out,
            "PASS default-cost rule; coverage {unobserved}/{cells} pairs ({:.1}%) at default {}",
            100.0 * unobserved as f64 / cells as f64,
            model.default_cost
        );
    }

    let mut by_cost: Vec<(usize, f64)> = (0..model.k_s)
        .map(|s| (s, model.cost[s].iter().sum::<f64>() / n_a as f64))
        .collect();
    by_cost.sort_by(|a, b| b.1.total_cmp(&a.1));
    let _ = writeln!(out, "top-cost reduced states:");
    for (s, c) in by_cost.iter().take(5) {
        let _ = writeln!(out, "  state {s}: mean cost {c:.6}");
    }

    if model.k_s * n_a <= 100 {
        let _ = writeln!(out, "cost table:");
        for s in 0..model.k_s {
            for a in 0..n_a {
                let _ = writeln!(out, "  C[{s}][{a}] = {}", model.cost[s][a]);
            }
        }
    }
    match model.validate() {
        Ok(()) => {
            let _ = writeln!(out, "PASS full validation");
        }
        Err(e) => {
            let _ = writeln!(out, "FAIL full validation: {e}");
        }
    }
    out
}

pub fn romdp_inspect(path: &Path) -> Result<String> {
    let model = RomdpModel::load_json(path)?;
    Ok(inspect_model(&model))
}

/// Parsed metrics file: schema-checked header plus rows.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let schema = lines
        .next()
        .ok_or_else(|| Error::Config("empty metrics file".into()))?;
    if schema.trim_start_matches("# ") != METRICS_SCHEMA {
        return Err(Error::SchemaVersion {
            expected: METRICS_SCHEMA.into(),
            got: schema.into(),
        });
    }
    let header = lines
        .next()
        .ok_or_else(|| Error::Config("missing metrics header".into()))?;
    if header != MetricsRow::csv_header() {
        return Err(Error::SchemaVersion {
            expected: MetricsRow::csv_header().into(),
            got: header.into(),
        });
    }
    let mut rows = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(Error::Config(format!("bad metrics row: {line}")));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|e| Error::Config(format!("bad number '{s}': {e}")))
        };
        rows.push(MetricsRow {
            epoch: parse(fields[0])? as usize,
            mean_episode_reward: parse(fields[1])?,
            mean_episode_cost: parse(fields[2])?,
            violations: parse(fields[3])? as u64,
            lambda: parse(fields[4])?,
            vc_loss: parse(fields[5])?,
            shield_active: fields[6] == "1",
            corrections: parse(fields[7])? as u64,
            mean_correction_distance: parse(fields[8])?,
        });
    }
    Ok(rows)
}

/// Per-epoch aggregate across seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub epoch: usize,
    pub reward_mean: f64,
    pub reward_std: f64,
    pub cost_mean: f64,
    pub cost_std: f64,
    pub violations_mean: f64,
    pub violations_std: f64,
    pub lambda_mean: f64,
    pub lambda_std: f64,
}

/// Aggregate several per-seed metrics files into per-epoch mean and
/// population standard deviation curves.
pub fn plotdata(paths: &[PathBuf]) -> Result<Vec<CurvePoint>> {
    if paths.is_empty() {
        return Err(Error::Empty {
            what: "metrics file list",
        });
    }
    let runs: Vec<Vec<MetricsRow>> = paths
        .iter()
        .map(|p| read_metrics(p))
        .collect::<Result<_>>()?;
    let epochs = runs[0].len();
    if runs.iter().any(|r| r.len() != epochs) {
        return Err(Error::Config(
            "metrics files cover different epoch counts".into(),
        ));
    }
    let mut curves = Vec::with_capacity(epochs);
    for e in 0..epochs {
        let rewards: Vec<f64> = runs.iter().map(|r| r[e].mean_episode_reward).collect();
        let costs: Vec<f64> = runs.iter().map(|r| r[e].mean_episode_cost).collect();
        let violations: Vec<f64> = runs.iter().map(|r| r[e].violations as f64).collect();
        let lambdas: Vec<f64> = runs.iter().map(|r| r[e].lambda).collect();
        let (rm, rs) = mean_std(&rewards);
        let (cm, cs) = mean_std(&costs);
        let (vm, vs) = mean_std(&violations);
        let (lm, ls) = mean_std(&lambdas);
        curves.push(CurvePoint {
            epoch: runs[0][e].epoch,
            reward_mean: rm,
            reward_std: rs,
            cost_mean: cm,
            cost_std: cs,
            violations_mean: vm,
            violations_std: vs,
            lambda_mean: lm,
            lambda_std: ls,
        });
    }
    Ok(curves)
}

pub fn write_curves(path: &Path, curves: &[CurvePoint]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "# {METRICS_SCHEMA}-curves")?;
    writeln!(
        f,
        "epoch,reward_mean,reward_std,cost_mean,cost_std,violations_mean,violations_std,lambda_mean,lambda_std"
    )?;
    for c in curves {
        writeln!(
            f,
            "{},{},{},{},{},{},{},{},{}",
            c.epoch,
            c.reward_mean,
            c.reward_std,
            c.cost_mean,
            c.cost_std,
            c.violations_mean,
            c.violations_std,
            c.lambda_mean,
            c.lambda_std
        )?;
    }
    Ok(())
}
