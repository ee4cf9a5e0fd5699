//! PPO and PPO-Lagrangian learners with generalized advantage estimation.
//!
//! The Lagrangian learner maximizes the clipped reward surrogate minus
//! lambda times the clipped cost surrogate, fits both value heads by
//! squared error, and projects lambda onto the non-negative reals after
//! moving it by the mean undiscounted episode cost versus the budget.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::net::{Adam, GaussianPolicy, Mlp, PolicyGrads};
use crate::{Error, Result};

/// One epoch of rollout data, episodes concatenated with done flags.
#[derive(Debug, Clone, Default)]
pub struct RolloutBuffer {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub costs: Vec<f64>,
    pub dones: Vec<bool>,
    pub next_states: Vec<Vec<f64>>,
    /// Normalized reward advantages (zero mean, unit variance per epoch).
    pub reward_advantages: Vec<f64>,
    /// Raw cost advantages; their scale carries meaning against the budget.
    pub cost_advantages: Vec<f64>,
    pub reward_targets: Vec<f64>,
    pub cost_targets: Vec<f64>,
}

impl RolloutBuffer {
    pub fn with_capacity(n: usize) -> RolloutBuffer {
        RolloutBuffer {
            states: Vec::with_capacity(n),
            actions: Vec::with_capacity(n),
            log_probs: Vec::with_capacity(n),
            rewards: Vec::with_capacity(n),
            costs: Vec::with_capacity(n),
            dones: Vec::with_capacity(n),
            next_states: Vec::with_capacity(n),
            ..Default::default()
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn push(
        &mut self,
        state: Vec<f64>,
        action: Vec<f64>,
        log_prob: f64,
        reward: f64,
        cost: f64,
        done: bool,
        next_state: Vec<f64>,
    ) {
        self.states.push(state);
        self.actions.push(action);
        self.log_probs.push(log_prob);
        self.rewards.push(reward);
        self.costs.push(cost);
        self.dones.push(done);
        self.next_states.push(next_state);
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn clear(&mut self) {
        self.states.clear();
        self.actions.clear();
        self.log_probs.clear();
        self.rewards.clear();
        self.costs.clear();
        self.dones.clear();
        self.next_states.clear();
        self.reward_advantages.clear();
        self.cost_advantages.clear();
        self.reward_targets.clear();
        self.cost_targets.clear();
    }
}

/// Exponentially weighted advantage estimates, truncated at episode
/// boundaries: `A_t = delta_t + gamma lambda (1 - done_t) A_{t+1}` with
/// `delta_t = r_t + gamma (1 - done_t) V(s'_t) - V(s_t)`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    next_values: &[f64],
    dones: &[bool],
    gamma: f64,
    lambda: f64,
) -> Result<Vec<f64>> {
    let n = rewards.len();
    for (name, len) in [
        ("values", values.len()),
        ("next_values", next_values.len()),
        ("dones", dones.len()),
    ] {
        if len != n {
            return Err(Error::LengthMismatch {
                left_name: "rewards",
                left: n,
                right_name: name,
                right: len,
            });
        }
    }
    let mut advantages = vec![0.0f64; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let mask = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * mask * next_values[t] - values[t];
        acc = delta + gamma * lambda * mask * acc;
        advantages[t] = acc;
    }
    Ok(advantages)
}

/// Clipped-surrogate value and per-sample gradient weights.
#[derive(Debug, Clone)]
pub struct Surrogate {
    /// Mean over the batch of min(r A, clip(r) A).
    pub objective: f64,
    /// d(per-sample surrogate)/d(new log-density); zero where clipping or a
    /// non-finite ratio deactivates the sample.
    pub weights: Vec<f64>,
    /// Samples skipped because the likelihood ratio was non-finite.
    pub skipped: usize,
}

pub fn clipped_surrogate(
    new_log_probs: &[f64],
    old_log_probs: &[f64],
    advantages: &[f64],
    clip: f64,
) -> Surrogate {
    let n = new_log_probs.len();
    let mut objective = 0.0;
    let mut weights = vec![0.0f64; n];
    let mut skipped = 0;
    for t in 0..n {
        let ratio = (new_log_probs[t] - old_log_probs[t]).exp();
        if !ratio.is_finite() {
            skipped += 1;
            continue;
        }
        let adv = advantages[t];
        let unclipped = ratio * adv;
        let clipped = ratio.clamp(1.0 - clip, 1.0 + clip) * adv;
        if unclipped <= clipped {
            objective += unclipped;
            weights[t] = ratio * adv;
        } else {
            objective += clipped;
            // the clipped branch has zero slope outside the trust band
            weights[t] = if ratio > 1.0 - clip && ratio < 1.0 + clip {
                ratio * adv
            } else {
                0.0
            };
        }
    }
    Surrogate {
        objective: objective / n as f64,
        weights,
        skipped,
    }
}

/// Multiplier state for the Lagrangian relaxation.
#[derive(Debug, Clone)]
pub struct LagrangeState {
    pub lambda: f64,
    pub lr: f64,
    /// Episode cost budget.
    pub cost_limit: f64,
}

impl LagrangeState {
    pub fn new(lr: f64, cost_limit: f64) -> LagrangeState {
        LagrangeState {
            lambda: 0.0,
            lr,
            cost_limit,
        }
    }

    /// Projected ascent step from the epoch's mean undiscounted episode cost.
    pub fn update(&mut self, mean_episode_cost: f64) {
        self.lambda = (self.lambda + self.lr * (mean_episode_cost - self.cost_limit)).max(0.0);
    }
}

#[derive(Debug, Clone)]
pub struct SrlConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip: f64,
    pub policy_lr: f64,
    pub value_lr: f64,
    pub update_epochs: usize,
    pub minibatch_size: usize,
    pub hidden: usize,
    pub init_log_std: f64,
}

impl Default for SrlConfig {
    fn default() -> Self {
        SrlConfig {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip: 0.2,
            policy_lr: 3e-4,
            value_lr: 1e-3,
            update_epochs: 40,
            minibatch_size: 2000,
            hidden: 64,
            init_log_std: -0.5,
        }
    }
}

/// What one policy update reported back.
#[derive(Debug, Clone)]
pub struct UpdateReport {
    /// Clipped reward surrogate of the last minibatch pass.
    pub reward_objective: f64,
    /// Mean squared error of the reward value head, last pass.
    pub reward_value_loss: f64,
    /// Mean squared error of the cost value head over the final minibatch
    /// pass; drives the safety-layer activation rule.
    pub cost_value_loss: f64,
    pub lambda: f64,
    pub skipped_ratios: usize,
}

/// A PPO or PPO-Lagrangian learner: policy, value head(s), optimizers.
pub struct Learner {
    pub policy: GaussianPolicy,
    pub reward_value: Mlp,
    pub cost_value: Option<Mlp>,
    pub lagrange: Option<LagrangeState>,
    pub cfg: SrlConfig,
    opt_policy_mean: Adam,
    opt_policy_std: Adam,
    opt_reward_value: Adam,
    opt_cost_value: Option<Adam>,
}

impl Learner {
    pub fn new_ppo(
        state_dim: usize,
        action_dim: usize,
        cfg: SrlConfig,
        rng: &mut ChaCha8Rng,
    ) -> Learner {
        Self::build(state_dim, action_dim, cfg, None, rng)
    }

    pub fn new_ppo_lagrangian(
        state_dim: usize,
        action_dim: usize,
        cfg: SrlConfig,
        lagrange: LagrangeState,
        rng: &mut ChaCha8Rng,
    ) -> Learner {
        Self::build(state_dim, action_dim, cfg, Some(lagrange), rng)
    }

    fn build(
        state_dim: usize,
        action_dim: usize,
        cfg: SrlConfig,
        lagrange: Option<LagrangeState>,
        rng: &mut ChaCha8Rng,
    ) -> Learner {
        let policy = GaussianPolicy::new(state_dim, action_dim, cfg.hidden, cfg.init_log_std, rng);
        let reward_value = Mlp::two_hidden(state_dim, cfg.hidden, 1, rng);
        // the cost head is always constructed from the rng stream so ppo and
        // ppo-lagrangian runs share identical policy initializations
        let cost_value = Mlp::two_hidden(state_dim, cfg.hidden, 1, rng);
        let with_cost = lagrange.is_some();
        let opt_policy_mean = Adam::new(policy.mean_net.num_params());
        let opt_policy_std = Adam::new(action_dim);
        let opt_reward_value = Adam::new(reward_value.num_params());
        let opt_cost_value = with_cost.then(|| Adam::new(cost_value.num_params()));
        Learner {
            policy,
            reward_value,
            cost_value: with_cost.then_some(cost_value),
            lagrange,
            cfg,
            opt_policy_mean,
            opt_policy_std,
            opt_reward_value,
            opt_cost_value,
        }
    }

    /// Fill advantages and value targets for both streams, then normalize
    /// the reward advantages.
    pub fn prepare_buffer(&self, buffer: &mut RolloutBuffer) -> Result<()> {
        let n = buffer.len();
        let mut values = Vec::with_capacity(n);
        let mut next_values = Vec::with_capacity(n);
        for t in 0..n {
            values.push(self.reward_value.forward(&buffer.states[t])?[0]);
            next_values.push(self.reward_value.forward(&buffer.next_states[t])?[0]);
        }
        let adv = compute_gae(
            &buffer.rewards,
            &values,
            &next_values,
            &buffer.dones,
            self.cfg.gamma,
            self.cfg.gae_lambda,
        )?;
        buffer.reward_targets = adv.iter().zip(values.iter()).map(|(a, v)| a + v).collect();
        buffer.reward_advantages = normalize(&adv);

        if let Some(cost_net) = &self.cost_value {
            let mut cvalues = Vec::with_capacity(n);
            let mut cnext = Vec::with_capacity(n);
            for t in 0..n {
                cvalues.push(cost_net.forward(&buffer.states[t])?[0]);
                cnext.push(cost_net.forward(&buffer.next_states[t])?[0]);
            }
            let cadv = compute_gae(
                &buffer.costs,
                &cvalues,
                &cnext,
                &buffer.dones,
                self.cfg.gamma,
                self.cfg.gae_lambda,
            )?;
            buffer.cost_targets = cadv
                .iter()
                .zip(cvalues.iter())
                .map(|(a, v)| a + v)
                .collect();
            buffer.cost_advantages = cadv;
        } else {
            buffer.cost_targets = vec![0.0; n];
            buffer.cost_advantages = vec![0.0; n];
        }
        Ok(())
    }

    /// K minibatch epochs of clipped-surrogate ascent and value fitting,
    /// then the multiplier step (Lagrangian only).
    pub fn update(
        &mut self,
        buffer: &RolloutBuffer,
        mean_episode_cost: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<UpdateReport> {
        let n = buffer.len();
        if n == 0 {
            return Err(Error::Empty {
                what: "rollout buffer",
            });
        }
        let lambda = self.lagrange.as_ref().map_or(0.0, |l| l.lambda);
        let mut indices: Vec<usize> = (0..n).collect();
        let mut policy_grads = PolicyGrads::zeros(&self.policy);
        let mut rv_grads = vec![0.0; self.reward_value.num_params()];
        let mut cv_grads = self.cost_value.as_ref().map(|c| vec![0.0; c.num_params()]);

        let mut report = UpdateReport {
            reward_objective: 0.0,
            reward_value_loss: 0.0,
            cost_value_loss: 0.0,
            lambda,
            skipped_ratios: 0,
        };

        for _ in 0..self.cfg.update_epochs {
            indices.shuffle(rng);
            let mut pass_reward_obj = 0.0;
            let mut pass_rv_loss = 0.0;
            let mut pass_cv_loss = 0.0;
            let mut pass_batches = 0usize;

            for batch in indices.chunks(self.cfg.minibatch_size) {
                let m = batch.len() as f64;
                policy_grads.mean_net.fill(0.0);
                policy_grads.log_std.fill(0.0);
                rv_grads.fill(0.0);
                if let Some(g) = cv_grads.as_mut() {
                    g.fill(0.0);
                }

                let mut new_logps = Vec::with_capacity(batch.len());
                let mut traces = Vec::with_capacity(batch.len());
                for &t in batch {
                    let (logp, trace) = self
                        .policy
                        .log_prob_traced(&buffer.states[t], &buffer.actions[t])?;
                    new_logps.push(logp);
                    traces.push(trace);
                }
                let old: Vec<f64> = batch.iter().map(|&t| buffer.log_probs[t]).collect();
                let adv_r: Vec<f64> = batch.iter().map(|&t| buffer.reward_advantages[t]).collect();
                let adv_c: Vec<f64> = batch.iter().map(|&t| buffer.cost_advantages[t]).collect();
                let reward_sur = clipped_surrogate(&new_logps, &old, &adv_r, self.cfg.clip);
                let cost_sur = clipped_surrogate(&new_logps, &old, &adv_c, self.cfg.clip);
                report.skipped_ratios += reward_sur.skipped;
                pass_reward_obj += reward_sur.objective;

                // ascend J_R - lambda J_C: Adam minimizes, so negate
                // ascend (J_R - lambda J_C) / (1 + lambda); the rescaling
                // keeps the step size bounded as the multiplier grows
                for (i, &t) in batch.iter().enumerate() {
                    let w = (reward_sur.weights[i] - lambda * cost_sur.weights[i])
                        / (1.0 + lambda);
                    if w != 0.0 {
                        self.policy.accumulate_traced_grad(
                            &traces[i],
                            &buffer.actions[t],
                            -w / m,
                            &mut policy_grads,
                        )?;
                    }
                }
                self.policy.adam_step(
                    &policy_grads,
                    &mut self.opt_policy_mean,
                    &mut self.opt_policy_std,
                    self.cfg.policy_lr,
                );

                // reward value head
                let mut rv_loss = 0.0;
                for &t in batch {
                    let trace = self.reward_value.forward_traced(&buffer.states[t])?;
                    let v = self.reward_value.traced_output(&trace)[0];
                    let err = v - buffer.reward_targets[t];
                    rv_loss += err * err;
                    self.reward_value
                        .backward(&trace, &[2.0 * err / m], &mut rv_grads)?;
                }
                self.opt_reward_value.step(
                    self.reward_value.params_mut(),
                    &rv_grads,
                    self.cfg.value_lr,
                );
                pass_rv_loss += rv_loss / m;

                // cost value head
                if let (Some(cost_net), Some(grads), Some(opt)) = (
                    self.cost_value.as_mut(),
                    cv_grads.as_mut(),
                    self.opt_cost_value.as_mut(),
                ) {
                    let mut cv_loss = 0.0;
                    for &t in batch {
                        let trace = cost_net.forward_traced(&buffer.states[t])?;
                        let v = cost_net.traced_output(&trace)[0];
                        let err = v - buffer.cost_targets[t];
                        cv_loss += err * err;
                        cost_net.backward(&trace, &[2.0 * err / m], grads)?;
                    }
                    opt.step(cost_net.params_mut(), grads, self.cfg.value_lr);
                    pass_cv_loss += cv_loss / m;
                }
                pass_batches += 1;
            }
            // keep the figures from the final pass over the buffer
            report.reward_objective = pass_reward_obj / pass_batches as f64;
            report.reward_value_loss = pass_rv_loss / pass_batches as f64;
            report.cost_value_loss = pass_cv_loss / pass_batches as f64;
        }

        if let Some(lagrange) = self.lagrange.as_mut() {
            lagrange.update(mean_episode_cost);
            report.lambda = lagrange.lambda;
        }
        Ok(report)
    }
}

fn normalize(xs: &[f64]) -> Vec<f64> {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let std = var.sqrt() + 1e-8;
    xs.iter().map(|x| (x - mean) / std).collect()
}

/// Per-episode aggregates of one epoch buffer. Episodes that did not finish
/// inside the buffer are excluded; if none finished, the whole buffer counts
/// as one episode.
#[derive(Debug, Clone, Copy)]
pub struct EpisodeStats {
    pub mean_reward: f64,
    pub mean_cost: f64,
    pub episodes: usize,
}

pub fn episode_stats(rewards: &[f64], costs: &[f64], dones: &[bool]) -> EpisodeStats {
    let mut completed = 0usize;
    let mut reward_sum = 0.0;
    let mut cost_sum = 0.0;
    let mut ep_reward = 0.0;
    let mut ep_cost = 0.0;
    for t in 0..rewards.len() {
        ep_reward += rewards[t];
        ep_cost += costs[t];
        if dones[t] {
            completed += 1;
            reward_sum += ep_reward;
            cost_sum += ep_cost;
            ep_reward = 0.0;
            ep_cost = 0.0;
        }
    }
    if completed == 0 {
        return EpisodeStats {
            mean_reward: ep_reward,
            mean_cost: ep_cost,
            episodes: 1,
        };
    }
    EpisodeStats {
        mean_reward: reward_sum / completed as f64,
        mean_cost: cost_sum / completed as f64,
        episodes: completed,
    }
}
