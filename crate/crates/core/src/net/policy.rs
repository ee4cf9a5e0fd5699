use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Adam, Mlp, Trace};
use crate::rng::standard_normal;
use crate::Result;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
const LN_2PI: f64 = 1.8378770664093453;

/// Diagonal Gaussian policy: an MLP for the mean plus a state-independent
/// learnable log standard deviation per action dimension.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaussianPolicy {
    pub mean_net: Mlp,
    pub log_std: Vec<f64>,
}

/// Gradients for both parameter groups of a [`GaussianPolicy`].
#[derive(Debug, Clone)]
pub struct PolicyGrads {
    pub mean_net: Vec<f64>,
    pub log_std: Vec<f64>,
}

impl PolicyGrads {
    pub fn zeros(policy: &GaussianPolicy) -> PolicyGrads {
        PolicyGrads {
            mean_net: vec![0.0; policy.mean_net.num_params()],
            log_std: vec![0.0; policy.log_std.len()],
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.mean_net.iter_mut() {
            *g *= factor;
        }
        for g in self.log_std.iter_mut() {
            *g *= factor;
        }
    }
}

impl GaussianPolicy {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        hidden: usize,
        init_log_std: f64,
        rng: &mut R,
    ) -> GaussianPolicy {
        GaussianPolicy {
            mean_net: Mlp::two_hidden(state_dim, hidden, action_dim, rng),
            log_std: vec![init_log_std; action_dim],
        }
    }

    pub fn action_dim(&self) -> usize {
        self.log_std.len()
    }

    pub fn mean(&self, state: &[f64]) -> Result<Vec<f64>> {
        self.mean_net.forward(state)
    }

    /// Draw `action = mean + sigma .* z` and return its log-density.
    pub fn sample<R: Rng + ?Sized>(&self, state: &[f64], rng: &mut R) -> Result<(Vec<f64>, f64)> {
        let mean = self.mean(state)?;
        let mut action = Vec::with_capacity(mean.len());
        for (i, m) in mean.iter().enumerate() {
            let z = standard_normal(rng);
            action.push(m + self.log_std[i].exp() * z);
        }
        let logp = self.log_prob_given_mean(&mean, &action);
        Ok((action, logp))
    }

    pub fn log_prob(&self, state: &[f64], action: &[f64]) -> Result<f64> {
        let mean = self.mean(state)?;
        Ok(self.log_prob_given_mean(&mean, action))
    }

    fn log_prob_given_mean(&self, mean: &[f64], action: &[f64]) -> f64 {
        let mut logp = -0.5 * LN_2PI * mean.len() as f64;
        for i in 0..mean.len() {
            let log_sigma = self.log_std[i];
            let sigma = log_sigma.exp();
            let z = (action[i] - mean[i]) / sigma;
            logp -= log_sigma + 0.5 * z * z;
        }
        logp
    }

    /// Log-density plus the cached mean-net forward pass, for callers that
    /// decide the gradient weight after seeing the density.
    pub fn log_prob_traced(&self, state: &[f64], action: &[f64]) -> Result<(f64, Trace)> {
        let trace = self.mean_net.forward_traced(state)?;
        let mean = self.mean_net.traced_output(&trace);
        Ok((self.log_prob_given_mean(mean, action), trace))
    }

    /// Accumulate `weight * d logp / d theta` into `grads`, reusing the
    /// forward pass from [`GaussianPolicy::log_prob_traced`].
    pub fn accumulate_traced_grad(
        &self,
        trace: &Trace,
        action: &[f64],
        weight: f64,
        grads: &mut PolicyGrads,
    ) -> Result<()> {
        let mean = self.mean_net.traced_output(trace);
        let n = mean.len();
        let mut mean_grad = vec![0.0; n];
        for i in 0..n {
            let log_sigma = self.log_std[i];
            let inv_var = (-2.0 * log_sigma).exp();
            let diff = action[i] - mean[i];
            // d logp / d mean_i and d logp / d log_sigma_i
            mean_grad[i] = weight * diff * inv_var;
            grads.log_std[i] += weight * (diff * diff * inv_var - 1.0);
        }
        self.mean_net
            .backward(trace, &mean_grad, &mut grads.mean_net)?;
        Ok(())
    }

    /// Log-density of `action`, while accumulating `weight * d logp / d theta`
    /// into `grads`. One call per sample; the caller averages.
    pub fn accumulate_log_prob_grad(
        &self,
        state: &[f64],
        action: &[f64],
        weight: f64,
        grads: &mut PolicyGrads,
    ) -> Result<f64> {
        let (logp, trace) = self.log_prob_traced(state, action)?;
        self.accumulate_traced_grad(&trace, action, weight, grads)?;
        Ok(logp)
    }

    /// Apply one optimizer step to both parameter groups and re-clamp log-std.
    pub fn adam_step(
        &mut self,
        grads: &PolicyGrads,
        mean_opt: &mut Adam,
        log_std_opt: &mut Adam,
        lr: f64,
    ) {
        mean_opt.step(self.mean_net.params_mut(), &grads.mean_net, lr);
        log_std_opt.step(&mut self.log_std, &grads.log_std, lr);
        self.clamp_log_std();
    }

    pub fn clamp_log_std(&mut self) {
        for ls in self.log_std.iter_mut() {
            *ls = ls.clamp(LOG_STD_MIN, LOG_STD_MAX);
        }
    }
}
