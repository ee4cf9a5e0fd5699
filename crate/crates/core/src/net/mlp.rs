use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dot;
use crate::{Error, Result};

/// Per-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the post-activation value.
    #[inline]
    fn deriv_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

/// Fully connected network with a flat parameter vector.
///
/// Layer `l` maps `sizes[l]` inputs to `sizes[l+1]` outputs. Its weights are
/// stored row-major (one row per output unit) followed by its biases.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    acts: Vec<Activation>,
    params: Vec<f64>,
}

/// Cached forward pass: the input to every layer plus the final output.
/// `backward` consumes this; it refuses traces from a different topology.
#[derive(Debug, Clone)]
pub struct Trace {
    /// `layer_inputs[l]` is the activation vector fed into layer `l`;
    /// the last entry is the network output.
    layer_inputs: Vec<Vec<f64>>,
    sizes_fingerprint: u64,
}

fn fingerprint(sizes: &[usize]) -> u64 {
    sizes.iter().fold(0xcbf29ce484222325u64, |h, &s| {
        (h ^ s as u64).wrapping_mul(0x100000001b3)
    })
}

impl Mlp {
    /// Random init: weights uniform in ±sqrt(6 / (fan_in + fan_out)), zero biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], acts: &[Activation], rng: &mut R) -> Mlp {
        assert!(sizes.len() >= 2, "need at least input and output sizes");
        assert_eq!(acts.len(), sizes.len() - 1, "one activation per layer");
        let mut params = Vec::new();
        for l in 0..sizes.len() - 1 {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                params.push(rng.random_range(-bound..bound));
            }
            params.extend(std::iter::repeat(0.0).take(fan_out));
        }
        Mlp {
            sizes: sizes.to_vec(),
            acts: acts.to_vec(),
            params,
        }
    }

    /// Two tanh hidden layers and a linear head; the shape used for every
    /// policy, value and mapper network in this crate.
    pub fn two_hidden<R: Rng + ?Sized>(
        input: usize,
        hidden: usize,
        output: usize,
        rng: &mut R,
    ) -> Mlp {
        Mlp::new(
            &[input, hidden, hidden, output],
            &[Activation::Tanh, Activation::Tanh, Activation::Identity],
            rng,
        )
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// (weights offset, biases offset, fan_in, fan_out) for layer `l`.
    fn layer_offsets(&self, layer: usize) -> (usize, usize, usize, usize) {
        let mut off = 0;
        for l in 0..layer {
            off += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
        }
        let (fan_in, fan_out) = (self.sizes[layer], self.sizes[layer + 1]);
        (off, off + fan_in * fan_out, fan_in, fan_out)
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.sizes[0] {
            return Err(Error::ShapeMismatch {
                expected: self.sizes[0],
                got: input.len(),
            });
        }
        let mut cur = input.to_vec();
        for l in 0..self.sizes.len() - 1 {
            cur = self.layer_forward(l, &cur);
        }
        Ok(cur)
    }

    fn layer_forward(&self, layer: usize, input: &[f64]) -> Vec<f64> {
        let (w_off, b_off, fan_in, fan_out) = self.layer_offsets(layer);
        let act = self.acts[layer];
        let mut out = Vec::with_capacity(fan_out);
        for o in 0..fan_out {
            let row = &self.params[w_off + o * fan_in..w_off + (o + 1) * fan_in];
            let z = dot(row, input) + self.params[b_off + o];
            out.push(act.apply(z));
        }
        out
    }

    /// Forward pass that keeps the per-layer activations for `backward`.
    pub fn forward_traced(&self, input: &[f64]) -> Result<Trace> {
        if input.len() != self.sizes[0] {
            return Err(Error::ShapeMismatch {
                expected: self.sizes[0],
                got: input.len(),
            });
        }
        let mut layer_inputs = Vec::with_capacity(self.sizes.len());
        layer_inputs.push(input.to_vec());
        for l in 0..self.sizes.len() - 1 {
            let next = self.layer_forward(l, layer_inputs.last().unwrap());
            layer_inputs.push(next);
        }
        Ok(Trace {
            layer_inputs,
            sizes_fingerprint: fingerprint(&self.sizes),
        })
    }

    /// Network output stored in a trace.
    pub fn traced_output<'t>(&self, trace: &'t Trace) -> &'t [f64] {
        trace.layer_inputs.last().unwrap()
    }

    /// Reverse-mode gradients of `sum(out_grad . output)` with respect to all
    /// parameters, accumulated into `param_grads` (scaled by 1). Returns the
    /// gradient with respect to the input.
    pub fn backward(
        &self,
        trace: &Trace,
        out_grad: &[f64],
        param_grads: &mut [f64],
    ) -> Result<Vec<f64>> {
        if trace.sizes_fingerprint != fingerprint(&self.sizes)
            || trace.layer_inputs.len() != self.sizes.len()
        {
            return Err(Error::Degenerate {
                why: "stale trace: topology changed since forward".into(),
            });
        }
        if out_grad.len() != self.output_dim() {
            return Err(Error::ShapeMismatch {
                expected: self.output_dim(),
                got: out_grad.len(),
            });
        }
        if param_grads.len() != self.params.len() {
            return Err(Error::ShapeMismatch {
                expected: self.params.len(),
                got: param_grads.len(),
            });
        }

        let mut delta = out_grad.to_vec();
        for layer in (0..self.sizes.len() - 1).rev() {
            let (w_off, b_off, fan_in, fan_out) = self.layer_offsets(layer);
            let act = self.acts[layer];
            let input = &trace.layer_inputs[layer];
            let output = &trace.layer_inputs[layer + 1];

            // d(loss)/d(pre-activation)
            for (d, &y) in delta.iter_mut().zip(output.iter()) {
                *d *= act.deriv_from_output(y);
            }

            let mut input_grad = vec![0.0; fan_in];
            for o in 0..fan_out {
                let g = delta[o];
                param_grads[b_off + o] += g;
                let row_w = &self.params[w_off + o * fan_in..w_off + (o + 1) * fan_in];
                let row_g = &mut param_grads[w_off + o * fan_in..w_off + (o + 1) * fan_in];
                for i in 0..fan_in {
                    row_g[i] += g * input[i];
                    input_grad[i] += g * row_w[i];
                }
            }
            delta = input_grad;
        }
        Ok(delta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    /// Independent forward pass used as an oracle: plain nested loops over an
    /// explicit weight-matrix representation.
    fn reference_forward(net: &Mlp, input: &[f64]) -> Vec<f64> {
        let sizes = net.sizes().to_vec();
        let mut cur = input.to_vec();
        let mut cursor = 0usize;
        let p = net.params();
        for l in 0..sizes.len() - 1 {
            let (nin, nout) = (sizes[l], sizes[l + 1]);
            let w = &p[cursor..cursor + nin * nout];
            let b = &p[cursor + nin * nout..cursor + nin * nout + nout];
            cursor += nin * nout + nout;
            let mut next = vec![0.0; nout];
            for o in 0..nout {
                let mut z = b[o];
                for i in 0..nin {
                    z += w[o * nin + i] * cur[i];
                }
                next[o] = match net.acts[l] {
                    Activation::Tanh => z.tanh(),
                    Activation::Identity => z,
                };
            }
            cur = next;
        }
        cur
    }

    #[test]
    fn zero_params_tanh_outputs_zero() {
        let mut rng = stream(0, 0);
        let mut net = Mlp::two_hidden(4, 8, 3, &mut rng);
        net.params_mut().fill(0.0);
        let out = net.forward(&[1.0, -2.0, 0.5, 3.0]).unwrap();
        assert!(out.iter().all(|&y| y == 0.0));
    }

    #[test]
    fn identity_initialized_linear_layer_is_identity() {
        let mut rng = stream(0, 1);
        let mut net = Mlp::new(&[3, 3], &[Activation::Identity], &mut rng);
        net.params_mut().fill(0.0);
        for i in 0..3 {
            net.params_mut()[i * 3 + i] = 1.0;
        }
        let x = [0.3, -1.7, 2.0];
        let out = net.forward(&x).unwrap();
        assert_eq!(out, x.to_vec());
    }

    #[test]
    fn forward_matches_reference_oracle() {
        let mut rng = stream(42, 2);
        let net = Mlp::two_hidden(6, 16, 2, &mut rng);
        for trial in 0..20 {
            let x: Vec<f64> = (0..6).map(|i| ((trial * 7 + i) as f64).sin()).collect();
            let got = net.forward(&x).unwrap();
            let want = reference_forward(&net, &x);
            for (g, w) in got.iter().zip(want.iter()) {
                assert!((g - w).abs() < 1e-12, "{g} vs {w}");
            }
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut rng = stream(0, 3);
        let net = Mlp::two_hidden(4, 8, 1, &mut rng);
        assert!(net.forward(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn stale_trace_rejected() {
        let mut rng = stream(0, 4);
        let net_a = Mlp::two_hidden(4, 8, 1, &mut rng);
        let net_b = Mlp::two_hidden(4, 16, 1, &mut rng);
        let trace = net_a.forward_traced(&[0.1, 0.2, 0.3, 0.4]).unwrap();
        let mut grads = vec![0.0; net_b.num_params()];
        assert!(net_b.backward(&trace, &[1.0], &mut grads).is_err());
    }

    #[test]
    fn zero_output_grad_gives_zero_param_grads() {
        let mut rng = stream(9, 5);
        let net = Mlp::two_hidden(5, 12, 3, &mut rng);
        let trace = net.forward_traced(&[0.1, -0.4, 0.9, 0.0, 2.0]).unwrap();
        let mut grads = vec![0.0; net.num_params()];
        net.backward(&trace, &[0.0, 0.0, 0.0], &mut grads).unwrap();
        assert!(grads.iter().all(|&g| g == 0.0));
    }

    /// Central finite differences on the scalar loss `sum(w . output)`.
    pub(crate) fn finite_difference_check(net: &mut Mlp, input: &[f64], loss_w: &[f64]) {
        let h = 1e-5;
        let trace = net.forward_traced(input).unwrap();
        let mut grads = vec![0.0; net.num_params()];
        net.backward(&trace, loss_w, &mut grads).unwrap();

        let loss = |net: &Mlp| -> f64 {
            let out = net.forward(input).unwrap();
            out.iter().zip(loss_w.iter()).map(|(o, w)| o * w).sum()
        };
        for p in 0..net.num_params() {
            let orig = net.params()[p];
            net.params_mut()[p] = orig + h;
            let plus = loss(net);
            net.params_mut()[p] = orig - h;
            let minus = loss(net);
            net.params_mut()[p] = orig;
            let fd = (plus - minus) / (2.0 * h);
            let an = grads[p];
            let denom = fd.abs().max(an.abs()).max(1e-4);
            assert!(
                (fd - an).abs() / denom < 1e-4,
                "param {p}: fd {fd} vs backprop {an}"
            );
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = stream(7, 6);
        let mut net = Mlp::two_hidden(4, 10, 2, &mut rng);
        let input = [0.3, -0.8, 1.2, 0.05];
        finite_difference_check(&mut net, &input, &[1.0, -0.5]);
    }

    #[test]
    fn linear_net_at_least_squares_optimum_has_zero_gradient() {
        // y = w x fit to a single sample with w at the exact optimum.
        let mut rng = stream(3, 7);
        let mut net = Mlp::new(&[1, 1], &[Activation::Identity], &mut rng);
        net.params_mut()[0] = 2.0; // weight
        net.params_mut()[1] = 0.0; // bias
        let (x, target) = (1.5, 3.0);
        let trace = net.forward_traced(&[x]).unwrap();
        let out = net.traced_output(&trace)[0];
        // d(0.5 (out - target)^2)/d out
        let mut grads = vec![0.0; 2];
        net.backward(&trace, &[out - target], &mut grads).unwrap();
        assert!(grads.iter().all(|&g| g.abs() < 1e-10));
    }
}
