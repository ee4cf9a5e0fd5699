/// Adam with bias correction; state lives outside the network so one
/// optimizer instance tracks exactly one parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Adam {
    pub fn new(num_params: usize) -> Adam {
        Adam {
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut adam = Adam::new(3);
        let mut params = vec![1.0, -2.0, 0.5];
        let before = params.clone();
        for _ in 0..10 {
            adam.step(&mut params, &[0.0, 0.0, 0.0], 0.1);
        }
        assert_eq!(params, before);
    }

    #[test]
    fn constant_gradient_update_approaches_lr_times_sign() {
        let mut adam = Adam::new(2);
        let mut params = vec![0.0, 0.0];
        let grads = [3.0, -0.02];
        let lr = 1e-3;
        let mut last = params.clone();
        let mut step_sizes = [0.0, 0.0];
        for _ in 0..2000 {
            last.copy_from_slice(&params);
            adam.step(&mut params, &grads, lr);
            step_sizes = [params[0] - last[0], params[1] - last[1]];
        }
        // update -> -lr * sign(g) elementwise
        assert!((step_sizes[0] + lr).abs() < 1e-5, "{:?}", step_sizes);
        assert!((step_sizes[1] - lr).abs() < 1e-5, "{:?}", step_sizes);
    }

    #[test]
    fn quadratic_bowl_reaches_tiny_gradient() {
        // f(x) = 0.5 sum((x - c)^2); gradient x - c.
        let c = [1.0, -2.0, 0.3, 4.0];
        let mut params = vec![0.0; 4];
        let mut adam = Adam::new(4);
        let mut grad_norm = f64::INFINITY;
        let mut steps = 0;
        for s in 0..5000 {
            let grads: Vec<f64> = params.iter().zip(c.iter()).map(|(p, c)| p - c).collect();
            grad_norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
            if grad_norm < 1e-6 {
                steps = s;
                break;
            }
            adam.step(&mut params, &grads, 0.05);
        }
        assert!(
            grad_norm < 1e-6,
            "gradient norm {grad_norm} after 5000 steps"
        );
        assert!(steps <= 5000);
    }
}
