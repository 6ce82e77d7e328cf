//! Adam and plain SGD. Optimizer slots are positional: a network must hand
//! over its parameters in the same order every step.

use super::tensor::Parameter;

/// Adam defaults follow the DCGAN lineage: lr 2e-4, beta1 0.5.
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    slots: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            slots: Vec::new(),
        }
    }

    pub fn default_gan() -> Self {
        Adam::new(2e-4, 0.5, 0.999, 1e-8)
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One update with bias correction. Gradients are read from each
    /// parameter's accumulator and left untouched (caller zeroes them).
    pub fn step(&mut self, params: &mut [&mut Parameter]) {
        if self.slots.is_empty() {
            for p in params.iter() {
                self.slots
                    .push((vec![0.0; p.value.numel()], vec![0.0; p.value.numel()]));
            }
        }
        assert_eq!(self.slots.len(), params.len(), "parameter set changed");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (p, (m, v)) in params.iter_mut().zip(&mut self.slots) {
            let g = p.grad.data();
            for i in 0..g.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p.value.data_mut()[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Plain SGD: p <- p - lr * g.
pub struct Sgd {
    pub lr: f64,
}

impl Sgd {
    pub fn new(lr: f64) -> Self {
        Sgd { lr }
    }

    pub fn step(&mut self, params: &mut [&mut Parameter]) {
        for p in params.iter_mut() {
            let lr = self.lr;
            let grads: Vec<f64> = p.grad.data().to_vec();
            for (val, gv) in p.value.data_mut().iter_mut().zip(&grads) {
                *val -= lr * gv;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tensor::{init_normal, Tensor};
    use approx::assert_abs_diff_eq;

    #[test]
    fn adam_zero_gradient_leaves_params_unchanged() {
        let mut p = Parameter::new("p", Tensor::filled(&[4], 1.5));
        let mut adam = Adam::default_gan();
        for _ in 0..10 {
            p.zero_grad();
            adam.step(&mut [&mut p]);
        }
        for v in p.value.data() {
            assert_eq!(*v, 1.5);
        }
    }

    #[test]
    fn adam_first_step_magnitude_is_lr() {
        // With bias correction, mhat/sqrt(vhat) = sign(g) on step one, so
        // the update is exactly lr (up to eps) against the gradient sign.
        let mut p = Parameter::new("p", Tensor::zeros(&[3]));
        p.grad = Tensor::from_vec(&[3], vec![0.5, -2.0, 10.0]);
        let mut adam = Adam::new(2e-4, 0.5, 0.999, 1e-8);
        adam.step(&mut [&mut p]);
        for (v, g) in p.value.data().iter().zip([0.5f64, -2.0, 10.0]) {
            assert_abs_diff_eq!(*v, -2e-4 * g.signum(), epsilon = 2e-4 * 1e-6);
        }
    }

    #[test]
    fn adam_is_deterministic() {
        let run = || {
            let mut p = Parameter::new("p", Tensor::zeros(&[8]));
            init_normal(&mut p.value, 0.0, 1.0, 5);
            let mut adam = Adam::default_gan();
            for i in 0..50 {
                for (j, g) in p.grad.data_mut().iter_mut().enumerate() {
                    *g = ((i * 7 + j) as f64 * 0.1).sin();
                }
                adam.step(&mut [&mut p]);
            }
            p.value.data().to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn sgd_elementwise_update() {
        let mut p = Parameter::new("p", Tensor::from_vec(&[2], vec![1.0, -1.0]));
        p.grad = Tensor::from_vec(&[2], vec![0.5, 0.25]);
        Sgd::new(0.1).step(&mut [&mut p]);
        assert_abs_diff_eq!(p.value.data()[0], 0.95, epsilon = 1e-15);
        assert_abs_diff_eq!(p.value.data()[1], -1.025, epsilon = 1e-15);

        // lr = 0 leaves parameters unchanged.
        Sgd::new(0.0).step(&mut [&mut p]);
        assert_eq!(p.value.data(), &[0.95, -1.025]);
    }

    #[test]
    fn sgd_converges_on_quadratic_bowl() {
        let target = [3.0, -2.0, 0.5];
        let mut p = Parameter::new("p", Tensor::zeros(&[3]));
        let mut sgd = Sgd::new(0.1);
        let mut steps = 0;
        for _ in 0..500 {
            for i in 0..3 {
                p.grad.data_mut()[i] = 2.0 * (p.value.data()[i] - target[i]);
            }
            sgd.step(&mut [&mut p]);
            steps += 1;
            let err: f64 = p
                .value
                .data()
                .iter()
                .zip(target)
                .map(|(v, t)| (v - t) * (v - t))
                .sum();
            if err < 1e-6 {
                break;
            }
        }
        let err: f64 = p
            .value
            .data()
            .iter()
            .zip(target)
            .map(|(v, t)| (v - t) * (v - t))
            .sum();
        assert!(err < 1e-6, "err {err} after {steps} steps");
    }
}
