//! Minimal reverse-mode autodiff engine: explicit layers that cache their
//! forward activations and replay them in exact reverse order on backward.
//! 64-bit values throughout so finite-difference checks are decisive.

mod gemm;
mod layers;
mod optim;
mod tensor;

pub use gemm::{matmul, matmul_acc, matmul_bt_acc, transpose};
pub use layers::{
    conv_out_size, ActKind, Activation, BatchNorm2d, Conv2d, ConvTranspose2d, Dense, Dropout,
};
pub use optim::{Adam, Sgd};
pub use tensor::{concat_channels, init_normal, split_channels, Parameter, Tensor};

/// Forward-pass mode. `TrainFrozen` behaves like training but re-uses the
/// last dropout mask, which makes finite-difference probing well-defined.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    TrainFrozen,
    Eval,
}

/// A differentiable block: forward caches what backward needs; backward
/// consumes the cache and accumulates parameter gradients.
pub trait DiffModule {
    fn forward_t(&mut self, x: &Tensor, mode: Mode) -> Tensor;
    fn backward_t(&mut self, grad_out: &Tensor) -> Tensor;
    fn params_mut(&mut self) -> Vec<&mut Parameter>;
}

#[derive(Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    pub worst: String,
}

/// Central finite differences against the backward pass, on every input
/// element and every parameter element. The probe loss is a fixed random
/// weighting of the outputs.
pub fn grad_check<M: DiffModule>(module: &mut M, input_shape: &[usize], seed: u64) -> GradCheckReport {
    let h = 1e-5;
    let x = Tensor::randn(input_shape, seed);
    let probe = {
        let mut m = module.forward_t(&x, Mode::TrainFrozen);
        // Fix the loss weights to the output shape.
        let w = Tensor::randn(m.shape(), seed ^ 0x9e37_79b9);
        let _ = &mut m;
        w
    };
    let loss = |out: &Tensor| -> f64 {
        out.data()
            .iter()
            .zip(probe.data())
            .map(|(a, b)| a * b)
            .sum()
    };

    // Analytic pass.
    for p in module.params_mut() {
        p.zero_grad();
    }
    let out = module.forward_t(&x, Mode::TrainFrozen);
    let analytic_input = module.backward_t(&probe);
    let _ = loss(&out);

    let mut max_rel_err = 0.0f64;
    let mut worst = String::new();
    let mut checked = 0usize;

    let mut consider = |analytic: f64, numeric: f64, what: String| {
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        if rel > max_rel_err {
            max_rel_err = rel;
            worst = format!("{what}: analytic {analytic} vs numeric {numeric}");
        }
    };

    // Input elements.
    let mut xp = x.clone();
    for i in 0..x.numel() {
        let orig = xp.data()[i];
        xp.data_mut()[i] = orig + h;
        let lp = loss(&module.forward_t(&xp, Mode::TrainFrozen));
        xp.data_mut()[i] = orig - h;
        let lm = loss(&module.forward_t(&xp, Mode::TrainFrozen));
        xp.data_mut()[i] = orig;
        consider(analytic_input.data()[i], (lp - lm) / (2.0 * h), format!("input[{i}]"));
        checked += 1;
    }

    // Parameter elements. Snapshot analytic grads first, then perturb.
    let analytic_params: Vec<(String, Vec<f64>)> = module
        .params_mut()
        .iter()
        .map(|p| (p.name.clone(), p.grad.data().to_vec()))
        .collect();
    let n_params = analytic_params.len();
    for pi in 0..n_params {
        let n_el = analytic_params[pi].1.len();
        for i in 0..n_el {
            {
                let mut ps = module.params_mut();
                let v = ps[pi].value.data()[i];
                ps[pi].value.data_mut()[i] = v + h;
            }
            let lp = loss(&module.forward_t(&x, Mode::TrainFrozen));
            {
                let mut ps = module.params_mut();
                let v = ps[pi].value.data()[i];
                ps[pi].value.data_mut()[i] = v - 2.0 * h;
            }
            let lm = loss(&module.forward_t(&x, Mode::TrainFrozen));
            {
                let mut ps = module.params_mut();
                let v = ps[pi].value.data()[i];
                ps[pi].value.data_mut()[i] = v + h;
            }
            consider(
                analytic_params[pi].1[i],
                (lp - lm) / (2.0 * h),
                format!("{}[{i}]", analytic_params[pi].0),
            );
            checked += 1;
        }
    }

    GradCheckReport {
        max_rel_err,
        checked,
        worst,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// End-to-end engine sanity: a 3-layer dense net fits y = 2x + 1.
    #[test]
    fn toy_regression_converges() {
        let mut l1 = Dense::new("l1", 1, 16);
        let mut a1 = Activation::new(ActKind::Relu);
        let mut l2 = Dense::new("l2", 16, 16);
        let mut a2 = Activation::new(ActKind::Relu);
        let mut l3 = Dense::new("l3", 16, 1);
        init_normal(&mut l1.w.value, 0.0, 0.5, 1);
        init_normal(&mut l2.w.value, 0.0, 0.5, 2);
        init_normal(&mut l3.w.value, 0.0, 0.5, 3);

        let xs: Vec<f64> = (0..64).map(|i| -1.0 + 2.0 * i as f64 / 63.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        let x = Tensor::from_vec(&[64, 1], xs);
        let y = Tensor::from_vec(&[64, 1], ys);

        let mut adam = Adam::new(0.01, 0.9, 0.999, 1e-8);
        let mut mse = f64::INFINITY;
        for step in 0..2000 {
            let h1 = a1.forward(&l1.forward(&x, Mode::Train), Mode::Train);
            let h2 = a2.forward(&l2.forward(&h1, Mode::Train), Mode::Train);
            let out = l3.forward(&h2, Mode::Train);

            let n = out.numel() as f64;
            mse = out
                .data()
                .iter()
                .zip(y.data())
                .map(|(o, t)| (o - t) * (o - t))
                .sum::<f64>()
                / n;
            if mse < 1e-3 {
                assert!(step <= 2000);
                break;
            }
            let grad = Tensor::from_vec(
                &[64, 1],
                out.data()
                    .iter()
                    .zip(y.data())
                    .map(|(o, t)| 2.0 * (o - t) / n)
                    .collect(),
            );
            for p in l1
                .params_mut()
                .into_iter()
                .chain(l2.params_mut())
                .chain(l3.params_mut())
            {
                p.zero_grad();
            }
            let g2 = l3.backward(&grad);
            let g1 = l2.backward(&a2.backward(&g2));
            l1.backward(&a1.backward(&g1));
            let mut params = l1.params_mut();
            params.extend(l2.params_mut());
            params.extend(l3.params_mut());
            adam.step(&mut params);
        }
        assert!(mse < 1e-3, "final MSE {mse}");
    }

    #[test]
    fn forward_is_pure_given_mode_and_seed() {
        let mut conv = Conv2d::new("c", 2, 3, 5, 2, 2);
        init_normal(&mut conv.w.value, 0.0, 0.2, 11);
        let x = Tensor::randn(&[1, 2, 8, 8], 4);
        let a = conv.forward(&x, Mode::Eval);
        let b = conv.forward(&x, Mode::Eval);
        assert_eq!(a.data(), b.data());
    }
}
