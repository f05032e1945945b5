//! Adam with bias correction, operating on flat lists of parameter tensors.

use crate::tensor::Tensor;

/// First/second-moment state for one fixed, ordered set of parameters.
/// `step` must always be called with that same order — the state vectors
/// are positional.
#[derive(Debug)]
pub struct AdamState {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(lr: f64, shapes: &[(usize, usize)]) -> Self {
        AdamState::with_hyperparams(lr, 0.9, 0.999, 1e-8, shapes)
    }

    pub fn with_hyperparams(
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        shapes: &[(usize, usize)],
    ) -> Self {
        assert!(lr > 0.0 && (0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2));
        let m = shapes.iter().map(|&(r, c)| Tensor::zeros(r, c)).collect();
        let v = shapes.iter().map(|&(r, c)| Tensor::zeros(r, c)).collect();
        AdamState { lr, beta1, beta2, eps, t: 0, m, v }
    }

    pub fn param_count(&self) -> usize {
        self.m.len()
    }

    /// One update over all parameters. `params[i]` and `grads[i]` must match
    /// the shape given for slot `i` at construction.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[&Tensor]) {
        assert_eq!(params.len(), self.m.len(), "parameter count is fixed at construction");
        assert_eq!(grads.len(), self.m.len(), "need one gradient per parameter");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in
            params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            assert_eq!(p.shape(), m.shape(), "parameter shape drifted");
            assert_eq!(g.shape(), m.shape(), "gradient shape drifted");
            let (pd, gd) = (p.data_mut(), g.data());
            let (md, vd) = (m.data_mut(), v.data_mut());
            for i in 0..pd.len() {
                md[i] = self.beta1 * md[i] + (1.0 - self.beta1) * gd[i];
                vd[i] = self.beta2 * vd[i] + (1.0 - self.beta2) * gd[i] * gd[i];
                let m_hat = md[i] / bc1;
                let v_hat = vd[i] / bc2;
                pd[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// In-place lower clamp; the propagation edge weights use it to stay
/// non-negative after every optimizer step.
pub fn clamp_min(t: &mut Tensor, min: f64) {
    for x in t.data_mut() {
        if *x < min {
            *x = min;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_regardless_of_gradient_scale() {
        // Bias correction makes the first update ≈ −lr·sign(g); the eps in
        // the denominator shaves it slightly for the smallest gradient.
        for g0 in [1e-4, 1.0, 1e4] {
            let mut adam = AdamState::new(0.1, &[(1, 1)]);
            let mut p = Tensor::from_vec(1, 1, vec![5.0]);
            let g = Tensor::from_vec(1, 1, vec![g0]);
            adam.step(&mut [&mut p], &[&g]);
            assert!((p.data()[0] - (5.0 - 0.1)).abs() < 1e-4, "grad {g0} moved to {}", p.data()[0]);
        }
    }

    #[test]
    fn converges_on_a_quadratic() {
        // f(x, y) = x² + 10y², minimized at the origin.
        let mut adam = AdamState::new(0.05, &[(1, 2)]);
        let mut p = Tensor::from_vec(1, 2, vec![1.5, -2.0]);
        for _ in 0..2000 {
            let g = Tensor::from_vec(1, 2, vec![2.0 * p.data()[0], 20.0 * p.data()[1]]);
            adam.step(&mut [&mut p], &[&g]);
        }
        assert!(p.data()[0].abs() < 1e-3 && p.data()[1].abs() < 1e-3, "ended at {:?}", p.data());
    }

    #[test]
    fn ten_steps_on_scalar_quadratic_shrink_monotonically() {
        // f(x) = x² from x = 1 at lr 0.1: |x| strictly decreases every step.
        let mut adam = AdamState::new(0.1, &[(1, 1)]);
        let mut p = Tensor::from_vec(1, 1, vec![1.0]);
        let mut prev = 1.0f64;
        for step in 0..10 {
            let g = Tensor::from_vec(1, 1, vec![2.0 * p.data()[0]]);
            adam.step(&mut [&mut p], &[&g]);
            let cur = p.data()[0].abs();
            assert!(cur < prev, "step {step}: |x| went {prev} -> {cur}");
            prev = cur;
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters_alone() {
        let mut adam = AdamState::new(0.1, &[(2, 2)]);
        let mut p = Tensor::from_fn(2, 2, |r, c| (r + c) as f64);
        let before = p.clone();
        let g = Tensor::zeros(2, 2);
        for _ in 0..3 {
            adam.step(&mut [&mut p], &[&g]);
        }
        assert_eq!(p.data(), before.data());
    }

    #[test]
    fn clamp_min_floors_values() {
        let mut t = Tensor::from_vec(1, 4, vec![-1.0, 0.0, 0.5, 2.0]);
        clamp_min(&mut t, 0.0);
        assert_eq!(t.data(), &[0.0, 0.0, 0.5, 2.0]);
    }
}
