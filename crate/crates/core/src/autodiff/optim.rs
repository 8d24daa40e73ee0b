use super::params::{Gradients, ParamSet};

/// Rescales `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_by_global_norm(grads: &mut Gradients, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm > 0.0 {
        grads.scale(max_norm / norm);
    }
    norm
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Gradients,
    v: Gradients,
}

impl Adam {
    pub fn new(params: &ParamSet) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: params.zero_grads(),
            v: params.zero_grads(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &Gradients, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for id in params.ids().collect::<Vec<_>>() {
            let g = grads.get(id).data();
            let m = self.m.get_mut(id).data_mut();
            for (mi, gi) in m.iter_mut().zip(g) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
            }
            let v = self.v.get_mut(id).data_mut();
            for (vi, gi) in v.iter_mut().zip(g) {
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
            }
            let m = self.m.get(id).data();
            let v = self.v.get(id).data();
            let p = params.get_mut(id).data_mut();
            for ((pi, mi), vi) in p.iter_mut().zip(m).zip(v) {
                let mhat = mi / bc1;
                let vhat = vi / bc2;
                *pi -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn scalar_param(v: f64) -> (ParamSet, crate::autodiff::ParamId) {
        let mut ps = ParamSet::new();
        let id = ps.add("w", Tensor::scalar(v));
        (ps, id)
    }

    #[test]
    fn clip_examples() {
        let mut ps = ParamSet::new();
        let id = ps.add("g", Tensor::vector(vec![0.0, 0.0]));
        let mut g = ps.zero_grads();
        g.get_mut(id).data_mut().copy_from_slice(&[0.0, 4.0]);
        assert_eq!(clip_by_global_norm(&mut g, 2.0), 4.0);
        assert_eq!(g.get(id).data(), &[0.0, 2.0]);
        assert!((g.global_norm() - 2.0).abs() < 1e-15);

        g.get_mut(id).data_mut().copy_from_slice(&[0.6, 0.8]);
        clip_by_global_norm(&mut g, 2.0);
        assert_eq!(g.get(id).data(), &[0.6, 0.8]);

        g.zero();
        clip_by_global_norm(&mut g, 2.0);
        assert!(g.is_zero());
    }

    #[test]
    fn first_step_is_lr_sized() {
        let (mut ps, id) = scalar_param(0.0);
        let mut adam = Adam::new(&ps);
        let mut g = ps.zero_grads();
        g.get_mut(id).data_mut()[0] = 1.0;
        adam.step(&mut ps, &g, 0.1);
        let expected = -0.1 * (1.0 / (1.0 + 1e-8));
        assert!((ps.get(id).data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let (mut ps, id) = scalar_param(0.7);
        let mut adam = Adam::new(&ps);
        let g = ps.zero_grads();
        adam.step(&mut ps, &g, 0.1);
        assert_eq!(ps.get(id).data()[0], 0.7);
    }

    #[test]
    fn repeated_gradient_does_not_grow_step() {
        let (mut ps, id) = scalar_param(0.0);
        let mut adam = Adam::new(&ps);
        let mut g = ps.zero_grads();
        g.get_mut(id).data_mut()[0] = 0.3;
        adam.step(&mut ps, &g, 0.01);
        let d1 = ps.get(id).data()[0].abs();
        let before = ps.get(id).data()[0];
        adam.step(&mut ps, &g, 0.01);
        let d2 = (ps.get(id).data()[0] - before).abs();
        assert!(d2 <= d1 * (1.0 + 1e-6));
    }
}
