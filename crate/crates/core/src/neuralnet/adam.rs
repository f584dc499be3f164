use serde::{Deserialize, Serialize};

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let step = self.lr / c1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let c2_sqrt = c2.sqrt();
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= step * *m / ((*v).sqrt() / c2_sqrt + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut adam = Adam::new(3, 1e-3);
        let mut p = vec![1.0, 1.0, 1.0];
        adam.step(&mut p, &[0.5, -2.0, 1e-3]);
        assert!((p[0] - (1.0 - 1e-3)).abs() < 1e-9);
        assert!((p[1] - (1.0 + 1e-3)).abs() < 1e-9);
        assert!((p[2] - (1.0 - 1e-3)).abs() < 1e-7);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let mut adam = Adam::new(1, 1e-3);
        let mut p = vec![0.0];
        adam.step(&mut p, &[1.0]);
        let (m1, v1) = (adam.first_moment()[0], adam.second_moment()[0]);
        let before = p[0];
        let mut q = p.clone();
        let mut fresh = Adam::new(1, 1e-3);
        fresh.step(&mut q, &[0.0]);
        assert_eq!(q[0], before);
        adam.step(&mut p, &[0.0]);
        assert!((adam.first_moment()[0] - 0.9 * m1).abs() < 1e-15);
        assert!((adam.second_moment()[0] - 0.999 * v1).abs() < 1e-15);
    }

    #[test]
    fn identical_inputs_identical_outputs() {
        let mut a = Adam::new(2, 1e-3);
        let mut b = a.clone();
        let (mut pa, mut pb) = (vec![0.3, -0.2], vec![0.3, -0.2]);
        for g in [[0.1, 0.2], [-0.3, 0.05]] {
            a.step(&mut pa, &g);
            b.step(&mut pb, &g);
        }
        assert_eq!(pa, pb);
        assert_eq!(a, b);
    }
}
