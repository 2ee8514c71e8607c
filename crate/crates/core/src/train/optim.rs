use serde::{Deserialize, Serialize};

use crate::model::TranRdParameters;

/// Adaptive moment estimation with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(parameter_count: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; parameter_count],
            v: vec![0.0; parameter_count],
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, params: &mut TranRdParameters, grads: &TranRdParameters, lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let mut i = 0;
        for (p, g) in params.tensors_mut().into_iter().zip(grads.tensors()) {
            for (w, &gv) in p.iter_mut().zip(g.values) {
                let m = &mut self.m[i];
                let v = &mut self.v[i];
                *m = self.beta1 * *m + (1.0 - self.beta1) * gv;
                *v = self.beta2 * *v + (1.0 - self.beta2) * gv * gv;
                *w -= lr * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
                i += 1;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = TranRdParameters::init(ModelConfig::new(4, 2), 0).unwrap();
        let before = p.flatten();
        let mut g = p.zeros_like();
        g.classifier_b = vec![3.0, -0.5];
        let mut opt = Adam::new(p.parameter_count());
        opt.update(&mut p, &g, 0.01);
        let after = p.flatten();
        let n = after.len();
        // bias-corrected first step is lr * sign(g) (up to eps)
        assert!((after[n - 2] - (before[n - 2] - 0.01)).abs() < 1e-9);
        assert!((after[n - 1] - (before[n - 1] + 0.01)).abs() < 1e-9);
        assert_eq!(&after[..n - 2], &before[..n - 2]);
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn minimizes_quadratic() {
        // minimize sum (b - 1)^2 over the classifier bias
        let mut p = TranRdParameters::init(ModelConfig::new(2, 3), 0).unwrap();
        let mut opt = Adam::new(p.parameter_count());
        for _ in 0..2000 {
            let mut g = p.zeros_like();
            g.classifier_b = p.classifier_b.iter().map(|b| 2.0 * (b - 1.0)).collect();
            opt.update(&mut p, &g, 0.01);
        }
        assert!(
            p.classifier_b.iter().all(|b| (b - 1.0).abs() < 1e-3),
            "{:?}",
            p.classifier_b
        );
    }
}
