use crate::autodiff::{Mat, ParamStore};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    step: i32,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

impl Adam {
    pub fn new(params: &ParamStore, lr: f64) -> Self {
        Adam {
            lr,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    pub fn update(&mut self, params: &mut ParamStore, grads: &[Mat]) {
        assert_eq!(grads.len(), self.m.len(), "one gradient per parameter");
        self.step += 1;
        let c1 = 1.0 - BETA1.powi(self.step);
        let c2 = 1.0 - BETA2.powi(self.step);
        let lr = self.lr;
        for (((p, g), m), v) in params.values_mut().iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = BETA1 * *m + (1.0 - BETA1) * g;
                *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + EPSILON);
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn first_step_moves_by_lr() {
        // bias correction makes the first step exactly lr·sign(g), up to ε
        let mut ps = ParamStore::new();
        ps.add("w", array![[1.0, -2.0]]);
        let mut opt = Adam::new(&ps, 0.1);
        opt.update(&mut ps, &[array![[3.0, -0.5]]]);
        let w = ps.values()[0].clone();
        assert!((w[[0, 0]] - 0.9).abs() < 1e-8);
        assert!((w[[0, 1]] + 1.9).abs() < 1e-7);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut ps = ParamStore::new();
        ps.add("w", array![[5.0]]);
        let mut opt = Adam::new(&ps, 0.05);
        for _ in 0..2000 {
            let g = ps.values()[0].mapv(|w| 2.0 * (w - 1.5));
            opt.update(&mut ps, &[g]);
        }
        assert!((ps.values()[0][[0, 0]] - 1.5).abs() < 1e-3);
    }
}
