use crate::{Gradients, Mat, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adaptive-moment optimizer with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    first: Vec<Mat>,
    second: Vec<Mat>,
    step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros: Vec<Mat> = store.ids().map(|id| Mat::zeros(store.get(id).dim())).collect();
        Adam {
            config,
            first: zeros.clone(),
            second: zeros,
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update. Parameters without a gradient are left untouched.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) {
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (id, g) in grads.iter() {
            let m = &mut self.first[id.index()];
            let v = &mut self.second[id.index()];
            let p = store.get_mut(id);
            ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let mhat = *m / c1;
                let vhat = *v / c2;
                *p -= lr * mhat / (vhat.sqrt() + eps);
            });
        }
    }
}

/// Rescales `grads` in place so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut Gradients, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm > 0.0 {
        let f = max_norm / norm;
        for (_, g) in grads.iter_mut() {
            g.mapv_inplace(|x| x * f);
        }
    }
    norm
}
