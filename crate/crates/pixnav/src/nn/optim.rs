//! Adam with global-norm gradient clipping and a cosine learning-rate
//! schedule with linear warmup.

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use super::{GradStore, Param, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

pub struct Adam<T> {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Option<ArrayD<T>>>,
    v: Vec<Option<ArrayD<T>>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(num_tensors: usize, config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            m: (0..num_tensors).map(|_| None).collect(),
            v: (0..num_tensors).map(|_| None).collect(),
        }
    }

    /// Advances the step counter; call once per optimization step before
    /// `update_param`.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Applies the Adam update to one parameter (no-op without a gradient).
    /// Drive through a model's `visit_params_mut` to keep ordering fixed.
    pub fn update_param(&mut self, param: &mut Param<T>, grads: &GradStore<T>, lr: f64) {
        let Some(g) = grads.get(param.id) else { return };
        let b1 = T::from_f64(self.config.beta1);
        let b2 = T::from_f64(self.config.beta2);
        let one = T::one();
        let eps = T::from_f64(self.config.eps);
        let bias1 = T::from_f64(1.0 - self.config.beta1.powi(self.step as i32));
        let bias2 = T::from_f64(1.0 - self.config.beta2.powi(self.step as i32));
        let lr_t = T::from_f64(lr);
        let m = self.m[param.id].get_or_insert_with(|| ArrayD::zeros(param.value.raw_dim()));
        let v = self.v[param.id].get_or_insert_with(|| ArrayD::zeros(param.value.raw_dim()));
        ndarray::Zip::from(&mut param.value)
            .and(m)
            .and(v)
            .and(g)
            .for_each(|p, m, v, g| {
                *m = b1 * *m + (one - b1) * *g;
                *v = b2 * *v + (one - b2) * *g * *g;
                let mhat = *m / bias1;
                let vhat = *v / bias2;
                *p = *p - lr_t * mhat / (vhat.sqrt() + eps);
            });
    }

    /// Convenience wrapper for flat parameter lists.
    pub fn step_params(&mut self, params: Vec<&mut Param<T>>, grads: &GradStore<T>, lr: f64) {
        self.begin_step();
        for param in params {
            self.update_param(param, grads, lr);
        }
    }

    /// Raw state access for checkpointing: (step, moment1, moment2) per id.
    pub fn state(&self) -> (u64, &[Option<ArrayD<T>>], &[Option<ArrayD<T>>]) {
        (self.step, &self.m, &self.v)
    }

    pub fn restore(&mut self, step: u64, m: Vec<Option<ArrayD<T>>>, v: Vec<Option<ArrayD<T>>>) {
        self.step = step;
        self.m = m;
        self.v = v;
    }
}

/// Scales gradients in place so the global L2 norm is at most `max_norm`;
/// returns the pre-clip norm.
pub fn clip_global_norm<T: Scalar>(grads: &mut GradStore<T>, max_norm: f64) -> f64 {
    let mut sq = 0.0f64;
    for id in 0..grads.len() {
        if let Some(g) = grads.get(id) {
            sq += g.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>();
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        grads.scale(T::from_f64(max_norm / norm));
    }
    norm
}

/// Linear warmup then cosine decay to `min_frac` of the base rate.
pub fn cosine_lr(base: f64, step: u64, total_steps: u64, warmup: u64, min_frac: f64) -> f64 {
    if warmup > 0 && step < warmup {
        return base * (step + 1) as f64 / warmup as f64;
    }
    let total = total_steps.max(warmup + 1);
    let progress = (step - warmup) as f64 / (total - warmup) as f64;
    let progress = progress.clamp(0.0, 1.0);
    let cos = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
    base * (min_frac + (1.0 - min_frac) * cos)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Init, ParamBuilder};

    #[test]
    fn adam_descends_quadratic() {
        let mut b = ParamBuilder::<f64>::new(0);
        let mut p = b.tensor("x", &[2], Init::Ones);
        p.value[[0]] = 5.0;
        p.value[[1]] = -3.0;
        let mut opt = Adam::new(1, AdamConfig::default());
        for _ in 0..500 {
            let mut grads = GradStore::new(1);
            let g = p.value.mapv(|v| 2.0 * v); // d/dx of x^2
            grads.accum(&p, &g);
            opt.step_params(vec![&mut p], &grads, 0.05);
        }
        assert!(p.value.iter().all(|v| v.abs() < 1e-2), "{:?}", p.value);
    }

    #[test]
    fn clip_bounds_norm() {
        let mut b = ParamBuilder::<f64>::new(0);
        let p = b.tensor("x", &[3], Init::Zeros);
        let mut grads = GradStore::new(1);
        grads.accum(&p, &ndarray::array![3.0, 4.0, 0.0].into_dyn());
        let norm = clip_global_norm(&mut grads, 1.0);
        assert!((norm - 5.0).abs() < 1e-12);
        let clipped = grads.get(p.id).unwrap();
        let new_norm: f64 = clipped.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((new_norm - 1.0).abs() < 1e-9);
    }

    #[test]
    fn cosine_schedule_shape() {
        let base = 3e-4;
        assert!((cosine_lr(base, 0, 1000, 100, 0.0) - base / 100.0).abs() < 1e-12);
        assert!((cosine_lr(base, 99, 1000, 100, 0.0) - base).abs() < 1e-12);
        assert!(cosine_lr(base, 550, 1000, 100, 0.0) < base);
        assert!(cosine_lr(base, 999, 1000, 100, 0.0) < 0.01 * base);
    }
}
