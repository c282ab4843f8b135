//! Adaptive-moment optimizer with decoupled weight decay, and the linear
//! warm-up then decay learning-rate schedule.

use starner_core::numerics::{Gradients, ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub peak: f64,
    pub total_steps: usize,
    pub warmup_steps: usize,
}

impl Schedule {
    pub fn new(peak: f64, total_steps: usize, warmup_fraction: f64) -> Self {
        Self {
            peak,
            total_steps,
            warmup_steps: (warmup_fraction * total_steps as f64).round() as usize,
        }
    }

    /// Rate for 0-based step `step`: climbs linearly to `peak` over the
    /// warm-up steps, then falls linearly to zero at `total_steps`.
    pub fn rate(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            self.peak * (step + 1) as f64 / self.warmup_steps as f64
        } else {
            let left = self.total_steps.saturating_sub(step) as f64;
            let span = (self.total_steps - self.warmup_steps).max(1) as f64;
            self.peak * left / span
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamW {
    pub fn new(store: &ParamStore, weight_decay: f64) -> Self {
        let zeros: Vec<Tensor> = store.iter().map(|(_, p)| Tensor::zeros_like(&p.tensor)).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One update at learning rate `lr`. Frozen parameters are skipped.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            if !store.get(id).trainable {
                continue;
            }
            let g = grads.get(id).data();
            let m = self.m[id.index()].data_mut();
            let v = self.v[id.index()].data_mut();
            let w = store.tensor_mut(id).data_mut();
            for i in 0..w.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let update = (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
                w[i] -= lr * (update + self.weight_decay * w[i]);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_warms_up_then_decays_to_zero() {
        let s = Schedule::new(1.0, 100, 0.1);
        assert_eq!(s.warmup_steps, 10);
        assert!((s.rate(0) - 0.1).abs() < 1e-15);
        assert_eq!(s.rate(9), 1.0);
        assert_eq!(s.rate(10), 1.0);
        assert!((s.rate(55) - 0.5).abs() < 1e-15);
        assert_eq!(s.rate(100), 0.0);
        let flat = Schedule::new(2.0, 4, 0.0);
        assert_eq!(flat.rate(0), 2.0);
    }

    #[test]
    fn first_step_moves_each_coordinate_by_the_rate() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::matrix(1, 2, vec![1.0, -1.0]).unwrap()).unwrap();
        let mut grads = Gradients::zeros_for(&store);
        grads.get_mut(id).data_mut().copy_from_slice(&[3.0, -0.5]);
        let mut opt = AdamW::new(&store, 0.0);
        opt.step(&mut store, &grads, 0.1);
        let w = store.tensor(id).data();
        assert!((w[0] - 0.9).abs() < 1e-7 && (w[1] + 0.9).abs() < 1e-7, "{w:?}");
    }

    #[test]
    fn decay_is_decoupled_and_zero_rate_is_a_no_op() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::matrix(1, 1, vec![2.0]).unwrap()).unwrap();
        let grads = Gradients::zeros_for(&store);
        let mut opt = AdamW::new(&store, 0.5);
        opt.step(&mut store, &grads, 0.1);
        assert!((store.tensor(id).data()[0] - 1.9).abs() < 1e-15);
        let before = store.clone();
        opt.step(&mut store, &grads, 0.0);
        assert_eq!(store, before);
    }

    #[test]
    fn clipping_scales_norm_ten_by_a_tenth() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap()).unwrap();
        let mut grads = Gradients::zeros_for(&store);
        grads.get_mut(id).data_mut().copy_from_slice(&[6.0, 8.0]);
        assert_eq!(grads.clip_global_norm(1.0), 10.0);
        assert_eq!(grads.get(id).data(), &[6.0 * 0.1, 8.0 * 0.1]);
    }
}
