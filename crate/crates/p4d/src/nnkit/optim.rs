//! Adam optimizer with the cosine-warmup schedule.
//!
//! The paper-backed part is the schedule (warmup ratio 0.03 then cosine
//! decay); the optimizer family is a config knob with Adam defaults, recorded
//! in run manifests.

use std::collections::BTreeMap;

use crate::nnkit::ops::cosine_warmup_lr;
use crate::nnkit::tape::Gradients;
use crate::nnkit::{Arr, ParamStore};
use crate::nnkit::params::Binding;
use crate::Result;

#[derive(Debug, Clone)]
pub struct OptConfig {
    pub base_lr: f64,
    pub warmup_ratio: f64,
    pub total_steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global-norm gradient clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
}

impl OptConfig {
    pub fn new(base_lr: f64, total_steps: usize) -> Self {
        Self {
            base_lr,
            warmup_ratio: 0.03,
            total_steps,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_clip: None,
        }
    }
}

#[derive(Debug)]
struct Moments {
    m: Arr,
    v: Arr,
}

/// Per-parameter Adam state plus the step counter.
#[derive(Debug)]
pub struct OptState {
    cfg: OptConfig,
    step: usize,
    moments: BTreeMap<String, Moments>,
}

impl OptState {
    pub fn new(cfg: OptConfig) -> Self {
        Self { cfg, step: 0, moments: BTreeMap::new() }
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn current_lr(&self) -> Result<f64> {
        cosine_warmup_lr(
            self.step.min(self.cfg.total_steps),
            self.cfg.total_steps,
            self.cfg.warmup_ratio,
            self.cfg.base_lr,
        )
    }

    /// Apply one Adam update to every trainable bound parameter. Frozen
    /// parameters are skipped entirely, not updated with zero.
    pub fn apply(&mut self, store: &mut ParamStore, binding: &Binding, grads: &Gradients) -> Result<()> {
        self.step += 1;
        let lr = self.current_lr()?;
        let (b1, b2, eps) = (self.cfg.beta1, self.cfg.beta2, self.cfg.eps);
        let bias1 = 1.0 - b1.powi(self.step as i32);
        let bias2 = 1.0 - b2.powi(self.step as i32);

        let clip_scale = match self.cfg.grad_clip {
            Some(max_norm) => {
                let mut sq = 0.0;
                for (name, id) in binding.iter() {
                    if store.get(name).map(|p| p.trainable) != Some(true) {
                        continue;
                    }
                    if let Some(g) = grads.get(id) {
                        sq += g.iter().map(|&v| v * v).sum::<f64>();
                    }
                }
                let norm = sq.sqrt();
                if norm > max_norm {
                    max_norm / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };

        for (name, id) in binding.iter() {
            let trainable = match store.get(name) {
                Some(p) => p.trainable,
                None => continue,
            };
            if !trainable {
                continue;
            }
            let grad = match grads.get(id) {
                Some(g) => g,
                None => continue,
            };
            let shape = grad.raw_dim();
            let slot = self.moments.entry(name.to_string()).or_insert_with(|| Moments {
                m: Arr::zeros(shape.clone()),
                v: Arr::zeros(shape),
            });
            let p = store.get_mut(name).unwrap();
            ndarray::Zip::from(&mut p.value)
                .and(&mut slot.m)
                .and(&mut slot.v)
                .and(grad)
                .for_each(|w, m, v, &graw| {
                    let g = graw * clip_scale;
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let mhat = *m / bias1;
                    let vhat = *v / bias2;
                    *w -= lr * mhat / (vhat.sqrt() + eps);
                });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnkit::Tape;

    #[test]
    fn frozen_param_is_never_touched() {
        let mut store = ParamStore::new();
        store.add("w", crate::nnkit::scalar(3.0)).unwrap();
        store.add("frozen.w", crate::nnkit::scalar(5.0)).unwrap();
        store.get_mut("frozen.w").unwrap().trainable = false;

        let mut opt = OptState::new(OptConfig::new(0.1, 10));
        for _ in 0..3 {
            let mut tape = Tape::new();
            let mut binding = Binding::new();
            let w = binding.bind(&mut tape, &store, "w");
            let f = binding.bind(&mut tape, &store, "frozen.w");
            let s = tape.add(w, f);
            let zero = tape.leaf(crate::nnkit::scalar(0.0));
            let loss = tape.smooth_l1_mean(s, zero, 100.0);
            let grads = tape.backward(loss).unwrap();
            opt.apply(&mut store, &binding, &grads).unwrap();
        }
        let frozen = store.value("frozen.w").iter().next().copied().unwrap();
        assert_eq!(frozen.to_le_bytes(), 5.0f64.to_le_bytes());
        let w = store.value("w").iter().next().copied().unwrap();
        assert!(w < 3.0);
    }

    #[test]
    fn quadratic_descends() {
        let mut store = ParamStore::new();
        store.add("w", crate::nnkit::scalar(2.0)).unwrap();
        let mut opt = OptState::new(OptConfig::new(0.05, 200));
        let mut last = f64::MAX;
        for i in 0..200 {
            let mut tape = Tape::new();
            let mut binding = Binding::new();
            let w = binding.bind(&mut tape, &store, "w");
            let sq = tape.mul(w, w);
            let zero = tape.leaf(crate::nnkit::scalar(0.0));
            let loss = tape.smooth_l1_mean(sq, zero, 1000.0);
            let grads = tape.backward(loss).unwrap();
            opt.apply(&mut store, &binding, &grads).unwrap();
            if i == 199 {
                last = tape.scalar_value(loss);
            }
        }
        assert!(last < 1e-3, "final loss {last}");
    }
}
