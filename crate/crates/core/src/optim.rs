//! AdamW with decoupled weight decay, cosine schedule with linear warmup,
//! and global-norm gradient clipping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub base_lr: f64,
    pub min_lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr >= 0.0) || !(self.min_lr >= 0.0) || self.min_lr > self.base_lr {
            return Err(Error::config(format!(
                "schedule needs 0 <= min_lr ({}) <= base_lr ({})",
                self.min_lr, self.base_lr
            )));
        }
        if self.warmup_steps >= self.total_steps {
            return Err(Error::config(format!(
                "warmup_steps {} must be below total_steps {}",
                self.warmup_steps, self.total_steps
            )));
        }
        Ok(())
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        if step < self.warmup_steps {
            return self.base_lr * step as f64 / self.warmup_steps as f64;
        }
        let span = self.total_steps.saturating_sub(self.warmup_steps).max(1);
        let progress = ((step - self.warmup_steps) as f64 / span as f64).min(1.0);
        self.min_lr + 0.5 * (self.base_lr - self.min_lr) * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

pub fn lr_at(s: &Schedule, step: u64) -> f64 {
    s.lr_at(step)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Moments for every parameter, one pair each.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    pub config: AdamWConfig,
    pub step: u64,
    pub moments: Vec<(Tensor, Tensor)>,
}

impl OptimState {
    pub fn new(config: AdamWConfig, params: &[&Tensor]) -> Self {
        Self {
            config,
            step: 0,
            moments: params
                .iter()
                .map(|p| (Tensor::zeros(p.shape()), Tensor::zeros(p.shape())))
                .collect(),
        }
    }
}

/// One AdamW update of `params` with per-parameter learning rates. Nothing
/// is modified unless every gradient is finite and shape-compatible.
pub fn adamw_step(
    state: &mut OptimState,
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    lrs: &[f64],
    names: &[String],
) -> Result<()> {
    let n = state.moments.len();
    if params.len() != n || grads.len() != n || lrs.len() != n || names.len() != n {
        return Err(Error::dim(format!(
            "optimizer tracks {n} parameters, got {} params / {} grads / {} rates",
            params.len(),
            grads.len(),
            lrs.len()
        )));
    }
    for i in 0..n {
        grads[i].check_same_shape(params[i], &names[i])?;
        if !grads[i].all_finite() {
            return Err(Error::numeric(&names[i], "non-finite gradient"));
        }
        if !(lrs[i] >= 0.0) {
            return Err(Error::config(format!("learning rate for {} must be >= 0", names[i])));
        }
    }
    let c = state.config;
    state.step += 1;
    let bc1 = 1.0 - c.beta1.powi(state.step as i32);
    let bc2 = 1.0 - c.beta2.powi(state.step as i32);
    for i in 0..n {
        let (m, v) = &mut state.moments[i];
        let lr = lrs[i];
        for (((p, g), m), v) in params[i]
            .data_mut()
            .iter_mut()
            .zip(grads[i].data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *m = c.beta1 * *m + (1.0 - c.beta1) * g;
            *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
            let step = lr * (*m / bc1) / ((*v / bc2).sqrt() + c.eps);
            *p = *p - step - lr * c.weight_decay * *p;
        }
    }
    Ok(())
}

pub fn global_norm(grads: &[Tensor]) -> f64 {
    grads.iter().map(Tensor::sq_norm).sum::<f64>().sqrt()
}

/// Rescale all gradients together so their global L2 norm is at most
/// `max_norm`; returns the norm before clipping.
pub fn clip_global(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| g.scale(s));
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sched() -> Schedule {
        Schedule {
            base_lr: 1e-3,
            min_lr: 0.0,
            warmup_steps: 10,
            total_steps: 110,
        }
    }

    #[test]
    fn schedule_landmarks() {
        let s = sched();
        assert_eq!(s.lr_at(0), 0.0);
        assert_eq!(s.lr_at(5), 5e-4);
        assert_eq!(s.lr_at(10), 1e-3);
        assert!((s.lr_at(60) - 5e-4).abs() < 1e-15);
        assert!(s.lr_at(110).abs() < 1e-18);
        assert!(s.lr_at(500).abs() < 1e-18);
        let floor = Schedule { min_lr: 1e-5, ..s };
        assert!((floor.lr_at(110) - 1e-5).abs() < 1e-18);
        assert!(Schedule { warmup_steps: 110, ..s }.validate().is_err());
        assert!(Schedule { min_lr: 1.0, ..s }.validate().is_err());
    }

    #[test]
    fn schedule_without_warmup_starts_at_base() {
        let s = Schedule { warmup_steps: 0, ..sched() };
        assert_eq!(s.lr_at(0), 1e-3);
    }

    fn one(p: f64, g: f64, lr: f64, wd: f64) -> f64 {
        let mut p = Tensor::full(&[1], p);
        let mut st = OptimState::new(
            AdamWConfig {
                weight_decay: wd,
                ..Default::default()
            },
            &[&p],
        );
        adamw_step(&mut st, &mut [&mut p], &[Tensor::full(&[1], g)], &[lr], &["p".into()]).unwrap();
        p.data()[0]
    }

    #[test]
    fn adamw_hand_values() {
        assert_eq!(one(0.7, 0.0, 1e-3, 0.0), 0.7);
        assert!((one(1.0, 1.0, 1e-3, 0.01) - 0.99899).abs() < 1e-10);
        assert!((one(2.0, 0.0, 1e-2, 0.5) - 2.0 * (1.0 - 1e-2 * 0.5)).abs() < 1e-15);
    }

    #[test]
    fn adamw_nan_leaves_everything_untouched() {
        let mut a = Tensor::full(&[2], 1.0);
        let mut b = Tensor::full(&[2], 1.0);
        let mut st = OptimState::new(AdamWConfig::default(), &[&a, &b]);
        let before = st.clone();
        let grads = [Tensor::full(&[2], 1.0), Tensor::from_rows(&[&[f64::NAN, 0.0]])];
        let err = adamw_step(&mut st, &mut [&mut a, &mut b], &grads, &[1e-3, 1e-3], &["a".into(), "b".into()]).unwrap_err();
        assert!(err.to_string().contains('b'));
        assert_eq!(st, before);
        assert_eq!(a, Tensor::full(&[2], 1.0));
    }

    #[test]
    fn zero_rate_freezes_only_that_parameter() {
        let mut a = Tensor::full(&[2], 1.0);
        let mut b = Tensor::full(&[2], 1.0);
        let mut st = OptimState::new(AdamWConfig::default(), &[&a, &b]);
        let grads = [Tensor::full(&[2], 1.0), Tensor::full(&[2], 1.0)];
        adamw_step(&mut st, &mut [&mut a, &mut b], &grads, &[0.0, 1e-3], &["a".into(), "b".into()]).unwrap();
        assert_eq!(a, Tensor::full(&[2], 1.0));
        assert!(b.data()[0] < 1.0);
    }

    #[test]
    fn clip_cases() {
        let mut g = vec![Tensor::from_rows(&[&[3.0, 4.0]])];
        assert_eq!(clip_global(&mut g, 0.5), 5.0);
        assert!((g[0].data()[0] - 0.3).abs() < 1e-15 && (g[0].data()[1] - 0.4).abs() < 1e-15);
        let mut small = vec![Tensor::from_rows(&[&[0.1, 0.2]])];
        let copy = small.clone();
        clip_global(&mut small, 1.0);
        assert_eq!(small, copy);
    }

    proptest! {
        #[test]
        fn clipped_norm_is_bounded(v in prop::collection::vec(-100.0f64..100.0, 1..20), max in 0.01f64..10.0) {
            let mut g = vec![Tensor::from_vec(&[v.len()], v).unwrap()];
            clip_global(&mut g, max);
            prop_assert!(global_norm(&g) <= max + 1e-9);
        }

        #[test]
        fn schedule_nonincreasing_after_warmup(w in 0u64..50, extra in 1u64..500, a in 0u64..600, b in 0u64..600) {
            let s = Schedule { base_lr: 1e-3, min_lr: 1e-6, warmup_steps: w, total_steps: w + extra };
            let (lo, hi) = (w + a.min(b), w + a.max(b));
            prop_assert!(s.lr_at(hi) <= s.lr_at(lo));
        }

        #[test]
        fn second_moments_nonnegative(gs in prop::collection::vec(-5.0f64..5.0, 1..10)) {
            let mut p = Tensor::zeros(&[1]);
            let mut st = OptimState::new(AdamWConfig::default(), &[&p]);
            for g in gs {
                adamw_step(&mut st, &mut [&mut p], &[Tensor::full(&[1], g)], &[1e-3], &["p".into()]).unwrap();
                prop_assert!(st.moments[0].1.data()[0] >= 0.0);
            }
            prop_assert!(st.step > 0);
        }
    }
}
