//! AdamW, learning-rate schedules and gradient accumulation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnkit::ParamSet;

/// Summed gradients of every minibatch absorbed since the last step.
#[derive(Debug, Clone, PartialEq)]
pub struct GradBuffer {
    pub grads: ParamSet,
    pub batches_absorbed: usize,
}

impl GradBuffer {
    pub fn zeros_like(params: &ParamSet) -> Self {
        Self { grads: params.zeros_like(), batches_absorbed: 0 }
    }

    /// Adds `grads` elementwise. Gradients are summed, never averaged.
    pub fn accumulate(&mut self, grads: &ParamSet) -> Result<()> {
        if !self.grads.same_layout(grads) {
            return Err(Error::Shape("gradient layout does not match the buffer".into()));
        }
        for (name, g) in grads.iter() {
            self.grads.get_mut(name)?.add_assign(g)?;
        }
        self.batches_absorbed += 1;
        Ok(())
    }

    pub fn clear(&mut self) {
        for (_, g) in self.grads.iter_mut() {
            g.data_mut().fill(0.0);
        }
        self.batches_absorbed = 0;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWParams {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub hyper: AdamWParams,
    pub t: u64,
    pub m: ParamSet,
    pub v: ParamSet,
}

impl AdamW {
    pub fn new(params: &ParamSet, hyper: AdamWParams) -> Self {
        Self { hyper, t: 0, m: params.zeros_like(), v: params.zeros_like() }
    }

    /// One AdamW update from the buffered gradient sum, with bias
    /// correction and decoupled weight decay:
    /// `theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + decay * theta)`.
    /// The buffer is cleared afterwards.
    pub fn step(&mut self, params: &mut ParamSet, buf: &mut GradBuffer, lr: f64) -> Result<()> {
        if buf.batches_absorbed == 0 {
            return Err(Error::Config("optimizer step without any accumulated gradient".into()));
        }
        if !params.same_layout(&buf.grads) || !params.same_layout(&self.m) {
            return Err(Error::Shape("parameter layout does not match the optimizer state".into()));
        }
        self.t += 1;
        let AdamWParams { beta1, beta2, eps, weight_decay } = self.hyper;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (name, theta) in params.iter_mut() {
            let g = buf.grads.get(name)?.data();
            let m = self.m.get_mut(name)?.data_mut();
            let v = self.v.get_mut(name)?.data_mut();
            for (i, th) in theta.data_mut().iter_mut().enumerate() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                *th -= lr * (m_hat / (v_hat.sqrt() + eps) + weight_decay * *th);
            }
        }
        buf.clear();
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrKind {
    Constant,
    Cosine,
    CosineWarmRestarts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    pub kind: LrKind,
    pub lr_max: f64,
    pub lr_min: f64,
    pub total_steps: usize,
    #[serde(default)]
    pub restart_steps: Vec<usize>,
}

impl LrSchedule {
    pub fn constant(lr: f64, total_steps: usize) -> Self {
        Self { kind: LrKind::Constant, lr_max: lr, lr_min: lr, total_steps, restart_steps: Vec::new() }
    }

    pub fn cosine(lr_max: f64, lr_min: f64, total_steps: usize) -> Self {
        Self { kind: LrKind::Cosine, lr_max, lr_min, total_steps, restart_steps: Vec::new() }
    }

    pub fn warm_restarts(lr_max: f64, lr_min: f64, total_steps: usize, restart_steps: Vec<usize>) -> Self {
        Self { kind: LrKind::CosineWarmRestarts, lr_max, lr_min, total_steps, restart_steps }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr_min.is_finite() && self.lr_max.is_finite() && 0.0 <= self.lr_min && self.lr_min <= self.lr_max) {
            return Err(Error::Config(format!("need 0 <= lr_min <= lr_max, got {} and {}", self.lr_min, self.lr_max)));
        }
        if self.total_steps == 0 {
            return Err(Error::Config("schedule needs at least one step".into()));
        }
        let increasing = self.restart_steps.windows(2).all(|w| w[0] < w[1]);
        let in_range = self.restart_steps.iter().all(|&r| r > 0 && r < self.total_steps);
        if !increasing || !in_range {
            return Err(Error::Config(format!(
                "restart points {:?} must be strictly increasing inside (0, {})",
                self.restart_steps, self.total_steps
            )));
        }
        Ok(())
    }

    fn cosine_phase(&self, pos: usize, len: usize) -> f64 {
        if pos == 0 {
            return self.lr_max;
        }
        let t = pos as f64 / len as f64;
        self.lr_min + 0.5 * (self.lr_max - self.lr_min) * (1.0 + (std::f64::consts::PI * t).cos())
    }

    /// Learning rate at `step` in `0..=total_steps`.
    pub fn lr_at(&self, step: usize) -> Result<f64> {
        if step > self.total_steps {
            return Err(Error::StepOutOfRange { step, total: self.total_steps });
        }
        Ok(match self.kind {
            LrKind::Constant => self.lr_max,
            LrKind::Cosine => self.cosine_phase(step, self.total_steps),
            LrKind::CosineWarmRestarts => {
                let start = self.restart_steps.iter().rev().find(|&&r| r <= step).copied().unwrap_or(0);
                let end = self.restart_steps.iter().find(|&&r| r > step).copied().unwrap_or(self.total_steps);
                self.cosine_phase(step - start, end - start)
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnkit::Tensor;

    fn scalar(v: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::filled(&[1], v));
        p
    }

    #[test]
    fn accumulate_inverse_pair_gives_zero() {
        let mut buf = GradBuffer::zeros_like(&scalar(0.0));
        buf.accumulate(&scalar(2.5)).unwrap();
        buf.accumulate(&scalar(-2.5)).unwrap();
        assert_eq!(buf.grads.get("w").unwrap().data(), &[0.0]);
        assert_eq!(buf.batches_absorbed, 2);
    }

    #[test]
    fn accumulate_thirteen_is_thirteen_times() {
        let mut buf = GradBuffer::zeros_like(&scalar(0.0));
        for _ in 0..13 {
            buf.accumulate(&scalar(0.5)).unwrap();
        }
        assert_eq!(buf.grads.get("w").unwrap().data(), &[6.5]);
    }

    #[test]
    fn accumulate_rejects_other_layout() {
        let mut buf = GradBuffer::zeros_like(&scalar(0.0));
        let mut other = ParamSet::new();
        other.insert("w", Tensor::zeros(&[2]));
        assert!(buf.accumulate(&other).is_err());
    }

    #[test]
    fn zero_gradient_only_decays() {
        let mut p = scalar(1.0);
        let mut opt = AdamW::new(&p, AdamWParams::default());
        let mut buf = GradBuffer::zeros_like(&p);
        buf.accumulate(&scalar(0.0)).unwrap();
        opt.step(&mut p, &mut buf, 1e-4).unwrap();
        assert_eq!(p.get("w").unwrap().data()[0], 1.0 - 1e-4 * 0.01 * 1.0);
        assert!((p.get("w").unwrap().data()[0] - (1.0 - 1e-6)).abs() < 1e-15);
        assert_eq!(buf.batches_absorbed, 0);
    }

    #[test]
    fn first_step_moves_by_lr_against_sign() {
        for g in [3.0, -0.02] {
            let mut p = scalar(0.7);
            let mut opt = AdamW::new(&p, AdamWParams { weight_decay: 0.0, ..AdamWParams::default() });
            let mut buf = GradBuffer::zeros_like(&p);
            buf.accumulate(&scalar(g)).unwrap();
            opt.step(&mut p, &mut buf, 1e-3).unwrap();
            let delta = p.get("w").unwrap().data()[0] - 0.7;
            assert!((delta + 1e-3 * g.signum()).abs() < 1e-9, "{delta}");
        }
    }

    #[test]
    fn step_without_gradient_is_refused() {
        let mut p = scalar(1.0);
        let mut opt = AdamW::new(&p, AdamWParams::default());
        let mut buf = GradBuffer::zeros_like(&p);
        assert!(opt.step(&mut p, &mut buf, 1e-3).is_err());
    }

    #[test]
    fn cosine_end_points_and_midpoint() {
        let s = LrSchedule::cosine(2e-4, 1e-6, 1000);
        assert_eq!(s.lr_at(0).unwrap(), 2e-4);
        assert_eq!(s.lr_at(1000).unwrap(), 1e-6);
        assert!((s.lr_at(500).unwrap() - (2e-4 + 1e-6) / 2.0).abs() < 1e-18);
        assert!(matches!(s.lr_at(1001), Err(Error::StepOutOfRange { .. })));
    }

    #[test]
    fn warm_restart_resets_to_max() {
        let itr = 7;
        let s = LrSchedule::warm_restarts(2e-4, 1e-6, 1000 * itr, vec![100 * itr, 300 * itr, 700 * itr]);
        s.validate().unwrap();
        for r in [100, 300, 700] {
            assert_eq!(s.lr_at(r * itr).unwrap(), 2e-4);
            assert!(s.lr_at(r * itr - 1).unwrap() < 2e-6);
        }
        // midpoint of the 300..700 segment
        assert!((s.lr_at(500 * itr).unwrap() - (2e-4 + 1e-6) / 2.0).abs() < 1e-18);
    }

    #[test]
    fn invalid_schedules_are_rejected() {
        assert!(LrSchedule::cosine(1e-6, 2e-4, 10).validate().is_err());
        assert!(LrSchedule::warm_restarts(1.0, 0.0, 10, vec![5, 3]).validate().is_err());
        assert!(LrSchedule::warm_restarts(1.0, 0.0, 10, vec![10]).validate().is_err());
    }
}
