//! Adam / SGD updates with linear learning-rate warm-up.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl OptimizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            other => Err(Error::Config(format!("unknown optimizer {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Linear ramp from `lr / warmup_steps` to `lr` over the first
/// `⌈warmup_frac · total_steps⌉` steps, constant afterwards.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WarmupSchedule {
    pub lr: f64,
    pub warmup_steps: u64,
}

impl WarmupSchedule {
    pub fn new(lr: f64, warmup_frac: f64, total_steps: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&warmup_frac) {
            return Err(Error::Config(format!("warmup fraction {warmup_frac} outside [0, 1)")));
        }
        if !(lr.is_finite() && lr > 0.0) {
            return Err(Error::Config(format!("learning rate {lr} must be positive")));
        }
        let x = warmup_frac * total_steps as f64;
        let snapped = if (x - x.round()).abs() < 1e-9 { x.round() } else { x.ceil() };
        Ok(WarmupSchedule {
            lr,
            warmup_steps: snapped as u64,
        })
    }

    /// Learning rate for the 1-based step `t`.
    pub fn lr_at(&self, t: u64) -> f64 {
        if self.warmup_steps == 0 || t >= self.warmup_steps {
            self.lr
        } else {
            self.lr * t as f64 / self.warmup_steps as f64
        }
    }
}

/// First and second moment estimates for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Moments {
    pub fn zeros(n: usize) -> Self {
        Moments {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    /// One bias-corrected Adam descent step at 1-based step `t`.
    pub fn adam_step(&mut self, params: &mut [f64], grads: &[f64], lr: f64, t: u64, hp: &AdamParams) {
        debug_assert_eq!(params.len(), grads.len());
        let c1 = 1.0 - hp.beta1.powi(t as i32);
        let c2 = 1.0 - hp.beta2.powi(t as i32);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = hp.beta1 * *m + (1.0 - hp.beta1) * g;
            *v = hp.beta2 * *v + (1.0 - hp.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + hp.eps);
        }
    }
}

pub fn sgd_step(params: &mut [f64], grads: &[f64], lr: f64) {
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= lr * g;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warmup_ramp() {
        let s = WarmupSchedule::new(1.0, 0.1, 100).unwrap();
        assert_eq!(s.warmup_steps, 10);
        assert_eq!(s.lr_at(1), 0.1);
        assert_eq!(s.lr_at(5), 0.5);
        assert_eq!(s.lr_at(10), 1.0);
        assert_eq!(s.lr_at(90), 1.0);
        let s = WarmupSchedule::new(0.1, 0.1, 1).unwrap();
        assert_eq!(s.lr_at(1), 0.1);
        assert_eq!(WarmupSchedule::new(0.1, 0.0, 50).unwrap().lr_at(1), 0.1);
        assert!(WarmupSchedule::new(0.1, 1.0, 50).is_err());
    }

    /// First bias-corrected Adam step moves each parameter by `lr · sign(g)`
    /// up to the epsilon term.
    #[test]
    fn first_adam_step_is_sign_step() {
        let hp = AdamParams::default();
        let mut p = vec![1.0, -2.0, 0.5];
        let g = vec![0.3, -4.0, 1e-3];
        let mut mo = Moments::zeros(3);
        mo.adam_step(&mut p, &g, 0.01, 1, &hp);
        let want = [1.0 - 0.01, -2.0 + 0.01, 0.5 - 0.01];
        for (a, b) in p.iter().zip(want) {
            assert!((a - b).abs() < 1e-7, "{a} vs {b}");
        }
    }

    /// Two steps against a direct transcription of the update rule.
    #[test]
    fn adam_matches_reference_recursion() {
        let hp = AdamParams::default();
        let grads = [[0.5, -1.0], [0.25, 2.0]];
        let mut p = vec![0.0, 0.0];
        let mut mo = Moments::zeros(2);
        for (t, g) in grads.iter().enumerate() {
            mo.adam_step(&mut p, g, 0.1, t as u64 + 1, &hp);
        }
        for k in 0..2 {
            let (g1, g2) = (grads[0][k], grads[1][k]);
            let m1 = 0.1 * g1;
            let v1 = 0.001 * g1 * g1;
            let p1 = -0.1 * (m1 / 0.1) / ((v1 / 0.001f64).sqrt() + 1e-8);
            let m2 = 0.9 * m1 + 0.1 * g2;
            let v2 = 0.999 * v1 + 0.001 * g2 * g2;
            let c1 = 1.0 - 0.9f64 * 0.9;
            let c2 = 1.0 - 0.999f64 * 0.999;
            let p2 = p1 - 0.1 * (m2 / c1) / ((v2 / c2).sqrt() + 1e-8);
            assert!((p[k] - p2).abs() < 1e-12);
        }
    }
}
