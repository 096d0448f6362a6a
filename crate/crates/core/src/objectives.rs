//! Task loss, distillation loss and their λ-weighted combination, each with
//! its gradient with respect to the student logits.

use crate::error::{Error, Result};
use crate::numeric::{log_softmax_row, softmax_row};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub task: f64,
    pub distill: f64,
    pub total: f64,
    pub lambda: f64,
}

impl LossBreakdown {
    pub fn new(task: f64, distill: f64, lambda: f64) -> Result<Self> {
        Ok(LossBreakdown {
            task,
            distill,
            total: combine(task, distill, lambda)?,
            lambda,
        })
    }
}

/// Cross-entropy of `softmax(logits)` against `label`; gradient is
/// `softmax - onehot`.
pub fn task_loss(student_logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= student_logits.len() {
        return Err(Error::Input(format!(
            "label {label} out of range for {} classes",
            student_logits.len()
        )));
    }
    let logp = log_softmax_row(student_logits)?;
    let mut grad = softmax_row(student_logits)?;
    grad[label] -= 1.0;
    Ok((-logp[label], grad))
}

/// `KL(softmax(student) ‖ softmax(teacher))`, student distribution first.
///
/// With `p` the student and `q` the teacher distribution the gradient is
/// `∂/∂z_k = p_k (ln p_k - ln q_k - KL)`; the teacher is a constant.
pub fn distill_loss(student_logits: &[f64], teacher_logits: &[f64]) -> Result<(f64, Vec<f64>)> {
    if student_logits.len() != teacher_logits.len() {
        return Err(Error::Input(format!(
            "student has {} logits, teacher {}",
            student_logits.len(),
            teacher_logits.len()
        )));
    }
    let logp = log_softmax_row(student_logits)?;
    let logq = log_softmax_row(teacher_logits)?;
    let p: Vec<f64> = logp.iter().map(|x| x.exp()).collect();
    let log_ratio: Vec<f64> = logp.iter().zip(&logq).map(|(a, b)| a - b).collect();
    let kl = p
        .iter()
        .zip(&log_ratio)
        .map(|(pi, r)| pi * r)
        .sum::<f64>()
        .max(0.0);
    let grad = p
        .iter()
        .zip(&log_ratio)
        .map(|(pi, r)| pi * (r - kl))
        .collect();
    Ok((kl, grad))
}

/// `λ · task + (1 - λ) · distill`.
pub fn combine(task: f64, distill: f64, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    Ok(lambda * task + (1.0 - lambda) * distill)
}

pub fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Input(format!("lambda {lambda} outside [0, 1]")));
    }
    Ok(())
}
