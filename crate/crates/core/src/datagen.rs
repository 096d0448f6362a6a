//! Seeded synthetic two-modality classification data.
//!
//! Each class pair `(c_v, c_t)` owns one vision prototype and one text
//! prototype; a sample is the pair of prototypes plus Gaussian noise and is
//! labelled `(c_v + c_t) mod C`, so neither modality alone predicts the label.

use crate::error::{Error, Result};
use crate::numeric::Rng;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TaskSpec {
    pub classes: usize,
    pub d_v: usize,
    pub d_t: usize,
    pub noise: f64,
}

impl Default for TaskSpec {
    fn default() -> Self {
        TaskSpec {
            classes: 8,
            d_v: 16,
            d_t: 8,
            noise: 0.3,
        }
    }
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.classes > u16::MAX as usize + 1 {
            return Err(Error::Config(format!("classes must be in 2..=65536, got {}", self.classes)));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config(format!("noise must be finite and >= 0, got {}", self.noise)));
        }
        if self.d_v == 0 || self.d_t == 0 {
            return Err(Error::Config("input dimensions must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub vision_in: Vec<f64>,
    pub text_in: Vec<f64>,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub classes: usize,
    pub d_v: usize,
    pub d_t: usize,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    fn with_samples(&self, samples: Vec<Sample>) -> Dataset {
        Dataset {
            classes: self.classes,
            d_v: self.d_v,
            d_t: self.d_t,
            samples,
        }
    }

    /// First `n` samples (or all, if fewer).
    pub fn prefix(&self, n: usize) -> Dataset {
        self.with_samples(self.samples[..n.min(self.len())].to_vec())
    }
}

pub fn generate(spec: &TaskSpec, count: usize, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let mut proto_rng = Rng::derive(seed, 0x70_726f_746f);
    let vision_protos: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| (0..spec.d_v).map(|_| proto_rng.normal()).collect())
        .collect();
    let text_protos: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| (0..spec.d_t).map(|_| proto_rng.normal()).collect())
        .collect();

    let mut rng = Rng::derive(seed, 0x73_616d_706c);
    let samples = (0..count)
        .map(|_| {
            let cv = rng.below(spec.classes);
            let ct = rng.below(spec.classes);
            let vision_in = vision_protos[cv]
                .iter()
                .map(|p| p + spec.noise * rng.normal())
                .collect();
            let text_in = text_protos[ct]
                .iter()
                .map(|p| p + spec.noise * rng.normal())
                .collect();
            Sample {
                vision_in,
                text_in,
                label: (cv + ct) % spec.classes,
            }
        })
        .collect();
    Ok(Dataset {
        classes: spec.classes,
        d_v: spec.d_v,
        d_t: spec.d_t,
        samples,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub calib: Dataset,
    pub eval: Dataset,
}

pub const DEFAULT_CALIB_COUNT: usize = 128;

/// Deterministic partition: the last `eval_count` samples evaluate, the
/// `calib_count` before them calibrate, everything earlier trains.
pub fn split(data: &Dataset, calib_count: usize, eval_count: usize) -> Result<Splits> {
    let need = calib_count + eval_count;
    if calib_count == 0 || data.len() < need {
        return Err(Error::Input(format!(
            "{} samples cannot provide {calib_count} calibration and {eval_count} evaluation samples",
            data.len()
        )));
    }
    let train_end = data.len() - need;
    let calib_end = train_end + calib_count;
    Ok(Splits {
        train: data.with_samples(data.samples[..train_end].to_vec()),
        calib: data.with_samples(data.samples[train_end..calib_end].to_vec()),
        eval: data.with_samples(data.samples[calib_end..].to_vec()),
    })
}
