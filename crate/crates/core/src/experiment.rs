//! Seeded end-to-end scenarios: data, a pretrained base model, pruning and
//! restoration, shared by the planner, the CLI and the test suites.

use crate::datagen::{generate, split, Dataset, Sample, Splits, TaskSpec};
use crate::error::Result;
use crate::lora::{attach_adapters, merge, train, TrainConfig, TrainingReport};
use crate::model::{Dims, Modality, ToyVlm, WeightMode};
use crate::pretrain::{pretrain, PretrainConfig};
use crate::pruning::{prune, ScoringMetric, SparsitySpec};

/// Fraction of `samples` whose arg-max student logit equals the label.
/// Ties resolve to the lowest class index.
pub fn accuracy(model: &ToyVlm, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let view = model.view(WeightMode::MaskedStudent);
    let mut hits = 0usize;
    for s in samples {
        let logits = model.logits(&view, &s.vision_in, &s.text_in)?;
        if argmax(&logits) == s.label {
            hits += 1;
        }
    }
    Ok(hits as f64 / samples.len() as f64)
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    pub dims: Dims,
    pub task: TaskSpec,
    pub samples: usize,
    pub calib_count: usize,
    pub eval_count: usize,
    pub pretrain: PretrainConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            dims: Dims::default(),
            task: TaskSpec::default(),
            samples: 2628,
            calib_count: 128,
            eval_count: 500,
            pretrain: PretrainConfig::default(),
        }
    }
}

/// Data splits plus the pretrained dense model for one seed.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub seed: u64,
    pub splits: Splits,
    pub base: ToyVlm,
    pub base_accuracy: f64,
}

impl Scenario {
    pub fn build(cfg: &ScenarioConfig, seed: u64) -> Result<Self> {
        let data = generate(&cfg.task, cfg.samples, seed)?;
        Self::from_data(cfg, &data, seed)
    }

    pub fn from_data(cfg: &ScenarioConfig, data: &Dataset, seed: u64) -> Result<Self> {
        let splits = split(data, cfg.calib_count, cfg.eval_count)?;
        let mut base = ToyVlm::new(cfg.dims, seed)?;
        let pcfg = PretrainConfig {
            seed,
            ..cfg.pretrain.clone()
        };
        pretrain(&mut base, &splits.train.samples, &pcfg)?;
        let base_accuracy = accuracy(&base, &splits.eval.samples)?;
        Ok(Scenario {
            seed,
            splits,
            base,
            base_accuracy,
        })
    }

    /// Copy of the base model pruned with one spec per modality.
    pub fn pruned(
        &self,
        metric: ScoringMetric,
        targets: &[(Modality, SparsitySpec)],
    ) -> Result<ToyVlm> {
        let mut m = self.base.clone();
        prune(&mut m, metric, &self.splits.calib.samples, targets)?;
        Ok(m)
    }

    pub fn eval_accuracy(&self, model: &ToyVlm) -> Result<f64> {
        accuracy(model, &self.splits.eval.samples)
    }
}

#[derive(Clone, Debug)]
pub struct Restoration {
    pub model: ToyVlm,
    pub report: TrainingReport,
    pub accuracy: f64,
}

/// Attaches adapters, trains on the first `train_count` training samples,
/// merges and evaluates.
pub fn restore(
    scenario: &Scenario,
    pruned: &ToyVlm,
    cfg: &TrainConfig,
    scope: &[Modality],
    train_count: usize,
) -> Result<Restoration> {
    let mut model = pruned.clone();
    attach_adapters(&mut model, cfg, scope)?;
    let data = scenario.splits.train.prefix(train_count);
    let report = train(&mut model, &data.samples, cfg)?;
    merge(&mut model)?;
    let accuracy = scenario.eval_accuracy(&model)?;
    Ok(Restoration {
        model,
        report,
        accuracy,
    })
}
