//! Adapter attachment, one-batch updates, the epoch loop and merging.

use crate::datagen::Sample;
use crate::error::{Error, Result};
use crate::lora::optim::{sgd_step, AdamParams, Moments, OptimizerKind, WarmupSchedule};
use crate::lora::{Adapter, AdapterMode};
use crate::model::{GradientSet, Modality, ToyVlm, WeightMode};
use crate::numeric::{BitMask, Matrix, Rng};
use crate::objectives::{check_lambda, distill_loss, task_loss, LossBreakdown};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub adam: AdamParams,
    pub warmup_frac: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Weight of the task loss; `1 - lambda` weighs distillation.
    pub lambda: f64,
    pub rank_vision: usize,
    pub rank_language: usize,
    pub rank_interface: usize,
    pub optimizer: OptimizerKind,
    pub mode: AdapterMode,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            adam: AdamParams::default(),
            warmup_frac: 0.1,
            epochs: 1,
            batch_size: 16,
            lambda: 0.1,
            rank_vision: 4,
            rank_language: 8,
            rank_interface: 4,
            optimizer: OptimizerKind::Adam,
            mode: AdapterMode::Sparse,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        check_lambda(self.lambda).map_err(|e| Error::Config(e.to_string()))?;
        WarmupSchedule::new(self.lr, self.warmup_frac, 1)?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if [self.rank_vision, self.rank_language, self.rank_interface].contains(&0) {
            return Err(Error::Config("adapter ranks must be at least 1".into()));
        }
        let b = &self.adam;
        if !(0.0..1.0).contains(&b.beta1) || !(0.0..1.0).contains(&b.beta2) || b.eps <= 0.0 {
            return Err(Error::Config("adam betas must lie in [0, 1) and eps be positive".into()));
        }
        Ok(())
    }

    pub fn rank_for(&self, modality: Modality) -> usize {
        match modality {
            Modality::Vision => self.rank_vision,
            Modality::Language => self.rank_language,
            Modality::Interface => self.rank_interface,
        }
    }
}

/// Per-layer moment estimates for `B` and `A`, plus the shared step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    kind: OptimizerKind,
    schedule: WarmupSchedule,
    step: u64,
    moments: Vec<Option<(Moments, Moments)>>,
}

impl OptimizerState {
    pub fn new(model: &ToyVlm, cfg: &TrainConfig, total_steps: u64) -> Result<Self> {
        Ok(OptimizerState {
            kind: cfg.optimizer,
            schedule: WarmupSchedule::new(cfg.lr, cfg.warmup_frac, total_steps)?,
            step: 0,
            moments: model
                .layers()
                .iter()
                .map(|l| {
                    l.adapter
                        .as_ref()
                        .map(|a| (Moments::zeros(a.b.len()), Moments::zeros(a.a.len())))
                })
                .collect(),
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn current_lr(&self) -> f64 {
        self.schedule.lr_at(self.step.max(1))
    }

    fn apply(
        &mut self,
        idx: usize,
        adapter: &mut Adapter,
        db: &Matrix,
        da: &Matrix,
        hp: &AdamParams,
    ) -> Result<()> {
        let lr = self.schedule.lr_at(self.step);
        match self.kind {
            OptimizerKind::Sgd => {
                sgd_step(adapter.b.as_mut_slice(), db.as_slice(), lr);
                sgd_step(adapter.a.as_mut_slice(), da.as_slice(), lr);
            }
            OptimizerKind::Adam => {
                let (mb, ma) = self
                    .moments
                    .get_mut(idx)
                    .and_then(Option::as_mut)
                    .ok_or_else(|| {
                        Error::State(format!("no optimizer state for adapter on layer {idx}"))
                    })?;
                if mb.m.len() != db.len() || ma.m.len() != da.len() {
                    return Err(Error::State("optimizer state does not match adapter".into()));
                }
                mb.adam_step(adapter.b.as_mut_slice(), db.as_slice(), lr, self.step, hp);
                ma.adam_step(adapter.a.as_mut_slice(), da.as_slice(), lr, self.step, hp);
            }
        }
        Ok(())
    }
}

/// Attaches a fresh adapter to every layer whose modality is in `scope`.
pub fn attach_adapters(model: &mut ToyVlm, cfg: &TrainConfig, scope: &[Modality]) -> Result<()> {
    if scope.is_empty() {
        return Err(Error::Input("adapter scope is empty".into()));
    }
    let targets: Vec<usize> = model.layers_in(scope).map(|(i, _)| i).collect();
    if let Some(&i) = targets.iter().find(|&&i| model.layers()[i].adapter.is_some()) {
        return Err(Error::State(format!(
            "layer {} already carries an adapter",
            model.layers()[i].name
        )));
    }
    let seed = model.seed();
    for i in targets {
        let layer = model.layer_mut(i);
        let (out, inp) = layer.shape();
        let mut rng = Rng::derive(seed, 0xADA9_7E00 + i as u64);
        layer.adapter = Some(Adapter::init(
            out,
            inp,
            cfg.rank_for(layer.modality),
            cfg.mode,
            &mut rng,
        )?);
    }
    Ok(())
}

/// Loss and gradients of one batch, without touching parameters.
#[derive(Clone, Debug)]
pub struct BatchGradients {
    pub loss: LossBreakdown,
    /// `∂L/∂Ŵ` and `∂L/∂b` per layer.
    pub model: GradientSet,
    /// `(∂L/∂B, ∂L/∂A)` for each layer that carries an adapter.
    pub adapters: Vec<Option<(Matrix, Matrix)>>,
    pub teacher_forwards: usize,
}

/// Mean combined loss over `batch` and its gradients. The teacher forward
/// is skipped entirely when `lambda == 1`.
pub fn batch_gradients(model: &ToyVlm, batch: &[Sample], lambda: f64) -> Result<BatchGradients> {
    check_lambda(lambda)?;
    if batch.is_empty() {
        return Err(Error::Input("empty batch".into()));
    }
    let student = model.view(WeightMode::MaskedStudent);
    let teacher = (lambda < 1.0).then(|| model.view(WeightMode::DenseTeacher));
    let scale = 1.0 / batch.len() as f64;

    let mut grads = GradientSet::zeros_like(model);
    let (mut task_sum, mut distill_sum) = (0.0, 0.0);
    let mut teacher_forwards = 0;
    for s in batch {
        let (logits, tape) = model.forward_view(&student, &s.vision_in, &s.text_in)?;
        let (task, dtask) = task_loss(&logits, s.label)?;
        task_sum += task;
        let mut dlogits: Vec<f64> = dtask.iter().map(|g| lambda * g * scale).collect();
        if let Some(tv) = &teacher {
            let t_logits = model.logits(tv, &s.vision_in, &s.text_in)?;
            teacher_forwards += 1;
            let (kl, dkl) = distill_loss(&logits, &t_logits)?;
            distill_sum += kl;
            for (d, g) in dlogits.iter_mut().zip(dkl) {
                *d += (1.0 - lambda) * g * scale;
            }
        }
        grads.add_assign(&model.backward(&tape, &dlogits)?);
    }

    let adapters = model
        .layers()
        .iter()
        .zip(&grads.weights)
        .map(|(l, g)| {
            l.adapter
                .as_ref()
                .map(|ad| ad.gradients(g, &l.mask))
                .transpose()
        })
        .collect::<Result<_>>()?;
    Ok(BatchGradients {
        loss: LossBreakdown::new(task_sum * scale, distill_sum * scale, lambda)?,
        model: grads,
        adapters,
        teacher_forwards,
    })
}

fn has_adapters(model: &ToyVlm) -> bool {
    model.layers().iter().any(|l| l.adapter.is_some())
}

/// One optimizer update of every adapter on one batch. `W₀` and masks are
/// never modified.
pub fn step(
    model: &mut ToyVlm,
    batch: &[Sample],
    cfg: &TrainConfig,
    opt: &mut OptimizerState,
) -> Result<LossBreakdown> {
    step_inner(model, batch, cfg, opt).map(|g| g.loss)
}

fn step_inner(
    model: &mut ToyVlm,
    batch: &[Sample],
    cfg: &TrainConfig,
    opt: &mut OptimizerState,
) -> Result<BatchGradients> {
    if !has_adapters(model) {
        return Err(Error::State("no adapters attached".into()));
    }
    let g = batch_gradients(model, batch, cfg.lambda)?;
    opt.step += 1;
    for (idx, grads) in g.adapters.iter().enumerate() {
        if let Some((db, da)) = grads {
            let layer = model.layer_mut(idx);
            let adapter = layer.adapter.as_mut().expect("gradient implies adapter");
            opt.apply(idx, adapter, db, da, &cfg.adam)?;
        }
    }
    Ok(g)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    pub loss: LossBreakdown,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingReport {
    pub steps: Vec<StepRecord>,
    pub teacher_forwards: usize,
}

impl TrainingReport {
    pub fn final_loss(&self) -> Option<LossBreakdown> {
        self.steps.last().map(|s| s.loss)
    }
}

/// `epochs` passes over `data` in seeded shuffled order.
pub fn train(model: &mut ToyVlm, data: &[Sample], cfg: &TrainConfig) -> Result<TrainingReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Ok(TrainingReport::default());
    }
    if !has_adapters(model) {
        return Err(Error::State("no adapters attached".into()));
    }
    let batches_per_epoch = data.len().div_ceil(cfg.batch_size);
    let total = (cfg.epochs * batches_per_epoch) as u64;
    let mut opt = OptimizerState::new(model, cfg, total)?;
    let mut report = TrainingReport::default();
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.epochs {
        Rng::derive(cfg.seed, 0x5E_0000 + epoch as u64).shuffle(&mut order);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Sample> = chunk.iter().map(|&i| data[i].clone()).collect();
            let lr = opt.schedule.lr_at(opt.step + 1);
            let g = step_inner(model, &batch, cfg, &mut opt)?;
            report.teacher_forwards += g.teacher_forwards;
            report.steps.push(StepRecord {
                step: opt.step,
                epoch,
                lr,
                loss: g.loss,
            });
        }
    }
    Ok(report)
}

/// Folds every adapter into its layer's stored weights and removes it.
///
/// Sparse adapters store `(W₀ ⊙ M) + (BA ⊙ M)` and keep the mask. Dense
/// adapters store `(W₀ ⊙ M) + BA` and reset the mask to all-ones, since the
/// merged weight no longer honours the old pattern.
pub fn merge(model: &mut ToyVlm) -> Result<()> {
    if !has_adapters(model) {
        return Err(Error::State("no adapters to merge".into()));
    }
    for layer in model.layers_mut() {
        let Some(ad) = layer.adapter.take() else {
            continue;
        };
        let pruned = layer.w0.hadamard_mask(&layer.mask)?;
        let delta = ad.delta();
        match ad.mode {
            AdapterMode::Sparse => {
                layer.w0 = pruned.add(&delta.hadamard_mask(&layer.mask)?)?;
            }
            AdapterMode::Dense => {
                layer.w0 = pruned.add(&delta)?;
                layer.mask = BitMask::ones(layer.w0.rows(), layer.w0.cols());
            }
        }
        layer.merged = true;
    }
    Ok(())
}
