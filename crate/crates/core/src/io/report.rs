//! CSV and JSON report writers.
//!
//! Every CSV starts with a header row, even when it has no data rows.

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::datagen::Sample;
use crate::error::{Error, Result};
use crate::experiment::argmax;
use crate::lora::TrainingReport;
use crate::model::{Modality, ToyVlm, WeightMode};
use crate::planner::SweepResult;
use crate::pruning::zero_count;

fn csv_error(e: impl std::fmt::Display) -> Error {
    Error::Invariant(format!("CSV serialization failed: {e}"))
}

/// Serializes `rows` with a header derived from `T`'s fields.
pub fn to_csv<T: Serialize>(headers: &[&str], rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(headers).map_err(csv_error)?;
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    w.into_inner().map_err(csv_error)
}

/// `scope,kind,declared,zeros,total,sparsity`
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SparsityRow {
    pub scope: String,
    /// `layer` or `modality`.
    pub kind: &'static str,
    pub declared: String,
    pub zeros: usize,
    pub total: usize,
    pub sparsity: f64,
}

pub const SPARSITY_HEADERS: &[&str] = &["scope", "kind", "declared", "zeros", "total", "sparsity"];

/// One row per layer, then one per modality, counting zeros of the student weights.
pub fn sparsity_rows(model: &ToyVlm) -> Result<Vec<SparsityRow>> {
    let mut rows: Vec<SparsityRow> = model
        .layers()
        .iter()
        .map(|l| {
            let w = l.effective_weight();
            let zeros = w.count_zeros();
            SparsityRow {
                scope: l.name.clone(),
                kind: "layer",
                declared: l.declared.map_or(String::new(), |p| p.to_string()),
                zeros,
                total: w.len(),
                sparsity: zeros as f64 / w.len() as f64,
            }
        })
        .collect();
    for m in Modality::ALL {
        let c = zero_count(model, &[m])?;
        rows.push(SparsityRow {
            scope: m.to_string(),
            kind: "modality",
            declared: String::new(),
            zeros: c.zeros,
            total: c.total,
            sparsity: c.ratio(),
        });
    }
    Ok(rows)
}

/// `scope,kind,zeros_before,zeros_after,total,sparsity_before,sparsity_after,preserved`
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PreservationRow {
    pub scope: String,
    pub kind: &'static str,
    pub zeros_before: usize,
    pub zeros_after: usize,
    pub total: usize,
    pub sparsity_before: f64,
    pub sparsity_after: f64,
    /// Every weight that was zero before is still exactly zero.
    pub preserved: bool,
}

pub const PRESERVATION_HEADERS: &[&str] = &[
    "scope",
    "kind",
    "zeros_before",
    "zeros_after",
    "total",
    "sparsity_before",
    "sparsity_after",
    "preserved",
];

/// Compares the student weights of two models with the same architecture.
pub fn preservation_rows(before: &ToyVlm, after: &ToyVlm) -> Result<Vec<PreservationRow>> {
    if before.dims() != after.dims() {
        return Err(Error::Dimension("models differ in shape".into()));
    }
    let per_layer: Vec<(Modality, PreservationRow)> = before
        .layers()
        .iter()
        .zip(after.layers())
        .map(|(b, a)| {
            let (wb, wa) = (b.effective_weight(), a.effective_weight());
            let preserved = wb
                .as_slice()
                .iter()
                .zip(wa.as_slice())
                .all(|(x, y)| *x != 0.0 || *y == 0.0);
            let (zb, za, n) = (wb.count_zeros(), wa.count_zeros(), wb.len());
            (
                b.modality,
                PreservationRow {
                    scope: b.name.clone(),
                    kind: "layer",
                    zeros_before: zb,
                    zeros_after: za,
                    total: n,
                    sparsity_before: zb as f64 / n as f64,
                    sparsity_after: za as f64 / n as f64,
                    preserved,
                },
            )
        })
        .collect();
    let mut rows: Vec<PreservationRow> = per_layer.iter().map(|(_, r)| r.clone()).collect();
    for m in Modality::ALL {
        let mine: Vec<&PreservationRow> =
            per_layer.iter().filter(|(mm, _)| *mm == m).map(|(_, r)| r).collect();
        let zb: usize = mine.iter().map(|r| r.zeros_before).sum();
        let za: usize = mine.iter().map(|r| r.zeros_after).sum();
        let n: usize = mine.iter().map(|r| r.total).sum();
        rows.push(PreservationRow {
            scope: m.to_string(),
            kind: "modality",
            zeros_before: zb,
            zeros_after: za,
            total: n,
            sparsity_before: zb as f64 / n as f64,
            sparsity_after: za as f64 / n as f64,
            preserved: mine.iter().all(|r| r.preserved),
        });
    }
    Ok(rows)
}

/// `step,epoch,lr,loss_task,loss_distill,loss_total`
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainingRow {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    pub loss_task: f64,
    pub loss_distill: f64,
    pub loss_total: f64,
}

pub const TRAINING_HEADERS: &[&str] = &["step", "epoch", "lr", "loss_task", "loss_distill", "loss_total"];

pub fn training_rows(report: &TrainingReport) -> Vec<TrainingRow> {
    report
        .steps
        .iter()
        .map(|s| TrainingRow {
            step: s.step,
            epoch: s.epoch,
            lr: s.lr,
            loss_task: s.loss.task,
            loss_distill: s.loss.distill,
            loss_total: s.loss.total,
        })
        .collect()
}

/// One row per (allocation, metric, seed); the aggregate columns repeat
/// across the seeds of an allocation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepCsvRow {
    pub s_v: f64,
    pub s_l: f64,
    pub mode: &'static str,
    pub metric: &'static str,
    pub seed: u64,
    pub accuracy: f64,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub seeds: usize,
}

pub const SWEEP_HEADERS: &[&str] = &[
    "s_v",
    "s_l",
    "mode",
    "metric",
    "seed",
    "accuracy",
    "accuracy_mean",
    "accuracy_std",
    "seeds",
];

pub fn sweep_rows(result: &SweepResult) -> Vec<SweepCsvRow> {
    result
        .rows
        .iter()
        .flat_map(|r| {
            r.seeds.iter().zip(&r.per_seed).map(move |(&seed, &acc)| SweepCsvRow {
                s_v: r.plan.s_v,
                s_l: r.plan.s_l,
                mode: r.plan.mode.as_str(),
                metric: r.metric.as_str(),
                seed,
                accuracy: acc,
                accuracy_mean: r.mean,
                accuracy_std: r.std,
                seeds: r.seeds.len(),
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModalitySparsity {
    pub vision: f64,
    pub language: f64,
    pub interface: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub samples: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub sparsity: ModalitySparsity,
    /// SHA-256 over the little-endian bytes of every student logit, in sample order.
    pub logit_checksum: String,
}

pub fn evaluate(model: &ToyVlm, samples: &[Sample]) -> Result<EvalReport> {
    let view = model.view(WeightMode::MaskedStudent);
    let mut hasher = Sha256::new();
    let mut correct = 0;
    for s in samples {
        let logits = model.logits(&view, &s.vision_in, &s.text_in)?;
        for v in &logits {
            hasher.update(v.to_le_bytes());
        }
        if argmax(&logits) == s.label {
            correct += 1;
        }
    }
    let sp = |m| zero_count(model, &[m]).map(|c| c.ratio());
    Ok(EvalReport {
        samples: samples.len(),
        correct,
        accuracy: if samples.is_empty() {
            0.0
        } else {
            correct as f64 / samples.len() as f64
        },
        sparsity: ModalitySparsity {
            vision: sp(Modality::Vision)?,
            language: sp(Modality::Language)?,
            interface: sp(Modality::Interface)?,
        },
        logit_checksum: hex::encode(hasher.finalize()),
    })
}

pub fn eval_json(report: &EvalReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report fields serialize");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate, TaskSpec};
    use crate::experiment::accuracy;
    use crate::lora::{attach_adapters, merge, AdapterMode, TrainConfig};
    use crate::model::Dims;
    use crate::pruning::{prune, ScoringMetric, SparsitySpec};

    fn pruned() -> (ToyVlm, Vec<Sample>) {
        let data = generate(&TaskSpec::default(), 40, 3).unwrap();
        let mut m = ToyVlm::new(Dims::default(), 3).unwrap();
        let nm = SparsitySpec::n_of_m(2, 4);
        prune(&mut m, ScoringMetric::Wanda, &data.samples, &[(Modality::Language, nm)]).unwrap();
        (m, data.samples)
    }

    #[test]
    fn sparsity_rows_count_exactly() {
        let (m, _) = pruned();
        let rows = sparsity_rows(&m).unwrap();
        assert_eq!(rows.len(), 8);
        let lang = rows.iter().find(|r| r.scope == "language").unwrap();
        assert_eq!(lang.sparsity, 0.5);
        assert_eq!(rows.iter().find(|r| r.scope == "vision").unwrap().zeros, 0);
        assert_eq!(rows.iter().find(|r| r.scope == "lang1").unwrap().declared, "2:4");
        let csv = String::from_utf8(to_csv(SPARSITY_HEADERS, &rows).unwrap()).unwrap();
        assert!(csv.starts_with("scope,kind,declared,zeros,total,sparsity\n"));
        assert!(csv.contains("language,modality,,"));
    }

    #[test]
    fn empty_csv_keeps_header() {
        let rows: Vec<TrainingRow> = Vec::new();
        assert_eq!(
            String::from_utf8(to_csv(TRAINING_HEADERS, &rows).unwrap()).unwrap(),
            "step,epoch,lr,loss_task,loss_distill,loss_total\n"
        );
    }

    #[test]
    fn preservation_flags_dense_merge() {
        let (m, _) = pruned();
        for (mode, ok) in [(AdapterMode::Sparse, true), (AdapterMode::Dense, false)] {
            let mut t = m.clone();
            let cfg = TrainConfig { mode, ..TrainConfig::default() };
            attach_adapters(&mut t, &cfg, &[Modality::Language]).unwrap();
            for l in t.layers_mut() {
                if let Some(a) = &mut l.adapter {
                    a.b = a.b.map(|_| 0.01);
                }
            }
            merge(&mut t).unwrap();
            let rows = preservation_rows(&m, &t).unwrap();
            let lang = rows.iter().find(|r| r.scope == "language").unwrap();
            assert_eq!(lang.preserved, ok, "{mode:?}");
            assert_eq!(lang.zeros_after == lang.zeros_before, ok);
        }
    }

    #[test]
    fn eval_matches_accuracy_and_is_stable() {
        let (m, samples) = pruned();
        let a = evaluate(&m, &samples).unwrap();
        assert_eq!(a.accuracy, accuracy(&m, &samples).unwrap());
        assert_eq!(a.sparsity.language, 0.5);
        assert_eq!(a.logit_checksum.len(), 64);
        assert_eq!(eval_json(&a), eval_json(&evaluate(&m, &samples).unwrap()));
        let mut other = m.clone();
        other.layer_mut(0).bias[0] += 1e-9;
        assert_ne!(evaluate(&other, &samples).unwrap().logit_checksum, a.logit_checksum);
    }
}
