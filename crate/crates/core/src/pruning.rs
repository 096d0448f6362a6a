//! Calibration-based weight scoring and mask construction.
//!
//! Masks are built by exact top-k selection rather than a percentile
//! threshold. Candidates are ranked by score descending, then flat index
//! ascending; the tail of that order is pruned. With this rule the kept set
//! for a smaller sparsity always contains the kept set for a larger one.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use crate::datagen::Sample;
use crate::error::{Error, Result};
use crate::model::{GradientSet, Modality, ToyVlm, WeightMode};
use crate::numeric::{BitMask, Matrix};
use crate::objectives::task_loss;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ScoringMetric {
    /// `|W₀|`
    Magnitude,
    /// `|W₀ ⊙ ḡ|`, `ḡ` the mean task-loss gradient over the calibration set.
    GradientTimesWeight,
    /// `|W₀[i,j]| · ‖X_j‖₂` over the layer inputs seen during calibration.
    Wanda,
}

impl ScoringMetric {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoringMetric::Magnitude => "magnitude",
            ScoringMetric::GradientTimesWeight => "gradient",
            ScoringMetric::Wanda => "wanda",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "magnitude" => Ok(ScoringMetric::Magnitude),
            "gradient" => Ok(ScoringMetric::GradientTimesWeight),
            "wanda" => Ok(ScoringMetric::Wanda),
            other => Err(Error::Config(format!("unknown pruning method {other:?}"))),
        }
    }

    pub fn needs_calibration(self) -> bool {
        self != ScoringMetric::Magnitude
    }

    /// Wanda ranks within output rows; the other metrics within a layer.
    pub fn default_group(self) -> ComparisonGroup {
        match self {
            ScoringMetric::Wanda => ComparisonGroup::PerOutputRow,
            _ => ComparisonGroup::PerLayer,
        }
    }
}

/// Nonnegative, finite importance scores shaped like a weight matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMatrix(Matrix);

impl ScoreMatrix {
    pub fn new(m: Matrix) -> Result<Self> {
        if m.as_slice().iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Domain("scores must be finite and nonnegative".into()));
        }
        Ok(ScoreMatrix(m))
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }
}

pub type ScoreMap = BTreeMap<String, ScoreMatrix>;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SparsityPattern {
    Unstructured { ratio: f64 },
    /// `n` of every `m` consecutive weights along the input dimension are zero.
    NofM { n: usize, m: usize },
}

impl SparsityPattern {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SparsityPattern::Unstructured { ratio } if !(0.0..=1.0).contains(&ratio) => Err(
                Error::Config(format!("sparsity ratio {ratio} outside [0, 1]")),
            ),
            SparsityPattern::NofM { n, m } if m == 0 || n >= m => {
                Err(Error::Config(format!("invalid N:M pattern {n}:{m}")))
            }
            _ => Ok(()),
        }
    }

    /// `unstructured:<ratio>` or `<n>:<m>`.
    pub fn parse(s: &str) -> Result<Self> {
        let p = if let Some(r) = s.strip_prefix("unstructured:") {
            SparsityPattern::Unstructured {
                ratio: r
                    .parse()
                    .map_err(|_| Error::Config(format!("bad sparsity ratio in {s:?}")))?,
            }
        } else {
            let (n, m) = s
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("bad sparsity pattern {s:?}")))?;
            let parse = |x: &str| {
                x.parse::<usize>()
                    .map_err(|_| Error::Config(format!("bad N:M pattern {s:?}")))
            };
            SparsityPattern::NofM {
                n: parse(n)?,
                m: parse(m)?,
            }
        };
        p.validate()?;
        Ok(p)
    }
}

impl fmt::Display for SparsityPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SparsityPattern::Unstructured { ratio } => write!(f, "unstructured:{ratio}"),
            SparsityPattern::NofM { n, m } => write!(f, "{n}:{m}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ComparisonGroup {
    PerLayer,
    PerOutputRow,
    /// All layers pruned in one call compete for the same keep budget.
    Global,
}

impl ComparisonGroup {
    pub fn as_str(self) -> &'static str {
        match self {
            ComparisonGroup::PerLayer => "layer",
            ComparisonGroup::PerOutputRow => "row",
            ComparisonGroup::Global => "global",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "layer" => Ok(ComparisonGroup::PerLayer),
            "row" => Ok(ComparisonGroup::PerOutputRow),
            "global" => Ok(ComparisonGroup::Global),
            other => Err(Error::Config(format!("unknown comparison group {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SparsitySpec {
    pub pattern: SparsityPattern,
    pub group: ComparisonGroup,
}

impl SparsitySpec {
    pub fn unstructured(ratio: f64, group: ComparisonGroup) -> Self {
        SparsitySpec {
            pattern: SparsityPattern::Unstructured { ratio },
            group,
        }
    }

    pub fn n_of_m(n: usize, m: usize) -> Self {
        SparsitySpec {
            pattern: SparsityPattern::NofM { n, m },
            group: ComparisonGroup::PerLayer,
        }
    }
}

/// `⌈(1 - s) · n⌉`, snapping products within 1e-9 of an integer first so
/// that e.g. `(1 - 0.7) · 10` keeps 3 rather than 4.
pub fn keep_count(n: usize, ratio: f64) -> usize {
    let x = (1.0 - ratio) * n as f64;
    let r = x.round();
    let k = if (x - r).abs() < 1e-9 { r } else { x.ceil() };
    (k.max(0.0) as usize).min(n)
}

fn rank_desc(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

/// Keep flags for the `keep` best of `scores`.
fn top_k(scores: &[f64], keep: usize) -> Vec<bool> {
    let mut flags = vec![false; scores.len()];
    for &i in rank_desc(scores).iter().take(keep) {
        flags[i] = true;
    }
    flags
}

pub fn build_mask(scores: &ScoreMatrix, spec: &SparsitySpec) -> Result<BitMask> {
    spec.pattern.validate()?;
    let s = scores.matrix();
    let (rows, cols) = s.shape();
    let flags = match (spec.pattern, spec.group) {
        (SparsityPattern::NofM { n, m }, _) => {
            if cols % m != 0 {
                return Err(Error::Dimension(format!(
                    "{n}:{m} blocks do not tile {cols} input columns"
                )));
            }
            s.as_slice()
                .chunks(m)
                .flat_map(|block| top_k(block, m - n))
                .collect()
        }
        (SparsityPattern::Unstructured { ratio }, ComparisonGroup::PerOutputRow) => (0..rows)
            .flat_map(|i| top_k(s.row(i), keep_count(cols, ratio)))
            .collect(),
        (SparsityPattern::Unstructured { ratio }, _) => {
            top_k(s.as_slice(), keep_count(s.len(), ratio))
        }
    };
    BitMask::from_bools(rows, cols, &flags)
}

/// Unstructured masks for several layers ranked against each other; ties
/// across layers go to the earlier layer in `scores`.
pub fn build_masks_global(scores: &[&ScoreMatrix], ratio: f64) -> Result<Vec<BitMask>> {
    SparsityPattern::Unstructured { ratio }.validate()?;
    let pooled: Vec<f64> = scores
        .iter()
        .flat_map(|s| s.matrix().as_slice().iter().copied())
        .collect();
    let flags = top_k(&pooled, keep_count(pooled.len(), ratio));
    let mut offset = 0;
    scores
        .iter()
        .map(|s| {
            let (r, c) = s.matrix().shape();
            let m = BitMask::from_bools(r, c, &flags[offset..offset + r * c]);
            offset += r * c;
            m
        })
        .collect()
}

/// Scores every prunable layer of `model` at its current state.
pub fn score(model: &ToyVlm, metric: ScoringMetric, calib: &[Sample]) -> Result<ScoreMap> {
    if metric.needs_calibration() && calib.is_empty() {
        return Err(Error::Input(format!(
            "{} scoring needs a non-empty calibration set",
            metric.as_str()
        )));
    }
    let prunable: Vec<usize> = model
        .layers()
        .iter()
        .enumerate()
        .filter(|(_, l)| l.modality.is_prunable())
        .map(|(i, _)| i)
        .collect();

    let per_layer: Vec<Matrix> = match metric {
        ScoringMetric::Magnitude => prunable
            .iter()
            .map(|&i| model.layers()[i].w0.map(f64::abs))
            .collect(),
        ScoringMetric::GradientTimesWeight => {
            let g = mean_task_gradient(model, calib)?;
            prunable
                .iter()
                .map(|&i| {
                    let w0 = &model.layers()[i].w0;
                    Matrix::from_fn(w0.rows(), w0.cols(), |r, c| {
                        (w0.get(r, c) * g.weights[i].get(r, c)).abs()
                    })
                })
                .collect()
        }
        ScoringMetric::Wanda => {
            let norms = input_feature_norms(model, calib)?;
            prunable
                .iter()
                .map(|&i| {
                    let w0 = &model.layers()[i].w0;
                    Matrix::from_fn(w0.rows(), w0.cols(), |r, c| w0.get(r, c).abs() * norms[i][c])
                })
                .collect()
        }
    };
    prunable
        .iter()
        .zip(per_layer)
        .map(|(&i, m)| Ok((model.layers()[i].name.clone(), ScoreMatrix::new(m)?)))
        .collect()
}

/// Mean over `samples` of the task-loss gradient at the student weights.
pub fn mean_task_gradient(model: &ToyVlm, samples: &[Sample]) -> Result<GradientSet> {
    if samples.is_empty() {
        return Err(Error::Input("no samples to average gradients over".into()));
    }
    let view = model.view(WeightMode::MaskedStudent);
    let mut acc = GradientSet::zeros_like(model);
    for s in samples {
        let (logits, tape) = model.forward_view(&view, &s.vision_in, &s.text_in)?;
        let (_, dlogits) = task_loss(&logits, s.label)?;
        acc.add_assign(&model.backward(&tape, &dlogits)?);
    }
    acc.scale(1.0 / samples.len() as f64);
    Ok(acc)
}

/// `‖X_j‖₂` for every input feature `j` of every layer, streamed over the
/// calibration samples in order.
pub fn input_feature_norms(model: &ToyVlm, samples: &[Sample]) -> Result<Vec<Vec<f64>>> {
    let view = model.view(WeightMode::MaskedStudent);
    let mut sumsq: Vec<Vec<f64>> = model
        .layers()
        .iter()
        .map(|l| vec![0.0; l.w0.cols()])
        .collect();
    for s in samples {
        let (_, tape) = model.forward_view(&view, &s.vision_in, &s.text_in)?;
        for (i, acc) in sumsq.iter_mut().enumerate() {
            for (a, x) in acc.iter_mut().zip(tape.layer_input(i)) {
                *a += x * x;
            }
        }
    }
    Ok(sumsq
        .into_iter()
        .map(|v| v.into_iter().map(f64::sqrt).collect())
        .collect())
}

/// Replaces the masks of the named layers; `W₀` is left untouched.
pub fn apply_masks(model: &mut ToyVlm, masks: &BTreeMap<String, BitMask>) -> Result<()> {
    for (name, mask) in masks {
        let layer = model
            .layer(name)
            .ok_or_else(|| Error::Input(format!("no layer named {name:?}")))?;
        if !layer.modality.is_prunable() {
            return Err(Error::Input(format!("layer {name:?} is not prunable")));
        }
        if layer.w0.shape() != mask.shape() {
            return Err(Error::Dimension(format!("mask shape does not fit layer {name:?}")));
        }
    }
    for (name, mask) in masks {
        let idx = model.layer_index(name).expect("checked above");
        let layer = model.layer_mut(idx);
        layer.mask = mask.clone();
        layer.declared = None;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ZeroCount {
    pub zeros: usize,
    pub total: usize,
}

impl ZeroCount {
    pub fn ratio(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.zeros as f64 / self.total as f64
        }
    }
}

/// Exact zero count of the student weights over the layers in `scope`.
pub fn zero_count(model: &ToyVlm, scope: &[Modality]) -> Result<ZeroCount> {
    let mut c = ZeroCount::default();
    let mut any = false;
    for (_, l) in model.layers_in(scope) {
        any = true;
        let w = l.effective_weight();
        c.zeros += w.count_zeros();
        c.total += w.len();
    }
    if !any {
        return Err(Error::Input("sparsity scope selects no layers".into()));
    }
    Ok(c)
}

/// Fraction of zero entries of the student weights over `scope`.
pub fn measured_sparsity(model: &ToyVlm, scope: &[Modality]) -> Result<f64> {
    zero_count(model, scope).map(|c| c.ratio())
}

/// Scores the model once, then builds and applies a mask for each
/// `(modality, spec)` target.
pub fn prune(
    model: &mut ToyVlm,
    metric: ScoringMetric,
    calib: &[Sample],
    targets: &[(Modality, SparsitySpec)],
) -> Result<ScoreMap> {
    for (m, spec) in targets {
        if !m.is_prunable() {
            return Err(Error::Input(format!("{m} layers are never pruned")));
        }
        spec.pattern.validate()?;
    }
    let scores = score(model, metric, calib)?;
    prune_with_scores(model, &scores, targets)?;
    Ok(scores)
}

fn score_of<'a>(scores: &'a ScoreMap, layer: &str) -> Result<&'a ScoreMatrix> {
    scores
        .get(layer)
        .ok_or_else(|| Error::Input(format!("no scores for layer {layer}")))
}

/// Masks the layers of each target modality from precomputed scores and
/// records the declared pattern.
pub fn prune_with_scores(
    model: &mut ToyVlm,
    scores: &ScoreMap,
    targets: &[(Modality, SparsitySpec)],
) -> Result<()> {
    for (m, spec) in targets {
        if !m.is_prunable() {
            return Err(Error::Input(format!("{m} layers are never pruned")));
        }
        spec.pattern.validate()?;
    }
    let mut masks = BTreeMap::new();
    let mut declared = Vec::new();
    for &(modality, spec) in targets {
        let names: Vec<String> = model
            .layers_in(&[modality])
            .map(|(_, l)| l.name.clone())
            .collect();
        match (spec.pattern, spec.group) {
            (SparsityPattern::Unstructured { ratio }, ComparisonGroup::Global) => {
                let group = names
                    .iter()
                    .map(|n| score_of(scores, n))
                    .collect::<Result<Vec<_>>>()?;
                for (n, m) in names.iter().zip(build_masks_global(&group, ratio)?) {
                    masks.insert(n.clone(), m);
                }
            }
            _ => {
                for n in &names {
                    masks.insert(n.clone(), build_mask(score_of(scores, n)?, &spec)?);
                }
            }
        }
        declared.extend(names.into_iter().map(|n| (n, spec.pattern)));
    }
    apply_masks(model, &masks)?;
    for (name, pattern) in declared {
        let idx = model.layer_index(&name).expect("layer exists");
        model.layer_mut(idx).declared = Some(pattern);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate, TaskSpec};
    use crate::model::Dims;
    use crate::numeric::Rng;
    use proptest::prelude::*;

    fn sm(rows: &[Vec<f64>]) -> ScoreMatrix {
        ScoreMatrix::new(Matrix::from_rows(rows).unwrap()).unwrap()
    }

    fn bits(m: &BitMask) -> Vec<u8> {
        m.iter().map(u8::from).collect()
    }

    fn random_scores(seed: u64, r: usize, c: usize) -> ScoreMatrix {
        let mut rng = Rng::new(seed);
        ScoreMatrix::new(Matrix::from_fn(r, c, |_, _| rng.uniform())).unwrap()
    }

    #[test]
    fn magnitude_is_absolute_value() {
        let dims = Dims {
            d_v: 2,
            h_v: 2,
            d_q: 2,
            d_t: 2,
            h_l: 2,
            classes: 2,
        };
        let mut m = ToyVlm::new(dims, 0).unwrap();
        m.layer_mut(0).w0 = Matrix::from_rows(&[vec![1.0, -3.0], vec![0.5, 2.0]]).unwrap();
        let s = score(&m, ScoringMetric::Magnitude, &[]).unwrap();
        assert_eq!(s["vision1"].matrix().as_slice(), &[1.0, 3.0, 0.5, 2.0]);
        assert!(!s.contains_key("interface"));
        assert!(matches!(
            score(&m, ScoringMetric::Wanda, &[]),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn unstructured_top_half() {
        let m = build_mask(
            &sm(&[vec![1.0, 3.0], vec![0.5, 2.0]]),
            &SparsitySpec::unstructured(0.5, ComparisonGroup::PerLayer),
        )
        .unwrap();
        assert_eq!(bits(&m), vec![0, 1, 0, 1]);
    }

    #[test]
    fn two_of_four_block() {
        let m = build_mask(&sm(&[vec![0.1, 0.9, 0.4, 0.05]]), &SparsitySpec::n_of_m(2, 4)).unwrap();
        assert_eq!(bits(&m), vec![0, 1, 1, 0]);
    }

    /// Ties: rank by flat index ascending, prune from the back.
    #[test]
    fn ties_keep_smaller_index() {
        let m = build_mask(
            &sm(&[vec![1.0; 4]]),
            &SparsitySpec::unstructured(0.5, ComparisonGroup::PerLayer),
        )
        .unwrap();
        assert_eq!(bits(&m), vec![1, 1, 0, 0]);
        let m = build_mask(&sm(&[vec![2.0; 8]]), &SparsitySpec::n_of_m(2, 4)).unwrap();
        assert_eq!(bits(&m), vec![1, 1, 0, 0, 1, 1, 0, 0]);
    }

    #[test]
    fn n_of_m_requires_tiling() {
        let err = build_mask(&random_scores(1, 2, 6), &SparsitySpec::n_of_m(2, 4));
        assert!(matches!(err, Err(Error::Dimension(_))));
        assert!(SparsityPattern::NofM { n: 4, m: 4 }.validate().is_err());
    }

    #[test]
    fn per_row_group_counts() {
        let m = build_mask(
            &random_scores(2, 5, 10),
            &SparsitySpec::unstructured(0.3, ComparisonGroup::PerOutputRow),
        )
        .unwrap();
        for i in 0..5 {
            assert_eq!((0..10).filter(|&j| m.get(i, j)).count(), 7);
        }
    }

    #[test]
    fn global_group_pools_layers() {
        let a = sm(&[vec![10.0, 9.0]]);
        let b = sm(&[vec![1.0, 2.0, 3.0]]);
        let masks = build_masks_global(&[&a, &b], 0.6).unwrap();
        assert_eq!(bits(&masks[0]), vec![1, 1]);
        assert_eq!(bits(&masks[1]), vec![0, 0, 0]);
    }

    #[test]
    fn keep_count_snaps_to_integers() {
        assert_eq!(keep_count(10, 0.7), 3);
        assert_eq!(keep_count(10, 0.1 * 3.0), 7);
        assert_eq!(keep_count(4, 0.5), 2);
        assert_eq!(keep_count(5, 0.5), 3);
        assert_eq!(keep_count(7, 1.0), 0);
        assert_eq!(keep_count(7, 0.0), 7);
    }

    #[test]
    fn keep_count_exact_on_grid() {
        for seed in 0..20u64 {
            let (r, c) = (1 + (seed as usize % 7), 3 + (seed as usize % 11));
            let s = random_scores(seed, r, c);
            let n = r * c;
            for k in 0..10usize {
                let ratio = k as f64 / 10.0;
                let m = build_mask(&s, &SparsitySpec::unstructured(ratio, ComparisonGroup::PerLayer))
                    .unwrap();
                // ⌈(10 - k) n / 10⌉ in integers.
                let expected = ((10 - k) * n).div_ceil(10);
                assert_eq!(m.count_ones(), expected, "n={n} s={ratio}");
            }
        }
    }

    #[test]
    fn wanda_three_four_five() {
        let dims = Dims {
            d_v: 2,
            h_v: 1,
            d_q: 1,
            d_t: 1,
            h_l: 1,
            classes: 2,
        };
        let mut m = ToyVlm::new(dims, 0).unwrap();
        m.layer_mut(0).w0 = Matrix::from_rows(&[vec![1.0, -2.0]]).unwrap();
        let calib: Vec<Sample> = [[3.0, 0.0], [4.0, 0.0]]
            .iter()
            .map(|v| Sample {
                vision_in: v.to_vec(),
                text_in: vec![0.0],
                label: 0,
            })
            .collect();
        let s = score(&m, ScoringMetric::Wanda, &calib).unwrap();
        assert_eq!(s["vision1"].matrix().as_slice(), &[5.0, 0.0]);
    }

    #[test]
    fn gradient_metric_matches_per_sample_average() {
        let dims = Dims::default();
        let m = ToyVlm::new(dims, 4).unwrap();
        let data = generate(&TaskSpec::default(), 32, 4).unwrap();
        let s = score(&m, ScoringMetric::GradientTimesWeight, &data.samples).unwrap();
        // Oracle: gradients one sample at a time, averaged at the end.
        let per_sample: Vec<GradientSet> = data
            .samples
            .iter()
            .map(|x| {
                let (logits, tape) = m
                    .forward(&x.vision_in, &x.text_in, WeightMode::MaskedStudent)
                    .unwrap();
                let (_, d) = task_loss(&logits, x.label).unwrap();
                m.backward(&tape, &d).unwrap()
            })
            .collect();
        for (i, l) in m.layers().iter().enumerate() {
            if !l.modality.is_prunable() {
                continue;
            }
            for k in 0..l.w0.len() {
                let mean = per_sample.iter().map(|g| g.weights[i].as_slice()[k]).sum::<f64>()
                    / per_sample.len() as f64;
                let want = (l.w0.as_slice()[k] * mean).abs();
                let got = s[&l.name].matrix().as_slice()[k];
                assert!((got - want).abs() <= 1e-12, "{} {k}: {got} vs {want}", l.name);
            }
        }
    }

    #[test]
    fn apply_masks_rejects_unknown_and_interface() {
        let mut m = ToyVlm::new(Dims::default(), 1).unwrap();
        let mut masks = BTreeMap::new();
        masks.insert("nope".to_string(), BitMask::ones(1, 1));
        assert!(matches!(apply_masks(&mut m, &masks), Err(Error::Input(_))));
        let mut masks = BTreeMap::new();
        masks.insert("interface".to_string(), BitMask::ones(8, 32));
        assert!(matches!(apply_masks(&mut m, &masks), Err(Error::Input(_))));
    }

    #[test]
    fn language_only_zero_masks() {
        let mut m = ToyVlm::new(Dims::default(), 1).unwrap();
        let before = m.clone();
        let masks: BTreeMap<String, BitMask> = m
            .layers_in(&[Modality::Language])
            .map(|(_, l)| (l.name.clone(), BitMask::zeros(l.w0.rows(), l.w0.cols())))
            .collect();
        apply_masks(&mut m, &masks).unwrap();
        assert_eq!(measured_sparsity(&m, &[Modality::Language]).unwrap(), 1.0);
        assert_eq!(measured_sparsity(&m, &[Modality::Vision]).unwrap(), 0.0);
        for (a, b) in m.layers().iter().zip(before.layers()) {
            assert_eq!(a.w0, b.w0);
        }
        assert!(measured_sparsity(&m, &[]).is_err());
    }

    #[test]
    fn measured_sparsity_after_pruning() {
        let data = generate(&TaskSpec::default(), 64, 2).unwrap();
        let mut m = ToyVlm::new(Dims::default(), 2).unwrap();
        assert_eq!(
            measured_sparsity(&m, &[Modality::Vision, Modality::Language]).unwrap(),
            0.0
        );
        let spec = SparsitySpec::unstructured(0.5, ComparisonGroup::PerLayer);
        prune(
            &mut m,
            ScoringMetric::Magnitude,
            &[],
            &[(Modality::Vision, spec), (Modality::Language, spec)],
        )
        .unwrap();
        for l in m.layers().iter().filter(|l| l.modality.is_prunable()) {
            let zeros = l.effective_weight().count_zeros() as f64;
            assert!((zeros - l.w0.len() as f64 / 2.0).abs() <= 1.0);
        }
        let mut m = ToyVlm::new(Dims::default(), 2).unwrap();
        let nm = SparsitySpec::n_of_m(2, 4);
        prune(
            &mut m,
            ScoringMetric::Wanda,
            &data.samples,
            &[(Modality::Vision, nm), (Modality::Language, nm)],
        )
        .unwrap();
        assert_eq!(
            measured_sparsity(&m, &[Modality::Vision, Modality::Language]).unwrap(),
            0.5
        );
        assert_eq!(m.layers()[0].declared, Some(SparsityPattern::NofM { n: 2, m: 4 }));
    }

    #[test]
    fn pattern_parsing() {
        assert_eq!(
            SparsityPattern::parse("2:4").unwrap(),
            SparsityPattern::NofM { n: 2, m: 4 }
        );
        assert_eq!(
            SparsityPattern::parse("unstructured:0.25").unwrap(),
            SparsityPattern::Unstructured { ratio: 0.25 }
        );
        assert!(SparsityPattern::parse("unstructured:1.5").is_err());
        assert!(SparsityPattern::parse("4:2").is_err());
        let p = SparsityPattern::Unstructured { ratio: 0.3 };
        assert_eq!(SparsityPattern::parse(&p.to_string()).unwrap(), p);
    }

    proptest! {
        #[test]
        fn n_of_m_blocks_exact(seed in any::<u64>(), rows in 1usize..6, blocks in 1usize..5, which in 0usize..2) {
            let (n, m) = [(2, 4), (4, 8)][which];
            let s = random_scores(seed, rows, blocks * m);
            let mask = build_mask(&s, &SparsitySpec::n_of_m(n, m)).unwrap();
            for i in 0..rows {
                for b in 0..blocks {
                    let kept = (0..m).filter(|&j| mask.get(i, b * m + j)).count();
                    prop_assert_eq!(kept, m - n);
                }
            }
        }

        #[test]
        fn masks_are_nested(seed in any::<u64>(), lo in 0usize..10, hi in 0usize..10) {
            let (lo, hi) = (lo.min(hi), lo.max(hi));
            let s = random_scores(seed, 4, 6);
            let spec = |k: usize| SparsitySpec::unstructured(k as f64 / 10.0, ComparisonGroup::PerLayer);
            let dense = build_mask(&s, &spec(lo)).unwrap();
            let sparse = build_mask(&s, &spec(hi)).unwrap();
            for k in 0..24 {
                prop_assert!(!sparse.get_flat(k) || dense.get_flat(k));
            }
        }

        #[test]
        fn positive_scaling_invariant(seed in any::<u64>(), scale in 0.01f64..100.0, ratio in 0.0f64..=1.0) {
            let s = random_scores(seed, 3, 8);
            let scaled = ScoreMatrix::new(s.matrix().scale(scale)).unwrap();
            for group in [ComparisonGroup::PerLayer, ComparisonGroup::PerOutputRow] {
                let spec = SparsitySpec::unstructured(ratio, group);
                prop_assert_eq!(build_mask(&s, &spec).unwrap(), build_mask(&scaled, &spec).unwrap());
            }
            prop_assert_eq!(
                build_mask(&s, &SparsitySpec::n_of_m(2, 4)).unwrap(),
                build_mask(&scaled, &SparsitySpec::n_of_m(2, 4)).unwrap()
            );
        }
    }
}
