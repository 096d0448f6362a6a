//! Modality-wise sparsity allocation sweeps.
//!
//! A plan splits a total budget `s_v + s_l` between the vision and language
//! towers. [`run_sweep`] prunes one pretrained base model per seed under every
//! plan and aggregates held-out accuracy across seeds.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::experiment::{Scenario, ScenarioConfig};
use crate::model::Modality;
use crate::pruning::{prune_with_scores, score, ScoreMap, ScoringMetric, SparsitySpec};

const RATIO_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AllocationMode {
    /// Both towers pruned at the same ratio.
    Joint,
    /// Only the vision tower is pruned; language masks are left untouched.
    VisionOnly,
    /// Only the language tower is pruned; vision masks are left untouched.
    LanguageOnly,
    Custom,
}

impl AllocationMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AllocationMode::Joint => "joint",
            AllocationMode::VisionOnly => "vision_only",
            AllocationMode::LanguageOnly => "language_only",
            AllocationMode::Custom => "custom",
        }
    }
}

impl std::fmt::Display for AllocationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AllocationPlan {
    pub s_v: f64,
    pub s_l: f64,
    pub mode: AllocationMode,
}

fn same(a: f64, b: f64) -> bool {
    (a - b).abs() <= RATIO_EPS
}

impl AllocationPlan {
    pub fn new(s_v: f64, s_l: f64, mode: AllocationMode) -> Result<Self> {
        for (name, r) in [("vision", s_v), ("language", s_l)] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Input(format!("{name} sparsity {r} outside [0, 1]")));
            }
        }
        let consistent = match mode {
            AllocationMode::Joint => same(s_v, s_l),
            AllocationMode::VisionOnly => s_l == 0.0,
            AllocationMode::LanguageOnly => s_v == 0.0,
            AllocationMode::Custom => true,
        };
        if !consistent {
            return Err(Error::Input(format!(
                "allocation ({s_v}, {s_l}) is inconsistent with mode {mode}"
            )));
        }
        Ok(AllocationPlan { s_v, s_l, mode })
    }

    pub fn joint(s: f64) -> Result<Self> {
        Self::new(s, s, AllocationMode::Joint)
    }

    pub fn vision_only(s_v: f64) -> Result<Self> {
        Self::new(s_v, 0.0, AllocationMode::VisionOnly)
    }

    pub fn language_only(s_l: f64) -> Result<Self> {
        Self::new(0.0, s_l, AllocationMode::LanguageOnly)
    }

    /// Picks the most specific mode for a pair of ratios.
    pub fn infer(s_v: f64, s_l: f64) -> Result<Self> {
        let mode = if same(s_v, s_l) {
            AllocationMode::Joint
        } else if s_l == 0.0 {
            AllocationMode::VisionOnly
        } else if s_v == 0.0 {
            AllocationMode::LanguageOnly
        } else {
            AllocationMode::Custom
        };
        Self::new(s_v, s_l, mode)
    }

    /// Unstructured pruning targets for this plan, grouped as `metric` prefers.
    pub fn targets(&self, metric: ScoringMetric) -> Vec<(Modality, SparsitySpec)> {
        let group = metric.default_group();
        let vision = (Modality::Vision, SparsitySpec::unstructured(self.s_v, group));
        let language = (Modality::Language, SparsitySpec::unstructured(self.s_l, group));
        match self.mode {
            AllocationMode::VisionOnly => vec![vision],
            AllocationMode::LanguageOnly => vec![language],
            AllocationMode::Joint | AllocationMode::Custom => vec![vision, language],
        }
    }
}

fn round_ratio(x: f64) -> f64 {
    (x * 1e12).round() / 1e12
}

/// All splits of `budget` with `s_v` stepping from `max(0, budget - 1)` by
/// `step` and the upper end `min(1, budget)` always included. Ratios are
/// rounded to 12 decimals. A step wider than the range yields the two endpoints.
pub fn enumerate_allocations(budget: f64, step: f64) -> Result<Vec<AllocationPlan>> {
    if !(budget > 0.0 && budget <= 2.0) {
        return Err(Error::Input(format!("budget {budget} outside (0, 2]")));
    }
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::Input(format!("step {step} must be positive")));
    }
    let lo = (budget - 1.0).max(0.0);
    let hi = budget.min(1.0);
    let mut plans = Vec::new();
    let mut k = 0u64;
    loop {
        let s_v = round_ratio(lo + k as f64 * step);
        if s_v >= hi - 1e-9 {
            break;
        }
        plans.push(AllocationPlan::infer(s_v, round_ratio(budget - s_v))?);
        k += 1;
    }
    plans.push(AllocationPlan::infer(hi, round_ratio(budget - hi))?);
    Ok(plans)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub plan: AllocationPlan,
    pub metric: ScoringMetric,
    pub mean: f64,
    /// Sample standard deviation over seeds; 0 for a single seed.
    pub std: f64,
    pub seeds: Vec<u64>,
    /// Accuracy per seed, in the order of `seeds`.
    pub per_seed: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    /// One row per (plan, metric), plans outermost.
    pub rows: Vec<SweepRow>,
    /// Unpruned accuracy per seed.
    pub baseline: Vec<f64>,
}

impl SweepResult {
    pub fn best(&self) -> Option<&SweepRow> {
        self.rows.iter().fold(None, |best: Option<&SweepRow>, r| match best {
            Some(b) if b.mean >= r.mean => Some(b),
            _ => Some(r),
        })
    }

    pub fn find(&self, s_v: f64, s_l: f64) -> Option<&SweepRow> {
        self.rows
            .iter()
            .find(|r| same(r.plan.s_v, s_v) && same(r.plan.s_l, s_l))
    }
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Builds one scenario per seed and sweeps every plan under every metric.
pub fn run_sweep(
    cfg: &ScenarioConfig,
    plans: &[AllocationPlan],
    metrics: &[ScoringMetric],
    seeds: &[u64],
) -> Result<SweepResult> {
    if seeds.is_empty() {
        return Err(Error::Input("sweep needs at least one seed".into()));
    }
    let scenarios = seeds
        .par_iter()
        .map(|&s| Scenario::build(cfg, s))
        .collect::<Result<Vec<_>>>()?;
    sweep_scenarios(&scenarios, plans, metrics)
}

/// Sweeps prebuilt scenarios. Cells run in parallel; aggregation follows
/// (plan, metric, scenario) order.
pub fn sweep_scenarios(
    scenarios: &[Scenario],
    plans: &[AllocationPlan],
    metrics: &[ScoringMetric],
) -> Result<SweepResult> {
    if plans.is_empty() || metrics.is_empty() || scenarios.is_empty() {
        return Err(Error::Input(
            "sweep needs at least one plan, metric and seed".into(),
        ));
    }
    let scores: Vec<Vec<ScoreMap>> = scenarios
        .par_iter()
        .map(|sc| {
            metrics
                .iter()
                .map(|&m| score(&sc.base, m, &sc.splits.calib.samples))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let cells: Vec<(usize, usize, usize)> = (0..plans.len())
        .flat_map(|p| {
            (0..metrics.len()).flat_map(move |m| (0..scenarios.len()).map(move |s| (p, m, s)))
        })
        .collect();
    let accs = cells
        .par_iter()
        .map(|&(p, m, s)| {
            let sc = &scenarios[s];
            let mut model = sc.base.clone();
            prune_with_scores(&mut model, &scores[s][m], &plans[p].targets(metrics[m]))?;
            sc.eval_accuracy(&model)
        })
        .collect::<Result<Vec<f64>>>()?;
    let seeds: Vec<u64> = scenarios.iter().map(|s| s.seed).collect();
    let rows = accs
        .chunks(scenarios.len())
        .zip(cells.chunks(scenarios.len()))
        .map(|(per_seed, cell)| {
            let (p, m, _) = cell[0];
            let (mean, std) = mean_std(per_seed);
            SweepRow {
                plan: plans[p],
                metric: metrics[m],
                mean,
                std,
                seeds: seeds.clone(),
                per_seed: per_seed.to_vec(),
            }
        })
        .collect();
    Ok(SweepResult {
        rows,
        baseline: scenarios.iter().map(|s| s.base_accuracy).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::TaskSpec;
    use crate::model::Dims;
    use crate::pretrain::PretrainConfig;
    use proptest::prelude::*;

    fn pairs(plans: &[AllocationPlan]) -> Vec<(f64, f64)> {
        plans.iter().map(|p| (p.s_v, p.s_l)).collect()
    }

    #[test]
    fn enumeration_examples() {
        assert_eq!(
            pairs(&enumerate_allocations(1.0, 0.25).unwrap()),
            vec![(0.0, 1.0), (0.25, 0.75), (0.5, 0.5), (0.75, 0.25), (1.0, 0.0)]
        );
        assert_eq!(
            pairs(&enumerate_allocations(1.2, 0.3).unwrap()),
            vec![(0.2, 1.0), (0.5, 0.7), (0.8, 0.4), (1.0, 0.2)]
        );
        assert_eq!(
            pairs(&enumerate_allocations(0.5, 1.0).unwrap()),
            vec![(0.0, 0.5), (0.5, 0.0)]
        );
    }

    #[test]
    fn default_grids() {
        let g = enumerate_allocations(1.0, 0.1).unwrap();
        assert_eq!(g.len(), 11);
        assert_eq!((g[3].s_v, g[3].s_l), (0.3, 0.7));
        assert_eq!(g[5].mode, AllocationMode::Joint);
        assert_eq!(g[0].mode, AllocationMode::LanguageOnly);
        assert_eq!(g[10].mode, AllocationMode::VisionOnly);
        assert_eq!(g[2].mode, AllocationMode::Custom);
        let g = enumerate_allocations(1.2, 0.1).unwrap();
        assert_eq!(g.len(), 9);
        assert_eq!((g[0].s_v, g[0].s_l), (0.2, 1.0));
        assert_eq!(g[4].mode, AllocationMode::Joint);
    }

    #[test]
    fn enumeration_rejects_bad_ranges() {
        for (b, s) in [(0.0, 0.1), (2.5, 0.1), (1.0, 0.0), (1.0, f64::INFINITY), (f64::NAN, 0.1), (1.0, -0.1)] {
            assert!(matches!(enumerate_allocations(b, s), Err(Error::Input(_))), "{b} {s}");
        }
    }

    #[test]
    fn plan_consistency() {
        assert!(AllocationPlan::new(0.3, 0.5, AllocationMode::Joint).is_err());
        assert!(AllocationPlan::new(0.3, 0.1, AllocationMode::VisionOnly).is_err());
        assert!(AllocationPlan::new(0.1, 0.3, AllocationMode::LanguageOnly).is_err());
        assert!(AllocationPlan::new(1.1, 0.0, AllocationMode::Custom).is_err());
        assert!(AllocationPlan::new(0.2, 0.7, AllocationMode::Custom).is_ok());
        assert_eq!(AllocationPlan::vision_only(0.4).unwrap().targets(ScoringMetric::Wanda).len(), 1);
    }

    #[test]
    fn mean_std_sample() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[0.7]), (0.7, 0.0));
    }

    fn small_config() -> ScenarioConfig {
        ScenarioConfig {
            dims: Dims::default(),
            task: TaskSpec::default(),
            samples: 360,
            calib_count: 32,
            eval_count: 128,
            pretrain: PretrainConfig {
                epochs: 3,
                ..PretrainConfig::default()
            },
        }
    }

    #[test]
    fn sweep_identity_and_determinism() {
        let cfg = small_config();
        let plans = vec![
            AllocationPlan::joint(0.0).unwrap(),
            AllocationPlan::infer(0.3, 0.7).unwrap(),
            AllocationPlan::language_only(1.0).unwrap(),
        ];
        let metrics = [ScoringMetric::Wanda, ScoringMetric::Magnitude];
        let a = run_sweep(&cfg, &plans, &metrics, &[3, 4]).unwrap();
        let b = run_sweep(&cfg, &plans, &metrics, &[3, 4]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows.len(), 6);
        for row in &a.rows[..2] {
            assert_eq!(row.per_seed, a.baseline);
        }
        assert_eq!(a.rows[1].metric, ScoringMetric::Magnitude);
        assert_eq!(a.find(0.3, 0.7).unwrap().plan.mode, AllocationMode::Custom);
    }

    #[test]
    fn single_modality_scopes_leave_other_masks_alone() {
        let sc = Scenario::build(&small_config(), 9).unwrap();
        let scores = score(&sc.base, ScoringMetric::Wanda, &sc.splits.calib.samples).unwrap();
        for (plan, untouched) in [
            (AllocationPlan::vision_only(0.6).unwrap(), Modality::Language),
            (AllocationPlan::language_only(0.6).unwrap(), Modality::Vision),
        ] {
            let mut m = sc.base.clone();
            prune_with_scores(&mut m, &scores, &plan.targets(ScoringMetric::Wanda)).unwrap();
            for (a, b) in m.layers().iter().zip(sc.base.layers()) {
                if a.modality == untouched || a.modality == Modality::Interface {
                    assert_eq!(a.mask, b.mask, "{}", a.name);
                    assert_eq!(a.declared, None);
                } else {
                    assert_ne!(a.mask, b.mask, "{}", a.name);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn enumeration_invariants(budget in 0.01f64..=2.0, frac in 0.01f64..=1.0) {
            let step = (budget * frac).max(1e-3);
            let plans = enumerate_allocations(budget, step).unwrap();
            let lo = (budget - 1.0).max(0.0);
            let hi = budget.min(1.0);
            prop_assert!((plans[0].s_v - round_ratio(lo)).abs() < 1e-12);
            prop_assert_eq!(plans.last().unwrap().s_v, hi);
            for w in plans.windows(2) {
                prop_assert!(w[0].s_v < w[1].s_v);
            }
            for p in &plans {
                prop_assert!((0.0..=1.0).contains(&p.s_v) && (0.0..=1.0).contains(&p.s_l));
                prop_assert!((p.s_v + p.s_l - budget).abs() < 1e-9);
            }
        }
    }
}
