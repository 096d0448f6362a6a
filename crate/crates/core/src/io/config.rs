//! Flat `key = value` run configuration.
//!
//! One setting per line, `#` starts a comment, blank lines are ignored.
//! Unknown or repeated keys are rejected. Values are layered in this order,
//! later layers winning: built-in defaults, the `SPARSEVLM_SEED` environment
//! variable (seed only), the config file, command-line overrides.

use std::path::Path;

use super::read_input;
use crate::datagen::TaskSpec;
use crate::error::{Error, Result};
use crate::experiment::ScenarioConfig;
use crate::lora::{AdapterMode, OptimizerKind, TrainConfig};
use crate::model::{Dims, Modality};
use crate::planner::{enumerate_allocations, AllocationPlan};
use crate::pretrain::PretrainConfig;
use crate::pruning::{ComparisonGroup, ScoringMetric, SparsityPattern, SparsitySpec};

pub const SEED_ENV: &str = "SPARSEVLM_SEED";

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub task: TaskSpec,
    pub samples: usize,
    pub calib_count: usize,
    pub eval_count: usize,
    pub h_v: usize,
    pub d_q: usize,
    pub h_l: usize,
    pub pretrain: PretrainConfig,
    pub metric: ScoringMetric,
    pub pattern: SparsityPattern,
    /// `None` picks the metric's default group.
    pub group: Option<ComparisonGroup>,
    pub prune_scope: Vec<Modality>,
    pub budget: f64,
    pub step: f64,
    pub plan_seeds: Vec<u64>,
    /// Explicit `(s_v, s_l)` pairs; replaces the budget grid when non-empty.
    pub allocations: Vec<(f64, f64)>,
    pub train: TrainConfig,
    /// Number of training samples used for finetuning; `None` uses all.
    pub train_samples: Option<usize>,
    pub train_scope: Vec<Modality>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let dims = Dims::default();
        RunConfig {
            seed: 0,
            task: TaskSpec::default(),
            samples: 2628,
            calib_count: 128,
            eval_count: 500,
            h_v: dims.h_v,
            d_q: dims.d_q,
            h_l: dims.h_l,
            pretrain: PretrainConfig::default(),
            metric: ScoringMetric::Wanda,
            pattern: SparsityPattern::NofM { n: 2, m: 4 },
            group: None,
            prune_scope: vec![Modality::Vision, Modality::Language],
            budget: 1.0,
            step: 0.1,
            plan_seeds: vec![0, 1, 2, 3, 4],
            allocations: Vec::new(),
            train: TrainConfig::default(),
            train_samples: None,
            train_scope: Modality::ALL.to_vec(),
        }
    }
}

fn bad(key: &str, value: &str, what: &str) -> Error {
    Error::Config(format!("{key} = {value:?}: expected {what}"))
}

fn num<T: std::str::FromStr>(key: &str, value: &str, what: &str) -> Result<T> {
    value.parse().map_err(|_| bad(key, value, what))
}

fn list<T>(value: &str, mut f: impl FnMut(&str) -> Result<T>) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(&mut f)
        .collect()
}

fn join<T>(items: &[T], f: impl Fn(&T) -> String) -> String {
    items.iter().map(f).collect::<Vec<_>>().join(",")
}

/// Parses `key=value`, as given to `--set`.
pub fn parse_assignment(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("expected key=value, got {s:?}")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

impl RunConfig {
    pub const KEYS: &'static [&'static str] = &[
        "seed",
        "task.classes",
        "task.d_v",
        "task.d_t",
        "task.noise",
        "task.samples",
        "task.calib_count",
        "task.eval_count",
        "model.h_v",
        "model.d_q",
        "model.h_l",
        "pretrain.lr",
        "pretrain.epochs",
        "pretrain.batch_size",
        "pretrain.weight_decay",
        "prune.metric",
        "prune.pattern",
        "prune.group",
        "prune.scope",
        "plan.budget",
        "plan.step",
        "plan.seeds",
        "plan.allocations",
        "train.lr",
        "train.warmup",
        "train.epochs",
        "train.batch_size",
        "train.lambda",
        "train.rank_vision",
        "train.rank_language",
        "train.rank_interface",
        "train.optimizer",
        "train.mode",
        "train.samples",
        "train.scope",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value;
        match key {
            "seed" => self.seed = num(key, v, "an unsigned integer")?,
            "task.classes" => self.task.classes = num(key, v, "an integer")?,
            "task.d_v" => self.task.d_v = num(key, v, "an integer")?,
            "task.d_t" => self.task.d_t = num(key, v, "an integer")?,
            "task.noise" => self.task.noise = num(key, v, "a number")?,
            "task.samples" => self.samples = num(key, v, "an integer")?,
            "task.calib_count" => self.calib_count = num(key, v, "an integer")?,
            "task.eval_count" => self.eval_count = num(key, v, "an integer")?,
            "model.h_v" => self.h_v = num(key, v, "an integer")?,
            "model.d_q" => self.d_q = num(key, v, "an integer")?,
            "model.h_l" => self.h_l = num(key, v, "an integer")?,
            "pretrain.lr" => self.pretrain.lr = num(key, v, "a number")?,
            "pretrain.epochs" => self.pretrain.epochs = num(key, v, "an integer")?,
            "pretrain.batch_size" => self.pretrain.batch_size = num(key, v, "an integer")?,
            "pretrain.weight_decay" => self.pretrain.weight_decay = num(key, v, "a number")?,
            "prune.metric" => self.metric = ScoringMetric::parse(v)?,
            "prune.pattern" => self.pattern = SparsityPattern::parse(v)?,
            "prune.group" => {
                self.group = match v {
                    "auto" => None,
                    g => Some(ComparisonGroup::parse(g)?),
                }
            }
            "prune.scope" => self.prune_scope = list(v, Modality::parse)?,
            "plan.budget" => self.budget = num(key, v, "a number")?,
            "plan.step" => self.step = num(key, v, "a number")?,
            "plan.seeds" => self.plan_seeds = list(v, |s| num(key, s, "a list of seeds"))?,
            "plan.allocations" => {
                self.allocations = list(v, |pair| {
                    let (a, b) = pair
                        .split_once(':')
                        .ok_or_else(|| bad(key, v, "pairs like 0.3:0.7"))?;
                    Ok((num(key, a, "a ratio")?, num(key, b, "a ratio")?))
                })?
            }
            "train.lr" => self.train.lr = num(key, v, "a number")?,
            "train.warmup" => self.train.warmup_frac = num(key, v, "a number")?,
            "train.epochs" => self.train.epochs = num(key, v, "an integer")?,
            "train.batch_size" => self.train.batch_size = num(key, v, "an integer")?,
            "train.lambda" => self.train.lambda = num(key, v, "a number")?,
            "train.rank_vision" => self.train.rank_vision = num(key, v, "an integer")?,
            "train.rank_language" => self.train.rank_language = num(key, v, "an integer")?,
            "train.rank_interface" => self.train.rank_interface = num(key, v, "an integer")?,
            "train.optimizer" => self.train.optimizer = OptimizerKind::parse(v)?,
            "train.mode" => self.train.mode = AdapterMode::parse(v)?,
            "train.samples" => {
                self.train_samples = match v {
                    "all" => None,
                    n => Some(num(key, n, "an integer or \"all\"")?),
                }
            }
            "train.scope" => self.train_scope = list(v, Modality::parse)?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "seed" => self.seed.to_string(),
            "task.classes" => self.task.classes.to_string(),
            "task.d_v" => self.task.d_v.to_string(),
            "task.d_t" => self.task.d_t.to_string(),
            "task.noise" => self.task.noise.to_string(),
            "task.samples" => self.samples.to_string(),
            "task.calib_count" => self.calib_count.to_string(),
            "task.eval_count" => self.eval_count.to_string(),
            "model.h_v" => self.h_v.to_string(),
            "model.d_q" => self.d_q.to_string(),
            "model.h_l" => self.h_l.to_string(),
            "pretrain.lr" => self.pretrain.lr.to_string(),
            "pretrain.epochs" => self.pretrain.epochs.to_string(),
            "pretrain.batch_size" => self.pretrain.batch_size.to_string(),
            "pretrain.weight_decay" => self.pretrain.weight_decay.to_string(),
            "prune.metric" => self.metric.as_str().to_string(),
            "prune.pattern" => self.pattern.to_string(),
            "prune.group" => self.group.map_or("auto", ComparisonGroup::as_str).to_string(),
            "prune.scope" => join(&self.prune_scope, |m| m.to_string()),
            "plan.budget" => self.budget.to_string(),
            "plan.step" => self.step.to_string(),
            "plan.seeds" => join(&self.plan_seeds, u64::to_string),
            "plan.allocations" => join(&self.allocations, |(a, b)| format!("{a}:{b}")),
            "train.lr" => self.train.lr.to_string(),
            "train.warmup" => self.train.warmup_frac.to_string(),
            "train.epochs" => self.train.epochs.to_string(),
            "train.batch_size" => self.train.batch_size.to_string(),
            "train.lambda" => self.train.lambda.to_string(),
            "train.rank_vision" => self.train.rank_vision.to_string(),
            "train.rank_language" => self.train.rank_language.to_string(),
            "train.rank_interface" => self.train.rank_interface.to_string(),
            "train.optimizer" => self.train.optimizer.as_str().to_string(),
            "train.mode" => self.train.mode.as_str().to_string(),
            "train.samples" => self.train_samples.map_or("all".to_string(), |n| n.to_string()),
            "train.scope" => join(&self.train_scope, |m| m.to_string()),
            _ => return None,
        })
    }

    /// Canonical text form; parsing it reproduces `self`.
    pub fn to_text(&self) -> String {
        Self::KEYS
            .iter()
            .map(|k| format!("{k} = {}\n", self.get(k).expect("every listed key has a value")))
            .collect()
    }

    /// Applies every assignment in `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = parse_assignment(line)
                .map_err(|_| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            if !seen.insert(k.clone()) {
                return Err(Error::Config(format!("line {}: {k} set twice", lineno + 1)));
            }
            self.set(&k, &v)
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    /// Layers defaults, `env_seed`, the optional file and `overrides`, then validates.
    pub fn resolve(
        file: Option<&Path>,
        overrides: &[(String, String)],
        env_seed: Option<&str>,
    ) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Some(s) = env_seed {
            cfg.seed = s
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={s:?} is not an unsigned integer")))?;
        }
        if let Some(path) = file {
            let bytes = read_input(path).map_err(|e| Error::Config(e.to_string()))?;
            let text = String::from_utf8(bytes)
                .map_err(|_| Error::Config(format!("{} is not UTF-8", path.display())))?;
            cfg.apply_text(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn dims(&self) -> Dims {
        Dims {
            d_v: self.task.d_v,
            h_v: self.h_v,
            d_q: self.d_q,
            d_t: self.task.d_t,
            h_l: self.h_l,
            classes: self.task.classes,
        }
    }

    pub fn scenario(&self) -> ScenarioConfig {
        ScenarioConfig {
            dims: self.dims(),
            task: self.task,
            samples: self.samples,
            calib_count: self.calib_count,
            eval_count: self.eval_count,
            pretrain: PretrainConfig {
                seed: self.seed,
                ..self.pretrain.clone()
            },
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn sparsity_spec(&self) -> SparsitySpec {
        SparsitySpec {
            pattern: self.pattern,
            group: self.group.unwrap_or_else(|| self.metric.default_group()),
        }
    }

    pub fn plans(&self) -> Result<Vec<AllocationPlan>> {
        if self.allocations.is_empty() {
            enumerate_allocations(self.budget, self.step)
        } else {
            self.allocations
                .iter()
                .map(|&(v, l)| AllocationPlan::infer(v, l))
                .collect()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: Error| Error::Config(e.to_string());
        self.task.validate()?;
        self.dims().validate()?;
        self.pretrain.validate()?;
        self.pattern.validate()?;
        self.train.validate()?;
        if self.calib_count == 0 || self.samples < self.calib_count + self.eval_count {
            return Err(Error::Config(format!(
                "task.samples = {} cannot hold {} calibration and {} evaluation samples",
                self.samples, self.calib_count, self.eval_count
            )));
        }
        if self.prune_scope.iter().any(|m| !m.is_prunable()) {
            return Err(Error::Config("prune.scope may only name vision and language".into()));
        }
        for (name, scope) in [("prune.scope", &self.prune_scope), ("train.scope", &self.train_scope)] {
            if scope.is_empty() {
                return Err(Error::Config(format!("{name} is empty")));
            }
        }
        if self.plan_seeds.is_empty() {
            return Err(Error::Config("plan.seeds is empty".into()));
        }
        self.plans().map_err(cfg_err)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.apply_text(
            "# comment\nseed = 7\n\nprune.pattern = unstructured:0.6  # trailing\n\
             plan.allocations = 0:0, 0.3:0.7\ntrain.samples = 100\nprune.group = row\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.pattern, SparsityPattern::Unstructured { ratio: 0.6 });
        assert_eq!(cfg.allocations, vec![(0.0, 0.0), (0.3, 0.7)]);
        assert_eq!(cfg.train_samples, Some(100));
        let mut back = RunConfig::default();
        back.apply_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        let mut d = RunConfig::default();
        d.apply_text(&RunConfig::default().to_text()).unwrap();
        assert_eq!(d, RunConfig::default());
    }

    #[test]
    fn rejects_unknown_repeated_and_malformed() {
        for text in ["bogus = 1", "seed = 1\nseed = 2", "seed 1", "seed = -3", "train.mode = sideways"] {
            let err = RunConfig::default().apply_text(text).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{text}: {err}");
        }
    }

    #[test]
    fn precedence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "train.lambda = 0.3\n").unwrap();
        let over = vec![("train.lambda".to_string(), "0.7".to_string())];
        let cfg = RunConfig::resolve(Some(&path), &over, Some("11")).unwrap();
        assert_eq!(cfg.train.lambda, 0.7);
        assert_eq!(cfg.seed, 11);
        std::fs::write(&path, "seed = 4\n").unwrap();
        assert_eq!(RunConfig::resolve(Some(&path), &[], Some("11")).unwrap().seed, 4);
        assert!(RunConfig::resolve(None, &[], Some("x")).is_err());
        let missing = dir.path().join("nope.cfg");
        assert_eq!(RunConfig::resolve(Some(&missing), &[], None).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn validation_catches_inconsistent_values() {
        for (k, v) in [
            ("train.lambda", "1.5"),
            ("task.samples", "100"),
            ("prune.scope", "interface"),
            ("plan.budget", "3"),
            ("plan.allocations", "0.5:1.2"),
            ("task.classes", "1"),
        ] {
            let over = vec![(k.to_string(), v.to_string())];
            let err = RunConfig::resolve(None, &over, None).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{k}={v}: {err}");
        }
    }
}
