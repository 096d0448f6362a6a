//! Python bindings: `Config`, `Dataset` and `Model` wrappers plus the loss
//! and planning helpers.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use sparsevlm::datagen::{self, split};
use sparsevlm::io::report::evaluate;
use sparsevlm::io::{load_dataset, load_model, save_dataset, save_model, Checkpoint, RunConfig};
use sparsevlm::lora::{attach_adapters, merge, train};
use sparsevlm::model::{Modality, ToyVlm, WeightMode};
use sparsevlm::numeric::{kl_divergence, softmax_row};
use sparsevlm::planner::{enumerate_allocations, run_sweep};
use sparsevlm::pretrain::pretrain;
use sparsevlm::pruning::{measured_sparsity, prune};
use sparsevlm::{objectives, verify, Error};

fn py_err(e: Error) -> PyErr {
    match e.exit_code() {
        2 => PyValueError::new_err(e.to_string()),
        3 => PyIOError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for sparsevlm::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

/// Resolved run configuration; keys as in the CLI config files.
#[pyclass(name = "Config", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (path=None, overrides=None))]
    fn new(path: Option<PathBuf>, overrides: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut pairs = Vec::new();
        if let Some(d) = overrides {
            for (k, v) in d.iter() {
                pairs.push((k.extract::<String>()?, v.str()?.to_string()));
            }
        }
        Ok(PyConfig {
            inner: RunConfig::resolve(path.as_deref(), &pairs, None).py()?,
        })
    }

    fn get(&self, key: &str) -> PyResult<String> {
        self.inner
            .get(key)
            .ok_or_else(|| PyValueError::new_err(format!("unknown key {key:?}")))
    }

    fn set(&mut self, key: &str, value: &Bound<'_, PyAny>) -> PyResult<()> {
        let mut next = self.inner.clone();
        next.set(key, &value.str()?.to_string()).py()?;
        next.validate().py()?;
        self.inner = next;
        Ok(())
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    fn __repr__(&self) -> String {
        format!("Config(seed={})", self.inner.seed)
    }
}

#[pyclass(name = "Dataset", from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: datagen::Dataset,
}

#[pymethods]
impl PyDataset {
    /// `task.samples` samples drawn with the config seed.
    #[staticmethod]
    fn generate(config: &PyConfig) -> PyResult<Self> {
        let c = &config.inner;
        Ok(PyDataset {
            inner: datagen::generate(&c.task, c.samples, c.seed).py()?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyDataset {
            inner: load_dataset(&path).py()?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_dataset(&self.inner, &path).py()
    }

    /// `(train, calib, eval)` using `task.calib_count` and `task.eval_count`.
    fn split(&self, config: &PyConfig) -> PyResult<(Self, Self, Self)> {
        let s = split(&self.inner, config.inner.calib_count, config.inner.eval_count).py()?;
        Ok((
            PyDataset { inner: s.train },
            PyDataset { inner: s.calib },
            PyDataset { inner: s.eval },
        ))
    }

    fn prefix(&self, n: usize) -> Self {
        PyDataset {
            inner: self.inner.prefix(n),
        }
    }

    fn vision(&self) -> Vec<Vec<f64>> {
        self.inner.samples.iter().map(|s| s.vision_in.clone()).collect()
    }

    fn text(&self) -> Vec<Vec<f64>> {
        self.inner.samples.iter().map(|s| s.text_in.clone()).collect()
    }

    fn labels(&self) -> Vec<usize> {
        self.inner.samples.iter().map(|s| s.label).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

fn modalities(names: Option<Vec<String>>) -> PyResult<Vec<Modality>> {
    match names {
        None => Ok(Modality::ALL.to_vec()),
        Some(v) => v.iter().map(|s| Modality::parse(s).py()).collect(),
    }
}

#[pyclass(name = "Model", from_py_object)]
#[derive(Clone)]
struct PyModel {
    inner: ToyVlm,
}

#[pymethods]
impl PyModel {
    /// Freshly initialized model with the config's dimensions and seed.
    #[new]
    fn new(config: &PyConfig) -> PyResult<Self> {
        Ok(PyModel {
            inner: ToyVlm::new(config.inner.dims(), config.inner.seed).py()?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyModel {
            inner: load_model(&path).py()?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_model(&self.inner, &path).py()
    }

    fn copy(&self) -> Self {
        self.clone()
    }

    /// Dense training; returns the mean loss per epoch.
    fn pretrain(&mut self, data: &PyDataset, config: &PyConfig) -> PyResult<Vec<f64>> {
        pretrain(&mut self.inner, &data.inner.samples, &config.inner.scenario().pretrain).py()
    }

    /// Prunes with `prune.metric`, `prune.pattern`, `prune.group` and `prune.scope`.
    #[pyo3(signature = (config, calib=None))]
    fn prune(&mut self, config: &PyConfig, calib: Option<&PyDataset>) -> PyResult<()> {
        let c = &config.inner;
        let spec = c.sparsity_spec();
        let targets: Vec<_> = c.prune_scope.iter().map(|&m| (m, spec)).collect();
        let samples = calib.map(|d| d.inner.samples.as_slice()).unwrap_or(&[]);
        prune(&mut self.inner, c.metric, samples, &targets).py()?;
        Ok(())
    }

    /// Attaches adapters on `train.scope` using the `train.*` settings.
    fn attach_adapters(&mut self, config: &PyConfig) -> PyResult<()> {
        attach_adapters(&mut self.inner, &config.inner.train_config(), &config.inner.train_scope).py()
    }

    /// Trains attached adapters; returns one dict per optimizer step.
    fn train<'py>(
        &mut self,
        py: Python<'py>,
        data: &PyDataset,
        config: &PyConfig,
    ) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let report = train(&mut self.inner, &data.inner.samples, &config.inner.train_config()).py()?;
        report
            .steps
            .iter()
            .map(|s| {
                let d = PyDict::new(py);
                d.set_item("step", s.step)?;
                d.set_item("epoch", s.epoch)?;
                d.set_item("lr", s.lr)?;
                d.set_item("loss_task", s.loss.task)?;
                d.set_item("loss_distill", s.loss.distill)?;
                d.set_item("loss_total", s.loss.total)?;
                Ok(d)
            })
            .collect()
    }

    fn merge(&mut self) -> PyResult<()> {
        merge(&mut self.inner).py()
    }

    /// Student logits for one sample.
    fn logits(&self, vision: Vec<f64>, text: Vec<f64>) -> PyResult<Vec<f64>> {
        let view = self.inner.view(WeightMode::MaskedStudent);
        self.inner.logits(&view, &vision, &text).py()
    }

    fn accuracy(&self, data: &PyDataset) -> PyResult<f64> {
        sparsevlm::experiment::accuracy(&self.inner, &data.inner.samples).py()
    }

    /// Accuracy, per-modality sparsity and logit checksum.
    fn evaluate<'py>(&self, py: Python<'py>, data: &PyDataset) -> PyResult<Bound<'py, PyDict>> {
        let r = evaluate(&self.inner, &data.inner.samples).py()?;
        let d = PyDict::new(py);
        d.set_item("samples", r.samples)?;
        d.set_item("correct", r.correct)?;
        d.set_item("accuracy", r.accuracy)?;
        d.set_item("sparsity_vision", r.sparsity.vision)?;
        d.set_item("sparsity_language", r.sparsity.language)?;
        d.set_item("sparsity_interface", r.sparsity.interface)?;
        d.set_item("logit_checksum", r.logit_checksum)?;
        Ok(d)
    }

    /// Fraction of exactly-zero student weights over the given modalities (all by default).
    #[pyo3(signature = (modalities=None))]
    fn sparsity(&self, modalities: Option<Vec<String>>) -> PyResult<f64> {
        measured_sparsity(&self.inner, &self::modalities(modalities)?).py()
    }

    /// `(passed, report)` from the checkpoint invariant checks.
    fn verify(&self) -> (bool, String) {
        let r = verify::verify(&Checkpoint::from_model(&self.inner));
        (r.passed(), r.to_string())
    }

    fn layer_names(&self) -> Vec<String> {
        self.inner.layers().iter().map(|l| l.name.clone()).collect()
    }

    /// Student weight of a layer as a list of rows.
    fn weight(&self, name: &str) -> PyResult<Vec<Vec<f64>>> {
        let l = self
            .inner
            .layer(name)
            .ok_or_else(|| PyValueError::new_err(format!("no layer {name:?}")))?;
        let w = l.effective_weight();
        Ok((0..w.rows()).map(|i| w.row(i).to_vec()).collect())
    }

    fn mask(&self, name: &str) -> PyResult<Vec<Vec<bool>>> {
        let l = self
            .inner
            .layer(name)
            .ok_or_else(|| PyValueError::new_err(format!("no layer {name:?}")))?;
        let m = &l.mask;
        Ok((0..m.rows()).map(|i| (0..m.cols()).map(|j| m.get(i, j)).collect()).collect())
    }

    fn __eq__(&self, other: &PyModel) -> bool {
        self.inner == other.inner
    }
}

#[pyfunction]
fn softmax(v: Vec<f64>) -> PyResult<Vec<f64>> {
    softmax_row(&v).py()
}

#[pyfunction(name = "kl_divergence")]
fn py_kl_divergence(p: Vec<f64>, q: Vec<f64>) -> PyResult<f64> {
    kl_divergence(&p, &q).py()
}

/// `(loss, d loss / d logits)`
#[pyfunction]
fn task_loss(logits: Vec<f64>, label: usize) -> PyResult<(f64, Vec<f64>)> {
    objectives::task_loss(&logits, label).py()
}

/// `(loss, d loss / d student logits)`
#[pyfunction]
fn distill_loss(student: Vec<f64>, teacher: Vec<f64>) -> PyResult<(f64, Vec<f64>)> {
    objectives::distill_loss(&student, &teacher).py()
}

/// `lambda * task + (1 - lambda) * distill`
#[pyfunction]
fn combine_losses(task: f64, distill: f64, lambda: f64) -> PyResult<f64> {
    objectives::combine(task, distill, lambda).py()
}

/// `(s_v, s_l, mode)` for every allocation on the budget grid.
#[pyfunction(name = "enumerate_allocations")]
fn py_enumerate_allocations(budget: f64, step: f64) -> PyResult<Vec<(f64, f64, String)>> {
    Ok(enumerate_allocations(budget, step)
        .py()?
        .into_iter()
        .map(|p| (p.s_v, p.s_l, p.mode.as_str().to_string()))
        .collect())
}

/// Runs the configured sweep; one dict per allocation with mean, std and per-seed accuracy.
#[pyfunction]
fn plan<'py>(py: Python<'py>, config: &PyConfig) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let c = &config.inner;
    let plans = c.plans().py()?;
    let result = py
        .detach(|| run_sweep(&c.scenario(), &plans, &[c.metric], &c.plan_seeds))
        .py()?;
    result
        .rows
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("s_v", r.plan.s_v)?;
            d.set_item("s_l", r.plan.s_l)?;
            d.set_item("mode", r.plan.mode.as_str())?;
            d.set_item("metric", r.metric.as_str())?;
            d.set_item("mean", r.mean)?;
            d.set_item("std", r.std)?;
            d.set_item("seeds", r.seeds.clone())?;
            d.set_item("per_seed", r.per_seed.clone())?;
            Ok(d)
        })
        .collect()
}

#[pymodule]
#[pyo3(name = "sparsevlm")]
fn sparsevlm_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(softmax, m)?)?;
    m.add_function(wrap_pyfunction!(py_kl_divergence, m)?)?;
    m.add_function(wrap_pyfunction!(task_loss, m)?)?;
    m.add_function(wrap_pyfunction!(distill_loss, m)?)?;
    m.add_function(wrap_pyfunction!(combine_losses, m)?)?;
    m.add_function(wrap_pyfunction!(py_enumerate_allocations, m)?)?;
    m.add_function(wrap_pyfunction!(plan, m)?)?;
    Ok(())
}
