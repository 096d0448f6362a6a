//! Command implementations behind the `sparsevlm` binary.
//!
//! Each command takes a resolved [`RunConfig`] plus file paths and returns
//! the text for stdout together with the process exit code. Errors map to
//! exit codes through [`Error::exit_code`].

use std::path::Path;

use crate::datagen::{generate, split, Dataset, Splits};
use crate::error::{Error, Result};
use crate::io::report::{
    eval_json, evaluate, preservation_rows, sparsity_rows, sweep_rows, to_csv, training_rows,
    PRESERVATION_HEADERS, SPARSITY_HEADERS, SWEEP_HEADERS, TRAINING_HEADERS,
};
use crate::io::{load_dataset, load_model, save_dataset, save_model, write_output, Checkpoint, RunConfig};
use crate::lora::{attach_adapters, merge, train};
use crate::model::{Modality, ToyVlm};
use crate::planner::run_sweep;
use crate::pretrain::pretrain;
use crate::pruning::prune;
use crate::verify::verify;

/// Exit code for a failed `verify`.
pub const EXIT_INVARIANT: i32 = 4;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Output {
    pub stdout: String,
    pub code: i32,
}

impl Output {
    fn ok(stdout: impl Into<String>) -> Self {
        Output {
            stdout: stdout.into(),
            code: 0,
        }
    }
}

fn utf8(bytes: Vec<u8>) -> String {
    String::from_utf8(bytes).expect("reports are UTF-8")
}

fn check_data(model: &ToyVlm, data: &Dataset) -> Result<()> {
    let d = model.dims();
    if (d.d_v, d.d_t, d.classes) != (data.d_v, data.d_t, data.classes) {
        return Err(Error::Dimension(format!(
            "dataset has d_v={}, d_t={}, classes={} but the model expects {}, {}, {}",
            data.d_v, data.d_t, data.classes, d.d_v, d.d_t, d.classes
        )));
    }
    Ok(())
}

fn splits(cfg: &RunConfig, data: &Dataset) -> Result<Splits> {
    split(data, cfg.calib_count, cfg.eval_count)
}

fn ensure_plain(model: &ToyVlm) -> Result<()> {
    if model.layers().iter().any(|l| l.adapter.is_some()) {
        return Err(Error::State("checkpoint carries unmerged adapters".into()));
    }
    Ok(())
}

/// Writes a fresh dataset. An existing file is only replaced with `force`.
pub fn cmd_gen_data(cfg: &RunConfig, out: &Path, force: bool) -> Result<Output> {
    if out.exists() && !force {
        return Err(Error::Config(format!(
            "{} exists; pass --force to overwrite",
            out.display()
        )));
    }
    let data = generate(&cfg.task, cfg.samples, cfg.seed)?;
    save_dataset(&data, out)?;
    Ok(Output::ok(format!(
        "wrote {} samples (seed {}) to {}\n",
        data.len(),
        cfg.seed,
        out.display()
    )))
}

/// Trains the dense base model on the training split. `log` receives
/// `epoch,loss`.
pub fn cmd_pretrain(cfg: &RunConfig, data: &Path, out: &Path, log: Option<&Path>) -> Result<Output> {
    let data = load_dataset(data)?;
    let mut model = ToyVlm::new(cfg.dims(), cfg.seed)?;
    check_data(&model, &data)?;
    let sp = splits(cfg, &data)?;
    let losses = pretrain(&mut model, &sp.train.samples, &cfg.scenario().pretrain)?;
    save_model(&model, out)?;
    if let Some(path) = log {
        let rows: Vec<(usize, f64)> = losses.iter().copied().enumerate().collect();
        write_output(path, &to_csv(&["epoch", "loss"], &rows)?)?;
    }
    let acc = evaluate(&model, &sp.eval.samples)?.accuracy;
    Ok(Output::ok(format!(
        "trained {} epochs on {} samples; eval accuracy {acc}\n",
        losses.len(),
        sp.train.len()
    )))
}

/// Scores, masks and saves; prints the sparsity report.
pub fn cmd_prune(
    cfg: &RunConfig,
    ckpt_in: &Path,
    ckpt_out: &Path,
    calib: Option<&Path>,
    report: Option<&Path>,
) -> Result<Output> {
    let calib_samples = match (calib, cfg.metric.needs_calibration()) {
        (Some(path), _) => {
            let data = load_dataset(path)?;
            Some(splits(cfg, &data)?.calib)
        }
        (None, true) => {
            return Err(Error::Config(format!(
                "pruning with {} needs --calib",
                cfg.metric.as_str()
            )))
        }
        (None, false) => None,
    };
    let mut model = load_model(ckpt_in)?;
    ensure_plain(&model)?;
    if let Some(c) = &calib_samples {
        check_data(&model, c)?;
    }
    let spec = cfg.sparsity_spec();
    let targets: Vec<(Modality, _)> = cfg.prune_scope.iter().map(|&m| (m, spec)).collect();
    let samples = calib_samples.map(|d| d.samples).unwrap_or_default();
    prune(&mut model, cfg.metric, &samples, &targets)?;
    save_model(&model, ckpt_out)?;
    let csv = to_csv(SPARSITY_HEADERS, &sparsity_rows(&model)?)?;
    if let Some(path) = report {
        write_output(path, &csv)?;
    }
    Ok(Output::ok(utf8(csv)))
}

/// Sweeps the configured allocations over `plan.seeds`, building data and a
/// pretrained base model per seed.
pub fn cmd_plan(cfg: &RunConfig, out: &Path) -> Result<Output> {
    let plans = cfg.plans()?;
    let result = run_sweep(&cfg.scenario(), &plans, &[cfg.metric], &cfg.plan_seeds)?;
    write_output(out, &to_csv(SWEEP_HEADERS, &sweep_rows(&result))?)?;
    let mut text = String::from("s_v,s_l,mode,accuracy_mean,accuracy_std\n");
    for r in &result.rows {
        text += &format!("{},{},{},{},{}\n", r.plan.s_v, r.plan.s_l, r.plan.mode, r.mean, r.std);
    }
    Ok(Output::ok(text))
}

/// Attaches adapters, trains on the training split, merges and saves.
/// Prints the before/after sparsity comparison.
pub fn cmd_finetune(
    cfg: &RunConfig,
    ckpt_in: &Path,
    data: &Path,
    ckpt_out: &Path,
    log: Option<&Path>,
    report: Option<&Path>,
) -> Result<Output> {
    let data = load_dataset(data)?;
    let before = load_model(ckpt_in)?;
    ensure_plain(&before)?;
    check_data(&before, &data)?;
    let sp = splits(cfg, &data)?;
    let train_data = match cfg.train_samples {
        Some(n) => sp.train.prefix(n),
        None => sp.train,
    };
    let tc = cfg.train_config();
    let mut model = before.clone();
    attach_adapters(&mut model, &tc, &cfg.train_scope)?;
    let training = train(&mut model, &train_data.samples, &tc)?;
    merge(&mut model)?;
    save_model(&model, ckpt_out)?;
    if let Some(path) = log {
        write_output(path, &to_csv(TRAINING_HEADERS, &training_rows(&training))?)?;
    }
    let csv = to_csv(PRESERVATION_HEADERS, &preservation_rows(&before, &model)?)?;
    if let Some(path) = report {
        write_output(path, &csv)?;
    }
    Ok(Output::ok(utf8(csv)))
}

/// Accuracy, per-modality sparsity and a logit checksum on the evaluation split.
pub fn cmd_eval(cfg: &RunConfig, ckpt: &Path, data: &Path, out: Option<&Path>) -> Result<Output> {
    let data = load_dataset(data)?;
    let model = load_model(ckpt)?;
    check_data(&model, &data)?;
    let json = eval_json(&evaluate(&model, &splits(cfg, &data)?.eval.samples)?);
    if let Some(path) = out {
        write_output(path, json.as_bytes())?;
    }
    Ok(Output::ok(json))
}

/// Exit code [`EXIT_INVARIANT`] when any check fails.
pub fn cmd_verify(ckpt: &Path) -> Result<Output> {
    let report = verify(&Checkpoint::load(ckpt)?);
    Ok(Output {
        stdout: report.to_string(),
        code: if report.passed() { 0 } else { EXIT_INVARIANT },
    })
}

/// The fully resolved configuration in file syntax.
pub fn cmd_show_config(cfg: &RunConfig) -> Result<Output> {
    Ok(Output::ok(cfg.to_text()))
}
