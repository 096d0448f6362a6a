use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sparsevlm::harness::{self, Output};
use sparsevlm::io::config::{parse_assignment, SEED_ENV};
use sparsevlm::io::RunConfig;
use sparsevlm::Result;

/// Prune a toy vision+language model and restore it with sparse low-rank adapters.
#[derive(Parser)]
#[command(name = "sparsevlm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key; repeatable, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Shorthand for --set seed=N.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    GenData {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        /// Overwrite an existing file.
        #[arg(long)]
        force: bool,
    },
    /// Train the dense base model.
    Pretrain {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch loss CSV.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Score and mask a checkpoint.
    Prune {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Dataset whose calibration split feeds gradient and wanda scores.
        #[arg(long)]
        calib: Option<PathBuf>,
        /// Also write the sparsity report here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Sweep sparsity allocations between the modalities.
    Plan {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train adapters on a pruned checkpoint and merge them.
    Finetune {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Task-loss weight; overrides train.lambda.
        #[arg(long)]
        lambda: Option<f64>,
        /// Per-step training CSV.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Also write the sparsity comparison here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the evaluation split.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Also write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check checkpoint invariants.
    Verify {
        #[arg(long)]
        ckpt: PathBuf,
    },
    /// Print the resolved configuration.
    ShowConfig {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

fn resolve(args: &ConfigArgs, extra: &[(String, String)]) -> Result<RunConfig> {
    let mut overrides = args
        .set
        .iter()
        .map(|s| parse_assignment(s))
        .collect::<Result<Vec<_>>>()?;
    if let Some(seed) = args.seed {
        overrides.push(("seed".into(), seed.to_string()));
    }
    overrides.extend_from_slice(extra);
    let env = std::env::var(SEED_ENV).ok();
    RunConfig::resolve(args.config.as_deref(), &overrides, env.as_deref())
}

fn run(cmd: Command) -> Result<Output> {
    match cmd {
        Command::GenData { cfg, out, force } => harness::cmd_gen_data(&resolve(&cfg, &[])?, &out, force),
        Command::Pretrain { cfg, data, out, log } => {
            harness::cmd_pretrain(&resolve(&cfg, &[])?, &data, &out, log.as_deref())
        }
        Command::Prune {
            cfg,
            ckpt,
            out,
            calib,
            report,
        } => harness::cmd_prune(&resolve(&cfg, &[])?, &ckpt, &out, calib.as_deref(), report.as_deref()),
        Command::Plan { cfg, out } => harness::cmd_plan(&resolve(&cfg, &[])?, &out),
        Command::Finetune {
            cfg,
            ckpt,
            data,
            out,
            lambda,
            log,
            report,
        } => {
            let extra: Vec<(String, String)> =
                lambda.map(|l| ("train.lambda".into(), l.to_string())).into_iter().collect();
            harness::cmd_finetune(
                &resolve(&cfg, &extra)?,
                &ckpt,
                &data,
                &out,
                log.as_deref(),
                report.as_deref(),
            )
        }
        Command::Eval { cfg, ckpt, data, out } => {
            harness::cmd_eval(&resolve(&cfg, &[])?, &ckpt, &data, out.as_deref())
        }
        Command::Verify { ckpt } => harness::cmd_verify(&ckpt),
        Command::ShowConfig { cfg } => harness::cmd_show_config(&resolve(&cfg, &[])?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(out) => {
            let mut stdout = std::io::stdout().lock();
            let _ = stdout.write_all(out.stdout.as_bytes());
            ExitCode::from(out.code as u8)
        }
        Err(e) => {
            eprintln!("sparsevlm: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
