use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use noisykag::config::{BackendKind, MissingG, Mode};
use noisykag::perturb::PerturbSettings;
use noisykag::persist::{save_projections, write_json, LossFile};
use noisykag::{
    ablation, grid, load_dataset, perturb, resolve_projections, run_eval, train, Backends, DatasetRecord, Error,
    Overrides, Result, RunConfig,
};

#[derive(Parser)]
#[command(name = "noisykag", version, about = "Knowledge selection and posterior reweighing for grounded dialogue")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// JSONL dataset.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Where to write the JSON report.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master RNG seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Similarity temperature.
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Posterior sharpening exponent in [0,1].
    #[arg(long, global = true)]
    beta: Option<f64>,
    /// Number of retained candidates.
    #[arg(long, global = true)]
    k: Option<usize>,
    #[arg(long, global = true, value_enum)]
    mode: Option<Mode>,
    #[arg(long, global = true, value_enum)]
    backend: Option<BackendKind>,
    #[arg(long, global = true, value_enum)]
    missing_g: Option<MissingG>,
    /// Trained projections (JSON written by `train`).
    #[arg(long, global = true)]
    projections: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate a dataset and report per-record and corpus metrics.
    Eval,
    /// Train the selector projections; `--out` receives the projections.
    Train {
        #[arg(long)]
        noisy: bool,
        /// Where to write the per-epoch loss curve.
        #[arg(long)]
        loss_out: Option<PathBuf>,
    },
    /// Grid search over alpha and beta on a validation set.
    Grid {
        #[arg(long, value_delimiter = ',')]
        alphas: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        betas: Option<Vec<f64>>,
    },
    /// Baseline, +noisy training, +posterior reweighing.
    Ablate {
        /// Training set; defaults to `--data`.
        #[arg(long)]
        train_data: Option<PathBuf>,
    },
    /// Clean vs noisy selectors on original and distractor-injected test sets.
    Perturb {
        #[arg(long)]
        train_data: PathBuf,
        #[arg(long, default_value_t = PerturbSettings::default().distractors)]
        distractors: usize,
    },
    /// Check a dataset against the schema.
    ValidateData,
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply(&Overrides {
        seed: common.seed,
        alpha: common.alpha,
        beta: common.beta,
        k: common.k,
        mode: common.mode,
        backend: common.backend,
        missing_g: common.missing_g,
        projections: common.projections.clone(),
    });
    cfg.validate()?;
    Ok(cfg)
}

fn data(path: Option<&Path>, flag: &str) -> Result<Vec<DatasetRecord>> {
    let path = path.ok_or_else(|| Error::Config(format!("{flag} is required")))?;
    Ok(load_dataset(path)?)
}

fn emit<T: serde::Serialize>(out: Option<&Path>, value: &T, table: &str) -> Result<()> {
    match out {
        Some(p) => {
            write_json(p, value)?;
            print!("{table}");
        }
        None => {
            let text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
                path: "<stdout>".into(),
                source,
            })?;
            println!("{text}");
            eprint!("{table}");
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<u8> {
    let common = &cli.common;
    let out = common.out.as_deref();
    match cli.command {
        Command::ValidateData => {
            let records = data(common.data.as_deref(), "--data")?;
            let n = records.len();
            println!("{n} record{} OK", if n == 1 { "" } else { "s" });
            Ok(0)
        }
        Command::Eval => {
            let cfg = load_config(common)?;
            let records = data(common.data.as_deref(), "--data")?;
            let b = Backends::build(&cfg, &[&records])?;
            let proj = resolve_projections(&cfg, b.encoder.dim())?;
            let report = run_eval(&records, &cfg, &proj, &*b.encoder, &*b.generator)?;
            let mut summary = report.summary();
            summary.push('\n');
            for f in &report.failures {
                summary.push_str(&format!("failed {}: {}\n", f.id, f.error));
            }
            emit(out, &report, &summary)?;
            Ok(u8::from(!report.failures.is_empty()))
        }
        Command::Train { noisy, loss_out } => {
            let cfg = load_config(common)?;
            let records = data(common.data.as_deref(), "--data")?;
            let b = Backends::build(&cfg, &[&records])?;
            let outcome = train::train_records(&records, &cfg, noisy || cfg.train.noisy, &*b.encoder, &*b.generator)?;
            if let Some(p) = &loss_out {
                write_json(p, &LossFile::new(outcome.config, records.len(), &outcome.report))?;
            }
            if let Some(p) = out {
                save_projections(p, outcome.config, &outcome.report.final_projections)?;
            }
            println!(
                "epochs {}  initial NLL {:.6}  final NLL {:.6}",
                outcome.report.per_epoch_nll.len(),
                outcome.initial_nll(),
                outcome.final_nll()
            );
            Ok(0)
        }
        Command::Grid { alphas, betas } => {
            let cfg = load_config(common)?;
            let records = data(common.data.as_deref(), "--data")?;
            let b = Backends::build(&cfg, &[&records])?;
            let proj = resolve_projections(&cfg, b.encoder.dim())?;
            let report = grid::grid_search(
                &records,
                alphas.unwrap_or_else(grid::default_alphas),
                betas.unwrap_or_else(grid::default_betas),
                &cfg,
                &proj,
                &*b.encoder,
                &*b.generator,
            )?;
            emit(out, &report, &report.render_table())?;
            Ok(u8::from(report.cells.iter().any(|c| c.failed > 0)))
        }
        Command::Ablate { train_data } => {
            let cfg = load_config(common)?;
            let eval_set = data(common.data.as_deref(), "--data")?;
            let train_set = match &train_data {
                Some(p) => load_dataset(p)?,
                None => eval_set.clone(),
            };
            let b = Backends::build(&cfg, &[&train_set, &eval_set])?;
            let report = ablation::run_ablation(&train_set, &eval_set, &cfg, &*b.encoder, &*b.generator)?;
            emit(out, &report, &report.render_table())?;
            Ok(u8::from(report.rows.iter().any(|r| r.metrics.failed > 0)))
        }
        Command::Perturb { train_data, distractors } => {
            let cfg = load_config(common)?;
            let test_set = data(common.data.as_deref(), "--data")?;
            let train_set = load_dataset(&train_data)?;
            let b = Backends::build(&cfg, &[&train_set, &test_set])?;
            let settings = PerturbSettings {
                distractors,
                ..PerturbSettings::default()
            };
            let report =
                perturb::perturbation_benchmark(&train_set, &test_set, settings, &cfg, &*b.encoder, &*b.generator)?;
            emit(out, &report, &report.render_table())?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
