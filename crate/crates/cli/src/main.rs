//! `far`: fit, tune, predict and simulate functional additive regression
//! models from CSV curve files.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::SimulateOverrides;
use crate::config::{load_json, parse_int_list, IntList, LambdaSetting, MethodKind, RunConfig};
use crate::error::CliError;

#[derive(Parser)]
#[command(name = "far", version, about = "Functional additive regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one model and print a JSON summary.
    Fit(RunArgs),
    /// Search basis dimension, link dimension and penalty level.
    Tune {
        #[command(flatten)]
        run: RunArgs,
        /// Also write the selected model.
        #[arg(long)]
        save_model: Option<PathBuf>,
    },
    /// Predict responses for new curves with a saved model.
    Predict(RunArgs),
    /// Run a Monte Carlo study from a scenario config.
    Simulate(SimArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = ["linear", "nonlinear"])]
    method: Option<String>,
    /// `lasso`, `scad` or `scad:a=<shape>`.
    #[arg(long)]
    penalty: Option<String>,
    /// `spline` or `fourier`.
    #[arg(long)]
    basis: Option<String>,
    /// A penalty level or `path` to select one along the path.
    #[arg(long)]
    lambda: Option<String>,
    /// Basis dimension: `6`, `5,7` or `5..10`.
    #[arg(long)]
    q: Option<String>,
    /// Link dimension for nonlinear fits, same forms as `--q`.
    #[arg(long)]
    d: Option<String>,
    /// Cross-validation folds; selects k-fold tuning.
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    curves: Option<PathBuf>,
    #[arg(long)]
    response: Option<PathBuf>,
    #[arg(long)]
    validation_curves: Option<PathBuf>,
    #[arg(long)]
    validation_response: Option<PathBuf>,
    /// Saved model to predict with.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Exit with code 4 when the solver hits its iteration cap.
    #[arg(long)]
    strict: bool,
}

#[derive(Args)]
struct SimArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    penalty: Option<String>,
    #[arg(long)]
    q: Option<String>,
    #[arg(long)]
    d: Option<String>,
    /// Summary CSV; per-replicate JSONL goes next to it unless `--records` is set.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    records: Option<PathBuf>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut c: RunConfig = match &self.config {
            Some(path) => load_json(path)?,
            None => RunConfig::default(),
        };
        if let Some(m) = &self.method {
            c.method = Some(if m == "linear" { MethodKind::Linear } else { MethodKind::Nonlinear });
        }
        macro_rules! take {
            ($($field:ident),*) => { $( if self.$field.is_some() { c.$field = self.$field.clone(); } )* };
        }
        take!(penalty, basis, seed, curves, response, validation_curves, validation_response, model, out);
        if let Some(l) = &self.lambda {
            c.lambda = Some(LambdaSetting::Text(l.clone()));
        }
        if let Some(q) = &self.q {
            c.q = Some(IntList::Text(q.clone()));
        }
        if let Some(d) = &self.d {
            c.d = Some(IntList::Text(d.clone()));
        }
        if let Some(k) = self.folds {
            c.tuning = Some(far_core::tuning::TuningMode::KFoldCv { k });
        }
        Ok(c)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Fit(args) => commands::fit(&args.resolve()?, args.strict),
        Command::Tune { run, save_model } => commands::tune(&run.resolve()?, save_model.as_ref(), run.strict),
        Command::Predict(args) => commands::predict(&args.resolve()?),
        Command::Simulate(args) => {
            let cfg = load_json(&args.config)?;
            let overrides = SimulateOverrides {
                seed: args.seed,
                replicates: args.replicates,
                penalty: args.penalty,
                q: args.q.as_deref().map(parse_int_list).transpose()?,
                d: args.d.as_deref().map(parse_int_list).transpose()?,
                out: args.out,
                records: args.records,
            };
            commands::simulate(cfg, overrides)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 3 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
