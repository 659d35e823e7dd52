//! `sarvb`: simulate, amputate, fit and compare spatial error models from
//! CSV files.

mod commands;
mod config;
mod error;
mod files;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};

use crate::commands::Context;
use crate::config::{help_for, parse_override, Config, Scope};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "sarvb", version, about = "Simulate, fit and compare spatial error models")]
struct Cli {
    /// Seed for every random draw of the command.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Flat key=value configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Directory receiving the command's output files.
    #[arg(long, global = true, default_value = ".", value_name = "DIR")]
    out_dir: PathBuf,

    /// Worker threads (defaults to one per core).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    /// Override one configuration key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE", value_parser = parse_override)]
    overrides: Vec<(String, String)>,

    /// Print the full configuration reference and exit.
    #[arg(long)]
    config_reference: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a dataset on a rook lattice.
    Simulate {
        /// Model kind (same as kind=...).
        #[arg(long)]
        kind: Option<String>,
    },
    /// Remove responses under a logistic missing-not-at-random mechanism.
    Amputate {
        /// Dataset CSV (key: data).
        #[arg(long)]
        data: Option<String>,
        /// Weights CSV (key: weights).
        #[arg(long)]
        weights: Option<String>,
        /// Missingness coefficients, comma separated.
        #[arg(long, allow_hyphen_values = true)]
        psi: Option<String>,
    },
    /// Fit one or more models and draw from their posteriors.
    Fit {
        /// Dataset CSV (key: data).
        #[arg(long)]
        data: Option<String>,
        /// Weights CSV (key: weights).
        #[arg(long)]
        weights: Option<String>,
        /// Comma-separated model kinds.
        #[arg(long)]
        models: Option<String>,
        /// vb or hvb.
        #[arg(long)]
        method: Option<String>,
        /// Optimizer iterations (key: iters).
        #[arg(long)]
        iters: Option<String>,
        /// Posterior draws (key: n_draws).
        #[arg(long)]
        n_draws: Option<String>,
    },
    /// Compute DIC values for fitted models.
    Dic {
        /// Comma-separated fit directories.
        #[arg(long)]
        fits: Option<String>,
        /// Dataset CSV (key: data).
        #[arg(long)]
        data: Option<String>,
        /// Weights CSV (key: weights).
        #[arg(long)]
        weights: Option<String>,
    },
    /// Recompute posterior summaries of a fit directory.
    Summarize {
        /// Fit directory.
        #[arg(long)]
        fit: Option<String>,
    },
}

impl Command {
    fn scope(&self) -> Scope {
        match self {
            Command::Simulate { .. } => Scope::Simulate,
            Command::Amputate { .. } => Scope::Amputate,
            Command::Fit { .. } => Scope::Fit,
            Command::Dic { .. } => Scope::Dic,
            Command::Summarize { .. } => Scope::Summarize,
        }
    }

    /// Named flags as configuration overrides.
    fn flag_overrides(&self) -> Vec<(String, String)> {
        let pairs: Vec<(&str, &Option<String>)> = match self {
            Command::Simulate { kind } => vec![("kind", kind)],
            Command::Amputate { data, weights, psi } => vec![("data", data), ("weights", weights), ("psi", psi)],
            Command::Fit { data, weights, models, method, iters, n_draws } => vec![
                ("data", data),
                ("weights", weights),
                ("models", models),
                ("method", method),
                ("iters", iters),
                ("n_draws", n_draws),
            ],
            Command::Dic { fits, data, weights } => vec![("fits", fits), ("data", data), ("weights", weights)],
            Command::Summarize { fit } => vec![("fit", fit)],
        };
        pairs
            .into_iter()
            .filter_map(|(k, v)| v.clone().map(|v| (k.to_string(), v)))
            .collect()
    }
}

fn command_with_key_help() -> clap::Command {
    let scopes = [Scope::Simulate, Scope::Amputate, Scope::Fit, Scope::Dic, Scope::Summarize];
    scopes.into_iter().fold(Cli::command(), |cmd, scope| {
        cmd.mut_subcommand(scope.name(), |sub| sub.after_help(help_for(scope)))
    })
}

fn run(cli: Cli) -> Result<(), CliError> {
    if cli.config_reference {
        print!("{}", config::reference());
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(CliError::Usage("a subcommand is required (see --help)".into()));
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot configure {n} threads: {e}")))?;
    }
    let mut overrides = command.flag_overrides();
    overrides.extend(cli.overrides);
    let ctx = Context {
        seed: cli.seed,
        out_dir: cli.out_dir,
        config: Config::load(cli.config.as_deref(), &overrides)?,
    };
    match command.scope() {
        Scope::Simulate => commands::simulate(&ctx),
        Scope::Amputate => commands::amputate(&ctx),
        Scope::Fit => commands::fit(&ctx),
        Scope::Dic => commands::dic(&ctx),
        Scope::Summarize => commands::summarize_fit(&ctx),
    }
}

fn main() -> ExitCode {
    let matches = command_with_key_help().get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
