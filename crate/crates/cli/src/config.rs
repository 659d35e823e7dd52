//! Flat `key=value` configuration shared by every subcommand.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sarvb::io::read_key_values;

use crate::error::CliError;

/// Which subcommands read a key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    Simulate,
    Amputate,
    Fit,
    Dic,
    Summarize,
}

impl Scope {
    pub fn name(self) -> &'static str {
        match self {
            Scope::Simulate => "simulate",
            Scope::Amputate => "amputate",
            Scope::Fit => "fit",
            Scope::Dic => "dic",
            Scope::Summarize => "summarize",
        }
    }
}

pub struct KeySpec {
    pub key: &'static str,
    pub default: &'static str,
    pub scopes: &'static [Scope],
    pub help: &'static str,
}

use Scope::*;

pub const KEYS: &[KeySpec] = &[
    KeySpec { key: "kind", default: "yj-sem-gau", scopes: &[Simulate], help: "model kind to simulate: sem-gau, sem-t, yj-sem-gau or yj-sem-t" },
    KeySpec { key: "rows", default: "25", scopes: &[Simulate], help: "lattice rows" },
    KeySpec { key: "cols", default: "25", scopes: &[Simulate], help: "lattice columns" },
    KeySpec { key: "n_covariates", default: "5", scopes: &[Simulate], help: "standard normal covariates besides the intercept" },
    KeySpec { key: "n_missing_covariates", default: "1", scopes: &[Simulate], help: "log-normal missingness covariates besides the intercept" },
    KeySpec { key: "beta", default: "preset", scopes: &[Simulate], help: "comma-separated coefficients including the intercept, or 'preset' for uniform draws from {-3,-2,-1,1,2,3}" },
    KeySpec { key: "sigma2", default: "1", scopes: &[Simulate], help: "error variance" },
    KeySpec { key: "rho", default: "0.8", scopes: &[Simulate], help: "spatial autocorrelation" },
    KeySpec { key: "nu", default: "4", scopes: &[Simulate], help: "degrees of freedom (t kinds only)" },
    KeySpec { key: "gamma", default: "1.25", scopes: &[Simulate], help: "Yeo-Johnson parameter (yj kinds only)" },
    KeySpec { key: "row_standardize", default: "true", scopes: &[Simulate, Amputate, Fit, Dic], help: "scale weight rows to sum to one (rows already summing to one are kept verbatim)" },
    KeySpec { key: "data", default: "data.csv", scopes: &[Amputate, Fit, Dic], help: "input dataset CSV" },
    KeySpec { key: "weights", default: "weights.csv", scopes: &[Amputate, Fit, Dic], help: "input weights CSV (i,j,w)" },
    KeySpec { key: "psi", default: "-1,0.5,-0.1", scopes: &[Amputate], help: "missingness coefficients: intercept, one per missingness covariate, then the response coefficient" },
    KeySpec { key: "models", default: "yj-sem-gau", scopes: &[Fit], help: "comma-separated model kinds; listed models are fitted concurrently" },
    KeySpec { key: "method", default: "vb", scopes: &[Fit], help: "vb for complete data, hvb for missing responses" },
    KeySpec { key: "iters", default: "10000", scopes: &[Fit], help: "optimizer iterations" },
    KeySpec { key: "n_factors", default: "4", scopes: &[Fit], help: "factors in the variational covariance" },
    KeySpec { key: "trace_every", default: "100", scopes: &[Fit], help: "record the variational mean every this many iterations" },
    KeySpec { key: "stop_window", default: "0", scopes: &[Fit], help: "plateau stopping window in iterations; 0 runs all iterations" },
    KeySpec { key: "stop_tol", default: "1e-4", scopes: &[Fit], help: "largest mean change over a window that counts as a plateau" },
    KeySpec { key: "adadelta_alpha", default: "1e-6", scopes: &[Fit], help: "ADADELTA stabilizing constant" },
    KeySpec { key: "adadelta_decay", default: "0.95", scopes: &[Fit], help: "ADADELTA decay rate" },
    KeySpec { key: "gamma_init", default: "1.001", scopes: &[Fit], help: "starting Yeo-Johnson parameter" },
    KeySpec { key: "nu_init", default: "4", scopes: &[Fit], help: "starting degrees of freedom" },
    KeySpec { key: "psi_init", default: "0.1", scopes: &[Fit], help: "starting value of every missingness coefficient" },
    KeySpec { key: "init_spread", default: "0.01", scopes: &[Fit], help: "starting loadings and log-scale diagonal of the variational covariance" },
    KeySpec { key: "n_draws", default: "10000", scopes: &[Fit], help: "posterior draws written to samples.csv" },
    KeySpec { key: "inner_iters", default: "10", scopes: &[Fit], help: "Metropolis-Hastings sweeps per iteration and per posterior draw (hvb)" },
    KeySpec { key: "kernel", default: "auto", scopes: &[Fit], help: "missing-response sampler: auto, nob (one block) or allb (contiguous blocks)" },
    KeySpec { key: "block_fraction", default: "0.1", scopes: &[Fit], help: "block size as a fraction of the missing sites (allb)" },
    KeySpec { key: "warm_start", default: "false", scopes: &[Fit], help: "start each sampler run from the previous imputations" },
    KeySpec { key: "prior_var_beta", default: "100", scopes: &[Fit, Dic], help: "prior variance of each coefficient" },
    KeySpec { key: "prior_var_log_sigma2", default: "100", scopes: &[Fit, Dic], help: "prior variance of log sigma2" },
    KeySpec { key: "prior_var_rho", default: "100", scopes: &[Fit, Dic], help: "prior variance of the transformed rho" },
    KeySpec { key: "prior_var_nu", default: "100", scopes: &[Fit, Dic], help: "prior variance of the transformed nu" },
    KeySpec { key: "prior_var_gamma", default: "100", scopes: &[Fit, Dic], help: "prior variance of the transformed gamma" },
    KeySpec { key: "prior_var_psi", default: "100", scopes: &[Fit, Dic], help: "prior variance of each missingness coefficient" },
    KeySpec { key: "fits", default: "", scopes: &[Dic], help: "comma-separated fit directories (each holding manifest.txt and samples.csv)" },
    KeySpec { key: "fit", default: ".", scopes: &[Summarize], help: "fit directory to summarize" },
];

fn key_spec(key: &str) -> Option<&'static KeySpec> {
    KEYS.iter().find(|s| s.key == key)
}

/// Text listing every key of `scope` with its default.
pub fn help_for(scope: Scope) -> String {
    let mut out = String::from("Configuration keys (set in --config or with --set key=value):\n");
    for s in KEYS.iter().filter(|s| s.scopes.contains(&scope)) {
        let _ = writeln!(out, "  {:<22} default '{}'\n      {}", s.key, s.default, s.help);
    }
    out
}

/// The generated reference document.
pub fn reference() -> String {
    let mut out = String::from(
        "# sarvb configuration reference\n\
         #\n\
         # Flat key=value file passed with --config. Blank lines and lines\n\
         # starting with '#' are ignored. Command-line flags and --set\n\
         # override file values. Each key is listed with its default and the\n\
         # subcommands that read it.\n",
    );
    for s in KEYS {
        let scopes: Vec<&str> = s.scopes.iter().map(|sc| sc.name()).collect();
        let _ = write!(out, "\n# {}\n# used by: {}\n{}={}\n", s.help, scopes.join(", "), s.key, s.default);
    }
    out
}

/// Resolved configuration: defaults, then file values, then overrides.
#[derive(Debug, Clone)]
pub struct Config {
    values: BTreeMap<&'static str, String>,
}

impl Config {
    pub fn load(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self, CliError> {
        let mut values: BTreeMap<&'static str, String> =
            KEYS.iter().map(|s| (s.key, s.default.to_string())).collect();
        let mut apply = |k: &str, v: String| -> Result<(), CliError> {
            let s = key_spec(k).ok_or_else(|| CliError::Usage(format!("unknown configuration key '{k}'")))?;
            values.insert(s.key, v);
            Ok(())
        };
        if let Some(path) = file {
            let f = std::fs::File::open(path)
                .map_err(|e| CliError::Usage(format!("cannot open config {}: {e}", path.display())))?;
            for (k, v) in read_key_values(f).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))? {
                apply(&k, v)?;
            }
        }
        for (k, v) in overrides {
            apply(k, v.clone())?;
        }
        Ok(Self { values })
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values
            .get(key)
            .unwrap_or_else(|| panic!("configuration key '{key}' is not registered"))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.raw(key).trim();
        raw.parse()
            .map_err(|e| CliError::Usage(format!("invalid value '{raw}' for {key}: {e}")))
    }

    pub fn path(&self, key: &str) -> PathBuf {
        PathBuf::from(self.raw(key).trim())
    }

    pub fn list(&self, key: &str) -> Vec<String> {
        self.raw(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(String::from)
            .collect()
    }

    pub fn f64_list(&self, key: &str) -> Result<Vec<f64>, CliError> {
        self.list(key)
            .iter()
            .map(|s| {
                s.parse()
                    .map_err(|_| CliError::Usage(format!("invalid number '{s}' in {key}")))
            })
            .collect()
    }

    /// The keys a subcommand reads, in registry order, for its manifest.
    pub fn scoped_pairs(&self, scope: Scope) -> Vec<(String, String)> {
        KEYS.iter()
            .filter(|s| s.scopes.contains(&scope))
            .map(|s| (format!("config.{}", s.key), self.raw(s.key).to_string()))
            .collect()
    }
}

/// Splits a `key=value` override.
pub fn parse_override(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| format!("expected key=value, found '{s}'"))
}
