//! The five pipeline stages.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DVector;
use rayon::prelude::*;
use sarvb::hvb::draw_posterior_missing;
use sarvb::io::{
    format_f64, read_table, write_acceptance, write_dataset, write_dic, write_lambda, write_site_values,
    write_summary, write_table, write_trace, write_truth, DicRow, Table, TruthRow,
};
use sarvb::missingness::simulate_missing;
use sarvb::model_select::{dic_full, dic_missing, summarize, PosteriorSamples};
use sarvb::simulate::{beta_preset, make_design, make_lognormal_design, simulate_sem};
use sarvb::variational::{draw_posterior, AdadeltaConfig};
use sarvb::{
    build_rook_lattice, hvb_fit, rng_from_seed, vb_fit, Dataset, FitConfig, HvbConfig, KernelChoice,
    MissingnessParams, ModelKind, ModelParams, Priors, SarRng,
};

use crate::config::{Config, Scope};
use crate::error::CliError;
use crate::files::{load_dataset, read_with, write_with, Manifest};

/// Settings common to every subcommand.
pub struct Context {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub config: Config,
}

fn write_common(ctx: &Context, command: &str, scope: Scope) -> Manifest {
    let mut m = Manifest::default();
    m.push("command", command);
    m.push("seed", ctx.seed);
    m.extend(ctx.config.scoped_pairs(scope));
    m
}

pub fn simulate(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let kind: ModelKind = cfg.get("kind")?;
    let rows: usize = cfg.get("rows")?;
    let cols: usize = cfg.get("cols")?;
    let r: usize = cfg.get("n_covariates")?;
    let q: usize = cfg.get("n_missing_covariates")?;
    let weights = build_rook_lattice(rows, cols, cfg.get("row_standardize")?)?;
    let n = weights.n();

    let mut rng = rng_from_seed(ctx.seed);
    let x = make_design(n, r, &mut rng);
    let xstar = make_lognormal_design(n, q, &mut rng);
    let beta = if cfg.raw("beta").trim() == "preset" {
        beta_preset(r + 1, &mut rng)
    } else {
        let b = cfg.f64_list("beta")?;
        if b.len() != r + 1 {
            return Err(CliError::Usage(format!(
                "beta has {} values but the design has {} columns",
                b.len(),
                r + 1
            )));
        }
        DVector::from_vec(b)
    };
    let params = ModelParams {
        beta,
        sigma2: cfg.get("sigma2")?,
        rho: cfg.get("rho")?,
        nu: kind.is_student_t().then(|| cfg.get("nu")).transpose()?,
        gamma: kind.is_yeo_johnson().then(|| cfg.get("gamma")).transpose()?,
    };
    params.validate(kind)?;
    let sim = simulate_sem(kind, &x, &weights, &params, &mut rng)?;
    let data = Dataset::new(sim.y.iter().map(|&v| Some(v)).collect(), x, xstar, Arc::new(weights))?;

    write_with(&ctx.out_dir.join("data.csv"), |w| write_dataset(w, &data))?;
    write_with(&ctx.out_dir.join("weights.csv"), |w| sarvb::io::write_weights(w, &data.weights))?;
    let mut m = write_common(ctx, "simulate", Scope::Simulate);
    m.push("n", n);
    m.push("true.kind", kind);
    for (name, v) in ModelParams::names(kind, params.beta.len()).iter().zip(params.to_vec()) {
        m.push(&format!("true.{name}"), format_f64(v));
    }
    m.write(&ctx.out_dir.join("manifest.txt"))?;
    println!("simulated {n} sites from {kind} into {}", ctx.out_dir.display());
    Ok(())
}

pub fn amputate(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let data = load_dataset(cfg)?;
    let y = data
        .complete_y()
        .map_err(|_| CliError::Data("amputation needs a dataset without missing responses".into()))?;
    let coeffs = cfg.f64_list("psi")?;
    let expected = data.xstar.ncols() + 1;
    if coeffs.len() != expected {
        return Err(CliError::Usage(format!(
            "psi has {} values; the dataset needs {expected} (intercept, {} covariates, response)",
            coeffs.len(),
            expected - 2
        )));
    }
    let psi = MissingnessParams::from_vec(&coeffs)?;
    let mut rng = rng_from_seed(ctx.seed);
    let m = simulate_missing(&y, &data.xstar, &psi, &mut rng)?;
    let amputated = Dataset::new(
        y.iter().zip(&m).map(|(&v, &mi)| (!mi).then_some(v)).collect(),
        data.x.clone(),
        data.xstar.clone(),
        data.weights.clone(),
    )?;
    let truth: Vec<TruthRow> = y
        .iter()
        .zip(&m)
        .enumerate()
        .map(|(site, (&true_y, &missing))| TruthRow { site, missing, true_y })
        .collect();
    let n_missing = m.iter().filter(|&&b| b).count();

    write_with(&ctx.out_dir.join("data.csv"), |w| write_dataset(w, &amputated))?;
    write_with(&ctx.out_dir.join("weights.csv"), |w| sarvb::io::write_weights(w, &data.weights))?;
    write_with(&ctx.out_dir.join("truth.csv"), |w| write_truth(w, &truth))?;
    let mut manifest = write_common(ctx, "amputate", Scope::Amputate);
    manifest.push("n", y.len());
    manifest.push("n_missing", n_missing);
    manifest.write(&ctx.out_dir.join("manifest.txt"))?;
    println!("amputated {n_missing} of {} responses into {}", y.len(), ctx.out_dir.display());
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Method {
    Vb,
    Hvb,
}

impl Method {
    fn parse(s: &str) -> Result<Self, CliError> {
        match s.trim() {
            "vb" => Ok(Method::Vb),
            "hvb" => Ok(Method::Hvb),
            other => Err(CliError::Usage(format!("unknown method '{other}' (expected vb or hvb)"))),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Method::Vb => "vb",
            Method::Hvb => "hvb",
        }
    }
}

fn priors(cfg: &Config) -> Result<Priors, CliError> {
    let p = Priors {
        var_beta: cfg.get("prior_var_beta")?,
        var_omega: cfg.get("prior_var_log_sigma2")?,
        var_rho: cfg.get("prior_var_rho")?,
        var_nu: cfg.get("prior_var_nu")?,
        var_gamma: cfg.get("prior_var_gamma")?,
        var_psi: cfg.get("prior_var_psi")?,
    };
    p.validate()?;
    Ok(p)
}

fn kernel(cfg: &Config) -> Result<KernelChoice, CliError> {
    match cfg.raw("kernel").trim() {
        "auto" => Ok(KernelChoice::Auto),
        "nob" => Ok(KernelChoice::NoBlock),
        "allb" => Ok(KernelChoice::AllBlock {
            block_fraction: cfg.get("block_fraction")?,
        }),
        other => Err(CliError::Usage(format!("unknown kernel '{other}' (expected auto, nob or allb)"))),
    }
}

fn fit_config(cfg: &Config, seed: u64) -> Result<FitConfig, CliError> {
    let stop_window: usize = cfg.get("stop_window")?;
    let c = FitConfig {
        n_factors: cfg.get("n_factors")?,
        max_iters: cfg.get("iters")?,
        seed,
        trace_every: cfg.get("trace_every")?,
        stop_window: (stop_window > 0).then_some(stop_window),
        stop_tol: cfg.get("stop_tol")?,
        gamma_init: cfg.get("gamma_init")?,
        nu_init: cfg.get("nu_init")?,
        psi_init: cfg.get("psi_init")?,
        init_spread: cfg.get("init_spread")?,
        adadelta: AdadeltaConfig {
            alpha: cfg.get("adadelta_alpha")?,
            upsilon: cfg.get("adadelta_decay")?,
        },
        track_elbo: false,
    };
    c.validate()?;
    Ok(c)
}

/// Generator for one model of a multi-model fit; streams keep the models
/// independent of each other and of the listing order.
fn model_rng(seed: u64, kind: ModelKind) -> SarRng {
    let mut rng = rng_from_seed(seed);
    let stream = ModelKind::ALL.iter().position(|k| *k == kind).expect("kind is listed");
    rng.set_stream(stream as u64);
    rng
}

fn site_column(i: usize) -> String {
    format!("site_{i}")
}

pub fn fit(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let method = Method::parse(cfg.raw("method"))?;
    let mut kinds = Vec::new();
    for name in cfg.list("models") {
        let kind: ModelKind = name.parse()?;
        if kinds.contains(&kind) {
            return Err(CliError::Usage(format!("model '{kind}' is listed twice")));
        }
        kinds.push(kind);
    }
    if kinds.is_empty() {
        return Err(CliError::Usage("no models to fit".into()));
    }
    let data = load_dataset(cfg)?;
    let n_missing = data.y.iter().filter(|v| v.is_none()).count();
    match method {
        Method::Vb if n_missing > 0 => {
            return Err(CliError::Usage(format!(
                "the dataset has {n_missing} missing responses; use method=hvb for missing data"
            )))
        }
        Method::Hvb if n_missing == 0 => {
            return Err(CliError::Usage(
                "the dataset has no missing responses; use method=vb for complete data".into(),
            ))
        }
        _ => {}
    }
    let priors = priors(cfg)?;
    let fit_cfg = fit_config(cfg, ctx.seed)?;
    let hvb_cfg = HvbConfig {
        fit: fit_cfg.clone(),
        inner_iters: cfg.get("inner_iters")?,
        kernel: kernel(cfg)?,
        warm_start: cfg.get("warm_start")?,
    };
    hvb_cfg.validate()?;
    let n_draws: usize = cfg.get("n_draws")?;
    if n_draws == 0 {
        return Err(CliError::Usage("n_draws must be positive".into()));
    }

    let outcomes: Vec<Result<usize, CliError>> = kinds
        .par_iter()
        .map(|&kind| {
            let dir = ctx.out_dir.join(kind.name());
            let mut rng = model_rng(ctx.seed, kind);
            let result = match method {
                Method::Vb => vb_fit(kind, &data, &priors, &fit_cfg, &mut rng)?,
                Method::Hvb => hvb_fit(kind, &data, &priors, &hvb_cfg, &mut rng)?,
            };
            let n_beta = data.n_beta();
            let mut names = ModelParams::names(kind, n_beta);
            let mut rows: Vec<Vec<f64>>;
            match method {
                Method::Vb => {
                    let draws = draw_posterior(&result.layout, &result.lambda, n_draws, &mut rng)?;
                    rows = draws.iter().map(|d| d.params.to_vec()).collect();
                }
                Method::Hvb => {
                    let post = draw_posterior_missing(
                        kind,
                        &data,
                        &result.lambda,
                        n_draws,
                        hvb_cfg.inner_iters,
                        &hvb_cfg.kernel,
                        &mut rng,
                    )?;
                    names.extend(MissingnessParams::names(data.n_psi_x()));
                    rows = Vec::with_capacity(n_draws);
                    for c in &post.params {
                        let mut row = c.params.to_vec();
                        row.extend(c.psi.as_ref().expect("missing-data draws carry psi").to_vec());
                        rows.push(row);
                    }
                    let pattern = data.missing_pattern();
                    let sites = pattern.partition.unobserved_idx();
                    let table = Table {
                        names: sites.iter().map(|&i| site_column(i)).collect(),
                        rows: post.y_u,
                    };
                    write_with(&dir.join("yu_samples.csv"), |w| write_table(w, &table))?;
                    write_yu_mean(&dir, sites, &table.rows)?;
                    write_with(&dir.join("acceptance.csv"), |w| write_acceptance(w, &result.acceptance))?;
                }
            }
            let samples = Table { names, rows };
            write_with(&dir.join("lambda.csv"), |w| write_lambda(w, &result.lambda))?;
            write_with(&dir.join("trace.csv"), |w| write_trace(w, &result.trace))?;
            write_with(&dir.join("samples.csv"), |w| write_table(w, &samples))?;
            write_summary_file(&dir, &samples)?;

            let mut m = write_common(ctx, "fit", Scope::Fit);
            m.push("kind", kind);
            m.push("method", method.name());
            m.push("iterations", result.iterations);
            m.push("stopped_early", result.stopped_early);
            m.push("n_draws", n_draws);
            m.push("n_sites", data.n());
            m.push("n_missing", n_missing);
            m.write(&dir.join("manifest.txt"))?;
            Ok(result.iterations)
        })
        .collect();

    for (kind, outcome) in kinds.iter().zip(outcomes) {
        let iterations = outcome.map_err(|e| match e {
            CliError::Usage(m) => CliError::Usage(format!("{kind}: {m}")),
            CliError::Data(m) => CliError::Data(format!("{kind}: {m}")),
            CliError::Numerical(m) => CliError::Numerical(format!("{kind}: {m}")),
        })?;
        println!(
            "fitted {kind} by {} ({iterations} iterations) into {}",
            method.name(),
            ctx.out_dir.join(kind.name()).display()
        );
    }
    Ok(())
}

fn write_summary_file(dir: &Path, samples: &Table) -> Result<(), CliError> {
    let summary = summarize(&samples.names, &samples.rows)?;
    write_with(&dir.join("summary.csv"), |w| write_summary(w, &summary))
}

fn write_yu_mean(dir: &Path, sites: &[usize], rows: &[Vec<f64>]) -> Result<(), CliError> {
    let n = rows.len() as f64;
    let means: Vec<(usize, f64)> = sites
        .iter()
        .enumerate()
        .map(|(k, &i)| (i, rows.iter().map(|r| r[k]).sum::<f64>() / n))
        .collect();
    write_with(&dir.join("yu_mean.csv"), |w| write_site_values(w, "mean", &means))
}

fn parse_site_columns(names: &[String]) -> Result<Vec<usize>, CliError> {
    names
        .iter()
        .map(|c| {
            c.strip_prefix("site_")
                .and_then(|i| i.parse().ok())
                .ok_or_else(|| CliError::Data(format!("imputation column '{c}' is not site_<index>")))
        })
        .collect()
}

/// A fit directory's metadata and posterior draws.
struct FitOutputs {
    kind: ModelKind,
    method: Method,
    samples: Table,
    y_u: Option<Table>,
}

fn read_fit(dir: &Path) -> Result<FitOutputs, CliError> {
    let manifest = Manifest::read(&dir.join("manifest.txt"))?;
    let kind: ModelKind = manifest
        .get("kind")?
        .parse()
        .map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    let method = Method::parse(manifest.get("method")?).map_err(|e| CliError::Data(e.to_string()))?;
    let samples = read_with(&dir.join("samples.csv"), read_table)?;
    let y_u = match method {
        Method::Hvb => Some(read_with(&dir.join("yu_samples.csv"), read_table)?),
        Method::Vb => None,
    };
    Ok(FitOutputs { kind, method, samples, y_u })
}

fn check_columns(what: &str, expected: &[String], found: &[String]) -> Result<(), CliError> {
    if expected != found {
        return Err(CliError::Data(format!(
            "{what} columns '{}' do not match the expected '{}'",
            found.join(","),
            expected.join(",")
        )));
    }
    Ok(())
}

fn posterior_samples(fit: &FitOutputs, data: &Dataset) -> Result<PosteriorSamples, CliError> {
    let n_beta = data.n_beta();
    let n_phi = ModelParams::names(fit.kind, n_beta).len();
    let mut expected = ModelParams::names(fit.kind, n_beta);
    if fit.method == Method::Hvb {
        expected.extend(MissingnessParams::names(data.n_psi_x()));
    }
    check_columns("samples", &expected, &fit.samples.names)?;
    let phi = fit
        .samples
        .rows
        .iter()
        .map(|r| ModelParams::from_vec(fit.kind, n_beta, &r[..n_phi]))
        .collect::<sarvb::Result<Vec<_>>>()?;
    let (psi, y_u) = match &fit.y_u {
        None => (None, None),
        Some(table) => {
            let pattern = data.missing_pattern();
            let sites = parse_site_columns(&table.names)?;
            if sites != pattern.partition.unobserved_idx() {
                return Err(CliError::Data(
                    "imputed sites do not match the dataset's missing responses".into(),
                ));
            }
            let psi = fit
                .samples
                .rows
                .iter()
                .map(|r| MissingnessParams::from_vec(&r[n_phi..]))
                .collect::<sarvb::Result<Vec<_>>>()?;
            (Some(psi), Some(table.rows.clone()))
        }
    };
    Ok(PosteriorSamples::new(phi, psi, y_u)?)
}

pub fn dic(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let dirs = cfg.list("fits");
    if dirs.is_empty() {
        return Err(CliError::Usage("no fit directories given (set fits=dir1,dir2,...)".into()));
    }
    let fits = dirs
        .iter()
        .map(|d| read_fit(Path::new(d)))
        .collect::<Result<Vec<_>, _>>()?;
    if fits.iter().any(|f| f.method != fits[0].method) {
        return Err(CliError::Usage(
            "cannot compare complete-data and missing-data fits in one report".into(),
        ));
    }
    let data = load_dataset(cfg)?;
    let priors = priors(cfg)?;
    let mut rows = Vec::with_capacity(fits.len());
    for (dir, fit) in dirs.iter().zip(&fits) {
        let samples = posterior_samples(fit, &data).map_err(|e| match e {
            CliError::Data(m) => CliError::Data(format!("{dir}: {m}")),
            other => other,
        })?;
        let report = match fit.method {
            Method::Vb => dic_full(fit.kind, &data, &samples.phi, &priors)?,
            Method::Hvb => dic_missing(fit.kind, &data, &samples, &priors)?,
        };
        rows.push(DicRow {
            model: fit.kind.to_string(),
            report,
        });
    }
    write_with(&ctx.out_dir.join("dic.csv"), |w| write_dic(w, &rows))?;
    for r in &rows {
        let show = |v: Option<f64>| v.map(format_f64).unwrap_or_else(|| "-".into());
        println!(
            "{}: dic1 {} dic2 {} dic5 {}",
            r.model,
            show(r.report.dic1),
            show(r.report.dic2),
            show(r.report.dic5)
        );
    }
    Ok(())
}

pub fn summarize_fit(ctx: &Context) -> Result<(), CliError> {
    let dir = ctx.config.path("fit");
    let fit = read_fit(&dir)?;
    write_summary_file(&ctx.out_dir, &fit.samples)?;
    if let Some(table) = &fit.y_u {
        let sites = parse_site_columns(&table.names)?;
        write_yu_mean(&ctx.out_dir, &sites, &table.rows)?;
    }
    println!(
        "summarized {} draws of {} ({}) into {}",
        fit.samples.rows.len(),
        fit.kind,
        fit.method.name(),
        ctx.out_dir.display()
    );
    Ok(())
}
