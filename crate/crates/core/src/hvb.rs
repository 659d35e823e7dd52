//! Hybrid variational Bayes for responses missing not at random.
//!
//! Each outer iteration draws parameters from the variational family, then
//! imputes the missing responses with a short Metropolis-Hastings run whose
//! proposal is the Gaussian conditional on the transformed scale, and finally
//! takes an ADADELTA step on the missing-data target at those imputations.

use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rayon::prelude::*;

use crate::error::{Result, SarError};
use crate::gradients::grad_log_h_missing;
use crate::likelihoods::log_h_missing;
use crate::missingness::{linear_predictor, log_p_m, softplus};
use crate::model::{Dataset, MissingPattern, MissingnessParams, ModelKind, ModelParams, ParamLayout, Priors};
use crate::spatial::{PrecisionBlock, SpatialWeights};
use crate::transforms::{link_inverse, Constrained, YjParam};
use crate::variational::{
    lambda_from_ml, profile_ml, run_sga, sample_q, FitConfig, FitResult, SgaTarget, VariationalParams,
};
use crate::SarRng;

/// Largest number of missing responses for which [`KernelChoice::Auto`]
/// uses the single-block sampler.
pub const NOB_MAX_MISSING: usize = 500;

/// Block fraction used by [`KernelChoice::Auto`] above [`NOB_MAX_MISSING`].
pub const DEFAULT_BLOCK_FRACTION: f64 = 0.1;

/// Ordered, disjoint, covering partition of the unobserved sites.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockScheme {
    blocks: Vec<Vec<usize>>,
}

impl BlockScheme {
    /// Validates `blocks` against the ascending unobserved site list.
    pub fn new(blocks: Vec<Vec<usize>>, unobserved: &[usize]) -> Result<Self> {
        let mut seen: Vec<usize> = Vec::with_capacity(unobserved.len());
        for block in &blocks {
            if block.is_empty() {
                return Err(SarError::Argument("blocks must be non-empty".into()));
            }
            seen.extend(block);
        }
        seen.sort_unstable();
        if seen != unobserved {
            return Err(SarError::Argument(
                "blocks must partition the unobserved sites exactly".into(),
            ));
        }
        let blocks = blocks
            .into_iter()
            .map(|mut b| {
                b.sort_unstable();
                b
            })
            .collect();
        Ok(Self { blocks })
    }

    /// The whole unobserved set as one block (no block at all when empty).
    pub fn single(unobserved: &[usize]) -> Self {
        let blocks = if unobserved.is_empty() {
            Vec::new()
        } else {
            vec![unobserved.to_vec()]
        };
        Self { blocks }
    }

    /// `ceil(1 / block_fraction)` contiguous slices of the ascending list.
    pub fn contiguous(unobserved: &[usize], block_fraction: f64) -> Result<Self> {
        if !(block_fraction > 0.0 && block_fraction <= 1.0) {
            return Err(SarError::Argument(format!(
                "block fraction {block_fraction} must lie in (0, 1]"
            )));
        }
        if unobserved.is_empty() {
            return Ok(Self { blocks: Vec::new() });
        }
        let k = (1.0 / block_fraction).ceil() as usize;
        let size = unobserved.len().div_ceil(k);
        Ok(Self {
            blocks: unobserved.chunks(size).map(<[usize]>::to_vec).collect(),
        })
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }
}

/// Which inner sampler to run.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum KernelChoice {
    /// Single block up to [`NOB_MAX_MISSING`] missing sites, blocks of
    /// [`DEFAULT_BLOCK_FRACTION`] above.
    #[default]
    Auto,
    NoBlock,
    AllBlock { block_fraction: f64 },
    Explicit(BlockScheme),
}

impl KernelChoice {
    /// Block scheme for the given unobserved sites.
    pub fn resolve(&self, unobserved: &[usize]) -> Result<BlockScheme> {
        match self {
            Self::Auto if unobserved.len() <= NOB_MAX_MISSING => Ok(BlockScheme::single(unobserved)),
            Self::Auto => BlockScheme::contiguous(unobserved, DEFAULT_BLOCK_FRACTION),
            Self::NoBlock => Ok(BlockScheme::single(unobserved)),
            Self::AllBlock { block_fraction } => BlockScheme::contiguous(unobserved, *block_fraction),
            Self::Explicit(scheme) => BlockScheme::new(scheme.blocks.clone(), unobserved),
        }
    }
}

/// Settings of a missing-data fit.
#[derive(Debug, Clone, PartialEq)]
pub struct HvbConfig {
    pub fit: FitConfig,
    /// Metropolis-Hastings sweeps per outer iteration.
    pub inner_iters: usize,
    pub kernel: KernelChoice,
    /// Start each inner run from the previous imputations instead of a
    /// fresh conditional draw.
    pub warm_start: bool,
}

impl Default for HvbConfig {
    fn default() -> Self {
        Self {
            fit: FitConfig::default(),
            inner_iters: 10,
            kernel: KernelChoice::Auto,
            warm_start: false,
        }
    }
}

impl HvbConfig {
    pub fn validate(&self) -> Result<()> {
        self.fit.validate()?;
        if self.inner_iters == 0 {
            return Err(SarError::Argument("inner_iters must be at least 1".into()));
        }
        if let KernelChoice::AllBlock { block_fraction } = self.kernel {
            if !(block_fraction > 0.0 && block_fraction <= 1.0) {
                return Err(SarError::Argument("block_fraction must lie in (0, 1]".into()));
            }
        }
        Ok(())
    }
}

/// Sampler counts for one block in one outer iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AcceptanceRecord {
    pub iter: usize,
    pub block: usize,
    pub accepts: usize,
    pub proposals: usize,
}

/// Final state of an inner sampler run.
#[derive(Debug, Clone, PartialEq)]
pub struct McmcDraw {
    /// Imputations aligned with the ascending unobserved sites.
    pub y_u: Vec<f64>,
    /// Accepted proposals per block.
    pub accepts: Vec<usize>,
    /// Proposals per block.
    pub proposals: Vec<usize>,
}

/// `min(1, p(m | y_proposed) / p(m | y_current))`, computed in log space.
pub fn mh_accept_ratio(
    m: &[bool],
    y_proposed: &DVector<f64>,
    y_current: &DVector<f64>,
    xstar: &nalgebra::DMatrix<f64>,
    psi: &MissingnessParams,
) -> Result<f64> {
    let log_ratio = log_p_m(m, y_proposed, xstar, psi)? - log_p_m(m, y_current, xstar, psi)?;
    Ok(log_ratio.min(0.0).exp())
}

/// Per-outer-iteration quantities shared by all blocks.
struct SamplerContext<'a> {
    kind: ModelKind,
    w: &'a SpatialWeights,
    xstar: &'a nalgebra::DMatrix<f64>,
    rho: f64,
    sigma2: f64,
    tau: Option<&'a [f64]>,
    yj: Option<YjParam>,
    psi: &'a MissingnessParams,
    xb: DVector<f64>,
}

impl<'a> SamplerContext<'a> {
    fn new(kind: ModelKind, data: &'a Dataset, state: &'a Constrained) -> Result<Self> {
        let psi = state
            .psi
            .as_ref()
            .ok_or_else(|| SarError::Argument("missingness coefficients required".into()))?;
        if psi.psi_x.len() != data.n_psi_x() {
            return Err(SarError::mismatch("psi_x", data.n_psi_x(), psi.psi_x.len()));
        }
        let params: &ModelParams = &state.params;
        params.validate(kind)?;
        if params.beta.len() != data.n_beta() {
            return Err(SarError::mismatch("beta", data.n_beta(), params.beta.len()));
        }
        let yj = match params.gamma {
            Some(g) if kind.is_yeo_johnson() => Some(YjParam::new(g)?),
            _ => None,
        };
        Ok(Self {
            kind,
            w: &data.weights,
            xstar: &data.xstar,
            rho: params.rho,
            sigma2: params.sigma2,
            tau: state.tau.as_ref().map(|t| t.as_slice()),
            yj,
            psi,
            xb: &data.x * &params.beta,
        })
    }

    fn forward(&self, y: f64) -> f64 {
        self.yj.map_or(y, |t| t.forward(y))
    }

    fn inverse(&self, z: f64) -> Option<f64> {
        let y = match self.yj {
            Some(t) => t.inverse(z).ok()?,
            None => z,
        };
        y.is_finite().then_some(y)
    }

    fn precision(&self, target: &[usize]) -> Result<PrecisionBlock> {
        PrecisionBlock::new(self.kind, self.w, self.rho, self.tau, target)
    }

    /// Draws the block on the response scale given the residuals in `r_full`
    /// (target slots ignored); `None` when the inverse transform fails.
    fn propose<R: Rng + ?Sized>(
        &self,
        block: &PrecisionBlock,
        r_full: &[f64],
        rng: &mut R,
    ) -> Result<(DVector<f64>, Option<Vec<f64>>)> {
        let offset = block.mean_offset(self.kind, self.w, self.rho, self.tau, r_full)?;
        let noise = block.draw_noise(self.sigma2, rng);
        let z = DVector::from_iterator(
            block.len(),
            block
                .target()
                .iter()
                .enumerate()
                .map(|(a, &i)| self.xb[i] + offset[a] + noise[a]),
        );
        let y: Option<Vec<f64>> = z.iter().map(|&v| self.inverse(v)).collect();
        Ok((z, y))
    }

    /// `log p(m_i = 1 | y_i)` for an unobserved site.
    fn log_p_missing(&self, i: usize, y: f64) -> f64 {
        let row: Vec<f64> = self.xstar.row(i).iter().copied().collect();
        -softplus(-linear_predictor(y, &row, self.psi))
    }
}

/// Runs the blocked Metropolis-Hastings sampler; one block reproduces the
/// single-block kernel.
#[allow(clippy::too_many_arguments)]
fn run_blocked<R: Rng + ?Sized>(
    kind: ModelKind,
    data: &Dataset,
    pattern: &MissingPattern,
    state: &Constrained,
    blocks: &BlockScheme,
    y_u_init: Option<&[f64]>,
    n1: usize,
    rng: &mut R,
) -> Result<McmcDraw> {
    let unobserved = pattern.partition.unobserved_idx();
    let n_u = unobserved.len();
    if let Some(init) = y_u_init {
        if init.len() != n_u {
            return Err(SarError::mismatch("initial imputations", n_u, init.len()));
        }
    }
    if n_u == 0 {
        return Ok(McmcDraw {
            y_u: Vec::new(),
            accepts: Vec::new(),
            proposals: Vec::new(),
        });
    }
    let ctx = SamplerContext::new(kind, data, state)?;
    let n = data.n();
    let mut position = vec![usize::MAX; n];
    for (a, &i) in unobserved.iter().enumerate() {
        position[i] = a;
    }

    // Completed responses and transformed residuals.
    let mut y = pattern.complete(&vec![0.0; n_u])?;
    let mut r: Vec<f64> = (0..n).map(|i| ctx.forward(y[i]) - ctx.xb[i]).collect();

    let single = blocks.len() == 1;
    let full_block = ctx.precision(unobserved)?;
    match y_u_init {
        Some(init) => {
            for (&i, &v) in unobserved.iter().zip(init) {
                y[i] = v;
                r[i] = ctx.forward(v) - ctx.xb[i];
            }
        }
        None => {
            let mut drawn = None;
            for _ in 0..MAX_INIT_ATTEMPTS {
                let (z, yy) = ctx.propose(&full_block, &r, rng)?;
                if let Some(yy) = yy {
                    drawn = Some((z, yy));
                    break;
                }
            }
            let (z, yy) = drawn.ok_or(SarError::NonFiniteDraw(MAX_INIT_ATTEMPTS))?;
            for (a, &i) in unobserved.iter().enumerate() {
                y[i] = yy[a];
                r[i] = z[a] - ctx.xb[i];
            }
        }
    }

    let precisions: Vec<PrecisionBlock> = if single {
        vec![full_block]
    } else {
        blocks
            .blocks()
            .iter()
            .map(|b| ctx.precision(b))
            .collect::<Result<_>>()?
    };
    let mut accepts = vec![0; blocks.len()];
    let proposals = vec![n1; blocks.len()];
    for _ in 0..n1 {
        for (j, block) in precisions.iter().enumerate() {
            let (z, proposed) = ctx.propose(block, &r, rng)?;
            let u: f64 = rng.random();
            let Some(proposed) = proposed else {
                continue;
            };
            let log_ratio: f64 = block
                .target()
                .iter()
                .zip(&proposed)
                .map(|(&i, &yp)| ctx.log_p_missing(i, yp) - ctx.log_p_missing(i, y[i]))
                .sum();
            let a = log_ratio.min(0.0).exp();
            if a > u {
                accepts[j] += 1;
                for (a, &i) in block.target().iter().enumerate() {
                    y[i] = proposed[a];
                    r[i] = z[a] - ctx.xb[i];
                }
            }
        }
    }
    Ok(McmcDraw {
        y_u: unobserved.iter().map(|&i| y[i]).collect(),
        accepts,
        proposals,
    })
}

/// Attempts at an initial conditional draw before giving up on a
/// non-finite inverse transform.
const MAX_INIT_ATTEMPTS: usize = 100;

/// Single-block sampler: `n1` whole-vector Metropolis-Hastings updates.
#[allow(clippy::too_many_arguments)]
pub fn mcmc_nob<R: Rng + ?Sized>(
    kind: ModelKind,
    data: &Dataset,
    pattern: &MissingPattern,
    state: &Constrained,
    y_u_init: Option<&[f64]>,
    n1: usize,
    rng: &mut R,
) -> Result<McmcDraw> {
    let scheme = BlockScheme::single(pattern.partition.unobserved_idx());
    run_blocked(kind, data, pattern, state, &scheme, y_u_init, n1, rng)
}

/// Blocked sampler: each of `n1` sweeps updates the blocks in order.
#[allow(clippy::too_many_arguments)]
pub fn mcmc_allb<R: Rng + ?Sized>(
    kind: ModelKind,
    data: &Dataset,
    pattern: &MissingPattern,
    state: &Constrained,
    blocks: &BlockScheme,
    y_u_init: Option<&[f64]>,
    n1: usize,
    rng: &mut R,
) -> Result<McmcDraw> {
    BlockScheme::new(blocks.blocks.clone(), pattern.partition.unobserved_idx())?;
    run_blocked(kind, data, pattern, state, blocks, y_u_init, n1, rng)
}

/// One draw of the `target` sites from their Gaussian conditional given the
/// other entries of `y_complete`, mapped back to the response scale.
pub fn propose_yu<R: Rng + ?Sized>(
    kind: ModelKind,
    data: &Dataset,
    params: &ModelParams,
    tau: Option<&DVector<f64>>,
    target: &[usize],
    y_complete: &DVector<f64>,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if y_complete.len() != data.n() {
        return Err(SarError::mismatch("responses", data.n(), y_complete.len()));
    }
    let state = Constrained {
        params: params.clone(),
        tau: tau.cloned(),
        psi: Some(MissingnessParams::zeros(data.n_psi_x())),
    };
    let ctx = SamplerContext::new(kind, data, &state)?;
    let r: Vec<f64> = (0..data.n()).map(|i| ctx.forward(y_complete[i]) - ctx.xb[i]).collect();
    let block = ctx.precision(target)?;
    let (_, y) = ctx.propose(&block, &r, rng)?;
    y.ok_or_else(|| SarError::Domain("proposal fell outside the transform's image".into()))
}

struct MissingTarget<'a> {
    kind: ModelKind,
    data: &'a Dataset,
    pattern: MissingPattern,
    layout: ParamLayout,
    priors: &'a Priors,
    blocks: BlockScheme,
    n1: usize,
    warm_start: bool,
    y_u: Option<Vec<f64>>,
    acceptance: Vec<AcceptanceRecord>,
}

impl SgaTarget for MissingTarget<'_> {
    fn grad_log_h<R: Rng + ?Sized>(&mut self, iter: usize, theta: &DVector<f64>, rng: &mut R) -> Result<DVector<f64>> {
        let state = link_inverse(&self.layout, theta)?;
        let init = if self.warm_start { self.y_u.as_deref() } else { None };
        let draw = run_blocked(
            self.kind,
            self.data,
            &self.pattern,
            &state,
            &self.blocks,
            init,
            self.n1,
            rng,
        )?;
        self.acceptance.extend(draw.accepts.iter().zip(&draw.proposals).enumerate().map(
            |(block, (&accepts, &proposals))| AcceptanceRecord {
                iter,
                block,
                accepts,
                proposals,
            },
        ));
        let grad = grad_log_h_missing(self.kind, self.data, &self.pattern, theta, &draw.y_u, self.priors)?;
        self.y_u = Some(draw.y_u);
        Ok(grad)
    }

    fn log_h(&self, theta: &DVector<f64>) -> Result<f64> {
        let y_u = self.y_u.as_deref().unwrap_or_default();
        log_h_missing(self.kind, self.data, &self.pattern, theta, y_u, self.priors)
    }
}

/// Starting `lambda` for a missing-data fit: a complete-case ML fit on the
/// observed sites (with the weight matrix restricted to them).
pub fn init_lambda_missing<R: Rng + ?Sized>(
    kind: ModelKind,
    data: &Dataset,
    config: &FitConfig,
    rng: &mut R,
) -> Result<VariationalParams> {
    let pattern = data.missing_pattern();
    let observed = pattern.partition.observed_idx();
    let y_o = DVector::from_column_slice(&pattern.y_observed);
    let x_o = data.x.select_rows(observed);
    let w_o = data.weights.restrict(observed)?;
    let ml = profile_ml(&y_o, &x_o, &w_o)?;
    lambda_from_ml(&ParamLayout::for_missing_data(kind, data), &ml, &config.init_settings(), rng)
}

/// Hybrid variational Bayes on data with missing responses.
pub fn hvb_fit<R: Rng + ?Sized>(
    kind: ModelKind,
    data: &Dataset,
    priors: &Priors,
    config: &HvbConfig,
    rng: &mut R,
) -> Result<FitResult> {
    config.validate()?;
    priors.validate()?;
    let start = Instant::now();
    let pattern = data.missing_pattern();
    let blocks = config.kernel.resolve(pattern.partition.unobserved_idx())?;
    let layout = ParamLayout::for_missing_data(kind, data);
    let lambda = init_lambda_missing(kind, data, &config.fit, rng)?;
    let mut target = MissingTarget {
        kind,
        data,
        pattern,
        layout,
        priors,
        blocks,
        n1: config.inner_iters,
        warm_start: config.warm_start,
        y_u: None,
        acceptance: Vec::new(),
    };
    let out = run_sga(&layout, lambda, &config.fit, rng, &mut target)?;
    Ok(FitResult {
        kind,
        layout,
        lambda: out.lambda,
        trace: out.trace,
        iterations: out.iterations,
        stopped_early: out.stopped_early,
        wall_time: start.elapsed(),
        seed: config.fit.seed,
        acceptance: target.acceptance,
        elbo: out.elbo,
    })
}

/// Parameter draws with one imputation of the missing responses each.
#[derive(Debug, Clone, PartialEq)]
pub struct MissingPosterior {
    pub params: Vec<Constrained>,
    /// Imputations aligned with the ascending unobserved sites.
    pub y_u: Vec<Vec<f64>>,
}

/// Draws `n_draws` parameter vectors from `q_lambda` and, for each, runs the
/// inner sampler from a fresh conditional draw. Draw `k` uses stream `k` of
/// a generator seeded from `rng`, so results do not depend on thread count.
#[allow(clippy::too_many_arguments)]
pub fn draw_posterior_missing<R: Rng + ?Sized>(
    kind: ModelKind,
    data: &Dataset,
    lambda: &VariationalParams,
    n_draws: usize,
    n1: usize,
    kernel: &KernelChoice,
    rng: &mut R,
) -> Result<MissingPosterior> {
    let layout = ParamLayout::for_missing_data(kind, data);
    if lambda.dim() != layout.len() {
        return Err(SarError::mismatch("variational dimension", layout.len(), lambda.dim()));
    }
    let pattern = data.missing_pattern();
    let blocks = kernel.resolve(pattern.partition.unobserved_idx())?;
    let master: u64 = rng.random();
    let pairs: Vec<(Constrained, Vec<f64>)> = (0..n_draws)
        .into_par_iter()
        .map(|k| {
            let mut stream = SarRng::seed_from_u64(master);
            stream.set_stream(k as u64);
            let state = link_inverse(&layout, &sample_q(lambda, &mut stream).theta)?;
            let draw = run_blocked(kind, data, &pattern, &state, &blocks, None, n1, &mut stream)?;
            Ok((state, draw.y_u))
        })
        .collect::<Result<_>>()?;
    let (params, y_u) = pairs.into_iter().unzip();
    Ok(MissingPosterior { params, y_u })
}
