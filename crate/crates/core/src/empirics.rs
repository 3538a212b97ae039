//! Monte Carlo estimates of output sensitivity under bounded input
//! perturbations, and a finite-difference check of the attention Jacobian.
//!
//! Inputs are perturbed to exactly Frobenius radius `ε`; output distances are
//! Euclidean. Each trial draws from its own substream of the caller's
//! [`RngStream`], trials run on the rayon pool, and aggregation happens in
//! trial order, so reports are bit-identical whatever the thread count.

use rayon::prelude::*;

use crate::bounds::{gamma_bound, BoundReport};
use crate::error::{Error, Result};
use crate::linalg::{gaussian_matrix, spectral_norm, Matrix, RngStream};
use crate::model::{analytic_attention_jacobian, attention_map, backbone, ModelConfig, Variant};
use crate::pooling::{pool, PoolParams, PoolingSpec};

/// Smallest radius accepted when estimating slopes.
pub const MIN_SLOPE_EPS: f64 = 1e-9;

/// `x + ε · G/‖G‖_F` with `G` a Gaussian matrix drawn from `rng`.
pub fn perturb(x: &Matrix, eps: f64, rng: &mut RngStream) -> Result<Matrix> {
    if !(eps.is_finite() && eps >= 0.0) {
        return Err(Error::Domain(format!(
            "perturbation radius must be non-negative, got {eps}"
        )));
    }
    let g = gaussian_matrix(x.rows(), x.cols(), rng);
    let norm = g.frobenius_norm();
    Ok(x.add(&g.scale(eps / norm)))
}

/// Aggregated result at one radius.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationRow {
    pub eps: f64,
    /// Mean Euclidean distance between pooled outputs.
    pub mean_distance: f64,
    /// Standard error of `mean_distance`.
    pub std_error: f64,
    /// Fraction of trials whose distance exceeds each threshold of the sigma grid.
    pub exceedance: Vec<f64>,
    /// `max distance / ε` over trials.
    pub max_slope: f64,
}

/// Empirical sensitivity of one `(model, pooling)` pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationReport {
    pub pooling: PoolingSpec,
    pub sigma_grid: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub rows: Vec<PerturbationRow>,
}

impl PerturbationReport {
    /// Whether `exceedance(σ) ≤ mean_distance / σ` holds in every cell.
    /// This is Markov's inequality for the empirical measure and holds exactly.
    pub fn markov_consistent(&self) -> bool {
        self.rows.iter().all(|row| {
            self.sigma_grid
                .iter()
                .zip(&row.exceedance)
                .all(|(&sigma, &frac)| frac <= row.mean_distance / sigma)
        })
    }
}

/// Pooled-output distances for every trial (outer) and every pooling (inner).
///
/// Trial `t` draws its base input and perturbation direction from
/// `rng.substream(t)`, so the same trial index sees the same base input and
/// direction at every radius.
pub fn trial_distances(
    cfg: &ModelConfig,
    poolings: &[(PoolingSpec, PoolParams)],
    eps: f64,
    trials: usize,
    rng: &RngStream,
) -> Result<Vec<Vec<f64>>> {
    if trials == 0 {
        return Err(Error::Domain("at least one trial is required".into()));
    }
    (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut stream = rng.substream(t as u64);
            let x = cfg.sample_input(&mut stream);
            let x_pert = perturb(&x, eps, &mut stream)?;
            let z = backbone(&x, cfg)?;
            let z_pert = backbone(&x_pert, cfg)?;
            poolings
                .iter()
                .map(|(spec, params)| {
                    let a = pool(&z, *spec, params)?;
                    let b = pool(&z_pert, *spec, params)?;
                    Ok(a.distance(&b))
                })
                .collect()
        })
        .collect()
}

impl PerturbationRow {
    /// Summarises per-trial distances measured at radius `eps`.
    pub fn from_distances(distances: &[f64], eps: f64, sigma_grid: &[f64]) -> PerturbationRow {
        summarize(distances, eps, sigma_grid)
    }
}

fn summarize(distances: &[f64], eps: f64, sigma_grid: &[f64]) -> PerturbationRow {
    let n = distances.len() as f64;
    let mean = distances.iter().sum::<f64>() / n;
    let var = if distances.len() > 1 {
        distances.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let exceedance = sigma_grid
        .iter()
        .map(|&s| distances.iter().filter(|&&d| d > s).count() as f64 / n)
        .collect();
    let max_slope = if eps > 0.0 {
        distances.iter().fold(0.0_f64, |m, &d| m.max(d / eps))
    } else {
        0.0
    };
    PerturbationRow {
        eps,
        mean_distance: mean,
        std_error: (var / n).sqrt(),
        exceedance,
        max_slope,
    }
}

fn check_sigma_grid(sigma_grid: &[f64]) -> Result<()> {
    if sigma_grid.is_empty() || sigma_grid.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::Domain("sigma grid must be non-empty and positive".into()));
    }
    Ok(())
}

/// Monte Carlo estimate of the probability that an `ε`-perturbation of a
/// random bounded input moves the pooled output by more than each `σ`.
pub fn empirical_expressivity(
    cfg: &ModelConfig,
    spec: PoolingSpec,
    params: &PoolParams,
    eps: f64,
    sigma_grid: &[f64],
    trials: usize,
    rng: &RngStream,
) -> Result<PerturbationReport> {
    check_sigma_grid(sigma_grid)?;
    let per_trial = trial_distances(cfg, &[(spec, params.clone())], eps, trials, rng)?;
    let distances: Vec<f64> = per_trial.into_iter().map(|v| v[0]).collect();
    Ok(PerturbationReport {
        pooling: spec,
        sigma_grid: sigma_grid.to_vec(),
        trials,
        seed: rng.seed(),
        rows: vec![summarize(&distances, eps, sigma_grid)],
    })
}

/// Largest observed `‖f(x̃) − f(x)‖₂ / ‖x̃ − x‖_F` over `trials` pairs at radius `eps`.
pub fn empirical_lipschitz(
    cfg: &ModelConfig,
    spec: PoolingSpec,
    params: &PoolParams,
    trials: usize,
    eps: f64,
    rng: &RngStream,
) -> Result<f64> {
    if !(eps.is_finite() && eps >= MIN_SLOPE_EPS) {
        return Err(Error::Domain(format!("slope needs eps >= {MIN_SLOPE_EPS}, got {eps}")));
    }
    let per_trial = trial_distances(cfg, &[(spec, params.clone())], eps, trials, rng)?;
    Ok(per_trial.iter().fold(0.0_f64, |m, v| m.max(v[0] / eps)))
}

/// One Jacobian block's distance below its case bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockMargin {
    pub trial: usize,
    pub head: usize,
    pub i: usize,
    pub j: usize,
    pub norm: f64,
    pub bound: f64,
}

impl BlockMargin {
    pub fn margin(&self) -> f64 {
        self.bound - self.norm
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JacobianCheckReport {
    /// Largest `|analytic − fd| / max(1, |analytic|)` over all entries.
    pub max_relative_error: f64,
    /// `(trial, head, i, j)` of the block holding the largest error.
    pub worst_block: (usize, usize, usize, usize),
    pub fd_step: f64,
    pub trials: usize,
    /// Case bound minus operator norm, for every block checked.
    pub case_bound_margins: Vec<BlockMargin>,
}

impl JacobianCheckReport {
    pub fn min_margin(&self) -> f64 {
        self.case_bound_margins
            .iter()
            .map(BlockMargin::margin)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_relative_error <= tolerance && self.min_margin() >= 0.0
    }
}

/// Default central-difference step.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Compares the analytic Jacobian of `h(X) = P X` against central finite
/// differences for every head of a one-layer dot-product model, and measures
/// each block against `2nB²‖A‖ + 1` (off-diagonal) or `4nB²‖A‖ + 1` (diagonal).
/// Worst relative error of one trial, where it occurred, and its block margins.
type TrialCheck = (f64, (usize, usize, usize, usize), Vec<BlockMargin>);

pub fn jacobian_check(cfg: &ModelConfig, trials: usize, fd_step: f64, rng: &RngStream) -> Result<JacobianCheckReport> {
    if cfg.variant() != Variant::DotProduct {
        return Err(Error::Unsupported(format!(
            "jacobian check needs dot-product attention, got {}",
            cfg.variant()
        )));
    }
    if cfg.num_layers() != 1 {
        return Err(Error::Unsupported(format!(
            "jacobian check needs a single layer, got {}",
            cfg.num_layers()
        )));
    }
    if trials == 0 {
        return Err(Error::Domain("at least one trial is required".into()));
    }
    if !(fd_step.is_finite() && fd_step > 0.0) {
        return Err(Error::Domain(format!("fd step must be positive, got {fd_step}")));
    }
    let (n, d) = (cfg.n(), cfg.d());
    let d_head = cfg.head_dim();
    let b2 = cfg.bound() * cfg.bound();
    let layer = &cfg.layers()[0];

    let per_trial: Vec<TrialCheck> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut stream = rng.substream(t as u64);
            let x = cfg.sample_input(&mut stream);
            let mut worst = (0.0_f64, (t, 0, 0, 0));
            let mut margins = Vec::with_capacity(layer.heads.len() * n * n);
            for (h, head) in layer.heads.iter().enumerate() {
                let jac = analytic_attention_jacobian(&x, head, d_head, Variant::DotProduct)?;
                let a_norm = spectral_norm(jac.a_matrix())?;

                // fd[(j, b)] holds ∂h/∂X_{jb} as an n × d matrix.
                let mut xp = x.clone();
                for j in 0..n {
                    for b in 0..d {
                        let orig = x[(j, b)];
                        xp[(j, b)] = orig + fd_step;
                        let plus = attention_map(&xp, head, d_head)?;
                        xp[(j, b)] = orig - fd_step;
                        let minus = attention_map(&xp, head, d_head)?;
                        xp[(j, b)] = orig;
                        for i in 0..n {
                            let block = jac.block(i, j);
                            for a in 0..d {
                                let fd = (plus[(i, a)] - minus[(i, a)]) / (2.0 * fd_step);
                                let an = block[(a, b)];
                                let err = (an - fd).abs() / an.abs().max(1.0);
                                if err > worst.0 {
                                    worst = (err, (t, h, i, j));
                                }
                            }
                        }
                    }
                }

                for ((i, j), block) in jac.blocks() {
                    let k = if i == j { 4.0 } else { 2.0 };
                    margins.push(BlockMargin {
                        trial: t,
                        head: h,
                        i,
                        j,
                        norm: spectral_norm(block)?,
                        bound: k * n as f64 * b2 * a_norm + 1.0,
                    });
                }
            }
            Ok((worst.0, worst.1, margins))
        })
        .collect::<Result<_>>()?;

    let mut max_err = 0.0;
    let mut worst_block = (0, 0, 0, 0);
    let mut margins = Vec::new();
    for (err, at, m) in per_trial {
        if err > max_err {
            max_err = err;
            worst_block = at;
        }
        margins.extend(m);
    }
    Ok(JacobianCheckReport {
        max_relative_error: max_err,
        worst_block,
        fd_step,
        trials,
        case_bound_margins: margins,
    })
}

/// One `(pooling, ε, σ)` cell of a sweep: the theoretical bound next to the
/// empirical estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub bound: BoundReport,
    pub trials: usize,
    pub mean_distance: f64,
    pub std_error: f64,
    pub exceedance: f64,
    pub max_slope: f64,
    pub seed: u64,
}

/// Runs [`trial_distances`] at every radius and pairs each empirical cell with
/// its [`gamma_bound`]. Rows are ordered by pooling, then `ε`, then `σ`.
pub fn sweep(
    cfg: &ModelConfig,
    specs: &[PoolingSpec],
    eps_grid: &[f64],
    sigma_grid: &[f64],
    trials: usize,
    rng: &RngStream,
) -> Result<Vec<SweepRow>> {
    if specs.is_empty() {
        return Err(Error::config("poolings", "at least one pooling is required"));
    }
    if let Some(s) = specs.iter().find(|s| s.is_learnable()) {
        return Err(Error::Unsupported(format!("sweep needs fixed poolings, got {s}")));
    }
    if eps_grid.is_empty() || eps_grid.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
        return Err(Error::Domain("eps grid must be non-empty and positive".into()));
    }
    if eps_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Domain("eps grid must be strictly increasing".into()));
    }
    check_sigma_grid(sigma_grid)?;

    let poolings: Vec<(PoolingSpec, PoolParams)> = specs.iter().map(|&s| (s, PoolParams::None)).collect();
    // summaries[eps][spec]
    let mut summaries = Vec::with_capacity(eps_grid.len());
    for &eps in eps_grid {
        let per_trial = trial_distances(cfg, &poolings, eps, trials, rng)?;
        let per_spec: Vec<PerturbationRow> = (0..specs.len())
            .map(|k| {
                let dist: Vec<f64> = per_trial.iter().map(|v| v[k]).collect();
                summarize(&dist, eps, sigma_grid)
            })
            .collect();
        summaries.push(per_spec);
    }

    let mut rows = Vec::with_capacity(specs.len() * eps_grid.len() * sigma_grid.len());
    for (k, &spec) in specs.iter().enumerate() {
        for (e, &eps) in eps_grid.iter().enumerate() {
            let summary = &summaries[e][k];
            for (s, &sigma) in sigma_grid.iter().enumerate() {
                rows.push(SweepRow {
                    bound: gamma_bound(cfg, spec, eps, sigma)?,
                    trials,
                    mean_distance: summary.mean_distance,
                    std_error: summary.std_error,
                    exceedance: summary.exceedance[s],
                    max_slope: summary.max_slope,
                    seed: rng.seed(),
                });
            }
        }
    }
    Ok(rows)
}
