//! End-to-end acceptance checks, one function per criterion.

use std::time::Instant;

use expressivity::bounds::{gamma_bound, layer_lipschitz};
use expressivity::empirics::{jacobian_check, trial_distances, PerturbationRow};
use expressivity::linalg::{gaussian_matrix, lambert_w0, softmax_jacobian, spectral_norm, RngStream};
use expressivity::model::{ModelConfig, Variant};
use expressivity::pooling::{pool, pooling_factor, pooling_matrix_norm_check, PoolParams, PoolingSpec};
use expressivity::trainer::{gen_task, train, weight_stats, TaskKind, TrainConfig};

use crate::commands::cmd_sweep;
use crate::config::RunConfig;
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    /// Perturbation pairs per configuration and radius in the soundness check.
    pub soundness_trials: usize,
    /// Multiplies every `C1` in the soundness check. Values below one make
    /// the bound unsound on purpose.
    pub c1_scale: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            soundness_trials: 1000,
            c1_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriterionResult {
    pub id: u32,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

fn timed(
    id: u32,
    name: &'static str,
    f: impl FnOnce() -> Result<(bool, String), CliError>,
) -> Result<CriterionResult, CliError> {
    let start = Instant::now();
    let (passed, detail) = f()?;
    Ok(CriterionResult {
        id,
        name,
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Linear pooling norms equal their factors; max pooling obeys its distance bound.
pub fn pooling_factors(seed: u64) -> Result<(bool, String), CliError> {
    let mut worst_gap = 0.0_f64;
    for spec in [PoolingSpec::Avg, PoolingSpec::Sum, PoolingSpec::Last] {
        for n in [1, 2, 4, 16, 64] {
            let gap = (pooling_matrix_norm_check(spec, n)? - pooling_factor(spec, n, 8)?).abs();
            worst_gap = worst_gap.max(gap);
        }
    }
    let mut rng = RngStream::new(seed, 1);
    let mut max_ratio = 0.0_f64;
    for k in 0..1000 {
        let (n, d) = (1 + k % 16, 1 + (k / 16) % 12);
        let z = gaussian_matrix(n, d, &mut rng);
        let w = z.add(&gaussian_matrix(n, d, &mut rng).scale(0.1));
        let lhs =
            pool(&z, PoolingSpec::Max, &PoolParams::None)?.distance(&pool(&w, PoolingSpec::Max, &PoolParams::None)?);
        let rhs = pooling_factor(PoolingSpec::Max, n, d)? * spectral_norm(&z.sub(&w))?;
        max_ratio = max_ratio.max(lhs / rhs);
    }
    Ok((
        worst_gap <= 1e-12 && max_ratio <= 1.0 + 1e-12,
        format!(
            "norm gap {worst_gap:e}, max-pool ratio {max_ratio:.6} (excess {:e})",
            max_ratio - 1.0
        ),
    ))
}

/// Softmax Jacobian operator norm at most 2 on random simplex points.
pub fn softmax_jacobian_bound(seed: u64) -> Result<(bool, String), CliError> {
    let mut rng = RngStream::new(seed, 2);
    let mut worst = 0.0_f64;
    for k in 0..1000 {
        let dim = 2 + k % 63;
        // Normalised exponentials are uniform on the simplex.
        let e: Vec<f64> = (0..dim).map(|_| -rng.uniform(f64::MIN_POSITIVE, 1.0).ln()).collect();
        let total: f64 = e.iter().sum();
        let p: Vec<f64> = e.iter().map(|v| v / total).collect();
        worst = worst.max(spectral_norm(&softmax_jacobian(&p)?)?);
    }
    Ok((worst <= 2.0 + 1e-9, format!("max norm {worst:.6}")))
}

/// Analytic attention Jacobian agrees with central differences, and every
/// block sits below its case bound.
pub fn jacobian_fd(seed: u64) -> Result<(bool, String), CliError> {
    let mut max_err = 0.0_f64;
    let mut min_margin = f64::INFINITY;
    for k in 0..20u64 {
        let n = 2 + (k % 5) as usize;
        let d = [4, 6, 8][(k % 3) as usize];
        let heads = 1 + (k % 2) as usize;
        let cfg = ModelConfig::gaussian(n, d, heads, 1.0, Variant::DotProduct, 1, None, seed.wrapping_add(k))?;
        let r = jacobian_check(&cfg, 1, 1e-5, &RngStream::new(seed, 100 + k))?;
        max_err = max_err.max(r.max_relative_error);
        min_margin = min_margin.min(r.min_margin());
    }
    Ok((
        max_err <= 1e-4 && min_margin >= 0.0,
        format!("max relative error {max_err:e}, min margin {min_margin:.4}"),
    ))
}

/// Outcome of the shared perturbation run behind the soundness, tie and
/// Markov criteria.
#[derive(Debug, Clone, PartialEq)]
pub struct SoundnessRun {
    /// Worst `slope / bound` over every configuration, pooling and radius.
    pub worst_ratio: f64,
    pub worst_case: String,
    /// Largest `|sum − n·avg|` over every trial.
    pub max_tie_gap: f64,
    pub markov_cells: usize,
    pub markov_violations: usize,
}

pub const SOUNDNESS_EPS: [f64; 3] = [1e-3, 1e-2, 1e-1];
const MARKOV_SIGMAS: [f64; 5] = [1e-4, 1e-3, 1e-2, 1e-1, 1.0];

/// The twelve soundness configurations: every variant, one and two layers,
/// two weight seeds.
pub fn soundness_configs(seed: u64) -> Result<Vec<ModelConfig>, CliError> {
    let mut out = Vec::with_capacity(12);
    for variant in Variant::ALL {
        for layers in [1, 2] {
            for s in 0..2 {
                let scsa = (variant == Variant::Scsa).then(Default::default);
                out.push(ModelConfig::gaussian(
                    8,
                    8,
                    2,
                    1.0,
                    variant,
                    layers,
                    scsa,
                    seed.wrapping_add(s),
                )?);
            }
        }
    }
    Ok(out)
}

pub fn soundness_run(seed: u64, opts: &VerifyOptions) -> Result<SoundnessRun, CliError> {
    let specs: Vec<(PoolingSpec, PoolParams)> = PoolingSpec::FIXED.iter().map(|&s| (s, PoolParams::None)).collect();
    let avg = specs
        .iter()
        .position(|(s, _)| *s == PoolingSpec::Avg)
        .expect("avg is fixed");
    let sum = specs
        .iter()
        .position(|(s, _)| *s == PoolingSpec::Sum)
        .expect("sum is fixed");
    let mut run = SoundnessRun {
        worst_ratio: 0.0,
        worst_case: String::new(),
        max_tie_gap: 0.0,
        markov_cells: 0,
        markov_violations: 0,
    };
    for (c, cfg) in soundness_configs(seed)?.iter().enumerate() {
        let report = gamma_bound(cfg, PoolingSpec::Last, 1.0, 1.0)?;
        let backbone_bound: f64 = report
            .c1_per_layer
            .iter()
            .zip(&report.c2_per_layer)
            .map(|(c1, c2)| report.ln_factor * opts.c1_scale * c1 * c2)
            .product();
        let n = cfg.n() as f64;
        for (e, &eps) in SOUNDNESS_EPS.iter().enumerate() {
            let rng = RngStream::new(seed, 1000 + (c * SOUNDNESS_EPS.len() + e) as u64);
            let per_trial = trial_distances(cfg, &specs, eps, opts.soundness_trials, &rng)?;
            for row in &per_trial {
                let gap = (row[sum] - n * row[avg]).abs() / row[sum].max(1.0);
                run.max_tie_gap = run.max_tie_gap.max(gap);
            }
            for (k, (spec, _)) in specs.iter().enumerate() {
                let dist: Vec<f64> = per_trial.iter().map(|r| r[k]).collect();
                let summary = PerturbationRow::from_distances(&dist, eps, &MARKOV_SIGMAS);
                let bound = pooling_factor(*spec, cfg.n(), cfg.d())? * backbone_bound;
                let ratio = summary.max_slope / bound;
                if ratio > run.worst_ratio {
                    run.worst_ratio = ratio;
                    run.worst_case = format!("{} L={} {spec} eps={eps}", cfg.variant(), cfg.num_layers());
                }
                for (&sigma, &frac) in MARKOV_SIGMAS.iter().zip(&summary.exceedance) {
                    run.markov_cells += 1;
                    if frac > summary.mean_distance / sigma {
                        run.markov_violations += 1;
                    }
                }
            }
        }
    }
    Ok(run)
}

/// `γ` of a three-layer model is the product of its per-layer factors.
pub fn multilayer_composition(seed: u64) -> Result<(bool, String), CliError> {
    let mut worst = 0.0_f64;
    for variant in Variant::ALL {
        let scsa = (variant == Variant::Scsa).then(Default::default);
        let cfg = ModelConfig::gaussian(8, 8, 2, 1.0, variant, 3, scsa, seed)?;
        for spec in PoolingSpec::FIXED {
            let (eps, sigma) = (0.01, 0.1);
            let r = gamma_bound(&cfg, spec, eps, sigma)?;
            let mut product = 1.0;
            for layer in cfg.layers() {
                product *= layer_lipschitz(layer, &cfg)?;
            }
            let want = eps / sigma * pooling_factor(spec, cfg.n(), cfg.d())? * product;
            worst = worst.max((r.gamma - want).abs() / want);
        }
    }
    Ok((worst <= 1e-12, format!("max relative gap {worst:e}")))
}

pub fn lambert_residuals() -> Result<(bool, String), CliError> {
    let mut xs: Vec<f64> = (0..30).map(|i| 10f64.powf(-6.0 + 12.0 * i as f64 / 29.0)).collect();
    xs.extend([2.0, 64.0, 1024.0].map(|n| n / std::f64::consts::E));
    let mut worst = 0.0_f64;
    for x in xs {
        let w = lambert_w0(x)?;
        worst = worst.max((w * w.exp() - x).abs() / x.max(1.0));
    }
    Ok((worst <= 1e-10, format!("max scaled residual {worst:e}")))
}

/// Sequence length, width and sample count of the weight-geometry check.
pub const GEOMETRY_SHAPE: (usize, usize, usize) = (16, 8, 512);

/// Weighted-average pooling learns the task's positional signature.
pub fn weight_geometry(seed: u64) -> Result<(bool, String), CliError> {
    let (n, d, samples) = GEOMETRY_SHAPE;
    let bound = (d as f64).sqrt();
    let cfg = ModelConfig::zeros(n, d, 2, bound, Variant::DotProduct, 1, None)?;
    let tc = TrainConfig {
        epochs: 2000,
        seed,
        ..TrainConfig::default()
    };
    let stats = |kind| -> Result<_, CliError> {
        let task = gen_task(kind, n, d, bound, samples, &mut RngStream::new(seed, 3))?;
        let head = train(&cfg, PoolingSpec::WeightedAvg, &task, &tc)?;
        Ok(weight_stats(&head.pool_params, PoolingSpec::WeightedAvg)?)
    };
    let last = stats(TaskKind::LastToken)?;
    let global = stats(TaskKind::GlobalMean)?;
    let entropy_floor = 0.9 * (n as f64).ln();
    Ok((
        last.last_mass > 0.9 && global.entropy >= entropy_floor,
        format!(
            "last-token mass {:.4} (> 0.9), global-mean entropy {:.4} (>= {entropy_floor:.4})",
            last.last_mass, global.entropy
        ),
    ))
}

/// Sweep CSV is byte-identical across reruns and thread counts.
pub fn sweep_determinism(seed: u64) -> Result<(bool, String), CliError> {
    let mut cfg = RunConfig {
        seed,
        ..RunConfig::default()
    };
    cfg.experiment.trials = 200;
    cfg.experiment.sigma = vec![0.01, 0.1];
    let parallel = cmd_sweep(&cfg)?.files;
    let again = cmd_sweep(&cfg)?.files;
    cfg.experiment.parallel = false;
    let serial = cmd_sweep(&cfg)?.files;
    let same = parallel == again && parallel == serial;
    Ok((same, format!("{} bytes, 3 runs", parallel[0].1.len())))
}

pub fn run_all(cfg: &RunConfig, opts: &VerifyOptions) -> Result<Vec<CriterionResult>, CliError> {
    let seed = cfg.seed;
    let mut out = vec![
        timed(1, "pooling factor exactness", || pooling_factors(seed))?,
        timed(2, "softmax jacobian bound", || softmax_jacobian_bound(seed))?,
        timed(3, "analytic vs finite-difference jacobian", || jacobian_fd(seed))?,
    ];

    let start = Instant::now();
    let run = soundness_run(seed, opts)?;
    let shared = start.elapsed().as_secs_f64();
    out.push(CriterionResult {
        id: 4,
        name: "bound soundness",
        passed: run.worst_ratio < 1.0,
        detail: format!("worst slope/bound {:.4} at {}", run.worst_ratio, run.worst_case),
        seconds: shared,
    });
    out.push(CriterionResult {
        id: 5,
        name: "sum = n x avg tie",
        passed: run.max_tie_gap <= 1e-12,
        detail: format!("max gap {:e}", run.max_tie_gap),
        seconds: 0.0,
    });
    out.push(CriterionResult {
        id: 6,
        name: "markov consistency",
        passed: run.markov_violations == 0,
        detail: format!("{} violations in {} cells", run.markov_violations, run.markov_cells),
        seconds: 0.0,
    });

    out.push(timed(7, "multi-layer composition", || multilayer_composition(seed))?);
    out.push(timed(8, "lambert w residuals", lambert_residuals)?);
    out.push(timed(9, "weight geometry", || weight_geometry(seed))?);
    out.push(timed(10, "sweep determinism", || sweep_determinism(seed))?);
    Ok(out)
}

pub fn render_table(results: &[CriterionResult]) -> String {
    let mut s = String::new();
    for r in results {
        s.push_str(&format!(
            "[{}] {:>2} {:<40} {:>8.2}s  {}\n",
            if r.passed { "PASS" } else { "FAIL" },
            r.id,
            r.name,
            r.seconds,
            r.detail
        ));
    }
    s
}
