//! Subcommand bodies. Each validates the whole configuration first, then
//! computes, and returns its CSV files in memory; nothing is written on a
//! configuration error.

use expressivity::bounds::gamma_bound;
use expressivity::empirics::{jacobian_check, sweep};
use expressivity::linalg::RngStream;
use expressivity::trainer::{gen_task, train, weight_stats};

use crate::config::RunConfig;
use crate::report::{self, BOUND_HEADER, JACOBIAN_HEADER, SWEEP_EXTRA, WEIGHT_STATS_HEADER};
use crate::verify::{self, VerifyOptions};
use crate::CliError;

/// CSV files produced by a command, plus whether its checks passed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommandOutput {
    /// `(file name, contents)`; the first file goes to stdout when no output
    /// directory is set.
    pub files: Vec<(String, String)>,
    pub passed: bool,
    /// Human-readable summary for stderr.
    pub summary: String,
}

impl CommandOutput {
    fn ok(name: &str, csv: String) -> Self {
        CommandOutput {
            files: vec![(name.into(), csv)],
            passed: true,
            summary: String::new(),
        }
    }
}

/// Runs `f` on a single thread when the config disables trial parallelism.
fn with_parallelism<T: Send>(cfg: &RunConfig, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    if cfg.experiment.parallel {
        Ok(f())
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .map_err(|e| CliError::Output(e.to_string()))?;
        Ok(pool.install(f))
    }
}

pub fn cmd_bound(cfg: &RunConfig) -> Result<CommandOutput, CliError> {
    let model = cfg.model()?;
    let specs = cfg.fixed_poolings()?;
    let eps = cfg.eps_grid()?;
    let sigma = cfg.sigma_grid()?;

    let mut rows = Vec::with_capacity(specs.len() * eps.len() * sigma.len());
    for &spec in &specs {
        for &e in eps {
            for &s in sigma {
                rows.push(report::bound_record(&gamma_bound(&model, spec, e, s)?));
            }
        }
    }
    Ok(CommandOutput::ok("bound.csv", report::to_csv(&BOUND_HEADER, &rows)?))
}

pub fn sweep_header() -> Vec<&'static str> {
    BOUND_HEADER.iter().chain(SWEEP_EXTRA.iter()).copied().collect()
}

pub fn cmd_sweep(cfg: &RunConfig) -> Result<CommandOutput, CliError> {
    let model = cfg.model()?;
    let specs = cfg.fixed_poolings()?;
    let eps = cfg.eps_grid()?;
    let sigma = cfg.sigma_grid()?;
    let trials = cfg.trials()?;

    let rng = RngStream::new(cfg.seed, 0);
    let rows = with_parallelism(cfg, || sweep(&model, &specs, eps, sigma, trials, &rng))??;
    let records: Vec<Vec<String>> = rows.iter().map(report::sweep_record).collect();
    let mut out = CommandOutput::ok("sweep.csv", report::to_csv(&sweep_header(), &records)?);
    let violations = rows
        .iter()
        .filter(|r| r.max_slope >= r.bound.pooled_lipschitz())
        .count();
    if violations > 0 {
        out.passed = false;
        out.summary = format!("{violations} rows have an empirical slope at or above the bound");
    }
    Ok(out)
}

/// Relative-error tolerance of the Jacobian check.
pub const JACOBIAN_TOLERANCE: f64 = 1e-4;

pub fn cmd_jacobian_check(cfg: &RunConfig) -> Result<CommandOutput, CliError> {
    let model = cfg.model()?;
    let trials = cfg.trials()?;
    let fd_step = cfg.fd_step()?;

    let rng = RngStream::new(cfg.seed, 0);
    let r = with_parallelism(cfg, || jacobian_check(&model, trials, fd_step, &rng))??;
    let record = report::jacobian_record(&r, model.n(), model.d(), model.num_heads(), model.bound());
    let mut out = CommandOutput::ok("jacobian.csv", report::to_csv(&JACOBIAN_HEADER, &[record])?);
    out.passed = r.passes(JACOBIAN_TOLERANCE);
    out.summary = format!(
        "max relative error {:e} (tolerance {JACOBIAN_TOLERANCE:e}), min case margin {:e}",
        r.max_relative_error,
        r.min_margin()
    );
    Ok(out)
}

pub fn cmd_train_pool(cfg: &RunConfig) -> Result<CommandOutput, CliError> {
    let model = cfg.training_model()?;
    let spec = cfg.learnable_pooling()?;
    let kind = cfg.task()?;
    let tc = cfg.train_config()?;

    let mut rng = RngStream::new(cfg.seed, 0);
    let task = gen_task(
        kind,
        model.n(),
        model.d(),
        model.bound(),
        cfg.training.samples,
        &mut rng,
    )?;
    let head = train(&model, spec, &task, &tc)?;

    let mut files = Vec::new();
    let mut summary = format!("final loss {:e}", head.final_loss());
    if let Ok(stats) = weight_stats(&head.pool_params, spec) {
        let rec = report::weight_stats_record(kind.name(), spec.name(), model.n(), task.inputs.len(), &head, &stats);
        files.push((
            "train_weights.csv".into(),
            report::to_csv(&WEIGHT_STATS_HEADER, &[rec])?,
        ));
        summary.push_str(&format!(
            ", entropy {:.4}, last mass {:.4}, argmax {}",
            stats.entropy, stats.last_mass, stats.argmax_index
        ));
    }
    files.push((
        "train_loss.csv".into(),
        report::to_csv(&["epoch", "loss"], &report::loss_curve_rows(&head))?,
    ));
    Ok(CommandOutput {
        files,
        passed: true,
        summary,
    })
}

pub fn cmd_verify(cfg: &RunConfig, opts: &VerifyOptions) -> Result<CommandOutput, CliError> {
    let results = verify::run_all(cfg, opts)?;
    let table = verify::render_table(&results);
    let failed: Vec<String> = results.iter().filter(|r| !r.passed).map(|r| r.id.to_string()).collect();
    let rows: Vec<Vec<String>> = results
        .iter()
        .map(|r| {
            vec![
                r.id.to_string(),
                r.name.to_string(),
                if r.passed { "pass" } else { "fail" }.to_string(),
                r.detail.clone(),
                report::fmt_f64(r.seconds),
            ]
        })
        .collect();
    let csv = report::to_csv(&["criterion", "name", "status", "detail", "seconds"], &rows)?;
    Ok(CommandOutput {
        files: vec![("verify.csv".into(), csv)],
        passed: failed.is_empty(),
        summary: if failed.is_empty() {
            table
        } else {
            format!("{table}failed criteria: {}\n", failed.join(", "))
        },
    })
}
