//! CSV emission. Floats use Rust's shortest round-trip formatting, so
//! identical values always produce identical bytes.

use expressivity::bounds::BoundReport;
use expressivity::empirics::{JacobianCheckReport, SweepRow};
use expressivity::trainer::{TrainedHead, WeightStats};

use crate::CliError;

pub const BOUND_HEADER: [&str; 16] = [
    "variant",
    "pooling",
    "n",
    "d",
    "H",
    "B",
    "L",
    "eps",
    "sigma",
    "c1",
    "c2",
    "ln_factor",
    "pool_factor",
    "lipschitz_total",
    "gamma",
    "vacuous_flag",
];

pub const SWEEP_EXTRA: [&str; 5] = ["trials", "mean_distance", "exceedance", "max_slope", "seed"];

pub const JACOBIAN_HEADER: [&str; 12] = [
    "n",
    "d",
    "H",
    "B",
    "trials",
    "fd_step",
    "max_relative_error",
    "worst_trial",
    "worst_head",
    "worst_i",
    "worst_j",
    "min_margin",
];

pub const WEIGHT_STATS_HEADER: [&str; 9] = [
    "task",
    "pooling",
    "n",
    "samples",
    "final_loss",
    "entropy",
    "argmax_index",
    "max_weight",
    "last_mass",
];

pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

/// Per-layer values joined by `;`.
fn fmt_list(xs: &[f64]) -> String {
    xs.iter().map(|&x| fmt_f64(x)).collect::<Vec<_>>().join(";")
}

pub fn bound_record(r: &BoundReport) -> Vec<String> {
    vec![
        r.variant.to_string(),
        r.pooling.to_string(),
        r.n.to_string(),
        r.d.to_string(),
        r.num_heads.to_string(),
        fmt_f64(r.bound),
        r.num_layers().to_string(),
        fmt_f64(r.eps),
        fmt_f64(r.sigma),
        fmt_list(&r.c1_per_layer),
        fmt_list(&r.c2_per_layer),
        fmt_f64(r.ln_factor),
        fmt_f64(r.pool_factor),
        fmt_f64(r.lipschitz_total),
        fmt_f64(r.gamma),
        r.is_vacuous().to_string(),
    ]
}

pub fn sweep_record(row: &SweepRow) -> Vec<String> {
    let mut rec = bound_record(&row.bound);
    rec.extend([
        row.trials.to_string(),
        fmt_f64(row.mean_distance),
        fmt_f64(row.exceedance),
        fmt_f64(row.max_slope),
        row.seed.to_string(),
    ]);
    rec
}

pub fn jacobian_record(r: &JacobianCheckReport, n: usize, d: usize, heads: usize, bound: f64) -> Vec<String> {
    let (t, h, i, j) = r.worst_block;
    vec![
        n.to_string(),
        d.to_string(),
        heads.to_string(),
        fmt_f64(bound),
        r.trials.to_string(),
        fmt_f64(r.fd_step),
        fmt_f64(r.max_relative_error),
        t.to_string(),
        h.to_string(),
        i.to_string(),
        j.to_string(),
        fmt_f64(r.min_margin()),
    ]
}

pub fn loss_curve_rows(head: &TrainedHead) -> Vec<Vec<String>> {
    head.loss_curve
        .iter()
        .enumerate()
        .map(|(epoch, &loss)| vec![epoch.to_string(), fmt_f64(loss)])
        .collect()
}

pub fn weight_stats_record(
    task: &str,
    pooling: &str,
    n: usize,
    samples: usize,
    head: &TrainedHead,
    s: &WeightStats,
) -> Vec<String> {
    vec![
        task.to_string(),
        pooling.to_string(),
        n.to_string(),
        samples.to_string(),
        fmt_f64(head.final_loss()),
        fmt_f64(s.entropy),
        s.argmax_index.to_string(),
        fmt_f64(s.max_weight),
        fmt_f64(s.last_mass),
    ]
}

/// Renders a header and rows as CSV text.
pub fn to_csv<H: AsRef<str>>(header: &[H], rows: &[Vec<String>]) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Output(e.to_string());
    w.write_record(header.iter().map(|h| h.as_ref())).map_err(csv_err)?;
    for row in rows {
        w.write_record(row).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Output(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::Output(e.to_string()))
}
