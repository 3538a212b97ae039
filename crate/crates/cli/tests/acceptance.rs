//! Acceptance run: every criterion at its stated tolerance and time limit,
//! one line each. Runs without the libtest harness so the table always
//! prints; exits non-zero if any criterion fails.

use std::process::Command;
use std::time::{Duration, Instant};

use expressivity_cli::verify::{self, VerifyOptions};
use expressivity_cli::CliError;

const SEED: u64 = 0;

struct Line {
    id: u32,
    name: &'static str,
    passed: bool,
    detail: String,
}

fn check(
    id: u32,
    name: &'static str,
    limit: Option<Duration>,
    f: impl FnOnce() -> Result<(bool, String), CliError>,
) -> Line {
    let start = Instant::now();
    let outcome = f();
    let elapsed = start.elapsed();
    let (passed, mut detail) = match outcome {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    let in_time = limit.is_none_or(|l| elapsed < l);
    detail.push_str(&format!("; {:.2}s", elapsed.as_secs_f64()));
    if let Some(l) = limit {
        detail.push_str(&format!(" (limit {}s)", l.as_secs()));
    }
    Line {
        id,
        name,
        passed: passed && in_time,
        detail,
    }
}

fn end_to_end() -> Result<(bool, String), CliError> {
    let bin = env!("CARGO_BIN_EXE_expressivity");
    let start = Instant::now();
    let clean = Command::new(bin)
        .arg("verify")
        .output()
        .map_err(|e| CliError::Output(e.to_string()))?;
    let clean_secs = start.elapsed().as_secs_f64();
    let control = Command::new(bin)
        .args(["verify", "--inject-c1-scale", "0.01"])
        .output()
        .map_err(|e| CliError::Output(e.to_string()))?;
    let (clean_code, control_code) = (clean.status.code(), control.status.code());
    Ok((
        clean_code == Some(0) && clean_secs < 300.0 && control_code == Some(1),
        format!("verify exit {clean_code:?} in {clean_secs:.2}s, negative control exit {control_code:?}"),
    ))
}

fn main() {
    let opts = VerifyOptions::default();
    let secs = Duration::from_secs;
    let mut lines = vec![
        check(1, "pooling factor exactness", Some(secs(1)), || {
            verify::pooling_factors(SEED)
        }),
        check(2, "softmax jacobian bound", Some(secs(2)), || {
            verify::softmax_jacobian_bound(SEED)
        }),
        check(3, "analytic vs finite-difference jacobian", Some(secs(30)), || {
            verify::jacobian_fd(SEED)
        }),
    ];

    // Criteria 4 to 6 share one perturbation run.
    let start = Instant::now();
    let run = verify::soundness_run(SEED, &opts);
    let in_time = start.elapsed() < secs(180);
    let elapsed = start.elapsed().as_secs_f64();
    match run {
        Ok(run) => {
            lines.push(Line {
                id: 4,
                name: "bound soundness",
                passed: run.worst_ratio < 1.0 && in_time,
                detail: format!(
                    "worst slope/bound {:.4} at {}; {elapsed:.2}s (limit 180s)",
                    run.worst_ratio, run.worst_case
                ),
            });
            lines.push(Line {
                id: 5,
                name: "sum = n x avg tie",
                passed: run.max_tie_gap <= 1e-12,
                detail: format!("max gap {:e}", run.max_tie_gap),
            });
            lines.push(Line {
                id: 6,
                name: "markov consistency",
                passed: run.markov_violations == 0,
                detail: format!("{} violations in {} cells", run.markov_violations, run.markov_cells),
            });
        }
        Err(e) => {
            for (id, name) in [
                (4, "bound soundness"),
                (5, "sum = n x avg tie"),
                (6, "markov consistency"),
            ] {
                lines.push(Line {
                    id,
                    name,
                    passed: false,
                    detail: format!("error: {e}"),
                });
            }
        }
    }

    lines.push(check(7, "multi-layer composition", None, || {
        verify::multilayer_composition(SEED)
    }));
    lines.push(check(8, "lambert w residuals", None, verify::lambert_residuals));
    lines.push(check(9, "weight geometry", Some(secs(60)), || {
        verify::weight_geometry(SEED)
    }));
    lines.push(check(10, "sweep determinism", None, || verify::sweep_determinism(SEED)));
    lines.push(check(11, "end-to-end verify", Some(secs(300)), end_to_end));

    println!("acceptance: {} criteria", lines.len());
    for l in &lines {
        println!(
            "criterion {:>2} {:<40} {}  {}",
            l.id,
            l.name,
            if l.passed { "PASS" } else { "FAIL" },
            l.detail
        );
    }
    let failed = lines.iter().filter(|l| !l.passed).count();
    println!("acceptance: {} passed, {failed} failed", lines.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
