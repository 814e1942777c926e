//! Acceptance checks: one PASS/FAIL line per criterion.

use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rgsmc_cli::config::LoadedConfig;
use rgsmc_cli::report::aggregate;
use rgsmc_cli::run::execute;
use rgsmc_cli::suite::{self, Check, Regime, SuiteResult};

type Criterion = (&'static str, Box<dyn FnOnce() -> Outcome>);

struct Outcome {
    passed: bool,
    detail: String,
}

fn summarize(result: SuiteResult, budget: Duration, elapsed: Duration) -> Outcome {
    let checks = match result {
        Ok(c) => c,
        Err(e) => {
            return Outcome {
                passed: false,
                detail: format!("error: {e}"),
            }
        }
    };
    let failed: Vec<&Check> = checks.iter().filter(|c| !c.passed).collect();
    // The check closest to its tolerance, as a ratio.
    let tightest = checks
        .iter()
        .filter(|c| c.tolerance > 0.0)
        .max_by(|a, b| (a.measured / a.tolerance).total_cmp(&(b.measured / b.tolerance)));
    let mut detail = format!("{} checks, {} failed", checks.len(), failed.len());
    if let Some(c) = tightest {
        detail.push_str(&format!(
            "; tightest {:.4e} vs {:.4e} ({})",
            c.measured, c.tolerance, c.name
        ));
    }
    for c in failed.iter().take(3) {
        detail.push_str(&format!(
            "; FAILED {:.4e} vs {:.4e} ({})",
            c.measured, c.tolerance, c.name
        ));
    }
    let in_time = elapsed <= budget;
    if !in_time {
        detail.push_str(&format!("; over time budget {}s", budget.as_secs()));
    }
    Outcome {
        passed: failed.is_empty() && !checks.is_empty() && in_time,
        detail,
    }
}

fn timed(budget_secs: u64, f: impl FnOnce() -> SuiteResult) -> Outcome {
    let start = Instant::now();
    let result = f();
    summarize(result, Duration::from_secs(budget_secs), start.elapsed())
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn oracle_equivalence() -> Outcome {
    timed(120, || {
        let mut c = suite::oracle_equivalence(8192, 20, 0.03, Regime::Adaptive)?;
        c.extend(suite::oracle_equivalence(8192, 20, 0.03, Regime::EveryBlock)?);
        Ok(c)
    })
}

fn mh_invariance() -> Outcome {
    let start = Instant::now();
    let honest = suite::mh_invariance(100_000, false);
    let tampered = suite::mh_invariance(100_000, true);
    let mut outcome = summarize(honest, Duration::from_secs(600), start.elapsed());
    match tampered {
        Ok(checks) => {
            let caught = checks.iter().filter(|c| !c.passed).count();
            outcome
                .detail
                .push_str(&format!("; inverted lookahead ratio fails {caught} checks"));
            outcome.passed &= caught > 0;
        }
        Err(e) => {
            outcome.passed = false;
            outcome.detail.push_str(&format!("; tampered run errored: {e}"));
        }
    }
    outcome
}

fn compute_sweep() -> Outcome {
    let start = Instant::now();
    let run = |name: &str| -> Result<Vec<(f64, f64)>, String> {
        let loaded = LoadedConfig::load(&configs_dir().join(name)).map_err(|e| e.to_string())?;
        let results = execute(&loaded).map_err(|e| e.to_string())?;
        Ok(aggregate(&results.rows)
            .into_iter()
            .map(|r| (r.sweep_value.unwrap_or(f64::NAN), r.mean_quality))
            .collect())
    };
    let (full, prefix) = match (run("constraint-full.json"), run("constraint-prefix.json")) {
        (Ok(f), Ok(p)) => (f, p),
        (Err(e), _) | (_, Err(e)) => {
            return Outcome {
                passed: false,
                detail: format!("error: {e}"),
            }
        }
    };
    let values: Vec<f64> = full.iter().map(|p| p.0).collect();
    let expected = [2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0];
    let monotone = full.windows(2).all(|w| w[1].1 >= w[0].1);
    let at = |points: &[(f64, f64)], n: f64| points.iter().find(|p| p.0 == n).map(|p| p.1);
    let margin = match (at(&full, 16.0), at(&prefix, 16.0)) {
        (Some(f), Some(p)) => f - p,
        _ => f64::NAN,
    };
    let elapsed = start.elapsed();
    let means = |points: &[(f64, f64)]| {
        points
            .iter()
            .map(|p| format!("{:.2}", p.1))
            .collect::<Vec<_>>()
            .join(" ")
    };
    Outcome {
        passed: values == expected && monotone && margin >= 0.05 && elapsed <= Duration::from_secs(600),
        detail: format!(
            "full [{}] nondecreasing={monotone}; prefix-no-MH [{}]; N=16 margin {margin:.2} (≥ 0.05); {:.1}s",
            means(&full),
            means(&prefix),
            elapsed.as_secs_f64()
        ),
    }
}

fn determinism() -> Outcome {
    let tmp = match tempfile::TempDir::new() {
        Ok(t) => t,
        Err(e) => {
            return Outcome {
                passed: false,
                detail: e.to_string(),
            }
        }
    };
    let mut detail = Vec::new();
    let mut passed = true;
    for config in ["constraint-full.json", "reward-free.json"] {
        let mut outputs = Vec::new();
        for (i, workers) in ["1", "4", "4"].iter().enumerate() {
            let out = tmp.path().join(format!("{config}-{i}"));
            let status = Command::new(env!("CARGO_BIN_EXE_rgsmc"))
                .env("RGSMC_WORKERS", workers)
                .args(["run", "--seed", "17", "--config"])
                .arg(configs_dir().join(config))
                .arg("--out")
                .arg(&out)
                .output();
            match status {
                Ok(o) if o.status.success() => outputs.push(std::fs::read(out.join("summary.csv")).unwrap_or_default()),
                Ok(o) => {
                    passed = false;
                    detail.push(format!("{config}: exit {:?}", o.status.code()));
                }
                Err(e) => {
                    passed = false;
                    detail.push(format!("{config}: {e}"));
                }
            }
        }
        let identical = outputs.len() == 3 && !outputs[0].is_empty() && outputs.windows(2).all(|w| w[0] == w[1]);
        passed &= identical;
        detail.push(format!(
            "{config}: {} bytes, identical across 1/4/4 workers = {identical}",
            outputs.first().map_or(0, Vec::len)
        ));
    }
    Outcome {
        passed,
        detail: detail.join("; "),
    }
}

fn main() -> ExitCode {
    // The libtest protocol is not spoken here; honour `--list` so tooling
    // that enumerates tests does not run the whole suite.
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let criteria: Vec<Criterion> = vec![
        (
            "oracle equivalence (TV < 0.03, N = 8192, 20 seeds)",
            Box::new(oracle_equivalence),
        ),
        (
            "MSE identity (1e-9 relative)",
            Box::new(|| timed(600, || suite::mse_identity(1e-9))),
        ),
        (
            "exact marginals (1e-9)",
            Box::new(|| timed(600, || suite::exact_marginals(1e-9))),
        ),
        (
            "lookahead estimator unbiasedness (4σ, 1e5 draws)",
            Box::new(|| timed(180, || suite::estimator_unbiasedness(10, 100_000, 4.0))),
        ),
        ("MH invariance (χ² 99%)", Box::new(mh_invariance)),
        (
            "normalizer unbiasedness (4σ, 1e3 runs)",
            Box::new(|| timed(600, || suite::normalizer_unbiasedness(1000, 8, 4.0))),
        ),
        (
            "reductions (TV < 0.02, bitwise Ψ)",
            Box::new(|| timed(600, || suite::reductions(8192, 0.02))),
        ),
        ("compute sweep on the constraint task", Box::new(compute_sweep)),
        ("determinism across worker counts", Box::new(determinism)),
    ];
    let mut all = true;
    for (i, (name, check)) in criteria.into_iter().enumerate() {
        let outcome = check();
        all &= outcome.passed;
        println!(
            "{} criterion {}: {name} — {}",
            if outcome.passed { "PASS" } else { "FAIL" },
            i + 1,
            outcome.detail
        );
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
