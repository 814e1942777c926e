use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use rgsmc_cli::report::{cmd_report, ReportFormat};
use rgsmc_cli::run::cmd_run;
use rgsmc_cli::suite::{render_table, suites, SuiteOptions};
use rgsmc_cli::{CliError, WORKERS_ENV};

#[derive(Parser)]
#[command(
    name = "rgsmc",
    version,
    about = "Reward-guided sequential Monte Carlo over tabular language models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every sweep point and replication of a config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; defaults to the config's `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check sampler invariants against exact enumeration.
    Verify {
        /// Only run suites whose name contains this string.
        #[arg(long)]
        filter: Option<String>,
        #[arg(long, hide = true)]
        tamper_mh: bool,
    },
    /// Aggregate run directories into per-sweep-point statistics.
    Report {
        dir: PathBuf,
        #[arg(long, value_enum, default_value_t = ReportFormat::Csv)]
        format: ReportFormat,
    },
}

fn init_workers() -> Result<(), CliError> {
    let Ok(value) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config {
            path: WORKERS_ENV.into(),
            message: format!("expected a positive integer, got `{value}`"),
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Runtime(e.to_string()))
}

fn verify(filter: Option<&str>, options: SuiteOptions) -> Result<bool, CliError> {
    let selected: Vec<_> = suites()
        .into_iter()
        .filter(|s| filter.is_none_or(|f| s.name.contains(f)))
        .collect();
    if selected.is_empty() {
        return Err(CliError::Config {
            path: "--filter".into(),
            message: format!("no suite matches `{}`", filter.unwrap_or_default()),
        });
    }
    let mut all = Vec::new();
    for suite in selected {
        let start = Instant::now();
        let checks = (suite.run)(&options)?;
        let failed = checks.iter().filter(|c| !c.passed).count();
        eprintln!(
            "{}: {} checks, {failed} failed ({:.1}s)",
            suite.name,
            checks.len(),
            start.elapsed().as_secs_f64()
        );
        all.extend(checks);
    }
    print!("{}", render_table(&all));
    let failed = all.iter().filter(|c| !c.passed).count();
    println!("{} checks, {failed} failed", all.len());
    Ok(failed == 0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = init_workers().and_then(|()| match cli.command {
        Command::Run { config, seed, out } => cmd_run(&config, seed, out.as_deref()).map(|dir| {
            println!("{}", dir.display());
            true
        }),
        Command::Verify { filter, tamper_mh } => verify(filter.as_deref(), SuiteOptions { tamper_mh }),
        Command::Report { dir, format } => cmd_report(&dir, format).map(|report| {
            for r in &report.rows {
                let point = match r.sweep_value {
                    Some(v) => format!("{}={v}", r.sweep_axis),
                    None => "no sweep".into(),
                };
                println!(
                    "{}\t{}\truns={}\tquality={:.4}±{:.4}\ttokens={:.1}{}",
                    r.label,
                    point,
                    r.runs,
                    r.mean_quality,
                    r.ci95_quality,
                    r.mean_tokens,
                    if r.duplicate_seeds > 0 {
                        format!("\tduplicate seeds: {}", r.duplicate_seeds)
                    } else {
                        String::new()
                    }
                );
            }
            for w in &report.written {
                eprintln!("wrote {}", w.display());
            }
            true
        }),
    });
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
