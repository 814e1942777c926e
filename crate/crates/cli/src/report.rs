//! `report`: aggregates run directories into per-sweep-point statistics and
//! quality-versus-tokens plot data.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::CliError;
use crate::run::{write_atomic, Manifest, SummaryRow, MANIFEST_FILE, SUMMARY_FILE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum ReportFormat {
    #[default]
    Csv,
    Jsonl,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub label: String,
    pub sweep_axis: String,
    pub sweep_value: Option<f64>,
    pub runs: usize,
    pub mean_quality: f64,
    pub std_quality: f64,
    /// Half-width of the normal-approximation 95% interval of the mean.
    pub ci95_quality: f64,
    pub mean_tokens: f64,
    pub extinct_runs: usize,
    /// Rows whose (label, sweep value, seed) repeats an earlier row.
    pub duplicate_seeds: usize,
}

#[derive(Debug, Clone)]
pub struct Report {
    pub rows: Vec<AggregateRow>,
    pub run_dirs: Vec<PathBuf>,
    pub written: Vec<PathBuf>,
}

/// Run directories under `dir`: `dir` itself and its immediate
/// subdirectories, wherever a manifest or summary is present.
fn run_dirs(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    if !dir.is_dir() {
        return Err(CliError::Input {
            path: dir.to_path_buf(),
            message: "not a directory".into(),
        });
    }
    let is_run = |d: &Path| d.join(MANIFEST_FILE).exists() || d.join(SUMMARY_FILE).exists();
    let mut out = Vec::new();
    if is_run(dir) {
        out.push(dir.to_path_buf());
    }
    let mut children: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(CliError::io(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && is_run(p))
        .collect();
    children.sort();
    out.extend(children);
    if out.is_empty() {
        return Err(CliError::Input {
            path: dir.join(MANIFEST_FILE),
            message: "no run manifest found".into(),
        });
    }
    Ok(out)
}

fn read_run(dir: &Path) -> Result<(Manifest, Vec<SummaryRow>), CliError> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| CliError::Input {
        path: manifest_path.clone(),
        message: format!("missing or unreadable manifest: {e}"),
    })?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| CliError::Input {
        path: manifest_path.clone(),
        message: format!("corrupt manifest: {e}"),
    })?;
    let summary_path = dir.join(SUMMARY_FILE);
    let mut reader = csv::Reader::from_path(&summary_path).map_err(|e| CliError::Input {
        path: summary_path.clone(),
        message: e.to_string(),
    })?;
    let rows: Vec<SummaryRow> = reader
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Input {
            path: summary_path.clone(),
            message: format!("corrupt summary: {e}"),
        })?;
    if rows.len() != manifest.runs {
        return Err(CliError::Input {
            path: summary_path,
            message: format!("{} rows but the manifest records {} runs", rows.len(), manifest.runs),
        });
    }
    Ok((manifest, rows))
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Groups summary rows by (label, sweep value) in first-seen label order and
/// ascending sweep value.
pub fn aggregate(rows: &[SummaryRow]) -> Vec<AggregateRow> {
    let mut labels: Vec<String> = Vec::new();
    let mut groups: BTreeMap<(usize, u64), Vec<&SummaryRow>> = BTreeMap::new();
    for r in rows {
        let li = match labels.iter().position(|l| *l == r.label) {
            Some(i) => i,
            None => {
                labels.push(r.label.clone());
                labels.len() - 1
            }
        };
        // Sweep values are positive, so their bit patterns sort numerically.
        let key = r.sweep_value.map_or(0, f64::to_bits);
        groups.entry((li, key)).or_default().push(r);
    }
    groups
        .into_values()
        .map(|g| {
            let quality: Vec<f64> = g.iter().map(|r| r.quality()).collect();
            let tokens: Vec<f64> = g.iter().map(|r| r.tokens as f64).collect();
            let (mean_quality, std_quality) = mean_std(&quality);
            let mut seen = std::collections::HashSet::new();
            let duplicate_seeds = g.iter().filter(|r| !seen.insert(r.seed)).count();
            AggregateRow {
                label: g[0].label.clone(),
                sweep_axis: g[0].sweep_axis.clone(),
                sweep_value: g[0].sweep_value,
                runs: g.len(),
                mean_quality,
                std_quality,
                ci95_quality: 1.96 * std_quality / (g.len() as f64).sqrt(),
                mean_tokens: mean_std(&tokens).0,
                extinct_runs: g.iter().filter(|r| r.extinct == 1).count(),
                duplicate_seeds,
            }
        })
        .collect()
}

fn plot_file_name(label: &str) -> String {
    let clean: String = label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect();
    if clean.is_empty() {
        "plot.csv".into()
    } else {
        format!("plot-{clean}.csv")
    }
}

/// `report <dir> [--format csv|jsonl]`.
pub fn cmd_report(dir: &Path, format: ReportFormat) -> Result<Report, CliError> {
    let dirs = run_dirs(dir)?;
    let mut rows = Vec::new();
    for d in &dirs {
        rows.extend(read_run(d)?.1);
    }
    let agg = aggregate(&rows);
    let runtime = |e: &dyn std::fmt::Display| CliError::Runtime(e.to_string());

    let mut written = Vec::new();
    let (name, bytes) = match format {
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for r in &agg {
                w.serialize(r).map_err(|e| runtime(&e))?;
            }
            ("aggregate.csv", w.into_inner().map_err(|e| runtime(&e))?)
        }
        ReportFormat::Jsonl => {
            let mut out = String::new();
            for r in &agg {
                out.push_str(&serde_json::to_string(r).map_err(|e| runtime(&e))?);
                out.push('\n');
            }
            ("aggregate.jsonl", out.into_bytes())
        }
    };
    write_atomic(&dir.join(name), &bytes)?;
    written.push(dir.join(name));

    let mut by_label: BTreeMap<&str, Vec<&AggregateRow>> = BTreeMap::new();
    for r in &agg {
        by_label.entry(r.label.as_str()).or_default().push(r);
    }
    for (label, points) in by_label {
        let mut text = String::from("tokens,quality\n");
        for p in points {
            text.push_str(&format!("{},{}\n", p.mean_tokens, p.mean_quality));
        }
        let path = dir.join(plot_file_name(label));
        write_atomic(&path, text.as_bytes())?;
        written.push(path);
    }
    Ok(Report {
        rows: agg,
        run_dirs: dirs,
        written,
    })
}
