//! `run`: replications × sweep points of the sampler, written as a summary
//! CSV, a JSONL trace and a manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use rgsmc::rng::replication_seed;
use rgsmc::smc::{run_smc_partial, BlockTrace};
use rgsmc::{enumerate, tv_distance_keyed, EnumeratedTarget, Error, TargetSpec, Token};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{LoadedConfig, RunConfig};
use crate::error::CliError;

pub const SUMMARY_FILE: &str = "summary.csv";
pub const TRACE_FILE: &str = "trace.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SCHEMA_FILE: &str = "summary.schema.json";

/// One row of `summary.csv`; see [`SCHEMA`] for column meanings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub label: String,
    pub sweep_axis: String,
    pub sweep_value: Option<f64>,
    pub replication: usize,
    pub seed: u64,
    pub particles: usize,
    pub alpha: f64,
    pub extinct: u8,
    pub best_score: f64,
    pub best_success: Option<u8>,
    pub weighted_score: f64,
    pub weighted_success: Option<f64>,
    pub tv_to_oracle: Option<f64>,
    pub tokens: u64,
    pub log_z_hat: f64,
    pub best_sequence: String,
}

impl SummaryRow {
    /// Best-particle success when a task predicate is set, else best-particle score.
    pub fn quality(&self) -> f64 {
        match self.best_success {
            Some(s) => s as f64,
            None => self.best_score,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub sweep_value: Option<f64>,
    pub replication: usize,
    pub seed: u64,
    #[serde(flatten)]
    pub block: BlockTrace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedEntry {
    pub sweep_value: Option<f64>,
    pub replication: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub label: String,
    /// SHA-256 over the resolved config and the model text.
    pub config_hash: String,
    pub config: RunConfig,
    pub code_version: String,
    pub seeds: Vec<SeedEntry>,
    pub runs: usize,
    pub extinct_runs: usize,
    pub total_tokens: u64,
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone)]
pub struct RunResults {
    pub rows: Vec<SummaryRow>,
    pub trace: Vec<TraceRow>,
    pub manifest: Manifest,
}

pub const SCHEMA: &str = r#"{
  "file": "summary.csv",
  "row": "one sampler run: a (sweep_value, replication) pair",
  "columns": [
    {"name": "label", "type": "string", "description": "config label"},
    {"name": "sweep_axis", "type": "string", "description": "particles, alpha, or empty without a sweep"},
    {"name": "sweep_value", "type": "number|empty", "description": "value of the swept parameter"},
    {"name": "replication", "type": "integer", "description": "replication index, 0-based"},
    {"name": "seed", "type": "integer", "description": "sampler seed of this run"},
    {"name": "particles", "type": "integer", "description": "particle count N"},
    {"name": "alpha", "type": "number", "description": "sharpening exponent"},
    {"name": "extinct", "type": "0|1", "description": "1 when every particle weight reached zero"},
    {"name": "best_score", "type": "number", "description": "product of potentials of the highest-weight particle"},
    {"name": "best_success", "type": "0|1|empty", "description": "task predicate on the highest-weight particle; empty without a predicate"},
    {"name": "weighted_score", "type": "number", "description": "weight-averaged product of potentials"},
    {"name": "weighted_success", "type": "number|empty", "description": "weight-averaged task predicate"},
    {"name": "tv_to_oracle", "type": "number|empty", "description": "total variation between the weighted particles and the enumerated target; empty when not enumerable or extinct"},
    {"name": "tokens", "type": "integer", "description": "tokens drawn: propagation, lookahead rollouts and MH proposals; equals the sum of tokens_this_block in trace.jsonl"},
    {"name": "log_z_hat", "type": "number", "description": "log normalizer estimate; -inf when extinct"},
    {"name": "best_sequence", "type": "string", "description": "highest-weight particle, eos-padded, space-separated token names"}
  ]
}
"#;

/// Hash of the resolved config plus the model text.
pub fn config_hash(config: &RunConfig, model_text: &str) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_string(config).expect("config serializes"));
    h.update([0u8]);
    h.update(model_text);
    format!("{:x}", h.finalize())
}

struct Point {
    sweep_value: Option<f64>,
    replication: usize,
    seed: u64,
    particles: usize,
    alpha: f64,
}

/// Executes every run of `loaded`. Runs are independent and execute in
/// parallel; results come back in (sweep point, replication) order.
pub fn execute(loaded: &LoadedConfig) -> Result<RunResults, CliError> {
    let started = Instant::now();
    let cfg = &loaded.config;
    let points: Vec<Point> = cfg
        .sweep_points()
        .into_iter()
        .flat_map(|value| {
            let (particles, alpha) = cfg.point_settings(value);
            (0..cfg.replications).map(move |r| Point {
                sweep_value: value,
                replication: r,
                seed: replication_seed(cfg.seed, r as u64),
                particles,
                alpha,
            })
        })
        .collect();

    // One enumeration per distinct α, when the instance is small enough.
    let mut oracles: BTreeMap<u64, Option<EnumeratedTarget>> = BTreeMap::new();
    let mut specs: BTreeMap<u64, TargetSpec> = BTreeMap::new();
    for p in &points {
        let key = p.alpha.to_bits();
        if specs.contains_key(&key) {
            continue;
        }
        let spec = loaded.spec_at(p.alpha)?;
        let oracle = match enumerate(&spec) {
            Ok(e) => Some(e),
            Err(Error::InstanceTooLarge { .. }) => None,
            Err(e) => return Err(e.into()),
        };
        oracles.insert(key, oracle);
        specs.insert(key, spec);
    }
    let oracle_dists: BTreeMap<u64, BTreeMap<Vec<Token>, f64>> = oracles
        .iter()
        .filter_map(|(k, o)| o.as_ref().map(|o| (*k, o.distribution())))
        .collect();

    let axis = cfg
        .sweep
        .as_ref()
        .map(|s| serde_json::to_value(s.axis).unwrap().as_str().unwrap().to_string())
        .unwrap_or_default();

    let outcomes: Vec<(SummaryRow, Vec<TraceRow>)> = points
        .par_iter()
        .map(|p| {
            let spec = &specs[&p.alpha.to_bits()];
            let mut smc = cfg.smc.clone();
            smc.particles = p.particles;
            smc.seed = p.seed;
            let out = run_smc_partial(spec, &smc)?;
            let vocab = spec.model.vocab();
            let row = if out.extinct {
                SummaryRow {
                    label: cfg.label.clone(),
                    sweep_axis: axis.clone(),
                    sweep_value: p.sweep_value,
                    replication: p.replication,
                    seed: p.seed,
                    particles: p.particles,
                    alpha: p.alpha,
                    extinct: 1,
                    best_score: 0.0,
                    best_success: loaded.success.as_ref().map(|_| 0),
                    weighted_score: 0.0,
                    weighted_success: loaded.success.as_ref().map(|_| 0.0),
                    tv_to_oracle: None,
                    tokens: out.total_tokens,
                    log_z_hat: f64::NEG_INFINITY,
                    best_sequence: String::new(),
                }
            } else {
                let weights = out.normalized_weights().expect("live population has weights");
                let best = &out.particles[out.best_index()];
                let content = |tokens: &[Token]| -> Vec<Token> {
                    tokens.iter().copied().take_while(|t| *t != spec.eos()).collect()
                };
                let success = loaded.success.as_ref();
                let weighted_score = out
                    .particles
                    .iter()
                    .zip(&weights)
                    .map(|(q, w)| w * q.sum_log_psi.exp())
                    .sum();
                let weighted_success = success.map(|pred| {
                    out.particles
                        .iter()
                        .zip(&weights)
                        .filter(|(q, _)| pred.matches(&content(&q.tokens)))
                        .map(|(_, w)| w)
                        .sum()
                });
                let tv = match oracle_dists.get(&p.alpha.to_bits()) {
                    Some(reference) => Some(tv_distance_keyed(&out.weighted_distribution(spec), reference)?),
                    None => None,
                };
                SummaryRow {
                    label: cfg.label.clone(),
                    sweep_axis: axis.clone(),
                    sweep_value: p.sweep_value,
                    replication: p.replication,
                    seed: p.seed,
                    particles: p.particles,
                    alpha: p.alpha,
                    extinct: 0,
                    best_score: best.sum_log_psi.exp(),
                    best_success: success.map(|pred| pred.matches(&content(&best.tokens)) as u8),
                    weighted_score,
                    weighted_success,
                    tv_to_oracle: tv,
                    tokens: out.total_tokens,
                    log_z_hat: out.log_z_hat,
                    best_sequence: vocab.render(&spec.pad(&best.tokens)),
                }
            };
            let trace = out
                .trace
                .into_iter()
                .map(|block| TraceRow {
                    sweep_value: p.sweep_value,
                    replication: p.replication,
                    seed: p.seed,
                    block,
                })
                .collect();
            Ok((row, trace))
        })
        .collect::<Result<_, CliError>>()?;

    let mut rows = Vec::with_capacity(outcomes.len());
    let mut trace = Vec::new();
    for (row, t) in outcomes {
        rows.push(row);
        trace.extend(t);
    }
    let manifest = Manifest {
        label: cfg.label.clone(),
        config_hash: config_hash(cfg, &loaded.model_text),
        config: cfg.clone(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        seeds: points
            .iter()
            .map(|p| SeedEntry {
                sweep_value: p.sweep_value,
                replication: p.replication,
                seed: p.seed,
            })
            .collect(),
        runs: rows.len(),
        extinct_runs: rows.iter().filter(|r| r.extinct == 1).count(),
        total_tokens: rows.iter().map(|r| r.tokens).sum(),
        wall_time_secs: started.elapsed().as_secs_f64(),
    };
    Ok(RunResults { rows, trace, manifest })
}

/// Writes `bytes` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(CliError::io(&tmp))?;
    fs::rename(&tmp, path).map_err(CliError::io(path))
}

pub fn summary_csv(rows: &[SummaryRow]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(SUMMARY_COLUMNS)
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    w.into_inner().map_err(|e| CliError::Runtime(e.to_string()))
}

pub const SUMMARY_COLUMNS: [&str; 16] = [
    "label",
    "sweep_axis",
    "sweep_value",
    "replication",
    "seed",
    "particles",
    "alpha",
    "extinct",
    "best_score",
    "best_success",
    "weighted_score",
    "weighted_success",
    "tv_to_oracle",
    "tokens",
    "log_z_hat",
    "best_sequence",
];

/// Writes summary, trace, schema and (last) the manifest into `dir`.
pub fn write_outputs(results: &RunResults, dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    write_atomic(&dir.join(SUMMARY_FILE), &summary_csv(&results.rows)?)?;
    let mut trace = String::new();
    for t in &results.trace {
        trace.push_str(&serde_json::to_string(t).map_err(|e| CliError::Runtime(e.to_string()))?);
        trace.push('\n');
    }
    write_atomic(&dir.join(TRACE_FILE), trace.as_bytes())?;
    write_atomic(&dir.join(SCHEMA_FILE), SCHEMA.as_bytes())?;
    let manifest = serde_json::to_string_pretty(&results.manifest).map_err(|e| CliError::Runtime(e.to_string()))?;
    write_atomic(&dir.join(MANIFEST_FILE), manifest.as_bytes())
}

/// `run --config <file> [--seed S] [--out DIR]`. Returns the output directory.
pub fn cmd_run(config: &Path, seed: Option<u64>, out: Option<&Path>) -> Result<PathBuf, CliError> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let dir = match (out, &cfg.output_dir) {
        (Some(out), _) => out.to_path_buf(),
        (None, Some(dir)) if dir.is_absolute() => dir.clone(),
        (None, Some(dir)) => config.parent().unwrap_or(Path::new(".")).join(dir),
        (None, None) => {
            return Err(CliError::Config {
                path: config.to_path_buf(),
                message: "no output directory: set `output_dir` or pass --out".into(),
            })
        }
    };
    let loaded = LoadedConfig::from_config(cfg, config)?;
    let results = execute(&loaded)?;
    write_outputs(&results, &dir)?;
    Ok(dir)
}
