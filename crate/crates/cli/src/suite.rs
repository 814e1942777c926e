//! Invariant checks against the enumeration oracle, shared by `verify` and the
//! acceptance tests. Every check reports a measured deviation next to the
//! tolerance it must respect.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use rgsmc::fixtures::{constraint_spec, random_spec, worked_spec, CONSTRAINT_BLOCK};
use rgsmc::lookahead::estimate_log_lookahead;
use rgsmc::model::proposal_log_prob;
use rgsmc::potential::ConstantOne;
use rgsmc::rng::{stream, Purpose};
use rgsmc::smc::{incremental_log_weight, mh_block_step, MhKernel, Particle};
use rgsmc::target::{block_log_psi, lookahead_log_gamma, unified_log_density};
use rgsmc::{
    enumerate, oracle_lookahead, oracle_marginal, oracle_mse_weights, oracle_prefix_target, run_smc, sample_tokens,
    tv_distance_keyed, ExactLookahead, Family, Horizon, IntermediateTarget, LookaheadConfig, LookaheadMode,
    ResamplingScheme, SmcConfig, TargetSpec, Token,
};
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub suite: &'static str,
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    /// Passes when `measured ≤ tolerance` (NaN fails).
    pub fn at_most(suite: &'static str, name: impl Into<String>, measured: f64, tolerance: f64) -> Self {
        Self {
            suite,
            name: name.into(),
            measured,
            tolerance,
            passed: measured <= tolerance,
        }
    }
}

pub type SuiteResult = Result<Vec<Check>, CliError>;

const FAMILIES: [Family; 2] = [Family::Tempered, Family::Powered];
const TARGETS: [IntermediateTarget; 2] = [IntermediateTarget::Prefix, IntermediateTarget::Lookahead];

fn target_name(t: IntermediateTarget) -> &'static str {
    match t {
        IntermediateTarget::Prefix => "prefix",
        IntermediateTarget::Lookahead => "lookahead",
    }
}

/// Small fixtures for the oracle comparisons: vocabulary 3, horizon ≤ 4.
pub fn small_fixtures(family: Family, alpha: f64) -> Vec<(String, TargetSpec)> {
    vec![
        ("worked".into(), worked_spec(family, alpha, 1)),
        ("random-1-T3".into(), random_spec(family, alpha, 3, 2, 1)),
        ("random-4-T4".into(), random_spec(family, alpha, 4, 2, 4)),
    ]
}

/// Every bundled instance small enough to enumerate.
pub fn enumerable_fixtures(family: Family, alpha: f64) -> Vec<(String, TargetSpec)> {
    let mut out = small_fixtures(family, alpha);
    for seed in [0, 2, 3] {
        out.push((format!("random-{seed}-T4"), random_spec(family, alpha, 4, 1, seed)));
    }
    out.push(("constraint".into(), constraint_spec(family, alpha, CONSTRAINT_BLOCK)));
    out
}

/// Weighted particle distribution of a run against the enumerated target.
fn run_tv(spec: &TargetSpec, cfg: &SmcConfig, reference: &BTreeMap<Vec<Token>, f64>) -> Result<f64, CliError> {
    let out = run_smc(spec, cfg)?;
    Ok(tv_distance_keyed(&out.weighted_distribution(spec), reference)?)
}

/// Sampler settings under which the weighted population is compared with the
/// oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// Default ESS trigger (N/2) and default MH rejuvenation of duplicates.
    Adaptive,
    /// Resampling at every block (the ESS is below N unless all weights are
    /// equal) without MH, so prefix and lookahead populations differ.
    ///
    /// MH is off because moving only the duplicated copies is not invariant
    /// for the population: a heavy ancestor contributes its first copy
    /// unmoved and its extra copies moved, so unless the kernel samples
    /// `γ_k` exactly the mixture is biased, and the bias does not shrink
    /// with N.
    EveryBlock,
}

impl Regime {
    fn name(self) -> &'static str {
        match self {
            Regime::Adaptive => "adaptive",
            Regime::EveryBlock => "every-block",
        }
    }
}

fn equivalence_config(particles: usize, seed: u64, target: IntermediateTarget, regime: Regime) -> SmcConfig {
    let mut cfg = SmcConfig::new(particles, seed);
    cfg.resampling = ResamplingScheme::Multinomial;
    cfg.intermediate_target = target;
    cfg.lookahead.mode = LookaheadMode::ExactOracle;
    if regime == Regime::EveryBlock {
        cfg.ess_threshold = Some(particles as f64);
        cfg.mh_steps = 0;
    }
    cfg
}

/// Mean TV distance to the oracle over `seeds` runs of `particles` particles,
/// for {family} × {prefix, lookahead} × {α = 1, 4} on the small fixtures.
pub fn oracle_equivalence(particles: usize, seeds: u64, tolerance: f64, regime: Regime) -> SuiteResult {
    let mut checks = Vec::new();
    for family in FAMILIES {
        for alpha in [1.0, 4.0] {
            for (name, spec) in small_fixtures(family, alpha) {
                let reference = enumerate(&spec)?.distribution();
                for target in TARGETS {
                    let tvs: Vec<f64> = (0..seeds)
                        .into_par_iter()
                        .map(|s| {
                            run_tv(
                                &spec,
                                &equivalence_config(particles, 1000 + s, target, regime),
                                &reference,
                            )
                        })
                        .collect::<Result<_, _>>()?;
                    let mean = tvs.iter().sum::<f64>() / tvs.len() as f64;
                    checks.push(Check::at_most(
                        "oracle-equivalence",
                        format!(
                            "{name} family {family} α={alpha} {} N={particles} {}",
                            target_name(target),
                            regime.name()
                        ),
                        mean,
                        tolerance,
                    ));
                }
            }
        }
    }
    Ok(checks)
}

/// Mean TV over `seeds` runs is non-increasing along `sizes`. Measured value is
/// the largest increase between consecutive sizes.
pub fn tv_decreases_with_particles(sizes: &[usize], seeds: u64) -> SuiteResult {
    let mut checks = Vec::new();
    for family in FAMILIES {
        for target in TARGETS {
            let spec = random_spec(family, 2.0, 3, 2, 1);
            let reference = enumerate(&spec)?.distribution();
            let mut means = Vec::new();
            for &n in sizes {
                let tvs: Vec<f64> = (0..seeds)
                    .into_par_iter()
                    .map(|s| {
                        run_tv(
                            &spec,
                            &equivalence_config(n, 2000 + s, target, Regime::EveryBlock),
                            &reference,
                        )
                    })
                    .collect::<Result<_, _>>()?;
                means.push(tvs.iter().sum::<f64>() / tvs.len() as f64);
            }
            let worst = means.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
            checks.push(Check::at_most(
                "oracle-equivalence",
                format!(
                    "TV non-increasing in N {sizes:?}, family {family} {} every-block",
                    target_name(target)
                ),
                worst,
                0.0,
            ));
        }
    }
    Ok(checks)
}

fn relative_error(a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// The prefix-weight MSE decomposition at every `t` on every enumerable
/// fixture, for α ∈ {1, 2, 4} and proposal exponents {1, α}.
pub fn mse_identity(tolerance: f64) -> SuiteResult {
    let mut checks = Vec::new();
    for family in FAMILIES {
        for alpha in [1.0, 2.0, 4.0] {
            let results: Vec<Vec<Check>> = enumerable_fixtures(family, alpha)
                .into_par_iter()
                .map(|(name, spec)| {
                    let e = enumerate(&spec)?;
                    let mut residual: f64 = 0.0;
                    let mut ordering: f64 = 0.0;
                    for tau in [1.0, alpha] {
                        for t in 0..=spec.horizon {
                            let r = oracle_mse_weights(&e, tau, t)?;
                            residual = residual.max(r.identity_residual());
                            let scale = r.mse_prefix.abs().max(f64::MIN_POSITIVE);
                            ordering = ordering.max((r.mse_lookahead - r.mse_prefix) / scale);
                        }
                    }
                    Ok(vec![
                        Check::at_most(
                            "mse-identity",
                            format!("{name} family {family} α={alpha}: mse_prefix = mse_lookahead + excess"),
                            residual,
                            tolerance,
                        ),
                        Check::at_most(
                            "mse-identity",
                            format!("{name} family {family} α={alpha}: mse_prefix ≥ mse_lookahead"),
                            ordering,
                            0.0,
                        ),
                    ])
                })
                .collect::<Result<_, CliError>>()?;
            checks.extend(results.into_iter().flatten());
        }
    }
    Ok(checks)
}

/// Normalized lookahead targets built from the recursive exact lookahead
/// against enumerated marginals, at every `t` and every prefix.
pub fn exact_marginals(tolerance: f64) -> SuiteResult {
    let mut checks = Vec::new();
    for family in FAMILIES {
        for alpha in [1.0, 2.0, 4.0] {
            for (name, spec) in enumerable_fixtures(family, alpha) {
                let e = enumerate(&spec)?;
                let exact = ExactLookahead::new(spec.clone());
                let mut rng = stream(0, Purpose::Oracle, 0, 0, 0);
                let mut worst: f64 = 0.0;
                for t in 0..=spec.horizon {
                    for (prefix, p) in oracle_marginal(&e, t)? {
                        let g = lookahead_log_gamma(&spec, &prefix, &exact, &mut rng)?;
                        worst = worst.max(relative_error((g - e.log_z).exp(), p));
                    }
                }
                checks.push(Check::at_most(
                    "exact-marginals",
                    format!("{name} family {family} α={alpha}: γ_look / Z = marginal"),
                    worst,
                    tolerance,
                ));
            }
        }
    }
    Ok(checks)
}

/// A prefix with positive target mass, drawn from the oracle marginal at `t`.
fn pick_prefix(spec: &TargetSpec, t: usize, u: f64) -> Result<Vec<Token>, CliError> {
    let e = enumerate(spec)?;
    let live: Vec<(Vec<Token>, f64)> = oracle_marginal(&e, t)?
        .into_iter()
        .filter(|(p, m)| *m > 0.0 && !spec.is_terminated(p))
        .collect();
    let total: f64 = live.iter().map(|(_, m)| m).sum();
    let mut acc = 0.0;
    for (p, m) in &live {
        acc += m / total;
        if u < acc {
            return Ok(p.clone());
        }
    }
    Ok(live.last().expect("fixture has a live prefix").0.clone())
}

/// Linear-space mean of `reps` lookahead estimates against the oracle's
/// horizon-truncated value, for `pairs` (fixture, prefix) pairs, both families
/// and rollout exponents {1, α}. Measured value is |mean − L^(H)| / σ̂.
pub fn estimator_unbiasedness(pairs: u64, reps: u64, sigmas: f64) -> SuiteResult {
    let alpha = 2.0;
    let mut checks = Vec::new();
    for pair in 0..pairs {
        let mut pick = stream(pair, Purpose::Oracle, pair, 1, 0);
        let block_size = 1 + (pair % 2) as usize;
        let horizon_blocks = 1 + (pair / 2 % 2) as usize;
        let t = 1 + (pick.gen::<u64>() % 2) as usize;
        let u: f64 = pick.gen();
        for family in FAMILIES {
            let spec = random_spec(family, alpha, 4, block_size, 10 + pair);
            let prefix = pick_prefix(&spec, t, u)?;
            let e = enumerate(&spec)?;
            let truth = oracle_lookahead(&e, &prefix, Horizon::Blocks(horizon_blocks))?;
            for tau_roll in [1.0, alpha] {
                let cfg = LookaheadConfig {
                    rollouts: 2,
                    horizon_blocks,
                    tau_roll,
                    mode: LookaheadMode::Estimated,
                };
                let values: Vec<f64> = (0..reps)
                    .into_par_iter()
                    .map(|r| {
                        let mut rng = stream(pair, Purpose::Lookahead, r, tau_roll.to_bits(), family as u64);
                        estimate_log_lookahead(&spec, &prefix, &cfg, &mut rng).map(|est| est.log_value.exp())
                    })
                    .collect::<Result<_, _>>()?;
                let n = values.len() as f64;
                let mean = values.iter().sum::<f64>() / n;
                let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
                let se = (var / n).sqrt();
                let z = if se > 0.0 {
                    (mean - truth).abs() / se
                } else if relative_error(mean, truth) < 1e-12 {
                    0.0
                } else {
                    f64::INFINITY
                };
                checks.push(Check::at_most(
                    "unbiasedness",
                    format!(
                        "L̂ pair {pair} family {family} τ_roll={tau_roll} B={block_size} H={horizon_blocks} t={t}: \
                         mean {mean:.5} vs {truth:.5} (σ-units)"
                    ),
                    z,
                    sigmas,
                ));
            }
        }
    }
    Ok(checks)
}

/// Linear-space mean of `exp(log Ẑ)` over `runs` runs on the worked fixture
/// (family II, α = 1, prefix targets, multinomial resampling) against Z = 1.6.
pub fn normalizer_unbiasedness(runs: u64, particles: usize, sigmas: f64) -> SuiteResult {
    let spec = worked_spec(Family::Powered, 1.0, 1);
    let z = enumerate(&spec)?.z();
    let values: Vec<f64> = (0..runs)
        .into_par_iter()
        .map(|s| {
            let mut cfg = SmcConfig::new(particles, 5000 + s);
            cfg.resampling = ResamplingScheme::Multinomial;
            cfg.intermediate_target = IntermediateTarget::Prefix;
            Ok(run_smc(&spec, &cfg)?.log_z_hat.exp())
        })
        .collect::<Result<_, CliError>>()?;
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let se = (var / n).sqrt();
    Ok(vec![Check::at_most(
        "unbiasedness",
        format!("Ẑ worked fixture N={particles} runs={runs}: mean {mean:.5} vs {z:.5} (σ-units)"),
        (mean - z).abs() / se,
        sigmas,
    )])
}

/// One MH move (S = 2 proposals) applied to `chains` exact draws from `γ_k`;
/// the χ² statistic of the result against `γ_k` must stay below the 99%
/// quantile. `tamper` inverts the lookahead ratio in the acceptance
/// probability, which should be detected.
pub fn mh_invariance(chains: u64, tamper: bool) -> SuiteResult {
    let cases: Vec<(String, TargetSpec, usize)> = vec![
        (
            "worked B=T=2 family II α=1".into(),
            worked_spec(Family::Powered, 1.0, 2),
            1,
        ),
        (
            "random-3 T=4 B=2 family I α=2".into(),
            random_spec(Family::Tempered, 2.0, 4, 2, 3),
            1,
        ),
        (
            "random-3 T=4 B=2 family I α=2".into(),
            random_spec(Family::Tempered, 2.0, 4, 2, 3),
            2,
        ),
        (
            "random-5 T=4 B=2 family II α=2".into(),
            random_spec(Family::Powered, 2.0, 4, 2, 5),
            1,
        ),
        (
            "random-5 T=3 B=2 family II α=4".into(),
            random_spec(Family::Powered, 4.0, 3, 2, 5),
            2,
        ),
    ];
    let mut checks = Vec::new();
    for (case_index, (name, spec, k)) in cases.into_iter().enumerate() {
        let e = enumerate(&spec)?;
        let end = spec.block_range(k).end;
        let exact = ExactLookahead::new(spec.clone());
        for target in TARGETS {
            let gamma = match target {
                IntermediateTarget::Prefix => oracle_prefix_target(&e, end)?,
                IntermediateTarget::Lookahead => oracle_marginal(&e, end)?,
            };
            let support: Vec<(&Vec<Token>, f64)> = gamma.iter().map(|(k, v)| (k, *v)).collect();
            let kernel = MhKernel {
                spec: &spec,
                target,
                steps: 2,
                proposal_tau: spec.alpha,
                provider: Some(&exact),
                invert_lookahead_ratio: tamper,
            };
            let finals: Vec<Vec<Token>> = (0..chains)
                .into_par_iter()
                .map(|c| {
                    let mut rng = stream(case_index as u64, Purpose::Oracle, c, k as u64, target as u64);
                    let u: f64 = rng.gen();
                    let mut acc = 0.0;
                    let mut start = support.last().unwrap().0;
                    for (seq, p) in &support {
                        acc += p;
                        if u < acc {
                            start = seq;
                            break;
                        }
                    }
                    let mut particle = Particle {
                        tokens: truncate_after_eos(&spec, start),
                        log_weight: 0.0,
                        terminated: spec.is_terminated(start),
                        ancestor: 0,
                        log_lookahead: 0.0,
                        sum_log_psi: 0.0,
                    };
                    mh_block_step(&kernel, &mut particle, k, &mut rng)?;
                    Ok(spec.model.vocab().pad(&particle.tokens, end))
                })
                .collect::<Result<_, CliError>>()?;
            let mut counts: BTreeMap<&[Token], u64> = BTreeMap::new();
            for f in &finals {
                *counts.entry(f.as_slice()).or_default() += 1;
            }
            let mut stat = 0.0;
            let mut cells = 0usize;
            for (seq, p) in &support {
                let observed = counts.remove(seq.as_slice()).unwrap_or(0) as f64;
                if *p > 0.0 {
                    let expected = p * chains as f64;
                    stat += (observed - expected).powi(2) / expected;
                    cells += 1;
                } else if observed > 0.0 {
                    stat = f64::INFINITY;
                }
            }
            if !counts.is_empty() {
                stat = f64::INFINITY;
            }
            let critical = if cells > 1 {
                ChiSquared::new((cells - 1) as f64)
                    .map_err(|e| CliError::Runtime(e.to_string()))?
                    .inverse_cdf(0.99)
            } else {
                0.0
            };
            checks.push(Check::at_most(
                "mh-invariance",
                format!("{name} k={k} {} acceptance: χ² over {cells} cells", target_name(target)),
                stat,
                critical,
            ));
        }
    }
    Ok(checks)
}

fn truncate_after_eos(spec: &TargetSpec, seq: &[Token]) -> Vec<Token> {
    match seq.iter().position(|t| *t == spec.eos()) {
        Some(i) => seq[..=i].to_vec(),
        None => seq.to_vec(),
    }
}

/// With resampling disabled, final weights agree across block sizes, and the
/// accumulated weights telescope to `log Π − log q` for every particle.
pub fn b_invariance() -> SuiteResult {
    let mut checks = Vec::new();
    for family in FAMILIES {
        for target in TARGETS {
            let mut worst_b: f64 = 0.0;
            let mut worst_tele: f64 = 0.0;
            for seed in 0..4 {
                let mut cfg = equivalence_config(256, 300 + seed, target, Regime::Adaptive);
                cfg.ess_threshold = Some(0.0);
                cfg.mh_steps = 0;
                cfg.proposal_tau = Some(1.5);
                let runs: Vec<_> = [1, 2, 4]
                    .into_iter()
                    .map(|b| {
                        let spec = random_spec(family, 2.0, 4, b, seed);
                        run_smc(&spec, &cfg).map(|out| (spec, out))
                    })
                    .collect::<Result<_, _>>()?;
                let (_, first) = &runs[0];
                for (spec, out) in &runs {
                    for (a, b) in first.particles.iter().zip(&out.particles) {
                        if a.tokens != b.tokens {
                            worst_b = f64::INFINITY;
                        }
                        worst_b = worst_b.max((a.log_weight - b.log_weight).abs());
                    }
                    for p in &out.particles {
                        let density = unified_log_density(spec, &p.tokens)?;
                        let q = proposal_log_prob(spec.model.as_ref(), &spec.prompt, &[], &p.tokens, 1.5)?;
                        worst_tele = worst_tele.max((p.log_weight - (density - q)).abs());
                    }
                }
            }
            checks.push(Check::at_most(
                "b-invariance",
                format!(
                    "family {family} {}: B ∈ {{1,2,T}} final log-weights",
                    target_name(target)
                ),
                worst_b,
                1e-10,
            ));
            checks.push(Check::at_most(
                "b-invariance",
                format!("family {family} {}: Σ increments = log Π − log q", target_name(target)),
                worst_tele,
                1e-9,
            ));
        }
    }
    Ok(checks)
}

/// ψ ≡ 1 and α = 1 recovers the base model; family I with proposal exponent α
/// has incremental weights bit-identical to the block potential.
pub fn reductions(particles: usize, tolerance: f64) -> SuiteResult {
    let mut checks = Vec::new();
    for (name, spec) in [
        ("worked", worked_spec(Family::Tempered, 1.0, 1)),
        ("random-1-T3", random_spec(Family::Tempered, 1.0, 3, 1, 1)),
    ] {
        let spec = spec.with_potential(Arc::new(ConstantOne));
        let e = enumerate(&spec)?;
        checks.push(Check::at_most(
            "reductions",
            format!("{name} reward-free: |Z − 1|"),
            (e.z() - 1.0).abs(),
            1e-12,
        ));
        let reference = e.distribution();
        let tv = run_tv(&spec, &SmcConfig::new(particles, 77), &reference)?;
        checks.push(Check::at_most(
            "reductions",
            format!("{name} reward-free N={particles}: TV to base model"),
            tv,
            tolerance,
        ));
    }

    let mut mismatches = 0u64;
    let mut compared = 0u64;
    for seed in 0..6 {
        for alpha in [1.0, 2.0, 4.0] {
            for b in [1, 2, 3] {
                let spec = random_spec(Family::Tempered, alpha, 4, b, seed);
                let mut rng = stream(seed, Purpose::Oracle, b as u64, alpha.to_bits(), 0);
                for _ in 0..50 {
                    let seq = sample_tokens(spec.model.as_ref(), &spec.prompt, &[], 4, alpha, &mut rng)?.tokens;
                    for k in 1..=spec.num_blocks() {
                        let range = spec.block_range(k);
                        if seq.len() <= range.start {
                            break;
                        }
                        let block = &seq[range.start..range.end.min(seq.len())];
                        let q =
                            proposal_log_prob(spec.model.as_ref(), &spec.prompt, &seq[..range.start], block, alpha)?;
                        let w = incremental_log_weight(&spec, &seq[..range.start], block, q, None)?;
                        let psi = block_log_psi(&spec, k, &seq)?;
                        compared += 1;
                        if w.to_bits() != psi.to_bits() {
                            mismatches += 1;
                        }
                    }
                }
            }
        }
    }
    checks.push(Check::at_most(
        "reductions",
        format!("family I, τ = α: incremental weight ≠ block Ψ bitwise ({compared} blocks)"),
        mismatches as f64,
        0.0,
    ));
    Ok(checks)
}

pub struct Suite {
    pub name: &'static str,
    pub run: fn(&SuiteOptions) -> SuiteResult,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SuiteOptions {
    /// Invert the lookahead ratio in MH acceptance (self-test of the χ² check).
    pub tamper_mh: bool,
}

/// The suites run by `verify`, at full strength.
pub fn suites() -> Vec<Suite> {
    vec![
        Suite {
            name: "oracle-equivalence",
            run: |_| {
                let mut c = oracle_equivalence(8192, 20, 0.03, Regime::Adaptive)?;
                c.extend(oracle_equivalence(8192, 20, 0.03, Regime::EveryBlock)?);
                c.extend(tv_decreases_with_particles(&[128, 1024, 8192], 20)?);
                Ok(c)
            },
        },
        Suite {
            name: "mse-identity",
            run: |_| mse_identity(1e-9),
        },
        Suite {
            name: "exact-marginals",
            run: |_| exact_marginals(1e-9),
        },
        Suite {
            name: "unbiasedness",
            run: |_| {
                let mut c = estimator_unbiasedness(10, 100_000, 4.0)?;
                c.extend(normalizer_unbiasedness(1000, 8, 4.0)?);
                Ok(c)
            },
        },
        Suite {
            name: "mh-invariance",
            run: |o| mh_invariance(100_000, o.tamper_mh),
        },
        Suite {
            name: "b-invariance",
            run: |_| b_invariance(),
        },
        Suite {
            name: "reductions",
            run: |_| reductions(8192, 0.02),
        },
    ]
}

/// Fixed-width table of checks.
pub fn render_table(checks: &[Check]) -> String {
    let mut out = format!(
        "{:<20} {:<6} {:>14} {:>14}  {}\n",
        "suite", "status", "measured", "tolerance", "check"
    );
    for c in checks {
        out.push_str(&format!(
            "{:<20} {:<6} {:>14.6e} {:>14.6e}  {}\n",
            c.suite,
            if c.passed { "ok" } else { "FAIL" },
            c.measured,
            c.tolerance,
            c.name
        ));
    }
    out
}
