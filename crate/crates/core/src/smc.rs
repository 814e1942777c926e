//! Block-wise resample-move SMC with selective Metropolis-Hastings rejuvenation.
//!
//! Per block `k`: every live particle extends by one block drawn from the
//! tempered base `p̃^(τ)`, picks up the incremental weight
//! `M_k Ψ_k / Q_k` (times `L_k / L_{k-1}` for lookahead targets), and when the
//! effective sample size falls below the threshold the population is
//! resampled. Duplicates created by resampling whose running reward is below
//! the reward threshold then receive `S` independence-sampler MH moves on
//! their final block.
//!
//! All randomness comes from counter-based streams (see [`crate::rng`]), so a
//! run is a pure function of `(spec, config)` regardless of thread count.

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logspace::{log_mean_exp, log_sum_exp, normalize_log_weights};
use crate::lookahead::{ExactLookahead, LookaheadConfig, LookaheadMode, LookaheadProvider, MonteCarloLookahead};
use crate::model::{next_token_dist, proposal_log_prob, sample_tokens, Token};
use crate::potential::CachedPotential;
use crate::rng::{stream, Purpose};
use crate::target::{log_psi_at, log_transition_from, Family, IntermediateTarget, TargetSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResamplingScheme {
    Multinomial,
    #[default]
    Systematic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmcConfig {
    pub particles: usize,
    /// Resample when ESS falls strictly below this value; defaults to `N / 2`.
    /// Zero disables resampling.
    #[serde(default)]
    pub ess_threshold: Option<f64>,
    /// Only duplicates whose mean log-potential per block is below this value
    /// are rejuvenated; `None` rejuvenates every duplicate.
    #[serde(default)]
    pub reward_threshold: Option<f64>,
    #[serde(default = "default_mh_steps")]
    pub mh_steps: usize,
    #[serde(default)]
    pub resampling: ResamplingScheme,
    #[serde(default = "default_intermediate")]
    pub intermediate_target: IntermediateTarget,
    /// Target the MH move preserves; defaults to the intermediate target.
    #[serde(default)]
    pub mh_target: Option<IntermediateTarget>,
    /// Family of the target the MH move preserves; defaults to the run's family.
    #[serde(default)]
    pub mh_family: Option<Family>,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub seed: u64,
    #[serde(default)]
    pub lookahead: LookaheadConfig,
    /// Proposal exponent `τ` for generation and MH proposals; defaults to `α`.
    #[serde(default)]
    pub proposal_tau: Option<f64>,
    /// Test hook: invert the lookahead ratio in the MH acceptance probability.
    #[doc(hidden)]
    #[serde(skip)]
    pub invert_lookahead_ratio: bool,
}

fn default_mh_steps() -> usize {
    2
}
fn is_zero(v: &u64) -> bool {
    *v == 0
}
fn default_intermediate() -> IntermediateTarget {
    IntermediateTarget::Prefix
}

impl SmcConfig {
    pub fn new(particles: usize, seed: u64) -> Self {
        Self {
            particles,
            ess_threshold: None,
            reward_threshold: None,
            mh_steps: default_mh_steps(),
            resampling: ResamplingScheme::default(),
            intermediate_target: default_intermediate(),
            mh_target: None,
            mh_family: None,
            seed,
            lookahead: LookaheadConfig::default(),
            proposal_tau: None,
            invert_lookahead_ratio: false,
        }
    }

    pub fn ess_threshold(&self) -> f64 {
        self.ess_threshold.unwrap_or(self.particles as f64 / 2.0)
    }

    pub fn mh_target(&self) -> IntermediateTarget {
        self.mh_target.unwrap_or(self.intermediate_target)
    }

    pub fn proposal_tau(&self, spec: &TargetSpec) -> f64 {
        self.proposal_tau.unwrap_or(spec.alpha)
    }

    pub fn validate(&self) -> Result<()> {
        if self.particles == 0 {
            return Err(Error::InvalidParameter("need at least one particle".into()));
        }
        let ess = self.ess_threshold();
        if !(0.0..=self.particles as f64).contains(&ess) {
            return Err(Error::InvalidParameter(format!(
                "ESS threshold {ess} outside [0, {}]",
                self.particles
            )));
        }
        if let Some(tau) = self.proposal_tau {
            if !(tau > 0.0 && tau.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "proposal tau must be positive, got {tau}"
                )));
            }
        }
        if self.reward_threshold.is_some_and(f64::is_nan) {
            return Err(Error::InvalidParameter("reward threshold is NaN".into()));
        }
        self.lookahead.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Particle {
    pub tokens: Vec<Token>,
    pub log_weight: f64,
    pub terminated: bool,
    /// Index of the parent at the most recent resampling (own index otherwise).
    pub ancestor: usize,
    /// Cached `log L̂` at the current prefix for lookahead intermediate targets.
    pub log_lookahead: f64,
    /// `Σ_t log ψ_t` over the tokens so far.
    pub sum_log_psi: f64,
}

impl Particle {
    fn empty(index: usize) -> Self {
        Self {
            tokens: Vec::new(),
            log_weight: 0.0,
            terminated: false,
            ancestor: index,
            log_lookahead: 0.0,
            sum_log_psi: 0.0,
        }
    }

    /// Mean log-potential per completed block.
    pub fn running_reward(&self, blocks: usize) -> f64 {
        self.sum_log_psi / blocks.max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSystem {
    pub particles: Vec<Particle>,
    /// Sum of the log-mean weights at every resampling so far.
    pub log_z_hat: f64,
    pub step: usize,
}

impl ParticleSystem {
    pub fn new(n: usize) -> Self {
        Self {
            particles: (0..n).map(Particle::empty).collect(),
            log_z_hat: 0.0,
            step: 0,
        }
    }

    pub fn log_weights(&self) -> Vec<f64> {
        self.particles.iter().map(|p| p.log_weight).collect()
    }
}

/// Per-block record of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockTrace {
    pub k: usize,
    pub ess: f64,
    pub resampled: bool,
    pub duplicates: usize,
    pub mh_proposals: u64,
    pub mh_accepts: u64,
    pub tokens_this_block: u64,
    pub cumulative_tokens: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MhRecord {
    pub proposals: u64,
    pub accepts: u64,
    pub tokens: u64,
}

#[derive(Debug, Clone)]
pub struct SmcOutput {
    pub particles: Vec<Particle>,
    /// Estimate of `log Z`, including the final weights.
    pub log_z_hat: f64,
    pub trace: Vec<BlockTrace>,
    pub total_tokens: u64,
    /// Every weight reached zero; the trace stops at the block where it happened.
    pub extinct: bool,
}

impl SmcOutput {
    pub fn normalized_weights(&self) -> Option<Vec<f64>> {
        normalize_log_weights(&self.particles.iter().map(|p| p.log_weight).collect::<Vec<_>>())
    }

    /// Weighted empirical distribution over eos-padded sequences.
    pub fn weighted_distribution(&self, spec: &TargetSpec) -> BTreeMap<Vec<Token>, f64> {
        let mut out = BTreeMap::new();
        if let Some(w) = self.normalized_weights() {
            for (p, w) in self.particles.iter().zip(w) {
                if w > 0.0 {
                    *out.entry(spec.pad(&p.tokens)).or_insert(0.0) += w;
                }
            }
        }
        out
    }

    /// Highest log-weight, ties broken by total log-potential, then by index.
    pub fn best_index(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.particles.iter().enumerate() {
            let b = &self.particles[best];
            if (p.log_weight, p.sum_log_psi) > (b.log_weight, b.sum_log_psi) {
                best = i;
            }
        }
        best
    }
}

/// `(log M, log Ψ)` of `block` appended to `prefix`; positions after eos add 0.
fn block_terms(spec: &TargetSpec, prefix: &[Token], block: &[Token]) -> Result<(f64, f64)> {
    let mut seq = prefix.to_vec();
    let (mut log_m, mut log_psi) = (0.0, 0.0);
    for &tok in block {
        let base = next_token_dist(spec.model.as_ref(), &spec.prompt, &seq)?;
        log_m += log_transition_from(spec, &base, tok)?;
        seq.push(tok);
        log_psi += log_psi_at(spec, &seq);
    }
    Ok((log_m, log_psi))
}

/// Incremental log-weight of appending `block` to `prefix`:
/// `log M_k + log Ψ_k − log Q_k`, plus `log L_k − log L_{k−1}` when
/// `lookahead = Some((previous, new))`.
///
/// With a family-I target and proposal `p̃^(α)`, the model terms cancel exactly
/// and the result is the block potential alone.
pub fn incremental_log_weight(
    spec: &TargetSpec,
    prefix: &[Token],
    block: &[Token],
    proposal_log_prob: f64,
    lookahead: Option<(f64, f64)>,
) -> Result<f64> {
    let (log_m, log_psi) = block_terms(spec, prefix, block)?;
    let mut w = (log_m - proposal_log_prob) + log_psi;
    if w == f64::NEG_INFINITY || w.is_nan() {
        return Ok(f64::NEG_INFINITY);
    }
    if let Some((previous, new)) = lookahead {
        if new == f64::NEG_INFINITY || previous == f64::NEG_INFINITY {
            return Ok(f64::NEG_INFINITY);
        }
        w += new - previous;
    }
    Ok(w)
}

/// `1 / Σ w̃_i²` from log-weights.
pub fn ess(log_weights: &[f64]) -> Result<f64> {
    let lse = log_sum_exp(log_weights);
    if !lse.is_finite() {
        return Err(Error::PopulationExtinct);
    }
    let squared: Vec<f64> = log_weights.iter().map(|w| 2.0 * (w - lse)).collect();
    let value = (-log_sum_exp(&squared)).exp();
    Ok(value.clamp(1.0, log_weights.len() as f64))
}

/// `N` i.i.d. categorical draws, in draw order.
pub fn multinomial_ancestors<R: Rng + ?Sized>(weights: &[f64], n: usize, rng: &mut R) -> Vec<usize> {
    let cdf = cumulative(weights);
    (0..n).map(|_| invert_cdf(&cdf, rng.gen::<f64>())).collect()
}

/// One uniform offset `u ~ U[0, 1/N)` and the stratified points `u + i/N`.
pub fn systematic_ancestors<R: Rng + ?Sized>(weights: &[f64], n: usize, rng: &mut R) -> Vec<usize> {
    let cdf = cumulative(weights);
    let u: f64 = rng.gen::<f64>() / n as f64;
    let mut out = Vec::with_capacity(n);
    let mut j = 0;
    for i in 0..n {
        let point = u + i as f64 / n as f64;
        while j + 1 < cdf.len() && point >= cdf[j] {
            j += 1;
        }
        out.push(last_positive_at_or_before(weights, j));
    }
    out
}

fn cumulative(weights: &[f64]) -> Vec<f64> {
    let total: f64 = weights.iter().sum();
    let mut acc = 0.0;
    weights
        .iter()
        .map(|w| {
            acc += w / total;
            acc
        })
        .collect()
}

fn invert_cdf(cdf: &[f64], u: f64) -> usize {
    let i = cdf.partition_point(|c| *c <= u).min(cdf.len() - 1);
    // Rounding can leave the last cumulative value just under 1.
    let mut i = i;
    while i > 0 && cdf[i] == cdf[i - 1] {
        i -= 1;
    }
    i
}

fn last_positive_at_or_before(weights: &[f64], mut j: usize) -> usize {
    while j > 0 && weights[j] == 0.0 {
        j -= 1;
    }
    j
}

/// Resamples in place: weights reset to 1, ancestors recorded and `log Ẑ`
/// advanced by the log-mean of the pre-resampling weights.
pub fn resample<R: Rng + ?Sized>(system: &mut ParticleSystem, scheme: ResamplingScheme, rng: &mut R) -> Result<()> {
    let log_w = system.log_weights();
    let weights = normalize_log_weights(&log_w).ok_or(Error::PopulationExtinct)?;
    let n = system.particles.len();
    let ancestors = match scheme {
        ResamplingScheme::Multinomial => multinomial_ancestors(&weights, n, rng),
        ResamplingScheme::Systematic => systematic_ancestors(&weights, n, rng),
    };
    system.log_z_hat += log_mean_exp(&log_w);
    system.particles = ancestors
        .iter()
        .map(|&a| Particle {
            ancestor: a,
            log_weight: 0.0,
            ..system.particles[a].clone()
        })
        .collect();
    Ok(())
}

/// Indices whose ancestor occurs more than once, excluding the lowest-index
/// occurrence of each ancestor.
pub fn find_duplicates(ancestors: &[usize]) -> Vec<usize> {
    let mut seen = HashSet::new();
    ancestors
        .iter()
        .enumerate()
        .filter_map(|(i, a)| (!seen.insert(*a)).then_some(i))
        .collect()
}

/// Builds the lookahead provider for `spec` under `cfg`.
pub fn lookahead_provider(spec: &TargetSpec, cfg: &LookaheadConfig) -> Box<dyn LookaheadProvider> {
    match cfg.mode {
        LookaheadMode::ExactOracle => Box::new(ExactLookahead::new(spec.clone())),
        LookaheadMode::Estimated => Box::new(MonteCarloLookahead {
            spec: spec.clone(),
            config: *cfg,
        }),
    }
}

/// Everything an MH move needs besides the particle itself.
pub struct MhKernel<'a> {
    /// Target whose `γ_k` the move preserves.
    pub spec: &'a TargetSpec,
    pub target: IntermediateTarget,
    pub steps: usize,
    pub proposal_tau: f64,
    pub provider: Option<&'a dyn LookaheadProvider>,
    pub invert_lookahead_ratio: bool,
}

impl<'a> MhKernel<'a> {
    pub fn new(spec: &'a TargetSpec, cfg: &SmcConfig, provider: Option<&'a dyn LookaheadProvider>) -> Self {
        Self {
            spec,
            target: cfg.mh_target(),
            steps: cfg.mh_steps,
            proposal_tau: cfg.proposal_tau(spec),
            provider,
            invert_lookahead_ratio: cfg.invert_lookahead_ratio,
        }
    }

    fn log_lookahead(&self, seq: &[Token], rng: &mut dyn RngCore, record: &mut MhRecord) -> Result<f64> {
        if self.target == IntermediateTarget::Prefix || seq.len() >= self.spec.horizon || self.spec.is_terminated(seq) {
            return Ok(0.0);
        }
        let provider = self
            .provider
            .ok_or_else(|| Error::InvalidParameter("lookahead MH needs a lookahead provider".into()))?;
        let v = provider.log_lookahead(seq, rng)?;
        record.tokens += v.tokens_drawn;
        Ok(v.log_value)
    }
}

/// `S` independence-sampler MH moves on block `k` of `particle`.
///
/// Each proposal redraws the block from `p̃^(τ)` given the fixed prefix and is
/// accepted with probability
/// `min{1, [M'Ψ'L' Q(z)] / [M Ψ L Q(z')]}` (`L ≡ 1` for prefix targets).
/// Lookahead values are re-evaluated for both states at every proposal.
pub fn mh_block_step(
    kernel: &MhKernel<'_>,
    particle: &mut Particle,
    k: usize,
    rng: &mut dyn RngCore,
) -> Result<MhRecord> {
    let spec = kernel.spec;
    let range = spec.block_range(k);
    let mut record = MhRecord::default();
    if particle.tokens.len() < range.start || spec.is_terminated(&particle.tokens[..range.start]) {
        return Ok(record);
    }
    let prefix = particle.tokens[..range.start].to_vec();
    let block_len = range.len();

    let mut current = particle.tokens[range.start..].to_vec();
    let (m, psi) = block_terms(spec, &prefix, &current)?;
    let mut current_target = m + psi;
    let mut current_q = proposal_log_prob(
        spec.model.as_ref(),
        &spec.prompt,
        &prefix,
        &current,
        kernel.proposal_tau,
    )?;

    let mut changed = false;
    for _ in 0..kernel.steps {
        let proposal = sample_tokens(
            spec.model.as_ref(),
            &spec.prompt,
            &prefix,
            block_len,
            kernel.proposal_tau,
            rng,
        )?;
        record.proposals += 1;
        record.tokens += proposal.tokens.len() as u64;
        let (m_new, psi_new) = block_terms(spec, &prefix, &proposal.tokens)?;
        let proposed_target = m_new + psi_new;
        let proposed_q = proposal.total_log_q();

        let mut proposed_seq = prefix.clone();
        proposed_seq.extend_from_slice(&proposal.tokens);
        let mut current_seq = prefix.clone();
        current_seq.extend_from_slice(&current);
        let l_current = kernel.log_lookahead(&current_seq, rng, &mut record)?;
        let l_proposed = kernel.log_lookahead(&proposed_seq, rng, &mut record)?;
        let (l_num, l_den) = if kernel.invert_lookahead_ratio {
            (l_current, l_proposed)
        } else {
            (l_proposed, l_current)
        };

        let numerator = proposed_target + l_num - proposed_q;
        let denominator = current_target + l_den - current_q;
        let u: f64 = rng.gen();
        let accept = if numerator == f64::NEG_INFINITY || numerator.is_nan() {
            false
        } else if denominator == f64::NEG_INFINITY || denominator.is_nan() {
            true
        } else {
            u.ln() < numerator - denominator
        };
        if accept {
            record.accepts += 1;
            current = proposal.tokens;
            current_target = proposed_target;
            current_q = proposed_q;
            changed = true;
        }
    }
    if changed {
        let mut full = prefix.clone();
        full.extend_from_slice(&current);
        particle.sum_log_psi = (1..=full.len()).map(|t| log_psi_at(spec, &full[..t])).sum();
        particle.tokens.truncate(range.start);
        particle.tokens.extend_from_slice(&current);
        particle.terminated = spec.is_terminated(&particle.tokens);
    }
    Ok(record)
}

/// Runs the full block-wise resample-move SMC loop.
pub fn run_smc(spec: &TargetSpec, cfg: &SmcConfig) -> Result<SmcOutput> {
    let out = run_smc_partial(spec, cfg)?;
    if out.extinct {
        return Err(Error::PopulationExtinct);
    }
    Ok(out)
}

/// Like [`run_smc`], but an extinct population is reported through
/// [`SmcOutput::extinct`] together with the trace and token count so far.
pub fn run_smc_partial(spec: &TargetSpec, cfg: &SmcConfig) -> Result<SmcOutput> {
    cfg.validate()?;
    let spec = spec.with_potential(Arc::new(CachedPotential::new(spec.potential.clone(), &spec.prompt)));
    let spec = &spec;
    let n = cfg.particles;
    let tau = cfg.proposal_tau(spec);
    let mh_spec = spec.with_family(cfg.mh_family.unwrap_or(spec.family));

    let smc_provider =
        (cfg.intermediate_target == IntermediateTarget::Lookahead).then(|| lookahead_provider(spec, &cfg.lookahead));
    let mh_provider = (cfg.mh_target() == IntermediateTarget::Lookahead && cfg.mh_steps > 0)
        .then(|| lookahead_provider(&mh_spec, &cfg.lookahead));
    let kernel = MhKernel::new(&mh_spec, cfg, mh_provider.as_deref());

    let mut system = ParticleSystem::new(n);
    let mut trace = Vec::with_capacity(spec.num_blocks());
    let mut cumulative_tokens = 0u64;

    for k in 1..=spec.num_blocks() {
        system.step = k;
        let range = spec.block_range(k);
        let drawn: Vec<u64> = system
            .particles
            .par_iter_mut()
            .enumerate()
            .map(|(i, p)| propagate(spec, cfg, smc_provider.as_deref(), tau, p, i, k, &range))
            .collect::<Result<_>>()?;
        let mut tokens_this_block: u64 = drawn.iter().sum();

        let ess_value = match ess(&system.log_weights()) {
            Ok(v) => v,
            Err(Error::PopulationExtinct) => {
                cumulative_tokens += tokens_this_block;
                trace.push(BlockTrace {
                    k,
                    ess: 0.0,
                    resampled: false,
                    duplicates: 0,
                    mh_proposals: 0,
                    mh_accepts: 0,
                    tokens_this_block,
                    cumulative_tokens,
                });
                return Ok(SmcOutput {
                    particles: system.particles,
                    log_z_hat: f64::NEG_INFINITY,
                    trace,
                    total_tokens: cumulative_tokens,
                    extinct: true,
                });
            }
            Err(e) => return Err(e),
        };
        let mut record = BlockTrace {
            k,
            ess: ess_value,
            resampled: false,
            duplicates: 0,
            mh_proposals: 0,
            mh_accepts: 0,
            tokens_this_block: 0,
            cumulative_tokens: 0,
        };
        if ess_value < cfg.ess_threshold() {
            let mut rng = stream(cfg.seed, Purpose::Resample, 0, k as u64, 0);
            resample(&mut system, cfg.resampling, &mut rng)?;
            record.resampled = true;
            let ancestors: Vec<usize> = system.particles.iter().map(|p| p.ancestor).collect();
            let duplicates = find_duplicates(&ancestors);
            record.duplicates = duplicates.len();
            if cfg.mh_steps > 0 && !duplicates.is_empty() {
                let selected: HashSet<usize> = duplicates
                    .into_iter()
                    .filter(|&i| {
                        cfg.reward_threshold
                            .is_none_or(|thr| system.particles[i].running_reward(k) < thr)
                    })
                    .collect();
                let results: Vec<MhRecord> = system
                    .particles
                    .par_iter_mut()
                    .enumerate()
                    .filter(|(i, _)| selected.contains(i))
                    .map(|(i, p)| {
                        let mut rng = stream(cfg.seed, Purpose::MhProposal, i as u64, k as u64, 0);
                        let before = p.tokens.clone();
                        let mut rec = mh_block_step(&kernel, p, k, &mut rng)?;
                        if p.tokens != before {
                            if let Some(provider) = smc_provider.as_deref() {
                                let mut rng = stream(cfg.seed, Purpose::MhLookahead, i as u64, k as u64, 0);
                                let v = refresh_lookahead(spec, provider, p, &mut rng)?;
                                rec.tokens += v;
                            }
                        }
                        Ok(rec)
                    })
                    .collect::<Result<_>>()?;
                for r in results {
                    record.mh_proposals += r.proposals;
                    record.mh_accepts += r.accepts;
                    tokens_this_block += r.tokens;
                }
            }
        }
        cumulative_tokens += tokens_this_block;
        record.tokens_this_block = tokens_this_block;
        record.cumulative_tokens = cumulative_tokens;
        trace.push(record);
    }

    let final_log_mean = log_mean_exp(&system.log_weights());
    Ok(SmcOutput {
        log_z_hat: system.log_z_hat + final_log_mean,
        extinct: final_log_mean == f64::NEG_INFINITY,
        particles: system.particles,
        trace,
        total_tokens: cumulative_tokens,
    })
}

fn refresh_lookahead(
    spec: &TargetSpec,
    provider: &dyn LookaheadProvider,
    p: &mut Particle,
    rng: &mut dyn RngCore,
) -> Result<u64> {
    if p.tokens.len() >= spec.horizon || p.terminated {
        p.log_lookahead = 0.0;
        return Ok(0);
    }
    let v = provider.log_lookahead(&p.tokens, rng)?;
    p.log_lookahead = v.log_value;
    Ok(v.tokens_drawn)
}

/// Extends one particle by block `k` and updates its weight. Returns tokens drawn.
#[allow(clippy::too_many_arguments)]
fn propagate(
    spec: &TargetSpec,
    cfg: &SmcConfig,
    provider: Option<&dyn LookaheadProvider>,
    tau: f64,
    p: &mut Particle,
    slot: usize,
    k: usize,
    range: &std::ops::Range<usize>,
) -> Result<u64> {
    if p.weight_is_dead() || p.terminated {
        return Ok(0);
    }
    let prefix_len = p.tokens.len();
    let mut block = Vec::with_capacity(range.len());
    let mut block_log_q = 0.0;
    for t in range.clone() {
        // One stream per (slot, position) keeps token draws independent of B.
        let mut rng = stream(cfg.seed, Purpose::Propagate, slot as u64, t as u64, 0);
        let mut seq = p.tokens.clone();
        seq.extend_from_slice(&block);
        let step = sample_tokens(spec.model.as_ref(), &spec.prompt, &seq, 1, tau, &mut rng)?;
        block_log_q += step.log_q[0];
        block.push(step.tokens[0]);
        if step.tokens[0] == spec.eos() {
            break;
        }
    }
    let mut drawn = block.len() as u64;

    let lookahead = match provider {
        Some(provider) => {
            let mut seq = p.tokens.clone();
            seq.extend_from_slice(&block);
            let new = if seq.len() >= spec.horizon || spec.is_terminated(&seq) {
                0.0
            } else {
                let mut rng = stream(cfg.seed, Purpose::Lookahead, slot as u64, k as u64, 0);
                let v = provider.log_lookahead(&seq, &mut rng)?;
                drawn += v.tokens_drawn;
                v.log_value
            };
            Some((p.log_lookahead, new))
        }
        None => None,
    };
    let w = incremental_log_weight(spec, &p.tokens[..prefix_len], &block, block_log_q, lookahead)?;
    let (_, block_psi) = block_terms(spec, &p.tokens, &block)?;
    p.log_weight += w;
    p.sum_log_psi += block_psi;
    if let Some((_, new)) = lookahead {
        p.log_lookahead = new;
    }
    p.tokens.extend_from_slice(&block);
    p.terminated = spec.is_terminated(&p.tokens);
    Ok(drawn)
}

impl Particle {
    fn weight_is_dead(&self) -> bool {
        self.log_weight == f64::NEG_INFINITY
    }
}
