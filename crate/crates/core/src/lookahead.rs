//! Lookahead terms `L_t(x_1:t) = Σ_{x_{t+1:T}} Π_{s>t} m_s ψ_s`.
//!
//! Two providers: [`ExactLookahead`] evaluates the suffix sum by recursion over
//! the vocabulary (optionally truncated to a horizon), and
//! [`MonteCarloLookahead`] uses importance-weighted rollouts from the tempered
//! base model. The Monte Carlo estimate is unbiased for the horizon-truncated
//! term `L^(H)`, which sums only the next `H·B` positions.

use std::collections::HashMap;
use std::sync::RwLock;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logspace::{log_mean_exp, log_sum_exp};
use crate::model::{next_token_dist, sample_tokens, Rollout, Token};
use crate::target::{log_psi_at, log_transition_from, TargetSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LookaheadMode {
    /// Monte Carlo rollouts.
    Estimated,
    /// Exact full-horizon recursion; only feasible on small instances.
    ExactOracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LookaheadConfig {
    /// Rollouts per estimate (`J`).
    #[serde(default = "default_rollouts")]
    pub rollouts: usize,
    /// Rollout length in blocks (`H`).
    #[serde(default = "default_horizon_blocks")]
    pub horizon_blocks: usize,
    /// Rollouts are drawn from `p^tau_roll`, i.e. at temperature `1 / tau_roll`.
    #[serde(default = "default_tau_roll")]
    pub tau_roll: f64,
    #[serde(default = "default_mode")]
    pub mode: LookaheadMode,
}

fn default_rollouts() -> usize {
    2
}
fn default_horizon_blocks() -> usize {
    1
}
fn default_tau_roll() -> f64 {
    1.0
}
fn default_mode() -> LookaheadMode {
    LookaheadMode::Estimated
}

impl Default for LookaheadConfig {
    fn default() -> Self {
        Self {
            rollouts: default_rollouts(),
            horizon_blocks: default_horizon_blocks(),
            tau_roll: default_tau_roll(),
            mode: default_mode(),
        }
    }
}

impl LookaheadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rollouts == 0 || self.horizon_blocks == 0 {
            return Err(Error::InvalidParameter(
                "lookahead rollouts and horizon must be at least 1".into(),
            ));
        }
        if !(self.tau_roll > 0.0 && self.tau_roll.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "rollout tau must be positive, got {}",
                self.tau_roll
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LookaheadValue {
    pub log_value: f64,
    pub tokens_drawn: u64,
}

pub trait LookaheadProvider: Send + Sync {
    /// `log L(prefix)`. Providers that need randomness draw from `rng`.
    fn log_lookahead(&self, prefix: &[Token], rng: &mut dyn RngCore) -> Result<LookaheadValue>;
}

/// Exact lookahead by recursion `L_t = Σ_v m_{t+1}(v) ψ_{t+1} L_{t+1}`, memoized.
#[derive(Debug)]
pub struct ExactLookahead {
    spec: TargetSpec,
    max_tokens: Option<usize>,
    cache: RwLock<HashMap<(Vec<Token>, usize), f64>>,
}

impl ExactLookahead {
    pub fn new(spec: TargetSpec) -> Self {
        Self {
            spec,
            max_tokens: None,
            cache: RwLock::new(HashMap::new()),
        }
    }

    /// `L^(h)`: only the next `tokens` positions enter the suffix sum.
    pub fn truncated(spec: TargetSpec, tokens: usize) -> Self {
        Self {
            spec,
            max_tokens: Some(tokens),
            cache: RwLock::new(HashMap::new()),
        }
    }

    pub fn log_value(&self, prefix: &[Token]) -> Result<f64> {
        self.spec.model.vocab().check(prefix)?;
        let remaining = self.spec.horizon.saturating_sub(prefix.len());
        let depth = self.max_tokens.map_or(remaining, |h| h.min(remaining));
        let mut scratch = prefix.to_vec();
        self.recurse(&mut scratch, depth)
    }

    fn recurse(&self, prefix: &mut Vec<Token>, depth: usize) -> Result<f64> {
        if depth == 0 || self.spec.is_terminated(prefix) {
            return Ok(0.0);
        }
        if let Some(v) = self.cache.read().unwrap().get(&(prefix.clone(), depth)) {
            return Ok(*v);
        }
        let base = next_token_dist(self.spec.model.as_ref(), &self.spec.prompt, prefix)?;
        let mut terms = Vec::with_capacity(base.len());
        for v in self.spec.model.vocab().tokens() {
            let m = log_transition_from(&self.spec, &base, v)?;
            if m == f64::NEG_INFINITY {
                continue;
            }
            prefix.push(v);
            let psi = log_psi_at(&self.spec, prefix);
            if psi > f64::NEG_INFINITY {
                terms.push(m + psi + self.recurse(prefix, depth - 1)?);
            }
            prefix.pop();
        }
        let value = log_sum_exp(&terms);
        self.cache.write().unwrap().insert((prefix.clone(), depth), value);
        Ok(value)
    }
}

impl LookaheadProvider for ExactLookahead {
    fn log_lookahead(&self, prefix: &[Token], _rng: &mut dyn RngCore) -> Result<LookaheadValue> {
        Ok(LookaheadValue {
            log_value: self.log_value(prefix)?,
            tokens_drawn: 0,
        })
    }
}

/// The rollouts behind one lookahead estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct LookaheadEstimate {
    pub log_value: f64,
    pub config: LookaheadConfig,
    pub rollouts: Vec<Rollout>,
    /// Per-rollout log importance weights.
    pub log_terms: Vec<f64>,
    /// Every rollout hit a zero potential or an impossible token.
    pub all_rejected: bool,
    pub tokens_drawn: u64,
}

/// Log importance weight of a rollout: `Σ [log m − log q + log ψ]` over its tokens.
fn rollout_log_weight(spec: &TargetSpec, prefix: &[Token], rollout: &Rollout) -> Result<f64> {
    let mut seq = prefix.to_vec();
    let mut total = 0.0;
    for (tok, log_q) in rollout.tokens.iter().zip(&rollout.log_q) {
        let base = next_token_dist(spec.model.as_ref(), &spec.prompt, &seq)?;
        let m = log_transition_from(spec, &base, *tok)?;
        seq.push(*tok);
        total += (m - log_q) + log_psi_at(spec, &seq);
        if total == f64::NEG_INFINITY {
            break;
        }
    }
    Ok(total)
}

/// Monte Carlo estimate of `L^(H)` at `prefix` from `J` rollouts of length
/// `min(H·B, T − t)` drawn from `p̃^(tau_roll)`.
pub fn estimate_log_lookahead<R: Rng + ?Sized>(
    spec: &TargetSpec,
    prefix: &[Token],
    cfg: &LookaheadConfig,
    rng: &mut R,
) -> Result<LookaheadEstimate> {
    cfg.validate()?;
    spec.model.vocab().check(prefix)?;
    let length = (cfg.horizon_blocks * spec.block_size).min(spec.horizon.saturating_sub(prefix.len()));
    let mut estimate = LookaheadEstimate {
        log_value: 0.0,
        config: *cfg,
        rollouts: Vec::new(),
        log_terms: Vec::new(),
        all_rejected: false,
        tokens_drawn: 0,
    };
    if length == 0 || spec.is_terminated(prefix) {
        return Ok(estimate);
    }
    for _ in 0..cfg.rollouts {
        let rollout = sample_tokens(spec.model.as_ref(), &spec.prompt, prefix, length, cfg.tau_roll, rng)?;
        estimate.tokens_drawn += rollout.tokens.len() as u64;
        estimate.log_terms.push(rollout_log_weight(spec, prefix, &rollout)?);
        estimate.rollouts.push(rollout);
    }
    estimate.log_value = log_mean_exp(&estimate.log_terms);
    estimate.all_rejected = estimate.log_value == f64::NEG_INFINITY;
    Ok(estimate)
}

#[derive(Debug, Clone)]
pub struct MonteCarloLookahead {
    pub spec: TargetSpec,
    pub config: LookaheadConfig,
}

impl LookaheadProvider for MonteCarloLookahead {
    fn log_lookahead(&self, prefix: &[Token], rng: &mut dyn RngCore) -> Result<LookaheadValue> {
        let est = estimate_log_lookahead(&self.spec, prefix, &self.config, rng)?;
        Ok(LookaheadValue {
            log_value: est.log_value,
            tokens_drawn: est.tokens_drawn,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::potential::{ConstantOne, PotentialDecl, PredicateDecl};
    use crate::target::Family;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn cfg(rollouts: usize, tau_roll: f64) -> LookaheadConfig {
        LookaheadConfig {
            rollouts,
            horizon_blocks: 1,
            tau_roll,
            mode: LookaheadMode::Estimated,
        }
    }

    #[test]
    fn reward_free_family_one_cancels_exactly() {
        let s = fixtures::random_spec(Family::Tempered, 3.0, 4, 1, 2).with_potential(Arc::new(ConstantOne));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for j in [1, 3, 17] {
            let c = LookaheadConfig {
                horizon_blocks: 4,
                ..cfg(j, 3.0)
            };
            let est = estimate_log_lookahead(&s, &[Token(0)], &c, &mut rng).unwrap();
            assert_eq!(est.log_value, 0.0);
            assert_eq!(est.rollouts.len(), j);
        }
    }

    #[test]
    fn worked_fixture_mean_matches_enumeration() {
        let s = fixtures::worked_spec(Family::Powered, 1.0, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 100_000;
        let vals: Vec<f64> = (0..n)
            .map(|_| {
                estimate_log_lookahead(&s, &[Token(1)], &cfg(1, 1.0), &mut rng)
                    .unwrap()
                    .log_value
                    .exp()
            })
            .collect();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!((mean - 1.6).abs() < 3.0 * se, "mean {mean}, se {se}");
    }

    #[test]
    fn large_j_is_consistent() {
        let s = fixtures::worked_spec(Family::Powered, 1.0, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let est = estimate_log_lookahead(&s, &[Token(1)], &cfg(4096, 1.0), &mut rng).unwrap();
        assert!((est.log_value.exp() - 1.6).abs() < 0.02);
    }

    #[test]
    fn at_horizon_or_terminated_is_one() {
        let s = fixtures::worked_spec(Family::Powered, 1.0, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let est = estimate_log_lookahead(&s, &[Token(1), Token(0)], &cfg(2, 1.0), &mut rng).unwrap();
        assert_eq!(est.log_value, 0.0);
        assert!(est.rollouts.is_empty());
        let est = estimate_log_lookahead(&s, &[Token(2)], &cfg(2, 1.0), &mut rng).unwrap();
        assert_eq!(est.log_value, 0.0);
    }

    #[test]
    fn all_rejected_is_flagged() {
        let s = fixtures::worked_spec(Family::Powered, 1.0, 1);
        let reject = PotentialDecl::Terminal {
            predicate: PredicateDecl::Equals("0 0 0".into()),
            epsilon: 0.0,
        }
        .build(s.model.vocab())
        .unwrap();
        let s = s.with_potential(reject);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let est = estimate_log_lookahead(&s, &[Token(1)], &cfg(8, 1.0), &mut rng).unwrap();
        assert!(est.all_rejected);
        assert_eq!(est.log_value, f64::NEG_INFINITY);
    }

    #[test]
    fn invalid_config() {
        let s = fixtures::worked_spec(Family::Powered, 1.0, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(estimate_log_lookahead(&s, &[], &cfg(0, 1.0), &mut rng).is_err());
        assert!(estimate_log_lookahead(&s, &[], &cfg(1, 0.0), &mut rng).is_err());
    }

    #[test]
    fn truncated_exact_lookahead() {
        let s = fixtures::random_spec(Family::Powered, 2.0, 4, 1, 3);
        let full = ExactLookahead::new(s.clone());
        let trunc = ExactLookahead::truncated(s.clone(), 4);
        let one = ExactLookahead::truncated(s.clone(), 1);
        let p = [Token(0)];
        assert_eq!(full.log_value(&p).unwrap(), trunc.log_value(&p).unwrap());
        let base = next_token_dist(s.model.as_ref(), "", &p).unwrap();
        let manual: Vec<f64> = s
            .model
            .vocab()
            .tokens()
            .map(|v| {
                let mut ext = p.to_vec();
                ext.push(v);
                log_transition_from(&s, &base, v).unwrap() + log_psi_at(&s, &ext)
            })
            .collect();
        assert!((one.log_value(&p).unwrap() - log_sum_exp(&manual)).abs() < 1e-14);
    }
}
