//! Full-sequence targets and their intermediate targets.
//!
//! Both families share the form `Π(x) ∝ Π_t m_t(x_t | q, x_<t) ψ_t(x_1:t, q)`:
//!
//! - family I uses the tempered conditional `m_t = p̃^(α) = p^α / Z_t`,
//! - family II uses the powered conditional `m_t = p^α`.
//!
//! The prefix target `γ^prf_t` keeps the factors up to `t`; the lookahead
//! target multiplies it by the future mass `L_t`, which makes it the exact
//! marginal of `Π`.

use std::fmt;
use std::ops::Range;
use std::sync::Arc;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logspace::log_sum_exp;
use crate::lookahead::LookaheadProvider;
use crate::model::{next_token_dist, temper, AutoregressiveModel, Distribution, Token};
use crate::potential::{log_psi, RewardPotential, SeqContext};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    /// Product of tempered next-token distributions.
    #[serde(rename = "I")]
    Tempered,
    /// Base sequence probability raised to the power `α`.
    #[serde(rename = "II")]
    Powered,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Tempered => "I",
            Family::Powered => "II",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntermediateTarget {
    Prefix,
    Lookahead,
}

#[derive(Clone)]
pub struct TargetSpec {
    pub family: Family,
    pub alpha: f64,
    pub horizon: usize,
    pub block_size: usize,
    pub model: Arc<dyn AutoregressiveModel>,
    pub potential: Arc<dyn RewardPotential>,
    pub prompt: String,
}

impl fmt::Debug for TargetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TargetSpec")
            .field("family", &self.family)
            .field("alpha", &self.alpha)
            .field("horizon", &self.horizon)
            .field("block_size", &self.block_size)
            .field("potential", &self.potential)
            .field("prompt", &self.prompt)
            .finish_non_exhaustive()
    }
}

impl TargetSpec {
    pub fn new(
        family: Family,
        alpha: f64,
        horizon: usize,
        block_size: usize,
        model: Arc<dyn AutoregressiveModel>,
        potential: Arc<dyn RewardPotential>,
        prompt: impl Into<String>,
    ) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!("alpha must be positive, got {alpha}")));
        }
        if horizon == 0 || block_size == 0 || block_size > horizon {
            return Err(Error::InvalidParameter(format!(
                "need 1 <= block size <= horizon, got B = {block_size}, T = {horizon}"
            )));
        }
        Ok(Self {
            family,
            alpha,
            horizon,
            block_size,
            model,
            potential,
            prompt: prompt.into(),
        })
    }

    pub fn with_family(&self, family: Family) -> Self {
        Self { family, ..self.clone() }
    }

    pub fn with_block_size(&self, block_size: usize) -> Result<Self> {
        Self::new(
            self.family,
            self.alpha,
            self.horizon,
            block_size,
            self.model.clone(),
            self.potential.clone(),
            self.prompt.clone(),
        )
    }

    pub fn with_potential(&self, potential: Arc<dyn RewardPotential>) -> Self {
        Self {
            potential,
            ..self.clone()
        }
    }

    pub fn eos(&self) -> Token {
        self.model.vocab().eos()
    }

    pub fn seq_context(&self) -> SeqContext {
        SeqContext {
            horizon: self.horizon,
            eos: self.eos(),
        }
    }

    /// `K = ceil(T / B)`.
    pub fn num_blocks(&self) -> usize {
        self.horizon.div_ceil(self.block_size)
    }

    /// Zero-based token indices of block `k` (1-based); the last block may be short.
    pub fn block_range(&self, k: usize) -> Range<usize> {
        let start = (k - 1) * self.block_size;
        start..(k * self.block_size).min(self.horizon)
    }

    pub fn is_terminated(&self, prefix: &[Token]) -> bool {
        self.model.vocab().is_terminated(prefix)
    }

    pub fn pad(&self, seq: &[Token]) -> Vec<Token> {
        self.model.vocab().pad(seq, self.horizon)
    }
}

/// `log m_t(token | q, prefix)` for the family of `spec`, from a precomputed
/// base conditional.
pub fn log_transition_from(spec: &TargetSpec, base: &Distribution, token: Token) -> Result<f64> {
    Ok(match spec.family {
        Family::Tempered => temper(base, spec.alpha)?.0.log_prob(token),
        Family::Powered => {
            let lp = base.log_prob(token);
            if lp == f64::NEG_INFINITY {
                lp
            } else {
                spec.alpha * lp
            }
        }
    })
}

pub fn log_transition(spec: &TargetSpec, prefix: &[Token], token: Token) -> Result<f64> {
    let base = next_token_dist(spec.model.as_ref(), &spec.prompt, prefix)?;
    log_transition_from(spec, &base, token)
}

/// `log ψ_t` at the end of `prefix`.
pub fn log_psi_at(spec: &TargetSpec, prefix: &[Token]) -> f64 {
    log_psi(spec.potential.as_ref(), prefix, &spec.prompt, &spec.seq_context())
}

/// `(log m_t, log ψ_t)` for each position in `range` of `seq`.
fn step_terms(spec: &TargetSpec, seq: &[Token], range: Range<usize>) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::with_capacity(range.len());
    for t in range {
        let m = log_transition(spec, &seq[..t], seq[t])?;
        let psi = log_psi_at(spec, &seq[..=t]);
        out.push((m, psi));
    }
    Ok(out)
}

fn sum_terms(terms: &[(f64, f64)]) -> f64 {
    let mut total = 0.0;
    for (m, psi) in terms {
        total += m + psi;
    }
    total
}

/// Unnormalized `log Π(seq)`; `seq` is padded with eos up to the horizon.
pub fn unified_log_density(spec: &TargetSpec, seq: &[Token]) -> Result<f64> {
    if seq.len() > spec.horizon {
        return Err(Error::InvalidParameter(format!(
            "sequence of length {} exceeds horizon {}",
            seq.len(),
            spec.horizon
        )));
    }
    spec.model.vocab().check(seq)?;
    let padded = spec.pad(seq);
    Ok(sum_terms(&step_terms(spec, &padded, 0..spec.horizon)?))
}

/// `log γ^prf_t(prefix) = Σ_{s ≤ t} [log m_s + log ψ_s]`.
pub fn prefix_log_gamma(spec: &TargetSpec, prefix: &[Token]) -> Result<f64> {
    if prefix.len() > spec.horizon {
        return Err(Error::InvalidParameter("prefix longer than horizon".into()));
    }
    spec.model.vocab().check(prefix)?;
    Ok(sum_terms(&step_terms(spec, prefix, 0..prefix.len())?))
}

/// `log M_k`: transition factors over the tokens of block `k` (1-based).
/// A terminated `seq` is padded with eos as needed.
pub fn block_log_m(spec: &TargetSpec, k: usize, seq: &[Token]) -> Result<f64> {
    let range = spec.block_range(k);
    let padded = spec.model.vocab().pad(seq, range.end.max(seq.len()));
    let mut total = 0.0;
    for t in range {
        total += log_transition(spec, &padded[..t], padded[t])?;
    }
    Ok(total)
}

/// `log Ψ_k`: potentials over the tokens of block `k` (1-based).
pub fn block_log_psi(spec: &TargetSpec, k: usize, seq: &[Token]) -> Result<f64> {
    let range = spec.block_range(k);
    let padded = spec.model.vocab().pad(seq, range.end.max(seq.len()));
    let mut total = 0.0;
    for t in range {
        total += log_psi_at(spec, &padded[..=t]);
    }
    Ok(total)
}

/// `log L_t(prefix)` from a provider; 0 at the horizon or after eos.
pub fn exact_log_lookahead(
    spec: &TargetSpec,
    prefix: &[Token],
    provider: &dyn LookaheadProvider,
    rng: &mut dyn RngCore,
) -> Result<f64> {
    if prefix.len() >= spec.horizon || spec.is_terminated(prefix) {
        return Ok(0.0);
    }
    Ok(provider.log_lookahead(prefix, rng)?.log_value)
}

/// `log γ^look_t(prefix) = log γ^prf_t(prefix) + log L_t(prefix)`.
pub fn lookahead_log_gamma(
    spec: &TargetSpec,
    prefix: &[Token],
    provider: &dyn LookaheadProvider,
    rng: &mut dyn RngCore,
) -> Result<f64> {
    let prefix_part = prefix_log_gamma(spec, prefix)?;
    if prefix_part == f64::NEG_INFINITY {
        return Ok(prefix_part);
    }
    Ok(prefix_part + exact_log_lookahead(spec, prefix, provider, rng)?)
}

/// `Π(x_t | q, x_<t) ∝ m_t ψ_t L_t` over the vocabulary.
pub fn exact_conditional_next_token(
    spec: &TargetSpec,
    prefix: &[Token],
    provider: &dyn LookaheadProvider,
    rng: &mut dyn RngCore,
) -> Result<Distribution> {
    if prefix.len() >= spec.horizon {
        return Err(Error::InvalidParameter("prefix already at the horizon".into()));
    }
    let vocab = spec.model.vocab();
    if spec.is_terminated(prefix) {
        vocab.check(prefix)?;
        return Ok(Distribution::point_mass(vocab.len(), vocab.eos()));
    }
    let base = next_token_dist(spec.model.as_ref(), &spec.prompt, prefix)?;
    let mut ext = prefix.to_vec();
    let mut weights = Vec::with_capacity(vocab.len());
    for v in vocab.tokens() {
        ext.push(v);
        let mut w = log_transition_from(spec, &base, v)?;
        if w > f64::NEG_INFINITY {
            w += log_psi_at(spec, &ext);
        }
        if w > f64::NEG_INFINITY {
            w += exact_log_lookahead(spec, &ext, provider, rng)?;
        }
        weights.push(w);
        ext.pop();
    }
    if log_sum_exp(&weights) == f64::NEG_INFINITY {
        return Err(Error::DegenerateConditional);
    }
    Distribution::from_log_weights(weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::lookahead::ExactLookahead;
    use crate::model::sequence_logprob;
    use crate::potential::ConstantOne;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(v: &[u32]) -> Vec<Token> {
        v.iter().map(|&x| Token(x)).collect()
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    #[test]
    fn spec_validation() {
        let s = fixtures::worked_spec(Family::Powered, 1.0, 1);
        assert!(s.with_block_size(3).is_err());
        assert!(s.with_block_size(0).is_err());
        assert!(TargetSpec::new(Family::Powered, 0.0, 2, 1, s.model.clone(), s.potential.clone(), "").is_err());
        assert_eq!(s.with_block_size(2).unwrap().num_blocks(), 1);
    }

    #[test]
    fn reward_free_untempered_density_is_sequence_logprob() {
        let s = fixtures::worked_spec(Family::Powered, 1.0, 1).with_potential(Arc::new(ConstantOne));
        for fam in [Family::Tempered, Family::Powered] {
            let s = s.with_family(fam);
            for seq in [t(&[0, 0]), t(&[1, 1]), t(&[0, 1])] {
                let a = unified_log_density(&s, &seq).unwrap();
                let b = sequence_logprob(s.model.as_ref(), "", &seq).unwrap();
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn worked_fixture_masses() {
        let expected = [
            (t(&[0, 0]), 0.08),
            (t(&[0, 1]), 0.24),
            (t(&[1, 0]), 0.32),
            (t(&[1, 1]), 0.96),
        ];
        for fam in [Family::Powered, Family::Tempered] {
            let s = fixtures::worked_spec(fam, 1.0, 1);
            let mut z = 0.0;
            for (seq, mass) in &expected {
                let m = unified_log_density(&s, seq).unwrap().exp();
                assert!((m - mass).abs() < 1e-14, "{fam} {seq:?}: {m}");
                z += m;
            }
            assert!((z - 1.6).abs() < 1e-14);
            let pi11 = unified_log_density(&s, &t(&[1, 1])).unwrap().exp() / z;
            assert!((pi11 - 0.6).abs() < 1e-14);
        }
    }

    #[test]
    fn prefix_gamma_examples_and_recursion() {
        let s = fixtures::worked_spec(Family::Powered, 1.0, 1);
        assert_eq!(prefix_log_gamma(&s, &[]).unwrap(), 0.0);
        assert!((prefix_log_gamma(&s, &t(&[1])).unwrap() - 0.8f64.ln()).abs() < 1e-15);
        for a in 0..2 {
            for b in 0..2 {
                let seq = t(&[a, b]);
                for len in 1..=2 {
                    let diff =
                        prefix_log_gamma(&s, &seq[..len]).unwrap() - prefix_log_gamma(&s, &seq[..len - 1]).unwrap();
                    let step = log_transition(&s, &seq[..len - 1], seq[len - 1]).unwrap() + log_psi_at(&s, &seq[..len]);
                    assert!((diff - step).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn lookahead_examples() {
        let s = fixtures::worked_spec(Family::Powered, 1.0, 1);
        let exact = ExactLookahead::new(s.clone());
        let mut r = rng();
        assert_eq!(exact_log_lookahead(&s, &t(&[1, 1]), &exact, &mut r).unwrap(), 0.0);
        let l1 = exact_log_lookahead(&s, &t(&[1]), &exact, &mut r).unwrap();
        assert!((l1 - 1.6f64.ln()).abs() < 1e-14);

        let g1 = lookahead_log_gamma(&s, &t(&[1]), &exact, &mut r).unwrap();
        let g0 = lookahead_log_gamma(&s, &t(&[0]), &exact, &mut r).unwrap();
        assert!((g1 - 1.28f64.ln()).abs() < 1e-14);
        assert!((g0 - 0.32f64.ln()).abs() < 1e-14);
        assert!((g1.exp() / 1.6 - 0.8).abs() < 1e-14);

        let full = t(&[0, 1]);
        let a = lookahead_log_gamma(&s, &full, &exact, &mut r).unwrap();
        assert!((a - unified_log_density(&s, &full).unwrap()).abs() < 1e-15);

        let free = s.with_potential(Arc::new(ConstantOne)).with_family(Family::Tempered);
        let exact_free = ExactLookahead::new(free.clone());
        for alpha in [1.0, 2.5] {
            let f = TargetSpec { alpha, ..free.clone() };
            let ex = ExactLookahead::new(f.clone());
            assert!(exact_log_lookahead(&f, &t(&[0]), &ex, &mut r).unwrap().abs() < 1e-14);
        }
        let g = lookahead_log_gamma(&free, &t(&[1]), &exact_free, &mut r).unwrap();
        let lp = sequence_logprob(free.model.as_ref(), "", &t(&[1])).unwrap();
        assert!((g - lp).abs() < 1e-14);
    }

    #[test]
    fn block_factors() {
        let s = fixtures::worked_spec(Family::Powered, 1.0, 2);
        let seq = t(&[1, 1]);
        let total = block_log_m(&s, 1, &seq).unwrap() + block_log_psi(&s, 1, &seq).unwrap();
        assert!((total - 0.96f64.ln()).abs() < 1e-14);
        assert!((total - unified_log_density(&s, &seq).unwrap()).abs() < 1e-15);

        let s1 = s.with_block_size(1).unwrap();
        assert_eq!(
            block_log_m(&s1, 2, &seq).unwrap(),
            log_transition(&s1, &seq[..1], seq[1]).unwrap()
        );
        assert_eq!(block_log_psi(&s1, 2, &seq).unwrap(), log_psi_at(&s1, &seq));
    }

    #[test]
    fn block_sums_are_invariant_to_block_size() {
        let s = fixtures::random_spec(Family::Tempered, 2.0, 5, 1, 4);
        let seq = t(&[0, 1, 1, 0, 2]);
        let mut reference = None;
        for b in 1..=5 {
            let sb = s.with_block_size(b).unwrap();
            let mut total = 0.0;
            for k in 1..=sb.num_blocks() {
                total += block_log_m(&sb, k, &seq).unwrap() + block_log_psi(&sb, k, &seq).unwrap();
            }
            let r = *reference.get_or_insert(total);
            assert!((total - r).abs() < 1e-10);
        }
    }

    #[test]
    fn exact_conditional_examples() {
        let s = fixtures::worked_spec(Family::Powered, 1.0, 1);
        let exact = ExactLookahead::new(s.clone());
        let mut r = rng();
        let d = exact_conditional_next_token(&s, &[], &exact, &mut r).unwrap();
        assert!((d.prob(Token(1)) - 0.8).abs() < 1e-14);
        let d = exact_conditional_next_token(&s, &t(&[1]), &exact, &mut r).unwrap();
        assert!((d.prob(Token(1)) - 0.75).abs() < 1e-14);

        let free = s.with_potential(Arc::new(ConstantOne));
        let ex = ExactLookahead::new(free.clone());
        let d = exact_conditional_next_token(&free, &t(&[0]), &ex, &mut r).unwrap();
        let base = next_token_dist(free.model.as_ref(), "", &t(&[0])).unwrap();
        for (a, b) in d.log_probs().iter().zip(base.log_probs()) {
            assert!(a == b || (a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn degenerate_conditional() {
        let s = fixtures::worked_spec(Family::Powered, 1.0, 1);
        let reject_all = crate::potential::PotentialDecl::Terminal {
            predicate: crate::potential::PredicateDecl::Contains("E".into()),
            epsilon: 0.0,
        }
        .build(s.model.vocab())
        .unwrap();
        let s = s.with_potential(reject_all);
        let exact = ExactLookahead::new(s.clone());
        assert_eq!(
            exact_conditional_next_token(&s, &t(&[1]), &exact, &mut rng()),
            Err(Error::DegenerateConditional)
        );
    }
}
