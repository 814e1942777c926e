//! Brute-force enumeration of small instances.
//!
//! Every canonical (eos-padded) sequence of length `T` is listed together with
//! its per-position log factors `log m_t + log ψ_t`, from which normalizers,
//! marginals, lookahead terms and the weight mean-square-error decomposition
//! follow by direct summation. Nothing here shares code paths with the
//! recursive lookahead in [`crate::lookahead`], so the two can check each other.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::logspace::{log_sum_exp, CompensatedSum};
use crate::model::{next_token_dist, temper, Token};
use crate::target::{log_psi_at, log_transition, unified_log_density, TargetSpec};

/// Default bound on `|V|^T`.
pub const DEFAULT_STATE_CAP: u64 = 1_000_000;

#[derive(Debug, Clone)]
pub struct EnumeratedTarget {
    pub spec: TargetSpec,
    /// Canonical sequences, each of length `T`, in lexicographic token order.
    pub sequences: Vec<Vec<Token>>,
    /// Unnormalized `log Π` per sequence.
    pub log_masses: Vec<f64>,
    /// `log m_t + log ψ_t` for `t = 1..=T` per sequence.
    pub log_factors: Vec<Vec<f64>>,
    pub log_z: f64,
}

/// How far a lookahead sums into the future.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Horizon {
    Full,
    /// `H` blocks of `B` tokens, clipped at `T`.
    Blocks(usize),
}

pub fn enumerate(spec: &TargetSpec) -> Result<EnumeratedTarget> {
    enumerate_with_cap(spec, DEFAULT_STATE_CAP)
}

pub fn enumerate_with_cap(spec: &TargetSpec, cap: u64) -> Result<EnumeratedTarget> {
    let vocab = spec.model.vocab();
    let states = (vocab.len() as u128)
        .checked_pow(spec.horizon as u32)
        .unwrap_or(u128::MAX);
    if states > cap as u128 {
        return Err(Error::InstanceTooLarge { states, cap });
    }

    let mut sequences = Vec::new();
    let mut stack = vec![Vec::new()];
    while let Some(prefix) = stack.pop() {
        if prefix.len() == spec.horizon {
            sequences.push(prefix);
            continue;
        }
        if spec.is_terminated(&prefix) {
            sequences.push(spec.pad(&prefix));
            continue;
        }
        // Reverse so the stack pops in lexicographic order.
        for tok in vocab.tokens().collect::<Vec<_>>().into_iter().rev() {
            let mut next = prefix.clone();
            next.push(tok);
            stack.push(next);
        }
    }

    let mut log_masses = Vec::with_capacity(sequences.len());
    let mut log_factors = Vec::with_capacity(sequences.len());
    for seq in &sequences {
        let mut factors = Vec::with_capacity(spec.horizon);
        for t in 0..spec.horizon {
            let m = log_transition(spec, &seq[..t], seq[t])?;
            let f = if m == f64::NEG_INFINITY {
                m
            } else {
                m + log_psi_at(spec, &seq[..=t])
            };
            factors.push(f);
        }
        log_masses.push(unified_log_density(spec, seq)?);
        log_factors.push(factors);
    }
    let log_z = log_sum_exp(&log_masses);
    Ok(EnumeratedTarget {
        spec: spec.clone(),
        sequences,
        log_masses,
        log_factors,
        log_z,
    })
}

impl EnumeratedTarget {
    pub fn z(&self) -> f64 {
        self.log_z.exp()
    }

    /// Normalized `Π` keyed by canonical sequence (zero-mass sequences included).
    pub fn distribution(&self) -> BTreeMap<Vec<Token>, f64> {
        self.sequences
            .iter()
            .zip(&self.log_masses)
            .map(|(s, m)| (s.clone(), (m - self.log_z).exp()))
            .collect()
    }

    /// Tab-separated table: rendered sequence, unnormalized log-mass, probability.
    pub fn to_table(&self) -> String {
        let vocab = self.spec.model.vocab();
        let mut out = String::from("sequence\tlog_mass\tprobability\n");
        for (s, m) in self.sequences.iter().zip(&self.log_masses) {
            let _ = writeln!(out, "{}\t{:.12e}\t{:.12e}", vocab.render(s), m, (m - self.log_z).exp());
        }
        out
    }

    pub fn write_table(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        fs::write(path, self.to_table())
    }

    fn matching<'a>(&'a self, prefix: &'a [Token]) -> impl Iterator<Item = usize> + 'a {
        let canonical = self.spec.model.vocab().pad(prefix, prefix.len());
        (0..self.sequences.len()).filter(move |&i| self.sequences[i][..canonical.len()] == canonical[..])
    }
}

/// Marginal of `Π` on the first `t` tokens, keyed by canonical prefix.
pub fn oracle_marginal(target: &EnumeratedTarget, t: usize) -> Result<BTreeMap<Vec<Token>, f64>> {
    if t > target.spec.horizon {
        return Err(Error::InvalidParameter(format!(
            "t = {t} exceeds horizon {}",
            target.spec.horizon
        )));
    }
    let mut out: BTreeMap<Vec<Token>, f64> = BTreeMap::new();
    for (s, m) in target.sequences.iter().zip(&target.log_masses) {
        *out.entry(s[..t].to_vec()).or_insert(0.0) += (m - target.log_z).exp();
    }
    Ok(out)
}

/// `log L(prefix) = log Σ_{x_{t+1:end}} Π_{s=t+1}^{end} m_s ψ_s`, with
/// `end = T` or `min(T, t + H·B)`.
pub fn oracle_log_lookahead(target: &EnumeratedTarget, prefix: &[Token], horizon: Horizon) -> Result<f64> {
    let spec = &target.spec;
    let t = prefix.len();
    if t > spec.horizon {
        return Err(Error::InvalidParameter("prefix longer than horizon".into()));
    }
    spec.model.vocab().check(prefix)?;
    if t == spec.horizon || spec.is_terminated(prefix) {
        return Ok(0.0);
    }
    let end = match horizon {
        Horizon::Full => spec.horizon,
        Horizon::Blocks(h) => spec.horizon.min(t + h * spec.block_size),
    };
    // Distinct continuations up to `end`; sequences sharing them agree on the
    // factors in `t..end`.
    let mut terms: BTreeMap<&[Token], f64> = BTreeMap::new();
    for i in target.matching(prefix) {
        let f = &target.log_factors[i][t..end];
        terms.entry(&target.sequences[i][t..end]).or_insert_with(|| {
            if f.contains(&f64::NEG_INFINITY) {
                f64::NEG_INFINITY
            } else {
                f.iter().sum()
            }
        });
    }
    Ok(log_sum_exp(&terms.into_values().collect::<Vec<_>>()))
}

pub fn oracle_lookahead(target: &EnumeratedTarget, prefix: &[Token], horizon: Horizon) -> Result<f64> {
    Ok(oracle_log_lookahead(target, prefix, horizon)?.exp())
}

/// Normalized prefix-only target `γ^prf_t ∝ Π_{s≤t} m_s ψ_s` on prefixes of length `t`.
pub fn oracle_prefix_target(target: &EnumeratedTarget, t: usize) -> Result<BTreeMap<Vec<Token>, f64>> {
    if t > target.spec.horizon {
        return Err(Error::InvalidParameter("t exceeds horizon".into()));
    }
    let mut log_gamma: BTreeMap<Vec<Token>, f64> = BTreeMap::new();
    for (s, f) in target.sequences.iter().zip(&target.log_factors) {
        log_gamma.entry(s[..t].to_vec()).or_insert_with(|| {
            if f[..t].contains(&f64::NEG_INFINITY) {
                f64::NEG_INFINITY
            } else {
                f[..t].iter().sum()
            }
        });
    }
    let values: Vec<f64> = log_gamma.values().copied().collect();
    let lse = log_sum_exp(&values);
    if !lse.is_finite() {
        return Err(Error::DegenerateDistribution);
    }
    Ok(log_gamma.into_iter().map(|(k, v)| (k, (v - lse).exp())).collect())
}

/// The quantities of the prefix-versus-lookahead weight error decomposition at
/// one time `t`, computed exactly over all proposal paths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MseReport {
    pub t: usize,
    /// `E[(W_T − W_t^prf)²]`.
    pub mse_prefix: f64,
    /// `E[(W_T − W_t^prf L_t)²]`.
    pub mse_lookahead: f64,
    /// `E[(W_t^prf)² (L_t − 1)²]`.
    pub excess_prefix: f64,
    /// `E[Var(W_T | x_1:t)]`, computed from conditional moments.
    pub expected_conditional_variance: f64,
}

impl MseReport {
    /// `|mse_prefix − mse_lookahead − excess| / max(mse_prefix, floor)`.
    pub fn identity_residual(&self) -> f64 {
        let scale = self.mse_prefix.abs().max(1e-300);
        (self.mse_prefix - self.mse_lookahead - self.excess_prefix).abs() / scale
    }

    pub fn identity_holds(&self, rel_tol: f64) -> bool {
        let scale = self.mse_prefix.abs().max(1e-12);
        (self.mse_prefix - self.mse_lookahead - self.excess_prefix).abs() <= rel_tol * scale
    }
}

/// Exact weight MSEs at time `t` for proposal `r_s = p̃^(τ)`.
pub fn oracle_mse_weights(target: &EnumeratedTarget, proposal_tau: f64, t: usize) -> Result<MseReport> {
    let spec = &target.spec;
    if t > spec.horizon {
        return Err(Error::InvalidParameter("t exceeds horizon".into()));
    }
    // Per sequence: proposal log-probability and log W at t and at T.
    struct Path {
        log_r: f64,
        log_w_t: f64,
        log_w_full: f64,
    }
    let mut paths = Vec::with_capacity(target.sequences.len());
    for (seq, factors) in target.sequences.iter().zip(&target.log_factors) {
        let mut log_r = 0.0;
        let mut log_w = 0.0;
        let mut log_w_t = 0.0;
        for s in 0..spec.horizon {
            let (proposal, _) = temper(
                &next_token_dist(spec.model.as_ref(), &spec.prompt, &seq[..s])?,
                proposal_tau,
            )?;
            let lr = proposal.log_prob(seq[s]);
            log_r += lr;
            log_w = if factors[s] == f64::NEG_INFINITY || log_w == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                log_w + factors[s] - lr
            };
            if s + 1 == t {
                log_w_t = log_w;
            }
        }
        if t == 0 {
            log_w_t = 0.0;
        }
        paths.push(Path {
            log_r,
            log_w_t,
            log_w_full: log_w,
        });
    }

    let mut lookahead: BTreeMap<Vec<Token>, f64> = BTreeMap::new();
    for seq in &target.sequences {
        if !lookahead.contains_key(&seq[..t]) {
            let l = oracle_lookahead(target, &seq[..t], Horizon::Full)?;
            lookahead.insert(seq[..t].to_vec(), l);
        }
    }

    let mut mse_prefix = CompensatedSum::new();
    let mut mse_lookahead = CompensatedSum::new();
    let mut excess = CompensatedSum::new();
    // Conditional moments of W_T per prefix: (R(prefix), E_R[W_T 1{prefix}], E_R[W_T² 1{prefix}]).
    let mut moments: BTreeMap<&[Token], (CompensatedSum, CompensatedSum, CompensatedSum)> = BTreeMap::new();
    for (seq, p) in target.sequences.iter().zip(&paths) {
        if p.log_r == f64::NEG_INFINITY {
            continue;
        }
        let r = p.log_r.exp();
        let w_full = p.log_w_full.exp();
        let w_t = p.log_w_t.exp();
        let l = lookahead[&seq[..t]];
        mse_prefix.add(r * (w_full - w_t).powi(2));
        mse_lookahead.add(r * (w_full - w_t * l).powi(2));
        excess.add(r * (w_t * (l - 1.0)).powi(2));
        let entry = moments.entry(&seq[..t]).or_default();
        entry.0.add(r);
        entry.1.add(r * w_full);
        entry.2.add(r * w_full * w_full);
    }
    let mut cond_var = CompensatedSum::new();
    for (mass, first, second) in moments.values() {
        let mass = mass.value();
        if mass > 0.0 {
            let mean = first.value() / mass;
            cond_var.add(second.value() - mass * mean * mean);
        }
    }
    Ok(MseReport {
        t,
        mse_prefix: mse_prefix.value(),
        mse_lookahead: mse_lookahead.value(),
        excess_prefix: excess.value(),
        expected_conditional_variance: cond_var.value(),
    })
}

/// `½ Σ |a_i − b_i|` over a shared, index-aligned support.
pub fn tv_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::SupportMismatch(format!(
            "supports of size {} and {}",
            a.len(),
            b.len()
        )));
    }
    let total: CompensatedSum = a.iter().zip(b).map(|(x, y)| (x - y).abs()).collect();
    Ok(0.5 * total.value())
}

/// TV distance between an empirical distribution and a reference whose keys
/// enumerate the whole support; keys of `empirical` outside it are an error.
pub fn tv_distance_keyed<K: Ord + std::fmt::Debug>(
    empirical: &BTreeMap<K, f64>,
    reference: &BTreeMap<K, f64>,
) -> Result<f64> {
    if let Some(k) = empirical.keys().find(|k| !reference.contains_key(*k)) {
        return Err(Error::SupportMismatch(format!(
            "{k:?} is outside the reference support"
        )));
    }
    let a: Vec<f64> = reference
        .keys()
        .map(|k| empirical.get(k).copied().unwrap_or(0.0))
        .collect();
    let b: Vec<f64> = reference.values().copied().collect();
    tv_distance(&a, &b)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::fixtures::{random_spec, worked_spec};
    use crate::lookahead::ExactLookahead;
    use crate::model::{Distribution, TabularModel, Vocabulary};
    use crate::potential::ConstantOne;
    use crate::target::{exact_conditional_next_token, Family};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toks(v: &[u32]) -> Vec<Token> {
        v.iter().map(|&i| Token(i)).collect()
    }

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-300)
    }

    #[test]
    fn worked_masses_and_normalizer() {
        let e = enumerate(&worked_spec(Family::Powered, 1.0, 1)).unwrap();
        let masses: Vec<f64> = e.log_masses.iter().map(|m| m.exp()).collect();
        // Canonical sequences: 0 0, 0 1, 0 E, 1 0, 1 1, 1 E, E E.
        assert_eq!(e.sequences.len(), 7);
        let expect = [0.08, 0.24, 0.0, 0.32, 0.96, 0.0, 0.0];
        for (m, x) in masses.iter().zip(expect) {
            assert!((m - x).abs() < 1e-12, "{masses:?}");
        }
        assert!((e.z() - 1.6).abs() < 1e-12);
    }

    #[test]
    fn reward_free_normalizer_is_one() {
        for seed in 0..5 {
            let spec = random_spec(Family::Tempered, 1.0, 4, 1, seed).with_potential(Arc::new(ConstantOne));
            let e = enumerate(&spec).unwrap();
            assert!(e.log_z.abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_model_gives_uniform_target() {
        let vocab = Vocabulary::new(["a", "b", "E"], 2).unwrap();
        let model = TabularModel::new(vocab, 0)
            .with_default(Distribution::from_probs(&[0.5, 0.5, 0.0]).unwrap())
            .unwrap();
        let spec = TargetSpec::new(Family::Powered, 2.0, 3, 1, Arc::new(model), Arc::new(ConstantOne), "").unwrap();
        let e = enumerate(&spec).unwrap();
        let live: Vec<f64> = e.log_masses.iter().copied().filter(|m| m.is_finite()).collect();
        assert_eq!(live.len(), 8);
        for m in &live {
            assert!((m - (0.5f64).powi(6).ln()).abs() < 1e-12);
        }
        for p in e.distribution().values().filter(|p| **p > 0.0) {
            assert!((p - 0.125).abs() < 1e-12);
        }
    }

    #[test]
    fn cap_is_a_hard_error() {
        let spec = random_spec(Family::Tempered, 1.0, 6, 1, 0);
        assert!(matches!(
            enumerate_with_cap(&spec, 100),
            Err(Error::InstanceTooLarge { states: 729, cap: 100 })
        ));
    }

    #[test]
    fn worked_marginals() {
        let e = enumerate(&worked_spec(Family::Powered, 1.0, 1)).unwrap();
        let m0 = oracle_marginal(&e, 0).unwrap();
        assert_eq!(m0.len(), 1);
        assert!((m0[&vec![]] - 1.0).abs() < 1e-12);
        let m1 = oracle_marginal(&e, 1).unwrap();
        assert!((m1[&toks(&[0])] - 0.2).abs() < 1e-12);
        assert!((m1[&toks(&[1])] - 0.8).abs() < 1e-12);
        let m2 = oracle_marginal(&e, 2).unwrap();
        assert!((m2[&toks(&[1, 1])] - 0.6).abs() < 1e-12);
        assert!(oracle_marginal(&e, 3).is_err());
    }

    #[test]
    fn marginals_are_consistent_across_t() {
        for seed in 0..4 {
            for family in [Family::Tempered, Family::Powered] {
                let e = enumerate(&random_spec(family, 2.0, 4, 1, seed)).unwrap();
                for t in 1..=4 {
                    let fine = oracle_marginal(&e, t).unwrap();
                    let coarse = oracle_marginal(&e, t - 1).unwrap();
                    let mut summed: BTreeMap<Vec<Token>, f64> = BTreeMap::new();
                    for (k, v) in fine {
                        *summed.entry(k[..t - 1].to_vec()).or_insert(0.0) += v;
                    }
                    for (k, v) in coarse {
                        assert!(close(summed[&k], v, 1e-12));
                    }
                }
            }
        }
    }

    #[test]
    fn worked_lookahead_values() {
        let e = enumerate(&worked_spec(Family::Powered, 1.0, 1)).unwrap();
        assert!((oracle_lookahead(&e, &toks(&[1]), Horizon::Full).unwrap() - 1.6).abs() < 1e-12);
        assert!((oracle_lookahead(&e, &toks(&[0]), Horizon::Full).unwrap() - 1.6).abs() < 1e-12);
        assert_eq!(oracle_lookahead(&e, &toks(&[1, 1]), Horizon::Full).unwrap(), 1.0);
        assert!((oracle_lookahead(&e, &[], Horizon::Full).unwrap() - 1.6).abs() < 1e-12);
    }

    #[test]
    fn reward_free_tempered_lookahead_is_one() {
        let spec = random_spec(Family::Tempered, 3.0, 4, 1, 2).with_potential(Arc::new(ConstantOne));
        let e = enumerate(&spec).unwrap();
        for t in 0..=4 {
            for prefix in oracle_marginal(&e, t).unwrap().keys() {
                let l = oracle_log_lookahead(&e, prefix, Horizon::Full).unwrap();
                assert!(l.abs() < 1e-12, "{prefix:?}: {l}");
            }
        }
    }

    #[test]
    fn lookahead_backward_recursion() {
        for seed in 0..4 {
            for family in [Family::Tempered, Family::Powered] {
                let spec = random_spec(family, 2.0, 4, 1, seed);
                let e = enumerate(&spec).unwrap();
                for t in 1..=4 {
                    for prefix in oracle_marginal(&e, t - 1).unwrap().keys() {
                        if spec.is_terminated(prefix) {
                            continue;
                        }
                        let lhs = oracle_lookahead(&e, prefix, Horizon::Full).unwrap();
                        let mut rhs = 0.0;
                        for v in spec.model.vocab().tokens() {
                            let mut ext = prefix.clone();
                            ext.push(v);
                            let m = log_transition(&spec, prefix, v).unwrap();
                            let f = m + log_psi_at(&spec, &ext);
                            rhs += (f + oracle_log_lookahead(&e, &ext, Horizon::Full).unwrap()).exp();
                        }
                        assert!(close(lhs, rhs, 1e-12), "{prefix:?}: {lhs} vs {rhs}");
                    }
                }
            }
        }
    }

    #[test]
    fn truncated_lookahead_agrees_with_recursive_provider() {
        let spec = random_spec(Family::Powered, 2.0, 4, 2, 5);
        let e = enumerate(&spec).unwrap();
        let exact = ExactLookahead::truncated(spec.clone(), 2);
        for prefix in oracle_marginal(&e, 1).unwrap().keys() {
            let a = oracle_log_lookahead(&e, prefix, Horizon::Blocks(1)).unwrap();
            let b = exact.log_value(prefix).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
        // Blocks beyond the horizon clip to the full lookahead.
        let p = toks(&[0]);
        assert_eq!(
            oracle_log_lookahead(&e, &p, Horizon::Blocks(10)).unwrap(),
            oracle_log_lookahead(&e, &p, Horizon::Full).unwrap()
        );
    }

    #[test]
    fn exact_conditionals_match_marginal_ratios() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for seed in 0..3 {
            for family in [Family::Tempered, Family::Powered] {
                let spec = random_spec(family, 4.0, 4, 1, seed);
                let e = enumerate(&spec).unwrap();
                let provider = OracleProvider(&e);
                for t in 0..4 {
                    let coarse = oracle_marginal(&e, t).unwrap();
                    let fine = oracle_marginal(&e, t + 1).unwrap();
                    for (prefix, p) in &coarse {
                        if *p == 0.0 || spec.is_terminated(prefix) {
                            continue;
                        }
                        let cond = exact_conditional_next_token(&spec, prefix, &provider, &mut rng).unwrap();
                        for v in spec.model.vocab().tokens() {
                            let mut ext = prefix.clone();
                            ext.push(v);
                            assert!(close(cond.prob(v), fine[&ext] / p, 1e-9));
                        }
                    }
                }
            }
        }
    }

    struct OracleProvider<'a>(&'a EnumeratedTarget);

    impl crate::lookahead::LookaheadProvider for OracleProvider<'_> {
        fn log_lookahead(
            &self,
            prefix: &[Token],
            _: &mut dyn rand::RngCore,
        ) -> Result<crate::lookahead::LookaheadValue> {
            Ok(crate::lookahead::LookaheadValue {
                log_value: oracle_log_lookahead(self.0, prefix, Horizon::Full)?,
                tokens_drawn: 0,
            })
        }
    }

    #[test]
    fn mse_vanishes_for_perfect_proposal() {
        let spec = random_spec(Family::Tempered, 1.0, 4, 1, 1).with_potential(Arc::new(ConstantOne));
        let e = enumerate(&spec).unwrap();
        for t in 0..=4 {
            let r = oracle_mse_weights(&e, 1.0, t).unwrap();
            assert!(r.mse_prefix.abs() < 1e-20 && r.mse_lookahead.abs() < 1e-20 && r.excess_prefix.abs() < 1e-20);
        }
    }

    #[test]
    fn worked_mse_closed_form() {
        let e = enumerate(&worked_spec(Family::Powered, 1.0, 1)).unwrap();
        let r = oracle_mse_weights(&e, 1.0, 1).unwrap();
        // L_1 = 1.6 for both first tokens and W^prf = 1 under the base proposal.
        assert!((r.excess_prefix - 0.36).abs() < 1e-12);
        // W_T ∈ {1, 2} with probability (0.2·0.4 + 0.8·0.4, 0.2·0.6 + 0.8·0.6).
        let expect_prefix = 0.6 * 1.0;
        let expect_look = 0.4 * 0.6f64.powi(2) + 0.6 * 0.4f64.powi(2);
        assert!((r.mse_prefix - expect_prefix).abs() < 1e-12);
        assert!((r.mse_lookahead - expect_look).abs() < 1e-12);
        assert!(r.identity_holds(1e-9));
    }

    #[test]
    fn mse_at_horizon_is_zero() {
        let e = enumerate(&random_spec(Family::Powered, 2.0, 3, 1, 0)).unwrap();
        let r = oracle_mse_weights(&e, 1.0, 3).unwrap();
        assert_eq!(r.mse_prefix, 0.0);
        assert_eq!(r.mse_lookahead, 0.0);
    }

    #[test]
    fn mse_identity_on_random_instances() {
        for seed in 0..6 {
            for family in [Family::Tempered, Family::Powered] {
                for tau in [1.0, 2.0] {
                    let e = enumerate(&random_spec(family, 2.0, 4, 1, seed)).unwrap();
                    for t in 0..=4 {
                        let r = oracle_mse_weights(&e, tau, t).unwrap();
                        assert!(r.identity_holds(1e-9), "{r:?}");
                        assert!(r.mse_prefix >= r.mse_lookahead);
                        assert!(
                            close(r.mse_lookahead, r.expected_conditional_variance, 1e-9) || r.mse_lookahead < 1e-15
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn tv_examples() {
        assert_eq!(tv_distance(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert_eq!(tv_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert!((tv_distance(&[0.6, 0.4], &[0.5, 0.5]).unwrap() - 0.1).abs() < 1e-15);
        assert!(matches!(
            tv_distance(&[1.0], &[0.5, 0.5]),
            Err(Error::SupportMismatch(_))
        ));
        let reference: BTreeMap<u8, f64> = [(0, 0.5), (1, 0.5)].into();
        let outside: BTreeMap<u8, f64> = [(2, 1.0)].into();
        assert!(tv_distance_keyed(&outside, &reference).is_err());
        let partial: BTreeMap<u8, f64> = [(0, 1.0)].into();
        assert!((tv_distance_keyed(&partial, &reference).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn prefix_target_of_worked_fixture() {
        let e = enumerate(&worked_spec(Family::Powered, 1.0, 1)).unwrap();
        let g = oracle_prefix_target(&e, 1).unwrap();
        assert!((g[&toks(&[1])] - 0.8).abs() < 1e-12);
        assert_eq!(g[&toks(&[2])], 0.0);
    }
}
