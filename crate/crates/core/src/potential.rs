//! Reward potentials `ψ_t(x_1:t, q)`, evaluated in log-space.
//!
//! A potential is only consulted for positions up to and including the first
//! eos; afterwards [`log_psi`] returns 0 so terminated sequences carry no
//! further reward.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Token, Vocabulary};

/// Sequence-level context a potential may depend on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeqContext {
    pub horizon: usize,
    pub eos: Token,
}

impl SeqContext {
    /// True when position `prefix.len()` closes the sequence: either the horizon
    /// is reached or the last token is eos.
    pub fn is_final(&self, prefix: &[Token]) -> bool {
        prefix.len() >= self.horizon || prefix.last() == Some(&self.eos)
    }

    /// The prefix without its trailing eos.
    pub fn content<'a>(&self, prefix: &'a [Token]) -> &'a [Token] {
        match prefix.iter().position(|t| *t == self.eos) {
            Some(i) => &prefix[..i],
            None => prefix,
        }
    }
}

pub trait RewardPotential: Send + Sync + fmt::Debug {
    /// `log ψ_t` for a non-empty prefix whose only possible eos is the last token.
    fn log_psi_raw(&self, prefix: &[Token], prompt: &str, ctx: &SeqContext) -> f64;
}

/// `log ψ_t(x_1:t, q)`: 0 for the empty prefix and for positions after an eos.
pub fn log_psi(potential: &dyn RewardPotential, prefix: &[Token], prompt: &str, ctx: &SeqContext) -> f64 {
    match prefix.split_last() {
        None => 0.0,
        Some((_, head)) if head.contains(&ctx.eos) => 0.0,
        Some(_) => potential.log_psi_raw(prefix, prompt, ctx),
    }
}

/// `ψ ≡ 1`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ConstantOne;

impl RewardPotential for ConstantOne {
    fn log_psi_raw(&self, _: &[Token], _: &str, _: &SeqContext) -> f64 {
        0.0
    }
}

/// Predicates over the content of a finished sequence (eos stripped).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Predicate {
    EndsWith(Vec<Token>),
    StartsWith(Vec<Token>),
    Contains(Vec<Token>),
    Equals(Vec<Token>),
    CountAtLeast { token: Token, count: usize },
    Not(Box<Predicate>),
    All(Vec<Predicate>),
}

impl Predicate {
    pub fn matches(&self, content: &[Token]) -> bool {
        match self {
            Predicate::EndsWith(p) => content.ends_with(p),
            Predicate::StartsWith(p) => content.starts_with(p),
            Predicate::Contains(p) => p.is_empty() || content.windows(p.len()).any(|w| w == p.as_slice()),
            Predicate::Equals(p) => content == p.as_slice(),
            Predicate::CountAtLeast { token, count } => content.iter().filter(|t| *t == token).count() >= *count,
            Predicate::Not(p) => !p.matches(content),
            Predicate::All(ps) => ps.iter().all(|p| p.matches(content)),
        }
    }
}

/// `ψ_t = 1` before the sequence closes; at the closing position `ψ = 1` when
/// the predicate holds and `ε` otherwise (`ε = 0` is a hard constraint).
#[derive(Debug, Clone)]
pub struct TerminalIndicator {
    pub predicate: Predicate,
    pub log_epsilon: f64,
}

impl RewardPotential for TerminalIndicator {
    fn log_psi_raw(&self, prefix: &[Token], _: &str, ctx: &SeqContext) -> f64 {
        if !ctx.is_final(prefix) {
            return 0.0;
        }
        if self.predicate.matches(ctx.content(prefix)) {
            0.0
        } else {
            self.log_epsilon
        }
    }
}

/// Per-step score depending on the newest token, optionally restricted to
/// some (1-based) positions. Scores are finite, so the potential is bounded.
#[derive(Debug, Clone)]
pub struct StepScore {
    /// Log-score per token index.
    pub log_scores: Vec<f64>,
    pub positions: Option<Vec<usize>>,
}

impl RewardPotential for StepScore {
    fn log_psi_raw(&self, prefix: &[Token], _: &str, _: &SeqContext) -> f64 {
        let t = prefix.len();
        if let Some(pos) = &self.positions {
            if !pos.contains(&t) {
                return 0.0;
            }
        }
        self.log_scores[prefix[t - 1].index()]
    }
}

/// Pointwise product of potentials.
#[derive(Debug, Clone)]
pub struct Product(pub Vec<Arc<dyn RewardPotential>>);

impl RewardPotential for Product {
    fn log_psi_raw(&self, prefix: &[Token], prompt: &str, ctx: &SeqContext) -> f64 {
        let mut total = 0.0;
        for p in &self.0 {
            total += p.log_psi_raw(prefix, prompt, ctx);
            if total == f64::NEG_INFINITY {
                break;
            }
        }
        total
    }
}

/// Memoizes another potential by prefix for one prompt.
#[derive(Debug)]
pub struct CachedPotential {
    inner: Arc<dyn RewardPotential>,
    prompt: String,
    cache: RwLock<HashMap<Vec<Token>, f64>>,
}

impl CachedPotential {
    pub fn new(inner: Arc<dyn RewardPotential>, prompt: &str) -> Self {
        Self {
            inner,
            prompt: prompt.to_string(),
            cache: RwLock::new(HashMap::new()),
        }
    }
}

impl RewardPotential for CachedPotential {
    fn log_psi_raw(&self, prefix: &[Token], prompt: &str, ctx: &SeqContext) -> f64 {
        if prompt != self.prompt {
            return self.inner.log_psi_raw(prefix, prompt, ctx);
        }
        if let Some(v) = self.cache.read().unwrap().get(prefix) {
            return *v;
        }
        let v = self.inner.log_psi_raw(prefix, prompt, ctx);
        self.cache.write().unwrap().insert(prefix.to_vec(), v);
        v
    }
}

/// Declarative predicate, with token patterns written as space-separated names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PredicateDecl {
    EndsWith(String),
    StartsWith(String),
    Contains(String),
    Equals(String),
    CountAtLeast { token: String, count: usize },
    Not(Box<PredicateDecl>),
    All(Vec<PredicateDecl>),
}

impl PredicateDecl {
    pub fn build(&self, vocab: &Vocabulary) -> Result<Predicate> {
        Ok(match self {
            PredicateDecl::EndsWith(s) => Predicate::EndsWith(vocab.parse_tokens(s)?),
            PredicateDecl::StartsWith(s) => Predicate::StartsWith(vocab.parse_tokens(s)?),
            PredicateDecl::Contains(s) => Predicate::Contains(vocab.parse_tokens(s)?),
            PredicateDecl::Equals(s) => Predicate::Equals(vocab.parse_tokens(s)?),
            PredicateDecl::CountAtLeast { token, count } => Predicate::CountAtLeast {
                token: vocab.lookup(token)?,
                count: *count,
            },
            PredicateDecl::Not(p) => Predicate::Not(Box::new(p.build(vocab)?)),
            PredicateDecl::All(ps) => Predicate::All(ps.iter().map(|p| p.build(vocab)).collect::<Result<_>>()?),
        })
    }
}

/// Declarative potential as written in run configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialDecl {
    One {},
    Terminal {
        predicate: PredicateDecl,
        /// Value of ψ when the predicate fails; 0 rejects the sequence.
        #[serde(default)]
        epsilon: f64,
    },
    Step {
        /// Linear score per token name; unlisted tokens score 1.
        scores: BTreeMap<String, f64>,
        #[serde(default)]
        positions: Option<Vec<usize>>,
    },
    Product {
        factors: Vec<PotentialDecl>,
    },
}

impl PotentialDecl {
    pub fn build(&self, vocab: &Vocabulary) -> Result<Arc<dyn RewardPotential>> {
        Ok(match self {
            PotentialDecl::One {} => Arc::new(ConstantOne),
            PotentialDecl::Terminal { predicate, epsilon } => {
                if !(*epsilon >= 0.0 && epsilon.is_finite()) {
                    return Err(Error::InvalidParameter(format!(
                        "terminal epsilon must be finite and non-negative, got {epsilon}"
                    )));
                }
                Arc::new(TerminalIndicator {
                    predicate: predicate.build(vocab)?,
                    log_epsilon: epsilon.ln(),
                })
            }
            PotentialDecl::Step { scores, positions } => {
                let mut log_scores = vec![0.0; vocab.len()];
                for (name, s) in scores {
                    if !(*s > 0.0 && s.is_finite()) {
                        return Err(Error::InvalidParameter(format!(
                            "step score for `{name}` must be positive and finite, got {s}"
                        )));
                    }
                    log_scores[vocab.lookup(name)?.index()] = s.ln();
                }
                if positions.as_ref().is_some_and(|p| p.contains(&0)) {
                    return Err(Error::InvalidParameter("step positions are 1-based".into()));
                }
                Arc::new(StepScore {
                    log_scores,
                    positions: positions.clone(),
                })
            }
            PotentialDecl::Product { factors } => {
                Arc::new(Product(factors.iter().map(|f| f.build(vocab)).collect::<Result<_>>()?))
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocabulary {
        Vocabulary::new(["0", "1", "E"], 2).unwrap()
    }

    fn ctx(horizon: usize) -> SeqContext {
        SeqContext { horizon, eos: Token(2) }
    }

    fn toks(v: &[u32]) -> Vec<Token> {
        v.iter().map(|&t| Token(t)).collect()
    }

    #[test]
    fn constant_one_is_zero() {
        assert_eq!(log_psi(&ConstantOne, &toks(&[0, 1, 1]), "", &ctx(3)), 0.0);
    }

    #[test]
    fn terminal_indicator_definition() {
        let p = PotentialDecl::Terminal {
            predicate: PredicateDecl::EndsWith("1".into()),
            epsilon: 0.0,
        }
        .build(&vocab())
        .unwrap();
        let c = ctx(2);
        assert_eq!(log_psi(p.as_ref(), &toks(&[0, 1]), "", &c), 0.0);
        assert_eq!(log_psi(p.as_ref(), &toks(&[1, 0]), "", &c), f64::NEG_INFINITY);
        // Not final yet.
        assert_eq!(log_psi(p.as_ref(), &toks(&[1]), "", &c), 0.0);
        // Early eos closes the sequence; content is `1`.
        assert_eq!(log_psi(p.as_ref(), &toks(&[1, 2]), "", &ctx(4)), 0.0);
        assert_eq!(log_psi(p.as_ref(), &toks(&[0, 2]), "", &ctx(4)), f64::NEG_INFINITY);
        // Positions after eos always score 1.
        assert_eq!(log_psi(p.as_ref(), &toks(&[0, 2, 2]), "", &ctx(4)), 0.0);
    }

    #[test]
    fn step_score_at_position_two() {
        let p = PotentialDecl::Step {
            scores: [("1".to_string(), 2.0)].into_iter().collect(),
            positions: Some(vec![2]),
        }
        .build(&vocab())
        .unwrap();
        let c = ctx(2);
        assert!((log_psi(p.as_ref(), &toks(&[0, 1]), "", &c) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(log_psi(p.as_ref(), &toks(&[1]), "", &c), 0.0);
        assert_eq!(log_psi(p.as_ref(), &toks(&[1, 0]), "", &c), 0.0);
    }

    #[test]
    fn product_multiplies() {
        let decl: PotentialDecl = serde_json::from_str(
            r#"{"kind":"product","factors":[
                {"kind":"step","scores":{"1":2.0}},
                {"kind":"step","scores":{"1":3.0},"positions":[1]}]}"#,
        )
        .unwrap();
        let p = decl.build(&vocab()).unwrap();
        let v = log_psi(p.as_ref(), &toks(&[1]), "", &ctx(3));
        assert!((v - 6f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn decl_rejects_unknown_keys_and_tokens() {
        assert!(serde_json::from_str::<PotentialDecl>(r#"{"kind":"one","x":1}"#).is_err());
        let decl = PotentialDecl::Terminal {
            predicate: PredicateDecl::Contains("9".into()),
            epsilon: 0.1,
        };
        assert!(decl.build(&vocab()).is_err());
    }

    #[test]
    fn cached_potential_matches_inner() {
        let inner = PotentialDecl::Step {
            scores: [("0".to_string(), 0.5)].into_iter().collect(),
            positions: None,
        }
        .build(&vocab())
        .unwrap();
        let cached = CachedPotential::new(inner.clone(), "q");
        let prefix = toks(&[1, 0]);
        for _ in 0..2 {
            assert_eq!(
                log_psi(&cached, &prefix, "q", &ctx(3)),
                log_psi(inner.as_ref(), &prefix, "q", &ctx(3))
            );
        }
    }

    #[test]
    fn predicates() {
        let c = toks(&[0, 1, 1, 0]);
        assert!(Predicate::Contains(toks(&[1, 1])).matches(&c));
        assert!(!Predicate::Contains(toks(&[0, 0])).matches(&c));
        assert!(Predicate::StartsWith(toks(&[0, 1])).matches(&c));
        assert!(Predicate::CountAtLeast {
            token: Token(1),
            count: 2
        }
        .matches(&c));
        assert!(Predicate::Not(Box::new(Predicate::Equals(toks(&[0])))).matches(&c));
    }
}
