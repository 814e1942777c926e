//! Autoregressive models over a finite vocabulary.
//!
//! Models expose a conditional next-token distribution `p(x_t | q, x_<t)`.
//! The end-of-sequence token is absorbing: once it appears in a prefix every
//! further position is `eos` with probability one, which embeds variable-length
//! generations into a fixed horizon.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logspace::log_sum_exp;

/// Tolerance on row sums when loading a model file.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Token(pub u32);

impl Token {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Ordered token names with a designated end-of-sequence token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    names: Vec<String>,
    eos: Token,
}

impl Vocabulary {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>, eos: usize) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.len() < 2 {
            return Err(Error::InvalidParameter("vocabulary needs at least two tokens".into()));
        }
        if eos >= names.len() {
            return Err(Error::InvalidParameter(format!(
                "eos index {eos} outside vocabulary of size {}",
                names.len()
            )));
        }
        let mut seen = HashSet::new();
        for n in &names {
            if n.is_empty() || n.chars().any(char::is_whitespace) {
                return Err(Error::InvalidParameter(format!("bad token name `{n}`")));
            }
            if !seen.insert(n.as_str()) {
                return Err(Error::InvalidParameter(format!("duplicate token `{n}`")));
            }
        }
        Ok(Self {
            names,
            eos: Token(eos as u32),
        })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn eos(&self) -> Token {
        self.eos
    }

    pub fn tokens(&self) -> impl Iterator<Item = Token> + '_ {
        (0..self.names.len() as u32).map(Token)
    }

    pub fn name(&self, token: Token) -> &str {
        &self.names[token.index()]
    }

    pub fn lookup(&self, name: &str) -> Result<Token> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| Token(i as u32))
            .ok_or_else(|| Error::UnknownTokenName(name.to_string()))
    }

    /// Parses whitespace-separated token names.
    pub fn parse_tokens(&self, text: &str) -> Result<Vec<Token>> {
        text.split_whitespace().map(|n| self.lookup(n)).collect()
    }

    pub fn render(&self, tokens: &[Token]) -> String {
        tokens.iter().map(|t| self.name(*t)).collect::<Vec<_>>().join(" ")
    }

    pub fn check(&self, tokens: &[Token]) -> Result<()> {
        match tokens.iter().find(|t| t.index() >= self.names.len()) {
            Some(t) => Err(Error::InvalidToken(*t)),
            None => Ok(()),
        }
    }

    pub fn is_terminated(&self, prefix: &[Token]) -> bool {
        prefix.contains(&self.eos)
    }

    /// Canonical fixed-length form: everything after the first eos becomes eos,
    /// and short sequences are padded with eos up to `len`.
    pub fn pad(&self, seq: &[Token], len: usize) -> Vec<Token> {
        let mut out = Vec::with_capacity(len);
        let mut done = false;
        for i in 0..len {
            let tok = if done {
                self.eos
            } else {
                seq.get(i).copied().unwrap_or(self.eos)
            };
            done |= tok == self.eos;
            out.push(tok);
        }
        out
    }
}

/// A categorical distribution over token indices, stored as log-probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    log_probs: Vec<f64>,
}

impl Distribution {
    /// Normalizes arbitrary log-weights.
    pub fn from_log_weights(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| w.is_nan() || *w == f64::INFINITY) {
            return Err(Error::InvalidParameter("non-finite log weight".into()));
        }
        let lse = log_sum_exp(&weights);
        if !lse.is_finite() {
            return Err(Error::DegenerateDistribution);
        }
        Ok(Self {
            log_probs: weights.into_iter().map(|w| w - lse).collect(),
        })
    }

    /// Builds from linear probabilities that must already sum to one within
    /// [`ROW_SUM_TOLERANCE`]; the row is renormalized exactly afterwards.
    pub fn from_probs(probs: &[f64]) -> Result<Self> {
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidParameter(
                "probabilities must be finite and non-negative".into(),
            ));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > ROW_SUM_TOLERANCE {
            return Err(Error::InvalidParameter(format!("probabilities sum to {total}, not 1")));
        }
        Self::from_log_weights(probs.iter().map(|p| p.ln()).collect())
    }

    pub fn uniform(size: usize) -> Self {
        Self {
            log_probs: vec![-(size as f64).ln(); size],
        }
    }

    pub fn point_mass(size: usize, token: Token) -> Self {
        let mut log_probs = vec![f64::NEG_INFINITY; size];
        log_probs[token.index()] = 0.0;
        Self { log_probs }
    }

    pub fn len(&self) -> usize {
        self.log_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_probs.is_empty()
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    pub fn log_prob(&self, token: Token) -> f64 {
        self.log_probs[token.index()]
    }

    pub fn prob(&self, token: Token) -> f64 {
        self.log_prob(token).exp()
    }

    pub fn probs(&self) -> Vec<f64> {
        self.log_probs.iter().map(|l| l.exp()).collect()
    }

    pub fn argmax(&self) -> Token {
        let mut best = 0;
        for (i, lp) in self.log_probs.iter().enumerate() {
            if *lp > self.log_probs[best] {
                best = i;
            }
        }
        Token(best as u32)
    }

    /// Inverse-CDF draw consuming exactly one uniform.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Token {
        let u: f64 = rng.gen();
        let mut cumulative = 0.0;
        let mut last_positive = 0;
        for (i, lp) in self.log_probs.iter().enumerate() {
            if *lp == f64::NEG_INFINITY {
                continue;
            }
            cumulative += lp.exp();
            last_positive = i;
            if u < cumulative {
                return Token(i as u32);
            }
        }
        Token(last_positive as u32)
    }
}

/// Raises a distribution to the power `alpha` and renormalizes.
///
/// Returns the tempered distribution together with `log Σ_v p(v)^alpha`.
pub fn temper(dist: &Distribution, alpha: f64) -> Result<(Distribution, f64)> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "temper exponent must be positive, got {alpha}"
        )));
    }
    let scaled: Vec<f64> = dist.log_probs.iter().map(|l| alpha * l).collect();
    let log_z = log_sum_exp(&scaled);
    if !log_z.is_finite() {
        return Err(Error::DegenerateDistribution);
    }
    let log_probs = scaled.into_iter().map(|l| l - log_z).collect();
    Ok((Distribution { log_probs }, log_z))
}

pub trait AutoregressiveModel: Send + Sync {
    fn vocab(&self) -> &Vocabulary;

    /// Raw conditional for a non-terminated, validated prefix. Callers should
    /// use [`next_token_dist`], which applies the absorbing-eos rule.
    fn conditional(&self, prompt: &str, prefix: &[Token]) -> Result<Distribution>;
}

/// `p(x_t | q, x_<t)` with eos absorbing.
pub fn next_token_dist(model: &dyn AutoregressiveModel, prompt: &str, prefix: &[Token]) -> Result<Distribution> {
    let vocab = model.vocab();
    vocab.check(prefix)?;
    if vocab.is_terminated(prefix) {
        return Ok(Distribution::point_mass(vocab.len(), vocab.eos()));
    }
    model.conditional(prompt, prefix)
}

/// Sum of conditional log-probabilities along `seq`, stopping after the first eos.
pub fn sequence_logprob(model: &dyn AutoregressiveModel, prompt: &str, seq: &[Token]) -> Result<f64> {
    model.vocab().check(seq)?;
    let eos = model.vocab().eos();
    let mut total = 0.0;
    for t in 0..seq.len() {
        total += next_token_dist(model, prompt, &seq[..t])?.log_prob(seq[t]);
        if seq[t] == eos {
            break;
        }
    }
    Ok(total)
}

/// Tokens drawn from the tempered proposal and their proposal log-probabilities.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Rollout {
    pub tokens: Vec<Token>,
    pub log_q: Vec<f64>,
}

impl Rollout {
    pub fn total_log_q(&self) -> f64 {
        self.log_q.iter().sum()
    }
}

/// Draws up to `count` tokens from `p^tau` (renormalized), stopping after eos.
pub fn sample_tokens<R: Rng + ?Sized>(
    model: &dyn AutoregressiveModel,
    prompt: &str,
    prefix: &[Token],
    count: usize,
    tau: f64,
    rng: &mut R,
) -> Result<Rollout> {
    let eos = model.vocab().eos();
    let mut seq = prefix.to_vec();
    let mut rollout = Rollout::default();
    if model.vocab().is_terminated(prefix) {
        model.vocab().check(prefix)?;
        return Ok(rollout);
    }
    for _ in 0..count {
        let (proposal, _) = temper(&next_token_dist(model, prompt, &seq)?, tau)?;
        let tok = proposal.sample(rng);
        rollout.tokens.push(tok);
        rollout.log_q.push(proposal.log_prob(tok));
        seq.push(tok);
        if tok == eos {
            break;
        }
    }
    Ok(rollout)
}

/// Samples `blocks` blocks of `block_size` tokens from the tempered base model.
pub fn sample_blocks<R: Rng + ?Sized>(
    model: &dyn AutoregressiveModel,
    prompt: &str,
    prefix: &[Token],
    blocks: usize,
    block_size: usize,
    tau: f64,
    rng: &mut R,
) -> Result<Rollout> {
    if blocks == 0 || block_size == 0 {
        return Err(Error::InvalidParameter(
            "block count and block size must be at least 1".into(),
        ));
    }
    sample_tokens(model, prompt, prefix, blocks * block_size, tau, rng)
}

/// Log-density of `block` following `prefix` under the tempered proposal.
pub fn proposal_log_prob(
    model: &dyn AutoregressiveModel,
    prompt: &str,
    prefix: &[Token],
    block: &[Token],
    tau: f64,
) -> Result<f64> {
    let eos = model.vocab().eos();
    let mut seq = prefix.to_vec();
    let mut total = 0.0;
    if model.vocab().is_terminated(prefix) {
        return Ok(0.0);
    }
    for &tok in block {
        let (proposal, _) = temper(&next_token_dist(model, prompt, &seq)?, tau)?;
        total += proposal.log_prob(tok);
        seq.push(tok);
        if tok == eos {
            break;
        }
    }
    Ok(total)
}

/// An n-gram style lookup table keyed by prompt and the last `order` tokens.
///
/// Prompt-specific rows take precedence over rows declared without a prompt;
/// unlisted contexts use the default row.
#[derive(Debug, Clone)]
pub struct TabularModel {
    vocab: Vocabulary,
    order: usize,
    rows: HashMap<String, HashMap<Vec<Token>, Distribution>>,
    default: Option<Distribution>,
}

impl TabularModel {
    pub fn new(vocab: Vocabulary, order: usize) -> Self {
        Self {
            vocab,
            order,
            rows: HashMap::new(),
            default: None,
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn set_default(&mut self, dist: Distribution) -> Result<()> {
        self.check_dist(&dist)?;
        self.default = Some(dist);
        Ok(())
    }

    pub fn with_default(mut self, dist: Distribution) -> Result<Self> {
        self.set_default(dist)?;
        Ok(self)
    }

    pub fn insert(&mut self, prompt: &str, context: Vec<Token>, dist: Distribution) -> Result<()> {
        self.vocab.check(&context)?;
        self.check_dist(&dist)?;
        if context.len() > self.order {
            return Err(Error::InvalidParameter(format!(
                "context of length {} exceeds model order {}",
                context.len(),
                self.order
            )));
        }
        self.rows.entry(prompt.to_string()).or_default().insert(context, dist);
        Ok(())
    }

    pub fn with_row(mut self, prompt: &str, context: Vec<Token>, dist: Distribution) -> Result<Self> {
        self.insert(prompt, context, dist)?;
        Ok(self)
    }

    fn check_dist(&self, dist: &Distribution) -> Result<()> {
        if dist.len() != self.vocab.len() {
            return Err(Error::InvalidParameter(format!(
                "row has {} entries for a vocabulary of {}",
                dist.len(),
                self.vocab.len()
            )));
        }
        Ok(())
    }

    fn lookup(&self, prompt: &str, context: &[Token]) -> Option<&Distribution> {
        self.rows
            .get(prompt)
            .and_then(|rows| rows.get(context))
            .or_else(|| self.rows.get("").and_then(|rows| rows.get(context)))
            .or(self.default.as_ref())
    }

    /// Parses the text model format:
    ///
    /// ```text
    /// # comment
    /// vocab: a b E*          # trailing `*` marks eos
    /// order: 1               # optional, defaults to the longest context
    /// default -> a:0.5 b:0.5
    /// -> a:0.8 b:0.2         # empty context
    /// a -> a:0.4 b:0.6
    /// @prompt a -> b:1
    /// ```
    ///
    /// Tokens missing from a row get probability zero.
    pub fn parse(text: &str) -> Result<Self> {
        let parse_err = |line: usize, message: String| Error::Parse { line, message };
        let mut vocab: Option<Vocabulary> = None;
        let mut order: Option<usize> = None;
        let mut default: Option<(usize, Distribution)> = None;
        let mut rows: Vec<(usize, String, Vec<Token>, Distribution)> = Vec::new();

        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("vocab:") {
                if vocab.is_some() {
                    return Err(parse_err(line_no, "duplicate vocab line".into()));
                }
                let mut names = Vec::new();
                let mut eos = None;
                for (i, name) in rest.split_whitespace().enumerate() {
                    match name.strip_suffix('*') {
                        Some(stripped) => {
                            if eos.replace(i).is_some() {
                                return Err(parse_err(line_no, "more than one eos marker".into()));
                            }
                            names.push(stripped.to_string());
                        }
                        None => names.push(name.to_string()),
                    }
                }
                let eos = eos.ok_or_else(|| parse_err(line_no, "no eos token marked with `*`".into()))?;
                vocab = Some(Vocabulary::new(names, eos).map_err(|e| parse_err(line_no, e.to_string()))?);
                continue;
            }
            if let Some(rest) = line.strip_prefix("order:") {
                let n = rest
                    .trim()
                    .parse::<usize>()
                    .map_err(|e| parse_err(line_no, format!("bad order: {e}")))?;
                order = Some(n);
                continue;
            }
            let vocab = vocab
                .as_ref()
                .ok_or_else(|| parse_err(line_no, "row before vocab line".into()))?;
            let (lhs, rhs) = line
                .split_once("->")
                .ok_or_else(|| parse_err(line_no, "expected `context -> token:prob ...`".into()))?;
            let mut probs = vec![0.0; vocab.len()];
            for entry in rhs.split_whitespace() {
                let (name, p) = entry
                    .rsplit_once(':')
                    .ok_or_else(|| parse_err(line_no, format!("expected token:prob, got `{entry}`")))?;
                let tok = vocab.lookup(name).map_err(|e| parse_err(line_no, e.to_string()))?;
                let p: f64 = p
                    .parse()
                    .map_err(|e| parse_err(line_no, format!("bad probability `{p}`: {e}")))?;
                probs[tok.index()] += p;
            }
            let lhs = lhs.trim();
            let context_label = if lhs.is_empty() { "<empty>" } else { lhs };
            let dist = Distribution::from_probs(&probs)
                .map_err(|e| parse_err(line_no, format!("row for context `{context_label}`: {e}")))?;
            if lhs == "default" {
                if default.is_some() {
                    return Err(parse_err(line_no, "duplicate default row".into()));
                }
                default = Some((line_no, dist));
                continue;
            }
            let mut words = lhs.split_whitespace().peekable();
            let prompt = match words.peek() {
                Some(w) if w.starts_with('@') => words.next().unwrap()[1..].to_string(),
                _ => String::new(),
            };
            let context = words
                .map(|w| vocab.lookup(w))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| parse_err(line_no, e.to_string()))?;
            rows.push((line_no, prompt, context, dist));
        }

        let vocab = vocab.ok_or_else(|| parse_err(0, "missing vocab line".into()))?;
        let order = order.unwrap_or_else(|| rows.iter().map(|r| r.2.len()).max().unwrap_or(0));
        let mut model = TabularModel::new(vocab, order);
        if let Some((line_no, d)) = default {
            model.set_default(d).map_err(|e| parse_err(line_no, e.to_string()))?;
        }
        for (line_no, prompt, context, dist) in rows {
            model
                .insert(&prompt, context, dist)
                .map_err(|e| parse_err(line_no, e.to_string()))?;
        }
        Ok(model)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path.as_ref()).map_err(|e| Error::Parse {
            line: 0,
            message: format!("cannot read {}: {e}", path.as_ref().display()),
        })?;
        Self::parse(&text)
    }

    /// Serializes to the text format accepted by [`TabularModel::parse`].
    /// Probabilities are written with full round-trip precision.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let names: Vec<String> = self
            .vocab
            .tokens()
            .map(|t| {
                if t == self.vocab.eos() {
                    format!("{}*", self.vocab.name(t))
                } else {
                    self.vocab.name(t).to_string()
                }
            })
            .collect();
        out.push_str(&format!("vocab: {}\norder: {}\n", names.join(" "), self.order));
        let row = |d: &Distribution| {
            self.vocab
                .tokens()
                .filter(|t| d.log_prob(*t) > f64::NEG_INFINITY)
                .map(|t| format!("{}:{:?}", self.vocab.name(t), d.prob(t)))
                .collect::<Vec<_>>()
                .join(" ")
        };
        if let Some(d) = &self.default {
            out.push_str(&format!("default -> {}\n", row(d)));
        }
        let sorted: BTreeMap<_, _> = self.rows.iter().collect();
        for (prompt, rows) in sorted {
            let sorted_rows: BTreeMap<_, _> = rows.iter().collect();
            for (context, d) in sorted_rows {
                let mut lhs = Vec::new();
                if !prompt.is_empty() {
                    lhs.push(format!("@{prompt}"));
                }
                lhs.extend(context.iter().map(|t| self.vocab.name(*t).to_string()));
                out.push_str(&format!("{} -> {}\n", lhs.join(" "), row(d)));
            }
        }
        out
    }

    /// A seeded random table: one Dirichlet(1) row per non-terminated context
    /// of length up to `order`, built from normalized exponential variates and
    /// sharpened by raising each variate to `sharpness`.
    pub fn random(params: &RandomTabularParams) -> Result<Self> {
        if params.vocab_size < 2 {
            return Err(Error::InvalidParameter("random vocab needs two tokens".into()));
        }
        let names: Vec<String> = (0..params.vocab_size - 1)
            .map(|i| i.to_string())
            .chain(std::iter::once("E".to_string()))
            .collect();
        let vocab = Vocabulary::new(names, params.vocab_size - 1)?;
        let eos = vocab.eos();
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let mut model = TabularModel::new(vocab.clone(), params.order);
        let non_eos: Vec<Token> = vocab.tokens().filter(|t| *t != eos).collect();
        let mut contexts: Vec<Vec<Token>> = vec![Vec::new()];
        let mut frontier = contexts.clone();
        for _ in 0..params.order {
            let mut next = Vec::new();
            for c in &frontier {
                for &t in &non_eos {
                    let mut c2 = c.clone();
                    c2.push(t);
                    next.push(c2);
                }
            }
            contexts.extend(next.iter().cloned());
            frontier = next;
        }
        for context in contexts {
            let weights: Vec<f64> = vocab
                .tokens()
                .map(|t| {
                    let u: f64 = rng.gen_range(f64::EPSILON..1.0);
                    let e = (-u.ln()).powf(params.sharpness);
                    if t == eos {
                        (e * params.eos_weight).ln()
                    } else {
                        e.ln()
                    }
                })
                .collect();
            model.insert("", context, Distribution::from_log_weights(weights)?)?;
        }
        Ok(model)
    }
}

impl AutoregressiveModel for TabularModel {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn conditional(&self, prompt: &str, prefix: &[Token]) -> Result<Distribution> {
        let start = prefix.len().saturating_sub(self.order);
        let context = &prefix[start..];
        self.lookup(prompt, context)
            .cloned()
            .ok_or_else(|| Error::MissingContext {
                context: format!("{:?} {}", prompt, self.vocab.render(context)),
            })
    }
}

/// Parameters of [`TabularModel::random`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomTabularParams {
    /// Vocabulary size including eos.
    pub vocab_size: usize,
    pub order: usize,
    pub seed: u64,
    #[serde(default = "one")]
    pub sharpness: f64,
    /// Multiplier on the eos variate; 0 removes eos from every row.
    #[serde(default = "one")]
    pub eos_weight: f64,
}

fn one() -> f64 {
    1.0
}
