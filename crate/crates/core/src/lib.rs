//! Reward-guided sequential Monte Carlo over autoregressive token models.
//!
//! The crate samples from reward-augmented sequence distributions of the form
//! `Π(x) ∝ Π_t m_t(x_t | q, x_<t) ψ_t(x_1:t, q)` where `m_t` is either the
//! temperature-sharpened next-token distribution (family I) or the base
//! conditional raised to a power (family II), and `ψ_t` is a reward potential.
//!
//! Modules, bottom-up:
//!
//! - [`model`]: vocabularies, distributions, tabular models, tempering and block sampling.
//! - [`potential`]: reward potentials and their declarative form.
//! - [`target`]: full-sequence targets, prefix and lookahead intermediate targets,
//!   block factors and exact conditionals.
//! - [`lookahead`]: exact (recursive) and Monte Carlo lookahead providers.
//! - [`smc`]: the block-wise resample-move particle engine with selective MH rejuvenation.
//! - [`oracle`]: brute-force enumeration used as ground truth.

pub mod error;
pub mod fixtures;
pub mod logspace;
pub mod lookahead;
pub mod model;
pub mod oracle;
pub mod potential;
pub mod rng;
pub mod smc;
pub mod target;

pub use error::{Error, Result};
pub use lookahead::{
    estimate_log_lookahead, ExactLookahead, LookaheadConfig, LookaheadEstimate, LookaheadMode, LookaheadProvider,
    MonteCarloLookahead,
};
pub use model::{
    next_token_dist, sample_blocks, sample_tokens, sequence_logprob, temper, AutoregressiveModel, Distribution,
    Rollout, TabularModel, Token, Vocabulary,
};
pub use oracle::{
    enumerate, oracle_log_lookahead, oracle_lookahead, oracle_marginal, oracle_mse_weights, oracle_prefix_target,
    tv_distance, tv_distance_keyed, EnumeratedTarget, Horizon, MseReport,
};
pub use potential::{PotentialDecl, Predicate, RewardPotential};
pub use smc::{run_smc, run_smc_partial, ResamplingScheme, SmcConfig, SmcOutput};
pub use target::{Family, IntermediateTarget, TargetSpec};
