//! Bundled desk-scale instances shared by tests, the verification suite and
//! the example configs.

use std::sync::Arc;

use crate::model::{AutoregressiveModel, RandomTabularParams, TabularModel};
use crate::potential::{PotentialDecl, PredicateDecl, RewardPotential};
use crate::target::{Family, TargetSpec};

pub const WORKED_MODEL: &str = include_str!("../../../fixtures/worked.model");
pub const CONSTRAINT_MODEL: &str = include_str!("../../../fixtures/constraint.model");

/// Horizon of the constraint task.
pub const CONSTRAINT_HORIZON: usize = 6;
/// Sharpening exponent and block size used by the bundled constraint sweep.
pub const CONSTRAINT_ALPHA: f64 = 4.0;
pub const CONSTRAINT_BLOCK: usize = 2;

pub fn worked_model() -> Arc<TabularModel> {
    Arc::new(TabularModel::parse(WORKED_MODEL).expect("bundled worked model parses"))
}

/// `ψ_2 = 2` when the second token is `1`, otherwise 1.
pub fn worked_potential_decl() -> PotentialDecl {
    PotentialDecl::Step {
        scores: [("1".to_string(), 2.0)].into_iter().collect(),
        positions: Some(vec![2]),
    }
}

/// The two-token worked instance: unnormalized masses 0.08, 0.24, 0.32, 0.96
/// for `00, 01, 10, 11` at `α = 1`, normalizer 1.6.
pub fn worked_spec(family: Family, alpha: f64, block_size: usize) -> TargetSpec {
    let model = worked_model();
    let potential = worked_potential_decl()
        .build(model.vocab())
        .expect("worked potential builds");
    TargetSpec::new(family, alpha, 2, block_size, model, potential, "").expect("valid worked spec")
}

pub fn constraint_model() -> Arc<TabularModel> {
    Arc::new(TabularModel::parse(CONSTRAINT_MODEL).expect("bundled constraint model parses"))
}

/// Finished sequences must contain `b b b`.
pub fn constraint_predicate_decl() -> PredicateDecl {
    PredicateDecl::Contains("b b b".into())
}

pub fn constraint_potential_decl() -> PotentialDecl {
    PotentialDecl::Terminal {
        predicate: constraint_predicate_decl(),
        epsilon: 0.0,
    }
}

pub fn constraint_spec(family: Family, alpha: f64, block_size: usize) -> TargetSpec {
    let model = constraint_model();
    let potential = constraint_potential_decl()
        .build(model.vocab())
        .expect("constraint potential builds");
    TargetSpec::new(family, alpha, CONSTRAINT_HORIZON, block_size, model, potential, "").expect("valid constraint spec")
}

/// Seeded random bigram over `0 1 E` with a mixed potential: a step bonus on
/// `1` and a soft terminal preference for sequences ending in `0`.
pub fn random_spec(family: Family, alpha: f64, horizon: usize, block_size: usize, seed: u64) -> TargetSpec {
    let model = Arc::new(
        TabularModel::random(&RandomTabularParams {
            vocab_size: 3,
            order: 1,
            seed,
            sharpness: 1.0,
            eos_weight: 0.4,
        })
        .expect("random model"),
    );
    let potential = random_potential(model.as_ref());
    TargetSpec::new(family, alpha, horizon, block_size, model, potential, "").expect("valid random spec")
}

pub fn random_potential(model: &dyn AutoregressiveModel) -> Arc<dyn RewardPotential> {
    PotentialDecl::Product {
        factors: vec![
            PotentialDecl::Step {
                scores: [("1".to_string(), 1.5)].into_iter().collect(),
                positions: None,
            },
            PotentialDecl::Terminal {
                predicate: PredicateDecl::EndsWith("0".into()),
                epsilon: 0.3,
            },
        ],
    }
    .build(model.vocab())
    .expect("random potential builds")
}
