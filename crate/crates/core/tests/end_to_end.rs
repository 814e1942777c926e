use std::collections::BTreeMap;

use proptest::prelude::*;
use rgsmc::fixtures::{constraint_predicate_decl, constraint_spec, worked_spec, CONSTRAINT_ALPHA, CONSTRAINT_BLOCK};
use rgsmc::rng::{stream, Purpose};
use rgsmc::smc::{ess, find_duplicates, multinomial_ancestors, systematic_ancestors};
use rgsmc::{
    enumerate, oracle_marginal, run_smc, tv_distance_keyed, Family, IntermediateTarget, LookaheadMode, SmcConfig,
    TargetSpec, Token,
};

fn toks(ids: &[u32]) -> Vec<Token> {
    ids.iter().map(|&i| Token(i)).collect()
}

#[test]
fn worked_instance_matches_hand_computation() {
    for family in [Family::Tempered, Family::Powered] {
        let e = enumerate(&worked_spec(family, 1.0, 1)).unwrap();
        assert!((e.z() - 1.6).abs() < 1e-12);
        let dist = e.distribution();
        for (seq, mass) in [(&[0, 0], 0.08), (&[0, 1], 0.24), (&[1, 0], 0.32), (&[1, 1], 0.96)] {
            assert!((dist[&toks(seq)] - mass / 1.6).abs() < 1e-12, "{seq:?}");
        }
        let first = oracle_marginal(&e, 1).unwrap();
        assert!((first[&toks(&[1])] - 0.8).abs() < 1e-12);
    }
}

/// Success probability of the constraint predicate under `spec`.
fn success_probability(spec: &TargetSpec) -> f64 {
    let pred = constraint_predicate_decl().build(spec.model.vocab()).unwrap();
    enumerate(spec)
        .unwrap()
        .distribution()
        .into_iter()
        .filter(|(seq, _)| {
            let content: Vec<Token> = seq.iter().copied().take_while(|t| *t != spec.eos()).collect();
            pred.matches(&content)
        })
        .map(|(_, p)| p)
        .sum()
}

#[test]
fn constraint_is_rare_under_base_and_sharpened_models() {
    use rgsmc::potential::ConstantOne;
    use std::sync::Arc;
    let spec = constraint_spec(Family::Tempered, 1.0, CONSTRAINT_BLOCK).with_potential(Arc::new(ConstantOne));
    let base = success_probability(&spec);
    let sharp = success_probability(
        &constraint_spec(Family::Tempered, CONSTRAINT_ALPHA, CONSTRAINT_BLOCK).with_potential(Arc::new(ConstantOne)),
    );
    assert!(base < 0.2, "base success {base}");
    assert!(
        sharp < base,
        "sharpening should make the constraint rarer: {sharp} vs {base}"
    );
    // With the hard constraint as the potential every target sequence succeeds.
    let constrained = constraint_spec(Family::Tempered, CONSTRAINT_ALPHA, CONSTRAINT_BLOCK);
    assert!((success_probability(&constrained) - 1.0).abs() < 1e-12);
}

#[test]
fn estimated_lookahead_sampler_approaches_oracle() {
    let spec = worked_spec(Family::Powered, 2.0, 1);
    let reference = enumerate(&spec).unwrap().distribution();
    let mut tv = 0.0;
    for seed in 0..5 {
        let mut cfg = SmcConfig::new(4096, seed);
        cfg.intermediate_target = IntermediateTarget::Lookahead;
        cfg.lookahead.mode = LookaheadMode::Estimated;
        let out = run_smc(&spec, &cfg).unwrap();
        tv += tv_distance_keyed(&out.weighted_distribution(&spec), &reference).unwrap() / 5.0;
    }
    assert!(tv < 0.03, "{tv}");
}

#[test]
fn runs_are_reproducible_and_seed_sensitive() {
    let spec = constraint_spec(Family::Tempered, CONSTRAINT_ALPHA, CONSTRAINT_BLOCK);
    let mut cfg = SmcConfig::new(32, 9);
    cfg.intermediate_target = IntermediateTarget::Lookahead;
    let a = run_smc(&spec, &cfg).unwrap();
    let b = run_smc(&spec, &cfg).unwrap();
    assert_eq!(a.particles, b.particles);
    assert_eq!(a.log_z_hat.to_bits(), b.log_z_hat.to_bits());
    cfg.seed = 10;
    let c = run_smc(&spec, &cfg).unwrap();
    assert_ne!(a.particles, c.particles);
}

proptest! {
    #[test]
    fn resampling_returns_valid_ancestors(
        raw in prop::collection::vec(0.0f64..10.0, 1..40),
        n in 1usize..64,
        seed in any::<u64>(),
        systematic in any::<bool>(),
    ) {
        let total: f64 = raw.iter().sum();
        prop_assume!(total > 0.0);
        let w: Vec<f64> = raw.iter().map(|x| x / total).collect();
        let mut rng = stream(seed, Purpose::Resample, 0, 0, 0);
        let a = if systematic {
            systematic_ancestors(&w, n, &mut rng)
        } else {
            multinomial_ancestors(&w, n, &mut rng)
        };
        prop_assert_eq!(a.len(), n);
        for &i in &a {
            prop_assert!(i < w.len());
            prop_assert!(w[i] > 0.0);
        }
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for &i in &a {
            *counts.entry(i).or_default() += 1;
        }
        prop_assert_eq!(find_duplicates(&a).len(), n - counts.len());
        if systematic {
            // Systematic resampling keeps every count within one of N·w.
            for (i, wi) in w.iter().enumerate() {
                let c = counts.get(&i).copied().unwrap_or(0) as f64;
                prop_assert!((c - n as f64 * wi).abs() < 1.0 + 1e-9);
            }
        }
    }

    #[test]
    fn ess_is_between_one_and_n(log_w in prop::collection::vec(-30.0f64..30.0, 1..50)) {
        let value = ess(&log_w).unwrap();
        prop_assert!(value >= 1.0 && value <= log_w.len() as f64);
    }

    #[test]
    fn padding_is_idempotent(ids in prop::collection::vec(0u32..3, 0..6)) {
        let spec = worked_spec(Family::Tempered, 1.0, 1);
        let vocab = spec.model.vocab();
        let seq = toks(&ids);
        let once = vocab.pad(&seq, 6);
        prop_assert_eq!(vocab.pad(&once, 6), once.clone());
        prop_assert_eq!(once.len(), 6);
    }
}
