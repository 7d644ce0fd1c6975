mod common;

use common::{random, random_probs, truncated_q};
use espo_core::estimation::{estimate_q_with, truncation_horizon};
use espo_core::{estimate_q, Error, SoftmaxPolicy, StateActionTable};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn estimates_are_unbiased_for_the_truncated_q() {
    let cmdp = random(21, 3, 2, 3, 0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let probs = random_probs(&mut rng, 3, 2);
    let policy = SoftmaxPolicy::from_probs(&probs, 1e-12).unwrap();
    let h = truncation_horizon(cmdp.discount, cmdp.v_max, 0.01);
    let target = truncated_q(&cmdp, policy.probs(), &cmdp.reward, h);
    let target_c = truncated_q(&cmdp, policy.probs(), &cmdp.cost, h);
    let budget = 8 * 6 * h as u64;
    let n = 300;
    let (mut sum, mut sum_sq) = (StateActionTable::zeros(3, 2), StateActionTable::zeros(3, 2));
    let mut sum_c = StateActionTable::zeros(3, 2);
    for seed in 0..n {
        let est = estimate_q(&cmdp, &policy, budget, seed).unwrap();
        sum = sum.combine(1.0, &est.q_bar_r, 1.0);
        sum_sq = sum_sq.combine(1.0, &est.q_bar_r.map(|x| x * x), 1.0);
        sum_c = sum_c.combine(1.0, &est.q_bar_c, 1.0);
    }
    let mean = sum.scale(1.0 / n as f64);
    let mean_c = sum_c.scale(1.0 / n as f64);
    for s in 0..3 {
        for a in 0..2 {
            let var = sum_sq[(s, a)] / n as f64 - mean[(s, a)].powi(2);
            let se = (var.max(0.0) / n as f64).sqrt();
            let err = (mean[(s, a)] - target[(s, a)]).abs();
            assert!(err <= 4.0 * se + 1e-9, "({s},{a}): {err} > 4·{se}");
        }
    }
    // Same streams drive the cost estimate, so it shares the error scale.
    assert!(mean_c.max_abs_diff(&target_c) < 0.2);
}

#[test]
fn deterministic_given_seed() {
    let cmdp = random(22, 4, 3, 2, 0.5);
    let policy = SoftmaxPolicy::uniform(4, 3);
    let a = estimate_q(&cmdp, &policy, 20_000, 5).unwrap();
    let b = estimate_q(&cmdp, &policy, 20_000, 5).unwrap();
    let c = estimate_q(&cmdp, &policy, 20_000, 6).unwrap();
    assert_eq!(a.q_bar_r, b.q_bar_r);
    assert_eq!(a.q_bar_c, b.q_bar_c);
    assert_ne!(a.q_bar_r, c.q_bar_r);
}

#[test]
fn transition_accounting_is_exact() {
    let cmdp = random(23, 4, 3, 2, 0.5);
    let policy = SoftmaxPolicy::uniform(4, 3);
    let h = truncation_horizon(0.9, 1.0, 0.01);
    assert_eq!(h, 66);
    let round = 4 * 3 * h as u64;
    for budget in [round, round + 1, 5 * round - 1, 16_000] {
        let est = estimate_q(&cmdp, &policy, budget, 0).unwrap();
        assert_eq!(est.rollouts_per_pair, budget / round);
        assert_eq!(est.horizon, h);
        assert_eq!(est.transitions_consumed, (budget / round) * round);
    }
    match estimate_q(&cmdp, &policy, round - 1, 0) {
        Err(Error::BudgetTooSmall { budget, minimum }) => {
            assert_eq!((budget, minimum), (round - 1, round));
        }
        other => panic!("expected BudgetTooSmall, got {other:?}"),
    }
}

#[test]
fn looser_truncation_shortens_rollouts() {
    let cmdp = random(24, 3, 2, 2, 0.5);
    let policy = SoftmaxPolicy::uniform(3, 2);
    let tight = estimate_q_with(&cmdp, &policy, 100_000, 1, 1e-4).unwrap();
    let loose = estimate_q_with(&cmdp, &policy, 100_000, 1, 1e-1).unwrap();
    assert!(tight.horizon > loose.horizon);
    assert!(loose.rollouts_per_pair > tight.rollouts_per_pair);
}
