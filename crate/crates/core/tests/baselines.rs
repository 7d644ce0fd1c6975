mod common;

use common::random;
use espo_core::baselines::crpo_mode;
use espo_core::estimation::{accounted_transitions, truncation_horizon};
use espo_core::{
    crpo_run, espo_run, pcrpo_run, BaselineAlgorithm, BaselineConfig, EspoConfig, EvalMode, Mode,
    StateActionTable,
};

#[test]
fn espo_without_sample_manipulation_is_pcrpo() {
    let cmdp = random(41, 6, 3, 2, 0.35);
    let espo = EspoConfig {
        iterations: 40,
        zeta_plus: 0.0,
        zeta_minus: 0.0,
        h_plus: 0.4,
        h_minus: -0.4,
        seed: 3,
        ..EspoConfig::default()
    };
    let a = espo_run(&cmdp, &espo).unwrap();
    let b = pcrpo_run(&cmdp, &BaselineConfig::paired_with(&espo, BaselineAlgorithm::Pcrpo)).unwrap();
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.final_policy, b.final_policy);
    assert_eq!(a.total_transitions, b.total_transitions);
}

#[test]
fn pcrpo_sample_size_is_constant() {
    let cmdp = random(42, 6, 3, 2, 0.35);
    let cfg = BaselineConfig {
        iterations: 30,
        ..BaselineConfig::default()
    };
    let run = pcrpo_run(&cmdp, &cfg).unwrap();
    assert!(run.trace.iter().all(|r| r.sample_size == cfg.sample_size));
}

#[test]
fn crpo_on_zero_cost_only_ascends_reward() {
    let mut cmdp = random(43, 5, 3, 2, 0.5);
    cmdp.cost = StateActionTable::zeros(5, 3);
    let cfg = BaselineConfig {
        algorithm: BaselineAlgorithm::Crpo,
        iterations: 20,
        ..BaselineConfig::default()
    };
    let run = crpo_run(&cmdp, &cfg).unwrap();
    assert!(run.trace.iter().all(|r| r.mode == Mode::Reward));
}

#[test]
fn crpo_with_negative_budget_only_descends_cost() {
    let cmdp = random(44, 5, 3, 2, 0.5);
    let cfg = BaselineConfig {
        algorithm: BaselineAlgorithm::Crpo,
        iterations: 20,
        budget: Some(-1.0),
        ..BaselineConfig::default()
    };
    let run = crpo_run(&cmdp, &cfg).unwrap();
    assert!(run.trace.iter().all(|r| r.mode == Mode::Cost));
    for r in &run.trace {
        assert_eq!(crpo_mode(r, -1.0), r.mode);
    }
}

#[test]
fn crpo_accounting_replays() {
    let cmdp = random(45, 4, 3, 2, 0.5);
    let cfg = BaselineConfig {
        algorithm: BaselineAlgorithm::Crpo,
        iterations: 12,
        sample_size: 10_000,
        ..BaselineConfig::default()
    };
    let run = crpo_run(&cmdp, &cfg).unwrap();
    let h = truncation_horizon(cmdp.discount, cmdp.v_max, cfg.truncation_epsilon);
    let per = accounted_transitions(&cmdp, h, cfg.sample_size);
    assert_eq!(per, (10_000 / (4 * 3 * 66)) * (4 * 3 * 66));
    for (t, r) in run.trace.iter().enumerate() {
        assert_eq!(r.cum_transitions, (t as u64 + 1) * per);
        assert_eq!(crpo_mode(r, cmdp.budget), r.mode);
    }
    assert_eq!(run.total_transitions, (cfg.iterations as u64 + 1) * per);
}

#[test]
fn exact_mode_partitions_match_between_espo_and_pcrpo() {
    let cmdp = random(46, 6, 3, 2, 0.4);
    let espo = EspoConfig {
        iterations: 60,
        h_plus: f64::INFINITY,
        h_minus: f64::NEG_INFINITY,
        eval_mode: EvalMode::Exact,
        ..EspoConfig::default()
    };
    let a = espo_run(&cmdp, &espo).unwrap();
    let b = pcrpo_run(&cmdp, &BaselineConfig::paired_with(&espo, BaselineAlgorithm::Pcrpo)).unwrap();
    assert!(a.trace.iter().all(|r| r.mode.is_soft()));
    let modes = |run: &espo_core::RunResult| run.trace.iter().map(|r| r.mode).collect::<Vec<_>>();
    assert_eq!(modes(&a), modes(&b));
    assert_eq!(a.final_policy, b.final_policy);
}

#[test]
fn paired_tolerance_defaults_to_upper_slack() {
    let espo = EspoConfig {
        h_plus: 0.7,
        ..EspoConfig::default()
    };
    let crpo = BaselineConfig::paired_with(&espo, BaselineAlgorithm::Crpo);
    assert_eq!(crpo.crpo_tolerance, 0.7);
    assert!(BaselineConfig {
        crpo_tolerance: -0.1,
        ..crpo
    }
    .validate()
    .is_err());
}
