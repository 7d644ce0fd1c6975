//! CRPO and fixed-sample PCRPO on the same policy and estimation substrate.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cmdp::TabularCmdp;
use crate::error::{Error, Result};
use crate::espo::{
    evaluate, run_three_mode, Algorithm, EspoConfig, EvalMode, IterationRecord, Mode,
    PolicySnapshot, RunResult, SoftPairing,
};
use crate::policy::{npg_update, NpgMode, SoftmaxPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineAlgorithm {
    Crpo,
    Pcrpo,
}

/// Baseline configuration; shared fields mean what they mean in [`EspoConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    pub algorithm: BaselineAlgorithm,
    pub iterations: usize,
    pub learning_rate: f64,
    /// Fixed per-iteration sample size `X`.
    pub sample_size: u64,
    /// CRPO switches to cost descent when `V̄_c > b + crpo_tolerance`.
    pub crpo_tolerance: f64,
    pub h_plus: f64,
    pub h_minus: f64,
    pub decay_h_plus: bool,
    pub decay_h_minus: bool,
    pub x_r: f64,
    pub budget: Option<f64>,
    pub seed: u64,
    pub eval_mode: EvalMode,
    pub soft_pairing: SoftPairing,
    pub snapshot_every: usize,
    pub truncation_epsilon: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self::paired_with(&EspoConfig::default(), BaselineAlgorithm::Pcrpo)
    }
}

impl BaselineConfig {
    /// Baseline matched to an ESPO configuration: same base sample size,
    /// step size, band and seed, with CRPO's tolerance set to `h⁺₀`.
    pub fn paired_with(espo: &EspoConfig, algorithm: BaselineAlgorithm) -> Self {
        Self {
            algorithm,
            iterations: espo.iterations,
            learning_rate: espo.learning_rate,
            sample_size: espo.base_sample_size,
            crpo_tolerance: espo.h_plus,
            h_plus: espo.h_plus,
            h_minus: espo.h_minus,
            decay_h_plus: espo.decay_h_plus,
            decay_h_minus: espo.decay_h_minus,
            x_r: espo.x_r,
            budget: espo.budget,
            seed: espo.seed,
            eval_mode: espo.eval_mode,
            soft_pairing: espo.soft_pairing,
            snapshot_every: espo.snapshot_every,
            truncation_epsilon: espo.truncation_epsilon,
        }
    }

    /// PCRPO as an ESPO configuration with sample manipulation switched off.
    pub fn to_espo_config(&self) -> EspoConfig {
        EspoConfig {
            iterations: self.iterations,
            learning_rate: self.learning_rate,
            base_sample_size: self.sample_size,
            zeta_plus: 0.0,
            zeta_minus: 0.0,
            h_plus: self.h_plus,
            h_minus: self.h_minus,
            decay_h_plus: self.decay_h_plus,
            decay_h_minus: self.decay_h_minus,
            decay_zeta_plus: false,
            decay_zeta_minus: false,
            x_r: self.x_r,
            budget: self.budget,
            seed: self.seed,
            eval_mode: self.eval_mode,
            confidence: EspoConfig::default().confidence,
            soft_pairing: self.soft_pairing,
            snapshot_every: self.snapshot_every,
            truncation_epsilon: self.truncation_epsilon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.crpo_tolerance >= 0.0) {
            return Err(Error::param("crpo_tolerance", "must be nonnegative"));
        }
        self.to_espo_config().validate()
    }
}

pub fn pcrpo_run(cmdp: &TabularCmdp, config: &BaselineConfig) -> Result<RunResult> {
    config.validate()?;
    run_three_mode(cmdp, &config.to_espo_config(), Algorithm::Pcrpo)
}

/// Two-mode CRPO: cost descent while `V̄_c > b + tolerance`, reward ascent otherwise.
pub fn crpo_run(cmdp: &TabularCmdp, config: &BaselineConfig) -> Result<RunResult> {
    config.validate()?;
    cmdp.ensure_valid()?;
    let budget = config.budget.unwrap_or(cmdp.budget);
    let tol = config.crpo_tolerance;
    let eps = config.truncation_epsilon;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut policy = SoftmaxPolicy::uniform(cmdp.num_states, cmdp.num_actions);
    let mut eval = evaluate(cmdp, &policy, config.sample_size, config.eval_mode, eps, &mut rng)?;
    let mut cumulative = eval.transitions;
    let mut trace = Vec::with_capacity(config.iterations);
    let mut snapshots = Vec::new();
    for t in 0..config.iterations {
        if config.snapshot_every > 0 && t % config.snapshot_every == 0 {
            snapshots.push(PolicySnapshot {
                t,
                logits: policy.logits().clone(),
            });
        }
        let (mode, npg) = if eval.v_bar_c > budget + tol {
            (Mode::Cost, NpgMode::Cost)
        } else {
            (Mode::Reward, NpgMode::Reward)
        };
        let next = npg_update(
            &policy,
            &eval.q_bar_r,
            &eval.q_bar_c,
            npg,
            config.learning_rate,
            cmdp.discount,
        )?;
        trace.push(IterationRecord {
            t,
            mode,
            sample_size: config.sample_size,
            v_bar_r: eval.v_bar_r,
            v_bar_c: eval.v_bar_c,
            h_plus: tol,
            h_minus: tol,
            zeta_plus: 0.0,
            zeta_minus: 0.0,
            grad_dot: None,
            grad_norm_r: None,
            grad_norm_c: None,
            y_r: None,
            y_c: None,
            cum_transitions: cumulative,
        });
        let next_eval = evaluate(cmdp, &next, config.sample_size, config.eval_mode, eps, &mut rng)?;
        cumulative += next_eval.transitions;
        policy = next;
        eval = next_eval;
    }
    Ok(RunResult {
        algorithm: Algorithm::Crpo,
        instance_digest: cmdp.digest(),
        budget,
        x_r: 1.0,
        seed: config.seed,
        eval_mode: config.eval_mode,
        total_transitions: cumulative,
        trace,
        snapshots,
        final_policy: policy,
        warnings: Vec::new(),
        gap_report: None,
    })
}

/// CRPO gate re-derived from a recorded row and the budget.
pub fn crpo_mode(record: &IterationRecord, budget: f64) -> Mode {
    if record.v_bar_c > budget + record.h_plus {
        Mode::Cost
    } else {
        Mode::Reward
    }
}
