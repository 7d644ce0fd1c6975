//! The three-mode optimizer with conflict-driven sample sizing.
//!
//! Each iteration reads the cost estimate of the current policy, picks a
//! region (cost / soft / reward) from the slack band `[b + h⁻, b + h⁺]`,
//! applies the matching NPG step, chooses the next evaluation budget from the
//! fixed base `X` (grown by `ζ⁺` under gradient conflict, shrunk by `ζ⁻`
//! otherwise), and evaluates the new policy with that budget.

use std::fmt;
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::GapReport;
use crate::cmdp::{exact_policy_values, Objective, TabularCmdp, ValueBundle};
use crate::error::{Error, Result};
use crate::estimation::{
    accounted_transitions, estimate_q_with, transitions_per_round, truncation_horizon,
    v_from_estimate, DEFAULT_TRUNCATION_EPSILON,
};
use crate::policy::{
    decompose_in_span, gradient_from_q, npg_update, project_conflicting, GradientPair, NpgMode,
    SoftmaxPolicy,
};
use crate::table::StateActionTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    /// Monte-Carlo `Q̄` from the sample budget.
    Sampled,
    /// `Q̄ := Q` from exact evaluation; the budget is still accounted.
    Exact,
}

/// Which soft-region update goes with which conflict branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SoftPairing {
    /// Conflict uses the projected update, alignment the weighted sum.
    MainText,
    /// Swapped: conflict uses the weighted sum, alignment the projection.
    /// Sample-size branches are unchanged.
    AlgorithmListing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Espo,
    Pcrpo,
    Crpo,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Espo => "espo",
            Algorithm::Pcrpo => "pcrpo",
            Algorithm::Crpo => "crpo",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "espo" => Ok(Algorithm::Espo),
            "pcrpo" => Ok(Algorithm::Pcrpo),
            "crpo" => Ok(Algorithm::Crpo),
            other => Err(Error::param("algo", format!("unknown algorithm `{other}`"))),
        }
    }
}

/// Run configuration. Field names double as the config-file keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EspoConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    /// Base sample size `X`, in simulator transitions.
    pub base_sample_size: u64,
    pub zeta_plus: f64,
    pub zeta_minus: f64,
    pub h_plus: f64,
    pub h_minus: f64,
    pub decay_h_plus: bool,
    pub decay_h_minus: bool,
    pub decay_zeta_plus: bool,
    pub decay_zeta_minus: bool,
    /// Reward weight in the soft region; the cost weight is `1 - x_r`.
    pub x_r: f64,
    /// Overrides the instance budget when set.
    pub budget: Option<f64>,
    pub seed: u64,
    pub eval_mode: EvalMode,
    /// Reporting only.
    pub confidence: f64,
    pub soft_pairing: SoftPairing,
    /// Snapshot the policy every this many iterations; 0 disables snapshots.
    pub snapshot_every: usize,
    pub truncation_epsilon: f64,
}

impl Default for EspoConfig {
    fn default() -> Self {
        Self {
            iterations: 100,
            learning_rate: 0.1,
            base_sample_size: 16_000,
            zeta_plus: 0.1,
            zeta_minus: -0.4,
            h_plus: 0.5,
            h_minus: -0.5,
            decay_h_plus: false,
            decay_h_minus: false,
            decay_zeta_plus: false,
            decay_zeta_minus: false,
            x_r: 0.5,
            budget: None,
            seed: 0,
            eval_mode: EvalMode::Sampled,
            confidence: 0.05,
            soft_pairing: SoftPairing::MainText,
            snapshot_every: 1,
            truncation_epsilon: DEFAULT_TRUNCATION_EPSILON,
        }
    }
}

impl EspoConfig {
    pub fn x_c(&self) -> f64 {
        1.0 - self.x_r
    }

    pub fn decay_flags(&self) -> DecayFlags {
        DecayFlags {
            h_plus: self.decay_h_plus,
            h_minus: self.decay_h_minus,
            zeta_plus: self.decay_zeta_plus,
            zeta_minus: self.decay_zeta_minus,
        }
    }

    pub fn initial_slacks(&self) -> Slacks {
        Slacks {
            h_plus: self.h_plus,
            h_minus: self.h_minus,
            zeta_plus: self.zeta_plus,
            zeta_minus: self.zeta_minus,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::param("learning_rate", "must be positive and finite"));
        }
        if self.base_sample_size == 0 {
            return Err(Error::param("base_sample_size", "must be positive"));
        }
        if !(self.zeta_plus >= 0.0 && self.zeta_plus.is_finite()) {
            return Err(Error::param("zeta_plus", "must lie in [0, inf)"));
        }
        if !(self.zeta_minus > -1.0 && self.zeta_minus <= 0.0) {
            return Err(Error::param("zeta_minus", "must lie in (-1, 0]"));
        }
        if !(self.h_plus >= 0.0) {
            return Err(Error::param("h_plus", "must lie in [0, inf]"));
        }
        if !(self.h_minus <= 0.0) {
            return Err(Error::param("h_minus", "must lie in [-inf, 0]"));
        }
        if !(0.0..=1.0).contains(&self.x_r) {
            return Err(Error::param("x_r", "must lie in [0, 1]"));
        }
        if let Some(b) = self.budget {
            if !b.is_finite() {
                return Err(Error::param("budget", "must be finite"));
            }
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::param("confidence", "must lie in (0, 1)"));
        }
        if !(self.truncation_epsilon > 0.0 && self.truncation_epsilon.is_finite()) {
            return Err(Error::param("truncation_epsilon", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DecayFlags {
    pub h_plus: bool,
    pub h_minus: bool,
    pub zeta_plus: bool,
    pub zeta_minus: bool,
}

/// Current slack band and sample-size penalties.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Slacks {
    pub h_plus: f64,
    pub h_minus: f64,
    pub zeta_plus: f64,
    pub zeta_minus: f64,
}

fn shrink(q: f64, horizon: usize) -> f64 {
    if q.is_infinite() {
        q
    } else {
        q - q / horizon as f64
    }
}

/// One geometric shrink `q ← q - q/T` of every enabled quantity.
pub fn decay_slack_and_penalty(slacks: Slacks, horizon: usize, flags: DecayFlags) -> Slacks {
    let horizon = horizon.max(1);
    let pick = |on: bool, q: f64| if on { shrink(q, horizon) } else { q };
    Slacks {
        h_plus: pick(flags.h_plus, slacks.h_plus),
        h_minus: pick(flags.h_minus, slacks.h_minus),
        zeta_plus: pick(flags.zeta_plus, slacks.zeta_plus),
        zeta_minus: pick(flags.zeta_minus, slacks.zeta_minus),
    }
}

/// Gate regions before the conflict test splits the soft region.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Cost,
    Soft,
    Reward,
}

/// `Cost` above `b + h⁺`, `Reward` below `b + h⁻`, `Soft` on the closed band.
pub fn classify_mode(v_bar_c: f64, budget: f64, h_plus: f64, h_minus: f64) -> Region {
    if v_bar_c > budget + h_plus {
        Region::Cost
    } else if v_bar_c < budget + h_minus {
        Region::Reward
    } else {
        Region::Soft
    }
}

/// Executed mode; the four values partition a trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Mode {
    Cost,
    SoftConflict,
    SoftNoConflict,
    Reward,
}

impl Mode {
    pub const ALL: [Mode; 4] = [
        Mode::Reward,
        Mode::SoftNoConflict,
        Mode::SoftConflict,
        Mode::Cost,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Cost => "COST",
            Mode::SoftConflict => "SOFT_CONFLICT",
            Mode::SoftNoConflict => "SOFT_NO_CONFLICT",
            Mode::Reward => "REWARD",
        }
    }

    pub fn region(self) -> Region {
        match self {
            Mode::Cost => Region::Cost,
            Mode::SoftConflict | Mode::SoftNoConflict => Region::Soft,
            Mode::Reward => Region::Reward,
        }
    }

    pub fn is_soft(self) -> bool {
        self.region() == Region::Soft
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Parse(format!("unknown mode `{s}`")))
    }
}

/// `round(X + X·ζ)` from the fixed base `X`.
pub fn adjust_sample_size(base: u64, zeta: f64) -> u64 {
    let x = base as f64;
    (x + x * zeta).round().max(0.0) as u64
}

/// Penalty for the next budget: `ζ⁺` under conflict, `ζ⁻` otherwise.
pub fn branch_zeta(slacks: &Slacks, conflict: bool) -> f64 {
    if conflict {
        slacks.zeta_plus
    } else {
        slacks.zeta_minus
    }
}

/// One trace row.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub t: usize,
    pub mode: Mode,
    /// Budget `X_t` spent evaluating `π_t` (chosen by the previous iteration).
    pub sample_size: u64,
    /// Estimates for `π_t`, which the gate acts on.
    pub v_bar_r: f64,
    pub v_bar_c: f64,
    pub h_plus: f64,
    pub h_minus: f64,
    pub zeta_plus: f64,
    pub zeta_minus: f64,
    pub grad_dot: Option<f64>,
    pub grad_norm_r: Option<f64>,
    pub grad_norm_c: Option<f64>,
    /// NPG exponent weights used on soft-conflict iterations.
    pub y_r: Option<f64>,
    pub y_c: Option<f64>,
    /// Transitions consumed through the evaluation of `π_t`.
    pub cum_transitions: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicySnapshot {
    pub t: usize,
    pub logits: StateActionTable,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub algorithm: Algorithm,
    pub instance_digest: u64,
    pub budget: f64,
    pub x_r: f64,
    pub seed: u64,
    pub eval_mode: EvalMode,
    /// Transitions consumed including the evaluation of the final policy.
    pub total_transitions: u64,
    pub trace: Vec<IterationRecord>,
    /// Policy `π_t` acted on at trace row `t`, thinned by `snapshot_every`.
    pub snapshots: Vec<PolicySnapshot>,
    pub final_policy: SoftmaxPolicy,
    pub warnings: Vec<String>,
    pub gap_report: Option<GapReport>,
}

impl RunResult {
    pub fn snapshot(&self, t: usize) -> Option<&StateActionTable> {
        self.snapshots
            .binary_search_by_key(&t, |s| s.t)
            .ok()
            .map(|i| &self.snapshots[i].logits)
    }

    /// Transitions consumed up to and including the evaluation of `π_t`;
    /// `t = T` refers to the final policy.
    pub fn transitions_through(&self, t: usize) -> u64 {
        self.trace
            .get(t)
            .map_or(self.total_transitions, |r| r.cum_transitions)
    }

    pub fn mode_counts(&self) -> [usize; 4] {
        let mut counts = [0; 4];
        for r in &self.trace {
            let i = Mode::ALL.iter().position(|m| *m == r.mode).unwrap_or(0);
            counts[i] += 1;
        }
        counts
    }
}

/// Evaluation of one policy: the tables the next update reads.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub q_bar_r: StateActionTable,
    pub q_bar_c: StateActionTable,
    pub v_bar_r: f64,
    pub v_bar_c: f64,
    pub transitions: u64,
    /// Present in exact mode.
    pub bundle: Option<ValueBundle>,
}

pub(crate) fn evaluate(
    cmdp: &TabularCmdp,
    policy: &SoftmaxPolicy,
    budget: u64,
    mode: EvalMode,
    truncation_epsilon: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Evaluation> {
    match mode {
        EvalMode::Sampled => {
            let seed = rng.next_u64();
            let est = estimate_q_with(cmdp, policy, budget, seed, truncation_epsilon)?;
            let (v_bar_r, v_bar_c) = v_from_estimate(&est, policy, &cmdp.initial_dist);
            Ok(Evaluation {
                q_bar_r: est.q_bar_r,
                q_bar_c: est.q_bar_c,
                v_bar_r,
                v_bar_c,
                transitions: est.transitions_consumed,
                bundle: None,
            })
        }
        EvalMode::Exact => {
            let horizon = truncation_horizon(cmdp.discount, cmdp.v_max, truncation_epsilon);
            let minimum = transitions_per_round(cmdp, horizon);
            if budget < minimum {
                return Err(Error::BudgetTooSmall { budget, minimum });
            }
            let bundle = exact_policy_values(cmdp, policy)?;
            Ok(Evaluation {
                q_bar_r: bundle.q_reward.clone(),
                q_bar_c: bundle.q_cost.clone(),
                v_bar_r: bundle.v_reward_rho,
                v_bar_c: bundle.v_cost_rho,
                transitions: accounted_transitions(cmdp, horizon, budget),
                bundle: Some(bundle),
            })
        }
    }
}

/// Smallest budget that still buys one rollout per pair.
pub fn minimum_budget(cmdp: &TabularCmdp, truncation_epsilon: f64) -> u64 {
    transitions_per_round(
        cmdp,
        truncation_horizon(cmdp.discount, cmdp.v_max, truncation_epsilon),
    )
}

/// Gradient pair at the current policy: exact in exact mode, otherwise the
/// plug-in advantage `Q̄ - Σ_a π Q̄` with exact visitation.
pub(crate) fn soft_gradients(
    cmdp: &TabularCmdp,
    policy: &SoftmaxPolicy,
    eval: &Evaluation,
) -> Result<GradientPair> {
    if let Some(bundle) = &eval.bundle {
        return Ok(GradientPair::exact(cmdp, policy, bundle));
    }
    let bundle = exact_policy_values(cmdp, policy)?;
    let gamma = cmdp.discount;
    Ok(GradientPair::new(
        gradient_from_q(policy, &bundle.visitation, &eval.q_bar_r, gamma, Objective::Reward),
        gradient_from_q(policy, &bundle.visitation, &eval.q_bar_c, gamma, Objective::Cost),
    ))
}

/// NPG weights realizing the projected update: project, then read off the
/// coordinates of the result in `{g_r, g_c}`. A vanishing projection gives a
/// null step; collinear gradients with a nonzero projection fall back to a
/// cost-only step.
pub fn projected_npg_mode(pair: &GradientPair, x_r: f64, x_c: f64) -> Result<NpgMode> {
    let proj = project_conflicting(&pair.g_reward, &pair.g_cost_descent, x_r, x_c)?;
    let scale = pair.norm_reward.max(pair.norm_cost);
    if proj.norm() <= 1e-12 * scale {
        return Ok(NpgMode::SoftConflict { y_r: 0.0, y_c: 0.0 });
    }
    match decompose_in_span(&proj, &pair.g_reward, &pair.g_cost_descent) {
        Ok(d) => Ok(NpgMode::SoftConflict {
            y_r: d.y_r,
            y_c: d.y_c,
        }),
        Err(Error::NearCollinear { .. }) => Ok(NpgMode::SoftConflict { y_r: 0.0, y_c: 1.0 }),
        Err(e) => Err(e),
    }
}

/// Mutable loop state between iterations.
#[derive(Debug, Clone)]
pub struct EspoState {
    pub t: usize,
    pub policy: SoftmaxPolicy,
    /// Budget used for the current evaluation.
    pub sample_size: u64,
    pub slacks: Slacks,
    pub evaluation: Evaluation,
    pub cumulative_transitions: u64,
    pub rng: ChaCha8Rng,
    pub warnings: Vec<String>,
}

impl EspoState {
    /// Uniform policy, evaluated once with the base budget.
    pub fn bootstrap(cmdp: &TabularCmdp, config: &EspoConfig) -> Result<Self> {
        config.validate()?;
        cmdp.ensure_valid()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let policy = SoftmaxPolicy::uniform(cmdp.num_states, cmdp.num_actions);
        let evaluation = evaluate(
            cmdp,
            &policy,
            config.base_sample_size,
            config.eval_mode,
            config.truncation_epsilon,
            &mut rng,
        )?;
        Ok(Self {
            t: 0,
            policy,
            sample_size: config.base_sample_size,
            slacks: config.initial_slacks(),
            cumulative_transitions: evaluation.transitions,
            evaluation,
            rng,
            warnings: Vec::new(),
        })
    }
}

/// One full iteration: decay, gate, update, resize, re-evaluate.
pub fn espo_step(
    mut state: EspoState,
    cmdp: &TabularCmdp,
    config: &EspoConfig,
) -> Result<(EspoState, IterationRecord)> {
    let budget = config.budget.unwrap_or(cmdp.budget);
    let slacks = decay_slack_and_penalty(state.slacks, config.iterations, config.decay_flags());
    let eval = &state.evaluation;
    let region = classify_mode(eval.v_bar_c, budget, slacks.h_plus, slacks.h_minus);

    let mut grads: Option<GradientPair> = None;
    let (mode, npg) = match region {
        Region::Cost => (Mode::Cost, NpgMode::Cost),
        Region::Reward => (Mode::Reward, NpgMode::Reward),
        Region::Soft => {
            let pair = soft_gradients(cmdp, &state.policy, eval)?;
            let degenerate = pair.is_degenerate();
            let conflict = pair.conflict && !degenerate;
            let project = !degenerate
                && match config.soft_pairing {
                    SoftPairing::MainText => conflict,
                    SoftPairing::AlgorithmListing => !conflict,
                };
            let weighted = NpgMode::SoftNoConflict {
                x_r: config.x_r,
                x_c: config.x_c(),
            };
            let npg = if project {
                projected_npg_mode(&pair, config.x_r, config.x_c())?
            } else {
                weighted
            };
            grads = Some(pair);
            let mode = if conflict {
                Mode::SoftConflict
            } else {
                Mode::SoftNoConflict
            };
            (mode, npg)
        }
    };

    let conflict = mode == Mode::SoftConflict;
    let minimum = minimum_budget(cmdp, config.truncation_epsilon);
    let mut next_size = adjust_sample_size(config.base_sample_size, branch_zeta(&slacks, conflict));
    if next_size < minimum {
        state.warnings.push(format!(
            "t={}: sample size {next_size} clamped to minimum {minimum}",
            state.t
        ));
        next_size = minimum;
    }

    let next_policy = npg_update(
        &state.policy,
        &eval.q_bar_r,
        &eval.q_bar_c,
        npg,
        config.learning_rate,
        cmdp.discount,
    )?;
    let (y_r, y_c) = match (mode, npg) {
        (Mode::SoftConflict, m) => {
            let (a, b) = m.weights();
            (Some(a), Some(b))
        }
        _ => (None, None),
    };
    let record = IterationRecord {
        t: state.t,
        mode,
        sample_size: state.sample_size,
        v_bar_r: eval.v_bar_r,
        v_bar_c: eval.v_bar_c,
        h_plus: slacks.h_plus,
        h_minus: slacks.h_minus,
        zeta_plus: slacks.zeta_plus,
        zeta_minus: slacks.zeta_minus,
        grad_dot: grads.as_ref().map(|g| g.dot),
        grad_norm_r: grads.as_ref().map(|g| g.norm_reward),
        grad_norm_c: grads.as_ref().map(|g| g.norm_cost),
        y_r,
        y_c,
        cum_transitions: state.cumulative_transitions,
    };
    let next_eval = evaluate(
        cmdp,
        &next_policy,
        next_size,
        config.eval_mode,
        config.truncation_epsilon,
        &mut state.rng,
    )?;
    let next = EspoState {
        t: state.t + 1,
        policy: next_policy,
        sample_size: next_size,
        slacks,
        cumulative_transitions: state.cumulative_transitions + next_eval.transitions,
        evaluation: next_eval,
        rng: state.rng,
        warnings: state.warnings,
    };
    Ok((next, record))
}

pub fn espo_run(cmdp: &TabularCmdp, config: &EspoConfig) -> Result<RunResult> {
    run_three_mode(cmdp, config, Algorithm::Espo)
}

pub(crate) fn run_three_mode(
    cmdp: &TabularCmdp,
    config: &EspoConfig,
    algorithm: Algorithm,
) -> Result<RunResult> {
    let mut state = EspoState::bootstrap(cmdp, config)?;
    let mut trace = Vec::with_capacity(config.iterations);
    let mut snapshots = Vec::new();
    for t in 0..config.iterations {
        if config.snapshot_every > 0 && t % config.snapshot_every == 0 {
            snapshots.push(PolicySnapshot {
                t,
                logits: state.policy.logits().clone(),
            });
        }
        let (next, record) = espo_step(state, cmdp, config)?;
        state = next;
        trace.push(record);
    }
    Ok(RunResult {
        algorithm,
        instance_digest: cmdp.digest(),
        budget: config.budget.unwrap_or(cmdp.budget),
        x_r: config.x_r,
        seed: config.seed,
        eval_mode: config.eval_mode,
        total_transitions: state.cumulative_transitions,
        trace,
        snapshots,
        final_policy: state.policy,
        warnings: state.warnings,
        gap_report: None,
    })
}

/// Output-policy weights over iterations: 1 on reward iterations, `x_r` on
/// aligned soft iterations, `y_r` on conflicting soft iterations, 0 on cost
/// iterations, normalized to sum to one.
pub fn weighted_output_distribution(trace: &[IterationRecord], x_r: f64) -> Result<Vec<f64>> {
    let raw: Vec<f64> = trace
        .iter()
        .map(|r| match r.mode {
            Mode::Reward => 1.0,
            Mode::SoftNoConflict => x_r,
            Mode::SoftConflict => r.y_r.unwrap_or(x_r).max(0.0),
            Mode::Cost => 0.0,
        })
        .collect();
    let total: f64 = raw.iter().sum();
    if !(total > 0.0) {
        return Err(Error::NoRewardIterations);
    }
    Ok(raw.into_iter().map(|w| w / total).collect())
}
