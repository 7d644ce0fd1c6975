//! Trace analysis against the exact constrained optimum.

use serde::{Deserialize, Serialize};

use crate::cmdp::{exact_policy_values, TabularCmdp};
use crate::error::{Error, Result};
use crate::espo::{weighted_output_distribution, Algorithm, Mode, RunResult};
use crate::oracle::ConstrainedOptimum;
use crate::policy::SoftmaxPolicy;

/// Floor applied to nonpositive gaps before taking logs.
pub const GAP_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    /// `V_r^{π*}(ρ) - V_r^{π_t}(ρ)` per trace row.
    pub reward_gap: Vec<f64>,
    /// `max(0, V_c^{π_t}(ρ) - b)` per trace row.
    pub violation: Vec<f64>,
    pub reward_value: Vec<f64>,
    pub cost_value: Vec<f64>,
    /// Gap of the randomized output policy; `None` if the run never left cost mode.
    pub weighted_gap: Option<f64>,
    /// `E[V_c] - V_c^{π*}(ρ)` under the same distribution.
    pub weighted_cost_excess: Option<f64>,
    pub final_gap: f64,
    pub final_violation: f64,
    /// The optimum was infeasible; gaps are against the cost-minimizing reference.
    pub reference_infeasible: bool,
}

impl GapReport {
    pub fn weighted_gap(&self) -> Result<f64> {
        self.weighted_gap.ok_or(Error::NoRewardIterations)
    }
}

fn policy_at(run: &RunResult, t: usize) -> Result<SoftmaxPolicy> {
    if t == run.trace.len() {
        return Ok(run.final_policy.clone());
    }
    let logits = run.snapshot(t).ok_or(Error::MissingSnapshot(t))?;
    SoftmaxPolicy::from_logits(logits.clone())
}

/// Exact re-evaluation of every iterate.
pub fn gap_series(
    run: &RunResult,
    cmdp: &TabularCmdp,
    optimum: &ConstrainedOptimum,
) -> Result<GapReport> {
    let budget = run.budget;
    let mut reward_value = Vec::with_capacity(run.trace.len());
    let mut cost_value = Vec::with_capacity(run.trace.len());
    for t in 0..run.trace.len() {
        let b = exact_policy_values(cmdp, &policy_at(run, t)?)?;
        reward_value.push(b.v_reward_rho);
        cost_value.push(b.v_cost_rho);
    }
    let fin = exact_policy_values(cmdp, &run.final_policy)?;
    let star_r = optimum.optimal_reward_value;
    let star_c = optimum.optimal_cost_value;
    let (weighted_gap, weighted_cost_excess) =
        match weighted_output_distribution(&run.trace, run.x_r) {
            Ok(w) => {
                let er: f64 = w.iter().zip(&reward_value).map(|(p, v)| p * v).sum();
                let ec: f64 = w.iter().zip(&cost_value).map(|(p, v)| p * v).sum();
                (Some(star_r - er), Some(ec - star_c))
            }
            Err(Error::NoRewardIterations) => (None, None),
            Err(e) => return Err(e),
        };
    Ok(GapReport {
        reward_gap: reward_value.iter().map(|v| star_r - v).collect(),
        violation: cost_value.iter().map(|c| (c - budget).max(0.0)).collect(),
        reward_value,
        cost_value,
        weighted_gap,
        weighted_cost_excess,
        final_gap: star_r - fin.v_reward_rho,
        final_violation: (fin.v_cost_rho - budget).max(0.0),
        reference_infeasible: !optimum.feasible,
    })
}

/// Attaches [`gap_series`] to the run.
pub fn annotate(run: &mut RunResult, cmdp: &TabularCmdp, optimum: &ConstrainedOptimum) -> Result<()> {
    run.gap_report = Some(gap_series(run, cmdp, optimum)?);
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OscillationReport {
    pub reward: usize,
    pub soft_no_conflict: usize,
    pub soft_conflict: usize,
    pub cost: usize,
    /// First iteration outside cost mode.
    pub t_in: Option<usize>,
    /// Cost-mode iterations after `t_in`.
    pub reentry_count: usize,
    /// Reward-mode iterations of the paired CRPO run.
    pub crpo_reward: usize,
}

impl OscillationReport {
    pub fn total(&self) -> usize {
        self.reward + self.soft_no_conflict + self.soft_conflict + self.cost
    }

    pub fn soft(&self) -> usize {
        self.soft_no_conflict + self.soft_conflict
    }

    /// Once out of cost mode, never back.
    pub fn no_reentry(&self) -> bool {
        self.reentry_count == 0
    }

    /// `|B_r| + |B_soft| ≥ |B_r^CRPO|`.
    pub fn dominates_crpo(&self) -> bool {
        self.reward + self.soft() >= self.crpo_reward
    }

    /// Shares of (reward, soft-aligned, soft-conflict, cost) iterations.
    pub fn shares(&self) -> [f64; 4] {
        let n = self.total().max(1) as f64;
        [
            self.reward as f64 / n,
            self.soft_no_conflict as f64 / n,
            self.soft_conflict as f64 / n,
            self.cost as f64 / n,
        ]
    }
}

/// Mode partition of a three-mode run next to a matched CRPO run.
pub fn oscillation_report(espo: &RunResult, crpo: &RunResult) -> Result<OscillationReport> {
    if espo.instance_digest != crpo.instance_digest || espo.trace.len() != crpo.trace.len() {
        return Err(Error::MismatchedRuns);
    }
    if let (Some(a), Some(b)) = (espo.snapshot(0), crpo.snapshot(0)) {
        if a != b {
            return Err(Error::MismatchedRuns);
        }
    }
    Ok(partition(
        espo.trace.iter().map(|r| r.mode),
        crpo.trace.iter().filter(|r| r.mode == Mode::Reward).count(),
    ))
}

pub(crate) fn partition(modes: impl Iterator<Item = Mode>, crpo_reward: usize) -> OscillationReport {
    let mut rep = OscillationReport {
        reward: 0,
        soft_no_conflict: 0,
        soft_conflict: 0,
        cost: 0,
        t_in: None,
        reentry_count: 0,
        crpo_reward,
    };
    for (t, mode) in modes.enumerate() {
        match mode {
            Mode::Reward => rep.reward += 1,
            Mode::SoftNoConflict => rep.soft_no_conflict += 1,
            Mode::SoftConflict => rep.soft_conflict += 1,
            Mode::Cost => {
                rep.cost += 1;
                if rep.t_in.is_some() {
                    rep.reentry_count += 1;
                }
            }
        }
        if mode != Mode::Cost && rep.t_in.is_none() {
            rep.t_in = Some(t);
        }
    }
    rep
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FirstHit {
    /// Index of the first iterate meeting both tolerances (`T` = final policy).
    pub t: usize,
    /// Transitions consumed up to and including that iterate's evaluation.
    pub transitions: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyEntry {
    pub algorithm: Algorithm,
    pub seed: u64,
    /// `None` when the run never met the tolerances.
    pub first_hit: Option<FirstHit>,
    /// Mean `|V̄_r - V_r| + |V̄_c - V_c|` over iterates: an aggregate
    /// evaluation-error estimate (zero in exact mode).
    pub eval_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    pub epsilon_gap: f64,
    pub epsilon_violation: f64,
    pub entries: Vec<EfficiencyEntry>,
    /// Mean ESPO first-hit transitions over mean PCRPO first-hit transitions,
    /// when both are present and every run of both reached the target.
    pub ratio_espo_over_pcrpo: Option<f64>,
}

impl EfficiencyReport {
    pub fn mean_first_hit(&self, algorithm: Algorithm) -> Option<f64> {
        let hits: Option<Vec<u64>> = self
            .entries
            .iter()
            .filter(|e| e.algorithm == algorithm)
            .map(|e| e.first_hit.map(|h| h.transitions))
            .collect();
        let hits = hits?;
        if hits.is_empty() {
            return None;
        }
        Some(hits.iter().map(|&x| x as f64).sum::<f64>() / hits.len() as f64)
    }
}

/// First iterate whose exact gap is at most `epsilon_gap` and whose violation
/// is at most `epsilon_violation`, per run.
pub fn efficiency_report(
    runs: &[RunResult],
    cmdp: &TabularCmdp,
    optimum: &ConstrainedOptimum,
    epsilon_gap: f64,
    epsilon_violation: f64,
) -> Result<EfficiencyReport> {
    if runs.len() < 2 {
        return Err(Error::param("runs", "need at least two runs"));
    }
    if runs.iter().any(|r| r.instance_digest != runs[0].instance_digest) {
        return Err(Error::MismatchedRuns);
    }
    let mut entries = Vec::with_capacity(runs.len());
    for run in runs {
        let mut first_hit = None;
        let mut err_sum = 0.0;
        let t_max = run.trace.len();
        for t in 0..=t_max {
            let b = exact_policy_values(cmdp, &policy_at(run, t)?)?;
            if t < t_max {
                let r = &run.trace[t];
                err_sum += (r.v_bar_r - b.v_reward_rho).abs() + (r.v_bar_c - b.v_cost_rho).abs();
            }
            let gap = optimum.optimal_reward_value - b.v_reward_rho;
            let violation = (b.v_cost_rho - run.budget).max(0.0);
            if first_hit.is_none() && gap <= epsilon_gap && violation <= epsilon_violation {
                first_hit = Some(FirstHit {
                    t,
                    transitions: run.transitions_through(t),
                });
            }
        }
        entries.push(EfficiencyEntry {
            algorithm: run.algorithm,
            seed: run.seed,
            first_hit,
            eval_error: if t_max == 0 { 0.0 } else { err_sum / t_max as f64 },
        });
    }
    let mut report = EfficiencyReport {
        epsilon_gap,
        epsilon_violation,
        entries,
        ratio_espo_over_pcrpo: None,
    };
    if let (Some(e), Some(p)) = (
        report.mean_first_hit(Algorithm::Espo),
        report.mean_first_hit(Algorithm::Pcrpo),
    ) {
        report.ratio_espo_over_pcrpo = Some(e / p);
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    /// Least-squares slope of `ln gap` against `ln T`.
    pub slope: f64,
    pub intercept: f64,
    /// Some gap was nonpositive and got floored at [`GAP_FLOOR`].
    pub clamped: bool,
}

/// Power-law fit `gap ≈ exp(intercept) · T^slope`.
pub fn rate_fit(points: &[(f64, f64)]) -> Result<RateFit> {
    if points.len() < 4 {
        return Err(Error::param("gap_at_T", "need at least 4 horizons"));
    }
    let (lo, hi) = points
        .iter()
        .fold((f64::INFINITY, 0.0_f64), |(lo, hi), &(t, _)| (lo.min(t), hi.max(t)));
    if !(lo > 0.0 && hi / lo >= 4.0) {
        return Err(Error::param("gap_at_T", "horizons must span at least two octaves"));
    }
    let mut clamped = false;
    let logs: Vec<(f64, f64)> = points
        .iter()
        .map(|&(t, g)| {
            let g = if g > GAP_FLOOR {
                g
            } else {
                clamped = true;
                GAP_FLOOR
            };
            (t.ln(), g.ln())
        })
        .collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = logs.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = logs.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    Ok(RateFit {
        slope,
        intercept: my - slope * mx,
        clamped,
    })
}
