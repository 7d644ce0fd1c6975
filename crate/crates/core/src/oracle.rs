//! Exact constrained optimum through the occupancy-measure linear program.
//!
//! ```text
//! maximize   (1/(1-γ)) Σ d(s,a) r(s,a)
//! subject to Σ_a d(s',a) = (1-γ) ρ(s') + γ Σ_{s,a} d(s,a) P(s,a,s')   for all s'
//!            (1/(1-γ)) Σ d(s,a) c(s,a) ≤ b
//!            d ≥ 0
//! ```
//!
//! Summing the flow constraints forces `Σ d = 1`, so normalization is implied.

use minilp::{ComparisonOp, LinearExpr, OptimizationDirection, Problem};
use serde::{Deserialize, Serialize};

use crate::cmdp::{exact_values_for_probs, Objective, TabularCmdp};
use crate::error::{Error, Result};
use crate::policy::SoftmaxPolicy;
use crate::table::StateActionTable;

/// State marginals at or below this get uniform policy rows.
pub const MARGINAL_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    Max,
    Min,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueIterationResult {
    pub value_rho: f64,
    pub values: Vec<f64>,
    /// Greedy deterministic action per state.
    pub policy: Vec<usize>,
    pub sweeps: usize,
}

/// Bellman optimality iteration to a `1e-10` sup-norm fixed point.
pub fn value_iteration(
    cmdp: &TabularCmdp,
    objective: Objective,
    sense: Sense,
) -> ValueIterationResult {
    let pick = |row: &[f64]| -> (usize, f64) {
        let mut best = (0, row[0]);
        for (a, &x) in row.iter().enumerate().skip(1) {
            let better = match sense {
                Sense::Max => x > best.1,
                Sense::Min => x < best.1,
            };
            if better {
                best = (a, x);
            }
        }
        best
    };
    let mut values = vec![0.0; cmdp.num_states];
    let mut sweeps = 0;
    loop {
        sweeps += 1;
        let q = cmdp.backup(objective, &values);
        let next: Vec<f64> = q.rows().map(|row| pick(row).1).collect();
        let delta = next
            .iter()
            .zip(&values)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        values = next;
        if delta < 1e-10 || sweeps > 1_000_000 {
            break;
        }
    }
    let q = cmdp.backup(objective, &values);
    let policy = q.rows().map(|row| pick(row).0).collect();
    let value_rho = cmdp
        .initial_dist
        .iter()
        .zip(&values)
        .map(|(p, v)| p * v)
        .sum();
    ValueIterationResult {
        value_rho,
        values,
        policy,
        sweeps,
    }
}

/// The constrained optimum `π*` and its values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstrainedOptimum {
    pub optimal_reward_value: f64,
    pub optimal_cost_value: f64,
    /// Normalized discounted occupancy `d*(s, a)` of the extracted policy.
    pub occupancy: StateActionTable,
    pub policy: StateActionTable,
    /// `false` when no occupancy meets the budget; the fields then describe the
    /// cost-minimizing solution.
    pub feasible: bool,
    /// Raw LP objective in value units, before re-evaluating the extracted policy.
    pub lp_objective: f64,
}

impl ConstrainedOptimum {
    /// `π*` as a softmax policy with logits `ln max(π*, floor)`.
    pub fn softmax_policy(&self, floor: f64) -> Result<SoftmaxPolicy> {
        SoftmaxPolicy::from_probs(&self.policy, floor)
    }
}

pub fn solve_constrained_optimum(cmdp: &TabularCmdp) -> Result<ConstrainedOptimum> {
    cmdp.ensure_valid()?;
    match solve_lp(cmdp, true) {
        Ok((occ, obj)) => finish(cmdp, &occ, obj, true),
        Err(minilp::Error::Infeasible) => {
            let (occ, obj) = solve_lp(cmdp, false).map_err(|e| Error::Lp(e.to_string()))?;
            finish(cmdp, &occ, obj, false)
        }
        Err(e) => Err(Error::Lp(e.to_string())),
    }
}

/// With `constrained`, maximizes reward under the budget; otherwise minimizes cost.
fn solve_lp(
    cmdp: &TabularCmdp,
    constrained: bool,
) -> std::result::Result<(StateActionTable, f64), minilp::Error> {
    let (ns, na) = cmdp.shape();
    let gamma = cmdp.discount;
    let horizon = 1.0 / (1.0 - gamma);
    let (direction, objective) = if constrained {
        (OptimizationDirection::Maximize, &cmdp.reward)
    } else {
        (OptimizationDirection::Minimize, &cmdp.cost)
    };
    let mut problem = Problem::new(direction);
    let vars: Vec<_> = (0..ns * na)
        .map(|i| problem.add_var(horizon * objective.as_slice()[i], (0.0, f64::INFINITY)))
        .collect();
    for next in 0..ns {
        let mut expr = LinearExpr::empty();
        for s in 0..ns {
            for a in 0..na {
                let mut coeff = -gamma * cmdp.prob(s, a, next);
                if s == next {
                    coeff += 1.0;
                }
                if coeff != 0.0 {
                    expr.add(vars[s * na + a], coeff);
                }
            }
        }
        problem.add_constraint(expr, ComparisonOp::Eq, (1.0 - gamma) * cmdp.initial_dist[next]);
    }
    if constrained {
        let mut expr = LinearExpr::empty();
        for (i, &v) in vars.iter().enumerate() {
            let c = cmdp.cost.as_slice()[i];
            if c != 0.0 {
                expr.add(v, horizon * c);
            }
        }
        problem.add_constraint(expr, ComparisonOp::Le, cmdp.budget);
    }
    let solution = problem.solve()?;
    let occ = StateActionTable::from_fn(ns, na, |s, a| solution[vars[s * na + a]].max(0.0));
    Ok((occ, solution.objective()))
}

fn finish(
    cmdp: &TabularCmdp,
    raw: &StateActionTable,
    lp_objective: f64,
    feasible: bool,
) -> Result<ConstrainedOptimum> {
    let (ns, na) = cmdp.shape();
    let mut policy = StateActionTable::filled(ns, na, 1.0 / na as f64);
    for s in 0..ns {
        let marginal: f64 = raw.row(s).iter().sum();
        if marginal > MARGINAL_FLOOR {
            for (p, &d) in policy.row_mut(s).iter_mut().zip(raw.row(s)) {
                *p = d / marginal;
            }
        }
    }
    // Re-evaluate the extracted policy exactly so values, occupancy and policy
    // agree to solve precision rather than simplex tolerance.
    let bundle = exact_values_for_probs(cmdp, &policy)?;
    let occupancy =
        StateActionTable::from_fn(ns, na, |s, a| bundle.visitation[s] * policy[(s, a)]);
    Ok(ConstrainedOptimum {
        optimal_reward_value: bundle.v_reward_rho,
        optimal_cost_value: bundle.v_cost_rho,
        occupancy,
        policy,
        feasible,
        lp_objective,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bandit(gamma: f64, budget: f64) -> TabularCmdp {
        TabularCmdp::new(
            1,
            2,
            vec![1.0, 1.0],
            StateActionTable::from_rows(&[vec![1.0, 0.0]]).unwrap(),
            StateActionTable::from_rows(&[vec![1.0, 0.0]]).unwrap(),
            budget,
            gamma,
            vec![1.0],
        )
        .unwrap()
    }

    #[test]
    fn single_state_value_iteration() {
        let m = TabularCmdp::new(
            1,
            1,
            vec![1.0],
            StateActionTable::filled(1, 1, 1.0),
            StateActionTable::zeros(1, 1),
            0.0,
            0.9,
            vec![1.0],
        )
        .unwrap();
        let vi = value_iteration(&m, Objective::Reward, Sense::Max);
        assert!((vi.value_rho - 10.0).abs() < 1e-8);
    }

    #[test]
    fn bandit_mixture_matches_grid_search() {
        let opt = solve_constrained_optimum(&bandit(0.0, 0.4)).unwrap();
        assert!(opt.feasible);
        // Oracle: mixture probability p on action 0 at resolution 1e-4.
        let best = (0..=10_000)
            .map(|i| f64::from(i) * 1e-4)
            .filter(|p| *p <= 0.4 + 1e-12)
            .fold(0.0_f64, f64::max);
        assert!((opt.optimal_reward_value - best).abs() < 1e-6);
        assert!((opt.policy[(0, 0)] - 0.4).abs() < 1e-6);
    }

    #[test]
    fn infeasible_budget_returns_cost_minimizer() {
        let mut m = bandit(0.5, 0.0);
        m.cost = StateActionTable::from_rows(&[vec![1.0, 0.5]]).unwrap();
        m.budget = 0.5; // cheapest policy costs 0.5 / (1 - 0.5) = 1.0
        let opt = solve_constrained_optimum(&m).unwrap();
        assert!(!opt.feasible);
        assert!((opt.optimal_cost_value - 1.0).abs() < 1e-7);
    }

    #[test]
    fn vacuous_constraint_matches_value_iteration() {
        let mut m = bandit(0.9, 0.0);
        m.cost = StateActionTable::zeros(1, 2);
        let opt = solve_constrained_optimum(&m).unwrap();
        let vi = value_iteration(&m, Objective::Reward, Sense::Max);
        assert!((opt.optimal_reward_value - vi.value_rho).abs() < 1e-6);
    }
}
