//! Tabular CMDP instances and exact policy evaluation.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::SoftmaxPolicy;
use crate::table::StateActionTable;

const SUM_TOL: f64 = 1e-9;

/// Which of the two value streams an operation targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Reward,
    Cost,
}

/// Finite single-constraint CMDP `(S, A, P, r, c, b, γ, ρ)`.
///
/// `transitions` is stored flat in `(s, a, s')` row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularCmdp {
    pub num_states: usize,
    pub num_actions: usize,
    pub transitions: Vec<f64>,
    pub reward: StateActionTable,
    pub cost: StateActionTable,
    pub budget: f64,
    pub discount: f64,
    pub initial_dist: Vec<f64>,
    pub v_max: f64,
}

/// One violated instance invariant, with its location and magnitude.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Shape {
        field: &'static str,
        expected: usize,
        actual: usize,
    },
    EmptySpace,
    NegativeProbability {
        state: usize,
        action: usize,
        next: usize,
        value: f64,
    },
    /// `deficit` is `1 - Σ_{s'} P(s,a,s')`, so a row summing to 0.9 has deficit 0.1.
    TransitionRowSum {
        state: usize,
        action: usize,
        deficit: f64,
    },
    OutOfRange {
        table: Objective,
        state: usize,
        action: usize,
        value: f64,
    },
    InitialDistSum {
        deficit: f64,
    },
    InitialDistNegative {
        state: usize,
        value: f64,
    },
    Discount(f64),
    Budget(f64),
    VMax(f64),
    NonFinite(&'static str),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Shape {
                field,
                expected,
                actual,
            } => write!(f, "{field} has {actual} entries, expected {expected}"),
            Violation::EmptySpace => write!(f, "state and action spaces must be nonempty"),
            Violation::NegativeProbability {
                state,
                action,
                next,
                value,
            } => write!(
                f,
                "transition ({state}, {action}, {next}) is negative ({value:e})"
            ),
            Violation::TransitionRowSum {
                state,
                action,
                deficit,
            } => write!(
                f,
                "transition row ({state}, {action}) sums to {} (deficit {deficit:e})",
                1.0 - deficit
            ),
            Violation::OutOfRange {
                table,
                state,
                action,
                value,
            } => {
                let name = match table {
                    Objective::Reward => "reward",
                    Objective::Cost => "cost",
                };
                write!(f, "{name} out of range at ({state}, {action}): {value}")
            }
            Violation::InitialDistSum { deficit } => {
                write!(f, "initial_dist sums to {} (deficit {deficit:e})", 1.0 - deficit)
            }
            Violation::InitialDistNegative { state, value } => {
                write!(f, "initial_dist[{state}] is negative ({value:e})")
            }
            Violation::Discount(g) => write!(f, "discount {g} outside [0, 1)"),
            Violation::Budget(b) => write!(f, "budget {b} is negative or non-finite"),
            Violation::VMax(v) => write!(f, "v_max {v} must be positive"),
            Violation::NonFinite(field) => write!(f, "{field} contains non-finite entries"),
        }
    }
}

impl TabularCmdp {
    /// Builds an instance and rejects it if any invariant fails.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        num_states: usize,
        num_actions: usize,
        transitions: Vec<f64>,
        reward: StateActionTable,
        cost: StateActionTable,
        budget: f64,
        discount: f64,
        initial_dist: Vec<f64>,
    ) -> Result<Self> {
        let cmdp = Self {
            num_states,
            num_actions,
            transitions,
            reward,
            cost,
            budget,
            discount,
            initial_dist,
            v_max: 1.0,
        };
        cmdp.ensure_valid()?;
        Ok(cmdp)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.num_states, self.num_actions)
    }

    /// Successor distribution `P(s, a, ·)`.
    pub fn next_dist(&self, s: usize, a: usize) -> &[f64] {
        let n = self.num_states;
        let start = (s * self.num_actions + a) * n;
        &self.transitions[start..start + n]
    }

    pub fn prob(&self, s: usize, a: usize, next: usize) -> f64 {
        self.next_dist(s, a)[next]
    }

    pub fn table(&self, objective: Objective) -> &StateActionTable {
        match objective {
            Objective::Reward => &self.reward,
            Objective::Cost => &self.cost,
        }
    }

    /// Upper bound on any discounted value, `v_max / (1 - γ)`.
    pub fn value_bound(&self) -> f64 {
        self.v_max / (1.0 - self.discount)
    }

    /// Every violated invariant; empty when the instance is well formed.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let (ns, na) = self.shape();
        if ns == 0 || na == 0 {
            out.push(Violation::EmptySpace);
            return out;
        }
        let checks: [(&'static str, usize, usize); 4] = [
            ("transitions", ns * na * ns, self.transitions.len()),
            ("reward", ns * na, self.reward.as_slice().len()),
            ("cost", ns * na, self.cost.as_slice().len()),
            ("initial_dist", ns, self.initial_dist.len()),
        ];
        let mut shape_ok = true;
        for (field, expected, actual) in checks {
            if expected != actual {
                shape_ok = false;
                out.push(Violation::Shape {
                    field,
                    expected,
                    actual,
                });
            }
        }
        if self.reward.shape() != (ns, na) || self.cost.shape() != (ns, na) {
            shape_ok = false;
        }
        if !(0.0..1.0).contains(&self.discount) {
            out.push(Violation::Discount(self.discount));
        }
        if !(self.budget.is_finite() && self.budget >= 0.0) {
            out.push(Violation::Budget(self.budget));
        }
        if !(self.v_max.is_finite() && self.v_max > 0.0) {
            out.push(Violation::VMax(self.v_max));
        }
        if !shape_ok {
            return out;
        }
        if self.transitions.iter().any(|p| !p.is_finite()) {
            out.push(Violation::NonFinite("transitions"));
        }
        for s in 0..ns {
            for a in 0..na {
                let row = self.next_dist(s, a);
                for (next, &p) in row.iter().enumerate() {
                    if p < 0.0 {
                        out.push(Violation::NegativeProbability {
                            state: s,
                            action: a,
                            next,
                            value: p,
                        });
                    }
                }
                let deficit = 1.0 - row.iter().sum::<f64>();
                if deficit.abs() > SUM_TOL {
                    out.push(Violation::TransitionRowSum {
                        state: s,
                        action: a,
                        deficit,
                    });
                }
                for objective in [Objective::Reward, Objective::Cost] {
                    let value = self.table(objective)[(s, a)];
                    if !(0.0..=self.v_max).contains(&value) {
                        out.push(Violation::OutOfRange {
                            table: objective,
                            state: s,
                            action: a,
                            value,
                        });
                    }
                }
            }
        }
        for (s, &p) in self.initial_dist.iter().enumerate() {
            if p < 0.0 {
                out.push(Violation::InitialDistNegative { state: s, value: p });
            }
        }
        let deficit = 1.0 - self.initial_dist.iter().sum::<f64>();
        if !deficit.is_finite() {
            out.push(Violation::NonFinite("initial_dist"));
        } else if deficit.abs() > SUM_TOL {
            out.push(Violation::InitialDistSum { deficit });
        }
        out
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let violations = self.validate();
        if violations.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidCmdp(violations))
        }
    }

    /// Copy with a different budget.
    pub fn with_budget(&self, budget: f64) -> Self {
        Self {
            budget,
            ..self.clone()
        }
    }

    /// Policy-induced state transition matrix `P_π(s, s')`.
    pub fn policy_transition_matrix(&self, probs: &StateActionTable) -> DMatrix<f64> {
        let n = self.num_states;
        let mut m = DMatrix::zeros(n, n);
        for s in 0..n {
            for a in 0..self.num_actions {
                let pa = probs[(s, a)];
                if pa == 0.0 {
                    continue;
                }
                for (next, &p) in self.next_dist(s, a).iter().enumerate() {
                    m[(s, next)] += pa * p;
                }
            }
        }
        m
    }

    /// `r(s,a) + γ Σ_{s'} P(s,a,s') v(s')` for every pair.
    pub fn backup(&self, objective: Objective, values: &[f64]) -> StateActionTable {
        let immediate = self.table(objective);
        StateActionTable::from_fn(self.num_states, self.num_actions, |s, a| {
            let future: f64 = self
                .next_dist(s, a)
                .iter()
                .zip(values)
                .map(|(p, v)| p * v)
                .sum();
            immediate[(s, a)] + self.discount * future
        })
    }

    /// Cheap content digest used to check that two runs share an instance.
    pub fn digest(&self) -> u64 {
        const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
        const PRIME: u64 = 0x0000_0100_0000_01b3;
        let mut h = OFFSET;
        let mut eat = |x: u64| {
            for byte in x.to_le_bytes() {
                h ^= u64::from(byte);
                h = h.wrapping_mul(PRIME);
            }
        };
        eat(self.num_states as u64);
        eat(self.num_actions as u64);
        for x in self
            .transitions
            .iter()
            .chain(self.reward.iter())
            .chain(self.cost.iter())
            .chain(self.initial_dist.iter())
            .chain([self.budget, self.discount, self.v_max].iter())
        {
            eat(x.to_bits());
        }
        h
    }
}

/// Exact values, advantages and discounted visitation for one (instance, policy) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueBundle {
    pub v_reward: Vec<f64>,
    pub v_cost: Vec<f64>,
    pub q_reward: StateActionTable,
    pub q_cost: StateActionTable,
    pub adv_reward: StateActionTable,
    pub adv_cost: StateActionTable,
    /// Normalized discounted state visitation `d_ρ`.
    pub visitation: Vec<f64>,
    pub v_reward_rho: f64,
    pub v_cost_rho: f64,
}

impl ValueBundle {
    pub fn v(&self, objective: Objective) -> &[f64] {
        match objective {
            Objective::Reward => &self.v_reward,
            Objective::Cost => &self.v_cost,
        }
    }

    pub fn q(&self, objective: Objective) -> &StateActionTable {
        match objective {
            Objective::Reward => &self.q_reward,
            Objective::Cost => &self.q_cost,
        }
    }

    pub fn adv(&self, objective: Objective) -> &StateActionTable {
        match objective {
            Objective::Reward => &self.adv_reward,
            Objective::Cost => &self.adv_cost,
        }
    }

    pub fn v_rho(&self, objective: Objective) -> f64 {
        match objective {
            Objective::Reward => self.v_reward_rho,
            Objective::Cost => self.v_cost_rho,
        }
    }
}

/// Solves `(I - γ P_π) V = r_π` for both objectives and the visitation
/// `d_ρ = (1-γ) ρᵀ (I - γ P_π)^{-1}` with one LU factorization.
pub fn exact_policy_values(cmdp: &TabularCmdp, policy: &SoftmaxPolicy) -> Result<ValueBundle> {
    exact_values_for_probs(cmdp, policy.probs())
}

/// [`exact_policy_values`] for an arbitrary stochastic table (zeros allowed).
pub fn exact_values_for_probs(cmdp: &TabularCmdp, probs: &StateActionTable) -> Result<ValueBundle> {
    let (ns, na) = cmdp.shape();
    if probs.shape() != (ns, na) {
        return Err(Error::ShapeMismatch {
            expected: format!("policy {ns}x{na}"),
            actual: format!("policy {}x{}", probs.num_states(), probs.num_actions()),
        });
    }
    let gamma = cmdp.discount;
    let p_pi = cmdp.policy_transition_matrix(probs);
    let system = DMatrix::identity(ns, ns) - p_pi * gamma;
    let lu = system.clone().lu();

    let policy_average = |table: &StateActionTable| {
        DVector::from_fn(ns, |s, _| {
            probs
                .row(s)
                .iter()
                .zip(table.row(s))
                .map(|(p, x)| p * x)
                .sum()
        })
    };
    let solve = |rhs: DVector<f64>| {
        lu.solve(&rhs)
            .ok_or_else(|| Error::SingularSystem("I - γ P_π is singular".into()))
    };
    let v_reward: Vec<f64> = solve(policy_average(&cmdp.reward))?.iter().copied().collect();
    let v_cost: Vec<f64> = solve(policy_average(&cmdp.cost))?.iter().copied().collect();

    let rho = DVector::from_column_slice(&cmdp.initial_dist);
    let visit = system
        .transpose()
        .lu()
        .solve(&rho)
        .ok_or_else(|| Error::SingularSystem("(I - γ P_π)ᵀ is singular".into()))?;
    let visitation: Vec<f64> = visit.iter().map(|x| (1.0 - gamma) * x).collect();

    let q_reward = cmdp.backup(Objective::Reward, &v_reward);
    let q_cost = cmdp.backup(Objective::Cost, &v_cost);
    let adv_reward = StateActionTable::from_fn(ns, na, |s, a| q_reward[(s, a)] - v_reward[s]);
    let adv_cost = StateActionTable::from_fn(ns, na, |s, a| q_cost[(s, a)] - v_cost[s]);
    let rho_dot = |v: &[f64]| cmdp.initial_dist.iter().zip(v).map(|(p, x)| p * x).sum();
    let bundle = ValueBundle {
        v_reward_rho: rho_dot(&v_reward),
        v_cost_rho: rho_dot(&v_cost),
        v_reward,
        v_cost,
        q_reward,
        q_cost,
        adv_reward,
        adv_cost,
        visitation,
    };
    if !(bundle.v_reward_rho.is_finite() && bundle.v_cost_rho.is_finite()) {
        return Err(Error::NonFinite("policy values"));
    }
    Ok(bundle)
}
