//! Generative-model Monte-Carlo policy evaluation.
//!
//! Every (s, a) pair gets `m` truncated rollouts of horizon `H`, each costing
//! exactly `H` simulator transitions, so a call consumes `|S|·|A|·m·H`
//! transitions. Leftover budget below one more round of rollouts is discarded.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cmdp::TabularCmdp;
use crate::error::{Error, Result};
use crate::policy::SoftmaxPolicy;
use crate::table::StateActionTable;

pub const DEFAULT_TRUNCATION_EPSILON: f64 = 0.01;

/// Sampled `Q̄_r`, `Q̄_c` tables with their sample accounting.
#[derive(Debug, Clone, PartialEq)]
pub struct QEstimate {
    pub q_bar_r: StateActionTable,
    pub q_bar_c: StateActionTable,
    pub rollouts_per_pair: u64,
    pub horizon: usize,
    pub transitions_consumed: u64,
    pub rng_seed_used: u64,
}

/// Smallest `H` with `v_max γ^H / (1-γ) ≤ ε`, at least 1.
pub fn truncation_horizon(discount: f64, v_max: f64, epsilon: f64) -> usize {
    if discount <= 0.0 {
        return 1;
    }
    let h = ((epsilon * (1.0 - discount) / v_max).ln() / discount.ln()).ceil();
    if h.is_finite() && h >= 1.0 {
        h as usize
    } else {
        1
    }
}

/// Transitions consumed by one rollout round over every pair, `|S|·|A|·H`.
pub fn transitions_per_round(cmdp: &TabularCmdp, horizon: usize) -> u64 {
    (cmdp.num_states * cmdp.num_actions * horizon) as u64
}

/// Transitions actually consumed when `budget` is offered.
pub fn accounted_transitions(cmdp: &TabularCmdp, horizon: usize, budget: u64) -> u64 {
    let round = transitions_per_round(cmdp, horizon);
    (budget / round) * round
}

/// Cumulative-probability samplers for the dynamics and the policy.
struct Sampler<'a> {
    cmdp: &'a TabularCmdp,
    successors: Vec<Vec<(usize, f64)>>,
    policy_cdf: Vec<Vec<f64>>,
}

impl<'a> Sampler<'a> {
    fn new(cmdp: &'a TabularCmdp, policy: &SoftmaxPolicy) -> Self {
        let (ns, na) = cmdp.shape();
        let successors = (0..ns * na)
            .map(|pair| {
                let mut acc = 0.0;
                cmdp.next_dist(pair / na, pair % na)
                    .iter()
                    .enumerate()
                    .filter(|(_, &p)| p > 0.0)
                    .map(|(next, &p)| {
                        acc += p;
                        (next, acc)
                    })
                    .collect()
            })
            .collect();
        let policy_cdf = (0..ns)
            .map(|s| {
                let mut acc = 0.0;
                policy
                    .probs()
                    .row(s)
                    .iter()
                    .map(|p| {
                        acc += p;
                        acc
                    })
                    .collect()
            })
            .collect();
        Self {
            cmdp,
            successors,
            policy_cdf,
        }
    }

    fn next_state(&self, s: usize, a: usize, rng: &mut ChaCha8Rng) -> usize {
        let list = &self.successors[s * self.cmdp.num_actions + a];
        let u: f64 = rng.random::<f64>() * list.last().map_or(1.0, |x| x.1);
        list.iter()
            .find(|(_, c)| u < *c)
            .or(list.last())
            .map_or(s, |x| x.0)
    }

    fn action(&self, s: usize, rng: &mut ChaCha8Rng) -> usize {
        let cdf = &self.policy_cdf[s];
        let u: f64 = rng.random::<f64>() * cdf[cdf.len() - 1];
        cdf.iter().position(|&c| u < c).unwrap_or(cdf.len() - 1)
    }

    /// Mean discounted (reward, cost) over `m` rollouts started at `(s, a)`.
    fn pair_returns(&self, s0: usize, a0: usize, m: u64, horizon: usize, rng: &mut ChaCha8Rng) -> (f64, f64) {
        let gamma = self.cmdp.discount;
        let (mut sum_r, mut sum_c) = (0.0, 0.0);
        for _ in 0..m {
            let (mut s, mut a) = (s0, a0);
            let mut weight = 1.0;
            for _ in 0..horizon {
                sum_r += weight * self.cmdp.reward[(s, a)];
                sum_c += weight * self.cmdp.cost[(s, a)];
                weight *= gamma;
                s = self.next_state(s, a, rng);
                a = self.action(s, rng);
            }
        }
        (sum_r / m as f64, sum_c / m as f64)
    }
}

/// [`estimate_q_with`] at the default truncation tolerance.
pub fn estimate_q(
    cmdp: &TabularCmdp,
    policy: &SoftmaxPolicy,
    sample_budget: u64,
    seed: u64,
) -> Result<QEstimate> {
    estimate_q_with(cmdp, policy, sample_budget, seed, DEFAULT_TRUNCATION_EPSILON)
}

/// Monte-Carlo `Q̄` from `sample_budget` simulator transitions.
///
/// Pair `(s, a)` draws from ChaCha stream `s·|A| + a` of `seed`, so results do
/// not depend on how the pairs are scheduled across threads.
pub fn estimate_q_with(
    cmdp: &TabularCmdp,
    policy: &SoftmaxPolicy,
    sample_budget: u64,
    seed: u64,
    truncation_epsilon: f64,
) -> Result<QEstimate> {
    let (ns, na) = cmdp.shape();
    if policy.shape() != (ns, na) {
        return Err(Error::ShapeMismatch {
            expected: format!("policy {ns}x{na}"),
            actual: format!("policy {:?}", policy.shape()),
        });
    }
    let horizon = truncation_horizon(cmdp.discount, cmdp.v_max, truncation_epsilon);
    let round = transitions_per_round(cmdp, horizon);
    let m = sample_budget / round;
    if m == 0 {
        return Err(Error::BudgetTooSmall {
            budget: sample_budget,
            minimum: round,
        });
    }
    let sampler = Sampler::new(cmdp, policy);
    let returns: Vec<(f64, f64)> = (0..ns * na)
        .into_par_iter()
        .map(|pair| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(pair as u64);
            sampler.pair_returns(pair / na, pair % na, m, horizon, &mut rng)
        })
        .collect();
    let q_bar_r = StateActionTable::from_vec(ns, na, returns.iter().map(|x| x.0).collect())?;
    let q_bar_c = StateActionTable::from_vec(ns, na, returns.iter().map(|x| x.1).collect())?;
    Ok(QEstimate {
        q_bar_r,
        q_bar_c,
        rollouts_per_pair: m,
        horizon,
        transitions_consumed: m * round,
        rng_seed_used: seed,
    })
}

/// `V̄(ρ) = Σ_s ρ(s) Σ_a π(a|s) Q̄(s,a)` for reward and cost.
pub fn v_from_estimate(est: &QEstimate, policy: &SoftmaxPolicy, rho: &[f64]) -> (f64, f64) {
    v_from_tables(&est.q_bar_r, &est.q_bar_c, policy, rho)
}

pub fn v_from_tables(
    q_r: &StateActionTable,
    q_c: &StateActionTable,
    policy: &SoftmaxPolicy,
    rho: &[f64],
) -> (f64, f64) {
    let weigh = |q: &StateActionTable| -> f64 {
        policy
            .average(q)
            .iter()
            .zip(rho)
            .map(|(v, p)| v * p)
            .sum()
    };
    (weigh(q_r), weigh(q_c))
}
