//! Instance builders and independent reference computations for the
//! integration tests. Nothing here calls the library's solvers.

#![allow(dead_code)]

use espo_core::{make_random_cmdp, RandomCmdpSpec, StateActionTable, TabularCmdp};
use rand::Rng;

pub fn random(seed: u64, states: usize, actions: usize, branching: usize, quantile: f64) -> TabularCmdp {
    make_random_cmdp(seed, &RandomCmdpSpec::new(states, actions, branching, quantile)).unwrap()
}

/// Random strictly positive policy table.
pub fn random_probs(rng: &mut impl Rng, states: usize, actions: usize) -> StateActionTable {
    let mut t = StateActionTable::from_fn(states, actions, |_, _| 0.05 + rng.random::<f64>());
    for s in 0..states {
        let z: f64 = t.row(s).iter().sum();
        t.row_mut(s).iter_mut().for_each(|p| *p /= z);
    }
    t
}

/// Policy evaluation by plain fixed-point iteration of `V = r_π + γ P_π V`.
pub fn bellman_values(cmdp: &TabularCmdp, probs: &StateActionTable, table: &StateActionTable) -> Vec<f64> {
    let (ns, na) = cmdp.shape();
    let mut v = vec![0.0; ns];
    loop {
        let mut next = vec![0.0; ns];
        for s in 0..ns {
            for a in 0..na {
                let cont: f64 = (0..ns).map(|n| cmdp.prob(s, a, n) * v[n]).sum();
                next[s] += probs[(s, a)] * (table[(s, a)] + cmdp.discount * cont);
            }
        }
        let delta = next.iter().zip(&v).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        v = next;
        if delta < 1e-14 {
            return v;
        }
    }
}

pub fn q_from_values(cmdp: &TabularCmdp, table: &StateActionTable, v: &[f64]) -> StateActionTable {
    let (ns, na) = cmdp.shape();
    StateActionTable::from_fn(ns, na, |s, a| {
        table[(s, a)] + cmdp.discount * (0..ns).map(|n| cmdp.prob(s, a, n) * v[n]).sum::<f64>()
    })
}

/// `H`-step truncated `Q`: expected discounted sum of the first `H` costs or
/// rewards when starting at `(s, a)` and following `probs` afterwards.
pub fn truncated_q(cmdp: &TabularCmdp, probs: &StateActionTable, table: &StateActionTable, h: usize) -> StateActionTable {
    let (ns, na) = cmdp.shape();
    // v_k(s): expected discounted sum of the first k steps from s.
    let mut v = vec![0.0; ns];
    for _ in 0..h.saturating_sub(1) {
        let q = q_from_values(cmdp, table, &v);
        v = (0..ns).map(|s| (0..na).map(|a| probs[(s, a)] * q[(s, a)]).sum()).collect();
    }
    if h == 0 {
        return StateActionTable::zeros(ns, na);
    }
    q_from_values(cmdp, table, &v)
}

pub fn rho_value(cmdp: &TabularCmdp, v: &[f64]) -> f64 {
    cmdp.initial_dist.iter().zip(v).map(|(p, x)| p * x).sum()
}

pub fn sample_index(rng: &mut impl Rng, weights: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}
