//! Seeded benchmark instances: Garnet-style random CMDPs and slippery gridworlds.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::cmdp::{Objective, TabularCmdp};
use crate::error::{Error, Result};
use crate::oracle::{value_iteration, Sense};
use crate::table::StateActionTable;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomCmdpSpec {
    pub num_states: usize,
    pub num_actions: usize,
    /// Successors per (s, a), each receiving Dirichlet(1) mass.
    pub branching: usize,
    /// Position of the budget between the cost-minimizing and the
    /// cost-maximizing policy values, in `(0, 1]`.
    pub budget_quantile: f64,
    #[serde(default = "default_discount")]
    pub discount: f64,
}

fn default_discount() -> f64 {
    0.9
}

impl RandomCmdpSpec {
    pub fn new(num_states: usize, num_actions: usize, branching: usize, budget_quantile: f64) -> Self {
        Self {
            num_states,
            num_actions,
            branching,
            budget_quantile,
            discount: default_discount(),
        }
    }

    pub fn with_discount(mut self, discount: f64) -> Self {
        self.discount = discount;
        self
    }
}

/// Garnet-style instance with uniform rewards/costs on `[0, 1]` and a uniform
/// initial distribution. Identical seeds give bit-identical instances.
pub fn make_random_cmdp(seed: u64, spec: &RandomCmdpSpec) -> Result<TabularCmdp> {
    let (ns, na) = (spec.num_states, spec.num_actions);
    if ns == 0 || na == 0 {
        return Err(Error::param("num_states/num_actions", "must be positive"));
    }
    if spec.branching == 0 || spec.branching > ns {
        return Err(Error::param(
            "branching",
            format!("must lie in 1..={ns}, got {}", spec.branching),
        ));
    }
    if !(spec.budget_quantile > 0.0 && spec.budget_quantile <= 1.0) {
        return Err(Error::param("budget_quantile", "must lie in (0, 1]"));
    }
    if !(0.0..1.0).contains(&spec.discount) {
        return Err(Error::param("discount", "must lie in [0, 1)"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut transitions = vec![0.0; ns * na * ns];
    for pair in 0..ns * na {
        let successors = sample(&mut rng, ns, spec.branching);
        let weights: Vec<f64> = (0..spec.branching)
            .map(|_| rng.sample::<f64, _>(Exp1))
            .collect();
        let total: f64 = weights.iter().sum();
        for (next, w) in successors.iter().zip(weights) {
            transitions[pair * ns + next] = w / total;
        }
    }
    let reward = StateActionTable::from_fn(ns, na, |_, _| rng.random::<f64>());
    let cost = StateActionTable::from_fn(ns, na, |_, _| rng.random::<f64>());
    let mut cmdp = TabularCmdp {
        num_states: ns,
        num_actions: na,
        transitions,
        reward,
        cost,
        budget: 0.0,
        discount: spec.discount,
        initial_dist: vec![1.0 / ns as f64; ns],
        v_max: 1.0,
    };
    let lo = value_iteration(&cmdp, Objective::Cost, Sense::Min).value_rho;
    let hi = value_iteration(&cmdp, Objective::Cost, Sense::Max).value_rho;
    cmdp.budget = lo + spec.budget_quantile * (hi - lo);
    cmdp.ensure_valid()?;
    Ok(cmdp)
}

/// Grid cell `(x, y)`; state index is `y * width + x`.
pub type Cell = (usize, usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridworldSpec {
    pub width: usize,
    pub height: usize,
    pub hazards: Vec<Cell>,
    pub goal: Cell,
    pub budget: f64,
    #[serde(default = "default_discount")]
    pub discount: f64,
    #[serde(default = "default_slip")]
    pub slip: f64,
}

fn default_slip() -> f64 {
    0.1
}

impl GridworldSpec {
    pub fn new(width: usize, height: usize, hazards: Vec<Cell>, goal: Cell, budget: f64) -> Self {
        Self {
            width,
            height,
            hazards,
            goal,
            budget,
            discount: default_discount(),
            slip: default_slip(),
        }
    }

    pub fn state(&self, (x, y): Cell) -> usize {
        y * self.width + x
    }
}

/// Actions: north, south, west, east.
pub const GRID_MOVES: [(isize, isize); 4] = [(0, -1), (0, 1), (-1, 0), (1, 0)];

/// Four-action gridworld. The intended move succeeds with probability
/// `1 - slip`; the slip mass is spread uniformly over the four moves, and
/// moves into a wall stay put. Entering the goal pays reward 1 and the goal
/// is absorbing; every step taken from a hazard cell costs 1. Start is (0, 0).
pub fn make_gridworld(spec: &GridworldSpec) -> Result<TabularCmdp> {
    let (w, h) = (spec.width, spec.height);
    if w < 2 || h < 2 {
        return Err(Error::param("width/height", "dimensions must be at least 2"));
    }
    let in_bounds = |(x, y): Cell| x < w && y < h;
    if !in_bounds(spec.goal) {
        return Err(Error::param("goal", format!("{:?} is outside the grid", spec.goal)));
    }
    if let Some(c) = spec.hazards.iter().find(|c| !in_bounds(**c)) {
        return Err(Error::param("hazards", format!("{c:?} is outside the grid")));
    }
    if spec.hazards.contains(&spec.goal) {
        return Err(Error::param("goal", "goal cell is also a hazard"));
    }
    if !(0.0..=1.0).contains(&spec.slip) {
        return Err(Error::param("slip", "must lie in [0, 1]"));
    }

    let ns = w * h;
    let na = GRID_MOVES.len();
    let goal = spec.state(spec.goal);
    let step = |(x, y): Cell, (dx, dy): (isize, isize)| -> usize {
        let nx = x as isize + dx;
        let ny = y as isize + dy;
        if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
            spec.state((x, y))
        } else {
            spec.state((nx as usize, ny as usize))
        }
    };

    let mut transitions = vec![0.0; ns * na * ns];
    let mut reward = StateActionTable::zeros(ns, na);
    let mut cost = StateActionTable::zeros(ns, na);
    for y in 0..h {
        for x in 0..w {
            let s = spec.state((x, y));
            let hazard = spec.hazards.contains(&(x, y));
            for (a, &mv) in GRID_MOVES.iter().enumerate() {
                let row = &mut transitions[(s * na + a) * ns..(s * na + a + 1) * ns];
                if s == goal {
                    row[goal] = 1.0;
                    continue;
                }
                row[step((x, y), mv)] += 1.0 - spec.slip;
                for &other in &GRID_MOVES {
                    row[step((x, y), other)] += spec.slip / na as f64;
                }
                reward[(s, a)] = row[goal];
                if hazard {
                    cost[(s, a)] = 1.0;
                }
            }
        }
    }
    let mut initial_dist = vec![0.0; ns];
    initial_dist[0] = 1.0;
    let cmdp = TabularCmdp {
        num_states: ns,
        num_actions: na,
        transitions,
        reward,
        cost,
        budget: spec.budget,
        discount: spec.discount,
        initial_dist,
        v_max: 1.0,
    };
    cmdp.ensure_valid()?;
    Ok(cmdp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmdp::exact_policy_values;
    use crate::policy::SoftmaxPolicy;

    #[test]
    fn same_seed_same_instance() {
        let spec = RandomCmdpSpec::new(6, 3, 2, 0.4);
        let a = make_random_cmdp(7, &spec).unwrap();
        let b = make_random_cmdp(7, &spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.digest(), b.digest());
        let c = make_random_cmdp(8, &spec).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn generated_instance_validates() {
        let m = make_random_cmdp(3, &RandomCmdpSpec::new(10, 5, 3, 0.5)).unwrap();
        assert!(m.validate().is_empty());
    }

    #[test]
    fn top_quantile_admits_cost_maximizer() {
        let m = make_random_cmdp(11, &RandomCmdpSpec::new(5, 3, 2, 1.0)).unwrap();
        let worst = value_iteration(&m, Objective::Cost, Sense::Max);
        assert!(m.budget - worst.value_rho >= -1e-12);
    }

    #[test]
    fn bad_parameters_are_rejected() {
        assert!(make_random_cmdp(1, &RandomCmdpSpec::new(3, 2, 4, 0.5)).is_err());
        assert!(make_random_cmdp(1, &RandomCmdpSpec::new(3, 2, 2, 0.0)).is_err());
        assert!(make_random_cmdp(1, &RandomCmdpSpec::new(0, 2, 1, 0.5)).is_err());
    }

    #[test]
    fn hazard_free_grid_has_zero_cost() {
        let m = make_gridworld(&GridworldSpec::new(3, 3, vec![], (2, 2), 0.0)).unwrap();
        assert!(m.validate().is_empty());
        let logits = StateActionTable::from_fn(9, 4, |s, a| ((s * 7 + a * 3) % 5) as f64 * 0.3);
        let p = SoftmaxPolicy::from_logits(logits).unwrap();
        assert_eq!(exact_policy_values(&m, &p).unwrap().v_cost_rho, 0.0);
    }

    #[test]
    fn grid_rejects_bad_layouts() {
        assert!(make_gridworld(&GridworldSpec::new(3, 3, vec![(2, 2)], (2, 2), 0.0)).is_err());
        assert!(make_gridworld(&GridworldSpec::new(3, 3, vec![], (3, 0), 0.0)).is_err());
        assert!(make_gridworld(&GridworldSpec::new(3, 3, vec![(0, 5)], (2, 2), 0.0)).is_err());
        assert!(make_gridworld(&GridworldSpec::new(1, 3, vec![], (0, 2), 0.0)).is_err());
    }

    #[test]
    fn detour_beats_hazardous_shortest_path() {
        // Goal at (2, 0); the only shortest path from (0, 0) runs through (1, 0).
        let spec = GridworldSpec::new(3, 3, vec![(1, 0)], (2, 0), 0.0);
        let m = make_gridworld(&spec).unwrap();
        let goal = spec.state(spec.goal);
        let eval = |choice: &[usize]| {
            let probs = StateActionTable::from_fn(9, 4, |s, a| f64::from(u8::from(choice[s] == a)));
            let p = SoftmaxPolicy::from_probs(&probs, 1e-300).unwrap();
            let b = exact_policy_values(&m, &p).unwrap();
            (b.v_reward_rho, b.v_cost_rho)
        };
        let mut greedy = vec![0; 9];
        greedy[spec.state((0, 0))] = 3;
        greedy[spec.state((1, 0))] = 3;
        let (greedy_r, greedy_c) = eval(&greedy);
        assert!(greedy_c > 0.0);

        // Enumerate every deterministic policy (goal row is irrelevant).
        let free: Vec<usize> = (0..9).filter(|&s| s != goal).collect();
        let mut best_cost = f64::INFINITY;
        let mut choice = vec![0; 9];
        for code in 0..4usize.pow(free.len() as u32) {
            let mut c = code;
            for &s in &free {
                choice[s] = c % 4;
                c /= 4;
            }
            let (r, cst) = eval(&choice);
            if r >= 0.5 * greedy_r {
                best_cost = best_cost.min(cst);
            }
        }
        assert!(best_cost < greedy_c, "{best_cost} vs {greedy_c}");
    }
}
