//! Softmax policies, exact policy gradients, and the NPG update family.
//!
//! For a softmax policy the natural gradient step on a weighted objective is
//! an additive logit step `w + η G / (1-γ)` or, equivalently, the
//! multiplicative form `π(a|s) exp(η G(s,a) / (1-γ)) / Z(s)`. The four modes
//! differ only in the exponent table `G`.

use serde::{Deserialize, Serialize};

use crate::cmdp::{Objective, TabularCmdp, ValueBundle};
use crate::error::{Error, Result};
use crate::table::StateActionTable;

/// Gradient norms below this count as zero.
pub const ZERO_GRADIENT: f64 = 1e-12;
/// Relative Gram-determinant threshold for treating two gradients as collinear.
pub const COLLINEAR_TOL: f64 = 1e-12;

/// A softmax policy: the logit table and the probabilities it induces.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxPolicy {
    logits: StateActionTable,
    probs: StateActionTable,
}

impl SoftmaxPolicy {
    /// `π(a|s) = exp(w(s,a)) / Σ_a' exp(w(s,a'))` with per-state max subtraction.
    pub fn from_logits(logits: StateActionTable) -> Result<Self> {
        for s in 0..logits.num_states() {
            for a in 0..logits.num_actions() {
                if !logits[(s, a)].is_finite() {
                    return Err(Error::NonFiniteLogit {
                        state: s,
                        action: a,
                    });
                }
            }
        }
        let mut probs = logits.clone();
        for s in 0..probs.num_states() {
            let row = probs.row_mut(s);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                total += *x;
            }
            for x in row.iter_mut() {
                *x /= total;
            }
        }
        Ok(Self { logits, probs })
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        Self::from_logits(StateActionTable::zeros(num_states, num_actions))
            .expect("zero logits are finite")
    }

    /// Logits `ln max(π, floor)` for a target stochastic policy table.
    pub fn from_probs(probs: &StateActionTable, floor: f64) -> Result<Self> {
        Self::from_logits(probs.map(|p| p.max(floor).ln()))
    }

    pub fn logits(&self) -> &StateActionTable {
        &self.logits
    }

    pub fn probs(&self) -> &StateActionTable {
        &self.probs
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[(s, a)]
    }

    pub fn num_states(&self) -> usize {
        self.logits.num_states()
    }

    pub fn num_actions(&self) -> usize {
        self.logits.num_actions()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.logits.shape()
    }

    /// `Σ_a π(a|s) table(s,a)` for every state.
    pub fn average(&self, table: &StateActionTable) -> Vec<f64> {
        (0..self.num_states())
            .map(|s| {
                self.probs
                    .row(s)
                    .iter()
                    .zip(table.row(s))
                    .map(|(p, x)| p * x)
                    .sum()
            })
            .collect()
    }
}

/// Softmax policy gradient assembled from a Q table and a visitation vector:
/// `(1/(1-γ)) d(s) π(a|s) (Q(s,a) - Σ_a' π(a'|s) Q(s,a'))`.
///
/// For `Objective::Cost` the table is negated (the cost-descent direction).
pub fn gradient_from_q(
    policy: &SoftmaxPolicy,
    visitation: &[f64],
    q: &StateActionTable,
    discount: f64,
    objective: Objective,
) -> StateActionTable {
    let baseline = policy.average(q);
    let sign = match objective {
        Objective::Reward => 1.0,
        Objective::Cost => -1.0,
    };
    let scale = sign / (1.0 - discount);
    StateActionTable::from_fn(policy.num_states(), policy.num_actions(), |s, a| {
        scale * visitation[s] * policy.prob(s, a) * (q[(s, a)] - baseline[s])
    })
}

/// Exact `∇_w V_r(ρ)` for `Reward`, or `-∇_w V_c(ρ)` for `Cost`.
pub fn exact_gradient(
    cmdp: &TabularCmdp,
    policy: &SoftmaxPolicy,
    bundle: &ValueBundle,
    objective: Objective,
) -> StateActionTable {
    let sign = match objective {
        Objective::Reward => 1.0,
        Objective::Cost => -1.0,
    };
    let adv = bundle.adv(objective);
    let scale = sign / (1.0 - cmdp.discount);
    StateActionTable::from_fn(policy.num_states(), policy.num_actions(), |s, a| {
        scale * bundle.visitation[s] * policy.prob(s, a) * adv[(s, a)]
    })
}

/// Reward-ascent and cost-descent gradients with their geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientPair {
    pub g_reward: StateActionTable,
    pub g_cost_descent: StateActionTable,
    pub norm_reward: f64,
    pub norm_cost: f64,
    pub dot: f64,
    /// `dot < 0`, i.e. the angle between the two exceeds 90 degrees.
    pub conflict: bool,
}

impl GradientPair {
    pub fn new(g_reward: StateActionTable, g_cost_descent: StateActionTable) -> Self {
        let dot = g_reward.dot(&g_cost_descent);
        Self {
            norm_reward: g_reward.norm(),
            norm_cost: g_cost_descent.norm(),
            conflict: dot < 0.0,
            dot,
            g_reward,
            g_cost_descent,
        }
    }

    pub fn exact(cmdp: &TabularCmdp, policy: &SoftmaxPolicy, bundle: &ValueBundle) -> Self {
        Self::new(
            exact_gradient(cmdp, policy, bundle, Objective::Reward),
            exact_gradient(cmdp, policy, bundle, Objective::Cost),
        )
    }

    /// Either gradient is numerically zero.
    pub fn is_degenerate(&self) -> bool {
        self.norm_reward < ZERO_GRADIENT || self.norm_cost < ZERO_GRADIENT
    }

    pub fn cos_angle(&self) -> f64 {
        self.dot / (self.norm_reward * self.norm_cost)
    }
}

/// Exponent-weight selection for one NPG step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NpgMode {
    /// `G = Q̄_r`
    Reward,
    /// `G = -Q̄_c`
    Cost,
    /// `G = x_r Q̄_r - x_c Q̄_c` with `x_r + x_c = 1`, both nonnegative.
    SoftNoConflict { x_r: f64, x_c: f64 },
    /// `G = y_r Q̄_r - y_c Q̄_c` with coefficients from [`decompose_in_span`].
    SoftConflict { y_r: f64, y_c: f64 },
}

impl NpgMode {
    /// Weights `(on Q̄_r, on Q̄_c)` before the cost sign flip.
    pub fn weights(self) -> (f64, f64) {
        match self {
            NpgMode::Reward => (1.0, 0.0),
            NpgMode::Cost => (0.0, 1.0),
            NpgMode::SoftNoConflict { x_r, x_c } => (x_r, x_c),
            NpgMode::SoftConflict { y_r, y_c } => (y_r, y_c),
        }
    }

    fn check(self) -> Result<()> {
        match self {
            NpgMode::SoftNoConflict { x_r, x_c } => {
                if !(x_r.is_finite() && x_c.is_finite()) {
                    return Err(Error::InvalidWeights {
                        first: x_r,
                        second: x_c,
                        reason: "non-finite",
                    });
                }
                if x_r < 0.0 || x_c < 0.0 {
                    return Err(Error::InvalidWeights {
                        first: x_r,
                        second: x_c,
                        reason: "negative weight",
                    });
                }
                if (x_r + x_c - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidWeights {
                        first: x_r,
                        second: x_c,
                        reason: "weights must sum to 1",
                    });
                }
                Ok(())
            }
            NpgMode::SoftConflict { y_r, y_c } if !(y_r.is_finite() && y_c.is_finite()) => {
                Err(Error::InvalidWeights {
                    first: y_r,
                    second: y_c,
                    reason: "non-finite",
                })
            }
            _ => Ok(()),
        }
    }
}

/// Exponent table `G` for a mode.
pub fn npg_exponent(
    q_bar_r: &StateActionTable,
    q_bar_c: &StateActionTable,
    mode: NpgMode,
) -> Result<StateActionTable> {
    mode.check()?;
    let (wr, wc) = mode.weights();
    let g = q_bar_r.combine(wr, q_bar_c, -wc);
    if !g.is_finite() {
        return Err(Error::NonFinite("NPG exponent"));
    }
    Ok(g)
}

/// Additive-logit NPG step: `w ← w + η G / (1-γ)`.
pub fn npg_update(
    policy: &SoftmaxPolicy,
    q_bar_r: &StateActionTable,
    q_bar_c: &StateActionTable,
    mode: NpgMode,
    learning_rate: f64,
    discount: f64,
) -> Result<SoftmaxPolicy> {
    check_step(policy, q_bar_r, q_bar_c, learning_rate)?;
    let g = npg_exponent(q_bar_r, q_bar_c, mode)?;
    let step = learning_rate / (1.0 - discount);
    SoftmaxPolicy::from_logits(policy.logits().combine(1.0, &g, step))
}

/// Multiplicative NPG step: `π(a|s) exp(η G(s,a)/(1-γ)) / Z(s)`.
///
/// Returns the probability table together with the normalizers `Z(s)`.
pub fn npg_update_multiplicative(
    policy: &SoftmaxPolicy,
    q_bar_r: &StateActionTable,
    q_bar_c: &StateActionTable,
    mode: NpgMode,
    learning_rate: f64,
    discount: f64,
) -> Result<(StateActionTable, Vec<f64>)> {
    check_step(policy, q_bar_r, q_bar_c, learning_rate)?;
    let g = npg_exponent(q_bar_r, q_bar_c, mode)?;
    let step = learning_rate / (1.0 - discount);
    let mut probs = policy.probs().clone();
    let mut normalizers = Vec::with_capacity(probs.num_states());
    for s in 0..probs.num_states() {
        // Shifting the exponent by its row max leaves the ratio unchanged; Z is
        // reported for the unshifted exponent.
        let shift = g.row(s).iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x)) * step;
        let row = probs.row_mut(s);
        let mut z = 0.0;
        for (p, &x) in row.iter_mut().zip(g.row(s)) {
            *p *= (step * x - shift).exp();
            z += *p;
        }
        for p in row.iter_mut() {
            *p /= z;
        }
        normalizers.push(z * shift.exp());
    }
    Ok((probs, normalizers))
}

fn check_step(
    policy: &SoftmaxPolicy,
    q_bar_r: &StateActionTable,
    q_bar_c: &StateActionTable,
    learning_rate: f64,
) -> Result<()> {
    if !(learning_rate.is_finite() && learning_rate > 0.0) {
        return Err(Error::param("learning_rate", "must be positive and finite"));
    }
    for q in [q_bar_r, q_bar_c] {
        if q.shape() != policy.shape() {
            return Err(Error::ShapeMismatch {
                expected: format!("{:?}", policy.shape()),
                actual: format!("{:?}", q.shape()),
            });
        }
        if !q.is_finite() {
            return Err(Error::NonFinite("Q estimate"));
        }
    }
    Ok(())
}

/// Conflict-projection combiner:
/// `x_r (g_r - (g_r·g_c/‖g_c‖²) g_c) + x_c (g_c - (g_c·g_r/‖g_r‖²) g_r)`.
pub fn project_conflicting(
    g_r: &StateActionTable,
    g_c: &StateActionTable,
    x_r: f64,
    x_c: f64,
) -> Result<StateActionTable> {
    let nr2 = g_r.norm_sq();
    let nc2 = g_c.norm_sq();
    for n2 in [nr2, nc2] {
        if n2.sqrt() < ZERO_GRADIENT {
            return Err(Error::DegenerateGradient { norm: n2.sqrt() });
        }
    }
    let dot = g_r.dot(g_c);
    let r_perp = g_r.combine(1.0, g_c, -dot / nc2);
    let c_perp = g_c.combine(1.0, g_r, -dot / nr2);
    Ok(r_perp.combine(x_r, &c_perp, x_c))
}

/// Coordinates of `g` in the basis `{g_r, g_c}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpanDecomposition {
    pub y_r: f64,
    pub y_c: f64,
    /// `‖y_r g_r + y_c g_c - g‖ / max(‖g‖, tiny)`.
    pub relative_residual: f64,
}

/// Least-squares solve of `y_r g_r + y_c g_c = g` through the 2x2 normal equations.
pub fn decompose_in_span(
    g: &StateActionTable,
    g_r: &StateActionTable,
    g_c: &StateActionTable,
) -> Result<SpanDecomposition> {
    let rr = g_r.norm_sq();
    let cc = g_c.norm_sq();
    let rc = g_r.dot(g_c);
    let gram = rr * cc - rc * rc;
    let threshold = COLLINEAR_TOL * rr * cc;
    if !(gram >= threshold) || rr == 0.0 || cc == 0.0 {
        return Err(Error::NearCollinear { gram, threshold });
    }
    let gr = g.dot(g_r);
    let gc = g.dot(g_c);
    let y_r = (gr * cc - gc * rc) / gram;
    let y_c = (gc * rr - gr * rc) / gram;
    let fitted = g_r.combine(y_r, g_c, y_c);
    let residual = fitted.combine(1.0, g, -1.0).norm();
    Ok(SpanDecomposition {
        y_r,
        y_c,
        relative_residual: residual / g.norm().max(f64::MIN_POSITIVE),
    })
}

/// Closed-form coefficients of the projected combination:
/// `y_r = x_r - x_c (g_r·g_c)/‖g_r‖²`, `y_c = x_c - x_r (g_r·g_c)/‖g_c‖²`.
pub fn projected_coefficients(pair: &GradientPair, x_r: f64, x_c: f64) -> (f64, f64) {
    (
        x_r - x_c * pair.dot / (pair.norm_reward * pair.norm_reward),
        x_c - x_r * pair.dot / (pair.norm_cost * pair.norm_cost),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(rows: &[&[f64]]) -> StateActionTable {
        StateActionTable::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn zero_logits_are_uniform() {
        let p = SoftmaxPolicy::uniform(3, 4);
        assert!(p.probs().iter().all(|&x| (x - 0.25).abs() < 1e-15));
    }

    #[test]
    fn log_weights_give_proportional_probs() {
        let p = SoftmaxPolicy::from_logits(table(&[&[1f64.ln(), 2f64.ln(), 3f64.ln()]])).unwrap();
        for (a, want) in [1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0].into_iter().enumerate() {
            assert!((p.prob(0, a) - want).abs() < 1e-15);
        }
    }

    #[test]
    fn shift_by_hundred_is_invisible() {
        let base = table(&[&[0.3, -1.2, 2.0], &[5.0, 5.0, -3.0]]);
        let p = SoftmaxPolicy::from_logits(base.clone()).unwrap();
        let q = SoftmaxPolicy::from_logits(base.map(|x| x + 100.0)).unwrap();
        assert!(p.probs().max_abs_diff(q.probs()) < 1e-12);
    }

    #[test]
    fn non_finite_logit_is_rejected() {
        let err = SoftmaxPolicy::from_logits(table(&[&[0.0, f64::NAN]])).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLogit { state: 0, action: 1 }));
    }

    #[test]
    fn reward_mode_single_state_example() {
        let p = SoftmaxPolicy::uniform(1, 2);
        let qr = table(&[&[1.0, 0.0]]);
        let qc = StateActionTable::zeros(1, 2);
        let next = npg_update(&p, &qr, &qc, NpgMode::Reward, 0.5, 0.5).unwrap();
        let e = std::f64::consts::E;
        assert!((next.prob(0, 0) - e / (e + 1.0)).abs() < 1e-15);
        assert!((next.prob(0, 1) - 1.0 / (e + 1.0)).abs() < 1e-15);
        assert!((next.prob(0, 0) - 0.7311).abs() < 1e-4);
    }

    #[test]
    fn constant_q_leaves_policy_unchanged() {
        let p = SoftmaxPolicy::from_logits(table(&[&[0.2, -0.7], &[1.0, 0.0]])).unwrap();
        let qr = table(&[&[3.0, 3.0], &[-1.0, -1.0]]);
        let qc = table(&[&[0.5, 0.5], &[2.0, 2.0]]);
        for mode in [
            NpgMode::Reward,
            NpgMode::Cost,
            NpgMode::SoftNoConflict { x_r: 0.3, x_c: 0.7 },
            NpgMode::SoftConflict { y_r: 1.4, y_c: 0.6 },
        ] {
            let next = npg_update(&p, &qr, &qc, mode, 0.9, 0.9).unwrap();
            assert!(next.probs().max_abs_diff(p.probs()) < 1e-12, "{mode:?}");
        }
    }

    #[test]
    fn cost_mode_descends_on_cost() {
        let p = SoftmaxPolicy::uniform(1, 2);
        let qr = StateActionTable::zeros(1, 2);
        let qc = table(&[&[1.0, 0.0]]);
        let next = npg_update(&p, &qr, &qc, NpgMode::Cost, 0.1, 0.5).unwrap();
        assert!(next.prob(0, 1) > next.prob(0, 0));
    }

    #[test]
    fn invalid_soft_weights_are_rejected() {
        let p = SoftmaxPolicy::uniform(1, 2);
        let q = StateActionTable::zeros(1, 2);
        for (x_r, x_c) in [(0.6, 0.6), (-0.1, 1.1), (f64::NAN, 0.5)] {
            let r = npg_update(&p, &q, &q, NpgMode::SoftNoConflict { x_r, x_c }, 0.1, 0.5);
            assert!(matches!(r, Err(Error::InvalidWeights { .. })));
        }
        let r = npg_update(
            &p,
            &q,
            &q,
            NpgMode::SoftConflict {
                y_r: f64::INFINITY,
                y_c: 1.0,
            },
            0.1,
            0.5,
        );
        assert!(matches!(r, Err(Error::InvalidWeights { .. })));
        let bad = table(&[&[f64::NAN, 0.0]]);
        assert!(npg_update(&p, &bad, &q, NpgMode::Reward, 0.1, 0.5).is_err());
    }

    #[test]
    fn normalizer_matches_definition() {
        let p = SoftmaxPolicy::from_logits(table(&[&[0.1, 0.4, -0.2]])).unwrap();
        let qr = table(&[&[1.0, 2.0, 0.5]]);
        let qc = table(&[&[0.3, 0.0, 0.9]]);
        let (_, z) = npg_update_multiplicative(&p, &qr, &qc, NpgMode::Reward, 0.2, 0.8).unwrap();
        let want: f64 = (0..3).map(|a| p.prob(0, a) * (0.2 * qr[(0, a)] / 0.2).exp()).sum();
        assert!((z[0] - want).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_projection_is_plain_weighted_sum() {
        let g_r = table(&[&[1.0, 0.0]]);
        let g_c = table(&[&[0.0, 2.0]]);
        let out = project_conflicting(&g_r, &g_c, 0.3, 0.7).unwrap();
        assert_eq!(out, g_r.combine(0.3, &g_c, 0.7));
    }

    #[test]
    fn antiparallel_projection_vanishes() {
        let g_r = table(&[&[1.0, -2.0, 0.5]]);
        let g_c = g_r.scale(-1.0);
        let out = project_conflicting(&g_r, &g_c, 0.5, 0.5).unwrap();
        assert!(out.max_abs() == 0.0);
    }

    #[test]
    #[allow(clippy::neg_multiply)]
    fn worked_projection_example() {
        let g_r = table(&[&[1.0, 0.0]]);
        let g_c = table(&[&[-1.0, 1.0]]);
        let out = project_conflicting(&g_r, &g_c, 0.5, 0.5).unwrap();
        // Brute-force arithmetic, component by component.
        let dot = -1.0;
        let r_perp = [1.0 - dot / 2.0 * -1.0, 0.0 - dot / 2.0 * 1.0];
        let c_perp = [-1.0 - dot / 1.0 * 1.0, 1.0 - dot / 1.0 * 0.0];
        let want = [0.5 * (r_perp[0] + c_perp[0]), 0.5 * (r_perp[1] + c_perp[1])];
        assert!((out[(0, 0)] - want[0]).abs() < 1e-15);
        assert!((out[(0, 1)] - want[1]).abs() < 1e-15);
        assert!((out[(0, 0)] - 0.25).abs() < 1e-15);
        assert!((out[(0, 1)] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_is_degenerate() {
        let z = StateActionTable::zeros(1, 2);
        let g = table(&[&[1.0, 0.0]]);
        assert!(matches!(
            project_conflicting(&z, &g, 0.5, 0.5),
            Err(Error::DegenerateGradient { .. })
        ));
        assert!(matches!(
            project_conflicting(&g, &z, 0.5, 0.5),
            Err(Error::DegenerateGradient { .. })
        ));
    }

    #[test]
    fn decompose_recovers_coordinates() {
        let g_r = table(&[&[1.0, 0.0, 0.0]]);
        let g_c = table(&[&[0.0, 1.0, 0.0]]);
        let d = decompose_in_span(&g_r, &g_r, &g_c).unwrap();
        assert_eq!((d.y_r, d.y_c), (1.0, 0.0));
        let g = g_r.combine(2.0, &g_c, 3.0);
        let d = decompose_in_span(&g, &g_r, &g_c).unwrap();
        assert!((d.y_r - 2.0).abs() < 1e-15 && (d.y_c - 3.0).abs() < 1e-15);
        assert!(d.relative_residual < 1e-15);
    }

    #[test]
    fn decompose_of_projection_has_tiny_residual() {
        let g_r = table(&[&[1.0, 0.2], &[-0.4, 0.3]]);
        let g_c = table(&[&[-0.9, 0.5], &[0.1, -0.2]]);
        let proj = project_conflicting(&g_r, &g_c, 0.5, 0.5).unwrap();
        let d = decompose_in_span(&proj, &g_r, &g_c).unwrap();
        assert!(d.relative_residual < 1e-9);
    }

    #[test]
    fn collinear_pair_is_flagged() {
        let g_r = table(&[&[1.0, 2.0]]);
        let g_c = g_r.scale(-3.0);
        assert!(matches!(
            decompose_in_span(&g_r, &g_r, &g_c),
            Err(Error::NearCollinear { .. })
        ));
    }
}
