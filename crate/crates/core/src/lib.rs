//! Tabular constrained-MDP laboratory.
//!
//! The crate implements a three-mode natural-policy-gradient optimizer for
//! single-constraint CMDPs with softmax policies. Iterations are routed by the
//! estimated cost value into a cost-descent mode, a soft mode that combines
//! reward ascent and cost descent (projecting the two gradients when they
//! conflict), and a reward-ascent mode. The evaluation budget of the next
//! iteration grows when the gradients conflict and shrinks otherwise.
//!
//! Around that loop sit the pieces needed to check it:
//!
//! * [`cmdp`]: instances, validation and exact policy evaluation,
//! * [`generators`]: seeded Garnet-style and gridworld instances,
//! * [`oracle`]: the exact constrained optimum via an occupancy-measure LP,
//! * [`policy`]: softmax policies, exact gradients, NPG updates, projection,
//! * [`estimation`]: generative-model Monte-Carlo Q estimates with exact
//!   transition accounting,
//! * [`espo`]: the optimizer itself,
//! * [`baselines`]: CRPO and fixed-sample PCRPO on the same substrate,
//! * [`analysis`]: gaps, oscillation counts, sample efficiency, rate fits,
//! * [`report`]: the same quantities recomputed from trace CSV rows alone,
//! * [`io`]: environment, oracle, config and trace file formats.

// `!(x >= 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod baselines;
pub mod cmdp;
pub mod error;
pub mod espo;
pub mod estimation;
pub mod generators;
pub mod io;
pub mod oracle;
pub mod policy;
pub mod report;
pub mod table;

pub use analysis::{
    efficiency_report, gap_series, oscillation_report, rate_fit, EfficiencyReport, GapReport,
    OscillationReport, RateFit,
};
pub use baselines::{crpo_run, pcrpo_run, BaselineAlgorithm, BaselineConfig};
pub use cmdp::{exact_policy_values, Objective, TabularCmdp, ValueBundle, Violation};
pub use error::{Error, Result};
pub use espo::{
    classify_mode, espo_run, espo_step, weighted_output_distribution, Algorithm, EspoConfig,
    EspoState, EvalMode, IterationRecord, Mode, Region, RunResult, SoftPairing,
};
pub use estimation::{estimate_q, v_from_estimate, QEstimate};
pub use generators::{make_gridworld, make_random_cmdp, GridworldSpec, RandomCmdpSpec};
pub use oracle::{solve_constrained_optimum, value_iteration, ConstrainedOptimum, Sense};
pub use policy::{
    decompose_in_span, exact_gradient, npg_update, project_conflicting, GradientPair, NpgMode,
    SoftmaxPolicy,
};
pub use table::StateActionTable;
