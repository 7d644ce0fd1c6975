//! Fixed instances shared by the benchmarks.

use espo_core::{make_random_cmdp, RandomCmdpSpec, TabularCmdp};

/// Random instance with the default discount and a mid-range budget.
pub fn instance(states: usize, actions: usize) -> TabularCmdp {
    let spec = RandomCmdpSpec::new(states, actions, 3.min(states), 0.5);
    make_random_cmdp(7, &spec).expect("benchmark instance is valid")
}

/// Problem sizes swept by every group.
pub const SIZES: [(usize, usize); 3] = [(10, 5), (25, 4), (50, 4)];
