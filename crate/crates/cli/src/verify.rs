//! Small in-process invariant checks behind `espo verify`.

use espo_core::cmdp::exact_values_for_probs;
use espo_core::espo::adjust_sample_size;
use espo_core::io::{trace_from_csv_str, trace_to_csv_string};
use espo_core::policy::npg_update_multiplicative;
use espo_core::{
    crpo_run, espo_run, exact_gradient, exact_policy_values, make_random_cmdp, npg_update,
    pcrpo_run, solve_constrained_optimum, BaselineAlgorithm, BaselineConfig, EspoConfig, EvalMode,
    Mode, NpgMode, Objective, RandomCmdpSpec, SoftmaxPolicy, StateActionTable, TabularCmdp,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::args::VerifyArgs;
use crate::error::{CliError, CliResult};

type Check = fn(&mut Ctx) -> Result<String, String>;

struct Ctx {
    rng: ChaCha8Rng,
    instances: usize,
    base_seed: u64,
}

impl Ctx {
    fn instance(&self, i: usize, states: usize, actions: usize) -> Result<TabularCmdp, String> {
        self.instance_at(i, states, actions, 0.5)
    }

    fn instance_at(&self, i: usize, states: usize, actions: usize, quantile: f64) -> Result<TabularCmdp, String> {
        let spec = RandomCmdpSpec::new(states, actions, 2.min(states), quantile);
        make_random_cmdp(self.base_seed.wrapping_add(i as u64), &spec).map_err(|e| e.to_string())
    }

    fn logits(&mut self, states: usize, actions: usize, spread: f64) -> StateActionTable {
        StateActionTable::from_fn(states, actions, |_, _| spread * (2.0 * self.rng.random::<f64>() - 1.0))
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn gradient(ctx: &mut Ctx) -> Result<String, String> {
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..ctx.instances {
        let cmdp = ctx.instance(i, 4, 3)?;
        let logits = ctx.logits(4, 3, 1.0);
        let policy = SoftmaxPolicy::from_logits(logits.clone()).map_err(err)?;
        let bundle = exact_policy_values(&cmdp, &policy).map_err(err)?;
        let analytic = exact_gradient(&cmdp, &policy, &bundle, Objective::Reward);
        let value = |w: &StateActionTable| -> Result<f64, String> {
            let p = SoftmaxPolicy::from_logits(w.clone()).map_err(err)?;
            Ok(exact_policy_values(&cmdp, &p).map_err(err)?.v_reward_rho)
        };
        let mut numeric = StateActionTable::zeros(4, 3);
        for s in 0..4 {
            for a in 0..3 {
                let (mut up, mut down) = (logits.clone(), logits.clone());
                up[(s, a)] += h;
                down[(s, a)] -= h;
                numeric[(s, a)] = (value(&up)? - value(&down)?) / (2.0 * h);
            }
        }
        worst = worst.max(analytic.max_abs_diff(&numeric) / numeric.max_abs().max(1e-12));
    }
    if worst <= 1e-4 {
        Ok(format!("max relative error {worst:.2e}"))
    } else {
        Err(format!("relative error {worst:.2e} exceeds 1e-4"))
    }
}

fn npg_forms(ctx: &mut Ctx) -> Result<String, String> {
    let mut worst: f64 = 0.0;
    for k in 0..200 {
        let policy = SoftmaxPolicy::from_logits(ctx.logits(3, 4, 3.0)).map_err(err)?;
        let q_r = ctx.logits(3, 4, 5.0).map(|x| x + 5.0);
        let q_c = ctx.logits(3, 4, 5.0).map(|x| x + 5.0);
        let x: f64 = ctx.rng.random();
        let mode = match k % 4 {
            0 => NpgMode::Reward,
            1 => NpgMode::Cost,
            2 => NpgMode::SoftNoConflict { x_r: x, x_c: 1.0 - x },
            _ => NpgMode::SoftConflict {
                y_r: 4.0 * x - 2.0,
                y_c: 2.0 - 4.0 * ctx.rng.random::<f64>(),
            },
        };
        let lr = 0.001 + 0.5 * ctx.rng.random::<f64>();
        let gamma = 0.95 * ctx.rng.random::<f64>();
        let additive = npg_update(&policy, &q_r, &q_c, mode, lr, gamma).map_err(err)?;
        let (mult, _) = npg_update_multiplicative(&policy, &q_r, &q_c, mode, lr, gamma).map_err(err)?;
        worst = worst.max(additive.probs().max_abs_diff(&mult));
    }
    if worst <= 1e-10 {
        Ok(format!("max disagreement {worst:.2e}"))
    } else {
        Err(format!("forms disagree by {worst:.2e}"))
    }
}

fn oracle(ctx: &mut Ctx) -> Result<String, String> {
    let mut checked = 0;
    for i in 0..ctx.instances {
        let cmdp = ctx.instance(i, 5, 3)?;
        let opt = solve_constrained_optimum(&cmdp).map_err(err)?;
        let back = exact_values_for_probs(&cmdp, &opt.policy).map_err(err)?;
        if (back.v_reward_rho - opt.optimal_reward_value).abs() > 1e-7 {
            return Err(format!("instance {i}: optimum re-evaluates to a different value"));
        }
        for _ in 0..50 {
            let p = SoftmaxPolicy::from_logits(ctx.logits(5, 3, 2.0)).map_err(err)?;
            let v = exact_policy_values(&cmdp, &p).map_err(err)?;
            if v.v_cost_rho <= cmdp.budget {
                checked += 1;
                if v.v_reward_rho > opt.optimal_reward_value + 1e-6 {
                    return Err(format!("instance {i}: feasible policy beats the optimum"));
                }
            }
        }
    }
    Ok(format!("{checked} feasible random policies dominated"))
}

fn sample_sizes(_: &mut Ctx) -> Result<String, String> {
    let down = adjust_sample_size(16_000, -0.4);
    let up = adjust_sample_size(16_000, 0.1);
    if (down, up) == (9_600, 17_600) {
        Ok("16000 -> 9600 / 17600".into())
    } else {
        Err(format!("16000 -> {down} / {up}"))
    }
}

fn trace_round_trip(ctx: &mut Ctx) -> Result<String, String> {
    let cmdp = ctx.instance(0, 5, 3)?;
    let cfg = EspoConfig {
        iterations: 20,
        seed: ctx.base_seed,
        ..EspoConfig::default()
    };
    let run = espo_run(&cmdp, &cfg).map_err(err)?;
    let text = trace_to_csv_string(&run.trace);
    let back = trace_from_csv_str(&text).map_err(err)?;
    if back == run.trace && trace_to_csv_string(&back) == text {
        Ok(format!("{} rows reproduced", back.len()))
    } else {
        Err("parsed trace differs from the original".into())
    }
}

fn determinism(ctx: &mut Ctx) -> Result<String, String> {
    let cmdp = ctx.instance(1, 5, 3)?;
    let espo = EspoConfig {
        iterations: 15,
        seed: ctx.base_seed,
        ..EspoConfig::default()
    };
    let pcrpo = BaselineConfig::paired_with(&espo, BaselineAlgorithm::Pcrpo);
    let crpo = BaselineConfig::paired_with(&espo, BaselineAlgorithm::Crpo);
    let pairs = [
        (espo_run(&cmdp, &espo), espo_run(&cmdp, &espo)),
        (pcrpo_run(&cmdp, &pcrpo), pcrpo_run(&cmdp, &pcrpo)),
        (crpo_run(&cmdp, &crpo), crpo_run(&cmdp, &crpo)),
    ];
    for (a, b) in pairs {
        let (a, b) = (a.map_err(err)?, b.map_err(err)?);
        if trace_to_csv_string(&a.trace) != trace_to_csv_string(&b.trace) {
            return Err(format!("{} traces differ between identical runs", a.algorithm.as_str()));
        }
    }
    Ok("espo, pcrpo, crpo repeat exactly".into())
}

fn no_reentry(ctx: &mut Ctx) -> Result<String, String> {
    for i in 0..ctx.instances {
        // A low budget so that most runs start in the cost band.
        let cmdp = ctx.instance_at(i, 8, 4, 0.3)?;
        let h_plus = 0.5;
        let cfg = EspoConfig {
            iterations: 200,
            learning_rate: h_plus * (1.0 - cmdp.discount) / (2.0 * cmdp.v_max),
            eval_mode: EvalMode::Exact,
            x_r: 0.0,
            h_plus,
            h_minus: 0.0,
            snapshot_every: 0,
            ..EspoConfig::default()
        };
        let run = espo_run(&cmdp, &cfg).map_err(err)?;
        if let Some(t_in) = run.trace.iter().position(|r| r.mode != Mode::Cost) {
            if let Some(r) = run.trace[t_in..].iter().find(|r| r.mode == Mode::Cost) {
                return Err(format!("instance {i}: cost mode re-entered at t = {}", r.t));
            }
        }
    }
    Ok(format!("{} runs without re-entry", ctx.instances))
}

const CHECKS: [(&str, Check); 7] = [
    ("gradient-finite-difference", gradient),
    ("npg-additive-multiplicative", npg_forms),
    ("oracle-dominance", oracle),
    ("sample-size-arithmetic", sample_sizes),
    ("trace-csv-round-trip", trace_round_trip),
    ("run-determinism", determinism),
    ("cost-mode-no-reentry", no_reentry),
];

pub fn verify(args: &VerifyArgs) -> CliResult<()> {
    if args.instances == 0 {
        return Err(CliError::Validation("--instances: must be positive".into()));
    }
    let mut ctx = Ctx {
        rng: ChaCha8Rng::seed_from_u64(args.seed),
        instances: args.instances,
        base_seed: args.seed,
    };
    let mut failed = Vec::new();
    for (name, check) in CHECKS {
        match check(&mut ctx) {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                println!("FAIL {name}: {detail}");
                failed.push(name);
            }
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Runtime(format!("verify: failed checks: {}", failed.join(", "))))
    }
}
