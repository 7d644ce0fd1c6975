use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use espo_core::io::{env_to_json, oracle_to_json, trace_to_csv_string, OracleDocument};
use espo_core::report::{render_svg, report_rows, report_rows_to_csv, summaries_to_csv, summarize, Reference};
use espo_core::{
    make_gridworld, make_random_cmdp, rate_fit, solve_constrained_optimum, GridworldSpec,
    RandomCmdpSpec, TabularCmdp,
};
use rayon::prelude::*;

use crate::args::{AlgoArg, EnvKind, GenerateEnvArgs, GridArgs, ReportArgs, RunArgs};
use crate::error::{write_output, CliError, CliResult};
use crate::load::{load_env, load_oracle, load_plan, load_trace, stem, RunPlan};

pub fn generate_env(args: &GenerateEnvArgs) -> CliResult<()> {
    let cmdp = match args.kind {
        EnvKind::Random => {
            let spec = RandomCmdpSpec::new(args.states, args.actions, args.branching, args.budget_quantile)
                .with_discount(args.discount);
            make_random_cmdp(args.seed, &spec)
        }
        EnvKind::Gridworld => {
            let goal = args.goal.unwrap_or((args.width.saturating_sub(1), args.height.saturating_sub(1)));
            let hazards = if args.hazards.is_empty() {
                default_hazards(args.width, args.height, goal)
            } else {
                args.hazards.clone()
            };
            let mut spec = GridworldSpec::new(args.width, args.height, hazards, goal, args.budget);
            spec.discount = args.discount;
            spec.slip = args.slip;
            make_gridworld(&spec)
        }
    }
    .map_err(|e| CliError::core("generate-env", e))?;

    write_output("--out", &args.out, &env_to_json(&cmdp))?;
    if let Some(path) = &args.oracle_out {
        let optimum = solve_constrained_optimum(&cmdp).map_err(|e| CliError::core("oracle", e))?;
        let doc = OracleDocument::new(&cmdp, &optimum);
        write_output("--oracle-out", path, &oracle_to_json(&doc))?;
        if !doc.feasible {
            eprintln!("warning: budget {} is infeasible; oracle holds the cost minimizer", cmdp.budget);
        }
    }
    Ok(())
}

fn default_hazards(width: usize, height: usize, goal: (usize, usize)) -> Vec<(usize, usize)> {
    (0..width.min(height))
        .map(|i| (width - 1 - i, i))
        .filter(|&c| c != (0, 0) && c != goal)
        .collect()
}

fn run_to_csv(plan: &RunPlan, cmdp: &TabularCmdp, context: &str) -> CliResult<(String, u64, usize, Vec<String>)> {
    let run = plan.execute(cmdp).map_err(|e| CliError::core(context, e))?;
    Ok((trace_to_csv_string(&run.trace), run.total_transitions, run.trace.len(), run.warnings))
}

pub fn run(args: &RunArgs) -> CliResult<()> {
    let cmdp = load_env("--env", &args.env)?;
    let plan = load_plan(args.config.as_deref(), args.algo, args.seed)?;
    let (csv, _, _, warnings) = run_to_csv(&plan, &cmdp, "run")?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    write_output("--out", &args.out, &csv)
}

struct Job {
    env: usize,
    config: usize,
    algo: AlgoArg,
    seed: u64,
    plan: RunPlan,
    trace: PathBuf,
}

struct JobOutcome {
    iterations: usize,
    total_transitions: u64,
    error: Option<String>,
}

fn unique_stems(flag: &str, paths: &[PathBuf]) -> CliResult<Vec<String>> {
    let stems: Vec<String> = paths.iter().map(|p| stem(p)).collect();
    let mut seen = HashSet::new();
    for s in &stems {
        if !seen.insert(s) {
            return Err(CliError::Validation(format!("{flag}: two inputs share the name `{s}`")));
        }
    }
    Ok(stems)
}

fn first_occurrences<T: Copy + PartialEq>(items: &[T]) -> Vec<T> {
    let mut out: Vec<T> = Vec::with_capacity(items.len());
    for &x in items {
        if !out.contains(&x) {
            out.push(x);
        }
    }
    out
}

fn quote(field: &str) -> String {
    if field.contains([',', '"', '\n']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

pub const MANIFEST_COLUMNS: [&str; 10] = [
    "job",
    "env",
    "config",
    "algo",
    "seed",
    "trace",
    "iterations",
    "total_transitions",
    "status",
    "message",
];

pub fn grid(args: &GridArgs) -> CliResult<()> {
    let env_names = unique_stems("--envs", &args.envs)?;
    let config_names = unique_stems("--configs", &args.configs)?;
    let envs = args
        .envs
        .iter()
        .map(|p| load_env("--envs", p))
        .collect::<CliResult<Vec<_>>>()?;
    let algos = first_occurrences(&args.algos);
    let seeds = first_occurrences(&args.seeds);

    // Every input is parsed before any job starts, so bad files fail fast.
    let mut jobs = Vec::new();
    for (e, env_name) in env_names.iter().enumerate() {
        for (c, config_path) in args.configs.iter().enumerate() {
            for &algo in &algos {
                for &seed in &seeds {
                    let plan = load_plan(Some(config_path), algo, seed)?;
                    let file = format!("{env_name}__{}__{}__seed{seed}.csv", config_names[c], algo.name());
                    jobs.push(Job {
                        env: e,
                        config: c,
                        algo,
                        seed,
                        plan,
                        trace: args.out_dir.join(file),
                    });
                }
            }
        }
    }
    std::fs::create_dir_all(&args.out_dir).map_err(|e| {
        CliError::Runtime(format!("--out-dir: cannot create `{}`: {e}", args.out_dir.display()))
    })?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs)
        .build()
        .map_err(|e| CliError::Runtime(format!("--jobs: {e}")))?;
    let outcomes: Vec<JobOutcome> = pool.install(|| {
        jobs.par_iter()
            .map(|job| {
                let result = run_to_csv(&job.plan, &envs[job.env], "job")
                    .and_then(|(csv, total, n, _)| write_output("trace", &job.trace, &csv).map(|_| (total, n)));
                match result {
                    Ok((total_transitions, iterations)) => JobOutcome {
                        iterations,
                        total_transitions,
                        error: None,
                    },
                    Err(e) => JobOutcome {
                        iterations: 0,
                        total_transitions: 0,
                        error: Some(e.to_string()),
                    },
                }
            })
            .collect()
    });

    let mut manifest = MANIFEST_COLUMNS.join(",");
    manifest.push('\n');
    for (i, (job, out)) in jobs.iter().zip(&outcomes).enumerate() {
        let _ = writeln!(
            manifest,
            "{i},{},{},{},{},{},{},{},{},{}",
            quote(&args.envs[job.env].display().to_string()),
            quote(&args.configs[job.config].display().to_string()),
            job.algo.name(),
            job.seed,
            quote(&job.trace.display().to_string()),
            out.iterations,
            out.total_transitions,
            if out.error.is_none() { "ok" } else { "failed" },
            quote(out.error.as_deref().unwrap_or("")),
        );
    }
    write_output("manifest", &args.out_dir.join("manifest.csv"), &manifest)?;
    let failed = outcomes.iter().filter(|o| o.error.is_some()).count();
    println!("{} jobs, {failed} failed; manifest at {}", jobs.len(), args.out_dir.join("manifest.csv").display());
    if failed > 0 {
        return Err(CliError::Runtime(format!("{failed} grid jobs failed; see manifest.csv")));
    }
    Ok(())
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn positive(flag: &str, value: f64) -> CliResult<f64> {
    if value.is_finite() && value >= 0.0 {
        Ok(value)
    } else {
        Err(CliError::Validation(format!("{flag}: must be a nonnegative number, got {value}")))
    }
}

pub fn report(args: &ReportArgs) -> CliResult<()> {
    let oracle = load_oracle("--oracle", &args.oracle)?;
    let reference = Reference::from(&oracle);
    let scale = oracle.value_scale();
    let eps_gap = positive("--eps-gap", args.eps_gap.unwrap_or(0.1 * scale))?;
    let eps_violation = positive("--eps-violation", args.eps_violation.unwrap_or(0.05 * scale))?;
    if !(0.0..=1.0).contains(&args.x_r) {
        return Err(CliError::Validation(format!("--x-r: must lie in [0, 1], got {}", args.x_r)));
    }
    let labels = unique_stems("--traces", &args.traces)?;
    let crpo = args.crpo.as_deref().map(|p| load_trace("--crpo", p)).transpose()?;

    let mut summaries = Vec::new();
    for (path, label) in args.traces.iter().zip(&labels) {
        let trace = load_trace("--traces", path)?;
        let rows = report_rows(&trace, &reference, args.x_r);
        write_output("--out-dir", &out_path(&args.out_dir, label, "report.csv"), &report_rows_to_csv(&rows))?;
        if args.svg {
            write_output("--out-dir", &out_path(&args.out_dir, label, "svg"), &render_svg(label, &rows))?;
        }
        let summary = summarize(label, &trace, &reference, args.x_r, eps_gap, eps_violation, crpo.as_deref())
            .map_err(|e| CliError::core(&format!("--traces `{}`", path.display()), e))?;
        if summary.gate_mismatches > 0 {
            eprintln!(
                "warning: {label}: {} rows disagree with the mode gate under budget {}",
                summary.gate_mismatches, reference.budget
            );
        }
        summaries.push(summary);
    }
    write_output("--out-dir", &args.out_dir.join("summary.csv"), &summaries_to_csv(&summaries))?;

    let mut by_horizon: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for s in &summaries {
        if let Some(g) = s.weighted_gap {
            by_horizon.entry(s.iterations).or_default().push(g);
        }
    }
    if by_horizon.len() >= 4 {
        let points: Vec<(usize, usize, f64)> = by_horizon
            .iter_mut()
            .map(|(&t, gaps)| (t, gaps.len(), median(gaps)))
            .collect();
        let xy: Vec<(f64, f64)> = points.iter().map(|&(t, _, g)| (t as f64, g)).collect();
        let mut rate = String::from("T,runs,median_weighted_gap,slope,intercept,clamped\n");
        match rate_fit(&xy) {
            Ok(fit) => {
                for (t, n, g) in &points {
                    let _ = writeln!(rate, "{t},{n},{g:.16e},{:.16e},{:.16e},{}", fit.slope, fit.intercept, fit.clamped);
                }
            }
            Err(e) => eprintln!("warning: rate fit skipped: {e}"),
        }
        write_output("--out-dir", &args.out_dir.join("rate.csv"), &rate)?;
    }
    println!("{} traces summarized into {}", summaries.len(), args.out_dir.join("summary.csv").display());
    Ok(())
}

fn out_path(dir: &Path, label: &str, extension: &str) -> PathBuf {
    dir.join(format!("{label}.{extension}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_hazards_skip_start_and_goal() {
        assert_eq!(default_hazards(4, 4, (3, 3)), vec![(3, 0), (2, 1), (1, 2), (0, 3)]);
        assert_eq!(default_hazards(2, 2, (1, 0)), vec![(0, 1)]);
    }

    #[test]
    fn medians() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn quoting() {
        assert_eq!(quote("a,b"), "\"a,b\"");
        assert_eq!(quote("p, \"q\""), "\"p, \"\"q\"\"\"");
    }
}
