use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use espo_core::io::{env_from_json, oracle_from_json, trace_from_csv_str};

struct Sandbox {
    dir: tempfile::TempDir,
}

impl Sandbox {
    fn new() -> Self {
        Self {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn arg(&self, name: &str) -> String {
        self.path(name).to_string_lossy().into_owned()
    }

    fn write(&self, name: &str, text: &str) -> String {
        std::fs::write(self.path(name), text).unwrap();
        self.arg(name)
    }

    fn read(&self, name: &str) -> String {
        std::fs::read_to_string(self.path(name)).unwrap()
    }

    fn env(&self, name: &str, seed: u64) -> String {
        let out = espo(&[
            "generate-env",
            "--seed",
            &seed.to_string(),
            "--states",
            "5",
            "--actions",
            "3",
            "--out",
            &self.arg(&format!("{name}.json")),
            "--oracle-out",
            &self.arg(&format!("{name}.oracle.json")),
        ]);
        assert_ok(&out);
        self.arg(&format!("{name}.json"))
    }
}

fn espo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_espo")).args(args).output().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn assert_ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", stderr(out));
}

fn assert_exit(out: &Output, code: i32, needle: &str) {
    assert_eq!(out.status.code(), Some(code), "stderr: {}", stderr(out));
    assert!(stderr(out).contains(needle), "`{needle}` not in: {}", stderr(out));
}

fn data_rows(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count() - 1
}

#[test]
fn generated_files_load() {
    let sb = Sandbox::new();
    let env = sb.env("e", 3);
    let cmdp = env_from_json(&sb.read("e.json")).unwrap();
    assert_eq!(cmdp.shape(), (5, 3));
    let oracle = oracle_from_json(&sb.read("e.oracle.json")).unwrap();
    assert!(oracle.feasible);
    assert_eq!(oracle.budget, cmdp.budget);
    assert!(env.ends_with("e.json"));

    let again = espo(&["generate-env", "--seed", "3", "--states", "5", "--actions", "3", "--out", &sb.arg("f.json")]);
    assert_ok(&again);
    assert_eq!(sb.read("e.json"), sb.read("f.json"));

    let grid = espo(&["generate-env", "--kind", "gridworld", "--seed", "0", "--width", "3", "--height", "3",
        "--hazard", "1,1", "--budget", "0.5", "--out", &sb.arg("g.json")]);
    assert_ok(&grid);
    assert_eq!(env_from_json(&sb.read("g.json")).unwrap().shape(), (9, 4));
}

#[test]
fn run_writes_one_row_per_iteration() {
    let sb = Sandbox::new();
    let env = sb.env("e", 4);
    let config = sb.write("c.toml", "iterations = 25\neval_mode = \"exact\"\n");
    for algo in ["espo", "pcrpo", "crpo"] {
        let out = sb.arg(&format!("{algo}.csv"));
        assert_ok(&espo(&["run", "--algo", algo, "--env", &env, "--config", &config, "--seed", "1", "--out", &out]));
        let trace = trace_from_csv_str(&sb.read(&format!("{algo}.csv"))).unwrap();
        assert_eq!(trace.len(), 25);
        assert!(trace.iter().enumerate().all(|(t, r)| r.t == t));
    }
}

#[test]
fn seeds_change_sampled_runs() {
    let sb = Sandbox::new();
    let env = sb.env("e", 5);
    let config = sb.write("c.toml", "iterations = 10\n");
    for seed in ["1", "2"] {
        let out = sb.arg(&format!("s{seed}.csv"));
        assert_ok(&espo(&["run", "--algo", "espo", "--env", &env, "--config", &config, "--seed", seed, "--out", &out]));
    }
    assert_ne!(sb.read("s1.csv"), sb.read("s2.csv"));
}

#[test]
fn validation_errors_exit_one_and_name_the_field() {
    let sb = Sandbox::new();
    let env = sb.env("e", 6);
    let out = sb.arg("t.csv");
    let run = |config: &str| {
        let c = sb.write("bad.toml", config);
        espo(&["run", "--algo", "espo", "--env", &env, "--config", &c, "--seed", "0", "--out", &out])
    };
    assert_exit(&run("learning_rate = -0.5\n"), 1, "learning_rate");
    assert_exit(&run("zeta_minus = -1.0\n"), 1, "zeta_minus");
    assert_exit(&run("iteratons = 5\n"), 1, "iteratons");
    assert_exit(&run("iterations = \"many\"\n"), 1, "--config");
    assert_exit(&run("algorithm = \"crpo\"\n"), 1, "algorithm");

    let missing = espo(&["run", "--algo", "espo", "--env", &sb.arg("nope.json"), "--seed", "0", "--out", &out]);
    assert_exit(&missing, 1, "--env");
    let unknown = espo(&["run", "--algo", "espo", "--env", &env, "--seed", "0", "--out", &out, "--turbo"]);
    assert_exit(&unknown, 1, "--turbo");
    let no_seed = espo(&["run", "--algo", "espo", "--env", &env, "--out", &out]);
    assert_exit(&no_seed, 1, "--seed");

    let broken = sb.write("broken.json", &sb.read("e.json").replace("\"budget\"", "\"budgt\""));
    assert_exit(&espo(&["run", "--algo", "espo", "--env", &broken, "--seed", "0", "--out", &out]), 1, "budgt");
    let quantile = espo(&["generate-env", "--seed", "0", "--budget-quantile", "1.5", "--out", &sb.arg("q.json")]);
    assert_exit(&quantile, 1, "budget_quantile");
    let bad_trace = sb.write("bad.csv", "t,mode\n0,REWARD\n");
    let report = espo(&["report", "--traces", &bad_trace, "--oracle", &sb.arg("e.oracle.json"), "--out-dir", &sb.arg("r")]);
    assert_exit(&report, 1, "bad.csv");
}

#[test]
fn runtime_failures_exit_two() {
    let sb = Sandbox::new();
    let env = sb.env("e", 7);
    sb.write("blocker", "a file, not a directory");
    let out = sb.arg("blocker/t.csv");
    let run = espo(&["run", "--algo", "espo", "--env", &env, "--seed", "0", "--out", &out]);
    assert_exit(&run, 2, "--out");
}

#[test]
fn report_rows_match_iterations() {
    let sb = Sandbox::new();
    let env = sb.env("e", 8);
    let oracle = sb.arg("e.oracle.json");
    let mut traces = Vec::new();
    for t in [8, 16, 32, 64] {
        let config = sb.write(&format!("c{t}.toml"), &format!("iterations = {t}\neval_mode = \"exact\"\n"));
        let out = sb.arg(&format!("espo_T{t}.csv"));
        assert_ok(&espo(&["run", "--algo", "espo", "--env", &env, "--config", &config, "--seed", "0", "--out", &out]));
        traces.push(out);
    }
    let crpo = sb.arg("crpo.csv");
    let config = sb.write("c.toml", "iterations = 64\neval_mode = \"exact\"\n");
    assert_ok(&espo(&["run", "--algo", "crpo", "--env", &env, "--config", &config, "--seed", "0", "--out", &crpo]));

    let mut args = vec!["report", "--oracle", &oracle, "--crpo", &crpo, "--svg"];
    let out_dir = sb.arg("report");
    args.extend(["--out-dir", &out_dir, "--traces"]);
    args.extend(traces.iter().map(String::as_str));
    assert_ok(&espo(&args));

    for t in [8, 16, 32, 64] {
        assert_eq!(data_rows(&sb.path(&format!("report/espo_T{t}.report.csv"))), t);
        assert!(sb.read(&format!("report/espo_T{t}.svg")).starts_with("<svg"));
    }
    let summary = sb.read("report/summary.csv");
    assert_eq!(summary.lines().count(), 5);
    assert!(summary.starts_with("label,T,"));
    assert_eq!(data_rows(&sb.path("report/rate.csv")), 4);
}

#[test]
fn grid_enumerates_every_job() {
    let sb = Sandbox::new();
    let env = sb.env("e", 9);
    let a = sb.write("fast.toml", "iterations = 6\nlearning_rate = 0.2\n");
    let b = sb.write("slow.toml", "iterations = 6\nlearning_rate = 0.05\n");
    let out_dir = sb.arg("grid");
    let out = espo(&["grid", "--envs", &env, "--configs", &a, &b, "--seeds", "1", "2", "3", "--out-dir", &out_dir]);
    assert_ok(&out);
    let manifest = sb.read("grid/manifest.csv");
    let rows: Vec<&str> = manifest.lines().skip(1).collect();
    assert_eq!(rows.len(), 6);
    for row in &rows {
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields[8], "ok", "{row}");
        assert_eq!(data_rows(Path::new(fields[5])), 6);
    }
    let traces = std::fs::read_dir(sb.path("grid"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "csv"))
        .count();
    assert_eq!(traces, 7);

    let both = espo(&["grid", "--envs", &env, "--configs", &a, "--seeds", "1", "--algos", "espo", "crpo", "pcrpo",
        "--out-dir", &sb.arg("grid2")]);
    assert_ok(&both);
    assert_eq!(sb.read("grid2/manifest.csv").lines().count(), 4);
}

#[test]
fn verify_passes() {
    let out = espo(&["verify", "--seed", "1", "--instances", "2"]);
    assert_ok(&out);
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 7);
}
