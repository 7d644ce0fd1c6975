//! Input files and the mapping from `--algo` plus a config file to a run.

use std::path::Path;

use espo_core::io::{
    baseline_config_from_toml, env_from_json, espo_config_from_toml, oracle_from_json,
    read_trace_csv, OracleDocument,
};
use espo_core::{
    crpo_run, espo_run, pcrpo_run, BaselineAlgorithm, BaselineConfig, EspoConfig, IterationRecord,
    RunResult, TabularCmdp,
};

use crate::args::AlgoArg;
use crate::error::{read_input, CliError, CliResult};

pub fn load_env(flag: &str, path: &Path) -> CliResult<TabularCmdp> {
    let text = read_input(flag, path)?;
    env_from_json(&text).map_err(|e| CliError::core(&format!("{flag} `{}`", path.display()), e))
}

pub fn load_oracle(flag: &str, path: &Path) -> CliResult<OracleDocument> {
    let text = read_input(flag, path)?;
    oracle_from_json(&text).map_err(|e| CliError::core(&format!("{flag} `{}`", path.display()), e))
}

pub fn load_trace(flag: &str, path: &Path) -> CliResult<Vec<IterationRecord>> {
    let file = std::fs::File::open(path)
        .map_err(|e| CliError::Validation(format!("{flag}: cannot read `{}`: {e}", path.display())))?;
    read_trace_csv(file).map_err(|e| CliError::core(&format!("{flag} `{}`", path.display()), e))
}

/// A fully resolved run.
#[derive(Debug, Clone, PartialEq)]
pub enum RunPlan {
    Espo(EspoConfig),
    Baseline(BaselineConfig),
}

impl RunPlan {
    pub fn execute(&self, cmdp: &TabularCmdp) -> espo_core::Result<RunResult> {
        match self {
            RunPlan::Espo(c) => espo_run(cmdp, c),
            RunPlan::Baseline(c) if c.algorithm == BaselineAlgorithm::Crpo => crpo_run(cmdp, c),
            RunPlan::Baseline(c) => pcrpo_run(cmdp, c),
        }
    }
}

fn baseline_of(algo: AlgoArg) -> Option<BaselineAlgorithm> {
    match algo {
        AlgoArg::Espo => None,
        AlgoArg::Pcrpo => Some(BaselineAlgorithm::Pcrpo),
        AlgoArg::Crpo => Some(BaselineAlgorithm::Crpo),
    }
}

/// Resolves a config for `algo`.
///
/// A file with an `algorithm` key is a baseline config and must match `algo`.
/// Otherwise the file holds ESPO keys (plus an optional `crpo_tolerance`) and
/// baselines are paired with it.
pub fn plan_from_text(text: &str, algo: AlgoArg, seed: u64, origin: &str) -> CliResult<RunPlan> {
    let context = format!("--config `{origin}`");
    let mut table: toml::Table = toml::from_str(text)
        .map_err(|e| CliError::Validation(format!("{context}: {}", e.message())))?;

    if let Some(value) = table.get("algorithm") {
        let declared = value.as_str().unwrap_or_default();
        let wanted = baseline_of(algo);
        if wanted.map(serde_name) != Some(declared) {
            return Err(CliError::Validation(format!(
                "{context}: field `algorithm` is `{declared}` but --algo is `{}`",
                algo.name()
            )));
        }
        let mut config = baseline_config_from_toml(text).map_err(|e| CliError::core(&context, e))?;
        config.seed = seed;
        return Ok(RunPlan::Baseline(config));
    }

    let tolerance = match table.remove("crpo_tolerance") {
        None => None,
        Some(v) => Some(v.as_float().or(v.as_integer().map(|i| i as f64)).ok_or_else(|| {
            CliError::Validation(format!("{context}: field `crpo_tolerance` must be a number"))
        })?),
    };
    let rest = toml::to_string(&table).map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut espo = espo_config_from_toml(&rest).map_err(|e| CliError::core(&context, e))?;
    espo.seed = seed;
    Ok(match baseline_of(algo) {
        None => RunPlan::Espo(espo),
        Some(alg) => {
            let mut config = BaselineConfig::paired_with(&espo, alg);
            if let Some(t) = tolerance {
                config.crpo_tolerance = t;
            }
            config.validate().map_err(|e| CliError::core(&context, e))?;
            RunPlan::Baseline(config)
        }
    })
}

fn serde_name(a: BaselineAlgorithm) -> &'static str {
    match a {
        BaselineAlgorithm::Crpo => "crpo",
        BaselineAlgorithm::Pcrpo => "pcrpo",
    }
}

pub fn load_plan(path: Option<&Path>, algo: AlgoArg, seed: u64) -> CliResult<RunPlan> {
    match path {
        Some(p) => plan_from_text(&read_input("--config", p)?, algo, seed, &p.display().to_string()),
        None => plan_from_text("", algo, seed, "<defaults>"),
    }
}

/// File stem used to name outputs derived from `path`.
pub fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "input".to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn espo_keys_pair_baselines() {
        let text = "iterations = 7\nh_plus = 0.3\nlearning_rate = 0.2\n";
        let RunPlan::Baseline(c) = plan_from_text(text, AlgoArg::Crpo, 4, "c").unwrap() else {
            panic!("expected a baseline plan");
        };
        assert_eq!((c.iterations, c.crpo_tolerance, c.seed), (7, 0.3, 4));
        let RunPlan::Espo(e) = plan_from_text(text, AlgoArg::Espo, 9, "c").unwrap() else {
            panic!("expected an ESPO plan");
        };
        assert_eq!((e.iterations, e.seed), (7, 9));
    }

    #[test]
    fn explicit_tolerance_is_kept() {
        let text = "h_plus = 0.3\ncrpo_tolerance = 0.05\n";
        let RunPlan::Baseline(c) = plan_from_text(text, AlgoArg::Crpo, 0, "c").unwrap() else {
            panic!("expected a baseline plan");
        };
        assert_eq!(c.crpo_tolerance, 0.05);
    }

    #[test]
    fn baseline_file_must_match_algo() {
        let text = "algorithm = \"crpo\"\niterations = 3\n";
        assert!(plan_from_text(text, AlgoArg::Crpo, 0, "c").is_ok());
        let err = plan_from_text(text, AlgoArg::Pcrpo, 0, "c").unwrap_err();
        assert!(err.to_string().contains("`algorithm`"));
        assert!(plan_from_text(text, AlgoArg::Espo, 0, "c").is_err());
    }

    #[test]
    fn errors_name_the_field() {
        let err = plan_from_text("learning_rate = -1.0\n", AlgoArg::Espo, 0, "c").unwrap_err();
        assert!(matches!(err, CliError::Validation(_)));
        assert!(err.to_string().contains("learning_rate"), "{err}");
        let err = plan_from_text("learning_rat = 1.0\n", AlgoArg::Espo, 0, "c").unwrap_err();
        assert!(err.to_string().contains("learning_rat"), "{err}");
    }
}
