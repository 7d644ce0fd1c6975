//! File formats: instance and oracle JSON, run-config TOML, trace CSV.
//!
//! Floats in JSON use the shortest representation that round-trips exactly.
//! Trace CSV floats are written with 17 significant digits.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::baselines::BaselineConfig;
use crate::cmdp::TabularCmdp;
use crate::error::{Error, Result};
use crate::espo::{EspoConfig, IterationRecord, Mode};
use crate::oracle::ConstrainedOptimum;
use crate::table::StateActionTable;

pub const ENV_FORMAT: &str = "espo-cmdp/1";
pub const ORACLE_FORMAT: &str = "espo-oracle/1";

/// Trace CSV header, in column order.
pub const TRACE_COLUMNS: [&str; 15] = [
    "t",
    "mode",
    "X_t",
    "v_bar_r",
    "v_bar_c",
    "h_plus",
    "h_minus",
    "zeta_plus",
    "zeta_minus",
    "grad_dot",
    "grad_norm_r",
    "grad_norm_c",
    "y_r",
    "y_c",
    "cum_transitions",
];

/// On-disk instance. Tables are nested `[s][a]` and `[s][a][s']`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvDocument {
    pub format: String,
    pub num_states: usize,
    pub num_actions: usize,
    pub discount: f64,
    pub budget: f64,
    pub v_max: f64,
    pub initial_dist: Vec<f64>,
    pub reward: Vec<Vec<f64>>,
    pub cost: Vec<Vec<f64>>,
    pub transitions: Vec<Vec<Vec<f64>>>,
}

impl EnvDocument {
    pub fn from_cmdp(cmdp: &TabularCmdp) -> Self {
        let (ns, na) = cmdp.shape();
        Self {
            format: ENV_FORMAT.to_string(),
            num_states: ns,
            num_actions: na,
            discount: cmdp.discount,
            budget: cmdp.budget,
            v_max: cmdp.v_max,
            initial_dist: cmdp.initial_dist.clone(),
            reward: cmdp.reward.to_rows(),
            cost: cmdp.cost.to_rows(),
            transitions: (0..ns)
                .map(|s| (0..na).map(|a| cmdp.next_dist(s, a).to_vec()).collect())
                .collect(),
        }
    }

    pub fn into_cmdp(self) -> Result<TabularCmdp> {
        if self.format != ENV_FORMAT {
            return Err(Error::Parse(format!(
                "format: expected `{ENV_FORMAT}`, found `{}`",
                self.format
            )));
        }
        let (ns, na) = (self.num_states, self.num_actions);
        if self.transitions.len() != ns {
            return Err(Error::Parse(format!(
                "transitions: expected {ns} states, found {}",
                self.transitions.len()
            )));
        }
        let mut flat = Vec::with_capacity(ns * na * ns);
        for (s, per_action) in self.transitions.iter().enumerate() {
            if per_action.len() != na {
                return Err(Error::Parse(format!(
                    "transitions[{s}]: expected {na} actions, found {}",
                    per_action.len()
                )));
            }
            for (a, row) in per_action.iter().enumerate() {
                if row.len() != ns {
                    return Err(Error::Parse(format!(
                        "transitions[{s}][{a}]: expected {ns} entries, found {}",
                        row.len()
                    )));
                }
                flat.extend_from_slice(row);
            }
        }
        let table = |name: &str, rows: &[Vec<f64>]| {
            StateActionTable::from_rows(rows).map_err(|e| Error::Parse(format!("{name}: {e}")))
        };
        let cmdp = TabularCmdp {
            num_states: ns,
            num_actions: na,
            transitions: flat,
            reward: table("reward", &self.reward)?,
            cost: table("cost", &self.cost)?,
            budget: self.budget,
            discount: self.discount,
            initial_dist: self.initial_dist,
            v_max: self.v_max,
        };
        cmdp.ensure_valid()?;
        Ok(cmdp)
    }
}

pub fn env_to_json(cmdp: &TabularCmdp) -> String {
    serde_json::to_string_pretty(&EnvDocument::from_cmdp(cmdp))
        .expect("instance serialization cannot fail")
}

pub fn env_from_json(text: &str) -> Result<TabularCmdp> {
    let doc: EnvDocument =
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("instance: {e}")))?;
    doc.into_cmdp()
}

/// Oracle output, tied to the budget and discount it was solved for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleDocument {
    pub format: String,
    pub instance_digest: String,
    pub budget: f64,
    pub discount: f64,
    pub v_max: f64,
    pub feasible: bool,
    pub optimal_reward_value: f64,
    pub optimal_cost_value: f64,
    pub lp_objective: f64,
    pub policy: Vec<Vec<f64>>,
    pub occupancy: Vec<Vec<f64>>,
}

impl OracleDocument {
    pub fn new(cmdp: &TabularCmdp, optimum: &ConstrainedOptimum) -> Self {
        Self {
            format: ORACLE_FORMAT.to_string(),
            instance_digest: format!("{:016x}", cmdp.digest()),
            budget: cmdp.budget,
            discount: cmdp.discount,
            v_max: cmdp.v_max,
            feasible: optimum.feasible,
            optimal_reward_value: optimum.optimal_reward_value,
            optimal_cost_value: optimum.optimal_cost_value,
            lp_objective: optimum.lp_objective,
            policy: optimum.policy.to_rows(),
            occupancy: optimum.occupancy.to_rows(),
        }
    }

    /// Largest attainable discounted value, `v_max / (1 - γ)`.
    pub fn value_scale(&self) -> f64 {
        self.v_max / (1.0 - self.discount)
    }
}

pub fn oracle_to_json(doc: &OracleDocument) -> String {
    serde_json::to_string_pretty(doc).expect("oracle serialization cannot fail")
}

pub fn oracle_from_json(text: &str) -> Result<OracleDocument> {
    let doc: OracleDocument =
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("oracle: {e}")))?;
    if doc.format != ORACLE_FORMAT {
        return Err(Error::Parse(format!(
            "format: expected `{ORACLE_FORMAT}`, found `{}`",
            doc.format
        )));
    }
    Ok(doc)
}

/// Parses and validates an ESPO run configuration. Unknown keys are rejected.
pub fn espo_config_from_toml(text: &str) -> Result<EspoConfig> {
    let config: EspoConfig =
        toml::from_str(text).map_err(|e| Error::Parse(format!("config: {}", e.message())))?;
    config.validate()?;
    Ok(config)
}

pub fn baseline_config_from_toml(text: &str) -> Result<BaselineConfig> {
    let config: BaselineConfig =
        toml::from_str(text).map_err(|e| Error::Parse(format!("config: {}", e.message())))?;
    config.validate()?;
    Ok(config)
}

pub fn espo_config_to_toml(config: &EspoConfig) -> String {
    toml::to_string(config).expect("config serialization cannot fail")
}

fn fmt_f64(x: f64) -> String {
    if x == f64::INFINITY {
        "inf".to_string()
    } else if x == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        format!("{x:.16e}")
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

pub fn write_trace_csv<W: Write>(out: W, trace: &[IterationRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Parse(format!("trace csv: {e}"));
    w.write_record(TRACE_COLUMNS).map_err(csv_err)?;
    for r in trace {
        w.write_record([
            r.t.to_string(),
            r.mode.as_str().to_string(),
            r.sample_size.to_string(),
            fmt_f64(r.v_bar_r),
            fmt_f64(r.v_bar_c),
            fmt_f64(r.h_plus),
            fmt_f64(r.h_minus),
            fmt_f64(r.zeta_plus),
            fmt_f64(r.zeta_minus),
            fmt_opt(r.grad_dot),
            fmt_opt(r.grad_norm_r),
            fmt_opt(r.grad_norm_c),
            fmt_opt(r.y_r),
            fmt_opt(r.y_c),
            r.cum_transitions.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn trace_to_csv_string(trace: &[IterationRecord]) -> String {
    let mut buf = Vec::new();
    write_trace_csv(&mut buf, trace).expect("writing to memory cannot fail");
    String::from_utf8(buf).expect("trace csv is ascii")
}

pub fn read_trace_csv<R: Read>(input: R) -> Result<Vec<IterationRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = rdr
        .headers()
        .map_err(|e| Error::Parse(format!("trace csv header: {e}")))?;
    let found: Vec<&str> = header.iter().collect();
    if found != TRACE_COLUMNS {
        return Err(Error::Parse(format!(
            "trace csv header: expected `{}`, found `{}`",
            TRACE_COLUMNS.join(","),
            found.join(",")
        )));
    }
    let mut trace = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::Parse(format!("trace csv line {line}: {e}")))?;
        let cell = |k: usize| row.get(k).unwrap_or("").trim();
        let bad = |k: usize, what: &str| {
            Error::Parse(format!(
                "trace csv line {line}, column {}: {what} `{}`",
                TRACE_COLUMNS[k],
                cell(k)
            ))
        };
        let int = |k: usize| cell(k).parse::<u64>().map_err(|_| bad(k, "expected integer, found"));
        let float = |k: usize| cell(k).parse::<f64>().map_err(|_| bad(k, "expected number, found"));
        let opt = |k: usize| {
            if cell(k).is_empty() {
                Ok(None)
            } else {
                float(k).map(Some)
            }
        };
        let mode: Mode = cell(1).parse().map_err(|_| bad(1, "unknown mode"))?;
        trace.push(IterationRecord {
            t: int(0)? as usize,
            mode,
            sample_size: int(2)?,
            v_bar_r: float(3)?,
            v_bar_c: float(4)?,
            h_plus: float(5)?,
            h_minus: float(6)?,
            zeta_plus: float(7)?,
            zeta_minus: float(8)?,
            grad_dot: opt(9)?,
            grad_norm_r: opt(10)?,
            grad_norm_c: opt(11)?,
            y_r: opt(12)?,
            y_c: opt(13)?,
            cum_transitions: int(14)?,
        });
    }
    Ok(trace)
}

pub fn trace_from_csv_str(text: &str) -> Result<Vec<IterationRecord>> {
    read_trace_csv(text.as_bytes())
}
