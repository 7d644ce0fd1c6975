//! Summaries recomputed from trace CSV rows and oracle values alone.
//!
//! Gaps here use the recorded estimates `v̄`; in exact evaluation mode they
//! coincide with the in-process [`crate::analysis::gap_series`].

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::analysis::{partition, FirstHit, OscillationReport};
use crate::error::Result;
use crate::espo::{classify_mode, weighted_output_distribution, IterationRecord, Mode, Region};
use crate::io::OracleDocument;
use crate::policy::ZERO_GRADIENT;

/// Oracle quantities a trace is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub optimal_reward_value: f64,
    pub optimal_cost_value: f64,
    pub budget: f64,
}

impl From<&OracleDocument> for Reference {
    fn from(doc: &OracleDocument) -> Self {
        Self {
            optimal_reward_value: doc.optimal_reward_value,
            optimal_cost_value: doc.optimal_cost_value,
            budget: doc.budget,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub t: usize,
    pub mode: Mode,
    pub sample_size: u64,
    pub cum_transitions: u64,
    pub reward_gap: f64,
    pub violation: f64,
    /// Weight of this iterate in the output distribution.
    pub output_weight: f64,
}

pub const REPORT_COLUMNS: [&str; 7] = [
    "t",
    "mode",
    "X_t",
    "cum_transitions",
    "reward_gap",
    "violation",
    "output_weight",
];

pub fn report_rows(trace: &[IterationRecord], reference: &Reference, x_r: f64) -> Vec<ReportRow> {
    let weights = weighted_output_distribution(trace, x_r).unwrap_or_else(|_| vec![0.0; trace.len()]);
    trace
        .iter()
        .zip(weights)
        .map(|(r, w)| ReportRow {
            t: r.t,
            mode: r.mode,
            sample_size: r.sample_size,
            cum_transitions: r.cum_transitions,
            reward_gap: reference.optimal_reward_value - r.v_bar_r,
            violation: (r.v_bar_c - reference.budget).max(0.0),
            output_weight: w,
        })
        .collect()
}

pub fn report_rows_to_csv(rows: &[ReportRow]) -> String {
    let mut out = REPORT_COLUMNS.join(",");
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{:.16e},{:.16e},{:.16e}",
            r.t,
            r.mode,
            r.sample_size,
            r.cum_transitions,
            r.reward_gap,
            r.violation,
            r.output_weight
        );
    }
    out
}

/// Rows whose recorded mode contradicts the gate applied to the recorded
/// estimate, slacks and gradient dot product.
pub fn gate_mismatches(trace: &[IterationRecord], budget: f64) -> Vec<usize> {
    trace
        .iter()
        .enumerate()
        .filter(|(_, r)| !mode_consistent(r, budget))
        .map(|(i, _)| i)
        .collect()
}

fn mode_consistent(r: &IterationRecord, budget: f64) -> bool {
    let region = classify_mode(r.v_bar_c, budget, r.h_plus, r.h_minus);
    // Two-mode traces record h⁺ = h⁻ = tolerance; the boundary point ascends.
    let two_mode = r.h_plus == r.h_minus && r.grad_dot.is_none();
    match (region, r.mode) {
        (Region::Cost, Mode::Cost) | (Region::Reward, Mode::Reward) => true,
        (Region::Soft, Mode::Reward) => two_mode,
        (Region::Soft, Mode::SoftConflict) => r.grad_dot.is_some_and(|d| d < 0.0),
        (Region::Soft, Mode::SoftNoConflict) => {
            let degenerate = r.grad_norm_r.is_some_and(|n| n <= ZERO_GRADIENT)
                || r.grad_norm_c.is_some_and(|n| n <= ZERO_GRADIENT);
            r.grad_dot.is_some_and(|d| d >= 0.0 || degenerate)
        }
        _ => false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub label: String,
    pub iterations: usize,
    pub modes: OscillationReport,
    /// Gap of the weighted output distribution, from estimates.
    pub weighted_gap: Option<f64>,
    pub final_row_gap: Option<f64>,
    pub first_hit: Option<FirstHit>,
    pub gate_mismatches: usize,
    pub last_cum_transitions: u64,
}

/// First row with `gap ≤ epsilon_gap` and `violation ≤ epsilon_violation`.
pub fn first_hit(rows: &[ReportRow], epsilon_gap: f64, epsilon_violation: f64) -> Option<FirstHit> {
    rows.iter()
        .find(|r| r.reward_gap <= epsilon_gap && r.violation <= epsilon_violation)
        .map(|r| FirstHit {
            t: r.t,
            transitions: r.cum_transitions,
        })
}

pub fn summarize(
    label: &str,
    trace: &[IterationRecord],
    reference: &Reference,
    x_r: f64,
    epsilon_gap: f64,
    epsilon_violation: f64,
    crpo: Option<&[IterationRecord]>,
) -> Result<TraceSummary> {
    let rows = report_rows(trace, reference, x_r);
    let weighted_gap = weighted_output_distribution(trace, x_r).ok().map(|w| {
        let er: f64 = w.iter().zip(trace).map(|(p, r)| p * r.v_bar_r).sum();
        reference.optimal_reward_value - er
    });
    let crpo_reward = crpo.map_or(0, |c| c.iter().filter(|r| r.mode == Mode::Reward).count());
    Ok(TraceSummary {
        label: label.to_string(),
        iterations: trace.len(),
        modes: partition(trace.iter().map(|r| r.mode), crpo_reward),
        weighted_gap,
        final_row_gap: rows.last().map(|r| r.reward_gap),
        first_hit: first_hit(&rows, epsilon_gap, epsilon_violation),
        gate_mismatches: gate_mismatches(trace, reference.budget).len(),
        last_cum_transitions: trace.last().map_or(0, |r| r.cum_transitions),
    })
}

pub const SUMMARY_COLUMNS: [&str; 14] = [
    "label",
    "T",
    "n_reward",
    "n_soft_no_conflict",
    "n_soft_conflict",
    "n_cost",
    "t_in",
    "reentry_count",
    "weighted_gap",
    "final_row_gap",
    "first_hit_t",
    "first_hit_transitions",
    "gate_mismatches",
    "last_cum_transitions",
];

pub fn summaries_to_csv(summaries: &[TraceSummary]) -> String {
    let opt_f = |x: Option<f64>| x.map(|v| format!("{v:.16e}")).unwrap_or_default();
    let opt_u = |x: Option<u64>| x.map(|v| v.to_string()).unwrap_or_default();
    let mut out = SUMMARY_COLUMNS.join(",");
    out.push('\n');
    for s in summaries {
        let m = &s.modes;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            s.label,
            s.iterations,
            m.reward,
            m.soft_no_conflict,
            m.soft_conflict,
            m.cost,
            opt_u(m.t_in.map(|t| t as u64)),
            m.reentry_count,
            opt_f(s.weighted_gap),
            opt_f(s.final_row_gap),
            opt_u(s.first_hit.map(|h| h.t as u64)),
            opt_u(s.first_hit.map(|h| h.transitions)),
            s.gate_mismatches,
            s.last_cum_transitions
        );
    }
    out
}

fn mode_color(mode: Mode) -> &'static str {
    match mode {
        Mode::Reward => "#2b8a3e",
        Mode::SoftNoConflict => "#74c0fc",
        Mode::SoftConflict => "#f59f00",
        Mode::Cost => "#c92a2a",
    }
}

/// Two-panel SVG: estimated reward gap per iteration over a mode strip.
pub fn render_svg(title: &str, rows: &[ReportRow]) -> String {
    let (w, h, pad, strip) = (720.0, 360.0, 48.0, 18.0);
    let plot_h = h - 2.0 * pad - strip - 8.0;
    let n = rows.len().max(1) as f64;
    let gaps: Vec<f64> = rows.iter().map(|r| r.reward_gap).collect();
    let lo = gaps.iter().copied().fold(0.0_f64, f64::min);
    let hi = gaps.iter().copied().fold(lo + 1e-12, f64::max);
    let x = |i: f64| pad + (w - 2.0 * pad) * i / n;
    let y = |g: f64| pad + plot_h * (hi - g) / (hi - lo);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{pad}" y="{}" font-family="sans-serif" font-size="14">{}</text>"#,
        pad * 0.6,
        escape(title)
    );
    let _ = writeln!(
        svg,
        r##"<line x1="{pad}" y1="{0}" x2="{1}" y2="{0}" stroke="#888"/>"##,
        y(0.0).clamp(pad, pad + plot_h),
        w - pad
    );
    let points: Vec<String> = gaps
        .iter()
        .enumerate()
        .map(|(i, &g)| format!("{:.2},{:.2}", x(i as f64 + 0.5), y(g)))
        .collect();
    let _ = writeln!(
        svg,
        r##"<polyline fill="none" stroke="#1c3d5a" stroke-width="1.5" points="{}"/>"##,
        points.join(" ")
    );
    let strip_y = pad + plot_h + 8.0;
    for (i, r) in rows.iter().enumerate() {
        let _ = writeln!(
            svg,
            r#"<rect x="{:.2}" y="{strip_y}" width="{:.2}" height="{strip}" fill="{}"/>"#,
            x(i as f64),
            (x(i as f64 + 1.0) - x(i as f64)).max(0.5),
            mode_color(r.mode)
        );
    }
    for (k, mode) in Mode::ALL.iter().enumerate() {
        let lx = pad + 150.0 * k as f64;
        let ly = h - pad * 0.4;
        let _ = writeln!(
            svg,
            r#"<rect x="{lx}" y="{}" width="10" height="10" fill="{}"/><text x="{}" y="{ly}" font-family="sans-serif" font-size="11">{}</text>"#,
            ly - 9.0,
            mode_color(*mode),
            lx + 14.0,
            mode
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="4" y="{}" font-family="sans-serif" font-size="11">{hi:.3}</text><text x="4" y="{}" font-family="sans-serif" font-size="11">{lo:.3}</text>"#,
        pad + 4.0,
        pad + plot_h
    );
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
