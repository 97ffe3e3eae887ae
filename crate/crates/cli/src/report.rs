//! Plain-text reports: per-event step metrics, identification fit tables,
//! and the reproduce-all summary.

use std::fmt::Write as _;
use tlbc_core::scenario::{step_metrics_all, ScenarioError};
use tlbc_core::sysid::ScanEntry;
use tlbc_core::{Scenario, StepMetrics, TimeSeries};

/// Step metrics for every event in the scenario, one line each.
pub fn metrics_report(scenario: &Scenario, ts: &TimeSeries) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "scenario {}", scenario.name);
    if let Some(t) = ts.diverged_at {
        let _ = writeln!(out, "  DIVERGED at t = {t:.4} s; rows after that are cut");
    }
    let all = step_metrics_all(scenario, ts);
    if all.is_empty() {
        let _ = writeln!(out, "  no step events inside (0, t_end)");
    }
    for (t_event, metrics) in all {
        match metrics {
            Ok(m) => {
                let _ = writeln!(out, "  event t = {:.3} s: {}", t_event, metrics_line(&m));
            }
            Err(ScenarioError::WindowTooShort { .. }) if ts.diverged_at.is_some() => {
                let _ = writeln!(
                    out,
                    "  event t = {t_event:.3} s: window lost to divergence"
                );
            }
            Err(e) => {
                let _ = writeln!(out, "  event t = {t_event:.3} s: {e}");
            }
        }
    }
    out
}

/// One event's numbers in a fixed order.
pub fn metrics_line(m: &StepMetrics) -> String {
    let settle = match m.settling_time {
        Some(t) => format!("settle {:.1} ms", t * 1e3),
        None => "NOT SETTLED".into(),
    };
    format!(
        "final {:.3} V (ref {:.2}), {}, overshoot {:.2}%, sse {:.3}%",
        m.final_value,
        m.reference,
        settle,
        m.overshoot_percent,
        m.sse_percent()
    )
}

/// Structure-scan table: one row per zero count.
pub fn scan_table(channel: &str, entries: &[ScanEntry<f64>]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "channel {channel}, 3 poles");
    let _ = writeln!(out, "  zeros  fit %    model");
    for e in entries {
        match &e.outcome {
            Ok(r) => {
                let _ = writeln!(out, "  {:<5}  {:<7.2}  {}", e.n_zeros, r.fit_percent, r.tf);
            }
            Err(err) => {
                let _ = writeln!(out, "  {:<5}  -        {err}", e.n_zeros);
            }
        }
    }
    out
}

/// Aligned reproduce-all summary. Rows are (name, status, wall seconds,
/// note); the wall column is what the performance budget is judged on.
pub fn summary_table(rows: &[(String, String, f64, String)]) -> String {
    let name_w = rows
        .iter()
        .map(|r| r.0.len())
        .chain(["artifact".len()])
        .max()
        .unwrap_or(8);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<name_w$}  {:<6}  {:>7}  note",
        "artifact", "status", "wall_s"
    );
    for (name, status, wall, note) in rows {
        let _ = writeln!(out, "{name:<name_w$}  {status:<6}  {wall:>7.2}  {note}");
    }
    out
}
