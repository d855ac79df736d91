//! CSV and JSON outputs of a scheduling run.
//!
//! Tables use 6 significant digits. The `kg` and `cost_eur` columns of the
//! schedule are written in shortest round-trip form so that the totals in
//! the summary can be recomputed from the rows.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::runtime::{FaultRecovery, ScheduleResult};

pub const SCHEDULE_HEADER: &str = "period,agent,state,op_pct,mh2_kg_per_h,capex_eur_per_kg,opex_eur_per_kg,om_eur_per_kg,mlcoh_eur_per_kg,kg,cost_eur";
pub const TRACE_HEADER: &str = "period,iteration,agent,x,z,lambda,qty_kg_per_h,deviation,startup_eur,active";

pub const SCHEDULE_FILE: &str = "schedule.csv";
pub const TRACE_FILE: &str = "trace.csv";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot encode summary: {0}")]
    Json(#[from] serde_json::Error),
}

/// `v` with 6 significant digits.
pub fn sig6(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let exp = v.abs().log10().floor() as i32;
    if !(-4..15).contains(&exp) {
        return format!("{v:.5e}");
    }
    let decimals = (5 - exp).max(0) as usize;
    let s = format!("{v:.decimals$}");
    // rounding may carry into a new digit, e.g. 9.999995 -> 10.00000
    let digits = s.trim_start_matches('-').replace('.', "").trim_start_matches('0').len();
    if digits > 6 && decimals > 0 {
        format!("{v:.prec$}", prec = decimals - 1)
    } else {
        s
    }
}

pub fn schedule_csv(result: &ScheduleResult) -> String {
    let mut out = String::from(SCHEDULE_HEADER);
    out.push('\n');
    for p in &result.periods {
        for a in &p.agents {
            let b = &a.breakdown;
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                p.period,
                a.agent,
                a.state,
                sig6(a.op),
                sig6(a.qty),
                sig6(b.capex_per_kg),
                sig6(b.opex_per_kg),
                sig6(b.om_per_kg),
                sig6(b.mlcoh),
                a.qty * result.delta_int,
                a.cost_eur,
            )
            .expect("writing to a String");
        }
    }
    out
}

pub fn trace_csv(result: &ScheduleResult) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for r in &result.trace {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.period,
            r.iteration,
            r.agent,
            sig6(r.x),
            sig6(r.z),
            sig6(r.lambda),
            sig6(r.qty),
            sig6(r.deviation),
            sig6(r.startup_eur),
            r.active,
        )
        .expect("writing to a String");
    }
    out
}

#[derive(Debug, Serialize)]
pub struct PeriodSummary<'a> {
    pub period: usize,
    pub demand_kg_per_h: f64,
    pub production_kg_per_h: f64,
    pub deviation_rel: f64,
    pub converged: bool,
    pub iterations: u32,
    pub wall_time_ms: f64,
    pub cost_eur: f64,
    pub faults: &'a [FaultRecovery],
}

#[derive(Debug, Serialize)]
pub struct Summary<'a> {
    pub scenario: &'a str,
    pub digest: &'a str,
    pub periods: usize,
    pub all_converged: bool,
    pub unmet_demand_periods: Vec<usize>,
    pub total_kg: f64,
    pub total_cost_eur: f64,
    pub mean_mlcoh_eur_per_kg: f64,
    pub total_iterations: u64,
    pub max_rescheduling_latency_ms: Option<f64>,
    pub per_period: Vec<PeriodSummary<'a>>,
}

pub fn summary(result: &ScheduleResult) -> Summary<'_> {
    Summary {
        scenario: &result.scenario,
        digest: &result.digest,
        periods: result.periods.len(),
        all_converged: result.all_converged,
        unmet_demand_periods: result
            .periods
            .iter()
            .filter(|p| p.unmet_demand())
            .map(|p| p.period)
            .collect(),
        total_kg: result.total_kg,
        total_cost_eur: result.total_cost_eur,
        mean_mlcoh_eur_per_kg: result.mean_mlcoh,
        total_iterations: result.total_iterations,
        max_rescheduling_latency_ms: result.max_rescheduling_latency.map(|d| d.as_secs_f64() * 1e3),
        per_period: result
            .periods
            .iter()
            .map(|p| PeriodSummary {
                period: p.period,
                demand_kg_per_h: p.demand,
                production_kg_per_h: p.total_qty(),
                deviation_rel: p.deviation_rel,
                converged: p.converged,
                iterations: p.iterations_used,
                wall_time_ms: p.wall_time.as_secs_f64() * 1e3,
                cost_eur: p.total_cost(),
                faults: &p.faults,
            })
            .collect(),
    }
}

pub fn summary_json(result: &ScheduleResult) -> Result<String, ReportError> {
    let mut s = serde_json::to_string_pretty(&summary(result))?;
    s.push('\n');
    Ok(s)
}

/// Writes `schedule.csv`, `trace.csv` and `summary.json` into `dir`.
///
/// Everything is rendered first and written to temporary names; the files
/// only appear under their final names once all three writes succeeded.
pub fn write_outputs(result: &ScheduleResult, dir: &Path) -> Result<(), ReportError> {
    let files = [
        (SCHEDULE_FILE, schedule_csv(result)),
        (TRACE_FILE, trace_csv(result)),
        (SUMMARY_FILE, summary_json(result)?),
    ];
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| ReportError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;

    let mut staged: Vec<(PathBuf, PathBuf)> = Vec::new();
    let cleanup = |staged: &[(PathBuf, PathBuf)]| {
        for (tmp, _) in staged {
            let _ = fs::remove_file(tmp);
        }
    };
    for (name, body) in &files {
        let tmp = dir.join(format!(".{name}.tmp"));
        if let Err(e) = fs::write(&tmp, body) {
            let _ = fs::remove_file(&tmp);
            cleanup(&staged);
            return Err(io(&tmp)(e));
        }
        staged.push((tmp, dir.join(name)));
    }
    for (i, (tmp, dst)) in staged.iter().enumerate() {
        if let Err(e) = fs::rename(tmp, dst) {
            for (_, done) in &staged[..i] {
                let _ = fs::remove_file(done);
            }
            cleanup(&staged[i..]);
            return Err(io(dst)(e));
        }
    }
    Ok(())
}
