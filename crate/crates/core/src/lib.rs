//! Decentralized scheduling of modular electrolysis plants.
//!
//! Each electrolysis module is driven by an agent that minimizes its own
//! marginal levelized cost of hydrogen (mLCOH) while the fleet as a whole
//! follows a per-period hydrogen demand. Agents coordinate through an ADMM
//! loop over a message-passing runtime.
//!
//! ```
//! use peasched_core::{bundled, parse_scenario, run_horizon, RuntimeOptions};
//!
//! let scenario = parse_scenario(bundled::CASE_STUDY).unwrap();
//! let result = run_horizon(&scenario, RuntimeOptions::default()).unwrap();
//! assert!(result.all_converged);
//! ```

pub mod admm;
pub mod economics;
pub mod electrolyzer;
pub mod error;
mod minimize;
pub mod oracle;
pub mod report;
pub mod runtime;
pub mod scenario;

pub use admm::{AdmmError, AdmmSettings, AdmmState};
pub use economics::{
    annualized_capex, capex_per_interval, interval_cost_eur, mlcoh, mlcoh_gradient, om_per_kg,
    opex_for_interval, CostBreakdown, FinancialParameters, Gradient, PeriodContext,
};
pub use electrolyzer::{
    advance_status, feasible_op_range, production_rate, startup_indicator, OperatingState,
    PeaParameters, PeaStatus,
};
pub use error::ModelError;
pub use oracle::{brute_force_dispatch, OracleError, OracleResult};
pub use report::{write_outputs, ReportError};
pub use runtime::{
    run_horizon, ExecutionMode, FaultEvent, FaultKind, PeriodResult, Runtime, RuntimeError,
    RuntimeOptions, ScheduleResult, TraceRow,
};
pub use scenario::{
    generate_targets, load_scenario, parse_scenario, scale_fleet, FleetEntry, Scenario,
    ScenarioError, SolverSettings,
};

/// Scenario files shipped with the crate.
pub mod bundled {
    pub const CASE_STUDY: &str = include_str!("../../../scenarios/case_study.toml");
    pub const MALFUNCTION: &str = include_str!("../../../scenarios/malfunction.toml");
    pub const SCALEUP_10: &str = include_str!("../../../scenarios/scaleup_10.toml");

    pub const ALL: [(&str, &str); 3] = [
        ("case_study", CASE_STUDY),
        ("malfunction", MALFUNCTION),
        ("scaleup_10", SCALEUP_10),
    ];
}
