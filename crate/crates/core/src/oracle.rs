//! Exhaustive centralized dispatch over an operating-point grid, for
//! checking solution quality on small fleets.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::admm::deviation_rel;
use crate::economics::{interval_cost_eur, PeriodContext};
use crate::electrolyzer::{startup_indicator, OperatingState};
use crate::error::ModelError;
use crate::scenario::FleetEntry;

pub const MAX_AGENTS: usize = 3;
pub const MIN_GRID_STEP: f64 = 0.5;
pub const DEFAULT_GRID_STEP: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("fleet of {0} modules is too large for enumeration (max {MAX_AGENTS})")]
    FleetTooLarge(usize),
    #[error("grid step {0} % is below {MIN_GRID_STEP} %")]
    GridTooFine(f64),
    #[error("{0} previous states given for {1} modules")]
    StateCount(usize, usize),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub states: Vec<OperatingState>,
    /// Percent, 0 for idle modules.
    pub ops: Vec<f64>,
    /// € for the interval, start-ups included.
    pub total_cost: f64,
    /// Production minus demand, kg/h.
    pub deviation: f64,
    /// Whether the demand is met within the relative tolerance.
    pub meets_demand: bool,
}

/// Grid of operating points `op_min, op_min + step, …` plus `op_max`.
pub fn op_grid(op_min: f64, op_max: f64, step: f64) -> Vec<f64> {
    let mut grid = Vec::new();
    let mut k = 0u32;
    loop {
        let op = op_min + f64::from(k) * step;
        if op >= op_max - 1e-9 {
            break;
        }
        grid.push(op);
        k += 1;
    }
    grid.push(op_max);
    grid
}

/// Best joint dispatch on the grid: among combinations meeting demand
/// within `eps_dem` the cheapest; if none does, the one closest to demand.
/// Ties go to the smaller deviation, then the lower cost.
pub fn brute_force_dispatch(
    fleet: &[FleetEntry],
    prev_states: &[OperatingState],
    ctx: &PeriodContext,
    grid_step: f64,
    eps_dem: f64,
    allow_idle: bool,
) -> Result<OracleResult, OracleError> {
    if fleet.len() > MAX_AGENTS {
        return Err(OracleError::FleetTooLarge(fleet.len()));
    }
    if !(grid_step >= MIN_GRID_STEP) {
        return Err(OracleError::GridTooFine(grid_step));
    }
    if prev_states.len() != fleet.len() {
        return Err(OracleError::StateCount(prev_states.len(), fleet.len()));
    }

    // per module: (state, op, qty, cost)
    let mut options: Vec<Vec<(OperatingState, f64, f64, f64)>> = Vec::with_capacity(fleet.len());
    for (entry, prev) in fleet.iter().zip(prev_states) {
        let cost = |state: OperatingState, op: f64| {
            let started = startup_indicator(state, *prev) == 1;
            interval_cost_eur(op, state, started, &entry.fin, &entry.pea, ctx)
        };
        let mut opts = Vec::new();
        if allow_idle {
            opts.push((OperatingState::Idle, 0.0, 0.0, cost(OperatingState::Idle, 0.0)?));
        }
        for op in op_grid(entry.pea.op_min, entry.pea.op_max, grid_step) {
            opts.push((OperatingState::Production, op, entry.pea.curve(op), cost(OperatingState::Production, op)?));
        }
        options.push(opts);
    }

    let mut best: Option<(bool, f64, f64, Vec<usize>)> = None;
    let mut idx = vec![0usize; fleet.len()];
    loop {
        let qty: f64 = idx.iter().zip(&options).map(|(i, o)| o[*i].2).sum();
        let cost: f64 = idx.iter().zip(&options).map(|(i, o)| o[*i].3).sum();
        let dev = qty - ctx.demand;
        let feasible = deviation_rel(qty, ctx.demand).abs() < eps_dem;
        let better = match &best {
            None => true,
            Some((bf, bcost, bdev, _)) => match (feasible, *bf) {
                (true, false) => true,
                (false, true) => false,
                (true, true) => cost < *bcost || (cost == *bcost && dev.abs() < bdev.abs()),
                (false, false) => {
                    dev.abs() < bdev.abs() || (dev.abs() == bdev.abs() && cost < *bcost)
                }
            },
        };
        if better {
            best = Some((feasible, cost, dev, idx.clone()));
        }

        // odometer
        let mut pos = 0;
        loop {
            if pos == idx.len() {
                let (meets_demand, total_cost, deviation, idx) = best.expect("at least one combination");
                return Ok(OracleResult {
                    states: idx.iter().zip(&options).map(|(i, o)| o[*i].0).collect(),
                    ops: idx.iter().zip(&options).map(|(i, o)| o[*i].1).collect(),
                    total_cost,
                    deviation,
                    meets_demand,
                });
            }
            idx[pos] += 1;
            if idx[pos] < options[pos].len() {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
    }
}
