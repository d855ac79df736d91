//! Per-agent ADMM solver for a single period.
//!
//! Each agent keeps a local view `x` (its mLCOH-optimal setpoint given the
//! coupling terms), a demand view `z` (the setpoint that closes the demand
//! gap given everyone else's output) and a multiplier `lambda` coupling the
//! two through `lambda·(x − z) + p/2·(x − z)²`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::economics::{mlcoh, FinancialParameters, PeriodContext};
use crate::electrolyzer::{startup_indicator, OperatingState, PeaParameters};
use crate::error::ModelError;
use crate::minimize::minimize_bounded;

/// Floor on the demand used to normalize deviations, in kg/h.
pub const DEVIATION_FLOOR: f64 = 1e-6;

/// Resolution of the coarse scan in the x-update, in percent.
const SCAN_STEP: f64 = 1.0;
/// Width of the final golden-section bracket, in percent.
const OP_TOL: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AdmmError {
    #[error("agent {agent}: no admissible operating state this period")]
    EmptyFeasibleSet { agent: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmmSettings {
    /// Penalty weight `p`, also the dual step size.
    pub penalty: f64,
    /// Tolerance on the sum of successive changes of x, z and lambda.
    pub eps: f64,
    /// Relative demand tolerance.
    pub eps_dem: f64,
    pub max_iterations: u32,
}

impl Default for AdmmSettings {
    fn default() -> Self {
        AdmmSettings {
            penalty: 10.0,
            eps: 1e-3,
            eps_dem: 1e-3,
            max_iterations: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub x: f64,
    pub z: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmmState {
    pub x: f64,
    pub x_state: OperatingState,
    pub z: f64,
    pub z_state: OperatingState,
    pub lambda: f64,
    pub k: u32,
    pub p: f64,
    pub eps: f64,
    pub eps_dem: f64,
    /// Gradient scale frozen after the first exchange of the period.
    pub g_ref: Option<f64>,
    /// Value of each variable before its most recent update.
    pub history: Option<Snapshot>,
}

impl AdmmState {
    fn blank(settings: &AdmmSettings) -> Self {
        AdmmState {
            x: 0.0,
            x_state: OperatingState::Idle,
            z: 0.0,
            z_state: OperatingState::Idle,
            lambda: 0.0,
            k: 0,
            p: settings.penalty,
            eps: settings.eps,
            eps_dem: settings.eps_dem,
            g_ref: None,
            history: None,
        }
    }

    /// Cold start: x and z drawn uniformly within the operating limits.
    pub fn random(pea: &PeaParameters, settings: &AdmmSettings, rng: &mut impl Rng) -> Self {
        let x = rng.random_range(pea.op_min..=pea.op_max);
        let z = rng.random_range(pea.op_min..=pea.op_max);
        AdmmState {
            x,
            x_state: OperatingState::Production,
            z,
            z_state: OperatingState::Production,
            ..Self::blank(settings)
        }
    }

    /// Warm start from the previous period's final x and z; lambda and k
    /// start again from zero.
    pub fn warm(
        x: f64,
        x_state: OperatingState,
        z: f64,
        z_state: OperatingState,
        settings: &AdmmSettings,
    ) -> Self {
        AdmmState {
            x,
            x_state,
            z,
            z_state,
            ..Self::blank(settings)
        }
    }

    /// Idle state for a module that cannot take part in the period.
    pub fn idle(settings: &AdmmSettings) -> Self {
        Self::blank(settings)
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            x: self.x,
            z: self.z,
            lambda: self.lambda,
        }
    }

    fn history_mut(&mut self) -> &mut Snapshot {
        let current = self.snapshot();
        self.history.get_or_insert(current)
    }

    pub fn set_x(&mut self, op: f64, state: OperatingState) {
        self.history_mut().x = self.x;
        self.x = op;
        self.x_state = state;
    }

    pub fn set_z(&mut self, op: f64, state: OperatingState) {
        self.history_mut().z = self.z;
        self.z = op;
        self.z_state = state;
    }

    pub fn set_lambda(&mut self, lambda: f64) {
        self.history_mut().lambda = self.lambda;
        self.lambda = lambda;
    }

    /// Sum of the latest changes of x, z and lambda.
    pub fn residual(&self) -> Option<f64> {
        self.history.map(|h| {
            (self.x - h.x).abs() + (self.z - h.z).abs() + (self.lambda - h.lambda).abs()
        })
    }
}

/// Everything an agent knows about itself for the current period.
#[derive(Debug, Clone, Copy)]
pub struct AgentContext<'a> {
    pub pea: &'a PeaParameters,
    pub fin: &'a FinancialParameters,
    pub period: PeriodContext,
    /// State the module was in during the previous period.
    pub prev_state: OperatingState,
    pub production_admissible: bool,
    pub idle_admissible: bool,
}

impl<'a> AgentContext<'a> {
    pub fn new(
        pea: &'a PeaParameters,
        fin: &'a FinancialParameters,
        period: PeriodContext,
        prev_state: OperatingState,
    ) -> Self {
        AgentContext {
            pea,
            fin,
            period,
            prev_state,
            production_admissible: true,
            idle_admissible: true,
        }
    }

    /// mLCOH of the module at `(state, op)`, start-up cost included when
    /// this would be a start.
    pub fn objective(&self, state: OperatingState, op: f64) -> Result<f64, ModelError> {
        let started = startup_indicator(state, self.prev_state) == 1;
        Ok(mlcoh(op, state, started, self.fin, self.pea, &self.period)?.mlcoh)
    }

    pub fn production(&self, state: OperatingState, op: f64) -> f64 {
        match state {
            OperatingState::Idle => 0.0,
            OperatingState::Production => self.pea.curve(op),
        }
    }
}

/// Augmented Lagrangian of one agent: `f(x) + λ(x − z) + p/2·(x − z)²`.
pub fn lagrangian(
    x_state: OperatingState,
    x: f64,
    z: f64,
    lambda: f64,
    p: f64,
    agent: &AgentContext<'_>,
) -> Result<f64, ModelError> {
    let d = x - z;
    Ok(agent.objective(x_state, x)? + lambda * d + 0.5 * p * d * d)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct XChoice {
    pub state: OperatingState,
    pub op: f64,
    pub objective: f64,
}

/// Minimizes the agent's Lagrangian over both states with z and lambda
/// held at their current values.
pub fn x_update(state: &AdmmState, agent: &AgentContext<'_>) -> Result<XChoice, AdmmError> {
    let mut best: Option<XChoice> = None;
    if agent.idle_admissible {
        let objective = lagrangian(OperatingState::Idle, 0.0, state.z, state.lambda, state.p, agent)?;
        best = Some(XChoice {
            state: OperatingState::Idle,
            op: 0.0,
            objective,
        });
    }
    if agent.production_admissible {
        let pea = agent.pea;
        let prod = |op: f64| {
            lagrangian(OperatingState::Production, op, state.z, state.lambda, state.p, agent)
                .unwrap_or(f64::INFINITY)
        };
        let (op, objective) = minimize_bounded(prod, pea.op_min, pea.op_max, SCAN_STEP, OP_TOL);
        let candidate = XChoice {
            state: OperatingState::Production,
            op,
            objective,
        };
        best = match best {
            Some(idle) if idle.objective <= objective => Some(idle),
            _ => Some(candidate),
        };
    }
    best.ok_or_else(|| AdmmError::EmptyFeasibleSet {
        agent: agent.pea.id.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZChoice {
    pub state: OperatingState,
    pub op: f64,
}

/// Setpoint closing the demand gap left by the other agents.
///
/// Solves the production curve for `demand − others_qty` and clamps to the
/// operating range; the idle candidate competes on the same absolute
/// deviation and wins ties when the residual is not positive. Among exact
/// solutions the one nearest `x_new` is returned.
pub fn z_update(x_new: f64, others_qty: f64, agent: &AgentContext<'_>) -> ZChoice {
    let residual = agent.period.demand - others_qty;
    let idle = ZChoice {
        state: OperatingState::Idle,
        op: 0.0,
    };
    if !agent.production_admissible {
        return idle;
    }
    let op = agent.pea.operating_point_for(residual, x_new);
    let produce = ZChoice {
        state: OperatingState::Production,
        op,
    };
    if !agent.idle_admissible {
        return produce;
    }
    let idle_err = residual.abs();
    let prod_err = (agent.pea.curve(op) - residual).abs();
    if idle_err < prod_err || (idle_err == prod_err && residual <= 0.0) {
        idle
    } else {
        produce
    }
}

/// Relative demand deviation `(total − demand) / max(demand, floor)`.
pub fn deviation_rel(total: f64, demand: f64) -> f64 {
    (total - demand) / demand.max(DEVIATION_FLOOR)
}

/// Weight `g_ref / (|g| + g_ref)`: close to one for agents whose cost is
/// flat at their current setpoint, close to zero for steep ones.
pub fn gradient_weight(gradient: f64, g_ref: f64) -> f64 {
    if !(g_ref.is_finite() && g_ref > f64::EPSILON) {
        return 1.0;
    }
    g_ref / (gradient.abs() + g_ref)
}

/// Multiplier after one dual step: `λ + p·deviation·w(gradient)`.
pub fn dual_update(state: &AdmmState, deviation_rel: f64, gradient: f64) -> f64 {
    let g_ref = state.g_ref.unwrap_or(gradient.abs());
    state.lambda + state.p * deviation_rel * gradient_weight(gradient, g_ref)
}

/// Local half of the stopping test: at least one completed iteration and
/// the latest changes of x, z and lambda sum to less than `eps`.
pub fn settled(state: &AdmmState) -> bool {
    state.k >= 1 && state.residual().is_some_and(|r| r < state.eps)
}

/// Stopping test: successive changes below `eps` and demand met within
/// `eps_dem`. Never true before the first completed iteration.
pub fn converged(state: &AdmmState, deviation_rel: f64) -> bool {
    settled(state) && deviation_rel.abs() < state.eps_dem
}

/// Median of a non-empty slice of finite values.
pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::economics::mlcoh_gradient;
    use approx::assert_relative_eq;

    fn aem() -> (PeaParameters, FinancialParameters) {
        (PeaParameters::aem_el4("PEA-1"), FinancialParameters::aem_el4())
    }

    fn state(z: f64, lambda: f64, p: f64) -> AdmmState {
        let settings = AdmmSettings {
            penalty: p,
            ..AdmmSettings::default()
        };
        let mut s = AdmmState::warm(z, OperatingState::Production, z, OperatingState::Production, &settings);
        s.lambda = lambda;
        s
    }

    #[test]
    fn lagrangian_reduces_to_cost_when_coupled() {
        let (pea, fin) = aem();
        let agent = AgentContext::new(&pea, &fin, PeriodContext::new(0.05, 1.0, 0.1), OperatingState::Production);
        let f60 = agent.objective(OperatingState::Production, 60.0).unwrap();
        let l = lagrangian(OperatingState::Production, 60.0, 60.0, 7.0, 3.0, &agent).unwrap();
        assert_eq!(l, f60);
        let l = lagrangian(OperatingState::Production, 60.0, 50.0, 0.0, 0.0, &agent).unwrap();
        assert_eq!(l, f60);
        let l = lagrangian(OperatingState::Production, 60.0, 50.0, 1.0, 2.0, &agent).unwrap();
        assert_relative_eq!(l, f60 + 10.0 + 100.0, max_relative = 1e-14);
    }

    #[test]
    fn uncoupled_aem_runs_at_full_load() {
        let (pea, fin) = aem();
        let agent = AgentContext::new(&pea, &fin, PeriodContext::new(0.05, 1.0, 0.1), OperatingState::Production);
        let x = x_update(&state(40.0, 0.0, 0.0), &agent).unwrap();
        assert_eq!(x.state, OperatingState::Production);
        assert_eq!(x.op, 100.0);
    }

    #[test]
    fn large_penalty_pins_x_to_z() {
        let (pea, fin) = aem();
        let agent = AgentContext::new(&pea, &fin, PeriodContext::new(0.05, 0.25, 0.1), OperatingState::Production);
        let mut last = f64::INFINITY;
        for p in [1e2, 1e4, 1e6] {
            let x = x_update(&state(42.0, 0.0, p), &agent).unwrap();
            let gap = (x.op - 42.0).abs();
            assert!(gap < last, "gap {gap} at p={p} not below {last}");
            last = gap;
        }
        assert!(last < 1e-4);
    }

    #[test]
    fn empty_feasible_set_is_reported() {
        let (pea, fin) = aem();
        let mut agent = AgentContext::new(&pea, &fin, PeriodContext::new(0.05, 0.25, 0.1), OperatingState::Production);
        agent.production_admissible = false;
        agent.idle_admissible = false;
        assert!(matches!(
            x_update(&state(42.0, 0.0, 10.0), &agent),
            Err(AdmmError::EmptyFeasibleSet { .. })
        ));
    }

    #[test]
    fn z_update_fits_and_clamps() {
        let (pea, fin) = aem();
        let demand = 0.1;
        let agent = AgentContext::new(&pea, &fin, PeriodContext::new(0.05, 0.25, demand), OperatingState::Production);
        let top = pea.curve(100.0);
        assert_eq!(z_update(50.0, demand - top, &agent).op, 100.0);
        assert_eq!(z_update(50.0, demand - 2.0 * top, &agent).op, 100.0);
        let target = pea.curve(37.5);
        let z = z_update(50.0, demand - target, &agent);
        assert!((z.op - 37.5).abs() < 0.01);
        assert!((pea.curve(z.op) - target).abs() < 1e-12);
    }

    #[test]
    fn z_update_idles_on_surplus() {
        let (pea, fin) = aem();
        let agent = AgentContext::new(&pea, &fin, PeriodContext::new(0.05, 0.25, 0.05), OperatingState::Production);
        let z = z_update(50.0, 0.06, &agent);
        assert_eq!(z.state, OperatingState::Idle);
        let mut forced_on = agent;
        forced_on.idle_admissible = false;
        let z = z_update(50.0, 0.06, &forced_on);
        assert_eq!((z.state, z.op), (OperatingState::Production, 8.0));
    }

    #[test]
    fn dual_update_properties() {
        let mut s = state(50.0, 1.5, 10.0);
        s.g_ref = Some(0.1);
        assert_eq!(dual_update(&s, 0.0, 0.3), 1.5);
        let mut prev = 0.0;
        for dev in [0.001, 0.01, 0.05, 0.2] {
            let step = (dual_update(&s, dev, 0.3) - s.lambda).abs();
            assert!(step > prev);
            prev = step;
        }
        // flatter agents move more
        let flat = dual_update(&s, 0.05, 0.01) - s.lambda;
        let steep = dual_update(&s, 0.05, 1.0) - s.lambda;
        assert!(flat > steep);
    }

    #[test]
    fn lambda_increments_shrink_with_deviation() {
        // deviation trace shaped like a period that starts ~6 % off and
        // narrows below 1 % after a few iterations
        let devs = [-0.06, -0.045, -0.03, -0.018, -0.009, -0.006, -0.004, -0.003, -0.002, -0.0015];
        let mut s = state(50.0, 0.0, 10.0);
        s.g_ref = Some(0.05);
        let mut steps = Vec::new();
        for d in devs {
            let next = dual_update(&s, d, 0.05);
            steps.push((next - s.lambda).abs());
            s.set_lambda(next);
        }
        let early = steps[..4].iter().cloned().fold(f64::INFINITY, f64::min);
        let late = steps[5..].iter().cloned().fold(0.0, f64::max);
        assert!(early > late);
    }

    #[test]
    fn convergence_needs_history_and_demand() {
        let mut s = state(50.0, 0.0, 10.0);
        assert!(!converged(&s, 0.0));
        s.set_x(50.0, OperatingState::Production);
        s.set_z(50.0, OperatingState::Production);
        s.set_lambda(0.0);
        assert!(!converged(&s, 0.0), "no completed iteration yet");
        s.k = 1;
        assert!(converged(&s, 0.0));
        assert!(!converged(&s, 0.05));
    }

    #[test]
    fn interior_minimum_of_pem_style_curve() {
        let pea = PeaParameters {
            id: "pem".into(),
            p_el: 1000.0,
            op_min: 10.0,
            op_max: 100.0,
            alpha: -0.4e-4 * 18.0,
            beta: 1.4e-2 * 18.0,
            gamma: 0.0,
            t_h: 1,
            mh2_nom: 18.0,
        };
        let fin = FinancialParameters {
            capex0: 820_000.0,
            ..FinancialParameters::aem_el4()
        };
        let ctx = PeriodContext::new(0.06, 1.0, 10.0);
        let agent = AgentContext::new(&pea, &fin, ctx, OperatingState::Production);
        let x = x_update(&state(50.0, 0.0, 0.0), &agent).unwrap();
        assert!(x.op > pea.op_min + 1.0 && x.op < pea.op_max - 1.0);
        let g = mlcoh_gradient(x.op, &fin, &pea, &ctx).unwrap();
        assert!(g.value.abs() < 1e-4, "gradient {} at {}", g.value, x.op);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&mut []), None);
    }
}
