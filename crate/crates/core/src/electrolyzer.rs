//! Model of a single electrolysis module (PEA): quadratic production curve,
//! the two operating states, start-up detection and the holding-time state
//! machine that gates Idle → Production transitions.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// Tolerance used when deciding whether an operating point sits on a limit.
pub const OP_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OperatingState {
    Idle,
    Production,
}

impl OperatingState {
    pub fn as_str(self) -> &'static str {
        match self {
            OperatingState::Idle => "idle",
            OperatingState::Production => "production",
        }
    }
}

impl fmt::Display for OperatingState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Technical description of one electrolysis module.
///
/// Operating points are percentages of nominal electrical capacity. The
/// production curve is `alpha·op² + beta·op + gamma` in kg/h while producing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeaParameters {
    pub id: String,
    /// Nominal electrical capacity in kW.
    pub p_el: f64,
    pub op_min: f64,
    pub op_max: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Holding time in periods between a start request and production.
    pub t_h: u32,
    /// Hydrogen output at nominal load in kg/h.
    pub mh2_nom: f64,
}

impl PeaParameters {
    /// Builds a module whose production curve uses the default calibration
    /// `alpha = -0.15·mh2_nom/1e4`, `beta = 1.15·mh2_nom/1e2`, `gamma = 0`.
    ///
    /// The curve passes through `mh2_nom` at 100 % and is mildly concave.
    pub fn with_default_curve(
        id: impl Into<String>,
        p_el: f64,
        op_min: f64,
        op_max: f64,
        mh2_nom: f64,
        t_h: u32,
    ) -> Self {
        let (alpha, beta, gamma) = default_curve(mh2_nom);
        PeaParameters {
            id: id.into(),
            p_el,
            op_min,
            op_max,
            alpha,
            beta,
            gamma,
            t_h,
            mh2_nom,
        }
    }

    /// The 2.4 kW AEM module of the reference laboratory plant.
    pub fn aem_el4(id: impl Into<String>) -> Self {
        Self::with_default_curve(id, 2.4, 8.0, 100.0, AEM_EL4_MH2_NOM, 1)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let finite = [
            ("p_el", self.p_el),
            ("op_min", self.op_min),
            ("op_max", self.op_max),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("mh2_nom", self.mh2_nom),
        ];
        for (field, v) in finite {
            if !v.is_finite() {
                return Err(ModelError::invalid(field, format!("must be finite, got {v}")));
            }
        }
        if self.id.trim().is_empty() {
            return Err(ModelError::invalid("id", "must not be empty"));
        }
        if self.p_el <= 0.0 {
            return Err(ModelError::invalid("p_el", format!("must be > 0, got {}", self.p_el)));
        }
        if !(0.0 <= self.op_min && self.op_min < self.op_max && self.op_max <= 100.0) {
            return Err(ModelError::invalid(
                "op_min/op_max",
                format!(
                    "need 0 <= op_min < op_max <= 100, got [{}, {}]",
                    self.op_min, self.op_max
                ),
            ));
        }
        if self.mh2_nom <= 0.0 {
            return Err(ModelError::invalid(
                "mh2_nom",
                format!("must be > 0, got {}", self.mh2_nom),
            ));
        }
        let top = self.curve(self.op_max);
        if top <= 0.0 {
            return Err(ModelError::invalid(
                "alpha/beta/gamma",
                format!("production at op_max must be > 0, got {top}"),
            ));
        }
        let (lo, _) = self.curve_extremes();
        if lo < 0.0 {
            return Err(ModelError::invalid(
                "alpha/beta/gamma",
                format!("production curve drops below zero ({lo}) inside the operating range"),
            ));
        }
        Ok(())
    }

    /// Raw quadratic, no state gate and no range check.
    #[inline]
    pub fn curve(&self, op: f64) -> f64 {
        (self.alpha * op + self.beta) * op + self.gamma
    }

    #[inline]
    pub fn curve_slope(&self, op: f64) -> f64 {
        2.0 * self.alpha * op + self.beta
    }

    /// Minimum and maximum of the production curve over `[op_min, op_max]`.
    pub fn curve_extremes(&self) -> (f64, f64) {
        let mut lo = self.curve(self.op_min).min(self.curve(self.op_max));
        let mut hi = self.curve(self.op_min).max(self.curve(self.op_max));
        if self.alpha != 0.0 {
            let vertex = -self.beta / (2.0 * self.alpha);
            if vertex > self.op_min && vertex < self.op_max {
                let v = self.curve(vertex);
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        (lo, hi)
    }

    /// Lowest and highest hydrogen output while producing, in kg/h.
    pub fn production_bounds(&self) -> (f64, f64) {
        self.curve_extremes()
    }

    /// Operating point in `[op_min, op_max]` whose output is closest to
    /// `qty`. Ties between several exact solutions go to the one nearest
    /// `hint`.
    pub fn operating_point_for(&self, qty: f64, hint: f64) -> f64 {
        let (lo, hi) = (self.op_min, self.op_max);
        let vertex = if self.alpha != 0.0 {
            Some(-self.beta / (2.0 * self.alpha)).filter(|v| *v > lo && *v < hi)
        } else {
            None
        };
        let roots = solve_quadratic(self.alpha, self.beta, self.gamma - qty).map(|r| {
            r.filter(|op| *op >= lo - OP_TOLERANCE && *op <= hi + OP_TOLERANCE)
                .map(|op| {
                    // snap roots that only miss a limit by rounding
                    if (op - lo).abs() <= OP_TOLERANCE {
                        lo
                    } else if (op - hi).abs() <= OP_TOLERANCE {
                        hi
                    } else {
                        op
                    }
                })
        });
        let candidates = [Some(lo), Some(hi), vertex, roots[0], roots[1]];
        let candidates = candidates.iter().flatten().copied();
        let mut best = lo;
        let mut best_err = (self.curve(best) - qty).abs();
        for op in candidates.skip(1) {
            let err = (self.curve(op) - qty).abs();
            let closer = (op - hint).abs() < (best - hint).abs();
            if err < best_err - 1e-15 || ((err - best_err).abs() <= 1e-15 && closer) {
                best = op;
                best_err = err;
            }
        }
        best
    }
}

/// Nominal output of the AEM reference module in kg/h, consistent with
/// 0.12 €/h of electricity at 0.05 €/kWh costing 2.67 €/kg.
pub const AEM_EL4_MH2_NOM: f64 = 0.04494;

/// Default production-curve calibration for a module with nominal output
/// `mh2_nom`: returns `(alpha, beta, gamma)`.
pub fn default_curve(mh2_nom: f64) -> (f64, f64, f64) {
    (-0.15 * mh2_nom / 1e4, 1.15 * mh2_nom / 1e2, 0.0)
}

/// Real roots of `a·x² + b·x + c = 0`.
fn solve_quadratic(a: f64, b: f64, c: f64) -> [Option<f64>; 2] {
    if a == 0.0 {
        if b == 0.0 {
            return [None, None];
        }
        return [Some(-c / b), None];
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return [None, None];
    }
    let sq = disc.sqrt();
    // Numerically stable pairing, avoids cancellation in -b ± sqrt(disc).
    let q = -0.5 * (b + b.signum() * sq);
    if q == 0.0 {
        return [Some(0.0), None];
    }
    [Some(q / a), Some(c / q)]
}

/// Hydrogen production rate in kg/h.
pub fn production_rate(
    op: f64,
    state: OperatingState,
    pea: &PeaParameters,
) -> Result<f64, ModelError> {
    check_feasible(op, state, pea)?;
    Ok(match state {
        OperatingState::Idle => 0.0,
        OperatingState::Production => pea.curve(op),
    })
}

/// Operating-point interval admissible in `state`.
pub fn feasible_op_range(state: OperatingState, pea: &PeaParameters) -> (f64, f64) {
    match state {
        OperatingState::Idle => (0.0, 0.0),
        OperatingState::Production => (pea.op_min, pea.op_max),
    }
}

pub(crate) fn check_feasible(
    op: f64,
    state: OperatingState,
    pea: &PeaParameters,
) -> Result<(), ModelError> {
    let (lo, hi) = feasible_op_range(state, pea);
    if !op.is_finite() || op < lo - OP_TOLERANCE || op > hi + OP_TOLERANCE {
        return Err(ModelError::InfeasibleOperatingPoint {
            op,
            lo,
            hi,
            state: state.as_str(),
        });
    }
    Ok(())
}

/// 1 when the module goes from Idle in the previous period to Production now.
pub fn startup_indicator(state_t: OperatingState, state_prev: OperatingState) -> u8 {
    u8::from(state_t == OperatingState::Production && state_prev == OperatingState::Idle)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeaStatus {
    pub state: OperatingState,
    pub periods_since_start_request: u32,
    /// Cleared permanently after a malfunction.
    pub active: bool,
}

impl PeaStatus {
    pub fn new(state: OperatingState) -> Self {
        PeaStatus {
            state,
            periods_since_start_request: 0,
            active: true,
        }
    }

    /// Whether the module may produce in the current period.
    pub fn production_admissible(&self, pea: &PeaParameters) -> bool {
        self.active
            && (self.state == OperatingState::Production
                || self.periods_since_start_request >= pea.t_h)
    }
}

/// Moves the status one step given the state requested for the module.
///
/// A start request from Idle is honoured once `t_h` periods have elapsed
/// since the request was first made; with `t_h = 0` it is honoured at once.
/// Shutdown is immediate and free.
pub fn advance_status(
    status: PeaStatus,
    requested: OperatingState,
    pea: &PeaParameters,
) -> PeaStatus {
    if !status.active {
        return PeaStatus {
            state: OperatingState::Idle,
            periods_since_start_request: 0,
            active: false,
        };
    }
    match (status.state, requested) {
        (OperatingState::Production, OperatingState::Production) => status,
        (_, OperatingState::Idle) => PeaStatus {
            state: OperatingState::Idle,
            periods_since_start_request: 0,
            active: true,
        },
        (OperatingState::Idle, OperatingState::Production) => {
            if status.periods_since_start_request >= pea.t_h {
                PeaStatus {
                    state: OperatingState::Production,
                    periods_since_start_request: 0,
                    active: true,
                }
            } else {
                PeaStatus {
                    periods_since_start_request: status.periods_since_start_request + 1,
                    ..status
                }
            }
        }
    }
}
