//! Cost model: annuitized CapEx, fixed O&M, electricity OpEx and the marginal
//! levelized cost of hydrogen (mLCOH) of one module in one scheduling
//! interval, together with its analytic derivative in the operating point.
//!
//! All interval quantities are per scheduling interval: costs in €,
//! production in kg (rate × interval length). The division guard `delta`
//! is a rate and is scaled by the interval length as well.

use serde::{Deserialize, Serialize};

use crate::electrolyzer::{check_feasible, OperatingState, PeaParameters, OP_TOLERANCE};
use crate::error::ModelError;

pub const HOURS_PER_YEAR: f64 = 8760.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinancialParameters {
    /// Initial capital expenditure in €.
    pub capex0: f64,
    /// Yearly O&M cost as a share of `capex0`.
    pub omf: f64,
    /// Utilization time in years.
    pub ut: f64,
    /// Load factor, share of 8760 h/yr at full load.
    pub lf: f64,
    /// Discount rate.
    pub r: f64,
    /// Cost of one start-up in €.
    pub c_su: f64,
    /// Division guard in kg/h.
    pub delta: f64,
}

/// Default division guard, small enough to leave nominal-load costs
/// unchanged at the cent level.
pub const DEFAULT_DELTA: f64 = 1e-5;

impl FinancialParameters {
    /// Published financials of the AEM reference module, with a start-up
    /// cost of 0.12 € per start.
    pub fn aem_el4() -> Self {
        FinancialParameters {
            capex0: 8000.0,
            omf: 0.015,
            ut: 20.0,
            lf: 0.98,
            r: 0.0973,
            c_su: 0.12,
            delta: DEFAULT_DELTA,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fields = [
            ("capex0", self.capex0),
            ("omf", self.omf),
            ("ut", self.ut),
            ("lf", self.lf),
            ("r", self.r),
            ("c_su", self.c_su),
            ("delta", self.delta),
        ];
        for (field, v) in fields {
            if !v.is_finite() {
                return Err(ModelError::invalid(field, format!("must be finite, got {v}")));
            }
        }
        if self.capex0 <= 0.0 {
            return Err(ModelError::invalid("capex0", format!("must be > 0, got {}", self.capex0)));
        }
        if !(self.lf > 0.0 && self.lf <= 1.0) {
            return Err(ModelError::invalid("lf", format!("must be in (0, 1], got {}", self.lf)));
        }
        if self.ut < 1.0 {
            return Err(ModelError::invalid("ut", format!("must be >= 1, got {}", self.ut)));
        }
        if self.r < 0.0 {
            return Err(ModelError::invalid("r", format!("must be >= 0, got {}", self.r)));
        }
        if self.omf < 0.0 {
            return Err(ModelError::invalid("omf", format!("must be >= 0, got {}", self.omf)));
        }
        if self.c_su < 0.0 {
            return Err(ModelError::invalid("c_su", format!("must be >= 0, got {}", self.c_su)));
        }
        if self.delta <= 0.0 {
            return Err(ModelError::invalid("delta", format!("must be > 0, got {}", self.delta)));
        }
        Ok(())
    }
}

/// Per-interval inputs shared by every module.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodContext {
    /// Electricity price in €/kWh.
    pub c_e: f64,
    /// Interval length in hours.
    pub delta_int: f64,
    /// Hydrogen demand in kg/h.
    pub demand: f64,
}

impl PeriodContext {
    pub fn new(c_e: f64, delta_int: f64, demand: f64) -> Self {
        PeriodContext {
            c_e,
            delta_int,
            demand,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.c_e.is_finite() && self.c_e >= 0.0) {
            return Err(ModelError::invalid("c_e", format!("must be >= 0, got {}", self.c_e)));
        }
        if !(self.delta_int.is_finite() && self.delta_int > 0.0) {
            return Err(ModelError::invalid(
                "delta_int",
                format!("must be > 0, got {}", self.delta_int),
            ));
        }
        if !(self.demand.is_finite() && self.demand >= 0.0) {
            return Err(ModelError::invalid(
                "demand",
                format!("must be >= 0, got {}", self.demand),
            ));
        }
        Ok(())
    }
}

/// Per-kg cost components of one interval. `opex_per_kg` already contains
/// the start-up share reported in `startup_per_kg`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub capex_per_kg: f64,
    pub opex_per_kg: f64,
    pub om_per_kg: f64,
    pub mlcoh: f64,
    pub startup_per_kg: f64,
}

/// Constant yearly payment equivalent to `capex0` over `ut` years at rate `r`.
pub fn annualized_capex(fp: &FinancialParameters) -> f64 {
    if fp.r == 0.0 {
        return fp.capex0 / fp.ut;
    }
    // (1+r)^UT - 1 through expm1/ln_1p keeps precision for tiny rates.
    let growth_minus_one = (fp.ut * fp.r.ln_1p()).exp_m1();
    let growth = growth_minus_one + 1.0;
    fp.capex0 * fp.r * growth / growth_minus_one
}

/// Share of the annuity allocated to one interval of `ctx.delta_int` hours.
pub fn capex_per_interval(fp: &FinancialParameters, ctx: &PeriodContext) -> f64 {
    annualized_capex(fp) * ctx.delta_int / (fp.lf * HOURS_PER_YEAR)
}

pub fn om_per_kg(fp: &FinancialParameters, mh2_nom: f64) -> Result<f64, ModelError> {
    if !(mh2_nom > 0.0) {
        return Err(ModelError::invalid(
            "mh2_nom",
            format!("must be > 0, got {mh2_nom}"),
        ));
    }
    Ok(fp.capex0 * fp.omf / (fp.lf * HOURS_PER_YEAR * mh2_nom))
}

/// Electricity cost of running at `op` percent for one interval.
pub fn opex_for_interval(op: f64, p_el: f64, ctx: &PeriodContext, in_operation: bool) -> f64 {
    if !in_operation {
        return 0.0;
    }
    op / 100.0 * p_el * ctx.c_e * ctx.delta_int
}

/// mLCOH of one module for one interval.
///
/// `started` adds the start-up cost to the numerator; it is reported inside
/// `opex_per_kg` and separately in `startup_per_kg`.
pub fn mlcoh(
    op: f64,
    state: OperatingState,
    started: bool,
    fp: &FinancialParameters,
    pea: &PeaParameters,
    ctx: &PeriodContext,
) -> Result<CostBreakdown, ModelError> {
    check_feasible(op, state, pea)?;
    let in_operation = state == OperatingState::Production;
    let kg = if in_operation { pea.curve(op) } else { 0.0 } * ctx.delta_int;
    let denom = kg + fp.delta * ctx.delta_int;

    let capex_per_kg = capex_per_interval(fp, ctx) / denom;
    let startup_per_kg = if started { fp.c_su / denom } else { 0.0 };
    let opex_per_kg = opex_for_interval(op, pea.p_el, ctx, in_operation) / denom + startup_per_kg;
    let om = om_per_kg(fp, pea.mh2_nom)?;
    Ok(CostBreakdown {
        capex_per_kg,
        opex_per_kg,
        om_per_kg: om,
        mlcoh: capex_per_kg + opex_per_kg + om,
        startup_per_kg,
    })
}

/// Money spent by one module in one interval, in €: allocated CapEx,
/// electricity, start-up and O&M on the kilograms actually produced.
pub fn interval_cost_eur(
    op: f64,
    state: OperatingState,
    started: bool,
    fp: &FinancialParameters,
    pea: &PeaParameters,
    ctx: &PeriodContext,
) -> Result<f64, ModelError> {
    check_feasible(op, state, pea)?;
    let in_operation = state == OperatingState::Production;
    let kg = if in_operation { pea.curve(op) } else { 0.0 } * ctx.delta_int;
    let su = if started { fp.c_su } else { 0.0 };
    Ok(capex_per_interval(fp, ctx)
        + opex_for_interval(op, pea.p_el, ctx, in_operation)
        + su
        + om_per_kg(fp, pea.mh2_nom)? * kg)
}

/// Derivative of the production-state mLCOH with respect to the operating
/// point, in €/kg per percent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gradient {
    pub value: f64,
    /// Set when `op` sits on an operating limit; the value is then the
    /// one-sided derivative from inside the range.
    pub one_sided: bool,
}

pub fn mlcoh_gradient(
    op: f64,
    fp: &FinancialParameters,
    pea: &PeaParameters,
    ctx: &PeriodContext,
) -> Result<Gradient, ModelError> {
    check_feasible(op, OperatingState::Production, pea)?;
    let one_sided =
        (op - pea.op_min).abs() <= OP_TOLERANCE || (op - pea.op_max).abs() <= OP_TOLERANCE;

    // f(op) = om + (C + a·op) / (Δ·(q(op) + δ))
    let c = capex_per_interval(fp, ctx);
    let a = pea.p_el * ctx.c_e * ctx.delta_int / 100.0;
    let q = pea.curve(op) + fp.delta;
    let dq = pea.curve_slope(op);
    let value = (a * q - (c + a * op) * dq) / (ctx.delta_int * q * q);
    Ok(Gradient { value, one_sided })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn hourly(c_e: f64) -> PeriodContext {
        PeriodContext::new(c_e, 1.0, 0.0)
    }

    #[test]
    fn annuity_of_reference_financials() {
        // 8000 * 0.0973 * 1.0973^20 / (1.0973^20 - 1), evaluated independently
        let g = 1.0973_f64.powi(20);
        let expected = 8000.0 * 0.0973 * g / (g - 1.0);
        let a = annualized_capex(&FinancialParameters::aem_el4());
        assert_relative_eq!(a, expected, max_relative = 1e-12);
        assert!((a - 922.4).abs() < 0.05);
    }

    #[test]
    fn annuity_zero_rate_is_straight_line() {
        let fp = FinancialParameters {
            r: 0.0,
            ..FinancialParameters::aem_el4()
        };
        assert_eq!(annualized_capex(&fp), 400.0);
    }

    #[test]
    fn annuity_unit_rate_single_year() {
        let fp = FinancialParameters {
            capex0: 1.0,
            r: 1.0,
            ut: 1.0,
            ..FinancialParameters::aem_el4()
        };
        assert_relative_eq!(annualized_capex(&fp), 2.0, max_relative = 1e-15);
    }

    #[test]
    fn capex_allocation_per_interval() {
        let fp = FinancialParameters::aem_el4();
        let one_hour = capex_per_interval(&fp, &hourly(0.05));
        assert!((one_hour - 0.1074).abs() < 5e-5);
        let quarter = capex_per_interval(&fp, &PeriodContext::new(0.05, 0.25, 0.0));
        assert_relative_eq!(quarter, one_hour / 4.0, max_relative = 1e-14);
        assert!((quarter - 0.02686).abs() < 5e-6);

        let whole = FinancialParameters {
            lf: 1.0,
            r: 0.0,
            ut: 1.0,
            ..fp
        };
        let ctx = PeriodContext::new(0.05, 8760.0, 0.0);
        assert_relative_eq!(capex_per_interval(&whole, &ctx), 8000.0, max_relative = 1e-15);
    }

    #[test]
    fn om_matches_reference_table() {
        let fp = FinancialParameters::aem_el4();
        let om = om_per_kg(&fp, 0.04494).unwrap();
        assert!((om - 0.31).abs() < 0.005);
        let free = FinancialParameters { omf: 0.0, ..fp.clone() };
        assert_eq!(om_per_kg(&free, 0.04494).unwrap(), 0.0);
        let unit = FinancialParameters {
            capex0: 8760.0,
            omf: 1.0,
            lf: 1.0,
            ..fp.clone()
        };
        assert_relative_eq!(om_per_kg(&unit, 1.0).unwrap(), 1.0, max_relative = 1e-15);
        assert!(om_per_kg(&fp, 0.0).is_err());
        assert!(om_per_kg(&fp, -1.0).is_err());
    }

    #[test]
    fn opex_gate_and_scaling() {
        let ctx = hourly(0.05);
        assert_relative_eq!(opex_for_interval(100.0, 2.4, &ctx, true), 0.12, max_relative = 1e-14);
        assert_relative_eq!(opex_for_interval(50.0, 2.4, &ctx, true), 0.06, max_relative = 1e-14);
        assert_eq!(opex_for_interval(100.0, 2.4, &ctx, false), 0.0);
    }

    #[test]
    fn nominal_breakdown_reproduces_reference_lcoh() {
        let fp = FinancialParameters::aem_el4();
        let pea = PeaParameters::aem_el4("a");
        let b = mlcoh(100.0, OperatingState::Production, false, &fp, &pea, &hourly(0.05)).unwrap();
        assert!((b.capex_per_kg - 2.39).abs() <= 0.01);
        assert!((b.opex_per_kg - 2.67).abs() <= 0.01);
        assert!((b.om_per_kg - 0.31).abs() <= 0.01);
        assert!((b.mlcoh - 5.37).abs() <= 0.01);
    }

    #[test]
    fn idle_cost_is_large_but_finite() {
        let fp = FinancialParameters::aem_el4();
        let pea = PeaParameters::aem_el4("a");
        let ctx = hourly(0.05);
        let b = mlcoh(0.0, OperatingState::Idle, false, &fp, &pea, &ctx).unwrap();
        let expected = capex_per_interval(&fp, &ctx) / (fp.delta * ctx.delta_int)
            + om_per_kg(&fp, pea.mh2_nom).unwrap();
        assert!(b.mlcoh.is_finite());
        assert_relative_eq!(b.mlcoh, expected, max_relative = 1e-12);
        assert!(b.mlcoh > 1000.0);
    }

    #[test]
    fn startup_adds_its_share() {
        let fp = FinancialParameters::aem_el4();
        let pea = PeaParameters::aem_el4("a");
        let ctx = hourly(0.05);
        let cold = mlcoh(100.0, OperatingState::Production, false, &fp, &pea, &ctx).unwrap();
        let warm = mlcoh(100.0, OperatingState::Production, true, &fp, &pea, &ctx).unwrap();
        let denom = pea.curve(100.0) * ctx.delta_int + fp.delta * ctx.delta_int;
        assert_relative_eq!(warm.mlcoh - cold.mlcoh, 0.12 / denom, max_relative = 1e-9);
        assert_relative_eq!(warm.startup_per_kg, 0.12 / denom, max_relative = 1e-12);
    }

    #[test]
    fn infeasible_op_is_a_domain_error() {
        let fp = FinancialParameters::aem_el4();
        let pea = PeaParameters::aem_el4("a");
        let ctx = hourly(0.05);
        assert!(mlcoh(4.0, OperatingState::Production, false, &fp, &pea, &ctx).is_err());
        assert!(mlcoh_gradient(101.0, &fp, &pea, &ctx).is_err());
    }

    #[test]
    fn gradient_flags_limits() {
        let fp = FinancialParameters::aem_el4();
        let pea = PeaParameters::aem_el4("a");
        let ctx = hourly(0.05);
        assert!(mlcoh_gradient(100.0, &fp, &pea, &ctx).unwrap().one_sided);
        assert!(mlcoh_gradient(8.0, &fp, &pea, &ctx).unwrap().one_sided);
        assert!(!mlcoh_gradient(50.0, &fp, &pea, &ctx).unwrap().one_sided);
    }

    #[test]
    fn aem_gradient_negative_on_interior() {
        let fp = FinancialParameters::aem_el4();
        let pea = PeaParameters::aem_el4("a");
        let ctx = hourly(0.05);
        for i in 0..=920 {
            let op = 8.0 + i as f64 * 0.1;
            let g = mlcoh_gradient(op.min(100.0), &fp, &pea, &ctx).unwrap();
            assert!(g.value < 0.0, "gradient {} at {op}", g.value);
        }
    }

    #[test]
    fn validation_rejects_bad_financials() {
        let ok = FinancialParameters::aem_el4();
        assert!(ok.validate().is_ok());
        for bad in [
            FinancialParameters { capex0: 0.0, ..ok.clone() },
            FinancialParameters { lf: 1.5, ..ok.clone() },
            FinancialParameters { lf: 0.0, ..ok.clone() },
            FinancialParameters { ut: 0.5, ..ok.clone() },
            FinancialParameters { r: -0.1, ..ok.clone() },
            FinancialParameters { delta: 0.0, ..ok.clone() },
            FinancialParameters { c_su: -1.0, ..ok.clone() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }
}
