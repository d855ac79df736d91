//! Scenario definition and its TOML file format.
//!
//! Prices are written in €/MWh in files, as market data is usually quoted,
//! and converted to €/kWh only when a [`PeriodContext`] is built.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::admm::AdmmSettings;
use crate::economics::{FinancialParameters, PeriodContext, DEFAULT_DELTA};
use crate::electrolyzer::{default_curve, OperatingState, PeaParameters};
use crate::error::ModelError;
use crate::runtime::{FaultEvent, FaultKind};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error("fleet is empty")]
    EmptyFleet,
    #[error("series length mismatch: {targets} targets vs {prices} prices")]
    LengthMismatch { targets: usize, prices: usize },
    #[error("fault {index} targets unknown agent `{agent}`")]
    UnknownFaultAgent { index: usize, agent: String },
}

impl ScenarioError {
    fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ScenarioError::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }

    fn from_model(prefix: &str, err: ModelError) -> Self {
        match err {
            ModelError::InvalidParameter { field, reason } => {
                Self::invalid(format!("{prefix}.{field}"), reason)
            }
            other => Self::invalid(prefix.to_string(), other.to_string()),
        }
    }
}

/// One module of the fleet with its economics.
#[derive(Debug, Clone, PartialEq)]
pub struct FleetEntry {
    pub pea: PeaParameters,
    pub fin: FinancialParameters,
    /// State at the start of the horizon.
    pub initial_state: OperatingState,
}

impl FleetEntry {
    pub fn aem_el4(id: impl Into<String>) -> Self {
        FleetEntry {
            pea: PeaParameters::aem_el4(id),
            fin: FinancialParameters::aem_el4(),
            initial_state: OperatingState::Production,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub admm: AdmmSettings,
    pub seed: u64,
    /// Whether modules may be switched off to follow low demand.
    pub allow_idle: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            admm: AdmmSettings::default(),
            seed: 42,
            allow_idle: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub fleet: Vec<FleetEntry>,
    /// Scheduling interval in hours.
    pub delta_int: f64,
    /// Hydrogen demand per period in kg/h.
    pub targets: Vec<f64>,
    /// Electricity price per period in €/MWh.
    pub prices_eur_per_mwh: Vec<f64>,
    pub faults: Vec<FaultEvent>,
    pub solver: SolverSettings,
}

impl Scenario {
    pub fn periods(&self) -> usize {
        self.targets.len()
    }

    /// Cost context of period `t` (1-based).
    pub fn period_context(&self, t: usize) -> PeriodContext {
        PeriodContext::new(
            self.prices_eur_per_mwh[t - 1] / 1000.0,
            self.delta_int,
            self.targets[t - 1],
        )
    }

    pub fn agent_index(&self, id: &str) -> Option<usize> {
        self.fleet.iter().position(|e| e.pea.id == id)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.fleet.is_empty() {
            return Err(ScenarioError::EmptyFleet);
        }
        for (i, entry) in self.fleet.iter().enumerate() {
            entry
                .pea
                .validate()
                .map_err(|e| ScenarioError::from_model(&format!("fleet[{i}]"), e))?;
            entry
                .fin
                .validate()
                .map_err(|e| ScenarioError::from_model(&format!("fleet[{i}].financial"), e))?;
            if self.fleet[..i].iter().any(|o| o.pea.id == entry.pea.id) {
                return Err(ScenarioError::invalid(
                    format!("fleet[{i}].id"),
                    format!("duplicate id `{}`", entry.pea.id),
                ));
            }
        }
        if !(self.delta_int.is_finite() && self.delta_int > 0.0) {
            return Err(ScenarioError::invalid(
                "delta_int_h",
                format!("must be > 0, got {}", self.delta_int),
            ));
        }
        if self.targets.len() != self.prices_eur_per_mwh.len() {
            return Err(ScenarioError::LengthMismatch {
                targets: self.targets.len(),
                prices: self.prices_eur_per_mwh.len(),
            });
        }
        for (t, d) in self.targets.iter().enumerate() {
            if !(d.is_finite() && *d >= 0.0) {
                return Err(ScenarioError::invalid(
                    format!("targets_kg_per_h[{t}]"),
                    format!("must be >= 0, got {d}"),
                ));
            }
        }
        for (t, c) in self.prices_eur_per_mwh.iter().enumerate() {
            if !(c.is_finite() && *c >= 0.0) {
                return Err(ScenarioError::invalid(
                    format!("prices_eur_per_mwh[{t}]"),
                    format!("must be >= 0, got {c}"),
                ));
            }
        }
        let s = &self.solver.admm;
        if !(s.penalty.is_finite() && s.penalty > 0.0) {
            return Err(ScenarioError::invalid("solver.penalty", format!("must be > 0, got {}", s.penalty)));
        }
        if !(s.eps.is_finite() && s.eps > 0.0) {
            return Err(ScenarioError::invalid("solver.eps", format!("must be > 0, got {}", s.eps)));
        }
        if !(s.eps_dem.is_finite() && s.eps_dem > 0.0) {
            return Err(ScenarioError::invalid("solver.eps_dem", format!("must be > 0, got {}", s.eps_dem)));
        }
        if s.max_iterations == 0 {
            return Err(ScenarioError::invalid("solver.max_iterations", "must be >= 1"));
        }
        for (i, fault) in self.faults.iter().enumerate() {
            if self.agent_index(&fault.agent).is_none() {
                return Err(ScenarioError::UnknownFaultAgent {
                    index: i,
                    agent: fault.agent.clone(),
                });
            }
            if fault.period == 0 || fault.period > self.periods() {
                return Err(ScenarioError::invalid(
                    format!("faults[{i}].period"),
                    format!("must be within 1..={}, got {}", self.periods(), fault.period),
                ));
            }
            if fault.iteration >= s.max_iterations {
                return Err(ScenarioError::invalid(
                    format!("faults[{i}].iteration"),
                    format!("must be below the iteration cap {}, got {}", s.max_iterations, fault.iteration),
                ));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical serialization.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&ScenarioFile::from(self)).expect("scenario serializes to TOML")
    }
}

/// Reads, parses and validates a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_scenario(&text)
}

pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let file: ScenarioFile = toml::from_str(text)?;
    let scenario = file.into_scenario()?;
    scenario.validate()?;
    Ok(scenario)
}

/// Demand series drawn uniformly between the fleet's aggregate minimum and
/// maximum output. Pure function of its arguments.
pub fn generate_targets(fleet: &[FleetEntry], periods: usize, seed: u64) -> Vec<f64> {
    let (lo, hi) = fleet.iter().fold((0.0, 0.0), |(lo, hi), e| {
        let (a, b) = e.pea.production_bounds();
        (lo + a, hi + b)
    });
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..periods).map(|_| rng.random_range(lo..=hi)).collect()
}

/// Replaces the fleet by `n` copies of its first entry with fresh ids.
///
/// With `rescale_targets` the demand series is scaled by the ratio of the
/// new to the old aggregate capacity. Faults aimed at ids that no longer
/// exist are dropped.
pub fn scale_fleet(scenario: &Scenario, n: usize, rescale_targets: bool) -> Scenario {
    assert!(n >= 1, "fleet size must be at least 1");
    let template = scenario.fleet[0].clone();
    let fleet: Vec<FleetEntry> = (1..=n)
        .map(|i| {
            let mut e = template.clone();
            e.pea.id = format!("PEA-{i}");
            e
        })
        .collect();
    let capacity = |f: &[FleetEntry]| f.iter().map(|e| e.pea.production_bounds().1).sum::<f64>();
    let ratio = capacity(&fleet) / capacity(&scenario.fleet);
    let targets = if rescale_targets {
        scenario.targets.iter().map(|d| d * ratio).collect()
    } else {
        scenario.targets.clone()
    };
    let faults = scenario
        .faults
        .iter()
        .filter(|f| fleet.iter().any(|e| e.pea.id == f.agent))
        .cloned()
        .collect();
    Scenario {
        name: format!("{}-x{n}", scenario.name),
        fleet,
        targets,
        faults,
        ..scenario.clone()
    }
}

// ---------------------------------------------------------------------------
// File layout

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    #[serde(default)]
    name: Option<String>,
    delta_int_h: f64,
    #[serde(default)]
    solver: SolverFile,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    financial: BTreeMap<String, FinancialFile>,
    fleet: Vec<FleetFile>,
    #[serde(default)]
    targets_kg_per_h: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    generate_targets: Option<GenerateFile>,
    prices_eur_per_mwh: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    faults: Vec<FaultFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GenerateFile {
    seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SolverFile {
    #[serde(default = "defaults::penalty")]
    penalty: f64,
    #[serde(default = "defaults::eps")]
    eps: f64,
    #[serde(default = "defaults::eps_dem")]
    eps_dem: f64,
    #[serde(default = "defaults::max_iterations")]
    max_iterations: u32,
    #[serde(default = "defaults::seed")]
    seed: u64,
    #[serde(default = "defaults::allow_idle")]
    allow_idle: bool,
}

impl Default for SolverFile {
    fn default() -> Self {
        SolverFile::from(&SolverSettings::default())
    }
}

mod defaults {
    use super::*;
    pub fn penalty() -> f64 {
        AdmmSettings::default().penalty
    }
    pub fn eps() -> f64 {
        AdmmSettings::default().eps
    }
    pub fn eps_dem() -> f64 {
        AdmmSettings::default().eps_dem
    }
    pub fn max_iterations() -> u32 {
        AdmmSettings::default().max_iterations
    }
    pub fn seed() -> u64 {
        SolverSettings::default().seed
    }
    pub fn allow_idle() -> bool {
        true
    }
    pub fn delta() -> f64 {
        DEFAULT_DELTA
    }
    pub fn holding_time() -> u32 {
        1
    }
    pub fn initial_state() -> OperatingState {
        OperatingState::Production
    }
}

impl From<&SolverSettings> for SolverFile {
    fn from(s: &SolverSettings) -> Self {
        SolverFile {
            penalty: s.admm.penalty,
            eps: s.admm.eps,
            eps_dem: s.admm.eps_dem,
            max_iterations: s.admm.max_iterations,
            seed: s.seed,
            allow_idle: s.allow_idle,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FinancialFile {
    capex0_eur: f64,
    om_factor: f64,
    utilization_years: f64,
    load_factor: f64,
    discount_rate: f64,
    startup_cost_eur: f64,
    #[serde(default = "defaults::delta")]
    delta_kg_per_h: f64,
}

impl From<&FinancialFile> for FinancialParameters {
    fn from(f: &FinancialFile) -> Self {
        FinancialParameters {
            capex0: f.capex0_eur,
            omf: f.om_factor,
            ut: f.utilization_years,
            lf: f.load_factor,
            r: f.discount_rate,
            c_su: f.startup_cost_eur,
            delta: f.delta_kg_per_h,
        }
    }
}

impl From<&FinancialParameters> for FinancialFile {
    fn from(f: &FinancialParameters) -> Self {
        FinancialFile {
            capex0_eur: f.capex0,
            om_factor: f.omf,
            utilization_years: f.ut,
            load_factor: f.lf,
            discount_rate: f.r,
            startup_cost_eur: f.c_su,
            delta_kg_per_h: f.delta,
        }
    }
}

/// A fleet entry's financials: either the name of a `[financial.<name>]`
/// table or an inline table.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum FinancialRef {
    Named(String),
    Inline(FinancialFile),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FleetFile {
    id: String,
    p_el_kw: f64,
    op_min: f64,
    op_max: f64,
    mh2_nom_kg_per_h: f64,
    #[serde(default = "defaults::holding_time")]
    holding_time: u32,
    #[serde(default)]
    alpha: Option<f64>,
    #[serde(default)]
    beta: Option<f64>,
    #[serde(default)]
    gamma: Option<f64>,
    #[serde(default = "defaults::initial_state")]
    initial_state: OperatingState,
    financial: FinancialRef,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FaultFile {
    agent: String,
    period: usize,
    iteration: u32,
    #[serde(default)]
    kind: FaultKind,
}

impl ScenarioFile {
    fn into_scenario(self) -> Result<Scenario, ScenarioError> {
        let mut fleet = Vec::with_capacity(self.fleet.len());
        for (i, f) in self.fleet.iter().enumerate() {
            let fin = match &f.financial {
                FinancialRef::Inline(file) => FinancialParameters::from(file),
                FinancialRef::Named(name) => self
                    .financial
                    .get(name)
                    .map(FinancialParameters::from)
                    .ok_or_else(|| {
                        ScenarioError::invalid(
                            format!("fleet[{i}].financial"),
                            format!("no [financial.{name}] table"),
                        )
                    })?,
            };
            let (a0, b0, g0) = default_curve(f.mh2_nom_kg_per_h);
            let explicit = [f.alpha, f.beta, f.gamma].iter().filter(|c| c.is_some()).count();
            if explicit != 0 && explicit != 3 {
                return Err(ScenarioError::invalid(
                    format!("fleet[{i}].alpha/beta/gamma"),
                    "give all three curve coefficients or none",
                ));
            }
            fleet.push(FleetEntry {
                pea: PeaParameters {
                    id: f.id.clone(),
                    p_el: f.p_el_kw,
                    op_min: f.op_min,
                    op_max: f.op_max,
                    alpha: f.alpha.unwrap_or(a0),
                    beta: f.beta.unwrap_or(b0),
                    gamma: f.gamma.unwrap_or(g0),
                    t_h: f.holding_time,
                    mh2_nom: f.mh2_nom_kg_per_h,
                },
                fin,
                initial_state: f.initial_state,
            });
        }
        if fleet.is_empty() {
            return Err(ScenarioError::EmptyFleet);
        }

        let targets = match (self.targets_kg_per_h, &self.generate_targets) {
            (Some(t), None) => t,
            (None, Some(g)) => generate_targets(&fleet, self.prices_eur_per_mwh.len(), g.seed),
            (Some(_), Some(_)) => {
                return Err(ScenarioError::invalid(
                    "targets_kg_per_h",
                    "give either targets_kg_per_h or generate_targets, not both",
                ))
            }
            (None, None) => {
                return Err(ScenarioError::invalid(
                    "targets_kg_per_h",
                    "missing (or use [generate_targets])",
                ))
            }
        };

        let s = self.solver;
        Ok(Scenario {
            name: self.name.unwrap_or_else(|| "scenario".to_string()),
            fleet,
            delta_int: self.delta_int_h,
            targets,
            prices_eur_per_mwh: self.prices_eur_per_mwh,
            faults: self
                .faults
                .into_iter()
                .map(|f| FaultEvent {
                    agent: f.agent,
                    period: f.period,
                    iteration: f.iteration,
                    kind: f.kind,
                })
                .collect(),
            solver: SolverSettings {
                admm: AdmmSettings {
                    penalty: s.penalty,
                    eps: s.eps,
                    eps_dem: s.eps_dem,
                    max_iterations: s.max_iterations,
                },
                seed: s.seed,
                allow_idle: s.allow_idle,
            },
        })
    }
}

impl From<&Scenario> for ScenarioFile {
    fn from(s: &Scenario) -> Self {
        ScenarioFile {
            name: Some(s.name.clone()),
            delta_int_h: s.delta_int,
            solver: SolverFile::from(&s.solver),
            financial: BTreeMap::new(),
            fleet: s
                .fleet
                .iter()
                .map(|e| FleetFile {
                    id: e.pea.id.clone(),
                    p_el_kw: e.pea.p_el,
                    op_min: e.pea.op_min,
                    op_max: e.pea.op_max,
                    mh2_nom_kg_per_h: e.pea.mh2_nom,
                    holding_time: e.pea.t_h,
                    alpha: Some(e.pea.alpha),
                    beta: Some(e.pea.beta),
                    gamma: Some(e.pea.gamma),
                    initial_state: e.initial_state,
                    financial: FinancialRef::Inline(FinancialFile::from(&e.fin)),
                })
                .collect(),
            targets_kg_per_h: Some(s.targets.clone()),
            generate_targets: None,
            prices_eur_per_mwh: s.prices_eur_per_mwh.clone(),
            faults: s
                .faults
                .iter()
                .map(|f| FaultFile {
                    agent: f.agent.clone(),
                    period: f.period,
                    iteration: f.iteration,
                    kind: f.kind,
                })
                .collect(),
        }
    }
}
