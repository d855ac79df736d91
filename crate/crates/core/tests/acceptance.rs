//! Acceptance checks, one line per criterion. Exits non-zero if any fails.

use std::panic::{catch_unwind, UnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use peasched_core::oracle::brute_force_dispatch;
use peasched_core::report::write_outputs;
use peasched_core::{
    annualized_capex, bundled, mlcoh, mlcoh_gradient, parse_scenario, run_horizon, scale_fleet,
    FinancialParameters, FleetEntry, OperatingState, PeaParameters, PeriodContext, RuntimeOptions,
    Scenario, SolverSettings,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn lcoh_table() -> Outcome {
    let start = Instant::now();
    let pea = PeaParameters::aem_el4("PEA-1");
    let fin = FinancialParameters::aem_el4();
    let ctx = PeriodContext::new(0.05, 1.0, pea.curve(100.0));
    let b = mlcoh(100.0, OperatingState::Production, false, &fin, &pea, &ctx).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let rows = [
        ("CapEx", b.capex_per_kg, 2.39),
        ("OpEx", b.opex_per_kg, 2.67),
        ("O&M", b.om_per_kg, 0.31),
        ("LCOH", b.mlcoh, 5.37),
    ];
    for (name, got, want) in rows {
        ensure((got - want).abs() <= 0.01, format!("{name} {got:.4} vs {want}"))?;
    }
    ensure(elapsed < Duration::from_secs(1), format!("took {elapsed:?}"))?;
    Ok(format!(
        "CapEx {:.4}, OpEx {:.4}, O&M {:.4}, LCOH {:.4} EUR/kg in {elapsed:?}",
        b.capex_per_kg, b.opex_per_kg, b.om_per_kg, b.mlcoh
    ))
}

fn case_study_horizon() -> Outcome {
    let sc = parse_scenario(bundled::CASE_STUDY).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let r = run_horizon(&sc, RuntimeOptions::default()).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    ensure(r.periods.len() == 12, "expected 12 periods")?;
    for p in &r.periods {
        ensure(p.converged, format!("period {} did not converge", p.period))?;
        ensure(
            p.deviation_rel.abs() < 1e-3,
            format!("period {} deviation {:e}", p.period, p.deviation_rel),
        )?;
    }
    let p10 = &r.periods[9];
    let within_1pct = p10
        .deviations
        .iter()
        .position(|d| d.abs() < 1e-2)
        .ok_or("period 10 never within 1 %")?;
    ensure(within_1pct <= 10, format!("period 10 needed {within_1pct} iterations"))?;
    ensure(elapsed < Duration::from_secs(5), format!("took {elapsed:?}"))?;
    let worst = r.periods.iter().map(|p| p.deviation_rel.abs()).fold(0.0, f64::max);
    Ok(format!(
        "12/12 converged, worst |dev| {worst:.1e}, period 10 within 1 % at iteration {within_1pct}, {elapsed:?}"
    ))
}

fn malfunction() -> Outcome {
    let sc = parse_scenario(bundled::MALFUNCTION).map_err(|e| e.to_string())?;
    let r = run_horizon(&sc, RuntimeOptions::threaded(Duration::from_millis(50))).map_err(|e| e.to_string())?;
    let p10 = &r.periods[9];
    let f = p10.faults.first().ok_or("no fault detected in period 10")?;
    ensure(f.agent == "PEA-2" && f.fault_iteration == 5, format!("unexpected fault {f:?}"))?;
    let spike = p10.deviations[5];
    let recovered = f.recovered_iteration.ok_or("deviation never recovered")?;
    let post = recovered - f.fault_iteration;
    ensure(post <= 10, format!("recovery took {post} iterations"))?;
    let latency = f.latency.ok_or("no latency recorded")?;
    ensure(latency < Duration::from_millis(100), format!("latency {latency:?}"))?;
    ensure(r.all_converged, "a period did not converge")?;
    Ok(format!(
        "deviation {spike:+.3} at fault, below 0.1 % after {post} iterations, wall-clock latency {latency:?} (threaded, 50 ms detection timeout)"
    ))
}

fn per_period_time(sc: &Scenario, repeats: usize) -> Result<(Duration, bool), String> {
    let mut best = Duration::MAX;
    let mut converged = true;
    for _ in 0..repeats {
        let r = run_horizon(sc, RuntimeOptions::default()).map_err(|e| e.to_string())?;
        converged &= r.all_converged;
        let total: Duration = r.periods.iter().map(|p| p.wall_time).sum();
        best = best.min(total / r.periods.len() as u32);
    }
    Ok((best, converged))
}

fn scale_up() -> Outcome {
    let base = parse_scenario(bundled::CASE_STUDY).map_err(|e| e.to_string())?;
    let ten = scale_fleet(&base, 10, true);
    ensure(
        ten.solver == base.solver && ten.delta_int == base.delta_int && ten.prices_eur_per_mwh == base.prices_eur_per_mwh,
        "scaling touched more than the fleet and targets",
    )?;
    let bundled_ten = parse_scenario(bundled::SCALEUP_10).map_err(|e| e.to_string())?;
    let r = run_horizon(&bundled_ten, RuntimeOptions::default()).map_err(|e| e.to_string())?;
    ensure(r.all_converged, "bundled 10-module scenario did not converge everywhere")?;

    let (t3, c3) = per_period_time(&base, 7)?;
    let (t10, c10) = per_period_time(&ten, 7)?;
    ensure(c3 && c10, "a period did not converge")?;
    let ratio = t10.as_secs_f64() / t3.as_secs_f64();
    ensure(ratio <= 5.0, format!("per-period time ratio {ratio:.2}"))?;
    Ok(format!("3 and 10 modules converge in all periods, per-period time {t3:?} -> {t10:?} (x{ratio:.2})"))
}

fn oracle_gap() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let instances = 30;
    let (mut demand_ok, mut gap_ok, mut dominance_ok) = (0, 0, 0);
    let mut worst_ratio: f64 = 0.0;
    let mut worst_undercut: f64 = 0.0;
    for case in 0..instances {
        // modules of equal specific efficiency and capital cost, different size
        let fleet: Vec<FleetEntry> = (1..=2)
            .map(|i| {
                let p_el: f64 = rng.random_range(1.0..5.0);
                let id = format!("PEA-{i}");
                let mut e = FleetEntry::aem_el4(id.clone());
                e.pea = PeaParameters::with_default_curve(id, p_el, 8.0, 100.0, 0.04494 * p_el / 2.4, 1);
                e.fin.capex0 = 8000.0 * p_el / 2.4;
                e
            })
            .collect();
        let lo: f64 = fleet.iter().map(|e| e.pea.production_bounds().0).sum();
        let hi: f64 = fleet.iter().map(|e| e.pea.production_bounds().1).sum();
        let demand = rng.random_range(lo..hi);
        let price = rng.random_range(0.0..150.0);
        let sc = Scenario {
            name: format!("gap-{case}"),
            fleet: fleet.clone(),
            delta_int: 0.25,
            targets: vec![demand],
            prices_eur_per_mwh: vec![price],
            faults: vec![],
            solver: SolverSettings {
                seed: case,
                ..SolverSettings::default()
            },
        };
        let r = run_horizon(&sc, RuntimeOptions::default()).map_err(|e| e.to_string())?;
        let p = &r.periods[0];
        let prev = [OperatingState::Production; 2];
        let o = brute_force_dispatch(&fleet, &prev, &sc.period_context(1), 1.0, 1e-3, true)
            .map_err(|e| e.to_string())?;
        let admm = p.total_cost();
        if p.deviation_rel.abs() < 1e-3 {
            demand_ok += 1;
        }
        let ratio = admm / o.total_cost;
        worst_ratio = worst_ratio.max(ratio);
        if ratio <= 1.05 {
            gap_ok += 1;
        }
        if admm >= o.total_cost - 1e-9 {
            dominance_ok += 1;
        } else {
            worst_undercut = worst_undercut.max(o.total_cost - admm);
        }
    }
    let summary = format!(
        "{instances} instances: demand met {demand_ok}, cost within 5 % {gap_ok} (worst ratio {worst_ratio:.4}), \
         oracle dominance {dominance_ok}"
    );
    ensure(demand_ok == instances && gap_ok == instances, summary.clone())?;
    ensure(
        dominance_ok == instances,
        format!("{summary}; ADMM undercuts the 1 % grid optimum by up to {worst_undercut:.2e} EUR"),
    )?;
    Ok(summary)
}

fn gradient_suite() -> Outcome {
    let pea = PeaParameters::aem_el4("PEA-1");
    let fin = FinancialParameters::aem_el4();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let op = rng.random_range(9.0..99.0);
        let ctx = PeriodContext::new(rng.random_range(0.0..0.3), 0.25, 0.1);
        let f = |x: f64| mlcoh(x, OperatingState::Production, false, &fin, &pea, &ctx).map(|b| b.mlcoh);
        let h = 1e-4;
        let num = (f(op + h).map_err(|e| e.to_string())? - f(op - h).map_err(|e| e.to_string())?) / (2.0 * h);
        let g = mlcoh_gradient(op, &fin, &pea, &ctx).map_err(|e| e.to_string())?.value;
        worst = worst.max(((g - num) / g).abs());
    }
    ensure(worst < 1e-6, format!("worst relative error {worst:e}"))?;
    Ok(format!("20 interior points, worst relative error {worst:.1e}"))
}

fn annuity_limit() -> Outcome {
    let base = FinancialParameters::aem_el4();
    let tiny = FinancialParameters { r: 1e-9, ..base };
    let flat = base.capex0 / base.ut;
    let rel = (annualized_capex(&tiny) - flat).abs() / flat;
    ensure(rel < 1e-6, format!("r=1e-9 relative error {rel:e}"))?;
    let one = FinancialParameters { r: 1.0, ut: 1.0, ..base };
    let a = annualized_capex(&one);
    ensure(a == 2.0 * base.capex0, format!("r=100 %, UT=1 gives {a}"))?;
    Ok(format!("r=1e-9 within {rel:.1e} of CapEx0/UT, r=100 % UT=1 gives exactly {a}"))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    for (name, text) in bundled::ALL {
        let sc = parse_scenario(text).map_err(|e| e.to_string())?;
        let mut bytes = Vec::new();
        for run in 0..2 {
            let out = dir.path().join(format!("{name}-{run}"));
            let r = run_horizon(&sc, RuntimeOptions::default()).map_err(|e| e.to_string())?;
            write_outputs(&r, &out).map_err(|e| e.to_string())?;
            bytes.push(std::fs::read(out.join("schedule.csv")).map_err(|e| e.to_string())?);
        }
        ensure(bytes[0] == bytes[1], format!("{name}: schedule.csv differs between runs"))?;
    }
    Ok("case_study, malfunction, scaleup_10: schedule.csv byte-identical across two runs".into())
}

fn warm_start() -> Outcome {
    let mut checked = 0;
    for text in [bundled::CASE_STUDY, bundled::MALFUNCTION, bundled::SCALEUP_10] {
        let sc = parse_scenario(text).map_err(|e| e.to_string())?;
        let r = run_horizon(&sc, RuntimeOptions::default()).map_err(|e| e.to_string())?;
        for w in r.periods.windows(2) {
            for (prev, init) in w[0].agents.iter().zip(&w[1].initial) {
                let Some(init) = init else {
                    ensure(!prev.active, format!("live agent {} without initial values", prev.agent))?;
                    continue;
                };
                ensure(
                    init.x == prev.op,
                    format!("period {} {}: x0 {} vs {}", w[1].period, prev.agent, init.x, prev.op),
                )?;
                ensure(init.lambda == 0.0 && init.k == 0, "lambda or k not reset")?;
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} (period, agent) warm starts checked"))
}

fn run(name: &str, check: impl FnOnce() -> Outcome + UnwindSafe) -> bool {
    let outcome = catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
    match outcome {
        Ok(detail) => {
            println!("PASS  {name}: {detail}");
            true
        }
        Err(detail) => {
            println!("FAIL  {name}: {detail}");
            false
        }
    }
}

fn main() -> ExitCode {
    let results = [
        run("1 LCOH table", lcoh_table),
        run("2 case-study horizon", case_study_horizon),
        run("3 malfunction resilience", malfunction),
        run("4 scale-up", scale_up),
        run("5 oracle gap", oracle_gap),
        run("6 gradient suite", gradient_suite),
        run("7 annuity limit", annuity_limit),
        run("8 determinism", determinism),
        run("9 warm start", warm_start),
    ];
    let passed = results.iter().filter(|r| **r).count();
    println!("{passed}/{} acceptance criteria passed", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
