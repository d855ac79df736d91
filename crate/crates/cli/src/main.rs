use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use peasched_core::oracle::{brute_force_dispatch, DEFAULT_GRID_STEP, MAX_AGENTS};
use peasched_core::{
    load_scenario, mlcoh, run_horizon, scale_fleet, write_outputs, FleetEntry, OperatingState,
    PeriodContext, RuntimeOptions, Scenario, ScheduleResult,
};

/// Decentralized mLCOH scheduling of modular electrolysis plants.
#[derive(Debug, Parser)]
#[command(name = "peasched", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario and write schedule.csv, trace.csv and summary.json.
    Run {
        scenario: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[command(flatten)]
        exec: ExecArgs,
    },
    /// Print the cost breakdown of one module at a fixed operating point.
    Lcoh {
        /// Operating point in percent of nominal load.
        #[arg(long, default_value_t = 100.0)]
        op: f64,
        /// Electricity price in EUR/kWh.
        #[arg(long, default_value_t = 0.05)]
        price: f64,
        /// Take the module from this scenario instead of the AEM reference.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Fleet id within --scenario; defaults to the first module.
        #[arg(long, requires = "scenario")]
        agent: Option<String>,
        /// Interval length in hours.
        #[arg(long, default_value_t = 1.0)]
        delta_int: f64,
    },
    /// Run the horizon for several fleet sizes and print timings.
    Bench {
        scenario: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "3,10")]
        sizes: Vec<usize>,
        /// Scale demand with the fleet capacity.
        #[arg(long)]
        rescale_targets: bool,
        #[command(flatten)]
        exec: ExecArgs,
    },
    /// Check a scenario file, optionally comparing each period with the
    /// exhaustive dispatcher.
    Validate {
        scenario: PathBuf,
        #[arg(long)]
        against_oracle: bool,
        /// Grid step of the exhaustive dispatcher, percent.
        #[arg(long, default_value_t = DEFAULT_GRID_STEP)]
        grid_step: f64,
        #[command(flatten)]
        exec: ExecArgs,
    },
}

#[derive(Debug, Args)]
struct ExecArgs {
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Run agents on threads with this silence timeout in milliseconds
    /// instead of the deterministic lockstep simulation.
    #[arg(long)]
    timeout_ms: Option<u64>,
}

impl ExecArgs {
    fn options(&self) -> RuntimeOptions {
        match self.timeout_ms {
            Some(ms) => RuntimeOptions::threaded(Duration::from_millis(ms)),
            None => RuntimeOptions::default(),
        }
    }

    fn load(&self, path: &Path) -> Result<Scenario> {
        let mut sc = load_scenario(path).with_context(|| format!("loading {}", path.display()))?;
        if let Some(seed) = self.seed {
            sc.solver.seed = seed;
        }
        Ok(sc)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::Run { scenario, out, exec } => cmd_run(&scenario, &out, &exec),
        Command::Lcoh {
            op,
            price,
            scenario,
            agent,
            delta_int,
        } => cmd_lcoh(op, price, scenario.as_deref(), agent.as_deref(), delta_int),
        Command::Bench {
            scenario,
            sizes,
            rescale_targets,
            exec,
        } => cmd_bench(&scenario, &sizes, rescale_targets, &exec),
        Command::Validate {
            scenario,
            against_oracle,
            grid_step,
            exec,
        } => cmd_validate(&scenario, against_oracle, grid_step, &exec),
    }
}

fn exit_for(result: &ScheduleResult) -> ExitCode {
    if result.all_converged {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    }
}

fn cmd_run(path: &Path, out: &Path, exec: &ExecArgs) -> Result<ExitCode> {
    let sc = exec.load(path)?;
    let result = run_horizon(&sc, exec.options())?;
    write_outputs(&result, out)?;
    for p in result.periods.iter().filter(|p| p.unmet_demand()) {
        log::warn!(
            "period {}: demand not met, deviation {:+.3e} after {} iterations",
            p.period,
            p.deviation_rel,
            p.iterations_used
        );
    }
    println!(
        "{}: {} periods, {} converged, {:.6} kg, {:.6} EUR, mean mLCOH {:.4} EUR/kg -> {}",
        sc.name,
        result.periods.len(),
        result.periods.iter().filter(|p| p.converged).count(),
        result.total_kg,
        result.total_cost_eur,
        result.mean_mlcoh,
        out.display()
    );
    Ok(exit_for(&result))
}

fn cmd_lcoh(op: f64, price: f64, scenario: Option<&Path>, agent: Option<&str>, delta_int: f64) -> Result<ExitCode> {
    let entry = match scenario {
        None => FleetEntry::aem_el4("AEM"),
        Some(path) => {
            let sc = load_scenario(path).with_context(|| format!("loading {}", path.display()))?;
            match agent {
                None => sc.fleet[0].clone(),
                Some(id) => match sc.agent_index(id) {
                    Some(i) => sc.fleet[i].clone(),
                    None => bail!("no module `{id}` in {}", path.display()),
                },
            }
        }
    };
    let ctx = PeriodContext::new(price, delta_int, 0.0);
    ctx.validate()?;
    let b = mlcoh(op, OperatingState::Production, false, &entry.fin, &entry.pea, &ctx)?;
    println!("{} at {op} % and {price} EUR/kWh", entry.pea.id);
    println!("CapEx  {:8.4} EUR/kg", b.capex_per_kg);
    println!("OpEx   {:8.4} EUR/kg", b.opex_per_kg);
    println!("O&M    {:8.4} EUR/kg", b.om_per_kg);
    println!("LCOH   {:8.4} EUR/kg", b.mlcoh);
    Ok(ExitCode::SUCCESS)
}

fn cmd_bench(path: &Path, sizes: &[usize], rescale: bool, exec: &ExecArgs) -> Result<ExitCode> {
    let base = exec.load(path)?;
    if sizes.is_empty() || sizes.contains(&0) {
        bail!("--sizes needs positive fleet sizes");
    }
    println!(
        "{:>5} {:>10} {:>12} {:>14} {:>12}",
        "size", "converged", "iter/period", "ms/period", "recovery ms"
    );
    let mut all = true;
    for &n in sizes {
        let sc = scale_fleet(&base, n, rescale);
        let r = run_horizon(&sc, exec.options())?;
        let periods = r.periods.len().max(1) as f64;
        let wall: Duration = r.periods.iter().map(|p| p.wall_time).sum();
        let recovery = r
            .max_rescheduling_latency
            .map(|d| format!("{:.3}", d.as_secs_f64() * 1e3))
            .unwrap_or_else(|| "-".into());
        println!(
            "{:>5} {:>10} {:>12.2} {:>14.3} {:>12}",
            n,
            format!("{}/{}", r.periods.iter().filter(|p| p.converged).count(), r.periods.len()),
            r.total_iterations as f64 / periods,
            wall.as_secs_f64() * 1e3 / periods,
            recovery
        );
        all &= r.all_converged;
    }
    Ok(if all { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn cmd_validate(path: &Path, against_oracle: bool, grid_step: f64, exec: &ExecArgs) -> Result<ExitCode> {
    let sc = exec.load(path)?;
    println!(
        "{}: {} modules, {} periods of {} h, digest {}",
        sc.name,
        sc.fleet.len(),
        sc.periods(),
        sc.delta_int,
        sc.digest()
    );
    if !against_oracle {
        return Ok(ExitCode::SUCCESS);
    }
    if sc.fleet.len() > MAX_AGENTS {
        bail!("oracle comparison needs at most {MAX_AGENTS} modules, scenario has {}", sc.fleet.len());
    }
    let result = run_horizon(&sc, exec.options())?;
    println!(
        "{:>6} {:>12} {:>12} {:>8} {:>10}",
        "period", "admm EUR", "oracle EUR", "ratio", "oracle ok"
    );
    let mut prev: Vec<OperatingState> = sc.fleet.iter().map(|e| e.initial_state).collect();
    let mut ok = result.all_converged;
    for p in &result.periods {
        let live: Vec<usize> = (0..sc.fleet.len()).filter(|i| p.agents[*i].active).collect();
        let fleet: Vec<FleetEntry> = live.iter().map(|i| sc.fleet[*i].clone()).collect();
        let states: Vec<OperatingState> = live.iter().map(|i| prev[*i]).collect();
        let ctx = sc.period_context(p.period);
        let o = brute_force_dispatch(&fleet, &states, &ctx, grid_step, sc.solver.admm.eps_dem, sc.solver.allow_idle)?;
        let dead_cost: f64 = p.agents.iter().filter(|a| !a.active).map(|a| a.cost_eur).sum();
        let oracle_cost = o.total_cost + dead_cost;
        let ratio = p.total_cost() / oracle_cost;
        ok &= ratio <= 1.05;
        println!(
            "{:>6} {:>12.6} {:>12.6} {:>8.4} {:>10}",
            p.period,
            p.total_cost(),
            oracle_cost,
            ratio,
            o.meets_demand
        );
        prev = p.agents.iter().map(|a| a.state).collect();
    }
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(2) })
}
