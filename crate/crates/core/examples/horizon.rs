use peasched_core::{bundled, parse_scenario, run_horizon, RuntimeOptions};

fn main() {
    let name = std::env::args().nth(1).unwrap_or_else(|| "case_study".into());
    let text = bundled::ALL.iter().find(|(n, _)| *n == name).expect("bundled scenario").1;
    let scenario = parse_scenario(text).unwrap();
    let result = run_horizon(&scenario, RuntimeOptions::default()).unwrap();
    for p in &result.periods {
        let ops: Vec<String> = p.agents.iter().map(|a| format!("{}:{:.2}", a.state, a.op)).collect();
        println!(
            "t={:2} D={:.4} Q={:.5} dev={:+.2e} it={:3} conv={} {:?} {:?}",
            p.period, p.demand, p.total_qty(), p.deviation_rel, p.iterations_used, p.converged, ops, p.faults
        );
    }
    println!("cost {:.5} kg {:.5} mean {:.4}", result.total_cost_eur, result.total_kg, result.mean_mlcoh);
}
