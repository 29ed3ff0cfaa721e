//! The N-agent system against its mean-field limit over ten steps.

use agentfield::agents::{run_system, FieldMode, SystemRun};
use agentfield::config::RunConfig;
use agentfield::experiments::Experiments;
use agentfield::measures::sup_distance;
use agentfield::measures::net_distance;
use agentfield::meanfield::iterate;

fn main() -> agentfield::Result<()> {
    let cfg = RunConfig::default();
    let ex = Experiments::new(&cfg)?;
    let model = ex.model();
    let (eps, lambda, horizon) = (0.3, 5.0, 10);
    let limit = iterate(model, &ex.initial_state()?, eps, lambda, horizon)?;

    for n in [25, 100, 400, 1600] {
        let run = SystemRun { n_agents: n, horizon, eps, lambda, seed: 7, mode: FieldMode::Grid, snapshots: vec![horizon] };
        let snap = &run_system(model, &cfg.initial_condition()?, &run)?[0];
        let m = net_distance(&snap.positions, &limit[horizon].m, ex.net()?);
        let eta = sup_distance(&snap.field, &limit[horizon].eta)?;
        println!("N = {n:>5}  net(m) {m:.4}  sup(eta) {eta:.4}");
    }
    Ok(())
}
