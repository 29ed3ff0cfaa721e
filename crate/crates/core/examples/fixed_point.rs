//! Contraction constants and the fixed point of the mean-field map.

use agentfield::config::RunConfig;
use agentfield::experiments::Experiments;
use agentfield::meanfield::{compute_constants, fixed_point, lyapunov_excess};

fn main() -> agentfield::Result<()> {
    let cfg = RunConfig::default();
    let (eps, lambda) = (cfg.dynamics.eps, cfg.dynamics.lambda);
    let ex = Experiments::new(&cfg)?;
    let feas = compute_constants(eps, lambda, ex.model().bank());
    println!("{}", serde_json::to_string_pretty(&feas)?);
    let c = feas.constants().copied();

    let (state, trace) = fixed_point(ex.model(), &ex.initial_state()?, eps, lambda, c.map(|c| c.kappa), 1e-10, 10_000)?;
    for row in trace.iter().step_by(5) {
        println!("k = {:>3}  alpha = {:.3e}", row.k, row.alpha);
    }
    println!("converged after {} steps; agent-law mass {:.12}", trace.len(), state.m.mass());
    if let Some(c) = c {
        let alphas: Vec<f64> = trace.iter().map(|r| r.alpha).collect();
        println!("largest Lyapunov excess {:.2e} (theta = {:.4})", lyapunov_excess(&alphas, &c), c.theta);
    }
    Ok(())
}
