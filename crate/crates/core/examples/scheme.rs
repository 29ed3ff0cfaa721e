//! The Gaussian-mixture particle scheme: mixture growth, and the field
//! against the closed form implied by the same agent history.

use agentfield::config::RunConfig;
use agentfield::measures::EmpiricalMeasure;
use agentfield::measures::{tv_distance, Support};
use agentfield::scheme::{exact_field_oracle, resampling_tv_bound, run_scheme, SchemeRun};

fn main() -> agentfield::Result<()> {
    let cfg = RunConfig::default();
    let model = cfg.model()?;
    let init = cfg.initial_condition()?;
    let p = cfg.kernels;
    let (n, k, eps) = (200, 3, 0.3);

    let run = SchemeRun { n_agents: n, horizon: k, eps, lambda: 5.0, seed: 2, snapshots: vec![] };
    let snaps = run_scheme(&model, &init, &run)?;
    for s in &snaps {
        println!("step {}: {} mixture components", s.step, s.field.len());
    }

    let history: Vec<EmpiricalMeasure> = snaps[..k].iter().map(|s| s.positions.clone()).collect();
    let oracle = exact_field_oracle(&history, &init.eta0, eps, p.p_sigma, p.pprime_sigma, usize::MAX)?;
    let grid = model.field_grid();
    let (a, _) = snaps[k].field.rasterize(grid, Support::Field)?;
    let (b, _) = oracle.rasterize(grid, Support::Field)?;
    let slack: f64 = (1..=k)
        .map(|j| (1.0 - eps).powi((k - j + 1) as i32) * resampling_tv_bound(&snaps[j - 1].field, n, p.p_sigma, grid))
        .sum();
    println!("tv(scheme, closed form) = {:.4}; expected resampling error at most {slack:.4}", tv_distance(&a, &b)?);
    Ok(())
}
