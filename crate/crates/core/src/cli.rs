//! Command-line front end: argument parsing, run directories, and dispatch.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::agents::{write_fields_csv, write_positions_csv, FieldMode, SystemRun};
use crate::config::{RunConfig, CHECKS};
use crate::error::{Error, Result};
use crate::experiments::{emit_report, Experiments};
use crate::meanfield::{compute_constants, fixed_point, iterate, write_trace_csv};
use crate::scheme::{run_scheme, SchemeRun};

/// Default root for run directories when `--out` is not given.
pub const OUT_ENV: &str = "AGENTFIELD_OUT";
const DEFAULT_ROOT: &str = "runs";

#[derive(Debug, Parser)]
#[command(name = "agentfield", version, about = "Agents interacting through a potential field: simulation and checks")]
pub struct Cli {
    /// TOML run configuration (defaults are used when omitted).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides the configured master seed.
    #[arg(long, global = true, value_name = "INT")]
    pub seed: Option<u64>,
    /// Run directory (default: $AGENTFIELD_OUT/<command>-<config hash>).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Worker threads (0 = all cores). Results do not depend on it.
    #[arg(long, global = true, value_name = "INT")]
    pub parallel: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the N-agent system with its exact field.
    SimulateAgents {
        /// Carry the field as an exact Gaussian mixture with this component budget.
        #[arg(long, value_name = "COMPONENTS")]
        mixture_budget: Option<usize>,
    },
    /// Simulate the Gaussian-mixture particle scheme.
    SimulateScheme,
    /// Iterate the mean-field map for `dynamics.horizon` steps.
    MeanfieldIterate,
    /// Iterate the mean-field map to its fixed point.
    FixedPoint,
    /// Run numerical checks (`all` or any of the check names).
    Verify {
        #[arg(required = true, value_name = "CHECK")]
        checks: Vec<String>,
    },
    /// Print the kernel and contraction constants.
    Constants,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::SimulateAgents { .. } => "simulate-agents",
            Command::SimulateScheme => "simulate-scheme",
            Command::MeanfieldIterate => "meanfield-iterate",
            Command::FixedPoint => "fixed-point",
            Command::Verify { .. } => "verify",
            Command::Constants => "constants",
        }
    }
}

/// Column documentation for every CSV the tool writes.
pub const SCHEMA: &[(&str, &[(&str, &str)])] = &[
    ("positions.csv", &[("step", "time index k"), ("index", "agent number"), ("x<a>", "coordinate a of the agent")]),
    ("fields.csv", &[("step", "time index k"), ("x<a>", "coordinate a of the cell center"), ("density", "field density at the cell")]),
    ("m.csv", &[("step", "time index"), ("x<a>", "coordinate a of the cell center"), ("density", "agent-law density")]),
    ("eta.csv", &[("step", "time index"), ("x<a>", "coordinate a of the cell center"), ("density", "field density")]),
    ("trace.csv", &[("k", "iteration"), ("alpha", "||Phi^(k+1)(s) - Phi^k(s)|| (TV + TV)"), ("theta_ratio", "(alpha_k + kappa alpha_(k-1)) / (alpha_(k-1) + kappa alpha_(k-2)); empty for k < 2 or unknown kappa")]),
    ("mc-bound-summary.csv", &[("n", "sample size"), ("mean", "mean net error"), ("std_err", "standard error"), ("bound", "2/sqrt(n) + 2 delta")]),
    ("mc-bound-errors.csv", &[("n", "sample size"), ("rep", "replicate"), ("error", "max over the net of |<S^n(mu) - mu, g>|")]),
    ("dobrushin-q-ratios.csv", &[("eps_q", "uniform weight of Q"), ("pair", "pair number"), ("ratio", "tv(mu Q, mu' Q) / tv(mu, mu')"), ("bound", "1 - eps_q")]),
    ("dobrushin-m-eta-ratios.csv", &[("lambda", "interaction strength"), ("field", "field number"), ("osc", "oscillation of the field over E"), ("pair", "pair number"), ("ratio", "tv ratio"), ("bound", "1 - eps_Q exp(-lambda osc)")]),
    ("fixed-point-traces.csv", &[("init", "initialization"), ("k", "iteration"), ("alpha", "successive distance"), ("theta_ratio", "as in trace.csv")]),
    ("phi-contraction-distances.csv", &[("pair", "pair number"), ("n", "iterations"), ("distance", "||Phi^n(s) - Phi^n(s')||"), ("bound", "4 theta^(n-1)"), ("merge_bound", "theta^(n-1) (2 + kappa + 2 lambda (M_m0 + M_QQ0)) ||s - s'||")]),
    ("finite-horizon-agents-errors.csv", &[("n", "agents"), ("seed", "replicate"), ("net_m", "net distance of agents to the mean-field law"), ("sup_eta", "sup distance of fields"), ("error", "net_m + sup_eta")]),
    ("finite-horizon-scheme-errors.csv", &[("n", "agents"), ("seed", "replicate"), ("net_m", "net distance"), ("sup_eta", "sup distance of the rasterized mixture field"), ("error", "net_m + sup_eta")]),
    ("finite-horizon-scheme-oracle.csv", &[("seed", "replicate"), ("tv", "tv between scheme field and closed-form field of the same history"), ("slack", "resampling bound")]),
    ("uniform-in-time-errors.csv", &[("system", "0 agents, 1 scheme"), ("seed", "replicate"), ("horizon", "step"), ("net_m", "net distance"), ("sup_eta", "sup distance"), ("error", "net_m + sup_eta")]),
    ("commuting-limits-errors.csv", &[("n_agents", "agents"), ("seed", "replicate"), ("horizon", "step"), ("net_m", "net distance to m_inf"), ("tv_eta", "tv distance to eta_inf"), ("error", "net_m + tv_eta")]),
    ("propagation-of-chaos-gaps.csv", &[("n", "agents"), ("p", "number of agents in the product"), ("gap", "|E prod phi(X_i) - prod m_k(phi)|"), ("std_err", "standard error")]),
    ("tightness-outside.csv", &[("k", "step"), ("meanfield", "mean-field mass outside K"), ("scheme_mean", "scheme mass outside K, mean over seeds"), ("scheme_std_err", "its standard error"), ("scheme_max_seed", "largest single-seed value"), ("pure_diffusion", "eta0 P^k mass outside K"), ("bound", "analytic bound")]),
];

/// Parses the process arguments and runs; returns the exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

pub fn load(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(p) = cli.parallel {
        cfg.parallel = p;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = Some(o.clone());
    }
    if let Command::Verify { checks } = &cli.command {
        for c in checks {
            if c != "all" && !CHECKS.contains(&c.as_str()) {
                return Err(Error::UnknownCheck(c.clone()));
            }
        }
        cfg.verify.checks = checks.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// `--out`, else `$AGENTFIELD_OUT/<command>-<hash prefix>`, else `runs/...`.
pub fn run_dir(cfg: &RunConfig, command: &str) -> PathBuf {
    if let Some(d) = &cfg.out_dir {
        return d.clone();
    }
    let root = std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from(DEFAULT_ROOT), PathBuf::from);
    root.join(format!("{command}-{}", &cfg.hash()[..12]))
}

#[derive(Serialize)]
struct Metadata<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    config_hash: String,
    warnings: Vec<String>,
    constants: serde_json::Value,
    derived: serde_json::Value,
    files: Vec<String>,
    results: serde_json::Value,
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_schema(dir: &Path, files: &[String]) -> Result<()> {
    let entries: serde_json::Map<String, serde_json::Value> = SCHEMA
        .iter()
        .filter(|(f, _)| files.iter().any(|x| x == f))
        .map(|(f, cols)| {
            let cols: serde_json::Map<String, serde_json::Value> =
                cols.iter().map(|(c, d)| (c.to_string(), json!(d))).collect();
            (f.to_string(), serde_json::Value::Object(cols))
        })
        .collect();
    let mut text = serde_json::to_string_pretty(&entries)?;
    text.push('\n');
    std::fs::write(dir.join("schema.json"), text)?;
    Ok(())
}

pub fn run(cli: Cli) -> Result<i32> {
    let cfg = load(&cli)?;
    if cfg.parallel > 0 {
        // A second initialization (e.g. in tests) is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.parallel).build_global();
    }
    for w in cfg.warnings() {
        eprintln!("warning: {w}");
    }
    let command = cli.command.name();
    let dir = run_dir(&cfg, command);
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml())?;

    let model = cfg.model()?;
    let init = cfg.initial_condition()?;
    let dy = &cfg.dynamics;
    let feas = compute_constants(dy.eps, dy.lambda, model.bank());
    let mut files: Vec<String> = Vec::new();
    let mut results = json!({});
    let mut code = 0;

    match &cli.command {
        Command::SimulateAgents { mixture_budget } => {
            let run = SystemRun {
                n_agents: dy.agents,
                horizon: dy.horizon,
                eps: dy.eps,
                lambda: dy.lambda,
                seed: cfg.seed,
                mode: mixture_budget.map_or(FieldMode::Grid, |budget| FieldMode::Mixture { budget }),
                snapshots: dy.snapshots.clone(),
            };
            let snaps = crate::agents::run_system(&model, &init, &run)?;
            write_positions_csv(&snaps, create(&dir, "positions.csv")?)?;
            let fields: Vec<(usize, &_)> = snaps.iter().map(|s| (s.step, &s.field)).collect();
            write_fields_csv(&fields, create(&dir, "fields.csv")?)?;
            files.extend(["positions.csv".into(), "fields.csv".into()]);
            results = json!({ "steps": snaps.iter().map(|s| s.step).collect::<Vec<_>>(),
                              "leak": snaps.iter().map(|s| s.leak).collect::<Vec<_>>() });
            println!("wrote {} snapshots of {} agents", snaps.len(), dy.agents);
        }
        Command::SimulateScheme => {
            let run = SchemeRun {
                n_agents: dy.agents,
                horizon: dy.horizon,
                eps: dy.eps,
                lambda: dy.lambda,
                seed: cfg.seed,
                snapshots: dy.snapshots.clone(),
            };
            let snaps = run_scheme(&model, &init, &run)?;
            let agent_snaps: Vec<crate::agents::AgentSnapshot> = snaps
                .iter()
                .map(|s| {
                    Ok(crate::agents::AgentSnapshot {
                        step: s.step,
                        positions: s.positions.clone(),
                        field: s.field_grid(&model)?,
                        leak: 0.0,
                    })
                })
                .collect::<Result<_>>()?;
            write_positions_csv(&agent_snaps, create(&dir, "positions.csv")?)?;
            let fields: Vec<(usize, &_)> = agent_snaps.iter().map(|s| (s.step, &s.field)).collect();
            write_fields_csv(&fields, create(&dir, "fields.csv")?)?;
            let mixtures: Vec<serde_json::Value> =
                snaps.iter().map(|s| json!({ "step": s.step, "field": s.field })).collect();
            let mut text = serde_json::to_string_pretty(&mixtures)?;
            text.push('\n');
            std::fs::write(dir.join("mixtures.json"), text)?;
            files.extend(["positions.csv".into(), "fields.csv".into(), "mixtures.json".into()]);
            results = json!({ "steps": snaps.iter().map(|s| s.step).collect::<Vec<_>>(),
                              "components": snaps.iter().map(|s| s.field.len()).collect::<Vec<_>>() });
            println!("wrote {} scheme snapshots of {} agents", snaps.len(), dy.agents);
        }
        Command::MeanfieldIterate => {
            let ex = Experiments::new(&cfg)?;
            let states = iterate(&model, &ex.initial_state()?, dy.eps, dy.lambda, dy.horizon)?;
            let keep = |k: usize| dy.snapshots.is_empty() || dy.snapshots.contains(&k);
            let ms: Vec<(usize, &_)> = states.iter().filter(|s| keep(s.step)).map(|s| (s.step, &s.m)).collect();
            let etas: Vec<(usize, &_)> = states.iter().filter(|s| keep(s.step)).map(|s| (s.step, &s.eta)).collect();
            write_fields_csv(&ms, create(&dir, "m.csv")?)?;
            write_fields_csv(&etas, create(&dir, "eta.csv")?)?;
            files.extend(["m.csv".into(), "eta.csv".into()]);
            results = json!({ "leak": states.iter().map(|s| s.leak).collect::<Vec<_>>() });
            println!("iterated the mean-field map {} steps", dy.horizon);
        }
        Command::FixedPoint => {
            let ex = Experiments::new(&cfg)?;
            let kappa = feas.constants().map(|c| c.kappa);
            let fp = &cfg.fixed_point;
            let (state, trace) = fixed_point(&model, &ex.initial_state()?, dy.eps, dy.lambda, kappa, fp.tol, fp.max_iter)?;
            write_trace_csv(&trace, create(&dir, "trace.csv")?)?;
            write_fields_csv(&[(state.step, &state.m)], create(&dir, "m.csv")?)?;
            write_fields_csv(&[(state.step, &state.eta)], create(&dir, "eta.csv")?)?;
            files.extend(["trace.csv".into(), "m.csv".into(), "eta.csv".into()]);
            let last = trace.last().map_or(f64::NAN, |r| r.alpha);
            results = json!({ "iterations": trace.len(), "final_alpha": last });
            println!("converged in {} iterations (last step {last:e})", trace.len());
        }
        Command::Verify { .. } => {
            let report = Experiments::new(&cfg)?.run_selected()?;
            emit_report(&report, &dir)?;
            files.push("report.json".into());
            for c in &report.checks {
                let status = if c.passed() { "PASS" } else { "FAIL" };
                println!("{status} {}", c.name);
                for n in &c.notes {
                    println!("    {n}");
                }
                files.extend(c.files.iter().cloned());
            }
            results = json!({ "passed": report.passed, "checks": report.checks.len() });
            code = i32::from(!report.passed);
        }
        Command::Constants => {
            let text = serde_json::to_string_pretty(&json!({ "contraction": feas, "kernels": model.bank() }))?;
            println!("{text}");
            std::fs::write(dir.join("constants.json"), format!("{text}\n"))?;
            files.push("constants.json".into());
        }
    }

    write_schema(&dir, &files)?;
    let meta = Metadata {
        command,
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.seed,
        config_hash: cfg.hash(),
        warnings: cfg.warnings(),
        constants: serde_json::to_value(feas)?,
        derived: serde_json::to_value(model.bank().derived)?,
        files,
        results,
    };
    let mut text = serde_json::to_string_pretty(&meta)?;
    text.push('\n');
    std::fs::write(dir.join("metadata.json"), text)?;
    eprintln!("outputs in {}", dir.display());
    Ok(code)
}
