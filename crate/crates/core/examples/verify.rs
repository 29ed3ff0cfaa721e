//! Runs a few numerical checks at reduced size and writes the report.

use agentfield::config::{RunConfig, VerifyConfig};
use agentfield::experiments::{emit_report, Experiments};

fn main() -> agentfield::Result<()> {
    let checks = ["dobrushin-q", "fixed-point", "phi-contraction", "finite-horizon-agents"].map(String::from).to_vec();
    let cfg = RunConfig { verify: VerifyConfig { checks, ..VerifyConfig::quick() }, ..RunConfig::default() };

    let report = Experiments::new(&cfg)?.run_selected()?;
    for c in &report.checks {
        println!("{} {:<24} {}", if c.passed() { "PASS" } else { "FAIL" }, c.name, c.criterion);
    }
    let dir = std::env::temp_dir().join("agentfield-verify-example");
    std::fs::create_dir_all(&dir)?;
    emit_report(&report, &dir)?;
    println!("report in {}", dir.display());
    Ok(())
}
