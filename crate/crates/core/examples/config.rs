//! Loading, validating and hashing a run configuration.

use agentfield::config::RunConfig;

const TOML: &str = r#"
seed = 42

[dynamics]
eps = 0.2
lambda = 0.5
agents = 1000

[kernels]
q_sigma = 0.15
"#;

fn main() -> agentfield::Result<()> {
    let cfg = RunConfig::from_toml(TOML)?;
    println!("hash {}", cfg.hash());
    for w in cfg.warnings() {
        println!("warning: {w}");
    }
    println!("{}", serde_json::to_string_pretty(&cfg.constants()?)?);

    // loading validates: every violation is reported with its field path
    if let Err(e) = RunConfig::from_toml("[dynamics]\neps = 1.5\nagents = 0\n") {
        println!("{e}");
    }
    Ok(())
}
