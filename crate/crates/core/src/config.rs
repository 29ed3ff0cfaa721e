//! Run configuration: a TOML file with nested sections, defaults for every
//! field, and validation that reports all violations at once.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agents::{InitialCondition, InitialMeasure};
use crate::error::{Error, Result};
use crate::geometry::{BoxDomain, Discretization};
use crate::kernels::{derive_constants, KernelParams};
use crate::meanfield::{compute_constants, Feasibility, Model, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::measures::{Component, GaussianMixture};

/// Names accepted by `verify`, in report order.
pub const CHECKS: [&str; 11] = [
    "mc-bound",
    "dobrushin-q",
    "dobrushin-m-eta",
    "fixed-point",
    "phi-contraction",
    "finite-horizon-agents",
    "finite-horizon-scheme",
    "uniform-in-time",
    "commuting-limits",
    "propagation-of-chaos",
    "tightness",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; 0 uses every core. Never affects results.
    #[serde(skip_serializing)]
    pub parallel: usize,
    /// Output directory; overrides the environment default.
    #[serde(skip_serializing)]
    pub out_dir: Option<PathBuf>,
    pub domain: DomainConfig,
    pub kernels: KernelParams,
    pub dynamics: DynamicsConfig,
    pub initial: InitialConfig,
    pub fixed_point: FixedPointConfig,
    pub verify: VerifyConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            parallel: 0,
            out_dir: None,
            domain: DomainConfig::default(),
            kernels: KernelParams::default(),
            dynamics: DynamicsConfig::default(),
            initial: InitialConfig::default(),
            fixed_point: FixedPointConfig::default(),
            verify: VerifyConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DomainConfig {
    pub dim: usize,
    /// Corners of `E`; default the unit cube.
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
    /// Field padding around `E`; default `8 * max(p_sigma, pprime_sigma)`.
    pub margin: Option<f64>,
    /// Cells per axis over `E`; default 256 in 1-d, 64 otherwise.
    pub cells: Option<usize>,
}

impl Default for DomainConfig {
    fn default() -> Self {
        Self { dim: 1, lower: None, upper: None, margin: None, cells: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicsConfig {
    pub eps: f64,
    pub lambda: f64,
    pub agents: usize,
    pub horizon: usize,
    /// Steps written by the simulate commands; empty writes every step.
    pub snapshots: Vec<usize>,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self { eps: 0.3, lambda: 0.02, agents: 400, horizon: 10, snapshots: vec![] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialConfig {
    pub m0: InitialMeasure,
    /// Components of the initial field; default one Gaussian of sigma 0.3 at the center of `E`.
    pub eta0: Vec<Component>,
}

impl Default for InitialConfig {
    fn default() -> Self {
        Self { m0: InitialMeasure::Uniform, eta0: vec![] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixedPointConfig {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        Self { tol: DEFAULT_TOL, max_iter: DEFAULT_MAX_ITER }
    }
}

/// Sizes of the verification experiments. Defaults are the full-scale runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub checks: Vec<String>,
    /// Test-function net used for empirical measures: bound, Lipschitz constant, mesh.
    pub net_a: f64,
    pub net_b: f64,
    pub net_delta: f64,
    /// Interaction strength of the finite-horizon experiments (no smallness needed there).
    pub strong_lambda: f64,

    pub mc_sizes: Vec<usize>,
    pub mc_reps: usize,

    pub dobrushin_eps_q: Vec<f64>,
    pub dobrushin_pairs: usize,
    pub m_eta_fields: usize,
    pub m_eta_pairs: usize,
    pub m_eta_lambdas: Vec<f64>,

    pub fixed_point_inits: usize,
    pub fixed_point_tol: f64,
    pub contraction_pairs: usize,
    pub contraction_steps: Vec<usize>,

    pub finite_sizes: Vec<usize>,
    pub finite_seeds: usize,
    pub agents_horizon: usize,
    pub scheme_horizon: usize,
    pub oracle_agents: usize,
    pub oracle_horizon: usize,
    pub oracle_seeds: usize,

    pub uniform_agents: usize,
    pub uniform_horizons: Vec<usize>,
    pub uniform_seeds: usize,

    pub commuting_horizons: Vec<usize>,
    pub commuting_sizes: Vec<usize>,
    pub commuting_seeds: usize,

    pub chaos_sizes: Vec<usize>,
    pub chaos_seeds: usize,
    pub chaos_horizon: usize,

    pub tightness_delta: f64,
    pub tightness_steps: usize,
    pub tightness_agents: usize,
    pub tightness_seeds: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            checks: vec!["all".into()],
            net_a: 1.0,
            net_b: 1.0,
            net_delta: 0.2,
            strong_lambda: 5.0,
            mc_sizes: vec![25, 100, 400],
            mc_reps: 200,
            dobrushin_eps_q: vec![0.1, 0.3, 0.7],
            dobrushin_pairs: 100,
            m_eta_fields: 5,
            m_eta_pairs: 50,
            m_eta_lambdas: vec![0.5, 2.0, 10.0],
            fixed_point_inits: 5,
            fixed_point_tol: 1e-9,
            contraction_pairs: 10,
            contraction_steps: vec![2, 5, 10],
            finite_sizes: vec![25, 100, 400],
            finite_seeds: 50,
            agents_horizon: 10,
            scheme_horizon: 5,
            oracle_agents: 200,
            oracle_horizon: 3,
            oracle_seeds: 20,
            uniform_agents: 400,
            uniform_horizons: vec![10, 50, 200],
            uniform_seeds: 20,
            commuting_horizons: vec![0, 2, 5, 10, 40],
            commuting_sizes: vec![25, 100, 400],
            commuting_seeds: 20,
            chaos_sizes: vec![50, 200, 800],
            chaos_seeds: 200,
            chaos_horizon: 5,
            tightness_delta: 1e-3,
            tightness_steps: 200,
            tightness_agents: 400,
            tightness_seeds: 20,
        }
    }
}

impl VerifyConfig {
    /// Small sizes for smoke runs; same code paths, weaker statistics.
    pub fn quick() -> Self {
        Self {
            mc_reps: 40,
            dobrushin_pairs: 10,
            m_eta_fields: 2,
            m_eta_pairs: 5,
            fixed_point_inits: 2,
            contraction_pairs: 2,
            finite_seeds: 6,
            oracle_seeds: 4,
            uniform_horizons: vec![5, 10, 20],
            uniform_seeds: 4,
            uniform_agents: 100,
            commuting_horizons: vec![0, 2, 10],
            commuting_seeds: 4,
            chaos_sizes: vec![20, 80],
            chaos_seeds: 20,
            tightness_steps: 30,
            tightness_agents: 50,
            tightness_seeds: 4,
            ..Self::default()
        }
    }

    /// Selected checks in report order (`all` expands to every check).
    pub fn selected(&self) -> Result<Vec<&'static str>> {
        let mut out = Vec::new();
        for name in &self.checks {
            if name == "all" {
                return Ok(CHECKS.to_vec());
            }
            match CHECKS.iter().find(|c| **c == name) {
                Some(c) => out.push(*c),
                None => return Err(Error::UnknownCheck(name.clone())),
            }
        }
        Ok(CHECKS.iter().copied().filter(|c| out.contains(c)).collect())
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// The resolved configuration as TOML (run-independent fields only).
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON form, excluding `parallel` and `out_dir`.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn cells(&self) -> usize {
        self.domain.cells.unwrap_or(if self.domain.dim == 1 { 256 } else { 64 })
    }

    pub fn margin(&self) -> f64 {
        self.domain.margin.unwrap_or(8.0 * self.kernels.max_field_sigma())
    }

    pub fn box_domain(&self) -> Result<BoxDomain> {
        let d = self.domain.dim;
        let lower = self.domain.lower.clone().unwrap_or_else(|| vec![0.0; d]);
        let upper = self.domain.upper.clone().unwrap_or_else(|| vec![1.0; d]);
        BoxDomain::new(lower, upper, self.margin())
    }

    pub fn model(&self) -> Result<Model> {
        let dom = self.box_domain()?;
        let bank = derive_constants(self.kernels, &dom)?;
        Ok(Model::new(Discretization::new(dom, self.cells())?, bank))
    }

    pub fn initial_condition(&self) -> Result<InitialCondition> {
        let eta0 = if self.initial.eta0.is_empty() {
            GaussianMixture::single(self.box_domain()?.center(), 0.3)?
        } else {
            GaussianMixture::from_unnormalized(self.initial.eta0.clone())?
        };
        Ok(InitialCondition { m0: self.initial.m0.clone(), eta0 })
    }

    pub fn constants(&self) -> Result<Feasibility> {
        let model = self.model()?;
        Ok(compute_constants(self.dynamics.eps, self.dynamics.lambda, model.bank()))
    }

    /// Every violation, each prefixed by its field path.
    pub fn violations(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let d = self.domain.dim;
        if d == 0 {
            errs.push("domain.dim: must be at least 1".into());
        }
        for (name, v) in [("domain.lower", &self.domain.lower), ("domain.upper", &self.domain.upper)] {
            if let Some(v) = v {
                if v.len() != d {
                    errs.push(format!("{name}: expected {d} coordinates, got {}", v.len()));
                }
            }
        }
        if let (Some(l), Some(u)) = (&self.domain.lower, &self.domain.upper) {
            for (a, (l, u)) in l.iter().zip(u).enumerate() {
                if !(l.is_finite() && u.is_finite() && l < u) {
                    errs.push(format!("domain.upper[{a}]: must exceed domain.lower[{a}] ({u} <= {l})"));
                }
            }
        }
        if let Some(m) = self.domain.margin {
            if !(m.is_finite() && m > 0.0) {
                errs.push(format!("domain.margin: must be positive, got {m}"));
            }
        }
        if self.cells() < 2 {
            errs.push(format!("domain.cells: need at least 2, got {}", self.cells()));
        }
        errs.extend(self.kernels.validate());
        let dy = &self.dynamics;
        if !(0.0..=1.0).contains(&dy.eps) {
            errs.push(format!("dynamics.eps: must lie in [0, 1], got {}", dy.eps));
        }
        if !(dy.lambda.is_finite() && dy.lambda >= 0.0) {
            errs.push(format!("dynamics.lambda: must be nonnegative, got {}", dy.lambda));
        }
        if dy.agents == 0 {
            errs.push("dynamics.agents: must be at least 1".into());
        }
        if let Some(k) = dy.snapshots.iter().find(|k| **k > dy.horizon) {
            errs.push(format!("dynamics.snapshots: step {k} is past the horizon {}", dy.horizon));
        }
        if d > 0 {
            if let Ok(dom) = BoxDomain::new(vec![0.0; d], vec![1.0; d], 1.0) {
                errs.extend(self.initial.m0.validate(&dom));
            }
        }
        for (i, c) in self.initial.eta0.iter().enumerate() {
            if c.mean.len() != d {
                errs.push(format!("initial.eta0[{i}].mean: expected {d} coordinates, got {}", c.mean.len()));
            }
            if !(c.sigma.is_finite() && c.sigma > 0.0) {
                errs.push(format!("initial.eta0[{i}].sigma: must be positive, got {}", c.sigma));
            }
            if !(c.weight.is_finite() && c.weight > 0.0) {
                errs.push(format!("initial.eta0[{i}].weight: must be positive, got {}", c.weight));
            }
        }
        let fp = &self.fixed_point;
        if !(fp.tol.is_finite() && fp.tol > 0.0) {
            errs.push(format!("fixed_point.tol: must be positive, got {}", fp.tol));
        }
        if fp.max_iter == 0 {
            errs.push("fixed_point.max_iter: must be at least 1".into());
        }
        errs.extend(self.verify.violations());
        errs
    }

    pub fn validate(&self) -> Result<()> {
        let errs = self.violations();
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }

    /// Non-fatal remarks: infeasible contraction constants, thin margins.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Ok(Feasibility::Infeasible { eps, lambda, lambda0, .. }) = self.constants() {
            out.push(format!(
                "(eps, lambda) = ({eps}, {lambda}) is outside the contraction region (lambda0 = {lambda0:.4e}); \
                 finite-horizon runs are still valid"
            ));
        }
        if self.margin() < 6.0 * self.kernels.max_field_sigma() {
            out.push(format!(
                "domain.margin {} is under 6 field sigmas; truncation leak may be visible",
                self.margin()
            ));
        }
        out
    }
}

impl VerifyConfig {
    fn violations(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if let Err(e) = self.selected() {
            errs.push(format!("verify.checks: {e}"));
        }
        for (name, v) in [("net_a", self.net_a), ("net_b", self.net_b), ("net_delta", self.net_delta)] {
            if !(v.is_finite() && v > 0.0) {
                errs.push(format!("verify.{name}: must be positive, got {v}"));
            }
        }
        if !(self.strong_lambda.is_finite() && self.strong_lambda >= 0.0) {
            errs.push(format!("verify.strong_lambda: must be nonnegative, got {}", self.strong_lambda));
        }
        if let Some(e) = self.dobrushin_eps_q.iter().find(|e| !(0.0..=1.0).contains(*e)) {
            errs.push(format!("verify.dobrushin_eps_q: {e} is outside [0, 1]"));
        }
        if !(self.tightness_delta > 0.0 && self.tightness_delta <= 1.0) {
            errs.push(format!("verify.tightness_delta: must lie in (0, 1], got {}", self.tightness_delta));
        }
        for (name, v) in [
            ("mc_sizes", &self.mc_sizes),
            ("finite_sizes", &self.finite_sizes),
            ("commuting_sizes", &self.commuting_sizes),
            ("chaos_sizes", &self.chaos_sizes),
        ] {
            if v.len() < 2 || v.windows(2).any(|w| w[0] >= w[1]) || v[0] < 2 {
                errs.push(format!("verify.{name}: need at least two increasing sizes >= 2"));
            }
        }
        for (name, v) in [("uniform_horizons", &self.uniform_horizons), ("commuting_horizons", &self.commuting_horizons)] {
            if v.len() < 2 || v.windows(2).any(|w| w[0] >= w[1]) {
                errs.push(format!("verify.{name}: need at least two increasing horizons"));
            }
        }
        for (name, v) in [
            ("mc_reps", self.mc_reps),
            ("finite_seeds", self.finite_seeds),
            ("oracle_seeds", self.oracle_seeds),
            ("uniform_seeds", self.uniform_seeds),
            ("commuting_seeds", self.commuting_seeds),
            ("chaos_seeds", self.chaos_seeds),
            ("tightness_seeds", self.tightness_seeds),
        ] {
            if v < 2 {
                errs.push(format!("verify.{name}: need at least 2, got {v}"));
            }
        }
        errs
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = RunConfig::from_toml("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.cells(), 256);
        assert!((cfg.margin() - 3.2).abs() < 1e-12);
    }

    #[test]
    fn partial_sections_keep_defaults() {
        let cfg = RunConfig::from_toml("seed = 9\n[dynamics]\neps = 0.5\n[kernels]\nq_sigma = 0.2\n").unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.dynamics.eps, 0.5);
        assert_eq!(cfg.dynamics.agents, 400);
        assert_eq!(cfg.kernels.q_sigma, 0.2);
        assert_eq!(cfg.kernels.eps_q, 0.5);
    }

    #[test]
    fn every_violation_is_named() {
        let err = RunConfig::from_toml("[dynamics]\neps = 1.5\nagents = 0\n[kernels]\nq_sigma = -1.0\neps_q = 0.5\np_sigma = 0.4\npprime_sigma = 0.4\n")
            .unwrap_err();
        let Error::Validation(v) = err else { panic!("expected validation error") };
        assert!(v.iter().any(|m| m.starts_with("dynamics.eps")));
        assert!(v.iter().any(|m| m.starts_with("dynamics.agents")));
        assert!(v.iter().any(|m| m.starts_with("kernels.q_sigma")));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(RunConfig::from_toml("sed = 3"), Err(Error::Toml(_))));
        assert!(matches!(RunConfig::from_toml("[dynamics]\nepsilon = 0.1"), Err(Error::Toml(_))));
    }

    #[test]
    fn infeasible_is_a_warning() {
        let cfg = RunConfig::from_toml("[dynamics]\nlambda = 3.0\n").unwrap();
        assert!(!cfg.constants().unwrap().is_feasible());
        assert!(cfg.warnings().iter().any(|w| w.contains("contraction region")));
        assert!(RunConfig::default().warnings().is_empty());
    }

    #[test]
    fn hash_ignores_run_plumbing() {
        let a = RunConfig::default();
        let b = RunConfig { parallel: 4, out_dir: Some("/tmp/x".into()), ..a.clone() };
        assert_eq!(a.hash(), b.hash());
        let c = RunConfig { seed: 2, ..a.clone() };
        assert_ne!(a.hash(), c.hash());
        assert_eq!(RunConfig::from_toml(&a.to_toml()).unwrap(), a);
    }

    #[test]
    fn check_selection() {
        let mut v = VerifyConfig::default();
        assert_eq!(v.selected().unwrap().len(), 11);
        v.checks = vec!["tightness".into(), "mc-bound".into()];
        assert_eq!(v.selected().unwrap(), vec!["mc-bound", "tightness"]);
        v.checks = vec!["nope".into()];
        assert!(matches!(v.selected(), Err(Error::UnknownCheck(_))));
    }
}
