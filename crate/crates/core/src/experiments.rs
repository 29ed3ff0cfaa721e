//! Numerical checks of the contraction, convergence and fixed-point
//! properties, each reduced to a PASS/FAIL verdict plus the raw data needed
//! to recompute it.
//!
//! Inequalities that hold pathwise on the lattice are checked with an
//! absolute tolerance of `1e-10`; Monte-Carlo statements use three standard
//! errors of slack.

use std::collections::BTreeMap;
use std::sync::OnceLock;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::agents::{marginal_product_gap, run_system, stream, FieldMode, InitialCondition, SystemRun};
use crate::config::{RunConfig, VerifyConfig, CHECKS};
use crate::error::{Error, Result};
use crate::kernels::std_normal_cdf;
use crate::meanfield::{
    compute_constants, merge_bound, fixed_point, iterate, lyapunov_excess, random_mixture, random_state,
    state_distance, ContractionConstants, MeanFieldState, Model,
};
use crate::measures::{
    build_net, net_distance, sup_distance, tv_distance, tv_norm_masses, EmpiricalMeasure, FunctionNet, GridDensity,
    Support,
};
use crate::metropolis::m_psi_contraction_bound;
use crate::operators::{dobrushin_coefficient, MarkovOperator, MixtureKernel};
use crate::scheme::{exact_field_oracle, resampling_tv_bound, run_scheme, SchemeRun};

/// Absolute tolerance for inequalities that hold exactly on the lattice.
pub const PATHWISE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Status {
    #[serde(rename = "PASS")]
    Pass,
    #[serde(rename = "FAIL")]
    Fail,
}

/// Raw data of a check, written as `<check>-<name>.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Self { name: name.into(), header: header.iter().map(|h| h.to_string()).collect(), rows: vec![] }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    /// NaN cells are written empty.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r.iter().map(|v| if v.is_nan() { String::new() } else { v.to_string() }))?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub name: String,
    pub status: Status,
    pub criterion: String,
    pub metrics: BTreeMap<String, f64>,
    pub notes: Vec<String>,
    pub files: Vec<String>,
    #[serde(skip)]
    pub tables: Vec<Table>,
}

impl CheckReport {
    fn new(name: &str, criterion: &str) -> Self {
        Self {
            name: name.into(),
            status: Status::Pass,
            criterion: criterion.into(),
            metrics: BTreeMap::new(),
            notes: vec![],
            files: vec![],
            tables: vec![],
        }
    }

    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }

    fn metric(&mut self, key: impl Into<String>, v: f64) {
        self.metrics.insert(key.into(), v);
    }

    /// Fails the check (with `why`) unless `ok`.
    fn require(&mut self, ok: bool, why: impl FnOnce() -> String) {
        if !ok {
            self.status = Status::Fail;
            self.notes.push(why());
        }
    }

    fn table(&mut self, t: Table) {
        self.files.push(format!("{}-{}.csv", self.name, t.name));
        self.tables.push(t);
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub config_hash: String,
    pub seed: u64,
    pub passed: bool,
    pub checks: Vec<CheckReport>,
}

impl Report {
    pub fn new(config_hash: String, seed: u64, checks: Vec<CheckReport>) -> Self {
        let passed = checks.iter().all(CheckReport::passed);
        Self { config_hash, seed, passed, checks }
    }
}

/// Writes `report.json` and one CSV per table into `dir`.
pub fn emit_report(report: &Report, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut json = serde_json::to_string_pretty(report)?;
    json.push('\n');
    std::fs::write(dir.join("report.json"), json)?;
    for c in &report.checks {
        for (t, file) in c.tables.iter().zip(&c.files) {
            t.write_csv(std::fs::File::create(dir.join(file))?)?;
        }
    }
    Ok(())
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replicate `i` of experiment `tag`.
pub fn sub_seed(seed: u64, tag: &str, i: u64) -> u64 {
    let mut h = splitmix(seed);
    for b in tag.bytes() {
        h = splitmix(h ^ u64::from(b));
    }
    splitmix(h ^ splitmix(i))
}

/// Mean and standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Least-squares slope of `ln y` on `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    linear_fit(&lx, &ly).0
}

/// Slope of an ordinary least-squares line and its t statistic.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    if xs.len() < 3 {
        return (slope, f64::NAN);
    }
    let rss: f64 = xs.iter().zip(ys).map(|(x, y)| (y - my - slope * (x - mx)).powi(2)).sum();
    let se = (rss / (n - 2.0) / sxx).sqrt();
    (slope, slope / se)
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

/// How the field part of an error is measured.
#[derive(Debug, Clone, Copy)]
enum FieldMetric {
    Sup,
    Tv,
}

impl FieldMetric {
    fn eval(self, a: &GridDensity, b: &GridDensity) -> Result<f64> {
        match self {
            FieldMetric::Sup => sup_distance(a, b),
            FieldMetric::Tv => tv_distance(a, b),
        }
    }
}

/// Random probability vector: i.i.d. exponential, a few spikes, or one bump.
fn random_masses<R: Rng + ?Sized>(grid: &crate::geometry::GridSpec, kind: usize, rng: &mut R) -> Vec<f64> {
    let n = grid.len();
    let mut m: Vec<f64> = match kind % 3 {
        0 => (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect(),
        1 => {
            let mut v = vec![0.0; n];
            for _ in 0..3 {
                v[rng.random_range(0..n)] += rng.random::<f64>() + 0.1;
            }
            v
        }
        _ => {
            let c = grid.center(rng.random_range(0..n));
            let s: f64 = rng.random_range(0.02..0.3);
            (0..n)
                .map(|i| {
                    let r2: f64 = grid.center(i).iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum();
                    (-0.5 * r2 / (s * s)).exp()
                })
                .collect()
        }
    };
    let total: f64 = m.iter().sum();
    m.iter_mut().for_each(|v| *v /= total);
    m
}

fn contraction_ratio(op: &dyn MarkovOperator, a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let pushed = op.push(&diff);
    tv_norm_masses(&pushed) / tv_norm_masses(&diff)
}

/// Everything the checks share: the model, the initial condition and the test-function net.
pub struct Experiments<'a> {
    cfg: &'a RunConfig,
    model: Model,
    init: InitialCondition,
    // built on first use: large in d >= 2 and only the distance checks need it
    net: OnceLock<FunctionNet>,
}

impl<'a> Experiments<'a> {
    pub fn new(cfg: &'a RunConfig) -> Result<Self> {
        cfg.validate()?;
        let model = cfg.model()?;
        Ok(Self { cfg, model, init: cfg.initial_condition()?, net: OnceLock::new() })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    /// The test-function net of the verify settings.
    pub fn net(&self) -> Result<&FunctionNet> {
        if let Some(net) = self.net.get() {
            return Ok(net);
        }
        let v = self.v();
        let net = build_net(v.net_a, v.net_b, v.net_delta, self.model.disc().domain())?;
        Ok(self.net.get_or_init(|| net))
    }

    fn v(&self) -> &VerifyConfig {
        &self.cfg.verify
    }

    fn seed(&self, tag: &str, i: u64) -> u64 {
        sub_seed(self.cfg.seed, tag, i)
    }

    /// Runs every selected check, in report order.
    pub fn run_selected(&self) -> Result<Report> {
        let checks = self.v().selected()?.into_iter().map(|c| self.run(c)).collect::<Result<Vec<_>>>()?;
        Ok(Report::new(self.cfg.hash(), self.cfg.seed, checks))
    }

    pub fn run(&self, name: &str) -> Result<CheckReport> {
        match name {
            "mc-bound" => self.check_mc_bound(),
            "dobrushin-q" => self.check_dobrushin_q(),
            "dobrushin-m-eta" => self.check_dobrushin_m_eta(),
            "fixed-point" => self.check_fixed_point(),
            "phi-contraction" => self.check_phi_contraction(),
            "finite-horizon-agents" => self.check_finite_horizon_agents(),
            "finite-horizon-scheme" => self.check_finite_horizon_scheme(),
            "uniform-in-time" => self.check_uniform_in_time(),
            "commuting-limits" => self.check_commuting_limits(),
            "propagation-of-chaos" => self.check_propagation_of_chaos(),
            "tightness" => self.check_tightness(),
            other => {
                debug_assert!(!CHECKS.contains(&other));
                Err(Error::UnknownCheck(other.into()))
            }
        }
    }

    /// `(m0, eta0)` on the lattices.
    pub fn initial_state(&self) -> Result<MeanFieldState> {
        let m = self.init.m0.grid_density(self.model.agent_grid())?;
        let eta = self.model.field_from_mixture(&self.init.eta0)?;
        Ok(MeanFieldState::new(m, eta))
    }

    fn reference(&self, eps: f64, lambda: f64, steps: usize) -> Result<Vec<MeanFieldState>> {
        iterate(&self.model, &self.initial_state()?, eps, lambda, steps)
    }

    fn feasible_constants(&self, report: &mut CheckReport) -> Option<ContractionConstants> {
        let d = &self.cfg.dynamics;
        let c = compute_constants(d.eps, d.lambda, self.model.bank()).constants().copied();
        match c {
            Some(c) => {
                report.metric("theta", c.theta);
                report.metric("kappa", c.kappa);
            }
            None => report.require(false, || {
                format!("(eps, lambda) = ({}, {}) is outside the contraction region", d.eps, d.lambda)
            }),
        }
        c
    }

    /// Error of the agent system against `targets[i]` at `steps[i]`, one row per seed.
    #[allow(clippy::too_many_arguments)]
    fn agent_errors(
        &self,
        tag: &str,
        n: usize,
        seeds: usize,
        (eps, lambda): (f64, f64),
        steps: &[usize],
        targets: &[&MeanFieldState],
        metric: FieldMetric,
    ) -> Result<Vec<Vec<(f64, f64)>>> {
        let net = self.net()?;
        (0..seeds as u64)
            .into_par_iter()
            .map(|i| {
                let run = SystemRun {
                    n_agents: n,
                    horizon: *steps.iter().max().expect("nonempty"),
                    eps,
                    lambda,
                    seed: self.seed(tag, i ^ ((n as u64) << 32)),
                    mode: FieldMode::Grid,
                    snapshots: steps.to_vec(),
                };
                let snaps = run_system(&self.model, &self.init, &run)?;
                snaps
                    .iter()
                    .zip(targets)
                    .map(|(s, t)| Ok((net_distance(&s.positions, &t.m, net), metric.eval(&s.field, &t.eta)?)))
                    .collect()
            })
            .collect()
    }

    /// Same for the particle scheme (field rasterized on the field lattice).
    fn scheme_errors(
        &self,
        tag: &str,
        n: usize,
        seeds: usize,
        (eps, lambda): (f64, f64),
        steps: &[usize],
        targets: &[&MeanFieldState],
    ) -> Result<Vec<Vec<(f64, f64)>>> {
        let net = self.net()?;
        (0..seeds as u64)
            .into_par_iter()
            .map(|i| {
                let run = SchemeRun {
                    n_agents: n,
                    horizon: *steps.iter().max().expect("nonempty"),
                    eps,
                    lambda,
                    seed: self.seed(tag, i ^ ((n as u64) << 32)),
                    snapshots: steps.to_vec(),
                };
                let snaps = run_scheme(&self.model, &self.init, &run)?;
                snaps
                    .iter()
                    .zip(targets)
                    .map(|(s, t)| {
                        let field = s.field_grid(&self.model)?;
                        Ok((net_distance(&s.positions, &t.m, net), sup_distance(&field, &t.eta)?))
                    })
                    .collect()
            })
            .collect()
    }

    pub fn check_mc_bound(&self) -> Result<CheckReport> {
        let v = self.v();
        let net = self.net()?;
        let mut r = CheckReport::new(
            "mc-bound",
            "mean over replicates of max over the net of |<S^N(mu) - mu, g>| <= 2/sqrt(N) + 2 delta",
        );
        let dom = self.model.disc().domain();
        let mu = self.init.m0.grid_density(self.model.agent_grid())?;
        let mut raw = Table::new("errors", &["n", "rep", "error"]);
        let mut summary = Table::new("summary", &["n", "mean", "std_err", "bound"]);
        let mut means = Vec::new();
        for &n in &v.mc_sizes {
            let errs: Vec<f64> = (0..v.mc_reps as u64)
                .into_par_iter()
                .map(|i| {
                    let mut rng = stream(self.seed("mc-bound", n as u64), i);
                    let coords: Vec<f64> = (0..n).flat_map(|_| self.init.m0.sample(dom, &mut rng)).collect();
                    let emp = EmpiricalMeasure::new(dom.dim(), coords)?;
                    Ok(net_distance(&emp, &mu, net))
                })
                .collect::<Result<_>>()?;
            for (i, e) in errs.iter().enumerate() {
                raw.push(vec![n as f64, i as f64, *e]);
            }
            let (mean, se) = mean_se(&errs);
            let bound = 2.0 / (n as f64).sqrt() + 2.0 * net.delta();
            summary.push(vec![n as f64, mean, se, bound]);
            r.metric(format!("mean_n{n}"), mean);
            r.metric(format!("bound_n{n}"), bound);
            r.require(mean <= bound, || format!("N = {n}: mean {mean:.4e} exceeds {bound:.4e}"));
            means.push(mean);
        }
        for (w, m) in v.mc_sizes.windows(2).zip(means.windows(2)) {
            r.metric(format!("scaling_n{}_n{}", w[0], w[1]), m[0] / m[1]);
        }
        r.metric("net_members", net.len() as f64);
        r.notes.push("scaling_* is mean(N)/mean(N'); sqrt(N'/N) is expected".into());
        r.table(summary);
        r.table(raw);
        Ok(r)
    }

    pub fn check_dobrushin_q(&self) -> Result<CheckReport> {
        let v = self.v();
        let mut r = CheckReport::new(
            "dobrushin-q",
            "tv(mu Q, mu' Q) / tv(mu, mu') <= 1 - eps_Q + 1e-10 on random pairs; the Dobrushin coefficient too",
        );
        let grid = self.model.agent_grid();
        let q_sigma = self.model.bank().params.q_sigma;
        let mut raw = Table::new("ratios", &["eps_q", "pair", "ratio", "bound"]);
        let mut levels: Vec<f64> = v.dobrushin_eps_q.clone();
        levels.push(1.0);
        for (li, &eq) in levels.iter().enumerate() {
            let op = MixtureKernel::new(grid, eq, Some(q_sigma));
            let bound = 1.0 - eq;
            let ratios: Vec<f64> = (0..v.dobrushin_pairs as u64)
                .into_par_iter()
                .map(|i| {
                    let mut rng = stream(self.seed("dobrushin-q", li as u64), i);
                    let a = random_masses(grid, i as usize, &mut rng);
                    let b = random_masses(grid, i as usize + 1, &mut rng);
                    contraction_ratio(&op, &a, &b)
                })
                .collect();
            let worst = ratios.iter().copied().fold(0.0, f64::max);
            let coeff = dobrushin_coefficient(&op);
            for (i, x) in ratios.iter().enumerate() {
                raw.push(vec![eq, i as f64, *x, bound]);
            }
            r.metric(format!("max_ratio_eps_q{eq}"), worst);
            r.metric(format!("dobrushin_coefficient_eps_q{eq}"), coeff);
            r.require(worst <= bound + PATHWISE_TOL, || format!("eps_Q = {eq}: ratio {worst} > {bound}"));
            r.require(coeff <= bound + PATHWISE_TOL, || format!("eps_Q = {eq}: coefficient {coeff} > {bound}"));
        }
        r.notes.push("eps_Q = 1 is the one-step-coupling kernel (ratio 0)".into());
        r.table(raw);
        Ok(r)
    }

    pub fn check_dobrushin_m_eta(&self) -> Result<CheckReport> {
        let v = self.v();
        let mut r = CheckReport::new(
            "dobrushin-m-eta",
            "tv(mu M^eta, mu' M^eta) / tv(mu, mu') <= 1 - eps_Q exp(-lambda osc(eta)) + 1e-10",
        );
        let grid = self.model.agent_grid();
        let dom = self.model.disc().domain();
        let mut raw = Table::new("ratios", &["lambda", "field", "osc", "pair", "ratio", "bound"]);
        let mut worst_gap = f64::NEG_INFINITY;
        for (li, &lambda) in v.m_eta_lambdas.iter().enumerate() {
            for f in 0..v.m_eta_fields {
                let mut rng = stream(self.seed("dobrushin-m-eta", li as u64), f as u64);
                let k = rng.random_range(1..4);
                let eta = self.model.field_from_mixture(&random_mixture(dom, k, &mut rng)?)?;
                let op = self.model.m_operator(&eta, lambda)?;
                let psi = op.psi();
                let osc = psi.iter().copied().fold(f64::NEG_INFINITY, f64::max)
                    - psi.iter().copied().fold(f64::INFINITY, f64::min);
                let bound = m_psi_contraction_bound(self.model.bank(), lambda, osc);
                let ratios: Vec<f64> = (0..v.m_eta_pairs as u64)
                    .into_par_iter()
                    .map(|i| {
                        let mut rng = stream(self.seed("dobrushin-m-eta-pairs", (li * 1000 + f) as u64), i);
                        let a = random_masses(grid, i as usize, &mut rng);
                        let b = random_masses(grid, i as usize + 2, &mut rng);
                        contraction_ratio(&op, &a, &b)
                    })
                    .collect();
                for (i, x) in ratios.iter().enumerate() {
                    raw.push(vec![lambda, f as f64, osc, i as f64, *x, bound]);
                    worst_gap = worst_gap.max(x - bound);
                }
            }
        }
        r.metric("max_ratio_minus_bound", worst_gap);
        r.require(worst_gap <= PATHWISE_TOL, || format!("a ratio exceeds its bound by {worst_gap:e}"));
        r.table(raw);
        Ok(r)
    }

    pub fn check_fixed_point(&self) -> Result<CheckReport> {
        let v = self.v();
        let mut r = CheckReport::new(
            "fixed-point",
            "random starts converge to pairwise distance < 2e-8; every trace satisfies \
             alpha_k + kappa alpha_(k-1) <= theta (alpha_(k-1) + kappa alpha_(k-2))",
        );
        let Some(c) = self.feasible_constants(&mut r) else { return Ok(r) };
        let fp = &self.cfg.fixed_point;
        let tol = v.fixed_point_tol.min(fp.tol);
        let runs: Vec<(MeanFieldState, Vec<crate::meanfield::TraceRow>)> = (0..v.fixed_point_inits as u64)
            .into_par_iter()
            .map(|i| {
                let mut rng = stream(self.seed("fixed-point", 0), i);
                let s = random_state(&self.model, &mut rng)?;
                fixed_point(&self.model, &s, c.eps, c.lambda, Some(c.kappa), tol, fp.max_iter)
            })
            .collect::<Result<_>>()?;
        let mut trace = Table::new("traces", &["init", "k", "alpha", "theta_ratio"]);
        let mut worst_excess = f64::NEG_INFINITY;
        for (i, (_, t)) in runs.iter().enumerate() {
            for row in t {
                trace.push(vec![i as f64, row.k as f64, row.alpha, row.theta_ratio.unwrap_or(f64::NAN)]);
            }
            let alphas: Vec<f64> = t.iter().map(|row| row.alpha).collect();
            worst_excess = worst_excess.max(lyapunov_excess(&alphas, &c));
            r.metric(format!("iterations_init{i}"), t.len() as f64);
        }
        let mut spread: f64 = 0.0;
        for i in 0..runs.len() {
            for j in i + 1..runs.len() {
                spread = spread.max(state_distance(&runs[i].0, &runs[j].0)?);
            }
        }
        r.metric("tol", tol);
        r.metric("max_pairwise_distance", spread);
        r.metric("max_lyapunov_excess", worst_excess);
        r.require(spread < 2e-8, || format!("fixed points differ by {spread:e}"));
        r.require(worst_excess <= PATHWISE_TOL, || format!("two-step recursion violated by {worst_excess:e}"));
        r.table(trace);
        Ok(r)
    }

    pub fn check_phi_contraction(&self) -> Result<CheckReport> {
        let v = self.v();
        let mut r = CheckReport::new(
            "phi-contraction",
            "||Phi^n(s) - Phi^n(s')|| <= 4 theta^(n-1) and <= theta^(n-1) (2 + kappa + 2 lambda (M_m0 + M_QQ0)) ||s - s'||",
        );
        let Some(c) = self.feasible_constants(&mut r) else { return Ok(r) };
        let steps = v.contraction_steps.clone();
        let horizon = steps.iter().copied().max().unwrap_or(0);
        let m_q_q0 = self.model.bank().derived.m_q_q0;
        let rows: Vec<Vec<Vec<f64>>> = (0..v.contraction_pairs as u64)
            .into_par_iter()
            .map(|i| {
                let mut rng = stream(self.seed("phi-contraction", 0), i);
                let a = random_state(&self.model, &mut rng)?;
                let b = random_state(&self.model, &mut rng)?;
                let ta = iterate(&self.model, &a, c.eps, c.lambda, horizon)?;
                let tb = iterate(&self.model, &b, c.eps, c.lambda, horizon)?;
                let d0 = state_distance(&a, &b)?;
                // the density bound of the starting agent law
                let m0_sup = a.m.max_value().max(b.m.max_value());
                steps
                    .iter()
                    .map(|&n| {
                        let dn = state_distance(&ta[n], &tb[n])?;
                        let four = 4.0 * c.theta.powi(n as i32 - 1);
                        let cor = merge_bound(&c, n, m0_sup, m_q_q0, d0);
                        Ok(vec![i as f64, n as f64, dn, four, cor])
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        let mut t = Table::new("distances", &["pair", "n", "distance", "bound", "merge_bound"]);
        let (mut worst, mut worst_merge) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for row in rows.into_iter().flatten() {
            worst = worst.max(row[2] - row[3]);
            worst_merge = worst_merge.max(row[2] - row[4]);
            t.push(row);
        }
        r.metric("max_distance_minus_bound", worst);
        r.metric("max_distance_minus_merge_bound", worst_merge);
        r.require(worst <= PATHWISE_TOL, || format!("4 theta^(n-1) exceeded by {worst:e}"));
        r.require(worst_merge <= PATHWISE_TOL, || format!("merge bound exceeded by {worst_merge:e}"));
        r.table(t);
        Ok(r)
    }

    /// Strict decrease along `sizes` and a log-log slope of at most -0.3.
    fn decreasing_in_n(r: &mut CheckReport, sizes: &[usize], means: &[f64]) {
        let xs: Vec<f64> = sizes.iter().map(|&n| n as f64).collect();
        let slope = loglog_slope(&xs, means);
        r.metric("loglog_slope", slope);
        r.require(strictly_decreasing(means), || format!("mean errors {means:?} are not strictly decreasing"));
        r.require(slope <= -0.3, || format!("log-log slope {slope:.3} > -0.3"));
    }

    pub fn check_finite_horizon_agents(&self) -> Result<CheckReport> {
        let v = self.v();
        let mut r = CheckReport::new(
            "finite-horizon-agents",
            "at fixed k, mean of net_distance(m_k^N, m_k) + sup|eta_k^N - eta_k| strictly decreases in N, \
             log-log slope <= -0.3",
        );
        let (eps, lambda) = (self.cfg.dynamics.eps, v.strong_lambda);
        let k = v.agents_horizon;
        let reference = self.reference(eps, lambda, k)?;
        let mut t = Table::new("errors", &["n", "seed", "net_m", "sup_eta", "error"]);
        let mut means = Vec::new();
        for &n in &v.finite_sizes {
            let rows = self.agent_errors("finite-agents", n, v.finite_seeds, (eps, lambda), &[k], &[&reference[k]], FieldMetric::Sup)?;
            let errs: Vec<f64> = rows.iter().map(|e| e[0].0 + e[0].1).collect();
            for (i, e) in rows.iter().enumerate() {
                t.push(vec![n as f64, i as f64, e[0].0, e[0].1, e[0].0 + e[0].1]);
            }
            let (mean, se) = mean_se(&errs);
            r.metric(format!("mean_n{n}"), mean);
            r.metric(format!("std_err_n{n}"), se);
            means.push(mean);
        }
        r.metric("lambda", lambda);
        r.metric("step", k as f64);
        Self::decreasing_in_n(&mut r, &v.finite_sizes, &means);
        r.table(t);
        Ok(r)
    }

    pub fn check_finite_horizon_scheme(&self) -> Result<CheckReport> {
        let v = self.v();
        let mut r = CheckReport::new(
            "finite-horizon-scheme",
            "scheme error to the mean field strictly decreases in N (slope <= -0.3); \
             mean tv(scheme field, closed-form field of the same agent history) <= 1e-3 + resampling slack",
        );
        let (eps, lambda) = (self.cfg.dynamics.eps, v.strong_lambda);
        let k = v.scheme_horizon;
        let reference = self.reference(eps, lambda, k)?;
        let mut t = Table::new("errors", &["n", "seed", "net_m", "sup_eta", "error"]);
        let mut means = Vec::new();
        for &n in &v.finite_sizes {
            let rows = self.scheme_errors("finite-scheme", n, v.finite_seeds, (eps, lambda), &[k], &[&reference[k]])?;
            let errs: Vec<f64> = rows.iter().map(|e| e[0].0 + e[0].1).collect();
            for (i, e) in rows.iter().enumerate() {
                t.push(vec![n as f64, i as f64, e[0].0, e[0].1, e[0].0 + e[0].1]);
            }
            let (mean, se) = mean_se(&errs);
            r.metric(format!("mean_n{n}"), mean);
            r.metric(format!("std_err_n{n}"), se);
            means.push(mean);
        }
        r.metric("lambda", lambda);
        r.metric("step", k as f64);
        Self::decreasing_in_n(&mut r, &v.finite_sizes, &means);
        r.table(t);

        // Closed-form field along the scheme's own agent history.
        let (n, k) = (v.oracle_agents, v.oracle_horizon);
        let p = self.model.bank().params;
        let grid = self.model.field_grid();
        let rows: Vec<(f64, f64)> = (0..v.oracle_seeds as u64)
            .into_par_iter()
            .map(|i| {
                let run = SchemeRun { n_agents: n, horizon: k, eps, lambda, seed: self.seed("scheme-oracle", i), snapshots: vec![] };
                let snaps = run_scheme(&self.model, &self.init, &run)?;
                let history: Vec<EmpiricalMeasure> = snaps[..k].iter().map(|s| s.positions.clone()).collect();
                let oracle = exact_field_oracle(&history, &self.init.eta0, eps, p.p_sigma, p.pprime_sigma, usize::MAX)?;
                let (a, _) = snaps[k].field.rasterize(grid, Support::Field)?;
                let (b, _) = oracle.rasterize(grid, Support::Field)?;
                let slack: f64 = (1..=k)
                    .map(|j| (1.0 - eps).powi((k - j + 1) as i32) * resampling_tv_bound(&snaps[j - 1].field, n, p.p_sigma, grid))
                    .sum();
                Ok((tv_distance(&a, &b)?, slack))
            })
            .collect::<Result<_>>()?;
        let tvs: Vec<f64> = rows.iter().map(|x| x.0).collect();
        let (mean_tv, se_tv) = mean_se(&tvs);
        let mean_slack = rows.iter().map(|x| x.1).sum::<f64>() / rows.len() as f64;
        let limit = 1e-3 + mean_slack + 3.0 * se_tv;
        r.metric("oracle_mean_tv", mean_tv);
        r.metric("oracle_std_err", se_tv);
        r.metric("oracle_mean_slack", mean_slack);
        r.require(mean_tv <= limit, || format!("oracle tv {mean_tv:.4e} > {limit:.4e}"));
        let mut ot = Table::new("oracle", &["seed", "tv", "slack"]);
        for (i, (tv, s)) in rows.iter().enumerate() {
            ot.push(vec![i as f64, *tv, *s]);
        }
        r.table(ot);
        Ok(r)
    }

    pub fn check_uniform_in_time(&self) -> Result<CheckReport> {
        let v = self.v();
        let mut r = CheckReport::new(
            "uniform-in-time",
            "at fixed N, mean error to the mean field at each horizon varies by less than a factor 2 \
             and shows no increasing trend (one-sided 95% slope test), for agents and scheme",
        );
        let d = &self.cfg.dynamics;
        if compute_constants(d.eps, d.lambda, self.model.bank()).constants().is_none() {
            r.notes.push("configured (eps, lambda) is outside the contraction region".into());
        }
        let hs = &v.uniform_horizons;
        let reference = self.reference(d.eps, d.lambda, *hs.last().expect("validated"))?;
        let targets: Vec<&MeanFieldState> = hs.iter().map(|&h| &reference[h]).collect();
        let n = v.uniform_agents;
        let agents = self.agent_errors("uniform-agents", n, v.uniform_seeds, (d.eps, d.lambda), hs, &targets, FieldMetric::Sup)?;
        let scheme = self.scheme_errors("uniform-scheme", n, v.uniform_seeds, (d.eps, d.lambda), hs, &targets)?;
        let mut t = Table::new("errors", &["system", "seed", "horizon", "net_m", "sup_eta", "error"]);
        for (sys, rows) in [("agents", &agents), ("scheme", &scheme)] {
            let code = if sys == "agents" { 0.0 } else { 1.0 };
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            let mut means = Vec::new();
            for (hi, &h) in hs.iter().enumerate() {
                let errs: Vec<f64> = rows.iter().map(|e| e[hi].0 + e[hi].1).collect();
                for (i, e) in rows.iter().enumerate() {
                    t.push(vec![code, i as f64, h as f64, e[hi].0, e[hi].1, e[hi].0 + e[hi].1]);
                    xs.push(h as f64);
                    ys.push(e[hi].0 + e[hi].1);
                }
                let (mean, se) = mean_se(&errs);
                r.metric(format!("{sys}_mean_n{h}"), mean);
                r.metric(format!("{sys}_std_err_n{h}"), se);
                means.push(mean);
            }
            let hi = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = means.iter().copied().fold(f64::INFINITY, f64::min);
            let (slope, tstat) = linear_fit(&xs, &ys);
            r.metric(format!("{sys}_max_over_min"), hi / lo);
            r.metric(format!("{sys}_trend_slope"), slope);
            r.metric(format!("{sys}_trend_t"), tstat);
            r.require(hi / lo < 2.0, || format!("{sys}: errors vary by a factor {:.3}", hi / lo));
            r.require(tstat.is_nan() || tstat <= 1.645, || format!("{sys}: increasing trend (t = {tstat:.2})"));
        }
        r.notes.push("system column: 0 = agents, 1 = scheme".into());
        r.table(t);
        Ok(r)
    }

    pub fn check_commuting_limits(&self) -> Result<CheckReport> {
        let v = self.v();
        let mut r = CheckReport::new(
            "commuting-limits",
            "e(n, N) = net_distance(m_n^N, m_inf) + tv(eta_n^N, eta_inf): the large-n plateau strictly \
             decreases in N, and at the largest N e decreases in n (within 3 standard errors) to below e(0, N)",
        );
        let Some(c) = self.feasible_constants(&mut r) else { return Ok(r) };
        let fp = &self.cfg.fixed_point;
        let (limit, _) = fixed_point(&self.model, &self.initial_state()?, c.eps, c.lambda, None, fp.tol, fp.max_iter)?;
        let hs = &v.commuting_horizons;
        let targets: Vec<&MeanFieldState> = hs.iter().map(|_| &limit).collect();
        let mut t = Table::new("errors", &["n_agents", "seed", "horizon", "net_m", "tv_eta", "error"]);
        let mut mean = vec![vec![0.0; v.commuting_sizes.len()]; hs.len()];
        let mut se = mean.clone();
        for (ni, &n) in v.commuting_sizes.iter().enumerate() {
            let rows = self.agent_errors("commuting", n, v.commuting_seeds, (c.eps, c.lambda), hs, &targets, FieldMetric::Tv)?;
            for (hi, &h) in hs.iter().enumerate() {
                let errs: Vec<f64> = rows.iter().map(|e| e[hi].0 + e[hi].1).collect();
                for (i, e) in rows.iter().enumerate() {
                    t.push(vec![n as f64, i as f64, h as f64, e[hi].0, e[hi].1, e[hi].0 + e[hi].1]);
                }
                (mean[hi][ni], se[hi][ni]) = mean_se(&errs);
                r.metric(format!("e_n{h}_agents{n}"), mean[hi][ni]);
            }
        }
        let last = hs.len() - 1;
        let plateau: Vec<f64> = mean[last].clone();
        r.require(strictly_decreasing(&plateau), || format!("plateau {plateau:?} is not decreasing in N"));
        let big = v.commuting_sizes.len() - 1;
        for hi in 1..hs.len() {
            let (a, b) = (mean[hi - 1][big], mean[hi][big]);
            let slack = 3.0 * se[hi - 1][big].hypot(se[hi][big]);
            r.require(b <= a + slack, || format!("at the largest N, e grows from n = {} to n = {}", hs[hi - 1], hs[hi]));
        }
        r.require(mean[last][big] < mean[0][big], || "no decrease in n at the largest N".into());
        r.table(t);
        Ok(r)
    }

    pub fn check_propagation_of_chaos(&self) -> Result<CheckReport> {
        let v = self.v();
        let mut r = CheckReport::new(
            "propagation-of-chaos",
            "|E[phi(X_1) phi(X_2)] - m_k(phi)^2| for centered phi strictly decreases in N",
        );
        let (eps, lambda) = (self.cfg.dynamics.eps, v.strong_lambda);
        let k = v.chaos_horizon;
        let reference = self.reference(eps, lambda, k)?;
        let m_k = &reference[k].m;
        let grid = m_k.grid();
        let masses = m_k.masses();
        let center: f64 = (0..grid.len()).map(|i| masses[i] * grid.center(i)[0]).sum();
        let phi = move |x: &[f64]| x[0] - center;
        let mut t = Table::new("gaps", &["n", "p", "gap", "std_err"]);
        let mut gaps = Vec::new();
        for &n in &v.chaos_sizes {
            let reps: Vec<EmpiricalMeasure> = (0..v.chaos_seeds as u64)
                .into_par_iter()
                .map(|i| {
                    let run = SystemRun {
                        n_agents: n,
                        horizon: k,
                        eps,
                        lambda,
                        seed: self.seed("chaos", i ^ ((n as u64) << 32)),
                        mode: FieldMode::Grid,
                        snapshots: vec![k],
                    };
                    Ok(run_system(&self.model, &self.init, &run)?.remove(0).positions)
                })
                .collect::<Result<_>>()?;
            let one = marginal_product_gap(&reps, &[&phi], m_k)?;
            let two = marginal_product_gap(&reps, &[&phi, &phi], m_k)?;
            t.push(vec![n as f64, 1.0, one.gap, one.std_err]);
            t.push(vec![n as f64, 2.0, two.gap, two.std_err]);
            r.metric(format!("gap2_n{n}"), two.gap);
            r.metric(format!("std_err2_n{n}"), two.std_err);
            r.metric(format!("gap1_n{n}"), one.gap);
            gaps.push(two.gap);
        }
        r.metric("lambda", lambda);
        r.require(strictly_decreasing(&gaps), || format!("pair gaps {gaps:?} are not decreasing"));
        r.table(t);
        Ok(r)
    }

    pub fn check_tightness(&self) -> Result<CheckReport> {
        let v = self.v();
        let mut r = CheckReport::new(
            "tightness",
            "mass outside the compact K(delta) stays below delta along the mean-field trajectory, and so does the \
             expected mass of the scheme field (mean over seeds, 3 standard errors)",
        );
        let d = &self.cfg.dynamics;
        let (eps, delta, steps) = (d.eps, v.tightness_delta, v.tightness_steps);
        let tails = Tails::new(&self.model, &self.init, eps);
        let radius = tails.radius(delta / 2.0, steps);
        r.metric("delta", delta);
        r.metric("radius", radius);
        r.metric("radius_within_field_box", f64::from(u8::from(radius <= self.model.disc().domain().margin())));
        if !radius.is_finite() {
            r.require(false, || "no finite K(delta): eps = 0 leaves the field unconfined".into());
            return Ok(r);
        }

        let reference = self.reference(eps, d.lambda, steps)?;
        let ms: Vec<&GridDensity> = reference.iter().map(|s| &s.m).collect();
        let mf = tails.meanfield_outside(&ms, radius, steps);

        // The scheme statement is about the expected field, so average over seeds.
        let (lo, hi) = tails.k_box(radius);
        let per_seed: Vec<Vec<f64>> = (0..v.tightness_seeds as u64)
            .into_par_iter()
            .map(|i| {
                let run = SchemeRun {
                    n_agents: v.tightness_agents,
                    horizon: steps,
                    eps,
                    lambda: d.lambda,
                    seed: self.seed("tightness", i),
                    snapshots: vec![],
                };
                let snaps = run_scheme(&self.model, &self.init, &run)?;
                Ok(snaps.iter().map(|s| (1.0 - s.field.box_mass(&lo, &hi)).max(0.0)).collect())
            })
            .collect::<Result<_>>()?;
        let diffusion: Vec<f64> = (0..=steps).map(|k| tails.eta0_outside(radius, k)).collect();

        let mut t = Table::new(
            "outside",
            &["k", "meanfield", "scheme_mean", "scheme_std_err", "scheme_max_seed", "pure_diffusion", "bound"],
        );
        let mut sc_worst = f64::NEG_INFINITY;
        let mut sc_max = 0.0f64;
        for k in 0..=steps {
            let xs: Vec<f64> = per_seed.iter().map(|row| row[k]).collect();
            let (mean, se) = mean_se(&xs);
            let top = xs.iter().copied().fold(0.0, f64::max);
            t.push(vec![k as f64, mf[k], mean, se, top, diffusion[k], tails.bound(radius, k)]);
            sc_worst = sc_worst.max(mean - 3.0 * se);
            sc_max = sc_max.max(mean);
        }
        let mf_max = mf.iter().copied().fold(0.0, f64::max);
        r.metric("meanfield_max_outside", mf_max);
        r.metric("scheme_max_mean_outside", sc_max);
        r.metric("pure_diffusion_final_outside", diffusion[steps]);
        r.require(mf_max < delta, || format!("mean field puts {mf_max:e} outside K"));
        r.require(sc_worst < delta, || format!("scheme: expected mass outside K is significantly above delta ({sc_max:e})"));
        r.notes.push("pure_diffusion is eta0 P^k (eps = 0) against the same K; informational".into());
        r.table(t);
        Ok(r)
    }
}

/// Gaussian tail bookkeeping for the field recursion. With `m` supported
/// on `E`, `eta_k = sum_j eps (1-eps)^j m_{k-1-j} P' P^j + (1-eps)^k eta0 P^k`,
/// and each `P' P^j` is Gaussian with variance `sigma'^2 + j sigma^2`.
pub struct Tails<'m> {
    lower: Vec<f64>,
    upper: Vec<f64>,
    eps: f64,
    p_sigma: f64,
    pprime_sigma: f64,
    eta0: &'m crate::measures::GaussianMixture,
}

impl<'m> Tails<'m> {
    pub fn new(model: &Model, init: &'m InitialCondition, eps: f64) -> Self {
        let dom = model.disc().domain();
        let p = model.bank().params;
        Self {
            lower: dom.lower().to_vec(),
            upper: dom.upper().to_vec(),
            eps,
            p_sigma: p.p_sigma,
            pprime_sigma: p.pprime_sigma,
            eta0: &init.eta0,
        }
    }

    /// `K = E` padded by `r`.
    pub fn k_box(&self, r: f64) -> (Vec<f64>, Vec<f64>) {
        (self.lower.iter().map(|l| l - r).collect(), self.upper.iter().map(|u| u + r).collect())
    }

    fn sigma_j(&self, j: usize) -> f64 {
        (self.pprime_sigma.powi(2) + j as f64 * self.p_sigma.powi(2)).sqrt()
    }

    /// Mass of `N(c, s^2 I)` outside `K`, exactly.
    fn outside(&self, c: &[f64], s: f64, r: f64) -> f64 {
        let inside: f64 = (0..c.len())
            .map(|a| std_normal_cdf((self.upper[a] + r - c[a]) / s) - std_normal_cdf((self.lower[a] - r - c[a]) / s))
            .product();
        (1.0 - inside).max(0.0)
    }

    /// Worst case over centers in `E`: a center on a face, union over axes.
    fn worst_outside(&self, s: f64, r: f64) -> f64 {
        (0..self.lower.len())
            .map(|a| {
                let side = self.upper[a] - self.lower[a];
                (1.0 - std_normal_cdf(r / s)) + (1.0 - std_normal_cdf((r + side) / s))
            })
            .sum::<f64>()
            .min(1.0)
    }

    pub fn eta0_outside(&self, r: f64, k: usize) -> f64 {
        let spread = (k as f64).sqrt() * self.p_sigma;
        self.eta0.components().iter().map(|c| c.weight * self.outside(&c.mean, c.sigma.hypot(spread), r)).sum()
    }

    /// Bound on the mass of `eta_k` outside `K`, valid for any agent laws on `E`.
    pub fn bound(&self, r: f64, k: usize) -> f64 {
        let e = self.eps;
        let deposits: f64 = (0..k).map(|j| e * (1.0 - e).powi(j as i32) * self.worst_outside(self.sigma_j(j), r)).sum();
        deposits + (1.0 - e).powi(k as i32) * self.eta0_outside(r, k)
    }

    /// Smallest padding whose bound stays below `target` for `k <= steps`
    /// (infinite if none below `1e6`).
    pub fn radius(&self, target: f64, steps: usize) -> f64 {
        let worst = |r: f64| (0..=steps).map(|k| self.bound(r, k)).fold(0.0, f64::max);
        let mut hi = 1.0;
        while worst(hi) > target {
            hi *= 2.0;
            if hi > 1e6 {
                return f64::INFINITY;
            }
        }
        let mut lo = 0.0;
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if worst(mid) > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    }

    /// Exact mass outside `K` of the untruncated mean-field field, the agent
    /// laws `ms[j]` being lattice masses at cell centers.
    pub fn meanfield_outside(&self, ms: &[&GridDensity], r: f64, steps: usize) -> Vec<f64> {
        let grid = ms[0].grid();
        let centers: Vec<Vec<f64>> = (0..grid.len()).map(|i| grid.center(i)).collect();
        let masses: Vec<Vec<f64>> = ms.iter().map(|m| m.masses()).collect();
        let g: Vec<Vec<f64>> = (0..steps)
            .into_par_iter()
            .map(|j| centers.iter().map(|c| self.outside(c, self.sigma_j(j), r)).collect())
            .collect();
        let e = self.eps;
        (0..=steps)
            .map(|k| {
                let deposits: f64 = (0..k)
                    .map(|j| {
                        let m = &masses[k - 1 - j];
                        e * (1.0 - e).powi(j as i32) * m.iter().zip(&g[j]).map(|(a, b)| a * b).sum::<f64>()
                    })
                    .sum();
                deposits + (1.0 - e).powi(k as i32) * self.eta0_outside(r, k)
            })
            .collect()
    }
}
