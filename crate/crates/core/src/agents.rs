//! The exact N-agent system: agents move independently through `M^{eta}`
//! against the current field, then the field is updated with the
//! pre-move empirical measure.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BoxDomain, GridSpec};
use crate::kernels::{sample_truncated_gaussian, sample_uniform, std_normal_cdf};
use crate::measures::{Component, EmpiricalMeasure, GaussianMixture, GridDensity, Support};
use crate::meanfield::{FieldSource, Model};
use crate::metropolis::{m_psi_sample, PotentialField};

/// Law of the initial agent positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialMeasure {
    #[default]
    Uniform,
    /// `N(mean, sigma^2 I)` conditioned on `E`.
    TruncatedGaussian { mean: Vec<f64>, sigma: f64 },
}

impl InitialMeasure {
    pub fn validate(&self, dom: &BoxDomain) -> Vec<String> {
        match self {
            InitialMeasure::Uniform => vec![],
            InitialMeasure::TruncatedGaussian { mean, sigma } => {
                let mut errs = vec![];
                if mean.len() != dom.dim() {
                    errs.push(format!("initial.m0.mean: expected {} coordinates, got {}", dom.dim(), mean.len()));
                }
                if !(sigma.is_finite() && *sigma > 0.0) {
                    errs.push(format!("initial.m0.sigma: must be positive, got {sigma}"));
                }
                errs
            }
        }
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, dom: &BoxDomain, rng: &mut R) -> Vec<f64> {
        match self {
            InitialMeasure::Uniform => sample_uniform(dom, rng),
            InitialMeasure::TruncatedGaussian { mean, sigma } => sample_truncated_gaussian(mean, *sigma, dom, rng),
        }
    }

    /// Exact cell probabilities on `grid` (which must tile `E`), as a density.
    pub fn grid_density(&self, grid: &GridSpec) -> Result<GridDensity> {
        match self {
            InitialMeasure::Uniform => Ok(GridDensity::uniform(grid.clone(), Support::Agent)),
            InitialMeasure::TruncatedGaussian { mean, sigma } => {
                let axis_mass: Vec<Vec<f64>> = (0..grid.dim())
                    .map(|a| {
                        (0..grid.cells()[a])
                            .map(|i| {
                                let lo = grid.lower()[a] + i as f64 * grid.width()[a];
                                let hi = lo + grid.width()[a];
                                std_normal_cdf((hi - mean[a]) / sigma) - std_normal_cdf((lo - mean[a]) / sigma)
                            })
                            .collect()
                    })
                    .collect();
                let masses: Vec<f64> = (0..grid.len())
                    .map(|i| grid.unravel(i).iter().enumerate().map(|(a, &k)| axis_mass[a][k]).product())
                    .collect();
                let total: f64 = masses.iter().sum();
                let masses: Vec<f64> = masses.iter().map(|m| m / total).collect();
                GridDensity::from_masses(grid.clone(), Support::Agent, &masses)
            }
        }
    }
}

/// Agent law and field at time zero.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialCondition {
    pub m0: InitialMeasure,
    pub eta0: GaussianMixture,
}

/// How the exact field of the agent system is carried.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FieldMode {
    /// On the field lattice.
    #[default]
    Grid,
    /// As an exact Gaussian mixture (grows by `N` components per step).
    Mixture { budget: usize },
}

/// Positions, field and one random stream per agent.
#[derive(Debug, Clone)]
pub struct AgentState {
    pub positions: EmpiricalMeasure,
    pub field: PotentialField,
    pub step: usize,
    pub leak: f64,
    streams: Vec<ChaCha8Rng>,
}

/// Stream `id` of the master seed.
pub fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

impl AgentState {
    /// Agents i.i.d. from `m0`; agent `i` draws from stream `i` of `seed`.
    pub fn initial(model: &Model, init: &InitialCondition, n: usize, seed: u64, mode: FieldMode) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("need at least one agent".into()));
        }
        let ids: Vec<u64> = (0..n as u64).collect();
        let mut streams: Vec<ChaCha8Rng> = ids.iter().map(|&i| stream(seed, i)).collect();
        let dom = model.disc().domain();
        let coords: Vec<f64> = streams.iter_mut().flat_map(|r| init.m0.sample(dom, r)).collect();
        let positions = EmpiricalMeasure::new(dom.dim(), coords)?;
        let field = match mode {
            FieldMode::Grid => PotentialField::Grid(model.field_from_mixture(&init.eta0)?),
            FieldMode::Mixture { .. } => PotentialField::Mixture(init.eta0.clone()),
        };
        Ok(Self { positions, field, step: 0, leak: 0.0, streams })
    }

    /// Explicit positions with the given stream ids.
    pub fn with_streams(positions: EmpiricalMeasure, field: PotentialField, seed: u64, ids: &[u64]) -> Result<Self> {
        if ids.len() != positions.len() {
            return Err(Error::Config("one stream id per agent".into()));
        }
        let streams = ids.iter().map(|&i| stream(seed, i)).collect();
        Ok(Self { positions, field, step: 0, leak: 0.0, streams })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Field on the model's lattice (rasterized if mixture-backed).
    pub fn field_grid(&self, model: &Model) -> Result<GridDensity> {
        match &self.field {
            PotentialField::Grid(g) => Ok(g.clone()),
            PotentialField::Mixture(m) => model.field_from_mixture(m),
        }
    }
}

/// Exact mixture update `(1 - eps) eta P + (eps / N) sum_j P'(X_j, .)`.
pub fn mixture_field_update(
    eta: &GaussianMixture,
    pts: &EmpiricalMeasure,
    eps: f64,
    p_sigma: f64,
    pprime_sigma: f64,
    budget: usize,
) -> Result<GaussianMixture> {
    let needed = if eps < 1.0 { eta.len() } else { 0 } + if eps > 0.0 { pts.len() } else { 0 };
    if needed > budget {
        return Err(Error::ComponentBudget { needed, budget });
    }
    let w = 1.0 / pts.len() as f64;
    let deposits = pts
        .points()
        .map(|x| Component { weight: w, mean: x.to_vec(), sigma: pprime_sigma })
        .collect::<Vec<_>>();
    if eps == 0.0 {
        return Ok(eta.convolved(p_sigma));
    }
    let deposit = GaussianMixture::from_unnormalized(deposits)?;
    eta.convolved(p_sigma).blend(1.0 - eps, &deposit)
}

/// Moves every agent once against the frozen field, then updates the field
/// with the pre-move positions.
pub fn system_step(model: &Model, s: &AgentState, eps: f64, lambda: f64) -> Result<AgentState> {
    let dom = model.disc().domain();
    let bank = model.bank();
    let d = dom.dim();
    let mut streams = s.streams.clone();
    let moved: Vec<Vec<f64>> = streams
        .par_iter_mut()
        .enumerate()
        .map(|(i, rng)| m_psi_sample(s.positions.point(i), &s.field, lambda, bank, dom, rng))
        .collect::<Result<_>>()?;
    let positions = EmpiricalMeasure::new(d, moved.concat())?;
    let (field, leak) = match &s.field {
        PotentialField::Grid(eta) => {
            let (g, leak) = model.field_update(eta, FieldSource::Empirical(&s.positions), eps)?;
            (PotentialField::Grid(g), leak)
        }
        PotentialField::Mixture(eta) => {
            let p = &bank.params;
            let budget = usize::MAX;
            let mix = mixture_field_update(eta, &s.positions, eps, p.p_sigma, p.pprime_sigma, budget)?;
            (PotentialField::Mixture(mix), 0.0)
        }
    };
    Ok(AgentState { positions, field, step: s.step + 1, leak, streams })
}

/// Parameters of one agent-system run.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemRun {
    pub n_agents: usize,
    pub horizon: usize,
    pub eps: f64,
    pub lambda: f64,
    pub seed: u64,
    pub mode: FieldMode,
    /// Steps to record; empty records every step.
    pub snapshots: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct AgentSnapshot {
    pub step: usize,
    pub positions: EmpiricalMeasure,
    pub field: GridDensity,
    pub leak: f64,
}

/// Runs the system to `horizon`, recording the requested snapshots.
pub fn run_system(model: &Model, init: &InitialCondition, run: &SystemRun) -> Result<Vec<AgentSnapshot>> {
    let mut state = AgentState::initial(model, init, run.n_agents, run.seed, run.mode)?;
    let budget = match run.mode {
        FieldMode::Mixture { budget } => budget,
        FieldMode::Grid => usize::MAX,
    };
    let wanted = |k: usize| run.snapshots.is_empty() || run.snapshots.contains(&k);
    let mut out = Vec::new();
    for k in 0..=run.horizon {
        if k > 0 {
            if let PotentialField::Mixture(eta) = &state.field {
                let needed = eta.len() * usize::from(run.eps < 1.0) + run.n_agents;
                if needed > budget {
                    return Err(Error::ComponentBudget { needed, budget });
                }
            }
            state = system_step(model, &state, run.eps, run.lambda)?;
        }
        if wanted(k) {
            out.push(AgentSnapshot {
                step: k,
                positions: state.positions.clone(),
                field: state.field_grid(model)?,
                leak: state.leak,
            });
        }
    }
    Ok(out)
}

/// Writes `step,index,x0..` rows for a list of snapshots.
pub fn write_positions_csv<W: Write>(snapshots: &[AgentSnapshot], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let d = snapshots.first().map_or(1, |s| s.positions.dim());
    let mut header = vec!["step".to_string(), "index".to_string()];
    header.extend((0..d).map(|a| format!("x{a}")));
    w.write_record(&header)?;
    for s in snapshots {
        for (i, p) in s.positions.points().enumerate() {
            let mut rec = vec![s.step.to_string(), i.to_string()];
            rec.extend(p.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes `step,x0..,density` rows for the fields of a list of snapshots.
pub fn write_fields_csv<W: Write>(fields: &[(usize, &GridDensity)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let d = fields.first().map_or(1, |(_, g)| g.grid().dim());
    let mut header = vec!["step".to_string()];
    header.extend((0..d).map(|a| format!("x{a}")));
    header.push("density".into());
    w.write_record(&header)?;
    for (step, g) in fields {
        for (i, v) in g.values().iter().enumerate() {
            let mut rec = vec![step.to_string()];
            rec.extend(g.grid().center(i).iter().map(|c| c.to_string()));
            rec.push(v.to_string());
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Monte-Carlo estimate of a product gap with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapEstimate {
    pub gap: f64,
    pub std_err: f64,
    pub replicates: usize,
}

/// Estimates `|E[prod_i phi_i(X_i(k))] - prod_i m_k(phi_i)|` from independent
/// replicates of the agent positions at step `k`. Within a replicate the
/// product is averaged over all ordered tuples of distinct agents
/// (exchangeability makes every tuple an unbiased draw).
/// A test function shared across threads.
pub type TestFn<'a> = &'a (dyn Fn(&[f64]) -> f64 + Sync);

pub fn marginal_product_gap(
    replicates: &[EmpiricalMeasure],
    phis: &[TestFn<'_>],
    m_k: &GridDensity,
) -> Result<GapEstimate> {
    let p = phis.len();
    if p == 0 || p > 2 {
        return Err(Error::Config("product gap supports p = 1 or p = 2".into()));
    }
    if replicates.len() < 2 {
        return Err(Error::Config("need at least two replicates".into()));
    }
    let grid = m_k.grid();
    let masses = m_k.masses();
    let target: f64 = phis
        .iter()
        .map(|phi| (0..grid.len()).map(|i| masses[i] * phi(&grid.center(i))).sum::<f64>())
        .product();
    let stats: Vec<f64> = replicates
        .iter()
        .map(|pos| {
            let n = pos.len() as f64;
            let a: Vec<f64> = pos.points().map(|x| phis[0](x)).collect();
            if p == 1 {
                return a.iter().sum::<f64>() / n;
            }
            let b: Vec<f64> = pos.points().map(|x| phis[1](x)).collect();
            let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
            let diag: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
            (sa * sb - diag) / (n * (n - 1.0))
        })
        .collect();
    let r = stats.len() as f64;
    let mean = stats.iter().sum::<f64>() / r;
    let var = stats.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r - 1.0);
    Ok(GapEstimate { gap: (mean - target).abs(), std_err: (var / r).sqrt(), replicates: stats.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Discretization;
    use crate::kernels::{derive_constants, KernelParams};
    use crate::measures::tv_distance;
    use crate::metropolis::MPsiOperator;
    use crate::operators::MarkovOperator;

    fn model(cells: usize) -> Model {
        let params = KernelParams::default();
        let dom = BoxDomain::unit(1, 8.0 * params.max_field_sigma()).unwrap();
        let bank = derive_constants(params, &dom).unwrap();
        Model::new(Discretization::new(dom, cells).unwrap(), bank)
    }

    fn init() -> InitialCondition {
        InitialCondition {
            m0: InitialMeasure::TruncatedGaussian { mean: vec![0.3], sigma: 0.2 },
            eta0: GaussianMixture::single(vec![0.6], 0.3).unwrap(),
        }
    }

    #[test]
    fn single_decoupled_agent_is_a_q_chain() {
        let mdl = model(64);
        let s = AgentState::initial(&mdl, &init(), 1, 3, FieldMode::Grid).unwrap();
        let next = system_step(&mdl, &s, 0.0, 0.0).unwrap();
        // Same stream through the plain Q sampler gives the same move.
        let mut rng = s.streams[0].clone();
        let y = crate::kernels::q_sample(s.positions.point(0), mdl.bank(), mdl.disc().domain(), &mut rng).unwrap();
        assert_eq!(next.positions.point(0), &y[..]);
        let PotentialField::Grid(eta) = &s.field else { panic!() };
        let PotentialField::Grid(eta1) = &next.field else { panic!() };
        let diffused = mdl.field_ops().p.push(&eta.masses());
        for (a, b) in eta1.masses().iter().zip(&diffused) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn field_uses_pre_move_positions() {
        let mdl = model(64);
        let s = AgentState::initial(&mdl, &init(), 5, 1, FieldMode::Grid).unwrap();
        let next = system_step(&mdl, &s, 1.0, 0.5).unwrap();
        let (dep, _) = mdl.deposit(&s.positions, mdl.bank().params.pprime_sigma);
        let expected = GridDensity::from_masses(mdl.field_grid().clone(), Support::Field, &dep).unwrap();
        let PotentialField::Grid(g) = &next.field else { panic!() };
        assert!(tv_distance(g, &expected).unwrap() < 1e-14);

        let sm = AgentState::initial(&mdl, &init(), 5, 1, FieldMode::Mixture { budget: 100 }).unwrap();
        let nm = system_step(&mdl, &sm, 1.0, 0.5).unwrap();
        let PotentialField::Mixture(mix) = &nm.field else { panic!() };
        assert_eq!(mix.len(), 5);
        for (c, x) in mix.components().iter().zip(s.positions.points()) {
            assert_eq!(&c.mean[..], x);
        }
    }

    #[test]
    fn conditional_law_matches_pushforward() {
        // 10^4 replicas of one agent started at a fixed cell center, fixed field.
        let mdl = model(64);
        let eta = mdl.field_from_mixture(&GaussianMixture::single(vec![0.8], 0.2).unwrap()).unwrap();
        let lambda = 3.0;
        let x0 = mdl.agent_grid().center(20);
        let reps = 10_000;
        let pos = EmpiricalMeasure::new(1, vec![x0[0]; reps]).unwrap();
        let ids: Vec<u64> = (0..reps as u64).collect();
        let s = AgentState::with_streams(pos, PotentialField::Grid(eta.clone()), 5, &ids).unwrap();
        let next = system_step(&mdl, &s, 0.5, lambda).unwrap();
        let op: MPsiOperator = mdl.m_operator(&eta, lambda).unwrap();
        let row = op.row(20);
        // chi-square over 8 bins of 8 cells
        let mut counts = [0.0f64; 8];
        for p in next.positions.points() {
            counts[((p[0] * 8.0) as usize).min(7)] += 1.0;
        }
        let chi2: f64 = (0..8)
            .map(|b| {
                let e = reps as f64 * row[b * 8..(b + 1) * 8].iter().sum::<f64>();
                (counts[b] - e).powi(2) / e
            })
            .sum();
        // 99.9% quantile of chi-square with 7 degrees of freedom
        assert!(chi2 < 24.32, "chi2 = {chi2}");
    }

    #[test]
    fn runs_are_reproducible_and_horizon_zero_echoes() {
        let mdl = model(64);
        let run = SystemRun {
            n_agents: 20,
            horizon: 3,
            eps: 0.3,
            lambda: 1.0,
            seed: 42,
            mode: FieldMode::Grid,
            snapshots: vec![],
        };
        let a = run_system(&mdl, &init(), &run).unwrap();
        let b = run_system(&mdl, &init(), &run).unwrap();
        assert_eq!(a.len(), 4);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.positions, y.positions);
            assert_eq!(x.field, y.field);
        }
        let zero = run_system(&mdl, &init(), &SystemRun { horizon: 0, ..run.clone() }).unwrap();
        assert_eq!(zero.len(), 1);
        assert_eq!(zero[0].positions, a[0].positions);
    }

    #[test]
    fn permuting_agents_and_streams_permutes_the_outcome() {
        let mdl = model(64);
        let base = AgentState::initial(&mdl, &init(), 8, 9, FieldMode::Grid).unwrap();
        let perm = [3usize, 0, 7, 1, 6, 2, 5, 4];
        let coords: Vec<f64> = perm.iter().flat_map(|&i| base.positions.point(i).to_vec()).collect();
        let ids: Vec<u64> = perm.iter().map(|&i| i as u64).collect();
        let ident: Vec<u64> = (0..8).collect();
        let a = AgentState::with_streams(base.positions.clone(), base.field.clone(), 9, &ident).unwrap();
        let b = AgentState::with_streams(EmpiricalMeasure::new(1, coords).unwrap(), base.field.clone(), 9, &ids).unwrap();
        let (mut sa, mut sb) = (a, b);
        for _ in 0..3 {
            sa = system_step(&mdl, &sa, 0.4, 2.0).unwrap();
            sb = system_step(&mdl, &sb, 0.4, 2.0).unwrap();
        }
        for (k, &i) in perm.iter().enumerate() {
            assert!((sa.positions.point(i)[0] - sb.positions.point(k)[0]).abs() < 1e-12);
        }
        let (fa, fb) = (sa.field_grid(&mdl).unwrap(), sb.field_grid(&mdl).unwrap());
        assert!(tv_distance(&fa, &fb).unwrap() < 1e-12);
        assert!((fa.mass() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn mixture_budget_is_enforced() {
        let mdl = model(32);
        let run = SystemRun {
            n_agents: 10,
            horizon: 3,
            eps: 0.5,
            lambda: 0.0,
            seed: 1,
            mode: FieldMode::Mixture { budget: 15 },
            snapshots: vec![3],
        };
        assert!(matches!(run_system(&mdl, &init(), &run), Err(Error::ComponentBudget { .. })));
    }

    #[test]
    fn initial_grid_density_is_exact() {
        let g = GridSpec::uniform(&[0.0], &[1.0], 50).unwrap();
        let m0 = InitialMeasure::TruncatedGaussian { mean: vec![0.3], sigma: 0.2 };
        let d = m0.grid_density(&g).unwrap();
        assert!((d.mass() - 1.0).abs() < 1e-12);
        let z = std_normal_cdf(0.7 / 0.2) - std_normal_cdf(-0.3 / 0.2);
        let first = (std_normal_cdf((0.02 - 0.3) / 0.2) - std_normal_cdf(-0.3 / 0.2)) / z;
        assert!((d.masses()[0] - first).abs() < 1e-12);
    }

    #[test]
    fn product_gap_at_time_zero_is_noise() {
        // i.i.d. start: the gap vanishes up to Monte-Carlo error.
        let mdl = model(64);
        let m0 = init().m0;
        let reps: Vec<EmpiricalMeasure> = (0..200)
            .map(|r| AgentState::initial(&mdl, &init(), 30, 1000 + r, FieldMode::Grid).unwrap().positions)
            .collect();
        let mk = m0.grid_density(mdl.agent_grid()).unwrap();
        let mean = mk.masses().iter().zip(mdl.agent_grid().axis_centers(0)).map(|(m, c)| m * c).sum::<f64>();
        let phi = move |x: &[f64]| x[0] - mean;
        let est = marginal_product_gap(&reps, &[&phi, &phi], &mk).unwrap();
        assert!(est.gap <= 3.0 * est.std_err + 1e-4, "{est:?}");
        let one = marginal_product_gap(&reps, &[&phi], &mk).unwrap();
        assert!(one.gap <= 3.0 * one.std_err + 1e-4, "{one:?}");
    }
}
