//! The implementable particle scheme: the field is carried as a mixture of
//! `2N` Gaussians, refreshed each step by resampling `N` points from the
//! previous field.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{stream, InitialCondition};
use crate::error::{Error, Result};
use crate::geometry::GridSpec;
use crate::measures::{Component, EmpiricalMeasure, GaussianMixture, GridDensity, Support};
use crate::meanfield::Model;
use crate::metropolis::{m_psi_sample, PotentialField};

/// Stream id of the resampling draws (agents use `0..N`).
pub const RESAMPLE_STREAM: u64 = 1 << 63;

#[derive(Debug, Clone)]
pub struct SchemeState {
    pub positions: EmpiricalMeasure,
    pub field: GaussianMixture,
    pub step: usize,
    streams: Vec<ChaCha8Rng>,
    resample: ChaCha8Rng,
}

impl SchemeState {
    /// Agents i.i.d. from `m0`, field `eta0` exactly.
    pub fn initial(model: &Model, init: &InitialCondition, n: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("need at least one agent".into()));
        }
        let dom = model.disc().domain();
        let mut streams: Vec<ChaCha8Rng> = (0..n as u64).map(|i| stream(seed, i)).collect();
        let coords: Vec<f64> = streams.iter_mut().flat_map(|r| init.m0.sample(dom, r)).collect();
        Ok(Self {
            positions: EmpiricalMeasure::new(dom.dim(), coords)?,
            field: init.eta0.clone(),
            step: 0,
            streams,
            resample: stream(seed, RESAMPLE_STREAM),
        })
    }

    /// Explicit state; `seed` feeds the agent and resampling streams.
    pub fn from_parts(positions: EmpiricalMeasure, field: GaussianMixture, seed: u64) -> Self {
        let streams = (0..positions.len() as u64).map(|i| stream(seed, i)).collect();
        Self { positions, field, step: 0, streams, resample: stream(seed, RESAMPLE_STREAM) }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// `N` i.i.d. draws from `mu`, as an empirical measure.
pub fn resample<R: Rng + ?Sized>(mu: &GaussianMixture, n: usize, rng: &mut R) -> Result<EmpiricalMeasure> {
    let sampler = mu.sampler();
    let coords: Vec<f64> = (0..n).flat_map(|_| sampler.sample(rng)).collect();
    EmpiricalMeasure::new(mu.dim(), coords)
}

/// One step: agents move against the current mixture field; the new field is
/// `(1 - eps) S^N(field) P + eps m P'` with `m` the pre-move positions.
/// A block with zero weight is left out (and `eps = 1` draws no resample).
pub fn scheme_step(model: &Model, s: &SchemeState, eps: f64, lambda: f64) -> Result<SchemeState> {
    let dom = model.disc().domain();
    let bank = model.bank();
    let psi = PotentialField::Mixture(s.field.clone());
    let mut streams = s.streams.clone();
    let moved: Vec<Vec<f64>> = streams
        .par_iter_mut()
        .enumerate()
        .map(|(i, rng)| m_psi_sample(s.positions.point(i), &psi, lambda, bank, dom, rng))
        .collect::<Result<_>>()?;
    let positions = EmpiricalMeasure::new(dom.dim(), moved.concat())?;

    let n = s.len();
    let w = 1.0 / n as f64;
    let mut resample_rng = s.resample.clone();
    let mut comps = Vec::with_capacity(2 * n);
    if eps < 1.0 {
        let ys = resample(&s.field, n, &mut resample_rng)?;
        comps.extend(ys.points().map(|y| Component {
            weight: (1.0 - eps) * w,
            mean: y.to_vec(),
            sigma: bank.params.p_sigma,
        }));
    }
    if eps > 0.0 {
        comps.extend(s.positions.points().map(|x| Component {
            weight: eps * w,
            mean: x.to_vec(),
            sigma: bank.params.pprime_sigma,
        }));
    }
    let field = GaussianMixture::from_unnormalized(comps)?;
    Ok(SchemeState { positions, field, step: s.step + 1, streams, resample: resample_rng })
}

/// Closed-form field given the agent history `m_0..m_{k-1}`:
/// `sum_j eps (1-eps)^j m_{k-1-j} P' P^j + (1-eps)^k eta0 P^k`,
/// each `P' P^j` being one Gaussian of variance `sigma'^2 + j sigma^2`.
pub fn exact_field_oracle(
    history: &[EmpiricalMeasure],
    eta0: &GaussianMixture,
    eps: f64,
    p_sigma: f64,
    pprime_sigma: f64,
    budget: usize,
) -> Result<GaussianMixture> {
    let k = history.len();
    let needed = history.iter().map(|m| m.len()).sum::<usize>() + eta0.len();
    if needed > budget {
        return Err(Error::ComponentBudget { needed, budget });
    }
    let mut comps = Vec::with_capacity(needed);
    for j in 0..k {
        let m = &history[k - 1 - j];
        let weight = eps * (1.0 - eps).powi(j as i32) / m.len() as f64;
        let sigma = (pprime_sigma * pprime_sigma + j as f64 * p_sigma * p_sigma).sqrt();
        comps.extend(m.points().map(|x| Component { weight, mean: x.to_vec(), sigma }));
    }
    let tail = (1.0 - eps).powi(k as i32);
    let spread = (k as f64).sqrt() * p_sigma;
    comps.extend(eta0.components().iter().map(|c| Component {
        weight: tail * c.weight,
        mean: c.mean.clone(),
        sigma: c.sigma.hypot(spread),
    }));
    GaussianMixture::from_unnormalized(comps)
}

/// Jensen bound on `E ||(S^N(mu) - mu) P||_TV`:
/// `int sqrt(Var_{Y ~ mu} p(Y, y) / N) dy`, with
/// `E p(Y, y)^2 = (4 pi sigma^2)^{-d/2} (mu * N(0, sigma^2 / 2))(y)`,
/// integrated by the midpoint rule on `grid`.
pub fn resampling_tv_bound(mu: &GaussianMixture, n: usize, p_sigma: f64, grid: &GridSpec) -> f64 {
    let d = mu.dim() as f64;
    let scale = (4.0 * std::f64::consts::PI * p_sigma * p_sigma).powf(-d / 2.0);
    let half = GaussianMixture::new(
        mu.components()
            .iter()
            .map(|c| Component { weight: c.weight, mean: c.mean.clone(), sigma: c.sigma.hypot(p_sigma / 2f64.sqrt()) })
            .collect(),
    )
    .expect("convolution keeps a valid mixture");
    let mean = mu.convolved(p_sigma);
    let vol = grid.cell_volume();
    // collect then sum serially: a rayon sum would depend on the thread count
    let terms: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let y = grid.center(i);
            let mp = mean.eval(&y);
            let var = (scale * half.eval(&y) - mp * mp).max(0.0);
            (var / n as f64).sqrt() * vol
        })
        .collect();
    terms.iter().sum()
}

/// Parameters of one scheme run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeRun {
    pub n_agents: usize,
    pub horizon: usize,
    pub eps: f64,
    pub lambda: f64,
    pub seed: u64,
    /// Steps to record; empty records every step.
    pub snapshots: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct SchemeSnapshot {
    pub step: usize,
    pub positions: EmpiricalMeasure,
    pub field: GaussianMixture,
}

impl SchemeSnapshot {
    pub fn field_grid(&self, model: &Model) -> Result<GridDensity> {
        Ok(self.field.rasterize(model.field_grid(), Support::Field)?.0)
    }
}

pub fn run_scheme(model: &Model, init: &InitialCondition, run: &SchemeRun) -> Result<Vec<SchemeSnapshot>> {
    let mut state = SchemeState::initial(model, init, run.n_agents, run.seed)?;
    let wanted = |k: usize| run.snapshots.is_empty() || run.snapshots.contains(&k);
    let mut out = Vec::new();
    for k in 0..=run.horizon {
        if k > 0 {
            state = scheme_step(model, &state, run.eps, run.lambda)?;
        }
        if wanted(k) {
            out.push(SchemeSnapshot { step: k, positions: state.positions.clone(), field: state.field.clone() });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::InitialMeasure;
    use crate::geometry::{BoxDomain, Discretization};
    use crate::kernels::{derive_constants, KernelParams};
    use crate::meanfield::FieldSource;
    use crate::measures::{sup_distance, tv_distance};
    use rand::SeedableRng;

    fn model(cells: usize) -> Model {
        let params = KernelParams::default();
        let dom = BoxDomain::unit(1, 8.0 * params.max_field_sigma()).unwrap();
        let bank = derive_constants(params, &dom).unwrap();
        Model::new(Discretization::new(dom, cells).unwrap(), bank)
    }

    fn init() -> InitialCondition {
        InitialCondition {
            m0: InitialMeasure::Uniform,
            eta0: GaussianMixture::single(vec![0.5], 0.3).unwrap(),
        }
    }

    #[test]
    fn field_has_two_n_components_with_block_weights() {
        let mdl = model(64);
        let run = SchemeRun { n_agents: 7, horizon: 3, eps: 0.3, lambda: 1.0, seed: 4, snapshots: vec![] };
        let snaps = run_scheme(&mdl, &init(), &run).unwrap();
        assert_eq!(snaps[0].field, init().eta0);
        for s in &snaps[1..] {
            assert_eq!(s.field.len(), 14);
            let (p, pp): (Vec<_>, Vec<_>) = s.field.components().iter().partition(|c| c.sigma == 0.4 && c.weight > 0.05);
            // both kernels share sigma here, so check by weight
            assert_eq!(p.len(), 7);
            assert_eq!(pp.len(), 7);
            assert!(p.iter().all(|c| (c.weight - 0.7 / 7.0).abs() < 1e-15));
            assert!(pp.iter().all(|c| (c.weight - 0.3 / 7.0).abs() < 1e-15));
        }
        let zero = run_scheme(&mdl, &init(), &SchemeRun { horizon: 0, ..run }).unwrap();
        assert_eq!(zero.len(), 1);
    }

    #[test]
    fn full_coupling_ignores_resampling() {
        let mdl = model(64);
        let s = SchemeState::initial(&mdl, &init(), 6, 2).unwrap();
        let next = scheme_step(&mdl, &s, 1.0, 0.5).unwrap();
        assert_eq!(next.field.len(), 6);
        for (c, x) in next.field.components().iter().zip(s.positions.points()) {
            assert_eq!(&c.mean[..], x);
            assert!((c.weight - 1.0 / 6.0).abs() < 1e-15);
        }
    }

    #[test]
    fn resampled_field_is_unbiased() {
        let mdl = model(64);
        let grid = GridSpec::uniform(&[-1.0], &[2.0], 64).unwrap();
        let base = SchemeState::initial(&mdl, &init(), 20, 7).unwrap();
        let s1 = scheme_step(&mdl, &base, 0.4, 1.0).unwrap();
        let eps = 0.4;
        let sp = mdl.bank().params;
        // exact: (1 - eps) field P + eps m P'
        let deposit = GaussianMixture::from_unnormalized(
            s1.positions.points().map(|x| Component { weight: 1.0, mean: x.to_vec(), sigma: sp.pprime_sigma }).collect(),
        )
        .unwrap();
        let exact = s1.field.convolved(sp.p_sigma).blend(1.0 - eps, &deposit).unwrap();
        let reps = 500;
        let mut sum = vec![0.0; grid.len()];
        let mut sum2 = vec![0.0; grid.len()];
        for r in 0..reps {
            let s = SchemeState { resample: stream(100 + r, RESAMPLE_STREAM), ..s1.clone() };
            let next = scheme_step(&mdl, &s, eps, 1.0).unwrap();
            for i in 0..grid.len() {
                let v = next.field.eval(&grid.center(i));
                sum[i] += v;
                sum2[i] += v * v;
            }
        }
        let mut outside = 0;
        for i in 0..grid.len() {
            let mean = sum[i] / reps as f64;
            let sd = (sum2[i] / reps as f64 - mean * mean).max(0.0).sqrt();
            let se = sd / (reps as f64).sqrt();
            if (mean - exact.eval(&grid.center(i))).abs() > 3.0 * se + 1e-12 {
                outside += 1;
            }
        }
        // cells are strongly correlated; allow the nominal 0.3% plus one
        assert!(outside <= 1, "{outside} cells beyond 3 SE");
    }

    #[test]
    fn oracle_expansion() {
        let mdl = model(256);
        let p = mdl.bank().params;
        let eta0 = GaussianMixture::single(vec![0.5], 0.3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let hist: Vec<EmpiricalMeasure> = (0..3)
            .map(|_| EmpiricalMeasure::new(1, (0..5).map(|_| rng.random::<f64>()).collect()).unwrap())
            .collect();
        let eps = 0.3;
        // k = 1: one-term expansion
        let one = exact_field_oracle(&hist[..1], &eta0, eps, p.p_sigma, p.pprime_sigma, 100).unwrap();
        let dep = GaussianMixture::from_unnormalized(
            hist[0].points().map(|x| Component { weight: 1.0, mean: x.to_vec(), sigma: p.pprime_sigma }).collect(),
        )
        .unwrap();
        let direct = eta0.convolved(p.p_sigma).blend(1.0 - eps, &dep).unwrap();
        for y in [-0.5, 0.2, 0.9, 1.7] {
            assert!((one.eval(&[y]) - direct.eval(&[y])).abs() < 1e-14);
        }
        // variance collapse of P' P^2
        let three = exact_field_oracle(&hist, &eta0, eps, p.p_sigma, p.pprime_sigma, 100).unwrap();
        let oldest = &three.components()[10];
        assert!((oldest.sigma - (p.pprime_sigma.powi(2) + 2.0 * p.p_sigma.powi(2)).sqrt()).abs() < 1e-15);
        assert!(exact_field_oracle(&hist, &eta0, eps, p.p_sigma, p.pprime_sigma, 10).is_err());

        // grid recursion on the same history
        let mut eta = mdl.field_from_mixture(&eta0).unwrap();
        for m in &hist {
            eta = mdl.field_update(&eta, FieldSource::Empirical(m), eps).unwrap().0;
        }
        let raster = mdl.field_from_mixture(&three).unwrap();
        assert!(sup_distance(&raster, &eta).unwrap() <= 1e-4);
    }

    #[test]
    fn resampling_bound_dominates_observed_error() {
        let mdl = model(128);
        let mu = GaussianMixture::new(vec![
            Component { weight: 0.5, mean: vec![0.2], sigma: 0.3 },
            Component { weight: 0.5, mean: vec![0.9], sigma: 0.5 },
        ])
        .unwrap();
        let n = 50;
        let sp = mdl.bank().params.p_sigma;
        let bound = resampling_tv_bound(&mu, n, sp, mdl.field_grid());
        let (exact, _) = mu.convolved(sp).rasterize(mdl.field_grid(), Support::Field).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let reps = 100;
        let mut total = 0.0;
        for _ in 0..reps {
            let ys = resample(&mu, n, &mut rng).unwrap();
            let (dep, _) = mdl.deposit(&ys, sp);
            let g = GridDensity::from_masses(mdl.field_grid().clone(), Support::Field, &dep).unwrap();
            total += tv_distance(&g, &exact).unwrap();
        }
        let mean = total / reps as f64;
        assert!(mean <= bound, "{mean} > {bound}");
        assert!(mean > 0.5 * bound, "bound should not be vacuous: {mean} vs {bound}");
    }

    #[test]
    fn reproducible() {
        let mdl = model(64);
        let run = SchemeRun { n_agents: 10, horizon: 3, eps: 0.2, lambda: 2.0, seed: 5, snapshots: vec![3] };
        let a = run_scheme(&mdl, &init(), &run).unwrap();
        let b = run_scheme(&mdl, &init(), &run).unwrap();
        assert_eq!(a[0].field, b[0].field);
        assert_eq!(a[0].positions, b[0].positions);
    }
}
