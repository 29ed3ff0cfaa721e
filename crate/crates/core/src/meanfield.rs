//! The deterministic map `Phi(m, eta) = (m M^eta, eta R_m)` on lattice
//! measures, its fixed point, and the contraction constants that control it.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BoxDomain, Discretization, GridSpec};
use crate::kernels::KernelBank;
use crate::measures::{tv_distance, Component, EmpiricalMeasure, GaussianMixture, GridDensity, Support};
use crate::metropolis::MPsiOperator;
use crate::operators::{AxisKernel, FieldOperators, MarkovOperator, MixtureKernel};

/// Lattices, kernels and their lattice operators, built once per run.
#[derive(Debug, Clone)]
pub struct Model {
    disc: Discretization,
    bank: KernelBank,
    field_ops: FieldOperators,
    q: MixtureKernel,
    q0: MixtureKernel,
    p_leak: Vec<f64>,
    pprime_leak: Vec<f64>,
}

/// The measure that feeds the `P'` term of a field update.
#[derive(Debug, Clone, Copy)]
pub enum FieldSource<'a> {
    Grid(&'a GridDensity),
    Empirical(&'a EmpiricalMeasure),
}

impl Model {
    pub fn new(disc: Discretization, bank: KernelBank) -> Self {
        let field_ops = FieldOperators::new(&disc, &bank);
        let q = MixtureKernel::q(disc.agent_grid(), &bank);
        let q0 = MixtureKernel::q0(disc.agent_grid(), &bank);
        let f = disc.field_grid();
        let leak_of = |op: &crate::operators::SeparableOperator| -> Vec<f64> {
            (0..f.len()).map(|i| op.leak(&f.unravel(i))).collect()
        };
        let p_leak = leak_of(&field_ops.p);
        let pprime_leak = leak_of(&field_ops.pprime);
        Self { disc, bank, field_ops, q, q0, p_leak, pprime_leak }
    }

    pub fn disc(&self) -> &Discretization {
        &self.disc
    }

    pub fn bank(&self) -> &KernelBank {
        &self.bank
    }

    pub fn agent_grid(&self) -> &GridSpec {
        self.disc.agent_grid()
    }

    pub fn field_grid(&self) -> &GridSpec {
        self.disc.field_grid()
    }

    pub fn q(&self) -> &MixtureKernel {
        &self.q
    }

    pub fn q0(&self) -> &MixtureKernel {
        &self.q0
    }

    pub fn field_ops(&self) -> &FieldOperators {
        &self.field_ops
    }

    /// Rasterized Gaussian mixture on the field lattice.
    pub fn field_from_mixture(&self, mix: &GaussianMixture) -> Result<GridDensity> {
        Ok(mix.rasterize(self.field_grid(), Support::Field)?.0)
    }

    /// Field values at the centers of the agent cells (exact on the aligned lattice).
    pub fn psi_on_agents(&self, eta: &GridDensity) -> Result<Vec<f64>> {
        if !eta.grid().same_as(self.field_grid()) {
            return Err(Error::GridMismatch("field does not live on the model's field lattice".into()));
        }
        Ok(self.disc.restrict(eta.values()))
    }

    /// `M^eta` as a lattice operator on `E`.
    pub fn m_operator(&self, eta: &GridDensity, lambda: f64) -> Result<MPsiOperator<'_>> {
        Ok(MPsiOperator::new(&self.q, &self.q0, self.psi_on_agents(eta)?, lambda))
    }

    /// Cell masses of `m P'` on the field lattice, and the fraction of the
    /// untruncated Gaussians that falls outside the box.
    pub fn pprime_masses(&self, source: FieldSource<'_>) -> Result<(Vec<f64>, f64)> {
        match source {
            FieldSource::Grid(m) => {
                if !m.grid().same_as(self.agent_grid()) {
                    return Err(Error::GridMismatch("agent measure is not on the agent lattice".into()));
                }
                let embedded = self.disc.embed(&m.masses());
                let leak = embedded.iter().zip(&self.pprime_leak).map(|(a, b)| a * b).sum();
                Ok((self.field_ops.pprime.push(&embedded), leak))
            }
            FieldSource::Empirical(pts) => Ok(self.deposit(pts, self.bank.params.pprime_sigma)),
        }
    }

    /// `(1/N) sum_i K(X_i, .)` for an isotropic Gaussian `K`, each point's
    /// Gaussian normalized over the field lattice.
    pub fn deposit(&self, pts: &EmpiricalMeasure, sigma: f64) -> (Vec<f64>, f64) {
        let f = self.field_grid();
        let d = f.dim();
        let centers: Vec<Vec<f64>> = (0..d).map(|a| f.axis_centers(a)).collect();
        let rows: Vec<(Vec<Vec<f64>>, f64)> = pts
            .points()
            .collect::<Vec<_>>()
            .par_iter()
            .map(|x| {
                let mut kept = 1.0;
                let axes = (0..d)
                    .map(|a| {
                        let (row, s) = AxisKernel::point_row(x[a], &centers[a], f.width()[a], sigma);
                        kept *= s;
                        row
                    })
                    .collect();
                (axes, kept)
            })
            .collect();
        let w = 1.0 / pts.len() as f64;
        let leak = rows.iter().map(|(_, k)| 1.0 - k).sum::<f64>() * w;
        let out = if d == 1 {
            let mut out = vec![0.0; f.len()];
            for (r, _) in &rows {
                for (o, v) in out.iter_mut().zip(&r[0]) {
                    *o += w * v;
                }
            }
            out
        } else {
            let shape = f.cells().to_vec();
            (0..f.len())
                .into_par_iter()
                .map(|j| {
                    let mut idx = vec![0usize; d];
                    let mut rem = j;
                    for a in (0..d).rev() {
                        idx[a] = rem % shape[a];
                        rem /= shape[a];
                    }
                    rows.iter()
                        .map(|(r, _)| (0..d).map(|a| r[a][idx[a]]).product::<f64>())
                        .sum::<f64>()
                        * w
                })
                .collect()
        };
        (out, leak)
    }

    /// `eta R_m = (1 - eps) eta P + eps m P'`, with the untruncated mass that
    /// the box cut off (a diagnostic; lattice rows are renormalized).
    pub fn field_update(&self, eta: &GridDensity, source: FieldSource<'_>, eps: f64) -> Result<(GridDensity, f64)> {
        if !eta.grid().same_as(self.field_grid()) {
            return Err(Error::GridMismatch("field does not live on the model's field lattice".into()));
        }
        let n = self.field_grid().len();
        let mut out = vec![0.0; n];
        let mut leak = 0.0;
        if eps < 1.0 {
            let mass = eta.masses();
            leak += (1.0 - eps) * mass.iter().zip(&self.p_leak).map(|(a, b)| a * b).sum::<f64>();
            for (o, v) in out.iter_mut().zip(self.field_ops.p.push(&mass)) {
                *o += (1.0 - eps) * v;
            }
        }
        if eps > 0.0 {
            let (dep, l) = self.pprime_masses(source)?;
            leak += eps * l;
            for (o, v) in out.iter_mut().zip(dep) {
                *o += eps * v;
            }
        }
        Ok((GridDensity::from_masses(self.field_grid().clone(), Support::Field, &out)?, leak))
    }
}

/// `(m_n, eta_n)` on the lattices of a [`Model`].
#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldState {
    pub m: GridDensity,
    pub eta: GridDensity,
    pub step: usize,
    /// Truncation diagnostic of the last field update.
    pub leak: f64,
}

impl MeanFieldState {
    pub fn new(m: GridDensity, eta: GridDensity) -> Self {
        Self { m, eta, step: 0, leak: 0.0 }
    }
}

/// Random smooth mixture with `k` components: means within half a unit of
/// `E`, sigmas in `[0.1, 0.6)`.
pub fn random_mixture<R: Rng + ?Sized>(dom: &BoxDomain, k: usize, rng: &mut R) -> Result<GaussianMixture> {
    let comps = (0..k)
        .map(|_| Component {
            weight: rng.random_range(0.2..1.0),
            mean: (0..dom.dim()).map(|a| rng.random_range(dom.lower()[a] - 0.5..dom.upper()[a] + 0.5)).collect(),
            sigma: rng.random_range(0.1..0.6),
        })
        .collect();
    GaussianMixture::from_unnormalized(comps)
}

/// Random state: `m` a sum of three bumps on a floor, `eta` a two-component mixture.
pub fn random_state<R: Rng + ?Sized>(model: &Model, rng: &mut R) -> Result<MeanFieldState> {
    let dom = model.disc().domain();
    let bumps: Vec<(Vec<f64>, f64)> = (0..3)
        .map(|_| {
            let c = (0..dom.dim()).map(|a| rng.random_range(dom.lower()[a]..dom.upper()[a])).collect();
            (c, rng.random_range(0.05..0.5))
        })
        .collect();
    let m = GridDensity::from_fn(model.agent_grid().clone(), Support::Agent, |x| {
        bumps
            .iter()
            .map(|(c, s)| {
                let r2: f64 = c.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
                (-0.5 * r2 / (s * s)).exp()
            })
            .sum::<f64>()
            + 0.01
    })?
    .normalized();
    let eta = model.field_from_mixture(&random_mixture(dom, 2, rng)?)?;
    Ok(MeanFieldState::new(m, eta))
}

/// `||(m, eta) - (m', eta')|| = ||m - m'||_TV + ||eta - eta'||_TV`.
pub fn state_distance(a: &MeanFieldState, b: &MeanFieldState) -> Result<f64> {
    Ok(tv_distance(&a.m, &b.m)? + tv_distance(&a.eta, &b.eta)?)
}

/// One simultaneous application of `Phi`: both components read the old pair.
pub fn phi_step(model: &Model, s: &MeanFieldState, eps: f64, lambda: f64) -> Result<MeanFieldState> {
    let op = model.m_operator(&s.eta, lambda)?;
    let m = GridDensity::from_masses(model.agent_grid().clone(), Support::Agent, &op.push(&s.m.masses()))?;
    let (eta, leak) = model.field_update(&s.eta, FieldSource::Grid(&s.m), eps)?;
    Ok(MeanFieldState { m, eta, step: s.step + 1, leak })
}

/// `Phi^n(s)`, keeping every intermediate state (including `s`).
pub fn iterate(model: &Model, s: &MeanFieldState, eps: f64, lambda: f64, n: usize) -> Result<Vec<MeanFieldState>> {
    let mut out = Vec::with_capacity(n + 1);
    out.push(s.clone());
    for _ in 0..n {
        let next = phi_step(model, out.last().expect("nonempty"), eps, lambda)?;
        out.push(next);
    }
    Ok(out)
}

/// Constants of the two-step contraction of `Phi` at a given `(eps, lambda)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContractionConstants {
    pub eps: f64,
    pub lambda: f64,
    pub eps_q: f64,
    pub beta_pprime: f64,
    pub m_p_pprime: f64,
    /// `max(1 - eps, 1 - eps_Q exp(-lambda M) + eps beta)`.
    pub s: f64,
    /// Smallest `theta` with `s / theta + 4 lambda M / theta^2 <= 1`.
    pub theta: f64,
    /// `4 lambda M / theta`.
    pub kappa: f64,
    /// Largest `lambda` feasible at this `eps` (bisection).
    pub lambda0: f64,
    /// Feasible `eps` interval at this `lambda` (bisection).
    pub eps_min: f64,
    pub eps0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Feasibility {
    Feasible(ContractionConstants),
    /// No `theta < 1` exists; `theta` is the (>= 1) root for reference.
    Infeasible { eps: f64, lambda: f64, s: f64, theta: f64, lambda0: f64 },
}

impl Feasibility {
    pub fn constants(&self) -> Option<&ContractionConstants> {
        match self {
            Feasibility::Feasible(c) => Some(c),
            Feasibility::Infeasible { .. } => None,
        }
    }

    pub fn is_feasible(&self) -> bool {
        self.constants().is_some()
    }
}

fn contraction_s(eps: f64, lambda: f64, bank: &KernelBank) -> f64 {
    let m = bank.derived.m_p_pprime;
    (1.0 - eps).max(1.0 - bank.eps_q() * (-lambda * m).exp() + eps * bank.derived.beta_pprime)
}

/// Positive root of `theta^2 = s theta + 4 lambda M`.
pub fn theta_root(s: f64, lambda: f64, m: f64) -> f64 {
    (s + (s * s + 16.0 * lambda * m).sqrt()) / 2.0
}

fn feasible(eps: f64, lambda: f64, bank: &KernelBank) -> bool {
    let s = contraction_s(eps, lambda, bank);
    s < 1.0 && theta_root(s, lambda, bank.derived.m_p_pprime) < 1.0
}

fn bisect(mut ok: f64, mut bad: f64, pred: impl Fn(f64) -> bool) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (ok + bad);
        if mid == ok || mid == bad {
            break;
        }
        if pred(mid) {
            ok = mid;
        } else {
            bad = mid;
        }
    }
    ok
}

/// Contraction constants, or why there are none. `lambda0` and the
/// `eps` interval are the boundary of the feasible region found by
/// bisection around the configured point.
pub fn compute_constants(eps: f64, lambda: f64, bank: &KernelBank) -> Feasibility {
    let m = bank.derived.m_p_pprime;
    let s = contraction_s(eps, lambda, bank);
    let theta = theta_root(s, lambda, m);
    // 4 lambda M < 1 is necessary, so lambda = 1/(4M) is always infeasible.
    let lambda_hi = 1.0 / (4.0 * m);
    let lambda0 = if feasible(eps, 0.0, bank) { bisect(0.0, lambda_hi, |l| feasible(eps, l, bank)) } else { 0.0 };
    if !(s < 1.0 && theta < 1.0) {
        return Feasibility::Infeasible { eps, lambda, s, theta, lambda0 };
    }
    let eps_min = if feasible(0.0, lambda, bank) { 0.0 } else { bisect(eps, 0.0, |e| feasible(e, lambda, bank)) };
    let eps0 = if feasible(1.0, lambda, bank) { 1.0 } else { bisect(eps, 1.0, |e| feasible(e, lambda, bank)) };
    Feasibility::Feasible(ContractionConstants {
        eps,
        lambda,
        eps_q: bank.eps_q(),
        beta_pprime: bank.derived.beta_pprime,
        m_p_pprime: m,
        s,
        theta,
        kappa: 4.0 * lambda * m / theta,
        lambda0,
        eps_min,
        eps0,
    })
}

/// `theta^{k-1} (2 + kappa + 2 lambda (M_{m0} + M_{Q,Q0})) ||s_0 - s'_0||`.
pub fn merge_bound(c: &ContractionConstants, k: usize, m0_sup: f64, m_q_q0: f64, initial_distance: f64) -> f64 {
    c.theta.powi(k as i32 - 1) * (2.0 + c.kappa + 2.0 * c.lambda * (m0_sup + m_q_q0)) * initial_distance
}

/// One row of a fixed-point trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub k: usize,
    /// `||Phi^{k+1}(s) - Phi^k(s)||`.
    pub alpha: f64,
    /// `(alpha_k + kappa alpha_{k-1}) / (alpha_{k-1} + kappa alpha_{k-2})`, for `k >= 2`.
    pub theta_ratio: Option<f64>,
}

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 10_000;

/// Iterates `Phi` until `||Phi(s) - s|| < tol`. `kappa` (if known) fills the
/// ratio column of the trace.
pub fn fixed_point(
    model: &Model,
    initial: &MeanFieldState,
    eps: f64,
    lambda: f64,
    kappa: Option<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<(MeanFieldState, Vec<TraceRow>)> {
    let mut cur = initial.clone();
    let mut trace: Vec<TraceRow> = Vec::new();
    for k in 0..max_iter {
        let next = phi_step(model, &cur, eps, lambda)?;
        let alpha = state_distance(&cur, &next)?;
        let theta_ratio = match (kappa, k) {
            (Some(kp), k) if k >= 2 => {
                let (a1, a2) = (trace[k - 1].alpha, trace[k - 2].alpha);
                Some((alpha + kp * a1) / (a1 + kp * a2))
            }
            _ => None,
        };
        trace.push(TraceRow { k, alpha, theta_ratio });
        cur = next;
        if alpha < tol {
            return Ok((cur, trace));
        }
    }
    Err(Error::NotConverged { iterations: max_iter, last_error: trace.last().map_or(f64::NAN, |r| r.alpha) })
}

/// Largest violation of `alpha_k + kappa alpha_{k-1} <= theta (alpha_{k-1} + kappa alpha_{k-2})`
/// over `k >= 2` (nonpositive when the inequality holds everywhere).
pub fn lyapunov_excess(alphas: &[f64], c: &ContractionConstants) -> f64 {
    alphas
        .windows(3)
        .map(|w| (w[2] + c.kappa * w[1]) - c.theta * (w[1] + c.kappa * w[0]))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// CSV with columns `k,alpha,theta_ratio`.
pub fn write_trace_csv<W: Write>(trace: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["k", "alpha", "theta_ratio"])?;
    for r in trace {
        let ratio = r.theta_ratio.map_or(String::new(), |v| v.to_string());
        w.write_record([r.k.to_string(), r.alpha.to_string(), ratio])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BoxDomain;
    use crate::kernels::{derive_constants, KernelParams};
    use crate::measures::{oscillation, sup_distance};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model(cells: usize) -> Model {
        let params = KernelParams::default();
        let dom = BoxDomain::unit(1, 8.0 * params.max_field_sigma()).unwrap();
        let bank = derive_constants(params, &dom).unwrap();
        Model::new(Discretization::new(dom, cells).unwrap(), bank)
    }

    fn random_state(model: &Model, rng: &mut ChaCha8Rng) -> MeanFieldState {
        super::random_state(model, rng).unwrap()
    }

    #[test]
    fn theta_closed_form_matches_bisection() {
        for (s, lambda, m) in [(0.8, 0.02, 1.0), (0.5, 0.0, 0.4), (0.95, 0.001, 2.0)] {
            let root = bisect(10.0, 0.0, |t| t * t >= s * t + 4.0 * lambda * m);
            assert!((theta_root(s, lambda, m) - root).abs() < 1e-10);
        }
    }

    #[test]
    fn constants_at_zero_lambda_and_infeasible_lambda() {
        let mdl = model(64);
        let bank = mdl.bank();
        let c = *compute_constants(0.3, 0.0, bank).constants().unwrap();
        let expected = (1.0f64 - 0.3).max(1.0 - bank.eps_q() + 0.3 * bank.derived.beta_pprime);
        assert!((c.theta - expected).abs() < 1e-15);
        assert_eq!(c.kappa, 0.0);
        assert!(!compute_constants(0.3, 1.0, bank).is_feasible());
        assert!(!compute_constants(0.0, 0.0, bank).is_feasible());

        let c = *compute_constants(0.3, 0.02, bank).constants().unwrap();
        assert!(c.s / c.theta + 4.0 * c.lambda * c.m_p_pprime / (c.theta * c.theta) <= 1.0 + 1e-12);
        // The feasible eps interval at fixed lambda is (4 lambda M, (1 - 4 lambda M - c) / beta).
        let four = 4.0 * 0.02 * c.m_p_pprime;
        let cq = 1.0 - bank.eps_q() * (-0.02 * c.m_p_pprime).exp();
        assert!((c.eps_min - four).abs() < 1e-9);
        assert!((c.eps0 - (1.0 - four - cq) / c.beta_pprime).abs() < 1e-9);
        assert!(c.lambda0 > 0.02 && !compute_constants(0.3, c.lambda0 * 1.001, bank).is_feasible());
    }

    #[test]
    fn degenerate_coupling() {
        let mdl = model(64);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = random_state(&mdl, &mut rng);
        let next = phi_step(&mdl, &s, 0.0, 0.0).unwrap();
        let diffused = mdl.field_ops().p.push(&s.eta.masses());
        let m_q = mdl.q().push(&s.m.masses());
        for (a, b) in next.eta.masses().iter().zip(&diffused) {
            assert!((a - b).abs() < 1e-15);
        }
        for (a, b) in next.m.masses().iter().zip(&m_q) {
            assert!((a - b).abs() < 1e-15);
        }
        let other = random_state(&mdl, &mut rng);
        let mixed = MeanFieldState::new(s.m.clone(), other.eta.clone());
        let a = phi_step(&mdl, &s, 1.0, 0.5).unwrap();
        let b = phi_step(&mdl, &mixed, 1.0, 0.5).unwrap();
        assert_eq!(a.eta, b.eta);
    }

    #[test]
    fn phi_preserves_mass_and_bounds_oscillation() {
        let mdl = model(128);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = mdl.bank().derived.m_p_pprime;
        for _ in 0..5 {
            let s = random_state(&mdl, &mut rng);
            let next = phi_step(&mdl, &s, rng.random_range(0.0..1.0), rng.random_range(0.0..3.0)).unwrap();
            assert!((next.m.mass() - 1.0).abs() < 1e-8);
            assert!((next.eta.mass() - 1.0).abs() < 1e-8);
            assert!(oscillation(&next.eta) <= m + 1e-12);
            assert!((0.0..1e-4).contains(&next.leak));
        }
    }

    #[test]
    fn diffusion_of_a_gaussian_is_gaussian() {
        let mdl = model(256);
        let sigma1 = 0.3;
        let eta = mdl.field_from_mixture(&GaussianMixture::single(vec![0.4], sigma1).unwrap()).unwrap();
        let pts = EmpiricalMeasure::new(1, vec![0.5]).unwrap();
        let (out, _) = mdl.field_update(&eta, FieldSource::Empirical(&pts), 0.0).unwrap();
        let sp = mdl.bank().params.p_sigma;
        let exact = mdl
            .field_from_mixture(&GaussianMixture::single(vec![0.4], (sigma1 * sigma1 + sp * sp).sqrt()).unwrap())
            .unwrap();
        assert!(sup_distance(&out, &exact).unwrap() <= 1e-4);
    }

    #[test]
    fn empirical_source_with_full_coupling_is_the_deposit() {
        let mdl = model(64);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = random_state(&mdl, &mut rng);
        let pts = EmpiricalMeasure::new(1, vec![0.1, 0.5, 0.55]).unwrap();
        let (out, _) = mdl.field_update(&s.eta, FieldSource::Empirical(&pts), 1.0).unwrap();
        let sp = mdl.bank().params.pprime_sigma;
        let direct = |y: f64| {
            pts.points()
                .map(|x| crate::kernels::gaussian_pdf(x, &[y], sp))
                .sum::<f64>()
                / 3.0
        };
        for (i, v) in out.values().iter().enumerate() {
            assert!((v - direct(mdl.field_grid().center(i)[0])).abs() < 1e-9);
        }
    }

    #[test]
    fn field_update_is_lipschitz() {
        let mdl = model(128);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let l = mdl.bank().derived.l_bar_p_pprime;
        let w = mdl.field_grid().width()[0];
        for _ in 0..5 {
            let s = random_state(&mdl, &mut rng);
            let (eta, _) = mdl.field_update(&s.eta, FieldSource::Grid(&s.m), 0.4).unwrap();
            let worst = eta.values().windows(2).map(|p| (p[1] - p[0]).abs() / w).fold(0.0, f64::max);
            assert!(worst <= l, "{worst} > {l}");
        }
    }

    #[test]
    fn one_step_field_contraction() {
        let mdl = model(64);
        let beta = mdl.bank().derived.beta_pprime;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let (a, b) = (random_state(&mdl, &mut rng), random_state(&mdl, &mut rng));
            let eps = rng.random_range(0.0..1.0);
            let (ea, _) = mdl.field_update(&a.eta, FieldSource::Grid(&a.m), eps).unwrap();
            let (eb, _) = mdl.field_update(&b.eta, FieldSource::Grid(&b.m), eps).unwrap();
            let lhs = tv_distance(&ea, &eb).unwrap();
            let rhs = (1.0 - eps) * tv_distance(&a.eta, &b.eta).unwrap() + eps * beta * tv_distance(&a.m, &b.m).unwrap();
            assert!(lhs <= rhs + 1e-10);
        }
    }

    #[test]
    fn fixed_point_trace_and_uniqueness() {
        let mdl = model(64);
        let c = *compute_constants(0.3, 0.02, mdl.bank()).constants().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (a, b) = (random_state(&mdl, &mut rng), random_state(&mdl, &mut rng));
        let (fa, ta) = fixed_point(&mdl, &a, c.eps, c.lambda, Some(c.kappa), 1e-9, 5000).unwrap();
        let (fb, _) = fixed_point(&mdl, &b, c.eps, c.lambda, Some(c.kappa), 1e-9, 5000).unwrap();
        assert!(state_distance(&fa, &fb).unwrap() < 2e-8);
        let alphas: Vec<f64> = ta.iter().map(|r| r.alpha).collect();
        assert!(lyapunov_excess(&alphas, &c) <= 1e-10);
        let mut buf = Vec::new();
        write_trace_csv(&ta[..3], &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("k,alpha,theta_ratio\n0,"));
    }

    #[test]
    fn two_trajectories_contract() {
        let mdl = model(64);
        let c = *compute_constants(0.3, 0.02, mdl.bank()).constants().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..3 {
            let (a, b) = (random_state(&mdl, &mut rng), random_state(&mdl, &mut rng));
            let ta = iterate(&mdl, &a, c.eps, c.lambda, 10).unwrap();
            let tb = iterate(&mdl, &b, c.eps, c.lambda, 10).unwrap();
            let d0 = state_distance(&a, &b).unwrap();
            for n in 1..=10 {
                let dn = state_distance(&ta[n], &tb[n]).unwrap();
                assert!(dn <= 4.0 * c.theta.powi(n as i32 - 1) + 1e-10);
                let bound = merge_bound(&c, n, a.m.max_value(), mdl.bank().derived.m_q_q0, d0);
                assert!(dn <= bound + 1e-10);
            }
        }
    }

    #[test]
    fn fixed_point_reports_non_convergence() {
        let mdl = model(32);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s = random_state(&mdl, &mut rng);
        let err = fixed_point(&mdl, &s, 0.3, 0.02, None, 1e-12, 3).unwrap_err();
        assert!(matches!(err, Error::NotConverged { iterations: 3, .. }));
    }
}
