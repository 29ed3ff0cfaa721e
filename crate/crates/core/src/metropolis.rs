//! The potential-biased agent kernel
//! `M^Psi(x, dy) = Q(x, dy) a(x, y) + Q0(x, dy) (1 - int Q(x, dz) a(x, z))`
//! with `a(x, y) = exp(-lambda (Psi(x) - Psi(y))_+)`.

use rand::Rng;
use rayon::prelude::*;

use crate::error::Result;
use crate::geometry::{BoxDomain, GridSpec};
use crate::kernels::{q0_sample, q_sample, KernelBank};
use crate::measures::{oscillation, GaussianMixture, GridDensity};
use crate::operators::{MarkovOperator, MixtureKernel};

/// Acceptance probability of a move from potential `psi_x` to `psi_y`.
pub fn accept_weight(psi_x: f64, psi_y: f64, lambda: f64) -> f64 {
    (-lambda * (psi_x - psi_y).max(0.0)).exp()
}

/// A potential that can be evaluated anywhere in the field box.
#[derive(Debug, Clone, PartialEq)]
pub enum PotentialField {
    /// Multilinear interpolation between cell centers.
    Grid(GridDensity),
    Mixture(GaussianMixture),
}

impl PotentialField {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            PotentialField::Grid(g) => g.interpolate(x),
            PotentialField::Mixture(m) => m.eval(x),
        }
    }

    /// Values at the cell centers of `grid`.
    pub fn values_on(&self, grid: &GridSpec) -> Vec<f64> {
        (0..grid.len())
            .into_par_iter()
            .map(|i| self.eval(&grid.center(i)))
            .collect()
    }

    /// Oscillation over the cell centers of `grid` (the stored lattice for
    /// grid fields).
    pub fn oscillation_on(&self, grid: &GridSpec) -> f64 {
        match self {
            PotentialField::Grid(g) if g.grid().same_as(grid) => oscillation(g),
            _ => {
                let v = self.values_on(grid);
                let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
                hi - lo
            }
        }
    }
}

/// One draw from `M^Psi(x, .)`: propose `Y ~ Q(x, .)`, accept with
/// probability `a(x, Y)`, otherwise return an independent `Q0(x, .)` draw.
pub fn m_psi_sample<R: Rng + ?Sized>(
    x: &[f64],
    psi: &PotentialField,
    lambda: f64,
    bank: &KernelBank,
    dom: &BoxDomain,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let y = q_sample(x, bank, dom, rng)?;
    let u: f64 = rng.random();
    if lambda == 0.0 || u < accept_weight(psi.eval(x), psi.eval(&y), lambda) {
        Ok(y)
    } else {
        q0_sample(x, bank, dom, rng)
    }
}

/// `M^Psi` as a lattice operator on the cells of `E`, with `Psi` read at the
/// cell centers. Rows are exactly stochastic: the rejection mass of each row
/// is the complement of its own accepted mass.
pub struct MPsiOperator<'a> {
    q: &'a MixtureKernel,
    q0: &'a MixtureKernel,
    psi: Vec<f64>,
    lambda: f64,
    reject: Vec<f64>,
}

impl<'a> MPsiOperator<'a> {
    pub fn new(q: &'a MixtureKernel, q0: &'a MixtureKernel, psi: Vec<f64>, lambda: f64) -> Self {
        assert_eq!(psi.len(), q.len());
        let reject = (0..q.len())
            .into_par_iter()
            .map(|i| {
                let accepted: f64 = (0..q.len())
                    .map(|j| q.entry(i, j) * accept_weight(psi[i], psi[j], lambda))
                    .sum();
                (1.0 - accepted).max(0.0)
            })
            .collect();
        Self { q, q0, psi, lambda, reject }
    }

    pub fn psi(&self) -> &[f64] {
        &self.psi
    }

    /// Rejection probability of each row.
    pub fn rejection(&self) -> &[f64] {
        &self.reject
    }

    fn accepted(&self, i: usize, j: usize) -> f64 {
        self.q.entry(i, j) * accept_weight(self.psi[i], self.psi[j], self.lambda)
    }

    /// `(M^Psi f)(x_i)` for a function given by its cell values.
    pub fn apply_function(&self, f: &[f64]) -> Vec<f64> {
        let q0f = self.q0.apply_function(f);
        (0..self.q.len())
            .into_par_iter()
            .map(|i| {
                let acc: f64 = f.iter().enumerate().map(|(j, fj)| self.accepted(i, j) * fj).sum();
                acc + self.reject[i] * q0f[i]
            })
            .collect()
    }
}

impl MarkovOperator for MPsiOperator<'_> {
    fn source_len(&self) -> usize {
        self.q.len()
    }

    fn target_len(&self) -> usize {
        self.q.len()
    }

    fn push(&self, mass: &[f64]) -> Vec<f64> {
        let rejected: Vec<f64> = mass.iter().zip(&self.reject).map(|(m, r)| m * r).collect();
        let from_q0 = self.q0.push(&rejected);
        let sources: Vec<usize> = (0..mass.len()).filter(|&i| mass[i] != 0.0).collect();
        (0..self.q.len())
            .into_par_iter()
            .map(|j| sources.iter().map(|&i| mass[i] * self.accepted(i, j)).sum::<f64>() + from_q0[j])
            .collect()
    }

    fn row(&self, i: usize) -> Vec<f64> {
        let q0 = self.q0.row(i);
        (0..self.q.len())
            .map(|j| self.accepted(i, j) + self.reject[i] * q0[j])
            .collect()
    }
}

/// `m M^Psi` for a density on the agent lattice.
pub fn m_psi_pushforward(
    m: &GridDensity,
    psi: &PotentialField,
    lambda: f64,
    q: &MixtureKernel,
    q0: &MixtureKernel,
) -> Result<GridDensity> {
    let op = MPsiOperator::new(q, q0, psi.values_on(m.grid()), lambda);
    GridDensity::from_masses(m.grid().clone(), m.support(), &op.push(&m.masses()))
}

/// Lipschitz constant of `x -> M^eta f(x)` over `|f| <= 1` when `eta` is
/// `l_eta`-Lipschitz.
pub fn m_psi_lipschitz_bound(bank: &KernelBank, lambda: f64, l_eta: f64) -> f64 {
    bank.derived.l_q_q0 * (3.0 + 2.0 * lambda * l_eta)
}

/// Dobrushin floor `1 - eps_Q exp(-lambda osc)` of `M^eta`.
pub fn m_psi_contraction_bound(bank: &KernelBank, lambda: f64, osc: f64) -> f64 {
    1.0 - bank.eps_q() * (-lambda * osc).exp()
}
