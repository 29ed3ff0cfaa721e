use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::grid::{GridDensity, Support};
use crate::error::{Error, Result};
use crate::geometry::GridSpec;
use crate::kernels::{gaussian_sup, std_normal_cdf};

/// One isotropic Gaussian component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub sigma: f64,
}

/// Weighted isotropic Gaussian components on `R^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture {
    dim: usize,
    components: Vec<Component>,
}

impl GaussianMixture {
    pub fn new(components: Vec<Component>) -> Result<Self> {
        let dim = components.first().map_or(0, |c| c.mean.len());
        if dim == 0 {
            return Err(Error::Config("mixture needs at least one component".into()));
        }
        for c in &components {
            if c.mean.len() != dim {
                return Err(Error::Config("mixture components of mixed dimension".into()));
            }
            if !(c.sigma.is_finite() && c.sigma > 0.0) || !(c.weight.is_finite() && c.weight > 0.0) {
                return Err(Error::Config(format!(
                    "mixture component needs positive weight and sigma (weight {}, sigma {})",
                    c.weight, c.sigma
                )));
            }
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("mixture weights sum to {total}, not 1")));
        }
        Ok(Self { dim, components })
    }

    /// Rescales the weights to sum to one (dropping zero weights) and validates.
    pub fn from_unnormalized(mut components: Vec<Component>) -> Result<Self> {
        components.retain(|c| c.weight > 0.0);
        let total: f64 = components.iter().map(|c| c.weight).sum();
        for c in &mut components {
            c.weight /= total;
        }
        Self::new(components)
    }

    pub fn single(mean: Vec<f64>, sigma: f64) -> Result<Self> {
        Self::new(vec![Component { weight: 1.0, mean, sigma }])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// Law of `X + Z` with `X` from the mixture and independent `Z ~ N(0, s^2 I)`.
    pub fn convolved(&self, s: f64) -> Self {
        let components = self
            .components
            .iter()
            .map(|c| Component { weight: c.weight, mean: c.mean.clone(), sigma: c.sigma.hypot(s) })
            .collect();
        Self { dim: self.dim, components }
    }

    /// `a * self + (1 - a) * other`, dropping a block whose weight is zero.
    pub fn blend(&self, a: f64, other: &GaussianMixture) -> Result<Self> {
        fn scaled(m: &GaussianMixture, w: f64) -> impl Iterator<Item = Component> + '_ {
            m.components.iter().map(move |c| Component { weight: w * c.weight, ..c.clone() })
        }
        let mut comps: Vec<Component> = Vec::new();
        if a > 0.0 {
            comps.extend(scaled(self, a));
        }
        if a < 1.0 {
            comps.extend(scaled(other, 1.0 - a));
        }
        Self::new(comps)
    }

    pub fn eval(&self, y: &[f64]) -> f64 {
        self.components
            .iter()
            .map(|c| {
                let r2: f64 = c.mean.iter().zip(y).map(|(m, v)| (m - v) * (m - v)).sum();
                c.weight * gaussian_sup(c.sigma, self.dim) * (-0.5 * r2 / (c.sigma * c.sigma)).exp()
            })
            .sum()
    }

    pub fn sampler(&self) -> MixtureSampler<'_> {
        let index = WeightedIndex::new(self.components.iter().map(|c| c.weight))
            .expect("validated mixture has positive weights");
        MixtureSampler { mixture: self, index }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.sampler().sample(rng)
    }

    /// Evaluates on the cell centers and renormalizes over the lattice;
    /// also returns the exact mass outside the lattice box.
    pub fn rasterize(&self, grid: &GridSpec, support: Support) -> Result<(GridDensity, f64)> {
        let d = grid.dim();
        if d != self.dim {
            return Err(Error::GridMismatch("mixture and lattice dimensions differ".into()));
        }
        let mut values = vec![0.0; grid.len()];
        let axes: Vec<Vec<f64>> = (0..d).map(|a| grid.axis_centers(a)).collect();
        let mut per_axis: Vec<Vec<f64>> = vec![Vec::new(); d];
        for c in &self.components {
            for a in 0..d {
                let s = c.sigma;
                per_axis[a] = axes[a]
                    .iter()
                    .map(|x| {
                        let z = (x - c.mean[a]) / s;
                        (-0.5 * z * z).exp()
                    })
                    .collect();
            }
            let scale = c.weight * gaussian_sup(c.sigma, d);
            for (i, v) in values.iter_mut().enumerate() {
                let mut w = scale;
                let mut rem = i;
                for a in (0..d).rev() {
                    let n = grid.cells()[a];
                    w *= per_axis[a][rem % n];
                    rem /= n;
                }
                *v += w;
            }
        }
        let mut dens = GridDensity::new(grid.clone(), support, values)?;
        dens.normalize();
        let upper: Vec<f64> = (0..d).map(|a| grid.upper(a)).collect();
        let outside = (1.0 - self.box_mass(grid.lower(), &upper)).clamp(0.0, 1.0);
        Ok((dens, outside))
    }

    /// Exact probability of the box `prod [lower_a, upper_a]`.
    pub fn box_mass(&self, lower: &[f64], upper: &[f64]) -> f64 {
        self.components
            .iter()
            .map(|c| {
                c.weight
                    * (0..self.dim)
                        .map(|a| {
                            std_normal_cdf((upper[a] - c.mean[a]) / c.sigma)
                                - std_normal_cdf((lower[a] - c.mean[a]) / c.sigma)
                        })
                        .product::<f64>()
            })
            .sum()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: GaussianMixture = serde_json::from_str(s)?;
        Self::new(raw.components)
    }
}

/// Categorical-then-Gaussian sampler with a prebuilt component index.
pub struct MixtureSampler<'a> {
    mixture: &'a GaussianMixture,
    index: WeightedIndex<f64>,
}

impl MixtureSampler<'_> {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let c = &self.mixture.components[self.index.sample(rng)];
        c.mean
            .iter()
            .map(|m| {
                let z: f64 = rng.sample(StandardNormal);
                m + c.sigma * z
            })
            .collect()
    }
}
