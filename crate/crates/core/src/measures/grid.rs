use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::GridSpec;

/// Which box a lattice density lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Support {
    /// The agent domain `E`.
    Agent,
    /// The truncated field box.
    Field,
}

/// Nonnegative density (w.r.t. Lebesgue) stored at the cell centers of a lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    grid: GridSpec,
    support: Support,
    values: Vec<f64>,
}

impl GridDensity {
    pub fn new(grid: GridSpec, support: Support, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for a lattice of {} cells",
                values.len(),
                grid.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Config(format!("density values must be finite and nonnegative, found {v}")));
        }
        Ok(Self { grid, support, values })
    }

    pub fn from_fn(grid: GridSpec, support: Support, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let values = (0..grid.len()).map(|i| f(&grid.center(i))).collect();
        Self::new(grid, support, values)
    }

    /// Builds a density from cell masses.
    pub fn from_masses(grid: GridSpec, support: Support, masses: &[f64]) -> Result<Self> {
        let vol = grid.cell_volume();
        // Signed round-off from operator sums is clipped at zero.
        let values = masses.iter().map(|m| (m / vol).max(0.0)).collect();
        Self::new(grid, support, values)
    }

    pub fn uniform(grid: GridSpec, support: Support) -> Self {
        let total = grid.cell_volume() * grid.len() as f64;
        let values = vec![1.0 / total; grid.len()];
        Self { grid, support, values }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn support(&self) -> Support {
        self.support
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn masses(&self) -> Vec<f64> {
        let vol = self.grid.cell_volume();
        self.values.iter().map(|v| v * vol).collect()
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }

    /// Rescales to unit mass and returns the mass before rescaling.
    pub fn normalize(&mut self) -> f64 {
        let m = self.mass();
        if m > 0.0 {
            self.values.iter_mut().for_each(|v| *v /= m);
        }
        m
    }

    pub fn normalized(mut self) -> Self {
        self.normalize();
        self
    }

    /// Largest density value.
    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Multilinear interpolation between cell centers, constant beyond the
    /// outermost centers.
    pub fn interpolate(&self, x: &[f64]) -> f64 {
        let d = self.grid.dim();
        let mut base = 0usize;
        let mut frac = [0.0f64; 8];
        let mut stride = [0usize; 8];
        let mut single = [false; 8];
        debug_assert!(d <= 8);
        for a in 0..d {
            let n = self.grid.cells()[a];
            let t = (x[a] - self.grid.lower()[a]) / self.grid.width()[a] - 0.5;
            stride[a] = self.grid.stride(a);
            if n == 1 {
                single[a] = true;
                continue;
            }
            let i0 = (t.floor().max(0.0) as usize).min(n - 2);
            frac[a] = (t - i0 as f64).clamp(0.0, 1.0);
            base += i0 * stride[a];
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut idx = base;
            for a in 0..d {
                if corner >> a & 1 == 1 {
                    if single[a] {
                        w = 0.0;
                        break;
                    }
                    w *= frac[a];
                    idx += stride[a];
                } else if !single[a] {
                    w *= 1.0 - frac[a];
                }
            }
            if w != 0.0 {
                acc += w * self.values[idx];
            }
        }
        acc
    }

    /// Rows `x_0, ..., x_{d-1}, density`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (0..self.grid.dim()).map(|a| format!("x{a}")).collect();
        header.push("density".into());
        w.write_record(&header)?;
        for (i, v) in self.values.iter().enumerate() {
            let mut rec: Vec<String> = self.grid.center(i).iter().map(|c| c.to_string()).collect();
            rec.push(v.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn check_same(mu: &GridDensity, nu: &GridDensity) -> Result<()> {
    if mu.grid.same_as(&nu.grid) {
        Ok(())
    } else {
        Err(Error::GridMismatch("densities live on different lattices".into()))
    }
}

/// `||mu - nu||_TV = int |mu - nu|` (sup over `|f| <= 1`, so at most 2).
pub fn tv_distance(mu: &GridDensity, nu: &GridDensity) -> Result<f64> {
    check_same(mu, nu)?;
    let s: f64 = mu.values.iter().zip(&nu.values).map(|(a, b)| (a - b).abs()).sum();
    Ok(s * mu.grid.cell_volume())
}

pub fn sup_distance(mu: &GridDensity, nu: &GridDensity) -> Result<f64> {
    check_same(mu, nu)?;
    Ok(mu
        .values
        .iter()
        .zip(&nu.values)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}

/// `sup - inf` of the density values.
pub fn oscillation(eta: &GridDensity) -> f64 {
    let (lo, hi) = eta
        .values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    if eta.values.is_empty() {
        0.0
    } else {
        hi - lo
    }
}

/// TV norm `sum |m_i|` of a signed vector of cell masses.
pub fn tv_norm_masses(m: &[f64]) -> f64 {
    m.iter().map(|v| v.abs()).sum()
}
