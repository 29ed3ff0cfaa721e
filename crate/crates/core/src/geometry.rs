//! Boxes and regular lattices.
//!
//! The agent state space `E` is an axis-aligned box. Fields live on a larger
//! box (`E` padded by a margin on every side) standing in for the whole of
//! `R^d`. Both are discretised by lattices sharing one cell width per axis, so
//! every cell of the agent lattice is also a cell of the field lattice.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Compact agent domain `E = prod [lower_i, upper_i]` plus the field margin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    lower: Vec<f64>,
    upper: Vec<f64>,
    margin: f64,
}

impl BoxDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, margin: f64) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::Config(format!(
                "domain bounds must be nonempty and of equal length (got {} and {})",
                lower.len(),
                upper.len()
            )));
        }
        for (a, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !(l.is_finite() && u.is_finite()) || l >= u {
                return Err(Error::Config(format!(
                    "domain axis {a}: need lower < upper, got [{l}, {u}]"
                )));
            }
        }
        if !(margin.is_finite() && margin > 0.0) {
            return Err(Error::Config(format!("field margin must be positive, got {margin}")));
        }
        Ok(Self { lower, upper, margin })
    }

    /// `[0,1]^dim` with the given field margin.
    pub fn unit(dim: usize, margin: f64) -> Result<Self> {
        Self::new(vec![0.0; dim], vec![1.0; dim], margin)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn margin(&self) -> f64 {
        self.margin
    }

    pub fn side(&self, axis: usize) -> f64 {
        self.upper[axis] - self.lower[axis]
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|a| self.side(a)).product()
    }

    /// Euclidean length of the main diagonal.
    pub fn diameter(&self) -> f64 {
        (0..self.dim()).map(|a| self.side(a).powi(2)).sum::<f64>().sqrt()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (l + u)).collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| *v >= *l && *v <= *u)
    }

    pub fn check_point(&self, x: &[f64]) -> Result<()> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(Error::OutsideDomain { point: x.to_vec() })
        }
    }

    /// Nominal truncation box for fields (before snapping to whole cells).
    pub fn field_box(&self) -> (Vec<f64>, Vec<f64>) {
        (
            self.lower.iter().map(|l| l - self.margin).collect(),
            self.upper.iter().map(|u| u + self.margin).collect(),
        )
    }
}

/// Regular lattice of cells over a box; values are attached to cell centers.
/// Cells are stored row-major with the last axis fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    lower: Vec<f64>,
    width: Vec<f64>,
    cells: Vec<usize>,
}

impl GridSpec {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, cells: Vec<usize>) -> Result<Self> {
        if lower.len() != upper.len() || lower.len() != cells.len() || lower.is_empty() {
            return Err(Error::Config("grid bounds and cell counts must agree in length".into()));
        }
        if cells.contains(&0) {
            return Err(Error::Config("grid needs at least one cell per axis".into()));
        }
        let width = lower
            .iter()
            .zip(&upper)
            .zip(&cells)
            .map(|((l, u), &c)| (u - l) / c as f64)
            .collect::<Vec<_>>();
        if width.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::Config("grid box has zero or negative extent".into()));
        }
        Ok(Self { lower, width, cells })
    }

    /// Same number of cells along every axis of `[lower, upper]`.
    pub fn uniform(lower: &[f64], upper: &[f64], cells_per_axis: usize) -> Result<Self> {
        Self::new(lower.to_vec(), upper.to_vec(), vec![cells_per_axis; lower.len()])
    }

    pub fn dim(&self) -> usize {
        self.cells.len()
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self, axis: usize) -> f64 {
        self.lower[axis] + self.width[axis] * self.cells[axis] as f64
    }

    pub fn width(&self) -> &[f64] {
        &self.width
    }

    pub fn cell_volume(&self) -> f64 {
        self.width.iter().product()
    }

    pub fn axis_center(&self, axis: usize, i: usize) -> f64 {
        self.lower[axis] + (i as f64 + 0.5) * self.width[axis]
    }

    pub fn axis_centers(&self, axis: usize) -> Vec<f64> {
        (0..self.cells[axis]).map(|i| self.axis_center(axis, i)).collect()
    }

    pub fn unravel(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for a in (0..self.dim()).rev() {
            idx[a] = flat % self.cells[a];
            flat /= self.cells[a];
        }
        idx
    }

    pub fn ravel(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.cells).fold(0, |acc, (i, c)| acc * c + i)
    }

    pub fn center(&self, flat: usize) -> Vec<f64> {
        self.unravel(flat)
            .iter()
            .enumerate()
            .map(|(a, &i)| self.axis_center(a, i))
            .collect()
    }

    /// Index of the cell holding `x`, clamped to the lattice.
    pub fn locate(&self, x: &[f64]) -> usize {
        let idx: Vec<usize> = x
            .iter()
            .enumerate()
            .map(|(a, v)| {
                let t = ((v - self.lower[a]) / self.width[a]).floor();
                (t.max(0.0) as usize).min(self.cells[a] - 1)
            })
            .collect();
        self.ravel(&idx)
    }

    pub fn same_as(&self, other: &GridSpec) -> bool {
        self.cells == other.cells
            && self
                .lower
                .iter()
                .zip(&other.lower)
                .chain(self.width.iter().zip(&other.width))
                .all(|(a, b)| (a - b).abs() <= 1e-12 * (1.0 + a.abs()))
    }

    /// Row-major stride of `axis`.
    pub fn stride(&self, axis: usize) -> usize {
        self.cells[axis + 1..].iter().product()
    }
}

/// Aligned pair of lattices: one on `E`, one on the field box.
#[derive(Debug, Clone)]
pub struct Discretization {
    domain: BoxDomain,
    agent: GridSpec,
    field: GridSpec,
    offset: Vec<usize>,
}

impl Discretization {
    /// `cells_per_axis` cells across `E`; the field lattice extends it by the
    /// domain margin rounded up to whole cells.
    pub fn new(domain: BoxDomain, cells_per_axis: usize) -> Result<Self> {
        if cells_per_axis == 0 {
            return Err(Error::Config("need at least one cell per axis".into()));
        }
        let agent = GridSpec::uniform(domain.lower(), domain.upper(), cells_per_axis)?;
        let offset: Vec<usize> = agent
            .width()
            .iter()
            .map(|w| (domain.margin() / w - 1e-9).ceil() as usize)
            .collect();
        let field_lower: Vec<f64> = (0..domain.dim())
            .map(|a| domain.lower()[a] - offset[a] as f64 * agent.width()[a])
            .collect();
        let field_upper: Vec<f64> = (0..domain.dim())
            .map(|a| domain.upper()[a] + offset[a] as f64 * agent.width()[a])
            .collect();
        let field_cells: Vec<usize> = (0..domain.dim()).map(|a| cells_per_axis + 2 * offset[a]).collect();
        let field = GridSpec::new(field_lower, field_upper, field_cells)?;
        Ok(Self { domain, agent, field, offset })
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn agent_grid(&self) -> &GridSpec {
        &self.agent
    }

    pub fn field_grid(&self) -> &GridSpec {
        &self.field
    }

    /// Field-lattice index of each agent-lattice cell.
    pub fn agent_to_field(&self, agent_flat: usize) -> usize {
        let idx: Vec<usize> = self
            .agent
            .unravel(agent_flat)
            .iter()
            .zip(&self.offset)
            .map(|(i, o)| i + o)
            .collect();
        self.field.ravel(&idx)
    }

    /// Zero-pads agent-lattice values to the field lattice.
    pub fn embed(&self, agent_values: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.field.len()];
        for (i, v) in agent_values.iter().enumerate() {
            out[self.agent_to_field(i)] = *v;
        }
        out
    }

    /// Field-lattice values on the cells of `E`.
    pub fn restrict(&self, field_values: &[f64]) -> Vec<f64> {
        (0..self.agent.len()).map(|i| field_values[self.agent_to_field(i)]).collect()
    }
}
