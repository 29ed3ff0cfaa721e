//! Kernels acting on lattice measures.
//!
//! Measures are carried as cell masses (probability per cell). Every operator
//! here is exactly row-stochastic: Gaussian rows are normalized by their own
//! Riemann sum over the target lattice, so truncation never loses mass and
//! Dobrushin-type bounds hold on the lattice up to rounding.

use rayon::prelude::*;

use crate::geometry::{Discretization, GridSpec};
use crate::kernels::{KernelBank, Q0Kernel};

/// Row-stochastic transition matrix between the cells of two lattices.
pub trait MarkovOperator: Sync {
    fn source_len(&self) -> usize;
    fn target_len(&self) -> usize;
    /// `mu K` for a (possibly signed) vector of cell masses.
    fn push(&self, mass: &[f64]) -> Vec<f64>;
    /// Row `K(i, .)`.
    fn row(&self, i: usize) -> Vec<f64>;
}

/// One-dimensional Gaussian transition table between two sets of cell centers.
#[derive(Debug, Clone)]
pub struct AxisKernel {
    n_src: usize,
    n_dst: usize,
    table: Vec<f64>,
    /// Riemann sum of each unnormalized row (mass kept inside the target box).
    kept: Vec<f64>,
}

impl AxisKernel {
    pub fn gaussian(src: &[f64], dst: &[f64], width: f64, sigma: f64) -> Self {
        let (n_src, n_dst) = (src.len(), dst.len());
        let norm = width / (sigma * (2.0 * std::f64::consts::PI).sqrt());
        let mut table = vec![0.0; n_src * n_dst];
        let mut kept = vec![0.0; n_src];
        for (i, x) in src.iter().enumerate() {
            let row = &mut table[i * n_dst..(i + 1) * n_dst];
            let mut s = 0.0;
            for (j, y) in dst.iter().enumerate() {
                let z = (y - x) / sigma;
                row[j] = norm * (-0.5 * z * z).exp();
                s += row[j];
            }
            kept[i] = s;
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        Self { n_src, n_dst, table, kept }
    }

    /// Normalized weights of a Gaussian at an arbitrary center over `dst`.
    pub fn point_row(center: f64, dst: &[f64], width: f64, sigma: f64) -> (Vec<f64>, f64) {
        let norm = width / (sigma * (2.0 * std::f64::consts::PI).sqrt());
        let mut row: Vec<f64> = dst
            .iter()
            .map(|y| {
                let z = (y - center) / sigma;
                norm * (-0.5 * z * z).exp()
            })
            .collect();
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
        (row, s)
    }

    pub fn source_len(&self) -> usize {
        self.n_src
    }

    pub fn target_len(&self) -> usize {
        self.n_dst
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.table[i * self.n_dst + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.table[i * self.n_dst..(i + 1) * self.n_dst]
    }

    pub fn kept(&self, i: usize) -> f64 {
        self.kept[i]
    }
}

/// Tensor product of one axis kernel per dimension.
#[derive(Debug, Clone)]
pub struct SeparableOperator {
    src_shape: Vec<usize>,
    dst_shape: Vec<usize>,
    axes: Vec<AxisKernel>,
}

impl SeparableOperator {
    /// Isotropic Gaussian from the cell centers of `src` to those of `dst`;
    /// both lattices must share cell widths.
    pub fn gaussian(src: &GridSpec, dst: &GridSpec, sigma: f64) -> Self {
        let axes = (0..src.dim())
            .map(|a| AxisKernel::gaussian(&src.axis_centers(a), &dst.axis_centers(a), dst.width()[a], sigma))
            .collect();
        Self { src_shape: src.cells().to_vec(), dst_shape: dst.cells().to_vec(), axes }
    }

    pub fn axes(&self) -> &[AxisKernel] {
        &self.axes
    }

    /// Fraction of a unit mass at source cell `i` that the untruncated
    /// Gaussian would put outside the target box.
    pub fn leak(&self, src_index: &[usize]) -> f64 {
        1.0 - src_index.iter().zip(&self.axes).map(|(&i, k)| k.kept(i)).product::<f64>()
    }

    pub fn entry(&self, i: &[usize], j: &[usize]) -> f64 {
        i.iter()
            .zip(j)
            .zip(&self.axes)
            .map(|((&a, &b), k)| k.entry(a, b))
            .product()
    }

    /// Entry between flat source and target indices.
    pub fn entry_flat(&self, mut i: usize, mut j: usize) -> f64 {
        let mut v = 1.0;
        for a in (0..self.axes.len()).rev() {
            v *= self.axes[a].entry(i % self.src_shape[a], j % self.dst_shape[a]);
            i /= self.src_shape[a];
            j /= self.dst_shape[a];
        }
        v
    }

    fn apply_axis(&self, input: &[f64], shape_in: &[usize], axis: usize) -> (Vec<f64>, Vec<usize>) {
        let k = &self.axes[axis];
        let mut shape_out = shape_in.to_vec();
        shape_out[axis] = k.n_dst;
        let inner: usize = shape_in[axis + 1..].iter().product();
        let outer: usize = shape_in[..axis].iter().product();
        let (n_in, n_out) = (shape_in[axis], k.n_dst);
        let mut out = vec![0.0; outer * n_out * inner];
        out.par_chunks_mut(n_out * inner).enumerate().for_each(|(o, block)| {
            let base = o * n_in * inner;
            for i in 0..n_in {
                let row = k.row(i);
                for r in 0..inner {
                    let v = input[base + i * inner + r];
                    if v == 0.0 {
                        continue;
                    }
                    for (j, w) in row.iter().enumerate() {
                        block[j * inner + r] += v * w;
                    }
                }
            }
        });
        (out, shape_out)
    }
}

impl MarkovOperator for SeparableOperator {
    fn source_len(&self) -> usize {
        self.src_shape.iter().product()
    }

    fn target_len(&self) -> usize {
        self.dst_shape.iter().product()
    }

    fn push(&self, mass: &[f64]) -> Vec<f64> {
        assert_eq!(mass.len(), self.source_len());
        let mut cur = mass.to_vec();
        let mut shape = self.src_shape.clone();
        for a in 0..self.axes.len() {
            let (next, s) = self.apply_axis(&cur, &shape, a);
            cur = next;
            shape = s;
        }
        cur
    }

    fn row(&self, i: usize) -> Vec<f64> {
        (0..self.target_len()).map(|j| self.entry_flat(i, j)).collect()
    }
}

/// `eps * Uniform + (1 - eps) * (row-normalized truncated Gaussian)` on the agent lattice.
#[derive(Debug, Clone)]
pub struct MixtureKernel {
    uniform_weight: f64,
    gaussian: Option<SeparableOperator>,
    n: usize,
    shape: Vec<usize>,
}

impl MixtureKernel {
    pub fn new(grid: &GridSpec, uniform_weight: f64, sigma: Option<f64>) -> Self {
        let gaussian = match sigma {
            Some(s) if uniform_weight < 1.0 => Some(SeparableOperator::gaussian(grid, grid, s)),
            _ => None,
        };
        Self { uniform_weight, gaussian, n: grid.len(), shape: grid.cells().to_vec() }
    }

    pub fn q(grid: &GridSpec, bank: &KernelBank) -> Self {
        Self::new(grid, bank.params.eps_q, Some(bank.params.q_sigma))
    }

    pub fn q0(grid: &GridSpec, bank: &KernelBank) -> Self {
        match bank.params.q0 {
            Q0Kernel::Uniform => Self::new(grid, 1.0, None),
            Q0Kernel::TruncatedGaussian { sigma } => Self::new(grid, 0.0, Some(sigma)),
        }
    }

    pub fn uniform_weight(&self) -> f64 {
        self.uniform_weight
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Per-axis Gaussian tables, if the kernel has a Gaussian part.
    pub fn gaussian_axes(&self) -> Option<&[AxisKernel]> {
        self.gaussian.as_ref().map(|g| g.axes())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    /// Entry `K(i, j)` between flat lattice indices.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        let u = self.uniform_weight / self.n as f64;
        match &self.gaussian {
            None => u,
            Some(g) => u + (1.0 - self.uniform_weight) * g.entry_flat(i, j),
        }
    }

    /// `K f` for a function given by its cell values.
    pub fn apply_function(&self, f: &[f64]) -> Vec<f64> {
        let mean = f.iter().sum::<f64>() / self.n as f64;
        match &self.gaussian {
            None => vec![mean; self.n],
            Some(g) => {
                let mut out = vec![0.0; self.n];
                out.par_iter_mut().enumerate().for_each(|(i, o)| {
                    let mut s = 0.0;
                    for (j, fj) in f.iter().enumerate() {
                        if *fj != 0.0 {
                            s += g.entry_flat(i, j) * fj;
                        }
                    }
                    *o = self.uniform_weight * mean + (1.0 - self.uniform_weight) * s;
                });
                out
            }
        }
    }
}

impl MarkovOperator for MixtureKernel {
    fn source_len(&self) -> usize {
        self.n
    }

    fn target_len(&self) -> usize {
        self.n
    }

    fn push(&self, mass: &[f64]) -> Vec<f64> {
        let total: f64 = mass.iter().sum();
        let u = self.uniform_weight * total / self.n as f64;
        match &self.gaussian {
            None => vec![u; self.n],
            Some(g) => g
                .push(mass)
                .into_iter()
                .map(|v| u + (1.0 - self.uniform_weight) * v)
                .collect(),
        }
    }

    fn row(&self, i: usize) -> Vec<f64> {
        let u = self.uniform_weight / self.n as f64;
        match &self.gaussian {
            None => vec![u; self.n],
            Some(g) => g.row(i).into_iter().map(|v| u + (1.0 - self.uniform_weight) * v).collect(),
        }
    }
}

/// Exact Dobrushin coefficient `1 - min_{i,i'} sum_j min(K(i,j), K(i',j))`
/// of a lattice operator (quadratic in the number of rows).
pub fn dobrushin_coefficient(op: &dyn MarkovOperator) -> f64 {
    let rows: Vec<Vec<f64>> = (0..op.source_len()).map(|i| op.row(i)).collect();
    let worst = (0..rows.len())
        .into_par_iter()
        .map(|i| {
            let mut m: f64 = 1.0;
            for k in i + 1..rows.len() {
                let overlap: f64 = rows[i].iter().zip(&rows[k]).map(|(a, b)| a.min(*b)).sum();
                m = m.min(overlap);
            }
            m
        })
        .reduce(|| 1.0, f64::min);
    1.0 - worst
}

/// The field-side operators of a model: `P` on the field lattice and `P'`
/// from the field lattice to itself (agent measures are zero-padded first).
#[derive(Debug, Clone)]
pub struct FieldOperators {
    pub p: SeparableOperator,
    pub pprime: SeparableOperator,
}

impl FieldOperators {
    pub fn new(disc: &Discretization, bank: &KernelBank) -> Self {
        let f = disc.field_grid();
        Self {
            p: SeparableOperator::gaussian(f, f, bank.params.p_sigma),
            pprime: SeparableOperator::gaussian(f, f, bank.params.pprime_sigma),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BoxDomain;
    use crate::kernels::{derive_constants, KernelParams};

    fn dense_push(op: &dyn MarkovOperator, mass: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; op.target_len()];
        for (i, m) in mass.iter().enumerate() {
            for (j, v) in op.row(i).iter().enumerate() {
                out[j] += m * v;
            }
        }
        out
    }

    #[test]
    fn separable_push_matches_dense_rows() {
        let g = GridSpec::new(vec![0.0, 0.0], vec![1.0, 2.0], vec![5, 7]).unwrap();
        let op = SeparableOperator::gaussian(&g, &g, 0.3);
        let mass: Vec<f64> = (0..35).map(|i| ((i * 7919) % 13) as f64).collect();
        let a = op.push(&mass);
        let b = dense_push(&op, &mass);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        for i in 0..35 {
            let s: f64 = op.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn q_lattice_operator_is_stochastic_and_minorized() {
        let dom = BoxDomain::unit(1, 1.0).unwrap();
        let bank = derive_constants(KernelParams { eps_q: 0.3, ..KernelParams::default() }, &dom).unwrap();
        let grid = GridSpec::uniform(&[0.0], &[1.0], 64).unwrap();
        let q = MixtureKernel::q(&grid, &bank);
        for i in 0..64 {
            let row = q.row(i);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|v| *v >= 0.3 / 64.0 - 1e-15));
        }
        let mass: Vec<f64> = (0..64).map(|i| if i < 10 { 0.1 } else { 0.0 }).collect();
        let a = q.push(&mass);
        let b = dense_push(&q, &mass);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-14);
        }
        assert!(dobrushin_coefficient(&q) <= 0.7 + 1e-12);
    }

    #[test]
    fn apply_function_is_row_pairing() {
        let grid = GridSpec::new(vec![0.0, 0.0], vec![1.0, 1.0], vec![4, 3]).unwrap();
        let k = MixtureKernel::new(&grid, 0.25, Some(0.2));
        let f: Vec<f64> = (0..12).map(|i| (i as f64).sin()).collect();
        let kf = k.apply_function(&f);
        for (i, v) in kf.iter().enumerate() {
            let direct: f64 = k.row(i).iter().zip(&f).map(|(a, b)| a * b).sum();
            assert!((v - direct).abs() < 1e-13);
        }
    }
}
