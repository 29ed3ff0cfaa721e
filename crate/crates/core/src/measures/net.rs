use crate::error::{Error, Result};
use crate::geometry::BoxDomain;

use super::empirical::EmpiricalMeasure;
use super::grid::GridDensity;

pub const DEFAULT_NET_CAP: usize = 20_000;

/// Finite family of bounded Lipschitz test functions on a box `K`.
///
/// Members are multilinear interpolants of node values on a lattice of mesh
/// `delta / b`, with values drawn from `{k delta} ∩ [-a, a]` (plus `±a`) and
/// neighbouring nodes differing by at most `delta`. In one dimension every
/// member is `b`-Lipschitz and bounded by `a`, and every `b`-Lipschitz `f`
/// with `|f| <= a` is within `delta` of some member in sup norm. In `d`
/// dimensions the per-axis slope bound is `b` (Euclidean `b sqrt(d)`).
#[derive(Debug, Clone)]
pub struct FunctionNet {
    a: f64,
    b: f64,
    delta: f64,
    lower: Vec<f64>,
    spacing: f64,
    nodes: Vec<usize>,
    members: Vec<Vec<f64>>,
}

pub fn build_net(a: f64, b: f64, delta: f64, k: &BoxDomain) -> Result<FunctionNet> {
    build_net_capped(a, b, delta, k, DEFAULT_NET_CAP)
}

pub fn build_net_capped(a: f64, b: f64, delta: f64, k: &BoxDomain, cap: usize) -> Result<FunctionNet> {
    for (name, v) in [("a", a), ("b", b), ("delta", delta)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::Config(format!("net parameter {name} must be positive, got {v}")));
        }
    }
    let spacing = delta / b;
    let nodes: Vec<usize> = (0..k.dim())
        .map(|ax| (k.side(ax) / spacing - 1e-9).ceil().max(1.0) as usize + 1)
        .collect();
    let n_nodes: usize = nodes.iter().product();

    let top = (a / delta + 1e-9).floor() as i64;
    let mut levels: Vec<f64> = (-top..=top).map(|j| j as f64 * delta).collect();
    if (a - top as f64 * delta).abs() > 1e-12 {
        levels.insert(0, -a);
        levels.push(a);
    }

    // Depth-first over nodes in row-major order; a node only sees the
    // already-assigned neighbour one step back along each axis.
    let strides: Vec<usize> = (0..nodes.len()).map(|ax| nodes[ax + 1..].iter().product()).collect();
    let tol = delta * (1.0 + 1e-12);
    let mut members = Vec::new();
    let mut current = vec![0.0; n_nodes];
    fn dfs(
        pos: usize,
        current: &mut Vec<f64>,
        ctx: (&[f64], &[usize], &[usize], f64, usize),
        members: &mut Vec<Vec<f64>>,
    ) -> bool {
        let (levels, nodes, strides, tol, cap) = ctx;
        if pos == current.len() {
            if members.len() == cap {
                return false;
            }
            members.push(current.clone());
            return true;
        }
        for &v in levels {
            let ok = (0..nodes.len()).all(|ax| {
                let i = pos / strides[ax] % nodes[ax];
                i == 0 || (current[pos - strides[ax]] - v).abs() <= tol
            });
            if ok {
                current[pos] = v;
                if !dfs(pos + 1, current, ctx, members) {
                    return false;
                }
            }
        }
        true
    }
    if !dfs(0, &mut current, (&levels, &nodes, &strides, tol, cap), &mut members) {
        return Err(Error::NetCapacity { cap, nodes: n_nodes });
    }
    Ok(FunctionNet { a, b, delta, lower: k.lower().to_vec(), spacing, nodes, members })
}

impl FunctionNet {
    pub fn bound(&self) -> f64 {
        self.a
    }

    pub fn lipschitz(&self) -> f64 {
        self.b
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn nodes_per_axis(&self) -> &[usize] {
        &self.nodes
    }

    pub fn node_count(&self) -> usize {
        self.nodes.iter().product()
    }

    /// Number of members, `C(delta)`.
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn members(&self) -> &[Vec<f64>] {
        &self.members
    }

    /// Interpolation weights of `x` on the lattice nodes (constant extension
    /// outside the lattice).
    fn for_each_hat(&self, x: &[f64], mut f: impl FnMut(usize, f64)) {
        let d = self.nodes.len();
        let mut base = 0usize;
        let mut frac = vec![0.0; d];
        let mut stride = vec![0usize; d];
        for ax in (0..d).rev() {
            stride[ax] = if ax + 1 == d { 1 } else { stride[ax + 1] * self.nodes[ax + 1] };
        }
        for ax in 0..d {
            let t = (x[ax] - self.lower[ax]) / self.spacing;
            let i0 = (t.floor().max(0.0) as usize).min(self.nodes[ax] - 2);
            frac[ax] = (t - i0 as f64).clamp(0.0, 1.0);
            base += i0 * stride[ax];
        }
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut idx = base;
            for ax in 0..d {
                if corner >> ax & 1 == 1 {
                    w *= frac[ax];
                    idx += stride[ax];
                } else {
                    w *= 1.0 - frac[ax];
                }
            }
            if w != 0.0 {
                f(idx, w);
            }
        }
    }

    /// Value of member `g` at `x`.
    pub fn eval(&self, g: usize, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        self.for_each_hat(x, |i, w| acc += w * self.members[g][i]);
        acc
    }

    /// `∫ phi_v dmu` for every node hat function `phi_v`, where `mu` is the
    /// signed measure `sum_i weights[i] delta_{points[i]}`.
    pub fn hat_moments<'p>(&self, points: impl IntoIterator<Item = (&'p [f64], f64)>) -> Vec<f64> {
        let mut m = vec![0.0; self.node_count()];
        for (x, w) in points {
            self.for_each_hat(x, |i, h| m[i] += w * h);
        }
        m
    }

    /// `max_g |<mu, g>|` given the hat moments of a signed measure.
    pub fn sup_pairing(&self, moments: &[f64]) -> f64 {
        self.members
            .iter()
            .map(|g| g.iter().zip(moments).map(|(v, m)| v * m).sum::<f64>().abs())
            .fold(0.0, f64::max)
    }
}

/// Measures that can be integrated against net members.
pub trait NetIntegrable {
    fn net_moments(&self, net: &FunctionNet) -> Vec<f64>;
}

impl NetIntegrable for EmpiricalMeasure {
    fn net_moments(&self, net: &FunctionNet) -> Vec<f64> {
        let w = 1.0 / self.len() as f64;
        net.hat_moments(self.points().map(|p| (p, w)))
    }
}

impl NetIntegrable for GridDensity {
    /// Midpoint rule: each cell's mass sits at its center.
    fn net_moments(&self, net: &FunctionNet) -> Vec<f64> {
        let grid = self.grid();
        let masses = self.masses();
        let centers: Vec<Vec<f64>> = (0..grid.len()).map(|i| grid.center(i)).collect();
        net.hat_moments(centers.iter().map(Vec::as_slice).zip(masses))
    }
}

/// `max_{g in net} |<mu - nu, g>|`.
pub fn net_distance<A, B>(mu: &A, nu: &B, net: &FunctionNet) -> f64
where
    A: NetIntegrable + ?Sized,
    B: NetIntegrable + ?Sized,
{
    let a = mu.net_moments(net);
    let b = nu.net_moments(net);
    let diff: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
    net.sup_pairing(&diff)
}
