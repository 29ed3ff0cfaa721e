use std::io::Write;

use crate::error::{Error, Result};
use crate::geometry::BoxDomain;

/// `N` equally weighted points.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    dim: usize,
    coords: Vec<f64>,
}

impl EmpiricalMeasure {
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 || !coords.len().is_multiple_of(dim) {
            return Err(Error::Config(format!(
                "{} coordinates do not form points of dimension {dim}",
                coords.len()
            )));
        }
        Ok(Self { dim, coords })
    }

    pub fn from_points(points: &[Vec<f64>]) -> Result<Self> {
        let dim = points.first().map_or(0, Vec::len);
        if points.iter().any(|p| p.len() != dim) {
            return Err(Error::Config("points of mixed dimension".into()));
        }
        Self::new(dim, points.concat())
    }

    /// Same, but every point must lie in `dom`.
    pub fn in_domain(points: &[Vec<f64>], dom: &BoxDomain) -> Result<Self> {
        for p in points {
            dom.check_point(p)?;
        }
        Self::from_points(points)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// `(1/N) sum f(X_i)`.
    pub fn integrate(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        self.points().map(f).sum::<f64>() / self.len() as f64
    }

    /// Rows `index, x_0, ..., x_{d-1}`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["index".to_string()];
        header.extend((0..self.dim).map(|a| format!("x{a}")));
        w.write_record(&header)?;
        for (i, p) in self.points().enumerate() {
            let mut rec = vec![i.to_string()];
            rec.extend(p.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_checks() {
        assert!(EmpiricalMeasure::new(2, vec![0.0; 5]).is_err());
        let dom = BoxDomain::unit(1, 1.0).unwrap();
        assert!(EmpiricalMeasure::in_domain(&[vec![0.5], vec![1.5]], &dom).is_err());
        let m = EmpiricalMeasure::in_domain(&[vec![0.25], vec![0.75]], &dom).unwrap();
        assert_eq!(m.len(), 2);
        assert!((m.integrate(|x| x[0]) - 0.5).abs() < 1e-15);
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "index,x0\n0,0.25\n1,0.75\n");
    }
}
