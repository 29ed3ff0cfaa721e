//! The four transition kernels of the model.
//!
//! * `Q`  on `E`: `eps_q * Uniform(E) + (1 - eps_q) * TruncatedGaussian(x, q_sigma)`.
//! * `Q0` on `E`: uniform by default, optionally a truncated Gaussian.
//! * `P`, `P'` on `R^d`: isotropic Gaussians centered at `x`.
//!
//! [`derive_constants`] fills in the bounds and Lipschitz constants the
//! contraction estimates are phrased in.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::geometry::BoxDomain;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Rejection attempts before the truncated-Gaussian sampler falls back to
/// coordinatewise inverse-CDF draws.
pub const MAX_REJECTIONS: usize = 64;

pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

pub fn std_normal_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Mode value `(2 pi sigma^2)^{-d/2}` of an isotropic Gaussian density.
pub fn gaussian_sup(sigma: f64, dim: usize) -> f64 {
    (2.0 * std::f64::consts::PI * sigma * sigma).powf(-(dim as f64) / 2.0)
}

/// Largest gradient norm of an isotropic Gaussian density, reached at radius `sigma`.
pub fn gaussian_gradient_sup(sigma: f64, dim: usize) -> f64 {
    gaussian_sup(sigma, dim) / (sigma * std::f64::consts::E.sqrt())
}

/// Isotropic Gaussian density with mean `x` evaluated at `y`.
pub fn gaussian_pdf(x: &[f64], y: &[f64], sigma: f64) -> f64 {
    let r2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    gaussian_sup(sigma, x.len()) * (-0.5 * r2 / (sigma * sigma)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Q0Kernel {
    #[default]
    Uniform,
    TruncatedGaussian {
        sigma: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelParams {
    pub q_sigma: f64,
    pub eps_q: f64,
    pub q0: Q0Kernel,
    pub p_sigma: f64,
    pub pprime_sigma: f64,
}

impl Default for KernelParams {
    fn default() -> Self {
        Self {
            q_sigma: 0.1,
            eps_q: 0.5,
            q0: Q0Kernel::Uniform,
            p_sigma: 0.4,
            pprime_sigma: 0.4,
        }
    }
}

impl KernelParams {
    pub fn max_field_sigma(&self) -> f64 {
        self.p_sigma.max(self.pprime_sigma)
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        for (name, v) in [
            ("q_sigma", self.q_sigma),
            ("p_sigma", self.p_sigma),
            ("pprime_sigma", self.pprime_sigma),
        ] {
            if !(v.is_finite() && v > 0.0) {
                errs.push(format!("kernels.{name}: must be positive, got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&self.eps_q) {
            errs.push(format!("kernels.eps_q: must lie in [0, 1], got {}", self.eps_q));
        }
        if let Q0Kernel::TruncatedGaussian { sigma } = self.q0 {
            if !(sigma.is_finite() && sigma > 0.0) {
                errs.push(format!("kernels.q0.sigma: must be positive, got {sigma}"));
            }
        }
        errs
    }
}

/// Constants implied by the kernel family on a given domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedConstants {
    /// sup of the density of `P`.
    pub m_p: f64,
    /// sup of the density of `P'`.
    pub m_pprime: f64,
    /// `max(m_p, m_pprime)`.
    pub m_p_pprime: f64,
    /// `sup_y int P(x, y) dx` (equals 1 for translation-invariant kernels).
    pub m_bar_p: f64,
    pub m_bar_p_pprime: f64,
    /// Lipschitz constant of `x -> P(x, y)`.
    pub l_p: f64,
    pub l_pprime: f64,
    /// Lipschitz constant of `y -> P(x, y)`, `y -> P'(x, y)`.
    pub l_bar_p_pprime: f64,
    /// sup of the densities of `Q` and `Q0` on `E x E`.
    pub m_q_q0: f64,
    /// `|Q(x, A) - Q(x', A)| <= l_q_q0 |x - x'| Uniform(E)(A)`, same for `Q0`.
    pub l_q_q0: f64,
    /// `inf_{x in E} P'(x, E)`.
    pub alpha: f64,
    /// Minorization weight of `P'` restricted to `E`: `vol(E) inf_{x,y in E} P'(x, y)`.
    pub delta: f64,
    /// TV contraction coefficient of `m -> m P'`, `1 - alpha * delta`.
    pub beta_pprime: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelBank {
    pub params: KernelParams,
    pub dim: usize,
    pub derived: DerivedConstants,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Which {
    P,
    PPrime,
}

impl KernelBank {
    pub fn sigma(&self, which: Which) -> f64 {
        match which {
            Which::P => self.params.p_sigma,
            Which::PPrime => self.params.pprime_sigma,
        }
    }

    pub fn eps_q(&self) -> f64 {
        self.params.eps_q
    }
}

/// Normalizer `prod_a [Phi((u_a - x_a)/s) - Phi((l_a - x_a)/s)]` of a
/// Gaussian centered at `x` truncated to the box.
pub fn truncation_mass(x: &[f64], sigma: f64, dom: &BoxDomain) -> f64 {
    (0..dom.dim())
        .map(|a| {
            std_normal_cdf((dom.upper()[a] - x[a]) / sigma) - std_normal_cdf((dom.lower()[a] - x[a]) / sigma)
        })
        .product()
}

/// Density on `E` of the Gaussian centered at `x` truncated to `E`.
pub fn truncated_gaussian_density(x: &[f64], y: &[f64], sigma: f64, dom: &BoxDomain) -> f64 {
    gaussian_pdf(x, y, sigma) / truncation_mass(x, sigma, dom)
}

/// Smallest truncation mass over `x in E` (attained at a corner).
fn min_truncation_mass(sigma: f64, dom: &BoxDomain) -> f64 {
    (0..dom.dim()).map(|a| std_normal_cdf(dom.side(a) / sigma) - 0.5).product()
}

pub fn q_density(x: &[f64], y: &[f64], bank: &KernelBank, dom: &BoxDomain) -> Result<f64> {
    dom.check_point(x)?;
    dom.check_point(y)?;
    let eps = bank.params.eps_q;
    let mut d = eps / dom.volume();
    if eps < 1.0 {
        d += (1.0 - eps) * truncated_gaussian_density(x, y, bank.params.q_sigma, dom);
    }
    Ok(d)
}

pub fn q0_density(x: &[f64], y: &[f64], bank: &KernelBank, dom: &BoxDomain) -> Result<f64> {
    dom.check_point(x)?;
    dom.check_point(y)?;
    Ok(match bank.params.q0 {
        Q0Kernel::Uniform => 1.0 / dom.volume(),
        Q0Kernel::TruncatedGaussian { sigma } => truncated_gaussian_density(x, y, sigma, dom),
    })
}

pub fn p_density(x: &[f64], y: &[f64], which: Which, bank: &KernelBank) -> f64 {
    gaussian_pdf(x, y, bank.sigma(which))
}

pub fn sample_uniform<R: Rng + ?Sized>(dom: &BoxDomain, rng: &mut R) -> Vec<f64> {
    (0..dom.dim())
        .map(|a| dom.lower()[a] + dom.side(a) * rng.random::<f64>())
        .collect()
}

/// One coordinate of `N(center, sigma^2)` conditioned on `[lo, hi]`, by inverse CDF.
fn truncated_normal_1d<R: Rng + ?Sized>(center: f64, sigma: f64, lo: f64, hi: f64, rng: &mut R) -> f64 {
    let std = Normal::standard();
    let (mut a, mut b) = ((lo - center) / sigma, (hi - center) / sigma);
    // Work in the lower tail where the CDF keeps its relative precision.
    let flip = a > 0.0;
    if flip {
        (a, b) = (-b, -a);
    }
    let (fa, fb) = (std_normal_cdf(a), std_normal_cdf(b));
    let u = fa + (fb - fa) * rng.random::<f64>();
    let z = if fb - fa > 0.0 {
        std.inverse_cdf(u.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON)).clamp(a, b)
    } else {
        // Both ends far in the tail: the conditional law sits on the near end.
        b
    };
    let z = if flip { -z } else { z };
    (center + sigma * z).clamp(lo, hi)
}

/// Gaussian centered at `x` conditioned on the box.
pub fn sample_truncated_gaussian<R: Rng + ?Sized>(
    x: &[f64],
    sigma: f64,
    dom: &BoxDomain,
    rng: &mut R,
) -> Vec<f64> {
    let d = dom.dim();
    let mut y = vec![0.0; d];
    for _ in 0..MAX_REJECTIONS {
        for a in 0..d {
            let z: f64 = rng.sample(StandardNormal);
            y[a] = x[a] + sigma * z;
        }
        if dom.contains(&y) {
            return y;
        }
    }
    (0..d)
        .map(|a| truncated_normal_1d(x[a], sigma, dom.lower()[a], dom.upper()[a], rng))
        .collect()
}

pub fn q_sample<R: Rng + ?Sized>(x: &[f64], bank: &KernelBank, dom: &BoxDomain, rng: &mut R) -> Result<Vec<f64>> {
    dom.check_point(x)?;
    let u: f64 = rng.random();
    if u < bank.params.eps_q {
        Ok(sample_uniform(dom, rng))
    } else {
        Ok(sample_truncated_gaussian(x, bank.params.q_sigma, dom, rng))
    }
}

pub fn q0_sample<R: Rng + ?Sized>(x: &[f64], bank: &KernelBank, dom: &BoxDomain, rng: &mut R) -> Result<Vec<f64>> {
    dom.check_point(x)?;
    Ok(match bank.params.q0 {
        Q0Kernel::Uniform => sample_uniform(dom, rng),
        Q0Kernel::TruncatedGaussian { sigma } => sample_truncated_gaussian(x, sigma, dom, rng),
    })
}

/// Density bound and `x`-Lipschitz constant (against `Uniform(E)`) of a
/// truncated-Gaussian kernel on `E`.
fn truncated_gaussian_bounds(sigma: f64, dom: &BoxDomain) -> (f64, f64) {
    let d = dom.dim();
    let zmin = min_truncation_mass(sigma, dom);
    let sup = gaussian_sup(sigma, d) / zmin;
    // |grad_x Z| <= sqrt(d) / (sigma sqrt(2 pi)), each factor of Z being at most 1.
    let grad_z = (d as f64).sqrt() * INV_SQRT_2PI / sigma;
    let grad = gaussian_gradient_sup(sigma, d) / zmin + gaussian_sup(sigma, d) * grad_z / (zmin * zmin);
    (sup, grad * dom.volume())
}

pub fn derive_constants(params: KernelParams, dom: &BoxDomain) -> Result<KernelBank> {
    let errs = params.validate();
    if !errs.is_empty() {
        return Err(Error::Config(errs.join("; ")));
    }
    let vol = dom.volume();
    if !(vol.is_finite() && vol > 0.0) {
        return Err(Error::Config("agent domain has zero volume".into()));
    }
    let d = dom.dim();
    let m_p = gaussian_sup(params.p_sigma, d);
    let m_pprime = gaussian_sup(params.pprime_sigma, d);
    let l_p = gaussian_gradient_sup(params.p_sigma, d);
    let l_pprime = gaussian_gradient_sup(params.pprime_sigma, d);

    let (tg_sup, tg_lip) = truncated_gaussian_bounds(params.q_sigma, dom);
    let q_sup = params.eps_q / vol + (1.0 - params.eps_q) * tg_sup;
    let q_lip = (1.0 - params.eps_q) * tg_lip;
    let (q0_sup, q0_lip) = match params.q0 {
        Q0Kernel::Uniform => (1.0 / vol, 0.0),
        Q0Kernel::TruncatedGaussian { sigma } => truncated_gaussian_bounds(sigma, dom),
    };

    let alpha = min_truncation_mass(params.pprime_sigma, dom);
    let far = dom.diameter();
    let delta = vol * m_pprime * (-0.5 * far * far / params.pprime_sigma.powi(2)).exp();
    let beta_pprime = 1.0 - alpha * delta;

    Ok(KernelBank {
        params,
        dim: d,
        derived: DerivedConstants {
            m_p,
            m_pprime,
            m_p_pprime: m_p.max(m_pprime),
            m_bar_p: 1.0,
            m_bar_p_pprime: 1.0,
            l_p,
            l_pprime,
            l_bar_p_pprime: l_p.max(l_pprime),
            m_q_q0: q_sup.max(q0_sup),
            l_q_q0: q_lip.max(q0_lip),
            alpha,
            delta,
            beta_pprime,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit() -> BoxDomain {
        BoxDomain::unit(1, 1.0).unwrap()
    }

    fn bank(eps_q: f64, q_sigma: f64) -> KernelBank {
        let params = KernelParams { eps_q, q_sigma, ..KernelParams::default() };
        derive_constants(params, &unit()).unwrap()
    }

    /// Composite Simpson rule, used as an independent normalizer oracle.
    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(a + i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn pure_uniform_q() {
        let b = bank(1.0, 0.2);
        for (x, y) in [(0.1, 0.9), (0.5, 0.5), (1.0, 0.0)] {
            assert_eq!(q_density(&[x], &[y], &b, &unit()).unwrap(), 1.0);
        }
    }

    #[test]
    fn q_density_matches_quadrature_normalizer() {
        let b = bank(0.3, 0.2);
        let z = simpson(|t| (-0.5 * ((t - 0.5) / 0.2_f64).powi(2)).exp() / (0.2 * (2.0 * std::f64::consts::PI).sqrt()), 0.0, 1.0, 2000);
        let expected = 0.3 + 0.7 * (1.0 / (0.2 * (2.0 * std::f64::consts::PI).sqrt())) / z;
        let got = q_density(&[0.5], &[0.5], &b, &unit()).unwrap();
        assert!((got - expected).abs() < 1e-10, "{got} vs {expected}");
    }

    #[test]
    fn q_density_lower_bound_and_domain_errors() {
        let b = bank(0.3, 0.05);
        for i in 0..=20 {
            for j in 0..=20 {
                let d = q_density(&[i as f64 / 20.0], &[j as f64 / 20.0], &b, &unit()).unwrap();
                assert!(d >= 0.3 - 1e-15);
            }
        }
        assert!(matches!(q_density(&[1.5], &[0.5], &b, &unit()), Err(Error::OutsideDomain { .. })));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(q_sample(&[-0.1], &b, &unit(), &mut rng).is_err());
    }

    #[test]
    fn q_density_integrates_to_one() {
        let b = bank(0.3, 0.1);
        for x in [0.0, 0.37, 1.0] {
            let total = simpson(|y| q_density(&[x], &[y], &b, &unit()).unwrap(), 0.0, 1.0, 4000);
            assert!((total - 1.0).abs() < 1e-6, "x={x}: {total}");
        }
    }

    #[test]
    fn uniform_q_samples_pass_ks() {
        let b = bank(1.0, 0.2);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 10_000;
        let mut xs: Vec<f64> = (0..n).map(|_| q_sample(&[0.3], &b, &unit(), &mut rng).unwrap()[0]).collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let ks = xs
            .iter()
            .enumerate()
            .map(|(i, x)| ((i + 1) as f64 / n as f64 - x).abs().max((x - i as f64 / n as f64).abs()))
            .fold(0.0, f64::max);
        // 1% critical value of the KS statistic.
        assert!(ks < 1.63 / (n as f64).sqrt(), "KS = {ks}");
    }

    #[test]
    fn no_minorization_concentrates_near_start() {
        let b = bank(0.0, 0.01);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let y = q_sample(&[0.995], &b, &unit(), &mut rng).unwrap()[0];
            assert!((0.0..=1.0).contains(&y));
            assert!((y - 0.995).abs() < 0.06);
        }
    }

    #[test]
    fn q_histogram_matches_density() {
        let b = bank(0.3, 0.15);
        let dom = unit();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let cells = 64;
        let mut counts = vec![0usize; cells];
        for _ in 0..n {
            let y = q_sample(&[0.2], &b, &dom, &mut rng).unwrap()[0];
            counts[((y * cells as f64) as usize).min(cells - 1)] += 1;
        }
        for (c, count) in counts.iter().enumerate() {
            let lo = c as f64 / cells as f64;
            let p = simpson(|y| q_density(&[0.2], &[y], &b, &dom).unwrap(), lo, lo + 1.0 / cells as f64, 40);
            let se = (p * (1.0 - p) / n as f64).sqrt();
            let freq = *count as f64 / n as f64;
            assert!((freq - p).abs() <= 3.0 * se, "cell {c}: {freq} vs {p}");
        }
    }

    #[test]
    fn truncated_sampler_fallback_stays_in_box() {
        // Far outside the box forces the inverse-CDF branch.
        let dom = BoxDomain::new(vec![0.0, 0.0], vec![1.0, 1.0], 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let y = sample_truncated_gaussian(&[6.0, -4.0], 0.3, &dom, &mut rng);
            assert!(dom.contains(&y));
            assert!(y[0] > 0.8 && y[1] < 0.2);
        }
    }

    #[test]
    fn default_q0_is_uniform() {
        let dom = BoxDomain::unit(2, 1.0).unwrap();
        let b = derive_constants(KernelParams::default(), &dom).unwrap();
        assert_eq!(q0_density(&[0.1, 0.2], &[0.9, 0.4], &b, &dom).unwrap(), 1.0);
        assert!(1.0 <= b.derived.m_q_q0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 100_000;
        let mut mean = [0.0; 2];
        for _ in 0..n {
            let y = q0_sample(&[0.1, 0.1], &b, &dom, &mut rng).unwrap();
            mean[0] += y[0] / n as f64;
            mean[1] += y[1] / n as f64;
        }
        let se = (1.0 / 12.0 / n as f64).sqrt();
        assert!((mean[0] - 0.5).abs() < 3.0 * se && (mean[1] - 0.5).abs() < 3.0 * se);
    }

    #[test]
    fn gaussian_mode_and_sup() {
        let dom = unit();
        let params = KernelParams { p_sigma: 1.0, pprime_sigma: 0.5, ..KernelParams::default() };
        let b = derive_constants(params, &dom).unwrap();
        assert!((p_density(&[0.3], &[0.3], Which::P, &b) - 0.398_942_280_401_432_7).abs() < 1e-15);
        assert_eq!(b.derived.m_p_pprime, b.derived.m_p.max(b.derived.m_pprime));
        assert!((b.derived.m_pprime - 1.0 / (0.5 * (2.0 * std::f64::consts::PI).sqrt())).abs() < 1e-14);
    }

    #[test]
    fn p_lipschitz_constant_holds_and_is_tight() {
        let dom = unit();
        let b = derive_constants(KernelParams { p_sigma: 0.3, ..KernelParams::default() }, &dom).unwrap();
        let l = b.derived.l_p;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let x: f64 = rng.random_range(-2.0..3.0);
            let x2: f64 = rng.random_range(-2.0..3.0);
            let y: f64 = rng.random_range(-2.0..3.0);
            let diff = (p_density(&[x], &[y], Which::P, &b) - p_density(&[x2], &[y], Which::P, &b)).abs();
            assert!(diff <= l * (x - x2).abs() + 1e-15);
        }
        // Finite-difference slope at distance sigma reaches the closed form.
        let h = 1e-6;
        let slope = (p_density(&[0.3 + h], &[0.0], Which::P, &b) - p_density(&[0.3 - h], &[0.0], Which::P, &b)).abs() / (2.0 * h);
        assert!((slope - l).abs() < 1e-6 * l);
    }

    #[test]
    fn beta_from_compactness_argument() {
        let dom = unit();
        let s = 0.5;
        let b = derive_constants(KernelParams { pprime_sigma: s, ..KernelParams::default() }, &dom).unwrap();
        // inf over a fine grid of x of P'(x, [0,1]).
        let alpha_grid = (0..=10_000)
            .map(|i| {
                let x = i as f64 / 10_000.0;
                std_normal_cdf((1.0 - x) / s) - std_normal_cdf(-x / s)
            })
            .fold(f64::INFINITY, f64::min);
        assert!((b.derived.alpha - alpha_grid).abs() < 1e-12);
        // inf over a grid of pairs of the density, times vol(E).
        let mut inf = f64::INFINITY;
        for i in 0..=200 {
            for j in 0..=200 {
                inf = inf.min(p_density(&[i as f64 / 200.0], &[j as f64 / 200.0], Which::PPrime, &b));
            }
        }
        assert!((b.derived.delta - inf).abs() < 1e-12);
        assert!(b.derived.beta_pprime > 0.0 && b.derived.beta_pprime < 1.0);
    }

    #[test]
    fn kernel_constants_hold_on_random_pairs() {
        let dom = BoxDomain::unit(2, 1.0).unwrap();
        let params = KernelParams { q_sigma: 0.2, eps_q: 0.4, q0: Q0Kernel::TruncatedGaussian { sigma: 0.3 }, ..KernelParams::default() };
        let b = derive_constants(params, &dom).unwrap();
        let dc = b.derived;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let pt = |rng: &mut ChaCha8Rng| vec![rng.random::<f64>(), rng.random::<f64>()];
        for _ in 0..1000 {
            let (x, x2, y) = (pt(&mut rng), pt(&mut rng), pt(&mut rng));
            let dist = ((x[0] - x2[0]).powi(2) + (x[1] - x2[1]).powi(2)).sqrt();
            let q = q_density(&x, &y, &b, &dom).unwrap();
            let q0 = q0_density(&x, &y, &b, &dom).unwrap();
            assert!(q <= dc.m_q_q0 && q0 <= dc.m_q_q0);
            let dq = (q - q_density(&x2, &y, &b, &dom).unwrap()).abs();
            let dq0 = (q0 - q0_density(&x2, &y, &b, &dom).unwrap()).abs();
            // density form of the Uniform(E)-dominated Lipschitz bound
            assert!(dq <= dc.l_q_q0 * dist / dom.volume() + 1e-12);
            assert!(dq0 <= dc.l_q_q0 * dist / dom.volume() + 1e-12);
            for w in [Which::P, Which::PPrime] {
                let p = p_density(&x, &y, w, &b);
                assert!(p <= dc.m_p_pprime);
                assert!((p - p_density(&x2, &y, w, &b)).abs() <= dc.l_p.max(dc.l_pprime) * dist + 1e-15);
                let dy = (y[0] - x2[0]).hypot(y[1] - x2[1]);
                assert!((p - p_density(&x, &x2, w, &b)).abs() <= dc.l_bar_p_pprime * dy + 1e-15);
            }
        }
    }
}
