//! Distance of empirical measures to the uniform law on E, measured on a
//! finite net of bounded Lipschitz functions, as the sample size grows.

use agentfield::geometry::{BoxDomain, GridSpec};
use agentfield::kernels::sample_uniform;
use agentfield::measures::EmpiricalMeasure;
use agentfield::measures::{GridDensity, Support};
use agentfield::measures::{build_net, net_distance};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> agentfield::Result<()> {
    let dom = BoxDomain::unit(1, 1.0)?;
    let net = build_net(1.0, 1.0, 0.2, &dom)?;
    println!("net: {} functions, spacing {:.3}", net.len(), net.spacing());

    let uniform = GridDensity::uniform(GridSpec::uniform(&[0.0], &[1.0], 256)?, Support::Agent);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for n in [25, 100, 400, 1600] {
        let pts: Vec<Vec<f64>> = (0..n).map(|_| sample_uniform(&dom, &mut rng)).collect();
        let emp = EmpiricalMeasure::from_points(&pts)?;
        let d = net_distance(&emp, &uniform, &net);
        println!("n = {n:>5}  distance {d:.4}  2/sqrt(n) {:.4}", 2.0 / (n as f64).sqrt());
    }
    Ok(())
}
