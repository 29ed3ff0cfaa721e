//! Kernel family on the unit interval: derived constants and a sampling
//! check of the proposal kernel Q against its density.

use agentfield::geometry::BoxDomain;
use agentfield::kernels::{derive_constants, q_density, q_sample, KernelParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> agentfield::Result<()> {
    let dom = BoxDomain::unit(1, 3.2)?;
    let bank = derive_constants(KernelParams::default(), &dom)?;
    println!("{}", serde_json::to_string_pretty(&bank.derived)?);

    // histogram of Q(x, .) from x = 0.2 against the density at bin centers
    let x = [0.2];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 100_000;
    let bins = 10;
    let mut counts = vec![0usize; bins];
    for _ in 0..n {
        let y = q_sample(&x, &bank, &dom, &mut rng)?;
        counts[((y[0] * bins as f64) as usize).min(bins - 1)] += 1;
    }
    println!("bin   empirical  density");
    for (b, c) in counts.iter().enumerate() {
        let y = [(b as f64 + 0.5) / bins as f64];
        println!("{:.2}  {:>9.4}  {:>7.4}", y[0], *c as f64 * bins as f64 / n as f64, q_density(&x, &y, &bank, &dom)?);
    }
    Ok(())
}
