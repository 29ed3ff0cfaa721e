//! The Metropolis-type kernel M^Psi: sampled transitions against the exact
//! lattice pushforward, and its Dobrushin contraction.

use agentfield::config::RunConfig;
use agentfield::measures::EmpiricalMeasure;
use agentfield::measures::{oscillation, GridDensity, Support};
use agentfield::measures::GaussianMixture;
use agentfield::measures::net_distance;
use agentfield::metropolis::{m_psi_contraction_bound, m_psi_pushforward, m_psi_sample, PotentialField};
use agentfield::operators::dobrushin_coefficient;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> agentfield::Result<()> {
    let cfg = RunConfig::default();
    let model = cfg.model()?;
    let dom = model.disc().domain();
    let lambda = 2.0;

    // a bumpy potential centred at 0.7
    let field = model.field_from_mixture(&GaussianMixture::single(vec![0.7], 0.2)?)?;
    let psi = PotentialField::Grid(field.clone());
    let op = model.m_operator(&field, lambda)?;
    println!(
        "dobrushin coefficient {:.4}  bound 1 - eps_Q exp(-lambda osc) = {:.4}",
        dobrushin_coefficient(&op),
        m_psi_contraction_bound(model.bank(), lambda, oscillation(&field))
    );

    let start = GridDensity::from_fn(model.agent_grid().clone(), Support::Agent, |x| if x[0] < 0.3 { 1.0 } else { 0.0 })?
        .normalized();
    let exact = m_psi_pushforward(&start, &psi, lambda, model.q(), model.q0())?;

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let net = agentfield::measures::build_net(1.0, 1.0, 0.2, dom)?;
    for n in [1_000, 10_000, 100_000] {
        let pts: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let x = [0.3 * rand::Rng::random::<f64>(&mut rng)];
                m_psi_sample(&x, &psi, lambda, model.bank(), dom, &mut rng)
            })
            .collect::<agentfield::Result<_>>()?;
        let emp = EmpiricalMeasure::from_points(&pts)?;
        println!("{n:>6} samples: net distance to the lattice pushforward {:.4}", net_distance(&emp, &exact, &net));
    }
    Ok(())
}
