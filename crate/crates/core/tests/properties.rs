//! Randomized invariants of the constants, measures and dynamics.

use std::sync::LazyLock;

use agentfield::config::RunConfig;
use agentfield::measures::{Component, GaussianMixture, Support};
use agentfield::meanfield::{compute_constants, iterate, phi_step, random_state, state_distance, Model};
use agentfield::metropolis::{m_psi_pushforward, PotentialField};
use agentfield::scheme::{scheme_step, SchemeState};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

static MODEL: LazyLock<Model> =
    LazyLock::new(|| RunConfig::from_toml("[domain]\ncells = 64\n").unwrap().model().unwrap());

fn component() -> impl Strategy<Value = Component> {
    (0.01f64..5.0, -1.0f64..2.0, 0.05f64..1.0).prop_map(|(weight, m, sigma)| Component { weight, mean: vec![m], sigma })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn theta_solves_its_quadratic(eps in 0.0f64..=1.0, lambda in 0.0f64..0.2) {
        let bank = MODEL.bank();
        let m = bank.derived.m_p_pprime;
        if let Some(c) = compute_constants(eps, lambda, bank).constants() {
            prop_assert!(c.s < 1.0 && c.theta < 1.0 && c.theta >= c.s);
            prop_assert!((c.theta * c.theta - c.s * c.theta - 4.0 * lambda * m).abs() < 1e-12);
            prop_assert!((c.kappa - 4.0 * lambda * m / c.theta).abs() < 1e-15);
            prop_assert!(c.eps_min <= eps && eps <= c.eps0);
            prop_assert!(lambda <= c.lambda0);
            // weaker interaction stays feasible
            prop_assert!(compute_constants(eps, lambda / 2.0, bank).is_feasible());
        }
    }

    #[test]
    fn mixtures_normalize_and_rasterize_to_probabilities(cs in prop::collection::vec(component(), 1..6)) {
        let mix = GaussianMixture::from_unnormalized(cs).unwrap();
        let total: f64 = mix.components().iter().map(|c| c.weight).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        let (rho, outside) = mix.rasterize(MODEL.field_grid(), Support::Field).unwrap();
        prop_assert!((rho.mass() - 1.0).abs() < 1e-10);
        prop_assert!(rho.values().iter().all(|v| *v >= 0.0));
        prop_assert!((0.0..=1.0).contains(&outside));
        let wide = mix.convolved(0.3);
        prop_assert!(wide.components().iter().zip(mix.components()).all(|(a, b)| a.sigma > b.sigma && a.weight == b.weight));
    }

    #[test]
    fn metropolis_pushforward_preserves_probability(seed in any::<u64>(), lambda in 0.0f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_state(&MODEL, &mut rng).unwrap();
        let psi = PotentialField::Grid(s.eta.clone());
        let out = m_psi_pushforward(&s.m, &psi, lambda, MODEL.q(), MODEL.q0()).unwrap();
        prop_assert!((out.mass() - 1.0).abs() < 1e-12);
        prop_assert!(out.values().iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn phi_keeps_probabilities(seed in any::<u64>(), eps in 0.0f64..=1.0, lambda in 0.0f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = phi_step(&MODEL, &random_state(&MODEL, &mut rng).unwrap(), eps, lambda).unwrap();
        for d in [&s.m, &s.eta] {
            prop_assert!((d.mass() - 1.0).abs() < 1e-10);
            prop_assert!(d.values().iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn two_trajectories_merge_geometrically(seed in any::<u64>()) {
        let (eps, lambda) = (0.3, 0.02);
        let c = *compute_constants(eps, lambda, MODEL.bank()).constants().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = iterate(&MODEL, &random_state(&MODEL, &mut rng).unwrap(), eps, lambda, 6).unwrap();
        let b = iterate(&MODEL, &random_state(&MODEL, &mut rng).unwrap(), eps, lambda, 6).unwrap();
        for n in 1..=6 {
            let d = state_distance(&a[n], &b[n]).unwrap();
            prop_assert!(d <= 4.0 * c.theta.powi(n as i32 - 1) + 1e-10, "n = {n}: {d}");
        }
    }

    #[test]
    fn scheme_step_doubles_components(seed in any::<u64>(), n in 1usize..30, eps in 0.05f64..0.95) {
        let cfg = RunConfig::default();
        let init = cfg.initial_condition().unwrap();
        let s0 = SchemeState::initial(&MODEL, &init, n, seed).unwrap();
        let s1 = scheme_step(&MODEL, &s0, eps, 1.0).unwrap();
        let s2 = scheme_step(&MODEL, &s1, eps, 1.0).unwrap();
        prop_assert_eq!(s2.field.len(), 2 * n);
        let total: f64 = s2.field.components().iter().map(|c| c.weight).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        let dom = MODEL.disc().domain();
        prop_assert!(s2.positions.points().all(|x| dom.contains(x)));
    }

    #[test]
    fn config_survives_a_toml_roundtrip(seed in any::<u64>(), eps in 0.0f64..=1.0, lambda in 0.0f64..10.0,
                                        agents in 1usize..5000) {
        let mut cfg = RunConfig { seed, ..RunConfig::default() };
        cfg.dynamics.eps = eps;
        cfg.dynamics.lambda = lambda;
        cfg.dynamics.agents = agents;
        let back = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        prop_assert_eq!(back.hash(), cfg.hash());
        prop_assert_eq!(back, cfg);
    }
}

