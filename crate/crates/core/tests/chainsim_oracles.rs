//! The Gibbs sampler against exact laws on networks small enough to
//! enumerate.

mod common;

use std::collections::HashMap;

use netaipw::chainsim::{counterfactual_outcome_mean, ChainGraphSampler, GibbsControls, OutcomeKernel, SimParams};
use netaipw::propensity::AllocationPolicy;
use netaipw::stream_rng;

use common::{covariate_law, outcome_law, path, random_params, treatment_law, Cov};

fn total_variation<K: std::hash::Hash + Eq>(exact: &[(K, f64)], counts: &HashMap<K, usize>, draws: usize) -> f64 {
    0.5 * exact
        .iter()
        .map(|(k, p)| (p - counts.get(k).copied().unwrap_or(0) as f64 / draws as f64).abs())
        .sum::<f64>()
}

#[test]
fn covariate_layer_converges_to_its_joint_law() {
    let net = path(2);
    let p = random_params(11, None);
    let exact = covariate_law(&net, &p);
    let sampler = ChainGraphSampler::new(&net, &p).unwrap();
    let draws = 200_000;
    let mut counts: HashMap<Cov, usize> = HashMap::new();
    for l in sampler.covariate_draws(draws, 200, 1, 5) {
        *counts.entry(l).or_default() += 1;
    }
    let tv = total_variation(&exact, &counts, draws);
    assert!(tv < 0.015, "total variation {tv}");
}

#[test]
fn treatment_layer_matches_enumeration() {
    let net = path(3);
    let p = random_params(12, None);
    let l: Cov = vec![[1, 0, 1], [0, 1, 1], [1, 1, 0]];
    let exact = treatment_law(&net, &p, &l);
    let sampler = ChainGraphSampler::new(&net, &p).unwrap();
    let mut rng = stream_rng(6, 0);
    let mut a = vec![0u8; 3];
    let mut counts: HashMap<Vec<u8>, usize> = HashMap::new();
    let draws = 100_000;
    for s in 0..draws + 100 {
        sampler.sweep_treatments(&l, &mut a, &mut rng);
        if s >= 100 {
            *counts.entry(a.clone()).or_default() += 1;
        }
    }
    let tv = total_variation(&exact, &counts, draws);
    assert!(tv < 0.01, "total variation {tv}");
}

#[test]
fn outcome_layer_matches_enumeration() {
    let net = path(3);
    let p = random_params(13, Some(0.9));
    let l: Cov = vec![[0, 0, 1], [1, 1, 0], [0, 1, 1]];
    let a = [1u8, 0, 1];
    let exact = outcome_law(&net, &p, &l, &a);
    let sampler = ChainGraphSampler::new(&net, &p).unwrap();
    let mut rng = stream_rng(7, 0);
    let mut y = vec![0u8; 3];
    let mut counts: HashMap<Vec<u8>, usize> = HashMap::new();
    let draws = 100_000;
    for s in 0..draws + 100 {
        sampler.sweep_outcomes(&l, &a, &mut y, &mut rng);
        if s >= 100 {
            *counts.entry(y.clone()).or_default() += 1;
        }
    }
    let tv = total_variation(&exact, &counts, draws);
    assert!(tv < 0.01, "total variation {tv}");
}

#[test]
fn counterfactual_means_match_enumeration() {
    let net = path(3);
    let p: SimParams = random_params(14, Some(-0.8));
    let l: Cov = vec![[1, 0, 0], [0, 1, 1], [1, 1, 1]];
    let alpha = 0.6;
    // E[Y_i(a)] averaged over a ~ Bernoulli(alpha)^3.
    let mut exact = [0.0; 3];
    let mut exact_treated = [0.0; 3];
    for mask in 0..8usize {
        let a: Vec<u8> = (0..3).map(|b| ((mask >> b) & 1) as u8).collect();
        let weight: f64 = a.iter().map(|&v| if v == 1 { alpha } else { 1.0 - alpha }).product();
        for (y, py) in outcome_law(&net, &p, &l, &a) {
            for i in 0..3 {
                exact[i] += weight * py * f64::from(y[i]);
                if a[i] == 1 {
                    exact_treated[i] += weight / alpha * py * f64::from(y[i]);
                }
            }
        }
    }
    let hoods = net.punctured_neighborhoods(1);
    let kernel = OutcomeKernel::from_sim(&p, &l, &hoods);
    let controls = GibbsControls {
        burn_in: 20,
        sweeps: 50,
        replications: 4000,
    };
    let got =
        counterfactual_outcome_mean(&kernel, &AllocationPolicy::bernoulli(alpha), controls, &mut stream_rng(8, 0))
            .unwrap();
    for i in 0..3 {
        assert!((got.mean[i] - exact[i]).abs() < 0.01, "node {i}: {} vs {}", got.mean[i], exact[i]);
        assert!(
            (got.own_treated[i] - exact_treated[i]).abs() < 0.015,
            "node {i} pinned: {} vs {}",
            got.own_treated[i],
            exact_treated[i]
        );
    }
}
