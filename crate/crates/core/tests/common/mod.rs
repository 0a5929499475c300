//! Exact laws of the chain-graph model on tiny networks, by enumeration.
#![allow(dead_code)]

use netaipw::automodel::{FittedModel, FittedNuisance, ModelSpec};
use netaipw::chainsim::{Covariates, Dataset, SimParams};
use netaipw::estimator::{aaipw_score, EstimationContext, PropensityControls};
use netaipw::netgraph::Network;
use netaipw::propensity::LocalAssignment;
use rand::Rng;
use rayon::prelude::*;

pub type Cov = Vec<[u8; 3]>;

pub fn path(n: usize) -> Network {
    Network::new(n, (1..n).map(|i| (i - 1, i))).unwrap()
}

/// Random parameters with symmetric ν, so the covariate conditionals have a
/// joint law; `theta9` sets the outcome–outcome coupling.
pub fn random_params(seed: u64, theta9: Option<f64>) -> SimParams {
    let mut rng = netaipw::stream_rng(seed, 77);
    let mut u = |s: f64| rng.gen_range(-s..s);
    let mut p = SimParams::null();
    for t in &mut p.tau {
        *t = u(1.0);
    }
    for a in 0..3 {
        for b in a..3 {
            let nu = u(0.5);
            p.nu[a][b] = nu;
            p.nu[b][a] = nu;
            if a != b {
                let rho = u(0.8);
                p.rho[a][b] = rho;
                p.rho[b][a] = rho;
            }
        }
    }
    for e in &mut p.eta {
        *e = u(1.0);
    }
    for t in &mut p.theta {
        *t = u(1.0);
    }
    if let Some(t9) = theta9 {
        p.theta[9] = t9;
    }
    p
}

fn bits(mask: usize, len: usize) -> Vec<u8> {
    (0..len).map(|b| ((mask >> b) & 1) as u8).collect()
}

fn normalize(mut w: Vec<(Vec<u8>, f64)>) -> Vec<(Vec<u8>, f64)> {
    let max = w.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = w.iter().map(|x| (x.1 - max).exp()).sum();
    for x in &mut w {
        x.1 = (x.1 - max).exp() / z;
    }
    w
}

/// Joint covariate energy for symmetric ν.
pub fn covariate_energy(net: &Network, p: &SimParams, l: &Cov) -> f64 {
    let mut e = 0.0;
    for li in l {
        for c in 0..3 {
            e += p.tau[c] * f64::from(li[c]);
            for d in (c + 1)..3 {
                e += p.rho[c][d] * f64::from(li[c] * li[d]);
            }
        }
    }
    for (i, j) in net.edges() {
        for c in 0..3 {
            for d in 0..3 {
                e += p.nu[c][d] * f64::from(l[i][c] * l[j][d]);
            }
        }
    }
    e
}

/// Stationary covariate law; checks the energy against the conditionals.
pub fn covariate_law(net: &Network, p: &SimParams) -> Vec<(Cov, f64)> {
    let n = net.node_count();
    let hoods = net.punctured_neighborhoods(1);
    let decode = |mask: usize| -> Cov {
        let b = bits(mask, 3 * n);
        (0..n).map(|i| [b[3 * i], b[3 * i + 1], b[3 * i + 2]]).collect()
    };
    let probe = decode(0b1011_0110_1101 & ((1 << (3 * n)) - 1));
    for i in 0..n {
        for c in 0..3 {
            let (mut on, mut off) = (probe.clone(), probe.clone());
            on[i][c] = 1;
            off[i][c] = 0;
            let diff = covariate_energy(net, p, &on) - covariate_energy(net, p, &off);
            assert!((diff - p.covariate_logit(&probe, &hoods[i], i, c)).abs() < 1e-12);
        }
    }
    let w = normalize((0..1usize << (3 * n)).map(|m| (bits(m, 3 * n), covariate_energy(net, p, &decode(m)))).collect());
    w.into_iter().enumerate().map(|(m, (_, pr))| (decode(m), pr)).collect()
}

pub fn treatment_law(net: &Network, p: &SimParams, l: &Cov) -> Vec<(Vec<u8>, f64)> {
    let n = net.node_count();
    let hoods = net.punctured_neighborhoods(1);
    let offsets: Vec<f64> = (0..n).map(|i| p.treatment_offset(l, &hoods[i], i)).collect();
    normalize(
        (0..1usize << n)
            .map(|m| {
                let a = bits(m, n);
                let mut e: f64 = (0..n).map(|i| offsets[i] * f64::from(a[i])).sum();
                e += net.edges().into_iter().map(|(i, j)| p.eta[7] * f64::from(a[i] * a[j])).sum::<f64>();
                (a, e)
            })
            .collect(),
    )
}

pub fn outcome_law(net: &Network, p: &SimParams, l: &Cov, a: &[u8]) -> Vec<(Vec<u8>, f64)> {
    let n = net.node_count();
    let hoods = net.punctured_neighborhoods(1);
    let zeros = vec![0u8; n];
    let fields: Vec<f64> = (0..n).map(|i| p.outcome_logit(l, a, &zeros, &hoods[i], i)).collect();
    normalize(
        (0..1usize << n)
            .map(|m| {
                let y = bits(m, n);
                let mut e: f64 = (0..n).map(|i| fields[i] * f64::from(y[i])).sum();
                e += net.edges().into_iter().map(|(i, j)| p.theta[9] * f64::from(y[i] * y[j])).sum::<f64>();
                (y, e)
            })
            .collect(),
    )
}

pub fn dataset(l: &Cov, a: &[u8], y: &[u8]) -> Dataset {
    let values = l.iter().flat_map(|r| r.iter().map(|&v| f64::from(v))).collect();
    Dataset::new(y.to_vec(), a.to_vec(), Covariates::new(3, values).unwrap()).unwrap()
}

/// All local assignments of every node's closed 1-hop neighborhood.
pub fn local_assignments(net: &Network) -> Vec<(usize, LocalAssignment)> {
    let mut out = Vec::new();
    for i in 0..net.node_count() {
        let hood = net.neighborhood(i, 1).unwrap();
        for m in 0..1usize << hood.len() {
            out.push((i, LocalAssignment::new(hood.clone(), bits(m, hood.len())).unwrap()));
        }
    }
    out
}

/// Largest `|E[Ŵ_i(a)] − E[Y_i(a, A_{−N_i})]|` over nodes and local
/// assignments, with Ŵ built from the given outcome and treatment
/// coefficients and all expectations taken exactly.
pub fn dr_gap(net: &Network, truth: &SimParams, theta: &[f64], eta: &[f64]) -> f64 {
    // A million tiny contexts: run them on a pool worker so the library's
    // parallel loops execute inline instead of round-tripping to the pool.
    rayon::ThreadPoolBuilder::new()
        .build()
        .expect("pool")
        .install(|| dr_gap_inline(net, truth, theta, eta))
}

fn dr_gap_inline(net: &Network, truth: &SimParams, theta: &[f64], eta: &[f64]) -> f64 {
    let targets = local_assignments(net);
    let index = |a: &[u8]| a.iter().enumerate().map(|(b, &v)| usize::from(v) << b).sum::<usize>();
    let zero = || (vec![0.0; targets.len()], vec![0.0; targets.len()]);
    let (expected_w, expected_y) = covariate_law(net, truth)
        .into_par_iter()
        .fold(zero, |(mut ew, mut ey), (l, pl)| {
            let a_law = treatment_law(net, truth, &l);
            let y_laws: Vec<Vec<(Vec<u8>, f64)>> = a_law.iter().map(|(a, _)| outcome_law(net, truth, &l, a)).collect();
            // Potential outcomes: the outcome law under the substituted assignment.
            for (t, (i, local)) in targets.iter().enumerate() {
                for (a, pa) in &a_law {
                    let mut sub = a.clone();
                    for (&j, &v) in local.nodes().iter().zip(local.values()) {
                        sub[j] = v;
                    }
                    let p1: f64 = y_laws[index(&sub)].iter().filter(|(y, _)| y[*i] == 1).map(|x| x.1).sum();
                    ey[t] += pl * pa * p1;
                }
            }
            for ((a, pa), y_law) in a_law.iter().zip(&y_laws) {
                let datasets: Vec<Dataset> = y_law.iter().map(|(y, _)| dataset(&l, a, y)).collect();
                // Propensities depend on (L, A) only; the outcome regression
                // is rebuilt for every outcome vector.
                let base = EstimationContext::new(
                    net,
                    &datasets[0],
                    &FittedNuisance {
                        outcome: outcome_model(net, &datasets[0], theta),
                        treatment: FittedModel::with_coefficients(net, &datasets[0], ModelSpec::treatment(3, 1), None, eta.to_vec())
                            .unwrap(),
                    },
                    1,
                    // The identity is about exact propensities; the clip
                    // floor would bias the rare configurations it touches.
                    PropensityControls {
                        clip: 0.0,
                        ..PropensityControls::default()
                    },
                )
                .unwrap();
                for (data, (_, py)) in datasets.iter().zip(y_law) {
                    let ctx = EstimationContext {
                        data,
                        regression: outcome_model(net, data, theta).outcome_regression().unwrap(),
                        neighborhoods: base.neighborhoods.clone(),
                        energy: base.energy.clone(),
                        observed: base.observed.clone(),
                        ..base
                    };
                    for (t, (i, local)) in targets.iter().enumerate() {
                        ew[t] += pl * pa * py * aaipw_score(&ctx, *i, local).unwrap().w;
                    }
                }
            }
            (ew, ey)
        })
        .reduce(zero, |(mut w1, mut y1), (w2, y2)| {
            w1.iter_mut().zip(&w2).for_each(|(a, b)| *a += b);
            y1.iter_mut().zip(&y2).for_each(|(a, b)| *a += b);
            (w1, y1)
        });
    expected_w.iter().zip(&expected_y).map(|(w, y)| (w - y).abs()).fold(0.0, f64::max)
}

fn outcome_model(net: &Network, data: &Dataset, theta: &[f64]) -> FittedModel {
    FittedModel::with_coefficients(net, data, ModelSpec::outcome(3, 1), None, theta.to_vec()).unwrap()
}

/// Coefficients moved by a seeded random offset.
pub fn perturb(values: &[f64], seed: u64, scale: f64) -> Vec<f64> {
    let mut rng = netaipw::stream_rng(seed, 991);
    values.iter().map(|v| v + rng.gen_range(-scale..scale)).collect()
}
