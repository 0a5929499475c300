//! Gibbs sampler for the chain-graph data-generating process: three binary
//! covariates per node, a binary treatment layer and a binary outcome layer,
//! each an auto-logistic model over the `K`-hop neighborhood.
//!
//! Sweeps visit nodes in ascending order; an iteration sweeps all covariates,
//! then all treatments, then all outcomes. States start from fair coin flips.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::netgraph::Network;
use crate::propensity::AllocationPolicy;
use crate::{expit, stream_rng, Error, Result};

/// Number of covariates in the simulated design.
pub const SIM_COVARIATES: usize = 3;

/// Generative parameters of the chain-graph model.
///
/// `eta` indexes the treatment conditional
/// `η0 + η1 L1 + η2 ΣL1 + η3 L2 + η4 ΣL2 + η5 L3 + η6 ΣL3 + η7 ΣA`, and
/// `theta` the outcome conditional
/// `θ0 + θ1 A + θ2 ΣA + θ3 L1 + θ4 ΣL1 + θ5 L2 + θ6 ΣL2 + θ7 L3 + θ8 ΣL3 + θ9 ΣY`,
/// with sums over the punctured `k`-hop neighborhood.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "BTreeMap<String, f64>", try_from = "BTreeMap<String, f64>")]
pub struct SimParams {
    pub tau: [f64; 3],
    /// Within-node covariate couplings; only the off-diagonal entries are
    /// read and the matrix is kept symmetric.
    pub rho: [[f64; 3]; 3],
    /// `nu[k][l]` multiplies the neighbor sum of covariate `l` in the
    /// conditional of covariate `k`.
    pub nu: [[f64; 3]; 3],
    pub eta: [f64; 8],
    pub theta: [f64; 10],
    pub k: usize,
}

impl SimParams {
    /// Reference parameters of the simulation study for attachment parameter `m`.
    ///
    /// Outcome coefficients, intercept first:
    /// `(−m, −2m, 2, 2, 0.1, −1, 0.1, 2, 0.1, 0)`, so there is no
    /// outcome–outcome coupling.
    pub fn reference(m: usize) -> Self {
        let m = m as f64;
        let mut rho = [[0.0; 3]; 3];
        rho[0][1] = 0.1;
        rho[0][2] = 0.2;
        rho[1][2] = 0.1;
        symmetrize(&mut rho);
        let mut nu = [[0.0; 3]; 3];
        nu[0][0] = 0.1;
        nu[1][0] = 0.1;
        nu[2][0] = 0.1;
        Self {
            tau: [-1.0, 0.5, -0.5],
            rho,
            nu,
            eta: [-1.0, 2.0, 0.1, -2.0, 0.1, 2.0, 0.1, 0.1],
            theta: [-m, -2.0 * m, 2.0, 2.0, 0.1, -1.0, 0.1, 2.0, 0.1, 0.0],
            k: 1,
        }
    }

    /// All parameters zero: every conditional is a fair coin.
    pub fn null() -> Self {
        Self {
            tau: [0.0; 3],
            rho: [[0.0; 3]; 3],
            nu: [[0.0; 3]; 3],
            eta: [0.0; 8],
            theta: [0.0; 10],
            k: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self
            .tau
            .iter()
            .chain(self.rho.iter().flatten())
            .chain(self.nu.iter().flatten())
            .chain(self.eta.iter())
            .chain(self.theta.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidParameter("non-finite simulation parameter".into()));
        }
        for a in 0..3 {
            for b in 0..3 {
                if a != b && self.rho[a][b] != self.rho[b][a] {
                    return Err(Error::InvalidParameter(format!(
                        "rho{}{} != rho{}{}",
                        a + 1,
                        b + 1,
                        b + 1,
                        a + 1
                    )));
                }
            }
        }
        if self.k == 0 {
            return Err(Error::InvalidParameter("neighborhood radius K must be >= 1".into()));
        }
        Ok(())
    }

    /// Logit of `P(L_{c,i} = 1 | rest)`.
    pub fn covariate_logit(&self, l: &[[u8; 3]], hood: &[usize], i: usize, c: usize) -> f64 {
        let mut sums = [0.0; 3];
        for &j in hood {
            for (s, &v) in sums.iter_mut().zip(&l[j]) {
                *s += f64::from(v);
            }
        }
        let mut x = self.tau[c];
        for other in 0..3 {
            if other != c {
                x += self.rho[c][other] * f64::from(l[i][other]);
            }
            x += self.nu[c][other] * sums[other];
        }
        x
    }

    /// Covariate part `G_i` of the treatment conditional (everything but the
    /// neighbor-treatment term).
    pub fn treatment_offset(&self, l: &[[u8; 3]], hood: &[usize], i: usize) -> f64 {
        let sums = neighbor_sums(l, hood);
        let e = &self.eta;
        e[0] + e[1] * f64::from(l[i][0])
            + e[2] * sums[0]
            + e[3] * f64::from(l[i][1])
            + e[4] * sums[1]
            + e[5] * f64::from(l[i][2])
            + e[6] * sums[2]
    }

    /// Logit of `P(A_i = 1 | rest)`.
    pub fn treatment_logit(&self, l: &[[u8; 3]], a: &[u8], hood: &[usize], i: usize) -> f64 {
        let treated: f64 = hood.iter().map(|&j| f64::from(a[j])).sum();
        self.treatment_offset(l, hood, i) + self.eta[7] * treated
    }

    /// Covariate part of the outcome conditional.
    pub fn outcome_offset(&self, l: &[[u8; 3]], hood: &[usize], i: usize) -> f64 {
        let sums = neighbor_sums(l, hood);
        let t = &self.theta;
        t[0] + t[3] * f64::from(l[i][0])
            + t[4] * sums[0]
            + t[5] * f64::from(l[i][1])
            + t[6] * sums[1]
            + t[7] * f64::from(l[i][2])
            + t[8] * sums[2]
    }

    /// Logit of `P(Y_i = 1 | rest)`.
    pub fn outcome_logit(&self, l: &[[u8; 3]], a: &[u8], y: &[u8], hood: &[usize], i: usize) -> f64 {
        let treated: f64 = hood.iter().map(|&j| f64::from(a[j])).sum();
        let positive: f64 = hood.iter().map(|&j| f64::from(y[j])).sum();
        self.outcome_offset(l, hood, i)
            + self.theta[1] * f64::from(a[i])
            + self.theta[2] * treated
            + self.theta[9] * positive
    }
}

fn symmetrize(m: &mut [[f64; 3]; 3]) {
    for a in 0..3 {
        for b in (a + 1)..3 {
            m[b][a] = m[a][b];
        }
    }
}

fn neighbor_sums(l: &[[u8; 3]], hood: &[usize]) -> [f64; 3] {
    let mut sums = [0.0; 3];
    for &j in hood {
        for (s, &v) in sums.iter_mut().zip(&l[j]) {
            *s += f64::from(v);
        }
    }
    sums
}

impl From<SimParams> for BTreeMap<String, f64> {
    fn from(p: SimParams) -> Self {
        let mut out = BTreeMap::new();
        for c in 0..3 {
            out.insert(format!("tau{}", c + 1), p.tau[c]);
            for d in 0..3 {
                out.insert(format!("nu{}{}", c + 1, d + 1), p.nu[c][d]);
                if c < d {
                    out.insert(format!("rho{}{}", c + 1, d + 1), p.rho[c][d]);
                }
            }
        }
        for (idx, v) in p.eta.iter().enumerate() {
            out.insert(format!("eta{idx}"), *v);
        }
        for (idx, v) in p.theta.iter().enumerate() {
            out.insert(format!("theta{idx}"), *v);
        }
        out.insert("K".into(), p.k as f64);
        out
    }
}

impl TryFrom<BTreeMap<String, f64>> for SimParams {
    type Error = Error;

    /// Every key is required; unknown keys are rejected.
    fn try_from(mut map: BTreeMap<String, f64>) -> Result<Self> {
        let mut take = |key: String| {
            map.remove(&key)
                .ok_or_else(|| Error::InvalidParameter(format!("missing parameter {key}")))
        };
        let mut p = SimParams::null();
        for c in 0..3 {
            p.tau[c] = take(format!("tau{}", c + 1))?;
            for d in 0..3 {
                p.nu[c][d] = take(format!("nu{}{}", c + 1, d + 1))?;
                if c < d {
                    p.rho[c][d] = take(format!("rho{}{}", c + 1, d + 1))?;
                }
            }
        }
        symmetrize(&mut p.rho);
        for idx in 0..8 {
            p.eta[idx] = take(format!("eta{idx}"))?;
        }
        for idx in 0..10 {
            p.theta[idx] = take(format!("theta{idx}"))?;
        }
        let k = take("K".into())?;
        if k < 1.0 || k.fract() != 0.0 {
            return Err(Error::InvalidParameter(format!("K must be a positive integer, got {k}")));
        }
        p.k = k as usize;
        if let Some(extra) = map.keys().next() {
            return Err(Error::InvalidParameter(format!("unknown parameter {extra}")));
        }
        p.validate()?;
        Ok(p)
    }
}

/// Per-node covariate rows, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Covariates {
    width: usize,
    values: Vec<f64>,
}

impl Covariates {
    pub fn new(width: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 && !values.is_empty() {
            return Err(Error::Mismatch("zero-width covariates with values".into()));
        }
        if width > 0 && !values.len().is_multiple_of(width) {
            return Err(Error::Mismatch(format!(
                "{} covariate values do not fill rows of width {width}",
                values.len()
            )));
        }
        Ok(Self { width, values })
    }

    pub fn from_binary(rows: &[[u8; 3]]) -> Self {
        Self {
            width: 3,
            values: rows.iter().flatten().map(|&v| f64::from(v)).collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn rows(&self) -> usize {
        self.values.len().checked_div(self.width).unwrap_or(0)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.width..(i + 1) * self.width]
    }

    pub fn get(&self, i: usize, c: usize) -> f64 {
        self.values[i * self.width + c]
    }

    /// Binary triples, if this is a simulation-shaped design.
    pub fn to_binary(&self) -> Option<Vec<[u8; 3]>> {
        if self.width != 3 {
            return None;
        }
        self.values
            .chunks(3)
            .map(|r| {
                let mut out = [0u8; 3];
                for (o, &v) in out.iter_mut().zip(r) {
                    *o = match v {
                        0.0 => 0,
                        1.0 => 1,
                        _ => return None,
                    };
                }
                Some(out)
            })
            .collect()
    }
}

/// Observed data aligned to the network's node ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub y: Vec<u8>,
    pub a: Vec<u8>,
    pub covariates: Covariates,
}

impl Dataset {
    pub fn new(y: Vec<u8>, a: Vec<u8>, covariates: Covariates) -> Result<Self> {
        let n = y.len();
        if a.len() != n || covariates.rows() != n && covariates.width() > 0 {
            return Err(Error::Mismatch(format!(
                "outcome/treatment/covariate lengths {}/{}/{} disagree",
                n,
                a.len(),
                covariates.rows()
            )));
        }
        if y.iter().chain(&a).any(|&v| v > 1) {
            return Err(Error::Mismatch("outcome and treatment must be binary".into()));
        }
        Ok(Self { y, a, covariates })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn check_against(&self, net: &Network) -> Result<()> {
        if self.len() != net.node_count() {
            return Err(Error::Mismatch(format!(
                "dataset has {} rows, network has {} nodes",
                self.len(),
                net.node_count()
            )));
        }
        Ok(())
    }
}

/// Binary chain state.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub l: Vec<[u8; 3]>,
    pub a: Vec<u8>,
    pub y: Vec<u8>,
}

impl ChainState {
    /// Independent fair coin flips.
    pub fn coin_flips<R: Rng>(n: usize, rng: &mut R) -> Self {
        let l = (0..n)
            .map(|_| [rng.gen_range(0..2), rng.gen_range(0..2), rng.gen_range(0..2)])
            .collect();
        let a = (0..n).map(|_| rng.gen_range(0..2)).collect();
        let y = (0..n).map(|_| rng.gen_range(0..2)).collect();
        Self { l, a, y }
    }

    pub fn to_dataset(&self) -> Dataset {
        Dataset {
            y: self.y.clone(),
            a: self.a.clone(),
            covariates: Covariates::from_binary(&self.l),
        }
    }
}

#[inline]
fn bernoulli_logit<R: Rng>(logit: f64, rng: &mut R) -> u8 {
    u8::from(rng.gen::<f64>() < expit(logit))
}

/// Chain-graph Gibbs sampler bound to one network and parameter set.
#[derive(Debug, Clone)]
pub struct ChainGraphSampler<'a> {
    params: &'a SimParams,
    hoods: Vec<Vec<usize>>,
}

impl<'a> ChainGraphSampler<'a> {
    pub fn new(net: &Network, params: &'a SimParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            hoods: net.punctured_neighborhoods(params.k),
        })
    }

    pub fn params(&self) -> &SimParams {
        self.params
    }

    pub fn hoods(&self) -> &[Vec<usize>] {
        &self.hoods
    }

    pub fn node_count(&self) -> usize {
        self.hoods.len()
    }

    /// One sequential sweep over nodes × covariates.
    pub fn sweep_covariates<R: Rng>(&self, l: &mut [[u8; 3]], rng: &mut R) {
        for i in 0..l.len() {
            for c in 0..SIM_COVARIATES {
                let logit = self.params.covariate_logit(l, &self.hoods[i], i, c);
                l[i][c] = bernoulli_logit(logit, rng);
            }
        }
    }

    pub fn sweep_treatments<R: Rng>(&self, l: &[[u8; 3]], a: &mut [u8], rng: &mut R) {
        for i in 0..a.len() {
            let logit = self.params.treatment_logit(l, a, &self.hoods[i], i);
            a[i] = bernoulli_logit(logit, rng);
        }
    }

    pub fn sweep_outcomes<R: Rng>(&self, l: &[[u8; 3]], a: &[u8], y: &mut [u8], rng: &mut R) {
        for i in 0..y.len() {
            let logit = self.params.outcome_logit(l, a, y, &self.hoods[i], i);
            y[i] = bernoulli_logit(logit, rng);
        }
    }

    /// Covariates, then treatments, then outcomes.
    pub fn sweep<R: Rng>(&self, state: &mut ChainState, rng: &mut R) {
        self.sweep_covariates(&mut state.l, rng);
        self.sweep_treatments(&state.l, &mut state.a, rng);
        self.sweep_outcomes(&state.l, &state.a, &mut state.y, rng);
    }

    /// Covariate-layer-only chain, for drawing `L` from its own law.
    pub fn covariate_draws(&self, draws: usize, burn_in: usize, stride: usize, seed: u64) -> Vec<Vec<[u8; 3]>> {
        let mut rng = stream_rng(seed, 1);
        let mut l = ChainState::coin_flips(self.node_count(), &mut rng).l;
        for _ in 0..burn_in {
            self.sweep_covariates(&mut l, &mut rng);
        }
        let stride = stride.max(1);
        let mut out = Vec::with_capacity(draws);
        for _ in 0..draws {
            for _ in 0..stride {
                self.sweep_covariates(&mut l, &mut rng);
            }
            out.push(l.clone());
        }
        out
    }
}

/// Iterator over post-burn-in snapshots of the full chain.
#[derive(Debug)]
pub struct SimulationStream<'a> {
    sampler: ChainGraphSampler<'a>,
    state: ChainState,
    rng: rand_chacha::ChaCha8Rng,
    iteration: usize,
    n_iter: usize,
    burn_in: usize,
    thin: usize,
}

/// Gibbs stream of `n_iter` full iterations, yielding one dataset per
/// iteration after the first `burn_in`.
pub fn simulate_stream<'a>(
    net: &Network,
    params: &'a SimParams,
    n_iter: usize,
    burn_in: usize,
    seed: u64,
) -> Result<SimulationStream<'a>> {
    if burn_in >= n_iter {
        return Err(Error::InvalidParameter(format!(
            "burn_in {burn_in} must be below n_iter {n_iter}"
        )));
    }
    let sampler = ChainGraphSampler::new(net, params)?;
    let mut rng = stream_rng(seed, 0);
    let state = ChainState::coin_flips(net.node_count(), &mut rng);
    Ok(SimulationStream {
        sampler,
        state,
        rng,
        iteration: 0,
        n_iter,
        burn_in,
        thin: 1,
    })
}

impl<'a> SimulationStream<'a> {
    /// Keep every `stride`-th post-burn-in iteration.
    pub fn thin(mut self, stride: usize) -> Self {
        self.thin = stride.max(1);
        self
    }

    pub fn state(&self) -> &ChainState {
        &self.state
    }
}

impl Iterator for SimulationStream<'_> {
    type Item = Dataset;

    fn next(&mut self) -> Option<Dataset> {
        while self.iteration < self.n_iter {
            self.sampler.sweep(&mut self.state, &mut self.rng);
            self.iteration += 1;
            let post = self.iteration - 1;
            if post >= self.burn_in && (post - self.burn_in).is_multiple_of(self.thin) {
                return Some(self.state.to_dataset());
            }
        }
        None
    }
}

/// Auto-logistic outcome law used for counterfactual simulation:
/// `logit P(Y_i = 1 | rest) = offset_i + own·a_i + neighbor·Σa_j + outcome·ΣY_j`.
#[derive(Debug, Clone)]
pub struct OutcomeKernel<'a> {
    pub offset: Vec<f64>,
    pub own_treatment: f64,
    pub neighbor_treatment: f64,
    pub neighbor_outcome: f64,
    pub hoods: &'a [Vec<usize>],
}

impl<'a> OutcomeKernel<'a> {
    /// The generative outcome law at covariates `l`.
    pub fn from_sim(params: &SimParams, l: &[[u8; 3]], hoods: &'a [Vec<usize>]) -> Self {
        let offset = (0..l.len()).map(|i| params.outcome_offset(l, &hoods[i], i)).collect();
        Self {
            offset,
            own_treatment: params.theta[1],
            neighbor_treatment: params.theta[2],
            neighbor_outcome: params.theta[9],
            hoods,
        }
    }

    #[inline]
    pub fn logit(&self, a: &[u8], y: &[u8], i: usize) -> f64 {
        let hood = &self.hoods[i];
        let treated: f64 = hood.iter().map(|&j| f64::from(a[j])).sum();
        let positive: f64 = hood.iter().map(|&j| f64::from(y[j])).sum();
        self.offset[i]
            + self.own_treatment * f64::from(a[i])
            + self.neighbor_treatment * treated
            + self.neighbor_outcome * positive
    }

    pub fn sweep<R: Rng>(&self, a: &[u8], y: &mut [u8], rng: &mut R) {
        for i in 0..y.len() {
            let logit = self.logit(a, y, i);
            y[i] = bernoulli_logit(logit, rng);
        }
    }

    /// A sweep that also adds each node's full-conditional probability to
    /// `acc` (the Rao-Blackwellized outcome).
    pub fn sweep_accumulate<R: Rng>(&self, a: &[u8], y: &mut [u8], acc: &mut [f64], rng: &mut R) {
        for i in 0..y.len() {
            let p = expit(self.logit(a, y, i));
            acc[i] += p;
            y[i] = u8::from(rng.gen::<f64>() < p);
        }
    }
}

/// Burn-in, retained sweeps and independent treatment draws for a
/// counterfactual outcome simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GibbsControls {
    pub burn_in: usize,
    pub sweeps: usize,
    pub replications: usize,
}

impl Default for GibbsControls {
    fn default() -> Self {
        Self {
            burn_in: 20,
            sweeps: 30,
            replications: 8,
        }
    }
}

/// Per-node counterfactual outcome means under an allocation policy.
#[derive(Debug, Clone, PartialEq)]
pub struct CounterfactualMeans {
    /// `E[Y_i(a)]` averaged over the policy.
    pub mean: Vec<f64>,
    /// The policy with `a_i` pinned to one: the average over the
    /// replications in which node `i` happened to draw treatment. NaN when
    /// it never did.
    pub own_treated: Vec<f64>,
    /// Same with `a_i` pinned to zero.
    pub own_control: Vec<f64>,
    /// Standard error of the node-averaged mean across replications.
    pub mc_error: f64,
}

/// Simulates `Y(a)` for treatment vectors drawn from `allocation`, running
/// the outcome chain under `kernel` with `a` held fixed, and averages the
/// full-conditional probabilities of the retained sweeps per node.
///
/// Because the allocation is a product measure, the replications in which
/// node `i` drew `a_i = v` are draws from the allocation with `a_i` pinned to
/// `v`; averaging over them gives both pinned arms from one simulation.
pub fn counterfactual_outcome_mean<R: Rng>(
    kernel: &OutcomeKernel<'_>,
    allocation: &AllocationPolicy,
    controls: GibbsControls,
    rng: &mut R,
) -> Result<CounterfactualMeans> {
    if controls.replications == 0 {
        return Err(Error::InvalidParameter("replications must be positive".into()));
    }
    if controls.sweeps == 0 {
        return Err(Error::InvalidParameter("retained sweeps must be positive".into()));
    }
    let n = kernel.offset.len();
    allocation.validate(n)?;
    let mut mean = vec![0.0; n];
    let mut treated = vec![0.0; n];
    let mut control = vec![0.0; n];
    let mut treated_count = vec![0usize; n];
    let mut rep_means = Vec::with_capacity(controls.replications);
    let mut y = vec![0u8; n];
    let mut acc = vec![0.0; n];
    for _ in 0..controls.replications {
        let a = allocation.draw(n, rng);
        for v in y.iter_mut() {
            *v = rng.gen_range(0..2);
        }
        for _ in 0..controls.burn_in {
            kernel.sweep(&a, &mut y, rng);
        }
        acc.iter_mut().for_each(|c| *c = 0.0);
        for _ in 0..controls.sweeps {
            kernel.sweep_accumulate(&a, &mut y, &mut acc, rng);
        }
        let mut total = 0.0;
        for i in 0..n {
            let m = acc[i] / controls.sweeps as f64;
            total += m;
            mean[i] += m;
            if a[i] == 1 {
                treated[i] += m;
                treated_count[i] += 1;
            } else {
                control[i] += m;
            }
        }
        rep_means.push(total / n.max(1) as f64);
    }
    let reps = controls.replications;
    let ratio = |sum: f64, count: usize| if count > 0 { sum / count as f64 } else { f64::NAN };
    for i in 0..n {
        mean[i] /= reps as f64;
        treated[i] = ratio(treated[i], treated_count[i]);
        control[i] = ratio(control[i], reps - treated_count[i]);
    }
    Ok(CounterfactualMeans {
        mean,
        own_treated: treated,
        own_control: control,
        mc_error: standard_error(&rep_means),
    })
}

/// Mean over the finite entries; NaN when there are none.
pub fn finite_mean(values: &[f64]) -> f64 {
    let (sum, count) = values
        .iter()
        .filter(|v| v.is_finite())
        .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    if count == 0 {
        f64::NAN
    } else {
        sum / count as f64
    }
}

/// Standard error of the mean; zero for fewer than two values.
pub(crate) fn standard_error(values: &[f64]) -> f64 {
    let k = values.len();
    if k < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / k as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
    (var / k as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgraph::generate_ba_capped;

    fn pair() -> Network {
        Network::new(2, [(0, 1)]).unwrap()
    }

    #[test]
    fn null_params_give_fair_coins() {
        let p = SimParams::null();
        let l = vec![[1, 0, 1], [0, 1, 1]];
        let hoods = pair().punctured_neighborhoods(1);
        for c in 0..3 {
            assert_eq!(expit(p.covariate_logit(&l, &hoods[0], 0, c)), 0.5);
        }
        assert_eq!(expit(p.treatment_logit(&l, &[1, 1], &hoods[0], 0)), 0.5);
        assert_eq!(expit(p.outcome_logit(&l, &[1, 1], &[1, 0], &hoods[1], 1)), 0.5);
    }

    #[test]
    fn reference_conditionals_on_isolated_node() {
        let p = SimParams::reference(1);
        let none: Vec<usize> = Vec::new();
        let pr = expit(p.covariate_logit(&[[0, 0, 0]], &none, 0, 0));
        assert!((pr - 0.268_941_421_369_995).abs() < 1e-12);

        let mut q = SimParams::null();
        q.eta[0] = -1.0;
        q.eta[1] = 2.0;
        let pa = expit(q.treatment_logit(&[[1, 0, 0]], &[0], &none, 0));
        assert!((pa - 0.731_058_578_630_005).abs() < 1e-12);

        let mut r = SimParams::null();
        r.theta[1] = -1.0;
        let py = expit(r.outcome_logit(&[[0, 0, 0]], &[1], &[0], &none, 0));
        assert!((py - 0.268_941_421_369_995).abs() < 1e-12);
    }

    #[test]
    fn third_covariate_uses_second() {
        let mut p = SimParams::null();
        p.rho[1][2] = 1.5;
        p.rho[2][1] = 1.5;
        let none: Vec<usize> = Vec::new();
        assert_eq!(p.covariate_logit(&[[0, 1, 0]], &none, 0, 2), 1.5);
        assert_eq!(p.covariate_logit(&[[0, 0, 1]], &none, 0, 2), 0.0);
    }

    #[test]
    fn params_round_trip_through_symbol_table() {
        let p = SimParams::reference(3);
        let map: BTreeMap<String, f64> = p.clone().into();
        assert_eq!(map["theta1"], -6.0);
        assert_eq!(map["rho13"], 0.2);
        let back = SimParams::try_from(map.clone()).unwrap();
        assert_eq!(back, p);
        let mut broken = map.clone();
        broken.remove("eta7");
        assert!(SimParams::try_from(broken).is_err());
        let mut extra = map;
        extra.insert("eta8".into(), 0.1);
        assert!(SimParams::try_from(extra).is_err());
    }

    #[test]
    fn stream_lengths_and_determinism() {
        let net = generate_ba_capped(40, 2, 5, 1).unwrap();
        let p = SimParams::reference(2);
        assert_eq!(simulate_stream(&net, &p, 1, 0, 5).unwrap().count(), 1);
        assert_eq!(simulate_stream(&net, &p, 30, 10, 5).unwrap().count(), 20);
        assert_eq!(simulate_stream(&net, &p, 30, 10, 5).unwrap().thin(4).count(), 5);
        assert!(simulate_stream(&net, &p, 10, 10, 5).is_err());
        let a: Vec<Dataset> = simulate_stream(&net, &p, 25, 5, 9).unwrap().collect();
        let b: Vec<Dataset> = simulate_stream(&net, &p, 25, 5, 9).unwrap().collect();
        assert_eq!(a, b);
        let c: Vec<Dataset> = simulate_stream(&net, &p, 25, 5, 10).unwrap().collect();
        assert_ne!(a, c);
    }

    #[test]
    fn counterfactual_requires_replications() {
        let hoods = pair().punctured_neighborhoods(1);
        let kernel = OutcomeKernel::from_sim(&SimParams::null(), &[[0; 3]; 2], &hoods);
        let mut rng = stream_rng(1, 0);
        let ctl = GibbsControls {
            burn_in: 1,
            sweeps: 1,
            replications: 0,
        };
        assert!(counterfactual_outcome_mean(&kernel, &AllocationPolicy::bernoulli(0.5), ctl, &mut rng).is_err());
    }

    #[test]
    fn null_counterfactual_is_half() {
        let net = generate_ba_capped(60, 2, 5, 2).unwrap();
        let hoods = net.punctured_neighborhoods(1);
        let l = vec![[1, 0, 1]; 60];
        let kernel = OutcomeKernel::from_sim(&SimParams::null(), &l, &hoods);
        let mut rng = stream_rng(3, 0);
        let ctl = GibbsControls {
            burn_in: 5,
            sweeps: 200,
            replications: 4,
        };
        let out = counterfactual_outcome_mean(&kernel, &AllocationPolicy::bernoulli(0.7), ctl, &mut rng).unwrap();
        let avg = out.mean.iter().sum::<f64>() / 60.0;
        assert!((avg - 0.5).abs() < 0.01, "{avg}");
        assert!((finite_mean(&out.own_treated) - 0.5).abs() < 1e-12);
        assert!((finite_mean(&out.own_control) - 0.5).abs() < 1e-12);
    }
}
