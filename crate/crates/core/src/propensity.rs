//! Neighborhood joint propensity scores under the auto-logistic treatment
//! model, exposure-marginalized propensities and allocation weights.
//!
//! The treatment layer has joint law `P(a | L) ∝ exp(U(a))` with
//! `U(a) = Σ_k a_k G_k + η Σ_{k~j} w_kj a_k a_j`, each unordered partner pair
//! counted once, which is the energy whose full conditionals are the fitted
//! logistic regressions. Conditioning on treatments outside a neighborhood
//! `N` leaves an energy over `a_N` with fields
//! `G_k + η Σ_{j ∉ N} w_kj A_j`.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::chainsim::standard_error;
use crate::netgraph::Network;
use crate::{expit, Error, Result};

/// Largest neighborhood enumerated exactly (2^20 configurations).
pub const DEFAULT_ENUMERATION_CAP: usize = 20;

/// Hypothetical treatment allocation regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AllocationPolicy {
    /// Independent Bernoulli(α) for every node.
    Bernoulli { alpha: f64 },
    /// A fixed treatment vector.
    Fixed { values: Vec<u8> },
    /// Bernoulli(α) except for pinned nodes.
    BernoulliWithPins { alpha: f64, pins: BTreeMap<usize, u8> },
}

impl AllocationPolicy {
    pub fn bernoulli(alpha: f64) -> Self {
        Self::Bernoulli { alpha }
    }

    pub fn all_control(n: usize) -> Self {
        Self::Fixed { values: vec![0; n] }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let alpha_ok = |alpha: f64| (0.0..=1.0).contains(&alpha);
        match self {
            Self::Bernoulli { alpha } if !alpha_ok(*alpha) => {
                Err(Error::InvalidParameter(format!("alpha {alpha} outside [0, 1]")))
            }
            Self::Fixed { values } if values.len() != n => Err(Error::Mismatch(format!(
                "fixed allocation has {} entries for {n} nodes",
                values.len()
            ))),
            Self::Fixed { values } if values.iter().any(|&v| v > 1) => {
                Err(Error::Mismatch("fixed allocation must be binary".into()))
            }
            Self::BernoulliWithPins { alpha, .. } if !alpha_ok(*alpha) => {
                Err(Error::InvalidParameter(format!("alpha {alpha} outside [0, 1]")))
            }
            Self::BernoulliWithPins { pins, .. } => {
                if let Some((&node, _)) = pins.iter().find(|(&node, &v)| node >= n || v > 1) {
                    Err(Error::InvalidParameter(format!("bad pin on node {node}")))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// `P(a_i = 1)` under the policy.
    pub fn marginal(&self, i: usize) -> f64 {
        match self {
            Self::Bernoulli { alpha } => *alpha,
            Self::Fixed { values } => f64::from(values[i]),
            Self::BernoulliWithPins { alpha, pins } => pins.get(&i).map_or(*alpha, |&v| f64::from(v)),
        }
    }

    /// Probability that node `i` receives `value`.
    pub fn weight(&self, i: usize, value: u8) -> f64 {
        let p = self.marginal(i);
        if value == 1 {
            p
        } else {
            1.0 - p
        }
    }

    pub fn draw<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<u8> {
        match self {
            Self::Fixed { values } => values.clone(),
            _ => (0..n)
                .map(|i| {
                    let p = self.marginal(i);
                    u8::from(rng.gen::<f64>() < p)
                })
                .collect(),
        }
    }
}

/// Treatment values on a sorted node set.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LocalAssignment {
    nodes: Vec<usize>,
    values: Vec<u8>,
}

impl LocalAssignment {
    pub fn new(nodes: Vec<usize>, values: Vec<u8>) -> Result<Self> {
        if nodes.len() != values.len() {
            return Err(Error::Mismatch("assignment nodes and values differ in length".into()));
        }
        if nodes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Mismatch("assignment nodes must be strictly increasing".into()));
        }
        if values.iter().any(|&v| v > 1) {
            return Err(Error::Mismatch("assignment values must be binary".into()));
        }
        Ok(Self { nodes, values })
    }

    /// Restriction of a full treatment vector.
    pub fn observed(nodes: &[usize], a: &[u8]) -> Self {
        Self {
            nodes: nodes.to_vec(),
            values: nodes.iter().map(|&j| a[j]).collect(),
        }
    }

    /// Configuration number `mask` over `nodes` (bit `r` ↔ `nodes[r]`).
    pub fn from_mask(nodes: &[usize], mask: usize) -> Self {
        Self {
            nodes: nodes.to_vec(),
            values: (0..nodes.len()).map(|r| ((mask >> r) & 1) as u8).collect(),
        }
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn get(&self, node: usize) -> Option<u8> {
        self.nodes.binary_search(&node).ok().map(|r| self.values[r])
    }

    pub fn mask(&self) -> usize {
        self.values
            .iter()
            .enumerate()
            .fold(0, |m, (r, &v)| m | (usize::from(v) << r))
    }

    pub fn covers(&self, nodes: &[usize]) -> bool {
        nodes.iter().all(|n| self.nodes.binary_search(n).is_ok())
    }
}

/// `Π_j α^{a_j}(1-α)^{1-a_j}` over unpinned nodes times the pin indicator.
pub fn allocation_weight(local: &LocalAssignment, policy: &AllocationPolicy) -> f64 {
    local
        .nodes
        .iter()
        .zip(&local.values)
        .map(|(&j, &v)| policy.weight(j, v))
        .product()
}

/// Auto-logistic treatment energy over the whole network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergySpec {
    /// `G_k`: the covariate part of each node's treatment logit.
    pub offsets: Vec<f64>,
    /// Pairwise coefficient on `a_k a_j`.
    pub interaction: f64,
    /// Interaction partners of each node (its punctured treatment neighborhood).
    pub partners: Vec<Vec<usize>>,
    /// Optional per-partner weights aligned with `partners`; unit when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partner_weights: Option<Vec<Vec<f64>>>,
}

impl EnergySpec {
    pub fn new(offsets: Vec<f64>, interaction: f64, partners: Vec<Vec<usize>>) -> Result<Self> {
        if offsets.len() != partners.len() {
            return Err(Error::Mismatch("energy offsets and partner lists differ in length".into()));
        }
        Ok(Self {
            offsets,
            interaction,
            partners,
            partner_weights: None,
        })
    }

    /// Attach per-partner weights; each weight list must align with its partner
    /// list and be symmetric across the pair.
    pub fn with_weights(mut self, weights: Vec<Vec<f64>>) -> Result<Self> {
        if weights.len() != self.partners.len()
            || weights.iter().zip(&self.partners).any(|(w, p)| w.len() != p.len())
        {
            return Err(Error::Mismatch("partner weights do not align with partners".into()));
        }
        for (k, list) in self.partners.iter().enumerate() {
            for (idx, &j) in list.iter().enumerate() {
                let back = self.partners[j].iter().position(|&x| x == k);
                match back {
                    Some(b) if weights[j][b] == weights[k][idx] => {}
                    _ => return Err(Error::Mismatch(format!("asymmetric weight on pair ({k}, {j})"))),
                }
            }
        }
        self.partner_weights = Some(weights);
        Ok(self)
    }

    pub fn node_count(&self) -> usize {
        self.offsets.len()
    }

    fn weight(&self, k: usize, idx: usize) -> f64 {
        self.partner_weights.as_ref().map_or(1.0, |w| w[k][idx])
    }

    /// Full conditional logit `G_k + η Σ_j w_kj a_j`.
    pub fn conditional_logit(&self, a: &[u8], k: usize) -> f64 {
        let field: f64 = self.partners[k]
            .iter()
            .enumerate()
            .map(|(idx, &j)| self.weight(k, idx) * f64::from(a[j]))
            .sum();
        self.offsets[k] + self.interaction * field
    }

    /// Energy of the neighborhood `nodes` with outside treatments clamped at `a_obs`.
    pub fn local(&self, a_obs: &[u8], nodes: &[usize]) -> Result<LocalEnergy> {
        if a_obs.len() != self.node_count() {
            return Err(Error::Mismatch(format!(
                "treatment vector has {} entries, energy has {} nodes",
                a_obs.len(),
                self.node_count()
            )));
        }
        if nodes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Mismatch("neighborhood must be sorted and distinct".into()));
        }
        let mut field = Vec::with_capacity(nodes.len());
        let mut pairs = Vec::new();
        let mut boundary_treated = Vec::with_capacity(nodes.len());
        let mut internal = vec![Vec::new(); nodes.len()];
        for (r, &k) in nodes.iter().enumerate() {
            if k >= self.node_count() {
                return Err(Error::InvalidNode {
                    node: k,
                    n: self.node_count(),
                });
            }
            let mut outside = 0.0;
            for (idx, &j) in self.partners[k].iter().enumerate() {
                let w = self.weight(k, idx);
                match nodes.binary_search(&j) {
                    Ok(s) => {
                        internal[r].push((s, w));
                        if s > r {
                            pairs.push((r, s, w));
                        }
                    }
                    Err(_) => outside += w * f64::from(a_obs[j]),
                }
            }
            boundary_treated.push(outside);
            field.push(self.offsets[k] + self.interaction * outside);
        }
        Ok(LocalEnergy {
            nodes: nodes.to_vec(),
            field,
            boundary_treated,
            pairs,
            internal,
            interaction: self.interaction,
        })
    }
}

/// Conditional energy of one neighborhood.
#[derive(Debug, Clone)]
pub struct LocalEnergy {
    nodes: Vec<usize>,
    field: Vec<f64>,
    boundary_treated: Vec<f64>,
    pairs: Vec<(usize, usize, f64)>,
    internal: Vec<Vec<(usize, f64)>>,
    interaction: f64,
}

impl LocalEnergy {
    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn size(&self) -> usize {
        self.nodes.len()
    }

    /// `U(a_N)` for configuration `mask`.
    pub fn energy(&self, mask: usize) -> f64 {
        let mut u = 0.0;
        for (r, h) in self.field.iter().enumerate() {
            if mask >> r & 1 == 1 {
                u += h;
            }
        }
        for &(r, s, w) in &self.pairs {
            if mask >> r & 1 == 1 && mask >> s & 1 == 1 {
                u += self.interaction * w;
            }
        }
        u
    }

    /// Weighted count of treated internal pairs plus treated boundary
    /// partners: the derivative of `U` in the interaction coefficient.
    pub fn interaction_statistic(&self, mask: usize) -> f64 {
        let mut s = 0.0;
        for (r, b) in self.boundary_treated.iter().enumerate() {
            if mask >> r & 1 == 1 {
                s += b;
            }
        }
        for &(r, t, w) in &self.pairs {
            if mask >> r & 1 == 1 && mask >> t & 1 == 1 {
                s += w;
            }
        }
        s
    }

    fn check_cap(&self, cap: usize) -> Result<()> {
        if self.size() > cap || self.size() >= usize::BITS as usize {
            return Err(Error::EnumerationCap {
                node: self.nodes.first().copied().unwrap_or(0),
                size: self.size(),
                cap,
            });
        }
        Ok(())
    }

    /// Probabilities of all `2^|N|` configurations, indexed by mask.
    pub fn distribution(&self, cap: usize) -> Result<Vec<f64>> {
        self.check_cap(cap)?;
        let energies: Vec<f64> = (0..1usize << self.size()).map(|m| self.energy(m)).collect();
        let max = energies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = energies.iter().map(|u| (u - max).exp()).collect();
        let total: f64 = weights.iter().sum();
        Ok(weights.into_iter().map(|w| w / total).collect())
    }

    /// `log Σ_a exp U(a)`.
    pub fn log_partition(&self, cap: usize) -> Result<f64> {
        self.check_cap(cap)?;
        let energies: Vec<f64> = (0..1usize << self.size()).map(|m| self.energy(m)).collect();
        let max = energies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(max + energies.iter().map(|u| (u - max).exp()).sum::<f64>().ln())
    }

    /// Exact probability of configuration `mask`.
    pub fn probability(&self, mask: usize, cap: usize) -> Result<f64> {
        Ok((self.energy(mask) - self.log_partition(cap)?).exp())
    }

    /// Gibbs estimate of the probability of `mask`, starting from `start`.
    pub fn sample_probability<R: Rng>(&self, mask: usize, start: usize, sweeps: usize, rng: &mut R) -> McEstimate {
        let m = self.size();
        let mut state: Vec<u8> = (0..m).map(|r| ((start >> r) & 1) as u8).collect();
        let target: Vec<u8> = (0..m).map(|r| ((mask >> r) & 1) as u8).collect();
        let burn = (sweeps / 10).max(1);
        let batches = 20usize;
        let per_batch = (sweeps / batches).max(1);
        let mut hits = 0usize;
        let mut batch_hits = 0usize;
        let mut batch_len = 0usize;
        let mut batch_means = Vec::with_capacity(batches + 1);
        for it in 0..burn + sweeps {
            for r in 0..m {
                let mut logit = self.field[r];
                for &(s, w) in &self.internal[r] {
                    logit += self.interaction * w * f64::from(state[s]);
                }
                state[r] = u8::from(rng.gen::<f64>() < expit(logit));
            }
            if it < burn {
                continue;
            }
            let hit = usize::from(state == target);
            hits += hit;
            batch_hits += hit;
            batch_len += 1;
            if batch_len == per_batch {
                batch_means.push(batch_hits as f64 / batch_len as f64);
                batch_hits = 0;
                batch_len = 0;
            }
        }
        let estimate = hits as f64 / sweeps.max(1) as f64;
        let binomial = (estimate * (1.0 - estimate) / sweeps.max(1) as f64).sqrt();
        let std_error = if batch_means.len() >= 2 {
            standard_error(&batch_means).max(binomial)
        } else {
            binomial
        };
        McEstimate {
            estimate,
            std_error,
            reliable: hits > 0 && batch_means.len() >= 2,
        }
    }
}

/// Monte Carlo probability estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub estimate: f64,
    /// Batch-means standard error, never below the binomial one.
    pub std_error: f64,
    /// False when the target was never visited or the run was too short to batch.
    pub reliable: bool,
}

/// `P(A_N = a_target | L, A_{-N})` by enumeration of the neighborhood.
pub fn joint_propensity_exact(
    energy: &EnergySpec,
    a_obs: &[u8],
    target: &LocalAssignment,
    cap: usize,
) -> Result<f64> {
    let local = energy.local(a_obs, target.nodes())?;
    local.probability(target.mask(), cap)
}

/// Gibbs approximation of [`joint_propensity_exact`], for neighborhoods too
/// large to enumerate.
pub fn joint_propensity_mc<R: Rng>(
    energy: &EnergySpec,
    a_obs: &[u8],
    target: &LocalAssignment,
    sweeps: usize,
    rng: &mut R,
) -> Result<McEstimate> {
    if sweeps == 0 {
        return Err(Error::InvalidParameter("sweeps must be positive".into()));
    }
    let local = energy.local(a_obs, target.nodes())?;
    let start = LocalAssignment::observed(target.nodes(), a_obs).mask();
    Ok(local.sample_probability(target.mask(), start, sweeps, rng))
}

/// Exposure value: a short integer vector.
pub type Exposure = Vec<i64>;

/// Low-dimensional summaries of a neighborhood treatment vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExposureMap {
    /// The whole local vector.
    Identity,
    /// `a_i` only.
    OwnTreatment,
    /// `(a_i, number of treated direct neighbors)`.
    OwnAndTreatedNeighbors,
}

impl ExposureMap {
    pub fn evaluate(&self, net: &Network, center: usize, local: &LocalAssignment) -> Result<Exposure> {
        let own = local.get(center).ok_or(Error::IncompleteAssignment(center))?;
        match self {
            Self::Identity => Ok(local.values().iter().map(|&v| i64::from(v)).collect()),
            Self::OwnTreatment => Ok(vec![i64::from(own)]),
            Self::OwnAndTreatedNeighbors => {
                let mut treated = 0i64;
                for &j in net.neighbors(center) {
                    treated += i64::from(local.get(j).ok_or(Error::IncompleteAssignment(j))?);
                }
                Ok(vec![i64::from(own), treated])
            }
        }
    }
}

/// Distribution of the exposure of `center` under the neighborhood
/// propensity; the enumeration is exact.
pub fn exposure_distribution(
    net: &Network,
    energy: &EnergySpec,
    a_obs: &[u8],
    center: usize,
    nodes: &[usize],
    map: ExposureMap,
    cap: usize,
) -> Result<BTreeMap<Exposure, f64>> {
    let local = energy.local(a_obs, nodes)?;
    let probs = local.distribution(cap)?;
    let mut out = BTreeMap::new();
    for (mask, p) in probs.into_iter().enumerate() {
        let t = map.evaluate(net, center, &LocalAssignment::from_mask(nodes, mask))?;
        *out.entry(t).or_insert(0.0) += p;
    }
    Ok(out)
}

/// `P(T_i = t | L, A_{-N})`: the joint propensity summed over configurations
/// whose exposure is `t`. Zero when no configuration is compatible.
#[allow(clippy::too_many_arguments)]
pub fn exposure_propensity(
    net: &Network,
    energy: &EnergySpec,
    a_obs: &[u8],
    center: usize,
    nodes: &[usize],
    map: ExposureMap,
    t: &[i64],
    cap: usize,
) -> Result<f64> {
    let local = energy.local(a_obs, nodes)?;
    let probs = local.distribution(cap)?;
    let mut total = 0.0;
    for (mask, p) in probs.into_iter().enumerate() {
        if map.evaluate(net, center, &LocalAssignment::from_mask(nodes, mask))? == t {
            total += p;
        }
    }
    Ok(total)
}
