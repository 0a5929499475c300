//! Augmented IPW unit scores, their allocation averages for the direct and
//! spillover estimands, exposure-mapping scores and the Auto-G baseline.
//!
//! For a neighborhood `N_i = N(i; K)` and a hypothetical local assignment `a`,
//!
//! ```text
//! Ŵ_i(a) = 1{A_N = a} / π̂(a) · (Y_i − β̂_a) + β̂_a
//! ```
//!
//! where `β̂_a` is the fitted outcome mean with neighbor outcomes and
//! covariates held at their observed values. Averaging over a product
//! allocation `Q` collapses the indicator to the observed configuration:
//! `E_Q Ŵ_i = Q(A_N)/π̂(A_N) · (Y_i − β̂_{A_N}) + Σ_a Q(a) β̂_a`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::automodel::{FittedModel, FittedNuisance, OutcomeRegression};
use crate::chainsim::{counterfactual_outcome_mean, Dataset, GibbsControls};
use crate::netgraph::Network;
use crate::propensity::{
    exposure_propensity, AllocationPolicy, EnergySpec, ExposureMap, LocalAssignment, DEFAULT_ENUMERATION_CAP,
};
use crate::{stream_rng, Error, Result};

/// Table of estimands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimandKind {
    /// Average outcome under Bernoulli(α) allocation.
    Gamma,
    /// Own treatment on minus off, neighbors Bernoulli(α).
    De,
    /// Untreated unit, neighbors Bernoulli(α) versus nobody treated.
    Ie,
    /// Untreated unit, neighbors Bernoulli(α) versus Bernoulli(α′).
    Ie2,
}

impl EstimandKind {
    pub const ALL: [EstimandKind; 4] = [Self::Gamma, Self::De, Self::Ie2, Self::Ie];

    pub fn label(self) -> &'static str {
        match self {
            Self::Gamma => "gamma",
            Self::De => "de",
            Self::Ie => "ie",
            Self::Ie2 => "ie2",
        }
    }
}

impl std::fmt::Display for EstimandKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for EstimandKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gamma" => Ok(Self::Gamma),
            "de" => Ok(Self::De),
            "ie" => Ok(Self::Ie),
            "ie2" => Ok(Self::Ie2),
            other => Err(Error::InvalidParameter(format!("unknown estimand {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvaluationMode {
    /// Sum the regression term over all local assignments.
    Exact,
    /// Average the unit score over sampled allocations.
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimandRequest {
    pub kind: EstimandKind,
    pub alpha: f64,
    /// Second allocation of `ie2`.
    pub alpha_prime: Option<f64>,
    pub mode: EvaluationMode,
    pub mc_draws: usize,
}

impl EstimandRequest {
    pub fn new(kind: EstimandKind, alpha: f64, alpha_prime: Option<f64>) -> Self {
        Self {
            kind,
            alpha,
            alpha_prime,
            mode: EvaluationMode::Exact,
            mc_draws: 200,
        }
    }

    pub fn gamma(alpha: f64) -> Self {
        Self::new(EstimandKind::Gamma, alpha, None)
    }

    pub fn de(alpha: f64) -> Self {
        Self::new(EstimandKind::De, alpha, None)
    }

    pub fn ie(alpha: f64) -> Self {
        Self::new(EstimandKind::Ie, alpha, None)
    }

    pub fn ie2(alpha: f64, alpha_prime: f64) -> Self {
        Self::new(EstimandKind::Ie2, alpha, Some(alpha_prime))
    }

    pub fn monte_carlo(mut self, draws: usize) -> Self {
        self.mode = EvaluationMode::MonteCarlo;
        self.mc_draws = draws;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let open = |a: f64| a > 0.0 && a < 1.0;
        if !open(self.alpha) {
            return Err(Error::InvalidParameter(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        match (self.kind, self.alpha_prime) {
            (EstimandKind::Ie2, None) => Err(Error::InvalidParameter("ie2 needs alpha_prime".into())),
            (EstimandKind::Ie2, Some(a)) if !open(a) => {
                Err(Error::InvalidParameter(format!("alpha_prime {a} outside (0, 1)")))
            }
            _ if self.mode == EvaluationMode::MonteCarlo && self.mc_draws == 0 => {
                Err(Error::InvalidParameter("mc_draws must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    /// Signed allocation arms whose scores are combined.
    pub fn arms(&self) -> Vec<(Arm, f64)> {
        let a = self.alpha;
        match self.kind {
            EstimandKind::Gamma => vec![(Arm::bernoulli(a), 1.0)],
            EstimandKind::De => vec![(Arm::pinned(a, 1), 1.0), (Arm::pinned(a, 0), -1.0)],
            EstimandKind::Ie => vec![(Arm::pinned(a, 0), 1.0), (Arm::pinned(0.0, 0), -1.0)],
            EstimandKind::Ie2 => vec![
                (Arm::pinned(a, 0), 1.0),
                (Arm::pinned(self.alpha_prime.unwrap_or(a), 0), -1.0),
            ],
        }
    }
}

/// A product allocation over a unit's neighborhood: Bernoulli(α) for the
/// other nodes, optionally pinning the unit itself.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Arm {
    pub alpha: f64,
    pub center: Option<u8>,
}

impl Arm {
    pub fn bernoulli(alpha: f64) -> Self {
        Self { alpha, center: None }
    }

    pub fn pinned(alpha: f64, value: u8) -> Self {
        Self {
            alpha,
            center: Some(value),
        }
    }

    /// Probability that a node takes `value`.
    pub fn weight(&self, is_center: bool, value: u8) -> f64 {
        let p = match (is_center, self.center) {
            (true, Some(v)) => f64::from(v),
            _ => self.alpha,
        };
        if value == 1 {
            p
        } else {
            1.0 - p
        }
    }

    /// The arm as a network-wide policy for unit `i`.
    pub fn policy(&self, i: usize) -> AllocationPolicy {
        match self.center {
            None => AllocationPolicy::bernoulli(self.alpha),
            Some(v) => AllocationPolicy::BernoulliWithPins {
                alpha: self.alpha,
                pins: [(i, v)].into(),
            },
        }
    }
}

/// Propensity evaluation settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropensityControls {
    /// Largest neighborhood enumerated exactly.
    pub cap: usize,
    /// Gibbs sweeps for neighborhoods above the cap.
    pub mc_sweeps: usize,
    /// Floor applied before inverting a propensity.
    pub clip: f64,
    pub seed: u64,
}

impl Default for PropensityControls {
    fn default() -> Self {
        Self {
            cap: DEFAULT_ENUMERATION_CAP,
            mc_sweeps: 20_000,
            clip: 1e-6,
            seed: 0,
        }
    }
}

/// Fitted joint propensity of a unit's observed neighborhood treatments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservedPropensity {
    /// Value after clipping.
    pub value: f64,
    pub raw: f64,
    pub clipped: bool,
    /// Monte Carlo standard error when the neighborhood exceeded the cap.
    pub mc_error: Option<f64>,
}

/// Everything the unit scores of one dataset share: neighborhoods, the
/// fitted outcome regression and treatment energy, and the observed
/// propensities.
#[derive(Debug, Clone)]
pub struct EstimationContext<'a> {
    pub net: &'a Network,
    pub data: &'a Dataset,
    pub k: usize,
    /// `N(i; K)`, sorted, containing `i`.
    pub neighborhoods: Vec<Vec<usize>>,
    pub regression: OutcomeRegression,
    pub energy: EnergySpec,
    pub observed: Vec<ObservedPropensity>,
    pub controls: PropensityControls,
    /// Convergence of the `(outcome, treatment)` fits behind the context.
    pub converged: (bool, bool),
}

impl<'a> EstimationContext<'a> {
    pub fn new(
        net: &'a Network,
        data: &'a Dataset,
        nuisance: &FittedNuisance,
        k: usize,
        controls: PropensityControls,
    ) -> Result<Self> {
        let mut ctx = Self::from_parts(
            net,
            data,
            nuisance.outcome.outcome_regression()?,
            nuisance.treatment.treatment_energy()?,
            k,
            controls,
        )?;
        ctx.converged = (nuisance.outcome.fit.converged, nuisance.treatment.fit.converged);
        Ok(ctx)
    }

    /// Context from an arbitrary outcome regression and treatment energy.
    pub fn from_parts(
        net: &'a Network,
        data: &'a Dataset,
        regression: OutcomeRegression,
        energy: EnergySpec,
        k: usize,
        controls: PropensityControls,
    ) -> Result<Self> {
        data.check_against(net)?;
        if k == 0 {
            return Err(Error::InvalidParameter("estimation radius K must be >= 1".into()));
        }
        let n = net.node_count();
        if regression.base.len() != n || energy.node_count() != n {
            return Err(Error::Mismatch("nuisance models do not match the network".into()));
        }
        let neighborhoods: Vec<Vec<usize>> = (0..n)
            .into_par_iter()
            .map(|i| net.neighborhood(i, k))
            .collect::<Result<_>>()?;
        for (i, hood) in regression.hoods.iter().enumerate() {
            if hood.iter().any(|j| neighborhoods[i].binary_search(j).is_err()) {
                return Err(Error::InvalidParameter(format!(
                    "outcome model radius exceeds the estimation radius K = {k}"
                )));
            }
        }
        let observed = (0..n)
            .into_par_iter()
            .map(|i| observed_propensity(&energy, &data.a, &neighborhoods[i], i, &controls))
            .collect::<Result<Vec<_>>>()?;
        let over_cap = neighborhoods.iter().filter(|h| h.len() > controls.cap).count();
        if over_cap > 0 {
            log::warn!("{over_cap} neighborhoods exceed the enumeration cap; using Gibbs propensities");
        }
        Ok(Self {
            net,
            data,
            k,
            neighborhoods,
            regression,
            energy,
            observed,
            controls,
            converged: (true, true),
        })
    }

    pub fn node_count(&self) -> usize {
        self.data.len()
    }

    fn observed_outcome_mean(&self, i: usize) -> f64 {
        let treated = self.regression.hood(i).iter().filter(|&&j| self.data.a[j] == 1).count();
        self.regression.mean(i, self.data.a[i], treated)
    }

    /// `Q(A_N^obs)` for an arm.
    fn observed_weight(&self, i: usize, arm: &Arm) -> f64 {
        self.neighborhoods[i]
            .iter()
            .map(|&j| arm.weight(j == i, self.data.a[j]))
            .product()
    }
}

fn observed_propensity(
    energy: &EnergySpec,
    a: &[u8],
    nodes: &[usize],
    i: usize,
    controls: &PropensityControls,
) -> Result<ObservedPropensity> {
    let local = energy.local(a, nodes)?;
    let mask = LocalAssignment::observed(nodes, a).mask();
    let (raw, mc_error) = if nodes.len() <= controls.cap {
        (local.distribution(controls.cap)?[mask], None)
    } else {
        let mut rng = stream_rng(controls.seed, i as u64);
        let est = local.sample_probability(mask, mask, controls.mc_sweeps, &mut rng);
        (est.estimate, Some(est.std_error))
    };
    Ok(ObservedPropensity {
        value: raw.max(controls.clip),
        raw,
        clipped: raw < controls.clip,
        mc_error,
    })
}

/// One unit's score, split into its weighted-residual and regression parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitScore {
    pub node: usize,
    pub w: f64,
    pub ipw_part: f64,
    pub reg_part: f64,
    /// The inverted propensity was clipped (or was zero for an exposure).
    pub clipped: bool,
}

impl UnitScore {
    fn new(node: usize, ipw_part: f64, reg_part: f64, clipped: bool) -> Self {
        Self {
            node,
            w: ipw_part + reg_part,
            ipw_part,
            reg_part,
            clipped,
        }
    }
}

#[inline]
fn ipw_term(indicator_weight: f64, residual: f64, propensity: f64) -> f64 {
    if indicator_weight == 0.0 {
        0.0
    } else {
        indicator_weight / propensity * residual
    }
}

/// `Ŵ_i` at one local assignment covering `N(i; K)`.
pub fn aaipw_score(ctx: &EstimationContext<'_>, i: usize, a_local: &LocalAssignment) -> Result<UnitScore> {
    let hood = &ctx.neighborhoods[i];
    if a_local.nodes() != hood.as_slice() {
        return Err(Error::Mismatch(format!("assignment does not cover the neighborhood of node {i}")));
    }
    let beta = crate::automodel::eval_outcome_mean(&ctx.regression, i, a_local)?;
    let observed = hood.iter().zip(a_local.values()).all(|(&j, &v)| ctx.data.a[j] == v);
    let prop = ctx.observed[i];
    let ipw = ipw_term(f64::from(u8::from(observed)), f64::from(ctx.data.y[i]) - beta, prop.value);
    Ok(UnitScore::new(i, ipw, beta, observed && prop.clipped))
}

/// `Binomial(m, p)` probabilities.
pub(crate) fn binomial_pmf(m: usize, p: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(m + 1);
    let mut coef = 1.0;
    for c in 0..=m {
        if c > 0 {
            coef *= (m - c + 1) as f64 / c as f64;
        }
        out.push(coef * p.powi(c as i32) * (1.0 - p).powi((m - c) as i32));
    }
    out
}

/// Allocation-averaged score of one arm, by exact summation.
pub fn arm_score(ctx: &EstimationContext<'_>, i: usize, arm: &Arm) -> UnitScore {
    let q_obs = ctx.observed_weight(i, arm);
    let prop = ctx.observed[i];
    let resid = f64::from(ctx.data.y[i]) - ctx.observed_outcome_mean(i);
    let ipw = ipw_term(q_obs, resid, prop.value);
    let pmf = binomial_pmf(ctx.regression.hood(i).len(), arm.alpha);
    let mut reg = 0.0;
    for own in 0..2u8 {
        let q_own = arm.weight(true, own);
        if q_own == 0.0 {
            continue;
        }
        let inner: f64 = pmf
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(c, &p)| p * ctx.regression.mean(i, own, c))
            .sum();
        reg += q_own * inner;
    }
    UnitScore::new(i, ipw, reg, q_obs > 0.0 && prop.clipped)
}

/// Allocation-averaged score of one arm over shared uniform draws: node `j`
/// is treated in draw `d` when `uniforms[d][j] < α`, the unit's own pin
/// overriding.
pub fn arm_score_mc(ctx: &EstimationContext<'_>, i: usize, arm: &Arm, uniforms: &[Vec<f64>]) -> UnitScore {
    if arm.alpha == 0.0 {
        // A point mass: nothing to sample.
        return arm_score(ctx, i, arm);
    }
    let hood = &ctx.neighborhoods[i];
    let y_hood = ctx.regression.hood(i);
    let prop = ctx.observed[i];
    let y = f64::from(ctx.data.y[i]);
    let (mut ipw, mut reg) = (0.0, 0.0);
    let mut hit_any = false;
    for u in uniforms {
        let draw = |j: usize| -> u8 {
            match arm.center {
                Some(v) if j == i => v,
                _ => u8::from(u[j] < arm.alpha),
            }
        };
        let own = draw(i);
        let treated = y_hood.iter().filter(|&&j| draw(j) == 1).count();
        let beta = ctx.regression.mean(i, own, treated);
        let hit = hood.iter().all(|&j| draw(j) == ctx.data.a[j]);
        hit_any |= hit;
        ipw += ipw_term(f64::from(u8::from(hit)), y - beta, prop.value);
        reg += beta;
    }
    let d = uniforms.len() as f64;
    UnitScore::new(i, ipw / d, reg / d, hit_any && prop.clipped)
}

/// Diagnostics attached to an estimate.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Units whose inverted propensity was clipped in some arm.
    pub clipped_weights: usize,
    /// Units whose observed propensity came from Gibbs sampling.
    pub mc_propensities: usize,
    pub max_propensity_mc_error: f64,
    /// Standard error of the point estimate from allocation sampling.
    pub allocation_mc_error: Option<f64>,
    pub outcome_converged: bool,
    pub treatment_converged: bool,
    pub if_corrected: bool,
}

/// Point estimate, per-unit scores and (once inference runs) variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub estimand: EstimandKind,
    pub alpha: f64,
    pub alpha_prime: Option<f64>,
    pub k: usize,
    pub n: usize,
    pub point: f64,
    /// HAC long-run variance of the unit scores.
    pub variance: Option<f64>,
    pub std_error: Option<f64>,
    pub ci: Option<[f64; 2]>,
    pub level: Option<f64>,
    pub diagnostics: Diagnostics,
    #[serde(skip)]
    pub scores: Vec<f64>,
}

/// Allocation-averaged AAIPW estimate; variance fields are left empty.
pub fn estimate<R: Rng>(ctx: &EstimationContext<'_>, request: &EstimandRequest, rng: &mut R) -> Result<EstimateReport> {
    request.validate()?;
    let n = ctx.node_count();
    if n == 0 {
        return Err(Error::Empty("no units to estimate over".into()));
    }
    let arms = request.arms();
    let uniforms: Vec<Vec<f64>> = match request.mode {
        EvaluationMode::Exact => Vec::new(),
        EvaluationMode::MonteCarlo => (0..request.mc_draws)
            .map(|_| (0..n).map(|_| rng.gen::<f64>()).collect())
            .collect(),
    };
    let per_unit: Vec<(f64, bool)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut w = 0.0;
            let mut clipped = false;
            for (arm, sign) in &arms {
                let s = match request.mode {
                    EvaluationMode::Exact => arm_score(ctx, i, arm),
                    EvaluationMode::MonteCarlo => arm_score_mc(ctx, i, arm, &uniforms),
                };
                w += sign * s.w;
                clipped |= s.clipped;
            }
            (w, clipped)
        })
        .collect();
    let scores: Vec<f64> = per_unit.iter().map(|p| p.0).collect();
    let point = scores.iter().sum::<f64>() / n as f64;
    let allocation_mc_error = match request.mode {
        EvaluationMode::Exact => None,
        EvaluationMode::MonteCarlo => Some(allocation_error(ctx, &arms, &uniforms)),
    };
    let mc: Vec<f64> = ctx.observed.iter().filter_map(|p| p.mc_error).collect();
    Ok(EstimateReport {
        estimand: request.kind,
        alpha: request.alpha,
        alpha_prime: request.alpha_prime,
        k: ctx.k,
        n,
        point,
        variance: None,
        std_error: None,
        ci: None,
        level: None,
        diagnostics: Diagnostics {
            clipped_weights: per_unit.iter().filter(|p| p.1).count(),
            mc_propensities: mc.len(),
            max_propensity_mc_error: mc.iter().copied().fold(0.0, f64::max),
            allocation_mc_error,
            outcome_converged: ctx.converged.0,
            treatment_converged: ctx.converged.1,
            if_corrected: false,
        },
        scores,
    })
}

/// Spread of the node-averaged score across individual allocation draws.
fn allocation_error(ctx: &EstimationContext<'_>, arms: &[(Arm, f64)], uniforms: &[Vec<f64>]) -> f64 {
    let n = ctx.node_count() as f64;
    let per_draw: Vec<f64> = uniforms
        .par_iter()
        .map(|u| {
            let one = std::slice::from_ref(u);
            (0..ctx.node_count())
                .map(|i| arms.iter().map(|(arm, sign)| sign * arm_score_mc(ctx, i, arm, one).w).sum::<f64>())
                .sum::<f64>()
                / n
        })
        .collect();
    crate::chainsim::standard_error(&per_draw)
}

/// Exposure-marginalized score: the indicator and propensity refer to the
/// exposure `t = T(a_ref)` and the regression part is evaluated at `a_ref`.
pub fn exposure_aaipw_score(
    ctx: &EstimationContext<'_>,
    i: usize,
    map: ExposureMap,
    t: &[i64],
    a_ref: &LocalAssignment,
) -> Result<UnitScore> {
    let hood = &ctx.neighborhoods[i];
    if a_ref.nodes() != hood.as_slice() {
        return Err(Error::Mismatch(format!("reference assignment does not cover node {i}'s neighborhood")));
    }
    if map.evaluate(ctx.net, i, a_ref)? != t {
        return Err(Error::InvalidParameter("reference assignment does not attain the exposure".into()));
    }
    let observed = LocalAssignment::observed(hood, &ctx.data.a);
    let hit = map.evaluate(ctx.net, i, &observed)? == t;
    let raw = exposure_propensity(ctx.net, &ctx.energy, &ctx.data.a, i, hood, map, t, ctx.controls.cap)?;
    let beta = crate::automodel::eval_outcome_mean(&ctx.regression, i, a_ref)?;
    let clipped = raw < ctx.controls.clip;
    if clipped {
        log::warn!("exposure propensity of node {i} is {raw:.3e}; clipped");
    }
    let ipw = ipw_term(f64::from(u8::from(hit)), f64::from(ctx.data.y[i]) - beta, raw.max(ctx.controls.clip));
    Ok(UnitScore::new(i, ipw, beta, clipped))
}

/// Analytic derivatives of one arm's allocation-averaged score in the
/// outcome and treatment coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreGradient {
    pub outcome: Vec<f64>,
    pub treatment: Vec<f64>,
}

/// `∂ E_Q Ŵ_i / ∂θ` and `∂ E_Q Ŵ_i / ∂η`. The propensity derivative uses
/// `∂ log π(a) / ∂η = s(a) − E_π s` with `s` the energy's sufficient
/// statistics over the neighborhood; it requires exact enumeration.
pub fn arm_score_gradient(
    ctx: &EstimationContext<'_>,
    nuisance: &FittedNuisance,
    i: usize,
    arm: &Arm,
) -> Result<ScoreGradient> {
    let outcome = &nuisance.outcome;
    let treatment = &nuisance.treatment;
    let y_hood = ctx.regression.hood(i);
    let a = &ctx.data.a;
    let q_obs = ctx.observed_weight(i, arm);
    let prop = ctx.observed[i];
    let obs_treated = y_hood.iter().filter(|&&j| a[j] == 1).count();
    let beta_obs = ctx.regression.mean(i, a[i], obs_treated);
    let resid = f64::from(ctx.data.y[i]) - beta_obs;

    let mut d_theta = vec![0.0; outcome.spec.len()];
    let add_row = |acc: &mut Vec<f64>, model: &FittedModel, own: u8, c: usize, scale: f64| {
        for (acc, x) in acc.iter_mut().zip(model.row_at(i, f64::from(own), c as f64)) {
            *acc += scale * x;
        }
    };
    if q_obs > 0.0 && !prop.clipped {
        let w = q_obs / prop.value;
        add_row(&mut d_theta, outcome, a[i], obs_treated, -w * beta_obs * (1.0 - beta_obs));
    }
    let pmf = binomial_pmf(y_hood.len(), arm.alpha);
    for own in 0..2u8 {
        let q_own = arm.weight(true, own);
        if q_own == 0.0 {
            continue;
        }
        for (c, &p) in pmf.iter().enumerate() {
            if p > 0.0 {
                let b = ctx.regression.mean(i, own, c);
                add_row(&mut d_theta, outcome, own, c, q_own * p * b * (1.0 - b));
            }
        }
    }

    let p_eta = treatment.spec.len();
    let mut d_eta = vec![0.0; p_eta];
    if q_obs > 0.0 && !prop.clipped {
        let hood = &ctx.neighborhoods[i];
        let local = ctx.energy.local(a, hood)?;
        let dist = local.distribution(ctx.controls.cap)?;
        let inter = treatment.spec.position(crate::automodel::Feature::NeighborTreatmentSum);
        let static_rows: Vec<Vec<f64>> = hood.iter().map(|&k| treatment.static_row(k)).collect();
        let stats = |mask: usize| -> Vec<f64> {
            let mut s = vec![0.0; p_eta];
            for (r, row) in static_rows.iter().enumerate() {
                if mask >> r & 1 == 1 {
                    for (s, x) in s.iter_mut().zip(row) {
                        *s += x;
                    }
                }
            }
            if let Some(f) = inter {
                s[f] = local.interaction_statistic(mask);
            }
            s
        };
        let mut expected = vec![0.0; p_eta];
        for (mask, &p) in dist.iter().enumerate() {
            if p > 0.0 {
                for (e, v) in expected.iter_mut().zip(stats(mask)) {
                    *e += p * v;
                }
            }
        }
        let obs_mask = LocalAssignment::observed(hood, a).mask();
        let w = q_obs / prop.value;
        for ((d, s), e) in d_eta.iter_mut().zip(stats(obs_mask)).zip(expected) {
            *d = -w * resid * (s - e);
        }
    }
    Ok(ScoreGradient {
        outcome: d_theta,
        treatment: d_eta,
    })
}

/// Auto-G point estimate with its simulation error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AutoGEstimate {
    pub point: f64,
    pub mc_error: f64,
}

/// Outcome-model-only baseline: simulate counterfactual outcome networks
/// from the fitted outcome model at the observed covariates and average.
pub fn auto_g_estimate<R: Rng>(
    outcome: &FittedModel,
    request: &EstimandRequest,
    controls: GibbsControls,
    rng: &mut R,
) -> Result<AutoGEstimate> {
    request.validate()?;
    let kernel = outcome.outcome_kernel()?;
    let n = kernel.offset.len();
    if n == 0 {
        return Err(Error::Empty("no units to estimate over".into()));
    }
    let mean = |v: &[f64]| crate::chainsim::finite_mean(v);
    let primary = counterfactual_outcome_mean(&kernel, &AllocationPolicy::bernoulli(request.alpha), controls, rng)?;
    let (point, err2) = match request.kind {
        EstimandKind::Gamma => (mean(&primary.mean), primary.mc_error.powi(2)),
        EstimandKind::De => (
            mean(&primary.own_treated) - mean(&primary.own_control),
            2.0 * primary.mc_error.powi(2),
        ),
        EstimandKind::Ie => {
            let zero = counterfactual_outcome_mean(&kernel, &AllocationPolicy::all_control(n), controls, rng)?;
            (
                mean(&primary.own_control) - mean(&zero.mean),
                primary.mc_error.powi(2) + zero.mc_error.powi(2),
            )
        }
        EstimandKind::Ie2 => {
            let alt = request.alpha_prime.expect("validated");
            let other = counterfactual_outcome_mean(&kernel, &AllocationPolicy::bernoulli(alt), controls, rng)?;
            (
                mean(&primary.own_control) - mean(&other.own_control),
                primary.mc_error.powi(2) + other.mc_error.powi(2),
            )
        }
    };
    Ok(AutoGEstimate {
        point,
        mc_error: err2.sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::automodel::ModelSpec;
    use crate::chainsim::{simulate_stream, Covariates, SimParams};
    use crate::netgraph::generate_ba_capped;

    fn constant_regression(net: &Network, c: f64) -> OutcomeRegression {
        OutcomeRegression {
            base: vec![crate::logit(c); net.node_count()],
            own_treatment: 0.0,
            neighbor_treatment: 0.0,
            hoods: net.punctured_neighborhoods(1),
        }
    }

    fn small_case() -> (Network, Dataset) {
        let net = Network::new(4, [(0, 1), (1, 2), (2, 3)]).unwrap();
        let data = Dataset::new(
            vec![1, 0, 1, 1],
            vec![1, 0, 0, 1],
            Covariates::from_binary(&[[1, 0, 0], [0, 1, 0], [1, 1, 1], [0, 0, 1]]),
        )
        .unwrap();
        (net, data)
    }

    fn energy(net: &Network) -> EnergySpec {
        EnergySpec::new(vec![0.2, -0.4, 0.1, 0.3], 0.5, net.punctured_neighborhoods(1)).unwrap()
    }

    #[test]
    fn unobserved_assignment_gives_regression_only() {
        let (net, data) = small_case();
        let reg = OutcomeRegression {
            base: vec![0.1, -0.2, 0.3, 0.0],
            own_treatment: -1.0,
            neighbor_treatment: 0.5,
            hoods: net.punctured_neighborhoods(1),
        };
        let ctx = EstimationContext::from_parts(&net, &data, reg, energy(&net), 1, PropensityControls::default())
            .unwrap();
        let a = LocalAssignment::new(vec![0, 1, 2], vec![1, 1, 1]).unwrap();
        let s = aaipw_score(&ctx, 1, &a).unwrap();
        assert_eq!(s.ipw_part, 0.0);
        assert_eq!(s.w, crate::expit(-0.2 - 1.0 + 1.0));
    }

    #[test]
    fn constant_regression_without_matches_gives_constant() {
        let (net, _) = small_case();
        // Nobody treated anywhere: the gamma arm still weights the observed
        // configuration, so use an arm that can never produce it.
        let data = Dataset::new(vec![1, 0, 1, 1], vec![1, 1, 1, 1], Covariates::new(0, vec![]).unwrap()).unwrap();
        let ctx = EstimationContext::from_parts(
            &net,
            &data,
            constant_regression(&net, 0.37),
            energy(&net),
            1,
            PropensityControls::default(),
        )
        .unwrap();
        for i in 0..4 {
            let s = arm_score(&ctx, i, &Arm::pinned(0.0, 0));
            assert!((s.w - 0.37).abs() < 1e-15);
        }
    }

    #[test]
    fn ie2_with_equal_allocations_is_zero() {
        let (net, data) = small_case();
        let reg = OutcomeRegression {
            base: vec![0.1, -0.2, 0.3, 0.0],
            own_treatment: -1.0,
            neighbor_treatment: 0.5,
            hoods: net.punctured_neighborhoods(1),
        };
        let ctx = EstimationContext::from_parts(&net, &data, reg, energy(&net), 1, PropensityControls::default())
            .unwrap();
        let mut rng = stream_rng(0, 0);
        let r = estimate(&ctx, &EstimandRequest::ie2(0.4, 0.4), &mut rng).unwrap();
        assert_eq!(r.point, 0.0);
    }

    #[test]
    fn binomial_pmf_sums_to_one() {
        for (m, p) in [(0, 0.3), (5, 0.7), (3, 0.0), (4, 1.0)] {
            let s: f64 = binomial_pmf(m, p).iter().sum();
            assert!((s - 1.0).abs() < 1e-14);
        }
        assert_eq!(binomial_pmf(2, 0.5), vec![0.25, 0.5, 0.25]);
    }

    #[test]
    fn exact_regression_term_matches_enumeration() {
        let (net, data) = small_case();
        let reg = OutcomeRegression {
            base: vec![0.1, -0.2, 0.3, 0.0],
            own_treatment: -1.0,
            neighbor_treatment: 0.5,
            hoods: net.punctured_neighborhoods(1),
        };
        let ctx = EstimationContext::from_parts(&net, &data, reg.clone(), energy(&net), 1, PropensityControls::default())
            .unwrap();
        let arm = Arm::pinned(0.7, 1);
        let i = 2;
        let hood = &ctx.neighborhoods[i];
        let mut by_hand = 0.0;
        for mask in 0..1usize << hood.len() {
            let local = LocalAssignment::from_mask(hood, mask);
            let q = crate::propensity::allocation_weight(&local, &arm.policy(i));
            by_hand += q * aaipw_score(&ctx, i, &local).unwrap().w;
        }
        assert!((arm_score(&ctx, i, &arm).w - by_hand).abs() < 1e-14);
    }

    #[test]
    fn exact_and_mc_modes_agree() {
        let net = generate_ba_capped(10, 2, 5, 3).unwrap();
        let params = SimParams::reference(2);
        let data = simulate_stream(&net, &params, 30, 29, 1).unwrap().next().unwrap();
        let nuisance =
            FittedNuisance::fit(&net, &data, ModelSpec::outcome(3, 1), ModelSpec::treatment(3, 1), None).unwrap();
        let ctx = EstimationContext::new(&net, &data, &nuisance, 1, PropensityControls::default()).unwrap();
        let mut rng = stream_rng(2, 0);
        for req in [EstimandRequest::gamma(0.7), EstimandRequest::de(0.7), EstimandRequest::ie(0.7)] {
            let exact = estimate(&ctx, &req, &mut rng).unwrap();
            let mc = estimate(&ctx, &req.monte_carlo(4000), &mut rng).unwrap();
            let se = mc.diagnostics.allocation_mc_error.unwrap();
            assert!((exact.point - mc.point).abs() < 3.0 * se + 1e-9, "{req:?}: {} vs {} ± {se}", exact.point, mc.point);
        }
    }

    #[test]
    fn request_validation() {
        assert!(EstimandRequest::gamma(1.0).validate().is_err());
        assert!(EstimandRequest::new(EstimandKind::Ie2, 0.5, None).validate().is_err());
        assert!(EstimandRequest::gamma(0.5).monte_carlo(0).validate().is_err());
        assert!(EstimandRequest::ie2(0.7, 0.3).validate().is_ok());
        assert_eq!("IE2".parse::<EstimandKind>().unwrap(), EstimandKind::Ie2);
    }

    #[test]
    fn auto_g_null_model() {
        let net = generate_ba_capped(30, 1, 3, 1).unwrap();
        let data = Dataset::new(vec![0; 30], vec![1; 30], Covariates::new(0, vec![]).unwrap()).unwrap();
        let model = FittedModel::with_coefficients(&net, &data, ModelSpec::outcome(0, 1), None, vec![0.0; 4]).unwrap();
        let mut rng = stream_rng(1, 0);
        let ctl = GibbsControls {
            burn_in: 2,
            sweeps: 50,
            replications: 4,
        };
        let g = auto_g_estimate(&model, &EstimandRequest::gamma(0.7), ctl, &mut rng).unwrap();
        assert!((g.point - 0.5).abs() < 1e-12);
        let de = auto_g_estimate(&model, &EstimandRequest::de(0.7), ctl, &mut rng).unwrap();
        assert!(de.point.abs() < 1e-12, "{}", de.point);
    }
}
