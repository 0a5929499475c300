//! Monte Carlo driver for the simulation study: one network per cell, a
//! long Gibbs chain whose post-burn-in snapshots serve as replicates, nuisance
//! fits under the chosen misspecification, AAIPW with HAC intervals, the Auto-G
//! baseline, and bias/RMSE/coverage against oracle truths.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::automodel::{draw_noise, FittedNuisance, ModelSpec};
use crate::chainsim::{
    counterfactual_outcome_mean, finite_mean, simulate_stream, standard_error, ChainGraphSampler, Dataset,
    GibbsControls, OutcomeKernel, SimParams, SIM_COVARIATES,
};
use crate::estimator::{
    auto_g_estimate, estimate, EstimandKind, EstimandRequest, EstimationContext, EvaluationMode, PropensityControls,
};
use crate::inference::{attach_hac, if_corrected_scores, KernelSpec, ShellIndex};
use crate::netgraph::{generate_ba_capped, Network};
use crate::propensity::AllocationPolicy;
use crate::{stream_rng, Error, Result};

/// Which nuisance model is replaced by noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    BothCorrect,
    MisspecifiedOutcome,
    MisspecifiedPropensity,
}

impl Scenario {
    pub fn label(self) -> &'static str {
        match self {
            Self::BothCorrect => "both-correct",
            Self::MisspecifiedOutcome => "misspecified-outcome",
            Self::MisspecifiedPropensity => "misspecified-propensity",
        }
    }

    /// Outcome and treatment specs for simulated data; misspecified models
    /// take their noise from disjoint column ranges.
    pub fn specs(self, k: usize) -> (ModelSpec, ModelSpec) {
        let outcome = ModelSpec::outcome(SIM_COVARIATES, k);
        let treatment = ModelSpec::treatment(SIM_COVARIATES, k);
        match self {
            Self::BothCorrect => (outcome, treatment),
            Self::MisspecifiedOutcome => (outcome.with_noise(0), treatment),
            Self::MisspecifiedPropensity => (outcome, treatment.with_noise(0)),
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "both-correct" => Ok(Self::BothCorrect),
            "misspecified-outcome" => Ok(Self::MisspecifiedOutcome),
            "misspecified-propensity" => Ok(Self::MisspecifiedPropensity),
            other => Err(Error::InvalidParameter(format!("unknown scenario {other}"))),
        }
    }
}

/// Oracle settings: covariate draws from their own chain, and an outcome
/// simulation per draw and allocation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthControls {
    pub covariate_draws: usize,
    pub burn_in: usize,
    pub stride: usize,
    pub gibbs: GibbsControls,
    pub seed: u64,
}

impl Default for TruthControls {
    fn default() -> Self {
        Self {
            covariate_draws: 48,
            burn_in: 500,
            stride: 10,
            gibbs: GibbsControls {
                burn_in: 30,
                sweeps: 60,
                replications: 8,
            },
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub n: usize,
    pub m: usize,
    pub max_degree: usize,
    pub scenario: Scenario,
    pub alpha: f64,
    pub alpha_prime: f64,
    pub estimands: Vec<EstimandKind>,
    pub n_iter: usize,
    pub burn_in: usize,
    /// Keep every `thin`-th post-burn-in snapshot.
    pub thin: usize,
    pub k: usize,
    /// HAC bandwidth; `2(K+1)+1` when absent.
    pub bandwidth: Option<f64>,
    pub level: f64,
    pub mode: EvaluationMode,
    pub mc_draws: usize,
    pub seed: u64,
    pub network_seed: u64,
    /// Draw a fresh network (and chain) for every replicate.
    pub redraw_network: bool,
    pub truth: TruthControls,
    /// Auto-G simulation settings; `None` skips the baseline.
    pub auto_g: Option<GibbsControls>,
    pub if_correction: bool,
    pub propensity: PropensityControls,
    /// Generative parameters; the reference set for `m` when absent.
    pub params: Option<SimParams>,
}

impl ScenarioConfig {
    /// 800 nodes, 500 replicates after 2000 burn-in sweeps.
    pub fn desk(m: usize, max_degree: usize, scenario: Scenario) -> Self {
        Self {
            n: 800,
            m,
            max_degree,
            scenario,
            alpha: 0.7,
            alpha_prime: 0.3,
            estimands: EstimandKind::ALL.to_vec(),
            n_iter: 2500,
            burn_in: 2000,
            thin: 1,
            k: 1,
            bandwidth: None,
            level: 0.95,
            mode: EvaluationMode::Exact,
            mc_draws: 200,
            seed: 2024,
            network_seed: 1,
            redraw_network: false,
            truth: TruthControls::default(),
            auto_g: Some(GibbsControls::default()),
            if_correction: false,
            propensity: PropensityControls::default(),
            params: None,
        }
    }

    pub fn with_replicates(mut self, replicates: usize) -> Self {
        self.n_iter = self.burn_in + replicates * self.thin.max(1);
        self
    }

    pub fn replicates(&self) -> usize {
        let thin = self.thin.max(1);
        self.n_iter.saturating_sub(self.burn_in).div_ceil(thin)
    }

    pub fn sim_params(&self) -> SimParams {
        let mut p = self.params.clone().unwrap_or_else(|| SimParams::reference(self.m));
        p.k = self.k;
        p
    }

    pub fn kernel(&self) -> KernelSpec {
        self.bandwidth.map_or_else(|| KernelSpec::default_for(self.k), KernelSpec::bartlett)
    }

    pub fn request(&self, kind: EstimandKind) -> EstimandRequest {
        let alt = (kind == EstimandKind::Ie2).then_some(self.alpha_prime);
        let mut r = EstimandRequest::new(kind, self.alpha, alt);
        r.mode = self.mode;
        r.mc_draws = self.mc_draws;
        r
    }

    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.n_iter {
            return Err(Error::InvalidParameter(format!(
                "burn_in {} must be below n_iter {}",
                self.burn_in, self.n_iter
            )));
        }
        if self.estimands.is_empty() {
            return Err(Error::InvalidParameter("no estimands requested".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::InvalidParameter(format!("level {} outside (0, 1)", self.level)));
        }
        for &kind in &self.estimands {
            self.request(kind).validate()?;
        }
        self.sim_params().validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthValue {
    pub estimand: EstimandKind,
    pub value: f64,
    /// Standard error across covariate draws.
    pub mc_error: f64,
}

/// Per-draw oracle values, in `EstimandKind` order of `estimands`.
fn truth_for_covariates(
    kernel: &OutcomeKernel<'_>,
    alpha: f64,
    alpha_prime: f64,
    estimands: &[EstimandKind],
    gibbs: GibbsControls,
    seed: u64,
    stream: u64,
) -> Result<Vec<f64>> {
    let n = kernel.offset.len();
    let mut rng = stream_rng(seed, stream);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n as f64;
    let main = counterfactual_outcome_mean(kernel, &AllocationPolicy::bernoulli(alpha), gibbs, &mut rng)?;
    let need = |k: EstimandKind| estimands.contains(&k);
    let zero = if need(EstimandKind::Ie) {
        Some(counterfactual_outcome_mean(kernel, &AllocationPolicy::all_control(n), gibbs, &mut rng)?)
    } else {
        None
    };
    let other = if need(EstimandKind::Ie2) {
        Some(counterfactual_outcome_mean(kernel, &AllocationPolicy::bernoulli(alpha_prime), gibbs, &mut rng)?)
    } else {
        None
    };
    Ok(estimands
        .iter()
        .map(|kind| match kind {
            EstimandKind::Gamma => mean(&main.mean),
            EstimandKind::De => finite_mean(&main.own_treated) - finite_mean(&main.own_control),
            EstimandKind::Ie => finite_mean(&main.own_control) - mean(&zero.as_ref().expect("requested").mean),
            EstimandKind::Ie2 => {
                finite_mean(&main.own_control) - finite_mean(&other.as_ref().expect("requested").own_control)
            }
        })
        .collect())
}

/// Oracle values of the estimands: counterfactual outcome simulations under
/// the true outcome law, averaged over covariate draws from their own chain.
pub fn compute_truth(
    net: &Network,
    params: &SimParams,
    alpha: f64,
    alpha_prime: f64,
    estimands: &[EstimandKind],
    controls: &TruthControls,
) -> Result<Vec<TruthValue>> {
    if controls.covariate_draws == 0 {
        return Err(Error::InvalidParameter("truth needs at least one covariate draw".into()));
    }
    let sampler = ChainGraphSampler::new(net, params)?;
    let draws = sampler.covariate_draws(controls.covariate_draws, controls.burn_in, controls.stride, controls.seed);
    let per_draw: Vec<Vec<f64>> = draws
        .par_iter()
        .enumerate()
        .map(|(d, l)| {
            let kernel = OutcomeKernel::from_sim(params, l, sampler.hoods());
            truth_for_covariates(&kernel, alpha, alpha_prime, estimands, controls.gibbs, controls.seed, 100 + d as u64)
        })
        .collect::<Result<_>>()?;
    Ok(estimands
        .iter()
        .enumerate()
        .map(|(e, &estimand)| {
            let values: Vec<f64> = per_draw.iter().map(|v| v[e]).collect();
            TruthValue {
                estimand,
                value: values.iter().sum::<f64>() / values.len() as f64,
                mc_error: standard_error(&values),
            }
        })
        .collect())
}

/// Memoized [`compute_truth`], keyed by network, parameters and settings.
#[derive(Debug, Default)]
pub struct TruthCache {
    entries: Mutex<HashMap<u64, Vec<TruthValue>>>,
}

impl TruthCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("truth cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get_or_compute(
        &self,
        net: &Network,
        params: &SimParams,
        alpha: f64,
        alpha_prime: f64,
        estimands: &[EstimandKind],
        controls: &TruthControls,
    ) -> Result<Vec<TruthValue>> {
        let mut h = DefaultHasher::new();
        net.edges().hash(&mut h);
        net.node_count().hash(&mut h);
        format!("{params:?}|{alpha}|{alpha_prime}|{estimands:?}|{controls:?}").hash(&mut h);
        let key = h.finish();
        if let Some(hit) = self.entries.lock().expect("truth cache poisoned").get(&key) {
            return Ok(hit.clone());
        }
        let value = compute_truth(net, params, alpha, alpha_prime, estimands, controls)?;
        self.entries
            .lock()
            .expect("truth cache poisoned")
            .insert(key, value.clone());
        Ok(value)
    }
}

/// One estimand on one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub estimand: EstimandKind,
    pub truth: f64,
    pub aaipw: f64,
    pub std_error: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub covered: bool,
    pub auto_g: Option<f64>,
    pub clipped_weights: usize,
    pub nuisance_converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub mean: f64,
    pub bias: f64,
    pub rmse: f64,
}

impl MethodSummary {
    fn from_errors(estimates: &[f64], truths: &[f64]) -> Option<Self> {
        if estimates.is_empty() {
            return None;
        }
        let k = estimates.len() as f64;
        let mean = estimates.iter().sum::<f64>() / k;
        let bias = estimates.iter().zip(truths).map(|(e, t)| e - t).sum::<f64>() / k;
        let mse = estimates.iter().zip(truths).map(|(e, t)| (e - t).powi(2)).sum::<f64>() / k;
        Some(Self {
            mean,
            bias,
            rmse: mse.sqrt(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimandSummary {
    pub estimand: EstimandKind,
    pub truth: f64,
    pub truth_mc_error: f64,
    pub replicates: usize,
    pub aaipw: Option<MethodSummary>,
    pub coverage: Option<f64>,
    pub mean_std_error: Option<f64>,
    pub auto_g: Option<MethodSummary>,
    pub clipped_weights_total: usize,
    pub clipped_replicates: usize,
}

/// Flat row of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scenario: Scenario,
    pub m: usize,
    pub max_degree: usize,
    pub estimand: EstimandKind,
    pub method: String,
    pub truth: f64,
    pub truth_mc_error: f64,
    pub mean: f64,
    pub bias: f64,
    pub rmse: f64,
    pub coverage: Option<f64>,
    pub replicates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MCResult {
    pub config: ScenarioConfig,
    pub summaries: Vec<EstimandSummary>,
    pub records: Vec<ReplicateRecord>,
    /// Replicates dropped after an estimation error.
    pub failures: usize,
}

impl MCResult {
    pub fn summary(&self, kind: EstimandKind) -> Option<&EstimandSummary> {
        self.summaries.iter().find(|s| s.estimand == kind)
    }

    pub fn table_rows(&self) -> Vec<SummaryRow> {
        let mut rows = Vec::new();
        for s in &self.summaries {
            let methods = [("aaipw", &s.aaipw, s.coverage), ("auto_g", &s.auto_g, None)];
            for (name, summary, coverage) in methods {
                if let Some(m) = summary {
                    rows.push(SummaryRow {
                        scenario: self.config.scenario,
                        m: self.config.m,
                        max_degree: self.config.max_degree,
                        estimand: s.estimand,
                        method: name.into(),
                        truth: s.truth,
                        truth_mc_error: s.truth_mc_error,
                        mean: m.mean,
                        bias: m.bias,
                        rmse: m.rmse,
                        coverage,
                        replicates: s.replicates,
                    });
                }
            }
        }
        rows
    }
}

/// Network-level inputs shared by the replicates drawn on it.
struct Cell {
    net: Network,
    shells: ShellIndex,
    truth: Vec<TruthValue>,
}

impl Cell {
    fn build(config: &ScenarioConfig, network_seed: u64, cache: &TruthCache) -> Result<Self> {
        let net = generate_ba_capped(config.n, config.m, config.max_degree, network_seed)?;
        let params = config.sim_params();
        let truth =
            cache.get_or_compute(&net, &params, config.alpha, config.alpha_prime, &config.estimands, &config.truth)?;
        let shells = ShellIndex::new(&net, config.kernel().max_lag());
        Ok(Self { net, shells, truth })
    }

    fn truth(&self, kind: EstimandKind) -> f64 {
        self.truth.iter().find(|t| t.estimand == kind).map_or(f64::NAN, |t| t.value)
    }
}

fn analyze_replicate(config: &ScenarioConfig, cell: &Cell, replicate: usize, data: &Dataset) -> Result<Vec<ReplicateRecord>> {
    let mut rng = stream_rng(config.seed ^ 0x9e37_79b9_7f4a_7c15, replicate as u64);
    let (outcome_spec, treatment_spec) = config.scenario.specs(config.k);
    let noise_width = outcome_spec.noise_width().max(treatment_spec.noise_width());
    let noise = (noise_width > 0).then(|| draw_noise(data.len(), noise_width, &mut rng));
    let nuisance = FittedNuisance::fit(&cell.net, data, outcome_spec, treatment_spec, noise.as_ref())?;
    let mut controls = config.propensity;
    controls.seed = config.seed.wrapping_add(replicate as u64);
    let ctx = EstimationContext::new(&cell.net, data, &nuisance, config.k, controls)?;
    let kernel = config.kernel();
    let mut out = Vec::with_capacity(config.estimands.len());
    for &kind in &config.estimands {
        let request = config.request(kind);
        let mut report = estimate(&ctx, &request, &mut rng)?;
        if config.if_correction {
            match if_corrected_scores(&ctx, &nuisance, &report.scores, &request) {
                Ok((corrected, _)) => report.scores = corrected,
                Err(e) => log::warn!("replicate {replicate}: correction skipped ({e})"),
            }
        }
        attach_hac(&mut report, &cell.shells, &kernel, config.level)?;
        let [lo, hi] = report.ci.expect("interval attached");
        let truth = cell.truth(kind);
        let auto_g = match config.auto_g {
            Some(g) => Some(auto_g_estimate(&nuisance.outcome, &request, g, &mut rng)?.point),
            None => None,
        };
        out.push(ReplicateRecord {
            replicate,
            estimand: kind,
            truth,
            aaipw: report.point,
            std_error: report.std_error.expect("interval attached"),
            ci_lo: lo,
            ci_hi: hi,
            covered: lo <= truth && truth <= hi,
            auto_g,
            clipped_weights: report.diagnostics.clipped_weights,
            nuisance_converged: nuisance.converged(),
        });
    }
    Ok(out)
}

const CHUNK: usize = 64;

/// Runs one cell of the simulation study. Deterministic given the seeds,
/// whatever the thread count.
pub fn run_experiment(config: &ScenarioConfig, cache: &TruthCache) -> Result<MCResult> {
    config.validate()?;
    let params = config.sim_params();
    let mut records = Vec::new();
    let mut failures = 0;
    let mut absorb = |rep: usize, res: Result<Vec<ReplicateRecord>>| match res {
        Ok(r) => records.extend(r),
        Err(e) => {
            log::warn!("replicate {rep} failed: {e}");
            failures += 1;
        }
    };
    if config.redraw_network {
        let results: Vec<(usize, Result<Vec<ReplicateRecord>>)> = (0..config.replicates())
            .into_par_iter()
            .map(|rep| {
                let res = (|| {
                    let cell = Cell::build(config, config.network_seed.wrapping_add(rep as u64), cache)?;
                    let data = simulate_stream(&cell.net, &params, config.burn_in + 1, config.burn_in, config.seed + rep as u64)?
                        .next()
                        .ok_or_else(|| Error::Empty("empty chain".into()))?;
                    analyze_replicate(config, &cell, rep, &data)
                })();
                (rep, res)
            })
            .collect();
        for (rep, res) in results {
            absorb(rep, res);
        }
    } else {
        let cell = Cell::build(config, config.network_seed, cache)?;
        let mut stream = simulate_stream(&cell.net, &params, config.n_iter, config.burn_in, config.seed)?
            .thin(config.thin)
            .enumerate()
            .peekable();
        while stream.peek().is_some() {
            let chunk: Vec<(usize, Dataset)> = stream.by_ref().take(CHUNK).collect();
            let results: Vec<(usize, Result<Vec<ReplicateRecord>>)> = chunk
                .par_iter()
                .map(|(rep, data)| (*rep, analyze_replicate(config, &cell, *rep, data)))
                .collect();
            for (rep, res) in results {
                absorb(rep, res);
            }
        }
    }
    let summaries = summarize(config, &records);
    Ok(MCResult {
        config: config.clone(),
        summaries,
        records,
        failures,
    })
}

fn summarize(config: &ScenarioConfig, records: &[ReplicateRecord]) -> Vec<EstimandSummary> {
    config
        .estimands
        .iter()
        .map(|&kind| {
            let rows: Vec<&ReplicateRecord> = records.iter().filter(|r| r.estimand == kind).collect();
            let truths: Vec<f64> = rows.iter().map(|r| r.truth).collect();
            let k = rows.len();
            let estimates: Vec<f64> = rows.iter().map(|r| r.aaipw).collect();
            let auto: Vec<f64> = rows.iter().filter_map(|r| r.auto_g).collect();
            let auto_truths: Vec<f64> = rows.iter().filter(|r| r.auto_g.is_some()).map(|r| r.truth).collect();
            let truth = if k > 0 { truths.iter().sum::<f64>() / k as f64 } else { f64::NAN };
            EstimandSummary {
                estimand: kind,
                truth,
                truth_mc_error: 0.0,
                replicates: k,
                aaipw: MethodSummary::from_errors(&estimates, &truths),
                coverage: (k > 0).then(|| rows.iter().filter(|r| r.covered).count() as f64 / k as f64),
                mean_std_error: (k > 0).then(|| rows.iter().map(|r| r.std_error).sum::<f64>() / k as f64),
                auto_g: MethodSummary::from_errors(&auto, &auto_truths),
                clipped_weights_total: rows.iter().map(|r| r.clipped_weights).sum(),
                clipped_replicates: rows.iter().filter(|r| r.clipped_weights > 0).count(),
            }
        })
        .collect()
}

/// [`run_experiment`] with the oracle's reported error attached.
pub fn run_experiment_with_truth_error(config: &ScenarioConfig, cache: &TruthCache) -> Result<MCResult> {
    let mut result = run_experiment(config, cache)?;
    if !config.redraw_network {
        let net = generate_ba_capped(config.n, config.m, config.max_degree, config.network_seed)?;
        let truth = cache.get_or_compute(
            &net,
            &config.sim_params(),
            config.alpha,
            config.alpha_prime,
            &config.estimands,
            &config.truth,
        )?;
        for s in &mut result.summaries {
            if let Some(t) = truth.iter().find(|t| t.estimand == s.estimand) {
                s.truth_mc_error = t.mc_error;
            }
        }
    }
    Ok(result)
}
