use std::path::PathBuf;

use netaipw::automodel::{Feature, FittedModel, FittedNuisance, ModelSpec};
use netaipw::chainsim::simulate_stream;
use netaipw::estimator::{estimate, EstimandKind, EstimandRequest, EstimateReport, EstimationContext, PropensityControls};
use netaipw::harness::{run_experiment_with_truth_error, MCResult, ScenarioConfig, SummaryRow, TruthCache};
use netaipw::inference::{attach_hac, if_corrected_scores, KernelSpec, ShellIndex};
use netaipw::netgraph::generate_ba_capped;
use netaipw::stream_rng;
use serde::Serialize;

use crate::config::{AnalyzeConfig, McConfig, SimulateConfig};
use crate::error::{io_error, CliError, CliResult};
use crate::io;

/// Files written by `simulate`.
#[derive(Debug)]
pub struct SimulateOutput {
    pub edges: PathBuf,
    pub nodes: Vec<PathBuf>,
}

pub fn simulate(cfg: &SimulateConfig) -> CliResult<SimulateOutput> {
    cfg.validate()?;
    let params = cfg.sim_params();
    params.validate()?;
    let net = generate_ba_capped(cfg.n, cfg.m, cfg.max_degree, cfg.network_seed)?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(io_error(&cfg.out_dir))?;
    let edges = cfg.out_dir.join("edges.txt");
    io::write_edges(&edges, &net)?;
    let mut nodes = Vec::new();
    for (r, data) in simulate_stream(&net, &params, cfg.n_iter, cfg.burn_in, cfg.seed)?
        .thin(cfg.thin)
        .enumerate()
    {
        let path = cfg.out_dir.join(format!("nodes_{r:04}.csv"));
        io::write_nodes(&path, &data)?;
        nodes.push(path);
    }
    log::info!("wrote {} dataset(s) to {}", nodes.len(), cfg.out_dir.display());
    Ok(SimulateOutput { edges, nodes })
}

#[derive(Debug, Serialize)]
pub struct McReport {
    pub cells: Vec<MCResult>,
}

pub fn mc(cfg: &McConfig) -> CliResult<(McReport, Vec<SummaryRow>)> {
    if cfg.replicates == 0 {
        return Err(CliError::Config("replicates must be at least 1".into()));
    }
    let cache = TruthCache::new();
    let mut cells = Vec::new();
    for &[m, max_degree] in &cfg.cells {
        for &scenario in &cfg.scenarios {
            let mut sc = ScenarioConfig::desk(m, max_degree, scenario);
            sc.n = cfg.n;
            sc.estimands = cfg.estimands.clone();
            sc.burn_in = cfg.burn_in;
            sc.thin = cfg.thin.max(1);
            sc = sc.with_replicates(cfg.replicates);
            sc.alpha = cfg.alpha;
            sc.alpha_prime = cfg.alpha_prime;
            sc.k = cfg.k;
            sc.bandwidth = cfg.bandwidth;
            sc.level = cfg.level;
            sc.seed = cfg.seed;
            sc.network_seed = cfg.network_seed;
            sc.redraw_network = cfg.redraw_network;
            sc.auto_g = cfg.auto_g.then_some(cfg.auto_g_controls);
            sc.if_correction = cfg.if_correction;
            sc.truth = cfg.truth;
            log::info!("cell ({m}, {max_degree}) {scenario}: {} replicates", sc.replicates());
            let mut result = run_experiment_with_truth_error(&sc, &cache)?;
            if result.failures > 0 {
                log::warn!("cell ({m}, {max_degree}) {scenario}: {} replicate(s) failed", result.failures);
            }
            if !cfg.traces {
                result.records.clear();
            }
            cells.push(result);
        }
    }
    let rows = cells.iter().flat_map(MCResult::table_rows).collect();
    Ok((McReport { cells }, rows))
}

#[derive(Debug, Clone, Serialize)]
pub struct FeatureCoefficient {
    pub feature: String,
    pub coefficient: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelSummary {
    pub coefficients: Vec<FeatureCoefficient>,
    pub converged: bool,
    pub iterations: usize,
    pub separation: bool,
    pub ridge: bool,
    pub max_gradient: f64,
}

fn feature_name(f: Feature, covariates: &[String]) -> String {
    match f {
        Feature::Intercept => "intercept".into(),
        Feature::OwnCovariate(c) => covariates[c].clone(),
        Feature::NeighborCovariateSum(c) => format!("sum_{}", covariates[c]),
        Feature::OwnTreatment => "a".into(),
        Feature::NeighborTreatmentSum => "sum_a".into(),
        Feature::NeighborOutcomeSum => "sum_y".into(),
        Feature::Noise(c) => format!("noise{c}"),
    }
}

impl ModelSummary {
    fn of(model: &FittedModel, covariates: &[String]) -> Self {
        Self {
            coefficients: model
                .spec
                .features
                .iter()
                .zip(model.coefficients())
                .map(|(&f, &coefficient)| FeatureCoefficient {
                    feature: feature_name(f, covariates),
                    coefficient,
                })
                .collect(),
            converged: model.fit.converged,
            iterations: model.fit.iterations,
            separation: model.fit.separation,
            ridge: model.fit.ridge,
            max_gradient: model.fit.max_gradient,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalysisReport {
    pub nodes: usize,
    pub edges: usize,
    pub isolated_nodes: usize,
    pub covariates: Vec<String>,
    pub k: usize,
    pub kernel: KernelSpec,
    pub level: f64,
    pub outcome_model: ModelSummary,
    pub treatment_model: ModelSummary,
    pub estimates: Vec<EstimateReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalysisRow {
    pub estimand: EstimandKind,
    pub alpha: f64,
    pub alpha_prime: Option<f64>,
    pub point: f64,
    pub std_error: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub clipped_weights: usize,
}

impl AnalysisReport {
    pub fn rows(&self) -> Vec<AnalysisRow> {
        self.estimates
            .iter()
            .map(|r| AnalysisRow {
                estimand: r.estimand,
                alpha: r.alpha,
                alpha_prime: r.alpha_prime,
                point: r.point,
                std_error: r.std_error,
                ci_lo: r.ci.map(|c| c[0]),
                ci_hi: r.ci.map(|c| c[1]),
                clipped_weights: r.diagnostics.clipped_weights,
            })
            .collect()
    }
}

pub fn analyze(cfg: &AnalyzeConfig) -> CliResult<AnalysisReport> {
    if cfg.k == 0 {
        return Err(CliError::Config("k must be at least 1".into()));
    }
    if cfg.estimands.is_empty() {
        return Err(CliError::Config("no estimands requested".into()));
    }
    let table = io::read_nodes(&cfg.nodes, cfg.covariates.as_deref())?;
    let net = io::read_network(&cfg.edges, &table)?;
    let data = &table.data;
    let width = data.covariates.width();
    let nuisance = FittedNuisance::fit(
        &net,
        data,
        ModelSpec::outcome(width, cfg.k),
        ModelSpec::treatment(width, cfg.k),
        None,
    )?;
    if !nuisance.converged() {
        log::warn!("a nuisance fit did not converge; see the report's model summaries");
    }
    let controls = PropensityControls {
        cap: cfg.enumeration_cap,
        seed: cfg.seed,
        ..PropensityControls::default()
    };
    let ctx = EstimationContext::new(&net, data, &nuisance, cfg.k, controls)?;
    let kernel = cfg.bandwidth.map_or_else(|| KernelSpec::default_for(cfg.k), KernelSpec::bartlett);
    let shells = ShellIndex::new(&net, kernel.max_lag());
    let mut rng = stream_rng(cfg.seed, 0);
    let mut estimates = Vec::with_capacity(cfg.estimands.len());
    for &kind in &cfg.estimands {
        let alt = (kind == EstimandKind::Ie2).then_some(cfg.alpha_prime);
        let mut request = EstimandRequest::new(kind, cfg.alpha, alt);
        request.mode = cfg.mode;
        request.mc_draws = cfg.mc_draws;
        let mut report = estimate(&ctx, &request, &mut rng)?;
        if cfg.if_correction {
            let (corrected, _) = if_corrected_scores(&ctx, &nuisance, &report.scores, &request)?;
            report.scores = corrected;
            report.diagnostics.if_corrected = true;
        }
        attach_hac(&mut report, &shells, &kernel, cfg.level)?;
        estimates.push(report);
    }
    Ok(AnalysisReport {
        nodes: net.node_count(),
        edges: net.edge_count(),
        isolated_nodes: (0..net.node_count()).filter(|&i| net.degree(i) == 0).count(),
        outcome_model: ModelSummary::of(&nuisance.outcome, &table.covariate_names),
        treatment_model: ModelSummary::of(&nuisance.treatment, &table.covariate_names),
        covariates: table.covariate_names,
        k: cfg.k,
        kernel,
        level: cfg.level,
        estimates,
    })
}
