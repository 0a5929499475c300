//! Auto-logistic nuisance models: feature maps over a node's local
//! information, pseudo-likelihood fitting by damped Newton, and evaluation of
//! the fitted outcome regression at hypothetical neighborhood treatments.
//!
//! Both nuisances are pooled logistic regressions of one node's variable on
//! its own covariates and sums over its punctured `K`-hop neighborhood. The
//! treatment model must not use outcomes; its fitted coefficients define the
//! auto-logistic energy used for joint propensities.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chainsim::{Covariates, Dataset, OutcomeKernel};
use crate::netgraph::Network;
use crate::propensity::{EnergySpec, LocalAssignment};
use crate::{expit, Error, Result};

/// One regressor of an auto-logistic model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "feature", content = "column", rename_all = "snake_case")]
pub enum Feature {
    Intercept,
    OwnCovariate(usize),
    NeighborCovariateSum(usize),
    OwnTreatment,
    NeighborTreatmentSum,
    NeighborOutcomeSum,
    /// Column of the per-replicate noise matrix; stands in for a covariate
    /// feature in deliberately misspecified models.
    Noise(usize),
}

impl Feature {
    fn depends_on_treatment(self) -> bool {
        matches!(self, Self::OwnTreatment | Self::NeighborTreatmentSum)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Outcome,
    Treatment,
}

/// Feature map plus neighborhood radius.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub features: Vec<Feature>,
    pub k: usize,
}

impl ModelSpec {
    /// `1, A_i, ΣA_j, (L_ci, ΣL_cj) for each covariate c, ΣY_j`.
    pub fn outcome(covariates: usize, k: usize) -> Self {
        let mut features = vec![Feature::Intercept, Feature::OwnTreatment, Feature::NeighborTreatmentSum];
        for c in 0..covariates {
            features.push(Feature::OwnCovariate(c));
            features.push(Feature::NeighborCovariateSum(c));
        }
        features.push(Feature::NeighborOutcomeSum);
        Self {
            kind: ModelKind::Outcome,
            features,
            k,
        }
    }

    /// `1, (L_ci, ΣL_cj) for each covariate c, ΣA_j`.
    pub fn treatment(covariates: usize, k: usize) -> Self {
        let mut features = vec![Feature::Intercept];
        for c in 0..covariates {
            features.push(Feature::OwnCovariate(c));
            features.push(Feature::NeighborCovariateSum(c));
        }
        features.push(Feature::NeighborTreatmentSum);
        Self {
            kind: ModelKind::Treatment,
            features,
            k,
        }
    }

    /// Replaces every covariate-derived feature by a fresh noise column,
    /// numbered from `first_column`.
    pub fn with_noise(mut self, first_column: usize) -> Self {
        let mut next = first_column;
        for f in &mut self.features {
            if matches!(f, Feature::OwnCovariate(_) | Feature::NeighborCovariateSum(_)) {
                *f = Feature::Noise(next);
                next += 1;
            }
        }
        self
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// Number of noise columns this spec reads (one past the largest index).
    pub fn noise_width(&self) -> usize {
        self.features
            .iter()
            .filter_map(|f| match f {
                Feature::Noise(c) => Some(c + 1),
                _ => None,
            })
            .max()
            .unwrap_or(0)
    }

    pub fn position(&self, feature: Feature) -> Option<usize> {
        self.features.iter().position(|&f| f == feature)
    }

    pub fn validate(&self, covariate_width: usize, noise_width: usize) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidParameter("model radius K must be >= 1".into()));
        }
        if !self.features.contains(&Feature::Intercept) {
            return Err(Error::InvalidParameter("model spec must include an intercept".into()));
        }
        for (idx, f) in self.features.iter().enumerate() {
            if self.features[..idx].contains(f) {
                return Err(Error::InvalidParameter(format!("duplicate feature {f:?}")));
            }
            match *f {
                Feature::OwnCovariate(c) | Feature::NeighborCovariateSum(c) if c >= covariate_width => {
                    return Err(Error::Mismatch(format!(
                        "feature {f:?} needs covariate {c}, data has {covariate_width}"
                    )))
                }
                Feature::Noise(c) if c >= noise_width => {
                    return Err(Error::Mismatch(format!(
                        "feature {f:?} needs noise column {c}, {noise_width} supplied"
                    )))
                }
                Feature::NeighborOutcomeSum | Feature::OwnTreatment if self.kind == ModelKind::Treatment => {
                    return Err(Error::InvalidParameter(format!(
                        "treatment model cannot use {f:?}"
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Independent fair-coin noise matrix with `width` columns.
pub fn draw_noise<R: Rng>(n: usize, width: usize, rng: &mut R) -> Covariates {
    let values = (0..n * width).map(|_| f64::from(rng.gen_range(0u8..2))).collect();
    Covariates::new(width, values).expect("rectangular by construction")
}

/// Inputs shared by every feature evaluation of one spec.
#[derive(Debug, Clone, Copy)]
pub struct FeatureContext<'a> {
    pub hoods: &'a [Vec<usize>],
    pub data: &'a Dataset,
    pub noise: Option<&'a Covariates>,
}

impl FeatureContext<'_> {
    fn value(&self, f: Feature, i: usize) -> f64 {
        let hood = &self.hoods[i];
        let data = self.data;
        match f {
            Feature::Intercept => 1.0,
            Feature::OwnCovariate(c) => data.covariates.get(i, c),
            Feature::NeighborCovariateSum(c) => hood.iter().map(|&j| data.covariates.get(j, c)).sum(),
            Feature::OwnTreatment => f64::from(data.a[i]),
            Feature::NeighborTreatmentSum => hood.iter().map(|&j| f64::from(data.a[j])).sum(),
            Feature::NeighborOutcomeSum => hood.iter().map(|&j| f64::from(data.y[j])).sum(),
            Feature::Noise(c) => self.noise.map_or(0.0, |z| z.get(i, c)),
        }
    }

    pub fn row(&self, spec: &ModelSpec, i: usize) -> Vec<f64> {
        spec.features.iter().map(|&f| self.value(f, i)).collect()
    }
}

/// Feature vector of node `i` under `spec`.
pub fn build_features(
    net: &Network,
    data: &Dataset,
    spec: &ModelSpec,
    i: usize,
    noise: Option<&Covariates>,
) -> Result<Vec<f64>> {
    data.check_against(net)?;
    spec.validate(data.covariates.width(), noise.map_or(0, Covariates::width))?;
    let mut hood = net.neighborhood(i, spec.k)?;
    hood.retain(|&j| j != i);
    let mut hoods = vec![Vec::new(); net.node_count()];
    hoods[i] = hood;
    let ctx = FeatureContext {
        hoods: &hoods,
        data,
        noise,
    };
    Ok(ctx.row(spec, i))
}

/// Row-per-node design matrix, built in parallel.
pub fn design_matrix(ctx: &FeatureContext<'_>, spec: &ModelSpec) -> DMatrix<f64> {
    let n = ctx.data.len();
    let rows: Vec<Vec<f64>> = (0..n).into_par_iter().map(|i| ctx.row(spec, i)).collect();
    DMatrix::from_fn(n, spec.len(), |i, f| rows[i][f])
}

/// Outcome of a pseudo-likelihood fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub coefficients: Vec<f64>,
    pub converged: bool,
    /// Labels constant, or the linear predictor diverging.
    pub separation: bool,
    /// A ridge had to be added to the Hessian.
    pub ridge: bool,
    pub iterations: usize,
    /// Max-norm of the mean score at the returned coefficients.
    pub max_gradient: f64,
}

const GRADIENT_TOLERANCE: f64 = 1e-8;
const MAX_ITERATIONS: usize = 100;
const RIDGE: f64 = 1e-8;
const DIVERGENT_PREDICTOR: f64 = 30.0;

fn mean_log_likelihood(x: &DMatrix<f64>, y: &[f64], b: &DVector<f64>) -> f64 {
    let eta = x * b;
    let total: f64 = eta
        .iter()
        .zip(y)
        .map(|(&e, &t)| {
            // log(1 + e^e) computed stably.
            let soft = if e > 0.0 { e + (-e).exp().ln_1p() } else { e.exp().ln_1p() };
            t * e - soft
        })
        .sum();
    total / y.len() as f64
}

fn mean_gradient(x: &DMatrix<f64>, y: &[f64], b: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let p = (x * b).map(expit);
    let resid = DVector::from_iterator(y.len(), y.iter().zip(p.iter()).map(|(t, q)| t - q));
    (x.tr_mul(&resid) / y.len() as f64, p)
}

/// Maximizes the logistic pseudo-likelihood `Σ y log p + (1-y) log(1-p)` by
/// Newton steps with step halving.
pub fn fit_logistic_pl(x: &DMatrix<f64>, labels: &[u8]) -> Result<LogisticFit> {
    let (n, p) = x.shape();
    if labels.len() != n {
        return Err(Error::Mismatch(format!("{n} design rows for {} labels", labels.len())));
    }
    if n == 0 || n < p {
        return Err(Error::Empty(format!("{n} rows cannot identify {p} coefficients")));
    }
    if labels.iter().any(|&v| v > 1) {
        return Err(Error::Mismatch("labels must be binary".into()));
    }
    let y: Vec<f64> = labels.iter().map(|&v| f64::from(v)).collect();
    let constant = labels.iter().all(|&v| v == labels[0]);

    let mut b = DVector::zeros(p);
    let mut ll = mean_log_likelihood(x, &y, &b);
    let mut ridge = false;
    let mut separation = constant;
    let mut converged = false;
    let mut iterations = 0;
    let (mut grad, mut prob) = mean_gradient(x, &y, &b);
    while iterations < MAX_ITERATIONS {
        // Once inside tolerance, one more Newton step is kept only if it
        // shrinks the gradient further: quadratic convergence makes it cheap
        // and it removes the tolerance-sized bias of stopping early.
        let polishing = grad.amax() < GRADIENT_TOLERANCE;
        if polishing {
            converged = true;
        }
        iterations += 1;
        let weights = prob.map(|q| q * (1.0 - q));
        let mut weighted = x.clone();
        for (mut row, w) in weighted.row_iter_mut().zip(weights.iter()) {
            row *= *w;
        }
        let info = x.tr_mul(&weighted) / n as f64;
        let scale = info.diagonal().amax().max(f64::MIN_POSITIVE);
        let well_conditioned = |c: &nalgebra::Cholesky<f64, nalgebra::Dyn>| {
            c.l_dirty().diagonal().iter().all(|d| d * d > 1e-12 * scale)
        };
        let chol = match info.clone().cholesky().filter(well_conditioned) {
            Some(c) => c,
            None => {
                ridge = true;
                (info + DMatrix::identity(p, p) * (RIDGE * scale))
                    .cholesky()
                    .ok_or_else(|| Error::Singular("logistic information matrix".into()))?
            }
        };
        let step = chol.solve(&grad);
        if polishing {
            let candidate = &b + &step;
            let (cand_grad, _) = mean_gradient(x, &y, &candidate);
            if cand_grad.amax() < grad.amax() {
                b = candidate;
                grad = cand_grad;
            }
            break;
        }
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let candidate = &b + &step * t;
            let cand_ll = mean_log_likelihood(x, &y, &candidate);
            if cand_ll >= ll - 1e-15 {
                b = candidate;
                ll = cand_ll;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
        (grad, prob) = mean_gradient(x, &y, &b);
        if (x * &b).amax() > DIVERGENT_PREDICTOR {
            separation = true;
            break;
        }
    }
    if !converged && grad.amax() < GRADIENT_TOLERANCE {
        converged = true;
    }
    if separation {
        converged = false;
    }
    Ok(LogisticFit {
        coefficients: b.iter().copied().collect(),
        converged,
        separation,
        ridge,
        iterations,
        max_gradient: grad.amax(),
    })
}

/// A fitted auto-logistic model with its design retained for score and
/// Jacobian computations.
#[derive(Debug, Clone)]
pub struct FittedModel {
    pub spec: ModelSpec,
    pub fit: LogisticFit,
    pub design: DMatrix<f64>,
    pub labels: Vec<u8>,
    /// Punctured neighborhoods at the spec's radius.
    pub hoods: Vec<Vec<usize>>,
}

impl FittedModel {
    pub fn fit(net: &Network, data: &Dataset, spec: ModelSpec, noise: Option<&Covariates>) -> Result<Self> {
        data.check_against(net)?;
        spec.validate(data.covariates.width(), noise.map_or(0, Covariates::width))?;
        let hoods = net.punctured_neighborhoods(spec.k);
        let ctx = FeatureContext {
            hoods: &hoods,
            data,
            noise,
        };
        let design = design_matrix(&ctx, &spec);
        let labels = match spec.kind {
            ModelKind::Outcome => data.y.clone(),
            ModelKind::Treatment => data.a.clone(),
        };
        let fit = fit_logistic_pl(&design, &labels)?;
        if !fit.converged {
            log::warn!(
                "{:?} model did not converge (separation: {}, |grad| = {:.2e})",
                spec.kind,
                fit.separation,
                fit.max_gradient
            );
        }
        Ok(Self {
            spec,
            fit,
            design,
            labels,
            hoods,
        })
    }

    /// A model with given coefficients on the design built from `data`.
    pub fn with_coefficients(
        net: &Network,
        data: &Dataset,
        spec: ModelSpec,
        noise: Option<&Covariates>,
        coefficients: Vec<f64>,
    ) -> Result<Self> {
        if coefficients.len() != spec.len() {
            return Err(Error::Mismatch(format!(
                "{} coefficients for {} features",
                coefficients.len(),
                spec.len()
            )));
        }
        data.check_against(net)?;
        spec.validate(data.covariates.width(), noise.map_or(0, Covariates::width))?;
        let hoods = net.punctured_neighborhoods(spec.k);
        let ctx = FeatureContext {
            hoods: &hoods,
            data,
            noise,
        };
        let design = design_matrix(&ctx, &spec);
        let labels = match spec.kind {
            ModelKind::Outcome => data.y.clone(),
            ModelKind::Treatment => data.a.clone(),
        };
        let b = DVector::from_column_slice(&coefficients);
        let y: Vec<f64> = labels.iter().map(|&v| f64::from(v)).collect();
        let max_gradient = mean_gradient(&design, &y, &b).0.amax();
        Ok(Self {
            spec,
            fit: LogisticFit {
                coefficients,
                converged: true,
                separation: false,
                ridge: false,
                iterations: 0,
                max_gradient,
            },
            design,
            labels,
            hoods,
        })
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.fit.coefficients
    }

    fn coefficient(&self, f: Feature) -> f64 {
        self.spec.position(f).map_or(0.0, |idx| self.fit.coefficients[idx])
    }

    pub fn node_count(&self) -> usize {
        self.labels.len()
    }

    /// Fitted probabilities at the observed design.
    pub fn probabilities(&self) -> Vec<f64> {
        let b = DVector::from_column_slice(&self.fit.coefficients);
        (&self.design * b).iter().map(|&e| expit(e)).collect()
    }

    /// Per-node score contributions `(y_i − p_i) x_i`, one row per node.
    pub fn scores(&self) -> DMatrix<f64> {
        let p = self.probabilities();
        let mut s = self.design.clone();
        for (i, mut row) in s.row_iter_mut().enumerate() {
            row *= f64::from(self.labels[i]) - p[i];
        }
        s
    }

    /// Mean Jacobian of the score: `−n⁻¹ Σ p(1−p) x xᵀ`.
    pub fn score_jacobian(&self) -> DMatrix<f64> {
        let p = self.probabilities();
        let mut weighted = self.design.clone();
        for (i, mut row) in weighted.row_iter_mut().enumerate() {
            row *= -p[i] * (1.0 - p[i]);
        }
        self.design.tr_mul(&weighted) / self.node_count() as f64
    }

    /// Linear predictor excluding treatment-dependent features.
    fn static_predictor(&self, i: usize) -> f64 {
        self.spec
            .features
            .iter()
            .enumerate()
            .filter(|(_, f)| !f.depends_on_treatment())
            .map(|(idx, _)| self.design[(i, idx)] * self.fit.coefficients[idx])
            .sum()
    }

    /// Outcome regression in the form used for plug-in evaluation.
    pub fn outcome_regression(&self) -> Result<OutcomeRegression> {
        if self.spec.kind != ModelKind::Outcome {
            return Err(Error::InvalidParameter("outcome regression from a treatment model".into()));
        }
        Ok(OutcomeRegression {
            base: (0..self.node_count()).map(|i| self.static_predictor(i)).collect(),
            own_treatment: self.coefficient(Feature::OwnTreatment),
            neighbor_treatment: self.coefficient(Feature::NeighborTreatmentSum),
            hoods: self.hoods.clone(),
        })
    }

    /// Auto-logistic energy implied by a treatment model.
    pub fn treatment_energy(&self) -> Result<EnergySpec> {
        if self.spec.kind != ModelKind::Treatment {
            return Err(Error::InvalidParameter("treatment energy from an outcome model".into()));
        }
        let offsets = (0..self.node_count()).map(|i| self.static_predictor(i)).collect();
        EnergySpec::new(offsets, self.coefficient(Feature::NeighborTreatmentSum), self.hoods.clone())
    }

    /// Outcome Gibbs kernel for counterfactual simulation from the fitted
    /// model (Auto-G). Covariate and noise features keep their observed values.
    pub fn outcome_kernel(&self) -> Result<OutcomeKernel<'_>> {
        if self.spec.kind != ModelKind::Outcome {
            return Err(Error::InvalidParameter("outcome kernel from a treatment model".into()));
        }
        let offset = (0..self.node_count())
            .map(|i| {
                self.spec
                    .features
                    .iter()
                    .enumerate()
                    .filter(|(_, f)| !f.depends_on_treatment() && **f != Feature::NeighborOutcomeSum)
                    .map(|(idx, _)| self.design[(i, idx)] * self.fit.coefficients[idx])
                    .sum()
            })
            .collect();
        Ok(OutcomeKernel {
            offset,
            own_treatment: self.coefficient(Feature::OwnTreatment),
            neighbor_treatment: self.coefficient(Feature::NeighborTreatmentSum),
            neighbor_outcome: self.coefficient(Feature::NeighborOutcomeSum),
            hoods: &self.hoods,
        })
    }

    /// Feature row of node `i` with the treatment features evaluated at a
    /// hypothetical own treatment and neighbor-treatment count.
    pub fn row_at(&self, i: usize, own: f64, neighbor_sum: f64) -> Vec<f64> {
        self.spec
            .features
            .iter()
            .enumerate()
            .map(|(idx, f)| match f {
                Feature::OwnTreatment => own,
                Feature::NeighborTreatmentSum => neighbor_sum,
                _ => self.design[(i, idx)],
            })
            .collect()
    }

    /// Rows of the treatment-static features of the given nodes, for
    /// propensity derivatives.
    pub fn static_row(&self, i: usize) -> Vec<f64> {
        self.spec
            .features
            .iter()
            .enumerate()
            .map(|(idx, f)| if f.depends_on_treatment() { 0.0 } else { self.design[(i, idx)] })
            .collect()
    }
}

/// `β_a(i) = expit(base_i + own·a_i + neighbor·Σ_{j ∈ N⁻_i} a_j)`, with
/// neighbor outcomes and covariates held at their observed values.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeRegression {
    pub base: Vec<f64>,
    pub own_treatment: f64,
    pub neighbor_treatment: f64,
    pub hoods: Vec<Vec<usize>>,
}

impl OutcomeRegression {
    #[inline]
    pub fn mean(&self, i: usize, own: u8, treated_neighbors: usize) -> f64 {
        expit(self.base[i] + self.own_treatment * f64::from(own) + self.neighbor_treatment * treated_neighbors as f64)
    }

    pub fn hood(&self, i: usize) -> &[usize] {
        &self.hoods[i]
    }
}

/// `β̂_{a_local}(X_i^y)`: the fitted outcome mean of `i` with the treatments
/// of its neighborhood set to `a_local`.
pub fn eval_outcome_mean(model: &OutcomeRegression, i: usize, a_local: &LocalAssignment) -> Result<f64> {
    let own = a_local.get(i).ok_or(Error::IncompleteAssignment(i))?;
    let mut treated = 0;
    for &j in model.hood(i) {
        treated += usize::from(a_local.get(j).ok_or(Error::IncompleteAssignment(j))?);
    }
    Ok(model.mean(i, own, treated))
}

/// Both fitted nuisance models of one dataset.
#[derive(Debug, Clone)]
pub struct FittedNuisance {
    pub outcome: FittedModel,
    pub treatment: FittedModel,
}

impl FittedNuisance {
    pub fn fit(
        net: &Network,
        data: &Dataset,
        outcome: ModelSpec,
        treatment: ModelSpec,
        noise: Option<&Covariates>,
    ) -> Result<Self> {
        if outcome.kind != ModelKind::Outcome || treatment.kind != ModelKind::Treatment {
            return Err(Error::InvalidParameter("nuisance specs of the wrong kind".into()));
        }
        Ok(Self {
            outcome: FittedModel::fit(net, data, outcome, noise)?,
            treatment: FittedModel::fit(net, data, treatment, noise)?,
        })
    }

    pub fn converged(&self) -> bool {
        self.outcome.fit.converged && self.treatment.fit.converged
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chainsim::SimParams;

    fn path3() -> Network {
        Network::new(3, [(0, 1), (1, 2)]).unwrap()
    }

    fn data3() -> Dataset {
        Dataset::new(
            vec![1, 0, 1],
            vec![1, 0, 1],
            Covariates::from_binary(&[[1, 0, 1], [0, 1, 1], [1, 1, 0]]),
        )
        .unwrap()
    }

    #[test]
    fn neighbor_treatment_count_on_path() {
        let spec = ModelSpec::outcome(3, 1);
        let x = build_features(&path3(), &data3(), &spec, 1, None).unwrap();
        assert_eq!(x[spec.position(Feature::NeighborTreatmentSum).unwrap()], 2.0);
    }

    #[test]
    fn full_outcome_row_by_hand() {
        let spec = ModelSpec::outcome(3, 1);
        let x = build_features(&path3(), &data3(), &spec, 1, None).unwrap();
        // 1, A1, ΣA, L11, ΣL1, L21, ΣL2, L31, ΣL3, ΣY
        assert_eq!(x, vec![1.0, 0.0, 2.0, 0.0, 2.0, 1.0, 1.0, 1.0, 1.0, 2.0]);
        let spec = ModelSpec::treatment(3, 1);
        let x = build_features(&path3(), &data3(), &spec, 0, None).unwrap();
        assert_eq!(x, vec![1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn isolated_node_has_zero_sums() {
        let net = Network::edgeless(2);
        let data = Dataset::new(vec![1, 1], vec![1, 1], Covariates::from_binary(&[[1; 3], [1; 3]])).unwrap();
        let spec = ModelSpec::outcome(3, 1);
        let x = build_features(&net, &data, &spec, 0, None).unwrap();
        for (f, v) in spec.features.iter().zip(&x) {
            if matches!(f, Feature::NeighborCovariateSum(_) | Feature::NeighborTreatmentSum | Feature::NeighborOutcomeSum) {
                assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn spec_validation() {
        assert!(ModelSpec::outcome(3, 1).validate(2, 0).is_err());
        let noisy = ModelSpec::outcome(3, 1).with_noise(0);
        assert_eq!(noisy.noise_width(), 6);
        assert!(noisy.validate(3, 5).is_err());
        assert!(noisy.validate(3, 6).is_ok());
        let mut bad = ModelSpec::treatment(3, 1);
        bad.features.push(Feature::NeighborOutcomeSum);
        assert!(bad.validate(3, 0).is_err());
        let mut no_intercept = ModelSpec::treatment(3, 1);
        no_intercept.features.remove(0);
        assert!(no_intercept.validate(3, 0).is_err());
    }

    #[test]
    fn intercept_only_fit_is_logit_of_mean() {
        let x = DMatrix::from_element(10, 1, 1.0);
        let labels = [1, 1, 1, 0, 0, 0, 0, 0, 0, 0];
        let fit = fit_logistic_pl(&x, &labels).unwrap();
        assert!(fit.converged);
        assert!((fit.coefficients[0] - crate::logit(0.3)).abs() < 1e-10);

        let fit = fit_logistic_pl(&x, &[1; 10]).unwrap();
        assert!(fit.separation);
        assert!(!fit.converged);
        assert!(fit.coefficients[0] > 0.0);
    }

    #[test]
    fn rank_deficient_design_uses_ridge() {
        let x = DMatrix::from_fn(6, 2, |_, _| 1.0);
        let fit = fit_logistic_pl(&x, &[1, 0, 1, 0, 0, 0]).unwrap();
        assert!(fit.ridge);
        assert!((expit(fit.coefficients[0] + fit.coefficients[1]) - 1.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn fit_is_row_permutation_invariant() {
        let x = DMatrix::from_row_slice(6, 2, &[1.0, 0.3, 1.0, -1.2, 1.0, 2.0, 1.0, 0.1, 1.0, -0.4, 1.0, 1.1]);
        let y = [1, 0, 0, 1, 0, 1];
        let a = fit_logistic_pl(&x, &y).unwrap();
        let order = [3, 5, 0, 2, 4, 1];
        let xp = DMatrix::from_fn(6, 2, |i, j| x[(order[i], j)]);
        let yp: Vec<u8> = order.iter().map(|&i| y[i]).collect();
        let b = fit_logistic_pl(&xp, &yp).unwrap();
        for (u, v) in a.coefficients.iter().zip(&b.coefficients) {
            assert!((u - v).abs() < 1e-10);
        }
        assert!(a.max_gradient < 1e-8);
    }

    #[test]
    fn true_coefficients_reproduce_generative_conditional() {
        let net = path3();
        let data = data3();
        let params = SimParams::reference(1);
        let model = FittedModel::with_coefficients(&net, &data, ModelSpec::outcome(3, 1), None, params.theta.to_vec())
            .unwrap();
        let reg = model.outcome_regression().unwrap();
        let l = data.covariates.to_binary().unwrap();
        let hoods = net.punctured_neighborhoods(1);
        for i in 0..3 {
            let local = LocalAssignment::observed(&net.neighborhood(i, 1).unwrap(), &data.a);
            let direct = expit(params.outcome_logit(&l, &data.a, &data.y, &hoods[i], i));
            assert!((eval_outcome_mean(&reg, i, &local).unwrap() - direct).abs() < 1e-15);
        }
        // Flipping the own treatment under a negative own coefficient lowers the mean.
        let nodes = net.neighborhood(1, 1).unwrap();
        let off = LocalAssignment::new(nodes.clone(), vec![1, 0, 1]).unwrap();
        let on = LocalAssignment::new(nodes, vec![1, 1, 1]).unwrap();
        assert!(eval_outcome_mean(&reg, 1, &on).unwrap() < eval_outcome_mean(&reg, 1, &off).unwrap());
        let partial = LocalAssignment::new(vec![1], vec![1]).unwrap();
        assert!(matches!(eval_outcome_mean(&reg, 1, &partial), Err(Error::IncompleteAssignment(0))));
    }

    #[test]
    fn treatment_energy_matches_generative_law() {
        let net = path3();
        let data = data3();
        let params = SimParams::reference(1);
        let model =
            FittedModel::with_coefficients(&net, &data, ModelSpec::treatment(3, 1), None, params.eta.to_vec()).unwrap();
        let energy = model.treatment_energy().unwrap();
        let l = data.covariates.to_binary().unwrap();
        let hoods = net.punctured_neighborhoods(1);
        for i in 0..3 {
            let direct = params.treatment_logit(&l, &data.a, &hoods[i], i);
            assert!((energy.conditional_logit(&data.a, i) - direct).abs() < 1e-14);
        }
    }
}
