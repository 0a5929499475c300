//! Network HAC variance, normal confidence intervals and the optional
//! first-order correction for estimated nuisance parameters.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::automodel::FittedNuisance;
use crate::estimator::{arm_score_gradient, EstimandRequest, EstimateReport, EstimationContext};
use crate::netgraph::Network;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Bartlett,
    Truncated,
}

/// Lag kernel `ω(s)`, zero from `s = bandwidth` on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub bandwidth: f64,
}

impl KernelSpec {
    pub fn bartlett(bandwidth: f64) -> Self {
        Self {
            kind: KernelKind::Bartlett,
            bandwidth,
        }
    }

    /// Bandwidth `2(K+1)+1`: scores of units within `2(K+1)` hops share inputs.
    pub fn default_for(k: usize) -> Self {
        Self::bartlett((2 * (k + 1) + 1) as f64)
    }

    pub fn weight(&self, s: usize) -> f64 {
        let s = s as f64;
        if s >= self.bandwidth {
            return 0.0;
        }
        match self.kind {
            KernelKind::Bartlett => (1.0 - s / self.bandwidth).max(0.0),
            KernelKind::Truncated => 1.0,
        }
    }

    /// Largest lag with nonzero weight (lag 0 always counts).
    pub fn max_lag(&self) -> usize {
        if self.bandwidth <= 1.0 {
            0
        } else {
            (self.bandwidth.ceil() as usize) - 1
        }
    }
}

/// Per-node hop shells up to a fixed radius, computed once per network.
#[derive(Debug, Clone)]
pub struct ShellIndex {
    /// `shells[i][s]`: nodes at distance exactly `s` from `i`.
    shells: Vec<Vec<Vec<usize>>>,
    radius: usize,
}

impl ShellIndex {
    pub fn new(net: &Network, radius: usize) -> Self {
        let shells = (0..net.node_count())
            .into_par_iter()
            .map(|i| net.shells(i, radius).expect("node in range"))
            .collect();
        Self { shells, radius }
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn node_count(&self) -> usize {
        self.shells.len()
    }
}

/// Long-run variance and its per-lag components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HacEstimate {
    pub lambda: f64,
    /// `Ω̂(s) = n⁻¹ Σ_i Σ_{d(i,j)=s} (W_i − μ̂)(W_j − μ̂)`.
    pub omegas: Vec<f64>,
    /// The kernel sum was negative and was replaced by `Ω̂(0)`.
    pub floored: bool,
}

/// `Λ̂ = Σ_s ω(s) Ω̂(s)`.
pub fn hac_variance(scores: &[f64], net: &Network, kernel: &KernelSpec) -> Result<HacEstimate> {
    let index = ShellIndex::new(net, kernel.max_lag());
    hac_variance_indexed(scores, &index, kernel)
}

/// [`hac_variance`] with precomputed shells.
pub fn hac_variance_indexed(scores: &[f64], index: &ShellIndex, kernel: &KernelSpec) -> Result<HacEstimate> {
    let n = scores.len();
    if n == 0 {
        return Err(Error::Empty("no scores for the variance".into()));
    }
    if index.node_count() != n {
        return Err(Error::Mismatch(format!("{n} scores for {} nodes", index.node_count())));
    }
    let max_lag = kernel.max_lag();
    if max_lag > index.radius() {
        return Err(Error::InvalidParameter(format!(
            "kernel reaches lag {max_lag}, shells only to {}",
            index.radius()
        )));
    }
    // Two-pass mean: the correction term removes the rounding of the naive
    // mean, so constant scores centre to exact zeros.
    let naive = scores.iter().sum::<f64>() / n as f64;
    let mu = naive + scores.iter().map(|w| w - naive).sum::<f64>() / n as f64;
    let centered: Vec<f64> = scores.iter().map(|w| w - mu).collect();
    let omegas: Vec<f64> = (0..=max_lag)
        .map(|s| {
            let total: f64 = (0..n)
                .into_par_iter()
                .map(|i| centered[i] * index.shells[i][s].iter().map(|&j| centered[j]).sum::<f64>())
                .sum();
            total / n as f64
        })
        .collect();
    let lambda: f64 = omegas.iter().enumerate().map(|(s, o)| kernel.weight(s) * o).sum();
    if lambda < 0.0 {
        log::warn!("negative HAC variance {lambda:.3e}; using the lag-0 term");
        return Ok(HacEstimate {
            lambda: omegas[0],
            omegas,
            floored: true,
        });
    }
    Ok(HacEstimate {
        lambda,
        omegas,
        floored: false,
    })
}

/// `μ̂ ± z_{(1+level)/2} √(Λ̂/n)`.
pub fn confidence_interval(mu_hat: f64, lambda_hat: f64, n: usize, level: f64) -> Result<(f64, f64)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidParameter(format!("level {level} outside (0, 1)")));
    }
    if lambda_hat < 0.0 || n == 0 {
        return Err(Error::InvalidParameter("variance must be nonnegative and n positive".into()));
    }
    let z = Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf((1.0 + level) / 2.0);
    let half = z * (lambda_hat / n as f64).sqrt();
    Ok((mu_hat - half, mu_hat + half))
}

/// Fills the variance, standard error and interval of `report` from its unit
/// scores. The point estimate is re-centred on the scores, so IF-corrected
/// scores may be swapped in beforehand.
pub fn attach_hac(report: &mut EstimateReport, index: &ShellIndex, kernel: &KernelSpec, level: f64) -> Result<HacEstimate> {
    let n = report.scores.len();
    if n == 0 {
        return Err(Error::Empty("report carries no unit scores".into()));
    }
    let hac = hac_variance_indexed(&report.scores, index, kernel)?;
    report.point = report.scores.iter().sum::<f64>() / n as f64;
    let (lo, hi) = confidence_interval(report.point, hac.lambda, n, level)?;
    report.variance = Some(hac.lambda);
    report.std_error = Some((hac.lambda / n as f64).sqrt());
    report.ci = Some([lo, hi]);
    report.level = Some(level);
    Ok(hac)
}

/// Moment matrices of the nuisance correction.
#[derive(Debug, Clone, PartialEq)]
pub struct IfCorrection {
    /// Mean derivative of the score in the treatment coefficients (`−M1`).
    pub d_treatment: DVector<f64>,
    /// Mean derivative of the score in the outcome coefficients (`M2`).
    pub d_outcome: DVector<f64>,
    /// Outcome score Jacobian (`M3`).
    pub outcome_jacobian: DMatrix<f64>,
    /// Treatment score Jacobian (`M4`).
    pub treatment_jacobian: DMatrix<f64>,
    /// Per-node adjustment added to the scores.
    pub adjustment: Vec<f64>,
}

impl IfCorrection {
    /// `M1`: mean of `1{A = a} π̂⁻² ∂π̂/∂η (Y − β̂)`.
    pub fn m1(&self) -> DVector<f64> {
        -&self.d_treatment
    }

    /// `M2`: mean of `(1 − 1{A = a}/π̂) ∂β̂/∂θ`.
    pub fn m2(&self) -> DVector<f64> {
        self.d_outcome.clone()
    }
}

/// Mean derivatives of the signed, allocation-averaged scores.
pub fn mean_score_gradients(
    ctx: &EstimationContext<'_>,
    nuisance: &FittedNuisance,
    request: &EstimandRequest,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let arms = request.arms();
    let n = ctx.node_count();
    let per_node: Vec<(Vec<f64>, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut dt = vec![0.0; nuisance.outcome.spec.len()];
            let mut de = vec![0.0; nuisance.treatment.spec.len()];
            for (arm, sign) in &arms {
                let g = arm_score_gradient(ctx, nuisance, i, arm)?;
                dt.iter_mut().zip(&g.outcome).for_each(|(a, b)| *a += sign * b);
                de.iter_mut().zip(&g.treatment).for_each(|(a, b)| *a += sign * b);
            }
            Ok((dt, de))
        })
        .collect::<Result<_>>()?;
    let mut d_outcome = DVector::zeros(nuisance.outcome.spec.len());
    let mut d_treatment = DVector::zeros(nuisance.treatment.spec.len());
    for (dt, de) in &per_node {
        d_outcome += DVector::from_column_slice(dt);
        d_treatment += DVector::from_column_slice(de);
    }
    Ok((d_outcome / n as f64, d_treatment / n as f64))
}

/// Scores adjusted for the estimation of both nuisances:
/// `W_i − M1·IF_η,i + M2·IF_θ,i` with `IF = −M⁻¹ g_i` for each model's
/// per-node score `g_i` and mean score Jacobian `M`.
pub fn if_corrected_scores(
    ctx: &EstimationContext<'_>,
    nuisance: &FittedNuisance,
    scores: &[f64],
    request: &EstimandRequest,
) -> Result<(Vec<f64>, IfCorrection)> {
    if scores.len() != ctx.node_count() {
        return Err(Error::Mismatch("scores do not match the context".into()));
    }
    let (d_outcome, d_treatment) = mean_score_gradients(ctx, nuisance, request)?;
    let m3 = nuisance.outcome.score_jacobian();
    let m4 = nuisance.treatment.score_jacobian();
    let solve = |m: &DMatrix<f64>, what: &str| -> Result<DMatrix<f64>> {
        m.clone()
            .try_inverse()
            .filter(|inv| inv.iter().all(|v| v.is_finite()))
            .ok_or_else(|| Error::Singular(format!("{what} score Jacobian")))
    };
    let m3_inv = solve(&m3, "outcome")?;
    let m4_inv = solve(&m4, "treatment")?;
    // Per-node contribution d · IF_i = −d · M⁻¹ g_i = −(M⁻ᵀ d) · g_i.
    let theta_dir = -(m3_inv.transpose() * &d_outcome);
    let eta_dir = -(m4_inv.transpose() * &d_treatment);
    let g_y = nuisance.outcome.scores();
    let g_a = nuisance.treatment.scores();
    let adjustment: Vec<f64> = (0..scores.len())
        .map(|i| g_y.row(i).dot(&theta_dir.transpose()) + g_a.row(i).dot(&eta_dir.transpose()))
        .collect();
    let corrected = scores.iter().zip(&adjustment).map(|(w, d)| w + d).collect();
    Ok((
        corrected,
        IfCorrection {
            d_treatment,
            d_outcome,
            outcome_jacobian: m3,
            treatment_jacobian: m4,
            adjustment,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3() -> Network {
        Network::new(3, [(0, 1), (1, 2)]).unwrap()
    }

    #[test]
    fn bartlett_weights() {
        let k = KernelSpec::bartlett(4.0);
        assert_eq!(k.weight(0), 1.0);
        assert_eq!(k.weight(1), 0.75);
        assert_eq!(k.weight(4), 0.0);
        assert_eq!(k.max_lag(), 3);
        assert!((1..10).all(|s| k.weight(s) <= k.weight(s - 1)));
        assert_eq!(KernelSpec::default_for(1).bandwidth, 5.0);
        assert_eq!(KernelSpec::bartlett(1.0).max_lag(), 0);
    }

    #[test]
    fn bandwidth_one_is_sample_variance() {
        let w = [1.0, 2.0, 4.0];
        let h = hac_variance(&w, &path3(), &KernelSpec::bartlett(1.0)).unwrap();
        let mu = 7.0 / 3.0;
        let var = w.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / 3.0;
        assert!((h.lambda - var).abs() < 1e-15);
    }

    #[test]
    fn hand_computed_path() {
        // Centered scores (−4/3, −1/3, 5/3); lag 1 pairs (0,1), (1,2) both ways.
        let w = [1.0, 2.0, 4.0];
        let h = hac_variance(&w, &path3(), &KernelSpec::bartlett(2.0)).unwrap();
        let d = [-4.0 / 3.0, -1.0 / 3.0, 5.0 / 3.0];
        let omega0 = d.iter().map(|x| x * x).sum::<f64>() / 3.0;
        let omega1 = 2.0 * (d[0] * d[1] + d[1] * d[2]) / 3.0;
        assert!((h.omegas[0] - omega0).abs() < 1e-12);
        assert!((h.omegas[1] - omega1).abs() < 1e-12);
        assert!((h.lambda - (omega0 + 0.5 * omega1)).abs() < 1e-12);
    }

    #[test]
    fn constant_scores_have_zero_variance() {
        let h = hac_variance(&[3.0; 3], &path3(), &KernelSpec::bartlett(5.0)).unwrap();
        assert_eq!(h.lambda, 0.0);
    }

    #[test]
    fn shift_invariance_and_edgeless() {
        let w = [0.3, -1.0, 2.2];
        let shifted: Vec<f64> = w.iter().map(|x| x + 10.0).collect();
        let k = KernelSpec::bartlett(3.0);
        let a = hac_variance(&w, &path3(), &k).unwrap().lambda;
        let b = hac_variance(&shifted, &path3(), &k).unwrap().lambda;
        assert!((a - b).abs() < 1e-12);
        let empty = Network::edgeless(3);
        let s0 = hac_variance(&w, &empty, &KernelSpec::bartlett(1.0)).unwrap().lambda;
        for bw in [2.0, 5.0, 40.0] {
            assert_eq!(hac_variance(&w, &empty, &KernelSpec::bartlett(bw)).unwrap().lambda, s0);
        }
        assert!(hac_variance(&[], &Network::edgeless(0), &k).is_err());
    }

    #[test]
    fn negative_kernel_sum_is_floored() {
        // Alternating scores on a path make the lag-1 term strongly negative.
        let net = Network::new(4, [(0, 1), (1, 2), (2, 3)]).unwrap();
        let h = hac_variance(&[1.0, -1.0, 1.0, -1.0], &net, &KernelSpec {
            kind: KernelKind::Truncated,
            bandwidth: 2.0,
        })
        .unwrap();
        assert!(h.floored);
        assert_eq!(h.lambda, h.omegas[0]);
    }

    #[test]
    fn interval_arithmetic() {
        let (lo, hi) = confidence_interval(0.0, 1.0, 100, 0.95).unwrap();
        assert!((hi - 0.195_996_398_454_005_4).abs() < 1e-9);
        assert!((lo + hi).abs() < 1e-15);
        assert_eq!(confidence_interval(0.4, 0.0, 10, 0.9).unwrap(), (0.4, 0.4));
        assert!(confidence_interval(0.0, 1.0, 10, 1.0).is_err());
    }
}
