//! Doubly robust estimation of direct and spillover effects on one large
//! network.
//!
//! The crate covers the full pipeline: a capped preferential-attachment graph
//! generator ([`netgraph`]), a Gibbs sampler for the chain-graph
//! covariate/treatment/outcome model ([`chainsim`]), auto-logistic nuisance
//! models fitted by pseudo-likelihood ([`automodel`]), neighborhood joint
//! propensities ([`propensity`]), the augmented IPW unit scores and the
//! allocation-averaged estimands ([`estimator`]), network HAC inference
//! ([`inference`]) and a Monte Carlo driver ([`harness`]).

pub mod automodel;
pub mod chainsim;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod inference;
pub mod netgraph;
pub mod propensity;

pub use error::{Error, Result};

/// Logistic function.
#[inline]
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Log-odds of a probability.
#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Independent ChaCha stream `stream` of a master seed.
pub fn stream_rng(seed: u64, stream: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
