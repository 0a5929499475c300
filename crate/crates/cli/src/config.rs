//! TOML configuration for each subcommand. Every key has a default, and
//! command-line flags override whatever the file sets.

use std::path::{Path, PathBuf};

use netaipw::chainsim::{GibbsControls, SimParams};
use netaipw::estimator::{EstimandKind, EvaluationMode};
use netaipw::harness::{Scenario, TruthControls};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{io_error, CliError, CliResult};

pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path).map_err(io_error(path))?;
    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub n: usize,
    pub m: usize,
    pub max_degree: usize,
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub network_seed: u64,
    /// Generative parameters; the reference set for `m` when absent.
    pub params: Option<SimParams>,
    pub out_dir: PathBuf,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            n: 800,
            m: 1,
            max_degree: 2,
            n_iter: 2001,
            burn_in: 2000,
            thin: 1,
            seed: 2024,
            network_seed: 1,
            params: None,
            out_dir: PathBuf::from("sim-out"),
        }
    }
}

impl SimulateConfig {
    pub fn validate(&self) -> CliResult<()> {
        if self.burn_in >= self.n_iter {
            return Err(CliError::Config(format!(
                "burn_in ({}) must be smaller than n_iter ({})",
                self.burn_in, self.n_iter
            )));
        }
        if self.thin == 0 {
            return Err(CliError::Config("thin must be at least 1".into()));
        }
        Ok(())
    }

    pub fn sim_params(&self) -> SimParams {
        self.params.clone().unwrap_or_else(|| SimParams::reference(self.m))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McConfig {
    /// `(m, max_degree)` pairs.
    pub cells: Vec<[usize; 2]>,
    pub scenarios: Vec<Scenario>,
    pub estimands: Vec<EstimandKind>,
    pub n: usize,
    pub replicates: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub alpha: f64,
    pub alpha_prime: f64,
    pub k: usize,
    pub bandwidth: Option<f64>,
    pub level: f64,
    pub seed: u64,
    pub network_seed: u64,
    pub redraw_network: bool,
    pub auto_g: bool,
    pub auto_g_controls: GibbsControls,
    pub if_correction: bool,
    pub truth: TruthControls,
    /// Keep per-replicate traces in the JSON report.
    pub traces: bool,
    pub out_json: PathBuf,
    pub out_csv: PathBuf,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            cells: vec![[1, 2], [2, 5], [3, 10]],
            scenarios: vec![Scenario::MisspecifiedOutcome, Scenario::MisspecifiedPropensity],
            estimands: EstimandKind::ALL.to_vec(),
            n: 800,
            replicates: 500,
            burn_in: 2000,
            thin: 1,
            alpha: 0.7,
            alpha_prime: 0.3,
            k: 1,
            bandwidth: None,
            level: 0.95,
            seed: 2024,
            network_seed: 1,
            redraw_network: false,
            auto_g: true,
            auto_g_controls: GibbsControls::default(),
            if_correction: false,
            truth: TruthControls::default(),
            traces: true,
            out_json: PathBuf::from("mc.json"),
            out_csv: PathBuf::from("mc.csv"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzeConfig {
    pub edges: PathBuf,
    pub nodes: PathBuf,
    /// Covariate columns to use; every column besides id, y and a when absent.
    pub covariates: Option<Vec<String>>,
    pub estimands: Vec<EstimandKind>,
    pub alpha: f64,
    pub alpha_prime: f64,
    pub k: usize,
    pub bandwidth: Option<f64>,
    pub level: f64,
    pub mode: EvaluationMode,
    pub mc_draws: usize,
    pub enumeration_cap: usize,
    pub seed: u64,
    pub if_correction: bool,
    pub out_json: PathBuf,
    pub out_csv: Option<PathBuf>,
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        Self {
            edges: PathBuf::from("edges.txt"),
            nodes: PathBuf::from("nodes.csv"),
            covariates: None,
            estimands: EstimandKind::ALL.to_vec(),
            alpha: 0.5,
            alpha_prime: 0.2,
            k: 1,
            bandwidth: None,
            level: 0.95,
            mode: EvaluationMode::Exact,
            mc_draws: 200,
            enumeration_cap: netaipw::propensity::DEFAULT_ENUMERATION_CAP,
            seed: 0,
            if_correction: false,
            out_json: PathBuf::from("report.json"),
            out_csv: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_files_keep_defaults() {
        let c: AnalyzeConfig = toml::from_str("alpha = 0.3\nestimands = [\"de\", \"ie2\"]").unwrap();
        assert_eq!(c.alpha, 0.3);
        assert_eq!(c.estimands, vec![EstimandKind::De, EstimandKind::Ie2]);
        assert_eq!(c.alpha_prime, 0.2);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<McConfig>("replicate = 3").is_err());
    }

    #[test]
    fn scenario_names() {
        let c: McConfig = toml::from_str("scenarios = [\"both-correct\"]\ncells = [[2, 5]]").unwrap();
        assert_eq!(c.scenarios, vec![Scenario::BothCorrect]);
        assert_eq!(c.cells, vec![[2, 5]]);
    }
}
