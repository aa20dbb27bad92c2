use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gridpinn::dataset::{NoiseSpec, Scenario, DEFAULT_LOAD_BAND};
use gridpinn::nn::{AdamConfig, HIDDEN_UNITS};
use gridpinn::power_flow::NrOptions;
use gridpinn::seed;
use gridpinn::trainer::ExperimentConfig;
use gridpinn::wls::WlsOptions;
use gridpinn::{GridModel, Regime};
use serde::{Deserialize, Serialize};

/// Every setting of a run. Each command reads the fields it needs; the rest
/// are carried along so one file can drive the whole pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Case file; `None` uses the built-in IEEE 14-bus case.
    pub case: Option<PathBuf>,
    pub seed: u64,

    pub scenario: Scenario,
    /// `None` uses the scenario default (192 or 2000).
    pub samples: Option<usize>,
    pub load_band: f64,
    /// Relative noise levels; `None` uses the scenario default.
    pub noise_p: Option<f64>,
    pub noise_q: Option<f64>,
    pub nr_tol: f64,
    pub nr_max_iter: usize,

    pub dataset: Option<PathBuf>,
    pub out: Option<PathBuf>,

    pub epochs: usize,
    pub batch_size: usize,
    pub k_folds: usize,
    pub hidden: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub schedule_period: usize,
    pub regimes: Vec<Regime>,
    pub parallel_folds: usize,

    pub wls_tol: f64,
    pub wls_max_iter: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let exp = ExperimentConfig::default();
        let nr = NrOptions::default();
        let wls = WlsOptions::default();
        RunConfig {
            case: None,
            seed: exp.seed,
            scenario: Scenario::SteadyState,
            samples: None,
            load_band: DEFAULT_LOAD_BAND,
            noise_p: None,
            noise_q: None,
            nr_tol: nr.tol,
            nr_max_iter: nr.max_iter,
            dataset: None,
            out: None,
            epochs: exp.epochs,
            batch_size: exp.batch_size,
            k_folds: exp.k_folds,
            hidden: HIDDEN_UNITS,
            learning_rate: exp.adam.alpha,
            beta1: exp.adam.beta1,
            beta2: exp.adam.beta2,
            epsilon: exp.adam.epsilon,
            schedule_period: exp.schedule_period,
            regimes: exp.regimes,
            parallel_folds: exp.parallel_folds,
            wls_tol: wls.tol,
            wls_max_iter: wls.max_iter,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn samples(&self) -> usize {
        self.samples.unwrap_or_else(|| self.scenario.default_samples())
    }

    pub fn data_seed(&self) -> u64 {
        seed::derive(self.seed, "data")
    }

    pub fn noise_seed(&self) -> u64 {
        seed::derive(self.seed, "noise")
    }

    pub fn noise(&self) -> NoiseSpec {
        let d = NoiseSpec::default_for(self.scenario, self.noise_seed());
        NoiseSpec {
            p_sigma_rel: self.noise_p.unwrap_or(d.p_sigma_rel),
            q_sigma_rel: self.noise_q.unwrap_or(d.q_sigma_rel),
            seed: d.seed,
        }
    }

    pub fn nr_options(&self) -> NrOptions {
        NrOptions {
            tol: self.nr_tol,
            max_iter: self.nr_max_iter,
            ..NrOptions::default()
        }
    }

    pub fn wls_options(&self) -> WlsOptions {
        WlsOptions {
            tol: self.wls_tol,
            max_iter: self.wls_max_iter,
        }
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            k_folds: self.k_folds,
            hidden: self.hidden,
            adam: AdamConfig {
                alpha: self.learning_rate,
                beta1: self.beta1,
                beta2: self.beta2,
                epsilon: self.epsilon,
            },
            schedule_period: self.schedule_period,
            regimes: self.regimes.clone(),
            seed: self.seed,
            parallel_folds: self.parallel_folds,
        }
    }

    pub fn grid(&self) -> Result<GridModel> {
        match &self.case {
            Some(path) => GridModel::from_file(path).with_context(|| format!("loading case {}", path.display())),
            None => Ok(gridpinn::load_case14()),
        }
    }

    pub fn require_out(&self) -> Result<&Path> {
        match &self.out {
            Some(p) => Ok(p),
            None => bail!("no output path: pass --out or set \"out\" in the config"),
        }
    }

    pub fn require_dataset(&self) -> Result<&Path> {
        match &self.dataset {
            Some(p) => Ok(p),
            None => bail!("no dataset: pass --dataset or set \"dataset\" in the config"),
        }
    }
}

/// Parses a comma-separated regime list such as `nn,inc50`.
pub fn parse_regimes(s: &str) -> Result<Vec<Regime>, String> {
    let regimes = s
        .split(',')
        .filter(|t| !t.trim().is_empty())
        .map(str::parse)
        .collect::<Result<Vec<Regime>, _>>()?;
    if regimes.is_empty() {
        return Err("empty regime list".into());
    }
    Ok(regimes)
}
