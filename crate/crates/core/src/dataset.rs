//! Dataset generation, measurement noise, pre-processing and fold splits.
//!
//! Ground truth comes from Newton-Raphson power flow. Two scenarios are
//! supported: independent load variation around the base case, and a
//! quasi-static trajectory through the loss and recovery of the generator at
//! bus 2. Each instance draws from its own seeded stream, so the stored order
//! and values do not depend on how generation is scheduled.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{BusKind, GridModel};
use crate::power_flow::{
    current_injections, injections, scheduled_injections, solve_newton_raphson, CurrentSet, InjectionSet,
    NrOptions, PolarVoltage, PowerFlowError,
};
use crate::seed;

pub const STEADY_STATE_SAMPLES: usize = 192;
pub const OUTAGE_SAMPLES: usize = 2000;
pub const DEFAULT_LOAD_BAND: f64 = 0.2;
pub const ZERO_EPSILON: f64 = 1e-8;
/// Uniform relative load jitter applied to every bus along the outage trajectory.
pub const OUTAGE_LOAD_JITTER: f64 = 0.02;
const MAX_ATTEMPTS: usize = 10;
/// Bus (0-based) whose generator trips in the outage scenario.
const OUTAGE_BUS: usize = 1;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("sample {index}: power flow failed after {attempts} attempts: {source}")]
    Generation {
        index: usize,
        attempts: usize,
        source: PowerFlowError,
    },
    #[error(transparent)]
    PowerFlow(#[from] PowerFlowError),
    #[error(transparent)]
    Grid(#[from] crate::grid::GridError),
    #[error("bus {0} has no generator to trip")]
    NoGenerator(usize),
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("empty training index set")]
    EmptyTrainSet,
    #[error("index {0} out of range")]
    IndexOutOfRange(usize),
    #[error("dataset file {path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    #[serde(rename = "steady")]
    SteadyState,
    #[serde(rename = "outage")]
    GeneratorOutage,
}

impl Scenario {
    pub fn default_samples(self) -> usize {
        match self {
            Scenario::SteadyState => STEADY_STATE_SAMPLES,
            Scenario::GeneratorOutage => OUTAGE_SAMPLES,
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::SteadyState => "steady",
            Scenario::GeneratorOutage => "outage",
        })
    }
}

impl FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "steady" | "steady-state" | "steadystate" => Ok(Scenario::SteadyState),
            "outage" | "generator-outage" | "shutdown" => Ok(Scenario::GeneratorOutage),
            other => Err(format!("unknown scenario '{other}' (expected steady or outage)")),
        }
    }
}

/// Zero-mean Gaussian measurement noise, relative to the true injection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub p_sigma_rel: f64,
    pub q_sigma_rel: f64,
    pub seed: u64,
}

impl NoiseSpec {
    /// SCADA-grade 1% for the steady-state data, PMU-grade 0.1% for the outage trajectory.
    pub fn default_for(scenario: Scenario, seed: u64) -> Self {
        let sigma = match scenario {
            Scenario::SteadyState => 0.01,
            Scenario::GeneratorOutage => 0.001,
        };
        NoiseSpec {
            p_sigma_rel: sigma,
            q_sigma_rel: sigma,
            seed,
        }
    }
}

/// One time instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Injections consistent with `v_true`: the scheduled values where the
    /// solver enforced them, the solved values elsewhere.
    pub p_true: Vec<f64>,
    pub q_true: Vec<f64>,
    pub p_meas: Vec<f64>,
    pub q_meas: Vec<f64>,
    pub v_true: PolarVoltage,
    pub i_true: CurrentSet,
}

impl Sample {
    fn from_solution(grid: &GridModel, specified: &InjectionSet, v: PolarVoltage) -> Result<Self, PowerFlowError> {
        let y = grid.y_bus();
        let solved = injections(&v, y)?;
        let mut p = solved.p;
        let mut q = solved.q;
        for bus in grid.buses() {
            match bus.kind {
                BusKind::Slack => {}
                BusKind::PV => p[bus.id] = specified.p[bus.id],
                BusKind::PQ => {
                    p[bus.id] = specified.p[bus.id];
                    q[bus.id] = specified.q[bus.id];
                }
            }
        }
        let i_true = current_injections(&v, y)?;
        Ok(Sample {
            p_meas: p.clone(),
            q_meas: q.clone(),
            p_true: p,
            q_true: q,
            v_true: v,
            i_true,
        })
    }

    /// Network input vector `(P_1..P_N, Q_1..Q_N)` before pre-processing.
    pub fn raw_input(&self) -> Vec<f64> {
        self.p_meas.iter().chain(&self.q_meas).copied().collect()
    }

    /// Regression target `(|V|_1..|V|_N, θ_1..θ_N)` in physical units.
    pub fn raw_target(&self) -> Vec<f64> {
        self.v_true.v_mag.iter().chain(&self.v_true.v_ang).copied().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ConvergenceStats {
    pub mean_iterations: f64,
    pub max_iterations: usize,
    pub max_mismatch: f64,
    pub retries: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub scenario: Scenario,
    pub seed: u64,
    pub n_buses: usize,
    pub samples: Vec<Sample>,
    pub noise: Option<NoiseSpec>,
    pub convergence: ConvergenceStats,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

struct Solved {
    sample: Sample,
    iterations: usize,
    mismatch: f64,
    retries: usize,
}

fn collect(scenario: Scenario, seed: u64, n_buses: usize, solved: Vec<Solved>) -> Dataset {
    let count = solved.len().max(1) as f64;
    let convergence = ConvergenceStats {
        mean_iterations: solved.iter().map(|s| s.iterations as f64).sum::<f64>() / count,
        max_iterations: solved.iter().map(|s| s.iterations).max().unwrap_or(0),
        max_mismatch: solved.iter().map(|s| s.mismatch).fold(0.0, f64::max),
        retries: solved.iter().map(|s| s.retries).sum(),
    };
    Dataset {
        scenario,
        seed,
        n_buses,
        samples: solved.into_iter().map(|s| s.sample).collect(),
        noise: None,
        convergence,
    }
}

/// Solves one instance, redrawing the perturbation on failure.
fn solve_instance(
    index: usize,
    grid: &GridModel,
    nr: &NrOptions,
    mut draw: impl FnMut(usize) -> InjectionSet,
) -> Result<Solved, DatasetError> {
    let mut last_err = None;
    for attempt in 0..MAX_ATTEMPTS {
        let specified = draw(attempt);
        match solve_newton_raphson(grid, &specified, nr) {
            Ok(sol) => {
                return Ok(Solved {
                    sample: Sample::from_solution(grid, &specified, sol.voltage)?,
                    iterations: sol.iterations,
                    mismatch: sol.max_mismatch,
                    retries: attempt,
                })
            }
            Err(e) => last_err = Some(e),
        }
    }
    Err(DatasetError::Generation {
        index,
        attempts: MAX_ATTEMPTS,
        source: last_err.expect("at least one attempt"),
    })
}

/// Scales each bus load by `factors` and returns the net scheduled injections.
fn scaled_injections(grid: &GridModel, base: &InjectionSet, factors: &[f64]) -> InjectionSet {
    let mut out = base.clone();
    for bus in grid.buses() {
        let k = bus.id;
        out.p[k] += bus.base_load_p * (1.0 - factors[k]);
        out.q[k] += bus.base_load_q * (1.0 - factors[k]);
    }
    out
}

fn uniform_factors(rng: &mut impl Rng, n: usize, band: f64) -> Vec<f64> {
    (0..n).map(|_| 1.0 + band * (2.0 * rng.random::<f64>() - 1.0)).collect()
}

/// Independent uniform load scaling in `[1 − band, 1 + band]` per bus and instance.
/// Measurements are noiseless until [`add_noise`] is applied.
pub fn generate_steady_state(
    grid: &GridModel,
    n: usize,
    load_band: f64,
    seed: u64,
    nr: &NrOptions,
) -> Result<Dataset, DatasetError> {
    if n < 1 {
        return Err(DatasetError::TooFewSamples { needed: 1, got: n });
    }
    let base = scheduled_injections(grid);
    let nb = grid.n_buses();
    let solved = (0..n)
        .into_par_iter()
        .map(|k| {
            let mut rng = seed::rng(seed::derive_indexed(seed, "steady-sample", k as u64));
            solve_instance(k, grid, nr, |_| {
                let factors = uniform_factors(&mut rng, nb, load_band);
                scaled_injections(grid, &base, &factors)
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(collect(Scenario::SteadyState, seed, nb, solved))
}

/// Fraction of bus-2 generation online at trajectory instance `k`.
pub fn outage_generation_fraction(k: usize, n: usize) -> f64 {
    let step = n / 10;
    if k < step {
        return 1.0;
    }
    let tau = 0.25 * n as f64;
    1.0 - (-((k - step) as f64) / tau).exp()
}

/// Index of the first instance after the generator trip.
pub fn outage_step_index(n: usize) -> usize {
    n / 10
}

/// Quasi-static trip and recovery of the bus-2 generator.
///
/// The first 10% of instances are base operation. At the step the unit's
/// active and reactive output drop to zero and the bus loses voltage control
/// (it becomes a PQ bus); the slack picks up the deficit. Output then
/// recovers exponentially toward the base operating point with a time
/// constant of a quarter of the trajectory. Every instance carries a small
/// uniform load jitter.
pub fn generate_outage_trajectory(
    grid: &GridModel,
    n: usize,
    seed: u64,
    nr: &NrOptions,
) -> Result<Dataset, DatasetError> {
    if n < 10 {
        return Err(DatasetError::TooFewSamples { needed: 10, got: n });
    }
    let nb = grid.n_buses();
    let gen_bus = grid
        .buses()
        .get(OUTAGE_BUS)
        .filter(|b| b.kind == BusKind::PV && b.gen_p > 0.0)
        .ok_or(DatasetError::NoGenerator(OUTAGE_BUS + 1))?
        .clone();

    let base = scheduled_injections(grid);
    let base_solution = solve_newton_raphson(grid, &base, nr)?;
    let base_q_inj = injections(&base_solution.voltage, grid.y_bus())?.q[OUTAGE_BUS];
    let q_gen_base = base_q_inj + gen_bus.base_load_q;
    let tripped = grid.with_bus_kind(OUTAGE_BUS, BusKind::PQ)?;
    let step = outage_step_index(n);

    let solved = (0..n)
        .into_par_iter()
        .map(|k| {
            let mut rng = seed::rng(seed::derive_indexed(seed, "outage-sample", k as u64));
            let frac = outage_generation_fraction(k, n);
            let g = if k < step { grid } else { &tripped };
            solve_instance(k, g, nr, |_| {
                let factors = uniform_factors(&mut rng, nb, OUTAGE_LOAD_JITTER);
                let mut inj = scaled_injections(grid, &base, &factors);
                if k >= step {
                    let load = &gen_bus;
                    inj.p[OUTAGE_BUS] = frac * gen_bus.gen_p - load.base_load_p * factors[OUTAGE_BUS];
                    inj.q[OUTAGE_BUS] = frac * q_gen_base - load.base_load_q * factors[OUTAGE_BUS];
                }
                inj
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(collect(Scenario::GeneratorOutage, seed, nb, solved))
}

/// `meas = true · (1 + ε)`, `ε ~ N(0, σ²)`, drawn sample by sample, P before Q.
/// Ground-truth fields are left untouched.
pub fn add_noise(ds: &Dataset, spec: &NoiseSpec) -> Dataset {
    let mut rng = seed::rng(spec.seed);
    let mut out = ds.clone();
    for s in &mut out.samples {
        for k in 0..s.p_true.len() {
            let e: f64 = rng.sample(StandardNormal);
            s.p_meas[k] = s.p_true[k] * (1.0 + spec.p_sigma_rel * e);
        }
        for k in 0..s.q_true.len() {
            let e: f64 = rng.sample(StandardNormal);
            s.q_meas[k] = s.q_true[k] * (1.0 + spec.q_sigma_rel * e);
        }
    }
    out.noise = Some(*spec);
    out
}

/// Pre-processing parameters, fitted on training samples only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessStats {
    pub zero_epsilon: f64,
    pub input_mean: Vec<f64>,
    pub input_std: Vec<f64>,
    /// Extremes of the standardized training inputs.
    pub input_min: Vec<f64>,
    pub input_max: Vec<f64>,
    pub target_min: Vec<f64>,
    pub target_max: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Affine map of `[min, max]` onto `[-1, 1]`; a degenerate range uses unit
/// scale, so the constant value maps to 0.
#[inline]
fn center_half(min: f64, max: f64) -> (f64, f64) {
    let half = 0.5 * (max - min);
    (0.5 * (max + min), if half > 0.0 { half } else { 1.0 })
}

impl PreprocessStats {
    pub fn n_inputs(&self) -> usize {
        self.input_mean.len()
    }

    pub fn n_targets(&self) -> usize {
        self.target_min.len()
    }

    pub fn transform_input(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .enumerate()
            .map(|(k, &x)| {
                let x = if x == 0.0 { self.zero_epsilon } else { x };
                let z = (x - self.input_mean[k]) / self.input_std[k];
                let (c, h) = center_half(self.input_min[k], self.input_max[k]);
                (z - c) / h
            })
            .collect()
    }

    /// Inverse of [`transform_input`](Self::transform_input) (zero replacement is not undone).
    pub fn inverse_input(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(k, &s)| {
                let (c, h) = center_half(self.input_min[k], self.input_max[k]);
                (s * h + c) * self.input_std[k] + self.input_mean[k]
            })
            .collect()
    }

    pub fn transform_target(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .enumerate()
            .map(|(k, &v)| {
                let (c, h) = self.target_affine(k);
                (v - c) / h
            })
            .collect()
    }

    pub fn inverse_target(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .enumerate()
            .map(|(k, &s)| {
                let (c, h) = self.target_affine(k);
                s * h + c
            })
            .collect()
    }

    /// `(center, half-range)` of target `k`: physical = center + half · rescaled.
    #[inline]
    pub fn target_affine(&self, k: usize) -> (f64, f64) {
        center_half(self.target_min[k], self.target_max[k])
    }
}

/// Fits pre-processing statistics on `train_indices`.
pub fn fit_preprocess(ds: &Dataset, train_indices: &[usize]) -> Result<PreprocessStats, DatasetError> {
    if train_indices.is_empty() {
        return Err(DatasetError::EmptyTrainSet);
    }
    if let Some(&bad) = train_indices.iter().find(|&&i| i >= ds.len()) {
        return Err(DatasetError::IndexOutOfRange(bad));
    }
    let n_in = 2 * ds.n_buses;
    let count = train_indices.len() as f64;
    let inputs: Vec<Vec<f64>> = train_indices
        .iter()
        .map(|&i| {
            ds.samples[i]
                .raw_input()
                .into_iter()
                .map(|x| if x == 0.0 { ZERO_EPSILON } else { x })
                .collect()
        })
        .collect();

    let mut warnings = Vec::new();
    let mut mean = vec![0.0; n_in];
    let mut std = vec![0.0; n_in];
    for k in 0..n_in {
        mean[k] = inputs.iter().map(|x| x[k]).sum::<f64>() / count;
        let var = inputs.iter().map(|x| (x[k] - mean[k]).powi(2)).sum::<f64>() / count;
        std[k] = var.sqrt();
        if inputs.iter().all(|x| x[k] == inputs[0][k]) || !(std[k] > 0.0) {
            warnings.push(format!("input feature {} is constant on the training set", feature_name(k, ds.n_buses)));
            std[k] = 1.0;
        }
    }
    let mut in_min = vec![f64::INFINITY; n_in];
    let mut in_max = vec![f64::NEG_INFINITY; n_in];
    for x in &inputs {
        for k in 0..n_in {
            let z = (x[k] - mean[k]) / std[k];
            in_min[k] = in_min[k].min(z);
            in_max[k] = in_max[k].max(z);
        }
    }

    let mut t_min = vec![f64::INFINITY; n_in];
    let mut t_max = vec![f64::NEG_INFINITY; n_in];
    for &i in train_indices {
        for (k, v) in ds.samples[i].raw_target().into_iter().enumerate() {
            t_min[k] = t_min[k].min(v);
            t_max[k] = t_max[k].max(v);
        }
    }
    for k in 0..n_in {
        if !(t_max[k] > t_min[k]) {
            warnings.push(format!("target {} is constant on the training set", target_name(k, ds.n_buses)));
        }
    }
    for w in &warnings {
        log::debug!("preprocess: {w}");
    }

    Ok(PreprocessStats {
        zero_epsilon: ZERO_EPSILON,
        input_mean: mean,
        input_std: std,
        input_min: in_min,
        input_max: in_max,
        target_min: t_min,
        target_max: t_max,
        warnings,
    })
}

fn feature_name(k: usize, n: usize) -> String {
    if k < n {
        format!("p_{}", k + 1)
    } else {
        format!("q_{}", k - n + 1)
    }
}

fn target_name(k: usize, n: usize) -> String {
    if k < n {
        format!("vmag_{}", k + 1)
    } else {
        format!("vang_{}", k - n + 1)
    }
}

/// Network-ready arrays for every sample of a dataset, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub n_buses: usize,
    /// `len × 2N` rescaled inputs.
    pub inputs: Vec<f64>,
    /// `len × 2N` rescaled targets.
    pub targets: Vec<f64>,
    /// `len × N` physical injection currents.
    pub i_re: Vec<f64>,
    pub i_im: Vec<f64>,
}

impl Prepared {
    pub fn len(&self) -> usize {
        self.i_re.len() / self.n_buses
    }

    pub fn is_empty(&self) -> bool {
        self.i_re.is_empty()
    }

    pub fn width(&self) -> usize {
        2 * self.n_buses
    }

    pub fn input(&self, i: usize) -> &[f64] {
        let w = self.width();
        &self.inputs[i * w..(i + 1) * w]
    }

    pub fn target(&self, i: usize) -> &[f64] {
        let w = self.width();
        &self.targets[i * w..(i + 1) * w]
    }
}

/// Applies fitted statistics to every sample. Fitting uses only the training
/// rows, so validation rows never influence the statistics.
pub fn apply_preprocess(ds: &Dataset, stats: &PreprocessStats) -> Prepared {
    let n = ds.n_buses;
    let mut out = Prepared {
        n_buses: n,
        inputs: Vec::with_capacity(ds.len() * 2 * n),
        targets: Vec::with_capacity(ds.len() * 2 * n),
        i_re: Vec::with_capacity(ds.len() * n),
        i_im: Vec::with_capacity(ds.len() * n),
    };
    for s in &ds.samples {
        out.inputs.extend(stats.transform_input(&s.raw_input()));
        out.targets.extend(stats.transform_target(&s.raw_target()));
        out.i_re.extend_from_slice(&s.i_true.i_re);
        out.i_im.extend_from_slice(&s.i_true.i_im);
    }
    out
}

/// Fits on `train_indices` and transforms the whole dataset.
pub fn preprocess(ds: &Dataset, train_indices: &[usize]) -> Result<(Prepared, PreprocessStats), DatasetError> {
    let stats = fit_preprocess(ds, train_indices)?;
    Ok((apply_preprocess(ds, &stats), stats))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

/// Seeded shuffle, then contiguous blocks; the first `n mod k` folds get one
/// extra validation sample. Index lists are returned sorted.
pub fn k_fold_split(n: usize, k: usize, seed: u64) -> Result<Vec<Fold>, DatasetError> {
    if k < 2 || n < k {
        return Err(DatasetError::TooFewSamples { needed: k.max(2), got: n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed));
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        let mut val = order[start..start + size].to_vec();
        let mut train: Vec<usize> = order[..start].iter().chain(&order[start + size..]).copied().collect();
        val.sort_unstable();
        train.sort_unstable();
        folds.push(Fold { train, val });
        start += size;
    }
    Ok(folds)
}

/// Sidecar metadata written next to a dataset CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub scenario: Scenario,
    pub seed: u64,
    pub case: String,
    pub n_samples: usize,
    pub n_buses: usize,
    pub angle_unit: String,
    pub noise: Option<NoiseSpec>,
    pub convergence: ConvergenceStats,
    /// Statistics fitted on the whole dataset, for reference; training refits per fold.
    pub preprocess: PreprocessStats,
}

/// `ds.csv` → `ds.json`.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

pub fn csv_header(n: usize) -> Vec<String> {
    ["p", "q", "vmag", "vang", "ire", "iim"]
        .iter()
        .flat_map(|prefix| (1..=n).map(move |k| format!("{prefix}_{k}")))
        .collect()
}

/// Writes the dataset CSV and its JSON sidecar.
pub fn write_dataset(ds: &Dataset, grid: &GridModel, csv_path: &Path) -> Result<(), DatasetError> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(csv_path)?));
    w.write_record(csv_header(ds.n_buses))?;
    for s in &ds.samples {
        let row = s
            .p_meas
            .iter()
            .chain(&s.q_meas)
            .chain(&s.v_true.v_mag)
            .chain(&s.v_true.v_ang)
            .chain(&s.i_true.i_re)
            .chain(&s.i_true.i_im)
            .map(|x| x.to_string());
        w.write_record(row)?;
    }
    w.flush()?;

    let all: Vec<usize> = (0..ds.len()).collect();
    let meta = DatasetMeta {
        scenario: ds.scenario,
        seed: ds.seed,
        case: grid.name().to_string(),
        n_samples: ds.len(),
        n_buses: ds.n_buses,
        angle_unit: "rad".into(),
        noise: ds.noise,
        convergence: ds.convergence,
        preprocess: fit_preprocess(ds, &all)?,
    };
    let f = BufWriter::new(File::create(sidecar_path(csv_path))?);
    serde_json::to_writer_pretty(f, &meta)?;
    Ok(())
}

/// Reads a dataset CSV (and its sidecar when present). True injections are
/// recomputed from the stored voltages.
pub fn read_dataset(csv_path: &Path, grid: &GridModel) -> Result<Dataset, DatasetError> {
    let n = grid.n_buses();
    let fmt_err = |msg: String| DatasetError::Format {
        path: csv_path.to_path_buf(),
        msg,
    };
    let mut r = csv::Reader::from_reader(BufReader::new(File::open(csv_path)?));
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != csv_header(n) {
        return Err(fmt_err(format!(
            "header does not match a {n}-bus dataset (expected p_1..p_{n}, q_.., vmag_.., vang_.., ire_.., iim_..)"
        )));
    }
    let mut samples = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let vals: Vec<f64> = rec
            .iter()
            .map(|t| t.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| fmt_err(format!("row {}: {e}", row + 2)))?;
        let col = |b: usize| vals[b * n..(b + 1) * n].to_vec();
        let v_true = PolarVoltage {
            v_mag: col(2),
            v_ang: col(3),
        };
        let truth = injections(&v_true, grid.y_bus())?;
        samples.push(Sample {
            p_meas: col(0),
            q_meas: col(1),
            p_true: truth.p,
            q_true: truth.q,
            v_true,
            i_true: CurrentSet {
                i_re: col(4),
                i_im: col(5),
            },
        });
    }

    let sidecar = sidecar_path(csv_path);
    let meta: Option<DatasetMeta> = if sidecar.exists() {
        Some(serde_json::from_reader(BufReader::new(File::open(&sidecar)?))?)
    } else {
        None
    };
    if let Some(m) = &meta {
        if m.n_samples != samples.len() || m.n_buses != n {
            return Err(fmt_err(format!(
                "sidecar describes {} samples on {} buses, file has {} samples",
                m.n_samples,
                m.n_buses,
                samples.len()
            )));
        }
    }
    Ok(Dataset {
        scenario: meta.as_ref().map_or(Scenario::SteadyState, |m| m.scenario),
        seed: meta.as_ref().map_or(0, |m| m.seed),
        n_buses: n,
        samples,
        noise: meta.as_ref().and_then(|m| m.noise),
        convergence: meta.map(|m| m.convergence).unwrap_or_default(),
    })
}
