use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use gridpinn::dataset::{self, Dataset, NoiseSpec, Scenario};
use gridpinn::trainer::{
    self, compare_regimes, render_table, EpochRecord, ExperimentConfig, RegimeReport, BEST_EPOCH_METRIC,
    FOLD_STD_METRIC, NORMALIZED_METRIC, VALIDATION_METRIC,
};
use gridpinn::wls::{estimate_dataset, WlsSummary};
use gridpinn::Regime;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::Failure;

const TOOL: &str = "gridpinn";
const VERSION: &str = env!("CARGO_PKG_VERSION");

/// What a run did: enough to replay it with `--manifest`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: RunConfig,
    pub seeds: BTreeMap<String, u64>,
    /// Files written by the run, relative to the manifest's directory.
    pub outputs: Vec<String>,
}

impl Manifest {
    fn new(command: &str, config: &RunConfig, seeds: BTreeMap<String, u64>, outputs: Vec<String>) -> Self {
        Manifest {
            tool: TOOL.into(),
            version: VERSION.into(),
            command: command.into(),
            config: config.clone(),
            seeds,
            outputs,
        }
    }

    pub fn load(path: &Path, command: &str) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
        let m: Manifest =
            serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))?;
        if m.command != command {
            bail!("manifest {} records a `{}` run, not `{command}`", path.display(), m.command);
        }
        Ok(m)
    }

    fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("manifest.json");
        write_json(&path, self)?;
        Ok(path)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn file_name(path: &Path) -> String {
    path.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned())
}

pub fn generate(cfg: &RunConfig) -> Result<(), Failure> {
    let out = cfg.require_out()?.to_path_buf();
    let grid = cfg.grid()?;
    let n = cfg.samples();
    let nr = cfg.nr_options();
    let clean = match cfg.scenario {
        Scenario::SteadyState => dataset::generate_steady_state(&grid, n, cfg.load_band, cfg.data_seed(), &nr),
        Scenario::GeneratorOutage => dataset::generate_outage_trajectory(&grid, n, cfg.data_seed(), &nr),
    }
    .context("dataset generation failed")?;
    let noise = cfg.noise();
    let ds = dataset::add_noise(&clean, &noise);

    let dir = parent_dir(&out);
    fs::create_dir_all(&dir)?;
    dataset::write_dataset(&ds, &grid, &out).with_context(|| format!("writing {}", out.display()))?;

    let seeds = BTreeMap::from([
        ("master".to_string(), cfg.seed),
        ("data".to_string(), cfg.data_seed()),
        ("noise".to_string(), noise.seed),
    ]);
    let outputs = vec![file_name(&out), file_name(&dataset::sidecar_path(&out))];
    Manifest::new("generate", cfg, seeds, outputs).write(&dir)?;

    let c = ds.convergence;
    println!("wrote {} ({} samples, {} buses, scenario {:?})", out.display(), ds.len(), ds.n_buses, ds.scenario);
    println!(
        "power flow: mean {:.2} / max {} iterations, max mismatch {:.2e}, {} retries",
        c.mean_iterations, c.max_iterations, c.max_mismatch, c.retries
    );
    println!(
        "noise: p {:.3}% q {:.3}% relative (seed {})",
        100.0 * noise.p_sigma_rel,
        100.0 * noise.q_sigma_rel,
        noise.seed
    );
    Ok(())
}

fn load_dataset(cfg: &RunConfig) -> Result<(gridpinn::GridModel, Dataset, PathBuf)> {
    let path = cfg.require_dataset()?.to_path_buf();
    if !path.exists() {
        bail!("dataset {} does not exist", path.display());
    }
    let grid = cfg.grid()?;
    let ds = dataset::read_dataset(&path, &grid).with_context(|| format!("reading dataset {}", path.display()))?;
    Ok((grid, ds, path))
}

#[derive(Serialize)]
struct Metrics {
    validation_error: &'static str,
    fold_std: &'static str,
    best_epoch: &'static str,
    normalized: &'static str,
}

#[derive(Serialize)]
struct DatasetInfo {
    file: String,
    scenario: Scenario,
    seed: u64,
    samples: usize,
    buses: usize,
    noise: Option<NoiseSpec>,
}

#[derive(Serialize)]
struct TrainSeeds {
    master: u64,
    folds: u64,
    init: Vec<u64>,
    shuffle: Vec<u64>,
}

/// Contents of `report.json`. No timestamps or absolute paths, so equal
/// inputs give equal bytes.
#[derive(Serialize)]
struct RunReport<'a> {
    tool: &'static str,
    version: &'static str,
    dataset: DatasetInfo,
    config: &'a ExperimentConfig,
    seeds: TrainSeeds,
    metrics: Metrics,
    regimes: &'a [RegimeReport],
}

fn table_title(scenario: Scenario) -> &'static str {
    match scenario {
        Scenario::SteadyState => "Steady-State Dataset Results",
        Scenario::GeneratorOutage => "Generator Shut-down Dataset Results",
    }
}

fn table_text(scenario: Scenario, reports: &[RegimeReport]) -> String {
    format!(
        "{}\nCross-validation error: {VALIDATION_METRIC}.\nFold standard deviation: {FOLD_STD_METRIC}.\nBest epoch: {BEST_EPOCH_METRIC}.\nNormalized: {NORMALIZED_METRIC}.\n",
        render_table(table_title(scenario), reports)
    )
}

fn write_curve(path: &Path, curve: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in curve {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn train(cfg: &RunConfig) -> Result<(), Failure> {
    let out = cfg.require_out()?.to_path_buf();
    let (grid, ds, ds_path) = load_dataset(cfg)?;
    let exp = cfg.experiment();
    exp.validate(ds.len())?;
    if !exp.regimes.contains(&Regime::PlainNN) {
        return Err(anyhow!("the regime list must include nn, the baseline every other regime is normalized to").into());
    }

    let reports = compare_regimes(&exp, &grid, &ds).map_err(|e| Failure::Training(e.into()))?;

    fs::create_dir_all(out.join("curves"))?;
    fs::create_dir_all(out.join("models"))?;
    let mut outputs = vec!["report.json".to_string(), "report.txt".to_string()];
    for r in &reports {
        for f in &r.fold_reports {
            let stem = format!("{}_fold{}", r.regime.key(), f.fold_index);
            let curve = format!("curves/{stem}.csv");
            let model = format!("models/{stem}.json");
            write_curve(&out.join(&curve), &f.curve)?;
            f.final_model.save(&out.join(&model)).map_err(anyhow::Error::from)?;
            outputs.push(curve);
            outputs.push(model);
        }
    }

    let folds = 0..exp.k_folds;
    let seeds = TrainSeeds {
        master: exp.seed,
        folds: exp.fold_seed(),
        init: folds.clone().map(|f| exp.init_seed(f)).collect(),
        shuffle: folds.map(|f| exp.shuffle_seed(f)).collect(),
    };
    let report = RunReport {
        tool: TOOL,
        version: VERSION,
        dataset: DatasetInfo {
            file: file_name(&ds_path),
            scenario: ds.scenario,
            seed: ds.seed,
            samples: ds.len(),
            buses: ds.n_buses,
            noise: ds.noise,
        },
        config: &exp,
        seeds,
        metrics: Metrics {
            validation_error: VALIDATION_METRIC,
            fold_std: FOLD_STD_METRIC,
            best_epoch: BEST_EPOCH_METRIC,
            normalized: NORMALIZED_METRIC,
        },
        regimes: &reports,
    };
    write_json(&out.join("report.json"), &report)?;
    let text = table_text(ds.scenario, &reports);
    fs::write(out.join("report.txt"), &text)?;

    let manifest_seeds = BTreeMap::from([("master".to_string(), exp.seed), ("folds".to_string(), exp.fold_seed())]);
    Manifest::new("train", cfg, manifest_seeds, outputs).write(&out)?;
    print!("{text}");
    Ok(())
}

#[derive(Serialize)]
struct StatRow<'a> {
    statistic: &'a str,
    value: f64,
}

fn summary_rows(s: &WlsSummary) -> [StatRow<'static>; 6] {
    [
        StatRow { statistic: "samples", value: s.samples as f64 },
        StatRow { statistic: "mean_mag_error", value: s.mean_mag_error },
        StatRow { statistic: "mean_ang_error", value: s.mean_ang_error },
        StatRow { statistic: "max_mag_error", value: s.max_mag_error },
        StatRow { statistic: "max_ang_error", value: s.max_ang_error },
        StatRow { statistic: "mean_iterations", value: s.mean_iterations },
    ]
}

pub fn wls(cfg: &RunConfig) -> Result<(), Failure> {
    let out = cfg.require_out()?.to_path_buf();
    let (grid, ds, _) = load_dataset(cfg)?;
    let (results, summary) = estimate_dataset(&grid, &ds, &cfg.wls_options())
        .map_err(|(i, e)| anyhow!("WLS failed on sample {i}: {e}"))?;
    fs::create_dir_all(&out)?;

    let n = ds.n_buses;
    let mut w = csv::Writer::from_path(out.join("wls_estimates.csv"))?;
    let mut header: Vec<String> = [
        "index",
        "iterations",
        "residual_norm",
        "max_mag_error",
        "max_ang_error",
        "mean_mag_error",
        "mean_ang_error",
    ]
    .map(String::from)
    .to_vec();
    header.extend((1..=n).map(|k| format!("vmag_{k}")));
    header.extend((1..=n).map(|k| format!("vang_{k}")));
    w.write_record(&header)?;
    for r in &results {
        let mut row = vec![
            r.index.to_string(),
            r.iterations.to_string(),
            r.residual_norm.to_string(),
            r.max_mag_error.to_string(),
            r.max_ang_error.to_string(),
            r.mean_mag_error.to_string(),
            r.mean_ang_error.to_string(),
        ];
        row.extend(r.v_mag.iter().chain(&r.v_ang).map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(out.join("wls_stats.csv"))?;
    for row in summary_rows(&summary) {
        w.serialize(row)?;
    }
    w.flush()?;

    let seeds = BTreeMap::from([("master".to_string(), cfg.seed)]);
    let outputs = vec!["wls_estimates.csv".to_string(), "wls_stats.csv".to_string()];
    Manifest::new("wls", cfg, seeds, outputs).write(&out)?;

    println!("{:<16} {:>12}", "statistic", "value");
    for row in summary_rows(&summary) {
        println!("{:<16} {:>12.4e}", row.statistic, row.value);
    }
    Ok(())
}

#[derive(Deserialize)]
struct StoredDataset {
    scenario: Scenario,
}

#[derive(Deserialize)]
struct StoredReport {
    dataset: StoredDataset,
    regimes: Vec<RegimeReport>,
}

pub fn report(run: &Path, out: Option<&Path>) -> Result<(), Failure> {
    let path = run.join("report.json");
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let stored: StoredReport = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let mut regimes = stored.regimes;
    trainer::normalize_against_baseline(&mut regimes)?;
    let table = table_text(stored.dataset.scenario, &regimes);
    match out {
        Some(p) => fs::write(p, table).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{table}"),
    }
    Ok(())
}

