//! Cross-validated training over the λ regimes and the comparison tables.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{k_fold_split, preprocess, Dataset, DatasetError, Fold, Prepared};
use crate::grid::GridModel;
use crate::loss::{schedule_lambdas, LambdaSchedule, Regime};
use crate::nn::{self, AdamConfig, AdamState, Batch, Checkpoint, Mlp, NnError, Physics};
use crate::seed;

pub const VALIDATION_METRIC: &str =
    "100 x mean absolute error between predicted and true targets in the rescaled [-1, 1] target space (|V| and angle per bus), data term only";
pub const FOLD_STD_METRIC: &str = "population standard deviation (divide by k) of the per-fold best validation errors";
pub const BEST_EPOCH_METRIC: &str = "0-based epoch with the minimum validation error; earliest epoch on ties";
pub const NORMALIZED_METRIC: &str = "100 x (x - x_NN) / x_NN against the NN (lambda2 = 0) regime";

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("fold {fold}, epoch {epoch}, batch {batch}: {source}")]
    NonFinite {
        fold: usize,
        epoch: usize,
        batch: usize,
        source: NnError,
    },
    #[error("fold {fold}: {source}")]
    Fold { fold: usize, source: Box<TrainError> },
    #[error("regime {0}: {1}")]
    Regime(Regime, Box<TrainError>),
    #[error("the NN regime must be included as the normalization baseline")]
    MissingBaseline,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub k_folds: usize,
    pub hidden: usize,
    pub adam: AdamConfig,
    pub schedule_period: usize,
    pub regimes: Vec<Regime>,
    /// Master seed for fold assignment, initialization and batch order.
    pub seed: u64,
    /// Worker threads for fold-level parallelism; 1 runs sequentially.
    pub parallel_folds: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            epochs: 1000,
            batch_size: 16,
            k_folds: 5,
            hidden: nn::HIDDEN_UNITS,
            adam: AdamConfig::default(),
            schedule_period: 100,
            regimes: Regime::ALL.to_vec(),
            seed: 7,
            parallel_folds: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self, n_samples: usize) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if self.schedule_period == 0 {
            return bad("schedule period must be positive".into());
        }
        if self.epochs < self.schedule_period && self.regimes.iter().any(|r| *r != Regime::PlainNN) {
            log::warn!(
                "epochs ({}) < schedule period ({}): increment regimes never adjust lambda",
                self.epochs,
                self.schedule_period
            );
        }
        if self.k_folds < 2 || n_samples < self.k_folds {
            return bad(format!("{} samples cannot form {} folds", n_samples, self.k_folds));
        }
        let min_train = n_samples - n_samples.div_ceil(self.k_folds);
        if self.batch_size == 0 || self.batch_size > min_train {
            return bad(format!(
                "batch size {} must be in 1..={} (smallest training fold)",
                self.batch_size, min_train
            ));
        }
        if self.hidden == 0 {
            return bad("hidden layer must have at least one unit".into());
        }
        if self.regimes.is_empty() {
            return bad("no regimes selected".into());
        }
        Ok(())
    }

    pub fn fold_seed(&self) -> u64 {
        seed::derive(self.seed, "folds")
    }

    /// Initialization seed of fold `f`. Independent of the regime, so every
    /// regime starts a fold from the same weights and batch order.
    pub fn init_seed(&self, fold: usize) -> u64 {
        seed::derive_indexed(self.seed, "init", fold as u64)
    }

    pub fn shuffle_seed(&self, fold: usize) -> u64 {
        seed::derive_indexed(self.seed, "shuffle", fold as u64)
    }
}

/// One row of a training curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean over the epoch's batches.
    pub train_loss: f64,
    pub u_norm: f64,
    pub f_norm: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub val_error: f64,
}

#[derive(Debug, Clone)]
pub struct FoldReport {
    pub fold_index: usize,
    pub curve: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_error: f64,
    /// Model after the last epoch.
    pub final_model: Checkpoint,
}

impl FoldReport {
    pub fn val_error_per_epoch(&self) -> Vec<f64> {
        self.curve.iter().map(|r| r.val_error).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub best_epoch: usize,
    pub best_val_error: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegimeReport {
    pub regime: Regime,
    pub label: String,
    pub cv_error: f64,
    pub fold_std: f64,
    pub avg_best_epoch: f64,
    /// Percent change against the NN regime; `None` when the baseline value is 0.
    pub normalized_error: Option<f64>,
    pub normalized_std: Option<f64>,
    pub normalized_epoch: Option<f64>,
    pub folds: Vec<FoldSummary>,
    #[serde(skip)]
    pub fold_reports: Vec<FoldReport>,
}

/// `100 · mean |y − t|` over every validation target.
pub fn validation_error(net: &Mlp, data: &Prepared, indices: &[usize]) -> f64 {
    if indices.is_empty() {
        return 0.0;
    }
    let w = data.width();
    let mut x = Vec::with_capacity(indices.len() * w);
    for &i in indices {
        x.extend_from_slice(data.input(i));
    }
    let y = nn::forward(net, &x).expect("validation inputs match network width");
    let mut sum = 0.0;
    for (r, &i) in indices.iter().enumerate() {
        sum += y[r * w..(r + 1) * w]
            .iter()
            .zip(data.target(i))
            .map(|(p, t)| (p - t).abs())
            .sum::<f64>();
    }
    100.0 * sum / (indices.len() * w) as f64
}

struct BatchBuf {
    x: Vec<f64>,
    t: Vec<f64>,
    i_re: Vec<f64>,
    i_im: Vec<f64>,
}

impl BatchBuf {
    fn fill(&mut self, data: &Prepared, rows: &[usize]) {
        let n = data.n_buses;
        self.x.clear();
        self.t.clear();
        self.i_re.clear();
        self.i_im.clear();
        for &i in rows {
            self.x.extend_from_slice(data.input(i));
            self.t.extend_from_slice(data.target(i));
            self.i_re.extend_from_slice(&data.i_re[i * n..(i + 1) * n]);
            self.i_im.extend_from_slice(&data.i_im[i * n..(i + 1) * n]);
        }
    }

    fn view(&self) -> Batch<'_> {
        Batch {
            x: &self.x,
            t: &self.t,
            i_re: &self.i_re,
            i_im: &self.i_im,
        }
    }
}

/// Trains one fold from a fresh network. Pre-processing is fitted on the
/// fold's training rows only.
pub fn train_fold(
    cfg: &ExperimentConfig,
    grid: &GridModel,
    dataset: &Dataset,
    fold_index: usize,
    fold: &Fold,
    schedule: &LambdaSchedule,
) -> Result<FoldReport, TrainError> {
    train_fold_with(cfg, grid, dataset, fold_index, fold, schedule, true)
}

/// As [`train_fold`]; `physics = false` removes the physics branch from the
/// computation altogether (only meaningful when λ2 stays 0).
pub fn train_fold_with(
    cfg: &ExperimentConfig,
    grid: &GridModel,
    dataset: &Dataset,
    fold_index: usize,
    fold: &Fold,
    schedule: &LambdaSchedule,
    physics: bool,
) -> Result<FoldReport, TrainError> {
    let (data, stats) = preprocess(dataset, &fold.train)?;
    let ph = physics.then(|| Physics::new(grid.y_bus(), &stats));
    let mut net = nn::init(dataset.n_buses, cfg.hidden, cfg.init_seed(fold_index));
    let mut adam = AdamState::new(&net, cfg.adam);
    let mut rng = seed::rng(cfg.shuffle_seed(fold_index));
    let mut order = fold.train.clone();
    let mut buf = BatchBuf {
        x: Vec::new(),
        t: Vec::new(),
        i_re: Vec::new(),
        i_im: Vec::new(),
    };

    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lambdas = schedule_lambdas(schedule, epoch);
        order.shuffle(&mut rng);
        let (mut loss_sum, mut u_sum, mut f_sum, mut batches) = (0.0, 0.0, 0.0, 0usize);
        for (b, rows) in order.chunks(cfg.batch_size).enumerate() {
            buf.fill(&data, rows);
            let (parts, grads) =
                nn::backward(&net, &buf.view(), ph.as_ref(), lambdas).map_err(|source| TrainError::NonFinite {
                    fold: fold_index,
                    epoch,
                    batch: b,
                    source,
                })?;
            if !grads.is_finite() {
                return Err(TrainError::NonFinite {
                    fold: fold_index,
                    epoch,
                    batch: b,
                    source: NnError::NonFinite("gradient"),
                });
            }
            nn::adam_step(&mut net, &mut adam, &grads);
            loss_sum += parts.total;
            u_sum += parts.u_norm;
            f_sum += parts.f_norm;
            batches += 1;
        }
        let nb = batches as f64;
        curve.push(EpochRecord {
            epoch,
            train_loss: loss_sum / nb,
            u_norm: u_sum / nb,
            f_norm: f_sum / nb,
            lambda1: lambdas.0,
            lambda2: lambdas.1,
            val_error: validation_error(&net, &data, &fold.val),
        });
    }

    let (best_epoch, best_val_error) = curve
        .iter()
        .map(|r| (r.epoch, r.val_error))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best });
    Ok(FoldReport {
        fold_index,
        curve,
        best_epoch,
        best_val_error,
        final_model: Checkpoint {
            net,
            adam,
            preprocess: stats,
        },
    })
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn population_std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// `100 · (x − baseline) / baseline`.
pub fn percent_change(x: f64, baseline: f64) -> Option<f64> {
    (baseline != 0.0).then(|| 100.0 * (x - baseline) / baseline)
}

fn aggregate(regime: Regime, folds: Vec<FoldReport>) -> RegimeReport {
    let best: Vec<f64> = folds.iter().map(|f| f.best_val_error).collect();
    let epochs: Vec<f64> = folds.iter().map(|f| f.best_epoch as f64).collect();
    RegimeReport {
        regime,
        label: regime.label().to_string(),
        cv_error: mean(&best),
        fold_std: population_std(&best),
        avg_best_epoch: mean(&epochs),
        normalized_error: None,
        normalized_std: None,
        normalized_epoch: None,
        folds: folds
            .iter()
            .map(|f| FoldSummary {
                fold: f.fold_index,
                best_epoch: f.best_epoch,
                best_val_error: f.best_val_error,
            })
            .collect(),
        fold_reports: folds,
    }
}

fn run_jobs(
    cfg: &ExperimentConfig,
    grid: &GridModel,
    dataset: &Dataset,
    regimes: &[Regime],
) -> Result<Vec<RegimeReport>, TrainError> {
    cfg.validate(dataset.len())?;
    let folds = k_fold_split(dataset.len(), cfg.k_folds, cfg.fold_seed())?;
    let jobs: Vec<(Regime, usize)> = regimes
        .iter()
        .flat_map(|&r| (0..folds.len()).map(move |f| (r, f)))
        .collect();
    let run = |&(regime, f): &(Regime, usize)| {
        let sched = LambdaSchedule::new(regime, cfg.schedule_period);
        log::info!("training regime {regime} fold {}/{}", f + 1, folds.len());
        train_fold(cfg, grid, dataset, f, &folds[f], &sched).map_err(|e| {
            TrainError::Regime(
                regime,
                Box::new(TrainError::Fold {
                    fold: f,
                    source: Box::new(e),
                }),
            )
        })
    };
    let results: Vec<Result<FoldReport, TrainError>> = if cfg.parallel_folds > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.parallel_folds)
            .build()
            .map_err(|e| TrainError::Config(e.to_string()))?;
        pool.install(|| jobs.par_iter().map(run).collect())
    } else {
        jobs.iter().map(run).collect()
    };

    let mut reports = Vec::with_capacity(regimes.len());
    let mut it = results.into_iter();
    for &regime in regimes {
        let fold_reports = it.by_ref().take(folds.len()).collect::<Result<Vec<_>, _>>()?;
        reports.push(aggregate(regime, fold_reports));
    }
    Ok(reports)
}

/// k-fold cross-validation of a single regime (fresh initialization per fold).
pub fn cross_validate(
    cfg: &ExperimentConfig,
    grid: &GridModel,
    dataset: &Dataset,
    regime: Regime,
) -> Result<RegimeReport, TrainError> {
    Ok(run_jobs(cfg, grid, dataset, &[regime])?.remove(0))
}

/// Fills the normalized columns against the NN row.
pub fn normalize_against_baseline(reports: &mut [RegimeReport]) -> Result<(), TrainError> {
    let base = reports
        .iter()
        .find(|r| r.regime == Regime::PlainNN)
        .ok_or(TrainError::MissingBaseline)?;
    let (e, s, b) = (base.cv_error, base.fold_std, base.avg_best_epoch);
    for r in reports.iter_mut() {
        r.normalized_error = percent_change(r.cv_error, e);
        r.normalized_std = percent_change(r.fold_std, s);
        r.normalized_epoch = percent_change(r.avg_best_epoch, b);
    }
    Ok(())
}

/// Runs every configured regime and normalizes against the NN regime.
pub fn compare_regimes(
    cfg: &ExperimentConfig,
    grid: &GridModel,
    dataset: &Dataset,
) -> Result<Vec<RegimeReport>, TrainError> {
    if !cfg.regimes.contains(&Regime::PlainNN) {
        return Err(TrainError::MissingBaseline);
    }
    let mut reports = run_jobs(cfg, grid, dataset, &cfg.regimes)?;
    normalize_against_baseline(&mut reports)?;
    Ok(reports)
}

pub const TABLE_COLUMNS: [&str; 7] = [
    "Training Methods",
    "Cross-Validation Error",
    "Normalized",
    "Fold Standard Deviation",
    "Normalized",
    "Average Best Epoch",
    "Normalized",
];

fn pct(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".to_string(), |v| format!("{v:.2}%"))
}

/// Results table with the seven columns of the comparison layout.
pub fn render_table(title: &str, reports: &[RegimeReport]) -> String {
    let rows: Vec<[String; 7]> = reports
        .iter()
        .map(|r| {
            [
                r.label.clone(),
                format!("{:.2}%", r.cv_error),
                pct(r.normalized_error),
                format!("{:.2}%", r.fold_std),
                pct(r.normalized_std),
                format!("{:.1}", r.avg_best_epoch),
                pct(r.normalized_epoch),
            ]
        })
        .collect();
    let mut widths: Vec<usize> = TABLE_COLUMNS.iter().map(|c| c.len()).collect();
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: &[String]| {
        let inner: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(k, (c, w))| if k == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        format!("| {} |\n", inner.join(" | "))
    };
    let rule = format!(
        "+{}+\n",
        widths.iter().map(|w| "-".repeat(w + 2)).collect::<Vec<_>>().join("+")
    );
    let mut out = String::new();
    let _ = writeln!(out, "{title}");
    out.push_str(&rule);
    out.push_str(&line(&TABLE_COLUMNS.map(String::from)));
    out.push_str(&rule.replace('-', "="));
    for row in &rows {
        out.push_str(&line(row));
    }
    out.push_str(&rule);
    out
}
