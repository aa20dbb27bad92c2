//! Gauss-Newton weighted least squares state estimator over bus injection
//! measurements. Used as a non-learning reference for the generated data.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, NoiseSpec, Sample};
use crate::grid::GridModel;
use crate::power_flow::{injection_jacobian, injections, PolarVoltage, PowerFlowError};

#[derive(Debug, Error)]
pub enum WlsError {
    #[error("measurement vector has {got} entries, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("measurement weights must be positive and finite")]
    BadWeight,
    #[error("gain matrix is singular at iteration {0}")]
    SingularGain(usize),
    #[error("WLS did not converge after {iterations} iterations (residual norm {residual:.3e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error(transparent)]
    PowerFlow(#[from] PowerFlowError),
}

/// Stacked `(P_1..P_N, Q_1..Q_N)` with inverse-variance weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSet {
    pub values: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Floor on |z| when turning a relative noise level into a standard deviation.
const SIGMA_FLOOR: f64 = 0.01;

const MAX_HALVINGS: usize = 20;

impl MeasurementSet {
    /// Measured injections of a sample. Weights are `1/σ²` with
    /// `σ = rel · max(|z|, 0.01)`; without noise information all weights are 1.
    pub fn from_sample(sample: &Sample, noise: Option<&NoiseSpec>) -> Self {
        let values: Vec<f64> = sample.p_meas.iter().chain(&sample.q_meas).copied().collect();
        let n = sample.p_meas.len();
        let weights = values
            .iter()
            .enumerate()
            .map(|(k, z)| {
                let rel = match noise {
                    Some(s) if k < n => s.p_sigma_rel,
                    Some(s) => s.q_sigma_rel,
                    None => 0.0,
                };
                if rel > 0.0 {
                    let sigma = rel * z.abs().max(SIGMA_FLOOR);
                    1.0 / (sigma * sigma)
                } else {
                    1.0
                }
            })
            .collect();
        MeasurementSet { values, weights }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WlsOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for WlsOptions {
    fn default() -> Self {
        WlsOptions {
            tol: 1e-8,
            max_iter: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WlsEstimate {
    pub voltage: PolarVoltage,
    pub iterations: usize,
    /// Weighted residual norm `sqrt(rᵀ W r)` at the estimate.
    pub residual_norm: f64,
}

fn weighted_residual(meas: &MeasurementSet, h: &[f64]) -> (DVector<f64>, f64) {
    let r = DVector::from_iterator(h.len(), meas.values.iter().zip(h).map(|(z, hx)| z - hx));
    let norm = r.iter().zip(&meas.weights).map(|(ri, w)| w * ri * ri).sum::<f64>().sqrt();
    (r, norm)
}

/// Gauss-Newton WLS from a flat start. The slack angle is fixed at 0; the
/// state is every other angle plus every magnitude.
pub fn estimate_wls(grid: &GridModel, meas: &MeasurementSet, options: &WlsOptions) -> Result<WlsEstimate, WlsError> {
    let n = grid.n_buses();
    if meas.values.len() != 2 * n || meas.weights.len() != 2 * n {
        return Err(WlsError::Dimension {
            expected: 2 * n,
            got: meas.values.len(),
        });
    }
    if meas.weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(WlsError::BadWeight);
    }
    let y = grid.y_bus();
    let slack = grid.slack();
    let ang_idx: Vec<usize> = (0..n).filter(|&i| i != slack).collect();
    let ns = ang_idx.len() + n;

    let mut v = PolarVoltage::flat(n);
    for iteration in 1..=options.max_iter {
        let calc = injections(&v, y)?;
        let h: Vec<f64> = calc.p.iter().chain(&calc.q).copied().collect();
        let (r, residual_norm) = weighted_residual(meas, &h);
        if r.amax() < 1e-3 * options.tol {
            // Exact fit: the step is zero whatever the gain's rank.
            return Ok(WlsEstimate {
                voltage: v,
                iterations: iteration - 1,
                residual_norm,
            });
        }

        let jac = injection_jacobian(&v, y, &calc);
        let mut hm = DMatrix::<f64>::zeros(2 * n, ns);
        for i in 0..n {
            for (c, &k) in ang_idx.iter().enumerate() {
                hm[(i, c)] = jac.dp_dang[(i, k)];
                hm[(n + i, c)] = jac.dq_dang[(i, k)];
            }
            for k in 0..n {
                hm[(i, ang_idx.len() + k)] = jac.dp_dmag[(i, k)];
                hm[(n + i, ang_idx.len() + k)] = jac.dq_dmag[(i, k)];
            }
        }
        let w = DVector::from_column_slice(&meas.weights);
        let mut wh = hm.clone();
        for (mut row, wi) in wh.row_iter_mut().zip(w.iter()) {
            row *= *wi;
        }
        let gain = hm.transpose() * &wh;
        let rhs = wh.transpose() * &r;
        let step = gain
            .cholesky()
            .ok_or(WlsError::SingularGain(iteration))?
            .solve(&rhs);

        // Backtrack on the weighted objective so that large residuals cannot
        // make the undamped step oscillate.
        let mut scale = 1.0;
        let mut trial = v.clone();
        for _ in 0..MAX_HALVINGS {
            trial = v.clone();
            for (c, &k) in ang_idx.iter().enumerate() {
                trial.v_ang[k] += scale * step[c];
            }
            for k in 0..n {
                trial.v_mag[k] += scale * step[ang_idx.len() + k];
            }
            let calc = injections(&trial, y)?;
            let h: Vec<f64> = calc.p.iter().chain(&calc.q).copied().collect();
            if weighted_residual(meas, &h).1 <= residual_norm {
                break;
            }
            scale *= 0.5;
        }
        v = trial;
        let max_step = scale * step.amax();
        if !max_step.is_finite() {
            break;
        }
        if max_step < options.tol {
            let calc = injections(&v, y)?;
            let h: Vec<f64> = calc.p.iter().chain(&calc.q).copied().collect();
            let (_, residual_norm) = weighted_residual(meas, &h);
            return Ok(WlsEstimate {
                voltage: v,
                iterations: iteration,
                residual_norm,
            });
        }
    }
    let calc = injections(&v, y)?;
    let h: Vec<f64> = calc.p.iter().chain(&calc.q).copied().collect();
    Err(WlsError::NotConverged {
        iterations: options.max_iter,
        residual: weighted_residual(meas, &h).1,
    })
}

/// Per-sample estimate and its error against the stored truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WlsSampleResult {
    pub index: usize,
    pub iterations: usize,
    pub residual_norm: f64,
    pub max_mag_error: f64,
    pub max_ang_error: f64,
    pub mean_mag_error: f64,
    pub mean_ang_error: f64,
    pub v_mag: Vec<f64>,
    pub v_ang: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WlsSummary {
    pub samples: usize,
    pub mean_mag_error: f64,
    pub mean_ang_error: f64,
    pub max_mag_error: f64,
    pub max_ang_error: f64,
    pub mean_iterations: f64,
}

pub fn estimate_sample(
    grid: &GridModel,
    index: usize,
    sample: &Sample,
    noise: Option<&NoiseSpec>,
    options: &WlsOptions,
) -> Result<WlsSampleResult, WlsError> {
    let est = estimate_wls(grid, &MeasurementSet::from_sample(sample, noise), options)?;
    let n = sample.v_true.len() as f64;
    let dm: Vec<f64> = est
        .voltage
        .v_mag
        .iter()
        .zip(&sample.v_true.v_mag)
        .map(|(a, b)| (a - b).abs())
        .collect();
    let da: Vec<f64> = est
        .voltage
        .v_ang
        .iter()
        .zip(&sample.v_true.v_ang)
        .map(|(a, b)| (a - b).abs())
        .collect();
    Ok(WlsSampleResult {
        index,
        iterations: est.iterations,
        residual_norm: est.residual_norm,
        max_mag_error: dm.iter().copied().fold(0.0, f64::max),
        max_ang_error: da.iter().copied().fold(0.0, f64::max),
        mean_mag_error: dm.iter().sum::<f64>() / n,
        mean_ang_error: da.iter().sum::<f64>() / n,
        v_mag: est.voltage.v_mag,
        v_ang: est.voltage.v_ang,
    })
}

/// Estimates every sample of a dataset; the first failure is returned with its index.
pub fn estimate_dataset(
    grid: &GridModel,
    ds: &Dataset,
    options: &WlsOptions,
) -> Result<(Vec<WlsSampleResult>, WlsSummary), (usize, WlsError)> {
    let results = ds
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| estimate_sample(grid, i, s, ds.noise.as_ref(), options).map_err(|e| (i, e)))
        .collect::<Result<Vec<_>, _>>()?;
    let count = results.len().max(1) as f64;
    let summary = WlsSummary {
        samples: results.len(),
        mean_mag_error: results.iter().map(|r| r.mean_mag_error).sum::<f64>() / count,
        mean_ang_error: results.iter().map(|r| r.mean_ang_error).sum::<f64>() / count,
        max_mag_error: results.iter().map(|r| r.max_mag_error).fold(0.0, f64::max),
        max_ang_error: results.iter().map(|r| r.max_ang_error).fold(0.0, f64::max),
        mean_iterations: results.iter().map(|r| r.iterations as f64).sum::<f64>() / count,
    };
    Ok((results, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Branch, Bus};

    #[test]
    fn flat_profile_is_a_fixed_point() {
        let grid = GridModel::new(
            "t",
            vec![Bus::slack(0, 1.0), Bus::pq(1, 0.0, 0.0), Bus::pq(2, 0.0, 0.0)],
            vec![Branch::line(0, 1, 0.01, 0.1, 0.0), Branch::line(1, 2, 0.02, 0.2, 0.0)],
            100.0,
        )
        .unwrap();
        let meas = MeasurementSet {
            values: vec![0.0; 6],
            weights: vec![1.0; 6],
        };
        let est = estimate_wls(&grid, &meas, &WlsOptions::default()).unwrap();
        assert_eq!(est.voltage, PolarVoltage::flat(3));
        assert_eq!(est.iterations, 0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let grid = crate::grid::load_case14();
        let short = MeasurementSet {
            values: vec![0.0; 3],
            weights: vec![1.0; 3],
        };
        assert!(matches!(
            estimate_wls(&grid, &short, &WlsOptions::default()),
            Err(WlsError::Dimension { .. })
        ));
        let bad = MeasurementSet {
            values: vec![0.0; 28],
            weights: vec![0.0; 28],
        };
        assert!(matches!(
            estimate_wls(&grid, &bad, &WlsOptions::default()),
            Err(WlsError::BadWeight)
        ));
    }
}
