//! Composite physics-informed loss and the λ weighting regimes.
//!
//! The loss is `λ1·u_norm + λ2·f_norm`, where `u` is the mean squared state
//! error, `f` the mean absolute injection-current error, and each term is
//! divided by its own batch maximum so both live in `[0, 1]`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::power_flow::CurrentSet;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("empty batch")]
    Empty,
    #[error("shape mismatch: {0} vs {1}")]
    Shape(usize, usize),
}

/// Every term of one loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub u_raw: f64,
    pub f_raw: f64,
    pub u_norm: f64,
    pub f_norm: f64,
    pub total: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl LossParts {
    pub fn new(u_raw: f64, u_norm: f64, f_raw: f64, f_norm: f64, lambda1: f64, lambda2: f64) -> Self {
        LossParts {
            u_raw,
            f_raw,
            u_norm,
            f_norm,
            total: combine(u_norm, f_norm, lambda1, lambda2),
            lambda1,
            lambda2,
        }
    }
}

/// Mean, maximum and mean/maximum of non-negative error terms.
/// An all-zero batch normalizes to 0.
pub(crate) fn mean_max_ratio(terms: impl Iterator<Item = f64>) -> (f64, f64, f64) {
    let (mut sum, mut max, mut count) = (0.0, 0.0f64, 0usize);
    for t in terms {
        sum += t;
        max = max.max(t);
        count += 1;
    }
    let mean = sum / count as f64;
    let ratio = if max > 0.0 { mean / max } else { 0.0 };
    (mean, max, ratio)
}

/// Data term over flattened batches of target-space vectors.
/// Returns `(u_raw, u_norm)`.
pub fn data_loss(pred: &[f64], truth: &[f64]) -> Result<(f64, f64), LossError> {
    if pred.len() != truth.len() {
        return Err(LossError::Shape(pred.len(), truth.len()));
    }
    if pred.is_empty() {
        return Err(LossError::Empty);
    }
    let (mean, _, ratio) = mean_max_ratio(pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)));
    Ok((mean, ratio))
}

/// Physics term: complex modulus of the current error per bus, averaged over
/// the batch and all buses. Returns `(f_raw, f_norm)`.
pub fn physics_loss(pred: &[CurrentSet], truth: &[CurrentSet]) -> Result<(f64, f64), LossError> {
    if pred.len() != truth.len() {
        return Err(LossError::Shape(pred.len(), truth.len()));
    }
    if pred.is_empty() {
        return Err(LossError::Empty);
    }
    let mut moduli = Vec::new();
    for (p, t) in pred.iter().zip(truth) {
        if p.i_re.len() != t.i_re.len() || p.i_im.len() != t.i_im.len() || p.i_re.len() != p.i_im.len() {
            return Err(LossError::Shape(p.i_re.len(), t.i_re.len()));
        }
        for k in 0..p.i_re.len() {
            moduli.push((p.i_re[k] - t.i_re[k]).hypot(p.i_im[k] - t.i_im[k]));
        }
    }
    if moduli.is_empty() {
        return Err(LossError::Empty);
    }
    let (mean, _, ratio) = mean_max_ratio(moduli.into_iter());
    Ok((mean, ratio))
}

#[inline]
pub fn combine(u_norm: f64, f_norm: f64, lambda1: f64, lambda2: f64) -> f64 {
    lambda1 * u_norm + lambda2 * f_norm
}

/// Training regime: the benchmark network or one of the "% increment" schedules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    #[serde(rename = "nn")]
    PlainNN,
    Inc10,
    Inc20,
    Inc25,
    Inc33,
    Inc50,
}

impl Regime {
    pub const ALL: [Regime; 6] = [
        Regime::PlainNN,
        Regime::Inc10,
        Regime::Inc20,
        Regime::Inc25,
        Regime::Inc33,
        Regime::Inc50,
    ];

    /// Weight moved from the data term to the physics term at each step.
    pub fn increment(self) -> f64 {
        match self {
            Regime::PlainNN => 0.0,
            Regime::Inc10 => 0.10,
            Regime::Inc20 => 0.20,
            Regime::Inc25 => 0.25,
            Regime::Inc33 => 0.33,
            Regime::Inc50 => 0.50,
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            Regime::PlainNN => "nn",
            Regime::Inc10 => "inc10",
            Regime::Inc20 => "inc20",
            Regime::Inc25 => "inc25",
            Regime::Inc33 => "inc33",
            Regime::Inc50 => "inc50",
        }
    }

    /// Row label used in result tables.
    pub fn label(self) -> &'static str {
        match self {
            Regime::PlainNN => "NN",
            Regime::Inc10 => "10% increment",
            Regime::Inc20 => "20% increment",
            Regime::Inc25 => "25% increment",
            Regime::Inc33 => "33% increment",
            Regime::Inc50 => "50% increment",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Regime {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "nn" | "plain" | "plainnn" => Ok(Regime::PlainNN),
            "inc10" => Ok(Regime::Inc10),
            "inc20" => Ok(Regime::Inc20),
            "inc25" => Ok(Regime::Inc25),
            "inc33" => Ok(Regime::Inc33),
            "inc50" => Ok(Regime::Inc50),
            other => Err(format!(
                "unknown regime '{other}' (expected nn, inc10, inc20, inc25, inc33, inc50)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaSchedule {
    pub regime: Regime,
    /// Epochs between weight adjustments.
    pub period: usize,
    pub lambda1_0: f64,
    pub lambda2_0: f64,
}

impl LambdaSchedule {
    pub fn new(regime: Regime, period: usize) -> Self {
        LambdaSchedule {
            regime,
            period: period.max(1),
            lambda1_0: 1.0,
            lambda2_0: 0.0,
        }
    }
}

/// `(λ1, λ2)` in effect during `epoch` (0-based). Steps are absolute: after
/// `k` completed periods, `λ1 = 1 − k·c` and `λ2 = k·c`, clamped to `[0, 1]`.
pub fn schedule_lambdas(sched: &LambdaSchedule, epoch: usize) -> (f64, f64) {
    if sched.regime == Regime::PlainNN {
        return (1.0, 0.0);
    }
    let steps = (epoch / sched.period.max(1)) as f64;
    let shift = steps * sched.regime.increment();
    (
        (sched.lambda1_0 - shift).clamp(0.0, 1.0),
        (sched.lambda2_0 + shift).clamp(0.0, 1.0),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cs(re: &[f64], im: &[f64]) -> CurrentSet {
        CurrentSet {
            i_re: re.to_vec(),
            i_im: im.to_vec(),
        }
    }

    #[test]
    fn data_loss_examples() {
        assert_eq!(data_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), (0.0, 0.0));
        assert_eq!(data_loss(&[2.0], &[1.0]).unwrap(), (1.0, 1.0));
        let (raw, norm) = data_loss(&[1.0, 3.0], &[0.0, 0.0]).unwrap();
        assert_eq!(raw, 5.0);
        assert!((norm - 5.0 / 9.0).abs() < 1e-15);
        assert_eq!(data_loss(&[], &[]), Err(LossError::Empty));
        assert_eq!(data_loss(&[1.0], &[]), Err(LossError::Shape(1, 0)));
    }

    #[test]
    fn physics_loss_examples() {
        let t = cs(&[0.0], &[0.0]);
        assert_eq!(physics_loss(&[t.clone()], &[t.clone()]).unwrap(), (0.0, 0.0));
        assert_eq!(physics_loss(&[cs(&[3.0], &[4.0])], &[t.clone()]).unwrap(), (5.0, 1.0));
        let (raw, norm) = physics_loss(&[cs(&[5.0], &[0.0]), cs(&[0.0], &[10.0])], &[t.clone(), t]).unwrap();
        assert_eq!(raw, 7.5);
        assert_eq!(norm, 0.75);
    }

    #[test]
    fn combine_examples() {
        assert_eq!(combine(0.5, 0.5, 1.0, 0.0), 0.5);
        assert!((combine(0.2, 0.8, 0.5, 0.5) - 0.5).abs() < 1e-15);
        assert_eq!(combine(1.0, 1.0, 0.0, 1.0), 1.0);
    }

    #[test]
    fn schedule_examples() {
        let s10 = LambdaSchedule::new(Regime::Inc10, 100);
        assert_eq!(schedule_lambdas(&s10, 0), (1.0, 0.0));
        let (l1, l2) = schedule_lambdas(&s10, 550);
        assert!((l1 - 0.5).abs() < 1e-12 && (l2 - 0.5).abs() < 1e-12);
        let s50 = LambdaSchedule::new(Regime::Inc50, 100);
        assert_eq!(schedule_lambdas(&s50, 999), (0.0, 1.0));
        let nn = LambdaSchedule::new(Regime::PlainNN, 100);
        assert_eq!(schedule_lambdas(&nn, 999), (1.0, 0.0));
    }

    #[test]
    fn regime_names_roundtrip() {
        for r in Regime::ALL {
            assert_eq!(r.key().parse::<Regime>().unwrap(), r);
            let json = serde_json::to_string(&r).unwrap();
            assert_eq!(json, format!("\"{}\"", r.key()));
        }
        assert!("inc15".parse::<Regime>().is_err());
    }
}
