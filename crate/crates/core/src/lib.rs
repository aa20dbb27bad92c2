//! Physics-informed neural network state estimation for power grids.
//!
//! The crate generates ground-truth operating points with Newton-Raphson
//! power flow, trains a small tanh network that maps bus power injections to
//! bus voltages under a loss that mixes a state-error term with an
//! injection-current residual `I = Y·V`, and compares λ weighting regimes by
//! k-fold cross-validation. A weighted-least-squares estimator serves as a
//! classical reference.

pub mod dataset;
pub mod grid;
pub mod loss;
pub mod nn;
pub mod power_flow;
pub mod seed;
pub mod trainer;
pub mod wls;

pub use dataset::{Dataset, NoiseSpec, PreprocessStats, Sample, Scenario};
pub use grid::{load_case14, AdmittanceMatrix, Branch, Bus, BusKind, GridModel};
pub use loss::{LambdaSchedule, LossParts, Regime};
pub use nn::{Checkpoint, Mlp};
pub use power_flow::{CurrentSet, InjectionSet, PolarVoltage};
pub use trainer::{ExperimentConfig, FoldReport, RegimeReport};
