//! Power injections, current injections and the Newton-Raphson power flow.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{AdmittanceMatrix, BusKind, GridModel};

#[derive(Debug, Error)]
pub enum PowerFlowError {
    #[error("dimension mismatch: expected {expected} buses, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("power flow did not converge after {iterations} iterations (max mismatch {mismatch:.3e} pu)")]
    NotConverged { iterations: usize, mismatch: f64 },
    #[error("singular power flow Jacobian at iteration {0}")]
    SingularJacobian(usize),
    #[error("non-finite value in specified injections")]
    NonFiniteInput,
}

/// Bus voltages in polar form; angles in radians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolarVoltage {
    pub v_mag: Vec<f64>,
    pub v_ang: Vec<f64>,
}

impl PolarVoltage {
    pub fn flat(n: usize) -> Self {
        PolarVoltage {
            v_mag: vec![1.0; n],
            v_ang: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.v_mag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v_mag.is_empty()
    }

    pub fn phasors(&self) -> Vec<Complex64> {
        self.v_mag
            .iter()
            .zip(&self.v_ang)
            .map(|(&m, &a)| Complex64::from_polar(m, a))
            .collect()
    }
}

/// Net active/reactive injections (generation minus load) per bus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionSet {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl InjectionSet {
    pub fn zeros(n: usize) -> Self {
        InjectionSet {
            p: vec![0.0; n],
            q: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }
}

/// Rectangular injection currents per bus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurrentSet {
    pub i_re: Vec<f64>,
    pub i_im: Vec<f64>,
}

fn check_dim(v: &PolarVoltage, y: &AdmittanceMatrix) -> Result<(), PowerFlowError> {
    if v.v_mag.len() != y.n() || v.v_ang.len() != y.n() {
        return Err(PowerFlowError::Dimension {
            expected: y.n(),
            got: v.v_mag.len().min(v.v_ang.len()),
        });
    }
    Ok(())
}

/// Active and reactive injections from polar voltages:
/// `P_i = V_i Σ_j V_j (G_ij cos θ_ij + B_ij sin θ_ij)`,
/// `Q_i = V_i Σ_j V_j (G_ij sin θ_ij − B_ij cos θ_ij)`.
pub fn injections(v: &PolarVoltage, y: &AdmittanceMatrix) -> Result<InjectionSet, PowerFlowError> {
    check_dim(v, y)?;
    let n = y.n();
    let mut out = InjectionSet::zeros(n);
    for i in 0..n {
        let (mut p, mut q) = (0.0, 0.0);
        for j in 0..n {
            let yij = y.get(i, j);
            if yij.re == 0.0 && yij.im == 0.0 {
                continue;
            }
            let (s, c) = (v.v_ang[i] - v.v_ang[j]).sin_cos();
            p += v.v_mag[j] * (yij.re * c + yij.im * s);
            q += v.v_mag[j] * (yij.re * s - yij.im * c);
        }
        out.p[i] = v.v_mag[i] * p;
        out.q[i] = v.v_mag[i] * q;
    }
    Ok(out)
}

/// Injection currents `I = Y · V`.
pub fn current_injections(v: &PolarVoltage, y: &AdmittanceMatrix) -> Result<CurrentSet, PowerFlowError> {
    check_dim(v, y)?;
    let i = y.mul_vec(&v.phasors());
    Ok(CurrentSet {
        i_re: i.iter().map(|c| c.re).collect(),
        i_im: i.iter().map(|c| c.im).collect(),
    })
}

/// Partial derivatives of the injections with respect to bus angles and
/// magnitudes, each an N×N matrix indexed `[injection bus, state bus]`.
pub struct InjectionJacobian {
    pub dp_dang: DMatrix<f64>,
    pub dp_dmag: DMatrix<f64>,
    pub dq_dang: DMatrix<f64>,
    pub dq_dmag: DMatrix<f64>,
}

pub fn injection_jacobian(
    v: &PolarVoltage,
    y: &AdmittanceMatrix,
    inj: &InjectionSet,
) -> InjectionJacobian {
    let n = y.n();
    let mut jac = InjectionJacobian {
        dp_dang: DMatrix::zeros(n, n),
        dp_dmag: DMatrix::zeros(n, n),
        dq_dang: DMatrix::zeros(n, n),
        dq_dmag: DMatrix::zeros(n, n),
    };
    let (vm, va) = (&v.v_mag, &v.v_ang);
    for i in 0..n {
        for k in 0..n {
            let (g, b) = (y.g(i, k), y.b(i, k));
            if i == k {
                jac.dp_dang[(i, i)] = -inj.q[i] - b * vm[i] * vm[i];
                jac.dp_dmag[(i, i)] = inj.p[i] / vm[i] + g * vm[i];
                jac.dq_dang[(i, i)] = inj.p[i] - g * vm[i] * vm[i];
                jac.dq_dmag[(i, i)] = inj.q[i] / vm[i] - b * vm[i];
            } else if g != 0.0 || b != 0.0 {
                let (s, c) = (va[i] - va[k]).sin_cos();
                jac.dp_dang[(i, k)] = vm[i] * vm[k] * (g * s - b * c);
                jac.dp_dmag[(i, k)] = vm[i] * (g * c + b * s);
                jac.dq_dang[(i, k)] = -vm[i] * vm[k] * (g * c + b * s);
                jac.dq_dmag[(i, k)] = vm[i] * (g * s - b * c);
            }
        }
    }
    jac
}

/// Net scheduled injections of the grid's base operating point.
pub fn scheduled_injections(grid: &GridModel) -> InjectionSet {
    let buses = grid.buses();
    InjectionSet {
        p: buses
            .iter()
            .map(|b| match b.kind {
                BusKind::PQ => -b.base_load_p,
                _ => b.gen_p - b.base_load_p,
            })
            .collect(),
        q: buses.iter().map(|b| -b.base_load_q).collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StartPoint {
    /// Unit magnitudes at PQ buses, setpoints at PV/slack buses, zero angles.
    Flat,
    /// Start from a previous solution (PV/slack magnitudes are still forced to setpoints).
    Warm(PolarVoltage),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NrOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub start: StartPoint,
}

impl Default for NrOptions {
    fn default() -> Self {
        NrOptions {
            tol: 1e-8,
            max_iter: 50,
            start: StartPoint::Flat,
        }
    }
}

/// Converged power flow state.
#[derive(Debug, Clone)]
pub struct NrSolution {
    pub voltage: PolarVoltage,
    pub iterations: usize,
    pub max_mismatch: f64,
}

/// Polar Newton-Raphson power flow.
///
/// `specified` holds the net scheduled injections. Its slack entries and the
/// reactive entries of PV buses are not enforced; those come out of the
/// solution. PV and slack magnitudes are held at the grid's setpoints.
pub fn solve_newton_raphson(
    grid: &GridModel,
    specified: &InjectionSet,
    options: &NrOptions,
) -> Result<NrSolution, PowerFlowError> {
    let n = grid.n_buses();
    if specified.p.len() != n || specified.q.len() != n {
        return Err(PowerFlowError::Dimension {
            expected: n,
            got: specified.p.len().min(specified.q.len()),
        });
    }
    if specified.p.iter().chain(&specified.q).any(|x| !x.is_finite()) {
        return Err(PowerFlowError::NonFiniteInput);
    }
    let y = grid.y_bus();
    let buses = grid.buses();

    let ang_idx: Vec<usize> = (0..n).filter(|&i| buses[i].kind != BusKind::Slack).collect();
    let mag_idx: Vec<usize> = (0..n).filter(|&i| buses[i].kind == BusKind::PQ).collect();
    let (na, nm) = (ang_idx.len(), mag_idx.len());

    let mut v = match &options.start {
        StartPoint::Flat => PolarVoltage::flat(n),
        StartPoint::Warm(w) => {
            if w.len() != n {
                return Err(PowerFlowError::Dimension {
                    expected: n,
                    got: w.len(),
                });
            }
            w.clone()
        }
    };
    for bus in buses {
        if bus.kind != BusKind::PQ {
            v.v_mag[bus.id] = bus.v_setpoint;
        }
    }
    v.v_ang[grid.slack()] = 0.0;

    let mut iteration = 0;
    loop {
        let calc = injections(&v, y)?;
        let mut mismatch = DVector::<f64>::zeros(na + nm);
        for (r, &i) in ang_idx.iter().enumerate() {
            mismatch[r] = specified.p[i] - calc.p[i];
        }
        for (r, &i) in mag_idx.iter().enumerate() {
            mismatch[na + r] = specified.q[i] - calc.q[i];
        }
        let worst = mismatch.amax();
        if !worst.is_finite() {
            return Err(PowerFlowError::NotConverged {
                iterations: iteration,
                mismatch: worst,
            });
        }
        if worst < options.tol {
            return Ok(NrSolution {
                voltage: v,
                iterations: iteration,
                max_mismatch: worst,
            });
        }
        if iteration == options.max_iter {
            return Err(PowerFlowError::NotConverged {
                iterations: iteration,
                mismatch: worst,
            });
        }
        iteration += 1;

        let full = injection_jacobian(&v, y, &calc);
        let mut jac = DMatrix::<f64>::zeros(na + nm, na + nm);
        for (r, &i) in ang_idx.iter().enumerate() {
            for (c, &k) in ang_idx.iter().enumerate() {
                jac[(r, c)] = full.dp_dang[(i, k)];
            }
            for (c, &k) in mag_idx.iter().enumerate() {
                jac[(r, na + c)] = full.dp_dmag[(i, k)];
            }
        }
        for (r, &i) in mag_idx.iter().enumerate() {
            for (c, &k) in ang_idx.iter().enumerate() {
                jac[(na + r, c)] = full.dq_dang[(i, k)];
            }
            for (c, &k) in mag_idx.iter().enumerate() {
                jac[(na + r, na + c)] = full.dq_dmag[(i, k)];
            }
        }
        let step = jac
            .lu()
            .solve(&mismatch)
            .ok_or(PowerFlowError::SingularJacobian(iteration))?;
        for (r, &i) in ang_idx.iter().enumerate() {
            v.v_ang[i] += step[r];
        }
        for (r, &i) in mag_idx.iter().enumerate() {
            v.v_mag[i] += step[na + r];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_admittance, Branch, Bus};

    fn two_bus_y() -> AdmittanceMatrix {
        build_admittance(
            &[Bus::slack(0, 1.0), Bus::pq(1, 0.0, 0.0)],
            &[Branch::line(0, 1, 0.0, 0.1, 0.0)],
        )
        .unwrap()
    }

    #[test]
    fn two_bus_injections_by_hand() {
        let y = two_bus_y();
        let v = PolarVoltage {
            v_mag: vec![1.0, 1.0],
            v_ang: vec![0.0, -0.1],
        };
        let s = injections(&v, &y).unwrap();
        assert!((s.p[0] - 10.0 * 0.1f64.sin()).abs() < 1e-12);
        assert!((s.q[0] - (10.0 - 10.0 * 0.1f64.cos())).abs() < 1e-12);
        assert!((s.p[0] - 0.998_334_166_468_281_5).abs() < 1e-12);

        let i = current_injections(&v, &y).unwrap();
        assert!((i.i_re[0] - 10.0 * 0.1f64.sin()).abs() < 1e-12);
        assert!((i.i_im[0] - (-10.0 + 10.0 * 0.1f64.cos())).abs() < 1e-12);
    }

    #[test]
    fn flat_profile_injections_are_row_sums() {
        let grid = crate::grid::load_case14();
        let y = grid.y_bus();
        let s = injections(&PolarVoltage::flat(14), y).unwrap();
        for i in 0..14 {
            let row: Complex64 = y.row(i).iter().sum();
            assert!((s.p[i] - row.re).abs() < 1e-12);
            assert!((s.q[i] + row.im).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let y = two_bus_y();
        let v = PolarVoltage::flat(3);
        assert!(matches!(
            injections(&v, &y),
            Err(PowerFlowError::Dimension { expected: 2, got: 3 })
        ));
        assert!(current_injections(&v, &y).is_err());
    }

    #[test]
    fn zero_load_solution_is_flat() {
        let grid = GridModel::new(
            "t",
            vec![Bus::slack(0, 1.0), Bus::pq(1, 0.0, 0.0), Bus::pv(2, 0.0, 1.0)],
            vec![
                Branch::line(0, 1, 0.01, 0.1, 0.0),
                Branch::line(1, 2, 0.02, 0.1, 0.0),
            ],
            100.0,
        )
        .unwrap();
        let sol = solve_newton_raphson(&grid, &InjectionSet::zeros(3), &NrOptions::default()).unwrap();
        assert_eq!(sol.iterations, 0);
        assert_eq!(sol.voltage, PolarVoltage::flat(3));
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let grid = crate::grid::load_case14();
        let y = grid.y_bus();
        let v = PolarVoltage {
            v_mag: (0..14).map(|i| 1.0 + 0.01 * (i as f64).sin()).collect(),
            v_ang: (0..14).map(|i| -0.02 * i as f64).collect(),
        };
        let inj = injections(&v, y).unwrap();
        let jac = injection_jacobian(&v, y, &inj);
        let h = 1e-6;
        for k in 0..14 {
            let mut up = v.clone();
            let mut dn = v.clone();
            up.v_ang[k] += h;
            dn.v_ang[k] -= h;
            let (su, sd) = (injections(&up, y).unwrap(), injections(&dn, y).unwrap());
            let mut mu = v.clone();
            let mut md = v.clone();
            mu.v_mag[k] += h;
            md.v_mag[k] -= h;
            let (tu, td) = (injections(&mu, y).unwrap(), injections(&md, y).unwrap());
            for i in 0..14 {
                assert!((jac.dp_dang[(i, k)] - (su.p[i] - sd.p[i]) / (2.0 * h)).abs() < 1e-6);
                assert!((jac.dq_dang[(i, k)] - (su.q[i] - sd.q[i]) / (2.0 * h)).abs() < 1e-6);
                assert!((jac.dp_dmag[(i, k)] - (tu.p[i] - td.p[i]) / (2.0 * h)).abs() < 1e-6);
                assert!((jac.dq_dmag[(i, k)] - (tu.q[i] - td.q[i]) / (2.0 * h)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn non_convergence_carries_mismatch() {
        let grid = crate::grid::load_case14();
        let mut spec = InjectionSet::zeros(14);
        spec.p[13] = -50.0;
        let err = solve_newton_raphson(
            &grid,
            &spec,
            &NrOptions {
                max_iter: 3,
                ..NrOptions::default()
            },
        )
        .unwrap_err();
        match err {
            PowerFlowError::NotConverged { iterations, mismatch } => {
                assert_eq!(iterations, 3);
                assert!(mismatch > 1e-8);
            }
            other => panic!("unexpected {other}"),
        }
    }
}
