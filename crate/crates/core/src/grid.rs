//! Network description and bus admittance matrix.
//!
//! Bus indices are 0-based inside the crate. Case files and reports use the
//! conventional 1-based labels.

use std::fmt;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

const CASE14: &str = include_str!("../data/case14.txt");

#[derive(Debug, Error)]
pub enum GridError {
    #[error("bus {0}: second slack bus (bus {1} is already the slack)")]
    DuplicateSlack(usize, usize),
    #[error("grid has no slack bus")]
    NoSlack,
    #[error("grid has fewer than two buses")]
    TooSmall,
    #[error("bus ids must be contiguous from 1; expected {expected}, found {found}")]
    NonContiguousIds { expected: usize, found: usize },
    #[error("bus {0}: voltage setpoint must be positive")]
    BadSetpoint(usize),
    #[error("branch {branch}: endpoint bus {bus} does not exist")]
    DanglingBranch { branch: usize, bus: usize },
    #[error("branch {0}: from and to bus are the same")]
    SelfLoop(usize),
    #[error("branch {0}: zero series impedance")]
    ZeroImpedance(usize),
    #[error("branch {0}: tap ratio must be positive")]
    BadTap(usize),
    #[error("branch {0}: non-finite parameter")]
    NonFinite(usize),
    #[error("case file line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("reading case file: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BusKind {
    Slack,
    PV,
    PQ,
}

impl fmt::Display for BusKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BusKind::Slack => "slack",
            BusKind::PV => "pv",
            BusKind::PQ => "pq",
        })
    }
}

/// One network node. All electrical quantities are per unit on the system base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: usize,
    pub kind: BusKind,
    pub base_load_p: f64,
    pub base_load_q: f64,
    /// Scheduled generation. Ignored for PQ buses and, in power flow, for the slack.
    pub gen_p: f64,
    pub v_setpoint: f64,
    pub shunt_g: f64,
    pub shunt_b: f64,
}

impl Bus {
    pub fn pq(id: usize, load_p: f64, load_q: f64) -> Self {
        Bus {
            id,
            kind: BusKind::PQ,
            base_load_p: load_p,
            base_load_q: load_q,
            gen_p: 0.0,
            v_setpoint: 1.0,
            shunt_g: 0.0,
            shunt_b: 0.0,
        }
    }

    pub fn slack(id: usize, v_setpoint: f64) -> Self {
        Bus {
            kind: BusKind::Slack,
            v_setpoint,
            ..Bus::pq(id, 0.0, 0.0)
        }
    }

    pub fn pv(id: usize, gen_p: f64, v_setpoint: f64) -> Self {
        Bus {
            kind: BusKind::PV,
            gen_p,
            v_setpoint,
            ..Bus::pq(id, 0.0, 0.0)
        }
    }
}

/// Pi-model branch. The off-nominal tap and phase shift sit on the from side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from_bus: usize,
    pub to_bus: usize,
    pub r: f64,
    pub x: f64,
    pub b_charging: f64,
    pub tap_ratio: f64,
    pub phase_shift: f64,
}

impl Branch {
    pub fn line(from_bus: usize, to_bus: usize, r: f64, x: f64, b_charging: f64) -> Self {
        Branch {
            from_bus,
            to_bus,
            r,
            x,
            b_charging,
            tap_ratio: 1.0,
            phase_shift: 0.0,
        }
    }

    pub fn series_admittance(&self) -> Complex64 {
        Complex64::new(self.r, self.x).inv()
    }
}

/// Dense complex bus admittance matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix {
    n: usize,
    entries: Vec<Complex64>,
}

impl AdmittanceMatrix {
    pub fn zeros(n: usize) -> Self {
        AdmittanceMatrix {
            n,
            entries: vec![Complex64::new(0.0, 0.0); n * n],
        }
    }

    pub fn from_rows(rows: &[Vec<Complex64>]) -> Self {
        let n = rows.len();
        assert!(rows.iter().all(|r| r.len() == n), "admittance matrix must be square");
        AdmittanceMatrix {
            n,
            entries: rows.iter().flatten().copied().collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.entries[i * self.n + j]
    }

    #[inline]
    pub fn g(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j].re
    }

    #[inline]
    pub fn b(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j].im
    }

    pub fn row(&self, i: usize) -> &[Complex64] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }

    fn add(&mut self, i: usize, j: usize, v: Complex64) {
        self.entries[i * self.n + j] += v;
    }

    /// `Y · v` for a complex vector.
    pub fn mul_vec(&self, v: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(v.len(), self.n);
        (0..self.n)
            .map(|i| self.row(i).iter().zip(v).map(|(y, x)| y * x).sum())
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }
}

fn validate_buses(buses: &[Bus]) -> Result<usize, GridError> {
    if buses.len() < 2 {
        return Err(GridError::TooSmall);
    }
    let mut slack = None;
    for (k, bus) in buses.iter().enumerate() {
        if bus.id != k {
            return Err(GridError::NonContiguousIds {
                expected: k + 1,
                found: bus.id + 1,
            });
        }
        if bus.kind != BusKind::PQ && !(bus.v_setpoint > 0.0) {
            return Err(GridError::BadSetpoint(k + 1));
        }
        if bus.kind == BusKind::Slack {
            if let Some(s) = slack {
                return Err(GridError::DuplicateSlack(k + 1, s + 1));
            }
            slack = Some(k);
        }
    }
    slack.ok_or(GridError::NoSlack)
}

/// Builds the bus admittance matrix. Error messages use 1-based bus and
/// branch labels.
pub fn build_admittance(buses: &[Bus], branches: &[Branch]) -> Result<AdmittanceMatrix, GridError> {
    validate_buses(buses)?;
    let n = buses.len();
    let mut y = AdmittanceMatrix::zeros(n);

    for (k, br) in branches.iter().enumerate() {
        let label = k + 1;
        for bus in [br.from_bus, br.to_bus] {
            if bus >= n {
                return Err(GridError::DanglingBranch {
                    branch: label,
                    bus: bus + 1,
                });
            }
        }
        if br.from_bus == br.to_bus {
            return Err(GridError::SelfLoop(label));
        }
        let params = [br.r, br.x, br.b_charging, br.tap_ratio, br.phase_shift];
        if params.iter().any(|p| !p.is_finite()) {
            return Err(GridError::NonFinite(label));
        }
        if br.r == 0.0 && br.x == 0.0 {
            return Err(GridError::ZeroImpedance(label));
        }
        if !(br.tap_ratio > 0.0) {
            return Err(GridError::BadTap(label));
        }

        let ys = br.series_admittance();
        let half_charging = Complex64::new(0.0, br.b_charging / 2.0);
        let tap = Complex64::from_polar(br.tap_ratio, br.phase_shift);
        let (f, t) = (br.from_bus, br.to_bus);

        y.add(f, f, (ys + half_charging) / (br.tap_ratio * br.tap_ratio));
        y.add(t, t, ys + half_charging);
        y.add(f, t, -ys / tap.conj());
        y.add(t, f, -ys / tap);
    }

    for bus in buses {
        y.add(bus.id, bus.id, Complex64::new(bus.shunt_g, bus.shunt_b));
    }
    Ok(y)
}

/// An immutable network with its admittance matrix.
#[derive(Debug, Clone)]
pub struct GridModel {
    name: String,
    buses: Vec<Bus>,
    branches: Vec<Branch>,
    y_bus: AdmittanceMatrix,
    base_mva: f64,
    slack: usize,
}

impl GridModel {
    pub fn new(
        name: impl Into<String>,
        buses: Vec<Bus>,
        branches: Vec<Branch>,
        base_mva: f64,
    ) -> Result<Self, GridError> {
        let y_bus = build_admittance(&buses, &branches)?;
        let slack = validate_buses(&buses)?;
        Ok(GridModel {
            name: name.into(),
            buses,
            branches,
            y_bus,
            base_mva,
            slack,
        })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, GridError> {
        parse_case(&std::fs::read_to_string(path)?)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn y_bus(&self) -> &AdmittanceMatrix {
        &self.y_bus
    }

    pub fn base_mva(&self) -> f64 {
        self.base_mva
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn slack(&self) -> usize {
        self.slack
    }

    /// Returns a copy with one bus reclassified. The admittance matrix is
    /// unaffected by bus kinds.
    pub fn with_bus_kind(&self, bus: usize, kind: BusKind) -> Result<Self, GridError> {
        let mut buses = self.buses.clone();
        buses[bus].kind = kind;
        validate_buses(&buses)?;
        let slack = buses.iter().position(|b| b.kind == BusKind::Slack).ok_or(GridError::NoSlack)?;
        Ok(GridModel {
            buses,
            slack,
            ..self.clone()
        })
    }
}

/// The IEEE 14-bus test case bundled with the crate.
pub fn load_case14() -> GridModel {
    parse_case(CASE14).expect("bundled case14 file is well formed")
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    None,
    Case,
    Buses,
    Branches,
}

fn parse_f64(tok: &str, line: usize, what: &str) -> Result<f64, GridError> {
    tok.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| GridError::Parse {
            line,
            msg: format!("bad {what} value '{tok}'"),
        })
}

fn parse_id(tok: &str, line: usize, what: &str) -> Result<usize, GridError> {
    match tok.parse::<usize>() {
        Ok(v) if v >= 1 => Ok(v - 1),
        _ => Err(GridError::Parse {
            line,
            msg: format!("bad {what} '{tok}' (expected a 1-based bus id)"),
        }),
    }
}

/// Parses the sectioned plain-text case format (see `data/case14.txt` for the
/// column layout). Loads and shunts are given in MW/MVAr and converted to per
/// unit; unknown sections and malformed rows are rejected with their line number.
pub fn parse_case(text: &str) -> Result<GridModel, GridError> {
    let mut section = Section::None;
    let mut name = String::from("unnamed");
    let mut base_mva = None;
    let mut bus_rows: Vec<(usize, Vec<&str>)> = Vec::new();
    let mut branch_rows: Vec<(usize, Vec<&str>)> = Vec::new();

    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if content.starts_with('[') {
            section = match content {
                "[case]" => Section::Case,
                "[buses]" => Section::Buses,
                "[branches]" => Section::Branches,
                other => {
                    return Err(GridError::Parse {
                        line,
                        msg: format!("unknown section {other}"),
                    })
                }
            };
            continue;
        }
        let toks: Vec<&str> = content.split_whitespace().collect();
        match section {
            Section::None => {
                return Err(GridError::Parse {
                    line,
                    msg: "data outside of any section".into(),
                })
            }
            Section::Case => match toks.as_slice() {
                ["name", v] => name = (*v).to_string(),
                ["base_mva", v] => base_mva = Some(parse_f64(v, line, "base_mva")?),
                _ => {
                    return Err(GridError::Parse {
                        line,
                        msg: format!("unknown case entry '{content}'"),
                    })
                }
            },
            Section::Buses => bus_rows.push((line, toks)),
            Section::Branches => branch_rows.push((line, toks)),
        }
    }

    let base = base_mva.ok_or(GridError::Parse {
        line: 0,
        msg: "missing base_mva in [case]".into(),
    })?;
    if !(base > 0.0) {
        return Err(GridError::Parse {
            line: 0,
            msg: "base_mva must be positive".into(),
        });
    }

    let mut buses = Vec::with_capacity(bus_rows.len());
    for (line, toks) in &bus_rows {
        let line = *line;
        if toks.len() != 8 {
            return Err(GridError::Parse {
                line,
                msg: format!("bus row needs 8 columns, found {}", toks.len()),
            });
        }
        let id = parse_id(toks[0], line, "bus id")?;
        let kind = match toks[1].to_ascii_lowercase().as_str() {
            "slack" | "ref" => BusKind::Slack,
            "pv" => BusKind::PV,
            "pq" => BusKind::PQ,
            other => {
                return Err(GridError::Parse {
                    line,
                    msg: format!("unknown bus type '{other}'"),
                })
            }
        };
        let vals: Vec<f64> = toks[2..]
            .iter()
            .map(|t| parse_f64(t, line, "bus"))
            .collect::<Result<_, _>>()?;
        buses.push(Bus {
            id,
            kind,
            base_load_p: vals[0] / base,
            base_load_q: vals[1] / base,
            gen_p: vals[2] / base,
            v_setpoint: vals[3],
            shunt_g: vals[4] / base,
            shunt_b: vals[5] / base,
        });
    }

    let mut branches = Vec::with_capacity(branch_rows.len());
    for (line, toks) in &branch_rows {
        let line = *line;
        if toks.len() != 7 {
            return Err(GridError::Parse {
                line,
                msg: format!("branch row needs 7 columns, found {}", toks.len()),
            });
        }
        let from_bus = parse_id(toks[0], line, "from bus")?;
        let to_bus = parse_id(toks[1], line, "to bus")?;
        let vals: Vec<f64> = toks[2..]
            .iter()
            .map(|t| parse_f64(t, line, "branch"))
            .collect::<Result<_, _>>()?;
        branches.push(Branch {
            from_bus,
            to_bus,
            r: vals[0],
            x: vals[1],
            b_charging: vals[2],
            tap_ratio: if vals[3] == 0.0 { 1.0 } else { vals[3] },
            phase_shift: vals[4].to_radians(),
        });
    }

    GridModel::new(name, buses, branches, base)
}
