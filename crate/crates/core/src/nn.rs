//! Single-hidden-layer tanh regressor with hand-written reverse-mode gradients
//! of the composite loss, and the Adam optimizer.
//!
//! Shapes: `w1` is `hidden × n_in`, `w2` is `n_out × hidden`, both row-major.
//! The output layer is linear.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::PreprocessStats;
use crate::grid::AdmittanceMatrix;
use crate::loss::LossParts;
use crate::seed;

pub const HIDDEN_UNITS: usize = 32;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("input width {got} does not match network input {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("non-finite value in the {0} branch of the loss")]
    NonFinite(&'static str),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Parameter tensors. Also used for gradients and Adam moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

pub type Gradients = Params;

impl Params {
    pub fn zeros(n_in: usize, hidden: usize, n_out: usize) -> Self {
        Params {
            w1: vec![0.0; hidden * n_in],
            b1: vec![0.0; hidden],
            w2: vec![0.0; n_out * hidden],
            b2: vec![0.0; n_out],
        }
    }

    pub fn tensors(&self) -> [&[f64]; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    pub fn len(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    /// All values in the order w1, b1, w2, b2.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    pub fn get_flat(&self, mut k: usize) -> f64 {
        for t in self.tensors() {
            if k < t.len() {
                return t[k];
            }
            k -= t.len();
        }
        panic!("parameter index out of range")
    }

    pub fn set_flat(&mut self, mut k: usize, value: f64) {
        for t in self.tensors_mut() {
            if k < t.len() {
                t[k] = value;
                return;
            }
            k -= t.len();
        }
        panic!("parameter index out of range")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub n_in: usize,
    pub n_hidden: usize,
    pub n_out: usize,
    pub params: Params,
}

/// Network for an `n_buses` grid: `2N → hidden → 2N`, Glorot-uniform weights,
/// zero biases.
pub fn init(n_buses: usize, hidden: usize, seed: u64) -> Mlp {
    let (n_in, n_out) = (2 * n_buses, 2 * n_buses);
    let mut rng = seed::rng(seed);
    let mut params = Params::zeros(n_in, hidden, n_out);
    let b1 = (6.0 / (n_in + hidden) as f64).sqrt();
    for w in &mut params.w1 {
        *w = rng.random_range(-b1..b1);
    }
    let b2 = (6.0 / (hidden + n_out) as f64).sqrt();
    for w in &mut params.w2 {
        *w = rng.random_range(-b2..b2);
    }
    Mlp {
        n_in,
        n_hidden: hidden,
        n_out,
        params,
    }
}

impl Mlp {
    #[inline]
    fn hidden_into(&self, x: &[f64], h: &mut [f64]) {
        let p = &self.params;
        for (j, hj) in h.iter_mut().enumerate() {
            let row = &p.w1[j * self.n_in..(j + 1) * self.n_in];
            let a: f64 = row.iter().zip(x).map(|(w, xi)| w * xi).sum();
            *hj = (a + p.b1[j]).tanh();
        }
    }

    #[inline]
    fn output_into(&self, h: &[f64], y: &mut [f64]) {
        let p = &self.params;
        for (o, yo) in y.iter_mut().enumerate() {
            let row = &p.w2[o * self.n_hidden..(o + 1) * self.n_hidden];
            *yo = row.iter().zip(h).map(|(w, hj)| w * hj).sum::<f64>() + p.b2[o];
        }
    }
}

/// `y = w2 · tanh(w1 · x + b1) + b2` for each row of the flattened batch `x`.
pub fn forward(net: &Mlp, x: &[f64]) -> Result<Vec<f64>, NnError> {
    if x.len() % net.n_in != 0 {
        return Err(NnError::Dimension {
            expected: net.n_in,
            got: x.len() % net.n_in,
        });
    }
    let rows = x.len() / net.n_in;
    let mut h = vec![0.0; net.n_hidden];
    let mut y = vec![0.0; rows * net.n_out];
    for r in 0..rows {
        net.hidden_into(&x[r * net.n_in..(r + 1) * net.n_in], &mut h);
        net.output_into(&h, &mut y[r * net.n_out..(r + 1) * net.n_out]);
    }
    Ok(y)
}

/// What the physics branch needs: the admittance matrix and the target
/// transform that maps network outputs back to physical voltages.
pub struct Physics {
    n: usize,
    g: Vec<f64>,
    b: Vec<f64>,
    center: Vec<f64>,
    half: Vec<f64>,
}

impl Physics {
    pub fn new(y: &AdmittanceMatrix, stats: &PreprocessStats) -> Self {
        let n = y.n();
        assert_eq!(stats.n_targets(), 2 * n, "target statistics do not match grid size");
        let mut g = vec![0.0; n * n];
        let mut b = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                g[i * n + j] = y.g(i, j);
                b[i * n + j] = y.b(i, j);
            }
        }
        let (center, half) = (0..2 * n).map(|k| stats.target_affine(k)).unzip();
        Physics { n, g, b, center, half }
    }
}

/// A batch of rescaled inputs/targets with physical injection currents.
pub struct Batch<'a> {
    pub x: &'a [f64],
    pub t: &'a [f64],
    pub i_re: &'a [f64],
    pub i_im: &'a [f64],
}

impl Batch<'_> {
    fn rows(&self, n_in: usize) -> usize {
        self.x.len() / n_in
    }
}

/// Composite loss and its exact gradient with respect to every parameter.
///
/// The physics branch maps outputs to physical `(|V|, θ)`, forms `I = Y·V`
/// and takes the mean complex modulus of `I − I_true`. The two normalizing
/// maxima are held constant when differentiating, and `|·|` has gradient 0 at
/// zero. Passing `physics = None` disables the branch entirely (`f` terms are
/// reported as 0). With `λ2 = 0` the physics gradient is not accumulated.
pub fn backward(
    net: &Mlp,
    batch: &Batch<'_>,
    physics: Option<&Physics>,
    lambdas: (f64, f64),
) -> Result<(LossParts, Gradients), NnError> {
    let (n_in, nh, n_out) = (net.n_in, net.n_hidden, net.n_out);
    let rows = batch.rows(n_in);
    if rows == 0 {
        return Err(NnError::EmptyBatch);
    }
    if batch.x.len() != rows * n_in || batch.t.len() != rows * n_out {
        return Err(NnError::Dimension {
            expected: rows * n_in,
            got: batch.x.len(),
        });
    }
    let (lambda1, lambda2) = lambdas;

    let mut hid = vec![0.0; rows * nh];
    let mut out = vec![0.0; rows * n_out];
    for r in 0..rows {
        let x = &batch.x[r * n_in..(r + 1) * n_in];
        let h = &mut hid[r * nh..(r + 1) * nh];
        net.hidden_into(x, h);
        net.output_into(h, &mut out[r * n_out..(r + 1) * n_out]);
    }

    // Data branch.
    let err: Vec<f64> = out.iter().zip(batch.t).map(|(y, t)| y - t).collect();
    let (u_raw, u_max, u_norm) = crate::loss::mean_max_ratio(err.iter().map(|e| e * e));
    if !u_raw.is_finite() {
        return Err(NnError::NonFinite("data"));
    }
    let mut g_out = vec![0.0; rows * n_out];
    if u_max > 0.0 {
        let c = lambda1 * 2.0 / (err.len() as f64 * u_max);
        for (g, e) in g_out.iter_mut().zip(&err) {
            *g = c * e;
        }
    }

    // Physics branch.
    let (mut f_raw, mut f_norm) = (0.0, 0.0);
    if let Some(ph) = physics {
        let n = ph.n;
        if n_out != 2 * n || batch.i_re.len() != rows * n || batch.i_im.len() != rows * n {
            return Err(NnError::Dimension {
                expected: rows * n,
                got: batch.i_re.len(),
            });
        }
        let mut vm = vec![0.0; rows * n];
        let mut va = vec![0.0; rows * n];
        let mut d_re = vec![0.0; rows * n];
        let mut d_im = vec![0.0; rows * n];
        let mut modulus = vec![0.0; rows * n];
        let mut v_re = vec![0.0; n];
        let mut v_im = vec![0.0; n];
        for r in 0..rows {
            let y = &out[r * n_out..(r + 1) * n_out];
            for k in 0..n {
                let m = ph.center[k] + ph.half[k] * y[k];
                let a = ph.center[n + k] + ph.half[n + k] * y[n + k];
                vm[r * n + k] = m;
                va[r * n + k] = a;
                let (s, c) = a.sin_cos();
                v_re[k] = m * c;
                v_im[k] = m * s;
            }
            for i in 0..n {
                let (gr, br) = (&ph.g[i * n..(i + 1) * n], &ph.b[i * n..(i + 1) * n]);
                let (mut ir, mut ii) = (0.0, 0.0);
                for j in 0..n {
                    ir += gr[j] * v_re[j] - br[j] * v_im[j];
                    ii += gr[j] * v_im[j] + br[j] * v_re[j];
                }
                let idx = r * n + i;
                d_re[idx] = ir - batch.i_re[idx];
                d_im[idx] = ii - batch.i_im[idx];
                modulus[idx] = d_re[idx].hypot(d_im[idx]);
            }
        }
        let (raw, f_max, norm) = crate::loss::mean_max_ratio(modulus.iter().copied());
        if !raw.is_finite() {
            return Err(NnError::NonFinite("physics"));
        }
        f_raw = raw;
        f_norm = norm;

        if lambda2 != 0.0 && f_max > 0.0 {
            let c = lambda2 / (modulus.len() as f64 * f_max);
            let mut g_ire = vec![0.0; n];
            let mut g_iim = vec![0.0; n];
            for r in 0..rows {
                for i in 0..n {
                    let idx = r * n + i;
                    let m = modulus[idx];
                    if m > 0.0 {
                        g_ire[i] = c * d_re[idx] / m;
                        g_iim[i] = c * d_im[idx] / m;
                    } else {
                        g_ire[i] = 0.0;
                        g_iim[i] = 0.0;
                    }
                }
                let g_y = &mut g_out[r * n_out..(r + 1) * n_out];
                for j in 0..n {
                    // Adjoint of I = Y·V: g_V = Yᴴ g_I.
                    let (mut gvr, mut gvi) = (0.0, 0.0);
                    for i in 0..n {
                        let (g, b) = (ph.g[i * n + j], ph.b[i * n + j]);
                        gvr += g * g_ire[i] + b * g_iim[i];
                        gvi += g * g_iim[i] - b * g_ire[i];
                    }
                    let (s, co) = va[r * n + j].sin_cos();
                    let g_mag = gvr * co + gvi * s;
                    let g_ang = vm[r * n + j] * (gvi * co - gvr * s);
                    g_y[j] += g_mag * ph.half[j];
                    g_y[n + j] += g_ang * ph.half[n + j];
                }
            }
        }
    }

    // Back through the layers.
    let p = &net.params;
    let mut grads = Params::zeros(n_in, nh, n_out);
    let mut g_hid = vec![0.0; nh];
    for r in 0..rows {
        let x = &batch.x[r * n_in..(r + 1) * n_in];
        let h = &hid[r * nh..(r + 1) * nh];
        let g_y = &g_out[r * n_out..(r + 1) * n_out];
        g_hid.iter_mut().for_each(|g| *g = 0.0);
        for o in 0..n_out {
            let go = g_y[o];
            if go == 0.0 {
                continue;
            }
            grads.b2[o] += go;
            let w_row = &p.w2[o * nh..(o + 1) * nh];
            let gw_row = &mut grads.w2[o * nh..(o + 1) * nh];
            for j in 0..nh {
                gw_row[j] += go * h[j];
                g_hid[j] += go * w_row[j];
            }
        }
        for j in 0..nh {
            let ga = g_hid[j] * (1.0 - h[j] * h[j]);
            grads.b1[j] += ga;
            let gw_row = &mut grads.w1[j * n_in..(j + 1) * n_in];
            for (gw, xi) in gw_row.iter_mut().zip(x) {
                *gw += ga * xi;
            }
        }
    }

    Ok((LossParts::new(u_raw, u_norm, f_raw, f_norm, lambda1, lambda2), grads))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            alpha: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of a parameter slice; `t` is the step
/// number after incrementing (starts at 1).
pub fn adam_update(theta: &mut [f64], grad: &[f64], m: &mut [f64], v: &mut [f64], t: u64, cfg: &AdamConfig) {
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for k in 0..theta.len() {
        let g = grad[k];
        m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g;
        v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[k] / bc1;
        let v_hat = v[k] / bc2;
        theta[k] -= cfg.alpha * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Params,
    pub v: Params,
    pub t: u64,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(net: &Mlp, config: AdamConfig) -> Self {
        let z = Params::zeros(net.n_in, net.n_hidden, net.n_out);
        AdamState {
            m: z.clone(),
            v: z,
            t: 0,
            config,
        }
    }
}

pub fn adam_step(net: &mut Mlp, state: &mut AdamState, grads: &Gradients) {
    state.t += 1;
    let t = state.t;
    let cfg = state.config;
    let thetas = net.params.tensors_mut();
    let ms = state.m.tensors_mut();
    let vs = state.v.tensors_mut();
    for (((theta, g), m), v) in thetas.into_iter().zip(grads.tensors()).zip(ms).zip(vs) {
        adam_update(theta, g, m, v, t, &cfg);
    }
}

/// Saved model: network, optimizer state and the pre-processing it was trained with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub net: Mlp,
    pub adam: AdamState,
    pub preprocess: PreprocessStats,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        serde_json::to_writer(BufWriter::new(File::create(path)?), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
    }
}
