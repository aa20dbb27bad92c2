//! Shared helpers for integration tests: small grids and an independent
//! evaluator of the composite loss used as the finite-difference oracle.

#![allow(dead_code)]

use gridpinn::dataset::{self, Dataset, Prepared};
use gridpinn::grid::{Branch, Bus, GridModel};
use gridpinn::nn::Mlp;
use gridpinn::power_flow::NrOptions;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Three-bus meshed grid with line charging and one PV bus.
pub fn three_bus_grid() -> GridModel {
    let mut b2 = Bus::pq(1, 0.6, 0.25);
    b2.shunt_b = 0.05;
    GridModel::new(
        "toy3",
        vec![Bus::slack(0, 1.02), b2, Bus::pv(2, 0.3, 1.01)],
        vec![
            Branch::line(0, 1, 0.02, 0.08, 0.04),
            Branch::line(1, 2, 0.03, 0.10, 0.02),
            Branch::line(0, 2, 0.01, 0.06, 0.03),
        ],
        100.0,
    )
    .unwrap()
}

pub fn two_bus_grid() -> GridModel {
    GridModel::new(
        "toy2",
        vec![Bus::slack(0, 1.0), Bus::pq(1, 0.5, 0.2)],
        vec![Branch::line(0, 1, 0.01, 0.1, 0.02)],
        100.0,
    )
    .unwrap()
}

pub fn toy_dataset(grid: &GridModel, n: usize, seed: u64) -> Dataset {
    let ds = dataset::generate_steady_state(grid, n, 0.3, seed, &NrOptions::default()).unwrap();
    dataset::add_noise(
        &ds,
        &gridpinn::NoiseSpec {
            p_sigma_rel: 0.01,
            q_sigma_rel: 0.01,
            seed: seed + 1,
        },
    )
}

pub fn random_net(n_buses: usize, hidden: usize, seed: u64) -> Mlp {
    let mut net = gridpinn::nn::init(n_buses, hidden, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    // Non-zero biases so every parameter has a generic gradient.
    for b in net.params.b1.iter_mut().chain(net.params.b2.iter_mut()) {
        *b = rng.random_range(-0.3..0.3);
    }
    net
}

/// Loss evaluated from scratch with the two normalizers supplied, so a finite
/// difference sees them as constants. Returns `(λ1·u/du + λ2·f/df, max sq err, max |ΔI|)`.
pub fn oracle_loss(
    net: &Mlp,
    data: &Prepared,
    rows: &[usize],
    grid: &GridModel,
    stats: &gridpinn::PreprocessStats,
    lambdas: (f64, f64),
    scales: Option<(f64, f64)>,
) -> (f64, f64, f64) {
    let n = data.n_buses;
    let p = &net.params;
    let mut sq = Vec::new();
    let mut md = Vec::new();
    for &r in rows {
        let x = data.input(r);
        let t = data.target(r);
        let h: Vec<f64> = (0..net.n_hidden)
            .map(|j| {
                let a: f64 = (0..net.n_in).map(|i| p.w1[j * net.n_in + i] * x[i]).sum::<f64>() + p.b1[j];
                a.tanh()
            })
            .collect();
        let y: Vec<f64> = (0..net.n_out)
            .map(|o| (0..net.n_hidden).map(|j| p.w2[o * net.n_hidden + j] * h[j]).sum::<f64>() + p.b2[o])
            .collect();
        for o in 0..net.n_out {
            sq.push((y[o] - t[o]).powi(2));
        }
        let phys = stats.inverse_target(&y);
        let v: Vec<Complex64> = (0..n).map(|k| Complex64::from_polar(phys[k], phys[n + k])).collect();
        for i in 0..n {
            let mut cur = Complex64::new(0.0, 0.0);
            for j in 0..n {
                cur += grid.y_bus().get(i, j) * v[j];
            }
            let truth = Complex64::new(data.i_re[r * n + i], data.i_im[r * n + i]);
            md.push((cur - truth).norm());
        }
    }
    let max_sq = sq.iter().copied().fold(0.0, f64::max);
    let max_md = md.iter().copied().fold(0.0, f64::max);
    let (du, df) = scales.unwrap_or((max_sq, max_md));
    let u = sq.iter().sum::<f64>() / sq.len() as f64 / du;
    let f = md.iter().sum::<f64>() / md.len() as f64 / df;
    (lambdas.0 * u + lambdas.1 * f, max_sq, max_md)
}

/// Largest relative difference between analytic gradients and central
/// differences with step `h`, with a denominator floor of 1e-6.
pub fn max_fd_relative_error(
    net: &Mlp,
    data: &Prepared,
    rows: &[usize],
    grid: &GridModel,
    stats: &gridpinn::PreprocessStats,
    lambdas: (f64, f64),
    h: f64,
) -> f64 {
    use gridpinn::nn::{backward, Batch, Physics};
    let n = data.n_buses;
    let mut x = Vec::new();
    let mut t = Vec::new();
    let mut ir = Vec::new();
    let mut ii = Vec::new();
    for &r in rows {
        x.extend_from_slice(data.input(r));
        t.extend_from_slice(data.target(r));
        ir.extend_from_slice(&data.i_re[r * n..(r + 1) * n]);
        ii.extend_from_slice(&data.i_im[r * n..(r + 1) * n]);
    }
    let physics = Physics::new(grid.y_bus(), stats);
    let batch = Batch {
        x: &x,
        t: &t,
        i_re: &ir,
        i_im: &ii,
    };
    let (_, grads) = backward(net, &batch, Some(&physics), lambdas).unwrap();
    let (_, du, df) = oracle_loss(net, data, rows, grid, stats, lambdas, None);
    let mut worst = 0.0f64;
    for k in 0..net.params.len() {
        let mut up = net.clone();
        let mut dn = net.clone();
        let base = net.params.get_flat(k);
        up.params.set_flat(k, base + h);
        dn.params.set_flat(k, base - h);
        let lu = oracle_loss(&up, data, rows, grid, stats, lambdas, Some((du, df))).0;
        let ld = oracle_loss(&dn, data, rows, grid, stats, lambdas, Some((du, df))).0;
        let fd = (lu - ld) / (2.0 * h);
        let an = grads.get_flat(k);
        let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    worst
}
