mod common;

use common::{max_fd_relative_error, random_net, three_bus_grid, toy_dataset, two_bus_grid};
use gridpinn::dataset;

const LAMBDA_PAIRS: [(f64, f64); 3] = [(1.0, 0.0), (0.0, 1.0), (0.5, 0.5)];

#[test]
fn analytic_gradient_matches_central_differences() {
    let grid = three_bus_grid();
    let ds = toy_dataset(&grid, 24, 11);
    let train: Vec<usize> = (0..24).collect();
    let (data, stats) = dataset::preprocess(&ds, &train).unwrap();
    for seed in 0..10u64 {
        let net = random_net(3, 5, 100 + seed);
        let rows: Vec<usize> = (0..6).map(|k| ((seed as usize) * 3 + k * 4) % 24).collect();
        for lambdas in LAMBDA_PAIRS {
            let err = max_fd_relative_error(&net, &data, &rows, &grid, &stats, lambdas, 1e-5);
            assert!(err < 1e-5, "seed {seed} λ {lambdas:?}: relative error {err:.3e}");
        }
    }
}

#[test]
fn gradient_on_two_bus_grid() {
    let grid = two_bus_grid();
    let ds = toy_dataset(&grid, 16, 3);
    let train: Vec<usize> = (0..16).collect();
    let (data, stats) = dataset::preprocess(&ds, &train).unwrap();
    let net = random_net(2, 4, 9);
    let rows = [0, 5, 9, 13];
    for lambdas in LAMBDA_PAIRS {
        let err = max_fd_relative_error(&net, &data, &rows, &grid, &stats, lambdas, 1e-5);
        assert!(err < 1e-5, "λ {lambdas:?}: relative error {err:.3e}");
    }
}

#[test]
fn reported_loss_matches_independent_evaluation() {
    use gridpinn::nn::{backward, Batch, Physics};
    let grid = three_bus_grid();
    let ds = toy_dataset(&grid, 12, 5);
    let train: Vec<usize> = (0..12).collect();
    let (data, stats) = dataset::preprocess(&ds, &train).unwrap();
    let net = random_net(3, 6, 1);
    let rows: Vec<usize> = (0..12).collect();
    let n = 3;
    let (mut x, mut t, mut ir, mut ii) = (vec![], vec![], vec![], vec![]);
    for &r in &rows {
        x.extend_from_slice(data.input(r));
        t.extend_from_slice(data.target(r));
        ir.extend_from_slice(&data.i_re[r * n..(r + 1) * n]);
        ii.extend_from_slice(&data.i_im[r * n..(r + 1) * n]);
    }
    let physics = Physics::new(grid.y_bus(), &stats);
    let batch = Batch { x: &x, t: &t, i_re: &ir, i_im: &ii };
    for lambdas in LAMBDA_PAIRS {
        let (parts, _) = backward(&net, &batch, Some(&physics), lambdas).unwrap();
        let (oracle, _, _) = common::oracle_loss(&net, &data, &rows, &grid, &stats, lambdas, None);
        assert!((parts.total - oracle).abs() < 1e-12, "{} vs {}", parts.total, oracle);
        assert!((0.0..=1.0).contains(&parts.u_norm) && (0.0..=1.0).contains(&parts.f_norm));
    }
}
