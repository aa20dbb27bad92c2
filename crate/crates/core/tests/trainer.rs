mod common;

use common::{three_bus_grid, toy_dataset};
use gridpinn::dataset::{self, k_fold_split};
use gridpinn::loss::{LambdaSchedule, Regime};
use gridpinn::nn::{self, backward, Batch, Physics};
use gridpinn::trainer::{
    compare_regimes, cross_validate, render_table, train_fold, train_fold_with, ExperimentConfig, TABLE_COLUMNS,
};

fn small_config(epochs: usize) -> ExperimentConfig {
    ExperimentConfig {
        epochs,
        batch_size: 8,
        k_folds: 3,
        hidden: 6,
        schedule_period: 10,
        seed: 99,
        ..ExperimentConfig::default()
    }
}

#[test]
fn one_epoch_matches_a_hand_stepped_update() {
    let grid = three_bus_grid();
    let ds = toy_dataset(&grid, 30, 4);
    let folds = k_fold_split(ds.len(), 3, 1).unwrap();
    let fold = &folds[1];
    let cfg = ExperimentConfig {
        batch_size: fold.train.len(),
        ..small_config(1)
    };
    let rep = train_fold(&cfg, &grid, &ds, 1, fold, &LambdaSchedule::new(Regime::Inc50, 10)).unwrap();

    let (data, stats) = dataset::preprocess(&ds, &fold.train).unwrap();
    let net0 = nn::init(3, cfg.hidden, cfg.init_seed(1));
    let n = 3;
    let (mut x, mut t, mut ir, mut ii) = (vec![], vec![], vec![], vec![]);
    for &r in &fold.train {
        x.extend_from_slice(data.input(r));
        t.extend_from_slice(data.target(r));
        ir.extend_from_slice(&data.i_re[r * n..(r + 1) * n]);
        ii.extend_from_slice(&data.i_im[r * n..(r + 1) * n]);
    }
    let physics = Physics::new(grid.y_bus(), &stats);
    let batch = Batch { x: &x, t: &t, i_re: &ir, i_im: &ii };
    let (parts, g) = backward(&net0, &batch, Some(&physics), (1.0, 0.0)).unwrap();

    // First Adam step: m̂ = g, v̂ = g², so θ₁ = θ₀ − α g / (|g| + ε).
    let a = cfg.adam;
    for k in 0..net0.params.len() {
        let gk = g.get_flat(k);
        let expected = net0.params.get_flat(k) - a.alpha * gk / (gk.abs() + a.epsilon);
        let got = rep.final_model.net.params.get_flat(k);
        assert!((got - expected).abs() < 1e-12, "parameter {k}: {got} vs {expected}");
    }
    assert_eq!(rep.curve.len(), 1);
    let rec = rep.curve[0];
    assert!((rec.train_loss - parts.total).abs() < 1e-12);
    assert_eq!((rec.lambda1, rec.lambda2), (1.0, 0.0));

    // Validation error recomputed from the updated network.
    let mut sum = 0.0;
    for &r in &fold.val {
        let y = nn::forward(&rep.final_model.net, data.input(r)).unwrap();
        sum += y.iter().zip(data.target(r)).map(|(p, q)| (p - q).abs()).sum::<f64>();
    }
    let val = 100.0 * sum / (fold.val.len() * 2 * n) as f64;
    assert!((rec.val_error - val).abs() < 1e-12);
    assert_eq!(rep.best_epoch, 0);
    assert_eq!(rep.best_val_error, rec.val_error);
}

#[test]
fn plain_network_is_untouched_by_the_physics_branch() {
    let grid = three_bus_grid();
    let ds = toy_dataset(&grid, 30, 5);
    let cfg = small_config(25);
    let folds = k_fold_split(ds.len(), 3, cfg.fold_seed()).unwrap();
    let sched = LambdaSchedule::new(Regime::PlainNN, cfg.schedule_period);
    let with = train_fold_with(&cfg, &grid, &ds, 0, &folds[0], &sched, true).unwrap();
    let without = train_fold_with(&cfg, &grid, &ds, 0, &folds[0], &sched, false).unwrap();
    assert_eq!(with.final_model.net, without.final_model.net);
    assert_eq!(with.val_error_per_epoch(), without.val_error_per_epoch());
    assert_eq!(with.best_epoch, without.best_epoch);
}

#[test]
fn fold_reports_are_consistent() {
    let grid = three_bus_grid();
    let ds = toy_dataset(&grid, 30, 6);
    let cfg = small_config(40);
    let rep = cross_validate(&cfg, &grid, &ds, Regime::Inc25).unwrap();
    assert_eq!(rep.folds.len(), 3);
    for f in &rep.fold_reports {
        assert_eq!(f.curve.len(), 40);
        let series = f.val_error_per_epoch();
        let min = series.iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(series[f.best_epoch], f.best_val_error);
        assert_eq!(f.best_val_error, min);
        assert!(series[..f.best_epoch].iter().all(|v| *v > min));
        for (e, r) in f.curve.iter().enumerate() {
            let steps = (e / 10) as f64;
            assert!((r.lambda2 - (0.25 * steps).min(1.0)).abs() < 1e-12);
        }
    }
    let best: Vec<f64> = rep.folds.iter().map(|f| f.best_val_error).collect();
    let mean = best.iter().sum::<f64>() / 3.0;
    assert!((rep.cv_error - mean).abs() < 1e-12);
    let var = best.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / 3.0;
    assert!((rep.fold_std - var.sqrt()).abs() < 1e-12);
}

#[test]
fn comparison_is_deterministic_and_thread_independent() {
    let grid = three_bus_grid();
    let ds = toy_dataset(&grid, 30, 7);
    let cfg = small_config(20);
    let a = compare_regimes(&cfg, &grid, &ds).unwrap();
    let b = compare_regimes(&cfg, &grid, &ds).unwrap();
    let par = compare_regimes(&ExperimentConfig { parallel_folds: 3, ..cfg.clone() }, &grid, &ds).unwrap();
    let json = |r: &[gridpinn::RegimeReport]| serde_json::to_string(r).unwrap();
    assert_eq!(json(&a), json(&b));
    assert_eq!(json(&a), json(&par));
    assert_eq!(a.len(), 6);
    assert_eq!(a[0].regime, Regime::PlainNN);
    assert_eq!(a[0].normalized_error, Some(0.0));
}

#[test]
fn regimes_share_initialization_and_batch_order() {
    let grid = three_bus_grid();
    let ds = toy_dataset(&grid, 30, 8);
    let cfg = small_config(10);
    let folds = k_fold_split(ds.len(), 3, cfg.fold_seed()).unwrap();
    // Before the first λ step every regime is the plain network.
    let nn = train_fold(&cfg, &grid, &ds, 2, &folds[2], &LambdaSchedule::new(Regime::PlainNN, 10)).unwrap();
    let inc = train_fold(&cfg, &grid, &ds, 2, &folds[2], &LambdaSchedule::new(Regime::Inc50, 10)).unwrap();
    assert_eq!(nn.final_model.net, inc.final_model.net);
}

#[test]
fn table_has_the_comparison_layout() {
    let grid = three_bus_grid();
    let ds = toy_dataset(&grid, 30, 9);
    let reports = compare_regimes(&small_config(5), &grid, &ds).unwrap();
    let text = render_table("Steady state", &reports);
    let rows: Vec<&str> = text.lines().filter(|l| l.starts_with('|')).collect();
    assert_eq!(rows.len(), 7);
    let header: Vec<&str> = rows[0].trim_matches('|').split('|').map(str::trim).collect();
    assert_eq!(header, TABLE_COLUMNS);
    let nn: Vec<&str> = rows[1].trim_matches('|').split('|').map(str::trim).collect();
    assert_eq!(nn[0], "NN");
    assert_eq!((nn[2], nn[4], nn[6]), ("0.00%", "0.00%", "0.00%"));
}

#[test]
fn invalid_configurations_are_rejected() {
    let grid = three_bus_grid();
    let ds = toy_dataset(&grid, 30, 10);
    for cfg in [
        ExperimentConfig { batch_size: 0, ..small_config(1) },
        ExperimentConfig { k_folds: 1, ..small_config(1) },
        ExperimentConfig { epochs: 0, ..small_config(1) },
        ExperimentConfig { regimes: vec![Regime::Inc10], ..small_config(1) },
    ] {
        assert!(compare_regimes(&cfg, &grid, &ds).is_err());
    }
}
