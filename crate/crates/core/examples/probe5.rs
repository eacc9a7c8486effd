use badgan_core::config::TrainConfig;
use badgan_core::datasets::median_nn_distance;
use badgan_core::trainer::{boundary_grid, fit_density, make_dataset, train, train_supervised, evaluate, grid_to_csv};
use std::fs;

fn main() {
    let a: Vec<String> = std::env::args().collect();
    let radius_mult: f64 = a.get(1).map(|s| s.parse().unwrap()).unwrap_or(4.0);
    let steps: usize = a.get(2).map(|s| s.parse().unwrap()).unwrap_or(4000);
    let mut cfg = TrainConfig::four_spins_oracle();
    cfg.train.steps = steps;
    cfg.train.eval_interval = (steps / 8).max(1);
    let ds = make_dataset(&cfg.dataset, 0).unwrap();
    cfg.train.oracle_radius = radius_mult * median_nn_distance(&ds.unlabeled);
    let density = fit_density(&cfg, &ds).unwrap();
    let (bundle, log) = train(&cfg, &ds, &density).unwrap();
    let r = log.records.last().unwrap();
    println!("ssl acc {:.4} rt {:.3} rf {:.3}", 1.0 - r.test_error_rate, r.ratio_true, r.ratio_fake);

    // supervised baseline on the same 20 labels
    let sup = train_supervised(4, 16, &[64, 64], &ds.labeled, 2000, 1e-3, 0).unwrap();
    let (_, sup_rate) = evaluate(&sup, &ds.test);
    println!("supervised acc {:.4}", 1.0 - sup_rate);

    let grid = boundary_grid(&bundle.discriminator, &ds.bounds, 150).unwrap();
    fs::write("/tmp/grid.csv", grid_to_csv(&grid)).unwrap();
    fs::write("/tmp/data.csv", ds.to_csv()).unwrap();
    // per-class accuracy
    for k in 0..4 {
        let cls: Vec<_> = ds.test.iter().filter(|&&(_, y)| y == k).cloned().collect();
        let (_, rate) = evaluate(&bundle.discriminator, &cls);
        println!("class {k}: acc {:.3}", 1.0 - rate);
    }
}
