use badgan_core::config::TrainConfig;
use badgan_core::datasets::median_nn_distance;
use badgan_core::trainer::{fit_density, make_dataset, train};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let radius_mult: f64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(2.0);
    let steps: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(4000);
    let lr: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(1e-3);
    let beta1: f64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(0.5);
    let mut cfg = TrainConfig::four_spins_oracle();
    cfg.train.steps = steps;
    cfg.train.lr = lr;
    cfg.train.beta1 = beta1;
    cfg.train.eval_interval = (steps / 8).max(1);
    cfg.train.seed = 0;
    let ds = make_dataset(&cfg.dataset, 0).unwrap();
    cfg.train.oracle_radius = radius_mult * median_nn_distance(&ds.unlabeled);
    let density = fit_density(&cfg, &ds).unwrap();
    let t0 = std::time::Instant::now();
    let (_, log) = train(&cfg, &ds, &density).unwrap();
    let r = log.records.last().unwrap();
    println!("mult {radius_mult} lr {lr} b1 {beta1} steps {steps}: acc {:.4} rt {:.3} rf {:.3} ({:.1}s)",
        1.0 - r.test_error_rate, r.ratio_true, r.ratio_fake, t0.elapsed().as_secs_f64());
}
