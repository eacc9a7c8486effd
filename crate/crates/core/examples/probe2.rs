use badgan_core::config::TrainConfig;
use badgan_core::trainer::{fit_density, make_dataset, train};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(4000);
    let lr: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(1e-3);
    let beta1: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(0.5);
    let hidden: Vec<usize> = args.get(4).map(|s| s.split('x').map(|t| t.parse().unwrap()).collect()).unwrap_or(vec![64,64]);
    let mut cfg = TrainConfig::four_spins_oracle();
    cfg.train.steps = steps;
    cfg.train.lr = lr;
    cfg.train.beta1 = beta1;
    cfg.model.hidden = hidden;
    cfg.train.eval_interval = (steps / 16).max(1);
    cfg.train.seed = 0;
    let ds = make_dataset(&cfg.dataset, 0).unwrap();
    let density = fit_density(&cfg, &ds).unwrap();
    let t0 = std::time::Instant::now();
    let (_, log) = train(&cfg, &ds, &density).unwrap();
    for r in &log.records {
        println!("step {:6}  d_loss {:8.4}  acc {:.4}  rt {:.3} rf {:.3}", r.step, r.d_loss, 1.0 - r.test_error_rate, r.ratio_true, r.ratio_fake);
    }
    println!("elapsed {:.1}s", t0.elapsed().as_secs_f64());
}
