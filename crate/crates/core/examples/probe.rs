//! Quick convergence probe for the toy experiments; prints the numbers the
//! acceptance suite gates on.

use badgan_core::config::TrainConfig;
use badgan_core::theory::{assumption_ratios, build_regions, convexity_probe, disjointness_check,
    default_alpha_grid, lemma_bound_check, proposition2_check};
use badgan_core::trainer::{
    boundary_fake_fraction, boundary_grid, fit_density, make_dataset, train, true_fake_accuracy,
};
use badgan_core::models::oracle_complement_sampler;
use badgan_core::datasets::median_nn_distance;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "oracle".into());
    let seeds: Vec<u64> = std::env::args()
        .nth(2)
        .map(|s| s.split(',').map(|t| t.parse().unwrap()).collect())
        .unwrap_or_else(|| vec![0, 1, 2, 3, 4]);

    for seed in seeds {
        let t0 = Instant::now();
        match which.as_str() {
            "oracle" => {
                let mut cfg = TrainConfig::four_spins_oracle();
                cfg.train.seed = seed;
                let ds = make_dataset(&cfg.dataset, seed).unwrap();
                let density = fit_density(&cfg, &ds).unwrap();
                let (bundle, log) = train(&cfg, &ds, &density).unwrap();
                let last = log.records.last().unwrap();
                let grid = boundary_grid(&bundle.discriminator, &ds.bounds, 100).unwrap();
                let bf = boundary_fake_fraction(&grid, 100);
                println!(
                    "oracle seed {seed}: acc {:.4} ratio_true {:.3} ratio_fake {:.3} boundary_fake {:.4} ({:.1}s)",
                    1.0 - last.test_error_rate,
                    last.ratio_true,
                    last.ratio_fake,
                    bf,
                    t0.elapsed().as_secs_f64()
                );
                // lemma check with big sample sets
                let radius = 2.0 * median_nn_distance(&ds.unlabeled);
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
                let gen_set =
                    oracle_complement_sampler(&ds.bounds, &ds.unlabeled, radius, 8000, &mut rng)
                        .unwrap();
                let probes =
                    oracle_complement_sampler(&ds.bounds, &ds.unlabeled, radius, 2000, &mut rng)
                        .unwrap();
                let rep = lemma_bound_check(&bundle.discriminator, &probes, &gen_set).unwrap();
                println!(
                    "  lemma: C {:.3} cover {:.4} max_violation {:.4} triples {}/{}",
                    rep.weight_norm_bound,
                    rep.covering_radius,
                    rep.max_violation,
                    rep.triple_violations,
                    rep.triples_checked
                );
                // convexity over observed features
                let feats = bundle.discriminator.features_values(&ds.train_points());
                let d = bundle.discriminator.feature_dim;
                let mut lo = vec![f64::INFINITY; d];
                let mut hi = vec![f64::NEG_INFINITY; d];
                for row in feats.chunks(d) {
                    for i in 0..d {
                        lo[i] = lo[i].min(row[i]);
                        hi[i] = hi[i].max(row[i]);
                    }
                }
                for i in 0..d {
                    let side = (hi[i] - lo[i]).max(1e-9);
                    lo[i] -= 0.1 * side;
                    hi[i] += 0.1 * side;
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let conv = convexity_probe(&bundle.discriminator, &(lo, hi), 10_000, &mut rng);
                println!(
                    "  convexity: pairs {} violations {} inconclusive {}",
                    conv.pairs_tested, conv.violations, conv.inconclusive
                );
                let regions = build_regions(&bundle.discriminator, &ds.test, 50.0, 40);
                match regions {
                    Ok(regions) => {
                        let p2 = proposition2_check(&bundle.discriminator, &regions, &ds.labeled).unwrap();
                        let mut rng = ChaCha8Rng::seed_from_u64(seed);
                        let dj = disjointness_check(&regions, &default_alpha_grid(), 500, &mut rng);
                        println!(
                            "  prop2 min_fraction {:.4} labeled_in {:?} disjoint {:?}",
                            p2.min_fraction,
                            p2.labeled_in_region,
                            dj.map(|d| d.separated_fraction)
                        );
                    }
                    Err(e) => println!("  regions failed: {e}"),
                }
            }
            "circles" => {
                let mut cfg = TrainConfig::two_circles_fm();
                cfg.train.seed = seed;
                let ds = make_dataset(&cfg.dataset, seed).unwrap();
                let density = fit_density(&cfg, &ds).unwrap();
                let (bundle, log) = train(&cfg, &ds, &density).unwrap();
                let last = log.records.last().unwrap();
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1234);
                let fake = bundle.generator.generate(ds.test.len(), &mut rng);
                let test_pts: Vec<_> = ds.test.iter().map(|&(p, _)| p).collect();
                let tf = true_fake_accuracy(&bundle.discriminator, &test_pts, &fake);
                let ratios = assumption_ratios(&bundle.discriminator, &test_pts, &fake).unwrap();
                println!(
                    "circles seed {seed}: acc {:.4} tf_acc {:.4} ratio_true {:.3} ratio_fake {:.3} ({:.1}s)",
                    1.0 - last.test_error_rate,
                    tf,
                    ratios.ratio_true,
                    ratios.ratio_fake,
                    t0.elapsed().as_secs_f64()
                );
            }
            "ldpair" => {
                let base = TrainConfig::four_spins_fm();
                let mut fm = base.clone();
                fm.train.seed = seed;
                let ds = make_dataset(&fm.dataset, seed).unwrap();
                let density = fit_density(&fm, &ds).unwrap();
                let (_, log_fm) = train(&fm, &ds, &density).unwrap();
                let mut ld = base.with_ablation("fm+ld").unwrap();
                ld.train.seed = seed;
                let (_, log_ld) = train(&ld, &ds, &density).unwrap();
                let m_fm = log_fm.records.last().unwrap().max_gen_logp;
                let m_ld = log_ld.records.last().unwrap().max_gen_logp;
                println!(
                    "ldpair seed {seed}: fm_max_logp {:.3} ld_max_logp {:.3} lower {} ({:.1}s)",
                    m_fm,
                    m_ld,
                    m_ld < m_fm,
                    t0.elapsed().as_secs_f64()
                );
            }
            other => panic!("unknown probe {other}"),
        }
    }
}
