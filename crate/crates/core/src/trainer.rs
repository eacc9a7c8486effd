//! Alternating minimax training loop, evaluation, and grid extraction.

use crate::config::{DatasetConfig, DatasetKind, GeneratorMode, TrainConfig};
use crate::datasets::{
    bounding_box, four_spins, median_nn_distance, split, two_circles, DataError, Dataset, InputBox,
    Point,
};
use crate::density::{fit_kde, BandwidthRule, DensityError, DensityModel};
use crate::models::{
    load_params, oracle_complement_sampler, parse_params, serialize_params, Discriminator,
    Encoder, Generator, ModelError, ParamTensor,
};
use crate::objectives::{
    discriminator_loss, generator_loss, points_leaf, EntropyMethod, ObjectiveError,
};
use crate::tensor::{adam_step, AdamConfig, AdamState, Tape, TensorError};
use crate::theory::{assumption_ratios, TheoryError};
use rand::seq::IteratorRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss at step {step}: {context}")]
    NanLoss { step: usize, context: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint parse error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Density(#[from] DensityError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Theory(#[from] TheoryError),
}

/// Trained (or initialized) models of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub discriminator: Discriminator,
    pub generator: Generator,
    pub encoder: Option<Encoder>,
}

/// One evaluation record; appended every `eval_interval` steps and at the
/// final step.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub step: usize,
    pub d_loss: f64,
    pub g_loss: f64,
    pub g_fm: f64,
    pub g_entropy: f64,
    pub g_low_density: f64,
    pub test_errors: usize,
    pub test_error_rate: f64,
    pub ratio_true: f64,
    pub ratio_fake: f64,
    pub max_gen_logp: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
    /// The resolved low-density threshold of the run (log space).
    pub eps_log: f64,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "step,d_loss,g_loss,g_fm,g_entropy,g_low_density,test_errors,test_error_rate,ratio_true,ratio_fake,max_gen_logp\n",
        );
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                r.step,
                r.d_loss,
                r.g_loss,
                r.g_fm,
                r.g_entropy,
                r.g_low_density,
                r.test_errors,
                r.test_error_rate,
                r.ratio_true,
                r.ratio_fake,
                r.max_gen_logp
            ));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, TrainError> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if i == 0 || line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 11 {
                return Err(TrainError::Checkpoint(format!(
                    "log line {}: expected 11 fields",
                    i + 1
                )));
            }
            let num = |s: &str| {
                f64::from_str(s).map_err(|e| TrainError::Checkpoint(format!("log line {}: {e}", i + 1)))
            };
            records.push(LogRecord {
                step: usize::from_str(f[0])
                    .map_err(|e| TrainError::Checkpoint(format!("log line {}: {e}", i + 1)))?,
                d_loss: num(f[1])?,
                g_loss: num(f[2])?,
                g_fm: num(f[3])?,
                g_entropy: num(f[4])?,
                g_low_density: num(f[5])?,
                test_errors: usize::from_str(f[6])
                    .map_err(|e| TrainError::Checkpoint(format!("log line {}: {e}", i + 1)))?,
                test_error_rate: num(f[7])?,
                ratio_true: num(f[8])?,
                ratio_fake: num(f[9])?,
                max_gen_logp: num(f[10])?,
            });
        }
        Ok(Self {
            records,
            eps_log: 0.0,
        })
    }
}

/// Independent deterministic seed streams derived from the run seed.
fn subseed(seed: u64, salt: u64) -> u64 {
    // splitmix64 over seed ^ salt
    let mut z = (seed ^ salt).wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

const SALT_DATA: u64 = 0x01;
const SALT_SPLIT: u64 = 0x02;
const SALT_INIT: u64 = 0x03;
const SALT_BATCH: u64 = 0x04;
const SALT_GEN: u64 = 0x05;
const SALT_EVAL: u64 = 0x06;

/// Generates and splits the dataset named by the config, all randomness
/// derived from `seed`.
pub fn make_dataset(cfg: &DatasetConfig, seed: u64) -> Result<Dataset, TrainError> {
    let raw = match cfg.kind {
        DatasetKind::FourSpins => {
            four_spins(cfg.n_per_class, cfg.noise_sigma, subseed(seed, SALT_DATA))?
        }
        DatasetKind::TwoCircles => two_circles(
            cfg.n_per_class,
            (cfg.circle_radii[0], cfg.circle_radii[1]),
            cfg.noise_sigma,
            subseed(seed, SALT_DATA),
        )?,
    };
    let mut ds = split(
        &raw.labeled,
        cfg.n_labeled_per_class,
        cfg.test_fraction,
        subseed(seed, SALT_SPLIT),
    )?;
    if cfg.pad_fraction != crate::datasets::DEFAULT_PAD_FRACTION {
        let all = ds.all_points();
        ds.bounds = bounding_box(&all, cfg.pad_fraction)?;
    }
    Ok(ds)
}

/// Fits the frozen density model on the run's training inputs.
pub fn fit_density(config: &TrainConfig, dataset: &Dataset) -> Result<DensityModel, TrainError> {
    let rule = if config.train.kde_bandwidth > 0.0 {
        BandwidthRule::Fixed(config.train.kde_bandwidth)
    } else {
        BandwidthRule::Scott
    };
    Ok(fit_kde(&dataset.train_points(), rule)?)
}

fn check_finite(v: f64, step: usize, context: &str) -> Result<(), TrainError> {
    if !v.is_finite() {
        return Err(TrainError::NanLoss {
            step,
            context: format!("{context} = {v}"),
        });
    }
    Ok(())
}

/// Alternating minimax training. One discriminator update on fresh batches,
/// then one generator (+ encoder) update; oracle mode draws complement
/// samples instead and skips generator updates. Deterministic under
/// `config.train.seed`.
pub fn train(
    config: &TrainConfig,
    dataset: &Dataset,
    density: &DensityModel,
) -> Result<(ModelBundle, TrainLog), TrainError> {
    config
        .loss
        .validate()
        .map_err(|e| TrainError::Config(e.to_string()))?;
    if dataset.labeled.is_empty() || dataset.unlabeled.is_empty() {
        return Err(TrainError::Config(
            "dataset needs labeled and unlabeled points".into(),
        ));
    }
    let seed = config.train.seed;
    let mut init_rng = ChaCha8Rng::seed_from_u64(subseed(seed, SALT_INIT));
    let mut batch_rng = ChaCha8Rng::seed_from_u64(subseed(seed, SALT_BATCH));
    let mut gen_rng = ChaCha8Rng::seed_from_u64(subseed(seed, SALT_GEN));
    let mut eval_rng = ChaCha8Rng::seed_from_u64(subseed(seed, SALT_EVAL));

    let k = dataset.num_classes;
    let mut disc = Discriminator::new(k, config.model.feature_dim, &config.model.hidden, &mut init_rng);
    let mut gen = Generator::new(
        config.model.latent_dim,
        &config.model.hidden,
        dataset.bounds,
        &mut init_rng,
    );
    let use_vi = config.loss.w_ent_gen > 0.0 && config.loss.entropy_method == EntropyMethod::Vi;
    let mut enc = if use_vi {
        Some(Encoder::new(
            config.model.latent_dim,
            &config.model.hidden,
            config.model.variance_cap,
            &mut init_rng,
        ))
    } else {
        None
    };

    let eps_log = density.self_quantile_threshold(config.train.q_centile)?;
    let oracle_mode = config.train.generator_mode == GeneratorMode::OracleComplement;
    let oracle_radius = if config.train.oracle_radius > 0.0 {
        config.train.oracle_radius
    } else if oracle_mode {
        2.0 * median_nn_distance(&dataset.unlabeled)
    } else {
        0.0
    };

    let adam = AdamConfig {
        lr: config.train.lr,
        beta1: config.train.beta1,
        beta2: config.train.beta2,
        eps: 1e-8,
    };
    let mut d_state = AdamState::new();
    let mut g_state = AdamState::new();
    let mut e_state = AdamState::new();

    let mut log = TrainLog {
        records: Vec::new(),
        eps_log,
    };

    for step in 0..config.train.steps {
        // fresh minibatches: full labeled set, sampled unlabeled, generated
        let unl_batch: Vec<Point> = dataset
            .unlabeled
            .iter()
            .copied()
            .choose_multiple(&mut batch_rng, config.train.batch_unlabeled.min(dataset.unlabeled.len()));
        let generated: Vec<Point> = if oracle_mode {
            oracle_complement_sampler(
                &dataset.bounds,
                &dataset.unlabeled,
                oracle_radius,
                config.train.batch_generated,
                &mut gen_rng,
            )?
        } else {
            gen.generate(config.train.batch_generated, &mut gen_rng)
        };

        // discriminator update
        let d_loss_val = {
            let mut tape = Tape::new();
            let db = disc.bind(&mut tape);
            let loss = discriminator_loss(
                &mut tape,
                &db,
                &dataset.labeled,
                &unl_batch,
                &generated,
                config.loss.w_cond_ent,
            )?;
            let v = tape.scalar_value(loss.total);
            check_finite(v, step, "discriminator loss")?;
            tape.backward(loss.total)?;
            let grads: Vec<Vec<f64>> = db
                .param_tensors()
                .iter()
                .map(|&t| tape.grad(t).to_vec())
                .collect();
            let mut params = disc.params_mut();
            let mut slices: Vec<&mut [f64]> =
                params.iter_mut().map(|p| p.values.as_mut_slice()).collect();
            let grad_refs: Vec<&[f64]> = grads.iter().map(|g| g.as_slice()).collect();
            adam_step(&mut slices, &grad_refs, &mut d_state, &adam);
            v
        };

        // generator (+ encoder) update
        let (g_loss_val, g_fm, g_ent, g_ld) = if oracle_mode {
            (0.0, 0.0, 0.0, 0.0)
        } else {
            let mut tape = Tape::new();
            let db = disc.bind(&mut tape);
            let gb = gen.bind(&mut tape);
            let eb = enc.as_ref().map(|e| e.bind(&mut tape));
            let z_vals = gen.sample_latent(config.train.batch_generated, &mut gen_rng);
            let z = tape.tensor(z_vals, &[config.train.batch_generated, config.model.latent_dim])?;
            let x = gb.forward(&mut tape, z)?;
            let gl = generator_loss(
                &mut tape,
                &db,
                eb.as_ref(),
                density,
                &config.loss,
                x,
                Some(z),
                &unl_batch,
                eps_log,
            )?;
            let v = tape.scalar_value(gl.total);
            check_finite(v, step, "generator loss")?;
            tape.backward(gl.total)?;

            let g_grads: Vec<Vec<f64>> = gb
                .param_tensors()
                .iter()
                .map(|&t| tape.grad(t).to_vec())
                .collect();
            {
                let mut params = gen.params_mut();
                let mut slices: Vec<&mut [f64]> =
                    params.iter_mut().map(|p| p.values.as_mut_slice()).collect();
                let grad_refs: Vec<&[f64]> = g_grads.iter().map(|g| g.as_slice()).collect();
                adam_step(&mut slices, &grad_refs, &mut g_state, &adam);
            }
            if let (Some(e), Some(eb)) = (enc.as_mut(), eb.as_ref()) {
                let e_grads: Vec<Vec<f64>> = eb
                    .param_tensors()
                    .iter()
                    .map(|&t| tape.grad(t).to_vec())
                    .collect();
                let mut params = e.params_mut();
                let mut slices: Vec<&mut [f64]> =
                    params.iter_mut().map(|p| p.values.as_mut_slice()).collect();
                let grad_refs: Vec<&[f64]> = e_grads.iter().map(|g| g.as_slice()).collect();
                adam_step(&mut slices, &grad_refs, &mut e_state, &adam);
            }
            (v, gl.fm, gl.entropy, gl.low_density)
        };

        let at_eval = (step + 1) % config.train.eval_interval == 0 || step + 1 == config.train.steps;
        if at_eval {
            let (test_errors, test_error_rate) = evaluate(&disc, &dataset.test);
            let eval_gen: Vec<Point> = if oracle_mode {
                oracle_complement_sampler(
                    &dataset.bounds,
                    &dataset.unlabeled,
                    oracle_radius,
                    dataset.test.len().max(1),
                    &mut eval_rng,
                )?
            } else {
                gen.generate(dataset.test.len().max(1), &mut eval_rng)
            };
            let test_pts: Vec<Point> = dataset.test.iter().map(|&(p, _)| p).collect();
            let ratios = assumption_ratios(&disc, &test_pts, &eval_gen)?;
            let max_gen_logp = eval_gen
                .iter()
                .map(|&p| density.log_density2(p))
                .fold(f64::NEG_INFINITY, f64::max);
            log.records.push(LogRecord {
                step: step + 1,
                d_loss: d_loss_val,
                g_loss: g_loss_val,
                g_fm,
                g_entropy: g_ent,
                g_low_density: g_ld,
                test_errors,
                test_error_rate,
                ratio_true: ratios.ratio_true,
                ratio_fake: ratios.ratio_fake,
                max_gen_logp,
            });
        }
    }

    Ok((
        ModelBundle {
            discriminator: disc,
            generator: gen,
            encoder: enc,
        },
        log,
    ))
}

/// Trains a discriminator on the labeled log-likelihood alone (the
/// supervised objective), for the perfect-solution construction.
pub fn train_supervised(
    num_classes: usize,
    feature_dim: usize,
    hidden: &[usize],
    labeled: &[(Point, usize)],
    steps: usize,
    lr: f64,
    seed: u64,
) -> Result<Discriminator, TrainError> {
    if labeled.is_empty() {
        return Err(TrainError::Config("empty labeled set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(subseed(seed, SALT_INIT));
    let mut disc = Discriminator::new(num_classes, feature_dim, hidden, &mut rng);
    let adam = AdamConfig {
        lr,
        beta1: 0.5,
        beta2: 0.999,
        eps: 1e-8,
    };
    let mut state = AdamState::new();
    let pts: Vec<Point> = labeled.iter().map(|&(p, _)| p).collect();
    let mut onehot = vec![0.0; labeled.len() * num_classes];
    for (i, &(_, y)) in labeled.iter().enumerate() {
        onehot[i * num_classes + y] = 1.0;
    }
    for step in 0..steps {
        let mut tape = Tape::new();
        let db = disc.bind(&mut tape);
        let x = points_leaf(&mut tape, &pts);
        let logits = db.logits(&mut tape, x)?;
        let s = tape.logsumexp(logits, 1)?;
        let mask = tape.tensor(onehot.clone(), &[labeled.len(), num_classes])?;
        let picked = tape.mul(logits, mask)?;
        let ly = tape.sum(picked, Some(1))?;
        let diff = tape.sub(ly, s)?;
        let mean = tape.mean(diff, None)?;
        let loss = tape.neg(mean);
        check_finite(tape.scalar_value(loss), step, "supervised loss")?;
        tape.backward(loss)?;
        let grads: Vec<Vec<f64>> = db
            .param_tensors()
            .iter()
            .map(|&t| tape.grad(t).to_vec())
            .collect();
        let mut params = disc.params_mut();
        let mut slices: Vec<&mut [f64]> =
            params.iter_mut().map(|p| p.values.as_mut_slice()).collect();
        let grad_refs: Vec<&[f64]> = grads.iter().map(|g| g.as_slice()).collect();
        adam_step(&mut slices, &grad_refs, &mut state, &adam);
    }
    Ok(disc)
}

// ── evaluation ────────────────────────────────────────────────────────────

/// Misclassification count and rate of the conditional argmax rule
/// (ties go to the lowest class index).
pub fn evaluate(disc: &Discriminator, test: &[(Point, usize)]) -> (usize, f64) {
    if test.is_empty() {
        return (0, 0.0);
    }
    let errors = test
        .iter()
        .filter(|&&(p, y)| disc.predict(p) != y)
        .count();
    (errors, errors as f64 / test.len() as f64)
}

/// Joint true/fake accuracy: test inputs should score `p_fake < 0.5`,
/// generated inputs `p_fake > 0.5`.
pub fn true_fake_accuracy(disc: &Discriminator, real: &[Point], fake: &[Point]) -> f64 {
    let correct_real = real.iter().filter(|&&p| disc.p_fake(p) < 0.5).count();
    let correct_fake = fake.iter().filter(|&&p| disc.p_fake(p) > 0.5).count();
    (correct_real + correct_fake) as f64 / (real.len() + fake.len()) as f64
}

/// One cell of a dense evaluation grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridCell {
    pub x1: f64,
    pub x2: f64,
    pub class: usize,
    pub p_fake: f64,
}

/// Dense class-prediction / fake-probability evaluation over the box;
/// `resolution^2` cells, row-major over (x1, x2) steps.
pub fn boundary_grid(
    disc: &Discriminator,
    bounds: &InputBox,
    resolution: usize,
) -> Result<Vec<GridCell>, TrainError> {
    if resolution < 2 {
        return Err(TrainError::Config(format!("resolution {resolution} < 2")));
    }
    let mut out = Vec::with_capacity(resolution * resolution);
    for i in 0..resolution {
        for j in 0..resolution {
            let x1 = bounds.min[0]
                + (bounds.max[0] - bounds.min[0]) * i as f64 / (resolution - 1) as f64;
            let x2 = bounds.min[1]
                + (bounds.max[1] - bounds.min[1]) * j as f64 / (resolution - 1) as f64;
            let logits = disc.logits_values(&[[x1, x2]]);
            out.push(GridCell {
                x1,
                x2,
                class: crate::models::argmax(&logits),
                p_fake: crate::models::p_fake_from_logits(&logits),
            });
        }
    }
    Ok(out)
}

/// Feature-space analog for 2D feature nets: argmax class and fake
/// probability over a grid of raw feature points.
pub fn feature_grid(
    disc: &Discriminator,
    lo: [f64; 2],
    hi: [f64; 2],
    resolution: usize,
) -> Result<Vec<GridCell>, TrainError> {
    if disc.feature_dim != 2 {
        return Err(TrainError::Config(format!(
            "feature grid needs d_f = 2, model has {}",
            disc.feature_dim
        )));
    }
    if resolution < 2 {
        return Err(TrainError::Config(format!("resolution {resolution} < 2")));
    }
    let mut out = Vec::with_capacity(resolution * resolution);
    for i in 0..resolution {
        for j in 0..resolution {
            let f1 = lo[0] + (hi[0] - lo[0]) * i as f64 / (resolution - 1) as f64;
            let f2 = lo[1] + (hi[1] - lo[1]) * j as f64 / (resolution - 1) as f64;
            let logits = disc.logits_for_features(&[f1, f2]);
            out.push(GridCell {
                x1: f1,
                x2: f2,
                class: crate::models::argmax(&logits),
                p_fake: crate::models::p_fake_from_logits(&logits),
            });
        }
    }
    Ok(out)
}

pub fn grid_to_csv(grid: &[GridCell]) -> String {
    let mut out = String::from("x1,x2,class,p_fake\n");
    for c in grid {
        out.push_str(&format!("{},{},{},{}\n", c.x1, c.x2, c.class, c.p_fake));
    }
    out
}

/// Fraction of grid cells adjacent to a different predicted class whose
/// fake probability exceeds one half (the boundary-in-fake-region check).
pub fn boundary_fake_fraction(grid: &[GridCell], resolution: usize) -> f64 {
    assert_eq!(grid.len(), resolution * resolution);
    let idx = |i: usize, j: usize| i * resolution + j;
    let mut boundary = 0usize;
    let mut fake = 0usize;
    for i in 0..resolution {
        for j in 0..resolution {
            let c = grid[idx(i, j)].class;
            let mut is_boundary = false;
            if i > 0 && grid[idx(i - 1, j)].class != c {
                is_boundary = true;
            }
            if j > 0 && grid[idx(i, j - 1)].class != c {
                is_boundary = true;
            }
            if i + 1 < resolution && grid[idx(i + 1, j)].class != c {
                is_boundary = true;
            }
            if j + 1 < resolution && grid[idx(i, j + 1)].class != c {
                is_boundary = true;
            }
            if is_boundary {
                boundary += 1;
                if grid[idx(i, j)].p_fake > 0.5 {
                    fake += 1;
                }
            }
        }
    }
    if boundary == 0 {
        return 1.0;
    }
    fake as f64 / boundary as f64
}

/// Maximum log-density over `n` generated samples (the "max log-p"
/// diagnostic).
pub fn max_generated_logp(
    gen: &Generator,
    density: &DensityModel,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> f64 {
    assert!(n >= 1);
    gen.generate(n, rng)
        .iter()
        .map(|&p| density.log_density2(p))
        .fold(f64::NEG_INFINITY, f64::max)
}

// ── checkpoints ───────────────────────────────────────────────────────────

/// Textual checkpoint: model hyperparameters plus every named parameter.
pub fn save_bundle(bundle: &ModelBundle) -> String {
    let disc = &bundle.discriminator;
    let gen = &bundle.generator;
    let hidden: Vec<String> = disc.feature_net.layers[..disc.feature_net.layers.len() - 1]
        .iter()
        .map(|l| l.w.shape[1].to_string())
        .collect();
    let mut out = String::from("bundle v1\n");
    out.push_str(&format!("num_classes {}\n", disc.num_classes));
    out.push_str(&format!("feature_dim {}\n", disc.feature_dim));
    out.push_str(&format!("latent_dim {}\n", gen.latent_dim));
    out.push_str(&format!("hidden {}\n", hidden.join(" ")));
    out.push_str(&format!(
        "bounds {} {} {} {}\n",
        gen.bounds.min[0], gen.bounds.min[1], gen.bounds.max[0], gen.bounds.max[1]
    ));
    match &bundle.encoder {
        Some(e) => out.push_str(&format!("encoder {}\n", e.variance_cap)),
        None => out.push_str("encoder absent\n"),
    }
    let mut params: Vec<&ParamTensor> = disc.params();
    params.extend(gen.params());
    if let Some(e) = &bundle.encoder {
        params.extend(e.params());
    }
    out.push_str(&serialize_params(&params));
    out
}

pub fn load_bundle(text: &str) -> Result<ModelBundle, TrainError> {
    let mut lines = text.lines();
    let header = |lines: &mut std::str::Lines<'_>, tag: &str| -> Result<String, TrainError> {
        let line = lines
            .next()
            .ok_or_else(|| TrainError::Checkpoint("truncated header".into()))?;
        line.strip_prefix(tag)
            .map(|r| r.trim().to_string())
            .ok_or_else(|| TrainError::Checkpoint(format!("expected {tag:?}, got {line:?}")))
    };
    header(&mut lines, "bundle v1")?;
    let num_classes: usize = header(&mut lines, "num_classes ")?
        .parse()
        .map_err(|e| TrainError::Checkpoint(format!("num_classes: {e}")))?;
    let feature_dim: usize = header(&mut lines, "feature_dim ")?
        .parse()
        .map_err(|e| TrainError::Checkpoint(format!("feature_dim: {e}")))?;
    let latent_dim: usize = header(&mut lines, "latent_dim ")?
        .parse()
        .map_err(|e| TrainError::Checkpoint(format!("latent_dim: {e}")))?;
    let hidden: Vec<usize> = header(&mut lines, "hidden ")?
        .split_whitespace()
        .map(|t| t.parse())
        .collect::<Result<_, _>>()
        .map_err(|e| TrainError::Checkpoint(format!("hidden: {e}")))?;
    let bounds_vals: Vec<f64> = header(&mut lines, "bounds ")?
        .split_whitespace()
        .map(|t| t.parse())
        .collect::<Result<_, _>>()
        .map_err(|e| TrainError::Checkpoint(format!("bounds: {e}")))?;
    if bounds_vals.len() != 4 {
        return Err(TrainError::Checkpoint("bounds needs 4 numbers".into()));
    }
    let bounds = InputBox::new(
        [bounds_vals[0], bounds_vals[1]],
        [bounds_vals[2], bounds_vals[3]],
    )?;
    let enc_line = header(&mut lines, "encoder ")?;
    let rest: String = lines.collect::<Vec<_>>().join("\n");
    let loaded = parse_params(&rest)?;

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut disc = Discriminator::new(num_classes, feature_dim, &hidden, &mut rng);
    load_params(&mut disc.params_mut(), &loaded)?;
    let mut gen = Generator::new(latent_dim, &hidden, bounds, &mut rng);
    load_params(&mut gen.params_mut(), &loaded)?;
    let encoder = if enc_line == "absent" {
        None
    } else {
        let cap: f64 = enc_line
            .parse()
            .map_err(|e| TrainError::Checkpoint(format!("encoder: {e}")))?;
        let mut e = Encoder::new(latent_dim, &hidden, cap, &mut rng);
        load_params(&mut e.params_mut(), &loaded)?;
        Some(e)
    };
    Ok(ModelBundle {
        discriminator: disc,
        generator: gen,
        encoder,
    })
}
