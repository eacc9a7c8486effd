//! Loss terms: the (K+1)-class discriminator objective with optional
//! conditional entropy, and the generator objective (feature matching +
//! entropy term + low-density term), plus the KL-decomposition identity
//! relating the generator objective to a target complement distribution.

use crate::datasets::Point;
use crate::density::DensityModel;
use crate::models::{DiscBinding, EncBinding};
use crate::tensor::{Tape, Tensor, TensorError};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("empty {0} batch")]
    EmptyBatch(&'static str),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropyMethod {
    None,
    Vi,
    Pt,
}

/// Term weights for the generator and discriminator objectives. The base
/// formulation carries unit coefficients; zeroing weights reproduces the
/// ablation configurations (FM, FM+LD, FM+PT, ...).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w_fm: f64,
    pub w_ent_gen: f64,
    pub w_ld: f64,
    pub w_cond_ent: f64,
    pub entropy_method: EntropyMethod,
}

impl LossWeights {
    pub fn fm_only() -> Self {
        Self {
            w_fm: 1.0,
            w_ent_gen: 0.0,
            w_ld: 0.0,
            w_cond_ent: 0.0,
            entropy_method: EntropyMethod::None,
        }
    }

    pub fn validate(&self) -> Result<(), ObjectiveError> {
        for (name, w) in [
            ("w_fm", self.w_fm),
            ("w_ent_gen", self.w_ent_gen),
            ("w_ld", self.w_ld),
            ("w_cond_ent", self.w_cond_ent),
        ] {
            if w < 0.0 || !w.is_finite() {
                return Err(ObjectiveError::Config(format!("{name} = {w}")));
            }
        }
        if self.w_ent_gen > 0.0 && self.entropy_method == EntropyMethod::None {
            return Err(ObjectiveError::Config(
                "w_ent_gen > 0 with no entropy method selected".into(),
            ));
        }
        Ok(())
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::fm_only()
    }
}

/// Flattens 2D points into a `[n, 2]` leaf.
pub fn points_leaf(tape: &mut Tape, pts: &[Point]) -> Tensor {
    let flat: Vec<f64> = pts.iter().flat_map(|p| p.iter().copied()).collect();
    tape.tensor(flat, &[pts.len(), 2]).expect("points leaf")
}

// ── discriminator objective ───────────────────────────────────────────────

/// Scalar loss node plus the per-term values (reported positively as
/// negative log-likelihoods; `cond_entropy` is the raw `sum p log p` mean).
pub struct DiscriminatorLoss {
    pub total: Tensor,
    pub labeled_nll: f64,
    pub unlabeled_nll: f64,
    pub generated_nll: f64,
    pub cond_entropy: f64,
}

/// Negated maximization objective of the (K+1)-class discriminator:
/// labeled log-likelihood + unlabeled true-mass + generated fake-mass,
/// plus `w_cond_ent` times the conditional entropy summand on unlabeled
/// data. All log-probabilities go through stable logsumexp/softplus.
pub fn discriminator_loss(
    tape: &mut Tape,
    disc: &DiscBinding,
    labeled: &[(Point, usize)],
    unlabeled: &[Point],
    generated: &[Point],
    w_cond_ent: f64,
) -> Result<DiscriminatorLoss, ObjectiveError> {
    if labeled.is_empty() {
        return Err(ObjectiveError::EmptyBatch("labeled"));
    }
    if unlabeled.is_empty() {
        return Err(ObjectiveError::EmptyBatch("unlabeled"));
    }
    if generated.is_empty() {
        return Err(ObjectiveError::EmptyBatch("generated"));
    }
    let num_classes = tape.shape(disc.w)[0];

    // labeled: mean log P(y | x, y <= K) = mean (l_y - logsumexp(l))
    let pts: Vec<Point> = labeled.iter().map(|&(p, _)| p).collect();
    let xl = points_leaf(tape, &pts);
    let logits_l = disc.logits(tape, xl)?;
    let s_l = tape.logsumexp(logits_l, 1)?;
    let mut onehot = vec![0.0; labeled.len() * num_classes];
    for (i, &(_, y)) in labeled.iter().enumerate() {
        onehot[i * num_classes + y] = 1.0;
    }
    let mask = tape.tensor(onehot, &[labeled.len(), num_classes])?;
    let picked = tape.mul(logits_l, mask)?;
    let ly = tape.sum(picked, Some(1))?;
    let diff = tape.sub(ly, s_l)?;
    let lab_term = tape.mean(diff, None)?;

    // unlabeled: mean log P(y <= K | x) = mean (s - softplus(s))
    let xu = points_leaf(tape, unlabeled);
    let logits_u = disc.logits(tape, xu)?;
    let s_u = tape.logsumexp(logits_u, 1)?;
    let sp_u = tape.softplus(s_u);
    let true_mass = tape.sub(s_u, sp_u)?;
    let unl_term = tape.mean(true_mass, None)?;

    // generated: mean log P(K+1 | x) = mean (-softplus(s))
    let xg = points_leaf(tape, generated);
    let logits_g = disc.logits(tape, xg)?;
    let s_g = tape.logsumexp(logits_g, 1)?;
    let sp_g = tape.softplus(s_g);
    let neg_sp = tape.neg(sp_g);
    let gen_term = tape.mean(neg_sp, None)?;

    // conditional entropy summand: mean over x of sum_k P(k|x) log P(k|x),
    // over the full (K+1)-class posterior restricted to the K true classes
    let neg_sp_u = tape.neg(sp_u);
    let log_post = tape.add_col(logits_u, neg_sp_u)?;
    let post = tape.exp(log_post);
    let plogp = tape.mul(post, log_post)?;
    let rows = tape.sum(plogp, Some(1))?;
    let ce_term = tape.mean(rows, None)?;

    let mut objective = tape.add(lab_term, unl_term)?;
    objective = tape.add(objective, gen_term)?;
    if w_cond_ent != 0.0 {
        let weighted = tape.scale(ce_term, w_cond_ent);
        objective = tape.add(objective, weighted)?;
    }
    let total = tape.neg(objective);

    Ok(DiscriminatorLoss {
        total,
        labeled_nll: -tape.scalar_value(lab_term),
        unlabeled_nll: -tape.scalar_value(unl_term),
        generated_nll: -tape.scalar_value(gen_term),
        cond_entropy: tape.scalar_value(ce_term),
    })
}

/// `sum_k p_k log p_k` over a probability vector, with `0 log 0 = 0`.
pub fn conditional_entropy(probs: &[f64]) -> f64 {
    probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum()
}

// ── generator objective terms ─────────────────────────────────────────────

/// Squared L2 distance between batch-mean features of generated and
/// unlabeled data.
pub fn feature_matching_loss(
    tape: &mut Tape,
    disc: &DiscBinding,
    generated_x: Tensor,
    unlabeled: &[Point],
) -> Result<Tensor, ObjectiveError> {
    if tape.shape(generated_x)[0] == 0 {
        return Err(ObjectiveError::EmptyBatch("generated"));
    }
    if unlabeled.is_empty() {
        return Err(ObjectiveError::EmptyBatch("unlabeled"));
    }
    let f_g = disc.features(tape, generated_x)?;
    let xu = points_leaf(tape, unlabeled);
    let f_u = disc.features(tape, xu)?;
    let m_g = tape.mean(f_g, Some(0))?;
    let m_u = tape.mean(f_u, Some(0))?;
    let d = tape.sub(m_g, m_u)?;
    let sq = tape.square(d);
    Ok(tape.sum(sq, None)?)
}

/// Mean squared pairwise cosine similarity over a feature batch `[N, d]`,
/// diagonal excluded; norms get a 1e-12 guard.
pub fn pull_away_term(tape: &mut Tape, features: Tensor) -> Result<Tensor, ObjectiveError> {
    let shape = tape.shape(features).to_vec();
    if shape.len() != 2 {
        return Err(ObjectiveError::InvalidArgument(format!(
            "features shape {shape:?}"
        )));
    }
    let n = shape[0];
    if n < 2 {
        return Err(ObjectiveError::InvalidArgument(format!(
            "pull-away term needs N >= 2, got {n}"
        )));
    }
    let sq = tape.square(features);
    let sumsq = tape.sum(sq, Some(1))?;
    let raw_norms = tape.sqrt(sumsq);
    let norms = tape.add_const(raw_norms, 1e-12);
    let one = tape.scalar(1.0);
    let inv = tape.div(one, norms)?;
    let normalized = tape.scale_rows(features, inv)?;
    let nt = tape.transpose(normalized)?;
    let cos = tape.matmul(normalized, nt)?;
    let cos_sq = tape.square(cos);
    let mut mask = vec![1.0; n * n];
    for i in 0..n {
        mask[i * n + i] = 0.0;
    }
    let mask = tape.tensor(mask, &[n, n])?;
    let off_diag = tape.mul(cos_sq, mask)?;
    let total = tape.sum(off_diag, None)?;
    Ok(tape.scale(total, 1.0 / (n as f64 * (n as f64 - 1.0))))
}

/// Variational upper bound on the negative generator entropy:
/// `-mean log q(z | x)` over paired latents and generator outputs.
pub fn vi_loss(
    tape: &mut Tape,
    enc: &EncBinding,
    z: Tensor,
    x: Tensor,
) -> Result<Tensor, ObjectiveError> {
    let (zn, xn) = (tape.shape(z)[0], tape.shape(x)[0]);
    if zn != xn {
        return Err(ObjectiveError::LengthMismatch(format!(
            "{zn} latents vs {xn} samples"
        )));
    }
    if zn == 0 {
        return Err(ObjectiveError::EmptyBatch("latent"));
    }
    let (mu, sigma) = enc.encode(tape, x)?;
    let diff = tape.sub(z, mu)?;
    let dsq = tape.square(diff);
    let s2 = tape.square(sigma);
    let denom = tape.scale(s2, 2.0);
    let quad = tape.div(dsq, denom)?;
    let ln_sigma = tape.log(sigma)?;
    let partial = tape.add(quad, ln_sigma)?;
    let neg_logq = tape.add_const(partial, 0.5 * (2.0 * PI).ln());
    let rows = tape.sum(neg_logq, Some(1))?;
    Ok(tape.mean(rows, None)?)
}

/// Gate applied per generated sample: values and gradient rows pass through
/// only where `log p(x) > eps_log`; the gate itself is a frozen constant.
pub fn gated_log_density_rows(
    log_ps: &[f64],
    grads: &[Point],
    eps_log: f64,
) -> (Vec<f64>, Vec<f64>) {
    let mut vals = Vec::with_capacity(log_ps.len());
    let mut jac = Vec::with_capacity(log_ps.len() * 2);
    for (lp, g) in log_ps.iter().zip(grads) {
        if *lp > eps_log {
            vals.push(*lp);
            jac.extend_from_slice(g);
        } else {
            vals.push(0.0);
            jac.extend_from_slice(&[0.0, 0.0]);
        }
    }
    (vals, jac)
}

/// Low-density enforcement: mean over the batch of `log p(x) * gate(x)`,
/// with gradient flowing only through the density model's closed-form input
/// gradient where the gate is open.
pub fn low_density_loss(
    tape: &mut Tape,
    density: &DensityModel,
    generated_x: Tensor,
    eps_log: f64,
) -> Result<Tensor, ObjectiveError> {
    let shape = tape.shape(generated_x).to_vec();
    if shape.len() != 2 || shape[1] != 2 {
        return Err(ObjectiveError::InvalidArgument(format!(
            "generated batch shape {shape:?}"
        )));
    }
    let n = shape[0];
    if n == 0 {
        return Err(ObjectiveError::EmptyBatch("generated"));
    }
    let vals = tape.values(generated_x);
    let mut log_ps = Vec::with_capacity(n);
    let mut grads = Vec::with_capacity(n);
    for i in 0..n {
        let p = [vals[2 * i], vals[2 * i + 1]];
        log_ps.push(density.log_density2(p));
        grads.push(density.log_density_grad2(p));
    }
    let (gated, jac) = gated_log_density_rows(&log_ps, &grads, eps_log);
    let node = tape.rowwise_external(generated_x, gated, jac)?;
    Ok(tape.mean(node, None)?)
}

// ── combined generator objective ──────────────────────────────────────────

pub struct GeneratorLoss {
    pub total: Tensor,
    pub fm: f64,
    pub entropy: f64,
    pub low_density: f64,
}

/// Weighted sum of the active generator terms. Inactive terms (weight zero)
/// are skipped entirely, so an FM-only configuration is exactly the feature
/// matching loss.
#[allow(clippy::too_many_arguments)]
pub fn generator_loss(
    tape: &mut Tape,
    disc: &DiscBinding,
    enc: Option<&EncBinding>,
    density: &DensityModel,
    weights: &LossWeights,
    generated_x: Tensor,
    z: Option<Tensor>,
    unlabeled: &[Point],
    eps_log: f64,
) -> Result<GeneratorLoss, ObjectiveError> {
    weights.validate()?;
    let mut total = tape.scalar(0.0);
    let mut fm = 0.0;
    let mut entropy = 0.0;
    let mut low_density = 0.0;

    if weights.w_fm != 0.0 {
        let term = feature_matching_loss(tape, disc, generated_x, unlabeled)?;
        fm = tape.scalar_value(term);
        let weighted = tape.scale(term, weights.w_fm);
        total = tape.add(total, weighted)?;
    }
    if weights.w_ent_gen != 0.0 {
        let term = match weights.entropy_method {
            EntropyMethod::Vi => {
                let enc = enc.ok_or_else(|| {
                    ObjectiveError::Config("vi entropy selected with no encoder".into())
                })?;
                let z = z.ok_or_else(|| {
                    ObjectiveError::Config("vi entropy selected with no latent batch".into())
                })?;
                vi_loss(tape, enc, z, generated_x)?
            }
            EntropyMethod::Pt => {
                let f_g = disc.features(tape, generated_x)?;
                pull_away_term(tape, f_g)?
            }
            EntropyMethod::None => unreachable!("validate() rejects this"),
        };
        entropy = tape.scalar_value(term);
        let weighted = tape.scale(term, weights.w_ent_gen);
        total = tape.add(total, weighted)?;
    }
    if weights.w_ld != 0.0 {
        let term = low_density_loss(tape, density, generated_x, eps_log)?;
        low_density = tape.scalar_value(term);
        let weighted = tape.scale(term, weights.w_ld);
        total = tape.add(total, weighted)?;
    }

    Ok(GeneratorLoss {
        total,
        fm,
        entropy,
        low_density,
    })
}

// ── KL decomposition identity ─────────────────────────────────────────────

#[derive(Debug, Clone, Copy)]
pub struct KlDecomposition {
    pub lhs: f64,
    pub rhs: f64,
    pub abs_diff: f64,
    pub escaped_support: bool,
}

/// Checks `KL(p_G || p*) = -H(p_G) + E log p 1[p > eps]
///                        + E (1[p > eps] log Z - 1[p <= eps] log C)`
/// on finite discrete supports, with the target complement distribution
/// `p* = 1/(Z p)` above the threshold and the constant `C` below, both
/// restricted to `support_mask`. `Z` is solved from `C` so `p*` normalizes.
/// Both sides are computed independently; generator mass outside the mask
/// makes the KL infinite and is flagged.
pub fn kl_decomposition_check(
    p_g: &[f64],
    p: &[f64],
    eps: f64,
    support_mask: &[bool],
    c_const: f64,
) -> Result<KlDecomposition, ObjectiveError> {
    let n = p_g.len();
    if p.len() != n || support_mask.len() != n {
        return Err(ObjectiveError::LengthMismatch(format!(
            "{n} vs {} vs {}",
            p.len(),
            support_mask.len()
        )));
    }
    if n == 0 {
        return Err(ObjectiveError::EmptyBatch("support"));
    }
    for (name, dist) in [("p_g", p_g), ("p", p)] {
        let total: f64 = dist.iter().sum();
        if (total - 1.0).abs() > 1e-9 || dist.iter().any(|&v| v < 0.0) {
            return Err(ObjectiveError::InvalidArgument(format!(
                "{name} is not a distribution (sum {total})"
            )));
        }
    }
    if eps <= 0.0 || c_const <= 0.0 {
        return Err(ObjectiveError::InvalidArgument(format!(
            "eps {eps}, C {c_const} must be positive"
        )));
    }

    let high: Vec<usize> = (0..n).filter(|&i| support_mask[i] && p[i] > eps).collect();
    let low: Vec<usize> = (0..n).filter(|&i| support_mask[i] && p[i] <= eps).collect();
    if high.is_empty() {
        return Err(ObjectiveError::InvalidArgument(
            "no support atoms above the threshold".into(),
        ));
    }
    let residual = 1.0 - c_const * low.len() as f64;
    if residual <= 0.0 {
        return Err(ObjectiveError::InvalidArgument(format!(
            "C = {c_const} puts mass {:.3} on the low set; cannot normalize",
            c_const * low.len() as f64
        )));
    }
    let z = high.iter().map(|&i| 1.0 / p[i]).sum::<f64>() / residual;

    let escaped = (0..n).any(|i| p_g[i] > 0.0 && !support_mask[i]);

    // LHS: direct KL summation against the constructed p*.
    let lhs = if escaped {
        f64::INFINITY
    } else {
        let mut acc = 0.0;
        for i in 0..n {
            if p_g[i] == 0.0 {
                continue;
            }
            let log_pstar = if p[i] > eps {
                -z.ln() - p[i].ln()
            } else {
                c_const.ln()
            };
            acc += p_g[i] * (p_g[i].ln() - log_pstar);
        }
        acc
    };

    // RHS: the three-term decomposition.
    let neg_entropy: f64 = p_g
        .iter()
        .filter(|&&g| g > 0.0)
        .map(|&g| g * g.ln())
        .sum();
    let gated_logp: f64 = (0..n)
        .filter(|&i| p[i] > eps)
        .map(|i| {
            if p_g[i] > 0.0 {
                p_g[i] * p[i].ln()
            } else {
                0.0
            }
        })
        .sum();
    let normalizer_term: f64 = (0..n)
        .map(|i| {
            if p[i] > eps {
                p_g[i] * z.ln()
            } else {
                -p_g[i] * c_const.ln()
            }
        })
        .sum();
    let rhs = if escaped {
        f64::INFINITY
    } else {
        neg_entropy + gated_logp + normalizer_term
    };

    let abs_diff = if escaped { 0.0 } else { (lhs - rhs).abs() };
    Ok(KlDecomposition {
        lhs,
        rhs,
        abs_diff,
        escaped_support: escaped,
    })
}

/// The target complement distribution itself, for tests and diagnostics:
/// returns `p*` atoms given `p`, mask, threshold and `C`.
pub fn target_complement_distribution(
    p: &[f64],
    eps: f64,
    support_mask: &[bool],
    c_const: f64,
) -> Result<Vec<f64>, ObjectiveError> {
    let n = p.len();
    let high: Vec<usize> = (0..n).filter(|&i| support_mask[i] && p[i] > eps).collect();
    let low: Vec<usize> = (0..n).filter(|&i| support_mask[i] && p[i] <= eps).collect();
    if high.is_empty() {
        return Err(ObjectiveError::InvalidArgument(
            "no support atoms above the threshold".into(),
        ));
    }
    let residual = 1.0 - c_const * low.len() as f64;
    if residual <= 0.0 {
        return Err(ObjectiveError::InvalidArgument("C too large".into()));
    }
    let z = high.iter().map(|&i| 1.0 / p[i]).sum::<f64>() / residual;
    let mut out = vec![0.0; n];
    for i in 0..n {
        if !support_mask[i] {
            continue;
        }
        out[i] = if p[i] > eps {
            1.0 / (z * p[i])
        } else {
            c_const
        };
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{fit_kde, BandwidthRule};
    use crate::models::{Discriminator, Encoder};
    use crate::tensor::grad_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    /// Discriminator whose feature net is the identity on R^2.
    fn identity_disc(num_classes: usize, class_weights: Vec<f64>) -> Discriminator {
        let mut d = Discriminator::new(num_classes, 2, &[], &mut rng(0));
        let layer = &mut d.feature_net.layers[0];
        layer.w.values = vec![1.0, 0.0, 0.0, 1.0];
        layer.b.values = vec![0.0, 0.0];
        d.class_weights.values = class_weights;
        d
    }

    fn small_density() -> DensityModel {
        fit_kde(&[[0.0, 0.0], [0.5, 0.5]], BandwidthRule::Fixed(0.3)).unwrap()
    }

    #[test]
    fn labeled_term_at_even_odds_contributes_log_two() {
        // equal class logits: conditional true-class probability is 1/2
        let d = identity_disc(2, vec![1.0, 0.0, 1.0, 0.0]);
        let mut tape = Tape::new();
        let b = d.bind(&mut tape);
        let loss = discriminator_loss(
            &mut tape,
            &b,
            &[([1.0, 0.0], 0)],
            &[[0.3, 0.1]],
            &[[0.0, 0.5]],
            0.0,
        )
        .unwrap();
        assert!((loss.labeled_nll - 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn generated_term_with_zero_logits_is_log_five() {
        let d = identity_disc(4, vec![0.0; 8]);
        let mut tape = Tape::new();
        let b = d.bind(&mut tape);
        let loss = discriminator_loss(
            &mut tape,
            &b,
            &[([1.0, 0.0], 0)],
            &[[0.3, 0.1]],
            &[[0.2, -0.4]],
            0.0,
        )
        .unwrap();
        // -log P(K+1|x) with all-zero logits over K=4: -log(1/5)
        assert!((loss.generated_nll - 5.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn conditional_entropy_uniform_by_hand() {
        let v = conditional_entropy(&[0.25; 4]);
        assert!((v - (-(4.0f64.ln()))).abs() < 1e-12);
        assert!((v - (-1.386294)).abs() < 1e-6);
        assert_eq!(conditional_entropy(&[1.0, 0.0]), 0.0);
    }

    #[test]
    fn tape_conditional_entropy_matches_value_route() {
        let d = Discriminator::new(3, 8, &[16], &mut rng(1));
        let unlabeled = vec![[0.2, -0.5], [1.1, 0.3], [-0.7, 0.8]];
        let mut tape = Tape::new();
        let b = d.bind(&mut tape);
        let loss = discriminator_loss(
            &mut tape,
            &b,
            &[([0.0, 0.0], 0)],
            &unlabeled,
            &[[0.0, 1.0]],
            1.0,
        )
        .unwrap();
        let by_hand: f64 = unlabeled
            .iter()
            .map(|&x| {
                let post = d.posterior(x);
                conditional_entropy(&post[..3])
            })
            .sum::<f64>()
            / unlabeled.len() as f64;
        assert!((loss.cond_entropy - by_hand).abs() < 1e-12);
    }

    #[test]
    fn discriminator_loss_composes_its_terms() {
        let d = Discriminator::new(4, 8, &[16], &mut rng(2));
        let labeled = vec![([0.1, 0.2], 1), ([-0.3, 0.4], 3)];
        let unlabeled = vec![[0.5, -0.1], [0.0, 0.9]];
        let generated = vec![[1.0, 1.0], [-1.0, -0.5]];
        for w_ce in [0.0, 0.7] {
            let mut tape = Tape::new();
            let b = d.bind(&mut tape);
            let loss =
                discriminator_loss(&mut tape, &b, &labeled, &unlabeled, &generated, w_ce).unwrap();
            let expected = loss.labeled_nll + loss.unlabeled_nll + loss.generated_nll
                - w_ce * loss.cond_entropy;
            assert!((tape.scalar_value(loss.total) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn discriminator_loss_gradient_matches_finite_differences() {
        let d = Discriminator::new(2, 4, &[8], &mut rng(3));
        let shapes: Vec<Vec<usize>> = d.params().iter().map(|p| p.shape.clone()).collect();
        let values: Vec<Vec<f64>> = d.params().iter().map(|p| p.values.clone()).collect();
        let labeled = vec![([0.1, 0.2], 0), ([-0.3, 0.4], 1)];
        let unlabeled = vec![[0.5, -0.1], [0.0, 0.9], [0.2, 0.2]];
        let generated = vec![[1.0, 1.0], [-1.0, -0.5]];
        let err = grad_check(
            |t, leaves| {
                let b = crate::models::DiscBinding {
                    net: crate::models::MlpBinding {
                        layers: vec![(leaves[0], leaves[1]), (leaves[2], leaves[3])],
                        leak: crate::models::LEAKY_SLOPE,
                    },
                    w: leaves[4],
                };
                discriminator_loss(t, &b, &labeled, &unlabeled, &generated, 0.8)
                    .unwrap()
                    .total
            },
            &shapes,
            &values,
            1e-5,
        );
        assert!(err < 1e-5, "max rel err {err}");
    }

    #[test]
    fn empty_batches_are_rejected() {
        let d = identity_disc(2, vec![0.0; 4]);
        let mut tape = Tape::new();
        let b = d.bind(&mut tape);
        assert!(matches!(
            discriminator_loss(&mut tape, &b, &[], &[[0.0, 0.0]], &[[0.0, 0.0]], 0.0),
            Err(ObjectiveError::EmptyBatch("labeled"))
        ));
        assert!(matches!(
            discriminator_loss(&mut tape, &b, &[([0.0, 0.0], 0)], &[], &[[0.0, 0.0]], 0.0),
            Err(ObjectiveError::EmptyBatch("unlabeled"))
        ));
    }

    #[test]
    fn feature_matching_zero_on_identical_batches() {
        let d = Discriminator::new(2, 8, &[16], &mut rng(4));
        let batch = vec![[0.1, 0.2], [0.5, -0.4], [-0.2, 0.8]];
        let mut tape = Tape::new();
        let b = d.bind(&mut tape);
        let gx = points_leaf(&mut tape, &batch);
        let fm = feature_matching_loss(&mut tape, &b, gx, &batch).unwrap();
        assert!(tape.scalar_value(fm).abs() < 1e-24);
    }

    #[test]
    fn feature_matching_orthogonal_means() {
        let d = identity_disc(2, vec![0.0; 4]);
        let mut tape = Tape::new();
        let b = d.bind(&mut tape);
        let gx = points_leaf(&mut tape, &[[1.0, 0.0]]);
        let fm = feature_matching_loss(&mut tape, &b, gx, &[[0.0, 1.0]]).unwrap();
        assert!((tape.scalar_value(fm) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn feature_matching_gradient_wrt_generated_points() {
        let d = Discriminator::new(2, 4, &[8], &mut rng(5));
        let unlabeled = vec![[0.5, -0.1], [0.0, 0.9], [0.3, 0.3]];
        let mut r = rng(6);
        let gen: Vec<f64> = (0..8).map(|_| r.random_range(-1.0..1.0)).collect();
        let err = grad_check(
            |t, leaves| {
                let b = d.bind(t);
                feature_matching_loss(t, &b, leaves[0], &unlabeled).unwrap()
            },
            &[vec![4, 2]],
            &[gen],
            1e-5,
        );
        assert!(err < 1e-5, "max rel err {err}");
    }

    #[test]
    fn pull_away_identical_and_orthogonal() {
        let mut tape = Tape::new();
        let same = tape
            .tensor(vec![1.0, 0.0, 1.0, 0.0], &[2, 2])
            .unwrap();
        let pt = pull_away_term(&mut tape, same).unwrap();
        assert!((tape.scalar_value(pt) - 1.0).abs() < 1e-9);

        let ortho = tape
            .tensor(vec![1.0, 0.0, 0.0, 1.0], &[2, 2])
            .unwrap();
        let pt = pull_away_term(&mut tape, ortho).unwrap();
        assert!(tape.scalar_value(pt).abs() < 1e-9);
    }

    /// Independent double-loop route, mirroring the norm guard.
    fn pull_away_brute(rows: &[Vec<f64>]) -> f64 {
        let n = rows.len();
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let dot: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
                let ni = rows[i].iter().map(|v| v * v).sum::<f64>().sqrt() + 1e-12;
                let nj = rows[j].iter().map(|v| v * v).sum::<f64>().sqrt() + 1e-12;
                acc += (dot / (ni * nj)).powi(2);
            }
        }
        acc / (n as f64 * (n as f64 - 1.0))
    }

    #[test]
    fn pull_away_matches_brute_force() {
        let mut r = rng(7);
        for _ in 0..20 {
            let rows: Vec<Vec<f64>> = (0..3)
                .map(|_| (0..5).map(|_| r.random_range(-2.0..2.0)).collect())
                .collect();
            let flat: Vec<f64> = rows.iter().flatten().copied().collect();
            let mut tape = Tape::new();
            let f = tape.tensor(flat, &[3, 5]).unwrap();
            let pt = pull_away_term(&mut tape, f).unwrap();
            let brute = pull_away_brute(&rows);
            assert!((tape.scalar_value(pt) - brute).abs() < 1e-12);
        }
    }

    #[test]
    fn pull_away_invariant_to_rescaling() {
        let mut r = rng(8);
        let rows: Vec<f64> = (0..12).map(|_| r.random_range(-1.0..1.0)).collect();
        let base = {
            let mut tape = Tape::new();
            let f = tape.tensor(rows.clone(), &[4, 3]).unwrap();
            let pt = pull_away_term(&mut tape, f).unwrap();
            tape.scalar_value(pt)
        };
        for c in [0.5, 3.0, -2.0] {
            let scaled: Vec<f64> = rows.iter().map(|v| c * v).collect();
            let mut tape = Tape::new();
            let f = tape.tensor(scaled, &[4, 3]).unwrap();
            let pt = pull_away_term(&mut tape, f).unwrap();
            assert!((tape.scalar_value(pt) - base).abs() < 1e-9, "c = {c}");
        }
        assert!(base > 0.0 && base <= 1.0);
    }

    #[test]
    fn pull_away_gradient_matches_finite_differences() {
        let mut r = rng(9);
        let f: Vec<f64> = (0..12).map(|_| r.random_range(0.5..2.0)).collect();
        let err = grad_check(
            |t, leaves| pull_away_term(t, leaves[0]).unwrap(),
            &[vec![4, 3]],
            &[f],
            1e-5,
        );
        assert!(err < 1e-5, "max rel err {err}");
    }

    /// Encoder with mu == z0 and sigma == theta/2 for every input.
    fn analytic_encoder(z0: [f64; 2], theta: f64) -> Encoder {
        let mut e = Encoder::new(2, &[4], theta, &mut rng(10));
        for p in e.params_mut() {
            p.values.iter_mut().for_each(|v| *v = 0.0);
        }
        let last = e.net.layers.last_mut().unwrap();
        last.b.values[0] = z0[0];
        last.b.values[1] = z0[1];
        e
    }

    #[test]
    fn vi_loss_analytic_value() {
        let z0 = [0.4, -1.1];
        let e = analytic_encoder(z0, 2.0); // sigma = 1 exactly
        let mut tape = Tape::new();
        let b = e.bind(&mut tape);
        let z = tape
            .tensor(vec![z0[0], z0[1], z0[0], z0[1]], &[2, 2])
            .unwrap();
        let x = points_leaf(&mut tape, &[[0.3, 0.3], [-0.5, 0.2]]);
        let vi = vi_loss(&mut tape, &b, z, x).unwrap();
        assert!((tape.scalar_value(vi) - (2.0 * PI).ln()).abs() < 1e-12);
    }

    #[test]
    fn vi_loss_tightens_as_sigma_shrinks() {
        let z0 = [0.0, 0.0];
        let wide = analytic_encoder(z0, 2.0); // sigma = 1
        let narrow = analytic_encoder(z0, 1.0); // sigma = 0.5
        let eval = |e: &Encoder| {
            let mut tape = Tape::new();
            let b = e.bind(&mut tape);
            let z = tape.tensor(vec![0.0, 0.0], &[1, 2]).unwrap();
            let x = points_leaf(&mut tape, &[[0.1, 0.1]]);
            let vi = vi_loss(&mut tape, &b, z, x).unwrap();
            tape.scalar_value(vi)
        };
        assert!(eval(&narrow) < eval(&wide));
    }

    #[test]
    fn vi_loss_matches_per_sample_log_probs() {
        let e = Encoder::new(3, &[8, 8], 1.5, &mut rng(11));
        let mut r = rng(12);
        let xs: Vec<Point> = (0..5)
            .map(|_| [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)])
            .collect();
        let zs: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..3).map(|_| r.random_range(0.0..1.0)).collect())
            .collect();
        let mut tape = Tape::new();
        let b = e.bind(&mut tape);
        let zt = tape
            .tensor(zs.iter().flatten().copied().collect(), &[5, 3])
            .unwrap();
        let xt = points_leaf(&mut tape, &xs);
        let vi = vi_loss(&mut tape, &b, zt, xt).unwrap();
        let by_hand: f64 =
            -xs.iter().zip(&zs).map(|(&x, z)| e.log_prob(x, z)).sum::<f64>() / 5.0;
        assert!((tape.scalar_value(vi) - by_hand).abs() < 1e-12);
    }

    #[test]
    fn vi_loss_gradient_wrt_inputs() {
        let e = Encoder::new(2, &[8], 1.0, &mut rng(13));
        let z = vec![0.3, 0.7, 0.6, 0.1];
        let mut r = rng(14);
        let x: Vec<f64> = (0..4).map(|_| r.random_range(-1.0..1.0)).collect();
        let err = grad_check(
            |t, leaves| {
                let b = e.bind(t);
                let zt = t.tensor(z.clone(), &[2, 2]).unwrap();
                vi_loss(t, &b, zt, leaves[0]).unwrap()
            },
            &[vec![2, 2]],
            &[x],
            1e-5,
        );
        assert!(err < 1e-5, "max rel err {err}");
    }

    #[test]
    fn vi_loss_length_mismatch() {
        let e = Encoder::new(2, &[4], 1.0, &mut rng(15));
        let mut tape = Tape::new();
        let b = e.bind(&mut tape);
        let z = tape.tensor(vec![0.0; 4], &[2, 2]).unwrap();
        let x = points_leaf(&mut tape, &[[0.0, 0.0]]);
        assert!(matches!(
            vi_loss(&mut tape, &b, z, x),
            Err(ObjectiveError::LengthMismatch(_))
        ));
    }

    #[test]
    fn gated_rows_by_definition() {
        let (vals, jac) =
            gated_log_density_rows(&[1.0, -5.0], &[[0.3, 0.4], [0.5, 0.6]], 0.0);
        assert_eq!(vals, vec![1.0, 0.0]);
        assert_eq!(jac, vec![0.3, 0.4, 0.0, 0.0]);
        // mean over the batch: (1.0 + 0)/2
        assert_eq!(vals.iter().sum::<f64>() / 2.0, 0.5);
    }

    #[test]
    fn low_density_all_below_threshold_is_zero_with_zero_gradient() {
        let density = small_density();
        let mut tape = Tape::new();
        let x = points_leaf(&mut tape, &[[50.0, 50.0], [-40.0, 10.0]]);
        let ld = low_density_loss(&mut tape, &density, x, 0.0).unwrap();
        assert_eq!(tape.scalar_value(ld), 0.0);
        tape.backward(ld).unwrap();
        assert!(tape.grad(x).iter().all(|&g| g == 0.0));
    }

    #[test]
    fn low_density_gradient_matches_density_finite_differences() {
        let density = small_density();
        let pts = [[0.1, 0.1], [30.0, 30.0]]; // one gated, one not
        let eps_log = -5.0;
        assert!(density.log_density2(pts[0]) > eps_log);
        assert!(density.log_density2(pts[1]) < eps_log);
        let mut tape = Tape::new();
        let x = points_leaf(&mut tape, &pts);
        let ld = low_density_loss(&mut tape, &density, x, eps_log).unwrap();
        tape.backward(ld).unwrap();
        let g = tape.grad(x);
        let h = 1e-6;
        for d in 0..2 {
            let mut plus = pts[0];
            let mut minus = pts[0];
            plus[d] += h;
            minus[d] -= h;
            let fd = (density.log_density2(plus) - density.log_density2(minus)) / (2.0 * h) / 2.0;
            let rel = (g[d] - fd).abs() / g[d].abs().max(fd.abs()).max(1e-3);
            assert!(rel < 1e-6, "dim {d}: tape {} fd {fd}", g[d]);
        }
        assert_eq!(g[2], 0.0);
        assert_eq!(g[3], 0.0);
    }

    #[test]
    fn low_density_monotone_for_nonnegative_thresholds() {
        // dense cluster so on-cluster log-densities are positive
        let mut r = rng(16);
        let pts: Vec<Point> = (0..50)
            .map(|_| [r.random_range(-0.1..0.1), r.random_range(-0.1..0.1)])
            .collect();
        let density = fit_kde(&pts, BandwidthRule::Fixed(0.1)).unwrap();
        let batch: Vec<Point> = (0..20)
            .map(|_| [r.random_range(-0.15..0.15), r.random_range(-0.15..0.15)])
            .collect();
        let mut last = f64::INFINITY;
        for eps in [0.0, 0.5, 1.0, 1.5, 2.0, 3.0] {
            let mut tape = Tape::new();
            let x = points_leaf(&mut tape, &batch);
            let ld = low_density_loss(&mut tape, &density, x, eps).unwrap();
            let v = tape.scalar_value(ld);
            assert!(v <= last + 1e-12, "eps {eps}: {v} > {last}");
            last = v;
        }
    }

    #[test]
    fn generator_loss_fm_only_is_plain_feature_matching() {
        let d = Discriminator::new(2, 4, &[8], &mut rng(17));
        let density = small_density();
        let unlabeled = vec![[0.2, 0.3], [0.4, -0.1]];
        let gen_pts = vec![[0.0, 0.1], [0.3, 0.3]];
        let weights = LossWeights::fm_only();

        let mut tape = Tape::new();
        let b = d.bind(&mut tape);
        let gx = points_leaf(&mut tape, &gen_pts);
        let gl = generator_loss(
            &mut tape, &b, None, &density, &weights, gx, None, &unlabeled, 0.0,
        )
        .unwrap();
        let total = tape.scalar_value(gl.total);

        let mut tape2 = Tape::new();
        let b2 = d.bind(&mut tape2);
        let gx2 = points_leaf(&mut tape2, &gen_pts);
        let fm = feature_matching_loss(&mut tape2, &b2, gx2, &unlabeled).unwrap();
        assert_eq!(total, tape2.scalar_value(fm));
    }

    #[test]
    fn generator_loss_is_sum_of_weighted_parts() {
        let d = Discriminator::new(2, 4, &[8], &mut rng(18));
        let density = small_density();
        let unlabeled = vec![[0.2, 0.3], [0.4, -0.1], [0.1, 0.6]];
        let gen_pts = vec![[0.0, 0.1], [0.3, 0.3], [0.2, 0.0]];
        let weights = LossWeights {
            w_fm: 0.9,
            w_ent_gen: 1.3,
            w_ld: 0.4,
            w_cond_ent: 0.0,
            entropy_method: EntropyMethod::Pt,
        };
        let mut tape = Tape::new();
        let b = d.bind(&mut tape);
        let gx = points_leaf(&mut tape, &gen_pts);
        let gl = generator_loss(
            &mut tape, &b, None, &density, &weights, gx, None, &unlabeled, -10.0,
        )
        .unwrap();
        let expected = 0.9 * gl.fm + 1.3 * gl.entropy + 0.4 * gl.low_density;
        assert!((tape.scalar_value(gl.total) - expected).abs() < 1e-12);
    }

    #[test]
    fn vi_without_encoder_is_a_config_error() {
        let d = Discriminator::new(2, 4, &[8], &mut rng(19));
        let density = small_density();
        let weights = LossWeights {
            w_fm: 1.0,
            w_ent_gen: 1.0,
            w_ld: 0.0,
            w_cond_ent: 0.0,
            entropy_method: EntropyMethod::Vi,
        };
        let mut tape = Tape::new();
        let b = d.bind(&mut tape);
        let gx = points_leaf(&mut tape, &[[0.0, 0.0], [0.1, 0.1]]);
        assert!(matches!(
            generator_loss(
                &mut tape,
                &b,
                None,
                &density,
                &weights,
                gx,
                None,
                &[[0.2, 0.2]],
                0.0,
            ),
            Err(ObjectiveError::Config(_))
        ));
    }

    #[test]
    fn invalid_weights_rejected() {
        let w = LossWeights {
            w_fm: -1.0,
            ..LossWeights::fm_only()
        };
        assert!(w.validate().is_err());
        let w = LossWeights {
            w_ent_gen: 1.0,
            entropy_method: EntropyMethod::None,
            ..LossWeights::fm_only()
        };
        assert!(w.validate().is_err());
    }

    #[test]
    fn kl_identity_when_generator_equals_target() {
        let p = vec![0.5, 0.3, 0.15, 0.05];
        let mask = vec![true; 4];
        let eps = 0.1;
        let c = 0.2;
        let p_star = target_complement_distribution(&p, eps, &mask, c).unwrap();
        let chk = kl_decomposition_check(&p_star, &p, eps, &mask, c).unwrap();
        assert!(chk.lhs.abs() < 1e-12, "lhs {}", chk.lhs);
        assert!(chk.abs_diff < 1e-12);
        assert!(!chk.escaped_support);
    }

    #[test]
    fn kl_three_point_example() {
        let p = vec![0.7, 0.2, 0.1];
        let p_g = vec![1.0 / 3.0; 3];
        let chk =
            kl_decomposition_check(&p_g, &p, 0.15, &[true, true, true], 0.3).unwrap();
        assert!(chk.abs_diff < 1e-10, "lhs {} rhs {}", chk.lhs, chk.rhs);
        assert!(chk.lhs > 0.0);
    }

    #[test]
    fn kl_shifting_c_moves_both_sides_equally() {
        let p = vec![0.6, 0.25, 0.1, 0.05];
        let p_g = vec![0.1, 0.2, 0.3, 0.4];
        let mask = vec![true; 4];
        let a = kl_decomposition_check(&p_g, &p, 0.07, &mask, 0.1).unwrap();
        let b = kl_decomposition_check(&p_g, &p, 0.07, &mask, 0.4).unwrap();
        let dl = a.lhs - b.lhs;
        let dr = a.rhs - b.rhs;
        assert!((dl - dr).abs() < 1e-10);
        assert!(dl.abs() > 1e-6, "C shift should move the KL");
    }

    #[test]
    fn kl_escaped_support_is_flagged_infinite() {
        let p = vec![0.6, 0.3, 0.1];
        let p_g = vec![0.5, 0.0, 0.5];
        let mask = vec![true, true, false];
        let chk = kl_decomposition_check(&p_g, &p, 0.2, &mask, 0.2).unwrap();
        assert!(chk.escaped_support);
        assert!(chk.lhs.is_infinite());
    }

    #[test]
    fn kl_identity_on_random_instances() {
        let mut r = rng(20);
        for trial in 0..200 {
            let n = r.random_range(3..12);
            let mut p: Vec<f64> = (0..n).map(|_| r.random_range(0.01..1.0)).collect();
            let ps: f64 = p.iter().sum();
            p.iter_mut().for_each(|v| *v /= ps);
            let mut p_g: Vec<f64> = (0..n).map(|_| r.random_range(0.0..1.0)).collect();
            let gs: f64 = p_g.iter().sum();
            p_g.iter_mut().for_each(|v| *v /= gs);
            let mask = vec![true; n];
            let eps = r.random_range(0.01..0.3);
            if !p.iter().any(|&v| v > eps) {
                continue;
            }
            let n_low = p.iter().filter(|&&v| v <= eps).count();
            let c = if n_low == 0 {
                0.5
            } else {
                r.random_range(0.01..0.9 / n_low as f64)
            };
            let chk = kl_decomposition_check(&p_g, &p, eps, &mask, c).unwrap();
            assert!(
                chk.abs_diff < 1e-10,
                "trial {trial}: lhs {} rhs {}",
                chk.lhs,
                chk.rhs
            );
        }
    }
}
