//! Numerical verification of the framework's theory: the perfect-generator
//! construction, the convergence-assumption ratios, the weight-norm covering
//! bound, feature-space region correctness, convexity of the negative-logit
//! set, and region disjointness.

use crate::datasets::Point;
use crate::density::{BandwidthRule, DensityError, DensityModel};
use crate::models::{argmax, Discriminator};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TheoryError {
    #[error("empty {0} set")]
    EmptySet(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Density(#[from] DensityError),
}

fn feature_rows(disc: &Discriminator, pts: &[Point]) -> Vec<Vec<f64>> {
    let flat = disc.features_values(pts);
    flat.chunks(disc.feature_dim).map(|c| c.to_vec()).collect()
}

fn max_logit(disc: &Discriminator, feature: &[f64]) -> f64 {
    let logits = disc.logits_for_features(feature);
    logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

// ── assumption ratios ─────────────────────────────────────────────────────

/// Fractions of test inputs with `max_k w_k . f(x) > 0` and of generated
/// inputs with `max_k w_k . f(x) < 0`. Ties at exactly zero count as
/// violations on both sides.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssumptionReport {
    pub ratio_true: f64,
    pub ratio_fake: f64,
}

pub fn assumption_ratios(
    disc: &Discriminator,
    test_points: &[Point],
    generated: &[Point],
) -> Result<AssumptionReport, TheoryError> {
    if test_points.is_empty() {
        return Err(TheoryError::EmptySet("test"));
    }
    if generated.is_empty() {
        return Err(TheoryError::EmptySet("generated"));
    }
    let count_true = feature_rows(disc, test_points)
        .iter()
        .filter(|f| max_logit(disc, f) > 0.0)
        .count();
    let count_fake = feature_rows(disc, generated)
        .iter()
        .filter(|f| max_logit(disc, f) < 0.0)
        .count();
    Ok(AssumptionReport {
        ratio_true: count_true as f64 / test_points.len() as f64,
        ratio_fake: count_fake as f64 / generated.len() as f64,
    })
}

// ── perfect-generator construction ────────────────────────────────────────

/// Non-parametric optimal solution tabulated over evaluation points:
/// `l*_k(x) = log P_sup(k | x, y <= K)` so that `sum_k exp l*_k = 1`.
#[derive(Debug, Clone)]
pub struct PerfectSolution {
    pub points: Vec<Point>,
    pub num_classes: usize,
    pub star_logits: Vec<f64>,
    pub max_pfake_deviation: f64,
    pub max_posterior_deviation: f64,
}

impl PerfectSolution {
    /// Class prediction from the tabulated logits (ties to lowest index).
    pub fn classify(&self, idx: usize) -> usize {
        let k = self.num_classes;
        argmax(&self.star_logits[idx * k..(idx + 1) * k])
    }
}

/// Builds the tabulated solution of the full objective from a supervised
/// optimum and verifies that (a) the fake posterior is exactly one half and
/// (b) the conditional class posteriors are preserved.
pub fn construct_perfect_solution(
    disc_supervised: &Discriminator,
    eval_points: &[Point],
) -> Result<PerfectSolution, TheoryError> {
    if eval_points.is_empty() {
        return Err(TheoryError::EmptySet("evaluation"));
    }
    let k = disc_supervised.num_classes;
    let logits = disc_supervised.logits_values(eval_points);
    let mut star_logits = Vec::with_capacity(logits.len());
    let mut max_pfake_dev: f64 = 0.0;
    let mut max_post_dev: f64 = 0.0;
    for row in logits.chunks(k) {
        let lse = crate::tensor::logsumexp_slice(row);
        let star: Vec<f64> = row.iter().map(|l| l - lse).collect();

        let sum_exp: f64 = star.iter().map(|l| l.exp()).sum();
        let p_fake = 1.0 / (1.0 + sum_exp);
        max_pfake_dev = max_pfake_dev.max((p_fake - 0.5).abs());

        let star_lse = crate::tensor::logsumexp_slice(&star);
        for (ls, l) in star.iter().zip(row) {
            let p_star = (ls - star_lse).exp();
            let p_sup = (l - lse).exp();
            max_post_dev = max_post_dev.max((p_star - p_sup).abs());
        }
        star_logits.extend(star);
    }
    Ok(PerfectSolution {
        points: eval_points.to_vec(),
        num_classes: k,
        star_logits,
        max_pfake_deviation: max_pfake_dev,
        max_posterior_deviation: max_post_dev,
    })
}

// ── covering-bound check ──────────────────────────────────────────────────

/// `C`: max class-weight L2 norm; `covering_radius`: max over complement
/// probe features of the distance to the nearest generated feature; the
/// bound holds iff `max_violation < 0`.
#[derive(Debug, Clone, Copy)]
pub struct LemmaBoundReport {
    pub weight_norm_bound: f64,
    pub covering_radius: f64,
    pub max_violation: f64,
    pub triples_checked: usize,
    pub triple_violations: usize,
}

pub fn lemma_bound_check(
    disc: &Discriminator,
    complement_probe: &[Point],
    generated: &[Point],
) -> Result<LemmaBoundReport, TheoryError> {
    if generated.is_empty() {
        return Err(TheoryError::EmptySet("generated"));
    }
    if complement_probe.is_empty() {
        return Err(TheoryError::EmptySet("complement probe"));
    }
    let c_bound = (0..disc.num_classes)
        .map(|k| {
            disc.weight_row(k)
                .iter()
                .map(|w| w * w)
                .sum::<f64>()
                .sqrt()
        })
        .fold(0.0, f64::max);

    let probe_feats = feature_rows(disc, complement_probe);
    let gen_feats = feature_rows(disc, generated);

    let mut covering_radius: f64 = 0.0;
    let mut nearest: Vec<usize> = Vec::with_capacity(probe_feats.len());
    for pf in &probe_feats {
        let (best, d2) = gen_feats
            .iter()
            .enumerate()
            .map(|(i, gf)| {
                (
                    i,
                    pf.iter().zip(gf).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(),
                )
            })
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap();
        nearest.push(best);
        covering_radius = covering_radius.max(d2.sqrt());
    }

    let mut max_violation = f64::NEG_INFINITY;
    let mut triples_checked = 0;
    let mut triple_violations = 0;
    for (pi, pf) in probe_feats.iter().enumerate() {
        let gf = &gen_feats[nearest[pi]];
        let delta: Vec<f64> = pf.iter().zip(gf).map(|(a, b)| a - b).collect();
        let delta_norm = delta.iter().map(|d| d * d).sum::<f64>().sqrt();
        for k in 0..disc.num_classes {
            let w = disc.weight_row(k);
            let w_pf: f64 = w.iter().zip(pf).map(|(a, b)| a * b).sum();
            max_violation = max_violation.max(w_pf - c_bound * covering_radius);

            // the proof's algebra on the (f_G, f'_G, delta) triple
            let w_gf: f64 = w.iter().zip(gf).map(|(a, b)| a * b).sum();
            if w_gf < 0.0 {
                triples_checked += 1;
                let w_delta: f64 = w.iter().zip(&delta).map(|(a, b)| a * b).sum();
                if !(w_pf < w_delta + 1e-9 && w_delta <= c_bound * delta_norm + 1e-9) {
                    triple_violations += 1;
                }
            }
        }
    }
    Ok(LemmaBoundReport {
        weight_norm_bound: c_bound,
        covering_radius,
        max_violation,
        triples_checked,
        triple_violations,
    })
}

// ── feature-space regions ─────────────────────────────────────────────────

/// Per-class high-density regions in feature space, realized as the subset
/// of a finite evaluation grid where a per-class feature KDE exceeds its
/// threshold.
pub struct RegionSpec {
    pub class_kdes: Vec<DensityModel>,
    pub eps_logs: Vec<f64>,
    pub grid: Vec<Vec<f64>>,
    pub members: Vec<Vec<usize>>,
    pub feature_box: (Vec<f64>, Vec<f64>),
    pub feature_dim: usize,
}

impl RegionSpec {
    pub fn in_region(&self, class: usize, f: &[f64]) -> bool {
        self.class_kdes[class].log_density(f) > self.eps_logs[class]
    }

    /// Grid points claimed by more than one region.
    pub fn overlap_count(&self) -> usize {
        self.grid
            .iter()
            .filter(|g| {
                (0..self.class_kdes.len())
                    .filter(|&k| self.in_region(k, g))
                    .count()
                    > 1
            })
            .count()
    }
}

/// Builds regions from held-out labeled points: per-class KDE over their
/// features, thresholds at the `eps_quantile`-th centile of in-class feature
/// log-density, and an evaluation grid (a lattice when the feature space is
/// 2D, otherwise the pooled features themselves).
pub fn build_regions(
    disc: &Discriminator,
    points: &[(Point, usize)],
    eps_quantile: f64,
    grid_resolution: usize,
) -> Result<RegionSpec, TheoryError> {
    if points.is_empty() {
        return Err(TheoryError::EmptySet("region"));
    }
    if grid_resolution < 2 {
        return Err(TheoryError::InvalidArgument(format!(
            "grid_resolution {grid_resolution}"
        )));
    }
    let d = disc.feature_dim;
    let k = disc.num_classes;
    let pts: Vec<Point> = points.iter().map(|&(p, _)| p).collect();
    let feats = feature_rows(disc, &pts);

    let mut by_class: Vec<Vec<f64>> = vec![Vec::new(); k];
    for (f, &(_, y)) in feats.iter().zip(points) {
        by_class[y].extend_from_slice(f);
    }
    let mut class_kdes = Vec::with_capacity(k);
    let mut eps_logs = Vec::with_capacity(k);
    for flat in by_class {
        let kde = DensityModel::fit_nd(flat, d, BandwidthRule::Scott)?;
        // leave-one-out densities: in-sample values carry a self-kernel spike
        // that would push the threshold above anything off-sample
        let logs: Vec<f64> = (0..kde.num_points()).map(|i| kde.log_density_loo(i)).collect();
        eps_logs.push(crate::density::nearest_rank_quantile(&logs, eps_quantile)?);
        class_kdes.push(kde);
    }

    // padded bounding box of all observed features, realizing the bound B
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for f in &feats {
        for i in 0..d {
            lo[i] = lo[i].min(f[i]);
            hi[i] = hi[i].max(f[i]);
        }
    }
    for i in 0..d {
        let side = (hi[i] - lo[i]).max(1e-9);
        lo[i] -= 0.1 * side;
        hi[i] += 0.1 * side;
    }

    let grid: Vec<Vec<f64>> = if d == 2 {
        let r = grid_resolution;
        let mut g = Vec::with_capacity(r * r);
        for i in 0..r {
            for j in 0..r {
                let x = lo[0] + (hi[0] - lo[0]) * i as f64 / (r - 1) as f64;
                let y = lo[1] + (hi[1] - lo[1]) * j as f64 / (r - 1) as f64;
                g.push(vec![x, y]);
            }
        }
        g
    } else {
        feats.clone()
    };

    let members: Vec<Vec<usize>> = (0..k)
        .map(|class| {
            grid.iter()
                .enumerate()
                .filter(|(_, g)| class_kdes[class].log_density(g) > eps_logs[class])
                .map(|(i, _)| i)
                .collect()
        })
        .collect();

    Ok(RegionSpec {
        class_kdes,
        eps_logs,
        grid,
        members,
        feature_box: (lo, hi),
        feature_dim: d,
    })
}

// ── region correctness (high-density argmax) ──────────────────────────────

#[derive(Debug, Clone)]
pub struct RegionCorrectness {
    /// Fraction of grid points in F_k whose argmax class is k; None when F_k
    /// is empty (skipped with a warning flag).
    pub per_class_fraction: Vec<Option<f64>>,
    pub min_fraction: f64,
    /// Whether each F_k contains the feature of at least one labeled point.
    pub labeled_in_region: Vec<bool>,
}

pub fn proposition2_check(
    disc: &Discriminator,
    regions: &RegionSpec,
    labeled: &[(Point, usize)],
) -> Result<RegionCorrectness, TheoryError> {
    let k = disc.num_classes;
    let mut per_class = Vec::with_capacity(k);
    let mut min_fraction = f64::INFINITY;
    for class in 0..k {
        let members = &regions.members[class];
        if members.is_empty() {
            per_class.push(None);
            continue;
        }
        let correct = members
            .iter()
            .filter(|&&i| argmax(&disc.logits_for_features(&regions.grid[i])) == class)
            .count();
        let frac = correct as f64 / members.len() as f64;
        min_fraction = min_fraction.min(frac);
        per_class.push(Some(frac));
    }
    if !min_fraction.is_finite() {
        min_fraction = 0.0;
    }
    let labeled_in_region = (0..k)
        .map(|class| {
            labeled
                .iter()
                .filter(|&&(_, y)| y == class)
                .map(|&(p, _)| feature_rows(disc, &[p]).remove(0))
                .any(|f| regions.in_region(class, &f))
        })
        .collect();
    Ok(RegionCorrectness {
        per_class_fraction: per_class,
        min_fraction,
        labeled_in_region,
    })
}

// ── convexity of the negative-logit set ───────────────────────────────────

#[derive(Debug, Clone, Copy)]
pub struct ConvexityReport {
    pub pairs_tested: usize,
    pub violations: usize,
    /// Set when the sampler could not find members of S in the box.
    pub inconclusive: bool,
}

/// Samples pairs from `S = {f : max_k w_k . f < 0}` by rejection inside the
/// feature box and tests 9 interior points of each connecting segment for
/// membership. Linearity of the logits makes violations impossible; the
/// probe verifies the machinery end to end.
pub fn convexity_probe(
    disc: &Discriminator,
    feature_box: &(Vec<f64>, Vec<f64>),
    n_pairs: usize,
    rng: &mut ChaCha8Rng,
) -> ConvexityReport {
    let (lo, hi) = feature_box;
    let d = lo.len();
    let in_s = |f: &[f64]| max_logit(disc, f) < 0.0;

    let mut members: Vec<Vec<f64>> = Vec::with_capacity(2 * n_pairs);
    let mut proposals = 0usize;
    while members.len() < 2 * n_pairs {
        proposals += 1;
        if proposals > 100_000 {
            return ConvexityReport {
                pairs_tested: 0,
                violations: 0,
                inconclusive: true,
            };
        }
        let f: Vec<f64> = (0..d).map(|i| rng.random_range(lo[i]..hi[i])).collect();
        if in_s(&f) {
            members.push(f);
        }
    }

    let mut violations = 0;
    for pair in members.chunks(2) {
        let (a, b) = (&pair[0], &pair[1]);
        for step in 1..=9 {
            let alpha = step as f64 / 10.0;
            let mid: Vec<f64> = a
                .iter()
                .zip(b)
                .map(|(x, y)| alpha * x + (1.0 - alpha) * y)
                .collect();
            if !in_s(&mid) {
                violations += 1;
                break;
            }
        }
    }
    ConvexityReport {
        pairs_tested: n_pairs,
        violations,
        inconclusive: false,
    }
}

// ── disjointness with a margin ────────────────────────────────────────────

#[derive(Debug, Clone, Copy)]
pub struct DisjointnessReport {
    pub pairs_tested: usize,
    /// Fraction of cross-class pairs with at least one mixture point outside
    /// both regions.
    pub separated_fraction: f64,
}

pub fn default_alpha_grid() -> Vec<f64> {
    (1..=19).map(|i| i as f64 * 0.05).collect()
}

pub fn disjointness_check(
    regions: &RegionSpec,
    alpha_grid: &[f64],
    max_pairs: usize,
    rng: &mut ChaCha8Rng,
) -> Result<DisjointnessReport, TheoryError> {
    let k = regions.class_kdes.len();
    if k < 2 {
        return Err(TheoryError::InvalidArgument(
            "disjointness needs at least two classes".into(),
        ));
    }
    if alpha_grid.is_empty() {
        return Err(TheoryError::InvalidArgument("empty alpha grid".into()));
    }
    let mut pairs = 0usize;
    let mut separated = 0usize;
    'outer: for _ in 0..max_pairs {
        // draw a cross-class pair of region grid points
        let cj = rng.random_range(0..k);
        let mut ck = rng.random_range(0..k - 1);
        if ck >= cj {
            ck += 1;
        }
        if regions.members[cj].is_empty() || regions.members[ck].is_empty() {
            continue 'outer;
        }
        let fj = &regions.grid[regions.members[cj][rng.random_range(0..regions.members[cj].len())]];
        let fk = &regions.grid[regions.members[ck][rng.random_range(0..regions.members[ck].len())]];
        pairs += 1;
        let mut found_gap = false;
        for &alpha in alpha_grid {
            let mix: Vec<f64> = fj
                .iter()
                .zip(fk)
                .map(|(a, b)| alpha * a + (1.0 - alpha) * b)
                .collect();
            if !regions.in_region(cj, &mix) && !regions.in_region(ck, &mix) {
                found_gap = true;
                break;
            }
        }
        if found_gap {
            separated += 1;
        }
    }
    if pairs == 0 {
        return Err(TheoryError::EmptySet("region pair"));
    }
    Ok(DisjointnessReport {
        pairs_tested: pairs,
        separated_fraction: separated as f64 / pairs as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

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

    #[test]
    fn zero_weights_give_zero_ratios() {
        let d = identity_disc(3, vec![0.0; 6]);
        let r = assumption_ratios(&d, &[[0.5, 0.5], [1.0, 0.0]], &[[0.0, 1.0]]).unwrap();
        // max logit is exactly zero everywhere: a tie, counted as violation
        assert_eq!(r.ratio_true, 0.0);
        assert_eq!(r.ratio_fake, 0.0);
    }

    #[test]
    fn ratios_match_hand_count() {
        let d = identity_disc(1, vec![1.0, 0.0]);
        let pts = [[1.0, 0.0], [-1.0, 0.0], [0.5, 0.3], [0.0, 5.0], [-2.0, 1.0]];
        let r = assumption_ratios(&d, &pts, &pts).unwrap();
        // logits: 1, -1, 0.5, 0 (tie), -2
        assert!((r.ratio_true - 2.0 / 5.0).abs() < 1e-15);
        assert!((r.ratio_fake - 2.0 / 5.0).abs() < 1e-15);
    }

    #[test]
    fn ratios_invariant_to_feature_rescaling() {
        let mut d = identity_disc(2, vec![0.7, -0.3, -0.2, 0.9]);
        let pts: Vec<Point> = (0..40)
            .map(|i| {
                let a = i as f64 * 0.37;
                [a.cos(), (1.3 * a).sin()]
            })
            .collect();
        let gen: Vec<Point> = pts.iter().map(|p| [-p[0], p[1] * 0.5]).collect();
        let base = assumption_ratios(&d, &pts, &gen).unwrap();
        // scale features by c via the identity net's weights, undo in W
        let c = 7.3;
        d.feature_net.layers[0].w.values = vec![c, 0.0, 0.0, c];
        d.class_weights.values.iter_mut().for_each(|w| *w /= c);
        let scaled = assumption_ratios(&d, &pts, &gen).unwrap();
        assert_eq!(base, scaled);
    }

    #[test]
    fn perfect_solution_invariants_on_random_model() {
        let d = Discriminator::new(4, 8, &[16, 16], &mut rng(1));
        let pts: Vec<Point> = (0..200)
            .map(|i| {
                let a = i as f64 * 0.17;
                [2.0 * a.sin(), 2.0 * (0.7 * a).cos()]
            })
            .collect();
        let sol = construct_perfect_solution(&d, &pts).unwrap();
        assert!(sol.max_pfake_deviation < 1e-12, "{}", sol.max_pfake_deviation);
        assert!(
            sol.max_posterior_deviation < 1e-12,
            "{}",
            sol.max_posterior_deviation
        );
        for (i, &p) in pts.iter().enumerate() {
            assert_eq!(sol.classify(i), d.predict(p), "argmax preserved at {p:?}");
        }
    }

    #[test]
    fn lemma_bound_hand_case() {
        // w = (0.6, 0.8) has norm 1; nearest generated feature sits at
        // logit -0.01 and the probe is 0.1 away along w.
        let d = identity_disc(1, vec![0.6, 0.8]);
        let f_prime = [-0.006, -0.008]; // w.f' = -0.01
        let probe = [f_prime[0] + 0.06, f_prime[1] + 0.08]; // |delta| = 0.1
        let rep = lemma_bound_check(&d, &[probe], &[f_prime]).unwrap();
        assert!((rep.weight_norm_bound - 1.0).abs() < 1e-12);
        assert!((rep.covering_radius - 0.1).abs() < 1e-12);
        // w.probe = 0.09 < C * eps = 0.1
        assert!(rep.max_violation < 0.0, "{}", rep.max_violation);
        assert_eq!(rep.triples_checked, 1);
        assert_eq!(rep.triple_violations, 0);
    }

    #[test]
    fn covering_radius_never_grows_with_more_generated() {
        let d = Discriminator::new(2, 4, &[8], &mut rng(2));
        let mut r = rng(3);
        let probes: Vec<Point> = (0..20)
            .map(|_| [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)])
            .collect();
        let gen: Vec<Point> = (0..40)
            .map(|_| [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)])
            .collect();
        let small = lemma_bound_check(&d, &probes, &gen[..10]).unwrap();
        let big = lemma_bound_check(&d, &probes, &gen).unwrap();
        assert!(big.covering_radius <= small.covering_radius + 1e-15);
    }

    /// Gaussian blobs: the centers are the density modes, so they reliably
    /// land inside the thresholded regions.
    fn clustered_points(
        centers: &[(Point, usize)],
        n_each: usize,
        spread: f64,
        seed: u64,
    ) -> Vec<(Point, usize)> {
        use rand_distr::{Distribution, Normal};
        let mut r = rng(seed);
        let noise = Normal::new(0.0, spread).unwrap();
        let mut out = Vec::new();
        for &(c, y) in centers {
            for _ in 0..n_each {
                out.push((
                    [c[0] + noise.sample(&mut r), c[1] + noise.sample(&mut r)],
                    y,
                ));
            }
        }
        out
    }

    #[test]
    fn proposition2_on_separated_linear_case() {
        let d = identity_disc(2, vec![1.0, 0.0, 0.0, 1.0]);
        let pts = clustered_points(&[([1.0, 0.0], 0), ([0.0, 1.0], 1)], 200, 0.08, 4);
        let regions = build_regions(&d, &pts, 50.0, 30).unwrap();
        assert!(regions.members.iter().all(|m| !m.is_empty()));
        let labeled = vec![([1.0, 0.0], 0), ([0.0, 1.0], 1)];
        let rep = proposition2_check(&d, &regions, &labeled).unwrap();
        assert_eq!(rep.min_fraction, 1.0, "{:?}", rep.per_class_fraction);
        assert!(rep.labeled_in_region.iter().all(|&b| b));
    }

    #[test]
    fn proposition2_single_class_is_trivially_correct() {
        let d = identity_disc(1, vec![0.3, -0.4]);
        let pts = clustered_points(&[([0.5, 0.5], 0)], 50, 0.1, 5);
        let regions = build_regions(&d, &pts, 50.0, 20).unwrap();
        let rep = proposition2_check(&d, &regions, &[([0.5, 0.5], 0)]).unwrap();
        assert_eq!(rep.min_fraction, 1.0);
    }

    #[test]
    fn convexity_probe_finds_no_violations_for_linear_logits() {
        let d = Discriminator::new(2, 2, &[8], &mut rng(6));
        let feature_box = (vec![-3.0, -3.0], vec![3.0, 3.0]);
        let rep = convexity_probe(&d, &feature_box, 1000, &mut rng(7));
        assert!(!rep.inconclusive, "S empty in the box");
        assert_eq!(rep.violations, 0);
    }

    #[test]
    fn segment_stays_negative_for_single_class() {
        // hand check on w = (1, 0): both endpoints have negative logit
        let d = identity_disc(1, vec![1.0, 0.0]);
        let (f1, f2) = ([-1.0, 0.0], [-3.0, 2.0]);
        for step in 1..=9 {
            let a = step as f64 / 10.0;
            let mid = [
                a * f1[0] + (1.0 - a) * f2[0],
                a * f1[1] + (1.0 - a) * f2[1],
            ];
            assert!(max_logit(&d, &mid) < 0.0);
        }
    }

    #[test]
    fn disjointness_honest_on_overlapping_regions() {
        let d = identity_disc(2, vec![1.0, 0.0, 0.0, 1.0]);
        // both classes drawn from the same cluster: regions must overlap
        let pts = clustered_points(&[([0.5, 0.5], 0), ([0.5, 0.5], 1)], 80, 0.1, 8);
        let regions = build_regions(&d, &pts, 20.0, 25).unwrap();
        assert!(regions.overlap_count() > 0);
        let rep =
            disjointness_check(&regions, &default_alpha_grid(), 400, &mut rng(9)).unwrap();
        assert!(rep.separated_fraction < 1.0, "{}", rep.separated_fraction);

        // well-separated clusters: almost every pair has a gap
        let pts = clustered_points(&[([1.0, 0.0], 0), ([-1.0, 0.0], 1)], 80, 0.05, 10);
        let regions = build_regions(&d, &pts, 50.0, 25).unwrap();
        let rep =
            disjointness_check(&regions, &default_alpha_grid(), 400, &mut rng(11)).unwrap();
        assert!(rep.separated_fraction > 0.99, "{}", rep.separated_fraction);
    }

    #[test]
    fn raising_thresholds_never_hurts_separation() {
        let d = identity_disc(2, vec![1.0, 0.0, 0.0, 1.0]);
        let pts = clustered_points(&[([0.6, 0.0], 0), ([-0.6, 0.0], 1)], 80, 0.25, 12);
        let low = build_regions(&d, &pts, 10.0, 25).unwrap();
        let high = build_regions(&d, &pts, 80.0, 25).unwrap();
        let f_low =
            disjointness_check(&low, &default_alpha_grid(), 500, &mut rng(13)).unwrap();
        let f_high =
            disjointness_check(&high, &default_alpha_grid(), 500, &mut rng(13)).unwrap();
        assert!(
            f_high.separated_fraction >= f_low.separated_fraction,
            "{} < {}",
            f_high.separated_fraction,
            f_low.separated_fraction
        );
    }

    #[test]
    fn empty_sets_rejected() {
        let d = identity_disc(1, vec![1.0, 0.0]);
        assert!(matches!(
            assumption_ratios(&d, &[], &[[0.0, 0.0]]),
            Err(TheoryError::EmptySet("test"))
        ));
        assert!(matches!(
            lemma_bound_check(&d, &[[0.0, 0.0]], &[]),
            Err(TheoryError::EmptySet("generated"))
        ));
        assert!(construct_perfect_solution(&d, &[]).is_err());
    }
}
