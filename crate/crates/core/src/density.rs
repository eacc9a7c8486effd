//! Fixed Gaussian kernel density model over the input space.
//!
//! Fitted once on training inputs and frozen for the rest of a run; provides
//! the log-density, its closed-form input gradient, and quantile thresholds.
//! The type is dimension-generic so the theory checks can reuse it for
//! feature-space densities.

use crate::datasets::Point;
use crate::tensor::logsumexp_slice;
use std::f64::consts::PI;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DensityError {
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("degenerate data: zero variance, cannot pick a bandwidth")]
    DegenerateData,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BandwidthRule {
    /// `h = N^(-1/(d+4)) * pooled std`.
    Scott,
    Fixed(f64),
}

/// Isotropic Gaussian KDE, immutable after fitting.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityModel {
    points: Vec<f64>,
    dim: usize,
    bandwidth: f64,
}

/// Fits a KDE over 2D input points. Scott's rule needs at least two points
/// and non-degenerate variance; a fixed bandwidth works from one point up
/// (useful for analytic single-point checks).
pub fn fit_kde(points: &[Point], rule: BandwidthRule) -> Result<DensityModel, DensityError> {
    let flat: Vec<f64> = points.iter().flat_map(|p| p.iter().copied()).collect();
    DensityModel::fit_nd(flat, 2, rule)
}

impl DensityModel {
    pub fn fit_nd(points: Vec<f64>, dim: usize, rule: BandwidthRule) -> Result<Self, DensityError> {
        if dim == 0 || points.len() % dim != 0 {
            return Err(DensityError::InvalidArgument(format!(
                "{} coordinates for dim {dim}",
                points.len()
            )));
        }
        let n = points.len() / dim;
        let bandwidth = match rule {
            BandwidthRule::Fixed(h) => {
                if n < 1 {
                    return Err(DensityError::TooFewPoints { needed: 1, got: n });
                }
                if h <= 0.0 {
                    return Err(DensityError::InvalidArgument(format!("bandwidth {h}")));
                }
                h
            }
            BandwidthRule::Scott => {
                if n < 2 {
                    return Err(DensityError::TooFewPoints { needed: 2, got: n });
                }
                let sigma = pooled_std(&points, dim);
                if sigma <= 0.0 {
                    return Err(DensityError::DegenerateData);
                }
                (n as f64).powf(-1.0 / (dim as f64 + 4.0)) * sigma
            }
        };
        Ok(Self {
            points,
            dim,
            bandwidth,
        })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_points(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn training_point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    /// `log p(x)` of the Gaussian mixture, finite for all finite inputs.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.dim, "query dimension");
        let n = self.num_points();
        let h2 = self.bandwidth * self.bandwidth;
        let exponents: Vec<f64> = (0..n)
            .map(|i| -sq_dist(self.training_point(i), x) / (2.0 * h2))
            .collect();
        logsumexp_slice(&exponents) - (n as f64).ln()
            - 0.5 * self.dim as f64 * (2.0 * PI * h2).ln()
    }

    /// Closed-form gradient of `log p` with respect to the query point:
    /// a kernel-softmax-weighted mean of `(x_i - x) / h^2`.
    pub fn log_density_grad(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim, "query dimension");
        let n = self.num_points();
        let h2 = self.bandwidth * self.bandwidth;
        let exponents: Vec<f64> = (0..n)
            .map(|i| -sq_dist(self.training_point(i), x) / (2.0 * h2))
            .collect();
        let lse = logsumexp_slice(&exponents);
        let mut grad = vec![0.0; self.dim];
        for i in 0..n {
            let w = (exponents[i] - lse).exp();
            let p = self.training_point(i);
            for d in 0..self.dim {
                grad[d] += w * (p[d] - x[d]) / h2;
            }
        }
        grad
    }

    /// Leave-one-out log-density at training point `i`: the mixture without
    /// the point's own kernel. Negative infinity for isolated points. Used
    /// for in-sample quantile thresholds, where the self-kernel would bias
    /// the scale against off-sample queries.
    pub fn log_density_loo(&self, i: usize) -> f64 {
        let n = self.num_points();
        if n < 2 {
            return f64::NEG_INFINITY;
        }
        let x = self.training_point(i).to_vec();
        let h2 = self.bandwidth * self.bandwidth;
        let exponents: Vec<f64> = (0..n)
            .map(|j| -sq_dist(self.training_point(j), &x) / (2.0 * h2))
            .collect();
        // exponents[i] == 0, so sum >= 1 and direct exponentiation is safe
        let total = logsumexp_slice(&exponents).exp();
        let loo = total - 1.0;
        if loo <= 0.0 {
            return f64::NEG_INFINITY;
        }
        loo.ln() - ((n - 1) as f64).ln() - 0.5 * self.dim as f64 * (2.0 * PI * h2).ln()
    }

    pub fn log_density2(&self, p: Point) -> f64 {
        self.log_density(&p)
    }

    pub fn log_density_grad2(&self, p: Point) -> Point {
        let g = self.log_density_grad(&p);
        [g[0], g[1]]
    }

    /// Log-space threshold at the q-th centile of `points`' log-densities.
    pub fn quantile_threshold(&self, points: &[Point], q_centile: f64) -> Result<f64, DensityError> {
        let logs: Vec<f64> = points.iter().map(|&p| self.log_density2(p)).collect();
        nearest_rank_quantile(&logs, q_centile)
    }

    /// Threshold over the model's own training points (the declared default
    /// when no separate set is given).
    pub fn self_quantile_threshold(&self, q_centile: f64) -> Result<f64, DensityError> {
        let logs: Vec<f64> = (0..self.num_points())
            .map(|i| self.log_density(self.training_point(i)))
            .collect();
        nearest_rank_quantile(&logs, q_centile)
    }

    // ── textual serialization: bandwidth + point list ─────────────────────

    pub fn serialize(&self) -> String {
        let mut out = String::new();
        out.push_str("kde v1\n");
        out.push_str(&format!("dim {}\n", self.dim));
        out.push_str(&format!("bandwidth {}\n", self.bandwidth));
        out.push_str(&format!("points {}\n", self.num_points()));
        for i in 0..self.num_points() {
            let coords: Vec<String> = self
                .training_point(i)
                .iter()
                .map(|c| format!("{c}"))
                .collect();
            out.push_str(&coords.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn deserialize(text: &str) -> Result<Self, DensityError> {
        let mut lines = text.lines().enumerate();
        let mut expect = |tag: &str| -> Result<(usize, String), DensityError> {
            let (i, line) = lines.next().ok_or(DensityError::Parse {
                line: 0,
                msg: "truncated".into(),
            })?;
            let rest = line.strip_prefix(tag).ok_or_else(|| DensityError::Parse {
                line: i + 1,
                msg: format!("expected {tag:?}"),
            })?;
            Ok((i, rest.trim().to_string()))
        };
        expect("kde v1")?;
        let (_, dim_s) = expect("dim ")?;
        let (_, bw_s) = expect("bandwidth ")?;
        let (_, n_s) = expect("points ")?;
        let parse_err = |line: usize, msg: String| DensityError::Parse { line, msg };
        let dim = usize::from_str(&dim_s).map_err(|e| parse_err(2, e.to_string()))?;
        let bandwidth = f64::from_str(&bw_s).map_err(|e| parse_err(3, e.to_string()))?;
        let n = usize::from_str(&n_s).map_err(|e| parse_err(4, e.to_string()))?;
        let mut points = Vec::with_capacity(n * dim);
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            for tok in line.split_whitespace() {
                points.push(f64::from_str(tok).map_err(|e| parse_err(i + 1, e.to_string()))?);
            }
        }
        if points.len() != n * dim {
            return Err(parse_err(
                0,
                format!("expected {} coordinates, got {}", n * dim, points.len()),
            ));
        }
        Self::fit_nd(points, dim, BandwidthRule::Fixed(bandwidth))
    }
}

/// Nearest-rank percentile: sorted ascending, index `ceil(q*N/100) - 1`.
pub fn nearest_rank_quantile(values: &[f64], q_centile: f64) -> Result<f64, DensityError> {
    if values.is_empty() {
        return Err(DensityError::InvalidArgument("empty value set".into()));
    }
    if !(q_centile > 0.0 && q_centile <= 100.0) {
        return Err(DensityError::InvalidArgument(format!(
            "q_centile {q_centile} outside (0, 100]"
        )));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let rank = (q_centile * n as f64 / 100.0).ceil() as usize;
    Ok(sorted[rank.clamp(1, n) - 1])
}

fn pooled_std(points: &[f64], dim: usize) -> f64 {
    let n = points.len() / dim;
    let mut var_sum = 0.0;
    for d in 0..dim {
        let mean = (0..n).map(|i| points[i * dim + d]).sum::<f64>() / n as f64;
        let var = (0..n)
            .map(|i| (points[i * dim + d] - mean).powi(2))
            .sum::<f64>()
            / (n as f64 - 1.0);
        var_sum += var;
    }
    (var_sum / dim as f64).sqrt()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_point_log_density_is_analytic() {
        let m = fit_kde(&[[0.3, -0.7]], BandwidthRule::Fixed(1.0)).unwrap();
        let got = m.log_density2([0.3, -0.7]);
        assert!((got - (-(2.0 * PI).ln())).abs() < 1e-12, "{got}");
    }

    #[test]
    fn density_integrates_to_one() {
        let pts = vec![[0.0, 0.0], [1.0, 0.5], [-0.5, 0.8]];
        let m = fit_kde(&pts, BandwidthRule::Fixed(0.3)).unwrap();
        let span = 6.0 * m.bandwidth();
        let (lo, hi) = (-0.5 - span, 1.0 + span);
        let steps = 400;
        let dx = (hi - lo) / steps as f64;
        let mut mass = 0.0;
        for i in 0..steps {
            for j in 0..steps {
                let x = lo + (i as f64 + 0.5) * dx;
                let y = lo + (j as f64 + 0.5) * dx;
                mass += m.log_density2([x, y]).exp() * dx * dx;
            }
        }
        assert!((mass - 1.0).abs() < 0.01, "mass {mass}");
    }

    #[test]
    fn far_query_is_finite_and_tiny() {
        let m = fit_kde(&[[0.0, 0.0], [1.0, 1.0]], BandwidthRule::Fixed(0.1)).unwrap();
        let lp = m.log_density2([100.0, 100.0]);
        assert!(lp.is_finite());
        assert!(lp < -50.0, "{lp}");
    }

    #[test]
    fn gradient_vanishes_at_symmetric_midpoint() {
        let m = fit_kde(&[[-1.0, 0.0], [1.0, 0.0]], BandwidthRule::Fixed(0.5)).unwrap();
        let g = m.log_density_grad2([0.0, 0.0]);
        assert!(g[0].abs() < 1e-14 && g[1].abs() < 1e-14, "{g:?}");
    }

    #[test]
    fn gradient_points_toward_single_training_point() {
        let m = fit_kde(&[[2.0, 3.0]], BandwidthRule::Fixed(1.0)).unwrap();
        let g = m.log_density_grad2([0.0, 0.0]);
        assert!(g[0] > 0.0 && g[1] > 0.0, "{g:?}");
        // single Gaussian: grad = (x_i - x)/h^2 exactly
        assert!((g[0] - 2.0).abs() < 1e-12 && (g[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let pts: Vec<Point> = (0..40)
            .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect();
        let m = fit_kde(&pts, BandwidthRule::Scott).unwrap();
        let h = 1e-6;
        for _ in 0..25 {
            let x = [rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)];
            let g = m.log_density_grad2(x);
            for d in 0..2 {
                let mut xp = x;
                let mut xm = x;
                xp[d] += h;
                xm[d] -= h;
                let fd = (m.log_density2(xp) - m.log_density2(xm)) / (2.0 * h);
                let rel = (g[d] - fd).abs() / g[d].abs().max(fd.abs()).max(1e-3);
                assert!(rel < 1e-6, "dim {d}: ad {} fd {fd}", g[d]);
            }
        }
    }

    #[test]
    fn nearest_rank_by_hand() {
        let logs: Vec<f64> = (1..=10).map(|i| -(i as f64)).collect();
        assert_eq!(nearest_rank_quantile(&logs, 10.0).unwrap(), -10.0);
        assert_eq!(nearest_rank_quantile(&logs, 100.0).unwrap(), -1.0);
        assert_eq!(nearest_rank_quantile(&logs, 50.0).unwrap(), -6.0);
        assert!(nearest_rank_quantile(&[], 10.0).is_err());
        assert!(nearest_rank_quantile(&logs, 0.0).is_err());
    }

    #[test]
    fn q100_threshold_gates_out_all_training_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<Point> = (0..60)
            .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect();
        let m = fit_kde(&pts, BandwidthRule::Scott).unwrap();
        let eps = m.quantile_threshold(&pts, 100.0).unwrap();
        // strict comparison: no training point is above the max
        let above = pts.iter().filter(|&&p| m.log_density2(p) > eps).count();
        assert_eq!(above, 0);
    }

    #[test]
    fn quantile_is_monotone_in_q() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pts: Vec<Point> = (0..50)
            .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect();
        let m = fit_kde(&pts, BandwidthRule::Scott).unwrap();
        let mut last = f64::NEG_INFINITY;
        for q in [2.0, 10.0, 20.0, 50.0, 80.0, 100.0] {
            let eps = m.quantile_threshold(&pts, q).unwrap();
            assert!(eps >= last, "q {q}: {eps} < {last}");
            last = eps;
        }
    }

    #[test]
    fn exchangeable_in_point_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut pts: Vec<Point> = (0..30)
            .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect();
        let a = fit_kde(&pts, BandwidthRule::Fixed(0.2)).unwrap();
        pts.reverse();
        let b = fit_kde(&pts, BandwidthRule::Fixed(0.2)).unwrap();
        for _ in 0..10 {
            let x = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            assert!((a.log_density2(x) - b.log_density2(x)).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicate_point_ratio_bounds() {
        // p' = (N p + k_j)/(N+1) with 0 <= k_j <= N p, so pointwise
        // p'/p lies in [N/(N+1), 2N/(N+1)].
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let pts: Vec<Point> = (0..25)
            .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect();
        let n = pts.len() as f64;
        let a = fit_kde(&pts, BandwidthRule::Fixed(0.25)).unwrap();
        let mut dup = pts.clone();
        dup.push(pts[7]);
        let b = fit_kde(&dup, BandwidthRule::Fixed(0.25)).unwrap();
        for _ in 0..50 {
            let x = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let ratio = (b.log_density2(x) - a.log_density2(x)).exp();
            assert!(ratio >= n / (n + 1.0) - 1e-12, "ratio {ratio}");
            assert!(ratio <= 2.0 * n / (n + 1.0) + 1e-12, "ratio {ratio}");
        }
    }

    #[test]
    fn leave_one_out_matches_refit_without_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let pts: Vec<Point> = (0..20)
            .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect();
        let full = fit_kde(&pts, BandwidthRule::Fixed(0.3)).unwrap();
        for i in [0, 7, 19] {
            let mut rest = pts.clone();
            let x = rest.remove(i);
            let refit = fit_kde(&rest, BandwidthRule::Fixed(0.3)).unwrap();
            let direct = refit.log_density2(x);
            let loo = full.log_density_loo(i);
            assert!((direct - loo).abs() < 1e-10, "i {i}: {direct} vs {loo}");
        }
        // an isolated point has no mass without its own kernel
        let far = fit_kde(&[[0.0, 0.0], [1e6, 1e6]], BandwidthRule::Fixed(0.1)).unwrap();
        assert_eq!(far.log_density_loo(0), f64::NEG_INFINITY);
    }

    #[test]
    fn degenerate_data_rejected() {
        let pts = vec![[1.0, 1.0], [1.0, 1.0], [1.0, 1.0]];
        assert!(matches!(
            fit_kde(&pts, BandwidthRule::Scott),
            Err(DensityError::DegenerateData)
        ));
        assert!(matches!(
            fit_kde(&[], BandwidthRule::Fixed(1.0)),
            Err(DensityError::TooFewPoints { .. })
        ));
    }

    #[test]
    fn serialization_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts: Vec<Point> = (0..15)
            .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect();
        let m = fit_kde(&pts, BandwidthRule::Scott).unwrap();
        let back = DensityModel::deserialize(&m.serialize()).unwrap();
        assert_eq!(m, back);
    }
}
