//! 2D synthetic datasets (four spins, two circles) and labeled/unlabeled/test
//! splits for the semi-supervised toy experiments.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::f64::consts::PI;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("class {class} has {available} points, needs {needed}")]
    InsufficientPoints {
        class: usize,
        available: usize,
        needed: usize,
    },
    #[error("dataset invariant violated: {0}")]
    Invariant(String),
    #[error("csv parse error at line {line}: {msg}")]
    Csv { line: usize, msg: String },
}

pub type Point = [f64; 2];

/// Axis-aligned bounding box in input space; the input-space realization of
/// the convex bound enclosing the data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputBox {
    pub min: Point,
    pub max: Point,
}

impl InputBox {
    pub fn new(min: Point, max: Point) -> Result<Self, DataError> {
        if min[0] >= max[0] || min[1] >= max[1] {
            return Err(DataError::InvalidArgument(format!(
                "degenerate box {min:?}..{max:?}"
            )));
        }
        Ok(Self { min, max })
    }

    pub fn contains(&self, p: Point) -> bool {
        p[0] >= self.min[0] && p[0] <= self.max[0] && p[1] >= self.min[1] && p[1] <= self.max[1]
    }

    pub fn center(&self) -> Point {
        [
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
        ]
    }

    pub fn half_widths(&self) -> Point {
        [
            0.5 * (self.max[0] - self.min[0]),
            0.5 * (self.max[1] - self.min[1]),
        ]
    }
}

/// Labeled, unlabeled and test splits plus the class count and input box.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub labeled: Vec<(Point, usize)>,
    pub unlabeled: Vec<Point>,
    pub test: Vec<(Point, usize)>,
    pub num_classes: usize,
    pub bounds: InputBox,
}

impl Dataset {
    pub fn new(
        labeled: Vec<(Point, usize)>,
        unlabeled: Vec<Point>,
        test: Vec<(Point, usize)>,
        num_classes: usize,
        bounds: InputBox,
    ) -> Result<Self, DataError> {
        let ds = Self {
            labeled,
            unlabeled,
            test,
            num_classes,
            bounds,
        };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<(), DataError> {
        for &(p, y) in self.labeled.iter().chain(&self.test) {
            if y >= self.num_classes {
                return Err(DataError::Invariant(format!(
                    "label {y} >= num_classes {}",
                    self.num_classes
                )));
            }
            if !self.bounds.contains(p) {
                return Err(DataError::Invariant(format!("point {p:?} outside box")));
            }
        }
        for &p in &self.unlabeled {
            if !self.bounds.contains(p) {
                return Err(DataError::Invariant(format!("point {p:?} outside box")));
            }
        }
        let mut seen = vec![false; self.num_classes];
        for &(_, y) in &self.labeled {
            seen[y] = true;
        }
        if let Some(k) = seen.iter().position(|s| !s) {
            return Err(DataError::Invariant(format!(
                "class {k} has no labeled point"
            )));
        }
        Ok(())
    }

    /// All input points regardless of role.
    pub fn all_points(&self) -> Vec<Point> {
        self.labeled
            .iter()
            .map(|&(p, _)| p)
            .chain(self.unlabeled.iter().copied())
            .chain(self.test.iter().map(|&(p, _)| p))
            .collect()
    }

    /// Training inputs (labeled + unlabeled) for density fitting.
    pub fn train_points(&self) -> Vec<Point> {
        self.labeled
            .iter()
            .map(|&(p, _)| p)
            .chain(self.unlabeled.iter().copied())
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("x1,x2,role,label\n");
        for &(p, y) in &self.labeled {
            out.push_str(&format!("{},{},labeled,{}\n", p[0], p[1], y));
        }
        for &p in &self.unlabeled {
            out.push_str(&format!("{},{},unlabeled,-1\n", p[0], p[1]));
        }
        for &(p, y) in &self.test {
            out.push_str(&format!("{},{},test,{}\n", p[0], p[1], y));
        }
        out
    }

    /// Parses the CSV form. The box is recomputed from the points with the
    /// default padding, since the schema does not carry it.
    pub fn from_csv(text: &str) -> Result<Self, DataError> {
        let mut labeled = Vec::new();
        let mut unlabeled = Vec::new();
        let mut test = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if idx == 0 || line.trim().is_empty() {
                continue;
            }
            let err = |msg: &str| DataError::Csv {
                line: idx + 1,
                msg: msg.to_string(),
            };
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                return Err(err("expected 4 fields"));
            }
            let x1 = f64::from_str(fields[0]).map_err(|e| err(&e.to_string()))?;
            let x2 = f64::from_str(fields[1]).map_err(|e| err(&e.to_string()))?;
            let label = i64::from_str(fields[3]).map_err(|e| err(&e.to_string()))?;
            match fields[2] {
                "labeled" => labeled.push(([x1, x2], label as usize)),
                "unlabeled" => unlabeled.push([x1, x2]),
                "test" => test.push(([x1, x2], label as usize)),
                other => return Err(err(&format!("unknown role {other:?}"))),
            }
        }
        let num_classes = labeled
            .iter()
            .chain(&test)
            .map(|&(_, y)| y + 1)
            .max()
            .ok_or_else(|| DataError::Invariant("no labeled points".into()))?;
        let all: Vec<Point> = labeled
            .iter()
            .map(|&(p, _)| p)
            .chain(unlabeled.iter().copied())
            .chain(test.iter().map(|&(p, _)| p))
            .collect();
        let bounds = bounding_box(&all, DEFAULT_PAD_FRACTION)?;
        Self::new(labeled, unlabeled, test, num_classes, bounds)
    }
}

pub const DEFAULT_PAD_FRACTION: f64 = 0.1;

/// Point on the spin curve of `class` at parameter `t`:
/// `t * (cos(3πt + class·π/2), sin(3πt + class·π/2))`.
pub fn spin_point(class: usize, t: f64) -> Point {
    let angle = 3.0 * PI * t + class as f64 * PI / 2.0;
    [t * angle.cos(), t * angle.sin()]
}

/// Four interlocking spiral arms, one per class, with Gaussian jitter.
/// All points come back labeled; use [`split`] to build SSL splits.
pub fn four_spins(n_per_class: usize, noise_sigma: f64, seed: u64) -> Result<Dataset, DataError> {
    if noise_sigma < 0.0 {
        return Err(DataError::InvalidArgument(format!(
            "noise_sigma {noise_sigma} < 0"
        )));
    }
    if n_per_class == 0 {
        return Err(DataError::InvalidArgument("n_per_class == 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_sigma).expect("sigma >= 0");
    let mut labeled = Vec::with_capacity(4 * n_per_class);
    for class in 0..4 {
        for _ in 0..n_per_class {
            let t = rng.random_range(0.05..1.0);
            let base = spin_point(class, t);
            let p = [base[0] + noise.sample(&mut rng), base[1] + noise.sample(&mut rng)];
            labeled.push((p, class));
        }
    }
    let points: Vec<Point> = labeled.iter().map(|&(p, _)| p).collect();
    let bounds = bounding_box(&points, DEFAULT_PAD_FRACTION)?;
    Dataset::new(labeled, Vec::new(), Vec::new(), 4, bounds)
}

/// Two concentric circles, one class per radius, with Gaussian radial jitter.
pub fn two_circles(
    n_per_class: usize,
    radii: (f64, f64),
    noise_sigma: f64,
    seed: u64,
) -> Result<Dataset, DataError> {
    if noise_sigma < 0.0 {
        return Err(DataError::InvalidArgument(format!(
            "noise_sigma {noise_sigma} < 0"
        )));
    }
    if n_per_class == 0 {
        return Err(DataError::InvalidArgument("n_per_class == 0".into()));
    }
    if radii.0 <= 0.0 || radii.1 <= 0.0 {
        return Err(DataError::InvalidArgument(format!("radii {radii:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_sigma).expect("sigma >= 0");
    let mut labeled = Vec::with_capacity(2 * n_per_class);
    for (class, &r) in [radii.0, radii.1].iter().enumerate() {
        for _ in 0..n_per_class {
            let angle = rng.random_range(0.0..2.0 * PI);
            let radius = r + noise.sample(&mut rng);
            labeled.push(([radius * angle.cos(), radius * angle.sin()], class));
        }
    }
    let points: Vec<Point> = labeled.iter().map(|&(p, _)| p).collect();
    let bounds = bounding_box(&points, DEFAULT_PAD_FRACTION)?;
    Dataset::new(labeled, Vec::new(), Vec::new(), 2, bounds)
}

/// Splits labeled points into disjoint labeled / unlabeled / test sets:
/// a stratified `test_fraction` goes to test, then `n_labeled_per_class`
/// keep their labels and the rest become unlabeled.
pub fn split(
    points: &[(Point, usize)],
    n_labeled_per_class: usize,
    test_fraction: f64,
    seed: u64,
) -> Result<Dataset, DataError> {
    if n_labeled_per_class == 0 {
        return Err(DataError::InvalidArgument("n_labeled_per_class == 0".into()));
    }
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(DataError::InvalidArgument(format!(
            "test_fraction {test_fraction}"
        )));
    }
    let num_classes = points
        .iter()
        .map(|&(_, y)| y + 1)
        .max()
        .ok_or_else(|| DataError::InvalidArgument("empty point set".into()))?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labeled = Vec::new();
    let mut unlabeled = Vec::new();
    let mut test = Vec::new();
    for class in 0..num_classes {
        let mut members: Vec<Point> = points
            .iter()
            .filter(|&&(_, y)| y == class)
            .map(|&(p, _)| p)
            .collect();
        let n_test = (members.len() as f64 * test_fraction).round() as usize;
        let needed = n_test + n_labeled_per_class;
        if members.len() < needed {
            return Err(DataError::InsufficientPoints {
                class,
                available: members.len(),
                needed,
            });
        }
        members.shuffle(&mut rng);
        for &p in &members[..n_test] {
            test.push((p, class));
        }
        for &p in &members[n_test..n_test + n_labeled_per_class] {
            labeled.push((p, class));
        }
        unlabeled.extend_from_slice(&members[n_test + n_labeled_per_class..]);
    }
    let all: Vec<Point> = points.iter().map(|&(p, _)| p).collect();
    let bounds = bounding_box(&all, DEFAULT_PAD_FRACTION)?;
    Dataset::new(labeled, unlabeled, test, num_classes, bounds)
}

/// Tight box around `points`, each side extended by `pad_fraction` of its
/// length at both ends.
pub fn bounding_box(points: &[Point], pad_fraction: f64) -> Result<InputBox, DataError> {
    if points.is_empty() {
        return Err(DataError::InvalidArgument("empty point set".into()));
    }
    if pad_fraction < 0.0 {
        return Err(DataError::InvalidArgument(format!(
            "pad_fraction {pad_fraction} < 0"
        )));
    }
    let mut min = [f64::INFINITY; 2];
    let mut max = [f64::NEG_INFINITY; 2];
    for p in points {
        for d in 0..2 {
            min[d] = min[d].min(p[d]);
            max[d] = max[d].max(p[d]);
        }
    }
    for d in 0..2 {
        let side = max[d] - min[d];
        // degenerate side: give it a nominal width so the box stays a box
        let pad = if side > 0.0 { pad_fraction * side } else { 1e-6 };
        min[d] -= pad;
        max[d] += pad;
    }
    InputBox::new(min, max)
}

/// Median over points of the distance to their nearest other point.
/// Used to pick a scale-adaptive removal radius for the oracle sampler.
pub fn median_nn_distance(points: &[Point]) -> f64 {
    assert!(points.len() >= 2, "need at least two points");
    let mut dists: Vec<f64> = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            points
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, q)| dist(*p, *q))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    dists[dists.len() / 2]
}

pub fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}
