//! Discriminator, generator, encoder and the oracle complement sampler.

use crate::datasets::{InputBox, Point};
use crate::tensor::{sigmoid, softplus, Tape, Tensor, TensorError};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::str::FromStr;
use thiserror::Error;

/// Leaky-ReLU slope used by all hidden layers.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Keeps the encoder's squashed sigma strictly inside (0, theta).
const SIGMA_MARGIN: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("oracle sampler saturated: {accepted}/{proposals} proposals accepted")]
    OracleSaturated { accepted: usize, proposals: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Named, shaped parameter buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl ParamTensor {
    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            name: name.into(),
            shape,
            values: vec![0.0; n],
        }
    }

    fn randn(name: impl Into<String>, shape: Vec<usize>, std: f64, rng: &mut ChaCha8Rng) -> Self {
        let dist = Normal::new(0.0, std).expect("std >= 0");
        let n: usize = shape.iter().product();
        Self {
            name: name.into(),
            shape,
            values: (0..n).map(|_| dist.sample(rng)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub w: ParamTensor,
    pub b: ParamTensor,
}

/// Plain MLP: linear layers with leaky-ReLU on all hidden layers, linear
/// output. He-style init scaled to fan-in.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
    pub leak: f64,
}

impl Mlp {
    pub fn new(name: &str, dims: &[usize], leak: f64, rng: &mut ChaCha8Rng) -> Self {
        assert!(dims.len() >= 2, "mlp needs input and output dims");
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, d)| Layer {
                w: ParamTensor::randn(
                    format!("{name}.w{i}"),
                    vec![d[0], d[1]],
                    (2.0 / d[0] as f64).sqrt(),
                    rng,
                ),
                b: ParamTensor::zeros(format!("{name}.b{i}"), vec![d[1]]),
            })
            .collect();
        Self { layers, leak }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].w.shape[0]
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().w.shape[1]
    }

    pub fn params(&self) -> Vec<&ParamTensor> {
        self.layers.iter().flat_map(|l| [&l.w, &l.b]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.w, &mut l.b])
            .collect()
    }

    /// Creates leaves for every parameter on `tape`, in `params()` order.
    pub fn bind(&self, tape: &mut Tape) -> MlpBinding {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let w = tape
                    .tensor(l.w.values.clone(), &l.w.shape)
                    .expect("param shape");
                let b = tape
                    .tensor(l.b.values.clone(), &l.b.shape)
                    .expect("param shape");
                (w, b)
            })
            .collect();
        MlpBinding {
            layers,
            leak: self.leak,
        }
    }

    /// Value-only forward for evaluation paths; `x` is row-major `[rows, in_dim]`.
    pub fn forward_values(&self, x: &[f64], rows: usize) -> Vec<f64> {
        assert_eq!(x.len(), rows * self.in_dim());
        let mut cur = x.to_vec();
        let mut cur_dim = self.in_dim();
        for (li, layer) in self.layers.iter().enumerate() {
            let (din, dout) = (layer.w.shape[0], layer.w.shape[1]);
            debug_assert_eq!(din, cur_dim);
            let mut next = vec![0.0; rows * dout];
            for r in 0..rows {
                for i in 0..din {
                    let v = cur[r * din + i];
                    if v == 0.0 {
                        continue;
                    }
                    let wrow = &layer.w.values[i * dout..(i + 1) * dout];
                    for (j, wv) in wrow.iter().enumerate() {
                        next[r * dout + j] += v * wv;
                    }
                }
                for j in 0..dout {
                    next[r * dout + j] += layer.b.values[j];
                }
            }
            if li + 1 < self.layers.len() {
                for v in &mut next {
                    if *v < 0.0 {
                        *v *= self.leak;
                    }
                }
            }
            cur = next;
            cur_dim = dout;
        }
        cur
    }
}

pub struct MlpBinding {
    pub layers: Vec<(Tensor, Tensor)>,
    pub leak: f64,
}

impl MlpBinding {
    pub fn forward(&self, tape: &mut Tape, x: Tensor) -> Result<Tensor, TensorError> {
        let mut cur = x;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let lin = tape.matmul(cur, w)?;
            cur = tape.add_bias(lin, b)?;
            if i + 1 < self.layers.len() {
                cur = tape.leaky_relu(cur, self.leak);
            }
        }
        Ok(cur)
    }

    pub fn param_tensors(&self) -> Vec<Tensor> {
        self.layers.iter().flat_map(|&(w, b)| [w, b]).collect()
    }
}

// ── discriminator ─────────────────────────────────────────────────────────

/// (K+1)-class discriminator: feature net plus a K x d_f class-weight matrix.
/// The weight row of the fake class is fixed at zero and never stored, so the
/// fake logit is identically zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    pub feature_net: Mlp,
    pub class_weights: ParamTensor,
    pub num_classes: usize,
    pub feature_dim: usize,
}

impl Discriminator {
    pub fn new(
        num_classes: usize,
        feature_dim: usize,
        hidden: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut dims = vec![2];
        dims.extend_from_slice(hidden);
        dims.push(feature_dim);
        let feature_net = Mlp::new("disc.f", &dims, LEAKY_SLOPE, rng);
        let class_weights = ParamTensor::randn(
            "disc.w",
            vec![num_classes, feature_dim],
            1.0 / (feature_dim as f64).sqrt(),
            rng,
        );
        Self {
            feature_net,
            class_weights,
            num_classes,
            feature_dim,
        }
    }

    pub fn params(&self) -> Vec<&ParamTensor> {
        let mut ps = self.feature_net.params();
        ps.push(&self.class_weights);
        ps
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut ps = self.feature_net.params_mut();
        ps.push(&mut self.class_weights);
        ps
    }

    pub fn bind(&self, tape: &mut Tape) -> DiscBinding {
        let net = self.feature_net.bind(tape);
        let w = tape
            .tensor(self.class_weights.values.clone(), &self.class_weights.shape)
            .expect("weight shape");
        DiscBinding { net, w }
    }

    /// Row `k` of the class-weight matrix (`w_k`).
    pub fn weight_row(&self, k: usize) -> &[f64] {
        let d = self.feature_dim;
        &self.class_weights.values[k * d..(k + 1) * d]
    }

    /// Features of a batch, value path: `[n, d_f]` row-major.
    pub fn features_values(&self, batch: &[Point]) -> Vec<f64> {
        let flat: Vec<f64> = batch.iter().flat_map(|p| p.iter().copied()).collect();
        self.feature_net.forward_values(&flat, batch.len())
    }

    /// `l_k(f) = w_k . f` for raw feature-space rows `[n, d_f]`.
    pub fn logits_for_features(&self, features: &[f64]) -> Vec<f64> {
        let d = self.feature_dim;
        let k = self.num_classes;
        assert_eq!(features.len() % d, 0);
        let n = features.len() / d;
        let mut out = vec![0.0; n * k];
        for r in 0..n {
            let f = &features[r * d..(r + 1) * d];
            for c in 0..k {
                out[r * k + c] = self
                    .weight_row(c)
                    .iter()
                    .zip(f)
                    .map(|(w, x)| w * x)
                    .sum::<f64>();
            }
        }
        out
    }

    /// Class logits for input points, value path: `[n, K]`.
    pub fn logits_values(&self, batch: &[Point]) -> Vec<f64> {
        self.logits_for_features(&self.features_values(batch))
    }

    /// `P_D(K+1 | x) = 1 / (1 + sum_k exp l_k)`, computed stably.
    pub fn p_fake(&self, x: Point) -> f64 {
        let logits = self.logits_values(&[x]);
        p_fake_from_logits(&logits)
    }

    /// Full (K+1)-class posterior `[P(1|x) .. P(K|x), P(K+1|x)]`.
    pub fn posterior(&self, x: Point) -> Vec<f64> {
        let logits = self.logits_values(&[x]);
        posterior_from_logits(&logits)
    }

    /// Conditional class prediction: argmax over the K class logits, ties
    /// broken toward the lowest index.
    pub fn predict(&self, x: Point) -> usize {
        argmax(&self.logits_values(&[x]))
    }
}

pub struct DiscBinding {
    pub net: MlpBinding,
    pub w: Tensor,
}

impl DiscBinding {
    pub fn features(&self, tape: &mut Tape, x: Tensor) -> Result<Tensor, TensorError> {
        self.net.forward(tape, x)
    }

    pub fn logits_from_features(&self, tape: &mut Tape, f: Tensor) -> Result<Tensor, TensorError> {
        let wt = tape.transpose(self.w)?;
        tape.matmul(f, wt)
    }

    pub fn logits(&self, tape: &mut Tape, x: Tensor) -> Result<Tensor, TensorError> {
        let f = self.features(tape, x)?;
        self.logits_from_features(tape, f)
    }

    pub fn param_tensors(&self) -> Vec<Tensor> {
        let mut ps = self.net.param_tensors();
        ps.push(self.w);
        ps
    }
}

pub fn p_fake_from_logits(logits: &[f64]) -> f64 {
    let s = crate::tensor::logsumexp_slice(logits);
    (-softplus(s)).exp()
}

pub fn posterior_from_logits(logits: &[f64]) -> Vec<f64> {
    let s = crate::tensor::logsumexp_slice(logits);
    let sp = softplus(s);
    let mut out: Vec<f64> = logits.iter().map(|&l| (l - sp).exp()).collect();
    out.push((-sp).exp());
    out
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

// ── generator ─────────────────────────────────────────────────────────────

/// Latent-uniform generator; tanh output affinely mapped onto the padded
/// input box, so samples always land strictly inside it.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub net: Mlp,
    pub latent_dim: usize,
    pub bounds: InputBox,
}

impl Generator {
    pub fn new(latent_dim: usize, hidden: &[usize], bounds: InputBox, rng: &mut ChaCha8Rng) -> Self {
        let mut dims = vec![latent_dim];
        dims.extend_from_slice(hidden);
        dims.push(2);
        Self {
            net: Mlp::new("gen", &dims, LEAKY_SLOPE, rng),
            latent_dim,
            bounds,
        }
    }

    pub fn params(&self) -> Vec<&ParamTensor> {
        self.net.params()
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        self.net.params_mut()
    }

    /// Per-dimension U(0, 1) latents, flat `[n, d_z]`.
    pub fn sample_latent(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n * self.latent_dim)
            .map(|_| rng.random_range(0.0..1.0))
            .collect()
    }

    pub fn bind(&self, tape: &mut Tape) -> GenBinding {
        GenBinding {
            net: self.net.bind(tape),
            bounds: self.bounds,
        }
    }

    /// Value-path sampling: `n` points drawn through the network.
    pub fn generate(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<Point> {
        let z = self.sample_latent(n, rng);
        self.forward_values(&z, n)
    }

    pub fn forward_values(&self, z: &[f64], n: usize) -> Vec<Point> {
        let raw = self.net.forward_values(z, n);
        let c = self.bounds.center();
        let hw = self.bounds.half_widths();
        (0..n)
            .map(|i| {
                [
                    c[0] + hw[0] * raw[2 * i].tanh(),
                    c[1] + hw[1] * raw[2 * i + 1].tanh(),
                ]
            })
            .collect()
    }
}

pub struct GenBinding {
    pub net: MlpBinding,
    pub bounds: InputBox,
}

impl GenBinding {
    /// `z: [n, d_z]` to points `[n, 2]` inside the box.
    pub fn forward(&self, tape: &mut Tape, z: Tensor) -> Result<Tensor, TensorError> {
        let n = tape.shape(z)[0];
        let raw = self.net.forward(tape, z)?;
        let t = tape.tanh(raw);
        let hw = self.bounds.half_widths();
        let scale = tape.tensor(vec![hw[0], 0.0, 0.0, hw[1]], &[2, 2])?;
        let scaled = tape.matmul(t, scale)?;
        let c = self.bounds.center();
        let centers = tape.tensor([c[0], c[1]].repeat(n), &[n, 2])?;
        tape.add(scaled, centers)
    }

    pub fn param_tensors(&self) -> Vec<Tensor> {
        self.net.param_tensors()
    }
}

// ── encoder ───────────────────────────────────────────────────────────────

/// Diagonal-Gaussian posterior q(z | x) with variance squashed strictly
/// inside (0, theta^2).
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub net: Mlp,
    pub latent_dim: usize,
    pub variance_cap: f64,
}

impl Encoder {
    pub fn new(latent_dim: usize, hidden: &[usize], variance_cap: f64, rng: &mut ChaCha8Rng) -> Self {
        assert!(variance_cap > 0.0);
        let mut dims = vec![2];
        dims.extend_from_slice(hidden);
        dims.push(2 * latent_dim);
        Self {
            net: Mlp::new("enc", &dims, LEAKY_SLOPE, rng),
            latent_dim,
            variance_cap,
        }
    }

    pub fn params(&self) -> Vec<&ParamTensor> {
        self.net.params()
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        self.net.params_mut()
    }

    pub fn bind(&self, tape: &mut Tape) -> EncBinding {
        EncBinding {
            net: self.net.bind(tape),
            latent_dim: self.latent_dim,
            variance_cap: self.variance_cap,
        }
    }

    fn squash_sigma(&self, raw: f64) -> f64 {
        self.variance_cap * (SIGMA_MARGIN + (1.0 - 2.0 * SIGMA_MARGIN) * sigmoid(raw))
    }

    /// `(mu, sigma)` for one input, value path.
    pub fn encode(&self, x: Point) -> (Vec<f64>, Vec<f64>) {
        let out = self.net.forward_values(&x, 1);
        let mu = out[..self.latent_dim].to_vec();
        let sigma = out[self.latent_dim..]
            .iter()
            .map(|&r| self.squash_sigma(r))
            .collect();
        (mu, sigma)
    }

    /// `log q(z | x)` of the diagonal Gaussian.
    pub fn log_prob(&self, x: Point, z: &[f64]) -> f64 {
        assert_eq!(z.len(), self.latent_dim);
        let (mu, sigma) = self.encode(x);
        z.iter()
            .zip(mu.iter().zip(&sigma))
            .map(|(&zj, (&mj, &sj))| {
                -0.5 * (2.0 * std::f64::consts::PI).ln() - sj.ln() - (zj - mj).powi(2) / (2.0 * sj * sj)
            })
            .sum()
    }
}

pub struct EncBinding {
    pub net: MlpBinding,
    pub latent_dim: usize,
    pub variance_cap: f64,
}

impl EncBinding {
    /// On-tape `(mu, sigma)` for a batch `x: [n, 2]`; both `[n, d_z]`.
    pub fn encode(&self, tape: &mut Tape, x: Tensor) -> Result<(Tensor, Tensor), TensorError> {
        let out = self.net.forward(tape, x)?;
        let mu = tape.slice_cols(out, 0, self.latent_dim)?;
        let raw = tape.slice_cols(out, self.latent_dim, self.latent_dim)?;
        let sig = tape.sigmoid(raw);
        let scaled = tape.scale(sig, self.variance_cap * (1.0 - 2.0 * SIGMA_MARGIN));
        let sigma = tape.add_const(scaled, self.variance_cap * SIGMA_MARGIN);
        Ok((mu, sigma))
    }

    pub fn param_tensors(&self) -> Vec<Tensor> {
        self.net.param_tensors()
    }
}

// ── oracle complement sampler ─────────────────────────────────────────────

/// Rejection sampler for the ideal complement generator: uniform in the box,
/// discarding candidates within `radius` of any unlabeled point. Errors out
/// if fewer than 1% of proposals survive after 1e5 draws.
pub fn oracle_complement_sampler(
    bounds: &InputBox,
    unlabeled: &[Point],
    radius: f64,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Point>, ModelError> {
    if radius <= 0.0 {
        return Err(ModelError::InvalidArgument(format!("radius {radius}")));
    }
    let r2 = radius * radius;
    let mut out = Vec::with_capacity(n);
    let mut proposals = 0usize;
    while out.len() < n {
        proposals += 1;
        let p = [
            rng.random_range(bounds.min[0]..bounds.max[0]),
            rng.random_range(bounds.min[1]..bounds.max[1]),
        ];
        let clear = unlabeled
            .iter()
            .all(|q| (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) > r2);
        if clear {
            out.push(p);
        }
        if proposals % 100_000 == 0 && (out.len() as f64) < 0.01 * proposals as f64 {
            return Err(ModelError::OracleSaturated {
                accepted: out.len(),
                proposals,
            });
        }
    }
    Ok(out)
}

/// Fraction of uniform proposals that would survive the complement rejection.
pub fn complement_acceptance_fraction(
    bounds: &InputBox,
    unlabeled: &[Point],
    radius: f64,
    trials: usize,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let r2 = radius * radius;
    let mut accepted = 0usize;
    for _ in 0..trials {
        let p = [
            rng.random_range(bounds.min[0]..bounds.max[0]),
            rng.random_range(bounds.min[1]..bounds.max[1]),
        ];
        if unlabeled
            .iter()
            .all(|q| (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) > r2)
        {
            accepted += 1;
        }
    }
    accepted as f64 / trials as f64
}

// ── textual parameter checkpoints ─────────────────────────────────────────

pub fn serialize_params(params: &[&ParamTensor]) -> String {
    let mut out = String::new();
    for p in params {
        let shape: Vec<String> = p.shape.iter().map(|d| d.to_string()).collect();
        out.push_str(&format!("param {} {}\n", p.name, shape.join(" ")));
        let vals: Vec<String> = p.values.iter().map(|v| format!("{v}")).collect();
        out.push_str(&vals.join(" "));
        out.push('\n');
    }
    out
}

pub fn parse_params(text: &str) -> Result<Vec<ParamTensor>, ModelError> {
    let mut out = Vec::new();
    let mut lines = text.lines().enumerate().peekable();
    while let Some((i, line)) = lines.next() {
        if line.trim().is_empty() {
            continue;
        }
        let header = line.strip_prefix("param ").ok_or(ModelError::Parse {
            line: i + 1,
            msg: "expected param header".into(),
        })?;
        let mut toks = header.split_whitespace();
        let name = toks
            .next()
            .ok_or(ModelError::Parse {
                line: i + 1,
                msg: "missing name".into(),
            })?
            .to_string();
        let shape: Vec<usize> = toks
            .map(|t| {
                usize::from_str(t).map_err(|e| ModelError::Parse {
                    line: i + 1,
                    msg: e.to_string(),
                })
            })
            .collect::<Result<_, _>>()?;
        let (j, vals_line) = lines.next().ok_or(ModelError::Parse {
            line: i + 2,
            msg: "missing values".into(),
        })?;
        let values: Vec<f64> = vals_line
            .split_whitespace()
            .map(|t| {
                f64::from_str(t).map_err(|e| ModelError::Parse {
                    line: j + 1,
                    msg: e.to_string(),
                })
            })
            .collect::<Result<_, _>>()?;
        if values.len() != shape.iter().product::<usize>() {
            return Err(ModelError::Parse {
                line: j + 1,
                msg: format!("{} values for shape {:?}", values.len(), shape),
            });
        }
        out.push(ParamTensor {
            name,
            shape,
            values,
        });
    }
    Ok(out)
}

/// Copies `loaded` values into `targets`, matching by name and shape.
pub fn load_params(targets: &mut [&mut ParamTensor], loaded: &[ParamTensor]) -> Result<(), ModelError> {
    for t in targets.iter_mut() {
        let src = loaded
            .iter()
            .find(|p| p.name == t.name)
            .ok_or_else(|| ModelError::InvalidArgument(format!("missing param {}", t.name)))?;
        if src.shape != t.shape {
            return Err(ModelError::InvalidArgument(format!(
                "shape mismatch for {}: {:?} vs {:?}",
                t.name, src.shape, t.shape
            )));
        }
        t.values = src.values.clone();
    }
    Ok(())
}
