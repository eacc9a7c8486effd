//! Tape-based reverse-mode automatic differentiation over dense f64 tensors.
//!
//! A [`Tape`] owns every node (values, gradient buffer, recorded op); a
//! [`Tensor`] is a copyable handle into it. Nodes are appended in evaluation
//! order, so parents always precede children and the backward pass is a plain
//! reverse sweep. Tapes are built fresh for every loss evaluation and never
//! reused across steps.

mod adam;
mod check;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use check::grad_check;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid axis {axis} for rank-{rank} tensor")]
    InvalidAxis { axis: usize, rank: usize },
    #[error("log of non-positive value {0}")]
    LogDomain(f64),
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("{0}")]
    Invalid(String),
}

/// Handle to a node on a [`Tape`]. Valid only for the tape that created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tensor {
    id: usize,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Matmul(usize, usize),
    Transpose(usize),
    Relu(usize),
    LeakyRelu(usize, f64),
    Tanh(usize),
    Sigmoid(usize),
    Exp(usize),
    Log(usize),
    Sqrt(usize),
    Square(usize),
    Softplus(usize),
    Clamp { x: usize, lo: f64, hi: f64 },
    LogSumExp { x: usize, axis: usize },
    Sum { x: usize, axis: Option<usize> },
    Mean { x: usize, axis: Option<usize> },
    AddBias { x: usize, bias: usize },
    AddCol { x: usize, col: usize },
    ScaleRows { x: usize, scale: usize },
    SliceCols { x: usize, start: usize, len: usize },
    /// Row-wise scalar function of `x` supplied by an external model, with a
    /// precomputed Jacobian (one gradient row per input row). The Jacobian is
    /// captured at node creation, which is sound because tape values are
    /// immutable once written.
    RowwiseExternal { x: usize, jac: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Vec<f64>,
    op: Op,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Ordered record of primitive operations; see module docs.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, values: Vec<f64>, op: Op) -> Tensor {
        debug_assert_eq!(values.len(), numel(&shape));
        let id = self.nodes.len();
        let n = values.len();
        self.nodes.push(Node {
            shape,
            values,
            grad: vec![0.0; n],
            op,
        });
        Tensor { id }
    }

    /// New leaf tensor. Fails if `values.len()` does not match the shape.
    pub fn tensor(&mut self, values: Vec<f64>, shape: &[usize]) -> Result<Tensor, TensorError> {
        if values.len() != numel(shape) {
            return Err(TensorError::ShapeMismatch(format!(
                "{} values for shape {:?}",
                values.len(),
                shape
            )));
        }
        Ok(self.push(shape.to_vec(), values, Op::Leaf))
    }

    /// Rank-0 leaf.
    pub fn scalar(&mut self, v: f64) -> Tensor {
        self.push(vec![], vec![v], Op::Leaf)
    }

    pub fn shape(&self, t: Tensor) -> &[usize] {
        &self.nodes[t.id].shape
    }

    pub fn values(&self, t: Tensor) -> &[f64] {
        &self.nodes[t.id].values
    }

    pub fn grad(&self, t: Tensor) -> &[f64] {
        &self.nodes[t.id].grad
    }

    /// Value of a single-element tensor.
    pub fn scalar_value(&self, t: Tensor) -> f64 {
        debug_assert_eq!(self.nodes[t.id].values.len(), 1);
        self.nodes[t.id].values[0]
    }

    // ── elementwise binary ops (equal shapes, or scalar broadcast) ────────

    fn binary(
        &mut self,
        a: Tensor,
        b: Tensor,
        name: &str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Tensor, TensorError> {
        let (sa, sb) = (&self.nodes[a.id].shape, &self.nodes[b.id].shape);
        let (na, nb) = (numel(sa), numel(sb));
        let out_shape = if sa == sb {
            sa.clone()
        } else if nb == 1 {
            sa.clone()
        } else if na == 1 {
            sb.clone()
        } else {
            return Err(TensorError::ShapeMismatch(format!(
                "{name}: {sa:?} vs {sb:?}"
            )));
        };
        let va = &self.nodes[a.id].values;
        let vb = &self.nodes[b.id].values;
        let n = numel(&out_shape);
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let x = if na == 1 { va[0] } else { va[i] };
            let y = if nb == 1 { vb[0] } else { vb[i] };
            out.push(f(x, y));
        }
        Ok(self.push(out_shape, out, op))
    }

    pub fn add(&mut self, a: Tensor, b: Tensor) -> Result<Tensor, TensorError> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a.id, b.id))
    }

    pub fn sub(&mut self, a: Tensor, b: Tensor) -> Result<Tensor, TensorError> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a.id, b.id))
    }

    pub fn mul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor, TensorError> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a.id, b.id))
    }

    pub fn div(&mut self, a: Tensor, b: Tensor) -> Result<Tensor, TensorError> {
        self.binary(a, b, "div", |x, y| x / y, Op::Div(a.id, b.id))
    }

    /// `t + c` with a fresh constant scalar leaf.
    pub fn add_const(&mut self, t: Tensor, c: f64) -> Tensor {
        let s = self.scalar(c);
        self.add(t, s).expect("scalar broadcast cannot fail")
    }

    /// `c * t` with a fresh constant scalar leaf.
    pub fn scale(&mut self, t: Tensor, c: f64) -> Tensor {
        let s = self.scalar(c);
        self.mul(t, s).expect("scalar broadcast cannot fail")
    }

    pub fn neg(&mut self, t: Tensor) -> Tensor {
        self.scale(t, -1.0)
    }

    // ── elementwise unary ops ─────────────────────────────────────────────

    fn unary(&mut self, x: Tensor, f: impl Fn(f64) -> f64, op: Op) -> Tensor {
        let node = &self.nodes[x.id];
        let out: Vec<f64> = node.values.iter().map(|&v| f(v)).collect();
        let shape = node.shape.clone();
        self.push(shape, out, op)
    }

    pub fn relu(&mut self, x: Tensor) -> Tensor {
        self.unary(x, |v| v.max(0.0), Op::Relu(x.id))
    }

    pub fn leaky_relu(&mut self, x: Tensor, slope: f64) -> Tensor {
        self.unary(
            x,
            |v| if v > 0.0 { v } else { slope * v },
            Op::LeakyRelu(x.id, slope),
        )
    }

    pub fn tanh(&mut self, x: Tensor) -> Tensor {
        self.unary(x, f64::tanh, Op::Tanh(x.id))
    }

    pub fn sigmoid(&mut self, x: Tensor) -> Tensor {
        self.unary(x, sigmoid, Op::Sigmoid(x.id))
    }

    pub fn exp(&mut self, x: Tensor) -> Tensor {
        self.unary(x, f64::exp, Op::Exp(x.id))
    }

    pub fn log(&mut self, x: Tensor) -> Result<Tensor, TensorError> {
        if let Some(&bad) = self.nodes[x.id].values.iter().find(|&&v| v <= 0.0) {
            return Err(TensorError::LogDomain(bad));
        }
        Ok(self.unary(x, f64::ln, Op::Log(x.id)))
    }

    pub fn sqrt(&mut self, x: Tensor) -> Tensor {
        self.unary(x, f64::sqrt, Op::Sqrt(x.id))
    }

    pub fn square(&mut self, x: Tensor) -> Tensor {
        self.unary(x, |v| v * v, Op::Square(x.id))
    }

    /// Numerically stable `log(1 + exp(x))`; adjoint is `sigmoid(x)`.
    pub fn softplus(&mut self, x: Tensor) -> Tensor {
        self.unary(x, softplus, Op::Softplus(x.id))
    }

    pub fn clamp(&mut self, x: Tensor, lo: f64, hi: f64) -> Tensor {
        self.unary(x, |v| v.clamp(lo, hi), Op::Clamp { x: x.id, lo, hi })
    }

    // ── linear algebra ────────────────────────────────────────────────────

    pub fn matmul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor, TensorError> {
        let (sa, sb) = (&self.nodes[a.id].shape, &self.nodes[b.id].shape);
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::ShapeMismatch(format!(
                "matmul: {sa:?} x {sb:?}"
            )));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = matmul_vals(
            &self.nodes[a.id].values,
            &self.nodes[b.id].values,
            m,
            k,
            n,
        );
        Ok(self.push(vec![m, n], out, Op::Matmul(a.id, b.id)))
    }

    pub fn transpose(&mut self, x: Tensor) -> Result<Tensor, TensorError> {
        let s = &self.nodes[x.id].shape;
        if s.len() != 2 {
            return Err(TensorError::ShapeMismatch(format!("transpose: {s:?}")));
        }
        let (m, n) = (s[0], s[1]);
        let out = transpose_vals(&self.nodes[x.id].values, m, n);
        Ok(self.push(vec![n, m], out, Op::Transpose(x.id)))
    }

    /// Adds a rank-1 bias `[n]` to every row of `x: [m, n]`.
    pub fn add_bias(&mut self, x: Tensor, bias: Tensor) -> Result<Tensor, TensorError> {
        let sx = self.nodes[x.id].shape.clone();
        let sb = &self.nodes[bias.id].shape;
        if sx.len() != 2 || sb.len() != 1 || sb[0] != sx[1] {
            return Err(TensorError::ShapeMismatch(format!(
                "add_bias: {sx:?} + {sb:?}"
            )));
        }
        let (m, n) = (sx[0], sx[1]);
        let vx = &self.nodes[x.id].values;
        let vb = &self.nodes[bias.id].values;
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for j in 0..n {
                out.push(vx[i * n + j] + vb[j]);
            }
        }
        Ok(self.push(
            sx,
            out,
            Op::AddBias {
                x: x.id,
                bias: bias.id,
            },
        ))
    }

    /// Adds a rank-1 column `[m]` to every column of `x: [m, n]`, i.e.
    /// `out[i, j] = x[i, j] + col[i]`.
    pub fn add_col(&mut self, x: Tensor, col: Tensor) -> Result<Tensor, TensorError> {
        let sx = self.nodes[x.id].shape.clone();
        let sc = &self.nodes[col.id].shape;
        if sx.len() != 2 || sc.len() != 1 || sc[0] != sx[0] {
            return Err(TensorError::ShapeMismatch(format!(
                "add_col: {sx:?} + {sc:?}"
            )));
        }
        let (m, n) = (sx[0], sx[1]);
        let vx = &self.nodes[x.id].values;
        let vc = &self.nodes[col.id].values;
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for j in 0..n {
                out.push(vx[i * n + j] + vc[i]);
            }
        }
        Ok(self.push(
            sx,
            out,
            Op::AddCol {
                x: x.id,
                col: col.id,
            },
        ))
    }

    /// Scales row `i` of `x: [m, n]` by `scale[i]`.
    pub fn scale_rows(&mut self, x: Tensor, scale: Tensor) -> Result<Tensor, TensorError> {
        let sx = self.nodes[x.id].shape.clone();
        let ss = &self.nodes[scale.id].shape;
        if sx.len() != 2 || ss.len() != 1 || ss[0] != sx[0] {
            return Err(TensorError::ShapeMismatch(format!(
                "scale_rows: {sx:?} * {ss:?}"
            )));
        }
        let (m, n) = (sx[0], sx[1]);
        let vx = &self.nodes[x.id].values;
        let vs = &self.nodes[scale.id].values;
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for j in 0..n {
                out.push(vx[i * n + j] * vs[i]);
            }
        }
        Ok(self.push(
            sx,
            out,
            Op::ScaleRows {
                x: x.id,
                scale: scale.id,
            },
        ))
    }

    /// Column slice `x[:, start..start+len]` of a 2D tensor.
    pub fn slice_cols(
        &mut self,
        x: Tensor,
        start: usize,
        len: usize,
    ) -> Result<Tensor, TensorError> {
        let s = &self.nodes[x.id].shape;
        if s.len() != 2 || start + len > s[1] {
            return Err(TensorError::ShapeMismatch(format!(
                "slice_cols {start}..{} of {s:?}",
                start + len
            )));
        }
        let (m, n) = (s[0], s[1]);
        let vx = &self.nodes[x.id].values;
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&vx[i * n + start..i * n + start + len]);
        }
        Ok(self.push(
            vec![m, len],
            out,
            Op::SliceCols {
                x: x.id,
                start,
                len,
            },
        ))
    }

    // ── reductions ────────────────────────────────────────────────────────

    /// Max-subtracted `log Σ exp` along `axis`. 2D input reduces the given
    /// axis to a rank-1 result; 1D input with axis 0 reduces to a scalar.
    pub fn logsumexp(&mut self, x: Tensor, axis: usize) -> Result<Tensor, TensorError> {
        let s = self.nodes[x.id].shape.clone();
        let v = &self.nodes[x.id].values;
        let (out_shape, out) = match s.len() {
            1 => {
                if axis != 0 {
                    return Err(TensorError::InvalidAxis { axis, rank: 1 });
                }
                (vec![], vec![logsumexp_slice(v)])
            }
            2 => {
                let (m, n) = (s[0], s[1]);
                match axis {
                    1 => {
                        let out = (0..m)
                            .map(|i| logsumexp_slice(&v[i * n..(i + 1) * n]))
                            .collect();
                        (vec![m], out)
                    }
                    0 => {
                        let out = (0..n)
                            .map(|j| {
                                let col: Vec<f64> = (0..m).map(|i| v[i * n + j]).collect();
                                logsumexp_slice(&col)
                            })
                            .collect();
                        (vec![n], out)
                    }
                    _ => return Err(TensorError::InvalidAxis { axis, rank: 2 }),
                }
            }
            r => return Err(TensorError::InvalidAxis { axis, rank: r }),
        };
        Ok(self.push(out_shape, out, Op::LogSumExp { x: x.id, axis }))
    }

    fn reduce(
        &mut self,
        x: Tensor,
        axis: Option<usize>,
        mean: bool,
    ) -> Result<Tensor, TensorError> {
        let s = self.nodes[x.id].shape.clone();
        let v = &self.nodes[x.id].values;
        let (out_shape, mut out) = match axis {
            None => (vec![], vec![v.iter().sum::<f64>()]),
            Some(ax) => match s.len() {
                1 if ax == 0 => (vec![], vec![v.iter().sum::<f64>()]),
                2 if ax == 0 => {
                    let (m, n) = (s[0], s[1]);
                    let mut acc = vec![0.0; n];
                    for i in 0..m {
                        for j in 0..n {
                            acc[j] += v[i * n + j];
                        }
                    }
                    (vec![n], acc)
                }
                2 if ax == 1 => {
                    let (m, n) = (s[0], s[1]);
                    let out = (0..m).map(|i| v[i * n..(i + 1) * n].iter().sum()).collect();
                    (vec![m], out)
                }
                r => return Err(TensorError::InvalidAxis { axis: ax, rank: r }),
            },
        };
        if mean {
            let count = reduced_count(&s, axis) as f64;
            for o in &mut out {
                *o /= count;
            }
        }
        let op = if mean {
            Op::Mean { x: x.id, axis }
        } else {
            Op::Sum { x: x.id, axis }
        };
        Ok(self.push(out_shape, out, op))
    }

    pub fn sum(&mut self, x: Tensor, axis: Option<usize>) -> Result<Tensor, TensorError> {
        self.reduce(x, axis, false)
    }

    pub fn mean(&mut self, x: Tensor, axis: Option<usize>) -> Result<Tensor, TensorError> {
        self.reduce(x, axis, true)
    }

    // ── external functions ────────────────────────────────────────────────

    /// Attaches a row-wise scalar function computed outside the tape.
    /// `x` is `[m, n]`; `values[i]` is the function value on row `i` and
    /// `jac[i*n..][..n]` its gradient with respect to that row. The output is
    /// `[m]` and backward routes `upstream[i] * jac[i, :]` into `x`.
    pub fn rowwise_external(
        &mut self,
        x: Tensor,
        values: Vec<f64>,
        jac: Vec<f64>,
    ) -> Result<Tensor, TensorError> {
        let s = &self.nodes[x.id].shape;
        if s.len() != 2 {
            return Err(TensorError::ShapeMismatch(format!(
                "rowwise_external: {s:?}"
            )));
        }
        let (m, n) = (s[0], s[1]);
        if values.len() != m || jac.len() != m * n {
            return Err(TensorError::ShapeMismatch(format!(
                "rowwise_external: {} values / {} jac for [{m}, {n}]",
                values.len(),
                jac.len()
            )));
        }
        Ok(self.push(vec![m], values, Op::RowwiseExternal { x: x.id, jac }))
    }

    // ── backward ──────────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss; populates `grad` on every ancestor.
    pub fn backward(&mut self, loss: Tensor) -> Result<(), TensorError> {
        if numel(&self.nodes[loss.id].shape) != 1 {
            return Err(TensorError::NonScalarLoss(self.nodes[loss.id].shape.clone()));
        }
        self.nodes[loss.id].grad[0] = 1.0;
        for i in (0..=loss.id).rev() {
            if self.nodes[i].grad.iter().all(|&g| g == 0.0) {
                continue;
            }
            let up = self.nodes[i].grad.clone();
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    self.accumulate(a, &up);
                    self.accumulate(b, &up);
                }
                Op::Sub(a, b) => {
                    self.accumulate(a, &up);
                    let neg: Vec<f64> = up.iter().map(|g| -g).collect();
                    self.accumulate(b, &neg);
                }
                Op::Mul(a, b) => {
                    let ca = self.broadcast_mul(&up, b);
                    let cb = self.broadcast_mul(&up, a);
                    self.accumulate(a, &ca);
                    self.accumulate(b, &cb);
                }
                Op::Div(a, b) => {
                    let va = self.broadcast_vals(a, up.len());
                    let vb = self.broadcast_vals(b, up.len());
                    let ca: Vec<f64> = up.iter().zip(&vb).map(|(g, y)| g / y).collect();
                    let cb: Vec<f64> = up
                        .iter()
                        .zip(va.iter().zip(&vb))
                        .map(|(g, (x, y))| -g * x / (y * y))
                        .collect();
                    self.accumulate(a, &ca);
                    self.accumulate(b, &cb);
                }
                Op::Matmul(a, b) => {
                    let (m, k) = {
                        let s = &self.nodes[a].shape;
                        (s[0], s[1])
                    };
                    let n = self.nodes[b].shape[1];
                    let bt = transpose_vals(&self.nodes[b].values, k, n);
                    let da = matmul_vals(&up, &bt, m, n, k);
                    let at = transpose_vals(&self.nodes[a].values, m, k);
                    let db = matmul_vals(&at, &up, k, m, n);
                    self.accumulate(a, &da);
                    self.accumulate(b, &db);
                }
                Op::Transpose(x) => {
                    let s = &self.nodes[i].shape;
                    let d = transpose_vals(&up, s[0], s[1]);
                    self.accumulate(x, &d);
                }
                Op::Relu(x) => self.unary_back(x, i, &up, |v, _| if v > 0.0 { 1.0 } else { 0.0 }),
                Op::LeakyRelu(x, slope) => {
                    self.unary_back(x, i, &up, |v, _| if v > 0.0 { 1.0 } else { slope })
                }
                Op::Tanh(x) => self.unary_back(x, i, &up, |_, y| 1.0 - y * y),
                Op::Sigmoid(x) => self.unary_back(x, i, &up, |_, y| y * (1.0 - y)),
                Op::Exp(x) => self.unary_back(x, i, &up, |_, y| y),
                Op::Log(x) => self.unary_back(x, i, &up, |v, _| 1.0 / v),
                Op::Sqrt(x) => self.unary_back(x, i, &up, |_, y| 0.5 / y),
                Op::Square(x) => self.unary_back(x, i, &up, |v, _| 2.0 * v),
                Op::Softplus(x) => self.unary_back(x, i, &up, |v, _| sigmoid(v)),
                Op::Clamp { x, lo, hi } => {
                    self.unary_back(x, i, &up, |v, _| if v > lo && v < hi { 1.0 } else { 0.0 })
                }
                Op::LogSumExp { x, axis } => {
                    let xs = self.nodes[x].shape.clone();
                    let xv = &self.nodes[x].values;
                    let ov = &self.nodes[i].values;
                    let mut d = vec![0.0; xv.len()];
                    match xs.len() {
                        1 => {
                            for (j, dj) in d.iter_mut().enumerate() {
                                *dj = up[0] * (xv[j] - ov[0]).exp();
                            }
                        }
                        2 => {
                            let (m, n) = (xs[0], xs[1]);
                            for r in 0..m {
                                for c in 0..n {
                                    let (g, o) = if axis == 1 {
                                        (up[r], ov[r])
                                    } else {
                                        (up[c], ov[c])
                                    };
                                    d[r * n + c] = g * (xv[r * n + c] - o).exp();
                                }
                            }
                        }
                        _ => unreachable!(),
                    }
                    self.accumulate(x, &d);
                }
                Op::Sum { x, axis } => {
                    let d = self.spread(x, axis, &up, 1.0);
                    self.accumulate(x, &d);
                }
                Op::Mean { x, axis } => {
                    let count = reduced_count(&self.nodes[x].shape, axis) as f64;
                    let d = self.spread(x, axis, &up, 1.0 / count);
                    self.accumulate(x, &d);
                }
                Op::AddBias { x, bias } => {
                    self.accumulate(x, &up);
                    let (m, n) = {
                        let s = &self.nodes[x].shape;
                        (s[0], s[1])
                    };
                    let mut db = vec![0.0; n];
                    for r in 0..m {
                        for c in 0..n {
                            db[c] += up[r * n + c];
                        }
                    }
                    self.accumulate(bias, &db);
                }
                Op::AddCol { x, col } => {
                    self.accumulate(x, &up);
                    let (m, n) = {
                        let s = &self.nodes[x].shape;
                        (s[0], s[1])
                    };
                    let mut dc = vec![0.0; m];
                    for r in 0..m {
                        for c in 0..n {
                            dc[r] += up[r * n + c];
                        }
                    }
                    self.accumulate(col, &dc);
                }
                Op::ScaleRows { x, scale } => {
                    let (m, n) = {
                        let s = &self.nodes[x].shape;
                        (s[0], s[1])
                    };
                    let vs = self.nodes[scale].values.clone();
                    let dx: Vec<f64> = up
                        .iter()
                        .enumerate()
                        .map(|(idx, g)| g * vs[idx / n])
                        .collect();
                    let mut ds = vec![0.0; m];
                    {
                        let vx = &self.nodes[x].values;
                        for r in 0..m {
                            for c in 0..n {
                                ds[r] += up[r * n + c] * vx[r * n + c];
                            }
                        }
                    }
                    self.accumulate(x, &dx);
                    self.accumulate(scale, &ds);
                }
                Op::SliceCols { x, start, len } => {
                    let (m, n) = {
                        let s = &self.nodes[x].shape;
                        (s[0], s[1])
                    };
                    let mut d = vec![0.0; m * n];
                    for r in 0..m {
                        for c in 0..len {
                            d[r * n + start + c] = up[r * len + c];
                        }
                    }
                    self.accumulate(x, &d);
                }
                Op::RowwiseExternal { x, jac } => {
                    let n = self.nodes[x].shape[1];
                    let mut d = vec![0.0; jac.len()];
                    for (r, g) in up.iter().enumerate() {
                        for c in 0..n {
                            d[r * n + c] = g * jac[r * n + c];
                        }
                    }
                    self.accumulate(x, &d);
                }
            }
        }
        Ok(())
    }

    /// Adds `contrib` (shaped like the child output) into node `id`'s grad,
    /// sum-reducing when the node was scalar-broadcast.
    fn accumulate(&mut self, id: usize, contrib: &[f64]) {
        let grad = &mut self.nodes[id].grad;
        if grad.len() == contrib.len() {
            for (g, c) in grad.iter_mut().zip(contrib) {
                *g += c;
            }
        } else {
            debug_assert_eq!(grad.len(), 1);
            grad[0] += contrib.iter().sum::<f64>();
        }
    }

    /// `upstream * values(other)` with scalar broadcast on `other`.
    fn broadcast_mul(&self, up: &[f64], other: usize) -> Vec<f64> {
        let v = &self.nodes[other].values;
        if v.len() == 1 {
            up.iter().map(|g| g * v[0]).collect()
        } else {
            up.iter().zip(v).map(|(g, x)| g * x).collect()
        }
    }

    fn broadcast_vals(&self, id: usize, len: usize) -> Vec<f64> {
        let v = &self.nodes[id].values;
        if v.len() == len {
            v.clone()
        } else {
            vec![v[0]; len]
        }
    }

    /// Broadcasts a reduced-tensor upstream gradient back to `x`'s shape.
    fn spread(&self, x: usize, axis: Option<usize>, up: &[f64], scale: f64) -> Vec<f64> {
        let s = &self.nodes[x].shape;
        match axis {
            None => vec![up[0] * scale; numel(s)],
            Some(ax) => match s.len() {
                1 => vec![up[0] * scale; numel(s)],
                2 => {
                    let (m, n) = (s[0], s[1]);
                    let mut d = vec![0.0; m * n];
                    for r in 0..m {
                        for c in 0..n {
                            d[r * n + c] = scale * if ax == 0 { up[c] } else { up[r] };
                        }
                    }
                    d
                }
                _ => unreachable!(),
            },
        }
    }

    /// `df` receives (input value, output value) per element.
    fn unary_back(&mut self, x: usize, out: usize, up: &[f64], df: impl Fn(f64, f64) -> f64) {
        let contrib: Vec<f64> = {
            let xv = &self.nodes[x].values;
            let yv = &self.nodes[out].values;
            xv.iter()
                .zip(yv)
                .zip(up)
                .map(|((&v, &y), &g)| g * df(v, y))
                .collect()
        };
        self.accumulate(x, &contrib);
    }
}

fn reduced_count(shape: &[usize], axis: Option<usize>) -> usize {
    match axis {
        None => numel(shape),
        Some(ax) => match shape.len() {
            1 => shape[0],
            2 => shape[ax],
            _ => unreachable!(),
        },
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn logsumexp_slice(v: &[f64]) -> f64 {
    let mx = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if mx.is_infinite() {
        return mx;
    }
    mx + v.iter().map(|&x| (x - mx).exp()).sum::<f64>().ln()
}

pub(crate) fn matmul_vals(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for j in 0..n {
                out[i * n + j] += av * b[p * n + j];
            }
        }
    }
    out
}

pub(crate) fn transpose_vals(v: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = v[i * n + j];
        }
    }
    out
}
