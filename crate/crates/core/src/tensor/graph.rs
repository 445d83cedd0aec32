use super::kernels::{gemm_nn, gemm_nt, gemm_tn, permute};
use super::{matmul_dims, shape_str, Tensor};
use crate::error::{Error, Result};
use crate::rng::SeedRng;

/// Handle to a node on a [`Graph`]. Only meaningful for the graph that issued it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// Fill value for masked attention scores. Finite, but far enough below any
/// real score that `exp` underflows to exactly zero after max-subtraction.
const MASKED_SCORE: f64 = -1e9;

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044_715;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    BatchMatMul {
        a: usize,
        b: usize,
        trans_b: bool,
    },
    Add(usize, usize),
    AddBias(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Relu(usize),
    Gelu(usize),
    Softmax(usize),
    LogSoftmax(usize),
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    MaskMul(usize, Vec<f64>),
    Rows {
        table: usize,
        ids: Vec<usize>,
    },
    Reshape(usize),
    Permute(usize, Vec<usize>),
    Concat(Vec<usize>),
    MaskKeys {
        x: usize,
        keep: Vec<bool>,
    },
    Sum(usize),
    Mean(usize),
    CrossEntropy {
        logits: usize,
        targets: Vec<usize>,
        weights: Vec<f64>,
        probs: Vec<f64>,
        active: Vec<bool>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// A recorded computation. Nodes are appended in evaluation order, so the
/// tape index order is already a topological order of the DAG.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[usize]) -> bool {
        vars.iter().any(|&v| self.nodes[v].requires_grad)
    }

    fn shape(&self, v: usize) -> &[usize] {
        self.nodes[v].value.shape()
    }

    fn data(&self, v: usize) -> &[f64] {
        self.nodes[v].value.data()
    }

    /// Differentiable leaf (a parameter).
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if backward has reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k, n) = matmul_dims(self.shape(a.0), self.shape(b.0))?;
        let mut out = vec![0.0; m * n];
        gemm_nn(self.data(a.0), self.data(b.0), &mut out, m, k, n);
        let rg = self.rg(&[a.0, b.0]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a.0, b.0), rg))
    }

    /// Batched product over matching leading dims:
    /// `[..., m, k] · [..., k, n]`, or `[..., m, k] · [..., n, k]ᵀ` with `trans_b`.
    pub fn batch_matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let sa = self.shape(a.0).to_vec();
        let sb = self.shape(b.0).to_vec();
        let bad = || {
            Error::Dimension(format!(
                "batch_matmul of {} by {}{}",
                shape_str(&sa),
                shape_str(&sb),
                if trans_b { "ᵀ" } else { "" }
            ))
        };
        if sa.len() < 3 || sa.len() != sb.len() || sa[..sa.len() - 2] != sb[..sb.len() - 2] {
            return Err(bad());
        }
        let r = sa.len();
        let (m, k) = (sa[r - 2], sa[r - 1]);
        let (kb, n) = if trans_b {
            (sb[r - 1], sb[r - 2])
        } else {
            (sb[r - 2], sb[r - 1])
        };
        if k != kb {
            return Err(bad());
        }
        let batch: usize = sa[..r - 2].iter().product();
        let mut out = vec![0.0; batch * m * n];
        let (da, db) = (self.data(a.0), self.data(b.0));
        for i in 0..batch {
            let ai = &da[i * m * k..(i + 1) * m * k];
            let bi = &db[i * k * n..(i + 1) * k * n];
            let ci = &mut out[i * m * n..(i + 1) * m * n];
            if trans_b {
                gemm_nt(ai, bi, ci, m, k, n);
            } else {
                gemm_nn(ai, bi, ci, m, k, n);
            }
        }
        let mut shape = sa[..r - 2].to_vec();
        shape.extend([m, n]);
        let rg = self.rg(&[a.0, b.0]);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::BatchMatMul {
                a: a.0,
                b: b.0,
                trans_b,
            },
            rg,
        ))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a.0) != self.shape(b.0) {
            return Err(Error::Dimension(format!(
                "{what} of {} and {}",
                shape_str(self.shape(a.0)),
                shape_str(self.shape(b.0))
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out: Vec<f64> = self
            .data(a.0)
            .iter()
            .zip(self.data(b.0))
            .map(|(x, y)| x + y)
            .collect();
        let t = Tensor::new(self.shape(a.0).to_vec(), out)?;
        let rg = self.rg(&[a.0, b.0]);
        Ok(self.push(t, Op::Add(a.0, b.0), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out: Vec<f64> = self
            .data(a.0)
            .iter()
            .zip(self.data(b.0))
            .map(|(x, y)| x * y)
            .collect();
        let t = Tensor::new(self.shape(a.0).to_vec(), out)?;
        let rg = self.rg(&[a.0, b.0]);
        Ok(self.push(t, Op::Mul(a.0, b.0), rg))
    }

    /// `x + bias` with `bias` broadcast over every row of the last axis.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let sx = self.shape(x.0);
        let sb = self.shape(bias.0);
        if sx.is_empty() || sb.len() != 1 || sb[0] != sx[sx.len() - 1] {
            return Err(Error::Dimension(format!(
                "add_bias of {} and {}",
                shape_str(sx),
                shape_str(sb)
            )));
        }
        let n = sb[0];
        let b = self.data(bias.0);
        let out: Vec<f64> = self
            .data(x.0)
            .iter()
            .enumerate()
            .map(|(i, v)| v + b[i % n])
            .collect();
        let t = Tensor::new(self.shape(x.0).to_vec(), out)?;
        let rg = self.rg(&[x.0, bias.0]);
        Ok(self.push(t, Op::AddBias(x.0, bias.0), rg))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out: Vec<f64> = self.data(x.0).iter().map(|v| v * c).collect();
        let t = Tensor::new(self.shape(x.0).to_vec(), out).expect("same shape");
        let rg = self.rg(&[x.0]);
        self.push(t, Op::Scale(x.0, c), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out: Vec<f64> = self.data(x.0).iter().map(|v| v.max(0.0)).collect();
        let t = Tensor::new(self.shape(x.0).to_vec(), out).expect("same shape");
        let rg = self.rg(&[x.0]);
        self.push(t, Op::Relu(x.0), rg)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let out: Vec<f64> = self
            .data(x.0)
            .iter()
            .map(|&v| 0.5 * v * (1.0 + (SQRT_2_OVER_PI * (v + GELU_C * v * v * v)).tanh()))
            .collect();
        let t = Tensor::new(self.shape(x.0).to_vec(), out).expect("same shape");
        let rg = self.rg(&[x.0]);
        self.push(t, Op::Gelu(x.0), rg)
    }

    fn last_axis(&self, x: Var, what: &str) -> Result<usize> {
        match self.shape(x.0).last() {
            Some(&c) if c > 0 => Ok(c),
            _ => Err(Error::Dimension(format!(
                "{what} needs a non-empty last axis, got {}",
                shape_str(self.shape(x.0))
            ))),
        }
    }

    /// Softmax over the last axis, max-subtracted.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let c = self.last_axis(x, "softmax")?;
        let mut out = self.data(x.0).to_vec();
        for row in out.chunks_mut(c) {
            softmax_in_place(row);
        }
        let t = Tensor::new(self.shape(x.0).to_vec(), out)?;
        let rg = self.rg(&[x.0]);
        Ok(self.push(t, Op::Softmax(x.0), rg))
    }

    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let c = self.last_axis(x, "log_softmax")?;
        let mut out = self.data(x.0).to_vec();
        for row in out.chunks_mut(c) {
            let lse = log_sum_exp(row);
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let t = Tensor::new(self.shape(x.0).to_vec(), out)?;
        let rg = self.rg(&[x.0]);
        Ok(self.push(t, Op::LogSoftmax(x.0), rg))
    }

    /// Per-row normalization over the last axis followed by `gamma`/`beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        if eps.is_nan() || eps <= 0.0 {
            return Err(Error::Parameter(format!("layer_norm eps must be > 0, got {eps}")));
        }
        let h = self.last_axis(x, "layer_norm")?;
        if self.shape(gamma.0) != [h] || self.shape(beta.0) != [h] {
            return Err(Error::Dimension(format!(
                "layer_norm over {} with gamma {} and beta {}",
                shape_str(self.shape(x.0)),
                shape_str(self.shape(gamma.0)),
                shape_str(self.shape(beta.0))
            )));
        }
        let xd = self.data(x.0);
        let g = self.data(gamma.0);
        let b = self.data(beta.0);
        let rows = xd.len() / h;
        let mut xhat = vec![0.0; xd.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; xd.len()];
        for r in 0..rows {
            let row = &xd[r * h..(r + 1) * h];
            let mean = row.iter().sum::<f64>() / h as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / h as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..h {
                let xh = (row[j] - mean) * rs;
                xhat[r * h + j] = xh;
                out[r * h + j] = xh * g[j] + b[j];
            }
        }
        let t = Tensor::new(self.shape(x.0).to_vec(), out)?;
        let rg = self.rg(&[x.0, gamma.0, beta.0]);
        Ok(self.push(
            t,
            Op::LayerNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// Inverted dropout. Identity (the same `Var`) when `!training` or `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64, rng: &mut SeedRng, training: bool) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Parameter(format!("dropout rate must lie in [0, 1), got {p}")));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.data(x.0).len())
            .map(|_| if rng.uniform() < p { 0.0 } else { keep })
            .collect();
        let out: Vec<f64> = self
            .data(x.0)
            .iter()
            .zip(&mask)
            .map(|(v, m)| v * m)
            .collect();
        let t = Tensor::new(self.shape(x.0).to_vec(), out)?;
        let rg = self.rg(&[x.0]);
        Ok(self.push(t, Op::MaskMul(x.0, mask), rg))
    }

    /// Gather rows of a rank-2 `table` (embedding lookup, CLS pooling).
    pub fn rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let st = self.shape(table.0);
        if st.len() != 2 {
            return Err(Error::Dimension(format!(
                "row gather needs a rank-2 table, got {}",
                shape_str(st)
            )));
        }
        let (n_rows, h) = (st[0], st[1]);
        if ids.is_empty() {
            return Err(Error::Dimension("row gather with no ids".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= n_rows) {
            return Err(Error::Input(format!(
                "id {bad} out of range for table with {n_rows} rows"
            )));
        }
        let td = self.data(table.0);
        let mut out = Vec::with_capacity(ids.len() * h);
        for &i in ids {
            out.extend_from_slice(&td[i * h..(i + 1) * h]);
        }
        let t = Tensor::new(vec![ids.len(), h], out)?;
        let rg = self.rg(&[table.0]);
        Ok(self.push(
            t,
            Op::Rows {
                table: table.0,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = Tensor::new(shape.to_vec(), self.data(x.0).to_vec()).map_err(|_| {
            Error::Dimension(format!(
                "cannot reshape {} into {}",
                shape_str(self.shape(x.0)),
                shape_str(shape)
            ))
        })?;
        let rg = self.rg(&[x.0]);
        Ok(self.push(t, Op::Reshape(x.0), rg))
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let sx = self.shape(x.0).to_vec();
        let mut seen = vec![false; sx.len()];
        if axes.len() != sx.len() || axes.iter().any(|&a| a >= sx.len() || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::Dimension(format!(
                "invalid permutation {axes:?} for {}",
                shape_str(&sx)
            )));
        }
        let out = permute(self.data(x.0), &sx, axes);
        let shape: Vec<usize> = axes.iter().map(|&a| sx[a]).collect();
        let rg = self.rg(&[x.0]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Permute(x.0, axes.to_vec()), rg))
    }

    /// Concatenate along the last axis; leading dims must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Dimension("concat of zero tensors".into()))?;
        let lead = self.shape(first.0)[..self.shape(first.0).len().saturating_sub(1)].to_vec();
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let s = self.shape(p.0);
            if s.is_empty() || s[..s.len() - 1] != lead[..] {
                return Err(Error::Dimension(format!(
                    "concat of {} with {}",
                    shape_str(self.shape(first.0)),
                    shape_str(s)
                )));
            }
            widths.push(s[s.len() - 1]);
        }
        let rows: usize = lead.iter().product();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.data(p.0)[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let rg = self.rg(&ids);
        Ok(self.push(Tensor::new(shape, out)?, Op::Concat(ids), rg))
    }

    /// Mask attention scores `[B, ..., S]` on the key axis.
    /// `keep[b * S + s] == false` replaces every score against key `s` of
    /// batch item `b` with a large negative constant.
    pub fn mask_keys(&mut self, x: Var, keep: &[bool], batch: usize) -> Result<Var> {
        let sx = self.shape(x.0).to_vec();
        let s = *sx.last().unwrap_or(&0);
        if sx.len() < 2 || sx[0] != batch || keep.len() != batch * s {
            return Err(Error::Dimension(format!(
                "mask of length {} for scores {}",
                keep.len(),
                shape_str(&sx)
            )));
        }
        let per_batch = self.data(x.0).len() / batch;
        let mut out = self.data(x.0).to_vec();
        for (i, v) in out.iter_mut().enumerate() {
            let b = i / per_batch;
            if !keep[b * s + i % s] {
                *v = MASKED_SCORE;
            }
        }
        let rg = self.rg(&[x.0]);
        Ok(self.push(
            Tensor::new(sx, out)?,
            Op::MaskKeys {
                x: x.0,
                keep: keep.to_vec(),
            },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x.0).iter().sum();
        let rg = self.rg(&[x.0]);
        self.push(Tensor::scalar(s), Op::Sum(x.0), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let d = self.data(x.0);
        let s = d.iter().sum::<f64>() / d.len() as f64;
        let rg = self.rg(&[x.0]);
        self.push(Tensor::scalar(s), Op::Mean(x.0), rg)
    }

    /// Weighted mean of per-row cross-entropy against integer targets:
    /// `Σ wᵢ·ceᵢ / Σ wᵢ` with `ceᵢ = −max(log pᵢ,targetᵢ, ln 1e-12)`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], weights: &[f64]) -> Result<Var> {
        let sl = self.shape(logits.0);
        if sl.len() != 2 || sl[0] != targets.len() || weights.len() != targets.len() {
            return Err(Error::Dimension(format!(
                "cross_entropy on logits {} with {} targets and {} weights",
                shape_str(sl),
                targets.len(),
                weights.len()
            )));
        }
        let m = sl[1];
        if let Some(&t) = targets.iter().find(|&&t| t >= m) {
            return Err(Error::Input(format!("target {t} out of range for {m} classes")));
        }
        let wsum: f64 = weights.iter().sum();
        if !(wsum > 0.0) || weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Parameter("instance weights must be non-negative with positive sum".into()));
        }
        let floor = LOG_CLAMP.ln();
        let mut probs = self.data(logits.0).to_vec();
        let mut active = Vec::with_capacity(targets.len());
        let mut total = 0.0;
        for (i, row) in probs.chunks_mut(m).enumerate() {
            let lse = log_sum_exp(row);
            let logp = row[targets[i]] - lse;
            let on = logp >= floor;
            active.push(on);
            total += weights[i] * -(if on { logp } else { floor });
            for v in row.iter_mut() {
                *v = (*v - lse).exp();
            }
        }
        let rg = self.rg(&[logits.0]);
        Ok(self.push(
            Tensor::scalar(total / wsum),
            Op::CrossEntropy {
                logits: logits.0,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                probs,
                active,
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar `loss`. Leaf gradients accumulate across
    /// calls until [`Graph::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {}",
                shape_str(self.shape(loss.0))
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                let node = &mut self.nodes[i];
                match &mut node.grad {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => node.grad = Some(g),
                }
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let nodes = &self.nodes;
        let mut send = |target: usize, contrib: Vec<f64>| {
            if !nodes[target].requires_grad {
                return;
            }
            match &mut grads[target] {
                Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(contrib),
            }
        };
        let wants = |v: usize| nodes[v].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                if wants(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm_nt(g, self.data(*b), &mut da, m, n, k);
                    send(*a, da);
                }
                if wants(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm_tn(self.data(*a), g, &mut db, k, m, n);
                    send(*b, db);
                }
            }
            Op::BatchMatMul { a, b, trans_b } => {
                let sa = self.shape(*a);
                let r = sa.len();
                let (m, k) = (sa[r - 2], sa[r - 1]);
                let n = node.value.shape()[r - 1];
                let batch: usize = sa[..r - 2].iter().product();
                let (ad, bd) = (self.data(*a), self.data(*b));
                if wants(*a) {
                    let mut da = vec![0.0; batch * m * k];
                    for t in 0..batch {
                        let gi = &g[t * m * n..(t + 1) * m * n];
                        let bi = &bd[t * k * n..(t + 1) * k * n];
                        let di = &mut da[t * m * k..(t + 1) * m * k];
                        if *trans_b {
                            // C = A·Bᵀ with B [n×k]: dA = dC·B
                            gemm_nn(gi, bi, di, m, n, k);
                        } else {
                            gemm_nt(gi, bi, di, m, n, k);
                        }
                    }
                    send(*a, da);
                }
                if wants(*b) {
                    let mut db = vec![0.0; batch * k * n];
                    for t in 0..batch {
                        let gi = &g[t * m * n..(t + 1) * m * n];
                        let ai = &ad[t * m * k..(t + 1) * m * k];
                        let di = &mut db[t * k * n..(t + 1) * k * n];
                        if *trans_b {
                            // dB [n×k] = dCᵀ·A
                            gemm_tn(gi, ai, di, n, m, k);
                        } else {
                            gemm_tn(ai, gi, di, k, m, n);
                        }
                    }
                    send(*b, db);
                }
            }
            Op::Add(a, b) => {
                if wants(*a) {
                    send(*a, g.to_vec());
                }
                if wants(*b) {
                    send(*b, g.to_vec());
                }
            }
            Op::AddBias(x, b) => {
                if wants(*x) {
                    send(*x, g.to_vec());
                }
                if wants(*b) {
                    let n = self.shape(*b)[0];
                    let mut db = vec![0.0; n];
                    for row in g.chunks(n) {
                        db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                    }
                    send(*b, db);
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    send(*a, g.iter().zip(self.data(*b)).map(|(g, y)| g * y).collect());
                }
                if wants(*b) {
                    send(*b, g.iter().zip(self.data(*a)).map(|(g, x)| g * x).collect());
                }
            }
            Op::Scale(x, c) => send(*x, g.iter().map(|v| v * c).collect()),
            Op::Relu(x) => send(
                *x,
                g.iter()
                    .zip(self.data(*x))
                    .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                    .collect(),
            ),
            Op::Gelu(x) => send(
                *x,
                g.iter()
                    .zip(self.data(*x))
                    .map(|(g, &v)| {
                        let u = SQRT_2_OVER_PI * (v + GELU_C * v * v * v);
                        let t = u.tanh();
                        let du = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_C * v * v);
                        g * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du)
                    })
                    .collect(),
            ),
            Op::Softmax(x) => {
                let c = *self.shape(*x).last().unwrap();
                let y = node.value.data();
                let mut dx = vec![0.0; y.len()];
                for ((dr, yr), gr) in dx.chunks_mut(c).zip(y.chunks(c)).zip(g.chunks(c)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        dr[j] = yr[j] * (gr[j] - dot);
                    }
                }
                send(*x, dx);
            }
            Op::LogSoftmax(x) => {
                let c = *self.shape(*x).last().unwrap();
                let y = node.value.data();
                let mut dx = vec![0.0; y.len()];
                for ((dr, yr), gr) in dx.chunks_mut(c).zip(y.chunks(c)).zip(g.chunks(c)) {
                    let gs: f64 = gr.iter().sum();
                    for j in 0..c {
                        dr[j] = gr[j] - yr[j].exp() * gs;
                    }
                }
                send(*x, dx);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let h = self.shape(*gamma)[0];
                let gd = self.data(*gamma);
                if wants(*x) {
                    let mut dx = vec![0.0; g.len()];
                    for (r, &rs) in rstd.iter().enumerate() {
                        let gr = &g[r * h..(r + 1) * h];
                        let xr = &xhat[r * h..(r + 1) * h];
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for j in 0..h {
                            let d = gr[j] * gd[j];
                            s1 += d;
                            s2 += d * xr[j];
                        }
                        let hf = h as f64;
                        for j in 0..h {
                            let d = gr[j] * gd[j];
                            dx[r * h + j] = rs / hf * (hf * d - s1 - xr[j] * s2);
                        }
                    }
                    send(*x, dx);
                }
                if wants(*gamma) {
                    let mut dg = vec![0.0; h];
                    for (gr, xr) in g.chunks(h).zip(xhat.chunks(h)) {
                        for j in 0..h {
                            dg[j] += gr[j] * xr[j];
                        }
                    }
                    send(*gamma, dg);
                }
                if wants(*beta) {
                    let mut db = vec![0.0; h];
                    for gr in g.chunks(h) {
                        db.iter_mut().zip(gr).for_each(|(d, v)| *d += v);
                    }
                    send(*beta, db);
                }
            }
            Op::MaskMul(x, mask) => send(*x, g.iter().zip(mask).map(|(g, m)| g * m).collect()),
            Op::Rows { table, ids } => {
                let st = self.shape(*table);
                let h = st[1];
                let mut dt = vec![0.0; st[0] * h];
                for (r, &id) in ids.iter().enumerate() {
                    let dst = &mut dt[id * h..(id + 1) * h];
                    dst.iter_mut()
                        .zip(&g[r * h..(r + 1) * h])
                        .for_each(|(d, v)| *d += v);
                }
                send(*table, dt);
            }
            Op::Reshape(x) => send(*x, g.to_vec()),
            Op::Permute(x, axes) => {
                let mut inverse = vec![0; axes.len()];
                for (i, &a) in axes.iter().enumerate() {
                    inverse[a] = i;
                }
                send(*x, permute(g, node.value.shape(), &inverse));
            }
            Op::Concat(parts) => {
                let total = *node.value.shape().last().unwrap();
                let rows = g.len() / total;
                let mut offset = 0;
                for &p in parts {
                    let w = *self.shape(p).last().unwrap();
                    if wants(p) {
                        let mut dp = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            dp.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                        }
                        send(p, dp);
                    }
                    offset += w;
                }
            }
            Op::MaskKeys { x, keep } => {
                let s = *self.shape(*x).last().unwrap();
                let batch = self.shape(*x)[0];
                let per_batch = g.len() / batch;
                let dx = g
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| if keep[(i / per_batch) * s + i % s] { v } else { 0.0 })
                    .collect();
                send(*x, dx);
            }
            Op::Sum(x) => send(*x, vec![g[0]; self.data(*x).len()]),
            Op::Mean(x) => {
                let n = self.data(*x).len();
                send(*x, vec![g[0] / n as f64; n]);
            }
            Op::CrossEntropy {
                logits,
                targets,
                weights,
                probs,
                active,
            } => {
                let m = self.shape(*logits)[1];
                let wsum: f64 = weights.iter().sum();
                let mut dx = vec![0.0; probs.len()];
                for (i, &t) in targets.iter().enumerate() {
                    if !active[i] {
                        continue;
                    }
                    let s = g[0] * weights[i] / wsum;
                    for c in 0..m {
                        let y = if c == t { 1.0 } else { 0.0 };
                        dx[i * m + c] = s * (probs[i * m + c] - y);
                    }
                }
                send(*logits, dx);
            }
        }
    }
}

/// Probabilities are clamped here before taking the log in the loss.
pub(crate) const LOG_CLAMP: f64 = 1e-12;

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec_t(v: &[f64]) -> Tensor {
        Tensor::new(vec![v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut g = Graph::new();
        let x = g.param(vec_t(&[1.0, -2.0, 3.0]));
        let l = g.sum(x);
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn square_gradient_is_two_x() {
        let mut g = Graph::new();
        let x = g.param(vec_t(&[1.0, 2.0]));
        let sq = g.mul(x, x).unwrap();
        let l = g.sum(sq);
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn dead_relu_has_zero_gradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(-3.0));
        let r = g.relu(x);
        g.backward(r).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.0]);
    }

    #[test]
    fn fan_out_accumulates_both_paths() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(0.7));
        let y = g.add(x, x).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0]);
    }

    #[test]
    fn repeated_backward_accumulates_until_reset() {
        let mut g = Graph::new();
        let x = g.param(vec_t(&[1.0, 2.0]));
        let l = g.sum(x);
        g.backward(l).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, 2.0]);
        g.zero_grad();
        assert!(g.grad(x).is_none());
    }

    #[test]
    fn non_scalar_loss_is_a_contract_error() {
        let mut g = Graph::new();
        let x = g.param(vec_t(&[1.0, 2.0]));
        assert_eq!(g.backward(x).unwrap_err().category(), "contract");
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let w = g.constant(vec_t(&[3.0]));
        let x = g.param(vec_t(&[2.0]));
        let p = g.mul(w, x).unwrap();
        let l = g.sum(p);
        g.backward(l).unwrap();
        assert!(g.grad(w).is_none());
        assert_eq!(g.grad(x).unwrap(), &[3.0]);
    }

    #[test]
    fn softmax_examples() {
        let mut g = Graph::new();
        let x = g.constant(vec_t(&[0.0, 0.0, 0.0]));
        let s = g.softmax(x).unwrap();
        for v in g.value(s).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let x = g.constant(vec_t(&[2f64.ln(), 0.0]));
        let s = g.softmax(x).unwrap();
        assert!((g.value(s).data()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((g.value(s).data()[1] - 1.0 / 3.0).abs() < 1e-15);
        let x = g.constant(vec_t(&[1000.0, 0.0]));
        let s = g.softmax(x).unwrap();
        assert!(g.value(s).is_finite());
        assert!((g.value(s).data()[0] - 1.0).abs() < 1e-15);
        assert!(g.value(s).data()[1] < 1e-300);
    }

    #[test]
    fn softmax_rejects_rank_zero() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::scalar(1.0));
        assert_eq!(g.softmax(x).unwrap_err().category(), "dimension");
    }

    #[test]
    fn layer_norm_examples() {
        let mut g = Graph::new();
        let one3 = g.constant(Tensor::ones(&[3]));
        let zero3 = g.constant(Tensor::zeros(&[3]));
        let x = g.constant(vec_t(&[1.0, 1.0, 1.0]));
        let y = g.layer_norm(x, one3, zero3, 1e-12).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 0.0]);

        let one2 = g.constant(Tensor::ones(&[2]));
        let zero2 = g.constant(Tensor::zeros(&[2]));
        let five2 = g.constant(Tensor::full(&[2], 5.0));
        let x = g.constant(vec_t(&[0.0, 2.0]));
        let y = g.layer_norm(x, one2, zero2, 1e-12).unwrap();
        let d = g.value(y).data();
        assert!((d[0] + 1.0).abs() < 1e-9 && (d[1] - 1.0).abs() < 1e-9);
        let y = g.layer_norm(x, one2, five2, 1e-12).unwrap();
        let d = g.value(y).data();
        assert!((d[0] - 4.0).abs() < 1e-9 && (d[1] - 6.0).abs() < 1e-9);
    }

    #[test]
    fn layer_norm_rejects_bad_eps() {
        let mut g = Graph::new();
        let x = g.constant(vec_t(&[0.0, 2.0]));
        let o = g.constant(Tensor::ones(&[2]));
        let z = g.constant(Tensor::zeros(&[2]));
        assert_eq!(g.layer_norm(x, o, z, 0.0).unwrap_err().category(), "parameter");
    }

    #[test]
    fn dropout_modes() {
        let mut rng = SeedRng::new(1);
        let mut g = Graph::new();
        let x = g.param(vec_t(&[1.0, 2.0, 3.0]));
        assert_eq!(g.dropout(x, 0.0, &mut rng, true).unwrap(), x);
        assert_eq!(g.dropout(x, 0.5, &mut rng, false).unwrap(), x);
        assert_eq!(g.dropout(x, 1.0, &mut rng, true).unwrap_err().category(), "parameter");

        let ones = g.constant(Tensor::ones(&[100_000]));
        let d = g.dropout(ones, 0.5, &mut rng, true).unwrap();
        let mean = g.value(d).data().iter().sum::<f64>() / 100_000.0;
        assert!((0.97..=1.03).contains(&mean), "{mean}");
        assert!(g.value(d).data().iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn row_gather_bounds() {
        let mut g = Graph::new();
        let t = g.param(Tensor::zeros(&[3, 2]));
        assert_eq!(g.rows(t, &[3]).unwrap_err().category(), "input");
        let r = g.rows(t, &[2, 0, 2]).unwrap();
        let l = g.sum(r);
        g.backward(l).unwrap();
        assert_eq!(g.grad(t).unwrap(), &[1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
    }

    #[test]
    fn cross_entropy_hand_value() {
        let mut g = Graph::new();
        let logits = g.constant(Tensor::new(vec![1, 2], vec![0.7f64.ln(), 0.3f64.ln()]).unwrap());
        let l = g.cross_entropy(logits, &[0], &[1.0]).unwrap();
        assert!((g.value(l).data()[0] - 0.356_675).abs() < 1e-6);
    }

    #[test]
    fn masked_keys_get_zero_probability() {
        let mut g = Graph::new();
        let s = g.constant(Tensor::new(vec![1, 1, 3], vec![0.5, 9.0, 0.5]).unwrap());
        let m = g.mask_keys(s, &[true, false, true], 1).unwrap();
        let p = g.softmax(m).unwrap();
        assert_eq!(g.value(p).data(), &[0.5, 0.0, 0.5]);
    }
}
