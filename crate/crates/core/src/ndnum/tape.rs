//! Define-by-run reverse-mode differentiation.
//!
//! Every primitive appends one node to the [`Tape`]; node ids are handed out
//! in creation order, so inputs always precede outputs and a single reverse
//! sweep visits each node once.

use crate::error::{Error, Result};
use crate::ndnum::tensor::{matmul_into, Tensor};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    CausalConv {
        x: usize,
        kernel: usize,
        bias: usize,
    },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Exp(usize),
    Log(usize),
    Gelu(usize),
    NormalizeCols(usize),
    MeanOver(Vec<usize>),
    MaxOver {
        items: Vec<usize>,
        argmax: Vec<u32>,
    },
    Sum(usize),
    Mean(usize),
    ConcatRows(Vec<usize>),
    ConcatCols(Vec<usize>),
    SliceRows {
        a: usize,
        start: usize,
    },
    SliceCols {
        a: usize,
        start: usize,
    },
    Transpose(usize),
    StackTime(Vec<usize>),
    BatchGram(usize, usize),
    ConcatLast(usize, usize),
    MaskDiagonal(usize),
    Diagonal(usize),
    LogSumExpLast(usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Ordered record of primitive operations and their saved values.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let th = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn last_dim(shape: &[usize]) -> usize {
    shape.last().copied().unwrap_or(1)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[usize]) -> Var {
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf; receives a gradient on [`Tape::backward`].
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Untracked leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a tracked leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let node = &self.nodes[v.0];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape().to_vec(), g.clone()).expect("grad shape"))
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn check_same(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::dim(op, sa, sb));
        }
        Ok(())
    }

    fn check_rank(&self, op: &'static str, a: Var, rank: usize) -> Result<()> {
        let s = self.shape(a);
        if s.len() != rank {
            return Err(Error::Argument(format!(
                "{op} expects rank {rank}, got shape {s:?}"
            )));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim("matmul", sa, sb));
        }
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a.0, b.0), &[a.0, b.0]))
    }

    /// Causal 1-D convolution with left zero-padding of `ksize - 1`.
    ///
    /// `x` is `(c_in, w)`, `kernel` is `(c_out, c_in, ksize)`, `bias` is `(c_out)`.
    /// Tap `tau` of the kernel multiplies the input `tau` steps in the past.
    pub fn causal_conv1d(&mut self, x: Var, kernel: Var, bias: Var) -> Result<Var> {
        let (sx, sk, sb) = (self.shape(x), self.shape(kernel), self.shape(bias));
        if sx.len() != 2 || sk.len() != 3 || sk[1] != sx[0] || sk[2] == 0 || sx[1] == 0 {
            return Err(Error::dim("causal_conv1d", sx, sk));
        }
        if sb != [sk[0]] {
            return Err(Error::dim("causal_conv1d", sk, sb));
        }
        let (c_in, w) = (sx[0], sx[1]);
        let (c_out, ksize) = (sk[0], sk[2]);
        let xd = self.value(x).data();
        let kd = self.value(kernel).data();
        let bd = self.value(bias).data();
        let mut out = vec![0.0; c_out * w];
        for o in 0..c_out {
            let out_row = &mut out[o * w..(o + 1) * w];
            out_row.fill(bd[o]);
            for i in 0..c_in {
                let x_row = &xd[i * w..(i + 1) * w];
                for tau in 0..ksize.min(w) {
                    let k = kd[(o * c_in + i) * ksize + tau];
                    for (o_t, &x_t) in out_row[tau..].iter_mut().zip(&x_row[..w - tau]) {
                        *o_t += k * x_t;
                    }
                }
            }
        }
        let value = Tensor::new(vec![c_out, w], out)?;
        Ok(self.push(
            value,
            Op::CausalConv {
                x: x.0,
                kernel: kernel.0,
                bias: bias.0,
            },
            &[x.0, kernel.0, bias.0],
        ))
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(va.shape().to_vec(), data).expect("same shape");
        self.push(value, op, &[a.0, b.0])
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.value(a).map(f);
        self.push(value, op, &[a.0])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("add", a, b)?;
        Ok(self.binary(a, b, Op::Add(a.0, b.0), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("sub", a, b)?;
        Ok(self.binary(a, b, Op::Sub(a.0, b.0), |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("mul", a, b)?;
        Ok(self.binary(a, b, Op::Mul(a.0, b.0), |x, y| x * y))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, Op::Scale(a.0, s), |x| x * s)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a.0), f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log(a.0), f64::ln)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Gelu(a.0), gelu)
    }

    fn check_list(&self, op: &'static str, items: &[Var]) -> Result<()> {
        let first = items
            .first()
            .ok_or_else(|| Error::Argument(format!("{op} needs a non-empty list")))?;
        for &it in &items[1..] {
            self.check_same(op, *first, it)?;
        }
        Ok(())
    }

    /// Scales each column of an `(h, n)` matrix to unit Euclidean norm.
    pub fn normalize_cols(&mut self, a: Var) -> Result<Var> {
        self.check_rank("normalize_cols", a, 2)?;
        let v = self.value(a);
        let (h, n) = (v.rows(), v.cols());
        let mut out = v.clone();
        for t in 0..n {
            let norm = col_norm(v.data(), h, n, t);
            for k in 0..h {
                out.data_mut()[k * n + t] /= norm;
            }
        }
        Ok(self.push(out, Op::NormalizeCols(a.0), &[a.0]))
    }

    /// Element-wise arithmetic mean of same-shaped tensors.
    pub fn mean_over(&mut self, items: &[Var]) -> Result<Var> {
        self.check_list("mean_over", items)?;
        if items.len() == 1 {
            return Ok(items[0]);
        }
        let n = items.len() as f64;
        let mut acc = self.value(items[0]).clone();
        for &it in &items[1..] {
            for (a, &b) in acc.data_mut().iter_mut().zip(self.value(it).data()) {
                *a += b;
            }
        }
        acc.data_mut().iter_mut().for_each(|v| *v /= n);
        let ids: Vec<usize> = items.iter().map(|v| v.0).collect();
        Ok(self.push(acc, Op::MeanOver(ids.clone()), &ids))
    }

    /// Element-wise maximum; ties resolve to the lowest list index.
    pub fn max_over(&mut self, items: &[Var]) -> Result<Var> {
        self.check_list("max_over", items)?;
        if items.len() == 1 {
            return Ok(items[0]);
        }
        let mut acc = self.value(items[0]).clone();
        let mut argmax = vec![0u32; acc.numel()];
        for (idx, &it) in items.iter().enumerate().skip(1) {
            for ((a, am), &b) in acc
                .data_mut()
                .iter_mut()
                .zip(argmax.iter_mut())
                .zip(self.value(it).data())
            {
                if b > *a {
                    *a = b;
                    *am = idx as u32;
                }
            }
        }
        let ids: Vec<usize> = items.iter().map(|v| v.0).collect();
        Ok(self.push(
            acc,
            Op::MaxOver {
                items: ids.clone(),
                argmax,
            },
            &ids,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a.0), &[a.0])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s: f64 = v.data().iter().sum::<f64>() / v.numel() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a.0), &[a.0])
    }

    /// Stacks 2-D tensors along the feature (row) axis.
    pub fn concat_rows(&mut self, items: &[Var]) -> Result<Var> {
        let first = *items
            .first()
            .ok_or_else(|| Error::arg("concat_rows needs a non-empty list"))?;
        self.check_rank("concat_rows", first, 2)?;
        let cols = self.shape(first)[1];
        let mut data = Vec::new();
        let mut rows = 0;
        for &it in items {
            let s = self.shape(it);
            if s.len() != 2 || s[1] != cols {
                return Err(Error::dim("concat_rows", self.shape(first), s));
            }
            rows += s[0];
            data.extend_from_slice(self.value(it).data());
        }
        let ids: Vec<usize> = items.iter().map(|v| v.0).collect();
        let value = Tensor::new(vec![rows, cols], data)?;
        Ok(self.push(value, Op::ConcatRows(ids.clone()), &ids))
    }

    /// Joins 2-D tensors along the time (column) axis.
    pub fn concat_cols(&mut self, items: &[Var]) -> Result<Var> {
        let first = *items
            .first()
            .ok_or_else(|| Error::arg("concat_cols needs a non-empty list"))?;
        self.check_rank("concat_cols", first, 2)?;
        let rows = self.shape(first)[0];
        let mut total = 0;
        for &it in items {
            let s = self.shape(it);
            if s.len() != 2 || s[0] != rows {
                return Err(Error::dim("concat_cols", self.shape(first), s));
            }
            total += s[1];
        }
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &it in items {
                data.extend_from_slice(self.value(it).row(r));
            }
        }
        let ids: Vec<usize> = items.iter().map(|v| v.0).collect();
        let value = Tensor::new(vec![rows, total], data)?;
        Ok(self.push(value, Op::ConcatCols(ids.clone()), &ids))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        self.check_rank("slice_rows", a, 2)?;
        if start >= end || end > self.shape(a)[0] {
            return Err(Error::Argument(format!(
                "row range {start}..{end} out of bounds for {:?}",
                self.shape(a)
            )));
        }
        let value = self.value(a).row_range(start, end);
        Ok(self.push(value, Op::SliceRows { a: a.0, start }, &[a.0]))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        self.check_rank("slice_cols", a, 2)?;
        if start >= end || end > self.shape(a)[1] {
            return Err(Error::Argument(format!(
                "column range {start}..{end} out of bounds for {:?}",
                self.shape(a)
            )));
        }
        let value = self.value(a).col_range(start, end);
        Ok(self.push(value, Op::SliceCols { a: a.0, start }, &[a.0]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.check_rank("transpose", a, 2)?;
        let value = self.value(a).transpose();
        Ok(self.push(value, Op::Transpose(a.0), &[a.0]))
    }

    /// Rearranges `B` tensors of shape `(h, n)` into one `(n, B, h)` tensor so
    /// that `out[t, b, :]` is the feature vector of item `b` at time `t`.
    pub fn stack_time(&mut self, items: &[Var]) -> Result<Var> {
        let first = *items
            .first()
            .ok_or_else(|| Error::arg("stack_time needs a non-empty list"))?;
        self.check_rank("stack_time", first, 2)?;
        self.check_list("stack_time", items)?;
        let (h, n) = (self.shape(first)[0], self.shape(first)[1]);
        let b = items.len();
        let mut out = vec![0.0; n * b * h];
        for (bi, &it) in items.iter().enumerate() {
            let d = self.value(it).data();
            for k in 0..h {
                for t in 0..n {
                    out[(t * b + bi) * h + k] = d[k * n + t];
                }
            }
        }
        let ids: Vec<usize> = items.iter().map(|v| v.0).collect();
        let value = Tensor::new(vec![n, b, h], out)?;
        Ok(self.push(value, Op::StackTime(ids.clone()), &ids))
    }

    /// Feature-axis dot products per time step:
    /// `a (n, B, h)`, `b (n, C, h)` → `out (n, B, C)` with `out[t,i,j] = a[t,i]·b[t,j]`.
    pub fn batch_gram(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[2] {
            return Err(Error::dim("batch_gram", sa, sb));
        }
        let (n, bn, h, cn) = (sa[0], sa[1], sa[2], sb[1]);
        let ad = self.value(a).data();
        let bd = self.value(b).data();
        let mut out = vec![0.0; n * bn * cn];
        for t in 0..n {
            for i in 0..bn {
                let ai = &ad[(t * bn + i) * h..(t * bn + i + 1) * h];
                for j in 0..cn {
                    let bj = &bd[(t * cn + j) * h..(t * cn + j + 1) * h];
                    out[(t * bn + i) * cn + j] = ai.iter().zip(bj).map(|(x, y)| x * y).sum();
                }
            }
        }
        let value = Tensor::new(vec![n, bn, cn], out)?;
        Ok(self.push(value, Op::BatchGram(a.0, b.0), &[a.0, b.0]))
    }

    /// Concatenation along the last axis; leading axes must agree.
    pub fn concat_last(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.is_empty() || sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(Error::dim("concat_last", &sa, &sb));
        }
        let (la, lb) = (last_dim(&sa), last_dim(&sb));
        let outer = self.value(a).numel() / la;
        let ad = self.value(a).data();
        let bd = self.value(b).data();
        let mut out = Vec::with_capacity(outer * (la + lb));
        for r in 0..outer {
            out.extend_from_slice(&ad[r * la..(r + 1) * la]);
            out.extend_from_slice(&bd[r * lb..(r + 1) * lb]);
        }
        let mut shape = sa.clone();
        *shape.last_mut().unwrap() = la + lb;
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::ConcatLast(a.0, b.0), &[a.0, b.0]))
    }

    /// Replaces `a[t, i, i]` by `-inf` in an `(n, B, B)` tensor.
    pub fn mask_diagonal(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 3 || s[1] != s[2] {
            return Err(Error::Argument(format!(
                "mask_diagonal expects (n, B, B), got {s:?}"
            )));
        }
        let (n, b) = (s[0], s[1]);
        let mut value = self.value(a).clone();
        for t in 0..n {
            for i in 0..b {
                value.data_mut()[(t * b + i) * b + i] = f64::NEG_INFINITY;
            }
        }
        Ok(self.push(value, Op::MaskDiagonal(a.0), &[a.0]))
    }

    /// `(n, B, B)` → `(n, B)` diagonal.
    pub fn diagonal(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 3 || s[1] != s[2] {
            return Err(Error::Argument(format!(
                "diagonal expects (n, B, B), got {s:?}"
            )));
        }
        let (n, b) = (s[0], s[1]);
        let d = self.value(a).data();
        let out = (0..n)
            .flat_map(|t| (0..b).map(move |i| (t, i)))
            .map(|(t, i)| d[(t * b + i) * b + i])
            .collect();
        let value = Tensor::new(vec![n, b], out)?;
        Ok(self.push(value, Op::Diagonal(a.0), &[a.0]))
    }

    /// Log-sum-exp over the last axis, stabilized by the per-row maximum.
    pub fn logsumexp_last(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.is_empty() {
            return Err(Error::arg("logsumexp_last needs rank >= 1"));
        }
        let l = last_dim(&s);
        let d = self.value(a).data();
        let out: Vec<f64> = d
            .chunks(l)
            .map(|row| {
                let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if m == f64::NEG_INFINITY {
                    return m;
                }
                m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln()
            })
            .collect();
        let value = Tensor::new(s[..s.len() - 1].to_vec(), out)?;
        Ok(self.push(value, Op::LogSumExpLast(a.0), &[a.0]))
    }

    /// Accumulates `∂loss/∂leaf` into every tracked leaf reachable from `loss`.
    ///
    /// Intermediate gradients are local to each call, so repeated calls add
    /// whole gradients to the leaves.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Argument(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else {
                continue;
            };
            if !self.nodes[id].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[id].op {
                let node = &mut self.nodes[id];
                match &mut node.grad {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => node.grad = Some(g),
                }
                continue;
            }
            self.propagate(id, &g, &mut grads);
        }
        Ok(())
    }

    fn wants(&self, id: usize) -> bool {
        self.nodes[id].requires_grad
    }

    fn propagate(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        macro_rules! acc {
            ($i:expr) => {
                slot(grads, nodes, $i)
            };
        }
        let out = &nodes[id].value;
        match &nodes[id].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
                let (m, k, n) = (va.rows(), va.cols(), vb.cols());
                if self.wants(*a) {
                    // dA = G · Bᵀ
                    let bt = vb.transpose();
                    matmul_into(g, bt.data(), acc!(*a), m, n, k);
                }
                if self.wants(*b) {
                    // dB = Aᵀ · G
                    let at = va.transpose();
                    matmul_into(at.data(), g, acc!(*b), k, m, n);
                }
            }
            Op::CausalConv { x, kernel, bias } => {
                let vx = &nodes[*x].value;
                let vk = &nodes[*kernel].value;
                let (c_in, w) = (vx.rows(), vx.cols());
                let (c_out, ksize) = (vk.shape()[0], vk.shape()[2]);
                let xd = vx.data();
                let kd = vk.data();
                if self.wants(*bias) {
                    let gb = acc!(*bias);
                    for o in 0..c_out {
                        gb[o] += g[o * w..(o + 1) * w].iter().sum::<f64>();
                    }
                }
                if self.wants(*kernel) {
                    let gk = acc!(*kernel);
                    for o in 0..c_out {
                        let g_row = &g[o * w..(o + 1) * w];
                        for i in 0..c_in {
                            let x_row = &xd[i * w..(i + 1) * w];
                            for tau in 0..ksize.min(w) {
                                let s: f64 = g_row[tau..]
                                    .iter()
                                    .zip(&x_row[..w - tau])
                                    .map(|(a, b)| a * b)
                                    .sum();
                                gk[(o * c_in + i) * ksize + tau] += s;
                            }
                        }
                    }
                }
                if self.wants(*x) {
                    let gx = acc!(*x);
                    for i in 0..c_in {
                        let gx_row = &mut gx[i * w..(i + 1) * w];
                        for o in 0..c_out {
                            let g_row = &g[o * w..(o + 1) * w];
                            for tau in 0..ksize.min(w) {
                                let k = kd[(o * c_in + i) * ksize + tau];
                                for (d, &gv) in gx_row[..w - tau].iter_mut().zip(&g_row[tau..]) {
                                    *d += k * gv;
                                }
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                if self.wants(*a) {
                    add_into(acc!(*a), g);
                }
                if self.wants(*b) {
                    add_into(acc!(*b), g);
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    add_into(acc!(*a), g);
                }
                if self.wants(*b) {
                    acc!(*b).iter_mut().zip(g).for_each(|(d, gv)| *d -= gv);
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (nodes[*a].value.data(), nodes[*b].value.data());
                if self.wants(*a) {
                    let d = acc!(*a);
                    for ((d, gv), y) in d.iter_mut().zip(g).zip(vb) {
                        *d += gv * y;
                    }
                }
                if self.wants(*b) {
                    let d = acc!(*b);
                    for ((d, gv), x) in d.iter_mut().zip(g).zip(va) {
                        *d += gv * x;
                    }
                }
            }
            Op::Scale(a, s) => {
                if self.wants(*a) {
                    acc!(*a).iter_mut().zip(g).for_each(|(d, gv)| *d += s * gv);
                }
            }
            Op::Exp(a) => {
                if self.wants(*a) {
                    let d = acc!(*a);
                    for ((d, gv), y) in d.iter_mut().zip(g).zip(out.data()) {
                        *d += gv * y;
                    }
                }
            }
            Op::Log(a) => {
                if self.wants(*a) {
                    let d = acc!(*a);
                    for ((d, gv), x) in d.iter_mut().zip(g).zip(nodes[*a].value.data()) {
                        *d += gv / x;
                    }
                }
            }
            Op::Gelu(a) => {
                if self.wants(*a) {
                    let d = acc!(*a);
                    for ((d, gv), &x) in d.iter_mut().zip(g).zip(nodes[*a].value.data()) {
                        *d += gv * gelu_grad(x);
                    }
                }
            }
            Op::NormalizeCols(a) => {
                if self.wants(*a) {
                    let x = nodes[*a].value.data();
                    let (h, n) = (out.rows(), out.cols());
                    let y = out.data();
                    let d = acc!(*a);
                    for t in 0..n {
                        let norm = col_norm(x, h, n, t);
                        let dot: f64 = (0..h).map(|k| y[k * n + t] * g[k * n + t]).sum();
                        for k in 0..h {
                            d[k * n + t] += (g[k * n + t] - y[k * n + t] * dot) / norm;
                        }
                    }
                }
            }
            Op::MeanOver(items) => {
                let n = items.len() as f64;
                for &it in items {
                    if self.wants(it) {
                        acc!(it).iter_mut().zip(g).for_each(|(d, gv)| *d += gv / n);
                    }
                }
            }
            Op::MaxOver { items, argmax } => {
                for (idx, &it) in items.iter().enumerate() {
                    if !self.wants(it) {
                        continue;
                    }
                    let d = acc!(it);
                    for ((d, gv), &am) in d.iter_mut().zip(g).zip(argmax) {
                        if am as usize == idx {
                            *d += gv;
                        }
                    }
                }
            }
            Op::Sum(a) => {
                if self.wants(*a) {
                    acc!(*a).iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Mean(a) => {
                if self.wants(*a) {
                    let n = nodes[*a].value.numel() as f64;
                    acc!(*a).iter_mut().for_each(|d| *d += g[0] / n);
                }
            }
            Op::ConcatRows(items) => {
                let mut offset = 0;
                for &it in items {
                    let len = nodes[it].value.numel();
                    if self.wants(it) {
                        add_into(acc!(it), &g[offset..offset + len]);
                    }
                    offset += len;
                }
            }
            Op::ConcatCols(items) => {
                let total = out.cols();
                let mut col = 0;
                for &it in items {
                    let (rows, cols) = (nodes[it].value.rows(), nodes[it].value.cols());
                    if self.wants(it) {
                        let d = acc!(it);
                        for r in 0..rows {
                            add_into(
                                &mut d[r * cols..(r + 1) * cols],
                                &g[r * total + col..r * total + col + cols],
                            );
                        }
                    }
                    col += cols;
                }
            }
            Op::SliceRows { a, start } => {
                if self.wants(*a) {
                    let cols = out.cols();
                    let d = acc!(*a);
                    add_into(&mut d[start * cols..start * cols + g.len()], g);
                }
            }
            Op::SliceCols { a, start } => {
                if self.wants(*a) {
                    let full = nodes[*a].value.cols();
                    let (rows, width) = (out.rows(), out.cols());
                    let d = acc!(*a);
                    for r in 0..rows {
                        add_into(
                            &mut d[r * full + start..r * full + start + width],
                            &g[r * width..(r + 1) * width],
                        );
                    }
                }
            }
            Op::Transpose(a) => {
                if self.wants(*a) {
                    let (r, c) = (out.rows(), out.cols());
                    let d = acc!(*a);
                    for i in 0..r {
                        for j in 0..c {
                            d[j * r + i] += g[i * c + j];
                        }
                    }
                }
            }
            Op::StackTime(items) => {
                let (n, b, h) = (out.shape()[0], out.shape()[1], out.shape()[2]);
                for (bi, &it) in items.iter().enumerate() {
                    if !self.wants(it) {
                        continue;
                    }
                    let d = acc!(it);
                    for k in 0..h {
                        for t in 0..n {
                            d[k * n + t] += g[(t * b + bi) * h + k];
                        }
                    }
                }
            }
            Op::BatchGram(a, b) => {
                let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
                let (n, bn, h) = (va.shape()[0], va.shape()[1], va.shape()[2]);
                let cn = vb.shape()[1];
                let (ad, bd) = (va.data(), vb.data());
                if self.wants(*a) {
                    let d = acc!(*a);
                    for t in 0..n {
                        for i in 0..bn {
                            let di = &mut d[(t * bn + i) * h..(t * bn + i + 1) * h];
                            for j in 0..cn {
                                let gv = g[(t * bn + i) * cn + j];
                                let bj = &bd[(t * cn + j) * h..(t * cn + j + 1) * h];
                                di.iter_mut().zip(bj).for_each(|(x, y)| *x += gv * y);
                            }
                        }
                    }
                }
                if self.wants(*b) {
                    let d = acc!(*b);
                    for t in 0..n {
                        for j in 0..cn {
                            let dj = &mut d[(t * cn + j) * h..(t * cn + j + 1) * h];
                            for i in 0..bn {
                                let gv = g[(t * bn + i) * cn + j];
                                let ai = &ad[(t * bn + i) * h..(t * bn + i + 1) * h];
                                dj.iter_mut().zip(ai).for_each(|(x, y)| *x += gv * y);
                            }
                        }
                    }
                }
            }
            Op::ConcatLast(a, b) => {
                let la = last_dim(nodes[*a].value.shape());
                let lb = last_dim(nodes[*b].value.shape());
                let outer = nodes[*a].value.numel() / la;
                if self.wants(*a) {
                    let d = acc!(*a);
                    for r in 0..outer {
                        add_into(&mut d[r * la..(r + 1) * la], &g[r * (la + lb)..r * (la + lb) + la]);
                    }
                }
                if self.wants(*b) {
                    let d = acc!(*b);
                    for r in 0..outer {
                        add_into(
                            &mut d[r * lb..(r + 1) * lb],
                            &g[r * (la + lb) + la..(r + 1) * (la + lb)],
                        );
                    }
                }
            }
            Op::MaskDiagonal(a) => {
                if self.wants(*a) {
                    let b = out.shape()[1];
                    let d = acc!(*a);
                    for (idx, (d, gv)) in d.iter_mut().zip(g).enumerate() {
                        let (i, j) = ((idx / b) % b, idx % b);
                        if i != j {
                            *d += gv;
                        }
                    }
                }
            }
            Op::Diagonal(a) => {
                if self.wants(*a) {
                    let (n, b) = (out.shape()[0], out.shape()[1]);
                    let d = acc!(*a);
                    for t in 0..n {
                        for i in 0..b {
                            d[(t * b + i) * b + i] += g[t * b + i];
                        }
                    }
                }
            }
            Op::LogSumExpLast(a) => {
                if self.wants(*a) {
                    let va = &nodes[*a].value;
                    let l = last_dim(va.shape());
                    let d = acc!(*a);
                    for (r, row) in va.data().chunks(l).enumerate() {
                        let lse = out.data()[r];
                        if lse == f64::NEG_INFINITY {
                            continue;
                        }
                        for (k, &v) in row.iter().enumerate() {
                            d[r * l + k] += g[r] * (v - lse).exp();
                        }
                    }
                }
            }
        }
    }
}

fn col_norm(data: &[f64], h: usize, n: usize, t: usize) -> f64 {
    (0..h).map(|k| data[k * n + t].powi(2)).sum::<f64>().sqrt().max(1e-12)
}

fn slot<'g>(grads: &'g mut [Option<Vec<f64>>], nodes: &[Node], i: usize) -> &'g mut Vec<f64> {
    let len = nodes[i].value.numel();
    grads[i].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}
