use std::borrow::Cow;

use crate::tensor::numel;
use crate::{Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Resolved sizes of one batched 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }
}

enum Op {
    Leaf,
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    AddRow { x: Var, row: Var, width: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Exp(Var),
    Log(Var),
    Tanh(Var),
    Sigmoid(Var),
    Square(Var),
    LeakyRelu(Var, f64),
    Clamp(Var, f64, f64),
    Concat { parts: Vec<(Var, usize)>, rows: usize },
    Slice { x: Var, rows: usize, width: usize, start: usize, len: usize },
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    SumLast { x: Var, width: usize },
    Softmax { x: Var, width: usize },
    LogSoftmax { x: Var, width: usize },
    Conv2d { x: Var, w: Var, b: Var, geom: ConvGeometry, cols: Vec<f64> },
    MaxPool2d { x: Var, argmax: Vec<usize> },
    GatherRows { src: Var, index: Vec<Option<usize>>, width: usize },
    SwapLast2 { x: Var, outer: usize, rows: usize, cols: usize },
}

struct Node<'p> {
    shape: Vec<usize>,
    value: Cow<'p, [f64]>,
    op: Op,
    requires_grad: bool,
}

/// A define-by-run tape. Nodes are appended in evaluation order, so the
/// tape is always a topological order of the computation.
///
/// Leaves may borrow their values (parameters) for the lifetime `'p`, which
/// lets several graphs read one frozen parameter store concurrently.
#[derive(Default)]
pub struct Graph<'p> {
    nodes: Vec<Node<'p>>,
}

/// Gradients of a scalar with respect to every node that required them.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

impl<'p> Graph<'p> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node {
            shape,
            value: Cow::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf that borrows `t`'s values.
    pub fn leaf(&mut self, t: &'p Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            shape: t.shape().to_vec(),
            value: Cow::Borrowed(t.data()),
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records an owned leaf.
    pub fn input(&mut self, t: Tensor, requires_grad: bool) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.input(t, false)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.shape(v), self.value(v).to_vec()).expect("graph node shape is consistent")
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    // ----- linear algebra -------------------------------------------------

    /// `[m,k] × [k,n] → [m,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::dim("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a), (k, 1), self.value(b), (n, 1), 0.0, &mut out, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(vec![m, n], out, Op::MatMul { a, b, m, k, n }, rg))
    }

    /// Adds a `[n]` row to every row of `x` (leading dimensions are batch).
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (sx, sr) = (self.shape(x), self.shape(row));
        let width = *sx.last().unwrap();
        if sr.len() != 1 || sr[0] != width {
            return Err(TensorError::dim("add_row", sx, sr));
        }
        let r = self.value(row);
        let out: Vec<f64> = self
            .value(x)
            .chunks_exact(width)
            .flat_map(|chunk| chunk.iter().zip(r).map(|(a, b)| a + b))
            .collect();
        let shape = sx.to_vec();
        let rg = self.rg(x) || self.rg(row);
        Ok(self.push(shape, out, Op::AddRow { x, row, width }, rg))
    }

    // ----- elementwise ----------------------------------------------------

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::dim(name, self.shape(a), self.shape(b)));
        }
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| f(x, y)).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(shape, out, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.value(x).iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push(shape, out, op, rg)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| c * v, Op::Scale(x, c))
    }

    pub fn offset(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v + c, Op::Offset(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, f64::ln, Op::Log(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    pub fn leaky_relu(&mut self, x: Var, alpha: f64) -> Var {
        self.unary(x, |v| if v > 0.0 { v } else { alpha * v }, Op::LeakyRelu(x, alpha))
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where the bound is active.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, |v| v.clamp(lo, hi), Op::Clamp(x, lo, hi))
    }

    // ----- structure ------------------------------------------------------

    /// Concatenates along the last axis; all leading dimensions must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| TensorError::Contract("concat of nothing".into()))?;
        let lead = self.shape(first)[..self.shape(first).len() - 1].to_vec();
        let rows = numel(&lead);
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != lead.len() + 1 || s[..lead.len()] != lead[..] {
                return Err(TensorError::dim("concat", self.shape(first), s));
            }
            widths.push(*s.last().unwrap());
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p)[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let rg = parts.iter().any(|&p| self.rg(p));
        let op = Op::Concat {
            parts: parts.iter().copied().zip(widths).collect(),
            rows,
        };
        Ok(self.push(shape, out, op, rg))
    }

    /// Takes `len` entries starting at `start` along the last axis.
    pub fn slice_last(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x);
        let width = *s.last().unwrap();
        if len == 0 || start + len > width {
            return Err(TensorError::dim("slice_last", s, &[start, len]));
        }
        let rows = self.value(x).len() / width;
        let out: Vec<f64> = self
            .value(x)
            .chunks_exact(width)
            .flat_map(|c| c[start..start + len].iter().copied())
            .collect();
        let mut shape = s.to_vec();
        *shape.last_mut().unwrap() = len;
        let rg = self.rg(x);
        Ok(self.push(shape, out, Op::Slice { x, rows, width, start, len }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != self.value(x).len() || shape.contains(&0) {
            return Err(TensorError::dim("reshape", self.shape(x), shape));
        }
        let out = self.value(x).to_vec();
        let rg = self.rg(x);
        Ok(self.push(shape.to_vec(), out, Op::Reshape(x), rg))
    }

    /// `[.., r, c] → [.., c, r]`.
    pub fn swap_last2(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 {
            return Err(TensorError::dim("swap_last2", &s, &[]));
        }
        let (rows, cols) = (s[s.len() - 2], s[s.len() - 1]);
        let outer = numel(&s[..s.len() - 2]);
        let src = self.value(x);
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            let base = o * rows * cols;
            for r in 0..rows {
                for c in 0..cols {
                    out[base + c * rows + r] = src[base + r * cols + c];
                }
            }
        }
        let mut shape = s;
        let n = shape.len();
        shape.swap(n - 1, n - 2);
        let rg = self.rg(x);
        Ok(self.push(shape, out, Op::SwapLast2 { x, outer, rows, cols }, rg))
    }

    /// Row `i` of the output is row `index[i]` of `src` (`[N, D]`), or zeros.
    pub fn gather_rows(&mut self, src: Var, index: Vec<Option<usize>>) -> Result<Var> {
        let s = self.shape(src);
        if s.len() != 2 {
            return Err(TensorError::dim("gather_rows", s, &[]));
        }
        let (n, width) = (s[0], s[1]);
        if index.is_empty() {
            return Err(TensorError::Contract("gather_rows with empty index".into()));
        }
        if let Some(bad) = index.iter().flatten().find(|&&i| i >= n) {
            return Err(TensorError::Contract(format!("gather index {bad} out of range for {n} rows")));
        }
        let v = self.value(src);
        let mut out = vec![0.0; index.len() * width];
        for (i, idx) in index.iter().enumerate() {
            if let Some(j) = idx {
                out[i * width..(i + 1) * width].copy_from_slice(&v[j * width..(j + 1) * width]);
            }
        }
        let shape = vec![index.len(), width];
        let rg = self.rg(src);
        Ok(self.push(shape, out, Op::GatherRows { src, index, width }, rg))
    }

    // ----- reductions -----------------------------------------------------

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        let rg = self.rg(x);
        self.push(vec![1], vec![s], Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let rg = self.rg(x);
        self.push(vec![1], vec![m], Op::Mean(x), rg)
    }

    /// Sums over the last axis, dropping it (a 1-D input gives `[1]`).
    pub fn sum_last(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        let width = *s.last().unwrap();
        let mut shape = s[..s.len() - 1].to_vec();
        if shape.is_empty() {
            shape.push(1);
        }
        let out = self.value(x).chunks_exact(width).map(|c| c.iter().sum()).collect();
        let rg = self.rg(x);
        self.push(shape, out, Op::SumLast { x, width }, rg)
    }

    /// Softmax over the last axis, stabilized by max-subtraction.
    pub fn softmax(&mut self, x: Var) -> Var {
        let width = *self.shape(x).last().unwrap();
        let mut out = self.value(x).to_vec();
        out.chunks_exact_mut(width).for_each(softmax_in_place);
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push(shape, out, Op::Softmax { x, width }, rg)
    }

    pub fn log_softmax(&mut self, x: Var) -> Var {
        let width = *self.shape(x).last().unwrap();
        let mut out = self.value(x).to_vec();
        for row in out.chunks_exact_mut(width) {
            let lse = log_sum_exp(row);
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push(shape, out, Op::LogSoftmax { x, width }, rg)
    }

    // ----- convolution / pooling -----------------------------------------

    /// Cross-correlation of `x` (`[B,C,H,W]` or `[C,H,W]`) with `w`
    /// (`[C',C,kh,kw]`) plus `b` (`[C']`), zero padding `pad` per axis.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, pad: (usize, usize)) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        let (batch, c, h, wd, batched) = match sx[..] {
            [bn, c, h, w] => (bn, c, h, w, true),
            [c, h, w] => (1, c, h, w, false),
            _ => return Err(TensorError::dim("conv2d", &sx, &sw)),
        };
        if sw.len() != 4 || sw[1] != c {
            return Err(TensorError::dim("conv2d", &sx, &sw));
        }
        if self.shape(b) != [sw[0]] {
            return Err(TensorError::dim("conv2d bias", &sw, self.shape(b)));
        }
        let (kh, kw) = (sw[2], sw[3]);
        if kh > h + 2 * pad.0 || kw > wd + 2 * pad.1 {
            return Err(TensorError::dim("conv2d kernel exceeds padded input", &sx, &sw));
        }
        let geom = ConvGeometry {
            batch,
            in_channels: c,
            in_h: h,
            in_w: wd,
            out_channels: sw[0],
            kernel_h: kh,
            kernel_w: kw,
            pad_h: pad.0,
            pad_w: pad.1,
            out_h: h + 2 * pad.0 - kh + 1,
            out_w: wd + 2 * pad.1 - kw + 1,
        };
        let cols = im2col(self.value(x), &geom);
        let (rows, patch, co) = (batch * geom.positions(), geom.patch_len(), geom.out_channels);
        // [rows, patch] × [patch, co], the weight read transposed in place.
        let mut mat = vec![0.0; rows * co];
        gemm(rows, patch, co, &cols, (patch, 1), self.value(w), (1, patch), 0.0, &mut mat, co);
        let bias = self.value(b);
        let p = geom.positions();
        let mut out = vec![0.0; batch * co * p];
        for bi in 0..batch {
            for pos in 0..p {
                let src = &mat[(bi * p + pos) * co..(bi * p + pos + 1) * co];
                for (ch, v) in src.iter().enumerate() {
                    out[(bi * co + ch) * p + pos] = v + bias[ch];
                }
            }
        }
        let shape = if batched {
            vec![batch, co, geom.out_h, geom.out_w]
        } else {
            vec![co, geom.out_h, geom.out_w]
        };
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(shape, out, Op::Conv2d { x, w, b, geom, cols }, rg))
    }

    /// Non-overlapping max pooling over the last two axes. Partial windows
    /// at the far edges are dropped; ties go to the first element in
    /// row-major order.
    pub fn max_pool2d(&mut self, x: Var, pool_h: usize, pool_w: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 || pool_h == 0 || pool_w == 0 {
            return Err(TensorError::dim("max_pool2d", &s, &[pool_h, pool_w]));
        }
        let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
        if pool_h > h || pool_w > w {
            return Err(TensorError::dim("max_pool2d", &s, &[pool_h, pool_w]));
        }
        let (oh, ow) = (h / pool_h, w / pool_w);
        let planes = numel(&s[..s.len() - 2]);
        let v = self.value(x);
        let mut out = Vec::with_capacity(planes * oh * ow);
        let mut argmax = Vec::with_capacity(planes * oh * ow);
        for p in 0..planes {
            let base = p * h * w;
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = base + i * pool_h * w + j * pool_w;
                    for di in 0..pool_h {
                        for dj in 0..pool_w {
                            let idx = base + (i * pool_h + di) * w + j * pool_w + dj;
                            if v[idx] > v[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(v[best]);
                    argmax.push(best);
                }
            }
        }
        let mut shape = s;
        let n = shape.len();
        shape[n - 2] = oh;
        shape[n - 1] = ow;
        let rg = self.rg(x);
        Ok(self.push(shape, out, Op::MaxPool2d { x, argmax }, rg))
    }

    // ----- reverse pass ---------------------------------------------------

    /// Back-propagates from a single-element `loss`. Contributions from
    /// multiple uses of a node are summed.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let (before, after) = grads.split_at_mut(i);
            let Some(gout) = after[0].as_deref() else {
                continue;
            };
            self.backprop_node(node, gout, before);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node<'p>, gout: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| -> &[f64] { &self.nodes[v.0].value };
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if self.nodes[v.0].requires_grad {
                let len = self.nodes[v.0].value.len();
                let buf = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
                f(buf);
            }
        };
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul { a, b, m, k, n } => {
                acc(a, &mut |ga| gemm(m, n, k, gout, (n, 1), val(b), (1, n), 1.0, ga, k));
                acc(b, &mut |gb| gemm(k, m, n, val(a), (1, k), gout, (n, 1), 1.0, gb, n));
            }
            &Op::AddRow { x, row, width } => {
                acc(x, &mut |g| add_into(g, gout));
                acc(row, &mut |g| {
                    for chunk in gout.chunks_exact(width) {
                        add_into(g, chunk);
                    }
                });
            }
            &Op::Add(a, b) => {
                acc(a, &mut |g| add_into(g, gout));
                acc(b, &mut |g| add_into(g, gout));
            }
            &Op::Sub(a, b) => {
                acc(a, &mut |g| add_into(g, gout));
                acc(b, &mut |g| g.iter_mut().zip(gout).for_each(|(d, s)| *d -= s));
            }
            &Op::Mul(a, b) => {
                acc(a, &mut |g| zip3(g, gout, val(b), |go, y| go * y));
                acc(b, &mut |g| zip3(g, gout, val(a), |go, x| go * x));
            }
            &Op::Div(a, b) => {
                acc(a, &mut |g| zip3(g, gout, val(b), |go, y| go / y));
                let out = &node.value;
                acc(b, &mut |g| {
                    for (((d, go), o), y) in g.iter_mut().zip(gout).zip(out.iter()).zip(val(b)) {
                        *d -= go * o / y;
                    }
                });
            }
            &Op::Scale(x, c) => acc(x, &mut |g| g.iter_mut().zip(gout).for_each(|(d, s)| *d += c * s)),
            &Op::Offset(x) => acc(x, &mut |g| add_into(g, gout)),
            &Op::Exp(x) => acc(x, &mut |g| zip3(g, gout, &node.value, |go, y| go * y)),
            &Op::Log(x) => acc(x, &mut |g| zip3(g, gout, val(x), |go, v| go / v)),
            &Op::Tanh(x) => acc(x, &mut |g| zip3(g, gout, &node.value, |go, y| go * (1.0 - y * y))),
            &Op::Sigmoid(x) => acc(x, &mut |g| zip3(g, gout, &node.value, |go, y| go * y * (1.0 - y))),
            &Op::Square(x) => acc(x, &mut |g| zip3(g, gout, val(x), |go, v| 2.0 * go * v)),
            &Op::LeakyRelu(x, alpha) => acc(x, &mut |g| {
                zip3(g, gout, val(x), |go, v| if v > 0.0 { go } else { alpha * go })
            }),
            &Op::Clamp(x, lo, hi) => acc(x, &mut |g| {
                zip3(g, gout, val(x), |go, v| if v > lo && v < hi { go } else { 0.0 })
            }),
            Op::Concat { parts, rows } => {
                let total: usize = parts.iter().map(|p| p.1).sum();
                let mut offset = 0;
                for &(p, w) in parts {
                    acc(p, &mut |g| {
                        for r in 0..*rows {
                            let src = &gout[r * total + offset..r * total + offset + w];
                            add_into(&mut g[r * w..(r + 1) * w], src);
                        }
                    });
                    offset += w;
                }
            }
            &Op::Slice { x, rows, width, start, len } => acc(x, &mut |g| {
                for r in 0..rows {
                    add_into(&mut g[r * width + start..r * width + start + len], &gout[r * len..(r + 1) * len]);
                }
            }),
            &Op::Reshape(x) => acc(x, &mut |g| add_into(g, gout)),
            &Op::Sum(x) => acc(x, &mut |g| g.iter_mut().for_each(|d| *d += gout[0])),
            &Op::Mean(x) => {
                let n = val(x).len() as f64;
                acc(x, &mut |g| g.iter_mut().for_each(|d| *d += gout[0] / n));
            }
            &Op::SumLast { x, width } => acc(x, &mut |g| {
                for (chunk, go) in g.chunks_exact_mut(width).zip(gout) {
                    chunk.iter_mut().for_each(|d| *d += go);
                }
            }),
            &Op::Softmax { x, width } => acc(x, &mut |g| {
                for ((gc, goc), yc) in g
                    .chunks_exact_mut(width)
                    .zip(gout.chunks_exact(width))
                    .zip(node.value.chunks_exact(width))
                {
                    let dot: f64 = goc.iter().zip(yc).map(|(a, b)| a * b).sum();
                    for ((d, go), y) in gc.iter_mut().zip(goc).zip(yc) {
                        *d += y * (go - dot);
                    }
                }
            }),
            &Op::LogSoftmax { x, width } => acc(x, &mut |g| {
                for ((gc, goc), yc) in g
                    .chunks_exact_mut(width)
                    .zip(gout.chunks_exact(width))
                    .zip(node.value.chunks_exact(width))
                {
                    let total: f64 = goc.iter().sum();
                    for ((d, go), y) in gc.iter_mut().zip(goc).zip(yc) {
                        *d += go - y.exp() * total;
                    }
                }
            }),
            Op::Conv2d { x, w, b, geom, cols } => {
                let (p, co, patch) = (geom.positions(), geom.out_channels, geom.patch_len());
                let rows = geom.batch * p;
                // Gradient laid out like the forward product: [rows, co].
                let mut gmat = vec![0.0; rows * co];
                for bi in 0..geom.batch {
                    for ch in 0..co {
                        for pos in 0..p {
                            gmat[(bi * p + pos) * co + ch] = gout[(bi * co + ch) * p + pos];
                        }
                    }
                }
                acc(*b, &mut |g| {
                    for row in gmat.chunks_exact(co) {
                        add_into(g, row);
                    }
                });
                // dW[co, patch] += gmatᵀ · cols
                acc(*w, &mut |g| gemm(co, rows, patch, &gmat, (1, co), cols, (patch, 1), 1.0, g, patch));
                acc(*x, &mut |g| {
                    let mut dcols = vec![0.0; rows * patch];
                    gemm(rows, co, patch, &gmat, (co, 1), val(*w), (patch, 1), 0.0, &mut dcols, patch);
                    col2im_add(&dcols, geom, g);
                });
            }
            Op::MaxPool2d { x, argmax } => acc(*x, &mut |g| {
                for (&idx, go) in argmax.iter().zip(gout) {
                    g[idx] += go;
                }
            }),
            Op::GatherRows { src, index, width } => acc(*src, &mut |g| {
                for (i, idx) in index.iter().enumerate() {
                    if let Some(j) = idx {
                        add_into(&mut g[j * width..(j + 1) * width], &gout[i * width..(i + 1) * width]);
                    }
                }
            }),
            &Op::SwapLast2 { x, outer, rows, cols } => acc(x, &mut |g| {
                for o in 0..outer {
                    let base = o * rows * cols;
                    for r in 0..rows {
                        for c in 0..cols {
                            g[base + r * cols + c] += gout[base + c * rows + r];
                        }
                    }
                }
            }),
        }
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

fn zip3(dst: &mut [f64], a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) {
    for ((d, &x), &y) in dst.iter_mut().zip(a).zip(b) {
        *d += f(x, y);
    }
}

/// `c = a·b + beta·c` for `a: [m,k]`, `b: [k,n]` given as (row, col) strides;
/// `c` is row-major with row stride `ldc`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    ldc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    let span = |rows: usize, cols: usize, rs: usize, cs: usize| (rows - 1) * rs + (cols - 1) * cs + 1;
    assert!(k == 0 || a.len() >= span(m, k, rsa, csa), "gemm: lhs too short");
    assert!(k == 0 || b.len() >= span(k, n, rsb, csb), "gemm: rhs too short");
    assert!(c.len() >= span(m, n, ldc, 1), "gemm: output too short");
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            ldc as isize,
            1,
        );
    }
}

fn im2col(x: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let patch = g.patch_len();
    let mut cols = vec![0.0; g.batch * g.positions() * patch];
    for b in 0..g.batch {
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let row = (b * g.positions() + oy * g.out_w + ox) * patch;
                let mut k = 0;
                for c in 0..g.in_channels {
                    let plane = (b * g.in_channels + c) * g.in_h * g.in_w;
                    for ky in 0..g.kernel_h {
                        for kx in 0..g.kernel_w {
                            let iy = (oy + ky) as isize - g.pad_h as isize;
                            let ix = (ox + kx) as isize - g.pad_w as isize;
                            if iy >= 0 && ix >= 0 && (iy as usize) < g.in_h && (ix as usize) < g.in_w {
                                cols[row + k] = x[plane + iy as usize * g.in_w + ix as usize];
                            }
                            k += 1;
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im_add(dcols: &[f64], g: &ConvGeometry, dx: &mut [f64]) {
    let patch = g.patch_len();
    for b in 0..g.batch {
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let row = (b * g.positions() + oy * g.out_w + ox) * patch;
                let mut k = 0;
                for c in 0..g.in_channels {
                    let plane = (b * g.in_channels + c) * g.in_h * g.in_w;
                    for ky in 0..g.kernel_h {
                        for kx in 0..g.kernel_w {
                            let iy = (oy + ky) as isize - g.pad_h as isize;
                            let ix = (ox + kx) as isize - g.pad_w as isize;
                            if iy >= 0 && ix >= 0 && (iy as usize) < g.in_h && (ix as usize) < g.in_w {
                                dx[plane + iy as usize * g.in_w + ix as usize] += dcols[row + k];
                            }
                            k += 1;
                        }
                    }
                }
            }
        }
    }
}
