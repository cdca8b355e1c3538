use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

/// Dense row-major array with a same-shaped gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    pub values: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} holds {numel} values, got {}",
                values.len()
            )));
        }
        let grad = vec![0.0; values.len()];
        Ok(Self { shape, values, grad })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Self {
            shape,
            values: vec![0.0; numel],
            grad: vec![0.0; numel],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().chain(&self.grad).all(|v| v.is_finite())
    }
}

/// Handle to a node of a specific [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    graph: u64,
    index: usize,
}

#[derive(Debug)]
enum Op {
    Input,
    Param(usize),
    Conv2d {
        x: usize,
        w: usize,
        b: usize,
        stride: usize,
        pad: usize,
    },
    Relu(usize),
    MaxPool {
        x: usize,
        argmax: Vec<usize>,
    },
    Reshape(usize),
    Dense {
        x: usize,
        w: usize,
        b: usize,
    },
    Add(usize, usize),
    Scale(usize, f64),
    SumSquares(usize),
    Sum(usize),
    CrossEntropy {
        logits: usize,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    grad: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

/// Tape of one forward computation.
#[derive(Debug)]
pub struct Graph {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.graph != self.id || v.index >= self.nodes.len() {
            return Err(Error::Graph(
                "variable does not belong to this graph (detached tensor)".into(),
            ));
        }
        Ok(v.index)
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        let grad = Vec::new();
        self.nodes.push(Node {
            shape,
            value,
            grad,
            op,
            requires_grad,
        });
        Var {
            graph: self.id,
            index: self.nodes.len() - 1,
        }
    }

    /// Constant input; no gradient flows into it.
    pub fn input(&mut self, tensor: &Tensor) -> Var {
        self.push(tensor.shape.clone(), tensor.values.clone(), Op::Input, false)
    }

    /// Leaf tracking parameter slot `slot`; backward adds into `params[slot].grad`.
    pub fn param(&mut self, slot: usize, tensor: &Tensor) -> Var {
        self.push(tensor.shape.clone(), tensor.values.clone(), Op::Param(slot), true)
    }

    pub fn shape(&self, v: Var) -> Result<&[usize]> {
        Ok(&self.nodes[self.idx(v)?].shape)
    }

    pub fn value(&self, v: Var) -> Result<&[f64]> {
        Ok(&self.nodes[self.idx(v)?].value)
    }

    /// Gradient of the last backward pass (empty before any).
    pub fn grad(&self, v: Var) -> Result<&[f64]> {
        Ok(&self.nodes[self.idx(v)?].grad)
    }

    /// Snapshot of a node as a standalone tensor.
    pub fn tensor(&self, v: Var) -> Result<Tensor> {
        let node = &self.nodes[self.idx(v)?];
        let mut t = Tensor::new(node.shape.clone(), node.value.clone())?;
        if node.grad.len() == t.grad.len() {
            t.grad.copy_from_slice(&node.grad);
        }
        Ok(t)
    }

    pub fn scalar(&self, v: Var) -> Result<f64> {
        let value = self.value(v)?;
        if value.len() != 1 {
            return Err(Error::shape(format!("expected a scalar, got {} values", value.len())));
        }
        Ok(value[0])
    }

    fn rg(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    /// 2-D convolution of `x: [B, C, H, W]` with `w: [O, C, K, K]` and bias `b: [O]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let (xi, wi, bi) = (self.idx(x)?, self.idx(w)?, self.idx(b)?);
        let xs = self.nodes[xi].shape.clone();
        let ws = self.nodes[wi].shape.clone();
        if xs.len() != 4 || ws.len() != 4 || ws[2] != ws[3] || xs[1] != ws[1] {
            return Err(Error::shape(format!("conv2d input {xs:?} with weight {ws:?}")));
        }
        if self.nodes[bi].shape != [ws[0]] {
            return Err(Error::shape(format!("conv2d bias {:?} for {} filters", self.nodes[bi].shape, ws[0])));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("conv2d stride must be positive".into()));
        }
        let geom = ConvGeom::new(&xs, &ws, stride, pad)?;
        let value = geom.forward(&self.nodes[xi].value, &self.nodes[wi].value, &self.nodes[bi].value);
        let rg = self.rg(xi) || self.rg(wi) || self.rg(bi);
        Ok(self.push(
            vec![xs[0], ws[0], geom.ho, geom.wo],
            value,
            Op::Conv2d {
                x: xi,
                w: wi,
                b: bi,
                stride,
                pad,
            },
            rg,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        let value = self.nodes[xi].value.iter().map(|v| v.max(0.0)).collect();
        let shape = self.nodes[xi].shape.clone();
        let rg = self.rg(xi);
        Ok(self.push(shape, value, Op::Relu(xi), rg))
    }

    /// Max pooling over `window x window` patches of `[B, C, H, W]`.
    pub fn max_pool2d(&mut self, x: Var, window: usize, stride: usize) -> Result<Var> {
        let xi = self.idx(x)?;
        let s = self.nodes[xi].shape.clone();
        if s.len() != 4 || window == 0 || stride == 0 || s[2] < window || s[3] < window {
            return Err(Error::shape(format!("max pool {window}/{stride} on {s:?}")));
        }
        let (ho, wo) = ((s[2] - window) / stride + 1, (s[3] - window) / stride + 1);
        let planes = s[0] * s[1];
        let (h, w) = (s[2], s[3]);
        let input = &self.nodes[xi].value;
        let mut value = Vec::with_capacity(planes * ho * wo);
        let mut argmax = Vec::with_capacity(planes * ho * wo);
        for p in 0..planes {
            let base = p * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = base + oy * stride * w + ox * stride;
                    for dy in 0..window {
                        for dx in 0..window {
                            let i = base + (oy * stride + dy) * w + ox * stride + dx;
                            if input[i] > input[best] {
                                best = i;
                            }
                        }
                    }
                    value.push(input[best]);
                    argmax.push(best);
                }
            }
        }
        let rg = self.rg(xi);
        Ok(self.push(vec![s[0], s[1], ho, wo], value, Op::MaxPool { x: xi, argmax }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let xi = self.idx(x)?;
        let numel: usize = shape.iter().product();
        if numel != self.nodes[xi].value.len() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.nodes[xi].shape
            )));
        }
        let value = self.nodes[xi].value.clone();
        let rg = self.rg(xi);
        Ok(self.push(shape, value, Op::Reshape(xi), rg))
    }

    /// `[B, ...] -> [B, prod(...)]`.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x)?.to_vec();
        let batch = *s.first().ok_or_else(|| Error::shape("cannot flatten a 0-d tensor"))?;
        self.reshape(x, vec![batch, s[1..].iter().product()])
    }

    /// `x: [B, In]`, `w: [Out, In]`, `b: [Out]` -> `x w^T + b`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xi, wi, bi) = (self.idx(x)?, self.idx(w)?, self.idx(b)?);
        let xs = &self.nodes[xi].shape;
        let ws = &self.nodes[wi].shape;
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] || self.nodes[bi].shape != [ws[0]] {
            return Err(Error::shape(format!(
                "dense input {xs:?}, weight {ws:?}, bias {:?}",
                self.nodes[bi].shape
            )));
        }
        let (batch, fan_in, fan_out) = (xs[0], xs[1], ws[0]);
        let (xv, wv, bv) = (&self.nodes[xi].value, &self.nodes[wi].value, &self.nodes[bi].value);
        let mut value = Vec::with_capacity(batch * fan_out);
        for row in xv.chunks(fan_in) {
            for (o, wrow) in wv.chunks(fan_in).enumerate() {
                value.push(bv[o] + row.iter().zip(wrow).map(|(a, b)| a * b).sum::<f64>());
            }
        }
        let rg = self.rg(xi) || self.rg(wi) || self.rg(bi);
        Ok(self.push(vec![batch, fan_out], value, Op::Dense { x: xi, w: wi, b: bi }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        if self.nodes[ai].shape != self.nodes[bi].shape {
            return Err(Error::shape(format!(
                "add {:?} and {:?}",
                self.nodes[ai].shape, self.nodes[bi].shape
            )));
        }
        let value = self.nodes[ai]
            .value
            .iter()
            .zip(&self.nodes[bi].value)
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.nodes[ai].shape.clone();
        let rg = self.rg(ai) || self.rg(bi);
        Ok(self.push(shape, value, Op::Add(ai, bi), rg))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let xi = self.idx(x)?;
        let value = self.nodes[xi].value.iter().map(|v| v * factor).collect();
        let shape = self.nodes[xi].shape.clone();
        let rg = self.rg(xi);
        Ok(self.push(shape, value, Op::Scale(xi, factor), rg))
    }

    pub fn sum_squares(&mut self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        let value = self.nodes[xi].value.iter().map(|v| v * v).sum();
        let rg = self.rg(xi);
        Ok(self.push(vec![1], vec![value], Op::SumSquares(xi), rg))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        let value = self.nodes[xi].value.iter().sum();
        let rg = self.rg(xi);
        Ok(self.push(vec![1], vec![value], Op::Sum(xi), rg))
    }

    /// Batch-mean softmax cross-entropy of `logits: [B, C]` against class indices.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let li = self.idx(logits)?;
        let s = &self.nodes[li].shape;
        if s.len() != 2 || s[0] != labels.len() {
            return Err(Error::shape(format!("cross entropy of {s:?} with {} labels", labels.len())));
        }
        let (batch, classes) = (s[0], s[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Index {
                what: "classes",
                index: bad,
                len: classes,
            });
        }
        let probs = super::softmax_rows(&self.nodes[li].value, classes);
        let loss = labels
            .iter()
            .enumerate()
            .map(|(b, &l)| -probs[b * classes + l].max(f64::MIN_POSITIVE).ln())
            .sum::<f64>()
            / batch as f64;
        let rg = self.rg(li);
        Ok(self.push(
            vec![1],
            vec![loss],
            Op::CrossEntropy {
                logits: li,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Reverse pass from a scalar loss. Parameter gradients are added to
    /// `params[slot].grad`, so two calls without zeroing accumulate.
    pub fn backward(&mut self, loss: Var, params: &mut [Tensor]) -> Result<()> {
        let li = self.idx(loss)?;
        if self.nodes[li].value.len() != 1 {
            return Err(Error::Graph("backward needs a scalar loss".into()));
        }
        self.backward_seeded(&[(loss, &[1.0])], params)
    }

    /// Reverse pass seeded with explicit output cotangents.
    pub fn backward_seeded(&mut self, seeds: &[(Var, &[f64])], params: &mut [Tensor]) -> Result<()> {
        let mut seed_idx = Vec::with_capacity(seeds.len());
        for (v, g) in seeds {
            let i = self.idx(*v)?;
            if !self.nodes[i].requires_grad {
                return Err(Error::Graph(
                    "output does not depend on any trainable leaf (detached tensor)".into(),
                ));
            }
            if g.len() != self.nodes[i].value.len() {
                return Err(Error::shape(format!(
                    "seed of {} values for a node of {}",
                    g.len(),
                    self.nodes[i].value.len()
                )));
            }
            seed_idx.push(i);
        }
        let top = seed_idx.iter().copied().max().unwrap_or(0);
        for node in &mut self.nodes {
            node.grad.clear();
            if node.requires_grad {
                node.grad.resize(node.value.len(), 0.0);
            }
        }
        for (i, (_, g)) in seed_idx.iter().zip(seeds) {
            self.nodes[*i].grad.iter_mut().zip(g.iter()).for_each(|(a, b)| *a += b);
        }
        for i in (0..=top).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, params)?;
        }
        Ok(())
    }

    fn propagate(&mut self, i: usize, params: &mut [Tensor]) -> Result<()> {
        // Parents always precede children on the tape, so splitting at `i`
        // gives disjoint borrows of the node and its inputs.
        let (before, rest) = self.nodes.split_at_mut(i);
        let node = &rest[0];
        let g = &node.grad;
        match &node.op {
            Op::Input => {}
            Op::Param(slot) => {
                let p = params.get_mut(*slot).ok_or(Error::Index {
                    what: "parameter slots",
                    index: *slot,
                    len: 0,
                })?;
                if p.grad.len() != g.len() {
                    return Err(Error::shape(format!(
                        "parameter slot {slot} has {} values, graph leaf {}",
                        p.grad.len(),
                        g.len()
                    )));
                }
                p.grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
            Op::Conv2d { x, w, b, stride, pad } => {
                let geom = ConvGeom::new(&before[*x].shape, &before[*w].shape, *stride, *pad)?;
                let need_x = before[*x].requires_grad;
                let xv = before[*x].value.clone();
                let wv = before[*w].value.clone();
                let mut gx = vec![0.0; if need_x { xv.len() } else { 0 }];
                let mut gw = vec![0.0; wv.len()];
                let mut gb = vec![0.0; geom.o];
                geom.backward(&xv, &wv, g, need_x.then_some(&mut gx[..]), &mut gw, &mut gb);
                accumulate(&mut before[*x], &gx);
                accumulate(&mut before[*w], &gw);
                accumulate(&mut before[*b], &gb);
            }
            Op::Relu(x) => {
                let parent = &mut before[*x];
                if parent.requires_grad {
                    for ((pg, v), gi) in parent.grad.iter_mut().zip(&parent.value).zip(g) {
                        if *v > 0.0 {
                            *pg += gi;
                        }
                    }
                }
            }
            Op::MaxPool { x, argmax } => {
                let parent = &mut before[*x];
                if parent.requires_grad {
                    for (src, gi) in argmax.iter().zip(g) {
                        parent.grad[*src] += gi;
                    }
                }
            }
            Op::Reshape(x) => accumulate(&mut before[*x], g),
            Op::Dense { x, w, b } => {
                let fan_in = before[*w].shape[1];
                let fan_out = before[*w].shape[0];
                if before[*x].requires_grad {
                    let wv = before[*w].value.clone();
                    let gx = &mut before[*x].grad;
                    for (gxrow, grow) in gx.chunks_mut(fan_in).zip(g.chunks(fan_out)) {
                        for (wrow, go) in wv.chunks(fan_in).zip(grow) {
                            gxrow.iter_mut().zip(wrow).for_each(|(a, wv)| *a += go * wv);
                        }
                    }
                }
                if before[*w].requires_grad {
                    let xv = before[*x].value.clone();
                    let gw = &mut before[*w].grad;
                    for (xrow, grow) in xv.chunks(fan_in).zip(g.chunks(fan_out)) {
                        for (gwrow, go) in gw.chunks_mut(fan_in).zip(grow) {
                            gwrow.iter_mut().zip(xrow).for_each(|(a, xv)| *a += go * xv);
                        }
                    }
                }
                if before[*b].requires_grad {
                    let gb = &mut before[*b].grad;
                    for grow in g.chunks(fan_out) {
                        gb.iter_mut().zip(grow).for_each(|(a, b)| *a += b);
                    }
                }
            }
            Op::Add(a, b) => {
                accumulate(&mut before[*a], g);
                accumulate(&mut before[*b], g);
            }
            Op::Scale(x, factor) => {
                let scaled: Vec<f64> = g.iter().map(|v| v * factor).collect();
                accumulate(&mut before[*x], &scaled);
            }
            Op::SumSquares(x) => {
                let parent = &mut before[*x];
                if parent.requires_grad {
                    let up = g[0];
                    for (pg, v) in parent.grad.iter_mut().zip(&parent.value) {
                        *pg += 2.0 * v * up;
                    }
                }
            }
            Op::Sum(x) => {
                let parent = &mut before[*x];
                if parent.requires_grad {
                    parent.grad.iter_mut().for_each(|pg| *pg += g[0]);
                }
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let parent = &mut before[*logits];
                if parent.requires_grad {
                    let classes = parent.shape[1];
                    let scale = g[0] / labels.len() as f64;
                    for (b, &label) in labels.iter().enumerate() {
                        for c in 0..classes {
                            let onehot = if c == label { 1.0 } else { 0.0 };
                            parent.grad[b * classes + c] += scale * (probs[b * classes + c] - onehot);
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

fn accumulate(node: &mut Node, g: &[f64]) {
    if node.requires_grad && !g.is_empty() {
        node.grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
    }
}

/// Shapes and index arithmetic of one convolution.
struct ConvGeom {
    batch: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn new(xs: &[usize], ws: &[usize], stride: usize, pad: usize) -> Result<Self> {
        let (h, w, k) = (xs[2], xs[3], ws[2]);
        if h + 2 * pad < k || w + 2 * pad < k {
            return Err(Error::shape(format!("kernel {k} larger than padded input {h}x{w}")));
        }
        Ok(Self {
            batch: xs[0],
            c: xs[1],
            h,
            w,
            o: ws[0],
            k,
            stride,
            pad,
            ho: (h + 2 * pad - k) / stride + 1,
            wo: (w + 2 * pad - k) / stride + 1,
        })
    }

    /// Output columns `ox` whose input column `ox * stride + kx - pad` is in range.
    fn col_range(&self, kx: usize) -> (usize, usize) {
        let lo = if kx >= self.pad { 0 } else { (self.pad - kx).div_ceil(self.stride) };
        let hi = if self.w + self.pad > kx {
            ((self.w - 1 + self.pad - kx) / self.stride + 1).min(self.wo)
        } else {
            0
        };
        (lo, hi.max(lo))
    }

    fn row_in(&self, oy: usize, ky: usize) -> Option<usize> {
        let iy = (oy * self.stride + ky).checked_sub(self.pad)?;
        (iy < self.h).then_some(iy)
    }

    fn cols_rows(&self) -> usize {
        self.c * self.k * self.k
    }

    /// Unfolds one sample into a `(C K K) x (Ho Wo)` patch matrix.
    fn im2col(&self, input: &[f64], cols: &mut [f64]) {
        let (hw, ohw) = (self.h * self.w, self.ho * self.wo);
        cols.iter_mut().for_each(|v| *v = 0.0);
        for c in 0..self.c {
            let plane = &input[c * hw..][..hw];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let dst = &mut cols[((c * self.k + ky) * self.k + kx) * ohw..][..ohw];
                    let (lo, hi) = self.col_range(kx);
                    for oy in 0..self.ho {
                        let Some(iy) = self.row_in(oy, ky) else { continue };
                        let irow = &plane[iy * self.w..][..self.w];
                        let orow = &mut dst[oy * self.wo..][..self.wo];
                        for ox in lo..hi {
                            orow[ox] = irow[ox * self.stride + kx - self.pad];
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`im2col`](Self::im2col): scatters patch gradients back onto the input.
    fn col2im(&self, cols: &[f64], gin: &mut [f64]) {
        let (hw, ohw) = (self.h * self.w, self.ho * self.wo);
        for c in 0..self.c {
            let plane = &mut gin[c * hw..][..hw];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let src = &cols[((c * self.k + ky) * self.k + kx) * ohw..][..ohw];
                    let (lo, hi) = self.col_range(kx);
                    for oy in 0..self.ho {
                        let Some(iy) = self.row_in(oy, ky) else { continue };
                        let grow = &mut plane[iy * self.w..][..self.w];
                        let srow = &src[oy * self.wo..][..self.wo];
                        for ox in lo..hi {
                            grow[ox * self.stride + kx - self.pad] += srow[ox];
                        }
                    }
                }
            }
        }
    }

    fn forward(&self, x: &[f64], wt: &[f64], bias: &[f64]) -> Vec<f64> {
        let (chw, ohw, ckk) = (self.c * self.h * self.w, self.ho * self.wo, self.cols_rows());
        let mut out = vec![0.0; self.batch * self.o * ohw];
        let mut cols = vec![0.0; ckk * ohw];
        for bi in 0..self.batch {
            self.im2col(&x[bi * chw..][..chw], &mut cols);
            let dst = &mut out[bi * self.o * ohw..][..self.o * ohw];
            for (plane, b) in dst.chunks_mut(ohw).zip(bias) {
                plane.iter_mut().for_each(|v| *v = *b);
            }
            // out = W (O x CKK) * cols (CKK x OHW) + out
            gemm(self.o, ckk, ohw, wt, (ckk, 1), &cols, (ohw, 1), 1.0, dst);
        }
        out
    }

    fn backward(&self, x: &[f64], wt: &[f64], gout: &[f64], mut gx: Option<&mut [f64]>, gw: &mut [f64], gb: &mut [f64]) {
        let (chw, ohw, ckk) = (self.c * self.h * self.w, self.ho * self.wo, self.cols_rows());
        let mut cols = vec![0.0; ckk * ohw];
        let mut gcols = vec![0.0; ckk * ohw];
        for bi in 0..self.batch {
            let g = &gout[bi * self.o * ohw..][..self.o * ohw];
            for (plane, b) in g.chunks(ohw).zip(gb.iter_mut()) {
                *b += plane.iter().sum::<f64>();
            }
            self.im2col(&x[bi * chw..][..chw], &mut cols);
            // gW += g (O x OHW) * cols^T (OHW x CKK)
            gemm(self.o, ohw, ckk, g, (ohw, 1), &cols, (1, ohw), 1.0, gw);
            if let Some(gx) = gx.as_deref_mut() {
                // gcols = W^T (CKK x O) * g (O x OHW)
                gemm(ckk, self.o, ohw, wt, (1, ckk), g, (ohw, 1), 0.0, &mut gcols);
                self.col2im(&gcols, &mut gx[bi * chw..][..chw]);
            }
        }
    }
}

/// `c = a * b + beta * c` for row-major `c: m x n`; `a: m x k` and `b: k x n`
/// are given with explicit (row, column) strides.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_s: (usize, usize), b: &[f64], b_s: (usize, usize), beta: f64, c: &mut [f64]) {
    assert!(m == 0 || k == 0 || (m - 1) * a_s.0 + (k - 1) * a_s.1 < a.len());
    assert!(k == 0 || n == 0 || (k - 1) * b_s.0 + (n - 1) * b_s.1 < b.len());
    assert!(c.len() >= m * n);
    // SAFETY: the asserts above keep every strided access inside the slices,
    // and `c` is exclusively borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_s.0 as isize,
            a_s.1 as isize,
            b.as_ptr(),
            b_s.0 as isize,
            b_s.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: Vec<usize>, values: Vec<f64>) -> Tensor {
        Tensor::new(shape, values).unwrap()
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut params = vec![t(vec![3], vec![1.0, -2.0, 0.5])];
        let mut g = Graph::new();
        let w = g.param(0, &params[0]);
        let loss = g.sum_squares(w).unwrap();
        g.backward(loss, &mut params).unwrap();
        assert_eq!(params[0].grad, vec![2.0, -4.0, 1.0]);
        // A second call accumulates.
        g.backward(loss, &mut params).unwrap();
        assert_eq!(params[0].grad, vec![4.0, -8.0, 2.0]);
    }

    #[test]
    fn cross_entropy_gradient_is_p_minus_onehot() {
        let mut params = vec![t(vec![1, 3], vec![0.2, -0.4, 1.0])];
        let mut g = Graph::new();
        let logits = g.param(0, &params[0]);
        let loss = g.cross_entropy(logits, &[2]).unwrap();
        g.backward(loss, &mut params).unwrap();
        let p = crate::nn::softmax_rows(&params[0].values, 3);
        for c in 0..3 {
            let expected = p[c] - if c == 2 { 1.0 } else { 0.0 };
            assert!((params[0].grad[c] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn detached_and_foreign_vars_are_rejected() {
        let mut params: Vec<Tensor> = Vec::new();
        let mut g = Graph::new();
        let x = g.input(&t(vec![2], vec![1.0, 2.0]));
        let loss = g.sum_squares(x).unwrap();
        assert!(matches!(g.backward(loss, &mut params), Err(Error::Graph(_))));
        let mut other = Graph::new();
        let y = other.input(&t(vec![1], vec![1.0]));
        assert!(matches!(g.relu(y), Err(Error::Graph(_))));
    }

    #[test]
    fn conv_output_shape_and_bias() {
        let mut g = Graph::new();
        let x = g.input(&Tensor::zeros(vec![2, 1, 5, 5]));
        let w = g.input(&Tensor::zeros(vec![3, 1, 3, 3]));
        let b = g.input(&t(vec![3], vec![1.0, 2.0, 3.0]));
        let y = g.conv2d(x, w, b, 1, 1).unwrap();
        assert_eq!(g.shape(y).unwrap(), &[2, 3, 5, 5]);
        assert_eq!(g.value(y).unwrap()[25], 2.0);
        let y = g.conv2d(x, w, b, 2, 0).unwrap();
        assert_eq!(g.shape(y).unwrap(), &[2, 3, 2, 2]);
    }

    fn naive_conv(x: &[f64], xs: [usize; 4], w: &[f64], ws: [usize; 4], b: &[f64], stride: usize, pad: usize) -> Vec<f64> {
        let [bn, c, h, wd] = xs;
        let [o, _, k, _] = ws;
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (wd + 2 * pad - k) / stride + 1;
        let mut out = Vec::new();
        for n in 0..bn {
            for f in 0..o {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = b[f];
                        for ci in 0..c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    acc += w[((f * c + ci) * k + ky) * k + kx]
                                        * x[((n * c + ci) * h + iy as usize) * wd + ix as usize];
                                }
                            }
                        }
                        out.push(acc);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_naive_loops() {
        let xv: Vec<f64> = (0..2 * 3 * 7 * 6).map(|i| ((i * 37 % 17) as f64 - 8.0) / 5.0).collect();
        let wv: Vec<f64> = (0..4 * 3 * 3 * 3).map(|i| ((i * 11 % 13) as f64 - 6.0) / 7.0).collect();
        let bv = vec![0.1, -0.2, 0.3, 0.0];
        for (stride, pad) in [(1, 0), (1, 1), (2, 1), (3, 2)] {
            let mut g = Graph::new();
            let x = g.input(&t(vec![2, 3, 7, 6], xv.clone()));
            let w = g.input(&t(vec![4, 3, 3, 3], wv.clone()));
            let b = g.input(&t(vec![4], bv.clone()));
            let y = g.conv2d(x, w, b, stride, pad).unwrap();
            let expected = naive_conv(&xv, [2, 3, 7, 6], &wv, [4, 3, 3, 3], &bv, stride, pad);
            let got = g.value(y).unwrap();
            assert_eq!(got.len(), expected.len());
            for (a, e) in got.iter().zip(&expected) {
                assert!((a - e).abs() < 1e-12, "stride {stride} pad {pad}");
            }
        }
    }

    #[test]
    fn conv_matches_direct_sum() {
        // 1 input channel 3x3, 1 filter 2x2, no padding.
        let mut g = Graph::new();
        let x = g.input(&t(vec![1, 1, 3, 3], (1..=9).map(f64::from).collect()));
        let w = g.input(&t(vec![1, 1, 2, 2], vec![1.0, 0.0, 0.0, -1.0]));
        let b = g.input(&t(vec![1], vec![0.5]));
        let y = g.conv2d(x, w, b, 1, 0).unwrap();
        // out[i,j] = x[i,j] - x[i+1,j+1] + 0.5 = -4 + 0.5
        assert_eq!(g.value(y).unwrap(), &[-3.5; 4]);
    }

    #[test]
    fn max_pool_routes_gradient_to_argmax() {
        let mut params = vec![t(vec![1, 1, 2, 2], vec![0.1, 0.9, 0.3, 0.2])];
        let mut g = Graph::new();
        let x = g.param(0, &params[0]);
        let y = g.max_pool2d(x, 2, 2).unwrap();
        assert_eq!(g.value(y).unwrap(), &[0.9]);
        let s = g.sum(y).unwrap();
        g.backward(s, &mut params).unwrap();
        assert_eq!(params[0].grad, vec![0.0, 1.0, 0.0, 0.0]);
    }
}
