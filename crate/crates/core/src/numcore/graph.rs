use crate::error::{Error, Result};

use super::kernels::{self, Window};
use super::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Spatial padding for [`Graph::conv2d`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Valid,
    /// Output size `ceil(H / stride)`; odd totals put the extra zero row
    /// and column on the high side.
    Same,
    /// Symmetric zero padding of the given width.
    Explicit(usize),
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: Window,
    },
    Conv1x1 {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: Window,
    },
    MaxPool2d {
        x: Var,
        argmax: Vec<usize>,
    },
    Relu(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Concat(Var, Var),
    Upsample {
        x: Var,
        factor: usize,
    },
    Sum(Var),
    SoftmaxCrossEntropy {
        logits: Var,
        probs: Vec<f64>,
        targets: Vec<Option<usize>>,
        counted: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Tape of recorded operations.
///
/// Nodes are appended in evaluation order, so the tape is already a
/// topological order of the DAG and `backward` sweeps it in reverse.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

fn conv_output_dim(size: usize, k: usize, stride: usize, pad_lo: usize, pad_hi: usize) -> Result<usize> {
    let padded = size + pad_lo + pad_hi;
    if padded < k {
        return Err(Error::Shape(format!(
            "kernel {k} does not fit input {size} with padding ({pad_lo}, {pad_hi})"
        )));
    }
    Ok((padded - k) / stride + 1)
}

/// `(pad_lo, pad_hi, out)` along one axis.
fn resolve_padding(size: usize, k: usize, stride: usize, padding: Padding) -> Result<(usize, usize, usize)> {
    match padding {
        Padding::Valid => Ok((0, 0, conv_output_dim(size, k, stride, 0, 0)?)),
        Padding::Explicit(p) => Ok((p, p, conv_output_dim(size, k, stride, p, p)?)),
        Padding::Same => {
            let out = size.div_ceil(stride);
            let total = ((out - 1) * stride + k).saturating_sub(size);
            let lo = total / 2;
            Ok((lo, total - lo, out))
        }
    }
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

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf. Gradients are only computed for leaves with
    /// `requires_grad` and the nodes downstream of them.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last `backward` target with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn rg(&self, vars: &[Option<Var>]) -> bool {
        vars.iter().flatten().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Cross-correlation of `x: [N, C, H, W]` with `w: [O, C, kh, kw]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, padding: Padding) -> Result<Var> {
        if stride == 0 {
            return Err(Error::Shape("conv2d stride must be positive".into()));
        }
        let [n, c, h, wd] = self.value(x).dims4()?;
        let [o, wc, kh, kw] = self.value(w).dims4()?;
        if wc != c {
            return Err(Error::Shape(format!("conv2d weight expects {wc} input channels, input has {c}")));
        }
        self.check_bias(b, o)?;
        let (pt, _, out_h) = resolve_padding(h, kh, stride, padding)?;
        let (pl, _, out_w) = resolve_padding(wd, kw, stride, padding)?;
        let geom = Window {
            channels: c,
            height: h,
            width: wd,
            kh,
            kw,
            stride,
            pad_top: pt,
            pad_left: pl,
            out_h,
            out_w,
        };
        let (rows, cols) = (geom.rows(), geom.cols());
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let mut out = vec![0.0; n * o * cols];
        let mut buf = vec![0.0; rows * cols];
        for bi in 0..n {
            let img = &xv[bi * c * h * wd..(bi + 1) * c * h * wd];
            kernels::im2col(img, &geom, &mut buf);
            kernels::matmul_acc(wv, &buf, &mut out[bi * o * cols..(bi + 1) * o * cols], o, rows, cols);
        }
        if let Some(b) = b {
            add_channel_bias(&mut out, self.value(b).data(), cols);
        }
        let value = Tensor::new(&[n, o, out_h, out_w], out)?;
        let rg = self.rg(&[Some(x), Some(w), b]);
        Ok(self.push(value, rg, Op::Conv2d { x, w, b, geom }))
    }

    /// Per-pixel linear map across channels with `w: [O, C]`.
    pub fn conv1x1(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let [n, c, h, wd] = self.value(x).dims4()?;
        let (o, wc) = match self.value(w).shape() {
            &[o, wc] => (o, wc),
            &[o, wc, 1, 1] => (o, wc),
            other => return Err(Error::Shape(format!("conv1x1 weight must be [out, in], got {other:?}"))),
        };
        if wc != c {
            return Err(Error::Shape(format!("conv1x1 weight expects {wc} input channels, input has {c}")));
        }
        self.check_bias(b, o)?;
        let plane = h * wd;
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let mut out = vec![0.0; n * o * plane];
        for bi in 0..n {
            kernels::matmul_acc(
                wv,
                &xv[bi * c * plane..(bi + 1) * c * plane],
                &mut out[bi * o * plane..(bi + 1) * o * plane],
                o,
                c,
                plane,
            );
        }
        if let Some(b) = b {
            add_channel_bias(&mut out, self.value(b).data(), plane);
        }
        let value = Tensor::new(&[n, o, h, wd], out)?;
        let rg = self.rg(&[Some(x), Some(w), b]);
        Ok(self.push(value, rg, Op::Conv1x1 { x, w, b }))
    }

    /// Transposed convolution with `w: [C_in, C_out, kh, kw]`; output
    /// spatial size `(H - 1) * stride + kh`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize) -> Result<Var> {
        if stride == 0 {
            return Err(Error::Shape("conv_transpose2d stride must be positive".into()));
        }
        let [n, ci, h, wd] = self.value(x).dims4()?;
        let [wci, co, kh, kw] = self.value(w).dims4()?;
        if wci != ci {
            return Err(Error::Shape(format!(
                "conv_transpose2d weight expects {wci} input channels, input has {ci}"
            )));
        }
        self.check_bias(b, co)?;
        let out_h = (h - 1) * stride + kh;
        let out_w = (wd - 1) * stride + kw;
        // the forward pass is the adjoint of a convolution over the output
        let geom = Window {
            channels: co,
            height: out_h,
            width: out_w,
            kh,
            kw,
            stride,
            pad_top: 0,
            pad_left: 0,
            out_h: h,
            out_w: wd,
        };
        let (rows, cols) = (geom.rows(), geom.cols());
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let out_plane = out_h * out_w;
        let mut out = vec![0.0; n * co * out_plane];
        let mut buf = vec![0.0; rows * cols];
        for bi in 0..n {
            buf.fill(0.0);
            kernels::matmul_at_acc(wv, &xv[bi * ci * cols..(bi + 1) * ci * cols], &mut buf, ci, rows, cols);
            kernels::col2im_add(&buf, &geom, &mut out[bi * co * out_plane..(bi + 1) * co * out_plane]);
        }
        if let Some(b) = b {
            add_channel_bias(&mut out, self.value(b).data(), out_plane);
        }
        let value = Tensor::new(&[n, co, out_h, out_w], out)?;
        let rg = self.rg(&[Some(x), Some(w), b]);
        Ok(self.push(value, rg, Op::ConvTranspose2d { x, w, b, geom }))
    }

    /// Max pooling; ties resolve to the first maximizer in row-major order.
    pub fn maxpool2d(&mut self, x: Var, window: usize, stride: usize) -> Result<Var> {
        if window == 0 || stride == 0 {
            return Err(Error::Shape("maxpool window and stride must be positive".into()));
        }
        let [n, c, h, w] = self.value(x).dims4()?;
        if h < window || w < window {
            return Err(Error::Shape(format!("maxpool window {window} larger than input {h}x{w}")));
        }
        let out_h = (h - window) / stride + 1;
        let out_w = (w - window) / stride + 1;
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(n * c * out_h * out_w);
        let mut argmax = Vec::with_capacity(out.capacity());
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..out_h {
                for ox in 0..out_w {
                    let mut best = base + oy * stride * w + ox * stride;
                    for dy in 0..window {
                        for dx in 0..window {
                            let idx = base + (oy * stride + dy) * w + ox * stride + dx;
                            if xv[idx] > xv[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(xv[best]);
                    argmax.push(best);
                }
            }
        }
        let value = Tensor::new(&[n, c, out_h, out_w], out)?;
        let rg = self.rg(&[Some(x)]);
        Ok(self.push(value, rg, Op::MaxPool2d { x, argmax }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let data = src.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        let value = Tensor::new(src.shape(), data).expect("same shape");
        let rg = self.rg(&[Some(x)]);
        self.push(value, rg, Op::Relu(x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape("add", a, b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(av.shape(), data)?;
        let rg = self.rg(&[Some(a), Some(b)]);
        Ok(self.push(value, rg, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape("mul", a, b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(av.shape(), data)?;
        let rg = self.rg(&[Some(a), Some(b)]);
        Ok(self.push(value, rg, Op::Mul(a, b)))
    }

    /// Concatenates along the channel axis: `[N, C1, H, W] ++ [N, C2, H, W]`.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let [n, c1, h, w] = self.value(a).dims4()?;
        let [n2, c2, h2, w2] = self.value(b).dims4()?;
        if (n, h, w) != (n2, h2, w2) {
            return Err(Error::Shape(format!(
                "concat_channels: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let plane = h * w;
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(n * (c1 + c2) * plane);
        for bi in 0..n {
            out.extend_from_slice(&av[bi * c1 * plane..(bi + 1) * c1 * plane]);
            out.extend_from_slice(&bv[bi * c2 * plane..(bi + 1) * c2 * plane]);
        }
        let value = Tensor::new(&[n, c1 + c2, h, w], out)?;
        let rg = self.rg(&[Some(a), Some(b)]);
        Ok(self.push(value, rg, Op::Concat(a, b)))
    }

    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var> {
        if factor == 0 {
            return Err(Error::Shape("upsample factor must be positive".into()));
        }
        let [n, c, h, w] = self.value(x).dims4()?;
        let (oh, ow) = (h * factor, w * factor);
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            for y in 0..oh {
                let row = &xv[plane * h * w + (y / factor) * w..plane * h * w + (y / factor + 1) * w];
                out.extend((0..ow).map(|xx| row[xx / factor]));
            }
        }
        let value = Tensor::new(&[n, c, oh, ow], out)?;
        let rg = self.rg(&[Some(x)]);
        Ok(self.push(value, rg, Op::Upsample { x, factor }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().sum();
        let rg = self.rg(&[Some(x)]);
        self.push(Tensor::scalar(total), rg, Op::Sum(x))
    }

    /// Mean pixel-wise cross-entropy of `logits: [N, C, H, W]` against
    /// `targets` (`N*H*W` class indices, row-major per image). Pixels whose
    /// target equals `ignore_index` do not contribute.
    pub fn softmax_ce_loss(&mut self, logits: Var, targets: &[usize], ignore_index: Option<usize>) -> Result<Var> {
        let [n, c, h, w] = self.value(logits).dims4()?;
        let plane = h * w;
        if targets.len() != n * plane {
            return Err(Error::Shape(format!(
                "cross-entropy expects {} targets, got {}",
                n * plane,
                targets.len()
            )));
        }
        let lv = self.value(logits).data();
        let mut probs = vec![0.0; lv.len()];
        let mut kept = Vec::with_capacity(targets.len());
        let mut total = 0.0f64;
        let mut counted = 0usize;
        for bi in 0..n {
            for p in 0..plane {
                let t = targets[bi * plane + p];
                if Some(t) == ignore_index {
                    kept.push(None);
                    continue;
                }
                if t >= c {
                    return Err(Error::Validation(format!("target class {t} out of range for {c} classes")));
                }
                let at = |k: usize| bi * c * plane + k * plane + p;
                let max = (0..c).map(|k| lv[at(k)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for k in 0..c {
                    let e = (lv[at(k)] - max).exp();
                    probs[at(k)] = e;
                    z += e;
                }
                for k in 0..c {
                    probs[at(k)] /= z;
                }
                total += z.ln() + max - lv[at(t)];
                counted += 1;
                kept.push(Some(t));
            }
        }
        let loss = if counted > 0 { total / counted as f64 } else { 0.0 };
        let rg = self.rg(&[Some(logits)]);
        Ok(self.push(
            Tensor::scalar(loss),
            rg,
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                targets: kept,
                counted,
            },
        ))
    }

    fn check_bias(&self, b: Option<Var>, channels: usize) -> Result<()> {
        if let Some(b) = b {
            if self.value(b).len() != channels {
                return Err(Error::Shape(format!(
                    "bias has {} entries, expected {channels}",
                    self.value(b).len()
                )));
            }
        }
        Ok(())
    }

    fn check_same_shape(&self, op: &str, a: Var, b: Var) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Shape(format!(
                "{op}: shapes {:?} and {:?} differ",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    /// Reverse sweep from a one-element `loss`. Gradients of every node that
    /// depends on a `requires_grad` leaf become available through
    /// [`Graph::grad`]; repeated uses of a node accumulate.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
        f(slot);
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom } => {
                let [n, c, h, wd] = self.value(*x).dims4().expect("rank 4");
                let o = self.value(*w).shape()[0];
                let (rows, cols) = (geom.rows(), geom.cols());
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                let need_w = self.nodes[w.0].requires_grad;
                let need_x = self.nodes[x.0].requires_grad;
                let mut buf = vec![0.0; rows * cols];
                for bi in 0..n {
                    let go = &g[bi * o * cols..(bi + 1) * o * cols];
                    if need_w {
                        kernels::im2col(&xv[bi * c * h * wd..(bi + 1) * c * h * wd], geom, &mut buf);
                        self.accumulate(grads, *w, |gw| kernels::matmul_bt_acc(go, &buf, gw, o, cols, rows));
                    }
                    if need_x {
                        buf.fill(0.0);
                        kernels::matmul_at_acc(wv, go, &mut buf, o, rows, cols);
                        self.accumulate(grads, *x, |gx| {
                            kernels::col2im_add(&buf, geom, &mut gx[bi * c * h * wd..(bi + 1) * c * h * wd])
                        });
                    }
                }
                if let Some(b) = b {
                    self.accumulate(grads, *b, |gb| channel_sums(g, gb, cols));
                }
            }
            Op::Conv1x1 { x, w, b } => {
                let [n, c, h, wd] = self.value(*x).dims4().expect("rank 4");
                let o = self.value(*w).shape()[0];
                let plane = h * wd;
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                for bi in 0..n {
                    let go = &g[bi * o * plane..(bi + 1) * o * plane];
                    let xs = &xv[bi * c * plane..(bi + 1) * c * plane];
                    self.accumulate(grads, *w, |gw| kernels::matmul_bt_acc(go, xs, gw, o, plane, c));
                    self.accumulate(grads, *x, |gx| {
                        kernels::matmul_at_acc(wv, go, &mut gx[bi * c * plane..(bi + 1) * c * plane], o, c, plane)
                    });
                }
                if let Some(b) = b {
                    self.accumulate(grads, *b, |gb| channel_sums(g, gb, plane));
                }
            }
            Op::ConvTranspose2d { x, w, b, geom } => {
                let [n, ci, h, wd] = self.value(*x).dims4().expect("rank 4");
                let co = geom.channels;
                let (rows, cols) = (geom.rows(), geom.cols());
                debug_assert_eq!(cols, h * wd);
                let out_plane = geom.height * geom.width;
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                let mut buf = vec![0.0; rows * cols];
                for bi in 0..n {
                    kernels::im2col(&g[bi * co * out_plane..(bi + 1) * co * out_plane], geom, &mut buf);
                    let xs = &xv[bi * ci * cols..(bi + 1) * ci * cols];
                    self.accumulate(grads, *w, |gw| kernels::matmul_bt_acc(xs, &buf, gw, ci, cols, rows));
                    self.accumulate(grads, *x, |gx| {
                        kernels::matmul_acc(wv, &buf, &mut gx[bi * ci * cols..(bi + 1) * ci * cols], ci, rows, cols)
                    });
                }
                if let Some(b) = b {
                    self.accumulate(grads, *b, |gb| channel_sums(g, gb, out_plane));
                }
            }
            Op::MaxPool2d { x, argmax } => {
                self.accumulate(grads, *x, |gx| {
                    for (&src, &gv) in argmax.iter().zip(g) {
                        gx[src] += gv;
                    }
                });
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                self.accumulate(grads, *x, |gx| {
                    for ((gi, &xi), &gv) in gx.iter_mut().zip(xv).zip(g) {
                        if xi > 0.0 {
                            *gi += gv;
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    self.accumulate(grads, v, |ga| ga.iter_mut().zip(g).for_each(|(d, s)| *d += s));
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |ga| {
                    for ((d, &gv), &o) in ga.iter_mut().zip(g).zip(bv) {
                        *d += gv * o;
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for ((d, &gv), &o) in gb.iter_mut().zip(g).zip(av) {
                        *d += gv * o;
                    }
                });
            }
            Op::Concat(a, b) => {
                let [n, c1, h, w] = self.value(*a).dims4().expect("rank 4");
                let c2 = self.value(*b).shape()[1];
                let plane = h * w;
                let stride = (c1 + c2) * plane;
                self.accumulate(grads, *a, |ga| {
                    for bi in 0..n {
                        let src = &g[bi * stride..bi * stride + c1 * plane];
                        ga[bi * c1 * plane..(bi + 1) * c1 * plane]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(d, s)| *d += s);
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for bi in 0..n {
                        let src = &g[bi * stride + c1 * plane..(bi + 1) * stride];
                        gb[bi * c2 * plane..(bi + 1) * c2 * plane]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(d, s)| *d += s);
                    }
                });
            }
            Op::Upsample { x, factor } => {
                let [n, c, h, w] = self.value(*x).dims4().expect("rank 4");
                let (oh, ow) = (h * factor, w * factor);
                self.accumulate(grads, *x, |gx| {
                    for plane in 0..n * c {
                        for y in 0..oh {
                            for xx in 0..ow {
                                gx[plane * h * w + (y / factor) * w + xx / factor] +=
                                    g[plane * oh * ow + y * ow + xx];
                            }
                        }
                    }
                });
            }
            Op::Sum(x) => {
                let gv = g[0];
                self.accumulate(grads, *x, |gx| gx.iter_mut().for_each(|d| *d += gv));
            }
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                targets,
                counted,
            } => {
                if *counted == 0 {
                    return;
                }
                let [n, c, h, w] = self.value(*logits).dims4().expect("rank 4");
                let plane = h * w;
                let scale = g[0] / *counted as f64;
                self.accumulate(grads, *logits, |gl| {
                    for bi in 0..n {
                        for p in 0..plane {
                            let Some(t) = targets[bi * plane + p] else { continue };
                            for k in 0..c {
                                let at = bi * c * plane + k * plane + p;
                                let onehot = if k == t { 1.0 } else { 0.0 };
                                gl[at] += scale * (probs[at] - onehot);
                            }
                        }
                    }
                });
            }
        }
    }
}

fn add_channel_bias(out: &mut [f64], bias: &[f64], plane: usize) {
    for (ch, chunk) in out.chunks_mut(plane).enumerate() {
        let b = bias[ch % bias.len()];
        chunk.iter_mut().for_each(|v| *v += b);
    }
}

fn channel_sums(g: &[f64], gb: &mut [f64], plane: usize) {
    let channels = gb.len();
    for (ch, chunk) in g.chunks(plane).enumerate() {
        gb[ch % channels] += chunk.iter().sum::<f64>();
    }
}
