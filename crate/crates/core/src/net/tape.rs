//! Reverse-mode differentiation over a linear tape of tensor operations.
//!
//! Every operation appends a node holding its forward value. `backward` walks
//! the tape in reverse and accumulates gradients into every node that depends
//! on a parameter leaf.

use crate::error::{Error, Result};

use super::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Input,
    Param(usize),
    Conv { x: NodeId, w: NodeId, b: NodeId, k: usize },
    Relu(NodeId),
    MaxPool { x: NodeId, argmax: Vec<u32> },
    Upsample { x: NodeId, factor: usize },
    Add(NodeId, NodeId),
    Sigmoid(NodeId),
    Dice { p: NodeId, target: Vec<T>, inter: T, denom: T },
    Dot { x: NodeId, weights: Vec<T> },
    Scale { x: NodeId, s: T },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Smoothing constant of the Dice loss.
pub const DICE_EPS: f64 = 1e-5;

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients for every node of a tape (`None` where nothing flows).
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor<T>> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Result<NodeId> {
        if !value.all_finite() {
            return Err(Error::NanGuard(op_name(&op)));
        }
        self.nodes.push(Node { value, op, needs_grad });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    pub fn input(&mut self, value: Tensor<T>) -> Result<NodeId> {
        self.push(value, Op::Input, false)
    }

    /// Registers parameter `index` as a differentiable leaf.
    pub fn param(&mut self, index: usize, value: Tensor<T>) -> Result<NodeId> {
        self.push(value, Op::Param(index), true)
    }

    /// Parameter leaves on this tape as `(param index, node)`.
    pub fn param_nodes(&self) -> Vec<(usize, NodeId)> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Param(p) => Some((p, NodeId(i))),
                _ => None,
            })
            .collect()
    }

    /// Zero-padded same-size convolution with a cubic kernel of side 3 or 1.
    /// Weight shape `(cout, cin, k, k, k)`, bias shape `(cout, 1, 1, 1, 1)`.
    pub fn conv3d(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let xs = self.value(x).shape();
        let ws = self.value(w).shape();
        let bs = self.value(b).shape();
        let k = ws[2];
        if !(k == 1 || k == 3) || ws[3] != k || ws[4] != k {
            return Err(Error::Shape(format!("kernel {ws:?} must be 3x3x3 or 1x1x1")));
        }
        if ws[1] != xs[1] {
            return Err(Error::Shape(format!("conv input has {} channels, kernel expects {}", xs[1], ws[1])));
        }
        if bs[0] != ws[0] || bs[1..].iter().any(|&v| v != 1) {
            return Err(Error::Shape(format!("bias {bs:?} does not match kernel {ws:?}")));
        }
        let out = conv_forward(self.value(x), self.value(w), self.value(b));
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        self.push(out, Op::Conv { x, w, b, k }, needs)
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let mut out = self.value(x).clone();
        for v in out.data_mut() {
            if *v < T::zero() {
                *v = T::zero();
            }
        }
        let needs = self.needs(x);
        self.push(out, Op::Relu(x), needs)
    }

    /// 2×2×2 max pooling with stride 2.
    pub fn max_pool(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        let [bn, c, nx, ny, nz] = xv.shape();
        if nx % 2 != 0 || ny % 2 != 0 || nz % 2 != 0 {
            return Err(Error::NotDivisible([nx, ny, nz], 2));
        }
        let (ox, oy, oz) = (nx / 2, ny / 2, nz / 2);
        let mut out = Tensor::zeros([bn, c, ox, oy, oz]);
        let mut argmax = Vec::with_capacity(out.len());
        let src = xv.data();
        let in_vox = nx * ny * nz;
        let dst = out.data_mut();
        let mut o = 0;
        for slab in 0..bn * c {
            let base = slab * in_vox;
            for z in 0..oz {
                for y in 0..oy {
                    for x in 0..ox {
                        let mut best = base + (2 * x) + nx * ((2 * y) + ny * (2 * z));
                        let mut bv = src[best];
                        for dz in 0..2 {
                            for dy in 0..2 {
                                for dx in 0..2 {
                                    let i = base + (2 * x + dx) + nx * ((2 * y + dy) + ny * (2 * z + dz));
                                    if src[i] > bv {
                                        bv = src[i];
                                        best = i;
                                    }
                                }
                            }
                        }
                        dst[o] = bv;
                        argmax.push(best as u32);
                        o += 1;
                    }
                }
            }
        }
        let needs = self.needs(x);
        self.push(out, Op::MaxPool { x, argmax }, needs)
    }

    /// Trilinear upsampling by an integer factor (half-voxel aligned, edge clamped).
    pub fn upsample(&mut self, x: NodeId, factor: usize) -> Result<NodeId> {
        if factor == 0 {
            return Err(Error::Shape("upsample factor 0".into()));
        }
        let out = if factor == 1 {
            self.value(x).clone()
        } else {
            upsample_forward(self.value(x), factor)
        };
        let needs = self.needs(x);
        self.push(out, Op::Upsample { x, factor }, needs)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Shape(format!(
                "add {:?} + {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let needs = self.needs(a) || self.needs(b);
        self.push(out, Op::Add(a, b), needs)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        let mut out = self.value(x).clone();
        for v in out.data_mut() {
            *v = sigmoid(*v);
        }
        let needs = self.needs(x);
        self.push(out, Op::Sigmoid(x), needs)
    }

    pub fn scale(&mut self, x: NodeId, s: T) -> Result<NodeId> {
        let mut out = self.value(x).clone();
        out.scale(s);
        let needs = self.needs(x);
        self.push(out, Op::Scale { x, s }, needs)
    }

    /// Soft Dice loss over every voxel of `p` (all batch items pooled):
    /// `1 - (2 Σ p g + eps) / (Σ p + Σ g + eps)`.
    pub fn dice_loss(&mut self, p: NodeId, target: &[T]) -> Result<NodeId> {
        let pv = self.value(p);
        if pv.len() != target.len() {
            return Err(Error::Shape(format!(
                "dice target has {} values, prediction {}",
                target.len(),
                pv.len()
            )));
        }
        let eps = T::of(DICE_EPS);
        let (mut inter, mut sp, mut sg) = (T::zero(), T::zero(), T::zero());
        for (&a, &g) in pv.data().iter().zip(target) {
            inter += a * g;
            sp += a;
            sg += g;
        }
        let denom = sp + sg + eps;
        let loss = T::one() - (T::of(2.0) * inter + eps) / denom;
        let needs = self.needs(p);
        self.push(
            Tensor::full([1, 1, 1, 1, 1], loss),
            Op::Dice {
                p,
                target: target.to_vec(),
                inter,
                denom,
            },
            needs,
        )
    }

    /// Linear functional `Σ x_i w_i`.
    pub fn dot(&mut self, x: NodeId, weights: &[T]) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.len() != weights.len() {
            return Err(Error::Shape("dot weight length".into()));
        }
        let v: T = xv.data().iter().zip(weights).map(|(&a, &b)| a * b).sum();
        let needs = self.needs(x);
        self.push(Tensor::full([1, 1, 1, 1, 1], v), Op::Dot { x, weights: weights.to_vec() }, needs)
    }

    /// Pre-activation signs of every ReLU and every max-pool argmax, used to
    /// detect when a perturbation crosses a non-differentiable point.
    pub fn activation_pattern(&self) -> Vec<u64> {
        let mut sig = Vec::new();
        for n in &self.nodes {
            match &n.op {
                Op::Relu(x) => {
                    let mut word = 0u64;
                    for (i, v) in self.value(*x).data().iter().enumerate() {
                        word |= ((*v > T::zero()) as u64) << (i % 64);
                        if i % 64 == 63 {
                            sig.push(word);
                            word = 0;
                        }
                    }
                    sig.push(word);
                }
                Op::MaxPool { argmax, .. } => sig.extend(argmax.iter().map(|&a| a as u64)),
                _ => {}
            }
        }
        sig
    }

    /// Reverse pass from scalar node `loss`.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        self.backward_scaled(loss, T::one())
    }

    /// Reverse pass seeded with `d loss = seed`.
    pub fn backward_scaled(&self, loss: NodeId, seed: T) -> Result<Gradients<T>> {
        if self.nodes.is_empty() || loss.0 >= self.nodes.len() {
            return Err(Error::BackwardBeforeForward);
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Shape("backward needs a scalar loss node".into()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full([1, 1, 1, 1, 1], seed));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Input => {}
                Op::Param(_) => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::Conv { x, w, b, k } => {
                    let (dx, dw, db) = conv_backward(
                        self.value(*x),
                        self.value(*w),
                        &g,
                        *k,
                        self.needs(*x),
                    );
                    if let Some(dx) = dx {
                        accumulate(&mut grads, *x, dx);
                    }
                    if self.needs(*w) {
                        accumulate(&mut grads, *w, dw);
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::Relu(x) => {
                    let mut d = g;
                    for (dv, &xv) in d.data_mut().iter_mut().zip(self.value(*x).data()) {
                        if xv <= T::zero() {
                            *dv = T::zero();
                        }
                    }
                    accumulate(&mut grads, *x, d);
                }
                Op::MaxPool { x, argmax } => {
                    let mut d = Tensor::zeros(self.value(*x).shape());
                    let dd = d.data_mut();
                    for (&a, &gv) in argmax.iter().zip(g.data()) {
                        dd[a as usize] += gv;
                    }
                    accumulate(&mut grads, *x, d);
                }
                Op::Upsample { x, factor } => {
                    let d = if *factor == 1 {
                        g
                    } else {
                        upsample_backward(&g, self.value(*x).shape(), *factor)
                    };
                    accumulate(&mut grads, *x, d);
                }
                Op::Add(a, b) => {
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, g.clone());
                    }
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::Sigmoid(x) => {
                    let mut d = g;
                    // saturated voxels would otherwise feed subnormals into every conv below
                    let floor = T::min_positive_value().sqrt();
                    for (dv, &y) in d.data_mut().iter_mut().zip(node.value.data()) {
                        *dv *= y * (T::one() - y);
                        if dv.abs() < floor {
                            *dv = T::zero();
                        }
                    }
                    accumulate(&mut grads, *x, d);
                }
                Op::Scale { x, s } => {
                    let mut d = g;
                    d.scale(*s);
                    accumulate(&mut grads, *x, d);
                }
                Op::Dice { p, target, inter, denom } => {
                    let gs = g.data()[0];
                    let num = T::of(2.0) * *inter + T::of(DICE_EPS);
                    let d2 = *denom * *denom;
                    let mut d = Tensor::zeros(self.value(*p).shape());
                    for (dv, &t) in d.data_mut().iter_mut().zip(target) {
                        *dv = -gs * (T::of(2.0) * t * *denom - num) / d2;
                    }
                    accumulate(&mut grads, *p, d);
                }
                Op::Dot { x, weights } => {
                    let gs = g.data()[0];
                    let d = Tensor::from_vec(
                        self.value(*x).shape(),
                        weights.iter().map(|&w| w * gs).collect(),
                    )?;
                    accumulate(&mut grads, *x, d);
                }
            }
        }
        if grads.iter().flatten().any(|g| !g.all_finite()) {
            return Err(Error::NanGuard("backward"));
        }
        Ok(Gradients { grads })
    }
}

fn op_name<T>(op: &Op<T>) -> &'static str {
    match op {
        Op::Input => "input",
        Op::Param(_) => "param",
        Op::Conv { .. } => "conv3d",
        Op::Relu(_) => "relu",
        Op::MaxPool { .. } => "max_pool",
        Op::Upsample { .. } => "upsample",
        Op::Add(..) => "add",
        Op::Sigmoid(_) => "sigmoid",
        Op::Dice { .. } => "dice_loss",
        Op::Dot { .. } => "dot",
        Op::Scale { .. } => "scale",
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor<T>>], id: NodeId, g: Tensor<T>) {
    match &mut grads[id.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

#[inline]
pub fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Unrolls 3×3×3 zero-padded neighborhoods of a `(c × voxels)` block into a
/// `(c·27 × voxels)` row-major matrix.
fn im2col<T: Real>(x: &[T], c: usize, dims: [usize; 3], col: &mut [T]) {
    let [nx, ny, nz] = dims;
    let n = nx * ny * nz;
    for ci in 0..c {
        let src = &x[ci * n..(ci + 1) * n];
        for kz in 0..3 {
            for ky in 0..3 {
                for kx in 0..3 {
                    let row = ci * 27 + kz * 9 + ky * 3 + kx;
                    let dst = &mut col[row * n..(row + 1) * n];
                    let (dx, dy, dz) = (kx as isize - 1, ky as isize - 1, kz as isize - 1);
                    let x_lo = (-dx).max(0) as usize;
                    let x_hi = (nx as isize - dx).min(nx as isize) as usize;
                    for z in 0..nz {
                        let sz = z as isize + dz;
                        for y in 0..ny {
                            let sy = y as isize + dy;
                            let d = &mut dst[(z * ny + y) * nx..(z * ny + y + 1) * nx];
                            if sz < 0 || sz >= nz as isize || sy < 0 || sy >= ny as isize || x_lo >= x_hi {
                                d.fill(T::zero());
                                continue;
                            }
                            let s_off = ((sz as usize) * ny + sy as usize) * nx;
                            d[..x_lo].fill(T::zero());
                            d[x_hi..].fill(T::zero());
                            let s_lo = (x_lo as isize + dx) as usize;
                            d[x_lo..x_hi].copy_from_slice(&src[s_off + s_lo..s_off + s_lo + (x_hi - x_lo)]);
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-adds columns back onto the `(c × voxels)` block.
fn col2im<T: Real>(col: &[T], c: usize, dims: [usize; 3], x: &mut [T]) {
    let [nx, ny, nz] = dims;
    let n = nx * ny * nz;
    for ci in 0..c {
        let dst = &mut x[ci * n..(ci + 1) * n];
        for kz in 0..3 {
            for ky in 0..3 {
                for kx in 0..3 {
                    let row = ci * 27 + kz * 9 + ky * 3 + kx;
                    let src = &col[row * n..(row + 1) * n];
                    let (dx, dy, dz) = (kx as isize - 1, ky as isize - 1, kz as isize - 1);
                    let x_lo = (-dx).max(0) as usize;
                    let x_hi = (nx as isize - dx).min(nx as isize) as usize;
                    if x_lo >= x_hi {
                        continue;
                    }
                    for z in 0..nz {
                        let sz = z as isize + dz;
                        if sz < 0 || sz >= nz as isize {
                            continue;
                        }
                        for y in 0..ny {
                            let sy = y as isize + dy;
                            if sy < 0 || sy >= ny as isize {
                                continue;
                            }
                            let s = &src[(z * ny + y) * nx..(z * ny + y + 1) * nx];
                            let d_off = ((sz as usize) * ny + sy as usize) * nx;
                            let s_lo = (x_lo as isize + dx) as usize;
                            let d = &mut dst[d_off + s_lo..d_off + s_lo + (x_hi - x_lo)];
                            for (dv, &sv) in d.iter_mut().zip(&s[x_lo..x_hi]) {
                                *dv += sv;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn conv_forward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let [bn, cin, nx, ny, nz] = x.shape();
    let ws = w.shape();
    let (cout, k) = (ws[0], ws[2]);
    let n = nx * ny * nz;
    let kk = cin * k * k * k;
    let mut out = Tensor::zeros([bn, cout, nx, ny, nz]);
    let mut col = if k == 3 { vec![T::zero(); kk * n] } else { Vec::new() };
    for bi in 0..bn {
        let xb = x.item(bi);
        let ob = out.item_mut(bi);
        for (co, row) in ob.chunks_mut(n).enumerate() {
            row.fill(b.data()[co]);
        }
        let a: &[T] = if k == 3 {
            im2col(xb, cin, [nx, ny, nz], &mut col);
            &col
        } else {
            xb
        };
        T::gemm(cout, kk, n, T::one(), w.data(), kk as isize, 1, a, n as isize, 1, T::one(), ob, n as isize, 1);
    }
    out
}

fn conv_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    g: &Tensor<T>,
    k: usize,
    want_dx: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let [bn, cin, nx, ny, nz] = x.shape();
    let cout = w.shape()[0];
    let n = nx * ny * nz;
    let kk = cin * k * k * k;
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros([cout, 1, 1, 1, 1]);
    let mut dx = want_dx.then(|| Tensor::zeros(x.shape()));
    let mut col = if k == 3 { vec![T::zero(); kk * n] } else { Vec::new() };
    let mut dcol = if k == 3 && want_dx { vec![T::zero(); kk * n] } else { Vec::new() };
    for bi in 0..bn {
        let gb = g.item(bi);
        for (co, row) in gb.chunks(n).enumerate() {
            db.data_mut()[co] += row.iter().copied().sum::<T>();
        }
        let a: &[T] = if k == 3 {
            im2col(x.item(bi), cin, [nx, ny, nz], &mut col);
            &col
        } else {
            x.item(bi)
        };
        // dW += G_b · A_bᵀ
        T::gemm(cout, n, kk, T::one(), gb, n as isize, 1, a, 1, n as isize, T::one(), dw.data_mut(), kk as isize, 1);
        if let Some(dx) = dx.as_mut() {
            if k == 3 {
                // dA = Wᵀ · G_b
                T::gemm(kk, cout, n, T::one(), w.data(), 1, kk as isize, gb, n as isize, 1, T::zero(), &mut dcol, n as isize, 1);
                col2im(&dcol, cin, [nx, ny, nz], dx.item_mut(bi));
            } else {
                T::gemm(kk, cout, n, T::one(), w.data(), 1, kk as isize, gb, n as isize, 1, T::zero(), dx.item_mut(bi), n as isize, 1);
            }
        }
    }
    (dx, dw, db)
}

/// Linear interpolation taps for upsampling an axis of length `n` by `f`.
fn taps(n: usize, f: usize) -> Vec<(usize, usize, f64)> {
    (0..n * f)
        .map(|o| {
            let c = ((o as f64 + 0.5) / f as f64 - 0.5).clamp(0.0, (n - 1) as f64);
            let i0 = c.floor() as usize;
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, c - i0 as f64)
        })
        .collect()
}

/// Applies 1-D taps along `axis` of every slab. `src` has shape `in_dims`.
fn interp_axis<T: Real>(src: &[T], slabs: usize, in_dims: [usize; 3], axis: usize, taps: &[(usize, usize, f64)]) -> (Vec<T>, [usize; 3]) {
    let mut out_dims = in_dims;
    out_dims[axis] = taps.len();
    let [ix, iy, iz] = in_dims;
    let [ox, oy, oz] = out_dims;
    let (in_n, out_n) = (ix * iy * iz, ox * oy * oz);
    let mut out = vec![T::zero(); slabs * out_n];
    for s in 0..slabs {
        let si = &src[s * in_n..(s + 1) * in_n];
        let so = &mut out[s * out_n..(s + 1) * out_n];
        for z in 0..oz {
            for y in 0..oy {
                for x in 0..ox {
                    let v = match axis {
                        0 => {
                            let (a, b, t) = taps[x];
                            let base = (z * iy + y) * ix;
                            lerp(si[base + a], si[base + b], t)
                        }
                        1 => {
                            let (a, b, t) = taps[y];
                            lerp(si[(z * iy + a) * ix + x], si[(z * iy + b) * ix + x], t)
                        }
                        _ => {
                            let (a, b, t) = taps[z];
                            lerp(si[(a * iy + y) * ix + x], si[(b * iy + y) * ix + x], t)
                        }
                    };
                    so[(z * oy + y) * ox + x] = v;
                }
            }
        }
    }
    (out, out_dims)
}

/// Transpose of [`interp_axis`].
fn interp_axis_t<T: Real>(g: &[T], slabs: usize, in_dims: [usize; 3], axis: usize, taps: &[(usize, usize, f64)]) -> Vec<T> {
    let mut out_dims = in_dims;
    out_dims[axis] = taps.len();
    let [ix, iy, iz] = in_dims;
    let [ox, oy, oz] = out_dims;
    let (in_n, out_n) = (ix * iy * iz, ox * oy * oz);
    let mut d = vec![T::zero(); slabs * in_n];
    for s in 0..slabs {
        let gs = &g[s * out_n..(s + 1) * out_n];
        let ds = &mut d[s * in_n..(s + 1) * in_n];
        for z in 0..oz {
            for y in 0..oy {
                for x in 0..ox {
                    let gv = gs[(z * oy + y) * ox + x];
                    let (ia, ib, t) = match axis {
                        0 => {
                            let (a, b, t) = taps[x];
                            let base = (z * iy + y) * ix;
                            (base + a, base + b, t)
                        }
                        1 => {
                            let (a, b, t) = taps[y];
                            ((z * iy + a) * ix + x, (z * iy + b) * ix + x, t)
                        }
                        _ => {
                            let (a, b, t) = taps[z];
                            ((a * iy + y) * ix + x, (b * iy + y) * ix + x, t)
                        }
                    };
                    let t = T::of(t);
                    ds[ia] += gv * (T::one() - t);
                    ds[ib] += gv * t;
                }
            }
        }
    }
    d
}

#[inline]
fn lerp<T: Real>(a: T, b: T, t: f64) -> T {
    let t = T::of(t);
    a * (T::one() - t) + b * t
}

fn upsample_forward<T: Real>(x: &Tensor<T>, f: usize) -> Tensor<T> {
    let [bn, c, nx, ny, nz] = x.shape();
    let slabs = bn * c;
    let (d1, s1) = interp_axis(x.data(), slabs, [nx, ny, nz], 0, &taps(nx, f));
    let (d2, s2) = interp_axis(&d1, slabs, s1, 1, &taps(ny, f));
    let (d3, s3) = interp_axis(&d2, slabs, s2, 2, &taps(nz, f));
    Tensor::from_vec([bn, c, s3[0], s3[1], s3[2]], d3).expect("upsample shape")
}

fn upsample_backward<T: Real>(g: &Tensor<T>, in_shape: [usize; 5], f: usize) -> Tensor<T> {
    let [bn, c, nx, ny, nz] = in_shape;
    let slabs = bn * c;
    let g2 = interp_axis_t(g.data(), slabs, [nx * f, ny * f, nz], 2, &taps(nz, f));
    let g1 = interp_axis_t(&g2, slabs, [nx * f, ny, nz], 1, &taps(ny, f));
    let g0 = interp_axis_t(&g1, slabs, [nx, ny, nz], 0, &taps(nx, f));
    Tensor::from_vec(in_shape, g0).expect("upsample grad shape")
}

/// Direct-loop convolution used to cross-check the unrolled path in tests.
#[cfg(test)]
pub(crate) fn conv_reference(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    let [bn, cin, nx, ny, nz] = x.shape();
    let ws = w.shape();
    let (cout, k) = (ws[0], ws[2]);
    let r = (k / 2) as isize;
    let mut out = Tensor::zeros([bn, cout, nx, ny, nz]);
    let n = nx * ny * nz;
    for bi in 0..bn {
        for co in 0..cout {
            for z in 0..nz {
                for y in 0..ny {
                    for xx in 0..nx {
                        let mut acc = b.data()[co];
                        for ci in 0..cin {
                            for kz in 0..k {
                                for ky in 0..k {
                                    for kx in 0..k {
                                        let sx = xx as isize + kx as isize - r;
                                        let sy = y as isize + ky as isize - r;
                                        let sz = z as isize + kz as isize - r;
                                        if sx < 0 || sy < 0 || sz < 0 || sx >= nx as isize || sy >= ny as isize || sz >= nz as isize {
                                            continue;
                                        }
                                        let xi = (bi * cin + ci) * n + (sz as usize * ny + sy as usize) * nx + sx as usize;
                                        let wi = (((co * cin + ci) * k + kz) * k + ky) * k + kx;
                                        acc += x.data()[xi] * w.data()[wi];
                                    }
                                }
                            }
                        }
                        out.data_mut()[(bi * cout + co) * n + (z * ny + y) * nx + xx] = acc;
                    }
                }
            }
        }
    }
    out
}
