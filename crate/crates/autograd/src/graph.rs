use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use crate::kernels::{self, ConvGeometry};
use crate::real::Real;
use crate::tensor::Tensor;

/// Pointwise nonlinearities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Unary {
    Sin,
    Sigmoid,
    Softplus,
    Tanh,
    Exp,
    Square,
    LeakyRelu(f64),
}

impl Unary {
    fn apply<R: Real>(self, x: R) -> R {
        match self {
            Unary::Sin => x.sin(),
            Unary::Sigmoid => sigmoid(x),
            Unary::Softplus => softplus(x),
            Unary::Tanh => x.tanh(),
            Unary::Exp => x.exp(),
            Unary::Square => x * x,
            Unary::LeakyRelu(slope) => {
                if x > R::zero() {
                    x
                } else {
                    x * crate::lit::<R>(slope)
                }
            }
        }
    }

    /// Derivative given the input `x` and output `y`.
    fn derivative<R: Real>(self, x: R, y: R) -> R {
        match self {
            Unary::Sin => x.cos(),
            Unary::Sigmoid => y * (R::one() - y),
            Unary::Softplus => sigmoid(x),
            Unary::Tanh => R::one() - y * y,
            Unary::Exp => y,
            Unary::Square => x + x,
            Unary::LeakyRelu(slope) => {
                if x > R::zero() {
                    R::one()
                } else {
                    crate::lit(slope)
                }
            }
        }
    }
}

fn sigmoid<R: Real>(x: R) -> R {
    if x >= R::zero() {
        R::one() / (R::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (R::one() + e)
    }
}

fn softplus<R: Real>(x: R) -> R {
    if x > R::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

enum Op<R> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    AddRow(usize, usize),
    MulRow(usize, usize),
    Scale(usize, R),
    AddScalar(usize),
    Linear { x: usize, w: usize, b: Option<usize> },
    MatMul(usize, usize),
    Unary(usize, Unary),
    Sum(usize),
    Mean(usize),
    Reshape(usize),
    SliceCols { x: usize, start: usize },
    SwapLast2(usize),
    FilmSin { pre: usize, gamma: usize, beta: usize },
    Conv2d { x: usize, w: usize, b: Option<usize>, geom: ConvGeometry },
    MeanSpatial(usize),
    AvgPool { x: usize, factor: usize },
    Blur { x: usize, taps: Rc<[R]>, mass: Rc<[R]> },
    Composite { rgb: usize, sigma: usize, deltas: Rc<[R]>, background: [R; 3], samples: usize },
    CameraFrame { poses: usize, radius: R },
    TransformPoints { frame: usize, dirs: Rc<Tensor<R>>, depths: Rc<[R]> },
    RotateDirs { frame: usize, dirs: Rc<Tensor<R>> },
}

struct Node<R> {
    value: Rc<Tensor<R>>,
    op: Op<R>,
    requires_grad: bool,
}

/// Operation tape. All [`Var`]s borrow the graph that created them.
pub struct Graph<R: Real> {
    nodes: RefCell<Vec<Node<R>>>,
}

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g, R: Real> {
    graph: &'g Graph<R>,
    id: usize,
}

impl<R: Real> fmt::Debug for Var<'_, R> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

/// Gradients of the leaves of a graph with respect to one scalar root.
pub struct Gradients<R> {
    grads: Vec<Option<Tensor<R>>>,
}

impl<R: Real> Gradients<R> {
    /// Gradient of `var`, or `None` when the root does not depend on it or
    /// it was created as a constant.
    pub fn get(&self, var: Var<'_, R>) -> Option<&Tensor<R>> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var<'_, R>) -> Option<Tensor<R>> {
        self.grads.get_mut(var.id).and_then(|g| g.take())
    }
}

impl<R: Real> Default for Graph<R> {
    fn default() -> Self {
        Graph::new()
    }
}

impl<R: Real> Graph<R> {
    pub fn new() -> Self {
        Graph { nodes: RefCell::new(Vec::new()) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Trainable leaf.
    pub fn param(&self, value: Tensor<R>) -> Var<'_, R> {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor<R>) -> Var<'_, R> {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&self, value: R) -> Var<'_, R> {
        self.constant(Tensor::scalar(value))
    }

    fn push(&self, value: Tensor<R>, op: Op<R>, requires_grad: bool) -> Var<'_, R> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value: Rc::new(value), op, requires_grad });
        Var { graph: self, id: nodes.len() - 1 }
    }

    fn derived(&self, value: Tensor<R>, op: Op<R>, parents: &[usize]) -> Var<'_, R> {
        let requires = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|&p| nodes[p].requires_grad)
        };
        self.push(value, op, requires)
    }

    fn value_of(&self, id: usize) -> Rc<Tensor<R>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    /// Reverse pass from `root`, seeded with ones.
    pub fn backward(&self, root: Var<'_, R>) -> Gradients<R> {
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor<R>>> = (0..nodes.len()).map(|_| None).collect();
        if !nodes[root.id].requires_grad {
            return Gradients { grads };
        }
        grads[root.id] = Some(Tensor::full(nodes[root.id].value.shape(), R::one()));
        for id in (0..=root.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            backward_op(&nodes, id, &g, &mut grads);
        }
        Gradients { grads }
    }
}

fn accumulate<R: Real>(grads: &mut [Option<Tensor<R>>], id: usize, t: Tensor<R>) {
    match &mut grads[id] {
        Some(existing) => existing.add_assign(&t),
        slot @ None => *slot = Some(t),
    }
}

fn col_sums<R: Real>(data: &[R], cols: usize) -> Vec<R> {
    let mut out = vec![R::zero(); cols];
    for row in data.chunks_exact(cols) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    out
}

fn frame_derivatives<R: Real>(pitch: R, yaw: R, radius: R) -> ([R; 12], [R; 12]) {
    let (st, ct) = pitch.sin_cos();
    let (sp, cp) = yaw.sin_cos();
    let z = R::zero();
    // Columns: right, up, forward; then origin.
    let d_pitch = [
        z,
        st * cp,
        -ct * cp,
        z,
        st * sp,
        -ct * sp,
        z,
        ct,
        st,
        radius * ct * cp,
        radius * ct * sp,
        -radius * st,
    ];
    let d_yaw = [
        -cp,
        ct * sp,
        st * sp,
        -sp,
        -ct * cp,
        -st * cp,
        z,
        z,
        z,
        -radius * st * sp,
        radius * st * cp,
        z,
    ];
    (d_pitch, d_yaw)
}

/// Look-at frame for a camera on a sphere with world-up +z.
///
/// Layout: row-major 3×3 rotation whose columns are (right, up, forward),
/// followed by the camera origin.
pub(crate) fn camera_frame_values<R: Real>(pitch: R, yaw: R, radius: R) -> [R; 12] {
    let (st, ct) = pitch.sin_cos();
    let (sp, cp) = yaw.sin_cos();
    let z = R::zero();
    [
        -sp,
        -ct * cp,
        -st * cp,
        cp,
        -ct * sp,
        -st * sp,
        z,
        st,
        -ct,
        radius * st * cp,
        radius * st * sp,
        radius * ct,
    ]
}

fn backward_op<R: Real>(nodes: &[Node<R>], id: usize, g: &Tensor<R>, grads: &mut [Option<Tensor<R>>]) {
    let needs = |p: usize| nodes[p].requires_grad;
    let val = |p: usize| &*nodes[p].value;
    let out = &*nodes[id].value;
    match &nodes[id].op {
        Op::Leaf => {}
        &Op::Add(a, b) => {
            if needs(a) {
                accumulate(grads, a, g.clone());
            }
            if needs(b) {
                accumulate(grads, b, g.clone());
            }
        }
        &Op::Sub(a, b) => {
            if needs(a) {
                accumulate(grads, a, g.clone());
            }
            if needs(b) {
                accumulate(grads, b, g.map(|v| -v));
            }
        }
        &Op::Mul(a, b) => {
            if needs(a) {
                let d = g.data().iter().zip(val(b).data()).map(|(&g, &y)| g * y).collect();
                accumulate(grads, a, Tensor::new(val(a).shape(), d));
            }
            if needs(b) {
                let d = g.data().iter().zip(val(a).data()).map(|(&g, &x)| g * x).collect();
                accumulate(grads, b, Tensor::new(val(b).shape(), d));
            }
        }
        &Op::Div(a, b) => {
            let bv = val(b).data();
            if needs(a) {
                let d = g.data().iter().zip(bv).map(|(&g, &y)| g / y).collect();
                accumulate(grads, a, Tensor::new(val(a).shape(), d));
            }
            if needs(b) {
                let d = g
                    .data()
                    .iter()
                    .zip(bv)
                    .zip(out.data())
                    .map(|((&g, &y), &q)| -g * q / y)
                    .collect();
                accumulate(grads, b, Tensor::new(val(b).shape(), d));
            }
        }
        &Op::AddRow(a, row) => {
            if needs(a) {
                accumulate(grads, a, g.clone().reshaped(val(a).shape()));
            }
            if needs(row) {
                let cols = val(row).len();
                accumulate(grads, row, Tensor::new(val(row).shape(), col_sums(g.data(), cols)));
            }
        }
        &Op::MulRow(a, row) => {
            let r = val(row).data();
            let cols = r.len();
            if needs(a) {
                let d = g
                    .data()
                    .chunks_exact(cols)
                    .flat_map(|gr| gr.iter().zip(r).map(|(&g, &w)| g * w))
                    .collect();
                accumulate(grads, a, Tensor::new(val(a).shape(), d));
            }
            if needs(row) {
                let prod: Vec<R> =
                    g.data().iter().zip(val(a).data()).map(|(&g, &x)| g * x).collect();
                accumulate(grads, row, Tensor::new(val(row).shape(), col_sums(&prod, cols)));
            }
        }
        &Op::Scale(a, c) => {
            if needs(a) {
                accumulate(grads, a, g.map(|v| v * c).reshaped(val(a).shape()));
            }
        }
        &Op::AddScalar(a) => {
            if needs(a) {
                accumulate(grads, a, g.clone());
            }
        }
        &Op::Linear { x, w, b } => {
            let xv = val(x);
            let wv = val(w);
            let (fan_in, fan_out) = (wv.shape()[0], wv.shape()[1]);
            let rows = xv.len() / fan_in;
            if needs(x) {
                let mut gx = vec![R::zero(); rows * fan_in];
                kernels::gemm(false, true, rows, fan_in, fan_out, R::one(), g.data(), wv.data(), R::zero(), &mut gx);
                accumulate(grads, x, Tensor::new(xv.shape(), gx));
            }
            if needs(w) {
                let mut gw = vec![R::zero(); fan_in * fan_out];
                kernels::gemm(true, false, fan_in, fan_out, rows, R::one(), xv.data(), g.data(), R::zero(), &mut gw);
                accumulate(grads, w, Tensor::new(wv.shape(), gw));
            }
            if let Some(b) = b {
                if needs(b) {
                    accumulate(grads, b, Tensor::new(val(b).shape(), col_sums(g.data(), fan_out)));
                }
            }
        }
        &Op::MatMul(a, b) => {
            let (av, bv) = (val(a), val(b));
            let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
            if needs(a) {
                let mut ga = vec![R::zero(); m * k];
                kernels::gemm(false, true, m, k, n, R::one(), g.data(), bv.data(), R::zero(), &mut ga);
                accumulate(grads, a, Tensor::new(av.shape(), ga));
            }
            if needs(b) {
                let mut gb = vec![R::zero(); k * n];
                kernels::gemm(true, false, k, n, m, R::one(), av.data(), g.data(), R::zero(), &mut gb);
                accumulate(grads, b, Tensor::new(bv.shape(), gb));
            }
        }
        &Op::Unary(a, kind) => {
            if needs(a) {
                let d = g
                    .data()
                    .iter()
                    .zip(val(a).data())
                    .zip(out.data())
                    .map(|((&g, &x), &y)| g * kind.derivative(x, y))
                    .collect();
                accumulate(grads, a, Tensor::new(val(a).shape(), d));
            }
        }
        &Op::Sum(a) => {
            if needs(a) {
                accumulate(grads, a, Tensor::full(val(a).shape(), g.item()));
            }
        }
        &Op::Mean(a) => {
            if needs(a) {
                let n = R::from_usize(val(a).len()).unwrap();
                accumulate(grads, a, Tensor::full(val(a).shape(), g.item() / n));
            }
        }
        &Op::Reshape(a) => {
            if needs(a) {
                accumulate(grads, a, g.clone().reshaped(val(a).shape()));
            }
        }
        &Op::SliceCols { x, start } => {
            if needs(x) {
                let cols = val(x).cols();
                let width = out.cols();
                let mut gx = vec![R::zero(); val(x).len()];
                for (dst, src) in gx.chunks_exact_mut(cols).zip(g.data().chunks_exact(width)) {
                    dst[start..start + width].copy_from_slice(src);
                }
                accumulate(grads, x, Tensor::new(val(x).shape(), gx));
            }
        }
        &Op::SwapLast2(a) => {
            if needs(a) {
                let s = val(a).shape();
                let (b, m, n) = (s[0], s[1], s[2]);
                // out is [b, n, m]; transpose the gradient back to [b, m, n].
                let mut ga = vec![R::zero(); b * m * n];
                for bi in 0..b {
                    for i in 0..n {
                        for j in 0..m {
                            ga[(bi * m + j) * n + i] = g.data()[(bi * n + i) * m + j];
                        }
                    }
                }
                accumulate(grads, a, Tensor::new(s, ga));
            }
        }
        &Op::FilmSin { pre, gamma, beta } => {
            let (pv, gv, bv) = (val(pre), val(gamma), val(beta));
            let width = gv.cols();
            let groups = gv.rows();
            let per_group = pv.rows() / groups;
            let mut gpre = needs(pre).then(|| vec![R::zero(); pv.len()]);
            let mut ggamma = vec![R::zero(); gv.len()];
            let mut gbeta = vec![R::zero(); bv.len()];
            for grp in 0..groups {
                let gam = &gv.data()[grp * width..(grp + 1) * width];
                let bet = &bv.data()[grp * width..(grp + 1) * width];
                let gg = &mut ggamma[grp * width..(grp + 1) * width];
                let gb = &mut gbeta[grp * width..(grp + 1) * width];
                for r in grp * per_group..(grp + 1) * per_group {
                    let span = r * width..(r + 1) * width;
                    let prow = &pv.data()[span.clone()];
                    let grow = &g.data()[span.clone()];
                    for c in 0..width {
                        let du = grow[c] * (gam[c] * prow[c] + bet[c]).cos();
                        gg[c] += du * prow[c];
                        gb[c] += du;
                        if let Some(gp) = gpre.as_mut() {
                            gp[r * width + c] = du * gam[c];
                        }
                    }
                }
            }
            if let Some(gp) = gpre {
                accumulate(grads, pre, Tensor::new(pv.shape(), gp));
            }
            if needs(gamma) {
                accumulate(grads, gamma, Tensor::new(gv.shape(), ggamma));
            }
            if needs(beta) {
                accumulate(grads, beta, Tensor::new(bv.shape(), gbeta));
            }
        }
        &Op::Conv2d { x, w, b, geom } => {
            let (xv, wv) = (val(x), val(w));
            let batch = xv.shape()[0];
            let out_ch = wv.shape()[0];
            let spatial = geom.out_height() * geom.out_width();
            let patch = geom.patch_len();
            let in_len = geom.channels * geom.height * geom.width;
            let mut cols = vec![R::zero(); patch * spatial];
            let mut gcols = vec![R::zero(); patch * spatial];
            let mut gx = needs(x).then(|| vec![R::zero(); xv.len()]);
            let mut gw = needs(w).then(|| vec![R::zero(); wv.len()]);
            for bi in 0..batch {
                let gout = &g.data()[bi * out_ch * spatial..(bi + 1) * out_ch * spatial];
                if let Some(gw) = gw.as_mut() {
                    kernels::im2col(&geom, &xv.data()[bi * in_len..(bi + 1) * in_len], &mut cols);
                    kernels::gemm(false, true, out_ch, patch, spatial, R::one(), gout, &cols, R::one(), gw);
                }
                if let Some(gx) = gx.as_mut() {
                    kernels::gemm(true, false, patch, spatial, out_ch, R::one(), wv.data(), gout, R::zero(), &mut gcols);
                    kernels::col2im(&geom, &gcols, &mut gx[bi * in_len..(bi + 1) * in_len]);
                }
            }
            if let Some(gx) = gx {
                accumulate(grads, x, Tensor::new(xv.shape(), gx));
            }
            if let Some(gw) = gw {
                accumulate(grads, w, Tensor::new(wv.shape(), gw));
            }
            if let Some(b) = b {
                if needs(b) {
                    let mut gb = vec![R::zero(); out_ch];
                    for (i, chunk) in g.data().chunks_exact(spatial).enumerate() {
                        gb[i % out_ch] += chunk.iter().copied().sum::<R>();
                    }
                    accumulate(grads, b, Tensor::new(val(b).shape(), gb));
                }
            }
        }
        &Op::MeanSpatial(a) => {
            if needs(a) {
                let s = val(a).shape();
                let spatial = s[2] * s[3];
                let n = R::from_usize(spatial).unwrap();
                let d = g
                    .data()
                    .iter()
                    .flat_map(|&v| std::iter::repeat_n(v / n, spatial))
                    .collect();
                accumulate(grads, a, Tensor::new(s, d));
            }
        }
        &Op::AvgPool { x, factor } => {
            if needs(x) {
                let s = val(x).shape();
                let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
                let (ho, wo) = (h / factor, w / factor);
                let scale = R::one() / R::from_usize(factor * factor).unwrap();
                let mut gx = vec![R::zero(); val(x).len()];
                for p in 0..planes {
                    for y in 0..h {
                        for xx in 0..w {
                            gx[(p * h + y) * w + xx] =
                                g.data()[(p * ho + y / factor) * wo + xx / factor] * scale;
                        }
                    }
                }
                accumulate(grads, x, Tensor::new(s, gx));
            }
        }
        Op::Blur { x, taps, mass } => {
            let x = *x;
            if needs(x) {
                let s = val(x).shape();
                let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
                let scaled: Vec<R> = g
                    .data()
                    .chunks_exact(h * w)
                    .flat_map(|plane| plane.iter().zip(mass.iter()).map(|(&v, &m)| v / m))
                    .collect();
                let mut gx = vec![R::zero(); scaled.len()];
                kernels::separable_filter(taps, &scaled, h, w, &mut gx);
                accumulate(grads, x, Tensor::new(s, gx));
            }
        }
        Op::Composite { rgb, sigma, deltas, background, samples } => {
            let (rgb, sigma, n) = (*rgb, *sigma, *samples);
            let (cv, sv) = (val(rgb).data(), val(sigma).data());
            let rays = sv.len() / n;
            let mut gc = needs(rgb).then(|| vec![R::zero(); cv.len()]);
            let mut gs = needs(sigma).then(|| vec![R::zero(); sv.len()]);
            let mut trans = vec![R::zero(); n + 1];
            let mut weights = vec![R::zero(); n];
            for r in 0..rays {
                let base = r * n;
                trans[0] = R::one();
                for i in 0..n {
                    let decay = (-sv[base + i] * deltas[base + i]).exp();
                    weights[i] = trans[i] * (R::one() - decay);
                    trans[i + 1] = trans[i] * decay;
                }
                let gp = &g.data()[r * 3..r * 3 + 3];
                let mut rest = [
                    trans[n] * background[0],
                    trans[n] * background[1],
                    trans[n] * background[2],
                ];
                for k in (0..n).rev() {
                    let c = &cv[(base + k) * 3..(base + k) * 3 + 3];
                    if let Some(gs) = gs.as_mut() {
                        let mut acc = R::zero();
                        for ch in 0..3 {
                            acc += gp[ch] * (trans[k + 1] * c[ch] - rest[ch]);
                        }
                        gs[base + k] = deltas[base + k] * acc;
                    }
                    if let Some(gc) = gc.as_mut() {
                        for ch in 0..3 {
                            gc[(base + k) * 3 + ch] = weights[k] * gp[ch];
                        }
                    }
                    for ch in 0..3 {
                        rest[ch] += weights[k] * c[ch];
                    }
                }
            }
            if let Some(gc) = gc {
                accumulate(grads, rgb, Tensor::new(val(rgb).shape(), gc));
            }
            if let Some(gs) = gs {
                accumulate(grads, sigma, Tensor::new(val(sigma).shape(), gs));
            }
        }
        &Op::CameraFrame { poses, radius } => {
            if needs(poses) {
                let pv = val(poses).data();
                let mut gp = vec![R::zero(); pv.len()];
                for b in 0..pv.len() / 2 {
                    let (dp, dy) = frame_derivatives(pv[2 * b], pv[2 * b + 1], radius);
                    let gf = &g.data()[b * 12..(b + 1) * 12];
                    gp[2 * b] = gf.iter().zip(&dp).map(|(&a, &d)| a * d).sum();
                    gp[2 * b + 1] = gf.iter().zip(&dy).map(|(&a, &d)| a * d).sum();
                }
                accumulate(grads, poses, Tensor::new(val(poses).shape(), gp));
            }
        }
        Op::TransformPoints { frame, dirs, depths } => {
            let frame = *frame;
            if needs(frame) {
                let per_batch = dirs.rows();
                let batch = val(frame).rows();
                let mut gf = vec![R::zero(); batch * 12];
                for b in 0..batch {
                    let acc = &mut gf[b * 12..(b + 1) * 12];
                    for p in 0..per_batch {
                        let row = b * per_batch + p;
                        let t = depths[row];
                        let d = &dirs.data()[p * 3..p * 3 + 3];
                        let go = &g.data()[row * 3..row * 3 + 3];
                        for i in 0..3 {
                            for j in 0..3 {
                                acc[i * 3 + j] += go[i] * t * d[j];
                            }
                            acc[9 + i] += go[i];
                        }
                    }
                }
                accumulate(grads, frame, Tensor::new(val(frame).shape(), gf));
            }
        }
        Op::RotateDirs { frame, dirs } => {
            let frame = *frame;
            if needs(frame) {
                let per_batch = dirs.rows();
                let batch = val(frame).rows();
                let mut gf = vec![R::zero(); batch * 12];
                for b in 0..batch {
                    let acc = &mut gf[b * 12..(b + 1) * 12];
                    for p in 0..per_batch {
                        let row = b * per_batch + p;
                        let d = &dirs.data()[p * 3..p * 3 + 3];
                        let go = &g.data()[row * 3..row * 3 + 3];
                        for i in 0..3 {
                            for j in 0..3 {
                                acc[i * 3 + j] += go[i] * d[j];
                            }
                        }
                    }
                }
                accumulate(grads, frame, Tensor::new(val(frame).shape(), gf));
            }
        }
    }
}

impl<'g, R: Real> Var<'g, R> {
    pub fn graph(&self) -> &'g Graph<R> {
        self.graph
    }

    pub fn value(&self) -> Rc<Tensor<R>> {
        self.graph.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.nodes.borrow()[self.id].requires_grad
    }

    /// Scalar value of a one-element result.
    pub fn item(&self) -> R {
        self.value().item()
    }

    fn same_shape(&self, other: &Var<'g, R>, op: &str) -> (Rc<Tensor<R>>, Rc<Tensor<R>>) {
        let (a, b) = (self.value(), other.value());
        assert_eq!(a.shape(), b.shape(), "{op}: shape mismatch");
        (a, b)
    }

    fn binary(self, other: Var<'g, R>, name: &str, f: impl Fn(R, R) -> R, op: Op<R>) -> Var<'g, R> {
        let (a, b) = self.same_shape(&other, name);
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        self.graph.derived(Tensor::new(a.shape(), data), op, &[self.id, other.id])
    }

    pub fn add(self, other: Var<'g, R>) -> Var<'g, R> {
        self.binary(other, "add", |x, y| x + y, Op::Add(self.id, other.id))
    }

    pub fn sub(self, other: Var<'g, R>) -> Var<'g, R> {
        self.binary(other, "sub", |x, y| x - y, Op::Sub(self.id, other.id))
    }

    pub fn mul(self, other: Var<'g, R>) -> Var<'g, R> {
        self.binary(other, "mul", |x, y| x * y, Op::Mul(self.id, other.id))
    }

    pub fn div(self, other: Var<'g, R>) -> Var<'g, R> {
        self.binary(other, "div", |x, y| x / y, Op::Div(self.id, other.id))
    }

    /// Adds a row vector to every row of a matrix.
    pub fn add_row(self, row: Var<'g, R>) -> Var<'g, R> {
        let (a, r) = (self.value(), row.value());
        assert_eq!(a.cols(), r.len(), "add_row: width mismatch");
        let data = a
            .data()
            .chunks_exact(r.len())
            .flat_map(|ar| ar.iter().zip(r.data()).map(|(&x, &y)| x + y))
            .collect();
        self.graph.derived(Tensor::new(a.shape(), data), Op::AddRow(self.id, row.id), &[self.id, row.id])
    }

    /// Multiplies every row of a matrix elementwise by a row vector.
    pub fn mul_row(self, row: Var<'g, R>) -> Var<'g, R> {
        let (a, r) = (self.value(), row.value());
        assert_eq!(a.cols(), r.len(), "mul_row: width mismatch");
        let data = a
            .data()
            .chunks_exact(r.len())
            .flat_map(|ar| ar.iter().zip(r.data()).map(|(&x, &y)| x * y))
            .collect();
        self.graph.derived(Tensor::new(a.shape(), data), Op::MulRow(self.id, row.id), &[self.id, row.id])
    }

    pub fn scale(self, c: R) -> Var<'g, R> {
        let a = self.value();
        self.graph.derived(a.map(|x| x * c), Op::Scale(self.id, c), &[self.id])
    }

    pub fn add_scalar(self, c: R) -> Var<'g, R> {
        let a = self.value();
        self.graph.derived(a.map(|x| x + c), Op::AddScalar(self.id), &[self.id])
    }

    /// `x · W + b` with `W` stored as `[fan_in, fan_out]`; `x` may have any
    /// leading shape whose last axis is `fan_in`.
    pub fn linear(self, w: Var<'g, R>, b: Option<Var<'g, R>>) -> Var<'g, R> {
        let (xv, wv) = (self.value(), w.value());
        let (fan_in, fan_out) = (wv.shape()[0], wv.shape()[1]);
        assert_eq!(xv.cols(), fan_in, "linear: input width {} vs weight {fan_in}", xv.cols());
        let rows = xv.len() / fan_in;
        let mut out = vec![R::zero(); rows * fan_out];
        if let Some(b) = b {
            let bv = b.value();
            assert_eq!(bv.len(), fan_out, "linear: bias width");
            for row in out.chunks_exact_mut(fan_out) {
                row.copy_from_slice(bv.data());
            }
        }
        let beta = if b.is_some() { R::one() } else { R::zero() };
        kernels::gemm(false, false, rows, fan_out, fan_in, R::one(), xv.data(), wv.data(), beta, &mut out);
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = fan_out;
        let mut parents = vec![self.id, w.id];
        parents.extend(b.map(|b| b.id));
        self.graph.derived(
            Tensor::new(&shape, out),
            Op::Linear { x: self.id, w: w.id, b: b.map(|b| b.id) },
            &parents,
        )
    }

    pub fn matmul(self, other: Var<'g, R>) -> Var<'g, R> {
        let (a, b) = (self.value(), other.value());
        assert_eq!(a.shape().len(), 2, "matmul: lhs must be 2-D");
        assert_eq!(b.shape().len(), 2, "matmul: rhs must be 2-D");
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        assert_eq!(b.shape()[0], k, "matmul: inner dimension");
        let mut out = vec![R::zero(); m * n];
        kernels::gemm(false, false, m, n, k, R::one(), a.data(), b.data(), R::zero(), &mut out);
        self.graph.derived(Tensor::new(&[m, n], out), Op::MatMul(self.id, other.id), &[self.id, other.id])
    }

    pub fn unary(self, kind: Unary) -> Var<'g, R> {
        let a = self.value();
        self.graph.derived(a.map(|x| kind.apply(x)), Op::Unary(self.id, kind), &[self.id])
    }

    pub fn sin(self) -> Var<'g, R> {
        self.unary(Unary::Sin)
    }

    pub fn sigmoid(self) -> Var<'g, R> {
        self.unary(Unary::Sigmoid)
    }

    pub fn softplus(self) -> Var<'g, R> {
        self.unary(Unary::Softplus)
    }

    pub fn tanh(self) -> Var<'g, R> {
        self.unary(Unary::Tanh)
    }

    pub fn exp(self) -> Var<'g, R> {
        self.unary(Unary::Exp)
    }

    pub fn square(self) -> Var<'g, R> {
        self.unary(Unary::Square)
    }

    pub fn leaky_relu(self, slope: f64) -> Var<'g, R> {
        self.unary(Unary::LeakyRelu(slope))
    }

    pub fn sum(self) -> Var<'g, R> {
        let s = self.value().data().iter().copied().sum();
        self.graph.derived(Tensor::scalar(s), Op::Sum(self.id), &[self.id])
    }

    pub fn mean(self) -> Var<'g, R> {
        let a = self.value();
        let s: R = a.data().iter().copied().sum();
        let m = s / R::from_usize(a.len()).unwrap();
        self.graph.derived(Tensor::scalar(m), Op::Mean(self.id), &[self.id])
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'g, R> {
        let a = (*self.value()).clone().reshaped(shape);
        self.graph.derived(a, Op::Reshape(self.id), &[self.id])
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(self, start: usize, end: usize) -> Var<'g, R> {
        let a = self.value();
        let cols = a.cols();
        assert!(start < end && end <= cols, "slice_cols: {start}..{end} out of {cols}");
        let data = a.data().chunks_exact(cols).flat_map(|r| r[start..end].iter().copied()).collect();
        self.graph.derived(
            Tensor::new(&[a.rows(), end - start], data),
            Op::SliceCols { x: self.id, start },
            &[self.id],
        )
    }

    /// `[B, M, N] -> [B, N, M]`.
    pub fn swap_last2(self) -> Var<'g, R> {
        let a = self.value();
        let s = a.shape();
        assert_eq!(s.len(), 3, "swap_last2 expects a 3-D tensor");
        let (b, m, n) = (s[0], s[1], s[2]);
        let mut out = vec![R::zero(); a.len()];
        for bi in 0..b {
            for j in 0..m {
                for i in 0..n {
                    out[(bi * n + i) * m + j] = a.data()[(bi * m + j) * n + i];
                }
            }
        }
        self.graph.derived(Tensor::new(&[b, n, m], out), Op::SwapLast2(self.id), &[self.id])
    }

    /// FiLM-modulated sine: `sin(gamma[g] ⊙ pre + beta[g])` where row `r` of
    /// `pre` belongs to group `g = r / (rows / groups)`.
    pub fn film_sin(self, gamma: Var<'g, R>, beta: Var<'g, R>) -> Var<'g, R> {
        let (pv, gv, bv) = (self.value(), gamma.value(), beta.value());
        assert_eq!(gv.shape(), bv.shape(), "film_sin: gamma/beta shape");
        let width = gv.cols();
        assert_eq!(pv.cols(), width, "film_sin: width mismatch");
        let groups = gv.rows();
        assert_eq!(pv.rows() % groups, 0, "film_sin: rows not divisible by groups");
        let per_group = pv.rows() / groups;
        let mut out = vec![R::zero(); pv.len()];
        for (r, (orow, prow)) in out.chunks_exact_mut(width).zip(pv.data().chunks_exact(width)).enumerate() {
            let grp = r / per_group;
            let gam = &gv.data()[grp * width..(grp + 1) * width];
            let bet = &bv.data()[grp * width..(grp + 1) * width];
            for c in 0..width {
                orow[c] = (gam[c] * prow[c] + bet[c]).sin();
            }
        }
        self.graph.derived(
            Tensor::new(pv.shape(), out),
            Op::FilmSin { pre: self.id, gamma: gamma.id, beta: beta.id },
            &[self.id, gamma.id, beta.id],
        )
    }

    /// 2-D convolution on `[B, C, H, W]` with weights `[O, C, k, k]`.
    pub fn conv2d(self, w: Var<'g, R>, b: Option<Var<'g, R>>, stride: usize, pad: usize) -> Var<'g, R> {
        let (xv, wv) = (self.value(), w.value());
        let (xs, ws) = (xv.shape(), wv.shape());
        assert_eq!(xs.len(), 4, "conv2d: input must be [B, C, H, W]");
        assert_eq!(ws.len(), 4, "conv2d: weight must be [O, C, k, k]");
        assert_eq!(xs[1], ws[1], "conv2d: channel mismatch");
        let geom = ConvGeometry { channels: xs[1], height: xs[2], width: xs[3], kernel: ws[2], stride, pad };
        let (batch, out_ch) = (xs[0], ws[0]);
        let (ho, wo) = (geom.out_height(), geom.out_width());
        let spatial = ho * wo;
        let patch = geom.patch_len();
        let in_len = xs[1] * xs[2] * xs[3];
        let mut cols = vec![R::zero(); patch * spatial];
        let mut out = vec![R::zero(); batch * out_ch * spatial];
        for bi in 0..batch {
            kernels::im2col(&geom, &xv.data()[bi * in_len..(bi + 1) * in_len], &mut cols);
            let dst = &mut out[bi * out_ch * spatial..(bi + 1) * out_ch * spatial];
            if let Some(b) = b {
                for (o, &bias) in b.value().data().iter().enumerate() {
                    dst[o * spatial..(o + 1) * spatial].fill(bias);
                }
            }
            let beta = if b.is_some() { R::one() } else { R::zero() };
            kernels::gemm(false, false, out_ch, spatial, patch, R::one(), wv.data(), &cols, beta, dst);
        }
        let mut parents = vec![self.id, w.id];
        parents.extend(b.map(|b| b.id));
        self.graph.derived(
            Tensor::new(&[batch, out_ch, ho, wo], out),
            Op::Conv2d { x: self.id, w: w.id, b: b.map(|b| b.id), geom },
            &parents,
        )
    }

    /// `[B, C, H, W] -> [B, C]` spatial average.
    pub fn mean_spatial(self) -> Var<'g, R> {
        let a = self.value();
        let s = a.shape();
        assert_eq!(s.len(), 4, "mean_spatial expects [B, C, H, W]");
        let spatial = s[2] * s[3];
        let n = R::from_usize(spatial).unwrap();
        let data = a.data().chunks_exact(spatial).map(|c| c.iter().copied().sum::<R>() / n).collect();
        self.graph.derived(Tensor::new(&[s[0], s[1]], data), Op::MeanSpatial(self.id), &[self.id])
    }

    /// Non-overlapping `factor×factor` average pooling of `[B, C, H, W]`.
    pub fn avg_pool(self, factor: usize) -> Var<'g, R> {
        if factor == 1 {
            return self;
        }
        let a = self.value();
        let s = a.shape();
        assert_eq!(s.len(), 4, "avg_pool expects [B, C, H, W]");
        let (h, w) = (s[2], s[3]);
        assert!(h % factor == 0 && w % factor == 0, "avg_pool: {h}x{w} not divisible by {factor}");
        let (ho, wo) = (h / factor, w / factor);
        let scale = R::one() / R::from_usize(factor * factor).unwrap();
        let mut out = vec![R::zero(); s[0] * s[1] * ho * wo];
        for p in 0..s[0] * s[1] {
            for y in 0..h {
                for x in 0..w {
                    out[(p * ho + y / factor) * wo + x / factor] += a.data()[(p * h + y) * w + x] * scale;
                }
            }
        }
        self.graph.derived(
            Tensor::new(&[s[0], s[1], ho, wo], out),
            Op::AvgPool { x: self.id, factor },
            &[self.id],
        )
    }

    /// Separable "same"-size filtering over the last two axes with the window
    /// renormalized to the in-frame mass at the borders.
    pub fn blur(self, taps: Rc<[R]>) -> Var<'g, R> {
        let a = self.value();
        let s = a.shape();
        assert!(s.len() >= 2, "blur expects [..., H, W]");
        let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
        let mass: Rc<[R]> = kernels::window_mass(&taps, h, w).into();
        let mut out = vec![R::zero(); a.len()];
        kernels::separable_filter(&taps, a.data(), h, w, &mut out);
        for plane in out.chunks_exact_mut(h * w) {
            for (v, &m) in plane.iter_mut().zip(mass.iter()) {
                *v /= m;
            }
        }
        self.graph.derived(Tensor::new(s, out), Op::Blur { x: self.id, taps, mass }, &[self.id])
    }

    /// Alpha-compositing along rays. `self` holds per-sample colors
    /// `[rays·samples, 3]`, `sigma` the matching densities and `deltas` the
    /// interval lengths. Returns `[rays, 3]`.
    pub fn composite(self, sigma: Var<'g, R>, deltas: Rc<[R]>, background: [R; 3], samples: usize) -> Var<'g, R> {
        let (cv, sv) = (self.value(), sigma.value());
        assert_eq!(cv.cols(), 3, "composite: colors must be [N, 3]");
        assert_eq!(cv.rows(), sv.len(), "composite: color/density count");
        assert_eq!(deltas.len(), sv.len(), "composite: interval count");
        assert_eq!(sv.len() % samples, 0, "composite: samples do not divide count");
        let rays = sv.len() / samples;
        let mut out = vec![R::zero(); rays * 3];
        for r in 0..rays {
            let mut trans = R::one();
            let px = &mut out[r * 3..r * 3 + 3];
            for i in r * samples..(r + 1) * samples {
                let decay = (-sv.data()[i] * deltas[i]).exp();
                let w = trans * (R::one() - decay);
                for ch in 0..3 {
                    px[ch] += w * cv.data()[i * 3 + ch];
                }
                trans *= decay;
            }
            for ch in 0..3 {
                px[ch] += trans * background[ch];
            }
        }
        self.graph.derived(
            Tensor::new(&[rays, 3], out),
            Op::Composite { rgb: self.id, sigma: sigma.id, deltas, background, samples },
            &[self.id, sigma.id],
        )
    }

    /// Maps `[B, 2]` (pitch, yaw) poses to `[B, 12]` camera frames on a
    /// sphere of the given radius.
    pub fn camera_frame(self, radius: R) -> Var<'g, R> {
        let p = self.value();
        assert_eq!(p.cols(), 2, "camera_frame expects [B, 2] poses");
        let data = p
            .data()
            .chunks_exact(2)
            .flat_map(|pose| camera_frame_values(pose[0], pose[1], radius))
            .collect();
        self.graph.derived(
            Tensor::new(&[p.rows(), 12], data),
            Op::CameraFrame { poses: self.id, radius },
            &[self.id],
        )
    }

    /// World-space points `origin_b + depth · R_b · dir_p` for every batch
    /// frame `b` and camera-space direction `p`.
    pub fn transform_points(self, dirs: Rc<Tensor<R>>, depths: Rc<[R]>) -> Var<'g, R> {
        let f = self.value();
        let (batch, per_batch) = (f.rows(), dirs.rows());
        assert_eq!(depths.len(), batch * per_batch, "transform_points: depth count");
        let mut out = vec![R::zero(); batch * per_batch * 3];
        for b in 0..batch {
            let fr = &f.data()[b * 12..(b + 1) * 12];
            for p in 0..per_batch {
                let row = b * per_batch + p;
                let d = &dirs.data()[p * 3..p * 3 + 3];
                let t = depths[row];
                for i in 0..3 {
                    let rd = fr[i * 3] * d[0] + fr[i * 3 + 1] * d[1] + fr[i * 3 + 2] * d[2];
                    out[row * 3 + i] = fr[9 + i] + t * rd;
                }
            }
        }
        self.graph.derived(
            Tensor::new(&[batch * per_batch, 3], out),
            Op::TransformPoints { frame: self.id, dirs, depths },
            &[self.id],
        )
    }

    /// World-space directions `R_b · dir_p`.
    pub fn rotate_dirs(self, dirs: Rc<Tensor<R>>) -> Var<'g, R> {
        let f = self.value();
        let (batch, per_batch) = (f.rows(), dirs.rows());
        let mut out = vec![R::zero(); batch * per_batch * 3];
        for b in 0..batch {
            let fr = &f.data()[b * 12..(b + 1) * 12];
            for p in 0..per_batch {
                let row = b * per_batch + p;
                let d = &dirs.data()[p * 3..p * 3 + 3];
                for i in 0..3 {
                    out[row * 3 + i] = fr[i * 3] * d[0] + fr[i * 3 + 1] * d[1] + fr[i * 3 + 2] * d[2];
                }
            }
        }
        self.graph.derived(
            Tensor::new(&[batch * per_batch, 3], out),
            Op::RotateDirs { frame: self.id, dirs },
            &[self.id],
        )
    }
}

impl<'g, R: Real> std::ops::Add for Var<'g, R> {
    type Output = Var<'g, R>;
    fn add(self, rhs: Self) -> Self::Output {
        Var::add(self, rhs)
    }
}

impl<'g, R: Real> std::ops::Sub for Var<'g, R> {
    type Output = Var<'g, R>;
    fn sub(self, rhs: Self) -> Self::Output {
        Var::sub(self, rhs)
    }
}

impl<'g, R: Real> std::ops::Mul for Var<'g, R> {
    type Output = Var<'g, R>;
    fn mul(self, rhs: Self) -> Self::Output {
        Var::mul(self, rhs)
    }
}

impl<'g, R: Real> std::ops::Neg for Var<'g, R> {
    type Output = Var<'g, R>;
    fn neg(self) -> Self::Output {
        self.scale(-R::one())
    }
}

/// Camera frame values for one pose, shared with non-differentiable callers.
pub fn look_at_frame<R: Real>(pitch: R, yaw: R, radius: R) -> [R; 12] {
    camera_frame_values(pitch, yaw, radius)
}
