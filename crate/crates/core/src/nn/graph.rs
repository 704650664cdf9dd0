//! Tape-based reverse-mode differentiation over `N × C × H × W` arrays.
//!
//! Every operation appends a node holding its value; [`Graph::backward`] walks
//! the tape in reverse. Vectors are carried as `N × D × 1 × 1` arrays, so a
//! fully connected layer is a 1×1 convolution.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, Array4, ArrayView3, ArrayViewMut3, Axis, LinalgScalar, ScalarOperand, Zip};
use num_traits::{Float, FromPrimitive};

use crate::error::{Error, Result};

/// Floating point element usable by the engine (`f32` for training, `f64` for
/// finite-difference checks).
pub trait Element:
    Float
    + FromPrimitive
    + LinalgScalar
    + ScalarOperand
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + 'static
{
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("representable literal")
    }
}

impl Element for f32 {}
impl Element for f64 {}

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(&self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Conv2d {
        input: Var,
        weight: Var,
        stride: usize,
        pad: usize,
        /// Unfolded input per batch item, kept when the kernel needs a gradient.
        cols: Option<Vec<Array2<T>>>,
    },
    Silu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Square(Var),
    Abs(Var),
    Clamp(Var, T, T),
    AvgPool2(Var),
    Upsample2(Var),
    Concat(Vec<Var>),
    MeanAll(Var),
    MeanChannels(Var),
    Blend { a: Var, b: Var, u: Var },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Conv2d { .. } => "conv2d",
            Op::Silu(_) => "silu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Exp(_) => "exp",
            Op::Square(_) => "square",
            Op::Abs(_) => "abs",
            Op::Clamp(..) => "clamp",
            Op::AvgPool2(_) => "avg_pool2",
            Op::Upsample2(_) => "upsample2",
            Op::Concat(_) => "concat",
            Op::MeanAll(_) => "mean_all",
            Op::MeanChannels(_) => "mean_channels",
            Op::Blend { .. } => "blend",
        }
    }
}

struct Node<T> {
    value: Array4<T>,
    op: Op<T>,
    requires_grad: bool,
    param: Option<String>,
}

/// Recorded computation.
pub struct Graph<T: Element> {
    nodes: Vec<Node<T>>,
    nan_guard: bool,
    first_non_finite: Option<(usize, &'static str)>,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of one backward pass, kept for leaves only.
pub struct Gradients<T> {
    grads: Vec<Option<Array4<T>>>,
}

impl<T> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Array4<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

fn shape4<T>(a: &Array4<T>) -> [usize; 4] {
    let d = a.dim();
    [d.0, d.1, d.2, d.3]
}

fn broadcast_shape(a: [usize; 4], b: [usize; 4]) -> Result<[usize; 4]> {
    let mut out = [0; 4];
    for i in 0..4 {
        out[i] = match (a[i], b[i]) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(Error::shape(format!("cannot broadcast {a:?} with {b:?}"))),
        };
    }
    Ok(out)
}

/// Sums `grad` over the axes where `shape` was broadcast.
fn reduce_to<T: Element>(grad: Array4<T>, shape: [usize; 4]) -> Array4<T> {
    let mut r = grad;
    for ax in 0..4 {
        if shape[ax] == 1 && r.len_of(Axis(ax)) != 1 {
            r = r.sum_axis(Axis(ax)).insert_axis(Axis(ax));
        }
    }
    r
}

fn sigmoid<T: Element>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn conv_out_len(len: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    (len + 2 * pad).checked_sub(k).map(|v| v / stride + 1)
}

/// Output columns `ox` whose input column `ox·stride + k − pad` lies inside `0..w`.
fn valid_cols(w: usize, wo: usize, k: usize, stride: usize, pad: usize) -> std::ops::Range<usize> {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let hi = if w + pad > k { ((w - 1 + pad - k) / stride + 1).min(wo) } else { 0 };
    lo..hi.max(lo)
}

/// Unfolds one `C × H × W` image into a `(C·k·k) × (Ho·Wo)` matrix.
fn im2col<T: Element>(x: ArrayView3<T>, kh: usize, kw: usize, stride: usize, pad: usize, ho: usize, wo: usize) -> Array2<T> {
    let (c, h, w) = x.dim();
    let mut cols = Array2::<T>::zeros((c * kh * kw, ho * wo));
    let xs = x.as_standard_layout();
    let xs = xs.as_slice().expect("standard layout");
    let out = cols.as_slice_mut().expect("fresh array");
    for ci in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = ((ci * kh + ky) * kw + kx) * ho * wo;
                let r = valid_cols(w, wo, kx, stride, pad);
                if r.is_empty() {
                    continue;
                }
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = ci * h * w + iy as usize * w;
                    let dst = row + oy * wo;
                    let ix0 = r.start * stride + kx - pad;
                    if stride == 1 {
                        out[dst + r.start..dst + r.end].copy_from_slice(&xs[src + ix0..src + ix0 + r.len()]);
                    } else {
                        for (j, ox) in r.clone().enumerate() {
                            out[dst + ox] = xs[src + ix0 + j * stride];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters-and-adds columns back into an image gradient.
fn col2im<T: Element>(cols: &Array2<T>, mut dx: ArrayViewMut3<T>, kh: usize, kw: usize, stride: usize, pad: usize, ho: usize, wo: usize) {
    let (c, h, w) = dx.dim();
    let src = cols.as_slice().expect("standard layout");
    let dst = dx.as_slice_mut().expect("standard layout");
    for ci in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = ((ci * kh + ky) * kw + kx) * ho * wo;
                let r = valid_cols(w, wo, kx, stride, pad);
                if r.is_empty() {
                    continue;
                }
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let base = ci * h * w + iy as usize * w + r.start * stride + kx - pad;
                    let from = &src[row + oy * wo + r.start..row + oy * wo + r.end];
                    for (j, v) in from.iter().enumerate() {
                        dst[base + j * stride] += *v;
                    }
                }
            }
        }
    }
}

/// Sum over non-overlapping 2×2 blocks.
fn sum_pool2<T: Element>(x: &Array4<T>) -> Array4<T> {
    let [n, c, h, w] = shape4(x);
    let (ho, wo) = (h / 2, w / 2);
    let xs = x.as_standard_layout();
    let src = xs.as_slice().expect("standard layout");
    let mut out = Array4::<T>::zeros((n, c, ho, wo));
    let dst = out.as_slice_mut().expect("fresh array");
    for p in 0..n * c {
        let (s, d) = (&src[p * h * w..(p + 1) * h * w], &mut dst[p * ho * wo..(p + 1) * ho * wo]);
        for y in 0..ho {
            let (r0, r1) = (&s[2 * y * w..2 * y * w + w], &s[(2 * y + 1) * w..(2 * y + 2) * w]);
            for x in 0..wo {
                d[y * wo + x] = r0[2 * x] + r0[2 * x + 1] + r1[2 * x] + r1[2 * x + 1];
            }
        }
    }
    out
}

fn upsample_nearest2<T: Element>(x: &Array4<T>) -> Array4<T> {
    let [n, c, h, w] = shape4(x);
    let (ho, wo) = (2 * h, 2 * w);
    let xs = x.as_standard_layout();
    let src = xs.as_slice().expect("standard layout");
    let mut out = Array4::<T>::zeros((n, c, ho, wo));
    let dst = out.as_slice_mut().expect("fresh array");
    for p in 0..n * c {
        let (s, d) = (&src[p * h * w..(p + 1) * h * w], &mut dst[p * ho * wo..(p + 1) * ho * wo]);
        for y in 0..ho {
            let row = &s[(y / 2) * w..(y / 2 + 1) * w];
            for (x, v) in d[y * wo..(y + 1) * wo].iter_mut().enumerate() {
                *v = row[x / 2];
            }
        }
    }
    out
}

impl<T: Element> Graph<T> {
    /// The NaN guard is on in debug builds.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            nan_guard: cfg!(debug_assertions),
            first_non_finite: None,
        }
    }

    pub fn with_nan_guard(mut self, on: bool) -> Self {
        self.nan_guard = on;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// First node whose value contained a NaN or infinity, if the guard is on.
    pub fn non_finite(&self) -> Option<(usize, &'static str)> {
        self.first_non_finite
    }

    fn push(&mut self, value: Array4<T>, op: Op<T>, requires_grad: bool) -> Var {
        let idx = self.nodes.len();
        if self.nan_guard && self.first_non_finite.is_none() && !value.iter().all(|v| v.is_finite()) {
            self.first_non_finite = Some((idx, op.name()));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param: None,
        });
        Var(idx)
    }

    fn node(&self, v: Var) -> Result<&Node<T>> {
        self.nodes
            .get(v.0)
            .ok_or_else(|| Error::state(format!("variable {} not recorded in this graph", v.0)))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Array4<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// An unnamed leaf that receives a gradient.
    pub fn variable(&mut self, value: Array4<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A named trainable leaf.
    pub fn parameter(&mut self, name: &str, value: Array4<T>) -> Var {
        let v = self.push(value, Op::Leaf, true);
        self.nodes[v.0].param = Some(name.to_string());
        v
    }

    /// `(name, var)` for every parameter leaf.
    pub fn parameters(&self) -> impl Iterator<Item = (&str, Var)> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.param.as_deref().map(|p| (p, Var(i))))
    }

    pub fn value(&self, v: Var) -> &Array4<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 4] {
        shape4(self.value(v))
    }

    /// First element, for scalar nodes.
    pub fn scalar(&self, v: Var) -> T {
        self.value(v).iter().next().copied().unwrap_or_else(T::zero)
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        let shape = broadcast_shape(self.shape(a), self.shape(b))?;
        let av = self.value(a).broadcast(shape).expect("checked");
        let bv = self.value(b).broadcast(shape).expect("checked");
        let value = Zip::from(&av).and(&bv).map_collect(|&x, &y| f(x, y));
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let value = self.value(a).mapv(f);
        let rg = self.rg(a);
        self.push(value, op, rg)
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        self.unary(a, |x| x * c, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Var {
        self.unary(a, |x| x + c, Op::AddScalar(a))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * sigmoid(x), Op::Silu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.exp(), Op::Exp(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.abs(), Op::Abs(a))
    }

    /// Gradient passes through where `lo ≤ x ≤ hi`.
    pub fn clamp(&mut self, a: Var, lo: T, hi: T) -> Var {
        self.unary(a, |x| x.max(lo).min(hi), Op::Clamp(a, lo, hi))
    }

    /// 2D cross-correlation; `weight` is `C_out × C_in × k_h × k_w`.
    pub fn conv2d(&mut self, input: Var, weight: Var, stride: usize, pad: usize) -> Result<Var> {
        let [n, cin, h, w] = self.shape(input);
        let [cout, wcin, kh, kw] = self.shape(weight);
        if cin != wcin {
            return Err(Error::shape(format!("conv input has {cin} channels, kernel expects {wcin}")));
        }
        if stride == 0 {
            return Err(Error::param("conv stride must be >= 1"));
        }
        let (ho, wo) = match (conv_out_len(h, kh, stride, pad), conv_out_len(w, kw, stride, pad)) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(Error::shape(format!("kernel {kh}x{kw} larger than padded {h}x{w}"))),
        };
        let x = self.value(input);
        let wmat = self
            .value(weight)
            .to_shape((cout, cin * kh * kw))
            .expect("contiguous kernel");
        let keep = self.rg(weight);
        let mut cache = Vec::new();
        let mut out = Array4::<T>::zeros((n, cout, ho, wo));
        for i in 0..n {
            let cols = im2col(x.index_axis(Axis(0), i), kh, kw, stride, pad, ho, wo);
            let mut o = out
                .index_axis_mut(Axis(0), i)
                .into_shape_with_order((cout, ho * wo))
                .expect("contiguous output");
            general_mat_mul(T::one(), &wmat, &cols, T::zero(), &mut o);
            if keep {
                cache.push(cols);
            }
        }
        let rg = self.rg(input) || keep;
        let op = Op::Conv2d {
            input,
            weight,
            stride,
            pad,
            cols: keep.then_some(cache),
        };
        Ok(self.push(out, op, rg))
    }

    /// 2×2 average pooling; spatial dims must be even.
    pub fn avg_pool2(&mut self, a: Var) -> Result<Var> {
        let [n, c, h, w] = self.shape(a);
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape(format!("avg_pool2 needs even dims, got {h}x{w}")));
        }
        let _ = (n, c);
        let value = sum_pool2(self.value(a)) * T::lit(0.25);
        let rg = self.rg(a);
        Ok(self.push(value, Op::AvgPool2(a), rg))
    }

    /// Nearest-neighbour 2× upsampling.
    pub fn upsample2(&mut self, a: Var) -> Var {
        let value = upsample_nearest2(self.value(a));
        let rg = self.rg(a);
        self.push(value, Op::Upsample2(a), rg)
    }

    /// Concatenation along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::shape("concat of nothing"))?;
        let [n, _, h, w] = self.shape(first);
        for p in parts {
            let [pn, _, ph, pw] = self.shape(*p);
            if (pn, ph, pw) != (n, h, w) {
                return Err(Error::shape(format!(
                    "concat of {:?} with {:?}",
                    self.shape(first),
                    self.shape(*p)
                )));
            }
        }
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("checked shapes");
        let rg = parts.iter().any(|p| self.rg(*p));
        Ok(self.push(value, Op::Concat(parts.to_vec()), rg))
    }

    /// Mean of all elements, as a `1 × 1 × 1 × 1` node.
    pub fn mean_all(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mean = x.iter().copied().sum::<T>() / T::from_usize(x.len()).expect("length");
        let rg = self.rg(a);
        self.push(Array4::from_elem((1, 1, 1, 1), mean), Op::MeanAll(a), rg)
    }

    /// Mean over the channel axis, keeping it as size 1.
    pub fn mean_channels(&mut self, a: Var) -> Var {
        let value = self
            .value(a)
            .mean_axis(Axis(1))
            .expect("non-empty channel axis")
            .insert_axis(Axis(1));
        let rg = self.rg(a);
        self.push(value, Op::MeanChannels(a), rg)
    }

    /// `a ⊙ u + b ⊙ (1 − u)`, with `u` broadcast onto `a`'s shape.
    pub fn blend(&mut self, a: Var, b: Var, u: Var) -> Result<Var> {
        let shape = self.shape(a);
        if self.shape(b) != shape {
            return Err(Error::shape(format!("blend of {:?} and {:?}", shape, self.shape(b))));
        }
        if broadcast_shape(shape, self.shape(u))? != shape {
            return Err(Error::shape(format!("blend weight {:?} onto {:?}", self.shape(u), shape)));
        }
        let uv = self.value(u).broadcast(shape).expect("checked");
        let value = Zip::from(self.value(a))
            .and(self.value(b))
            .and(&uv)
            .map_collect(|&x, &y, &w| x * w + y * (T::one() - w));
        let rg = self.rg(a) || self.rg(b) || self.rg(u);
        Ok(self.push(value, Op::Blend { a, b, u }, rg))
    }

    /// Reverse pass from a single-element node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let root = self.node(loss)?;
        if root.value.len() != 1 {
            return Err(Error::shape(format!(
                "backward from a non-scalar node of shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Array4<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array4::from_elem(root.value.raw_dim(), T::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<T>, g: Array4<T>, grads: &mut [Option<Array4<T>>]) {
        let mut acc = |v: Var, delta: Array4<T>| {
            if !self.rg(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => *existing += &delta,
                slot @ None => *slot = Some(delta),
            }
        };
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if self.rg(*b) {
                    acc(*b, reduce_to(g.clone(), shape4(val(*b))));
                }
                acc(*a, reduce_to(g, shape4(val(*a))));
            }
            Op::Sub(a, b) => {
                if self.rg(*b) {
                    acc(*b, reduce_to(g.mapv(|x| -x), shape4(val(*b))));
                }
                acc(*a, reduce_to(g, shape4(val(*a))));
            }
            Op::Mul(a, b) => {
                let shape = shape4(&g);
                if self.rg(*a) {
                    let bv = val(*b).broadcast(shape).expect("forward shape");
                    acc(*a, reduce_to(&g * &bv, shape4(val(*a))));
                }
                if self.rg(*b) {
                    let av = val(*a).broadcast(shape).expect("forward shape");
                    acc(*b, reduce_to(&g * &av, shape4(val(*b))));
                }
            }
            Op::Scale(a, c) => acc(*a, g * *c),
            Op::AddScalar(a) => acc(*a, g),
            Op::Silu(a) => {
                let d = Zip::from(&g).and(val(*a)).map_collect(|&g, &x| {
                    let s = sigmoid(x);
                    g * s * (T::one() + x * (T::one() - s))
                });
                acc(*a, d);
            }
            Op::Sigmoid(a) => {
                let d = Zip::from(&g).and(&node.value).map_collect(|&g, &y| g * y * (T::one() - y));
                acc(*a, d);
            }
            Op::Tanh(a) => {
                let d = Zip::from(&g).and(&node.value).map_collect(|&g, &y| g * (T::one() - y * y));
                acc(*a, d);
            }
            Op::Exp(a) => acc(*a, g * &node.value),
            Op::Square(a) => {
                let two = T::lit(2.0);
                let d = Zip::from(&g).and(val(*a)).map_collect(|&g, &x| g * two * x);
                acc(*a, d);
            }
            Op::Abs(a) => {
                let d = Zip::from(&g).and(val(*a)).map_collect(|&g, &x| {
                    if x > T::zero() {
                        g
                    } else if x < T::zero() {
                        -g
                    } else {
                        T::zero()
                    }
                });
                acc(*a, d);
            }
            Op::Clamp(a, lo, hi) => {
                let d = Zip::from(&g)
                    .and(val(*a))
                    .map_collect(|&g, &x| if x >= *lo && x <= *hi { g } else { T::zero() });
                acc(*a, d);
            }
            Op::Conv2d {
                input,
                weight,
                stride,
                pad,
                cols,
            } => {
                let x = val(*input);
                let wt = val(*weight);
                let [n, cin, _, _] = shape4(x);
                let [cout, _, kh, kw] = shape4(wt);
                let [_, _, ho, wo] = shape4(&g);
                let wmat = wt.to_shape((cout, cin * kh * kw)).expect("contiguous kernel");
                let need_x = self.rg(*input);
                let need_w = cols.is_some();
                let mut dw = Array2::<T>::zeros((cout, cin * kh * kw));
                let mut dx = if need_x { Some(Array4::<T>::zeros(x.raw_dim())) } else { None };
                // Stride-1 input gradient is a correlation of the output gradient
                // with the flipped, transposed kernel.
                let flipped = (need_x && *stride == 1 && *pad < kh && *pad < kw && kh == kw).then(|| {
                    let f = Array4::from_shape_fn((cin, cout, kh, kw), |(ci, co, ky, kx)| {
                        wt[[co, ci, kh - 1 - ky, kw - 1 - kx]]
                    });
                    f.into_shape_with_order((cin, cout * kh * kw)).expect("fresh array")
                });
                let g = g.as_standard_layout();
                for i in 0..n {
                    let gi = g
                        .index_axis(Axis(0), i)
                        .into_shape_with_order((cout, ho * wo))
                        .expect("contiguous grad");
                    if let Some(cols) = cols {
                        general_mat_mul(T::one(), &gi, &cols[i].t(), T::one(), &mut dw);
                    }
                    if let (Some(dx), Some(f)) = (dx.as_mut(), flipped.as_ref()) {
                        let q = kh - 1 - *pad;
                        let gcols = im2col(g.index_axis(Axis(0), i), kh, kw, 1, q, x.len_of(Axis(2)), x.len_of(Axis(3)));
                        let mut d = dx
                            .index_axis_mut(Axis(0), i)
                            .into_shape_with_order((cin, x.len_of(Axis(2)) * x.len_of(Axis(3))))
                            .expect("contiguous grad");
                        general_mat_mul(T::one(), f, &gcols, T::zero(), &mut d);
                    } else if let Some(dx) = dx.as_mut() {
                        let mut dcols = Array2::<T>::zeros((cin * kh * kw, ho * wo));
                        general_mat_mul(T::one(), &wmat.t(), &gi, T::zero(), &mut dcols);
                        col2im(&dcols, dx.index_axis_mut(Axis(0), i), kh, kw, *stride, *pad, ho, wo);
                    }
                }
                if need_w {
                    acc(*weight, dw.into_shape_with_order((cout, cin, kh, kw)).expect("kernel shape"));
                }
                if let Some(dx) = dx {
                    acc(*input, dx);
                }
            }
            Op::AvgPool2(a) => acc(*a, upsample_nearest2(&g) * T::lit(0.25)),
            Op::Upsample2(a) => acc(*a, sum_pool2(&g)),
            Op::Concat(parts) => {
                let mut start = 0;
                for p in parts {
                    let c = val(*p).len_of(Axis(1));
                    if self.rg(*p) {
                        acc(*p, g.slice(s![.., start..start + c, .., ..]).to_owned());
                    }
                    start += c;
                }
            }
            Op::MeanAll(a) => {
                let x = val(*a);
                let share = g[[0, 0, 0, 0]] / T::from_usize(x.len()).expect("length");
                acc(*a, Array4::from_elem(x.raw_dim(), share));
            }
            Op::MeanChannels(a) => {
                let x = val(*a);
                let inv = T::one() / T::from_usize(x.len_of(Axis(1))).expect("channels");
                let d = g.broadcast(x.raw_dim()).expect("keepdim").mapv(|v| v * inv);
                acc(*a, d);
            }
            Op::Blend { a, b, u } => {
                let shape = shape4(&g);
                let uv = val(*u).broadcast(shape).expect("forward shape");
                if self.rg(*a) {
                    acc(*a, &g * &uv);
                }
                if self.rg(*b) {
                    acc(*b, Zip::from(&g).and(&uv).map_collect(|&g, &w| g * (T::one() - w)));
                }
                if self.rg(*u) {
                    let d = Zip::from(&g)
                        .and(val(*a))
                        .and(val(*b))
                        .map_collect(|&g, &x, &y| g * (x - y));
                    acc(*u, reduce_to(d, shape4(val(*u))));
                }
            }
        }
    }
}
