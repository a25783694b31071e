//! Define-by-run tape. Every operation appends a node holding its value and
//! the information its backward rule needs; [`Graph::backward`] walks the
//! tape in reverse.

use std::cell::RefCell;
use std::sync::Arc;

use crate::ops::conv::{self, ConvOpts};
use crate::ops::{layout, norm, resize};
use crate::{Error, Float, Result, Tensor};

const NORM_EPS: f64 = 1e-5;

enum Op<T> {
    Leaf,
    Conv {
        x: usize,
        w: usize,
        b: Option<usize>,
        opts: ConvOpts,
    },
    ConvTranspose {
        x: usize,
        w: usize,
        b: Option<usize>,
        opts: ConvOpts,
    },
    InstanceNorm {
        x: usize,
        inv_std: Vec<T>,
    },
    Relu(usize),
    LeakyRelu(usize, T),
    Tanh(usize),
    Sigmoid(usize),
    Abs(usize),
    Square(usize),
    Affine {
        x: usize,
        scale: T,
    },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Concat(Vec<usize>),
    Narrow {
        x: usize,
        start: usize,
    },
    PixelShuffle {
        x: usize,
        r: usize,
    },
    Resize(usize),
    GlobalAvgPool(usize),
    MaxPool2 {
        x: usize,
        arg: Vec<u32>,
    },
    Clamp {
        x: usize,
        lo: T,
        hi: T,
    },
    Mean(usize),
}

struct Node<T> {
    value: Arc<Tensor<T>>,
    op: Op<T>,
    needs_grad: bool,
}

/// Computation tape for one forward/backward pass.
pub struct Graph<T: Float> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Float> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g, T: Float> {
    graph: &'g Graph<T>,
    id: usize,
}

impl<T: Float> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var(#{}, {:?})", self.id, self.dims())
    }
}

/// Gradients produced by [`Graph::backward`], indexed by leaf node.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Float> Gradients<T> {
    pub fn get(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var<'_, T>) -> Option<Tensor<T>> {
        self.grads.get_mut(var.id).and_then(|g| g.take())
    }
}

impl<T: Float> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var<'_, T> {
        self.push_arc(Arc::new(value), op, needs_grad)
    }

    fn push_arc(&self, value: Arc<Tensor<T>>, op: Op<T>, needs_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf sharing storage with a parameter; `trainable` decides whether
    /// [`Graph::backward`] reports a gradient for it.
    pub fn leaf(&self, value: Arc<Tensor<T>>, trainable: bool) -> Var<'_, T> {
        self.push_arc(value, Op::Leaf, trainable)
    }

    /// Trainable leaf owning its value.
    pub fn variable(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, true)
    }

    fn value(&self, id: usize) -> Arc<Tensor<T>> {
        self.nodes.borrow()[id].value.clone()
    }

    fn needs(&self, id: usize) -> bool {
        self.nodes.borrow()[id].needs_grad
    }

    pub fn concat_channels<'g>(&'g self, xs: &[Var<'g, T>]) -> Result<Var<'g, T>> {
        let values: Vec<_> = xs.iter().map(|x| x.value()).collect();
        let refs: Vec<&Tensor<T>> = values.iter().map(|v| v.as_ref()).collect();
        let out = layout::concat_channels(&refs)?;
        let needs = xs.iter().any(|x| x.requires_grad());
        Ok(self.push(out, Op::Concat(xs.iter().map(|x| x.id).collect()), needs))
    }

    /// Reverse-mode sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar, got dims {:?}",
                root.value.dims()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::ones(root.value.dims()));
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(dy) = grads[id].take() else { continue };
            backward_node(&nodes, id, &dy, &mut grads)?;
        }
        Ok(Gradients { grads })
    }
}

fn accumulate<T: Float>(grads: &mut [Option<Tensor<T>>], id: usize, g: Tensor<T>) {
    match &mut grads[id] {
        Some(acc) => acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, &b)| *a += b),
        slot @ None => *slot = Some(g),
    }
}

fn zip_map<T: Float>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.dims(), data).expect("same dims")
}

fn broadcast_strides(a: [usize; 4], b: [usize; 4]) -> Option<[usize; 4]> {
    let mut strides = [0; 4];
    let mut acc = 1;
    for i in (0..4).rev() {
        if b[i] == a[i] {
            strides[i] = if b[i] == 1 { 0 } else { acc };
        } else if b[i] != 1 {
            return None;
        }
        acc *= b[i];
    }
    Some(strides)
}

/// Calls `f(index_in_a, index_in_b)` for every element of `a` with `b`
/// broadcast along its unit axes.
fn for_each_broadcast(a: [usize; 4], s: [usize; 4], mut f: impl FnMut(usize, usize)) {
    let mut k = 0;
    for n in 0..a[0] {
        for c in 0..a[1] {
            for h in 0..a[2] {
                let base = n * s[0] + c * s[1] + h * s[2];
                for w in 0..a[3] {
                    f(k, base + w * s[3]);
                    k += 1;
                }
            }
        }
    }
}

fn binary<T: Float>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    if a.dims() == b.dims() {
        return Ok(zip_map(a, b, f));
    }
    let s = broadcast_strides(a.dims(), b.dims()).ok_or_else(|| Error::shape(op, a.dims(), b.dims()))?;
    let mut out = Tensor::zeros(a.dims());
    let (ad, bd) = (a.data(), b.data());
    let od = out.data_mut();
    for_each_broadcast(a.dims(), s, |i, j| od[i] = f(ad[i], bd[j]));
    Ok(out)
}

/// Sums `g` (shaped like `a`) down to `b_dims`.
fn reduce_to<T: Float>(g: Tensor<T>, b_dims: [usize; 4]) -> Tensor<T> {
    if g.dims() == b_dims {
        return g;
    }
    let s = broadcast_strides(g.dims(), b_dims).expect("checked in forward");
    let mut out = Tensor::zeros(b_dims);
    let od = out.data_mut();
    let gd = g.data();
    for_each_broadcast(g.dims(), s, |i, j| od[j] += gd[i]);
    out
}

fn backward_node<T: Float>(
    nodes: &[Node<T>],
    id: usize,
    dy: &Tensor<T>,
    grads: &mut [Option<Tensor<T>>],
) -> Result<()> {
    let node = &nodes[id];
    let y = node.value.as_ref();
    let val = |i: usize| nodes[i].value.as_ref();
    let needs = |i: usize| nodes[i].needs_grad;
    match &node.op {
        Op::Leaf => {}
        Op::Conv { x, w, b, opts } | Op::ConvTranspose { x, w, b, opts } => {
            let want = [needs(*x), needs(*w), b.map(needs).unwrap_or(false)];
            let (dx, dw, db) = if matches!(node.op, Op::Conv { .. }) {
                conv::conv2d_backward(val(*x), val(*w), dy, *opts, want)?
            } else {
                conv::conv_transpose2d_backward(val(*x), val(*w), dy, *opts, want)?
            };
            if let Some(g) = dx {
                accumulate(grads, *x, g);
            }
            if let Some(g) = dw {
                accumulate(grads, *w, g);
            }
            if let (Some(g), Some(b)) = (db, b) {
                accumulate(grads, *b, g);
            }
        }
        Op::InstanceNorm { x, inv_std } => {
            accumulate(grads, *x, norm::instance_norm_backward(y, inv_std, dy));
        }
        Op::Relu(x) => accumulate(grads, *x, zip_map(dy, y, |g, v| if v > T::zero() { g } else { T::zero() })),
        Op::LeakyRelu(x, slope) => {
            let s = *slope;
            accumulate(grads, *x, zip_map(dy, val(*x), |g, v| if v > T::zero() { g } else { g * s }));
        }
        Op::Tanh(x) => accumulate(grads, *x, zip_map(dy, y, |g, v| g * (T::one() - v * v))),
        Op::Sigmoid(x) => accumulate(grads, *x, zip_map(dy, y, |g, v| g * v * (T::one() - v))),
        Op::Abs(x) => accumulate(
            grads,
            *x,
            zip_map(dy, val(*x), |g, v| {
                if v > T::zero() {
                    g
                } else if v < T::zero() {
                    -g
                } else {
                    T::zero()
                }
            }),
        ),
        Op::Square(x) => accumulate(grads, *x, zip_map(dy, val(*x), |g, v| g * (v + v))),
        Op::Affine { x, scale } => {
            let s = *scale;
            accumulate(grads, *x, dy.map(|g| g * s));
        }
        Op::Add(a, b) | Op::Sub(a, b) => {
            if needs(*a) {
                accumulate(grads, *a, dy.clone());
            }
            if needs(*b) {
                let mut g = reduce_to(dy.clone(), val(*b).dims());
                if matches!(node.op, Op::Sub(..)) {
                    g.data_mut().iter_mut().for_each(|v| *v = -*v);
                }
                accumulate(grads, *b, g);
            }
        }
        Op::Mul(a, b) => {
            if needs(*a) {
                accumulate(grads, *a, binary("mul", dy, val(*b), |g, v| g * v)?);
            }
            if needs(*b) {
                accumulate(grads, *b, reduce_to(zip_map(dy, val(*a), |g, v| g * v), val(*b).dims()));
            }
        }
        Op::Concat(xs) => {
            let widths: Vec<usize> = xs.iter().map(|&x| val(x).dims()[1]).collect();
            for (&x, g) in xs.iter().zip(layout::split_channels(dy, &widths)) {
                if needs(x) {
                    accumulate(grads, x, g);
                }
            }
        }
        Op::Narrow { x, start } => {
            accumulate(grads, *x, layout::narrow_channels_backward(dy, val(*x).dims(), *start));
        }
        Op::PixelShuffle { x, r } => accumulate(grads, *x, layout::pixel_unshuffle(dy, *r)),
        Op::Resize(x) => {
            let [_, _, h, w] = val(*x).dims();
            accumulate(grads, *x, resize::backward(dy, h, w));
        }
        Op::GlobalAvgPool(x) => {
            accumulate(grads, *x, layout::global_avg_pool_backward(dy, val(*x).dims()));
        }
        Op::MaxPool2 { x, arg } => {
            accumulate(grads, *x, layout::max_pool2_backward(dy, val(*x).dims(), arg));
        }
        Op::Clamp { x, lo, hi } => {
            let (lo, hi) = (*lo, *hi);
            accumulate(
                grads,
                *x,
                zip_map(dy, val(*x), |g, v| if v >= lo && v <= hi { g } else { T::zero() }),
            );
        }
        Op::Mean(x) => {
            let d = val(*x).dims();
            let inv = T::one() / T::of(val(*x).len() as f64);
            accumulate(grads, *x, Tensor::full(d, dy.item() * inv));
        }
    }
    Ok(())
}

impl<'g, T: Float> Var<'g, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    pub fn value(&self) -> Arc<Tensor<T>> {
        self.graph.value(self.id)
    }

    pub fn dims(&self) -> [usize; 4] {
        self.graph.nodes.borrow()[self.id].value.dims()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.needs(self.id)
    }

    /// Same value, cut from the gradient path.
    pub fn detach(&self) -> Var<'g, T> {
        self.graph.push_arc(self.value(), Op::Leaf, false)
    }

    fn unary(&self, value: Tensor<T>, op: Op<T>) -> Var<'g, T> {
        self.graph.push(value, op, self.requires_grad())
    }

    fn binary_node(&self, other: Var<'g, T>, value: Tensor<T>, op: Op<T>) -> Var<'g, T> {
        let needs = self.requires_grad() || other.requires_grad();
        self.graph.push(value, op, needs)
    }

    pub fn conv2d(&self, w: Var<'g, T>, b: Option<Var<'g, T>>, opts: ConvOpts) -> Result<Var<'g, T>> {
        let bv = b.map(|b| b.value());
        let out = conv::conv2d(&self.value(), &w.value(), bv.as_deref(), opts)?;
        let needs = self.requires_grad() || w.requires_grad() || b.is_some_and(|b| b.requires_grad());
        Ok(self.graph.push(
            out,
            Op::Conv {
                x: self.id,
                w: w.id,
                b: b.map(|b| b.id),
                opts,
            },
            needs,
        ))
    }

    pub fn conv_transpose2d(&self, w: Var<'g, T>, b: Option<Var<'g, T>>, opts: ConvOpts) -> Result<Var<'g, T>> {
        let bv = b.map(|b| b.value());
        let out = conv::conv_transpose2d(&self.value(), &w.value(), bv.as_deref(), opts)?;
        let needs = self.requires_grad() || w.requires_grad() || b.is_some_and(|b| b.requires_grad());
        Ok(self.graph.push(
            out,
            Op::ConvTranspose {
                x: self.id,
                w: w.id,
                b: b.map(|b| b.id),
                opts,
            },
            needs,
        ))
    }

    pub fn instance_norm(&self) -> Var<'g, T> {
        let (out, inv_std) = norm::instance_norm(&self.value(), T::of(NORM_EPS));
        self.unary(out, Op::InstanceNorm { x: self.id, inv_std })
    }

    pub fn relu(&self) -> Var<'g, T> {
        let out = self.value().map(|v| v.max(T::zero()));
        self.unary(out, Op::Relu(self.id))
    }

    pub fn leaky_relu(&self, slope: f64) -> Var<'g, T> {
        let s = T::of(slope);
        let out = self.value().map(|v| if v > T::zero() { v } else { v * s });
        self.unary(out, Op::LeakyRelu(self.id, s))
    }

    pub fn tanh(&self) -> Var<'g, T> {
        let out = self.value().map(|v| v.tanh());
        self.unary(out, Op::Tanh(self.id))
    }

    pub fn sigmoid(&self) -> Var<'g, T> {
        let out = self.value().map(|v| T::one() / (T::one() + (-v).exp()));
        self.unary(out, Op::Sigmoid(self.id))
    }

    pub fn abs(&self) -> Var<'g, T> {
        let out = self.value().map(|v| v.abs());
        self.unary(out, Op::Abs(self.id))
    }

    pub fn square(&self) -> Var<'g, T> {
        let out = self.value().map(|v| v * v);
        self.unary(out, Op::Square(self.id))
    }

    /// `scale * x + shift`.
    pub fn affine(&self, scale: f64, shift: f64) -> Var<'g, T> {
        let (s, b) = (T::of(scale), T::of(shift));
        let out = self.value().map(|v| v * s + b);
        self.unary(out, Op::Affine { x: self.id, scale: s })
    }

    /// Element-wise sum; `other` may broadcast along unit axes.
    pub fn add(&self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        let out = binary("add", &self.value(), &other.value(), |a, b| a + b)?;
        Ok(self.binary_node(other, out, Op::Add(self.id, other.id)))
    }

    pub fn sub(&self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        let out = binary("sub", &self.value(), &other.value(), |a, b| a - b)?;
        Ok(self.binary_node(other, out, Op::Sub(self.id, other.id)))
    }

    pub fn mul(&self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        let out = binary("mul", &self.value(), &other.value(), |a, b| a * b)?;
        Ok(self.binary_node(other, out, Op::Mul(self.id, other.id)))
    }

    pub fn narrow_channels(&self, start: usize, len: usize) -> Result<Var<'g, T>> {
        let out = layout::narrow_channels(&self.value(), start, len)?;
        Ok(self.unary(out, Op::Narrow { x: self.id, start }))
    }

    pub fn pixel_shuffle(&self, r: usize) -> Result<Var<'g, T>> {
        let out = layout::pixel_shuffle(&self.value(), r)?;
        Ok(self.unary(out, Op::PixelShuffle { x: self.id, r }))
    }

    pub fn resize_bilinear(&self, h: usize, w: usize) -> Result<Var<'g, T>> {
        let out = resize::forward(&self.value(), h, w)?;
        Ok(self.unary(out, Op::Resize(self.id)))
    }

    pub fn global_avg_pool(&self) -> Var<'g, T> {
        let out = layout::global_avg_pool(&self.value());
        self.unary(out, Op::GlobalAvgPool(self.id))
    }

    pub fn max_pool2(&self) -> Var<'g, T> {
        let (out, arg) = layout::max_pool2(&self.value());
        self.unary(out, Op::MaxPool2 { x: self.id, arg })
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Var<'g, T> {
        let (l, h) = (T::of(lo), T::of(hi));
        let out = self.value().map(|v| v.max(l).min(h));
        self.unary(out, Op::Clamp { x: self.id, lo: l, hi: h })
    }

    /// Mean of all elements, as a `[1, 1, 1, 1]` node.
    pub fn mean(&self) -> Var<'g, T> {
        let v = self.value();
        let m = v.data().iter().copied().sum::<T>() / T::of(v.len() as f64);
        self.unary(Tensor::scalar(m), Op::Mean(self.id))
    }

    /// Value of a one-element node.
    pub fn item(&self) -> T {
        self.value().item()
    }
}
