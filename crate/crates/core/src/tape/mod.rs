//! Explicit, single-use recording tape for reverse-mode differentiation.
//!
//! Every op reads its inputs from the tape, pushes the result as a new
//! node, and remembers what it needs for the backward sweep. A [`Var`] is a
//! copyable handle to one node; it carries the id of the tape that created
//! it so handles from different tapes cannot be mixed.
//!
//! ```
//! use prls_core::{Tape, Tensor};
//!
//! let tape = Tape::<f64>::new();
//! let x = tape.leaf(Tensor::from_slice(&[1.0, -2.0, 3.0]), true);
//! let loss = tape.square(x).and_then(|s| tape.mean(s)).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! let g = grads.get(x).unwrap();
//! assert!((g.data()[1] - (-4.0 / 3.0)).abs() < 1e-15);
//! ```

pub(crate) mod kernels;

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;
use core::sync::atomic::{AtomicU32, Ordering};

use crate::dsp::stft::{magnitudes, rows_of, Spectra, StftPlan};
use crate::dsp::StftConfig;
use crate::error::{invalid, shape_err, Error, Result};
use crate::tensor::{Real, Tensor};
use kernels::ConvGeom;

static NEXT_TAPE_ID: AtomicU32 = AtomicU32::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var {
    tape: u32,
    index: u32,
}

impl Var {
    pub fn tape_id(self) -> u32 {
        self.tape
    }

    pub fn index(self) -> usize {
        self.index as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Conv1dOpts {
    pub stride: usize,
    pub dilation: usize,
    /// Zero padding on both sides.
    pub padding: usize,
    pub groups: usize,
}

impl Default for Conv1dOpts {
    fn default() -> Self {
        Self {
            stride: 1,
            dilation: 1,
            padding: 0,
            groups: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvTranspose1dOpts {
    pub stride: usize,
    pub padding: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PadKind {
    Zero,
    Reflect,
}

#[derive(Debug)]
enum Op<T> {
    Leaf { requires_grad: bool },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, T),
    Offset(usize),
    Square(usize),
    Abs(usize),
    Log(usize),
    Sqrt(usize),
    Tanh(usize),
    LeakyRelu(usize, T),
    ClampMin(usize, T),
    Sum(usize),
    Mean(usize),
    FrobeniusNorm(usize),
    L1Norm(usize),
    Matmul(usize, usize),
    Reshape(usize),
    Pad1d { x: usize, left: usize, right: usize, kind: PadKind },
    Slice { x: usize, axis: usize, start: usize },
    Concat { xs: Vec<usize>, axis: usize },
    Frame { x: usize, win: usize, hop: usize },
    Conv1d { x: usize, w: usize, b: Option<usize>, geom: ConvGeom },
    ConvTranspose1d { x: usize, w: usize, b: Option<usize>, geom: ConvGeom },
    AvgPool1d { x: usize, kernel: usize, stride: usize },
    UpsampleNearest { x: usize, factor: usize },
    TopK { x: usize, indices: Vec<usize> },
    Stft { x: usize, plan: Box<StftPlan<T>>, spec: Spectra<T> },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Records ops for one forward pass; consumed by [`Tape::backward`].
#[derive(Debug)]
pub struct Tape<T: Real> {
    id: u32,
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar loss with respect to gradient-requiring leaves.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    tape: u32,
    grads: BTreeMap<u32, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(&v.index)
    }

    /// Removes and returns the gradient of `v`.
    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.remove(&v.index)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

fn last_axis(shape: &[usize], op: &'static str) -> Result<(usize, usize)> {
    match shape.split_last() {
        Some((&n, lead)) => Ok((lead.iter().product(), n)),
        None => Err(shape_err(op, "expected at least one axis".into())),
    }
}

/// `[outer, dim, inner]` view of `shape` around `axis`.
fn around_axis(shape: &[usize], axis: usize, op: &'static str) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(shape_err(op, format!("axis {axis} out of range for {shape:?}")));
    }
    Ok((
        shape[..axis].iter().product(),
        shape[axis],
        shape[axis + 1..].iter().product(),
    ))
}

fn acc<T: Real>(grads: &mut [Option<Vec<T>>], i: usize, len: usize) -> &mut Vec<T> {
    grads[i].get_or_insert_with(|| vec![T::zero(); len])
}

fn add_into<T: Real>(grads: &mut [Option<Vec<T>>], i: usize, g: &[T]) {
    match &mut grads[i] {
        Some(dst) => {
            for (d, &v) in dst.iter_mut().zip(g) {
                *d += v;
            }
        }
        slot @ None => *slot = Some(g.to_vec()),
    }
}

#[inline]
fn signum<T: Real>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.tape != self.id {
            return Err(Error::ForeignVar {
                expected: self.id,
                found: v.tape,
            });
        }
        Ok(v.index as usize)
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        let index = nodes.len() as u32;
        nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var {
            tape: self.id,
            index,
        }
    }

    fn needs(&self, idx: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        idx.iter().any(|&i| nodes[i].needs_grad)
    }

    /// Records an input. Leaves with `requires_grad` receive gradients.
    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf { requires_grad }, requires_grad)
    }

    pub fn constant(&self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> Result<Tensor<T>> {
        let i = self.check(v)?;
        Ok(self.nodes.borrow()[i].value.clone())
    }

    pub fn with_value<R>(&self, v: Var, f: impl FnOnce(&Tensor<T>) -> R) -> Result<R> {
        let i = self.check(v)?;
        Ok(f(&self.nodes.borrow()[i].value))
    }

    pub fn shape(&self, v: Var) -> Result<Vec<usize>> {
        self.with_value(v, |t| t.shape().to_vec())
    }

    /// Value of a one-element tensor.
    pub fn item(&self, v: Var) -> Result<T> {
        self.with_value(v, |t| {
            if t.len() == 1 {
                Ok(t.data()[0])
            } else {
                Err(Error::NonScalarLoss(t.shape().to_vec()))
            }
        })?
    }

    pub fn requires_grad(&self, v: Var) -> Result<bool> {
        let i = self.check(v)?;
        Ok(self.nodes.borrow()[i].needs_grad)
    }

    fn unary(&self, a: Var, f: impl Fn(&Tensor<T>) -> Result<Tensor<T>>, op: impl FnOnce(usize) -> Op<T>) -> Result<Var> {
        let ia = self.check(a)?;
        let value = {
            let nodes = self.nodes.borrow();
            f(&nodes[ia].value)?
        };
        let needs = self.needs(&[ia]);
        Ok(self.push(value, op(ia), needs))
    }

    fn binary(
        &self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(T, T) -> T,
        op: impl FnOnce(usize, usize) -> Op<T>,
    ) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let value = {
            let nodes = self.nodes.borrow();
            let (x, y) = (&nodes[ia].value, &nodes[ib].value);
            if x.shape() != y.shape() {
                return Err(shape_err(name, format!("{:?} vs {:?}", x.shape(), y.shape())));
            }
            let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
            Tensor::new(x.shape(), data)?
        };
        let needs = self.needs(&[ia, ib]);
        Ok(self.push(value, op(ia, ib), needs))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |p, q| p + q, Op::Add)
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |p, q| p - q, Op::Sub)
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |p, q| p * q, Op::Mul)
    }

    pub fn div(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "div", |p, q| p / q, Op::Div)
    }

    /// `c * a`.
    pub fn scale(&self, a: Var, c: T) -> Result<Var> {
        self.unary(a, |t| Ok(t.map(|v| v * c)), |i| Op::Scale(i, c))
    }

    /// `a + c`.
    pub fn offset(&self, a: Var, c: T) -> Result<Var> {
        self.unary(a, |t| Ok(t.map(|v| v + c)), Op::Offset)
    }

    pub fn square(&self, a: Var) -> Result<Var> {
        self.unary(a, |t| Ok(t.map(|v| v * v)), Op::Square)
    }

    pub fn abs(&self, a: Var) -> Result<Var> {
        self.unary(a, |t| Ok(t.map(|v| v.abs())), Op::Abs)
    }

    /// Natural log; every input must be strictly positive.
    pub fn log(&self, a: Var) -> Result<Var> {
        self.unary(
            a,
            |t| {
                if let Some(&bad) = t.data().iter().find(|&&v| v.is_nan() || v <= T::zero()) {
                    return Err(Error::NonPositiveLog {
                        op: "log",
                        value: bad.f64(),
                    });
                }
                Ok(t.map(|v| v.ln()))
            },
            Op::Log,
        )
    }

    pub fn sqrt(&self, a: Var) -> Result<Var> {
        self.unary(
            a,
            |t| {
                if t.data().iter().any(|&v| v < T::zero()) {
                    return Err(invalid("sqrt", "negative input".into()));
                }
                Ok(t.map(|v| v.sqrt()))
            },
            Op::Sqrt,
        )
    }

    pub fn tanh(&self, a: Var) -> Result<Var> {
        self.unary(a, |t| Ok(t.map(|v| v.tanh())), Op::Tanh)
    }

    /// `1 / (1 + e^{-a})`, expressed through `tanh` so no extra op is needed.
    pub fn sigmoid(&self, a: Var) -> Result<Var> {
        let half = T::of(0.5);
        let t = self.tanh(self.scale(a, half)?)?;
        self.scale(self.offset(t, T::one())?, half)
    }

    pub fn leaky_relu(&self, a: Var, slope: T) -> Result<Var> {
        self.unary(
            a,
            |t| Ok(t.map(|v| if v > T::zero() { v } else { v * slope })),
            |i| Op::LeakyRelu(i, slope),
        )
    }

    /// `max(a, floor)`; gradient flows only where `a > floor`.
    pub fn clamp_min(&self, a: Var, floor: T) -> Result<Var> {
        self.unary(
            a,
            |t| Ok(t.map(|v| if v > floor { v } else { floor })),
            |i| Op::ClampMin(i, floor),
        )
    }

    pub fn sum(&self, a: Var) -> Result<Var> {
        self.unary(a, |t| Ok(Tensor::scalar(t.data().iter().copied().sum())), Op::Sum)
    }

    pub fn mean(&self, a: Var) -> Result<Var> {
        self.unary(
            a,
            |t| {
                if t.is_empty() {
                    return Err(Error::Empty { op: "mean" });
                }
                Ok(Tensor::scalar(
                    t.data().iter().copied().sum::<T>() / T::of(t.len() as f64),
                ))
            },
            Op::Mean,
        )
    }

    pub fn frobenius_norm(&self, a: Var) -> Result<Var> {
        self.unary(a, |t| Ok(Tensor::scalar(t.sum_sq().sqrt())), Op::FrobeniusNorm)
    }

    pub fn l1_norm(&self, a: Var) -> Result<Var> {
        self.unary(
            a,
            |t| Ok(Tensor::scalar(t.data().iter().map(|v| v.abs()).sum())),
            Op::L1Norm,
        )
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let value = {
            let nodes = self.nodes.borrow();
            matmul_values(&nodes[ia].value, &nodes[ib].value)?
        };
        let needs = self.needs(&[ia, ib]);
        Ok(self.push(value, Op::Matmul(ia, ib), needs))
    }

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Result<Var> {
        self.unary(a, |t| t.clone().reshape(shape), Op::Reshape)
    }

    /// Pads the last axis.
    pub fn pad1d(&self, a: Var, left: usize, right: usize, kind: PadKind) -> Result<Var> {
        self.unary(
            a,
            |t| {
                let (rows, n) = last_axis(t.shape(), "pad1d")?;
                if kind == PadKind::Reflect && left.max(right) >= n {
                    return Err(shape_err(
                        "pad1d",
                        format!("reflect padding {left}/{right} needs length > pad, got {n}"),
                    ));
                }
                let m = n + left + right;
                let mut out = vec![T::zero(); rows * m];
                for r in 0..rows {
                    let src = &t.data()[r * n..(r + 1) * n];
                    let dst = &mut out[r * m..(r + 1) * m];
                    match kind {
                        PadKind::Zero => dst[left..left + n].copy_from_slice(src),
                        PadKind::Reflect => {
                            for (j, d) in dst.iter_mut().enumerate() {
                                *d = src[kernels::reflect_index(j as isize - left as isize, n)];
                            }
                        }
                    }
                }
                let mut shape = t.shape().to_vec();
                *shape.last_mut().unwrap() = m;
                Tensor::new(&shape, out)
            },
            |x| Op::Pad1d {
                x,
                left,
                right,
                kind,
            },
        )
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn slice(&self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        self.unary(
            a,
            |t| {
                let (outer, dim, inner) = around_axis(t.shape(), axis, "slice")?;
                if start + len > dim {
                    return Err(shape_err(
                        "slice",
                        format!("range {start}..{} exceeds axis {axis} of {:?}", start + len, t.shape()),
                    ));
                }
                let mut out = Vec::with_capacity(outer * len * inner);
                for o in 0..outer {
                    let base = (o * dim + start) * inner;
                    out.extend_from_slice(&t.data()[base..base + len * inner]);
                }
                let mut shape = t.shape().to_vec();
                shape[axis] = len;
                Tensor::new(&shape, out)
            },
            |x| Op::Slice { x, axis, start },
        )
    }

    pub fn concat(&self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Empty { op: "concat" });
        }
        let idx = parts.iter().map(|&p| self.check(p)).collect::<Result<Vec<_>>>()?;
        let value = {
            let nodes = self.nodes.borrow();
            let first = nodes[idx[0]].value.shape().to_vec();
            let (outer, _, inner) = around_axis(&first, axis, "concat")?;
            let mut total = 0;
            for &i in &idx {
                let s = nodes[i].value.shape();
                let same_rank = s.len() == first.len();
                let same_rest = same_rank
                    && s.iter().zip(&first).enumerate().all(|(d, (a, b))| d == axis || a == b);
                if !same_rest {
                    return Err(shape_err("concat", format!("{s:?} vs {first:?} on axis {axis}")));
                }
                total += s[axis];
            }
            let mut out = Vec::with_capacity(outer * total * inner);
            for o in 0..outer {
                for &i in &idx {
                    let t = &nodes[i].value;
                    let d = t.shape()[axis];
                    out.extend_from_slice(&t.data()[o * d * inner..(o + 1) * d * inner]);
                }
            }
            let mut shape = first;
            shape[axis] = total;
            Tensor::new(&shape, out)?
        };
        let needs = self.needs(&idx);
        Ok(self.push(value, Op::Concat { xs: idx, axis }, needs))
    }

    /// Sliding windows over the last axis: `[..., T] -> [..., frames, win]`.
    pub fn frame(&self, a: Var, win: usize, hop: usize) -> Result<Var> {
        if win == 0 || hop == 0 {
            return Err(invalid("frame", "window and hop must be positive".into()));
        }
        self.unary(
            a,
            |t| {
                let (rows, n) = last_axis(t.shape(), "frame")?;
                if n < win {
                    return Err(Error::TooShort {
                        what: "frame",
                        len: n,
                        needed: win,
                    });
                }
                let frames = (n - win) / hop + 1;
                let mut out = Vec::with_capacity(rows * frames * win);
                for r in 0..rows {
                    let src = &t.data()[r * n..(r + 1) * n];
                    for f in 0..frames {
                        out.extend_from_slice(&src[f * hop..f * hop + win]);
                    }
                }
                let mut shape = t.shape()[..t.shape().len() - 1].to_vec();
                shape.push(frames);
                shape.push(win);
                Tensor::new(&shape, out)
            },
            |x| Op::Frame { x, win, hop },
        )
    }

    /// `x: [B, Cin, T]`, `w: [Cout, Cin / groups, K]`, `b: [Cout]`.
    pub fn conv1d(&self, x: Var, w: Var, b: Option<Var>, opts: Conv1dOpts) -> Result<Var> {
        let (ix, iw) = (self.check(x)?, self.check(w)?);
        let ib = b.map(|b| self.check(b)).transpose()?;
        let (value, geom) = {
            let nodes = self.nodes.borrow();
            let (xs, ws) = (nodes[ix].value.shape(), nodes[iw].value.shape());
            let geom = conv_geom(xs, ws, opts)?;
            if let Some(ib) = ib {
                if nodes[ib].value.shape() != [geom.cout] {
                    return Err(shape_err(
                        "conv1d",
                        format!("bias {:?} for {} output channels", nodes[ib].value.shape(), geom.cout),
                    ));
                }
            }
            let out = kernels::conv1d_forward(
                nodes[ix].value.data(),
                nodes[iw].value.data(),
                ib.map(|i| nodes[i].value.data()),
                &geom,
            );
            (Tensor::new(&[geom.batch, geom.cout, geom.t_out], out)?, geom)
        };
        let mut deps = vec![ix, iw];
        deps.extend(ib);
        let needs = self.needs(&deps);
        Ok(self.push(value, Op::Conv1d { x: ix, w: iw, b: ib, geom }, needs))
    }

    /// `x: [B, Cin, T]`, `w: [Cin, Cout, K]`; output length `(T - 1) * stride - 2 * padding + K`.
    pub fn conv_transpose1d(&self, x: Var, w: Var, b: Option<Var>, opts: ConvTranspose1dOpts) -> Result<Var> {
        let (ix, iw) = (self.check(x)?, self.check(w)?);
        let ib = b.map(|b| self.check(b)).transpose()?;
        let (value, geom) = {
            let nodes = self.nodes.borrow();
            let (xs, ws) = (nodes[ix].value.shape(), nodes[iw].value.shape());
            if xs.len() != 3 || ws.len() != 3 || xs[1] != ws[0] || opts.stride == 0 {
                return Err(shape_err(
                    "conv_transpose1d",
                    format!("input {xs:?}, weight {ws:?}, stride {}", opts.stride),
                ));
            }
            let full = (xs[2].max(1) - 1) * opts.stride + ws[2];
            if xs[2] == 0 || full <= 2 * opts.padding {
                return Err(shape_err(
                    "conv_transpose1d",
                    format!("input {xs:?} with padding {} leaves no output", opts.padding),
                ));
            }
            let geom = ConvGeom {
                batch: xs[0],
                cin: xs[1],
                cout: ws[1],
                t_in: xs[2],
                t_out: full - 2 * opts.padding,
                kernel: ws[2],
                stride: opts.stride,
                dilation: 1,
                padding: opts.padding,
                groups: 1,
            };
            if let Some(ib) = ib {
                if nodes[ib].value.shape() != [geom.cout] {
                    return Err(shape_err(
                        "conv_transpose1d",
                        format!("bias {:?} for {} output channels", nodes[ib].value.shape(), geom.cout),
                    ));
                }
            }
            let out = kernels::conv_transpose1d_forward(
                nodes[ix].value.data(),
                nodes[iw].value.data(),
                ib.map(|i| nodes[i].value.data()),
                &geom,
            );
            (Tensor::new(&[geom.batch, geom.cout, geom.t_out], out)?, geom)
        };
        let mut deps = vec![ix, iw];
        deps.extend(ib);
        let needs = self.needs(&deps);
        Ok(self.push(value, Op::ConvTranspose1d { x: ix, w: iw, b: ib, geom }, needs))
    }

    /// Mean over non-overlapping (or strided) windows of the last axis.
    pub fn avg_pool1d(&self, a: Var, kernel: usize, stride: usize) -> Result<Var> {
        if kernel == 0 || stride == 0 {
            return Err(invalid("avg_pool1d", "kernel and stride must be positive".into()));
        }
        self.unary(
            a,
            |t| {
                let (rows, n) = last_axis(t.shape(), "avg_pool1d")?;
                if n < kernel {
                    return Err(Error::TooShort {
                        what: "avg_pool1d",
                        len: n,
                        needed: kernel,
                    });
                }
                let m = (n - kernel) / stride + 1;
                let inv = T::one() / T::of(kernel as f64);
                let mut out = Vec::with_capacity(rows * m);
                for r in 0..rows {
                    let src = &t.data()[r * n..(r + 1) * n];
                    for j in 0..m {
                        out.push(src[j * stride..j * stride + kernel].iter().copied().sum::<T>() * inv);
                    }
                }
                let mut shape = t.shape().to_vec();
                *shape.last_mut().unwrap() = m;
                Tensor::new(&shape, out)
            },
            |x| Op::AvgPool1d { x, kernel, stride },
        )
    }

    /// Repeats every entry of the last axis `factor` times.
    pub fn upsample_nearest(&self, a: Var, factor: usize) -> Result<Var> {
        if factor == 0 {
            return Err(invalid("upsample_nearest", "factor must be positive".into()));
        }
        self.unary(
            a,
            |t| {
                let (_, n) = last_axis(t.shape(), "upsample_nearest")?;
                let mut out = Vec::with_capacity(t.len() * factor);
                for &v in t.data() {
                    out.extend(core::iter::repeat_n(v, factor));
                }
                let mut shape = t.shape().to_vec();
                *shape.last_mut().unwrap() = n * factor;
                Tensor::new(&shape, out)
            },
            |x| Op::UpsampleNearest { x, factor },
        )
    }

    /// The `k` largest entries of each row of the last axis, kept in their
    /// original positional order. Ties go to the lowest index.
    ///
    /// Positional order makes `k = n` return the row unchanged, so any
    /// reduction over the selection matches the same reduction over the row
    /// bit for bit.
    pub fn topk_values(&self, a: Var, k: usize) -> Result<Var> {
        let ia = self.check(a)?;
        let (value, indices) = {
            let nodes = self.nodes.borrow();
            let t = &nodes[ia].value;
            let (rows, n) = last_axis(t.shape(), "topk_values")?;
            if k == 0 || k > n {
                return Err(invalid("topk_values", format!("k = {k} must be in 1..={n}")));
            }
            let mut indices = Vec::with_capacity(rows * k);
            let mut out = Vec::with_capacity(rows * k);
            let mut order: Vec<usize> = Vec::with_capacity(n);
            for r in 0..rows {
                let row = &t.data()[r * n..(r + 1) * n];
                order.clear();
                order.extend(0..n);
                // Stable sort keeps lower indices first among equal values.
                order.sort_by(|&i, &j| row[j].partial_cmp(&row[i]).unwrap_or(core::cmp::Ordering::Equal));
                let chosen = &mut order[..k];
                chosen.sort_unstable();
                for &i in chosen.iter() {
                    indices.push(r * n + i);
                    out.push(row[i]);
                }
            }
            let mut shape = t.shape().to_vec();
            *shape.last_mut().unwrap() = k;
            (Tensor::new(&shape, out)?, indices)
        };
        let needs = self.needs(&[ia]);
        Ok(self.push(value, Op::TopK { x: ia, indices }, needs))
    }

    /// Differentiable `|STFT(x)|` of `[..., T]`, shaped `[..., frames, bins]`.
    pub fn stft_magnitude(&self, a: Var, cfg: &StftConfig) -> Result<Var> {
        let ia = self.check(a)?;
        let plan = StftPlan::new(*cfg)?;
        let (value, spec) = {
            let nodes = self.nodes.borrow();
            let t = &nodes[ia].value;
            let (rows, len, mut shape) = rows_of(t.shape())?;
            let spec = plan.spectra(t.data(), rows, len)?;
            shape.push(spec.frames);
            shape.push(cfg.bins());
            (Tensor::new(&shape, magnitudes(&spec))?, spec)
        };
        let needs = self.needs(&[ia]);
        Ok(self.push(value, Op::Stft { x: ia, plan: Box::new(plan), spec }, needs))
    }

    /// Hash of every data-dependent branch taken so far: leaky-relu and abs
    /// signs, clamp activity, and top-k selections. Two evaluations with the
    /// same signature lie on the same smooth piece of the function.
    pub fn branch_signature(&self) -> u64 {
        const PRIME: u64 = 0x0000_0100_0000_01b3;
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut mix = |v: u64| {
            h ^= v;
            h = h.wrapping_mul(PRIME);
        };
        let nodes = self.nodes.borrow();
        let sign = |v: T| -> u64 {
            if v > T::zero() {
                1
            } else if v < T::zero() {
                2
            } else {
                3
            }
        };
        for (n, node) in nodes.iter().enumerate() {
            match &node.op {
                Op::LeakyRelu(x, _) | Op::Abs(x) | Op::L1Norm(x) => {
                    mix(n as u64);
                    for &v in nodes[*x].value.data() {
                        mix(sign(v));
                    }
                }
                Op::ClampMin(x, floor) => {
                    mix(n as u64);
                    for &v in nodes[*x].value.data() {
                        mix((v > *floor) as u64);
                    }
                }
                Op::TopK { indices, .. } => {
                    mix(n as u64);
                    for &i in indices {
                        mix(i as u64);
                    }
                }
                _ => {}
            }
        }
        h
    }

    /// Reverse sweep from a scalar `loss`. Visits nodes in exact reverse
    /// creation order and consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients<T>> {
        let root = self.check(loss)?;
        let nodes = self.nodes.into_inner();
        if nodes[root].value.len() != 1 {
            return Err(Error::NonScalarLoss(nodes[root].value.shape().to_vec()));
        }
        if !nodes[root].needs_grad {
            return Err(Error::DetachedLoss);
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[root] = Some(vec![T::one()]);
        let mut out = BTreeMap::new();

        for i in (0..=root).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            let need = |j: usize| nodes[j].needs_grad;
            let val = |j: usize| &nodes[j].value;
            match &node.op {
                Op::Leaf { requires_grad } => {
                    if *requires_grad {
                        out.insert(i as u32, Tensor::new(node.value.shape(), g)?);
                    }
                }
                Op::Add(a, b) => {
                    if need(*a) {
                        add_into(&mut grads, *a, &g);
                    }
                    if need(*b) {
                        add_into(&mut grads, *b, &g);
                    }
                }
                Op::Sub(a, b) => {
                    if need(*a) {
                        add_into(&mut grads, *a, &g);
                    }
                    if need(*b) {
                        let dst = acc(&mut grads, *b, g.len());
                        for (d, &v) in dst.iter_mut().zip(&g) {
                            *d -= v;
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (val(*a).data(), val(*b).data());
                    if need(*a) {
                        let dst = acc(&mut grads, *a, g.len());
                        for ((d, &gv), &y) in dst.iter_mut().zip(&g).zip(bv) {
                            *d += gv * y;
                        }
                    }
                    if need(*b) {
                        let dst = acc(&mut grads, *b, g.len());
                        for ((d, &gv), &x) in dst.iter_mut().zip(&g).zip(av) {
                            *d += gv * x;
                        }
                    }
                }
                Op::Div(a, b) => {
                    let (av, bv) = (val(*a).data(), val(*b).data());
                    if need(*a) {
                        let dst = acc(&mut grads, *a, g.len());
                        for ((d, &gv), &y) in dst.iter_mut().zip(&g).zip(bv) {
                            *d += gv / y;
                        }
                    }
                    if need(*b) {
                        let dst = acc(&mut grads, *b, g.len());
                        for (((d, &gv), &x), &y) in dst.iter_mut().zip(&g).zip(av).zip(bv) {
                            *d -= gv * x / (y * y);
                        }
                    }
                }
                Op::Scale(a, c) => {
                    let dst = acc(&mut grads, *a, g.len());
                    for (d, &gv) in dst.iter_mut().zip(&g) {
                        *d += gv * *c;
                    }
                }
                Op::Offset(a) | Op::Reshape(a) => add_into(&mut grads, *a, &g),
                Op::Square(a) => {
                    let av = val(*a).data();
                    let two = T::of(2.0);
                    let dst = acc(&mut grads, *a, g.len());
                    for ((d, &gv), &x) in dst.iter_mut().zip(&g).zip(av) {
                        *d += two * x * gv;
                    }
                }
                Op::Abs(a) => {
                    let av = val(*a).data();
                    let dst = acc(&mut grads, *a, g.len());
                    for ((d, &gv), &x) in dst.iter_mut().zip(&g).zip(av) {
                        *d += signum(x) * gv;
                    }
                }
                Op::Log(a) => {
                    let av = val(*a).data();
                    let dst = acc(&mut grads, *a, g.len());
                    for ((d, &gv), &x) in dst.iter_mut().zip(&g).zip(av) {
                        *d += gv / x;
                    }
                }
                Op::Sqrt(a) => {
                    let yv = node.value.data();
                    let half = T::of(0.5);
                    let dst = acc(&mut grads, *a, g.len());
                    for ((d, &gv), &y) in dst.iter_mut().zip(&g).zip(yv) {
                        if y > T::zero() {
                            *d += gv * half / y;
                        }
                    }
                }
                Op::Tanh(a) => {
                    let yv = node.value.data();
                    let dst = acc(&mut grads, *a, g.len());
                    for ((d, &gv), &y) in dst.iter_mut().zip(&g).zip(yv) {
                        *d += gv * (T::one() - y * y);
                    }
                }
                Op::LeakyRelu(a, slope) => {
                    let av = val(*a).data();
                    let dst = acc(&mut grads, *a, g.len());
                    for ((d, &gv), &x) in dst.iter_mut().zip(&g).zip(av) {
                        *d += if x > T::zero() { gv } else { gv * *slope };
                    }
                }
                Op::ClampMin(a, floor) => {
                    let av = val(*a).data();
                    let dst = acc(&mut grads, *a, g.len());
                    for ((d, &gv), &x) in dst.iter_mut().zip(&g).zip(av) {
                        if x > *floor {
                            *d += gv;
                        }
                    }
                }
                Op::Sum(a) => {
                    let n = val(*a).len();
                    let dst = acc(&mut grads, *a, n);
                    for d in dst.iter_mut() {
                        *d += g[0];
                    }
                }
                Op::Mean(a) => {
                    let n = val(*a).len();
                    let s = g[0] / T::of(n as f64);
                    let dst = acc(&mut grads, *a, n);
                    for d in dst.iter_mut() {
                        *d += s;
                    }
                }
                Op::FrobeniusNorm(a) => {
                    let av = val(*a).data();
                    let norm = node.value.data()[0];
                    if norm > T::zero() {
                        let s = g[0] / norm;
                        let dst = acc(&mut grads, *a, av.len());
                        for (d, &x) in dst.iter_mut().zip(av) {
                            *d += s * x;
                        }
                    }
                }
                Op::L1Norm(a) => {
                    let av = val(*a).data();
                    let dst = acc(&mut grads, *a, av.len());
                    for (d, &x) in dst.iter_mut().zip(av) {
                        *d += g[0] * signum(x);
                    }
                }
                Op::Matmul(a, b) => {
                    let (at, bt) = (val(*a), val(*b));
                    let (m, k, n) = (at.shape()[0], at.shape()[1], bt.shape()[1]);
                    if need(*a) {
                        let dst = acc(&mut grads, *a, m * k);
                        for r in 0..m {
                            for c in 0..k {
                                let brow = &bt.data()[c * n..(c + 1) * n];
                                let grow = &g[r * n..(r + 1) * n];
                                dst[r * k + c] += grow.iter().zip(brow).map(|(&p, &q)| p * q).sum::<T>();
                            }
                        }
                    }
                    if need(*b) {
                        let dst = acc(&mut grads, *b, k * n);
                        for r in 0..m {
                            let grow = &g[r * n..(r + 1) * n];
                            for c in 0..k {
                                let av = at.data()[r * k + c];
                                for (d, &gv) in dst[c * n..(c + 1) * n].iter_mut().zip(grow) {
                                    *d += av * gv;
                                }
                            }
                        }
                    }
                }
                Op::Pad1d { x, left, right, kind } => {
                    let xs = val(*x).shape();
                    let (rows, n) = last_axis(xs, "pad1d")?;
                    let m = n + left + right;
                    let dst = acc(&mut grads, *x, rows * n);
                    for r in 0..rows {
                        let gr = &g[r * m..(r + 1) * m];
                        let dr = &mut dst[r * n..(r + 1) * n];
                        match kind {
                            PadKind::Zero => {
                                for (d, &gv) in dr.iter_mut().zip(&gr[*left..*left + n]) {
                                    *d += gv;
                                }
                            }
                            PadKind::Reflect => {
                                for (j, &gv) in gr.iter().enumerate() {
                                    dr[kernels::reflect_index(j as isize - *left as isize, n)] += gv;
                                }
                            }
                        }
                    }
                }
                Op::Slice { x, axis, start } => {
                    let xs = val(*x).shape();
                    let (outer, dim, inner) = around_axis(xs, *axis, "slice")?;
                    let len = node.value.shape()[*axis];
                    let dst = acc(&mut grads, *x, outer * dim * inner);
                    for o in 0..outer {
                        let base = (o * dim + start) * inner;
                        let src = &g[o * len * inner..(o + 1) * len * inner];
                        for (d, &gv) in dst[base..base + len * inner].iter_mut().zip(src) {
                            *d += gv;
                        }
                    }
                }
                Op::Concat { xs, axis } => {
                    let (outer, total, inner) = around_axis(node.value.shape(), *axis, "concat")?;
                    let mut off = 0;
                    for &p in xs {
                        let d = val(p).shape()[*axis];
                        if need(p) {
                            let dst = acc(&mut grads, p, outer * d * inner);
                            for o in 0..outer {
                                let src = &g[(o * total + off) * inner..(o * total + off + d) * inner];
                                for (t, &gv) in dst[o * d * inner..(o + 1) * d * inner].iter_mut().zip(src) {
                                    *t += gv;
                                }
                            }
                        }
                        off += d;
                    }
                }
                Op::Frame { x, win, hop } => {
                    let (rows, n) = last_axis(val(*x).shape(), "frame")?;
                    let frames = (n - win) / hop + 1;
                    let dst = acc(&mut grads, *x, rows * n);
                    for r in 0..rows {
                        for f in 0..frames {
                            let src = &g[(r * frames + f) * win..(r * frames + f + 1) * win];
                            let base = r * n + f * hop;
                            for (d, &gv) in dst[base..base + win].iter_mut().zip(src) {
                                *d += gv;
                            }
                        }
                    }
                }
                Op::Conv1d { x, w, b, geom } => {
                    let want = (need(*x), need(*w), b.is_some_and(need));
                    let cg = kernels::conv1d_backward(val(*x).data(), val(*w).data(), &g, geom, want);
                    if let Some(gx) = cg.x {
                        add_into(&mut grads, *x, &gx);
                    }
                    if let Some(gw) = cg.w {
                        add_into(&mut grads, *w, &gw);
                    }
                    if let (Some(gb), Some(b)) = (cg.b, b) {
                        add_into(&mut grads, *b, &gb);
                    }
                }
                Op::ConvTranspose1d { x, w, b, geom } => {
                    let want = (need(*x), need(*w), b.is_some_and(need));
                    let cg = kernels::conv_transpose1d_backward(val(*x).data(), val(*w).data(), &g, geom, want);
                    if let Some(gx) = cg.x {
                        add_into(&mut grads, *x, &gx);
                    }
                    if let Some(gw) = cg.w {
                        add_into(&mut grads, *w, &gw);
                    }
                    if let (Some(gb), Some(b)) = (cg.b, b) {
                        add_into(&mut grads, *b, &gb);
                    }
                }
                Op::AvgPool1d { x, kernel, stride } => {
                    let (rows, n) = last_axis(val(*x).shape(), "avg_pool1d")?;
                    let m = (n - kernel) / stride + 1;
                    let inv = T::one() / T::of(*kernel as f64);
                    let dst = acc(&mut grads, *x, rows * n);
                    for r in 0..rows {
                        for j in 0..m {
                            let gv = g[r * m + j] * inv;
                            let base = r * n + j * stride;
                            for d in dst[base..base + kernel].iter_mut() {
                                *d += gv;
                            }
                        }
                    }
                }
                Op::UpsampleNearest { x, factor } => {
                    let n = val(*x).len();
                    let dst = acc(&mut grads, *x, n);
                    for (d, chunk) in dst.iter_mut().zip(g.chunks_exact(*factor)) {
                        *d += chunk.iter().copied().sum::<T>();
                    }
                }
                Op::TopK { x, indices } => {
                    let n = val(*x).len();
                    let dst = acc(&mut grads, *x, n);
                    for (&src, &gv) in indices.iter().zip(&g) {
                        dst[src] += gv;
                    }
                }
                Op::Stft { x, plan, spec } => {
                    let (rows, len, _) = rows_of(val(*x).shape())?;
                    let gx = plan.magnitude_vjp(&g, spec, rows, len);
                    add_into(&mut grads, *x, &gx);
                }
            }
        }

        for (i, node) in nodes.iter().enumerate() {
            if let Op::Leaf { requires_grad: true } = node.op {
                out.entry(i as u32).or_insert_with(|| Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients {
            tape: self.id,
            grads: out,
        })
    }
}

fn conv_geom(xs: &[usize], ws: &[usize], opts: Conv1dOpts) -> Result<ConvGeom> {
    let bad = |detail: alloc::string::String| Err(shape_err("conv1d", detail));
    if xs.len() != 3 || ws.len() != 3 {
        return bad(format!("input {xs:?} and weight {ws:?} must be 3-D"));
    }
    if opts.stride == 0 || opts.dilation == 0 || opts.groups == 0 {
        return bad(format!("stride/dilation/groups must be positive: {opts:?}"));
    }
    let (cin, cout) = (xs[1], ws[0]);
    if cin % opts.groups != 0 || cout % opts.groups != 0 || ws[1] * opts.groups != cin {
        return bad(format!("input {xs:?}, weight {ws:?}, groups {}", opts.groups));
    }
    let span = opts.dilation * (ws[2].max(1) - 1) + 1;
    let padded = xs[2] + 2 * opts.padding;
    if ws[2] == 0 || padded < span {
        return bad(format!("input {xs:?} shorter than kernel span {span}"));
    }
    Ok(ConvGeom {
        batch: xs[0],
        cin,
        cout,
        t_in: xs[2],
        t_out: (padded - span) / opts.stride + 1,
        kernel: ws[2],
        stride: opts.stride,
        dilation: opts.dilation,
        padding: opts.padding,
        groups: opts.groups,
    })
}

pub(crate) fn matmul_values<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
        return Err(shape_err("matmul", format!("{sa:?} x {sb:?}")));
    }
    let (m, k, n) = (sa[0], sa[1], sb[1]);
    let mut out = vec![T::zero(); m * n];
    for r in 0..m {
        let orow = &mut out[r * n..(r + 1) * n];
        for c in 0..k {
            let av = a.data()[r * k + c];
            for (o, &bv) in orow.iter_mut().zip(&b.data()[c * n..(c + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(&[m, n], out)
}
