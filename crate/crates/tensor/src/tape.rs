//! Reverse-mode automatic differentiation over a recording tape.
//!
//! Ops execute eagerly. When any input requires gradients the op also records
//! a backward closure; `backward` replays the closures in reverse creation
//! order, which is a valid reverse topological order because a node can only
//! be built from earlier nodes. Everything is single-threaded per tape;
//! independent tapes may live on different threads.

use std::cell::{Ref, RefCell};

use crate::error::{invalid_shape, shape_mismatch, Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::{matmul_raw, transpose2, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    pub(crate) idx: usize,
}

pub(crate) type BackFn<T> = Box<dyn Fn(&Tensor<T>, &mut GradSlots<T>)>;

struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    back: Option<BackFn<T>>,
}

/// Gradient accumulation buffer indexed by node id.
pub struct GradSlots<T> {
    slots: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> GradSlots<T> {
    pub(crate) fn accumulate(&mut self, idx: usize, delta: Tensor<T>) {
        match &mut self.slots[idx] {
            Some(existing) => existing.add_in_place(&delta),
            slot @ None => *slot = Some(delta),
        }
    }
}

/// Gradients of a scalar loss with respect to tape nodes.
pub struct GradStore<T> {
    slots: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> GradStore<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.slots.get(v.idx).and_then(|s| s.as_ref())
    }

    /// Gradient of `v`, or zeros of the given shape when `v` is off the loss path.
    pub fn or_zeros(&self, v: Var, shape: &[usize]) -> Tensor<T> {
        match self.get(v) {
            Some(g) => g.clone(),
            None => Tensor::zeros(shape),
        }
    }
}

pub struct Tape<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Register a leaf value. Gradients are collected for it iff `requires_grad`.
    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, requires_grad, None)
    }

    /// Leaf that never receives gradients.
    pub fn constant(&self, value: Tensor<T>) -> Var {
        self.push(value, false, None)
    }

    pub fn constant_scalar(&self, value: T) -> Var {
        self.constant(Tensor::scalar(value))
    }

    pub fn value(&self, v: Var) -> Tensor<T> {
        self.nodes.borrow()[v.idx].value.clone()
    }

    /// Borrowed view of a node value (cheaper than `value` for peeks).
    pub fn value_ref(&self, v: Var) -> Ref<'_, Tensor<T>> {
        Ref::map(self.nodes.borrow(), |nodes| &nodes[v.idx].value)
    }

    pub fn shape_of(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.idx].value.shape().to_vec()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.idx].requires_grad
    }

    pub(crate) fn needs(&self, v: Var) -> bool {
        self.requires_grad(v)
    }

    pub(crate) fn push(&self, value: Tensor<T>, requires_grad: bool, back: Option<BackFn<T>>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            requires_grad,
            back,
        });
        Var {
            idx: nodes.len() - 1,
        }
    }

    /// Reverse pass from a scalar loss. Returns gradients for every
    /// grad-requiring node reachable from the loss; unreachable leaves are
    /// simply absent (read them back with [`GradStore::or_zeros`]).
    pub fn backward(&self, loss: Var) -> Result<GradStore<T>> {
        let nodes = self.nodes.borrow();
        let loss_node = &nodes[loss.idx];
        if loss_node.value.numel() != 1 {
            return Err(TensorError::NonScalarLoss {
                shape: loss_node.value.shape().to_vec(),
            });
        }
        let mut buf = GradSlots {
            slots: vec![None; nodes.len()],
        };
        buf.slots[loss.idx] = Some(Tensor::ones(loss_node.value.shape()));
        for idx in (0..=loss.idx).rev() {
            let grad = match buf.slots[idx].take() {
                Some(g) => g,
                None => continue,
            };
            match &nodes[idx].back {
                Some(back) => back(&grad, &mut buf),
                // Leaf: keep its gradient readable.
                None => buf.slots[idx] = Some(grad),
            }
        }
        Ok(GradStore { slots: buf.slots })
    }

    // ---- elementwise binary ----

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("add", a, b, |x, y| x + y, |_av, _bv, g| (g.clone(), g.clone()))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(
            "sub",
            a,
            b,
            |x, y| x - y,
            |_av, _bv, g| (g.clone(), g.map(|x| -x)),
        )
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(
            "mul",
            a,
            b,
            |x, y| x * y,
            |av, bv, g| (g.zip_map(bv, |gi, y| gi * y), g.zip_map(av, |gi, x| gi * x)),
        )
    }

    pub fn div(&self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(
            "div",
            a,
            b,
            |x, y| x / y,
            |av, bv, g| {
                let da = g.zip_map(bv, |gi, y| gi / y);
                let db_tmp = g.zip_map(av, |gi, x| gi * x);
                let db = db_tmp.zip_map(bv, |t, y| -(t / (y * y)));
                (da, db)
            },
        )
    }

    fn binary_same_shape(
        &self,
        op: &'static str,
        a: Var,
        b: Var,
        fwd: impl Fn(T, T) -> T,
        bwd: impl Fn(&Tensor<T>, &Tensor<T>, &Tensor<T>) -> (Tensor<T>, Tensor<T>) + 'static,
    ) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.idx].value;
            let bv = &nodes[b.idx].value;
            if av.shape() != bv.shape() {
                return Err(shape_mismatch(op, av.shape(), bv.shape()));
            }
            av.zip_map(bv, fwd)
        };
        let (an, bn) = (self.needs(a), self.needs(b));
        let back: Option<BackFn<T>> = if an || bn {
            let av = self.value(a);
            let bv = self.value(b);
            let (ai, bi) = (a.idx, b.idx);
            Some(Box::new(move |g, buf| {
                let (da, db) = bwd(&av, &bv, g);
                if an {
                    buf.accumulate(ai, da);
                }
                if bn {
                    buf.accumulate(bi, db);
                }
            }))
        } else {
            None
        };
        Ok(self.push(out, an || bn, back))
    }

    // ---- scalar-constant and scalar-var arithmetic ----

    pub fn add_scalar(&self, a: Var, c: T) -> Var {
        self.unary(a, move |x| x + c, move |_xv, yv, g| {
            let _ = yv;
            g.clone()
        })
    }

    pub fn mul_scalar(&self, a: Var, c: T) -> Var {
        self.unary(a, move |x| x * c, move |_xv, _yv, g| g.map(|gi| gi * c))
    }

    pub fn neg(&self, a: Var) -> Var {
        self.mul_scalar(a, -T::one())
    }

    /// Multiply a tensor by a single-element var (broadcast).
    pub fn scale_by(&self, a: Var, s: Var) -> Result<Var> {
        {
            let sv = self.value_ref(s);
            if sv.numel() != 1 {
                return Err(invalid_shape("scale_by", sv.shape(), "scale must have one element"));
            }
        }
        let s0 = self.value_ref(s).item();
        let out = self.value_ref(a).map(|x| x * s0);
        let (an, sn) = (self.needs(a), self.needs(s));
        let back: Option<BackFn<T>> = if an || sn {
            let av = self.value(a);
            let s_shape = self.shape_of(s);
            let (ai, si) = (a.idx, s.idx);
            Some(Box::new(move |g, buf| {
                if an {
                    buf.accumulate(ai, g.map(|gi| gi * s0));
                }
                if sn {
                    let mut acc = T::zero();
                    for (gi, xi) in g.data().iter().zip(av.data().iter()) {
                        acc += *gi * *xi;
                    }
                    buf.accumulate(si, Tensor::full(&s_shape, acc));
                }
            }))
        } else {
            None
        };
        Ok(self.push(out, an || sn, back))
    }

    // ---- unary elementwise ----

    fn unary(
        &self,
        a: Var,
        fwd: impl Fn(T) -> T,
        bwd: impl Fn(&Tensor<T>, &Tensor<T>, &Tensor<T>) -> Tensor<T> + 'static,
    ) -> Var {
        let out = self.value_ref(a).map(fwd);
        let an = self.needs(a);
        let back: Option<BackFn<T>> = if an {
            let xv = self.value(a);
            let yv = out.clone();
            let ai = a.idx;
            Some(Box::new(move |g, buf| {
                buf.accumulate(ai, bwd(&xv, &yv, g));
            }))
        } else {
            None
        };
        self.push(out, an, back)
    }

    pub fn relu(&self, a: Var) -> Var {
        self.unary(
            a,
            |x| if x > T::zero() { x } else { T::zero() },
            |xv, _yv, g| {
                g.zip_map(xv, |gi, x| if x > T::zero() { gi } else { T::zero() })
            },
        )
    }

    pub fn tanh(&self, a: Var) -> Var {
        self.unary(a, |x| x.tanh(), |_xv, yv, g| {
            g.zip_map(yv, |gi, y| gi * (T::one() - y * y))
        })
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        self.unary(
            a,
            |x| T::one() / (T::one() + (-x).exp()),
            |_xv, yv, g| g.zip_map(yv, |gi, y| gi * y * (T::one() - y)),
        )
    }

    pub fn exp(&self, a: Var) -> Var {
        self.unary(a, |x| x.exp(), |_xv, yv, g| g.zip_map(yv, |gi, y| gi * y))
    }

    pub fn log(&self, a: Var) -> Var {
        self.unary(a, |x| x.ln(), |xv, _yv, g| g.zip_map(xv, |gi, x| gi / x))
    }

    pub fn sin(&self, a: Var) -> Var {
        self.unary(a, |x| x.sin(), |xv, _yv, g| g.zip_map(xv, |gi, x| gi * x.cos()))
    }

    pub fn cos(&self, a: Var) -> Var {
        self.unary(a, |x| x.cos(), |xv, _yv, g| {
            g.zip_map(xv, |gi, x| -(gi * x.sin()))
        })
    }

    pub fn sqrt(&self, a: Var) -> Var {
        self.unary(a, |x| x.sqrt(), |_xv, yv, g| {
            g.zip_map(yv, |gi, y| gi / (y + y))
        })
    }

    /// x^(-1/2).
    pub fn rsqrt(&self, a: Var) -> Var {
        self.unary(
            a,
            |x| T::one() / x.sqrt(),
            |_xv, yv, g| {
                let half = T::of(0.5);
                g.zip_map(yv, move |gi, y| -(gi * half * y * y * y))
            },
        )
    }

    pub fn square(&self, a: Var) -> Var {
        self.unary(a, |x| x * x, |xv, _yv, g| {
            g.zip_map(xv, |gi, x| gi * (x + x))
        })
    }

    /// Clamp with zero gradient outside the open interval (lo, hi).
    pub fn clamp(&self, a: Var, lo: T, hi: T) -> Var {
        self.unary(
            a,
            move |x| {
                if x < lo {
                    lo
                } else if x > hi {
                    hi
                } else {
                    x
                }
            },
            move |xv, _yv, g| {
                g.zip_map(xv, move |gi, x| {
                    if x > lo && x < hi {
                        gi
                    } else {
                        T::zero()
                    }
                })
            },
        )
    }

    // ---- reductions ----

    pub fn sum_all(&self, a: Var) -> Var {
        let total = {
            let av = self.value_ref(a);
            let mut acc = T::zero();
            for &x in av.data() {
                acc += x;
            }
            acc
        };
        let an = self.needs(a);
        let shape = self.shape_of(a);
        let back: Option<BackFn<T>> = if an {
            let ai = a.idx;
            Some(Box::new(move |g, buf| {
                buf.accumulate(ai, Tensor::full(&shape, g.item()));
            }))
        } else {
            None
        };
        self.push(Tensor::scalar(total), an, back)
    }

    pub fn mean_all(&self, a: Var) -> Var {
        let n = self.value_ref(a).numel();
        let s = self.sum_all(a);
        self.mul_scalar(s, T::one() / T::of(n as f64))
    }

    /// Row (axis=1) or column (axis=0) sums of a 2D tensor.
    pub fn sum_axis(&self, a: Var, axis: usize) -> Result<Var> {
        let (m, n, out) = {
            let av = self.value_ref(a);
            if av.rank() != 2 {
                return Err(invalid_shape("sum_axis", av.shape(), "expects rank 2"));
            }
            let (m, n) = (av.rows(), av.cols());
            let out = match axis {
                0 => {
                    let mut o = Tensor::zeros(&[1, n]);
                    for i in 0..m {
                        for j in 0..n {
                            o.data_mut()[j] += av.at2(i, j);
                        }
                    }
                    o
                }
                1 => {
                    let mut o = Tensor::zeros(&[m, 1]);
                    for i in 0..m {
                        let mut acc = T::zero();
                        for j in 0..n {
                            acc += av.at2(i, j);
                        }
                        o.data_mut()[i] = acc;
                    }
                    o
                }
                _ => return Err(invalid_shape("sum_axis", av.shape(), "axis must be 0 or 1")),
            };
            (m, n, out)
        };
        let an = self.needs(a);
        let back: Option<BackFn<T>> = if an {
            let ai = a.idx;
            Some(Box::new(move |g, buf| {
                let mut da = Tensor::zeros(&[m, n]);
                match axis {
                    0 => {
                        for i in 0..m {
                            for j in 0..n {
                                da.set2(i, j, g.data()[j]);
                            }
                        }
                    }
                    _ => {
                        for i in 0..m {
                            for j in 0..n {
                                da.set2(i, j, g.data()[i]);
                            }
                        }
                    }
                }
                buf.accumulate(ai, da);
            }))
        } else {
            None
        };
        Ok(self.push(out, an, back))
    }

    // ---- linear algebra ----

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.idx].value;
            let bv = &nodes[b.idx].value;
            if av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.rows() {
                return Err(shape_mismatch("matmul", av.shape(), bv.shape()));
            }
            matmul_raw(av, bv)
        };
        let (an, bn) = (self.needs(a), self.needs(b));
        let back: Option<BackFn<T>> = if an || bn {
            let av = self.value(a);
            let bv = self.value(b);
            let (ai, bi) = (a.idx, b.idx);
            Some(Box::new(move |g, buf| {
                if an {
                    buf.accumulate(ai, matmul_raw(g, &transpose2(&bv)));
                }
                if bn {
                    buf.accumulate(bi, matmul_raw(&transpose2(&av), g));
                }
            }))
        } else {
            None
        };
        Ok(self.push(out, an || bn, back))
    }

    /// L2 norm of all elements, as a [1] tensor. Gradient is zero at the origin.
    pub fn l2norm(&self, a: Var) -> Var {
        let norm = {
            let av = self.value_ref(a);
            let mut acc = T::zero();
            for &x in av.data() {
                acc += x * x;
            }
            acc.sqrt()
        };
        let an = self.needs(a);
        let back: Option<BackFn<T>> = if an {
            let av = self.value(a);
            let ai = a.idx;
            Some(Box::new(move |g, buf| {
                let g0 = g.item();
                let da = if norm > T::zero() {
                    av.map(|x| g0 * x / norm)
                } else {
                    Tensor::zeros(av.shape())
                };
                buf.accumulate(ai, da);
            }))
        } else {
            None
        };
        self.push(Tensor::scalar(norm), an, back)
    }

    // ---- softmax family (rowwise over 2D) ----

    pub fn softmax(&self, a: Var) -> Result<Var> {
        let out = {
            let av = self.value_ref(a);
            if av.rank() != 2 {
                return Err(invalid_shape("softmax", av.shape(), "expects rank 2"));
            }
            if av.cols() == 0 {
                return Err(TensorError::EmptyAxis { op: "softmax" });
            }
            softmax_rows(&av)
        };
        let an = self.needs(a);
        let back: Option<BackFn<T>> = if an {
            let yv = out.clone();
            let ai = a.idx;
            Some(Box::new(move |g, buf| {
                let (m, n) = (yv.rows(), yv.cols());
                let mut da = Tensor::zeros(&[m, n]);
                for i in 0..m {
                    let mut dot = T::zero();
                    for j in 0..n {
                        dot += g.at2(i, j) * yv.at2(i, j);
                    }
                    for j in 0..n {
                        da.set2(i, j, yv.at2(i, j) * (g.at2(i, j) - dot));
                    }
                }
                buf.accumulate(ai, da);
            }))
        } else {
            None
        };
        Ok(self.push(out, an, back))
    }

    pub fn log_softmax(&self, a: Var) -> Result<Var> {
        let out = {
            let av = self.value_ref(a);
            if av.rank() != 2 {
                return Err(invalid_shape("log_softmax", av.shape(), "expects rank 2"));
            }
            if av.cols() == 0 {
                return Err(TensorError::EmptyAxis { op: "log_softmax" });
            }
            let mut o = softmax_rows(&av);
            for x in o.data_mut() {
                *x = x.ln();
            }
            o
        };
        let an = self.needs(a);
        let back: Option<BackFn<T>> = if an {
            let yv = out.clone();
            let ai = a.idx;
            Some(Box::new(move |g, buf| {
                let (m, n) = (yv.rows(), yv.cols());
                let mut da = Tensor::zeros(&[m, n]);
                for i in 0..m {
                    let mut gsum = T::zero();
                    for j in 0..n {
                        gsum += g.at2(i, j);
                    }
                    for j in 0..n {
                        da.set2(i, j, g.at2(i, j) - yv.at2(i, j).exp() * gsum);
                    }
                }
                buf.accumulate(ai, da);
            }))
        } else {
            None
        };
        Ok(self.push(out, an, back))
    }

    // ---- shape ops ----

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value_ref(a).reshaped(shape)?;
        let an = self.needs(a);
        let back: Option<BackFn<T>> = if an {
            let orig = self.shape_of(a);
            let ai = a.idx;
            Some(Box::new(move |g, buf| {
                buf.accumulate(ai, g.reshaped(&orig).expect("reshape backward"));
            }))
        } else {
            None
        };
        Ok(self.push(out, an, back))
    }

    /// Select row `i` of a 2D tensor as a [1, cols] tensor.
    pub fn row(&self, a: Var, i: usize) -> Result<Var> {
        let out = {
            let av = self.value_ref(a);
            if av.rank() != 2 {
                return Err(invalid_shape("row", av.shape(), "expects rank 2"));
            }
            if i >= av.rows() {
                return Err(invalid_shape(
                    "row",
                    av.shape(),
                    format!("row index {i} out of bounds"),
                ));
            }
            Tensor::from_vec(&[1, av.cols()], av.row_slice(i).to_vec())?
        };
        let an = self.needs(a);
        let back: Option<BackFn<T>> = if an {
            let shape = self.shape_of(a);
            let ai = a.idx;
            Some(Box::new(move |g, buf| {
                let mut da = Tensor::zeros(&shape);
                let cols = shape[1];
                da.data_mut()[i * cols..(i + 1) * cols].copy_from_slice(g.data());
                buf.accumulate(ai, da);
            }))
        } else {
            None
        };
        Ok(self.push(out, an, back))
    }

    /// Columns [start, start+len) of a 2D tensor.
    pub fn narrow_cols(&self, a: Var, start: usize, len: usize) -> Result<Var> {
        let out = {
            let av = self.value_ref(a);
            if av.rank() != 2 {
                return Err(invalid_shape("narrow_cols", av.shape(), "expects rank 2"));
            }
            if start + len > av.cols() {
                return Err(invalid_shape(
                    "narrow_cols",
                    av.shape(),
                    format!("columns [{start}, {}) out of bounds", start + len),
                ));
            }
            let mut o = Tensor::zeros(&[av.rows(), len]);
            for r in 0..av.rows() {
                for c in 0..len {
                    o.set2(r, c, av.at2(r, start + c));
                }
            }
            o
        };
        let an = self.needs(a);
        let back: Option<BackFn<T>> = if an {
            let shape = self.shape_of(a);
            let ai = a.idx;
            Some(Box::new(move |g, buf| {
                let mut da = Tensor::zeros(&shape);
                for r in 0..shape[0] {
                    for c in 0..len {
                        da.set2(r, start + c, g.at2(r, c));
                    }
                }
                buf.accumulate(ai, da);
            }))
        } else {
            None
        };
        Ok(self.push(out, an, back))
    }

    /// Stack 2D tensors with equal column counts along axis 0.
    pub fn concat_rows(&self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(TensorError::EmptyAxis { op: "concat_rows" });
        }
        let cols = {
            let first = self.value_ref(parts[0]);
            if first.rank() != 2 {
                return Err(invalid_shape("concat_rows", first.shape(), "expects rank 2"));
            }
            first.cols()
        };
        let mut data = Vec::new();
        let mut row_counts = Vec::with_capacity(parts.len());
        for &p in parts {
            let pv = self.value_ref(p);
            if pv.rank() != 2 || pv.cols() != cols {
                return Err(shape_mismatch("concat_rows", &[cols], pv.shape()));
            }
            row_counts.push(pv.rows());
            data.extend_from_slice(pv.data());
        }
        let total_rows: usize = row_counts.iter().sum();
        let out = Tensor::from_vec(&[total_rows, cols], data)?;
        let needs: Vec<bool> = parts.iter().map(|&p| self.needs(p)).collect();
        let any = needs.iter().any(|&n| n);
        let back: Option<BackFn<T>> = if any {
            let idxs: Vec<usize> = parts.iter().map(|p| p.idx).collect();
            Some(Box::new(move |g, buf| {
                let mut row0 = 0usize;
                for (k, &rows) in row_counts.iter().enumerate() {
                    if needs[k] {
                        let slice = &g.data()[row0 * cols..(row0 + rows) * cols];
                        let dg = Tensor::from_vec(&[rows, cols], slice.to_vec())
                            .expect("concat_rows backward");
                        buf.accumulate(idxs[k], dg);
                    }
                    row0 += rows;
                }
            }))
        } else {
            None
        };
        Ok(self.push(out, any, back))
    }

    /// Concatenate 2D tensors with equal row counts along axis 1.
    pub fn concat_cols(&self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(TensorError::EmptyAxis { op: "concat_cols" });
        }
        let rows = {
            let first = self.value_ref(parts[0]);
            if first.rank() != 2 {
                return Err(invalid_shape("concat_cols", first.shape(), "expects rank 2"));
            }
            first.rows()
        };
        let mut col_counts = Vec::with_capacity(parts.len());
        for &p in parts {
            let pv = self.value_ref(p);
            if pv.rank() != 2 || pv.rows() != rows {
                return Err(shape_mismatch("concat_cols", &[rows], pv.shape()));
            }
            col_counts.push(pv.cols());
        }
        let total_cols: usize = col_counts.iter().sum();
        let mut out = Tensor::zeros(&[rows, total_cols]);
        {
            let mut col0 = 0usize;
            for (k, &p) in parts.iter().enumerate() {
                let pv = self.value_ref(p);
                for r in 0..rows {
                    for c in 0..col_counts[k] {
                        out.set2(r, col0 + c, pv.at2(r, c));
                    }
                }
                col0 += col_counts[k];
            }
        }
        let needs: Vec<bool> = parts.iter().map(|&p| self.needs(p)).collect();
        let any = needs.iter().any(|&n| n);
        let back: Option<BackFn<T>> = if any {
            let idxs: Vec<usize> = parts.iter().map(|p| p.idx).collect();
            Some(Box::new(move |g, buf| {
                let mut col0 = 0usize;
                for (k, &ncols) in col_counts.iter().enumerate() {
                    if needs[k] {
                        let mut dg = Tensor::zeros(&[rows, ncols]);
                        for r in 0..rows {
                            for c in 0..ncols {
                                dg.set2(r, c, g.at2(r, col0 + c));
                            }
                        }
                        buf.accumulate(idxs[k], dg);
                    }
                    col0 += ncols;
                }
            }))
        } else {
            None
        };
        Ok(self.push(out, any, back))
    }

    /// Add a [1, n] row vector to every row of an [m, n] tensor.
    pub fn add_row(&self, a: Var, r: Var) -> Result<Var> {
        let out = {
            let av = self.value_ref(a);
            let rv = self.value_ref(r);
            if av.rank() != 2 || rv.rank() != 2 || rv.rows() != 1 || rv.cols() != av.cols() {
                return Err(shape_mismatch("add_row", av.shape(), rv.shape()));
            }
            let mut o = av.clone();
            let (m, n) = (av.rows(), av.cols());
            for i in 0..m {
                for j in 0..n {
                    let v = o.at2(i, j) + rv.data()[j];
                    o.set2(i, j, v);
                }
            }
            o
        };
        let (an, rn) = (self.needs(a), self.needs(r));
        let back: Option<BackFn<T>> = if an || rn {
            let (ai, ri) = (a.idx, r.idx);
            Some(Box::new(move |g, buf| {
                if an {
                    buf.accumulate(ai, g.clone());
                }
                if rn {
                    let (m, n) = (g.rows(), g.cols());
                    let mut dr = Tensor::zeros(&[1, n]);
                    for i in 0..m {
                        for j in 0..n {
                            dr.data_mut()[j] += g.at2(i, j);
                        }
                    }
                    buf.accumulate(ri, dr);
                }
            }))
        } else {
            None
        };
        Ok(self.push(out, an || rn, back))
    }
}

/// Numerically stable rowwise softmax of a 2D tensor.
pub(crate) fn softmax_rows<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    let (m, n) = (a.rows(), a.cols());
    let mut out = Tensor::zeros(&[m, n]);
    for i in 0..m {
        let row = a.row_slice(i);
        let mut mx = row[0];
        for &x in row {
            if x > mx {
                mx = x;
            }
        }
        let mut denom = T::zero();
        for j in 0..n {
            let e = (row[j] - mx).exp();
            out.set2(i, j, e);
            denom += e;
        }
        for j in 0..n {
            let v = out.at2(i, j) / denom;
            out.set2(i, j, v);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_gradient() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap(), true);
        let sq = tape.square(x);
        let loss = tape.sum_all(sq);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn disconnected_leaf_gets_zeros_via_or_zeros() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap(), true);
        let c = tape.leaf(Tensor::scalar(5.0), true);
        let loss = tape.sum_all(c);
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(x).is_none());
        assert_eq!(grads.or_zeros(x, &[2]).data(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap(), true);
        assert!(matches!(
            tape.backward(x),
            Err(TensorError::NonScalarLoss { .. })
        ));
    }

    #[test]
    fn relu_matches_definition() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_vec(&[3], vec![-1.0, 0.0, 2.0]).unwrap());
        let y = tape.relu(x);
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn matmul_hand_case_on_tape() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = tape.constant(Tensor::from_vec(&[2, 1], vec![5.0, 6.0]).unwrap());
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[17.0, 39.0]);
    }

    #[test]
    fn matmul_shape_mismatch_names_op_and_shapes() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("matmul") && err.contains("[2, 3]"));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.0, 1.0]).unwrap());
        let s = tape.softmax(a).unwrap();
        let sv = tape.value(s);
        for i in 0..2 {
            let sum: f64 = sv.row_slice(i).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn constants_record_no_backward_work() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap());
        let b = tape.constant(Tensor::from_vec(&[2], vec![3.0, 4.0]).unwrap());
        let c = tape.mul(a, b).unwrap();
        assert!(!tape.requires_grad(c));
    }
}
