//! Reverse-mode autodiff tape.
//!
//! A [`Graph`] is rebuilt per forward pass (define-by-run). Nodes hold their
//! value and the op that produced them; [`Graph::backward`] walks the tape in
//! reverse, accumulating gradients. The op set is exactly what the detector
//! and its losses need; every op's gradient is covered by the finite
//! difference tests in this module.

use crate::Scalar;

use super::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddScalar(Var, T),
    MulScalar(Var, T),
    Silu(Var),
    Sigmoid(Var),
    Atan(Var),
    MinElem(Var, Var),
    MaxElem(Var, Var),
    Clamp(Var, T, T),
    ConcatC(Var, Var),
    Upsample2x(Var),
    ChwToRows(Var),
    GatherRows(Var, Vec<usize>),
    Reshape(Var),
    ColSlice(Var, usize),
    RowSoftmax(Var),
    RowLogSoftmax(Var),
    RowDotConst(Var, Tensor<T>),
    RowWeightedSumConst(Var, Vec<T>),
    RowGroupSum(Var, usize),
    BceLogits(Var, Tensor<T>),
    BceProb(Var, Tensor<T>),
    SumAll(Var),
    MeanAll(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients of one backward pass, indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }
}

fn stable_sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Trainable leaf.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Non-trainable constant.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip(self.value(b), |x, y| x + y);
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip(self.value(b), |x, y| x - y);
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip(self.value(b), |x, y| x * y);
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::Mul(a, b), ng)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip(self.value(b), |x, y| x / y);
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::Div(a, b), ng)
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        let value = self.value(x).map(|v| v + c);
        let ng = self.needs(x);
        self.push(value, Op::AddScalar(x, c), ng)
    }

    pub fn mul_scalar(&mut self, x: Var, c: T) -> Var {
        let value = self.value(x).map(|v| v * c);
        let ng = self.needs(x);
        self.push(value, Op::MulScalar(x, c), ng)
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v * stable_sigmoid(v));
        let ng = self.needs(x);
        self.push(value, Op::Silu(x), ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(stable_sigmoid);
        let ng = self.needs(x);
        self.push(value, Op::Sigmoid(x), ng)
    }

    pub fn atan(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.atan());
        let ng = self.needs(x);
        self.push(value, Op::Atan(x), ng)
    }

    pub fn min_elem(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip(self.value(b), |x, y| x.min(y));
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::MinElem(a, b), ng)
    }

    pub fn max_elem(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip(self.value(b), |x, y| x.max(y));
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::MaxElem(a, b), ng)
    }

    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Var {
        let value = self.value(x).map(|v| v.max(lo).min(hi));
        let ng = self.needs(x);
        self.push(value, Op::Clamp(x, lo, hi), ng)
    }

    /// 2D convolution over `[C, H, W]` with square kernel, zero padding.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let value = conv2d_forward(
            self.value(x),
            self.value(w),
            b.map(|bv| self.value(bv)),
            stride,
            pad,
        );
        let ng = self.needs(x) || self.needs(w) || b.map(|bv| self.needs(bv)).unwrap_or(false);
        self.push(
            value,
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            },
            ng,
        )
    }

    /// Concatenate two `[C, H, W]` maps along channels.
    pub fn concat_c(&mut self, a: Var, b: Var) -> Var {
        let (ca, h, w) = self.value(a).dims3();
        let (cb, hb, wb) = self.value(b).dims3();
        assert_eq!((h, w), (hb, wb), "concat_c spatial mismatch");
        let mut data = Vec::with_capacity((ca + cb) * h * w);
        data.extend_from_slice(self.value(a).data());
        data.extend_from_slice(self.value(b).data());
        let value = Tensor::from_vec(&[ca + cb, h, w], data);
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::ConcatC(a, b), ng)
    }

    /// Nearest-neighbor 2x upsample of `[C, H, W]`.
    pub fn upsample2x(&mut self, x: Var) -> Var {
        let (c, h, w) = self.value(x).dims3();
        let mut out = Tensor::zeros(&[c, 2 * h, 2 * w]);
        {
            let src = self.value(x).data();
            let dst = out.data_mut();
            for ci in 0..c {
                for ih in 0..h {
                    for iw in 0..w {
                        let v = src[(ci * h + ih) * w + iw];
                        let base = ci * 4 * h * w;
                        for dy in 0..2 {
                            for dx in 0..2 {
                                dst[base + (2 * ih + dy) * 2 * w + 2 * iw + dx] = v;
                            }
                        }
                    }
                }
            }
        }
        let ng = self.needs(x);
        self.push(out, Op::Upsample2x(x), ng)
    }

    /// `[C, H, W]` to `[H * W, C]` (cells as rows).
    pub fn chw_to_rows(&mut self, x: Var) -> Var {
        let (c, h, w) = self.value(x).dims3();
        let src = self.value(x).data();
        let mut data = vec![T::zero(); c * h * w];
        for ci in 0..c {
            for pos in 0..h * w {
                data[pos * c + ci] = src[ci * h * w + pos];
            }
        }
        let value = Tensor::from_vec(&[h * w, c], data);
        let ng = self.needs(x);
        self.push(value, Op::ChwToRows(x), ng)
    }

    /// Select rows of a `[N, C]` matrix.
    pub fn gather_rows(&mut self, x: Var, idx: Vec<usize>) -> Var {
        let (n, c) = self.value(x).dims2();
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in &idx {
            assert!(i < n, "gather_rows index out of range");
            data.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let value = Tensor::from_vec(&[idx.len(), c], data);
        let ng = self.needs(x);
        self.push(value, Op::GatherRows(x, idx), ng)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let value = self.value(x).reshaped(shape);
        let ng = self.needs(x);
        self.push(value, Op::Reshape(x), ng)
    }

    /// Column `col` of a `[n, k]` matrix as a `[n]` vector.
    pub fn col_slice(&mut self, x: Var, col: usize) -> Var {
        let (n, k) = self.value(x).dims2();
        assert!(col < k);
        let src = self.value(x).data();
        let data: Vec<T> = (0..n).map(|i| src[i * k + col]).collect();
        let value = Tensor::from_vec(&[n], data);
        let ng = self.needs(x);
        self.push(value, Op::ColSlice(x, col), ng)
    }

    pub fn row_softmax(&mut self, x: Var) -> Var {
        let (n, k) = self.value(x).dims2();
        let src = self.value(x).data();
        let mut data = vec![T::zero(); n * k];
        for i in 0..n {
            let row = &src[i * k..(i + 1) * k];
            let max = row.iter().fold(T::neg_infinity(), |a, b| a.max(*b));
            let mut sum = T::zero();
            for j in 0..k {
                let e = (row[j] - max).exp();
                data[i * k + j] = e;
                sum += e;
            }
            for j in 0..k {
                data[i * k + j] = data[i * k + j] / sum;
            }
        }
        let value = Tensor::from_vec(&[n, k], data);
        let ng = self.needs(x);
        self.push(value, Op::RowSoftmax(x), ng)
    }

    pub fn row_log_softmax(&mut self, x: Var) -> Var {
        let (n, k) = self.value(x).dims2();
        let src = self.value(x).data();
        let mut data = vec![T::zero(); n * k];
        for i in 0..n {
            let row = &src[i * k..(i + 1) * k];
            let max = row.iter().fold(T::neg_infinity(), |a, b| a.max(*b));
            let mut sum = T::zero();
            for v in row {
                sum += (*v - max).exp();
            }
            let log_z = max + sum.ln();
            for j in 0..k {
                data[i * k + j] = row[j] - log_z;
            }
        }
        let value = Tensor::from_vec(&[n, k], data);
        let ng = self.needs(x);
        self.push(value, Op::RowLogSoftmax(x), ng)
    }

    /// Per-row dot product with a constant coefficient matrix: `[n, k] -> [n]`.
    pub fn row_dot_const(&mut self, x: Var, coef: Tensor<T>) -> Var {
        let (n, k) = self.value(x).dims2();
        assert_eq!(coef.shape(), &[n, k], "row_dot_const coef shape");
        let src = self.value(x).data();
        let cf = coef.data();
        let data: Vec<T> = (0..n)
            .map(|i| {
                let mut acc = T::zero();
                for j in 0..k {
                    acc += src[i * k + j] * cf[i * k + j];
                }
                acc
            })
            .collect();
        let value = Tensor::from_vec(&[n], data);
        let ng = self.needs(x);
        self.push(value, Op::RowDotConst(x, coef), ng)
    }

    /// Per-row weighted sum with a constant weight vector: `[n, k] -> [n]`.
    pub fn row_weighted_sum(&mut self, x: Var, weights: Vec<T>) -> Var {
        let (n, k) = self.value(x).dims2();
        assert_eq!(weights.len(), k, "row_weighted_sum weight length");
        let src = self.value(x).data();
        let data: Vec<T> = (0..n)
            .map(|i| {
                let mut acc = T::zero();
                for j in 0..k {
                    acc += src[i * k + j] * weights[j];
                }
                acc
            })
            .collect();
        let value = Tensor::from_vec(&[n], data);
        let ng = self.needs(x);
        self.push(value, Op::RowWeightedSumConst(x, weights), ng)
    }

    /// Sum consecutive column groups of size `group`: `[n, k] -> [n, k / group]`.
    pub fn row_group_sum(&mut self, x: Var, group: usize) -> Var {
        let (n, k) = self.value(x).dims2();
        assert_eq!(k % group, 0, "row_group_sum group size");
        let g = k / group;
        let src = self.value(x).data();
        let mut data = vec![T::zero(); n * g];
        for i in 0..n {
            for j in 0..k {
                data[i * g + j / group] += src[i * k + j];
            }
        }
        let value = Tensor::from_vec(&[n, g], data);
        let ng = self.needs(x);
        self.push(value, Op::RowGroupSum(x, group), ng)
    }

    /// Elementwise binary cross-entropy on logits against constant targets.
    /// Numerically stable `max(x, 0) - x t + ln(1 + exp(-|x|))`.
    pub fn bce_with_logits(&mut self, x: Var, targets: Tensor<T>) -> Var {
        assert_eq!(self.value(x).shape(), targets.shape(), "bce target shape");
        let t = targets.data();
        let src = self.value(x).data();
        let data: Vec<T> = src
            .iter()
            .zip(t)
            .map(|(xv, tv)| {
                xv.max(T::zero()) - *xv * *tv + (T::one() + (-xv.abs()).exp()).ln()
            })
            .collect();
        let value = Tensor::from_vec(self.value(x).shape(), data);
        let ng = self.needs(x);
        self.push(value, Op::BceLogits(x, targets), ng)
    }

    /// Elementwise binary cross-entropy on probabilities (caller clamps the
    /// input away from 0 and 1).
    pub fn bce_on_probs(&mut self, p: Var, targets: Tensor<T>) -> Var {
        assert_eq!(self.value(p).shape(), targets.shape(), "bce target shape");
        let t = targets.data();
        let src = self.value(p).data();
        let data: Vec<T> = src
            .iter()
            .zip(t)
            .map(|(pv, tv)| -(*tv * pv.ln() + (T::one() - *tv) * (T::one() - *pv).ln()))
            .collect();
        let value = Tensor::from_vec(self.value(p).shape(), data);
        let ng = self.needs(p);
        self.push(value, Op::BceProb(p, targets), ng)
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let mut acc = T::zero();
        for v in self.value(x).data() {
            acc += *v;
        }
        let ng = self.needs(x);
        self.push(Tensor::scalar(acc), Op::SumAll(x), ng)
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.value(x).len();
        let mut acc = T::zero();
        for v in self.value(x).data() {
            acc += *v;
        }
        let ng = self.needs(x);
        self.push(
            Tensor::scalar(acc / T::from_f64_lossy(n as f64)),
            Op::MeanAll(x),
            ng,
        )
    }

    /// Reverse pass from a scalar loss node.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        assert_eq!(self.value(loss).len(), 1, "backward from non-scalar");
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(T::one()));

        for i in (0..self.nodes.len()).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].clone() else { continue };
            self.accumulate_parents(i, &g, &mut grads);
        }
        Gradients { grads }
    }

    fn ensure<'a>(
        grads: &'a mut Vec<Option<Tensor<T>>>,
        v: Var,
        shape: &[usize],
    ) -> &'a mut Tensor<T> {
        grads[v.0].get_or_insert_with(|| Tensor::zeros(shape))
    }

    fn accumulate_parents(&self, i: usize, g: &Tensor<T>, grads: &mut Vec<Option<Tensor<T>>>) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            } => {
                let want_db = b.map(|bv| self.needs(bv)).unwrap_or(false);
                let (dx, dw, db) = conv2d_backward(
                    self.value(*x),
                    self.value(*w),
                    g,
                    *stride,
                    *pad,
                    self.needs(*x),
                    self.needs(*w),
                    want_db,
                );
                if let Some(dx) = dx {
                    Self::ensure(grads, *x, dx.shape()).add_assign(&dx);
                }
                if let Some(dw) = dw {
                    Self::ensure(grads, *w, dw.shape()).add_assign(&dw);
                }
                if let (Some(db), Some(bv)) = (db, *b) {
                    Self::ensure(grads, bv, db.shape()).add_assign(&db);
                }
            }
            Op::Add(a, b) => {
                if self.needs(*a) {
                    Self::ensure(grads, *a, g.shape()).add_assign(g);
                }
                if self.needs(*b) {
                    Self::ensure(grads, *b, g.shape()).add_assign(g);
                }
            }
            Op::Sub(a, b) => {
                if self.needs(*a) {
                    Self::ensure(grads, *a, g.shape()).add_assign(g);
                }
                if self.needs(*b) {
                    Self::ensure(grads, *b, g.shape()).add_scaled(g, -T::one());
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    let gb = g.zip(self.value(*b), |gv, bv| gv * bv);
                    Self::ensure(grads, *a, g.shape()).add_assign(&gb);
                }
                if self.needs(*b) {
                    let ga = g.zip(self.value(*a), |gv, av| gv * av);
                    Self::ensure(grads, *b, g.shape()).add_assign(&ga);
                }
            }
            Op::Div(a, b) => {
                if self.needs(*a) {
                    let da = g.zip(self.value(*b), |gv, bv| gv / bv);
                    Self::ensure(grads, *a, g.shape()).add_assign(&da);
                }
                if self.needs(*b) {
                    let bv = self.value(*b);
                    let av = self.value(*a);
                    let mut db = g.clone();
                    for ((d, a_), b_) in db.data_mut().iter_mut().zip(av.data()).zip(bv.data()) {
                        *d = -*d * *a_ / (*b_ * *b_);
                    }
                    Self::ensure(grads, *b, g.shape()).add_assign(&db);
                }
            }
            Op::AddScalar(x, _) => {
                if self.needs(*x) {
                    Self::ensure(grads, *x, g.shape()).add_assign(g);
                }
            }
            Op::MulScalar(x, c) => {
                if self.needs(*x) {
                    Self::ensure(grads, *x, g.shape()).add_scaled(g, *c);
                }
            }
            Op::Silu(x) => {
                if self.needs(*x) {
                    let xv = self.value(*x);
                    let dx = g.zip(xv, |gv, v| {
                        let s = stable_sigmoid(v);
                        gv * (s * (T::one() + v * (T::one() - s)))
                    });
                    Self::ensure(grads, *x, g.shape()).add_assign(&dx);
                }
            }
            Op::Sigmoid(x) => {
                if self.needs(*x) {
                    let y = &node.value;
                    let dx = g.zip(y, |gv, yv| gv * yv * (T::one() - yv));
                    Self::ensure(grads, *x, g.shape()).add_assign(&dx);
                }
            }
            Op::Atan(x) => {
                if self.needs(*x) {
                    let xv = self.value(*x);
                    let dx = g.zip(xv, |gv, v| gv / (T::one() + v * v));
                    Self::ensure(grads, *x, g.shape()).add_assign(&dx);
                }
            }
            Op::MinElem(a, b) => {
                // Ties route to the first operand.
                let av = self.value(*a);
                let bv = self.value(*b);
                if self.needs(*a) {
                    let da = Tensor::from_vec(
                        g.shape(),
                        g.data()
                            .iter()
                            .zip(av.data().iter().zip(bv.data()))
                            .map(|(gv, (x_, y_))| if x_ <= y_ { *gv } else { T::zero() })
                            .collect(),
                    );
                    Self::ensure(grads, *a, g.shape()).add_assign(&da);
                }
                if self.needs(*b) {
                    let db = Tensor::from_vec(
                        g.shape(),
                        g.data()
                            .iter()
                            .zip(av.data().iter().zip(bv.data()))
                            .map(|(gv, (x_, y_))| if y_ < x_ { *gv } else { T::zero() })
                            .collect(),
                    );
                    Self::ensure(grads, *b, g.shape()).add_assign(&db);
                }
            }
            Op::MaxElem(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                if self.needs(*a) {
                    let da = Tensor::from_vec(
                        g.shape(),
                        g.data()
                            .iter()
                            .zip(av.data().iter().zip(bv.data()))
                            .map(|(gv, (x_, y_))| if x_ >= y_ { *gv } else { T::zero() })
                            .collect(),
                    );
                    Self::ensure(grads, *a, g.shape()).add_assign(&da);
                }
                if self.needs(*b) {
                    let db = Tensor::from_vec(
                        g.shape(),
                        g.data()
                            .iter()
                            .zip(av.data().iter().zip(bv.data()))
                            .map(|(gv, (x_, y_))| if y_ > x_ { *gv } else { T::zero() })
                            .collect(),
                    );
                    Self::ensure(grads, *b, g.shape()).add_assign(&db);
                }
            }
            Op::Clamp(x, lo, hi) => {
                if self.needs(*x) {
                    let xv = self.value(*x);
                    let dx = g.zip(xv, |gv, v| {
                        if v > *lo && v < *hi {
                            gv
                        } else {
                            T::zero()
                        }
                    });
                    Self::ensure(grads, *x, g.shape()).add_assign(&dx);
                }
            }
            Op::ConcatC(a, b) => {
                let (ca, h, w) = self.value(*a).dims3();
                let (cb, _, _) = self.value(*b).dims3();
                if self.needs(*a) {
                    let da = Tensor::from_vec(&[ca, h, w], g.data()[..ca * h * w].to_vec());
                    Self::ensure(grads, *a, &[ca, h, w]).add_assign(&da);
                }
                if self.needs(*b) {
                    let db = Tensor::from_vec(&[cb, h, w], g.data()[ca * h * w..].to_vec());
                    Self::ensure(grads, *b, &[cb, h, w]).add_assign(&db);
                }
            }
            Op::Upsample2x(x) => {
                if self.needs(*x) {
                    let (c, h, w) = self.value(*x).dims3();
                    let mut dx = Tensor::zeros(&[c, h, w]);
                    {
                        let dst = dx.data_mut();
                        let gd = g.data();
                        for ci in 0..c {
                            for ih in 0..h {
                                for iw in 0..w {
                                    let base = ci * 4 * h * w;
                                    let mut acc = T::zero();
                                    for dy in 0..2 {
                                        for dxp in 0..2 {
                                            acc += gd
                                                [base + (2 * ih + dy) * 2 * w + 2 * iw + dxp];
                                        }
                                    }
                                    dst[(ci * h + ih) * w + iw] = acc;
                                }
                            }
                        }
                    }
                    Self::ensure(grads, *x, &[c, h, w]).add_assign(&dx);
                }
            }
            Op::ChwToRows(x) => {
                if self.needs(*x) {
                    let (c, h, w) = self.value(*x).dims3();
                    let mut dx = Tensor::zeros(&[c, h, w]);
                    {
                        let dst = dx.data_mut();
                        let gd = g.data();
                        for ci in 0..c {
                            for pos in 0..h * w {
                                dst[ci * h * w + pos] = gd[pos * c + ci];
                            }
                        }
                    }
                    Self::ensure(grads, *x, &[c, h, w]).add_assign(&dx);
                }
            }
            Op::GatherRows(x, idx) => {
                if self.needs(*x) {
                    let (n, c) = self.value(*x).dims2();
                    let gx = Self::ensure(grads, *x, &[n, c]);
                    let gd = g.data();
                    for (row, &src_row) in idx.iter().enumerate() {
                        for j in 0..c {
                            gx.data_mut()[src_row * c + j] += gd[row * c + j];
                        }
                    }
                }
            }
            Op::Reshape(x) => {
                if self.needs(*x) {
                    let shape = self.value(*x).shape().to_vec();
                    let dg = g.reshaped(&shape);
                    Self::ensure(grads, *x, &shape).add_assign(&dg);
                }
            }
            Op::ColSlice(x, col) => {
                if self.needs(*x) {
                    let (n, k) = self.value(*x).dims2();
                    let gx = Self::ensure(grads, *x, &[n, k]);
                    for i in 0..n {
                        gx.data_mut()[i * k + col] += g.data()[i];
                    }
                }
            }
            Op::RowSoftmax(x) => {
                if self.needs(*x) {
                    let (n, k) = node.value.dims2();
                    let y = node.value.data();
                    let gd = g.data();
                    let mut dx = vec![T::zero(); n * k];
                    for i in 0..n {
                        let mut dot = T::zero();
                        for j in 0..k {
                            dot += gd[i * k + j] * y[i * k + j];
                        }
                        for j in 0..k {
                            dx[i * k + j] = y[i * k + j] * (gd[i * k + j] - dot);
                        }
                    }
                    Self::ensure(grads, *x, &[n, k])
                        .add_assign(&Tensor::from_vec(&[n, k], dx));
                }
            }
            Op::RowLogSoftmax(x) => {
                if self.needs(*x) {
                    let (n, k) = node.value.dims2();
                    let y = node.value.data();
                    let gd = g.data();
                    let mut dx = vec![T::zero(); n * k];
                    for i in 0..n {
                        let mut gsum = T::zero();
                        for j in 0..k {
                            gsum += gd[i * k + j];
                        }
                        for j in 0..k {
                            dx[i * k + j] = gd[i * k + j] - y[i * k + j].exp() * gsum;
                        }
                    }
                    Self::ensure(grads, *x, &[n, k])
                        .add_assign(&Tensor::from_vec(&[n, k], dx));
                }
            }
            Op::RowDotConst(x, coef) => {
                if self.needs(*x) {
                    let (n, k) = self.value(*x).dims2();
                    let gx = Self::ensure(grads, *x, &[n, k]);
                    let cf = coef.data();
                    for i in 0..n {
                        for j in 0..k {
                            gx.data_mut()[i * k + j] += g.data()[i] * cf[i * k + j];
                        }
                    }
                }
            }
            Op::RowWeightedSumConst(x, weights) => {
                if self.needs(*x) {
                    let (n, k) = self.value(*x).dims2();
                    let gx = Self::ensure(grads, *x, &[n, k]);
                    for i in 0..n {
                        for j in 0..k {
                            gx.data_mut()[i * k + j] += g.data()[i] * weights[j];
                        }
                    }
                }
            }
            Op::RowGroupSum(x, group) => {
                if self.needs(*x) {
                    let (n, k) = self.value(*x).dims2();
                    let gprime = k / group;
                    let gx = Self::ensure(grads, *x, &[n, k]);
                    for i in 0..n {
                        for j in 0..k {
                            gx.data_mut()[i * k + j] += g.data()[i * gprime + j / group];
                        }
                    }
                }
            }
            Op::BceLogits(x, targets) => {
                if self.needs(*x) {
                    let xv = self.value(*x);
                    let dx = Tensor::from_vec(
                        g.shape(),
                        g.data()
                            .iter()
                            .zip(xv.data().iter().zip(targets.data()))
                            .map(|(gv, (x_, t_))| *gv * (stable_sigmoid(*x_) - *t_))
                            .collect(),
                    );
                    Self::ensure(grads, *x, g.shape()).add_assign(&dx);
                }
            }
            Op::BceProb(p, targets) => {
                if self.needs(*p) {
                    let pv = self.value(*p);
                    let dx = Tensor::from_vec(
                        g.shape(),
                        g.data()
                            .iter()
                            .zip(pv.data().iter().zip(targets.data()))
                            .map(|(gv, (p_, t_))| {
                                *gv * ((*p_ - *t_) / (*p_ * (T::one() - *p_)))
                            })
                            .collect(),
                    );
                    Self::ensure(grads, *p, g.shape()).add_assign(&dx);
                }
            }
            Op::SumAll(x) => {
                if self.needs(*x) {
                    let shape = self.value(*x).shape().to_vec();
                    let gv = g.item();
                    let gx = Self::ensure(grads, *x, &shape);
                    for v in gx.data_mut() {
                        *v += gv;
                    }
                }
            }
            Op::MeanAll(x) => {
                if self.needs(*x) {
                    let shape = self.value(*x).shape().to_vec();
                    let n = T::from_f64_lossy(self.value(*x).len() as f64);
                    let gv = g.item() / n;
                    let gx = Self::ensure(grads, *x, &shape);
                    for v in gx.data_mut() {
                        *v += gv;
                    }
                }
            }
        }
    }
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Tensor<T> {
    let (ci, h, wd) = x.dims3();
    let ws = w.shape();
    assert_eq!(ws.len(), 4, "conv weight must be rank 4");
    let (co, wci, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
    assert_eq!(wci, ci, "conv channel mismatch: input {ci}, weight {wci}");
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;

    let mut out = Tensor::zeros(&[co, oh, ow]);
    let xd = x.data();
    let wdt = w.data();
    let od = out.data_mut();

    if let Some(bias) = b {
        assert_eq!(bias.shape(), &[co], "conv bias shape");
        for c in 0..co {
            let bv = bias.data()[c];
            for v in &mut od[c * oh * ow..(c + 1) * oh * ow] {
                *v = bv;
            }
        }
    }

    for c in 0..co {
        for ic in 0..ci {
            for ky in 0..kh {
                for kx in 0..kw {
                    let wv = wdt[((c * ci + ic) * kh + ky) * kw + kx];
                    if wv == T::zero() {
                        continue;
                    }
                    for oy in 0..oh {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let xrow = ic * h * wd + iy as usize * wd;
                        let orow = c * oh * ow + oy * ow;
                        for ox in 0..ow {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= wd as isize {
                                continue;
                            }
                            od[orow + ox] += wv * xd[xrow + ix as usize];
                        }
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    g: &Tensor<T>,
    stride: usize,
    pad: usize,
    want_dx: bool,
    want_dw: bool,
    want_db: bool,
) -> (Option<Tensor<T>>, Option<Tensor<T>>, Option<Tensor<T>>) {
    let (ci, h, wd) = x.dims3();
    let ws = w.shape();
    let (co, _, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
    let (gco, oh, ow) = g.dims3();
    assert_eq!(gco, co);

    let xd = x.data();
    let wdt = w.data();
    let gd = g.data();

    let db = want_db.then(|| {
        let mut db = Tensor::zeros(&[co]);
        for c in 0..co {
            let mut acc = T::zero();
            for v in &gd[c * oh * ow..(c + 1) * oh * ow] {
                acc += *v;
            }
            db.data_mut()[c] = acc;
        }
        db
    });

    let dw = want_dw.then(|| {
        let mut dw = Tensor::zeros(w.shape());
        for c in 0..co {
            for ic in 0..ci {
                for ky in 0..kh {
                    for kx in 0..kw {
                        let mut acc = T::zero();
                        for oy in 0..oh {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let xrow = ic * h * wd + iy as usize * wd;
                            let grow = c * oh * ow + oy * ow;
                            for ox in 0..ow {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix < 0 || ix >= wd as isize {
                                    continue;
                                }
                                acc += gd[grow + ox] * xd[xrow + ix as usize];
                            }
                        }
                        dw.data_mut()[((c * ci + ic) * kh + ky) * kw + kx] = acc;
                    }
                }
            }
        }
        dw
    });

    let dx = want_dx.then(|| {
        let mut dx = Tensor::zeros(x.shape());
        let dxd = dx.data_mut();
        for c in 0..co {
            for ic in 0..ci {
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wv = wdt[((c * ci + ic) * kh + ky) * kw + kx];
                        if wv == T::zero() {
                            continue;
                        }
                        for oy in 0..oh {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let xrow = ic * h * wd + iy as usize * wd;
                            let grow = c * oh * ow + oy * ow;
                            for ox in 0..ow {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix < 0 || ix >= wd as isize {
                                    continue;
                                }
                                dxd[xrow + ix as usize] += wv * gd[grow + ox];
                            }
                        }
                    }
                }
            }
        }
        dx
    });

    (dx, dw, db)
}
