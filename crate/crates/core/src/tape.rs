//! Reverse-mode differentiation over an append-only tape.
//!
//! Every op evaluates eagerly, pushes a node holding its output value and
//! whatever it needs for the backward pass, and returns a [`Var`] handle.
//! Node ids grow monotonically, so the tape is always topologically
//! ordered and [`Tape::backward`] is a single reverse sweep.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg;
use crate::tensor::{Real, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Op tag of a tape node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    MatMul,
    Conv2d,
    AddBias,
    Add,
    Sub,
    Mul,
    Relu,
    Upsample,
    Concat,
    MeanRows,
    Reshape,
    Gather,
    Sum,
    SoftmaxCrossEntropy,
}

impl OpKind {
    pub const ALL: [OpKind; 15] = [
        OpKind::Leaf,
        OpKind::MatMul,
        OpKind::Conv2d,
        OpKind::AddBias,
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::Relu,
        OpKind::Upsample,
        OpKind::Concat,
        OpKind::MeanRows,
        OpKind::Reshape,
        OpKind::Gather,
        OpKind::Sum,
        OpKind::SoftmaxCrossEntropy,
    ];

    /// Snake-case name, matching the tape method that records the op.
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::MatMul => "matmul",
            OpKind::Conv2d => "conv2d",
            OpKind::AddBias => "add_bias",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Relu => "relu",
            OpKind::Upsample => "upsample",
            OpKind::Concat => "concat",
            OpKind::MeanRows => "mean_rows",
            OpKind::Reshape => "reshape",
            OpKind::Gather => "gather_rows",
            OpKind::Sum => "sum",
            OpKind::SoftmaxCrossEntropy => "softmax_cross_entropy",
        }
    }
}

enum Op<T> {
    Leaf,
    MatMul { a: Var, b: Var },
    Conv2d { x: Var, kernel: Var, stride: usize },
    AddBias { x: Var, bias: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Relu { x: Var },
    Upsample { x: Var, factor: usize },
    Concat { a: Var, b: Var },
    MeanRows { x: Var, group: usize },
    Reshape { x: Var },
    Gather { x: Var, index: Arc<[usize]> },
    Sum { x: Var },
    SoftmaxCrossEntropy { logits: Var, labels: Vec<u8>, probs: Vec<T> },
}

impl<T> Op<T> {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul { .. } => OpKind::MatMul,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::AddBias { .. } => OpKind::AddBias,
            Op::Add { .. } => OpKind::Add,
            Op::Sub { .. } => OpKind::Sub,
            Op::Mul { .. } => OpKind::Mul,
            Op::Relu { .. } => OpKind::Relu,
            Op::Upsample { .. } => OpKind::Upsample,
            Op::Concat { .. } => OpKind::Concat,
            Op::MeanRows { .. } => OpKind::MeanRows,
            Op::Reshape { .. } => OpKind::Reshape,
            Op::Gather { .. } => OpKind::Gather,
            Op::Sum { .. } => OpKind::Sum,
            Op::SoftmaxCrossEntropy { .. } => OpKind::SoftmaxCrossEntropy,
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match *self {
            Op::Leaf => vec![],
            Op::MatMul { a, b } | Op::Add { a, b } | Op::Sub { a, b } | Op::Mul { a, b } => {
                vec![a, b]
            }
            Op::Concat { a, b } => vec![a, b],
            Op::Conv2d { x, kernel, .. } => vec![x, kernel],
            Op::AddBias { x, bias } => vec![x, bias],
            Op::Relu { x }
            | Op::Upsample { x, .. }
            | Op::MeanRows { x, .. }
            | Op::Reshape { x }
            | Op::Gather { x, .. }
            | Op::Sum { x } => vec![x],
            Op::SoftmaxCrossEntropy { logits, .. } => vec![logits],
        }
    }
}

struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
}

/// Gradients produced by one backward sweep, indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the output with respect to `v`; `None` when `v` does not
    /// reach the output.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }

    /// Gradient with respect to `v`, zeros when `v` does not reach the output.
    pub fn wrt(&self, v: Var) -> Tensor<T> {
        self.grads[v.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    fault: Option<OpKind>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), fault: None }
    }

    /// Corrupts the backward rule of every node of `kind` by scaling the
    /// gradients it emits by 1.5. Test fixture for the gradient checker.
    #[doc(hidden)]
    pub fn with_fault(mut self, kind: OpKind) -> Self {
        self.fault = Some(kind);
        self
    }

    pub fn fault(&self) -> Option<OpKind> {
        self.fault
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    /// Op kinds in tape order.
    pub fn kinds(&self) -> Vec<OpKind> {
        self.nodes.iter().map(|n| n.op.kind()).collect()
    }

    /// Sign pattern of every relu on the tape. Two evaluations with equal
    /// patterns lie on the same linear piece of the recorded function.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.nodes
            .iter()
            .filter(|n| matches!(n.op, Op::Relu { .. }))
            .flat_map(|n| n.value.data().iter().map(|&v| v > T::zero()))
            .collect()
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape(format!("matmul of {sa:?} by {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = linalg::gemm(self.value(a).data(), self.value(b).data(), m, k, n);
        let value = Tensor::new(&[m, n], out)?;
        Ok(self.push(Op::MatMul { a, b }, value))
    }

    /// 3×3 convolution with zero padding 1. `x` is H×W×Cin, `kernel` is
    /// 3×3×Cin×Cout; output is ⌈H/stride⌉×⌈W/stride⌉×Cout.
    pub fn conv2d(&mut self, x: Var, kernel: Var, stride: usize) -> Result<Var> {
        let (sx, sk) = (self.shape(x), self.shape(kernel));
        if !(stride == 1 || stride == 2) {
            return Err(Error::Shape(format!("conv2d stride must be 1 or 2, got {stride}")));
        }
        if sx.len() != 3 || sk.len() != 4 || sk[0] != 3 || sk[1] != 3 || sk[2] != sx[2] {
            return Err(Error::Shape(format!("conv2d of {sx:?} with kernel {sk:?}")));
        }
        let geo = ConvGeometry::new(sx[0], sx[1], sx[2], sk[3], stride);
        let out = geo.forward(self.value(x).data(), self.value(kernel).data());
        let value = Tensor::new(&[geo.oh, geo.ow, geo.cout], out)?;
        Ok(self.push(Op::Conv2d { x, kernel, stride }, value))
    }

    /// Adds `bias` (length = last axis of `x`) to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        if sb.len() != 1 || sb[0] != *sx.last().unwrap() {
            return Err(Error::Shape(format!("bias {sb:?} does not match {sx:?}")));
        }
        let c = sb[0];
        let b = self.value(bias).data().to_vec();
        let mut value = self.value(x).clone();
        for row in value.data_mut().chunks_mut(c) {
            for (v, &bv) in row.iter_mut().zip(&b) {
                *v = *v + bv;
            }
        }
        Ok(self.push(Op::AddBias { x, bias }, value))
    }

    fn zip_op(&mut self, a: Var, b: Var, name: &str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::Shape(format!("{name} of {sa:?} and {sb:?}")));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(sa, data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_op(a, b, "add", |x, y| x + y)?;
        Ok(self.push(Op::Add { a, b }, value))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_op(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(Op::Sub { a, b }, value))
    }

    /// Elementwise product of identically shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_op(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(Op::Mul { a, b }, value))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let value = Tensor::new(
            src.shape(),
            src.data().iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect(),
        )
        .unwrap();
        self.push(Op::Relu { x }, value)
    }

    /// Bilinear upsampling of an H×W×C map by an integer factor, half-pixel
    /// aligned with edge clamping.
    pub fn upsample(&mut self, x: Var, factor: usize) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 3 || factor == 0 {
            return Err(Error::Shape(format!("upsample of {s:?} by {factor}")));
        }
        let (h, w, c) = (s[0], s[1], s[2]);
        let rows = interp_table(h, factor);
        let cols = interp_table(w, factor);
        let src = self.value(x).data();
        let (oh, ow) = (h * factor, w * factor);
        let mut out = vec![T::zero(); oh * ow * c];
        for (oy, ry) in rows.iter().enumerate() {
            for (ox, rx) in cols.iter().enumerate() {
                let dst = &mut out[(oy * ow + ox) * c..][..c];
                for (iy, wy) in ry.taps() {
                    for (ix, wx) in rx.taps() {
                        let wgt = T::lit(wy * wx);
                        let s = &src[(iy * w + ix) * c..][..c];
                        for (d, &v) in dst.iter_mut().zip(s) {
                            *d = *d + wgt * v;
                        }
                    }
                }
            }
        }
        let value = Tensor::new(&[oh, ow, c], out)?;
        Ok(self.push(Op::Upsample { x, factor }, value))
    }

    /// Concatenates along the last axis; leading axes must agree. Channels of
    /// `a` come first.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let r = sa.len();
        if r != sb.len() || sa[..r - 1] != sb[..r - 1] {
            return Err(Error::Shape(format!("concat of {sa:?} and {sb:?}")));
        }
        let (ca, cb) = (sa[r - 1], sb[r - 1]);
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let rows = da.len() / ca;
        let mut out = Vec::with_capacity(da.len() + db.len());
        for i in 0..rows {
            out.extend_from_slice(&da[i * ca..(i + 1) * ca]);
            out.extend_from_slice(&db[i * cb..(i + 1) * cb]);
        }
        let mut shape = sa.clone();
        shape[r - 1] = ca + cb;
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(Op::Concat { a, b }, value))
    }

    /// Mean over consecutive groups of `group` rows: (group·n)×C → n×C.
    pub fn mean_rows(&mut self, x: Var, group: usize) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 || group == 0 || !s[0].is_multiple_of(group) {
            return Err(Error::Shape(format!("mean_rows of {s:?} in groups of {group}")));
        }
        let (rows, c) = (s[0], s[1]);
        let n = rows / group;
        let inv = T::lit(1.0 / group as f64);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); n * c];
        for i in 0..n {
            let dst = &mut out[i * c..(i + 1) * c];
            for g in 0..group {
                let row = &src[(i * group + g) * c..][..c];
                for (d, &v) in dst.iter_mut().zip(row) {
                    *d = *d + v;
                }
            }
            dst.iter_mut().for_each(|d| *d = *d * inv);
        }
        let value = Tensor::new(&[n, c], out)?;
        Ok(self.push(Op::MeanRows { x, group }, value))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(Op::Reshape { x }, value))
    }

    /// Row gather: output row j is row `index[j]` of the N×C input.
    pub fn gather_rows(&mut self, x: Var, index: Arc<[usize]>) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(Error::Shape(format!("gather_rows needs a matrix, got {s:?}")));
        }
        let (n, c) = (s[0], s[1]);
        if let Some(&bad) = index.iter().find(|&&i| i >= n) {
            return Err(Error::Shape(format!("gather index {bad} out of range for {n} rows")));
        }
        if index.is_empty() {
            return Err(Error::Shape("gather with empty index".into()));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(index.len() * c);
        for &i in index.iter() {
            out.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let value = Tensor::new(&[index.len(), c], out)?;
        Ok(self.push(Op::Gather { x, index }, value))
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        self.push(Op::Sum { x }, value)
    }

    /// Mean over pixels of −log softmax(logits)[label]. `logits` is H×W×K,
    /// `labels` holds H·W class ids.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[u8]) -> Result<Var> {
        let s = self.shape(logits);
        if s.len() != 3 || s[0] * s[1] != labels.len() {
            return Err(Error::Shape(format!(
                "cross-entropy of logits {s:?} against {} labels",
                labels.len()
            )));
        }
        let k = s[2];
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= k) {
            return Err(Error::Value(format!("label {bad} out of range for {k} classes")));
        }
        let z = self.value(logits).data();
        let mut probs = vec![T::zero(); z.len()];
        let mut total = 0.0f64;
        for (p, (&label, row)) in labels.iter().zip(z.chunks(k)).enumerate() {
            let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let mut denom = T::zero();
            for (q, &v) in probs[p * k..][..k].iter_mut().zip(row) {
                *q = (v - max).exp();
                denom = denom + *q;
            }
            probs[p * k..][..k].iter_mut().for_each(|q| *q = *q / denom);
            let lse = max + denom.ln();
            total += (lse - row[label as usize]).as_f64();
        }
        let loss = T::lit(total / labels.len() as f64);
        let value = Tensor::scalar(loss);
        Ok(self.push(
            Op::SoftmaxCrossEntropy { logits, labels: labels.to_vec(), probs },
            value,
        ))
    }

    /// Backward sweep from a one-element output, seeded with 1.
    pub fn backward(&self, output: Var) -> Result<Gradients<T>> {
        let s = self.shape(output);
        if s.iter().product::<usize>() != 1 {
            return Err(Error::Shape(format!("backward needs a scalar output, got {s:?}")));
        }
        self.backward_with(output, Tensor::full(s, T::one()))
    }

    /// Backward sweep with an explicit output gradient.
    pub fn backward_with(&self, output: Var, seed: Tensor<T>) -> Result<Gradients<T>> {
        if seed.shape() != self.shape(output) {
            return Err(Error::Shape(format!(
                "seed gradient {:?} does not match output {:?}",
                seed.shape(),
                self.shape(output)
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(seed);
        for id in (0..=output.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            let mut contribs = self.node_backward(node, &g);
            if self.fault == Some(node.op.kind()) {
                if let Some((_, t)) = contribs.first_mut() {
                    let k = T::lit(1.5);
                    t.data_mut().iter_mut().for_each(|v| *v = *v * k);
                }
            }
            for (input, t) in contribs {
                debug_assert!(input.0 < id, "tape order violated");
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&t),
                    slot @ None => *slot = Some(t),
                }
            }
            grads[id] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn node_backward(&self, node: &Node<T>, g: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
        let gd = g.data();
        match &node.op {
            Op::Leaf => vec![],
            &Op::MatMul { a, b } => {
                let (sa, sb) = (self.shape(a), self.shape(b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (av, bv) = (self.value(a).data(), self.value(b).data());
                // grad_a = g·bᵀ, grad_b = aᵀ·g
                let ga = linalg::gemm_bt(gd, bv, m, n, k);
                let gb = linalg::gemm_at(av, gd, m, k, n);
                vec![(a, tensor(sa, ga)), (b, tensor(sb, gb))]
            }
            &Op::Conv2d { x, kernel, stride } => {
                let (sx, sk) = (self.shape(x), self.shape(kernel));
                let geo = ConvGeometry::new(sx[0], sx[1], sx[2], sk[3], stride);
                let (gx, gk) = geo.backward(self.value(x).data(), self.value(kernel).data(), gd);
                vec![(x, tensor(sx, gx)), (kernel, tensor(sk, gk))]
            }
            &Op::AddBias { x, bias } => {
                let c = self.shape(bias)[0];
                let mut gb = vec![T::zero(); c];
                for row in gd.chunks(c) {
                    for (d, &v) in gb.iter_mut().zip(row) {
                        *d = *d + v;
                    }
                }
                vec![(x, g.clone()), (bias, tensor(&[c], gb))]
            }
            &Op::Add { a, b } => vec![(a, g.clone()), (b, g.clone())],
            &Op::Sub { a, b } => {
                let neg = gd.iter().map(|&v| -v).collect();
                vec![(a, g.clone()), (b, tensor(g.shape(), neg))]
            }
            &Op::Mul { a, b } => {
                let (av, bv) = (self.value(a).data(), self.value(b).data());
                let ga = gd.iter().zip(bv).map(|(&g, &y)| g * y).collect();
                let gb = gd.iter().zip(av).map(|(&g, &x)| g * x).collect();
                vec![(a, tensor(g.shape(), ga)), (b, tensor(g.shape(), gb))]
            }
            &Op::Relu { x } => {
                let out = node.value.data();
                let gx = gd
                    .iter()
                    .zip(out)
                    .map(|(&g, &y)| if y > T::zero() { g } else { T::zero() })
                    .collect();
                vec![(x, tensor(g.shape(), gx))]
            }
            &Op::Upsample { x, factor } => {
                let s = self.shape(x);
                let (h, w, c) = (s[0], s[1], s[2]);
                let rows = interp_table(h, factor);
                let cols = interp_table(w, factor);
                let ow = w * factor;
                let mut gx = vec![T::zero(); h * w * c];
                for (oy, ry) in rows.iter().enumerate() {
                    for (ox, rx) in cols.iter().enumerate() {
                        let src = &gd[(oy * ow + ox) * c..][..c];
                        for (iy, wy) in ry.taps() {
                            for (ix, wx) in rx.taps() {
                                let wgt = T::lit(wy * wx);
                                let dst = &mut gx[(iy * w + ix) * c..][..c];
                                for (d, &v) in dst.iter_mut().zip(src) {
                                    *d = *d + wgt * v;
                                }
                            }
                        }
                    }
                }
                vec![(x, tensor(s, gx))]
            }
            &Op::Concat { a, b } => {
                let (sa, sb) = (self.shape(a), self.shape(b));
                let (ca, cb) = (*sa.last().unwrap(), *sb.last().unwrap());
                let rows = gd.len() / (ca + cb);
                let mut ga = Vec::with_capacity(rows * ca);
                let mut gb = Vec::with_capacity(rows * cb);
                for row in gd.chunks(ca + cb) {
                    ga.extend_from_slice(&row[..ca]);
                    gb.extend_from_slice(&row[ca..]);
                }
                vec![(a, tensor(sa, ga)), (b, tensor(sb, gb))]
            }
            &Op::MeanRows { x, group } => {
                let s = self.shape(x);
                let c = s[1];
                let inv = T::lit(1.0 / group as f64);
                let mut gx = vec![T::zero(); s[0] * c];
                for (r, dst) in gx.chunks_mut(c).enumerate() {
                    let src = &gd[(r / group) * c..][..c];
                    for (d, &v) in dst.iter_mut().zip(src) {
                        *d = v * inv;
                    }
                }
                vec![(x, tensor(s, gx))]
            }
            &Op::Reshape { x } => vec![(x, tensor(self.shape(x), gd.to_vec()))],
            Op::Gather { x, index } => {
                let s = self.shape(*x);
                let c = s[1];
                let mut gx = vec![T::zero(); s[0] * c];
                for (j, &i) in index.iter().enumerate() {
                    let src = &gd[j * c..(j + 1) * c];
                    for (d, &v) in gx[i * c..(i + 1) * c].iter_mut().zip(src) {
                        *d = *d + v;
                    }
                }
                vec![(*x, tensor(s, gx))]
            }
            &Op::Sum { x } => {
                let s = self.shape(x);
                vec![(x, Tensor::full(s, gd[0]))]
            }
            Op::SoftmaxCrossEntropy { logits, labels, probs } => {
                let s = self.shape(*logits);
                let k = s[2];
                let scale = gd[0] / T::lit(labels.len() as f64);
                let mut gz: Vec<T> = probs.iter().map(|&p| p * scale).collect();
                for (p, &l) in labels.iter().enumerate() {
                    let idx = p * k + l as usize;
                    gz[idx] = gz[idx] - scale;
                }
                vec![(*logits, tensor(s, gz))]
            }
        }
    }

    /// Input ids of node `v`.
    pub fn inputs(&self, v: Var) -> Vec<Var> {
        self.nodes[v.0].op.inputs()
    }
}

fn tensor<T: Real>(shape: &[usize], data: Vec<T>) -> Tensor<T> {
    Tensor::new(shape, data).expect("backward produced a mis-sized gradient")
}

struct ConvGeometry {
    h: usize,
    w: usize,
    cin: usize,
    cout: usize,
    stride: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeometry {
    fn new(h: usize, w: usize, cin: usize, cout: usize, stride: usize) -> Self {
        Self { h, w, cin, cout, stride, oh: h.div_ceil(stride), ow: w.div_ceil(stride) }
    }

    /// Input position under tap (ky, kx) for output (oy, ox), if in bounds.
    #[inline]
    fn source(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<usize> {
        let iy = (oy * self.stride + ky).checked_sub(1)?;
        let ix = (ox * self.stride + kx).checked_sub(1)?;
        (iy < self.h && ix < self.w).then_some(iy * self.w + ix)
    }

    /// Patch matrix: one row of 9·Cin input values per output pixel, taps
    /// in (ky, kx) order, zero where the tap falls in the padding.
    fn im2col<T: Real>(&self, x: &[T]) -> Vec<T> {
        let (cin, kk) = (self.cin, 9 * self.cin);
        let mut cols = vec![T::zero(); self.oh * self.ow * kk];
        for oy in 0..self.oh {
            for ox in 0..self.ow {
                let row = &mut cols[(oy * self.ow + ox) * kk..][..kk];
                for tap in 0..9 {
                    if let Some(pos) = self.source(oy, ox, tap / 3, tap % 3) {
                        row[tap * cin..][..cin].copy_from_slice(&x[pos * cin..][..cin]);
                    }
                }
            }
        }
        cols
    }

    /// Adjoint of [`Self::im2col`].
    fn col2im<T: Real>(&self, cols: &[T]) -> Vec<T> {
        let (cin, kk) = (self.cin, 9 * self.cin);
        let mut x = vec![T::zero(); self.h * self.w * cin];
        for oy in 0..self.oh {
            for ox in 0..self.ow {
                let row = &cols[(oy * self.ow + ox) * kk..][..kk];
                for tap in 0..9 {
                    if let Some(pos) = self.source(oy, ox, tap / 3, tap % 3) {
                        for (d, &v) in x[pos * cin..][..cin].iter_mut().zip(&row[tap * cin..][..cin]) {
                            *d = *d + v;
                        }
                    }
                }
            }
        }
        x
    }

    fn forward<T: Real>(&self, x: &[T], k: &[T]) -> Vec<T> {
        let cols = self.im2col(x);
        linalg::gemm(&cols, k, self.oh * self.ow, 9 * self.cin, self.cout)
    }

    fn backward<T: Real>(&self, x: &[T], k: &[T], g: &[T]) -> (Vec<T>, Vec<T>) {
        let (npix, kk) = (self.oh * self.ow, 9 * self.cin);
        let cols = self.im2col(x);
        let gk = linalg::gemm_at(&cols, g, npix, kk, self.cout);
        let gcols = linalg::gemm_bt(g, k, npix, self.cout, kk);
        (self.col2im(&gcols), gk)
    }
}

/// Two-tap linear interpolation weights for one output coordinate.
#[derive(Clone, Copy)]
struct Interp {
    i0: usize,
    i1: usize,
    w1: f64,
}

impl Interp {
    fn taps(self) -> impl Iterator<Item = (usize, f64)> {
        let first = std::iter::once((self.i0, 1.0 - self.w1));
        let second = (self.i1 != self.i0).then_some((self.i1, self.w1));
        first.chain(second)
    }
}

fn interp_table(len: usize, factor: usize) -> Vec<Interp> {
    (0..len * factor)
        .map(|o| {
            let src = ((o as f64 + 0.5) / factor as f64 - 0.5).clamp(0.0, (len - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(len - 1);
            let w1 = if i1 == i0 { 0.0 } else { src - i0 as f64 };
            Interp { i0, i1, w1 }
        })
        .collect()
}
