//! Recorded computation graph with reverse-mode differentiation.
//!
//! Every op evaluates eagerly and appends a node holding its value and
//! whatever the backward rule needs. A graph is built for one forward pass
//! and confined to one thread.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Result, TensorError};
use crate::ops::conv::{self, ConvParams, GradNeeds};
use crate::ops::norm::{self, BatchStats};
use crate::scalar::{gemm_into, MatRef, Scalar};
use crate::tensor::{self, same_shape, ActivationKind, ElementwiseOp, Operand, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

/// Stable name of a trainable parameter, e.g. `gen.3.weight`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub String);

impl fmt::Display for ParamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ParamId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

impl From<String> for ParamId {
    fn from(s: String) -> Self {
        Self(s)
    }
}

#[derive(Clone, Debug)]
pub struct GradRecord<T> {
    pub param: ParamId,
    pub gradient: Tensor<T>,
}

/// One gradient per registered parameter; unreachable parameters get zeros.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    records: Vec<GradRecord<T>>,
    index: BTreeMap<ParamId, usize>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, id: &str) -> Option<&Tensor<T>> {
        self.index.get(&ParamId::from(id)).map(|&i| &self.records[i].gradient)
    }

    pub fn records(&self) -> &[GradRecord<T>] {
        &self.records
    }

    pub fn into_records(self) -> Vec<GradRecord<T>> {
        self.records
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ParamId, &Tensor<T>)> {
        self.records.iter().map(|r| (&r.param, &r.gradient))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.records.iter().all(|r| r.gradient.all_finite())
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Elementwise { op: ElementwiseOp, a: Var, b: Var },
    ScalarOp { op: ElementwiseOp, a: Var, s: T },
    MulConst { x: Var, w: Tensor<T> },
    MatMul { a: Var, b: Var },
    ChannelBias { x: Var, bias: Var },
    Conv2d { x: Var, k: Var, p: ConvParams },
    ConvTranspose2d { x: Var, k: Var, p: ConvParams },
    BatchNormTrain { x: Var, gamma: Var, beta: Var, xhat: Tensor<T>, var: Vec<T>, eps: f64 },
    BatchNormEval { x: Var, gamma: Var, beta: Var, xhat: Tensor<T>, var: Vec<T>, eps: f64 },
    Activation { x: Var, kind: ActivationKind },
    Reshape { x: Var },
    Sum { x: Var },
    Mean { x: Var },
    BceWithLogits { logits: Var, targets: Tensor<T> },
}

#[derive(Clone, Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Tape of eagerly evaluated ops.
#[derive(Clone, Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    params: Vec<(ParamId, Var)>,
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), params: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant input; no gradient is tracked for it.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Trainable parameter; receives a [`GradRecord`] on backward.
    pub fn param(&mut self, id: impl Into<ParamId>, value: Tensor<T>) -> Result<Var> {
        let id = id.into();
        if self.params.iter().any(|(p, _)| *p == id) {
            return Err(TensorError::DuplicateParam(id.0));
        }
        let v = self.push(value, Op::Leaf, true);
        self.params.push((id, v));
        Ok(v)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn elementwise(&mut self, op: ElementwiseOp, a: Var, b: Var) -> Result<Var> {
        let value = tensor::elementwise(op, self.value(a), Operand::Tensor(self.value(b)))?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Elementwise { op, a, b }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(ElementwiseOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(ElementwiseOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(ElementwiseOp::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(ElementwiseOp::Div, a, b)
    }

    pub fn scalar_op(&mut self, op: ElementwiseOp, a: Var, s: T) -> Result<Var> {
        let value = tensor::elementwise(op, self.value(a), Operand::Scalar(s))?;
        let rg = self.needs(a);
        Ok(self.push(value, Op::ScalarOp { op, a, s }, rg))
    }

    pub fn mul_scalar(&mut self, a: Var, s: T) -> Result<Var> {
        self.scalar_op(ElementwiseOp::Mul, a, s)
    }

    /// `x ⊙ w` for a constant `w` (dropout masks with their scale folded in).
    pub fn mul_const(&mut self, x: Var, w: Tensor<T>) -> Result<Var> {
        same_shape("mul_const", self.value(x), &w)?;
        let value = tensor::elementwise(ElementwiseOp::Mul, self.value(x), Operand::Tensor(&w))?;
        let rg = self.needs(x);
        Ok(self.push(value, Op::MulConst { x, w }, rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = tensor::matmul(self.value(a), self.value(b))?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::MatMul { a, b }, rg))
    }

    /// Adds `bias[c]` along axis 1 of a `[N, C, ...]` tensor.
    pub fn add_channel_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xs = self.value(x);
        let bs = self.value(bias);
        if xs.rank() < 2 || bs.shape() != [xs.shape()[1]] {
            return Err(TensorError::ShapeMismatch {
                op: "add_channel_bias",
                left: xs.shape().to_vec(),
                right: bs.shape().to_vec(),
            });
        }
        let c = xs.shape()[1];
        let l: usize = xs.shape()[2..].iter().product();
        let mut value = xs.clone();
        for (i, v) in value.data_mut().iter_mut().enumerate() {
            *v = *v + bs.data()[(i / l) % c];
        }
        let rg = self.needs(x) || self.needs(bias);
        Ok(self.push(value, Op::ChannelBias { x, bias }, rg))
    }

    pub fn conv2d(&mut self, x: Var, k: Var, p: ConvParams) -> Result<Var> {
        let value = conv::conv2d(self.value(x), self.value(k), p)?;
        let rg = self.needs(x) || self.needs(k);
        Ok(self.push(value, Op::Conv2d { x, k, p }, rg))
    }

    pub fn conv2d_transpose(&mut self, x: Var, k: Var, p: ConvParams) -> Result<Var> {
        let value = conv::conv2d_transpose(self.value(x), self.value(k), p)?;
        let rg = self.needs(x) || self.needs(k);
        Ok(self.push(value, Op::ConvTranspose2d { x, k, p }, rg))
    }

    /// Batch-statistics normalization; returns the output and the statistics
    /// the caller folds into its running averages.
    pub fn batchnorm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, BatchStats<T>)> {
        let (value, xhat, stats) = norm::batchnorm_train(self.value(x), self.value(gamma), self.value(beta), eps)?;
        let rg = self.needs(x) || self.needs(gamma) || self.needs(beta);
        let var = stats.var.clone();
        let out = self.push(value, Op::BatchNormTrain { x, gamma, beta, xhat, var, eps }, rg);
        Ok((out, stats))
    }

    pub fn batchnorm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[T],
        running_var: &[T],
        eps: f64,
    ) -> Result<Var> {
        let (value, xhat) =
            norm::batchnorm_eval(self.value(x), self.value(gamma), self.value(beta), running_mean, running_var, eps)?;
        let rg = self.needs(x) || self.needs(gamma) || self.needs(beta);
        let var = running_var.to_vec();
        Ok(self.push(value, Op::BatchNormEval { x, gamma, beta, xhat, var, eps }, rg))
    }

    pub fn activation(&mut self, x: Var, kind: ActivationKind) -> Var {
        let value = tensor::activation(kind, self.value(x));
        let rg = self.needs(x);
        self.push(value, Op::Activation { x, kind }, rg)
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        let rg = self.needs(x);
        Ok(self.push(value, Op::Reshape { x }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        let rg = self.needs(x);
        self.push(value, Op::Sum { x }, rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let value = Tensor::scalar(t.sum() / T::from_f64_lossy(t.len() as f64));
        let rg = self.needs(x);
        self.push(value, Op::Mean { x }, rg)
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against `targets`,
    /// evaluated in the overflow-free form `max(l,0) − l·t + ln(1 + e^−|l|)`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Tensor<T>) -> Result<Var> {
        let l = self.value(logits);
        same_shape("bce_with_logits", l, &targets)?;
        let total: T = l
            .data()
            .iter()
            .zip(targets.data())
            .map(|(&x, &t)| x.max(T::zero()) - x * t + (-x.abs()).exp().ln_1p())
            .sum();
        let value = Tensor::scalar(total / T::from_f64_lossy(l.len() as f64));
        let rg = self.needs(logits);
        Ok(self.push(value, Op::BceWithLogits { logits, targets }, rg))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(TensorError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::new(lv.shape().to_vec(), vec![T::one()])?);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        let mut records = Vec::with_capacity(self.params.len());
        let mut index = BTreeMap::new();
        for (id, v) in &self.params {
            let gradient = match grads.get(v.0).and_then(|g| g.clone()) {
                Some(g) => g,
                None => Tensor::zeros(self.value(*v).shape().to_vec())?,
            };
            index.insert(id.clone(), records.len());
            records.push(GradRecord { param: id.clone(), gradient });
        }
        Ok(Gradients { records, index })
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::Elementwise { op, a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    let da = match op {
                        ElementwiseOp::Add | ElementwiseOp::Sub => g.clone(),
                        ElementwiseOp::Mul => zip(g, bv, |g, b| g * b),
                        ElementwiseOp::Div => zip(g, bv, |g, b| g / b),
                    };
                    accumulate(grads, *a, da);
                }
                if self.needs(*b) {
                    let db = match op {
                        ElementwiseOp::Add => g.clone(),
                        ElementwiseOp::Sub => g.map(|v| -v),
                        ElementwiseOp::Mul => zip(g, av, |g, a| g * a),
                        ElementwiseOp::Div => {
                            let mut d = zip(g, av, |g, a| g * a);
                            for (d, &b) in d.data_mut().iter_mut().zip(bv.data()) {
                                *d = -*d / (b * b);
                            }
                            d
                        }
                    };
                    accumulate(grads, *b, db);
                }
            }
            Op::ScalarOp { op, a, s } => {
                let s = *s;
                let da = match op {
                    ElementwiseOp::Add | ElementwiseOp::Sub => g.clone(),
                    ElementwiseOp::Mul => g.map(|v| v * s),
                    ElementwiseOp::Div => g.map(|v| v / s),
                };
                accumulate(grads, *a, da);
            }
            Op::MulConst { x, w } => accumulate(grads, *x, zip(g, w, |g, w| g * w)),
            Op::MatMul { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if self.needs(*a) {
                    let mut da = vec![T::zero(); m * k];
                    gemm_into(MatRef::new(g.data(), m, n), MatRef::new(bv.data(), k, n).t(), T::zero(), &mut da);
                    accumulate(grads, *a, Tensor::new(vec![m, k], da)?);
                }
                if self.needs(*b) {
                    let mut db = vec![T::zero(); k * n];
                    gemm_into(MatRef::new(av.data(), m, k).t(), MatRef::new(g.data(), m, n), T::zero(), &mut db);
                    accumulate(grads, *b, Tensor::new(vec![k, n], db)?);
                }
            }
            Op::ChannelBias { x, bias } => {
                if self.needs(*x) {
                    accumulate(grads, *x, g.clone());
                }
                if self.needs(*bias) {
                    let c = self.value(*bias).len();
                    let l: usize = g.shape()[2..].iter().product();
                    let mut db = vec![T::zero(); c];
                    for (i, &v) in g.data().iter().enumerate() {
                        db[(i / l) % c] = db[(i / l) % c] + v;
                    }
                    accumulate(grads, *bias, Tensor::new(vec![c], db)?);
                }
            }
            Op::Conv2d { x, k, p } => {
                let needs = GradNeeds { input: self.needs(*x), kernel: self.needs(*k) };
                let cg = conv::conv2d_backward(self.value(*x), self.value(*k), g, *p, needs)?;
                if let Some(dx) = cg.input {
                    accumulate(grads, *x, dx);
                }
                if let Some(dk) = cg.kernel {
                    accumulate(grads, *k, dk);
                }
            }
            Op::ConvTranspose2d { x, k, p } => {
                let needs = GradNeeds { input: self.needs(*x), kernel: self.needs(*k) };
                let cg = conv::conv2d_transpose_backward(self.value(*x), self.value(*k), g, *p, needs)?;
                if let Some(dx) = cg.input {
                    accumulate(grads, *x, dx);
                }
                if let Some(dk) = cg.kernel {
                    accumulate(grads, *k, dk);
                }
            }
            Op::BatchNormTrain { x, gamma, beta, xhat, var, eps } => {
                let (dx, dg, db) = norm::batchnorm_train_backward(g, xhat, self.value(*gamma), var, *eps)?;
                self.accumulate_norm(grads, (*x, dx), (*gamma, dg), (*beta, db));
            }
            Op::BatchNormEval { x, gamma, beta, xhat, var, eps } => {
                let (dx, dg, db) = norm::batchnorm_eval_backward(g, xhat, self.value(*gamma), var, *eps)?;
                self.accumulate_norm(grads, (*x, dx), (*gamma, dg), (*beta, db));
            }
            Op::Activation { x, kind } => {
                let xv = self.value(*x);
                let mut dx = g.clone();
                for ((d, &xi), &yi) in dx.data_mut().iter_mut().zip(xv.data()).zip(node.value.data()) {
                    *d = *d * kind.derivative(xi, yi);
                }
                accumulate(grads, *x, dx);
            }
            Op::Reshape { x } => {
                let shape = self.value(*x).shape().to_vec();
                accumulate(grads, *x, g.reshape(shape)?);
            }
            Op::Sum { x } => {
                let shape = self.value(*x).shape().to_vec();
                accumulate(grads, *x, Tensor::full(shape, g.data()[0])?);
            }
            Op::Mean { x } => {
                let xv = self.value(*x);
                let scale = g.data()[0] / T::from_f64_lossy(xv.len() as f64);
                accumulate(grads, *x, Tensor::full(xv.shape().to_vec(), scale)?);
            }
            Op::BceWithLogits { logits, targets } => {
                let lv = self.value(*logits);
                let scale = g.data()[0] / T::from_f64_lossy(lv.len() as f64);
                let d = zip(lv, targets, |l, t| (tensor::sigmoid(l) - t) * scale);
                accumulate(grads, *logits, d);
            }
        }
        Ok(())
    }

    fn accumulate_norm(
        &self,
        grads: &mut [Option<Tensor<T>>],
        x: (Var, Tensor<T>),
        gamma: (Var, Tensor<T>),
        beta: (Var, Tensor<T>),
    ) {
        for (v, d) in [x, gamma, beta] {
            if self.needs(v) {
                accumulate(grads, v, d);
            }
        }
    }
}

fn zip<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let mut out = a.clone();
    for (o, &bv) in out.data_mut().iter_mut().zip(b.data()) {
        *o = f(*o, bv);
    }
    out
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], v: Var, d: Tensor<T>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, &x) in existing.data_mut().iter_mut().zip(d.data()) {
                *e = *e + x;
            }
        }
        slot @ None => *slot = Some(d),
    }
}
