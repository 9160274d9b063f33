use crate::error::{Result, TensorError};
use crate::scalar::{gemm_into, MatRef, Scalar};

/// Dense row-major array. Image batches use `N, C, H, W` axis order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        check_dims(&shape)?;
        let expected = shape.iter().product::<usize>();
        if expected != data.len() {
            return Err(TensorError::LengthMismatch { shape, expected, actual: data.len() });
        }
        Ok(Self { shape, data })
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Result<Self> {
        let shape = shape.into();
        check_dims(&shape)?;
        let len = shape.iter().product();
        Ok(Self { shape, data: vec![value; len] })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Result<Self> {
        Self::full(shape, T::one())
    }

    /// Rank-0 tensor holding one value.
    pub fn scalar(value: T) -> Self {
        Self { shape: Vec::new(), data: vec![value] }
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> T) -> Result<Self> {
        let shape = shape.into();
        check_dims(&shape)?;
        let len: usize = shape.iter().product();
        Ok(Self { shape, data: (0..len).map(&mut f).collect() })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Option<T> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        Self::new(shape, self.data.clone())
    }

    pub fn into_reshaped(self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64_lossy(v.to_f64_lossy())).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn dot(&self, other: &Self) -> Result<T> {
        same_shape("dot", self, other)?;
        Ok(self.data.iter().zip(&other.data).map(|(&a, &b)| a * b).sum())
    }

    /// Rows `start..end` along axis 0.
    pub fn slice_outer(&self, start: usize, end: usize) -> Result<Self> {
        if self.shape.is_empty() || start >= end || end > self.shape[0] {
            return Err(TensorError::Rank { op: "slice_outer", expected: 1, shape: self.shape.clone() });
        }
        let inner: usize = self.shape[1..].iter().product();
        let mut shape = self.shape.clone();
        shape[0] = end - start;
        Ok(Self { shape, data: self.data[start * inner..end * inner].to_vec() })
    }

    /// Concatenates tensors along axis 0; all trailing dimensions must agree.
    pub fn concat_outer(parts: &[Self]) -> Result<Self> {
        let first = parts.first().ok_or(TensorError::ZeroDimension(vec![0]))?;
        let tail = &first.shape[1..];
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            if p.shape.is_empty() || &p.shape[1..] != tail {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_outer",
                    left: first.shape.clone(),
                    right: p.shape.clone(),
                });
            }
            rows += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        let mut shape = first.shape.clone();
        shape[0] = rows;
        Ok(Self { shape, data })
    }
}

fn check_dims(shape: &[usize]) -> Result<()> {
    if shape.contains(&0) {
        return Err(TensorError::ZeroDimension(shape.to_vec()));
    }
    Ok(())
}

pub(crate) fn same_shape<T>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape != b.shape {
        return Err(TensorError::ShapeMismatch { op, left: a.shape.clone(), right: b.shape.clone() });
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    Div,
}

/// Right-hand side of an elementwise op.
#[derive(Clone, Copy, Debug)]
pub enum Operand<'a, T> {
    Tensor(&'a Tensor<T>),
    Scalar(T),
}

impl ElementwiseOp {
    fn apply<T: Scalar>(self, a: T, b: T) -> T {
        match self {
            Self::Add => a + b,
            Self::Sub => a - b,
            Self::Mul => a * b,
            Self::Div => a / b,
        }
    }
}

/// Componentwise `a op b`; `b` is a tensor of `a`'s shape or a scalar.
pub fn elementwise<T: Scalar>(op: ElementwiseOp, a: &Tensor<T>, b: Operand<'_, T>) -> Result<Tensor<T>> {
    match b {
        Operand::Tensor(b) => {
            same_shape("elementwise", a, b)?;
            if op == ElementwiseOp::Div {
                if let Some(index) = b.data.iter().position(|v| v.is_zero()) {
                    return Err(TensorError::DivisionByZero { index });
                }
            }
            let data = a.data.iter().zip(&b.data).map(|(&x, &y)| op.apply(x, y)).collect();
            Ok(Tensor { shape: a.shape.clone(), data })
        }
        Operand::Scalar(s) => {
            if op == ElementwiseOp::Div && s.is_zero() {
                return Err(TensorError::DivisionByZero { index: 0 });
            }
            Ok(a.map(|x| op.apply(x, s)))
        }
    }
}

pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() != 2 {
        return Err(TensorError::Rank { op: "matmul", expected: 2, shape: a.shape.clone() });
    }
    if b.rank() != 2 {
        return Err(TensorError::Rank { op: "matmul", expected: 2, shape: b.shape.clone() });
    }
    let (m, k) = (a.shape[0], a.shape[1]);
    let (k2, n) = (b.shape[0], b.shape[1]);
    if k != k2 {
        return Err(TensorError::ShapeMismatch { op: "matmul", left: a.shape.clone(), right: b.shape.clone() });
    }
    let mut out = vec![T::zero(); m * n];
    gemm_into(MatRef::new(&a.data, m, k), MatRef::new(&b.data, k, n), T::zero(), &mut out);
    Ok(Tensor { shape: vec![m, n], data: out })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ActivationKind {
    Relu,
    LeakyRelu { slope: f64 },
    Sigmoid,
    Tanh,
}

impl ActivationKind {
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Self::Relu => x.max(T::zero()),
            Self::LeakyRelu { slope } => {
                if x > T::zero() {
                    x
                } else {
                    x * T::from_f64_lossy(slope)
                }
            }
            Self::Sigmoid => sigmoid(x),
            Self::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the input `x` and output `y`.
    pub(crate) fn derivative<T: Scalar>(self, x: T, y: T) -> T {
        match self {
            Self::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Self::LeakyRelu { slope } => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::from_f64_lossy(slope)
                }
            }
            Self::Sigmoid => y * (T::one() - y),
            Self::Tanh => T::one() - y * y,
        }
    }
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn activation<T: Scalar>(kind: ActivationKind, x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| kind.apply(v))
}
