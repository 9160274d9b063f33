//! 2D convolution and transposed convolution via im2col + GEMM.
//!
//! Kernels use the usual layouts: `[F, C, kh, kw]` for convolution and
//! `[C_in, C_out, kh, kw]` for transposed convolution. A transposed
//! convolution is the adjoint of the convolution with the same geometry.

use crate::error::{Result, TensorError};
use crate::scalar::{gemm_into, MatRef, Scalar};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConvParams {
    pub stride: usize,
    pub padding: usize,
}

impl ConvParams {
    pub fn new(stride: usize, padding: usize) -> Self {
        Self { stride, padding }
    }
}

impl Default for ConvParams {
    fn default() -> Self {
        Self { stride: 1, padding: 0 }
    }
}

/// Which gradients a convolution backward pass should produce.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GradNeeds {
    pub input: bool,
    pub kernel: bool,
}

impl GradNeeds {
    pub const ALL: Self = Self { input: true, kernel: true };
}

#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub kernel: Option<Tensor<T>>,
}

/// `floor((input + 2·padding − kernel) / stride) + 1`
pub fn conv_output_size(input: usize, kernel: usize, p: ConvParams) -> Result<usize> {
    if p.stride == 0 {
        return Err(TensorError::ZeroStride);
    }
    let padded = input + 2 * p.padding;
    if kernel == 0 || padded < kernel {
        return Err(TensorError::Geometry {
            op: "conv2d",
            input,
            kernel,
            stride: p.stride,
            padding: p.padding,
        });
    }
    Ok((padded - kernel) / p.stride + 1)
}

/// `(input − 1)·stride − 2·padding + kernel`
pub fn conv_transpose_output_size(input: usize, kernel: usize, p: ConvParams) -> Result<usize> {
    if p.stride == 0 {
        return Err(TensorError::ZeroStride);
    }
    let full = (input - 1) * p.stride + kernel;
    if kernel == 0 || full <= 2 * p.padding {
        return Err(TensorError::Geometry {
            op: "conv2d_transpose",
            input,
            kernel,
            stride: p.stride,
            padding: p.padding,
        });
    }
    Ok(full - 2 * p.padding)
}

/// Sliding-window geometry: an image of `c × h × w` scanned by a
/// `kh × kw` window producing `oh × ow` positions.
#[derive(Clone, Copy, Debug)]
struct Window {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Window {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    fn cols(&self) -> usize {
        self.n * self.positions()
    }

    /// Source coordinate for window offset `k` at output position `o`.
    #[inline]
    fn source(&self, o: usize, k: usize, limit: usize) -> Option<usize> {
        let v = (o * self.stride + k).checked_sub(self.pad)?;
        (v < limit).then_some(v)
    }
}

/// `[N, C, H, W]` → `[C·kh·kw, N·oh·ow]`.
fn im2col<T: Scalar>(x: &[T], g: &Window) -> Vec<T> {
    let cols = g.cols();
    let l = g.positions();
    let mut col = vec![T::zero(); g.rows() * cols];
    for c in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let r = (c * g.kh + ki) * g.kw + kj;
                let row = &mut col[r * cols..(r + 1) * cols];
                for n in 0..g.n {
                    let img = &x[(n * g.c + c) * g.h * g.w..(n * g.c + c + 1) * g.h * g.w];
                    let dst = &mut row[n * l..(n + 1) * l];
                    for oy in 0..g.oh {
                        let Some(iy) = g.source(oy, ki, g.h) else { continue };
                        for ox in 0..g.ow {
                            if let Some(ix) = g.source(ox, kj, g.w) {
                                dst[oy * g.ow + ox] = img[iy * g.w + ix];
                            }
                        }
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: accumulates `[C·kh·kw, N·oh·ow]` into `[N, C, H, W]`.
fn col2im<T: Scalar>(col: &[T], g: &Window) -> Vec<T> {
    let cols = g.cols();
    let l = g.positions();
    let mut x = vec![T::zero(); g.n * g.c * g.h * g.w];
    for c in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let r = (c * g.kh + ki) * g.kw + kj;
                let row = &col[r * cols..(r + 1) * cols];
                for n in 0..g.n {
                    let img = &mut x[(n * g.c + c) * g.h * g.w..(n * g.c + c + 1) * g.h * g.w];
                    let src = &row[n * l..(n + 1) * l];
                    for oy in 0..g.oh {
                        let Some(iy) = g.source(oy, ki, g.h) else { continue };
                        for ox in 0..g.ow {
                            if let Some(ix) = g.source(ox, kj, g.w) {
                                img[iy * g.w + ix] = img[iy * g.w + ix] + src[oy * g.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

/// `[N, C, L]` → `[C, N·L]`.
fn to_channel_major<T: Scalar>(x: &[T], n: usize, c: usize, l: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for i in 0..n {
        for ch in 0..c {
            let src = &x[(i * c + ch) * l..(i * c + ch + 1) * l];
            out[ch * n * l + i * l..ch * n * l + (i + 1) * l].copy_from_slice(src);
        }
    }
    out
}

/// `[C, N·L]` → `[N, C, L]`.
fn from_channel_major<T: Scalar>(x: &[T], n: usize, c: usize, l: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for i in 0..n {
        for ch in 0..c {
            let src = &x[ch * n * l + i * l..ch * n * l + (i + 1) * l];
            out[(i * c + ch) * l..(i * c + ch + 1) * l].copy_from_slice(src);
        }
    }
    out
}

fn rank4<T>(op: &'static str, t: &Tensor<T>) -> Result<[usize; 4]>
where
    T: Scalar,
{
    match *t.shape() {
        [a, b, c, d] => Ok([a, b, c, d]),
        _ => Err(TensorError::Rank { op, expected: 4, shape: t.shape().to_vec() }),
    }
}

struct ConvPlan {
    window: Window,
    out_channels: usize,
}

fn plan_conv2d<T: Scalar>(input: &Tensor<T>, kernel: &Tensor<T>, p: ConvParams) -> Result<ConvPlan> {
    let [n, c, h, w] = rank4("conv2d", input)?;
    let [f, kc, kh, kw] = rank4("conv2d", kernel)?;
    if kc != c {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            left: input.shape().to_vec(),
            right: kernel.shape().to_vec(),
        });
    }
    let oh = conv_output_size(h, kh, p)?;
    let ow = conv_output_size(w, kw, p)?;
    Ok(ConvPlan {
        window: Window { n, c, h, w, kh, kw, stride: p.stride, pad: p.padding, oh, ow },
        out_channels: f,
    })
}

fn plan_conv_transpose<T: Scalar>(input: &Tensor<T>, kernel: &Tensor<T>, p: ConvParams) -> Result<ConvPlan> {
    let [n, c, h, w] = rank4("conv2d_transpose", input)?;
    let [kc, f, kh, kw] = rank4("conv2d_transpose", kernel)?;
    if kc != c {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d_transpose",
            left: input.shape().to_vec(),
            right: kernel.shape().to_vec(),
        });
    }
    let oh = conv_transpose_output_size(h, kh, p)?;
    let ow = conv_transpose_output_size(w, kw, p)?;
    // The window scans the (larger) output image and lands on the input grid.
    Ok(ConvPlan {
        window: Window { n, c: f, h: oh, w: ow, kh, kw, stride: p.stride, pad: p.padding, oh: h, ow: w },
        out_channels: c,
    })
}

pub fn conv2d<T: Scalar>(input: &Tensor<T>, kernel: &Tensor<T>, p: ConvParams) -> Result<Tensor<T>> {
    let plan = plan_conv2d(input, kernel, p)?;
    let g = plan.window;
    let f = plan.out_channels;
    let col = im2col(input.data(), &g);
    let mut out = vec![T::zero(); f * g.cols()];
    gemm_into(MatRef::new(kernel.data(), f, g.rows()), MatRef::new(&col, g.rows(), g.cols()), T::zero(), &mut out);
    Tensor::new(vec![g.n, f, g.oh, g.ow], from_channel_major(&out, g.n, f, g.positions()))
}

/// Gradients of [`conv2d`] w.r.t. input and kernel.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
    p: ConvParams,
    needs: GradNeeds,
) -> Result<ConvGrads<T>> {
    let plan = plan_conv2d(input, kernel, p)?;
    let g = plan.window;
    let f = plan.out_channels;
    let dout = to_channel_major(grad_out.data(), g.n, f, g.positions());
    let mut grads = ConvGrads { input: None, kernel: None };
    if needs.kernel {
        let col = im2col(input.data(), &g);
        let mut dk = vec![T::zero(); f * g.rows()];
        gemm_into(MatRef::new(&dout, f, g.cols()), MatRef::new(&col, g.rows(), g.cols()).t(), T::zero(), &mut dk);
        grads.kernel = Some(Tensor::new(kernel.shape().to_vec(), dk)?);
    }
    if needs.input {
        let mut dcol = vec![T::zero(); g.rows() * g.cols()];
        gemm_into(MatRef::new(kernel.data(), f, g.rows()).t(), MatRef::new(&dout, f, g.cols()), T::zero(), &mut dcol);
        grads.input = Some(Tensor::new(input.shape().to_vec(), col2im(&dcol, &g))?);
    }
    Ok(grads)
}

pub fn conv2d_transpose<T: Scalar>(input: &Tensor<T>, kernel: &Tensor<T>, p: ConvParams) -> Result<Tensor<T>> {
    let plan = plan_conv_transpose(input, kernel, p)?;
    let g = plan.window;
    let c = plan.out_channels;
    let x = to_channel_major(input.data(), g.n, c, g.positions());
    let mut cols = vec![T::zero(); g.rows() * g.cols()];
    gemm_into(MatRef::new(kernel.data(), c, g.rows()).t(), MatRef::new(&x, c, g.cols()), T::zero(), &mut cols);
    Tensor::new(vec![g.n, g.c, g.h, g.w], col2im(&cols, &g))
}

/// Gradients of [`conv2d_transpose`] w.r.t. input and kernel.
pub fn conv2d_transpose_backward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
    p: ConvParams,
    needs: GradNeeds,
) -> Result<ConvGrads<T>> {
    let plan = plan_conv_transpose(input, kernel, p)?;
    let g = plan.window;
    let c = plan.out_channels;
    let dcols = im2col(grad_out.data(), &g);
    let mut grads = ConvGrads { input: None, kernel: None };
    if needs.input {
        let mut dx = vec![T::zero(); c * g.cols()];
        gemm_into(MatRef::new(kernel.data(), c, g.rows()), MatRef::new(&dcols, g.rows(), g.cols()), T::zero(), &mut dx);
        grads.input = Some(Tensor::new(input.shape().to_vec(), from_channel_major(&dx, g.n, c, g.positions()))?);
    }
    if needs.kernel {
        let x = to_channel_major(input.data(), g.n, c, g.positions());
        let mut dk = vec![T::zero(); c * g.rows()];
        gemm_into(MatRef::new(&x, c, g.cols()), MatRef::new(&dcols, g.rows(), g.cols()).t(), T::zero(), &mut dk);
        grads.kernel = Some(Tensor::new(kernel.shape().to_vec(), dk)?);
    }
    Ok(grads)
}
