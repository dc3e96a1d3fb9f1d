use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::scalar::matmul;
use super::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    /// Weight `[out, in, k, k]`.
    Conv,
    /// Weight `[in, out, k, k]`.
    TransposeConv,
    /// Weight `[out, in]`.
    FullyConnected,
    /// Weight `[out, in, 1, 1]`.
    Lateral1x1,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T> {
    pub kind: LayerKind,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Gradients for one [`LayerParams`], shaped like it.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrads<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> LayerParams<T> {
    pub fn new(kind: LayerKind, weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let ws = weight.shape();
        let ok = match kind {
            LayerKind::Conv | LayerKind::TransposeConv => ws.len() == 4 && ws[2] == ws[3],
            LayerKind::Lateral1x1 => ws.len() == 4 && ws[2] == 1 && ws[3] == 1,
            LayerKind::FullyConnected => ws.len() == 2,
        };
        if !ok {
            return Err(Error::Shape(format!("{kind:?} weight has shape {ws:?}")));
        }
        let n_out = match kind {
            LayerKind::TransposeConv => ws[1],
            _ => ws[0],
        };
        if bias.shape() != [n_out] {
            return Err(Error::Shape(format!(
                "{kind:?} bias {:?}, expected [{n_out}]",
                bias.shape()
            )));
        }
        Ok(Self { kind, weight, bias })
    }

    pub fn zeros(kind: LayerKind, weight_shape: &[usize]) -> Result<Self> {
        let n_out = match kind {
            LayerKind::TransposeConv => weight_shape[1],
            _ => weight_shape[0],
        };
        Self::new(kind, Tensor::zeros(weight_shape), Tensor::zeros(&[n_out]))
    }

    pub fn zero_grads(&self) -> LayerGrads<T> {
        LayerGrads {
            weight: Tensor::zeros(self.weight.shape()),
            bias: Tensor::zeros(self.bias.shape()),
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn in_channels(&self) -> usize {
        match self.kind {
            LayerKind::TransposeConv => self.weight.dim(0),
            _ => self.weight.dim(1),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.bias.len()
    }

    fn kernel(&self) -> usize {
        match self.kind {
            LayerKind::FullyConnected => 1,
            _ => self.weight.dim(2),
        }
    }

    pub fn cast<U: Scalar>(&self) -> LayerParams<U> {
        LayerParams {
            kind: self.kind,
            weight: self.weight.cast(),
            bias: self.bias.cast(),
        }
    }
}

impl<T: Scalar> LayerGrads<T> {
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.weight.add_assign(&other.weight)?;
        self.bias.add_assign(&other.bias)
    }
}

pub fn conv_output_extent(extent: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    (extent + 2 * padding).saturating_sub(kernel) / stride + 1
}

pub fn transpose_conv_output_extent(
    extent: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> usize {
    (extent - 1) * stride + kernel - 2 * padding
}

struct Geometry {
    channels: usize,
    height: usize,
    width: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Visits every (column-matrix index, image index) pair that lies inside
    /// the padded image.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize)) {
        let k = self.kernel;
        let ncols = self.col_cols();
        for c in 0..self.channels {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    for oy in 0..self.out_h {
                        let y = (oy * self.stride + ki) as isize - self.padding as isize;
                        if y < 0 || y >= self.height as isize {
                            continue;
                        }
                        let img_row = (c * self.height + y as usize) * self.width;
                        let col_row = row * ncols + oy * self.out_w;
                        for ox in 0..self.out_w {
                            let x = (ox * self.stride + kj) as isize - self.padding as isize;
                            if x < 0 || x >= self.width as isize {
                                continue;
                            }
                            f(col_row + ox, img_row + x as usize);
                        }
                    }
                }
            }
        }
    }

    fn im2col<T: Scalar>(&self, img: &[T], cols: &mut [T]) {
        cols.fill(T::zero());
        self.for_each_tap(|ci, ii| cols[ci] = img[ii]);
    }

    fn col2im<T: Scalar>(&self, cols: &[T], img: &mut [T]) {
        self.for_each_tap(|ci, ii| img[ii] += cols[ci]);
    }
}

fn check_image_input<T: Scalar>(input: &Tensor<T>, params: &LayerParams<T>) -> Result<()> {
    if input.rank() != 4 {
        return Err(Error::Shape(format!(
            "{:?} expects [batch, channels, h, w], got {:?}",
            params.kind,
            input.shape()
        )));
    }
    if input.dim(1) != params.in_channels() {
        return Err(Error::Shape(format!(
            "{:?} expects {} input channels, got {}",
            params.kind,
            params.in_channels(),
            input.dim(1)
        )));
    }
    Ok(())
}

fn conv_geometry<T: Scalar>(
    input: &Tensor<T>,
    params: &LayerParams<T>,
    stride: usize,
    padding: usize,
) -> Result<Geometry> {
    if !matches!(params.kind, LayerKind::Conv | LayerKind::Lateral1x1) {
        return Err(Error::Shape(format!("conv2d given {:?} params", params.kind)));
    }
    check_image_input(input, params)?;
    let k = params.kernel();
    let (h, w) = (input.dim(2), input.dim(3));
    if h + 2 * padding < k || w + 2 * padding < k || stride == 0 {
        return Err(Error::Shape(format!(
            "kernel {k} does not fit {h}x{w} with padding {padding}"
        )));
    }
    Ok(Geometry {
        channels: input.dim(1),
        height: h,
        width: w,
        kernel: k,
        stride,
        padding,
        out_h: conv_output_extent(h, k, stride, padding),
        out_w: conv_output_extent(w, k, stride, padding),
    })
}

/// Geometry of the equivalent forward convolution mapping the transposed
/// output back onto its input.
fn transpose_geometry<T: Scalar>(
    input: &Tensor<T>,
    params: &LayerParams<T>,
    stride: usize,
    padding: usize,
) -> Result<Geometry> {
    if params.kind != LayerKind::TransposeConv {
        return Err(Error::Shape(format!(
            "transpose_conv2d given {:?} params",
            params.kind
        )));
    }
    check_image_input(input, params)?;
    let k = params.kernel();
    let (h, w) = (input.dim(2), input.dim(3));
    if (h - 1) * stride + k <= 2 * padding || stride == 0 {
        return Err(Error::Shape(format!(
            "transpose kernel {k} stride {stride} padding {padding} collapses {h}x{w}"
        )));
    }
    Ok(Geometry {
        channels: params.out_channels(),
        height: transpose_conv_output_extent(h, k, stride, padding),
        width: transpose_conv_output_extent(w, k, stride, padding),
        kernel: k,
        stride,
        padding,
        out_h: h,
        out_w: w,
    })
}

pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    params: &LayerParams<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let g = conv_geometry(input, params, stride, padding)?;
    let batch = input.dim(0);
    let n_out = params.out_channels();
    let mut out = Tensor::zeros(&[batch, n_out, g.out_h, g.out_w]);
    let mut cols = vec![T::zero(); g.col_rows() * g.col_cols()];
    for b in 0..batch {
        g.im2col(input.item(b), &mut cols);
        let dst = out.item_mut(b);
        matmul(
            n_out,
            g.col_rows(),
            g.col_cols(),
            params.weight.data(),
            false,
            &cols,
            false,
            dst,
            false,
        );
        add_channel_bias(dst, params.bias.data(), g.col_cols());
    }
    Ok(out)
}

/// Returns `(grad_input, grad_params)` for [`conv2d`].
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    params: &LayerParams<T>,
    stride: usize,
    padding: usize,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, LayerGrads<T>)> {
    let g = conv_geometry(input, params, stride, padding)?;
    let batch = input.dim(0);
    let n_out = params.out_channels();
    if grad_out.shape() != [batch, n_out, g.out_h, g.out_w] {
        return Err(Error::Shape(format!(
            "conv2d grad_out {:?} vs output [{batch}, {n_out}, {}, {}]",
            grad_out.shape(),
            g.out_h,
            g.out_w
        )));
    }
    let mut grads = params.zero_grads();
    let mut grad_in = Tensor::zeros(input.shape());
    let mut cols = vec![T::zero(); g.col_rows() * g.col_cols()];
    let mut grad_cols = vec![T::zero(); g.col_rows() * g.col_cols()];
    for b in 0..batch {
        let go = grad_out.item(b);
        g.im2col(input.item(b), &mut cols);
        // dW += dY * cols^T
        matmul(
            n_out,
            g.col_cols(),
            g.col_rows(),
            go,
            false,
            &cols,
            true,
            grads.weight.data_mut(),
            true,
        );
        // dcols = W^T * dY
        matmul(
            g.col_rows(),
            n_out,
            g.col_cols(),
            params.weight.data(),
            true,
            go,
            false,
            &mut grad_cols,
            false,
        );
        g.col2im(&grad_cols, grad_in.item_mut(b));
        accumulate_channel_sums(grads.bias.data_mut(), go, g.col_cols());
    }
    Ok((grad_in, grads))
}

pub fn transpose_conv2d<T: Scalar>(
    input: &Tensor<T>,
    params: &LayerParams<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let g = transpose_geometry(input, params, stride, padding)?;
    let batch = input.dim(0);
    let n_in = params.in_channels();
    let mut out = Tensor::zeros(&[batch, g.channels, g.height, g.width]);
    let mut cols = vec![T::zero(); g.col_rows() * g.col_cols()];
    for b in 0..batch {
        // cols = W^T * x, W viewed as [in, out*k*k]
        matmul(
            g.col_rows(),
            n_in,
            g.col_cols(),
            params.weight.data(),
            true,
            input.item(b),
            false,
            &mut cols,
            false,
        );
        let dst = out.item_mut(b);
        g.col2im(&cols, dst);
        add_channel_bias(dst, params.bias.data(), g.height * g.width);
    }
    Ok(out)
}

/// Returns `(grad_input, grad_params)` for [`transpose_conv2d`].
pub fn transpose_conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    params: &LayerParams<T>,
    stride: usize,
    padding: usize,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, LayerGrads<T>)> {
    let g = transpose_geometry(input, params, stride, padding)?;
    let batch = input.dim(0);
    let n_in = params.in_channels();
    if grad_out.shape() != [batch, g.channels, g.height, g.width] {
        return Err(Error::Shape(format!(
            "transpose_conv2d grad_out {:?} vs output [{batch}, {}, {}, {}]",
            grad_out.shape(),
            g.channels,
            g.height,
            g.width
        )));
    }
    let mut grads = params.zero_grads();
    let mut grad_in = Tensor::zeros(input.shape());
    let mut grad_cols = vec![T::zero(); g.col_rows() * g.col_cols()];
    for b in 0..batch {
        let go = grad_out.item(b);
        g.im2col(go, &mut grad_cols);
        // dx = W * dcols
        matmul(
            n_in,
            g.col_rows(),
            g.col_cols(),
            params.weight.data(),
            false,
            &grad_cols,
            false,
            grad_in.item_mut(b),
            false,
        );
        // dW += x * dcols^T
        matmul(
            n_in,
            g.col_cols(),
            g.col_rows(),
            input.item(b),
            false,
            &grad_cols,
            true,
            grads.weight.data_mut(),
            true,
        );
        accumulate_channel_sums(grads.bias.data_mut(), go, g.height * g.width);
    }
    Ok((grad_in, grads))
}

fn check_linear<T: Scalar>(input: &Tensor<T>, params: &LayerParams<T>) -> Result<()> {
    if params.kind != LayerKind::FullyConnected {
        return Err(Error::Shape(format!("linear given {:?} params", params.kind)));
    }
    if input.rank() != 2 || input.dim(1) != params.weight.dim(1) {
        return Err(Error::Shape(format!(
            "linear expects [batch, {}], got {:?}",
            params.weight.dim(1),
            input.shape()
        )));
    }
    Ok(())
}

pub fn linear<T: Scalar>(input: &Tensor<T>, params: &LayerParams<T>) -> Result<Tensor<T>> {
    check_linear(input, params)?;
    let (batch, n_in) = (input.dim(0), input.dim(1));
    let n_out = params.weight.dim(0);
    let mut out = Tensor::zeros(&[batch, n_out]);
    matmul(
        batch,
        n_in,
        n_out,
        input.data(),
        false,
        params.weight.data(),
        true,
        out.data_mut(),
        false,
    );
    for b in 0..batch {
        for (o, &bias) in out.item_mut(b).iter_mut().zip(params.bias.data()) {
            *o += bias;
        }
    }
    Ok(out)
}

/// Returns `(grad_input, grad_params)` for [`linear`].
pub fn linear_backward<T: Scalar>(
    input: &Tensor<T>,
    params: &LayerParams<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, LayerGrads<T>)> {
    check_linear(input, params)?;
    let (batch, n_in) = (input.dim(0), input.dim(1));
    let n_out = params.weight.dim(0);
    if grad_out.shape() != [batch, n_out] {
        return Err(Error::Shape(format!(
            "linear grad_out {:?} vs [{batch}, {n_out}]",
            grad_out.shape()
        )));
    }
    let mut grads = params.zero_grads();
    let mut grad_in = Tensor::zeros(input.shape());
    matmul(
        batch,
        n_out,
        n_in,
        grad_out.data(),
        false,
        params.weight.data(),
        false,
        grad_in.data_mut(),
        false,
    );
    matmul(
        n_out,
        batch,
        n_in,
        grad_out.data(),
        true,
        input.data(),
        false,
        grads.weight.data_mut(),
        false,
    );
    for b in 0..batch {
        for (gb, &g) in grads.bias.data_mut().iter_mut().zip(grad_out.item(b)) {
            *gb += g;
        }
    }
    Ok((grad_in, grads))
}

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|x| if x > T::zero() { x } else { T::zero() })
}

/// Subgradient 0 at 0.
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    input.check_same_shape(grad_out, "relu_backward")?;
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(input.shape().to_vec(), data)
}

fn add_channel_bias<T: Scalar>(dst: &mut [T], bias: &[T], plane: usize) {
    for (chunk, &b) in dst.chunks_mut(plane).zip(bias) {
        chunk.iter_mut().for_each(|v| *v += b);
    }
}

fn accumulate_channel_sums<T: Scalar>(acc: &mut [T], src: &[T], plane: usize) {
    for (a, chunk) in acc.iter_mut().zip(src.chunks(plane)) {
        *a += chunk.iter().copied().sum::<T>();
    }
}
