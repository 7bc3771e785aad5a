//! Zero-padded 2-D convolution via im2col + GEMM.

use super::scratch::Scratch;
use super::{Element, Shape, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvParams {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl Default for ConvParams {
    fn default() -> Self {
        ConvParams {
            stride: 1,
            padding: 0,
            dilation: 1,
        }
    }
}

impl ConvParams {
    pub fn new(stride: usize, padding: usize, dilation: usize) -> Self {
        ConvParams {
            stride,
            padding,
            dilation,
        }
    }

    /// Stride 1 with the padding that preserves spatial size for an odd kernel.
    pub fn same(kernel: usize, dilation: usize) -> Self {
        ConvParams {
            stride: 1,
            padding: dilation * (kernel - 1) / 2,
            dilation,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.stride == 0 || self.dilation == 0 {
            return Err(Error::InvalidArgument(format!(
                "stride and dilation must be >= 1, got {self:?}"
            )));
        }
        Ok(())
    }
}

pub fn conv_output_size(input: usize, kernel: usize, p: ConvParams) -> Result<usize> {
    p.validate()?;
    let span = p.dilation * (kernel.max(1) - 1) + 1;
    let padded = input + 2 * p.padding;
    if kernel == 0 || padded < span {
        return Err(Error::InvalidArgument(format!(
            "non-positive output size: input {input}, kernel {kernel}, {p:?}"
        )));
    }
    Ok((padded - span) / p.stride + 1)
}

/// Geometry shared by the dense and deformable kernels.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeometry {
    pub in_c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub oh: usize,
    pub ow: usize,
    pub params: ConvParams,
}

impl ConvGeometry {
    pub fn new(input: Shape, weight: Shape, params: ConvParams) -> Result<Self> {
        if weight.c() != input.c() {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "weight expects {} input channels, input has {}",
                    weight.c(),
                    input.c()
                ),
            ));
        }
        Ok(ConvGeometry {
            in_c: input.c(),
            h: input.h(),
            w: input.w(),
            kh: weight.h(),
            kw: weight.w(),
            oh: conv_output_size(input.h(), weight.h(), params)?,
            ow: conv_output_size(input.w(), weight.w(), params)?,
            params,
        })
    }

    pub fn taps(&self) -> usize {
        self.kh * self.kw
    }

    pub fn rows(&self) -> usize {
        self.in_c * self.taps()
    }

    pub fn out_plane(&self) -> usize {
        self.oh * self.ow
    }

    fn pointwise(&self) -> bool {
        self.kh == 1
            && self.kw == 1
            && self.params == ConvParams::default()
    }

    /// Output positions `o` in `[lo, hi)` whose input coordinate
    /// `o * stride + offset` falls inside `[0, extent)`.
    fn valid_range(&self, offset: isize, extent: usize, out: usize) -> (usize, usize) {
        let s = self.params.stride as isize;
        let lo = if offset < 0 { (-offset + s - 1) / s } else { 0 };
        let room = extent as isize - offset;
        let hi = if room > 0 { (room + s - 1) / s } else { 0 };
        let lo = (lo as usize).min(out);
        let hi = (hi as usize).min(out).max(lo);
        (lo, hi)
    }

    fn tap_offsets(&self, ki: usize, kj: usize) -> (isize, isize) {
        let p = self.params;
        (
            (ki * p.dilation) as isize - p.padding as isize,
            (kj * p.dilation) as isize - p.padding as isize,
        )
    }
}

pub(crate) fn im2col<T: Element>(item: &[T], g: &ConvGeometry, cols: &mut [T]) {
    let plane = g.out_plane();
    let s = g.params.stride;
    for c in 0..g.in_c {
        let src = &item[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                let (dy, dx) = g.tap_offsets(ki, kj);
                let (y_lo, y_hi) = g.valid_range(dy, g.h, g.oh);
                let (x_lo, x_hi) = g.valid_range(dx, g.w, g.ow);
                dst[..y_lo * g.ow].fill(T::zero());
                dst[y_hi * g.ow..].fill(T::zero());
                for oy in y_lo..y_hi {
                    let iy = (oy * s) as isize + dy;
                    let src_row = &src[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let out = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    out[..x_lo].fill(T::zero());
                    out[x_hi..].fill(T::zero());
                    if s == 1 {
                        let start = (x_lo as isize + dx) as usize;
                        out[x_lo..x_hi].copy_from_slice(&src_row[start..start + (x_hi - x_lo)]);
                    } else {
                        for ox in x_lo..x_hi {
                            out[ox] = src_row[((ox * s) as isize + dx) as usize];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn col2im<T: Element>(cols: &[T], g: &ConvGeometry, item_grad: &mut [T]) {
    let plane = g.out_plane();
    let s = g.params.stride;
    for c in 0..g.in_c {
        let dst = &mut item_grad[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                let (dy, dx) = g.tap_offsets(ki, kj);
                let (y_lo, y_hi) = g.valid_range(dy, g.h, g.oh);
                let (x_lo, x_hi) = g.valid_range(dx, g.w, g.ow);
                for oy in y_lo..y_hi {
                    let iy = ((oy * s) as isize + dy) as usize;
                    let dst_row = &mut dst[iy * g.w..(iy + 1) * g.w];
                    let src_row = &src[oy * g.ow..(oy + 1) * g.ow];
                    if s == 1 {
                        let start = (x_lo as isize + dx) as usize;
                        let dst_span = &mut dst_row[start..start + (x_hi - x_lo)];
                        for (d, &v) in dst_span.iter_mut().zip(&src_row[x_lo..x_hi]) {
                            *d = *d + v;
                        }
                    } else {
                        for ox in x_lo..x_hi {
                            let ix = ((ox * s) as isize + dx) as usize;
                            dst_row[ix] = dst_row[ix] + src_row[ox];
                        }
                    }
                }
            }
        }
    }
}

fn check_bias<T: Element>(bias: Option<&Tensor<T>>, out_c: usize) -> Result<()> {
    match bias {
        Some(b) if b.numel() != out_c => Err(Error::shape(
            "conv2d",
            format!("bias has {} entries, expected {out_c}", b.numel()),
        )),
        _ => Ok(()),
    }
}

/// Multiplies `weight` (`out_c x rows`) by a column buffer and writes one
/// output item, adding the bias.
pub(crate) fn gemm_forward<T: Element>(
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    cols: &[T],
    rows: usize,
    plane: usize,
    out: &mut [T],
) {
    let out_c = weight.shape().n();
    match bias {
        Some(b) => {
            for (oc, &bv) in b.data().iter().enumerate() {
                out[oc * plane..(oc + 1) * plane].fill(bv);
            }
        }
        None => out.fill(T::zero()),
    }
    T::gemm(
        out_c,
        rows,
        plane,
        T::one(),
        weight.data(),
        (rows as isize, 1),
        cols,
        (plane as isize, 1),
        T::one(),
        out,
        (plane as isize, 1),
    );
}

/// Accumulates weight/bias gradients for one item and returns the column
/// gradient `W^T * grad_out`.
pub(crate) fn gemm_backward<T: Element>(
    weight: &Tensor<T>,
    cols: &[T],
    grad_out: &[T],
    rows: usize,
    plane: usize,
    grad_weight: &mut Tensor<T>,
    grad_bias: Option<&mut Tensor<T>>,
    grad_cols: Option<&mut [T]>,
) {
    let out_c = weight.shape().n();
    T::gemm(
        out_c,
        plane,
        rows,
        T::one(),
        grad_out,
        (plane as isize, 1),
        cols,
        (1, plane as isize),
        T::one(),
        grad_weight.data_mut(),
        (rows as isize, 1),
    );
    if let Some(gb) = grad_bias {
        for (oc, g) in gb.data_mut().iter_mut().enumerate() {
            *g = *g + grad_out[oc * plane..(oc + 1) * plane].iter().copied().sum();
        }
    }
    if let Some(gc) = grad_cols {
        T::gemm(
            rows,
            out_c,
            plane,
            T::one(),
            weight.data(),
            (1, rows as isize),
            grad_out,
            (plane as isize, 1),
            T::zero(),
            gc,
            (plane as isize, 1),
        );
    }
}

pub fn conv2d<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    params: ConvParams,
) -> Result<Tensor<T>> {
    let g = ConvGeometry::new(input.shape(), weight.shape(), params)?;
    let out_c = weight.shape().n();
    check_bias(bias, out_c)?;
    let batch = input.shape().n();
    let mut out = Tensor::zeros([batch, out_c, g.oh, g.ow]);
    let plane = g.out_plane();
    let mut cols = Scratch::take(if g.pointwise() { 0 } else { g.rows() * plane });
    for n in 0..batch {
        let item = input.item(n);
        let cols_ref: &[T] = if g.pointwise() {
            item
        } else {
            im2col(item, &g, &mut cols);
            &cols
        };
        gemm_forward(weight, bias, cols_ref, g.rows(), plane, out.item_mut(n));
    }
    Ok(out)
}

/// Gradients of a convolution: `(input, weight, bias)`. The input gradient
/// is skipped when `need_input` is false.
pub fn conv2d_backward<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    has_bias: bool,
    grad_out: &Tensor<T>,
    params: ConvParams,
    need_input: bool,
) -> Result<(Option<Tensor<T>>, Tensor<T>, Option<Tensor<T>>)> {
    let g = ConvGeometry::new(input.shape(), weight.shape(), params)?;
    let out_c = weight.shape().n();
    let batch = input.shape().n();
    if grad_out.shape() != Shape::new(batch, out_c, g.oh, g.ow) {
        return Err(Error::shape(
            "conv2d_backward",
            format!("gradient shape {}", grad_out.shape()),
        ));
    }
    let plane = g.out_plane();
    let mut grad_weight = Tensor::zeros(weight.shape());
    let mut grad_bias = has_bias.then(|| Tensor::zeros([1, out_c, 1, 1]));
    let mut grad_input = need_input.then(|| Tensor::zeros(input.shape()));
    let mut cols = Scratch::take(if g.pointwise() { 0 } else { g.rows() * plane });
    let mut grad_cols = Scratch::take(if need_input && !g.pointwise() {
        g.rows() * plane
    } else {
        0
    });
    for n in 0..batch {
        let item = input.item(n);
        let cols_ref: &[T] = if g.pointwise() {
            item
        } else {
            im2col(item, &g, &mut cols);
            &cols
        };
        let go = grad_out.item(n);
        match (&mut grad_input, g.pointwise()) {
            (Some(gi), true) => gemm_backward(
                weight,
                cols_ref,
                go,
                g.rows(),
                plane,
                &mut grad_weight,
                grad_bias.as_mut(),
                Some(gi.item_mut(n)),
            ),
            (Some(gi), false) => {
                gemm_backward(
                    weight,
                    cols_ref,
                    go,
                    g.rows(),
                    plane,
                    &mut grad_weight,
                    grad_bias.as_mut(),
                    Some(&mut grad_cols),
                );
                col2im(&grad_cols, &g, gi.item_mut(n));
            }
            (None, _) => gemm_backward(
                weight,
                cols_ref,
                go,
                g.rows(),
                plane,
                &mut grad_weight,
                grad_bias.as_mut(),
                None,
            ),
        }
    }
    Ok((grad_input, grad_weight, grad_bias))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct nested-loop convolution used as an independent reference.
    fn conv_naive(
        input: &Tensor<f64>,
        weight: &Tensor<f64>,
        bias: Option<&Tensor<f64>>,
        p: ConvParams,
    ) -> Tensor<f64> {
        let [n, c, h, w] = input.shape().0;
        let [oc, _, kh, kw] = weight.shape().0;
        let oh = conv_output_size(h, kh, p).unwrap();
        let ow = conv_output_size(w, kw, p).unwrap();
        Tensor::from_fn([n, oc, oh, ow], |[ni, o, oy, ox]| {
            let mut acc = bias.map_or(0.0, |b| b.data()[o]);
            for ci in 0..c {
                for ki in 0..kh {
                    for kj in 0..kw {
                        let iy = (oy * p.stride + ki * p.dilation) as isize - p.padding as isize;
                        let ix = (ox * p.stride + kj * p.dilation) as isize - p.padding as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                            acc += input.at([ni, ci, iy as usize, ix as usize])
                                * weight.at([o, ci, ki, kj]);
                        }
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn ones_kernel_sums_window() {
        let x = Tensor::<f32>::ones([1, 1, 3, 3]);
        let w = Tensor::<f32>::ones([1, 1, 3, 3]);
        let y = conv2d(&x, &w, None, ConvParams::default()).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 1, 1));
        assert_eq!(y.data()[0], 9.0);
    }

    #[test]
    fn dilated_same_padding_keeps_size() {
        let x = Tensor::<f32>::ones([1, 1, 8, 8]);
        let w = Tensor::<f32>::ones([1, 1, 3, 3]);
        let y = conv2d(&x, &w, None, ConvParams::new(1, 2, 2)).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 8, 8));
    }

    #[test]
    fn matches_naive_over_geometries() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(stride, pad, dil, k) in &[
            (1, 0, 1, 3),
            (1, 1, 1, 3),
            (2, 1, 1, 3),
            (1, 2, 2, 3),
            (3, 2, 1, 2),
            (1, 0, 1, 1),
            (2, 0, 1, 1),
        ] {
            let p = ConvParams::new(stride, pad, dil);
            let x = Tensor::<f64>::uniform([2, 3, 7, 9], -1.0, 1.0, &mut rng);
            let w = Tensor::<f64>::uniform([4, 3, k, k], -1.0, 1.0, &mut rng);
            let b = Tensor::<f64>::uniform([1, 4, 1, 1], -1.0, 1.0, &mut rng);
            let fast = conv2d(&x, &w, Some(&b), p).unwrap();
            let slow = conv_naive(&x, &w, Some(&b), p);
            assert!(fast.max_abs_diff(&slow) < 1e-12, "{p:?} k={k}");
        }
    }

    #[test]
    fn pointwise_conv_is_per_pixel_matmul() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Tensor::<f64>::uniform([2, 5, 4, 3], -1.0, 1.0, &mut rng);
        let w = Tensor::<f64>::uniform([3, 5, 1, 1], -1.0, 1.0, &mut rng);
        let y = conv2d(&x, &w, None, ConvParams::default()).unwrap();
        for n in 0..2 {
            for yy in 0..4 {
                for xx in 0..3 {
                    for o in 0..3 {
                        let want: f64 = (0..5).map(|c| w.at([o, c, 0, 0]) * x.at([n, c, yy, xx])).sum();
                        assert!((y.at([n, o, yy, xx]) - want).abs() < 1e-14);
                    }
                }
            }
        }
    }

    #[test]
    fn rejects_channel_mismatch_and_empty_output() {
        let x = Tensor::<f32>::ones([1, 2, 3, 3]);
        let w = Tensor::<f32>::ones([1, 3, 3, 3]);
        assert!(matches!(
            conv2d(&x, &w, None, ConvParams::default()),
            Err(Error::Shape { .. })
        ));
        let x = Tensor::<f32>::ones([1, 1, 2, 2]);
        let w = Tensor::<f32>::ones([1, 1, 3, 3]);
        assert!(matches!(
            conv2d(&x, &w, None, ConvParams::default()),
            Err(Error::InvalidArgument(_))
        ));
    }
}
