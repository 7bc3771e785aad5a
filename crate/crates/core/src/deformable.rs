//! Bilinear sampling and modulated deformable convolution.
//!
//! Offsets are laid out per kernel tap as interleaved `(dy, dx)` pairs:
//! channel `2k` holds the vertical and `2k + 1` the horizontal displacement
//! of tap `k = ki * kw + kj`. Samples falling outside the input read zero.

use crate::error::{Error, Result};
use crate::tensor::conv::{gemm_backward, gemm_forward, ConvGeometry};
use crate::tensor::scratch::Scratch;
use crate::tensor::graph::Op;
use crate::tensor::{ConvParams, Element, Graph, Shape, Tensor, Var};

pub type DeformParams = ConvParams;

/// Four bilinear neighbours of a sample point with their value weights and
/// the derivatives of those weights with respect to `y` and `x`. Neighbours
/// outside the plane carry all-zero coefficients.
#[derive(Clone, Copy, Debug)]
struct Taps<T> {
    index: [usize; 4],
    weight: [T; 4],
    d_y: [T; 4],
    d_x: [T; 4],
}

impl<T: Element> Taps<T> {
    fn new(h: usize, w: usize, y: T, x: T) -> Self {
        let zero = T::zero();
        let mut taps = Taps {
            index: [0; 4],
            weight: [zero; 4],
            d_y: [zero; 4],
            d_x: [zero; 4],
        };
        let (hf, wf) = (T::from_f64(h as f64), T::from_f64(w as f64));
        if !(y > -T::one() && y < hf && x > -T::one() && x < wf) {
            return taps;
        }
        let (y0, x0) = (y.floor(), x.floor());
        let (ly, lx) = (y - y0, x - x0);
        let (hy, hx) = (T::one() - ly, T::one() - lx);
        let (y0, x0) = (y0.as_f64() as isize, x0.as_f64() as isize);
        let corners = [
            (y0, x0, hy * hx, -hx, -hy),
            (y0, x0 + 1, hy * lx, -lx, hy),
            (y0 + 1, x0, ly * hx, hx, -ly),
            (y0 + 1, x0 + 1, ly * lx, lx, ly),
        ];
        for (i, &(yy, xx, wt, dy, dx)) in corners.iter().enumerate() {
            if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
                taps.index[i] = yy as usize * w + xx as usize;
                taps.weight[i] = wt;
                taps.d_y[i] = dy;
                taps.d_x[i] = dx;
            }
        }
        taps
    }

    #[inline]
    fn sample(&self, plane: &[T]) -> T {
        let mut acc = T::zero();
        for i in 0..4 {
            acc = acc + self.weight[i] * plane[self.index[i]];
        }
        acc
    }

    #[inline]
    fn gradient(&self, plane: &[T]) -> (T, T) {
        let (mut gy, mut gx) = (T::zero(), T::zero());
        for i in 0..4 {
            let v = plane[self.index[i]];
            gy = gy + self.d_y[i] * v;
            gx = gx + self.d_x[i] * v;
        }
        (gy, gx)
    }

    #[inline]
    fn scatter(&self, plane_grad: &mut [T], g: T) {
        for i in 0..4 {
            plane_grad[self.index[i]] = plane_grad[self.index[i]] + self.weight[i] * g;
        }
    }
}

/// Bilinear interpolation of a row-major `h x w` plane at fractional
/// `(y, x)`. Out-of-range neighbours contribute zero.
pub fn bilinear_sample<T: Element>(plane: &[T], h: usize, w: usize, y: T, x: T) -> T {
    Taps::new(h, w, y, x).sample(plane)
}

/// Samples every channel of `feature` (`n x c x h x w`) at the coordinates in
/// `coords` (`n x 2 x oh x ow`, channel 0 = y, channel 1 = x).
pub fn bilinear_sample_tensor<T: Element>(feature: &Tensor<T>, coords: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = feature.shape().0;
    let cs = coords.shape();
    if cs.n() != n || cs.c() != 2 {
        return Err(Error::shape(
            "bilinear_sample",
            format!("coords {cs} for feature {}", feature.shape()),
        ));
    }
    let plane = cs.plane();
    let mut out = Tensor::zeros([n, c, cs.h(), cs.w()]);
    for ni in 0..n {
        let ys = coords.plane(ni, 0);
        let xs = coords.plane(ni, 1);
        let taps: Vec<Taps<T>> = (0..plane).map(|p| Taps::new(h, w, ys[p], xs[p])).collect();
        for ci in 0..c {
            let src = feature.plane(ni, ci);
            let start = (ni * c + ci) * plane;
            let dst = &mut out.data_mut()[start..start + plane];
            for (d, t) in dst.iter_mut().zip(&taps) {
                *d = t.sample(src);
            }
        }
    }
    Ok(out)
}

pub(crate) fn bilinear_sample_backward<T: Element>(
    feature: &Tensor<T>,
    coords: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let [n, c, h, w] = feature.shape().0;
    let cs = coords.shape();
    let plane = cs.plane();
    let mut gf = Tensor::zeros(feature.shape());
    let mut gc = Tensor::zeros(cs);
    for ni in 0..n {
        let ys = coords.plane(ni, 0);
        let xs = coords.plane(ni, 1);
        let taps: Vec<Taps<T>> = (0..plane).map(|p| Taps::new(h, w, ys[p], xs[p])).collect();
        let mut gy = vec![T::zero(); plane];
        let mut gx = vec![T::zero(); plane];
        for ci in 0..c {
            let src = feature.plane(ni, ci);
            let go_start = (ni * c + ci) * plane;
            let go = &grad_out.data()[go_start..go_start + plane];
            let fstart = (ni * c + ci) * h * w;
            let dst = &mut gf.data_mut()[fstart..fstart + h * w];
            for p in 0..plane {
                let g = go[p];
                taps[p].scatter(dst, g);
                let (dy, dx) = taps[p].gradient(src);
                gy[p] = gy[p] + g * dy;
                gx[p] = gx[p] + g * dx;
            }
        }
        let base = ni * 2 * plane;
        gc.data_mut()[base..base + plane].copy_from_slice(&gy);
        gc.data_mut()[base + plane..base + 2 * plane].copy_from_slice(&gx);
    }
    Ok((gf, gc))
}

fn check_fields(g: &ConvGeometry, batch: usize, offsets: Shape, mask: Shape) -> Result<()> {
    let k = g.taps();
    let want_off = Shape::new(batch, 2 * k, g.oh, g.ow);
    let want_mask = Shape::new(batch, k, g.oh, g.ow);
    if offsets != want_off {
        return Err(Error::shape(
            "deform_conv2d",
            format!("offsets {offsets}, expected {want_off}"),
        ));
    }
    if mask != want_mask {
        return Err(Error::shape(
            "deform_conv2d",
            format!("mask {mask}, expected {want_mask}"),
        ));
    }
    Ok(())
}

/// Sampling taps for every `(kernel tap, output pixel)` pair of one item.
fn item_taps<T: Element>(g: &ConvGeometry, offsets: &[T]) -> Vec<Taps<T>> {
    let plane = g.out_plane();
    let p = g.params;
    let mut taps = Vec::with_capacity(g.taps() * plane);
    for ki in 0..g.kh {
        for kj in 0..g.kw {
            let k = ki * g.kw + kj;
            let off_y = &offsets[2 * k * plane..(2 * k + 1) * plane];
            let off_x = &offsets[(2 * k + 1) * plane..(2 * k + 2) * plane];
            for oy in 0..g.oh {
                let base_y = (oy * p.stride + ki * p.dilation) as f64 - p.padding as f64;
                for ox in 0..g.ow {
                    let base_x = (ox * p.stride + kj * p.dilation) as f64 - p.padding as f64;
                    let i = oy * g.ow + ox;
                    taps.push(Taps::new(
                        g.h,
                        g.w,
                        T::from_f64(base_y) + off_y[i],
                        T::from_f64(base_x) + off_x[i],
                    ));
                }
            }
        }
    }
    taps
}

/// Column buffer of masked samples; `raw` additionally receives the
/// unmasked samples when given.
fn deform_im2col<T: Element>(
    item: &[T],
    mask: &[T],
    taps: &[Taps<T>],
    g: &ConvGeometry,
    cols: &mut [T],
    mut raw: Option<&mut [T]>,
) {
    let plane = g.out_plane();
    let k_count = g.taps();
    for c in 0..g.in_c {
        let src = &item[c * g.h * g.w..(c + 1) * g.h * g.w];
        for k in 0..k_count {
            let row = c * k_count + k;
            let span = row * plane..(row + 1) * plane;
            let dst = &mut cols[span.clone()];
            let t = &taps[k * plane..(k + 1) * plane];
            let m = &mask[k * plane..(k + 1) * plane];
            match raw.as_deref_mut() {
                Some(r) => {
                    let r = &mut r[span];
                    for p in 0..plane {
                        let v = t[p].sample(src);
                        r[p] = v;
                        dst[p] = m[p] * v;
                    }
                }
                None => {
                    for p in 0..plane {
                        dst[p] = m[p] * t[p].sample(src);
                    }
                }
            }
        }
    }
}

/// Modulated deformable convolution.
///
/// Tap `k` of output pixel `(oy, ox)` reads the input at its regular grid
/// position displaced by `offsets[2k], offsets[2k+1]`, scaled by
/// `mask[k]`, then weights and sums exactly like [`crate::tensor::conv2d`].
pub fn deform_conv2d<T: Element>(
    input: &Tensor<T>,
    offsets: &Tensor<T>,
    mask: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    params: DeformParams,
) -> Result<Tensor<T>> {
    let g = ConvGeometry::new(input.shape(), weight.shape(), params)?;
    let batch = input.shape().n();
    check_fields(&g, batch, offsets.shape(), mask.shape())?;
    let out_c = weight.shape().n();
    if let Some(b) = bias {
        if b.numel() != out_c {
            return Err(Error::shape("deform_conv2d", "bias length"));
        }
    }
    let plane = g.out_plane();
    let mut out = Tensor::zeros([batch, out_c, g.oh, g.ow]);
    let mut cols = Scratch::take(g.rows() * plane);
    for n in 0..batch {
        let taps = item_taps(&g, offsets.item(n));
        deform_im2col(input.item(n), mask.item(n), &taps, &g, &mut cols, None);
        gemm_forward(weight, bias, &cols, g.rows(), plane, out.item_mut(n));
    }
    Ok(out)
}

pub struct DeformGrads<T: Element> {
    pub input: Tensor<T>,
    pub offsets: Tensor<T>,
    pub mask: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

pub fn deform_conv2d_backward<T: Element>(
    input: &Tensor<T>,
    offsets: &Tensor<T>,
    mask: &Tensor<T>,
    weight: &Tensor<T>,
    has_bias: bool,
    grad_out: &Tensor<T>,
    params: DeformParams,
) -> Result<DeformGrads<T>> {
    let g = ConvGeometry::new(input.shape(), weight.shape(), params)?;
    let batch = input.shape().n();
    check_fields(&g, batch, offsets.shape(), mask.shape())?;
    let out_c = weight.shape().n();
    let plane = g.out_plane();
    let k_count = g.taps();
    let mut grads = DeformGrads {
        input: Tensor::zeros(input.shape()),
        offsets: Tensor::zeros(offsets.shape()),
        mask: Tensor::zeros(mask.shape()),
        weight: Tensor::zeros(weight.shape()),
        bias: has_bias.then(|| Tensor::zeros([1, out_c, 1, 1])),
    };
    let mut cols = Scratch::take(g.rows() * plane);
    let mut raw = Scratch::take(g.rows() * plane);
    let mut grad_cols = Scratch::take(g.rows() * plane);
    for n in 0..batch {
        let item = input.item(n);
        let mask_item = mask.item(n);
        let taps = item_taps(&g, offsets.item(n));
        deform_im2col(item, mask_item, &taps, &g, &mut cols, Some(&mut raw));
        gemm_backward(
            weight,
            &cols,
            grad_out.item(n),
            g.rows(),
            plane,
            &mut grads.weight,
            grads.bias.as_mut(),
            Some(&mut grad_cols),
        );
        let gi = grads.input.item_mut(n);
        let mut g_mask = vec![T::zero(); k_count * plane];
        let mut g_off = vec![T::zero(); 2 * k_count * plane];
        for c in 0..g.in_c {
            let src = &item[c * g.h * g.w..(c + 1) * g.h * g.w];
            let dst = &mut gi[c * g.h * g.w..(c + 1) * g.h * g.w];
            for k in 0..k_count {
                let row = c * k_count + k;
                let gc = &grad_cols[row * plane..(row + 1) * plane];
                let rv = &raw[row * plane..(row + 1) * plane];
                let t = &taps[k * plane..(k + 1) * plane];
                let m = &mask_item[k * plane..(k + 1) * plane];
                let gm = &mut g_mask[k * plane..(k + 1) * plane];
                let (gy, gx) = g_off[2 * k * plane..(2 * k + 2) * plane].split_at_mut(plane);
                for p in 0..plane {
                    let gv = gc[p];
                    let gvm = gv * m[p];
                    t[p].scatter(dst, gvm);
                    gm[p] = gm[p] + gv * rv[p];
                    let (dy, dx) = t[p].gradient(src);
                    gy[p] = gy[p] + gvm * dy;
                    gx[p] = gx[p] + gvm * dx;
                }
            }
        }
        grads.mask.item_mut(n).copy_from_slice(&g_mask);
        grads.offsets.item_mut(n).copy_from_slice(&g_off);
    }
    Ok(grads)
}

impl<T: Element> Graph<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn deform_conv2d(
        &mut self,
        input: Var,
        offsets: Var,
        mask: Var,
        weight: Var,
        bias: Option<Var>,
        params: DeformParams,
    ) -> Result<Var> {
        let out = deform_conv2d(
            self.value(input),
            self.value(offsets),
            self.value(mask),
            self.value(weight),
            bias.map(|b| self.value(b)),
            params,
        )?;
        Ok(self.push(
            out,
            Op::DeformConv2d {
                input,
                offsets,
                mask,
                weight,
                bias,
                params,
            },
        ))
    }

    pub fn bilinear_sample(&mut self, feature: Var, coords: Var) -> Result<Var> {
        let out = bilinear_sample_tensor(self.value(feature), self.value(coords))?;
        Ok(self.push(out, Op::BilinearSample { feature, coords }))
    }
}
