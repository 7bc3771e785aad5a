use super::{Element, Tensor};
use crate::error::{Error, Result};

/// Source coordinate, lower index, upper index and fractional weight for
/// one output position under corner-aligned sampling.
fn source_taps(out_len: usize, in_len: usize) -> Vec<(usize, usize, f64)> {
    (0..out_len)
        .map(|o| {
            let src = if out_len > 1 {
                o as f64 * (in_len - 1) as f64 / (out_len - 1) as f64
            } else {
                0.0
            };
            let lo = (src.floor() as usize).min(in_len - 1);
            let hi = (lo + 1).min(in_len - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

/// Corner-aligned bilinear upsampling by an integer factor: the corner
/// pixels of the output equal the corner pixels of the input.
pub fn upsample_bilinear<T: Element>(x: &Tensor<T>, scale: usize) -> Result<Tensor<T>> {
    if scale == 0 {
        return Err(Error::InvalidArgument("upsample scale must be >= 1".into()));
    }
    if scale == 1 {
        return Ok(x.clone());
    }
    let [n, c, h, w] = x.shape().0;
    let (oh, ow) = (h * scale, w * scale);
    let ys = source_taps(oh, h);
    let xs = source_taps(ow, w);
    let mut out = Tensor::zeros([n, c, oh, ow]);
    let out_plane = oh * ow;
    for p in 0..n * c {
        let src = &x.data()[p * h * w..(p + 1) * h * w];
        let dst = &mut out.data_mut()[p * out_plane..(p + 1) * out_plane];
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            let fy = T::from_f64(fy);
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                let fx = T::from_f64(fx);
                let top = src[y0 * w + x0] * (T::one() - fx) + src[y0 * w + x1] * fx;
                let bottom = src[y1 * w + x0] * (T::one() - fx) + src[y1 * w + x1] * fx;
                dst[oy * ow + ox] = top * (T::one() - fy) + bottom * fy;
            }
        }
    }
    Ok(out)
}

pub fn upsample_bilinear_backward<T: Element>(
    grad_out: &Tensor<T>,
    in_h: usize,
    in_w: usize,
    scale: usize,
) -> Tensor<T> {
    if scale == 1 {
        return grad_out.clone();
    }
    let [n, c, oh, ow] = grad_out.shape().0;
    let ys = source_taps(oh, in_h);
    let xs = source_taps(ow, in_w);
    let mut grad = Tensor::zeros([n, c, in_h, in_w]);
    let in_plane = in_h * in_w;
    for p in 0..n * c {
        let go = &grad_out.data()[p * oh * ow..(p + 1) * oh * ow];
        let gi = &mut grad.data_mut()[p * in_plane..(p + 1) * in_plane];
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            let fy = T::from_f64(fy);
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                let fx = T::from_f64(fx);
                let g = go[oy * ow + ox];
                let top = g * (T::one() - fy);
                let bottom = g * fy;
                gi[y0 * in_w + x0] = gi[y0 * in_w + x0] + top * (T::one() - fx);
                gi[y0 * in_w + x1] = gi[y0 * in_w + x1] + top * fx;
                gi[y1 * in_w + x0] = gi[y1 * in_w + x0] + bottom * (T::one() - fx);
                gi[y1 * in_w + x1] = gi[y1 * in_w + x1] + bottom * fx;
            }
        }
    }
    grad
}
