use crate::data::{grid_positions, SceneTensors};
use crate::error::{Error, Result};
use crate::model::HdrModel;
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Transform {
    Identity,
    /// Swap of the two spatial axes.
    Transpose,
    FlipVertical,
    FlipHorizontal,
}

impl Transform {
    /// Each transform is its own inverse.
    pub fn apply<T: Element>(self, t: &Tensor<T>) -> Tensor<T> {
        match self {
            Transform::Identity => t.clone(),
            Transform::Transpose => t.transpose_spatial(),
            Transform::FlipVertical => t.flip_vertical(),
            Transform::FlipHorizontal => t.flip_horizontal(),
        }
    }

    /// Transforms applied for an `h x w` input.
    pub fn ensemble(h: usize, w: usize) -> Vec<Transform> {
        let mut out = vec![Transform::Identity];
        if h == w {
            out.push(Transform::Transpose);
        }
        out.extend([Transform::FlipVertical, Transform::FlipHorizontal]);
        out
    }
}

#[derive(Clone, Debug)]
pub struct TtaOutput<T: Element = f32> {
    pub hdr: Tensor<T>,
    pub passes: usize,
}

/// Mean of the de-transformed predictions over [`Transform::ensemble`].
pub fn tta_infer<T: Element, M: HdrModel<T> + ?Sized>(model: &M, inputs: &SceneTensors<T>) -> Result<TtaOutput<T>> {
    let transforms = Transform::ensemble(inputs.height(), inputs.width());
    let mut acc: Option<Tensor<T>> = None;
    for &tf in &transforms {
        let out = tf.apply(&model.predict(&inputs.map(|t| tf.apply(t)))?);
        match acc.as_mut() {
            Some(a) => a.add_assign(&out),
            None => acc = Some(out),
        }
    }
    let n = transforms.len();
    Ok(TtaOutput {
        hdr: acc.expect("identity pass").scale(T::from_f64(1.0 / n as f64)),
        passes: n,
    })
}

/// Tile starts along one axis and the kept interval `[keep0, keep1)` of
/// each tile. Interior tile sides discard `overlap` pixels.
pub fn tile_layout(len: usize, tile: usize, overlap: usize) -> Result<Vec<(usize, usize, usize)>> {
    if tile >= len {
        return Ok(vec![(0, 0, len)]);
    }
    if tile <= 2 * overlap {
        return Err(Error::InvalidArgument(format!(
            "tile {tile} must exceed twice the overlap {overlap}"
        )));
    }
    let starts = grid_positions(len, tile, tile - 2 * overlap)?;
    Ok(starts
        .iter()
        .map(|&p| {
            let keep0 = if p == 0 { 0 } else { p + overlap };
            let keep1 = if p + tile == len { len } else { p + tile - overlap };
            (p, keep0, keep1)
        })
        .collect())
}

/// Runs the model tile by tile and assembles the interiors.
pub fn tiled_infer<T: Element, M: HdrModel<T> + ?Sized>(
    model: &M,
    inputs: &SceneTensors<T>,
    tile_h: usize,
    tile_w: usize,
    overlap: usize,
) -> Result<Tensor<T>> {
    let (h, w) = (inputs.height(), inputs.width());
    let rows = tile_layout(h, tile_h, overlap)?;
    let cols = tile_layout(w, tile_w, overlap)?;
    let (th, tw) = (tile_h.min(h), tile_w.min(w));
    let d = model.input_divisor();
    if th % d != 0 || tw % d != 0 {
        return Err(Error::DimensionMismatch(format!(
            "tile {th}x{tw} not divisible by {d}"
        )));
    }
    let mut out: Option<Tensor<T>> = None;
    for &(y, ky0, ky1) in &rows {
        for &(x, kx0, kx1) in &cols {
            let pred = model.predict(&inputs.crop(y, x, th, tw)?)?;
            let dst = out.get_or_insert_with(|| {
                let s = pred.shape();
                Tensor::zeros([s.n(), s.c(), h, w])
            });
            dst.paste_window(&pred, (ky0 - y, kx0 - x), (ky1 - ky0, kx1 - kx0), (ky0, kx0));
        }
    }
    Ok(out.expect("at least one tile"))
}
