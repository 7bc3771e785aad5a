use super::SceneSample;
use crate::error::{Error, Result};

/// Window starts along one axis: a regular grid with step `stride`, plus a
/// final window snapped to the border when the grid leaves pixels uncovered.
pub fn grid_positions(len: usize, size: usize, stride: usize) -> Result<Vec<usize>> {
    if size == 0 || stride == 0 {
        return Err(Error::InvalidArgument("window size and stride must be positive".into()));
    }
    if size > len {
        return Err(Error::InvalidArgument(format!(
            "window {size} larger than extent {len}"
        )));
    }
    let mut out: Vec<usize> = (0..).map(|i| i * stride).take_while(|p| p + size <= len).collect();
    if out.last().map_or(true, |&p| p + size < len) {
        out.push(len - size);
    }
    Ok(out)
}

/// Crops every frame (and the ground truth) identically, row-major order.
pub fn crop_patches(scene: &SceneSample, size: usize, stride: usize) -> Result<Vec<SceneSample>> {
    let (h, w) = (scene.height(), scene.width());
    let ys = grid_positions(h, size, stride)?;
    let xs = grid_positions(w, size, stride)?;
    let mut out = Vec::with_capacity(ys.len() * xs.len());
    for &y in &ys {
        for &x in &xs {
            out.push(scene.crop(y, x, size, size));
        }
    }
    Ok(out)
}
