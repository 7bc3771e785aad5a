use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{pnm::quantize16, Image, SceneSample};

pub const SYNTH_EXPOSURES: [f64; 3] = [0.25, 1.0, 4.0];
pub const SYNTH_GAMMA: f64 = 2.2;

const BLOBS: usize = 5;
const GT_MIN: f64 = 0.01;
const GT_MAX: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Motion {
    None,
    /// The short frame moves by `(dy, dx)` and the long frame by
    /// `(-dy, -dx)`; vacated pixels are zero.
    Shift(i32, i32),
}

/// Smooth log-domain radiance field mapped into `[GT_MIN, GT_MAX]`, with a
/// mild per-channel tint.
fn radiance<R: Rng + ?Sized>(rng: &mut R, h: usize, w: usize) -> Vec<[f64; 3]> {
    let scale = h.max(w) as f64;
    let blobs: Vec<(f64, f64, f64, f64)> = (0..BLOBS)
        .map(|_| {
            let cy = rng.random::<f64>() * h as f64;
            let cx = rng.random::<f64>() * w as f64;
            let amp = rng.random_range(-1.0..1.0);
            let sigma = rng.random_range(0.08..0.35) * scale;
            (cy, cx, amp, sigma)
        })
        .collect();
    let gy = rng.random_range(-1.0..1.0);
    let gx = rng.random_range(-1.0..1.0);
    let tint: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.85..1.0));

    let mut field = vec![0.0f64; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut v = gy * y as f64 / scale + gx * x as f64 / scale;
            for &(cy, cx, amp, sigma) in &blobs {
                let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                v += amp * (-d2 / (2.0 * sigma * sigma)).exp();
            }
            field[y * w + x] = v;
        }
    }
    let lo = field.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = field.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let (log_min, log_max) = (GT_MIN.ln(), GT_MAX.ln());
    field
        .iter()
        .map(|&v| {
            let f = if span > 0.0 { (v - lo) / span } else { 0.5 };
            let r = (log_min + f * (log_max - log_min)).exp();
            std::array::from_fn(|c| r * tint[c])
        })
        .collect()
}

fn shift(img: &Image, dy: i32, dx: i32) -> Image {
    let mut out = Image::new(img.width, img.height, img.channels);
    for y in 0..img.height {
        let sy = y as i64 - dy as i64;
        if sy < 0 || sy >= img.height as i64 {
            continue;
        }
        for x in 0..img.width {
            let sx = x as i64 - dx as i64;
            if sx < 0 || sx >= img.width as i64 {
                continue;
            }
            for c in 0..img.channels {
                out.set(y, x, c, img.get(sy as usize, sx as usize, c));
            }
        }
    }
    out
}

/// Random bracketed scene. The ground truth is aligned with the middle frame.
pub fn make_synthetic_scene<R: Rng + ?Sized>(
    rng: &mut R,
    height: usize,
    width: usize,
    motion: Motion,
    noise_sigma: f64,
) -> SceneSample {
    let hdr = radiance(rng, height, width);
    let noise = (noise_sigma > 0.0).then(|| Normal::new(0.0, noise_sigma).expect("finite sigma"));
    let frames: Vec<Image> = SYNTH_EXPOSURES
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let mut img = Image::new(width, height, 3);
            for (p, px) in hdr.iter().enumerate() {
                for c in 0..3 {
                    let mut v = (px[c] * t).powf(1.0 / SYNTH_GAMMA);
                    if i == 0 {
                        if let Some(n) = &noise {
                            v += n.sample(rng);
                        }
                    }
                    img.data[p * 3 + c] = quantize16(v.clamp(0.0, 1.0) as f32) as f32 / 65535.0;
                }
            }
            match (motion, i) {
                (Motion::Shift(dy, dx), 0) => shift(&img, dy, dx),
                (Motion::Shift(dy, dx), 2) => shift(&img, -dy, -dx),
                _ => img,
            }
        })
        .collect();
    let gt = Image::from_vec(
        width,
        height,
        3,
        hdr.iter().flat_map(|px| px.map(|v| v as f32)).collect(),
    )
    .expect("extents agree");
    let [short, medium, long]: [Image; 3] = frames.try_into().expect("three frames");
    SceneSample {
        ldr: [short, medium, long],
        exposures: SYNTH_EXPOSURES,
        gt: Some(gt),
    }
}
