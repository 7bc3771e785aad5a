use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Interleaved image, rows top to bottom.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Image {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::DimensionMismatch(format!(
                "{} samples for {width}x{height}x{channels}",
                data.len()
            )));
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Image {
        let mut out = Image::new(w, h, self.channels);
        let row = w * self.channels;
        for y in 0..h {
            let src = ((y0 + y) * self.width + x0) * self.channels;
            out.data[y * row..(y + 1) * row].copy_from_slice(&self.data[src..src + row]);
        }
        out
    }

    /// `1 x channels x height x width` tensor.
    pub fn to_tensor<T: Element>(&self) -> Tensor<T> {
        Tensor::from_fn([1, self.channels, self.height, self.width], |[_, c, y, x]| {
            T::from_f64(self.get(y, x, c) as f64)
        })
    }

    /// Image from one batch item of a tensor.
    pub fn from_tensor<T: Element>(t: &Tensor<T>, item: usize) -> Image {
        let [_, c, h, w] = t.shape().0;
        let mut img = Image::new(w, h, c);
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    img.set(y, x, ci, t.at([item, ci, y, x]).as_f64() as f32);
                }
            }
        }
        img
    }
}
