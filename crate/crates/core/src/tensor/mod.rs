//! Dense 4-D tensors in (batch, channel, height, width) layout and the
//! reverse-mode differentiation graph built on top of them.

mod adam;
pub(crate) mod conv;
mod gradcheck;
pub(crate) mod graph;
pub mod gradsuite;
mod resample;
pub(crate) mod scratch;

use std::cell::RefCell;
use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::thread::LocalKey;

use num_traits::Float;
use rand::Rng;

use crate::error::{Error, Result};

pub use adam::{adam_step, AdamParams, AdamState};
pub use conv::{conv2d, conv2d_backward, conv_output_size, ConvParams};
pub use gradcheck::{grad_check, grad_check_with_reference, GradCheckReport};
pub use graph::{Activation, BackwardFn, Gradients, Graph, Var};
pub use resample::{upsample_bilinear, upsample_bilinear_backward};

/// Scalar type a [`Tensor`] can hold. Implemented for `f32` (training and
/// inference) and `f64` (gradient checking).
pub trait Element:
    Float + Default + Debug + Display + Sum + Send + Sync + 'static
{
    const NAME: &'static str;

    fn from_f64(v: f64) -> Self;

    fn as_f64(self) -> f64;

    /// `c = alpha * a * b + beta * c` with explicit row/column strides.
    ///
    /// `a` is `m x k`, `b` is `k x n`, `c` is `m x n`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        a_strides: (isize, isize),
        b: &[Self],
        b_strides: (isize, isize),
        beta: Self,
        c: &mut [Self],
        c_strides: (isize, isize),
    );

    /// Per-thread pool of reusable work buffers.
    fn scratch_pool() -> &'static LocalKey<RefCell<Vec<Vec<Self>>>>;
}

fn max_index(rows: usize, cols: usize, (rs, cs): (isize, isize)) -> usize {
    if rows == 0 || cols == 0 {
        return 0;
    }
    (rows - 1) * rs as usize + (cols - 1) * cs as usize
}

macro_rules! impl_element {
    ($t:ty, $name:literal, $gemm:path) => {
        impl Element for $t {
            const NAME: &'static str = $name;

            #[inline]
            fn from_f64(v: f64) -> Self {
                v as $t
            }

            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                a_strides: (isize, isize),
                b: &[Self],
                b_strides: (isize, isize),
                beta: Self,
                c: &mut [Self],
                c_strides: (isize, isize),
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                assert!(a_strides.0 >= 0 && a_strides.1 >= 0);
                assert!(b_strides.0 >= 0 && b_strides.1 >= 0);
                assert!(c_strides.0 >= 0 && c_strides.1 >= 0);
                if k > 0 {
                    assert!(max_index(m, k, a_strides) < a.len(), "gemm: lhs out of bounds");
                    assert!(max_index(k, n, b_strides) < b.len(), "gemm: rhs out of bounds");
                }
                assert!(max_index(m, n, c_strides) < c.len(), "gemm: output out of bounds");
                // SAFETY: every index touched by the kernel was bounds-checked above.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        a_strides.0,
                        a_strides.1,
                        b.as_ptr(),
                        b_strides.0,
                        b_strides.1,
                        beta,
                        c.as_mut_ptr(),
                        c_strides.0,
                        c_strides.1,
                    );
                }
            }

            fn scratch_pool() -> &'static LocalKey<RefCell<Vec<Vec<Self>>>> {
                thread_local! {
                    static POOL: RefCell<Vec<Vec<$t>>> = const { RefCell::new(Vec::new()) };
                }
                &POOL
            }
        }
    };
}

impl_element!(f32, "f32", matrixmultiply::sgemm);
impl_element!(f64, "f64", matrixmultiply::dgemm);

/// Extents of a tensor: `[batch, channel, height, width]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape(pub [usize; 4]);

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape([n, c, h, w])
    }

    pub const fn scalar() -> Self {
        Shape([1, 1, 1, 1])
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.0[0]
    }

    #[inline]
    pub fn c(&self) -> usize {
        self.0[1]
    }

    #[inline]
    pub fn h(&self) -> usize {
        self.0[2]
    }

    #[inline]
    pub fn w(&self) -> usize {
        self.0[3]
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    pub fn plane(&self) -> usize {
        self.h() * self.w()
    }

    pub fn with_channels(self, c: usize) -> Self {
        Shape([self.n(), c, self.h(), self.w()])
    }
}

impl Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let [n, c, h, w] = self.0;
        write!(f, "{n}x{c}x{h}x{w}")
    }
}

impl From<[usize; 4]> for Shape {
    fn from(v: [usize; 4]) -> Self {
        Shape(v)
    }
}

/// Contiguous row-major 4-D array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Element> Tensor<T> {
    pub fn zeros(shape: impl Into<Shape>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: impl Into<Shape>) -> Self {
        Self::full(shape, T::one())
    }

    pub fn full(shape: impl Into<Shape>, value: T) -> Self {
        let shape = shape.into();
        Tensor {
            data: vec![value; shape.numel()],
            shape,
        }
    }

    pub fn scalar(value: T) -> Self {
        Self::full(Shape::scalar(), value)
    }

    pub fn from_vec(shape: impl Into<Shape>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        if shape.numel() != data.len() {
            return Err(Error::shape(
                "from_vec",
                format!("{} elements for shape {shape}", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_fn(shape: impl Into<Shape>, mut f: impl FnMut([usize; 4]) -> T) -> Self {
        let shape = shape.into();
        let [n, c, h, w] = shape.0;
        let mut data = Vec::with_capacity(shape.numel());
        for ni in 0..n {
            for ci in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        data.push(f([ni, ci, y, x]));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    /// Uniform samples from `[lo, hi)`.
    pub fn uniform(shape: impl Into<Shape>, lo: f64, hi: f64, rng: &mut impl Rng) -> Self {
        let shape = shape.into();
        let data = (0..shape.numel())
            .map(|_| T::from_f64(rng.random_range(lo..hi)))
            .collect();
        Tensor { shape, data }
    }

    #[inline]
    pub fn shape(&self) -> Shape {
        self.shape
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn index(&self, [n, c, y, x]: [usize; 4]) -> usize {
        let [_, cs, hs, ws] = self.shape.0;
        ((n * cs + c) * hs + y) * ws + x
    }

    #[inline]
    pub fn at(&self, idx: [usize; 4]) -> T {
        self.data[self.index(idx)]
    }

    #[inline]
    pub fn set(&mut self, idx: [usize; 4], v: T) {
        let i = self.index(idx);
        self.data[i] = v;
    }

    /// One `height x width` plane.
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let p = self.shape.plane();
        let start = (n * self.shape.c() + c) * p;
        &self.data[start..start + p]
    }

    /// All channels of one batch item.
    pub fn item(&self, n: usize) -> &[T] {
        let len = self.shape.c() * self.shape.plane();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn item_mut(&mut self, n: usize) -> &mut [T] {
        let len = self.shape.c() * self.shape.plane();
        &mut self.data[n * len..(n + 1) * len]
    }

    pub fn map(&self, mut f: impl FnMut(T) -> T) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shape(
                "zip_map",
                format!("{} vs {}", self.shape, other.shape),
            ));
        }
        Ok(Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::from_f64(self.numel() as f64)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs().as_f64())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    /// Same data under a different shape with equal element count.
    pub fn reshape(self, shape: impl Into<Shape>) -> Result<Self> {
        Self::from_vec(shape, self.data)
    }

    /// Concatenates along the channel axis.
    pub fn concat_channels(parts: &[&Tensor<T>]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?
            .shape;
        let mut channels = 0;
        for p in parts {
            let s = p.shape;
            if s.n() != first.n() || s.h() != first.h() || s.w() != first.w() {
                return Err(Error::shape("concat_channels", format!("{s} vs {first}")));
            }
            channels += s.c();
        }
        let shape = first.with_channels(channels);
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..first.n() {
            for p in parts {
                data.extend_from_slice(p.item(n));
            }
        }
        Ok(Tensor { shape, data })
    }

    /// Splits along the channel axis into pieces of the given widths.
    pub fn split_channels(&self, widths: &[usize]) -> Result<Vec<Self>> {
        if widths.iter().sum::<usize>() != self.shape.c() {
            return Err(Error::shape(
                "split_channels",
                format!("widths {widths:?} do not sum to {}", self.shape.c()),
            ));
        }
        let plane = self.shape.plane();
        let mut out: Vec<Vec<T>> = widths
            .iter()
            .map(|w| Vec::with_capacity(w * plane * self.shape.n()))
            .collect();
        for n in 0..self.shape.n() {
            let item = self.item(n);
            let mut offset = 0;
            for (dst, &w) in out.iter_mut().zip(widths) {
                dst.extend_from_slice(&item[offset * plane..(offset + w) * plane]);
                offset += w;
            }
        }
        Ok(out
            .into_iter()
            .zip(widths)
            .map(|(data, &w)| Tensor {
                shape: self.shape.with_channels(w),
                data,
            })
            .collect())
    }

    /// Copies the `[y0, y0+h) x [x0, x0+w)` window.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Self> {
        if y0 + h > self.shape.h() || x0 + w > self.shape.w() {
            return Err(Error::shape(
                "crop",
                format!("window {h}x{w} at ({y0},{x0}) exceeds {}", self.shape),
            ));
        }
        let shape = Shape::new(self.shape.n(), self.shape.c(), h, w);
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.n() {
            for c in 0..shape.c() {
                let plane = self.plane(n, c);
                for y in y0..y0 + h {
                    let row = y * self.shape.w();
                    data.extend_from_slice(&plane[row + x0..row + x0 + w]);
                }
            }
        }
        Ok(Tensor { shape, data })
    }

    /// Writes `src` into this tensor with its top-left corner at `(y0, x0)`,
    /// copying only the `[sy0, sy0+h) x [sx0, sx0+w)` window of `src`.
    #[allow(clippy::too_many_arguments)]
    pub fn paste_window(
        &mut self,
        src: &Tensor<T>,
        (sy0, sx0): (usize, usize),
        (h, w): (usize, usize),
        (y0, x0): (usize, usize),
    ) {
        assert_eq!(src.shape.n(), self.shape.n());
        assert_eq!(src.shape.c(), self.shape.c());
        let dst_w = self.shape.w();
        let src_w = src.shape.w();
        for n in 0..self.shape.n() {
            for c in 0..self.shape.c() {
                let sp = (n * src.shape.c() + c) * src.shape.plane();
                let dp = (n * self.shape.c() + c) * self.shape.plane();
                for dy in 0..h {
                    let s = sp + (sy0 + dy) * src_w + sx0;
                    let d = dp + (y0 + dy) * dst_w + x0;
                    self.data[d..d + w].copy_from_slice(&src.data[s..s + w]);
                }
            }
        }
    }

    pub fn flip_vertical(&self) -> Self {
        let [_, _, h, _] = self.shape.0;
        Self::from_fn(self.shape, |[n, c, y, x]| self.at([n, c, h - 1 - y, x]))
    }

    pub fn flip_horizontal(&self) -> Self {
        let [_, _, _, w] = self.shape.0;
        Self::from_fn(self.shape, |[n, c, y, x]| self.at([n, c, y, w - 1 - x]))
    }

    /// Swaps the height and width axes.
    pub fn transpose_spatial(&self) -> Self {
        let [n, c, h, w] = self.shape.0;
        Self::from_fn(Shape::new(n, c, w, h), |[ni, ci, y, x]| self.at([ni, ci, x, y]))
    }

    /// Mean over the channel axis, giving a single-channel tensor.
    pub fn mean_channels(&self) -> Self {
        let [n, c, h, w] = self.shape.0;
        let inv = T::from_f64(1.0 / c as f64);
        Self::from_fn(Shape::new(n, 1, h, w), |[ni, _, y, x]| {
            let mut acc = T::zero();
            for ci in 0..c {
                acc = acc + self.at([ni, ci, y, x]);
            }
            acc * inv
        })
    }
}
