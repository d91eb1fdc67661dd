//! Dense rank-4 tensors and a tape-based reverse-mode differentiation engine.
//!
//! Every value is laid out as `(batch, channel, height, width)` in row-major
//! order. The element type is generic over [`Real`], so the same graph code
//! runs in 32-bit (training) and 64-bit (gradient verification) precision.

mod kernels;
pub mod sobel;
mod tape;

pub mod fault;
pub mod gradcheck;

use std::fmt;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, NumCast};

use crate::error::{Error, Result};

pub use kernels::window_out;
pub use tape::{Activation, ElementwiseKind, PoolKind, Tape, Var, DEFAULT_DIV_EPS};

/// Scalar element type of a tensor.
pub trait Real:
    Float + Default + fmt::Debug + fmt::Display + Send + Sync + Sum + AddAssign + SubAssign + MulAssign + 'static
{
    fn lit(v: f64) -> Self {
        <Self as NumCast>::from(v).expect("literal representable")
    }

    fn to_f64_lossy(self) -> f64 {
        <f64 as NumCast>::from(self).unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Floating-point mode of a tape. All tensors on one tape share the mode,
/// which the type system enforces through `Tape<T>`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    Training,
    Verification,
}

impl Precision {
    pub fn bits(self) -> u32 {
        match self {
            Precision::Training => 32,
            Precision::Verification => 64,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Shape(pub [usize; 4]);

impl Shape {
    pub const fn new(b: usize, c: usize, h: usize, w: usize) -> Self {
        Shape([b, c, h, w])
    }

    pub const fn scalar() -> Self {
        Shape([1, 1, 1, 1])
    }

    pub fn b(&self) -> usize {
        self.0[0]
    }

    pub fn c(&self) -> usize {
        self.0[1]
    }

    pub fn h(&self) -> usize {
        self.0[2]
    }

    pub fn w(&self) -> usize {
        self.0[3]
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    /// Number of elements in one spatial plane.
    pub fn plane(&self) -> usize {
        self.h() * self.w()
    }

    /// Elements per batch item.
    pub fn item(&self) -> usize {
        self.c() * self.plane()
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [b, c, h, w] = self.0;
        write!(f, "({b},{c},{h},{w})")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::Dimension(format!(
                "data length {} does not match shape {shape}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: Shape) -> Self {
        Self::full(shape, T::one())
    }

    pub fn full(shape: Shape, v: T) -> Self {
        Tensor {
            shape,
            data: vec![v; shape.numel()],
        }
    }

    pub fn scalar(v: T) -> Self {
        Self::full(Shape::scalar(), v)
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut([usize; 4]) -> T) -> Self {
        let [b, c, h, w] = shape.0;
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..b {
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        data.push(f([n, ch, y, x]));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    pub fn from_f64(shape: Shape, data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| T::lit(v)).collect())
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn get(&self, idx: [usize; 4]) -> T {
        let s = self.shape;
        self.data[((idx[0] * s.c() + idx[1]) * s.h() + idx[2]) * s.w() + idx[3]]
    }

    /// One `(batch, channel)` plane.
    pub fn plane(&self, b: usize, c: usize) -> &[T] {
        let p = self.shape.plane();
        let start = (b * self.shape.c() + c) * p;
        &self.data[start..start + p]
    }

    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn reshape(self, shape: Shape) -> Result<Self> {
        Self::new(shape, self.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .map(|v| U::lit(v.to_f64_lossy()))
                .collect(),
        }
    }

    /// Stack single-item tensors along the batch axis.
    pub fn stack(items: &[&Tensor<T>]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::Dimension("cannot stack an empty list".into()))?;
        let s = first.shape;
        let mut data = Vec::with_capacity(s.numel() * items.len());
        let mut b = 0;
        for t in items {
            if t.shape.0[1..] != s.0[1..] {
                return Err(Error::Dimension(format!(
                    "cannot stack {} with {}",
                    t.shape, s
                )));
            }
            b += t.shape.b();
            data.extend_from_slice(&t.data);
        }
        Self::new(Shape::new(b, s.c(), s.h(), s.w()), data)
    }

    /// The `i`-th batch item as a tensor of batch size one.
    pub fn batch_item(&self, i: usize) -> Tensor<T> {
        let n = self.shape.item();
        Tensor {
            shape: Shape::new(1, self.shape.c(), self.shape.h(), self.shape.w()),
            data: self.data[i * n..(i + 1) * n].to_vec(),
        }
    }
}
