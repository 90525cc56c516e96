//! Dense row-major tensors with exact allocation accounting.

mod ops;
mod tracker;

pub(crate) use ops::kernels;
pub use ops::{crop, logsumexp_last, matmul};
pub use tracker::MemoryTracker;

use std::fmt;
use std::str::FromStr;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_RANK: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn bytes_per_element(self) -> usize {
        match self {
            Precision::F32 => 4,
            Precision::F64 => 8,
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(Error::InvalidInput(format!("unknown precision `{other}`"))),
        }
    }
}

/// Scalar types a [`Tensor`] can hold.
pub trait Element:
    Float + Default + Send + Sync + fmt::Debug + fmt::Display + std::iter::Sum + 'static
{
    const PRECISION: Precision;

    fn cast(v: f64) -> Self;
    fn widen(self) -> f64;
}

impl Element for f32 {
    const PRECISION: Precision = Precision::F32;

    #[inline]
    fn cast(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn widen(self) -> f64 {
        self as f64
    }
}

impl Element for f64 {
    const PRECISION: Precision = Precision::F64;

    #[inline]
    fn cast(v: f64) -> Self {
        v
    }

    #[inline]
    fn widen(self) -> f64 {
        self
    }
}

/// Checks extents and returns the element count.
pub fn element_count(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.len() > MAX_RANK {
        return Err(Error::InvalidShape(format!(
            "rank must be 1..={MAX_RANK}, got shape {shape:?}"
        )));
    }
    if shape.contains(&0) {
        return Err(Error::InvalidShape(format!(
            "zero extent in shape {shape:?}"
        )));
    }
    shape.iter().try_fold(1usize, |acc, &d| {
        acc.checked_mul(d)
            .ok_or_else(|| Error::InvalidShape(format!("shape {shape:?} overflows")))
    })
}

/// Payload bytes a tensor of this shape and precision would occupy. Computed
/// in `u64` so that shapes far beyond host memory can still be sized.
pub fn payload_bytes(shape: &[usize], precision: Precision) -> u64 {
    shape.iter().map(|&d| d as u64).product::<u64>() * precision.bytes_per_element() as u64
}

/// Dense row-major tensor of rank 1 to 4.
///
/// The payload is registered with a [`MemoryTracker`] for the lifetime of the
/// value. There is deliberately no `Clone`: copies go through
/// [`Tensor::try_clone`] so they are accounted (and can fail).
pub struct Tensor<E: Element> {
    shape: Vec<usize>,
    data: Vec<E>,
    tracker: MemoryTracker,
    counted: bool,
}

impl<E: Element> Tensor<E> {
    fn from_parts(
        tracker: &MemoryTracker,
        shape: &[usize],
        fill: impl FnOnce(&mut Vec<E>, usize),
    ) -> Result<Self> {
        let n = element_count(shape)?;
        let bytes = (n * std::mem::size_of::<E>()) as u64;
        let counted = tracker.acquire(bytes)?;
        let mut data = Vec::new();
        if data.try_reserve_exact(n).is_err() {
            if counted {
                tracker.release(bytes);
            }
            return Err(Error::OutOfMemory {
                tensor: String::from("<unnamed>"),
                requested: bytes,
                live: tracker.live_bytes(),
                ceiling: tracker.ceiling().unwrap_or(u64::MAX),
            });
        }
        fill(&mut data, n);
        debug_assert_eq!(data.len(), n);
        Ok(Self {
            shape: shape.to_vec(),
            data,
            tracker: tracker.clone(),
            counted,
        })
    }

    /// Zero-initialized tensor.
    pub fn zeros(tracker: &MemoryTracker, shape: &[usize]) -> Result<Self> {
        Self::full(tracker, shape, E::zero())
    }

    /// Zero-initialized tensor whose out-of-memory error carries `name`.
    pub fn named_zeros(tracker: &MemoryTracker, shape: &[usize], name: &str) -> Result<Self> {
        Self::zeros(tracker, shape).map_err(|e| e.for_tensor(name))
    }

    pub fn full(tracker: &MemoryTracker, shape: &[usize], value: E) -> Result<Self> {
        Self::from_parts(tracker, shape, |d, n| d.resize(n, value))
    }

    pub fn from_vec(tracker: &MemoryTracker, shape: &[usize], values: Vec<E>) -> Result<Self> {
        let n = element_count(shape)?;
        if values.len() != n {
            return Err(Error::InvalidShape(format!(
                "shape {shape:?} needs {n} elements, got {}",
                values.len()
            )));
        }
        let bytes = (n * std::mem::size_of::<E>()) as u64;
        let counted = tracker.acquire(bytes)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: values,
            tracker: tracker.clone(),
            counted,
        })
    }

    pub fn from_fn(
        tracker: &MemoryTracker,
        shape: &[usize],
        mut f: impl FnMut(usize) -> E,
    ) -> Result<Self> {
        Self::from_parts(tracker, shape, |d, n| d.extend((0..n).map(&mut f)))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Payload size in bytes.
    pub fn bytes(&self) -> u64 {
        (self.data.len() * std::mem::size_of::<E>()) as u64
    }

    pub fn precision(&self) -> Precision {
        E::PRECISION
    }

    pub fn tracker(&self) -> &MemoryTracker {
        &self.tracker
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [E] {
        &mut self.data
    }

    pub fn to_vec(&self) -> Vec<E> {
        self.data.clone()
    }

    fn offset(&self, index: &[usize]) -> Option<usize> {
        if index.len() != self.shape.len() {
            return None;
        }
        let mut off = 0;
        for (&i, &d) in index.iter().zip(&self.shape) {
            if i >= d {
                return None;
            }
            off = off * d + i;
        }
        Some(off)
    }

    pub fn get(&self, index: &[usize]) -> Option<E> {
        self.offset(index).map(|o| self.data[o])
    }

    pub fn set(&mut self, index: &[usize], value: E) -> Result<()> {
        let o = self.offset(index).ok_or_else(|| {
            Error::InvalidShape(format!("index {index:?} outside shape {:?}", self.shape))
        })?;
        self.data[o] = value;
        Ok(())
    }

    /// Accounted copy.
    pub fn try_clone(&self) -> Result<Self> {
        Self::from_parts(&self.tracker, &self.shape, |d, _| {
            d.extend_from_slice(&self.data)
        })
    }

    /// Reinterprets the payload under a new shape with the same element count.
    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n = element_count(shape)?;
        if n != self.data.len() {
            return Err(Error::InvalidShape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Copies entry `index` of the leading axis into a tensor one rank lower.
    pub fn select(&self, index: usize) -> Result<Self> {
        let inner = self.shape[1..].to_vec();
        self.select_crop(index, &inner)
    }

    /// Like [`Tensor::select`], keeping only the leading `prefix` hyper-rectangle
    /// of the selected sub-tensor.
    pub fn select_crop(&self, index: usize, prefix: &[usize]) -> Result<Self> {
        if self.rank() < 2 {
            return Err(Error::InvalidShape("select needs rank >= 2".to_string()));
        }
        if index >= self.shape[0] {
            return Err(Error::InvalidShape(format!(
                "index {index} outside leading extent {}",
                self.shape[0]
            )));
        }
        let inner = &self.shape[1..];
        check_prefix(inner, prefix)?;
        let stride: usize = inner.iter().product();
        let src = &self.data[index * stride..(index + 1) * stride];
        Self::from_parts(&self.tracker, prefix, |d, _| {
            ops::copy_prefix(src, inner, prefix, d)
        })
    }

    /// Copies `src` into the leading region of entry `index` along axis 0.
    /// `src` must have rank one lower and fit inside the entry.
    pub fn write_prefix(&mut self, index: usize, src: &Tensor<E>) -> Result<()> {
        if self.rank() != src.rank() + 1 || index >= self.shape[0] {
            return Err(Error::InvalidShape(format!(
                "cannot write {:?} into entry {index} of {:?}",
                src.shape, self.shape
            )));
        }
        let inner = self.shape[1..].to_vec();
        check_prefix(&inner, &src.shape)?;
        let stride: usize = inner.iter().product();
        let dst = &mut self.data[index * stride..(index + 1) * stride];
        ops::scatter_prefix(&src.data, &src.shape, dst, &inner);
        Ok(())
    }

    pub fn fill(&mut self, value: E) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    /// Element-wise `self += other`.
    pub fn add_assign(&mut self, other: &Tensor<E>) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::InvalidShape(format!(
                "add of {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: E) {
        self.data.iter_mut().for_each(|x| *x = *x * factor);
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs(&self) -> E {
        self.data
            .iter()
            .fold(E::zero(), |m, &x| if x.abs() > m { x.abs() } else { m })
    }
}

fn check_prefix(shape: &[usize], prefix: &[usize]) -> Result<()> {
    if prefix.len() != shape.len() {
        return Err(Error::InvalidShape(format!(
            "prefix {prefix:?} has wrong rank for {shape:?}"
        )));
    }
    if prefix.iter().zip(shape).any(|(&p, &d)| p == 0 || p > d) {
        return Err(Error::InvalidShape(format!(
            "prefix {prefix:?} does not fit in {shape:?}"
        )));
    }
    Ok(())
}

impl<E: Element> Drop for Tensor<E> {
    fn drop(&mut self) {
        if self.counted {
            self.tracker.release(self.bytes());
        }
    }
}

impl<E: Element> fmt::Debug for Tensor<E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = f.debug_struct("Tensor");
        s.field("shape", &self.shape)
            .field("precision", &E::PRECISION);
        if self.data.len() <= 16 {
            s.field("data", &self.data);
        }
        s.finish()
    }
}

impl<E: Element> PartialEq for Tensor<E> {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.data == other.data
    }
}
