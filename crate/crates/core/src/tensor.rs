//! Dense rank-4 tensors, matrices and gradient containers.
//!
//! Layout is channel-last (`[batch, height, width, channels]`, channels
//! fastest), which turns a 1×1 convolution into one contiguous matrix product
//! per pixel.

use indexmap::IndexMap;
use rand::distributions::{Distribution, Uniform};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Extents of a [`Tensor`]: batch, rows, columns, channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Dims {
    pub const fn new(batch: usize, height: usize, width: usize, channels: usize) -> Self {
        Dims {
            batch,
            height,
            width,
            channels,
        }
    }

    pub fn len(&self) -> usize {
        self.batch * self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of spatial positions per image.
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn as_array(&self) -> [usize; 4] {
        [self.batch, self.height, self.width, self.channels]
    }

    pub fn with_channels(self, channels: usize) -> Self {
        Dims { channels, ..self }
    }

    #[inline]
    pub fn offset(&self, b: usize, i: usize, j: usize, c: usize) -> usize {
        ((b * self.height + i) * self.width + j) * self.channels + c
    }

    fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.height == 0 || self.width == 0 || self.channels == 0 {
            return Err(Error::InvalidTensor(format!(
                "all extents must be >= 1, got {:?}",
                self.as_array()
            )));
        }
        Ok(())
    }
}

/// Dense `[B, H, W, C]` array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    dims: Dims,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(dims: Dims, data: Vec<T>) -> Result<Self> {
        dims.validate()?;
        if data.len() != dims.len() {
            return Err(Error::InvalidTensor(format!(
                "data length {} does not match extents {:?}",
                data.len(),
                dims.as_array()
            )));
        }
        Ok(Tensor { dims, data })
    }

    pub fn zeros(dims: Dims) -> Result<Self> {
        Self::filled(dims, T::zero())
    }

    pub fn filled(dims: Dims, value: T) -> Result<Self> {
        dims.validate()?;
        Ok(Tensor {
            dims,
            data: vec![value; dims.len()],
        })
    }

    /// Build from a function of `(b, i, j, c)`.
    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Result<Self> {
        dims.validate()?;
        let mut data = Vec::with_capacity(dims.len());
        for b in 0..dims.batch {
            for i in 0..dims.height {
                for j in 0..dims.width {
                    for c in 0..dims.channels {
                        data.push(f(b, i, j, c));
                    }
                }
            }
        }
        Ok(Tensor { dims, data })
    }

    /// Shape-checked construction from `f64` values.
    pub fn from_f64(dims: Dims, values: &[f64]) -> Result<Self> {
        Self::new(dims, values.iter().map(|&v| T::from_f64(v)).collect())
    }

    pub(crate) fn from_parts(dims: Dims, data: Vec<T>) -> Self {
        debug_assert_eq!(dims.len(), data.len());
        Tensor { dims, data }
    }

    pub fn dims(&self) -> Dims {
        self.dims
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

    #[inline]
    pub fn get(&self, b: usize, i: usize, j: usize, c: usize) -> T {
        self.data[self.dims.offset(b, i, j, c)]
    }

    #[inline]
    pub fn set(&mut self, b: usize, i: usize, j: usize, c: usize, value: T) {
        let at = self.dims.offset(b, i, j, c);
        self.data[at] = value;
    }

    /// Channel vector at one pixel.
    #[inline]
    pub fn pixel(&self, b: usize, i: usize, j: usize) -> &[T] {
        let start = self.dims.offset(b, i, j, 0);
        &self.data[start..start + self.dims.channels]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.widen()).collect()
    }

    /// Convert to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims,
            data: self.data.iter().map(|v| U::from_f64(v.widen())).collect(),
        }
    }

    /// Images `start..start + count` along the batch axis.
    pub fn batch_range(&self, start: usize, count: usize) -> Result<Self> {
        if count == 0 || start + count > self.dims.batch {
            return Err(Error::Range(format!(
                "batch range {start}..{} outside 0..{}",
                start + count,
                self.dims.batch
            )));
        }
        let stride = self.dims.len() / self.dims.batch;
        let dims = Dims {
            batch: count,
            ..self.dims
        };
        Ok(Tensor {
            dims,
            data: self.data[start * stride..(start + count) * stride].to_vec(),
        })
    }

    /// Gather images by batch index.
    pub fn select_batch(&self, indices: &[usize]) -> Result<Self> {
        let stride = self.dims.len() / self.dims.batch;
        let mut data = Vec::with_capacity(indices.len() * stride);
        for &b in indices {
            if b >= self.dims.batch {
                return Err(Error::Range(format!(
                    "batch index {b} outside 0..{}",
                    self.dims.batch
                )));
            }
            data.extend_from_slice(&self.data[b * stride..(b + 1) * stride]);
        }
        Tensor::new(
            Dims {
                batch: indices.len(),
                ..self.dims
            },
            data,
        )
    }
}

/// Dense row-major `[rows, cols]` matrix.
///
/// Used for 1×1 kernels (`[Cin, M]`), im2col 3×3 kernels (`[9·Cin, M]`) and
/// per-sample logits (`[B, M]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidTensor(format!(
                "matrix extents must be >= 1, got [{rows}, {cols}]"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::InvalidTensor(format!(
                "data length {} does not match [{rows}, {cols}]",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        Self::new(rows, cols, vec![T::zero(); rows * cols])
    }

    pub fn from_f64(rows: usize, cols: usize, values: &[f64]) -> Result<Self> {
        Self::new(rows, cols, values.iter().map(|&v| T::from_f64(v)).collect())
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self::new(rows, cols, data)
    }

    pub(crate) fn from_parts(rows: usize, cols: usize, data: Vec<T>) -> Self {
        debug_assert_eq!(rows * cols, data.len());
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, value: T) {
        self.data[r * self.cols + c] = value;
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.widen()).collect()
    }

    pub fn cast<U: Scalar>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::from_f64(v.widen())).collect(),
        }
    }

    /// View a `[B, 1, 1, M]` tensor as a `[B, M]` matrix.
    pub fn from_pooled(t: Tensor<T>) -> Result<Self> {
        let d = t.dims();
        if d.height != 1 || d.width != 1 {
            return Err(Error::dims(
                "pooled-to-matrix",
                &d.as_array(),
                &[d.batch, 1, 1, d.channels],
            ));
        }
        Ok(Matrix::from_parts(d.batch, d.channels, t.into_data()))
    }

    /// View a `[B, M]` matrix as a `[B, 1, 1, M]` tensor.
    pub fn into_pooled(self) -> Tensor<T> {
        Tensor::from_parts(Dims::new(self.rows, 1, 1, self.cols), self.data)
    }
}

/// A learnable array's gradient or value, keyed by parameter path.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamArray<T> {
    pub dims: Vec<usize>,
    pub values: Vec<T>,
}

/// Ordered map from stable parameter paths (e.g. `head.block0.key.weight`)
/// to weight-shaped gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet<T> {
    entries: IndexMap<String, ParamArray<T>>,
}

impl<T: Scalar> Default for GradientSet<T> {
    fn default() -> Self {
        GradientSet {
            entries: IndexMap::new(),
        }
    }
}

impl<T: Scalar> GradientSet<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, path: impl Into<String>, dims: Vec<usize>, values: Vec<T>) {
        debug_assert_eq!(dims.iter().product::<usize>(), values.len());
        debug_assert!(values.iter().all(|v| v.is_finite()));
        self.entries
            .insert(path.into(), ParamArray { dims, values });
    }

    pub fn insert_matrix(&mut self, path: impl Into<String>, m: Matrix<T>) {
        let dims = vec![m.rows(), m.cols()];
        self.insert(path, dims, m.data);
    }

    pub fn insert_vector(&mut self, path: impl Into<String>, v: Vec<T>) {
        let dims = vec![v.len()];
        self.insert(path, dims, v);
    }

    /// Move every entry of `other` in under `prefix.`.
    pub fn absorb(&mut self, prefix: &str, other: GradientSet<T>) {
        for (k, v) in other.entries {
            self.entries.insert(format!("{prefix}.{k}"), v);
        }
    }

    pub fn get(&self, path: &str) -> Option<&ParamArray<T>> {
        self.entries.get(path)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamArray<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn is_finite(&self) -> bool {
        self.entries
            .values()
            .all(|a| a.values.iter().all(|v| v.is_finite()))
    }

    pub fn is_zero(&self) -> bool {
        self.entries
            .values()
            .all(|a| a.values.iter().all(|v| *v == T::zero()))
    }
}

/// Callback receiving `(path, shape, values)` for one learnable array.
pub type Visit<'a, T> = dyn FnMut(&str, &[usize], &[T]) + 'a;
pub type VisitMut<'a, T> = dyn FnMut(&str, &[usize], &mut [T]) + 'a;

/// Anything holding named learnable arrays.
///
/// Visitation order is stable and defines the parameter order used by
/// checkpoints and optimizers.
pub trait Parameterized<T: Scalar> {
    fn visit_params(&self, f: &mut Visit<'_, T>);

    fn visit_params_mut(&mut self, f: &mut VisitMut<'_, T>);

    /// Number of stored scalar parameters.
    fn param_count(&self) -> u64 {
        let mut total = 0u64;
        self.visit_params(&mut |_, _, values| total += values.len() as u64);
        total
    }
}

pub(crate) fn visit_matrix<T: Scalar>(path: &str, m: &Matrix<T>, f: &mut Visit<'_, T>) {
    f(path, &m.shape(), m.data());
}

pub(crate) fn visit_matrix_mut<T: Scalar>(path: &str, m: &mut Matrix<T>, f: &mut VisitMut<'_, T>) {
    let shape = m.shape();
    f(path, &shape, m.data_mut());
}

/// Uniform fan-in initialization: `U(-1/√fan_in, 1/√fan_in)`.
pub(crate) fn fan_in_matrix<T: Scalar>(
    rng: &mut ChaCha8Rng,
    rows: usize,
    cols: usize,
) -> Matrix<T> {
    let bound = (1.0 / rows as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound);
    let data = (0..rows * cols)
        .map(|_| T::from_f64(dist.sample(rng)))
        .collect();
    Matrix::from_parts(rows, cols, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_zero_extent_and_wrong_length() {
        assert!(Tensor::<f32>::zeros(Dims::new(1, 0, 2, 2)).is_err());
        assert!(Tensor::<f32>::new(Dims::new(1, 2, 2, 2), vec![0.0; 7]).is_err());
        assert!(Matrix::<f32>::new(2, 3, vec![0.0; 5]).is_err());
        assert!(Matrix::<f32>::zeros(0, 3).is_err());
    }

    #[test]
    fn offsets_are_channel_fastest() {
        let d = Dims::new(2, 3, 4, 5);
        assert_eq!(d.offset(0, 0, 0, 1), 1);
        assert_eq!(d.offset(0, 0, 1, 0), 5);
        assert_eq!(d.offset(0, 1, 0, 0), 20);
        assert_eq!(d.offset(1, 0, 0, 0), 60);
    }

    #[test]
    fn finite_predicate() {
        let mut t = Tensor::<f64>::zeros(Dims::new(1, 1, 1, 2)).unwrap();
        assert!(t.is_finite());
        t.set(0, 0, 0, 1, f64::NAN);
        assert!(!t.is_finite());
    }

    #[test]
    fn select_batch_gathers_images() {
        let t = Tensor::<f32>::from_fn(Dims::new(3, 1, 1, 2), |b, _, _, c| (b * 10 + c) as f32)
            .unwrap();
        let s = t.select_batch(&[2, 0]).unwrap();
        assert_eq!(s.data(), &[20.0, 21.0, 0.0, 1.0]);
        assert!(t.select_batch(&[3]).is_err());
        assert_eq!(t.batch_range(1, 1).unwrap().data(), &[10.0, 11.0]);
    }
}
