use crate::{Error, Float, Result};

/// Dense NCHW tensor. Every tensor in the engine is four-dimensional; vectors
/// and scalars are `[n, c, 1, 1]` and `[1, 1, 1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    dims: [usize; 4],
    data: Vec<T>,
}

impl<T: Float> Tensor<T> {
    pub fn from_vec(dims: [usize; 4], data: Vec<T>) -> Result<Self> {
        let expected = dims.iter().product::<usize>();
        if expected != data.len() {
            return Err(Error::InvalidArgument(format!(
                "tensor of dims {dims:?} needs {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: [usize; 4]) -> Self {
        Self::full(dims, T::zero())
    }

    pub fn ones(dims: [usize; 4]) -> Self {
        Self::full(dims, T::one())
    }

    pub fn full(dims: [usize; 4], value: T) -> Self {
        Self {
            dims,
            data: vec![value; dims.iter().product()],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self::full([1, 1, 1, 1], value)
    }

    #[inline]
    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        let [_, cc, hh, ww] = self.dims;
        ((n * cc + c) * hh + h) * ww + w
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.index(n, c, h, w)]
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.data.len(), 1, "item() on tensor of dims {:?}", self.dims);
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Float>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims,
            data: self.data.iter().map(|&v| U::of(v.as_f64())).collect(),
        }
    }

    /// Plane `(n, c)` as a contiguous slice of `h*w` values.
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let hw = self.dims[2] * self.dims[3];
        let start = (n * self.dims[1] + c) * hw;
        &self.data[start..start + hw]
    }

    /// Sample `n` as a contiguous `[c, h, w]` slice.
    pub fn sample(&self, n: usize) -> &[T] {
        let chw = self.dims[1] * self.dims[2] * self.dims[3];
        &self.data[n * chw..(n + 1) * chw]
    }

    pub fn reshape(self, dims: [usize; 4]) -> Result<Self> {
        Self::from_vec(dims, self.data)
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        if self.dims != other.dims {
            return Err(Error::shape("max_abs_diff", self.dims, other.dims));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs())))
    }

    /// Bilinear resampling with half-pixel centres (no corner alignment).
    pub fn resize_bilinear(&self, out_h: usize, out_w: usize) -> Result<Self> {
        crate::ops::resize::forward(self, out_h, out_w)
    }
}
