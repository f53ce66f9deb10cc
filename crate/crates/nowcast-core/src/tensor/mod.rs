//! Dense tensor container and the differentiable primitives every model is
//! built from: 3-D convolution, transposed convolution, max pooling, channel
//! concatenation, and pointwise nonlinearities.
//!
//! Each forward op returns `(output, cache)`; the paired `*_grad` function
//! consumes the cache (by value, so a cache cannot be replayed) and produces
//! gradients with respect to every differentiable input. All arithmetic is
//! f64; activations and gradients live in the axis order
//! `[batch, time, height, width, channel]`, row-major.

mod conv;
mod matmul;
mod ops;
mod pool;

pub use conv::{
    conv3d, conv3d_grad, conv_transpose3d, conv_transpose3d_grad, ConvCache, ConvSpec,
    ConvTransposeCache,
};
pub use ops::{
    binary, binary_grad, concat, concat_grad, unary, unary_grad, BinaryCache, BinaryKind,
    ConcatCache, UnaryCache, UnaryKind,
};
pub use pool::{maxpool, maxpool_grad, MaxPoolCache};

pub(crate) use conv::{conv_adjoint, conv_bias_grad, conv_forward, conv_weight_grad};
pub(crate) use ops::{sigmoid_scalar, tanh_scalar};

use crate::error::{Error, Result};

/// Dense multi-dimensional array of f64, row-major in the declared axis order
/// `[batch, time, height, width, channel]`. Axes of size 1 (and, for the
/// degenerate concat identity, size 0) are permitted.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor after checking that `data` fills `shape` exactly and
    /// every entry is finite.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(Error::Dim(format!(
                "data length {} does not match shape {:?} (expected {})",
                data.len(),
                shape,
                numel
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite value {} at flat index {}",
                data[i], i
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; numel],
        }
    }

    pub fn from_elem(shape: Vec<usize>, value: f64) -> Self {
        let numel = shape.iter().product();
        Self {
            shape,
            data: vec![value; numel],
        }
    }

    pub fn zeros_like(other: &Tensor) -> Self {
        Self::zeros(other.shape.clone())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// The shape as the canonical five axes `[b, t, h, w, c]`.
    pub fn dims5(&self) -> Result<[usize; 5]> {
        if self.shape.len() != 5 {
            return Err(Error::Dim(format!(
                "expected 5 axes [batch, time, height, width, channel], got {:?}",
                self.shape
            )));
        }
        Ok([
            self.shape[0],
            self.shape[1],
            self.shape[2],
            self.shape[3],
            self.shape[4],
        ])
    }

    #[inline]
    pub fn idx5(&self, b: usize, t: usize, h: usize, w: usize, c: usize) -> usize {
        let s = &self.shape;
        (((b * s[1] + t) * s[2] + h) * s[3] + w) * s[4] + c
    }

    #[inline]
    pub fn at5(&self, b: usize, t: usize, h: usize, w: usize, c: usize) -> f64 {
        self.data[self.idx5(b, t, h, w, c)]
    }

    #[inline]
    pub fn set5(&mut self, b: usize, t: usize, h: usize, w: usize, c: usize, v: f64) {
        let i = self.idx5(b, t, h, w, c);
        self.data[i] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise combination of two same-shaped tensors.
    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.check_same_shape(other)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// `self += alpha * other`, shapes must match.
    pub fn add_scaled(&mut self, other: &Tensor, alpha: f64) -> Result<()> {
        self.check_same_shape(other)?;
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        for v in &mut self.data {
            *v *= alpha;
        }
    }

    pub fn fill(&mut self, value: f64) {
        for v in &mut self.data {
            *v = value;
        }
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| a * b)
            .sum())
    }

    pub fn squared_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    fn check_same_shape(&self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Dim(format!(
                "shape mismatch: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    /// Slices one time step out of a `[b, t, h, w, c]` tensor, keeping a
    /// singleton time axis.
    pub fn time_slice(&self, t: usize) -> Result<Tensor> {
        let [b, nt, h, w, c] = self.dims5()?;
        if t >= nt {
            return Err(Error::Dim(format!(
                "time index {} out of range for {} steps",
                t, nt
            )));
        }
        if b != 1 {
            return Err(Error::Dim("time_slice expects batch size 1".into()));
        }
        let frame = h * w * c;
        let start = t * frame;
        Ok(Tensor {
            shape: vec![1, 1, h, w, c],
            data: self.data[start..start + frame].to_vec(),
        })
    }

    /// Stacks `[1, 1, h, w, c]` tensors along the time axis.
    pub fn stack_time(slices: &[Tensor]) -> Result<Tensor> {
        let first = slices
            .first()
            .ok_or_else(|| Error::Dim("cannot stack zero time slices".into()))?;
        let [_, _, h, w, c] = first.dims5()?;
        let mut data = Vec::with_capacity(slices.len() * h * w * c);
        for s in slices {
            let [sb, st, sh, sw, sc] = s.dims5()?;
            if (sb, st, sh, sw, sc) != (1, 1, h, w, c) {
                return Err(Error::Dim(format!(
                    "stack_time: slice shape {:?} differs from [1,1,{},{},{}]",
                    s.shape(),
                    h,
                    w,
                    c
                )));
            }
            data.extend_from_slice(&s.data);
        }
        Ok(Tensor {
            shape: vec![1, slices.len(), h, w, c],
            data,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_length_mismatch() {
        let err = Tensor::new(vec![2, 3], vec![0.0; 5]).unwrap_err();
        assert!(matches!(err, Error::Dim(_)));
    }

    #[test]
    fn new_rejects_non_finite() {
        let err = Tensor::new(vec![2], vec![1.0, f64::NAN]).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }

    #[test]
    fn idx5_is_row_major() {
        let t = Tensor::zeros(vec![2, 3, 4, 5, 6]);
        assert_eq!(t.idx5(0, 0, 0, 0, 0), 0);
        assert_eq!(t.idx5(0, 0, 0, 0, 1), 1);
        assert_eq!(t.idx5(0, 0, 0, 1, 0), 6);
        assert_eq!(t.idx5(1, 2, 3, 4, 5), 2 * 3 * 4 * 5 * 6 - 1);
    }

    #[test]
    fn time_slice_stack_roundtrip() {
        let x = Tensor::new(vec![1, 3, 1, 2, 1], (0..6).map(|v| v as f64).collect()).unwrap();
        let slices: Vec<Tensor> = (0..3).map(|t| x.time_slice(t).unwrap()).collect();
        assert_eq!(slices[1].data(), &[2.0, 3.0]);
        let back = Tensor::stack_time(&slices).unwrap();
        assert_eq!(back, x);
    }
}
