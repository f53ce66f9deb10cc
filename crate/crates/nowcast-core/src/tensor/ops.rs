//! Channel concatenation and pointwise (elementwise) operations with their
//! gradients.

use super::Tensor;
use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// Concatenation along the channel axis.
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct ConcatCache {
    a_channels: usize,
    b_channels: usize,
    out_shape: Vec<usize>,
}

/// Concatenates two tensors along the channel axis; `a`'s channels come
/// first. All other axes must agree.
pub fn concat(a: &Tensor, b: &Tensor) -> Result<(Tensor, ConcatCache)> {
    let [ab, at, ah, aw, ac] = a.dims5()?;
    let [bb, bt, bh, bw, bc] = b.dims5()?;
    if (ab, at, ah, aw) != (bb, bt, bh, bw) {
        return Err(Error::Dim(format!(
            "concat: non-channel axes differ, {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let oc = ac + bc;
    let mut out = Tensor::zeros(vec![ab, at, ah, aw, oc]);
    {
        let out_data = out.data_mut();
        let positions = ab * at * ah * aw;
        for p in 0..positions {
            let dst = p * oc;
            out_data[dst..dst + ac].copy_from_slice(&a.data()[p * ac..(p + 1) * ac]);
            out_data[dst + ac..dst + oc].copy_from_slice(&b.data()[p * bc..(p + 1) * bc]);
        }
    }
    let cache = ConcatCache {
        a_channels: ac,
        b_channels: bc,
        out_shape: out.shape().to_vec(),
    };
    Ok((out, cache))
}

/// Splits the upstream gradient back into the two channel groups.
pub fn concat_grad(gy: &Tensor, cache: ConcatCache) -> Result<(Tensor, Tensor)> {
    if gy.shape() != cache.out_shape {
        return Err(Error::Dim(format!(
            "upstream gradient shape {:?}, forward produced {:?}",
            gy.shape(),
            cache.out_shape
        )));
    }
    let [b, t, h, w, oc] = gy.dims5()?;
    let (ac, bc) = (cache.a_channels, cache.b_channels);
    let mut ga = Tensor::zeros(vec![b, t, h, w, ac]);
    let mut gb = Tensor::zeros(vec![b, t, h, w, bc]);
    let positions = b * t * h * w;
    for p in 0..positions {
        let src = p * oc;
        ga.data_mut()[p * ac..(p + 1) * ac].copy_from_slice(&gy.data()[src..src + ac]);
        gb.data_mut()[p * bc..(p + 1) * bc].copy_from_slice(&gy.data()[src + ac..src + oc]);
    }
    Ok((ga, gb))
}

// ---------------------------------------------------------------------------
// Pointwise unary ops.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UnaryKind {
    Sigmoid,
    Tanh,
    Relu,
    /// Leaky rectifier with the given negative-side slope.
    LeakyRelu(f64),
}

#[derive(Debug)]
pub struct UnaryCache {
    kind: UnaryKind,
    /// Saved output for sigmoid/tanh, saved input for the rectifiers.
    saved: Tensor,
}

#[inline]
pub(crate) fn sigmoid_scalar(v: f64) -> f64 {
    // Split on sign for numerical stability at large |v|; clamp saturated
    // values one ulp inside (0, 1) so gate outputs stay in the open interval.
    let s = if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, 1.0_f64.next_down())
}

#[inline]
pub(crate) fn tanh_scalar(v: f64) -> f64 {
    v.tanh().clamp((-1.0_f64).next_up(), 1.0_f64.next_down())
}

pub fn unary(x: &Tensor, kind: UnaryKind) -> (Tensor, UnaryCache) {
    let y = match kind {
        UnaryKind::Sigmoid => x.map(sigmoid_scalar),
        UnaryKind::Tanh => x.map(tanh_scalar),
        UnaryKind::Relu => x.map(|v| if v > 0.0 { v } else { 0.0 }),
        UnaryKind::LeakyRelu(slope) => x.map(|v| if v > 0.0 { v } else { slope * v }),
    };
    let saved = match kind {
        UnaryKind::Sigmoid | UnaryKind::Tanh => y.clone(),
        UnaryKind::Relu | UnaryKind::LeakyRelu(_) => x.clone(),
    };
    (y, UnaryCache { kind, saved })
}

pub fn unary_grad(gy: &Tensor, cache: UnaryCache) -> Result<Tensor> {
    match cache.kind {
        UnaryKind::Sigmoid => gy.zip_map(&cache.saved, |g, y| g * y * (1.0 - y)),
        UnaryKind::Tanh => gy.zip_map(&cache.saved, |g, y| g * (1.0 - y * y)),
        UnaryKind::Relu => gy.zip_map(&cache.saved, |g, x| if x > 0.0 { g } else { 0.0 }),
        UnaryKind::LeakyRelu(slope) => {
            gy.zip_map(&cache.saved, |g, x| if x > 0.0 { g } else { slope * g })
        }
    }
}

// ---------------------------------------------------------------------------
// Pointwise binary ops.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BinaryKind {
    Add,
    Hadamard,
}

#[derive(Debug)]
pub struct BinaryCache {
    kind: BinaryKind,
    /// Operands, saved only for the product rule.
    operands: Option<(Tensor, Tensor)>,
}

pub fn binary(a: &Tensor, b: &Tensor, kind: BinaryKind) -> Result<(Tensor, BinaryCache)> {
    let y = match kind {
        BinaryKind::Add => a.zip_map(b, |x, z| x + z)?,
        BinaryKind::Hadamard => a.zip_map(b, |x, z| x * z)?,
    };
    let operands = match kind {
        BinaryKind::Add => None,
        BinaryKind::Hadamard => Some((a.clone(), b.clone())),
    };
    Ok((y, BinaryCache { kind, operands }))
}

pub fn binary_grad(gy: &Tensor, cache: BinaryCache) -> Result<(Tensor, Tensor)> {
    match cache.kind {
        BinaryKind::Add => Ok((gy.clone(), gy.clone())),
        BinaryKind::Hadamard => {
            let (a, b) = cache.operands.expect("hadamard cache holds operands");
            Ok((gy.zip_map(&b, |g, v| g * v)?, gy.zip_map(&a, |g, v| g * v)?))
        }
    }
}
