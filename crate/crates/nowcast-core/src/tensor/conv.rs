//! 3-D convolution, its adjoint (transposed convolution), and the manual
//! gradient routines shared by both.
//!
//! Data layout contract:
//! - activations `[batch, time, height, width, channel]`
//! - kernels `[kt, kh, kw, in_channels, out_channels]`
//!
//! The forward pass is im2col + GEMM. The adjoint pass (used both as
//! `conv_transpose3d` and as the input gradient of `conv3d`) is the same
//! gather-GEMM over a virtual zero-stuffed input with a flipped,
//! channel-swapped kernel, so the two directions exercise genuinely distinct
//! code paths while remaining exact linear adjoints of each other.

use rayon::prelude::*;

use super::matmul::{dispatch_block_gemm, matmul_at_b_accum};
use super::Tensor;
use crate::error::{Error, Result};

/// Shape parameters of one convolution: kernel, stride, and zero padding per
/// (time, height, width) axis, plus the channel contract.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvSpec {
    pub kernel: (usize, usize, usize),
    pub stride: (usize, usize, usize),
    pub padding: (usize, usize, usize),
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ConvSpec {
    pub fn new(
        kernel: (usize, usize, usize),
        stride: (usize, usize, usize),
        padding: (usize, usize, usize),
        in_channels: usize,
        out_channels: usize,
    ) -> Result<Self> {
        let spec = Self {
            kernel,
            stride,
            padding,
            in_channels,
            out_channels,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Same-size spatial convolution: kernel k, stride 1, padding (k-1)/2.
    pub fn same_spatial(k: usize, in_channels: usize, out_channels: usize) -> Result<Self> {
        Self::new(
            (1, k, k),
            (1, 1, 1),
            (0, (k - 1) / 2, (k - 1) / 2),
            in_channels,
            out_channels,
        )
    }

    fn validate(&self) -> Result<()> {
        let (kt, kh, kw) = self.kernel;
        let (st, sh, sw) = self.stride;
        if kt == 0 || kh == 0 || kw == 0 {
            return Err(Error::Config("kernel entries must be >= 1".into()));
        }
        if st == 0 || sh == 0 || sw == 0 {
            return Err(Error::Config("stride entries must be >= 1".into()));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config("channel counts must be >= 1".into()));
        }
        Ok(())
    }

    /// Forward output size per axis: floor((d + 2p - k)/s) + 1.
    pub fn out_dims(&self, in_dims: (usize, usize, usize)) -> Result<(usize, usize, usize)> {
        let axis = |d: usize, k: usize, s: usize, p: usize, name: &str| -> Result<usize> {
            let padded = d + 2 * p;
            if padded < k {
                return Err(Error::Dim(format!(
                    "{} axis too small: size {} + 2*{} padding < kernel {}",
                    name, d, p, k
                )));
            }
            Ok((padded - k) / s + 1)
        };
        Ok((
            axis(in_dims.0, self.kernel.0, self.stride.0, self.padding.0, "time")?,
            axis(in_dims.1, self.kernel.1, self.stride.1, self.padding.1, "height")?,
            axis(in_dims.2, self.kernel.2, self.stride.2, self.padding.2, "width")?,
        ))
    }

    /// Transposed-convolution output size per axis: (d - 1)*s - 2p + k.
    pub fn transpose_out_dims(&self, in_dims: (usize, usize, usize)) -> Result<(usize, usize, usize)> {
        let axis = |d: usize, k: usize, s: usize, p: usize, name: &str| -> Result<usize> {
            let grown = (d - 1) * s + k;
            if d == 0 || grown < 2 * p + 1 {
                return Err(Error::Dim(format!(
                    "{} axis too small for transposed convolution: size {}",
                    name, d
                )));
            }
            Ok(grown - 2 * p)
        };
        Ok((
            axis(in_dims.0, self.kernel.0, self.stride.0, self.padding.0, "time")?,
            axis(in_dims.1, self.kernel.1, self.stride.1, self.padding.1, "height")?,
            axis(in_dims.2, self.kernel.2, self.stride.2, self.padding.2, "width")?,
        ))
    }

    fn expected_weight_shape(&self) -> [usize; 5] {
        [
            self.kernel.0,
            self.kernel.1,
            self.kernel.2,
            self.in_channels,
            self.out_channels,
        ]
    }

    fn check_weights(&self, w: &Tensor) -> Result<()> {
        let want = self.expected_weight_shape();
        if w.shape() != want {
            return Err(Error::Dim(format!(
                "weight shape {:?} does not match spec {:?}",
                w.shape(),
                want
            )));
        }
        Ok(())
    }
}

/// Source of input samples for the patch gatherer. Out-of-range coordinates
/// read as zero (zero padding).
trait Gather: Sync {
    fn channels(&self) -> usize;
    fn at(&self, b: usize, t: i64, h: i64, w: i64, c: usize) -> f64;

    /// Copies the `kw * channels` contiguous values starting at (t, h, w0)
    /// when the whole span is in bounds; returns false to request the
    /// element-wise fallback.
    fn row(&self, _b: usize, _t: i64, _h: i64, _w0: i64, _kw: usize, _out: &mut [f64]) -> bool {
        false
    }
}

/// A plain tensor with zero padding outside its bounds.
struct PlainPad<'a> {
    x: &'a Tensor,
    dims: [usize; 5],
}

impl Gather for PlainPad<'_> {
    #[inline]
    fn channels(&self) -> usize {
        self.dims[4]
    }

    #[inline]
    fn at(&self, b: usize, t: i64, h: i64, w: i64, c: usize) -> f64 {
        let [_, nt, nh, nw, _] = self.dims;
        if t < 0 || h < 0 || w < 0 || t as usize >= nt || h as usize >= nh || w as usize >= nw {
            return 0.0;
        }
        self.x.at5(b, t as usize, h as usize, w as usize, c)
    }

    #[inline]
    fn row(&self, b: usize, t: i64, h: i64, w0: i64, kw: usize, out: &mut [f64]) -> bool {
        let [_, nt, nh, nw, c] = self.dims;
        if t < 0 || h < 0 || w0 < 0 {
            return false;
        }
        let (t, h, w0) = (t as usize, h as usize, w0 as usize);
        if t >= nt || h >= nh || w0 + kw > nw {
            return false;
        }
        let start = self.x.idx5(b, t, h, w0, 0);
        out.copy_from_slice(&self.x.data()[start..start + kw * c]);
        true
    }
}

/// A tensor viewed with `stride - 1` virtual zeros inserted between adjacent
/// elements along each axis (the zero-stuffing that turns a strided adjoint
/// into a stride-1 gather).
struct Stuffed<'a> {
    x: &'a Tensor,
    dims: [usize; 5],
    stuff: (i64, i64, i64),
    virt: (i64, i64, i64),
}

impl Gather for Stuffed<'_> {
    #[inline]
    fn channels(&self) -> usize {
        self.dims[4]
    }

    #[inline]
    fn at(&self, b: usize, t: i64, h: i64, w: i64, c: usize) -> f64 {
        if t < 0 || h < 0 || w < 0 || t >= self.virt.0 || h >= self.virt.1 || w >= self.virt.2 {
            return 0.0;
        }
        if t % self.stuff.0 != 0 || h % self.stuff.1 != 0 || w % self.stuff.2 != 0 {
            return 0.0;
        }
        self.x.at5(
            b,
            (t / self.stuff.0) as usize,
            (h / self.stuff.1) as usize,
            (w / self.stuff.2) as usize,
            c,
        )
    }

    #[inline]
    fn row(&self, b: usize, t: i64, h: i64, w0: i64, kw: usize, out: &mut [f64]) -> bool {
        // Contiguous only when the width axis carries no virtual zeros.
        if self.stuff.2 != 1 || t < 0 || h < 0 || w0 < 0 {
            return false;
        }
        if t >= self.virt.0 || h >= self.virt.1 || w0 + kw as i64 > self.virt.2 {
            return false;
        }
        if t % self.stuff.0 != 0 || h % self.stuff.1 != 0 {
            return false;
        }
        let c = self.dims[4];
        let start = self.x.idx5(
            b,
            (t / self.stuff.0) as usize,
            (h / self.stuff.1) as usize,
            w0 as usize,
            0,
        );
        out.copy_from_slice(&self.x.data()[start..start + kw * c]);
        true
    }
}

/// Geometry of one gather-GEMM pass, after padding/stuffing normalization.
struct Geometry {
    out: (usize, usize, usize),
    kernel: (usize, usize, usize),
    stride: (i64, i64, i64),
    pad: (i64, i64, i64),
    k_cols: usize,
    out_channels: usize,
}

/// Rows of output positions processed per parallel task. Fixed so results do
/// not depend on the worker count.
const CONV_ROW_BLOCK: usize = 512;

fn gather_rows<G: Gather>(src: &G, geo: &Geometry, b: usize, r0: usize, buf: &mut [f64]) {
    let (ot, oh, ow) = geo.out;
    let (kt, kh, kw) = geo.kernel;
    let cin = src.channels();
    let rows = buf.len() / geo.k_cols;
    let row_span = kw * cin;
    for r in 0..rows {
        let idx = r0 + r;
        let wo = idx % ow;
        let ho = (idx / ow) % oh;
        let to = idx / (ow * oh);
        debug_assert!(to < ot);
        let t0 = to as i64 * geo.stride.0 - geo.pad.0;
        let h0 = ho as i64 * geo.stride.1 - geo.pad.1;
        let w0 = wo as i64 * geo.stride.2 - geo.pad.2;
        let mut col = r * geo.k_cols;
        for dt in 0..kt as i64 {
            for dh in 0..kh as i64 {
                let dst = &mut buf[col..col + row_span];
                if src.row(b, t0 + dt, h0 + dh, w0, kw, dst) {
                    col += row_span;
                } else {
                    for dw in 0..kw as i64 {
                        for c in 0..cin {
                            buf[col] = src.at(b, t0 + dt, h0 + dh, w0 + dw, c);
                            col += 1;
                        }
                    }
                }
            }
        }
    }
}

/// Core forward pass: `out[b, pos, co] = sum_col patches[pos, col] * w[col, co]`.
fn gather_gemm<G: Gather>(
    src: &G,
    geo: &Geometry,
    batch: usize,
    w_flat: &[f64],
    bias: Option<&[f64]>,
    out: &mut [f64],
) {
    let r_total = geo.out.0 * geo.out.1 * geo.out.2;
    let cout = geo.out_channels;
    for b in 0..batch {
        let out_b = &mut out[b * r_total * cout..(b + 1) * r_total * cout];
        out_b
            .par_chunks_mut(CONV_ROW_BLOCK * cout)
            .enumerate()
            .for_each(|(blk, chunk)| {
                let r0 = blk * CONV_ROW_BLOCK;
                let rows = chunk.len() / cout;
                let mut buf = vec![0.0; rows * geo.k_cols];
                gather_rows(src, geo, b, r0, &mut buf);
                dispatch_block_gemm(&buf, rows, geo.k_cols, w_flat, cout, chunk);
                if let Some(bias) = bias {
                    for r in 0..rows {
                        for (co, &bv) in bias.iter().enumerate() {
                            chunk[r * cout + co] += bv;
                        }
                    }
                }
            });
    }
}

/// Weight gradient: `gw[col, co] = sum_{b,pos} patches[pos, col] * gy[pos, co]`.
/// Per-block partials are reduced in fixed block order so the sum is
/// bit-deterministic for any thread count.
fn gather_weight_grad<G: Gather>(
    src: &G,
    geo: &Geometry,
    batch: usize,
    gy: &[f64],
    gw: &mut [f64],
) {
    let r_total = geo.out.0 * geo.out.1 * geo.out.2;
    let cout = geo.out_channels;
    let n_blocks = r_total.div_ceil(CONV_ROW_BLOCK);
    for b in 0..batch {
        let gy_b = &gy[b * r_total * cout..(b + 1) * r_total * cout];
        let partials: Vec<Vec<f64>> = (0..n_blocks)
            .into_par_iter()
            .map(|blk| {
                let r0 = blk * CONV_ROW_BLOCK;
                let rows = CONV_ROW_BLOCK.min(r_total - r0);
                let mut buf = vec![0.0; rows * geo.k_cols];
                gather_rows(src, geo, b, r0, &mut buf);
                let mut part = vec![0.0; geo.k_cols * cout];
                matmul_at_b_accum(
                    &buf,
                    rows,
                    geo.k_cols,
                    &gy_b[r0 * cout..(r0 + rows) * cout],
                    cout,
                    &mut part,
                );
                part
            })
            .collect();
        for part in partials {
            for (g, p) in gw.iter_mut().zip(part.iter()) {
                *g += p;
            }
        }
    }
}

/// Kernel flip + channel swap: turns `w[kt,kh,kw,cin,cout]` into the matrix
/// `[kt*kh*kw*cout, cin]` used by the adjoint gather-GEMM.
fn flip_swap_weights(w: &Tensor, spec: &ConvSpec) -> Vec<f64> {
    let (kt, kh, kw) = spec.kernel;
    let (cin, cout) = (spec.in_channels, spec.out_channels);
    let src = w.data();
    let mut out = vec![0.0; kt * kh * kw * cout * cin];
    for dt in 0..kt {
        for dh in 0..kh {
            for dw in 0..kw {
                let flip = ((kt - 1 - dt) * kh + (kh - 1 - dh)) * kw + (kw - 1 - dw);
                let fwd = (dt * kh + dh) * kw + dw;
                for co in 0..cout {
                    for ci in 0..cin {
                        out[(fwd * cout + co) * cin + ci] = src[(flip * cin + ci) * cout + co];
                    }
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Crate-internal kernels (shared with the model graphs).
// ---------------------------------------------------------------------------

pub(crate) fn conv_forward(
    x: &Tensor,
    w: &Tensor,
    bias: Option<&Tensor>,
    spec: &ConvSpec,
) -> Result<Tensor> {
    let dims = x.dims5()?;
    let [batch, t, h, wd, cin] = dims;
    if cin != spec.in_channels {
        return Err(Error::Dim(format!(
            "channel axis: input has {} channels, spec expects {}",
            cin, spec.in_channels
        )));
    }
    spec.check_weights(w)?;
    if let Some(b) = bias {
        if b.shape() != [spec.out_channels] {
            return Err(Error::Dim(format!(
                "bias shape {:?}, expected [{}]",
                b.shape(),
                spec.out_channels
            )));
        }
    }
    let (ot, oh, ow) = spec.out_dims((t, h, wd))?;
    let geo = Geometry {
        out: (ot, oh, ow),
        kernel: spec.kernel,
        stride: (
            spec.stride.0 as i64,
            spec.stride.1 as i64,
            spec.stride.2 as i64,
        ),
        pad: (
            spec.padding.0 as i64,
            spec.padding.1 as i64,
            spec.padding.2 as i64,
        ),
        k_cols: spec.kernel.0 * spec.kernel.1 * spec.kernel.2 * cin,
        out_channels: spec.out_channels,
    };
    let src = PlainPad { x, dims };
    let mut out = Tensor::zeros(vec![batch, ot, oh, ow, spec.out_channels]);
    gather_gemm(
        &src,
        &geo,
        batch,
        w.data(),
        bias.map(|b| b.data()),
        out.data_mut(),
    );
    Ok(out)
}

/// Applies the exact linear adjoint of `conv_forward(_, w, spec)` to `gy`,
/// producing a tensor with the given input-side spatial dims and
/// `spec.in_channels` channels. Also the forward pass of `conv_transpose3d`.
pub(crate) fn conv_adjoint(
    gy: &Tensor,
    w: &Tensor,
    spec: &ConvSpec,
    target: (usize, usize, usize),
) -> Result<Tensor> {
    let dims = gy.dims5()?;
    let [batch, gt, gh, gw, c] = dims;
    if c != spec.out_channels {
        return Err(Error::Dim(format!(
            "channel axis: adjoint input has {} channels, spec expects {}",
            c, spec.out_channels
        )));
    }
    spec.check_weights(w)?;
    let (kt, kh, kw) = spec.kernel;
    let (st, sh, sw) = spec.stride;
    let geo = Geometry {
        out: target,
        kernel: spec.kernel,
        stride: (1, 1, 1),
        pad: (
            kt as i64 - 1 - spec.padding.0 as i64,
            kh as i64 - 1 - spec.padding.1 as i64,
            kw as i64 - 1 - spec.padding.2 as i64,
        ),
        k_cols: kt * kh * kw * spec.out_channels,
        out_channels: spec.in_channels,
    };
    let src = Stuffed {
        x: gy,
        dims,
        stuff: (st as i64, sh as i64, sw as i64),
        virt: (
            ((gt - 1) * st + 1) as i64,
            ((gh - 1) * sh + 1) as i64,
            ((gw - 1) * sw + 1) as i64,
        ),
    };
    let wf = flip_swap_weights(w, spec);
    let mut out = Tensor::zeros(vec![batch, target.0, target.1, target.2, spec.in_channels]);
    gather_gemm(&src, &geo, batch, &wf, None, out.data_mut());
    Ok(out)
}

/// Gradient of a convolution with respect to its kernel:
/// `gw[d, ci, co] = sum over output positions of x[patch(d, ci)] * gy[pos, co]`.
pub(crate) fn conv_weight_grad(x: &Tensor, gy: &Tensor, spec: &ConvSpec) -> Result<Tensor> {
    let dims = x.dims5()?;
    let [batch, t, h, wd, cin] = dims;
    let (ot, oh, ow) = spec.out_dims((t, h, wd))?;
    let gdims = gy.dims5()?;
    if gdims != [batch, ot, oh, ow, spec.out_channels] {
        return Err(Error::Dim(format!(
            "upstream gradient shape {:?}, expected {:?}",
            gdims,
            [batch, ot, oh, ow, spec.out_channels]
        )));
    }
    let geo = Geometry {
        out: (ot, oh, ow),
        kernel: spec.kernel,
        stride: (
            spec.stride.0 as i64,
            spec.stride.1 as i64,
            spec.stride.2 as i64,
        ),
        pad: (
            spec.padding.0 as i64,
            spec.padding.1 as i64,
            spec.padding.2 as i64,
        ),
        k_cols: spec.kernel.0 * spec.kernel.1 * spec.kernel.2 * cin,
        out_channels: spec.out_channels,
    };
    let src = PlainPad { x, dims };
    let mut gw = Tensor::zeros(spec.expected_weight_shape().to_vec());
    gather_weight_grad(&src, &geo, batch, gy.data(), gw.data_mut());
    Ok(gw)
}

/// Bias gradient: upstream gradient summed over every non-channel axis.
pub(crate) fn conv_bias_grad(gy: &Tensor) -> Result<Tensor> {
    let [_, _, _, _, c] = gy.dims5()?;
    let mut gb = Tensor::zeros(vec![c]);
    let data = gy.data();
    let out = gb.data_mut();
    for chunk in data.chunks_exact(c) {
        for (o, v) in out.iter_mut().zip(chunk.iter()) {
            *o += v;
        }
    }
    Ok(gb)
}

// ---------------------------------------------------------------------------
// Public ops with caches.
// ---------------------------------------------------------------------------

/// Saved inputs for the backward pass of [`conv3d`]. Consumed by value, so a
/// cache cannot be applied twice.
#[derive(Debug)]
pub struct ConvCache {
    x: Tensor,
    w: Tensor,
    spec: ConvSpec,
    out_shape: Vec<usize>,
}

pub fn conv3d(x: &Tensor, w: &Tensor, b: &Tensor, spec: &ConvSpec) -> Result<(Tensor, ConvCache)> {
    let out = conv_forward(x, w, Some(b), spec)?;
    let cache = ConvCache {
        x: x.clone(),
        w: w.clone(),
        spec: spec.clone(),
        out_shape: out.shape().to_vec(),
    };
    Ok((out, cache))
}

/// Gradients of [`conv3d`] w.r.t. (input, weights, bias).
pub fn conv3d_grad(gy: &Tensor, cache: ConvCache) -> Result<(Tensor, Tensor, Tensor)> {
    if gy.shape() != cache.out_shape {
        return Err(Error::Dim(format!(
            "upstream gradient shape {:?}, forward produced {:?}",
            gy.shape(),
            cache.out_shape
        )));
    }
    let [_, t, h, w, _] = cache.x.dims5()?;
    let gx = conv_adjoint(gy, &cache.w, &cache.spec, (t, h, w))?;
    let gw = conv_weight_grad(&cache.x, gy, &cache.spec)?;
    let gb = conv_bias_grad(gy)?;
    Ok((gx, gw, gb))
}

/// Saved inputs for the backward pass of [`conv_transpose3d`].
#[derive(Debug)]
pub struct ConvTransposeCache {
    x: Tensor,
    w: Tensor,
    spec: ConvSpec,
    out_shape: Vec<usize>,
}

/// Transposed convolution: the linear adjoint of [`conv3d`] with the same
/// weights, stride, and padding. Input carries `spec.out_channels` channels
/// and the output carries `spec.in_channels`; output size per axis is
/// `(d - 1)*stride - 2*padding + kernel`.
pub fn conv_transpose3d(
    x: &Tensor,
    w: &Tensor,
    spec: &ConvSpec,
) -> Result<(Tensor, ConvTransposeCache)> {
    let [_, t, h, wd, _] = x.dims5()?;
    let target = spec.transpose_out_dims((t, h, wd))?;
    let out = conv_adjoint(x, w, spec, target)?;
    let cache = ConvTransposeCache {
        x: x.clone(),
        w: w.clone(),
        spec: spec.clone(),
        out_shape: out.shape().to_vec(),
    };
    Ok((out, cache))
}

/// Gradients of [`conv_transpose3d`] w.r.t. (input, weights).
pub fn conv_transpose3d_grad(gy: &Tensor, cache: ConvTransposeCache) -> Result<(Tensor, Tensor)> {
    if gy.shape() != cache.out_shape {
        return Err(Error::Dim(format!(
            "upstream gradient shape {:?}, forward produced {:?}",
            gy.shape(),
            cache.out_shape
        )));
    }
    // The adjoint of the adjoint is the forward map; weight gradient swaps the
    // roles of "input side" and "output side" relative to conv3d.
    let gx = conv_forward(gy, &cache.w, None, &cache.spec)?;
    let gw = conv_weight_grad(gy, &cache.x, &cache.spec)?;
    Ok((gx, gw))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::RngState;

    fn rand_tensor(shape: Vec<usize>, rng: &mut RngState) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
    }

    #[test]
    fn identity_kernel_is_identity() {
        let spec = ConvSpec::new((1, 1, 1), (1, 1, 1), (0, 0, 0), 2, 2).unwrap();
        let mut w = Tensor::zeros(vec![1, 1, 1, 2, 2]);
        w.data_mut()[0] = 1.0; // (ci=0, co=0)
        w.data_mut()[3] = 1.0; // (ci=1, co=1)
        let b = Tensor::zeros(vec![2]);
        let mut rng = RngState::new(7);
        let x = rand_tensor(vec![1, 2, 3, 3, 2], &mut rng);
        let (y, cache) = conv3d(&x, &w, &b, &spec).unwrap();
        assert_eq!(y, x);
        // Identity adjoint: gx = gy.
        let gy = rand_tensor(vec![1, 2, 3, 3, 2], &mut rng);
        let (gx, _, _) = conv3d_grad(&gy, cache).unwrap();
        assert_eq!(gx, gy);
    }

    #[test]
    fn all_ones_kernel_sums_neighborhood() {
        let spec = ConvSpec::new((3, 3, 3), (1, 1, 1), (1, 1, 1), 1, 1).unwrap();
        let w = Tensor::from_elem(vec![3, 3, 3, 1, 1], 1.0);
        let b = Tensor::zeros(vec![1]);
        let c = 0.7;
        let x = Tensor::from_elem(vec![1, 5, 5, 5, 1], c);
        let (y, _) = conv3d(&x, &w, &b, &spec).unwrap();
        // Interior voxels see the full 27-element window.
        assert!((y.at5(0, 2, 2, 2, 0) - 27.0 * c).abs() < 1e-12);
        // A corner sees a 2x2x2 window.
        assert!((y.at5(0, 0, 0, 0, 0) - 8.0 * c).abs() < 1e-12);
    }

    #[test]
    fn shape_law_forward_and_transpose() {
        let spec = ConvSpec::new((2, 2, 2), (2, 2, 2), (0, 0, 0), 1, 1).unwrap();
        assert_eq!(spec.out_dims((4, 6, 8)).unwrap(), (2, 3, 4));
        assert_eq!(spec.transpose_out_dims((4, 4, 4)).unwrap(), (8, 8, 8));
        // Floor truncation: 5 with k=2, s=2 -> 2.
        assert_eq!(spec.out_dims((5, 5, 5)).unwrap(), (2, 2, 2));
    }

    #[test]
    fn zero_gradient_in_zero_gradient_out() {
        let spec = ConvSpec::new((1, 3, 3), (1, 1, 1), (0, 1, 1), 2, 3).unwrap();
        let mut rng = RngState::new(3);
        let x = rand_tensor(vec![1, 2, 4, 4, 2], &mut rng);
        let w = rand_tensor(vec![1, 3, 3, 2, 3], &mut rng);
        let b = rand_tensor(vec![3], &mut rng);
        let (y, cache) = conv3d(&x, &w, &b, &spec).unwrap();
        let gy = Tensor::zeros_like(&y);
        let (gx, gw, gb) = conv3d_grad(&gy, cache).unwrap();
        assert!(gx.data().iter().all(|&v| v == 0.0));
        assert!(gw.data().iter().all(|&v| v == 0.0));
        assert!(gb.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn adjoint_identity_small() {
        let spec = ConvSpec::new((2, 3, 3), (1, 2, 2), (0, 1, 1), 2, 3).unwrap();
        let mut rng = RngState::new(11);
        let x = rand_tensor(vec![1, 3, 6, 6, 2], &mut rng);
        let w = rand_tensor(vec![2, 3, 3, 2, 3], &mut rng);
        let b = Tensor::zeros(vec![3]);
        let (y, _) = conv3d(&x, &w, &b, &spec).unwrap();
        let z = rand_tensor(y.shape().to_vec(), &mut rng);
        let xt = conv_adjoint(&z, &w, &spec, (3, 6, 6)).unwrap();
        let lhs = y.dot(&z).unwrap();
        let rhs = x.dot(&xt).unwrap();
        assert!(
            (lhs - rhs).abs() <= 1e-9 * lhs.abs().max(rhs.abs()).max(1.0),
            "adjoint identity violated: {} vs {}",
            lhs,
            rhs
        );
    }

    #[test]
    fn linearity_in_input() {
        let spec = ConvSpec::new((1, 3, 3), (1, 1, 1), (0, 1, 1), 1, 2).unwrap();
        let mut rng = RngState::new(5);
        let x = rand_tensor(vec![1, 2, 5, 5, 1], &mut rng);
        let z = rand_tensor(vec![1, 2, 5, 5, 1], &mut rng);
        let w = rand_tensor(vec![1, 3, 3, 1, 2], &mut rng);
        let b = Tensor::zeros(vec![2]);
        let (alpha, beta) = (0.37, -1.21);
        let mut combo = x.clone();
        combo.scale(alpha);
        combo.add_scaled(&z, beta).unwrap();
        let (y_combo, _) = conv3d(&combo, &w, &b, &spec).unwrap();
        let (yx, _) = conv3d(&x, &w, &b, &spec).unwrap();
        let (yz, _) = conv3d(&z, &w, &b, &spec).unwrap();
        let mut want = yx.clone();
        want.scale(alpha);
        want.add_scaled(&yz, beta).unwrap();
        for (a, b) in y_combo.data().iter().zip(want.data().iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn transpose_identity_kernel() {
        let spec = ConvSpec::new((1, 1, 1), (1, 1, 1), (0, 0, 0), 1, 1).unwrap();
        let w = Tensor::from_elem(vec![1, 1, 1, 1, 1], 1.0);
        let mut rng = RngState::new(2);
        let x = rand_tensor(vec![1, 2, 3, 3, 1], &mut rng);
        let (y, _) = conv_transpose3d(&x, &w, &spec).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn rejects_channel_mismatch() {
        let spec = ConvSpec::new((1, 1, 1), (1, 1, 1), (0, 0, 0), 3, 1).unwrap();
        let x = Tensor::zeros(vec![1, 1, 2, 2, 2]);
        let w = Tensor::zeros(vec![1, 1, 1, 3, 1]);
        let b = Tensor::zeros(vec![1]);
        let err = conv3d(&x, &w, &b, &spec).unwrap_err();
        assert!(err.to_string().contains("channel"));
    }
}
