//! Max pooling over disjoint (time, height, width) windows.

use super::Tensor;
use crate::error::{Error, Result};

/// Argmax positions recorded by [`maxpool`]; one flat input index per output
/// element, first-encountered in row-major window scan order on ties.
#[derive(Debug)]
pub struct MaxPoolCache {
    in_shape: Vec<usize>,
    out_shape: Vec<usize>,
    argmax: Vec<usize>,
}

/// Pools each disjoint `window` region to its maximum. Every pooled axis must
/// be divisible by its window size; pooling does not pad.
pub fn maxpool(x: &Tensor, window: (usize, usize, usize)) -> Result<(Tensor, MaxPoolCache)> {
    let [b, t, h, w, c] = x.dims5()?;
    let (wt, wh, ww) = window;
    if wt == 0 || wh == 0 || ww == 0 {
        return Err(Error::Config("pool window entries must be >= 1".into()));
    }
    for (axis, (d, win)) in [("time", (t, wt)), ("height", (h, wh)), ("width", (w, ww))]
        .iter()
        .map(|(n, p)| (*n, *p))
    {
        if d % win != 0 {
            return Err(Error::Dim(format!(
                "{} axis size {} not divisible by pool window {}",
                axis, d, win
            )));
        }
    }
    let (ot, oh, ow) = (t / wt, h / wh, w / ww);
    let mut out = Tensor::zeros(vec![b, ot, oh, ow, c]);
    let mut argmax = vec![0usize; out.numel()];
    for bi in 0..b {
        for to in 0..ot {
            for ho in 0..oh {
                for wo in 0..ow {
                    for ci in 0..c {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_idx = 0usize;
                        for dt in 0..wt {
                            for dh in 0..wh {
                                for dw in 0..ww {
                                    let idx =
                                        x.idx5(bi, to * wt + dt, ho * wh + dh, wo * ww + dw, ci);
                                    let v = x.data()[idx];
                                    if v > best {
                                        best = v;
                                        best_idx = idx;
                                    }
                                }
                            }
                        }
                        let oi = out.idx5(bi, to, ho, wo, ci);
                        out.data_mut()[oi] = best;
                        argmax[oi] = best_idx;
                    }
                }
            }
        }
    }
    let cache = MaxPoolCache {
        in_shape: x.shape().to_vec(),
        out_shape: out.shape().to_vec(),
        argmax,
    };
    Ok((out, cache))
}

/// Routes each upstream gradient value to the recorded argmax position; all
/// other positions receive zero.
pub fn maxpool_grad(gy: &Tensor, cache: MaxPoolCache) -> Result<Tensor> {
    if gy.shape() != cache.out_shape {
        return Err(Error::Dim(format!(
            "upstream gradient shape {:?}, forward produced {:?}",
            gy.shape(),
            cache.out_shape
        )));
    }
    let mut gx = Tensor::zeros(cache.in_shape.clone());
    for (oi, &ii) in cache.argmax.iter().enumerate() {
        gx.data_mut()[ii] += gy.data()[oi];
    }
    Ok(gx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pools_to_window_max() {
        let x = Tensor::new(vec![1, 1, 2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, _) = maxpool(&x, (1, 2, 2)).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1, 1]);
        assert_eq!(y.data(), &[4.0]);
    }

    #[test]
    fn grad_routes_to_argmax() {
        let x = Tensor::new(vec![1, 1, 2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (_, cache) = maxpool(&x, (1, 2, 2)).unwrap();
        let gy = Tensor::from_elem(vec![1, 1, 1, 1, 1], 1.0);
        let gx = maxpool_grad(&gy, cache).unwrap();
        assert_eq!(gx.data(), &[0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn tie_break_takes_first_in_scan_order() {
        // Constant field: every window element ties; the first position wins.
        let x = Tensor::from_elem(vec![1, 2, 2, 2, 1], 5.0);
        let (y, cache) = maxpool(&x, (2, 2, 2)).unwrap();
        assert_eq!(y.data(), &[5.0]);
        let gy = Tensor::from_elem(vec![1, 1, 1, 1, 1], 3.5);
        let gx = maxpool_grad(&gy, cache).unwrap();
        assert_eq!(gx.data()[0], 3.5);
        assert_eq!(gx.data().iter().sum::<f64>(), 3.5);
    }

    #[test]
    fn rejects_non_divisible_axis() {
        let x = Tensor::zeros(vec![1, 1, 3, 4, 1]);
        let err = maxpool(&x, (1, 2, 2)).unwrap_err();
        assert!(err.to_string().contains("height"));
    }
}
