//! Comparison methods: the persistence benchmark, per-pixel linear
//! regression, and per-pixel random forest.
//!
//! The regression baselines see the same data as the networks, but pixel by
//! pixel: each training row is one pixel's `n_in`-step history (model space)
//! with its `n_out`-step future as the target. One global model is fitted
//! over the pooled pixels of all samples.

mod forest;
mod linreg;

pub use forest::{rf_fit, RfConfig, RfModel, Tree, TreeNode};
pub use linreg::{lr_fit, lr_fit_samples, LrModel, LrNormalEquations};

use crate::error::{Error, Result};
use crate::grid::{sample_to_tensors, Sample};
use crate::models::{repeat_last_frame, Forecaster};
use crate::nn::RngState;
use crate::tensor::Tensor;

/// Persistence benchmark: the prediction for every lead is the last observed
/// frame, value-exact.
pub fn bm_forecast(x: &Tensor, n_out: usize) -> Result<Tensor> {
    repeat_last_frame(x, n_out)
}

/// The persistence benchmark as a forecaster.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BmForecaster {
    pub n_in: usize,
    pub n_out: usize,
}

impl Default for BmForecaster {
    fn default() -> Self {
        Self { n_in: 9, n_out: 3 }
    }
}

impl Forecaster for BmForecaster {
    fn input_len(&self) -> usize {
        self.n_in
    }

    fn output_len(&self) -> usize {
        self.n_out
    }

    fn forecast(&mut self, x: &Tensor) -> Result<Tensor> {
        bm_forecast(x, self.n_out)
    }
}

/// Pooled per-pixel training rows in model space: `x` is rows x n_in,
/// `y` rows x n_out, both row-major.
#[derive(Debug, Clone)]
pub struct PixelDataset {
    pub n_in: usize,
    pub n_out: usize,
    pub rows: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

/// Extracts pixel rows from samples. With `max_rows`, a seeded uniform
/// subsample keeps fitting tractable on large grids.
pub fn pixel_rows(samples: &[Sample], max_rows: Option<usize>, seed: u64) -> Result<PixelDataset> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Data("no samples to extract pixel rows from".into()))?;
    let n_in = first.input.len();
    let n_out = first.target.len();
    let pixels = first.height() * first.width();
    let total = samples.len() * pixels;
    let keep: Vec<usize> = match max_rows {
        Some(max) if max < total => {
            let mut idx: Vec<usize> = (0..total).collect();
            RngState::new(seed).split(0x9A9).shuffle(&mut idx);
            let mut head: Vec<usize> = idx.into_iter().take(max).collect();
            head.sort_unstable();
            head
        }
        _ => (0..total).collect(),
    };
    let mut x = Vec::with_capacity(keep.len() * n_in);
    let mut y = Vec::with_capacity(keep.len() * n_out);
    // Convert sample by sample so each tensor is built once.
    let mut cursor = 0usize;
    for (si, sample) in samples.iter().enumerate() {
        let lo = si * pixels;
        let hi = lo + pixels;
        let in_range = &keep[cursor..];
        let n_here = in_range.iter().take_while(|&&k| k < hi).count();
        if n_here == 0 {
            continue;
        }
        let (xt, yt) = sample_to_tensors(sample)?;
        for &k in &keep[cursor..cursor + n_here] {
            let p = k - lo;
            for t in 0..n_in {
                x.push(xt.data()[t * pixels + p]);
            }
            for t in 0..n_out {
                y.push(yt.data()[t * pixels + p]);
            }
        }
        cursor += n_here;
    }
    Ok(PixelDataset {
        n_in,
        n_out,
        rows: keep.len(),
        x,
        y,
    })
}

/// Applies a per-pixel row predictor over a model-space input block,
/// assembling the predicted frames.
pub(crate) fn predict_per_pixel(
    x: &Tensor,
    n_out: usize,
    mut predict_row: impl FnMut(&[f64], &mut [f64]),
) -> Result<Tensor> {
    let [_, n_in, h, w, _] = x.dims5()?;
    let pixels = h * w;
    let mut out = Tensor::zeros(vec![1, n_out, h, w, 1]);
    let mut row = vec![0.0; n_in];
    let mut pred = vec![0.0; n_out];
    for p in 0..pixels {
        for t in 0..n_in {
            row[t] = x.data()[t * pixels + p];
        }
        predict_row(&row, &mut pred);
        for t in 0..n_out {
            out.data_mut()[t * pixels + p] = pred[t];
        }
    }
    Ok(out)
}
