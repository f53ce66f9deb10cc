//! Global per-pixel linear regression: one affine map per output step from
//! the pixel's `n_in`-step history, shared across every pixel location.

use super::{predict_per_pixel, PixelDataset};
use crate::error::{Error, Result};
use crate::models::Forecaster;
use crate::nn::Checkpoint;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct LrModel {
    pub n_in: usize,
    pub n_out: usize,
    /// `weights[t]` has length `n_in`; prediction for step t is
    /// `dot(weights[t], history) + intercepts[t]`.
    pub weights: Vec<Vec<f64>>,
    pub intercepts: Vec<f64>,
    pub lambda: f64,
}

/// Streaming accumulator for the ridge normal equations: `a` holds
/// `[X 1]^T [X 1]` and `rhs[t]` holds `[X 1]^T y_t`.
#[derive(Debug, Clone)]
pub struct LrNormalEquations {
    n_in: usize,
    n_out: usize,
    rows: usize,
    a: Vec<f64>,
    rhs: Vec<Vec<f64>>,
}

impl LrNormalEquations {
    pub fn new(n_in: usize, n_out: usize) -> Self {
        let d = n_in + 1;
        Self {
            n_in,
            n_out,
            rows: 0,
            a: vec![0.0; d * d],
            rhs: vec![vec![0.0; d]; n_out],
        }
    }

    /// Folds one pixel row (`history` of n_in values, `future` of n_out) in.
    pub fn push(&mut self, history: &[f64], future: &[f64]) {
        let d = self.n_in + 1;
        self.rows += 1;
        for i in 0..self.n_in {
            for j in i..self.n_in {
                self.a[i * d + j] += history[i] * history[j];
            }
            self.a[i * d + (d - 1)] += history[i];
        }
        self.a[(d - 1) * d + (d - 1)] += 1.0;
        for (t, &y) in future.iter().enumerate() {
            for i in 0..self.n_in {
                self.rhs[t][i] += history[i] * y;
            }
            self.rhs[t][d - 1] += y;
        }
    }

    /// Solves per output step. The intercept column is not penalized.
    /// Consecutive rain frames correlate strongly, so a small positive
    /// `lambda` keeps the system well conditioned.
    pub fn solve(&self, lambda: f64) -> Result<LrModel> {
        if lambda < 0.0 || !lambda.is_finite() {
            return Err(Error::Config("ridge lambda must be a nonnegative real".into()));
        }
        if self.rows < 10 {
            return Err(Error::Data(format!(
                "need at least 10 pixel rows to fit, got {}",
                self.rows
            )));
        }
        let d = self.n_in + 1;
        let mut a = self.a.clone();
        for i in 0..d {
            for j in 0..i {
                a[i * d + j] = a[j * d + i];
            }
        }
        for i in 0..self.n_in {
            a[i * d + i] += lambda;
        }
        let mut weights = Vec::with_capacity(self.n_out);
        let mut intercepts = Vec::with_capacity(self.n_out);
        for t in 0..self.n_out {
            let sol = solve(a.clone(), self.rhs[t].clone(), d)?;
            weights.push(sol[..self.n_in].to_vec());
            intercepts.push(sol[self.n_in]);
        }
        Ok(LrModel {
            n_in: self.n_in,
            n_out: self.n_out,
            weights,
            intercepts,
            lambda,
        })
    }
}

/// Fits the regression from a materialized pixel dataset.
pub fn lr_fit(data: &PixelDataset, lambda: f64) -> Result<LrModel> {
    let mut eq = LrNormalEquations::new(data.n_in, data.n_out);
    for r in 0..data.rows {
        eq.push(
            &data.x[r * data.n_in..(r + 1) * data.n_in],
            &data.y[r * data.n_out..(r + 1) * data.n_out],
        );
    }
    eq.solve(lambda)
}

/// Fits the regression by streaming every pixel of every sample through the
/// normal equations, never materializing the row matrix.
pub fn lr_fit_samples(samples: &[crate::grid::Sample], lambda: f64) -> Result<LrModel> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Data("no samples to fit".into()))?;
    let n_in = first.input.len();
    let n_out = first.target.len();
    let mut eq = LrNormalEquations::new(n_in, n_out);
    let mut history = vec![0.0; n_in];
    let mut future = vec![0.0; n_out];
    for sample in samples {
        let (x, y) = crate::grid::sample_to_tensors(sample)?;
        let pixels = sample.height() * sample.width();
        for p in 0..pixels {
            for t in 0..n_in {
                history[t] = x.data()[t * pixels + p];
            }
            for t in 0..n_out {
                future[t] = y.data()[t * pixels + p];
            }
            eq.push(&history, &future);
        }
    }
    eq.solve(lambda)
}

/// Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<f64>, mut b: Vec<f64>, n: usize) -> Result<Vec<f64>> {
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .unwrap();
        if a[pivot * n + col].abs() < 1e-12 {
            return Err(Error::Numeric(
                "singular normal equations; refit with a positive ridge lambda".into(),
            ));
        }
        if pivot != col {
            for j in 0..n {
                a.swap(col * n + j, pivot * n + j);
            }
            b.swap(col, pivot);
        }
        let diag = a[col * n + col];
        for row in col + 1..n {
            let factor = a[row * n + col] / diag;
            if factor == 0.0 {
                continue;
            }
            for j in col..n {
                a[row * n + j] -= factor * a[col * n + j];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for j in row + 1..n {
            acc -= a[row * n + j] * x[j];
        }
        x[row] = acc / a[row * n + row];
    }
    Ok(x)
}

impl LrModel {
    pub fn predict_row(&self, history: &[f64], out: &mut [f64]) {
        for t in 0..self.n_out {
            let mut acc = self.intercepts[t];
            for (w, x) in self.weights[t].iter().zip(history.iter()) {
                acc += w * x;
            }
            out[t] = acc;
        }
    }

    /// Mean squared training residual over the fitted rows (model space).
    pub fn training_mse(&self, data: &PixelDataset) -> f64 {
        let mut pred = vec![0.0; self.n_out];
        let mut total = 0.0;
        for r in 0..data.rows {
            let row = &data.x[r * data.n_in..(r + 1) * data.n_in];
            self.predict_row(row, &mut pred);
            for t in 0..self.n_out {
                let d = pred[t] - data.y[r * data.n_out + t];
                total += d * d;
            }
        }
        total / (data.rows * self.n_out) as f64
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(
            "LR",
            format!("n_in={}\nn_out={}\nlambda={:e}\n", self.n_in, self.n_out, self.lambda),
        );
        let flat: Vec<f64> = self.weights.iter().flatten().copied().collect();
        ck.push("weights", vec![self.n_out, self.n_in], flat);
        ck.push("intercepts", vec![self.n_out], self.intercepts.clone());
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let n_in: usize = ck
            .config_value("n_in")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Format("LR checkpoint missing n_in".into()))?;
        let n_out: usize = ck
            .config_value("n_out")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Format("LR checkpoint missing n_out".into()))?;
        let lambda: f64 = ck
            .config_value("lambda")
            .and_then(|v| v.parse().ok())
            .unwrap_or(0.0);
        let w = ck.get("weights")?;
        let b = ck.get("intercepts")?;
        if w.data.len() != n_in * n_out || b.data.len() != n_out {
            return Err(Error::Format("LR checkpoint entries have wrong shapes".into()));
        }
        Ok(Self {
            n_in,
            n_out,
            weights: w.data.chunks_exact(n_in).map(|c| c.to_vec()).collect(),
            intercepts: b.data.clone(),
            lambda,
        })
    }
}

impl Forecaster for LrModel {
    fn input_len(&self) -> usize {
        self.n_in
    }

    fn output_len(&self) -> usize {
        self.n_out
    }

    fn forecast(&mut self, x: &Tensor) -> Result<Tensor> {
        let model = &*self;
        predict_per_pixel(x, model.n_out, |row, out| model.predict_row(row, out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::RngState;

    fn synthetic_rows(
        rows: usize,
        rule: impl Fn(&[f64]) -> [f64; 3],
        rng: &mut RngState,
    ) -> PixelDataset {
        let n_in = 9;
        let mut x = Vec::with_capacity(rows * n_in);
        let mut y = Vec::with_capacity(rows * 3);
        for _ in 0..rows {
            let row: Vec<f64> = (0..n_in).map(|_| rng.uniform(0.0, 3.0)).collect();
            let t = rule(&row);
            x.extend_from_slice(&row);
            y.extend_from_slice(&t);
        }
        PixelDataset {
            n_in,
            n_out: 3,
            rows,
            x,
            y,
        }
    }

    #[test]
    fn recovers_noiseless_linear_rule() {
        // target[t] = 2 * last-frame value, no noise.
        let mut rng = RngState::new(1);
        let ds = synthetic_rows(500, |row| [2.0 * row[8]; 3], &mut rng);
        let model = lr_fit(&ds, 1e-10).unwrap();
        for t in 0..3 {
            for (i, w) in model.weights[t].iter().enumerate() {
                let want = if i == 8 { 2.0 } else { 0.0 };
                assert!(
                    (w - want).abs() < 1e-8,
                    "step {} weight {} = {}",
                    t,
                    i,
                    w
                );
            }
            assert!(model.intercepts[t].abs() < 1e-8);
        }
    }

    #[test]
    fn zero_data_with_ridge_gives_zero_coefficients() {
        let ds = PixelDataset {
            n_in: 9,
            n_out: 3,
            rows: 20,
            x: vec![0.0; 20 * 9],
            y: vec![0.0; 20 * 3],
        };
        let model = lr_fit(&ds, 0.5).unwrap();
        assert!(model.weights.iter().flatten().all(|&w| w == 0.0));
        assert!(model.intercepts.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn training_residual_monotone_in_lambda() {
        let mut rng = RngState::new(7);
        let ds = synthetic_rows(
            300,
            |row| {
                [
                    row[8] * 1.3 + 0.2,
                    row[7] * 0.5 - row[8] * 0.1,
                    row[0] * 0.05,
                ]
            },
            &mut rng,
        );
        // Add noise so the fit is not exact.
        let mut noisy = ds.clone();
        let mut nrng = RngState::new(8);
        for v in noisy.y.iter_mut() {
            *v += 0.05 * nrng.normal();
        }
        let mut last = f64::INFINITY;
        for lambda in [1.0, 0.1, 0.01] {
            let model = lr_fit(&noisy, lambda).unwrap();
            let mse = model.training_mse(&noisy);
            assert!(
                mse <= last + 1e-12,
                "training error must not increase as lambda decreases"
            );
            last = mse;
        }
    }

    #[test]
    fn singular_system_advises_ridge() {
        // Constant duplicate features with lambda = 0 are singular.
        let ds = PixelDataset {
            n_in: 9,
            n_out: 3,
            rows: 15,
            x: vec![1.0; 15 * 9],
            y: vec![2.0; 15 * 3],
        };
        let err = lr_fit(&ds, 0.0).unwrap_err();
        assert!(err.to_string().contains("lambda"));
    }

    #[test]
    fn zero_coefficient_model_predicts_intercept() {
        let model = LrModel {
            n_in: 9,
            n_out: 3,
            weights: vec![vec![0.0; 9]; 3],
            intercepts: vec![0.7, -0.1, 0.3],
            lambda: 0.0,
        };
        let mut out = [0.0; 3];
        model.predict_row(&[5.0; 9], &mut out);
        assert_eq!(out, [0.7, -0.1, 0.3]);
    }

    #[test]
    fn persistence_weights_reduce_to_bm() {
        let mut w = vec![vec![0.0; 9]; 3];
        for step in w.iter_mut() {
            step[8] = 1.0;
        }
        let mut model = LrModel {
            n_in: 9,
            n_out: 3,
            weights: w,
            intercepts: vec![0.0; 3],
            lambda: 0.0,
        };
        let x = Tensor::new(
            vec![1, 9, 2, 2, 1],
            (0..36).map(|i| i as f64 * 0.1).collect(),
        )
        .unwrap();
        let y = model.forecast(&x).unwrap();
        let bm = super::super::bm_forecast(&x, 3).unwrap();
        assert_eq!(y, bm);
    }

    #[test]
    fn prediction_is_linear_without_intercepts() {
        let mut rng = RngState::new(3);
        let mut weights = vec![vec![0.0; 9]; 3];
        for step in weights.iter_mut() {
            for w in step.iter_mut() {
                *w = rng.uniform(-1.0, 1.0);
            }
        }
        let mut model = LrModel {
            n_in: 9,
            n_out: 3,
            weights,
            intercepts: vec![0.0; 3],
            lambda: 0.0,
        };
        let x = Tensor::new(
            vec![1, 9, 1, 2, 1],
            (0..18).map(|i| (i as f64).sin().abs()).collect(),
        )
        .unwrap();
        let alpha = 1.7;
        let mut xs = x.clone();
        xs.scale(alpha);
        let y1 = model.forecast(&xs).unwrap();
        let mut y2 = model.forecast(&x).unwrap();
        y2.scale(alpha);
        for (a, b) in y1.data().iter().zip(y2.data().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn checkpoint_roundtrip() {
        let model = LrModel {
            n_in: 9,
            n_out: 3,
            weights: (0..3).map(|t| (0..9).map(|i| (t * 9 + i) as f64 * 0.01).collect()).collect(),
            intercepts: vec![0.1, 0.2, 0.3],
            lambda: 1e-6,
        };
        let back = LrModel::from_checkpoint(&model.to_checkpoint()).unwrap();
        assert_eq!(back, model);
    }
}
