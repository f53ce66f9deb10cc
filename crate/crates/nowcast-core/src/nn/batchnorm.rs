//! Per-channel batch normalization with exponentially averaged running
//! statistics.

use super::ParamTensor;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Whether a batch-norm pass normalizes with batch statistics (updating the
/// running averages) or with the stored running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Infer,
}

/// Learned scale/shift plus running mean/variance per channel.
///
/// Running statistics start at (mean 0, variance 1), so an untrained state in
/// infer mode with gamma=1, beta=0 is close to the identity map.
#[derive(Debug, Clone)]
pub struct BatchNormState {
    pub gamma: ParamTensor,
    pub beta: ParamTensor,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub decay: f64,
    pub epsilon: f64,
    /// Set once a training pass has updated the running statistics.
    pub trained: bool,
}

impl BatchNormState {
    pub fn new(name: &str, channels: usize, decay: f64, epsilon: f64) -> Result<Self> {
        if !(0.0 < decay && decay < 1.0) {
            return Err(Error::Config(format!("decay {} outside (0, 1)", decay)));
        }
        if epsilon <= 0.0 {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        Ok(Self {
            gamma: ParamTensor::new(
                format!("{}.gamma", name),
                Tensor::from_elem(vec![channels], 1.0),
            ),
            beta: ParamTensor::new(format!("{}.beta", name), Tensor::zeros(vec![channels])),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            decay,
            epsilon,
            trained: false,
        })
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }
}

/// What the backward pass needs: normalized activations, the inverse standard
/// deviation per channel, and the gamma snapshot.
#[derive(Debug)]
pub struct BnCache {
    mode: BnMode,
    x_hat: Tensor,
    inv_std: Vec<f64>,
    gamma: Vec<f64>,
    /// True when an infer pass ran before any training updated the running
    /// statistics, i.e. the initialized (0, 1) stats were used.
    pub used_default_stats: bool,
}

/// Normalizes per channel over all non-channel axes.
///
/// Train mode uses batch statistics and folds them into the running averages
/// (`running <- decay*running + (1-decay)*batch`); infer mode reads the
/// running statistics and never mutates state.
pub fn batchnorm(
    x: &Tensor,
    st: &mut BatchNormState,
    mode: BnMode,
) -> Result<(Tensor, BnCache)> {
    let [_, _, _, _, c] = x.dims5()?;
    if c != st.channels() {
        return Err(Error::Dim(format!(
            "channel axis: input has {} channels, state has {}",
            c,
            st.channels()
        )));
    }
    let n = x.numel() / c;
    if n == 0 {
        return Err(Error::Dim("batchnorm over an empty tensor".into()));
    }
    let (mean, var, used_default) = match mode {
        BnMode::Train => {
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for chunk in x.data().chunks_exact(c) {
                for (m, v) in mean.iter_mut().zip(chunk.iter()) {
                    *m += v;
                }
            }
            for m in &mut mean {
                *m /= n as f64;
            }
            for chunk in x.data().chunks_exact(c) {
                for ci in 0..c {
                    let d = chunk[ci] - mean[ci];
                    var[ci] += d * d;
                }
            }
            for v in &mut var {
                *v /= n as f64;
            }
            for ci in 0..c {
                st.running_mean[ci] = st.decay * st.running_mean[ci] + (1.0 - st.decay) * mean[ci];
                st.running_var[ci] = st.decay * st.running_var[ci] + (1.0 - st.decay) * var[ci];
            }
            st.trained = true;
            (mean, var, false)
        }
        BnMode::Infer => (
            st.running_mean.clone(),
            st.running_var.clone(),
            !st.trained,
        ),
    };
    let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + st.epsilon).sqrt()).collect();
    let mut x_hat = Tensor::zeros_like(x);
    let mut y = Tensor::zeros_like(x);
    let gamma = st.gamma.value.data().to_vec();
    let beta = st.beta.value.data();
    {
        let xh = x_hat.data_mut();
        for (p, chunk) in x.data().chunks_exact(c).enumerate() {
            for ci in 0..c {
                let h = (chunk[ci] - mean[ci]) * inv_std[ci];
                xh[p * c + ci] = h;
            }
        }
        let yd = y.data_mut();
        for (i, &h) in xh.iter().enumerate() {
            let ci = i % c;
            yd[i] = gamma[ci] * h + beta[ci];
        }
    }
    let cache = BnCache {
        mode,
        x_hat,
        inv_std,
        gamma,
        used_default_stats: used_default,
    };
    Ok((y, cache))
}

/// Gradients of [`batchnorm`] w.r.t. (input, gamma, beta).
pub fn batchnorm_grad(gy: &Tensor, cache: BnCache) -> Result<(Tensor, Tensor, Tensor)> {
    if gy.shape() != cache.x_hat.shape() {
        return Err(Error::Dim(format!(
            "upstream gradient shape {:?}, forward produced {:?}",
            gy.shape(),
            cache.x_hat.shape()
        )));
    }
    let c = cache.gamma.len();
    let n = gy.numel() / c;
    let mut g_gamma = vec![0.0; c];
    let mut g_beta = vec![0.0; c];
    for (chunk, xh) in gy
        .data()
        .chunks_exact(c)
        .zip(cache.x_hat.data().chunks_exact(c))
    {
        for ci in 0..c {
            g_gamma[ci] += chunk[ci] * xh[ci];
            g_beta[ci] += chunk[ci];
        }
    }
    let mut gx = Tensor::zeros_like(gy);
    match cache.mode {
        BnMode::Train => {
            // gx = gamma*inv_std/n * (n*gy - sum(gy) - x_hat * sum(gy*x_hat))
            let gxd = gx.data_mut();
            for (i, (&g, &xh)) in gy.data().iter().zip(cache.x_hat.data().iter()).enumerate() {
                let ci = i % c;
                gxd[i] = cache.gamma[ci] * cache.inv_std[ci] / n as f64
                    * (n as f64 * g - g_beta[ci] - xh * g_gamma[ci]);
            }
        }
        BnMode::Infer => {
            // Running statistics are constants: a pure per-channel affine map.
            let gxd = gx.data_mut();
            for (i, &g) in gy.data().iter().enumerate() {
                let ci = i % c;
                gxd[i] = cache.gamma[ci] * cache.inv_std[ci] * g;
            }
        }
    }
    Ok((
        gx,
        Tensor::new(vec![c], g_gamma)?,
        Tensor::new(vec![c], g_beta)?,
    ))
}
