//! Synthetic advection sequences: sums of anisotropic Gaussian rain cells
//! drifting at constant per-cell velocity, growing or decaying exponentially,
//! and slowly rotating, plus optional clamped Gaussian noise.
//!
//! The generator is a pure function of its configuration (seed included), so
//! identical configs produce bit-identical sequences.

use super::{GridFrame, Sequence};
use crate::error::{Error, Result};
use crate::nn::RngState;

/// Configuration for [`synthesize`]. All ranges are inclusive `(min, max)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    pub n_frames: usize,
    pub n_cells: usize,
    /// Peak cell intensity in mm/h.
    pub intensity_range: (f64, f64),
    /// Cell speed in pixels per frame; direction is sampled uniformly.
    pub velocity_range: (f64, f64),
    /// Per-frame exponential intensity rate (negative decays, positive grows).
    pub growth_rate_range: (f64, f64),
    /// Standard deviation of additive Gaussian noise in mm/h (clamped >= 0).
    pub noise_std: f64,
    pub dt_seconds: u32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            n_frames: 40,
            n_cells: 3,
            intensity_range: (2.0, 8.0),
            velocity_range: (0.3, 1.2),
            growth_rate_range: (-0.02, 0.02),
            noise_std: 0.05,
            dt_seconds: super::DEFAULT_DT_SECONDS,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.n_frames == 0 {
            return Err(Error::Config("grid and frame counts must be positive".into()));
        }
        for (name, (lo, hi)) in [
            ("intensity_range", self.intensity_range),
            ("velocity_range", self.velocity_range),
            ("growth_rate_range", self.growth_rate_range),
        ] {
            if !(lo.is_finite() && hi.is_finite()) || lo > hi {
                return Err(Error::Config(format!("{} must satisfy min <= max", name)));
            }
        }
        if self.intensity_range.0 < 0.0 || self.velocity_range.0 < 0.0 {
            return Err(Error::Config(
                "intensities and speeds must be nonnegative".into(),
            ));
        }
        if !self.noise_std.is_finite() || self.noise_std < 0.0 {
            return Err(Error::Config("noise_std must be a nonnegative real".into()));
        }
        if self.dt_seconds == 0 {
            return Err(Error::Config("dt_seconds must be positive".into()));
        }
        Ok(())
    }
}

/// Cell extent relative to the short grid side: sigma is sampled from
/// `[side/16, side/6]`, and the rotation rate from +-0.05 rad/frame.
const SIGMA_FRACTION: (f64, f64) = (1.0 / 16.0, 1.0 / 6.0);
const MAX_ANGULAR_RATE: f64 = 0.05;

/// One anisotropic Gaussian rain cell with constant drift, exponential
/// intensity scaling, and constant-rate rotation of its covariance axes.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianCell {
    /// Initial center, (row, col) in pixels.
    pub center: (f64, f64),
    /// Drift in pixels per frame, (d_row, d_col).
    pub velocity: (f64, f64),
    /// Principal-axis standard deviations in pixels.
    pub sigmas: (f64, f64),
    /// Initial orientation of the first principal axis, radians.
    pub angle: f64,
    /// Orientation change per frame, radians.
    pub angular_rate: f64,
    /// Peak intensity at t = 0, mm/h.
    pub intensity: f64,
    /// Per-frame exponential intensity rate.
    pub growth_rate: f64,
}

impl GaussianCell {
    /// Closed-form cell contribution at pixel (row, col) and frame index t.
    pub fn eval(&self, row: f64, col: f64, t: f64) -> f64 {
        let cr = self.center.0 + self.velocity.0 * t;
        let cc = self.center.1 + self.velocity.1 * t;
        let theta = self.angle + self.angular_rate * t;
        let (sin, cos) = theta.sin_cos();
        // Rotate the offset into the cell frame, then apply the diagonal
        // inverse covariance.
        let dr = row - cr;
        let dc = col - cc;
        let u = cos * dr + sin * dc;
        let v = -sin * dr + cos * dc;
        let (s1, s2) = self.sigmas;
        let q = (u / s1).powi(2) + (v / s2).powi(2);
        self.intensity * (self.growth_rate * t).exp() * (-0.5 * q).exp()
    }

    fn sample(cfg: &SynthConfig, rng: &mut RngState) -> Self {
        let side = cfg.height.min(cfg.width) as f64;
        let speed = rng.uniform(cfg.velocity_range.0, cfg.velocity_range.1);
        let direction = rng.uniform(0.0, std::f64::consts::TAU);
        Self {
            center: (
                rng.uniform(0.0, cfg.height as f64),
                rng.uniform(0.0, cfg.width as f64),
            ),
            velocity: (speed * direction.sin(), speed * direction.cos()),
            sigmas: (
                rng.uniform(side * SIGMA_FRACTION.0, side * SIGMA_FRACTION.1),
                rng.uniform(side * SIGMA_FRACTION.0, side * SIGMA_FRACTION.1),
            ),
            angle: rng.uniform(0.0, std::f64::consts::TAU),
            angular_rate: rng.uniform(-MAX_ANGULAR_RATE, MAX_ANGULAR_RATE),
            intensity: rng.uniform(cfg.intensity_range.0, cfg.intensity_range.1),
            growth_rate: rng.uniform(cfg.growth_rate_range.0, cfg.growth_rate_range.1),
        }
    }
}

/// Renders the sum of `cells` on an `height x width` grid at frame index `t`.
pub fn render_cells(
    cells: &[GaussianCell],
    height: usize,
    width: usize,
    t: usize,
) -> Vec<f64> {
    let mut values = vec![0.0; height * width];
    for cell in cells {
        for r in 0..height {
            for c in 0..width {
                values[r * width + c] += cell.eval(r as f64, c as f64, t as f64);
            }
        }
    }
    values
}

/// Generates a sequence from the configuration. Cell parameters are sampled
/// once, noise per frame; everything derives from `cfg.seed`.
pub fn synthesize(cfg: &SynthConfig) -> Result<Sequence> {
    cfg.validate()?;
    let mut cell_rng = RngState::new(cfg.seed).split(1);
    let mut noise_rng = RngState::new(cfg.seed).split(2);
    let cells: Vec<GaussianCell> = (0..cfg.n_cells)
        .map(|_| GaussianCell::sample(cfg, &mut cell_rng))
        .collect();
    let mut frames = Vec::with_capacity(cfg.n_frames);
    for t in 0..cfg.n_frames {
        let mut values = render_cells(&cells, cfg.height, cfg.width, t);
        if cfg.noise_std > 0.0 {
            for v in &mut values {
                *v = (*v + cfg.noise_std * noise_rng.normal()).max(0.0);
            }
        }
        frames.push(GridFrame::new(
            values,
            cfg.height,
            cfg.width,
            t as i64 * cfg.dt_seconds as i64,
        )?);
    }
    Sequence::new(frames, cfg.dt_seconds)
}
