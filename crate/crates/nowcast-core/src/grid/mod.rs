//! Gridded half-hourly precipitation sequences: ingestion, synthesis,
//! windowing into training samples, and the model-space transform.

mod ncg;
mod synth;
mod transform;

pub use ncg::{read_sequence, write_sequence, NCG_HEADER_BYTES};
pub use synth::{synthesize, GaussianCell, SynthConfig};
pub use transform::{inverse_transform, transform, RATE_CAP_MM_H};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Default cadence of the half-hourly product, in seconds.
pub const DEFAULT_DT_SECONDS: u32 = 1800;

/// A single precipitation-rate raster (mm/h), row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFrame {
    values: Vec<f64>,
    height: usize,
    width: usize,
    /// Seconds since epoch.
    pub timestamp: i64,
}

impl GridFrame {
    /// Validates that values are nonnegative, finite, and fill `height x width`.
    pub fn new(values: Vec<f64>, height: usize, width: usize, timestamp: i64) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::Dim(format!(
                "frame has {} values for {}x{} grid",
                values.len(),
                height,
                width
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Data(format!(
                "invalid rate {} at pixel {} (rates must be finite and >= 0)",
                values[i], i
            )));
        }
        Ok(Self {
            values,
            height,
            width,
            timestamp,
        })
    }

    pub fn zeros(height: usize, width: usize, timestamp: i64) -> Self {
        Self {
            values: vec![0.0; height * width],
            height,
            width,
            timestamp,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }
}

/// A fixed-interval ordered run of frames sharing one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    frames: Vec<GridFrame>,
    pub dt_seconds: u32,
}

impl Sequence {
    /// Validates the shared grid shape and the strict `dt`-spaced timestamps.
    pub fn new(frames: Vec<GridFrame>, dt_seconds: u32) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::Data("sequence must contain at least one frame".into()));
        }
        if dt_seconds == 0 {
            return Err(Error::Config("dt_seconds must be positive".into()));
        }
        let (h, w) = (frames[0].height, frames[0].width);
        for (i, f) in frames.iter().enumerate() {
            if f.height != h || f.width != w {
                return Err(Error::Dim(format!(
                    "frame {} is {}x{}, expected {}x{}",
                    i, f.height, f.width, h, w
                )));
            }
        }
        for i in 1..frames.len() {
            let want = frames[i - 1].timestamp + dt_seconds as i64;
            if frames[i].timestamp != want {
                return Err(Error::Data(format!(
                    "frame {} timestamp {} is not previous + dt ({})",
                    i, frames[i].timestamp, want
                )));
            }
        }
        Ok(Self { frames, dt_seconds })
    }

    pub fn frames(&self) -> &[GridFrame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn height(&self) -> usize {
        self.frames[0].height
    }

    pub fn width(&self) -> usize {
        self.frames[0].width
    }
}

/// Windowing parameters: input length, target length, and window stride.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowConfig {
    pub n_in: usize,
    pub n_out: usize,
    pub stride: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            n_in: 9,
            n_out: 3,
            stride: 1,
        }
    }
}

impl WindowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_in == 0 || self.n_out == 0 {
            return Err(Error::Config("n_in and n_out must be >= 1".into()));
        }
        if self.stride == 0 {
            return Err(Error::Config("stride must be >= 1".into()));
        }
        Ok(())
    }
}

/// One training/evaluation sample: `n_in` consecutive input frames and the
/// `n_out` frames immediately following them.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: Vec<GridFrame>,
    pub target: Vec<GridFrame>,
}

impl Sample {
    pub fn height(&self) -> usize {
        self.input[0].height
    }

    pub fn width(&self) -> usize {
        self.input[0].width
    }

    /// The last observed frame, which the persistence benchmark repeats.
    pub fn last_input(&self) -> &GridFrame {
        self.input.last().expect("samples have at least one input")
    }
}

/// Slides a window over the sequence, yielding samples ordered by start
/// index. A sequence shorter than `n_in + n_out` yields an empty list.
pub fn window(seq: &Sequence, cfg: &WindowConfig) -> Result<Vec<Sample>> {
    cfg.validate()?;
    let need = cfg.n_in + cfg.n_out;
    let total = seq.len();
    if total < need {
        return Ok(Vec::new());
    }
    let count = (total - need) / cfg.stride + 1;
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let start = i * cfg.stride;
        out.push(Sample {
            input: seq.frames[start..start + cfg.n_in].to_vec(),
            target: seq.frames[start + cfg.n_in..start + need].to_vec(),
        });
    }
    Ok(out)
}

/// Converts frames to a model-space tensor `[1, T, H, W, 1]`, applying the
/// rate transform pixelwise.
pub fn frames_to_model_tensor(frames: &[GridFrame]) -> Result<Tensor> {
    let first = frames
        .first()
        .ok_or_else(|| Error::Data("no frames to convert".into()))?;
    let (h, w) = (first.height, first.width);
    let mut data = Vec::with_capacity(frames.len() * h * w);
    for f in frames {
        for &v in &f.values {
            data.push(transform(v)?);
        }
    }
    Tensor::new(vec![1, frames.len(), h, w, 1], data)
}

/// Converts a model-space tensor `[1, T, H, W, 1]` back to physical frames,
/// assigning timestamps `start_timestamp + k*dt`.
pub fn model_tensor_to_frames(
    t: &Tensor,
    start_timestamp: i64,
    dt_seconds: u32,
) -> Result<Vec<GridFrame>> {
    let [b, nt, h, w, c] = t.dims5()?;
    if b != 1 || c != 1 {
        return Err(Error::Dim(format!(
            "expected [1, T, H, W, 1] tensor, got {:?}",
            t.shape()
        )));
    }
    let mut frames = Vec::with_capacity(nt);
    for k in 0..nt {
        let mut values = Vec::with_capacity(h * w);
        for i in 0..h * w {
            values.push(inverse_transform(t.data()[k * h * w + i]));
        }
        frames.push(GridFrame::new(
            values,
            h,
            w,
            start_timestamp + k as i64 * dt_seconds as i64,
        )?);
    }
    Ok(frames)
}

/// Model-space `(input, target)` tensor pair for one sample.
pub fn sample_to_tensors(sample: &Sample) -> Result<(Tensor, Tensor)> {
    Ok((
        frames_to_model_tensor(&sample.input)?,
        frames_to_model_tensor(&sample.target)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq_of(n: usize, h: usize, w: usize) -> Sequence {
        let frames: Vec<GridFrame> = (0..n)
            .map(|i| GridFrame::zeros(h, w, i as i64 * 1800))
            .collect();
        Sequence::new(frames, 1800).unwrap()
    }

    #[test]
    fn window_count_formula() {
        let cfg = WindowConfig::default();
        assert_eq!(window(&seq_of(12, 2, 2), &cfg).unwrap().len(), 1);
        let samples = window(&seq_of(14, 2, 2), &cfg).unwrap();
        assert_eq!(samples.len(), 3);
        for (i, s) in samples.iter().enumerate() {
            assert_eq!(s.input[0].timestamp, i as i64 * 1800);
        }
    }

    #[test]
    fn too_short_sequence_yields_empty_list() {
        let cfg = WindowConfig::default();
        assert!(window(&seq_of(11, 2, 2), &cfg).unwrap().is_empty());
    }

    #[test]
    fn sample_target_follows_input() {
        let cfg = WindowConfig::default();
        let s = &window(&seq_of(12, 2, 2), &cfg).unwrap()[0];
        assert_eq!(s.input.len(), 9);
        assert_eq!(s.target.len(), 3);
        assert_eq!(
            s.target[0].timestamp,
            s.input.last().unwrap().timestamp + 1800
        );
    }

    #[test]
    fn stride_two_skips_starts() {
        let cfg = WindowConfig {
            stride: 2,
            ..WindowConfig::default()
        };
        let samples = window(&seq_of(16, 2, 2), &cfg).unwrap();
        assert_eq!(samples.len(), 3); // starts 0, 2, 4
        assert_eq!(samples[2].input[0].timestamp, 4 * 1800);
    }

    #[test]
    fn sequence_rejects_bad_timestamps() {
        let f0 = GridFrame::zeros(2, 2, 0);
        let f1 = GridFrame::zeros(2, 2, 1801);
        assert!(Sequence::new(vec![f0, f1], 1800).is_err());
    }

    #[test]
    fn sequence_rejects_mixed_shapes() {
        let f0 = GridFrame::zeros(2, 2, 0);
        let f1 = GridFrame::zeros(2, 3, 1800);
        assert!(Sequence::new(vec![f0, f1], 1800).is_err());
    }

    #[test]
    fn frame_rejects_negative_and_nan() {
        assert!(GridFrame::new(vec![0.0, -0.1], 1, 2, 0).is_err());
        assert!(GridFrame::new(vec![f64::NAN, 0.0], 1, 2, 0).is_err());
    }

    #[test]
    fn tensor_roundtrip_through_model_space() {
        let values = vec![0.0, 0.5, 2.0, 17.5];
        let f = GridFrame::new(values.clone(), 2, 2, 3600).unwrap();
        let t = frames_to_model_tensor(&[f]).unwrap();
        let back = model_tensor_to_frames(&t, 3600, 1800).unwrap();
        for (a, b) in back[0].values().iter().zip(values.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
