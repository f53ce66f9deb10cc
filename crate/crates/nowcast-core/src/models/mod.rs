//! The five nowcasting architectures: CNC, CNC-R, CNC-D (encoder-decoder
//! with spatial downsampling, skip connections, and a temporal-compression
//! head) and RNC, RNC-R (stacked convolutional LSTM unrolled over the input
//! then fed its own emissions).
//!
//! Every model maps a model-space tensor `[1, n_in, H, W, 1]` to
//! `[1, n_out, H, W, 1]`; batching over samples is the training loop's job.
//! Forward passes record explicit caches; `backward` consumes them and
//! accumulates into each parameter's `grad`.

mod blocks;
mod cnc;
mod convlstm;
mod rnc;

pub use blocks::{DecoderBlock, EncoderBlock};
pub use cnc::{CncCache, CncDCache, CncDModel, CncModel};
pub use convlstm::{convlstm_step, convlstm_step_backward, ConvLstmCell, ConvLstmState, StepCache};
pub use rnc::{RncCache, RncModel};

use crate::error::{Error, Result};
use crate::nn::{xavier_init, Checkpoint, ParamTensor, RngState};
use crate::tensor::{
    conv_adjoint, conv_bias_grad, conv_forward, conv_weight_grad, ConvSpec, Tensor,
};

/// Negative-side slope of the leaky rectifier used between convolutions.
pub(crate) const LEAKY_SLOPE: f64 = 0.01;

/// Architecture selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Cnc,
    CncR,
    CncD,
    Rnc,
    RncR,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Cnc,
        ModelKind::CncR,
        ModelKind::CncD,
        ModelKind::Rnc,
        ModelKind::RncR,
    ];

    pub fn tag(&self) -> &'static str {
        match self {
            ModelKind::Cnc => "CNC",
            ModelKind::CncR => "CNC-R",
            ModelKind::CncD => "CNC-D",
            ModelKind::Rnc => "RNC",
            ModelKind::RncR => "RNC-R",
        }
    }

    /// True for the recurrent architectures (which get gradient clipping).
    pub fn is_recurrent(&self) -> bool {
        matches!(self, ModelKind::Rnc | ModelKind::RncR)
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cnc" => Ok(ModelKind::Cnc),
            "cnc-r" => Ok(ModelKind::CncR),
            "cnc-d" => Ok(ModelKind::CncD),
            "rnc" => Ok(ModelKind::Rnc),
            "rnc-r" => Ok(ModelKind::RncR),
            other => Err(Error::Config(format!(
                "unknown model kind '{}' (expected cnc, cnc-r, cnc-d, rnc, or rnc-r)",
                other
            ))),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

/// Architecture hyperparameters. Defaults are the desk-scale configuration:
/// two encoder levels of 8 base channels, 8 hidden channels for the
/// recurrent cells, 3x3 spatial kernels, and the 9-in / 3-out window.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub depth: usize,
    pub base_channels: usize,
    pub hidden_channels: usize,
    pub spatial_kernel: usize,
    pub temporal_kernel: usize,
    pub n_in: usize,
    pub n_out: usize,
    pub rnc_layers: usize,
    /// Gate the previous cell state with the output gate instead of the
    /// forget gate in the cell-state update (see `convlstm`).
    pub eq5_literal: bool,
    pub bn_decay: f64,
    pub bn_epsilon: f64,
}

impl ModelConfig {
    pub fn new(kind: ModelKind) -> Self {
        Self {
            kind,
            depth: 2,
            base_channels: 8,
            hidden_channels: 8,
            spatial_kernel: 3,
            temporal_kernel: 3,
            n_in: 9,
            n_out: 3,
            rnc_layers: 2,
            eq5_literal: false,
            bn_decay: 0.9,
            bn_epsilon: 1e-5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.base_channels == 0 || self.hidden_channels == 0 {
            return Err(Error::Config("depth and channel counts must be >= 1".into()));
        }
        if self.spatial_kernel % 2 == 0 || self.temporal_kernel % 2 == 0 {
            return Err(Error::Config(
                "kernels must be odd so same-padding preserves dimensions".into(),
            ));
        }
        if self.n_in == 0 || self.n_out == 0 || self.n_in % self.n_out != 0 {
            return Err(Error::Config(format!(
                "n_in ({}) must be a positive multiple of n_out ({})",
                self.n_in, self.n_out
            )));
        }
        if self.rnc_layers == 0 {
            return Err(Error::Config("rnc_layers must be >= 1".into()));
        }
        Ok(())
    }

    /// Trunk convolution: same-size in time and space.
    pub(crate) fn trunk_spec(&self, cin: usize, cout: usize) -> Result<ConvSpec> {
        ConvSpec::new(
            (self.temporal_kernel, self.spatial_kernel, self.spatial_kernel),
            (1, 1, 1),
            (
                (self.temporal_kernel - 1) / 2,
                (self.spatial_kernel - 1) / 2,
                (self.spatial_kernel - 1) / 2,
            ),
            cin,
            cout,
        )
    }

    /// Output head: strided temporal convolution compressing `n_in` steps to
    /// `n_out` while preserving space.
    pub(crate) fn head_spec(&self, cin: usize) -> Result<ConvSpec> {
        let ratio = self.n_in / self.n_out;
        ConvSpec::new(
            (ratio, self.spatial_kernel, self.spatial_kernel),
            (ratio, 1, 1),
            (0, (self.spatial_kernel - 1) / 2, (self.spatial_kernel - 1) / 2),
            cin,
            1,
        )
    }

    /// Checks the `[1, n_in, H, W, 1]` input contract, including spatial
    /// divisibility by `2^depth` for the encoder-decoder models.
    pub(crate) fn check_input(&self, x: &Tensor, need_pool_divisibility: bool) -> Result<()> {
        let [b, t, h, w, c] = x.dims5()?;
        if b != 1 || c != 1 || t != self.n_in {
            return Err(Error::Dim(format!(
                "model input must be [1, {}, H, W, 1], got {:?}",
                self.n_in,
                x.shape()
            )));
        }
        if need_pool_divisibility {
            let factor = 1usize << self.depth;
            if h % factor != 0 || w % factor != 0 {
                return Err(Error::Dim(format!(
                    "spatial dims {}x{} not divisible by 2^depth = {}",
                    h, w, factor
                )));
            }
        }
        Ok(())
    }

    pub(crate) fn to_config_block(&self, height: usize, width: usize) -> String {
        format!(
            "kind={}\ndepth={}\nbase_channels={}\nhidden_channels={}\nspatial_kernel={}\n\
             temporal_kernel={}\nn_in={}\nn_out={}\nrnc_layers={}\neq5_literal={}\n\
             bn_decay={}\nbn_epsilon={}\nheight={}\nwidth={}\n",
            self.kind,
            self.depth,
            self.base_channels,
            self.hidden_channels,
            self.spatial_kernel,
            self.temporal_kernel,
            self.n_in,
            self.n_out,
            self.rnc_layers,
            self.eq5_literal,
            self.bn_decay,
            self.bn_epsilon,
            height,
            width
        )
    }

    pub(crate) fn from_checkpoint(ck: &Checkpoint) -> Result<(Self, usize, usize)> {
        fn want<'a>(ck: &'a Checkpoint, key: &str) -> Result<&'a str> {
            ck.config_value(key)
                .ok_or_else(|| Error::Format(format!("checkpoint config missing '{}'", key)))
        }
        fn parse<T: std::str::FromStr>(ck: &Checkpoint, key: &str) -> Result<T> {
            want(ck, key)?
                .parse()
                .map_err(|_| Error::Format(format!("bad checkpoint config value for '{}'", key)))
        }
        let kind: ModelKind = want(ck, "kind")?.parse()?;
        let cfg = ModelConfig {
            kind,
            depth: parse(ck, "depth")?,
            base_channels: parse(ck, "base_channels")?,
            hidden_channels: parse(ck, "hidden_channels")?,
            spatial_kernel: parse(ck, "spatial_kernel")?,
            temporal_kernel: parse(ck, "temporal_kernel")?,
            n_in: parse(ck, "n_in")?,
            n_out: parse(ck, "n_out")?,
            rnc_layers: parse(ck, "rnc_layers")?,
            eq5_literal: parse(ck, "eq5_literal")?,
            bn_decay: parse(ck, "bn_decay")?,
            bn_epsilon: parse(ck, "bn_epsilon")?,
        };
        cfg.validate()?;
        Ok((cfg, parse(ck, "height")?, parse(ck, "width")?))
    }
}

// ---------------------------------------------------------------------------
// Layer helpers shared by the architectures.
// ---------------------------------------------------------------------------

/// Convolution layer owning its kernel and bias parameters.
#[derive(Debug, Clone)]
pub(crate) struct ConvLayer {
    pub w: ParamTensor,
    pub b: ParamTensor,
    pub spec: ConvSpec,
}

impl ConvLayer {
    pub fn new(name: &str, spec: ConvSpec, rng: &mut RngState) -> Result<Self> {
        let w_shape = [
            spec.kernel.0,
            spec.kernel.1,
            spec.kernel.2,
            spec.in_channels,
            spec.out_channels,
        ];
        Ok(Self {
            w: ParamTensor::new(format!("{}.w", name), xavier_init(&w_shape, rng)?),
            b: ParamTensor::new(format!("{}.b", name), Tensor::zeros(vec![spec.out_channels])),
            spec,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        conv_forward(x, &self.w.value, Some(&self.b.value), &self.spec)
    }

    /// Accumulates weight/bias gradients and returns the input gradient.
    pub fn backward(&mut self, x: &Tensor, gy: &Tensor) -> Result<Tensor> {
        self.w.accumulate(&conv_weight_grad(x, gy, &self.spec)?)?;
        self.b.accumulate(&conv_bias_grad(gy)?)?;
        let [_, t, h, w, _] = x.dims5()?;
        conv_adjoint(gy, &self.w.value, &self.spec, (t, h, w))
    }
}

/// Transposed-convolution layer (no bias); input carries `spec.out_channels`
/// and the output `spec.in_channels`.
#[derive(Debug, Clone)]
pub(crate) struct DeconvLayer {
    pub w: ParamTensor,
    pub spec: ConvSpec,
}

impl DeconvLayer {
    pub fn new(name: &str, spec: ConvSpec, rng: &mut RngState) -> Result<Self> {
        let w_shape = [
            spec.kernel.0,
            spec.kernel.1,
            spec.kernel.2,
            spec.in_channels,
            spec.out_channels,
        ];
        Ok(Self {
            w: ParamTensor::new(format!("{}.w", name), xavier_init(&w_shape, rng)?),
            spec,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let [_, t, h, w, _] = x.dims5()?;
        let target = self.spec.transpose_out_dims((t, h, w))?;
        conv_adjoint(x, &self.w.value, &self.spec, target)
    }

    pub fn backward(&mut self, x: &Tensor, gy: &Tensor) -> Result<Tensor> {
        self.w.accumulate(&conv_weight_grad(gy, x, &self.spec)?)?;
        conv_forward(gy, &self.w.value, None, &self.spec)
    }
}

// ---------------------------------------------------------------------------
// Unified model wrapper.
// ---------------------------------------------------------------------------

/// Forward mode: training updates batch-norm running statistics, inference
/// reads them.
pub use crate::nn::BnMode;

/// Anything that maps an `n_in`-frame model-space block to `n_out` predicted
/// frames. Implemented by the five networks and the three baselines, which is
/// what lets the feedback-loop forecaster and the evaluation protocol treat
/// them uniformly.
pub trait Forecaster {
    fn input_len(&self) -> usize;
    fn output_len(&self) -> usize;
    /// `[1, n_in, H, W, 1]` model-space input to `[1, n_out, H, W, 1]`.
    fn forecast(&mut self, x: &Tensor) -> Result<Tensor>;
}

/// One of the five architectures behind a uniform forward/backward surface.
#[derive(Debug, Clone)]
pub enum Model {
    Cnc(CncModel),
    CncD(CncDModel),
    Rnc(RncModel),
}

/// Cache of one model forward pass; consumed by [`Model::backward`].
#[derive(Debug)]
pub enum ModelCache {
    Cnc(CncCache),
    CncD(CncDCache),
    Rnc(RncCache),
}

impl Model {
    /// Builds a model with freshly initialized parameters. `height`/`width`
    /// size the recurrent cells' per-location peephole weights; the
    /// convolutional models accept any divisible grid at forward time.
    pub fn new(cfg: &ModelConfig, height: usize, width: usize, rng: &mut RngState) -> Result<Self> {
        cfg.validate()?;
        match cfg.kind {
            ModelKind::Cnc => Ok(Model::Cnc(CncModel::new(cfg, false, rng)?)),
            ModelKind::CncR => Ok(Model::Cnc(CncModel::new(cfg, true, rng)?)),
            ModelKind::CncD => Ok(Model::CncD(CncDModel::new(cfg, rng)?)),
            ModelKind::Rnc => Ok(Model::Rnc(RncModel::new(cfg, false, height, width, rng)?)),
            ModelKind::RncR => Ok(Model::Rnc(RncModel::new(cfg, true, height, width, rng)?)),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Cnc(m) => {
                if m.residual {
                    ModelKind::CncR
                } else {
                    ModelKind::Cnc
                }
            }
            Model::CncD(_) => ModelKind::CncD,
            Model::Rnc(m) => {
                if m.residual {
                    ModelKind::RncR
                } else {
                    ModelKind::Rnc
                }
            }
        }
    }

    pub fn config(&self) -> &ModelConfig {
        match self {
            Model::Cnc(m) => &m.cfg,
            Model::CncD(m) => &m.cfg,
            Model::Rnc(m) => &m.cfg,
        }
    }

    pub fn forward(&mut self, x: &Tensor, mode: BnMode) -> Result<(Tensor, ModelCache)> {
        match self {
            Model::Cnc(m) => {
                let (y, c) = m.forward(x, mode)?;
                Ok((y, ModelCache::Cnc(c)))
            }
            Model::CncD(m) => {
                let (y, c) = m.forward(x, mode)?;
                Ok((y, ModelCache::CncD(c)))
            }
            Model::Rnc(m) => {
                let (y, c) = m.forward(x)?;
                Ok((y, ModelCache::Rnc(c)))
            }
        }
    }

    /// Reverse pass over one recorded forward; accumulates every parameter
    /// gradient and returns the gradient w.r.t. the input block.
    pub fn backward(&mut self, cache: ModelCache, gy: &Tensor) -> Result<Tensor> {
        match (self, cache) {
            (Model::Cnc(m), ModelCache::Cnc(c)) => m.backward(c, gy),
            (Model::CncD(m), ModelCache::CncD(c)) => m.backward(c, gy),
            (Model::Rnc(m), ModelCache::Rnc(c)) => m.backward(c, gy),
            _ => Err(Error::Contract(
                "model cache does not belong to this architecture".into(),
            )),
        }
    }

    pub fn params(&self) -> Vec<&ParamTensor> {
        match self {
            Model::Cnc(m) => m.params(),
            Model::CncD(m) => m.params(),
            Model::Rnc(m) => m.params(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        match self {
            Model::Cnc(m) => m.params_mut(),
            Model::CncD(m) => m.params_mut(),
            Model::Rnc(m) => m.params_mut(),
        }
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Serializes parameters, batch-norm running statistics, and the config
    /// block into an NCP1 checkpoint.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let (h, w) = match self {
            Model::Rnc(m) => (m.height, m.width),
            _ => (0, 0),
        };
        let mut ck = Checkpoint::new(self.kind().tag(), self.config().to_config_block(h, w));
        for p in self.params() {
            ck.push(p.name.clone(), p.value.shape().to_vec(), p.value.data().to_vec());
        }
        for (name, st) in self.bn_states() {
            ck.push(format!("{}.running_mean", name), vec![st.channels()], st.running_mean.clone());
            ck.push(format!("{}.running_var", name), vec![st.channels()], st.running_var.clone());
            ck.push(
                format!("{}.trained", name),
                vec![1],
                vec![if st.trained { 1.0 } else { 0.0 }],
            );
        }
        ck
    }

    /// Rebuilds a model from a checkpoint produced by [`Model::to_checkpoint`].
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let (cfg, height, width) = ModelConfig::from_checkpoint(ck)?;
        let mut rng = RngState::new(0);
        let mut model = Model::new(&cfg, height.max(1), width.max(1), &mut rng)?;
        for p in model.params_mut() {
            let e = ck.get(&p.name)?;
            if e.shape != p.value.shape() {
                return Err(Error::Format(format!(
                    "checkpoint entry '{}' has shape {:?}, model expects {:?}",
                    p.name,
                    e.shape,
                    p.value.shape()
                )));
            }
            p.value = Tensor::new(e.shape.clone(), e.data.clone())?;
        }
        for (name, st) in model.bn_states_mut() {
            let mean = ck.get(&format!("{}.running_mean", name))?;
            let var = ck.get(&format!("{}.running_var", name))?;
            let trained = ck.get(&format!("{}.trained", name))?;
            if mean.data.len() != st.channels() || var.data.len() != st.channels() {
                return Err(Error::Format(format!(
                    "checkpoint running stats for '{}' have wrong channel count",
                    name
                )));
            }
            st.running_mean = mean.data.clone();
            st.running_var = var.data.clone();
            st.trained = trained.data.first().copied().unwrap_or(0.0) != 0.0;
        }
        Ok(model)
    }

    fn bn_states(&self) -> Vec<(String, &crate::nn::BatchNormState)> {
        match self {
            Model::Cnc(m) => m.bn_states(),
            Model::CncD(m) => m.bn_states(),
            Model::Rnc(_) => Vec::new(),
        }
    }

    fn bn_states_mut(&mut self) -> Vec<(String, &mut crate::nn::BatchNormState)> {
        match self {
            Model::Cnc(m) => m.bn_states_mut(),
            Model::CncD(m) => m.bn_states_mut(),
            Model::Rnc(_) => Vec::new(),
        }
    }
}

impl Forecaster for Model {
    fn input_len(&self) -> usize {
        self.config().n_in
    }

    fn output_len(&self) -> usize {
        self.config().n_out
    }

    fn forecast(&mut self, x: &Tensor) -> Result<Tensor> {
        let (y, _) = self.forward(x, BnMode::Infer)?;
        Ok(y)
    }
}

/// Repeats the last input frame `n_out` times: `[1,n_in,H,W,1] -> [1,n_out,H,W,1]`.
pub(crate) fn repeat_last_frame(x: &Tensor, n_out: usize) -> Result<Tensor> {
    let [_, t, _, _, _] = x.dims5()?;
    let last = x.time_slice(t - 1)?;
    Tensor::stack_time(&vec![last; n_out])
}
