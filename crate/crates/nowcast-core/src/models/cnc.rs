//! The convolutional architectures: CNC (encoder-decoder with skip
//! connections and a temporal-compression head), CNC-R (adds the last input
//! frame to every output step), and CNC-D (shared encoder feeding a direct
//! branch and a residual branch, averaged).

use super::blocks::{DecBlockCache, DecoderBlock, EncBlockCache, EncoderBlock};
use super::{repeat_last_frame, ConvLayer, ModelConfig, LEAKY_SLOPE};
use crate::error::Result;
use crate::nn::{batchnorm, batchnorm_grad, BatchNormState, BnCache, BnMode, ParamTensor, RngState};
use crate::tensor::{unary, unary_grad, ConvSpec, Tensor, UnaryCache, UnaryKind};

/// Channel width at encoder level `i`.
fn level_channels(cfg: &ModelConfig, i: usize) -> usize {
    cfg.base_channels << i
}

// ---------------------------------------------------------------------------
// Shared encoder trunk (blocks + bottleneck conv pair).
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub(crate) struct CncEncoder {
    enc: Vec<EncoderBlock>,
    mid1: ConvLayer,
    mid_bn1: BatchNormState,
    mid2: ConvLayer,
    mid_bn2: BatchNormState,
}

#[derive(Debug)]
pub(crate) struct CncEncoderCache {
    enc: Vec<EncBlockCache>,
    mid_in: Tensor,
    mid_act1: UnaryCache,
    mid_bn1: BnCache,
    mid_n1: Tensor,
    mid_act2: UnaryCache,
    mid_bn2: BnCache,
}

impl CncEncoder {
    fn new(cfg: &ModelConfig, rng: &mut RngState) -> Result<Self> {
        let mut enc = Vec::with_capacity(cfg.depth);
        for i in 0..cfg.depth {
            let cin = if i == 0 { 1 } else { level_channels(cfg, i - 1) };
            let cout = level_channels(cfg, i);
            enc.push(EncoderBlock::new(
                &format!("enc{}", i),
                cfg.trunk_spec(cin, cout)?,
                cfg.trunk_spec(cout, cout)?,
                (1, 2, 2),
                cfg.bn_decay,
                cfg.bn_epsilon,
                rng,
            )?);
        }
        let bottom_in = level_channels(cfg, cfg.depth - 1);
        let bottom = level_channels(cfg, cfg.depth);
        Ok(Self {
            enc,
            mid1: ConvLayer::new("mid.conv1", cfg.trunk_spec(bottom_in, bottom)?, rng)?,
            mid_bn1: BatchNormState::new("mid.bn1", bottom, cfg.bn_decay, cfg.bn_epsilon)?,
            mid2: ConvLayer::new("mid.conv2", cfg.trunk_spec(bottom, bottom)?, rng)?,
            mid_bn2: BatchNormState::new("mid.bn2", bottom, cfg.bn_decay, cfg.bn_epsilon)?,
        })
    }

    fn forward(
        &mut self,
        x: &Tensor,
        mode: BnMode,
    ) -> Result<(Tensor, Vec<Tensor>, CncEncoderCache)> {
        let mut cur = x.clone();
        let mut skips = Vec::with_capacity(self.enc.len());
        let mut enc_caches = Vec::with_capacity(self.enc.len());
        for blk in &mut self.enc {
            let (pooled, skip, cache) = blk.forward(&cur, mode)?;
            skips.push(skip);
            enc_caches.push(cache);
            cur = pooled;
        }
        let mid_in = cur;
        let h1 = self.mid1.forward(&mid_in)?;
        let (a1, mid_act1) = unary(&h1, UnaryKind::LeakyRelu(LEAKY_SLOPE));
        let (mid_n1, mid_bn1) = batchnorm(&a1, &mut self.mid_bn1, mode)?;
        let h2 = self.mid2.forward(&mid_n1)?;
        let (a2, mid_act2) = unary(&h2, UnaryKind::LeakyRelu(LEAKY_SLOPE));
        let (bottom, mid_bn2) = batchnorm(&a2, &mut self.mid_bn2, mode)?;
        let cache = CncEncoderCache {
            enc: enc_caches,
            mid_in,
            mid_act1,
            mid_bn1,
            mid_n1,
            mid_act2,
            mid_bn2,
        };
        Ok((bottom, skips, cache))
    }

    /// `g_skips[i]` is the gradient into encoder level i's skip tensor.
    fn backward(
        &mut self,
        cache: CncEncoderCache,
        g_bottom: &Tensor,
        g_skips: Vec<Tensor>,
    ) -> Result<Tensor> {
        let (ga2, ggamma2, gbeta2) = batchnorm_grad(g_bottom, cache.mid_bn2)?;
        self.mid_bn2.gamma.accumulate(&ggamma2)?;
        self.mid_bn2.beta.accumulate(&gbeta2)?;
        let gh2 = unary_grad(&ga2, cache.mid_act2)?;
        let gn1 = self.mid2.backward(&cache.mid_n1, &gh2)?;
        let (ga1, ggamma1, gbeta1) = batchnorm_grad(&gn1, cache.mid_bn1)?;
        self.mid_bn1.gamma.accumulate(&ggamma1)?;
        self.mid_bn1.beta.accumulate(&gbeta1)?;
        let gh1 = unary_grad(&ga1, cache.mid_act1)?;
        let mut g_pooled = self.mid1.backward(&cache.mid_in, &gh1)?;
        for ((blk, blk_cache), g_skip) in self
            .enc
            .iter_mut()
            .zip(cache.enc)
            .rev()
            .zip(g_skips.into_iter().rev())
        {
            g_pooled = blk.backward(blk_cache, &g_pooled, Some(&g_skip))?;
        }
        Ok(g_pooled)
    }

    fn params(&self) -> Vec<&ParamTensor> {
        let mut out = Vec::new();
        for blk in &self.enc {
            out.extend(blk.params());
        }
        out.push(&self.mid1.w);
        out.push(&self.mid1.b);
        out.push(&self.mid_bn1.gamma);
        out.push(&self.mid_bn1.beta);
        out.push(&self.mid2.w);
        out.push(&self.mid2.b);
        out.push(&self.mid_bn2.gamma);
        out.push(&self.mid_bn2.beta);
        out
    }

    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut out = Vec::new();
        for blk in &mut self.enc {
            out.extend(blk.params_mut());
        }
        out.push(&mut self.mid1.w);
        out.push(&mut self.mid1.b);
        out.push(&mut self.mid_bn1.gamma);
        out.push(&mut self.mid_bn1.beta);
        out.push(&mut self.mid2.w);
        out.push(&mut self.mid2.b);
        out.push(&mut self.mid_bn2.gamma);
        out.push(&mut self.mid_bn2.beta);
        out
    }

    fn bn_states(&self) -> Vec<(String, &BatchNormState)> {
        let mut out = Vec::new();
        for blk in &self.enc {
            out.extend(blk.bn_states());
        }
        out.push(("mid.bn1".to_string(), &self.mid_bn1));
        out.push(("mid.bn2".to_string(), &self.mid_bn2));
        out
    }

    fn bn_states_mut(&mut self) -> Vec<(String, &mut BatchNormState)> {
        let mut out = Vec::new();
        for blk in &mut self.enc {
            out.extend(blk.bn_states_mut());
        }
        out.push(("mid.bn1".to_string(), &mut self.mid_bn1));
        out.push(("mid.bn2".to_string(), &mut self.mid_bn2));
        out
    }
}

// ---------------------------------------------------------------------------
// Decoder stack (decoder blocks + output head), one per branch.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub(crate) struct CncDecoderStack {
    dec: Vec<DecoderBlock>,
    head: ConvLayer,
}

#[derive(Debug)]
pub(crate) struct StackCache {
    dec: Vec<DecBlockCache>,
    head_in: Tensor,
}

impl CncDecoderStack {
    fn new(prefix: &str, cfg: &ModelConfig, rng: &mut RngState) -> Result<Self> {
        let mut dec = Vec::with_capacity(cfg.depth);
        for j in 0..cfg.depth {
            let level = cfg.depth - 1 - j;
            let ch = level_channels(cfg, level);
            let ch_up = level_channels(cfg, level + 1);
            dec.push(DecoderBlock::new(
                &format!("{}dec{}", prefix, j),
                // Transposed conv: input carries ch_up, output ch.
                ConvSpec::new((1, 2, 2), (1, 2, 2), (0, 0, 0), ch, ch_up)?,
                cfg.trunk_spec(2 * ch, ch)?,
                cfg.trunk_spec(ch, ch)?,
                cfg.bn_decay,
                cfg.bn_epsilon,
                rng,
            )?);
        }
        Ok(Self {
            dec,
            head: ConvLayer::new(
                &format!("{}head", prefix),
                cfg.head_spec(level_channels(cfg, 0))?,
                rng,
            )?,
        })
    }

    fn forward(
        &mut self,
        bottom: &Tensor,
        skips: &[Tensor],
        mode: BnMode,
    ) -> Result<(Tensor, StackCache)> {
        let mut cur = bottom.clone();
        let mut dec_caches = Vec::with_capacity(self.dec.len());
        for (j, blk) in self.dec.iter_mut().enumerate() {
            let level = skips.len() - 1 - j;
            let (next, cache) = blk.forward(&cur, &skips[level], mode)?;
            dec_caches.push(cache);
            cur = next;
        }
        let y = self.head.forward(&cur)?;
        Ok((
            y,
            StackCache {
                dec: dec_caches,
                head_in: cur,
            },
        ))
    }

    /// Returns `(g_bottom, g_skips)` with `g_skips` indexed by encoder level.
    fn backward(&mut self, cache: StackCache, gy: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        let mut gcur = self.head.backward(&cache.head_in, gy)?;
        let depth = self.dec.len();
        let mut g_skips: Vec<Option<Tensor>> = (0..depth).map(|_| None).collect();
        for (j, (blk, blk_cache)) in self
            .dec
            .iter_mut()
            .zip(cache.dec)
            .enumerate()
            .rev()
        {
            let level = depth - 1 - j;
            let (gx, gskip) = blk.backward(blk_cache, &gcur)?;
            g_skips[level] = Some(gskip);
            gcur = gx;
        }
        Ok((
            gcur,
            g_skips.into_iter().map(|g| g.expect("all levels visited")).collect(),
        ))
    }

    fn params(&self) -> Vec<&ParamTensor> {
        let mut out = Vec::new();
        for blk in &self.dec {
            out.extend(blk.params());
        }
        out.push(&self.head.w);
        out.push(&self.head.b);
        out
    }

    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut out = Vec::new();
        for blk in &mut self.dec {
            out.extend(blk.params_mut());
        }
        out.push(&mut self.head.w);
        out.push(&mut self.head.b);
        out
    }

    fn bn_states(&self) -> Vec<(String, &BatchNormState)> {
        self.dec.iter().flat_map(|b| b.bn_states()).collect()
    }

    fn bn_states_mut(&mut self) -> Vec<(String, &mut BatchNormState)> {
        self.dec.iter_mut().flat_map(|b| b.bn_states_mut()).collect()
    }
}

/// Gradient of the "add the last input frame to every output step" path:
/// the last input frame receives the sum of the per-step upstream gradients.
fn residual_input_grad(gx: &mut Tensor, gy: &Tensor, n_in: usize) -> Result<()> {
    let [_, n_out, h, w, _] = gy.dims5()?;
    let frame = h * w;
    let base = (n_in - 1) * frame;
    for t in 0..n_out {
        for p in 0..frame {
            gx.data_mut()[base + p] += gy.data()[t * frame + p];
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// CNC / CNC-R
// ---------------------------------------------------------------------------

/// Single-branch convolutional model; with `residual` set, the last input
/// frame is added to every output step so the trunk learns per-step
/// residuals (CNC-R).
#[derive(Debug, Clone)]
pub struct CncModel {
    pub(crate) cfg: ModelConfig,
    pub residual: bool,
    enc: CncEncoder,
    stack: CncDecoderStack,
}

#[derive(Debug)]
pub struct CncCache {
    enc: CncEncoderCache,
    stack: StackCache,
}

impl CncModel {
    pub(crate) fn new(cfg: &ModelConfig, residual: bool, rng: &mut RngState) -> Result<Self> {
        Ok(Self {
            cfg: cfg.clone(),
            residual,
            enc: CncEncoder::new(cfg, rng)?,
            stack: CncDecoderStack::new("", cfg, rng)?,
        })
    }

    pub fn forward(&mut self, x: &Tensor, mode: BnMode) -> Result<(Tensor, CncCache)> {
        self.cfg.check_input(x, true)?;
        let (bottom, skips, enc_cache) = self.enc.forward(x, mode)?;
        let (core, stack_cache) = self.stack.forward(&bottom, &skips, mode)?;
        let y = if self.residual {
            let mut y = core;
            y.add_scaled(&repeat_last_frame(x, self.cfg.n_out)?, 1.0)?;
            y
        } else {
            core
        };
        Ok((
            y,
            CncCache {
                enc: enc_cache,
                stack: stack_cache,
            },
        ))
    }

    pub fn backward(&mut self, cache: CncCache, gy: &Tensor) -> Result<Tensor> {
        let (g_bottom, g_skips) = self.stack.backward(cache.stack, gy)?;
        let mut gx = self.enc.backward(cache.enc, &g_bottom, g_skips)?;
        if self.residual {
            residual_input_grad(&mut gx, gy, self.cfg.n_in)?;
        }
        Ok(gx)
    }

    pub fn params(&self) -> Vec<&ParamTensor> {
        let mut out = self.enc.params();
        out.extend(self.stack.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut out = self.enc.params_mut();
        out.extend(self.stack.params_mut());
        out
    }

    pub(crate) fn bn_states(&self) -> Vec<(String, &BatchNormState)> {
        let mut out = self.enc.bn_states();
        out.extend(self.stack.bn_states());
        out
    }

    pub(crate) fn bn_states_mut(&mut self) -> Vec<(String, &mut BatchNormState)> {
        let mut out = self.enc.bn_states_mut();
        out.extend(self.stack.bn_states_mut());
        out
    }
}

// ---------------------------------------------------------------------------
// CNC-D
// ---------------------------------------------------------------------------

/// Dual-head model: one shared encoder, a direct decoder branch, a residual
/// decoder branch (adding the last input frame), and an averaging output.
#[derive(Debug, Clone)]
pub struct CncDModel {
    pub(crate) cfg: ModelConfig,
    enc: CncEncoder,
    branch_a: CncDecoderStack,
    branch_b: CncDecoderStack,
}

#[derive(Debug)]
pub struct CncDCache {
    enc: CncEncoderCache,
    a: StackCache,
    b: StackCache,
}

impl CncDModel {
    pub(crate) fn new(cfg: &ModelConfig, rng: &mut RngState) -> Result<Self> {
        Ok(Self {
            cfg: cfg.clone(),
            enc: CncEncoder::new(cfg, rng)?,
            branch_a: CncDecoderStack::new("a.", cfg, rng)?,
            branch_b: CncDecoderStack::new("b.", cfg, rng)?,
        })
    }

    pub fn forward(&mut self, x: &Tensor, mode: BnMode) -> Result<(Tensor, CncDCache)> {
        let (y, _, _, cache) = self.forward_with_branches(x, mode)?;
        Ok((y, cache))
    }

    /// Also exposes the two resolved branch outputs, whose arithmetic mean is
    /// the model output by construction.
    pub fn forward_with_branches(
        &mut self,
        x: &Tensor,
        mode: BnMode,
    ) -> Result<(Tensor, Tensor, Tensor, CncDCache)> {
        self.cfg.check_input(x, true)?;
        let (bottom, skips, enc_cache) = self.enc.forward(x, mode)?;
        let (ya, a_cache) = self.branch_a.forward(&bottom, &skips, mode)?;
        let (yb_core, b_cache) = self.branch_b.forward(&bottom, &skips, mode)?;
        let mut yb = yb_core;
        yb.add_scaled(&repeat_last_frame(x, self.cfg.n_out)?, 1.0)?;
        let y = ya.zip_map(&yb, |a, b| 0.5 * (a + b))?;
        Ok((
            y,
            ya,
            yb,
            CncDCache {
                enc: enc_cache,
                a: a_cache,
                b: b_cache,
            },
        ))
    }

    pub fn backward(&mut self, cache: CncDCache, gy: &Tensor) -> Result<Tensor> {
        let mut g_branch = gy.clone();
        g_branch.scale(0.5);
        let (gb_a, gsk_a) = self.branch_a.backward(cache.a, &g_branch)?;
        let (gb_b, gsk_b) = self.branch_b.backward(cache.b, &g_branch)?;
        let mut g_bottom = gb_a;
        g_bottom.add_scaled(&gb_b, 1.0)?;
        let g_skips: Vec<Tensor> = gsk_a
            .into_iter()
            .zip(gsk_b)
            .map(|(mut a, b)| {
                a.add_scaled(&b, 1.0)?;
                Ok(a)
            })
            .collect::<Result<_>>()?;
        let mut gx = self.enc.backward(cache.enc, &g_bottom, g_skips)?;
        residual_input_grad(&mut gx, &g_branch, self.cfg.n_in)?;
        Ok(gx)
    }

    pub fn params(&self) -> Vec<&ParamTensor> {
        let mut out = self.enc.params();
        out.extend(self.branch_a.params());
        out.extend(self.branch_b.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut out = self.enc.params_mut();
        out.extend(self.branch_a.params_mut());
        out.extend(self.branch_b.params_mut());
        out
    }

    pub(crate) fn bn_states(&self) -> Vec<(String, &BatchNormState)> {
        // Branch block names already carry their "a."/"b." prefixes.
        let mut out = self.enc.bn_states();
        out.extend(self.branch_a.bn_states());
        out.extend(self.branch_b.bn_states());
        out
    }

    pub(crate) fn bn_states_mut(&mut self) -> Vec<(String, &mut BatchNormState)> {
        let mut out = self.enc.bn_states_mut();
        out.extend(self.branch_a.bn_states_mut());
        out.extend(self.branch_b.bn_states_mut());
        out
    }
}
