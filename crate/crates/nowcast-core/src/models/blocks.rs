//! Encoder and decoder blocks of the convolutional architectures.
//!
//! Encoder: `skip = BN(act(conv2(BN(act(conv1(x))))))`, `out = MaxPool(skip)`.
//! Decoder: deconv upsamples, the matching encoder skip is concatenated on
//! the channel axis, then two conv/act/BN stages follow.

use super::{ConvLayer, DeconvLayer, LEAKY_SLOPE};
use crate::error::{Error, Result};
use crate::nn::{batchnorm, batchnorm_grad, BatchNormState, BnCache, BnMode, ParamTensor, RngState};
use crate::tensor::{
    concat, concat_grad, maxpool, maxpool_grad, unary, unary_grad, ConcatCache, ConvSpec,
    MaxPoolCache, Tensor, UnaryCache, UnaryKind,
};

#[derive(Debug, Clone)]
pub struct EncoderBlock {
    name: String,
    conv1: ConvLayer,
    bn1: BatchNormState,
    conv2: ConvLayer,
    bn2: BatchNormState,
    pool: (usize, usize, usize),
}

#[derive(Debug)]
pub struct EncBlockCache {
    x: Tensor,
    act1: UnaryCache,
    bn1: BnCache,
    n1: Tensor,
    act2: UnaryCache,
    bn2: BnCache,
    pool: MaxPoolCache,
}

impl EncoderBlock {
    pub(crate) fn new(
        name: &str,
        conv1_spec: ConvSpec,
        conv2_spec: ConvSpec,
        pool: (usize, usize, usize),
        bn_decay: f64,
        bn_epsilon: f64,
        rng: &mut RngState,
    ) -> Result<Self> {
        let channels1 = conv1_spec.out_channels;
        let channels2 = conv2_spec.out_channels;
        Ok(Self {
            name: name.to_string(),
            conv1: ConvLayer::new(&format!("{}.conv1", name), conv1_spec, rng)?,
            bn1: BatchNormState::new(&format!("{}.bn1", name), channels1, bn_decay, bn_epsilon)?,
            conv2: ConvLayer::new(&format!("{}.conv2", name), conv2_spec, rng)?,
            bn2: BatchNormState::new(&format!("{}.bn2", name), channels2, bn_decay, bn_epsilon)?,
            pool,
        })
    }

    /// Returns `(pooled, skip, cache)`; `skip` is the pre-pool activation the
    /// matching decoder block concatenates.
    pub(crate) fn forward(
        &mut self,
        x: &Tensor,
        mode: BnMode,
    ) -> Result<(Tensor, Tensor, EncBlockCache)> {
        let h1 = self.conv1.forward(x)?;
        let (a1, act1) = unary(&h1, UnaryKind::LeakyRelu(LEAKY_SLOPE));
        let (n1, bn1) = batchnorm(&a1, &mut self.bn1, mode)?;
        let h2 = self.conv2.forward(&n1)?;
        let (a2, act2) = unary(&h2, UnaryKind::LeakyRelu(LEAKY_SLOPE));
        let (skip, bn2) = batchnorm(&a2, &mut self.bn2, mode)?;
        let (pooled, pool) = maxpool(&skip, self.pool)?;
        let cache = EncBlockCache {
            x: x.clone(),
            act1,
            bn1,
            n1,
            act2,
            bn2,
            pool,
        };
        Ok((pooled, skip, cache))
    }

    /// `g_pooled` arrives from the next deeper stage, `g_skip` from the
    /// decoder that consumed this block's skip tensor.
    pub(crate) fn backward(
        &mut self,
        cache: EncBlockCache,
        g_pooled: &Tensor,
        g_skip: Option<&Tensor>,
    ) -> Result<Tensor> {
        let mut g_skip_total = maxpool_grad(g_pooled, cache.pool)?;
        if let Some(gs) = g_skip {
            g_skip_total.add_scaled(gs, 1.0)?;
        }
        let (ga2, ggamma2, gbeta2) = batchnorm_grad(&g_skip_total, cache.bn2)?;
        self.bn2.gamma.accumulate(&ggamma2)?;
        self.bn2.beta.accumulate(&gbeta2)?;
        let gh2 = unary_grad(&ga2, cache.act2)?;
        let gn1 = self.conv2.backward(&cache.n1, &gh2)?;
        let (ga1, ggamma1, gbeta1) = batchnorm_grad(&gn1, cache.bn1)?;
        self.bn1.gamma.accumulate(&ggamma1)?;
        self.bn1.beta.accumulate(&gbeta1)?;
        let gh1 = unary_grad(&ga1, cache.act1)?;
        self.conv1.backward(&cache.x, &gh1)
    }

    pub(crate) fn params(&self) -> Vec<&ParamTensor> {
        vec![
            &self.conv1.w,
            &self.conv1.b,
            &self.bn1.gamma,
            &self.bn1.beta,
            &self.conv2.w,
            &self.conv2.b,
            &self.bn2.gamma,
            &self.bn2.beta,
        ]
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        vec![
            &mut self.conv1.w,
            &mut self.conv1.b,
            &mut self.bn1.gamma,
            &mut self.bn1.beta,
            &mut self.conv2.w,
            &mut self.conv2.b,
            &mut self.bn2.gamma,
            &mut self.bn2.beta,
        ]
    }

    pub(crate) fn bn_states(&self) -> Vec<(String, &BatchNormState)> {
        vec![
            (format!("{}.bn1", self.name), &self.bn1),
            (format!("{}.bn2", self.name), &self.bn2),
        ]
    }

    pub(crate) fn bn_states_mut(&mut self) -> Vec<(String, &mut BatchNormState)> {
        vec![
            (format!("{}.bn1", self.name), &mut self.bn1),
            (format!("{}.bn2", self.name), &mut self.bn2),
        ]
    }
}

#[derive(Debug, Clone)]
pub struct DecoderBlock {
    name: String,
    deconv: DeconvLayer,
    conv1: ConvLayer,
    bn1: BatchNormState,
    conv2: ConvLayer,
    bn2: BatchNormState,
}

#[derive(Debug)]
pub struct DecBlockCache {
    x: Tensor,
    cat_parts: ConcatCache,
    cat: Tensor,
    act1: UnaryCache,
    bn1: BnCache,
    n1: Tensor,
    act2: UnaryCache,
    bn2: BnCache,
}

impl DecoderBlock {
    pub(crate) fn new(
        name: &str,
        deconv_spec: ConvSpec,
        conv1_spec: ConvSpec,
        conv2_spec: ConvSpec,
        bn_decay: f64,
        bn_epsilon: f64,
        rng: &mut RngState,
    ) -> Result<Self> {
        let channels1 = conv1_spec.out_channels;
        let channels2 = conv2_spec.out_channels;
        Ok(Self {
            name: name.to_string(),
            deconv: DeconvLayer::new(&format!("{}.deconv", name), deconv_spec, rng)?,
            conv1: ConvLayer::new(&format!("{}.conv1", name), conv1_spec, rng)?,
            bn1: BatchNormState::new(&format!("{}.bn1", name), channels1, bn_decay, bn_epsilon)?,
            conv2: ConvLayer::new(&format!("{}.conv2", name), conv2_spec, rng)?,
            bn2: BatchNormState::new(&format!("{}.bn2", name), channels2, bn_decay, bn_epsilon)?,
        })
    }

    pub(crate) fn forward(
        &mut self,
        x: &Tensor,
        skip: &Tensor,
        mode: BnMode,
    ) -> Result<(Tensor, DecBlockCache)> {
        let up = self.deconv.forward(x)?;
        if up.shape()[..4] != skip.shape()[..4] {
            return Err(Error::Dim(format!(
                "block {}: upsampled shape {:?} does not align with skip {:?}",
                self.name,
                up.shape(),
                skip.shape()
            )));
        }
        let (cat, cat_parts) = concat(&up, skip)?;
        let h1 = self.conv1.forward(&cat)?;
        let (a1, act1) = unary(&h1, UnaryKind::LeakyRelu(LEAKY_SLOPE));
        let (n1, bn1) = batchnorm(&a1, &mut self.bn1, mode)?;
        let h2 = self.conv2.forward(&n1)?;
        let (a2, act2) = unary(&h2, UnaryKind::LeakyRelu(LEAKY_SLOPE));
        let (out, bn2) = batchnorm(&a2, &mut self.bn2, mode)?;
        let cache = DecBlockCache {
            x: x.clone(),
            cat_parts,
            cat,
            act1,
            bn1,
            n1,
            act2,
            bn2,
        };
        Ok((out, cache))
    }

    /// Returns `(g_input, g_skip)`.
    pub(crate) fn backward(
        &mut self,
        cache: DecBlockCache,
        gy: &Tensor,
    ) -> Result<(Tensor, Tensor)> {
        let (ga2, ggamma2, gbeta2) = batchnorm_grad(gy, cache.bn2)?;
        self.bn2.gamma.accumulate(&ggamma2)?;
        self.bn2.beta.accumulate(&gbeta2)?;
        let gh2 = unary_grad(&ga2, cache.act2)?;
        let gn1 = self.conv2.backward(&cache.n1, &gh2)?;
        let (ga1, ggamma1, gbeta1) = batchnorm_grad(&gn1, cache.bn1)?;
        self.bn1.gamma.accumulate(&ggamma1)?;
        self.bn1.beta.accumulate(&gbeta1)?;
        let gh1 = unary_grad(&ga1, cache.act1)?;
        let gcat = self.conv1.backward(&cache.cat, &gh1)?;
        let (gup, gskip) = concat_grad(&gcat, cache.cat_parts)?;
        let gx = self.deconv.backward(&cache.x, &gup)?;
        Ok((gx, gskip))
    }

    pub(crate) fn params(&self) -> Vec<&ParamTensor> {
        vec![
            &self.deconv.w,
            &self.conv1.w,
            &self.conv1.b,
            &self.bn1.gamma,
            &self.bn1.beta,
            &self.conv2.w,
            &self.conv2.b,
            &self.bn2.gamma,
            &self.bn2.beta,
        ]
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        vec![
            &mut self.deconv.w,
            &mut self.conv1.w,
            &mut self.conv1.b,
            &mut self.bn1.gamma,
            &mut self.bn1.beta,
            &mut self.conv2.w,
            &mut self.conv2.b,
            &mut self.bn2.gamma,
            &mut self.bn2.beta,
        ]
    }

    pub(crate) fn bn_states(&self) -> Vec<(String, &BatchNormState)> {
        vec![
            (format!("{}.bn1", self.name), &self.bn1),
            (format!("{}.bn2", self.name), &self.bn2),
        ]
    }

    pub(crate) fn bn_states_mut(&mut self) -> Vec<(String, &mut BatchNormState)> {
        vec![
            (format!("{}.bn1", self.name), &mut self.bn1),
            (format!("{}.bn2", self.name), &mut self.bn2),
        ]
    }
}
