//! Convolutional LSTM cell.
//!
//! Gate transformations are spatial convolutions; peephole terms are
//! per-location Hadamard products against the cell state:
//!
//! ```text
//! i = sigmoid(Wxi*x + Wai*a' + Wci o c' + bi)
//! f = sigmoid(Wxf*x + Waf*a' + Wcf o c' + bf)
//! c = f o c' + i o tanh(Wxc*x + Wac*a' + bc)
//! o = sigmoid(Wxo*x + Wao*a' + Wco o c + bo)
//! a = o o tanh(c)
//! ```
//!
//! With `eq5_literal` set, the cell-state update gates the previous state
//! with the output gate instead of the forget gate (`c = o o c' + i o g`);
//! the output-gate peephole then reads the previous cell state, which breaks
//! the circular dependency that the literal update would otherwise create,
//! and the forget gate drops off the active path entirely.

use crate::error::{Error, Result};
use crate::nn::{xavier_init, ParamTensor, RngState};
use crate::tensor::{
    conv_adjoint, conv_bias_grad, conv_forward, conv_weight_grad, ConvSpec, Tensor,
};

/// Hidden/cell state pair; both `[1, 1, H, W, hidden]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLstmState {
    pub a: Tensor,
    pub c: Tensor,
}

impl ConvLstmState {
    pub fn zeros(height: usize, width: usize, hidden: usize) -> Self {
        Self {
            a: Tensor::zeros(vec![1, 1, height, width, hidden]),
            c: Tensor::zeros(vec![1, 1, height, width, hidden]),
        }
    }
}

/// The cell's full weight set: four input-to-gate kernels, four
/// hidden-to-gate kernels, three per-location peephole weights, and four
/// per-channel biases (15 parameter groups).
#[derive(Debug, Clone)]
pub struct ConvLstmCell {
    pub w_xi: ParamTensor,
    pub w_xf: ParamTensor,
    pub w_xc: ParamTensor,
    pub w_xo: ParamTensor,
    pub w_ai: ParamTensor,
    pub w_af: ParamTensor,
    pub w_ac: ParamTensor,
    pub w_ao: ParamTensor,
    pub w_ci: ParamTensor,
    pub w_cf: ParamTensor,
    pub w_co: ParamTensor,
    pub b_i: ParamTensor,
    pub b_f: ParamTensor,
    pub b_c: ParamTensor,
    pub b_o: ParamTensor,
    pub(crate) x_spec: ConvSpec,
    pub(crate) a_spec: ConvSpec,
    pub eq5_literal: bool,
}

impl ConvLstmCell {
    pub fn new(
        name: &str,
        in_channels: usize,
        hidden: usize,
        spatial_kernel: usize,
        height: usize,
        width: usize,
        eq5_literal: bool,
        rng: &mut RngState,
    ) -> Result<Self> {
        let k = spatial_kernel;
        let x_spec = ConvSpec::same_spatial(k, in_channels, hidden)?;
        let a_spec = ConvSpec::same_spatial(k, hidden, hidden)?;
        let x_shape = [1, k, k, in_channels, hidden];
        let a_shape = [1, k, k, hidden, hidden];
        let cell_shape = vec![1, 1, height, width, hidden];
        let conv = |n: &str, shape: &[usize], rng: &mut RngState| -> Result<ParamTensor> {
            Ok(ParamTensor::new(format!("{}.{}", name, n), xavier_init(shape, rng)?))
        };
        let zero = |n: &str, shape: Vec<usize>| ParamTensor::new(format!("{}.{}", name, n), Tensor::zeros(shape));
        Ok(Self {
            w_xi: conv("w_xi", &x_shape, rng)?,
            w_xf: conv("w_xf", &x_shape, rng)?,
            w_xc: conv("w_xc", &x_shape, rng)?,
            w_xo: conv("w_xo", &x_shape, rng)?,
            w_ai: conv("w_ai", &a_shape, rng)?,
            w_af: conv("w_af", &a_shape, rng)?,
            w_ac: conv("w_ac", &a_shape, rng)?,
            w_ao: conv("w_ao", &a_shape, rng)?,
            w_ci: zero("w_ci", cell_shape.clone()),
            w_cf: zero("w_cf", cell_shape.clone()),
            w_co: zero("w_co", cell_shape),
            b_i: zero("b_i", vec![hidden]),
            b_f: zero("b_f", vec![hidden]),
            b_c: zero("b_c", vec![hidden]),
            b_o: zero("b_o", vec![hidden]),
            x_spec,
            a_spec,
            eq5_literal,
        })
    }

    pub fn params(&self) -> Vec<&ParamTensor> {
        vec![
            &self.w_xi, &self.w_xf, &self.w_xc, &self.w_xo,
            &self.w_ai, &self.w_af, &self.w_ac, &self.w_ao,
            &self.w_ci, &self.w_cf, &self.w_co,
            &self.b_i, &self.b_f, &self.b_c, &self.b_o,
        ]
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        vec![
            &mut self.w_xi, &mut self.w_xf, &mut self.w_xc, &mut self.w_xo,
            &mut self.w_ai, &mut self.w_af, &mut self.w_ac, &mut self.w_ao,
            &mut self.w_ci, &mut self.w_cf, &mut self.w_co,
            &mut self.b_i, &mut self.b_f, &mut self.b_c, &mut self.b_o,
        ]
    }
}

/// Everything the backward pass replays: inputs and gate activations.
#[derive(Debug)]
pub struct StepCache {
    x: Tensor,
    a_prev: Tensor,
    c_prev: Tensor,
    i: Tensor,
    f: Tensor,
    g: Tensor,
    o: Tensor,
    c_new: Tensor,
    tanh_c: Tensor,
}

fn sigmoid(x: &Tensor) -> Tensor {
    x.map(crate::tensor::sigmoid_scalar)
}

fn tanh(x: &Tensor) -> Tensor {
    x.map(crate::tensor::tanh_scalar)
}

/// One recurrence step: consumes `x_t` and the previous state, returns the
/// new state and the cache for backpropagation.
pub fn convlstm_step(
    x_t: &Tensor,
    prev: &ConvLstmState,
    cell: &ConvLstmCell,
) -> Result<(ConvLstmState, StepCache)> {
    let gate_pre = |wx: &ParamTensor,
                    b: &ParamTensor,
                    wa: &ParamTensor,
                    peep: Option<(&ParamTensor, &Tensor)>|
     -> Result<Tensor> {
        let mut pre = conv_forward(x_t, &wx.value, Some(&b.value), &cell.x_spec)?;
        pre.add_scaled(&conv_forward(&prev.a, &wa.value, None, &cell.a_spec)?, 1.0)?;
        if let Some((wc, c)) = peep {
            pre.add_scaled(&wc.value.zip_map(c, |w, cv| w * cv)?, 1.0)?;
        }
        Ok(pre)
    };

    let i = sigmoid(&gate_pre(&cell.w_xi, &cell.b_i, &cell.w_ai, Some((&cell.w_ci, &prev.c)))?);
    let f = sigmoid(&gate_pre(&cell.w_xf, &cell.b_f, &cell.w_af, Some((&cell.w_cf, &prev.c)))?);
    let g = tanh(&gate_pre(&cell.w_xc, &cell.b_c, &cell.w_ac, None)?);

    let (c_new, o) = if cell.eq5_literal {
        let o = sigmoid(&gate_pre(&cell.w_xo, &cell.b_o, &cell.w_ao, Some((&cell.w_co, &prev.c)))?);
        let mut c = o.zip_map(&prev.c, |ov, cv| ov * cv)?;
        c.add_scaled(&i.zip_map(&g, |iv, gv| iv * gv)?, 1.0)?;
        (c, o)
    } else {
        let mut c = f.zip_map(&prev.c, |fv, cv| fv * cv)?;
        c.add_scaled(&i.zip_map(&g, |iv, gv| iv * gv)?, 1.0)?;
        let o = sigmoid(&gate_pre(&cell.w_xo, &cell.b_o, &cell.w_ao, Some((&cell.w_co, &c)))?);
        (c, o)
    };

    let tanh_c = tanh(&c_new);
    let a = o.zip_map(&tanh_c, |ov, tv| ov * tv)?;
    let state = ConvLstmState {
        a,
        c: c_new.clone(),
    };
    let cache = StepCache {
        x: x_t.clone(),
        a_prev: prev.a.clone(),
        c_prev: prev.c.clone(),
        i,
        f,
        g,
        o,
        c_new,
        tanh_c,
    };
    Ok((state, cache))
}

/// Backpropagates one step. `ga`/`gc` are the gradients flowing into the
/// step's hidden and cell outputs; parameter gradients accumulate into the
/// cell and the function returns `(gx, ga_prev, gc_prev)`.
pub fn convlstm_step_backward(
    cell: &mut ConvLstmCell,
    cache: StepCache,
    ga: &Tensor,
    gc: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    if ga.shape() != cache.tanh_c.shape() || gc.shape() != cache.tanh_c.shape() {
        return Err(Error::Dim(format!(
            "state gradient shapes {:?}/{:?} do not match state {:?}",
            ga.shape(),
            gc.shape(),
            cache.tanh_c.shape()
        )));
    }
    let [_, xt, xh, xw, _] = cache.x.dims5()?;
    let [_, at, ah, aw, _] = cache.a_prev.dims5()?;
    let mut gx = Tensor::zeros_like(&cache.x);
    let mut ga_prev = Tensor::zeros_like(&cache.a_prev);
    let mut gc_prev = Tensor::zeros_like(&cache.c_prev);

    // Shared helper: backprop one gate pre-activation through its convs.
    // (Closures cannot borrow `cell` mutably while we select fields, so this
    // is a macro over field names.)
    macro_rules! gate_convs_backward {
        ($gpre:expr, $wx:ident, $wa:ident, $b:ident) => {{
            let gpre = &$gpre;
            cell.$wx
                .accumulate(&conv_weight_grad(&cache.x, gpre, &cell.x_spec)?)?;
            cell.$wa
                .accumulate(&conv_weight_grad(&cache.a_prev, gpre, &cell.a_spec)?)?;
            cell.$b.accumulate(&conv_bias_grad(gpre)?)?;
            gx.add_scaled(&conv_adjoint(gpre, &cell.$wx.value, &cell.x_spec, (xt, xh, xw))?, 1.0)?;
            ga_prev.add_scaled(
                &conv_adjoint(gpre, &cell.$wa.value, &cell.a_spec, (at, ah, aw))?,
                1.0,
            )?;
        }};
    }

    // a = o o tanh(c)
    let go_from_a = ga.zip_map(&cache.tanh_c, |g, t| g * t)?;
    let mut gc_total = gc.clone();
    gc_total.add_scaled(
        &ga.zip_map(&cache.o, |g, ov| g * ov)?
            .zip_map(&cache.tanh_c, |g, t| g * (1.0 - t * t))?,
        1.0,
    )?;

    if cell.eq5_literal {
        // c = o o c' + i o g, with the o-gate peephole reading c'.
        let mut go = go_from_a;
        go.add_scaled(&gc_total.zip_map(&cache.c_prev, |g, c| g * c)?, 1.0)?;
        gc_prev.add_scaled(&gc_total.zip_map(&cache.o, |g, o| g * o)?, 1.0)?;
        let gpre_o = go.zip_map(&cache.o, |g, o| g * o * (1.0 - o))?;
        cell.w_co
            .accumulate(&gpre_o.zip_map(&cache.c_prev, |g, c| g * c)?)?;
        gc_prev.add_scaled(&gpre_o.zip_map(&cell.w_co.value, |g, w| g * w)?, 1.0)?;
        gate_convs_backward!(gpre_o, w_xo, w_ao, b_o);
        // The forget gate is off the active path: no gradient flows to it.
    } else {
        // o's peephole reads the new cell state, so its contribution joins
        // gc_total before c's own definition is differentiated.
        let gpre_o = go_from_a.zip_map(&cache.o, |g, o| g * o * (1.0 - o))?;
        cell.w_co
            .accumulate(&gpre_o.zip_map(&cache.c_new, |g, c| g * c)?)?;
        gc_total.add_scaled(&gpre_o.zip_map(&cell.w_co.value, |g, w| g * w)?, 1.0)?;
        gate_convs_backward!(gpre_o, w_xo, w_ao, b_o);

        // c = f o c' + i o g
        let gf = gc_total.zip_map(&cache.c_prev, |g, c| g * c)?;
        gc_prev.add_scaled(&gc_total.zip_map(&cache.f, |g, f| g * f)?, 1.0)?;
        let gpre_f = gf.zip_map(&cache.f, |g, f| g * f * (1.0 - f))?;
        cell.w_cf
            .accumulate(&gpre_f.zip_map(&cache.c_prev, |g, c| g * c)?)?;
        gc_prev.add_scaled(&gpre_f.zip_map(&cell.w_cf.value, |g, w| g * w)?, 1.0)?;
        gate_convs_backward!(gpre_f, w_xf, w_af, b_f);
    }

    // Input gate and candidate, shared by both modes.
    let gi = gc_total.zip_map(&cache.g, |g, gv| g * gv)?;
    let gg = gc_total.zip_map(&cache.i, |g, iv| g * iv)?;
    let gpre_i = gi.zip_map(&cache.i, |g, i| g * i * (1.0 - i))?;
    cell.w_ci
        .accumulate(&gpre_i.zip_map(&cache.c_prev, |g, c| g * c)?)?;
    gc_prev.add_scaled(&gpre_i.zip_map(&cell.w_ci.value, |g, w| g * w)?, 1.0)?;
    gate_convs_backward!(gpre_i, w_xi, w_ai, b_i);

    let gpre_g = gg.zip_map(&cache.g, |g, gv| g * (1.0 - gv * gv))?;
    gate_convs_backward!(gpre_g, w_xc, w_ac, b_c);

    Ok((gx, ga_prev, gc_prev))
}
