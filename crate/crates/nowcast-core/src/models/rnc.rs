//! The recurrent architectures: RNC (stacked ConvLSTM unrolled over the
//! input, then run in generation mode on its own emissions) and RNC-R (same
//! trunk, last input frame added to every output step).
//!
//! Unrolling uses `n_in + n_out` cell steps. Steps `0..n_in` consume the
//! observed frames. After step `n_in - 1` the head emits a bootstrap frame
//! from the hidden state; each generation step consumes the previous
//! emission, updates the stack, and emits the next predicted frame. The
//! outputs are the emissions of the `n_out` generation steps.

use super::convlstm::{convlstm_step, convlstm_step_backward, ConvLstmCell, ConvLstmState, StepCache};
use super::{repeat_last_frame, ConvLayer, ModelConfig};
use crate::error::Result;
use crate::nn::{ParamTensor, RngState};
use crate::tensor::{ConvSpec, Tensor};

#[derive(Debug, Clone)]
pub struct RncModel {
    pub(crate) cfg: ModelConfig,
    pub residual: bool,
    pub(crate) height: usize,
    pub(crate) width: usize,
    cells: Vec<ConvLstmCell>,
    head: ConvLayer,
}

/// Per-step, per-layer caches plus the head inputs for every emission.
#[derive(Debug)]
pub struct RncCache {
    /// `steps[t][l]` is layer `l`'s cache at step `t`.
    steps: Vec<Vec<StepCache>>,
    /// Hidden state of the top layer at each emitting step, head input.
    emit_inputs: Vec<Tensor>,
}

impl RncModel {
    pub(crate) fn new(
        cfg: &ModelConfig,
        residual: bool,
        height: usize,
        width: usize,
        rng: &mut RngState,
    ) -> Result<Self> {
        let mut cells = Vec::with_capacity(cfg.rnc_layers);
        for l in 0..cfg.rnc_layers {
            let cin = if l == 0 { 1 } else { cfg.hidden_channels };
            cells.push(ConvLstmCell::new(
                &format!("cell{}", l),
                cin,
                cfg.hidden_channels,
                cfg.spatial_kernel,
                height,
                width,
                cfg.eq5_literal,
                rng,
            )?);
        }
        let head_spec = ConvSpec::new((1, 1, 1), (1, 1, 1), (0, 0, 0), cfg.hidden_channels, 1)?;
        Ok(Self {
            cfg: cfg.clone(),
            residual,
            height,
            width,
            cells,
            head: ConvLayer::new("head", head_spec, rng)?,
        })
    }

    fn total_steps(&self) -> usize {
        self.cfg.n_in + self.cfg.n_out
    }

    /// First step index whose post-update hidden state feeds the head
    /// (the bootstrap emission before the generation steps).
    fn first_emit_step(&self) -> usize {
        self.cfg.n_in - 1
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<(Tensor, RncCache)> {
        self.cfg.check_input(x, false)?;
        let [_, _, h, w, _] = x.dims5()?;
        let layers = self.cells.len();
        let mut states: Vec<ConvLstmState> = (0..layers)
            .map(|_| ConvLstmState::zeros(h, w, self.cfg.hidden_channels))
            .collect();
        let mut steps = Vec::with_capacity(self.total_steps());
        let mut emit_inputs = Vec::with_capacity(self.cfg.n_out + 1);
        let mut outputs = Vec::with_capacity(self.cfg.n_out);
        let mut next_input: Option<Tensor> = None;
        for t in 0..self.total_steps() {
            let input = if t < self.cfg.n_in {
                x.time_slice(t)?
            } else {
                next_input.take().expect("generation step has a pending emission")
            };
            let mut layer_caches = Vec::with_capacity(layers);
            let mut cur = input;
            for (l, cell) in self.cells.iter().enumerate() {
                let (state, cache) = convlstm_step(&cur, &states[l], cell)?;
                cur = state.a.clone();
                states[l] = state;
                layer_caches.push(cache);
            }
            steps.push(layer_caches);
            if t >= self.first_emit_step() {
                let top = states[layers - 1].a.clone();
                let emission = self.head.forward(&top)?;
                emit_inputs.push(top);
                if t >= self.cfg.n_in {
                    outputs.push(emission.clone());
                }
                // The final step's emission is an output only; earlier ones
                // feed the next step.
                if t + 1 < self.total_steps() {
                    next_input = Some(emission);
                }
            }
        }
        let mut y = Tensor::stack_time(&outputs)?;
        if self.residual {
            y.add_scaled(&repeat_last_frame(x, self.cfg.n_out)?, 1.0)?;
        }
        Ok((y, RncCache { steps, emit_inputs }))
    }

    pub fn backward(&mut self, cache: RncCache, gy: &Tensor) -> Result<Tensor> {
        let layers = self.cells.len();
        let n_in = self.cfg.n_in;
        let state_shape = cache.emit_inputs[0].shape().to_vec();
        let mut ga: Vec<Tensor> = (0..layers).map(|_| Tensor::zeros(state_shape.clone())).collect();
        let mut gc: Vec<Tensor> = (0..layers).map(|_| Tensor::zeros(state_shape.clone())).collect();
        let mut gx_frames: Vec<Tensor> = Vec::with_capacity(n_in);
        // Gradient waiting on the emission produced at the previous step
        // (that emission was this step's input).
        let mut g_pending_emission: Option<Tensor> = None;
        let mut step_caches = cache.steps;
        let emit_first = self.first_emit_step();
        for t in (0..self.total_steps()).rev() {
            // Gradient on this step's emission: its role as output plus its
            // role as the next step's input.
            if t >= emit_first {
                let mut g_emit: Option<Tensor> = None;
                if t >= n_in {
                    let g_out = gy.time_slice(t - n_in)?;
                    g_emit = Some(g_out);
                }
                if let Some(g_fed) = g_pending_emission.take() {
                    match &mut g_emit {
                        Some(g) => g.add_scaled(&g_fed, 1.0)?,
                        None => g_emit = Some(g_fed),
                    }
                }
                if let Some(g_emit) = g_emit {
                    let head_in = &cache.emit_inputs[t - emit_first];
                    let g_top = self.head.backward(head_in, &g_emit)?;
                    ga[layers - 1].add_scaled(&g_top, 1.0)?;
                }
            }
            // Backward through the stack, top layer first.
            let layer_caches = step_caches.pop().expect("one cache per step");
            let mut g_from_above: Option<Tensor> = None;
            for (l, (cell, step_cache)) in self
                .cells
                .iter_mut()
                .zip(layer_caches)
                .enumerate()
                .rev()
            {
                let mut ga_in = std::mem::replace(&mut ga[l], Tensor::zeros(state_shape.clone()));
                if let Some(g) = g_from_above.take() {
                    ga_in.add_scaled(&g, 1.0)?;
                }
                let gc_in = std::mem::replace(&mut gc[l], Tensor::zeros(state_shape.clone()));
                let (gx, ga_prev, gc_prev) = convlstm_step_backward(cell, step_cache, &ga_in, &gc_in)?;
                ga[l] = ga_prev;
                gc[l] = gc_prev;
                g_from_above = Some(gx);
            }
            let g_input = g_from_above.expect("stack has at least one layer");
            if t >= n_in {
                // This step consumed the previous step's emission.
                g_pending_emission = Some(g_input);
            } else {
                gx_frames.push(g_input);
            }
        }
        gx_frames.reverse();
        let mut gx = Tensor::stack_time(&gx_frames)?;
        if self.residual {
            // Pass-through of the +last-frame path.
            let [_, n_out, h, w, _] = gy.dims5()?;
            let frame = h * w;
            let base = (n_in - 1) * frame;
            for t in 0..n_out {
                for p in 0..frame {
                    gx.data_mut()[base + p] += gy.data()[t * frame + p];
                }
            }
        }
        Ok(gx)
    }

    pub fn params(&self) -> Vec<&ParamTensor> {
        let mut out: Vec<&ParamTensor> = self.cells.iter().flat_map(|c| c.params()).collect();
        out.push(&self.head.w);
        out.push(&self.head.b);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut out: Vec<&mut ParamTensor> =
            self.cells.iter_mut().flat_map(|c| c.params_mut()).collect();
        out.push(&mut self.head.w);
        out.push(&mut self.head.b);
        out
    }
}
