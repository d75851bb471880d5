//! Parametric leaky integrate-and-fire (PLIF) dynamics.
//!
//! Discrete update with unit time step, per neuron:
//!
//! ```text
//! U[t] = H[t-1] + k * (-(H[t-1] - V_reset) + X[t])      k = 1/tau = sigmoid(w)
//! S[t] = 1 if U[t] >= u_th else 0
//! H[t] = V_reset * S[t] + beta * U[t] * (1 - S[t])      beta = exp(-k)
//! ```
//!
//! The spike nonlinearity is differentiated with a rectangular surrogate of
//! height `1/a` on `|U - u_th| < a/2`. The relaxed spike function
//! `clamp((U - u_th)/a + 1/2, 0, 1)` has exactly that derivative and is used
//! to check gradients against finite differences.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::DenseTensor;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Neuron constants for one PLIF layer. Only `w` is learned.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlifParams {
    pub w: f64,
    pub u_th: f64,
    pub v_reset: f64,
    pub a: f64,
}

impl Default for PlifParams {
    fn default() -> Self {
        Self { w: 0.0, u_th: 1.0, v_reset: 0.0, a: 4.0 }
    }
}

impl PlifParams {
    pub fn new(w: f64, u_th: f64, v_reset: f64, a: f64) -> Result<Self> {
        let p = Self { w, u_th, v_reset, a };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if ![self.w, self.u_th, self.v_reset, self.a].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("PLIF constants must be finite".into()));
        }
        if self.a <= 0.0 {
            return Err(Error::InvalidArgument(format!("surrogate width a={} must be > 0", self.a)));
        }
        if self.u_th <= self.v_reset {
            return Err(Error::InvalidArgument(format!("threshold {} must exceed reset potential {}", self.u_th, self.v_reset)));
        }
        Ok(())
    }

    /// `1/tau`, always in (0, 1).
    pub fn inv_tau(&self) -> f64 {
        sigmoid(self.w)
    }

    pub fn tau(&self) -> f64 {
        1.0 / self.inv_tau()
    }

    pub fn beta(&self) -> f64 {
        (-self.inv_tau()).exp()
    }

    pub fn surrogate(&self, u: f64) -> f64 {
        if (u - self.u_th).abs() < self.a / 2.0 {
            1.0 / self.a
        } else {
            0.0
        }
    }

    pub fn relaxed_spike(&self, u: f64) -> f64 {
        ((u - self.u_th) / self.a + 0.5).clamp(0.0, 1.0)
    }

    #[inline]
    fn fires(&self, u: f64) -> bool {
        u >= self.u_th
    }
}

/// Membrane variables after one step.
#[derive(Clone, Debug, PartialEq)]
pub struct PlifState {
    pub u: Vec<f64>,
    pub h: Vec<f64>,
    pub s: Vec<u8>,
}

/// As [`PlifState`] but with the relaxed, real-valued spike.
#[derive(Clone, Debug, PartialEq)]
pub struct RelaxedState {
    pub u: Vec<f64>,
    pub h: Vec<f64>,
    pub s: Vec<f64>,
}

fn check_same_len(op: &'static str, a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shape(op, format!("h_prev has {} neurons, x has {}", a.len(), b.len())));
    }
    Ok(())
}

pub fn plif_step(params: &PlifParams, h_prev: &[f64], x: &[f64]) -> Result<PlifState> {
    check_same_len("plif_step", h_prev, x)?;
    let k = params.inv_tau();
    let beta = params.beta();
    let n = x.len();
    let mut state = PlifState { u: Vec::with_capacity(n), h: Vec::with_capacity(n), s: Vec::with_capacity(n) };
    for (&hp, &xi) in h_prev.iter().zip(x) {
        let u = hp + k * (-(hp - params.v_reset) + xi);
        let s = params.fires(u);
        let h = if s { params.v_reset } else { beta * u };
        state.u.push(u);
        state.s.push(s as u8);
        state.h.push(h);
    }
    Ok(state)
}

pub fn plif_relaxed_step(params: &PlifParams, h_prev: &[f64], x: &[f64]) -> Result<RelaxedState> {
    check_same_len("plif_relaxed_step", h_prev, x)?;
    let k = params.inv_tau();
    let beta = params.beta();
    let n = x.len();
    let mut state = RelaxedState { u: Vec::with_capacity(n), h: Vec::with_capacity(n), s: Vec::with_capacity(n) };
    for (&hp, &xi) in h_prev.iter().zip(x) {
        let u = hp + k * (-(hp - params.v_reset) + xi);
        let s = params.relaxed_spike(u);
        state.u.push(u);
        state.s.push(s);
        state.h.push(params.v_reset * s + beta * u * (1.0 - s));
    }
    Ok(state)
}

/// Iterates [`plif_step`] over a time-major `[T x neurons]` input.
///
/// Returns the spike raster (time-major, same layout as `x_seq`) and every
/// intermediate state.
pub fn plif_forward(params: &PlifParams, x_seq: &[f64], steps: usize, h0: &[f64]) -> Result<(Vec<u8>, Vec<PlifState>)> {
    if steps == 0 {
        return Err(Error::InvalidArgument("plif_forward needs at least one time step".into()));
    }
    let n = h0.len();
    if x_seq.len() != steps * n {
        return Err(Error::shape("plif_forward", format!("x_seq has {} values, expected {steps} x {n}", x_seq.len())));
    }
    let mut spikes = Vec::with_capacity(steps * n);
    let mut states = Vec::with_capacity(steps);
    let mut h = h0.to_vec();
    for x in x_seq.chunks_exact(n.max(1)).take(steps) {
        let st = plif_step(params, &h, &x[..n])?;
        spikes.extend_from_slice(&st.s);
        h.clone_from(&st.h);
        states.push(st);
    }
    Ok((spikes, states))
}

pub fn surrogate_grad(params: &PlifParams, u: &[f64]) -> Vec<f64> {
    u.iter().map(|&v| params.surrogate(v)).collect()
}

/// Spike nonlinearity used inside networks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpikeFn {
    #[default]
    Heaviside,
    Relaxed,
}

/// Saved activations of a PLIF layer evaluated over neuron-major input
/// `[neurons x T]` (time is the fastest axis).
#[derive(Clone, Debug)]
pub struct PlifTrace {
    pub neurons: usize,
    pub steps: usize,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub h: Vec<f64>,
    pub s: Vec<f64>,
}

/// Runs a layer of independent PLIF neurons; `x` is neuron-major with
/// `steps` values per neuron. All neurons start at `H = v_reset`.
pub fn plif_layer_forward(params: &PlifParams, x: &[f64], steps: usize, spike_fn: SpikeFn) -> Result<PlifTrace> {
    if steps == 0 || !x.len().is_multiple_of(steps) {
        return Err(Error::shape("plif_layer", format!("{} values do not split into {steps} steps", x.len())));
    }
    let neurons = x.len() / steps;
    let k = params.inv_tau();
    let beta = params.beta();
    let mut u = vec![0.0; x.len()];
    let mut h = vec![0.0; x.len()];
    let mut s = vec![0.0; x.len()];
    for n in 0..neurons {
        let base = n * steps;
        let mut hp = params.v_reset;
        for t in 0..steps {
            let i = base + t;
            let ui = hp + k * (-(hp - params.v_reset) + x[i]);
            let si = match spike_fn {
                SpikeFn::Heaviside => {
                    if params.fires(ui) {
                        1.0
                    } else {
                        0.0
                    }
                }
                SpikeFn::Relaxed => params.relaxed_spike(ui),
            };
            let hi = match spike_fn {
                SpikeFn::Heaviside if si == 1.0 => params.v_reset,
                SpikeFn::Heaviside => beta * ui,
                SpikeFn::Relaxed => params.v_reset * si + beta * ui * (1.0 - si),
            };
            u[i] = ui;
            s[i] = si;
            h[i] = hi;
            hp = hi;
        }
    }
    Ok(PlifTrace { neurons, steps, x: x.to_vec(), u, h, s })
}

/// Backpropagation through time for one PLIF layer.
///
/// `grad_s` is dL/dS for every (neuron, step). Returns dL/dX and dL/dw.
/// The reset path contributes `dH/dU = beta(1-S) + (V_reset - beta U) dS/dU`.
pub fn plif_layer_backward(params: &PlifParams, trace: &PlifTrace, grad_s: &[f64]) -> Result<(Vec<f64>, f64)> {
    if grad_s.len() != trace.s.len() {
        return Err(Error::shape("plif_layer_backward", format!("{} grads for {} spikes", grad_s.len(), trace.s.len())));
    }
    let k = params.inv_tau();
    let beta = params.beta();
    let steps = trace.steps;
    let mut grad_x = vec![0.0; grad_s.len()];
    let mut g_k = 0.0;
    let mut g_beta = 0.0;
    for n in 0..trace.neurons {
        let base = n * steps;
        let mut g_h = 0.0;
        for t in (0..steps).rev() {
            let i = base + t;
            let u = trace.u[i];
            let s = trace.s[i];
            let sg = params.surrogate(u);
            let g_s = grad_s[i] + g_h * (params.v_reset - beta * u);
            let g_u = g_s * sg + g_h * beta * (1.0 - s);
            g_beta += g_h * u * (1.0 - s);
            let h_prev = if t == 0 { params.v_reset } else { trace.h[i - 1] };
            g_k += g_u * (-(h_prev - params.v_reset) + trace.x[i]);
            grad_x[i] = g_u * k;
            g_h = g_u * (1.0 - k);
        }
    }
    // dbeta/dk = -beta, dk/dw = k(1-k)
    let g_w = (g_k - g_beta * beta) * k * (1.0 - k);
    Ok((grad_x, g_w))
}

/// Binary `C x T` spike raster, channel-major.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SpikeTensor {
    c: usize,
    t: usize,
    data: Vec<u8>,
}

impl SpikeTensor {
    pub fn zeros(c: usize, t: usize) -> Result<Self> {
        if c == 0 || t == 0 {
            return Err(Error::InvalidArgument(format!("spike tensor extents must be positive, got {c}x{t}")));
        }
        Ok(Self { c, t, data: vec![0; c * t] })
    }

    pub fn from_vec(c: usize, t: usize, data: Vec<u8>) -> Result<Self> {
        if c == 0 || t == 0 || data.len() != c * t {
            return Err(Error::shape("spike_tensor", format!("{} values for {c}x{t}", data.len())));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::InvalidArgument("spike tensor values must be 0 or 1".into()));
        }
        Ok(Self { c, t, data })
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn steps(&self) -> usize {
        self.t
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, ch: usize, t: usize) -> bool {
        self.data[ch * self.t + t] != 0
    }

    pub fn set(&mut self, ch: usize, t: usize, spike: bool) {
        self.data[ch * self.t + t] = spike as u8;
    }

    pub fn count(&self) -> u64 {
        self.data.iter().map(|&v| v as u64).sum()
    }

    pub fn row(&self, ch: usize) -> &[u8] {
        &self.data[ch * self.t..(ch + 1) * self.t]
    }

    /// Element-wise product with a `C x T` binary mask.
    pub fn masked(&self, mask: &[u8]) -> Self {
        debug_assert_eq!(mask.len(), self.data.len());
        let data = self.data.iter().zip(mask).map(|(&a, &m)| a & m).collect();
        Self { c: self.c, t: self.t, data }
    }

    /// True if every spike in `self` is also present in `other`.
    pub fn is_subset_of(&self, other: &SpikeTensor) -> bool {
        self.c == other.c && self.t == other.t && self.data.iter().zip(&other.data).all(|(&a, &b)| a <= b)
    }

    /// Stacks a batch into a dense `[B x C x T]` tensor.
    pub fn stack(batch: &[&SpikeTensor]) -> Result<DenseTensor> {
        let first = batch.first().ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
        let (c, t) = (first.c, first.t);
        let mut data = Vec::with_capacity(batch.len() * c * t);
        for x in batch {
            if x.c != c || x.t != t {
                return Err(Error::shape("stack", format!("trial {}x{} in a {c}x{t} batch", x.c, x.t)));
            }
            data.extend(x.data.iter().map(|&v| v as f64));
        }
        DenseTensor::new(vec![batch.len(), c, t], data)
    }
}
