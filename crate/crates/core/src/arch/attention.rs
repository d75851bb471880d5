//! Squeeze-and-excitation channel attention.
//!
//! `z = mean_t(x)`, `gate = sigmoid(w2 · relu(w1 · z))`, `y = gate ⊙ x`
//! per channel. The bottleneck layers carry no bias.

use crate::error::{Error, Result};
use crate::ops::{BackwardCtx, OpCounter, ParamId, TapeOp};
use crate::spike::sigmoid;
use crate::tensor::DenseTensor;

#[derive(Clone, Debug, PartialEq)]
pub struct CaParams {
    pub channels: usize,
    pub hidden: usize,
    /// `[hidden x channels]`, row-major.
    pub w1: Vec<f64>,
    /// `[channels x hidden]`, row-major.
    pub w2: Vec<f64>,
}

impl CaParams {
    pub fn new(channels: usize, hidden: usize, w1: Vec<f64>, w2: Vec<f64>) -> Result<Self> {
        if channels == 0 || hidden == 0 || w1.len() != hidden * channels || w2.len() != channels * hidden {
            return Err(Error::shape("channel_attention", format!("weights do not fit C={channels}, hidden={hidden}")));
        }
        Ok(Self { channels, hidden, w1, w2 })
    }

    /// MACs charged per batch row: two bottleneck products plus the gate apply.
    pub fn macs_per_row(&self) -> u64 {
        (2 * self.channels * self.hidden + self.channels) as u64
    }
}

/// Activations needed for the backward pass; `gate` is `[B x C]`.
#[derive(Clone, Debug)]
pub struct AttentionCache {
    pub input: DenseTensor,
    pub z: Vec<f64>,
    pub pre: Vec<f64>,
    pub gate: Vec<f64>,
}

/// Multiplies every channel of `x` (`[B, C, ...]`) by its row of `gate`.
pub fn apply_gate(x: &DenseTensor, gate: &[f64]) -> Result<DenseTensor> {
    let (b, c, r) = x.split_bfr();
    if gate.len() != b * c {
        return Err(Error::shape("apply_gate", format!("{} gates for {b}x{c} channels", gate.len())));
    }
    let mut out = x.data().to_vec();
    for (chunk, g) in out.chunks_exact_mut(r.max(1)).zip(gate) {
        chunk.iter_mut().for_each(|v| *v *= g);
    }
    DenseTensor::new(x.shape().to_vec(), out)
}

pub fn channel_attention(
    ca: &CaParams,
    x: &DenseTensor,
    counter: &mut OpCounter,
    layer: &str,
) -> Result<(DenseTensor, AttentionCache)> {
    if x.rank() < 3 || x.shape()[1] != ca.channels {
        return Err(Error::shape("channel_attention", format!("input {:?} for {} channels", x.shape(), ca.channels)));
    }
    let (b, c, r) = x.split_bfr();
    let h = ca.hidden;
    let z: Vec<f64> = x.data().chunks_exact(r).map(|row| row.iter().sum::<f64>() / r as f64).collect();
    let mut pre = vec![0.0; b * h];
    let mut gate = vec![0.0; b * c];
    for bi in 0..b {
        let zb = &z[bi * c..(bi + 1) * c];
        for j in 0..h {
            pre[bi * h + j] = ca.w1[j * c..(j + 1) * c].iter().zip(zb).map(|(w, v)| w * v).sum();
        }
        let hid = &pre[bi * h..(bi + 1) * h];
        for ci in 0..c {
            let a: f64 = ca.w2[ci * h..(ci + 1) * h].iter().zip(hid).map(|(w, v)| w * v.max(0.0)).sum();
            gate[bi * c + ci] = sigmoid(a);
        }
    }
    counter.add_mac(layer, ca.macs_per_row() * b as u64);
    let out = apply_gate(x, &gate)?;
    Ok((out, AttentionCache { input: x.clone(), z, pre, gate }))
}

/// Returns `(dL/dx, dL/dw1, dL/dw2)`.
pub fn channel_attention_backward(
    ca: &CaParams,
    cache: &AttentionCache,
    grad_out: &DenseTensor,
) -> Result<(DenseTensor, Vec<f64>, Vec<f64>)> {
    if grad_out.shape() != cache.input.shape() {
        return Err(Error::shape("channel_attention_backward", "gradient extent differs from input"));
    }
    let (b, c, r) = grad_out.split_bfr();
    let h = ca.hidden;
    let x = cache.input.data();
    let gy = grad_out.data();
    let mut gx = vec![0.0; x.len()];
    let mut gw1 = vec![0.0; ca.w1.len()];
    let mut gw2 = vec![0.0; ca.w2.len()];
    for bi in 0..b {
        let mut g_z = vec![0.0; c];
        let mut g_hid = vec![0.0; h];
        for ci in 0..c {
            let base = (bi * c + ci) * r;
            let gate = cache.gate[bi * c + ci];
            let mut g_gate = 0.0;
            for i in base..base + r {
                gx[i] = gy[i] * gate;
                g_gate += gy[i] * x[i];
            }
            let g_a = g_gate * gate * (1.0 - gate);
            for j in 0..h {
                gw2[ci * h + j] += g_a * cache.pre[bi * h + j].max(0.0);
                g_hid[j] += g_a * ca.w2[ci * h + j];
            }
        }
        for j in 0..h {
            if cache.pre[bi * h + j] <= 0.0 {
                continue;
            }
            for ci in 0..c {
                gw1[j * c + ci] += g_hid[j] * cache.z[bi * c + ci];
                g_z[ci] += g_hid[j] * ca.w1[j * c + ci];
            }
        }
        for ci in 0..c {
            let g = g_z[ci] / r as f64;
            let base = (bi * c + ci) * r;
            gx[base..base + r].iter_mut().for_each(|v| *v += g);
        }
    }
    Ok((DenseTensor::new(cache.input.shape().to_vec(), gx)?, gw1, gw2))
}

pub struct AttentionNode {
    pub cache: AttentionCache,
    pub w1: ParamId,
    pub w2: ParamId,
    pub channels: usize,
    pub hidden: usize,
}

impl TapeOp for AttentionNode {
    fn name(&self) -> &'static str {
        "attention"
    }

    fn backward(&self, ctx: &mut BackwardCtx<'_>, grad_out: DenseTensor) -> Result<DenseTensor> {
        let ca = CaParams {
            channels: self.channels,
            hidden: self.hidden,
            w1: ctx.params.get(self.w1).to_vec(),
            w2: ctx.params.get(self.w2).to_vec(),
        };
        let (gx, gw1, gw2) = channel_attention_backward(&ca, &self.cache, &grad_out)?;
        ctx.grads.accumulate(self.w1, &gw1);
        ctx.grads.accumulate(self.w2, &gw2);
        Ok(gx)
    }
}
