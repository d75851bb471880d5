//! Grouped 1-D/2-D cross-correlation with event-driven op counting.
//!
//! Both passes iterate over input positions and scatter into the outputs
//! they reach, so a zero input on the binary path costs nothing. Every
//! in-range tap is one accumulation; taps that land on padding are not
//! counted.

use serde::{Deserialize, Serialize};

use super::counter::OpCounter;
use crate::error::{Error, Result};
use crate::tensor::DenseTensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    #[default]
    Valid,
    /// Output extent equals input extent (stride 1 only); the extra
    /// element of an even kernel's padding goes after the input.
    Same,
}

/// Whether the values fed to an op are spikes (counted as AC) or real
/// numbers (counted as MAC).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputDomain {
    Binary,
    Real,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: Padding,
    pub groups: usize,
}

impl ConvGeom {
    pub fn new2d(
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: Padding,
        groups: usize,
    ) -> Result<Self> {
        let g = Self { in_channels, out_channels, kernel, stride, padding, groups };
        if in_channels == 0 || out_channels == 0 || kernel.0 == 0 || kernel.1 == 0 {
            return Err(Error::InvalidArgument(format!("degenerate convolution {g:?}")));
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(Error::InvalidArgument("convolution stride must be positive".into()));
        }
        if groups == 0 || !in_channels.is_multiple_of(groups) || !out_channels.is_multiple_of(groups) {
            return Err(Error::InvalidArgument(format!(
                "groups={groups} must divide in_channels={in_channels} and out_channels={out_channels}"
            )));
        }
        if padding == Padding::Same && stride != (1, 1) {
            return Err(Error::InvalidArgument("same padding requires stride 1".into()));
        }
        Ok(g)
    }

    pub fn new1d(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
        groups: usize,
    ) -> Result<Self> {
        Self::new2d(in_channels, out_channels, (1, kernel), (1, stride), padding, groups)
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels / self.groups, self.kernel.0, self.kernel.1]
    }

    pub fn weight_len(&self) -> usize {
        self.weight_shape().iter().product()
    }

    /// Inputs feeding one output element.
    pub fn fan_in(&self) -> usize {
        self.in_channels / self.groups * self.kernel.0 * self.kernel.1
    }

    fn pad_before(&self) -> (usize, usize) {
        match self.padding {
            Padding::Valid => (0, 0),
            Padding::Same => ((self.kernel.0 - 1) / 2, (self.kernel.1 - 1) / 2),
        }
    }

    pub fn output_extent(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        match self.padding {
            Padding::Same => Ok((h, w)),
            Padding::Valid => {
                if h < self.kernel.0 || w < self.kernel.1 {
                    return Err(Error::shape(
                        "conv",
                        format!("input {h}x{w} smaller than kernel {:?} with valid padding", self.kernel),
                    ));
                }
                Ok(((h - self.kernel.0) / self.stride.0 + 1, (w - self.kernel.1) / self.stride.1 + 1))
            }
        }
    }

    /// Every multiply of a dense implementation, padding taps included.
    pub fn dense_macs(&self, batch: usize, out_h: usize, out_w: usize) -> u64 {
        (batch * self.out_channels * out_h * out_w * self.fan_in()) as u64
    }
}

/// For each input index along one axis, the `(kernel_index, output_index)`
/// pairs it contributes to.
fn tap_table(input: usize, output: usize, kernel: usize, stride: usize, pad: usize) -> Vec<Vec<(usize, usize)>> {
    (0..input)
        .map(|i| {
            (0..kernel)
                .filter_map(|k| {
                    let num = i + pad;
                    if num < k || !(num - k).is_multiple_of(stride) {
                        return None;
                    }
                    let o = (num - k) / stride;
                    (o < output).then_some((k, o))
                })
                .collect()
        })
        .collect()
}

struct Plan {
    batch: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    rows: Vec<Vec<(usize, usize)>>,
    cols: Vec<Vec<(usize, usize)>>,
}

fn plan(input: &DenseTensor, weight: &[f64], geom: &ConvGeom, op: &'static str) -> Result<Plan> {
    let shape = input.shape();
    if shape.len() != 4 {
        return Err(Error::shape(op, format!("expected [B, C, H, W] input, got {shape:?}")));
    }
    if shape[1] != geom.in_channels {
        return Err(Error::shape(op, format!("input has {} channels, kernel expects {}", shape[1], geom.in_channels)));
    }
    if weight.len() != geom.weight_len() {
        return Err(Error::shape(op, format!("weight has {} values, expected {:?}", weight.len(), geom.weight_shape())));
    }
    let (h, w) = (shape[2], shape[3]);
    let (oh, ow) = geom.output_extent(h, w).map_err(|e| match e {
        Error::Shape { detail, .. } => Error::shape(op, detail),
        other => other,
    })?;
    let (ph, pw) = geom.pad_before();
    Ok(Plan {
        batch: shape[0],
        h,
        w,
        oh,
        ow,
        rows: tap_table(h, oh, geom.kernel.0, geom.stride.0, ph),
        cols: tap_table(w, ow, geom.kernel.1, geom.stride.1, pw),
    })
}

/// 2-D cross-correlation over `[B, C_in, H, W]` with weights
/// `[C_out, C_in/groups, kH, kW]`.
pub fn conv2d(
    input: &DenseTensor,
    weight: &[f64],
    geom: &ConvGeom,
    domain: InputDomain,
    counter: &mut OpCounter,
    layer: &str,
) -> Result<DenseTensor> {
    let p = plan(input, weight, geom, "conv2d")?;
    if domain == InputDomain::Binary && !input.is_binary() {
        return Err(Error::InvalidArgument(format!("{layer}: input flagged binary holds non-spike values")));
    }
    let cin_g = geom.in_channels / geom.groups;
    let cout_g = geom.out_channels / geom.groups;
    let (kh, kw) = geom.kernel;
    let x = input.data();
    let mut out = vec![0.0; p.batch * geom.out_channels * p.oh * p.ow];
    let (mut ac, mut dense, mut mac) = (0u64, 0u64, 0u64);

    for b in 0..p.batch {
        for ci in 0..geom.in_channels {
            let g = ci / cin_g;
            let cil = ci % cin_g;
            for ih in 0..p.h {
                let rows = &p.rows[ih];
                for iw in 0..p.w {
                    let cols = &p.cols[iw];
                    let taps = (rows.len() * cols.len() * cout_g) as u64;
                    let v = x[((b * geom.in_channels + ci) * p.h + ih) * p.w + iw];
                    match domain {
                        InputDomain::Binary => {
                            dense += taps;
                            if v != 0.0 {
                                ac += taps;
                            }
                        }
                        InputDomain::Real => mac += taps,
                    }
                    if v == 0.0 || taps == 0 {
                        continue;
                    }
                    for co in g * cout_g..(g + 1) * cout_g {
                        let wbase = (co * cin_g + cil) * kh * kw;
                        let obase = (b * geom.out_channels + co) * p.oh * p.ow;
                        for &(ki, oi) in rows {
                            let wrow = &weight[wbase + ki * kw..wbase + (ki + 1) * kw];
                            let orow = obase + oi * p.ow;
                            for &(kj, oj) in cols {
                                out[orow + oj] += wrow[kj] * v;
                            }
                        }
                    }
                }
            }
        }
    }
    match domain {
        InputDomain::Binary => counter.add_ac(layer, ac, dense),
        InputDomain::Real => counter.add_mac(layer, mac),
    }
    DenseTensor::new(vec![p.batch, geom.out_channels, p.oh, p.ow], out)
}

/// Gradients of [`conv2d`]: `(dL/dinput, dL/dweight)`. The input gradient
/// is skipped when `need_input_grad` is false, which lets the weight
/// gradient visit only nonzero inputs.
pub fn conv2d_backward(
    input: &DenseTensor,
    weight: &[f64],
    geom: &ConvGeom,
    grad_out: &DenseTensor,
    need_input_grad: bool,
) -> Result<(Option<DenseTensor>, Vec<f64>)> {
    let p = plan(input, weight, geom, "conv2d_backward")?;
    if grad_out.shape() != [p.batch, geom.out_channels, p.oh, p.ow] {
        return Err(Error::shape("conv2d_backward", format!("grad_out {:?}", grad_out.shape())));
    }
    if geom.stride == (1, 1) {
        let (x, go) = (input.data(), grad_out.data());
        let (gin, gw) = if !need_input_grad {
            (Vec::new(), backward_weights_only(x, go, weight.len(), geom, &p))
        } else if geom.kernel.1 == 1 {
            backward_column_kernel(x, weight, go, true, geom, &p)
        } else if geom.kernel.0 == 1 {
            backward_row_kernel(x, weight, go, geom, &p)
        } else {
            return backward_general(input, weight, geom, grad_out, need_input_grad, &p);
        };
        let gin = if need_input_grad { Some(DenseTensor::new(input.shape().to_vec(), gin)?) } else { None };
        return Ok((gin, gw));
    }
    backward_general(input, weight, geom, grad_out, need_input_grad, &p)
}

fn backward_general(
    input: &DenseTensor,
    weight: &[f64],
    geom: &ConvGeom,
    grad_out: &DenseTensor,
    need_input_grad: bool,
    p: &Plan,
) -> Result<(Option<DenseTensor>, Vec<f64>)> {
    let cin_g = geom.in_channels / geom.groups;
    let cout_g = geom.out_channels / geom.groups;
    let (kh, kw) = geom.kernel;
    let x = input.data();
    let go = grad_out.data();
    let mut gw = vec![0.0; weight.len()];
    let mut gin = if need_input_grad { vec![0.0; x.len()] } else { Vec::new() };

    for b in 0..p.batch {
        for ci in 0..geom.in_channels {
            let g = ci / cin_g;
            let cil = ci % cin_g;
            for ih in 0..p.h {
                let rows = &p.rows[ih];
                for iw in 0..p.w {
                    let cols = &p.cols[iw];
                    let xi = ((b * geom.in_channels + ci) * p.h + ih) * p.w + iw;
                    let v = x[xi];
                    if v == 0.0 && !need_input_grad {
                        continue;
                    }
                    let mut acc = 0.0;
                    for co in g * cout_g..(g + 1) * cout_g {
                        let wbase = (co * cin_g + cil) * kh * kw;
                        let obase = (b * geom.out_channels + co) * p.oh * p.ow;
                        for &(ki, oi) in rows {
                            let orow = obase + oi * p.ow;
                            let wrow = wbase + ki * kw;
                            for &(kj, oj) in cols {
                                let g_o = go[orow + oj];
                                acc += weight[wrow + kj] * g_o;
                                if v != 0.0 {
                                    gw[wrow + kj] += g_o * v;
                                }
                            }
                        }
                    }
                    if need_input_grad {
                        gin[xi] = acc;
                    }
                }
            }
        }
    }
    let gin = if need_input_grad { Some(DenseTensor::new(input.shape().to_vec(), gin)?) } else { None };
    Ok((gin, gw))
}

/// Four-lane dot product; the split accumulators let the compiler vectorize.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Kernel columns `kj` that carry input column `iw` to an output column.
fn valid_columns(iw: usize, pw: usize, ow: usize, kw: usize) -> (usize, usize) {
    let lo = (iw + pw + 1).saturating_sub(ow);
    let hi = (iw + pw + 1).min(kw);
    (lo, hi.max(lo))
}

/// Weight gradient alone, visiting only nonzero inputs (unit stride).
fn backward_weights_only(x: &[f64], go: &[f64], weight_len: usize, geom: &ConvGeom, p: &Plan) -> Vec<f64> {
    let cin_g = geom.in_channels / geom.groups;
    let cout_g = geom.out_channels / geom.groups;
    let (kh, kw) = geom.kernel;
    let pw = geom.pad_before().1;
    let mut gw = vec![0.0; weight_len];
    for b in 0..p.batch {
        for ci in 0..geom.in_channels {
            let (g, cil) = (ci / cin_g, ci % cin_g);
            for ih in 0..p.h {
                let xrow = ((b * geom.in_channels + ci) * p.h + ih) * p.w;
                for iw in 0..p.w {
                    let v = x[xrow + iw];
                    if v == 0.0 {
                        continue;
                    }
                    let (lo, hi) = valid_columns(iw, pw, p.ow, kw);
                    if lo == hi {
                        continue;
                    }
                    for co in g * cout_g..(g + 1) * cout_g {
                        let wbase = (co * cin_g + cil) * kh * kw;
                        let obase = (b * geom.out_channels + co) * p.oh * p.ow;
                        for &(ki, oi) in &p.rows[ih] {
                            // output columns iw + pw - kj for kj in [lo, hi), descending
                            let o = obase + oi * p.ow + iw + pw;
                            let src = &go[o + 1 - hi..=o - lo];
                            let dst = &mut gw[wbase + ki * kw + lo..wbase + ki * kw + hi];
                            for (d, &g_o) in dst.iter_mut().zip(src.iter().rev()) {
                                *d += v * g_o;
                            }
                        }
                    }
                }
            }
        }
    }
    gw
}

/// Single-column kernels at unit stride: every tap is a whole-row update.
fn backward_column_kernel(
    x: &[f64],
    weight: &[f64],
    go: &[f64],
    need_input_grad: bool,
    geom: &ConvGeom,
    p: &Plan,
) -> (Vec<f64>, Vec<f64>) {
    let cin_g = geom.in_channels / geom.groups;
    let cout_g = geom.out_channels / geom.groups;
    let kh = geom.kernel.0;
    let w = p.w;
    let mut gw = vec![0.0; weight.len()];
    let mut gin = if need_input_grad { vec![0.0; x.len()] } else { Vec::new() };
    for b in 0..p.batch {
        for ci in 0..geom.in_channels {
            let (g, cil) = (ci / cin_g, ci % cin_g);
            for ih in 0..p.h {
                let xrow = ((b * geom.in_channels + ci) * p.h + ih) * w;
                let xr = &x[xrow..xrow + w];
                let active = xr.iter().any(|&v| v != 0.0);
                for co in g * cout_g..(g + 1) * cout_g {
                    let wbase = (co * cin_g + cil) * kh;
                    for &(ki, oi) in &p.rows[ih] {
                        let gor = &go[((b * geom.out_channels + co) * p.oh + oi) * w..][..w];
                        if active {
                            gw[wbase + ki] += dot(xr, gor);
                        }
                        if need_input_grad {
                            let wv = weight[wbase + ki];
                            for (gi, &g_o) in gin[xrow..xrow + w].iter_mut().zip(gor) {
                                *gi += wv * g_o;
                            }
                        }
                    }
                }
            }
        }
    }
    (gin, gw)
}

/// Single-row kernels at unit stride. Each output-gradient row is unrolled
/// into `[input column][kernel column, out channel]`, so the taps an input
/// column reaches form one contiguous run: the input gradient becomes a
/// dot product and the weight gradient a run update.
fn backward_row_kernel(x: &[f64], weight: &[f64], go: &[f64], geom: &ConvGeom, p: &Plan) -> (Vec<f64>, Vec<f64>) {
    let cin_g = geom.in_channels / geom.groups;
    let cout_g = geom.out_channels / geom.groups;
    let kw = geom.kernel.1;
    let pw = geom.pad_before().1;
    let r = kw * cout_g;
    let at = |kj: usize, col: usize| kj * cout_g + col;
    let mut wt = vec![0.0; geom.in_channels * r];
    for co in 0..geom.out_channels {
        let (g, col) = (co / cout_g, co % cout_g);
        for cil in 0..cin_g {
            let ci = g * cin_g + cil;
            for kj in 0..kw {
                wt[ci * r + at(kj, col)] = weight[(co * cin_g + cil) * kw + kj];
            }
        }
    }
    let mut gwt = vec![0.0; geom.in_channels * r];
    let mut gin = vec![0.0; x.len()];
    let mut unrolled = vec![0.0; p.w * r];
    let spans: Vec<(usize, usize)> = (0..p.w).map(|iw| valid_columns(iw, pw, p.ow, kw)).collect();

    for b in 0..p.batch {
        for g in 0..geom.groups {
            for ih in 0..p.h {
                for col in 0..cout_g {
                    let co = g * cout_g + col;
                    let orow = &go[((b * geom.out_channels + co) * p.oh + ih) * p.ow..][..p.ow];
                    for (iw, &(lo, hi)) in spans.iter().enumerate() {
                        for kj in lo..hi {
                            unrolled[iw * r + at(kj, col)] = orow[iw + pw - kj];
                        }
                    }
                }
                for cil in 0..cin_g {
                    let ci = g * cin_g + cil;
                    let xrow = ((b * geom.in_channels + ci) * p.h + ih) * p.w;
                    for (iw, &(lo, hi)) in spans.iter().enumerate() {
                        let run = iw * r + at(lo, 0)..iw * r + at(hi, 0);
                        let u = &unrolled[run];
                        let wrun = ci * r + at(lo, 0)..ci * r + at(hi, 0);
                        gin[xrow + iw] = dot(&wt[wrun.clone()], u);
                        let v = x[xrow + iw];
                        if v != 0.0 {
                            for (gv, &uv) in gwt[wrun].iter_mut().zip(u) {
                                *gv += v * uv;
                            }
                        }
                    }
                }
            }
        }
    }
    let mut gw = vec![0.0; weight.len()];
    for co in 0..geom.out_channels {
        let (g, col) = (co / cout_g, co % cout_g);
        for cil in 0..cin_g {
            let ci = g * cin_g + cil;
            for kj in 0..kw {
                gw[(co * cin_g + cil) * kw + kj] = gwt[ci * r + at(kj, col)];
            }
        }
    }
    (gin, gw)
}

fn as_2d(input: &DenseTensor, op: &'static str) -> Result<DenseTensor> {
    let s = input.shape();
    if s.len() != 3 {
        return Err(Error::shape(op, format!("expected [B, C, T] input, got {s:?}")));
    }
    input.clone().reshape(vec![s[0], s[1], 1, s[2]])
}

/// 1-D cross-correlation over `[B, C_in, T]` with weights `[C_out, C_in/groups, K]`.
pub fn conv1d(
    input: &DenseTensor,
    weight: &[f64],
    geom: &ConvGeom,
    domain: InputDomain,
    counter: &mut OpCounter,
    layer: &str,
) -> Result<DenseTensor> {
    if geom.kernel.0 != 1 {
        return Err(Error::InvalidArgument("conv1d needs a geometry built with ConvGeom::new1d".into()));
    }
    let x = as_2d(input, "conv1d")?;
    let out = conv2d(&x, weight, geom, domain, counter, layer)?;
    let s = out.shape().to_vec();
    out.reshape(vec![s[0], s[1], s[3]])
}

pub fn conv1d_backward(
    input: &DenseTensor,
    weight: &[f64],
    geom: &ConvGeom,
    grad_out: &DenseTensor,
    need_input_grad: bool,
) -> Result<(Option<DenseTensor>, Vec<f64>)> {
    let x = as_2d(input, "conv1d_backward")?;
    let go = as_2d(grad_out, "conv1d_backward")?;
    let (gin, gw) = conv2d_backward(&x, weight, geom, &go, need_input_grad)?;
    let gin = gin.map(|g| g.reshape(input.shape().to_vec())).transpose()?;
    Ok((gin, gw))
}
