//! Local synaptic stabilization: per-feature exponential smoothing along time.
//!
//! `y_0 = λ x_0`, `y_t = λ x_t + (1 - λ) y_{t-1}` with `λ = sigmoid(g)` per
//! feature (axis 1). The last axis is time; any axes in between are
//! independent rows sharing their feature's `λ`.

use crate::error::{Error, Result};
use crate::ops::{BackwardCtx, ParamId, TapeOp};
use crate::spike::sigmoid;
use crate::tensor::DenseTensor;

#[derive(Clone, Debug, PartialEq)]
pub struct LssParams {
    pub g: Vec<f64>,
}

impl LssParams {
    pub fn new(g: Vec<f64>) -> Result<Self> {
        if g.is_empty() || g.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("LSS logits must be finite and non-empty".into()));
        }
        Ok(Self { g })
    }

    pub fn lambda(&self) -> Vec<f64> {
        self.g.iter().map(|&g| sigmoid(g)).collect()
    }
}

fn rows(x: &DenseTensor, features: usize) -> Result<(usize, usize, usize)> {
    if x.rank() < 3 || x.shape()[1] != features {
        return Err(Error::shape("lss_filter", format!("input {:?} for {features} features", x.shape())));
    }
    let t = x.last_dim();
    let (b, f, r) = x.split_bfr();
    Ok((b * f, r / t, t))
}

pub fn lss_filter(lss: &LssParams, x: &DenseTensor) -> Result<DenseTensor> {
    let f = lss.g.len();
    let (bf, mid, t) = rows(x, f)?;
    let lam = lss.lambda();
    let mut out = x.data().to_vec();
    for row in 0..bf * mid {
        let l = lam[(row / mid) % f];
        let y = &mut out[row * t..(row + 1) * t];
        let mut prev = 0.0;
        for v in y.iter_mut() {
            prev = l * *v + (1.0 - l) * prev;
            *v = prev;
        }
    }
    DenseTensor::new(x.shape().to_vec(), out)
}

/// Returns `(dL/dx, dL/dg)`; `y` is the forward output.
pub fn lss_filter_backward(
    lss: &LssParams,
    x: &DenseTensor,
    y: &DenseTensor,
    grad_out: &DenseTensor,
) -> Result<(DenseTensor, Vec<f64>)> {
    let f = lss.g.len();
    let (bf, mid, t) = rows(x, f)?;
    if grad_out.shape() != x.shape() || y.shape() != x.shape() {
        return Err(Error::shape("lss_filter_backward", "extents differ"));
    }
    let lam = lss.lambda();
    let mut gx = vec![0.0; x.len()];
    let mut gg = vec![0.0; f];
    for row in 0..bf * mid {
        let fi = (row / mid) % f;
        let l = lam[fi];
        let base = row * t;
        let mut carry = 0.0;
        let mut g_l = 0.0;
        for i in (0..t).rev() {
            let g_y = grad_out.data()[base + i] + carry;
            let y_prev = if i == 0 { 0.0 } else { y.data()[base + i - 1] };
            gx[base + i] = g_y * l;
            g_l += g_y * (x.data()[base + i] - y_prev);
            carry = g_y * (1.0 - l);
        }
        gg[fi] += g_l * l * (1.0 - l);
    }
    Ok((DenseTensor::new(x.shape().to_vec(), gx)?, gg))
}

pub struct LssNode {
    pub input: DenseTensor,
    pub output: DenseTensor,
    pub g: ParamId,
}

impl TapeOp for LssNode {
    fn name(&self) -> &'static str {
        "lss"
    }

    fn backward(&self, ctx: &mut BackwardCtx<'_>, grad_out: DenseTensor) -> Result<DenseTensor> {
        let lss = LssParams { g: ctx.params.get(self.g).to_vec() };
        let (gx, gg) = lss_filter_backward(&lss, &self.input, &self.output, &grad_out)?;
        ctx.grads.accumulate(self.g, &gg);
        Ok(gx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn large_logit_is_identity() {
        let x = DenseTensor::new(vec![1, 2, 1, 5], (0..10).map(|i| (i as f64).sin()).collect()).unwrap();
        let y = lss_filter(&LssParams::new(vec![20.0, 20.0]).unwrap(), &x).unwrap();
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn constant_input_converges_from_below() {
        let x = DenseTensor::filled(vec![1, 1, 30], 2.0);
        let y = lss_filter(&LssParams::new(vec![0.0]).unwrap(), &x).unwrap();
        // closed form: y_t = x (1 - (1-λ)^(t+1))
        for (t, w) in y.data().windows(2).enumerate() {
            assert!(w[1] >= w[0]);
            assert!((w[0] - 2.0 * (1.0 - 0.5f64.powi(t as i32 + 1))).abs() < 1e-12);
        }
        assert!((y.data()[29] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn per_feature_lambda() {
        let x = DenseTensor::filled(vec![1, 2, 2], 1.0);
        let lss = LssParams::new(vec![0.0, 40.0]).unwrap();
        let y = lss_filter(&lss, &x).unwrap();
        assert_eq!(&y.data()[..2], &[0.5, 0.75]);
        assert!((y.data()[2] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let x = DenseTensor::new(vec![2, 2, 1, 4], (0..16).map(|i| ((i as f64) * 0.9).cos()).collect()).unwrap();
        let lss = LssParams::new(vec![0.3, -0.8]).unwrap();
        let probe: Vec<f64> = (0..16).map(|i| ((i as f64) * 0.41).sin()).collect();
        let loss = |lss: &LssParams, x: &DenseTensor| {
            lss_filter(lss, x).unwrap().data().iter().zip(&probe).map(|(a, b)| a * b).sum::<f64>()
        };
        let y = lss_filter(&lss, &x).unwrap();
        let g = DenseTensor::new(x.shape().to_vec(), probe.clone()).unwrap();
        let (gx, gg) = lss_filter_backward(&lss, &x, &y, &g).unwrap();
        let h = 1e-6;
        for f in 0..2 {
            let (mut p, mut m) = (lss.clone(), lss.clone());
            p.g[f] += h;
            m.g[f] -= h;
            let fd = (loss(&p, &x) - loss(&m, &x)) / (2.0 * h);
            assert!((fd - gg[f]).abs() < 1e-7, "{fd} vs {}", gg[f]);
        }
        for i in 0..16 {
            let (mut p, mut m) = (x.clone(), x.clone());
            p.data_mut()[i] += h;
            m.data_mut()[i] -= h;
            let fd = (loss(&lss, &p) - loss(&lss, &m)) / (2.0 * h);
            assert!((fd - gx.data()[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn rejects_feature_mismatch() {
        let x = DenseTensor::zeros(vec![1, 3, 4]);
        assert!(lss_filter(&LssParams::new(vec![0.0; 2]).unwrap(), &x).is_err());
        assert!(LssParams::new(vec![f64::NAN]).is_err());
    }
}
