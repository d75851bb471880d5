//! Fully connected transform, dropout and softmax cross-entropy.

use rand::Rng;

use super::conv::InputDomain;
use super::counter::OpCounter;
use crate::error::{Error, Result};
use crate::tensor::DenseTensor;

/// `[B, in] x [out, in]^T + bias -> [B, out]`.
pub fn linear(
    input: &DenseTensor,
    weight: &[f64],
    bias: Option<&[f64]>,
    out_features: usize,
    domain: InputDomain,
    counter: &mut OpCounter,
    layer: &str,
) -> Result<DenseTensor> {
    let s = input.shape();
    if s.len() != 2 {
        return Err(Error::shape("linear", format!("expected [B, in], got {s:?}")));
    }
    let (b, n_in) = (s[0], s[1]);
    if weight.len() != n_in * out_features {
        return Err(Error::shape("linear", format!("weight has {} values for {n_in}->{out_features}", weight.len())));
    }
    if let Some(bias) = bias {
        if bias.len() != out_features {
            return Err(Error::shape("linear", "bias length differs from output features"));
        }
    }
    let x = input.data();
    let mut out = vec![0.0; b * out_features];
    for bi in 0..b {
        let row = &x[bi * n_in..(bi + 1) * n_in];
        for o in 0..out_features {
            let w = &weight[o * n_in..(o + 1) * n_in];
            let dot: f64 = row.iter().zip(w).map(|(a, b)| a * b).sum();
            out[bi * out_features + o] = dot + bias.map_or(0.0, |bv| bv[o]);
        }
    }
    match domain {
        InputDomain::Binary => {
            let active = input.count_nonzero();
            counter.add_ac(layer, active * out_features as u64, (x.len() * out_features) as u64);
        }
        InputDomain::Real => counter.add_mac(layer, (x.len() * out_features) as u64),
    }
    DenseTensor::new(vec![b, out_features], out)
}

/// Returns `(dL/dinput, dL/dweight, dL/dbias)`.
pub fn linear_backward(input: &DenseTensor, weight: &[f64], grad_out: &DenseTensor) -> Result<(DenseTensor, Vec<f64>, Vec<f64>)> {
    let (b, n_in) = (input.shape()[0], input.shape()[1]);
    let n_out = grad_out.shape().get(1).copied().unwrap_or(0);
    if grad_out.shape() != [b, n_out] || weight.len() != n_in * n_out {
        return Err(Error::shape("linear_backward", format!("grad {:?} for input {:?}", grad_out.shape(), input.shape())));
    }
    let x = input.data();
    let g = grad_out.data();
    let mut gx = vec![0.0; x.len()];
    let mut gw = vec![0.0; weight.len()];
    let mut gb = vec![0.0; n_out];
    for bi in 0..b {
        for o in 0..n_out {
            let go = g[bi * n_out + o];
            gb[o] += go;
            for i in 0..n_in {
                gw[o * n_in + i] += go * x[bi * n_in + i];
                gx[bi * n_in + i] += go * weight[o * n_in + i];
            }
        }
    }
    Ok((DenseTensor::new(input.shape().to_vec(), gx)?, gw, gb))
}

/// Inverted dropout. In train mode each element is kept with probability
/// `1 - p` and scaled by `1/(1 - p)`; the returned mask holds that scale
/// (or zero) per element. Eval mode is the identity.
pub fn dropout<R: Rng + ?Sized>(input: &DenseTensor, p: f64, train: bool, rng: &mut R) -> Result<(DenseTensor, Vec<f64>)> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("dropout probability {p} outside [0, 1)")));
    }
    if !train || p == 0.0 {
        return Ok((input.clone(), vec![1.0; input.len()]));
    }
    let keep = 1.0 / (1.0 - p);
    let mask: Vec<f64> = (0..input.len()).map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep }).collect();
    let out = input.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
    Ok((DenseTensor::new(input.shape().to_vec(), out)?, mask))
}

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. the logits.
pub fn softmax_xent(logits: &DenseTensor, labels: &[usize]) -> Result<(f64, DenseTensor)> {
    let s = logits.shape();
    if s.len() != 2 || s[0] != labels.len() {
        return Err(Error::shape("softmax_xent", format!("logits {s:?} for {} labels", labels.len())));
    }
    let (b, k) = (s[0], s[1]);
    if b == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let mut loss = 0.0;
    let mut grad = vec![0.0; b * k];
    for (bi, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(Error::InvalidArgument(format!("label {y} out of range for {k} classes")));
        }
        let row = &logits.data()[bi * k..(bi + 1) * k];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        loss += lse - row[y];
        for j in 0..k {
            let p = (row[j] - lse).exp();
            grad[bi * k + j] = (p - if j == y { 1.0 } else { 0.0 }) / b as f64;
        }
    }
    Ok((loss / b as f64, DenseTensor::new(vec![b, k], grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_logits_give_ln_k() {
        let l = DenseTensor::new(vec![2, 3], vec![0.5; 6]).unwrap();
        let (loss, _) = softmax_xent(&l, &[0, 2]).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn xent_shift_invariance() {
        let l = DenseTensor::new(vec![1, 4], vec![0.3, -1.2, 2.5, 0.0]).unwrap();
        let shifted = DenseTensor::new(vec![1, 4], l.data().iter().map(|v| v + 123.4).collect()).unwrap();
        let (a, ga) = softmax_xent(&l, &[1]).unwrap();
        let (b, gb) = softmax_xent(&shifted, &[1]).unwrap();
        assert!((a - b).abs() < 1e-12);
        for (x, y) in ga.data().iter().zip(gb.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn xent_rejects_bad_labels() {
        let l = DenseTensor::zeros(vec![1, 3]);
        assert!(softmax_xent(&l, &[3]).is_err());
        assert!(softmax_xent(&l, &[0, 1]).is_err());
    }

    #[test]
    fn dropout_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = DenseTensor::filled(vec![4, 50], 2.0);
        assert_eq!(dropout(&x, 0.0, true, &mut rng).unwrap().0, x);
        assert_eq!(dropout(&x, 0.7, false, &mut rng).unwrap().0, x);
        let (y, _) = dropout(&x, 0.5, true, &mut rng).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0 || v == 4.0));
        assert!(dropout(&x, 1.0, true, &mut rng).is_err());
        assert!(dropout(&x, -0.1, true, &mut rng).is_err());
    }

    #[test]
    fn linear_gradient_matches_finite_differences() {
        let x = DenseTensor::new(vec![2, 3], vec![0.1, -0.4, 0.9, 1.5, 0.3, -0.2]).unwrap();
        let w: Vec<f64> = (0..6).map(|i| (i as f64 * 0.7).sin()).collect();
        let bias = [0.05, -0.3];
        let labels = [1, 0];
        let loss = |x: &DenseTensor, w: &[f64], b: &[f64]| {
            let y = linear(x, w, Some(b), 2, InputDomain::Real, &mut OpCounter::new(), "fc").unwrap();
            softmax_xent(&y, &labels).unwrap().0
        };
        let y = linear(&x, &w, Some(&bias), 2, InputDomain::Real, &mut OpCounter::new(), "fc").unwrap();
        let (_, gy) = softmax_xent(&y, &labels).unwrap();
        let (gx, gw, gb) = linear_backward(&x, &w, &gy).unwrap();
        let h = 1e-6;
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-8);
        for i in 0..6 {
            let (mut wp, mut wm) = (w.clone(), w.clone());
            wp[i] += h;
            wm[i] -= h;
            assert!(rel((loss(&x, &wp, &bias) - loss(&x, &wm, &bias)) / (2.0 * h), gw[i]) < 1e-5);
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp.data_mut()[i] += h;
            xm.data_mut()[i] -= h;
            assert!(rel((loss(&xp, &w, &bias) - loss(&xm, &w, &bias)) / (2.0 * h), gx.data()[i]) < 1e-5);
        }
        for o in 0..2 {
            let (mut bp, mut bm) = (bias, bias);
            bp[o] += h;
            bm[o] -= h;
            assert!(rel((loss(&x, &w, &bp) - loss(&x, &w, &bm)) / (2.0 * h), gb[o]) < 1e-5);
        }
    }

    #[test]
    fn fc_op_count() {
        let x = DenseTensor::new(vec![1, 100], vec![1.0; 100]).unwrap();
        let mut c = OpCounter::new();
        linear(&x, &vec![0.0; 300], None, 3, InputDomain::Real, &mut c, "fc").unwrap();
        assert_eq!(c.get("fc").mac, 300);
    }
}
