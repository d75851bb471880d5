//! Batch normalization over axis 1 of `[B, F, ...]`.

use super::counter::OpCounter;
use crate::error::{Error, Result};
use crate::tensor::DenseTensor;

pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// Owned batch-norm state: learnable scale/shift plus running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct BnParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BnParams {
    pub fn new(features: usize) -> Self {
        Self {
            gamma: vec![1.0; features],
            beta: vec![0.0; features],
            running_mean: vec![0.0; features],
            running_var: vec![1.0; features],
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
        }
    }
}

/// Saved values for the backward pass.
#[derive(Clone, Debug)]
pub struct BnCache {
    pub xhat: DenseTensor,
    pub inv_std: Vec<f64>,
    pub mean: Vec<f64>,
    /// Unbiased batch variance, used for the running estimate.
    pub var_unbiased: Vec<f64>,
}

fn check(input: &DenseTensor, gamma: &[f64], beta: &[f64]) -> Result<(usize, usize, usize)> {
    if input.rank() < 2 {
        return Err(Error::shape("batchnorm", format!("need [B, F, ...], got {:?}", input.shape())));
    }
    let (b, f, r) = input.split_bfr();
    if gamma.len() != f || beta.len() != f {
        return Err(Error::shape("batchnorm", format!("{f} features but {} scales / {} shifts", gamma.len(), beta.len())));
    }
    Ok((b, f, r))
}

/// Normalizes with batch statistics.
pub fn batchnorm_train(input: &DenseTensor, gamma: &[f64], beta: &[f64], eps: f64) -> Result<(DenseTensor, BnCache)> {
    let (b, f, r) = check(input, gamma, beta)?;
    if b < 2 {
        return Err(Error::InvalidArgument("batch normalization in train mode needs a batch of at least 2".into()));
    }
    let m = (b * r) as f64;
    let x = input.data();
    let mut mean = vec![0.0; f];
    let mut var = vec![0.0; f];
    for bi in 0..b {
        for fi in 0..f {
            let row = &x[(bi * f + fi) * r..(bi * f + fi + 1) * r];
            mean[fi] += row.iter().sum::<f64>();
        }
    }
    mean.iter_mut().for_each(|v| *v /= m);
    for bi in 0..b {
        for fi in 0..f {
            let row = &x[(bi * f + fi) * r..(bi * f + fi + 1) * r];
            var[fi] += row.iter().map(|v| (v - mean[fi]).powi(2)).sum::<f64>();
        }
    }
    let var_unbiased: Vec<f64> = var.iter().map(|v| v / (m - 1.0)).collect();
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v / m + eps).sqrt()).collect();
    let mut xhat = vec![0.0; x.len()];
    let mut out = vec![0.0; x.len()];
    for bi in 0..b {
        for fi in 0..f {
            let base = (bi * f + fi) * r;
            for i in base..base + r {
                let xh = (x[i] - mean[fi]) * inv_std[fi];
                xhat[i] = xh;
                out[i] = gamma[fi] * xh + beta[fi];
            }
        }
    }
    let shape = input.shape().to_vec();
    Ok((DenseTensor::new(shape.clone(), out)?, BnCache { xhat: DenseTensor::new(shape, xhat)?, inv_std, mean, var_unbiased }))
}

/// Normalizes with running statistics.
pub fn batchnorm_eval(
    input: &DenseTensor,
    gamma: &[f64],
    beta: &[f64],
    running_mean: &[f64],
    running_var: &[f64],
    eps: f64,
) -> Result<DenseTensor> {
    let (b, f, r) = check(input, gamma, beta)?;
    if running_mean.len() != f || running_var.len() != f {
        return Err(Error::shape("batchnorm", "running statistics do not match feature count"));
    }
    let x = input.data();
    let mut out = vec![0.0; x.len()];
    for bi in 0..b {
        for fi in 0..f {
            let scale = gamma[fi] / (running_var[fi] + eps).sqrt();
            let shift = beta[fi] - running_mean[fi] * scale;
            let base = (bi * f + fi) * r;
            for i in base..base + r {
                out[i] = x[i] * scale + shift;
            }
        }
    }
    DenseTensor::new(input.shape().to_vec(), out)
}

/// Exponential moving update of running statistics.
pub fn update_running(running_mean: &mut [f64], running_var: &mut [f64], cache: &BnCache, momentum: f64) {
    for (r, m) in running_mean.iter_mut().zip(&cache.mean) {
        *r = momentum * *r + (1.0 - momentum) * m;
    }
    for (r, v) in running_var.iter_mut().zip(&cache.var_unbiased) {
        *r = momentum * *r + (1.0 - momentum) * v;
    }
}

/// Convenience wrapper over the train/eval kernels. A counter, when given,
/// is charged one MAC per element; networks fold normalization into the
/// preceding convolution and pass `None`.
pub fn batchnorm(
    input: &DenseTensor,
    params: &mut BnParams,
    mode: BnMode,
    counter: Option<(&mut OpCounter, &str)>,
) -> Result<DenseTensor> {
    let out = match mode {
        BnMode::Train => {
            let (out, cache) = batchnorm_train(input, &params.gamma, &params.beta, params.eps)?;
            update_running(&mut params.running_mean, &mut params.running_var, &cache, params.momentum);
            out
        }
        BnMode::Eval => {
            batchnorm_eval(input, &params.gamma, &params.beta, &params.running_mean, &params.running_var, params.eps)?
        }
    };
    if let Some((counter, layer)) = counter {
        counter.add_mac(layer, input.len() as u64);
    }
    Ok(out)
}

/// Returns `(dL/dx, dL/dgamma, dL/dbeta)`.
pub fn batchnorm_backward(cache: &BnCache, gamma: &[f64], grad_out: &DenseTensor) -> Result<(DenseTensor, Vec<f64>, Vec<f64>)> {
    if grad_out.shape() != cache.xhat.shape() {
        return Err(Error::shape("batchnorm_backward", format!("{:?} vs {:?}", grad_out.shape(), cache.xhat.shape())));
    }
    let (b, f, r) = grad_out.split_bfr();
    let m = (b * r) as f64;
    let gy = grad_out.data();
    let xh = cache.xhat.data();
    let mut g_gamma = vec![0.0; f];
    let mut g_beta = vec![0.0; f];
    for bi in 0..b {
        for fi in 0..f {
            let base = (bi * f + fi) * r;
            for i in base..base + r {
                g_beta[fi] += gy[i];
                g_gamma[fi] += gy[i] * xh[i];
            }
        }
    }
    let mut gx = vec![0.0; gy.len()];
    for bi in 0..b {
        for fi in 0..f {
            let k = gamma[fi] * cache.inv_std[fi] / m;
            let base = (bi * f + fi) * r;
            for i in base..base + r {
                gx[i] = k * (m * gy[i] - g_beta[fi] - xh[i] * g_gamma[fi]);
            }
        }
    }
    Ok((DenseTensor::new(grad_out.shape().to_vec(), gx)?, g_gamma, g_beta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(seed: u64, shape: Vec<usize>) -> DenseTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        DenseTensor::new(shape, (0..n).map(|_| rng.gen_range(-2.0..3.0)).collect()).unwrap()
    }

    #[test]
    fn train_output_is_standardized() {
        let x = random(1, vec![4, 3, 10]);
        let (y, _) = batchnorm_train(&x, &[1.0; 3], &[0.0; 3], 0.0).unwrap();
        for fi in 0..3 {
            let vals: Vec<f64> = (0..4).flat_map(|b| y.data()[(b * 3 + fi) * 10..(b * 3 + fi + 1) * 10].to_vec()).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn eval_with_unit_stats_is_identity() {
        let x = random(2, vec![2, 3, 5]);
        let mut p = BnParams::new(3);
        p.eps = 0.0;
        let y = batchnorm(&x, &mut p, BnMode::Eval, None).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn batch_of_one_rejected_in_train_mode() {
        let x = random(3, vec![1, 3, 5]);
        let mut p = BnParams::new(3);
        assert!(batchnorm(&x, &mut p, BnMode::Train, None).is_err());
        assert!(batchnorm(&x, &mut p, BnMode::Eval, None).is_ok());
    }

    #[test]
    fn running_stats_move_toward_batch() {
        let x = random(4, vec![3, 2, 8]);
        let mut p = BnParams::new(2);
        let mut c = OpCounter::new();
        batchnorm(&x, &mut p, BnMode::Train, Some((&mut c, "bn"))).unwrap();
        let (_, cache) = batchnorm_train(&x, &[1.0; 2], &[0.0; 2], BN_EPS).unwrap();
        for fi in 0..2 {
            assert!((p.running_mean[fi] - 0.1 * cache.mean[fi]).abs() < 1e-12);
            assert!((p.running_var[fi] - (0.9 + 0.1 * cache.var_unbiased[fi])).abs() < 1e-12);
        }
        assert_eq!(c.get("bn").mac, 48);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let x = random(5, vec![3, 2, 4]);
        let gamma = [1.3, -0.7];
        let beta = [0.2, 0.5];
        let probe = random(6, vec![3, 2, 4]);
        let loss = |x: &DenseTensor, g: &[f64], b: &[f64]| -> f64 {
            let (y, _) = batchnorm_train(x, g, b, BN_EPS).unwrap();
            y.data().iter().zip(probe.data()).map(|(a, p)| a * p * a.sin()).sum()
        };
        let (y, cache) = batchnorm_train(&x, &gamma, &beta, BN_EPS).unwrap();
        let gy: Vec<f64> = y.data().iter().zip(probe.data()).map(|(a, p)| p * (a.sin() + a * a.cos())).collect();
        let gy = DenseTensor::new(y.shape().to_vec(), gy).unwrap();
        let (gx, gg, gb) = batchnorm_backward(&cache, &gamma, &gy).unwrap();
        let h = 1e-6;
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-3);
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let fd = (loss(&xp, &gamma, &beta) - loss(&xm, &gamma, &beta)) / (2.0 * h);
            assert!(rel(fd, gx.data()[i]) < 1e-5, "{fd} vs {}", gx.data()[i]);
        }
        for fi in 0..2 {
            let mut gp = gamma;
            gp[fi] += h;
            let mut gm = gamma;
            gm[fi] -= h;
            let fd = (loss(&x, &gp, &beta) - loss(&x, &gm, &beta)) / (2.0 * h);
            assert!(rel(fd, gg[fi]) < 1e-5);
            let mut bp = beta;
            bp[fi] += h;
            let mut bm = beta;
            bm[fi] -= h;
            let fd = (loss(&x, &gamma, &bp) - loss(&x, &gamma, &bm)) / (2.0 * h);
            assert!(rel(fd, gb[fi]) < 1e-5);
        }
    }
}
