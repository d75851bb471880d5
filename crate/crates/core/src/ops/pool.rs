//! Average pooling along time and global average pooling.
//!
//! Pooling arithmetic is not tallied: it folds into the neighbouring
//! convolution at deployment.

use crate::error::{Error, Result};
use crate::tensor::DenseTensor;

/// Non-overlapping mean over windows of the last axis. A remainder shorter
/// than `window` is dropped.
pub fn avgpool_time(input: &DenseTensor, window: usize) -> Result<DenseTensor> {
    if window == 0 {
        return Err(Error::InvalidArgument("pooling window must be positive".into()));
    }
    let t = input.last_dim();
    let t_out = t / window;
    if t_out == 0 {
        return Err(Error::shape("avgpool_time", format!("window {window} exceeds time extent {t}")));
    }
    let rows = input.len() / t;
    let x = input.data();
    let inv = 1.0 / window as f64;
    let mut out = Vec::with_capacity(rows * t_out);
    for r in 0..rows {
        let row = &x[r * t..(r + 1) * t];
        for j in 0..t_out {
            out.push(row[j * window..(j + 1) * window].iter().sum::<f64>() * inv);
        }
    }
    let mut shape = input.shape().to_vec();
    *shape.last_mut().expect("rank >= 1") = t_out;
    DenseTensor::new(shape, out)
}

pub fn avgpool_time_backward(input_shape: &[usize], window: usize, grad_out: &DenseTensor) -> Result<DenseTensor> {
    let t = *input_shape.last().ok_or_else(|| Error::shape("avgpool_time_backward", "rank 0"))?;
    let t_out = grad_out.last_dim();
    if t / window != t_out {
        return Err(Error::shape("avgpool_time_backward", "grad extent does not match pooling"));
    }
    let rows = grad_out.len() / t_out.max(1);
    let inv = 1.0 / window as f64;
    let mut gx = vec![0.0; rows * t];
    for r in 0..rows {
        for j in 0..t_out {
            let g = grad_out.data()[r * t_out + j] * inv;
            gx[r * t + j * window..r * t + (j + 1) * window].iter_mut().for_each(|v| *v = g);
        }
    }
    DenseTensor::new(input_shape.to_vec(), gx)
}

/// Mean over all axes after the feature axis: `[B, F, ...] -> [B, F]`.
pub fn global_avgpool(input: &DenseTensor) -> Result<DenseTensor> {
    if input.rank() < 3 {
        return Err(Error::shape("global_avgpool", format!("need [B, F, ...], got {:?}", input.shape())));
    }
    let (b, f, r) = input.split_bfr();
    let out = input.data().chunks_exact(r).map(|c| c.iter().sum::<f64>() / r as f64).collect();
    DenseTensor::new(vec![b, f], out)
}

pub fn global_avgpool_backward(input_shape: &[usize], grad_out: &DenseTensor) -> Result<DenseTensor> {
    let r: usize = input_shape.iter().skip(2).product();
    let inv = 1.0 / r as f64;
    let gx = grad_out.data().iter().flat_map(|&g| std::iter::repeat_n(g * inv, r)).collect();
    DenseTensor::new(input_shape.to_vec(), gx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_two() {
        let x = DenseTensor::new(vec![1, 1, 4], vec![0.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(avgpool_time(&x, 2).unwrap().data(), &[0.5, 1.0]);
    }

    #[test]
    fn full_window_is_global_mean() {
        let x = DenseTensor::new(vec![1, 2, 3], vec![1.0, 2.0, 3.0, 0.0, 0.0, 6.0]).unwrap();
        assert_eq!(avgpool_time(&x, 3).unwrap().data(), &[2.0, 2.0]);
        assert_eq!(global_avgpool(&x).unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn remainder_truncated_and_gets_no_gradient() {
        let x = DenseTensor::new(vec![1, 1, 5], vec![1.0, 3.0, 5.0, 7.0, 100.0]).unwrap();
        let y = avgpool_time(&x, 2).unwrap();
        assert_eq!(y.data(), &[2.0, 6.0]);
        let g = avgpool_time_backward(x.shape(), 2, &DenseTensor::new(vec![1, 1, 2], vec![1.0, 2.0]).unwrap()).unwrap();
        assert_eq!(g.data(), &[0.5, 0.5, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn rejects_zero_window() {
        let x = DenseTensor::zeros(vec![1, 1, 4]);
        assert!(avgpool_time(&x, 0).is_err());
        assert!(avgpool_time(&x, 5).is_err());
    }

    #[test]
    fn global_backward_spreads_evenly() {
        let g = global_avgpool_backward(&[1, 2, 1, 4], &DenseTensor::new(vec![1, 2], vec![4.0, 8.0]).unwrap()).unwrap();
        assert_eq!(g.data(), &[1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0]);
    }
}
