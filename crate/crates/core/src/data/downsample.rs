//! Temporal max-pool downsampling of spike rasters.
//!
//! The window is `t_raw / t_out`; a remainder of fewer than `window` raw
//! steps at the end is dropped.

use crate::error::{Error, Result};
use crate::spike::SpikeTensor;

fn window(t_raw: usize, t_out: usize) -> Result<usize> {
    if t_out == 0 || t_out > t_raw {
        return Err(Error::InvalidArgument(format!("cannot downsample {t_raw} steps to {t_out}")));
    }
    Ok(t_raw / t_out)
}

pub fn downsample_maxpool(x: &SpikeTensor, t_out: usize) -> Result<SpikeTensor> {
    let w = window(x.steps(), t_out)?;
    let mut out = SpikeTensor::zeros(x.channels(), t_out)?;
    for ch in 0..x.channels() {
        let row = x.row(ch);
        for j in 0..t_out {
            if row[j * w..(j + 1) * w].iter().any(|&v| v != 0) {
                out.set(ch, j, true);
            }
        }
    }
    Ok(out)
}

/// Event-list form: maps raw `(channel, time)` events to the sorted,
/// deduplicated events of the pooled raster.
pub fn downsample_events(events: &[(u32, u32)], t_raw: usize, t_out: usize) -> Result<Vec<(u32, u32)>> {
    let w = window(t_raw, t_out)?;
    let mut out: Vec<(u32, u32)> =
        events.iter().filter(|&&(_, t)| (t as usize) < w * t_out).map(|&(c, t)| (c, (t as usize / w) as u32)).collect();
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_semantics() {
        let x = SpikeTensor::from_vec(1, 6, vec![0, 0, 0, 1, 1, 1]).unwrap();
        let y = downsample_maxpool(&x, 3).unwrap();
        assert_eq!(y.data(), &[0, 1, 1]);
        assert!(downsample_maxpool(&x, 7).is_err());
        assert!(downsample_maxpool(&x, 0).is_err());
    }

    #[test]
    fn remainder_truncated() {
        let x = SpikeTensor::from_vec(1, 7, vec![0, 0, 0, 0, 0, 0, 1]).unwrap();
        assert_eq!(downsample_maxpool(&x, 3).unwrap().count(), 0);
    }

    #[test]
    fn raw_resolution_window() {
        let mut x = SpikeTensor::zeros(2, 12000).unwrap();
        x.set(1, 119, true);
        x.set(1, 120, true);
        x.set(0, 11999, true);
        let y = downsample_maxpool(&x, 100).unwrap();
        assert!(y.get(1, 0) && y.get(1, 1) && y.get(0, 99));
        assert_eq!(y.count(), 3);
        let ev = downsample_events(&[(1, 119), (1, 120), (0, 11999)], 12000, 100).unwrap();
        assert_eq!(ev, vec![(0, 99), (1, 0), (1, 1)]);
    }
}
