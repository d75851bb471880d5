//! SpikeDrop: sparsifying masks over spike rasters and dataset expansion.
//!
//! Three masks clear bits and never set them: single spikes
//! (time-point), every channel over one contiguous time segment, and whole
//! channels.

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Trial;
use crate::error::{Error, Result};
use crate::seeds::substream;
use crate::spike::SpikeTensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// Time-point, then segment, then channel masking on every copy.
    #[default]
    All,
    /// One of the three masks, chosen uniformly per copy.
    ChooseOne,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpikeDropConfig {
    pub p_t: f64,
    pub p_s: f64,
    pub p_c: f64,
    pub m_fraction: f64,
    /// Inclusive segment-length bounds, in time bins.
    pub segment_len_range: [usize; 2],
    pub mode: MaskMode,
    pub seed: u64,
}

impl Default for SpikeDropConfig {
    fn default() -> Self {
        Self { p_t: 0.1, p_s: 0.05, p_c: 0.1, m_fraction: 0.5, segment_len_range: [5, 20], mode: MaskMode::All, seed: 0 }
    }
}

fn check_prob(field: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::config(field, format!("{p} is not a probability")))
    }
}

fn check_range(range: [usize; 2], t: usize) -> Result<()> {
    let [lo, hi] = range;
    if lo == 0 || lo > hi || hi > t {
        return Err(Error::config("segment_len_range", format!("[{lo}, {hi}] invalid for T={t}")));
    }
    Ok(())
}

impl SpikeDropConfig {
    /// Checks probabilities and, when `t` is given, the segment bounds.
    pub fn validate(&self, t: Option<usize>) -> Result<()> {
        check_prob("p_t", self.p_t)?;
        check_prob("p_s", self.p_s)?;
        check_prob("p_c", self.p_c)?;
        if !(self.m_fraction >= 0.0) || !self.m_fraction.is_finite() {
            return Err(Error::config("m_fraction", "must be finite and nonnegative"));
        }
        check_range(self.segment_len_range, t.unwrap_or(usize::MAX))
    }

    /// Number of augmented copies for `n` source trials.
    pub fn copies(&self, n: usize) -> usize {
        (self.m_fraction * n as f64).round() as usize
    }
}

/// Masks of one augmentation; ones keep, zeros clear.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskTriple {
    /// `C x T`.
    pub m_t: SpikeTensor,
    /// Length `T`.
    pub m_s: Vec<u8>,
    /// Length `C`.
    pub m_c: Vec<u8>,
}

/// Drops each present spike independently with probability `p_t`.
pub fn mask_time_points<R: Rng + ?Sized>(x: &SpikeTensor, p_t: f64, rng: &mut R) -> Result<(SpikeTensor, SpikeTensor)> {
    check_prob("p_t", p_t)?;
    let mask: Vec<u8> = x.data().iter().map(|&v| u8::from(!(v != 0 && rng.gen::<f64>() < p_t))).collect();
    let mask = SpikeTensor::from_vec(x.channels(), x.steps(), mask)?;
    Ok((x.masked(mask.data()), mask))
}

/// Draws a length in `len_range` and a start, then with probability `p_s`
/// clears every channel over `[start, start + len)`.
pub fn mask_time_segment<R: Rng + ?Sized>(
    x: &SpikeTensor,
    p_s: f64,
    len_range: [usize; 2],
    rng: &mut R,
) -> Result<(SpikeTensor, Vec<u8>)> {
    check_prob("p_s", p_s)?;
    let t = x.steps();
    check_range(len_range, t)?;
    let len = rng.gen_range(len_range[0]..=len_range[1]);
    let start = rng.gen_range(0..=t - len);
    let mut m_s = vec![1u8; t];
    if rng.gen::<f64>() < p_s {
        m_s[start..start + len].iter_mut().for_each(|v| *v = 0);
    }
    let full: Vec<u8> = (0..x.channels()).flat_map(|_| m_s.iter().copied()).collect();
    Ok((x.masked(&full), m_s))
}

/// Clears each channel independently with probability `p_c`.
pub fn mask_channels<R: Rng + ?Sized>(x: &SpikeTensor, p_c: f64, rng: &mut R) -> Result<(SpikeTensor, Vec<u8>)> {
    check_prob("p_c", p_c)?;
    let m_c: Vec<u8> = (0..x.channels()).map(|_| u8::from(rng.gen::<f64>() >= p_c)).collect();
    let full: Vec<u8> = m_c.iter().flat_map(|&m| std::iter::repeat_n(m, x.steps())).collect();
    Ok((x.masked(&full), m_c))
}

/// Applies the configured masks to one raster.
pub fn spikedrop<R: Rng + ?Sized>(x: &SpikeTensor, cfg: &SpikeDropConfig, rng: &mut R) -> Result<(SpikeTensor, MaskTriple)> {
    let (c, t) = (x.channels(), x.steps());
    let ones = || SpikeTensor::from_vec(c, t, vec![1; c * t]);
    let choice = match cfg.mode {
        MaskMode::All => None,
        MaskMode::ChooseOne => Some(rng.gen_range(0..3)),
    };
    let run = |k: usize| choice.is_none_or(|c| c == k);
    let (y, m_t) = if run(0) { mask_time_points(x, cfg.p_t, rng)? } else { (x.clone(), ones()?) };
    let (y, m_s) = if run(1) { mask_time_segment(&y, cfg.p_s, cfg.segment_len_range, rng)? } else { (y, vec![1; t]) };
    let (y, m_c) = if run(2) { mask_channels(&y, cfg.p_c, rng)? } else { (y, vec![1; c]) };
    Ok((y, MaskTriple { m_t, m_s, m_c }))
}

/// Returns the originals followed by `M = round(m_fraction * N)` masked
/// copies. Sources are drawn without replacement when `M <= N`. Copy `i`
/// uses its own random substream, so results do not depend on scheduling.
pub fn spikedrop_expand(trials: &[Trial], cfg: &SpikeDropConfig) -> Result<Vec<Trial>> {
    let first = trials.first().ok_or_else(|| Error::InvalidArgument("cannot augment an empty dataset".into()))?;
    cfg.validate(Some(first.t))?;
    let n = trials.len();
    let m = cfg.copies(n);
    let mut pick = substream(cfg.seed, 0);
    let sources: Vec<usize> =
        if m <= n { sample(&mut pick, n, m).into_vec() } else { (0..m).map(|_| pick.gen_range(0..n)).collect() };
    let copies = sources
        .par_iter()
        .enumerate()
        .map(|(i, &src)| {
            let tr = &trials[src];
            let mut rng = substream(cfg.seed, 1 + i as u64);
            let (y, _) = spikedrop(&tr.to_raster(), cfg, &mut rng)?;
            Ok(Trial::from_raster(&y, tr.label, tr.session.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = trials.to_vec();
    out.extend(copies);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense(c: usize, t: usize, seed: u64) -> SpikeTensor {
        let mut rng = substream(seed, 9);
        SpikeTensor::from_vec(c, t, (0..c * t).map(|_| u8::from(rng.gen::<f64>() < 0.5)).collect()).unwrap()
    }

    #[test]
    fn degenerate_probabilities() {
        let x = dense(6, 30, 1);
        let mut rng = substream(0, 0);
        assert_eq!(mask_time_points(&x, 0.0, &mut rng).unwrap().0, x);
        assert_eq!(mask_time_points(&x, 1.0, &mut rng).unwrap().0.count(), 0);
        assert_eq!(mask_time_segment(&x, 0.0, [5, 20], &mut rng).unwrap().0, x);
        assert_eq!(mask_time_segment(&x, 1.0, [30, 30], &mut rng).unwrap().0.count(), 0);
        assert_eq!(mask_channels(&x, 0.0, &mut rng).unwrap().0, x);
        assert!(mask_channels(&x, 1.5, &mut rng).is_err());
        assert!(mask_time_segment(&x, 0.5, [5, 31], &mut rng).is_err());
    }

    #[test]
    fn time_point_mask_only_clears_spikes() {
        let x = dense(5, 40, 2);
        let (_, m) = mask_time_points(&x, 0.7, &mut substream(1, 0)).unwrap();
        for (xv, mv) in x.data().iter().zip(m.data()) {
            assert!(*mv == 1 || *xv == 1);
        }
    }

    #[test]
    fn segment_is_contiguous_and_channel_uniform() {
        let x = dense(4, 50, 3);
        let mut rng = substream(2, 0);
        for _ in 0..200 {
            let (y, m) = mask_time_segment(&x, 1.0, [5, 20], &mut rng).unwrap();
            let zeros: Vec<usize> = (0..50).filter(|&i| m[i] == 0).collect();
            assert!((5..=20).contains(&zeros.len()));
            assert!(zeros.windows(2).all(|w| w[1] == w[0] + 1));
            for ch in 0..4 {
                for &t in &zeros {
                    assert!(!y.get(ch, t));
                }
            }
        }
    }

    #[test]
    fn channel_rows_zero_or_identical() {
        let x = dense(20, 10, 4);
        let (y, m) = mask_channels(&x, 0.5, &mut substream(3, 0)).unwrap();
        for ch in 0..20 {
            if m[ch] == 0 {
                assert!(y.row(ch).iter().all(|&v| v == 0));
            } else {
                assert_eq!(y.row(ch), x.row(ch));
            }
        }
    }

    #[test]
    fn expansion_size_and_labels() {
        let trials: Vec<Trial> = (0..200).map(|i| Trial::from_raster(&dense(4, 30, i), (i % 3) as usize, "s")).collect();
        let out = spikedrop_expand(&trials, &SpikeDropConfig::default()).unwrap();
        assert_eq!(out.len(), 300);
        assert_eq!(&out[..200], &trials[..]);
        let zero = SpikeDropConfig { p_t: 0.0, p_s: 0.0, p_c: 0.0, ..Default::default() };
        let out = spikedrop_expand(&trials, &zero).unwrap();
        for copy in &out[200..] {
            assert!(trials.contains(copy));
        }
        let many = SpikeDropConfig { m_fraction: 2.5, ..Default::default() };
        assert_eq!(spikedrop_expand(&trials[..4], &many).unwrap().len(), 14);
        assert!(spikedrop_expand(&[], &SpikeDropConfig::default()).is_err());
    }

    #[test]
    fn choose_one_mode_is_sparsifying() {
        let x = dense(8, 30, 5);
        let cfg = SpikeDropConfig { mode: MaskMode::ChooseOne, p_t: 0.5, p_s: 1.0, p_c: 0.5, ..Default::default() };
        let mut rng = substream(4, 0);
        for _ in 0..50 {
            assert!(spikedrop(&x, &cfg, &mut rng).unwrap().0.is_subset_of(&x));
        }
    }
}
