//! Spike-trial datasets: types, file format, downsampling, the synthetic
//! generator and train/val/test splits.

pub mod downsample;
pub mod format;
pub mod split;
pub mod synth;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spike::SpikeTensor;
use crate::tensor::DenseTensor;

pub use downsample::{downsample_events, downsample_maxpool};
pub use format::{load_dataset, parse_session, save_dataset, serialize_session};
pub use split::{make_split, Scenario, Split};
pub use synth::{generate_synthetic, BurstWindow, SessionShift, SynthConfig};

/// One trial as a sparse event list sorted by `(channel, time)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Trial {
    pub c: usize,
    pub t: usize,
    pub label: usize,
    pub session: String,
    events: Vec<(u32, u32)>,
}

impl Trial {
    /// Sorts and deduplicates `events`, then checks ranges.
    pub fn new(c: usize, t: usize, label: usize, session: impl Into<String>, mut events: Vec<(u32, u32)>) -> Result<Self> {
        events.sort_unstable();
        events.dedup();
        let trial = Self { c, t, label, session: session.into(), events };
        trial.check_ranges()?;
        Ok(trial)
    }

    /// Takes events that are already strictly ascending, as read from disk.
    pub(crate) fn from_sorted(c: usize, t: usize, label: usize, session: String, events: Vec<(u32, u32)>) -> Self {
        Self { c, t, label, session, events }
    }

    fn check_ranges(&self) -> Result<()> {
        if self.c == 0 || self.t == 0 {
            return Err(Error::InvalidArgument("trial extents must be positive".into()));
        }
        if let Some(&(ch, tm)) = self.events.iter().find(|&&(ch, tm)| ch as usize >= self.c || tm as usize >= self.t) {
            return Err(Error::InvalidArgument(format!("event ({ch}, {tm}) outside {}x{} trial", self.c, self.t)));
        }
        Ok(())
    }

    pub fn from_raster(x: &SpikeTensor, label: usize, session: impl Into<String>) -> Self {
        let mut events = Vec::with_capacity(x.count() as usize);
        for ch in 0..x.channels() {
            for (t, &v) in x.row(ch).iter().enumerate() {
                if v != 0 {
                    events.push((ch as u32, t as u32));
                }
            }
        }
        Self { c: x.channels(), t: x.steps(), label, session: session.into(), events }
    }

    pub fn to_raster(&self) -> SpikeTensor {
        let mut x = SpikeTensor::zeros(self.c, self.t).expect("validated extents");
        for &(ch, t) in &self.events {
            x.set(ch as usize, t as usize, true);
        }
        x
    }

    pub fn events(&self) -> &[(u32, u32)] {
        &self.events
    }

    pub fn spike_count(&self) -> usize {
        self.events.len()
    }
}

/// Dense `[B, C, T]` batch of trials sharing extents.
pub fn to_batch(trials: &[&Trial]) -> Result<DenseTensor> {
    let first = trials.first().ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    let (c, t) = (first.c, first.t);
    let mut data = vec![0.0; trials.len() * c * t];
    for (b, tr) in trials.iter().enumerate() {
        if tr.c != c || tr.t != t {
            return Err(Error::shape("to_batch", format!("trial {}x{} in a {c}x{t} batch", tr.c, tr.t)));
        }
        for &(ch, tm) in tr.events() {
            data[(b * c + ch as usize) * t + tm as usize] = 1.0;
        }
    }
    DenseTensor::new(vec![trials.len(), c, t], data)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Session {
    pub name: String,
    pub trials: Vec<Trial>,
}

impl Session {
    pub fn class_counts(&self, n_classes: usize) -> Vec<usize> {
        let mut counts = vec![0; n_classes];
        for t in &self.trials {
            if t.label < n_classes {
                counts[t.label] += 1;
            }
        }
        counts
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub n_classes: usize,
    pub c: usize,
    pub t: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<SynthConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SessionSet {
    pub meta: DatasetMeta,
    pub sessions: Vec<Session>,
}

impl SessionSet {
    /// Checks the shared extents and label alphabet of every trial.
    pub fn validate(&self) -> Result<()> {
        if self.sessions.is_empty() {
            return Err(Error::data("dataset", "no sessions"));
        }
        if self.meta.n_classes == 0 || self.meta.c == 0 || self.meta.t == 0 {
            return Err(Error::data("dataset", "n_classes, channels and time must be positive"));
        }
        let mut names = std::collections::HashSet::new();
        for s in &self.sessions {
            if !names.insert(s.name.as_str()) {
                return Err(Error::data(format!("session {}", s.name), "duplicate session name"));
            }
            for (i, t) in s.trials.iter().enumerate() {
                let loc = || format!("session {} trial {i}", s.name);
                if t.c != self.meta.c || t.t != self.meta.t {
                    return Err(Error::data(loc(), format!("extent {}x{} differs from dataset", t.c, t.t)));
                }
                if t.label >= self.meta.n_classes {
                    return Err(Error::data(loc(), format!("label {} >= {} classes", t.label, self.meta.n_classes)));
                }
                if t.session != s.name {
                    return Err(Error::data(loc(), format!("trial tagged with session `{}`", t.session)));
                }
                t.check_ranges().map_err(|e| Error::data(loc(), e.to_string()))?;
            }
        }
        Ok(())
    }

    /// Whether every session's class counts differ by at most one trial.
    pub fn is_balanced(&self) -> bool {
        self.sessions.iter().all(|s| {
            let counts = s.class_counts(self.meta.n_classes);
            let max = counts.iter().max().copied().unwrap_or(0);
            let min = counts.iter().min().copied().unwrap_or(0);
            max - min <= 1
        })
    }

    pub fn session(&self, name: &str) -> Option<&Session> {
        self.sessions.iter().find(|s| s.name == name)
    }

    pub fn n_trials(&self) -> usize {
        self.sessions.iter().map(|s| s.trials.len()).sum()
    }

    pub fn n_spikes(&self) -> usize {
        self.sessions.iter().flat_map(|s| &s.trials).map(Trial::spike_count).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raster_roundtrip() {
        let mut x = SpikeTensor::zeros(3, 5).unwrap();
        x.set(2, 4, true);
        x.set(0, 1, true);
        let tr = Trial::from_raster(&x, 1, "s");
        assert_eq!(tr.events(), &[(0, 1), (2, 4)]);
        assert_eq!(tr.to_raster(), x);
    }

    #[test]
    fn new_sorts_and_checks() {
        let tr = Trial::new(4, 4, 0, "s", vec![(3, 1), (0, 2), (3, 1)]).unwrap();
        assert_eq!(tr.events(), &[(0, 2), (3, 1)]);
        assert!(Trial::new(4, 4, 0, "s", vec![(4, 0)]).is_err());
    }

    #[test]
    fn batch_layout() {
        let a = Trial::new(2, 3, 0, "s", vec![(1, 2)]).unwrap();
        let b = Trial::new(2, 3, 1, "s", vec![(0, 0)]).unwrap();
        let x = to_batch(&[&a, &b]).unwrap();
        assert_eq!(x.shape(), &[2, 2, 3]);
        assert_eq!(x.data()[5], 1.0);
        assert_eq!(x.data()[6], 1.0);
        assert_eq!(x.count_nonzero(), 2);
    }
}
