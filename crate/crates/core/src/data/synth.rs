//! Synthetic multi-session spike datasets.
//!
//! Each channel fires with a per-output-bin probability set by the trial's
//! class: cosine tuning across channels (or an explicit rate table) scaled
//! by a gain inside the class's burst windows. Sessions differ by a
//! per-channel multiplicative drift and by silenced channels. Trials are
//! drawn at the raw resolution and max-pooled to `t_out` bins; the raw
//! per-step probability is chosen so a pooled bin fires with exactly the
//! configured probability.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::downsample::downsample_events;
use super::{DatasetMeta, Session, SessionSet, Trial};
use crate::error::{Error, Result};
use crate::seeds::substream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BurstWindow {
    pub class: usize,
    /// Output-bin interval `[start, end)`.
    pub start: usize,
    pub end: usize,
    pub gain: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SessionShift {
    pub drift_min: f64,
    pub drift_max: f64,
    pub channel_dropout: f64,
}

impl Default for SessionShift {
    fn default() -> Self {
        Self { drift_min: 0.8, drift_max: 1.25, channel_dropout: 0.05 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_sessions: usize,
    pub n_classes: usize,
    pub trials_per_class: usize,
    pub c: usize,
    pub t_raw: usize,
    pub t_out: usize,
    /// Mean per-bin firing probability of the cosine-tuned rates.
    pub base_rate: f64,
    /// Relative modulation of the cosine tuning, in `[0, 1]`.
    pub tuning_depth: f64,
    /// Explicit `[n_classes][c]` per-bin probabilities; overrides the tuning.
    pub base_rates: Option<Vec<Vec<f64>>>,
    pub bursts: Vec<BurstWindow>,
    pub shift: SessionShift,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_sessions: 3,
            n_classes: 3,
            trials_per_class: 150,
            c: 80,
            t_raw: 12000,
            t_out: 100,
            base_rate: 0.06,
            tuning_depth: 0.8,
            base_rates: None,
            bursts: (0..3).map(|k| BurstWindow { class: k, start: 10 + 25 * k, end: 30 + 25 * k, gain: 2.5 }).collect(),
            shift: SessionShift::default(),
            seed: 0,
        }
    }
}

/// Per-session shift draw.
#[derive(Clone, Debug, PartialEq)]
pub struct SessionProfile {
    pub drift: Vec<f64>,
    pub dropped: Vec<bool>,
}

const PROFILE_STREAM: u64 = u32::MAX as u64;

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_sessions", self.n_sessions),
            ("n_classes", self.n_classes),
            ("trials_per_class", self.trials_per_class),
            ("c", self.c),
            ("t_out", self.t_out),
        ];
        for (field, v) in counts {
            if v == 0 {
                return Err(Error::config(field, "must be at least 1"));
            }
        }
        if self.t_out > self.t_raw {
            return Err(Error::config("t_out", format!("{} exceeds t_raw {}", self.t_out, self.t_raw)));
        }
        if self.n_classes * self.trials_per_class >= PROFILE_STREAM as usize {
            return Err(Error::config("trials_per_class", "too many trials per session"));
        }
        let prob = |field: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::config(field, format!("{v} is not a probability")))
            }
        };
        prob("base_rate", self.base_rate)?;
        prob("tuning_depth", self.tuning_depth)?;
        prob("shift.channel_dropout", self.shift.channel_dropout)?;
        if let Some(rates) = &self.base_rates {
            if rates.len() != self.n_classes || rates.iter().any(|r| r.len() != self.c) {
                return Err(Error::config("base_rates", format!("expected {} rows of {} rates", self.n_classes, self.c)));
            }
            for &v in rates.iter().flatten() {
                prob("base_rates", v)?;
            }
        }
        for (i, b) in self.bursts.iter().enumerate() {
            let field = format!("bursts[{i}]");
            if b.class >= self.n_classes {
                return Err(Error::config(field, format!("class {} >= {}", b.class, self.n_classes)));
            }
            if b.start >= b.end || b.end > self.t_out {
                return Err(Error::config(field, format!("window [{}, {}) not inside [0, {})", b.start, b.end, self.t_out)));
            }
            if !(b.gain >= 0.0) || !b.gain.is_finite() {
                return Err(Error::config(field, "gain must be finite and nonnegative"));
            }
        }
        let s = &self.shift;
        if !(s.drift_min > 0.0 && s.drift_min <= s.drift_max && s.drift_max.is_finite()) {
            return Err(Error::config("shift.drift_min", "need 0 < drift_min <= drift_max"));
        }
        Ok(())
    }

    /// Class base probability of each channel, before bursts and drift.
    pub fn class_rates(&self, class: usize) -> Vec<f64> {
        if let Some(rates) = &self.base_rates {
            return rates[class].clone();
        }
        let k = self.n_classes as f64;
        (0..self.c)
            .map(|ch| {
                let phase = std::f64::consts::TAU * (ch as f64 / self.c as f64 - class as f64 / k);
                self.base_rate * (1.0 + self.tuning_depth * phase.cos())
            })
            .collect()
    }

    fn burst_gain(&self, class: usize, bin: usize) -> f64 {
        self.bursts.iter().filter(|b| b.class == class && (b.start..b.end).contains(&bin)).map(|b| b.gain).product()
    }

    pub fn session_profile(&self, session: usize) -> SessionProfile {
        let mut rng = substream(self.seed, ((session as u64) << 32) | PROFILE_STREAM);
        let drift = (0..self.c)
            .map(|_| {
                if self.shift.drift_min == self.shift.drift_max {
                    self.shift.drift_min
                } else {
                    rng.gen_range(self.shift.drift_min..self.shift.drift_max)
                }
            })
            .collect();
        let dropped = (0..self.c).map(|_| rng.gen::<f64>() < self.shift.channel_dropout).collect();
        SessionProfile { drift, dropped }
    }

    /// Per-bin firing probability, clamped to `[0, 1]`, laid out `[c][t_out]`.
    pub fn rate_table(&self, profile: &SessionProfile, class: usize) -> Vec<f64> {
        let base = self.class_rates(class);
        let mut table = vec![0.0; self.c * self.t_out];
        for ch in 0..self.c {
            if profile.dropped[ch] {
                continue;
            }
            for j in 0..self.t_out {
                table[ch * self.t_out + j] = (base[ch] * self.burst_gain(class, j) * profile.drift[ch]).clamp(0.0, 1.0);
            }
        }
        table
    }

    /// Whether every class would produce the same rate tables.
    pub fn is_degenerate(&self) -> bool {
        let probe = SessionProfile { drift: vec![1.0; self.c], dropped: vec![false; self.c] };
        let first = self.rate_table(&probe, 0);
        (1..self.n_classes).all(|k| self.rate_table(&probe, k) == first)
    }
}

/// Raw events of one channel: geometric gaps between successes of a
/// Bernoulli process whose per-step probability varies per output bin.
fn raw_channel_events<R: Rng>(rng: &mut R, ch: u32, bin_rates: &[f64], window: usize, out: &mut Vec<(u32, u32)>) {
    for (j, &p) in bin_rates.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        let start = j * window;
        if p >= 1.0 {
            out.push((ch, start as u32));
            continue;
        }
        // 1 - (1 - p_raw)^window = p
        let log_q = (1.0 - p).ln() / window as f64;
        let mut pos = 0usize;
        loop {
            let u: f64 = 1.0 - rng.gen::<f64>();
            let gap = (u.ln() / log_q).floor();
            if gap >= (window - pos) as f64 {
                break;
            }
            pos += gap as usize;
            out.push((ch, (start + pos) as u32));
            pos += 1;
            if pos >= window {
                break;
            }
        }
    }
}

fn generate_trial(cfg: &SynthConfig, table: &[f64], stream: u64, label: usize, session: &str) -> Result<Trial> {
    let mut rng = substream(cfg.seed, stream);
    let window = cfg.t_raw / cfg.t_out;
    let mut raw = Vec::new();
    for ch in 0..cfg.c {
        raw_channel_events(&mut rng, ch as u32, &table[ch * cfg.t_out..(ch + 1) * cfg.t_out], window, &mut raw);
    }
    let events = downsample_events(&raw, cfg.t_raw, cfg.t_out)?;
    Ok(Trial::from_sorted(cfg.c, cfg.t_out, label, session.to_string(), events))
}

pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SessionSet> {
    cfg.validate()?;
    let mut sessions = Vec::with_capacity(cfg.n_sessions);
    for s in 0..cfg.n_sessions {
        let name = format!("s{s}");
        let profile = cfg.session_profile(s);
        let tables: Vec<Vec<f64>> = (0..cfg.n_classes).map(|k| cfg.rate_table(&profile, k)).collect();
        let n = cfg.n_classes * cfg.trials_per_class;
        let trials = (0..n)
            .into_par_iter()
            .map(|i| {
                let label = i % cfg.n_classes;
                generate_trial(cfg, &tables[label], ((s as u64) << 32) | i as u64, label, &name)
            })
            .collect::<Result<Vec<_>>>()?;
        sessions.push(Session { name, trials });
    }
    let mut warnings = Vec::new();
    if cfg.is_degenerate() {
        warnings.push("degenerate: all classes share identical rates; labels carry no signal".to_string());
    }
    let set = SessionSet {
        meta: DatasetMeta { n_classes: cfg.n_classes, c: cfg.c, t: cfg.t_out, generator: Some(cfg.clone()), warnings },
        sessions,
    };
    set.validate()?;
    Ok(set)
}
