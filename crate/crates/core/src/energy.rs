//! Energy accounting from operation tallies and spike counts.
//!
//! Attention arithmetic is the only MAC work in a spiking forward; every
//! spike-triggered accumulation is an AC. Per-op energies are held in whole
//! femtojoules so totals and the attention shift are exact integers;
//! microjoule figures are derived from them per single inference.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arch::{ForwardOptions, Network};
use crate::data::{to_batch, Trial};
use crate::error::{Error, Result};
use crate::ops::OpCounter;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnergyConstants {
    pub e_mac_pj: f64,
    pub e_ac_pj: f64,
}

impl Default for EnergyConstants {
    fn default() -> Self {
        Self { e_mac_pj: 4.6, e_ac_pj: 0.9 }
    }
}

impl EnergyConstants {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [("e_mac_pj", self.e_mac_pj), ("e_ac_pj", self.e_ac_pj)] {
            if !(v > 0.0 && v.is_finite() && v < 1e9) {
                return Err(Error::config(field, format!("{v} must be positive and finite")));
            }
        }
        Ok(())
    }

    pub fn mac_fj(&self) -> i128 {
        (self.e_mac_pj * 1000.0).round() as i128
    }

    pub fn ac_fj(&self) -> i128 {
        (self.e_ac_pj * 1000.0).round() as i128
    }
}

fn check_count(what: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{what} count {v} must be finite and nonnegative")))
    }
}

/// Energy in µJ when every listed operation is an accumulate.
pub fn energy_vanilla(flops_conv: &[f64], flops_fc: &[f64], k: &EnergyConstants) -> Result<f64> {
    let mut total = 0.0;
    for &v in flops_conv.iter().chain(flops_fc) {
        check_count("FLOPs", v)?;
        total += v;
    }
    Ok(total * k.e_ac_pj * 1e-6)
}

/// Energy in µJ of `macs` multiply-accumulates.
pub fn energy_mac(macs: f64, k: &EnergyConstants) -> Result<f64> {
    check_count("MAC", macs)?;
    Ok(macs * k.e_mac_pj * 1e-6)
}

/// Signed change in µJ: attention MACs added minus accumulations saved.
/// A negative `delta_ac` means attention caused extra accumulations.
pub fn energy_shift(delta_mac: f64, delta_ac: f64, k: &EnergyConstants) -> f64 {
    (k.e_mac_pj * delta_mac - k.e_ac_pj * delta_ac) * 1e-6
}

pub fn efficiency_ratio(e_vanilla: f64, delta_e: f64) -> Result<f64> {
    let denom = e_vanilla + delta_e;
    if !(denom > 0.0) {
        return Err(Error::InvalidArgument(format!("efficiency ratio denominator {denom} is not positive")));
    }
    Ok(e_vanilla / denom)
}

pub fn spiking_count(n_l: usize, t_l: usize, fr: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&fr) {
        return Err(Error::InvalidArgument(format!("firing rate {fr} outside [0, 1]")));
    }
    Ok(n_l as f64 * t_l as f64 * fr)
}

/// Spike tally of one neuron layer over a profiled trial set.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpikes {
    pub layer: String,
    pub n_l: usize,
    pub t_l: usize,
    pub spikes: u64,
}

/// Operation and spike totals over a set of trials.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Tally {
    pub n_trials: u64,
    pub counter: OpCounter,
    pub spikes: Vec<LayerSpikes>,
}

impl Tally {
    fn merge(mut self, other: Tally) -> Tally {
        self.n_trials += other.n_trials;
        self.counter.merge(&other.counter);
        for (a, b) in self.spikes.iter_mut().zip(other.spikes) {
            a.spikes += b.spikes;
        }
        self
    }
}

/// Per-layer firing rate `spikes / (n_l * t_l * trials)`.
pub fn nasar(spikes: &[LayerSpikes], n_trials: u64) -> Result<Vec<f64>> {
    if n_trials == 0 {
        return Err(Error::InvalidArgument("no trials profiled".into()));
    }
    Ok(spikes.iter().map(|s| s.spikes as f64 / (s.n_l as f64 * s.t_l as f64 * n_trials as f64)).collect())
}

/// Eval-mode instrumented inference over `trials`, batched and run in parallel.
pub fn tally(net: &Network, trials: &[&Trial], bypass_attention: bool, batch_size: usize) -> Result<Tally> {
    if trials.is_empty() {
        return Err(Error::InvalidArgument("profiling needs at least one trial".into()));
    }
    let opts = ForwardOptions { bypass_attention, ..ForwardOptions::eval() };
    let parts = trials
        .par_chunks(batch_size.max(1))
        .map(|chunk| {
            let x = to_batch(chunk)?;
            let mut counter = OpCounter::new();
            let out = net.forward(&x, opts, &mut crate::seeds::substream(0, 0), &mut counter)?;
            let spikes = out
                .probes
                .spikes
                .iter()
                .map(|r| LayerSpikes { layer: r.layer.clone(), n_l: r.neurons, t_l: r.steps, spikes: r.total() })
                .collect();
            Ok(Tally { n_trials: chunk.len() as u64, counter, spikes })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(parts.into_iter().reduce(Tally::merge).expect("at least one batch"))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Counting {
    /// One AC per accumulation actually triggered by an input spike.
    #[default]
    EventDriven,
    /// One AC per tap of a dense implementation, spikes or not.
    DenseEquivalent,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    /// The same network with its attention gate skipped.
    #[default]
    AttentionBypassed,
    /// A separately profiled network, such as an ablated variant.
    External,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerEnergy {
    pub layer: String,
    pub n_l: usize,
    pub t_l: usize,
    pub spikes: u64,
    pub fr: f64,
    pub sc: f64,
    pub nasar: f64,
    pub mac: f64,
    pub ac: f64,
    pub energy_uj: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub n_trials: u64,
    pub counting: Counting,
    pub baseline: Baseline,
    pub constants: EnergyConstants,
    pub layers: Vec<LayerEnergy>,
    /// Per-inference operation counts of the profiled network.
    pub total_mac: f64,
    pub total_ac: f64,
    pub network_nasar: f64,
    pub delta_mac: f64,
    pub delta_ac: f64,
    pub e_vanilla_uj: f64,
    pub e_att_uj: f64,
    pub delta_e_uj: f64,
    pub r_ee: f64,
    /// Exact energies summed over all profiled trials, in femtojoules.
    pub e_vanilla_fj: i64,
    pub e_att_fj: i64,
    pub delta_e_fj: i64,
}

pub const CSV_HEADER: &str = "layer,n_l,t_l,fr,sc,nasar,mac,ac,energy_uJ";

fn ac_of(counter: &OpCounter, layer: &str, counting: Counting) -> u64 {
    let ops = counter.get(layer);
    match counting {
        Counting::EventDriven => ops.ac,
        Counting::DenseEquivalent => ops.dense_ac,
    }
}

fn total_ac(counter: &OpCounter, counting: Counting) -> u64 {
    match counting {
        Counting::EventDriven => counter.ac_count(),
        Counting::DenseEquivalent => counter.dense_ac_count(),
    }
}

/// Combines a profiled network's tally with its baseline's.
pub fn build_report(
    att: &Tally,
    vanilla: &Tally,
    baseline: Baseline,
    k: &EnergyConstants,
    counting: Counting,
) -> Result<EnergyReport> {
    k.validate()?;
    if att.n_trials == 0 || att.n_trials != vanilla.n_trials {
        return Err(Error::InvalidArgument(format!(
            "profiled {} trials against a baseline of {}",
            att.n_trials, vanilla.n_trials
        )));
    }
    let n = att.n_trials;
    let per = |v: u64| v as f64 / n as f64;
    let to_i64 = |v: i128| i64::try_from(v).map_err(|_| Error::InvalidArgument("energy total overflows i64 femtojoules".into()));
    let rates = nasar(&att.spikes, n)?;
    let mut layers = Vec::new();
    for (name, ops) in att.counter.layers() {
        let ac = ac_of(&att.counter, name, counting);
        let spikes = att.spikes.iter().zip(&rates).find(|(s, _)| &s.layer == name);
        let (n_l, t_l, spikes, fr) = match spikes {
            Some((s, &fr)) => (s.n_l, s.t_l, s.spikes, fr),
            None => (0, 0, 0, 0.0),
        };
        let fj = ops.mac as i128 * k.mac_fj() + ac as i128 * k.ac_fj();
        layers.push(LayerEnergy {
            layer: name.clone(),
            n_l,
            t_l,
            spikes,
            fr,
            sc: per(spikes),
            nasar: fr,
            mac: per(ops.mac),
            ac: per(ac),
            energy_uj: fj as f64 / n as f64 * 1e-9,
        });
    }
    let (mac_a, ac_a) = (att.counter.mac_count() as i128, total_ac(&att.counter, counting) as i128);
    let (mac_v, ac_v) = (vanilla.counter.mac_count() as i128, total_ac(&vanilla.counter, counting) as i128);
    let e_att = mac_a * k.mac_fj() + ac_a * k.ac_fj();
    let e_van = mac_v * k.mac_fj() + ac_v * k.ac_fj();
    let d_mac = mac_a - mac_v;
    let d_ac = ac_v - ac_a;
    let d_e = d_mac * k.mac_fj() - d_ac * k.ac_fj();
    if e_van + d_e != e_att {
        return Err(Error::Invariant("energy accounting does not close".into()));
    }
    let uj = |fj: i128| fj as f64 / n as f64 * 1e-9;
    let e_vanilla_uj = uj(e_van);
    let delta_e_uj = uj(d_e);
    let neuron_steps: f64 = att.spikes.iter().map(|s| (s.n_l * s.t_l) as f64).sum::<f64>() * n as f64;
    let total_spikes: u64 = att.spikes.iter().map(|s| s.spikes).sum();
    Ok(EnergyReport {
        n_trials: n,
        counting,
        baseline,
        constants: k.clone(),
        layers,
        total_mac: per(mac_a as u64),
        total_ac: per(ac_a as u64),
        network_nasar: if neuron_steps > 0.0 { total_spikes as f64 / neuron_steps } else { 0.0 },
        delta_mac: d_mac as f64 / n as f64,
        delta_ac: d_ac as f64 / n as f64,
        e_vanilla_uj,
        e_att_uj: e_vanilla_uj + delta_e_uj,
        delta_e_uj,
        r_ee: if e_att > 0 { e_van as f64 / e_att as f64 } else { 1.0 },
        e_vanilla_fj: to_i64(e_van)?,
        e_att_fj: to_i64(e_att)?,
        delta_e_fj: to_i64(d_e)?,
    })
}

/// Profiles `net` against itself with the attention gate skipped.
pub fn profile(
    net: &Network,
    trials: &[&Trial],
    k: &EnergyConstants,
    counting: Counting,
    batch_size: usize,
) -> Result<EnergyReport> {
    let att = tally(net, trials, false, batch_size)?;
    let vanilla = tally(net, trials, true, batch_size)?;
    build_report(&att, &vanilla, Baseline::AttentionBypassed, k, counting)
}

/// Profiles `net` against a separately built baseline network.
pub fn profile_against(
    net: &Network,
    baseline: &Network,
    trials: &[&Trial],
    k: &EnergyConstants,
    counting: Counting,
    batch_size: usize,
) -> Result<EnergyReport> {
    let att = tally(net, trials, false, batch_size)?;
    let vanilla = tally(baseline, trials, false, batch_size)?;
    build_report(&att, &vanilla, Baseline::External, k, counting)
}

impl EnergyReport {
    /// Per-layer table with a header row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for l in &self.layers {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                l.layer, l.n_l, l.t_l, l.fr, l.sc, l.nasar, l.mac, l.ac, l.energy_uj
            ));
        }
        s
    }

    /// `e_att == e_vanilla + delta_e`, on the exact integer totals.
    pub fn closes(&self) -> bool {
        self.e_vanilla_fj as i128 + self.delta_e_fj as i128 == self.e_att_fj as i128
    }

    /// Firing rates of the four spiking layers, in order.
    pub fn spiking_nasar(&self) -> Vec<f64> {
        self.layers.iter().filter(|l| l.n_l > 0).map(|l| l.nasar).collect()
    }
}
