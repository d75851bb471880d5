//! Operation-count specfiles and the cross-model energy table.

use serde::{Deserialize, Serialize};

use crate::arch::{ann_flops, Domain, LayerSpec, NetworkConfig};
use crate::energy::EnergyConstants;
use crate::error::{Error, Result};

pub const REFERENCE_SPECFILE: &str = include_str!("../../assets/reference_flops.toml");

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Specfile {
    /// Model the ratios are taken against; the last model when unset.
    #[serde(default)]
    pub reference: Option<String>,
    #[serde(default)]
    pub model: Vec<ModelSpec>,
}

/// A model given either by its per-inference counts or by a layer chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    #[serde(default)]
    pub mac: Option<f64>,
    #[serde(default)]
    pub ac: Option<f64>,
    #[serde(default)]
    pub layers: Option<Vec<LayerSpec>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlopsRow {
    pub model: String,
    pub mac: f64,
    pub ac: f64,
    pub energy_uj: f64,
    /// Energy relative to the reference model.
    pub ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlopsTable {
    pub reference: Option<String>,
    pub constants: EnergyConstants,
    pub rows: Vec<FlopsRow>,
}

pub const CSV_HEADER: &str = "model,mac,ac,energy_uJ,ratio";

pub fn parse_specfile(text: &str) -> Result<Specfile> {
    let spec: Specfile = toml::from_str(text).map_err(|e| Error::data("specfile", e.message().to_string()))?;
    for m in &spec.model {
        let counted = m.mac.is_some() || m.ac.is_some();
        if counted == m.layers.is_some() {
            return Err(Error::data(format!("specfile model `{}`", m.name), "give either mac/ac counts or layers"));
        }
        for v in [m.mac, m.ac].into_iter().flatten() {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::data(
                    format!("specfile model `{}`", m.name),
                    format!("count {v} must be finite and nonnegative"),
                ));
            }
        }
    }
    if let Some(r) = &spec.reference {
        if !spec.model.iter().any(|m| &m.name == r) {
            return Err(Error::data("specfile", format!("reference `{r}` is not a listed model")));
        }
    }
    Ok(spec)
}

/// Dense counts of a layer chain: spike-driven layers contribute AC, the rest MAC.
pub fn chain_counts(layers: &[LayerSpec]) -> Result<(f64, f64)> {
    let per_layer = ann_flops(layers)?;
    let (mut mac, mut ac) = (0u64, 0u64);
    for (spec, (_, n)) in layers.iter().zip(per_layer) {
        match spec.domain {
            Domain::Binary => ac += n,
            Domain::Real => mac += n,
        }
    }
    Ok((mac as f64, ac as f64))
}

/// Dense-equivalent model spec of a configured spiking network.
pub fn network_model(name: &str, cfg: &NetworkConfig) -> Result<ModelSpec> {
    Ok(ModelSpec { name: name.into(), mac: None, ac: None, layers: Some(cfg.layer_specs()?) })
}

pub fn tabulate(spec: &Specfile, k: &EnergyConstants) -> Result<FlopsTable> {
    k.validate()?;
    let mut rows = Vec::with_capacity(spec.model.len());
    for m in &spec.model {
        let (mac, ac) = match &m.layers {
            Some(layers) => {
                chain_counts(layers).map_err(|e| Error::data(format!("specfile model `{}`", m.name), e.to_string()))?
            }
            None => (m.mac.unwrap_or(0.0), m.ac.unwrap_or(0.0)),
        };
        let energy_uj = (mac * k.e_mac_pj + ac * k.e_ac_pj) * 1e-6;
        rows.push(FlopsRow { model: m.name.clone(), mac, ac, energy_uj, ratio: None });
    }
    let reference = spec.reference.clone().or_else(|| spec.model.last().map(|m| m.name.clone()));
    if let Some(r) = &reference {
        let e_ref = rows.iter().find(|row| &row.model == r).map(|row| row.energy_uj).unwrap_or(0.0);
        if e_ref > 0.0 {
            rows.iter_mut().for_each(|row| row.ratio = Some(row.energy_uj / e_ref));
        }
    }
    Ok(FlopsTable { reference, constants: k.clone(), rows })
}

impl FlopsTable {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{CSV_HEADER}\n");
        for r in &self.rows {
            let ratio = r.ratio.map(|v| v.to_string()).unwrap_or_default();
            s.push_str(&format!("{},{},{},{},{}\n", r.model, r.mac, r.ac, r.energy_uj, ratio));
        }
        s
    }
}
