//! Run configuration file: one TOML document with a section per module.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::arch::NetworkConfig;
use crate::augment::SpikeDropConfig;
use crate::data::{DatasetMeta, SynthConfig};
use crate::energy::{Counting, EnergyConstants};
use crate::error::{Error, Result};
use crate::training::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnergySection {
    pub e_mac_pj: f64,
    pub e_ac_pj: f64,
    pub counting: Counting,
    pub batch_size: usize,
}

impl Default for EnergySection {
    fn default() -> Self {
        let k = EnergyConstants::default();
        Self { e_mac_pj: k.e_mac_pj, e_ac_pj: k.e_ac_pj, counting: Counting::EventDriven, batch_size: 256 }
    }
}

impl EnergySection {
    pub fn constants(&self) -> EnergyConstants {
        EnergyConstants { e_mac_pj: self.e_mac_pj, e_ac_pj: self.e_ac_pj }
    }

    pub fn validate(&self) -> Result<()> {
        self.constants().validate()?;
        if self.batch_size == 0 {
            return Err(Error::config("energy.batch_size", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfigFile {
    pub data: SynthConfig,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub augment: SpikeDropConfig,
    pub energy: EnergySection,
}

impl RunConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config("config", e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::config("config", format!("cannot read {}: {e}", p.display())))?;
                Self::parse(&text)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.network.validate()?;
        self.train.validate()?;
        self.augment.validate(Some(self.network.t_in))?;
        self.energy.validate()
    }

    /// Takes the input extents and class count from a dataset.
    pub fn fit_to(&mut self, meta: &DatasetMeta) -> Result<()> {
        self.network.c_in = meta.c;
        self.network.t_in = meta.t;
        self.network.n_classes = meta.n_classes;
        self.network.validate()?;
        self.augment.validate(Some(meta.t))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("config", e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_all_defaults() {
        assert_eq!(RunConfigFile::parse("").unwrap(), RunConfigFile::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        let e = RunConfigFile::parse("[train]\nepoch = 3\n").unwrap_err();
        assert_eq!(e.exit_code(), 1);
        assert!(e.to_string().contains("epoch"), "{e}");
        assert!(RunConfigFile::parse("[trian]\n").is_err());
    }

    #[test]
    fn invalid_values_name_the_field() {
        let e = RunConfigFile::parse("[augment]\np_t = 1.5\n").unwrap_err();
        assert!(e.to_string().contains("p_t"), "{e}");
        let e = RunConfigFile::parse("[train]\ntarget_fraction = 1.0\n").unwrap_err();
        assert!(e.to_string().contains("target_fraction"), "{e}");
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = RunConfigFile::default();
        cfg.train.epochs = 7;
        cfg.train.target_session = Some("s1".into());
        cfg.network.lss_enabled = false;
        assert_eq!(RunConfigFile::parse(&cfg.to_toml().unwrap()).unwrap(), cfg);
    }
}
