//! Per-layer arithmetic tallies for energy accounting.

use serde::{Deserialize, Serialize};

/// Operation counts attributed to one layer.
///
/// `ac` counts accumulations actually triggered by input spikes; `dense_ac`
/// counts every accumulation the layer would perform if each input slot
/// carried a spike. Real-valued arithmetic goes to `mac`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerOps {
    pub mac: u64,
    pub ac: u64,
    pub dense_ac: u64,
}

impl LayerOps {
    fn merge(&mut self, other: &LayerOps) {
        self.mac += other.mac;
        self.ac += other.ac;
        self.dense_ac += other.dense_ac;
    }
}

/// Ordered map from layer name to [`LayerOps`]. Counts only grow until
/// [`OpCounter::reset`] is called.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct OpCounter {
    layers: Vec<(String, LayerOps)>,
}

impl OpCounter {
    pub fn new() -> Self {
        Self::default()
    }

    fn entry(&mut self, layer: &str) -> &mut LayerOps {
        let idx = match self.layers.iter().position(|(n, _)| n == layer) {
            Some(i) => i,
            None => {
                self.layers.push((layer.to_string(), LayerOps::default()));
                self.layers.len() - 1
            }
        };
        &mut self.layers[idx].1
    }

    pub fn add_mac(&mut self, layer: &str, n: u64) {
        self.entry(layer).mac += n;
    }

    pub fn add_ac(&mut self, layer: &str, ac: u64, dense_ac: u64) {
        let e = self.entry(layer);
        e.ac += ac;
        e.dense_ac += dense_ac;
    }

    pub fn get(&self, layer: &str) -> LayerOps {
        self.layers.iter().find(|(n, _)| n == layer).map(|(_, o)| *o).unwrap_or_default()
    }

    pub fn layers(&self) -> &[(String, LayerOps)] {
        &self.layers
    }

    pub fn mac_count(&self) -> u64 {
        self.layers.iter().map(|(_, o)| o.mac).sum()
    }

    pub fn ac_count(&self) -> u64 {
        self.layers.iter().map(|(_, o)| o.ac).sum()
    }

    pub fn dense_ac_count(&self) -> u64 {
        self.layers.iter().map(|(_, o)| o.dense_ac).sum()
    }

    /// Adds `other` layer by layer; layers new to `self` are appended in
    /// `other`'s order.
    pub fn merge(&mut self, other: &OpCounter) {
        for (name, ops) in &other.layers {
            self.entry(name).merge(ops);
        }
    }

    pub fn reset(&mut self) {
        self.layers.clear();
    }
}
