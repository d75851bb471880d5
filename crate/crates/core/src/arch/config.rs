//! Network hyperparameters, symbolic layer descriptions and dense FLOPs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::Padding;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub c_in: usize,
    pub t_in: usize,
    pub n_classes: usize,
    pub k_temporal: usize,
    pub f_fusion: usize,
    pub pool1: usize,
    pub pool2: usize,
    pub dropout_p: f64,
    pub lss_enabled: bool,
    pub ca_enabled: bool,
    pub ca_reduction: usize,
    /// Padding of the layer-3 `(1, k_temporal)` convolution.
    pub temporal_padding: Padding,
    pub u_th: f64,
    pub v_reset: f64,
    pub surrogate_width: f64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            c_in: 80,
            t_in: 100,
            n_classes: 3,
            k_temporal: 64,
            f_fusion: 32,
            pool1: 2,
            pool2: 2,
            dropout_p: 0.5,
            lss_enabled: true,
            ca_enabled: true,
            ca_reduction: 4,
            temporal_padding: Padding::Same,
            u_th: 1.0,
            v_reset: 0.0,
            surrogate_width: 4.0,
            bn_momentum: 0.9,
            bn_eps: 1e-5,
        }
    }
}

/// Time extents after each stage of the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StageExtents {
    pub t1: usize,
    pub t2: usize,
    pub t3: usize,
}

impl NetworkConfig {
    pub fn ca_hidden(&self) -> usize {
        self.c_in / self.ca_reduction.max(1)
    }

    pub fn validate(&self) -> Result<StageExtents> {
        let positive = [
            ("c_in", self.c_in),
            ("t_in", self.t_in),
            ("n_classes", self.n_classes),
            ("k_temporal", self.k_temporal),
            ("f_fusion", self.f_fusion),
            ("pool1", self.pool1),
            ("pool2", self.pool2),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be at least 1"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::config("dropout_p", format!("{} outside [0, 1)", self.dropout_p)));
        }
        if self.ca_enabled && (self.ca_reduction == 0 || !self.c_in.is_multiple_of(self.ca_reduction)) {
            return Err(Error::config(
                "ca_reduction",
                format!("{} must divide the channel count {}", self.ca_reduction, self.c_in),
            ));
        }
        if self.surrogate_width <= 0.0 || !self.surrogate_width.is_finite() {
            return Err(Error::config("surrogate_width", "must be positive"));
        }
        if !(self.u_th > self.v_reset) {
            return Err(Error::config("u_th", "threshold must exceed v_reset"));
        }
        if !(0.0..1.0).contains(&self.bn_momentum) || !(self.bn_eps > 0.0) {
            return Err(Error::config("bn_momentum", "momentum must lie in [0, 1) and eps be positive"));
        }
        let t1 = self.t_in / self.pool1;
        if t1 == 0 {
            return Err(Error::Extent {
                layer: "layer1.pool".into(),
                detail: format!("t_in={} < pool1={}", self.t_in, self.pool1),
            });
        }
        let t2 = t1 / self.pool2;
        if t2 == 0 {
            return Err(Error::Extent { layer: "layer2.pool".into(), detail: format!("t={t1} < pool2={}", self.pool2) });
        }
        let t3 = match self.temporal_padding {
            Padding::Same => t2,
            Padding::Valid => {
                if t2 < self.k_temporal {
                    return Err(Error::Extent {
                        layer: "layer3.conv".into(),
                        detail: format!("valid kernel {} on t={t2}", self.k_temporal),
                    });
                }
                t2 - self.k_temporal + 1
            }
        };
        Ok(StageExtents { t1, t2, t3 })
    }

    /// Symbolic per-trial layer chain of the built network.
    pub fn layer_specs(&self) -> Result<Vec<LayerSpec>> {
        let e = self.validate()?;
        let (c, t, f, k) = (self.c_in, self.t_in, self.f_fusion, self.k_temporal);
        let mut v = Vec::new();
        let spec = |name: &str, kind, input, output, kernel, groups, domain| LayerSpec {
            name: name.to_string(),
            kind,
            input,
            output,
            kernel,
            groups,
            reduction: 1,
            domain,
        };
        use Domain::*;
        use LayerKind::*;
        v.push(spec("layer1.conv", Conv1d, [c, 1, t], [c, 1, t], [1, k], c, Binary));
        v.push(spec("layer1.bn", Bn, [c, 1, t], [c, 1, t], [1, 1], 1, Real));
        if self.ca_enabled {
            let mut a = spec("attention", Attention, [c, 1, t], [c, 1, t], [1, 1], 1, Real);
            a.reduction = self.ca_reduction;
            v.push(a);
        }
        v.push(spec("layer1.pool", Pool, [c, 1, t], [c, 1, e.t1], [1, self.pool1], 1, Real));
        v.push(spec("layer1.plif", Plif, [c, 1, e.t1], [c, 1, e.t1], [1, 1], 1, Real));
        v.push(spec("layer2.reshape", Reshape, [c, 1, e.t1], [1, c, e.t1], [1, 1], 1, Binary));
        v.push(spec("layer2.conv", Conv2d, [1, c, e.t1], [f, 1, e.t1], [c, 1], 1, Binary));
        v.push(spec("layer2.bn", Bn, [f, 1, e.t1], [f, 1, e.t1], [1, 1], 1, Real));
        v.push(spec("layer2.pool", Pool, [f, 1, e.t1], [f, 1, e.t2], [1, self.pool2], 1, Real));
        v.push(spec("layer2.plif", Plif, [f, 1, e.t2], [f, 1, e.t2], [1, 1], 1, Real));
        v.push(spec("layer3.conv", Conv2d, [f, 1, e.t2], [f, 1, e.t3], [1, k], 1, Binary));
        v.push(spec("layer3.bn", Bn, [f, 1, e.t3], [f, 1, e.t3], [1, 1], 1, Real));
        v.push(spec("layer3.plif", Plif, [f, 1, e.t3], [f, 1, e.t3], [1, 1], 1, Real));
        v.push(spec("layer4.conv", Conv2d, [f, 1, e.t3], [f, 1, e.t3], [1, 1], 1, Binary));
        v.push(spec("layer4.plif", Plif, [f, 1, e.t3], [f, 1, e.t3], [1, 1], 1, Real));
        v.push(spec("classifier.pool", Pool, [f, 1, e.t3], [f, 1, 1], [1, e.t3], 1, Binary));
        v.push(spec("classifier.fc", Fc, [f, 1, 1], [self.n_classes, 1, 1], [1, 1], 1, Real));
        Ok(v)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv1d,
    Conv2d,
    Fc,
    Bn,
    Pool,
    Attention,
    Plif,
    Reshape,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Binary,
    #[default]
    Real,
}

fn one() -> usize {
    1
}

fn unit_kernel() -> [usize; 2] {
    [1, 1]
}

/// One layer of a feed-forward chain; extents are per trial as
/// `[channels, height, width]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub input: [usize; 3],
    pub output: [usize; 3],
    #[serde(default = "unit_kernel")]
    pub kernel: [usize; 2],
    #[serde(default = "one")]
    pub groups: usize,
    #[serde(default = "one")]
    pub reduction: usize,
    #[serde(default)]
    pub domain: Domain,
}

impl LayerSpec {
    /// Dense multiply-accumulate count of one inference.
    pub fn dense_macs(&self) -> Result<u64> {
        let numel = |e: [usize; 3]| (e[0] * e[1] * e[2]) as u64;
        Ok(match self.kind {
            LayerKind::Conv1d | LayerKind::Conv2d => {
                let in_c = self.input[0];
                if self.groups == 0 || !in_c.is_multiple_of(self.groups) || !self.output[0].is_multiple_of(self.groups) {
                    return Err(Error::InvalidArgument(format!(
                        "layer `{}`: groups {} must divide channels {} and {}",
                        self.name, self.groups, in_c, self.output[0]
                    )));
                }
                numel(self.output) * (in_c / self.groups * self.kernel[0] * self.kernel[1]) as u64
            }
            LayerKind::Fc => numel(self.input) * numel(self.output),
            LayerKind::Attention => {
                let c = self.input[0] as u64;
                let r = self.reduction.max(1) as u64;
                2 * c * (c / r) + c
            }
            LayerKind::Bn | LayerKind::Pool | LayerKind::Plif | LayerKind::Reshape => 0,
        })
    }
}

/// Per-layer dense MAC counts of a chain whose extents line up.
pub fn ann_flops(specs: &[LayerSpec]) -> Result<Vec<(String, u64)>> {
    for pair in specs.windows(2) {
        if pair[0].output != pair[1].input {
            return Err(Error::InvalidArgument(format!(
                "layer `{}` input {:?} does not match `{}` output {:?}",
                pair[1].name, pair[1].input, pair[0].name, pair[0].output
            )));
        }
    }
    specs.iter().map(|s| Ok((s.name.clone(), s.dense_macs()?))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_extents() {
        let cfg = NetworkConfig::default();
        let e = cfg.validate().unwrap();
        assert_eq!(e, StageExtents { t1: 50, t2: 25, t3: 25 });
        let specs = cfg.layer_specs().unwrap();
        assert!(ann_flops(&specs).is_ok());
    }

    #[test]
    fn valid_temporal_conv_underflows_on_short_trials() {
        let cfg = NetworkConfig { temporal_padding: Padding::Valid, ..Default::default() };
        match cfg.validate() {
            Err(Error::Extent { layer, .. }) => assert_eq!(layer, "layer3.conv"),
            other => panic!("{other:?}"),
        }
        let long = NetworkConfig { temporal_padding: Padding::Valid, t_in: 400, ..Default::default() };
        assert_eq!(long.validate().unwrap().t3, 100 - 64 + 1);
    }

    #[test]
    fn pool_underflow_names_layer() {
        let cfg = NetworkConfig { t_in: 3, ..Default::default() };
        match cfg.validate() {
            Err(Error::Extent { layer, .. }) => assert_eq!(layer, "layer2.pool"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn reduction_must_divide_channels() {
        let cfg = NetworkConfig { c_in: 66, ..Default::default() };
        assert!(cfg.validate().is_err());
        let cfg = NetworkConfig { c_in: 66, ca_enabled: false, ..Default::default() };
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn single_fc_flops() {
        let fc = LayerSpec {
            name: "fc".into(),
            kind: LayerKind::Fc,
            input: [100, 1, 1],
            output: [3, 1, 1],
            kernel: [1, 1],
            groups: 1,
            reduction: 1,
            domain: Domain::Real,
        };
        assert_eq!(ann_flops(&[fc]).unwrap(), vec![("fc".to_string(), 300)]);
        assert!(ann_flops(&[]).unwrap().is_empty());
    }

    #[test]
    fn broken_chain_rejected() {
        let mut specs = NetworkConfig::default().layer_specs().unwrap();
        specs[3].input = [1, 2, 3];
        assert!(ann_flops(&specs).is_err());
    }
}
