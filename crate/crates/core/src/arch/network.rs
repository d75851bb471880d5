//! The four-layer spiking network and its forward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::attention::{channel_attention, AttentionNode, CaParams};
use super::config::{NetworkConfig, StageExtents};
use super::lss::{lss_filter, LssNode, LssParams};
use crate::error::{Error, Result};
use crate::ops::tape::{
    AvgPoolNode, BatchNormNode, ConvNode, DropoutNode, GlobalAvgPoolNode, LinearNode, PlifNode, ReshapeNode, ResidualAddNode,
    ResidualSaveNode,
};
use crate::ops::{
    avgpool_time, batchnorm_eval, batchnorm_train, conv1d, conv2d, dropout, global_avgpool, linear, softmax_xent, ConvGeom,
    GradientTape, Grads, InputDomain, OpCounter, Padding, ParamId, ParamStore,
};
use crate::spike::{plif_layer_forward, PlifParams, SpikeFn, SpikeTensor};
use crate::tensor::DenseTensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Mode {
    Train,
    #[default]
    Eval,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ForwardOptions {
    pub mode: Mode,
    pub spike_fn: SpikeFn,
    /// Skip the attention gate (equivalent to a gate of exactly 1).
    pub bypass_attention: bool,
    pub record_tape: bool,
}

impl ForwardOptions {
    pub fn eval() -> Self {
        Self::default()
    }

    pub fn train() -> Self {
        Self { mode: Mode::Train, record_tape: true, ..Self::default() }
    }
}

/// Output of one PLIF layer over the batch.
#[derive(Clone, Debug)]
pub struct SpikeRecord {
    pub layer: String,
    /// Neurons per trial.
    pub neurons: usize,
    pub steps: usize,
    /// `[B, ...]` spike values, time on the last axis.
    pub spikes: DenseTensor,
}

impl SpikeRecord {
    pub fn batch(&self) -> usize {
        self.spikes.shape()[0]
    }

    pub fn total(&self) -> u64 {
        self.spikes.count_nonzero()
    }

    pub fn per_trial(&self) -> Vec<u64> {
        let per = self.neurons * self.steps;
        self.spikes.data().chunks_exact(per).map(|c| c.iter().filter(|&&v| v != 0.0).count() as u64).collect()
    }
}

#[derive(Clone, Debug, Default)]
pub struct Probes {
    pub spikes: Vec<SpikeRecord>,
    /// `[B x C]` attention gates when the gate ran.
    pub gates: Option<Vec<f64>>,
    /// Per-trial `[channels, height, width]` after each named stage.
    pub extents: Vec<(String, [usize; 3])>,
    pub layer4_input: Option<DenseTensor>,
    /// Refine-conv output after LSS, before the residual add.
    pub layer4_synaptic: Option<DenseTensor>,
    pub layer4_pre_neuron: Option<DenseTensor>,
}

impl Probes {
    pub fn record(&self, layer: &str) -> Option<&SpikeRecord> {
        self.spikes.iter().find(|r| r.layer == layer)
    }
}

pub struct ForwardOutput {
    pub logits: DenseTensor,
    pub probes: Probes,
    pub tape: Option<GradientTape>,
    /// Batch `(mean, unbiased variance)` of each normalization layer in train mode.
    pub bn_stats: Vec<(Vec<f64>, Vec<f64>)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Slot {
    Param,
    Buffer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Init {
    Kaiming(usize),
    Zero,
    One,
}

struct Entry {
    name: String,
    shape: Vec<usize>,
    slot: Slot,
    init: Init,
}

fn geometries(cfg: &NetworkConfig) -> Result<[ConvGeom; 4]> {
    let (c, f, k) = (cfg.c_in, cfg.f_fusion, cfg.k_temporal);
    Ok([
        ConvGeom::new1d(c, c, k, 1, Padding::Same, c)?,
        ConvGeom::new2d(1, f, (c, 1), (1, 1), Padding::Valid, 1)?,
        ConvGeom::new2d(f, f, (1, k), (1, 1), cfg.temporal_padding, 1)?,
        ConvGeom::new2d(f, f, (1, 1), (1, 1), Padding::Valid, 1)?,
    ])
}

fn layout(cfg: &NetworkConfig) -> Result<Vec<Entry>> {
    let geoms = geometries(cfg)?;
    let mut v = Vec::new();
    let mut add = |name: String, shape: Vec<usize>, slot, init| v.push(Entry { name, shape, slot, init });
    let bn_features = [cfg.c_in, cfg.f_fusion, cfg.f_fusion];
    for (i, g) in geoms.iter().enumerate() {
        let l = i + 1;
        add(format!("layer{l}.conv.weight"), g.weight_shape().to_vec(), Slot::Param, Init::Kaiming(g.fan_in()));
        if l <= 3 {
            let n = bn_features[i];
            add(format!("layer{l}.bn.gamma"), vec![n], Slot::Param, Init::One);
            add(format!("layer{l}.bn.beta"), vec![n], Slot::Param, Init::Zero);
            add(format!("layer{l}.bn.running_mean"), vec![n], Slot::Buffer, Init::Zero);
            add(format!("layer{l}.bn.running_var"), vec![n], Slot::Buffer, Init::One);
        }
        if l == 1 && cfg.ca_enabled {
            let h = cfg.ca_hidden();
            add("attention.w1".into(), vec![h, cfg.c_in], Slot::Param, Init::Kaiming(cfg.c_in));
            add("attention.w2".into(), vec![cfg.c_in, h], Slot::Param, Init::Kaiming(h));
        }
        if l == 4 && cfg.lss_enabled {
            add("layer4.lss.g".into(), vec![cfg.f_fusion], Slot::Param, Init::Zero);
        }
        add(format!("layer{l}.plif.w"), vec![1], Slot::Param, Init::Zero);
    }
    add("classifier.fc.weight".into(), vec![cfg.n_classes, cfg.f_fusion], Slot::Param, Init::Kaiming(cfg.f_fusion));
    add("classifier.fc.bias".into(), vec![cfg.n_classes], Slot::Param, Init::Zero);
    Ok(v)
}

/// `(name, shape, slot)` of every stored block, in checkpoint order.
pub(crate) fn param_layout(cfg: &NetworkConfig) -> Result<Vec<(String, Vec<usize>, Slot)>> {
    Ok(layout(cfg)?.into_iter().map(|e| (e.name, e.shape, e.slot)).collect())
}

#[derive(Clone, Debug)]
struct Ids {
    conv: [ParamId; 4],
    gamma: [ParamId; 3],
    beta: [ParamId; 3],
    mean: [ParamId; 3],
    var: [ParamId; 3],
    plif: [ParamId; 4],
    ca: Option<(ParamId, ParamId)>,
    lss: Option<ParamId>,
    fc_w: ParamId,
    fc_b: ParamId,
}

#[derive(Clone, Debug)]
pub struct Network {
    cfg: NetworkConfig,
    extents: StageExtents,
    geoms: [ConvGeom; 4],
    params: ParamStore,
    buffers: ParamStore,
    ids: Ids,
}

fn extent(t: &DenseTensor) -> [usize; 3] {
    let s = t.shape();
    match s.len() {
        2 => [s[1], 1, 1],
        3 => [s[1], 1, s[2]],
        _ => [s[1], s[2], s[3]],
    }
}

impl Network {
    /// Builds a network with Kaiming-uniform conv/linear weights drawn from `seed`.
    pub fn build(cfg: &NetworkConfig, seed: u64) -> Result<Self> {
        let extents = cfg.validate()?;
        let geoms = geometries(cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut buffers = ParamStore::new();
        for e in layout(cfg)? {
            let n: usize = e.shape.iter().product();
            let values = match e.init {
                Init::Zero => vec![0.0; n],
                Init::One => vec![1.0; n],
                Init::Kaiming(fan_in) => {
                    let bound = (6.0 / fan_in as f64).sqrt();
                    (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
                }
            };
            match e.slot {
                Slot::Param => params.register(e.name, e.shape, values),
                Slot::Buffer => buffers.register(e.name, e.shape, values),
            };
        }
        let p = |name: &str| params.find(name).expect("layout registers every parameter");
        let b = |name: &str| buffers.find(name).expect("layout registers every buffer");
        let ids = Ids {
            conv: [1, 2, 3, 4].map(|l| p(&format!("layer{l}.conv.weight"))),
            gamma: [1, 2, 3].map(|l| p(&format!("layer{l}.bn.gamma"))),
            beta: [1, 2, 3].map(|l| p(&format!("layer{l}.bn.beta"))),
            mean: [1, 2, 3].map(|l| b(&format!("layer{l}.bn.running_mean"))),
            var: [1, 2, 3].map(|l| b(&format!("layer{l}.bn.running_var"))),
            plif: [1, 2, 3, 4].map(|l| p(&format!("layer{l}.plif.w"))),
            ca: cfg.ca_enabled.then(|| (p("attention.w1"), p("attention.w2"))),
            lss: cfg.lss_enabled.then(|| p("layer4.lss.g")),
            fc_w: p("classifier.fc.weight"),
            fc_b: p("classifier.fc.bias"),
        };
        Ok(Self { cfg: cfg.clone(), extents, geoms, params, buffers, ids })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.cfg
    }

    pub fn extents(&self) -> StageExtents {
        self.extents
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn buffers(&self) -> &ParamStore {
        &self.buffers
    }

    pub fn buffers_mut(&mut self) -> &mut ParamStore {
        &mut self.buffers
    }

    /// Parameter values by name, for tests and inspection.
    pub fn param(&self, name: &str) -> Option<&[f64]> {
        self.params.find(name).map(|id| self.params.get(id))
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        self.params.find(name).map(|id| self.params.get_mut(id))
    }

    pub fn plif_params(&self, layer: usize) -> PlifParams {
        PlifParams {
            w: self.params.get(self.ids.plif[layer - 1])[0],
            u_th: self.cfg.u_th,
            v_reset: self.cfg.v_reset,
            a: self.cfg.surrogate_width,
        }
    }

    /// Stacks trials into `[B, C, T]` and runs [`Network::forward`].
    pub fn forward_trials<R: Rng + ?Sized>(
        &self,
        trials: &[&SpikeTensor],
        opts: ForwardOptions,
        rng: &mut R,
        counter: &mut OpCounter,
    ) -> Result<ForwardOutput> {
        self.forward(&SpikeTensor::stack(trials)?, opts, rng, counter)
    }

    /// Runs the network on binary input `[B, C, T]`. Only dropout consumes `rng`.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        x: &DenseTensor,
        opts: ForwardOptions,
        rng: &mut R,
        counter: &mut OpCounter,
    ) -> Result<ForwardOutput> {
        let cfg = &self.cfg;
        let s = x.shape();
        if s.len() != 3 || s[1] != cfg.c_in || s[2] != cfg.t_in {
            return Err(Error::shape("forward", format!("input {s:?} does not match [B, {}, {}]", cfg.c_in, cfg.t_in)));
        }
        if !x.is_binary() {
            return Err(Error::InvalidArgument("network input must be a binary spike raster".into()));
        }
        let b = s[0];
        let train = opts.mode == Mode::Train;
        let relaxed = opts.spike_fn == SpikeFn::Relaxed;
        let spike_domain = if relaxed { InputDomain::Real } else { InputDomain::Binary };
        let mut tape = opts.record_tape.then(GradientTape::new);
        let mut probes = Probes::default();
        let mut bn_stats = Vec::new();
        let p = &self.params;

        macro_rules! push {
            ($node:expr) => {
                if let Some(t) = tape.as_mut() {
                    t.push($node);
                }
            };
        }

        let mut bn = |input: &DenseTensor, i: usize, tape: &mut Option<GradientTape>| -> Result<DenseTensor> {
            let (gamma, beta) = (p.get(self.ids.gamma[i]), p.get(self.ids.beta[i]));
            if train {
                let (out, cache) = batchnorm_train(input, gamma, beta, cfg.bn_eps)?;
                bn_stats.push((cache.mean.clone(), cache.var_unbiased.clone()));
                if let Some(t) = tape.as_mut() {
                    t.push(BatchNormNode { cache, gamma: self.ids.gamma[i], beta: self.ids.beta[i] });
                }
                Ok(out)
            } else {
                let (m, v) = (self.buffers.get(self.ids.mean[i]), self.buffers.get(self.ids.var[i]));
                batchnorm_eval(input, gamma, beta, m, v, cfg.bn_eps)
            }
        };

        let plif = |input: &DenseTensor, l: usize, tape: &mut Option<GradientTape>, probes: &mut Probes| {
            let params = self.plif_params(l);
            let steps = input.last_dim();
            let trace = plif_layer_forward(&params, input.data(), steps, opts.spike_fn)?;
            let out = DenseTensor::new(input.shape().to_vec(), trace.s.clone())?;
            probes.spikes.push(SpikeRecord {
                layer: format!("layer{l}"),
                neurons: input.len() / b / steps,
                steps,
                spikes: out.clone(),
            });
            if let Some(t) = tape.as_mut() {
                t.push(PlifNode { params, w: self.ids.plif[l - 1], trace, shape: input.shape().to_vec() });
            }
            Ok::<_, Error>(out)
        };

        // layer 1: depthwise temporal conv, BN, attention, pool, PLIF
        let mut h = conv1d(x, p.get(self.ids.conv[0]), &self.geoms[0], InputDomain::Binary, counter, "layer1")?;
        push!(ConvNode { input: x.clone(), geom: self.geoms[0], weight: self.ids.conv[0], need_input_grad: false });
        probes.extents.push(("layer1.conv".into(), extent(&h)));
        h = bn(&h, 0, &mut tape)?;
        probes.extents.push(("layer1.bn".into(), extent(&h)));
        if let Some((w1, w2)) = self.ids.ca {
            if opts.bypass_attention {
                counter.add_mac("attention", 0);
            } else {
                let ca = CaParams::new(cfg.c_in, cfg.ca_hidden(), p.get(w1).to_vec(), p.get(w2).to_vec())?;
                let (out, cache) = channel_attention(&ca, &h, counter, "attention")?;
                probes.gates = Some(cache.gate.clone());
                push!(AttentionNode { cache, w1, w2, channels: ca.channels, hidden: ca.hidden });
                h = out;
            }
            probes.extents.push(("attention".into(), extent(&h)));
        }
        push!(AvgPoolNode { input_shape: h.shape().to_vec(), window: cfg.pool1 });
        h = avgpool_time(&h, cfg.pool1)?;
        probes.extents.push(("layer1.pool".into(), extent(&h)));
        let s1 = plif(&h, 1, &mut tape, &mut probes)?;
        probes.extents.push(("layer1.plif".into(), extent(&s1)));

        // layer 2: channel fusion
        let t1 = self.extents.t1;
        push!(ReshapeNode { input_shape: s1.shape().to_vec() });
        let s1 = s1.reshape(vec![b, 1, cfg.c_in, t1])?;
        probes.extents.push(("layer2.reshape".into(), extent(&s1)));
        h = conv2d(&s1, p.get(self.ids.conv[1]), &self.geoms[1], spike_domain, counter, "layer2")?;
        push!(ConvNode { input: s1, geom: self.geoms[1], weight: self.ids.conv[1], need_input_grad: true });
        probes.extents.push(("layer2.conv".into(), extent(&h)));
        h = bn(&h, 1, &mut tape)?;
        probes.extents.push(("layer2.bn".into(), extent(&h)));
        push!(AvgPoolNode { input_shape: h.shape().to_vec(), window: cfg.pool2 });
        h = avgpool_time(&h, cfg.pool2)?;
        probes.extents.push(("layer2.pool".into(), extent(&h)));
        let s2 = plif(&h, 2, &mut tape, &mut probes)?;
        probes.extents.push(("layer2.plif".into(), extent(&s2)));

        // layer 3: temporal conv
        h = conv2d(&s2, p.get(self.ids.conv[2]), &self.geoms[2], spike_domain, counter, "layer3")?;
        push!(ConvNode { input: s2, geom: self.geoms[2], weight: self.ids.conv[2], need_input_grad: true });
        probes.extents.push(("layer3.conv".into(), extent(&h)));
        h = bn(&h, 2, &mut tape)?;
        probes.extents.push(("layer3.bn".into(), extent(&h)));
        let s3 = plif(&h, 3, &mut tape, &mut probes)?;
        probes.extents.push(("layer3.plif".into(), extent(&s3)));

        // layer 4: refine conv, LSS, identity shortcut
        push!(ResidualSaveNode);
        let syn = conv2d(&s3, p.get(self.ids.conv[3]), &self.geoms[3], spike_domain, counter, "layer4")?;
        push!(ConvNode { input: s3.clone(), geom: self.geoms[3], weight: self.ids.conv[3], need_input_grad: true });
        probes.extents.push(("layer4.conv".into(), extent(&syn)));
        let syn = match self.ids.lss {
            Some(g) => {
                let out = lss_filter(&LssParams { g: p.get(g).to_vec() }, &syn)?;
                push!(LssNode { input: syn, output: out.clone(), g });
                out
            }
            None => syn,
        };
        push!(ResidualAddNode);
        let mut pre = syn.clone();
        pre.add_assign(&s3)?;
        counter.add_ac("layer4", s3.count_nonzero(), s3.len() as u64);
        let s4 = plif(&pre, 4, &mut tape, &mut probes)?;
        probes.extents.push(("layer4.plif".into(), extent(&s4)));
        probes.layer4_input = Some(s3);
        probes.layer4_synaptic = Some(syn);
        probes.layer4_pre_neuron = Some(pre);

        // classifier
        let k = cfg.n_classes;
        let pooled = global_avgpool(&s4)?;
        push!(GlobalAvgPoolNode { input_shape: s4.shape().to_vec() });
        probes.extents.push(("classifier.pool".into(), extent(&pooled)));
        let (dropped, mask) = dropout(&pooled, cfg.dropout_p, train, rng)?;
        push!(DropoutNode { mask });
        let (fw, fb) = (p.get(self.ids.fc_w), p.get(self.ids.fc_b));
        let logits = linear(&dropped, fw, Some(fb), k, InputDomain::Real, &mut OpCounter::new(), "classifier")?;
        push!(LinearNode { input: dropped, weight: self.ids.fc_w, bias: Some(self.ids.fc_b) });
        probes.extents.push(("classifier.fc".into(), extent(&logits)));
        // pooling folds into the FC weights, so each layer-4 spike costs one AC per class
        if relaxed {
            counter.add_mac("classifier", (pooled.len() * k) as u64);
        } else {
            counter.add_ac("classifier", s4.count_nonzero() * k as u64, (s4.len() * k) as u64);
        }

        Ok(ForwardOutput { logits, probes, tape, bn_stats })
    }

    /// Forward with a tape, mean cross-entropy and parameter gradients.
    pub fn loss_and_grads<R: Rng + ?Sized>(
        &self,
        x: &DenseTensor,
        labels: &[usize],
        mut opts: ForwardOptions,
        rng: &mut R,
        counter: &mut OpCounter,
    ) -> Result<(f64, Grads, ForwardOutput)> {
        opts.record_tape = true;
        let mut out = self.forward(x, opts, rng, counter)?;
        let (loss, grad) = softmax_xent(&out.logits, labels)?;
        let tape = out.tape.take().ok_or(Error::EmptyTape)?;
        let grads = tape.backward(&self.params, grad)?;
        Ok((loss, grads, out))
    }

    /// Folds the batch statistics of a train-mode forward into the running estimates.
    pub fn commit_running_stats(&mut self, out: &ForwardOutput) -> Result<()> {
        if out.bn_stats.is_empty() {
            return Ok(());
        }
        if out.bn_stats.len() != 3 {
            return Err(Error::Invariant(format!("expected 3 normalization layers, got {}", out.bn_stats.len())));
        }
        let m = self.cfg.bn_momentum;
        for (i, (mean, var)) in out.bn_stats.iter().enumerate() {
            for (r, v) in self.buffers.get_mut(self.ids.mean[i]).iter_mut().zip(mean) {
                *r = m * *r + (1.0 - m) * v;
            }
            for (r, v) in self.buffers.get_mut(self.ids.var[i]).iter_mut().zip(var) {
                *r = m * *r + (1.0 - m) * v;
            }
        }
        Ok(())
    }

    /// Eval-mode class predictions.
    pub fn predict(&self, x: &DenseTensor, counter: &mut OpCounter) -> Result<Vec<usize>> {
        let out = self.forward(x, ForwardOptions::eval(), &mut ChaCha8Rng::seed_from_u64(0), counter)?;
        Ok(argmax_rows(&out.logits))
    }
}

pub fn argmax_rows(logits: &DenseTensor) -> Vec<usize> {
    let k = logits.last_dim();
    logits
        .data()
        .chunks_exact(k)
        .map(|row| {
            let mut best = 0;
            for (i, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> NetworkConfig {
        NetworkConfig { c_in: 8, t_in: 24, n_classes: 3, k_temporal: 5, f_fusion: 4, ..Default::default() }
    }

    fn raster(b: usize, cfg: &NetworkConfig, seed: u64, rate: f64) -> DenseTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = b * cfg.c_in * cfg.t_in;
        let data = (0..n).map(|_| if rng.gen::<f64>() < rate { 1.0 } else { 0.0 }).collect();
        DenseTensor::new(vec![b, cfg.c_in, cfg.t_in], data).unwrap()
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(1)
    }

    #[test]
    fn default_network_builds() {
        let net = Network::build(&NetworkConfig::default(), 0).unwrap();
        assert_eq!(net.extents(), StageExtents { t1: 50, t2: 25, t3: 25 });
        assert!(net.param("attention.w1").is_some());
    }

    #[test]
    fn ablation_removes_attention_parameters() {
        let cfg = NetworkConfig { ca_enabled: false, lss_enabled: false, ..small() };
        let net = Network::build(&cfg, 0).unwrap();
        assert!(net.params().ids().all(|id| !net.params().name(id).starts_with("attention")));
        assert!(net.param("layer4.lss.g").is_none());
        let mut c = OpCounter::new();
        net.forward(&raster(2, &cfg, 3, 0.2), ForwardOptions::eval(), &mut rng(), &mut c).unwrap();
        assert_eq!(c.get("attention").mac, 0);
    }

    #[test]
    fn zero_input_gives_zero_spikes() {
        let cfg = small();
        let net = Network::build(&cfg, 7).unwrap();
        let x = DenseTensor::zeros(vec![2, cfg.c_in, cfg.t_in]);
        for opts in [ForwardOptions::eval(), ForwardOptions::train()] {
            let out = net.forward(&x, opts, &mut rng(), &mut OpCounter::new()).unwrap();
            assert!(out.logits.all_finite());
            assert!(out.probes.spikes.iter().all(|r| r.total() == 0));
        }
    }

    #[test]
    fn duplicated_trials_give_duplicated_logits() {
        let cfg = small();
        let net = Network::build(&cfg, 2).unwrap();
        let one = raster(1, &cfg, 9, 0.3);
        let mut data = one.data().to_vec();
        data.extend_from_slice(one.data());
        let two = DenseTensor::new(vec![2, cfg.c_in, cfg.t_in], data).unwrap();
        let out = net.forward(&two, ForwardOptions::eval(), &mut rng(), &mut OpCounter::new()).unwrap();
        let l = out.logits.data();
        assert_eq!(&l[..3], &l[3..]);
    }

    #[test]
    fn symbolic_extents_match_runtime() {
        for cfg in [small(), NetworkConfig { ca_enabled: false, ..small() }, NetworkConfig::default()] {
            let net = Network::build(&cfg, 0).unwrap();
            let out = net.forward(&raster(1, &cfg, 1, 0.1), ForwardOptions::eval(), &mut rng(), &mut OpCounter::new()).unwrap();
            let specs = cfg.layer_specs().unwrap();
            let symbolic: Vec<(String, [usize; 3])> = specs.iter().map(|s| (s.name.clone(), s.output)).collect();
            let runtime: Vec<(String, [usize; 3])> = out.probes.extents.clone();
            assert_eq!(symbolic, runtime);
        }
    }

    #[test]
    fn residual_shortcut_is_identity_with_zero_refine_weights() {
        let cfg = small();
        let mut net = Network::build(&cfg, 4).unwrap();
        net.param_mut("layer4.conv.weight").unwrap().iter_mut().for_each(|w| *w = 0.0);
        let out = net.forward(&raster(2, &cfg, 5, 0.4), ForwardOptions::eval(), &mut rng(), &mut OpCounter::new()).unwrap();
        assert_eq!(out.probes.layer4_pre_neuron, out.probes.layer4_input);
    }

    #[test]
    fn lss_off_leaves_synaptic_input_untouched() {
        let cfg = NetworkConfig { lss_enabled: false, ..small() };
        let net = Network::build(&cfg, 4).unwrap();
        let out = net.forward(&raster(2, &cfg, 5, 0.4), ForwardOptions::eval(), &mut rng(), &mut OpCounter::new()).unwrap();
        let s3 = out.probes.layer4_input.as_ref().unwrap();
        let conv =
            conv2d(s3, net.param("layer4.conv.weight").unwrap(), &net.geoms[3], InputDomain::Real, &mut OpCounter::new(), "x")
                .unwrap();
        assert_eq!(out.probes.layer4_synaptic.as_ref().unwrap(), &conv);
    }

    #[test]
    fn gates_lie_in_open_unit_interval() {
        let cfg = small();
        let net = Network::build(&cfg, 8).unwrap();
        let out = net.forward(&raster(3, &cfg, 2, 0.5), ForwardOptions::eval(), &mut rng(), &mut OpCounter::new()).unwrap();
        assert!(out.probes.gates.unwrap().iter().all(|&g| g > 0.0 && g < 1.0));
    }

    #[test]
    fn spike_records_match_recount() {
        let cfg = small();
        let net = Network::build(&cfg, 5).unwrap();
        let out = net.forward(&raster(3, &cfg, 6, 0.4), ForwardOptions::eval(), &mut rng(), &mut OpCounter::new()).unwrap();
        for r in &out.probes.spikes {
            let recount = r.spikes.data().iter().filter(|&&v| v == 1.0).count() as u64;
            assert_eq!(r.total(), recount);
            assert_eq!(r.per_trial().iter().sum::<u64>(), recount);
            assert!(r.spikes.is_binary());
        }
    }

    #[test]
    fn rejects_mismatched_input() {
        let net = Network::build(&small(), 0).unwrap();
        let x = DenseTensor::zeros(vec![1, 7, 24]);
        assert!(net.forward(&x, ForwardOptions::eval(), &mut rng(), &mut OpCounter::new()).is_err());
        let x = DenseTensor::filled(vec![1, 8, 24], 0.5);
        assert!(net.forward(&x, ForwardOptions::eval(), &mut rng(), &mut OpCounter::new()).is_err());
    }

    #[test]
    fn eval_is_deterministic() {
        let cfg = small();
        let net = Network::build(&cfg, 3).unwrap();
        let x = raster(2, &cfg, 4, 0.3);
        let a = net.forward(&x, ForwardOptions::eval(), &mut rng(), &mut OpCounter::new()).unwrap();
        let b = net.forward(&x, ForwardOptions::eval(), &mut ChaCha8Rng::seed_from_u64(99), &mut OpCounter::new()).unwrap();
        assert_eq!(a.logits, b.logits);
    }

    #[test]
    fn relaxed_gradients_match_finite_differences() {
        let cfg = NetworkConfig { c_in: 4, t_in: 16, f_fusion: 4, k_temporal: 5, ..Default::default() };
        let mut net = Network::build(&cfg, 21).unwrap();
        let x = raster(3, &cfg, 8, 0.4);
        let labels = [0, 2, 1];
        let opts = ForwardOptions { mode: Mode::Train, spike_fn: SpikeFn::Relaxed, ..Default::default() };
        let loss = |net: &Network| {
            let out = net.forward(&x, opts, &mut rng(), &mut OpCounter::new()).unwrap();
            softmax_xent(&out.logits, &labels).unwrap().0
        };
        let (_, grads, _) = net.loss_and_grads(&x, &labels, opts, &mut rng(), &mut OpCounter::new()).unwrap();
        let h = 1e-5;
        let ids: Vec<ParamId> = net.params().ids().collect();
        for id in ids {
            let n = net.params().get(id).len();
            let mut fd = vec![0.0; n];
            for i in 0..n {
                let orig = net.params().get(id)[i];
                net.params_mut().get_mut(id)[i] = orig + h;
                let lp = loss(&net);
                net.params_mut().get_mut(id)[i] = orig - h;
                let lm = loss(&net);
                net.params_mut().get_mut(id)[i] = orig;
                fd[i] = (lp - lm) / (2.0 * h);
            }
            let an = grads.get(id);
            let diff: f64 = an.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let scale = an.iter().map(|a| a * a).sum::<f64>().sqrt().max(fd.iter().map(|a| a * a).sum::<f64>().sqrt());
            assert!(diff <= 1e-4 * scale.max(1e-10), "{}: {diff} vs {scale}", net.params().name(id));
        }
    }
}
