//! Surrogate-gradient training, evaluation and cross-session protocols.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arch::{argmax_rows, ForwardOptions, Network, NetworkConfig};
use crate::augment::{spikedrop_expand, SpikeDropConfig};
use crate::data::{make_split, to_batch, Scenario, SessionSet, Split, Trial};
use crate::error::{Error, Result};
use crate::ops::OpCounter;
use crate::optim::{Adam, AdamConfig};
use crate::seeds::{fnv1a, mix, substream};
use crate::spike::SpikeFn;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transfer {
    /// Train from scratch on source and target-train trials together.
    #[default]
    Pooled,
    /// Train on source trials, then continue on the target-train trials.
    FineTune,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam: AdamConfig,
    pub seed: u64,
    pub repeats: usize,
    pub scenario: Scenario,
    pub target_fraction: f64,
    /// Held-out session; every session in turn when unset.
    pub target_session: Option<String>,
    pub transfer: Transfer,
    pub fine_tune_epochs: usize,
    /// Stop after this many epochs without a validation improvement.
    pub patience: Option<usize>,
    pub spike_fn: SpikeFn,
    pub eval_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 64,
            learning_rate: 1e-3,
            adam: AdamConfig::default(),
            seed: 0,
            repeats: 5,
            scenario: Scenario::Supervised,
            target_fraction: 0.1,
            target_session: None,
            transfer: Transfer::Pooled,
            fine_tune_epochs: 0,
            patience: None,
            spike_fn: SpikeFn::Heaviside,
            eval_batch_size: 256,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be at least 1"));
        }
        if self.batch_size < 2 {
            return Err(Error::config("batch_size", "batch normalization needs at least 2 trials per batch"));
        }
        if self.repeats == 0 {
            return Err(Error::config("repeats", "must be at least 1"));
        }
        if self.eval_batch_size == 0 {
            return Err(Error::config("eval_batch_size", "must be at least 1"));
        }
        if !(self.target_fraction > 0.0 && self.target_fraction < 1.0) {
            return Err(Error::config("target_fraction", format!("{} outside (0, 1)", self.target_fraction)));
        }
        if self.patience == Some(0) {
            return Err(Error::config("patience", "must be at least 1"));
        }
        if self.transfer == Transfer::FineTune && self.fine_tune_epochs == 0 {
            return Err(Error::config("fine_tune_epochs", "fine-tuning needs at least one epoch"));
        }
        Ok(())
    }

    /// Target fraction handed to the splitter; none in the unsupervised scenario.
    pub fn split_fraction(&self) -> Option<f64> {
        (self.scenario == Scenario::Supervised).then_some(self.target_fraction)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Mean of per-class recall over classes present in the trials.
    pub balanced_accuracy: f64,
    pub accuracy: f64,
    pub per_class_accuracy: Vec<Option<f64>>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<u64>>,
}

/// Scores predictions against labels.
pub fn score(predictions: &[usize], labels: &[usize], n_classes: usize) -> Result<Evaluation> {
    if labels.is_empty() || predictions.len() != labels.len() {
        return Err(Error::InvalidArgument("evaluation needs matching, nonempty predictions and labels".into()));
    }
    let mut confusion = vec![vec![0u64; n_classes]; n_classes];
    for (&p, &y) in predictions.iter().zip(labels) {
        if p >= n_classes || y >= n_classes {
            return Err(Error::InvalidArgument(format!("class index out of range for {n_classes} classes")));
        }
        confusion[y][p] += 1;
    }
    let per_class: Vec<Option<f64>> = confusion
        .iter()
        .enumerate()
        .map(|(k, row)| {
            let n: u64 = row.iter().sum();
            (n > 0).then(|| row[k] as f64 / n as f64)
        })
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let correct: u64 = (0..n_classes).map(|k| confusion[k][k]).sum();
    Ok(Evaluation {
        balanced_accuracy: present.iter().sum::<f64>() / present.len() as f64,
        accuracy: correct as f64 / labels.len() as f64,
        per_class_accuracy: per_class,
        confusion,
    })
}

pub fn predict(net: &Network, trials: &[&Trial], batch_size: usize) -> Result<Vec<usize>> {
    let chunks = trials
        .chunks(batch_size.max(1))
        .map(|chunk| {
            let out = net.forward(&to_batch(chunk)?, ForwardOptions::eval(), &mut substream(0, 0), &mut OpCounter::new())?;
            Ok(argmax_rows(&out.logits))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(chunks.concat())
}

pub fn evaluate(net: &Network, trials: &[&Trial], batch_size: usize) -> Result<Evaluation> {
    if trials.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate on an empty trial set".into()));
    }
    let labels: Vec<usize> = trials.iter().map(|t| t.label).collect();
    score(&predict(net, trials, batch_size)?, &labels, net.config().n_classes)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepeatReport {
    pub repeat: usize,
    pub seed: u64,
    pub best_epoch: usize,
    pub val_accuracy: Option<f64>,
    pub test: Evaluation,
    pub loss_curve: Vec<EpochStats>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub target: String,
    pub scenario: Scenario,
    pub target_fraction: Option<f64>,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub n_target_train: usize,
    pub augmented: bool,
    pub repeats: Vec<RepeatReport>,
    /// Mean and sample standard deviation of the repeats' balanced test accuracy.
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub per_class_mean: Vec<Option<f64>>,
    /// Index into `repeats` of the run kept as the checkpoint.
    pub best_repeat: usize,
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 { (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    (mean, std)
}

impl RunReport {
    /// Recomputes the aggregate fields from the per-repeat entries.
    pub fn aggregates_consistent(&self) -> bool {
        let accs: Vec<f64> = self.repeats.iter().map(|r| r.test.balanced_accuracy).collect();
        mean_std(&accs) == (self.mean_accuracy, self.std_accuracy)
    }

    /// Loss curves of every repeat as CSV.
    pub fn loss_curve_csv(&self) -> String {
        let mut s = String::from("repeat,epoch,train_loss,train_accuracy,val_accuracy\n");
        for r in &self.repeats {
            for e in &r.loss_curve {
                let val = e.val_accuracy.map(|v| v.to_string()).unwrap_or_default();
                s.push_str(&format!("{},{},{},{},{}\n", r.repeat, e.epoch, e.train_loss, e.train_accuracy, val));
            }
        }
        s
    }
}

/// A trained network together with its report.
pub struct TrainedRun {
    pub report: RunReport,
    pub network: Network,
}

#[allow(clippy::too_many_arguments)]
fn run_epochs(
    net: &mut Network,
    adam: &mut Adam,
    train: &[&Trial],
    val: &[&Trial],
    cfg: &TrainConfig,
    seed: u64,
    epochs: std::ops::Range<usize>,
    curve: &mut Vec<EpochStats>,
    best: &mut Option<(f64, usize, Network)>,
) -> Result<()> {
    let opts = ForwardOptions { spike_fn: cfg.spike_fn, ..ForwardOptions::train() };
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut since_best = 0;
    for epoch in epochs {
        order.shuffle(&mut substream(seed, 1 + epoch as u64));
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut seen = 0usize;
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            // normalization statistics need two trials
            if idx.len() < 2 {
                continue;
            }
            let batch: Vec<&Trial> = idx.iter().map(|&i| train[i]).collect();
            let labels: Vec<usize> = batch.iter().map(|t| t.label).collect();
            let x = to_batch(&batch)?;
            let mut rng = substream(seed, ((epoch as u64 + 1) << 32) | bi as u64);
            let (loss, grads, out) = net.loss_and_grads(&x, &labels, opts, &mut rng, &mut OpCounter::new())?;
            if !loss.is_finite() {
                return Err(Error::Invariant(format!("non-finite loss at epoch {epoch}")));
            }
            adam.step(net.params_mut(), &grads);
            net.commit_running_stats(&out)?;
            loss_sum += loss * batch.len() as f64;
            seen += batch.len();
            correct += argmax_rows(&out.logits).iter().zip(&labels).filter(|(p, y)| p == y).count();
        }
        let val_accuracy = if val.is_empty() { None } else { Some(evaluate(net, val, cfg.eval_batch_size)?.balanced_accuracy) };
        curve.push(EpochStats {
            epoch,
            train_loss: loss_sum / seen.max(1) as f64,
            train_accuracy: correct as f64 / seen.max(1) as f64,
            val_accuracy,
        });
        // without validation data the last epoch is kept
        let score = val_accuracy.unwrap_or(f64::INFINITY);
        let improved = match best {
            None => true,
            Some((b, _, _)) => score > *b || val_accuracy.is_none(),
        };
        if improved {
            *best = Some((score, epoch, net.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.patience.is_some_and(|p| since_best >= p) {
                break;
            }
        }
    }
    Ok(())
}

fn train_repeat(
    net_cfg: &NetworkConfig,
    split: &Split,
    cfg: &TrainConfig,
    train: &[Trial],
    repeat: usize,
    seed: u64,
) -> Result<(RepeatReport, Network)> {
    let mut net = Network::build(net_cfg, seed)?;
    let mut adam = Adam::new(net.params(), cfg.learning_rate, cfg.adam.clone())?;
    let val: Vec<&Trial> = split.val.iter().collect();
    let mut curve = Vec::new();
    let mut best = None;
    match cfg.transfer {
        Transfer::Pooled => {
            let all: Vec<&Trial> = train.iter().collect();
            run_epochs(&mut net, &mut adam, &all, &val, cfg, seed, 0..cfg.epochs, &mut curve, &mut best)?;
        }
        Transfer::FineTune => {
            let (target, source): (Vec<&Trial>, Vec<&Trial>) = train.iter().partition(|t| t.session == split.target);
            run_epochs(&mut net, &mut adam, &source, &val, cfg, seed, 0..cfg.epochs, &mut curve, &mut best)?;
            if target.len() >= 2 {
                let (_, _, kept) = best.take().expect("at least one epoch ran");
                net = kept;
                let range = cfg.epochs..cfg.epochs + cfg.fine_tune_epochs;
                run_epochs(&mut net, &mut adam, &target, &val, cfg, seed, range, &mut curve, &mut best)?;
            }
        }
    }
    let (val_score, best_epoch, best_net) = best.ok_or_else(|| Error::Invariant("no epoch completed".into()))?;
    let test: Vec<&Trial> = split.test.iter().collect();
    let test = evaluate(&best_net, &test, cfg.eval_batch_size)?;
    let val_accuracy = val_score.is_finite().then_some(val_score);
    Ok((RepeatReport { repeat, seed, best_epoch, val_accuracy, test, loss_curve: curve }, best_net))
}

/// Trains `cfg.repeats` networks on one split, in parallel, and keeps the
/// one with the best validation accuracy. Augmentation, when given, expands
/// the whole training set in the unsupervised scenario and only the
/// target-session trials in the supervised one.
pub fn train(net_cfg: &NetworkConfig, split: &Split, cfg: &TrainConfig, augment: Option<&SpikeDropConfig>) -> Result<TrainedRun> {
    cfg.validate()?;
    net_cfg.validate()?;
    if split.test.is_empty() {
        return Err(Error::data("split", "empty test partition"));
    }
    let labels_ok = |t: &Trial| t.label < net_cfg.n_classes && t.c == net_cfg.c_in && t.t == net_cfg.t_in;
    if let Some(bad) = split.train.iter().chain(&split.val).chain(&split.test).find(|t| !labels_ok(t)) {
        return Err(Error::data(
            format!("session {}", bad.session),
            format!("trial ({}x{}, label {}) does not fit the network", bad.c, bad.t, bad.label),
        ));
    }
    let key = mix(cfg.seed, fnv1a(split.target.as_bytes()));
    let train_set = match augment {
        None => split.train.clone(),
        Some(aug) => {
            let aug = SpikeDropConfig { seed: mix(key, aug.seed), ..aug.clone() };
            match split.n_target_train {
                0 => spikedrop_expand(&split.train, &aug)?,
                _ => {
                    let (target, mut rest): (Vec<Trial>, Vec<Trial>) =
                        split.train.iter().cloned().partition(|t| t.session == split.target);
                    rest.extend(spikedrop_expand(&target, &aug)?);
                    rest
                }
            }
        }
    };
    let runs = (0..cfg.repeats)
        .into_par_iter()
        .map(|r| train_repeat(net_cfg, split, cfg, &train_set, r, mix(key, r as u64 + 1)))
        .collect::<Result<Vec<_>>>()?;
    let best_repeat = runs
        .iter()
        .enumerate()
        .max_by(|(ia, a), (ib, b)| {
            let va = a.0.val_accuracy.unwrap_or(0.0);
            let vb = b.0.val_accuracy.unwrap_or(0.0);
            va.total_cmp(&vb).then(ib.cmp(ia))
        })
        .map(|(i, _)| i)
        .expect("repeats >= 1");
    let accs: Vec<f64> = runs.iter().map(|(r, _)| r.test.balanced_accuracy).collect();
    let (mean_accuracy, std_accuracy) = mean_std(&accs);
    let n_classes = net_cfg.n_classes;
    let per_class_mean = (0..n_classes)
        .map(|k| {
            let v: Vec<f64> = runs.iter().filter_map(|(r, _)| r.test.per_class_accuracy[k]).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        })
        .collect();
    let mut runs = runs;
    let network = runs[best_repeat].1.clone();
    let repeats = runs.drain(..).map(|(r, _)| r).collect();
    let report = RunReport {
        target: split.target.clone(),
        scenario: if split.n_target_train > 0 { Scenario::Supervised } else { Scenario::Unsupervised },
        target_fraction: cfg.split_fraction(),
        n_train: train_set.len(),
        n_val: split.val.len(),
        n_test: split.test.len(),
        n_target_train: split.n_target_train,
        augmented: augment.is_some(),
        repeats,
        mean_accuracy,
        std_accuracy,
        per_class_mean,
        best_repeat,
    };
    Ok(TrainedRun { report, network })
}

/// Split and train for one held-out session.
pub fn train_target(
    set: &SessionSet,
    target: &str,
    net_cfg: &NetworkConfig,
    cfg: &TrainConfig,
    augment: Option<&SpikeDropConfig>,
) -> Result<TrainedRun> {
    cfg.validate()?;
    let split = make_split(set, cfg.scenario, target, cfg.split_fraction(), cfg.seed)?;
    train(net_cfg, &split, cfg, augment)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LosoReport {
    pub folds: Vec<RunReport>,
    /// Mean of the per-fold mean accuracies.
    pub grand_mean: f64,
}

/// One run per session held out as the target, in session-name order.
pub fn leave_one_session_out(
    set: &SessionSet,
    net_cfg: &NetworkConfig,
    cfg: &TrainConfig,
    augment: Option<&SpikeDropConfig>,
) -> Result<(LosoReport, Vec<Network>)> {
    if set.sessions.len() < 2 {
        return Err(Error::data("dataset", "leave-one-session-out needs at least 2 sessions"));
    }
    let mut names: Vec<&str> = set.sessions.iter().map(|s| s.name.as_str()).collect();
    names.sort_unstable();
    let mut folds = Vec::new();
    let mut nets = Vec::new();
    for name in names {
        let run = train_target(set, name, net_cfg, cfg, augment)?;
        folds.push(run.report);
        nets.push(run.network);
    }
    let grand_mean = folds.iter().map(|f| f.mean_accuracy).sum::<f64>() / folds.len() as f64;
    Ok((LosoReport { folds, grand_mean }, nets))
}
