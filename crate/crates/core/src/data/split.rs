//! Cross-session train/validation/test partitions.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{SessionSet, Trial};
use crate::error::{Error, Result};
use crate::seeds::{fnv1a, mix, substream};

/// Share of the source trials held out for model selection.
pub const VAL_FRACTION: f64 = 0.1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Train on source sessions only; test on the whole target session.
    Unsupervised,
    /// Additionally train on a labeled fraction of the target session.
    #[default]
    Supervised,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub target: String,
    pub train: Vec<Trial>,
    pub val: Vec<Trial>,
    pub test: Vec<Trial>,
    /// Target-session trials included in `train`.
    pub n_target_train: usize,
}

/// Partitions `set` around `target`. Shuffles are keyed by the seed and the
/// target's name, and source trials are ordered by session name first, so
/// the result does not depend on the order sessions are listed in.
pub fn make_split(set: &SessionSet, scenario: Scenario, target: &str, fraction: Option<f64>, seed: u64) -> Result<Split> {
    let target_session =
        set.session(target).ok_or_else(|| Error::config("target_session", format!("no session named `{target}`")))?;
    let key = mix(seed, fnv1a(target.as_bytes()));

    let mut sources: Vec<&super::Session> = set.sessions.iter().filter(|s| s.name != target).collect();
    sources.sort_by(|a, b| a.name.cmp(&b.name));
    let mut source_trials: Vec<Trial> = sources.iter().flat_map(|s| s.trials.iter().cloned()).collect();
    if source_trials.is_empty() {
        return Err(Error::data("split", "no source-session trials to train on"));
    }
    source_trials.shuffle(&mut substream(key, 2));
    let n_val = (source_trials.len() as f64 * VAL_FRACTION).floor() as usize;
    let mut train = source_trials.split_off(n_val);
    let val = source_trials;

    let mut target_trials = target_session.trials.clone();
    if target_trials.is_empty() {
        return Err(Error::data("split", format!("target session `{target}` has no trials")));
    }
    let n_target_train = match scenario {
        Scenario::Unsupervised => 0,
        Scenario::Supervised => {
            let f = fraction.ok_or_else(|| Error::config("target_fraction", "required for supervised transfer"))?;
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::config("target_fraction", format!("{f} outside (0, 1)")));
            }
            target_trials.shuffle(&mut substream(key, 1));
            (f * target_trials.len() as f64).floor() as usize
        }
    };
    let test = target_trials.split_off(n_target_train);
    train.extend(target_trials);
    if train.is_empty() {
        return Err(Error::data("split", "empty training partition"));
    }
    Ok(Split { target: target.to_string(), train, val, test, n_target_train })
}
