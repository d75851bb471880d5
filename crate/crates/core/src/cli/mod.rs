//! Command-line front end. Every command writes its reports atomically and
//! nothing else; reruns with the same inputs produce identical bytes.

pub mod config;
pub mod flops;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::arch::{read_checkpoint, write_checkpoint, Network};
use crate::augment::spikedrop_expand;
use crate::data::{generate_synthetic, load_dataset, make_split, save_dataset, Scenario, Session, SessionSet, Trial};
use crate::energy::{profile, profile_against, Counting, EnergyReport};
use crate::error::{Error, Result};
use crate::fsio::write_atomic;
use crate::seeds::{fnv1a, mix};
use crate::training::{evaluate, leave_one_session_out, train_target, LosoReport};
use config::RunConfigFile;
use flops::{network_model, parse_specfile, tabulate, REFERENCE_SPECFILE};

#[derive(Debug, Parser)]
#[command(name = "snn-bci", version, about = "Spiking neural network decoding of intracortical spike trains")]
pub struct Cli {
    /// Worker threads for repeats and profiling; 0 picks one per core.
    #[arg(long, global = true, env = "SNN_BCI_JOBS", default_value_t = 0)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic multi-session dataset.
    Synth {
        /// Run config; only its `[data]` table is used.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset directory to create.
        #[arg(long)]
        out: PathBuf,
        /// Overrides `data.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train on a dataset, one held-out target session or each in turn.
    Train {
        #[command(flatten)]
        io: DataIo,
        #[command(flatten)]
        train: TrainArgs,
        /// Disable local synaptic stabilization.
        #[arg(long)]
        no_lss: bool,
        /// Disable channel attention.
        #[arg(long)]
        no_ca: bool,
    },
    /// Balanced accuracy and confusion matrix of a checkpoint.
    Evaluate {
        /// Network checkpoint written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        sel: TrialSelection,
        /// JSON report path; printed to stdout when unset.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Event-driven operation and energy accounting of a checkpoint.
    Profile {
        /// Network checkpoint written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        sel: TrialSelection,
        /// Network profiled as the vanilla model instead of the attention-bypassed checkpoint.
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// Overrides `energy.counting`.
        #[arg(long, value_enum)]
        counting: Option<Counting>,
        /// Directory for energy.json and energy.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Operation counts and energy of declared models.
    Flops {
        /// Specfile; the bundled reference table when unset.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Run config supplying energy constants and the network for `--with-network`.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Append the configured network's dense-equivalent counts under this name.
        #[arg(long)]
        with_network: Option<String>,
        /// Directory for flops.json and flops.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Expand every session with SpikeDrop copies.
    Augment {
        /// Dataset directory or a single session file.
        #[arg(long)]
        data: PathBuf,
        /// Run config; only its `[augment]` table is used.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset directory to create.
        #[arg(long)]
        out: PathBuf,
        /// Overrides `augment.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train and profile the four LSS/CA variants on one target session.
    Ablation {
        #[command(flatten)]
        io: DataIo,
        #[command(flatten)]
        train: TrainArgs,
    },
}

#[derive(Debug, Args)]
pub struct DataIo {
    /// Run config (TOML); defaults apply when unset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory or a single session file.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrialSelection {
    /// Run config whose split settings pick the test partition.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory or a single session file.
    #[arg(long)]
    pub data: PathBuf,
    /// Use the test partition of this target's split; all trials when unset.
    #[arg(long)]
    pub target: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AugmentChoice {
    None,
    Spikedrop,
}

#[derive(Debug, Default, Args)]
pub struct TrainArgs {
    /// Held-out session; `train` runs every session in turn when unset.
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long, value_enum)]
    pub scenario: Option<Scenario>,
    /// Labeled share of the target session used for training (supervised only).
    #[arg(long)]
    pub target_fraction: Option<f64>,
    /// Expand the training set with SpikeDrop copies per the `[augment]` table.
    #[arg(long, value_enum)]
    pub augment: Option<AugmentChoice>,
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Overrides `train.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl TrainArgs {
    /// Applies the flags and reports whether augmentation is on.
    fn apply(&self, cfg: &mut RunConfigFile) -> Result<bool> {
        let t = &mut cfg.train;
        if let Some(v) = &self.target {
            t.target_session = Some(v.clone());
        }
        if let Some(v) = self.scenario {
            t.scenario = v;
        }
        if let Some(v) = self.target_fraction {
            t.target_fraction = v;
        }
        if let Some(v) = self.repeats {
            t.repeats = v;
        }
        if let Some(v) = self.epochs {
            t.epochs = v;
        }
        if let Some(v) = self.seed {
            t.seed = v;
        }
        cfg.validate()?;
        Ok(self.augment == Some(AugmentChoice::Spikedrop))
    }
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("--jobs: {e}")))?;
    pool.install(|| dispatch(cli.command))
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Synth { config, out, seed } => cmd_synth(config.as_deref(), &out, seed),
        Command::Train { io, train, no_lss, no_ca } => cmd_train(&io, &train, no_lss, no_ca),
        Command::Evaluate { checkpoint, sel, out } => cmd_evaluate(&checkpoint, &sel, out.as_deref()),
        Command::Profile { checkpoint, sel, baseline, counting, out } => {
            cmd_profile(&checkpoint, &sel, baseline.as_deref(), counting, &out)
        }
        Command::Flops { spec, config, with_network, out } => {
            cmd_flops(spec.as_deref(), config.as_deref(), with_network.as_deref(), &out)
        }
        Command::Augment { data, config, out, seed } => cmd_augment(&data, config.as_deref(), &out, seed),
        Command::Ablation { io, train } => cmd_ablation(&io, &train),
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn density(trials: &[Trial]) -> f64 {
    let slots: usize = trials.iter().map(|t| t.c * t.t).sum();
    let spikes: usize = trials.iter().map(Trial::spike_count).sum();
    if slots == 0 {
        0.0
    } else {
        spikes as f64 / slots as f64
    }
}

pub fn cmd_synth(config: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut cfg = RunConfigFile::load(config)?;
    if let Some(s) = seed {
        cfg.data.seed = s;
    }
    cfg.data.validate()?;
    let set = generate_synthetic(&cfg.data)?;
    save_dataset(&set, out)?;
    println!("{:<12} {:>7} {:>9} {:>9}", "session", "trials", "spikes", "rate");
    for s in &set.sessions {
        let spikes: usize = s.trials.iter().map(Trial::spike_count).sum();
        println!("{:<12} {:>7} {:>9} {:>9.4}", s.name, s.trials.len(), spikes, density(&s.trials));
    }
    for w in &set.meta.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

fn load_fitted(config: Option<&Path>, data: &Path) -> Result<(RunConfigFile, SessionSet)> {
    let mut cfg = RunConfigFile::load(config)?;
    let set = load_dataset(data)?;
    cfg.fit_to(&set.meta)?;
    Ok((cfg, set))
}

fn write_loso(out: &Path, cfg: &RunConfigFile, report: &LosoReport, nets: &[Network]) -> Result<()> {
    write_atomic(&out.join("config.toml"), cfg.to_toml()?.as_bytes())?;
    write_atomic(&out.join("report.json"), &to_json(report)?)?;
    for (fold, net) in report.folds.iter().zip(nets) {
        write_atomic(&out.join(format!("loss_curve_{}.csv", fold.target)), fold.loss_curve_csv().as_bytes())?;
        write_checkpoint(net, &out.join(format!("model_{}.ckpt", fold.target)))?;
    }
    Ok(())
}

fn print_folds(report: &LosoReport) {
    println!("{:<12} {:>9} {:>9}", "target", "mean", "std");
    for f in &report.folds {
        println!("{:<12} {:>9.4} {:>9.4}", f.target, f.mean_accuracy, f.std_accuracy);
    }
    println!("{:<12} {:>9.4}", "grand mean", report.grand_mean);
}

fn run_training(cfg: &RunConfigFile, set: &SessionSet, augment: bool) -> Result<(LosoReport, Vec<Network>)> {
    let aug = augment.then_some(&cfg.augment);
    match &cfg.train.target_session {
        Some(target) => {
            let run = train_target(set, target, &cfg.network, &cfg.train, aug)?;
            let grand_mean = run.report.mean_accuracy;
            Ok((LosoReport { folds: vec![run.report], grand_mean }, vec![run.network]))
        }
        None => leave_one_session_out(set, &cfg.network, &cfg.train, aug),
    }
}

pub fn cmd_train(io: &DataIo, args: &TrainArgs, no_lss: bool, no_ca: bool) -> Result<()> {
    let (mut cfg, set) = load_fitted(io.config.as_deref(), &io.data)?;
    let augment = args.apply(&mut cfg)?;
    if no_lss {
        cfg.network.lss_enabled = false;
    }
    if no_ca {
        cfg.network.ca_enabled = false;
    }
    let (report, nets) = run_training(&cfg, &set, augment)?;
    write_loso(&io.out, &cfg, &report, &nets)?;
    print_folds(&report);
    Ok(())
}

fn check_fits(net: &Network, set: &SessionSet) -> Result<()> {
    let c = net.config();
    if c.c_in != set.meta.c || c.t_in != set.meta.t || c.n_classes < set.meta.n_classes {
        return Err(Error::data(
            "checkpoint",
            format!(
                "network expects {}x{} trials with {} classes, dataset has {}x{} with {}",
                c.c_in, c.t_in, c.n_classes, set.meta.c, set.meta.t, set.meta.n_classes
            ),
        ));
    }
    Ok(())
}

/// Checkpoint, run config and the selected trials.
fn select(checkpoint: &Path, sel: &TrialSelection) -> Result<(Network, RunConfigFile, Vec<Trial>)> {
    let net = read_checkpoint(checkpoint)?;
    let cfg = RunConfigFile::load(sel.config.as_deref())?;
    let set = load_dataset(&sel.data)?;
    check_fits(&net, &set)?;
    let trials = match &sel.target {
        Some(target) => {
            let t = &cfg.train;
            make_split(&set, t.scenario, target, t.split_fraction(), t.seed)?.test
        }
        None => set.sessions.iter().flat_map(|s| s.trials.iter().cloned()).collect(),
    };
    if trials.is_empty() {
        return Err(Error::data("dataset", "no trials selected"));
    }
    Ok((net, cfg, trials))
}

pub fn cmd_evaluate(checkpoint: &Path, sel: &TrialSelection, out: Option<&Path>) -> Result<()> {
    let (net, cfg, trials) = select(checkpoint, sel)?;
    let refs: Vec<&Trial> = trials.iter().collect();
    let eval = evaluate(&net, &refs, cfg.train.eval_batch_size)?;
    let bytes = to_json(&eval)?;
    match out {
        Some(p) => write_atomic(p, &bytes)?,
        None => print!("{}", String::from_utf8_lossy(&bytes)),
    }
    Ok(())
}

fn print_energy(report: &EnergyReport) {
    println!("{:<12} {:>8} {:>12} {:>12} {:>12} {:>10}", "layer", "nasar", "sc", "mac", "ac", "uJ");
    for l in &report.layers {
        println!("{:<12} {:>8.4} {:>12.1} {:>12.1} {:>12.1} {:>10.5}", l.layer, l.nasar, l.sc, l.mac, l.ac, l.energy_uj);
    }
    println!(
        "e_vanilla {:.5} uJ  e_att {:.5} uJ  delta {:.5} uJ  r_EE {:.4}",
        report.e_vanilla_uj, report.e_att_uj, report.delta_e_uj, report.r_ee
    );
}

pub fn cmd_profile(
    checkpoint: &Path,
    sel: &TrialSelection,
    baseline: Option<&Path>,
    counting: Option<Counting>,
    out: &Path,
) -> Result<()> {
    let (net, cfg, trials) = select(checkpoint, sel)?;
    let refs: Vec<&Trial> = trials.iter().collect();
    let k = cfg.energy.constants();
    let counting = counting.unwrap_or(cfg.energy.counting);
    let report = match baseline {
        Some(p) => {
            let base = read_checkpoint(p)?;
            if (base.config().c_in, base.config().t_in) != (net.config().c_in, net.config().t_in) {
                return Err(Error::data("baseline checkpoint", "input extents differ from the profiled checkpoint"));
            }
            profile_against(&net, &base, &refs, &k, counting, cfg.energy.batch_size)?
        }
        None => profile(&net, &refs, &k, counting, cfg.energy.batch_size)?,
    };
    write_atomic(&out.join("energy.json"), &to_json(&report)?)?;
    write_atomic(&out.join("energy.csv"), report.to_csv().as_bytes())?;
    print_energy(&report);
    Ok(())
}

pub fn cmd_flops(spec: Option<&Path>, config: Option<&Path>, with_network: Option<&str>, out: &Path) -> Result<()> {
    let cfg = RunConfigFile::load(config)?;
    let text = match spec {
        Some(p) => std::fs::read_to_string(p).map_err(|e| Error::data(p.display().to_string(), e.to_string()))?,
        None => REFERENCE_SPECFILE.to_string(),
    };
    let mut specfile = parse_specfile(&text)?;
    if let Some(name) = with_network {
        if specfile.model.iter().any(|m| m.name == name) {
            return Err(Error::InvalidArgument(format!("model `{name}` already listed")));
        }
        specfile.model.push(network_model(name, &cfg.network)?);
    }
    let table = tabulate(&specfile, &cfg.energy.constants())?;
    write_atomic(&out.join("flops.json"), &to_json(&table)?)?;
    write_atomic(&out.join("flops.csv"), table.to_csv().as_bytes())?;
    println!("{:<20} {:>14} {:>14} {:>10} {:>9}", "model", "mac", "ac", "uJ", "ratio");
    for r in &table.rows {
        let ratio = r.ratio.map(|v| format!("{v:.2}x")).unwrap_or_default();
        println!("{:<20} {:>14.0} {:>14.0} {:>10.3} {:>9}", r.model, r.mac, r.ac, r.energy_uj, ratio);
    }
    Ok(())
}

pub fn cmd_augment(data: &Path, config: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut cfg = RunConfigFile::load(config)?;
    if let Some(s) = seed {
        cfg.augment.seed = s;
    }
    let set = load_dataset(data)?;
    cfg.augment.validate(Some(set.meta.t))?;
    let mut sessions = Vec::with_capacity(set.sessions.len());
    println!("{:<12} {:>7} {:>7} {:>9} {:>9}", "session", "before", "after", "density", "density'");
    for s in &set.sessions {
        let aug =
            crate::augment::SpikeDropConfig { seed: mix(cfg.augment.seed, fnv1a(s.name.as_bytes())), ..cfg.augment.clone() };
        let trials = spikedrop_expand(&s.trials, &aug)?;
        let added = &trials[s.trials.len()..];
        println!("{:<12} {:>7} {:>7} {:>9.4} {:>9.4}", s.name, s.trials.len(), trials.len(), density(&s.trials), density(added));
        sessions.push(Session { name: s.name.clone(), trials });
    }
    let mut meta = set.meta.clone();
    meta.generator = None;
    let out_set = SessionSet { meta, sessions };
    out_set.validate()?;
    save_dataset(&out_set, out)
}

const VARIANTS: [(&str, bool, bool); 4] =
    [("vanilla", false, false), ("lss", true, false), ("ca", false, true), ("lss_ca", true, true)];

#[derive(Debug, serde::Serialize)]
struct AblationEntry {
    variant: String,
    lss: bool,
    ca: bool,
    mean_accuracy: f64,
    std_accuracy: f64,
    energy: EnergyReport,
}

pub const ABLATION_CSV_HEADER: &str = "variant,lss,ca,mean_accuracy,std_accuracy,sc_layer1,sc_layer2,sc_layer3,sc_layer4,\
nasar_layer1,nasar_layer2,nasar_layer3,nasar_layer4,mac,ac,energy_uJ,r_ee";

pub fn cmd_ablation(io: &DataIo, args: &TrainArgs) -> Result<()> {
    let (mut cfg, set) = load_fitted(io.config.as_deref(), &io.data)?;
    let augment = args.apply(&mut cfg)?;
    let target = match &cfg.train.target_session {
        Some(t) => t.clone(),
        None => {
            let mut names: Vec<&str> = set.sessions.iter().map(|s| s.name.as_str()).collect();
            names.sort_unstable();
            names.first().ok_or_else(|| Error::data("dataset", "no sessions"))?.to_string()
        }
    };
    cfg.train.target_session = Some(target.clone());
    let t = &cfg.train;
    let test = make_split(&set, t.scenario, &target, t.split_fraction(), t.seed)?.test;
    let refs: Vec<&Trial> = test.iter().collect();
    let k = cfg.energy.constants();
    let mut runs = Vec::new();
    for (name, lss, ca) in VARIANTS {
        let mut vcfg = cfg.clone();
        vcfg.network.lss_enabled = lss;
        vcfg.network.ca_enabled = ca;
        let run = train_target(&set, &target, &vcfg.network, &vcfg.train, augment.then_some(&vcfg.augment))?;
        write_checkpoint(&run.network, &io.out.join(format!("model_{name}.ckpt")))?;
        runs.push((name, lss, ca, run));
    }
    let vanilla = runs[0].3.network.clone();
    let mut entries = Vec::new();
    let mut csv = format!("{ABLATION_CSV_HEADER}\n");
    for (name, lss, ca, run) in &runs {
        let energy = profile_against(&run.network, &vanilla, &refs, &k, cfg.energy.counting, cfg.energy.batch_size)?;
        let sc: Vec<String> = energy.layers.iter().filter(|l| l.n_l > 0).map(|l| l.sc.to_string()).collect();
        let nasar: Vec<String> = energy.spiking_nasar().iter().map(f64::to_string).collect();
        csv.push_str(&format!(
            "{name},{lss},{ca},{},{},{},{},{},{},{},{}\n",
            run.report.mean_accuracy,
            run.report.std_accuracy,
            sc.join(","),
            nasar.join(","),
            energy.total_mac,
            energy.total_ac,
            energy.e_att_uj,
            energy.r_ee
        ));
        entries.push(AblationEntry {
            variant: name.to_string(),
            lss: *lss,
            ca: *ca,
            mean_accuracy: run.report.mean_accuracy,
            std_accuracy: run.report.std_accuracy,
            energy,
        });
    }
    write_atomic(&io.out.join("config.toml"), cfg.to_toml()?.as_bytes())?;
    write_atomic(&io.out.join("ablation.json"), &to_json(&entries)?)?;
    write_atomic(&io.out.join("ablation.csv"), csv.as_bytes())?;
    println!("{:<8} {:>9} {:>12} {:>10} {:>8}", "variant", "accuracy", "ac", "uJ", "r_EE");
    for e in &entries {
        println!(
            "{:<8} {:>9.4} {:>12.1} {:>10.5} {:>8.4}",
            e.variant, e.mean_accuracy, e.energy.total_ac, e.energy.e_att_uj, e.energy.r_ee
        );
    }
    Ok(())
}
