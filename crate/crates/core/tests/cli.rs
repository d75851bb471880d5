use std::fs;
use std::path::{Path, PathBuf};

use serde_json::Value;
use snn_bci::arch::read_checkpoint;
use snn_bci::cli::main_with_args;
use snn_bci::data::{load_dataset, save_dataset, DatasetMeta, Session, SessionSet, Trial};

const SMALL: &str = r#"
[data]
n_sessions = 2
trials_per_class = 12
c = 16
t_raw = 400
t_out = 40
base_rate = 0.1
bursts = []
seed = 4

[network]
k_temporal = 9
f_fusion = 8

[train]
epochs = 2
repeats = 2
batch_size = 16
target_fraction = 0.25

[augment]
segment_len_range = [2, 8]
"#;

fn run(args: &[&str]) -> i32 {
    main_with_args(std::iter::once("snn-bci").chain(args.iter().copied()))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let f = Self { dir: tempfile::tempdir().unwrap() };
        fs::write(f.path("small.toml"), SMALL).unwrap();
        assert_eq!(run(&["synth", "--config", p(&f.path("small.toml")), "--out", p(&f.path("data"))]), 0);
        f
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn config(&self) -> PathBuf {
        self.path("small.toml")
    }
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

/// Sorted key paths of a JSON document; array elements collapse to `[]`.
fn key_paths(v: &Value) -> Vec<String> {
    fn walk(v: &Value, prefix: &str, out: &mut Vec<String>) {
        match v {
            Value::Object(m) => {
                for (k, child) in m {
                    let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    out.push(path.clone());
                    walk(child, &path, out);
                }
            }
            Value::Array(items) => {
                for item in items {
                    walk(item, &format!("{prefix}[]"), out);
                }
            }
            _ => {}
        }
    }
    let mut out = Vec::new();
    walk(v, "", &mut out);
    out.sort();
    out.dedup();
    out
}

/// Compares against `tests/golden/<name>`; `UPDATE_GOLDEN=1` rewrites the file.
fn assert_golden(name: &str, actual: &[String]) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        fs::write(&path, actual.iter().map(|l| format!("{l}\n")).collect::<String>()).unwrap();
    }
    let want: Vec<String> = fs::read_to_string(&path).unwrap().lines().map(str::to_string).collect();
    assert_eq!(actual, &want[..], "{name}");
}

#[test]
fn synth_defaults_and_reproducibility() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(run(&["synth", "--out", p(&a)]), 0);
    assert_eq!(run(&["synth", "--out", p(&b)]), 0);
    let set = load_dataset(&a).unwrap();
    assert_eq!(set.sessions.len(), 3);
    assert_eq!((set.meta.n_classes, set.meta.c, set.meta.t), (3, 80, 100));
    assert!(set.sessions.iter().all(|s| s.class_counts(3) == vec![150; 3]));
    for name in ["dataset.json", "s0.spk", "s1.spk", "s2.spk"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let c = dir.path().join("c");
    assert_eq!(run(&["synth", "--out", p(&c), "--seed", "9"]), 0);
    assert_ne!(fs::read(a.join("s0.spk")).unwrap(), fs::read(c.join("s0.spk")).unwrap());
}

#[test]
fn config_errors_exit_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[data]\nbase_rate = 2.0\n").unwrap();
    assert_eq!(run(&["synth", "--config", p(&cfg), "--out", p(&dir.path().join("x"))]), 1);
    fs::write(&cfg, "[network]\nchannels = 3\n").unwrap();
    assert_eq!(run(&["synth", "--config", p(&cfg), "--out", p(&dir.path().join("x"))]), 1);
    assert!(!dir.path().join("x").exists());
    assert_eq!(run(&["train", "--data"]), 1);
    assert_eq!(run(&["no-such-command"]), 1);
    assert_eq!(run(&["--help"]), 0);
}

#[test]
fn data_errors_exit_with_data_code() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing");
    assert_eq!(run(&["train", "--data", p(&missing), "--out", p(&dir.path().join("o"))]), 2);
    let bad = dir.path().join("bad.spk");
    fs::write(&bad, "snn-bci-dataset 1\nsession s0\nchannels 2\ntime 4\nclasses 2\ntrials 1\n0 0:9\n").unwrap();
    assert_eq!(run(&["augment", "--data", p(&bad), "--out", p(&dir.path().join("o"))]), 2);
}

#[test]
fn train_report_schema_and_aggregates() {
    let f = Fixture::new();
    let out = f.path("run");
    let (cfg, data) = (f.config(), f.path("data"));
    let args = ["train", "--config", p(&cfg), "--data", p(&data), "--out", p(&out), "--target", "s1"];
    assert_eq!(run(&args), 0);
    let report = json(&out.join("report.json"));
    assert_golden("train_report.keys", &key_paths(&report));
    let fold = &report["folds"][0];
    let accs: Vec<f64> =
        fold["repeats"].as_array().unwrap().iter().map(|r| r["test"]["balanced_accuracy"].as_f64().unwrap()).collect();
    assert_eq!(accs.len(), 2);
    let mean = accs.iter().sum::<f64>() / 2.0;
    assert!((fold["mean_accuracy"].as_f64().unwrap() - mean).abs() < 1e-15);
    assert_eq!(report["grand_mean"], fold["mean_accuracy"]);
    let csv = fs::read_to_string(out.join("loss_curve_s1.csv")).unwrap();
    assert_golden("loss_curve.header", &[csv.lines().next().unwrap().to_string()]);
    assert_eq!(csv.lines().count(), 1 + 2 * 2);
    let net = read_checkpoint(&out.join("model_s1.ckpt")).unwrap();
    assert!(net.param("attention.w1").is_some() && net.param("layer4.lss.g").is_some());
    let resolved = fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(resolved.contains("target_session = \"s1\""));
}

#[test]
fn vanilla_variant_and_unsupervised_augmentation() {
    let f = Fixture::new();
    let out = f.path("run");
    let (cfg, data) = (f.config(), f.path("data"));
    let args = [
        "train",
        "--config",
        p(&cfg),
        "--data",
        p(&data),
        "--out",
        p(&out),
        "--target",
        "s0",
        "--no-lss",
        "--no-ca",
        "--scenario",
        "unsupervised",
        "--augment",
        "spikedrop",
        "--repeats",
        "1",
    ];
    assert_eq!(run(&args), 0);
    let net = read_checkpoint(&out.join("model_s0.ckpt")).unwrap();
    assert!(net.param("attention.w1").is_none() && net.param("layer4.lss.g").is_none());
    let fold = &json(&out.join("report.json"))["folds"][0];
    // one source session of 36 trials, 10% of it held out for validation
    let (n_val, n_train) = (fold["n_val"].as_u64().unwrap(), fold["n_train"].as_u64().unwrap());
    assert_eq!(n_val, 3);
    assert_eq!(n_train, 33 + 33 / 2 + 1);
    assert_eq!(fold["n_target_train"], 0);
    assert_eq!(fold["scenario"], "unsupervised");
}

#[test]
fn leave_one_session_out_writes_every_fold() {
    let f = Fixture::new();
    let out = f.path("run");
    let (cfg, data) = (f.config(), f.path("data"));
    let args = ["train", "--config", p(&cfg), "--data", p(&data), "--out", p(&out), "--repeats", "1", "--epochs", "1"];
    assert_eq!(run(&args), 0);
    let report = json(&out.join("report.json"));
    let folds = report["folds"].as_array().unwrap();
    assert_eq!(folds.len(), 2);
    let mean = folds.iter().map(|f| f["mean_accuracy"].as_f64().unwrap()).sum::<f64>() / 2.0;
    assert!((report["grand_mean"].as_f64().unwrap() - mean).abs() < 1e-15);
    for s in ["s0", "s1"] {
        assert!(out.join(format!("model_{s}.ckpt")).exists());
        assert!(out.join(format!("loss_curve_{s}.csv")).exists());
    }
}

#[test]
fn evaluate_and_profile_schemas() {
    let f = Fixture::new();
    let run_dir = f.path("run");
    let (cfg, data) = (f.config(), f.path("data"));
    assert_eq!(run(&["train", "--config", p(&cfg), "--data", p(&data), "--out", p(&run_dir), "--target", "s1"]), 0);
    let ckpt = run_dir.join("model_s1.ckpt");
    let eval = f.path("eval.json");
    let args =
        ["evaluate", "--checkpoint", p(&ckpt), "--config", p(&cfg), "--data", p(&data), "--target", "s1", "--out", p(&eval)];
    assert_eq!(run(&args), 0);
    let e = json(&eval);
    assert_golden("evaluation.keys", &key_paths(&e));
    let n: u64 = e["confusion"].as_array().unwrap().iter().flat_map(|r| r.as_array().unwrap()).map(|v| v.as_u64().unwrap()).sum();
    assert_eq!(n, 36 - 9);

    let prof = f.path("prof");
    let args =
        ["profile", "--checkpoint", p(&ckpt), "--config", p(&cfg), "--data", p(&data), "--target", "s1", "--out", p(&prof)];
    assert_eq!(run(&args), 0);
    let report = json(&prof.join("energy.json"));
    assert_golden("energy_report.keys", &key_paths(&report));
    assert_eq!(report["n_trials"], 27);
    let csv = fs::read_to_string(prof.join("energy.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "layer,n_l,t_l,fr,sc,nasar,mac,ac,energy_uJ");
    let layers: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(layers, ["layer1", "attention", "layer2", "layer3", "layer4", "classifier"]);
    let e_van = report["e_vanilla_fj"].as_i64().unwrap();
    assert_eq!(e_van + report["delta_e_fj"].as_i64().unwrap(), report["e_att_fj"].as_i64().unwrap());

    // profiling against a vanilla checkpoint
    let vanilla = f.path("vanilla");
    assert_eq!(
        run(&["train", "--config", p(&cfg), "--data", p(&data), "--out", p(&vanilla), "--target", "s1", "--no-ca", "--no-lss"]),
        0
    );
    let prof2 = f.path("prof2");
    let baseline = vanilla.join("model_s1.ckpt");
    let args = [
        "profile",
        "--checkpoint",
        p(&ckpt),
        "--baseline",
        p(&baseline),
        "--config",
        p(&cfg),
        "--data",
        p(&data),
        "--out",
        p(&prof2),
    ];
    assert_eq!(run(&args), 0);
    let r2 = json(&prof2.join("energy.json"));
    assert_eq!(r2["baseline"], "external");
    assert_eq!(r2["n_trials"], 72);

    // a checkpoint built for other extents is a data error
    let other = f.path("other");
    assert_eq!(run(&["synth", "--out", p(&other), "--config", p(&cfg)]), 0);
    let mut set = load_dataset(&other).unwrap();
    set.meta.c = 8;
    for s in &mut set.sessions {
        s.trials = s.trials.iter().map(|t| Trial::new(8, t.t, t.label, s.name.clone(), vec![]).unwrap()).collect();
    }
    let narrow = f.path("narrow");
    save_dataset(&set, &narrow).unwrap();
    assert_eq!(run(&["profile", "--checkpoint", p(&ckpt), "--data", p(&narrow), "--out", p(&f.path("x"))]), 2);
}

#[test]
fn silent_input_profiles_to_zero_spike_driven_ac() {
    let f = Fixture::new();
    let run_dir = f.path("run");
    let (cfg, data) = (f.config(), f.path("data"));
    assert_eq!(
        run(&["train", "--config", p(&cfg), "--data", p(&data), "--out", p(&run_dir), "--target", "s1", "--repeats", "1"]),
        0
    );
    let trials = (0..6).map(|i| Trial::new(16, 40, i % 3, "quiet", vec![]).unwrap()).collect();
    let set = SessionSet {
        meta: DatasetMeta { n_classes: 3, c: 16, t: 40, generator: None, warnings: vec![] },
        sessions: vec![Session { name: "quiet".into(), trials }],
    };
    save_dataset(&set, &f.path("quiet")).unwrap();
    let prof = f.path("prof");
    let ckpt = run_dir.join("model_s1.ckpt");
    assert_eq!(
        run(&["profile", "--checkpoint", p(&ckpt), "--config", p(&cfg), "--data", p(&f.path("quiet")), "--out", p(&prof)]),
        0
    );
    let report = json(&prof.join("energy.json"));
    assert_eq!(report["layers"][0]["layer"], "layer1");
    assert_eq!(report["layers"][0]["ac"], 0.0);
}

#[test]
fn flops_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("flops");
    assert_eq!(run(&["flops", "--out", p(&out)]), 0);
    let table = json(&out.join("flops.json"));
    assert_golden("flops.keys", &key_paths(&table));
    let rows = table["rows"].as_array().unwrap();
    assert_eq!(rows[0]["model"], "EEGNet");
    assert!((rows[0]["energy_uj"].as_f64().unwrap() - 20.102).abs() < 1e-9);
    assert_eq!(rows[4]["ratio"], 1.0);
    let csv = fs::read_to_string(out.join("flops.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "model,mac,ac,energy_uJ,ratio");

    let empty = dir.path().join("empty.toml");
    fs::write(&empty, "").unwrap();
    let out2 = dir.path().join("flops2");
    assert_eq!(run(&["flops", "--spec", p(&empty), "--out", p(&out2)]), 0);
    assert_eq!(fs::read_to_string(out2.join("flops.csv")).unwrap(), "model,mac,ac,energy_uJ,ratio\n");

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[[model]]\nname = \"x\"\n").unwrap();
    assert_eq!(run(&["flops", "--spec", p(&bad), "--out", p(&out2)]), 2);

    let out3 = dir.path().join("flops3");
    assert_eq!(run(&["flops", "--with-network", "snn", "--out", p(&out3)]), 0);
    let rows = json(&out3.join("flops.json"))["rows"].as_array().unwrap().clone();
    assert_eq!(rows.len(), 6);
    assert!(rows[5]["ac"].as_f64().unwrap() > 0.0);
}

#[test]
fn zero_probability_augmentation_copies_trials() {
    let f = Fixture::new();
    let cfg = f.path("zero.toml");
    fs::write(&cfg, "[augment]\np_t = 0.0\np_s = 0.0\np_c = 0.0\n").unwrap();
    let out = f.path("aug");
    assert_eq!(run(&["augment", "--data", p(&f.path("data")), "--config", p(&cfg), "--out", p(&out)]), 0);
    let before = load_dataset(&f.path("data")).unwrap();
    let after = load_dataset(&out).unwrap();
    for (a, b) in before.sessions.iter().zip(&after.sessions) {
        assert_eq!(b.trials.len(), a.trials.len() + a.trials.len() / 2);
        assert_eq!(&b.trials[..a.trials.len()], &a.trials[..]);
        for copy in &b.trials[a.trials.len()..] {
            assert!(a.trials.contains(copy));
        }
    }
}

#[test]
fn augmentation_only_sparsifies() {
    let f = Fixture::new();
    let out = f.path("aug");
    assert_eq!(run(&["augment", "--data", p(&f.path("data")), "--config", p(&f.config()), "--out", p(&out)]), 0);
    let before = load_dataset(&f.path("data")).unwrap();
    let after = load_dataset(&out).unwrap();
    let originals = before.n_spikes();
    let kept_originals: usize = after.sessions.iter().map(|s| s.trials[..36].iter().map(Trial::spike_count).sum::<usize>()).sum();
    assert_eq!(kept_originals, originals);
    assert!(after.n_spikes() - originals <= originals / 2 + 1);
    let bad = f.path("bad.toml");
    fs::write(&bad, "[augment]\np_c = 1.5\n").unwrap();
    assert_eq!(run(&["augment", "--data", p(&f.path("data")), "--config", p(&bad), "--out", p(&f.path("x"))]), 1);
}
