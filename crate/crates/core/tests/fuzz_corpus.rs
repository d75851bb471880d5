//! Replays the checked-in fuzz corpus seeds through the fuzzed parsers.

use std::fs;
use std::path::{Path, PathBuf};

use snn_bci::arch::{parse_checkpoint, serialize_checkpoint};
use snn_bci::cli::config::RunConfigFile;
use snn_bci::cli::flops::{parse_specfile, tabulate};
use snn_bci::data::{parse_session, serialize_session, DatasetMeta};
use snn_bci::energy::EnergyConstants;

fn seeds(target: &str) -> Vec<PathBuf> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fuzz/corpus").join(target);
    let mut files: Vec<PathBuf> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    assert!(!files.is_empty(), "no seeds for {target}");
    files
}

fn text(path: &Path) -> String {
    fs::read_to_string(path).unwrap()
}

#[test]
fn session_seeds_parse_and_round_trip() {
    for path in seeds("parse_session") {
        let (header, session) = parse_session(&text(&path), "seed").unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let meta = DatasetMeta { n_classes: header.n_classes, c: header.c, t: header.t, generator: None, warnings: vec![] };
        assert_eq!(parse_session(&serialize_session(&session, &meta), "again").unwrap().1, session);
    }
}

#[test]
fn checkpoint_seeds_parse_and_round_trip() {
    for path in seeds("parse_checkpoint") {
        let bytes = fs::read(&path).unwrap();
        let net = parse_checkpoint(&bytes).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(serialize_checkpoint(&net).unwrap(), bytes);
    }
}

#[test]
fn run_config_seeds_parse() {
    for path in seeds("parse_run_config") {
        RunConfigFile::parse(&text(&path)).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    }
}

#[test]
fn specfile_seeds_tabulate() {
    for path in seeds("parse_specfile") {
        let spec = parse_specfile(&text(&path)).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        tabulate(&spec, &EnergyConstants::default()).unwrap();
    }
}
