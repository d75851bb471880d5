#![no_main]

use libfuzzer_sys::fuzz_target;
use snn_bci::cli::config::RunConfigFile;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = RunConfigFile::parse(text);
    }
});
