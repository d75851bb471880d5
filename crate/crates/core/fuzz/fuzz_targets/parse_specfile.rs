#![no_main]

use libfuzzer_sys::fuzz_target;
use snn_bci::cli::flops::{parse_specfile, tabulate};
use snn_bci::energy::EnergyConstants;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(spec) = parse_specfile(text) {
            let _ = tabulate(&spec, &EnergyConstants::default());
        }
    }
});
