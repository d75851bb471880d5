#![no_main]

use libfuzzer_sys::fuzz_target;
use snn_bci::arch::{parse_checkpoint, serialize_checkpoint};

fuzz_target!(|data: &[u8]| {
    if let Ok(net) = parse_checkpoint(data) {
        let bytes = serialize_checkpoint(&net).expect("serialize parsed checkpoint");
        let back = parse_checkpoint(&bytes).expect("re-parse of serialized checkpoint");
        assert_eq!(back.params(), net.params());
    }
});
