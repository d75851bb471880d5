#![no_main]

use libfuzzer_sys::fuzz_target;
use snn_bci::data::{parse_session, serialize_session, DatasetMeta};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok((header, session)) = parse_session(text, "fuzz") {
        // anything accepted must survive a round trip unchanged
        let meta = DatasetMeta { n_classes: header.n_classes, c: header.c, t: header.t, generator: None, warnings: vec![] };
        let again = serialize_session(&session, &meta);
        let (_, back) = parse_session(&again, "fuzz").expect("re-parse of serialized session");
        assert_eq!(back, session);
    }
});
