#![no_main]

use iacn::data::{IngestConfig, SyntheticSpec};
use iacn::training::TrainConfig;
use libfuzzer_sys::fuzz_target;

// Anything that parses must survive a write/read round trip unchanged.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(c) = TrainConfig::from_kv_str(text) {
        assert_eq!(TrainConfig::from_kv_str(&c.to_kv_string()).unwrap(), c);
    }
    if let Ok(s) = SyntheticSpec::from_kv_str(text) {
        assert_eq!(SyntheticSpec::from_kv_str(&s.to_kv_string()).unwrap(), s);
    }
    if let Ok(i) = IngestConfig::from_kv_str(text) {
        assert_eq!(IngestConfig::from_kv_str(&i.to_kv_string()).unwrap(), i);
    }
});
