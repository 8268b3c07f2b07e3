#![no_main]

use iacn::data::parse_meta_line;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(line) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(m) = parse_meta_line(line) {
        assert!(!m.asin.is_empty());
    }
});
