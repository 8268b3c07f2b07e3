#![no_main]

use iacn::data::parse_review_line;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(line) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(r) = parse_review_line(line) {
        assert!(!r.reviewer_id.is_empty() && !r.asin.is_empty());
        assert!(r.unix_review_time >= 0);
    }
});
