#![no_main]

use iacn::data::Dataset;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(d) = Dataset::from_cache_str(text) {
        d.validate().expect("decoded caches are valid");
        assert_eq!(Dataset::from_cache_str(&d.to_cache_string()).unwrap(), d);
    }
});
