#![no_main]

use iacn::training::Checkpoint;
use libfuzzer_sys::fuzz_target;

// Compared as bytes: tensors may legally hold NaN, which defeats PartialEq.
fuzz_target!(|data: &[u8]| {
    if let Ok(c) = Checkpoint::decode(data) {
        let bytes = c.encode();
        let again = Checkpoint::decode(&bytes).expect("re-encoded checkpoint decodes");
        assert_eq!(again.encode(), bytes);
        let _ = c.into_trainer();
    }
});
