#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    let _ = embinv_harness::pipeline::parse_inversions(data);
});
